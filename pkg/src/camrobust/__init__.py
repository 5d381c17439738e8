"""Noise-robustness evaluation for CAM-based visual explanations.

Evaluates how stable class-activation-map explanations are when the
input is corrupted (noise, blur, compression, adversarial attacks):
images are segmented once, segments are ranked by mean saliency before
and after each perturbation, and rank agreement (RBO) aggregates into a
per-(CAM, perturbation) robustness metric RM = Consistency x
Responsiveness.
"""

from .errors import (
    AdapterFailure,
    AdversarialNotLocal,
    BadMagic,
    BadSaliencyFile,
    BackendError,
    CamRobustError,
    DimensionMismatch,
    DuplicateId,
    EmptyMap,
    EmptyReport,
    ImageTooSmall,
    LabelSetMismatch,
    LengthMismatch,
    MissingFile,
    NoParameterForKind,
    NonFiniteValue,
    NotAPermutation,
    ProtocolError,
    ProtocolVersionMismatch,
    SchemaViolation,
    ShapeError,
    SingleClassOnly,
    SpawnFailure,
    Timeout,
    TooFewElements,
    TruncatedFile,
    UnsupportedAttack,
    UnsupportedCamMethod,
    UnsupportedKind,
    ZeroDenominator,
)
from .model import (
    Image,
    Manifest,
    ManifestEntry,
    RankedSegments,
    SaliencyMap,
    SegmentationMap,
    load_image,
    load_manifest,
    normalize_saliency,
    read_saliency,
    save_image,
    upsample_bilinear,
    write_saliency,
)
from .metrics import (
    KendallsWResult,
    RboParams,
    RboVariant,
    ScoredLabel,
    auc_from_scores,
    kendall_tau,
    kendalls_w,
    rank_segments,
    rbo,
    segment_mean_saliency,
    spearman_rho,
    stability_ratio,
)
from .perturb import (
    Level,
    PerturbKind,
    PerturbationSpec,
    apply_perturbation,
    derive_seed,
    resolve_level,
)
from .segment import (
    FelzenszwalbParams,
    QuickshiftParams,
    SlicParams,
    active_backend,
    felzenszwalb,
    quickshift,
    relabel_contiguous,
    slic,
)
from .adapter import AdapterCapabilities, AdapterClient
from .pipeline import (
    CellResult,
    DegeneratePolicy,
    EvalConfig,
    EvalRecord,
    RobustnessReport,
    RunResult,
    aggregate_report,
    consistency,
    evaluate_image,
    responsiveness,
    robustness_metric,
    run_evaluation,
    segment_image,
    write_report,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
