"""Per-image evaluation and report aggregation.

One evaluation walks every (image, CAM method, perturbation spec) triple:
the original image is classified and segmented once, every CAM is ranked
against that one segmentation, then each spec produces a perturbed
variant whose CAM rankings are compared with the originals (RBO, and
Kendall/Spearman rank correlations for the agreement analysis).  Records
aggregate per (CAM, spec) cell into Consistency (median RBO over
class-unchanged records), Responsiveness (AUC of "low RBO implies class
changed"), and their product, the robustness metric.
"""

from __future__ import annotations

import datetime
import enum
import json
import os
import re
import shutil
import statistics
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from queue import Queue

import numpy as np

from .adapter import AdapterClient
from .errors import AdapterFailure, CamRobustError, EmptyReport
from .metrics import (
    RboParams,
    ScoredLabel,
    auc_from_scores,
    kendall_tau,
    kendalls_w,
    rank_segments,
    rbo,
    segment_mean_saliency,
    spearman_rho,
)
from .model import Image, Manifest, ManifestEntry, SegmentationMap, load_image, save_image
from .perturb import PerturbationSpec, apply_perturbation, derive_seed
from . import segment as segmentation


class DegeneratePolicy(enum.Enum):
    """What a cell reports when AUC is undefined (single-class cell)."""

    MISSING = "missing"
    HALF = "half"


@dataclass(frozen=True)
class EvalRecord:
    """Outcome of one (image, CAM method, perturbation spec) triple."""

    image_id: str
    cam_method: str
    spec: str
    rbo: float
    tau: float | None
    rho: float | None
    label_org: int
    label_per: int
    class_changed: bool
    degenerate_cam: bool = False

    def __post_init__(self):
        if self.class_changed != (self.label_org != self.label_per):
            raise ValueError("class_changed must equal (label_org != label_per)")
        if not (0.0 <= self.rbo <= 1.0):
            raise ValueError(f"rbo must lie in [0, 1], got {self.rbo}")

    def to_json_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "cam_method": self.cam_method,
            "spec": self.spec,
            "rbo": self.rbo,
            "tau": self.tau,
            "rho": self.rho,
            "label_org": self.label_org,
            "label_per": self.label_per,
            "class_changed": self.class_changed,
            "degenerate_cam": self.degenerate_cam,
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "EvalRecord":
        return cls(
            image_id=str(payload["image_id"]),
            cam_method=str(payload["cam_method"]),
            spec=str(payload["spec"]),
            rbo=float(payload["rbo"]),
            tau=None if payload.get("tau") is None else float(payload["tau"]),
            rho=None if payload.get("rho") is None else float(payload["rho"]),
            label_org=int(payload["label_org"]),
            label_per=int(payload["label_per"]),
            class_changed=bool(payload["class_changed"]),
            degenerate_cam=bool(payload.get("degenerate_cam", False)),
        )


@dataclass(frozen=True)
class CellResult:
    """Aggregated robustness numbers for one (CAM method, spec) cell."""

    cam_method: str
    spec: str
    consistency: float | None
    responsiveness: float | None
    rm: float | None
    n_unchanged: int
    n_changed: int
    rm_variance: float
    warnings: tuple = ()


def consistency(records) -> float | None:
    """Median RBO over class-unchanged records; None when there are none.

    Even counts take the mean of the two middle values.
    """
    unchanged = [r.rbo for r in records if not r.class_changed]
    if not unchanged:
        return None
    return float(statistics.median(unchanged))


def responsiveness(records, policy: DegeneratePolicy = DegeneratePolicy.MISSING) -> float | None:
    """AUC of "lower RBO implies the class changed" over the cell.

    With only one class present the AUC is undefined: policy MISSING
    reports None, policy HALF reports the chance value 0.5.
    """
    changed = [r for r in records if r.class_changed]
    if not changed or len(changed) == len(list(records)):
        return 0.5 if policy is DegeneratePolicy.HALF else None
    return auc_from_scores(ScoredLabel(score=r.rbo, class_changed=r.class_changed) for r in records)


def robustness_metric(
    cam_method: str,
    spec: str,
    records,
    policy: DegeneratePolicy = DegeneratePolicy.MISSING,
) -> CellResult:
    """Fold one cell's records into Consistency x Responsiveness."""
    records = list(records)
    c_val = consistency(records)
    r_val = responsiveness(records, policy)
    warnings = []
    n_changed = sum(1 for r in records if r.class_changed)
    n_unchanged = len(records) - n_changed
    if c_val is None:
        warnings.append(f"{cam_method}/{spec}: no class-unchanged records, consistency undefined")
    if n_changed == 0 or n_unchanged == 0:
        side = "changed" if n_changed == 0 else "unchanged"
        tail = "reported as 0.5" if policy is DegeneratePolicy.HALF else "reported as missing"
        warnings.append(f"{cam_method}/{spec}: no class-{side} records, responsiveness undefined, {tail}")
    if any(r.degenerate_cam for r in records):
        warnings.append(f"{cam_method}/{spec}: at least one constant CAM map was rank-ordered by segment id")
    rm = c_val * r_val if (c_val is not None and r_val is not None) else None
    variance = float(np.var([r.rbo for r in records])) if records else 0.0
    return CellResult(
        cam_method=cam_method,
        spec=spec,
        consistency=c_val,
        responsiveness=r_val,
        rm=rm,
        n_unchanged=n_unchanged,
        n_changed=n_changed,
        rm_variance=variance,
        warnings=tuple(warnings),
    )


# ---------------------------------------------------------------------------
# per-image evaluation


@dataclass(frozen=True)
class EvalConfig:
    """Everything that determines an evaluation run besides the manifest."""

    cam_methods: tuple
    specs: tuple
    segmenter: str = "quickshift"
    segmenter_params: object = None
    rbo_params: RboParams = RboParams()
    seed: int = 0
    degenerate_policy: DegeneratePolicy = DegeneratePolicy.MISSING
    rank_agreement: bool = False
    workers: int = 1
    timeout: float = 60.0

    def __post_init__(self):
        if not self.cam_methods:
            raise ValueError("at least one CAM method is required")
        if not self.specs:
            raise ValueError("at least one perturbation spec is required")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")


_SEGMENTERS = {
    "quickshift": (segmentation.quickshift, segmentation.QuickshiftParams),
    "slic": (segmentation.slic, segmentation.SlicParams),
    "felzenszwalb": (segmentation.felzenszwalb, segmentation.FelzenszwalbParams),
}


def segment_image(image: Image, name: str, params=None) -> SegmentationMap:
    """Run the named segmenter with its defaults or the given params."""
    try:
        func, params_cls = _SEGMENTERS[name]
    except KeyError:
        raise ValueError(f"unknown segmenter {name!r}; pick one of {sorted(_SEGMENTERS)}") from None
    if params is None:
        params = params_cls()
    return func(image, params)


def _safe_name(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "-", text)


def evaluate_image(
    client: AdapterClient,
    entry: ManifestEntry,
    config: EvalConfig,
    scratch_dir,
) -> list:
    """Evaluate one image across all CAM methods and specs.

    Any failure (unreadable image, backend error, protocol breakdown) is
    raised as AdapterFailure so the caller can skip the image and keep
    the run alive.
    """
    try:
        image = load_image(entry.image_path)
        label_org = client.predict(entry.image_path)
        seg = segment_image(image, config.segmenter, config.segmenter_params)
        target_size = (image.width, image.height)

        rank_org = {}
        degenerate_org = {}
        for cam in config.cam_methods:
            smap = client.generate_cam(entry.image_path, cam, target_size)
            rank_org[cam] = rank_segments(segment_mean_saliency(smap, seg))
            degenerate_org[cam] = smap.degenerate

        records = []
        for spec in config.specs:
            if spec.kind.is_adversarial:
                eps = spec.params.get("eps")
                _, per_path = client.generate_adversarial(entry.image_path, spec.kind.value, eps)
            else:
                seeded = spec.with_seed(derive_seed(config.seed, entry.id, spec.canonical()))
                perturbed = apply_perturbation(image, seeded)
                per_path = os.path.join(
                    scratch_dir, f"{_safe_name(entry.id)}_{_safe_name(spec.canonical())}.png"
                )
                save_image(perturbed, per_path)
            label_per = client.predict(per_path)
            for cam in config.cam_methods:
                smap_per = client.generate_cam(per_path, cam, target_size)
                ranked_per = rank_segments(segment_mean_saliency(smap_per, seg))
                # rank correlations are undefined with fewer than 2 segments
                few = len(ranked_per) < 2
                records.append(
                    EvalRecord(
                        image_id=entry.id,
                        cam_method=cam,
                        spec=spec.canonical(),
                        rbo=rbo(rank_org[cam], ranked_per, config.rbo_params),
                        tau=None if few else kendall_tau(rank_org[cam], ranked_per),
                        rho=None if few else spearman_rho(rank_org[cam], ranked_per),
                        label_org=label_org,
                        label_per=label_per,
                        class_changed=label_per != label_org,
                        degenerate_cam=degenerate_org[cam] or smap_per.degenerate,
                    )
                )
        return records
    except AdapterFailure:
        raise
    except (CamRobustError, OSError, ValueError) as exc:
        raise AdapterFailure(f"image {entry.id!r}: {type(exc).__name__}: {exc}") from exc


# ---------------------------------------------------------------------------
# aggregation


@dataclass(frozen=True)
class RobustnessReport:
    """Aggregated cells plus the optional CAM-ranking agreement block."""

    cam_methods: tuple
    specs: tuple
    cells: tuple
    warnings: tuple
    rank_agreement: dict | None = None

    def cell(self, cam_method: str, spec: str) -> CellResult:
        for c in self.cells:
            if c.cam_method == cam_method and c.spec == spec:
                return c
        raise KeyError(f"no cell for ({cam_method!r}, {spec!r})")


def _rm_under(records, metric: str, policy: DegeneratePolicy) -> float | None:
    """RM with tau/rho standing in for RBO as the similarity score.

    Correlations live in [-1, 1]; AUC only uses the ordering, so scores
    are affinely mapped to [0, 1].  The consistency part stays on the raw
    scale, so these values rank CAM methods but are not comparable with
    RBO-based RM.
    """
    values = {"rbo": (lambda r: r.rbo), "tau": (lambda r: r.tau), "rho": (lambda r: r.rho)}[metric]
    if any(values(r) is None for r in records):
        return None
    unchanged = [values(r) for r in records if not r.class_changed]
    if not unchanged:
        return None
    med = float(statistics.median(unchanged))
    changed_n = sum(1 for r in records if r.class_changed)
    if changed_n == 0 or changed_n == len(records):
        if policy is DegeneratePolicy.HALF:
            return med * 0.5
        return None
    scale = (lambda v: v) if metric == "rbo" else (lambda v: (v + 1.0) / 2.0)
    auc = auc_from_scores(
        ScoredLabel(score=scale(values(r)), class_changed=r.class_changed) for r in records
    )
    return med * auc


def _rank_by_rm(rm_by_cam: dict) -> list:
    """Rank 1 = highest RM; ties break on CAM method name."""
    ordering = sorted(rm_by_cam, key=lambda cam: (-rm_by_cam[cam], cam))
    ranks = {cam: i + 1 for i, cam in enumerate(ordering)}
    return [ranks[cam] for cam in sorted(rm_by_cam)]


def _agreement_block(records, cam_methods, specs, policy: DegeneratePolicy):
    """Kendall's W across RBO/tau/rho-based CAM rankings, per spec."""
    agreement = {}
    warnings = []
    for spec in specs:
        if len(cam_methods) < 2:
            warnings.append(f"rank agreement for {spec}: needs at least two CAM methods")
            continue
        rankings = {}
        incomplete = False
        for metric in ("rbo", "tau", "rho"):
            rm_by_cam = {}
            for cam in cam_methods:
                cell_records = [r for r in records if r.cam_method == cam and r.spec == spec]
                rm_by_cam[cam] = _rm_under(cell_records, metric, policy) if cell_records else None
            if any(v is None for v in rm_by_cam.values()):
                incomplete = True
                break
            rankings[metric] = _rank_by_rm(rm_by_cam)
        if incomplete:
            warnings.append(f"rank agreement for {spec}: skipped, some RM values are missing")
            continue
        result = kendalls_w([rankings["rbo"], rankings["tau"], rankings["rho"]])
        agreement[spec] = {
            "cam_methods": sorted(cam_methods),
            "rankings": rankings,
            "w": result.w,
            "p_value": result.p_value,
            "p_method": result.p_method,
        }
    return agreement, warnings


def aggregate_report(
    records,
    cam_methods=None,
    specs=None,
    policy: DegeneratePolicy = DegeneratePolicy.MISSING,
    rank_agreement: bool = False,
) -> RobustnessReport:
    """Fold records into per-cell results in a deterministic order.

    cam_methods/specs fix the row and column order; by default they are
    the sorted distinct values present in the records.
    """
    records = sorted(records, key=lambda r: (r.image_id, r.cam_method, r.spec))
    if not records:
        raise EmptyReport("no evaluation records to aggregate")
    if cam_methods is None:
        cam_methods = tuple(sorted({r.cam_method for r in records}))
    if specs is None:
        specs = tuple(sorted({r.spec for r in records}))

    cells = []
    warnings = []
    for spec in specs:
        for cam in cam_methods:
            cell_records = [r for r in records if r.cam_method == cam and r.spec == spec]
            if not cell_records:
                warnings.append(f"{cam}/{spec}: no records")
                cells.append(
                    CellResult(
                        cam_method=cam,
                        spec=spec,
                        consistency=None,
                        responsiveness=None,
                        rm=None,
                        n_unchanged=0,
                        n_changed=0,
                        rm_variance=0.0,
                        warnings=(f"{cam}/{spec}: no records",),
                    )
                )
                continue
            cell = robustness_metric(cam, spec, cell_records, policy)
            warnings.extend(cell.warnings)
            cells.append(cell)

    agreement = None
    if rank_agreement:
        agreement, agreement_warnings = _agreement_block(records, cam_methods, specs, policy)
        warnings.extend(agreement_warnings)

    return RobustnessReport(
        cam_methods=tuple(cam_methods),
        specs=tuple(specs),
        cells=tuple(cells),
        warnings=tuple(warnings),
        rank_agreement=agreement,
    )


# ---------------------------------------------------------------------------
# run orchestration


@dataclass
class RunResult:
    report: RobustnessReport
    records: list
    failures: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def fully_succeeded(self) -> bool:
        return not self.failures


def run_evaluation(
    manifest: Manifest,
    adapter_command: str,
    config: EvalConfig,
    scratch_dir=None,
) -> RunResult:
    """Evaluate a manifest end to end with a pool of adapter processes.

    Per-image failures are collected, not fatal; the report covers the
    images that succeeded.  Raises EmptyReport if nothing succeeded and
    lets handshake/spawn errors out as fatal.
    """
    own_scratch = scratch_dir is None
    if own_scratch:
        scratch_dir = tempfile.mkdtemp(prefix="camrobust-")
    else:
        os.makedirs(scratch_dir, exist_ok=True)

    n_workers = min(config.workers, max(1, len(manifest.entries)))
    clients = [
        AdapterClient(adapter_command, scratch_dir=scratch_dir, timeout=config.timeout)
        for _ in range(n_workers)
    ]
    pool: Queue = Queue()
    for client in clients:
        pool.put(client)

    failures = []
    records = []

    def work(entry: ManifestEntry):
        client = pool.get()
        try:
            return evaluate_image(client, entry, config, scratch_dir)
        finally:
            pool.put(client)

    try:
        # capability check is fatal before any work starts
        available = clients[0].capabilities
        for cam in config.cam_methods:
            if cam not in available.cam_methods:
                raise AdapterFailure(
                    f"adapter {available.adapter_id} lacks CAM method {cam!r}"
                )
        for spec in config.specs:
            if spec.kind.is_adversarial and spec.kind.value not in available.attacks:
                raise AdapterFailure(
                    f"adapter {available.adapter_id} lacks attack {spec.kind.value!r}"
                )

        if n_workers == 1:
            outcomes = [(entry, _attempt(work, entry)) for entry in manifest.entries]
        else:
            with ThreadPoolExecutor(max_workers=n_workers) as executor:
                futures = [(entry, executor.submit(work, entry)) for entry in manifest.entries]
                outcomes = [(entry, _attempt(f.result)) for entry, f in futures]
        for entry, (result, error) in outcomes:
            if error is not None:
                failures.append({"image_id": entry.id, "error": str(error)})
            else:
                records.extend(result)
    finally:
        for client in clients:
            client.close()
        if own_scratch:
            shutil.rmtree(scratch_dir, ignore_errors=True)

    records.sort(key=lambda r: (r.image_id, r.cam_method, r.spec))
    report = aggregate_report(
        records,
        cam_methods=config.cam_methods,
        specs=tuple(s.canonical() for s in config.specs),
        policy=config.degenerate_policy,
        rank_agreement=config.rank_agreement,
    )

    metadata = {
        "adapter_id": clients[0].capabilities.adapter_id,
        "cam_methods": list(config.cam_methods),
        "specs": [
            {"spec": s.canonical(), "kind": s.kind.value, "level": s.level.value if s.level else None,
             "params": dict(s.params)}
            for s in config.specs
        ],
        "segmenter": config.segmenter,
        "segmenter_params": _params_dict(config.segmenter, config.segmenter_params),
        "segmenter_backend": segmentation.active_backend(),
        "rbo": {"persistence": config.rbo_params.persistence, "variant": config.rbo_params.variant.value},
        "seed": config.seed,
        "degenerate_policy": config.degenerate_policy.value,
        "workers": config.workers,
        "n_images": len(manifest.entries),
        "n_failed": len(failures),
    }
    return RunResult(report=report, records=records, failures=failures, metadata=metadata)


def _attempt(func, *args):
    try:
        return func(*args), None
    except AdapterFailure as exc:
        return None, exc


def _params_dict(name: str, params) -> dict:
    if params is None:
        params = _SEGMENTERS[name][1]()
    return {k: getattr(params, k) for k in params.__dataclass_fields__}


# ---------------------------------------------------------------------------
# report files


def write_report(result: RunResult, out_dir, timestamp: str | None = None) -> None:
    """Write report.csv, report.json, records.json, and distributions/.

    Outputs are byte-identical across runs with identical inputs except
    for the generated-at stamp (one comment line in the CSV, one key in
    the JSON).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stamp = timestamp or datetime.datetime.now(datetime.timezone.utc).isoformat()
    report = result.report

    # report.csv: rows = specs, columns = CAM methods
    lines = [f"# generated {stamp}"]
    lines.append("noise,level," + ",".join(report.cam_methods))
    for spec in report.specs:
        kind, _, level = spec.partition(":")
        row = [kind, level]
        for cam in report.cam_methods:
            cell = report.cell(cam, spec)
            if cell.rm is None:
                row.append("missing")
            else:
                row.append(f"{cell.rm:.3f}±{cell.rm_variance:.3f}")
        lines.append(",".join(row))
    (out / "report.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    # report.json: everything, machine-readable
    payload = {
        "generated_at": stamp,
        "metadata": result.metadata,
        "cells": [
            {
                "cam_method": c.cam_method,
                "spec": c.spec,
                "consistency": c.consistency,
                "responsiveness": c.responsiveness,
                "rm": c.rm,
                "rm_variance": c.rm_variance,
                "n_unchanged": c.n_unchanged,
                "n_changed": c.n_changed,
                "warnings": list(c.warnings),
            }
            for c in report.cells
        ],
        "warnings": list(report.warnings),
        "failures": result.failures,
        "rank_agreement": report.rank_agreement,
    }
    (out / "report.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    # records.json: raw records for re-aggregation via the report subcommand
    (out / "records.json").write_text(
        json.dumps([r.to_json_dict() for r in result.records], indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )

    # distributions: per-cell raw RBO values for violin plots
    dist = out / "distributions"
    dist.mkdir(exist_ok=True)
    for spec in report.specs:
        for cam in report.cam_methods:
            cell_records = [r for r in result.records if r.cam_method == cam and r.spec == spec]
            name = f"{_safe_name(cam)}_{_safe_name(spec)}.csv"
            rows = ["image_id,rbo,class_changed"]
            for r in sorted(cell_records, key=lambda r: r.image_id):
                rows.append(f"{r.image_id},{r.rbo:.6f},{'true' if r.class_changed else 'false'}")
            (dist / name).write_text("\n".join(rows) + "\n", encoding="utf-8")
