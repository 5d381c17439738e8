"""Exception hierarchy shared by all camrobust modules.

Every error raised by the public API derives from CamRobustError so callers
can catch the whole family with one clause.  Names describe the violated
contract, not the call site.
"""

from __future__ import annotations


class CamRobustError(Exception):
    """Base class for every error this package raises deliberately."""


# ---------------------------------------------------------------------------
# manifest / file formats


class MissingFile(CamRobustError):
    """A referenced path does not exist or is not readable."""


class SchemaViolation(CamRobustError):
    """A structured input does not match its schema."""

    def __init__(self, field: str, detail: str = ""):
        self.field = field
        msg = f"schema violation at {field!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class DuplicateId(CamRobustError):
    """Two manifest entries share an id."""

    def __init__(self, entry_id: str):
        self.entry_id = entry_id
        super().__init__(f"duplicate manifest id {entry_id!r}")


class BadMagic(CamRobustError):
    """A saliency file does not start with the SALM magic bytes."""


class TruncatedFile(CamRobustError):
    """A saliency file ends before its declared payload."""


class NonFiniteValue(CamRobustError):
    """A value that must be finite is NaN or infinite."""


class EmptyMap(CamRobustError):
    """An operation requires a non-empty map."""


class DimensionMismatch(CamRobustError):
    """Two arrays that must share dimensions do not."""


class ImageTooSmall(CamRobustError):
    """Image is below the 8x8 minimum usable size."""


# ---------------------------------------------------------------------------
# perturbations


class UnsupportedKind(CamRobustError):
    """Unknown perturbation kind."""


class AdversarialNotLocal(CamRobustError):
    """An adversarial spec was routed to the local perturbation engine;
    adversarial examples come from the model adapter."""


class NoParameterForKind(CamRobustError):
    """The perturbation kind has no severity parameter to resolve."""


# ---------------------------------------------------------------------------
# metrics


class LabelSetMismatch(CamRobustError):
    """Two rankings do not range over the same id set."""


class LengthMismatch(CamRobustError):
    """Two rankings differ in length."""


class TooFewElements(CamRobustError):
    """The statistic needs more elements than were supplied."""


class NotAPermutation(CamRobustError):
    """A rank row is not a permutation of 1..n."""


class ShapeError(CamRobustError):
    """A rank matrix has an unusable shape."""


class SingleClassOnly(CamRobustError):
    """AUC is undefined: all samples belong to one class."""


class ZeroDenominator(CamRobustError):
    """A ratio's denominator is zero."""


# ---------------------------------------------------------------------------
# adapter protocol


class AdapterError(CamRobustError):
    """Base class for adapter/backend failures."""


class SpawnFailure(AdapterError):
    """The adapter process could not be started."""


class ProtocolVersionMismatch(AdapterError):
    """The adapter did not speak protocol version 1 at handshake."""


class ProtocolError(AdapterError):
    """The adapter violated the wire protocol (unknown id, bad frame)."""


class Timeout(AdapterError):
    """The adapter did not answer within the deadline."""


class BackendError(AdapterError):
    """The adapter answered with status=error."""

    def __init__(self, detail: str):
        self.detail = detail
        super().__init__(detail)


class UnsupportedCamMethod(AdapterError):
    """Requested CAM method is not in the adapter's capabilities."""


class UnsupportedAttack(AdapterError):
    """Requested attack is not in the adapter's capabilities."""


class BadSaliencyFile(AdapterError):
    """The adapter produced an unreadable saliency file."""


# ---------------------------------------------------------------------------
# pipeline


class AdapterFailure(CamRobustError):
    """Per-image failure during evaluation; the pipeline records and skips."""

    def __init__(self, detail: str):
        self.detail = detail
        super().__init__(detail)


class EmptyReport(CamRobustError):
    """Aggregation was asked to build a report from zero cells."""
