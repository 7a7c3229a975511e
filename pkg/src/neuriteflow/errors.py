"""Exception hierarchy shared across the package.

Every error raised by the library derives from :class:`NeuriteFlowError` so
the CLI can map failures to stable exit codes.
"""


class NeuriteFlowError(Exception):
    """Base class for all package errors."""


# --- morphology ------------------------------------------------------------

class MalformedLine(NeuriteFlowError):
    """SWC line with the wrong field count or a non-numeric field."""

    def __init__(self, line_number, message):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class DuplicateId(NeuriteFlowError):
    pass


class DanglingParent(NeuriteFlowError):
    pass


class MultipleRoots(NeuriteFlowError):
    pass


class CycleDetected(NeuriteFlowError):
    pass


class NonPositiveRadius(NeuriteFlowError):
    pass


class DegenerateSegment(NeuriteFlowError):
    """Two consecutive records at identical positions."""


class UnsupportedMorphology(NeuriteFlowError):
    """Valid SWC that this pipeline cannot decompose (e.g. branching root)."""


# --- decomposition ----------------------------------------------------------

class HighOrderBranch(NeuriteFlowError):
    """Junction with three or more children."""


class PathTooShort(NeuriteFlowError):
    """Inter-junction path shorter than the junction claims on its ends."""


class NotAdjacent(NeuriteFlowError):
    pass


# --- numerics / solver -------------------------------------------------------

class DimensionMismatch(NeuriteFlowError):
    pass


class NonFiniteState(NeuriteFlowError):
    """Integration or rollout produced non-finite or negative values."""


class NegativeInput(NeuriteFlowError):
    pass


class NotConverged(NeuriteFlowError):
    def __init__(self, message, geometry_id=None):
        super().__init__(message)
        self.geometry_id = geometry_id


# --- neural engine -----------------------------------------------------------

class ShapeMismatch(NeuriteFlowError):
    pass


class GraphNotBuilt(NeuriteFlowError):
    """backward() called on a tensor with no recorded forward graph."""


class CorruptCheckpoint(NeuriteFlowError):
    pass


class ArchitectureMismatch(NeuriteFlowError):
    pass


# --- models ------------------------------------------------------------------

class KindMismatch(NeuriteFlowError):
    pass


class MissingPrediction(NeuriteFlowError):
    pass


class SlotMismatch(NeuriteFlowError):
    pass


# --- datasets ------------------------------------------------------------------

class EmptyDataset(NeuriteFlowError):
    pass


class UnknownKind(NeuriteFlowError):
    pass


class TooFewGeometries(NeuriteFlowError):
    pass


# --- metrics -------------------------------------------------------------------

class EmptyInput(NeuriteFlowError):
    pass


class LengthMismatch(NeuriteFlowError):
    pass


class DegenerateRange(NeuriteFlowError):
    """MRE denominator is zero (constant ground truth)."""


class HashMismatch(NeuriteFlowError):
    """Recorded content hash does not match the file on disk."""
