"""Exception types raised across the package."""


class LipdecompError(Exception):
    """Base class for all package errors."""


class EmptyIntersection(LipdecompError):
    """A ball restriction of a point set came back empty."""


class EmptyWindow(EmptyIntersection):
    """A beta-number window contains no sample points."""


class DimensionMismatch(LipdecompError):
    """Two geometric objects disagree on dimension."""


class ZeroDiameter(LipdecompError):
    """An extent with zero diameter where a positive one is required."""


class DegenerateCloud(LipdecompError):
    """Restricted points are affinely dependent below the fit dimension.

    Carries a usable ``plane`` through the points so callers can proceed
    when a degenerate fit is acceptable.
    """

    def __init__(self, message, plane=None):
        super().__init__(message)
        self.plane = plane


class MissingPlane(LipdecompError):
    """A lattice cube is missing its best-fit plane."""


class InsufficientResolution(LipdecompError):
    """Requested lattice depth outruns the sample spacing."""


class CCBPViolation(LipdecompError):
    """A ball-and-plane compatibility condition failed validation.

    ``condition`` names the violated condition ("net-separation",
    "net-nesting", "base-distance", "same-generation", "base-plane",
    "cross-generation"); ``offender`` identifies the worst pair and
    ``magnitude`` the measured value.
    """

    def __init__(self, condition, offender, magnitude):
        super().__init__(
            f"CCBP condition {condition!r} violated by {offender} "
            f"(magnitude {magnitude:.4g})"
        )
        self.condition = condition
        self.offender = offender
        self.magnitude = magnitude


class PartitionGap(LipdecompError):
    """Partition-of-unity weights failed to sum to one."""


class LeftCoveredRegion(LipdecompError):
    """An iterated projection left the region covered by the current nets."""


class DegenerateTangent(LipdecompError):
    """Tangent-plane estimation found fewer directions than expected."""


class OutOfWindow(LipdecompError):
    """Evaluation point lies outside the working window of the map."""


class IllConditioned(LipdecompError):
    """A numerically estimated Jacobian is too ill-conditioned to invert."""


class ResolutionTooCoarse(LipdecompError):
    """Carving grid resolution is too coarse for the smallest stopped box."""


class CertificationFailure(LipdecompError):
    """A carved piece failed star-shape certification."""

    def __init__(self, piece_id, detail):
        super().__init__(f"piece {piece_id} failed certification: {detail}")
        self.piece_id = piece_id
        self.detail = detail


class CenterOutside(LipdecompError):
    """Proposed radial center lies outside the piece."""


class IncoherentRegion(LipdecompError):
    """A stopping-time region failed its coherence audit."""


class UnknownShape(LipdecompError):
    """Shape generator name not recognised."""


class FlatnessFailure(LipdecompError):
    """The disjoint pipeline requires an empty bad set; carries the bad ids."""

    def __init__(self, bad_ids):
        super().__init__(f"{len(bad_ids)} cubes fail the flatness threshold")
        self.bad_ids = list(bad_ids)
