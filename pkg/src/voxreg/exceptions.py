"""Exception hierarchy for the registration toolkit.

Hard failures raise; recoverable degradations (no planes found, iteration
cap reached, rank-deficient plane system) are reported as status flags on
results instead -- see :mod:`voxreg.pipeline`.
"""


class RegistrationError(Exception):
    """Base class for all toolkit-specific failures."""


class AngleNearPi(RegistrationError):
    """Rotation angle too close to pi; the matrix logarithm is ill-conditioned."""


class NonUnitAxis(RegistrationError, ValueError):
    """Rotation axis is not a unit vector."""


class NonPositiveResolution(RegistrationError, ValueError):
    """Voxel resolution must be strictly positive."""


class EmptyCorrespondences(RegistrationError, ValueError):
    """A correspondence set was empty where at least one pair is required."""


class TooFewCorrespondences(RegistrationError, ValueError):
    """Not enough correspondences for the requested operation."""


class DegenerateEdge(RegistrationError):
    """An edge between two correspondence nodes has (near-)zero length."""


class NoFeasibleNode(RegistrationError):
    """No candidate node admits any rotation angle within tolerance."""


class ConsensusTooSmall(RegistrationError):
    """The surviving consensus set is too small to recover a pose."""


class RankDeficient(RegistrationError):
    """Normal matrix is numerically singular (e.g. collinear points)."""


class EmptyInliers(RegistrationError):
    """No correspondence survived the post-alignment inlier threshold."""


class RepeatedEigenvalue(RegistrationError):
    """Smallest covariance eigenvalue is not simple; its gradient is undefined."""


class InvalidCloud(RegistrationError, ValueError):
    """Point cloud contains non-finite coordinates."""


class ParseError(RegistrationError):
    """Malformed input file.

    Carries ``line`` (1-based) for text formats or ``offset`` (bytes from
    start of file) for binary formats when the location is known.
    """

    def __init__(self, message, line=None, offset=None):
        loc = ""
        if line is not None:
            loc = f" (line {line})"
        elif offset is not None:
            loc = f" (byte offset {offset})"
        super().__init__(message + loc)
        self.line = line
        self.offset = offset


class WrongArity(ParseError):
    """A record has the wrong number of fields."""


class UnsupportedFormat(ParseError):
    """File is syntactically valid but uses an unsupported variant."""


class NonRigidMatrix(RegistrationError, ValueError):
    """A 4x4 matrix does not represent a rigid transform."""
