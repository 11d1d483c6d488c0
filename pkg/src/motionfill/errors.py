"""Exception types raised across the package.

Everything user-facing derives from MotionFillError so callers (and the CLI)
can catch one base class. Subclasses are split between ValueError-flavoured
input problems and RuntimeError-flavoured state/file problems.
"""


class MotionFillError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateInput(MotionFillError, ValueError):
    """A 6D rotation input has (near-)collinear or zero column vectors."""


class AmbiguousAntipodal(MotionFillError, ValueError):
    """Interpolation endpoints are ~180 degrees apart; the path is not unique."""


class BehindCamera(MotionFillError, ValueError):
    """A point has non-positive depth and cannot be projected."""


class ZeroLengthBone(MotionFillError, ValueError):
    """Bone-length normalisation hit a segment of (near-)zero length."""


class DegenerateFrame(MotionFillError, ValueError):
    """Alignment landmarks are collinear/coincident; no frame can be built."""


class LengthMismatch(MotionFillError, ValueError):
    """Sequence-shaped arguments disagree on their time dimension."""


class ShapeMismatch(MotionFillError, ValueError):
    """Tensor arguments disagree on a non-time dimension."""


class BatchTooSmall(MotionFillError, ValueError):
    """An operation that swaps content between batch items got fewer than 2."""


class DegenerateCloud(MotionFillError, ValueError):
    """Point cloud has (near-)zero variance; similarity alignment is undefined."""


class SequenceTooShort(MotionFillError, ValueError):
    """Sequence is shorter than the operation requires."""


class AllMasked(MotionFillError, ValueError):
    """A window contains no visible frame to condition on."""


class WindowOverflow(MotionFillError, ValueError):
    """observed + horizon exceeds the model's window length."""


class TooFewObserved(MotionFillError, ValueError):
    """Future prediction needs at least one observed frame."""


class EmptySequence(MotionFillError, ValueError):
    """Operation received zero frames."""


class WindowTooLarge(MotionFillError, ValueError):
    """A filter window does not fit the sequence."""


class NonFiniteLoss(MotionFillError, RuntimeError):
    """Training produced a NaN/Inf loss."""


class VersionMismatch(MotionFillError, RuntimeError):
    """File or checkpoint was written by an incompatible format version."""


class CorruptFile(MotionFillError, RuntimeError):
    """File failed structural validation while being read."""
