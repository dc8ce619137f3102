"""Exception hierarchy used across the package.

Every error raised on a documented failure path derives from
:class:`CamPerturbError`, so callers can distinguish domain failures from
programming errors (plain ``ValueError``/``TypeError`` are reserved for
violated argument contracts such as negative tolerances).
"""

from __future__ import annotations


class CamPerturbError(Exception):
    """Base class for all domain errors raised by this package."""


class NonPositiveDepth(CamPerturbError):
    """A camera-frame point lies on or behind the principal plane (z <= 0)."""


class BehindCamera(CamPerturbError):
    """A transformed point or box ended up behind the camera."""


class OutOfRange(CamPerturbError):
    """A numeric argument falls outside its documented domain."""


class NotARotation(CamPerturbError):
    """A 3x3 matrix failed the orthogonality / unit-determinant check."""

    def __init__(self, message: str, line_no: int | None = None):
        super().__init__(message)
        self.line_no = line_no


class SingularHomography(CamPerturbError):
    """A 3x3 homography is singular (or numerically indistinguishable from it)."""


class DegenerateBox(CamPerturbError):
    """A box has a zero/negative extent where a proper volume is required."""


class MalformedLine(CamPerturbError):
    """A text record could not be parsed; carries the 1-based line number."""

    def __init__(self, line_no: int, detail: str):
        super().__init__(f"line {line_no}: {detail}")
        self.line_no = line_no
        self.detail = detail


class NonFiniteValue(CamPerturbError):
    """A parsed numeric field was NaN or infinite."""

    def __init__(self, line_no: int, field: str):
        super().__init__(f"line {line_no}: non-finite value in field '{field}'")
        self.line_no = line_no
        self.field = field


class MissingKey(CamPerturbError):
    """A required key was absent from a calibration file."""

    def __init__(self, key: str):
        super().__init__(f"required calibration key '{key}' is missing")
        self.key = key


class MalformedImage(CamPerturbError):
    """A byte stream is not a valid binary PGM/PPM image."""


class MalformedTensor(CamPerturbError):
    """A byte stream or sidecar is not a valid serialized feature tensor."""


class NoGroundTruth(CamPerturbError):
    """Metric is undefined: no ground-truth object of the requested class/bin."""


class NoMatches(CamPerturbError):
    """Metric is undefined: no detection matched any ground-truth object."""


class ShapeMismatch(CamPerturbError):
    """Two tensors that must share a full shape do not."""


class ChannelMismatch(CamPerturbError):
    """Two tensors that must share a channel count do not."""
