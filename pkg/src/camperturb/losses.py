"""Feature-map loss kernels: content, Gram-matrix style, and their gradients.

A feature map is a (channels, height, width) float64 tensor.  Losses are
normalized by n = channels * height * width:

    content(out, target) = ||out - target||^2 / n
    gram(t)              = psi psi^T / n          (psi: channels x (h*w))
    style(out, target)   = ||gram(out) - gram(target)||_F^2
    total                = gamma_content * content + gamma_style * sum(style_i)

Gram matrices are symmetrized after the product so the result is exactly
symmetric despite floating-point accumulation order.  Closed-form
gradients with respect to ``out`` are provided; they match central finite
differences to first order in the step size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ChannelMismatch, ShapeMismatch


@dataclass(frozen=True)
class FeatureTensor:
    """An immutable (channels, height, width) float64 feature map."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 3:
            raise ValueError(
                f"feature tensor must be (c, h, w), got shape {data.shape}"
            )
        if min(data.shape) < 1:
            raise ValueError(f"feature tensor axes must be >= 1, got {data.shape}")
        if not np.isfinite(data).all():
            raise ValueError("feature tensor contains non-finite values")
        data = data.copy()
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def size(self) -> int:
        return self.data.size


def gram(t: FeatureTensor) -> np.ndarray:
    """Normalized Gram matrix psi psi^T / (c*h*w), exactly symmetric PSD.

    psi is the tensor flattened to (channels, height*width); entry (i, j)
    is the correlation of channels i and j over all spatial positions.
    """
    psi = t.data.reshape(t.channels, t.height * t.width)
    g = (psi @ psi.T) / t.size
    return (g + g.T) / 2.0


def content_loss(out: FeatureTensor, target: FeatureTensor) -> float:
    """Mean squared difference ||out - target||^2 / (c*h*w).

    Shapes must match exactly; raises :class:`ShapeMismatch` (with both
    shapes in the message) otherwise.
    """
    if out.data.shape != target.data.shape:
        raise ShapeMismatch(
            f"content loss needs equal shapes, got {out.data.shape} "
            f"and {target.data.shape}"
        )
    diff = (out.data - target.data).ravel()
    return float(diff @ diff) / out.size


def style_loss(out: FeatureTensor, target: FeatureTensor) -> float:
    """Squared Frobenius distance between the two Gram matrices.

    Only the channel counts must agree (spatial sizes may differ, each
    Gram is normalized by its own c*h*w); raises
    :class:`ChannelMismatch` otherwise.
    """
    if out.channels != target.channels:
        raise ChannelMismatch(
            f"style loss needs equal channel counts, got {out.channels} "
            f"and {target.channels}"
        )
    diff = gram(out) - gram(target)
    return float(np.sum(diff * diff))


def total_loss(
    out: FeatureTensor,
    content_target: FeatureTensor,
    style_targets,
    gamma_content: float = 1.0,
    gamma_style: float = 1.0,
) -> float:
    """Weighted sum gamma_content * content + gamma_style * sum of styles."""
    if not np.isfinite(gamma_content) or gamma_content < 0:
        raise ValueError(f"gamma_content must be >= 0, got {gamma_content}")
    if not np.isfinite(gamma_style) or gamma_style < 0:
        raise ValueError(f"gamma_style must be >= 0, got {gamma_style}")
    total = gamma_content * content_loss(out, content_target)
    for target in style_targets:
        total += gamma_style * style_loss(out, target)
    return total


def loss_gradients(
    out: FeatureTensor,
    content_target: FeatureTensor,
    style_targets,
    gamma_content: float = 1.0,
    gamma_style: float = 1.0,
) -> FeatureTensor:
    """Gradient of :func:`total_loss` with respect to ``out``.

    Content term: 2 (out - target) / n.  Each style term: with
    D = gram(out) - gram(target) and psi the flattened output,
    (4 / n) D psi reshaped back to (c, h, w); n = c*h*w of ``out``.
    """
    if not np.isfinite(gamma_content) or gamma_content < 0:
        raise ValueError(f"gamma_content must be >= 0, got {gamma_content}")
    if not np.isfinite(gamma_style) or gamma_style < 0:
        raise ValueError(f"gamma_style must be >= 0, got {gamma_style}")
    if out.data.shape != content_target.data.shape:
        raise ShapeMismatch(
            f"content loss needs equal shapes, got {out.data.shape} "
            f"and {content_target.data.shape}"
        )
    n = out.size
    grad = gamma_content * 2.0 * (out.data - content_target.data) / n
    if style_targets:
        psi = out.data.reshape(out.channels, out.height * out.width)
        g_out = gram(out)
        for target in style_targets:
            if out.channels != target.channels:
                raise ChannelMismatch(
                    f"style loss needs equal channel counts, got {out.channels} "
                    f"and {target.channels}"
                )
            diff = g_out - gram(target)
            grad = grad + gamma_style * (4.0 / n) * (diff @ psi).reshape(out.data.shape)
    return FeatureTensor(data=grad)
