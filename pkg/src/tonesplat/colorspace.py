"""Per-view 3x3 color matrix mapping and its inverse (row-vector convention)."""

from __future__ import annotations

import torch

from . import instrument
from .scene import DTYPE

DET_GUARD = 1e-3


class SingularMatrixError(ValueError):
    pass


def identity_matrix() -> torch.Tensor:
    return torch.eye(3, dtype=DTYPE)


def check_invertible(m: torch.Tensor) -> None:
    det = float(torch.linalg.det(m.detach()))
    if not abs(det) >= DET_GUARD:
        raise SingularMatrixError(f"|det(M)| = {abs(det):.3g} below guard {DET_GUARD}")


def map_forward(image: torch.Tensor, m: torch.Tensor) -> torch.Tensor:
    """Each pixel ``[r, g, b]`` becomes ``[r, g, b] @ m``."""
    instrument.hit("color_matrix")
    return image @ m


def map_inverse(image: torch.Tensor, m: torch.Tensor) -> torch.Tensor:
    instrument.hit("color_matrix")
    check_invertible(m)
    return image @ torch.linalg.inv(m)


def matrix_gradients(upstream, image, m, inverse: bool = False):
    """Gradients of ``<upstream, F(image)>`` w.r.t. ``m`` and ``image``.

    ``F`` is the forward map, or the inverse map when ``inverse`` is set.
    Returns ``(grad_m, grad_image)``.
    """
    upstream = torch.as_tensor(upstream, dtype=DTYPE)
    image = torch.as_tensor(image, dtype=DTYPE).detach().requires_grad_(True)
    m = torch.as_tensor(m, dtype=DTYPE).detach().requires_grad_(True)
    if upstream.shape != image.shape:
        raise ValueError("upstream gradient and image shapes differ")
    out = map_inverse(image, m) if inverse else map_forward(image, m)
    grad_m, grad_image = torch.autograd.grad(out, [m, image], grad_outputs=upstream)
    return grad_m, grad_image
