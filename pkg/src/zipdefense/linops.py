"""Block average pooling, its replicating pseudo-inverse, and the induced projections.

All operators act on the trailing ``(H, W, C)`` axes and broadcast over any
leading batch axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AvgPoolOperator:
    """k x k average pooling with stride k, paired with nearest-neighbour upsampling.

    ``pinv`` replicates each pooled value over its block, so ``apply(pinv(y)) == y``
    and ``P = pinv(apply(.))`` is an orthogonal projection (block means).
    """

    k: int = 2

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"pool size must be a positive integer, got {self.k}")

    def _full_shape_check(self, x: np.ndarray) -> None:
        if x.ndim < 3:
            raise ValueError(f"expected (..., H, W, C) array, got shape {x.shape}")
        h, w = x.shape[-3], x.shape[-2]
        if h % self.k or w % self.k:
            raise ValueError(f"spatial shape {h}x{w} not divisible by pool size {self.k}")

    def pooled_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        h, w = shape[-3], shape[-2]
        if h % self.k or w % self.k:
            raise ValueError(f"spatial shape {h}x{w} not divisible by pool size {self.k}")
        return (*shape[:-3], h // self.k, w // self.k, shape[-1])

    def apply(self, x) -> np.ndarray:
        """A: per-block, per-channel mean."""
        x = np.asarray(x, dtype=np.float64)
        self._full_shape_check(x)
        k = self.k
        # fixed summation order so results do not depend on array layout
        acc = np.zeros(self.pooled_shape(x.shape))
        for i in range(k):
            for j in range(k):
                acc += x[..., i::k, j::k, :]
        return acc / (k * k)

    def pinv(self, y) -> np.ndarray:
        """A-dagger: replicate every pooled value over its k x k block."""
        y = np.asarray(y, dtype=np.float64)
        if y.ndim < 3:
            raise ValueError(f"expected (..., h, w, C) array, got shape {y.shape}")
        *lead, h, w, c = y.shape
        k = self.k
        out = np.broadcast_to(y[..., :, None, :, None, :], (*lead, h, k, w, k, c))
        return out.reshape(*lead, h * k, w * k, c)

    def project_range(self, x) -> np.ndarray:
        return self.pinv(self.apply(x))

    def project_null(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return x - self.project_range(x)
