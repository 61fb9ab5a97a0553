"""Mosaic assembly for batching small images through one purification run."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TileGrid:
    rows: int
    cols: int
    tile_h: int
    tile_w: int

    def __post_init__(self):
        for name in ("rows", "cols", "tile_h", "tile_w"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v}")

    @property
    def count(self) -> int:
        return self.rows * self.cols

    @property
    def mosaic_shape(self) -> tuple[int, int]:
        return self.rows * self.tile_h, self.cols * self.tile_w

    @classmethod
    def parse(cls, text: str, tile_h: int, tile_w: int) -> "TileGrid":
        """Build a grid from an ``RxC`` string."""
        try:
            r, c = (int(v) for v in text.lower().split("x"))
        except ValueError:
            raise ValueError(f"tile grid must look like RxC, got {text!r}") from None
        return cls(r, c, tile_h, tile_w)


def tile(images, grid: TileGrid) -> np.ndarray:
    """Place ``rows * cols`` equally shaped images row-major into one mosaic."""
    images = [np.asarray(im, dtype=np.float64) for im in images]
    if len(images) != grid.count:
        raise ValueError(f"grid {grid.rows}x{grid.cols} needs {grid.count} images, got {len(images)}")
    shape = images[0].shape
    if shape[:2] != (grid.tile_h, grid.tile_w) or any(im.shape != shape for im in images):
        raise ValueError(f"all tiles must have shape ({grid.tile_h}, {grid.tile_w}, C)")
    stack = np.stack(images).reshape(grid.rows, grid.cols, grid.tile_h, grid.tile_w, shape[2])
    return stack.transpose(0, 2, 1, 3, 4).reshape(grid.rows * grid.tile_h, grid.cols * grid.tile_w, shape[2])


def untile(mosaic, grid: TileGrid) -> list[np.ndarray]:
    mosaic = np.asarray(mosaic, dtype=np.float64)
    if mosaic.ndim != 3 or mosaic.shape[:2] != grid.mosaic_shape:
        raise ValueError(f"mosaic shape {mosaic.shape} does not match grid {grid.mosaic_shape}")
    c = mosaic.shape[2]
    blocks = mosaic.reshape(grid.rows, grid.tile_h, grid.cols, grid.tile_w, c).transpose(0, 2, 1, 3, 4)
    return [blocks[i, j].copy() for i in range(grid.rows) for j in range(grid.cols)]


def tile_all(images, grid: TileGrid, fill: float = 0.5) -> tuple[list[np.ndarray], int]:
    """Pack an arbitrary number of images into mosaics.

    The last mosaic is padded with constant ``fill`` tiles. Returns the mosaics
    and the number of real images so :func:`untile_all` can drop the padding.
    """
    images = list(images)
    if not images:
        return [], 0
    pad = (-len(images)) % grid.count
    filler = np.full_like(np.asarray(images[0], dtype=np.float64), fill)
    padded = images + [filler] * pad
    mosaics = [tile(padded[i:i + grid.count], grid) for i in range(0, len(padded), grid.count)]
    return mosaics, len(images)


def untile_all(mosaics, grid: TileGrid, count: int) -> list[np.ndarray]:
    out: list[np.ndarray] = []
    for m in mosaics:
        out.extend(untile(m, grid))
    return out[:count]


def _area_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic overlap weights mapping ``n_in`` samples onto ``n_out`` bins."""
    edges_in = np.arange(n_in + 1, dtype=np.float64)
    edges_out = np.linspace(0.0, n_in, n_out + 1)
    lo = np.maximum(edges_out[:-1, None], edges_in[None, :-1])
    hi = np.minimum(edges_out[1:, None], edges_in[None, 1:])
    w = np.clip(hi - lo, 0.0, None)
    return w / w.sum(axis=1, keepdims=True)


def resize_area(img, height: int, width: int) -> np.ndarray:
    """Downscale by exact area averaging (box filter with fractional overlaps)."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    if height > h or width > w:
        raise ValueError("resize_area only shrinks images")
    rh = _area_matrix(h, height)
    rw = _area_matrix(w, width)
    return np.einsum("ih,hwc,jw->ijc", rh, img, rw)
