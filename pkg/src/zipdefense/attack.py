"""Trigger patterns and training-set poisoning (BadNet patch, Blended overlay)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from zipdefense.data import LabeledSet
from zipdefense.imaging import check_image, read_image

MODES = ("additive", "patch", "blend")


@dataclass(frozen=True)
class TriggerSpec:
    """How a trigger is stamped onto an image.

    ``patch`` overwrites the region anchored at ``position`` (top-left corner,
    negative values count from the bottom/right edge), ``additive`` adds the
    pattern there, ``blend`` mixes a full-size pattern with weight ``alpha``.
    """

    pattern: np.ndarray
    mode: str = "patch"
    position: tuple[int, int] = (0, 0)
    alpha: float = 0.1
    target_label: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown trigger mode {self.mode!r}; expected one of {MODES}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"blend alpha must lie in (0, 1], got {self.alpha}")
        pat = np.asarray(self.pattern, dtype=np.float64)
        if pat.ndim == 2:
            pat = pat[..., None]
        object.__setattr__(self, "pattern", pat)

    def region(self, shape) -> tuple[slice, slice]:
        h, w = shape[:2]
        ph, pw = self.pattern.shape[:2]
        r, c = self.position
        r = r + h if r < 0 else r
        c = c + w if c < 0 else c
        if r < 0 or c < 0 or r + ph > h or c + pw > w:
            raise ValueError(f"{ph}x{pw} trigger at {self.position} does not fit a {h}x{w} image")
        return slice(r, r + ph), slice(c, c + pw)


def apply_trigger(img, spec: TriggerSpec) -> np.ndarray:
    img = check_image(img)
    pat = spec.pattern
    if pat.shape[2] not in (1, img.shape[2]):
        raise ValueError("trigger channels must be 1 or match the image")
    out = img.copy()
    if spec.mode == "blend":
        if pat.shape[:2] != img.shape[:2]:
            raise ValueError("blend pattern must cover the whole image")
        return np.clip((1.0 - spec.alpha) * img + spec.alpha * pat, 0.0, 1.0)
    rs, cs = spec.region(img.shape)
    if spec.mode == "patch":
        out[rs, cs, :] = pat
    else:
        out[rs, cs, :] = np.clip(out[rs, cs, :] + pat, 0.0, 1.0)
    return out


def poison_count(rate: float, n: int) -> int:
    return int(math.floor(rate * n + 0.5))


def poison_dataset(ds: LabeledSet, spec: TriggerSpec, rate: float, rng: np.random.Generator) -> LabeledSet:
    """Trigger and relabel a seeded random fraction ``rate`` of the samples."""
    if len(ds) == 0:
        raise ValueError("cannot poison an empty dataset")
    if not 0.0 < rate <= 1.0:
        raise ValueError(f"poisoning rate must lie in (0, 1], got {rate}")
    idx = np.sort(rng.choice(len(ds), size=poison_count(rate, len(ds)), replace=False))
    images = ds.images.copy()
    labels = ds.labels.copy()
    flags = ds.poisoned.copy()
    for i in idx:
        images[i] = apply_trigger(images[i], spec)
        labels[i] = spec.target_label
        flags[i] = True
    meta = dict(ds.meta, poison_rate=rate, poisoned_count=len(idx))
    return LabeledSet(images, labels, flags, list(ds.names), meta)


def trigger_all(ds: LabeledSet, spec: TriggerSpec) -> LabeledSet:
    """Test-time poisoning: every image triggered, true labels kept."""
    images = np.stack([apply_trigger(im, spec) for im in ds.images])
    return LabeledSet(images, ds.labels.copy(), np.ones(len(ds), dtype=bool), list(ds.names), dict(ds.meta))


_COLORS = {"white": 1.0, "black": 0.0, "gray": 0.5, "grey": 0.5}
_CORNERS = {"br": (-1, -1), "bl": (-1, 0), "tr": (0, -1), "tl": (0, 0)}


def parse_trigger(text: str, channels: int = 3, target_label: int = 0) -> TriggerSpec:
    """Parse ``patch:HxW:<color>:<br|bl|tr|tl|ROW,COL>`` or ``blend:<file>:<alpha>``.

    Colors are white, black, gray, a number in [0, 1], or ``checker``
    (alternating white/black cells).
    """
    parts = text.split(":")
    kind = parts[0]
    if kind == "patch":
        if len(parts) != 4:
            raise ValueError(f"patch trigger needs patch:HxW:color:position, got {text!r}")
        ph, pw = (int(v) for v in parts[1].lower().split("x"))
        color = parts[2].lower()
        if color == "checker":
            cell = (np.indices((ph, pw)).sum(axis=0) % 2 == 0).astype(np.float64)
            pattern = np.repeat(cell[..., None], channels, axis=2)
        else:
            value = _COLORS[color] if color in _COLORS else float(color)
            pattern = np.full((ph, pw, channels), value)
        pos = parts[3].lower()
        if pos in _CORNERS:
            sr, sc = _CORNERS[pos]
            position = (-ph if sr < 0 else 0, -pw if sc < 0 else 0)
        else:
            position = tuple(int(v) for v in pos.split(","))
        return TriggerSpec(pattern, mode="patch", position=position, target_label=target_label)
    if kind == "blend":
        if len(parts) != 3:
            raise ValueError(f"blend trigger needs blend:file:alpha, got {text!r}")
        pattern = read_image(parts[1])
        return TriggerSpec(pattern, mode="blend", alpha=float(parts[2]), target_label=target_label)
    raise ValueError(f"unknown trigger kind {kind!r}")
