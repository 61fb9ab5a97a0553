"""Labelled image collections and their on-disk layout.

A dataset directory holds ``images/<name>.png`` plus ``labels.csv`` with the
columns ``filename,label,poisoned_flag``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from zipdefense.imaging import read_image, write_image


@dataclass
class LabeledSet:
    images: np.ndarray  # (N, H, W, C) in [0, 1]
    labels: np.ndarray  # (N,) int
    poisoned: np.ndarray = None  # (N,) bool
    names: list[str] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValueError(f"images must be (N, H, W, C), got {self.images.shape}")
        n = len(self.images)
        if self.labels.shape != (n,):
            raise ValueError("labels must have one entry per image")
        if self.poisoned is None:
            self.poisoned = np.zeros(n, dtype=bool)
        self.poisoned = np.asarray(self.poisoned, dtype=bool)
        if self.names is None:
            self.names = [f"{i:05d}.png" for i in range(n)]

    def __len__(self) -> int:
        return len(self.images)

    def replace_images(self, images) -> "LabeledSet":
        return LabeledSet(np.asarray(images), self.labels.copy(), self.poisoned.copy(), list(self.names), dict(self.meta))


def save_dataset(ds: LabeledSet, root) -> None:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    with open(root / "labels.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["filename", "label", "poisoned_flag"])
        for name, img, lab, flag in zip(ds.names, ds.images, ds.labels, ds.poisoned):
            write_image(root / "images" / name, img)
            w.writerow([name, int(lab), int(flag)])


def load_dataset(root) -> LabeledSet:
    root = Path(root)
    names, labels, flags, images = [], [], [], []
    with open(root / "labels.csv", newline="") as f:
        for row in csv.DictReader(f):
            names.append(row["filename"])
            labels.append(int(row["label"]))
            flags.append(bool(int(row.get("poisoned_flag") or 0)))
            images.append(read_image(root / "images" / row["filename"]))
    if not images:
        raise ValueError(f"{root}: empty dataset")
    return LabeledSet(np.stack(images), np.array(labels), np.array(flags), names)


def load_image_dir(root) -> tuple[list[str], np.ndarray]:
    """All images of a directory (or its ``images/`` child), sorted by name."""
    root = Path(root)
    if (root / "images").is_dir():
        root = root / "images"
    paths = sorted(p for p in root.iterdir() if p.suffix.lower() in (".png", ".ppm", ".pgm"))
    if not paths:
        raise ValueError(f"{root}: no images found")
    return [p.name for p in paths], [read_image(p) for p in paths]
