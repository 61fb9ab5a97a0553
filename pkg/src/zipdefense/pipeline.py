"""Batch purification over image collections and the seeded toy defense scenario."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from zipdefense.attack import parse_trigger, poison_dataset, trigger_all
from zipdefense.data import LabeledSet
from zipdefense.denoiser import Denoiser, DiscreteDatasetDenoiser, TiledDenoiser
from zipdefense.evalharness import evaluate, gen_toy_dataset, train_classifier
from zipdefense.imaging import from_latent, to_latent
from zipdefense.linops import AvgPoolOperator
from zipdefense.sampler import PurifyConfig, RngStream, purify
from zipdefense.schedule import make_linear_schedule
from zipdefense.tiling import TileGrid, resize_area, tile_all, untile_all

log = logging.getLogger(__name__)

PURIFY_MODES = ("none", "naive", "zip")


def naive_purify(img, op: AvgPoolOperator) -> np.ndarray:
    """Baseline: the pooled-then-upsampled image itself."""
    return from_latent(op.project_range(to_latent(img)))


def fit_to_work_size(images, work_size: int | None) -> tuple[list[np.ndarray], int]:
    """Area-downscale images larger than ``work_size`` on either side; returns (images, n_resized)."""
    out, resized = [], 0
    for im in images:
        im = np.asarray(im, dtype=np.float64)
        h, w = im.shape[:2]
        if work_size and (h > work_size or w > work_size):
            scale = work_size / max(h, w)
            im = resize_area(im, max(1, round(h * scale)), max(1, round(w * scale)))
            resized += 1
        out.append(im)
    return out, resized


def _tile_denoiser(denoiser: Denoiser, grid: TileGrid) -> Denoiser:
    if isinstance(denoiser, DiscreteDatasetDenoiser):
        th, tw = denoiser.shape[:2]
        if (th, tw) != (grid.tile_h, grid.tile_w):
            raise ValueError(f"reference images are {th}x{tw} but tiles are {grid.tile_h}x{grid.tile_w}")
        if grid.count > 1:
            return TiledDenoiser(denoiser, th, tw)
    return denoiser


def purify_images(images, mode: str, op: AvgPoolOperator, denoiser: Denoiser | None = None,
                  cfg: PurifyConfig | None = None, grid: TileGrid | None = None, rng: RngStream | None = None,
                  workers: int = 1, trigger=None) -> list[np.ndarray]:
    """Purify a list of equally shaped images.

    ``zip`` mode packs the images into mosaics of ``grid`` (one image per
    mosaic by default) and gives mosaic ``i`` the stream ``rng.child(i)``, so
    the result does not depend on ``workers``.
    """
    images = [np.asarray(im, dtype=np.float64) for im in images]
    if mode == "none":
        return [im.copy() for im in images]
    if mode == "naive":
        return [naive_purify(im, op) for im in images]
    if mode != "zip":
        raise ValueError(f"unknown purify mode {mode!r}; expected one of {PURIFY_MODES}")
    if denoiser is None or cfg is None:
        raise ValueError("zip mode needs a denoiser and a config")
    if not images:
        return []
    h, w = images[0].shape[:2]
    grid = grid or TileGrid(1, 1, h, w)
    if (grid.tile_h, grid.tile_w) != (h, w):
        raise ValueError(f"images are {h}x{w} but the grid expects {grid.tile_h}x{grid.tile_w} tiles")
    if grid.tile_h % op.k or grid.tile_w % op.k:
        raise ValueError(f"pool size {op.k} must divide the tile size {grid.tile_h}x{grid.tile_w}")
    rng = rng or RngStream(cfg.seed)
    den = _tile_denoiser(denoiser, grid)
    mosaics, count = tile_all(images, grid)
    trig_mosaic = None
    if trigger is not None:
        trig_mosaic = tile_all([trigger] * grid.count, grid, fill=0.0)[0][0]

    def run(i: int) -> np.ndarray:
        return purify(mosaics[i], op, den, cfg, rng=rng.child(i), trigger=trig_mosaic)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(run, range(len(mosaics))))
    else:
        out = [run(i) for i in range(len(mosaics))]
    return untile_all(out, grid, count)


@dataclass(frozen=True)
class Scenario:
    """Seeded toy defense experiment; defaults are the standard desk-scale setup."""

    name: str = "toy-badnet"
    seed: int = 42
    classes: int = 4
    n_train: int = 200  # per class
    n_test: int = 100  # per class
    n_refs: int = 64  # per class
    size: int = 32
    channels: int = 3
    trigger: str = "patch:3x3:white:br"
    rate: float = 0.1
    target_label: int = 0
    pool: int = 2
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    lam: float = 0.3
    pace: int = 50
    eta: float = 0.0
    clip_x0: bool = True
    grid: str = "8x8"
    epochs: int = 40
    lr: float = 0.5
    workers: int = 1

    def purify_config(self) -> PurifyConfig:
        sched = make_linear_schedule(self.T, self.beta_start, self.beta_end)
        return PurifyConfig(sched, lam=self.lam, pace=self.pace, eta=self.eta, seed=self.seed, clip_x0=self.clip_x0)


# stream identifiers; each data product gets its own seeded generator
_STREAM_TRAIN, _STREAM_TEST, _STREAM_REFS, _STREAM_POISON, _STREAM_FIT = 1, 2, 3, 4, 5
_STREAM_PURIFY_CLEAN, _STREAM_PURIFY_POISONED = 10, 11


def _gen(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream])


def run_scenario(sc: Scenario, modes=PURIFY_MODES) -> tuple[dict, dict]:
    """Generate data, poison, train, purify under every mode, and score.

    Returns the JSON-ready report and ``{mode: (purified_clean, purified_poisoned)}``.
    """
    train = gen_toy_dataset(sc.classes, sc.n_train, sc.size, sc.channels, _gen(sc.seed, _STREAM_TRAIN))
    test = gen_toy_dataset(sc.classes, sc.n_test, sc.size, sc.channels, _gen(sc.seed, _STREAM_TEST))
    refs = gen_toy_dataset(sc.classes, sc.n_refs, sc.size, sc.channels, _gen(sc.seed, _STREAM_REFS))
    spec = parse_trigger(sc.trigger, channels=sc.channels, target_label=sc.target_label)
    poisoned_train = poison_dataset(train, spec, sc.rate, _gen(sc.seed, _STREAM_POISON))
    clf = train_classifier(poisoned_train, _gen(sc.seed, _STREAM_FIT), epochs=sc.epochs, lr=sc.lr)
    poisoned_test = trigger_all(test, spec)
    log.info("trained victim: train accuracy %.4f", float(np.mean(clf.predict(poisoned_train.images) == poisoned_train.labels)))

    op = AvgPoolOperator(sc.pool)
    cfg = sc.purify_config()
    denoiser = DiscreteDatasetDenoiser(to_latent(refs.images))
    grid = TileGrid.parse(sc.grid, sc.size, sc.size)

    config = asdict(sc)
    config.pop("workers")  # parallelism never changes results
    report = {"scenario": sc.name, "seed": sc.seed, "config": config, "results": {}}
    outputs = {}
    for mode in modes:
        log.info("purifying test sets, mode=%s", mode)
        kw = dict(op=op, denoiser=denoiser, cfg=cfg, grid=grid, workers=sc.workers)
        pc = purify_images(test.images, mode, rng=RngStream(sc.seed, (_STREAM_PURIFY_CLEAN,)), **kw)
        pp = purify_images(poisoned_test.images, mode, rng=RngStream(sc.seed, (_STREAM_PURIFY_POISONED,)), **kw)
        metrics = evaluate(clf, test, poisoned_test, pc, pp, sc.target_label)
        report["results"][mode] = metrics.to_dict()
        outputs[mode] = (pc, pp)
    return report, outputs
