"""Command-line entry point.

Subcommands: gen, attack, train, purify, sample, evaluate, demo, replay.
Every artifact gets a ``meta.json`` sidecar (or ``<file>.meta.json``) holding
the argv and resolved configuration; ``replay <sidecar>`` re-runs it.

Exit status: 0 on success, 2 on usage/configuration errors, 1 on runtime errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import shutil
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from zipdefense import __version__
from zipdefense.attack import parse_trigger, poison_dataset, trigger_all
from zipdefense.data import LabeledSet, load_dataset, load_image_dir, save_dataset
from zipdefense.denoiser import AnalyticGaussianDenoiser, DiscreteDatasetDenoiser
from zipdefense.evalharness import LinearSoftmaxClassifier, evaluate, gen_toy_dataset, train_classifier
from zipdefense.imaging import from_latent, read_image, to_latent, write_image
from zipdefense.linops import AvgPoolOperator
from zipdefense.pipeline import PURIFY_MODES, Scenario, fit_to_work_size, purify_images, run_scenario
from zipdefense.report import write_json
from zipdefense.sampler import PurifyConfig, RngStream, sample_unguided_latent
from zipdefense.schedule import make_linear_schedule
from zipdefense.tiling import TileGrid

log = logging.getLogger("zipdefense")


class ConfigError(Exception):
    """Invalid or inconsistent configuration (exit status 2)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_sampler_flags(p: argparse.ArgumentParser, defaults: Scenario = Scenario()) -> None:
    g = p.add_argument_group("diffusion sampler")
    g.add_argument("--steps", type=int, default=defaults.T, help="number of diffusion steps T")
    g.add_argument("--beta-start", type=float, default=defaults.beta_start)
    g.add_argument("--beta-end", type=float, default=defaults.beta_end)
    g.add_argument("--ddim-pace", type=int, default=defaults.pace, help="DDIM stride S (1 = full DDPM)")
    g.add_argument("--eta", type=float, default=defaults.eta, help="DDIM noise scale")
    g.add_argument("--no-clip-x0", action="store_true", help="do not clamp x0 estimates to [-1, 1]")
    g.add_argument("--seed", type=int, default=defaults.seed)


def _purify_config(args, lam: float = 0.0) -> PurifyConfig:
    sched = make_linear_schedule(args.steps, args.beta_start, args.beta_end)
    return PurifyConfig(sched, lam=lam, pace=args.ddim_pace, eta=args.eta, seed=args.seed,
                        clip_x0=not args.no_clip_x0)


def _load_denoiser(spec: str, work_size: int | None):
    kind, _, rest = spec.partition(":")
    if kind == "discrete":
        _, refs = load_image_dir(rest)
        refs, _ = fit_to_work_size(refs, work_size)
        if len({r.shape for r in refs}) != 1:
            raise ConfigError("reference images must share one shape")
        return DiscreteDatasetDenoiser(to_latent(np.stack(refs)))
    if kind == "gaussian":
        try:
            mu, std = (float(v) for v in rest.split(","))
        except ValueError:
            raise ConfigError(f"gaussian denoiser needs gaussian:<mu>,<s>, got {spec!r}") from None
        return AnalyticGaussianDenoiser(mu, std)
    raise ConfigError(f"unknown denoiser {spec!r}; use discrete:<dir> or gaussian:<mu>,<s>")


def _sidecar(path: Path, command: str, argv: list[str], args, **extra) -> None:
    config = {k: v for k, v in vars(args).items() if k != "func"}
    meta = {"tool": "zipdefense", "version": __version__, "command": command, "argv": list(argv),
            "config": config, **extra}
    target = path / "meta.json" if path.is_dir() else path.with_name(path.name + ".meta.json")
    write_json(target, meta)


# --- subcommands ------------------------------------------------------------


def cmd_gen(args, argv):
    rng = np.random.default_rng(args.seed)
    ds = gen_toy_dataset(args.classes, args.per_class, args.size, args.channels, rng,
                         brightness_jitter=args.brightness_jitter, phase_jitter=args.phase_jitter,
                         pixel_noise=args.pixel_noise)
    out = Path(args.out)
    save_dataset(ds, out)
    _sidecar(out, "gen", argv, args, generator=ds.meta)
    log.info("wrote %d images to %s", len(ds), out)


def cmd_attack(args, argv):
    ds = load_dataset(args.input)
    spec = parse_trigger(args.trigger, channels=ds.images.shape[-1], target_label=args.target_label)
    if args.all:
        out_ds = trigger_all(ds, spec)
    else:
        out_ds = poison_dataset(ds, spec, args.rate, np.random.default_rng(args.seed))
    out = Path(args.out)
    save_dataset(out_ds, out)
    _sidecar(out, "attack", argv, args, poisoned_count=int(out_ds.poisoned.sum()))
    log.info("poisoned %d of %d samples", int(out_ds.poisoned.sum()), len(out_ds))


def cmd_train(args, argv):
    ds = load_dataset(args.data)
    clf = train_classifier(ds, np.random.default_rng(args.seed), epochs=args.epochs, lr=args.lr,
                           batch_size=args.batch_size)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    clf.save(out)
    acc = float(np.mean(clf.predict(ds.images) == ds.labels))
    _sidecar(out, "train", argv, args, train_accuracy=acc)
    log.info("training accuracy %.4f", acc)


def _build_purify(args):
    names, images = load_image_dir(args.input)
    images, resized = fit_to_work_size(images, args.work_size)
    if len({im.shape for im in images}) != 1:
        raise ConfigError("all input images must share one shape after resizing")
    h, w = images[0].shape[:2]
    op = AvgPoolOperator(args.pool)
    if args.tile == "auto":
        ws = args.work_size or max(h, w)
        grid = TileGrid(max(1, ws // h), max(1, ws // w), h, w)
    else:
        grid = TileGrid.parse(args.tile, h, w)
    if h % op.k or w % op.k:
        raise ConfigError(f"pool size {op.k} must divide the tile size {h}x{w}")
    lams = args.lam
    for lam in lams:
        if not 0.0 <= lam <= 1.0:
            raise ConfigError(f"lambda must lie in [0, 1], got {lam}")
    cfgs = [_purify_config(args, lam) for lam in lams]
    denoiser = None
    if args.mode == "zip":
        if not args.denoiser:
            raise ConfigError("zip mode needs --denoiser")
        denoiser = _load_denoiser(args.denoiser, args.work_size)
    trigger = None
    if args.strict_trigger:
        trigger = read_image(args.strict_trigger)
    return names, images, resized, op, grid, cfgs, denoiser, trigger


def cmd_purify(args, argv, built):
    names, images, resized, op, grid, cfgs, denoiser, trigger = built
    src = Path(args.input)
    labels = src / "labels.csv"
    for cfg in cfgs:
        out = Path(args.out) if len(cfgs) == 1 else Path(args.out) / f"lambda_{cfg.lam:g}"
        (out / "images").mkdir(parents=True, exist_ok=True)
        result = purify_images(images, args.mode, op, denoiser, cfg, grid,
                               rng=RngStream(cfg.seed), workers=args.workers, trigger=trigger)
        for name, img in zip(names, result):
            write_image(out / "images" / name, img)
        if labels.exists():
            shutil.copyfile(labels, out / "labels.csv")
        _sidecar(out, "purify", argv, args, mode=args.mode, lam=cfg.lam, switch_step=cfg.switch_step,
                 grid=[grid.rows, grid.cols, grid.tile_h, grid.tile_w], resized_inputs=resized,
                 resized_back=False, strict_trigger=bool(trigger is not None))
        log.info("purified %d images (%s, lambda=%g) into %s", len(result), args.mode, cfg.lam, out)


def cmd_sample(args, argv):
    cfg = _purify_config(args, lam=1.0)
    den = _load_denoiser(args.denoiser, None)
    if args.shape:
        shape = tuple(int(v) for v in args.shape.lower().split("x"))
    elif isinstance(den, DiscreteDatasetDenoiser):
        shape = den.shape
    else:
        raise ConfigError("--shape HxWxC is required for the gaussian denoiser")
    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    rng = RngStream(cfg.seed)
    for i in range(args.count):
        img = from_latent(sample_unguided_latent(shape, den, cfg, rng.child(i)))
        write_image(out / "images" / f"{i:05d}.png", img)
    _sidecar(out, "sample", argv, args)


def cmd_evaluate(args, argv):
    clf = LinearSoftmaxClassifier.load(args.model)
    clean = load_dataset(args.clean)
    poisoned = load_dataset(args.poisoned)
    # poisoned test sets from `attack --all` keep the true labels
    poisoned = LabeledSet(poisoned.images, clean.labels, poisoned.poisoned, poisoned.names)
    pc = load_dataset(args.purified_clean).images if args.purified_clean else clean.images
    pp = load_dataset(args.purified_poisoned).images if args.purified_poisoned else poisoned.images
    m = evaluate(clf, clean, poisoned, pc, pp, args.target_label)
    report = {"scenario": args.scenario, "seed": args.seed, **m.to_dict(), "config": {
        "model": args.model, "clean": args.clean, "poisoned": args.poisoned,
        "purified_clean": args.purified_clean, "purified_poisoned": args.purified_poisoned,
        "target_label": args.target_label}}
    out = Path(args.report)
    write_json(out, report)
    _sidecar(out, "evaluate", argv, args)
    if args.csv:
        with open(args.csv, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["filename", "label", "pred_clean", "pred_poisoned"])
            for row in zip(clean.names, clean.labels, clf.predict(pc), clf.predict(pp)):
                w.writerow([row[0], *map(int, row[1:])])
    print(f"CA={m.CA:.6f} ASR={m.ASR:.6f} PA={m.PA:.6f}")


def _build_demo(args) -> Scenario:
    sc = Scenario()
    return replace(sc, seed=args.seed, T=args.steps, beta_start=args.beta_start, beta_end=args.beta_end,
                   pace=args.ddim_pace, eta=args.eta, clip_x0=not args.no_clip_x0, lam=args.lam,
                   pool=args.pool, grid=args.tile, workers=args.workers)


def cmd_demo(args, argv, sc: Scenario):
    report, outputs = run_scenario(sc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "report.json", report)
    if not args.no_images:
        for mode, (pc, pp) in outputs.items():
            for part, imgs in (("clean", pc), ("poisoned", pp)):
                d = out / "images" / mode / part
                d.mkdir(parents=True, exist_ok=True)
                for i, img in enumerate(imgs):
                    write_image(d / f"{i:05d}.png", img)
    _sidecar(out, "demo", argv, args, scenario=asdict(sc))
    for mode, m in report["results"].items():
        print(f"{mode:6s} CA={m['CA']:.4f} ASR={m['ASR']:.4f} PA={m['PA']:.4f}")


def cmd_replay(args, argv):
    meta = json.loads(Path(args.sidecar).read_text())
    if meta.get("tool") != "zipdefense" or "argv" not in meta:
        raise ConfigError(f"{args.sidecar} is not a zipdefense sidecar")
    return run(meta["argv"])


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="zipdefense", description="Zero-shot image purification against backdoor triggers.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a procedural toy dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--classes", type=int, default=4)
    g.add_argument("--per-class", type=int, default=100)
    g.add_argument("--size", type=int, default=32)
    g.add_argument("--channels", type=int, default=3, choices=(1, 3))
    g.add_argument("--brightness-jitter", type=float, default=0.1)
    g.add_argument("--phase-jitter", type=int, default=1)
    g.add_argument("--pixel-noise", type=float, default=0.02)
    g.add_argument("--seed", type=int, default=0)

    a = sub.add_parser("attack", help="stamp a trigger onto a dataset")
    a.add_argument("--in", dest="input", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--trigger", default="patch:3x3:white:br",
                   help="patch:HxW:<color>:<br|bl|tr|tl|R,C> or blend:<file>:<alpha>")
    a.add_argument("--rate", type=float, default=0.1)
    a.add_argument("--target-label", type=int, default=0)
    a.add_argument("--all", action="store_true", help="trigger every sample and keep true labels (test set)")
    a.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train", help="fit the linear softmax victim classifier")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="output .npz")
    t.add_argument("--epochs", type=int, default=40)
    t.add_argument("--lr", type=float, default=0.5)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--seed", type=int, default=0)

    u = sub.add_parser("purify", help="purify a directory of images")
    u.add_argument("--in", dest="input", required=True)
    u.add_argument("--out", required=True)
    u.add_argument("--mode", choices=PURIFY_MODES, default="zip")
    u.add_argument("--pool", type=int, default=2, help="average pooling size k")
    u.add_argument("--denoiser", help="discrete:<ref-dir> or gaussian:<mu>,<s>")
    u.add_argument("--lambda", dest="lam", type=_floats, default=[0.3],
                   help="switch fraction; a comma-separated list runs a sweep")
    u.add_argument("--tile", default="auto", help="mosaic grid RxC, or auto")
    u.add_argument("--work-size", type=int, default=256, help="images larger than this are area-downscaled")
    u.add_argument("--strict-trigger", help="known additive trigger image (verification oracle only)")
    u.add_argument("--workers", type=int, default=1)
    _add_sampler_flags(u)

    s = sub.add_parser("sample", help="unguided generation from the denoiser prior")
    s.add_argument("--out", required=True)
    s.add_argument("--denoiser", required=True)
    s.add_argument("--count", type=int, default=8)
    s.add_argument("--shape", help="HxWxC (required for gaussian)")
    _add_sampler_flags(s)

    e = sub.add_parser("evaluate", help="CA / ASR / PA report")
    e.add_argument("--model", required=True)
    e.add_argument("--clean", required=True)
    e.add_argument("--poisoned", required=True)
    e.add_argument("--purified-clean")
    e.add_argument("--purified-poisoned")
    e.add_argument("--target-label", type=int, default=0)
    e.add_argument("--report", required=True)
    e.add_argument("--csv")
    e.add_argument("--scenario", default="custom")
    e.add_argument("--seed", type=int, default=0)

    d = sub.add_parser("demo", help="full seeded toy pipeline (none / naive / zip)")
    d.add_argument("--out", default="demo_out")
    d.add_argument("--lambda", dest="lam", type=float, default=Scenario.lam)
    d.add_argument("--pool", type=int, default=Scenario.pool)
    d.add_argument("--tile", default=Scenario.grid)
    d.add_argument("--workers", type=int, default=1)
    d.add_argument("--no-images", action="store_true")
    _add_sampler_flags(d)

    r = sub.add_parser("replay", help="re-run the command recorded in a sidecar")
    r.add_argument("sidecar")
    return p


def run(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"zipdefense: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        # configuration phase: every ValueError here is a config problem
        try:
            if args.command == "purify":
                built = _build_purify(args)
            elif args.command == "demo":
                built = _build_demo(args)
                built.purify_config()
                TileGrid.parse(built.grid, built.size, built.size)
            elif args.command in ("sample",):
                _purify_config(args)
                built = None
            else:
                built = None
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

        if args.command == "purify":
            cmd_purify(args, argv, built)
        elif args.command == "demo":
            cmd_demo(args, argv, built)
        elif args.command == "replay":
            return cmd_replay(args, argv)
        else:
            {"gen": cmd_gen, "attack": cmd_attack, "train": cmd_train, "sample": cmd_sample,
             "evaluate": cmd_evaluate}[args.command](args, argv)
    except ConfigError as exc:
        print(f"zipdefense: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        log.error("%s", exc, exc_info=args.verbose)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
