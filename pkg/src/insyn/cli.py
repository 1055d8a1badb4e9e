"""Command line entry point: ``insyn <command>``.

Every command prints the resolved run configuration and its hash first, and
stamps that hash into the artifacts it writes. Relative paths resolve against
``--workdir``. Exit status is 0 on success, 2 for usage or input errors and 1
for anything unexpected.
"""
from __future__ import annotations

import argparse
import logging
import sys
import traceback
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch

from .checkpoint import CheckpointError, load_checkpoint, load_sections, save_checkpoint, section_tensors
from .config import ABLATIONS, ConfigError, RunConfig, load_config
from .evaluation import best_of_k, evaluate_split, predict_windows, write_plot_dump, write_report
from .model import InSyn
from .preprocess import (
    FeatureStats,
    apply_stats,
    augment,
    count_windows,
    fit_stats,
    read_samples,
    window_at,
    window_scene,
    write_samples,
)
from .scene import SceneError, build_scene, format_float, parse_dataset, read_scene, write_scene
from .synth import Kind, ScenarioSpec, generate, mixed_scenes, verify_labels
from .training import train_generator, train_seqcvae, write_curve

log = logging.getLogger("insyn")

SECTIONS = ("encoder", "generator", "cvae")
COMPONENT_SECTIONS = {"generator": ("encoder", "generator"), "cvae": ("cvae",)}


class UsageError(Exception):
    """Bad input or a missing prerequisite; reported with exit status 2."""


# -- helpers -----------------------------------------------------------------

def _resolve(args, path) -> Path:
    return Path(args.workdir) / path


def _open_input(path: Path, mode: str = "r"):
    try:
        return open(path, mode, encoding=None if "b" in mode else "utf-8")
    except FileNotFoundError:
        raise UsageError(f"{path}: no such file") from None
    except IsADirectoryError:
        raise UsageError(f"{path}: is a directory") from None


def _open_output(path: Path, mode: str = "w"):
    path.parent.mkdir(parents=True, exist_ok=True)
    # newline="" keeps byte output identical across platforms
    return open(path, mode, encoding=None if "b" in mode else "utf-8",
                newline=None if "b" in mode else "")


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _augment_list(text: str) -> List[str]:
    return [] if text in ("", "none") else text.split(",")


def resolve_config(args) -> RunConfig:
    cfg = load_config(_resolve(args, args.config)) if args.config else RunConfig()
    keys = ("seed", "jobs", "radius", "k", "ablation", "epochs", "batch_size", "frame_stride", "dt",
            "columns", "augment", "lr_generator", "lr_cvae", "clip_norm")
    return cfg.override(**{k: getattr(args, k) for k in keys if getattr(args, k, None) is not None})


def _echo(cfg: RunConfig) -> None:
    print(f"config {cfg.hash} {cfg.to_json()}", flush=True)


def _load_windows(path: Path):
    with _open_input(path) as fh:
        try:
            return read_samples(fh)
        except ValueError as exc:
            raise UsageError(f"{path}: {exc}") from None


def _stats_meta(stats: FeatureStats) -> Dict[str, List[float]]:
    return {"min": [float(v) for v in stats.min], "max": [float(v) for v in stats.max]}


def _load_model(cfg: RunConfig, paths: Sequence[Path]):
    """Assemble a full model from one or more checkpoints; returns ``(model, stats)``."""
    model = InSyn(cfg.model)
    loaded: List[str] = []
    stats = None
    for path in paths:
        with _open_input(path, "rb") as fh:
            tensors, meta = load_checkpoint(fh)
        if meta.get("model_hash") != cfg.model_hash:
            raise UsageError(f"{path}: checkpoint model hash {meta.get('model_hash')} does not match "
                             f"the current config ({cfg.model_hash}); check model settings, ablation and radius")
        loaded += load_sections(model, tensors)
        if stats is None:
            stats = FeatureStats(np.array(meta["stats"]["min"]), np.array(meta["stats"]["max"]))
    missing = sorted(set(SECTIONS) - set(loaded))
    if missing:
        raise UsageError(f"checkpoints lack sections {missing}; train the missing component first")
    model.eval()
    return model, stats


# -- commands ----------------------------------------------------------------

def cmd_ingest(args, cfg: RunConfig) -> int:
    dt = cfg.frame_stride / args.fps if args.fps else cfg.dt
    out_dir = _resolve(args, args.out_dir)
    for raw in args.paths:
        path = _resolve(args, raw)
        with _open_input(path) as fh:
            try:
                records = parse_dataset(fh, cfg.columns)
                scene = build_scene(records, cfg.frame_stride, dt, name=path.stem)
            except SceneError as exc:
                raise UsageError(f"{path}: {exc}") from None
        target = out_dir / f"{path.stem}.scene"
        with _open_output(target) as fh:
            write_scene(scene, fh)
        print(f"{path} -> {target}: pedestrians {len(scene.ped_index)} steps {scene.num_steps} "
              f"windows {count_windows(scene)} dt {format_float(scene.dt)}")
    return 0


def cmd_synth(args, cfg: RunConfig) -> int:
    out_dir = _resolve(args, args.out_dir)
    if args.kind == Kind.MIXED.value:
        scenes = mixed_scenes(args.count, cfg.seed, args.steps, args.groups, noise=args.noise)
    else:
        scenes = [generate(ScenarioSpec(kind=args.kind, steps=args.steps, speed=args.speed, noise=args.noise,
                                        seed=cfg.seed * 100_003 + i, radius=cfg.radius, dt=cfg.dt))
                  for i in range(args.count)]
    total = 0
    for ls in scenes:
        target = out_dir / f"{ls.scene.name}.scene"
        with _open_output(target) as fh:
            write_scene(ls.scene, fh)
        total += count_windows(ls.scene)
        if args.noise == 0:
            bad = verify_labels(ls, cfg.radius)
            if bad:
                raise RuntimeError(f"{ls.scene.name}: {len(bad)} label mismatches")
    print(f"wrote {len(scenes)} scenes to {out_dir}: windows {total}")
    return 0


def _scene_windows(args, cfg: RunConfig, paths: Sequence[str]):
    windows = []
    for raw in paths:
        path = _resolve(args, raw)
        with _open_input(path) as fh:
            try:
                scene = read_scene(fh)
            except SceneError as exc:
                raise UsageError(f"{path}: {exc}") from None
        windows += window_scene(scene, cfg.radius)
    return windows


def cmd_preprocess(args, cfg: RunConfig) -> int:
    train = _scene_windows(args, cfg, args.train)
    if not train:
        raise UsageError("training scenes yield no 20-step windows")
    train = augment(train, rotate="rot" in cfg.augment, scale="scale" in cfg.augment)
    stats = fit_stats(train)
    out_dir = _resolve(args, args.out_dir)
    with _open_output(out_dir / "train.samples") as fh:
        write_samples(train, stats, fh, cfg.hash)
    print(f"train: {len(train)} windows (augment {','.join(cfg.augment) or 'none'})")
    if args.test:
        test = _scene_windows(args, cfg, args.test)
        with _open_output(out_dir / "test.samples") as fh:
            write_samples(test, stats, fh, cfg.hash)
        print(f"test: {len(test)} windows")
    return 0


def _checkpoint_meta(cfg: RunConfig, stats: FeatureStats, sections, epoch: Optional[int] = None) -> dict:
    meta = {"config": cfg.to_dict(), "config_hash": cfg.hash, "model_hash": cfg.model_hash,
            "stats": _stats_meta(stats), "sections": sorted(sections)}
    if epoch is not None:
        meta["epoch"] = epoch
    return meta


def cmd_train(args, cfg: RunConfig) -> int:
    windows, stats, _ = _load_windows(_resolve(args, args.data))
    if stats is None:
        raise UsageError("sample file carries no feature statistics; produce it with 'insyn preprocess'")
    if not windows:
        raise UsageError("sample file is empty")
    windows = [apply_stats(w, stats) for w in windows]
    tcfg = cfg.train_config()
    torch.manual_seed(cfg.seed)
    model = InSyn(cfg.model)
    out = _resolve(args, args.out)
    components = ("generator", "cvae") if args.component == "all" else (args.component,)
    curve = []
    for comp in components:
        secs = COMPONENT_SECTIONS[comp]

        def snapshot(epoch, comp=comp, secs=secs):
            if args.save_every and epoch % args.save_every == 0:
                path = out.with_name(f"{out.stem}-{comp}-e{epoch:04d}{out.suffix}")
                with _open_output(path, "wb") as fh:
                    save_checkpoint(fh, section_tensors(model, secs), _checkpoint_meta(cfg, stats, secs, epoch))

        trainer = train_generator if comp == "generator" else train_seqcvae
        result = trainer(windows, tcfg, model, on_epoch=snapshot)
        curve += result.curve
        last = {r.term: r.value for r in result.curve if r.epoch == result.curve[-1].epoch}
        print(f"{comp}: " + " ".join(f"{k} {v:.6f}" for k, v in sorted(last.items())))
    sections = [s for c in components for s in COMPONENT_SECTIONS[c]]
    with _open_output(out, "wb") as fh:
        save_checkpoint(fh, section_tensors(model, sections), _checkpoint_meta(cfg, stats, sections))
    print(f"checkpoint {out} sections {','.join(sections)}")
    if args.curve:
        with _open_output(_resolve(args, args.curve)) as fh:
            write_curve(curve, fh)
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    model, stats = _load_model(cfg, [_resolve(args, p) for p in args.checkpoint])
    windows, _, _ = _load_windows(_resolve(args, args.data))
    if args.limit is not None:
        windows = windows[:args.limit]
    if not windows:
        raise UsageError("no windows to evaluate")
    windows = [apply_stats(w, stats) for w in windows]
    report, psets = evaluate_split(model, windows, cfg.k, cfg.seed, cfg.ablation_flags, oracle=args.oracle)
    with _open_output(_resolve(args, args.report)) as fh:
        write_report(report, fh, cfg.hash)
    if args.plot:
        with _open_output(_resolve(args, args.plot)) as fh:
            write_plot_dump(psets, fh, origins=[w.origin for w in windows])
    print(f"windows {len(windows)} ablation {cfg.ablation} k {cfg.k}: ade {report.ade:.6f} "
          f"fde {report.fde:.6f} ide {report.ide:.6f} min_fde {report.min_fde:.6f} min_ide {report.min_ide:.6f}")
    return 0


def cmd_predict(args, cfg: RunConfig) -> int:
    model, stats = _load_model(cfg, [_resolve(args, p) for p in args.checkpoint])
    path = _resolve(args, args.scene)
    with _open_input(path) as fh:
        try:
            scene = read_scene(fh)
        except SceneError as exc:
            raise UsageError(f"{path}: {exc}") from None
    try:
        w = apply_stats(window_at(scene, args.agent, args.start, cfg.radius), stats)
    except (SceneError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    pset = predict_windows(model, [w], cfg.k, cfg.seed, cfg.ablation_flags)[0]
    lines = [f"# config {cfg.hash}", f"# scene {scene.name} agent {args.agent} start {args.start} k {cfg.k}"]
    for s in range(pset.k):
        g = pset.goals[s] + w.origin
        lines.append(f"goal {s} {format_float(g[0])} {format_float(g[1])}")
    for s in range(pset.k):
        pts = (pset.trajectories[s] + w.origin).ravel()
        lines.append(f"trajectory {s} " + " ".join(format_float(v) for v in pts))
    if np.isfinite(w.future).all():
        b = best_of_k(pset.trajectories, w.future)
        lines.append(f"best {b.index} ade {b.ade:.6f} fde {b.fde:.6f} ide {b.ide:.6f} "
                     f"min_fde {b.min_fde:.6f} min_ide {b.min_ide:.6f}")
    else:
        lines.append("best none (ground truth incomplete)")
    text = "\n".join(lines) + "\n"
    if args.out:
        with _open_output(_resolve(args, args.out)) as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    def common(parser, default):
        kw = {} if default else {"default": argparse.SUPPRESS}
        parser.add_argument("--workdir", help="base directory for every relative path",
                            **(kw or {"default": "."}))
        parser.add_argument("--config", help="JSON run configuration; flags override its values", **kw)
        parser.add_argument("--seed", type=int, **kw)
        parser.add_argument("--jobs", type=int, help="maximum worker threads", **kw)
        parser.add_argument("--radius", type=float, help="neighbor radius in meters", **kw)
        parser.add_argument("-v", "--verbose", action="store_true", **kw)

    p = argparse.ArgumentParser(prog="insyn", description=__doc__.splitlines()[0])
    common(p, True)
    shared = argparse.ArgumentParser(add_help=False)
    common(shared, False)
    sub = p.add_subparsers(dest="command", required=True)
    _add = sub.add_parser
    sub.add_parser = lambda *a, **kw: _add(*a, parents=[shared], **kw)

    s = sub.add_parser("ingest", help="convert raw frame/id/x/y files to scene files")
    s.add_argument("paths", nargs="+")
    s.add_argument("--columns", type=_int_list, help="indices of frame,id,x,y (default 0,1,2,3)")
    s.add_argument("--stride", dest="frame_stride", type=int, help="keep every n-th frame")
    s.add_argument("--dt", type=float, help="seconds per kept frame")
    s.add_argument("--fps", type=float, help="source frame rate; sets dt = stride / fps")
    s.add_argument("--out-dir", default="scenes")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("synth", help="generate labeled synthetic scenes")
    s.add_argument("--kind", default="mixed", choices=[k.value for k in Kind])
    s.add_argument("--count", type=int, default=10)
    s.add_argument("--steps", type=int, default=20)
    s.add_argument("--speed", type=float, default=1.2)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--groups", type=int, default=4)
    s.add_argument("--out-dir", default="scenes")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("preprocess", help="window, augment and scale scenes into sample files")
    s.add_argument("--train", nargs="+", required=True, help="training scene files")
    s.add_argument("--test", nargs="*", default=[], help="held-out scene files")
    s.add_argument("--augment", type=_augment_list, help="comma list from rot,scale or 'none'")
    s.add_argument("--out-dir", default="data")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", help="train the generator and/or the goal sampler")
    s.add_argument("--data", default="data/train.samples")
    s.add_argument("--out", default="model.ckpt")
    s.add_argument("--component", choices=("all", "generator", "cvae"), default="all")
    s.add_argument("--ablation", choices=ABLATIONS)
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr-generator", type=float)
    s.add_argument("--lr-cvae", type=float)
    s.add_argument("--clip-norm", type=float)
    s.add_argument("--curve", help="write the loss curve CSV here")
    s.add_argument("--save-every", type=int, default=0, help="snapshot every n epochs")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="best-of-K evaluation of a test sample file")
    s.add_argument("--data", default="data/test.samples")
    s.add_argument("--checkpoint", action="append", required=True)
    s.add_argument("--ablation", choices=ABLATIONS)
    s.add_argument("--k", type=int)
    s.add_argument("--limit", type=int, help="evaluate only the first n windows")
    s.add_argument("--report", default="report.csv")
    s.add_argument("--plot", help="write per-sample goals and trajectories here")
    s.add_argument("--oracle", action="store_true", help="inject the ground truth as sample 0")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict", help="sample goals and trajectories for one agent")
    s.add_argument("--scene", required=True)
    s.add_argument("--agent", type=int, required=True)
    s.add_argument("--start", type=int, required=True)
    s.add_argument("--checkpoint", action="append", required=True)
    s.add_argument("--ablation", choices=ABLATIONS)
    s.add_argument("--k", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_predict)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        torch.set_num_threads(cfg.jobs)
        _echo(cfg)
        return args.func(args, cfg)
    except (UsageError, ConfigError, CheckpointError, SceneError) as exc:
        print(f"insyn: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"insyn: error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
