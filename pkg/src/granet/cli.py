"""``granet`` command line: gen-scenes, train, eval, infer, ablate, export-ply."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config, make_config
from .geometry import fibonacci_viewpoints
from .nn import CheckpointError, load_checkpoint, save_checkpoint

log = logging.getLogger("granet")

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def parse_seeds(text: str) -> list[int]:
    """``7``, ``0..9`` (inclusive) or ``1,4,5``."""
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo, hi = int(a), int(b)
            if hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed range {text!r}; use A..B or a,b,c") from None


def scene_paths(directory) -> list[tuple[Path, Path]]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"scenes directory not found: {d}")
    pairs = []
    for p in sorted(d.glob("scene_*.json")):
        if p.name.endswith(".grasps.json"):
            continue
        pairs.append((p, p.with_name(p.stem + ".grasps.json")))
    if not pairs:
        raise FileNotFoundError(f"no scene_*.json files in {d}")
    return pairs


def effective_config(args) -> RunConfig:
    if args.config:
        cfg = load_config(args.config, profile=args.profile)
    else:
        cfg = make_config(profile=args.profile or "paper")
        log.info("effective config:\n%s", cfg.dumps())
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def load_model(cfg: RunConfig, path):
    from .model import GraNet
    if not path:
        raise ValueError("--checkpoint is required")
    return GraNet(cfg, load_checkpoint(path, cfg.seed))


# -- subcommands ---------------------------------------------------------------------
def _pool_map(fn, items, jobs: int) -> list:
    """``map`` in input order, across ``jobs`` processes when more than one."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _generate_one(job) -> str:
    seed, cfg, out = job
    from .oracle import AnnotationConfig, annotate_grasps, save_annotations
    from .scenes import PROFILES, dumps_scene, generate_scene, scene_from_dict

    profile = dataclasses.replace(PROFILES[cfg.profile], num_points=cfg.num_points)
    acfg = AnnotationConfig(angle_bins=cfg.angle_bins, depth_bins=cfg.depth_bins, w_max=cfg.w_max,
                            max_grasps_per_point=cfg.max_grasps_per_point)
    text = dumps_scene(generate_scene(seed, profile))
    scene = scene_from_dict(json.loads(text))  # annotate exactly what the file holds
    (out / f"scene_{seed:04d}.json").write_text(text)
    ann = annotate_grasps(scene, fibonacci_viewpoints(cfg.views), acfg)
    save_annotations(ann, out / f"scene_{seed:04d}.grasps.json", seed, acfg)
    return f"scene {seed}: {len(scene.points)} points, {len(ann)} grasps"


def cmd_gen_scenes(args, cfg: RunConfig) -> None:
    out = Path(args.out or cfg.scenes_dir)
    out.mkdir(parents=True, exist_ok=True)
    for line in _pool_map(_generate_one, [(s, cfg, out) for s in args.seeds], args.jobs):
        log.info(line)
    print(f"wrote {len(args.seeds)} scenes to {out}")


def _load_dataset(directory, lattice):
    from .oracle import load_annotations
    from .scenes import load_scene
    data = []
    for scene_path, ann_path in scene_paths(directory):
        if not ann_path.exists():
            raise FileNotFoundError(f"missing annotation file {ann_path}")
        data.append((scene_path.stem, load_scene(scene_path), load_annotations(ann_path, lattice)))
    return data


def cmd_train(args, cfg: RunConfig) -> None:
    from .model import GraNet
    from .plots import training_figure
    from .train import prepare_scene, train

    ckpt = Path(args.checkpoint or cfg.checkpoint)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    model = GraNet(cfg)
    data = _load_dataset(args.scenes or cfg.scenes_dir, model.lattice)
    scenes = [prepare_scene(model, sc, ann, name) for name, sc, ann in data]
    ckpt.with_suffix(".config.toml").write_text(cfg.dumps())

    def on_epoch(epoch, m):
        save_checkpoint(m.store, ckpt.with_name(f"{ckpt.stem}.epoch{epoch:03d}{ckpt.suffix}"))
        save_checkpoint(m.store, ckpt)

    history = train(scenes, model, cfg, ckpt.with_suffix(".metrics.jsonl"), on_epoch)
    training_figure(history, ckpt.with_suffix(".training.png"))
    last = history[-1]
    print(f"trained {cfg.epochs} epochs: loss {last['loss']:.4f} "
          f"object-mask acc {last['ops_acc']:.3f} value-level±1 acc {last['vps_acc1']:.3f}")


def _eval_one(job):
    from .ablation import evaluate_scene
    from .scenes import load_scene
    scene_path, cfg, ckpt, mode = job
    rep, pred = evaluate_scene(load_model(cfg, ckpt), load_scene(scene_path), mode)
    return rep, {"scene": scene_path.stem, **rep.to_dict(), "warnings": pred.warnings}


def cmd_eval(args, cfg: RunConfig) -> None:
    from .ablation import precision_means
    from .evaluation import mean_report
    from .exports import write_json
    from .plots import precision_figure

    ckpt = args.checkpoint or cfg.checkpoint
    load_model(cfg, ckpt)  # fail early on a bad checkpoint
    out = Path(args.out or cfg.report)
    out.parent.mkdir(parents=True, exist_ok=True)
    jobs = [(p, cfg, ckpt, args.mode) for p, _ in scene_paths(args.scenes or cfg.scenes_dir)]
    results = _pool_map(_eval_one, jobs, args.jobs)
    reports = [r for r, _ in results]
    per_scene = [s for _, s in results]
    summary = {"mode": args.mode, **mean_report(reports)}
    write_json({"summary": summary, "scenes": per_scene}, out)
    rows = ["scene\tAP\t" + "\t".join(f"AP{m}" for m in summary["ap_mu"])]
    for s in per_scene:
        rows.append("\t".join([s["scene"], f"{s['ap']:.6f}"] + [f"{v:.6f}" for v in s["ap_mu"].values()]))
    out.with_suffix(".tsv").write_text("\n".join(rows) + "\n")
    precision_figure(precision_means(reports), out.with_suffix(".png"),
                     f"{args.mode}: mean Precision@j over {len(reports)} scenes")
    print(f"AP {summary['ap']:.4f} over {len(reports)} scenes ({args.mode}); report {out}")


def cmd_infer(args, cfg: RunConfig) -> None:
    from .exports import write_grasps
    from .scenes import load_scene

    model = load_model(cfg, args.checkpoint or cfg.checkpoint)
    pred = model.predict(load_scene(args.scene).points, args.mode)
    out = Path(args.out or "grasps.txt")
    write_grasps(pred.grasps, out)
    for w in pred.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"wrote {len(pred.grasps)} grasps to {out}")


def cmd_ablate(args, cfg: RunConfig) -> None:
    from .ablation import run_ablation
    from .exports import write_json
    from .plots import ablation_figure
    from .scenes import load_scene

    model = load_model(cfg, args.checkpoint or cfg.checkpoint)
    scenes = [load_scene(p) for p, _ in scene_paths(args.scenes or cfg.scenes_dir)]
    result = run_ablation(scenes, model)
    out = Path(args.out or "ablation.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_json(result.to_dict(), out)
    ablation_figure(result.summary, out.with_suffix(".png"))
    g, b = result.summary["granet"]["ap"], result.summary["fps-baseline"]["ap"]
    print(f"granet AP {g:.4f}  fps-baseline AP {b:.4f}  delta {g - b:+.4f}")


def cmd_export_ply(args, cfg: RunConfig) -> None:
    from .exports import heat_colors, write_grasp_ply, write_point_ply
    from .scenes import load_scene

    model = load_model(cfg, args.checkpoint or cfg.checkpoint)
    scene = load_scene(args.scene)
    pred = model.predict(scene.points, "granet")
    out = Path(args.out or "export")
    out.mkdir(parents=True, exist_ok=True)
    res = scene.points[pred.resampled]
    mask = pred.ops_mask
    colors = np.where(mask[:, None], [[220, 40, 40]], [[150, 150, 150]])
    write_point_ply(out / "object_mask.ply", res, colors, {"object": mask.astype(float)})
    obj = scene.points[pred.object_points]
    write_point_ply(out / "value.ply", obj, heat_colors(pred.value, 0, cfg.dov_levels - 1),
                    {"value": pred.value})
    write_grasp_ply(out / "grasps.ply", pred.grasps)
    print(f"wrote object_mask.ply, value.ply, grasps.ply to {out}")


COMMANDS = {
    "gen-scenes": cmd_gen_scenes, "train": cmd_train, "eval": cmd_eval, "infer": cmd_infer,
    "ablate": cmd_ablate, "export-ply": cmd_export_ply,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--profile", choices=["paper", "desk"])
    common.add_argument("--seed", type=int, help="parameter-initialization / shuffling seed")
    common.add_argument("--out", help="output path")

    parser = argparse.ArgumentParser(prog="granet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("gen-scenes", parents=[common], help="synthetic scenes + grasp annotations")
    p.add_argument("--seeds", type=parse_seeds, required=True, help="A..B, inclusive")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p = sub.add_parser("train", parents=[common], help="train on a scenes directory")
    p.add_argument("--scenes")
    p.add_argument("--checkpoint")
    for name, helptext in (("eval", "AP report over a scenes directory"),
                           ("ablate", "granet vs fps-baseline on a scenes directory")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--scenes")
        p.add_argument("--checkpoint")
        if name == "eval":
            p.add_argument("--mode", choices=["granet", "fps-baseline"], default="granet")
            p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p = sub.add_parser("infer", parents=[common], help="grasp list for one scene file")
    p.add_argument("scene")
    p.add_argument("--checkpoint")
    p.add_argument("--mode", choices=["granet", "fps-baseline"], default="granet")
    p = sub.add_parser("export-ply", parents=[common], help="PLY views of one scene's predictions")
    p.add_argument("scene")
    p.add_argument("--checkpoint")
    return parser


def run_command(argv: list[str] | None = None) -> int:
    level = os.environ.get("GRANET_LOG", "error").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        cfg = effective_config(args)
        COMMANDS[args.command](args, cfg)
    except (ConfigError, CheckpointError, FileNotFoundError, ValueError, RuntimeError,
            AssertionError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"granet {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run_command())
