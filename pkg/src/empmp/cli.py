"""``empmp`` command-line entry point.

Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import statistics
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import config as cfgmod
from .checkpoint import load_checkpoint
from .data import Scene, load_scenes, motion_to_coords, save_scenes, synth_scenes, walker_templates, window_split
from .errors import ConfigError, EmpmpError, NumericError
from .metrics import SCHEMES, evaluate, scheme as get_scheme
from .model import PRESETS, EmpmpModel, ModelConfig, count_flops, count_params, flop_breakdown, forward
from .train import resume, train, write_loss_csv, write_training_checkpoint

log = logging.getLogger("empmp")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
CHECKPOINT_NAME = "model.empm"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_assignment(text: str) -> tuple[str, object]:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"--set expects KEY=VALUE, got {text!r}")
    return key.strip(), yaml.safe_load(value)


def _run_config(args, flag_tree: dict) -> cfgmod.RunConfig:
    file_tree = cfgmod.load_file(args.config) if getattr(args, "config", None) else None
    tree = dict(_parse_assignment(item) for item in getattr(args, "set", None) or [])
    tree.update(flag_tree)  # dedicated flags beat --set
    return cfgmod.resolve(file_tree, tree)


def _load_data(path, what: str = "dataset") -> list[Scene]:
    if path is None:
        raise ConfigError(f"no {what} given")
    try:
        return load_scenes(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"{what}: {exc}") from None


def _check_data_fits(scenes, cfg: ModelConfig, source: str) -> None:
    for s in scenes:
        bad = [f"{name} (model {want}, data {got})" for name, want, got in
               (("J", cfg.J, s.J), ("P", cfg.P, s.P)) if want != got]
        if bad:
            raise ConfigError(f"{source}: scene {s.name or '?'} does not match the model: " + ", ".join(bad))


def _config_mismatch(ckpt_cfg: ModelConfig, requested: ModelConfig) -> list[str]:
    keys = ("J", "P", "T", "T_out", "C", "K", "N", "M", "norm_layout", "spatial_update")
    return [f"{k} (checkpoint {getattr(ckpt_cfg, k)}, config {getattr(requested, k)})"
            for k in keys if getattr(ckpt_cfg, k) != getattr(requested, k)]


# synth ------------------------------------------------------------------------

def cmd_synth(args) -> int:
    templates = walker_templates(args.templates, args.seed)
    scenes = synth_scenes(args.n, args.seed, templates, persons=args.persons,
                          frames=args.frames, fps=args.fps)
    try:
        manifest = save_scenes(scenes, args.out, binary=args.binary)
    except OSError as exc:
        raise ConfigError(f"cannot write to {args.out}: {exc.strerror}") from None
    print(f"wrote {len(scenes)} scenes, manifest {manifest}")
    return EXIT_OK


# train ------------------------------------------------------------------------

def _train_flags(args) -> dict:
    tree: dict = {}
    if args.preset:
        tree["preset"] = args.preset
    for key, flag in (("epochs", "epochs"), ("batch_size", "batch_size"), ("lr", "lr"),
                      ("seed", "seed"), ("checkpoint_every", "checkpoint_every"),
                      ("window_mode", "window_mode"), ("schedule", "schedule")):
        value = getattr(args, flag)
        if value is not None:
            tree[f"train.{key}"] = value
    if args.no_augment:
        tree["train.augment"] = False
    if args.seed is not None:
        tree["model.seed"] = args.seed
    if args.data:
        tree["data.train"] = args.data
    if args.out:
        tree["out"] = args.out
    return tree


def cmd_train(args) -> int:
    rc = _run_config(args, _train_flags(args))
    if not rc.out:
        raise ConfigError("no output directory given (--out or 'out' in the config)")
    out = Path(rc.out)
    scenes = _load_data(rc.data.get("train"), "training data")
    if not scenes:
        raise ConfigError("training data is empty")

    state, start = None, 0
    if args.from_checkpoint:
        model, state, start = resume(args.from_checkpoint)
        bad = _config_mismatch(model.config, rc.model)
        if bad:
            raise ConfigError("checkpoint does not match the configuration: " + ", ".join(bad))
    else:
        model = EmpmpModel(rc.model)
    _check_data_fits(scenes, model.config, "training data")

    out.mkdir(parents=True, exist_ok=True)
    rc.echo(out)
    result = train(rc.plan, model, scenes, out_dir=out, state=state, start_epoch=start)
    write_training_checkpoint(out / CHECKPOINT_NAME, result.model, result.state, result.epochs_done)
    write_loss_csv(out / "loss.csv", result.history, first_epoch=start + 1)
    last = result.history[-1].total if result.history else float("nan")
    print(f"trained epochs {start + 1}..{result.epochs_done}, final loss {last:.6g}, checkpoint {out / CHECKPOINT_NAME}")
    return EXIT_OK


# eval -------------------------------------------------------------------------

def _window_pairs(model: EmpmpModel, scenes, stride: int | None):
    c = model.config
    preds, gts = [], []
    for s in scenes:
        wins = window_split(s, c.T, c.T_out, stride=stride or c.T + c.T_out)
        x = np.stack([w.input for w in wins])
        preds.extend(forward(x, model))
        gts.extend(w.target for w in wins)
    return preds, gts


def cmd_eval(args) -> int:
    sch = get_scheme(args.scheme)
    gt_scenes = _load_data(args.data, "ground-truth data")
    if not gt_scenes:
        raise ConfigError("ground-truth data is empty")
    if args.pred:
        pred_scenes = _load_data(args.pred, "prediction data")
        if len(pred_scenes) != len(gt_scenes):
            raise ConfigError(f"{len(pred_scenes)} predicted scenes for {len(gt_scenes)} ground-truth scenes")
        preds = [p.motion() for p in pred_scenes]
        gts = [g.motion() for g in gt_scenes]
        for p, g, s in zip(preds, gts, gt_scenes):
            if p.shape != g.shape:
                raise ConfigError(f"scene {s.name}: prediction shape {p.shape} != ground truth {g.shape}")
        hip = gt_scenes[0].skeleton.hip_index
        extra = {"source": "scenes"}
    else:
        if not args.checkpoint:
            raise ConfigError("eval needs --checkpoint or --pred")
        model = load_checkpoint(args.checkpoint).model
        _check_data_fits(gt_scenes, model.config, "evaluation data")
        preds, gts = _window_pairs(model, gt_scenes, args.stride)
        hip = model.config.hip_index
        extra = {"source": "checkpoint"}
    report = evaluate(preds, gts, sch, hip_index=hip, config=extra)
    if args.out:
        c, j = report.write(args.out)
        print(f"wrote {c} and {j}")
    for m, f, v in report.rows():
        print(f"{m:6s} {f:>4s} {v:10.3f} mm")
    return EXIT_OK


# profile ----------------------------------------------------------------------

def _latency_ms(model: EmpmpModel, runs: int, seed: int) -> float:
    c = model.config
    x = np.random.default_rng(seed).normal(size=(3 * c.J, c.P, c.T))
    forward(x, model)  # warm the basis cache
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        forward(x, model)
        times.append(time.perf_counter() - t0)
    return 1000.0 * statistics.median(times)


def cmd_profile(args) -> int:
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint).model
    else:
        model = EmpmpModel(_run_config(args, {"preset": args.preset} if args.preset else {}).model)
    n = count_params(model)
    breakdown = flop_breakdown(model)
    total = count_flops(model, 1)
    print(f"parameters {n} ({n / 1e6:.2f}M)")
    print("MACs per sample (multiply-accumulates of the linear maps):")
    for name, v in breakdown.items():
        print(f"  {name:10s} {v}")
    print(f"  {'total':10s} {total}")
    doc = {"parameters": n, "macs": breakdown, "macs_total": total, "config": model.config.to_dict()}
    if args.runs > 0:
        ms = _latency_ms(model, args.runs, args.seed)
        print(f"forward latency {ms:.3f} ms (median of {args.runs} runs, batch 1)")
        doc["latency_ms"] = ms
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# predict ----------------------------------------------------------------------

def cmd_predict(args) -> int:
    model = load_checkpoint(args.checkpoint).model
    c = model.config
    scenes = _load_data(args.data, "input data")
    _check_data_fits(scenes, c, "input data")
    out_scenes = []
    for s in scenes:
        if args.start < 0 or args.start + c.T > s.frames:
            raise ConfigError(f"scene {s.name}: frames {args.start}..{args.start + c.T - 1} "
                              f"not available in a {s.frames}-frame scene")
        x = s.motion()[:, :, args.start:args.start + c.T]
        y = forward(x, model)
        out_scenes.append(Scene(motion_to_coords(y), s.fps, s.tag, s.name))
    try:
        manifest = save_scenes(out_scenes, args.out, binary=args.binary)
    except OSError as exc:
        raise ConfigError(f"cannot write to {args.out}: {exc.strerror}") from None
    if args.csv:
        with open(Path(args.out) / "trajectories.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scene", "person", "frame", "joint", "x", "y", "z"])
            for s in out_scenes:
                for p in range(s.P):
                    for f in range(s.frames):
                        for j in range(s.J):
                            w.writerow([s.name, p, f, j, *map(repr, s.coords[p, f, j].tolist())])
    print(f"wrote {len(out_scenes)} predicted scenes, manifest {manifest}")
    return EXIT_OK


# wiring -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="empmp", description="Multi-person motion forecasting: data, training, evaluation.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate synthetic multi-person walking scenes")
    p.add_argument("--n", type=int, required=True, help="number of scenes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--templates", type=int, default=16, help="number of procedural walker clips to mix")
    p.add_argument("--persons", type=int, default=3)
    p.add_argument("--frames", type=int, default=60)
    p.add_argument("--fps", type=float, default=15.0)
    p.add_argument("--binary", action="store_true", help="write the packed float32 variant")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a scene manifest")
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key, e.g. model.C=39")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--data", help="training scene manifest")
    p.add_argument("--out", help="output directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--schedule", choices=["constant", "step"])
    p.add_argument("--seed", type=int, help="seeds both initialization and data order")
    p.add_argument("--window-mode", dest="window_mode", choices=["random", "stride"])
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--from-checkpoint", help="resume from a training checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score forecasts at the key frames of a scheme")
    p.add_argument("--data", required=True, help="ground-truth scene manifest")
    p.add_argument("--checkpoint", help="model to evaluate on windows of --data")
    p.add_argument("--pred", help="predicted scenes to compare against --data directly")
    p.add_argument("--scheme", required=True, help=f"frame scheme: {', '.join(sorted(SCHEMES))}")
    p.add_argument("--stride", type=int, help="window stride (default: non-overlapping)")
    p.add_argument("--out", help="directory for metrics.csv and metrics.json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("profile", help="parameter count, MAC breakdown, forward latency")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--checkpoint", help="profile a saved model instead of a preset")
    p.add_argument("--runs", type=int, default=100, help="timed forward passes (0 skips timing)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the profile as JSON")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("predict", help="forecast the future of each scene")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="scene manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--start", type=int, default=0, help="first observed frame")
    p.add_argument("--csv", action="store_true", help="also write trajectories.csv")
    p.add_argument("--binary", action="store_true")
    p.set_defaults(func=cmd_predict)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"empmp: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (EmpmpError, OSError) as exc:
        print(f"empmp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
