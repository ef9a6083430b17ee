"""``linereg`` command line: generate, train, register, match, eval, bench.

Exit codes: 0 success, 2 parse/config/IO error, 3 numerical failure (including
failed estimation such as degenerate input or no valid RANSAC hypothesis).
"""
from __future__ import annotations

import argparse
import dataclasses
import glob
import json
import logging
import os
import sys

from .config import METHODS, RunConfig
from .errors import CheckpointMismatch, ConfigError, LineRegError, ParseError

log = logging.getLogger("linereg")

EXIT_OK, EXIT_PARSE, EXIT_NUMERIC = 0, 2, 3


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_PARSE, f"{self.prog}: error: {message}\n")


# config flags ------------------------------------------------------------------

_SECTIONS = ("net", "noise", "ransac", "icl")


def _flag_specs():
    """``(flag, section, field, default)`` for every scalar/tuple RunConfig field."""
    base = RunConfig()
    specs = []
    for f in dataclasses.fields(RunConfig):
        if f.name in _SECTIONS:
            sub = getattr(base, f.name)
            for g in dataclasses.fields(sub):
                specs.append((f"--{f.name}-{g.name}".replace("_", "-"), f.name, g.name, getattr(sub, g.name)))
        elif f.name != "profile":
            specs.append((f"--{f.name}".replace("_", "-"), None, f.name, getattr(base, f.name)))
    return specs


def _bool(text: str) -> bool:
    t = text.lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run configuration (override --config / --profile)")
    g.add_argument("--config", help="RunConfig JSON file")
    g.add_argument("--profile", choices=("desk", "paper"), help="start from a named profile")
    for flag, section, name, default in _flag_specs():
        dest = f"cfg__{section or ''}__{name}"
        if isinstance(default, bool):
            g.add_argument(flag, dest=dest, type=_bool, metavar="BOOL", help=f"default {default}")
        elif isinstance(default, tuple):
            kind = int if default and isinstance(default[0], int) else float
            g.add_argument(flag, dest=dest, type=kind, nargs="+", metavar="X",
                           help="default " + " ".join(f"{x:g}" for x in default))
        elif name == "method":
            g.add_argument(flag, dest=dest, choices=METHODS)
        else:
            g.add_argument(flag, dest=dest, type=type(default), metavar="N" if isinstance(default, int) else "X",
                           help=f"default {default}")


def resolve_config(args) -> RunConfig:
    if args.config:
        try:
            cfg = RunConfig.load(args.config)
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc.strerror}") from None
    else:
        cfg = RunConfig.paper() if args.profile == "paper" else RunConfig.desk()
    if args.config and args.profile:
        cfg = cfg.replace(net=(RunConfig.paper() if args.profile == "paper" else RunConfig.desk()).net, profile=args.profile)
    top, subs = {}, {}
    args.net_explicit = bool(args.config or args.profile)
    for key, value in vars(args).items():
        if not key.startswith("cfg__") or value is None:
            continue
        _, section, name = key.split("__")
        args.net_explicit |= section == "net"
        if section:
            subs.setdefault(section, {})[name] = tuple(value) if isinstance(value, list) else value
        else:
            top[name] = tuple(value) if isinstance(value, list) else value
    try:
        for section, changes in subs.items():
            top[section] = dataclasses.replace(getattr(cfg, section), **changes)
        return cfg.replace(**top) if top else cfg
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


# helpers ---------------------------------------------------------------------------

def _scene_files(scene_dir: str) -> list[str]:
    if not os.path.isdir(scene_dir):
        raise ConfigError(f"scene directory not found: {scene_dir}")
    files = sorted(glob.glob(os.path.join(scene_dir, "*.json")))
    if not files:
        raise ConfigError(f"no scene files in {scene_dir}")
    return files


def _load_scenes(scene_dir: str):
    from .formats import load_scene

    files = _scene_files(scene_dir)
    return [load_scene(f) for f in files], [os.path.splitext(os.path.basename(f))[0] for f in files]


def _load_model(path, args, cfg: RunConfig):
    """Network from ``path``; its stored shapes are checked against ``cfg.net`` only
    when the network was configured explicitly (``--config``, ``--profile`` or ``--net-*``)."""
    from .checkpoint import load_checkpoint

    if not path:
        raise ConfigError("a --checkpoint is required for this method")
    model, _ = load_checkpoint(path, cfg.net if getattr(args, "net_explicit", False) else None)
    model.eval()
    return model


def _write(path: str, text: str) -> None:
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)


def _read_inputs(args):
    """``(source, target, gt_pose or None)`` from ``--scene`` or ``--source/--target``."""
    from .formats import load_lineset, load_scene

    if args.scene:
        if args.source or args.target:
            raise ConfigError("give either --scene or --source/--target, not both")
        sc = load_scene(args.scene)
        return sc.source, sc.target, sc.gt_pose
    if not (args.source and args.target):
        raise ConfigError("need --scene or both --source and --target")
    return load_lineset(args.source), load_lineset(args.target), None


# commands -----------------------------------------------------------------------

def cmd_generate(args) -> int:
    from .formats import save_scene
    from .synth import generate_scene

    cfg = resolve_config(args)
    os.makedirs(args.out, exist_ok=True)
    for i in range(cfg.num_scenes):
        sc = generate_scene(cfg.seed, i, cfg.num_lines, cfg.overlap, cfg.noise, cfg.pose_ranges, cfg.axis_aligned_fraction)
        save_scene(os.path.join(args.out, f"scene_{i:04d}.json"), sc)
    print(f"wrote {cfg.num_scenes} scenes to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .checkpoint import load_optimizer_state, read_checkpoint, model_from_dict, save_checkpoint
    from .training import CSV_HEADER, create_model, make_optimizer, train

    cfg = resolve_config(args)
    if cfg.method == "icl":
        raise ConfigError("method icl has no trainable parameters")
    scenes, ids = _load_scenes(args.scenes)
    log_path = args.log or os.path.splitext(args.checkpoint)[0] + ".csv"
    start = 0
    if args.resume:
        d = read_checkpoint(args.resume)
        model = model_from_dict(d, cfg.net)
        opt = make_optimizer(model, cfg)
        load_optimizer_state(d, model, opt)
        start = int(d["epoch"])
        rows = []
        if os.path.exists(log_path):
            with open(log_path) as fh:
                rows = [r for r in fh.read().splitlines()[1:] if r and int(r.split(",")[0]) <= start]
        _write(log_path, "\n".join([CSV_HEADER] + rows) + "\n")
    else:
        model = create_model(cfg)
        opt = make_optimizer(model, cfg)
        _write(log_path, CSV_HEADER + "\n")

    def on_epoch(stats, model, optimizer):
        with open(log_path, "a") as fh:
            fh.write(stats.csv_row() + "\n")
        print(stats.csv_row(), flush=True)
        if args.save_every and stats.epoch % args.save_every == 0 and stats.epoch < cfg.epochs:
            save_checkpoint(args.checkpoint, model, optimizer, stats.epoch, {"method": cfg.method})

    _, opt = train(model, scenes, cfg, opt, start, ids, on_epoch)
    save_checkpoint(args.checkpoint, model, opt, max(start, cfg.epochs), {"method": cfg.method})
    return EXIT_OK


def cmd_register(args) -> int:
    from .bench import run_pipeline
    from .formats import dumps_result

    cfg = resolve_config(args)
    src, tgt, gt = _read_inputs(args)
    model = _load_model(args.checkpoint, args, cfg) if cfg.method != "icl" else None
    out = run_pipeline(cfg.method, src, tgt, cfg, model)
    text = dumps_result(out.result, cfg.method, gt)
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    if gt is not None:
        d = json.loads(text)
        print(f"rotation_error_deg={d['rotation_error_deg']:.6g} translation_error_m={d['translation_error_m']:.6g}",
              file=sys.stderr if not args.out else sys.stdout)
    return EXIT_OK


def cmd_match(args) -> int:
    from .bench import match_scene

    cfg = resolve_config(args)
    src, tgt, _ = _read_inputs(args)
    ml = match_scene(_load_model(args.checkpoint, args, cfg), src, tgt, cfg)
    if args.out:
        _write(args.out, ml.to_csv())
    else:
        sys.stdout.write(ml.to_csv())
    return EXIT_OK


def _levels_from_dir(cfg, scene_dir):
    from .bench import Level

    scenes, ids = _load_scenes(scene_dir)
    return [Level("none", scenes[0].noise_params, scenes[0].overlap_ratio, scenes, ids)]


def _models_for(methods, args, cfg):
    models = {}
    if "net" in methods:
        models["net"] = _load_model(args.checkpoint, args, cfg)
    if "regression" in methods:
        models["regression"] = _load_model(args.regression_checkpoint or args.checkpoint, args, cfg)
    return models


def _write_report(report, out_dir, timing=True):
    os.makedirs(out_dir, exist_ok=True)
    _write(os.path.join(out_dir, "per_scene.csv"), report.per_scene_csv())
    _write(os.path.join(out_dir, "recall.csv"), report.recall_csv())
    _write(os.path.join(out_dir, "summary.json"), report.summary_json())
    if timing:
        # wall-clock times differ between runs, kept apart from the reproducible outputs
        _write(os.path.join(out_dir, "timing.csv"), report.timing_csv())


def _print_summary(report):
    for e in report.summary():
        r = e["rotation_deg"]
        t = e["translation_m"]
        print(
            f"{e['sweep']} a={e['angle_sigma_deg']:g} f={e['footprint_sigma_m']:g} ov={e['overlap']:g} {e['method']}: "
            f"rot median {r['median']:.4g} deg, trans median {t['median']:.4g} m, failures {r['failures']}/{r['count']}"
        )


def cmd_eval(args) -> int:
    from .bench import run_benchmark

    cfg = resolve_config(args)
    levels = _levels_from_dir(cfg, args.scenes)
    report = run_benchmark(cfg, levels, [cfg.method], _models_for([cfg.method], args, cfg))
    _write_report(report, args.out, timing=False)
    _print_summary(report)
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import run_benchmark, sweep_conditions

    cfg = resolve_config(args)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise ConfigError(f"unknown methods {bad}; choose from {METHODS}")
    if args.sweep:
        levels = sweep_conditions(cfg, args.sweep)
    elif args.scenes:
        levels = _levels_from_dir(cfg, args.scenes)
    else:
        raise ConfigError("need --scenes or --sweep")
    report = run_benchmark(cfg, levels, methods, _models_for(methods, args, cfg))
    _write_report(report, args.out)
    _print_summary(report)
    return EXIT_OK


def cmd_config(args) -> int:
    cfg = resolve_config(args)
    if args.out:
        cfg.save(args.out)
    else:
        sys.stdout.write(cfg.to_json())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _ArgumentParser(prog="linereg", description="Register partially overlapping 3D line sets.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.set_defaults(func=func)
        _add_config_flags(sp)
        return sp

    sp = add("generate", cmd_generate, "write synthetic scene pairs as JSON")
    sp.add_argument("--out", required=True, help="output directory")

    sp = add("train", cmd_train, "train the matcher (or the regression baseline)")
    sp.add_argument("--scenes", required=True, help="directory of scene JSON files")
    sp.add_argument("--checkpoint", required=True, help="checkpoint file to write")
    sp.add_argument("--log", help="per-epoch CSV (default: checkpoint path with .csv)")
    sp.add_argument("--resume", help="checkpoint to continue from")
    sp.add_argument("--save-every", type=int, default=0, help="also checkpoint every N epochs")

    for name, func, help_ in (
        ("register", cmd_register, "estimate the pose between two line sets"),
        ("match", cmd_match, "emit the Top-K match list as CSV"),
    ):
        sp = add(name, func, help_)
        sp.add_argument("--scene", help="scene JSON file")
        sp.add_argument("--source", help="source line-set file")
        sp.add_argument("--target", help="target line-set file")
        sp.add_argument("--checkpoint", help="trained network checkpoint")
        sp.add_argument("--out", help="output file (default stdout)")

    sp = add("eval", cmd_eval, "evaluate one method on a scene directory")
    sp.add_argument("--scenes", required=True)
    sp.add_argument("--checkpoint")
    sp.add_argument("--regression-checkpoint")
    sp.add_argument("--out", required=True, help="output directory")

    sp = add("bench", cmd_bench, "benchmark methods on scenes or over a noise/overlap sweep")
    sp.add_argument("--scenes", help="directory of scene JSON files")
    sp.add_argument("--sweep", choices=("noise", "overlap"), help="generate a sweep from the config instead")
    sp.add_argument("--methods", default="icl", help="comma-separated subset of net,icl,regression")
    sp.add_argument("--checkpoint", help="checkpoint for method net")
    sp.add_argument("--regression-checkpoint", help="checkpoint for method regression")
    sp.add_argument("--out", required=True, help="output directory")

    sp = add("config", cmd_config, "print or save the resolved run configuration")
    sp.add_argument("--out", help="output file (default stdout)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ParseError, ConfigError, CheckpointMismatch, OSError) as exc:
        print(f"linereg: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except LineRegError as exc:
        # numerical failures and estimation failures (degenerate data, no hypothesis)
        print(f"linereg: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
