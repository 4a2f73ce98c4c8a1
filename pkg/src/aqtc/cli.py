"""Command-line entry point: ``aqtc {generate,train,eval,ablate,pseudo-label,gradcheck}``.

Any flag may also come from ``--config FILE`` holding ``key = value`` lines
(keys are flag names without the leading dashes; ``#`` starts a comment).
Flags given on the command line take precedence over the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .data import SyntheticConfig, dumps_dataset, generate_synthetic, load_dataset, split_train_val, write_dataset
from .errors import AQTCError, ConfigError, MissingLabelError
from .evaluation import evaluate
from .gradcheck import TOLERANCE, run_gradcheck
from .model import GROUND_MODES, GroundingConfig, read_checkpoint, write_checkpoint
from .training import SCHEDULES, TrainConfig, pseudo_label, train, train_with_ssl

log = logging.getLogger("aqtc")

# rows of the grounding ablation as (text mode, video mode)
GROUNDING_GRID = (
    ("combined", "soft"),
    ("hard", "soft"),
    ("soft", "soft"),
    ("combined", "combined"),
    ("combined", "hard"),
)


class CLIError(Exception):
    pass


# ---------------------------------------------------------------- config files


def read_config_file(path):
    entries = []
    for n, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CLIError(f"{path}:{n}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        entries.append((key.replace("_", "-"), value))
    return entries


def _config_tokens(entries, sub, cli_tokens):
    by_flag = {}
    for action in sub._actions:
        for opt in action.option_strings:
            by_flag[opt] = action
    tokens = []
    for key, value in entries:
        flag = "--" + key
        action = by_flag.get(flag)
        if action is None:
            raise CLIError(f"config key {key!r} is not a flag of this command")
        if isinstance(action, argparse._AppendAction):
            if any(t == flag or t.startswith(flag + "=") for t in cli_tokens):
                continue
            for item in value.split(","):
                tokens += [flag, item.strip()]
        elif isinstance(action, argparse._StoreTrueAction):
            if value.lower() in ("1", "true", "yes", "on"):
                tokens.append(flag)
        elif isinstance(action, argparse.BooleanOptionalAction):
            on = value.lower() in ("1", "true", "yes", "on")
            tokens.append(flag if on else "--no-" + key)
        else:
            tokens += [flag, value]
    return tokens


# ---------------------------------------------------------------- parser


def _add_train_flags(p):
    d = TrainConfig()
    p.add_argument("--lr", type=float, default=d.learning_rate, help="Adam learning rate")
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--max-epochs", type=int, default=d.max_epochs)
    p.add_argument("--patience", type=int, default=d.patience, help="early-stopping patience in epochs")
    p.add_argument("--schedule", choices=SCHEDULES, default=d.schedule)
    p.add_argument("--decay-rate", type=float, default=d.decay_rate,
                   help="teacher-forcing probability drop per epoch")
    p.add_argument("--val-fraction", type=float, default=d.val_fraction)
    p.add_argument("--ssl", action="store_true", help="add a pseudo-labeling round")
    p.add_argument("--ssl-threshold", type=float, default=d.ssl_threshold)
    p.add_argument("--unlabeled", type=Path,
                   help="unlabeled pool for --ssl (default: the validation split, labels stripped)")


def _add_grounding_flags(p, defaults=True):
    g = GroundingConfig()
    p.add_argument("--text-ground", choices=GROUND_MODES, default=g.text_mode if defaults else None)
    p.add_argument("--video-ground", choices=GROUND_MODES, default=g.video_mode if defaults else None)


def build_parser():
    parser = argparse.ArgumentParser(prog="aqtc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    def common(p, seed_required):
        p.add_argument("--config", type=Path, help="key = value file supplying defaults")
        p.add_argument("--seed", type=int, required=seed_required, default=None if seed_required else 0)
        p.add_argument("--dim", type=int, help="feature dimension")
        p.add_argument("--out", type=Path, help="output file or directory")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress")

    p = subs.add_parser("generate", help="write a synthetic dataset")
    common(p, True)
    s = SyntheticConfig()
    p.add_argument("--num-videos", type=int, default=s.num_videos)
    p.add_argument("--functions", type=int, default=s.m, help="function clips per video")
    p.add_argument("--samples-per-video", type=int, default=s.samples_per_video)
    p.add_argument("--steps", type=int, default=s.steps_per_sample, help="steps per question")
    p.add_argument("--candidates", type=int, default=s.n_candidates, help="candidates per step")
    p.add_argument("--noise-sigma", type=float, default=s.noise_sigma)
    p.add_argument("--vocab-per-function", type=int, default=s.vocab_per_function)

    p = subs.add_parser("train", help="train a model (optionally with pseudo-labeling)")
    common(p, True)
    p.add_argument("--data", type=Path, required=True)
    _add_train_flags(p)
    _add_grounding_flags(p)
    p.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True)

    p = subs.add_parser("eval", help="R@1 / R@3 of one checkpoint or an ensemble")
    common(p, False)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, action="append", required=True,
                   help="repeat to ensemble several checkpoints")
    _add_grounding_flags(p, defaults=False)
    p.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True)

    p = subs.add_parser("ablate", help="grounding and schedule ablation grid")
    common(p, False)
    p.add_argument("--data", type=Path, required=True)
    _add_train_flags(p)
    p.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True)

    p = subs.add_parser("pseudo-label", help="keep confident predictions as labels")
    common(p, False)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, action="append", required=True)
    p.add_argument("--ssl-threshold", type=float, default=TrainConfig().ssl_threshold)
    _add_grounding_flags(p, defaults=False)

    p = subs.add_parser("gradcheck", help="finite-difference gradient verification")
    common(p, False)
    p.add_argument("--trials", type=int, default=100, help="random cases per op kind")
    p.add_argument("--corrupt", help=argparse.SUPPRESS)
    return parser


def _find_config(tokens):
    for i, tok in enumerate(tokens):
        if tok == "--config" and i + 1 < len(tokens):
            return Path(tokens[i + 1])
        if tok.startswith("--config="):
            return Path(tok.split("=", 1)[1])
    return None


def parse_args(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    choices = parser._subparsers._group_actions[0].choices
    idx = next((i for i, tok in enumerate(argv) if tok in choices), None)
    config = _find_config(argv[idx + 1:]) if idx is not None else None
    if config is None:
        return parser.parse_args(argv)
    if not config.is_file():
        raise CLIError(f"config file not found: {config}")
    extra = _config_tokens(read_config_file(config), choices[argv[idx]], argv[idx + 1:])
    return parser.parse_args(argv[:idx + 1] + extra + argv[idx + 1:])


# ---------------------------------------------------------------- helpers


def _train_config(args):
    return TrainConfig(learning_rate=args.lr, batch_size=args.batch_size, max_epochs=args.max_epochs,
                       val_fraction=args.val_fraction, patience=args.patience, schedule=args.schedule,
                       decay_rate=args.decay_rate, ssl_threshold=args.ssl_threshold, seed=args.seed)


def _load(path):
    if not Path(path).is_file():
        raise CLIError(f"dataset not found: {path}")
    return load_dataset(path)


def _out_dir(args):
    if args.out is None:
        raise CLIError("--out is required")
    args.out.mkdir(parents=True, exist_ok=True)
    return args.out


def _load_checkpoints(paths, args):
    members, groundings = [], set()
    for path in paths:
        if not Path(path).is_file():
            raise CLIError(f"checkpoint not found: {path}")
        params, grounding = read_checkpoint(path)
        members.append(params)
        groundings.add(grounding or GroundingConfig())
    if args.text_ground or args.video_ground:
        base = next(iter(groundings)) if len(groundings) == 1 else GroundingConfig()
        return members, GroundingConfig(args.text_ground or base.text_mode, args.video_ground or base.video_mode)
    if len(groundings) > 1:
        raise CLIError("checkpoints were trained with different grounding; pass --text-ground/--video-ground")
    return members, groundings.pop()


def _check_dim(args, ds):
    if args.dim is not None and args.dim != ds.dim:
        raise CLIError(f"--dim {args.dim} does not match dataset dimension {ds.dim}")


def _fit(cfg, grounding, train_ds, val_ds, ssl, unlabeled=None):
    if ssl:
        pool = unlabeled if unlabeled is not None else val_ds.without_labels()
        return train_with_ssl(cfg, train_ds, pool, val_ds, None, grounding)
    return train(cfg, train_ds, val_ds, None, grounding)


# ---------------------------------------------------------------- commands


def cmd_generate(args):
    if args.out is None:
        raise CLIError("--out is required")
    cfg = SyntheticConfig(num_videos=args.num_videos, m=args.functions, d=args.dim or 64,
                          samples_per_video=args.samples_per_video, steps_per_sample=args.steps,
                          n_candidates=args.candidates, noise_sigma=args.noise_sigma,
                          vocab_per_function=args.vocab_per_function, seed=args.seed)
    try:
        cfg.validate()
    except ValueError as exc:
        raise CLIError(str(exc)) from exc
    ds = generate_synthetic(cfg)
    if args.out.parent and not args.out.parent.exists():
        args.out.parent.mkdir(parents=True)
    args.out.write_text(dumps_dataset(ds), encoding="utf-8")
    print(f"wrote {len(ds.videos)} videos, {len(ds.samples)} samples ({ds.num_steps} steps, d={ds.dim}) to {args.out}")
    return 0


def cmd_train(args):
    ds = _load(args.data)
    _check_dim(args, ds)
    out = _out_dir(args)
    cfg = _train_config(args)
    grounding = GroundingConfig(args.text_ground, args.video_ground)
    train_ds, val_ds = split_train_val(ds, cfg.val_fraction, cfg.seed)
    unlabeled = _load(args.unlabeled).without_labels() if args.unlabeled else None
    started = time.perf_counter()
    params, trainlog = _fit(cfg, grounding, train_ds, val_ds, args.ssl, unlabeled)
    write_checkpoint(params, out / "checkpoint.json", grounding)
    (out / "train_log.jsonl").write_text(trainlog.dumps(), encoding="utf-8")
    if args.figures and trainlog.records:
        from .plotting import plot_training_log
        plot_training_log(trainlog, out / "training_curve.png")
    best = [r for r in trainlog.records if r.epoch == trainlog.best_epoch]
    best_r1 = best[-1].val_r_at_1 if best else float("nan")
    print(f"trained {len(trainlog.records)} epochs on {len(train_ds.samples)} samples "
          f"({time.perf_counter() - started:.1f}s); best epoch {trainlog.best_epoch} "
          f"val R@1 {best_r1:.3f}; checkpoint {out / 'checkpoint.json'}")
    return 0


def _write_report(out, report, extra):
    record = {**extra, **report.to_record()}
    (out / "metrics.json").write_text(json.dumps(record, indent=1) + "\n", encoding="utf-8")
    lines = ["sample\tstep\trank"] + [f"{s}\t{i}\t{r}" for s, i, r in report.breakdown]
    (out / "breakdown.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / "report.txt").write_text(report.summary() + "\n", encoding="utf-8")


def cmd_eval(args):
    ds = _load(args.data)
    _check_dim(args, ds)
    members, grounding = _load_checkpoints(args.checkpoint, args)
    if any(p.d != ds.dim for p in members):
        raise CLIError("checkpoint dimension does not match the dataset")
    if not all(s.labeled for s in ds.samples):
        raise MissingLabelError("evaluation needs every step labeled")
    report = evaluate(members, grounding, ds)
    print(report.summary())
    print(json.dumps(report.to_record()))
    if args.out is not None:
        out = _out_dir(args)
        _write_report(out, report, {"checkpoints": [str(p) for p in args.checkpoint],
                                    "text_ground": grounding.text_mode, "video_ground": grounding.video_mode})
        if args.figures:
            from .plotting import plot_rank_histogram
            plot_rank_histogram(report, out / "ranks.png", max(len(st.candidates) for s in ds.samples for st in s.steps))
    return 0


def ablation_cells(base_schedule="linear_decay"):
    """The five grounding rows followed by the three schedules."""
    cells = [{"group": "grounding", "text_ground": t, "video_ground": v, "schedule": base_schedule}
             for t, v in GROUNDING_GRID]
    default = GroundingConfig()
    cells += [{"group": "schedule", "text_ground": default.text_mode, "video_ground": default.video_mode,
               "schedule": s} for s in SCHEDULES]
    return cells


def run_ablation(ds, cfg, ssl=False, unlabeled=None):
    train_ds, val_ds = split_train_val(ds, cfg.val_fraction, cfg.seed)
    cache, rows = {}, []
    for cell in ablation_cells():
        key = (cell["text_ground"], cell["video_ground"], cell["schedule"])
        if key not in cache:
            cell_cfg = TrainConfig(**{**cfg.__dict__, "schedule": cell["schedule"]})
            grounding = GroundingConfig(cell["text_ground"], cell["video_ground"])
            params, trainlog = _fit(cell_cfg, grounding, train_ds, val_ds, ssl, unlabeled)
            cache[key] = (evaluate(params, grounding, val_ds), len(trainlog.records))
        report, epochs = cache[key]
        label = (f"text {cell['text_ground']} / video {cell['video_ground']}" if cell["group"] == "grounding"
                 else cell["schedule"])
        rows.append({**cell, "label": label, "epochs": epochs, **report.to_record()})
        log.info("%s: %s", label, report.summary())
    return rows


def cmd_ablate(args):
    ds = _load(args.data)
    _check_dim(args, ds)
    out = _out_dir(args)
    unlabeled = _load(args.unlabeled).without_labels() if args.unlabeled else None
    rows = run_ablation(ds, _train_config(args), args.ssl, unlabeled)
    (out / "ablation.jsonl").write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    cols = ["group", "text_ground", "video_ground", "schedule", "epochs", "r_at_1", "r_at_3", "per_step_count"]
    lines = ["\t".join(cols)] + ["\t".join(str(r[c]) for c in cols) for r in rows]
    (out / "ablation.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if args.figures:
        from .plotting import plot_ablation
        plot_ablation(rows, out / "ablation.png")
    for r in rows:
        print(f"{r['label']:<32} R@1 {100 * r['r_at_1']:5.1f}  R@3 {100 * r['r_at_3']:5.1f}")
    return 0


def cmd_pseudo_label(args):
    ds = _load(args.data)
    if args.out is None:
        raise CLIError("--out is required")
    members, grounding = _load_checkpoints(args.checkpoint, args)
    if len(members) != 1:
        raise CLIError("pseudo-label uses exactly one checkpoint")
    cfg = TrainConfig(ssl_threshold=args.ssl_threshold)
    admitted = pseudo_label(members[0], cfg, ds.without_labels(), grounding)
    write_dataset(admitted, args.out)
    print(f"admitted {len(admitted.samples)} of {len(ds.samples)} samples at threshold {cfg.ssl_threshold}")
    return 0


def cmd_gradcheck(args):
    started = time.perf_counter()
    results = run_gradcheck(trials=args.trials, seed=args.seed, corrupt=args.corrupt)
    ok = all(r.passed for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<44} max rel error {r.max_rel_error:.3e}")
    print(f"{'all checks passed' if ok else 'gradient check FAILED'} "
          f"(tolerance {TOLERANCE:g}, {time.perf_counter() - started:.1f}s)")
    if args.out is not None:
        args.out.write_text(json.dumps({"passed": ok, "tolerance": TOLERANCE, "checks": [
            {"name": r.name, "max_rel_error": r.max_rel_error, "passed": r.passed} for r in results]},
            indent=1) + "\n", encoding="utf-8")
    return 0 if ok else 1


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "pseudo-label": cmd_pseudo_label,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    try:
        args = parse_args(argv)
    except CLIError as exc:
        print(f"aqtc: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (CLIError, AQTCError, ConfigError, OSError) as exc:
        print(f"aqtc: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
