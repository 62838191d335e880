"""Command line entry point: ``intentdiff {train,eval,sample,ablate,plot}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, load_config
from .data import DataError
from .model import ConstantVelocity

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat YAML config file")
    group = p.add_argument_group("config overrides")
    for f in dataclasses.fields(ExperimentConfig):
        group.add_argument(f"--{f.name}", dest=f"cfg_{f.name}", default=None, metavar=f.type.upper())


def _config_from_args(args) -> ExperimentConfig:
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    return load_config(args.config, overrides)


def _ids(text: str | None) -> list[int] | None:
    if not text:
        return None
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"window ids must be comma separated integers, got {text!r}") from None


def _eval_config(cfg: ExperimentConfig, args) -> ExperimentConfig:
    changes = {}
    if getattr(args, "split", None):
        changes["split"] = args.split
    if getattr(args, "data_dir", None):
        changes["data_dir"] = args.data_dir
    return cfg.replace(**changes) if changes else cfg


def _test_windows(cfg: ExperimentConfig) -> list:
    from .train import prepare_data

    data = prepare_data(cfg)
    return [w for ws in data.test.values() for w in ws]


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    out = Path(args.out or cfg.out_dir or "runs/train")
    if args.baseline:
        path = save_checkpoint(out / "checkpoint.pt", ConstantVelocity(cfg.t_pred), cfg.replace(out_dir=str(out)))
        print(f"wrote {path}")
        return EXIT_OK
    from .train import evaluate_model, prepare_data, train

    cfg = cfg.replace(out_dir=str(out))
    data = prepare_data(cfg)
    res = train(cfg, data, out)
    print(f"trained {res.steps} steps; checkpoint {res.checkpoint} (config {cfg.digest()})")
    if args.evaluate:
        report = evaluate_model(res.model, cfg, data)
        report.save(out / "report.json")
        print(report.table())
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import evaluate_split
    from .train import prepare_data

    model, cfg, meta = load_checkpoint(args.checkpoint)
    cfg = _eval_config(cfg, args)
    data = prepare_data(cfg)
    seed = cfg.seed if args.seed is None else args.seed
    report = evaluate_split(model, data.test, n=args.n, seed=seed, config_digest=meta["config_digest"])
    print(report.table(args.precision))
    if args.out:
        report.save(args.out)
    return EXIT_OK


def cmd_sample(args) -> int:
    model, cfg, meta = load_checkpoint(args.checkpoint)
    cfg = _eval_config(cfg, args)
    windows = _test_windows(cfg)
    ids = _ids(args.windows) or list(range(len(windows)))
    if max(ids) >= len(windows) or min(ids) < 0:
        raise UsageError(f"window ids must lie in [0, {len(windows)})")
    seed = cfg.seed if args.seed is None else args.seed
    chosen = [windows[i] for i in ids]
    samples = model.predict(chosen, args.n, seed, window_ids=ids)
    np.savez(
        args.out,
        samples=samples,
        obs=np.stack([w.obs for w in chosen]),
        fut=np.stack([w.fut for w in chosen]),
        window_ids=np.asarray(ids),
        seed=seed,
        config_digest=meta["config_digest"],
    )
    print(f"wrote {len(ids)} x {args.n} samples to {args.out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .ablation import run_ablation

    cfg = _config_from_args(args)
    out = Path(args.out or cfg.out_dir or "runs/ablation")
    for axis in args.axis:
        table = run_ablation(cfg, axis, out)
        print(f"[{axis}]")
        print(table.render())
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plotting import PlotSpec, plot_windows

    overlays = [o.strip() for o in (args.overlays or "").split(",") if o.strip()]
    ids = _ids(args.windows) or [0]
    spec = PlotSpec(window_ids=ids, overlays=overlays, output=args.out)
    try:
        spec.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    model, cfg, meta = load_checkpoint(args.checkpoint)
    cfg = _eval_config(cfg, args)
    windows = _test_windows(cfg)
    if max(ids) >= len(windows):
        raise UsageError(f"window ids must lie in [0, {len(windows)})")
    seed = cfg.seed if args.seed is None else args.seed
    try:
        meta = plot_windows(model, windows, spec, n=args.n, seed=seed, config_digest=meta["config_digest"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(json.dumps({"output": meta["output"], "panels": len(meta["panels"])}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="intentdiff", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model from a config")
    _add_config_flags(t)
    t.add_argument("--out", help="run directory (default: out_dir from the config)")
    t.add_argument("--evaluate", action="store_true", help="evaluate on the test split afterwards")
    t.add_argument("--baseline", action="store_true", help="write a constant-velocity checkpoint instead of training")
    t.set_defaults(func=cmd_train)

    def add_eval_args(q):
        q.add_argument("checkpoint")
        q.add_argument("--split", help="held-out scene (overrides the checkpoint config)")
        q.add_argument("--data-dir", dest="data_dir")
        q.add_argument("--n", type=int, default=20, help="samples per window (best-of-n)")
        q.add_argument("--seed", type=int, default=None)

    e = sub.add_parser("eval", help="best-of-n ADE/FDE on the test split")
    add_eval_args(e)
    e.add_argument("--out", help="write the report as JSON")
    e.add_argument("--precision", type=int, default=2)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sample", help="draw future samples for test windows")
    add_eval_args(s)
    s.add_argument("--windows", help="comma separated window ids (default: all)")
    s.add_argument("--out", required=True, help=".npz output")
    s.set_defaults(func=cmd_sample)

    a = sub.add_parser("ablate", help="run ablation matrices")
    _add_config_flags(a)
    a.add_argument("--axis", nargs="+", default=["components"],
                   choices=["components", "L_count", "K_steps", "refine_io"])
    a.add_argument("--out", help="output directory")
    a.set_defaults(func=cmd_ablate)

    pl = sub.add_parser("plot", help="render trajectories, samples and endpoints")
    add_eval_args(pl)
    pl.add_argument("--windows", default="0", help="comma separated window ids")
    pl.add_argument("--overlays", default="observed,ground_truth,samples,endpoints",
                    help="subset of observed,ground_truth,samples,endpoints,intent")
    pl.add_argument("--out", required=True, help="figure path (.png/.pdf/.svg)")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    from .train import NonFiniteLossError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NonFiniteLossError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
