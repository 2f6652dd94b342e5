"""``inorm`` command line: train, sweep, ood, gradcheck.

Exit codes: 0 success, 2 usage/config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import tempfile
import warnings
from dataclasses import replace
from pathlib import Path

from . import gradcheck
from .bayes import Rotation, UniformNoise, corrupt, ood_evaluate
from .config import ConfigError, ExperimentConfig, load_config
from .faults import IncompatibleFault, McConfig, sweep, write_curve_csv
from .model import dumps_checkpoint, load_checkpoint
from .train import TrainingDiverged, train

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("INORM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"INORM_THREADS must be an integer, got {env!r}") from None
    return 1


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_model(path, cfg: ExperimentConfig, train_ds):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    try:
        model, _ = load_checkpoint(path)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from None
    is_cls = model.layers[-1].kind == "Softmax"
    if model.n_in != train_ds.inputs.shape[1] or is_cls != (cfg.task == "classification"):
        raise ConfigError(f"checkpoint {path} does not match the configured model/data")
    return model


def cmd_train(cfg: ExperimentConfig, args) -> int:
    model = cfg.build_model()
    train_ds, _ = cfg.load_data()
    trained, history = train(model, train_ds, cfg.train_config())
    out = _out_dir(cfg)
    _atomic_write(out / "model.json", dumps_checkpoint(trained, cfg.seed))
    lines = ["epoch,loss,metric"] + [
        f"{h['epoch']},{h['loss']:.9g},{h['metric']:.9g}" for h in history
    ]
    _atomic_write(out / "history.csv", "\n".join(lines) + "\n")
    final = history[-1]["metric"] if history else float("nan")
    print(f"trained {len(history)} epochs; final train metric {final:.4f}; wrote {out / 'model.json'}")
    return EXIT_OK


def cmd_sweep(cfg: ExperimentConfig, args) -> int:
    s = cfg.sweep
    if not s.kinds or not s.levels:
        raise ConfigError("[sweep] needs at least one kind and one level")
    train_ds, test_ds = cfg.load_data()
    out = _out_dir(cfg)
    models = {"": _load_model(args.checkpoint or out / "model.json", cfg, train_ds)}
    if args.baseline:
        models["_baseline"] = _load_model(args.baseline, cfg, train_ds)
    metric = "accuracy" if cfg.task == "classification" else "rmse"
    try:
        mc = McConfig(runs=s.runs, seed=cfg.seed, metric=metric, passes=s.passes, threads=_threads(args))
    except ValueError as exc:
        raise ConfigError(f"[sweep] {exc}") from None
    for kind in s.kinds:
        for suffix, model in models.items():
            try:
                curve = sweep(model, test_ds, kind, s.levels, mc, site=s.site, model_id=suffix.strip("_") or "proposed")
            except IncompatibleFault as exc:
                raise ConfigError(str(exc)) from None
            path = out / f"sweep_{kind}{suffix}.csv"
            write_curve_csv(curve, path)
            print(f"wrote {path}")
    return EXIT_OK


def cmd_ood(cfg: ExperimentConfig, args) -> int:
    if cfg.task != "classification":
        raise ConfigError("OOD evaluation needs a classification task")
    o = cfg.ood
    train_ds, test_ds = cfg.load_data()
    out = _out_dir(cfg)
    model = _load_model(args.checkpoint or out / "model.json", cfg, train_ds)
    sets = []
    if o.rotation_stages:
        if test_ds.inputs.shape[1] != 2:
            raise ConfigError("rotation stages need 2-D inputs")
        sets += [("rotation", s, corrupt(test_ds, Rotation(s))) for s in range(1, o.rotation_stages + 1)]
    sets += [("uniform", l, corrupt(test_ds, UniformNoise(l, o.a_base), cfg.seed))
             for l in range(1, o.noise_levels + 1)]
    base, reports = ood_evaluate(model, test_ds, sets, o.passes, cfg.seed)
    rows = [base] + reports
    with open(out / "ood.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["corruption", "param", "accuracy", "mean_nll", "detection_rate"])
        for r in rows:
            w.writerow([r.corruption, r.param, format(r.accuracy, ".9g"), format(r.mean_nll, ".9g"),
                        format(r.result.detection_rate, ".9g")])
    if args.dump_nll:
        with open(out / "ood_nll.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["corruption", "param", "index", "nll"])
            for r in rows:
                for i, v in enumerate(r.result.per_sample_nll):
                    w.writerow([r.corruption, r.param, i, format(float(v), ".17g")])
    print(f"wrote {out / 'ood.csv'} ({len(rows)} rows)")
    return EXIT_OK


def cmd_gradcheck(cfg: ExperimentConfig, args) -> int:
    results = gradcheck.run_gradcheck(seed=cfg.seed)
    for r in results:
        print(r)
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} gradient check(s) failed", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"all {len(results)} gradient checks passed")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "sweep": cmd_sweep, "ood": cmd_ood, "gradcheck": cmd_gradcheck}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="inorm", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="experiment TOML file (defaults apply if omitted for gradcheck)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument("--checkpoint", help="model checkpoint (default: <out>/model.json)")
    parser.add_argument("--baseline", help="second checkpoint swept alongside for comparison")
    parser.add_argument("--dump-nll", action="store_true", help="also write per-sample NLLs (ood)")
    parser.add_argument("--threads", type=int, help="Monte Carlo worker threads (env INORM_THREADS)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config is None:
            if args.command != "gradcheck":
                raise ConfigError("--config is required")
            cfg = ExperimentConfig()
        else:
            cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.out is not None:
            cfg = replace(cfg, out=args.out)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"inorm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"inorm: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
