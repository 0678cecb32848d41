"""``gpumem`` command-line interface.

Exit codes: 0 ok, 1 partial failure (benchmark row or gradient check),
2 usage error, 3 data validation error, 4 training diverged,
5 checkpoint/data schema mismatch, 6 I/O error.

The default seed comes from ``GPUMEM_SEED`` (else 0); ``--seed`` wins.
"""
from __future__ import annotations

import argparse
import concurrent.futures as cf
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, numerics
from .data import DataError, FeatureSpec, TaskRecord, generate_synthetic, read_csv, split, write_csv
from .gradcheck import TOLERANCE, run_all
from .metrics import compute_metrics
from .numerics import ConfigError
from .pipeline import ALL_KINDS, LABELS, NEURAL_KINDS, SchemaMismatch, fit_model
from .regressor import count_parameters
from .report import BenchmarkRow, render_csv, render_markdown, render_svg, render_text
from .training import TrainConfig, TrainingError
from .trees import SchemaError

log = logging.getLogger("gpumem")

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED, EXIT_SCHEMA, EXIT_IO = range(7)
SEED_ENV = "GPUMEM_SEED"
TABLE_ORDER = ("cart", "rf", "adaboost", "gbt", "hybrid")
NEURAL_FLAGS = ("epochs", "batch_size", "lr", "patience", "clip_norm", "preset")
TREE_FLAGS = ("max_depth", "min_samples_leaf", "n_trees", "feature_fraction", "n_rounds", "eta", "lam", "gamma")


class UsageError(Exception):
    pass


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV}={raw!r} is not an integer") from None


def _seed(args) -> int:
    return args.seed if args.seed is not None else default_seed()


def _fractions(text: str) -> tuple[float, float, float]:
    parts = tuple(float(x) for x in text.split(","))
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated fractions")
    return parts


# ---------------------------------------------------------------- commands

def cmd_gen_data(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    records = generate_synthetic(args.n, _seed(args))
    write_csv(records, args.out)
    y = np.array([r.memory_usage_mb for r in records])
    print(f"wrote {len(records)} rows to {args.out}; memory_usage_mb "
          f"mean={y.mean():.1f} std={y.std():.1f} min={y.min():.1f} max={y.max():.1f}")
    return EXIT_OK


def _train_config(args, seed: int) -> TrainConfig:
    return TrainConfig(epochs=args.epochs or 200, batch_size=args.batch_size or 32,
                       learning_rate=args.lr if args.lr is not None else 1e-3, seed=seed,
                       patience=args.patience, clip_norm=args.clip_norm)


def _tree_opts(args) -> dict:
    return {k: getattr(args, k) for k in TREE_FLAGS if getattr(args, k) is not None}


def cmd_train(args) -> int:
    seed = _seed(args)
    records = read_csv(args.data)
    splits = split(len(records), args.fractions, args.split_seed if args.split_seed is not None else seed)
    neural = args.model in NEURAL_KINDS
    ignored = [f for f in (TREE_FLAGS if neural else NEURAL_FLAGS) if getattr(args, f) is not None]
    if ignored:
        log.warning("--model %s ignores %s", args.model, ", ".join("--" + f.replace("_", "-") for f in ignored))
    tree_opts = {} if neural else _tree_opts(args)
    model, history = fit_model(args.model, records, splits, seed=seed, preset=args.preset or "tiny",
                               train_cfg=_train_config(args, seed), tree_opts=tree_opts)
    checkpoint.save(model, args.out)
    hist_path = Path(args.history) if args.history else Path(str(args.out) + ".history.csv")
    if history is not None:
        history.write_csv(hist_path, timings=args.timings)
        print(f"trained {args.model}: {len(history)} epochs, best epoch {history.best_epoch}, "
              f"{count_parameters(model.params)} parameters")
    else:
        hist_path.write_text("epoch,train_loss,val_loss,seconds\n", encoding="utf-8")
        print(f"trained {args.model}")
    print(f"checkpoint: {args.out}\nhistory: {hist_path}")
    return EXIT_OK


def _split_indices(model, n: int, which: str) -> list[int]:
    if which == "all":
        return list(range(n))
    info = model.split
    if info.get("n") not in (None, n):
        log.warning("checkpoint was trained on %s rows, data has %d; re-deriving the split", info.get("n"), n)
    s = split(n, info.get("fractions", (0.7, 0.15, 0.15)), info.get("seed", 0))
    return list(s.get(which))


def cmd_eval(args) -> int:
    model = checkpoint.load(args.ckpt)
    records = read_csv(args.data)
    model.check_schema(FeatureSpec.from_records(records))
    idx = _split_indices(model, len(records), args.split)
    subset = [records[i] for i in idx]
    pred = model.predict(subset)
    y = np.array([r.memory_usage_mb for r in subset])
    rows = [BenchmarkRow(LABELS[model.kind], compute_metrics(y, pred, LABELS[model.kind]))]
    sys.stdout.write(render_text(rows))
    if args.csv:
        Path(args.csv).write_text(render_csv(rows), encoding="utf-8")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = checkpoint.load(args.ckpt)
    records = read_csv(args.input, require_target=False)
    errors = []
    for i, r in enumerate(records, start=2):
        for f in model.spec.features:
            if f.kind == "categorical" and getattr(r, f.name) not in f.vocab:
                errors.append(f"row {i}: unknown {f.name} {getattr(r, f.name)!r}")
    if errors:
        raise DataError("; ".join(errors))
    pred = model.predict(records) if records else np.zeros(0)
    lines = ["predicted_memory_mb"] + [repr(float(p)) for p in pred]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _bench_job(kind, records, splits, seed, preset, epochs):
    model, _ = fit_model(kind, records, splits, seed=seed, preset=preset,
                         train_cfg=TrainConfig(epochs=epochs, seed=seed))
    out = {}
    for part in ("val", "test"):
        sub = [records[i] for i in splits.get(part)]
        out[part] = compute_metrics([r.memory_usage_mb for r in sub], model.predict(sub), LABELS[kind])
    return out


def run_benchmark(records: list[TaskRecord], seed: int, preset: str = "tiny", epochs: int = 200,
                  jobs: int = 1, kinds=ALL_KINDS):
    """Fit every kind on one seeded split; returns {kind: {"val"|"test": MetricsReport} or Exception}."""
    splits = split(len(records), seed=seed)
    results = {}
    if jobs <= 1:
        for k in kinds:
            try:
                results[k] = _bench_job(k, records, splits, seed, preset, epochs)
            except Exception as exc:  # one failed model must not sink the report
                log.error("%s failed: %s", k, exc)
                results[k] = exc
        return results
    with cf.ProcessPoolExecutor(max_workers=jobs) as pool:
        futs = {k: pool.submit(_bench_job, k, records, splits, seed, preset, epochs) for k in kinds}
        for k, fut in futs.items():
            try:
                results[k] = fut.result()
            except Exception as exc:
                log.error("%s failed: %s", k, exc)
                results[k] = exc
    return results


def cmd_benchmark(args) -> int:
    seed = _seed(args)
    records = read_csv(args.data) if args.data else generate_synthetic(452, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = run_benchmark(records, seed, args.preset, args.epochs, args.jobs)

    def rows(kinds):
        res = []
        for k in kinds:
            r = results[k]
            res.append(BenchmarkRow(LABELS[k], error=str(r)) if isinstance(r, Exception)
                       else BenchmarkRow(LABELS[k], r["test"]))
        return res

    table, ablation = rows(TABLE_ORDER), rows(("transformer", "hybrid"))
    for name, rs, title in (("benchmark", table, "Model comparison (test split)"),
                            ("ablation", ablation, "Ablation: BiGRU removed (test split)")):
        (out / f"{name}.txt").write_text(render_text(rs, title), encoding="utf-8")
        (out / f"{name}.md").write_text(render_markdown(rs), encoding="utf-8")
        (out / f"{name}.csv").write_text(render_csv(rs), encoding="utf-8")
        sys.stdout.write(render_text(rs, title) + "\n")
    (out / "mse.svg").write_text(render_svg(table, "mse", "Test MSE by model"), encoding="utf-8")
    (out / "rmse.svg").write_text(render_svg(table, "rmse", "Test RMSE by model"), encoding="utf-8")
    failed = any(isinstance(r, Exception) for r in results.values())
    return EXIT_FAILED if failed else EXIT_OK


def cmd_gradcheck(args) -> int:
    seeds = tuple(range(_seed(args), _seed(args) + args.n_seeds))
    if args.inject_fault:
        numerics.FAULTS.update(args.inject_fault)
    try:
        results = run_all(seeds)
    finally:
        numerics.FAULTS.clear()
    worst: dict[str, float] = {}
    for r in results:
        worst[r.unit] = max(worst.get(r.unit, 0.0), r.error)
    width = max(len(u) for u in worst)
    print(f"{'unit'.ljust(width)}  max_rel_error  status  (tolerance {TOLERANCE:g}, seeds {list(seeds)})")
    bad = []
    for unit, err in worst.items():
        ok = err < TOLERANCE
        print(f"{unit.ljust(width)}  {err:13.3e}  {'pass' if ok else 'FAIL'}")
        if not ok:
            bad.append(unit)
    if bad:
        print(f"gradient check failed: {', '.join(bad)}", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gpumem", description="GPU memory requirement regression toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic task CSV")
    g.add_argument("--n", type=int, default=452)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="fit one model and write a checkpoint")
    t.add_argument("--data", required=True)
    t.add_argument("--model", choices=ALL_KINDS, required=True)
    t.add_argument("--preset", choices=("paper", "tiny"))
    t.add_argument("--seed", type=int)
    t.add_argument("--split-seed", type=int, help="defaults to --seed")
    t.add_argument("--fractions", type=_fractions, default=(0.7, 0.15, 0.15))
    t.add_argument("--out", required=True)
    t.add_argument("--history", help="history CSV path (default: <out>.history.csv)")
    t.add_argument("--timings", action="store_true", help="record wall time in the history CSV")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--patience", type=int)
    t.add_argument("--clip-norm", type=float)
    t.add_argument("--max-depth", type=int)
    t.add_argument("--min-samples-leaf", type=int)
    t.add_argument("--n-trees", type=int)
    t.add_argument("--feature-fraction", type=float)
    t.add_argument("--n-rounds", type=int)
    t.add_argument("--eta", type=float)
    t.add_argument("--lam", type=float)
    t.add_argument("--gamma", type=float)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a data split")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    e.add_argument("--csv", help="also write the metrics row as CSV")
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", help="predict memory for a CSV without targets")
    pr.add_argument("--ckpt", required=True)
    pr.add_argument("--input", required=True)
    pr.add_argument("--out")
    pr.set_defaults(func=cmd_predict)

    b = sub.add_parser("benchmark", help="compare all models on one split")
    b.add_argument("--data", help="task CSV (default: 452 synthetic rows from --seed)")
    b.add_argument("--seed", type=int)
    b.add_argument("--preset", choices=("paper", "tiny"), default="tiny")
    b.add_argument("--epochs", type=int, default=200)
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_benchmark)

    c = sub.add_parser("gradcheck", help="finite-difference check of every differentiable unit")
    c.add_argument("--preset", choices=("tiny",), default="tiny")
    c.add_argument("--seed", type=int)
    c.add_argument("--n-seeds", type=int, default=3)
    c.add_argument("--inject-fault", action="append", choices=sorted(numerics.FAULT_SITES),
                   help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (ConfigError, ValueError) as exc:
        if isinstance(exc, (SchemaMismatch, SchemaError, checkpoint.CheckpointError)):
            print(f"error: schema mismatch: {exc}", file=sys.stderr)
            return EXIT_SCHEMA
        if isinstance(exc, DataError):
            print(f"error: invalid data: {exc}", file=sys.stderr)
            return EXIT_DATA
        if isinstance(exc, ConfigError):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
