"""Command-line interface: simulate, infer, select, report.

Experiment definitions live in JSON configs; scalar flags (``--alpha``,
``--seed``, ``--reps``, ``--out``, ``--threads``) override config fields.
Standard output carries a one-line summary; all data goes to files whose
bytes are fully determined by the inputs and the seed.  Exit codes: 0
success, 1 user or config error, 2 statistical or runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import bench
from .datamodel import InferenceData, SyntheticConfig, load_csv, split_nulls
from .errors import ConfigError, RuntimeFailure, ScqError, UsageError
from .modelselect import DEFAULT_LAMBDA_GRID, CoinStream, Toolbox, ptams, ptams_plus
from .pipeline import WeightConfig, run_scq
from .scoring import ClassifierSpec
from .weights import dump_weight_diagnostics, estimate_sparsity, matrix_for_side


def _load_config(path) -> dict:
    if path is None:
        raise ConfigError("--config is required for this command")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc


def _check_alpha(alpha: float) -> float:
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    return float(alpha)


def _out_dir(args, cfg: dict) -> Path:
    out = args.out or cfg.get("out") or "scq-out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _seed_of(args, cfg: dict) -> int:
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    return int(seed)


def _split_csv_data(data_path, cfg: dict, seed: int, train_frac: float) -> InferenceData:
    pool, test = load_csv(data_path)
    if test.m == 0:
        raise ConfigError("no test rows in the data file")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    split = split_nulls(pool, test.m, rng, train_frac)
    return InferenceData(split=split, test=test, labeled_outliers=pool.outliers)


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    if "synthetic" not in cfg:
        raise ConfigError("simulate config requires a 'synthetic' section")
    syn = SyntheticConfig.from_dict(cfg["synthetic"])
    methods = [bench.MethodSpec.from_dict(d) for d in cfg.get("methods", [])]
    if not methods:
        raise ConfigError("simulate config requires a nonempty 'methods' list")
    alpha = _check_alpha(args.alpha if args.alpha is not None else cfg.get("alpha", 0.05))
    reps = int(args.reps if args.reps is not None else cfg.get("reps", 100))
    if reps < 1:
        raise ConfigError(f"reps must be positive, got {reps}")
    seed = _seed_of(args, cfg)
    threads = args.threads if args.threads is not None else int(cfg.get("threads", 0))
    if threads <= 0:
        threads = os.cpu_count() or 1
    train_frac = float(cfg.get("train_frac", 0.5))
    out = _out_dir(args, cfg)

    rows = bench.compare(
        methods, syn, reps, seed, alpha=alpha, train_frac=train_frac, threads=threads
    )
    param_value = cfg.get("param_value")
    bench.rows_to_csv(rows, out / "metrics.csv")
    bench.rows_to_json(rows, out / "metrics.json", param_value=param_value)
    print(f"simulate: {len(rows)} methods x {reps} reps -> {out}")
    return 0


def _weight_config(cfg: dict) -> WeightConfig:
    return WeightConfig(
        mode=cfg.get("weight_mode", "structure"),
        lam=float(cfg.get("lambda", 0.1)),
        bandwidth=cfg.get("bandwidth"),
    )


def cmd_infer(args) -> int:
    cfg = _load_config(args.config)
    if "classifier" not in cfg:
        raise ConfigError("infer config requires a 'classifier' section")
    classifier = ClassifierSpec.from_dict(cfg["classifier"])
    alpha = _check_alpha(args.alpha if args.alpha is not None else cfg.get("alpha", 0.05))
    seed = _seed_of(args, cfg)
    data = _split_csv_data(args.data, cfg, seed, float(cfg.get("train_frac", 0.5)))
    jitter = bool(cfg.get("jitter", False))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1])) if jitter else None
    wcfg = _weight_config(cfg)
    result = run_scq(data, classifier, wcfg, alpha, jitter=jitter, rng=rng)
    out = _out_dir(args, cfg)
    _write_json(out / "report.json", result.report_dict())
    _dump_weights(out, data, result, wcfg)
    print(f"infer: rejected {len(result.rejection)} of {data.m} test units")
    return 0


def _dump_weights(out, data, result, wcfg: WeightConfig) -> None:
    # per-unit diagnostics only exist for learned weights
    if wcfg.mode != "structure":
        return
    omega = matrix_for_side(data.test.side, wcfg.bandwidth)
    est = estimate_sparsity(omega, result.scores.p, result.scores.p_tilde, wcfg.lam)
    dump_weight_diagnostics(out / "weights.csv", data.test.side, est, result.weights)


def cmd_select(args) -> int:
    cfg = _load_config(args.config)
    if "toolbox" not in cfg:
        raise ConfigError("select config requires a 'toolbox' list")
    toolbox = Toolbox.from_list(cfg["toolbox"])
    alpha = _check_alpha(args.alpha if args.alpha is not None else cfg.get("alpha", 0.05))
    seed = _seed_of(args, cfg)
    data = _split_csv_data(args.data, cfg, seed, float(cfg.get("train_frac", 0.5)))
    coin_seed = int(
        np.random.SeedSequence([seed, 2]).generate_state(1, dtype=np.uint64)[0]
    )
    coins = CoinStream(seed=coin_seed)
    alpha0 = cfg.get("alpha0")
    wcfg = _weight_config(cfg)
    if args.plus:
        grid = cfg.get("lambda_grid", list(DEFAULT_LAMBDA_GRID))
        trace, _, result = ptams_plus(
            toolbox, data, alpha, coins, lambda_grid=grid, alpha0=alpha0, weight_cfg=wcfg
        )
    else:
        trace, result = ptams(
            toolbox, data, alpha, coins, alpha0=alpha0, weight_cfg=wcfg
        )
    out = _out_dir(args, cfg)
    _write_json(out / "trace.json", trace.to_dict())
    _write_json(out / "report.json", result.report_dict())
    select_lam = trace.lambda_star if trace.lambda_star is not None else wcfg.lam
    _dump_weights(
        out,
        data,
        result,
        WeightConfig(mode=wcfg.mode, lam=select_lam, bandwidth=wcfg.bandwidth),
    )
    chosen = toolbox.names[trace.selected - 1]
    print(
        f"select: chose {chosen} (candidate {trace.selected}), "
        f"rejected {len(result.rejection)} of {data.m} test units"
    )
    return 0


def cmd_report(args) -> int:
    src = Path(args.artifacts)
    if not src.is_dir():
        raise ConfigError(f"artifacts directory not found: {src}")
    merged = []
    summaries = {}
    for path in sorted(src.glob("**/*.json")):
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"corrupt artifact {path}: {exc}") from exc
        if not isinstance(doc, dict) or "rows" not in doc:
            continue
        param_value = doc.get("param_value")
        for row in doc["rows"]:
            merged.append(
                [row["method"], param_value, "fdr", row["fdr"], row["fdr_se"]]
            )
            merged.append([row["method"], param_value, "ap", row["ap"], row["ap_se"]])
            merged.append([row["method"], param_value, "etp", row["etp"], row["etp_se"]])
            summaries.setdefault(row["method"], []).append((param_value, row))
    if not merged:
        raise ConfigError(f"no metrics artifacts found under {src}")
    out = Path(args.out) if args.out else src
    out.mkdir(parents=True, exist_ok=True)
    bench.write_long_csv(merged, out / "long.csv")
    lines = []
    for method in sorted(summaries):
        lines.append(f"method: {method}")
        for param_value, row in summaries[method]:
            tag = "" if param_value is None else f" @ param={param_value}"
            lines.append(
                f"  fdr={row['fdr']:.4f} (se {row['fdr_se']:.4f})"
                f"  ap={row['ap']:.4f} (se {row['ap_se']:.4f})"
                f"  etp={row['etp']:.2f} (se {row['etp_se']:.2f})"
                f"  reps={row['reps']}{tag}"
            )
    with open(out / "summary.txt", "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"report: merged {len(merged)} rows from {src} -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scq",
        description="Structure-adaptive conformal inference for OOD testing",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(sp, with_reps=False):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="master seed")
        sp.add_argument("--alpha", type=float, default=None, help="target FDR level")
        sp.add_argument("--threads", type=int, default=None, help="worker cap")
        if with_reps:
            sp.add_argument("--reps", type=int, default=None, help="replication count")

    sp = sub.add_parser("simulate", help="run seeded synthetic replications")
    add_common(sp, with_reps=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("infer", help="calibrated inference on a CSV dataset")
    sp.add_argument("data", help="CSV data file")
    add_common(sp)
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("select", help="model selection plus inference on a CSV dataset")
    sp.add_argument("data", help="CSV data file")
    sp.add_argument("--plus", action="store_true", help="also select the screening threshold")
    add_common(sp)
    sp.set_defaults(func=cmd_select)

    sp = sub.add_parser("report", help="merge simulation artifacts into one report")
    sp.add_argument("artifacts", help="directory holding metrics JSON files")
    sp.add_argument("--out", help="output directory (defaults to the artifacts dir)")
    sp.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RuntimeFailure as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 2
    except ScqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
