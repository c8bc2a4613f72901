"""Command-line entry point: ``locksim {run,compare,calibrate,theory-check,schedule-T}``."""

from __future__ import annotations

import argparse
import csv
import json
import math
import shutil
import sys
from pathlib import Path

import numpy as np

from . import dp, server, theory
from .config import ConfigError, dump_config, load_config

SCHEMA_VERSION = 1
METRICS_COLUMNS = ("t", "eta_t", "grad_norm_sq", "loss", "batch_size", "epsilon", "schema_version")


class UsageError(Exception):
    """Bad invocation; reported on stderr with exit status 2."""


def parse_seeds(text: str | None) -> list[int] | None:
    if not text:
        return None
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part[1:]:
            lo, hi = part.split("-", 1) if not part.startswith("-") else (part, part)
            seeds.extend(range(int(lo), int(hi) + 1))
        elif part:
            seeds.append(int(part))
    return seeds


def _finite(x):
    return x if isinstance(x, (int, str)) or x is None or math.isfinite(x) else None


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (float, np.floating)):
        return _finite(float(obj))
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _prepare_dir(path: Path, force: bool):
    if path.exists() and any(path.iterdir()):
        if not force:
            raise UsageError(f"output directory {path} exists; pass --force to overwrite")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)


def _load(args) -> server.RunConfig:
    overrides = list(args.set or [])
    if getattr(args, "mode", None):
        overrides.append(f"estimator_mode={args.mode}")
    try:
        return load_config(args.config, overrides)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None
    except ConfigError as exc:
        raise UsageError(str(exc)) from None


def write_run(result: server.RunResult, out: Path):
    with open(out / "trace.jsonl", "w") as fh:
        for tr in result.traces:
            fh.write(json.dumps(_jsonable(tr.to_dict()), sort_keys=True) + "\n")
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for tr in result.traces:
            row = tr.metrics_row()
            writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c]
                             for c in METRICS_COLUMNS[:-1]] + [SCHEMA_VERSION])
    ledger = result.ledger.to_dict(result.config.delta)
    ledger.update(schema_version=SCHEMA_VERSION, nonprivate=result.config.nonprivate,
                  per_round_epsilon=[tr.epsilon for tr in result.traces])
    (out / "ledger.json").write_text(json.dumps(_jsonable(ledger), indent=2) + "\n")
    (out / "config.resolved").write_text(dump_config(result.config))


def cmd_run(args) -> int:
    config = _load(args)
    out = Path(args.out)
    seeds = parse_seeds(args.seeds) or [config.seed]
    _prepare_dir(out, args.force)
    problem = server.build_problem(config)
    for s in seeds:
        cfg = config.replace(seed=s)
        target = out if len(seeds) == 1 else out / f"seed-{s}"
        target.mkdir(parents=True, exist_ok=True)
        try:
            res = server.run(cfg, problem)
        except server.DivergenceError as exc:
            res = server.RunResult(np.full(problem.dim, np.nan), exc.traces, dp.PrivacyLedger(), cfg)
            write_run(res, target)
            print(f"seed {s}: diverged in round {exc.round}", file=sys.stderr)
            return 1
        write_run(res, target)
        min_gn = min(math.sqrt(tr.grad_norm_sq) for tr in res.traces)
        eps = res.epsilon
        eps_text = "inf (nonprivate)" if not math.isfinite(eps) else f"{eps:.6g}"
        print(f"seed {s}: final loss {res.final_loss:.6g}, final epsilon {eps_text} "
              f"(delta={cfg.delta:g}), min gradient norm {min_gn:.6g}")
    return 0


def cmd_compare(args) -> int:
    config = _load(args)
    seeds = parse_seeds(args.seeds)
    if not seeds or len(seeds) < 3:
        raise UsageError("compare needs at least 3 seeds (--seeds)")
    out = Path(args.out)
    _prepare_dir(out, args.force)
    cmp = server.compare_uniform_vs_locks(config, seeds)
    with open(out / "compare.csv", "w", newline="") as fh:
        cols = ["arm", "seed", "t", "loss", "grad_norm_sq", "batch_size", "epsilon"]
        writer = csv.DictWriter(fh, cols, lineterminator="\n")
        writer.writeheader()
        writer.writerows(cmp.per_round)
    with open(out / "compare_summary.csv", "w", newline="") as fh:
        cols = ["arm", "t", "loss_mean", "loss_se", "grad_norm_sq_mean", "grad_norm_sq_se"]
        writer = csv.DictWriter(fh, cols, lineterminator="\n")
        writer.writeheader()
        writer.writerows(cmp.summary_rows)
    summary = {
        "schema_version": SCHEMA_VERSION, "seeds": cmp.seeds, "T": cmp.T,
        "final_loss": cmp.final_loss, "median_final_loss": cmp.medians,
        "locks_better": cmp.n_locks_better, "uniform_better": cmp.n_uniform_better,
        "p_two_sided": cmp.p_two_sided, "p_locks_better": cmp.p_locks_better,
        "indistinguishable": cmp.indistinguishable,
    }
    (out / "compare.json").write_text(json.dumps(_jsonable(summary), indent=2) + "\n")
    (out / "config.resolved").write_text(dump_config(config))
    print(cmp.report())
    return 0


def cmd_calibrate(args) -> int:
    config = _load(args) if args.config else None
    delta = args.delta if args.delta is not None else (config.delta if config else 1e-5)
    rounds = args.rounds if args.rounds is not None else (config.T if config else None)
    rate = args.rate if args.rate is not None else (config.sampling.rate if config else None)
    if rounds is None or rate is None:
        raise UsageError("calibrate needs --rounds and --rate, or a --config providing them")
    try:
        z = dp.calibrate_noise_multiplier(args.epsilon, delta, rounds, rate, cap=args.cap)
    except dp.CalibrationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"noise multiplier: {z:.4f}  (epsilon={args.epsilon:g}, delta={delta:g}, "
          f"rounds={rounds}, sampling rate={rate:g})")
    if z > 0:
        costs = dp.subsampled_gaussian_costs(rate, z)
        ledger = dp.compose(dp.PrivacyLedger(), costs, rounds)
        conv = dp.rdp_to_dp(ledger, delta)
        print(f"{'alpha':>8} {'rdp/round':>14} {'rdp total':>14} {'epsilon':>12}")
        for a, c, tot in zip(ledger.orders, costs, ledger.costs):
            e = dp.rdp_to_dp(dp.PrivacyLedger((a,), (tot,)), delta).epsilon
            mark = "  <- best" if a == conv.alpha else ""
            print(f"{a:>8g} {c:>14.6g} {tot:>14.6g} {e:>12.6g}{mark}")
    return 0


def run_theory_check(config: server.RunConfig, seeds, *, mc_draws: int = 200):
    if config.probability_mode != "fixed":
        raise UsageError("theory-check needs probability_mode = fixed (p = 1/v0)")
    problem = server.build_problem(config)
    w_star, f_star = problem.minimize()
    grid = theory.default_w_grid(problem, w_star)
    consts = theory.estimate_constants(problem, grid, clip=config.clip, K_max=config.K_max,
                                       K_min=config.K_min, local_epochs=config.local_epochs,
                                       mc_draws=mc_draws)
    inputs = consts.bound_inputs(sigma_0=config.sigma_0, eta_b=config.eta_b, b=config.sampling.b,
                                 V_0=config.v0, T=config.T, d=problem.dim, K_max=config.K_max,
                                 K_min=config.K_min, Delta_F=problem.loss(np.zeros(problem.dim)) - f_star)
    traces = [server.run(config.replace(seed=s), problem).traces for s in seeds]
    return theory.check_convergence_bound(traces, inputs, config.n_clients)


def cmd_theory_check(args) -> int:
    config = _load(args)
    seeds = parse_seeds(args.seeds) or list(range(10))
    report = run_theory_check(config, seeds)
    if args.out:
        out = Path(args.out)
        _prepare_dir(out, args.force)
        (out / "report.json").write_text(report.to_json() + "\n")
        (out / "report.txt").write_text(report.text() + "\n")
        (out / "config.resolved").write_text(dump_config(config))
    print(report.text())
    return 0 if report.holds else 1


def cmd_schedule_t(args) -> int:
    print(server.schedule_T_for_dimension(args.dim))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="locksim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True, needs_out=True):
        p.add_argument("--config", required=needs_config,
                       help="config file path or bundled config name")
        p.add_argument("--out", required=needs_out, help="output directory")
        p.add_argument("--seeds", help="comma list and/or ranges, e.g. 0-9 or 1,4,7")
        p.add_argument("--force", action="store_true", help="overwrite an existing output directory")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--mode", choices=("scaled", "unscaled", "literal"), help="estimator mode")

    p = sub.add_parser("run", help="run one or more seeds and write traces")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="paired uniform vs norm-based sampling runs")
    common(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("calibrate", help="noise multiplier for a target epsilon")
    common(p, needs_config=False, needs_out=False)
    p.add_argument("--epsilon", type=float, required=True, help="target epsilon (inf allowed)")
    p.add_argument("--delta", type=float)
    p.add_argument("--rounds", type=int)
    p.add_argument("--rate", type=float, help="pre-sampling rate m/n")
    p.add_argument("--cap", type=float, default=dp.DEFAULT_MULTIPLIER_CAP)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("theory-check", help="compare runs against the convergence bound")
    common(p, needs_out=False)
    p.set_defaults(func=cmd_theory_check)

    p = sub.add_parser("schedule-T", help="rounds T with T >= d^2 (ln T)^2")
    p.add_argument("--dim", type=int, required=True)
    p.set_defaults(func=cmd_schedule_t)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
