"""Command-line entry point: ``run``, ``compare`` and ``reliability`` subcommands."""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence


from .config import KEYS, ConfigError, SimConfig, load_config, parse_value
from .engine import run_seeds
from .metrics import MetricsReport, fmt, to_csv
from .reliability import (
    CtmcParams,
    SingularChainError,
    lifetime_decomposition,
    monte_carlo_lifetime,
    repair_traffic,
)
from .replication import STRATEGIES
from .workload import RngStreams

OUT_ENV = "P2PVOD_OUT_DIR"
AVAILABILITY = "availability"  # pseudo sweep key: rescales mean_dn_s

COMPARISON_HEADER = [
    "strategy", "sweep_var", "sweep_value", "success_playback_prob",
    "bandwidth_first_quarter", "bandwidth_last_quarter", "buffer_first_quarter", "buffer_last_quarter",
    "total_replicas", "least_popular_replicas", "rejected", "failed", "completed", "seeds",
]
RELIABILITY_HEADER = ["n", "gamma", "mttf_exact", "n_e", "t_e", "phi", "mttf_montecarlo", "ci"]


class CliError(Exception):
    pass


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("config overrides (take precedence over the file)")
    for key in KEYS:
        flags = [f"--{key}"]
        if "_" in key:
            flags.append(f"--{key.replace('_', '-')}")
        group.add_argument(*flags, dest=f"cfg_{key}", metavar="VALUE", default=None)


def _overrides(args: argparse.Namespace) -> Dict[str, str]:
    out = {}
    env = os.environ.get(OUT_ENV)
    if env:
        out["out_dir"] = env
    for key in KEYS:
        v = getattr(args, f"cfg_{key}", None)
        if v is not None:
            out[key] = v
    return out


def _config(args: argparse.Namespace) -> SimConfig:
    return load_config(args.config, _overrides(args))


def _write(report: MetricsReport, out_dir: Path) -> None:
    try:
        to_csv(report, out_dir)
    except OSError as exc:
        raise CliError(f"unwritable out_dir: {exc}") from None


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _config(args)
    report = run_seeds(cfg, args.jobs)
    _write(report, Path(cfg.out_dir))
    print(f"wrote {len(cfg.seeds)}-seed report to {cfg.out_dir}")
    return 0


def _parse_sweep(text: Optional[str]) -> tuple[Optional[str], List[str]]:
    if not text:
        return None, []
    if "=" not in text:
        raise CliError(f"--sweep expects key=v1,v2,..., got {text!r}")
    key, raw = (s.strip() for s in text.split("=", 1))
    values = [v.strip() for v in raw.split(",") if v.strip()]
    if not values:
        raise CliError("--sweep needs at least one value")
    if key != AVAILABILITY:
        if key not in KEYS or key in ("seeds", "out_dir", "strategy"):
            raise ConfigError(f"unknown sweep key {key!r}")
        for v in values:
            parse_value(key, v)
    return key, values


def _sweep_point(cfg: SimConfig, key: Optional[str], value: Optional[str]) -> SimConfig:
    if key is None:
        return cfg
    if key == AVAILABILITY:
        try:
            return cfg.with_availability(float(value))
        except ValueError as exc:
            raise ConfigError(f"invalid value for {AVAILABILITY}: {value!r} ({exc})") from None
    return cfg.replace(**{key: parse_value(key, value)})


def comparison_row(strategy: str, key: Optional[str], value: Optional[str], report: MetricsReport) -> List[str]:
    bw0, bw1, bf0, bf1 = report.quarter_means() if len(report.bandwidth_util) >= 4 else (None,) * 4
    reps = report.replicas_per_movie
    c = report.counts
    return [
        strategy, key or "", value or "", fmt(report.success_playback_prob),
        fmt(bw0), fmt(bw1), fmt(bf0), fmt(bf1),
        fmt(float(sum(reps))), fmt(reps[-1] if reps else None),
        str(c["rejected"]), str(c["failed"]), str(c["completed"]),
        ";".join(str(s) for s in report.seeds),
    ]


def cmd_compare(args: argparse.Namespace) -> int:
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    if len(strategies) < 2:
        raise CliError("compare needs at least two strategies")
    for s in strategies:
        if s not in STRATEGIES:
            raise ConfigError(f"unknown strategy {s!r}; valid strategies: {', '.join(STRATEGIES)}")
    base = _config(args)
    key, values = _parse_sweep(args.sweep)
    points = values or [None]
    out = Path(base.out_dir)
    rows = [COMPARISON_HEADER]
    for value in points:
        for strategy in strategies:
            cfg = _sweep_point(base.replace(strategy=strategy), key, value)
            report = run_seeds(cfg, args.jobs)
            sub = out / strategy if value is None else out / strategy / f"{key}={value}"
            _write(report, sub)
            rows.append(comparison_row(strategy, key, value, report))
    try:
        with open(out / "comparison.csv", "w", newline="") as f:
            csv.writer(f, lineterminator="\n").writerows(rows)
    except OSError as exc:
        raise CliError(f"unwritable out_dir: {exc}") from None
    print(f"wrote {len(rows) - 1} comparison rows to {out / 'comparison.csv'}")
    return 0


def parse_int_range(text: str) -> List[int]:
    """``"1-10"`` or ``"1,2,5"`` (or a mix) to a sorted list of distinct ints."""
    out = set()
    try:
        for part in text.split(","):
            part = part.strip()
            if not part:
                continue
            if "-" in part:
                lo, hi = (int(x) for x in part.split("-", 1))
                if hi < lo:
                    raise CliError(f"invalid range {part!r}")
                out.update(range(lo, hi + 1))
            else:
                out.add(int(part))
    except ValueError:
        raise CliError(f"invalid integer range {text!r}") from None
    if not out:
        raise CliError("empty range")
    return sorted(out)


def parse_float_list(text: str) -> List[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise CliError(f"invalid number list {text!r}") from None
    if not vals:
        raise CliError("empty list")
    return vals


def reliability_rows(ns: Sequence[int], gammas: Sequence[float], fail_rate: float, trials: int,
                     seed: int, replica_bytes: float) -> List[List[str]]:
    if any(n < 1 for n in ns):
        raise CliError("replica counts must be >= 1")
    if any(g < 0 for g in gammas):
        raise CliError("gamma values must be >= 0")
    if not fail_rate > 0:
        raise CliError("fail rate must be > 0")
    streams = RngStreams(seed)
    rows = [RELIABILITY_HEADER]
    for g in gammas:
        for n in ns:
            p = CtmcParams.from_gamma(n, fail_rate, g)
            try:
                d = lifetime_decomposition(p)
            except SingularChainError as exc:
                raise CliError(f"chain n={n}, gamma={g} is singular: {exc}") from None
            mc_mean = mc_hw = None
            if trials > 0:
                est = monte_carlo_lifetime(p, trials, streams.get(f"ctmc/{n}/{g!r}"))
                mc_mean, mc_hw = est.mean, est.half_width
            rows.append([str(n), fmt(float(g)), fmt(d.t_s), fmt(d.n_e), fmt(d.t_e),
                         fmt(repair_traffic(n, replica_bytes, p)), fmt(mc_mean), fmt(mc_hw)])
    return rows


def cmd_reliability(args: argparse.Namespace) -> int:
    rows = reliability_rows(parse_int_range(args.n), parse_float_list(args.gamma), args.fail_rate,
                            args.trials, args.seed, args.replica_bytes)
    if args.out == "-":
        csv.writer(sys.stdout, lineterminator="\n").writerows(rows)
        return 0
    path = Path(args.out)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            csv.writer(f, lineterminator="\n").writerows(rows)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}") from None
    print(f"wrote {len(rows) - 1} rows to {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="p2pvod", description="Proxy-assisted P2P VoD replication simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate one configuration over its seeds")
    p_run.add_argument("config", nargs="?", help="key = value config file")
    p_run.add_argument("--jobs", type=int, default=1, help="worker processes for seeds")
    _add_config_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="run several strategies on identical seeds")
    p_cmp.add_argument("config", nargs="?", help="key = value config file")
    p_cmp.add_argument("--strategies", default=",".join(STRATEGIES),
                       help="comma-separated strategy names (default: all)")
    p_cmp.add_argument("--sweep", help=f"key=v1,v2,... ; key may be any config key or '{AVAILABILITY}'")
    p_cmp.add_argument("--jobs", type=int, default=1, help="worker processes for seeds")
    _add_config_flags(p_cmp)
    p_cmp.set_defaults(func=cmd_compare)

    p_rel = sub.add_parser("reliability", help="tabulate replica lifetimes of the birth-death chain")
    p_rel.add_argument("--n", default="1-10", help="replica counts, e.g. 1-10 or 1,2,5")
    p_rel.add_argument("--gamma", default="0.1,1,10", help="repair/failure rate ratios")
    p_rel.add_argument("--fail-rate", type=float, default=1 / 3600.0, help="per-replica failure rate (1/s)")
    p_rel.add_argument("--trials", type=int, default=10_000, help="Monte Carlo trials per cell (0 skips)")
    p_rel.add_argument("--seed", type=int, default=1)
    p_rel.add_argument("--replica-bytes", type=float, default=1e9)
    p_rel.add_argument("--out", default="reliability.csv", help="output CSV path, '-' for stdout")
    p_rel.set_defaults(func=cmd_reliability)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"p2pvod: error: {exc}", file=sys.stderr)
        return 2
    except CliError as exc:
        print(f"p2pvod: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
