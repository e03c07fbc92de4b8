"""Experiment outputs: the per-run report, merging across runs, and CSV export."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .reliability import CtmcParams, mean_time_to_failure

NO_DATA = "no data"

COUNT_FIELDS = (
    "requests", "admitted", "rejected", "immediate", "chained", "completed", "failed",
    "active_at_end", "failovers", "handoffs", "repairs", "repairs_failed", "absorptions",
    "copies_placed", "copies_leftover", "offloads",
)

CSV_FILES = ("replicas.csv", "playback.csv", "lifetime.csv", "utilization.csv", "summary.csv")


class MergeError(ValueError):
    pass


@dataclass
class MetricsReport:
    config: Dict[str, str]
    config_hash: str
    seeds: List[int]
    runs: int = 1
    replicas_per_movie: List[float] = field(default_factory=list)
    success_playback_prob: Optional[float] = None
    prob_runs: int = 0  # runs that had at least one terminal session
    counts: Dict[str, int] = field(default_factory=dict)
    window_starts: List[float] = field(default_factory=list)
    bandwidth_util: List[float] = field(default_factory=list)
    buffer_util: List[float] = field(default_factory=list)
    # replica lineages that ended, keyed by live copies at birth: n -> (sum of lifetimes, count)
    lifetime_by_n: Dict[int, Tuple[float, int]] = field(default_factory=dict)
    lifetime_by_movie: List[Tuple[float, int]] = field(default_factory=list)
    request_counts: List[int] = field(default_factory=list)
    sweep_var: str = "arrival_per_hour"

    def __post_init__(self):
        for k in COUNT_FIELDS:
            self.counts.setdefault(k, 0)
        p = self.success_playback_prob
        if p is not None and not 0.0 <= p <= 1.0:
            raise ValueError(f"success probability out of range: {p}")
        for u in self.bandwidth_util + self.buffer_util:
            if not 0.0 <= u <= 1.0:
                raise ValueError(f"utilization fraction out of range: {u}")

    @property
    def sweep_value(self) -> str:
        return self.config.get(self.sweep_var, "")

    @classmethod
    def empty(cls, config: Dict[str, str], config_hash: str) -> "MetricsReport":
        return cls(config=dict(config), config_hash=config_hash, seeds=[], runs=0)

    def mean_replica_lifetime(self) -> List[Optional[float]]:
        return [s / c if c else None for s, c in self.lifetime_by_movie]

    def quarter_means(self) -> Tuple[float, float, float, float]:
        """Mean (bandwidth, buffer) utilization over the first and last quarter of windows:
        ``(bw_first, bw_last, buf_first, buf_last)``."""
        n = len(self.bandwidth_util)
        if n < 4:
            raise ValueError("need at least four utilization windows")
        k = n // 4

        def avg(xs):
            return sum(xs) / len(xs)

        return (avg(self.bandwidth_util[:k]), avg(self.bandwidth_util[-k:]),
                avg(self.buffer_util[:k]), avg(self.buffer_util[-k:]))


def _wmean(pairs: Sequence[Tuple[float, int]]) -> float:
    w = sum(n for _, n in pairs)
    return sum(x * n for x, n in pairs) / w


def _wseries(reports: Sequence[MetricsReport], attr: str) -> List[float]:
    lengths = {len(getattr(r, attr)) for r in reports}
    if len(lengths) != 1:
        raise MergeError(f"reports disagree on the length of {attr}")
    cols = zip(*(getattr(r, attr) for r in reports))
    return [_wmean([(x, r.runs) for x, r in zip(col, reports)]) for col in cols]


def _sum_pairs(a: Tuple[float, int], b: Tuple[float, int]) -> Tuple[float, int]:
    return (a[0] + b[0], a[1] + b[1])


def merge(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Average reports that share a configuration (seeds may differ).

    Scalars and series are run-weighted means, so merging is associative;
    counts and lifetime tallies are summed.
    """
    if not reports:
        raise MergeError("nothing to merge")
    if len(reports) == 1:
        return reports[0]
    first = reports[0]
    if any(r.config_hash != first.config_hash for r in reports):
        raise MergeError("cannot merge reports produced by different configurations")

    probs = [(r.success_playback_prob, r.prob_runs) for r in reports if r.prob_runs]
    by_n: Dict[int, Tuple[float, int]] = {}
    for r in reports:
        for n, v in r.lifetime_by_n.items():
            by_n[n] = _sum_pairs(by_n.get(n, (0.0, 0)), v)
    movie_life = [(0.0, 0)] * len(first.lifetime_by_movie)
    for r in reports:
        movie_life = [_sum_pairs(a, b) for a, b in zip(movie_life, r.lifetime_by_movie)]
    seeds: List[int] = []
    for r in reports:
        seeds.extend(r.seeds)
    config = dict(first.config)
    config["seeds"] = ",".join(str(s) for s in seeds)

    return MetricsReport(
        config=config,
        config_hash=first.config_hash,
        seeds=seeds,
        runs=sum(r.runs for r in reports),
        replicas_per_movie=_wseries(reports, "replicas_per_movie"),
        success_playback_prob=_wmean(probs) if probs else None,
        prob_runs=sum(n for _, n in probs),
        counts={k: sum(r.counts[k] for r in reports) for k in COUNT_FIELDS},
        window_starts=list(first.window_starts),
        bandwidth_util=_wseries(reports, "bandwidth_util"),
        buffer_util=_wseries(reports, "buffer_util"),
        lifetime_by_n=dict(sorted(by_n.items())),
        lifetime_by_movie=movie_life,
        request_counts=[sum(c) for c in zip(*(r.request_counts for r in reports))],
        sweep_var=first.sweep_var,
    )


def fmt(x) -> str:
    if x is None:
        return NO_DATA
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float) and not math.isfinite(x):
        return NO_DATA
    return f"{x:.6f}"


def parse_cell(s: str):
    """Inverse of :func:`fmt` for numeric cells."""
    if s == NO_DATA:
        return None
    try:
        return int(s)
    except ValueError:
        return float(s)


def _analytic_mttf(config: Dict[str, str], n: int) -> Optional[float]:
    try:
        up = float(config["mean_up_s"])
        gamma = float(config["repair_gamma"])
    except (KeyError, ValueError):
        return None
    if up <= 0:
        return None
    lam = 1.0 / up
    return mean_time_to_failure(CtmcParams(n, lam, gamma * lam))


def csv_tables(report: MetricsReport) -> Dict[str, List[List[str]]]:
    """Rows (header first) of every CSV file, already formatted."""
    tables: Dict[str, List[List[str]]] = {}
    tables["replicas.csv"] = [["movie_rank", "count"]] + [
        [str(i + 1), fmt(float(c))] for i, c in enumerate(report.replicas_per_movie)
    ]
    playback = [["sweep_var", "prob"]]
    if report.runs:
        playback.append([report.sweep_value, fmt(report.success_playback_prob)])
    tables["playback.csv"] = playback
    gamma = report.config.get("repair_gamma", "")
    lifetime = [["n", "gamma", "mttf_analytic", "mttf_empirical"]]
    for n, (s, c) in sorted(report.lifetime_by_n.items()):
        lifetime.append([str(n), gamma, fmt(_analytic_mttf(report.config, n)), fmt(s / c if c else None)])
    tables["lifetime.csv"] = lifetime
    tables["utilization.csv"] = [["window_start_s", "bandwidth_frac", "buffer_frac"]] + [
        [fmt(float(t)), fmt(b), fmt(f)]
        for t, b, f in zip(report.window_starts, report.bandwidth_util, report.buffer_util)
    ]
    summary = [["key", "value"]]
    summary.append(["runs", str(report.runs)])
    summary.append(["seeds", ";".join(str(s) for s in report.seeds)])
    summary.append(["config_hash", report.config_hash])
    summary.append(["success_playback_prob", fmt(report.success_playback_prob)])
    for k in COUNT_FIELDS:
        summary.append([k, str(report.counts[k])])
    for i, life in enumerate(report.mean_replica_lifetime()):
        summary.append([f"mean_replica_lifetime_s.movie_{i + 1}", fmt(life)])
    for i, c in enumerate(report.request_counts):
        summary.append([f"proxy_request_count.movie_{i + 1}", str(c)])
    for k, v in report.config.items():
        summary.append([f"config.{k}", v])
    tables["summary.csv"] = summary
    if report.runs == 0:
        return {name: rows[:1] for name, rows in tables.items()}
    return tables


def _render(rows: List[List[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerows(rows)
    return buf.getvalue()


GNUPLOT = """\
set datafile separator ','
set key autotitle columnhead
set terminal pngcairo size 800,500
set output 'replicas.png'
set xlabel 'movie rank'; set ylabel 'replicas'
plot 'replicas.csv' using 1:2 with linespoints
set output 'utilization.png'
set xlabel 'time (s)'; set ylabel 'fraction of capacity'
plot 'utilization.csv' using 1:2 with lines, '' using 1:3 with lines
set output 'lifetime.png'
set xlabel 'replicas'; set ylabel 'mean lifetime (s)'
plot 'lifetime.csv' using 1:3 with linespoints, '' using 1:4 with points
"""


def to_csv(report: MetricsReport, out_dir: str | Path, plot_script: bool = True) -> List[Path]:
    """Write the five CSV files (and a gnuplot script) into ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for name, rows in csv_tables(report).items():
            path = out / name
            with open(path, "w", newline="") as f:
                f.write(_render(rows))
            written.append(path)
        if plot_script:
            (out / "plots.gp").write_text(GNUPLOT)
    except OSError as exc:
        raise OSError(f"cannot write report to {out}: {exc}") from exc
    return written


def read_csv(path: str | Path) -> List[Dict[str, str]]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))
