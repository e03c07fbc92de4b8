"""Popularity, request arrivals and churn sampling from named, seeded RNG streams."""

from __future__ import annotations

import heapq
import math
import zlib
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .cluster import Movie


@dataclass(frozen=True)
class WorkloadConfig:
    num_movies: int = 20
    zipf_skew: float = 0.271
    aggregate_rate: float = 300 / 3600  # requests per second
    sim_duration_s: float = 4 * 3600
    seed: int = 1

    def __post_init__(self):
        if self.num_movies < 1:
            raise ValueError("num_movies must be >= 1")
        if self.zipf_skew < 0:
            raise ValueError("zipf_skew must be >= 0")
        if self.aggregate_rate < 0:
            raise ValueError("aggregate_rate must be >= 0")


class RngStreams:
    """Independent generators keyed by ``(seed, stream name)``.

    Each concern (arrivals, churn, placement ties, ...) draws from its own
    generator so changing how often one of them is consulted never shifts
    the draws of another.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: Dict[str, np.random.Generator] = {}

    def get(self, name: str) -> np.random.Generator:
        if name not in self._streams:
            key = zlib.crc32(name.encode("utf-8"))
            ss = np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, key])
            self._streams[name] = np.random.default_rng(ss)
        return self._streams[name]


def zipf_popularity(num_movies: int, skew: float) -> np.ndarray:
    """q_m proportional to 1/m**skew for m = 1..num_movies, normalized to sum to 1."""
    if num_movies < 1:
        raise ValueError("num_movies must be >= 1")
    if skew < 0:
        raise ValueError("skew must be >= 0")
    w = 1.0 / np.arange(1, num_movies + 1, dtype=float) ** skew
    return w / w.sum()


def per_movie_rates(popularity: Sequence[float], aggregate_rate: float) -> np.ndarray:
    return np.asarray(popularity, dtype=float) * aggregate_rate


def sample_exponential(stream: np.random.Generator, mean_s: float) -> float:
    if not mean_s > 0:
        raise ValueError(f"exponential mean must be > 0, got {mean_s}")
    return float(stream.exponential(mean_s))


def survival_prob(rate: float, t: float) -> float:
    """P[T > t] for an exponential lifetime with the given rate."""
    if rate < 0 or t < 0:
        raise ValueError("rate and t must be nonnegative")
    return math.exp(-rate * t)


def poisson_arrivals(rates: Sequence[float], horizon_s: float, stream: np.random.Generator) -> List[Tuple[float, int]]:
    """Merge one Poisson process per movie into a time-ordered list of ``(t, movie_index)``.

    ``movie_index`` is 0-based into ``rates``.
    """
    per_movie = []
    for i, lam in enumerate(rates):
        times = []
        if lam > 0:
            t = 0.0
            while True:
                t += stream.exponential(1.0 / lam)
                if t >= horizon_s:
                    break
                times.append((t, i))
        per_movie.append(times)
    return list(heapq.merge(*per_movie))


def build_catalog(
    num_movies: int,
    skew: float,
    aggregate_rate: float,
    size_bytes: int,
    duration_s: float,
    num_blocks: int = 100,
    channels: int = 1,
) -> List[Movie]:
    q = zipf_popularity(num_movies, skew)
    lam = per_movie_rates(q, aggregate_rate)
    return [
        Movie(
            id=m + 1,
            size_bytes=size_bytes,
            duration_s=duration_s,
            popularity=float(q[m]),
            arrival_rate=float(lam[m]),
            channels=channels,
            num_blocks=num_blocks,
        )
        for m in range(num_movies)
    ]
