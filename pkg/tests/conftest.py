import json
from pathlib import Path

import pytest

from p2pvod.cluster import SERVING, ChurnProfile, Cluster, Movie, Peer, ProxyServer, register_serving_peer

EXPECTED = json.loads((Path(__file__).parent / "oracles" / "expected.json").read_text())
CHURN = ChurnProfile(3600.0, 32400.0)


@pytest.fixture
def expected():
    return EXPECTED


def movie(mid, popularity=0.1, size=1, rate=0.0, channels=1):
    return Movie(id=mid, size_bytes=size, duration_s=100.0, popularity=popularity, arrival_rate=rate, channels=channels)


def peer(pid, storage=10, channels=2, online=True, role=SERVING, max_movies=None, stored=(), catalog=None):
    p = Peer(pid, role, storage, channels, CHURN, online=online, max_movies=max_movies)
    for mid in stored:
        p.add_movie(catalog[mid] if catalog else movie(mid))
    return p


def cluster(peers, movies, proxy_channels=2, buffer=10):
    c = Cluster(ProxyServer(proxy_channels, buffer), list(peers), list(movies))
    for p in peers:
        if p.role == SERVING:
            register_serving_peer(c, p.id)
    return c


ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
