"""Ring and random unit-disk client placements around an AP at the origin."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

PLACEMENTS = ("uniform_area", "uniform_radius")
# tolerance on the range test so that exact-boundary chords are not flipped by round-off
_EPS = 1e-9


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class Topology:
    positions: np.ndarray
    range_m: float
    kind: str = "custom"
    params: dict = field(default_factory=dict)
    links: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "positions", pos)
        if len(pos) < 1:
            raise TopologyError("a topology needs at least one client")
        r = np.hypot(pos[:, 0], pos[:, 1])
        if np.any(r > self.range_m * (1 + _EPS)):
            bad = np.flatnonzero(r > self.range_m * (1 + _EPS)).tolist()
            raise TopologyError(f"clients {bad} are outside the AP range {self.range_m} m")
        if self.links is None:
            d = np.hypot(*(pos[:, None, :] - pos[None, :, :]).transpose(2, 0, 1))
            adj = d <= self.range_m * (1 + _EPS)
        else:
            # logical topology: coverage given explicitly instead of by distance
            adj = np.array(self.links, dtype=bool)
            if adj.shape != (len(pos), len(pos)) or not np.array_equal(adj, adj.T):
                raise TopologyError("explicit links must be a symmetric n x n matrix")
        np.fill_diagonal(adj, False)
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def n_c(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    @property
    def n_h(self) -> np.ndarray:
        return self.n - 1 - self.n_c

    def covered(self, i: int) -> frozenset:
        return frozenset(np.flatnonzero(self.adjacency[i]).tolist())

    def hidden(self, i: int) -> frozenset:
        return frozenset(range(self.n)) - self.covered(i) - {i}

    def hearing_matrix(self) -> np.ndarray:
        """(n+1)x(n+1) audibility including the AP as the last node; diagonal False."""
        m = np.ones((self.n + 1, self.n + 1), dtype=np.bool_)
        m[: self.n, : self.n] = self.adjacency
        np.fill_diagonal(m, False)
        return m

    def dumps(self) -> str:
        out = io.StringIO()
        meta = " ".join(f"{k}={v}" for k, v in {"kind": self.kind, "range_m": self.range_m,
                                                 **self.params}.items())
        out.write(f"# topology {meta}\n")
        out.write("id,x_m,y_m,n_c,n_h\n")
        for i, (x, y) in enumerate(self.positions):
            out.write(f"{i},{float(x)!r},{float(y)!r},{self.n_c[i]},{self.n_h[i]}\n")
        out.write("# adjacency\nid,covered\n")
        for i in range(self.n):
            out.write(f"{i},{' '.join(str(j) for j in sorted(self.covered(i)))}\n")
        return out.getvalue()


def loads(text: str) -> Topology:
    """Parse the table written by :meth:`Topology.dumps`; the adjacency section is cross-checked."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    header = lines[0]
    if not header.startswith("# topology"):
        raise TopologyError("missing '# topology' header")
    meta = dict(kv.split("=", 1) for kv in header[len("# topology"):].split())
    range_m = float(meta.pop("range_m"))
    kind = meta.pop("kind", "custom")
    pos, declared = [], {}
    section = None
    for ln in lines[1:]:
        if ln == "# adjacency":
            section = "adj"
            continue
        if ln.startswith("id,"):
            continue
        if section == "adj":
            i, rest = ln.split(",", 1)
            declared[int(i)] = frozenset(int(x) for x in rest.split())
        else:
            _, x, y, _, _ = ln.split(",")
            pos.append((float(x), float(y)))
    if kind == "ring_circulant":
        links = np.zeros((len(pos), len(pos)), dtype=bool)
        for i, cov in declared.items():
            links[i, sorted(cov)] = True
        return Topology(np.array(pos), range_m, kind, meta, links=links)
    topo = Topology(np.array(pos), range_m, kind, meta)
    for i, cov in declared.items():
        if cov != topo.covered(i):
            raise TopologyError(f"adjacency of client {i} does not match its position")
    return topo


def ring(n: int, ring_radius: float, range_m: float = 150.0) -> Topology:
    if n < 1:
        raise TopologyError("n must be at least 1")
    if not 0 < ring_radius <= range_m:
        raise TopologyError(f"ring radius {ring_radius} must lie in (0, {range_m}] to stay in AP range")
    ang = 2 * math.pi * np.arange(n) / n
    pos = ring_radius * np.column_stack([np.cos(ang), np.sin(ang)])
    return Topology(pos, range_m, "ring", {"ring_radius": ring_radius})


def ring_hidden_count(n: int, ring_radius: float, range_m: float) -> int | None:
    """Hidden terminals per client on a ring by direct pairwise distances.

    Returns None when clients disagree, which only happens with a chord
    sitting on the range boundary.
    """
    nh = ring(n, ring_radius, range_m).n_h
    return int(nh[0]) if np.all(nh == nh[0]) else None


def achievable_ring_hidden(n: int, range_m: float = 150.0) -> list[int]:
    """All hidden-terminal counts a ring of n clients inside the AP range can produce."""
    k = np.arange(1, n)
    chords = 2 * np.sin(np.pi * k / n)
    thresholds = np.unique(np.round(range_m / chords, 12))
    probes = [min(range_m, t * (1 - 1e-6)) for t in thresholds] + [range_m]
    return sorted({ring_hidden_count(n, r, range_m) for r in probes if r > 0})


def solve_ring_radius(n: int, target_n_h: int, range_m: float = 150.0, iters: int = 200) -> float:
    """Radius giving exactly ``target_n_h`` hidden terminals per client.

    Bisection on the monotone count n_h(R) brackets the interval where the
    count equals the target; its midpoint is returned.
    """
    if n < 1:
        raise TopologyError("n must be at least 1")

    def count(r):
        # client 0 only; ties on the boundary are resolved by the final check
        return int(ring(n, r, range_m).n_h[0])

    def first_radius_with(c):
        if count(range_m) < c:
            return None
        lo, hi = 0.0, range_m
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            if mid > 0 and count(mid) >= c:
                hi = mid
            else:
                lo = mid
        return hi

    lo = first_radius_with(target_n_h) if target_n_h > 0 else 0.0
    hi = first_radius_with(target_n_h + 1)
    if lo is not None:
        # the last plateau extends up to range_m inclusive
        r = range_m if hi is None else lo + 0.5 * (hi - lo)
        gap = (range_m if hi is None else hi) - lo
        if gap > 1e-9 * range_m and ring_hidden_count(n, r, range_m) == target_n_h:
            return r
    feasible = achievable_ring_hidden(n, range_m)
    below = [v for v in feasible if v < target_n_h]
    above = [v for v in feasible if v > target_n_h]
    raise TopologyError(
        f"n_h={target_n_h} is not achievable on a ring of {n} clients within {range_m} m; "
        f"nearest achievable: {below[-1] if below else None} / {above[0] if above else None}"
    )


def circulant_ring(n: int, n_h: int, range_m: float = 150.0) -> Topology:
    """Ring whose clients each have exactly ``n_h`` hidden terminals.

    A geometric ring of an even number of clients only produces odd hidden
    counts (the antipodal chord is always the longest). For such targets the
    clients sit on the ring with ``n_h + 1`` geometric hidden terminals and
    the antipodal pair is declared covered; otherwise this is :func:`ring`.
    """
    try:
        return ring(n, solve_ring_radius(n, n_h, range_m), range_m)
    except TopologyError:
        if n % 2 or n_h % 2 or not 0 < n_h < n - 1:
            raise
    radius = solve_ring_radius(n, n_h + 1, range_m)
    base = ring(n, radius, range_m)
    links = base.adjacency.copy()
    idx = np.arange(n)
    links[idx, (idx + n // 2) % n] = True
    return Topology(base.positions, range_m, "ring_circulant",
                    {"ring_radius": radius, "n_h": n_h}, links=links)


def random_disk(n: int, range_m: float = 150.0, seed: int = 0, placement: str = "uniform_area") -> Topology:
    """i.i.d. client positions in the AP disk (numpy PCG64 seeded with ``seed``)."""
    if n < 1:
        raise TopologyError("n must be at least 1")
    if placement not in PLACEMENTS:
        raise TopologyError(f"placement must be one of {PLACEMENTS}")
    rng = np.random.default_rng(seed)
    u_r, u_t = rng.random(n), rng.random(n)
    r = range_m * (np.sqrt(u_r) if placement == "uniform_area" else u_r)
    th = 2 * np.pi * u_t
    pos = np.column_stack([r * np.cos(th), r * np.sin(th)])
    return Topology(pos, range_m, "random", {"seed": seed, "placement": placement,
                                             "rng": "numpy.PCG64"})
