"""Slot-accurate simulation of the FD MAC and the HD RTS/CTS baseline.

Time is slotted. At slot ``t`` a contending node looks at what it can hear
(transmissions begun before ``t`` and AP responses that begin at ``t``); if
the medium is idle it either starts a header (counter at zero) or decrements
its counter. The kernel jumps from event to event, so idle stretches and long
exchanges cost O(nodes) instead of O(slots).

Node ``n`` (the last index) is the AP; clients are ``0 .. n-1``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .timing import MacTiming, derive_timing
from .topology import Topology

FD, HD = 0, 1
STATES = ("FD", "HD", "BTACK", "collision", "idle")
S_FD, S_HD, S_BTACK, S_COLL, S_IDLE = range(5)

# per-node state columns
BACKOFF, FREE_AT, NAV, HDR_START, HDR_END, CONTENDING, SINCE, FRONTIER = range(8)
N_NODE_COLS = 8

# per-node counters
COUNTERS = (
    "attempts", "header_ok", "fd_initiated", "hd_initiated", "fd_replies", "delivered",
    "covered_collisions", "hidden_collisions", "busy_tones", "notifications",
    "contend_slots", "contend_idle", "fd_exchanges", "hd_exchanges",
)
(C_ATT, C_OK, C_FDI, C_HDI, C_FDR, C_DEL, C_CCOL, C_HCOL, C_BT, C_NOT,
 C_CSLOT, C_CIDLE, C_FDX, C_HDX) = range(len(COUNTERS))

# global scalars
(G_T, G_ACTIVE, G_START, G_END, G_NMEM, G_HIDDEN, G_DEST, G_HC2_SUM, G_HC2_N,
 G_HC_SUM, G_HC_N, G_FD_MIN, G_FD_MAX, G_HD_MIN, G_HD_MAX, G_TRACE_LEN, G_STATUS) = range(17)
N_GLOBALS = 17

# kernel parameters
(P_MODE, P_N, P_W, P_LH, P_TAU_F, P_TAU_H, P_TAU_HD, P_TIMEOUT, P_WARM, P_END,
 P_TRAFFIC, P_TRACE, P_SIFS) = range(13)

EVENTS = {1: "header", 2: "fd_exchange", 3: "hd_exchange", 4: "fd_reply", 5: "busy_tone",
          6: "collision", 7: "notification", 8: "backoff"}

INF = np.iinfo(np.int64).max // 4
DRAW_CHUNK = 1 << 14
TRACE_CHUNK = 1 << 16


class SimError(ValueError):
    pass


@njit(cache=True)
def _attribute(frontier_o, tally, o, state, a, b, warm, end):
    if a < warm:
        a = warm
    if b > end:
        b = end
    if b <= a:
        return frontier_o
    f = frontier_o
    if a > f:
        tally[o, S_IDLE] += a - f
        f = a
    if b > f:
        tally[o, state] += b - f
        f = b
    return f


@njit(cache=True)
def _trace(g, trace, t, node, code, enabled):
    if enabled:
        k = g[G_TRACE_LEN]
        trace[k, 0] = t
        trace[k, 1] = node
        trace[k, 2] = code
        g[G_TRACE_LEN] = k + 1


@njit(cache=True)
def _draw(draws, ptr, i):
    v = draws[i, ptr[i]]
    ptr[i] += 1
    return v


@njit(cache=True)
def _stop_contending(node, cnt, i, t, warm, end):
    # contention interval [since, t) counted inside the measurement window
    a = node[i, SINCE]
    if a < warm:
        a = warm
    b = t if t < end else end
    if b > a:
        cnt[i, C_CSLOT] += b - a
    node[i, CONTENDING] = 0


@njit(cache=True)
def _kernel(node, cnt, tally, g, members, hear, draws, ptr, dest_draws, prm, trace):
    mode = prm[P_MODE]
    n = prm[P_N]
    M = n + 1
    ap = n
    Lh = prm[P_LH]
    warm = prm[P_WARM]
    end = prm[P_END]
    traffic = prm[P_TRAFFIC] != 0
    tron = prm[P_TRACE] != 0
    B = draws.shape[1]
    BD = dest_draws.shape[0]
    starters = np.empty(M, np.int64)
    t = g[G_T]

    while t < end:
        # refill/flush boundaries: at most one draw per node and one destination per slot
        for i in range(M):
            if ptr[i] >= B - 1:
                g[G_T] = t
                g[G_STATUS] = 1
                return
        if ptr[M] >= BD - 2:
            g[G_T] = t
            g[G_STATUS] = 1
            return
        if tron and g[G_TRACE_LEN] >= trace.shape[0] - 4 * M - 8:
            g[G_T] = t
            g[G_STATUS] = 2
            return

        # 1. the header group heard at the AP ends: decode or collision
        if g[G_ACTIVE] == 1 and g[G_END] == t:
            t0 = g[G_START]
            nm = g[G_NMEM]
            if nm == 1:
                s = members[0]
                if t0 >= warm:
                    cnt[s, C_OK] += 1
                if mode == FD and s != ap and g[G_DEST] == s:
                    # client header, AP holds a packet for it: FD reply
                    e = t0 + prm[P_TAU_F]
                    for o in range(M):
                        if o == s or o == ap or hear[s, o]:
                            node[o, FRONTIER] = _attribute(node[o, FRONTIER], tally, o, S_FD, t0, e, warm, end)
                        else:
                            node[o, FRONTIER] = _attribute(node[o, FRONTIER], tally, o, S_HD, t0 + Lh, e, warm, end)
                        if node[o, NAV] < e:
                            node[o, NAV] = e
                    _stop_contending(node, cnt, ap, t, warm, end)
                    node[s, FREE_AT] = e
                    node[ap, FREE_AT] = e
                    if e <= end and e > warm:
                        cnt[s, C_DEL] += 1
                        cnt[ap, C_DEL] += 1
                    if t0 >= warm:
                        cnt[s, C_FDI] += 1
                        cnt[ap, C_FDR] += 1
                        cnt[s, C_FDX] += 1
                        cnt[ap, C_FDX] += 1
                    g[G_DEST] = _draw(dest_draws.reshape(1, BD), ptr[M:], 0)
                    d = e - t0
                    if d < g[G_FD_MIN]:
                        g[G_FD_MIN] = d
                    if d > g[G_FD_MAX]:
                        g[G_FD_MAX] = d
                    _trace(g, trace, t0, s, 2, tron)
                    _trace(g, trace, t, ap, 4, tron)
                elif mode == FD and s != ap:
                    # client header, AP answers with a busy tone
                    e = t0 + prm[P_TAU_H]
                    for o in range(M):
                        if o == s or o == ap or hear[s, o]:
                            node[o, FRONTIER] = _attribute(node[o, FRONTIER], tally, o, S_HD, t0, e, warm, end)
                        else:
                            node[o, FRONTIER] = _attribute(node[o, FRONTIER], tally, o, S_BTACK, t0 + Lh, e, warm, end)
                        if node[o, NAV] < e:
                            node[o, NAV] = e
                    node[s, FREE_AT] = e
                    if e <= end and e > warm:
                        cnt[s, C_DEL] += 1
                    if t0 >= warm:
                        cnt[s, C_HDI] += 1
                        cnt[s, C_HDX] += 1
                        cnt[ap, C_HDX] += 1
                        cnt[ap, C_BT] += 1
                    d = e - t0
                    if d < g[G_HD_MIN]:
                        g[G_HD_MIN] = d
                    if d > g[G_HD_MAX]:
                        g[G_HD_MAX] = d
                    _trace(g, trace, t0, s, 3, tron)
                    _trace(g, trace, t, ap, 5, tron)
                elif mode == FD:
                    # AP header: the addressed client always replies in FD
                    c = g[G_DEST]
                    e = t0 + prm[P_TAU_F]
                    for o in range(M):
                        node[o, FRONTIER] = _attribute(node[o, FRONTIER], tally, o, S_FD, t0, e, warm, end)
                        if node[o, NAV] < e:
                            node[o, NAV] = e
                    _stop_contending(node, cnt, c, t, warm, end)
                    node[ap, FREE_AT] = e
                    node[c, FREE_AT] = e
                    if e <= end and e > warm:
                        cnt[ap, C_DEL] += 1
                        cnt[c, C_DEL] += 1
                    if t0 >= warm:
                        cnt[ap, C_FDI] += 1
                        cnt[c, C_FDR] += 1
                        cnt[ap, C_FDX] += 1
                        cnt[c, C_FDX] += 1
                    g[G_DEST] = _draw(dest_draws.reshape(1, BD), ptr[M:], 0)
                    d = e - t0
                    if d < g[G_FD_MIN]:
                        g[G_FD_MIN] = d
                    if d > g[G_FD_MAX]:
                        g[G_FD_MAX] = d
                    _trace(g, trace, t0, ap, 2, tron)
                    _trace(g, trace, t, c, 4, tron)
                else:
                    # HD: RTS decoded; hidden nodes hear the exchange from the CTS on
                    e = t0 + prm[P_TAU_HD]
                    for o in range(M):
                        if o == s or s == ap or o == ap or hear[s, o]:
                            node[o, FRONTIER] = _attribute(node[o, FRONTIER], tally, o, S_HD, t0, e, warm, end)
                        else:
                            node[o, FRONTIER] = _attribute(node[o, FRONTIER], tally, o, S_HD, t0 + Lh + prm[P_SIFS], e, warm, end)
                        if node[o, NAV] < e:
                            node[o, NAV] = e
                    node[s, FREE_AT] = e
                    if e <= end and e > warm:
                        cnt[s, C_DEL] += 1
                    if t0 >= warm:
                        cnt[s, C_HDI] += 1
                        cnt[s, C_HDX] += 1
                        if s == ap:
                            cnt[g[G_DEST], C_HDX] += 1
                        else:
                            cnt[ap, C_HDX] += 1
                    if s == ap:
                        g[G_DEST] = _draw(dest_draws.reshape(1, BD), ptr[M:], 0)
                    d = e - t0
                    if d < g[G_HD_MIN]:
                        g[G_HD_MIN] = d
                    if d > g[G_HD_MAX]:
                        g[G_HD_MAX] = d
                    _trace(g, trace, t0, s, 3, tron)
            else:
                hidden = g[G_HIDDEN] == 1
                notify = mode == FD and hidden
                for o in range(M):
                    for k in range(nm):
                        m = members[k]
                        if m == o or hear[m, o]:
                            node[o, FRONTIER] = _attribute(node[o, FRONTIER], tally, o, S_COLL,
                                                           node[m, HDR_START], node[m, HDR_END], warm, end)
                    if notify:
                        node[o, FRONTIER] = _attribute(node[o, FRONTIER], tally, o, S_COLL, t, t + 1, warm, end)
                        if node[o, NAV] < t + 1:
                            node[o, NAV] = t + 1
                for k in range(nm):
                    m = members[k]
                    if mode == FD:
                        node[m, FREE_AT] = t + 1 if notify else t
                    else:
                        r = node[m, HDR_END] + prm[P_TIMEOUT]
                        node[m, FREE_AT] = r if r > t else t
                    if t0 >= warm:
                        if hidden:
                            cnt[m, C_HCOL] += 1
                        else:
                            cnt[m, C_CCOL] += 1
                    _trace(g, trace, node[m, HDR_START], m, 6, tron)
                if notify:
                    if t0 >= warm:
                        cnt[ap, C_NOT] += 1
                    _trace(g, trace, t, ap, 7, tron)
                if hidden and t0 >= warm:
                    g[G_HC_SUM] += g[G_END] - t0
                    g[G_HC_N] += 1
                    if nm == 2:
                        g[G_HC2_SUM] += g[G_END] - t0
                        g[G_HC2_N] += 1
            for k in range(nm):
                m = members[k]
                node[m, HDR_START] = -1
                node[m, HDR_END] = -1
            g[G_ACTIVE] = 0
            g[G_NMEM] = 0
            g[G_HIDDEN] = 0

        # 2. nodes finishing an exchange or a collision draw a new counter
        for i in range(M):
            if node[i, CONTENDING] == 0 and node[i, FREE_AT] == t:
                node[i, BACKOFF] = _draw(draws, ptr, i)
                node[i, CONTENDING] = 1
                node[i, SINCE] = t
                node[i, FREE_AT] = INF
                _trace(g, trace, t, i, 8, tron)

        # 3. contention in slot t
        ns = 0
        for i in range(M):
            if node[i, CONTENDING] == 1 and node[i, NAV] <= t:
                if t >= warm:
                    cnt[i, C_CIDLE] += 1
                if node[i, BACKOFF] == 0:
                    if traffic:
                        starters[ns] = i
                        ns += 1
                else:
                    node[i, BACKOFF] -= 1
        for k in range(ns):
            s = starters[k]
            _stop_contending(node, cnt, s, t + 1, warm, end)
            node[s, HDR_START] = t
            node[s, HDR_END] = t + Lh
            node[s, FREE_AT] = INF
            if t >= warm:
                cnt[s, C_ATT] += 1
            if g[G_ACTIVE] == 0:
                g[G_ACTIVE] = 1
                g[G_START] = t
                g[G_END] = t + Lh
                g[G_NMEM] = 0
                g[G_HIDDEN] = 0
            elif g[G_END] < t + Lh:
                g[G_END] = t + Lh
            for q in range(g[G_NMEM]):
                m = members[q]
                if m != ap and s != ap and not hear[m, s]:
                    g[G_HIDDEN] = 1
            members[g[G_NMEM]] = s
            g[G_NMEM] += 1
            _trace(g, trace, t, s, 1, tron)
        for k in range(ns):
            s = starters[k]
            for o in range(M):
                if hear[s, o] and node[o, NAV] < t + Lh:
                    node[o, NAV] = t + Lh

        # 4. jump to the next event, crediting idle slots to the counters
        tn = end
        if g[G_ACTIVE] == 1 and g[G_END] < tn:
            tn = g[G_END]
        for i in range(M):
            if node[i, CONTENDING] == 0:
                if node[i, FREE_AT] > t and node[i, FREE_AT] < tn:
                    tn = node[i, FREE_AT]
            elif traffic:
                a = node[i, NAV] if node[i, NAV] > t + 1 else t + 1
                si = a + node[i, BACKOFF]
                if si < tn:
                    tn = si
        for i in range(M):
            if node[i, CONTENDING] == 1:
                a = node[i, NAV] if node[i, NAV] > t + 1 else t + 1
                d = tn - a
                if d > 0:
                    if traffic:
                        node[i, BACKOFF] -= d
                    lo = a if a > warm else warm
                    hi = tn if tn < end else end
                    if hi > lo:
                        cnt[i, C_CIDLE] += hi - lo
        t = tn

    # finalise the measurement window
    for i in range(M):
        if node[i, CONTENDING] == 1:
            _stop_contending(node, cnt, i, end, warm, end)
            node[i, CONTENDING] = 1
        if node[i, FRONTIER] < end:
            tally[i, S_IDLE] += end - node[i, FRONTIER]
            node[i, FRONTIER] = end
    g[G_T] = t
    g[G_STATUS] = 0


@dataclass
class SimReport:
    """Counters of one run; per-node rows are clients ``0..n-1`` then the AP."""

    mode: str
    n: int
    W: int
    seed: int
    total_slots: int
    warmup_slots: int
    payload_slots: float
    counters: np.ndarray = field(repr=False)
    tallies: np.ndarray = field(repr=False)
    hidden_collision_span: tuple = (0, 0)
    hidden_pair_collision_span: tuple = (0, 0)
    fd_exchange_range: tuple = (0, 0)
    hd_exchange_range: tuple = (0, 0)
    tau_V: int = 0
    params: dict = field(default_factory=dict)

    @property
    def measured_slots(self) -> int:
        return self.total_slots - self.warmup_slots

    def counter(self, name: str) -> np.ndarray:
        return self.counters[:, COUNTERS.index(name)]

    @property
    def throughput_nodes(self) -> np.ndarray:
        return self.counter("delivered") * self.payload_slots / self.measured_slots

    @property
    def throughput_client(self) -> float:
        return float(self.throughput_nodes[: self.n].mean())

    @property
    def throughput_ap(self) -> float:
        return float(self.throughput_nodes[self.n])

    @property
    def throughput_system(self) -> float:
        return float(self.throughput_nodes.sum())

    def _ratio(self, num, den, idx):
        d = self.counter(den)[idx].sum()
        return float(self.counter(num)[idx].sum() / d) if d else float("nan")

    @property
    def clients(self):
        return slice(0, self.n)

    # empirical chain parameters (pooled over clients, and for the AP)
    @property
    def alpha_client(self) -> float:
        return self._ratio("contend_idle", "contend_slots", self.clients)

    @property
    def alpha_ap(self) -> float:
        return self._ratio("contend_idle", "contend_slots", slice(self.n, self.n + 1))

    @property
    def beta_client(self) -> float:
        return self._ratio("fd_replies", "contend_slots", self.clients)

    @property
    def beta_ap(self) -> float:
        return self._ratio("fd_replies", "contend_slots", slice(self.n, self.n + 1))

    @property
    def p_client(self) -> float:
        return self._ratio("header_ok", "attempts", self.clients)

    @property
    def p_ap(self) -> float:
        return self._ratio("header_ok", "attempts", slice(self.n, self.n + 1))

    @property
    def mean_hidden_collision(self) -> float:
        """Mean channel-collision span at the AP for two-node hidden collisions, in slots."""
        s, k = self.hidden_pair_collision_span
        return s / k if k else float("nan")

    def slot_conservation(self) -> bool:
        return bool(np.all(self.tallies.sum(axis=1) == self.measured_slots))

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.counters.tobytes())
        h.update(self.tallies.tobytes())
        h.update(json.dumps([self.hidden_collision_span, self.hidden_pair_collision_span,
                             self.fd_exchange_range, self.hd_exchange_range]).encode())
        return h.hexdigest()

    def summary(self) -> dict:
        return {
            "mode": self.mode, "n": self.n, "W": self.W, "seed": self.seed,
            "slots": self.total_slots, "throughput_client": self.throughput_client,
            "throughput_ap": self.throughput_ap, "throughput_system": self.throughput_system,
            "alpha": self.alpha_client, "beta": self.beta_client, "p": self.p_client,
            "alpha_ap": self.alpha_ap, "beta_ap": self.beta_ap, "p_ap": self.p_ap,
        }


def _streams(seed: int, count: int):
    """Independent per-node generators spawned from the master seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def _run(mode, topology: Topology, W: int, timing: MacTiming, total_slots: int, seed: int,
         warmup: float = 0.05, traffic: bool = True, trace_path=None) -> SimReport:
    if W < 1:
        raise SimError("W must be positive")
    if total_slots < 1:
        raise SimError("total_slots must be positive")
    n = topology.n
    M = n + 1
    hear = topology.hearing_matrix()
    streams = _streams(seed, M + 1)
    draws = np.empty((M, DRAW_CHUNK), np.int64)
    for i in range(M):
        draws[i] = streams[i].integers(0, W, DRAW_CHUNK)
    dest = streams[M].integers(0, n, DRAW_CHUNK).astype(np.int64)
    ptr = np.zeros(M + 1, np.int64)

    node = np.zeros((M, N_NODE_COLS), np.int64)
    node[:, FREE_AT] = 0
    node[:, HDR_START] = -1
    node[:, HDR_END] = -1
    warm = int(total_slots * warmup)
    node[:, FRONTIER] = warm
    cnt = np.zeros((M, len(COUNTERS)), np.int64)
    tally = np.zeros((M, 5), np.int64)
    g = np.zeros(N_GLOBALS, np.int64)
    g[G_FD_MIN] = g[G_HD_MIN] = INF
    g[G_DEST] = dest[0]
    ptr[M] = 1
    members = np.zeros(M, np.int64)
    hdr = timing.H if mode == FD else timing.rts
    prm = np.array([mode, n, W, hdr, timing.tau_F, timing.tau_H, timing.tau_hd,
                    timing.SIFS + timing.cts, warm, total_slots, int(traffic),
                    int(trace_path is not None), timing.SIFS], np.int64)
    trace = np.zeros((TRACE_CHUNK if trace_path is not None else 1, 3), np.int64)
    fh = open(trace_path, "w") if trace_path is not None else None
    try:
        if fh:
            fh.write("slot,node,event\n")
        while True:
            _kernel(node, cnt, tally, g, members, hear, draws, ptr, dest, prm, trace)
            if fh and (g[G_STATUS] == 2 or g[G_STATUS] == 0):
                k = g[G_TRACE_LEN]
                for s, i, c in trace[:k]:
                    who = "ap" if i == n else str(i)
                    fh.write(f"{s},{who},{EVENTS[int(c)]}\n")
                g[G_TRACE_LEN] = 0
            if g[G_STATUS] == 0:
                break
            if g[G_STATUS] == 1:
                for i in range(M):
                    if ptr[i] >= DRAW_CHUNK // 2:
                        rest = draws[i, ptr[i]:].copy()
                        draws[i, : len(rest)] = rest
                        draws[i, len(rest):] = streams[i].integers(0, W, DRAW_CHUNK - len(rest))
                        ptr[i] = 0
                if ptr[M] >= DRAW_CHUNK // 2:
                    rest = dest[ptr[M]:].copy()
                    dest[: len(rest)] = rest
                    dest[len(rest):] = streams[M].integers(0, n, DRAW_CHUNK - len(rest))
                    ptr[M] = 0
    finally:
        if fh:
            fh.close()

    rng_fd = (int(g[G_FD_MIN]), int(g[G_FD_MAX])) if g[G_FD_MIN] != INF else (0, 0)
    rng_hd = (int(g[G_HD_MIN]), int(g[G_HD_MAX])) if g[G_HD_MIN] != INF else (0, 0)
    return SimReport(
        mode="fd" if mode == FD else "hd", n=n, W=W, seed=seed, total_slots=total_slots,
        warmup_slots=warm, payload_slots=timing.payload, counters=cnt, tallies=tally,
        hidden_collision_span=(int(g[G_HC_SUM]), int(g[G_HC_N])),
        hidden_pair_collision_span=(int(g[G_HC2_SUM]), int(g[G_HC2_N])),
        fd_exchange_range=rng_fd, hd_exchange_range=rng_hd, tau_V=hdr,
        params={"timing": timing.as_dict(), "topology": topology.kind, **topology.params},
    )


def run_fd(topology: Topology, W: int, timing: MacTiming | None = None, total_slots: int = 10**6,
           seed: int = 0, **kw) -> SimReport:
    """Simulate the full-duplex MAC with saturated clients and AP."""
    return _run(FD, topology, W, timing or derive_timing(), total_slots, seed, **kw)


def run_hd_rtscts(topology: Topology, W: int, timing: MacTiming | None = None,
                  total_slots: int = 10**6, seed: int = 0, **kw) -> SimReport:
    """Simulate the half-duplex RTS/CTS baseline on the same topology."""
    return _run(HD, topology, W, timing or derive_timing(), total_slots, seed, **kw)


def channel_state_trace(report: SimReport) -> dict:
    """Fraction of measured slots each observer spent in each channel state."""
    frac = report.tallies / report.measured_slots
    names = [str(i) for i in range(report.n)] + ["ap"]
    return {who: dict(zip(STATES, row.tolist())) for who, row in zip(names, frac)}
