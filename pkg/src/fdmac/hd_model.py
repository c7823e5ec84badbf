"""Half-duplex RTS/CTS baseline: the same chain with the FD transitions removed."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .chain import OFFSET, T, HoldingTimes
from .fd_model import (
    ATTEMPT_BASES,
    FdScenario,
    FixedPointSolution,
    ModelError,
    SolverOptions,
    _chain,
    _pow,
    picard,
    random_topology_estimate,
    service_throughput,
)
from .timing import MacTiming, derive_timing


@dataclass(frozen=True)
class HdScenario:
    n: int
    n_c: int
    n_h: int
    W: int
    timing: MacTiming = field(default_factory=derive_timing)
    attempt_basis: str = "per_slot"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need at least one client")
        if self.n_c < 0 or self.n_h < 0 or self.n_c + self.n_h != self.n - 1:
            raise ValueError(f"n_c + n_h must equal n - 1 (got {self.n_c} + {self.n_h}, n={self.n})")
        if self.W < self.timing.rts:
            raise ValueError(f"W={self.W} is shorter than the RTS vulnerable period {self.timing.rts}")
        if self.attempt_basis not in ATTEMPT_BASES:
            raise ValueError(f"attempt_basis must be one of {ATTEMPT_BASES}")

    @classmethod
    def symmetric(cls, n, n_h, W, timing=None, **kw):
        return cls(n=n, n_c=n - 1 - n_h, n_h=n_h, W=W, timing=timing or derive_timing(), **kw)

    @classmethod
    def from_fd(cls, sc: FdScenario):
        return cls(sc.n, sc.n_c, sc.n_h, sc.W, sc.timing, sc.attempt_basis)


@dataclass(frozen=True)
class HdSolution:
    omega: float
    omega_ap: float
    nu: float
    alpha: float
    p: float
    alpha_ap: float
    p_ap: float
    throughput_client: float
    throughput_ap: float
    throughput_system: float
    residual: float
    iterations: int
    pi: np.ndarray = field(repr=False)
    pi_ap: np.ndarray = field(repr=False)

    # FD transitions are gone
    beta: float = 0.0
    beta_ap: float = 0.0


def _evaluate(x, sc: HdScenario):
    omega, omega_ap, nu = x
    for name, v in zip(("omega", "omega_ap", "nu"), x):
        if not 0.0 <= v <= 1.0:
            raise ModelError(f"{name}={v!r} left [0, 1]")
    t = sc.timing
    n, n_c, n_h = sc.n, sc.n_c, sc.n_h
    tc = float(t.rts)
    covered = omega * (1 - omega_ap) * _pow(1 - omega, n_c - 1) * _pow(nu, n_h) if n_c else 0.0
    hidden = omega * (1 - omega_ap) * _pow(1 - omega, n_c) * _pow(nu, n_h - 1) if n_h else 0.0
    # client view: whole exchanges (covered sender or the AP), CTS..ACK of hidden senders
    full = n_c * covered + omega_ap * _pow(1 - omega, n - 1)
    part = n_h * hidden
    idle = _pow(1 - omega, n_c) * (1 - omega_ap) * (1 - part)
    denom = 1 + (t.tau_hd - tc) * full + (t.tau_hd_hidden - tc) * part + tc * (1 - idle)
    if denom <= 0:
        raise ModelError(f"client idle-probability denominator {denom:.3g} <= 0")
    alpha = 1 / denom
    # AP view while contending: any client exchange, collisions, idle
    busy = n * omega * _pow(1 - omega, n_c) * _pow(nu, n_h)
    p_ap = (1 - omega) ** n
    denom_ap = 1 + (t.tau_hd - tc) * busy + tc * (1 - p_ap)
    if denom_ap <= 0:
        raise ModelError(f"AP idle-probability denominator {denom_ap:.3g} <= 0")
    alpha_ap = 1 / denom_ap
    for name, v in (("alpha", alpha), ("alpha_ap", alpha_ap)):
        if not 0.0 <= v <= 1.0:
            raise ModelError(f"{name}={v:.6g} outside [0, 1]")
    p = (1 - omega_ap) * _pow(1 - omega, n_c) * _pow(nu, n_h)
    pi = _chain(alpha, 0.0, p, sc.W, "client")
    pi_ap = _chain(alpha_ap, 0.0, p_ap, sc.W, "AP")
    nu_new = pi[OFFSET + t.rts:].sum()
    if sc.attempt_basis == "idle_slot":
        new = np.array([pi[T] / alpha, pi_ap[T] / alpha_ap, nu_new / pi[OFFSET:].sum()])
    else:
        new = np.array([pi[T], pi_ap[T], nu_new])
    return new, dict(alpha=alpha, p=p, alpha_ap=alpha_ap, p_ap=p_ap, pi=pi, pi_ap=pi_ap)


def holding_times(sc: HdScenario, alpha: float) -> HoldingTimes:
    """RTS in T, the rest of the exchange in S, the CTS timeout in C."""
    t = sc.timing
    back = 1.0 if sc.attempt_basis == "idle_slot" else 1 / alpha
    return HoldingTimes(back, float(t.rts), float(t.tau_hd - t.rts), float(t.SIFS + t.cts))


def initial_guess(sc: HdScenario):
    w = 2.0 / (sc.W + 1)
    return np.array([w, w, (1 - w) ** sc.timing.rts])


def solve_hd(sc: HdScenario, opts: SolverOptions | None = None) -> HdSolution:
    opts = opts or SolverOptions()
    x0 = np.asarray(opts.start, dtype=float) if opts.start is not None else initial_guess(sc)
    x, _, iters = picard(lambda v: _evaluate(v, sc)[0], x0, opts)
    fx, parts = _evaluate(x, sc)
    res = float(np.max(np.abs(fx - x)))
    payload = sc.timing.payload
    thr_c = service_throughput(parts["pi"], holding_times(sc, parts["alpha"]), payload)
    thr_ap = service_throughput(parts["pi_ap"], holding_times(sc, parts["alpha_ap"]), payload)
    omega, omega_ap, nu = (float(v) for v in fx)
    return HdSolution(
        omega=omega, omega_ap=omega_ap, nu=nu, alpha=parts["alpha"], p=parts["p"],
        alpha_ap=parts["alpha_ap"], p_ap=parts["p_ap"], throughput_client=thr_c,
        throughput_ap=thr_ap, throughput_system=sc.n * thr_c + thr_ap, residual=res,
        iterations=iters, pi=parts["pi"], pi_ap=parts["pi_ap"],
    )


def fd_gain(fd: FixedPointSolution | HdSolution, hd: HdSolution | FixedPointSolution) -> float:
    """Ratio of FD to HD system throughput."""
    if hd.throughput_system <= 0 or not math.isfinite(hd.throughput_system):
        raise ModelError("HD throughput must be positive")
    return fd.throughput_system / hd.throughput_system


def _solve_hd_point(n, n_c, n_h, W, timing, opts, **kw):
    return solve_hd(HdScenario(n, n_c, n_h, W, timing, **kw), opts).throughput_system


def random_topology_estimate_hd(topology, W: int, timing: MacTiming | None = None,
                                opts: SolverOptions | None = None, **kw):
    """Per-client averaging of the HD baseline, as for the FD model."""
    return random_topology_estimate(topology, W, timing, opts, solve=_solve_hd_point, **kw)
