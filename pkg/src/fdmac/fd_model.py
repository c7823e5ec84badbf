"""Steady-state full-duplex model: per-node channel views, fixed point and throughput."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .chain import OFFSET, S, T, ChainError, ChainParams, HoldingTimes, steady_state
from .timing import MacTiming, derive_timing

TAU_C_VARIANTS = ("printed", "prose")
# "per_slot": omega = pi_T, beta per idle slot, backoff holding 1/(alpha + beta) (the reference model).
# "idle_slot": omega = pi_T / alpha is read per idle slot, beta is scaled to a per-slot rate,
# nu is conditioned on backoff and each backoff step holds one slot.
ATTEMPT_BASES = ("per_slot", "idle_slot")


class ModelError(RuntimeError):
    """The model has no feasible solution at the requested point."""


class ConvergenceError(ModelError):
    def __init__(self, msg, last=None, residual=None):
        super().__init__(msg)
        self.last = last
        self.residual = residual


@dataclass(frozen=True)
class FdScenario:
    n: int
    n_c: int
    n_h: int
    W: int
    timing: MacTiming = field(default_factory=derive_timing)
    tau_c_variant: str = "printed"
    attempt_basis: str = "per_slot"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need at least one client")
        if self.n_c < 0 or self.n_h < 0 or self.n_c + self.n_h != self.n - 1:
            raise ValueError(f"n_c + n_h must equal n - 1 (got {self.n_c} + {self.n_h}, n={self.n})")
        if self.W < self.timing.tau_V:
            raise ValueError(f"W={self.W} is shorter than the vulnerable period {self.timing.tau_V}")
        if self.tau_c_variant not in TAU_C_VARIANTS:
            raise ValueError(f"tau_c_variant must be one of {TAU_C_VARIANTS}")
        if self.attempt_basis not in ATTEMPT_BASES:
            raise ValueError(f"attempt_basis must be one of {ATTEMPT_BASES}")

    @classmethod
    def symmetric(cls, n, n_h, W, timing=None, **kw):
        return cls(n=n, n_c=n - 1 - n_h, n_h=n_h, W=W, timing=timing or derive_timing(), **kw)


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-10
    max_iters: int = 10_000
    damping: float = 0.5
    fallback_damping: float = 0.1
    patience: int = 10
    start: tuple | None = None


@dataclass(frozen=True)
class CollisionTimes:
    tau_C: float
    tau_C_ap: float
    delta_C: float
    delta_C_ap: float
    delta_S: float
    delta_S_ap: float
    delta_T: float


@dataclass(frozen=True)
class FixedPointSolution:
    omega: float
    omega_ap: float
    nu: float
    nu_ap: float
    alpha: float
    beta: float
    p: float
    alpha_ap: float
    beta_ap: float
    p_ap: float
    Y1: float
    Y2: float
    Y3: float
    Y4: float
    Z1: float
    tau_C: float
    tau_C_ap: float
    throughput_client: float
    throughput_ap: float
    throughput_system: float
    residual: float
    iterations: int
    pi: np.ndarray = field(repr=False)
    pi_ap: np.ndarray = field(repr=False)

    @property
    def gain_estimate_inputs(self):
        return self.omega, self.p, self.omega_ap, self.p_ap


def collision_times(sc: FdScenario) -> CollisionTimes:
    t = sc.timing
    H, n, n_c, n_h = t.H, sc.n, sc.n_c, sc.n_h
    if n == 1:
        tau_C = tau_C_ap = float(H)
    else:
        pairs = n * (n - 1)
        tau_C_ap = n_c * n / pairs * H + n_h * n / pairs * 1.5 * H
        if sc.tau_c_variant == "printed":
            tau_C = (n_c**2 + 2 * n_c * n_h + 2 * n_h) / pairs * H + (n_c**2 - 2 * n_c) / pairs * 1.5 * H
        else:
            tau_C = _tau_c_prose(n, n_c, n_h, H)
        # the printed coefficients go negative for tiny networks (n_c = 1)
        tau_C = max(tau_C, float(t.sigma))
    delta_S = (t.tau_F - H) / n + (1 - 1 / n) * (t.tau_H - H)
    delta_C = n_h / (n + 1) * t.tau_V / 2 + (n_c + 1) / (n + 1) * t.sigma
    return CollisionTimes(tau_C, tau_C_ap, delta_C, float(t.sigma), delta_S,
                          float(t.tau_F - H), float(H))


def _tau_c_prose(n, n_c, n_h, H):
    """Collision length seen by a client from the three-case description.

    A colliding pair (k, l) is drawn with k, l independently covered by the
    observer w.p. n_c/(n-1); the pair itself is mutually covered w.p.
    n_c/(n-1). Covered pairs last H, hidden pairs 3H/2, pairs invisible to
    the observer contribute nothing.
    """
    q_c, q_h = n_c / (n - 1), n_h / (n - 1)
    seen = 1.0 - q_h**2
    return seen * (q_c * H + q_h * 1.5 * H)


def _pow(x, k):
    return 1.0 if k == 0 else x**k


def client_alpha(omega, omega_ap, nu, sc: FdScenario, times: CollisionTimes | None = None):
    """Idle probability seen by a client, with the Y1..Y4 channel-state weights."""
    times = times or collision_times(sc)
    t = sc.timing
    n, n_c, n_h = sc.n, sc.n_c, sc.n_h
    w, wa = omega, omega_ap
    covered = w * (1 - wa) * _pow(1 - w, n_c - 1) * _pow(nu, n_h) if n_c else 0.0
    hidden = w * (1 - wa) * _pow(1 - w, n_c) * _pow(nu, n_h - 1) if n_h else 0.0
    Y1 = n_c / n * covered + wa * _pow(1 - w, n - 1)
    Y2 = n_c * (n - 1) / n * covered + n_h / n * hidden
    Y3 = n_h * (n - 1) / n * hidden
    Y4 = _pow(1 - w, n_c) * (1 - wa) * (1 - n_h * hidden)
    tc = times.tau_C
    denom = 1 + (t.tau_F - tc) * Y1 + (t.tau_H - tc) * Y2 + (t.tau_A - tc) * Y3 + tc * (1 - Y4)
    if denom <= 0:
        raise ModelError(f"client idle-probability denominator {denom:.3g} <= 0")
    alpha = 1.0 / denom
    if not 0.0 <= alpha <= 1.0:
        raise ModelError(f"client alpha={alpha:.6g} outside [0, 1]")
    return alpha, Y1, Y2, Y3, Y4


def ap_alpha(omega, nu, sc: FdScenario, times: CollisionTimes | None = None):
    """Idle probability seen by the AP while it contends, with Z1 and p_ap."""
    times = times or collision_times(sc)
    t = sc.timing
    n, n_c, n_h = sc.n, sc.n_c, sc.n_h
    Z1 = (n - 1) * omega * _pow(1 - omega, n_c) * _pow(nu, n_h)
    p_ap = (1 - omega) ** n
    tc = times.tau_C_ap
    denom = 1 + (t.tau_H - tc) * Z1 + tc * (1 - p_ap)
    if denom <= 0:
        raise ModelError(f"AP idle-probability denominator {denom:.3g} <= 0")
    alpha_ap = 1.0 / denom
    if not 0.0 <= alpha_ap <= 1.0:
        raise ModelError(f"alpha_ap={alpha_ap:.6g} outside [0, 1]")
    return alpha_ap, Z1, p_ap


def client_beta_p(omega, omega_ap, nu, sc: FdScenario):
    n = sc.n
    beta = omega_ap * (1 - omega) ** (n - 1) / n
    p = (1 - omega_ap) * _pow(1 - omega, sc.n_c) * _pow(nu, sc.n_h)
    return beta, p


def ap_beta(omega, nu, sc: FdScenario):
    return omega * _pow(1 - omega, sc.n_c) * _pow(nu, sc.n_h)


def nu_ap(omega, omega_ap, nu, sc: FdScenario):
    """Probability of hearing only the AP's FD reply to one of the hidden clients."""
    return sc.n_h * omega * (1 - omega_ap) * _pow(1 - omega, sc.n_c) * _pow(nu, sc.n_h)


def _chain(alpha, beta, p, W, who):
    try:
        return steady_state(ChainParams(alpha, beta, p, W))
    except ChainError as exc:
        raise ModelError(f"{who} chain infeasible: {exc}") from exc


def _evaluate(x, sc, times):
    omega, omega_ap, nu = x
    for name, v in zip(("omega", "omega_ap", "nu"), x):
        if not 0.0 <= v <= 1.0:
            raise ModelError(f"{name}={v!r} left [0, 1]")
    alpha, Y1, Y2, Y3, Y4 = client_alpha(omega, omega_ap, nu, sc, times)
    alpha_ap, Z1, p_ap = ap_alpha(omega, nu, sc, times)
    beta, p = client_beta_p(omega, omega_ap, nu, sc)
    beta_ap = ap_beta(omega, nu, sc)
    idle = sc.attempt_basis == "idle_slot"
    if idle:
        beta *= alpha
        beta_ap *= alpha_ap
    if alpha + beta > 1 + 1e-12:
        raise ModelError(f"client alpha + beta = {alpha + beta:.6g} > 1")
    if alpha_ap + beta_ap > 1 + 1e-12:
        raise ModelError(f"AP alpha + beta = {alpha_ap + beta_ap:.6g} > 1")
    pi = _chain(min(alpha, 1 - beta), beta, p, sc.W, "client")
    pi_ap = _chain(min(alpha_ap, 1 - beta_ap), beta_ap, p_ap, sc.W, "AP")
    nu_new = pi[OFFSET + sc.timing.tau_V:].sum()
    if idle:
        new = np.array([pi[T] / alpha, pi_ap[T] / alpha_ap, nu_new / pi[OFFSET:].sum()])
    else:
        new = np.array([pi[T], pi_ap[T], nu_new])
    parts = dict(alpha=alpha, beta=beta, p=p, alpha_ap=alpha_ap, beta_ap=beta_ap, p_ap=p_ap,
                 Y1=Y1, Y2=Y2, Y3=Y3, Y4=Y4, Z1=Z1, pi=pi, pi_ap=pi_ap)
    return new, parts


def fixed_point_map(x, sc: FdScenario):
    """One undamped pass (omega, omega_ap, nu) -> (omega', omega_ap', nu')."""
    return _evaluate(np.asarray(x, dtype=float), sc, collision_times(sc))[0]


def initial_guess(sc: FdScenario):
    w = 2.0 / (sc.W + 1)
    return np.array([w, w, (1 - w) ** sc.timing.tau_V])


def picard(F, x0, opts: SolverOptions):
    """Damped Picard iteration; drops to the fallback damping on sustained residual growth.

    Returns ``(x, residual, iterations)``.
    """
    x = np.asarray(x0, dtype=float)
    gamma = opts.damping
    prev = math.inf
    rising = 0
    res = math.inf
    for it in range(1, opts.max_iters + 1):
        fx = F(x)
        res = float(np.max(np.abs(fx - x)))
        if res <= opts.tol:
            return x, res, it
        rising = rising + 1 if res > prev else 0
        if rising >= opts.patience and gamma > opts.fallback_damping:
            gamma = opts.fallback_damping
            rising = 0
        prev = res
        x = (1 - gamma) * x + gamma * fx
    raise ConvergenceError(f"no convergence after {opts.max_iters} iterations (residual {res:.3e})",
                           last=x, residual=res)


def solve_fixed_point(sc: FdScenario, opts: SolverOptions | None = None) -> FixedPointSolution:
    opts = opts or SolverOptions()
    times = collision_times(sc)
    x0 = np.asarray(opts.start, dtype=float) if opts.start is not None else initial_guess(sc)
    x, _, iters = picard(lambda v: _evaluate(v, sc, times)[0], x0, opts)
    fx, parts = _evaluate(x, sc, times)
    res = float(np.max(np.abs(fx - x)))
    return _assemble(sc, times, fx, parts, res, iters)


def _assemble(sc, times, x, parts, res, iters):
    omega, omega_ap, nu = (float(v) for v in x)
    t = sc.timing
    if sc.attempt_basis == "idle_slot":
        back, back_ap = 1.0, 1.0
    else:
        back = 1 / (parts["alpha"] + parts["beta"])
        back_ap = 1 / (parts["alpha_ap"] + parts["beta_ap"])
    cl = HoldingTimes(back, times.delta_T, times.delta_S, times.delta_C)
    ap = HoldingTimes(back_ap, times.delta_T, times.delta_S_ap, times.delta_C_ap)
    thr_c = service_throughput(parts["pi"], cl, t.payload)
    thr_ap = service_throughput(parts["pi_ap"], ap, t.payload)
    return FixedPointSolution(
        omega=omega, omega_ap=omega_ap, nu=nu, nu_ap=nu_ap(omega, omega_ap, nu, sc),
        alpha=parts["alpha"], beta=parts["beta"], p=parts["p"],
        alpha_ap=parts["alpha_ap"], beta_ap=parts["beta_ap"], p_ap=parts["p_ap"],
        Y1=parts["Y1"], Y2=parts["Y2"], Y3=parts["Y3"], Y4=parts["Y4"], Z1=parts["Z1"],
        tau_C=times.tau_C, tau_C_ap=times.tau_C_ap,
        throughput_client=thr_c, throughput_ap=thr_ap, throughput_system=sc.n * thr_c + thr_ap,
        residual=res, iterations=iters, pi=parts["pi"], pi_ap=parts["pi_ap"],
    )


def service_throughput(pi, hold: HoldingTimes, payload_slots: float) -> float:
    """Normalised payload throughput of one node.

    ``pi_S / sum(pi * delta)`` is the rate of visits to S per slot; each visit
    delivers one payload of ``payload_slots`` airtime at the data rate.
    """
    d = hold.vector(len(pi) - OFFSET)
    return float(pi[S] / np.dot(pi, d) * payload_slots)


def throughput(sol: FixedPointSolution, sc: FdScenario):
    return sol.throughput_client, sol.throughput_ap, sol.throughput_system


def gain_estimate(sol: FixedPointSolution, n: int) -> float:
    """Closed-form estimate of the FD-over-HD throughput ratio from FD quantities alone."""
    client = sol.omega * sol.p
    apt = sol.omega_ap * sol.p_ap
    denom = n * client + apt
    if denom <= 0:
        raise ModelError("gain estimate undefined: no successful transmissions")
    return 1.0 + (client + apt) / denom


def multi_start(sc: FdScenario, opts: SolverOptions | None = None, starts: int = 8, seed: int = 0,
                tol: float = 1e-6):
    """Re-solve from random starting points; returns (reference, others, disagreement flag)."""
    opts = opts or SolverOptions()
    ref = solve_fixed_point(sc, opts)
    rng = np.random.default_rng(seed)
    others = []
    for _ in range(starts):
        w, wa = rng.uniform(0, 4.0 / (sc.W + 1), size=2)
        x0 = (w, wa, rng.uniform(0.05, 1.0))
        try:
            others.append(solve_fixed_point(sc, replace(opts, start=x0)))
        except ModelError:
            continue
    key = lambda s: np.array([s.omega, s.omega_ap, s.nu])
    flagged = any(np.max(np.abs(key(o) - key(ref))) > tol for o in others)
    return ref, others, flagged


@dataclass(frozen=True)
class TopologyEstimate:
    throughput_system: float
    per_node: tuple
    failures: tuple


def _solve_fd_point(n, n_c, n_h, W, timing, opts, **kw):
    return solve_fixed_point(FdScenario(n, n_c, n_h, W, timing, **kw), opts).throughput_system


def random_topology_estimate(topology, W: int, timing: MacTiming | None = None,
                             opts: SolverOptions | None = None, solve=None, **kw) -> TopologyEstimate:
    """Average of symmetric solves, one per client's own (n_c, n_h) pair.

    Clients whose solve fails are listed in ``failures`` as ``(client, message)``
    and excluded from the mean; if every solve fails a ModelError is raised.
    ``solve(n, n_c, n_h, W, timing, opts, **kw)`` swaps in another model.
    """
    timing = timing or derive_timing()
    solve = solve or _solve_fd_point
    cache, per_node, failures = {}, [], []
    for i in range(topology.n):
        key = (topology.n_c[i], topology.n_h[i])
        if key not in cache:
            try:
                cache[key] = solve(topology.n, key[0], key[1], W, timing, opts, **kw)
            except (ModelError, ValueError) as exc:
                cache[key] = exc
        v = cache[key]
        if isinstance(v, Exception):
            failures.append((i, str(v)))
        else:
            per_node.append(v)
    if not per_node:
        raise ModelError(f"all {topology.n} per-client solves failed")
    return TopologyEstimate(float(np.mean(per_node)), tuple(per_node), tuple(failures))
