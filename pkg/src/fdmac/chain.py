"""Embedded head-of-line packet chain shared by the FD and HD models.

State layout of every probability vector returned here::

    index 0      S   (successful service)
    index 1      C   (collision)
    index 2      T   (header / attempt)
    index 3 + i  backoff counter i, i = 0 .. W-1
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded

S, C, T = 0, 1, 2
OFFSET = 3

RESIDUAL_TOL = 1e-10


class ChainError(ValueError):
    """Raised for parameter sets the chain cannot be solved for."""


@dataclass(frozen=True)
class ChainParams:
    alpha: float
    beta: float
    p: float
    W: int

    def __post_init__(self):
        for name in ("alpha", "beta", "p"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0) or math.isnan(v):
                raise ChainError(f"{name}={v!r} outside [0, 1]")
        if self.alpha + self.beta > 1.0 + 1e-12:
            raise ChainError(f"alpha + beta = {self.alpha + self.beta!r} exceeds 1")
        if int(self.W) != self.W or self.W < 1:
            raise ChainError(f"W must be a positive integer, got {self.W!r}")
        if self.alpha + self.beta <= 0.0:
            raise ChainError("alpha + beta = 0: the backoff states have no exit")

    @property
    def u(self) -> float:
        return self.alpha / (self.alpha + self.beta)

    @property
    def X(self) -> float:
        return _one_minus_pow(self.u, self.W)


@dataclass(frozen=True)
class HoldingTimes:
    delta_backoff: float
    delta_T: float
    delta_S: float
    delta_C: float

    @classmethod
    def for_params(cls, params: ChainParams, delta_T, delta_S, delta_C) -> "HoldingTimes":
        return cls(1.0 / (params.alpha + params.beta), delta_T, delta_S, delta_C)

    def vector(self, W: int) -> np.ndarray:
        d = np.full(W + OFFSET, float(self.delta_backoff))
        d[S], d[C], d[T] = self.delta_S, self.delta_C, self.delta_T
        return d


@dataclass(frozen=True)
class ChainSolution:
    params: ChainParams
    pi: np.ndarray
    pi_tilde: np.ndarray
    throughput: float
    u: float
    X: float

    @property
    def backoff(self) -> np.ndarray:
        return self.pi[OFFSET:]


def _one_minus_pow(u: float, W: int) -> float:
    if u <= 0.0:
        return 1.0
    return -math.expm1(W * math.log(u))


def _coo(params: ChainParams):
    a, b, p, W = params.alpha, params.beta, params.p, int(params.W)
    n = W + OFFSET
    inv = 1.0 / (W * (a + b))
    u = a / (a + b)
    r = OFFSET + np.arange(W)
    # pi_i - u pi_{i+1} - (pi_S + pi_C) / (W (a+b)) = 0
    rows = [r, r[:-1], r, r]
    cols = [r, r[:-1] + 1, np.full(W, S), np.full(W, C)]
    vals = [np.ones(W), np.full(W - 1, -u), np.full(W, -inv), np.full(W, -inv)]
    # pi_T = a pi_0 ;  pi_C = (1-p) pi_T
    rows += [np.array([T, T, C, C])]
    cols += [np.array([T, OFFSET, C, T])]
    vals += [np.array([1.0, -a, 1.0, -(1.0 - p)])]
    # pi_S = p pi_T + b sum pi_j
    rows += [np.full(W + 2, S)]
    cols += [np.concatenate(([S, T], r))]
    vals += [np.concatenate(([1.0, -p], np.full(W, -b)))]
    return (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), (n, n)


def balance_matrix(params: ChainParams) -> sp.csr_matrix:
    """Homogeneous balance equations ``A @ pi = 0`` (one row per state)."""
    data, shape = _coo(params)
    return sp.csr_matrix(data, shape=shape)


def steady_state(params: ChainParams) -> np.ndarray:
    """Stationary vector from the balance equations by block elimination.

    Fixing the re-entry mass ``(pi_S + pi_C) / (W (alpha + beta))`` to one
    leaves an upper-bidiagonal system for the backoff states (banded solve);
    T, C and S then follow by substitution, the S+C row is the redundant
    consistency equation, and the vector is normalised. Every equation is
    re-checked at the end.
    """
    a, b, p, W = params.alpha, params.beta, params.p, int(params.W)
    u = a / (a + b)
    ab = np.zeros((2, W))
    ab[0, 1:] = -u
    ab[1, :] = 1.0
    back = solve_banded((0, 1), ab, np.ones(W))
    pi = np.empty(W + OFFSET)
    pi[OFFSET:] = back
    pi[T] = a * back[0]
    pi[C] = (1.0 - p) * pi[T]
    pi[S] = p * pi[T] + b * back.sum()
    pi /= pi.sum()
    A = balance_matrix(params)
    res = _residual(A, pi)
    if not np.all(np.isfinite(pi)) or res > RESIDUAL_TOL:
        # badly conditioned corner: least squares over every equation
        n = W + OFFSET
        full = np.vstack([A.toarray(), np.ones((1, n))])
        rhs = np.zeros(n + 1)
        rhs[-1] = 1.0
        pi = np.linalg.lstsq(full, rhs, rcond=None)[0]
        res = _residual(A, pi)
        if not np.all(np.isfinite(pi)) or res > RESIDUAL_TOL:
            raise ChainError(f"balance equations not satisfied (residual {res:.3e}) for {params}")
    # tiny negative round-off only
    return np.clip(pi, 0.0, 1.0)


def _residual(A, pi) -> float:
    return max(float(np.max(np.abs(A @ pi))), abs(float(pi.sum()) - 1.0))


def balance_residual(params: ChainParams, pi: np.ndarray) -> float:
    """Max-norm residual of ``pi`` against the balance and normalisation equations."""
    return _residual(balance_matrix(params), np.asarray(pi, dtype=float))


def closed_form(params: ChainParams) -> np.ndarray:
    """Closed-form stationary vector; singular as ``u -> 1`` (beta -> 0).

    The common factor ``1 - u`` of the textbook denominator
    ``W (1-u)(beta+1) - X u (1-beta)`` and of every numerator is divided out
    analytically, leaving sums of positive terms: with ``G = sum_{k<W} u^k``
    (so ``X = (1-u) G``) and ``A = W - uG = sum_{k=1..W} (1 - u^k)`` the
    denominator is ``A + beta (W + uG)``.
    """
    a, b, p, W = params.alpha, params.beta, params.p, int(params.W)
    s = a + b
    u = a / s
    if b <= 0.0:
        raise ChainError("closed form is singular at u = 1 (beta = 0)")
    k = np.arange(1, W + 1)
    # 1 - u^k for k = 1..W, accurate for u close to 1
    one_minus = -np.expm1(k * math.log(u)) if u > 0 else np.ones(W)
    A = float(one_minus.sum())
    G = float(np.sum(u ** np.arange(W)))
    den = A + b * (W + u * G)
    pi = np.empty(W + OFFSET)
    pi[S] = b * (A + p * u * G) / den
    pi[T] = u * b * G / den
    pi[C] = (1.0 - p) * pi[T]
    # pi_i = (1 - u^{W-i}) / den, i = 0..W-1
    pi[OFFSET:] = one_minus[::-1] / den
    return pi


def transition_matrix(params: ChainParams) -> np.ndarray:
    """Row-stochastic one-slot transition matrix with explicit self-loops."""
    a, b, p, W = params.alpha, params.beta, params.p, int(params.W)
    n = W + OFFSET
    P = np.zeros((n, n))
    P[S, OFFSET:] = 1.0 / W
    P[C, OFFSET:] = 1.0 / W
    P[T, S] = p
    P[T, C] = 1.0 - p
    for i in range(W):
        r = OFFSET + i
        P[r, r - 1 if i > 0 else T] += a
        P[r, S] += b
        P[r, r] += 1.0 - a - b
    return P


def power_iteration(P: np.ndarray, tol: float = 1e-15, max_squarings: int = 200) -> np.ndarray:
    """Stationary row vector of ``P`` by repeated squaring of the lazy chain."""
    n = P.shape[0]
    Q = 0.5 * (P + np.eye(n))
    for _ in range(max_squarings):
        Q2 = Q @ Q
        Q2 /= Q2.sum(axis=1, keepdims=True)
        if np.max(np.abs(Q2 - Q)) < tol:
            Q = Q2
            break
        Q = Q2
    x = Q.mean(axis=0)
    return x / x.sum()


def limiting_probs(pi: np.ndarray, delta: HoldingTimes) -> tuple[np.ndarray, float]:
    """Time-weighted (limiting) probabilities and the service-state share."""
    pi = np.asarray(pi, dtype=float)
    d = delta.vector(len(pi) - OFFSET)
    if not np.all(np.isfinite(d)) or np.any(d <= 0):
        raise ChainError(f"holding times must be positive and finite: {delta}")
    w = pi * d
    pt = w / w.sum()
    return pt, float(pt[S])


def solve_chain(params: ChainParams, delta_T: float, delta_S: float, delta_C: float) -> ChainSolution:
    pi = steady_state(params)
    hold = HoldingTimes.for_params(params, delta_T, delta_S, delta_C)
    pt, thr = limiting_probs(pi, hold)
    return ChainSolution(params, pi, pt, thr, params.u, params.X)


def service_rate(pi: np.ndarray, delta: HoldingTimes) -> float:
    """Visits to S per slot: ``pi_S / sum_i pi_i delta_i``."""
    d = delta.vector(len(pi) - OFFSET)
    return float(pi[S] / np.dot(pi, d))
