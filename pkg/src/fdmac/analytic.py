"""Saturation-throughput model of FD-MAC and of the blind CSMA/CA baseline.

Every user runs a binary-exponential backoff chain whose only coupling to
the others is the perceived-success probability ``p_s``.  The per-slot
attempt probability ``p`` follows from the chain's stationary distribution,
``p_s`` follows from ``p`` through the collision/false-alarm model, and the
pair is solved jointly.  Throughput is the fraction of channel time spent in
collision-free transmission.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import binom

from .params import (
    Mode,
    ModelDomainError,
    ProtocolParams,
    SolverError,
    UndefinedQuantityError,
    cw_of_stage,
)

__all__ = [
    "FixedPointSolution",
    "ThroughputReport",
    "attempt_probability",
    "avg_collision_length",
    "avg_collision_length_sum",
    "avg_success_length",
    "avg_success_length_sum",
    "collision_free_start_prob",
    "csma_solve",
    "csma_throughput",
    "cw_of_stage",
    "residual_success_prob",
    "solve",
    "solve_fixed_point",
    "success_probability",
    "success_probability_closed_form",
    "throughput",
]

# |2 p_s - 1| below this selects the removable-singularity limit of the attempt probability.
SINGULAR_BAND = 1e-9
SOLVER_TOL = 1e-10
SOLVER_MAX_ITER = 200
BRACKET_EPS = 1e-12


@dataclass(frozen=True)
class FixedPointSolution:
    p_attempt: float
    p_success: float
    residual: float
    iterations: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ThroughputReport:
    p_empty: float
    p_single_success: float
    p_collision: float
    len_success: float
    len_collision: float
    throughput: float

    def to_dict(self) -> dict:
        return asdict(self)


def attempt_probability(p_success: float, params: ProtocolParams) -> float:
    """Stationary probability that a user starts transmitting in a generic slot.

    Closed form of ``sum_W pi(0, W)`` for the backoff chain in which a
    perceived success resets the stage and a perceived failure doubles the
    window up to ``cw_min * 2**w_max``.
    """
    if not 0.0 <= p_success <= 1.0:
        raise ModelDomainError(f"p_success must lie in [0, 1], got {p_success!r}", p_success)
    cw = params.cw_min
    m = params.w_max
    a = 2.0 * p_success - 1.0
    q = 1.0 - p_success
    if abs(a) < SINGULAR_BAND:
        # numerator and denominator both vanish at p_s = 1/2
        p = 4.0 / (2.0 * (cw + 1) + cw * m)
    else:
        p = 2.0 * a / (a * (cw + 1) + q * cw * (1.0 - (2.0 * q) ** m))
    if not (p > 0.0 and p <= 1.0 + 1e-12) or math.isnan(p):
        raise ModelDomainError(f"attempt probability {p!r} outside (0, 1]", p)
    return min(p, 1.0)


def collision_free_start_prob(l: int, p_attempt: float, params: ProtocolParams) -> float:
    """Probability that a user's transmission becomes collision-free after ``l`` collided slots.

    ``l = 0``: nobody else started in the same slot.  ``0 < l < L``: exactly
    one other user started, both missed each other for ``l - 1`` slots, then
    the other user detected and stopped while this user missed again.
    ``l = L``: the two ran through the whole packet.
    """
    L = params.packet_len
    if l < 0 or l > L:
        raise ValueError(f"l={l} outside [0, {L}]")
    M = params.m_users
    p = p_attempt
    if l == 0:
        return (1.0 - p) ** (M - 1)
    if M < 2:
        return 0.0
    pm = params.p_miss
    pair = (M - 1) * p * (1.0 - p) ** (M - 2)
    if l < L:
        return pair * pm ** (2 * l - 1) * (1.0 - pm)
    return pair * pm ** (2 * L - 1)


def residual_success_prob(l: int, params: ProtocolParams) -> float:
    """Probability of finishing ``l`` remaining collision-free slots without a false alarm."""
    if l < 0 or l > params.packet_len:
        raise ValueError(f"l={l} outside [0, {params.packet_len}]")
    return (1.0 - params.p_false_alarm) ** l


def _last_live_index(params: ProtocolParams) -> int:
    # largest l < L whose P_m**(2l-1) term is not an exact float zero
    L = params.packet_len
    pm = params.p_miss
    if L < 2 or pm == 0.0:
        return 0
    # P_m**k == 0.0 once k*log10(P_m) < -330 (below the smallest subnormal)
    k = 330.0 / -math.log10(pm)
    return int(min(L - 1, k / 2.0 + 2.0))


def _start_terms(p_attempt: float, params: ProtocolParams) -> tuple[np.ndarray, float]:
    """Vectorised ``collision_free_start_prob`` for l = 0..n (n < L) plus the l = L term.

    Terms with n < l < L are exact zeros in float64 and are not materialised.
    """
    L = params.packet_len
    M = params.m_users
    p = p_attempt
    pm = params.p_miss
    n = _last_live_index(params)
    terms = np.zeros(n + 1)
    terms[0] = (1.0 - p) ** (M - 1)
    if M < 2:
        return terms, 0.0
    pair = (M - 1) * p * (1.0 - p) ** (M - 2)
    l = np.arange(1, n + 1, dtype=np.float64)
    terms[1:] = pair * np.power(pm, 2.0 * l - 1.0) * (1.0 - pm)
    return terms, pair * pm ** (2 * L - 1)


def success_probability(p_attempt: float, params: ProtocolParams) -> float:
    """Perceived-success probability ``p_s`` by direct summation over the collision length."""
    if not 0.0 <= p_attempt <= 1.0:
        raise ModelDomainError(f"p_attempt must lie in [0, 1], got {p_attempt!r}", p_attempt)
    L = params.packet_len
    start, start_full = _start_terms(p_attempt, params)
    n = len(start) - 1
    finish = np.power(1.0 - params.p_false_alarm, np.arange(L, L - n - 1, -1, dtype=np.float64))
    # the l = L term pairs with an empty residual, whose success probability is 1
    return math.fsum([*(start * finish), start_full])


def success_probability_closed_form(p_attempt: float, params: ProtocolParams) -> float:
    """Geometric-series form of ``p_s``.

    This form drops the ``(1 - P_m)`` factor on the intermediate collision
    lengths, so it exceeds the direct sum by
    ``(M-1) p (1-p)^(M-2) * sum_{l=1}^{L-1} P_m^(2l) (1-P_f)^(L-l)``.
    Falls back to the direct sum where its denominator vanishes.
    """
    M = params.m_users
    L = params.packet_len
    p = p_attempt
    a = 1.0 - params.p_false_alarm
    b = params.p_miss**2
    head = (1.0 - p) ** (M - 1) * a**L
    if M < 2:
        return head
    denom = a - b
    if denom == 0.0:
        return success_probability(p_attempt, params)
    pair = (M - 1) * p * (1.0 - p) ** (M - 2)
    return head + pair * params.p_miss * (a**L - b**L) / denom


def closed_form_excess(p_attempt: float, params: ProtocolParams) -> float:
    """Exact amount by which the closed form of ``p_s`` exceeds the direct sum."""
    M = params.m_users
    L = params.packet_len
    if M < 2 or L < 2:
        return 0.0
    p = p_attempt
    pair = (M - 1) * p * (1.0 - p) ** (M - 2)
    l = np.arange(1, L, dtype=np.float64)
    tail = np.power(params.p_miss, 2.0 * l) * np.power(1.0 - params.p_false_alarm, L - l)
    return pair * math.fsum(tail)


def _composite(p: float, params: ProtocolParams) -> float:
    return attempt_probability(success_probability(p, params), params)


def _bisect(f, lo: float, hi: float, tol: float, max_iter: int, what: str) -> tuple[float, float, int]:
    f_lo = f(lo)
    if abs(f_lo) <= tol:
        return lo, f_lo, 0
    f_hi = f(hi)
    if abs(f_hi) <= tol:
        return hi, f_hi, 0
    if f_lo * f_hi > 0:
        raise SolverError(f"{what}: root not bracketed (f({lo})={f_lo}, f({hi})={f_hi})", lo, f_lo)
    mid, f_mid, it = lo, f_lo, 0
    while it < max_iter:
        it += 1
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break  # bracket is down to adjacent floats
        f_mid = f(mid)
        if abs(f_mid) <= tol:
            return mid, f_mid, it
        if (f_mid < 0) == (f_lo < 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    raise SolverError(f"{what}: no convergence after {it} iterations", mid, abs(f_mid))


def solve_fixed_point(
    params: ProtocolParams, tol: float = SOLVER_TOL, max_iter: int = SOLVER_MAX_ITER
) -> FixedPointSolution:
    """Solve ``p = attempt_probability(success_probability(p))`` by bisection on ``p``."""
    if params.mode is not Mode.FULL_DUPLEX:
        raise ValueError("solve_fixed_point expects mode=fd; use csma_solve for the baseline")

    def f(p):
        return p - _composite(p, params)

    p, res, it = _bisect(f, BRACKET_EPS, 1.0, tol, max_iter, "FD-MAC fixed point")
    return FixedPointSolution(p_attempt=p, p_success=success_probability(p, params), residual=abs(res), iterations=it)


def csma_solve(
    params: ProtocolParams, tol: float = SOLVER_TOL, max_iter: int = SOLVER_MAX_ITER
) -> FixedPointSolution:
    """Bianchi basic-access fixed point; ``p_success`` carries ``1 - p_c``."""
    if params.mode is not Mode.CSMA_CA:
        raise ValueError("csma_solve expects mode=csma")
    M = params.m_users

    def f(tau):
        return tau - attempt_probability((1.0 - tau) ** (M - 1), params)

    tau, res, it = _bisect(f, BRACKET_EPS, 1.0, tol, max_iter, "CSMA/CA fixed point")
    return FixedPointSolution(p_attempt=tau, p_success=(1.0 - tau) ** (M - 1), residual=abs(res), iterations=it)


def solve(params: ProtocolParams) -> FixedPointSolution:
    if params.mode is Mode.CSMA_CA:
        return csma_solve(params)
    return solve_fixed_point(params)


def avg_success_length(params: ProtocolParams) -> float:
    """Mean length of a collision-free transmission cut short by false alarms."""
    L = params.packet_len
    pf = params.p_false_alarm
    if pf == 0.0:
        return float(L)
    # (1 - pf)**(L - 1), kept accurate for tiny pf
    keep = math.exp((L - 1) * math.log1p(-pf))
    return -math.expm1((L - 1) * math.log1p(-pf)) / pf + keep


def avg_success_length_sum(params: ProtocolParams) -> float:
    """Defining sum of the mean collision-free transmission length (reference path)."""
    L = params.packet_len
    pf = params.p_false_alarm
    terms = [l * (1.0 - pf) ** (l - 1) * pf for l in range(1, L)]
    terms.append(L * (1.0 - pf) ** (L - 1))
    return math.fsum(terms)


def _event_probs(p: float, M: int) -> tuple[float, float, float]:
    p_empty = (1.0 - p) ** M
    p_single = M * p * (1.0 - p) ** (M - 1)
    # two or more starters; the binomial tail avoids cancellation in 1 - P_e - P_s
    p_coll = float(binom.sf(1, M, p)) if M >= 2 else 0.0
    return p_empty, p_single, p_coll


def avg_collision_length(p_attempt: float, params: ProtocolParams) -> float:
    """Mean collision duration; only two-user collisions can outlast the first slot."""
    M = params.m_users
    p = p_attempt
    _, _, p_c = _event_probs(p, M)
    if M < 2 or p_c <= 0.0:
        raise UndefinedQuantityError(f"collision probability is zero (M={M}, p={p})")
    b = params.p_miss**2
    if b == 0.0:
        return 1.0
    pair = math.comb(M, 2) * p * p * (1.0 - p) ** (M - 2)
    L = params.packet_len
    return 1.0 + pair * b * (1.0 - b ** (L - 1)) / (p_c * (1.0 - b))


def avg_collision_length_sum(p_attempt: float, params: ProtocolParams) -> float:
    """Mean collision duration summed over the two-user duration distribution (reference path).

    A two-user collision lasts ``l < L`` slots with probability
    ``b**(l-1) * (1-b)``, ``b = P_m**2``, and the full ``L`` slots with
    probability ``b**(L-1)``; larger collisions last one slot.
    """
    M = params.m_users
    p = p_attempt
    _, _, p_c = _event_probs(p, M)
    if M < 2 or p_c <= 0.0:
        raise UndefinedQuantityError(f"collision probability is zero (M={M}, p={p})")
    b = params.p_miss**2
    L = params.packet_len
    pair = math.comb(M, 2) * p * p * (1.0 - p) ** (M - 2)
    terms = [l * b ** (l - 1) * (1.0 - b) for l in range(1, L)]
    terms.append(L * b ** (L - 1))
    return (p_c - pair + pair * math.fsum(terms)) / p_c


def _report(p: float, len_success: float, len_collision_fn, params: ProtocolParams) -> ThroughputReport:
    if not 0.0 < p < 1.0:
        raise ModelDomainError(f"p_attempt must lie in (0, 1), got {p!r}", p)
    p_e, p_s, p_c = _event_probs(p, params.m_users)
    # L_c only matters when collisions can happen
    l_c = len_collision_fn() if p_c > 0.0 else 1.0
    d = params.difs
    denom = p_e + p_s * (len_success + d) + p_c * (l_c + d)
    c = p_s * len_success / denom
    return ThroughputReport(
        p_empty=p_e,
        p_single_success=p_s,
        p_collision=p_c,
        len_success=len_success,
        len_collision=l_c,
        throughput=c,
    )


def throughput(p_attempt: float, params: ProtocolParams) -> ThroughputReport:
    """FD-MAC normalized saturation throughput at attempt probability ``p_attempt``."""
    return _report(
        p_attempt,
        avg_success_length(params),
        lambda: avg_collision_length(p_attempt, params),
        params,
    )


def csma_throughput(params: ProtocolParams, solution: FixedPointSolution | None = None) -> ThroughputReport:
    """Blind CSMA/CA throughput: successes and collisions both occupy a full packet."""
    if solution is None:
        solution = csma_solve(params)
    L = float(params.packet_len)
    return _report(solution.p_attempt, L, lambda: L, params)


def analyze(params: ProtocolParams) -> tuple[FixedPointSolution, ThroughputReport]:
    """Solve the scenario's fixed point and evaluate its throughput."""
    sol = solve(params)
    if params.mode is Mode.CSMA_CA:
        return sol, csma_throughput(params, sol)
    return sol, throughput(sol.p_attempt, params)
