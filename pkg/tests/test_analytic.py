import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdmac import analytic as A
from fdmac.markov import stationary_distribution
from fdmac.params import ConfigError, Mode, ModelDomainError, ProtocolParams, UndefinedQuantityError, cw_of_stage

FIG3 = ProtocolParams(m_users=100, packet_len=1000, cw_min=2**7, w_max=8, p_false_alarm=1e-3, p_miss=1e-2, difs=2)


# -- parameters ---------------------------------------------------------------


def test_cw_of_stage():
    p = ProtocolParams(cw_min=16, w_max=11)
    assert cw_of_stage(0, p) == 16
    assert cw_of_stage(4, p) == 256
    assert cw_of_stage(11, p) == 2**15
    with pytest.raises(ValueError):
        cw_of_stage(12, p)
    with pytest.raises(ValueError):
        cw_of_stage(-1, p)


@pytest.mark.parametrize(
    "changes",
    [
        {"m_users": 0},
        {"packet_len": 0},
        {"cw_min": 0},
        {"difs": 0},
        {"w_max": -1},
        {"p_false_alarm": 1.0},
        {"p_miss": -0.1},
        {"cw_min": 2**40, "w_max": 30},
    ],
)
def test_params_reject_invalid(changes):
    with pytest.raises(ConfigError):
        ProtocolParams(**changes)


def test_params_round_trip():
    p = FIG3.with_(mode=Mode.CSMA_CA)
    assert ProtocolParams.from_dict(p.to_dict()) == p
    assert p.cw_max == 2**15
    with pytest.raises(ConfigError):
        ProtocolParams.from_dict({"bogus": 1})


# -- attempt probability ------------------------------------------------------


def test_attempt_probability_perfect_success():
    for w_max in (0, 3, 11):
        assert A.attempt_probability(1.0, ProtocolParams(cw_min=16, w_max=w_max)) == pytest.approx(2 / 17, abs=1e-15)


@pytest.mark.parametrize("ps", [0.01, 0.3, 0.5, 0.77, 1.0])
def test_attempt_probability_single_stage(ps):
    assert A.attempt_probability(ps, ProtocolParams(cw_min=16, w_max=0)) == pytest.approx(2 / 17, abs=1e-15)


def test_attempt_probability_removable_singularity():
    p = ProtocolParams(cw_min=16, w_max=8)
    limit = A.attempt_probability(0.5, p)
    assert limit == pytest.approx(4 / 162, abs=1e-15)
    # outside the switching band the raw formula is used; it must approach the limit
    for ps in (0.5 - 2e-9, 0.5 + 2e-9, 0.5 - 1e-7, 0.5 + 1e-7):
        assert A.attempt_probability(ps, p) == pytest.approx(limit, abs=1e-6)


def test_attempt_probability_domain():
    with pytest.raises(ModelDomainError):
        A.attempt_probability(1.5, FIG3)


# -- collision and residual terms ---------------------------------------------


def test_collision_free_start_prob_cases():
    p = ProtocolParams(m_users=100, packet_len=1000, p_miss=1e-2)
    assert A.collision_free_start_prob(0, 0.01, p) == pytest.approx(0.99**99, rel=1e-15)
    assert A.collision_free_start_prob(0, 0.0, p) == 1.0
    expected = 99 * 0.01 * 0.99**98 * 1e-2 * (1 - 1e-2)
    assert A.collision_free_start_prob(1, 0.01, p) == pytest.approx(expected, rel=1e-14)
    for bad in (-1, 1001):
        with pytest.raises(ValueError):
            A.collision_free_start_prob(bad, 0.01, p)


def test_collision_free_start_prob_one_slot_monte_carlo():
    # tag one attempt: competitors start independently with prob p; with exactly one
    # competitor, the tagged user survives a one-slot collision iff it misses while
    # the competitor detects
    rng = np.random.default_rng(2024)
    M, p, pm, n = 100, 0.01, 1e-2, 2_000_000
    others = rng.binomial(M - 1, p, size=n)
    tagged_miss = rng.random(n) < pm
    other_detects = rng.random(n) >= pm
    freq = np.mean((others == 1) & tagged_miss & other_detects)
    exact = A.collision_free_start_prob(1, p, ProtocolParams(m_users=M, packet_len=1000, p_miss=pm))
    se = math.sqrt(exact * (1 - exact) / n)
    assert abs(freq - exact) < 4 * se


def test_residual_success_prob():
    p = ProtocolParams(packet_len=1000, p_false_alarm=1e-3)
    assert A.residual_success_prob(0, p) == 1.0
    assert A.residual_success_prob(700, p.with_(p_false_alarm=0.0)) == 1.0
    v = A.residual_success_prob(1000, p)
    assert v == pytest.approx(0.3677, abs=1e-4)
    assert v < math.exp(-1)
    with pytest.raises(ValueError):
        A.residual_success_prob(1001, p)


# -- success probability ------------------------------------------------------


def test_success_probability_limits():
    p = ProtocolParams(m_users=100, packet_len=1000, p_false_alarm=1e-3, p_miss=1e-2)
    assert A.success_probability(0.0, p) == pytest.approx((1 - 1e-3) ** 1000, rel=1e-14)
    perfect = p.with_(p_false_alarm=0.0, p_miss=0.0)
    for q in (0.001, 0.02, 0.3):
        assert A.success_probability(q, perfect) == pytest.approx((1 - q) ** 99, rel=1e-14)


def test_success_probability_regression_pin():
    p = ProtocolParams(m_users=100, packet_len=1000, p_false_alarm=1e-3, p_miss=1e-2)
    brute = math.fsum(
        A.collision_free_start_prob(l, 0.01, p) * A.residual_success_prob(1000 - l, p) for l in range(1001)
    )
    assert A.success_probability(0.01, p) == brute
    assert A.success_probability(0.01, p) == pytest.approx(0.1372952624409768, abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(
    m=st.integers(1, 300),
    L=st.integers(1, 400),
    q=st.floats(0.0, 1.0),
    pf=st.floats(0.0, 0.5),
    pm=st.floats(0.0, 0.9),
)
def test_success_probability_equals_term_by_term_sum(m, L, q, pf, pm):
    p = ProtocolParams(m_users=m, packet_len=L, p_false_alarm=pf, p_miss=pm)
    brute = math.fsum(A.collision_free_start_prob(l, q, p) * A.residual_success_prob(L - l, p) for l in range(L + 1))
    assert abs(A.success_probability(q, p) - brute) <= 1e-15


@settings(max_examples=40, deadline=None)
@given(
    m=st.integers(2, 200),
    L=st.integers(1, 300),
    pf=st.floats(0.0, 0.49),
    pm=st.floats(0.0, 0.49),
)
def test_success_probability_non_increasing_in_attempt(m, L, pf, pm):
    p = ProtocolParams(m_users=m, packet_len=L, p_false_alarm=pf, p_miss=pm)
    values = [A.success_probability(q, p) for q in np.linspace(0.0, 1.0, 101)]
    assert all(b <= a + 1e-15 for a, b in zip(values, values[1:]))


@settings(max_examples=40, deadline=None)
@given(
    m=st.integers(2, 200),
    L=st.integers(1, 300),
    q=st.floats(0.0, 1.0),
    pf=st.floats(0.0, 0.5),
    pm=st.floats(0.0, 0.9),
)
def test_closed_form_excess_is_exact(m, L, q, pf, pm):
    p = ProtocolParams(m_users=m, packet_len=L, p_false_alarm=pf, p_miss=pm)
    gap = A.success_probability_closed_form(q, p) - A.success_probability(q, p)
    assert gap == pytest.approx(A.closed_form_excess(q, p), abs=1e-14)


def test_closed_form_falls_back_on_zero_denominator():
    # 1 - P_f - P_m^2 == 0
    p = ProtocolParams(m_users=10, packet_len=20, p_false_alarm=0.75, p_miss=0.5)
    assert A.success_probability_closed_form(0.1, p) == A.success_probability(0.1, p)


# -- fixed point --------------------------------------------------------------


def test_fixed_point_lone_user():
    for pm in (0.0, 0.3):
        p = ProtocolParams(m_users=1, packet_len=50, cw_min=8, w_max=4, p_false_alarm=0.0, p_miss=pm)
        sol = A.solve_fixed_point(p)
        assert sol.p_success == 1.0
        assert sol.p_attempt == pytest.approx(2 / 9, abs=1e-10)


def test_fixed_point_small_network_against_markov_chain():
    p = ProtocolParams(m_users=2, packet_len=10, cw_min=4, w_max=2, p_false_alarm=0.01, p_miss=0.1, difs=2)
    sol = A.solve_fixed_point(p)
    assert abs(sol.p_attempt - A.attempt_probability(A.success_probability(sol.p_attempt, p), p)) <= 1e-10
    assert sol.residual <= 1e-10
    chain = stationary_distribution(sol.p_success, p)
    assert chain.transmit_probability() == pytest.approx(sol.p_attempt, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(
    m=st.integers(1, 200),
    L=st.integers(1, 2000),
    k=st.integers(1, 10),
    w_max=st.integers(0, 10),
    pf=st.floats(0.0, 0.05),
    pm=st.floats(0.0, 0.3),
)
def test_fixed_point_resubstitution(m, L, k, w_max, pf, pm):
    p = ProtocolParams(m_users=m, packet_len=L, cw_min=2**k, w_max=w_max, p_false_alarm=pf, p_miss=pm)
    sol = A.solve_fixed_point(p)
    assert sol.residual <= 1e-10
    assert 0 < sol.p_attempt <= 1 and 0 < sol.p_success <= 1
    assert A.success_probability(sol.p_attempt, p) == sol.p_success
    assert A.attempt_probability(sol.p_success, p) == pytest.approx(sol.p_attempt, abs=1e-10)


def test_fixed_point_without_randomness():
    # CW_min = 1 and a single stage: everyone transmits every slot and nobody ever perceives success
    p = ProtocolParams(m_users=2, packet_len=1, cw_min=1, w_max=0, p_miss=0.0)
    sol = A.solve_fixed_point(p)
    assert (sol.p_attempt, sol.p_success) == (1.0, 0.0)
    with pytest.raises(ModelDomainError):
        A.throughput(sol.p_attempt, p)


def test_fixed_point_rejects_csma_mode():
    with pytest.raises(ValueError):
        A.solve_fixed_point(FIG3.with_(mode=Mode.CSMA_CA))


def test_fig3_operating_point():
    sol = A.solve_fixed_point(FIG3)
    rep = A.throughput(sol.p_attempt, FIG3)
    assert rep.len_collision < 1.01
    # frozen model value at CW_min = 2^7; see README for where the peak lies
    assert rep.throughput == pytest.approx(0.978643511615272, abs=1e-9)


# -- lengths and throughput ---------------------------------------------------


def test_avg_success_length():
    assert A.avg_success_length(ProtocolParams(packet_len=1000, p_false_alarm=0.0)) == 1000.0
    assert A.avg_success_length(ProtocolParams(packet_len=1, p_false_alarm=0.3)) == 1.0
    assert A.avg_success_length(ProtocolParams(packet_len=10**6, p_false_alarm=1e-3)) == pytest.approx(1000, rel=1e-3)


@settings(max_examples=40, deadline=None)
@given(L=st.integers(1, 10_000), pf=st.floats(1e-9, 0.99))
def test_avg_success_length_matches_defining_sum(L, pf):
    p = ProtocolParams(packet_len=L, p_false_alarm=pf)
    assert A.avg_success_length(p) == pytest.approx(A.avg_success_length_sum(p), rel=1e-12)
    assert 1.0 <= A.avg_success_length(p) <= L


def test_avg_collision_length():
    assert A.avg_collision_length(0.05, ProtocolParams(m_users=30, p_miss=0.0)) == 1.0
    p = ProtocolParams(m_users=2, packet_len=10, p_miss=0.1)
    expected = 1 + (0.25 / 0.25) * 0.01 * (1 - 0.1**18) / (1 - 0.01)
    assert A.avg_collision_length(0.5, p) == pytest.approx(expected, rel=1e-14)
    assert A.avg_collision_length(0.5, p) == pytest.approx(A.avg_collision_length_sum(0.5, p), rel=1e-14)
    with pytest.raises(UndefinedQuantityError):
        A.avg_collision_length(0.5, ProtocolParams(m_users=1))


@settings(max_examples=40, deadline=None)
@given(m=st.integers(2, 300), L=st.integers(1, 3000), q=st.floats(1e-6, 0.999), pm=st.floats(0.0, 0.95))
def test_avg_collision_length_matches_defining_sum(m, L, q, pm):
    p = ProtocolParams(m_users=m, packet_len=L, p_miss=pm)
    try:
        exact = A.avg_collision_length_sum(q, p)
    except UndefinedQuantityError:
        return
    assert A.avg_collision_length(q, p) == pytest.approx(exact, rel=1e-11)
    assert A.avg_collision_length(q, p) >= 1.0


def test_throughput_single_user_closed_form():
    p = ProtocolParams(m_users=1, packet_len=10, cw_min=4, w_max=3, p_false_alarm=0.0, difs=2)
    for q in (0.05, 0.4, 0.9):
        rep = A.throughput(q, p)
        assert rep.throughput == pytest.approx(q * 10 / ((1 - q) + q * 12), rel=1e-14)
        assert rep.p_collision == 0.0


def test_throughput_vanishes_with_attempt_rate():
    for p in (FIG3, FIG3.with_(mode=Mode.CSMA_CA)):
        rep = A.throughput(1e-12, p) if p.mode is Mode.FULL_DUPLEX else A.csma_throughput(
            p, A.FixedPointSolution(1e-12, 1.0, 0.0, 0)
        )
        assert rep.throughput < 1e-6


@settings(max_examples=60, deadline=None)
@given(m=st.integers(1, 500), L=st.integers(1, 5000), q=st.floats(1e-9, 1 - 1e-9), pf=st.floats(0, 0.5), pm=st.floats(0, 0.5))
def test_throughput_report_simplex(m, L, q, pf, pm):
    rep = A.throughput(q, ProtocolParams(m_users=m, packet_len=L, p_false_alarm=pf, p_miss=pm))
    assert rep.p_empty + rep.p_single_success + rep.p_collision == pytest.approx(1.0, abs=1e-12)
    assert 0.0 <= rep.throughput <= 1.0
    assert rep.len_collision >= 1.0
    assert 1.0 <= rep.len_success <= L


def test_degenerate_exactness():
    assert A.avg_success_length(ProtocolParams(packet_len=777, p_false_alarm=0.0)) == 777
    assert A.avg_collision_length(0.01, ProtocolParams(m_users=100, p_miss=0.0)) == 1.0
    for ps in np.linspace(0.01, 1.0, 23):
        assert A.attempt_probability(float(ps), ProtocolParams(cw_min=32, w_max=0)) == pytest.approx(2 / 33, abs=1e-16)
    assert A.solve_fixed_point(ProtocolParams(m_users=1, p_false_alarm=0.0)).p_success == 1.0


# -- CSMA/CA baseline ---------------------------------------------------------


def test_csma_solve_degenerate():
    p = ProtocolParams(m_users=1, cw_min=16, w_max=6, mode=Mode.CSMA_CA)
    assert A.csma_solve(p).p_attempt == pytest.approx(2 / 17, abs=1e-10)
    for m in (2, 50, 400):
        p = ProtocolParams(m_users=m, cw_min=16, w_max=0, mode=Mode.CSMA_CA)
        assert A.csma_solve(p).p_attempt == pytest.approx(2 / 17, abs=1e-10)
    with pytest.raises(ValueError):
        A.csma_solve(FIG3)


def test_csma_solve_fig3_point():
    p = FIG3.with_(mode=Mode.CSMA_CA)
    sol = A.csma_solve(p)
    assert sol.residual <= 1e-10
    tau = sol.p_attempt
    pc = 1 - (1 - tau) ** 99
    bianchi = 2 * (1 - 2 * pc) / ((1 - 2 * pc) * 129 + pc * 128 * (1 - (2 * pc) ** 8))
    assert tau == pytest.approx(bianchi, abs=1e-10)
    assert sol.p_success == pytest.approx(1 - pc, abs=1e-15)
    # the root is bracketed: f changes sign around it
    f = lambda t: t - A.attempt_probability((1 - t) ** 99, p)  # noqa: E731
    assert f(tau - 1e-6) < 0 < f(tau + 1e-6)


def test_csma_throughput_long_packet_limit():
    p = FIG3.with_(mode=Mode.CSMA_CA)
    sol = A.csma_solve(p)
    rep = A.csma_throughput(p.with_(packet_len=10**9), sol)
    assert rep.len_success == rep.len_collision == 1e9
    assert rep.throughput == pytest.approx(rep.p_single_success / (rep.p_single_success + rep.p_collision), rel=1e-7)
