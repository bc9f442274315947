import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from targetcharge.boundary_wrapper import (
    BOUNDARY,
    FunctionOracle,
    boundary_probability,
    run_twice,
    run_twice_sample_codes,
    wrap,
    wrap_sample_codes,
    wrapped_binary,
    wrapped_probabilities,
)
from targetcharge.errors import ContractError
from targetcharge.mechanisms import AboveThreshold, ExponentialChoice, LinearQuery
from targetcharge.privacy_core import PrivacyParams, boundary_q, run_twice_q, wrapper_privacy
from targetcharge.rng import RandomStream
from targetcharge.verifier import DiscreteDistribution, decomposition_search, exact_divergence

from conftest import make_dataset


def bernoulli_oracle(pi, eps=0.1):
    return FunctionOracle(
        sampler=lambda d, rng: int(rng.uniform() < pi),
        mode_oracle=lambda d: (1, pi) if pi > 0.5 else (0, 1 - pi),
        privacy=PrivacyParams(eps, 0.0),
    )


def test_coin_formula():
    assert boundary_probability(0) == 0
    assert boundary_probability(0.5) == pytest.approx(1 / 3)
    assert boundary_probability(0.1) == pytest.approx(1 / 11)
    assert boundary_probability(0.9) == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        boundary_probability(-0.1)


def test_deterministic_mechanism_never_boundary():
    mech = bernoulli_oracle(0.0)
    outs = [wrap(mech, None, RandomStream(1, i)) for i in range(200)]
    assert not any(o.boundary for o in outs)
    assert {o.label for o in outs} == {0}
    assert outs[0].privacy.epsilon == pytest.approx(wrapper_privacy(0.1))
    assert outs[0].q == boundary_q(0.1)


def test_half_mass_gives_one_third_boundary():
    w = wrapped_binary(0.5)
    assert w[2] == pytest.approx(1 / 3, rel=1e-15)
    assert w.sum() == pytest.approx(1.0)


def test_dominant_report_probability():
    # dominant outcome with probability p = 0.9 is reported with probability p / (2 - p)
    w = wrapped_binary(0.1)
    assert w[0] == pytest.approx(0.9 / 1.1, rel=1e-14)
    assert w[0] == pytest.approx(9 / 11, rel=1e-14)
    mech = AboveThreshold(LinearQuery(lambda r: 1.0, 0.0), 1.0)
    data = make_dataset(0)
    data_p = mech.outcome_probabilities(data)
    exact = wrapped_probabilities(data_p)
    codes = wrap_sample_codes(mech, data, RandomStream(9), 1_000_000)
    for code, label in enumerate(mech.labels + (BOUNDARY,)):
        p = exact[label]
        assert (codes == code).mean() == pytest.approx(p, abs=3 * math.sqrt(p * (1 - p) / 1e6) + 1e-12)


def test_wrap_rejects_approximate_dp():
    mech = FunctionOracle(lambda d, r: 0, lambda d: (0, 1.0), PrivacyParams(0.1, 1e-6))
    with pytest.raises(ContractError):
        wrap(mech, None, RandomStream(0))
    with pytest.raises(ContractError):
        wrapped_probabilities({BOUNDARY: 1.0})


def test_wrap_scalar_frequencies():
    mech = bernoulli_oracle(0.5)
    outs = [wrap(mech, None, RandomStream(3, i)).label for i in range(30_000)]
    freq = outs.count(BOUNDARY) / len(outs)
    assert freq == pytest.approx(1 / 3, abs=4 * math.sqrt(2 / 9 / 3e4))


def test_run_twice_deterministic_and_uniform():
    det = lambda d, rng: "a"
    assert not any(run_twice(det, None, RandomStream(0, i), epsilon=0.1).target_hit for i in range(100))
    coin = lambda d, rng: int(rng.uniform() < 0.5)
    hits = [run_twice(coin, None, RandomStream(1, i), epsilon=0.1).target_hit for i in range(20_000)]
    assert np.mean(hits) == pytest.approx(0.5, abs=4 * math.sqrt(0.25 / 2e4))
    out = run_twice(coin, None, RandomStream(0), epsilon=0.1)
    assert out.privacy.epsilon == 0.2 and out.q == run_twice_q(0.1)


def test_run_twice_vectorized_codes():
    mech = AboveThreshold(LinearQuery(lambda r: 1.0, 0.0), 1.0)
    codes = run_twice_sample_codes(mech, make_dataset(0), RandomStream(2), 200_000)
    p = mech.outcome_probabilities(make_dataset(0))["Above"]
    hit = 2 * p * (1 - p)
    disagree = np.isin(codes, [1, 2]).mean()
    assert disagree == pytest.approx(hit, abs=4 * math.sqrt(hit * (1 - hit) / 2e5))


def _feasible(pi, pi2, eps):
    e = math.exp(eps)
    return pi <= e * pi2 and pi2 <= e * pi and (1 - pi) <= e * (1 - pi2) and (1 - pi2) <= e * (1 - pi)


@pytest.mark.parametrize("eps", [0.1, 0.5])
def test_wrapped_divergence_bound_on_grid(eps):
    grid = np.linspace(0, 1, 61)
    worst = 0.0
    for a in grid:
        for b in grid:
            if not _feasible(a, b, eps):
                continue
            P = DiscreteDistribution((0, 1, BOUNDARY), tuple(wrapped_binary(a)))
            Q = DiscreteDistribution((0, 1, BOUNDARY), tuple(wrapped_binary(b)))
            worst = max(worst, exact_divergence(P, Q))
    assert worst <= wrapper_privacy(eps) + 1e-9


@given(st.floats(min_value=0.0, max_value=1.0), st.floats(min_value=0.05, max_value=1.0), st.floats(min_value=-1, max_value=1))
def test_wrapped_binary_pair_property(pi, eps, t):
    pi2 = min(1.0, max(0.0, pi * math.exp(eps * t)))
    if not _feasible(pi, pi2, eps):
        return
    P = DiscreteDistribution((0, 1, BOUNDARY), tuple(wrapped_binary(pi)))
    Q = DiscreteDistribution((0, 1, BOUNDARY), tuple(wrapped_binary(pi2)))
    assert exact_divergence(P, Q) <= wrapper_privacy(eps) + 1e-9


def test_multi_outcome_boundary_target_certified():
    eps = 0.3
    scores = [LinearQuery(lambda r: 1.0), LinearQuery(lambda r: 0.5), LinearQuery(lambda r: 0.0)]
    mech = ExponentialChoice(scores, eps)
    d0 = make_dataset(2)
    d1 = d0.add({"i": 99})
    dist = []
    for d in (d0, d1):
        w = wrapped_probabilities(mech.outcome_probabilities(d))
        dist.append(DiscreteDistribution.from_dict(w))
    assert exact_divergence(dist[0], dist[1]) <= wrapper_privacy(eps) + 1e-9
    witness = decomposition_search(dist[0], dist[1], [BOUNDARY], wrapper_privacy(eps), 0.0, boundary_q(eps))
    assert witness is not None
    assert min(witness.target_masses([BOUNDARY])) >= boundary_q(eps) - 1e-9
