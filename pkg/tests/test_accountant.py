import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from targetcharge.accountant import (
    CallStatus,
    SessionConfig,
    SessionStatus,
    open_session,
    output_digest,
    report_bound,
)
from targetcharge.errors import ConfigurationError, ContractError
from targetcharge.privacy_core import TailParams, delta_star, not_prior_q, tct_bound


def test_open_session():
    s = open_session(SessionConfig(tau=5, epsilon=0.1))
    assert s.counters == [0] and s.status is SessionStatus.RUNNING
    assert s.config.q == not_prior_q(0.1)
    assert open_session(SessionConfig(tau=5, epsilon=0.1, num_targets=3)).counters == [0, 0, 0]


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(tau=0, epsilon=0.1),
        dict(tau=3, epsilon=-1),
        dict(tau=3, epsilon=0.1, tau_delta=-1e-9),
        dict(tau=3, epsilon=0.1, q=0),
        dict(tau=3, epsilon=0.1, q=1.5),
        dict(tau=3, epsilon=0.1, num_targets=0),
        dict(tau=3, epsilon=0.1, alpha=0),
    ],
)
def test_invalid_config(kwargs):
    with pytest.raises(ConfigurationError):
        SessionConfig(**kwargs)


def test_halts_on_tau_th_hit():
    s = open_session(SessionConfig(tau=2, epsilon=0.1))
    statuses = [s.register_call(0.1, 0.0, [i in (3, 9)]) for i in range(1, 11)]
    assert statuses[:8] == [CallStatus.ACCEPTED] * 8
    assert statuses[8] is CallStatus.ACCEPTED_AND_HALTED
    assert statuses[9] is CallStatus.REJECTED_ALREADY_HALTED
    assert s.status is SessionStatus.HALTED_HITS
    assert len(s.ledger) == 9


def test_delta_budget_refused_before_execution():
    s = open_session(SessionConfig(tau=5, epsilon=0.1, tau_delta=1e-6))
    assert s.register_call(0.1, 6e-7, [False]) is CallStatus.ACCEPTED
    assert s.admit(0.1, 6e-7) is CallStatus.REJECTED_DELTA_BUDGET
    assert s.status is SessionStatus.HALTED_DELTA_BUDGET
    assert s.c_delta == 6e-7 and len(s.ledger) == 1


def test_delta_budget_via_register_call():
    s = open_session(SessionConfig(tau=5, epsilon=0.1, tau_delta=1e-6))
    assert s.register_call(0.1, 6e-7, [False]) is CallStatus.ACCEPTED
    assert s.register_call(0.1, 6e-7, [False]) is CallStatus.REJECTED_DELTA_BUDGET
    assert s.register_call(0.1, 0.0, [False]) is CallStatus.REJECTED_ALREADY_HALTED


def test_multi_target_min_counter():
    s = open_session(SessionConfig(tau=1, epsilon=0.1, num_targets=2))
    assert s.register_call(0.1, 0, [True, False]) is CallStatus.ACCEPTED
    assert s.counters == [1, 0] and s.running
    assert s.register_call(0.1, 0, [True, True]) is CallStatus.ACCEPTED_AND_HALTED
    assert s.counters == [2, 1]


def test_contract_errors():
    s = open_session(SessionConfig(tau=2, epsilon=0.1, num_targets=2))
    with pytest.raises(ContractError):
        s.register_call(0.1, 0, [True])
    with pytest.raises(ContractError):
        s.admit(0.1, 0, q=0.01)
    with pytest.raises(ContractError):
        s.admit(-0.1, 0)


def test_epsilon_cap():
    s = open_session(SessionConfig(tau=2, epsilon=0.1))
    assert s.admit(0.2) is None
    assert s.register_call(0.21, 0, [True]) is CallStatus.REJECTED_EPSILON_CAP
    assert s.running and not s.ledger


def test_report_fresh_and_mid_session():
    cfg = SessionConfig(tau=20, epsilon=0.05, q=0.5)
    s = open_session(cfg)
    fresh = s.privacy_report()
    assert fresh.epsilon == pytest.approx(4.0)
    assert fresh.delta == pytest.approx(math.exp(-5))
    cfg = SessionConfig(tau=20, epsilon=0.05, q=0.5, tau_delta=1e-6)
    s = open_session(cfg)
    s.register_call(0.05, 1e-7, [False])
    assert s.privacy_report().delta == pytest.approx(1e-7 + math.exp(-5), rel=1e-12)
    assert s.privacy_report(1e-9).as_tuple() == tct_bound(TailParams(20, 1.0), 0.05, 0.5, 1e-7, 1e-9).as_tuple()


def test_report_k_targets_multiplies_tail_delta():
    one = open_session(SessionConfig(tau=20, epsilon=0.05, q=0.5)).privacy_report()
    two = open_session(SessionConfig(tau=20, epsilon=0.05, q=0.5, num_targets=2)).privacy_report()
    assert two.epsilon == pytest.approx(one.epsilon, rel=1e-15)
    assert two.delta == pytest.approx(2 * one.delta, rel=1e-12)
    cfg = SessionConfig(tau=20, epsilon=0.05, q=0.5, num_targets=3, tau_delta=1e-3)
    bound = report_bound(cfg, 0.05, 1e-4, 1e-9)
    assert bound.delta == pytest.approx(1e-4 + 3 * (delta_star(20, 1.0) + 1e-9), rel=1e-12)


def test_report_uses_largest_call_epsilon():
    s = open_session(SessionConfig(tau=3, epsilon=0.1, q=not_prior_q(0.2)))
    s.register_call(0.2, 0, [False])
    assert s.charged_epsilon() == 0.2


def test_output_digest_is_canonical():
    assert output_digest({"a": 1, "b": 2}) == output_digest({"b": 2, "a": 1})
    assert output_digest(None) != output_digest(0)
    assert len(output_digest([1, 2])) == 16


hit_sequences = st.lists(st.booleans(), min_size=1, max_size=60)


@settings(max_examples=1000)
@given(st.integers(min_value=1, max_value=6), hit_sequences)
def test_single_target_halting_property(tau, hits):
    s = open_session(SessionConfig(tau=tau, epsilon=0.1))
    statuses = [s.register_call(0.1, 0, [h]) for h in hits]
    cumulative = 0
    halted_at = None
    for i, h in enumerate(hits):
        cumulative += h
        if cumulative == tau:
            halted_at = i
            break
    for i, status in enumerate(statuses):
        if halted_at is None or i < halted_at:
            assert status is CallStatus.ACCEPTED
        elif i == halted_at:
            assert status is CallStatus.ACCEPTED_AND_HALTED
        else:
            assert status is CallStatus.REJECTED_ALREADY_HALTED
    assert s.counters == [min(tau, sum(hits))]
    s.check_replay()


@settings(max_examples=300)
@given(
    st.integers(min_value=1, max_value=4),
    st.integers(min_value=2, max_value=3),
    st.lists(st.lists(st.booleans(), min_size=3, max_size=3), min_size=1, max_size=40),
)
def test_multi_target_halting_property(tau, k, rows):
    s = open_session(SessionConfig(tau=tau, epsilon=0.1, num_targets=k))
    counters = [0] * k
    halted = False
    for row in rows:
        flags = row[:k]
        status = s.register_call(0.1, 0, flags)
        if halted:
            assert status is CallStatus.REJECTED_ALREADY_HALTED
            continue
        counters = [c + f for c, f in zip(counters, flags)]
        halted = min(counters) >= tau
        assert status is (CallStatus.ACCEPTED_AND_HALTED if halted else CallStatus.ACCEPTED)
    assert s.counters == counters
    s.check_replay()


@settings(max_examples=300)
@given(
    st.lists(st.tuples(st.booleans(), st.sampled_from([0.0, 1e-7, 3e-7, 5e-7])), min_size=1, max_size=30)
)
def test_delta_refusal_property(calls):
    s = open_session(SessionConfig(tau=100, epsilon=0.1, tau_delta=1e-6))
    for hit, delta in calls:
        before = (list(s.counters), s.c_delta, len(s.ledger))
        will_fit = s.running and s.c_delta + delta <= 1e-6
        status = s.register_call(0.1, delta, [hit])
        if will_fit:
            assert status.accepted
        else:
            assert not status.accepted
            assert (s.counters, s.c_delta, len(s.ledger)) == before
        assert s.c_delta <= 1e-6
    s.check_replay()


def test_replay_detects_tampering():
    s = open_session(SessionConfig(tau=5, epsilon=0.1))
    for h in (True, False, True):
        s.register_call(0.1, 0, [h])
    assert s.replay() == ([2], 0.0)
    s.counters[0] = 1
    with pytest.raises(AssertionError):
        s.check_replay()


def test_ledger_records_serialize():
    s = open_session(SessionConfig(tau=5, epsilon=0.1))
    s.register_call(0.1, 0, [True], tag="above_threshold", digest="abc", q=s.config.q)
    rec = s.ledger[0].as_dict()
    assert rec["op"] == "above_threshold" and rec["hits"] == [True] and rec["digest"] == "abc"
