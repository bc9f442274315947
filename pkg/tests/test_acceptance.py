"""Acceptance criteria 1-10, one test each; every test prints a PASS/FAIL line."""

import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np

from conftest import ACCEPTANCE_LINES
from targetcharge.accountant import CallStatus, SessionConfig, open_session
from targetcharge.boundary_wrapper import BOUNDARY, run_twice_sample_codes, wrap_sample_codes, wrapped_binary
from targetcharge.engine import recompute_bounds, verify_report
from targetcharge.mechanisms import AboveThreshold, BetweenThresholds, Dataset, LinearQuery
from targetcharge.privacy_core import (
    between_q,
    boundary_q,
    chernoff_constant,
    not_prior_q,
    run_twice_q,
    wrapper_privacy,
)
from targetcharge.rng import RandomStream
from targetcharge.selection import Candidate, stop_at_count, sweep_simulate, top_k_oneshot
from targetcharge.svt_individual import svt_open, svt_query
from targetcharge.verifier import (
    DiscreteDistribution,
    binary_decomposition,
    check_indistinguishable,
    decomposition_search,
    exact_divergence,
    mc_privacy_audit,
)

FIXTURES = Path(__file__).parent / "fixtures"
Ber = DiscreteDistribution.bernoulli


def verdict(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def feasible(pi0, pi1, eps):
    e = math.exp(eps)
    return pi0 <= e * pi1 and pi1 <= e * pi0 and (1 - pi0) <= e * (1 - pi1) and (1 - pi1) <= e * (1 - pi0)


def random_feasible_pair(gen, eps):
    """(pi0, pi1) with pi0 <= pi1 and Ber(pi0), Ber(pi1) eps-indistinguishable."""
    pi0 = float(gen.uniform(0, 1))
    e = math.exp(eps)
    hi = min(1.0, e * pi0, 1 - (1 - pi0) / e)
    return pi0, pi0 + float(gen.uniform(0, 1)) * max(0.0, hi - pi0)


# -- 1 -----------------------------------------------------------------------


def test_criterion_1_formula_golden_values():
    checks = {
        "not_prior_q(0) = 0.5": not_prior_q(0) == 0.5,
        "run_twice_q(0.1) = 0.258 +- 1e-3": abs(run_twice_q(0.1) - 0.258) <= 1e-3,
        "boundary_q(1e-6) = 2/7 +- 1e-5": abs(boundary_q(1e-6) - 2 / 7) <= 1e-5,
        "raw constants 10.6/3.26/0.31": [f"{chernoff_constant(0.5):.3g}", f"{chernoff_constant(1.0):.3g}", f"{chernoff_constant(5.0):.2g}"]
        == ["10.6", "3.26", "0.31"],
    }
    failed = [k for k, v in checks.items() if not v]
    verdict(1, not failed, "formula golden values" + (f" failed: {failed}" if failed else ""))


# -- 2 -----------------------------------------------------------------------


def test_criterion_2_binary_decomposition_identities():
    gen = np.random.default_rng(2)
    worst_recon = worst_div_excess = worst_target_gap = 0.0
    count = 0
    while count < 500:
        eps = float(gen.uniform(0.01, 2.0))
        pi0, pi1 = random_feasible_pair(gen, eps)
        if not check_indistinguishable(Ber(pi0), Ber(pi1), eps):
            continue
        count += 1
        dec = binary_decomposition(pi0, pi1, eps)
        recon = max(np.max(np.abs(dec.reconstruct(0) - Ber(pi0).array)), np.max(np.abs(dec.reconstruct(1) - Ber(pi1).array)))
        worst_recon = max(worst_recon, recon)
        worst_div_excess = max(worst_div_excess, exact_divergence(dec.branch0, dec.branch1) - eps)
        worst_target_gap = max(worst_target_gap, not_prior_q(eps) - min(dec.target_masses([1])))
    # tightness on the extremal grid pi1 = e^eps pi0
    worst_tight = 0.0
    for eps in np.linspace(0.01, 2.0, 25):
        for pi0 in np.linspace(1e-3, 1.0, 40):
            pi1 = math.exp(eps) * pi0
            if pi1 > 1 or not check_indistinguishable(Ber(pi0), Ber(pi1), eps):
                continue
            dec = binary_decomposition(pi0, pi1, eps)
            worst_tight = max(worst_tight, abs(min(dec.target_masses([1])) - not_prior_q(eps)))
    ok = worst_recon <= 1e-12 and worst_div_excess <= 1e-10 and worst_target_gap <= 1e-12 and worst_tight <= 1e-9
    verdict(
        2,
        ok,
        f"500 pairs: recon {worst_recon:.2e}, divergence excess {worst_div_excess:.2e}, "
        f"target shortfall {worst_target_gap:.2e}, extremal tightness {worst_tight:.2e}",
    )


# -- 3 -----------------------------------------------------------------------


def test_criterion_3_not_prior_certification():
    gen = np.random.default_rng(3)
    binary_ok = 0
    for _ in range(200):
        eps = float(gen.uniform(0.01, 2.0))
        pi0, pi1 = random_feasible_pair(gen, eps)
        if gen.uniform() < 0.5:
            pi0, pi1 = pi1, pi0
        prior = int(gen.integers(2))
        target = [1 - prior]
        binary_ok += decomposition_search(Ber(pi0), Ber(pi1), target, eps, 0.0, not_prior_q(eps)) is not None
    multi_ok = multi = 0
    while multi < 50:
        n = int(gen.integers(2, 6))
        eps = float(gen.uniform(0.01, 2.0))
        a = gen.dirichlet(np.ones(n))
        b = a * np.exp(eps * gen.uniform(-1, 1, n))
        b /= b.sum()
        Z0 = DiscreteDistribution(tuple(range(n)), tuple(a))
        Z1 = DiscreteDistribution(tuple(range(n)), tuple(b))
        if exact_divergence(Z0, Z1) > eps:
            continue
        multi += 1
        prior = int(gen.integers(n))
        target = [i for i in range(n) if i != prior]
        multi_ok += decomposition_search(Z0, Z1, target, eps, 0.0, not_prior_q(eps)) is not None
    inflated_rejected = inflated = 0
    for eps in (0.05, 0.1, 0.5, 1.0, 2.0):
        for pi0 in (0.01, 0.05, 0.1):
            Z0, Z1 = Ber(pi0), Ber(math.exp(eps) * pi0)
            inflated += 1
            inflated_rejected += decomposition_search(Z0, Z1, [1], eps, 0.0, 1.05 * not_prior_q(eps)) is None
    ok = binary_ok == 200 and multi_ok == 50 and inflated_rejected == inflated
    verdict(
        3, ok, f"binary {binary_ok}/200, multi-outcome {multi_ok}/50, 5% inflation rejected {inflated_rejected}/{inflated}"
    )


# -- 4 -----------------------------------------------------------------------


def test_criterion_4_boundary_wrapper_certification():
    grid = np.linspace(0.0, 1.0, 200)
    outcomes = (0, 1, BOUNDARY)
    wrapped = [DiscreteDistribution(outcomes, tuple(wrapped_binary(p))) for p in grid]
    details, ok = [], True
    for eps in (0.05, 0.1, 0.3, 1.0):
        t = wrapper_privacy(eps)
        worst = 0.0
        certified = extrema = 0
        for i, a in enumerate(grid):
            cols = [j for j, b in enumerate(grid) if feasible(a, b, eps)]
            for j in cols:
                worst = max(worst, exact_divergence(wrapped[i], wrapped[j]))
            for j in {cols[0], cols[-1]}:
                extrema += 1
                dec = decomposition_search(wrapped[i], wrapped[j], [BOUNDARY], t, 0.0, boundary_q(eps))
                certified += dec is not None
        ok &= worst <= t + 1e-9 and certified == extrema
        details.append(f"eps={eps}: max div/eps {worst / eps:.4f}, certified {certified}/{extrema}")
    verdict(4, ok, "; ".join(details))


# -- 5 -----------------------------------------------------------------------


def test_criterion_5_between_thresholds():
    worst_mass = worst_q = 0.0
    for eps in (0.01, 0.1, 0.5, 1.0, 2.0):
        for gap in (0.1, 1.0, 5.0, 20.0):
            for below in (0.0, 0.3, 1.0, 4.0):
                t_l = 3.0
                f = t_l - below
                mech = BetweenThresholds(lambda d, f=f: f, t_l, t_l + gap, eps)
                p = mech.outcome_probabilities(Dataset())
                pi_l = 1 - 0.5 * math.exp(-eps * (t_l - f))
                pi_top = 0.5 * (math.exp(-eps * (t_l - f)) - math.exp(-eps * (t_l + gap - f)))
                pi_h = 0.5 * math.exp(-eps * (t_l + gap - f))
                worst_mass = max(worst_mass, abs(p["L"] - pi_l), abs(p["Between"] - pi_top), abs(p["H"] - pi_h))
            identity = (1 - math.exp(-gap * eps)) / (math.exp(eps) + 1)
            worst_q = max(worst_q, abs(between_q(eps, gap) - identity))
    ok = worst_mass <= 1e-12 and worst_q <= 1e-12
    verdict(5, ok, f"closed-form mass error {worst_mass:.2e}, q identity error {worst_q:.2e}")


# -- 6 -----------------------------------------------------------------------


class GridScore:
    def __init__(self, values, probs):
        self.values, self.cdf = values, np.cumsum(probs)
        self.cdf[-1] = 1.0

    def __call__(self, data, rng):
        j = min(int(np.searchsorted(self.cdf, rng.uniform(), side="right")), len(self.values) - 1)
        return f"y{j}", float(self.values[j])


def test_criterion_6_selection_equivalence():
    from targetcharge.privacy_core import PrivacyParams

    gen = np.random.default_rng(6)
    eps = 0.3
    cfg = SessionConfig(tau=10, epsilon=eps, q=not_prior_q(2 * eps))
    agree = 0
    for trial in range(100):
        m = int(gen.integers(1, 6))
        size = int(gen.integers(2, 7))
        values = np.sort(gen.choice(np.arange(-20, 21), size=size, replace=False))[::-1].astype(float)
        cands = [Candidate(i, GridScore(values, gen.dirichlet(np.ones(size))), PrivacyParams(eps, 0.0)) for i in range(m)]
        k = int(gen.integers(1, m + 1))
        s_top, s_sweep = open_session(cfg), open_session(cfg)
        top = top_k_oneshot(s_top, cands, k, Dataset(), RandomStream(trial))
        sweep = sweep_simulate(cands, stop_at_count(k), values, Dataset(), RandomStream(trial), s_sweep)
        hits_top = [r.epsilon_charged for r in s_top.ledger if r.hit_flags[0]]
        hits_sweep = [r.epsilon_charged for r in s_sweep.ledger if r.hit_flags[0]]
        agree += (
            top.winners == sweep.winners
            and s_top.counters == s_sweep.counters == [k]
            and hits_top == hits_sweep == [2 * eps] * k
        )
    verdict(6, agree == 100, f"{agree}/100 instances with identical winners and k hits at 2*eps")


# -- 7 -----------------------------------------------------------------------


def test_criterion_7_halting_semantics():
    gen = np.random.default_rng(7)
    bad = []
    for trial in range(1000):
        tau = int(gen.integers(1, 6))
        k = 1 if trial < 500 else int(gen.integers(2, 4))
        s = open_session(SessionConfig(tau=tau, epsilon=0.1, num_targets=k, tau_delta=1e-6))
        counters = [0] * k
        c_delta, halted = 0.0, False
        for _ in range(int(gen.integers(1, 40))):
            flags = [bool(x) for x in gen.random(k) < 0.4]
            delta = float(gen.choice([0.0, 0.0, 1e-7, 4e-7]))
            status = s.register_call(0.1, delta, flags)
            if halted:
                expected = CallStatus.REJECTED_ALREADY_HALTED
            elif c_delta + delta > 1e-6:
                expected, halted = CallStatus.REJECTED_DELTA_BUDGET, True
            else:
                c_delta += delta
                counters = [c + f for c, f in zip(counters, flags)]
                halted = min(counters) >= tau
                expected = CallStatus.ACCEPTED_AND_HALTED if halted else CallStatus.ACCEPTED
            if status is not expected:
                bad.append((trial, status, expected))
                break
        if s.counters != counters or s.replay() != (counters, s.c_delta):
            bad.append((trial, "replay"))
        # replaying the same decisions from the ledger on a fresh session reproduces it exactly
        t = open_session(s.config)
        for rec in s.ledger:
            t.register_call(rec.epsilon_charged, rec.delta_charged, rec.hit_flags)
        if t.counters != s.counters or [r.as_dict() for r in t.ledger] != [r.as_dict() for r in s.ledger]:
            bad.append((trial, "determinism"))
    verdict(7, not bad, f"1000 random hit sequences, {len(bad)} mismatches")


# -- 8 -----------------------------------------------------------------------


def test_criterion_8_svt_individual_charging():
    gen = np.random.default_rng(8)
    replay_ok = 0
    for trial in range(50):
        records = tuple({"v": float(v), "w": float(w)} for v, w in gen.uniform(0, 1, (int(gen.integers(5, 50)), 2)))
        s = svt_open(Dataset(records), int(gen.integers(1, 6)), 0.5)
        last = None
        for i in range(int(gen.integers(20, 80))):
            col = "v" if last is None or last.label == "Below" else "w"
            cut = float(gen.uniform(0, 1))
            q = LinearQuery(lambda r, col=col, cut=cut: float(r[col] >= cut), float(gen.uniform(-3, len(records))))
            last = svt_query(s, q, RandomStream(trial, i))
        replay_ok += s.replay_counters() == s.counters
    worst_excess = -math.inf
    base = tuple({"v": float(v)} for v in gen.uniform(0, 1, 40))
    for tau in (1, 2, 5, 8):
        d0 = svt_open(Dataset(base), tau, 0.3)
        d1 = svt_open(Dataset(base + ({"v": 1.0},)), tau, 0.3)
        divergent = 0
        for i in range(100):
            cut = float(gen.uniform(0, 1))
            q = LinearQuery(lambda r, cut=cut: float(r["v"] >= cut), -1e3 if gen.uniform() < 0.5 else 1e3)
            divergent += svt_query(d0, q, RandomStream(99, i)).published != svt_query(d1, q, RandomStream(99, i)).published
        worst_excess = max(worst_excess, divergent - tau)
    ok = replay_ok == 50 and worst_excess <= 0
    verdict(8, ok, f"replay {replay_ok}/50 streams; planted neighbour divergent - tau <= {worst_excess}")


# -- 9 -----------------------------------------------------------------------


def test_criterion_9_monte_carlo_audits():
    trials = 1_000_000
    eps = 0.5
    one = LinearQuery(lambda r: 1.0, 0.0)
    d0 = Dataset()
    d1 = Dataset(({"x": 1},))
    # neighbours sit on the Laplace tail, where the likelihood ratio is exactly e^eps
    at = AboveThreshold(LinearQuery(lambda r: 1.0, 2.0), eps)
    bt = BetweenThresholds(one, 2.0, 6.0, eps)
    wrap_base = AboveThreshold(LinearQuery(lambda r: 1.0, 0.5), eps)
    cases = {
        "above_threshold": (lambda d: (lambda rng, n: at.sample_codes(d, rng, n)), 2, eps),
        "between_thresholds": (lambda d: (lambda rng, n: bt.sample_codes(d, rng, n)), 3, eps),
        "wrap": (lambda d: (lambda rng, n: wrap_sample_codes(wrap_base, d, rng, n)), 3, wrapper_privacy(eps)),
        "run_twice": (lambda d: (lambda rng, n: run_twice_sample_codes(at, d, rng, n)), 4, 2 * eps),
    }
    details, ok = [], True
    for i, (name, (sampler, outcomes, declared)) in enumerate(cases.items()):
        res = mc_privacy_audit(sampler(d0), sampler(d1), trials, RandomStream(9, i), outcomes)
        ok &= res.epsilon_lower_bound <= declared
        details.append(f"{name} {res.epsilon_lower_bound:.4f}<={declared:.4f}")
    verdict(9, ok, "1e6-trial lower bounds: " + ", ".join(details))


# -- 10 ----------------------------------------------------------------------


def _golden_run(out):
    cmd = [
        sys.executable, "-m", "targetcharge.cli", "run",
        str(FIXTURES / "golden.csv"), str(FIXTURES / "golden.jsonl"),
        "--tau", "60", "--epsilon", "0.1", "--q", "0.25", "--delta", "1e-9", "--seed", "2024", "--out", str(out),
    ]  # fmt: skip
    return subprocess.run(cmd, capture_output=True, text=True)


def test_criterion_10_end_to_end_golden_run(tmp_path):
    ops = [json.loads(line) for line in (FIXTURES / "golden.jsonl").read_text().splitlines()]
    kinds = [op["op"] for op in ops]
    shape_ok = (
        len(ops) == 200
        and sum(op["op"] == "top_k" and op["k"] == 3 for op in ops) == 2
        and kinds.count("cr") == 20
        and kinds.count("svt_query") == 50
        and len((FIXTURES / "golden.csv").read_text().splitlines()) == 1001
    )
    runs = [_golden_run(tmp_path / name) for name in ("a", "b")]
    codes = [r.returncode for r in runs]
    reports = [(tmp_path / name / "report.json").read_bytes() for name in ("a", "b")]
    outputs = [(tmp_path / name / "outputs.jsonl").read_bytes() for name in ("a", "b")]
    identical = reports[0] == reports[1] and outputs[0] == outputs[1]
    report = json.loads(reports[0])
    again = recompute_bounds(report)
    try:
        verify_report(report)
        recomputed = again["basic"] == report["bounds"]["basic"] and again["advanced"] == report["bounds"]["advanced"]
    except AssertionError:
        recomputed = False
    ok = shape_ok and codes == [0, 0] and identical and recomputed and report["ops_executed"] == 200
    verdict(
        10,
        ok,
        f"fixture shape {shape_ok}, exit codes {codes}, byte-identical {identical}, "
        f"bounds recomputed {recomputed}, hits {report['counters']}",
    )
