"""Transcript execution and report rendering.

An :class:`Engine` validates a whole transcript up front (schemas, ids, the
session q against every op's declared q), then executes it op by op against
one target-charging session and one per-item SVT session. Every op draws from
its own stream ``RandomStream(seed, 0, line)`` (SVT queries use
``RandomStream(seed, 1, line)``), so runs are reproducible regardless of what
other ops did.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Any, Callable, Optional

from .accountant import CallStatus, SessionConfig, SessionStatus, open_session, output_digest
from .boundary_wrapper import run_twice, wrap
from .conditional_release import Interval, cr, revise
from .errors import ConfigurationError, ContractError
from .formats import FormatError, TranscriptOp, compile_query
from .mechanisms import AboveThreshold, BetweenThresholds, Dataset, ExponentialChoice, NoisySum
from .privacy_core import (
    PrivacyParams,
    TailParams,
    advanced_composition,
    boundary_q,
    delta_star,
    not_prior_q,
    run_twice_q,
    tct_bound,
)
from .rng import RandomStream
from .selection import (
    Candidate,
    above_threshold_release,
    never_stop,
    stop_at_count,
    stop_at_gap,
    sweep_simulate,
    top_k_oneshot,
)
from .svt_individual import svt_open, svt_query, svt_report

REPORT_VERSION = 1

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_HALTED = 2


def _require(params: dict, *keys: str) -> None:
    missing = [k for k in keys if k not in params]
    if missing:
        raise FormatError(f"missing required field(s) {missing}")


def _number(params: dict, key: str, default=None) -> float:
    value = params.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise FormatError(f"{key!r} must be a number, got {value!r}")
    return float(value)


def _interval(spec: Any, field: Any = 1) -> Interval:
    if not isinstance(spec, dict):
        raise FormatError(f"interval must be an object, got {spec!r}")
    lo = _number(spec, "lo", -math.inf)
    hi = _number(spec, "hi", math.inf)
    try:
        return Interval(lo, hi, bool(spec.get("lo_closed", True)), bool(spec.get("hi_closed", False)), field)
    except ValueError as exc:
        raise FormatError(str(exc)) from None


@dataclass
class _Plan:
    op: TranscriptOp
    q: Optional[float]
    run: Callable[[RandomStream, RandomStream], dict]


@dataclass
class RunResult:
    outputs: list
    report: dict
    exit_code: int
    halted_early: bool = False

    def report_json(self) -> str:
        return render_report(self.report)

    def outputs_jsonl(self) -> str:
        return "".join(json.dumps(o, sort_keys=True) + "\n" for o in self.outputs)


def render_report(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


class Engine:
    def __init__(self, data: Dataset, config: SessionConfig, target_delta: Optional[float] = None, columns=None):
        if target_delta is not None and not (0 < target_delta < 1):
            raise ConfigurationError(f"target delta must be in (0, 1), got {target_delta}")
        self.data = data
        self.columns = columns
        self.config = config
        self.target_delta = target_delta
        self.session = open_session(config)
        self.svt = svt_open(data, config.tau, config.epsilon)
        self.svt_rng_root = RandomStream(config.seed, 1)
        self.tct_rng_root = RandomStream(config.seed, 0)

    # -- validation ---------------------------------------------------------

    def _eps(self, params: dict) -> float:
        eps = _number(params, "epsilon", self.config.epsilon)
        if not (0 < eps <= self.config.epsilon):
            raise FormatError(f"op epsilon must be in (0, {self.config.epsilon}], got {eps}")
        return eps

    def _query(self, spec, threshold=0.0):
        return compile_query(spec, threshold, self.columns)

    def _candidates(self, params: dict, eps: float) -> list:
        _require(params, "candidates")
        specs = params["candidates"]
        if not isinstance(specs, list) or not specs:
            raise FormatError("'candidates' must be a non-empty list")
        out = []
        for i, spec in enumerate(specs):
            if not isinstance(spec, dict) or "query" not in spec:
                raise FormatError(f"candidate {i} needs a 'query'")
            solution = spec.get("solution", f"c{i}")
            mech = NoisySum(self._query(spec["query"]), eps, solution=solution)
            out.append(Candidate(i, mech, mech.privacy))
        return out

    def _oracle_mechanism(self, spec: Any, eps: float):
        if not isinstance(spec, dict) or "type" not in spec:
            raise FormatError("'mechanism' must be an object with a 'type'")
        kind = spec["type"]
        if kind == "above_threshold":
            _require(spec, "query", "threshold")
            return AboveThreshold(self._query(spec["query"], _number(spec, "threshold")), eps)
        if kind == "between_thresholds":
            _require(spec, "query", "t_l", "t_r")
            t_l, t_r = _number(spec, "t_l"), _number(spec, "t_r")
            if not t_l < t_r:
                raise FormatError("need t_l < t_r")
            return BetweenThresholds(self._query(spec["query"]), t_l, t_r, eps)
        if kind == "exp_choice":
            _require(spec, "candidates")
            return ExponentialChoice([self._query(c) for c in spec["candidates"]], eps)
        raise FormatError(f"unknown mechanism type {kind!r}")

    def plan(self, ops: list[TranscriptOp]) -> list[_Plan]:
        plans, seen_ids = [], {}
        for op in ops:
            try:
                plans.append(self._plan_one(op, seen_ids))
            except (FormatError, ContractError, ValueError) as exc:
                if isinstance(exc, FormatError) and exc.line is not None:
                    raise
                raise FormatError(str(exc), op.line) from None
        return plans

    def _plan_one(self, op: TranscriptOp, seen_ids: dict) -> _Plan:
        p, name = op.params, op.op
        if name == "svt_query":
            _require(p, "query", "threshold")
            query = self._query(p["query"], _number(p, "threshold"))
            return _Plan(op, None, lambda rng, svt_rng: self._run_svt(query, svt_rng))
        if name == "revise":
            if op.id is None or op.id not in seen_ids:
                raise FormatError(f"revise references unknown cr id {op.id!r}")
            _require(p, "extension")
            ext = _interval(p["extension"])
            cid = op.id
            return _Plan(op, not_prior_q(2 * seen_ids[cid]), lambda rng, _: self._run_revise(cid, ext))
        eps = self._eps(p)
        if name == "above_threshold":
            _require(p, "query", "threshold")
            mech = AboveThreshold(self._query(p["query"], _number(p, "threshold")), eps)
            return _Plan(op, mech.q, lambda rng, _: self._run_outcome(name, mech, rng))
        if name == "between_thresholds":
            _require(p, "query", "t_l", "t_r")
            t_l, t_r = _number(p, "t_l"), _number(p, "t_r")
            if not t_l < t_r:
                raise FormatError("need t_l < t_r")
            mech = BetweenThresholds(self._query(p["query"]), t_l, t_r, eps)
            return _Plan(op, mech.q, lambda rng, _: self._run_outcome(name, mech, rng))
        if name == "exp_choice":
            _require(p, "candidates")
            prior = p.get("prior")
            if prior is not None and not (isinstance(prior, int) and 0 <= prior < len(p["candidates"])):
                raise FormatError(f"'prior' must be a candidate index, got {prior!r}")
            mech = ExponentialChoice([self._query(c) for c in p["candidates"]], eps, prior)
            return _Plan(op, mech.q, lambda rng, _: self._run_outcome(name, mech, rng))
        if name == "cr":
            if op.id is None:
                raise FormatError("cr needs an 'id'")
            if op.id in seen_ids:
                raise FormatError(f"duplicate cr id {op.id!r}")
            _require(p, "query", "target")
            seen_ids[op.id] = eps
            mech = NoisySum(self._query(p["query"]), eps, solution=op.id)
            target = _interval(p["target"])
            cid = op.id
            return _Plan(op, not_prior_q(eps), lambda rng, _: self._run_cr(cid, mech, target, rng))
        if name == "top_k":
            _require(p, "k")
            cands = self._candidates(p, eps)
            k = p["k"]
            if not isinstance(k, int) or not (1 <= k <= len(cands)):
                raise FormatError(f"'k' must be an integer in [1, {len(cands)}], got {k!r}")
            return _Plan(op, not_prior_q(2 * eps), lambda rng, _: self._run_top_k(cands, k, rng))
        if name == "above_threshold_release":
            _require(p, "threshold")
            cands = self._candidates(p, eps)
            t = _number(p, "threshold")
            return _Plan(op, not_prior_q(eps), lambda rng, _: self._run_atr(cands, t, rng))
        if name == "sweep":
            _require(p, "grid", "stop")
            cands = self._candidates(p, eps)
            grid = p["grid"]
            if not isinstance(grid, list) or not grid or any(isinstance(g, bool) or not isinstance(g, (int, float)) for g in grid):
                raise FormatError("'grid' must be a non-empty list of numbers")
            if any(a <= b for a, b in zip(grid, grid[1:])):
                raise FormatError("'grid' must be strictly decreasing")
            rule = self._stop_rule(p["stop"])
            return _Plan(op, not_prior_q(2 * eps), lambda rng, _: self._run_sweep(cands, rule, grid, rng))
        if name in ("wrap", "run_twice"):
            _require(p, "mechanism")
            mech = self._oracle_mechanism(p["mechanism"], eps)
            if name == "wrap":
                return _Plan(op, boundary_q(eps), lambda rng, _: self._run_wrap(mech, rng))
            return _Plan(op, run_twice_q(eps), lambda rng, _: self._run_twice(mech, eps, rng))
        raise FormatError(f"unknown op {name!r}")

    @staticmethod
    def _stop_rule(spec: Any):
        if not isinstance(spec, dict) or "rule" not in spec:
            raise FormatError("'stop' must be an object with a 'rule'")
        rule = spec["rule"]
        if rule == "count":
            k = spec.get("k")
            if not isinstance(k, int) or k < 1:
                raise FormatError("count rule needs integer k >= 1")
            return stop_at_count(k)
        if rule == "gap":
            return stop_at_gap(_number(spec, "gap"))
        if rule == "never":
            return never_stop
        raise FormatError(f"unknown stop rule {rule!r}")

    # -- execution ----------------------------------------------------------

    def _register(self, tag, eps, delta, hit, published, q) -> CallStatus:
        rejected = self.session.admit(eps, delta, q)
        if rejected is not None:
            return rejected
        return self.session.register_call(
            eps, delta, [hit] * self.config.num_targets, tag=tag, digest=output_digest(published), q=q
        )

    def _admit_or(self, eps, delta, q) -> Optional[dict]:
        rejected = self.session.admit(eps, delta, q)
        return None if rejected is None else {"status": rejected.value, "published": None}

    def _run_outcome(self, tag, mech, rng) -> dict:
        early = self._admit_or(mech.privacy.epsilon, 0.0, mech.q)
        if early:
            return early
        out = mech(self.data, rng)
        published = {"label": out.label, "value": out.value}
        status = self._register(tag, out.privacy.epsilon, 0.0, out.target_hit, published, out.q)
        return {"status": status.value, "published": published, "hit": out.target_hit}

    def _run_cr(self, cid, mech, target, rng) -> dict:
        rel = cr(self.session, cid, mech, target, self.data, rng)
        return self._release_dict(rel)

    def _run_revise(self, cid, ext) -> dict:
        comp = self.session.pending.get(cid)
        if comp is None:  # the cr was rejected before sampling
            return {"status": "RejectedUnknownComputation", "published": None}
        return self._release_dict(revise(self.session, cid, ext))

    @staticmethod
    def _release_dict(rel) -> dict:
        status = rel.status.value if isinstance(rel.status, CallStatus) else rel.status
        published = list(rel.output) if rel.published else None
        return {"status": status, "published": published, "hit": rel.hit}

    def _run_top_k(self, cands, k, rng) -> dict:
        if k > self.session.hits_remaining:
            return {"status": "RejectedInsufficientHits", "published": None}
        res = top_k_oneshot(self.session, cands, k, self.data, rng)
        return {"status": res.status.value, "published": [list(w) for w in res.winners], "hits": res.hits_charged}

    def _run_atr(self, cands, threshold, rng) -> dict:
        before = len(self.session.ledger)
        released = above_threshold_release(self.session, cands, threshold, self.data, rng)
        if len(self.session.ledger) == before:
            status = "Rejected"
        else:
            status = "Accepted" if self.session.running else self.session.status.value
        return {"status": status, "published": [list(r) for r in released], "hits": len(released)}

    def _run_sweep(self, cands, rule, grid, rng) -> dict:
        if self.session.hits_remaining < 1:
            return {"status": "RejectedInsufficientHits", "published": None}
        res = sweep_simulate(cands, rule, grid, self.data, rng, session=self.session)
        status = res.status.value if isinstance(res.status, CallStatus) else res.status
        return {"status": status, "published": [list(w) for w in res.winners], "hits": res.hits_charged}

    def _run_wrap(self, mech, rng) -> dict:
        eps = mech.privacy.epsilon
        out_eps, q = 4.0 * eps / 3.0, boundary_q(eps)
        early = self._admit_or(out_eps, 0.0, q)
        if early:
            return early
        out = wrap(mech, self.data, rng)
        published = {"label": out.label}
        status = self._register("wrap", out.privacy.epsilon, 0.0, out.target_hit, published, out.q)
        return {"status": status.value, "published": published, "hit": out.target_hit}

    def _run_twice(self, mech, eps, rng) -> dict:
        early = self._admit_or(2 * eps, 0.0, run_twice_q(eps))
        if early:
            return early
        out = run_twice(mech, self.data, rng, eps)
        published = {"pair": list(out.pair)}
        status = self._register("run_twice", out.privacy.epsilon, 0.0, out.target_hit, published, out.q)
        return {"status": status.value, "published": published, "hit": out.target_hit}

    def _run_svt(self, query, rng) -> dict:
        ans = svt_query(self.svt, query, rng)
        return {"status": "Answered", "published": ans.published, "charged_items": ans.charged}

    def run(self, ops: list[TranscriptOp]) -> RunResult:
        plans = self.plan(ops)
        declared = [pl.q for pl in plans if pl.q is not None]
        if declared and self.config.q > min(declared) * (1 + 1e-12):
            bad = min(plans, key=lambda pl: math.inf if pl.q is None else pl.q)
            raise FormatError(
                f"session q={self.config.q:.6g} exceeds the q={bad.q:.6g} declared by op {bad.op.op!r}; "
                "pass a smaller --q",
                bad.op.line,
            )
        outputs = []
        executed = 0
        for pl in plans:
            if not self.session.running:
                break
            rng = self.tct_rng_root.child(pl.op.line)
            svt_rng = self.svt_rng_root.child(pl.op.line)
            try:
                result = pl.run(rng, svt_rng)
            except (ContractError, ValueError) as exc:
                raise FormatError(str(exc), pl.op.line) from None
            entry = {"line": pl.op.line, "op": pl.op.op}
            if pl.op.id is not None:
                entry["id"] = pl.op.id
            entry.update(result)
            outputs.append(entry)
            executed += 1
        self.svt.check_replay()
        self.session.check_replay()
        halted_early = executed < len(plans)
        report = self.build_report(len(plans), executed)
        verify_report(report)
        return RunResult(outputs, report, EXIT_HALTED if halted_early else EXIT_OK, halted_early)

    # -- reporting ----------------------------------------------------------

    def build_report(self, total_ops: int = 0, executed: int = 0) -> dict:
        s = self.session
        basic = s.privacy_report()
        advanced = s.privacy_report(self.target_delta) if self.target_delta is not None else None
        svt_basic = svt_report(self.svt, self.config.alpha)
        svt_adv = svt_report(self.svt, self.config.alpha, self.target_delta) if self.target_delta is not None else None
        halt = None if s.status is SessionStatus.RUNNING else s.status.value
        pp = lambda b: None if b is None else {"epsilon": b.epsilon, "delta": b.delta}
        return {
            "report_version": REPORT_VERSION,
            "config": dict(self.config.as_dict(), target_delta=self.target_delta),
            "seed": self.config.seed,
            "ledger": [r.as_dict() for r in s.ledger],
            "counters": list(s.counters),
            "c_delta": s.c_delta,
            "bounds": {
                "alpha": self.config.alpha,
                "target_delta": self.target_delta,
                "epsilon_per_call": s.charged_epsilon(),
                "delta_star": delta_star(self.config.tau, self.config.alpha),
                "basic": pp(basic),
                "advanced": pp(advanced),
            },
            "halt_reason": halt,
            "ops_total": total_ops,
            "ops_executed": executed,
            "svt": {
                "tau": self.svt.tau,
                "epsilon": self.svt.epsilon,
                "queries": len(self.svt.transcript),
                "items": len(self.svt.items),
                "retired": len(self.svt.items) - len(self.svt.active),
                "charges": sum(self.svt.counters.values()),
                "basic": pp(svt_basic),
                "advanced": pp(svt_adv),
            },
            "combined_basic": {
                "epsilon": basic.epsilon + svt_basic.epsilon,
                "delta": min(1.0, basic.delta + svt_basic.delta),
            },
        }


def recompute_bounds(report: dict) -> dict:
    """Bounds recomputed from a report's config and ledger with the core formulas only."""
    cfg = report["config"]
    ledger = report["ledger"]
    eps = max([cfg["epsilon"]] + [r["epsilon"] for r in ledger])
    c_delta = 0.0
    for r in ledger:
        c_delta += r["delta"]
    k, tau, alpha, q, td = cfg["num_targets"], cfg["tau"], cfg["alpha"], cfg["q"], cfg["target_delta"]
    if k == 1:
        basic = tct_bound(TailParams(tau, alpha), eps, q, c_delta)
        adv = tct_bound(TailParams(tau, alpha), eps, q, c_delta, td) if td is not None else None
    else:
        calls = (1.0 + alpha) * tau / q
        ds = delta_star(tau, alpha)
        basic = PrivacyParams(calls * eps, min(1.0, c_delta + k * ds))
        adv = None
        if td is not None:
            adv = PrivacyParams(advanced_composition(calls, eps, td).epsilon, min(1.0, c_delta + k * (ds + td)))
    svt_cfg = report["svt"]
    svt_tail = TailParams(svt_cfg["tau"], alpha)
    svt_q = not_prior_q(svt_cfg["epsilon"])
    svt_basic = tct_bound(svt_tail, svt_cfg["epsilon"], svt_q)
    svt_adv = tct_bound(svt_tail, svt_cfg["epsilon"], svt_q, 0.0, td) if td is not None else None
    pp = lambda b: None if b is None else {"epsilon": b.epsilon, "delta": b.delta}
    return {
        "basic": pp(basic),
        "advanced": pp(adv),
        "epsilon_per_call": eps,
        "c_delta": c_delta,
        "svt_basic": pp(svt_basic),
        "svt_advanced": pp(svt_adv),
    }


def verify_report(report: dict) -> None:
    """Raise if the report's bounds do not follow exactly from its ledger (or its counters from its hit flags)."""
    again = recompute_bounds(report)
    b = report["bounds"]
    if again["basic"] != b["basic"] or again["advanced"] != b["advanced"]:
        raise AssertionError(f"report bounds {b} differ from ledger recomputation {again}")
    if again["epsilon_per_call"] != b["epsilon_per_call"] or again["c_delta"] != report["c_delta"]:
        raise AssertionError("report epsilon or c_delta differ from ledger recomputation")
    if again["svt_basic"] != report["svt"]["basic"] or again["svt_advanced"] != report["svt"]["advanced"]:
        raise AssertionError("report SVT bounds differ from recomputation")
    k = report["config"]["num_targets"]
    counters = [sum(r["hits"][i] for r in report["ledger"]) for i in range(k)]
    if counters != report["counters"]:
        raise AssertionError("report counters differ from ledger hit flags")
