"""Target-charging session state machine.

A :class:`Session` keeps one hit counter per target, the accumulated per-call
delta ``c_delta``, a halt status and an append-only ledger. Only calls whose
output lands in a declared target advance a counter; everything else is free
apart from its delta. The session halts right after the call that brings the
smallest counter to ``tau`` (that call's output is still published).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Optional, Sequence

from .errors import ConfigurationError, ContractError
from .privacy_core import (
    PrivacyParams,
    TailParams,
    advanced_composition,
    delta_star,
    not_prior_q,
    tct_bound,
)
from .rng import RandomStream

# relative slack when comparing floats that should agree exactly
_REL = 1e-12


class CallStatus(str, Enum):
    ACCEPTED = "Accepted"
    ACCEPTED_AND_HALTED = "AcceptedAndHalted"
    REJECTED_DELTA_BUDGET = "RejectedDeltaBudget"
    REJECTED_ALREADY_HALTED = "RejectedAlreadyHalted"
    REJECTED_EPSILON_CAP = "RejectedEpsilonCap"

    @property
    def accepted(self) -> bool:
        return self in (CallStatus.ACCEPTED, CallStatus.ACCEPTED_AND_HALTED)


class SessionStatus(str, Enum):
    RUNNING = "Running"
    HALTED_HITS = "HaltedHits"
    HALTED_DELTA_BUDGET = "HaltedDeltaBudget"


@dataclass(frozen=True)
class SessionConfig:
    """Session parameters. ``q`` defaults to ``not_prior_q(epsilon)``."""

    tau: int
    epsilon: float
    tau_delta: float = 0.0
    q: Optional[float] = None
    num_targets: int = 1
    alpha: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.tau, bool) or int(self.tau) != self.tau or self.tau < 1:
            raise ConfigurationError(f"tau must be an integer >= 1, got {self.tau}")
        if not (self.epsilon > 0) or math.isinf(self.epsilon):
            raise ConfigurationError(f"epsilon must be a positive real, got {self.epsilon}")
        if not (self.tau_delta >= 0):
            raise ConfigurationError(f"tau_delta must be >= 0, got {self.tau_delta}")
        if int(self.num_targets) != self.num_targets or self.num_targets < 1:
            raise ConfigurationError(f"num_targets must be an integer >= 1, got {self.num_targets}")
        if not (self.alpha > 0):
            raise ConfigurationError(f"alpha must be > 0, got {self.alpha}")
        if not (0 <= int(self.seed) < 2**64) or int(self.seed) != self.seed:
            raise ConfigurationError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        object.__setattr__(self, "tau", int(self.tau))
        object.__setattr__(self, "num_targets", int(self.num_targets))
        object.__setattr__(self, "seed", int(self.seed))
        if self.q is None:
            object.__setattr__(self, "q", not_prior_q(self.epsilon))
        if not (0 < self.q <= 1):
            raise ConfigurationError(f"q must be in (0, 1], got {self.q}")

    @property
    def tail(self) -> TailParams:
        return TailParams(self.tau, self.alpha, self.tau_delta)

    def as_dict(self) -> dict:
        return {
            "tau": self.tau,
            "epsilon": self.epsilon,
            "tau_delta": self.tau_delta,
            "q": self.q,
            "num_targets": self.num_targets,
            "alpha": self.alpha,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class CallRecord:
    call_id: int
    epsilon_charged: float
    delta_charged: float
    hit_flags: tuple
    mechanism_tag: str = ""
    published_digest: str = ""
    q: Optional[float] = None

    def as_dict(self) -> dict:
        return {
            "call_id": self.call_id,
            "op": self.mechanism_tag,
            "epsilon": self.epsilon_charged,
            "delta": self.delta_charged,
            "hits": list(self.hit_flags),
            "q": self.q,
            "digest": self.published_digest,
        }


def output_digest(obj: Any) -> str:
    """Short sha256 digest of a JSON rendering of a published output."""
    blob = json.dumps(obj, sort_keys=True, default=repr, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def report_bound(
    config: SessionConfig,
    epsilon: float,
    c_delta: float,
    target_delta: Optional[float] = None,
) -> PrivacyParams:
    """Session bound for per-call ``epsilon``; the tail (and target) delta is multiplied by k."""
    if config.num_targets == 1:
        return tct_bound(config.tail, epsilon, config.q, c_delta, target_delta)
    calls = (1.0 + config.alpha) * config.tau / config.q
    per_target = delta_star(config.tau, config.alpha)
    if target_delta is None:
        eps = calls * epsilon
    else:
        eps = advanced_composition(calls, epsilon, target_delta).epsilon
        per_target += target_delta
    return PrivacyParams(eps, min(1.0, c_delta + config.num_targets * per_target))


class Session:
    """Mutable target-charging session. Use :func:`open_session` to create one."""

    def __init__(self, config: SessionConfig):
        self.config = config
        self.counters = [0] * config.num_targets
        self.c_delta = 0.0
        self.status = SessionStatus.RUNNING
        self.ledger: list[CallRecord] = []
        self.pending: dict = {}
        self.rng = RandomStream(config.seed, 0)

    def __repr__(self):
        return (
            f"Session(status={self.status.value}, counters={self.counters}, "
            f"c_delta={self.c_delta:g}, calls={len(self.ledger)})"
        )

    @property
    def running(self) -> bool:
        return self.status is SessionStatus.RUNNING

    @property
    def next_call_id(self) -> int:
        return len(self.ledger)

    def call_rng(self, call_id: Optional[int] = None) -> RandomStream:
        """Stream for one call, derived from the session seed and the call id."""
        return self.rng.child(self.next_call_id if call_id is None else call_id)

    @property
    def hits_remaining(self) -> int:
        return self.config.tau - min(self.counters)

    def _eps_cap_ok(self, epsilon: float) -> bool:
        return epsilon <= 2.0 * self.config.epsilon * (1.0 + _REL)

    def _delta_ok(self, delta: float) -> bool:
        return self.c_delta + delta <= self.config.tau_delta

    def admit(self, epsilon: float = 0.0, delta: float = 0.0, q: Optional[float] = None) -> Optional[CallStatus]:
        """Pre-execution checks. Returns a rejection status, or ``None`` if the call may run.

        A delta-budget failure halts the session, as the budget check does in
        the algorithm; nothing is sampled or published.
        """
        if not (epsilon >= 0) or not (delta >= 0):
            raise ContractError(f"epsilon and delta must be >= 0, got ({epsilon}, {delta})")
        if q is not None and q < self.config.q * (1.0 - _REL):
            raise ContractError(
                f"call declares q={q:.6g} below the session q={self.config.q:.6g}; the bound would be unsound"
            )
        if not self.running:
            return CallStatus.REJECTED_ALREADY_HALTED
        if not self._eps_cap_ok(epsilon):
            return CallStatus.REJECTED_EPSILON_CAP
        if not self._delta_ok(delta):
            self.status = SessionStatus.HALTED_DELTA_BUDGET
            return CallStatus.REJECTED_DELTA_BUDGET
        return None

    def register_call(
        self,
        epsilon: float,
        delta: float,
        hit_flags: Sequence[bool],
        *,
        tag: str = "",
        digest: str = "",
        q: Optional[float] = None,
    ) -> CallStatus:
        """Record one executed call and update counters, ``c_delta`` and status."""
        flags = tuple(bool(h) for h in hit_flags)
        if len(flags) != self.config.num_targets:
            raise ContractError(f"expected {self.config.num_targets} hit flags, got {len(flags)}")
        rejected = self.admit(epsilon, delta, q)
        if rejected is not None:
            return rejected
        self.c_delta += delta
        for i, hit in enumerate(flags):
            self.counters[i] += hit
        self.ledger.append(CallRecord(len(self.ledger), float(epsilon), float(delta), flags, tag, digest, q))
        if min(self.counters) >= self.config.tau:
            self.status = SessionStatus.HALTED_HITS
            return CallStatus.ACCEPTED_AND_HALTED
        return CallStatus.ACCEPTED

    def charged_epsilon(self) -> float:
        """Per-call epsilon entering the bound: the largest registered, at least ``config.epsilon``."""
        return max([self.config.epsilon] + [r.epsilon_charged for r in self.ledger])

    def privacy_report(self, target_delta: Optional[float] = None) -> PrivacyParams:
        return report_bound(self.config, self.charged_epsilon(), self.c_delta, target_delta)

    def replay(self) -> tuple[list[int], float]:
        """Counters and ``c_delta`` recomputed from the ledger alone."""
        counters = [0] * self.config.num_targets
        c_delta = 0.0
        for rec in self.ledger:
            c_delta += rec.delta_charged
            for i, hit in enumerate(rec.hit_flags):
                counters[i] += hit
        return counters, c_delta

    def check_replay(self) -> None:
        counters, c_delta = self.replay()
        if counters != self.counters or not math.isclose(c_delta, self.c_delta, rel_tol=1e-12, abs_tol=1e-300):
            raise AssertionError("ledger replay disagrees with session state")


def open_session(config: SessionConfig) -> Session:
    return Session(config)
