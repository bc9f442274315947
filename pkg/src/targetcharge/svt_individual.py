"""Sparse vector with per-item charging.

Each record carries its own hit counter. A query that comes out Above (or
Between, in the two-threshold mode) charges only the active records that
contributed to it, and a record is retired once its counter reaches ``tau``.
Counters depend only on published answers and the query definitions, so they
can be replayed publicly; :meth:`SVTSession.check_replay` does exactly that.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Optional

from .errors import ContractError
from .mechanisms import Dataset, LinearQuery, laplace_sample
from .privacy_core import PrivacyParams, TailParams, between_q, not_prior_q, tct_bound


def item_identities(data: Dataset) -> list[tuple[str, int]]:
    """Position-independent identity per record: (content hash, occurrence index)."""
    seen: dict = {}
    out = []
    for rec in data:
        blob = json.dumps(rec, sort_keys=True, default=repr, separators=(",", ":"))
        h = hashlib.sha256(blob.encode()).hexdigest()[:16]
        occ = seen.get(h, 0)
        seen[h] = occ + 1
        out.append((h, occ))
    return out


@dataclass(frozen=True)
class SVTAnswer:
    label: str  # "Above"/"Below" or "L"/"Between"/"H"
    value: Optional[float]
    charged: int

    @property
    def published(self) -> Any:
        return {"label": self.label, "value": self.value}


@dataclass
class SVTSession:
    data: Dataset
    tau: int
    epsilon: float
    mode: str = "above"
    gap: Optional[float] = None
    max_queries: Optional[int] = None
    items: list = field(default_factory=list)
    counters: dict = field(default_factory=dict)
    active: set = field(default_factory=set)
    transcript: list = field(default_factory=list)

    @property
    def charge_label(self) -> str:
        return "Above" if self.mode == "above" else "Between"

    @property
    def q(self) -> float:
        return not_prior_q(self.epsilon) if self.mode == "above" else between_q(self.epsilon, self.gap)

    @property
    def privacy(self) -> PrivacyParams:
        return PrivacyParams(self.epsilon, 0.0)

    def replay_counters(self) -> dict:
        """Counters rebuilt from the initial items, the queries and the published labels only."""
        counters = {ident: 0 for ident, _ in self.items}
        active = set(counters)
        for query, answer in self.transcript:
            if answer.label != self.charge_label:
                continue
            for ident, rec in self.items:
                if ident in active and query.evaluate(rec) > 0:
                    counters[ident] += 1
                    if counters[ident] >= self.tau:
                        active.discard(ident)
        return counters

    def check_replay(self) -> None:
        if self.replay_counters() != self.counters:
            raise AssertionError("per-item counters do not replay from the published transcript")


def svt_open(
    data: Dataset,
    tau: int,
    epsilon: float,
    mode: str = "above",
    gap: Optional[float] = None,
    max_queries: Optional[int] = None,
) -> SVTSession:
    if isinstance(tau, bool) or int(tau) != tau or tau < 1:
        raise ValueError(f"tau must be an integer >= 1, got {tau}")
    if not (epsilon > 0):
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    if mode not in ("above", "between"):
        raise ValueError(f"mode must be 'above' or 'between', got {mode!r}")
    if mode == "between" and not (gap is not None and gap > 0):
        raise ValueError("between mode needs a positive gap")
    if max_queries is not None and max_queries < 0:
        raise ValueError("max_queries must be >= 0")
    items = list(zip(item_identities(data), data))
    return SVTSession(
        data=data,
        tau=int(tau),
        epsilon=float(epsilon),
        mode=mode,
        gap=gap,
        max_queries=max_queries,
        items=items,
        counters={ident: 0 for ident, _ in items},
        active={ident for ident, _ in items},
    )


def svt_query(session: SVTSession, query: LinearQuery, rng) -> SVTAnswer:
    """Answer one threshold query over the active items."""
    if session.max_queries is not None and len(session.transcript) >= session.max_queries:
        raise ContractError(f"query cap of {session.max_queries} reached")
    live = [(ident, rec) for ident, rec in session.items if ident in session.active]
    values = [query.evaluate(rec) for _, rec in live]  # range errors surface before sampling
    noisy = math.fsum(values) + laplace_sample(1.0 / session.epsilon, rng)
    t = query.threshold
    if session.mode == "above":
        label = "Above" if noisy >= t else "Below"
        value = noisy if label == "Above" else None
    else:
        label = "L" if noisy < t else ("H" if noisy > t + session.gap else "Between")
        value = None
    charged = 0
    if label == session.charge_label:
        for (ident, _), v in zip(live, values):
            if v > 0:
                session.counters[ident] += 1
                charged += 1
                if session.counters[ident] >= session.tau:
                    session.active.discard(ident)
    answer = SVTAnswer(label, value, charged)
    session.transcript.append((query, answer))
    return answer


def svt_report(session: SVTSession, alpha: float = 1.0, target_delta: Optional[float] = None) -> PrivacyParams:
    """Bound seen by any single item, from the target-charging analysis with per-item budget ``tau``."""
    return tct_bound(TailParams(session.tau, alpha), session.epsilon, session.q, 0.0, target_delta)
