"""Private selection on top of conditional release.

``top_k_oneshot`` runs every candidate once and publishes the k best
``(index, solution, score)`` triplets, charging k hits at ``2 eps``.
``sweep_simulate`` realises the same selection as a cr-plus-revise sweep down a
score grid, which is what the accounting argument analyses; it also supports
data-dependent stopping rules. ``above_threshold_release`` publishes every
candidate whose score exceeds a fixed threshold at ``eps`` per release.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from .accountant import CallStatus, Session, SessionConfig, open_session, output_digest
from .conditional_release import Interval, Nothing, cr, revise
from .errors import ContractError
from .privacy_core import PrivacyParams, not_prior_q


@dataclass(frozen=True)
class Candidate:
    """A private algorithm returning ``(solution, score)``."""

    index: int
    mechanism: Callable
    privacy: PrivacyParams

    def __call__(self, data, rng):
        return self.mechanism(data, rng)


@dataclass(frozen=True)
class SelectionResult:
    winners: tuple
    hits_charged: int
    epsilon_per_hit: float
    status: CallStatus = CallStatus.ACCEPTED


def _common_epsilon(candidates: Sequence[Candidate]) -> float:
    if not candidates:
        raise ValueError("need at least one candidate")
    eps = {c.privacy.epsilon for c in candidates}
    if len(eps) != 1:
        raise ContractError(f"candidates must share one epsilon, got {sorted(eps)}")
    return eps.pop()


def _triplet(index: int, result) -> tuple:
    solution, score = result
    return (index, solution, float(score))


def top_k_oneshot(session: Session, candidates: Sequence[Candidate], k: int, data, rng=None) -> SelectionResult:
    """One-shot top-k selection; each candidate is sampled exactly once on ``rng.child(position)``."""
    m = len(candidates)
    if not (1 <= k <= m):
        raise ValueError(f"need 1 <= k <= {m}, got {k}")
    eps = _common_epsilon(candidates)
    charge = 2.0 * eps
    q = not_prior_q(charge)
    deltas = [c.privacy.delta for c in candidates]
    rejected = session.admit(charge, math.fsum(deltas), q)
    if rejected is not None:
        return SelectionResult((), 0, charge, rejected)
    if k > session.hits_remaining:
        raise ContractError(f"top-k needs {k} hits but only {session.hits_remaining} remain")
    rng = session.call_rng() if rng is None else rng
    triplets = [_triplet(c.index, c(data, rng.child(pos))) for pos, c in enumerate(candidates)]
    order = sorted(range(m), key=lambda pos: (-triplets[pos][2], pos))
    winners = order[:k]
    flags = session.config.num_targets
    status = CallStatus.ACCEPTED
    for pos in order[k:]:
        session.register_call(charge, deltas[pos], [False] * flags, tag="top_k", digest=output_digest(None), q=q)
    for pos in winners:
        status = session.register_call(
            charge, deltas[pos], [True] * flags, tag="top_k", digest=output_digest(list(triplets[pos])), q=q
        )
    return SelectionResult(tuple(triplets[pos] for pos in winners), k, charge, status)


# -- stopping rules for the sweep -------------------------------------------------


def stop_at_count(k: int) -> Callable:
    return lambda prefix, threshold: len(prefix) >= k


def stop_at_gap(gap: float) -> Callable:
    """Stop once something was released and the sweep is more than ``gap`` below it."""
    return lambda prefix, threshold: bool(prefix) and prefix[-1][2] - threshold > gap


def never_stop(prefix, threshold) -> bool:
    return False


def sweep_simulate(
    candidates: Sequence[Candidate],
    stop_rule: Callable,
    score_grid: Sequence[float],
    data,
    rng,
    session: Optional[Session] = None,
) -> SelectionResult:
    """Selection by sweeping a threshold down ``score_grid`` with cr and revise calls.

    Each candidate gets one cr whose target is empty, followed by revisions
    ``[grid[0], inf)``, ``[grid[1], grid[0])``, ... so every release is a
    ``2 eps`` hit. ``stop_rule(prefix, threshold)`` is consulted after every
    release and after every completed grid step.
    """
    grid = [float(g) for g in score_grid]
    if not grid:
        raise ValueError("score grid must be non-empty")
    if any(a <= b for a, b in zip(grid, grid[1:])):
        raise ValueError("score grid must be strictly decreasing")
    eps = _common_epsilon(candidates)
    if session is None:
        session = open_session(
            SessionConfig(
                tau=len(candidates) + 1,
                epsilon=eps,
                q=not_prior_q(2 * eps),
                tau_delta=math.fsum(c.privacy.delta for c in candidates),
            )
        )
    base = f"sweep:{len(session.ledger)}"
    ids = [f"{base}:{pos}" for pos in range(len(candidates))]
    for pos, c in enumerate(candidates):
        rel = cr(session, ids[pos], c, Nothing(), data, rng.child(pos))
        if not rel.accepted:
            return SelectionResult((), 0, 2 * eps, rel.status)

    prefix: list = []
    status = CallStatus.ACCEPTED
    upper = math.inf
    released = [False] * len(candidates)
    for threshold in grid:
        extension = Interval(threshold, upper, lo_closed=True, hi_closed=False, field=1)
        for pos, c in enumerate(candidates):
            if released[pos]:
                continue
            rel = revise(session, ids[pos], extension)
            status = rel.status
            if not rel.accepted:
                return SelectionResult(tuple(prefix), len(prefix), 2 * eps, status)
            if rel.published:
                released[pos] = True
                prefix.append(_triplet(c.index, rel.output))
                if stop_rule(prefix, threshold) or not session.running:
                    return SelectionResult(tuple(prefix), len(prefix), 2 * eps, status)
        upper = threshold
        if stop_rule(prefix, threshold):
            break
    return SelectionResult(tuple(prefix), len(prefix), 2 * eps, status)


def above_threshold_release(session: Session, candidates: Sequence[Candidate], threshold: float, data, rng=None) -> list:
    """Publish every candidate whose score is strictly above ``threshold``."""
    rng = session.call_rng() if rng is None else rng
    target = Interval(threshold, math.inf, lo_closed=False, hi_closed=False, field=1)
    released = []
    base = f"atr:{len(session.ledger)}"
    for pos, c in enumerate(candidates):
        rel = cr(session, f"{base}:{pos}", c, target, data, rng.child(pos))
        if rel.published:
            released.append(_triplet(c.index, rel.output))
        if not session.running:
            break
    return released
