"""Conditional release with later target revisions.

``cr`` samples a private mechanism once, keeps the result in memory and
publishes it only when it falls in the declared target. ``revise`` enlarges a
pending target by a disjoint extension; if the stored result lies in the
extension it is published then, and the call is accounted as a ``2 eps``
call with a NotPrior target. Delta is charged once, at ``cr`` time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional, Union

from .accountant import CallStatus, Session, output_digest
from .errors import ContractError
from .privacy_core import PrivacyParams, not_prior_q

Field = Union[None, int, str]


def _extract(output: Any, key: Field) -> Any:
    if key is None:
        return output
    if isinstance(key, str) and not isinstance(output, dict):
        return getattr(output, key)
    return output[key]


class Target:
    """Membership test over mechanism outputs."""

    def contains(self, output: Any) -> bool:
        raise NotImplementedError

    def __contains__(self, output: Any) -> bool:
        return self.contains(output)

    def disjoint(self, other: "Target") -> Optional[bool]:
        """``True``/``False`` when decidable from structure, ``None`` otherwise."""
        return None

    def to_dict(self) -> dict:
        return {"type": type(self).__name__}


@dataclass(frozen=True)
class Everything(Target):
    def contains(self, output):
        return True

    def disjoint(self, other):
        return True if isinstance(other, Nothing) else (False if isinstance(other, (Everything, Interval, LabelSet)) else None)


@dataclass(frozen=True)
class Nothing(Target):
    def contains(self, output):
        return False

    def disjoint(self, other):
        return True


@dataclass(frozen=True)
class Interval(Target):
    """Real interval over ``output`` (or ``output[field]``) with open/closed ends."""

    lo: float = -math.inf
    hi: float = math.inf
    lo_closed: bool = True
    hi_closed: bool = False
    field: Field = None

    def __post_init__(self):
        if math.isnan(self.lo) or math.isnan(self.hi) or self.lo > self.hi:
            raise ValueError(f"invalid interval [{self.lo}, {self.hi}]")

    @property
    def empty(self) -> bool:
        return self.lo == self.hi and not (self.lo_closed and self.hi_closed and math.isfinite(self.lo))

    def _has(self, x: float) -> bool:
        if x < self.lo or x > self.hi:
            return False
        if x == self.lo and not self.lo_closed:
            return False
        if x == self.hi and not self.hi_closed:
            return False
        return True

    def contains(self, output):
        value = _extract(output, self.field)
        if value is None:
            return False
        return self._has(float(value))

    def disjoint(self, other):
        if isinstance(other, Nothing) or self.empty:
            return True
        if isinstance(other, Everything):
            return False
        if isinstance(other, TargetUnion):
            return other.disjoint(self)
        if not isinstance(other, Interval) or other.field != self.field:
            return None
        if other.empty:
            return True
        lo, hi = max(self.lo, other.lo), min(self.hi, other.hi)
        if lo < hi:
            return False
        if lo > hi:
            return True
        return not (self._has(lo) and other._has(lo))

    def to_dict(self):
        return {
            "type": "interval",
            "lo": self.lo,
            "hi": self.hi,
            "lo_closed": self.lo_closed,
            "hi_closed": self.hi_closed,
            "field": self.field,
        }


@dataclass(frozen=True)
class LabelSet(Target):
    """Finite set of labels, matched against ``output`` or ``output[field]``."""

    labels: frozenset = frozenset()
    field: Field = None

    def __post_init__(self):
        object.__setattr__(self, "labels", frozenset(self.labels))

    def contains(self, output):
        return _extract(output, self.field) in self.labels

    def disjoint(self, other):
        if isinstance(other, Nothing) or not self.labels:
            return True
        if isinstance(other, Everything):
            return False
        if isinstance(other, TargetUnion):
            return other.disjoint(self)
        if isinstance(other, LabelSet) and other.field == self.field:
            return not (self.labels & other.labels)
        return None

    def to_dict(self):
        return {"type": "labels", "labels": sorted(map(repr, self.labels)), "field": self.field}


@dataclass(frozen=True)
class Predicate(Target):
    """Arbitrary membership function; disjointness is the caller's responsibility."""

    fn: Callable[[Any], bool]
    description: str = ""

    def contains(self, output):
        return bool(self.fn(output))

    def disjoint(self, other):
        return True if isinstance(other, Nothing) else None

    def to_dict(self):
        return {"type": "predicate", "description": self.description}


@dataclass(frozen=True)
class TargetUnion(Target):
    parts: tuple = ()

    def contains(self, output):
        return any(p.contains(output) for p in self.parts)

    def disjoint(self, other):
        verdicts = [p.disjoint(other) for p in self.parts]
        if any(v is False for v in verdicts):
            return False
        if all(v is True for v in verdicts):
            return True
        return None

    def to_dict(self):
        return {"type": "union", "parts": [p.to_dict() for p in self.parts]}


def union(a: Target, b: Target) -> Target:
    parts = (a.parts if isinstance(a, TargetUnion) else (a,)) + (b.parts if isinstance(b, TargetUnion) else (b,))
    parts = tuple(p for p in parts if not isinstance(p, Nothing))
    if not parts:
        return Nothing()
    return parts[0] if len(parts) == 1 else TargetUnion(parts)


class _Bottom:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "Bottom"

    def __bool__(self):
        return False


BOTTOM = _Bottom()


@dataclass
class PendingComputation:
    id: str
    stored_result: Any = field(repr=False)
    current_target: Target
    base_epsilon: float
    base_delta: float = 0.0
    released: bool = False


ALREADY_RELEASED = "RejectedAlreadyReleased"


@dataclass(frozen=True)
class Release:
    """What a cr/revise call did: its status and the published value.

    ``status`` is a :class:`CallStatus` from the accountant, or
    ``ALREADY_RELEASED`` for a revision of a computation that was published.
    """

    status: Any
    output: Any = BOTTOM
    hit: bool = False

    @property
    def published(self) -> bool:
        return self.output is not BOTTOM

    @property
    def accepted(self) -> bool:
        return isinstance(self.status, CallStatus) and self.status.accepted


def _privacy_of(mechanism) -> PrivacyParams:
    privacy = getattr(mechanism, "privacy", None)
    if not isinstance(privacy, PrivacyParams):
        raise ContractError("mechanism must expose a PrivacyParams 'privacy' attribute")
    return privacy


def _publishable(output: Any) -> Any:
    if hasattr(output, "label") and hasattr(output, "value"):
        return {"label": output.label, "value": output.value}
    return output


def cr(session: Session, id: str, mechanism, target: Target, data, rng=None) -> Release:
    """Run ``mechanism`` once and publish its result only if it lies in ``target``."""
    if id in session.pending:
        raise ContractError(f"computation id {id!r} already used")
    privacy = _privacy_of(mechanism)
    eps, delta = privacy.epsilon, privacy.delta
    q = not_prior_q(eps)
    rejected = session.admit(eps, delta, q)
    if rejected is not None:
        return Release(rejected)
    result = mechanism(data, session.call_rng() if rng is None else rng)
    hit = target.contains(result)
    output = result if hit else BOTTOM
    status = session.register_call(
        eps,
        delta,
        [hit] * session.config.num_targets,
        tag="cr",
        digest=output_digest(_publishable(output) if hit else None),
        q=q,
    )
    session.pending[id] = PendingComputation(id, result, target, eps, delta, released=hit)
    return Release(status, output, hit)


def revise(session: Session, id: str, extension: Target) -> Release:
    """Extend the target of pending computation ``id`` by a disjoint ``extension``."""
    comp = session.pending.get(id)
    if comp is None:
        raise ContractError(f"unknown computation id {id!r}")
    if comp.released:
        return Release(ALREADY_RELEASED)
    if comp.current_target.disjoint(extension) is False:
        raise ContractError(f"extension overlaps the current target of {id!r}")
    eps = 2.0 * comp.base_epsilon
    q = not_prior_q(eps)
    rejected = session.admit(eps, 0.0, q)
    if rejected is not None:
        return Release(rejected)
    hit = extension.contains(comp.stored_result)
    output = comp.stored_result if hit else BOTTOM
    status = session.register_call(
        eps,
        0.0,
        [hit] * session.config.num_targets,
        tag="revise",
        digest=output_digest(_publishable(output) if hit else None),
        q=q,
    )
    comp.current_target = union(comp.current_target, extension)
    comp.released = hit
    return Release(status, output, hit)


def revise_chain(session: Session, id: str, extensions: Iterable[Target]) -> list[Release]:
    """Apply revisions in order, stopping after the first release or rejection."""
    out = []
    for ext in extensions:
        rel = revise(session, id, ext)
        out.append(rel)
        if rel.published or not rel.accepted:
            break
    return out
