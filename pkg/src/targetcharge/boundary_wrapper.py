"""Boundary wrapping of private classifiers.

With a probability oracle, :func:`wrap` emits a synthetic ``Boundary`` outcome
with probability ``min(1/3, pi/(1+pi))``, where ``pi`` is the non-modal mass,
and otherwise returns a fresh sample. ``Boundary`` is the target, so confident
answers are free. Without an oracle, :func:`run_twice` samples twice and
treats disagreement as the target.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Protocol

import numpy as np

from .errors import ContractError
from .privacy_core import PrivacyParams, boundary_q, run_twice_q, wrapper_privacy

BOUNDARY = "Boundary"


class OracleMechanism(Protocol):
    privacy: PrivacyParams

    def sample(self, data, rng) -> Any: ...

    def mode(self, data) -> tuple: ...


@dataclass(frozen=True)
class FunctionOracle:
    """Adapter building an oracle mechanism from a sampler and a mode oracle."""

    sampler: Callable
    mode_oracle: Callable
    privacy: PrivacyParams

    def sample(self, data, rng):
        return self.sampler(data, rng)

    def mode(self, data):
        return self.mode_oracle(data)


@dataclass(frozen=True)
class WrappedOutcome:
    boundary: bool
    outcome: Any
    privacy: PrivacyParams
    q: float

    @property
    def label(self):
        return BOUNDARY if self.boundary else self.outcome

    @property
    def target_hit(self) -> bool:
        return self.boundary


@dataclass(frozen=True)
class RunTwiceOutcome:
    pair: tuple
    privacy: PrivacyParams
    q: float

    @property
    def target_hit(self) -> bool:
        return self.pair[0] != self.pair[1]


def boundary_probability(pi: float) -> float:
    """Coin bias for non-modal mass ``pi``."""
    if not (0.0 <= pi <= 1.0 + 1e-12):
        raise ValueError(f"non-modal mass must be in [0, 1], got {pi}")
    return min(1.0 / 3.0, pi / (1.0 + pi))


def _pure_epsilon(mechanism) -> float:
    privacy = mechanism.privacy
    if privacy.delta > 0:
        raise ContractError("boundary wrapping needs a pure (delta = 0) mechanism")
    return privacy.epsilon


def wrap(mechanism: OracleMechanism, data, rng) -> WrappedOutcome:
    eps = _pure_epsilon(mechanism)
    _, modal_mass = mechanism.mode(data)
    coin = boundary_probability(max(0.0, 1.0 - modal_mass))
    privacy = PrivacyParams(wrapper_privacy(eps), 0.0)
    q = boundary_q(eps)
    if rng.uniform() < coin:
        return WrappedOutcome(True, None, privacy, q)
    return WrappedOutcome(False, mechanism.sample(data, rng), privacy, q)


def wrapped_probabilities(probabilities: dict) -> dict:
    """Exact output law of the wrapper given the base mechanism's outcome probabilities."""
    if BOUNDARY in probabilities:
        raise ContractError(f"{BOUNDARY!r} is reserved for the wrapper")
    modal = max(probabilities.values())
    coin = boundary_probability(max(0.0, 1.0 - modal))
    out = {label: (1.0 - coin) * p for label, p in probabilities.items()}
    out[BOUNDARY] = coin
    return out


def wrapped_binary(pi: float) -> np.ndarray:
    """Masses of (outcome 0, outcome 1, Boundary) for a test outputting 1 with probability ``pi``."""
    base = {0: 1.0 - pi, 1: pi}
    w = wrapped_probabilities(base)
    return np.array([w[0], w[1], w[BOUNDARY]])


def wrap_sample_codes(mechanism, data, rng, n: int) -> np.ndarray:
    """Vectorized wrapper draws: base label codes, with ``len(labels)`` meaning Boundary."""
    _pure_epsilon(mechanism)
    _, modal_mass = mechanism.mode(data)
    coin = boundary_probability(max(0.0, 1.0 - modal_mass))
    codes = mechanism.sample_codes(data, rng, n)
    boundary = rng.uniforms(n) < coin
    return np.where(boundary, len(mechanism.labels), codes)


def run_twice(mechanism, data, rng, epsilon: float | None = None) -> RunTwiceOutcome:
    """Sample twice independently and publish both; a hit iff they differ."""
    if epsilon is None:
        epsilon = _pure_epsilon(mechanism)
    sampler = mechanism.sample if hasattr(mechanism, "sample") else mechanism
    first = sampler(data, rng.child(0))
    second = sampler(data, rng.child(1))
    return RunTwiceOutcome((first, second), PrivacyParams(2.0 * epsilon, 0.0), run_twice_q(epsilon))


def run_twice_sample_codes(mechanism, data, rng, n: int) -> np.ndarray:
    """Vectorized pairs encoded as ``first * len(labels) + second``."""
    m = len(mechanism.labels)
    first = mechanism.sample_codes(data, rng.child(0), n)
    second = mechanism.sample_codes(data, rng.child(1), n)
    return first * m + second
