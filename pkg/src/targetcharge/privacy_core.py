"""Closed-form privacy arithmetic for target charging.

All logarithms are natural. Functions are pure and raise ``ValueError`` on
arguments outside their domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

__all__ = [
    "PrivacyParams",
    "TailParams",
    "not_prior_q",
    "between_q",
    "wrapper_privacy",
    "boundary_q",
    "run_twice_q",
    "basic_composition",
    "advanced_composition",
    "delta_star",
    "chernoff_constant",
    "min_tau",
    "tct_bound",
]


@dataclass(frozen=True)
class PrivacyParams:
    """An (epsilon, delta) guarantee."""

    epsilon: float
    delta: float = 0.0

    def __post_init__(self):
        if not (self.epsilon >= 0):  # also rejects NaN
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        # delta == 1 is allowed so that vacuous bounds can still be reported
        if not (0.0 <= self.delta <= 1.0):
            raise ValueError(f"delta must be in [0, 1], got {self.delta}")

    def as_tuple(self) -> tuple[float, float]:
        return (self.epsilon, self.delta)


@dataclass(frozen=True)
class TailParams:
    """Hit budget ``tau``, slack ``alpha`` and cumulative-delta budget ``tau_delta``."""

    tau: int
    alpha: float = 1.0
    tau_delta: float = 0.0

    def __post_init__(self):
        if int(self.tau) != self.tau or self.tau < 1:
            raise ValueError(f"tau must be an integer >= 1, got {self.tau}")
        if not (self.alpha > 0):
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not (self.tau_delta >= 0):
            raise ValueError(f"tau_delta must be >= 0, got {self.tau_delta}")


def _check_epsilon(epsilon: float, *, strict: bool = False) -> float:
    epsilon = float(epsilon)
    if strict and not (epsilon > 0):
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    if not (epsilon >= 0):
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    return epsilon


def not_prior_q(epsilon: float) -> float:
    """q-value of a NotPrior target of an epsilon-DP algorithm: ``1/(e^eps + 1)``."""
    epsilon = _check_epsilon(epsilon)
    z = math.exp(-epsilon)
    return z / (1.0 + z)


def between_q(epsilon: float, gap: float) -> float:
    """q-value of the "between" outcome of BetweenThresholds with ``gap = t_r - t_l``."""
    epsilon = _check_epsilon(epsilon, strict=True)
    gap = float(gap)
    if not (gap >= 0):
        raise ValueError(f"gap must be >= 0, got {gap}")
    if math.isinf(gap):
        return not_prior_q(epsilon)
    return -math.expm1(-gap * epsilon) * not_prior_q(epsilon)


def wrapper_privacy(epsilon: float) -> float:
    """Privacy parameter of a boundary-wrapped epsilon-DP algorithm (the 4/3 bound)."""
    return 4.0 * _check_epsilon(epsilon) / 3.0


def boundary_q(epsilon: float) -> float:
    """q-value of the boundary outcome added by the wrapper."""
    epsilon = _check_epsilon(epsilon, strict=True)
    t = wrapper_privacy(epsilon)
    return math.expm1(t) / (2.0 * math.expm1(epsilon + t))


def run_twice_q(epsilon: float) -> float:
    """q-value of the "two runs disagree" target: ``1 - sqrt(e^{2eps}/(1+e^{2eps}))``."""
    epsilon = _check_epsilon(epsilon)
    # e^{2e}/(1+e^{2e}) = 1/(1+e^{-2e})
    return 1.0 - math.sqrt(1.0 / (1.0 + math.exp(-2.0 * epsilon)))


def basic_composition(count: int, epsilon: float) -> PrivacyParams:
    if count < 0:
        raise ValueError("count must be >= 0")
    return PrivacyParams(count * _check_epsilon(epsilon), 0.0)


def advanced_composition(count: float, epsilon: float, delta: float) -> PrivacyParams:
    """Advanced composition of ``count`` epsilon-DP calls.

    ``count`` may be fractional (the bound is monotone in it), which is how the
    target-charging bound uses it.
    """
    epsilon = _check_epsilon(epsilon)
    if count < 0:
        raise ValueError("count must be >= 0")
    if not (0.0 < delta < 1.0):
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    eps_total = 0.5 * count * epsilon**2 + epsilon * math.sqrt(2.0 * count * math.log(1.0 / delta))
    return PrivacyParams(eps_total, delta)


def _check_tail(tau: int, alpha: float) -> None:
    if int(tau) != tau or tau < 1:
        raise ValueError(f"tau must be an integer >= 1, got {tau}")
    if not (alpha > 0):
        raise ValueError(f"alpha must be > 0, got {alpha}")


def delta_star(tau: int, alpha: float, form: str = "simplified") -> float:
    """Probability that more than ``(1+alpha) tau / q`` private calls precede ``tau`` hits.

    ``form="simplified"`` is ``exp(-alpha^2 tau / (2 (1+alpha)))``, the bound
    used in privacy reports. ``form="raw"`` is the tighter multiplicative
    Chernoff bound ``exp(-tau (alpha - ln(1+alpha)))``.
    """
    _check_tail(tau, alpha)
    if form == "simplified":
        return math.exp(-(alpha**2) * tau / (2.0 * (1.0 + alpha)))
    if form == "raw":
        return math.exp(-tau * (alpha - math.log1p(alpha)))
    raise ValueError(f"unknown form {form!r}")


def chernoff_constant(alpha: float, form: str = "raw") -> float:
    """Factor ``c`` such that ``tau >= c ln(1/delta_star)`` keeps the tail below ``delta_star``."""
    if not (alpha > 0):
        raise ValueError(f"alpha must be > 0, got {alpha}")
    if form == "simplified":
        return 2.0 * (1.0 + alpha) / alpha**2
    if form == "raw":
        # 1 / ((1+a) ln(e^{a/(1+a)} (1+a)^{-1/(1+a)})) simplifies to 1 / (a - ln(1+a))
        return 1.0 / (alpha - math.log1p(alpha))
    raise ValueError(f"unknown form {form!r}")


def min_tau(alpha: float, delta_star: float, form: str = "raw") -> int:
    """Smallest integer hit budget meeting the Chernoff tail target (at least 1)."""
    if not (0.0 < delta_star < 1.0):
        raise ValueError(f"delta_star must be in (0, 1), got {delta_star}")
    need = chernoff_constant(alpha, form) * math.log(1.0 / delta_star)
    return max(1, math.ceil(need))


def tct_bound(
    tail: TailParams,
    epsilon: float,
    q: float,
    c_delta: float = 0.0,
    target_delta: Optional[float] = None,
) -> PrivacyParams:
    """Privacy of a target-charging session that may reach ``tail.tau`` hits.

    Without ``target_delta`` this is the basic-composition form
    ``((1+alpha) tau/q * eps, C_delta + delta*)``. With it, the advanced form
    over ``(1+alpha) tau / q`` calls is used and ``target_delta`` is added to
    the delta term.
    """
    epsilon = _check_epsilon(epsilon)
    if not (0.0 < q <= 1.0):
        raise ValueError(f"q must be in (0, 1], got {q}")
    if not (c_delta >= 0):
        raise ValueError(f"c_delta must be >= 0, got {c_delta}")
    calls = (1.0 + tail.alpha) * tail.tau / q
    tail_delta = delta_star(tail.tau, tail.alpha)
    if target_delta is None:
        return PrivacyParams(calls * epsilon, min(1.0, c_delta + tail_delta))
    adv = advanced_composition(calls, epsilon, target_delta)
    return PrivacyParams(adv.epsilon, min(1.0, target_delta + c_delta + tail_delta))
