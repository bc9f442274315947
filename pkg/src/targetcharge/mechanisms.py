"""Base private mechanisms: Laplace noise, AboveThreshold, BetweenThresholds and
a finite exponential mechanism.

Each mechanism is a small frozen dataclass. Calling it on a dataset with a
random stream returns a :class:`MechanismOutcome` carrying the published label
and value, its privacy parameters, its q-value and whether the declared target
was hit. Mechanisms also expose exact outcome probabilities (the "probability
oracle" used by the boundary wrapper and by the verifier) and a vectorized
label sampler used for Monte Carlo audits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Iterator, Mapping, Optional, Sequence, Union

import numpy as np

from .errors import ContractError
from .privacy_core import PrivacyParams, between_q, not_prior_q

Record = Mapping[str, Any]


def record_key(record: Record) -> tuple:
    """Hashable, order-independent identity of a record's content."""
    return tuple(sorted((str(k), v) for k, v in record.items()))


@dataclass(frozen=True)
class Dataset:
    """A multiset of records. Neighbors differ by adding or removing one record."""

    records: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(dict(r) for r in self.records))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[Record]:
        return iter(self.records)

    def add(self, record: Record) -> "Dataset":
        return Dataset(self.records + (dict(record),))

    def remove(self, index: int) -> "Dataset":
        recs = list(self.records)
        del recs[index]
        return Dataset(tuple(recs))

    def _counts(self) -> dict:
        counts: dict = {}
        for r in self.records:
            key = record_key(r)
            counts[key] = counts.get(key, 0) + 1
        return counts

    def is_neighbor(self, other: "Dataset") -> bool:
        a, b = self._counts(), other._counts()
        diff = sum(abs(a.get(k, 0) - b.get(k, 0)) for k in set(a) | set(b))
        return diff == 1


@dataclass(frozen=True)
class LinearQuery:
    """Sum over records of a ``[0, 1]``-valued predicate, compared to ``threshold``."""

    predicate: Callable[[Record], float]
    threshold: float = 0.0
    description: str = ""

    def evaluate(self, record: Record) -> float:
        value = float(self.predicate(record))
        if not (0.0 <= value <= 1.0):
            raise ContractError(
                f"predicate {self.description or self.predicate!r} returned {value}, outside [0, 1]"
            )
        return value

    def values(self, records: Iterable[Record]) -> list[float]:
        return [self.evaluate(r) for r in records]

    def total(self, data: Iterable[Record]) -> float:
        return math.fsum(self.values(data))

    def __call__(self, data: Iterable[Record]) -> float:
        return self.total(data)


@dataclass(frozen=True)
class MechanismOutcome:
    label: Any
    value: Optional[float]
    privacy: PrivacyParams
    target_hit: bool
    q: float


# -- Laplace ----------------------------------------------------------------


def laplace_quantile(u, scale: float):
    """Inverse CDF of Laplace(0, scale); accepts scalars or arrays in (0, 1)."""
    if not (scale > 0):
        raise ValueError(f"scale must be > 0, got {scale}")
    u = np.asarray(u, dtype=np.float64)
    out = np.where(u < 0.5, scale * np.log(2.0 * u), -scale * np.log(2.0 * (1.0 - u)))
    return float(out) if out.ndim == 0 else out


def laplace_cdf(x: float, scale: float) -> float:
    if x < 0:
        return 0.5 * math.exp(x / scale)
    return 1.0 - 0.5 * math.exp(-x / scale)


def laplace_sf(x: float, scale: float) -> float:
    """Survival function ``Pr[Lap(0, scale) > x]``, accurate in both tails."""
    if x >= 0:
        return 0.5 * math.exp(-x / scale)
    return 1.0 - 0.5 * math.exp(x / scale)


def laplace_sample(scale: float, rng) -> float:
    """One Laplace(0, scale) draw by inverse CDF from ``rng.uniform()``."""
    if not (scale > 0):
        raise ValueError(f"scale must be > 0, got {scale}")
    u = rng.uniform()
    # scalar twin of laplace_quantile, without the numpy round trip
    return scale * math.log(2.0 * u) if u < 0.5 else -scale * math.log(2.0 * (1.0 - u))


def _statistic(f: Union[LinearQuery, Callable[[Dataset], float]], data: Dataset) -> float:
    if isinstance(f, LinearQuery):
        return f.total(data)
    return float(f(data))


# -- AboveThreshold -------------------------------------------------------------


@dataclass(frozen=True)
class AboveThreshold:
    """Natural AboveThreshold: ``s + Lap(1/eps) >= t`` publishes the noisy value.

    Target is the ``"Above"`` outcome (a NotPrior target with prior ``"Below"``).
    """

    query: LinearQuery
    epsilon: float

    labels = ("Below", "Above")

    def __post_init__(self):
        if not (self.epsilon > 0):
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")

    @property
    def privacy(self) -> PrivacyParams:
        return PrivacyParams(self.epsilon, 0.0)

    @property
    def q(self) -> float:
        return not_prior_q(self.epsilon)

    def noisy_value(self, data: Dataset, rng) -> float:
        return self.query.total(data) + laplace_sample(1.0 / self.epsilon, rng)

    def __call__(self, data: Dataset, rng) -> MechanismOutcome:
        noisy = self.noisy_value(data, rng)
        above = noisy >= self.query.threshold
        return MechanismOutcome(
            label="Above" if above else "Below",
            value=noisy if above else None,
            privacy=self.privacy,
            target_hit=above,
            q=self.q,
        )

    def sample(self, data: Dataset, rng) -> str:
        return self(data, rng).label

    def outcome_probabilities(self, data: Dataset) -> dict:
        gap = self.query.threshold - self.query.total(data)
        b = 1.0 / self.epsilon
        return {"Below": laplace_cdf(gap, b), "Above": laplace_sf(gap, b)}

    def mode(self, data: Dataset) -> tuple[str, float]:
        probs = self.outcome_probabilities(data)
        label = max(self.labels, key=lambda k: probs[k])
        return label, probs[label]

    def sample_codes(self, data: Dataset, rng, n: int) -> np.ndarray:
        """Vectorized labels as indices into :attr:`labels`."""
        noisy = self.query.total(data) + laplace_quantile(rng.uniforms(n), 1.0 / self.epsilon)
        return (noisy >= self.query.threshold).astype(np.int64)


def above_threshold(data: Dataset, query: LinearQuery, epsilon: float, rng) -> MechanismOutcome:
    return AboveThreshold(query, epsilon)(data, rng)


# -- BetweenThresholds ----------------------------------------------------------


@dataclass(frozen=True)
class BetweenThresholds:
    """Noisy 1-Lipschitz value classified as ``L`` / ``Between`` / ``H``.

    ``Between`` covers the closed interval ``[t_l, t_r]`` and is the target.
    """

    statistic: Union[LinearQuery, Callable[[Dataset], float]]
    t_l: float
    t_r: float
    epsilon: float

    labels = ("L", "Between", "H")

    def __post_init__(self):
        if not (self.t_l < self.t_r):
            raise ValueError(f"need t_l < t_r, got {self.t_l} >= {self.t_r}")
        if not (self.epsilon > 0):
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")

    @property
    def privacy(self) -> PrivacyParams:
        return PrivacyParams(self.epsilon, 0.0)

    @property
    def q(self) -> float:
        return between_q(self.epsilon, self.t_r - self.t_l)

    def _classify(self, noisy: float) -> str:
        if noisy < self.t_l:
            return "L"
        if noisy > self.t_r:
            return "H"
        return "Between"

    def __call__(self, data: Dataset, rng) -> MechanismOutcome:
        noisy = _statistic(self.statistic, data) + laplace_sample(1.0 / self.epsilon, rng)
        label = self._classify(noisy)
        return MechanismOutcome(label, None, self.privacy, label == "Between", self.q)

    def sample(self, data: Dataset, rng) -> str:
        return self(data, rng).label

    def outcome_probabilities(self, data: Dataset) -> dict:
        f = _statistic(self.statistic, data)
        b = 1.0 / self.epsilon
        p_low = laplace_cdf(self.t_l - f, b)
        p_high = laplace_sf(self.t_r - f, b)
        gap = self.t_r - self.t_l
        if f <= self.t_l:  # both thresholds on the upper tail
            p_mid = -math.expm1(-gap / b) * laplace_sf(self.t_l - f, b)
        elif f >= self.t_r:
            p_mid = -math.expm1(-gap / b) * laplace_cdf(self.t_r - f, b)
        else:
            p_mid = 1.0 - p_low - p_high
        return {"L": p_low, "Between": p_mid, "H": p_high}

    def mode(self, data: Dataset) -> tuple[str, float]:
        probs = self.outcome_probabilities(data)
        label = max(self.labels, key=lambda k: probs[k])
        return label, probs[label]

    def sample_codes(self, data: Dataset, rng, n: int) -> np.ndarray:
        noisy = _statistic(self.statistic, data) + laplace_quantile(rng.uniforms(n), 1.0 / self.epsilon)
        codes = np.ones(n, dtype=np.int64)
        codes[noisy < self.t_l] = 0
        codes[noisy > self.t_r] = 2
        return codes


def between_thresholds(data: Dataset, f, t_l: float, t_r: float, epsilon: float, rng) -> MechanismOutcome:
    return BetweenThresholds(f, t_l, t_r, epsilon)(data, rng)


# -- Exponential mechanism ------------------------------------------------------


def exponential_probabilities(scores: Sequence[float], epsilon: float) -> np.ndarray:
    """Selection probabilities proportional to ``exp(eps * score / 2)``."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("scores must be non-empty")
    if not (epsilon > 0):
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    logits = 0.5 * epsilon * scores
    weights = np.exp(logits - logits.max())
    return weights / weights.sum()


def _inverse_cdf_index(probs: np.ndarray, u):
    cdf = np.cumsum(probs)
    return np.minimum(np.searchsorted(cdf, np.asarray(u) * cdf[-1], side="right"), len(probs) - 1)


@dataclass(frozen=True)
class ExponentialChoice:
    """Exponential mechanism over ``len(scores)`` candidates.

    ``scores`` are 1-Lipschitz functions of the dataset (``LinearQuery``
    instances work). With ``prior`` set, the target is every index except the
    prior (NotPrior); without it the whole range is the target (q = 1).
    """

    scores: Sequence[Union[LinearQuery, Callable[[Dataset], float]]]
    epsilon: float
    prior: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "scores", tuple(self.scores))
        if not self.scores:
            raise ValueError("scores must be non-empty")
        if not (self.epsilon > 0):
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")

    @property
    def labels(self) -> tuple:
        return tuple(range(len(self.scores)))

    @property
    def privacy(self) -> PrivacyParams:
        return PrivacyParams(self.epsilon, 0.0)

    @property
    def q(self) -> float:
        return 1.0 if self.prior is None else not_prior_q(self.epsilon)

    def score_values(self, data: Dataset) -> list[float]:
        return [_statistic(s, data) for s in self.scores]

    def probabilities(self, data: Dataset) -> np.ndarray:
        return exponential_probabilities(self.score_values(data), self.epsilon)

    def outcome_probabilities(self, data: Dataset) -> dict:
        return dict(enumerate(self.probabilities(data).tolist()))

    def mode(self, data: Dataset) -> tuple[int, float]:
        probs = self.probabilities(data)
        j = int(np.argmax(probs))
        return j, float(probs[j])

    def sample(self, data: Dataset, rng) -> int:
        return int(_inverse_cdf_index(self.probabilities(data), rng.uniform()))

    def __call__(self, data: Dataset, rng) -> MechanismOutcome:
        values = self.score_values(data)
        j = int(_inverse_cdf_index(exponential_probabilities(values, self.epsilon), rng.uniform()))
        hit = True if self.prior is None else j != self.prior
        return MechanismOutcome(j, None, self.privacy, hit, self.q)

    def sample_codes(self, data: Dataset, rng, n: int) -> np.ndarray:
        return _inverse_cdf_index(self.probabilities(data), rng.uniforms(n)).astype(np.int64)


def exponential_choice(scores: Sequence[float], epsilon: float, rng, prior: Optional[int] = None) -> MechanismOutcome:
    """Exponential mechanism on precomputed scores; only the index is published."""
    probs = exponential_probabilities(scores, epsilon)
    j = int(_inverse_cdf_index(probs, rng.uniform()))
    hit = True if prior is None else j != prior
    q = 1.0 if prior is None else not_prior_q(epsilon)
    return MechanismOutcome(j, None, PrivacyParams(epsilon, 0.0), hit, q)


# -- Laplace-noised sums used as selection candidates / CR payloads -------------


@dataclass(frozen=True)
class NoisySum:
    """``(solution, f(D) + Lap(1/eps))`` for a linear query; an (eps, 0)-DP candidate."""

    query: LinearQuery
    epsilon: float
    solution: Any = None
    delta: float = 0.0
    # bookkeeping for tests that count how often each mechanism is sampled
    calls: list = field(default_factory=list, compare=False, repr=False)

    def __post_init__(self):
        if not (self.epsilon > 0):
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")

    @property
    def privacy(self) -> PrivacyParams:
        return PrivacyParams(self.epsilon, self.delta)

    def __call__(self, data: Dataset, rng) -> tuple:
        self.calls.append(1)
        score = self.query.total(data) + laplace_sample(1.0 / self.epsilon, rng)
        return (self.solution if self.solution is not None else self.query.description, score)
