"""Independent certification of privacy and q-target claims on small instances.

* :func:`exact_divergence` and :func:`check_indistinguishable` test pure and
  approximate indistinguishability of two finite distributions.
* :func:`binary_decomposition` is the closed-form mixture witness for a
  binary test; :func:`decomposition_search` finds a witness (or proves none
  exists) for any target on up to eight outcomes with a linear program.
* :func:`mc_privacy_audit` estimates a statistical *lower bound* on the
  privacy loss of a sampler from Monte Carlo counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import linprog

from .errors import ContractError

MASS_TOL = 1e-12
RECON_TOL = 1e-10
MAX_SEARCH_OUTCOMES = 8


@dataclass(frozen=True)
class DiscreteDistribution:
    outcomes: tuple
    masses: tuple

    def __post_init__(self):
        outcomes = tuple(self.outcomes)
        masses = tuple(float(m) for m in self.masses)
        if len(outcomes) != len(masses):
            raise ContractError("outcomes and masses differ in length")
        if len(set(outcomes)) != len(outcomes):
            raise ContractError("duplicate outcome labels")
        if any(not (m >= 0) for m in masses):
            raise ContractError("masses must be non-negative")
        if abs(math.fsum(masses) - 1.0) > MASS_TOL * max(1, len(masses)):
            raise ContractError(f"masses sum to {math.fsum(masses)!r}, not 1")
        object.__setattr__(self, "outcomes", outcomes)
        object.__setattr__(self, "masses", masses)

    @classmethod
    def from_dict(cls, probs: dict) -> "DiscreteDistribution":
        return cls(tuple(probs), tuple(probs.values()))

    @classmethod
    def bernoulli(cls, p: float) -> "DiscreteDistribution":
        return cls((0, 1), (1.0 - p, p))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.masses)

    def mass(self, subset) -> float:
        subset = set(subset)
        return math.fsum(m for o, m in zip(self.outcomes, self.masses) if o in subset)


def _aligned(P: DiscreteDistribution, Q: DiscreteDistribution) -> tuple[np.ndarray, np.ndarray]:
    if P.outcomes != Q.outcomes:
        raise ContractError("distributions must share the same outcome list")
    return P.array, Q.array


def exact_divergence(P: DiscreteDistribution, Q: DiscreteDistribution) -> float:
    """Symmetric max-divergence; ``inf`` if the supports differ."""
    p, q = _aligned(P, Q)
    worst = 0.0
    for a, b in zip(p, q):
        if a == 0 and b == 0:
            continue
        if a == 0 or b == 0:
            return math.inf
        worst = max(worst, abs(math.log(a / b)))
    return worst


def hockey_stick(P: DiscreteDistribution, Q: DiscreteDistribution, epsilon: float) -> float:
    """``sum_i max(0, p_i - e^eps q_i)`` (one direction)."""
    p, q = _aligned(P, Q)
    return float(math.fsum(np.maximum(0.0, p - math.exp(epsilon) * q)))


def check_indistinguishable(P, Q, epsilon: float, delta: float = 0.0, tol: float = 1e-12) -> bool:
    if not (epsilon >= 0) or not (0 <= delta <= 1):
        raise ValueError("need epsilon >= 0 and delta in [0, 1]")
    if delta == 0:
        return exact_divergence(P, Q) <= epsilon + tol
    return max(hockey_stick(P, Q, epsilon), hockey_stick(Q, P, epsilon)) <= delta + tol


@dataclass(frozen=True)
class MixtureDecomposition:
    """``Z^b = (1-delta)(p C + (1-p) B^b) + delta E^b`` for ``b`` in {0, 1}."""

    p: float
    common: DiscreteDistribution
    branch0: DiscreteDistribution
    branch1: DiscreteDistribution
    fail0: Optional[DiscreteDistribution] = None
    fail1: Optional[DiscreteDistribution] = None
    delta: float = 0.0

    def reconstruct(self, b: int) -> np.ndarray:
        branch = self.branch0 if b == 0 else self.branch1
        fail = self.fail0 if b == 0 else self.fail1
        z = (1 - self.delta) * (self.p * self.common.array + (1 - self.p) * branch.array)
        if fail is not None:
            z = z + self.delta * fail.array
        return z

    def target_masses(self, target) -> tuple[float, float]:
        return self.branch0.mass(target), self.branch1.mass(target)

    def verify(self, Z0, Z1, target, epsilon: float, q: float, tol: float = RECON_TOL) -> bool:
        """Exact check of the three witness conditions."""
        ok_recon = all(np.max(np.abs(self.reconstruct(b) - Z.array)) <= tol for b, Z in ((0, Z0), (1, Z1)))
        ok_branch = branch_ratio_ok(self.branch0.array, self.branch1.array, epsilon)
        ok_target = min(self.target_masses(target)) >= q - 1e-9
        return bool(ok_recon and ok_branch and ok_target)


def branch_ratio_ok(a: np.ndarray, b: np.ndarray, epsilon: float, slack: float = 1e-9) -> bool:
    e = math.exp(epsilon)
    return bool(np.all(a <= e * b + slack) and np.all(b <= e * a + slack))


def _point(outcomes, label) -> DiscreteDistribution:
    return DiscreteDistribution(outcomes, tuple(1.0 if o == label else 0.0 for o in outcomes))


def binary_decomposition(pi0: float, pi1: float, epsilon: float) -> MixtureDecomposition:
    """Closed-form witness that outcome 1 is a ``1/(e^eps+1)``-target for ``Ber(pi0), Ber(pi1)``.

    Requires ``pi0 <= pi1``; the common part is a point mass on outcome 0.
    """
    if not (epsilon > 0):
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    if not (0 <= pi0 <= pi1 <= 1):
        raise ValueError(f"need 0 <= pi0 <= pi1 <= 1, got ({pi0}, {pi1})")
    Z0, Z1 = DiscreteDistribution.bernoulli(pi0), DiscreteDistribution.bernoulli(pi1)
    if not check_indistinguishable(Z0, Z1, epsilon):
        raise ValueError(f"Ber({pi0}) and Ber({pi1}) are not {epsilon}-indistinguishable")
    outcomes = (0, 1)
    common = _point(outcomes, 0)
    e = math.exp(epsilon)
    if pi1 == 0:
        top = _point(outcomes, 1)
        return MixtureDecomposition(1.0, common, top, top)
    em1 = math.expm1(epsilon)
    p = 1.0 - (pi1 * e - pi0) / em1
    p = min(1.0, max(0.0, p))
    # target masses of the two branches
    # branch masses off the target, written without cancellation; their ratio is exactly e^eps
    if pi0 == pi1:
        off0 = off1 = 0.0
    else:
        off0 = (pi1 - pi0) / (pi1 - pi0 / e)
        off1 = (pi1 - pi0) / (pi1 * e - pi0)
    branch = lambda off: DiscreteDistribution(outcomes, (off, 1.0 - off))
    return MixtureDecomposition(p, common, branch(off0), branch(off1))


def decomposition_search(
    Z0: DiscreteDistribution,
    Z1: DiscreteDistribution,
    target,
    epsilon: float,
    delta: float,
    q: float,
) -> Optional[MixtureDecomposition]:
    """Witness that ``target`` is a q-target with ``(epsilon, delta)``, or ``None``.

    The witness conditions are linear in the unnormalised common mass
    ``u = p C`` and failure masses ``w^b = delta E^b``: the branch masses are
    ``v^b = (Z^b - w^b)/(1-delta) - u``. The program maximises the smallest
    branch target surplus, so a returned witness is as far from the boundary as
    possible; it is re-verified exactly before being returned.
    """
    p0, p1 = _aligned(Z0, Z1)
    n = len(p0)
    if n > MAX_SEARCH_OUTCOMES:
        raise ContractError(f"search supports at most {MAX_SEARCH_OUTCOMES} outcomes, got {n}")
    if not (epsilon >= 0) or not (0 <= delta < 1) or not (0 <= q <= 1):
        raise ValueError("need epsilon >= 0, delta in [0, 1) and q in [0, 1]")
    tmask = np.array([o in set(target) for o in Z0.outcomes], dtype=float)
    e = math.exp(epsilon)
    use_w = delta > 0
    # variables: u (n), [w0 (n), w1 (n)], s
    nv = n + (2 * n if use_w else 0) + 1
    iu = np.arange(n)
    iw0 = n + np.arange(n) if use_w else None
    iw1 = 2 * n + np.arange(n) if use_w else None
    js = nv - 1
    scale = 1.0 / (1.0 - delta)

    def v_row(b: int):
        """Coefficients and constant of v^b_i = c_i + A_i x."""
        z = p0 if b == 0 else p1
        A = np.zeros((n, nv))
        A[:, iu] = -np.eye(n)
        if use_w:
            A[:, iw0 if b == 0 else iw1] = -scale * np.eye(n)
        return A, scale * z

    A0, c0 = v_row(0)
    A1, c1 = v_row(1)
    rows, rhs = [], []
    # v^b >= 0  ->  -A x <= c
    for A, c in ((A0, c0), (A1, c1)):
        rows.append(-A)
        rhs.append(c)
    # v^0 <= e v^1 and v^1 <= e v^0
    rows.append(A0 - e * A1)
    rhs.append(e * c1 - c0)
    rows.append(A1 - e * A0)
    rhs.append(e * c0 - c1)
    # target surplus: sum_T v^b - q (1 - sum u) >= s
    one_u = np.zeros(nv)
    one_u[iu] = 1.0
    for A, c in ((A0, c0), (A1, c1)):
        coef = tmask @ A + q * one_u
        coef[js] = -1.0
        rows.append(-coef[None, :])
        rhs.append(np.array([tmask @ c - q]))
    A_ub = np.vstack(rows)
    b_ub = np.concatenate(rhs)
    A_eq, b_eq = None, None
    if use_w:
        A_eq = np.zeros((2, nv))
        A_eq[0, iw0] = 1.0
        A_eq[1, iw1] = 1.0
        b_eq = np.array([delta, delta])
    bounds = [(0, None)] * (nv - 1) + [(-1.0, 1.0)]
    cost = np.zeros(nv)
    cost[js] = -1.0
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status != 0 or res.x[js] < -1e-9:
        return None
    x = res.x
    u = np.clip(x[iu], 0.0, None)
    w0 = np.clip(x[iw0], 0.0, None) if use_w else np.zeros(n)
    w1 = np.clip(x[iw1], 0.0, None) if use_w else np.zeros(n)
    witness = _assemble(Z0, Z1, u, w0, w1, delta, tmask)
    if witness is None or not witness.verify(Z0, Z1, target, epsilon, q):
        return None
    return witness


def _normalise(x: np.ndarray) -> Optional[np.ndarray]:
    total = x.sum()
    return None if total <= 0 else x / total


def _assemble(Z0, Z1, u, w0, w1, delta, tmask) -> Optional[MixtureDecomposition]:
    outcomes = Z0.outcomes
    scale = 1.0 / (1.0 - delta)
    v0 = scale * (Z0.array - w0) - u
    v1 = scale * (Z1.array - w1) - u
    # drop solver dust so that zero-mass outcomes stay exactly zero in both branches
    dust = (np.abs(v0) < 1e-12) & (np.abs(v1) < 1e-12)
    v0 = np.where(dust, 0.0, np.clip(v0, 0.0, None))
    v1 = np.where(dust, 0.0, np.clip(v1, 0.0, None))
    p = float(min(1.0, u.sum()))
    common = _normalise(u)
    b0, b1 = _normalise(v0), _normalise(v1)
    if b0 is None or b1 is None:
        if not tmask.any():
            return None
        b0 = b1 = (tmask == 1).astype(float) / tmask.sum()
        p = 1.0
    if common is None:
        common = Z0.array.copy()
    mk = lambda arr: DiscreteDistribution(outcomes, tuple(arr / arr.sum()))
    f0 = mk(w0) if delta > 0 and w0.sum() > 0 else None
    f1 = mk(w1) if delta > 0 and w1.sum() > 0 else None
    return MixtureDecomposition(p, mk(common), mk(b0), mk(b1), f0, f1, delta)


def max_q(Z0, Z1, target, epsilon: float, delta: float = 0.0, tol: float = 1e-9) -> float:
    """Largest q (to ``tol``) for which :func:`decomposition_search` finds a witness."""
    lo, hi = 0.0, 1.0
    if decomposition_search(Z0, Z1, target, epsilon, delta, 0.0) is None:
        return 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if decomposition_search(Z0, Z1, target, epsilon, delta, mid) is None:
            hi = mid
        else:
            lo = mid
    return lo


# -- Monte Carlo audit ---------------------------------------------------------


def wilson_interval(successes: int, trials: int, z: float = 3.0) -> tuple[float, float]:
    if trials <= 0:
        raise ValueError("trials must be > 0")
    phat = successes / trials
    denom = 1 + z * z / trials
    centre = (phat + z * z / (2 * trials)) / denom
    half = z * math.sqrt(phat * (1 - phat) / trials + z * z / (4 * trials * trials)) / denom
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == trials else min(1.0, centre + half)
    return lo, hi


@dataclass(frozen=True)
class AuditResult:
    """Statistical lower bound on the privacy loss; it can refute a claim, never prove one."""

    epsilon_lower_bound: float
    epsilon_point_estimate: float
    worst_outcome: Optional[int]
    trials: int
    z: float
    counts0: tuple
    counts1: tuple
    kind: str = "lower bound"

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "epsilon_lower_bound": self.epsilon_lower_bound,
            "epsilon_point_estimate": self.epsilon_point_estimate,
            "worst_outcome": self.worst_outcome,
            "trials": self.trials,
            "z": self.z,
            "counts0": list(self.counts0),
            "counts1": list(self.counts1),
        }


def audit_from_counts(counts0: Sequence[int], counts1: Sequence[int], z: float = 3.0) -> AuditResult:
    counts0, counts1 = np.asarray(counts0, dtype=np.int64), np.asarray(counts1, dtype=np.int64)
    n0, n1 = int(counts0.sum()), int(counts1.sum())
    if n0 == 0 or n1 == 0:
        raise ValueError("audit needs at least one trial per side")
    best, best_point, worst = 0.0, 0.0, None
    for i, (a, b) in enumerate(zip(counts0, counts1)):
        lo0, hi0 = wilson_interval(int(a), n0, z)
        lo1, hi1 = wilson_interval(int(b), n1, z)
        for lo, hi in ((lo0, hi1), (lo1, hi0)):
            if lo > 0 and hi > 0:
                bound = math.log(lo / hi)
                if bound > best:
                    best, worst = bound, i
        if a > 0 and b > 0:
            best_point = max(best_point, abs(math.log((a / n0) / (b / n1))))
    return AuditResult(best, best_point, worst, n0, z, tuple(counts0.tolist()), tuple(counts1.tolist()))


def mc_privacy_audit(
    sample0: Callable,
    sample1: Callable,
    trials: int,
    rng,
    num_outcomes: int,
    z: float = 3.0,
) -> AuditResult:
    """Audit two samplers ``sample_b(rng, n) -> integer codes in [0, num_outcomes)``.

    The samplers usually run one mechanism on two neighbouring datasets. Each
    side draws from its own child stream of ``rng``.
    """
    if int(trials) != trials or trials <= 0:
        raise ValueError(f"trials must be a positive integer, got {trials}")
    c0 = np.bincount(np.asarray(sample0(rng.child(0), int(trials))), minlength=num_outcomes)
    c1 = np.bincount(np.asarray(sample1(rng.child(1), int(trials))), minlength=num_outcomes)
    if len(c0) > num_outcomes or len(c1) > num_outcomes:
        raise ContractError("sampler produced a code outside the declared outcome range")
    return audit_from_counts(c0, c1, z)
