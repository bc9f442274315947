"""Target-charging differential privacy engine.

Private calls are charged only when their output lands in a declared
target; the :mod:`targetcharge.verifier` module certifies the q-values and
privacy formulas the accounting relies on.
"""

from .accountant import CallRecord, CallStatus, Session, SessionConfig, SessionStatus, open_session
from .conditional_release import BOTTOM, Everything, Interval, LabelSet, Nothing, Predicate, cr, revise
from .mechanisms import (
    AboveThreshold,
    BetweenThresholds,
    Dataset,
    ExponentialChoice,
    LinearQuery,
    MechanismOutcome,
    NoisySum,
    above_threshold,
    between_thresholds,
    exponential_choice,
    laplace_sample,
)
from .privacy_core import (
    PrivacyParams,
    TailParams,
    advanced_composition,
    basic_composition,
    between_q,
    boundary_q,
    chernoff_constant,
    delta_star,
    min_tau,
    not_prior_q,
    run_twice_q,
    tct_bound,
    wrapper_privacy,
)
from .rng import FixedUniform, RandomStream

__version__ = "0.1.0"

__all__ = [
    "CallRecord",
    "CallStatus",
    "Session",
    "SessionConfig",
    "SessionStatus",
    "open_session",
    "BOTTOM",
    "Everything",
    "Interval",
    "LabelSet",
    "Nothing",
    "Predicate",
    "cr",
    "revise",
    "AboveThreshold",
    "BetweenThresholds",
    "Dataset",
    "ExponentialChoice",
    "LinearQuery",
    "MechanismOutcome",
    "NoisySum",
    "above_threshold",
    "between_thresholds",
    "exponential_choice",
    "laplace_sample",
    "PrivacyParams",
    "TailParams",
    "advanced_composition",
    "basic_composition",
    "between_q",
    "boundary_q",
    "chernoff_constant",
    "delta_star",
    "min_tau",
    "not_prior_q",
    "run_twice_q",
    "tct_bound",
    "wrapper_privacy",
    "FixedUniform",
    "RandomStream",
]
