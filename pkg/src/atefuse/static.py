"""Doubly robust ATE estimation from an experiment plus historical controls.

The experimental-only estimator averages an augmented inverse-propensity
score over the experiment.  The historical-data estimator replaces the
control-arm value with one borrowed from historical records, which buys
variance but is biased by the mean reward shift between the two sources.
The weighted estimators combine the two, choosing the weight to minimize
either the estimated MSE (non-pessimistic) or a high-probability upper
bound of it (pessimistic).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.stats import norm

from .data import ExperimentalRecord, HistoricalRecord, StaticDataset, sample_split
from .nuisance import NuisanceSet

METHODS = ("EDO", "NONPESSI", "PESSI", "HYBRID")
_DEGENERATE = 1e-12


@dataclass(frozen=True)
class MomentEstimates:
    """Sampling moments of the two base estimators.

    ``var_e``/``var_h``/``cov_eh`` are already on the scale of the averaged
    estimators (centered second moments divided by the squared sample
    size).  ``cov_eh**2 <= var_e * var_h`` is deliberately not enforced:
    these are sampling estimates and may violate it.
    """

    var_e: float
    var_h: float
    cov_eh: float
    b_hat: float
    n_e: int
    n_h: int

    def __post_init__(self):
        if min(self.n_e, self.n_h) < 2:
            raise ValueError("moment estimation needs at least 2 records per source")
        if self.var_e < 0 or self.var_h < 0:
            raise ValueError("variance estimates must be non-negative")

    @property
    def n_min(self) -> int:
        return min(self.n_e, self.n_h)

    @property
    def bias_sd(self) -> float:
        """Standard deviation of the reward-shift estimate."""
        return math.sqrt(max(self.var_e + self.var_h - 2.0 * self.cov_eh, 0.0))


@dataclass(frozen=True)
class EstimateReport:
    """Point estimate with its variance, weight, shift estimate and CI."""

    method: str
    tau_hat: float
    var_hat: float
    weight: float
    bias_hat: float
    ci_lower: float
    ci_upper: float
    regime: str = "n/a"
    n_capped: int = 0

    CSV_HEADER = "method,tau_hat,var_hat,weight,bias_hat,ci_lower,ci_upper,regime"

    def to_csv_row(self) -> str:
        return ",".join([self.method] + [repr(float(v)) for v in (
            self.tau_hat, self.var_hat, self.weight, self.bias_hat,
            self.ci_lower, self.ci_upper)] + [self.regime])


# ---------------------------------------------------------------------------
# Estimating functions.
# ---------------------------------------------------------------------------

def psi_e_values(dataset: StaticDataset, nuisance: NuisanceSet) -> np.ndarray:
    """Per-record values of the experimental-only estimating function.

    For each triplet: sum over arms of ``(-1)**(a-1)`` times the posited
    reward at that arm plus the importance-weighted residual
    ``I(A = a) / pi(a | S) * (R - r(A, S))``.
    """
    contexts, actions = dataset.exp_contexts, dataset.exp_actions
    residual = dataset.exp_rewards - nuisance.reward.evaluate_at(actions, contexts)
    p1 = nuisance.propensity.prob1(contexts)
    nu1 = (actions == 1) / p1
    nu0 = (actions == 0) / (1.0 - p1)
    direct = (nuisance.reward.evaluate(1, contexts)
              - nuisance.reward.evaluate(0, contexts))
    return direct + (nu1 - nu0) * residual


def psi_h1_values(dataset: StaticDataset, nuisance: NuisanceSet) -> np.ndarray:
    """Target-arm value correction minus the historical reward prediction."""
    contexts, actions = dataset.exp_contexts, dataset.exp_actions
    residual = dataset.exp_rewards - nuisance.reward.evaluate_at(actions, contexts)
    nu1 = (actions == 1) / nuisance.propensity.prob1(contexts)
    return (nuisance.reward.evaluate(1, contexts) + nu1 * residual
            - nuisance.historical_reward.evaluate(contexts))


def psi_h2_values(dataset: StaticDataset, nuisance: NuisanceSet) -> np.ndarray:
    """Density-ratio-weighted historical residuals."""
    contexts = dataset.hist_contexts
    residual = dataset.hist_rewards - nuisance.historical_reward.evaluate(contexts)
    return nuisance.density_ratio.evaluate(contexts) * residual


def _single_exp(record: ExperimentalRecord) -> StaticDataset:
    # Validation requires both arms, so evaluate through raw arrays instead.
    ds = StaticDataset.__new__(StaticDataset)
    ds.exp_contexts = np.asarray(record.context, dtype=float).reshape(1, -1)
    ds.exp_actions = np.array([record.action], dtype=int)
    ds.exp_rewards = np.array([record.reward], dtype=float)
    ds.hist_contexts = np.zeros((0, ds.exp_contexts.shape[1]))
    ds.hist_rewards = np.zeros(0)
    return ds


def psi_e(record: ExperimentalRecord, nuisance: NuisanceSet) -> float:
    return float(psi_e_values(_single_exp(record), nuisance)[0])


def psi_h1(record: ExperimentalRecord, nuisance: NuisanceSet) -> float:
    return float(psi_h1_values(_single_exp(record), nuisance)[0])


def psi_h2(record: HistoricalRecord, nuisance: NuisanceSet) -> float:
    ds = StaticDataset.__new__(StaticDataset)
    ds.hist_contexts = np.asarray(record.context, dtype=float).reshape(1, -1)
    ds.hist_rewards = np.array([record.reward], dtype=float)
    return float(psi_h2_values(ds, nuisance)[0])


def tau_e(dataset: StaticDataset, nuisance: NuisanceSet) -> float:
    """Experimental-data-only (EDO) doubly robust ATE estimate."""
    return float(np.mean(psi_e_values(dataset, nuisance)))


def tau_h(dataset: StaticDataset, nuisance: NuisanceSet) -> float:
    """ATE estimate whose control-arm value comes from the historical data."""
    return float(np.mean(psi_h1_values(dataset, nuisance))
                 - np.mean(psi_h2_values(dataset, nuisance)))


def moments_from_psi(psi_e_vals, psi_h1_vals, psi_h2_vals) -> MomentEstimates:
    """Sampling variances/covariance of the base estimators from psi values."""
    psi_e_vals = np.asarray(psi_e_vals, dtype=float)
    psi_h1_vals = np.asarray(psi_h1_vals, dtype=float)
    psi_h2_vals = np.asarray(psi_h2_vals, dtype=float)
    n_e, n_h = psi_e_vals.size, psi_h2_vals.size
    if n_e < 2 or n_h < 2:
        raise ValueError("moment estimation needs at least 2 records per source")
    ce = psi_e_vals - psi_e_vals.mean()
    c1 = psi_h1_vals - psi_h1_vals.mean()
    c2 = psi_h2_vals - psi_h2_vals.mean()
    tau_e_hat = psi_e_vals.mean()
    tau_h_hat = psi_h1_vals.mean() - psi_h2_vals.mean()
    return MomentEstimates(
        var_e=float(np.sum(ce ** 2) / n_e ** 2),
        var_h=float(np.sum(c1 ** 2) / n_e ** 2 + np.sum(c2 ** 2) / n_h ** 2),
        cov_eh=float(np.sum(ce * c1) / n_e ** 2),
        b_hat=float(tau_e_hat - tau_h_hat),
        n_e=n_e, n_h=n_h)


def moment_estimates(dataset: StaticDataset, nuisance: NuisanceSet) -> MomentEstimates:
    return moments_from_psi(psi_e_values(dataset, nuisance),
                            psi_h1_values(dataset, nuisance),
                            psi_h2_values(dataset, nuisance))


# ---------------------------------------------------------------------------
# Weights, intervals, and regime selection.
# ---------------------------------------------------------------------------

def _weight_formula(b_squared: float, m: MomentEstimates) -> float:
    # Minimizes w^2 var_e + (1-w)^2 (var_h + b^2) + 2 w (1-w) cov over [0, 1].
    denominator = m.var_e + b_squared + m.var_h - 2.0 * m.cov_eh
    if abs(denominator) <= _DEGENERATE:
        # No measurable variance signal: historical data adds nothing.
        return 1.0
    if denominator < 0.0:
        # Concave estimated MSE (possible only for pathological moment
        # inputs): the minimizer is the better endpoint.
        return 0.0 if m.var_h + b_squared <= m.var_e else 1.0
    raw = (b_squared + m.var_h - m.cov_eh) / denominator
    return float(min(max(raw, 0.0), 1.0))


def weight_nonpessimistic(m: MomentEstimates) -> float:
    """Weight minimizing the estimated MSE of the combined estimator."""
    return _weight_formula(m.b_hat ** 2, m)


def uncertainty_quantifier(m: MomentEstimates, alpha: float) -> float:
    """High-probability margin for the reward-shift estimation error.

    Normal approximation with the one-sided quantile: ``z_(1 - alpha)``
    times the standard deviation of the shift estimate.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return float(norm.ppf(1.0 - alpha) * m.bias_sd)


def weight_pessimistic(m: MomentEstimates, margin: float) -> float:
    """Weight from the pessimistic shift estimate ``(|b_hat| + margin)**2``."""
    return _weight_formula((abs(m.b_hat) + margin) ** 2, m)


def combined_variance(m: MomentEstimates, w: float) -> float:
    return (w ** 2 * m.var_e + (1.0 - w) ** 2 * m.var_h
            + 2.0 * w * (1.0 - w) * m.cov_eh)


def tau_weighted(dataset: StaticDataset, nuisance: NuisanceSet, w: float,
                 alpha: float = 0.05, method: str = "WEIGHTED") -> EstimateReport:
    """Combine the two base estimates with a fixed weight ``w``."""
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"weight must lie in [0, 1], got {w}")
    m = moment_estimates(dataset, nuisance)
    return _report_from_moments(dataset, nuisance, m, w, alpha, method,
                                regime=_regime_tag(m))


def _report_from_moments(dataset, nuisance, m: MomentEstimates, w: float,
                         alpha: float, method: str, regime: str) -> EstimateReport:
    return report_from_base(tau_e(dataset, nuisance), tau_h(dataset, nuisance),
                            m, w, alpha, method, regime)


def report_from_base(tau_e_hat: float, tau_h_hat: float, m: MomentEstimates,
                     w: float, alpha: float, method: str,
                     regime: str) -> EstimateReport:
    """Build a report from the two base estimates and their moments."""
    point = w * tau_e_hat + (1.0 - w) * tau_h_hat
    variance = combined_variance(m, w)
    lower, upper = _wald_interval(point, variance, alpha)
    return EstimateReport(method=method, tau_hat=point, var_hat=variance,
                          weight=w, bias_hat=m.b_hat, ci_lower=lower,
                          ci_upper=upper, regime=regime)


def _wald_interval(tau_hat: float, var_hat: float, alpha: float):
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    half = norm.ppf(1.0 - alpha / 2.0) * math.sqrt(max(var_hat, 0.0))
    return tau_hat - half, tau_hat + half


def confidence_interval(report: EstimateReport, alpha: float):
    """Two-sided Wald interval around the report's point estimate."""
    return _wald_interval(report.tau_hat, report.var_hat, alpha)


def hybrid_select(m: MomentEstimates) -> str:
    """Pick SPE / PESSI / EDO from the estimated shift magnitude.

    Thresholds are 1 and ``sqrt(log(n_min))`` standard deviations of the
    shift estimate, separating the small / moderate / large regimes.
    """
    if m.n_min < 3:
        raise ValueError("hybrid selection needs n_min >= 3")
    return {"small": "SPE", "moderate": "PESSI", "large": "EDO"}[_regime_tag(m)]


def _regime_tag(m: MomentEstimates) -> str:
    if m.n_min < 3:
        return "n/a"
    sd = m.bias_sd
    c2 = math.sqrt(math.log(m.n_min))
    if abs(m.b_hat) <= sd:
        return "small"
    if abs(m.b_hat) <= c2 * sd:
        return "moderate"
    return "large"


def estimate(dataset: StaticDataset, nuisance: NuisanceSet,
             method: str = "NONPESSI", alpha: float = 0.05,
             split_seed: Optional[int] = None) -> EstimateReport:
    """End-to-end weighted estimate.

    Parameters
    ----------
    dataset : StaticDataset
        Experimental and historical records.
    nuisance : NuisanceSet
        Fitted or user-supplied nuisance models.
    method : str
        One of ``EDO``, ``NONPESSI``, ``PESSI``, ``HYBRID``.
    alpha : float
        Significance level driving both the pessimistic margin and the CI.
    split_seed : int, optional
        When given, the weight is learned on one half of the data and the
        final estimate is formed on the other half.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if split_seed is not None:
        halves = sample_split(dataset, split_seed)
        weight_data, estimate_data = halves.first_half, halves.second_half
    else:
        weight_data = estimate_data = dataset

    weight_moments = moment_estimates(weight_data, nuisance)
    regime = _regime_tag(weight_moments)

    if method == "HYBRID":
        selected = hybrid_select(weight_moments)
        if selected == "SPE":
            from .baselines import spe_estimate
            report = spe_estimate(estimate_data, nuisance, alpha=alpha)
            return replace(report, method="HYBRID", regime=regime)
        method_used = selected
    else:
        method_used = method

    if method_used == "EDO":
        w = 1.0
    elif method_used == "NONPESSI":
        w = weight_nonpessimistic(weight_moments)
    else:
        margin = uncertainty_quantifier(weight_moments, alpha)
        w = weight_pessimistic(weight_moments, margin)

    final_moments = (weight_moments if estimate_data is weight_data
                     else moment_estimates(estimate_data, nuisance))
    return _report_from_moments(estimate_data, nuisance, final_moments, w,
                                alpha, method, regime)
