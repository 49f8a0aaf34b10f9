"""Comparison estimators: the no-shift efficient baseline and a Lasso weight.

The SPE baseline assumes the historical rewards share the experimental
control-arm mean and blends the two control-arm corrections with a
per-context weight built from the design sizes, the density ratio, the
control propensity, and the conditional reward variances.  The Lasso
baseline picks a scalar weight minimizing the estimated variance plus an
l1 penalty on the historical share.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import StaticDataset
from .nuisance import NuisanceSet, _as_matrix, _design, _ols
from .static import (EstimateReport, MomentEstimates, _regime_tag,
                     _wald_interval, moment_estimates, report_from_base)

_VARIANCE_FLOOR = 1e-8
_DEGENERATE = 1e-12


@dataclass(frozen=True)
class ConditionalVarianceModel:
    """Linear models for squared residuals, floored to stay positive."""

    coef_exp_control: np.ndarray
    coef_hist: np.ndarray
    floor: float = _VARIANCE_FLOOR

    def var_exp_control(self, contexts) -> np.ndarray:
        raw = _design(_as_matrix(contexts)) @ self.coef_exp_control
        return np.maximum(raw, self.floor)

    def var_hist(self, contexts) -> np.ndarray:
        raw = _design(_as_matrix(contexts)) @ self.coef_hist
        return np.maximum(raw, self.floor)


def fit_conditional_variance(dataset: StaticDataset,
                             nuisance: NuisanceSet) -> ConditionalVarianceModel:
    """Regress squared reward residuals on the context, per source."""
    control = dataset.exp_actions == 0
    resid_e = (dataset.exp_rewards[control]
               - nuisance.reward.evaluate(0, dataset.exp_contexts[control]))
    resid_h = (dataset.hist_rewards
               - nuisance.historical_reward.evaluate(dataset.hist_contexts))
    return ConditionalVarianceModel(
        coef_exp_control=_ols(dataset.exp_contexts[control], resid_e ** 2,
                              "control-arm conditional variance"),
        coef_hist=_ols(dataset.hist_contexts, resid_h ** 2,
                       "historical conditional variance"),
    )


def spe_weights(contexts, dataset: StaticDataset, nuisance: NuisanceSet,
                cvm: ConditionalVarianceModel) -> np.ndarray:
    """Per-context blending weight of the efficient no-shift baseline.

    ``n_e * mu(s) * pi(0|s)`` against ``n_h`` scaled by the conditional
    variance ratio; always strictly inside (0, 1).
    """
    contexts = _as_matrix(contexts)
    mu = nuisance.density_ratio.evaluate(contexts)
    p0 = nuisance.propensity.prob(0, contexts)
    variance_ratio = cvm.var_exp_control(contexts) / cvm.var_hist(contexts)
    numerator = dataset.n_e * mu * p0
    return numerator / (numerator + dataset.n_h * variance_ratio)


def spe_estimate(dataset: StaticDataset, nuisance: NuisanceSet,
                 cvm: ConditionalVarianceModel | None = None,
                 alpha: float = 0.05,
                 weight_override=None) -> EstimateReport:
    """Efficient baseline assuming no reward shift.

    The target-arm part of the estimating function is untouched; the
    control-arm mean and correction are blended per context: weight ``w(s)``
    on the experimental control residual and model, ``1 - w(s)`` on the
    historical prediction and the density-ratio-weighted historical
    residual.  ``weight_override`` substitutes a fixed weight function
    (used for degeneracy checks).
    """
    if cvm is None:
        cvm = fit_conditional_variance(dataset, nuisance)

    def weight_at(contexts):
        if weight_override is not None:
            return np.full(_as_matrix(contexts).shape[0], float(weight_override))
        return spe_weights(contexts, dataset, nuisance, cvm)

    contexts, actions = dataset.exp_contexts, dataset.exp_actions
    residual = dataset.exp_rewards - nuisance.reward.evaluate_at(actions, contexts)
    p1 = nuisance.propensity.prob1(contexts)
    nu1 = (actions == 1) / p1
    nu0 = (actions == 0) / (1.0 - p1)
    w_e = weight_at(contexts)
    phi_e = (nuisance.reward.evaluate(1, contexts) + nu1 * residual
             - w_e * (nuisance.reward.evaluate(0, contexts) + nu0 * residual)
             - (1.0 - w_e) * nuisance.historical_reward.evaluate(contexts))

    h_contexts = dataset.hist_contexts
    h_residual = (dataset.hist_rewards
                  - nuisance.historical_reward.evaluate(h_contexts))
    w_h = weight_at(h_contexts)
    phi_h = (1.0 - w_h) * nuisance.density_ratio.evaluate(h_contexts) * h_residual

    point = float(phi_e.mean() - phi_h.mean())
    variance = float(np.sum((phi_e - phi_e.mean()) ** 2) / dataset.n_e ** 2
                     + np.sum((phi_h - phi_h.mean()) ** 2) / dataset.n_h ** 2)
    lower, upper = _wald_interval(point, variance, alpha)
    m = moment_estimates(dataset, nuisance)
    return EstimateReport(method="SPE", tau_hat=point, var_hat=variance,
                          weight=float(np.clip(w_e.mean(), 0.0, 1.0)),
                          bias_hat=m.b_hat, ci_lower=lower, ci_upper=upper,
                          regime=_regime_tag(m))


def lasso_weight(m: MomentEstimates, lam: float) -> float:
    """Minimize the estimated variance plus ``lam * |1 - w|`` over [0, 1].

    Piecewise-quadratic closed form: the variance-only minimizer shifted
    toward 1 by ``lam / (2 * (var_e + var_h - 2 cov))``.
    """
    if lam < 0:
        raise ValueError(f"penalty must be non-negative, got {lam}")
    denominator = m.var_e + m.var_h - 2.0 * m.cov_eh
    if denominator <= _DEGENERATE:
        return 1.0
    raw = (m.var_h - m.cov_eh + lam / 2.0) / denominator
    return float(min(max(raw, 0.0), 1.0))


def lasso_estimate(dataset: StaticDataset, nuisance: NuisanceSet, lam: float,
                   alpha: float = 0.05) -> EstimateReport:
    """Weighted estimate with the penalized variance-minimizing weight."""
    from .static import tau_e, tau_h
    m = moment_estimates(dataset, nuisance)
    w = lasso_weight(m, lam)
    return report_from_base(tau_e(dataset, nuisance), tau_h(dataset, nuisance),
                            m, w, alpha, method="LASSO", regime=_regime_tag(m))
