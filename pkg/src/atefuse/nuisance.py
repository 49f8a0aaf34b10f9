"""Nuisance models feeding the estimator stack.

Covers the posit reward models, the behavior propensity, the static context
density ratio, per-step value functions for the sequential setting, and the
state density ratios (cumulative importance ratios plus a sieve for the
historical-side ratio).  Every ratio evaluation is clipped into
``[clip, 1/clip]`` and every propensity into ``[clip, 1 - clip]``; fitting
is deterministic, so identical inputs give bit-identical coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .data import SequentialDataset, StaticDataset

DEFAULT_CLIP = 1e-3
DEFAULT_RIDGE = 1e-8
DEFAULT_BASIS_DEGREE = 2
_NEWTON_MAX_ITER = 100
_NEWTON_TOL = 1e-10


class FitError(RuntimeError):
    """Raised when a nuisance fit is degenerate or fails to converge."""


def _as_matrix(contexts) -> np.ndarray:
    contexts = np.asarray(contexts, dtype=float)
    if contexts.ndim == 1:
        contexts = contexts.reshape(1, -1)
    return contexts


def _design(contexts: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(contexts.shape[0]), contexts])


def _ols(contexts: np.ndarray, targets: np.ndarray, label: str) -> np.ndarray:
    design = _design(contexts)
    if design.shape[0] < design.shape[1]:
        raise FitError(f"too few records to fit {label}: "
                       f"{design.shape[0]} < {design.shape[1]}")
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise FitError(f"rank-deficient design for {label}")
    coef, *_ = np.linalg.lstsq(design, targets, rcond=None)
    return coef


def _fit_logistic(contexts: np.ndarray, labels: np.ndarray, label: str) -> np.ndarray:
    """Newton logistic fit; raises on separation or non-convergence."""
    design = _design(contexts)
    beta = np.zeros(design.shape[1])
    for _ in range(_NEWTON_MAX_ITER):
        eta = design @ beta
        prob = 1.0 / (1.0 + np.exp(-np.clip(eta, -500, 500)))
        grad = design.T @ (labels - prob)
        if np.max(np.abs(grad)) < _NEWTON_TOL:
            # A saturated fit means the likelihood has no maximizer.
            if np.max(np.minimum(prob, 1.0 - prob)) < 1e-8:
                raise FitError(f"{label} fit did not converge "
                               "(perfect separation)")
            return beta
        weight = np.maximum(prob * (1.0 - prob), 1e-12)
        hessian = design.T @ (design * weight[:, None])
        try:
            step = np.linalg.solve(hessian, grad)
        except np.linalg.LinAlgError:
            raise FitError(f"singular Hessian while fitting {label} "
                           "(likely separation)") from None
        beta = beta + step
        if np.max(np.abs(beta)) > 1e4:
            raise FitError(f"{label} fit did not converge (likely separation)")
    raise FitError(f"{label} fit did not converge after {_NEWTON_MAX_ITER} iterations")


@dataclass(frozen=True)
class RewardModel:
    """Per-arm linear reward model, or identically zero when ``coef`` is None.

    ``coef`` has shape ``(2, d + 1)``; row ``a`` holds the intercept and
    slopes for arm ``a``.  The zero variant turns the combined estimator
    into its pure importance-sampling form.
    """

    coef: Optional[np.ndarray]

    @property
    def is_zero(self) -> bool:
        return self.coef is None

    def evaluate(self, arm: int, contexts) -> np.ndarray:
        contexts = _as_matrix(contexts)
        if self.coef is None:
            return np.zeros(contexts.shape[0])
        return _design(contexts) @ self.coef[arm]

    def evaluate_at(self, actions, contexts) -> np.ndarray:
        contexts = _as_matrix(contexts)
        if self.coef is None:
            return np.zeros(contexts.shape[0])
        values = _design(contexts) @ self.coef.T
        return values[np.arange(contexts.shape[0]), np.asarray(actions, dtype=int)]


@dataclass(frozen=True)
class HistoricalRewardModel:
    """Linear model for the historical reward, or identically zero."""

    coef: Optional[np.ndarray]

    @property
    def is_zero(self) -> bool:
        return self.coef is None

    def evaluate(self, contexts) -> np.ndarray:
        contexts = _as_matrix(contexts)
        if self.coef is None:
            return np.zeros(contexts.shape[0])
        return _design(contexts) @ self.coef


def zero_reward_model() -> RewardModel:
    return RewardModel(coef=None)


def zero_historical_reward_model() -> HistoricalRewardModel:
    return HistoricalRewardModel(coef=None)


def fit_reward_model(contexts, actions, rewards) -> RewardModel:
    """Ordinary least squares per arm on an intercept plus the context."""
    contexts = _as_matrix(contexts)
    actions = np.asarray(actions, dtype=int)
    rewards = np.asarray(rewards, dtype=float)
    d = contexts.shape[1]
    coef = np.zeros((2, d + 1))
    for arm in (0, 1):
        mask = actions == arm
        if mask.sum() < d + 2:
            raise FitError(f"too few records for arm {arm}: "
                           f"{int(mask.sum())} < {d + 2}")
        coef[arm] = _ols(contexts[mask], rewards[mask], f"reward model of arm {arm}")
    return RewardModel(coef=coef)


def fit_historical_reward_model(contexts, rewards) -> HistoricalRewardModel:
    contexts = _as_matrix(contexts)
    rewards = np.asarray(rewards, dtype=float)
    if contexts.shape[0] < contexts.shape[1] + 2:
        raise FitError(f"too few records for the historical reward model: "
                       f"{contexts.shape[0]} < {contexts.shape[1] + 2}")
    coef = _ols(contexts, rewards, "historical reward model")
    return HistoricalRewardModel(coef=coef)


@dataclass(frozen=True)
class PropensityModel:
    """Behavior policy pi(a | s); known-constant or fitted-logistic."""

    p1: Optional[float] = None
    coef: Optional[np.ndarray] = None
    clip: float = DEFAULT_CLIP

    def prob1(self, contexts) -> np.ndarray:
        contexts = _as_matrix(contexts)
        if self.coef is not None:
            eta = _design(contexts) @ self.coef
            raw = 1.0 / (1.0 + np.exp(-np.clip(eta, -500, 500)))
        else:
            raw = np.full(contexts.shape[0], self.p1)
        return np.clip(raw, self.clip, 1.0 - self.clip)

    def prob(self, arm: int, contexts) -> np.ndarray:
        p1 = self.prob1(contexts)
        return p1 if arm == 1 else 1.0 - p1


def known_propensity(p1: float, clip: float = DEFAULT_CLIP) -> PropensityModel:
    if not 0.0 < p1 < 1.0:
        raise ValueError(f"propensity must lie in (0, 1), got {p1}")
    return PropensityModel(p1=float(p1), clip=clip)


def fit_propensity(contexts, actions, clip: float = DEFAULT_CLIP) -> PropensityModel:
    contexts = _as_matrix(contexts)
    actions = np.asarray(actions, dtype=float)
    if not (actions == 1).any() or not (actions == 0).any():
        raise FitError("both arms are required to fit the propensity")
    coef = _fit_logistic(contexts, actions, "propensity")
    return PropensityModel(coef=coef, clip=clip)


@dataclass(frozen=True)
class DensityRatioModel:
    """Context density ratio (experimental over historical).

    The fitted variant rescales the odds of a logistic "is experimental"
    classifier by the sampling fraction ``n_h / n_e``; the constant variant
    encodes the knowledge that both context distributions coincide.
    """

    coef: Optional[np.ndarray] = None
    scale: float = 1.0
    clip: float = DEFAULT_CLIP

    def evaluate(self, contexts) -> np.ndarray:
        contexts = _as_matrix(contexts)
        if self.coef is None:
            raw = np.ones(contexts.shape[0])
        else:
            eta = np.clip(_design(contexts) @ self.coef, -500, 500)
            raw = self.scale * np.exp(eta)
        return np.clip(raw, self.clip, 1.0 / self.clip)


def constant_density_ratio(clip: float = DEFAULT_CLIP) -> DensityRatioModel:
    return DensityRatioModel(coef=None, clip=clip)


def fit_density_ratio_static(exp_contexts, hist_contexts,
                             clip: float = DEFAULT_CLIP) -> DensityRatioModel:
    exp_contexts = _as_matrix(exp_contexts)
    hist_contexts = _as_matrix(hist_contexts)
    if exp_contexts.shape[0] == 0 or hist_contexts.shape[0] == 0:
        raise FitError("both context samples are required for the density ratio")
    pooled = np.vstack([exp_contexts, hist_contexts])
    labels = np.concatenate([np.ones(exp_contexts.shape[0]),
                             np.zeros(hist_contexts.shape[0])])
    coef = _fit_logistic(pooled, labels, "density ratio")
    scale = hist_contexts.shape[0] / exp_contexts.shape[0]
    return DensityRatioModel(coef=coef, scale=scale, clip=clip)


# ---------------------------------------------------------------------------
# Sequential nuisances: value functions and state density ratios.
# ---------------------------------------------------------------------------

def fit_value_function(contexts, actions, rewards, arm: Optional[int]) -> np.ndarray:
    """Backward least-squares value fit for one process.

    For ``t = T..1`` regresses ``R_t + V_{t+1}(S_{t+1})`` on an intercept
    plus ``S_t``.  With an ``arm`` given, only steps taking that arm enter
    the time-``t`` regression (the value of the constant-arm policy); with
    ``arm=None`` every step is used (the historical process).  Returns
    coefficients of shape ``(T + 1, d + 1)`` whose terminal row is zero.
    """
    contexts = np.asarray(contexts, dtype=float)
    actions = np.asarray(actions, dtype=int)
    rewards = np.asarray(rewards, dtype=float)
    n, horizon = rewards.shape
    d = contexts.shape[2]
    coef = np.zeros((horizon + 1, d + 1))
    next_values = np.zeros(n)
    for t in range(horizon - 1, -1, -1):
        targets = rewards[:, t] + next_values
        if arm is None:
            mask = np.ones(n, dtype=bool)
        else:
            mask = actions[:, t] == arm
            if not mask.any():
                raise FitError(f"no steps with arm {arm} at time {t + 1}")
        coef[t] = _ols(contexts[mask, t], targets[mask],
                       f"value function at time {t + 1}")
        next_values = _design(contexts[:, t]) @ coef[t]
    return coef


@dataclass(frozen=True)
class ValueFunctionSet:
    """Per-step linear value functions for both arms and the historical process.

    ``treat``/``control``/``hist`` hold coefficients of shape
    ``(T + 1, d + 1)``; time indices are 1-based and the terminal row
    (time ``T + 1``) is identically zero.
    """

    treat: np.ndarray
    control: np.ndarray
    hist: np.ndarray

    def __post_init__(self):
        for name in ("treat", "control", "hist"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if np.abs(arr[-1]).max() > 0:
                raise ValueError(f"terminal value of {name} must be zero")
            object.__setattr__(self, name, arr)

    @property
    def horizon(self) -> int:
        return self.treat.shape[0] - 1

    def evaluate(self, arm: int, t: int, contexts) -> np.ndarray:
        coef = self.treat if arm == 1 else self.control
        return _design(_as_matrix(contexts)) @ coef[t - 1]

    def evaluate_hist(self, t: int, contexts) -> np.ndarray:
        return _design(_as_matrix(contexts)) @ self.hist[t - 1]

    @classmethod
    def fit(cls, dataset: SequentialDataset) -> "ValueFunctionSet":
        return cls(
            treat=fit_value_function(dataset.exp_contexts, dataset.exp_actions,
                                     dataset.exp_rewards, arm=1),
            control=fit_value_function(dataset.exp_contexts, dataset.exp_actions,
                                       dataset.exp_rewards, arm=0),
            hist=fit_value_function(dataset.hist_contexts, dataset.hist_actions,
                                    dataset.hist_rewards, arm=None),
        )


@dataclass(frozen=True)
class PolynomialBasis:
    """Constant plus per-coordinate monomials up to ``degree``."""

    degree: int = DEFAULT_BASIS_DEGREE

    def evaluate(self, contexts) -> np.ndarray:
        contexts = _as_matrix(contexts)
        cols = [np.ones(contexts.shape[0])]
        for power in range(1, self.degree + 1):
            cols.append(contexts ** power)
        return np.column_stack(cols)

    def size(self, dim: int) -> int:
        return 1 + self.degree * dim


@dataclass(frozen=True)
class StateRatioSet:
    """State density ratios for the sequential estimators.

    The target-arm ratios default to cumulative importance ratios under the
    behavior policy: products of ``I(A_k = a) / pi(A_k | S_k)`` up to each
    step.  An episode that leaves the constant-arm trajectory gets an exact
    zero; nonzero values are clipped into ``[clip, 1/clip]``.  The
    historical-side ratio is either the constant 1 or a fitted sieve
    ``basis(s) @ gamma_t``.
    """

    propensity: PropensityModel
    clip: float = DEFAULT_CLIP
    mu_h_gamma: Optional[np.ndarray] = None
    basis: PolynomialBasis = field(default_factory=PolynomialBasis)
    mu_h_override: Optional[Callable[[int, np.ndarray], np.ndarray]] = None
    mu_a_override: Optional[
        Callable[[int, np.ndarray, np.ndarray], np.ndarray]] = None

    def cumulative_ratio(self, contexts, actions, arm: int) -> np.ndarray:
        """Per-episode target-arm ratios through each step, shape ``(n, T)``.

        Default: the running product of ``I(A_k = arm) / pi(A_k | S_k)``.
        An episode leaving the constant-arm trajectory gets exact zeros from
        there on; nonzero values are clipped.  ``mu_a_override`` swaps in an
        alternative evaluator (for instance a marginalized sieve).
        """
        contexts = np.asarray(contexts, dtype=float)
        actions = np.asarray(actions, dtype=int)
        if self.mu_a_override is not None:
            return np.asarray(self.mu_a_override(arm, contexts, actions),
                              dtype=float)
        n, horizon = actions.shape
        factors = np.zeros((n, horizon))
        for t in range(horizon):
            prob = self.propensity.prob(arm, contexts[:, t])
            factors[:, t] = (actions[:, t] == arm) / prob
        ratios = np.cumprod(factors, axis=1)
        nonzero = ratios > 0
        ratios[nonzero] = np.clip(ratios[nonzero], self.clip, 1.0 / self.clip)
        return ratios

    def mu_h(self, t: int, contexts) -> np.ndarray:
        contexts = _as_matrix(contexts)
        if self.mu_h_override is not None:
            raw = np.asarray(self.mu_h_override(t, contexts), dtype=float)
        elif self.mu_h_gamma is not None:
            raw = self.basis.evaluate(contexts) @ self.mu_h_gamma[t - 1]
        else:
            raw = np.ones(contexts.shape[0])
        return np.clip(raw, self.clip, 1.0 / self.clip)


def state_ratio_experimental(propensity: PropensityModel,
                             clip: float = DEFAULT_CLIP) -> StateRatioSet:
    """Cumulative-importance-ratio set with the constant historical ratio."""
    return StateRatioSet(propensity=propensity, clip=clip)


def fit_mu_h_sieve(dataset: SequentialDataset, mu0: StateRatioSet,
                   propensity: PropensityModel,
                   basis: Optional[PolynomialBasis] = None,
                   clip: float = DEFAULT_CLIP,
                   ridge: float = DEFAULT_RIDGE) -> StateRatioSet:
    """Fit the historical-side state ratio by a per-step linear sieve.

    For each ``k`` the coefficient vector solves the moment balance between
    the historical basis second moments (summed over ``t = k..T``) and the
    experimental side reweighted by the cumulative control ratio through
    step ``t``.  The per-``k`` Gram matrix is ridge-regularized.
    """
    basis = basis or PolynomialBasis()
    horizon = dataset.horizon
    p = basis.size(dataset.dim)
    n_hist_steps = dataset.n_h * horizon
    if p > n_hist_steps:
        raise FitError(f"singular sieve system: basis size {p} exceeds "
                       f"{n_hist_steps} historical steps")

    # cum0[:, t] is the control-arm cumulative ratio through step t+1, which
    # already includes the I(A_t = 0) / pi factor of the estimating moment.
    cum0 = mu0.cumulative_ratio(dataset.exp_contexts, dataset.exp_actions, arm=0)

    hist_phi = np.stack([basis.evaluate(dataset.hist_contexts[:, t])
                         for t in range(horizon)])          # (T, n_h, p)
    exp_phi = np.stack([basis.evaluate(dataset.exp_contexts[:, t])
                        for t in range(horizon)])           # (T, n_e, p)

    grams = np.einsum("tnp,tnq->tpq", hist_phi, hist_phi) / dataset.n_h
    rhs = np.einsum("tn,tnp->tp", cum0.T, exp_phi) / dataset.n_e

    gamma = np.zeros((horizon, p))
    for k in range(horizon):
        gram_k = grams[k:].sum(axis=0) + ridge * np.eye(p)
        rhs_k = rhs[k:].sum(axis=0)
        try:
            gamma[k] = np.linalg.solve(gram_k, rhs_k)
        except np.linalg.LinAlgError:
            raise FitError(f"singular sieve Gram matrix at step {k + 1}") from None
        if not np.all(np.isfinite(gamma[k])):
            raise FitError(f"singular sieve Gram matrix at step {k + 1}")
    return StateRatioSet(propensity=propensity, clip=clip, mu_h_gamma=gamma,
                         basis=basis)


# ---------------------------------------------------------------------------
# Bundle and configuration-driven fitting.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NuisanceSet:
    """Everything the estimating functions need, static and sequential."""

    reward: RewardModel
    historical_reward: HistoricalRewardModel
    propensity: PropensityModel
    density_ratio: DensityRatioModel
    values: Optional[ValueFunctionSet] = None
    state_ratios: Optional[StateRatioSet] = None


@dataclass(frozen=True)
class NuisanceConfig:
    """Model kind per nuisance plus the shared numerical knobs.

    ``reward``/``historical_reward`` accept ``fitted`` or ``zero``;
    ``density_ratio`` accepts ``fitted`` or ``constant``; ``mu_h`` accepts
    ``sieve`` or ``constant``.  A known propensity is selected by setting
    ``propensity_p1``; otherwise the propensity is fitted.
    """

    reward: str = "fitted"
    historical_reward: str = "fitted"
    propensity_p1: Optional[float] = 0.5
    density_ratio: str = "constant"
    mu_h: str = "constant"
    clip: float = DEFAULT_CLIP
    basis_degree: int = DEFAULT_BASIS_DEGREE
    ridge: float = DEFAULT_RIDGE


def _propensity_from_config(config, contexts, actions) -> PropensityModel:
    if config.propensity_p1 is not None:
        return known_propensity(config.propensity_p1, clip=config.clip)
    return fit_propensity(contexts, actions, clip=config.clip)


def fit_nuisances(dataset: StaticDataset,
                  config: NuisanceConfig = NuisanceConfig()) -> NuisanceSet:
    """Fit the static nuisances according to ``config``."""
    if config.reward == "zero":
        reward = zero_reward_model()
    else:
        reward = fit_reward_model(dataset.exp_contexts, dataset.exp_actions,
                                  dataset.exp_rewards)
    if config.historical_reward == "zero":
        hist_reward = zero_historical_reward_model()
    else:
        hist_reward = fit_historical_reward_model(dataset.hist_contexts,
                                                  dataset.hist_rewards)
    propensity = _propensity_from_config(config, dataset.exp_contexts,
                                         dataset.exp_actions)
    if config.density_ratio == "fitted":
        ratio = fit_density_ratio_static(dataset.exp_contexts,
                                         dataset.hist_contexts, clip=config.clip)
    else:
        ratio = constant_density_ratio(clip=config.clip)
    return NuisanceSet(reward=reward, historical_reward=hist_reward,
                       propensity=propensity, density_ratio=ratio)


def fit_sequential_nuisances(dataset: SequentialDataset,
                             config: NuisanceConfig = NuisanceConfig()
                             ) -> NuisanceSet:
    """Fit value functions and state ratios for a sequential dataset.

    The behavior policy is assumed known (switchback designs), so the
    propensity comes from ``config.propensity_p1``.
    """
    if config.propensity_p1 is None:
        raise FitError("sequential estimation requires a known behavior policy")
    propensity = known_propensity(config.propensity_p1, clip=config.clip)
    values = ValueFunctionSet.fit(dataset)
    ratios = state_ratio_experimental(propensity, clip=config.clip)
    if config.mu_h == "sieve":
        ratios = fit_mu_h_sieve(dataset, ratios, propensity,
                                basis=PolynomialBasis(config.basis_degree),
                                clip=config.clip, ridge=config.ridge)
    return NuisanceSet(reward=zero_reward_model(),
                       historical_reward=zero_historical_reward_model(),
                       propensity=propensity, density_ratio=constant_density_ratio(
                           clip=config.clip),
                       values=values, state_ratios=ratios)
