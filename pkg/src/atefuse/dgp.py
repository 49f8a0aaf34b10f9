"""Synthetic data generators for the Monte Carlo studies.

Three worlds are covered: a small linear-Gaussian benchmark with a
configurable reward shift, a clinical-style nonlinear outcome model, and a
residual-bootstrap simulator built on a fitted time-varying linear MDP
(the stand-in for day-level operational data).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .data import SequentialDataset, StaticDataset

STATIC_TRUE_ATE = 1.0

# Fixed coefficients of the clinical-style outcome model
# f(s) = (1 + b1*s1)^2 + b2*s2 + b3*s3 + b4*s1*s2 + b5*s1*s3, treatment
# effect gamma * A * s1.  s1 is a standardized age proxy with nonzero mean
# so the interaction yields a nonzero average effect.
CLINICAL_COEF = {
    "b1": 0.2, "b2": 0.5, "b3": -0.4, "b4": 0.3, "b5": -0.2,
    "gamma": 0.6, "s1_mean": 0.35, "s2_prob": 0.5, "s3_prob": 0.3,
}


@dataclass(frozen=True)
class StaticDgpConfig:
    """Settings for the static generators.

    ``b_h`` shifts every experimental reward, so it moves the experimental
    control mean away from the historical mean without touching the ATE;
    ``d`` inflates the experimental noise scale.
    """

    n_e: int = 48
    m: int = 2
    b_h: float = 0.0
    d: float = 0.0
    design: str = "switchback"
    seed: int = 0
    kind: str = "linear"

    def __post_init__(self):
        if self.n_e < 4:
            raise ValueError("n_e must be at least 4")
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if self.design not in ("switchback", "random"):
            raise ValueError(f"unknown design {self.design!r}")
        if self.kind not in ("linear", "clinical"):
            raise ValueError(f"unknown static DGP kind {self.kind!r}")


@dataclass(frozen=True)
class SequentialDgpConfig:
    """Settings for the bootstrap-based sequential generator."""

    T: int = 24
    n_days_base: int = 30
    m: int = 2
    b_h: float = 0.0
    d: float = 0.0
    treatment_ratio: float = 0.05
    switchback_span: int = 3
    seed: int = 0
    state_dim: int = 2
    base_days: int = 40
    base_seed: int = 0
    noise_scale: float = 0.2

    def __post_init__(self):
        if self.T < 2:
            raise ValueError("T must be at least 2")
        if self.treatment_ratio < 0:
            raise ValueError("treatment_ratio must be non-negative")
        if self.n_days_base < 1 or self.m < 1:
            raise ValueError("day counts must be positive")


def _actions_with_both_arms(actions: np.ndarray) -> np.ndarray:
    if not (actions == 1).any() or not (actions == 0).any():
        actions = actions.copy()
        actions[0], actions[1] = 0, 1
    return actions


def gen_static_linear(cfg: StaticDgpConfig,
                      rng: Optional[np.random.Generator] = None) -> StaticDataset:
    """Linear-Gaussian benchmark; the population ATE is exactly 1.

    Experimental rewards are ``10 + b_h + A + S + (2 + d) * noise``;
    historical rewards are ``10 + S + noise``; contexts and noises are
    standard normal.  The switchback design alternates 1, 0, 1, 0, ...
    """
    rng = rng or np.random.default_rng(cfg.seed)
    n_e, n_h = cfg.n_e, cfg.m * cfg.n_e
    s_e = rng.standard_normal(n_e)
    if cfg.design == "switchback":
        actions = (np.arange(n_e) % 2 == 0).astype(int)
    else:
        actions = _actions_with_both_arms(rng.integers(0, 2, n_e))
    r_e = 10.0 + cfg.b_h + actions + s_e + (2.0 + cfg.d) * rng.standard_normal(n_e)
    s_h = rng.standard_normal(n_h)
    r_h = 10.0 + s_h + rng.standard_normal(n_h)
    return StaticDataset(s_e[:, None], actions, r_e, s_h[:, None], r_h)


def _clinical_contexts(n: int, rng: np.random.Generator) -> np.ndarray:
    c = CLINICAL_COEF
    s1 = c["s1_mean"] + rng.standard_normal(n)
    s2 = (rng.random(n) < c["s2_prob"]).astype(float)
    s3 = (rng.random(n) < c["s3_prob"]).astype(float)
    return np.column_stack([s1, s2, s3])


def _clinical_baseline(contexts: np.ndarray) -> np.ndarray:
    c = CLINICAL_COEF
    s1, s2, s3 = contexts[:, 0], contexts[:, 1], contexts[:, 2]
    return ((1.0 + c["b1"] * s1) ** 2 + c["b2"] * s2 + c["b3"] * s3
            + c["b4"] * s1 * s2 + c["b5"] * s1 * s3)


def clinical_true_ate(gamma: Optional[float] = None) -> float:
    """Population ATE of the clinical model: gamma times the mean of s1."""
    g = CLINICAL_COEF["gamma"] if gamma is None else gamma
    return g * CLINICAL_COEF["s1_mean"]


def gen_clinical(cfg: StaticDgpConfig, rng: Optional[np.random.Generator] = None,
                 gamma: Optional[float] = None) -> StaticDataset:
    """Clinical-style nonlinear DGP with a context-interacted effect."""
    rng = rng or np.random.default_rng(cfg.seed)
    g = CLINICAL_COEF["gamma"] if gamma is None else gamma
    n_e, n_h = cfg.n_e, cfg.m * cfg.n_e
    ctx_e = _clinical_contexts(n_e, rng)
    actions = _actions_with_both_arms(rng.integers(0, 2, n_e))
    r_e = (_clinical_baseline(ctx_e) + g * actions * ctx_e[:, 0] + cfg.b_h
           + (1.0 + cfg.d) * rng.standard_normal(n_e))
    ctx_h = _clinical_contexts(n_h, rng)
    r_h = _clinical_baseline(ctx_h) + rng.standard_normal(n_h)
    return StaticDataset(ctx_e, actions, r_e, ctx_h, r_h)


def gen_static(cfg: StaticDgpConfig,
               rng: Optional[np.random.Generator] = None) -> StaticDataset:
    return gen_clinical(cfg, rng) if cfg.kind == "clinical" else gen_static_linear(cfg, rng)


def static_true_ate(cfg: StaticDgpConfig) -> float:
    return clinical_true_ate() if cfg.kind == "clinical" else STATIC_TRUE_ATE


# ---------------------------------------------------------------------------
# Time-varying linear MDP: base generator, fitting, residual bootstrap.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MdpData:
    """An all-control bank of day-level trajectories."""

    contexts: np.ndarray   # (N, T + 1, d)
    rewards: np.ndarray    # (N, T)

    @property
    def n_days(self) -> int:
        return self.contexts.shape[0]

    @property
    def horizon(self) -> int:
        return self.rewards.shape[1]


@dataclass(frozen=True)
class LinearMdpModel:
    """Per-step linear reward/transition model with residual banks.

    Rewards follow ``alpha_t + beta_t . s + gamma_t * a`` and next states
    ``phi_t + Phi_t s + Gamma_t * a``.  ``resid_r``/``resid_s`` hold the
    per-day, per-step fit residuals reused by the wild bootstrap;
    ``reward_means``/``state_means`` feed the treatment-effect scaling.
    """

    alpha: np.ndarray        # (T,)
    beta: np.ndarray         # (T, d)
    gamma: np.ndarray        # (T,)
    phi: np.ndarray          # (T, d)
    Phi: np.ndarray          # (T, d, d)
    Gamma: np.ndarray        # (T, d)
    init_states: np.ndarray  # (N, d)
    resid_r: Optional[np.ndarray] = None   # (N, T)
    resid_s: Optional[np.ndarray] = None   # (N, T, d)
    reward_means: Optional[np.ndarray] = None  # (T,)
    state_means: Optional[np.ndarray] = None   # (T, d)

    @property
    def horizon(self) -> int:
        return self.alpha.shape[0]

    @property
    def dim(self) -> int:
        return self.beta.shape[1]

    def reward_mean(self, t: int, states: np.ndarray, action) -> np.ndarray:
        return self.alpha[t] + states @ self.beta[t] + self.gamma[t] * action


def gen_synthetic_base_mdp(T: int = 24, n_days: int = 40, state_dim: int = 2,
                           seed: int = 0, noise_scale: float = 0.2
                           ) -> tuple[MdpData, LinearMdpModel]:
    """All-control day bank from a smooth time-varying linear MDP.

    Reward levels and state drifts follow sinusoidal daily patterns; the
    transition matrix is a stable contraction.  Returns the generated days
    together with the generating model (whose residual banks are empty).
    """
    rng = np.random.default_rng(seed)
    t_grid = np.arange(T)
    alpha = 10.0 + 2.0 * np.sin(2.0 * np.pi * t_grid / T)
    beta = np.tile(np.linspace(0.4, 0.2, state_dim), (T, 1))
    phase = 2.0 * np.pi * np.arange(state_dim) / max(state_dim, 1)
    phi = 1.0 + 0.5 * np.sin(2.0 * np.pi * t_grid[:, None] / T + phase[None, :])
    Phi = np.tile(0.5 * np.eye(state_dim), (T, 1, 1))
    gamma = np.zeros(T)
    Gamma = np.zeros((T, state_dim))

    contexts = np.zeros((n_days, T + 1, state_dim))
    rewards = np.zeros((n_days, T))
    contexts[:, 0] = 2.0 + 0.5 * rng.standard_normal((n_days, state_dim))
    for t in range(T):
        state = contexts[:, t]
        rewards[:, t] = (alpha[t] + state @ beta[t]
                         + noise_scale * rng.standard_normal(n_days))
        contexts[:, t + 1] = (phi[t] + state @ Phi[t].T
                              + noise_scale * rng.standard_normal((n_days, state_dim)))
    model = LinearMdpModel(alpha=alpha, beta=beta, gamma=gamma, phi=phi,
                           Phi=Phi, Gamma=Gamma, init_states=contexts[:, 0].copy())
    return MdpData(contexts=contexts, rewards=rewards), model


def fit_linear_mdp(data: MdpData) -> LinearMdpModel:
    """Per-step least squares for the reward and each state coordinate.

    Treatment coefficients are pinned to zero (the bank is all-control);
    the residuals of both regressions are stored for the bootstrap.
    """
    from .nuisance import _design, _ols

    n, horizon = data.rewards.shape
    d = data.contexts.shape[2]
    alpha = np.zeros(horizon)
    beta = np.zeros((horizon, d))
    phi = np.zeros((horizon, d))
    Phi = np.zeros((horizon, d, d))
    resid_r = np.zeros((n, horizon))
    resid_s = np.zeros((n, horizon, d))
    for t in range(horizon):
        state = data.contexts[:, t]
        coef = _ols(state, data.rewards[:, t], f"reward regression at step {t + 1}")
        alpha[t], beta[t] = coef[0], coef[1:]
        resid_r[:, t] = data.rewards[:, t] - _design(state) @ coef
        target = data.contexts[:, t + 1]
        coef_s = _ols(state, target, f"state regression at step {t + 1}")
        phi[t], Phi[t] = coef_s[0], coef_s[1:].T
        resid_s[:, t] = target - _design(state) @ coef_s
    return LinearMdpModel(alpha=alpha, beta=beta, gamma=np.zeros(horizon),
                          phi=phi, Phi=Phi, Gamma=np.zeros((horizon, d)),
                          init_states=data.contexts[:, 0].copy(),
                          resid_r=resid_r, resid_s=resid_s,
                          reward_means=data.rewards.mean(axis=0),
                          state_means=data.contexts[:, :horizon].mean(axis=0))


def with_treatment(model: LinearMdpModel, delta1: float,
                   delta2: float) -> LinearMdpModel:
    """Attach treatment effects scaled from the average data levels.

    The direct effect is ``delta1`` percent of the mean reward at each
    step; the carryover effect is ``delta2`` percent of the mean state.
    """
    if model.reward_means is None or model.state_means is None:
        raise ValueError("treatment scaling requires a fitted model")
    return replace(model, gamma=delta1 * model.reward_means / 100.0,
                   Gamma=delta2 * model.state_means / 100.0)


def mean_return(model: LinearMdpModel, schedule: np.ndarray) -> float:
    """Expected cumulative reward of a deterministic action schedule.

    Exact under the model: noise is additive and zero-mean, so the mean
    trajectory follows the deterministic recursion from the average
    initial state.
    """
    state = model.init_states.mean(axis=0)
    total = 0.0
    for t in range(model.horizon):
        a = float(schedule[t])
        total += model.alpha[t] + state @ model.beta[t] + model.gamma[t] * a
        state = model.phi[t] + model.Phi[t] @ state + model.Gamma[t] * a
    return float(total)


@dataclass(frozen=True)
class CalibrationResult:
    delta1: float
    delta2: float
    true_ate: float
    base_return: float


def calibrate_treatment(model: LinearMdpModel, ratio: float) -> CalibrationResult:
    """Choose effect scales so direct and carryover each add ``ratio / 2``.

    The ATE of the model is exactly linear in the two scales, so each
    one-dimensional target is solved in closed form: the direct channel and
    the carryover channel each contribute ``ratio / 2`` of the baseline
    return, for a total treatment effect of ``ratio`` times baseline.
    """
    ones = np.ones(model.horizon)
    zeros = np.zeros(model.horizon)
    base = mean_return(replace(model, gamma=np.zeros(model.horizon),
                               Gamma=np.zeros_like(model.Gamma)), zeros)
    unit_direct = with_treatment(model, 1.0, 0.0)
    c1 = mean_return(unit_direct, ones) - mean_return(unit_direct, zeros)
    unit_carry = with_treatment(model, 0.0, 1.0)
    c2 = mean_return(unit_carry, ones) - mean_return(unit_carry, zeros)
    if abs(c1) < 1e-12 or abs(c2) < 1e-12:
        raise ValueError("degenerate treatment channels; cannot calibrate")
    target = ratio * base / 2.0
    return CalibrationResult(delta1=target / c1, delta2=target / c2,
                             true_ate=ratio * base, base_return=base)


def switchback_schedule(horizon: int, span: int, phase: int = 0) -> np.ndarray:
    """Alternating-span schedule; ``phase`` flips which span starts treated."""
    spans = np.arange(horizon) // span
    return ((spans + phase) % 2 == 0).astype(int)


def generate_days(model: LinearMdpModel, n_days: int, schedule: np.ndarray,
                  shift: float, inflate: float, rng: np.random.Generator,
                  xi_override: Optional[float] = None
                  ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Wild-bootstrap days from the fitted model.

    Each generated day resamples a bank day (with replacement) for its
    initial state and residual rows, draws one standard normal multiplier,
    and rolls the model forward.  ``shift`` is added to every reward and
    ``inflate`` scales the reward noise (both zero for historical days).
    """
    if model.resid_r is None or model.resid_s is None:
        raise ValueError("empty residual bank; fit the model before generating")
    if model.resid_r.size == 0:
        raise ValueError("empty residual bank; fit the model before generating")
    horizon, d = model.horizon, model.dim
    schedule = np.asarray(schedule)
    if schedule.ndim == 1:
        schedule = np.tile(schedule, (n_days, 1))
    days = rng.integers(0, model.init_states.shape[0], size=n_days)
    xi = (np.full(n_days, float(xi_override)) if xi_override is not None
          else rng.standard_normal(n_days))

    contexts = np.zeros((n_days, horizon + 1, d))
    rewards = np.zeros((n_days, horizon))
    contexts[:, 0] = model.init_states[days]
    for t in range(horizon):
        state = contexts[:, t]
        a = schedule[:, t]
        rewards[:, t] = (model.alpha[t] + state @ model.beta[t]
                         + model.gamma[t] * a + shift
                         + (1.0 + inflate) * xi * model.resid_r[days, t])
        contexts[:, t + 1] = (model.phi[t] + state @ model.Phi[t].T
                              + np.outer(a, model.Gamma[t])
                              + xi[:, None] * model.resid_s[days, t])
    return contexts, rewards, schedule


def bootstrap_generate(model: LinearMdpModel, cfg: SequentialDgpConfig,
                       rng: np.random.Generator,
                       arm_schedule: Optional[np.ndarray] = None,
                       xi_override: Optional[float] = None) -> SequentialDataset:
    """One bootstrap replication: experimental plus historical days.

    Experimental days follow an alternating-span switchback whose phase
    flips day by day (so both arms appear at every step across days) and
    carry the reward shift ``b_h`` and noise inflation ``d``.  Historical
    days are global control with neither.
    """
    horizon = model.horizon
    if arm_schedule is None:
        exp_schedule = np.stack([
            switchback_schedule(horizon, cfg.switchback_span, phase=i % 2)
            for i in range(cfg.n_days_base)])
    else:
        exp_schedule = np.asarray(arm_schedule)
    exp_ctx, exp_rew, exp_act = generate_days(
        model, cfg.n_days_base, exp_schedule, shift=cfg.b_h, inflate=cfg.d,
        rng=rng, xi_override=xi_override)
    hist_ctx, hist_rew, hist_act = generate_days(
        model, cfg.m * cfg.n_days_base, np.zeros(horizon, dtype=int),
        shift=0.0, inflate=0.0, rng=rng, xi_override=xi_override)
    return SequentialDataset(exp_ctx, exp_act, exp_rew,
                             hist_ctx, hist_act, hist_rew)
