"""Estimators for the sequential (time-varying MDP) setting.

Each episode contributes one value of each estimating function: the arm
value at the initial state plus importance-weighted temporal-difference
corrections along the trajectory.  The weighting machinery is shared with
the static module through the per-episode psi values.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .data import Episode, SequentialDataset, sample_split
from .nuisance import NuisanceSet
from .static import (EstimateReport, MomentEstimates, _regime_tag,
                     hybrid_select, moments_from_psi, report_from_base,
                     uncertainty_quantifier, weight_nonpessimistic,
                     weight_pessimistic)

METHODS = ("EDO", "NONPESSI", "PESSI", "HYBRID")


@dataclass(frozen=True)
class SequentialPsiValues:
    """Per-episode estimating-function values plus the cap diagnostic."""

    psi_e: np.ndarray
    psi_h1: np.ndarray
    psi_h2: np.ndarray
    n_capped: int = 0


def _td_corrections(contexts, actions, rewards, nuisance, arm: int) -> np.ndarray:
    """Sum over steps of the cumulative ratio times the TD residual."""
    values = nuisance.values
    ratios = nuisance.state_ratios.cumulative_ratio(contexts, actions, arm)
    horizon = actions.shape[1]
    total = np.zeros(contexts.shape[0])
    for t in range(1, horizon + 1):
        td = (rewards[:, t - 1]
              + values.evaluate(arm, t + 1, contexts[:, t])
              - values.evaluate(arm, t, contexts[:, t - 1]))
        total += ratios[:, t - 1] * td
    return total


def _cap(values: np.ndarray, bound: float) -> tuple[np.ndarray, int]:
    breached = np.abs(values) > bound
    if breached.any():
        values = np.clip(values, -bound, bound)
    return values, int(breached.sum())


def psi_values_seq(dataset: SequentialDataset,
                   nuisance: NuisanceSet) -> SequentialPsiValues:
    """Evaluate every per-episode estimating function on the dataset.

    Per-episode magnitudes are capped at ``T * max|R| / clip`` (the horizon
    inflated boundedness level); breaches are counted, not hidden.
    """
    if nuisance.values is None or nuisance.state_ratios is None:
        raise ValueError("sequential estimation needs value functions and "
                         "state ratios in the nuisance set")
    values = nuisance.values
    horizon = dataset.horizon
    if values.horizon != horizon:
        raise ValueError(f"value functions cover horizon {values.horizon}, "
                         f"dataset has {horizon}")

    exp_ctx, exp_act, exp_rew = (dataset.exp_contexts, dataset.exp_actions,
                                 dataset.exp_rewards)
    corr1 = _td_corrections(exp_ctx, exp_act, exp_rew, nuisance, arm=1)
    corr0 = _td_corrections(exp_ctx, exp_act, exp_rew, nuisance, arm=0)
    v1_init = values.evaluate(1, 1, exp_ctx[:, 0])
    v0_init = values.evaluate(0, 1, exp_ctx[:, 0])
    vh_init = values.evaluate_hist(1, exp_ctx[:, 0])

    psi_e = (v1_init + corr1) - (v0_init + corr0)
    psi_h1 = v1_init + corr1 - vh_init

    hist_ctx, hist_rew = dataset.hist_contexts, dataset.hist_rewards
    psi_h2 = np.zeros(dataset.n_h)
    for t in range(1, horizon + 1):
        td = (hist_rew[:, t - 1]
              + values.evaluate_hist(t + 1, hist_ctx[:, t])
              - values.evaluate_hist(t, hist_ctx[:, t - 1]))
        psi_h2 += nuisance.state_ratios.mu_h(t, hist_ctx[:, t - 1]) * td

    r_max = max(np.abs(exp_rew).max(), np.abs(hist_rew).max())
    n_capped = 0
    if r_max > 0:
        bound = horizon * r_max / nuisance.state_ratios.clip
        psi_e, c1 = _cap(psi_e, bound)
        psi_h1, c2 = _cap(psi_h1, bound)
        psi_h2, c3 = _cap(psi_h2, bound)
        n_capped = c1 + c2 + c3
    return SequentialPsiValues(psi_e=psi_e, psi_h1=psi_h1, psi_h2=psi_h2,
                               n_capped=n_capped)


def _single_episode_dataset(episode: Episode) -> SequentialDataset:
    ds = SequentialDataset.__new__(SequentialDataset)
    ds.exp_contexts = episode.contexts[None, :, :]
    ds.exp_actions = episode.actions[None, :]
    ds.exp_rewards = episode.rewards[None, :]
    ds.hist_contexts = episode.contexts[None, :, :]
    ds.hist_actions = np.zeros_like(ds.exp_actions)
    ds.hist_rewards = episode.rewards[None, :]
    return ds


def psi_e_seq(episode: Episode, nuisance: NuisanceSet) -> float:
    return float(psi_values_seq(_single_episode_dataset(episode), nuisance).psi_e[0])


def psi_h1_seq(episode: Episode, nuisance: NuisanceSet) -> float:
    return float(psi_values_seq(_single_episode_dataset(episode), nuisance).psi_h1[0])


def psi_h2_seq(episode: Episode, nuisance: NuisanceSet) -> float:
    """Historical estimating function; the episode is read as historical."""
    return float(psi_values_seq(_single_episode_dataset(episode), nuisance).psi_h2[0])


def tau_e_seq(dataset: SequentialDataset, nuisance: NuisanceSet) -> float:
    return float(np.mean(psi_values_seq(dataset, nuisance).psi_e))


def tau_h_seq(dataset: SequentialDataset, nuisance: NuisanceSet) -> float:
    psi = psi_values_seq(dataset, nuisance)
    return float(np.mean(psi.psi_h1) - np.mean(psi.psi_h2))


def moment_estimates_seq(dataset: SequentialDataset,
                         nuisance: NuisanceSet) -> MomentEstimates:
    psi = psi_values_seq(dataset, nuisance)
    return moments_from_psi(psi.psi_e, psi.psi_h1, psi.psi_h2)


def estimate_seq(dataset: SequentialDataset, nuisance: NuisanceSet,
                 method: str = "NONPESSI", alpha: float = 0.05,
                 split_seed: Optional[int] = None) -> EstimateReport:
    """Weighted estimate on episode data; mirrors the static ``estimate``.

    The hybrid small-shift branch falls back to the non-pessimistic weight
    because no sequential analogue of the SPE baseline is available.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if split_seed is not None:
        halves = sample_split(dataset, split_seed)
        weight_data, estimate_data = halves.first_half, halves.second_half
    else:
        weight_data = estimate_data = dataset

    weight_psi = psi_values_seq(weight_data, nuisance)
    weight_moments = moments_from_psi(weight_psi.psi_e, weight_psi.psi_h1,
                                      weight_psi.psi_h2)
    regime = _regime_tag(weight_moments)

    method_used = method
    if method == "HYBRID":
        selected = hybrid_select(weight_moments)
        method_used = "NONPESSI" if selected == "SPE" else selected

    if method_used == "EDO":
        w = 1.0
    elif method_used == "NONPESSI":
        w = weight_nonpessimistic(weight_moments)
    else:
        margin = uncertainty_quantifier(weight_moments, alpha)
        w = weight_pessimistic(weight_moments, margin)

    if estimate_data is weight_data:
        final_psi = weight_psi
        final_moments = weight_moments
    else:
        final_psi = psi_values_seq(estimate_data, nuisance)
        final_moments = moments_from_psi(final_psi.psi_e, final_psi.psi_h1,
                                         final_psi.psi_h2)
    report = report_from_base(float(final_psi.psi_e.mean()),
                              float(final_psi.psi_h1.mean()
                                    - final_psi.psi_h2.mean()),
                              final_moments, w, alpha, method, regime)
    return replace(report, n_capped=final_psi.n_capped)
