import math
from dataclasses import replace

import numpy as np
import pytest

from helpers import (backward_induction, make_linear_mdp, rollout,
                     true_ate, true_value_set)
from atefuse import (Episode, NuisanceConfig, NuisanceSet, SequentialDataset,
                     StateRatioSet, ValueFunctionSet, constant_density_ratio,
                     estimate_seq, fit_sequential_nuisances, fit_value_function,
                     known_propensity, moment_estimates_seq, psi_e, psi_e_seq,
                     psi_h1, psi_h1_seq, psi_h2, psi_h2_seq, psi_values_seq,
                     state_ratio_experimental, tau_e_seq, tau_h_seq)
from atefuse.data import ExperimentalRecord, HistoricalRecord
from atefuse.nuisance import (DensityRatioModel, HistoricalRewardModel,
                              RewardModel)


def horizon_one_nuisances(rng, clip=1e-3):
    """Random static nuisances and their exact sequential counterparts."""
    reward = RewardModel(coef=rng.normal(size=(2, 2)))
    hist_reward = HistoricalRewardModel(coef=rng.normal(size=2))
    propensity = known_propensity(rng.uniform(0.2, 0.8), clip=clip)
    ratio = DensityRatioModel(coef=rng.normal(size=2) * 0.5, scale=1.0,
                              clip=clip)
    static_nuis = NuisanceSet(reward=reward, historical_reward=hist_reward,
                              propensity=propensity, density_ratio=ratio)
    values = ValueFunctionSet(
        treat=np.vstack([reward.coef[1], np.zeros(2)]),
        control=np.vstack([reward.coef[0], np.zeros(2)]),
        hist=np.vstack([hist_reward.coef, np.zeros(2)]))
    ratios = StateRatioSet(propensity=propensity, clip=clip,
                           mu_h_override=lambda t, s: ratio.evaluate(s))
    seq_nuis = NuisanceSet(reward=reward, historical_reward=hist_reward,
                           propensity=propensity, density_ratio=ratio,
                           values=values, state_ratios=ratios)
    return static_nuis, seq_nuis


class TestHorizonOneReduction:
    def test_psi_functions_match_static(self):
        rng = np.random.default_rng(77)
        for _ in range(100):
            static_nuis, seq_nuis = horizon_one_nuisances(rng)
            s = rng.normal(size=1)
            s_next = rng.normal(size=1)
            a = int(rng.integers(0, 2))
            r = float(rng.normal())
            record = ExperimentalRecord(s, a, r)
            episode = Episode(contexts=np.vstack([s, s_next]),
                              actions=[a], rewards=[r])
            assert psi_e_seq(episode, seq_nuis) == pytest.approx(
                psi_e(record, static_nuis), abs=1e-12)
            assert psi_h1_seq(episode, seq_nuis) == pytest.approx(
                psi_h1(record, static_nuis), abs=1e-12)
            hist_record = HistoricalRecord(s, r)
            assert psi_h2_seq(episode, seq_nuis) == pytest.approx(
                psi_h2(hist_record, static_nuis), abs=1e-12)


def dataset_from_params(params, n_e=200, n_h=200, seed=0, noise=0.5,
                        hist_shift=0.0, p1=0.5):
    rng = np.random.default_rng(seed)
    e_ctx, e_act, e_rew = rollout(params, n_e, rng, p1=p1, noise=noise)
    h_ctx, h_act, h_rew = rollout(params, n_h, rng, noise=noise,
                                  reward_shift=hist_shift, all_control=True)
    return SequentialDataset(e_ctx, e_act, e_rew, h_ctx, h_act, h_rew)


def true_nuisances(params, hist_shift=0.0, p1=0.5):
    propensity = known_propensity(p1)
    return NuisanceSet(
        reward=RewardModel(coef=None),
        historical_reward=HistoricalRewardModel(coef=None),
        propensity=propensity,
        density_ratio=constant_density_ratio(),
        values=true_value_set(params, hist_shift=hist_shift),
        state_ratios=state_ratio_experimental(propensity))


class TestPsiSequential:
    def test_vanishing_corrections_leave_value_difference(self):
        params = make_linear_mdp(horizon=2, d=1, seed=5)
        nuis = true_nuisances(params)
        zero_ratios = replace(nuis.state_ratios,
                              mu_a_override=lambda a, c, act: np.zeros(
                                  act.shape))
        nuis = replace(nuis, state_ratios=zero_ratios)
        episode = Episode(contexts=[[0.3], [0.1], [-0.2]], actions=[1, 0],
                          rewards=[1.0, 2.0])
        values = nuis.values
        expected = (values.evaluate(1, 1, [[0.3]])[0]
                    - values.evaluate(0, 1, [[0.3]])[0])
        assert psi_e_seq(episode, nuis) == pytest.approx(expected, abs=1e-12)

    def test_psi_e_unbiased_with_correct_nuisances(self):
        params = make_linear_mdp(horizon=3, d=2, seed=11)
        ds = dataset_from_params(params, n_e=10000, n_h=10, seed=12, noise=0.4)
        nuis = true_nuisances(params)
        values = psi_values_seq(ds, nuis).psi_e
        mc_se = values.std(ddof=1) / math.sqrt(values.size)
        assert abs(values.mean() - true_ate(params)) < 2 * mc_se

    def test_psi_h1_unbiased_for_value_gap(self):
        params = make_linear_mdp(horizon=3, d=1, seed=13)
        ds = dataset_from_params(params, n_e=10000, n_h=10, seed=14, noise=0.4)
        nuis = true_nuisances(params)
        values = psi_values_seq(ds, nuis).psi_h1
        treat = backward_induction(*params, arm=1)
        control = backward_induction(*params, arm=0)
        expected = treat[0, 0] - control[0, 0]  # historical world = control
        mc_se = values.std(ddof=1) / math.sqrt(values.size)
        assert abs(values.mean() - expected) < 2 * mc_se

    def test_psi_h2_mean_zero_with_correct_values(self):
        params = make_linear_mdp(horizon=3, d=1, seed=15)
        ds = dataset_from_params(params, n_e=10, n_h=20000, seed=16, noise=0.4)
        nuis = true_nuisances(params)
        values = psi_values_seq(ds, nuis).psi_h2
        mc_se = values.std(ddof=1) / math.sqrt(values.size)
        assert abs(values.mean()) < 2 * mc_se

    def test_psi_h2_exactly_zero_on_noiseless_process(self):
        params = make_linear_mdp(horizon=3, d=1, seed=17)
        ds = dataset_from_params(params, n_e=5, n_h=50, seed=18, noise=0.0)
        nuis = true_nuisances(params)
        np.testing.assert_allclose(psi_values_seq(ds, nuis).psi_h2, 0.0,
                                   atol=1e-9)

    def test_episode_order_invariance(self):
        params = make_linear_mdp(horizon=3, d=2, seed=19)
        ds = dataset_from_params(params, n_e=50, n_h=60, seed=20, noise=0.4)
        nuis = true_nuisances(params)
        base = psi_values_seq(ds, nuis)
        perm_e = np.random.default_rng(0).permutation(ds.n_e)
        perm_h = np.random.default_rng(1).permutation(ds.n_h)
        shuffled = SequentialDataset(
            ds.exp_contexts[perm_e], ds.exp_actions[perm_e],
            ds.exp_rewards[perm_e], ds.hist_contexts[perm_h],
            ds.hist_actions[perm_h], ds.hist_rewards[perm_h])
        out = psi_values_seq(shuffled, nuis)
        np.testing.assert_allclose(out.psi_e, base.psi_e[perm_e], atol=1e-12)
        np.testing.assert_allclose(out.psi_h2, base.psi_h2[perm_h], atol=1e-12)


class TestSequentialEstimators:
    def test_tau_e_mean_of_psi(self):
        zero_values = ValueFunctionSet(treat=np.zeros((2, 2)),
                                       control=np.zeros((2, 2)),
                                       hist=np.zeros((2, 2)))
        propensity = known_propensity(0.5)
        nuis = NuisanceSet(reward=RewardModel(coef=None),
                           historical_reward=HistoricalRewardModel(coef=None),
                           propensity=propensity,
                           density_ratio=constant_density_ratio(),
                           values=zero_values,
                           state_ratios=state_ratio_experimental(propensity))
        ds = SequentialDataset(
            np.zeros((2, 2, 1)), np.array([[1], [1]]),
            np.array([[1.5], [0.5]]), np.zeros((2, 2, 1)),
            np.zeros((2, 1), dtype=int), np.array([[1.0], [1.0]]))
        # psi_e values are {3, 1} under the importance-sampling form
        assert tau_e_seq(ds, nuis) == pytest.approx(2.0)

    def test_shift_accumulates_over_horizon(self):
        # Historical rewards shifted up by delta at every step: the shift
        # estimate tau_e - tau_h centers on T * delta.
        params = make_linear_mdp(horizon=3, d=1, seed=23)
        delta, reps = 0.4, 40
        b_hats = np.zeros(reps)
        for rep in range(reps):
            ds = dataset_from_params(params, n_e=400, n_h=400, seed=100 + rep,
                                     noise=0.3, hist_shift=delta)
            values = ValueFunctionSet(
                treat=fit_value_function(ds.exp_contexts, ds.exp_actions,
                                         ds.exp_rewards, arm=1),
                control=fit_value_function(ds.exp_contexts, ds.exp_actions,
                                           ds.exp_rewards, arm=0),
                hist=fit_value_function(ds.hist_contexts, ds.hist_actions,
                                        ds.hist_rewards, arm=None))
            propensity = known_propensity(0.5)
            nuis = NuisanceSet(reward=RewardModel(coef=None),
                               historical_reward=HistoricalRewardModel(
                                   coef=None),
                               propensity=propensity,
                               density_ratio=constant_density_ratio(),
                               values=values,
                               state_ratios=state_ratio_experimental(
                                   propensity))
            b_hats[rep] = moment_estimates_seq(ds, nuis).b_hat
        mc_se = b_hats.std(ddof=1) / math.sqrt(reps)
        assert abs(b_hats.mean() - 3 * delta) < 2 * mc_se

    def test_moment_estimates_track_replication_variance(self):
        params = make_linear_mdp(horizon=3, d=1, seed=29)
        reps = 2000
        taus = np.zeros(reps)
        var_hats = np.zeros(reps)
        nuis = true_nuisances(params)
        for rep in range(reps):
            ds = dataset_from_params(params, n_e=150, n_h=150,
                                     seed=3000 + rep, noise=0.4)
            taus[rep] = tau_e_seq(ds, nuis)
            var_hats[rep] = moment_estimates_seq(ds, nuis).var_e
        ratio = var_hats.mean() / taus.var(ddof=1)
        assert 0.85 <= ratio <= 1.15

    def test_edo_weight_is_one(self):
        params = make_linear_mdp(horizon=2, d=1, seed=31)
        ds = dataset_from_params(params, n_e=60, n_h=60, seed=32, noise=0.3)
        nuis = true_nuisances(params)
        report = estimate_seq(ds, nuis, method="EDO")
        assert report.weight == 1.0
        assert report.tau_hat == pytest.approx(tau_e_seq(ds, nuis))

    def test_split_determinism(self):
        params = make_linear_mdp(horizon=2, d=1, seed=33)
        ds = dataset_from_params(params, n_e=60, n_h=60, seed=34, noise=0.3)
        nuis = true_nuisances(params)
        first = estimate_seq(ds, nuis, method="PESSI", split_seed=9)
        second = estimate_seq(ds, nuis, method="PESSI", split_seed=9)
        assert first == second

    def test_requires_sequential_nuisances(self):
        params = make_linear_mdp(horizon=2, d=1, seed=35)
        ds = dataset_from_params(params, n_e=20, n_h=20, seed=36, noise=0.3)
        nuis = NuisanceSet(reward=RewardModel(coef=None),
                           historical_reward=HistoricalRewardModel(coef=None),
                           propensity=known_propensity(0.5),
                           density_ratio=constant_density_ratio())
        with pytest.raises(ValueError, match="value functions"):
            tau_e_seq(ds, nuis)

    def test_fitted_pipeline_runs(self):
        params = make_linear_mdp(horizon=3, d=2, seed=37)
        ds = dataset_from_params(params, n_e=80, n_h=120, seed=38, noise=0.4)
        nuis = fit_sequential_nuisances(
            ds, NuisanceConfig(propensity_p1=0.5, mu_h="sieve"))
        report = estimate_seq(ds, nuis, method="PESSI")
        assert 0.0 <= report.weight <= 1.0
        assert np.isfinite(report.tau_hat)
