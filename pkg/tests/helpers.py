"""Shared oracles for the test suite: a known time-varying linear MDP,
its exact backward-induction value recursion, and simple rollout code.
These deliberately stay independent of the library's fitting paths.
"""

import numpy as np

from atefuse import ValueFunctionSet


def make_linear_mdp(horizon=3, d=2, seed=0):
    rng = np.random.default_rng(seed)
    alpha = rng.normal(size=horizon)
    beta = rng.normal(size=(horizon, d))
    gamma = rng.normal(size=horizon)
    phi = rng.normal(size=(horizon, d)) * 0.3
    Phi = rng.normal(size=(horizon, d, d)) * 0.3
    Gamma = rng.normal(size=(horizon, d)) * 0.3
    return alpha, beta, gamma, phi, Phi, Gamma


def backward_induction(alpha, beta, gamma, phi, Phi, Gamma, arm):
    """Closed-form affine value recursion for the constant-``arm`` policy."""
    horizon, d = beta.shape
    coef = np.zeros((horizon + 1, d + 1))
    for t in range(horizon - 1, -1, -1):
        c_next, g_next = coef[t + 1][0], coef[t + 1][1:]
        coef[t, 0] = (alpha[t] + gamma[t] * arm + c_next
                      + g_next @ (phi[t] + Gamma[t] * arm))
        coef[t, 1:] = beta[t] + Phi[t].T @ g_next
    return coef


def true_value_set(params, hist_shift=0.0):
    """Exact value functions for both arms plus the (shifted) control
    process used as the historical world."""
    alpha, beta, gamma, phi, Phi, Gamma = params
    horizon = alpha.shape[0]
    hist_params = (alpha + hist_shift, beta, gamma, phi, Phi, Gamma)
    return ValueFunctionSet(
        treat=backward_induction(*params, arm=1),
        control=backward_induction(*params, arm=0),
        hist=backward_induction(*hist_params, arm=0),
    )


def true_ate(params):
    """E[V1(S_1) - V0(S_1)] for standard-normal initial states: the values
    are affine, so the expectation is the intercept difference."""
    treat = backward_induction(*params, arm=1)
    control = backward_induction(*params, arm=0)
    return float(treat[0, 0] - control[0, 0])


def rollout(params, n, rng, p1=0.5, noise=0.0, reward_shift=0.0,
            all_control=False):
    """Simulate episodes; ``noise`` scales i.i.d. reward/state disturbances."""
    alpha, beta, gamma, phi, Phi, Gamma = params
    horizon, d = beta.shape
    contexts = np.zeros((n, horizon + 1, d))
    contexts[:, 0] = rng.normal(size=(n, d))
    if all_control:
        actions = np.zeros((n, horizon), dtype=int)
    else:
        actions = (rng.random((n, horizon)) < p1).astype(int)
    rewards = np.zeros((n, horizon))
    for t in range(horizon):
        s = contexts[:, t]
        rewards[:, t] = (alpha[t] + s @ beta[t] + gamma[t] * actions[:, t]
                         + reward_shift + noise * rng.standard_normal(n))
        contexts[:, t + 1] = (phi[t] + s @ Phi[t].T
                              + np.outer(actions[:, t], Gamma[t])
                              + noise * rng.standard_normal((n, d)))
    return contexts, actions, rewards


def rollout_noiseless(params, n, seed=1, p1=0.5):
    rng = np.random.default_rng(seed)
    return rollout(params, n, rng, p1=p1, noise=0.0)
