"""Monte Carlo studies: oracle weight, spurious-error diagnostics, and the
MSE / coverage tables the demo figures are built from.

Every replication owns a counter-derived random stream keyed by
``(master_seed, cell index, replication index)``, so a study is bit-stable
regardless of worker count or scheduling.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import baselines, dgp, sequential, static
from .nuisance import NuisanceConfig, fit_nuisances, fit_sequential_nuisances

STATIC_METHODS = ("EDO", "NONPESSI", "PESSI", "HYBRID", "SPE", "LASSO")
SEQUENTIAL_METHODS = ("EDO", "NONPESSI", "PESSI", "HYBRID", "LASSO")


def replication_rng(master_seed: int, *key: int) -> np.random.Generator:
    """Independent stream for one replication of one study cell."""
    seq = np.random.SeedSequence(entropy=int(master_seed),
                                 spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(seq)


def _n_workers(requested: int) -> int:
    if requested in (None, 0):
        return os.cpu_count() or 1
    return max(int(requested), 1)


def _run_tasks(worker, tasks, n_workers: int):
    workers = _n_workers(n_workers)
    if workers > 1 and len(tasks) > 1:
        chunk = max(1, len(tasks) // (4 * workers))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(worker, tasks, chunksize=chunk))
    return [worker(task) for task in tasks]


# ---------------------------------------------------------------------------
# Oracle weight and spurious estimation error.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OracleResult:
    """Brute-force oracle for one static configuration.

    ``tau_e``/``tau_h`` hold the per-replication base estimates; the weight
    minimizes the exact replication-average MSE quadratic, so it dominates
    every fixed weight on the same replications.
    """

    w_star: float
    oracle_mse: float
    tau_e: np.ndarray
    tau_h: np.ndarray
    tau_true: float

    def fixed_weight_mse(self, w: float) -> float:
        err = w * self.tau_e + (1.0 - w) * self.tau_h - self.tau_true
        return float(np.mean(err ** 2))


def _static_base_estimates(cfg: dgp.StaticDgpConfig, ncfg: NuisanceConfig,
                           replications: int, master_seed: int):
    taus_e = np.zeros(replications)
    taus_h = np.zeros(replications)
    w_hats = np.zeros(replications)
    b_hats = np.zeros(replications)
    for rep in range(replications):
        rng = replication_rng(master_seed, 0, rep)
        dataset = dgp.gen_static(cfg, rng)
        nuisance = fit_nuisances(dataset, ncfg)
        moments = static.moment_estimates(dataset, nuisance)
        taus_e[rep] = static.tau_e(dataset, nuisance)
        taus_h[rep] = taus_e[rep] - moments.b_hat
        w_hats[rep] = static.weight_nonpessimistic(moments)
        b_hats[rep] = moments.b_hat
    return taus_e, taus_h, w_hats, b_hats


def _oracle_from_estimates(taus_e, taus_h, tau_true) -> OracleResult:
    err_e = taus_e - tau_true
    err_h = taus_h - tau_true
    m_e = float(np.mean(err_e ** 2))
    m_h = float(np.mean(err_h ** 2))
    m_eh = float(np.mean(err_e * err_h))
    denominator = m_e + m_h - 2.0 * m_eh
    if denominator <= 1e-12:
        w_star = 1.0
    else:
        w_star = float(np.clip((m_h - m_eh) / denominator, 0.0, 1.0))
    mse = (w_star ** 2 * m_e + (1.0 - w_star) ** 2 * m_h
           + 2.0 * w_star * (1.0 - w_star) * m_eh)
    return OracleResult(w_star=w_star, oracle_mse=float(mse), tau_e=taus_e,
                        tau_h=taus_h, tau_true=tau_true)


def compute_oracle(cfg: dgp.StaticDgpConfig, replications: int,
                   master_seed: int = 0,
                   ncfg: NuisanceConfig = NuisanceConfig()) -> OracleResult:
    """Estimate the best fixed weight and its MSE by replication."""
    taus_e, taus_h, _, _ = _static_base_estimates(cfg, ncfg, replications,
                                                  master_seed)
    return _oracle_from_estimates(taus_e, taus_h, dgp.static_true_ate(cfg))


def spurious_error_values(w_hat, b_hat, w_star: float,
                          b_true: float) -> np.ndarray:
    """Per-replication spurious-error terms.

    ``((1 - w_star)^2 - (1 - w_hat)^2) * (b_hat - b_true)^2``: the excess
    MSE created by the correlation between the learned weight and the
    shift estimate.
    """
    w_hat = np.asarray(w_hat, dtype=float)
    b_hat = np.asarray(b_hat, dtype=float)
    return (((1.0 - w_star) ** 2 - (1.0 - w_hat) ** 2)
            * (b_hat - b_true) ** 2)


@dataclass(frozen=True)
class SeeResult:
    see: float
    see_values: np.ndarray
    oracle_sq_errors: np.ndarray
    w_star: float
    oracle_mse: float


def compute_see(cfg: dgp.StaticDgpConfig, replications: int,
                master_seed: int = 0,
                ncfg: NuisanceConfig = NuisanceConfig()) -> SeeResult:
    """Monte Carlo spurious estimation error next to the oracle errors."""
    taus_e, taus_h, w_hats, b_hats = _static_base_estimates(
        cfg, ncfg, replications, master_seed)
    tau_true = dgp.static_true_ate(cfg)
    oracle = _oracle_from_estimates(taus_e, taus_h, tau_true)
    values = spurious_error_values(w_hats, b_hats, oracle.w_star, cfg.b_h)
    oracle_errors = (oracle.w_star * taus_e + (1.0 - oracle.w_star) * taus_h
                     - tau_true) ** 2
    return SeeResult(see=float(values.mean()), see_values=values,
                     oracle_sq_errors=oracle_errors, w_star=oracle.w_star,
                     oracle_mse=oracle.oracle_mse)


# ---------------------------------------------------------------------------
# MSE and coverage studies.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StudyRow:
    method: str
    b_h: float
    d: float
    m: int
    design: str
    replications: int
    mse: float
    mse_se: float
    bias2: float
    variance: float
    regime: str
    see: Optional[float] = None
    oracle_mse: Optional[float] = None


@dataclass(frozen=True)
class MseStudyReport:
    rows: tuple

    CSV_HEADER = ("method,b_h,d,m,design,replications,mse,mse_se,bias2,"
                  "variance,regime,see,oracle_mse")

    def to_csv_lines(self) -> list[str]:
        lines = [self.CSV_HEADER]
        for r in self.rows:
            opt = ["" if r.see is None else repr(r.see),
                   "" if r.oracle_mse is None else repr(r.oracle_mse)]
            lines.append(",".join(
                [r.method, repr(r.b_h), repr(r.d), str(r.m), r.design,
                 str(r.replications), repr(r.mse), repr(r.mse_se),
                 repr(r.bias2), repr(r.variance), r.regime] + opt))
        return lines

    def cell(self, method: str, b_h: float) -> StudyRow:
        for r in self.rows:
            if r.method == method and np.isclose(r.b_h, b_h):
                return r
        raise KeyError(f"no study row for {method} at b_h={b_h}")


def _static_rep_worker(task):
    (cfg, ncfg, methods, alpha, lasso_lambda, master_seed, cell, rep) = task
    rng = replication_rng(master_seed, cell, rep)
    dataset = dgp.gen_static(cfg, rng)
    nuisance = fit_nuisances(dataset, ncfg)
    out = {}
    for method in methods:
        if method == "SPE":
            report = baselines.spe_estimate(dataset, nuisance, alpha=alpha)
        elif method == "LASSO":
            report = baselines.lasso_estimate(dataset, nuisance, lasso_lambda,
                                              alpha=alpha)
        else:
            report = static.estimate(dataset, nuisance, method=method, alpha=alpha)
        out[method] = (report.tau_hat, report.ci_lower, report.ci_upper)
    moments = static.moment_estimates(dataset, nuisance)
    extras = (static.tau_e(dataset, nuisance), moments.b_hat,
              static.weight_nonpessimistic(moments))
    return out, extras


def _sequential_rep_worker(task):
    (model, cfg, ncfg, methods, alpha, lasso_lambda, master_seed, cell, rep) = task
    rng = replication_rng(master_seed, cell, rep)
    dataset = dgp.bootstrap_generate(model, cfg, rng)
    nuisance = fit_sequential_nuisances(dataset, ncfg)
    psi = sequential.psi_values_seq(dataset, nuisance)
    moments = static.moments_from_psi(psi.psi_e, psi.psi_h1, psi.psi_h2)
    tau_e_hat = float(psi.psi_e.mean())
    tau_h_hat = tau_e_hat - moments.b_hat
    out = {}
    for method in methods:
        if method == "LASSO":
            w = baselines.lasso_weight(moments, lasso_lambda)
        elif method == "EDO":
            w = 1.0
        elif method == "NONPESSI":
            w = static.weight_nonpessimistic(moments)
        elif method == "PESSI":
            w = static.weight_pessimistic(
                moments, static.uncertainty_quantifier(moments, alpha))
        elif method == "HYBRID":
            selected = static.hybrid_select(moments)
            if selected == "EDO":
                w = 1.0
            elif selected == "PESSI":
                w = static.weight_pessimistic(
                    moments, static.uncertainty_quantifier(moments, alpha))
            else:
                w = static.weight_nonpessimistic(moments)
        else:
            raise ValueError(f"unknown sequential method {method!r}")
        report = static.report_from_base(tau_e_hat, tau_h_hat, moments, w,
                                         alpha, method, "n/a")
        out[method] = (report.tau_hat, report.ci_lower, report.ci_upper)
    extras = (tau_e_hat, moments.b_hat,
              static.weight_nonpessimistic(moments))
    return out, extras


def _collect_cells(worker, make_task, b_h_grid, methods, replications,
                   n_workers):
    tasks = []
    for cell, b_h in enumerate(b_h_grid):
        for rep in range(replications):
            tasks.append(make_task(cell, b_h, rep))
    results = _run_tasks(worker, tasks, n_workers)
    cells = []
    idx = 0
    for cell, b_h in enumerate(b_h_grid):
        taus = {m: np.zeros(replications) for m in methods}
        lo = {m: np.zeros(replications) for m in methods}
        hi = {m: np.zeros(replications) for m in methods}
        extras = np.zeros((replications, 3))
        for rep in range(replications):
            out, extra = results[idx]
            idx += 1
            for m in methods:
                taus[m][rep], lo[m][rep], hi[m][rep] = out[m]
            extras[rep] = extra
        cells.append((b_h, taus, lo, hi, extras))
    return cells


def _regime_label(b_h: float, bias_sd: float, n_min: int) -> str:
    if bias_sd <= 0 or n_min < 3:
        return "n/a"
    c2 = np.sqrt(np.log(n_min))
    if abs(b_h) <= bias_sd:
        return "small"
    if abs(b_h) <= c2 * bias_sd:
        return "moderate"
    return "large"


def run_mse_study(cfg, b_h_grid: Sequence[float], methods: Sequence[str],
                  replications: int, master_seed: int = 0,
                  ncfg: NuisanceConfig = NuisanceConfig(), alpha: float = 0.05,
                  lasso_lambda: float = 1.2, n_workers: int = 1,
                  include_see: bool = False) -> MseStudyReport:
    """Per-method, per-shift MSE table over a grid of reward shifts.

    The regime label per cell applies the 1 / sqrt(log n_min) thresholds
    to the replication-oracle standard deviation of the shift estimate.
    All methods see the same replication datasets.
    """
    methods = tuple(methods)
    if isinstance(cfg, dgp.SequentialDgpConfig):
        base_data, _ = dgp.gen_synthetic_base_mdp(
            cfg.T, cfg.base_days, cfg.state_dim, seed=cfg.base_seed,
            noise_scale=cfg.noise_scale)
        fitted = dgp.fit_linear_mdp(base_data)
        calib = dgp.calibrate_treatment(fitted, cfg.treatment_ratio)
        model = dgp.with_treatment(fitted, calib.delta1, calib.delta2)
        tau_true = calib.true_ate
        n_min = min(cfg.n_days_base, cfg.m * cfg.n_days_base)

        def make_task(cell, b_h, rep):
            return (model, replace(cfg, b_h=b_h), ncfg, methods, alpha,
                    lasso_lambda, master_seed, cell, rep)

        worker = _sequential_rep_worker
    else:
        tau_true = dgp.static_true_ate(cfg)
        n_min = min(cfg.n_e, cfg.m * cfg.n_e)

        def make_task(cell, b_h, rep):
            return (replace(cfg, b_h=b_h), ncfg, methods, alpha, lasso_lambda,
                    master_seed, cell, rep)

        worker = _static_rep_worker

    cells = _collect_cells(worker, make_task, b_h_grid, methods, replications,
                           n_workers)
    rows = []
    for b_h, taus, _, _, extras in cells:
        b_hats = extras[:, 1]
        bias_sd = float(np.std(b_hats - b_h, ddof=1)) if replications > 1 else 0.0
        regime = _regime_label(b_h, bias_sd, n_min)
        see = oracle_mse = None
        if include_see and not isinstance(cfg, dgp.SequentialDgpConfig):
            taus_e = extras[:, 0]
            taus_h = taus_e - b_hats
            oracle = _oracle_from_estimates(taus_e, taus_h, tau_true)
            see = float(spurious_error_values(extras[:, 2], b_hats,
                                              oracle.w_star, b_h).mean())
            oracle_mse = oracle.oracle_mse
        for method in methods:
            err = taus[method] - tau_true
            sq = err ** 2
            mse_se = (float(np.std(sq, ddof=1) / np.sqrt(replications))
                      if replications > 1 else 0.0)
            rows.append(StudyRow(
                method=method, b_h=float(b_h), d=float(cfg.d), m=int(cfg.m),
                design=getattr(cfg, "design", "switchback"),
                replications=replications, mse=float(np.mean(sq)),
                mse_se=mse_se, bias2=float(np.mean(err) ** 2),
                variance=float(np.var(err)), regime=regime, see=see,
                oracle_mse=oracle_mse))
    return MseStudyReport(rows=tuple(rows))


@dataclass(frozen=True)
class CoverageRow:
    method: str
    b_h: float
    coverage: float
    mean_ci_length: float
    replications: int


@dataclass(frozen=True)
class CoverageReport:
    rows: tuple

    CSV_HEADER = "method,b_h,coverage,mean_ci_length,replications"

    def to_csv_lines(self) -> list[str]:
        lines = [self.CSV_HEADER]
        for r in self.rows:
            lines.append(",".join([r.method, repr(r.b_h), repr(r.coverage),
                                   repr(r.mean_ci_length), str(r.replications)]))
        return lines

    def cell(self, method: str, b_h: float) -> CoverageRow:
        for r in self.rows:
            if r.method == method and np.isclose(r.b_h, b_h):
                return r
        raise KeyError(f"no coverage row for {method} at b_h={b_h}")


def run_coverage_study(cfg, b_h_grid: Sequence[float], methods: Sequence[str],
                       alpha: float = 0.05, replications: int = 500,
                       master_seed: int = 0,
                       ncfg: NuisanceConfig = NuisanceConfig(),
                       lasso_lambda: float = 1.2,
                       n_workers: int = 1) -> CoverageReport:
    """Fraction of replications whose interval covers the true ATE."""
    methods = tuple(methods)
    if isinstance(cfg, dgp.SequentialDgpConfig):
        raise NotImplementedError("coverage study is defined on static data")
    tau_true = dgp.static_true_ate(cfg)

    def make_task(cell, b_h, rep):
        return (replace(cfg, b_h=b_h), ncfg, methods, alpha, lasso_lambda,
                master_seed, cell, rep)

    cells = _collect_cells(_static_rep_worker, make_task, b_h_grid, methods,
                           replications, n_workers)
    rows = []
    for b_h, _, lo, hi, _ in cells:
        for method in methods:
            covered = (lo[method] <= tau_true) & (tau_true <= hi[method])
            rows.append(CoverageRow(
                method=method, b_h=float(b_h),
                coverage=float(covered.mean()),
                mean_ci_length=float(np.mean(hi[method] - lo[method])),
                replications=replications))
    return CoverageReport(rows=tuple(rows))
