"""ATE estimation that fuses an experiment with historical control data."""

from .baselines import (ConditionalVarianceModel, fit_conditional_variance,
                        lasso_estimate, lasso_weight, spe_estimate, spe_weights)
from .data import (DataFormatError, Episode, ExperimentalRecord,
                   HistoricalRecord, SequentialDataset, SplitPair,
                   StaticDataset, load_sequential, load_static, sample_split,
                   save_sequential, save_static)
from .dgp import (CLINICAL_COEF, STATIC_TRUE_ATE, CalibrationResult,
                  LinearMdpModel, MdpData, SequentialDgpConfig,
                  StaticDgpConfig, bootstrap_generate, calibrate_treatment,
                  clinical_true_ate, fit_linear_mdp, gen_clinical,
                  gen_static_linear, gen_synthetic_base_mdp, generate_days,
                  mean_return, switchback_schedule, with_treatment)
from .nuisance import (DensityRatioModel, FitError, HistoricalRewardModel,
                       NuisanceConfig, NuisanceSet, PolynomialBasis,
                       PropensityModel, RewardModel, StateRatioSet,
                       ValueFunctionSet, constant_density_ratio,
                       fit_density_ratio_static, fit_historical_reward_model,
                       fit_mu_h_sieve, fit_nuisances, fit_propensity,
                       fit_reward_model, fit_sequential_nuisances,
                       fit_value_function, known_propensity,
                       state_ratio_experimental, zero_historical_reward_model,
                       zero_reward_model)
from .sequential import (SequentialPsiValues, estimate_seq,
                         moment_estimates_seq, psi_e_seq, psi_h1_seq,
                         psi_h2_seq, psi_values_seq, tau_e_seq, tau_h_seq)
from .static import (EstimateReport, MomentEstimates, confidence_interval,
                     estimate, hybrid_select, moment_estimates,
                     moments_from_psi, psi_e, psi_e_values, psi_h1,
                     psi_h1_values, psi_h2, psi_h2_values, tau_e, tau_h,
                     tau_weighted, uncertainty_quantifier,
                     weight_nonpessimistic, weight_pessimistic)
from .studies import (CoverageReport, MseStudyReport, OracleResult, SeeResult,
                      compute_oracle, compute_see, replication_rng,
                      run_coverage_study, run_mse_study,
                      spurious_error_values)

__version__ = "0.1.0"
