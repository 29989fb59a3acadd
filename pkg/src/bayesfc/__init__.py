"""Bayesian functional-connectivity estimation with inverse-Wishart type priors."""

from .errors import *  # noqa: F401,F403
from .linalg import (SufficientStats, compound_symmetry, correlation_bound, eigen_descending,
                     hpd_interval, induce_correlation, log_sum_exp, sufficient_stats)
from .samplers import (ImportanceEnsemble, RngSeed, clip_and_normalize, importance_resample,
                       sample_haar_orthogonal, sample_inverse_gamma, sample_iw, sample_lkj,
                       sample_mvn, sample_siw1_identity, siw1_proposal_ensemble)
from .priors import (CalibrationTable, IwParams, MixtureParams, Siw1Params, default_calibration,
                     iw_corr_moments, iw_log_density, iw_scale, mixture_corr_moments,
                     siw1_corr_moments, siw1_log_kernel)
from .elicitation import (CalibrationGrid, ElicitationTarget, calibrate, calibrate_sigma_surface,
                          calibrate_siw_mean, calibrate_siw_var, elicit_iw, elicit_mixture,
                          elicit_siw1, sigma_empirical_iw, sigma_match_siw1)
from .inference import (ISConfig, PosteriorSamples, PosteriorState, fixed_weight_posterior,
                        iw_posterior, iw_state, log_ml_iw, log_ml_siw1, mixture_posterior,
                        model_score_elpd, posterior_corr_moments, sample_posterior_correlations,
                        siw1_posterior, siw_state)
from .edges import (BatchEstimates, DetectConfig, EdgeGraph, batch_clt_transform,
                    detect_edges_direct, detect_edges_mixture, half_sample_mode)

__version__ = "0.1.0"
