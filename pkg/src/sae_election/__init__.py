"""Small-area estimation of state-level polling bias for presidential election prediction.

The package fits REML linear mixed models of log poll bias on past cycles,
de-biases current polls with the EBLUPs, tallies the Electoral College, and
scores each state's call with a bootstrap PoIP, a localized split-conformal
PoIP, and a uniform pollster-bias sensitivity analysis.
"""

from .bootstrap import BootstrapConfig, BootstrapResult, bootstrap_dhat_samples, bootstrap_poip, run_bootstrap, se_boot
from .conformal import (CalibrationScores, ConformalConfig, ConformalResult, MarginGenerator, build_calibration_scores,
                        conformal_p_value, conformal_poip, coverage_simulation, run_conformal)
from .data import (CANDIDATES, DEM, REP, DataError, ElectionOutcome, PollObservation, ResponseRecord, StateMeta,
                   build_responses, classify_leaning, load_outcomes, load_polls, load_state_meta, pair_polls)
from .lmm import (MODEL_I, MODEL_III, DesignMatrices, FitOptions, ModelError, ModelFit, ModelSpec,
                  VarianceComponents, bootstrap_param_se, compute_blups, eblup_theta, fit_reml, reml_objective)
from .pipeline import RunConfig, emit_report_tables, fetch_snapshot, run_pipeline
from .predict import NationalTally, StatePrediction, ec_tally, predict_from_fit, predict_pop, sae_predict_state
from .sensitivity import (BiasBounds, SensitivityConfig, SensitivityResult, estimate_bias_bounds, run_sensitivity,
                          synthesize_polls)

__version__ = "0.1.0"
