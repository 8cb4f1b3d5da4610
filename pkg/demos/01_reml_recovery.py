# Fitting the poll-bias mixed model by REML
#
# Each poll contributes y = log(poll share) - log(actual share). Model I says
# y = beta0 + beta1 * [REP] + v_state,candidate + noise, with a correlated
# (DEM, REP) pair of state effects. Here we simulate a balanced design at
# realistic reference parameters and check the optimizer gets them back.

import numpy as np

from sae_election import MODEL_I, FitOptions, ModelSpec, fit_reml
from sae_election.lmm import simulate_response
from sae_election.simulate import REFERENCE_MODEL_I, balanced_design, reference_components

truth = REFERENCE_MODEL_I
design = balanced_design(n_states=51, n_per_state=40)
y = simulate_response(design, (truth["beta0"], truth["beta1"]), reference_components(truth),
                      np.random.default_rng(7))

fit = fit_reml(ModelSpec(MODEL_I), design.with_y(y), FitOptions(restarts=3, seed=0))
print(f"converged: {fit.converged}, REML log-likelihood {fit.reml_loglik:.3f}")
print(f"{'param':>8} {'truth':>8} {'estimate':>9}")
for k, v in fit.params().items():
    print(f"{k:>8} {truth[k]:8.3f} {v:9.3f}")

# The EBLUP of each state's bias is beta + v_hat. With 40 polls per state the
# state effects are estimated well, so shrinkage toward beta is mild.
first = design.states[0]
print("state", first, "v_hat", np.round(fit.v_hat[first], 4))
