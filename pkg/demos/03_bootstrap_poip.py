# Bootstrap probability of an incorrect call
#
# Each replicate refits Model I on theta_hat + N(0, tau_hat^2) noise and redraws
# every 2024 poll as Binomial(n, p) / n. The spread of the predicted margin gives
# a standard error, and PoIP = Phi(-|d_hat| / se) under a normal approximation.

from sae_election import BootstrapConfig, DesignMatrices, FitOptions, MODEL_I, ModelSpec, bootstrap_poip
from sae_election import build_responses, fit_reml, load_outcomes, load_polls, run_bootstrap
from sae_election.pipeline import fixture_config_path

root = fixture_config_path().parent
polls = {y: load_polls(root / f"polls_{y}.csv", y) for y in (2016, 2020, 2024)}
outs = {y: load_outcomes(root / f"outcomes_{y}.csv", y) for y in (2016, 2020)}
design = DesignMatrices.from_responses(build_responses(polls[2016] + polls[2020], outs[2016] + outs[2020]))
fit = fit_reml(ModelSpec(MODEL_I), design, FitOptions(restarts=3))

results = run_bootstrap(fit, design, polls[2024], BootstrapConfig(B=200, seed=1))
results.sort(key=lambda r: -r.poip)
print(f"{'state':>5} {'d_hat':>8} {'se':>7} {'PoIP':>7}")
for r in results[:8]:
    print(f"{r.state:>5} {r.d_hat_star:8.4f} {r.se_boot:7.4f} {r.poip:7.4f}")

# A margin of zero is a coin flip, whatever the se.
print(bootstrap_poip(0.0, 0.02), bootstrap_poip(0.0, 0.5))
