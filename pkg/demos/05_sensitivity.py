# How much could pollster bias move the conformal PoIP?
#
# Within each (leaning, candidate) group the 2016 polls missed the result by
# some range [a, b]. Draw a synthetic bias U ~ Unif(a, b) for every poll, shift
# it, rebuild the scores and recompute PoIP. Repeat T times and summarise.

from sae_election import (MODEL_I, DesignMatrices, FitOptions, ModelSpec, SensitivityConfig, build_responses,
                          classify_leaning, estimate_bias_bounds, fit_reml, load_outcomes, load_polls,
                          load_state_meta, predict_from_fit, run_sensitivity)
from sae_election.conformal import calibration_predictions
from sae_election.data import swing_list
from sae_election.pipeline import fixture_config_path

root = fixture_config_path().parent
polls = {y: load_polls(root / f"polls_{y}.csv", y) for y in (2016, 2020, 2024)}
outs = {y: load_outcomes(root / f"outcomes_{y}.csv", y) for y in (2016, 2020, 2024)}
lean = classify_leaning(outs[2016], outs[2020], swing_list(load_state_meta()))

bounds = estimate_bias_bounds(polls[2016], outs[2016], lean)
for (lv, cand), bb in sorted(bounds.items()):
    print(f"{lv:>6} {cand}: [{100 * bb.a:+.2f}, {100 * bb.b:+.2f}] points")

train = fit_reml(ModelSpec(MODEL_I), DesignMatrices.from_responses(build_responses(polls[2020], outs[2020])),
                 FitOptions(restarts=3))
d_calib = calibration_predictions(train, polls[2016])
full = fit_reml(ModelSpec(MODEL_I), DesignMatrices.from_responses(
    build_responses(polls[2016] + polls[2020], outs[2016] + outs[2020])), FitOptions(restarts=3))
actual = {o.state: 1 if o.dem_share > o.rep_share else -1 for o in outs[2024]}
targets = {p.state: (p.d_hat, actual[p.state]) for p in predict_from_fit(full, polls[2024])
           if lean[p.state] == "purple"}

res = run_sensitivity(SensitivityConfig(T=100, seed=3), polls[2016], d_calib, lean, targets, bounds)
for r in res:
    print(f"{r.state}: base {r.base_poip:.4f} -> median {r.median_poip:.4f}, "
          f"90% band [{r.interval[0]:.4f}, {r.interval[1]:.4f}]")
