# From bias estimates to an Electoral College call
#
# Train on the 2016 and 2020 polls of the bundled synthetic fixture, de-bias the
# 2024 polls with the state EBLUPs and compare against the plain poll average.

from pathlib import Path

from sae_election import (MODEL_I, DesignMatrices, FitOptions, ModelSpec, build_responses, ec_tally, fit_reml,
                          load_outcomes, load_polls, load_state_meta, predict_from_fit, predict_pop)
from sae_election.pipeline import fixture_config_path

root = Path(fixture_config_path()).parent
polls = {y: load_polls(root / f"polls_{y}.csv", y) for y in (2016, 2020, 2024)}
outcomes = {y: load_outcomes(root / f"outcomes_{y}.csv", y) for y in (2016, 2020, 2024)}

train = build_responses(polls[2016] + polls[2020], outcomes[2016] + outcomes[2020])
design = DesignMatrices.from_responses(train, with_pollster=False)
fit = fit_reml(ModelSpec(MODEL_I), design, FitOptions(restarts=3))
print("Model I:", {k: round(v, 3) for k, v in fit.params().items()})

sae = predict_from_fit(fit, polls[2024])
pop = predict_pop(polls[2024])
meta = load_state_meta(polled_2024={p.state for p in sae})

# States without current polls fall back to their 2020 result.
for name, preds in (("SAE", sae), ("poll average", pop)):
    t = ec_tally(preds, meta, outcomes[2020])
    print(f"{name:>12}: {t.summary()}")

actual = {o.state: o.dem_share > o.rep_share for o in outcomes[2024]}
for name, preds in (("SAE", sae), ("poll average", pop)):
    wrong = sorted(p.state for p in preds if (p.d_hat > 0) != actual[p.state])
    print(f"{name:>12} wrong calls: {wrong or 'none'}")
