# Localized split-conformal PoIP
#
# Train Model I on 2020 only, predict each 2016 state, and score every 2016 poll
# by how far its own margin sat from that prediction. Scores are pooled by
# political leaning. A 2024 state's PoIP is the smoothed share of same-leaning
# scores that would have flipped its call.

import numpy as np

from sae_election import (MODEL_I, ConformalConfig, DesignMatrices, FitOptions, MarginGenerator, ModelSpec,
                          build_calibration_scores, build_responses, classify_leaning, coverage_simulation,
                          fit_reml, load_outcomes, load_polls, load_state_meta, predict_from_fit, run_conformal)
from sae_election.data import swing_list
from sae_election.pipeline import fixture_config_path

root = fixture_config_path().parent
polls = {y: load_polls(root / f"polls_{y}.csv", y) for y in (2016, 2020, 2024)}
outs = {y: load_outcomes(root / f"outcomes_{y}.csv", y) for y in (2016, 2020, 2024)}
lean = classify_leaning(outs[2016], outs[2020], swing_list(load_state_meta()))

train = fit_reml(ModelSpec(MODEL_I), DesignMatrices.from_responses(build_responses(polls[2020], outs[2020])),
                 FitOptions(restarts=3))
scores = build_calibration_scores(train, polls[2016], lean)
for k, sc in scores.items():
    print(f"{k:>6}: {sc.n} scores, median {np.median(sc.scores):+.4f}, floor {1 / (sc.n + 1):.4f}")

full = fit_reml(ModelSpec(MODEL_I), DesignMatrices.from_responses(
    build_responses(polls[2016] + polls[2020], outs[2016] + outs[2020])), FitOptions(restarts=3))
actual = {o.state: 1 if o.dem_share > o.rep_share else -1 for o in outs[2024]}
targets = {p.state: (p.d_hat, actual[p.state]) for p in predict_from_fit(full, polls[2024])}
res = run_conformal(scores, targets, lean, ConformalConfig())
for r in res:
    if r.leaning == "purple":
        print(f"{r.state:>3} d_hat {r.d_hat_star:+.4f} PoIP {r.poip:.4f}")

# Under exchangeability, P[p <= alpha] <= alpha. A quick Monte-Carlo look:
for row in coverage_simulation(MarginGenerator(n_calib=80), [0.05, 0.1, 0.2], reps=10_000, seed=0):
    print(f"alpha {row.alpha:.2f}: rate {row.rate:.4f} (bound {row.bound:.4f})")
