"""Synthetic poll data: recovery designs and the bundled demonstration fixture."""

from __future__ import annotations

import configparser
import math
from importlib import resources
from pathlib import Path

import numpy as np

from .data import (DEM, REP, ElectionOutcome, PollObservation, _parse_pct, load_outcomes, load_state_meta,
                   write_outcomes, write_polls)
from .lmm import DesignMatrices, VarianceComponents

# Reference REML estimates for the 2016+2020 training polls.
REFERENCE_MODEL_I = {"beta0": -0.023, "beta1": -0.088, "sigma_d": 0.056, "rho": -0.826,
                     "sigma_r": 0.081, "tau": 0.088}
REFERENCE_MODEL_III = {"beta0": -0.025, "beta1": -0.086, "sigma_u": 0.037, "sigma_d": 0.057,
                       "rho": -0.733, "sigma_r": 0.092, "tau": 0.070}

# Actual 2020 shares (percent) for states without 2024 polls.
PROXY_2020 = {
    "AL": (36.6, 62.0), "DC": (92.1, 5.4), "HI": (63.7, 34.3), "ID": (33.1, 63.8),
    "KY": (36.2, 62.1), "LA": (39.9, 58.5), "MS": (41.1, 57.6),
}


def reference_components(params: dict) -> VarianceComponents:
    return VarianceComponents(params["sigma_d"], params["sigma_r"], params["rho"], params["tau"],
                              params.get("sigma_u"))


def balanced_design(n_states: int = 51, n_per_state: int = 40) -> DesignMatrices:
    """Half DEM, half REP rows per state, zero response; no pollster factor."""
    if n_per_state < 2 or n_per_state % 2:
        raise ValueError("n_per_state must be an even number >= 2")
    half = n_per_state // 2
    state_idx = np.repeat(np.arange(n_states), n_per_state)
    cand_idx = np.tile(np.repeat([0, 1], half), n_states)
    states = tuple(f"S{i:02d}" for i in range(n_states))
    return DesignMatrices(np.zeros(n_states * n_per_state), state_idx, cand_idx, states)


def _round_pct(x):
    return np.round(np.asarray(x) * 100.0, 1)


def _synthetic_past(rng, pi24, swing: bool, shift_sd: float = 0.04):
    """Past-cycle (dem, rep) percent shares near the 2024 result.

    Non-swing states keep the 2024 winner so the leaning classification stays
    well defined.
    """
    dem, rep = pi24
    d = math.log(dem / rep) + rng.normal(0.0, shift_sd)
    if not swing and (d > 0) != (dem > rep):
        d = -d
    total = min(99.0, dem + rep + rng.normal(0.0, 0.8))
    p_dem = total / (1.0 + math.exp(-d))
    out = _round_pct([p_dem / 100.0, (total - p_dem) / 100.0])
    if not swing and (out[0] > out[1]) != (dem > rep):
        out = out[::-1]
    if out[0] == out[1]:
        out[0 if dem > rep else 1] += 0.1
    return float(out[0]), float(out[1])


def make_fixture(out_dir, seed: int = 20241105, n_pollsters: int = 40, B: int = 100, T: int = 50) -> Path:
    """Write a complete synthetic input set plus ``config.ini`` to ``out_dir``.

    Poll biases follow Model III with the reference estimates; state effects
    are shared across years so past-cycle fits transfer to 2024. The 2024
    outcomes are the bundled actual results for the 44 polled states.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    meta = load_state_meta()
    bundled = resources.files("sae_election") / "resources" / "outcomes_2024.csv"
    out24 = {o.state: o for o in load_outcomes(bundled, 2024)}
    polled = sorted(out24)
    par = REFERENCE_MODEL_III
    vc = reference_components(par)
    v = {s: rng.multivariate_normal(np.zeros(2), vc.G, method="cholesky") for s in polled}
    pollsters = [f"P{j:02d}" for j in range(1, n_pollsters + 1)]
    u = dict(zip(pollsters, rng.normal(0.0, par["sigma_u"], n_pollsters)))

    outcomes = {2024: [out24[s] for s in polled]}
    for year in (2016, 2020):
        rows = []
        for s in sorted(meta):
            if s in out24:
                o = out24[s]
                dem, rep = _synthetic_past(rng, (o.dem_share * 100, o.rep_share * 100), meta[s].swing)
            else:
                dem, rep = PROXY_2020[s]
            rows.append(ElectionOutcome(year, s, _parse_pct(f"{dem:.1f}"), _parse_pct(f"{rep:.1f}")))
        outcomes[year] = rows

    polls = {}
    for year in (2016, 2020, 2024):
        truth = {o.state: o for o in outcomes[year]}
        rows = []
        for s in polled:
            k = int(rng.integers(8, 13)) if meta[s].swing else int(rng.integers(2, 7))
            for pj in rng.choice(pollsters, size=k, replace=False):
                n = int(rng.integers(400, 1501))
                for ci, cand in enumerate((DEM, REP)):
                    mean = par["beta0"] + par["beta1"] * ci + v[s][ci] + u[str(pj)]
                    y = mean + rng.normal(0.0, par["tau"])
                    pct = float(_round_pct(truth[s].share(cand) * math.exp(y)))
                    pct = min(max(pct, 0.1), 99.9)
                    rows.append(PollObservation(year, s, str(pj), cand, _parse_pct(f"{pct:.1f}"),
                                                n if year == 2024 else None))
        polls[year] = rows

    for year in (2016, 2020, 2024):
        write_polls(polls[year], out / f"polls_{year}.csv")
        write_outcomes(outcomes[year], out / f"outcomes_{year}.csv")
    write_fixture_config(out / "config.ini", B=B, T=T)
    return out


def write_fixture_config(path, B: int = 100, T: int = 50, out_dir: str = "out") -> None:
    cfg = configparser.ConfigParser()
    cfg["data"] = {f"polls_{y}": f"polls_{y}.csv" for y in (2016, 2020, 2024)}
    cfg["data"].update({f"outcomes_{y}": f"outcomes_{y}.csv" for y in (2016, 2020, 2024)})
    cfg["data"]["state_meta"] = ""
    cfg["run"] = {"mode": "retrospective", "output_dir": out_dir}
    cfg["model"] = {"variant": "ModelI", "restarts": "3", "seed": "0"}
    cfg["bootstrap"] = {"B": str(B), "seed": "1", "refit_restarts": "0"}
    cfg["conformal"] = {"train_year": "2020", "calib_year": "2016", "evaluate_at": "prediction",
                        "branch": "mirrored"}
    cfg["sensitivity"] = {"T": str(T), "seed": "2", "q_lo": "0.05", "q_hi": "0.95"}
    with open(path, "w", encoding="utf-8") as fh:
        cfg.write(fh)
