"""Sensitivity of the conformal PoIP to uniform pollster bias."""

from __future__ import annotations

import warnings
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, replace

import numpy as np

from .conformal import ConformalConfig, build_calibration_scores, conformal_poip
from .data import CANDIDATES, LEANINGS, ElectionOutcome, PollObservation

CLAMP_EPS = 1e-4


@dataclass(frozen=True)
class BiasBounds:
    leaning: str
    candidate: str
    a: float
    b: float

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)):
            raise ValueError("bias bounds must be finite")
        if self.a > self.b:
            raise ValueError(f"lower bound {self.a} exceeds upper bound {self.b}")


@dataclass(frozen=True)
class SensitivityConfig:
    T: int = 200
    seed: int = 0
    quantiles: tuple[float, float] = (0.05, 0.95)
    max_drop: float = 0.10

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be positive")
        lo, hi = self.quantiles
        if not 0.0 < lo <= hi < 1.0:
            raise ValueError("quantiles must be ordered inside (0, 1)")


@dataclass(frozen=True)
class SensitivityResult:
    state: str
    base_poip: float
    median_poip: float
    interval: tuple[float, float]
    replicates: np.ndarray
    n_clamped: int = 0


def estimate_bias_bounds(calib_polls: Sequence[PollObservation], calib_outcomes: Sequence[ElectionOutcome],
                         leanings: Mapping[str, str]) -> dict[tuple[str, str], BiasBounds]:
    """Range of ``p - pi`` within each (leaning, candidate) group, in proportions."""
    outcome = {o.state: o for o in calib_outcomes}
    diffs: dict[tuple[str, str], list[float]] = {(lean, k): [] for lean in LEANINGS for k in CANDIDATES}
    for p in calib_polls:
        if p.state not in outcome:
            raise ValueError(f"no calibration outcome for {p.state}")
        diffs[(leanings[p.state], p.candidate)].append(p.proportion - outcome[p.state].share(p.candidate))
    bounds = {}
    for key, vals in diffs.items():
        if not vals:
            raise ValueError(f"no polls in group leaning={key[0]}, candidate={key[1]}")
        bounds[key] = BiasBounds(key[0], key[1], min(vals), max(vals))
    return bounds


def synthesize_polls(polls: Sequence[PollObservation], bounds: Mapping[tuple[str, str], BiasBounds],
                     leanings: Mapping[str, str], seed: int, t: int):
    """One synthetic copy of the calibration polls, ``p - U`` with ``U ~ Unif(a, b)``.

    One uniform draw per poll row from a generator keyed by ``(seed, t)``.
    Results are clamped to ``[1e-4, 1 - 1e-4]``; returns ``(polls, n_clamped)``.
    """
    lo = np.empty(len(polls))
    hi = np.empty(len(polls))
    for i, p in enumerate(polls):
        bb = bounds[(leanings[p.state], p.candidate)]
        lo[i], hi[i] = bb.a, bb.b
    rng = np.random.default_rng([seed, t])
    u = lo + (hi - lo) * rng.random(len(polls))
    raw = np.array([p.proportion for p in polls]) - u
    new = np.clip(raw, CLAMP_EPS, 1.0 - CLAMP_EPS)
    n_clamped = int(np.count_nonzero(new != raw))
    out = [replace(p, proportion=float(x)) for p, x in zip(polls, new)]
    return out, n_clamped


def run_sensitivity(config: SensitivityConfig, calib_polls: Sequence[PollObservation],
                    calib_d_hat: Mapping[str, float], leanings: Mapping[str, str],
                    targets: Mapping[str, tuple[float, int]],
                    bounds: Mapping[tuple[str, str], BiasBounds],
                    conformal: ConformalConfig = ConformalConfig()) -> list[SensitivityResult]:
    """Re-run the conformal PoIP on ``T`` bias-perturbed calibration sets.

    Calibration predictions ``calib_d_hat`` stay fixed; only the pollster
    margins, and hence the scores, change between replicates.
    """
    def poips(polls):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            scores = build_calibration_scores(None, polls, leanings, d_hat=calib_d_hat)
        return {s: conformal_poip(d, scores[leanings[s]], sign, conformal.evaluate_at, conformal.branch)
                for s, (d, sign) in targets.items()}

    base = poips(calib_polls)
    states = sorted(targets)
    reps = np.full((config.T, len(states)), np.nan)
    clamped = 0
    for t in range(config.T):
        synth, nc = synthesize_polls(calib_polls, bounds, leanings, config.seed, t)
        clamped += nc
        try:
            vals = poips(synth)
        except (ValueError, KeyError, ZeroDivisionError):
            continue
        reps[t] = [vals[s] for s in states]
    if clamped:
        warnings.warn(f"{clamped} synthetic proportions clamped to [{CLAMP_EPS}, {1 - CLAMP_EPS}]", stacklevel=2)
    lo_q, hi_q = config.quantiles
    results = []
    for i, s in enumerate(states):
        col = reps[:, i]
        ok = col[np.isfinite(col)]
        if ok.size < (1.0 - config.max_drop) * config.T:
            raise RuntimeError(f"{s}: only {ok.size} of {config.T} sensitivity replicates succeeded")
        results.append(SensitivityResult(
            state=s,
            base_poip=float(base[s]),
            median_poip=float(np.median(ok)),
            interval=(float(np.quantile(ok, lo_q)), float(np.quantile(ok, hi_q))),
            replicates=ok,
            n_clamped=clamped,
        ))
    return results
