"""Localized split-conformal estimate of the probability of incorrect prediction.

Calibration uses one past election (default 2016) with a Model I fit trained
on the other (default 2020). Each calibration state contributes one score per
pollster, ``R_ij = d_ij - d_hat_i``, and scores are pooled by political
leaning so that a target state is only compared with states like it.
"""

from __future__ import annotations

import math
import warnings
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .data import LEANINGS, PollObservation, pair_polls
from .lmm import ModelFit
from .predict import predict_from_fit

PREDICTION = "prediction"
THRESHOLD = "threshold"
MIRRORED = "mirrored"
COMPLEMENT = "complement"


@dataclass(frozen=True)
class ConformalConfig:
    train_year: int = 2020
    calib_year: int = 2016
    evaluate_at: str = PREDICTION
    branch: str = MIRRORED

    def __post_init__(self):
        if self.train_year == self.calib_year:
            raise ValueError("training and calibration years must differ")
        if self.evaluate_at not in (PREDICTION, THRESHOLD):
            raise ValueError(f"evaluate_at must be {PREDICTION!r} or {THRESHOLD!r}")
        if self.branch not in (MIRRORED, COMPLEMENT):
            raise ValueError(f"branch must be {MIRRORED!r} or {COMPLEMENT!r}")


@dataclass(frozen=True)
class CalibrationScores:
    leaning: str
    scores: np.ndarray
    provenance: tuple[tuple[str, str], ...] = ()

    @property
    def n(self) -> int:
        return int(self.scores.size)


@dataclass(frozen=True)
class ConformalResult:
    state: str
    leaning: str
    d_hat_star: float
    p_at_dhat: float
    poip: float
    n_calib: int


def _as_array(scores) -> np.ndarray:
    if isinstance(scores, CalibrationScores):
        return scores.scores
    return np.asarray(scores, dtype=float)


def calibration_predictions(fit: ModelFit, calib_polls: Iterable[PollObservation]) -> dict[str, float]:
    """Predicted margin for each calibration state from the training-year fit."""
    return {p.state: p.d_hat for p in predict_from_fit(fit, calib_polls) if p.state in fit.v_hat}


def build_calibration_scores(fit: ModelFit | None, calib_polls: Sequence[PollObservation],
                             leanings: Mapping[str, str],
                             d_hat: Mapping[str, float] | None = None) -> dict[str, CalibrationScores]:
    """Pool ``d_ij - d_hat_i`` by leaning.

    ``d_hat`` overrides the per-state predictions (the sensitivity analysis
    keeps them fixed while the polls move); otherwise they are recomputed
    from ``fit``.
    """
    if d_hat is None:
        if fit is None:
            raise ValueError("need either a fit or precomputed predictions")
        d_hat = calibration_predictions(fit, calib_polls)
    buckets: dict[str, list[float]] = {lean: [] for lean in LEANINGS}
    prov: dict[str, list[tuple[str, str]]] = {lean: [] for lean in LEANINGS}
    skipped = []
    for state, rows in sorted(pair_polls(calib_polls).items()):
        if state not in d_hat:
            skipped.append(state)
            continue
        lean = leanings[state]
        for pollster, p_dem, p_rep in rows:
            buckets[lean].append(math.log(p_dem) - math.log(p_rep) - d_hat[state])
            prov[lean].append((state, pollster))
    if skipped:
        warnings.warn(f"calibration states without a prediction skipped: {', '.join(skipped)}", stacklevel=2)
    return {lean: CalibrationScores(lean, np.array(buckets[lean]), tuple(prov[lean])) for lean in LEANINGS}


def conformal_p_value(d: float, d_hat_star: float, scores) -> float:
    """``(#{R_s(d) < R_ij} + 1) / (n + 1)`` with ``R_s(d) = d - d_hat_star``.

    Candidate margins outside [-1, 1] are clamped.
    """
    if not -1.0 <= d <= 1.0:
        warnings.warn(f"candidate margin {d} clamped to [-1, 1]", stacklevel=2)
        d = min(1.0, max(-1.0, d))
    s = _as_array(scores)
    r = d - d_hat_star
    return (np.count_nonzero(r < s) + 1) / (s.size + 1)


def _upper_p(r, s):
    return (np.count_nonzero(s < r) + 1) / (s.size + 1)


def conformal_poip(d_hat_star: float, scores, outcome_sign: int, evaluate_at: str = PREDICTION,
                   branch: str = MIRRORED) -> float:
    """Conformal PoIP for one target state.

    At the default ``evaluate_at="prediction"`` the p-value is taken at
    ``d = d_hat_star``, so ``R_s = 0``. A positive outcome sign returns the
    p-value itself; a negative one returns the add-one smoothed fraction of
    scores below ``R_s`` (``branch="mirrored"``) or the literal ``1 - p``
    (``branch="complement"``, which can reach 0).

    ``evaluate_at="threshold"`` instead estimates the chance that the true
    margin lands on the other side of zero: with ``R_s = -d_hat_star`` it
    counts scores beyond the crossing point in the direction of error.
    """
    s = _as_array(scores)
    if outcome_sign == 0:
        raise ValueError("outcome sign must be +1 or -1")
    if evaluate_at == THRESHOLD:
        r = -d_hat_star
        return _upper_p(r, s) if outcome_sign > 0 else (np.count_nonzero(r < s) + 1) / (s.size + 1)
    at = min(1.0, max(-1.0, d_hat_star))
    p = conformal_p_value(at, d_hat_star, s)
    if outcome_sign > 0:
        return p
    if branch == COMPLEMENT:
        return 1.0 - p
    return _upper_p(at - d_hat_star, s)


def run_conformal(scores: Mapping[str, CalibrationScores], targets: Mapping[str, tuple[float, int]],
                  leanings: Mapping[str, str], config: ConformalConfig = ConformalConfig()) -> list[ConformalResult]:
    """PoIP for each target ``state -> (d_hat_star, outcome_sign)``."""
    out = []
    for state in sorted(targets):
        d_hat_star, sign = targets[state]
        lean = leanings[state]
        sc = scores[lean]
        if sc.n == 0:
            raise ValueError(f"no calibration scores for leaning {lean!r}")
        at = min(1.0, max(-1.0, d_hat_star))
        p = conformal_p_value(at, d_hat_star, sc)
        poip = conformal_poip(d_hat_star, sc, sign, config.evaluate_at, config.branch)
        out.append(ConformalResult(state, lean, d_hat_star, float(p), float(poip), sc.n))
    return out


@dataclass(frozen=True)
class MarginGenerator:
    """Gaussian margins for calibration pollsters and a target state.

    ``target_shift`` moves the target's mean away from the calibration mean,
    which breaks exchangeability on purpose.
    """

    n_calib: int = 60
    loc: float = 0.0
    scale: float = 0.1
    pred_calib: float = 0.0
    pred_target: float = 0.0
    target_shift: float = 0.0


@dataclass(frozen=True)
class CoverageRow:
    alpha: float
    rate: float
    mc_se: float
    reps: int

    @property
    def bound(self) -> float:
        return self.alpha + 3.0 * math.sqrt(self.alpha * (1.0 - self.alpha) / self.reps)


def coverage_simulation(generator: MarginGenerator, alphas: Sequence[float], reps: int,
                        seed: int) -> list[CoverageRow]:
    """Empirical ``P[p_s(d*_s) <= alpha]`` using the hypothetical scores."""
    g = generator
    rng = np.random.default_rng([seed, 0])
    calib = rng.normal(g.loc, g.scale, size=(reps, g.n_calib)) - g.pred_calib
    target = rng.normal(g.loc + g.target_shift, g.scale, size=reps) - g.pred_target
    counts = np.count_nonzero(target[:, None] < calib, axis=1)
    p = (counts + 1) / (g.n_calib + 1)
    rows = []
    for a in alphas:
        rate = float(np.mean(p <= a))
        rows.append(CoverageRow(float(a), rate, math.sqrt(rate * (1 - rate) / reps), reps))
    return rows
