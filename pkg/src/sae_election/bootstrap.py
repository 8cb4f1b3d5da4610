"""Bootstrap standard error of the predicted margin and the normal-approximation PoIP."""

from __future__ import annotations

import math
import warnings
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtr

from .data import DEM, REP, PollObservation
from .lmm import MODEL_I, DesignMatrices, ModelError, ModelFit, ModelSpec, eblup_theta, fit_reml, fitted_means
from .predict import group_polls


@dataclass(frozen=True)
class BootstrapConfig:
    B: int = 1000
    seed: int = 0
    refit_restarts: int = 0
    max_drop: float = 0.10

    def __post_init__(self):
        if self.B < 2:
            raise ValueError("B must be at least 2")


@dataclass(frozen=True)
class BootstrapResult:
    state: str
    d_hat_star: float
    samples: np.ndarray
    se_boot: float
    poip: float


def bootstrap_poip(d_hat_star: float, se_boot: float, outcome_sign: int | None = None,
                   raw: bool = False) -> float:
    """Normal-approximation probability that the predicted winner is wrong.

    With ``outcome_sign`` omitted the sign of ``d_hat_star`` is used, which
    gives ``Phi(-|d| / se)``. ``raw=True`` applies the uncorrected piecewise
    form (``Phi(d/se)`` for a positive outcome, ``1 - Phi(d/se)`` for a
    negative one), which gives the probability of a correct call; it is kept
    for comparison only.
    """
    if se_boot < 0:
        raise ValueError("se_boot must be nonnegative")
    if se_boot == 0:
        if d_hat_star == 0:
            raise ValueError("PoIP undefined for a zero margin with zero spread")
        z = math.copysign(math.inf, d_hat_star)
    else:
        z = d_hat_star / se_boot
    sign = outcome_sign if outcome_sign is not None else (1 if d_hat_star > 0 else -1 if d_hat_star < 0 else 0)
    if raw:
        if sign == 0:
            return 0.5
        return float(ndtr(z)) if sign > 0 else float(1.0 - ndtr(z))
    if sign == 0:
        return 0.5
    return float(ndtr(-sign * z))


def _poll_arrays(polls_2024: Iterable[PollObservation]):
    grouped = group_polls(polls_2024)
    states, n, p, seg = [], [], [], []
    for state in sorted(grouped):
        dem, rep = grouped[state][DEM], grouped[state][REP]
        if not dem or not rep:
            continue
        states.append(state)
        for k, rows in ((0, dem), (1, rep)):
            for row in rows:
                if row.sample_size is None:
                    raise ValueError(f"{state}/{row.pollster}: bootstrap needs sample sizes")
                n.append(row.sample_size)
                p.append(row.proportion)
                seg.append(2 * (len(states) - 1) + k)
    return states, np.array(n, dtype=np.int64), np.array(p), np.array(seg, dtype=np.intp)


def _segment_mean_log(p, seg, n_seg):
    tot = np.bincount(seg, weights=np.log(p), minlength=n_seg)
    cnt = np.bincount(seg, minlength=n_seg)
    return tot / cnt


def bootstrap_dhat_samples(fit: ModelFit, design: DesignMatrices, polls_2024: Iterable[PollObservation],
                           config: BootstrapConfig = BootstrapConfig()):
    """Replicates of the predicted margin for every polled state.

    Each replicate refits Model I on ``theta_hat + N(0, tau_hat^2)`` noise and
    redraws every current-cycle poll as ``Binomial(n, p) / n``. Redrawn
    proportions are held inside ``[0.5/n, 1 - 0.5/n]`` so logs stay finite.

    Returns ``(point, samples, n_dropped)`` where ``point`` maps state to the
    margin from the original fit and ``samples`` maps state to a length-B'
    array (B' = B minus dropped replicates), ordered by replicate index.
    """
    if fit.variant != MODEL_I:
        raise ValueError("the margin bootstrap is defined for Model I")
    if not fit.converged:
        raise ModelError("cannot bootstrap a fit that did not converge")
    states, n, p, seg = _poll_arrays(polls_2024)
    n_seg = 2 * len(states)
    base_log = _segment_mean_log(p, seg, n_seg).reshape(-1, 2)

    def margins(f, mlog):
        th = np.array([[eblup_theta(f, s, DEM), eblup_theta(f, s, REP)] for s in states])
        lp = mlog - th
        return lp[:, 0] - lp[:, 1]

    point = dict(zip(states, margins(fit, base_log)))
    theta_hat = fitted_means(fit, design)
    opts = replace(fit.options, restarts=config.refit_restarts)
    spec = ModelSpec(MODEL_I)
    rows, dropped = [], 0
    for b in range(config.B):
        rng = np.random.default_rng([config.seed, b])
        yb = theta_hat + rng.normal(0.0, fit.vc.tau, size=design.n_obs)
        pb = rng.binomial(n, p) / n
        pb = np.clip(pb, 0.5 / n, 1.0 - 0.5 / n)
        try:
            fb = fit_reml(spec, design.with_y(yb), opts, start=fit.theta)
        except ModelError:
            dropped += 1
            continue
        if not fb.converged:
            dropped += 1
            continue
        rows.append(margins(fb, _segment_mean_log(pb, seg, n_seg).reshape(-1, 2)))
    if dropped > config.max_drop * config.B:
        raise ModelError(f"{dropped} of {config.B} bootstrap refits failed")
    if dropped:
        warnings.warn(f"dropped {dropped} of {config.B} bootstrap replicates", stacklevel=2)
    mat = np.array(rows).reshape(-1, len(states))
    samples = {s: mat[:, i].copy() for i, s in enumerate(states)}
    return point, samples, dropped


def se_boot(samples: np.ndarray) -> float:
    """Root mean squared deviation from the replicate mean (1/B normalisation)."""
    return float(np.std(samples, ddof=0))


def run_bootstrap(fit: ModelFit, design: DesignMatrices, polls_2024: Iterable[PollObservation],
                  config: BootstrapConfig = BootstrapConfig(),
                  outcome_signs: Mapping[str, int] | None = None,
                  raw: bool = False) -> list[BootstrapResult]:
    point, samples, _ = bootstrap_dhat_samples(fit, design, polls_2024, config)
    results = []
    for state in sorted(point):
        s = samples[state]
        se = se_boot(s)
        sign = None if outcome_signs is None else outcome_signs.get(state)
        d = float(point[state])
        if se == 0 and d == 0:
            poip = 0.5
        else:
            poip = bootstrap_poip(d, se, sign, raw=raw)
        results.append(BootstrapResult(state, d, s, se, poip))
    return results
