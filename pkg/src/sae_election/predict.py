"""Transfer-learning vote-share prediction, poll-of-polls baseline, EC tally."""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .data import DEM, REP, ElectionOutcome, PollObservation, StateMeta
from .lmm import MODEL_III, ModelFit, eblup_theta

SAE_I = "SAE_I"
SAE_III = "SAE_III"
POP = "PoP"
PROXY = "Proxy2020"
METHODS = (SAE_I, SAE_III, POP, PROXY)


class PredictionError(ValueError):
    pass


def dor_margin(dem_share: float, rep_share: float) -> float:
    """Log-odds of the Democratic over the Republican share."""
    if dem_share <= 0 or rep_share <= 0:
        raise PredictionError(f"shares must be positive, got ({dem_share}, {rep_share})")
    return math.log(dem_share) - math.log(rep_share)


@dataclass(frozen=True)
class StatePrediction:
    state: str
    method: str
    pi_hat_dem: float
    pi_hat_rep: float
    d_hat: float = field(init=False)
    winner: str = field(init=False)

    def __post_init__(self):
        if self.method not in METHODS:
            raise PredictionError(f"unknown method {self.method!r}")
        d = dor_margin(self.pi_hat_dem, self.pi_hat_rep)
        if d == 0.0:
            raise PredictionError(f"{self.state}: exact tie in predicted margin")
        object.__setattr__(self, "d_hat", d)
        object.__setattr__(self, "winner", DEM if d > 0 else REP)

    @property
    def odds_ratio(self) -> float:
        return math.exp(self.d_hat)


@dataclass(frozen=True)
class NationalTally:
    ec_dem: int
    ec_rep: int
    per_state_winners: dict[str, str]
    proxy_states: tuple[str, ...]

    @property
    def winner(self) -> str:
        return DEM if self.ec_dem > self.ec_rep else REP

    def summary(self) -> str:
        return f"DEM {self.ec_dem} / REP {self.ec_rep}"


def mean_log_polls(proportions: Iterable[float]) -> float:
    """Average of log poll proportions (log of their geometric mean)."""
    p = np.asarray(list(proportions), dtype=float)
    if p.size == 0:
        raise PredictionError("no polls to average")
    return float(np.mean(np.log(p)))


def geometric_mean(proportions: Sequence[float]) -> float:
    """``exp(mean log p)``; a constant poll set returns its common value exactly."""
    p = np.asarray(proportions, dtype=float)
    if p.size and np.all(p == p[0]):
        return float(p[0])
    return math.exp(mean_log_polls(p))


def sae_predict_state(state: str, theta_dem: float, theta_rep: float,
                      polls_dem: Sequence[float], polls_rep: Sequence[float],
                      method: str = SAE_I) -> StatePrediction:
    """Bias-corrected shares ``exp(mean log p - theta)`` per candidate.

    Computed as ``geometric_mean(p) * exp(-theta)`` so that zero bias returns
    the geometric mean itself.
    """
    if len(polls_dem) == 0 or len(polls_rep) == 0:
        raise PredictionError(f"{state}: SAE prediction needs polls for both candidates")
    pi_dem = geometric_mean(polls_dem) * math.exp(-theta_dem)
    pi_rep = geometric_mean(polls_rep) * math.exp(-theta_rep)
    return StatePrediction(state, method, pi_dem, pi_rep)


def pop_predict_state(state: str, polls_dem: Sequence[float], polls_rep: Sequence[float]) -> StatePrediction:
    if len(polls_dem) == 0 or len(polls_rep) == 0:
        raise PredictionError(f"{state}: poll-of-polls needs polls for both candidates")
    return StatePrediction(state, POP, float(np.mean(polls_dem)), float(np.mean(polls_rep)))


def group_polls(polls: Iterable[PollObservation]) -> dict[str, dict[str, list[PollObservation]]]:
    """``state -> candidate -> polls`` preserving input order."""
    out: dict[str, dict[str, list[PollObservation]]] = {}
    for p in polls:
        out.setdefault(p.state, {DEM: [], REP: []})[p.candidate].append(p)
    return out


def predict_from_fit(fit: ModelFit, polls: Iterable[PollObservation]) -> list[StatePrediction]:
    """SAE predictions for every state with polls for both candidates."""
    method = SAE_III if fit.variant == MODEL_III else SAE_I
    preds = []
    for state, by_cand in sorted(group_polls(polls).items()):
        dem, rep = by_cand[DEM], by_cand[REP]
        if not dem or not rep:
            continue
        th_d = eblup_theta(fit, state, DEM, [p.pollster for p in dem])
        th_r = eblup_theta(fit, state, REP, [p.pollster for p in rep])
        preds.append(sae_predict_state(state, th_d, th_r, [p.proportion for p in dem],
                                       [p.proportion for p in rep], method))
    return preds


def predict_pop(polls: Iterable[PollObservation]) -> list[StatePrediction]:
    preds = []
    for state, by_cand in sorted(group_polls(polls).items()):
        dem, rep = by_cand[DEM], by_cand[REP]
        if dem and rep:
            preds.append(pop_predict_state(state, [p.proportion for p in dem], [p.proportion for p in rep]))
    return preds


def proxy_predictions(states: Iterable[str], outcomes_2020: Iterable[ElectionOutcome]) -> list[StatePrediction]:
    by_state = {o.state: o for o in outcomes_2020}
    preds = []
    for s in sorted(states):
        if s not in by_state:
            raise PredictionError(f"no 2020 outcome to use as proxy for {s}")
        o = by_state[s]
        preds.append(StatePrediction(s, PROXY, o.dem_share, o.rep_share))
    return preds


def ec_tally(predictions: Iterable[StatePrediction], meta: Mapping[str, StateMeta],
             proxy_outcomes_2020: Iterable[ElectionOutcome] = ()) -> NationalTally:
    """Winner-take-all Electoral College count.

    States without a prediction fall back to their 2020 winner and are listed
    in ``proxy_states``.
    """
    winners = {p.state: p.winner for p in predictions}
    unknown = sorted(set(winners) - set(meta))
    if unknown:
        raise PredictionError(f"predictions for states without metadata: {', '.join(unknown)}")
    proxies = {o.state: o for o in proxy_outcomes_2020}
    proxy_states = []
    for state in sorted(meta):
        if state in winners:
            continue
        if state not in proxies:
            raise PredictionError(f"{state} is covered by neither predictions nor 2020 proxies")
        o = proxies[state]
        winners[state] = DEM if o.dem_share > o.rep_share else REP
        proxy_states.append(state)
    dem = sum(meta[s].ec_votes for s, w in winners.items() if w == DEM)
    rep = sum(meta[s].ec_votes for s, w in winners.items() if w == REP)
    return NationalTally(dem, rep, dict(sorted(winners.items())), tuple(proxy_states))
