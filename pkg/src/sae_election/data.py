"""Poll and election-outcome ingestion.

Input files carry percentages (0-100); everything returned from this module
is in proportions. Candidates are fixed to ``DEM`` (k=1) and ``REP`` (k=2).
"""

from __future__ import annotations

import csv
import hashlib
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from importlib import resources
from pathlib import Path

DEM = "DEM"
REP = "REP"
CANDIDATES = (DEM, REP)
YEARS = (2016, 2020, 2024)
LEANINGS = ("blue", "red", "purple")

POLLS_HEADER = ("state", "pollster", "candidate", "pct", "sample_size")
OUTCOMES_HEADER = ("state", "dem_pct", "rep_pct")
META_HEADER = ("state", "ec_votes", "swing")

# Nine purple states used throughout the analysis.
SWING_STATES = ("NV", "AZ", "WI", "MI", "PA", "NC", "NH", "GA", "FL")


class DataError(ValueError):
    """Raised when an input table violates its schema or invariants."""


@dataclass(frozen=True)
class StateMeta:
    state: str
    ec_votes: int
    leaning: str | None = None
    polled_2024: bool = True
    swing: bool = False

    def __post_init__(self):
        if self.ec_votes < 1:
            raise DataError(f"{self.state}: ec_votes must be >= 1, got {self.ec_votes}")
        if self.leaning is not None and self.leaning not in LEANINGS:
            raise DataError(f"{self.state}: unknown leaning {self.leaning!r}")


@dataclass(frozen=True)
class PollObservation:
    year: int
    state: str
    pollster: str
    candidate: str
    proportion: float
    sample_size: int | None = None

    def __post_init__(self):
        if self.year not in YEARS:
            raise DataError(f"unsupported year {self.year}")
        if self.candidate not in CANDIDATES:
            raise DataError(f"candidate must be DEM or REP, got {self.candidate!r}")
        if not 0.0 < self.proportion < 1.0:
            raise DataError(
                f"{self.state}/{self.pollster}/{self.candidate}: proportion "
                f"{self.proportion} outside (0, 1)"
            )
        if self.sample_size is not None and self.sample_size < 1:
            raise DataError(f"sample_size must be positive, got {self.sample_size}")


@dataclass(frozen=True)
class ElectionOutcome:
    year: int
    state: str
    dem_share: float
    rep_share: float

    def __post_init__(self):
        if self.dem_share <= 0 or self.rep_share <= 0:
            raise DataError(f"{self.state} {self.year}: shares must be strictly positive")
        # 1e-12 slack absorbs percent->proportion rounding on exact 100.0 totals.
        if self.dem_share + self.rep_share > 1.0 + 1e-12:
            raise DataError(
                f"{self.state} {self.year}: dem + rep = "
                f"{self.dem_share + self.rep_share:.4f} exceeds 1"
            )

    def share(self, candidate: str) -> float:
        return self.dem_share if candidate == DEM else self.rep_share


@dataclass(frozen=True)
class ResponseRecord:
    year: int
    state: str
    pollster: str
    candidate: str
    y: float

    @property
    def candidate_indicator(self) -> int:
        return int(self.candidate == REP)


def _open_rows(path, header):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            found = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        found = tuple(col.strip() for col in found)
        if found != tuple(header):
            raise DataError(f"{path}: expected header {','.join(header)}, got {','.join(found)}")
        rows = [(lineno, row) for lineno, row in enumerate(reader, start=2) if row]
    return path, rows


def load_polls(path, year: int) -> list[PollObservation]:
    """Read one year of polls from ``state,pollster,candidate,pct,sample_size``."""
    path, rows = _open_rows(path, POLLS_HEADER)
    polls = []
    for lineno, row in rows:
        if len(row) != len(POLLS_HEADER):
            raise DataError(f"{path}:{lineno}: expected {len(POLLS_HEADER)} fields, got {len(row)}")
        state, pollster, candidate, pct, n = (c.strip() for c in row)
        try:
            proportion = _parse_pct(pct)
            sample_size = int(n) if n else None
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        if year == 2024 and sample_size is None:
            raise DataError(f"{path}:{lineno}: sample_size is required for 2024 polls")
        try:
            polls.append(PollObservation(year, state, pollster, candidate, proportion, sample_size))
        except DataError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
    return polls


def load_outcomes(path, year: int) -> list[ElectionOutcome]:
    path, rows = _open_rows(path, OUTCOMES_HEADER)
    seen = set()
    outcomes = []
    for lineno, row in rows:
        if len(row) != len(OUTCOMES_HEADER):
            raise DataError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
        state, dem, rep = (c.strip() for c in row)
        if state in seen:
            raise DataError(f"{path}:{lineno}: duplicate state {state}")
        seen.add(state)
        try:
            outcomes.append(ElectionOutcome(year, state, _parse_pct(dem), _parse_pct(rep)))
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
    return outcomes


def load_state_meta(path=None, polled_2024: Iterable[str] | None = None) -> dict[str, StateMeta]:
    """Load ``state,ec_votes,swing``; defaults to the bundled 51-state table.

    ``polled_2024`` marks which states have current-cycle polls; when omitted
    every state is treated as polled.
    """
    if path is None:
        path = resources.files("sae_election") / "resources" / "state_meta.csv"
    path, rows = _open_rows(path, META_HEADER)
    polled = None if polled_2024 is None else set(polled_2024)
    meta = {}
    for lineno, row in rows:
        state, ec, swing = (c.strip() for c in row)
        if state in meta:
            raise DataError(f"{path}:{lineno}: duplicate state {state}")
        if swing not in ("0", "1"):
            raise DataError(f"{path}:{lineno}: swing must be 0 or 1")
        meta[state] = StateMeta(
            state=state,
            ec_votes=int(ec),
            leaning="purple" if swing == "1" else None,
            polled_2024=True if polled is None else state in polled,
            swing=swing == "1",
        )
    return meta


def swing_list(meta: Mapping[str, StateMeta]) -> list[str]:
    return sorted(s for s, m in meta.items() if m.swing)


def with_leanings(meta: Mapping[str, StateMeta], leanings: Mapping[str, str]) -> dict[str, StateMeta]:
    out = {}
    for state, m in meta.items():
        out[state] = StateMeta(m.state, m.ec_votes, leanings.get(state, m.leaning), m.polled_2024, m.swing)
    return out


def classify_leaning(outcomes_2016, outcomes_2020, swing: Sequence[str]) -> dict[str, str]:
    """Assign blue/red/purple to every state seen in either outcome list.

    A state outside ``swing`` that changed winner between the two years is an
    error: it should have been listed as a swing state.
    """
    if not swing:
        raise DataError("swing list must be nonempty")
    by16 = {o.state: o for o in outcomes_2016}
    by20 = {o.state: o for o in outcomes_2020}
    states = sorted(set(by16) | set(by20) | set(swing))
    leaning = {}
    for state in states:
        if state in swing:
            leaning[state] = "purple"
            continue
        if state not in by16 or state not in by20:
            missing = 2016 if state not in by16 else 2020
            raise DataError(f"{state} missing from {missing} outcomes")
        d16 = by16[state].dem_share > by16[state].rep_share
        d20 = by20[state].dem_share > by20[state].rep_share
        if d16 != d20:
            raise DataError(f"{state} flipped between 2016 and 2020 but is not in the swing list")
        leaning[state] = "blue" if d16 else "red"
    return leaning


def build_responses(polls: Iterable[PollObservation], outcomes: Iterable[ElectionOutcome]) -> list[ResponseRecord]:
    """Log poll-to-outcome ratios ``y = log p - log pi`` for each poll row."""
    lookup = {(o.year, o.state): o for o in outcomes}
    records = []
    for p in polls:
        out = lookup.get((p.year, p.state))
        if out is None:
            raise DataError(f"no outcome for (year={p.year}, state={p.state}, candidate={p.candidate})")
        y = math.log(p.proportion) - math.log(out.share(p.candidate))
        records.append(ResponseRecord(p.year, p.state, p.pollster, p.candidate, y))
    return records


def pair_polls(polls: Iterable[PollObservation]) -> dict[str, list[tuple[str, float, float]]]:
    """Pair DEM and REP rows of the same pollster within a state.

    Rows are matched in order of appearance; unmatched rows are dropped.
    Returns ``state -> [(pollster, p_dem, p_rep), ...]``.
    """
    queues: dict[tuple[str, str], dict[str, list[float]]] = {}
    order: list[tuple[str, str]] = []
    for p in polls:
        key = (p.state, p.pollster)
        if key not in queues:
            queues[key] = {DEM: [], REP: []}
            order.append(key)
        queues[key][p.candidate].append(p.proportion)
    paired: dict[str, list[tuple[str, float, float]]] = {}
    for state, pollster in order:
        q = queues[(state, pollster)]
        for pd_, pr_ in zip(q[DEM], q[REP]):
            paired.setdefault(state, []).append((pollster, pd_, pr_))
    return paired


def _parse_pct(text: str) -> float:
    """Percent text to the correctly rounded proportion (``"49.7"`` gives 0.497)."""
    try:
        return float(Decimal(text) / 100)
    except InvalidOperation:
        raise ValueError(f"could not convert {text!r} to a number") from None


def _fmt_pct(x: float) -> str:
    """Percent text that :func:`_parse_pct` maps back to exactly ``x``."""
    return format((Decimal(repr(x)) * 100).normalize(), "f")


def write_polls(polls: Iterable[PollObservation], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POLLS_HEADER)
        for p in polls:
            w.writerow([p.state, p.pollster, p.candidate, _fmt_pct(p.proportion),
                        "" if p.sample_size is None else p.sample_size])


def write_outcomes(outcomes: Iterable[ElectionOutcome], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OUTCOMES_HEADER)
        for o in outcomes:
            w.writerow([o.state, _fmt_pct(o.dem_share), _fmt_pct(o.rep_share)])


def fingerprint(paths: Iterable) -> str:
    """SHA-256 over the byte contents of the given files, in the given order."""
    h = hashlib.sha256()
    for p in paths:
        data = Path(p).read_bytes()
        h.update(len(data).to_bytes(8, "little"))
        h.update(data)
    return h.hexdigest()
