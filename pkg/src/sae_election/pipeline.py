"""Config-driven end-to-end run and report emission."""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
import logging
import math
import urllib.request
import warnings
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

from .bootstrap import BootstrapConfig, run_bootstrap
from .conformal import ConformalConfig, build_calibration_scores, calibration_predictions, run_conformal
from .data import (ElectionOutcome, build_responses, classify_leaning, fingerprint, load_outcomes,
                   load_polls, load_state_meta, swing_list)
from .lmm import MODEL_I, MODEL_III, PARAM_NAMES, DesignMatrices, FitOptions, ModelFit, ModelSpec, fit_reml
from .predict import POP, SAE_I, SAE_III, NationalTally, ec_tally, predict_from_fit, predict_pop
from .sensitivity import SensitivityConfig, estimate_bias_bounds, run_sensitivity

log = logging.getLogger(__name__)

RETROSPECTIVE = "retrospective"
PROSPECTIVE = "prospective"
STAGES = ("ingest", "fit", "predict", "tally", "bootstrap", "conformal", "sensitivity", "report")
INCOMPLETE = "INCOMPLETE"
MANIFEST = "manifest.json"

PREDICTIONS_HEADER = ("state", "method", "dem_pct", "rep_pct", "d_hat", "winner")
SCATTER_HEADER = ("state", "d_actual", "d_hat", "method")
BOOT_HEADER = ("state", "d_hat", "se_boot", "poip_boot", "B", "seed")
CONF_HEADER = ("state", "realrate_or", "sae_or", "pop_or", "poip_boot", "poip_conformal")
SENS_HEADER = ("state", "base_poip", "median_poip", "q05", "q95", "T", "seed")
ARROW_HEADER = ("state", "or_real", "base_poip", "median_poip", "leaning")
POIP_HEADER = ("state", "realrate_or", "sae_or", "pop_or", "poip_boot", "poip_conf", "sens_lo", "sens_hi")
TALLY_HEADER = ("method", "ec_dem", "ec_rep", "winner")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class RunConfig:
    polls: dict[int, Path]
    outcomes: dict[int, Path]
    state_meta: Path | None = None
    mode: str = RETROSPECTIVE
    model_variant: str = MODEL_I
    model_restarts: int = 3
    model_seed: int = 0
    boot_B: int = 1000
    boot_seed: int = 0
    boot_refit_restarts: int = 0
    train_year: int = 2020
    calib_year: int = 2016
    evaluate_at: str = "prediction"
    branch: str = "mirrored"
    sens_T: int = 200
    sens_seed: int = 0
    quantiles: tuple[float, float] = (0.05, 0.95)
    output_dir: Path = Path("out")
    # values as written in the config file; hashed instead of resolved paths
    raw: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.mode not in (RETROSPECTIVE, PROSPECTIVE):
            raise ValueError(f"mode must be {RETROSPECTIVE!r} or {PROSPECTIVE!r}")
        if self.model_variant not in (MODEL_I, MODEL_III):
            raise ValueError(f"unknown model variant {self.model_variant!r}")
        for y in (2016, 2020, 2024):
            if y not in self.polls:
                raise ValueError(f"missing polls_{y} entry")
        for y in (2016, 2020):
            if y not in self.outcomes:
                raise ValueError(f"missing outcomes_{y} entry")
        if self.mode == RETROSPECTIVE and 2024 not in self.outcomes:
            raise ValueError("retrospective mode needs outcomes_2024")

    @classmethod
    def from_file(cls, path) -> RunConfig:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"no such config file: {path}")
        cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        cp.read(path, encoding="utf-8")
        base = path.parent

        def get(section, key, default=None):
            return cp.get(section, key, fallback=default)

        def resolve(text):
            return None if not text else (base / text)

        polls = {y: resolve(get("data", f"polls_{y}")) for y in (2016, 2020, 2024)}
        outcomes = {y: resolve(get("data", f"outcomes_{y}")) for y in (2016, 2020, 2024)}
        raw = {s: dict(cp[s]) for s in cp.sections()}
        return cls(
            polls={y: p for y, p in polls.items() if p is not None},
            outcomes={y: p for y, p in outcomes.items() if p is not None},
            state_meta=resolve(get("data", "state_meta")),
            mode=get("run", "mode", RETROSPECTIVE),
            model_variant=get("model", "variant", MODEL_I),
            model_restarts=int(get("model", "restarts", 3)),
            model_seed=int(get("model", "seed", 0)),
            boot_B=int(get("bootstrap", "B", 1000)),
            boot_seed=int(get("bootstrap", "seed", 0)),
            boot_refit_restarts=int(get("bootstrap", "refit_restarts", 0)),
            train_year=int(get("conformal", "train_year", 2020)),
            calib_year=int(get("conformal", "calib_year", 2016)),
            evaluate_at=get("conformal", "evaluate_at", "prediction"),
            branch=get("conformal", "branch", "mirrored"),
            sens_T=int(get("sensitivity", "T", 200)),
            sens_seed=int(get("sensitivity", "seed", 0)),
            quantiles=(float(get("sensitivity", "q_lo", 0.05)), float(get("sensitivity", "q_hi", 0.95))),
            output_dir=base / get("run", "output_dir", "out"),
            raw=raw,
        )

    def with_seed(self, seed: int) -> RunConfig:
        """Override every seed: model ``s``, bootstrap ``s``, sensitivity ``s + 1``."""
        raw = {k: dict(v) for k, v in self.raw.items()}
        raw.setdefault("override", {})["seed"] = str(seed)
        return replace(self, model_seed=seed, boot_seed=seed, sens_seed=seed + 1, raw=raw)

    def input_paths(self) -> list[Path]:
        paths = [self.polls[y] for y in sorted(self.polls)] + [self.outcomes[y] for y in sorted(self.outcomes)]
        if self.state_meta is not None:
            paths.append(self.state_meta)
        return paths

    def config_hash(self) -> str:
        """Hash of the effective settings; paths enter as written, not resolved."""
        d = {k: v for k, v in asdict(self).items() if k not in ("polls", "outcomes", "state_meta",
                                                                "output_dir", "raw")}
        d["quantiles"] = list(self.quantiles)
        d["data"] = self.raw.get("data", {})
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def validate_files(self) -> None:
        for p in self.input_paths():
            if not Path(p).exists():
                raise FileNotFoundError(f"input file not found: {p}")


@dataclass
class PipelineState:
    """Everything computed so far; each stage fills its own fields."""

    config: RunConfig
    input_fingerprint: str = ""
    meta: dict = field(default_factory=dict)
    polls: dict = field(default_factory=dict)
    outcomes: dict = field(default_factory=dict)
    leanings: dict = field(default_factory=dict)
    design_i: DesignMatrices | None = None
    fits: dict = field(default_factory=dict)
    predictions: dict = field(default_factory=dict)
    tallies: dict = field(default_factory=dict)
    boot: dict = field(default_factory=dict)
    conformal: dict = field(default_factory=dict)
    sensitivity: dict = field(default_factory=dict)
    written: list = field(default_factory=list)
    completed: list = field(default_factory=list)

    @property
    def sae_i(self) -> dict:
        return {p.state: p for p in self.predictions.get(SAE_I, [])}

    def outcome_signs(self) -> dict[str, int]:
        """Actual 2024 winner in retrospective mode, predicted winner otherwise."""
        if self.config.mode == RETROSPECTIVE:
            actual = {o.state: o for o in self.outcomes[2024]}
            return {s: (1 if actual[s].dem_share > actual[s].rep_share else -1) for s in self.sae_i}
        return {s: (1 if p.d_hat > 0 else -1) for s, p in self.sae_i.items()}


# Stages

def stage_ingest(st: PipelineState) -> None:
    cfg = st.config
    cfg.validate_files()
    st.input_fingerprint = fingerprint(cfg.input_paths())
    st.polls = {y: load_polls(p, y) for y, p in cfg.polls.items()}
    st.outcomes = {y: load_outcomes(p, y) for y, p in cfg.outcomes.items()}
    polled = sorted({p.state for p in st.polls[2024]})
    st.meta = load_state_meta(cfg.state_meta, polled_2024=polled)
    st.leanings = classify_leaning(st.outcomes[2016], st.outcomes[2020], swing_list(st.meta))


def _design(st, years, with_pollster):
    polls = [p for y in years for p in st.polls[y]]
    outs = [o for y in years for o in st.outcomes[y]]
    return DesignMatrices.from_responses(build_responses(polls, outs), with_pollster=with_pollster)


def stage_fit(st: PipelineState) -> None:
    cfg = st.config
    opts = FitOptions(restarts=cfg.model_restarts, seed=cfg.model_seed)
    for variant in (MODEL_I, MODEL_III):
        des = _design(st, (2016, 2020), variant == MODEL_III)
        fit = fit_reml(ModelSpec(variant), des, opts, fingerprint=st.input_fingerprint)
        if not fit.converged:
            warnings.warn(f"{variant} optimizer stopped at the evaluation cap", stacklevel=2)
        st.fits[variant] = fit
        if variant == MODEL_I:
            st.design_i = des


def stage_predict(st: PipelineState) -> None:
    polls = st.polls[2024]
    st.predictions = {
        SAE_I: predict_from_fit(st.fits[MODEL_I], polls),
        SAE_III: predict_from_fit(st.fits[MODEL_III], polls),
        POP: predict_pop(polls),
    }
    if not st.predictions[SAE_I]:
        warnings.warn("no state has 2024 polls for both candidates; prediction tables are empty", stacklevel=2)


def stage_tally(st: PipelineState) -> None:
    proxies = st.outcomes[2020]
    for method, preds in st.predictions.items():
        st.tallies[method] = ec_tally(preds, st.meta, proxies)


def stage_bootstrap(st: PipelineState) -> None:
    if not st.sae_i:
        return
    cfg = st.config
    bc = BootstrapConfig(B=cfg.boot_B, seed=cfg.boot_seed, refit_restarts=cfg.boot_refit_restarts)
    res = run_bootstrap(st.fits[MODEL_I], st.design_i, st.polls[2024], bc, st.outcome_signs())
    st.boot = {r.state: r for r in res}


def _conformal_inputs(st: PipelineState):
    cfg = st.config
    cc = ConformalConfig(cfg.train_year, cfg.calib_year, cfg.evaluate_at, cfg.branch)
    key = f"conformal_train_{cfg.train_year}"
    if key not in st.fits:
        des = _design(st, (cfg.train_year,), False)
        st.fits[key] = fit_reml(ModelSpec(MODEL_I), des,
                                FitOptions(restarts=cfg.model_restarts, seed=cfg.model_seed),
                                fingerprint=st.input_fingerprint)
    fit = st.fits[key]
    calib = st.polls[cfg.calib_year]
    d_hat = calibration_predictions(fit, calib)
    signs = st.outcome_signs()
    targets = {s: (p.d_hat, signs[s]) for s, p in st.sae_i.items()}
    return cc, fit, calib, d_hat, targets


def stage_conformal(st: PipelineState) -> None:
    if not st.sae_i:
        return
    cc, fit, calib, d_hat, targets = _conformal_inputs(st)
    scores = build_calibration_scores(fit, calib, st.leanings, d_hat=d_hat)
    st.conformal = {r.state: r for r in run_conformal(scores, targets, st.leanings, cc)}


def stage_sensitivity(st: PipelineState) -> None:
    if not st.sae_i:
        return
    cfg = st.config
    cc, _, calib, d_hat, targets = _conformal_inputs(st)
    bounds = estimate_bias_bounds(calib, st.outcomes[cfg.calib_year], st.leanings)
    sc = SensitivityConfig(T=cfg.sens_T, seed=cfg.sens_seed, quantiles=cfg.quantiles)
    st.sensitivity = {r.state: r for r in run_sensitivity(sc, calib, d_hat, st.leanings, targets, bounds, cc)}


# Output formatting

def f4(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{x:.4f}"


def f3(x) -> str:
    return "" if x is None else f"{x:.3f}"


def pct1(x: float) -> str:
    return f"{100.0 * x:.1f}"


def _write_csv(st: PipelineState, name: str, header, rows) -> Path:
    path = Path(st.config.output_dir) / name
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    if not rows:
        warnings.warn(f"{name} has no rows", stacklevel=2)
    st.written.append(name)
    return path


def _write_text(st: PipelineState, name: str, text: str) -> None:
    path = Path(st.config.output_dir) / name
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    st.written.append(name)


def _actual(st: PipelineState) -> dict[str, ElectionOutcome]:
    return {o.state: o for o in st.outcomes.get(2024, [])} if st.config.mode == RETROSPECTIVE else {}


def emit_fit(st: PipelineState) -> None:
    names = {MODEL_I: "fit_model_i.json", MODEL_III: "fit_model_iii.json"}
    for variant, name in names.items():
        _write_text(st, name, st.fits[variant].to_json() + "\n")
    rows = []
    for p in PARAM_NAMES[MODEL_III]:
        vals = [st.fits[v].params().get(p) for v in (MODEL_I, MODEL_III)]
        rows.append([p] + [f3(v) for v in vals])
    rows.append(["reml_loglik"] + [f3(st.fits[v].reml_loglik) for v in (MODEL_I, MODEL_III)])
    _write_csv(st, "reml_estimates.csv", ("parameter", MODEL_I, MODEL_III), rows)


def emit_predict(st: PipelineState) -> None:
    rows, scatter = [], []
    actual = _actual(st)
    for method in (SAE_I, SAE_III, POP):
        for p in st.predictions[method]:
            rows.append([p.state, method, pct1(p.pi_hat_dem), pct1(p.pi_hat_rep), f4(p.d_hat), p.winner])
            if p.state in actual:
                o = actual[p.state]
                scatter.append([p.state, f4(math.log(o.dem_share / o.rep_share)), f4(p.d_hat), method])
    _write_csv(st, "predictions.csv", PREDICTIONS_HEADER, rows)
    if st.config.mode == RETROSPECTIVE:
        _write_csv(st, "scatter.csv", SCATTER_HEADER, scatter)


def _summary_tally(st: PipelineState) -> NationalTally:
    return st.tallies[SAE_III if st.config.model_variant == MODEL_III else SAE_I]


def summary_line(st: PipelineState) -> str:
    """``DEM x / REP y`` for the configured model variant."""
    return _summary_tally(st).summary()


def emit_tally(st: PipelineState) -> None:
    rows = [[m, t.ec_dem, t.ec_rep, t.winner] for m, t in st.tallies.items()]
    _write_csv(st, "ec_tally.csv", TALLY_HEADER, rows)
    _write_text(st, "summary.txt", _summary_tally(st).summary() + "\n")


def emit_bootstrap(st: PipelineState) -> None:
    cfg = st.config
    rows = [[s, f4(r.d_hat_star), f4(r.se_boot), f4(r.poip), cfg.boot_B, cfg.boot_seed]
            for s, r in sorted(st.boot.items())]
    _write_csv(st, "poip_boot.csv", BOOT_HEADER, rows)


def _odds(st: PipelineState, state: str):
    actual = _actual(st)
    real = None
    if state in actual:
        real = actual[state].dem_share / actual[state].rep_share
    sae = st.sae_i[state].odds_ratio
    pop = {p.state: p for p in st.predictions[POP]}[state].odds_ratio
    return real, sae, pop


def emit_conformal(st: PipelineState) -> None:
    rows = []
    for s, r in sorted(st.conformal.items()):
        real, sae, pop = _odds(st, s)
        b = st.boot.get(s)
        rows.append([s, f4(real), f4(sae), f4(pop), f4(b.poip if b else None), f4(r.poip)])
    _write_csv(st, "poip_conformal.csv", CONF_HEADER, rows)


def emit_sensitivity(st: PipelineState) -> None:
    cfg = st.config
    rows, arrow = [], []
    for s, r in sorted(st.sensitivity.items()):
        rows.append([s, f4(r.base_poip), f4(r.median_poip), f4(r.interval[0]), f4(r.interval[1]),
                     cfg.sens_T, cfg.sens_seed])
        real, _, _ = _odds(st, s)
        arrow.append([s, f4(real), f4(r.base_poip), f4(r.median_poip), st.leanings[s]])
    _write_csv(st, "sensitivity.csv", SENS_HEADER, rows)
    _write_csv(st, "arrow.csv", ARROW_HEADER, arrow)


def emit_report(st: PipelineState) -> None:
    """The combined per-state PoIP table."""
    rows = []
    for s in sorted(st.sae_i):
        real, sae, pop = _odds(st, s)
        b, c, v = st.boot.get(s), st.conformal.get(s), st.sensitivity.get(s)
        rows.append([s, f4(real), f4(sae), f4(pop), f4(b.poip if b else None), f4(c.poip if c else None),
                     f4(v.interval[0] if v else None), f4(v.interval[1] if v else None)])
    _write_csv(st, "poip.csv", POIP_HEADER, rows)


def emit_report_tables(st: PipelineState) -> None:
    """Write every table whose stage has completed."""
    emitters = {"fit": emit_fit, "predict": emit_predict, "tally": emit_tally, "bootstrap": emit_bootstrap,
                "conformal": emit_conformal, "sensitivity": emit_sensitivity, "report": emit_report}
    for stage in st.completed:
        if stage in emitters:
            emitters[stage](st)


STAGE_FUNCS = {
    "ingest": stage_ingest, "fit": stage_fit, "predict": stage_predict, "tally": stage_tally,
    "bootstrap": stage_bootstrap, "conformal": stage_conformal, "sensitivity": stage_sensitivity,
    "report": lambda st: None,
}

# Each CLI target and the stages it needs, in order.
TARGETS = {
    "fit": ("ingest", "fit"),
    "predict": ("ingest", "fit", "predict", "tally"),
    "poip-boot": ("ingest", "fit", "predict", "bootstrap"),
    "poip-conformal": ("ingest", "fit", "predict", "conformal"),
    "sensitivity": ("ingest", "fit", "predict", "conformal", "sensitivity"),
    "run": STAGES,
}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(st: PipelineState, status: str, error: str | None = None) -> None:
    out = Path(st.config.output_dir)
    files = {name: _sha256(out / name) for name in sorted(set(st.written))}
    doc = {
        "status": status,
        "stages": list(st.completed),
        "input_fingerprint": st.input_fingerprint,
        "config_hash": st.config.config_hash(),
        "files": files,
    }
    if st.tallies:
        doc["summary"] = _summary_tally(st).summary()
    if error:
        doc["error"] = error
    (out / MANIFEST).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run_pipeline(config: RunConfig, target: str = "run") -> PipelineState:
    """Run the stages needed for ``target`` and write their outputs.

    On failure the output directory gets an ``INCOMPLETE`` marker naming the
    stage, the manifest is marked incomplete, and a :class:`StageError` is
    raised. Missing input files are reported before anything is computed.
    """
    config.validate_files()
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / INCOMPLETE
    if marker.exists():
        marker.unlink()
    st = PipelineState(config)
    stage = "ingest"
    try:
        for stage in TARGETS[target]:
            log.info("stage %s", stage)
            STAGE_FUNCS[stage](st)
            st.completed.append(stage)
        stage = "emit"
        emit_report_tables(st)
    except Exception as exc:
        err = StageError(stage, exc)
        marker.write_text(f"{err}\n", encoding="utf-8")
        try:
            emit_report_tables(st)
        except Exception:
            pass
        _write_manifest(st, "incomplete", str(err))
        raise err from exc
    _write_manifest(st, "complete")
    return st


def assemble_report(out_dir) -> Path:
    """Rebuild ``poip.csv`` from stage tables already present in ``out_dir``."""
    out = Path(out_dir)

    def read(name):
        path = out / name
        if not path.exists():
            raise FileNotFoundError(f"missing stage output {path}; run the corresponding subcommand first")
        with open(path, newline="", encoding="utf-8") as fh:
            return {row["state"]: row for row in csv.DictReader(fh)}

    conf, sens = read("poip_conformal.csv"), read("sensitivity.csv")
    rows = []
    for s in sorted(conf):
        c, v = conf[s], sens.get(s, {})
        rows.append([s, c["realrate_or"], c["sae_or"], c["pop_or"], c["poip_boot"], c["poip_conformal"],
                     v.get("q05", ""), v.get("q95", "")])
    path = out / "poip.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POIP_HEADER)
        w.writerows(rows)
    return path


def fetch_snapshot(url: str, dest, timeout: float = 30.0) -> dict:
    """Download ``url`` to ``dest`` and append a checksum record next to it.

    The record goes to ``<dest>.sha256.json``; fetching is never part of a run.
    """
    dest = Path(dest)
    if not dest.parent.exists():
        raise FileNotFoundError(f"destination directory does not exist: {dest.parent}")
    try:
        with urllib.request.urlopen(url, timeout=timeout) as resp:
            body = resp.read()
    except (OSError, ValueError) as exc:
        raise ConnectionError(f"could not fetch {url}: {exc}") from exc
    dest.write_bytes(body)
    rec = {"url": url, "sha256": hashlib.sha256(body).hexdigest(), "bytes": len(body),
           "fetched_at": datetime.now(timezone.utc).isoformat(timespec="seconds")}
    Path(str(dest) + ".sha256.json").write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return rec


def fixture_config_path() -> Path:
    from importlib import resources

    return Path(str(resources.files("sae_election") / "resources" / "fixture" / "config.ini"))


def load_fit(path) -> ModelFit:
    return ModelFit.from_json(Path(path).read_text(encoding="utf-8"))


__all__ = [
    "RunConfig", "PipelineState", "StageError", "run_pipeline", "emit_report_tables", "assemble_report",
    "fetch_snapshot", "fixture_config_path", "load_fit", "summary_line", "STAGES", "TARGETS",
]
