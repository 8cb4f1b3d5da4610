import csv
import json
import shutil
from dataclasses import replace
from pathlib import Path

import pytest

from sae_election.cli import main
from sae_election.lmm import MODEL_I
from sae_election.pipeline import (INCOMPLETE, MANIFEST, POIP_HEADER, RunConfig, StageError, assemble_report,
                                   fetch_snapshot, fixture_config_path, load_fit, run_pipeline)

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="module")
def fixture_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["run", "--config", str(fixture_config_path()), "--out", str(out)]) == 0
    return out


@pytest.fixture
def fixture_copy(tmp_path):
    src = fixture_config_path().parent
    dst = tmp_path / "fx"
    shutil.copytree(src, dst)
    return dst


def _rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_fixture_run_matches_golden_bundle(fixture_run):
    golden = sorted(p.name for p in GOLDEN.iterdir())
    assert sorted(p.name for p in fixture_run.iterdir()) == golden
    for name in golden:
        assert (fixture_run / name).read_bytes() == (GOLDEN / name).read_bytes(), name


def test_manifest_records_every_output(fixture_run):
    doc = json.loads((fixture_run / MANIFEST).read_text())
    assert doc["status"] == "complete"
    assert doc["stages"] == ["ingest", "fit", "predict", "tally", "bootstrap", "conformal", "sensitivity", "report"]
    assert len(doc["input_fingerprint"]) == 64 and len(doc["config_hash"]) == 64
    outputs = {p.name for p in fixture_run.iterdir()} - {MANIFEST}
    assert set(doc["files"]) == outputs
    assert doc["summary"] == (fixture_run / "summary.txt").read_text().strip()


def test_report_tables_layout(fixture_run):
    poip = _rows(fixture_run / "poip.csv")
    assert tuple(poip[0]) == POIP_HEADER
    preds = {r["state"] for r in _rows(fixture_run / "predictions.csv")}
    assert {r["state"] for r in poip} == preds
    for r in poip:
        for k in POIP_HEADER[1:]:
            assert len(r[k].split(".")[1]) == 4
        assert float(r["sens_lo"]) <= float(r["sens_hi"])
    reml = _rows(fixture_run / "reml_estimates.csv")
    assert reml[0]["parameter"] == "beta0"
    assert all(len(r[MODEL_I].split(".")[1]) == 3 for r in reml if r[MODEL_I])
    fit = load_fit(fixture_run / "fit_model_i.json")
    assert fit.variant == MODEL_I and fit.converged


def test_summary_line_is_printed(fixture_copy, capsys):
    assert main(["predict", "--config", str(fixture_copy / "config.ini")]) == 0
    out = capsys.readouterr().out
    first = out.splitlines()[0]
    assert first.startswith("DEM ") and " / REP " in first
    dem, rep = int(first.split()[1]), int(first.split()[-1])
    assert dem + rep == 538


def test_missing_file_is_named_before_any_work(fixture_copy, capsys):
    (fixture_copy / "polls_2020.csv").unlink()
    cfg = RunConfig.from_file(fixture_copy / "config.ini")
    with pytest.raises(FileNotFoundError, match="polls_2020.csv"):
        run_pipeline(cfg)
    assert not cfg.output_dir.exists()
    assert main(["run", "--config", str(fixture_copy / "config.ini")]) == 1
    assert "polls_2020.csv" in capsys.readouterr().err


def test_empty_predictions_give_header_only_files(fixture_copy):
    p = fixture_copy / "polls_2024.csv"
    p.write_text(p.read_text().splitlines()[0] + "\n")
    with pytest.warns(UserWarning, match="no rows"):
        assert main(["run", "--config", str(fixture_copy / "config.ini")]) == 0
    out = fixture_copy / "out"
    for name in ("predictions.csv", "poip.csv", "poip_boot.csv", "sensitivity.csv"):
        assert len((out / name).read_text().splitlines()) == 1


def test_stage_failure_marks_output_incomplete(fixture_copy, capsys):
    # an outcome row whose shares add past 100% fails during ingest
    p = fixture_copy / "outcomes_2016.csv"
    lines = p.read_text().splitlines()
    p.write_text("\n".join(lines[:1] + [lines[1].rsplit(",", 2)[0] + ",80,40"] + lines[2:]) + "\n")
    assert main(["run", "--config", str(fixture_copy / "config.ini")]) == 1
    out = fixture_copy / "out"
    marker = (out / INCOMPLETE).read_text()
    assert "stage 'ingest'" in marker
    doc = json.loads((out / MANIFEST).read_text())
    assert doc["status"] == "incomplete" and "ingest" in doc["error"]
    assert "error:" in capsys.readouterr().err
    with pytest.raises(StageError) as info:
        run_pipeline(RunConfig.from_file(fixture_copy / "config.ini"))
    assert info.value.stage == "ingest"


def test_successful_rerun_clears_marker(fixture_copy):
    out = fixture_copy / "out"
    out.mkdir()
    (out / INCOMPLETE).write_text("stale\n")
    assert main(["fit", "--config", str(fixture_copy / "config.ini")]) == 0
    assert not (out / INCOMPLETE).exists()
    assert json.loads((out / MANIFEST).read_text())["stages"] == ["ingest", "fit"]


def test_seed_override_changes_stochastic_outputs_only(fixture_copy, fixture_run):
    cfg = fixture_copy / "config.ini"
    assert main(["run", "--config", str(cfg), "--out", str(fixture_copy / "a"), "--seed-override", "99"]) == 0
    assert main(["run", "--config", str(cfg), "--out", str(fixture_copy / "b"), "--seed-override", "99"]) == 0
    a, b = fixture_copy / "a", fixture_copy / "b"
    for name in ("poip_boot.csv", "sensitivity.csv", "manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert (a / "poip_boot.csv").read_bytes() != (fixture_run / "poip_boot.csv").read_bytes()
    assert (a / "predictions.csv").read_bytes() == (fixture_run / "predictions.csv").read_bytes()
    boot = _rows(a / "poip_boot.csv")
    assert {r["seed"] for r in boot} == {"99"}
    assert {r["seed"] for r in _rows(a / "sensitivity.csv")} == {"100"}
    ca = json.loads((a / MANIFEST).read_text())["config_hash"]
    assert ca != json.loads((fixture_run / MANIFEST).read_text())["config_hash"]


def test_report_reassembles_from_stage_tables(fixture_run, tmp_path):
    for name in ("poip_conformal.csv", "sensitivity.csv"):
        shutil.copy(fixture_run / name, tmp_path / name)
    path = assemble_report(tmp_path)
    got = _rows(path)
    want = _rows(fixture_run / "poip.csv")
    assert [r["state"] for r in got] == [r["state"] for r in want]
    for g, w in zip(got, want):
        assert (g["poip_conf"], g["sens_lo"], g["sens_hi"]) == (w["poip_conf"], w["sens_lo"], w["sens_hi"])
    assert main(["report", "--out", str(tmp_path)]) == 0
    with pytest.raises(FileNotFoundError, match="sensitivity.csv"):
        (tmp_path / "sensitivity.csv").unlink()
        assemble_report(tmp_path)


def test_config_validation(fixture_copy):
    cfg = RunConfig.from_file(fixture_copy / "config.ini")
    with pytest.raises(ValueError):
        replace(cfg, mode="sometimes")
    with pytest.raises(ValueError):
        replace(cfg, model_variant="ModelII")
    with pytest.raises(ValueError, match="outcomes_2024"):
        replace(cfg, outcomes={y: p for y, p in cfg.outcomes.items() if y != 2024})
    prosp = replace(cfg, mode="prospective", outcomes={y: p for y, p in cfg.outcomes.items() if y != 2024})
    assert prosp.mode == "prospective"
    with pytest.raises(FileNotFoundError):
        RunConfig.from_file(fixture_copy / "nope.ini")


def test_prospective_run_without_current_outcomes(fixture_copy):
    cfg = RunConfig.from_file(fixture_copy / "config.ini")
    cfg = replace(cfg, mode="prospective", outcomes={y: p for y, p in cfg.outcomes.items() if y != 2024},
                  boot_B=20, sens_T=10, output_dir=fixture_copy / "p")
    st = run_pipeline(cfg)
    assert not (fixture_copy / "p" / "scatter.csv").exists()
    for r in _rows(fixture_copy / "p" / "poip.csv"):
        assert r["realrate_or"] == ""
    assert all(0 < c.poip <= 1 for c in st.conformal.values())


def test_fetch_file_url_and_checksum(tmp_path):
    src = tmp_path / "src.csv"
    src.write_text("state,dem_pct,rep_pct\nWI,48.8,49.6\n")
    a = fetch_snapshot(src.as_uri(), tmp_path / "a.csv")
    b = fetch_snapshot(src.as_uri(), tmp_path / "b.csv")
    assert a["sha256"] == b["sha256"] and a["bytes"] == src.stat().st_size
    assert (tmp_path / "a.csv").read_bytes() == src.read_bytes()
    rec = json.loads((tmp_path / "a.csv.sha256.json").read_text())
    assert rec["sha256"] == a["sha256"] and "fetched_at" in rec


def test_fetch_unreachable_host(tmp_path, capsys):
    with pytest.raises(ConnectionError):
        fetch_snapshot("http://127.0.0.1:9/none.csv", tmp_path / "x.csv", timeout=2)
    assert main(["fetch", "http://127.0.0.1:9/none.csv", str(tmp_path / "x.csv")]) == 1
    assert not (tmp_path / "x.csv").exists()
    with pytest.raises(FileNotFoundError):
        fetch_snapshot("http://127.0.0.1:9/none.csv", tmp_path / "missing" / "x.csv")
