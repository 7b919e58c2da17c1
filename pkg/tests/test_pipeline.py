"""End-to-end pipeline and command line behaviour on a small synthetic panel."""
import json
import os
import shutil

import pytest
import yaml

from synth import write_block_csv
from tailcluster import cli, config, copula, pipeline
from tailcluster.errors import DependencyError, FitError
from tailcluster.pipeline import FAILED_MARKER, STAGE_FILE, STAGES, Pipeline

SIZES = (3, 3)
BASE_CFG = {
    "prices": {"path": "prices.csv"},
    "ensemble": {"families": ["clayton", "gaussian"], "quantiles": [0.1, 0.2], "k_min": 2, "k_max": 3},
    "portfolio": {"alpha": 0.2, "strategies": ["ew", "gmv", "min_cvar", "ensemble", "clayton_copula_average"]},
    "output": "out",
}


def _write_config(root, **overrides):
    raw = json.loads(json.dumps(BASE_CFG))
    raw["split"] = {"test_start": (root / "test_start.txt").read_text()}
    for section, values in overrides.items():
        if isinstance(values, dict):
            raw.setdefault(section, {}).update(values)
        else:
            raw[section] = values
    path = root / "cfg.yaml"
    path.write_text(yaml.safe_dump(raw))
    return str(path)


def _snapshot(root):
    """{relative path: bytes} for every file under ``root``."""
    out = {}
    for dirpath, _, files in os.walk(root):
        for name in files:
            full = os.path.join(dirpath, name)
            with open(full, "rb") as fh:
                out[os.path.relpath(full, root)] = fh.read()
    return out


@pytest.fixture(autouse=True)
def _single_worker(monkeypatch):
    monkeypatch.delenv(config.WORKERS_ENV, raising=False)


@pytest.fixture(scope="module")
def finished(tmp_path_factory):
    """Workspace with a completed run; tests copy it before mutating."""
    root = tmp_path_factory.mktemp("base")
    panel = write_block_csv(root / "prices.csv", SIZES, 4.0, 500, seed=5)
    (root / "test_start.txt").write_text(panel.dates[401].isoformat())
    cfg_path = _write_config(root)
    os.environ.pop(config.WORKERS_ENV, None)
    assert cli.main(["run", cfg_path]) == 0
    return root


@pytest.fixture
def workspace(finished, tmp_path):
    dest = tmp_path / "ws"
    shutil.copytree(finished, dest)
    return dest


def _pipe(root, **overrides):
    return Pipeline(config.load(_write_config(root, **overrides)))


def test_full_run_artifacts(finished):
    out = finished / "out"
    for name in STAGES:
        assert (out / name / STAGE_FILE).is_file()
    assert not (out / FAILED_MARKER).exists()
    manifest = json.loads((out / "ensemble" / "manifest.json").read_text())
    assert manifest["ensemble_size"] == len(manifest["partitions"]) == 2 * 2 * 2
    assert len(list((out / "ensemble" / "dissimilarity").glob("*.csv"))) == 4
    summary = json.loads((out / "consensus" / "summary.json").read_text())
    assert summary["k"] == 2 and summary["ari_between_linkages"] == 1.0
    reports = json.loads((out / "portfolio" / "reports.json").read_text())
    assert [r["strategy"] for r in reports] == BASE_CFG["portfolio"]["strategies"]
    curve = (out / "portfolio" / "curves" / "ew.csv").read_text().splitlines()
    assert curve[0] == "date,value" and curve[1].endswith(",100.0")
    assert len(curve) == 1 + 1 + 100


def test_rerun_is_fully_cached(workspace):
    pipe = _pipe(workspace)
    assert all(pipe.status(name)[0] for name in STAGES)
    before = _snapshot(workspace / "out")
    assert cli.main(["run", str(workspace / "cfg.yaml")]) == 0
    assert _snapshot(workspace / "out") == before


def test_cached_run_equals_cold_run(workspace, finished):
    assert cli.main(["run", str(workspace / "cfg.yaml"), "--force"]) == 0
    assert _snapshot(workspace / "out") == _snapshot(finished / "out")


def test_stage_by_stage_equals_full_run(workspace, finished):
    shutil.rmtree(workspace / "out")
    cfg_path = str(workspace / "cfg.yaml")
    for name in STAGES:
        assert cli.main(["stage", name, cfg_path]) == 0
    assert _snapshot(workspace / "out") == _snapshot(finished / "out")


def test_alpha_change_reruns_only_portfolio(workspace, monkeypatch):
    def boom(*args, **kwargs):
        raise AssertionError("upstream stage was recomputed")

    monkeypatch.setattr(pipeline.copula, "fit_pairs", boom)
    monkeypatch.setattr(pipeline.marginals, "fit_marginals", boom)
    before = _snapshot(workspace / "out")
    pipe = _pipe(workspace, portfolio={"alpha": 0.1})
    assert [name for name in STAGES if not pipe.status(name)[0]] == ["portfolio"]
    pipe.run()
    after = _snapshot(workspace / "out")
    changed = {rel for rel in after if after[rel] != before.get(rel)}
    assert changed and all(rel.startswith("portfolio") for rel in changed)
    reports = json.loads((workspace / "out" / "portfolio" / "reports.json").read_text())
    assert all(r["alpha"] == 0.1 for r in reports)


def test_consensus_cut_change_does_not_refit(workspace, monkeypatch):
    def boom(*args, **kwargs):
        raise AssertionError("copulas were refit")

    monkeypatch.setattr(pipeline.copula, "fit_pairs", boom)
    cfg_path = _write_config(workspace, consensus={"cut": "fixed_k", "k": 3})
    assert cli.main(["stage", "consensus", cfg_path]) == 0
    summary = json.loads((workspace / "out" / "consensus" / "summary.json").read_text())
    assert summary["k"] == 3 and summary["cut"] == "fixed_k"
    pipe = Pipeline(config.load(cfg_path))
    assert pipe.status("copulas")[0] and pipe.status("consensus")[0]
    assert not pipe.status("portfolio")[0]


def test_one_family_ensemble_manifest(workspace):
    pipe = _pipe(workspace, ensemble={"families": ["clayton"], "quantiles": [0.1], "linkages": ["average"]},
                 portfolio={"strategies": ["ew", "ensemble"]})
    pipe.run()
    manifest = json.loads((workspace / "out" / "ensemble" / "manifest.json").read_text())
    assert manifest["ensemble_size"] == 1 and len(manifest["partitions"]) == 1
    summary = json.loads((workspace / "out" / "consensus" / "summary.json").read_text())
    assert summary["ensemble_size"] == 1


def test_corrupt_artifact_is_a_dependency_error(workspace, capsys):
    target = workspace / "out" / "marginals" / "pseudo_obs.csv"
    target.write_text(target.read_text().replace("0.", "0.9", 1))
    assert cli.main(["stage", "ensemble", str(workspace / "cfg.yaml")]) == 4
    err = capsys.readouterr().err
    assert "DependencyError" in err and "rerun stage 'marginals'" in err
    with pytest.raises(DependencyError) as info:
        _pipe(workspace).run_stage("portfolio")
    assert info.value.stage == "marginals"


def test_missing_upstream_names_first_stage(workspace, capsys):
    shutil.rmtree(workspace / "out" / "copulas")
    assert cli.main(["stage", "consensus", str(workspace / "cfg.yaml")]) == 4
    assert "rerun stage 'copulas'" in capsys.readouterr().err


def test_full_run_repairs_damage(workspace, finished):
    (workspace / "out" / "ensemble" / "manifest.json").write_text("{}")
    assert cli.main(["run", str(workspace / "cfg.yaml")]) == 0
    assert _snapshot(workspace / "out") == _snapshot(finished / "out")


def test_data_change_invalidates_everything(workspace):
    with open(workspace / "prices.csv", "a", encoding="utf-8") as fh:
        fh.write("")
    pipe = _pipe(workspace)
    assert pipe.status("ingest")[0]
    write_block_csv(workspace / "prices.csv", SIZES, 4.0, 500, seed=6)
    pipe = _pipe(workspace)
    assert not any(pipe.status(name)[0] for name in STAGES)


def test_failed_stage_leaves_marker(workspace, monkeypatch, capsys):
    shutil.rmtree(workspace / "out")

    def failing(*args, **kwargs):
        raise FitError("synthetic divergence")

    monkeypatch.setattr(pipeline.marginals, "fit_marginals", failing)
    assert cli.main(["run", str(workspace / "cfg.yaml")]) == 3
    assert "[marginals] FitError" in capsys.readouterr().err
    marker = json.loads((workspace / "out" / FAILED_MARKER).read_text())
    assert marker == {"stage": "marginals", "error": "FitError", "message": "synthetic divergence"}
    assert (workspace / "out" / "ingest" / STAGE_FILE).is_file()
    assert not (workspace / "out" / "marginals" / STAGE_FILE).exists()

    monkeypatch.undo()
    monkeypatch.delenv(config.WORKERS_ENV, raising=False)
    assert cli.main(["run", str(workspace / "cfg.yaml")]) == 0
    assert not (workspace / "out" / FAILED_MARKER).exists()


def test_unexpected_exception_maps_to_numeric_exit(workspace, monkeypatch, capsys):
    def broken(*args, **kwargs):
        raise ZeroDivisionError("float division by zero")

    monkeypatch.setattr(pipeline.portfolio, "backtest", broken)
    assert cli.main(["stage", "portfolio", str(workspace / "cfg.yaml")]) == 3
    assert "[portfolio] ZeroDivisionError" in capsys.readouterr().err
    assert json.loads((workspace / "out" / FAILED_MARKER).read_text())["stage"] == "portfolio"


def test_missing_data_exits_2_without_artifacts(tmp_path, capsys):
    (tmp_path / "test_start.txt").write_text("2016-01-04")
    cfg_path = _write_config(tmp_path)
    assert cli.main(["run", cfg_path]) == 2
    assert "price file not found" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()
    assert cli.main(["validate", cfg_path]) == 2


def test_malformed_data_exits_2(tmp_path):
    (tmp_path / "test_start.txt").write_text("2016-01-04")
    (tmp_path / "prices.csv").write_text("date,A,B\n2016-01-01,1.0,abc\n")
    assert cli.main(["run", _write_config(tmp_path)]) == 2


def test_config_errors_exit_1(tmp_path, capsys):
    (tmp_path / "test_start.txt").write_text("2016-01-04")
    assert cli.main(["run", _write_config(tmp_path, portfolio={"alpha": 2.0})]) == 1
    assert "alpha" in capsys.readouterr().err
    assert cli.main(["run", str(tmp_path / "nope.yaml")]) == 1
    assert cli.main(["frobnicate"]) == 1
    assert cli.main(["stage", "clustering", _write_config(tmp_path)]) == 1


def test_validate_command(finished, capsys):
    assert cli.main(["validate", str(finished / "cfg.yaml")]) == 0
    out = capsys.readouterr().out
    assert "6 assets, 400 train and 100 test returns" in out
    assert "ensemble size 8" in out


def test_report_command(finished, capsys):
    assert cli.main(["report", str(finished / "out")]) == 0
    out = capsys.readouterr().out
    assert "consensus: 8 partitions" in out
    assert "cluster 0: A00 A01 A02" in out and "cluster 1: A03 A04 A05" in out
    assert "clayton_copula_average" in out
    assert cli.main(["report", str(finished / "out"), "--json"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["clusters"] == [["A00", "A01", "A02"], ["A03", "A04", "A05"]]
    assert all(summary["stages"].values())
    assert cli.main(["report", str(finished / "missing")]) == 2


def test_report_shows_failure(workspace, capsys):
    pipeline.write_json(workspace / "out" / FAILED_MARKER,
                        {"stage": "copulas", "error": "FitError", "message": "x"})
    assert cli.main(["report", str(workspace / "out")]) == 0
    assert "FAILED at stage copulas" in capsys.readouterr().out


def test_dropped_competitor_family_is_skipped(workspace, monkeypatch):
    real = copula.fit_pairs

    def flaky(pseudo, family, executor=None, pairs=None):
        if family == "bb1":
            raise FitError("synthetic failure")
        return real(pseudo, family, executor, pairs)

    monkeypatch.setattr(pipeline.copula, "fit_pairs", flaky)
    pipe = _pipe(workspace, portfolio={"strategies": ["ew", "ensemble", "bb1_copula_average"]})
    pipe.run()
    dropped = json.loads((workspace / "out" / "copulas" / "dropped.json").read_text())
    assert list(dropped) == ["bb1"]
    reports = json.loads((workspace / "out" / "portfolio" / "reports.json").read_text())
    assert [r["strategy"] for r in reports] == ["ew", "ensemble"]
