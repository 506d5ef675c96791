import hashlib
import json
import xml.etree.ElementTree as ET
from fractions import Fraction
from pathlib import Path

import pytest

from nodebias import cli, pipeline
from nodebias.config import config_from_dict, load_config
from nodebias.errors import ConfigError, DataError
from nodebias.perturb import parse_dtmc
from nodebias.report import read_csv

SMALL = {
    "dataset": {"synthetic": {"n_features": 3, "class_gap": 4.0, "seed": 0},
                "test_head_count": 6, "test_tail_count": 5},
    "feature_select_k": 3,
    "seeds": [0, 1],
    "train": {"epochs": 300},
    "sweep": {"step": 0.1, "max_level": 3},
}


def write_config(tmp_path, doc=SMALL, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def tree_hashes(root: Path):
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file() and p.name != "timings.json"}


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg_path = write_config(root)
    out = root / "out"
    assert cli.main(["run", "--config", str(cfg_path), "--out", str(out)]) == 0
    return cfg_path, out


# -- config -------------------------------------------------------------------------

def test_config_defaults_and_echo(tmp_path):
    cfg = load_config(write_config(tmp_path))
    assert cfg.regimes == ("full", "truncated")
    assert cfg.sweep.budget == 10**6
    echo = cfg.echo()
    assert "output_dir" not in echo and "seed" not in echo["train"]
    json.dumps(echo)


@pytest.mark.parametrize("doc", [
    {},
    {"dataset": {}},
    {"dataset": {"csv": "a.csv", "synthetic": {}}},
    {"dataset": {"train_csv": "a.csv"}},
    {**SMALL, "regimes": []},
    {**SMALL, "regimes": ["half"]},
    {**SMALL, "bogus": 1},
    {**SMALL, "sweep": {"step": -1}},
    {**SMALL, "train": {"seed": 3}},
    {**SMALL, "seeds": [1, 1]},
])
def test_config_errors(doc):
    with pytest.raises(ConfigError):
        config_from_dict(doc)


def test_csv_paths_resolve_against_config_dir(tmp_path, fixtures_dir):
    (tmp_path / "data.csv").write_text((fixtures_dir / "tiny.csv").read_text())
    cfg = load_config(write_config(tmp_path, {"dataset": {"csv": "data.csv"}}))
    assert Path(cfg.dataset.csv) == tmp_path / "data.csv"


# -- prepare --------------------------------------------------------------------------

def test_prepare_synthetic_27_11(tmp_path):
    cfg = config_from_dict({"dataset": {"synthetic": {}}})
    info = pipeline.cmd_prepare(cfg, tmp_path)
    assert info["class_counts"]["train"] == [27, 11]
    truncated = read_csv(tmp_path / "train_truncated.csv")
    assert len(truncated) == 22
    for name in ("train.csv", "test.csv", "normalizer.json", "variance_table.csv", "manifest.json"):
        assert (tmp_path / name).exists()
    assert len(read_csv(tmp_path / "variance_table.csv")) == 2 * 5 * 2


def test_prepare_k_equals_n_is_identity(tmp_path):
    cfg = config_from_dict({"dataset": {"synthetic": {"n_features": 4}}, "feature_select_k": 4})
    info = pipeline.cmd_prepare(cfg, tmp_path)
    assert info["selected_features"] == ["f1", "f2", "f3", "f4"]


def test_prepare_k_too_large(tmp_path):
    cfg = config_from_dict({"dataset": {"synthetic": {"n_features": 3}}, "feature_select_k": 4})
    with pytest.raises(DataError):
        pipeline.cmd_prepare(cfg, tmp_path)


def test_prepare_rerun_identical(tmp_path):
    cfg = config_from_dict({"dataset": {"synthetic": {}}})
    pipeline.cmd_prepare(cfg, tmp_path / "a")
    first = tree_hashes(tmp_path / "a")
    pipeline.cmd_prepare(cfg, tmp_path / "a")
    pipeline.cmd_prepare(cfg, tmp_path / "b")
    assert tree_hashes(tmp_path / "a") == first == tree_hashes(tmp_path / "b")


def test_prepare_single_class_csv(tmp_path):
    (tmp_path / "d.csv").write_text("g1,type\n1,A\n2,A\n")
    cfg = write_config(tmp_path, {"dataset": {"csv": "d.csv"}})
    assert cli.main(["prepare", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


# -- train ------------------------------------------------------------------------------

def test_train_twenty_models(tmp_path):
    cfg = config_from_dict({"dataset": {"synthetic": {}}, "train": {"epochs": 50}})
    pipeline.cmd_prepare(cfg, tmp_path)
    assert pipeline.cmd_train(cfg, tmp_path) == []
    models = sorted((tmp_path / "models").rglob("seed_*.json"))
    assert len(models) == 20
    first = {p: p.read_bytes() for p in models}
    pipeline.cmd_train(cfg, tmp_path)
    assert {p: p.read_bytes() for p in models} == first
    with pytest.raises(ConfigError):
        pipeline.cmd_train(cfg, tmp_path, regimes=[])


def test_train_divergence_continues(tmp_path):
    cfg = config_from_dict({**SMALL, "train": {"learning_rate": 1e300, "epochs": 5}})
    pipeline.cmd_prepare(cfg, tmp_path)
    failures = pipeline.cmd_train(cfg, tmp_path)
    assert failures and all("epoch" in f for f in failures)
    path = write_config(tmp_path, {**SMALL, "train": {"learning_rate": 1e300, "epochs": 5}})
    assert cli.main(["train", "--config", str(path), "--out", str(tmp_path)]) == 3


def test_analyze_missing_models(tmp_path):
    cfg = config_from_dict(SMALL)
    pipeline.cmd_prepare(cfg, tmp_path)
    with pytest.raises(DataError, match="seed_0.json"):
        pipeline.cmd_analyze(cfg, tmp_path)


# -- analyze outputs -----------------------------------------------------------------------

def test_node_sensitivity_row_count(small_run):
    _, out = small_run
    rows = read_csv(out / "node_sensitivity.csv")
    assert len(rows) == 2 * 3 * 2 * 3 * 2  # regimes x nodes x polarities x levels x classes
    assert {r["status"] for r in rows} <= {"ok", "absent"}
    assert len(read_csv(out / "robustness_bias.csv")) == 2 * 3 * 2


def test_summary_probabilities_recomputable(small_run):
    _, out = small_run
    summary = json.loads((out / "summary.json").read_text())
    seeds = read_csv(out / "seed_counts.csv")
    for regime, doc in summary["regimes"].items():
        for point in doc["class_curve"]:
            for cls, prob in point["classes"].items():
                if prob is None:
                    continue
                per_net = {}
                for r in seeds:
                    if (r["regime"], r["target"], r["level"], r["class"]) == \
                            (regime, "all", str(point["level"]), cls):
                        per_net.setdefault(r["network_seed"], []).append(
                            Fraction(int(r["preserved"]), int(r["total"])))
                means = [sum(v, Fraction(0)) / len(v) for v in per_net.values()]
                expected = sum(means, Fraction(0)) / len(means)
                assert Fraction(*prob["ratio"]) == expected
                assert prob["probability"] == float(expected)


def test_manifest_and_timings(small_run):
    _, out = small_run
    manifest = json.loads((out / "manifest.json").read_text())
    for stage in ("prepare", "train", "analyze", "plot"):
        assert manifest[stage]["status"] == "complete"
    assert "dataset_fingerprint" in manifest and "validation" in manifest
    assert set(json.loads((out / "timings.json").read_text())) >= {"prepare", "train", "analyze"}
    assert not (out / pipeline.LOCK_NAME).exists()


def test_rerun_byte_identical(small_run, tmp_path):
    cfg_path, out = small_run
    again = tmp_path / "again"
    assert cli.main(["run", "--config", str(cfg_path), "--out", str(again)]) == 0
    assert tree_hashes(again) == tree_hashes(out)


def test_fingerprint_changes_with_data(small_run, tmp_path):
    _, out = small_run
    doc = json.loads(json.dumps(SMALL))
    doc["dataset"]["synthetic"]["seed"] = 1
    pipeline.cmd_prepare(config_from_dict(doc), tmp_path)
    a = json.loads((out / "manifest.json").read_text())["dataset_fingerprint"]
    b = json.loads((tmp_path / "manifest.json").read_text())["dataset_fingerprint"]
    assert a != b


# -- plot ---------------------------------------------------------------------------------

def test_plots_are_well_formed(small_run):
    _, out = small_run
    files = sorted((out / "plots").glob("*.svg"))
    assert [f.name for f in files] == ["class_robustness.svg", "node_sensitivity_negative.svg",
                                       "node_sensitivity_positive.svg"]
    ns = "{http://www.w3.org/2000/svg}"
    for f in files:
        root = ET.parse(f).getroot()
        assert root.tag == ns + "svg"
        assert root.findall(f".//{ns}polyline")


def test_plot_single_curve_linear_axis(tmp_path):
    from nodebias.report import CURVE_HEADER, write_csv
    rows = [["full", "all", "", "symmetric", t, t * 0.1, "a", p, "", "", 1, "ok"]
            for t, p in ((1, 1.0), (2, 0.5), (3, 0.0))]
    write_csv(tmp_path / "robustness_bias.csv", CURVE_HEADER, rows)
    (path,) = pipeline.cmd_plot(tmp_path)
    root = ET.parse(path).getroot()
    ns = "{http://www.w3.org/2000/svg}"
    (line,) = root.findall(f".//{ns}polyline")
    ys = [float(pt.split(",")[1]) for pt in line.get("points").split()]
    assert abs((ys[0] + ys[2]) / 2 - ys[1]) < 0.01  # p=0.5 halfway between p=1 and p=0
    grid = sorted(float(g.get("y1")) for g in root.findall(f".//{ns}line[@class='grid']"))
    assert grid[0] == pytest.approx(ys[0], abs=0.01) and grid[-1] == pytest.approx(ys[2], abs=0.01)


def test_plot_empty_dir(tmp_path):
    with pytest.raises(DataError):
        pipeline.cmd_plot(tmp_path)
    assert cli.main(["plot", "--out", str(tmp_path)]) == 2


# -- DTMC export --------------------------------------------------------------------------

def test_export_matches_analyze_cell(small_run):
    cfg_path, out = small_run
    seeds = read_csv(out / "seed_counts.csv")
    row = next(r for r in seeds if r["regime"] == "full" and r["target"] == "0"
               and r["polarity"] == "negative" and r["level"] == "2")
    args = ["export-dtmc", "--config", str(cfg_path), "--out", str(out), "--regime", "full",
            "--network-seed", row["network_seed"], "--seed-id", row["seed_id"], "--node", "0",
            "--level", "2", "--polarity", "negative"]
    assert cli.main(args) == 0
    (path,) = (out / "dtmc").glob(f"full_seed{row['network_seed']}_{row['seed_id']}_node0_*.prism")
    assert parse_dtmc(path) == Fraction(int(row["preserved"]), int(row["total"]))
    row = next(r for r in seeds if r["regime"] == "full" and r["target"] == "all" and r["level"] == "1")
    assert cli.main(args[:7] + ["--seed-id", row["seed_id"], "--network-seed", row["network_seed"],
                                 "--node", "all", "--level", "1", "--polarity", "symmetric"]) == 0
    (path,) = (out / "dtmc").glob(f"full_seed{row['network_seed']}_{row['seed_id']}_all_*.prism")
    assert parse_dtmc(path) == Fraction(int(row["preserved"]), int(row["total"]))


def test_export_bad_node(small_run):
    cfg_path, out = small_run
    base = ["export-dtmc", "--config", str(cfg_path), "--out", str(out), "--network-seed", "0",
            "--level", "1"]
    seed_id = read_csv(out / "seed_counts.csv")[0]["seed_id"]
    assert cli.main(base + ["--seed-id", seed_id, "--node", "7"]) == 2
    assert cli.main(base + ["--seed-id", seed_id, "--node", "x"]) == 1
    assert cli.main(base + ["--seed-id", "nope"]) == 2


# -- command line ---------------------------------------------------------------------------

def test_parse_seeds():
    assert cli.parse_seeds("0..9") == list(range(10))
    assert cli.parse_seeds("3,1,2") == [3, 1, 2]


def test_exit_codes(tmp_path, capsys):
    assert cli.main(["prepare", "--config", str(tmp_path / "missing.json")]) == 1
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        cli.main(["train", "--config", "x", "--seeds", "a..b"])
    assert exc.value.code == 1
    (tmp_path / "bad.json").write_text("{not json")
    assert cli.main(["prepare", "--config", str(tmp_path / "bad.json")]) == 1
    assert "config error" in capsys.readouterr().err


def test_lock_refuses_concurrent_runs(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    out.mkdir()
    (out / pipeline.LOCK_NAME).write_text("123")
    assert cli.main(["prepare", "--config", str(cfg), "--out", str(out)]) == 1
    assert not (out / "train.csv").exists()


def test_stagewise_cli(tmp_path):
    cfg = write_config(tmp_path)
    out = str(tmp_path / "out")
    assert cli.main(["prepare", "--config", str(cfg), "--out", out]) == 0
    assert cli.main(["train", "--config", str(cfg), "--out", out, "--seeds", "0..1",
                     "--regime", "full"]) == 0
    assert cli.main(["analyze", "--config", str(cfg), "--out", out, "--seeds", "0,1",
                     "--regime", "full"]) == 0
    rows = read_csv(Path(out) / "robustness_bias.csv")
    assert {r["regime"] for r in rows} == {"full"}
    assert cli.main(["plot", "--config", str(cfg), "--out", out]) == 0
