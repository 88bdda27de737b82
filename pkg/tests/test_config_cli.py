import csv
import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from augbpm import cli, config, gan, pipeline, probit
from augbpm.config import ExperimentConfig
from augbpm.probit import ConfigError, LuxScale

from conftest import EXP1_EXISTING, EXP1_TARGET, EXP2_EXISTING, EXP2_TARGET


def no_partials(root: Path) -> bool:
    return not any(p.name.endswith(".partial") or ".partial." in p.name for p in root.rglob("*"))


# -- configuration -----------------------------------------------------------------


@pytest.mark.parametrize("name", config.PRESETS)
def test_preset_round_trip(name):
    cfg = config.load_preset(name)
    assert config.loads(config.dumps(cfg)) == cfg


def test_presets_match_published_constants():
    e1, e2 = config.load_preset("experiment1"), config.load_preset("experiment2")
    assert e1.existing_bpm == EXP1_EXISTING and e1.target == EXP1_TARGET
    assert e2.existing_bpm == EXP2_EXISTING and e2.target == EXP2_TARGET
    assert e2.existing_bpm.lux_scale is LuxScale.RAW
    assert e1.existing_bpm.lux_scale is LuxScale.LOG10
    for cfg in (e1, e2):
        assert (cfg.gan.batch_size_m, cfg.gan.epochs_n, cfg.gan.learning_rate_alpha, cfg.gan.regularization_r) == (
            2000,
            200_000,
            1e-6,
            1e-6,
        )


def test_desk_scale_overrides():
    cfg = config.load_preset("experiment2").with_desk_scale()
    assert (cfg.gan.batch_size_m, cfg.gan.epochs_n, cfg.gan.learning_rate_alpha) == (256, 5000, 1e-3)
    assert cfg.gan.regularization_r == 1e-6


def test_stage_seeds_are_stable_and_distinct():
    cfg = config.load_preset("experiment2")
    assert cfg.stage_seed("train") == cfg.stage_seed("train")
    assert cfg.stage_seed("train") != cfg.stage_seed("synth-ive")
    assert cfg.stage_seed("train") != replace(cfg, seed=1).stage_seed("train")


@pytest.mark.parametrize(
    "patch",
    [
        lambda d: d.pop("target"),
        lambda d: d["gan"].update(batch_size_m=0),
        lambda d: d["gan"].update(momentum=0.9),
        lambda d: d["ive"].update(source="ftp"),
        lambda d: d["illuminance"].update(lower=800.0),
        lambda d: d["existing_bpm"].update(c=0.0),
    ],
)
def test_invalid_configs_rejected(patch):
    data = config.load_preset("experiment2").to_dict()
    patch(data)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(data)


def test_non_mapping_config():
    with pytest.raises(ConfigError):
        config.loads("- just\n- a list\n")


# -- CLI ------------------------------------------------------------------------------


def run_cli(*args) -> int:
    return cli.main(["-q", *map(str, args)])


def test_sample_bpm_command(tmp_path):
    assert run_cli("sample-bpm", "--preset", "experiment2", "--count", 1000, "--out", tmp_path) == 0
    path = tmp_path / pipeline.EXISTING_CSV
    rows = list(csv.DictReader(path.open()))
    assert len(rows) == 1000
    assert all(0 <= float(r["p_switch_on"]) <= 1 for r in rows)
    first = pipeline.sha256(path)
    manifest = json.loads((tmp_path / pipeline.MANIFEST).read_text())
    assert manifest["files"][pipeline.EXISTING_CSV] == first
    assert run_cli("sample-bpm", "--preset", "experiment2", "--count", 1000, "--out", tmp_path) == 0
    assert pipeline.sha256(path) == first
    assert run_cli("sample-bpm", "--preset", "experiment2", "--count", 1000, "--seed", 3, "--out", tmp_path) == 0
    assert pipeline.sha256(path) != first
    assert no_partials(tmp_path)


def test_sample_bpm_target(tmp_path):
    assert run_cli("sample-bpm", "--preset", "experiment1", "--which", "target", "--count", 10, "--out", tmp_path) == 0
    assert len((tmp_path / pipeline.TARGET_CSV).read_text().splitlines()) == 11


def test_synth_ive_command(tmp_path):
    assert run_cli("synth-ive", "--preset", "experiment2", "--out", tmp_path) == 0
    corpus = (tmp_path / pipeline.CORPUS_CSV).read_text().splitlines()
    assert len(corpus) == 181
    synthetic = (tmp_path / pipeline.SYNTHETIC_CSV).read_text().splitlines()
    assert len(synthetic) == 5001
    body = json.loads((tmp_path / pipeline.HMM_JSON).read_text())
    assert np.all(np.diff(body["log_likelihood_trace"]) >= -1e-9)


def test_train_one_epoch(tmp_path):
    assert run_cli("train", "--preset", "experiment2", "--epochs", 1, "--out", tmp_path) == 0
    trace = (tmp_path / pipeline.TRACE_CSV).read_text().splitlines()
    assert trace[0] == ",".join(gan.TRACE_COLUMNS)
    assert len(trace) == 2
    aug = gan.AugmentedBpm.load(tmp_path / pipeline.CHECKPOINT)
    assert aug.final_epoch == 1
    manifest = json.loads((tmp_path / pipeline.MANIFEST).read_text())
    for name in (pipeline.CHECKPOINT, pipeline.TRACE_CSV, pipeline.TRAINING_CSV, pipeline.SYNTHETIC_CSV):
        assert manifest["files"][name] == pipeline.sha256(tmp_path / name)
    assert no_partials(tmp_path)


def test_evaluate_untrained_generator(tmp_path):
    g = gan.make_generator(0)
    for layer in g.layers:
        layer.weights[:] = 0
    gan.AugmentedBpm(g).save(tmp_path / "zero.bin")
    assert run_cli("evaluate", "--preset", "experiment2", "--checkpoint", tmp_path / "zero.bin", "--out", tmp_path) == 0
    cfg = config.load_preset("experiment2")
    lux = gan.probe_grid()
    want = float(np.mean(np.abs(0.5 - probit.evaluate(cfg.target, lux))))
    metrics = {r["metric"]: float(r["value"]) for r in csv.DictReader((tmp_path / "report_metrics.csv").open())}
    assert metrics["mae_augmented"] == pytest.approx(want, abs=1e-9)
    plot = list(csv.DictReader((tmp_path / "report_plot_data.csv").open()))
    assert len(plot) == 101
    assert all(float(r["augmented"]) == 0.5 for r in plot)
    assert (tmp_path / pipeline.FIGURE).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_evaluate_missing_checkpoint(tmp_path):
    assert run_cli("evaluate", "--preset", "experiment2", "--out", tmp_path) == 1


def test_bad_config_exits_nonzero(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text(config.dumps(config.load_preset("experiment2")).replace("epochs_n: 200000", "epochs_n: 0"))
    out = tmp_path / "out"
    assert run_cli("train", "--config", bad, "--out", out) == 1
    assert not out.exists() or no_partials(out)
    assert run_cli("sample-bpm", "--preset", "experiment2", "--count", 0, "--out", out) == 1


def test_cli_logs_stage_prefix(tmp_path, capsys):
    assert cli.main(["sample-bpm", "--count", "5", "--out", str(tmp_path)]) == 0
    err = capsys.readouterr().err
    assert err.strip() and all(line.startswith("[") for line in err.strip().splitlines())


def test_config_file_round_trip_through_cli(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text(config.preset_text("experiment1"))
    assert run_cli("sample-bpm", "--config", path, "--count", 20, "--out", tmp_path / "o") == 0
    assert json.loads((tmp_path / "o" / pipeline.MANIFEST).read_text())["experiment"] == "experiment1"
