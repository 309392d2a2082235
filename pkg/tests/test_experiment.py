import json
import shutil

import numpy as np
import pytest
import yaml

from trigward.cli import main as cli_main
from trigward.errors import FingerprintConflictError, SchemaError
from trigward.experiment import (ExperimentConfig, advanced_scenario, run_experiment,
                                 validate_config)


def _mini_config(out_dir, epochs=1):
    return {
        "name": "mini",
        "seed": 11,
        "output_dir": str(out_dir),
        "dataset": {"name": "synth10_small", "train_fraction": 0.05,
                    "test_fraction": 0.06, "seed": 1},
        "schedule": {"epochs": epochs, "lr_initial": 0.05, "batch_size": 64},
        "models": [
            {"id": "s0", "arch": "mlp", "kind": "standard", "role": "surrogate", "seed": 1},
            {"id": "v0", "arch": "tiny_cnn", "kind": "standard", "role": "victim", "seed": 2},
            {"id": "v1", "arch": "tiny_cnn", "kind": "fixed_trigger", "role": "victim",
             "seed": 3, "eps_t": 8 / 255, "trigger_seed": 30},
            {"id": "v2", "arch": "tiny_cnn", "kind": "standard", "role": "victim",
             "seed": 2, "defense": {"kind": "bdr", "bit_depth": 2}},
        ],
        "attacks": [{"method": "ifgsm", "eps": 4 / 255, "iterations": 2, "seed": 5}],
        "theory": {"flip_proportions": [0.0, 0.5], "theorem2_eps": [2 / 255],
                   "n_random": 8, "sample_count": 32, "eval_subset": 64},
    }


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = ExperimentConfig(_mini_config(out))
    artifact = run_experiment(cfg, out=out)
    return out, cfg, artifact


def test_artifact_layout(run_dir):
    out, cfg, artifact = run_dir
    assert (out / "manifest.json").exists()
    assert (out / "results" / "long_main.csv").exists()
    assert (out / "results" / "defense_table_main.csv").exists()
    assert (out / "results" / "report.json").exists()
    assert (out / "theory" / "theory.json").exists()
    assert any(p.suffix == ".npz" for p in (out / "checkpoints").iterdir())
    assert any(p.suffix == ".npz" for p in (out / "attacks").iterdir())
    manifest = artifact.manifest
    assert manifest["config_fingerprint"] == cfg.fingerprint()
    assert all(isinstance(h, str) for h in manifest["files"].values())


def test_rerun_is_cache_hit(run_dir):
    out, cfg, _ = run_dir
    ck_times = {p: p.stat().st_mtime_ns for p in (out / "checkpoints").glob("*.npz")}
    run_experiment(cfg, out=out)
    for p, t in ck_times.items():
        assert p.stat().st_mtime_ns == t  # no retraining


def test_fingerprint_conflict_refused(run_dir):
    out, cfg, _ = run_dir
    other = _mini_config(out)
    other["seed"] = 999
    with pytest.raises(FingerprintConflictError):
        run_experiment(ExperimentConfig(other), out=out)


def test_theory_outputs_sane(run_dir):
    out, _, _ = run_dir
    with open(out / "theory" / "theory.json") as f:
        theory = json.load(f)
    assert "v1" in theory
    entry = theory["v1"]
    assert entry["trigger_mse"] == pytest.approx((8 / 255) ** 2, abs=1e-12)
    assert len(entry["flip"]["proportions"]) == 2
    assert entry["theorem2"][0]["eps"] == pytest.approx(2 / 255)


def test_defense_table_shape(run_dir):
    out, cfg, _ = run_dir
    with open(out / "results" / "defense_table_main.csv") as f:
        lines = [l.strip().split(",") for l in f if l.strip()]
    header, rows = lines[0], lines[1:]
    # 1 attack + clean row; columns: attack + 3 victim groups
    assert len(rows) == 2
    assert rows[0][0] == "clean"
    assert len(header) == 4
    # mean row equals recomputed grand mean per column
    with open(out / "results" / "matrices_main.json") as f:
        payload = json.load(f)
    from trigward.evaluation import RobustnessMatrix
    m = RobustnessMatrix.from_dict(payload["matrices"]["ifgsm"])
    col_of = {e["id"]: cfg.column_label(e) for e in cfg.model_entries("victim")}
    for vid, label in col_of.items():
        j = header.index(label)
        expected = m.per_victim_mean()[vid]
        assert float(rows[1][j]) == pytest.approx(expected, abs=1e-6)


def test_json_mirror_roundtrip(run_dir):
    out, _, _ = run_dir
    with open(out / "results" / "report.json") as f:
        mirror = json.load(f)
    table = mirror["defense_table_main"]
    # regenerate the CSV from the mirror and compare byte content
    from trigward.report import write_pivot_csv
    regen = out / "results" / "regen.csv"
    write_pivot_csv(table, regen)
    original = (out / "results" / "defense_table_main.csv").read_text()
    assert regen.read_text() == original


def test_schema_rejects_bad_configs(tmp_path):
    base = _mini_config(tmp_path)
    bad = {k: v for k, v in base.items() if k != "attacks"}
    with pytest.raises(SchemaError):
        validate_config(bad)
    bad2 = json.loads(json.dumps(base))
    bad2["attacks"][0]["method"] = "warp"
    with pytest.raises(SchemaError) as ei:
        validate_config(bad2)
    assert any("attacks" in k for k in ei.value.keys)
    bad3 = json.loads(json.dumps(base))
    del bad3["models"][2]["eps_t"]
    with pytest.raises(SchemaError):
        validate_config(bad3)
    bad4 = json.loads(json.dumps(base))
    bad4["models"][0]["id"] = "v0"
    with pytest.raises(SchemaError):
        validate_config(bad4)


def test_cli_roundtrip(tmp_path):
    out = tmp_path / "cli_run"
    cfg_path = tmp_path / "config.yaml"
    with open(cfg_path, "w") as f:
        yaml.safe_dump(_mini_config(out), f)
    rc = cli_main(["all", "--config", str(cfg_path)])
    assert rc == 0
    assert (out / "manifest.json").exists()
    # config error exit code
    bad_path = tmp_path / "bad.yaml"
    with open(bad_path, "w") as f:
        yaml.safe_dump({"dataset": {"name": "z"}}, f)
    assert cli_main(["train", "--config", str(bad_path)]) == 2
    # fingerprint conflict exit code
    cfg2 = _mini_config(out)
    cfg2["seed"] = 4242
    cfg2_path = tmp_path / "config2.yaml"
    with open(cfg2_path, "w") as f:
        yaml.safe_dump(cfg2, f)
    assert cli_main(["train", "--config", str(cfg2_path), "--out", str(out)]) == 4


def test_determinism_across_fresh_runs(tmp_path):
    cfg_a = _mini_config(tmp_path / "a")
    cfg_b = _mini_config(tmp_path / "b")
    cfg_b["output_dir"] = str(tmp_path / "b")
    ra = run_experiment(ExperimentConfig(cfg_a), out=tmp_path / "a")
    rb = run_experiment(ExperimentConfig(cfg_b), out=tmp_path / "b")
    # identical configs (modulo output path) give bitwise-identical artifacts
    fa = {k: v for k, v in ra.manifest["files"].items()}
    fb = {k: v for k, v in rb.manifest["files"].items()}
    assert set(fa) == set(fb)
    diff = {k for k in fa if fa[k] != fb[k] and k != "config.yaml"}
    assert not diff, f"nondeterministic artifacts: {diff}"


def test_advanced_scenario(tmp_path):
    cfg = _mini_config(tmp_path / "adv")
    cfg["output_dir"] = str(tmp_path / "adv")
    cfg["advanced"] = {
        "enabled": True,
        "surrogates": [{"id": "adv_s0", "arch": "mlp", "kind": "fixed_trigger",
                        "role": "surrogate", "seed": 21, "eps_t": 8 / 255,
                        "trigger_seed": 77}],
    }
    matrix = advanced_scenario(ExperimentConfig(cfg), out_dir=tmp_path / "adv")
    assert matrix.is_complete()
    assert "advanced" in matrix.flags
    assert (tmp_path / "adv" / "results" / "long_advanced.csv").exists()


def test_advanced_leak_warning(tmp_path):
    cfg = _mini_config(tmp_path / "leak")
    cfg["output_dir"] = str(tmp_path / "leak")
    cfg["advanced"] = {
        "enabled": True,
        "surrogates": [{"id": "adv_s0", "arch": "mlp", "kind": "fixed_trigger",
                        "role": "surrogate", "seed": 21, "eps_t": 8 / 255,
                        "trigger_seed": 30}],  # same as victim v1
    }
    with pytest.warns(UserWarning, match="trigger seed"):
        matrix = advanced_scenario(ExperimentConfig(cfg), out_dir=tmp_path / "leak")
    assert "adv_s0" in matrix.flags
