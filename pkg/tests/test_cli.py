"""Pipeline and CLI behavior at miniature scale."""
import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from panelwm import artifacts
from panelwm.cli import main
from panelwm.config import load_config
from panelwm.pipeline import PipelineError, Workspace, run_all, run_stage

TINY = {
    "seed": 11,
    "sim": {"n_consumers": 32, "t_days": 50, "split_boundaries": [38, 44]},
    "world_model": {"epochs_pretrain": 1, "epochs_finetune": 1},
    "adapter": {"max_epochs": 2, "patience": 2},
    "baselines": {"n_trees": 4, "max_depth": 5},
}


def write_cfg(tmp_path, out_name="run", **extra):
    cfg = dict(TINY, out=str(tmp_path / out_name), **extra)
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


@pytest.fixture(scope="module")
def completed_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg_path = write_cfg(tmp)
    assert main(["run-all", "--config", str(cfg_path)]) == 0
    return tmp, cfg_path


class TestRunAll:
    def test_produces_all_reports(self, completed_run):
        tmp, _ = completed_run
        out = tmp / "run"
        for name in (
            "panel.csv", "traits.csv", "encoded.bin", "world_model.ckpt",
            "beliefs.f64", "adapter_visit.ckpt", "baseline_purchase.ckpt",
            "auc_report.json", "cate_report.csv", "cate_summary.json",
            "energy_report.json", "predictions.csv", "summary.md",
        ):
            assert (out / name).exists(), name

    def test_predictions_schema(self, completed_run):
        tmp, _ = completed_run
        header = (tmp / "run" / "predictions.csv").read_text().splitlines()[0]
        assert header == "consumer_id,day,task,p_hat,logit"

    def test_eval_cate_idempotent(self, completed_run):
        tmp, cfg_path = completed_run
        out = tmp / "run"
        before = (out / "cate_summary.json").read_bytes()
        assert main(["eval-cate", "--config", str(cfg_path)]) == 0
        assert (out / "cate_summary.json").read_bytes() == before

    def test_train_adapter_leaves_world_model_untouched(self, completed_run):
        tmp, cfg_path = completed_run
        out = tmp / "run"
        wm_before = artifacts.file_hash(out / "world_model.ckpt")
        assert main(["train-adapter", "--config", str(cfg_path)]) == 0
        assert artifacts.file_hash(out / "world_model.ckpt") == wm_before

    def test_wm_info_command(self, completed_run, capsys):
        tmp, _ = completed_run
        assert main(["wm-info", str(tmp / "run" / "world_model.ckpt")]) == 0
        info = json.loads(capsys.readouterr().out)
        assert info["layer_sizes"] == [72, 64, 32, 16]
        assert info["frozen"] is True


class TestStageGuards:
    def test_missing_predecessor_is_actionable(self, tmp_path):
        cfg_path = write_cfg(tmp_path, out_name="empty")
        cfg = load_config(cfg_path)
        with pytest.raises(PipelineError, match="simulate"):
            run_stage(cfg, "encode")

    def test_cli_reports_error_and_exits_nonzero(self, tmp_path, capsys):
        cfg_path = write_cfg(tmp_path, out_name="empty2")
        assert main(["train-wm", "--config", str(cfg_path)]) == 1
        assert "encode" in capsys.readouterr().err

    def test_stale_config_detected(self, tmp_path):
        cfg_path = write_cfg(tmp_path)
        cfg = load_config(cfg_path)
        run_stage(cfg, "simulate")
        run_stage(cfg, "encode")
        # change the simulation section: encode inputs now stale
        stale = load_config(cfg_path)
        stale.sim = stale.sim.replace(t_days=49)
        with pytest.raises(PipelineError, match="simulate"):
            run_stage(stale, "encode")

    def test_modified_artifact_detected(self, tmp_path):
        cfg_path = write_cfg(tmp_path, out_name="mod")
        cfg = load_config(cfg_path)
        run_stage(cfg, "simulate")
        panel_path = tmp_path / "mod" / "panel.csv"
        data = panel_path.read_text().splitlines()
        data[1] = data[1].replace(",0,", ",1,", 1)
        panel_path.write_text("\n".join(data))
        with pytest.raises(PipelineError, match="panel.csv"):
            run_stage(cfg, "encode")

    def test_unknown_stage(self, tmp_path):
        cfg = load_config(write_cfg(tmp_path, out_name="x"))
        with pytest.raises(PipelineError, match="unknown stage"):
            run_stage(cfg, "not-a-stage")


class TestDeterminism:
    def test_double_run_byte_identical(self, tmp_path):
        cfg_a = load_config(write_cfg(tmp_path, out_name="run_a"))
        cfg_b = load_config(write_cfg(tmp_path, out_name="run_b"))
        run_all(cfg_a)
        run_all(cfg_b)
        out_a, out_b = tmp_path / "run_a", tmp_path / "run_b"
        for name in (
            "world_model.ckpt", "adapter_visit.ckpt", "adapter_purchase.ckpt",
            "baseline_visit.ckpt", "baseline_purchase.ckpt", "beliefs.f64",
            "encoded.bin", "panel.csv", "traits.csv",
            "auc_report.json", "cate_summary.json", "energy_report.json", "summary.md",
        ):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name

    def test_run_all_until_stage(self, tmp_path):
        cfg = load_config(write_cfg(tmp_path, out_name="partial"))
        run_all(cfg, until="train-wm")
        out = tmp_path / "partial"
        assert (out / "world_model.ckpt").exists()
        assert not (out / "beliefs.f64").exists()

    def test_seed_flag_changes_outputs(self, tmp_path):
        cfg_path = write_cfg(tmp_path, out_name="seeded")
        assert main(["simulate", "--config", str(cfg_path), "--seed", "99"]) == 0
        one = (tmp_path / "seeded" / "panel.csv").read_bytes()
        assert main(["simulate", "--config", str(cfg_path), "--seed", "100"]) == 0
        assert (tmp_path / "seeded" / "panel.csv").read_bytes() != one


class TestConsumerSplitMode:
    def test_masks_keep_consumers_whole(self, tmp_path):
        cfg_path = write_cfg(tmp_path, out_name="csplit")
        cfg = load_config(cfg_path)
        cfg.sim = cfg.sim.replace(split_mode="consumer")
        from panelwm import simgen
        from panelwm.pipeline import _split_masks

        run_stage(cfg, "simulate")
        ws = Workspace(cfg)
        panel = simgen.read_panel_csv(ws.path("panel.csv"))
        masks = _split_masks(ws, panel)
        total = sum(int(m.sum()) for m in masks.values())
        assert total == len(panel)
        for a, b in (("train", "validation"), ("train", "test"), ("validation", "test")):
            overlap = set(np.unique(panel.consumer_id[masks[a]])) & set(np.unique(panel.consumer_id[masks[b]]))
            assert not overlap


class TestConfig:
    def test_unknown_keys_rejected(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text(yaml.safe_dump({"seed": 1, "nonsense": 2}))
        with pytest.raises(ValueError, match="nonsense"):
            load_config(path)

    def test_unknown_sim_keys_rejected(self, tmp_path):
        path = tmp_path / "bad2.yaml"
        path.write_text(yaml.safe_dump({"sim": {"n_consumers": 8, "typo_key": 3}}))
        with pytest.raises(ValueError, match="typo_key"):
            load_config(path)

    def test_seed_propagates_to_subconfigs(self):
        cfg = load_config(None, {"seed": 5})
        cfg2 = load_config(None, {"seed": 5})
        assert cfg.sim.seed == cfg2.sim.seed
        assert cfg.sim.seed != 5  # named sub-seed, not the root
        assert cfg.world_model.seed != cfg.adapter.seed


class TestEntryPoint:
    def test_console_script_help(self):
        proc = subprocess.run(
            [sys.executable, "-m", "panelwm.cli", "--help"], capture_output=True, text=True
        )
        assert proc.returncode == 0
        assert "run-all" in proc.stdout
