"""Pipeline stages behind the CLI.

Each stage reads its predecessors' artifacts from the output directory,
verifies them against recorded content hashes and config-section hashes
(stale or missing inputs raise with the stage to rerun), and writes its own
artifacts plus a meta record. Stages are deterministic: identical config and
inputs produce byte-identical outputs.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd

from . import adapter as adapter_mod
from . import artifacts, causal, encode, simgen, stats
from .config import TASKS, RunConfig
from .ebm import belief_matrix, finetune_dbm, pretrain_stack
from .rng import subseed

__all__ = ["STAGES", "PipelineError", "run_stage", "run_all", "Workspace"]

STAGES = (
    "simulate",
    "encode",
    "train-wm",
    "extract-belief",
    "train-adapter",
    "train-baselines",
    "eval-pred",
    "eval-cate",
    "eval-energy",
    "report",
)


class PipelineError(RuntimeError):
    pass


class Workspace:
    """Artifact paths, meta records and staleness checks for one output dir."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = Path(cfg.out)
        self.meta_dir = self.out / "meta"

    def path(self, name: str) -> Path:
        return self.out / name

    def ensure_dirs(self) -> None:
        self.meta_dir.mkdir(parents=True, exist_ok=True)

    def write_meta(self, stage: str, inputs: dict, outputs: list) -> None:
        record = {
            "stage": stage,
            "config_hash": artifacts.config_hash(self.cfg.section(stage)),
            "inputs": {k: v for k, v in inputs.items()},
            "outputs": {name: artifacts.file_hash(self.path(name)) for name in outputs},
        }
        with open(self.meta_dir / f"{stage}.json", "w") as f:
            json.dump(record, f, indent=2, sort_keys=True)

    def read_meta(self, stage: str) -> dict:
        p = self.meta_dir / f"{stage}.json"
        if not p.exists():
            raise PipelineError(
                f"missing artifacts for stage '{stage}': run `panelwm {stage}` first"
            )
        with open(p) as f:
            return json.load(f)

    def require(self, stage: str, *names: str) -> dict:
        """Verify stage's outputs exist, match their recorded hashes, and were
        produced under the current config section. Returns name -> hash."""
        meta = self.read_meta(stage)
        expected = artifacts.config_hash(self.cfg.section(stage))
        if meta["config_hash"] != expected:
            raise PipelineError(
                f"stale artifacts for stage '{stage}': config changed, rerun `panelwm {stage}`"
            )
        hashes = {}
        for name in names:
            p = self.path(name)
            if not p.exists():
                raise PipelineError(
                    f"missing artifact {name} from stage '{stage}': rerun `panelwm {stage}`"
                )
            h = artifacts.file_hash(p)
            if meta["outputs"].get(name) != h:
                raise PipelineError(
                    f"artifact {name} does not match the record from stage '{stage}': rerun it"
                )
            hashes[name] = h
        return hashes


# ---------------------------------------------------------------------------
# shared loading helpers
# ---------------------------------------------------------------------------

def _load_panel(ws: Workspace):
    panel = simgen.read_panel_csv(ws.path("panel.csv"))
    traits = simgen.read_traits_csv(ws.path("traits.csv"))
    return panel, traits


def _split_masks(ws: Workspace, panel):
    b0, b1 = ws.cfg.sim.split_boundaries
    if ws.cfg.sim.split_mode != "time":
        split = simgen.split_panel(panel, (b0, b1), ws.cfg.sim.split_mode, ws.cfg.sim.seed)
        ids = {
            "train": set(np.unique(split.train.consumer_id).tolist()),
            "validation": set(np.unique(split.validation.consumer_id).tolist()),
        }
        train = np.isin(panel.consumer_id, list(ids["train"]))
        val = np.isin(panel.consumer_id, list(ids["validation"]))
        return {"train": train, "validation": val, "test": ~(train | val)}
    return {
        "train": panel.day < b0,
        "validation": (panel.day >= b0) & (panel.day < b1),
        "test": panel.day >= b1,
    }


def _actions_matrix(panel) -> np.ndarray:
    return np.stack([panel.sale1, panel.sale2, panel.campaign, panel.coupon, panel.push], axis=1)


def _load_beliefs(ws: Workspace) -> np.ndarray:
    with open(ws.path("beliefs.json")) as f:
        meta = json.load(f)
    values = np.fromfile(ws.path("beliefs.f64"), dtype="<f8").reshape(meta["n_rows"], meta["n_cols"])
    return values, meta


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def stage_simulate(ws: Workspace) -> None:
    ws.ensure_dirs()
    panel, traits = simgen.simulate_panel(ws.cfg.sim)
    simgen.write_panel_csv(panel, ws.path("panel.csv"))
    simgen.write_traits_csv(traits, ws.path("traits.csv"))
    with open(ws.path("config_resolved.json"), "w") as f:
        json.dump(ws.cfg.to_dict(), f, indent=2, sort_keys=True, default=str)
    ws.write_meta("simulate", {}, ["panel.csv", "traits.csv"])


def stage_encode(ws: Workspace) -> None:
    inputs = ws.require("simulate", "panel.csv")
    panel, _ = _load_panel(ws)
    profiles = simgen.draw_population(ws.cfg.sim.n_consumers, ws.cfg.sim.seed, ws.cfg.sim)
    matrix = encode.encode_panel(profiles, panel, ws.cfg.ws)
    encode.save_encoded(matrix, ws.path("encoded.bin"), ws.path("encoded.bin.json"))
    outputs = ["encoded.bin", "encoded.bin.json"]
    if ws.cfg.encode_csv:
        encode.encoded_to_csv(matrix, ws.path("encoded.csv"))
        outputs.append("encoded.csv")
    ws.write_meta("encode", inputs, outputs)


def stage_train_wm(ws: Workspace) -> None:
    inputs = ws.require("encode", "encoded.bin")
    matrix, _ = encode.load_encoded(ws.path("encoded.bin"), ws.path("encoded.bin.json"))
    panel, _ = _load_panel(ws)
    masks = _split_masks(ws, panel)
    cfg = ws.cfg.world_model
    train = matrix[masks["train"]].astype(np.float64)
    val = matrix[masks["validation"]].astype(np.float64)
    model = pretrain_stack(train, cfg.layer_sizes, cfg, schema=encode.schema_hash(ws.cfg.ws))
    model = finetune_dbm(model, train, val, cfg)
    artifacts.save_dbm(model, ws.path("world_model.ckpt"))
    with open(ws.path("wm_info.json"), "w") as f:
        json.dump(artifacts.wm_info(ws.path("world_model.ckpt")), f, indent=2, sort_keys=True)
    ws.write_meta("train-wm", inputs, ["world_model.ckpt", "wm_info.json"])


def stage_extract_belief(ws: Workspace) -> None:
    inputs = {**ws.require("encode", "encoded.bin"), **ws.require("train-wm", "world_model.ckpt")}
    matrix, _ = encode.load_encoded(ws.path("encoded.bin"), ws.path("encoded.bin.json"))
    model = artifacts.load_dbm(ws.path("world_model.ckpt"))
    cfg = ws.cfg.world_model
    values, iters, conv = belief_matrix(
        model, matrix, max_iters=cfg.mf_max_iters, tol=cfg.mf_tol, damping=cfg.mf_damping
    )
    values.astype("<f8").tofile(ws.path("beliefs.f64"))
    meta = {
        "n_rows": int(values.shape[0]),
        "n_cols": int(values.shape[1]),
        "schema_hash": model.schema_hash,
        "wm_checkpoint": artifacts.file_hash(ws.path("world_model.ckpt")),
        "converged_fraction": float(np.mean(conv)),
        "mean_iterations": float(np.mean(iters)),
    }
    with open(ws.path("beliefs.json"), "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
    ws.write_meta("extract-belief", inputs, ["beliefs.f64", "beliefs.json"])


def _train_heads(ws: Workspace, kind: str):
    """Shared trainer for belief adapters and raw-feature baselines."""
    panel, _ = _load_panel(ws)
    masks = _split_masks(ws, panel)
    actions = _actions_matrix(panel).astype(np.float64)
    if kind == "adapter":
        values, meta = _load_beliefs(ws)
        if meta["wm_checkpoint"] != artifacts.file_hash(ws.path("world_model.ckpt")):
            raise PipelineError("beliefs were extracted from a different world-model checkpoint")
        features = np.hstack([values, actions])
        schema = meta["schema_hash"]
        input_kind = "belief+action"
    else:
        matrix, _ = encode.load_encoded(ws.path("encoded.bin"), ws.path("encoded.bin.json"))
        features = np.hstack([matrix.astype(np.float64), actions])
        schema = encode.schema_hash(ws.cfg.ws)
        input_kind = "raw+action"
    out_names = []
    for task in TASKS:
        y = getattr(panel, task).astype(np.float64)
        cfg = ws.cfg.adapter_config(task, kind)
        model = adapter_mod.train_mlp(
            (features[masks["train"]], y[masks["train"]]),
            (features[masks["validation"]], y[masks["validation"]]),
            cfg,
            input_kind=input_kind,
            schema_hash=schema,
        )
        name = f"{kind}_{task}.ckpt"
        artifacts.save_mlp(model, ws.path(name))
        out_names.append(name)
    return out_names


def stage_train_adapter(ws: Workspace) -> None:
    inputs = {
        **ws.require("extract-belief", "beliefs.f64", "beliefs.json"),
        **ws.require("train-wm", "world_model.ckpt"),
    }
    out_names = _train_heads(ws, "adapter")
    ws.write_meta("train-adapter", inputs, out_names)


def stage_train_baselines(ws: Workspace) -> None:
    inputs = ws.require("encode", "encoded.bin")
    out_names = _train_heads(ws, "baseline")
    ws.write_meta("train-baselines", inputs, out_names)


def _predictions_frame(panel, mask, logits) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "consumer_id": panel.consumer_id[mask],
            "day": panel.day[mask],
            "p_hat": 1.0 / (1.0 + np.exp(-logits)),
            "logit": logits,
        }
    )


def stage_eval_pred(ws: Workspace) -> None:
    inputs = {
        **ws.require("train-adapter", *(f"adapter_{t}.ckpt" for t in TASKS)),
        **ws.require("train-baselines", *(f"baseline_{t}.ckpt" for t in TASKS)),
        **ws.require("extract-belief", "beliefs.f64"),
        **ws.require("encode", "encoded.bin"),
    }
    panel, _ = _load_panel(ws)
    masks = _split_masks(ws, panel)
    test = masks["test"]
    actions = _actions_matrix(panel).astype(np.float64)
    values, _ = _load_beliefs(ws)
    matrix, _ = encode.load_encoded(ws.path("encoded.bin"), ws.path("encoded.bin.json"))
    x_belief = np.hstack([values, actions])[test]
    x_raw = np.hstack([matrix.astype(np.float64), actions])[test]

    report = {"n_test": int(test.sum()), "auc": {}}
    frames = {"adapter": [], "baseline": []}
    for task in TASKS:
        y = getattr(panel, task)[test]
        for kind, x in (("adapter", x_belief), ("baseline", x_raw)):
            model = artifacts.load_mlp(ws.path(f"{kind}_{task}.ckpt"))
            logits = adapter_mod.predict_logits(model, x)
            report["auc"].setdefault(task, {})[kind] = stats.auc(logits, y)
            frame = _predictions_frame(panel, test, logits)
            frame.insert(2, "task", task)
            frames[kind].append(frame)
    report["gap"] = {
        task: report["auc"][task]["adapter"] - report["auc"][task]["baseline"] for task in TASKS
    }
    for kind, name in (("adapter", "predictions.csv"), ("baseline", "baseline_predictions.csv")):
        pd.concat(frames[kind], ignore_index=True).to_csv(ws.path(name), index=False, float_format="%.10g")
    with open(ws.path("auc_report.json"), "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
    ws.write_meta("eval-pred", inputs, ["auc_report.json", "predictions.csv", "baseline_predictions.csv"])


def stage_eval_cate(ws: Workspace) -> None:
    inputs = {
        **ws.require("train-adapter", *(f"adapter_{t}.ckpt" for t in TASKS)),
        **ws.require("extract-belief", "beliefs.f64"),
        **ws.require("encode", "encoded.bin"),
    }
    panel, traits = _load_panel(ws)
    masks = _split_masks(ws, panel)
    train, test = masks["train"], masks["test"]
    actions = _actions_matrix(panel)
    matrix, _ = encode.load_encoded(ws.path("encoded.bin"), ws.path("encoded.bin.json"))
    values, _ = _load_beliefs(ws)

    summary = {"interventions": {}}
    rows = []
    for intervention in ws.cfg.interventions:
        treatment, outcome = [s.strip() for s in intervention.split("->")]
        model = artifacts.load_mlp(ws.path(f"adapter_{outcome}.ckpt"))
        rep = causal.run_cate_experiment(
            intervention,
            model,
            matrix[train],
            actions[train],
            getattr(panel, outcome)[train],
            matrix[test],
            actions[test],
            values[test],
            panel.consumer_id[test],
            panel.day[test],
            traits,
            ws.cfg.baselines,
            seed=subseed(ws.cfg.seed, "cate"),
            aggregate=ws.cfg.cate_aggregate,
        )
        summary["interventions"][intervention] = {
            "n_test": rep.n_test,
            "spearman_logit_vs_trait": rep.spearman,
        }
        for method in causal.ALL_METHODS:
            rows.append(
                pd.DataFrame(
                    {
                        "consumer_id": rep.consumer_id,
                        "day": rep.day,
                        "method": method,
                        "intervention": intervention,
                        "tau_prob": rep.tau_prob[method],
                        "tau_logit": rep.tau_logit[method],
                    }
                )
            )
    pd.concat(rows, ignore_index=True).to_csv(ws.path("cate_report.csv"), index=False, float_format="%.10g")
    with open(ws.path("cate_summary.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    ws.write_meta("eval-cate", inputs, ["cate_report.csv", "cate_summary.json"])


def stage_eval_energy(ws: Workspace) -> None:
    inputs = {
        **ws.require("train-wm", "world_model.ckpt"),
        **ws.require("encode", "encoded.bin"),
    }
    panel, traits = _load_panel(ws)
    masks = _split_masks(ws, panel)
    matrix, _ = encode.load_encoded(ws.path("encoded.bin"), ws.path("encoded.bin.json"))
    model = artifacts.load_dbm(ws.path("world_model.ckpt"))
    report = {"clamp": ws.cfg.clamp.to_dict(), "splits": {}}
    for split in ("train", "validation", "test"):
        mask = masks[split]
        rep = causal.run_energy_experiment(
            model, matrix[mask], panel.consumer_id[mask], ws.cfg.clamp, traits, split
        )
        report["splits"][split] = rep.to_dict()
    with open(ws.path("energy_report.json"), "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
    ws.write_meta("eval-energy", inputs, ["energy_report.json"])


def stage_report(ws: Workspace) -> None:
    inputs = {
        **ws.require("eval-pred", "auc_report.json"),
        **ws.require("eval-cate", "cate_summary.json"),
        **ws.require("eval-energy", "energy_report.json"),
    }
    with open(ws.path("auc_report.json")) as f:
        auc_rep = json.load(f)
    with open(ws.path("cate_summary.json")) as f:
        cate_rep = json.load(f)
    with open(ws.path("energy_report.json")) as f:
        energy_rep = json.load(f)

    lines = ["# Run summary", ""]
    lines += ["## Prediction (test-set AUC)", "", "| Task | Baseline MLP | Belief adapter | Gap |", "|---|---|---|---|"]
    for task in TASKS:
        a = auc_rep["auc"][task]
        lines.append(f"| {task} | {a['baseline']:.4f} | {a['adapter']:.4f} | {a['adapter'] - a['baseline']:+.4f} |")
    lines += ["", "## Energy consistency under the clamp", ""]
    lines += ["| Split | Eligible n | mean dF | paired t | p(t) | p(Wilcoxon) | mean dF high-beta | mean dF low-beta | Welch t | p(Welch) | p(MW) |", "|" + "---|" * 11]
    for split in ("train", "validation", "test"):
        e = energy_rep["splits"][split]
        lines.append(
            f"| {split} | {e['eligible_n']} | {e['mean_delta']:.3f} | {e['paired_t']:.2f} | {e['paired_t_p']:.2e} "
            f"| {e['wilcoxon_p']:.2e} | {e['mean_high']:.3f} ({e['sd_high']:.2f}) | {e['mean_low']:.3f} ({e['sd_low']:.2f}) "
            f"| {e['welch_t']:.2f} | {e['welch_p']:.2e} | {e['mann_whitney_p']:.2e} |"
        )
    lines += ["", "## CATE recovery (Spearman rho, logit-scale effects vs latent traits)", ""]
    for intervention, block in cate_rep["interventions"].items():
        lines += [f"### {intervention}", "", "| Param | " + " | ".join(causal.ALL_METHODS) + " |", "|" + "---|" * (len(causal.ALL_METHODS) + 1)]
        table = block["spearman_logit_vs_trait"]
        for trait in ("alpha", "beta", "gamma"):
            cells = " | ".join(f"{table[m][trait]:+.3f}" for m in causal.ALL_METHODS)
            lines.append(f"| {trait} | {cells} |")
        lines.append("")
    with open(ws.path("summary.md"), "w") as f:
        f.write("\n".join(lines) + "\n")
    ws.write_meta("report", inputs, ["summary.md"])


_STAGE_FUNCS = {
    "simulate": stage_simulate,
    "encode": stage_encode,
    "train-wm": stage_train_wm,
    "extract-belief": stage_extract_belief,
    "train-adapter": stage_train_adapter,
    "train-baselines": stage_train_baselines,
    "eval-pred": stage_eval_pred,
    "eval-cate": stage_eval_cate,
    "eval-energy": stage_eval_energy,
    "report": stage_report,
}


def run_stage(cfg: RunConfig, stage: str) -> None:
    if stage not in _STAGE_FUNCS:
        raise PipelineError(f"unknown stage {stage!r}; valid: {', '.join(STAGES)}")
    _STAGE_FUNCS[stage](Workspace(cfg))


def run_all(cfg: RunConfig, until: str | None = None) -> None:
    for stage in STAGES:
        run_stage(cfg, stage)
        if until is not None and stage == until:
            break
