"""Acceptance suite: one test per release criterion.

Criteria over the full-scale pipeline (N=1024, T=365, default config) use a
session-cached run under .cache/acceptance/<config-hash>; set
PANELWM_ACCEPTANCE_REBUILD=1 to force regeneration. Each test prints one
PASS/FAIL line.
"""
import itertools
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from panelwm import adapter, artifacts, causal, ebm, encode, simgen, stats
from panelwm.adapter import MlpModel
from panelwm.config import load_config
from panelwm.pipeline import Workspace, run_all
from panelwm.rng import stream

pytestmark = pytest.mark.acceptance

CACHE_ROOT = Path(__file__).resolve().parent.parent / ".cache" / "acceptance"


def _report(criterion: str, ok: bool, detail: str) -> None:
    print(f"\n[{criterion}] {'PASS' if ok else 'FAIL'} {detail}")


def _cached_run(tag: str):
    cfg = load_config(None, {})
    key = artifacts.config_hash({k: v for k, v in cfg.to_dict().items() if k != "out"})
    out = CACHE_ROOT / f"{key}-{tag}"
    cfg.out = str(out)
    done = out / "meta" / "report.json"
    if os.environ.get("PANELWM_ACCEPTANCE_REBUILD") == "1" or not done.exists():
        run_all(cfg)
    return cfg, out


@pytest.fixture(scope="session")
def full_run():
    return _cached_run("a")


@pytest.fixture(scope="session")
def full_run_repeat(full_run):
    return _cached_run("b")


# ---------------------------------------------------------------------------
# C1: free-energy / energy oracles
# ---------------------------------------------------------------------------


def _scalar_loop_energy(model, v, hs):
    units = [np.asarray(v, float)] + [np.asarray(h, float) for h in hs]
    e = 0.0
    for i, x in enumerate(units[0]):
        e -= model.visible_bias[i] * x
    for ell in range(1, len(units)):
        w = model.weight(ell)
        for i in range(w.shape[0]):
            for j in range(w.shape[1]):
                e -= units[ell - 1][i] * w[i, j] * units[ell][j]
        for j, h in enumerate(units[ell]):
            e -= model.hidden_bias(ell)[j] * h
    return e


def test_c1_oracle_exactness():
    start = time.perf_counter()
    rng = np.random.default_rng(101)

    # RBM free energy vs 2^12 enumeration to 1e-8
    worst_rbm = 0.0
    for _ in range(5):
        layer = ebm.RbmLayer(rng.normal(0, 0.6, (9, 12)), rng.normal(0, 0.6, 9), rng.normal(0, 0.6, 12))
        v = (rng.random(9) < 0.5).astype(float)
        worst_rbm = max(worst_rbm, abs(float(ebm.rbm_free_energy(layer, v)) - ebm.rbm_free_energy_exact(layer, v)))

    # variational bound on 100 random tiny DBMs (4-3-2)
    violations = 0
    for _ in range(100):
        model = ebm.init_dbm((4, 3, 2), rng, weight_sd=0.5)
        for lay in model.layers:
            lay.bias_upper[:] = rng.normal(0, 0.5, lay.upper_dim)
        model.layers[0].bias_lower[:] = rng.normal(0, 0.5, 4)
        v = (rng.random(4) < 0.5).astype(float)
        f_var = ebm.dbm_free_energy(model, v, max_iters=300, tol=1e-8)
        if f_var < ebm.dbm_free_energy_exact(model, v) - 1e-9:
            violations += 1

    # joint energy vs scalar loop to 1e-10
    worst_joint = 0.0
    model = ebm.init_dbm((3, 2, 2), rng, weight_sd=0.7)
    for _ in range(20):
        v = (rng.random(3) < 0.5).astype(float)
        hs = [(rng.random(2) < 0.5).astype(float) for _ in range(2)]
        worst_joint = max(worst_joint, abs(ebm.joint_energy(model, v, hs) - _scalar_loop_energy(model, v, hs)))

    elapsed = time.perf_counter() - start
    ok = worst_rbm < 1e-8 and violations == 0 and worst_joint < 1e-10 and elapsed < 10.0
    _report(
        "C1",
        ok,
        f"rbm_vs_enum={worst_rbm:.2e} bound_violations={violations}/100 joint_vs_loop={worst_joint:.2e} time={elapsed:.1f}s",
    )
    assert worst_rbm < 1e-8
    assert violations == 0
    assert worst_joint < 1e-10
    assert elapsed < 10.0


# ---------------------------------------------------------------------------
# C2: gradient checks
# ---------------------------------------------------------------------------


def test_c2_gradient_checks():
    start = time.perf_counter()
    eps = 1e-5
    worst = 0.0
    for trial in range(20):
        rng = np.random.default_rng(300 + trial)
        dims = (5, 4, 3, 1)
        model = MlpModel(
            [rng.normal(0, 0.6, (lo, hi)) for lo, hi in zip(dims, dims[1:])],
            [rng.normal(0, 0.3, hi) for hi in dims[1:]],
        )
        x = rng.normal(size=(6, 5))
        y = (rng.random(6) < 0.5).astype(float)
        _, grads = adapter.mlp_grad(model, x, y)
        params = model.param_dict()
        for key, g in grads.items():
            for fi in {0, g.size - 1, g.size // 2}:
                idx = np.unravel_index(fi, g.shape)
                orig = params[key][idx]
                params[key][idx] = orig + eps
                lp = adapter.bce_with_logits(adapter.mlp_forward_batch(model, x), y)
                params[key][idx] = orig - eps
                lm = adapter.bce_with_logits(adapter.mlp_forward_batch(model, x), y)
                params[key][idx] = orig
                fd = (lp - lm) / (2 * eps)
                rel = abs(fd - g[idx]) / max(abs(fd), abs(g[idx]), 1e-8)
                worst = max(worst, rel)

    # PCD visible-bias gradient identity: exact data-minus-fantasy means
    rng = np.random.default_rng(991)
    layer = ebm.RbmLayer(rng.normal(0, 0.2, (7, 5)), np.zeros(7), np.zeros(5))
    chains = {"v": (rng.random((12, 7)) < 0.5).astype(float)}
    batch = (rng.random((40, 7)) < 0.5).astype(float)
    grad = ebm.pcd_update(layer, batch, chains, lr=1e-3, k=3, rng=rng)
    exact = np.array_equal(grad["b_lower"], batch.mean(axis=0) - chains["v"].mean(axis=0))

    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and exact and elapsed < 30.0
    _report("C2", ok, f"max_rel_fd_error={worst:.2e} pcd_bias_identity={exact} time={elapsed:.1f}s")
    assert worst < 1e-4
    assert exact
    assert elapsed < 30.0


# ---------------------------------------------------------------------------
# C3: predictive parity (Table 2 regime)
# ---------------------------------------------------------------------------


def test_c3_prediction_parity(full_run):
    _, out = full_run
    rep = json.loads((out / "auc_report.json").read_text())
    gaps = {task: abs(rep["gap"][task]) for task in ("visit", "purchase")}
    aucs = {
        (task, kind): rep["auc"][task][kind]
        for task in ("visit", "purchase")
        for kind in ("adapter", "baseline")
    }
    ok = all(g <= 0.02 for g in gaps.values()) and all(a > 0.60 for a in aucs.values())
    _report(
        "C3",
        ok,
        f"visit: adapter={aucs[('visit','adapter')]:.4f} baseline={aucs[('visit','baseline')]:.4f} | "
        f"purchase: adapter={aucs[('purchase','adapter')]:.4f} baseline={aucs[('purchase','baseline')]:.4f}",
    )
    for task in ("visit", "purchase"):
        assert gaps[task] <= 0.02, f"{task} AUC gap {gaps[task]:.4f} > 0.02"
    for (task, kind), value in aucs.items():
        assert value > 0.60, f"{kind} {task} AUC {value:.4f} <= 0.60"


# ---------------------------------------------------------------------------
# C4: energy-consistency clamp (Table 3 regime)
# ---------------------------------------------------------------------------


def test_c4_energy_clamp(full_run):
    _, out = full_run
    rep = json.loads((out / "energy_report.json").read_text())
    lines = []
    ok = True
    for split in ("train", "validation", "test"):
        e = rep["splits"][split]
        ok &= e["mean_delta"] > 0 and e["paired_t_p"] < 1e-3 and e["wilcoxon_p"] < 1e-3
        lines.append(f"{split}: dF={e['mean_delta']:.2f} p_t={e['paired_t_p']:.1e} p_w={e['wilcoxon_p']:.1e}")
    t = rep["splits"]["test"]
    beta_ok = t["mean_high"] < t["mean_low"] and t["welch_p"] < 0.01 and t["mann_whitney_p"] < 0.01
    ok &= beta_ok
    _report(
        "C4",
        ok,
        "; ".join(lines) + f"; test beta split: high={t['mean_high']:.2f} low={t['mean_low']:.2f} welch_t={t['welch_t']:.1f}",
    )
    for split in ("train", "validation", "test"):
        e = rep["splits"][split]
        assert e["mean_delta"] > 0, f"{split}: mean dF not positive"
        assert e["paired_t_p"] < 1e-3 and e["wilcoxon_p"] < 1e-3, f"{split}: dF vs 0 not significant"
    assert t["mean_high"] < t["mean_low"], "high-beta group should receive the smaller penalty"
    assert t["welch_p"] < 0.01 and t["mann_whitney_p"] < 0.01


# ---------------------------------------------------------------------------
# C5: CATE recovery (Table 4 regime)
# ---------------------------------------------------------------------------


def test_c5_cate_recovery(full_run):
    _, out = full_run
    rep = json.loads((out / "cate_summary.json").read_text())
    push = rep["interventions"]["push->visit"]["spearman_logit_vs_trait"]
    sale = rep["interventions"]["sale1->purchase"]["spearman_logit_vs_trait"]
    baselines = [m for m in causal.ALL_METHODS if m != "Adapter"]

    push_margin = push["Adapter"]["gamma"] - max(push[m]["gamma"] for m in baselines)
    sale_margin = sale["Adapter"]["alpha"] - max(sale[m]["alpha"] for m in baselines)
    ok = (
        push_margin > 0
        and sale_margin > 0
        and push["Adapter"]["gamma"] >= 0.40
        and abs(push["Adapter"]["alpha"]) <= 0.25
        and sale["Adapter"]["alpha"] >= 0.35
        and sale["Adapter"]["alpha"] - sale["S"]["alpha"] >= 0.05
    )
    _report(
        "C5",
        ok,
        f"push:rho_gamma={push['Adapter']['gamma']:+.3f} (best baseline {max(push[m]['gamma'] for m in baselines):+.3f}), "
        f"rho_alpha={push['Adapter']['alpha']:+.3f} | sale1: rho_alpha={sale['Adapter']['alpha']:+.3f} "
        f"(best baseline {max(sale[m]['alpha'] for m in baselines):+.3f}, S={sale['S']['alpha']:+.3f})",
    )
    for m in baselines:
        assert push["Adapter"]["gamma"] > push[m]["gamma"], f"push->visit: {m} matches or beats the adapter"
        assert sale["Adapter"]["alpha"] > sale[m]["alpha"], f"sale1->purchase: {m} matches or beats the adapter"
    assert push["Adapter"]["gamma"] >= 0.40
    assert abs(push["Adapter"]["alpha"]) <= 0.25
    assert sale["Adapter"]["alpha"] >= 0.35
    assert sale["Adapter"]["alpha"] - sale["S"]["alpha"] >= 0.05


# ---------------------------------------------------------------------------
# C6: statistical-test calibration + frozen fixtures
# ---------------------------------------------------------------------------


def test_c6_test_calibration():
    rng = stream(2026, "null-calibration")
    reps = 1000
    alpha = 0.05
    rejections = {"paired_t": 0, "wilcoxon": 0, "welch": 0, "mann_whitney": 0}
    for _ in range(reps):
        d = rng.normal(size=50)
        a = rng.normal(size=50)
        b = rng.normal(size=50)
        rejections["paired_t"] += stats.paired_t(d).p_value < alpha
        rejections["wilcoxon"] += stats.wilcoxon_signed_rank(d).p_value < alpha
        rejections["welch"] += stats.welch_t(a, b).p_value < alpha
        rejections["mann_whitney"] += stats.mann_whitney(a, b).p_value < alpha
    rates = {k: v / reps for k, v in rejections.items()}

    from test_stats import FIXTURE_A, FIXTURE_B, FIXTURE_D, REFERENCE

    fx_ok = (
        abs(stats.paired_t(FIXTURE_D).statistic - REFERENCE["paired_t"][0]) < 1e-6
        and abs(stats.paired_t(FIXTURE_D).p_value - REFERENCE["paired_t"][1]) < 1e-4
        and abs(stats.welch_t(FIXTURE_A, FIXTURE_B).statistic - REFERENCE["welch_t"][0]) < 1e-6
        and abs(stats.welch_t(FIXTURE_A, FIXTURE_B).p_value - REFERENCE["welch_t"][1]) < 1e-4
        and abs(stats.wilcoxon_signed_rank(FIXTURE_D).p_value - REFERENCE["wilcoxon_w_plus"][1]) < 1e-4
        and abs(stats.mann_whitney(FIXTURE_A, FIXTURE_B).p_value - REFERENCE["mann_whitney_u1"][1]) < 1e-4
    )
    ok = all(0.03 <= r <= 0.07 for r in rates.values()) and fx_ok
    _report("C6", ok, " ".join(f"{k}={v:.3f}" for k, v in rates.items()) + f" fixtures={fx_ok}")
    for name, rate in rates.items():
        assert 0.03 <= rate <= 0.07, f"{name} null rejection rate {rate:.3f} outside [0.03, 0.07]"
    assert fx_ok


# ---------------------------------------------------------------------------
# C7: determinism and freeze discipline
# ---------------------------------------------------------------------------


def test_c7_determinism_and_freeze(full_run, full_run_repeat):
    cfg, out_a = full_run
    _, out_b = full_run_repeat

    identical = {}
    for name in (
        "world_model.ckpt",
        "adapter_visit.ckpt",
        "adapter_purchase.ckpt",
        "baseline_visit.ckpt",
        "baseline_purchase.ckpt",
        "summary.md",
        "auc_report.json",
        "cate_summary.json",
        "energy_report.json",
    ):
        identical[name] = (out_a / name).read_bytes() == (out_b / name).read_bytes()

    # freeze discipline: the checkpoint hash recorded when train-wm finished
    # still matches the file after every later stage ran
    meta = json.loads((out_a / "meta" / "train-wm.json").read_text())
    wm_unchanged = meta["outputs"]["world_model.ckpt"] == artifacts.file_hash(out_a / "world_model.ckpt")

    # adding the second adapter task does not perturb the first: retraining
    # the visit adapter in isolation reproduces the stage's checkpoint bytes
    ws = Workspace(cfg)
    panel = simgen.read_panel_csv(out_a / "panel.csv")
    b0, b1 = cfg.sim.split_boundaries
    train_mask = panel.day < b0
    val_mask = (panel.day >= b0) & (panel.day < b1)
    beliefs_meta = json.loads((out_a / "beliefs.json").read_text())
    values = np.fromfile(out_a / "beliefs.f64", dtype="<f8").reshape(
        beliefs_meta["n_rows"], beliefs_meta["n_cols"]
    )
    actions = np.stack([panel.sale1, panel.sale2, panel.campaign, panel.coupon, panel.push], 1).astype(float)
    features = np.hstack([values, actions])
    y = panel.visit.astype(float)
    solo = adapter.train_mlp(
        (features[train_mask], y[train_mask]),
        (features[val_mask], y[val_mask]),
        cfg.adapter_config("visit", "adapter"),
        input_kind="belief+action",
        schema_hash=beliefs_meta["schema_hash"],
    )
    solo_path = out_a / "adapter_visit_solo.ckpt"
    artifacts.save_mlp(solo, solo_path)
    adapter_independent = solo_path.read_bytes() == (out_a / "adapter_visit.ckpt").read_bytes()

    ok = all(identical.values()) and wm_unchanged and adapter_independent
    bad = [k for k, v in identical.items() if not v]
    _report(
        "C7",
        ok,
        f"byte-identical={'all' if not bad else 'FAILED:' + ','.join(bad)} "
        f"wm_hash_stable={wm_unchanged} first_adapter_independent={adapter_independent}",
    )
    assert not bad, f"double run differed: {bad}"
    assert wm_unchanged
    assert adapter_independent


# ---------------------------------------------------------------------------
# C8: encoder conformance over the full panel
# ---------------------------------------------------------------------------


def test_c8_encoder_conformance(full_run):
    _, out = full_run
    matrix, meta = encode.load_encoded(out / "encoded.bin", out / "encoded.bin.json")
    n_rows = matrix.shape[0]
    ok = matrix.shape == (373760, 72)

    blocks = ((0, 10), (11, 16), (16, 21), (21, 33), (33, 40))
    onehot_ok = all(np.all(matrix[:, lo:hi].sum(axis=1) == 1) for lo, hi in blocks)

    chain_ok = True
    for base in ("visited_within", "purchased_within"):
        w7, w14, w30 = (encode.FEATURE_INDEX[f"{base}_{w}d"] for w in (7, 14, 30))
        chain_ok &= bool(np.all(matrix[:, w7] <= matrix[:, w14]) and np.all(matrix[:, w14] <= matrix[:, w30]))
    for base in ("cum_visits", "cum_purchases"):
        c5, c10, c30 = (encode.FEATURE_INDEX[f"{base}_{c}plus"] for c in (5, 10, 30))
        chain_ok &= bool(np.all(matrix[:, c30] <= matrix[:, c10]) and np.all(matrix[:, c10] <= matrix[:, c5]))

    roundtrip_ok = True
    for bits in itertools.product((0, 1), repeat=5):
        action = simgen.ActionVector(*bits)
        rec = simgen.PanelRecord(0, 0, action, 100.0, 0, 0)
        roundtrip_ok &= encode.decode_action(encode.encode_action(rec)) == action

    ok = ok and onehot_ok and chain_ok and roundtrip_ok
    _report(
        "C8",
        ok,
        f"rows={n_rows} one_hot={onehot_ok} monotone_chains={chain_ok} action_roundtrip={roundtrip_ok}",
    )
    assert matrix.shape == (373760, 72)
    assert onehot_ok
    assert chain_ok
    assert roundtrip_ok
