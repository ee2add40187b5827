"""Counterfactual engine and uplift baselines.

Two routes to per-sample treatment effects:

* the belief adapter toggles one action bit while holding the belief fixed
  (the do-operator contract: the consumer-state representation cannot react
  to the intervention), reporting both logit-scale and risk-difference
  effects;
* five standard estimators on the raw features: S/T/X/DR meta-learners with
  random-forest base models and an honest causal forest. S and T expose a
  clipped log-odds scale too; X/DR/CF estimate risk differences directly,
  so their logit column equals the probability column.

The free-energy side: `delta_free_energy` scores how much less plausible
the frozen world model finds a clamped trajectory than the observed one.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import stats
from .adapter import MlpModel, predict_logits
from .ebm import DbmModel, dbm_free_energy_batch
from .encode import ACTION_NAMES, ClampSpec, clamp_matrix, clamp_visible
from .forest import ForestParams, causal_forest_fit, rf_fit, rf_predict
from .rng import stream, subseed

__all__ = [
    "CateEstimate",
    "CateReport",
    "EnergyReport",
    "META_METHODS",
    "ALL_METHODS",
    "PROPENSITY_CLIP",
    "PROB_CLIP",
    "adapter_cate",
    "adapter_cate_batch",
    "delta_free_energy",
    "delta_free_energy_batch",
    "dr_pseudo_outcome",
    "meta_cate",
    "causal_forest_cate",
    "run_cate_experiment",
    "run_energy_experiment",
    "rf_fit",
    "rf_predict",
]

META_METHODS = ("S", "T", "XL", "DR")
ALL_METHODS = ("S", "T", "XL", "DR", "CF", "Adapter")
PROPENSITY_CLIP = 0.01
PROB_CLIP = 1e-6
TRAIT_NAMES = ("alpha", "beta", "gamma")


@dataclass(frozen=True)
class CateEstimate:
    consumer_id: int
    day: int
    method: str
    intervention: str
    tau_prob: float
    tau_logit: float

    def __post_init__(self):
        if not -1.0 <= self.tau_prob <= 1.0:
            raise ValueError("risk difference outside [-1, 1]")


@dataclass
class CateReport:
    intervention: str
    treatment: str
    outcome: str
    consumer_id: np.ndarray
    day: np.ndarray
    tau_prob: dict
    tau_logit: dict
    spearman: dict  # method -> {alpha, beta, gamma}
    n_test: int

    def estimates(self, method: str):
        tp = self.tau_prob[method]
        tl = self.tau_logit[method]
        return [
            CateEstimate(int(self.consumer_id[i]), int(self.day[i]), method, self.intervention, float(tp[i]), float(tl[i]))
            for i in range(self.n_test)
        ]


@dataclass
class EnergyReport:
    split: str
    eligible_n: int
    mean_delta: float
    sd_delta: float
    paired_t: float
    paired_t_p: float
    wilcoxon_p: float
    n_high: int
    n_low: int
    mean_high: float
    sd_high: float
    mean_low: float
    sd_low: float
    welch_t: float
    welch_p: float
    mann_whitney_p: float

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _logit(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)
    return np.log(p / (1.0 - p))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


# ---------------------------------------------------------------------------
# adapter counterfactuals
# ---------------------------------------------------------------------------

def adapter_cate_batch(model: MlpModel, beliefs: np.ndarray, actions: np.ndarray, j: int):
    """Toggle action component ``j`` with the belief held fixed.

    Returns (tau_logit, tau_prob) arrays; one arm always reproduces the
    factual prediction exactly because only the single bit differs.
    """
    if not 0 <= j < len(ACTION_NAMES):
        raise ValueError(f"action component {j} out of range")
    beliefs = np.atleast_2d(np.asarray(beliefs, dtype=np.float64))
    actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    z1 = actions.copy()
    z1[:, j] = 1.0
    z0 = actions.copy()
    z0[:, j] = 0.0
    logit1 = predict_logits(model, np.hstack([beliefs, z1]))
    logit0 = predict_logits(model, np.hstack([beliefs, z0]))
    return logit1 - logit0, _sigmoid(logit1) - _sigmoid(logit0)


def adapter_cate(model: MlpModel, b, z, j: int, consumer_id: int = -1, day: int = -1, intervention: str = "") -> CateEstimate:
    values = b.values if hasattr(b, "values") else np.asarray(b, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    tau_logit, tau_prob = adapter_cate_batch(model, values[None, :], z[None, :], j)
    return CateEstimate(consumer_id, day, "Adapter", intervention or ACTION_NAMES[j], float(tau_prob[0]), float(tau_logit[0]))


# ---------------------------------------------------------------------------
# free-energy clamps
# ---------------------------------------------------------------------------

def delta_free_energy(model: DbmModel, v: np.ndarray, spec: ClampSpec):
    """(F(v_clamped) - F(v), eligible) for one visible vector; ineligible
    samples return (nan, 0) and are excluded from any aggregate."""
    if not model.frozen:
        raise ValueError("free-energy probes require a frozen world model")
    v_clamped, eligible = clamp_visible(v, spec)
    if not eligible:
        return float("nan"), 0
    f = dbm_free_energy_batch(model, np.stack([v_clamped, np.asarray(v)]).astype(np.float64))
    return float(f[0] - f[1]), 1


def delta_free_energy_batch(model: DbmModel, matrix: np.ndarray, spec: ClampSpec, chunk: int = 4096):
    """Per-row delta-F over eligible rows. Returns (delta, eligible_mask)
    with delta aligned to eligible rows only."""
    if not model.frozen:
        raise ValueError("free-energy probes require a frozen world model")
    clamped, eligible = clamp_matrix(matrix, spec)
    rows = np.flatnonzero(eligible)
    orig = matrix[rows].astype(np.float64)
    new = clamped[rows].astype(np.float64)
    delta = np.empty(rows.size, dtype=np.float64)
    for lo in range(0, rows.size, chunk):
        hi = min(lo + chunk, rows.size)
        f_new = dbm_free_energy_batch(model, new[lo:hi])
        f_old = dbm_free_energy_batch(model, orig[lo:hi])
        delta[lo:hi] = f_new - f_old
    return delta, eligible


# ---------------------------------------------------------------------------
# meta-learners on raw features
# ---------------------------------------------------------------------------

def _check_arms(t: np.ndarray) -> None:
    if t.min() == t.max():
        raise ValueError("both treatment arms must be present in training data")


def _fp(params: ForestParams, name: str, base_seed: int) -> ForestParams:
    from dataclasses import replace

    return replace(params, seed=subseed(base_seed, name))


def dr_pseudo_outcome(mu1, mu0, e, t, y) -> np.ndarray:
    """Doubly robust pseudo-outcome; reduces to mu1 - mu0 when residuals
    vanish (y == mu_t(x))."""
    mu1 = np.asarray(mu1, dtype=np.float64)
    mu0 = np.asarray(mu0, dtype=np.float64)
    e = np.clip(np.asarray(e, dtype=np.float64), PROPENSITY_CLIP, 1.0 - PROPENSITY_CLIP)
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return mu1 - mu0 + t * (y - mu1) / e - (1.0 - t) * (y - mu0) / (1.0 - e)


def meta_cate(method: str, features, treatment, outcome, test_features, params: ForestParams | None = None, seed: int = 0):
    """S/T/X/DR-learner effects on the test features.

    Returns (tau_prob, tau_logit). S and T convert arm probabilities to a
    clipped log-odds scale; XL and DR work on risk differences, so both
    scales coincide for them.
    """
    if method not in META_METHODS:
        raise ValueError(f"unknown meta-learner {method!r}")
    x = np.asarray(features, dtype=np.float64)
    t = np.asarray(treatment).astype(np.int8).reshape(-1)
    y = np.asarray(outcome, dtype=np.float64).reshape(-1)
    xt = np.asarray(test_features, dtype=np.float64)
    _check_arms(t)
    params = params or ForestParams()

    if method == "S":
        model = rf_fit(np.hstack([x, t[:, None].astype(np.float64)]), y, "probability", _fp(params, "S-outcome", seed))
        mu1 = rf_predict(model, np.hstack([xt, np.ones((xt.shape[0], 1))]))
        mu0 = rf_predict(model, np.hstack([xt, np.zeros((xt.shape[0], 1))]))
        return mu1 - mu0, _logit(mu1) - _logit(mu0)

    if method == "T":
        m1 = rf_fit(x[t == 1], y[t == 1], "probability", _fp(params, "T-treated", seed))
        m0 = rf_fit(x[t == 0], y[t == 0], "probability", _fp(params, "T-control", seed))
        mu1 = rf_predict(m1, xt)
        mu0 = rf_predict(m0, xt)
        return mu1 - mu0, _logit(mu1) - _logit(mu0)

    if method == "XL":
        m1 = rf_fit(x[t == 1], y[t == 1], "probability", _fp(params, "XL-treated", seed))
        m0 = rf_fit(x[t == 0], y[t == 0], "probability", _fp(params, "XL-control", seed))
        d1 = y[t == 1] - rf_predict(m0, x[t == 1])
        d0 = rf_predict(m1, x[t == 0]) - y[t == 0]
        tau1 = rf_fit(x[t == 1], d1, "regression", _fp(params, "XL-tau1", seed))
        tau0 = rf_fit(x[t == 0], d0, "regression", _fp(params, "XL-tau0", seed))
        prop = rf_fit(x, t.astype(np.float64), "probability", _fp(params, "XL-propensity", seed))
        e = np.clip(rf_predict(prop, xt), PROPENSITY_CLIP, 1.0 - PROPENSITY_CLIP)
        tau = e * rf_predict(tau0, xt) + (1.0 - e) * rf_predict(tau1, xt)
        tau = np.clip(tau, -1.0, 1.0)
        return tau, tau.copy()

    # DR-learner with 2-fold cross-fitting for the nuisances
    n = x.shape[0]
    perm = stream(seed, "dr-folds").permutation(n)
    fold = np.zeros(n, dtype=np.int8)
    fold[perm[n // 2 :]] = 1
    phi = np.empty(n, dtype=np.float64)
    for k in (0, 1):
        fit_idx = fold != k
        pred_idx = fold == k
        _check_arms(t[fit_idx])
        m1 = rf_fit(x[fit_idx & (t == 1)], y[fit_idx & (t == 1)], "probability", _fp(params, f"DR-treated-{k}", seed))
        m0 = rf_fit(x[fit_idx & (t == 0)], y[fit_idx & (t == 0)], "probability", _fp(params, f"DR-control-{k}", seed))
        prop = rf_fit(x[fit_idx], t[fit_idx].astype(np.float64), "probability", _fp(params, f"DR-propensity-{k}", seed))
        mu1 = rf_predict(m1, x[pred_idx])
        mu0 = rf_predict(m0, x[pred_idx])
        e = rf_predict(prop, x[pred_idx])
        phi[pred_idx] = dr_pseudo_outcome(mu1, mu0, e, t[pred_idx], y[pred_idx])
    final = rf_fit(x, phi, "regression", _fp(params, "DR-final", seed))
    tau = np.clip(rf_predict(final, xt), -1.0, 1.0)
    return tau, tau.copy()


def causal_forest_cate(features, treatment, outcome, test_features, params: ForestParams | None = None, seed: int = 0):
    params = params or ForestParams()
    model = causal_forest_fit(features, treatment, outcome, _fp(params, "CF", seed))
    tau = np.clip(rf_predict(model, np.asarray(test_features, dtype=np.float64)), -1.0, 1.0)
    return tau, tau.copy()


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def _spearman_or_zero(tau: np.ndarray, trait: np.ndarray) -> float:
    try:
        return stats.spearman(tau, trait)
    except ValueError:
        return 0.0  # constant estimates: all ranks tied


def build_meta_features(visible: np.ndarray, actions: np.ndarray, treatment_idx: int):
    """72 raw visible bits plus the 4 non-intervened action bits; the
    intervened action is the treatment indicator."""
    keep = [k for k in range(actions.shape[1]) if k != treatment_idx]
    features = np.hstack([visible, actions[:, keep]]).astype(np.float64)
    return features, actions[:, treatment_idx].astype(np.int8)


def run_cate_experiment(
    intervention: str,
    adapter_model: MlpModel,
    train_visible: np.ndarray,
    train_actions: np.ndarray,
    train_outcome: np.ndarray,
    test_visible: np.ndarray,
    test_actions: np.ndarray,
    test_beliefs: np.ndarray,
    test_consumer_id: np.ndarray,
    test_day: np.ndarray,
    traits_by_consumer: dict,
    forest_params: ForestParams | None = None,
    seed: int = 0,
    methods=ALL_METHODS,
    aggregate: str = "sample",
) -> CateReport:
    """Per-sample effects for all six methods plus the Spearman recovery
    table against the ground-truth latent traits.

    ``aggregate="consumer"`` averages each method's logit-scale effects per
    consumer before the rank correlation; the default correlates per sample.
    """
    treatment_name, outcome_name = [s.strip() for s in intervention.split("->")]
    j = ACTION_NAMES.index(treatment_name)
    forest_params = forest_params or ForestParams()

    x_train, t_train = build_meta_features(train_visible, train_actions, j)
    x_test, _ = build_meta_features(test_visible, test_actions, j)
    y_train = np.asarray(train_outcome, dtype=np.float64)

    tau_prob: dict = {}
    tau_logit: dict = {}
    for method in methods:
        if method == "Adapter":
            tl, tp = adapter_cate_batch(adapter_model, test_beliefs, test_actions, j)
        elif method == "CF":
            tp, tl = causal_forest_cate(x_train, t_train, y_train, x_test, forest_params, subseed(seed, intervention, "CF"))
        else:
            tp, tl = meta_cate(method, x_train, t_train, y_train, x_test, forest_params, subseed(seed, intervention, method))
        tau_prob[method] = tp
        tau_logit[method] = tl

    if aggregate == "consumer":
        ids = np.unique(np.asarray(test_consumer_id))
        trait_cols = {
            name: np.array([getattr(traits_by_consumer[int(c)], name) for c in ids])
            for name in TRAIT_NAMES
        }
        pos = {int(c): k for k, c in enumerate(ids)}
        rows = np.array([pos[int(c)] for c in test_consumer_id])
        counts = np.bincount(rows, minlength=ids.size).astype(np.float64)
        rho_inputs = {
            m: np.bincount(rows, weights=tau_logit[m], minlength=ids.size) / counts for m in methods
        }
    elif aggregate == "sample":
        trait_cols = {
            name: np.array([getattr(traits_by_consumer[int(c)], name) for c in test_consumer_id])
            for name in TRAIT_NAMES
        }
        rho_inputs = tau_logit
    else:
        raise ValueError(f"unknown aggregation {aggregate!r}")
    spearman_table = {
        method: {name: _spearman_or_zero(rho_inputs[method], trait_cols[name]) for name in TRAIT_NAMES}
        for method in methods
    }
    return CateReport(
        intervention=intervention,
        treatment=treatment_name,
        outcome=outcome_name,
        consumer_id=np.asarray(test_consumer_id),
        day=np.asarray(test_day),
        tau_prob=tau_prob,
        tau_logit=tau_logit,
        spearman=spearman_table,
        n_test=x_test.shape[0],
    )


def run_energy_experiment(
    model: DbmModel,
    encoded: np.ndarray,
    consumer_id: np.ndarray,
    spec: ClampSpec,
    traits_by_consumer: dict,
    split_name: str,
) -> EnergyReport:
    """Clamp probe for one split: delta-F against zero, plus the comparison
    between high- and low-base-preference groups (median split on the
    ground-truth beta over the split's eligible samples)."""
    delta, eligible = delta_free_energy_batch(model, encoded, spec)
    rows = np.flatnonzero(eligible)
    beta = np.array([traits_by_consumer[int(c)].beta for c in consumer_id[rows]])
    median = float(np.median(beta))
    high = beta > median
    d_high = delta[high]
    d_low = delta[~high]
    t_res = stats.paired_t(delta)
    w_res = stats.wilcoxon_signed_rank(delta)
    welch = stats.welch_t(d_high, d_low)
    mw = stats.mann_whitney(d_high, d_low)
    return EnergyReport(
        split=split_name,
        eligible_n=int(rows.size),
        mean_delta=float(delta.mean()),
        sd_delta=float(delta.std(ddof=1)),
        paired_t=t_res.statistic,
        paired_t_p=t_res.p_value,
        wilcoxon_p=w_res.p_value,
        n_high=int(d_high.size),
        n_low=int(d_low.size),
        mean_high=float(d_high.mean()),
        sd_high=float(d_high.std(ddof=1)),
        mean_low=float(d_low.mean()),
        sd_low=float(d_low.std(ddof=1)),
        welch_t=welch.statistic,
        welch_p=welch.p_value,
        mann_whitney_p=mw.p_value,
    )
