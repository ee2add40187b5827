"""Bernoulli-Bernoulli RBM/DBM world model.

The deep model stacks three hidden layers (64-32-16 over the 72 visible
bits). Training is the classic two-stage recipe: greedy layerwise RBM
pretraining with doubled inputs on the non-boundary sides, then joint
persistent-contrastive-divergence fine-tuning with mean-field inference for
the data-dependent statistics. Once frozen, the model serves three duties:
variational free-energy scoring, mean-field belief extraction, and the
counterfactual clamp probes built on both.

Free energy of the full DBM is intractable exactly, so ``dbm_free_energy``
returns the mean-field variational bound F_var(v) = E_q[E(v,h)] - H(q),
which coincides with the closed form for a single hidden layer and
upper-bounds the true free energy in general; ``dbm_free_energy_exact``
enumerates hidden states for small models and backs the oracle tests.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .optim import Adam
from .rng import stream

__all__ = [
    "RbmLayer",
    "DbmModel",
    "MeanFieldState",
    "Belief",
    "DbmTrainConfig",
    "FrozenModelError",
    "NotFrozenError",
    "joint_energy",
    "rbm_free_energy",
    "rbm_free_energy_exact",
    "mean_field",
    "mean_field_batch",
    "dbm_free_energy",
    "dbm_free_energy_batch",
    "dbm_free_energy_exact",
    "pcd_update",
    "pretrain_stack",
    "finetune_dbm",
    "belief",
    "belief_matrix",
    "reconstruction_cross_entropy",
    "init_dbm",
]

MF_DAMPING = 0.5
MF_TOL = 1e-4
MF_MAX_ITERS = 50
_EPS = 1e-12


class FrozenModelError(RuntimeError):
    """Raised when training touches a frozen world model."""


class NotFrozenError(RuntimeError):
    """Raised when beliefs are requested from a model that is still training."""


def _sigmoid(x):
    # clipping at +-500 is exact: the sigmoid saturates in float64 near +-37
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500.0, 500.0)))


def _softplus(x):
    return np.logaddexp(0.0, x)


@dataclass
class RbmLayer:
    """One bipartite layer: weights (lower_dim x upper_dim) plus both biases."""

    weights: np.ndarray
    bias_lower: np.ndarray
    bias_upper: np.ndarray

    def __post_init__(self):
        lo, up = self.weights.shape
        if self.bias_lower.shape != (lo,) or self.bias_upper.shape != (up,):
            raise ValueError("bias dimensions inconsistent with weight matrix")
        for arr in (self.weights, self.bias_lower, self.bias_upper):
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite layer parameters")

    @property
    def lower_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def upper_dim(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "RbmLayer":
        return RbmLayer(self.weights.copy(), self.bias_lower.copy(), self.bias_upper.copy())


@dataclass
class DbmModel:
    """Stacked Boltzmann machine; layers[i].bias_upper is the bias of hidden
    layer i+1 and layers[0].bias_lower the visible bias."""

    layers: list
    frozen: bool = False
    schema_hash: str = ""

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.upper_dim != b.lower_dim:
                raise ValueError("adjacent layer dimensions do not match")

    @property
    def layer_sizes(self) -> tuple:
        return (self.layers[0].lower_dim, *[l.upper_dim for l in self.layers])

    @property
    def n_hidden_layers(self) -> int:
        return len(self.layers)

    @property
    def visible_bias(self) -> np.ndarray:
        return self.layers[0].bias_lower

    def hidden_bias(self, ell: int) -> np.ndarray:
        return self.layers[ell - 1].bias_upper

    def weight(self, ell: int) -> np.ndarray:
        return self.layers[ell - 1].weights

    def copy(self) -> "DbmModel":
        return DbmModel([l.copy() for l in self.layers], self.frozen, self.schema_hash)

    def freeze(self) -> "DbmModel":
        return DbmModel([l.copy() for l in self.layers], True, self.schema_hash)

    def param_dict(self) -> dict:
        params = {"b_v": self.layers[0].bias_lower}
        for i, layer in enumerate(self.layers, start=1):
            params[f"W{i}"] = layer.weights
            params[f"b{i}"] = layer.bias_upper
        return params


@dataclass
class MeanFieldState:
    mu: list
    iterations_used: int
    converged: bool


@dataclass(frozen=True)
class Belief:
    values: np.ndarray
    schema_hash: str = ""

    def __post_init__(self):
        if np.any(self.values <= 0.0) or np.any(self.values >= 1.0):
            raise ValueError("belief entries must lie in the open interval (0, 1)")


@dataclass(frozen=True)
class DbmTrainConfig:
    layer_sizes: tuple = (72, 64, 32, 16)
    batch_size: int = 256
    n_chains: int = 128
    gibbs_k: int = 5
    lr_pretrain: float = 1e-3
    lr_finetune: float = 2e-4
    epochs_pretrain: int = 15
    epochs_finetune: int = 20
    weight_init_sd: float = 0.01
    mf_tol: float = MF_TOL
    mf_max_iters: int = MF_MAX_ITERS
    mf_damping: float = MF_DAMPING
    gap_patience: int = 10
    gap_margin: float = 0.5
    monitor_rows: int = 4096
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "DbmTrainConfig":
        d = dict(d)
        if "layer_sizes" in d:
            d["layer_sizes"] = tuple(d["layer_sizes"])
        return cls(**d)


# ---------------------------------------------------------------------------
# energies
# ---------------------------------------------------------------------------

def joint_energy(model: DbmModel, v: np.ndarray, hs: list) -> float:
    """E(v, h) = -v'W1h1 - sum_l h_l'W_{l+1}h_{l+1} - b_v'v - sum_l b_l'h_l."""
    v = np.asarray(v, dtype=np.float64)
    hs = [np.asarray(h, dtype=np.float64) for h in hs]
    sizes = model.layer_sizes
    if v.shape != (sizes[0],):
        raise ValueError(f"visible dim {v.shape} != {sizes[0]}")
    if len(hs) != model.n_hidden_layers:
        raise ValueError("wrong number of hidden layers")
    for h, d in zip(hs, sizes[1:]):
        if h.shape != (d,):
            raise ValueError("hidden layer dimension mismatch")
    units = [v] + hs
    e = -float(model.visible_bias @ v)
    for ell in range(1, model.n_hidden_layers + 1):
        e -= float(units[ell - 1] @ model.weight(ell) @ units[ell])
        e -= float(model.hidden_bias(ell) @ units[ell])
    return e


def rbm_free_energy(layer: RbmLayer, v: np.ndarray) -> np.ndarray:
    """Closed-form RBM free energy, stable via log1p-exp; accepts a vector
    or a matrix of visible configurations."""
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    if v.shape[1] != layer.lower_dim:
        raise ValueError("visible dimension mismatch")
    pre = v @ layer.weights + layer.bias_upper
    fe = -(v @ layer.bias_lower) - np.sum(_softplus(pre), axis=1)
    return fe if fe.size > 1 else float(fe[0])


def _enumerate_configs(dim: int) -> np.ndarray:
    return np.array(list(itertools.product((0.0, 1.0), repeat=dim)), dtype=np.float64)


def rbm_free_energy_exact(layer: RbmLayer, v: np.ndarray) -> float:
    """-log sum_h exp(-E(v, h)) by brute-force enumeration (oracle)."""
    v = np.asarray(v, dtype=np.float64)
    configs = _enumerate_configs(layer.upper_dim)
    energies = -(v @ layer.weights + layer.bias_upper) @ configs.T - (v @ layer.bias_lower)
    return float(-_logsumexp_rows(-energies[None, :])[0])


def dbm_free_energy_exact(model: DbmModel, v: np.ndarray) -> float:
    """Exact free energy by transfer-matrix enumeration over hidden configs.

    Tractable for total hidden dimension around 20 or below.
    """
    v = np.asarray(v, dtype=np.float64)
    sizes = model.layer_sizes
    if sum(sizes[1:]) > 24:
        raise ValueError("exact enumeration limited to ~24 total hidden units")
    configs = [_enumerate_configs(d) for d in sizes[1:]]
    log_m = np.zeros(configs[-1].shape[0])
    for ell in range(model.n_hidden_layers, 1, -1):
        c_lo = configs[ell - 2]
        c_hi = configs[ell - 1]
        scores = c_lo @ model.weight(ell) @ c_hi.T + c_hi @ model.hidden_bias(ell) + log_m
        log_m = _logsumexp_rows(scores)
    q1 = v @ model.weight(1) + model.hidden_bias(1)
    scores = configs[0] @ q1 + log_m
    return float(-(model.visible_bias @ v) - _logsumexp_rows(scores[None, :])[0])


def _logsumexp_rows(x: np.ndarray) -> np.ndarray:
    m = np.max(x, axis=1, keepdims=True)
    return (m + np.log(np.sum(np.exp(x - m), axis=1, keepdims=True)))[:, 0]


# ---------------------------------------------------------------------------
# mean-field inference
# ---------------------------------------------------------------------------

def _mf_init(model: DbmModel, v2: np.ndarray) -> list:
    mus = []
    prev = v2
    for ell in range(1, model.n_hidden_layers + 1):
        prev = _sigmoid(prev @ model.weight(ell) + model.hidden_bias(ell))
        mus.append(prev)
    return mus


def mean_field_batch(
    model: DbmModel,
    v: np.ndarray,
    max_iters: int = MF_MAX_ITERS,
    tol: float = MF_TOL,
    damping: float = MF_DAMPING,
):
    """Damped fixed-point mean field over a batch of visible rows.

    Alternates odd layers (given even neighbours) and even layers; stops
    when the undamped residual max|sigmoid(messages) - mu| drops below
    ``tol`` on every row. Returns (mus, iterations_used, converged_mask).
    """
    v2 = np.atleast_2d(np.asarray(v, dtype=np.float64))
    n = v2.shape[0]
    big_l = model.n_hidden_layers
    mus = _mf_init(model, v2)
    iters_used = np.zeros(n, dtype=np.int32)
    converged = np.zeros(n, dtype=bool)
    for it in range(1, max_iters + 1):
        resid = np.zeros(n)
        # odd layers depend only on even layers (visible = layer 0)
        for ell in range(1, big_l + 1, 2):
            below = v2 if ell == 1 else mus[ell - 2]
            pre = below @ model.weight(ell) + model.hidden_bias(ell)
            if ell < big_l:
                pre = pre + mus[ell] @ model.weight(ell + 1).T
            target = _sigmoid(pre)
            resid = np.maximum(resid, np.max(np.abs(target - mus[ell - 1]), axis=1))
            mus[ell - 1] = (1.0 - damping) * mus[ell - 1] + damping * target
        for ell in range(2, big_l + 1, 2):
            pre = mus[ell - 2] @ model.weight(ell) + model.hidden_bias(ell)
            if ell < big_l:
                pre = pre + mus[ell] @ model.weight(ell + 1).T
            target = _sigmoid(pre)
            resid = np.maximum(resid, np.max(np.abs(target - mus[ell - 1]), axis=1))
            mus[ell - 1] = (1.0 - damping) * mus[ell - 1] + damping * target
        newly = (~converged) & (resid < tol)
        iters_used[newly] = it
        converged |= newly
        if np.all(converged):
            break
    iters_used[~converged] = max_iters
    return mus, iters_used, converged


def mean_field(
    model: DbmModel,
    v: np.ndarray,
    max_iters: int = MF_MAX_ITERS,
    tol: float = MF_TOL,
    damping: float = MF_DAMPING,
) -> MeanFieldState:
    mus, iters, conv = mean_field_batch(model, v, max_iters, tol, damping)
    return MeanFieldState([m[0] for m in mus], int(iters[0]), bool(conv[0]))


def _entropy(mu: np.ndarray) -> np.ndarray:
    m = np.clip(mu, _EPS, 1.0 - _EPS)
    return -(m * np.log(m) + (1.0 - m) * np.log1p(-m))


def dbm_free_energy_batch(model: DbmModel, v: np.ndarray, mus: list | None = None, **mf_kw) -> np.ndarray:
    """Variational free energy F_var(v) = E_q[E(v,h)] - H(q) at the
    mean-field fixed point, one value per row."""
    v2 = np.atleast_2d(np.asarray(v, dtype=np.float64))
    if mus is None:
        mus, _, _ = mean_field_batch(model, v2, **mf_kw)
    units = [v2] + list(mus)
    e_q = -(v2 @ model.visible_bias)
    for ell in range(1, model.n_hidden_layers + 1):
        e_q -= np.sum((units[ell - 1] @ model.weight(ell)) * units[ell], axis=1)
        e_q -= units[ell] @ model.hidden_bias(ell)
    entropy = sum(np.sum(_entropy(m), axis=1) for m in mus)
    return e_q - entropy


def dbm_free_energy(model: DbmModel, v: np.ndarray, **mf_kw) -> float:
    return float(dbm_free_energy_batch(model, v, **mf_kw)[0])


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def init_rbm(n_lower: int, n_upper: int, rng: np.random.Generator, weight_sd: float = 0.01, lower_means=None) -> RbmLayer:
    w = rng.normal(0.0, weight_sd, size=(n_lower, n_upper))
    b_lo = np.zeros(n_lower)
    if lower_means is not None:
        m = np.clip(lower_means, 1e-4, 1.0 - 1e-4)
        b_lo = np.log(m / (1.0 - m))
    return RbmLayer(w, b_lo, np.zeros(n_upper))


def init_dbm(layer_sizes, rng: np.random.Generator, weight_sd: float = 0.01, visible_means=None, schema_hash: str = "") -> DbmModel:
    layers = []
    for i, (lo, up) in enumerate(zip(layer_sizes, layer_sizes[1:])):
        layers.append(init_rbm(lo, up, rng, weight_sd, visible_means if i == 0 else None))
    return DbmModel(layers, frozen=False, schema_hash=schema_hash)


def _rbm_hidden_prob(layer: RbmLayer, v: np.ndarray, up_factor: float) -> np.ndarray:
    return _sigmoid(up_factor * (v @ layer.weights) + layer.bias_upper)


def _rbm_visible_prob(layer: RbmLayer, h: np.ndarray, down_factor: float) -> np.ndarray:
    return _sigmoid(down_factor * (h @ layer.weights.T) + layer.bias_lower)


def pcd_update(
    layer_or_model,
    batch: np.ndarray,
    chains,
    lr: float,
    k: int = 5,
    adam: Adam | None = None,
    rng: np.random.Generator | None = None,
    up_factor: float = 1.0,
    down_factor: float = 1.0,
    mf_kw: dict | None = None,
):
    """One persistent-contrastive-divergence step.

    Data statistics use the exact conditional (RBM) or mean-field (DBM);
    model statistics come from ``k`` Gibbs sweeps on the persistent chains,
    which are advanced in place. Parameters move by an Adam step on the
    negative log-likelihood gradient estimate. Returns the ascent-direction
    gradient dict (data minus fantasy statistics).
    """
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if batch.shape[0] == 0:
        raise ValueError("empty batch")
    rng = rng or np.random.default_rng(0)
    if isinstance(layer_or_model, RbmLayer):
        return _pcd_update_rbm(layer_or_model, batch, chains, lr, k, adam, rng, up_factor, down_factor)
    if isinstance(layer_or_model, DbmModel):
        if layer_or_model.frozen:
            raise FrozenModelError("cannot train a frozen world model")
        return _pcd_update_dbm(layer_or_model, batch, chains, lr, k, adam, rng, mf_kw)
    raise TypeError("expected RbmLayer or DbmModel")


def _pcd_update_rbm(layer, batch, chains, lr, k, adam, rng, up_factor, down_factor):
    n = batch.shape[0]
    h_data = _rbm_hidden_prob(layer, batch, up_factor)
    v_f = chains["v"]
    for _ in range(k):
        h_p = _rbm_hidden_prob(layer, v_f, up_factor)
        h_s = (rng.random(h_p.shape) < h_p).astype(np.float64)
        v_p = _rbm_visible_prob(layer, h_s, down_factor)
        v_f = (rng.random(v_p.shape) < v_p).astype(np.float64)
    chains["v"] = v_f
    h_f = _rbm_hidden_prob(layer, v_f, up_factor)
    c = v_f.shape[0]
    grad = {
        "W": batch.T @ h_data / n - v_f.T @ h_f / c,
        "b_lower": batch.mean(axis=0) - v_f.mean(axis=0),
        "b_upper": h_data.mean(axis=0) - h_f.mean(axis=0),
    }
    if adam is None:
        adam = Adam(lr)
    adam.lr = lr
    params = {"W": layer.weights, "b_lower": layer.bias_lower, "b_upper": layer.bias_upper}
    adam.step(params, {key: -g for key, g in grad.items()})
    return grad


def _gibbs_sweep_dbm(model: DbmModel, state: dict, rng: np.random.Generator) -> None:
    big_l = model.n_hidden_layers
    units = [state["v"]] + [state[f"h{i}"] for i in range(1, big_l + 1)]
    # odd hidden layers given even neighbours
    for ell in range(1, big_l + 1, 2):
        pre = units[ell - 1] @ model.weight(ell) + model.hidden_bias(ell)
        if ell < big_l:
            pre = pre + units[ell + 1] @ model.weight(ell + 1).T
        units[ell] = (rng.random(pre.shape) < _sigmoid(pre)).astype(np.float64)
    # even hidden layers
    for ell in range(2, big_l + 1, 2):
        pre = units[ell - 1] @ model.weight(ell) + model.hidden_bias(ell)
        if ell < big_l:
            pre = pre + units[ell + 1] @ model.weight(ell + 1).T
        units[ell] = (rng.random(pre.shape) < _sigmoid(pre)).astype(np.float64)
    # visible
    pre_v = units[1] @ model.weight(1).T + model.visible_bias
    units[0] = (rng.random(pre_v.shape) < _sigmoid(pre_v)).astype(np.float64)
    state["v"] = units[0]
    for i in range(1, big_l + 1):
        state[f"h{i}"] = units[i]


def _pcd_update_dbm(model, batch, chains, lr, k, adam, rng, mf_kw=None):
    n = batch.shape[0]
    mus, _, _ = mean_field_batch(model, batch, **(mf_kw or {}))
    for _ in range(k):
        _gibbs_sweep_dbm(model, chains, rng)
    c = chains["v"].shape[0]
    units_d = [batch] + list(mus)
    units_f = [chains["v"]] + [chains[f"h{i}"] for i in range(1, model.n_hidden_layers + 1)]
    grad = {"b_v": units_d[0].mean(axis=0) - units_f[0].mean(axis=0)}
    for ell in range(1, model.n_hidden_layers + 1):
        grad[f"W{ell}"] = units_d[ell - 1].T @ units_d[ell] / n - units_f[ell - 1].T @ units_f[ell] / c
        grad[f"b{ell}"] = units_d[ell].mean(axis=0) - units_f[ell].mean(axis=0)
    if adam is None:
        adam = Adam(lr)
    adam.lr = lr
    adam.step(model.param_dict(), {key: -g for key, g in grad.items()})
    return grad


def reconstruction_cross_entropy(layer: RbmLayer, v: np.ndarray, up_factor: float = 1.0, down_factor: float = 1.0) -> float:
    """Mean binary cross-entropy of the one-step deterministic reconstruction."""
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    h = _rbm_hidden_prob(layer, v, up_factor)
    v_rec = np.clip(_rbm_visible_prob(layer, h, down_factor), _EPS, 1.0 - _EPS)
    return float(-np.mean(v * np.log(v_rec) + (1.0 - v) * np.log1p(-v_rec)))


def _train_rbm(data, n_upper, cfg: DbmTrainConfig, rng_key, up_factor, down_factor, epochs=None):
    """PCD training loop for one RBM in the stack."""
    rng_init = stream(cfg.seed, rng_key, "init")
    rng_gibbs = stream(cfg.seed, rng_key, "gibbs")
    rng_shuffle = stream(cfg.seed, rng_key, "shuffle")
    layer = init_rbm(data.shape[1], n_upper, rng_init, cfg.weight_init_sd, data.mean(axis=0))
    chains = {"v": (rng_init.random((cfg.n_chains, data.shape[1])) < 0.5).astype(np.float64)}
    adam = Adam(cfg.lr_pretrain)
    n = data.shape[0]
    for _ in range(epochs if epochs is not None else cfg.epochs_pretrain):
        order = rng_shuffle.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            pcd_update(
                layer,
                data[idx],
                chains,
                cfg.lr_pretrain,
                cfg.gibbs_k,
                adam,
                rng_gibbs,
                up_factor,
                down_factor,
            )
    return layer


def pretrain_stack(train: np.ndarray, layer_sizes=(72, 64, 32, 16), config: DbmTrainConfig | None = None, schema: str = "") -> DbmModel:
    """Greedy layerwise pretraining.

    Each adjacent pair is an RBM trained on the mean activations of the
    layer below. Non-boundary sides use doubled inputs (bottom RBM doubles
    bottom-up, top RBM doubles top-down, middles both), compensating for the
    double connectivity each intermediate layer has inside the stack.
    """
    cfg = config or DbmTrainConfig(layer_sizes=tuple(layer_sizes))
    sizes = tuple(layer_sizes)
    data = np.asarray(train, dtype=np.float64)
    if data.shape[1] != sizes[0]:
        raise ValueError("training matrix width does not match visible size")
    n_rbms = len(sizes) - 1
    layers = []
    for i in range(n_rbms):
        up_factor = 2.0 if (n_rbms > 1 and i < n_rbms - 1) else 1.0
        down_factor = 2.0 if (n_rbms > 1 and i > 0) else 1.0
        layer = _train_rbm(data, sizes[i + 1], cfg, f"pretrain-{i}", up_factor, down_factor)
        layers.append(layer)
        if i < n_rbms - 1:
            data = _rbm_hidden_prob(layer, data, up_factor)
    for layer in layers[1:]:
        # the stack uses one bias per hidden layer (its upper-role bias);
        # the pretraining-only lower bias is dropped at composition
        layer.bias_lower = np.zeros_like(layer.bias_lower)
    return DbmModel(layers, frozen=False, schema_hash=schema)


def finetune_dbm(model: DbmModel, train: np.ndarray, val: np.ndarray, config: DbmTrainConfig | None = None) -> DbmModel:
    """Joint PCD fine-tuning; returns the frozen model.

    Early stopping watches the drift of |mean F_var(val) - mean F_var(train
    subsample)|: once the gap has exceeded its running minimum by
    ``gap_margin`` for ``gap_patience`` consecutive epochs, training stops.
    """
    if model.frozen:
        raise FrozenModelError("model is already frozen")
    cfg = config or DbmTrainConfig()
    model = model.copy()
    train = np.asarray(train, dtype=np.float64)
    val = np.asarray(val, dtype=np.float64)
    rng_chain = stream(cfg.seed, "finetune", "chains")
    rng_gibbs = stream(cfg.seed, "finetune", "gibbs")
    rng_shuffle = stream(cfg.seed, "finetune", "shuffle")
    rng_mon = stream(cfg.seed, "finetune", "monitor")
    chains = {"v": (rng_chain.random((cfg.n_chains, train.shape[1])) < 0.5).astype(np.float64)}
    for i, d in enumerate(model.layer_sizes[1:], start=1):
        chains[f"h{i}"] = (rng_chain.random((cfg.n_chains, d)) < 0.5).astype(np.float64)
    adam = Adam(cfg.lr_finetune)
    mon_train = train[rng_mon.choice(train.shape[0], min(cfg.monitor_rows, train.shape[0]), replace=False)]
    mon_val = val[rng_mon.choice(val.shape[0], min(cfg.monitor_rows, val.shape[0]), replace=False)] if val.shape[0] else mon_train

    best_gap = np.inf
    drift_epochs = 0
    n = train.shape[0]
    for _ in range(cfg.epochs_finetune):
        order = rng_shuffle.permutation(n)
        mf_kw = {"max_iters": cfg.mf_max_iters, "tol": cfg.mf_tol, "damping": cfg.mf_damping}
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            pcd_update(model, train[idx], chains, cfg.lr_finetune, cfg.gibbs_k, adam, rng_gibbs, mf_kw=mf_kw)
        f_tr = float(np.mean(dbm_free_energy_batch(model, mon_train, max_iters=cfg.mf_max_iters, tol=cfg.mf_tol, damping=cfg.mf_damping)))
        f_va = float(np.mean(dbm_free_energy_batch(model, mon_val, max_iters=cfg.mf_max_iters, tol=cfg.mf_tol, damping=cfg.mf_damping)))
        gap = abs(f_va - f_tr)
        if gap < best_gap:
            best_gap = gap
        if gap > best_gap + cfg.gap_margin:
            drift_epochs += 1
            if drift_epochs >= cfg.gap_patience:
                break
        else:
            drift_epochs = 0
    return model.freeze()


# ---------------------------------------------------------------------------
# belief extraction
# ---------------------------------------------------------------------------

def belief(model: DbmModel, v: np.ndarray, **mf_kw) -> Belief:
    """Mean-field belief (concatenated hidden activations) for one vector."""
    if not model.frozen:
        raise NotFrozenError("beliefs must come from a frozen world model")
    state = mean_field(model, v, **mf_kw)
    return Belief(np.concatenate(state.mu), model.schema_hash)


def belief_matrix(model: DbmModel, matrix: np.ndarray, chunk: int = 4096, **mf_kw):
    """Beliefs for many rows; returns (values, iterations, converged)."""
    if not model.frozen:
        raise NotFrozenError("beliefs must come from a frozen world model")
    matrix = np.asarray(matrix, dtype=np.float64)
    n = matrix.shape[0]
    width = sum(model.layer_sizes[1:])
    out = np.empty((n, width), dtype=np.float64)
    iters = np.empty(n, dtype=np.int32)
    conv = np.empty(n, dtype=bool)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        mus, it, cv = mean_field_batch(model, matrix[lo:hi], **mf_kw)
        out[lo:hi] = np.concatenate(mus, axis=1)
        iters[lo:hi] = it
        conv[lo:hi] = cv
    return out, iters, conv
