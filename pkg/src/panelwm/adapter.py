"""Task heads: small MLPs over [belief; action] or [raw features; action].

The world model is never touched here; adapters consume precomputed belief
matrices. The baseline model shares the architecture and training protocol
but reads the 72 raw visible bits instead of the 112-dim belief, which makes
the predictive-parity comparison architecture-controlled.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ebm import Belief
from .optim import Adam
from .rng import stream
from .stats import auc

__all__ = [
    "MlpModel",
    "TrainConfig",
    "SchemaMismatchError",
    "mlp_forward",
    "mlp_forward_batch",
    "mlp_grad",
    "bce_with_logits",
    "train_mlp",
    "predict_proba",
    "predict_logits",
    "init_mlp",
]

HIDDEN_DIMS = (64, 32, 16)


class SchemaMismatchError(RuntimeError):
    """Belief fed to an adapter trained against a different world model."""


@dataclass
class MlpModel:
    """Rectifier MLP emitting a pre-sigmoid logit."""

    weights: list
    biases: list
    input_kind: str = "belief+action"
    schema_hash: str = ""

    def __post_init__(self):
        for w, b in zip(self.weights, self.biases):
            if w.shape[1] != b.shape[0]:
                raise ValueError("bias does not match weight matrix")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("non-finite parameters")
        for w1, w2 in zip(self.weights, self.weights[1:]):
            if w1.shape[1] != w2.shape[0]:
                raise ValueError("layer dimensions do not chain")
        if self.weights[-1].shape[1] != 1:
            raise ValueError("output layer must have width 1")

    @property
    def dims(self) -> tuple:
        return (self.weights[0].shape[0], *[w.shape[1] for w in self.weights])

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    def copy(self) -> "MlpModel":
        return MlpModel(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.input_kind,
            self.schema_hash,
        )

    def param_dict(self) -> dict:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{i}"] = w
            out[f"b{i}"] = b
        return out


@dataclass(frozen=True)
class TrainConfig:
    task: str = "visit"
    max_epochs: int = 100
    patience: int = 30
    batch_size: int = 512
    lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def init_mlp(input_dim: int, rng: np.random.Generator, hidden=HIDDEN_DIMS, input_kind: str = "belief+action", schema_hash: str = "") -> MlpModel:
    dims = (input_dim, *hidden, 1)
    weights, biases = [], []
    for lo, hi in zip(dims, dims[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / lo), size=(lo, hi)))
        biases.append(np.zeros(hi))
    return MlpModel(weights, biases, input_kind, schema_hash)


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def mlp_forward_batch(model: MlpModel, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != model.input_dim:
        raise ValueError(f"input dim {x.shape[1]} != model dim {model.input_dim}")
    a = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        a = a @ w + b
        if i < last:
            a = np.maximum(a, 0.0)
    return a[:, 0]


def mlp_forward(model: MlpModel, x: np.ndarray) -> float:
    """Pre-sigmoid logit for one input; sigmoid(logit) is the probability."""
    return float(mlp_forward_batch(model, x)[0])


def _sigmoid(x):
    # clipping at +-500 is exact: the sigmoid saturates in float64 near +-37
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500.0, 500.0)))


def bce_with_logits(logits: np.ndarray, y: np.ndarray) -> float:
    """Mean binary cross-entropy, stable form."""
    logits = np.asarray(logits, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(np.logaddexp(0.0, logits) - y * logits))


def mlp_grad(model: MlpModel, x: np.ndarray, y: np.ndarray):
    """Gradients of mean BCE loss; returns (loss, grad dict)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n = x.shape[0]
    acts = [x]
    pre = None
    last = len(model.weights) - 1
    a = x
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        pre = a @ w + b
        a = np.maximum(pre, 0.0) if i < last else pre
        acts.append(a)
    logits = acts[-1][:, 0]
    loss = bce_with_logits(logits, y)
    delta = ((_sigmoid(logits) - y) / n)[:, None]
    grads = {}
    for i in range(last, -1, -1):
        grads[f"W{i}"] = acts[i].T @ delta
        grads[f"b{i}"] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * (acts[i] > 0.0)
    return loss, grads


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def train_mlp(train, val, config: TrainConfig, input_kind: str = "belief+action", schema_hash: str = "", log=None) -> MlpModel:
    """Adam + early stopping on validation AUC.

    Keeps the parameters of the best-validation epoch; stops once the count
    of epochs since the last improvement reaches ``patience`` (so patience 0
    runs exactly one epoch).
    """
    x_tr, y_tr = train
    x_va, y_va = val
    x_tr = np.asarray(x_tr, dtype=np.float64)
    y_tr = np.asarray(y_tr, dtype=np.float64).reshape(-1)
    if x_tr.shape[0] == 0 or np.asarray(x_va).shape[0] == 0:
        raise ValueError("empty dataset")
    if len(np.unique(y_tr)) < 2:
        raise ValueError("training labels contain a single class; loss degenerate")
    rng_init = stream(config.seed, "mlp-init", config.task)
    rng_shuffle = stream(config.seed, "mlp-shuffle", config.task)
    model = init_mlp(x_tr.shape[1], rng_init, input_kind=input_kind, schema_hash=schema_hash)
    adam = Adam(config.lr)
    params = model.param_dict()
    best = model.copy()
    best_auc = -np.inf
    since_best = 0
    n = x_tr.shape[0]
    for epoch in range(config.max_epochs):
        order = rng_shuffle.permutation(n)
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            _, grads = mlp_grad(model, x_tr[idx], y_tr[idx])
            adam.step(params, grads)
        val_auc = auc(predict_logits(model, x_va), y_va)
        if log is not None:
            log(epoch, val_auc)
        if val_auc > best_auc:
            best_auc = val_auc
            best = model.copy()
            since_best = 0
        else:
            since_best += 1
        if since_best >= config.patience:
            break
    return best


def predict_logits(model: MlpModel, x: np.ndarray, chunk: int = 65536) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    out = np.empty(x.shape[0], dtype=np.float64)
    for lo in range(0, x.shape[0], chunk):
        out[lo : lo + chunk] = mlp_forward_batch(model, x[lo : lo + chunk])
    return out


def predict_proba(model: MlpModel, b: Belief, z: np.ndarray) -> float:
    """Probability for one (belief, action) pair, with schema guard."""
    if model.input_kind != "belief+action":
        raise ValueError("model does not consume beliefs")
    if model.schema_hash and b.schema_hash and model.schema_hash != b.schema_hash:
        raise SchemaMismatchError(
            f"belief schema {b.schema_hash} != adapter schema {model.schema_hash}"
        )
    x = np.concatenate([b.values, np.asarray(z, dtype=np.float64)])
    return float(_sigmoid(np.array([mlp_forward(model, x)]))[0])
