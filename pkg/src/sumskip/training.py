"""Model manufacturing: seeded init, minibatch gradient descent, magnitude pruning.

Gradient descent follows the batch-sum form theta <- theta - gamma * sum of
per-sample gradients; ``train`` passes gamma = lr / batch_size so the learning
rate behaves like a per-sample mean.  All randomness flows from the Philox
counter PRNG seeded through SeedSequence([seed, stream]); stream 0 is
initialization, stream 1 is shuffling.

The batchnorm layer kind is executed as a per-channel affine with constant
mean/var buffers (0/1 at init) and trainable gamma/beta.  Keeping batch
statistics out of the step makes one training step an exact gradient-descent
transformation, which the permutation-equivariance checks rely on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .archs import ArchSpec
from .errors import ConfigError, TrainingDivergedError
from .engine import nonzero_cost_order
from .modelio import Dataset, Model, validate_model
from .tensor import Tensor


@dataclass(frozen=True)
class TrainCfg:
    seed: int = 0
    lr: float = 0.05
    batch_size: int = 32
    epochs: int = 10
    weight_decay: float = 0.0
    init: str = "he"   # he | lecun

    def validate(self):
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")


@dataclass
class SparsityMask:
    """Per-tensor keep masks: False positions are pinned to exactly zero."""

    masks: dict[str, np.ndarray] = field(default_factory=dict)

    def apply_to(self, name: str, arr: np.ndarray) -> np.ndarray:
        m = self.masks.get(name)
        if m is None:
            return arr
        out = arr.copy()
        out[~m] = 0
        return out

    def density(self) -> float:
        total = sum(m.size for m in self.masks.values())
        kept = sum(int(m.sum()) for m in self.masks.values())
        return kept / total if total else 1.0


def _init_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0])))


def _shuffle_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 1])))


def init_model(arch: ArchSpec, seed: int, precision: str = "f64", init: str = "he") -> Model:
    """Gaussian fan-in-scaled weights, zero biases, identity normalization."""
    if init not in ("he", "lecun"):
        raise ConfigError(f"unknown init scheme {init!r}")
    gain = 2.0 if init == "he" else 1.0
    rng = _init_rng(seed)
    dtype = np.dtype(np.float64 if precision == "f64" else np.float32)
    tensors: dict[str, Tensor] = {}
    for spec in arch.layers:
        g = spec.geometry
        if spec.kind in ("dense", "prediction_head"):
            fan_in = g["in"]
            out = g["out"] if spec.kind == "dense" else g["classes"]
            w = rng.standard_normal((out, fan_in)) * math.sqrt(gain / fan_in)
            tensors[spec.weights["weight"]] = Tensor(w, dtype=dtype)
            if "bias" in spec.weights:
                tensors[spec.weights["bias"]] = Tensor(np.zeros(out), dtype=dtype)
        elif spec.kind == "conv2d":
            fan_in = g["in_channels"] * g["kernel_h"] * g["kernel_w"]
            shape = (g["out_channels"], g["in_channels"], g["kernel_h"], g["kernel_w"])
            w = rng.standard_normal(shape) * math.sqrt(gain / fan_in)
            tensors[spec.weights["weight"]] = Tensor(w, dtype=dtype)
            if "bias" in spec.weights:
                tensors[spec.weights["bias"]] = Tensor(np.zeros(g["out_channels"]), dtype=dtype)
        elif spec.kind == "batchnorm":
            c = g["channels"]
            tensors[spec.weights["gamma"]] = Tensor(np.ones(c), dtype=dtype)
            tensors[spec.weights["beta"]] = Tensor(np.zeros(c), dtype=dtype)
            tensors[spec.weights["mean"]] = Tensor(np.zeros(c), dtype=dtype)
            tensors[spec.weights["var"]] = Tensor(np.ones(c), dtype=dtype)
    model = Model(
        layers=arch.layers,
        tensors=tensors,
        precision=precision,
        class_count=arch.class_count,
        input_shape=arch.input_shape,
    )
    validate_model(model)
    return model


# --- batched forward/backward ----------------------------------------------

def _im2col(X: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    Xp = np.pad(X, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else X
    B, C = X.shape[0], X.shape[1]
    ho = (X.shape[2] + 2 * pad - kh) // stride + 1
    wo = (X.shape[3] + 2 * pad - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(Xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]                       # B,C,ho,wo,kh,kw
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(B, C * kh * kw, ho * wo)
    return np.ascontiguousarray(cols), (ho, wo), Xp.shape


def _col2im(dcols: np.ndarray, padded_shape, kh, kw, stride, pad, out_hw):
    B, C = padded_shape[0], padded_shape[1]
    ho, wo = out_hw
    d = dcols.reshape(B, C, kh, kw, ho, wo)
    dXp = np.zeros(padded_shape, dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dXp[:, :, i : i + ho * stride : stride, j : j + wo * stride : stride] += d[:, :, i, j]
    if pad:
        return dXp[:, :, pad:-pad, pad:-pad]
    return dXp


def _forward(model: Model, params: dict[str, np.ndarray], X: np.ndarray):
    """Training-mode forward pass; returns logits and per-layer caches."""
    caches = []
    arr = X
    for spec in model.layers:
        g = spec.geometry
        if spec.kind in ("dense", "prediction_head"):
            W = params[spec.weights["weight"]]
            z = arr @ W.T
            if "bias" in spec.weights:
                z = z + params[spec.weights["bias"]][None, :]
            caches.append((spec, arr))
            arr = z
        elif spec.kind == "conv2d":
            W = params[spec.weights["weight"]]
            cols, out_hw, padded_shape = _im2col(arr, g["kernel_h"], g["kernel_w"],
                                                 g["stride"], g["padding"])
            W2 = W.reshape(W.shape[0], -1)
            z = np.einsum("ok,bkp->bop", W2, cols)
            if "bias" in spec.weights:
                z = z + params[spec.weights["bias"]][None, :, None]
            caches.append((spec, (cols, out_hw, padded_shape, arr.shape)))
            arr = z.reshape(arr.shape[0], W.shape[0], *out_hw)
        elif spec.kind == "batchnorm":
            gamma = params[spec.weights["gamma"]]
            beta = params[spec.weights["beta"]]
            mean = params[spec.weights["mean"]]
            var = params[spec.weights["var"]]
            inv = 1.0 / np.sqrt(var + g.get("eps", 1e-5))
            shape = (1, -1) + (1,) * (arr.ndim - 2)
            xhat = (arr - mean.reshape(shape)) * inv.reshape(shape)
            caches.append((spec, (xhat, inv)))
            arr = gamma.reshape(shape) * xhat + beta.reshape(shape)
        elif spec.kind == "relu":
            mask = arr > 0
            caches.append((spec, mask))
            arr = arr * mask
        elif spec.kind == "avg_pool_global":
            caches.append((spec, arr.shape))
            arr = arr.mean(axis=(2, 3))
        else:
            raise ConfigError(f"trainer cannot execute layer kind {spec.kind!r}")
    return arr, caches


def _softmax_ce(logits: np.ndarray, labels: np.ndarray):
    """Summed cross-entropy loss and its gradient w.r.t. the logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)
    idx = np.arange(len(labels))
    logp = shifted[idx, labels] - np.log(e.sum(axis=1))
    loss = float(-logp.sum())
    grad = probs
    grad[idx, labels] -= 1.0
    return loss, grad


def _backward(model: Model, params, caches, dlogits):
    grads: dict[str, np.ndarray] = {}
    darr = dlogits
    for spec, cache in reversed(caches):
        g = spec.geometry
        if spec.kind in ("dense", "prediction_head"):
            x = cache
            W = params[spec.weights["weight"]]
            grads[spec.weights["weight"]] = darr.T @ x
            if "bias" in spec.weights:
                grads[spec.weights["bias"]] = darr.sum(axis=0)
            darr = darr @ W
        elif spec.kind == "conv2d":
            cols, out_hw, padded_shape, in_shape = cache
            W = params[spec.weights["weight"]]
            dz = darr.reshape(darr.shape[0], W.shape[0], -1)
            W2 = W.reshape(W.shape[0], -1)
            grads[spec.weights["weight"]] = np.einsum("bop,bkp->ok", dz, cols).reshape(W.shape)
            if "bias" in spec.weights:
                grads[spec.weights["bias"]] = dz.sum(axis=(0, 2))
            dcols = np.einsum("ok,bop->bkp", W2, dz)
            darr = _col2im(dcols, padded_shape, g["kernel_h"], g["kernel_w"],
                           g["stride"], g["padding"], out_hw)
        elif spec.kind == "batchnorm":
            xhat, inv = cache
            axes = (0,) if darr.ndim == 2 else (0, 2, 3)
            grads[spec.weights["gamma"]] = (darr * xhat).sum(axis=axes)
            grads[spec.weights["beta"]] = darr.sum(axis=axes)
            shape = (1, -1) + (1,) * (darr.ndim - 2)
            gamma = params[spec.weights["gamma"]]
            darr = darr * (gamma.reshape(shape) * inv.reshape(shape))
        elif spec.kind == "relu":
            darr = darr * cache
        elif spec.kind == "avg_pool_global":
            in_shape = cache
            scale = 1.0 / (in_shape[2] * in_shape[3])
            darr = np.broadcast_to((darr * scale)[:, :, None, None], in_shape).copy()
    return grads


_FROZEN_ROLES = ("mean", "var")


def _trainable(spec_role: str) -> bool:
    return spec_role not in _FROZEN_ROLES


def batch_loss(model: Model, X: np.ndarray, labels: np.ndarray) -> float:
    params = {name: t.array for name, t in model.tensors.items()}
    logits, _ = _forward(model, params, X.astype(model.dtype, copy=False))
    loss, _ = _softmax_ce(logits.astype(np.float64), np.asarray(labels))
    return loss


def gradients(model: Model, X: np.ndarray, labels: np.ndarray):
    """Summed-loss backprop gradients for every trainable tensor."""
    params = {name: t.array for name, t in model.tensors.items()}
    logits, caches = _forward(model, params, X.astype(model.dtype, copy=False))
    loss, dlogits = _softmax_ce(logits, np.asarray(labels))
    if not math.isfinite(loss):
        raise TrainingDivergedError(f"non-finite loss {loss}")
    grads = _backward(model, params, caches, dlogits)
    return loss, grads


def sgd_step(model: Model, batch, gamma: float,
             mask: SparsityMask | None = None, weight_decay: float = 0.0) -> Model:
    """One gradient-descent step on a (inputs, labels) batch; returns a new model."""
    X, y = batch
    X = np.asarray(X)
    if X.ndim == 2:
        X = X.reshape((X.shape[0],) + tuple(model.input_shape))
    if len(X) == 0:
        raise ConfigError("sgd_step needs a nonempty batch")
    _, grads = gradients(model, X, y)
    updates = {}
    frozen = {spec.weights[role] for spec in model.layers if spec.kind == "batchnorm"
              for role in _FROZEN_ROLES}
    for name, grad in grads.items():
        if name in frozen:
            continue
        p = model.tensor(name).array
        new = p - gamma * (grad + weight_decay * p)
        if mask is not None:
            new = mask.apply_to(name, new)
        updates[name] = new
    return model.with_tensors(updates)


def train(subject, dataset: Dataset, cfg: TrainCfg, mask: SparsityMask | None = None) -> Model:
    """Epoch loop over shuffled minibatches; deterministic given (subject, data, cfg)."""
    cfg.validate()
    model = init_model(subject, cfg.seed) if isinstance(subject, ArchSpec) else subject
    X = dataset.stacked(model.dtype).reshape((len(dataset),) + tuple(model.input_shape))
    y = np.asarray(dataset.labels)
    rng = _shuffle_rng(cfg.seed)
    for _ in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        for start in range(0, len(dataset), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            model = sgd_step(model, (X[idx], y[idx]), cfg.lr / len(idx),
                             mask=mask, weight_decay=cfg.weight_decay)
    return model


# --- static magnitude pruning ------------------------------------------------

def _conv_weight_names(model: Model) -> list[str]:
    return [spec.weights["weight"] for spec in model.layers if spec.kind == "conv2d"]


def magnitude_prune_step(model: Model, fraction: float = 0.05,
                         scope: str = "global") -> tuple[Model, SparsityMask]:
    """Zero the smallest-magnitude fraction of currently nonzero conv weights.

    Ranking is global across all convolution kernels (scope "per_layer" ranks
    within each kernel instead); exactly ceil(fraction * nonzero_count) weights
    are zeroed, ties broken by tensor name then flat index.  Dense layers are
    untouched.
    """
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"fraction must lie in (0, 1), got {fraction}")
    if scope not in ("global", "per_layer"):
        raise ConfigError(f"unknown scope {scope!r}")
    names = _conv_weight_names(model)
    arrays = {name: model.tensor(name).array.copy() for name in names}

    def select(pool: list[str]) -> list[tuple[str, int]]:
        entries = []
        for name in pool:
            flat = arrays[name].ravel()
            for i in np.flatnonzero(flat):
                entries.append((abs(float(flat[i])), name, int(i)))
        n_zero = math.ceil(fraction * len(entries))
        entries.sort()
        return [(name, i) for _, name, i in entries[:n_zero]]

    victims = select(names) if scope == "global" else \
        [v for name in names for v in select([name])]
    for name, i in victims:
        arrays[name].ravel()[i] = 0.0

    pruned = model.with_tensors(arrays)
    mask = SparsityMask({name: arrays[name] != 0 for name in names})
    return pruned, mask


def sort_channels_by_cost(model: Model) -> dict[str, list[int]]:
    """Static per-layer input-term order, ascending by nonzero weight count."""
    orders = {}
    for spec in model.layers:
        if spec.kind not in ("dense", "conv2d", "prediction_head"):
            continue
        W = model.tensor(spec.weights["weight"]).array
        kind = "conv2d" if spec.kind == "conv2d" else "dense"
        orders[spec.name] = nonzero_cost_order(W, kind).tolist()
    return orders
