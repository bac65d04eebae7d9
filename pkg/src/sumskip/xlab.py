"""Empirical checks of the statistical structure the pruning engine relies on.

Four families of checks over trained models:

* seed ensembles: per-index distributions of weight and activation observables
  across many independently trained models, compared with two-sample
  Kolmogorov-Smirnov tests against the pooled distribution;
* permutation equivariance of one gradient-descent step on a parameter group;
* parameter-space symmetry: permuting a group must leave the network function
  unchanged on every probe input;
* the same symmetry for an attention block and a conv block with a skip
  connection, which are not expressible as stored models.

The default calibration of the identical-distribution report is a permutation
null (index labels shuffled independently within each model), which keeps the
test at its nominal level even when the observable has ties (ReLU activations
are 0 with positive probability); the classical asymptotic p-value is
available as ``method="asymp"``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .archs import ArchSpec
from .engine import forward_plain
from .errors import ConfigError
from .modelio import Dataset, Model
from .tensor import Tensor, attention_forward, conv2d
from .training import TrainCfg, sgd_step, train


# --------------------------------------------------------------------------
# Parameter groups
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GroupSpec:
    """Disjoint, equal-shaped parameter slices indexed by one group axis.

    ``roles`` lists (tensor name, axis): slice i of the group is the
    concatenation of each tensor taken at index i along its axis.
    """

    kind: str
    size: int
    roles: tuple[tuple[str, int], ...]

    def permute_model(self, model: Model, perm) -> Model:
        perm = np.asarray(perm)
        if sorted(perm.tolist()) != list(range(self.size)):
            raise ConfigError(f"not a permutation of {self.size} indices")
        updates = {}
        for name, axis in self.roles:
            arr = model.tensor(name).array
            updates[name] = np.take(arr, perm, axis=axis)
        return model.with_tensors(updates)

    def slices(self, model: Model) -> np.ndarray:
        """[size, m] matrix: row i is group slice i flattened."""
        pieces = []
        for name, axis in self.roles:
            arr = np.moveaxis(model.tensor(name).array, axis, 0)
            pieces.append(arr.reshape(self.size, -1))
        return np.concatenate(pieces, axis=1)

    def other_params(self, model: Model) -> np.ndarray:
        """Flat vector of every parameter outside the group's tensors."""
        grouped = {name for name, _ in self.roles}
        rest = [model.tensor(n).array.ravel() for n in sorted(model.tensors) if n not in grouped]
        return np.concatenate(rest) if rest else np.zeros(0)


def mlp_hidden_group(model: Model, producer: str, consumer: str,
                     bn: str | None = None, include_consumer: bool = True) -> GroupSpec:
    """Hidden-unit group of two stacked dense layers: incoming row + bias (+ nl) + outgoing column."""
    p = model.layer(producer)
    roles = [(p.weights["weight"], 0)]
    if "bias" in p.weights:
        roles.append((p.weights["bias"], 0))
    if bn is not None:
        b = model.layer(bn)
        roles += [(b.weights[r], 0) for r in ("gamma", "beta", "mean", "var")]
    if include_consumer:
        roles.append((model.layer(consumer).weights["weight"], 1))
    return GroupSpec("mlp_hidden", p.geometry["out"], tuple(roles))


def conv_channel_group(model: Model, producer: str, consumer: str,
                       bn: str | None = None, include_consumer: bool = True) -> GroupSpec:
    """Middle-channel group of two stacked convolutions (optionally with normalization)."""
    p = model.layer(producer)
    roles = [(p.weights["weight"], 0)]
    if "bias" in p.weights:
        roles.append((p.weights["bias"], 0))
    if bn is not None:
        b = model.layer(bn)
        roles += [(b.weights[r], 0) for r in ("gamma", "beta", "mean", "var")]
    if include_consumer:
        roles.append((model.layer(consumer).weights["weight"], 1))
    return GroupSpec("conv_channel", p.geometry["out_channels"], tuple(roles))


def head_input_group(model: Model, producer: str, head: str = "head",
                     bn: str | None = None) -> GroupSpec:
    """Producer-channel group feeding a pooled prediction head."""
    p = model.layer(producer)
    size = p.geometry["out_channels"] if p.kind == "conv2d" else p.geometry["out"]
    roles = [(p.weights["weight"], 0)]
    if "bias" in p.weights:
        roles.append((p.weights["bias"], 0))
    if bn is not None:
        b = model.layer(bn)
        roles += [(b.weights[r], 0) for r in ("gamma", "beta", "mean", "var")]
    roles.append((model.layer(head).weights["weight"], 1))
    return GroupSpec("conv_channel", size, tuple(roles))


# --------------------------------------------------------------------------
# Equivariance and symmetry checks
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EquivarianceResult:
    zeta_deviation: float
    other_deviation: float


def equivariance_check(model: Model, group: GroupSpec, batch, permutation,
                       gamma: float) -> EquivarianceResult:
    """Max |P . step(zeta) - step(P . zeta)| after one gradient-descent step.

    Also reports the deviation of every parameter outside the group, checking
    that permuting the group does not perturb the rest of the update.
    """
    perm = np.asarray(permutation)
    stepped = sgd_step(model, batch, gamma)
    stepped_perm = sgd_step(group.permute_model(model, perm), batch, gamma)
    z1 = group.slices(stepped)[perm]
    z2 = group.slices(stepped_perm)
    zeta_dev = float(np.abs(z1 - z2).max())
    other_dev = float(np.abs(group.other_params(stepped) - group.other_params(stepped_perm)).max()) \
        if group.other_params(model).size else 0.0
    return EquivarianceResult(zeta_dev, other_dev)


def symmetry_check(model: Model, group: GroupSpec, permutation, probes) -> float:
    """Max output deviation of the group-permuted model over the probe inputs."""
    permuted = group.permute_model(model, np.asarray(permutation))
    dev = 0.0
    for x in probes:
        base = forward_plain(model, x)
        alt = forward_plain(permuted, x)
        dev = max(dev, float(np.abs(base - alt).max()))
    return dev


def attention_symmetry_check(params: dict[str, np.ndarray], permutation, probes) -> float:
    """Symmetry of the value-row / projection-column group of a single attention head."""
    perm = np.asarray(permutation)
    K, Q, V, W = params["K"], params["Q"], params["V"], params["W"]
    Vp = np.take(V, perm, axis=0)
    Wp = np.take(W, perm, axis=1)
    dev = 0.0
    for x in probes:
        base = attention_forward(x, K, Q, V, W).array
        alt = attention_forward(x, K, Q, Vp, Wp).array
        dev = max(dev, float(np.abs(base - alt).max()))
    return dev


def skip_symmetry_check(k1: np.ndarray, k2: np.ndarray, permutation, probes,
                        stride: int = 1, padding: int = 1) -> float:
    """Symmetry of the middle-channel group in conv -> relu -> conv with input skip."""
    perm = np.asarray(permutation)
    k1p = np.take(k1, perm, axis=0)
    k2p = np.take(k2, perm, axis=1)

    def f(x, a, b):
        h = conv2d(x, a, stride, padding).array
        h = np.maximum(0.0, h)
        x_arr = x.array if isinstance(x, Tensor) else np.asarray(x)
        return conv2d(h, b, stride, padding).array + x_arr

    dev = 0.0
    for x in probes:
        dev = max(dev, float(np.abs(f(x, k1, k2) - f(x, k1p, k2p)).max()))
    return dev


# --------------------------------------------------------------------------
# Ensembles and distribution checks
# --------------------------------------------------------------------------

def train_ensemble(arch: ArchSpec, dataset: Dataset, n_seeds: int,
                   base_cfg: TrainCfg | None = None, threads: int = 1) -> list[Model]:
    """n_seeds independently trained models, seeds 0..n_seeds-1."""
    if n_seeds < 2:
        raise ConfigError(f"an ensemble needs at least two seeds, got {n_seeds}")
    base = base_cfg or TrainCfg()
    cfgs = [replace(base, seed=s) for s in range(n_seeds)]

    def fit(cfg):
        return train(arch, dataset, cfg)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fit, cfgs))
    return [fit(c) for c in cfgs]


def weight_column_observable(layer_weight: str, column: int):
    """Per-index scalar W[i, column] over the group axis (rows)."""
    return lambda model: model.tensor(layer_weight).array[:, column].astype(np.float64)


def weight_row_observable(layer_weight: str, row: int):
    """Per-index scalar W[row, i] over the group axis (columns)."""
    return lambda model: model.tensor(layer_weight).array[row, :].astype(np.float64)


def activation_observable(block_name: str, probe):
    """Per-index activation of one block's output on a fixed probe input."""
    def fn(model: Model) -> np.ndarray:
        acts: dict = {}
        forward_plain(model, probe, collect=acts)
        return np.asarray(acts[block_name], dtype=np.float64).ravel()
    return fn


def collect_observable(models, observable) -> np.ndarray:
    """[n_models, n_indices] value matrix of an observable across an ensemble."""
    rows = [np.asarray(observable(m), dtype=np.float64) for m in models]
    return np.stack(rows)


def ks_two_sample(a, b) -> tuple[float, float]:
    """Classical two-sample Kolmogorov-Smirnov D statistic and asymptotic p-value."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    if len(a) == 0 or len(b) == 0:
        raise ConfigError("both samples must be nonempty")
    d = _ks_d(a, b)
    en = math.sqrt(len(a) * len(b) / (len(a) + len(b)))
    return d, _ks_asymp_p((en + 0.12 + 0.11 / en) * d)


def _ks_d(a_sorted: np.ndarray, b_sorted: np.ndarray) -> float:
    pts = np.concatenate([a_sorted, b_sorted])
    pts.sort(kind="mergesort")
    ca = np.searchsorted(a_sorted, pts, side="right") / len(a_sorted)
    cb = np.searchsorted(b_sorted, pts, side="right") / len(b_sorted)
    return float(np.abs(ca - cb).max())


def _ks_asymp_p(lam: float) -> float:
    if lam <= 0:
        return 1.0
    total = 0.0
    for j in range(1, 101):
        term = 2.0 * (-1.0) ** (j - 1) * math.exp(-2.0 * j * j * lam * lam)
        total += term
        if abs(term) < 1e-10:
            break
    return min(1.0, max(0.0, total))


@dataclass
class IdentReport:
    """Per-index KS statistics against the pooled sample, and the rejection rate."""

    d_stats: np.ndarray
    pvalues: np.ndarray
    alpha: float
    method: str
    n_models: int
    rejection_rate: float = field(init=False)

    def __post_init__(self):
        self.rejection_rate = float((self.pvalues <= self.alpha).mean())


def identical_distribution_report(values: np.ndarray, alpha: float = 0.05,
                                  method: str = "perm", n_perm: int = 999,
                                  seed: int = 0) -> IdentReport:
    """Each-vs-pooled KS tests across group indices.

    ``values`` is the [n_models, n_indices] observable matrix.  The "perm"
    method calibrates the D statistic against a null built by independently
    permuting index labels within each model (exact under index
    exchangeability, ties included); "asymp" uses the classical asymptotic
    p-value of each index against the pool excluding that index.
    """
    values = np.asarray(values, dtype=np.float64)
    n_models, n_idx = values.shape
    if n_models < 2 or n_idx < 2:
        raise ConfigError("need at least 2 models and 2 indices")

    if method == "asymp":
        d_stats = np.empty(n_idx)
        pvalues = np.empty(n_idx)
        for i in range(n_idx):
            rest = np.delete(values, i, axis=1).ravel()
            d_stats[i], pvalues[i] = ks_two_sample(values[:, i], rest)
        return IdentReport(d_stats, pvalues, alpha, method, n_models)
    if method != "perm":
        raise ConfigError(f"unknown method {method!r}")

    pooled = np.sort(values.ravel())
    pool_cdf = np.arange(1, len(pooled) + 1) / len(pooled)

    def d_vs_pooled(group: np.ndarray) -> float:
        # group values all occur in the pooled multiset, so every ECDF jump
        # point is a pooled point and the sup can be taken there.
        g = np.sort(group)
        cg = np.searchsorted(g, pooled, side="right") / len(g)
        return float(np.abs(cg - pool_cdf).max())

    d_stats = np.array([d_vs_pooled(values[:, i]) for i in range(n_idx)])
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 2])))
    draws = rng.integers(0, n_idx, size=(n_perm, n_models))
    rows = np.arange(n_models)
    null = np.array([d_vs_pooled(values[rows, draws[b]]) for b in range(n_perm)])
    null.sort()
    # p = (1 + #{null >= d}) / (n_perm + 1)
    greater = n_perm - np.searchsorted(null, d_stats, side="left")
    pvalues = (1.0 + greater) / (n_perm + 1.0)
    return IdentReport(d_stats, pvalues, alpha, "perm", n_models)
