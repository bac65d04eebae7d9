"""Inference engine with per-input early termination and exact FLOPs metering.

Execution model
---------------
The model's layer list is compiled into blocks: ``conv [+batchnorm] [+relu]``,
``dense [+relu]``, ``avg_pool_global``, ``prediction_head``.  Normalization and
bias are folded into one per-channel affine (w, b) computed once per layer, and
a block's unit output is ReLU(w * S + b) where S is the unit's term sum
accumulated in a fixed, configurable order.  Both the plain and the pruned
paths use this same form, so an unpruned unit's output is bit-identical to the
baseline and a pruned path is bit-exactly a prefix of it.

FLOPs convention (applied identically to baseline and pruned paths):

* multiply-accumulate = 2 FLOPs, counted only for nonzero weights;
* bias add = 1/element; folded normalization = 2/element; ReLU = 1/element;
  these per-unit epilogue costs are charged whether or not the unit pruned
  (only term MACs are prunable);
* global average pooling = H*W per channel;
* threshold check = 1; statistical check = 2*(terms since last check) + 6;
  head dominance: statistical = (2k+6) per tested rank, threshold = 2 per
  tested rank; argmax/Holm bookkeeping = 0;
* the head's bias add (1/class) is charged on both paths.

The engine never reports a misprediction unless ``shadow_oracle`` is set: that
diagnostic mode compares each prune against the full computation.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, PredictorMisuseError, ShapeError
from .modelio import Dataset, LayerSpec, Model
from .predictors import (
    ClassScoreStats,
    HeadPredictorCfg,
    PartialStats,
    ReluPredictorCfg,
    dominance_statstest,
    dominance_threshold,
    fold_affine,
    inv_normal_cdf,
    statstest_predict,
    threshold_predict,
)
from .tensor import Tensor, channel_contribution, pooled_batch

SENTINEL_NEVER_THRESHOLD = float("-inf")


# --------------------------------------------------------------------------
# Pruning configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PruneConfig:
    """Per-layer ReLU predictors, head predictor, and the term-order policy."""

    layers: dict[str, ReluPredictorCfg] = field(default_factory=dict)
    head: HeadPredictorCfg = field(default_factory=HeadPredictorCfg)
    order: str = "natural"

    @staticmethod
    def none() -> "PruneConfig":
        return PruneConfig()

    def validate(self, model: Model) -> None:
        if self.order not in ("natural", "by_nonzero_cost"):
            raise ConfigError(f"unknown term-order policy {self.order!r}")
        names = {s.name: s for s in model.layers}
        for layer, cfg in self.layers.items():
            if layer not in names:
                raise ConfigError(f"prune config references unknown layer {layer!r}")
            if names[layer].kind not in ("dense", "conv2d"):
                raise ConfigError(f"layer {layer!r} ({names[layer].kind}) is not prunable")
            cfg.validate()
        self.head.validate(model.class_count)

    def layer_cfg(self, name: str) -> ReluPredictorCfg:
        return self.layers.get(name, ReluPredictorCfg(kind="none"))

    def to_json(self) -> dict:
        layers = {}
        for name, c in self.layers.items():
            entry = {"kind": c.kind, "k": c.k, "schedule": c.schedule}
            if c.kind == "threshold":
                entry["t"] = c.param
            elif c.kind == "statstest":
                entry["alpha"] = c.param
            if c.r is not None:
                entry["r"] = c.r
            layers[name] = entry
        head = {"kind": self.head.kind}
        if self.head.kind != "none":
            head.update({"k": self.head.k, "ranks": list(self.head.ranks)})
            if self.head.kind == "statstest":
                head["alpha"] = self.head.alpha
            else:
                head["thresholds"] = list(self.head.thresholds)
        return {"schema_version": 1, "order": self.order, "layers": layers, "head": head}

    @staticmethod
    def from_json(doc: dict) -> "PruneConfig":
        layers = {}
        for name, entry in doc.get("layers", {}).items():
            kind = entry.get("kind", "none")
            if kind == "threshold":
                param = float(entry["t"])
            elif kind == "statstest":
                param = float(entry["alpha"])
            else:
                param = 0.0
            layers[name] = ReluPredictorCfg(
                kind=kind,
                param=param,
                k=int(entry.get("k", 32)),
                schedule=entry.get("schedule", "once_at_k"),
                r=entry.get("r"),
            )
        h = doc.get("head", {"kind": "none"})
        head = HeadPredictorCfg(
            kind=h.get("kind", "none"),
            k=int(h.get("k", 160)),
            ranks=tuple(h.get("ranks", (2, 3))),
            alpha=float(h.get("alpha", 0.1)),
            thresholds=tuple(h.get("thresholds", ())),
        )
        return PruneConfig(layers=layers, head=head, order=doc.get("order", "natural"))


def load_prune_config(path) -> PruneConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return PruneConfig.from_json(json.load(fh))


def save_prune_config(cfg: PruneConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")


# --------------------------------------------------------------------------
# Ledger and report
# --------------------------------------------------------------------------

_CATEGORIES = ("mac", "bias", "activation", "predictor", "head")


@dataclass
class LayerCounters:
    mac: int = 0
    bias: int = 0
    activation: int = 0
    predictor: int = 0
    head: int = 0
    prunes: int = 0
    opportunities: int = 0
    terms_computed: int = 0
    terms_total: int = 0
    mispredictions: int = 0

    @property
    def flops(self) -> int:
        return self.mac + self.bias + self.activation + self.predictor + self.head

    def merge(self, other: "LayerCounters") -> None:
        for f in ("mac", "bias", "activation", "predictor", "head", "prunes",
                  "opportunities", "terms_computed", "terms_total", "mispredictions"):
            setattr(self, f, getattr(self, f) + getattr(other, f))


class FlopsLedger:
    """Integer FLOP counters per layer and category, plus prune-event tallies."""

    def __init__(self):
        self.layers: dict[str, LayerCounters] = {}

    def layer(self, name: str) -> LayerCounters:
        if name not in self.layers:
            self.layers[name] = LayerCounters()
        return self.layers[name]

    def add(self, name: str, category: str, amount: int) -> None:
        if category not in _CATEGORIES:
            raise ConfigError(f"unknown FLOPs category {category!r}")
        c = self.layer(name)
        setattr(c, category, getattr(c, category) + int(amount))

    def record_prune(self, name: str, terms_computed: int, terms_total: int) -> None:
        if terms_computed > terms_total:
            raise ConfigError("prune event with terms_computed > terms_total")
        c = self.layer(name)
        c.prunes += 1
        c.terms_computed += int(terms_computed)
        c.terms_total += int(terms_total)

    def merge(self, other: "FlopsLedger") -> None:
        for name, counters in other.layers.items():
            self.layer(name).merge(counters)

    def category_total(self, category: str) -> int:
        return sum(getattr(c, category) for c in self.layers.values())

    @property
    def mac_flops(self) -> int:
        return self.category_total("mac")

    @property
    def bias_flops(self) -> int:
        return self.category_total("bias")

    @property
    def activation_flops(self) -> int:
        return self.category_total("activation")

    @property
    def predictor_flops(self) -> int:
        return self.category_total("predictor")

    @property
    def head_flops(self) -> int:
        return self.category_total("head")

    @property
    def total(self) -> int:
        return sum(c.flops for c in self.layers.values())

    @property
    def prunes(self) -> int:
        return sum(c.prunes for c in self.layers.values())

    @property
    def mispredictions(self) -> int:
        return sum(c.mispredictions for c in self.layers.values())


@dataclass
class RunReport:
    """Outcome of one evaluation run."""

    fidelity: float
    total_flops: int
    baseline_flops: int
    normalized_flops: float
    ledger: FlopsLedger
    predictions: np.ndarray
    labels: np.ndarray
    sample_flops: np.ndarray
    per_layer_prune_rate: dict[str, float]
    misprediction_rate: float


# --------------------------------------------------------------------------
# Block compilation and static per-layer planning
# --------------------------------------------------------------------------

@dataclass
class _Block:
    kind: str                      # dense | conv | pool | head | batchnorm | relu
    primary: LayerSpec
    bn: LayerSpec | None = None
    relu_name: str | None = None


def compile_blocks(model: Model) -> list[_Block]:
    blocks = []
    specs = model.layers
    i = 0
    while i < len(specs):
        s = specs[i]
        if s.kind in ("dense", "conv2d"):
            bn = None
            relu_name = None
            j = i + 1
            if j < len(specs) and specs[j].kind == "batchnorm":
                bn = specs[j]
                j += 1
            if j < len(specs) and specs[j].kind == "relu":
                relu_name = specs[j].name
                j += 1
            blocks.append(_Block("dense" if s.kind == "dense" else "conv", s, bn, relu_name))
            i = j
        elif s.kind == "batchnorm":
            blocks.append(_Block("batchnorm", s))
            i += 1
        elif s.kind == "relu":
            blocks.append(_Block("relu", s))
            i += 1
        elif s.kind == "avg_pool_global":
            blocks.append(_Block("pool", s))
            i += 1
        elif s.kind == "prediction_head":
            blocks.append(_Block("head", s))
            i += 1
        else:
            raise ConfigError(f"cannot execute layer kind {s.kind!r}")
    return blocks


def fold_block_affine(block: _Block, model: Model) -> tuple[np.ndarray, np.ndarray]:
    """Per-output-unit (w, b) absorbing the block's bias and normalization."""
    spec = block.primary
    g = spec.geometry
    n_out = g["out"] if spec.kind == "dense" else g["out_channels"]
    dtype = model.dtype
    bias_ref = spec.weight_name("bias")
    bias = model.tensor(bias_ref).array if bias_ref else np.zeros(n_out, dtype=dtype)
    if block.bn is None:
        return np.ones(n_out, dtype=dtype), bias.astype(dtype, copy=False)
    bn = block.bn
    gamma = model.tensor(bn.weight_name("gamma")).array
    beta = model.tensor(bn.weight_name("beta")).array
    mean = model.tensor(bn.weight_name("mean")).array
    var = model.tensor(bn.weight_name("var")).array
    eps = dtype.type(bn.geometry.get("eps", 1e-5))
    scale = gamma / np.sqrt(var + eps)
    return scale.astype(dtype, copy=False), (beta + (bias - mean) * scale).astype(dtype, copy=False)


def check_positions(cfg_k: int, schedule: str, n_terms: int) -> list[int]:
    """Term counts at which a confidence check runs (only positions < n help)."""
    if schedule == "once_at_k":
        return [cfg_k] if cfg_k < n_terms else []
    return list(range(cfg_k, n_terms, cfg_k))


def check_cost_prefix(kind: str, positions: list[int]) -> np.ndarray:
    """Cumulative predictor FLOPs after executing the first c checks."""
    costs = []
    prev = 0
    for p in positions:
        if kind == "threshold":
            costs.append(1)
        else:
            costs.append(2 * (p - prev) + 6)
        prev = p
    return np.concatenate(([0], np.cumsum(costs, dtype=np.int64))) if costs else np.zeros(1, np.int64)


def predictor_check_flops(kind: str, new_terms: int) -> int:
    """FLOPs of a single confidence check consuming ``new_terms`` fresh terms."""
    return 1 if kind == "threshold" else 2 * new_terms + 6


def nonzero_cost_order(weight: np.ndarray, kind: str) -> np.ndarray:
    """Input-term order ascending by nonzero weight count, stable on ties."""
    if kind == "conv2d":
        counts = np.count_nonzero(weight, axis=(0, 2, 3))
    else:
        counts = np.count_nonzero(weight, axis=0)
    return np.argsort(counts, kind="stable")


def _term_mac_costs(weight: np.ndarray, kind: str, order: np.ndarray) -> np.ndarray:
    """Per-unit, per-term MAC FLOPs in evaluation order (2 per nonzero weight).

    Dense/head: [units, n]; conv: [out_channels, n] (per output location).
    """
    if kind == "conv2d":
        per = 2 * np.count_nonzero(weight, axis=(2, 3))   # [O, C]
    else:
        per = 2 * (weight != 0).astype(np.int64)          # [units, n]
    return per[:, order].astype(np.int64)


@dataclass
class _LayerPlan:
    cfg: ReluPredictorCfg
    order: np.ndarray
    positions: list[int]
    cost_prefix: np.ndarray        # [units_or_channels, n+1] cumulative MAC FLOPs
    check_costs: np.ndarray        # [n_checks+1] cumulative predictor FLOPs
    enabled: np.ndarray            # per unit (dense) or per output channel (conv)
    quantile_sq: float | None      # stored constant for the statistical test
    kt: list[float]                # stored k*T constants per check position


def _plan_layer(spec: LayerSpec, weight: np.ndarray, cfg: ReluPredictorCfg,
                order_policy: str, override: np.ndarray | None) -> _LayerPlan:
    n_terms = weight.shape[1]
    if override is not None:
        order = np.asarray(override, dtype=np.int64)
        if sorted(order.tolist()) != list(range(n_terms)):
            raise ConfigError(f"{spec.name}: order override is not a permutation")
    elif order_policy == "by_nonzero_cost":
        order = nonzero_cost_order(weight, spec.kind)
    else:
        order = np.arange(n_terms, dtype=np.int64)

    positions = check_positions(cfg.k, cfg.schedule, n_terms) if cfg.kind != "none" else []
    costs = _term_mac_costs(weight, spec.kind, order)
    prefix = np.concatenate([np.zeros((costs.shape[0], 1), np.int64),
                             np.cumsum(costs, axis=1, dtype=np.int64)], axis=1)
    ccosts = check_cost_prefix(cfg.kind, positions)

    enabled = np.ones(costs.shape[0], dtype=bool)
    if positions and cfg.r is not None:
        prunable = prefix[:, n_terms] - prefix[:, positions[0]]
        enabled = prunable >= cfg.r * int(ccosts[-1])
    if not positions:
        enabled = np.zeros(costs.shape[0], dtype=bool)

    quantile_sq = None
    if cfg.kind == "statstest" and positions:
        quantile_sq = math.inf if cfg.param == 0.0 else inv_normal_cdf(cfg.param) ** 2
    kt = [p * cfg.param for p in positions] if cfg.kind == "threshold" else []
    return _LayerPlan(cfg, order, positions, prefix, ccosts, enabled, quantile_sq, kt)


def _verdict(plan: _LayerPlan, check_idx: int, ssum: np.ndarray, ssq: np.ndarray | None) -> np.ndarray:
    """Vectorized predicate decision at check ``check_idx``."""
    cfg = plan.cfg
    pos = plan.positions[check_idx]
    if cfg.kind == "threshold":
        return ssum < plan.kt[check_idx]
    if pos < 2:
        raise PredictorMisuseError("statistical check needs at least two terms")
    if cfg.param == 0.0:
        return np.zeros(ssum.shape, dtype=bool)
    d = pos * ssq - ssum * ssum
    floor = 1e-12 * pos * np.maximum(ssq, 1.0)
    zero_var = d <= floor
    ratio = (ssum * ssum) / np.where(zero_var, 1.0, d)
    return (ssum < 0) & (zero_var | (ratio > plan.quantile_sq))


# --------------------------------------------------------------------------
# Scalar reference path (the per-neuron semantics the batched code must match)
# --------------------------------------------------------------------------

def eval_neuron_exprune(terms, cfg: ReluPredictorCfg, ledger: FlopsLedger | None = None,
                        layer: str = "neuron", shadow_oracle: bool = False,
                        term_flops=None) -> float:
    """Consume one unit's ordered term stream with confidence checks.

    Returns 0 on a confident negative prediction (charging only consumed-term
    FLOPs plus predictor overhead), otherwise ReLU(w * sum + b) over all n
    terms.  With ``shadow_oracle`` the full sum is still computed after a prune
    and a misprediction is recorded when it turns out nonnegative.
    """
    cfg.validate()
    a = cfg.affine
    terms = list(terms)
    if len(terms) != a.n:
        raise PredictorMisuseError(f"stream yielded {len(terms)} terms, affine declares n={a.n}")
    if term_flops is None:
        term_flops = [2] * a.n
    positions = check_positions(cfg.k, cfg.schedule, a.n) if cfg.kind != "none" else []
    quantile_sq = None
    if cfg.kind == "statstest" and cfg.param > 0.0:
        quantile_sq = inv_normal_cdf(cfg.param) ** 2

    stats = PartialStats()
    raw_sum = 0.0
    mac = 0
    pred_flops = 0
    pruned_at = None
    check_iter = iter(positions)
    next_check = next(check_iter, None)
    prev_check = 0
    for i, xi in enumerate(terms, start=1):
        raw_sum += xi
        stats.consume(fold_affine(xi, cfg))
        mac += int(term_flops[i - 1])
        if i == next_check:
            pred_flops += predictor_check_flops(cfg.kind, i - prev_check)
            prev_check = i
            if cfg.kind == "threshold":
                fire = threshold_predict(stats, cfg.param)
            else:
                fire = cfg.param > 0.0 and statstest_predict(stats, cfg.param, quantile_sq)
            if fire:
                pruned_at = i
                break
            next_check = next(check_iter, None)

    if ledger is not None:
        counters = ledger.layer(layer)
        if positions:
            counters.opportunities += 1
        ledger.add(layer, "mac", mac)
        ledger.add(layer, "predictor", pred_flops)
    if pruned_at is None:
        return max(0.0, a.w * raw_sum + a.b)

    if ledger is not None:
        ledger.record_prune(layer, pruned_at, a.n)
    if shadow_oracle:
        raw_full = raw_sum
        for xi in terms[pruned_at:]:
            raw_full += xi
        if a.w * raw_full + a.b >= 0 and ledger is not None:
            ledger.layer(layer).mispredictions += 1
    return 0.0


def run_head_exprune_stream(term_vectors, cfg: HeadPredictorCfg,
                            ledger: FlopsLedger | None = None, layer: str = "head",
                            shadow_oracle: bool = False) -> int:
    """Scalar reference for the head: accumulate per-class score terms, check once at k."""
    cfg.validate()
    terms = [np.asarray(t, dtype=np.float64) for t in term_vectors]
    n = len(terms)
    n_classes = terms[0].shape[0]
    scores = np.zeros(n_classes)
    do_check = cfg.kind != "none" and cfg.k < n
    for i, t in enumerate(terms, start=1):
        scores = scores + t
        if do_check and i == cfg.k:
            if ledger is not None:
                cost = sum(predictor_check_flops(cfg.kind, cfg.k) if cfg.kind == "statstest" else 2
                           for _ in cfg.ranks)
                ledger.add(layer, "predictor", cost)
            order = np.argsort(-scores, kind="stable")
            winner = int(order[0])
            if cfg.kind == "threshold":
                fire = dominance_threshold(scores.tolist(), list(cfg.thresholds), list(cfg.ranks))
            else:
                pair_stats = {}
                for rank in cfg.ranks:
                    opp = int(order[rank - 1])
                    ps = PartialStats()
                    for j in range(cfg.k):
                        ps.consume(float(terms[j][winner] - terms[j][opp]))
                    pair_stats[rank] = ps
                fire = dominance_statstest(ClassScoreStats(scores.tolist(), pair_stats), cfg.alpha)
            if fire:
                if ledger is not None:
                    ledger.record_prune(layer, i, n)
                    if shadow_oracle:
                        full = scores + sum(terms[i:])
                        if int(np.argmax(full)) != winner:
                            ledger.layer(layer).mispredictions += 1
                return winner
    return int(np.argmax(scores))


# --------------------------------------------------------------------------
# Batched block executors
# --------------------------------------------------------------------------

def _normal_cdf_of_neg(z: np.ndarray) -> np.ndarray:
    """Phi(-z) elementwise (z >= 0)."""
    return np.array([0.5 * math.erfc(v / math.sqrt(2.0)) for v in z.ravel()]).reshape(z.shape)


class _ChunkResult:
    def __init__(self, n_samples: int):
        self.ledger = FlopsLedger()
        self.sample_flops = np.zeros(n_samples, dtype=np.int64)

    def charge(self, layer: str, category: str, per_sample: np.ndarray | int) -> None:
        if np.ndim(per_sample) == 0:
            per_sample = np.full(self.sample_flops.shape, per_sample, dtype=np.int64)
        self.ledger.add(layer, category, int(per_sample.sum()))
        self.sample_flops += per_sample.astype(np.int64)


def _run_dense_block(block: _Block, plan: _LayerPlan, X: np.ndarray, model: Model,
                     res: _ChunkResult, shadow: bool) -> np.ndarray:
    spec = block.primary
    W = model.tensor(spec.weight_name("weight")).array
    w_vec, b_vec = fold_block_affine(block, model)
    dtype = X.dtype
    n_units, n_terms = W.shape
    N = X.shape[0]
    cfg = plan.cfg

    P = X[:, None, plan.order] * W[None, :, plan.order]          # [N, units, n]
    cums = np.cumsum(P, axis=2)
    raw_final = cums[:, :, -1]

    stop = np.full((N, n_units), n_terms, dtype=np.int64)
    checks_done = np.zeros((N, n_units), dtype=np.int64)
    if plan.positions:
        bshare = (b_vec / dtype.type(n_terms)).astype(dtype)
        Pf = w_vec[None, :, None] * P + bshare[None, :, None]
        cf = np.cumsum(Pf, axis=2)
        cfsq = np.cumsum(Pf * Pf, axis=2) if cfg.kind == "statstest" else None
        active = np.broadcast_to(plan.enabled[None, :], (N, n_units)).copy()
        checks_done[:, plan.enabled] = 0
        for ci, pos in enumerate(plan.positions):
            if not active.any():
                break
            ssum = cf[:, :, pos - 1]
            ssq = cfsq[:, :, pos - 1] if cfsq is not None else None
            checks_done[active] = ci + 1
            fire = _verdict(plan, ci, ssum, ssq) & active
            stop[fire] = pos
            active &= ~fire
        res.ledger.layer(spec.name).opportunities += int(plan.enabled.sum()) * N

    pre = w_vec[None, :] * raw_final + b_vec[None, :]
    out = np.maximum(dtype.type(0), pre) if block.relu_name else pre
    pruned = stop < n_terms
    out = np.where(pruned, dtype.type(0), out)

    # metering
    mac = plan.cost_prefix[np.arange(n_units)[None, :], stop].sum(axis=1)
    res.charge(spec.name, "mac", mac)
    if spec.weight_name("bias"):
        res.charge(spec.name, "bias", n_units)
    if block.bn is not None:
        res.charge(block.bn.name, "bias", 2 * n_units)
    if block.relu_name:
        res.charge(block.relu_name, "activation", n_units)
    if plan.positions:
        res.charge(spec.name, "predictor", plan.check_costs[checks_done].sum(axis=1))
        n_pruned = int(pruned.sum())
        if n_pruned:
            c = res.ledger.layer(spec.name)
            c.prunes += n_pruned
            c.terms_computed += int(stop[pruned].sum())
            c.terms_total += n_pruned * n_terms
            if shadow:
                c.mispredictions += int((pruned & (pre >= 0)).sum())
    return out


def _run_conv_block(block: _Block, plan: _LayerPlan, X: np.ndarray, model: Model,
                    res: _ChunkResult, shadow: bool) -> np.ndarray:
    spec = block.primary
    g = spec.geometry
    K = model.tensor(spec.weight_name("weight")).array
    w_vec, b_vec = fold_block_affine(block, model)
    dtype = X.dtype
    stride, pad = g["stride"], g["padding"]
    n_out, n_terms = g["out_channels"], g["in_channels"]
    N = X.shape[0]
    ho = (X.shape[2] + 2 * pad - g["kernel_h"]) // stride + 1
    wo = (X.shape[3] + 2 * pad - g["kernel_w"]) // stride + 1
    Xp = np.pad(X, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else X
    cfg = plan.cfg

    unit_shape = (N, n_out, ho, wo)
    acc_raw = np.zeros(unit_shape, dtype=dtype)
    has_checks = bool(plan.positions)
    if has_checks:
        bshare = (b_vec / dtype.type(n_terms)).astype(dtype)[None, :, None, None]
        wcol = w_vec[None, :, None, None]
        acc_f = np.zeros(unit_shape, dtype=dtype)
        acc_fsq = np.zeros(unit_shape, dtype=dtype) if cfg.kind == "statstest" else None
        stop = np.full(unit_shape, n_terms, dtype=np.int64)
        checks_done = np.zeros(unit_shape, dtype=np.int64)
        active = np.broadcast_to(plan.enabled[None, :, None, None], unit_shape).copy()
        pos_index = {p: i for i, p in enumerate(plan.positions)}
    for t in range(n_terms):
        c = int(plan.order[t])
        contrib = channel_contribution(Xp[:, c], K[:, c], stride, (ho, wo))
        acc_raw += contrib
        if has_checks:
            f = wcol * contrib + bshare
            acc_f += f
            if acc_fsq is not None:
                acc_fsq += f * f
            ci = pos_index.get(t + 1)
            if ci is not None and active.any():
                checks_done[active] = ci + 1
                fire = _verdict(plan, ci, acc_f, acc_fsq) & active
                stop[fire] = t + 1
                active &= ~fire

    pre = w_vec[None, :, None, None] * acc_raw + b_vec[None, :, None, None]
    out = np.maximum(dtype.type(0), pre) if block.relu_name else pre
    numel = n_out * ho * wo
    if has_checks:
        pruned = stop < n_terms
        out = np.where(pruned, dtype.type(0), out)
        mac = plan.cost_prefix[np.arange(n_out)[None, :, None, None], stop].sum(axis=(1, 2, 3))
        res.charge(spec.name, "predictor", plan.check_costs[checks_done].sum(axis=(1, 2, 3)))
        res.ledger.layer(spec.name).opportunities += int(plan.enabled.sum()) * N * ho * wo
        n_pruned = int(pruned.sum())
        if n_pruned:
            cnt = res.ledger.layer(spec.name)
            cnt.prunes += n_pruned
            cnt.terms_computed += int(stop[pruned].sum())
            cnt.terms_total += n_pruned * n_terms
            if shadow:
                cnt.mispredictions += int((pruned & (pre >= 0)).sum())
    else:
        mac = np.full(N, int(plan.cost_prefix[:, n_terms].sum()) * ho * wo, dtype=np.int64)
    res.charge(spec.name, "mac", mac)
    if spec.weight_name("bias"):
        res.charge(spec.name, "bias", numel)
    if block.bn is not None:
        res.charge(block.bn.name, "bias", 2 * numel)
    if block.relu_name:
        res.charge(block.relu_name, "activation", numel)
    return out


def _run_head_block(block: _Block, head_cfg: HeadPredictorCfg, plan_order: np.ndarray,
                    cost_prefix: np.ndarray, X: np.ndarray, model: Model,
                    res: _ChunkResult, shadow: bool) -> np.ndarray:
    spec = block.primary
    W = model.tensor(spec.weight_name("weight")).array
    bias_ref = spec.weight_name("bias")
    dtype = X.dtype
    n_classes, n_terms = W.shape
    N = X.shape[0]

    T = X[:, None, plan_order] * W[None, :, plan_order]          # [N, classes, n]
    cums = np.cumsum(T, axis=2)
    final = cums[:, :, -1]
    if bias_ref:
        final = final + model.tensor(bias_ref).array[None, :]
        res.charge(spec.name, "bias", n_classes)
    full_pred = np.argmax(final, axis=1)

    pruned = np.zeros(N, dtype=bool)
    preds = full_pred.copy()
    k = head_cfg.k
    if head_cfg.kind != "none" and k < n_terms:
        sk = cums[:, :, k - 1]
        order = np.argsort(-sk, axis=1, kind="stable")
        winner = order[:, 0]
        m = len(head_cfg.ranks)
        if head_cfg.kind == "threshold":
            ok = np.ones(N, dtype=bool)
            wtop = np.take_along_axis(sk, winner[:, None], axis=1)[:, 0]
            for rank, thr in zip(head_cfg.ranks, head_cfg.thresholds):
                opp = order[:, rank - 1]
                gap = wtop - np.take_along_axis(sk, opp[:, None], axis=1)[:, 0]
                ok &= gap > thr
            res.charge(spec.name, "predictor", 2 * m)
            fire = ok
        else:
            pvals = np.empty((N, m))
            tw = np.take_along_axis(T[:, :, :k], winner[:, None, None], axis=1)[:, 0, :]
            for j, rank in enumerate(head_cfg.ranks):
                opp = order[:, rank - 1]
                to = np.take_along_axis(T[:, :, :k], opp[:, None, None], axis=1)[:, 0, :]
                d = tw - to
                dsum = np.cumsum(d, axis=1)[:, -1]
                dsq = np.cumsum(d * d, axis=1)[:, -1]
                dd = k * dsq - dsum * dsum
                floor = 1e-12 * k * np.maximum(dsq, 1.0)
                zero_var = dd <= floor
                z = np.sqrt((dsum * dsum) / np.where(zero_var, 1.0, dd))
                p = _normal_cdf_of_neg(z)
                p = np.where(zero_var, 0.0, p)
                pvals[:, j] = np.where(dsum <= 0, 1.0, p)
            res.charge(spec.name, "predictor", (2 * k + 6) * m)
            ps = np.sort(pvals, axis=1)
            budget = head_cfg.alpha / (m - np.arange(m))
            fire = np.all(ps <= budget[None, :], axis=1)
        pruned = fire
        preds = np.where(pruned, winner, full_pred)
        if pruned.any():
            cnt = res.ledger.layer(spec.name)
            cnt.prunes += int(pruned.sum())
            cnt.terms_computed += int(pruned.sum()) * k
            cnt.terms_total += int(pruned.sum()) * n_terms
            cnt.opportunities += N
            if shadow:
                cnt.mispredictions += int((pruned & (winner != full_pred)).sum())
        else:
            res.ledger.layer(spec.name).opportunities += N

    stops = np.where(pruned, k, n_terms)
    res.charge(spec.name, "head", cost_prefix[stops])
    return preds


def _plain_block_cost(block: _Block, model: Model, in_shape: tuple[int, ...]) -> list[tuple[str, str, int]]:
    """Per-sample (layer, category, flops) of a block with no checks executing."""
    spec = block.primary
    out = []
    if block.kind == "dense":
        n_units = spec.geometry["out"]
        W = model.tensor(spec.weight_name("weight")).array
        out.append((spec.name, "mac", 2 * int(np.count_nonzero(W))))
        if spec.weight_name("bias"):
            out.append((spec.name, "bias", n_units))
        if block.bn is not None:
            out.append((block.bn.name, "bias", 2 * n_units))
        if block.relu_name:
            out.append((block.relu_name, "activation", n_units))
    elif block.kind == "conv":
        g = spec.geometry
        ho = (in_shape[1] + 2 * g["padding"] - g["kernel_h"]) // g["stride"] + 1
        wo = (in_shape[2] + 2 * g["padding"] - g["kernel_w"]) // g["stride"] + 1
        numel = g["out_channels"] * ho * wo
        K = model.tensor(spec.weight_name("weight")).array
        out.append((spec.name, "mac", 2 * int(np.count_nonzero(K)) * ho * wo))
        if spec.weight_name("bias"):
            out.append((spec.name, "bias", numel))
        if block.bn is not None:
            out.append((block.bn.name, "bias", 2 * numel))
        if block.relu_name:
            out.append((block.relu_name, "activation", numel))
    elif block.kind == "pool":
        out.append((spec.name, "mac", int(np.prod(in_shape))))
    elif block.kind == "head":
        W = model.tensor(spec.weight_name("weight")).array
        out.append((spec.name, "head", 2 * int(np.count_nonzero(W))))
        if spec.weight_name("bias"):
            out.append((spec.name, "bias", spec.geometry["classes"]))
    elif block.kind == "batchnorm":
        out.append((spec.name, "bias", 2 * int(np.prod(in_shape))))
    elif block.kind == "relu":
        out.append((spec.name, "activation", int(np.prod(in_shape))))
    return out


def _block_out_shape(block: _Block, in_shape: tuple[int, ...]) -> tuple[int, ...]:
    spec = block.primary
    if block.kind == "dense":
        return (spec.geometry["out"],)
    if block.kind == "conv":
        g = spec.geometry
        ho = (in_shape[1] + 2 * g["padding"] - g["kernel_h"]) // g["stride"] + 1
        wo = (in_shape[2] + 2 * g["padding"] - g["kernel_w"]) // g["stride"] + 1
        return (g["out_channels"], ho, wo)
    if block.kind == "pool":
        return (in_shape[0],)
    if block.kind == "head":
        return (spec.geometry["classes"],)
    return in_shape


# --------------------------------------------------------------------------
# Analytic FLOPs
# --------------------------------------------------------------------------

def flops_of(kind: str, geometry: dict) -> int:
    """Analytic per-sample FLOPs of a layer from its resolved geometry.

    Geometry keys: dense {in,out,has_bias}; conv2d {in_channels,out_channels,
    kernel_h,kernel_w,out_h,out_w,has_bias}; batchnorm/relu {numel};
    avg_pool_global {channels,h,w}; prediction_head {in,classes,has_bias}.
    """
    g = geometry
    if kind == "dense":
        return 2 * g["in"] * g["out"] + (g["out"] if g.get("has_bias") else 0)
    if kind == "conv2d":
        macs = 2 * g["out_channels"] * g["out_h"] * g["out_w"] * g["in_channels"] \
            * g["kernel_h"] * g["kernel_w"]
        return macs + (g["out_channels"] * g["out_h"] * g["out_w"] if g.get("has_bias") else 0)
    if kind == "batchnorm":
        return 2 * g["numel"]
    if kind == "relu":
        return g["numel"]
    if kind == "avg_pool_global":
        return g["channels"] * g["h"] * g["w"]
    if kind == "prediction_head":
        return 2 * g["in"] * g["classes"] + (g["classes"] if g.get("has_bias") else 0)
    raise ConfigError(f"no FLOPs model for layer kind {kind!r}")


def model_flops_breakdown(model: Model) -> list[tuple[str, int]]:
    """Per-layer analytic FLOPs with spatial extents resolved by shape propagation."""
    rows = []
    shape = tuple(model.input_shape)
    for spec in model.layers:
        g = dict(spec.geometry)
        if spec.kind in ("dense", "prediction_head"):
            g["has_bias"] = spec.weight_name("bias") is not None
        elif spec.kind == "conv2d":
            g["has_bias"] = spec.weight_name("bias") is not None
            g["out_h"] = (shape[1] + 2 * g["padding"] - g["kernel_h"]) // g["stride"] + 1
            g["out_w"] = (shape[2] + 2 * g["padding"] - g["kernel_w"]) // g["stride"] + 1
        elif spec.kind in ("batchnorm", "relu"):
            g["numel"] = int(np.prod(shape))
        elif spec.kind == "avg_pool_global":
            g["channels"], g["h"], g["w"] = shape
        rows.append((spec.name, flops_of(spec.kind, g)))
        shape = _propagate(spec, shape)
    return rows


def _propagate(spec: LayerSpec, shape: tuple[int, ...]) -> tuple[int, ...]:
    from .modelio import _propagate_shape
    return _propagate_shape(spec, shape)


def baseline_flops_per_sample(model: Model) -> int:
    """Per-sample FLOPs of the plain path, counting MACs only for nonzero weights."""
    total = 0
    shape = tuple(model.input_shape)
    for block in compile_blocks(model):
        for _, _, flops in _plain_block_cost(block, model, shape):
            total += flops
        shape = _block_out_shape(block, shape)
    return total


# --------------------------------------------------------------------------
# Single-sample public wrappers
# --------------------------------------------------------------------------

def _single_layer_block(model: Model, layer_name: str) -> _Block:
    for block in compile_blocks(model):
        if block.primary.name == layer_name:
            return block
    raise ConfigError(f"layer {layer_name!r} does not start a block")


def run_dense_exprune(model: Model, layer_name: str, x, cfg: ReluPredictorCfg,
                      ledger: FlopsLedger | None = None, order: str = "natural",
                      shadow_oracle: bool = False) -> Tensor:
    """Early-terminating dense layer over one input vector."""
    block = _single_layer_block(model, layer_name)
    if block.kind != "dense":
        raise ConfigError(f"{layer_name!r} is not a dense layer")
    W = model.tensor(block.primary.weight_name("weight")).array
    cfg.validate()
    plan = _plan_layer(block.primary, W, cfg, order, None)
    res = _ChunkResult(1)
    arr = (x.array if isinstance(x, Tensor) else np.asarray(x)).astype(model.dtype, copy=False)
    out = _run_dense_block(block, plan, arr[None, :], model, res, shadow_oracle)
    if ledger is not None:
        ledger.merge(res.ledger)
    return Tensor(out[0])


def run_conv_exprune(model: Model, layer_name: str, x, cfg: ReluPredictorCfg,
                     ledger: FlopsLedger | None = None, order: str = "natural",
                     shadow_oracle: bool = False) -> Tensor:
    """Early-terminating convolution block over one [C,H,W] input."""
    block = _single_layer_block(model, layer_name)
    if block.kind != "conv":
        raise ConfigError(f"{layer_name!r} is not a convolution layer")
    K = model.tensor(block.primary.weight_name("weight")).array
    cfg.validate()
    plan = _plan_layer(block.primary, K, cfg, order, None)
    res = _ChunkResult(1)
    arr = (x.array if isinstance(x, Tensor) else np.asarray(x)).astype(model.dtype, copy=False)
    out = _run_conv_block(block, plan, arr[None, ...], model, res, shadow_oracle)
    if ledger is not None:
        ledger.merge(res.ledger)
    return Tensor(out[0])


def run_head_exprune(model: Model, x, cfg: HeadPredictorCfg,
                     ledger: FlopsLedger | None = None, order: str = "natural",
                     shadow_oracle: bool = False) -> int:
    """Early-terminating top-1 head over one feature vector; returns the class index."""
    block = compile_blocks(model)[-1]
    if block.kind != "head":
        raise ConfigError("model has no prediction head")
    cfg.validate(model.class_count)
    W = model.tensor(block.primary.weight_name("weight")).array
    if order == "by_nonzero_cost":
        order_idx = nonzero_cost_order(W, "dense")
    else:
        order_idx = np.arange(W.shape[1], dtype=np.int64)
    costs = _term_mac_costs(W, "dense", order_idx).sum(axis=0)
    prefix = np.concatenate(([0], np.cumsum(costs, dtype=np.int64)))
    res = _ChunkResult(1)
    arr = (x.array if isinstance(x, Tensor) else np.asarray(x)).astype(model.dtype, copy=False)
    pred = _run_head_block(block, cfg, order_idx, prefix, arr[None, :], model, res, shadow_oracle)
    if ledger is not None:
        ledger.merge(res.ledger)
    return int(pred[0])


def forward_plain(model: Model, x, collect: dict | None = None) -> np.ndarray:
    """Reference single-sample forward pass with the engine's folded-affine semantics.

    When ``collect`` (a dict) is passed, each block's output is stored in it
    under the block's primary layer name.
    """
    from .tensor import conv2d, matmul, avg_pool_global
    arr = (x.array if isinstance(x, Tensor) else np.asarray(x))
    arr = arr.reshape(model.input_shape).astype(model.dtype, copy=False)
    for block in compile_blocks(model):
        spec = block.primary
        if block.kind == "dense":
            w_vec, b_vec = fold_block_affine(block, model)
            s = matmul(model.tensor(spec.weight_name("weight")).array, arr).array
            arr = w_vec * s + b_vec
            if block.relu_name:
                arr = np.maximum(model.dtype.type(0), arr)
        elif block.kind == "conv":
            g = spec.geometry
            w_vec, b_vec = fold_block_affine(block, model)
            s = conv2d(arr, model.tensor(spec.weight_name("weight")).array,
                       g["stride"], g["padding"]).array
            arr = w_vec[:, None, None] * s + b_vec[:, None, None]
            if block.relu_name:
                arr = np.maximum(model.dtype.type(0), arr)
        elif block.kind == "pool":
            arr = avg_pool_global(arr).array
        elif block.kind == "head":
            arr = matmul(model.tensor(spec.weight_name("weight")).array, arr).array
            bias_ref = spec.weight_name("bias")
            if bias_ref:
                arr = arr + model.tensor(bias_ref).array
        elif block.kind == "batchnorm":
            bn = spec
            gamma = model.tensor(bn.weight_name("gamma")).array
            beta = model.tensor(bn.weight_name("beta")).array
            mean = model.tensor(bn.weight_name("mean")).array
            var = model.tensor(bn.weight_name("var")).array
            eps = model.dtype.type(bn.geometry.get("eps", 1e-5))
            scale = gamma / np.sqrt(var + eps)
            shape = (-1,) + (1,) * (arr.ndim - 1)
            arr = scale.reshape(shape) * arr + (beta - mean * scale).reshape(shape)
        elif block.kind == "relu":
            arr = np.maximum(model.dtype.type(0), arr)
        if collect is not None:
            collect[block.primary.name] = arr
    return arr


# --------------------------------------------------------------------------
# Whole-run evaluation
# --------------------------------------------------------------------------

@dataclass
class ActivationCache:
    """Input activations of ``boundary`` (block index) for a whole dataset."""

    boundary: int
    activations: np.ndarray


def _layer_plans(model: Model, cfg: PruneConfig, term_orders) -> dict[str, _LayerPlan]:
    plans = {}
    for block in compile_blocks(model):
        if block.kind not in ("dense", "conv"):
            continue
        spec = block.primary
        lcfg = cfg.layer_cfg(spec.name)
        if not block.relu_name and lcfg.kind != "none":
            raise ConfigError(f"layer {spec.name!r} has no ReLU; negative prediction cannot apply")
        W = model.tensor(spec.weight_name("weight")).array
        override = term_orders.get(spec.name) if term_orders else None
        plans[spec.name] = _plan_layer(spec, W, lcfg, cfg.order, override)
    return plans


def _head_order_and_costs(model: Model, cfg: PruneConfig, term_orders):
    block = compile_blocks(model)[-1]
    if block.kind != "head":
        return None, None
    W = model.tensor(block.primary.weight_name("weight")).array
    override = term_orders.get(block.primary.name) if term_orders else None
    if override is not None:
        order_idx = np.asarray(override, dtype=np.int64)
    elif cfg.order == "by_nonzero_cost":
        order_idx = nonzero_cost_order(W, "dense")
    else:
        order_idx = np.arange(W.shape[1], dtype=np.int64)
    costs = _term_mac_costs(W, "dense", order_idx).sum(axis=0)
    prefix = np.concatenate(([0], np.cumsum(costs, dtype=np.int64)))
    return order_idx, prefix


def _block_is_inert(block: _Block, cfg: PruneConfig, plans) -> bool:
    """True when no confidence check can execute inside the block."""
    if block.kind in ("dense", "conv"):
        plan = plans[block.primary.name]
        return not plan.positions or not plan.enabled.any()
    if block.kind == "head":
        return True   # the head never changes its own input
    return True


def _apply_batchnorm(model: Model, bn: LayerSpec, arr: np.ndarray) -> np.ndarray:
    gamma = model.tensor(bn.weight_name("gamma")).array
    beta = model.tensor(bn.weight_name("beta")).array
    mean = model.tensor(bn.weight_name("mean")).array
    var = model.tensor(bn.weight_name("var")).array
    eps = arr.dtype.type(bn.geometry.get("eps", 1e-5))
    scale = gamma / np.sqrt(var + eps)
    shape = (1, -1) + (1,) * (arr.ndim - 2)
    return scale.reshape(shape) * arr + (beta - mean * scale).reshape(shape)


def _run_chunk(model: Model, blocks, plans, head_info, cfg: PruneConfig, X: np.ndarray,
               shadow: bool, start_block: int, skipped_cost) -> tuple[np.ndarray, _ChunkResult]:
    res = _ChunkResult(X.shape[0])
    for layer, category, flops in skipped_cost:
        res.charge(layer, category, flops)
    arr = X
    preds = None
    dtype = model.dtype
    for bi in range(start_block, len(blocks)):
        block = blocks[bi]
        spec = block.primary
        if block.kind == "dense":
            arr = _run_dense_block(block, plans[spec.name], arr, model, res, shadow)
        elif block.kind == "conv":
            arr = _run_conv_block(block, plans[spec.name], arr, model, res, shadow)
        elif block.kind == "pool":
            res.charge(spec.name, "mac", int(np.prod(arr.shape[1:])))
            arr = pooled_batch(arr)
        elif block.kind == "head":
            order_idx, prefix = head_info
            preds = _run_head_block(block, cfg.head, order_idx, prefix, arr, model, res, shadow)
        elif block.kind == "batchnorm":
            res.charge(spec.name, "bias", 2 * int(np.prod(arr.shape[1:])))
            arr = _apply_batchnorm(model, spec, arr)
        elif block.kind == "relu":
            res.charge(spec.name, "activation", int(np.prod(arr.shape[1:])))
            arr = np.maximum(dtype.type(0), arr)
    if preds is None:
        preds = np.argmax(arr, axis=1)
    return preds, res


def precompute_activations(model: Model, dataset: Dataset, cfg: PruneConfig | None = None,
                           term_orders=None) -> ActivationCache:
    """Activations at the deepest block boundary no enabled check can precede.

    Reusable across evaluations whose configs keep every block before the
    boundary inert (the sweep's trials differ only in predicate parameters).
    """
    cfg = cfg or PruneConfig.none()
    blocks = compile_blocks(model)
    plans = _layer_plans(model, cfg, term_orders)
    boundary = 0
    for block in blocks:
        if not _block_is_inert(block, cfg, plans) or block.kind == "head":
            break
        boundary += 1
    X = dataset.stacked(model.dtype).reshape((len(dataset),) + tuple(model.input_shape))
    res = _ChunkResult(X.shape[0])
    arr = X
    for bi in range(boundary):
        block = blocks[bi]
        if block.kind == "dense":
            arr = _run_dense_block(block, plans[block.primary.name], arr, model, res, False)
        elif block.kind == "conv":
            arr = _run_conv_block(block, plans[block.primary.name], arr, model, res, False)
        elif block.kind == "pool":
            arr = pooled_batch(arr)
        elif block.kind == "batchnorm":
            arr = _apply_batchnorm(model, block.primary, arr)
        elif block.kind == "relu":
            arr = np.maximum(model.dtype.type(0), arr)
    return ActivationCache(boundary, arr)


def evaluate(model: Model, dataset: Dataset, cfg: PruneConfig | None = None, *,
             shadow_oracle: bool = False, chunk_size: int = 512, threads: int = 1,
             term_orders=None, cache: ActivationCache | None = None) -> RunReport:
    """Run every sample, returning fidelity, exact FLOPs, and prune statistics."""
    cfg = cfg or PruneConfig.none()
    cfg.validate(model)
    blocks = compile_blocks(model)
    plans = _layer_plans(model, cfg, term_orders)
    head_info = _head_order_and_costs(model, cfg, term_orders)
    n = len(dataset)
    if n == 0:
        raise ConfigError("cannot evaluate an empty dataset")
    full_input_shape = (n,) + tuple(model.input_shape)
    expected = int(np.prod(model.input_shape))
    if dataset.inputs[0].size != expected:
        raise ShapeError(
            f"dataset samples have {dataset.inputs[0].size} values, model expects {expected}"
        )

    start_block = 0
    skipped_cost: list[tuple[str, str, int]] = []
    if cache is not None:
        usable = cache.boundary
        for bi in range(cache.boundary):
            if not _block_is_inert(blocks[bi], cfg, plans):
                usable = 0
                break
        if usable and len(cache.activations) == n:
            start_block = cache.boundary
            shape = tuple(model.input_shape)
            for bi in range(start_block):
                skipped_cost.extend(_plain_block_cost(blocks[bi], model, shape))
                shape = _block_out_shape(blocks[bi], shape)
            X_all = cache.activations
        else:
            cache = None
    if cache is None or start_block == 0:
        start_block = 0
        skipped_cost = []
        X_all = dataset.stacked(model.dtype).reshape(full_input_shape)

    chunks = [slice(i, min(i + chunk_size, n)) for i in range(0, n, chunk_size)]

    def work(sl):
        return _run_chunk(model, blocks, plans, head_info, cfg,
                          X_all[sl], shadow_oracle, start_block, skipped_cost)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, chunks))
    else:
        results = [work(sl) for sl in chunks]

    ledger = FlopsLedger()
    preds = np.empty(n, dtype=np.int64)
    sample_flops = np.empty(n, dtype=np.int64)
    for sl, (p, res) in zip(chunks, results):
        preds[sl] = p
        sample_flops[sl] = res.sample_flops
        ledger.merge(res.ledger)

    labels = np.asarray(dataset.labels)
    fidelity = float((preds == labels).mean())
    baseline = baseline_flops_per_sample(model) * n
    total = ledger.total
    prune_rates = {
        name: (c.prunes / c.opportunities if c.opportunities else 0.0)
        for name, c in ledger.layers.items()
        if c.opportunities or c.prunes
    }
    mis_rate = ledger.mispredictions / ledger.prunes if ledger.prunes else 0.0
    return RunReport(
        fidelity=fidelity,
        total_flops=total,
        baseline_flops=baseline,
        normalized_flops=total / baseline,
        ledger=ledger,
        predictions=preds,
        labels=labels,
        sample_flops=sample_flops,
        per_layer_prune_rate=prune_rates,
        misprediction_rate=mis_rate,
    )
