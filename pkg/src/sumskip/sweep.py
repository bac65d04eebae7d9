"""Per-layer hyperparameter search with Pareto-slice selection.

Seeded random search draws per-layer predicate parameters (uniform for
thresholds, log-uniform for test levels, uniform for the disable ratio),
evaluates each trial on the validation set, and slices the (fidelity, FLOPs)
plane by repeated non-dominated-set extraction.  Selected configurations are
confirmed on the test set.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .engine import (
    ActivationCache,
    HeadPredictorCfg,
    PruneConfig,
    ReluPredictorCfg,
    compile_blocks,
    evaluate,
    precompute_activations,
)
from .errors import ConfigError
from .modelio import Dataset, Model


@dataclass(frozen=True)
class SearchSpace:
    """Per-layer parameter ranges plus the fixed parts of every trial config."""

    kind: str                                   # threshold | statstest
    layer_ranges: dict[str, tuple[float, float]]
    k: int = 32
    schedule: str = "once_at_k"
    order: str = "natural"
    r_range: tuple[float, float] | None = None
    head: HeadPredictorCfg = field(default_factory=HeadPredictorCfg)
    warm_start: tuple[dict, ...] = ()

    def validate(self):
        if self.kind not in ("threshold", "statstest"):
            raise ConfigError(f"unknown search kind {self.kind!r}")
        if not self.layer_ranges:
            raise ConfigError("search space has no layers")
        for layer, (lo, hi) in self.layer_ranges.items():
            if not lo < hi:
                raise ConfigError(f"{layer}: empty range ({lo}, {hi})")
            if self.kind == "statstest" and not (0.0 < lo and hi <= 0.5):
                raise ConfigError(f"{layer}: test level range must lie in (0, 0.5]")
            if self.kind == "threshold" and hi > 0.0:
                raise ConfigError(f"{layer}: threshold range must be <= 0")
        if self.r_range is not None:
            lo, hi = self.r_range
            if not (0.1 <= lo <= hi <= 0.5):
                raise ConfigError(f"disable ratio range must lie in [0.1, 0.5], got {self.r_range}")


def default_space(model: Model, kind: str, t_min: float = -30.0,
                  alpha_range: tuple[float, float] = (1e-3, 0.5), k: int = 32,
                  with_r: bool = False, order: str = "natural",
                  head: HeadPredictorCfg | None = None) -> SearchSpace:
    """One range per prunable layer whose term count exceeds the check position."""
    ranges = {}
    for block in compile_blocks(model):
        if block.kind not in ("dense", "conv") or not block.relu_name:
            continue
        spec = block.primary
        n_terms = spec.geometry["in_channels"] if spec.kind == "conv2d" else spec.geometry["in"]
        if n_terms <= k:
            continue
        ranges[spec.name] = alpha_range if kind == "statstest" else (t_min, 0.0)
    return SearchSpace(kind=kind, layer_ranges=ranges, k=k, order=order,
                       r_range=(0.1, 0.5) if with_r else None,
                       head=head or HeadPredictorCfg())


def space_to_json(space: SearchSpace) -> dict:
    doc = {
        "schema_version": 1,
        "kind": space.kind,
        "k": space.k,
        "schedule": space.schedule,
        "order": space.order,
        "layers": {name: list(r) for name, r in space.layer_ranges.items()},
        "r": list(space.r_range) if space.r_range else None,
        "warm_start": [dict(w) for w in space.warm_start],
    }
    if space.head.kind != "none":
        doc["head"] = {"kind": space.head.kind, "k": space.head.k,
                       "ranks": list(space.head.ranks), "alpha": space.head.alpha,
                       "thresholds": list(space.head.thresholds)}
    return doc


def space_from_json(doc: dict) -> SearchSpace:
    head = HeadPredictorCfg()
    if "head" in doc and doc["head"]:
        h = doc["head"]
        head = HeadPredictorCfg(kind=h.get("kind", "none"), k=int(h.get("k", 160)),
                                ranks=tuple(h.get("ranks", (2, 3))),
                                alpha=float(h.get("alpha", 0.1)),
                                thresholds=tuple(h.get("thresholds", ())))
    return SearchSpace(
        kind=doc["kind"],
        layer_ranges={name: (float(r[0]), float(r[1])) for name, r in doc["layers"].items()},
        k=int(doc.get("k", 32)),
        schedule=doc.get("schedule", "once_at_k"),
        order=doc.get("order", "natural"),
        r_range=tuple(doc["r"]) if doc.get("r") else None,
        head=head,
        warm_start=tuple(doc.get("warm_start", ())),
    )


def load_space(path) -> SearchSpace:
    with open(path, "r", encoding="utf-8") as fh:
        return space_from_json(json.load(fh))


@dataclass(frozen=True)
class TrialResult:
    index: int
    params: dict
    config: PruneConfig
    fidelity: float
    flops: int
    normalized_flops: float


@dataclass(frozen=True)
class ParetoSlice:
    index: int                      # 1-based
    members: tuple[TrialResult, ...]


def _trial_config(space: SearchSpace, params: dict) -> PruneConfig:
    layers = {}
    for name in space.layer_ranges:
        layers[name] = ReluPredictorCfg(
            kind=space.kind,
            param=float(params[name]),
            k=space.k,
            schedule=space.schedule,
            r=float(params[f"{name}.r"]) if f"{name}.r" in params else None,
        )
    return PruneConfig(layers=layers, head=space.head, order=space.order)


def _draw_params(space: SearchSpace, rng: np.random.Generator) -> dict:
    params = {}
    for name, (lo, hi) in space.layer_ranges.items():
        if space.kind == "statstest":
            params[name] = float(math.exp(rng.uniform(math.log(lo), math.log(hi))))
        else:
            params[name] = float(rng.uniform(lo, hi))
        if space.r_range is not None:
            params[f"{name}.r"] = float(rng.uniform(*space.r_range))
    return params


def random_search(space: SearchSpace, n_trials: int, model: Model, valset: Dataset,
                  seed: int = 0, threads: int = 1,
                  cache: ActivationCache | None = None) -> list[TrialResult]:
    """n_trials seeded draws evaluated on the validation set, in trial order.

    Warm-start parameter dicts occupy the first trials.  An activation cache
    from ``precompute_activations`` skips re-running the layers no trial can
    touch.
    """
    space.validate()
    if n_trials < 1:
        raise ConfigError(f"need at least one trial, got {n_trials}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 3])))
    param_sets = [dict(w) for w in space.warm_start[:n_trials]]
    while len(param_sets) < n_trials:
        param_sets.append(_draw_params(space, rng))

    if cache is None:
        cache = precompute_activations(model, valset, _trial_config(space, param_sets[0]))

    def run(item):
        idx, params = item
        cfg = _trial_config(space, params)
        report = evaluate(model, valset, cfg, cache=cache)
        return TrialResult(idx, params, cfg, report.fidelity,
                           report.total_flops, report.normalized_flops)

    items = list(enumerate(param_sets))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, items))
    else:
        results = [run(it) for it in items]
    return results


def dominates(a: TrialResult, b: TrialResult) -> bool:
    """a dominates b iff a is no worse on both axes and better on at least one."""
    return (a.fidelity >= b.fidelity and a.flops <= b.flops
            and (a.fidelity > b.fidelity or a.flops < b.flops))


def pareto_slices(results: list[TrialResult], n_slices: int = 5) -> list[ParetoSlice]:
    """Repeated non-dominated-set extraction over (maximize fidelity, minimize FLOPs).

    Uses the domination-count scheme: S[i] holds the points i dominates and
    n[i] how many dominate i; the front is n == 0, peeled n_slices times.
    """
    if not results:
        raise ConfigError("no trial results to slice")
    n = len(results)
    dominated_by_me = [[] for _ in range(n)]
    dom_count = [0] * n
    for i in range(n):
        for j in range(i + 1, n):
            if dominates(results[i], results[j]):
                dominated_by_me[i].append(j)
                dom_count[j] += 1
            elif dominates(results[j], results[i]):
                dominated_by_me[j].append(i)
                dom_count[i] += 1
    front = [i for i in range(n) if dom_count[i] == 0]
    slices = []
    while front and len(slices) < n_slices:
        slices.append(ParetoSlice(len(slices) + 1, tuple(results[i] for i in front)))
        nxt = []
        for i in front:
            for j in dominated_by_me[i]:
                dom_count[j] -= 1
                if dom_count[j] == 0:
                    nxt.append(j)
        front = nxt
    return slices


@dataclass(frozen=True)
class ConfirmRow:
    trial: TrialResult
    test_fidelity: float
    test_normalized_flops: float
    fidelity_gap: float             # validation minus test


def confirm_on_test(selected: list[TrialResult], model: Model, testset: Dataset,
                    threads: int = 1, cache: ActivationCache | None = None) -> list[ConfirmRow]:
    """Evaluate the selected configurations on the held-out test set."""
    if not selected:
        raise ConfigError("no configurations selected")
    if cache is None:
        cache = precompute_activations(model, testset, selected[0].config)

    def run(trial: TrialResult) -> ConfirmRow:
        report = evaluate(model, testset, trial.config, cache=cache)
        return ConfirmRow(trial, report.fidelity, report.normalized_flops,
                          trial.fidelity - report.fidelity)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, selected))
    return [run(t) for t in selected]
