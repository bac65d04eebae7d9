"""Engine tests: early-termination semantics, exact metering, determinism."""

import numpy as np
import pytest

from sumskip import archs, engine, modelio, training
from sumskip.engine import (
    FlopsLedger,
    PruneConfig,
    eval_neuron_exprune,
    evaluate,
    flops_of,
    forward_plain,
    model_flops_breakdown,
    predictor_check_flops,
    run_conv_exprune,
    run_dense_exprune,
    run_head_exprune,
    run_head_exprune_stream,
)
from sumskip.errors import ConfigError
from sumskip.modelio import LayerSpec, Model
from sumskip.predictors import AffineFold, HeadPredictorCfg, ReluPredictorCfg
from sumskip.tensor import Tensor


def relu_cfg(kind, param, k=32, schedule="once_at_k", n=1, w=1.0, b=0.0, r=None):
    return ReluPredictorCfg(kind=kind, param=param, k=k, schedule=schedule, r=r,
                            affine=AffineFold(w, b, n))


class TestEvalNeuron:
    def test_disabled_predictor_is_exact_relu(self, rng):
        terms = rng.standard_normal(20).tolist()
        cfg = relu_cfg("none", 0.0, n=20, w=1.7, b=-0.3)
        led = FlopsLedger()
        out = eval_neuron_exprune(terms, cfg, ledger=led, layer="L")
        assert out == max(0.0, 1.7 * np.cumsum(terms)[-1] - 0.3)
        assert led.layers["L"].predictor == 0
        assert led.layers["L"].mac == 40

    def test_constant_negative_stream_prunes_at_k(self):
        cfg = relu_cfg("statstest", 0.1, k=32, n=64)
        led = FlopsLedger()
        out = eval_neuron_exprune([-1.0] * 64, cfg, ledger=led, layer="L")
        assert out == 0.0
        c = led.layers["L"]
        assert c.mac == 32 * 2
        assert c.predictor == 2 * 32 + 6
        assert (c.prunes, c.terms_computed, c.terms_total) == (1, 32, 64)

    def test_adversarial_prefix_counts_misprediction(self):
        # prefix mean -1 trips a threshold just above it; the full sum is positive
        terms = [-1.0] * 4 + [1.0] * 8
        cfg = relu_cfg("threshold", -0.9, k=4, n=12)
        led = FlopsLedger()
        out = eval_neuron_exprune(terms, cfg, ledger=led, layer="L", shadow_oracle=True)
        assert out == 0.0
        assert led.layers["L"].prunes == 1
        assert led.layers["L"].mispredictions == 1

    def test_every_k_checks_until_prune(self):
        terms = [1.0] * 8 + [-5.0] * 8
        cfg = relu_cfg("threshold", -0.5, k=4, schedule="every_k", n=16)
        led = FlopsLedger()
        out = eval_neuron_exprune(terms, cfg, ledger=led, layer="L")
        # checks at 4, 8 fail; the one at 12 fires
        assert out == 0.0
        assert led.layers["L"].predictor == 3
        assert led.layers["L"].terms_computed == 12


def dense_baseline(model, x):
    W = model.tensor("dense1.weight").array
    b = model.tensor("dense1.bias").array
    s = np.cumsum(W * np.asarray(x)[None, :], axis=1)[:, -1]
    return np.maximum(0.0, 1.0 * s + b)


class TestRunDense:
    def test_disabled_matches_plain_path(self, mlp_model, rng):
        x = rng.standard_normal(8)
        out = run_dense_exprune(mlp_model, "dense1", x, relu_cfg("none", 0.0))
        assert np.array_equal(out.array, dense_baseline(mlp_model, x))

    def test_zero_weight_row_returns_relu_bias(self, mlp_model, rng):
        W = mlp_model.tensor("dense1.weight").array.copy()
        b = mlp_model.tensor("dense1.bias").array.copy()
        W[3] = 0.0
        b[3] = 0.25
        model = mlp_model.with_tensors({"dense1.weight": W, "dense1.bias": b})
        x = rng.standard_normal(8)
        for kind, param in (("threshold", -0.01), ("statstest", 0.5)):
            led = FlopsLedger()
            out = run_dense_exprune(model, "dense1", x, relu_cfg(kind, param, k=4), ledger=led)
            assert out.array[3] == 0.25

    def test_threshold_prunes_to_zero_and_rest_bit_exact(self, mlp_model, rng):
        x = rng.standard_normal(8)
        base = dense_baseline(mlp_model, x)
        led = FlopsLedger()
        out = run_dense_exprune(mlp_model, "dense1", x, relu_cfg("threshold", 0.5, k=4),
                                ledger=led, shadow_oracle=True)
        pruned = out.array == 0.0
        assert led.layers["dense1"].prunes > 0
        for i in range(16):
            if out.array[i] != 0.0:
                assert out.array[i] == base[i]

    def test_sound_prunes_reproduce_baseline(self, mlp_model, rng):
        # tuned so every prune is error-free: outputs must be bit-identical
        for trial in range(20):
            x = rng.standard_normal(8)
            led = FlopsLedger()
            out = run_dense_exprune(mlp_model, "dense1", x, relu_cfg("statstest", 0.02, k=4),
                                    ledger=led, shadow_oracle=True)
            if led.layers["dense1"].mispredictions == 0:
                assert np.array_equal(out.array, dense_baseline(mlp_model, x))


def conv_relu_model(channels=64, values=None):
    """conv (1x1 kernel) + relu over a [channels,1,1] input."""
    w = np.ones((1, channels, 1, 1)) if values is None else values
    layers = (
        LayerSpec("conv1", "conv2d", {"in_channels": channels, "out_channels": w.shape[0],
                                      "kernel_h": 1, "kernel_w": 1, "stride": 1, "padding": 0},
                  {"weight": "conv1.weight"}),
        LayerSpec("relu1", "relu"),
    )
    return Model(layers=layers, tensors={"conv1.weight": Tensor(w)},
                 precision="f64", class_count=2, input_shape=(channels, 1, 1))


class TestRunConv:
    def test_too_few_channels_is_inert(self, cnn_model, rng):
        x = rng.standard_normal((2, 8, 8))
        led = FlopsLedger()
        out = run_conv_exprune(cnn_model, "conv1", x, relu_cfg("statstest", 0.4, k=32),
                               ledger=led)
        base = run_conv_exprune(cnn_model, "conv1", x, relu_cfg("none", 0.0))
        assert np.array_equal(out.array, base.array)
        assert led.layers["conv1"].predictor == 0
        assert led.layers["conv1"].prunes == 0

    def test_ledger_saving_is_remaining_macs_minus_check(self):
        model = conv_relu_model(64)
        x = Tensor(-np.ones((64, 1, 1)))
        led_none = FlopsLedger()
        run_conv_exprune(model, "conv1", x, relu_cfg("none", 0.0), ledger=led_none)
        led = FlopsLedger()
        out = run_conv_exprune(model, "conv1", x, relu_cfg("threshold", -0.5, k=32), ledger=led)
        assert out.array.ravel().tolist() == [0.0]
        base_total = led_none.layers["conv1"].flops + led_none.layers["relu1"].flops
        with_cfg = led.layers["conv1"].flops + led.layers["relu1"].flops
        assert base_total - with_cfg == 32 * 2 - 1

    def test_nonzero_cost_order_matches_sort_oracle(self):
        w = np.ones((2, 3, 2, 2))
        w[:, 1] = 0.0                      # channel 1 has 0 nonzero weights
        w[0, 2, 0, 0] = 0.0                # channel 2 has 7
        counts = [8, 0, 7]
        order = engine.nonzero_cost_order(w, "conv2d")
        assert order.tolist() == list(np.argsort(counts, kind="stable"))
        assert order.tolist() == [1, 2, 0]

    def test_statstest_prunes_negative_pixels_bit_exact_elsewhere(self, rng):
        values = rng.standard_normal((3, 40, 1, 1))
        model = conv_relu_model(40, values)
        x = rng.standard_normal((40, 1, 1))
        base = run_conv_exprune(model, "conv1", x, relu_cfg("none", 0.0))
        led = FlopsLedger()
        out = run_conv_exprune(model, "conv1", x, relu_cfg("statstest", 0.3, k=8),
                               ledger=led, shadow_oracle=True)
        for o in range(3):
            if out.array[o, 0, 0] != 0.0:
                assert out.array[o, 0, 0] == base.array[o, 0, 0]
            elif base.array[o, 0, 0] != 0.0:
                assert led.layers["conv1"].mispredictions > 0


def head_model(W, bias=None):
    classes, n = W.shape
    weights = {"weight": "head.weight"}
    tensors = {"head.weight": Tensor(W)}
    if bias is not None:
        weights["bias"] = "head.bias"
        tensors["head.bias"] = Tensor(bias)
    layers = (LayerSpec("head", "prediction_head", {"in": n, "classes": classes}, weights),)
    return Model(layers=layers, tensors=tensors, precision="f64",
                 class_count=classes, input_shape=(n,))


class TestRunHead:
    def test_check_beyond_stream_is_exact(self, rng):
        W = rng.standard_normal((3, 10))
        model = head_model(W)
        x = rng.standard_normal(10)
        led = FlopsLedger()
        cfg = HeadPredictorCfg(kind="statstest", k=160, ranks=(2, 3), alpha=0.1)
        pred = run_head_exprune(model, x, cfg, ledger=led)
        assert pred == int(np.argmax(np.cumsum(W * x[None, :], axis=1)[:, -1]))
        assert led.layers["head"].predictor == 0

    def test_dominant_class_prunes_at_k(self):
        W = np.zeros((3, 40))
        W[1] = 1.0                                   # class 1 gains +1 per term
        model = head_model(W)
        x = np.ones(40)
        led = FlopsLedger()
        cfg = HeadPredictorCfg(kind="statstest", k=16, ranks=(2, 3), alpha=0.1)
        pred = run_head_exprune(model, x, cfg, ledger=led)
        assert pred == 1
        c = led.layers["head"]
        assert (c.prunes, c.terms_computed) == (1, 16)
        assert c.predictor == (2 * 16 + 6) * 2

    def test_failed_dominance_returns_exact_argmax(self, rng):
        # early leader differs from the final winner; noisy differences keep
        # the dominance test from firing, so the exact argmax must come back
        n = 20
        W = rng.standard_normal((3, n)) * 2.0
        W[0, :6] += 1.5        # class 0 leads early
        W[1, 10:] += 2.5       # class 1 wins overall
        model = head_model(W)
        x = np.ones(n)
        scores = np.cumsum(W * x[None, :], axis=1)
        cfg = HeadPredictorCfg(kind="statstest", k=6, ranks=(2,), alpha=0.01)
        led = FlopsLedger()
        pred = run_head_exprune(model, x, cfg, ledger=led)
        if led.layers["head"].prunes == 0:
            assert pred == int(np.argmax(scores[:, -1]))

    def test_stream_reference_agrees_with_batched(self, rng):
        for trial in range(30):
            W = rng.standard_normal((4, 24))
            x = rng.standard_normal(24)
            model = head_model(W)
            cfg = HeadPredictorCfg(kind="statstest", k=8, ranks=(2, 3),
                                   alpha=float(rng.uniform(0.01, 0.5)))
            batched = run_head_exprune(model, x, cfg)
            stream = run_head_exprune_stream([x[i] * W[:, i] for i in range(24)], cfg)
            assert batched == stream

    def test_threshold_head(self):
        W = np.zeros((3, 30))
        W[2] = 2.0
        model = head_model(W)
        cfg = HeadPredictorCfg(kind="threshold", k=10, ranks=(2, 3), thresholds=(5.0, 5.0))
        led = FlopsLedger()
        pred = run_head_exprune(model, np.ones(30), cfg, ledger=led)
        assert pred == 2
        assert led.layers["head"].prunes == 1
        assert led.layers["head"].predictor == 2 * 2


class TestEvaluate:
    def test_plain_runs_are_identical_and_normalized_one(self, mlp_model, blob3):
        a = evaluate(mlp_model, blob3)
        b = evaluate(mlp_model, blob3)
        assert a.normalized_flops == 1.0
        assert a.total_flops == b.total_flops
        assert np.array_equal(a.predictions, b.predictions)
        assert np.array_equal(a.sample_flops, b.sample_flops)

    def test_ledger_equals_analytic_breakdown(self, mlp_model, blob3, cnn_model):
        rep = evaluate(mlp_model, blob3)
        analytic = sum(f for _, f in model_flops_breakdown(mlp_model)) * len(blob3)
        assert rep.total_flops == analytic
        per_layer = dict(model_flops_breakdown(mlp_model))
        for name, counters in rep.ledger.layers.items():
            assert counters.flops == per_layer[name] * len(blob3)

    @pytest.mark.parametrize("kind,param", [("threshold", float("-inf")), ("statstest", 0.0)])
    def test_sentinel_overhead_is_exact(self, mlp_model, blob3, kind, param):
        base = evaluate(mlp_model, blob3)
        cfg = PruneConfig(layers={"dense1": relu_cfg(kind, param, k=4)})
        rep = evaluate(mlp_model, blob3, cfg)
        assert np.array_equal(rep.predictions, base.predictions)
        n_checks = 16 * len(blob3)                       # one check per unit per sample
        per_check = predictor_check_flops(kind, 4)
        assert rep.total_flops == base.total_flops + n_checks * per_check
        assert rep.ledger.prunes == 0

    def test_chunking_and_threads_do_not_change_results(self, mlp_model, blob3):
        cfg = PruneConfig(layers={"dense1": relu_cfg("statstest", 0.25, k=4)},
                          head=HeadPredictorCfg(kind="statstest", k=8, ranks=(2,), alpha=0.2))
        runs = [
            evaluate(mlp_model, blob3, cfg, chunk_size=7),
            evaluate(mlp_model, blob3, cfg, chunk_size=512),
            evaluate(mlp_model, blob3, cfg, chunk_size=64, threads=3),
        ]
        for r in runs[1:]:
            assert np.array_equal(runs[0].predictions, r.predictions)
            assert np.array_equal(runs[0].sample_flops, r.sample_flops)
            assert runs[0].total_flops == r.total_flops

    def test_conservation_and_rates(self, mlp_model, blob3):
        cfg = PruneConfig(layers={"dense1": relu_cfg("threshold", -0.05, k=4)})
        rep = evaluate(mlp_model, blob3, cfg, shadow_oracle=True)
        c = rep.ledger.layers["dense1"]
        assert 0 <= c.terms_computed <= c.terms_total
        assert 0.0 <= rep.per_layer_prune_rate.get("dense1", 0.0) <= 1.0
        assert 0.0 <= rep.misprediction_rate <= 1.0
        assert rep.normalized_flops > 0

    def test_activation_cache_matches_uncached(self, cnn_model):
        ds = modelio.gen_blobs(seed=5, n_samples=30, dims=2 * 8 * 8, n_classes=3, spread=1.0)
        cfg = PruneConfig(layers={"conv2": relu_cfg("statstest", 0.3, k=4)})
        cache = engine.precompute_activations(cnn_model, ds, cfg)
        assert cache.boundary > 0
        a = evaluate(cnn_model, ds, cfg)
        b = evaluate(cnn_model, ds, cfg, cache=cache)
        assert np.array_equal(a.predictions, b.predictions)
        assert np.array_equal(a.sample_flops, b.sample_flops)
        assert a.total_flops == b.total_flops

    def test_unknown_layer_rejected(self, mlp_model, blob3):
        cfg = PruneConfig(layers={"ghost": relu_cfg("threshold", -1.0)})
        with pytest.raises(ConfigError):
            evaluate(mlp_model, blob3, cfg)


class TestFlopsOf:
    def test_dense_formula(self):
        assert flops_of("dense", {"in": 128, "out": 64, "has_bias": True}) == 16448

    def test_predictor_check_costs(self):
        assert predictor_check_flops("threshold", 32) == 1
        assert predictor_check_flops("statstest", 32) == 70

    def test_conv_formula(self):
        g = {"in_channels": 2, "out_channels": 3, "kernel_h": 3, "kernel_w": 3,
             "out_h": 4, "out_w": 4, "has_bias": False}
        assert flops_of("conv2d", g) == 2 * 3 * 4 * 4 * 2 * 9

    def test_breakdown_covers_all_layers(self, cnn_model):
        rows = model_flops_breakdown(cnn_model)
        assert [name for name, _ in rows] == [s.name for s in cnn_model.layers]
        assert all(f > 0 for _, f in rows)


class TestPruneConfigIO:
    def test_json_round_trip(self, tmp_path):
        cfg = PruneConfig(
            layers={"conv2": relu_cfg("statstest", 0.07, k=16, schedule="every_k", r=0.3),
                    "dense1": relu_cfg("threshold", -2.5, k=32)},
            head=HeadPredictorCfg(kind="statstest", k=64, ranks=(2, 3), alpha=0.1),
            order="by_nonzero_cost",
        )
        path = tmp_path / "prune.json"
        engine.save_prune_config(cfg, path)
        back = engine.load_prune_config(path)
        assert back.order == cfg.order
        assert back.head == cfg.head
        for name, c in cfg.layers.items():
            b = back.layers[name]
            assert (b.kind, b.param, b.k, b.schedule, b.r) == (c.kind, c.param, c.k, c.schedule, c.r)

    def test_byte_identical_rewrites(self, tmp_path):
        cfg = PruneConfig(layers={"conv2": relu_cfg("threshold", -1.25, k=32)})
        engine.save_prune_config(cfg, tmp_path / "a.json")
        engine.save_prune_config(cfg, tmp_path / "b.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
