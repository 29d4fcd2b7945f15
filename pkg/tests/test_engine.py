"""Inference engine: shape chain, kernels (float + integer), graph contracts."""

import numpy as np
import pytest

from kws_runtime.engine import (
    LOGISTIC_OUT_QP,
    Conv2D,
    FullyConnected,
    GlobalMean,
    Logistic,
    MaxPool2D,
    ModelGraph,
    MulAdd,
    accumulator_extrema,
    conv2d,
    fully_connected,
    global_mean,
    graphs_equal,
    logistic,
    logistic_lut,
    maxpool2d,
    mul_add,
    param_count,
    quantized_param_report,
    random_float_model,
    relu,
    run_inference,
    run_layers,
)
from kws_runtime.errors import ContractError, GraphValidationError
from kws_runtime.model_io import calibrate_and_quantize
from kws_runtime.tensors import QuantParams, int8, int32, real32

from oracles import (
    conv2d_int_oracle,
    fully_connected_int_oracle,
    global_mean_int_oracle,
    maxpool_oracle,
    requantize_scalar,
)
from synth import feature_suite

TABLE_CHAIN = [
    (98, 20, 1), (96, 18, 32), (96, 18, 32), (48, 9, 32), (46, 7, 64),
    (46, 7, 64), (23, 3, 64), (64,), (128,), (1,), (1,),
]


class TestDefaultArchitecture:
    def test_shape_chain(self):
        graph = random_float_model(0)
        assert graph.output_shapes() == TABLE_CHAIN

    def test_float_param_counts(self):
        counts = param_count(random_float_model(0))
        assert counts.trainable == 27457
        assert counts.non_trainable == 192
        assert counts.total == 27649

    def test_per_layer_param_counts(self):
        graph = random_float_model(0)
        conv1, bn1, _, conv2, bn2, _, _, fc1, fc2, _ = graph.layers
        assert conv1.weights.size + conv1.bias.size == 320
        assert conv2.weights.size + conv2.bias.size == 18496
        assert sum(t.size for t in (bn1.gamma, bn1.beta, bn1.mean, bn1.var)) == 128
        assert sum(t.size for t in (bn2.gamma, bn2.beta, bn2.mean, bn2.var)) == 256
        assert fc1.weights.size + fc1.bias.size == 8320
        assert fc2.weights.size + fc2.bias.size == 129

    def test_quantized_param_readings(self):
        graph = random_float_model(0)
        features = feature_suite(2, seed=42)
        unfolded = calibrate_and_quantize(graph, features, fold_bn=False)
        report = quantized_param_report(unfolded)
        assert report["stored"] == 27457
        assert report["as_printed"] == 27521
        assert report["channel_consistent"] == 27489
        assert report["as_printed"] - report["channel_consistent"] == 32


def _random_qp(rng, allow_any_zp=True):
    scale = float(rng.uniform(0.003, 0.2))
    zp = int(rng.integers(-128, 128)) if allow_any_zp else 0
    return QuantParams(scale, zp)


def _random_int_conv(rng, kh, kw, cin, cout, with_bias=True, relu_flag=False):
    in_qp = _random_qp(rng)
    out_qp = _random_qp(rng)
    w_qp = QuantParams(float(rng.uniform(0.002, 0.1)), 0)
    w = int8(rng.integers(-127, 128, size=(kh, kw, cin, cout)), w_qp)
    bias = None
    if with_bias:
        bias = int32(rng.integers(-20000, 20000, size=cout),
                     QuantParams(in_qp.scale * w_qp.scale, 0))
    return Conv2D(w, bias, relu_after=relu_flag, in_qp=in_qp, out_qp=out_qp)


class TestIntegerConv:
    def test_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(100)
        for _ in range(60):
            kh, kw = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 5))
            h = int(rng.integers(kh, kh + 6))
            w = int(rng.integers(kw, kw + 6))
            layer = _random_int_conv(rng, kh, kw, cin, cout,
                                     with_bias=bool(rng.integers(0, 2)),
                                     relu_flag=bool(rng.integers(0, 2)))
            x = int8(rng.integers(-128, 128, size=(h, w, cin)), layer.in_qp)
            got = conv2d(x, layer)
            acc = conv2d_int_oracle(
                x.data, layer.weights.data,
                layer.bias.data if layer.bias is not None else None,
                layer.in_qp.zero_point)
            mult = layer.in_qp.scale * layer.weights.quant.scale / layer.out_qp.scale
            for i in range(got.shape[0]):
                for j in range(got.shape[1]):
                    for c in range(got.shape[2]):
                        expected = requantize_scalar(acc[i][j][c], mult, layer.out_qp.zero_point)
                        if layer.relu_after:
                            expected = max(expected, layer.out_qp.zero_point)
                        assert int(got.data[i, j, c]) == expected

    def test_all_zero_input_zero_bias_gives_zero_point(self):
        rng = np.random.default_rng(5)
        layer = _random_int_conv(rng, 3, 3, 1, 4, with_bias=False)
        zp = layer.in_qp.zero_point
        x = int8(np.full((5, 5, 1), zp), layer.in_qp)
        out = conv2d(x, layer)
        assert np.all(out.data == layer.out_qp.zero_point)

    def test_float_conv_matches_manual(self):
        rng = np.random.default_rng(7)
        w = rng.normal(size=(3, 3, 2, 4)).astype(np.float32)
        b = rng.normal(size=4).astype(np.float32)
        x = rng.normal(size=(6, 5, 2)).astype(np.float32)
        layer = Conv2D(real32(w), real32(b))
        got = conv2d(real32(x), layer)
        assert got.shape == (4, 3, 4)
        for i in range(4):
            for j in range(3):
                patch = x[i:i + 3, j:j + 3, :]
                expected = np.tensordot(patch, w, axes=([0, 1, 2], [0, 1, 2])) + b
                assert np.allclose(got.data[i, j], expected, atol=1e-5)

    def test_shape_mismatch_rejected(self):
        rng = np.random.default_rng(1)
        layer = _random_int_conv(rng, 3, 3, 2, 4)
        x = int8(np.zeros((5, 5, 3), dtype=np.int8), layer.in_qp)
        with pytest.raises(ContractError):
            conv2d(x, layer)

    def test_input_qp_must_match_layer(self):
        rng = np.random.default_rng(2)
        layer = _random_int_conv(rng, 3, 3, 1, 2)
        x = int8(np.zeros((5, 5, 1), dtype=np.int8), QuantParams(123.0, 5))
        with pytest.raises(ContractError):
            conv2d(x, layer)


class TestMulAdd:
    def test_identity(self):
        layer = MulAdd(scale=real32(np.ones(3)), offset=real32(np.zeros(3)))
        x = real32(np.arange(12, dtype=np.float32).reshape(2, 2, 3))
        assert np.array_equal(mul_add(x, layer).data, x.data)

    def test_scalar_arithmetic(self):
        layer = MulAdd(scale=real32([3.0]), offset=real32([1.0]))
        x = real32(np.full((1, 1, 1), 2.0, dtype=np.float32))
        assert mul_add(x, layer).data[0, 0, 0] == pytest.approx(7.0)

    def test_four_param_equivalence(self):
        rng = np.random.default_rng(21)
        c = 8
        gamma, beta = rng.uniform(0.5, 1.5, c), rng.normal(0, 0.3, c)
        mean, var = rng.normal(0, 0.5, c), rng.uniform(0.2, 2.0, c)
        eps = 1e-3
        four = MulAdd(gamma=real32(gamma), beta=real32(beta),
                      mean=real32(mean), var=real32(var), eps=eps)
        scale = gamma / np.sqrt(var + eps)
        two = MulAdd(scale=real32(scale), offset=real32(beta - mean * scale))
        x = real32(rng.normal(size=(4, 3, c)).astype(np.float32))
        assert np.allclose(mul_add(x, four).data, mul_add(x, two).data, atol=1e-5)

    def test_integer_matches_scalar_requant(self):
        rng = np.random.default_rng(31)
        c = 6
        in_qp, out_qp = _random_qp(rng), _random_qp(rng)
        s_qp = QuantParams(float(rng.uniform(0.002, 0.05)), 0)
        layer = MulAdd(scale=int8(rng.integers(-127, 128, c), s_qp),
                       offset=int32(rng.integers(-5000, 5000, c),
                                    QuantParams(in_qp.scale * s_qp.scale, 0)),
                       in_qp=in_qp, out_qp=out_qp)
        x = int8(rng.integers(-128, 128, size=(3, 2, c)), in_qp)
        got = mul_add(x, layer)
        mult = in_qp.scale * s_qp.scale / out_qp.scale
        for i in range(3):
            for j in range(2):
                for ch in range(c):
                    acc = (int(x.data[i, j, ch]) - in_qp.zero_point) * int(
                        layer.scale.data[ch]) + int(layer.offset.data[ch])
                    assert int(got.data[i, j, ch]) == requantize_scalar(
                        acc, mult, out_qp.zero_point)

    def test_channel_mismatch_rejected(self):
        layer = MulAdd(scale=real32(np.ones(3)), offset=real32(np.zeros(3)))
        with pytest.raises(ContractError):
            mul_add(real32(np.zeros((2, 2, 4), dtype=np.float32)), layer)


class TestMaxPool:
    def test_table_shapes(self):
        assert MaxPool2D().out_shape((96, 18, 32)) == (48, 9, 32)
        assert MaxPool2D().out_shape((46, 7, 64)) == (23, 3, 64)

    def test_constant_tensor(self):
        x = real32(np.full((6, 4, 2), 3.5, dtype=np.float32))
        out = maxpool2d(x)
        assert out.shape == (3, 2, 2)
        assert np.all(out.data == np.float32(3.5))

    def test_matches_oracle_with_odd_extents(self):
        rng = np.random.default_rng(13)
        x = rng.integers(-128, 128, size=(7, 5, 3))
        qp = QuantParams(0.1, 3)
        out = maxpool2d(int8(x, qp))
        assert out.shape == (3, 2, 3)
        assert out.quant == qp
        expected = maxpool_oracle(x.tolist(), 2, 2)
        assert np.array_equal(out.data, np.array(expected))


class TestGlobalMean:
    def test_table_shape(self):
        assert GlobalMean().out_shape((23, 3, 64)) == (64,)

    def test_constant_per_channel(self):
        vals = np.arange(1, 5, dtype=np.float32)
        x = real32(np.broadcast_to(vals, (23, 3, 4)).copy())
        out = global_mean(x)
        assert np.allclose(out.data, vals, atol=1e-6)

    def test_integer_matches_oracle(self):
        rng = np.random.default_rng(17)
        for _ in range(30):
            h, w, c = (int(rng.integers(1, 8)) for _ in range(3))
            qp = _random_qp(rng)
            x = int8(rng.integers(-128, 128, size=(h, w, c)), qp)
            got = global_mean(x)
            assert got.quant == qp
            assert got.data.tolist() == global_mean_int_oracle(x.data)


class TestFullyConnected:
    def test_param_counts(self):
        fc1 = FullyConnected(real32(np.zeros((64, 128), dtype=np.float32)),
                             real32(np.zeros(128, dtype=np.float32)))
        fc2 = FullyConnected(real32(np.zeros((128, 1), dtype=np.float32)),
                             real32(np.zeros(1, dtype=np.float32)))
        assert fc1.weights.size + fc1.bias.size == 8320
        assert fc2.weights.size + fc2.bias.size == 129

    def test_identity_with_unit_scales(self):
        # Unit scales make the requant multiplier exactly 1.0
        unit = QuantParams(1.0, 0)
        layer = FullyConnected(int8(np.eye(2, dtype=np.int8), unit),
                               relu_after=False, in_qp=unit, out_qp=unit)
        x = int8(np.array([37, -64], dtype=np.int8), unit)
        out = fully_connected(x, layer)
        assert out.data.tolist() == [37, -64]

    def test_integer_matches_oracle(self):
        rng = np.random.default_rng(19)
        for _ in range(40):
            n_in, n_out = int(rng.integers(1, 40)), int(rng.integers(1, 12))
            in_qp, out_qp = _random_qp(rng), _random_qp(rng)
            w_qp = QuantParams(float(rng.uniform(0.002, 0.1)), 0)
            bias = int32(rng.integers(-10000, 10000, n_out),
                         QuantParams(in_qp.scale * w_qp.scale, 0))
            layer = FullyConnected(int8(rng.integers(-127, 128, (n_in, n_out)), w_qp),
                                   bias, in_qp=in_qp, out_qp=out_qp)
            x = int8(rng.integers(-128, 128, n_in), in_qp)
            got = fully_connected(x, layer)
            acc = fully_connected_int_oracle(x.data, layer.weights.data, bias.data,
                                             in_qp.zero_point)
            mult = in_qp.scale * w_qp.scale / out_qp.scale
            expected = [requantize_scalar(a, mult, out_qp.zero_point) for a in acc]
            assert got.data.tolist() == expected

    def test_dimension_mismatch_rejected(self):
        layer = FullyConnected(real32(np.zeros((4, 2), dtype=np.float32)))
        with pytest.raises(ContractError):
            fully_connected(real32(np.zeros(3, dtype=np.float32)), layer)


class TestLogistic:
    def test_zero_maps_to_half(self):
        out = logistic(real32([0.0]))
        assert out.data[0] == pytest.approx(0.5)

    def test_integer_saturation(self):
        in_qp = QuantParams(1.0, 0)  # codes cover [-128, 127] in real units
        layer = Logistic(in_qp=in_qp, out_qp=LOGISTIC_OUT_QP)
        out = logistic(int8([127], in_qp), layer)
        assert out.data[0] == 127  # sigmoid(127) -> 1.0 -> top code

    def test_lut_tracks_float_sigmoid(self):
        for scale, zp in ((0.05, 0), (0.12, -30), (1.0, 17)):
            in_qp = QuantParams(scale, zp)
            lut = logistic_lut(in_qp, LOGISTIC_OUT_QP)
            codes = np.arange(-128, 128)
            x = (codes - zp) * scale
            target = 1.0 / (1.0 + np.exp(-x))
            got = (lut.astype(np.float64) - LOGISTIC_OUT_QP.zero_point) * LOGISTIC_OUT_QP.scale
            assert np.all(np.abs(got - target) <= 1.0 / 256.0 + LOGISTIC_OUT_QP.scale / 2.0)

    def test_lut_monotone(self):
        lut = logistic_lut(QuantParams(0.08, 5), LOGISTIC_OUT_QP)
        assert np.all(np.diff(lut.astype(np.int64)) >= 0)


class TestRelu:
    def test_float_examples(self):
        assert relu(real32([-1.0])).data[0] == 0.0
        assert relu(real32([3.0])).data[0] == 3.0

    def test_integer_keeps_quant_params(self):
        qp = QuantParams(0.1, 7)
        out = relu(int8([-50, 7, 90], qp))
        assert out.quant == qp
        assert out.data.tolist() == [7, 7, 90]


class TestRunInference:
    def test_score_in_unit_interval(self):
        graph = random_float_model(3)
        rng = np.random.default_rng(0)
        for _ in range(5):
            score = run_inference(graph, rng.normal(size=(98, 20)))
            assert 0.0 <= score <= 1.0

    def test_pure_function(self):
        graph = random_float_model(4)
        features = np.random.default_rng(1).normal(size=(98, 20))
        assert run_inference(graph, features) == run_inference(graph, features)

    def test_feature_shape_mismatch(self):
        graph = random_float_model(5)
        with pytest.raises(ContractError):
            run_inference(graph, np.zeros((97, 20)))

    def test_run_layers_returns_all_activations(self):
        graph = random_float_model(6)
        outs = run_layers(graph, np.zeros((98, 20)))
        assert len(outs) == len(graph.layers)
        assert [tuple(o.shape) for o in outs] == TABLE_CHAIN[1:]


class TestGraphValidation:
    def test_broken_chain_rejected(self):
        layers = (
            FullyConnected(real32(np.zeros((3, 2), dtype=np.float32))),
            FullyConnected(real32(np.zeros((5, 1), dtype=np.float32))),
            Logistic(),
        )
        with pytest.raises(GraphValidationError):
            ModelGraph("float", (3,), layers)

    def test_non_scalar_output_rejected(self):
        layers = (FullyConnected(real32(np.zeros((3, 2), dtype=np.float32))),)
        with pytest.raises(GraphValidationError):
            ModelGraph("float", (3,), layers)

    def test_integer_graph_requires_input_qp(self):
        unit = QuantParams(1.0, 0)
        layers = (FullyConnected(int8(np.zeros((3, 1), dtype=np.int8), unit),
                                 in_qp=unit, out_qp=unit),
                  Logistic(in_qp=unit, out_qp=LOGISTIC_OUT_QP))
        with pytest.raises(GraphValidationError):
            ModelGraph("integer", (3,), layers, input_qp=None)

    def test_integer_graph_qp_chain_must_connect(self):
        unit = QuantParams(1.0, 0)
        other = QuantParams(2.0, 0)
        layers = (FullyConnected(int8(np.zeros((3, 1), dtype=np.int8), unit),
                                 in_qp=other, out_qp=unit),
                  Logistic(in_qp=unit, out_qp=LOGISTIC_OUT_QP))
        with pytest.raises(GraphValidationError):
            ModelGraph("integer", (3,), layers, input_qp=unit)

    def test_float_graph_rejects_int_tensors(self):
        unit = QuantParams(1.0, 0)
        layers = (FullyConnected(int8(np.zeros((3, 1), dtype=np.int8), unit)),
                  Logistic())
        with pytest.raises(GraphValidationError):
            ModelGraph("float", (3,), layers)

    def test_bias_scale_must_be_product(self):
        unit = QuantParams(1.0, 0)
        bad_bias = int32(np.zeros(1), QuantParams(0.5, 0))
        layers = (FullyConnected(int8(np.zeros((3, 1), dtype=np.int8), unit), bad_bias,
                                 in_qp=unit, out_qp=unit),
                  Logistic(in_qp=unit, out_qp=LOGISTIC_OUT_QP))
        with pytest.raises(GraphValidationError):
            ModelGraph("integer", (3,), layers, input_qp=unit)


class TestFixtureParity:
    def test_float_vs_integer_score_envelope(self, fixture_float_graph, fixture_int8_graph):
        suite = feature_suite(100, seed=777)
        deltas = [abs(run_inference(fixture_float_graph, f) - run_inference(fixture_int8_graph, f))
                  for f in suite]
        assert max(deltas) <= 0.1

    def test_integer_accumulators_within_int32(self, fixture_int8_graph):
        suite = feature_suite(20, seed=778)
        lo, hi = 0, 0
        for features in suite:
            for entry in accumulator_extrema(fixture_int8_graph, features):
                if entry is not None:
                    lo = min(lo, entry[0])
                    hi = max(hi, entry[1])
        assert lo >= -(2**31) and hi < 2**31
        assert hi > 0  # sanity: instrumentation saw real accumulators

    def test_fixture_graphs_structurally_stable(self, fixture_float_graph, fixture_int8_graph):
        assert fixture_float_graph.mode == "float"
        assert fixture_int8_graph.mode == "integer"
        assert fixture_float_graph.output_shapes() == TABLE_CHAIN
        assert graphs_equal(fixture_int8_graph, fixture_int8_graph)

    def test_unfolded_batchnorm_path_tracks_float(self, fixture_float_graph):
        from kws_runtime.model_io import load_model
        from conftest import FIXTURE_INT8_UNFOLDED
        unfolded = load_model(FIXTURE_INT8_UNFOLDED)
        assert any(layer.kind == "mul_add" for layer in unfolded.layers)
        deltas = [abs(run_inference(fixture_float_graph, f) - run_inference(unfolded, f))
                  for f in feature_suite(30, seed=779)]
        assert max(deltas) <= 0.1
