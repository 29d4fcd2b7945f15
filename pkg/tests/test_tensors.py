"""Quantization scheme: affine mapping, rounding, fixed-point multipliers."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kws_runtime.errors import ContractError, InvalidInputError
from kws_runtime.tensors import (
    QuantParams,
    Tensor,
    choose_qparams,
    dequantize,
    div_round_half_away,
    int8,
    multiply_by_quantized_multiplier,
    quantize,
    quantize_multiplier,
    real32,
    requantize_to_int8,
    round_half_away,
)

from oracles import requantize_scalar


class TestQuantize:
    def test_identity_scaling(self):
        q = quantize(real32([5.0]), QuantParams(1.0, 0))
        assert q.data[0] == 5

    def test_scale_and_zero_point(self):
        # round(2.0 / 0.5) + 10
        q = quantize(real32([2.0]), QuantParams(0.5, 10))
        assert q.data[0] == 14

    def test_saturation(self):
        q = quantize(real32([1000.0, -1000.0]), QuantParams(1.0, 0))
        assert q.data.tolist() == [127, -128]

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidInputError):
            quantize(real32([np.nan]), QuantParams(1.0, 0))
        with pytest.raises(InvalidInputError):
            quantize(real32([np.inf]), QuantParams(1.0, 0))

    def test_round_half_away_from_zero(self):
        q = quantize(real32([0.5, -0.5, 1.5, -1.5]), QuantParams(1.0, 0))
        assert q.data.tolist() == [1, -1, 2, -2]


class TestDequantize:
    def test_inverse_of_quantize_example(self):
        t = int8([14], QuantParams(0.5, 10))
        assert dequantize(t).data[0] == pytest.approx(2.0)

    def test_zero_point_maps_to_zero(self):
        t = int8([10], QuantParams(0.5, 10))
        assert dequantize(t).data[0] == 0.0

    def test_missing_quant_params(self):
        t = real32([1.0])
        with pytest.raises(ContractError):
            dequantize(t)


class TestChooseQparams:
    def test_degenerate_zero_range(self):
        qp = choose_qparams(0.0, 0.0)
        assert (qp.scale, qp.zero_point) == (1.0, 0)
        qp = choose_qparams(0.0, 0.0, symmetric=True)
        assert (qp.scale, qp.zero_point) == (1.0, 0)

    def test_symmetric_unit_range(self):
        qp = choose_qparams(-1.0, 1.0, symmetric=True)
        assert qp.scale == pytest.approx(1.0 / 127.0)
        assert qp.zero_point == 0

    def test_zero_exactly_representable(self):
        qp = choose_qparams(0.0, 255.0 * 0.01)
        q = quantize(real32([0.0]), qp)
        assert dequantize(q).data[0] == 0.0

    def test_rejects_bad_ranges(self):
        with pytest.raises(InvalidInputError):
            choose_qparams(1.0, 0.0)
        with pytest.raises(InvalidInputError):
            choose_qparams(float("nan"), 1.0)

    @given(st.floats(-1e4, 1e4), st.floats(-1e4, 1e4), st.booleans())
    def test_zero_representability_property(self, a, b, symmetric):
        lo, hi = min(a, b), max(a, b)
        qp = choose_qparams(lo, hi, symmetric=symmetric)
        assert -128 <= qp.zero_point <= 127
        q = quantize(real32([0.0]), qp)
        assert dequantize(q).data[0] == 0.0


@given(
    st.floats(1e-4, 1e3),
    st.integers(-128, 127),
    st.lists(st.floats(-1.0, 1.0), min_size=1, max_size=32),
)
@settings(max_examples=200)
def test_round_trip_error_bound(scale, zp, unit_values):
    # In-range reals: representable span of the quantizer
    qp = QuantParams(scale, zp)
    lo = scale * (-128 - zp)
    hi = scale * (127 - zp)
    values = np.array([lo + (u + 1.0) / 2.0 * (hi - lo) for u in unit_values])
    t = real32(values)
    back = dequantize(quantize(t, qp)).data.astype(np.float64)
    x = t.data.astype(np.float64)  # compare against the float32-rounded input
    ulp = float(np.spacing(np.float32(np.abs(x).max())))
    assert np.all(np.abs(back - x) <= scale / 2 + ulp)


@given(
    st.floats(1e-4, 1e3),
    st.integers(-128, 127),
    st.floats(-100.0, 100.0),
    st.floats(0.0, 10.0),
)
@settings(max_examples=200)
def test_quantize_monotone(scale, zp, x, delta):
    qp = QuantParams(scale, zp)
    qa = quantize(real32([x]), qp).data[0]
    qb = quantize(real32([x + delta]), qp).data[0]
    assert qb >= qa


class TestFixedPointMultiplier:
    def test_encoding_accuracy(self):
        for m in (1e-6, 0.003, 0.25, 0.5, 0.9999, 1.0, 7.3):
            enc = quantize_multiplier(m)
            assert abs(enc.real_value - m) <= m * 2.0**-30
            assert (1 << 30) <= enc.mantissa <= (1 << 31) - 1

    def test_rejects_non_positive(self):
        with pytest.raises(InvalidInputError):
            quantize_multiplier(0.0)
        with pytest.raises(InvalidInputError):
            quantize_multiplier(-1.0)

    @given(
        st.integers(-(2**31) + 1, 2**31 - 1),
        st.floats(1e-6, 2.0),
        st.integers(-128, 127),
    )
    @settings(max_examples=500, deadline=None)
    def test_requantize_matches_scalar_oracle(self, acc, multiplier, zp):
        got = requantize_to_int8(np.array([acc]), quantize_multiplier(multiplier), zp)
        assert int(got[0]) == requantize_scalar(acc, multiplier, zp)

    @given(
        st.integers(-(2**31) + 1, 2**31 - 1),
        st.floats(1e-6, 0.9),
        st.integers(-128, 127),
        st.integers(-128, 127),
    )
    @settings(max_examples=300, deadline=None)
    def test_requantize_floor_is_fused_integer_relu(self, acc, multiplier, zp, floor):
        mult = quantize_multiplier(multiplier)
        plain = requantize_to_int8(np.array([acc]), mult, zp)
        floored = requantize_to_int8(np.array([acc]), mult, zp, floor=floor)
        assert int(floored[0]) == max(int(plain[0]), floor)

    def test_unit_multiplier_identity_on_small_values(self):
        mult = quantize_multiplier(1.0)
        acc = np.arange(-128, 128)
        out = multiply_by_quantized_multiplier(acc, mult)
        assert np.array_equal(out, acc)


def test_div_round_half_away():
    numer = np.array([5, -5, 3, -3, 4, -4, 7])
    assert div_round_half_away(numer, 2).tolist() == [3, -3, 2, -2, 2, -2, 4]


def test_round_half_away():
    vals = np.array([0.5, -0.5, 2.5, -2.5, 0.49, -0.49])
    assert round_half_away(vals).tolist() == [1, -1, 3, -3, 0, 0]


class TestTensorInvariants:
    def test_int8_requires_quant(self):
        with pytest.raises(ContractError):
            Tensor((1,), "int8", np.zeros(1, dtype="<i1"))

    def test_shape_must_match_data(self):
        with pytest.raises(ContractError):
            Tensor((2, 2), "real32", np.zeros(3, dtype="<f4"))

    def test_data_is_read_only(self):
        t = real32([1.0, 2.0])
        with pytest.raises(ValueError):
            t.data[0] = 5.0

    def test_unknown_kind(self):
        with pytest.raises(InvalidInputError):
            Tensor((1,), "float64", np.zeros(1))

    def test_quant_params_validation(self):
        with pytest.raises(InvalidInputError):
            QuantParams(0.0, 0)
        with pytest.raises(InvalidInputError):
            QuantParams(1.0, 200)
