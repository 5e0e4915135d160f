import math
import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparsemcu.codec import encode_blockwise_rle
from sparsemcu.compress import (AGPSchedule, agp_target_sparsity, calibrate_ptq, init_float_weights,
                                iterative_prune, prune_blockwise, prune_graph, quantize_graph,
                                quantize_multiplier, requantize, requantize_scaled, rescale_add,
                                round_half_away, rounding_shift, synthetic_inputs)
from sparsemcu.errors import DegenerateRange, OutOfWindow
from sparsemcu.ir import LayerKind, QuantParams, SparseConfig, prunable_tensors

from helpers import random_graph, random_sparse_cfg


def half_away(fr: Fraction) -> int:
    """Exact rational rounding oracle."""
    mag = math.floor(abs(fr) + Fraction(1, 2))
    return mag if fr >= 0 else -mag


# ---------------------------------------------------------------- pruning

def test_prune_example():
    w = np.array([1, -1, 9, 8, 2, -2, 0, 1], np.int8)
    out, mask = prune_blockwise(w, SparseConfig(0.5, 2))
    assert out.tolist() == [0, 0, 9, 8, 2, -2, 0, 0]
    assert mask.kept.tolist() == [False, True, True, False]
    assert w.tolist() == [1, -1, 9, 8, 2, -2, 0, 1]        # input untouched


def test_prune_zero_sparsity_is_identity():
    w = np.arange(-8, 8, dtype=np.int8)
    out, mask = prune_blockwise(w, SparseConfig(0.0, 4))
    np.testing.assert_array_equal(out, w)
    assert mask.n_kept == 4


def test_ties_prune_lowest_index_first():
    w = np.ones(10, np.int8)
    out, mask = prune_blockwise(w, SparseConfig(0.5, 2))
    assert mask.kept.tolist() == [False, False, True, True, True]


def brute_prune(w, rho, b):
    n = len(w) // b
    norms = [(sum(abs(int(v)) for v in w[j * b:(j + 1) * b]), j) for j in range(n)]
    k = math.floor(Fraction(rho).limit_denominator(1000) * n)
    drop = {j for _, j in sorted(norms)[:k]}
    return [0 if i // b in drop and i < n * b else int(v) for i, v in enumerate(w)]


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 200), st.sampled_from([2, 3, 4]),
       st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95]))
def test_prune_matches_brute_force(seed, n_blocks, b, rho):
    rng = np.random.default_rng(seed)
    w = rng.integers(-4, 5, n_blocks * b + int(rng.integers(0, b))).astype(np.int8)
    out, mask = prune_blockwise(w, SparseConfig(rho, b))
    assert out.tolist() == brute_prune(w, rho, b)
    assert mask.n_kept == n_blocks - math.floor(Fraction(rho).limit_denominator(1000) * n_blocks)
    # result always satisfies the codec's alignment precondition
    encode_blockwise_rle(out, b, mask=mask.kept)


def test_prune_graph_touches_only_configured_layers():
    rng = np.random.default_rng(3)
    g = init_float_weights(random_graph(rng, max_layers=6), 0)
    cfg = random_sparse_cfg(g, rng)
    pruned, masks = prune_graph(g, cfg)
    for i, (a, b) in enumerate(zip(g.layers, pruned.layers)):
        for name in a.tensors:
            if i in cfg and name in prunable_tensors(a.kind):
                assert (i, name) in masks
            else:
                np.testing.assert_array_equal(a.tensors[name], b.tensors[name])


# ---------------------------------------------------------------- AGP

def test_agp_boundaries_and_midpoint():
    s = AGPSchedule(0.0, 0.8, t0=5, n_steps=4, delta_t=2)
    assert agp_target_sparsity(s, 5) == 0.0
    assert agp_target_sparsity(s, 13) == pytest.approx(0.8, abs=1e-15)
    assert agp_target_sparsity(s, 9) == pytest.approx(0.8 * (1 - 0.5 ** 3))
    assert agp_target_sparsity(s, 9) == pytest.approx(0.7)
    assert agp_target_sparsity(s, 100) == pytest.approx(0.8)


def test_agp_before_start_warns():
    s = AGPSchedule(0.1, 0.8, t0=5)
    with pytest.warns(OutOfWindow):
        assert agp_target_sparsity(s, 2) == 0.1


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 0.5), st.floats(0, 0.49), st.integers(0, 10), st.integers(1, 20), st.integers(1, 5))
def test_agp_monotone(si, extra, t0, n, dt):
    s = AGPSchedule(si, si + extra, t0, n, dt)
    vals = [agp_target_sparsity(s, t) for t in range(t0, s.t_end + 3)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert vals[0] == si and vals[-1] == pytest.approx(si + extra)


def test_iterative_prune_lands_on_target_and_calls_back():
    rng = np.random.default_rng(4)
    g = init_float_weights(random_graph(rng, max_layers=5), 1)
    cfg = random_sparse_cfg(g, rng, rhos=(0.5, 0.75))
    seen = []
    out = iterative_prune(g, cfg, lambda sf: AGPSchedule(0.0, sf, 0, 4, 1), seen.append)
    assert seen == [0, 1, 2, 3, 4]
    one_shot, _ = prune_graph(g, cfg)
    for a, b in zip(out.layers, one_shot.layers):
        for name in a.tensors:
            np.testing.assert_array_equal(a.tensors[name], b.tensors[name])


# ---------------------------------------------------------------- calibration

def test_calibrate_weight_symmetric():
    q = calibrate_ptq(-1.0, 1.0, "weight")
    assert q.zero_point == 0 and q.scale == float(np.float32(1 / 127))


def test_calibrate_activation_asymmetric():
    q = calibrate_ptq(0.0, 2.55, "activation")
    assert q.scale == pytest.approx(0.01, rel=1e-6) and q.zero_point == -128


def test_calibrate_degenerate():
    with pytest.warns(DegenerateRange):
        q = calibrate_ptq(0.0, 0.0, "activation")
    assert (q.scale, q.zero_point) == (1.0, 0)
    with pytest.warns(DegenerateRange):
        assert calibrate_ptq(0.0, 0.0, "weight") == QuantParams(1.0, 0)


def test_calibrate_rejects_bad_range():
    with pytest.raises(ValueError):
        calibrate_ptq(1.0, 0.0)
    with pytest.raises(ValueError):
        calibrate_ptq(0.0, float("inf"))


@settings(max_examples=200, deadline=None)
@given(st.floats(-50, 0), st.floats(0, 50), st.integers(0, 2**32 - 1))
def test_quantize_dequantize_error_half_step(lo, hi, seed):
    # ranges straddle zero, as activation calibration guarantees; otherwise Z saturates
    if hi - lo < 0.01:
        hi = lo + 0.01
    q = calibrate_ptq(lo, hi, "activation")
    x = np.random.default_rng(seed).uniform(lo, hi, 256)
    # values that land inside the code range round to within S/2
    code = round_half_away(x / q.scale) + q.zero_point
    inside = (code >= -128) & (code <= 127)
    err = np.abs((code[inside] - q.zero_point) * q.scale - x[inside])
    assert np.all(err <= q.scale / 2 * (1 + 1e-9))
    # the range itself maps into the code range up to rounding of Z
    assert inside.all()


# ---------------------------------------------------------------- requantization

def test_requantize_examples():
    out = QuantParams(1.0, 0)
    assert requantize_scaled(np.array([0]), 0.5, QuantParams(1.0, 7)).tolist() == [7]
    assert requantize_scaled(np.array([1000]), 0.0005, out).tolist() == [1]
    assert requantize_scaled(np.array([-1000]), 0.0005, out).tolist() == [-1]
    assert requantize_scaled(np.array([10**6]), 0.01, out).tolist() == [127]
    assert requantize_scaled(np.array([-10**6]), 0.01, out).tolist() == [-128]


def test_quantize_multiplier_exact():
    for real in [0.0005, 0.01, 0.5, 1.0, 1.5, 3.0, 1e-9]:
        m, s = quantize_multiplier(real)
        assert (1 << 30) <= m < (1 << 31)
        assert abs(m * 2.0 ** -s - real) <= real * 2 ** -31


def test_rounding_shift_half_away():
    x = np.array([3, -3, 5, -5, 4, -4, 1, -1])
    assert rounding_shift(x, 1).tolist() == [2, -2, 3, -3, 2, -2, 1, -1]


def test_requantize_rejects_wide_accumulator():
    with pytest.raises(OverflowError):
        requantize(np.array([1 << 31]), 1 << 30, 31)


def test_requantize_matches_real_arithmetic_1e6():
    rng = np.random.default_rng(11)
    n = 1_000_000
    acc = rng.integers(-(1 << 24), 1 << 24, n)
    scales = 10.0 ** rng.uniform(-7, -3, 64)
    for k, sc in enumerate(scales):
        part = acc[k::64]
        got = requantize_scaled(part, sc, QuantParams(1.0, 0), lo=-(1 << 30), hi=1 << 30)
        ref = round_half_away(part * sc)
        assert np.abs(got - ref).max() <= 1


def test_requantize_exact_on_representable_scales():
    # power-of-two scales are exact, so the result must equal exact rational rounding
    rng = np.random.default_rng(12)
    for shift in range(1, 20):
        acc = rng.integers(-(1 << 30), 1 << 30, 200)
        got = requantize_scaled(acc, 2.0 ** -shift, QuantParams(1.0, 0), lo=-(1 << 31), hi=1 << 31)
        ref = [half_away(Fraction(int(a), 1 << shift)) for a in acc]
        assert got.tolist() == ref


def test_rescale_add_matches_real():
    rng = np.random.default_rng(13)
    for _ in range(200):
        q1 = QuantParams(float(rng.uniform(0.005, 0.2)), int(rng.integers(-128, 128)))
        q2 = QuantParams(float(rng.uniform(0.005, 0.2)), int(rng.integers(-128, 128)))
        qo = QuantParams(float(rng.uniform(0.01, 0.4)), int(rng.integers(-128, 128)))
        x1 = rng.integers(-128, 128, 64)
        x2 = rng.integers(-128, 128, 64)
        real = ((x1 - q1.zero_point) * q1.scale + (x2 - q2.zero_point) * q2.scale) / qo.scale
        ref = np.clip(round_half_away(real) + qo.zero_point, -128, 127)
        got = rescale_add(x1, q1, x2, q2, qo)
        assert np.abs(got.astype(int) - ref).max() <= 1


# ---------------------------------------------------------------- graph quantization

def test_quantize_graph_fills_every_tensor():
    rng = np.random.default_rng(14)
    for seed in range(20):
        g = init_float_weights(random_graph(rng), seed)
        q = quantize_graph(g, synthetic_inputs(g.input_shape, 2, seed))
        assert q.input_qparams is not None
        for layer in q.layers:
            assert "out" in layer.qparams
            for name, t in layer.tensors.items():
                assert np.issubdtype(np.asarray(t).dtype, np.integer), (layer.kind, name)
