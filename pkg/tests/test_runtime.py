import struct

import numpy as np
import pytest

from sparsemcu.compress import init_float_weights, prune_graph, quantize_graph, synthetic_inputs
from sparsemcu.errors import BadMagic, BadPackage, BudgetExceeded, ShapeMismatch
from sparsemcu.ir import LayerKind, LayerSpec, ModelGraph, SparseConfig, TensorI8
from sparsemcu.runtime import (HEAD, INPUT, LUT_RESERVE, TAIL, Budgets, compile_model, emit_package,
                               load_package, package_report, plan_memory, read_header,
                               resource_eval, run_in_memory, run_inference)

from helpers import plan_overlaps, random_graph, random_sparse_cfg, random_tensor

K = LayerKind


def lin(n, **kw):
    return LayerSpec(K.LINEAR, {"out_features": n, **kw})


def quantized(graph, seed=0):
    g = init_float_weights(graph, seed)
    return quantize_graph(g, synthetic_inputs(g.input_shape, 2, seed))


def input_for(graph, rng):
    return random_tensor(rng, graph.input_shape, graph.input_qparams)


# ---------------------------------------------------------------- planner

def test_chain_peak():
    plan = plan_memory(ModelGraph((100,), (lin(200), lin(50), lin(80))))
    assert plan.arena_size == 300
    assert max(plan.occupancy(s) for s in range(3)) == 300


def test_single_layer_head_tail():
    plan = plan_memory(ModelGraph((64,), (lin(64),)))
    assert plan.arena_size == 128
    assert plan.buffers[INPUT].end == HEAD and plan.buffers[INPUT].offset == 0
    assert plan.buffers[0].end == TAIL and plan.buffers[0].offset == 64


def test_residual_skip_stays_live():
    g = ModelGraph((4, 4, 8), (LayerSpec(K.CONV1X1, {"out_channels": 8}),
                               LayerSpec(K.CONV1X1, {"out_channels": 8}),
                               LayerSpec(K.ADD, inputs=(0, 1)),
                               LayerSpec(K.SEQPOOL), lin(3)))
    plan = plan_memory(g)
    assert plan.buffers[0].last_step == 2
    assert 0 in plan.live_at(1)
    assert plan_overlaps(g, plan) == []


def test_arena_equals_peak_occupancy_on_chains():
    # for pure chains the strategy is tight: arena == max over steps of in + out (+ scratch)
    rng = np.random.default_rng(0)
    for _ in range(100):
        sizes = rng.integers(1, 500, int(rng.integers(1, 8))).tolist()
        g = ModelGraph((int(rng.integers(1, 500)),), tuple(lin(s) for s in sizes))
        plan = plan_memory(g)
        chain = [g.input_shape[0]] + sizes
        assert plan.arena_size == max(a + b for a, b in zip(chain, chain[1:]))
        assert plan_overlaps(g, plan) == []


def test_random_plans_never_overlap():
    rng = np.random.default_rng(1)
    for _ in range(300):
        g = random_graph(rng)
        plan = plan_memory(g)
        assert plan_overlaps(g, plan) == []
        assert plan.arena_size == max(
            max(p.offset + p.length for p in plan.buffers.values()),
            max((o + l for o, l in plan.scratch.values()), default=0))


# ---------------------------------------------------------------- resources

def test_empty_graph_report():
    rep = resource_eval(ModelGraph((4,), ()))
    assert rep.peak_memory_bytes == LUT_RESERVE
    assert rep.storage_bytes == rep.metadata_bytes


def test_storage_drop_on_100kb_layer():
    g = quantized(ModelGraph((400,), (lin(256),)))
    dense = resource_eval(g, {0: SparseConfig(0.0, 4)}).storage_bytes
    sparse = resource_eval(prune_graph(g, {0: SparseConfig(0.75, 4)})[0]).storage_bytes
    expected = 102_400 * (1 - 1 / 3.2)
    assert dense - sparse == pytest.approx(expected, rel=0.02)


def test_storage_monotone_in_sparsity():
    rng = np.random.default_rng(2)
    for seed in range(10):
        g = quantized(random_graph(rng, max_c=16), seed)
        prunable = [i for i, l in enumerate(g.layers) if l.kind in
                    (K.CONV3X3, K.CONV1X1, K.DWCONV3X3, K.LINEAR, K.CONV_MAXPOOL)]
        for b in (2, 4):
            prev = None
            for rho in (0.0, 0.25, 0.5, 0.75, 0.9):
                cfg = {i: SparseConfig(rho, 3 if g.layers[i].kind == K.DWCONV3X3 else b) for i in prunable}
                s = resource_eval(prune_graph(g, cfg)[0]).storage_bytes
                assert prev is None or s <= prev
                prev = s


def test_report_matches_emitted_size():
    rng = np.random.default_rng(3)
    for seed in range(20):
        g = quantized(random_graph(rng), seed)
        cfg = random_sparse_cfg(g, rng)
        g = prune_graph(g, cfg)[0]
        data = emit_package(g, override=True)
        assert len(data) == resource_eval(g).storage_bytes
        assert len(data) == package_report(compile_model(g)).storage_bytes


def test_fits_flags():
    g = quantized(ModelGraph((8,), (lin(4),)))
    rep = resource_eval(g, budgets=Budgets(storage=10, memory=10**6))
    assert rep.fits == (False, True) and not rep.ok


# ---------------------------------------------------------------- package

def test_emit_is_deterministic_and_little_endian():
    g = quantized(ModelGraph((6, 6, 3), (LayerSpec(K.CONV3X3, {"out_channels": 4}), LayerSpec(K.SEQPOOL), lin(3))))
    a, b = emit_package(g), emit_package(g)
    assert a == b and a[:4] == b"TFPK"
    version, flags, n, arena = struct.unpack_from("<HHII", a, 4)
    assert n == 3 and flags & 1 and arena == plan_memory(g).arena_size
    assert read_header(a).layer_count == 3


def test_bad_magic_and_truncation():
    g = quantized(ModelGraph((8,), (lin(4),)))
    data = emit_package(g)
    with pytest.raises(BadMagic):
        load_package(b"XXXX" + data[4:])
    with pytest.raises(BadPackage):
        load_package(data[:40])


def test_budget_enforced_unless_overridden():
    g = quantized(ModelGraph((8,), (lin(4),)))
    with pytest.raises(BudgetExceeded):
        emit_package(g, budgets=Budgets(0, 0))
    data = emit_package(g, budgets=Budgets(0, 0), override=True)
    assert read_header(data).flags & 2


def test_round_trip_random_graphs():
    rng = np.random.default_rng(4)
    for seed in range(40):
        g = quantized(random_graph(rng), seed)
        cfg = random_sparse_cfg(g, rng)
        g = prune_graph(g, cfg)[0]
        x = input_for(g, rng)
        pkg = emit_package(g, override=True)
        y, stats = run_inference(load_package(pkg).model, x, verify=True)
        assert y.data.tobytes() == run_in_memory(g, x).data.tobytes()
        assert stats.arena_high_water <= read_header(pkg).arena_size
        y2, stats2 = run_inference(pkg, x)
        assert y2.data.tobytes() == y.data.tobytes() and stats2.macs == stats.macs


def test_input_shape_checked():
    g = quantized(ModelGraph((8,), (lin(4),)))
    x = random_tensor(np.random.default_rng(5), (9,), g.input_qparams)
    with pytest.raises(ShapeMismatch):
        run_inference(compile_model(g), x)


def test_zero_weight_classifier_gives_equal_logits():
    g = quantized(ModelGraph((4, 4, 2), (LayerSpec(K.CONV1X1, {"out_channels": 4}), LayerSpec(K.SEQPOOL), lin(5))))
    last = g.layers[-1]
    t = {k: np.zeros_like(v) for k, v in last.tensors.items()}
    g = g.with_layers(list(g.layers[:-1]) + [last.replace(tensors=t)])
    y, _ = run_inference(compile_model(g), input_for(g, np.random.default_rng(6)))
    assert len(set(y.data.tolist())) == 1
    assert int(np.argmax(y.data)) == 0


def test_sparse_execution_fewer_macs():
    rng = np.random.default_rng(7)
    g = quantized(ModelGraph((16, 16, 8), (LayerSpec(K.CONV3X3, {"out_channels": 16}),
                                           LayerSpec(K.CONV1X1, {"out_channels": 16}),
                                           LayerSpec(K.SEQPOOL), lin(10))))
    cfg = {0: SparseConfig(0.9, 4), 1: SparseConfig(0.9, 4), 3: SparseConfig(0.9, 2)}
    g = prune_graph(g, cfg)[0]
    x = input_for(g, rng)
    ys, ss = run_inference(compile_model(g), x)
    yd, sd = run_inference(compile_model(g, force_dense=True), x)
    assert ys.data.tobytes() == yd.data.tobytes()
    assert ss.macs < sd.macs
