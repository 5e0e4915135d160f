"""Acceptance criteria 1-11.

Runs under pytest (one test per criterion) or directly:

    python3 tests/test_acceptance.py

Each criterion prints one PASS/FAIL line with the measured values.  Tolerances
are pinned in ``TOL``.
"""
import json
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from helpers import (blockwise_pruned, plan_overlaps, random_graph, random_sparse_cfg,  # noqa: E402
                     random_tensor)
from sparsemcu.cli import main as cli_main  # noqa: E402
from sparsemcu.codec import (DenseWeights, choose_storage_format, compression_ratio,  # noqa: E402
                             decode_blockwise_rle, encode_blockwise_rle)
from sparsemcu.compress import (AGPSchedule, agp_target_sparsity, init_float_weights,  # noqa: E402
                                prune_blockwise, prune_graph, quantize_graph, round_half_away,
                                synthetic_inputs)
from sparsemcu.ir import (ChoiceBlock, QuantParams, SparseConfig, SupernetSpec,  # noqa: E402
                          TensorI8, build_single_path, count_params, default_block_size,
                          enumerate_path_choices, is_prunable)
from sparsemcu.kernels import (OpCounter, ScaledLayerNormParams, SoftmaxLUT, conv2d_int8,  # noqa: E402
                               dwconv2d_int8, linear_int8, paired_mac, scalar_mac2,
                               scaled_layernorm, softmax_lut, softmax_nolut, unscaled_layernorm)
from sparsemcu.nas import (AGPConfig, Iterations, SearchSpace, SurrogateEvaluator,  # noqa: E402
                           analyze_search_space, enumerate_supernets, search_single_path,
                           search_supernet)
from sparsemcu.runtime import (Budgets, emit_package, load_package, plan_memory,  # noqa: E402
                               read_header, resource_eval, run_in_memory, run_inference)

TOL = {
    "codec_cases": 10_000, "codec_seconds": 10.0,
    "eta_rel": 0.02, "eta_min_blocks": 10_000,
    "kernel_cases": 1_000, "mac_pairs": 1_000_000,
    "ln_steps": 2,
    "lut_max_exp": 257, "lut_footprint": 1228, "lut_reduction": 250.0,
    "plan_graphs": 1_000,
    "storage_budget": 1_048_576, "memory_budget": 327_680,
    "sigma": 3.0,
    "agp_mid": 1e-9,
    "mac_reduction": 5.0, "wall_ratio": 1.0,
    "package_graphs": 100,
}


def report(n: int, ok: bool, detail: str) -> bool:
    print(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


def quantized(graph, seed):
    g = init_float_weights(graph, seed)
    return quantize_graph(g, synthetic_inputs(g.input_shape, 2, seed))


# ---------------------------------------------------------------- 1. codec round-trip

def criterion_1() -> bool:
    rng = np.random.default_rng(101)
    grid = [(rho, b) for rho in (0.0, 0.25, 0.5, 0.75, 0.9) for b in (2, 3, 4)]
    cases = [(grid[i % len(grid)], int(rng.integers(1, 400))) for i in range(TOL["codec_cases"])]
    tensors = [(blockwise_pruned(rng, n * b + int(rng.integers(0, b)), rho, b), b)
               for (rho, b), n in cases]
    bad = 0
    t0 = time.perf_counter()
    for w, b in tensors:
        if not np.array_equal(decode_blockwise_rle(encode_blockwise_rle(w, b)), w):
            bad += 1
    dt = time.perf_counter() - t0
    return report(1, bad == 0 and dt < TOL["codec_seconds"],
                  f"{len(tensors)} tensors, {bad} mismatches, {dt:.2f} s (limit {TOL['codec_seconds']} s)")


# ---------------------------------------------------------------- 2. compression-ratio law

def criterion_2() -> bool:
    rng = np.random.default_rng(102)
    worst, worst_padded, over_dense = 0.0, 0.0, 0
    for rho in (0.0, 0.25, 0.5, 0.75, 0.9):
        for b in (2, 3, 4):
            n_blocks = TOL["eta_min_blocks"]
            w = blockwise_pruned(rng, n_blocks * b, rho, b)
            # kept blocks carry no zeros so the kept count equals the coded count
            blocks = w.reshape(-1, b)
            alive = blocks.any(axis=1)
            blocks[alive & (blocks == 0).any(axis=1)] |= 1
            enc = encode_blockwise_rle(w, b)
            # padding records for gaps over 255 are accounted separately from the law
            measured = w.size / enc.raw_bytes
            eta = compression_ratio(SparseConfig(rho, b))
            worst = max(worst, abs(measured / eta - 1))
            worst_padded = max(worst_padded, abs(w.size / enc.nbytes / eta - 1))
            chosen = choose_storage_format(w, b)
            over_dense += chosen.nbytes > w.size
            assert isinstance(chosen, DenseWeights) or chosen.nbytes < w.size
    for _ in range(2000):
        b = int(rng.choice([2, 3, 4]))
        w = blockwise_pruned(rng, int(rng.integers(1, 500)), float(rng.uniform(0, 1)), b)
        over_dense += choose_storage_format(w, b).nbytes > w.size
    ok = worst <= TOL["eta_rel"] and over_dense == 0
    return report(2, ok, f"max relative eta error {worst:.4f} (limit {TOL['eta_rel']}; "
                          f"{worst_padded:.4f} with padding records counted), "
                          f"{over_dense} adaptive encodings larger than dense")


# ---------------------------------------------------------------- 3. sparse kernels

def _pruned(rng, shape, rho, b):
    w = rng.integers(-128, 128, shape).astype(np.int8)
    out, mask = prune_blockwise(w, SparseConfig(rho, b))
    return out, encode_blockwise_rle(out, b, mask=mask.kept)


def criterion_3() -> bool:
    rng = np.random.default_rng(103)
    n = TOL["kernel_cases"]
    fails = {"conv": 0, "dwconv": 0, "linear": 0}
    for i in range(n):
        rho = (0.3, 0.6, 0.9)[i % 3]
        hw, cin, cout = int(rng.integers(2, 9)), int(rng.integers(1, 9)), int(rng.integers(1, 9))
        k, stride, b = int(rng.choice([1, 3])), int(rng.integers(1, 3)), int(rng.choice([2, 4]))
        x = random_tensor(rng, (hw, hw, cin))
        w, enc = _pruned(rng, (cout, k, k, cin), rho, b)
        args = (rng.integers(-5000, 5000, cout).astype(np.int32), QuantParams(0.02),
                QuantParams(float(rng.uniform(0.05, 2)), int(rng.integers(-20, 20))))
        kw = dict(stride=stride, kernel=k, padding=k // 2)
        fails["conv"] += not np.array_equal(conv2d_int8(x, enc, *args, **kw).data,
                                            conv2d_int8(x, w, *args, **kw).data)

        c = int(rng.integers(1, 9))
        x = random_tensor(rng, (hw, hw, c))
        w, enc = _pruned(rng, (c, 3, 3), (1 / 3, 2 / 3, 0.5)[i % 3], 3)
        args = (rng.integers(-500, 500, c).astype(np.int32), QuantParams(0.02), QuantParams(0.2, 3))
        fails["dwconv"] += not np.array_equal(dwconv2d_int8(x, enc, *args, stride=stride).data,
                                              dwconv2d_int8(x, w, *args, stride=stride).data)

        n_in, n_out, tokens = int(rng.integers(1, 40)), int(rng.integers(1, 20)), int(rng.integers(1, 6))
        x = random_tensor(rng, (tokens, n_in))
        w, enc = _pruned(rng, (n_out, n_in), rho, b)
        args = (rng.integers(-999, 999, n_out).astype(np.int32), QuantParams(0.01), QuantParams(0.3, -4))
        fails["linear"] += not np.array_equal(linear_int8(x, enc, *args).data, linear_int8(x, w, *args).data)

    m = TOL["mac_pairs"]
    w = rng.integers(-128, 128, (m, 2)).tolist()
    xs = rng.integers(-255, 256, (m, 2)).tolist()
    acc = rng.integers(-2**31, 2**31, m).tolist()
    mac_bad = sum(paired_mac(acc[i], w[i], xs[i]) != scalar_mac2(acc[i], w[i], xs[i]) for i in range(m))
    ok = not any(fails.values()) and mac_bad == 0
    return report(3, ok, f"{n} cases each, mismatches {fails}; {m} paired MACs, {mac_bad} mismatches")


# ---------------------------------------------------------------- 4. scaled layernorm

def _ln_params(c, out_q):
    return ScaledLayerNormParams(np.full(c, 127, np.int8), np.zeros(c, np.int32), QuantParams(1 / 127), out_q)


def _ln_oracle(xi, iq, out_q):
    x = (xi.astype(float) - iq.zero_point) * iq.scale
    xn = (x - x.mean(-1, keepdims=True)) / np.sqrt(x.var(-1, keepdims=True) + iq.scale ** 2)
    return np.clip(round_half_away(xn / out_q.scale) + out_q.zero_point, -128, 127), xn


def criterion_4() -> bool:
    errs = {}
    for shape in ((256, 44), (64, 192)):
        rng = np.random.default_rng(shape[1])
        iq, oq = QuantParams(0.05, 3), QuantParams(8 / 255, -3)
        xi = rng.integers(-128, 128, shape).astype(np.int8)
        y = scaled_layernorm(TensorI8(shape, xi, iq), _ln_params(shape[1], oq))
        errs[shape] = int(np.abs(y.data.astype(int) - _ln_oracle(xi, iq, oq)[0]).max())

    rng = np.random.default_rng(104)
    c = 87
    z = rng.normal(0, 0.4, (400, c))
    z[np.arange(400), rng.integers(c, size=400)] = rng.uniform(3, 9, 400)
    iq = QuantParams(0.02, -20)
    xi = np.clip(round_half_away(z / iq.scale) + iq.zero_point, -128, 127).astype(np.int8)
    _, xn = _ln_oracle(xi, iq, QuantParams(1.0))
    xi = xi[(xn.min(-1) >= -2.0) & (xn.max(-1) <= 9.3)]
    oq = QuantParams(11.3 / 255, -128 + int(round(2.0 / (11.3 / 255))))
    ref, _ = _ln_oracle(xi, iq, oq)
    t = TensorI8(xi.shape, xi, iq)
    e_s = int(np.abs(scaled_layernorm(t, _ln_params(c, oq)).data.astype(int) - ref).max())
    e_u = int(np.abs(unscaled_layernorm(t, _ln_params(c, oq)).data.astype(int) - ref).max())
    ok = max(errs.values()) <= TOL["ln_steps"] and e_s < e_u and len(xi) >= 50
    shown = ", ".join(f"{a}x{b}: {e}" for (a, b), e in errs.items())
    return report(4, ok, f"max error {shown} (limit {TOL['ln_steps']}); "
                          f"x_norm in [-2, 9.3] over {len(xi)} rows: scaled {e_s} vs unscaled {e_u}")


# ---------------------------------------------------------------- 5. softmax LUT

def criterion_5() -> bool:
    rng = np.random.default_rng(105)
    ok = True
    worst = 0
    for n in (1, 2, 100, 257, 1000, 4096, 65536):
        x = TensorI8((n,), rng.integers(-128, 128, n).astype(np.int8), QuantParams(0.05))
        cl, cn = OpCounter(), OpCounter()
        a, b = softmax_lut(x, counter=cl), softmax_nolut(x, counter=cn)
        ok &= np.array_equal(a.data, b.data) and cl.exp_calls <= min(n, TOL["lut_max_exp"])
        worst = max(worst, cl.exp_calls)
    x = TensorI8((256, 256), rng.integers(-128, 128, (256, 256)).astype(np.int8), QuantParams(0.0625))
    cl, cn = OpCounter(), OpCounter()
    a, b = softmax_lut(x, counter=cl), softmax_nolut(x, counter=cn)
    red = cn.exp_calls / max(cl.exp_calls, 1)
    foot = SoftmaxLUT(0.0625).footprint
    ok &= np.array_equal(a.data, b.data) and red >= TOL["lut_reduction"] and foot <= TOL["lut_footprint"]
    return report(5, bool(ok), f"max exp calls {worst} for n<=65536; [256x256] {cl.exp_calls} vs "
                               f"{cn.exp_calls} ({red:.0f}x, limit {TOL['lut_reduction']:.0f}x); "
                               f"footprint {foot} B (limit {TOL['lut_footprint']})")


# ---------------------------------------------------------------- 6. memory planner

def criterion_6() -> bool:
    rng = np.random.default_rng(106)
    overlaps = hw_over = 0
    for seed in range(TOL["plan_graphs"]):
        g = random_graph(rng)
        overlaps += bool(plan_overlaps(g, plan_memory(g)))
        if seed % 5 == 0:
            q = quantized(g, seed)
            data = emit_package(q, override=True)
            _, stats = run_inference(data, random_tensor(rng, q.input_shape, q.input_qparams), verify=True)
            hw_over += stats.arena_high_water > read_header(data).arena_size
    return report(6, overlaps == 0 and hw_over == 0,
                  f"{TOL['plan_graphs']} plans, {overlaps} with overlaps; "
                  f"{TOL['plan_graphs'] // 5} inferences, {hw_over} over the arena")


# ---------------------------------------------------------------- 7. resource gating

def criterion_7() -> bool:
    doc = {"preset": "normal", "iterations": {"analyze": 30, "supernets": 2, "paths": 2, "configs": 1,
                                              "single_path": 3, "test_samples": 20}}
    sizes, bad = [], 0
    with tempfile.TemporaryDirectory() as d:
        cfg = Path(d) / "space.json"
        cfg.write_text(json.dumps(doc))
        for seed in range(3):
            out = Path(d) / f"out{seed}"
            rc = cli_main(["search", str(cfg), "-o", str(out), "--seed", str(seed), "--force"])
            if rc != 0:
                bad += 1
                continue
            data = (out / "best.tfpk").read_bytes()
            pkg = load_package(data)
            rep = resource_eval(pkg.model.graph)
            sizes.append((len(data), rep.peak_memory_bytes))
            bad += len(data) > TOL["storage_budget"] or rep.peak_memory_bytes > TOL["memory_budget"]
            bad += bool(read_header(data).flags & 2)

    rng = np.random.default_rng(107)
    non_mono = 0
    for seed in range(20):
        g = quantized(random_graph(rng, max_c=16), seed)
        for b in (2, 4):
            prev = None
            for rho in (0.0, 0.25, 0.5, 0.75, 0.9):
                cfg = {i: SparseConfig(rho, default_block_size(l.kind, b))
                       for i, l in enumerate(g.layers) if is_prunable(l.kind)}
                s = resource_eval(prune_graph(g, cfg)[0]).storage_bytes
                non_mono += prev is not None and s > prev
                prev = s
    shown = ", ".join(f"{s} B/{m} B" for s, m in sizes)
    return report(7, bad == 0 and non_mono == 0 and len(sizes) == 3,
                  f"search outputs (storage/memory) {shown}; {non_mono} non-monotone storage steps")


# ---------------------------------------------------------------- 8. search vs enumeration

# one DoT stage: 16 paths x 4 sparse configs = 64 candidates
TOY_STAGES = (dict(down=(8,), mbv2=(8,), mbv2_repeats=(1,), dim=(16,), tr_repeats=(1,)),)


def _toy_space(**kw):
    base = dict(input_shape=(16, 16, 3), stages=TOY_STAGES, sparsity_options=(0.0, 0.5),
                block_size_options=(2, 4), sparsity_granularity="model",
                budgets=Budgets(40_000, 40_000), iterations=Iterations(20, 2, 2, 2, 8, 20),
                agp=AGPConfig(0, 2, 1))
    base.update(kw)
    return SearchSpace(**base)


def _pairs(supernet, space, budgets):
    out = []
    for ch in enumerate_path_choices(supernet):
        m = build_single_path(supernet, ch)
        for rho in space.sparsity_options:
            for b in space.block_size_options:
                cfg = {i: SparseConfig(rho, default_block_size(l.kind, b))
                       for i, l in enumerate(m.layers) if is_prunable(l.kind)}
                out.append((m, cfg, resource_eval(m, cfg, budgets)))
    return out


def criterion_8() -> bool:
    notes, ok = [], True
    ev = SurrogateEvaluator(target_params=20_000)

    # space analysis: estimate vs exact probability over equally likely (path, config) pairs
    space = _toy_space(budgets=Budgets(7_000, 40_000), lambda_lo=0.06, lambda_up=0.1)
    lo, hi = space.lambda_lo * space.budgets.memory, space.lambda_up * space.budgets.memory
    pairs = _pairs(space.full_supernet(), space, space.budgets)
    feas = [(m, c) for m, c, r in pairs if r.ok]
    p = float(np.mean([lo <= count_params(m, c) <= hi for m, c in feas]))
    n = 2000
    est = analyze_search_space(space, n, seed=3)
    sd = np.sqrt(p * (1 - p) / (n * len(feas) / len(pairs)))
    ok &= len(pairs) <= 64 and 0 < p < 1 and abs(est - p) <= TOL["sigma"] * sd
    notes.append(f"space analysis {est:.3f} vs exact {p:.3f} ({abs(est - p) / sd:.1f} sigma, {len(pairs)} candidates)")

    # supernet search: supernet with the best exact mean score over its feasible pairs
    stages = (dict(down=(8,), mbv2=(8,), mbv2_repeats=(1,), dim=(16, 48), tr_repeats=(1,)),)
    space = _toy_space(stages=stages, supernet_window=1, budgets=Budgets(10**6, 10**6))
    cands = enumerate_supernets(space)
    exact = []
    for sn in cands:
        sp = _pairs(sn, space, space.budgets)
        assert len(sp) <= 64
        exact.append(np.mean([ev.evaluate(m, c) for m, c, r in sp if r.ok]))
    res = search_supernet(space, t_i=16, t_j=6, t_k=2, seed=5, evaluator=ev)
    pick = cands.index(res.supernet)
    ok &= pick == int(np.argmax(exact))
    notes.append(f"supernet search picked supernet {pick}, enumeration argmax {int(np.argmax(exact))}")

    # single-path search: best feasible (path, config) of a 3-path supernet with 3 sparsities
    space = _toy_space(stages=(dict(down=(8,), mbv2=(8, 16, 24), mbv2_repeats=(1,), dim=(16,),
                                    tr_repeats=(1,)),),
                       sparsity_options=(0.0, 0.5, 0.75), block_size_options=(4,))
    full = space.full_supernet()
    sn = SupernetSpec(full.input_shape, full.num_classes,
                      tuple(ChoiceBlock(b.block_type, b.candidates[:1], b.channel_options, b.repeat_options)
                            for b in full.choice_blocks))
    sizes = sorted(r.storage_bytes for *_, r in _pairs(sn, space, space.budgets))
    budgets = Budgets(sizes[4], 40_000)
    pairs = _pairs(sn, space, budgets)
    best = max(ev.evaluate(m, c) for m, c, r in pairs if r.ok)
    res = search_single_path(sn, space, budgets, t_sin=60, evaluator=ev, seed=1)
    ok &= len(pairs) == 9 and abs(res.score - best) < 1e-12
    notes.append(f"single-path search winner score {res.score:.6f}, enumeration best {best:.6f}")
    return report(8, bool(ok), "; ".join(notes))


# ---------------------------------------------------------------- 9. AGP

def criterion_9() -> bool:
    s = AGPSchedule(0.0, 0.8, t0=5, n_steps=4, delta_t=2)
    start, end, mid = agp_target_sparsity(s, 5), agp_target_sparsity(s, 13), agp_target_sparsity(s, 9)
    rng = np.random.default_rng(109)
    mono = True
    for _ in range(200):
        si = float(rng.uniform(0, 0.5))
        sch = AGPSchedule(si, si + float(rng.uniform(0, 0.49)), int(rng.integers(0, 10)),
                          int(rng.integers(1, 20)), int(rng.integers(1, 5)))
        vals = [agp_target_sparsity(sch, t) for t in range(sch.t0, sch.t_end + 3)]
        mono &= all(b >= a for a, b in zip(vals, vals[1:]))
        mono &= vals[0] == sch.s_init and vals[sch.t_end - sch.t0] == sch.s_final
    ok = start == 0.0 and end == 0.8 and abs(mid - 0.7) <= TOL["agp_mid"] and mono
    return report(9, bool(ok), f"s(t0)={start}, s(t0+n*dt)={end}, midpoint {mid!r}, monotone {mono}")


# ---------------------------------------------------------------- 10. directional speedup

def criterion_10() -> bool:
    rng = np.random.default_rng(110)
    x = random_tensor(rng, (64, 64, 16))
    w, enc = _pruned(rng, (64, 3, 3, 16), 0.9, 4)
    args = (rng.integers(-999, 999, 64).astype(np.int32), QuantParams(0.01), QuantParams(0.5, 0))
    cs, cd = OpCounter(), OpCounter()
    ys = conv2d_int8(x, enc, *args, counter=cs)
    yd = conv2d_int8(x, w, *args, counter=cd)

    def median_time(weights, reps=9):
        ts = []
        for _ in range(reps):
            t0 = time.perf_counter()
            conv2d_int8(x, weights, *args)
            ts.append(time.perf_counter() - t0)
        return float(np.median(ts))

    median_time(enc, 2), median_time(w, 2)          # warm-up
    ts, td = median_time(enc), median_time(w)
    mac_red, wall = cd.macs / cs.macs, td / ts
    ok = np.array_equal(ys.data, yd.data) and mac_red >= TOL["mac_reduction"] and wall > TOL["wall_ratio"]
    return report(10, bool(ok), f"64x64x16 -> 64 conv at rho=0.9: MAC reduction {mac_red:.2f}x "
                                f"(limit {TOL['mac_reduction']}x), wall ratio {wall:.2f}x "
                                f"(dense {td * 1e3:.1f} ms, sparse {ts * 1e3:.1f} ms)")


# ---------------------------------------------------------------- 11. package determinism

def criterion_11() -> bool:
    rng = np.random.default_rng(111)
    bad = 0
    for seed in range(TOL["package_graphs"]):
        g = quantized(random_graph(rng), seed)
        g = prune_graph(g, random_sparse_cfg(g, rng))[0]
        x = random_tensor(rng, g.input_shape, g.input_qparams)
        data = emit_package(g, override=True)
        bad += data != emit_package(g, override=True)
        y, _ = run_inference(load_package(data).model, x)
        bad += y.data.tobytes() != run_in_memory(g, x).data.tobytes()
    return report(11, bad == 0, f"{TOL['package_graphs']} graphs, {bad} mismatches")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8, criterion_9, criterion_10, criterion_11]


@pytest.mark.parametrize("crit", CRITERIA, ids=[f"criterion_{i}" for i in range(1, 12)])
def test_acceptance(crit):
    assert crit()


if __name__ == "__main__":
    results = [c() for c in CRITERIA]
    print(f"{sum(results)}/{len(results)} criteria passed")
    sys.exit(0 if all(results) else 1)
