"""Command-line entry point: ``sparsemcu <subcommand> ...``.

Exit codes: 0 success, 1 budget or shape failure, 2 parse failure,
3 search failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import re
import statistics
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .codec import DenseWeights, EncodedWeights
from .compress import init_float_weights, prune_graph, quantize_graph, synthetic_inputs
from .errors import (BadMagic, BadPackage, BudgetExceeded, CorruptStream, ModelFormatError,
                     NoFeasibleModel, NoFeasibleSample, NoFeasibleSupernet, ShapeMismatch)
from .ir import LayerKind, LayerSpec, ModelGraph, QuantParams, SparseConfig, TensorI8
from .ir.graph import default_block_size, is_prunable
from .ir.layers import prunable_tensors
from .ir.modelfile import load_model, parse_json_text, save_model
from .kernels import OpCounter, softmax_lut, softmax_nolut
from .runtime import (Budgets, compile_model, emit_package, load_package, package_report,
                      run_inference)
from .runtime.layout import stored_nbytes

EXIT_OK, EXIT_BUDGET, EXIT_PARSE, EXIT_SEARCH = 0, 1, 2, 3

log = logging.getLogger("sparsemcu")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


# ---------------------------------------------------------------- tensor files
#
# One ASCII header line, then raw little-endian int8 values:
#     int8 32x32x3 scale=0.0078125 zero_point=-1

_HEADER_RE = re.compile(r"^int8 (\d+(?:x\d+)*)(?: scale=(\S+) zero_point=(-?\d+))?$")


def write_tensor(path, t: TensorI8) -> None:
    head = f"int8 {'x'.join(map(str, t.shape))} scale={t.qparams.scale!r} zero_point={t.qparams.zero_point}\n"
    Path(path).write_bytes(head.encode() + t.tobytes())


def read_tensor(path, default_qparams: QuantParams | None = None) -> TensorI8:
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    if nl < 0:
        raise ModelFormatError(f"{path}:1", "missing shape header line")
    m = _HEADER_RE.match(data[:nl].decode("ascii", "replace").strip())
    if not m:
        raise ModelFormatError(f"{path}:1", "expected 'int8 HxWxC [scale=S zero_point=Z]'")
    shape = tuple(int(s) for s in m.group(1).split("x"))
    if m.group(2) is not None:
        try:
            q = QuantParams(float(m.group(2)), int(m.group(3)))
        except ValueError as exc:
            raise ModelFormatError(f"{path}:1", str(exc)) from None
    elif default_qparams is not None:
        q = default_qparams
    else:
        raise ModelFormatError(f"{path}:1", "header carries no quantization parameters")
    body = data[nl + 1:]
    n = int(np.prod(shape))
    if len(body) != n:
        raise ShapeMismatch(f"{path}: {len(body)} bytes of data for shape {shape}")
    return TensorI8(shape, np.frombuffer(body, dtype=np.int8), q)


# ---------------------------------------------------------------- sparse configs

def parse_sparse_config(doc, graph: ModelGraph, where: str = "sparse config") -> dict[int, SparseConfig]:
    """``{"sparsity", "block_size"}`` for every prunable layer, or
    ``{"default": {...}, "layers": {"3": {...}}}``."""
    if not isinstance(doc, dict):
        raise ModelFormatError(where, "expected a JSON object")

    def one(d, w) -> SparseConfig:
        if not isinstance(d, dict) or "sparsity" not in d or "block_size" not in d:
            raise ModelFormatError(w, "expected {\"sparsity\": ..., \"block_size\": ...}")
        try:
            return SparseConfig(float(d["sparsity"]), int(d["block_size"]))
        except (TypeError, ValueError) as exc:
            raise ModelFormatError(w, str(exc)) from None

    default = None
    if "sparsity" in doc:
        default = one(doc, where)
    elif "default" in doc:
        default = one(doc["default"], f"{where}.default")
    per = doc.get("layers", {})
    if not isinstance(per, dict):
        raise ModelFormatError(f"{where}.layers", "expected an object keyed by layer index")
    cfg = {}
    for i, layer in enumerate(graph.layers):
        if not is_prunable(layer.kind):
            continue
        if default is not None:
            cfg[i] = SparseConfig(default.sparsity, default_block_size(layer.kind, default.block_size))
    for key, d in per.items():
        w = f"{where}.layers.{key}"
        if not key.lstrip("-").isdigit() or not 0 <= int(key) < len(graph.layers):
            raise ModelFormatError(w, "not a layer index")
        i = int(key)
        if not is_prunable(graph.layers[i].kind):
            raise ModelFormatError(w, f"layer {i} ({graph.layers[i].kind}) has no prunable weights")
        cfg[i] = one(d, w)
    return cfg


def _load_json(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ModelFormatError(str(path), exc.strerror or str(exc)) from None
    return parse_json_text(text, str(path))


def _read_package(path):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ModelFormatError(str(path), exc.strerror or str(exc)) from None
    return load_package(data)


def _budgets(args) -> Budgets:
    return Budgets(args.budget_storage, args.budget_memory)


# ---------------------------------------------------------------- model preparation

def _is_quantized(graph: ModelGraph) -> bool:
    arrays = [a for l in graph.layers for a in l.tensors.values()]
    return (graph.input_qparams is not None and bool(arrays)
            and all(np.issubdtype(a.dtype, np.integer) for a in arrays))


def prepare_model(graph: ModelGraph, cfg: dict[int, SparseConfig], seed: int,
                  n_calib: int = 4) -> ModelGraph:
    """Float or architecture-only graph to a pruned, quantized graph.

    Missing weights are drawn from ``seed``; calibration uses seeded synthetic
    inputs.  Already-quantized graphs are pruned in place.
    """
    if _is_quantized(graph):
        pruned, _ = prune_graph(graph, cfg)
        return pruned
    if not any(l.tensors for l in graph.layers):
        graph = init_float_weights(graph, seed)
    pruned, _ = prune_graph(graph, cfg)
    return quantize_graph(pruned, synthetic_inputs(graph.input_shape, n_calib, seed))


def layer_ratios(model) -> list[tuple[int, str, int, int]]:
    """(layer, name, dense bytes, stored bytes) over each layer's prunable tensors."""
    rows = []
    for i, layer in enumerate(model.graph.layers):
        dense = stored = 0
        for name in prunable_tensors(layer.kind):
            s = model.stored.get((i, name))
            if isinstance(s, (EncodedWeights, DenseWeights)):
                dense += s.original_len if isinstance(s, EncodedWeights) else s.nbytes
                stored += stored_nbytes(s)
        if dense:
            rows.append((i, layer.name, dense, stored))
    return rows


def format_report(rep) -> str:
    lines = [f"storage {rep.storage_bytes} B / {rep.storage_limit} B "
             f"({'ok' if rep.fits_storage else 'OVER'})",
             f"memory  {rep.peak_memory_bytes} B / {rep.memory_limit} B "
             f"({'ok' if rep.fits_memory else 'OVER'}; arena {rep.arena_bytes} B)"]
    return "\n".join(lines)


# ---------------------------------------------------------------- commands

def cmd_encode(args) -> int:
    graph = load_model(args.model)
    if args.sparse_config:
        cfg = parse_sparse_config(_load_json(args.sparse_config), graph, str(args.sparse_config))
    elif args.sparsity is not None:
        cfg = parse_sparse_config({"sparsity": args.sparsity, "block_size": args.block_size}, graph,
                                  "--sparsity")
    else:
        cfg = graph.sparse_configs()
    q = prepare_model(graph, cfg, args.seed)
    model = compile_model(q, cfg, force_dense=args.store == "dense")
    rep = package_report(model, _budgets(args))
    print(f"{'layer':>5}  {'name':<24} {'dense B':>9} {'stored B':>9} {'eta':>6}")
    for i, name, dense, stored in layer_ratios(model):
        print(f"{i:>5}  {name[:24]:<24} {dense:>9} {stored:>9} {dense / stored:>6.2f}")
    print(format_report(rep))
    data = emit_package(model, budgets=_budgets(args), override=args.override_budget)
    Path(args.output).write_bytes(data)
    print(f"wrote {args.output} ({len(data)} B)")
    return EXIT_OK


def cmd_make_input(args) -> int:
    pkg = _read_package(args.package)
    shape, q = pkg.header.input_shape, pkg.header.input_qparams
    rng = np.random.default_rng(args.seed)
    x = TensorI8.from_real(rng.standard_normal(shape), q)
    write_tensor(args.output, x)
    print(f"wrote {args.output} shape {shape}")
    return EXIT_OK


def _print_stats(stats) -> None:
    print(f"{'layer':<24} {'ms':>9} {'MACs':>12} {'exp':>7}")
    for name, s, m, e in zip(stats.layer_names, stats.layer_seconds, stats.layer_macs,
                             stats.layer_exp_calls):
        print(f"{name[:24]:<24} {s * 1e3:>9.3f} {m:>12} {e:>7}")
    print(f"total latency {stats.seconds * 1e3:.3f} ms, MACs {stats.macs}, exp calls {stats.exp_calls}")
    print(f"arena high-water {stats.arena_high_water} B of planned {stats.arena_size} B")


def cmd_infer(args) -> int:
    pkg = _read_package(args.package)
    x = read_tensor(args.input, pkg.header.input_qparams)
    if tuple(x.shape) != tuple(pkg.header.input_shape):
        raise ShapeMismatch(f"input shape {x.shape} does not match model input {pkg.header.input_shape}")
    if x.qparams != pkg.header.input_qparams:
        raise ShapeMismatch(f"input qparams {x.qparams} differ from model input {pkg.header.input_qparams}")
    y, stats = run_inference(pkg, x, verify=args.verify)
    if stats.arena_high_water > stats.arena_size:
        raise RuntimeError("arena high-water mark exceeds the planned arena")
    write_tensor(args.output, y)
    _print_stats(stats)
    print(f"wrote {args.output} shape {y.shape}")
    return EXIT_OK


def _bench(pkg, x, reps: int):
    times, outs = None, set()
    stats = None
    for _ in range(reps):
        y, stats = run_inference(pkg, x)
        outs.add(y.tobytes())
        if times is None:
            times = [[] for _ in stats.layer_seconds]
        for t, s in zip(times, stats.layer_seconds):
            t.append(s)
    return [statistics.median(t) for t in times], stats, len(outs) == 1, y


def cmd_bench(args) -> int:
    if args.reps < 1:
        raise CliError(EXIT_PARSE, "--reps must be at least 1")
    pkg = _read_package(args.package)
    x = TensorI8.from_real(np.random.default_rng(args.seed).standard_normal(pkg.header.input_shape),
                           pkg.header.input_qparams)
    med, stats, stable, y = _bench(pkg, x, args.reps)
    print(f"{args.package}: {args.reps} repetition(s)")
    print(f"{'layer':<24} {'median ms':>10} {'MACs':>12}")
    for name, m, macs in zip(stats.layer_names, med, stats.layer_macs):
        print(f"{name[:24]:<24} {m * 1e3:>10.3f} {macs:>12}")
    total = sum(med)
    print(f"total median {total * 1e3:.3f} ms, MACs {stats.macs}, outputs identical across reps: {stable}")
    if args.dense:
        dpkg = _read_package(args.dense)
        if dpkg.header.input_shape != pkg.header.input_shape:
            raise ShapeMismatch("dense and sparse packages take different inputs")
        xd = TensorI8.from_real(x.dequantize(), dpkg.header.input_qparams)
        dmed, dstats, _, yd = _bench(dpkg, xd, args.reps)
        dtotal = sum(dmed)
        print(f"dense total median {dtotal * 1e3:.3f} ms, MACs {dstats.macs}")
        print(f"speedup {dtotal / total:.2f}x, MAC reduction {dstats.macs / max(stats.macs, 1):.2f}x, "
              f"identical outputs: {yd.tobytes() == y.tobytes()}")
    if args.softmax:
        rows, cols = args.softmax
        rng = np.random.default_rng(args.seed)
        s = TensorI8((rows, cols), rng.integers(-128, 128, (rows, cols), dtype=np.int8),
                     QuantParams(0.0625, 0))
        c1, c2 = OpCounter(), OpCounter()
        a, b = softmax_lut(s, counter=c1), softmax_nolut(s, counter=c2)
        print(f"softmax [{rows}x{cols}]: LUT exp calls {c1.exp_calls}, LUT-free exp calls {c2.exp_calls}, "
              f"reduction {c2.exp_calls / max(c1.exp_calls, 1):.1f}x, identical: {a == b}")
    return EXIT_OK


def cmd_search(args) -> int:
    from .nas import (SearchLog, accept_search_space, analyze_search_space, evaluator_from_dict,
                      search_single_path, search_supernet, space_from_dict)
    doc = _load_json(args.config)
    space = space_from_dict(doc)
    budgets = Budgets(args.budget_storage if args.budget_storage is not None else space.budgets.storage,
                      args.budget_memory if args.budget_memory is not None else space.budgets.memory)
    seed = space.seed if args.seed is None else args.seed
    try:
        evaluator = evaluator_from_dict(doc.get("evaluator"))
    except (TypeError, ValueError, KeyError) as exc:
        raise ModelFormatError("evaluator", str(exc)) from None
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    slog = SearchLog(out / "search_log.ndjson")
    rng = np.random.default_rng(seed)
    try:
        prob = analyze_search_space(space, seed=rng, budgets=budgets, log=slog)
        accepted = accept_search_space(prob)
        print(f"search space acceptance estimate {prob:.3f} ({'accepted' if accepted else 'rejected'})")
        slog.write(phase="analyze", probability=prob, accepted=accepted)
        if not accepted and not args.force:
            raise CliError(EXIT_SEARCH, "search space rejected (use --force to search anyway)")
        sn = search_supernet(space, budgets, evaluator=evaluator, seed=rng, log=slog)
        print(f"best supernet score {sn.score:.4f}")
        sp = search_single_path(sn.supernet, space, budgets, evaluator=evaluator, seed=rng, log=slog)
        for rank, (score, it, model, cfg) in enumerate(sp.ranked):
            q = prepare_model(model, cfg, seed)
            compiled = compile_model(q, cfg)
            rep = package_report(compiled, budgets)
            slog.write(phase="emit", rank=rank, iteration=it, score=score, report=rep.to_dict())
            if not rep.ok:
                continue
            save_model(model.with_sparse_configs(cfg), out / "best_model.json")
            (out / "sparse_cfg.json").write_text(json.dumps(
                {"layers": {str(i): c.to_dict() for i, c in sorted(cfg.items())}}, indent=1) + "\n")
            (out / "best.tfpk").write_bytes(emit_package(compiled, budgets=budgets))
            (out / "supernet.json").write_text(json.dumps(sn.supernet.to_dict(), indent=1) + "\n")
            print(f"winner: iteration {it}, score {score:.4f}")
            print(format_report(rep))
            print(f"wrote {out}/best_model.json, sparse_cfg.json, best.tfpk, search_log.ndjson")
            return EXIT_OK
        raise NoFeasibleModel("no ranked candidate fits the budgets once packaged")
    finally:
        slog.close()


def demo_graph(input_shape=(32, 32, 3), num_classes: int = 10) -> ModelGraph:
    """Small conv + transformer classifier used by the demo and tests."""
    K = LayerKind
    layers = [
        LayerSpec(K.CONV3X3, {"out_channels": 16, "stride": 2, "relu": True}, name="stem"),
        LayerSpec(K.CONV3X3, {"out_channels": 64, "stride": 2, "relu": True}, name="conv1"),
        LayerSpec(K.DWCONV3X3, {"stride": 1, "relu": True}, name="dw"),
        LayerSpec(K.CONV1X1, {"out_channels": 64}, name="pw"),
        LayerSpec(K.ADD, {}, name="res", inputs=(1, 3)),
        LayerSpec(K.MAXPOOL, {}, name="pool"),
        LayerSpec(K.ENCODER, {"heads": 2, "mlp_dim": 128}, name="encoder"),
        LayerSpec(K.SEQPOOL, {}, name="seqpool"),
        LayerSpec(K.LINEAR, {"out_features": num_classes}, name="head"),
    ]
    return ModelGraph(tuple(input_shape), tuple(layers), None, "demo")


def cmd_demo_model(args) -> int:
    g = demo_graph()
    if args.weights:
        g = init_float_weights(g, args.seed)
    path = save_model(g, args.output)
    print(f"wrote {path}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sparsemcu", description="Sparse INT8 model toolkit for MCU budgets.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def budgets(sp, default=True):
        sp.add_argument("--budget-storage", type=int, default=Budgets.storage if default else None,
                        help="storage budget in bytes (default %(default)s)")
        sp.add_argument("--budget-memory", type=int, default=Budgets.memory if default else None,
                        help="memory budget in bytes (default %(default)s)")

    e = sub.add_parser("encode", help="prune, quantize and package a model")
    e.add_argument("model")
    e.add_argument("-o", "--output", required=True)
    e.add_argument("--sparse-config", help="JSON sparse config file")
    e.add_argument("--sparsity", type=float, help="sparsity for every prunable layer")
    e.add_argument("--block-size", type=int, default=4)
    e.add_argument("--store", choices=("adaptive", "dense"), default="adaptive",
                   help="per-layer smaller-of-dense-or-sparse storage, or dense everywhere")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--override-budget", action="store_true",
                   help="emit even when budgets are exceeded (flagged in the header)")
    budgets(e)
    e.set_defaults(func=cmd_encode)

    i = sub.add_parser("infer", help="run a package on an input tensor file")
    i.add_argument("package")
    i.add_argument("input")
    i.add_argument("-o", "--output", required=True)
    i.add_argument("--verify", action="store_true", help="check buffers against private copies")
    i.set_defaults(func=cmd_infer)

    m = sub.add_parser("make-input", help="write a seeded random input tensor for a package")
    m.add_argument("package")
    m.add_argument("-o", "--output", required=True)
    m.add_argument("--seed", type=int, default=0)
    m.set_defaults(func=cmd_make_input)

    s = sub.add_parser("search", help="analyze a search space and search it")
    s.add_argument("config")
    s.add_argument("-o", "--out-dir", required=True)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--force", action="store_true", help="search even if the space is rejected")
    budgets(s, default=False)
    s.set_defaults(func=cmd_search)

    b = sub.add_parser("bench", help="per-layer latency medians of a package")
    b.add_argument("package")
    b.add_argument("--reps", type=int, default=11)
    b.add_argument("--dense", help="dense package of the same model, for a speedup ratio")
    b.add_argument("--softmax", type=int, nargs=2, metavar=("ROWS", "COLS"),
                   help="also compare LUT and LUT-free softmax exp counts")
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_bench)

    d = sub.add_parser("demo-model", help="write a small demo model description")
    d.add_argument("-o", "--output", required=True)
    d.add_argument("--weights", action="store_true", help="include seeded float weights")
    d.add_argument("--seed", type=int, default=0)
    d.set_defaults(func=cmd_demo_model)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except BudgetExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except ShapeMismatch as exc:
        print(f"error: shape mismatch: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (ModelFormatError, BadMagic, BadPackage, CorruptStream) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (NoFeasibleSample, NoFeasibleSupernet, NoFeasibleModel) as exc:
        print(f"error: search failed: {exc}", file=sys.stderr)
        return EXIT_SEARCH


if __name__ == "__main__":
    sys.exit(main())
