"""Search-space acceptance analysis, supernet search and single-path search."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..compress.prune import AGPSchedule, iterative_prune, prune_graph
from ..compress.reference import init_float_weights
from ..errors import NoFeasibleModel, NoFeasibleSample, NoFeasibleSupernet
from ..ir.graph import count_params
from ..ir.supernet import SupernetSpec, sample_path_choices, build_single_path
from ..ir.types import ModelGraph, SparseConfig
from ..runtime.resources import Budgets, resource_eval
from .space import SearchSpace, sample_sparse_config, sample_supernet

ACCEPT_THRESHOLD = 0.9
PRETRAIN_EPOCHS = 10


class SearchLog:
    """Newline-delimited JSON record per sampled candidate."""

    def __init__(self, path=None):
        self.records: list[dict] = []
        self._fh = open(path, "w") if path else None

    def write(self, **rec) -> None:
        self.records.append(rec)
        if self._fh:
            self._fh.write(json.dumps(rec, sort_keys=True) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh:
            self._fh.close()
            self._fh = None


def _cfg_json(cfg: Mapping[int, SparseConfig]) -> dict:
    return {str(i): [c.sparsity, c.block_size] for i, c in sorted(cfg.items())}


def _choices_json(choices) -> list:
    return [[c.candidate, c.channels, c.repeats] for c in choices]


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _sub_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(2 ** 31))


def analyze_search_space(space: SearchSpace, t_sup: int | None = None, seed=None,
                         budgets: Budgets | None = None, log: SearchLog | None = None) -> float:
    """Fraction of resource-feasible sampled models whose effective parameter
    count lies in [lambda_lo * L_m, lambda_up * L_m].

    Raises NoFeasibleSample if no sample fits the budgets.
    """
    t_sup = space.iterations.analyze if t_sup is None else t_sup
    if t_sup < 1:
        raise ValueError("need at least one iteration")
    budgets = space.budgets if budgets is None else budgets
    rng = _rng(space.seed if seed is None else seed)
    full = space.full_supernet()
    lo, hi = space.lambda_lo * budgets.memory, space.lambda_up * budgets.memory
    n_eval = n_accpt = 0
    for it in range(t_sup):
        choices = sample_path_choices(full, rng)
        model = build_single_path(full, choices)
        cfg = sample_sparse_config(model, space, rng)
        rep = resource_eval(model, cfg, budgets)
        rec = dict(phase="analyze", iteration=it, path=_choices_json(choices), sparse_cfg=_cfg_json(cfg),
                   report=rep.to_dict())
        if rep.ok:
            n_eval += 1
            n_params = count_params(model, cfg, effective=True)
            ok = lo <= n_params <= hi
            n_accpt += ok
            rec.update(params=n_params, accepted=bool(ok))
        if log:
            log.write(**rec)
    if n_eval == 0:
        raise NoFeasibleSample(f"none of {t_sup} samples fits the budgets")
    return n_accpt / n_eval


def accept_search_space(prob: float) -> bool:
    if not 0 <= prob <= 1:
        raise ValueError("probability must lie in [0, 1]")
    return prob > ACCEPT_THRESHOLD


def test_supernet(supernet: SupernetSpec, budgets: Budgets = Budgets(), seed=0,
                  n_samples: int = 100) -> bool:
    """False when more than half of ``n_samples`` sampled paths exceed the memory budget."""
    rng = _rng(seed)
    over = 0
    for _ in range(n_samples):
        model = build_single_path(supernet, sample_path_choices(supernet, rng))
        if resource_eval(model, {}, budgets).peak_memory_bytes > budgets.memory:
            over += 1
    return over <= n_samples // 2


test_supernet.__test__ = False  # not a pytest test


@dataclass
class SupernetResult:
    supernet: SupernetSpec
    score: float
    scores: list = field(default_factory=list)   # (index, mean score or None) per sampled supernet


def search_supernet(space: SearchSpace, budgets: Budgets | None = None, t_i: int | None = None,
                    t_j: int | None = None, t_k: int | None = None, evaluator=None, seed=None,
                    log: SearchLog | None = None) -> SupernetResult:
    """Sample supernets, score each by the mean accuracy of one-shot-pruned
    sampled paths under sampled sparse configs, and keep the best."""
    it = space.iterations
    budgets = space.budgets if budgets is None else budgets
    t_i, t_j, t_k = (it.supernets if t_i is None else t_i, it.paths if t_j is None else t_j,
                     it.configs if t_k is None else t_k)
    if min(t_i, t_j, t_k) < 1:
        raise ValueError("iteration counts must be positive")
    if evaluator is None:
        from .evaluators import SurrogateEvaluator
        evaluator = SurrogateEvaluator()
    rng = _rng(space.seed if seed is None else seed)
    best: SupernetResult | None = None
    history = []
    for i in range(t_i):
        sn = sample_supernet(space, rng)
        test_seed = _sub_seed(rng)
        if not test_supernet(sn, budgets, test_seed, it.test_samples):
            history.append((i, None))
            if log:
                log.write(phase="supernet", iteration=i, supernet=sn.to_dict(), skipped="memory test")
            continue
        evaluator.train_hint(PRETRAIN_EPOCHS)
        path_means = []
        for j in range(t_j):
            choices = sample_path_choices(sn, rng)
            model = build_single_path(sn, choices)
            accs = []
            for k in range(t_k):
                cfg = sample_sparse_config(model, space, rng)
                w_seed = _sub_seed(rng)
                rep = resource_eval(model, cfg, budgets)
                rec = dict(phase="supernet", iteration=i, path_iteration=j, config_iteration=k,
                           path=_choices_json(choices), sparse_cfg=_cfg_json(cfg), report=rep.to_dict())
                if not rep.ok:
                    if log:
                        log.write(skipped="budget", **rec)
                    continue
                pruned, _ = prune_graph(init_float_weights(model, w_seed), cfg)
                acc = float(evaluator.evaluate(pruned, cfg))
                accs.append(acc)
                if log:
                    log.write(score=acc, **rec)
            if accs:
                path_means.append(float(np.mean(accs)))
        if not path_means:
            history.append((i, None))
            continue
        mean = float(np.mean(path_means))
        history.append((i, mean))
        if log:
            log.write(phase="supernet", iteration=i, supernet=sn.to_dict(), mean_score=mean)
        if best is None or mean > best.score:
            best = SupernetResult(sn, mean)
    if best is None:
        raise NoFeasibleSupernet(f"all {t_i} sampled supernets were skipped")
    best.scores = history
    return best


@dataclass
class SinglePathResult:
    model: ModelGraph                  # pruned float model carrying its sparse configs
    sparse_cfg: dict
    score: float
    choices: list
    ranked: list = field(default_factory=list)  # (score, iteration, model, cfg), best first


def search_single_path(supernet: SupernetSpec, space: SearchSpace, budgets: Budgets | None = None,
                       t_sin: int | None = None, evaluator=None, seed=None,
                       log: SearchLog | None = None) -> SinglePathResult:
    """Sample (path, sparse config) pairs, skip infeasible ones, prune the rest
    along AGP schedules (with train hints between steps) and keep the best."""
    budgets = space.budgets if budgets is None else budgets
    t_sin = space.iterations.single_path if t_sin is None else t_sin
    if t_sin < 1:
        raise ValueError("t_sin must be positive")
    if evaluator is None:
        from .evaluators import SurrogateEvaluator
        evaluator = SurrogateEvaluator()
    rng = _rng(space.seed if seed is None else seed)
    agp = space.agp

    def schedule(final: float) -> AGPSchedule:
        return AGPSchedule(0.0, final, agp.t0, agp.n_steps, agp.delta_t)

    ranked = []
    for i in range(t_sin):
        choices = sample_path_choices(supernet, rng)
        model = build_single_path(supernet, choices)
        cfg = sample_sparse_config(model, space, rng)
        w_seed = _sub_seed(rng)
        rep = resource_eval(model, cfg, budgets)
        rec = dict(phase="single_path", iteration=i, path=_choices_json(choices),
                   sparse_cfg=_cfg_json(cfg), report=rep.to_dict())
        if not rep.ok:
            if log:
                log.write(skipped="budget", **rec)
            continue
        evaluator.train_hint(PRETRAIN_EPOCHS)
        pruned = iterative_prune(init_float_weights(model, w_seed), cfg, schedule,
                                 on_step=lambda t: evaluator.train_hint(1))
        acc = float(evaluator.evaluate(pruned, cfg))
        if log:
            log.write(score=acc, **rec)
        ranked.append((acc, i, pruned, cfg, choices))
    if not ranked:
        raise NoFeasibleModel(f"all {t_sin} sampled models exceed the budgets")
    # stable: ties keep the earliest iteration (strict improvement only)
    ranked.sort(key=lambda r: (-r[0], r[1]))
    acc, _, model, cfg, choices = ranked[0]
    return SinglePathResult(model, cfg, acc, choices,
                            [(r[0], r[1], r[2], r[3]) for r in ranked])


__all__ = ["ACCEPT_THRESHOLD", "SearchLog", "analyze_search_space", "accept_search_space",
           "test_supernet", "SupernetResult", "search_supernet", "SinglePathResult",
           "search_single_path"]
