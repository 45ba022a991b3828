"""PX, DPX and SD-DPX pruning drivers.

PX ranks filters once on the unpruned model; DPX re-ranks after every 5%
step; SD-DPX additionally gates every step on the reference-set harmonic
mean, halving the step on a drop and, when the step can no longer be
halved, skipping the lowest-relevance filters one more at a time.

Rates are tracked as exact fractions so the schedule never drifts off the
0.05 grid.
"""

from __future__ import annotations

import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping

from .lrp import LrpConfig, RelevanceMap, relevance_aggregate
from .metrics import CurveRecord, harmonic_mean, per_class_accuracy
from .nn import ModelGraph
from .pruning import PruningError, as_fraction, boost_low_relevance, count_to_prune, filter_pruner, max_prunable
from .toylab import LabeledSet

log = logging.getLogger(__name__)

PX, DPX, SD_DPX = "px", "dpx", "sd-dpx"


@dataclass(frozen=True)
class SdDpxConfig:
    n: float = 0.05
    p_max: float = 0.95
    t_max: int = 10
    enable_rate_change: bool = True
    enable_order_change: bool = True
    lrp: LrpConfig = field(default_factory=LrpConfig)
    seed: int = 0

    def validate(self, f_num: int) -> None:
        n, p_max = as_fraction(self.n), as_fraction(self.p_max)
        if not 0 < n <= p_max <= 1:
            raise ValueError(f"need 0 < n <= p_max <= 1, got n={self.n}, p_max={self.p_max}")
        if self.enable_order_change and not 0 < self.t_max < f_num:
            raise ValueError(f"need 0 < t_max < F_num={f_num}, got {self.t_max}")


@dataclass
class Candidate:
    score: float
    t: int
    model: ModelGraph


class CandidateRegistry:
    """Candidate prunings from one order-change phase, keyed by score.

    The first candidate registered under a score keeps it, which makes the
    smallest skip count win ties.
    """

    def __init__(self):
        self._entries: dict[float, Candidate] = {}

    def register(self, score: float, t: int, model: ModelGraph) -> None:
        self._entries.setdefault(score, Candidate(score, t, model))

    def clear(self) -> None:
        self._entries.clear()

    def __len__(self):
        return len(self._entries)

    def candidates(self) -> list[Candidate]:
        return list(self._entries.values())


def best_model_choice(registry) -> tuple[ModelGraph, float]:
    """Highest-scoring candidate; ties go to the earliest (smallest T)."""
    if isinstance(registry, CandidateRegistry):
        entries = registry.candidates()
    elif isinstance(registry, Mapping):
        entries = [Candidate(float(score), t, m) for t, (score, m) in enumerate(registry.items())]
    else:
        entries = list(registry)
    if not entries:
        raise ValueError("candidate registry is empty")
    best = max(entries, key=lambda c: (c.score, -c.t))
    return best.model, best.score


@dataclass
class PruneState:
    p: Fraction
    n_prime: Fraction
    a: float
    t: int = 0
    registry: CandidateRegistry = field(default_factory=CandidateRegistry)
    trajectory: list = field(default_factory=list)


@dataclass
class Step:
    rate: float
    model: ModelGraph
    gate_score: float
    record: CurveRecord


@dataclass
class RunResult:
    strategy: str
    steps: list[Step]
    evaluations: int = 0
    relevance_passes: int = 0

    @property
    def records(self) -> list[CurveRecord]:
        return [s.record for s in self.steps]

    @property
    def rates(self) -> list[float]:
        return [s.rate for s in self.steps]

    @property
    def final(self) -> ModelGraph:
        return self.steps[-1].model

    def snapshot_at(self, rate: float) -> ModelGraph:
        for s in self.steps:
            if abs(s.rate - rate) < 1e-12:
                return s.model
        raise KeyError(f"no accepted state at rate {rate}")


class _Clock:
    """Wall clock that can exclude measurement-only work."""

    def __init__(self):
        self._start = time.perf_counter()
        self._paused = 0.0

    def elapsed(self) -> float:
        return time.perf_counter() - self._start - self._paused

    @contextmanager
    def paused(self):
        t = time.perf_counter()
        try:
            yield
        finally:
            self._paused += time.perf_counter() - t


class _Runner:
    """Shared plumbing: relevance, gate evaluation and trajectory recording."""

    def __init__(self, strategy, model, refs, cfg, eval_set, evaluate):
        self.strategy = strategy
        self.model = model
        self.refs = refs
        self.cfg = cfg
        self.eval_set = eval_set if eval_set is not None else refs
        self._evaluate = evaluate
        self.result = RunResult(strategy, [])
        self.clock = _Clock()
        cfg.validate(model.f_num)
        top = count_to_prune(cfg.p_max, model.f_num)
        if top > max_prunable(model):
            raise PruningError(
                f"p_max={cfg.p_max} needs {top} pruned filters but at most {max_prunable(model)} "
                f"can go while keeping one per conv layer"
            )

    def relevance(self, model: ModelGraph) -> RelevanceMap:
        self.result.relevance_passes += 1
        return relevance_aggregate(model, self.refs.images, self.refs.labels, self.cfg.lrp)

    def gate(self, model: ModelGraph) -> float:
        self.result.evaluations += 1
        if self._evaluate is not None:
            return float(self._evaluate(model))
        return harmonic_mean(per_class_accuracy(model, self.refs.images, self.refs.labels))

    def record(self, rate: Fraction, model: ModelGraph, gate_score: float, **extras) -> None:
        wall = self.clock.elapsed()
        with self.clock.paused():
            acc = per_class_accuracy(model, self.eval_set.images, self.eval_set.labels)
        rec = CurveRecord.measure(rate, acc, wall, self.strategy, self.cfg.seed, gate=gate_score, **extras)
        self.result.steps.append(Step(float(rate), model, gate_score, rec))

    def schedule(self) -> list[Fraction]:
        n, p_max = as_fraction(self.cfg.n), as_fraction(self.cfg.p_max)
        rates, p = [], Fraction(0)
        while p < p_max:
            p = min(p + n, p_max)
            rates.append(p)
        return rates


def run_px(model: ModelGraph, refs: LabeledSet, cfg: SdDpxConfig = SdDpxConfig(), eval_set: LabeledSet | None = None) -> RunResult:
    """One relevance pass on the unpruned model, then prune along the fixed schedule."""
    run = _Runner(PX, model, refs, cfg, eval_set, None)
    relevance = run.relevance(model)
    m = model
    for rate in run.schedule():
        m, _ = filter_pruner(m, relevance, rate)
        run.record(rate, m, float("nan"))
    return run.result


def run_dpx(model: ModelGraph, refs: LabeledSet, cfg: SdDpxConfig = SdDpxConfig(), eval_set: LabeledSet | None = None) -> RunResult:
    """Recompute relevance on the current pruned model before every step."""
    run = _Runner(DPX, model, refs, cfg, eval_set, None)
    m = model
    for rate in run.schedule():
        m, _ = filter_pruner(m, run.relevance(m), rate)
        run.record(rate, m, float("nan"))
    return run.result


def run_sd_dpx(
    model: ModelGraph,
    refs: LabeledSet,
    cfg: SdDpxConfig = SdDpxConfig(),
    eval_set: LabeledSet | None = None,
    evaluate: Callable[[ModelGraph], float] | None = None,
) -> RunResult:
    """Accuracy-gated dynamic pruning.

    ``evaluate`` overrides the gate score (default: harmonic mean of the
    per-class accuracy on ``refs``).
    """
    run = _Runner(SD_DPX, model, refs, cfg, eval_set, evaluate)
    f_num = model.f_num
    p_max = as_fraction(cfg.p_max)
    state = PruneState(p=Fraction(0), n_prime=as_fraction(cfg.n), a=run.gate(model))
    m = model
    relevance = None
    while state.p < p_max:
        if relevance is None:
            relevance = run.relevance(m)
        p_next = min(state.p + state.n_prime, p_max)
        candidate, _ = filter_pruner(m, relevance, p_next)
        a_next = run.gate(candidate)
        how = "gate"
        state.t = 0
        if a_next < state.a:
            if cfg.enable_rate_change and count_to_prune(state.n_prime, f_num) > 1:
                log.debug("reject P'=%.4f A'=%.4f < A=%.4f: halving step", p_next, a_next, state.a)
                state.n_prime /= 2
                continue
            if cfg.enable_order_change:
                candidate, a_next, how = _change_order(run, m, relevance, p_next, candidate, a_next, state)
            else:
                how = "forced"
        m, state.a, state.p = candidate, a_next, p_next
        relevance = None
        run.record(p_next, m, state.a, n_prime=float(state.n_prime), skips=state.t, accepted_by=how)
        state.trajectory.append(run.result.steps[-1].record)
    return run.result


def _change_order(run, m, relevance, p_next, failed, a_failed, state):
    """Skip the T lowest-relevance filters, T = 1, 2, ...; the plain pruning
    already evaluated stands in for T = 0 in the registry."""
    state.registry.clear()
    state.registry.register(a_failed, 0, failed)
    log.debug("reject P'=%.4f A'=%.4f < A=%.4f: changing order", p_next, a_failed, state.a)
    t_cap = min(run.cfg.t_max, int(relevance.alive.sum()) - 1)
    for t in range(1, t_cap + 1):
        state.t = t
        candidate, _ = filter_pruner(m, boost_low_relevance(relevance, t), p_next)
        a_next = run.gate(candidate)
        state.registry.register(a_next, t, candidate)
        if a_next >= state.a:
            return candidate, a_next, "order"
        log.debug("  skip T=%d A'=%.4f still below %.4f", t, a_next, state.a)
    best, score = best_model_choice(state.registry)
    return best, score, "best-choice"


STRATEGIES = {PX: run_px, DPX: run_dpx, SD_DPX: run_sd_dpx}


def run_strategy(name: str, model, refs, cfg=SdDpxConfig(), eval_set=None) -> RunResult:
    try:
        fn = STRATEGIES[name]
    except KeyError:
        raise ValueError(f"unknown strategy {name!r}; choose from {sorted(STRATEGIES)}") from None
    return fn(model, refs, cfg, eval_set)
