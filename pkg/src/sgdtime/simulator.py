"""Deterministic event-driven simulation of distributed SGD variants.

Four server policies over a shared worker pool:

* ``sync``     -- wait for every worker, average all n gradients;
* ``msync``    -- average the first m gradients computed at the current
                  iterate; workers still busy at the update keep going, their
                  late result is discarded on arrival and they start over at
                  whatever iterate is current by then;
* ``async``    -- apply each gradient the moment it arrives, however stale;
* ``rennala``  -- collect a batch of B gradients at the current iterate,
                  discarding stale arrivals; every completion immediately
                  starts a new computation at the current point.

Determinism rules: pending completions are processed in (time, worker id)
order; each worker owns an RNG stream seeded (master seed, worker id) and
consumes it in a fixed order (delay draw, then gradient draw, at computation
start); gradient batches are averaged in worker-id order.  Identical
(config, seed) pairs therefore reproduce runs bit for bit.

Workers that tie with the update instant in ``msync`` and ``rennala`` restart
at the iterate as it stands once the whole instant has been handled, so a
simultaneous stale finisher is not condemned to restart one version behind.
``async`` restarts each contributor immediately at the point its own update
produced.
"""

from __future__ import annotations

import csv
import heapq
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .problem import ChainQuadratic
from .time_models import StallError

ALGORITHMS = ("sync", "msync", "async", "rennala")


@dataclass
class SimConfig:
    """Run parameters for one simulation.

    `group_size` is only meaningful (and required) for msync, `batch_size`
    for rennala, `staleness_clip` for async.  At least one stopping rule
    (iteration_cap, time_budget) must be set; both may be.
    """

    algorithm: str
    gamma: float
    group_size: int | None = None
    batch_size: int | None = None
    iteration_cap: int | None = None
    time_budget: float | None = None
    seed: int = 0
    staleness_clip: float | None = None
    record_limit: int = 10_000

    def validate(self, n_workers: int) -> None:
        errs = []
        if self.algorithm not in ALGORITHMS:
            errs.append(f"unknown algorithm {self.algorithm!r}")
        if not (isinstance(self.gamma, (int, float)) and math.isfinite(self.gamma)
                and self.gamma > 0):
            errs.append(f"gamma must be finite and > 0, got {self.gamma!r}")
        if self.algorithm == "msync":
            if self.group_size is None:
                errs.append("msync needs group_size")
            elif not 1 <= self.group_size <= n_workers:
                errs.append(f"group_size must be in [1, {n_workers}], got {self.group_size}")
        elif self.group_size is not None:
            errs.append(f"group_size is only valid for msync, not {self.algorithm!r}")
        if self.algorithm == "rennala":
            if self.batch_size is None:
                errs.append("rennala needs batch_size")
            elif self.batch_size < 1:
                errs.append(f"batch_size must be >= 1, got {self.batch_size}")
        elif self.batch_size is not None:
            errs.append(f"batch_size is only valid for rennala, not {self.algorithm!r}")
        if self.staleness_clip is not None:
            if self.algorithm != "async":
                errs.append("staleness_clip is only valid for async")
            elif not self.staleness_clip > 0:
                errs.append(f"staleness_clip must be > 0, got {self.staleness_clip}")
        if self.iteration_cap is None and self.time_budget is None:
            errs.append("need a stopping rule: iteration_cap and/or time_budget")
        if self.iteration_cap is not None and self.iteration_cap < 1:
            errs.append(f"iteration_cap must be >= 1, got {self.iteration_cap}")
        if self.time_budget is not None and not self.time_budget > 0:
            errs.append(f"time_budget must be > 0, got {self.time_budget}")
        if self.record_limit < 2:
            errs.append(f"record_limit must be >= 2, got {self.record_limit}")
        if errs:
            raise ValueError("; ".join(errs))

    def echo(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "gamma": self.gamma,
            "group_size": self.group_size,
            "batch_size": self.batch_size,
            "iteration_cap": self.iteration_cap,
            "time_budget": self.time_budget,
            "seed": int(self.seed),
            "staleness_clip": self.staleness_clip,
        }


@dataclass
class Trajectory:
    """Recorded update sequence of one run plus work accounting.

    One row per recorded update (thinned to every `stride`-th iteration once
    the record limit is hit, endpoints always kept).  `produced` counts
    finished gradient computations, `used` the ones averaged into updates,
    `discarded` the stale arrivals thrown away; `pending` is whatever was
    finished but neither used nor discarded when the run stopped, which is
    zero for iteration-capped runs.
    """

    times: np.ndarray
    iterations: np.ndarray
    f_values: np.ndarray
    grad_sq_norms: np.ndarray
    produced: int
    used: int
    discarded: int
    stride: int
    config: dict
    staleness: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))

    @property
    def pending(self) -> int:
        return self.produced - self.used - self.discarded

    @property
    def updates(self) -> int:
        return int(self.iterations[-1])

    @property
    def final_time(self) -> float:
        return float(self.times[-1])

    @property
    def final_f(self) -> float:
        return float(self.f_values[-1])

    def save_csv(self, path) -> None:
        """Write rows `time,iter,f,grad_sq_norm` plus a JSON sidecar."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time", "iter", "f", "grad_sq_norm"])
            for t, k, f, g in zip(self.times, self.iterations,
                                  self.f_values, self.grad_sq_norms):
                writer.writerow([repr(float(t)), int(k), repr(float(f)), repr(float(g))])
        side = {
            "config": self.config,
            "produced": self.produced,
            "used": self.used,
            "discarded": self.discarded,
            "pending": self.pending,
            "updates": self.updates,
            "final_time": self.final_time,
            "final_f": self.final_f,
            "stride": self.stride,
        }
        if self.staleness.size:
            side["staleness_max"] = int(self.staleness.max())
            side["staleness_mean"] = float(self.staleness.mean())
        path.with_suffix(".json").write_text(json.dumps(side, sort_keys=True, indent=2))


class _Recorder:
    """Collects (time, iter, f, |grad|^2) rows with stride thinning."""

    def __init__(self, problem: ChainQuadratic, limit: int):
        self.problem = problem
        self.limit = limit
        self.stride = 1
        self.rows: list[tuple[float, int, float, float]] = []

    def _append(self, t, k, x):
        g = self.problem.gradient(x)
        self.rows.append((float(t), int(k), self.problem.objective_value(x), float(g @ g)))
        if len(self.rows) > self.limit:
            self.stride *= 2
            self.rows = [r for r in self.rows if r[1] % self.stride == 0]

    def note(self, t, k, x):
        if k % self.stride == 0:
            self._append(t, k, x)

    def finalize(self, t, k, x):
        if not self.rows or self.rows[-1][1] != k:
            self._append(t, k, x)

    def build(self, produced, used, discarded, config, staleness=()):
        rows = np.array(self.rows)
        return Trajectory(
            times=rows[:, 0],
            iterations=rows[:, 1].astype(int),
            f_values=rows[:, 2],
            grad_sq_norms=rows[:, 3],
            produced=produced,
            used=used,
            discarded=discarded,
            stride=self.stride,
            config=config,
            staleness=np.asarray(list(staleness), dtype=int),
        )


def _worker_rngs(seed: int, n: int) -> list:
    return [np.random.default_rng([int(seed), w]) for w in range(n)]


def _averaged(batch, dim) -> np.ndarray:
    """Sum contributions in worker-id order (stable for equal ids)."""
    acc = np.zeros(dim)
    for _, g in sorted(batch, key=lambda item: item[0]):
        acc += g
    return acc / len(batch)


def run_sync(problem: ChainQuadratic, model, config: SimConfig) -> Trajectory:
    """Barrier-per-iteration loop; every update averages all n gradients."""
    n = model.n_workers
    config.validate(n)
    rngs = _worker_rngs(config.seed, n)
    x = problem.start_point()
    t, k = 0.0, 0
    produced = used = 0
    rec = _Recorder(problem, config.record_limit)
    rec.note(0.0, 0, x)
    while config.iteration_cap is None or k < config.iteration_cap:
        comps = np.empty(n)
        batch = []
        for w in range(n):
            comps[w] = model.completion_time(w, t, rngs[w])
            batch.append((w, problem.stochastic_gradient(x, rngs[w])))
        barrier = float(comps.max())
        if math.isinf(barrier):
            raise StallError(f"sync iteration {k}: a worker never finishes")
        if config.time_budget is not None and barrier > config.time_budget:
            produced += int(np.sum(comps <= config.time_budget))
            break
        x = x - config.gamma * _averaged(batch, problem.dim)
        t, k = barrier, k + 1
        produced += n
        used += n
        rec.note(t, k, x)
    rec.finalize(t, k, x)
    return rec.build(produced, used, 0, config.echo())


def run_m_sync(problem: ChainQuadratic, model, config: SimConfig) -> Trajectory:
    """Average the first group_size gradients taken at the current iterate.

    Workers mid-computation when the update fires finish anyway; the stale
    result is discarded on arrival and the worker starts over at the
    then-current iterate.
    """
    n = model.n_workers
    config.validate(n)
    m = config.group_size
    rngs = _worker_rngs(config.seed, n)
    x = problem.start_point()
    t, k = 0.0, 0
    produced = used = discarded = 0
    version = [0] * n
    grads: list = [None] * n
    busy = [False] * n
    heap: list[tuple[float, int]] = []

    def start(w, now):
        version[w] = k
        comp = model.completion_time(w, now, rngs[w])
        grads[w] = problem.stochastic_gradient(x, rngs[w])
        busy[w] = True
        heapq.heappush(heap, (comp, w))

    for w in range(n):
        start(w, 0.0)
    rec = _Recorder(problem, config.record_limit)
    rec.note(0.0, 0, x)
    batch = []
    while config.iteration_cap is None or k < config.iteration_cap:
        if not heap:
            raise StallError(f"msync iteration {k}: no pending completions")
        t_next = heap[0][0]
        if math.isinf(t_next):
            raise StallError(f"msync iteration {k}: remaining workers never finish")
        if config.time_budget is not None and t_next > config.time_budget:
            break
        events = []
        while heap and heap[0][0] == t_next:
            events.append(heapq.heappop(heap))
        restarts = set()
        updated = False
        for _, w in events:
            produced += 1
            busy[w] = False
            if version[w] == k:
                batch.append((w, grads[w]))
                if len(batch) == m:
                    x = x - config.gamma * _averaged(batch, problem.dim)
                    k += 1
                    used += m
                    batch = []
                    updated = True
                    restarts.update(u for u in range(n) if not busy[u])
            else:
                discarded += 1
                restarts.add(w)
        for w in sorted(restarts):
            start(w, t_next)
        t = t_next
        if updated:
            rec.note(t, k, x)
    rec.finalize(t, k, x)
    return rec.build(produced, used, discarded, config.echo())


def run_async(problem: ChainQuadratic, model, config: SimConfig) -> Trajectory:
    """Apply every arriving gradient immediately, tracking its staleness.

    The stepsize is constant, or clipped to
    gamma * min(1, staleness_clip / max(delta, 1)) when a clip is set.
    """
    n = model.n_workers
    config.validate(n)
    rngs = _worker_rngs(config.seed, n)
    x = problem.start_point()
    t, k = 0.0, 0
    produced = 0
    staleness: list[int] = []
    version = [0] * n
    grads: list = [None] * n
    heap: list[tuple[float, int]] = []

    def start(w, now):
        version[w] = k
        comp = model.completion_time(w, now, rngs[w])
        grads[w] = problem.stochastic_gradient(x, rngs[w])
        heapq.heappush(heap, (comp, w))

    for w in range(n):
        start(w, 0.0)
    rec = _Recorder(problem, config.record_limit)
    rec.note(0.0, 0, x)
    while config.iteration_cap is None or k < config.iteration_cap:
        if not heap:
            raise StallError(f"async iteration {k}: no pending completions")
        t_next, w = heap[0]
        if math.isinf(t_next):
            raise StallError(f"async iteration {k}: remaining workers never finish")
        if config.time_budget is not None and t_next > config.time_budget:
            break
        heapq.heappop(heap)
        delta = k - version[w]
        staleness.append(delta)
        step = config.gamma
        if config.staleness_clip is not None:
            step *= min(1.0, config.staleness_clip / max(delta, 1))
        x = x - step * grads[w]
        k += 1
        produced += 1
        start(w, t_next)
        t = t_next
        if not (heap and heap[0][0] == t_next):
            rec.note(t, k, x)
    rec.finalize(t, k, x)
    return rec.build(produced, produced, 0, config.echo(), staleness)


def run_rennala(problem: ChainQuadratic, model, config: SimConfig) -> Trajectory:
    """Collect batch_size gradients at the current point, then step.

    Stale arrivals are discarded; every completion immediately starts a new
    computation at the current point, so one fast worker may fill a whole
    batch alone.
    """
    n = model.n_workers
    config.validate(n)
    b = config.batch_size
    rngs = _worker_rngs(config.seed, n)
    x = problem.start_point()
    t, k = 0.0, 0
    produced = used = discarded = 0
    version = [0] * n
    grads: list = [None] * n
    heap: list[tuple[float, int]] = []

    def start(w, now):
        version[w] = k
        comp = model.completion_time(w, now, rngs[w])
        grads[w] = problem.stochastic_gradient(x, rngs[w])
        heapq.heappush(heap, (comp, w))

    for w in range(n):
        start(w, 0.0)
    rec = _Recorder(problem, config.record_limit)
    rec.note(0.0, 0, x)
    batch = []
    while config.iteration_cap is None or k < config.iteration_cap:
        if not heap:
            raise StallError(f"rennala iteration {k}: no pending completions")
        t_next = heap[0][0]
        if math.isinf(t_next):
            raise StallError(f"rennala iteration {k}: remaining workers never finish")
        if config.time_budget is not None and t_next > config.time_budget:
            break
        events = []
        while heap and heap[0][0] == t_next:
            events.append(heapq.heappop(heap))
        updated = False
        for _, w in events:
            produced += 1
            if version[w] == k:
                batch.append((w, grads[w]))
                if len(batch) == b:
                    x = x - config.gamma * _averaged(batch, problem.dim)
                    k += 1
                    used += b
                    batch = []
                    updated = True
            else:
                discarded += 1
        for _, w in events:
            start(w, t_next)
        t = t_next
        if updated:
            rec.note(t, k, x)
    rec.finalize(t, k, x)
    return rec.build(produced, used, discarded, config.echo())


_RUNNERS = {
    "sync": run_sync,
    "msync": run_m_sync,
    "async": run_async,
    "rennala": run_rennala,
}


def run(problem: ChainQuadratic, model, config: SimConfig) -> Trajectory:
    """Dispatch on config.algorithm."""
    if config.algorithm not in _RUNNERS:
        raise ValueError(f"unknown algorithm {config.algorithm!r}")
    return _RUNNERS[config.algorithm](problem, model, config)
