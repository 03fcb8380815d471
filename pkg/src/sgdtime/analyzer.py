"""Closed-form runtime bounds and lower/upper time recursions.

Everything here is pure arithmetic on a timing model plus a small bundle of
problem constants: smoothness, initial objective gap, gradient noise, and the
target squared gradient norm. Worker counts are 1-based in all group-size
arguments.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .time_models import FixedTimes, PowerProfiles, RandomDelays, StallError

SHARED_CONSTANT = 16.0


@dataclass(frozen=True)
class RateConstants:
    """Problem-side constants every runtime formula depends on."""

    smoothness: float
    initial_gap: float
    gradient_noise: float
    target: float
    tail_scale: float | None = None

    def __post_init__(self):
        for name in ("smoothness", "initial_gap", "target"):
            value = getattr(self, name)
            if not value > 0.0:
                raise ValueError(f"{name} must be > 0, got {value!r}")
        if self.gradient_noise < 0.0:
            raise ValueError(f"gradient_noise must be >= 0, got {self.gradient_noise!r}")
        if self.tail_scale is not None and not self.tail_scale > 0.0:
            raise ValueError(f"tail_scale must be > 0, got {self.tail_scale!r}")

    @property
    def work_term(self) -> float:
        """Gradient-descent iteration scale: smoothness * gap / target."""
        return self.smoothness * self.initial_gap / self.target

    @property
    def noise_ratio(self) -> float:
        """Gradient noise relative to the target accuracy."""
        return self.gradient_noise / self.target

    @classmethod
    def from_problem(cls, problem, target, tail_scale=None):
        x0 = problem.start_point()
        grad_sq = float(np.dot(problem.gradient(x0), problem.gradient(x0)))
        if target > grad_sq:
            warnings.warn(
                f"target {target:g} exceeds the starting squared gradient norm "
                f"{grad_sq:g}; runs will stop immediately", stacklevel=2)
        return cls(problem.smoothness(), problem.initial_gap(),
                   problem.noise_second_moment(x0), target, tail_scale)


def _as_fixed(model) -> FixedTimes:
    """Random-delay models are analyzed through their mean-delay surrogate."""
    if isinstance(model, RandomDelays):
        return FixedTimes(model.means())
    return model


def iteration_count(consts: RateConstants, group_size: int) -> int:
    """Iterations needed when each update averages group_size fresh gradients."""
    if group_size < 1:
        raise ValueError(f"group_size must be >= 1, got {group_size}")
    w = consts.work_term
    return math.ceil(SHARED_CONSTANT * max(w, w * consts.noise_ratio / group_size))


def _per_group_costs(taus: np.ndarray, consts: RateConstants) -> np.ndarray:
    m = np.arange(1, taus.size + 1)
    return taus * np.maximum(1.0, consts.noise_ratio / m)


def sync_runtime(times, consts: RateConstants) -> tuple[float, int]:
    """Barrier-SGD wall clock when run with the best group size.

    Minimizes (m-th worker time) * max{1, noise/(m*target)} over m and scales
    by the iteration budget. Returns the seconds and the smallest minimizer.
    """
    taus = _as_fixed(times).times
    costs = _per_group_costs(taus, consts)
    best = int(np.argmin(costs))
    return SHARED_CONSTANT * consts.work_term * float(costs[best]), best + 1


def ideal_runtime(times, consts: RateConstants) -> tuple[float, int]:
    """Best achievable wall clock, up to constants, over all methods.

    Uses the harmonic mean of the m fastest workers instead of the m-th
    worker's time, which keeps the value stable when slow stragglers join.
    """
    taus = _as_fixed(times).times
    m = np.arange(1, taus.size + 1)
    harmonic = m / np.cumsum(1.0 / taus)
    w = consts.work_term
    per_m = harmonic * np.maximum(w, w * consts.noise_ratio / m)
    best = int(np.argmin(per_m))
    return float(per_m[best]), best + 1


def log_gap_certificate(times, consts: RateConstants) -> float:
    """sync_runtime over ideal_runtime, discounted by log(n + 1).

    Bounded by a universal constant for every worker-time vector; the tests
    pin 64, which absorbs the shared iteration constant and rounding slack.
    """
    n = _as_fixed(times).n_workers
    t_sync, _ = sync_runtime(times, consts)
    t_ideal, _ = ideal_runtime(times, consts)
    return t_sync / (t_ideal * math.log(n + 1))


def group_cost(times, consts: RateConstants, group_size: int) -> float:
    """Per-iteration cost proxy: m-th worker time times the noise penalty."""
    fixed = _as_fixed(times)
    return fixed.quantile(group_size) * max(1.0, consts.noise_ratio / group_size)


def group_pace(times, group_size: int) -> float:
    """Seconds per gradient when the m fastest workers run a full barrier."""
    return _as_fixed(times).quantile(group_size) / group_size


def best_group_size(times, consts: RateConstants) -> int:
    """Smallest minimizer of group_cost over the provably sufficient range."""
    fixed = _as_fixed(times)
    cap = max(1, min(math.ceil(consts.noise_ratio), fixed.n_workers))
    costs = _per_group_costs(fixed.times[:cap], consts)
    return int(np.argmin(costs)) + 1


def power_law_group_size(base_time, exponent, offset,
                         consts: RateConstants, n_workers: int) -> tuple[int, bool]:
    """Recommended group size for times tau_i = base_time * i**exponent + offset.

    Returns min{ceil(noise/target), n} and whether that choice is covered by
    the power-law optimality condition: it must dominate the crossover point
    (offset / base_time) ** (1 / exponent). A zero exponent is only covered
    for zero offset.
    """
    if not base_time > 0.0:
        raise ValueError(f"base_time must be > 0, got {base_time!r}")
    if not 0.0 <= exponent <= 1.0:
        raise ValueError(f"exponent must be in [0, 1], got {exponent!r}")
    if offset < 0.0:
        raise ValueError(f"offset must be >= 0, got {offset!r}")
    m = max(1, min(math.ceil(consts.noise_ratio), n_workers))
    if exponent == 0.0:
        return m, offset == 0.0
    return m, m >= (offset / base_time) ** (1.0 / exponent)


def random_delay_runtime_bound(times, consts: RateConstants, group_size: int,
                               tail_scale: float | None = None) -> float:
    """Expected barrier runtime when worker delays fluctuate randomly.

    Adds tail_scale * log(n) seconds of scheduling noise to the m-th mean
    worker time; tail_scale defaults to the one stored in consts.
    """
    r = consts.tail_scale if tail_scale is None else tail_scale
    if r is None or r < 0.0:
        raise ValueError(f"need a nonnegative tail scale, got {r!r}")
    fixed = _as_fixed(times)
    per_iter = fixed.quantile(group_size) + r * math.log(fixed.n_workers)
    penalty = max(1.0, consts.noise_ratio / group_size)
    return SHARED_CONSTANT * consts.work_term * per_iter * penalty


# ---------------------------------------------------------------------------
# time recursions under power profiles
# ---------------------------------------------------------------------------

def _first_time_reaching(profiles: PowerProfiles, t0: float, target: float,
                         step_k: int, tol: float = 1e-9) -> float:
    """Smallest t with sum_i floor(work_i(t0, t)) >= target.

    The sum is a nondecreasing integer step function of t, so bisection lands
    on a jump; the boundary pair is re-checked before returning.
    """
    def count(t):
        return sum(p.units_done(t0, t) for p in profiles)

    reachable = 0.0
    for p in profiles:
        cap = p.remaining_capacity(t0)
        if math.isinf(cap):
            reachable = math.inf
            break
        reachable += math.floor(cap)
    if reachable < target:
        raise StallError(
            f"profiles can supply only {reachable:g} more gradients after "
            f"t={t0:g}; lower recursion stalled at step {step_k}")

    hi = t0 + 1.0
    while count(hi) < target:
        hi = t0 + 2.0 * (hi - t0)
    lo = t0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if count(mid) >= target:
            hi = mid
        else:
            lo = mid
    if count(hi) < target or count(hi - 1e-6) >= target:
        raise RuntimeError(f"bisection missed the jump near t={hi!r}")
    return hi


def lower_bound_sequence(profiles: PowerProfiles, consts: RateConstants,
                         iter_scale: float = 16.0,
                         target_scale: float = 1.0) -> np.ndarray:
    """Times before which no method can reach the target, step by step.

    Each step waits until the fleet has produced target_scale * ceil(noise
    ratio) whole gradients since the previous step; the number of steps is
    ceil(iter_scale * work_term).
    """
    if not iter_scale > 0.0 or not target_scale > 0.0:
        raise ValueError("iter_scale and target_scale must be > 0")
    target = target_scale * math.ceil(consts.noise_ratio)
    if not target > 0.0:
        raise ValueError("gradient noise too small: per-step target is zero")
    steps = math.ceil(iter_scale * consts.work_term)
    seq = np.empty(steps + 1)
    seq[0] = 0.0
    for k in range(steps):
        seq[k + 1] = _first_time_reaching(profiles, seq[k], target, k)
    return seq


def upper_bound_sequence(profiles: PowerProfiles, consts: RateConstants,
                         group_size: int, units_per_step: float = 2.0) -> np.ndarray:
    """Times by which barrier SGD on the best m workers finishes each step.

    Every step advances to the group_size-th smallest time at which a worker
    has produced units_per_step more units. The guaranteed bound charges two
    units per step, one of which may be a warm-up carried over the step
    boundary; units_per_step=1 counts only the fresh gradient each iteration
    actually consumes, which is the tighter empirical reading.
    """
    n = profiles.n_workers
    if not 1 <= group_size <= n:
        raise ValueError(f"group_size must be in [1, {n}], got {group_size}")
    if not units_per_step > 0.0:
        raise ValueError(f"units_per_step must be > 0, got {units_per_step!r}")
    steps = iteration_count(consts, group_size)
    seq = np.empty(steps + 1)
    seq[0] = 0.0
    for k in range(steps):
        finishes = np.sort([p.finish_time(seq[k], units_per_step) for p in profiles])
        t_next = float(finishes[group_size - 1])
        if math.isinf(t_next):
            raise StallError(
                f"fewer than {group_size} workers can finish {units_per_step:g} "
                f"units after t={seq[k]:g}; upper recursion stalled at step {k}")
        seq[k + 1] = t_next
    return seq


@dataclass(frozen=True)
class BoundSequences:
    """Paired lower/upper time sequences and the constants that shaped them."""

    lower: np.ndarray
    upper: np.ndarray
    group_size: int
    iter_scale: float = 16.0
    target_scale: float = 1.0
    units_per_step: float = 2.0

    def __post_init__(self):
        for name in ("lower", "upper"):
            seq = getattr(self, name)
            if seq[0] != 0.0 or np.any(np.diff(seq) <= 0.0):
                raise ValueError(f"{name} sequence must increase strictly from 0")

    @property
    def gap_ratio(self) -> float:
        """Final upper time over final lower time; near 1 means both are tight."""
        return float(self.upper[-1] / self.lower[-1])

    def to_json(self) -> str:
        return json.dumps({
            "group_size": self.group_size,
            "iter_scale": self.iter_scale,
            "target_scale": self.target_scale,
            "units_per_step": self.units_per_step,
            "gap_ratio": self.gap_ratio,
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
        }, indent=2)

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "t_lower", "t_upper"])
            for k in range(max(self.lower.size, self.upper.size)):
                row = [k]
                row.append(repr(float(self.lower[k])) if k < self.lower.size else "")
                row.append(repr(float(self.upper[k])) if k < self.upper.size else "")
                writer.writerow(row)


def bound_sequences(profiles: PowerProfiles, consts: RateConstants,
                    group_size: int, iter_scale: float = 16.0,
                    target_scale: float = 1.0,
                    units_per_step: float = 2.0) -> BoundSequences:
    lower = lower_bound_sequence(profiles, consts, iter_scale, target_scale)
    upper = upper_bound_sequence(profiles, consts, group_size, units_per_step)
    return BoundSequences(lower, upper, group_size, iter_scale, target_scale,
                          units_per_step)


def participation_runtime_bound(speed, idle_fraction, n_workers,
                                consts: RateConstants) -> tuple[float, tuple[int, int]]:
    """Runtime guarantee when an idle_fraction of workers may rest at a time.

    Workers all compute at the given speed while active. Below idle fraction
    0.4 each step costs at most 4 / speed seconds, and any group size in the
    returned inclusive range enjoys the bound.
    """
    if not speed > 0.0:
        raise ValueError(f"speed must be > 0, got {speed!r}")
    if not 0.0 <= idle_fraction < 0.4:
        raise ValueError(
            f"bound only holds for idle fractions below 0.4, got {idle_fraction!r}")
    if n_workers < 1:
        raise ValueError(f"n_workers must be >= 1, got {n_workers}")
    seconds = 4.0 * iteration_count(consts, n_workers) / speed
    lo = max(1, n_workers // 5)
    hi = math.floor((1.0 - 2.0 * idle_fraction) * n_workers)
    return seconds, (lo, hi)


# ---------------------------------------------------------------------------
# aggregate report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ComplexityReport:
    """Every closed-form quantity for one timing model, tabulated over m."""

    worker_times: np.ndarray
    iteration_counts: np.ndarray
    group_costs: np.ndarray
    group_paces: np.ndarray
    sync_seconds: float
    sync_group: int
    ideal_seconds: float
    ideal_group: int
    recommended_group: int
    log_gap: float
    random_bounds: np.ndarray | None = None
    participation_seconds: float | None = None
    participation_range: tuple[int, int] | None = None
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> str:
        body = {
            "worker_times": self.worker_times.tolist(),
            "iteration_counts": self.iteration_counts.tolist(),
            "group_costs": self.group_costs.tolist(),
            "group_paces": self.group_paces.tolist(),
            "sync_seconds": self.sync_seconds,
            "sync_group": self.sync_group,
            "ideal_seconds": self.ideal_seconds,
            "ideal_group": self.ideal_group,
            "recommended_group": self.recommended_group,
            "log_gap": self.log_gap,
            "random_bounds": None if self.random_bounds is None
            else self.random_bounds.tolist(),
            "participation_seconds": self.participation_seconds,
            "participation_range": None if self.participation_range is None
            else list(self.participation_range),
            "metadata": self.metadata,
        }
        return json.dumps(body, indent=2)


def complexity_report(times, consts: RateConstants,
                      participation: tuple[float, float] | None = None) -> ComplexityReport:
    """Evaluate all closed forms for one timing model.

    participation, when given, is a (speed, idle_fraction) pair for the
    equal-speed resting-workers bound.
    """
    fixed = _as_fixed(times)
    n = fixed.n_workers
    groups = range(1, n + 1)
    counts = np.array([iteration_count(consts, m) for m in groups])
    costs = np.array([group_cost(fixed, consts, m) for m in groups])
    paces = np.array([group_pace(fixed, m) for m in groups])
    t_sync, m_sync = sync_runtime(fixed, consts)
    t_ideal, m_ideal = ideal_runtime(fixed, consts)
    meta = {"shared_constant": SHARED_CONSTANT,
            "random_bound_constant": SHARED_CONSTANT}
    if isinstance(times, RandomDelays):
        meta["worker_times"] = "means of the delay distributions"
    rand = None
    if consts.tail_scale is not None:
        rand = np.array([random_delay_runtime_bound(fixed, consts, m) for m in groups])
    part_seconds = part_range = None
    if participation is not None:
        speed, idle = participation
        part_seconds, part_range = participation_runtime_bound(speed, idle, n, consts)
    return ComplexityReport(
        worker_times=fixed.times.copy(),
        iteration_counts=counts,
        group_costs=costs,
        group_paces=paces,
        sync_seconds=t_sync,
        sync_group=m_sync,
        ideal_seconds=t_ideal,
        ideal_group=m_ideal,
        recommended_group=best_group_size(fixed, consts),
        log_gap=log_gap_certificate(fixed, consts),
        random_bounds=rand,
        participation_seconds=part_seconds,
        participation_range=part_range,
        metadata=meta,
    )
