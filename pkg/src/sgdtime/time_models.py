"""Worker timing models.

Three interchangeable models drive the simulator and the analytical bounds:

* ``FixedTimes``       -- one deterministic compute time per worker;
* ``RandomDelays``     -- one delay distribution per worker, drawn fresh for
                          every computation;
* ``PowerProfiles``    -- time-varying compute power per worker, where the
                          number of gradients finished over [t0, t1] is the
                          floor of the integrated power.

A ``PowerProfile`` stores values on a uniform grid with step ``step``.  With
``kind="linear"`` values are interpolated linearly between grid points; with
``kind="step"`` each value is held constant on [t_k, t_{k+1}), which is what
exact on/off participation schedules need.  Past the last grid point the final
value extends forever, so a trailing zero means the worker is dead from there
on and completion times can be infinite.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np


class StallError(RuntimeError):
    """A schedule cannot make the progress a recursion or simulation needs."""


# ---------------------------------------------------------------------------
# delay distributions
# ---------------------------------------------------------------------------

class DelayDistribution:
    """Base class; subclasses provide `mean` and `sample`."""

    @property
    def mean(self) -> float:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator) -> float:
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantDelay(DelayDistribution):
    value: float

    def __post_init__(self):
        if not self.value >= 0.0:
            raise ValueError(f"constant delay must be >= 0, got {self.value!r}")

    @property
    def mean(self) -> float:
        return self.value

    def sample(self, rng):
        return self.value


@dataclass(frozen=True)
class UniformDelay(DelayDistribution):
    low: float
    high: float

    def __post_init__(self):
        if not 0.0 <= self.low <= self.high:
            raise ValueError(f"need 0 <= low <= high, got [{self.low!r}, {self.high!r}]")

    @property
    def mean(self) -> float:
        return 0.5 * (self.low + self.high)

    def sample(self, rng):
        return float(rng.uniform(self.low, self.high))


@dataclass(frozen=True)
class TruncatedNormalDelay(DelayDistribution):
    """Normal(loc, scale^2) conditioned on being nonnegative."""

    loc: float
    scale: float

    def __post_init__(self):
        if not self.scale > 0.0:
            raise ValueError(f"scale must be > 0, got {self.scale!r}")

    @property
    def mean(self) -> float:
        # loc + scale * phi(a) / (1 - Phi(a)) with a = -loc/scale
        a = -self.loc / self.scale
        phi = math.exp(-0.5 * a * a) / math.sqrt(2.0 * math.pi)
        tail = 0.5 * math.erfc(a / math.sqrt(2.0))
        return self.loc + self.scale * phi / tail

    def sample(self, rng):
        # rejection from the parent normal
        while True:
            x = float(rng.normal(self.loc, self.scale))
            if x >= 0.0:
                return x


@dataclass(frozen=True)
class ExponentialDelay(DelayDistribution):
    rate: float

    def __post_init__(self):
        if not self.rate > 0.0:
            raise ValueError(f"rate must be > 0, got {self.rate!r}")

    @property
    def mean(self) -> float:
        return 1.0 / self.rate

    def sample(self, rng):
        return float(rng.exponential(1.0 / self.rate))


@dataclass(frozen=True)
class ShiftedExponentialDelay(DelayDistribution):
    shift: float
    rate: float

    def __post_init__(self):
        if not self.shift >= 0.0:
            raise ValueError(f"shift must be >= 0, got {self.shift!r}")
        if not self.rate > 0.0:
            raise ValueError(f"rate must be > 0, got {self.rate!r}")

    @property
    def mean(self) -> float:
        return self.shift + 1.0 / self.rate

    def sample(self, rng):
        return self.shift + float(rng.exponential(1.0 / self.rate))


@dataclass(frozen=True)
class GammaDelay(DelayDistribution):
    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0.0 and self.scale > 0.0):
            raise ValueError("gamma shape and scale must be > 0")

    @property
    def mean(self) -> float:
        return self.shape * self.scale

    def sample(self, rng):
        return float(rng.gamma(self.shape, self.scale))


@dataclass(frozen=True)
class ChiSquareDelay(DelayDistribution):
    df: float

    def __post_init__(self):
        if not self.df > 0.0:
            raise ValueError(f"df must be > 0, got {self.df!r}")

    @property
    def mean(self) -> float:
        return self.df

    def sample(self, rng):
        return float(rng.chisquare(self.df))


def estimate_tail_scale(samples, rel_tol: float = 1e-9) -> float:
    """Smallest R with mean(exp(|s_j - mean(s)| / R)) = 2 over the samples.

    The left side decreases strictly in R, so the root is found by bisection
    (relative tolerance `rel_tol`); evaluations are shifted log-sum-exp so
    tiny R never overflows.  All-equal samples have no dispersion to fit and
    raise ValueError.
    """
    devs = np.abs(np.asarray(samples, dtype=float) - np.mean(samples))
    if devs.size < 2:
        raise ValueError("need at least two samples")
    top = float(devs.max())
    if top == 0.0:
        raise ValueError("zero-dispersion sample: tail scale undefined")
    target = math.log(2.0) + math.log(devs.size)

    def excess(r):
        z = devs / r
        zmax = z.max()
        return zmax + math.log(np.exp(z - zmax).sum()) - target

    # At hi every term is <= 2 so excess(hi) <= 0; halve until lo brackets.
    hi = top / math.log(2.0)
    lo = 0.5 * hi
    while excess(lo) <= 0.0:
        hi = lo
        lo *= 0.5
    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if excess(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# worker collections used by the simulator
# ---------------------------------------------------------------------------

class FixedTimes:
    """Deterministic seconds-per-gradient, stored sorted ascending.

    `order` maps sorted position -> index in the constructor argument, so the
    original labelling stays recoverable.  Everything downstream works with
    the sorted view (worker i is the i-th fastest).
    """

    def __init__(self, times):
        arr = np.asarray(times, dtype=float)
        if arr.ndim != 1 or arr.size < 1:
            raise ValueError("need a nonempty 1-d sequence of times")
        if not np.all(np.isfinite(arr)) or not np.all(arr > 0.0):
            raise ValueError("all times must be finite and > 0")
        self.order = np.argsort(arr, kind="stable")
        self.times = arr[self.order]

    @property
    def n_workers(self) -> int:
        return self.times.size

    def quantile(self, m: int) -> float:
        """m-th smallest time, 1-based."""
        if not 1 <= m <= self.times.size:
            raise ValueError(f"m must be in [1, {self.times.size}], got {m}")
        return float(self.times[m - 1])

    def completion_time(self, worker: int, start: float, rng=None) -> float:
        return start + float(self.times[worker])


class RandomDelays:
    """One delay distribution per worker; each computation draws afresh."""

    def __init__(self, distributions):
        dists = list(distributions)
        if not dists:
            raise ValueError("need at least one distribution")
        for d in dists:
            if not isinstance(d, DelayDistribution):
                raise TypeError(f"not a DelayDistribution: {d!r}")
        self.distributions = dists

    @property
    def n_workers(self) -> int:
        return len(self.distributions)

    def means(self) -> np.ndarray:
        return np.array([d.mean for d in self.distributions])

    def completion_time(self, worker: int, start: float, rng: np.random.Generator) -> float:
        return start + self.distributions[worker].sample(rng)


# ---------------------------------------------------------------------------
# power profiles
# ---------------------------------------------------------------------------

class PowerProfile:
    """Nonnegative compute power on a uniform time grid.

    ``values[k]`` is the power at t = k * step.  ``kind="linear"`` draws
    straight lines between grid points; ``kind="step"`` holds each value on
    [t_k, t_{k+1}).  Beyond the grid the last value continues unchanged.
    Work (integrated power) is exact per segment, so queries cost one binary
    search plus O(1) arithmetic.
    """

    def __init__(self, step: float, values, kind: str = "linear"):
        if not step > 0.0:
            raise ValueError(f"grid step must be > 0, got {step!r}")
        if kind not in ("linear", "step"):
            raise ValueError(f"kind must be 'linear' or 'step', got {kind!r}")
        vals = np.asarray(values, dtype=float)
        if vals.ndim != 1 or vals.size < 1:
            raise ValueError("need a nonempty 1-d value array")
        if not np.all(np.isfinite(vals)) or np.any(vals < 0.0):
            raise ValueError("power values must be finite and >= 0")
        self.step = float(step)
        self.values = vals
        self.kind = kind
        if kind == "linear" and vals.size > 1:
            seg = 0.5 * (vals[:-1] + vals[1:]) * self.step
        else:
            seg = vals[:-1] * self.step
        self._cum = np.concatenate(([0.0], np.cumsum(seg)))

    @property
    def end_time(self) -> float:
        return (self.values.size - 1) * self.step

    @property
    def grid(self) -> np.ndarray:
        return self.step * np.arange(self.values.size)

    def power_at(self, t: float) -> float:
        if t < 0.0:
            raise ValueError("time must be >= 0")
        last = self.values.size - 1
        k = int(t // self.step)
        if k >= last:
            return float(self.values[last])
        if self.kind == "step":
            return float(self.values[k])
        frac = (t - k * self.step) / self.step
        return float((1.0 - frac) * self.values[k] + frac * self.values[k + 1])

    def cumulative_work(self, t: float) -> float:
        """Integral of the power over [0, t]."""
        if t < 0.0:
            raise ValueError("time must be >= 0")
        last = self.values.size - 1
        end = last * self.step
        if t >= end:
            return float(self._cum[last] + self.values[last] * (t - end))
        k = min(int(t // self.step), last - 1)
        s = t - k * self.step
        va = self.values[k]
        if self.kind == "step":
            return float(self._cum[k] + va * s)
        slope = (self.values[k + 1] - va) / self.step
        return float(self._cum[k] + va * s + 0.5 * slope * s * s)

    def work_between(self, t0: float, t1: float) -> float:
        if t1 < t0:
            raise ValueError("need t0 <= t1")
        return self.cumulative_work(t1) - self.cumulative_work(t0)

    def units_done(self, t0: float, t1: float) -> int:
        """Whole units of work finished over [t0, t1] (floor of the integral)."""
        return int(math.floor(self.work_between(t0, t1)))

    def remaining_capacity(self, t0: float) -> float:
        """Work still available after t0; infinite unless the tail is zero."""
        if self.values[-1] > 0.0:
            return math.inf
        end = self.end_time
        if t0 >= end:
            return 0.0
        return self.cumulative_work(end) - self.cumulative_work(t0)

    def finish_time(self, t0: float, units: float) -> float:
        """Smallest t with work_between(t0, t) >= units, inf if unreachable."""
        if not units > 0.0:
            raise ValueError(f"units must be > 0, got {units!r}")
        if t0 < 0.0:
            raise ValueError("start time must be >= 0")
        target = self.cumulative_work(t0) + units
        cum = self._cum
        last = self.values.size - 1
        if target > cum[last]:
            tail = self.values[last]
            if tail <= 0.0:
                return math.inf
            return last * self.step + (target - cum[last]) / tail
        j = int(np.searchsorted(cum, target, side="left"))
        # cum[j-1] < target <= cum[j]; solve inside segment j-1
        a = j - 1
        r = target - cum[a]
        va = self.values[a]
        if self.kind == "step":
            s = r / va
        else:
            slope = (self.values[a + 1] - va) / self.step
            disc = max(va * va + 2.0 * slope * r, 0.0)
            denom = va + math.sqrt(disc)
            s = r / va if slope == 0.0 else 2.0 * r / denom
        return a * self.step + min(s, self.step)


class PowerProfiles:
    """One PowerProfile per worker."""

    def __init__(self, profiles):
        profs = list(profiles)
        if not profs:
            raise ValueError("need at least one profile")
        for p in profs:
            if not isinstance(p, PowerProfile):
                raise TypeError(f"not a PowerProfile: {p!r}")
        self.profiles = profs

    @property
    def n_workers(self) -> int:
        return len(self.profiles)

    def __getitem__(self, i: int) -> PowerProfile:
        return self.profiles[i]

    def __iter__(self):
        return iter(self.profiles)

    def completion_time(self, worker: int, start: float, rng=None) -> float:
        return self.profiles[worker].finish_time(start, 1)


# ---------------------------------------------------------------------------
# profile generators
# ---------------------------------------------------------------------------

def _worker_rng(seed: int, worker: int) -> np.random.Generator:
    return np.random.default_rng([seed, worker])


def chaotic_profiles(n: int, horizon: float, seed: int = 0,
                     step: float = 0.1) -> PowerProfiles:
    """Intermittent workers: max(sin(a_i t + s_i) + noise, 0) on a 0.1 s grid.

    Per worker, a_i ~ U(0.5, 1), s_i ~ U(0, 2 pi), and the per-grid-point
    noise is N(0, 0.1^2).  Each worker draws from its own (seed, worker)
    stream with the scalar parameters first, so regenerating with a longer
    horizon keeps the earlier values bit-identical.
    """
    if n < 1 or horizon <= 0.0:
        raise ValueError("need n >= 1 and horizon > 0")
    grid = step * np.arange(int(math.ceil(horizon / step)) + 1)
    out = []
    for i in range(n):
        rng = _worker_rng(seed, i)
        a = rng.uniform(0.5, 1.0)
        s = rng.uniform(0.0, 2.0 * math.pi)
        noise = rng.normal(0.0, 0.1, size=grid.size)
        vals = np.maximum(np.sin(a * grid + s) + noise, 0.0)
        out.append(PowerProfile(step, vals, kind="linear"))
    return PowerProfiles(out)


def periodic_profiles(n: int, horizon: float, seed: int = 0,
                      step: float = 0.1) -> PowerProfiles:
    """Steady fast workers with a slow swing: max(s_i + 3 sin(t + phi_i) + noise, 0.1).

    s_i ~ U(10.5, 11.0) and phi_i ~ U(0, 2 pi); noise is N(0, 0.1^2) per grid
    point.  Same per-worker streaming scheme as `chaotic_profiles`.
    """
    if n < 1 or horizon <= 0.0:
        raise ValueError("need n >= 1 and horizon > 0")
    grid = step * np.arange(int(math.ceil(horizon / step)) + 1)
    out = []
    for i in range(n):
        rng = _worker_rng(seed, i)
        s = rng.uniform(10.5, 11.0)
        phi = rng.uniform(0.0, 2.0 * math.pi)
        noise = rng.normal(0.0, 0.1, size=grid.size)
        vals = np.maximum(s + 3.0 * np.sin(grid + phi) + noise, 0.1)
        out.append(PowerProfile(step, vals, kind="linear"))
    return PowerProfiles(out)


@dataclass(frozen=True)
class ParticipationSchedule:
    """On/off worker availability in equal intervals.

    In every interval of length `interval`, floor(idle_fraction * n) workers
    sit idle and the rest run at `base_power`.  Modes pick the idle set:

    * "fixed":        the first floor(p n) worker ids, every interval;
    * "round-robin":  the idle window rotates by floor(p n) ids per interval;
    * "adversarial":  the workers with the most accumulated capacity so far
                      (ties to the lower id), recomputed each interval;
    * "random":       a fresh uniformly chosen idle set per interval, from
                      the schedule seed.
    """

    base_power: float
    idle_fraction: float
    interval: float
    mode: str = "fixed"
    seed: int = 0

    MODES = ("fixed", "round-robin", "adversarial", "random")

    def __post_init__(self):
        if not self.base_power > 0.0:
            raise ValueError(f"base_power must be > 0, got {self.base_power!r}")
        if not 0.0 <= self.idle_fraction < 1.0:
            raise ValueError(f"idle_fraction must be in [0, 1), got {self.idle_fraction!r}")
        if not self.interval > 0.0:
            raise ValueError(f"interval must be > 0, got {self.interval!r}")
        if self.mode not in self.MODES:
            raise ValueError(f"mode must be one of {self.MODES}, got {self.mode!r}")


def participation_profiles(schedule: ParticipationSchedule, n: int, horizon: float,
                           allow_large_idle_fraction: bool = False) -> PowerProfiles:
    """Step profiles realizing a participation schedule for n workers.

    The grid step equals the schedule interval and profiles use kind="step",
    so the on/off pattern is exact at the boundaries: at every instant at
    least n - floor(p n) workers run at exactly base_power.  Idle fractions
    of 0.4 and above leave the analytical per-iteration guarantee, so they
    need `allow_large_idle_fraction=True`.
    """
    if n < 1 or horizon <= 0.0:
        raise ValueError("need n >= 1 and horizon > 0")
    if schedule.idle_fraction >= 0.4 and not allow_large_idle_fraction:
        raise ValueError(
            "idle_fraction >= 0.4 is outside the guaranteed regime; "
            "pass allow_large_idle_fraction=True to build it anyway")
    k_idle = int(schedule.idle_fraction * n)
    cells = int(math.ceil(horizon / schedule.interval))
    active = np.ones((n, cells), dtype=bool)
    if k_idle > 0:
        if schedule.mode == "fixed":
            active[:k_idle, :] = False
        elif schedule.mode == "round-robin":
            for j in range(cells):
                idle = (j * k_idle + np.arange(k_idle)) % n
                active[idle, j] = False
        elif schedule.mode == "adversarial":
            work = np.zeros(n)
            for j in range(cells):
                # most capacity first, ties to the lower id
                idle = np.lexsort((np.arange(n), -work))[:k_idle]
                active[idle, j] = False
                work[active[:, j]] += schedule.base_power * schedule.interval
        else:  # random
            rng = np.random.default_rng([schedule.seed])
            for j in range(cells):
                idle = rng.choice(n, size=k_idle, replace=False)
                active[idle, j] = False
    vals = schedule.base_power * active.astype(float)
    return PowerProfiles([
        PowerProfile(schedule.interval, vals[i], kind="step") for i in range(n)
    ])


def speedup_switch_profiles(n: int, base_power: float, switch_time: float,
                            multiplier: float = 1e6) -> PowerProfiles:
    """Worker 0 runs at base_power until switch_time, then multiplier times
    faster, forever; all other workers stay at base_power.  Step profiles, so
    the switch is exact."""
    if n < 1:
        raise ValueError("need n >= 1")
    if not (base_power > 0.0 and switch_time > 0.0 and multiplier > 0.0):
        raise ValueError("base_power, switch_time and multiplier must be > 0")
    fast = PowerProfile(switch_time, [base_power, base_power * multiplier], kind="step")
    steady = [PowerProfile(switch_time, [base_power, base_power], kind="step")
              for _ in range(n - 1)]
    return PowerProfiles([fast] + steady)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def save_profiles_csv(path, profiles: PowerProfiles) -> None:
    """Write profiles sharing one grid as rows `t,v_1,...,v_n`.

    Floats are written with repr, so loading gives back the exact bits.
    """
    profs = list(profiles)
    step = profs[0].step
    size = profs[0].values.size
    for p in profs:
        if p.step != step or p.values.size != size:
            raise ValueError("profiles must share one grid to serialize together")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"v_{i + 1}" for i in range(len(profs))])
        for k in range(size):
            writer.writerow([repr(step * k)] + [repr(float(p.values[k])) for p in profs])


def load_profiles_csv(path, kind: str = "linear") -> PowerProfiles:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "t":
            raise ValueError(f"unexpected header in {path}: {header!r}")
        n = len(header) - 1
        times = []
        cols = [[] for _ in range(n)]
        for row in reader:
            times.append(float(row[0]))
            for i in range(n):
                cols[i].append(float(row[i + 1]))
    if len(times) < 2:
        raise ValueError("need at least two grid rows")
    step = times[1] - times[0]
    return PowerProfiles([PowerProfile(step, c, kind=kind) for c in cols])
