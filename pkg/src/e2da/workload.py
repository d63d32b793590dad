"""Task generation: arrival processes, task feature sampling, context scaling.

Each user owns an independent substream derived from (master seed, user id),
so one user's draws never shift another's and any stream can be regenerated
in isolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Tuple

import numpy as np

from .errors import ConfigError
from .rng import substream

_SMALLEST_POSITIVE = 5e-324  # np.nextafter(0, 1); guards log(0)


@dataclass(frozen=True)
class DistributionSpec:
    """A scalar sampling rule: uniform(min, max), constant(value), or
    exponential(mean).  uniform and exponential consume one draw per
    sample, constant consumes none."""

    kind: str
    minimum: float = 0.0
    maximum: float = 0.0
    value: float = 0.0
    mean: float = 0.0

    def validate(self, name: str) -> None:
        if self.kind == "uniform":
            if not (self.minimum < self.maximum):
                raise ConfigError(
                    f"{name}: uniform needs min < max, got [{self.minimum}, {self.maximum}]"
                )
        elif self.kind == "constant":
            pass
        elif self.kind == "exponential":
            if not self.mean > 0:
                raise ConfigError(f"{name}: exponential needs mean > 0, got {self.mean}")
        else:
            raise ConfigError(f"{name}: unknown distribution kind {self.kind!r}")

    def sample(self, rng: np.random.Generator) -> float:
        if self.kind == "uniform":
            return self.minimum + (self.maximum - self.minimum) * rng.random()
        if self.kind == "constant":
            return self.value
        u = rng.random()
        if u <= 0.0:
            u = _SMALLEST_POSITIVE
        return -math.log(u) * self.mean

    def support(self) -> Optional[Tuple[float, float]]:
        """Bounded support if the kind has one, else None."""
        if self.kind == "uniform":
            return (self.minimum, self.maximum)
        if self.kind == "constant":
            return (self.value, self.value)
        return None

    @staticmethod
    def uniform(minimum: float, maximum: float) -> "DistributionSpec":
        return DistributionSpec("uniform", minimum=minimum, maximum=maximum)

    @staticmethod
    def constant(value: float) -> "DistributionSpec":
        return DistributionSpec("constant", value=value)

    @staticmethod
    def exponential(mean: float) -> "DistributionSpec":
        return DistributionSpec("exponential", mean=mean)


@dataclass(frozen=True)
class Task:
    task_id: int
    user_id: int
    arrival_time: float  # s
    size_bits: float
    intensity_cpb: float  # cycles per bit
    deadline_s: float


@dataclass(frozen=True)
class WorkloadConfig:
    """Per-user arrival rate plus the three task feature distributions.

    context_bounds holds (min, max) per feature in (size, intensity,
    deadline) order; when omitted it is derived from the feature
    distributions, which then must have bounded, non-degenerate support.
    """

    arrival_rate_per_s: float = 40.0
    size_bits: DistributionSpec = field(
        default_factory=lambda: DistributionSpec.uniform(10.0, 75_000.0)
    )
    intensity_cpb: DistributionSpec = field(
        default_factory=lambda: DistributionSpec.uniform(10.0, 1000.0)
    )
    deadline_s: DistributionSpec = field(
        default_factory=lambda: DistributionSpec.uniform(0.010, 0.018)
    )
    context_bounds: Optional[Tuple[Tuple[float, float], ...]] = None

    def validate(self) -> None:
        if not self.arrival_rate_per_s > 0:
            raise ConfigError(
                f"arrival_rate_per_s must be > 0, got {self.arrival_rate_per_s}"
            )
        self.size_bits.validate("size_bits")
        self.intensity_cpb.validate("intensity_cpb")
        self.deadline_s.validate("deadline_s")
        for dist, name in (
            (self.size_bits, "size_bits"),
            (self.intensity_cpb, "intensity_cpb"),
            (self.deadline_s, "deadline_s"),
        ):
            sup = dist.support()
            if sup is not None and sup[0] <= 0:
                raise ConfigError(f"{name}: support must be positive, got min {sup[0]}")
        bounds = self.resolved_context_bounds()
        for i, (lo, hi) in enumerate(bounds):
            if not lo < hi:
                raise ConfigError(
                    f"context_bounds[{i}] must have min < max, got ({lo}, {hi})"
                )

    def resolved_context_bounds(self) -> Tuple[Tuple[float, float], ...]:
        if self.context_bounds is not None:
            if len(self.context_bounds) != 3:
                raise ConfigError(
                    f"context_bounds needs 3 (min, max) pairs, got {len(self.context_bounds)}"
                )
            return tuple((float(lo), float(hi)) for lo, hi in self.context_bounds)
        bounds = []
        for dist, name in (
            (self.size_bits, "size_bits"),
            (self.intensity_cpb, "intensity_cpb"),
            (self.deadline_s, "deadline_s"),
        ):
            sup = dist.support()
            if sup is None or sup[0] == sup[1]:
                raise ConfigError(
                    f"context_bounds must be given explicitly: {name} has "
                    "unbounded or degenerate support"
                )
            bounds.append(sup)
        return tuple(bounds)


def sample_interarrival(rng: np.random.Generator, rate_per_s: float) -> float:
    """Exponential gap via inverse CDF; consumes exactly one uniform draw."""
    if not rate_per_s > 0:
        raise ValueError(f"rate_per_s must be > 0, got {rate_per_s}")
    u = rng.random()
    if u <= 0.0:
        u = _SMALLEST_POSITIVE
    return -math.log(u) / rate_per_s


def sample_task(
    rng: np.random.Generator,
    cfg: WorkloadConfig,
    arrival_time: float,
    user_id: int,
    task_id: int,
) -> Task:
    """Draw (size, intensity, deadline) in that fixed order."""
    size = cfg.size_bits.sample(rng)
    intensity = cfg.intensity_cpb.sample(rng)
    deadline = cfg.deadline_s.sample(rng)
    return Task(
        task_id=task_id,
        user_id=user_id,
        arrival_time=arrival_time,
        size_bits=size,
        intensity_cpb=intensity,
        deadline_s=deadline,
    )


def task_stream(
    cfg: WorkloadConfig,
    master_seed: int,
    user_id: int,
    n_users: int,
    start_time: float = 0.0,
) -> Iterator[Task]:
    """Endless Poisson task stream for one user.

    Task ids are seq * n_users + user_id: globally unique and strictly
    increasing with arrival time inside the stream.
    """
    rng = substream(master_seed, "workload", user_id)
    t = start_time
    seq = 0
    while True:
        t += sample_interarrival(rng, cfg.arrival_rate_per_s)
        yield sample_task(rng, cfg, t, user_id, seq * n_users + user_id)
        seq += 1


def normalize_context(task: Task, cfg: WorkloadConfig) -> np.ndarray:
    """Min-max scale (size, intensity, deadline) to [0, 1]^3, clamping
    features that fall outside the configured bounds."""
    bounds = cfg.resolved_context_bounds()
    raw = (task.size_bits, task.intensity_cpb, task.deadline_s)
    out = np.empty(3, dtype=np.float64)
    for i, ((lo, hi), v) in enumerate(zip(bounds, raw)):
        out[i] = min(max((v - lo) / (hi - lo), 0.0), 1.0)
    return out


def denormalize_context(x: np.ndarray, cfg: WorkloadConfig) -> Tuple[float, float, float]:
    """Inverse of normalize_context for in-bounds features."""
    bounds = cfg.resolved_context_bounds()
    vals = tuple(lo + (hi - lo) * float(xi) for (lo, hi), xi in zip(bounds, x))
    return vals
