import itertools
import math

import numpy as np
import pytest

from conftest import StubRng, make_task
from e2da.errors import ConfigError
from e2da.rng import substream
from e2da.workload import (
    DistributionSpec,
    WorkloadConfig,
    denormalize_context,
    normalize_context,
    sample_interarrival,
    sample_task,
    task_stream,
)


class TestDistributionSpec:
    def test_uniform_inverse_cdf(self):
        dist = DistributionSpec.uniform(10.0, 20.0)
        assert dist.sample(StubRng([0.5])) == 15.0
        assert dist.sample(StubRng([0.0])) == 10.0

    def test_uniform_single_draw(self):
        rng = substream(3, "t")
        mirror = substream(3, "t")
        dist = DistributionSpec.uniform(0.0, 1.0)
        got = [dist.sample(rng) for _ in range(5)]
        want = [mirror.random() for _ in range(5)]
        assert got == want

    def test_constant_consumes_nothing(self):
        dist = DistributionSpec.constant(42.0)
        assert dist.sample(StubRng([])) == 42.0

    def test_exponential_inverse_cdf(self):
        dist = DistributionSpec.exponential(3.0)
        # u = 0.5 gives exactly mean * ln 2
        assert dist.sample(StubRng([0.5])) == 3.0 * math.log(2.0)

    def test_exponential_zero_draw_is_finite(self):
        dist = DistributionSpec.exponential(1.0)
        v = dist.sample(StubRng([0.0]))
        assert math.isfinite(v) and v > 0

    def test_support(self):
        assert DistributionSpec.uniform(1, 2).support() == (1, 2)
        assert DistributionSpec.constant(5).support() == (5, 5)
        assert DistributionSpec.exponential(1).support() is None

    @pytest.mark.parametrize(
        "dist",
        [
            DistributionSpec.uniform(2.0, 2.0),
            DistributionSpec.uniform(3.0, 1.0),
            DistributionSpec.exponential(0.0),
            DistributionSpec.exponential(-1.0),
            DistributionSpec("gaussian"),
        ],
    )
    def test_validate_rejects(self, dist):
        with pytest.raises(ConfigError):
            dist.validate("field")


class TestInterarrival:
    def test_inverse_cdf(self):
        # u = 0.5 -> ln 2 / rate, exact
        assert sample_interarrival(StubRng([0.5]), 4.0) == math.log(2.0) / 4.0

    def test_zero_draw_guard(self):
        v = sample_interarrival(StubRng([0.0]), 1.0)
        assert math.isfinite(v) and v > 0

    def test_bad_rate(self):
        with pytest.raises(ValueError):
            sample_interarrival(StubRng([0.5]), 0.0)

    def test_mean_matches_rate(self):
        rng = substream(11, "ia")
        rate = 40.0
        gaps = [sample_interarrival(rng, rate) for _ in range(20_000)]
        assert np.mean(gaps) == pytest.approx(1.0 / rate, rel=0.03)


class TestSampleTask:
    def test_field_order_is_size_intensity_deadline(self):
        cfg = WorkloadConfig()
        stub = StubRng([0.5, 0.25, 1.0 - 2**-53])
        task = sample_task(stub, cfg, arrival_time=1.5, user_id=2, task_id=9)
        assert task.size_bits == 10.0 + (75_000.0 - 10.0) * 0.5
        assert task.intensity_cpb == 10.0 + (1000.0 - 10.0) * 0.25
        assert task.deadline_s == pytest.approx(0.018, rel=1e-12)
        assert (task.task_id, task.user_id, task.arrival_time) == (9, 2, 1.5)


class TestTaskStream:
    def test_deterministic(self):
        cfg = WorkloadConfig()
        a = list(itertools.islice(task_stream(cfg, 5, 1, 4), 20))
        b = list(itertools.islice(task_stream(cfg, 5, 1, 4), 20))
        assert a == b

    def test_users_independent(self):
        cfg = WorkloadConfig()
        alone = list(itertools.islice(task_stream(cfg, 5, 0, 4), 10))
        # drawing user 1 first must not shift user 0's stream
        list(itertools.islice(task_stream(cfg, 5, 1, 4), 10))
        again = list(itertools.islice(task_stream(cfg, 5, 0, 4), 10))
        assert alone == again

    def test_ids_unique_and_interleaved(self):
        cfg = WorkloadConfig()
        ids = [
            t.task_id
            for u in range(3)
            for t in itertools.islice(task_stream(cfg, 5, u, 3), 5)
        ]
        assert len(set(ids)) == 15
        user0_ids = [t.task_id for t in itertools.islice(task_stream(cfg, 5, 0, 3), 4)]
        assert user0_ids == [0, 3, 6, 9]

    def test_arrivals_increase(self):
        cfg = WorkloadConfig()
        times = [t.arrival_time for t in itertools.islice(task_stream(cfg, 5, 0, 1), 50)]
        assert all(b > a for a, b in zip(times, times[1:]))
        assert times[0] > 0.0

    def test_start_time_offset(self):
        cfg = WorkloadConfig()
        base = list(itertools.islice(task_stream(cfg, 5, 0, 1), 5))
        moved = list(itertools.islice(task_stream(cfg, 5, 0, 1, start_time=10.0), 5))
        for a, b in zip(base, moved):
            assert b.arrival_time == pytest.approx(a.arrival_time + 10.0, rel=1e-12)


class TestWorkloadConfig:
    def test_default_bounds_from_supports(self):
        cfg = WorkloadConfig()
        assert cfg.resolved_context_bounds() == (
            (10.0, 75_000.0),
            (10.0, 1000.0),
            (0.010, 0.018),
        )

    def test_unbounded_feature_needs_explicit_bounds(self):
        cfg = WorkloadConfig(size_bits=DistributionSpec.exponential(1000.0))
        with pytest.raises(ConfigError):
            cfg.resolved_context_bounds()
        ok = WorkloadConfig(
            size_bits=DistributionSpec.exponential(1000.0),
            context_bounds=((1.0, 9000.0), (10.0, 1000.0), (0.01, 0.018)),
        )
        assert ok.resolved_context_bounds()[0] == (1.0, 9000.0)

    def test_nonpositive_support_rejected(self):
        cfg = WorkloadConfig(size_bits=DistributionSpec.uniform(0.0, 10.0))
        with pytest.raises(ConfigError):
            cfg.validate()

    def test_bad_rate_rejected(self):
        with pytest.raises(ConfigError):
            WorkloadConfig(arrival_rate_per_s=0.0).validate()


class TestContextScaling:
    def test_midpoint_is_half(self):
        cfg = WorkloadConfig()
        task = make_task(size_bits=37_505.0, intensity_cpb=505.0, deadline_s=0.014)
        x = normalize_context(task, cfg)
        # size and intensity midpoints are exact in binary; the deadline
        # bounds are decimal fractions, so that lane gets a tolerance
        assert x[0] == 0.5 and x[1] == 0.5
        assert x[2] == pytest.approx(0.5, rel=1e-12)

    def test_extremes_and_clamping(self):
        cfg = WorkloadConfig()
        lo = make_task(size_bits=10.0, intensity_cpb=10.0, deadline_s=0.010)
        assert normalize_context(lo, cfg).tolist() == [0.0, 0.0, 0.0]
        wild = make_task(size_bits=1e9, intensity_cpb=1.0, deadline_s=100.0)
        assert normalize_context(wild, cfg).tolist() == [1.0, 0.0, 1.0]

    def test_round_trip(self):
        cfg = WorkloadConfig()
        task = make_task(size_bits=12_345.0, intensity_cpb=678.0, deadline_s=0.0123)
        x = normalize_context(task, cfg)
        s, i, d = denormalize_context(x, cfg)
        assert s == pytest.approx(task.size_bits, rel=1e-12)
        assert i == pytest.approx(task.intensity_cpb, rel=1e-12)
        assert d == pytest.approx(task.deadline_s, rel=1e-12)
