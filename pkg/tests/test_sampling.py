import itertools

import numpy as np
import pytest

from nusrecon.errors import UnsupportedModeError, ValidationError
from nusrecon.sampling import (
    Schedule,
    extract,
    poisson_gap_schedule,
    subsample_schedule,
    uniform_random_schedule,
    ve_schedule,
    zero_fill,
)


class TestSchedule:
    def test_rejects_duplicates(self):
        with pytest.raises(ValidationError):
            Schedule(8, [0, 1, 1, 3])

    def test_rejects_unsorted(self):
        with pytest.raises(ValidationError):
            Schedule(8, [0, 3, 1])

    def test_rejects_out_of_range(self):
        with pytest.raises(ValidationError):
            Schedule(8, [0, 8])

    def test_density_exact(self):
        s = Schedule(8, [0, 2, 5, 7])
        assert s.density == 4 / 8

    def test_plane_sorted_pairs(self):
        s = Schedule((3, 4), [[0, 0], [0, 2], [1, 1], [2, 3]])
        assert s.is_plane and s.count == 4
        with pytest.raises(ValidationError):
            Schedule((3, 4), [[0, 2], [0, 0]])

    def test_mask_roundtrip(self):
        s = Schedule(6, [0, 1, 4])
        assert s.mask().tolist() == [True, True, False, False, True, False]


class TestPoissonGap:
    def test_full_count_is_all_indices(self):
        s = poisson_gap_schedule(16, 16, seed=3)
        np.testing.assert_array_equal(s.indices, np.arange(16))

    def test_deterministic(self):
        a = poisson_gap_schedule(64, 16, seed=7)
        b = poisson_gap_schedule(64, 16, seed=7)
        np.testing.assert_array_equal(a.indices, b.indices)

    def test_exact_count_many_cases(self):
        rng = np.random.Generator(np.random.PCG64(5))
        for _ in range(40):
            n = int(rng.integers(16, 400))
            count = int(rng.integers(1, n + 1))
            seed = int(rng.integers(0, 2**32))
            s = poisson_gap_schedule(n, count, seed)
            assert s.count == count
            assert s.indices[0] == 0

    def test_early_density_skew(self):
        # gaps grow toward the tail, so the mean sampled index sits well
        # below the grid midpoint in nearly all trials
        hits = 0
        for seed in range(100):
            s = poisson_gap_schedule(256, 64, seed)
            if float(np.mean(s.indices)) < 128:
                hits += 1
        assert hits >= 95

    def test_bad_count(self):
        with pytest.raises(ValidationError):
            poisson_gap_schedule(8, 0, seed=1)
        with pytest.raises(ValidationError):
            poisson_gap_schedule(8, 9, seed=1)


class TestZeroFillExtract:
    def test_zero_fill_places_values(self):
        s = Schedule(4, [2])
        np.testing.assert_array_equal(zero_fill([5], s), [0, 0, 5, 0])

    def test_full_schedule_identity(self, rng):
        s = Schedule(8, np.arange(8))
        x = rng.normal(size=8) + 1j * rng.normal(size=8)
        np.testing.assert_array_equal(zero_fill(extract(x, s), s), x)

    def test_roundtrip_on_sampled_set(self, rng):
        x = rng.normal(size=32) + 1j * rng.normal(size=32)
        s = poisson_gap_schedule(32, 12, seed=11)
        zf = zero_fill(extract(x, s), s)
        np.testing.assert_array_equal(zf[s.indices], x[s.indices])
        off = np.setdiff1d(np.arange(32), s.indices)
        assert np.all(zf[off] == 0)

    def test_projector_idempotent(self, rng):
        x = rng.normal(size=24) + 1j * rng.normal(size=24)
        s = poisson_gap_schedule(24, 9, seed=2)
        once = zero_fill(extract(x, s), s)
        twice = zero_fill(extract(once, s), s)
        np.testing.assert_array_equal(once, twice)

    def test_plane_extract(self, rng):
        x = rng.normal(size=(4, 5)) + 1j * rng.normal(size=(4, 5))
        s = Schedule((4, 5), [[0, 0], [1, 3], [3, 4]])
        vals = extract(x, s)
        np.testing.assert_array_equal(vals, [x[0, 0], x[1, 3], x[3, 4]])
        zf = zero_fill(vals, s)
        assert zf.shape == (4, 5)
        np.testing.assert_array_equal(zf[s.mask()], vals)

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            zero_fill([1, 2], Schedule(4, [0]))
        with pytest.raises(ValidationError):
            extract(np.zeros(5), Schedule(4, [0]))


class TestSubsample:
    def test_keep_all_unchanged(self):
        s = poisson_gap_schedule(30, 12, seed=1)
        out = subsample_schedule(s, 12, seed=9)
        np.testing.assert_array_equal(out.indices, s.indices)

    def test_cardinality_and_subset(self):
        s = poisson_gap_schedule(90, 30, seed=1)
        out = subsample_schedule(s, 10, seed=4)
        assert out.count == 10
        assert set(out.indices).issubset(set(s.indices))
        assert 0 in out.indices  # anchor retained

    def test_keep_zero_rejected(self):
        s = poisson_gap_schedule(30, 10, seed=1)
        with pytest.raises(ValidationError):
            subsample_schedule(s, 0, seed=4)

    def test_kept_frequency_distribution(self):
        s = poisson_gap_schedule(90, 30, seed=1)
        keep = 10
        counts = {int(i): 0 for i in s.indices}
        trials = 1000
        for seed in range(trials):
            out = subsample_schedule(s, keep, seed=seed)
            for i in out.indices:
                counts[int(i)] += 1
        # anchor always kept; the rest drawn uniformly
        assert counts[0] == trials
        expected = (keep - 1) / (s.count - 1)
        for idx, c in counts.items():
            if idx == 0:
                continue
            assert abs(c / trials - expected) < 0.05


class TestVeSchedule:
    def test_anchor_only(self):
        s = Schedule(4, [0])
        np.testing.assert_array_equal(ve_schedule(s, 4).indices, [0, 4])

    def test_mirror_formula(self):
        s = Schedule(4, [0, 1, 3])
        np.testing.assert_array_equal(ve_schedule(s, 4).indices, [0, 1, 3, 4, 5, 7])

    def test_exhaustive_cardinality_small_grids(self):
        # |ve| = 2|s| - [0 in s] + 1 - (mirror collisions); on a 1-D grid the
        # only possible collision is k = n (absent: k < n), so the formula is
        # exact and verified exhaustively
        for n in range(1, 9):
            for r in range(1, n + 1):
                for combo in itertools.combinations(range(n), r):
                    s = Schedule(n, list(combo))
                    out = ve_schedule(s, n)
                    expected = 2 * len(combo) - (1 if 0 in combo else 0) + 1
                    assert out.count == expected

    def test_symmetric_under_mirror(self):
        s = poisson_gap_schedule(32, 10, seed=3)
        out = ve_schedule(s, 32)
        mirror = np.sort((2 * 32 - out.indices) % (2 * 32))
        np.testing.assert_array_equal(np.sort(out.indices), mirror)

    def test_plane_rejected(self):
        with pytest.raises(UnsupportedModeError):
            ve_schedule(Schedule((2, 2), [[0, 0]]), 2)


class TestUniformRandom:
    def test_plane_generation(self):
        s = uniform_random_schedule((8, 8), 16, seed=5)
        assert s.is_plane and s.count == 16
        assert s.indices[0].tolist() == [0, 0]

    def test_deterministic(self):
        a = uniform_random_schedule(64, 16, seed=5)
        b = uniform_random_schedule(64, 16, seed=5)
        np.testing.assert_array_equal(a.indices, b.indices)
