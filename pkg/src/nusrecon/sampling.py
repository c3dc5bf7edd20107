"""Non-uniform sampling schedules and the undersampling operators.

A schedule is the set of acquired grid indices on the indirect dimension.
Poisson-gap generation walks the grid with sinusoidally modulated Poisson
gaps (dense early where the decaying signal is strongest), tuning the rate
multiplicatively until the requested sample count is hit exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GenerationError, UnsupportedModeError, ValidationError

POISSON_ALGORITHM = "knuth-product/pcg64"
MAX_TUNING_ROUNDS = 500


def _grid_size(grid_n) -> int:
    if isinstance(grid_n, tuple):
        return grid_n[0] * grid_n[1]
    return int(grid_n)


@dataclass(frozen=True)
class Schedule:
    """Sampled index set over an indirect-dimension grid.

    ``grid_n`` is an int (1-D) or an (n1, n2) pair (plane). Indices are
    strictly increasing (plane: lexicographically sorted pairs, stored as an
    (k, 2) array). ``seed`` records the generator seed, 0 if external.
    """

    grid_n: int | tuple[int, int]
    indices: np.ndarray
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.grid_n, (list, tuple)):
            grid = (int(self.grid_n[0]), int(self.grid_n[1]))
            object.__setattr__(self, "grid_n", grid)
            idx = np.asarray(self.indices, dtype=np.int64).reshape(-1, 2)
            if idx.shape[0] < 1:
                raise ValidationError("indices", "schedule must contain at least one index")
            if np.any(idx < 0) or np.any(idx[:, 0] >= grid[0]) or np.any(idx[:, 1] >= grid[1]):
                raise ValidationError("indices", "index outside grid")
            flat = idx[:, 0] * grid[1] + idx[:, 1]
            if np.any(np.diff(flat) <= 0):
                raise ValidationError("indices", "indices must be lexicographically sorted and unique")
        else:
            grid = int(self.grid_n)
            object.__setattr__(self, "grid_n", grid)
            idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
            if idx.shape[0] < 1:
                raise ValidationError("indices", "schedule must contain at least one index")
            if np.any(idx < 0) or np.any(idx >= grid):
                raise ValidationError("indices", "index outside grid")
            if np.any(np.diff(idx) <= 0):
                raise ValidationError("indices", "indices must be strictly increasing")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @property
    def is_plane(self) -> bool:
        return isinstance(self.grid_n, tuple)

    @property
    def count(self) -> int:
        return self.indices.shape[0]

    @property
    def density(self) -> float:
        return self.count / _grid_size(self.grid_n)

    def flat_indices(self) -> np.ndarray:
        """Row-major flattened indices (identity for 1-D schedules)."""
        if self.is_plane:
            return self.indices[:, 0] * self.grid_n[1] + self.indices[:, 1]
        return self.indices

    def mask(self) -> np.ndarray:
        """Boolean acquisition mask of the grid shape."""
        shape = self.grid_n if self.is_plane else (self.grid_n,)
        m = np.zeros(shape, dtype=bool)
        m.reshape(-1)[self.flat_indices()] = True
        return m


def _poisson_knuth(rng: np.random.Generator, lam: float) -> int:
    """Poisson variate via Knuth's product-of-uniforms method (small lambda)."""
    if lam <= 0.0:
        return 0
    limit = math.exp(-lam)
    k = 0
    p = 1.0
    while True:
        p *= rng.random()
        if p <= limit:
            return k
        k += 1


def _gap_walk(n: int, lam0: float, rng: np.random.Generator) -> np.ndarray:
    """Walk the grid from 0, sampling each landing position and advancing by
    1 + Poisson(lam0 * sin(pi/2 * (i + 0.5) / n))."""
    out = []
    i = 0
    while i < n:
        out.append(i)
        lam = lam0 * math.sin(0.5 * math.pi * (i + 0.5) / n)
        i += 1 + _poisson_knuth(rng, lam)
    return np.asarray(out, dtype=np.int64)


def poisson_gap_schedule(n: int, count: int, seed: int) -> Schedule:
    """Generate a 1-D Poisson-gap schedule with exactly ``count`` samples.

    Gaps follow Poisson(lam0 * sin(pi/2 * (i + 0.5) / n)), so sampling is
    dense early and sparse toward the signal tail. lam0 is tuned by
    multiplicative adjustment (lam0 <- lam0 * achieved / count, fresh
    sub-seed per round) until the achieved count is exact; generation fails
    after 500 rounds. Deterministic given (n, count, seed); index 0 is
    always sampled.
    """
    if not 1 <= count <= n:
        raise ValidationError("count", f"need 1 <= count <= n, got count={count}, n={n}")
    if count == n:
        return Schedule(n, np.arange(n, dtype=np.int64), seed=seed)
    # initial rate from the mean gap, corrected for the sine modulation mean
    lam0 = (n / count - 1.0) * math.pi / 2.0
    for round_idx in range(MAX_TUNING_ROUNDS):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, round_idx])))
        indices = _gap_walk(n, lam0, rng)
        achieved = indices.shape[0]
        if achieved == count:
            return Schedule(n, indices, seed=seed)
        lam0 = max(lam0 * achieved / count, 1e-12)
    raise GenerationError(
        f"poisson-gap tuning failed to reach count={count} on n={n} within "
        f"{MAX_TUNING_ROUNDS} rounds (seed={seed}); retry with a new seed"
    )


def uniform_random_schedule(grid_n, count: int, seed: int) -> Schedule:
    """Uniform random schedule; fallback generator for plane grids.

    Index 0 (or (0, 0)) is always included, matching generated-schedule
    conventions.
    """
    total = _grid_size(grid_n)
    if not 1 <= count <= total:
        raise ValidationError("count", f"need 1 <= count <= grid size, got {count}")
    rng = np.random.Generator(np.random.PCG64(seed))
    rest = rng.choice(total - 1, size=count - 1, replace=False) + 1
    flat = np.sort(np.concatenate([[0], rest]).astype(np.int64))
    if isinstance(grid_n, (list, tuple)):
        pairs = np.stack(np.divmod(flat, grid_n[1]), axis=1)
        return Schedule(tuple(grid_n), pairs, seed=seed)
    return Schedule(int(grid_n), flat, seed=seed)


def extract(values: np.ndarray, s: Schedule) -> np.ndarray:
    """Acquired samples of a full grid signal, in schedule order (y = U r)."""
    values = np.asarray(values)
    expected = s.grid_n if s.is_plane else (s.grid_n,)
    if values.shape != expected:
        raise ValidationError("values", f"shape {values.shape} does not match grid {expected}")
    return values.reshape(-1)[s.flat_indices()].copy()


def zero_fill(measured: np.ndarray, s: Schedule) -> np.ndarray:
    """Scatter compact measured values back onto the grid, zeros elsewhere.

    This realizes U^T y: the zero-filled signal fed to the reconstruction.
    """
    measured = np.asarray(measured, dtype=np.complex128).reshape(-1)
    if measured.shape[0] != s.count:
        raise ValidationError(
            "measured", f"got {measured.shape[0]} values for {s.count} schedule indices"
        )
    shape = s.grid_n if s.is_plane else (s.grid_n,)
    full = np.zeros(shape, dtype=np.complex128)
    full.reshape(-1)[s.flat_indices()] = measured
    return full


def subsample_schedule(s: Schedule, keep_count: int, seed: int) -> Schedule:
    """Uniform random subset of an existing schedule (retrospective NUS).

    Keeps exactly ``keep_count`` indices; the anchor index 0 is always
    retained when present. Deterministic given ``seed``.
    """
    if keep_count < 1:
        raise ValidationError("keep_count", "must be >= 1")
    if keep_count > s.count:
        raise ValidationError("keep_count", f"{keep_count} exceeds schedule size {s.count}")
    if keep_count == s.count:
        return Schedule(s.grid_n, s.indices, seed=s.seed)
    flat = s.flat_indices()
    rng = np.random.Generator(np.random.PCG64(seed))
    if flat[0] == 0:
        chosen = rng.choice(s.count - 1, size=keep_count - 1, replace=False) + 1
        keep = np.sort(np.concatenate([[0], chosen]))
    else:
        keep = np.sort(rng.choice(s.count, size=keep_count, replace=False))
    if s.is_plane:
        return Schedule(s.grid_n, s.indices[keep], seed=seed)
    return Schedule(s.grid_n, flat[keep], seed=seed)


def ve_schedule(s: Schedule, n: int) -> Schedule:
    """Map a 1-D schedule on grid n into virtual-echo space (grid 2n).

    indices = {k in s} union {2n - k : k in s, k > 0} union {n}. Position n
    is zero by construction of the virtual echo; position 0 carries the real
    part of the first point.
    """
    if s.is_plane:
        raise UnsupportedModeError("virtual-echo schedules apply to 1-D grids only")
    if s.grid_n != n:
        raise ValidationError("n", f"schedule grid {s.grid_n} does not match n={n}")
    idx = s.indices
    mirrored = 2 * n - idx[idx > 0]
    combined = np.unique(np.concatenate([idx, mirrored, [n]]))
    return Schedule(2 * n, combined.astype(np.int64), seed=s.seed)
