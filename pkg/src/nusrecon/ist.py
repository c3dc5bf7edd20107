"""Compressed-sensing reconstruction by iterative soft-thresholding.

The solver alternates a data-consistency step (acquired time-domain points
are re-imposed) with shrinkage of the spectrum, starting from the spectrum
of the zero-filled data. It serves both as the classical baseline and as
the oracle for the unrolled network.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import UnsupportedModeError, ValidationError
from .sampling import Schedule, ve_schedule, zero_fill
from .signals import (
    ComplexSeries,
    Domain,
    ShrinkMode,
    soft_threshold,
    unitary_dft,
    unitary_idft,
    virtual_echo_values,
)


@dataclass(frozen=True)
class ReconProblem:
    """Zero-filled measured signal, its schedule and the virtual-echo flag.

    ``y_full`` lives on the working grid (2n when ``ve``), is zero off the
    sampled set, and ``original_n`` records the pre-VE length.
    """

    y_full: ComplexSeries
    schedule: Schedule
    ve: bool = False
    original_n: int | None = None

    def __post_init__(self):
        grid = self.schedule.grid_n if self.schedule.is_plane else (self.schedule.grid_n,)
        if self.y_full.values.shape != grid:
            raise ValidationError(
                "y_full", f"shape {self.y_full.values.shape} does not match grid {grid}"
            )
        if self.y_full.domain is not Domain.TIME:
            raise ValidationError("y_full", "must be a time-domain series")
        off = ~self.schedule.mask()
        if np.any(self.y_full.values[off] != 0):
            raise ValidationError("y_full", "must be zero off the sampled set")
        if self.ve and self.schedule.is_plane:
            raise UnsupportedModeError("virtual echo is 1-D only")
        if self.original_n is None:
            n = self.schedule.grid_n
            object.__setattr__(self, "original_n", n // 2 if self.ve else n)


def prepare_problem(measured: np.ndarray, s: Schedule, ve: bool = False) -> ReconProblem:
    """Assemble the solver input from compact measured values.

    With ``ve`` the measured points are placed in virtual-echo space: the
    first point contributes its real part at position 0, mirrors carry
    conjugates, and position n is pinned to zero.
    """
    if not ve:
        y = zero_fill(measured, s)
        return ReconProblem(ComplexSeries(y, Domain.TIME), s, ve=False,
                            original_n=None if s.is_plane else s.grid_n)
    if s.is_plane:
        raise UnsupportedModeError("virtual echo is 1-D only")
    n = s.grid_n
    y_ve = virtual_echo_values(zero_fill(measured, s))
    return ReconProblem(ComplexSeries(y_ve, Domain.TIME), ve_schedule(s, n), ve=True, original_n=n)


class ThresholdMode(str, enum.Enum):
    ABSOLUTE = "absolute"
    RELATIVE = "relative"


@dataclass(frozen=True)
class IstConfig:
    """Solver configuration.

    ``relative`` threshold mode starts at ``rho`` times the largest
    magnitude of the initial spectrum and decays geometrically by ``gamma``
    each iteration, which makes the solver scale-invariant. ``absolute``
    mode applies the fixed ``lam`` every iteration.
    """

    max_iters: int = 300
    tol: float = 1e-6
    threshold_mode: ThresholdMode = ThresholdMode.RELATIVE
    lam: float = 0.0
    rho: float = 0.99
    gamma: float = 0.98
    shrinkage: ShrinkMode = ShrinkMode.COMPLEX_MAGNITUDE
    final_dc: bool = True

    def __post_init__(self):
        object.__setattr__(self, "threshold_mode", ThresholdMode(self.threshold_mode))
        object.__setattr__(self, "shrinkage", ShrinkMode(self.shrinkage))
        if self.max_iters < 1:
            raise ValidationError("max_iters", "must be >= 1")
        if not self.tol > 0:
            raise ValidationError("tol", "must be > 0")
        if self.threshold_mode is ThresholdMode.ABSOLUTE and self.lam < 0:
            raise ValidationError("lam", "must be >= 0")
        if self.threshold_mode is ThresholdMode.RELATIVE and not 0 < self.rho <= 1:
            raise ValidationError("rho", "must be in (0, 1]")
        if not 0 < self.gamma <= 1:
            raise ValidationError("gamma", "must be in (0, 1]")


@dataclass
class IstDiagnostics:
    iterations: int
    converged: bool
    residuals: list[float] = field(default_factory=list)
    thresholds: list[float] = field(default_factory=list)
    monotone_after_5: bool = True


def apply_data_consistency(x_spec: np.ndarray, y_full: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Replace the time-domain values at sampled positions with the measured
    data: t = F^H x; t[mask] = y[mask]; return F t.

    Algebraically equal to x + F U^T (y - U F^H x).
    """
    t = unitary_idft(x_spec)
    t = np.where(mask, y_full, t)
    return unitary_dft(t)


def ist_reconstruct(p: ReconProblem, c: IstConfig = IstConfig()) -> tuple[ComplexSeries, IstDiagnostics]:
    """Iterate x <- S_theta(DC(x)) from x0 = F y_full.

    Stops when the relative l2 change drops below ``tol`` or ``max_iters``
    is reached (non-convergence is reported in the diagnostics, not an
    error). With ``final_dc`` a last data-consistency step re-imposes the
    measured points exactly.
    """
    y = p.y_full.values
    mask = p.schedule.mask()
    x = unitary_dft(y)
    if c.threshold_mode is ThresholdMode.RELATIVE:
        theta = c.rho * float(np.max(np.abs(x)))
    else:
        theta = c.lam
    diag = IstDiagnostics(iterations=0, converged=False)
    for it in range(c.max_iters):
        x_new = soft_threshold(apply_data_consistency(x, y, mask), theta, c.shrinkage)
        diag.iterations = it + 1
        diag.thresholds.append(theta)
        residual = float(np.linalg.norm(np.where(mask, y - unitary_idft(x_new), 0.0)))
        diag.residuals.append(residual)
        denom = float(np.linalg.norm(x))
        change = float(np.linalg.norm(x_new - x))
        x = x_new
        if denom == 0.0:
            if change == 0.0:
                diag.converged = True
                break
        elif change / denom < c.tol:
            diag.converged = True
            break
        if c.threshold_mode is ThresholdMode.RELATIVE:
            theta *= c.gamma
    if c.final_dc:
        x = apply_data_consistency(x, y, mask)
    r = np.asarray(diag.residuals[5:])
    if r.size > 1:
        tol = 1e-9 * (diag.residuals[0] + 1e-300)
        diag.monotone_after_5 = bool(np.all(np.diff(r) <= tol))
    return ComplexSeries(x, Domain.FREQUENCY), diag
