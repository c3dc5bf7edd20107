"""Complex signal carrier, unitary DFT, virtual echo, soft-thresholding and
synthetic FID generation.

A FID (free induction decay) is modelled as a sum of decaying complex
exponentials sampled on an integer grid; its spectrum is the unitary discrete
Fourier transform. The virtual echo extends a length-N FID to a
Hermitian-symmetric length-2N signal whose spectrum is purely real, which
sparsifies the reconstruction target.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import UnsupportedModeError, ValidationError


class Domain(str, enum.Enum):
    TIME = "time"
    FREQUENCY = "frequency"


@dataclass(frozen=True)
class ComplexSeries:
    """Ordered complex samples in the time or frequency domain.

    ``values`` is a 1-D vector or a 2-D (n1, n2) row-major plane of
    complex128 samples. All samples must be finite and the array non-empty.
    """

    values: np.ndarray
    domain: Domain

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.complex128)
        if arr.ndim not in (1, 2):
            raise ValidationError("values", f"expected 1-D or 2-D data, got ndim={arr.ndim}")
        if arr.size == 0 or min(arr.shape) < 1:
            raise ValidationError("values", "length and plane dims must be >= 1")
        if not np.all(np.isfinite(arr.view(np.float64))):
            raise ValidationError("values", "samples must be finite (no NaN/Inf)")
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "domain", Domain(self.domain))

    @property
    def is_plane(self) -> bool:
        return self.values.ndim == 2

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def __len__(self) -> int:
        return self.values.shape[0] if not self.is_plane else self.values.size


# Default parameter ranges for synthetic peaks. Closed intervals; frequency is
# open at both ends (cycles per sample must stay strictly inside (0, 1)).
@dataclass(frozen=True)
class ParameterRanges:
    amplitude: tuple[float, float] = (0.05, 1.0)
    frequency: tuple[float, float] = (0.0, 1.0)
    decay: tuple[float, float] = (10.0, 179.2)
    phase: tuple[float, float] = (0.0, 2.0 * math.pi)


DEFAULT_RANGES = ParameterRanges()


@dataclass(frozen=True)
class PeakModel:
    """One exponential component: amplitude, frequency (cycles/sample),
    decay constant (samples) and phase (radians)."""

    amplitude: float
    frequency: float
    decay: float
    phase: float

    def validate(self, ranges: ParameterRanges = DEFAULT_RANGES) -> None:
        lo, hi = ranges.amplitude
        if not lo <= self.amplitude <= hi:
            raise ValidationError("amplitude", f"{self.amplitude} outside [{lo}, {hi}]")
        lo, hi = ranges.frequency
        if not lo < self.frequency < hi:
            raise ValidationError("frequency", f"{self.frequency} outside ({lo}, {hi})")
        lo, hi = ranges.decay
        if not lo <= self.decay <= hi:
            raise ValidationError("decay", f"{self.decay} outside [{lo}, {hi}]")
        lo, hi = ranges.phase
        if not lo <= self.phase < hi:
            raise ValidationError("phase", f"{self.phase} outside [{lo}, {hi})")


@dataclass(frozen=True)
class SyntheticSignalSpec:
    """Recipe for a synthetic FID: peaks, length, per-component noise sigma
    and the RNG seed.

    ``ranges`` is the active range set the peaks are validated against;
    pass ``ranges=None`` to accept peaks outside the default ranges.
    """

    peaks: tuple[PeakModel, ...]
    n: int
    noise_sigma: float = 0.0
    seed: int = 0
    ranges: ParameterRanges | None = field(default=DEFAULT_RANGES)

    def __post_init__(self):
        object.__setattr__(self, "peaks", tuple(self.peaks))
        if self.n < 1:
            raise ValidationError("n", f"signal length must be >= 1, got {self.n}")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma", f"must be >= 0, got {self.noise_sigma}")
        if self.ranges is not None:
            for peak in self.peaks:
                peak.validate(self.ranges)


def synthesize_fid(spec: SyntheticSignalSpec) -> ComplexSeries:
    """Generate the time-domain FID described by ``spec``.

    r[n] = sum_j a_j * exp(i phi_j) * exp(-n / tau_j) * exp(2 pi i f_j n)
    for n = 0..N-1, plus complex Gaussian noise with independent real and
    imaginary components of standard deviation ``noise_sigma``, drawn from a
    PCG64 generator seeded with ``spec.seed``.
    """
    n = np.arange(spec.n, dtype=np.float64)
    r = np.zeros(spec.n, dtype=np.complex128)
    for p in spec.peaks:
        r += (
            p.amplitude
            * np.exp(1j * p.phase)
            * np.exp(-n / p.decay)
            * np.exp(2j * np.pi * p.frequency * n)
        )
    if spec.noise_sigma > 0:
        rng = np.random.Generator(np.random.PCG64(spec.seed))
        noise = rng.normal(0.0, spec.noise_sigma, size=(spec.n, 2))
        r += noise[:, 0] + 1j * noise[:, 1]
    return ComplexSeries(r, Domain.TIME)


def unitary_dft(values: np.ndarray) -> np.ndarray:
    """Unitary forward DFT of a raw array (1-D, or separable 2-D plane)."""
    values = np.asarray(values, dtype=np.complex128)
    if values.ndim == 2:
        return np.fft.fft2(values, norm="ortho")
    return np.fft.fft(values, norm="ortho")


def unitary_idft(values: np.ndarray) -> np.ndarray:
    """Unitary inverse DFT; exact inverse of :func:`unitary_dft`."""
    values = np.asarray(values, dtype=np.complex128)
    if values.ndim == 2:
        return np.fft.ifft2(values, norm="ortho")
    return np.fft.ifft(values, norm="ortho")


def dft_forward(x: ComplexSeries) -> ComplexSeries:
    """Unitary DFT: X[k] = (1/sqrt(N)) * sum_n x[n] exp(-2 pi i n k / N).

    Plane inputs are transformed along each axis (separable 2-D DFT).
    """
    if x.domain is not Domain.TIME:
        raise ValidationError("domain", "dft_forward expects a time-domain series")
    return ComplexSeries(unitary_dft(x.values), Domain.FREQUENCY)


def dft_inverse(x: ComplexSeries) -> ComplexSeries:
    if x.domain is not Domain.FREQUENCY:
        raise ValidationError("domain", "dft_inverse expects a frequency-domain series")
    return ComplexSeries(unitary_idft(x.values), Domain.TIME)


def virtual_echo_values(r: np.ndarray) -> np.ndarray:
    """Virtual echo of a raw 1-D time signal: length doubles, output is
    Hermitian-symmetric so its spectrum is real.

    ve[0] = Re(r[0]); ve[n] = r[n] for 1 <= n <= N-1; ve[N] = 0;
    ve[2N - n] = conj(r[n]) for 1 <= n <= N-1.
    """
    r = np.asarray(r, dtype=np.complex128)
    if r.ndim != 1:
        raise UnsupportedModeError("virtual echo applies to 1-D signals only")
    n = r.shape[0]
    ve = np.zeros(2 * n, dtype=np.complex128)
    ve[0] = r[0].real
    if n > 1:
        ve[1:n] = r[1:]
        ve[n + 1 :] = np.conj(r[1:][::-1])
    return ve


def virtual_echo(r: ComplexSeries) -> ComplexSeries:
    if r.domain is not Domain.TIME:
        raise ValidationError("domain", "virtual_echo expects a time-domain series")
    if r.is_plane:
        raise UnsupportedModeError("virtual echo applies to 1-D signals only")
    return ComplexSeries(virtual_echo_values(r.values), Domain.TIME)


class ShrinkMode(str, enum.Enum):
    COMPLEX_MAGNITUDE = "complex_magnitude"
    SEPARABLE_REAL = "separable_real"


def soft_threshold(x: np.ndarray, theta, mode: ShrinkMode = ShrinkMode.COMPLEX_MAGNITUDE) -> np.ndarray:
    """Soft-thresholding (shrinkage) operator.

    ``complex_magnitude`` shrinks the magnitude of each complex sample and
    keeps its phase: y = x * max(|x| - theta, 0) / |x| (y = 0 where x = 0).
    ``separable_real`` shrinks each real component independently:
    y = sign(v) * max(|v| - theta, 0).

    ``theta`` may be a nonnegative scalar or an array broadcastable to ``x``.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if np.any(theta < 0):
        raise ValidationError("theta", "threshold must be nonnegative")
    mode = ShrinkMode(mode)
    if mode is ShrinkMode.COMPLEX_MAGNITUDE:
        x = np.asarray(x, dtype=np.complex128)
        mag = np.abs(x)
        scale = np.zeros_like(mag)
        np.divide(np.maximum(mag - theta, 0.0), mag, out=scale, where=mag > 0)
        return x * scale
    x = np.asarray(x)
    if np.iscomplexobj(x):
        # shrink the real and imaginary channels independently
        return soft_threshold(x.real, theta, mode) + 1j * soft_threshold(x.imag, theta, mode)
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.maximum(np.abs(x) - theta, 0.0)
