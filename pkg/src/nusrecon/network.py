"""Unrolled reconstruction network: data consistency interleaved with
learnable adaptive soft-thresholding.

Each of the K iterations applies (1) a data-consistency block that
re-imposes the measured time-domain points and (2) a thresholding block
that extracts feature maps with a small convolution, derives one threshold
per channel from the global average of the feature magnitudes, shrinks and
projects back to a complex spectrum. Thresholds are theta = g * alpha with
alpha in (0, 1), so each stays below its channel's mean magnitude.

The layer primitives in this module carry explicit caches and have
hand-written backward companions; the training module composes them into
full reverse-mode gradients.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError
from .ist import ReconProblem, apply_data_consistency
from .signals import ComplexSeries, Domain

IO_CHANNELS = 2
FEATURE_CHANNELS = 32
KERNEL_WIDTH = 3
BN_EPS = 1e-5
BN_MOMENTUM = 0.9


class BnMode(str, enum.Enum):
    TRAIN = "train"
    INFER = "infer"


@dataclass
class LsWeights:
    """Parameters of one thresholding block.

    Kernels are stored (*kw, c_in, c_out); fully-connected matrices are
    (in, out). The batch-norm running statistics are state, not trainable.
    """

    conv1_kernel: np.ndarray
    conv1_bias: np.ndarray
    fc1_weight: np.ndarray
    fc1_bias: np.ndarray
    bn_scale: np.ndarray
    bn_shift: np.ndarray
    bn_running_mean: np.ndarray
    bn_running_var: np.ndarray
    fc2_weight: np.ndarray
    fc2_bias: np.ndarray
    conv2_kernel: np.ndarray
    conv2_bias: np.ndarray

    def validate(self, dims: int, kernel_width: int = KERNEL_WIDTH) -> None:
        kw = (kernel_width,) * dims
        c = self.conv1_kernel.shape[-1]
        shapes = {
            "conv1_kernel": kw + (IO_CHANNELS, c),
            "conv1_bias": (c,),
            "fc1_weight": (c, IO_CHANNELS),
            "fc1_bias": (IO_CHANNELS,),
            "bn_scale": (IO_CHANNELS,),
            "bn_shift": (IO_CHANNELS,),
            "bn_running_mean": (IO_CHANNELS,),
            "bn_running_var": (IO_CHANNELS,),
            "fc2_weight": (IO_CHANNELS, c),
            "fc2_bias": (c,),
            "conv2_kernel": kw + (c, IO_CHANNELS),
            "conv2_bias": (IO_CHANNELS,),
        }
        for name, want in shapes.items():
            arr = getattr(self, name)
            if arr.shape != want:
                raise ValidationError(name, f"shape {arr.shape}, expected {want}")
            if not np.all(np.isfinite(arr)):
                raise ValidationError(name, "contains non-finite entries")
        if np.any(self.bn_running_var < 0):
            raise ValidationError("bn_running_var", "must be nonnegative")

    def copy(self) -> "LsWeights":
        return LsWeights(**{k: v.copy() for k, v in self.__dict__.items()})


PARAM_FIELDS = (
    "conv1_kernel",
    "conv1_bias",
    "fc1_weight",
    "fc1_bias",
    "bn_scale",
    "bn_shift",
    "fc2_weight",
    "fc2_bias",
    "conv2_kernel",
    "conv2_bias",
)


@dataclass
class NetMeta:
    k_iters: int
    dims: int = 1
    kernel_width: int = KERNEL_WIDTH
    trained_density: float | None = None
    ve_trained: bool = True
    non_adaptive: bool = False
    fixed_thetas: np.ndarray | None = None
    extra: dict = field(default_factory=dict)


@dataclass
class ModernWeights:
    """All trainable parameters of the K-iteration unrolled network."""

    blocks: list[LsWeights]
    meta: NetMeta

    def validate(self) -> None:
        if self.meta.k_iters < 1:
            raise ValidationError("k_iters", "must be >= 1")
        if len(self.blocks) != self.meta.k_iters:
            raise ValidationError("blocks", f"{len(self.blocks)} blocks for k_iters={self.meta.k_iters}")
        if self.meta.dims not in (1, 2):
            raise ValidationError("dims", "must be 1 or 2")
        c = self.blocks[0].conv1_kernel.shape[-1]
        for blk in self.blocks:
            blk.validate(self.meta.dims, self.meta.kernel_width)
            if blk.conv1_kernel.shape[-1] != c:
                raise ValidationError("blocks", "inconsistent channel counts across blocks")
        if self.meta.non_adaptive:
            if self.meta.fixed_thetas is None:
                raise ValidationError("fixed_thetas", "required when non_adaptive")
            if self.meta.fixed_thetas.shape != (self.meta.k_iters, c):
                raise ValidationError(
                    "fixed_thetas",
                    f"shape {self.meta.fixed_thetas.shape}, expected {(self.meta.k_iters, c)}",
                )
            if np.any(self.meta.fixed_thetas < 0):
                raise ValidationError("fixed_thetas", "must be nonnegative")
        elif self.meta.fixed_thetas is not None:
            raise ValidationError("fixed_thetas", "only allowed when non_adaptive")

    @property
    def channels(self) -> int:
        return self.blocks[0].conv1_kernel.shape[-1]

    def copy(self) -> "ModernWeights":
        meta = replace(
            self.meta,
            fixed_thetas=None if self.meta.fixed_thetas is None else self.meta.fixed_thetas.copy(),
            extra=dict(self.meta.extra),
        )
        return ModernWeights([b.copy() for b in self.blocks], meta)

    def named_parameters(self):
        """Trainable parameters in a fixed canonical order."""
        for k, blk in enumerate(self.blocks):
            for name in PARAM_FIELDS:
                yield f"blocks.{k}.{name}", getattr(blk, name)
        if self.meta.non_adaptive:
            yield "fixed_thetas", self.meta.fixed_thetas

    def get_parameter(self, path: str) -> np.ndarray:
        if path == "fixed_thetas":
            return self.meta.fixed_thetas
        _, k, name = path.split(".")
        return getattr(self.blocks[int(k)], name)

    def set_parameter(self, path: str, value: np.ndarray) -> None:
        if path == "fixed_thetas":
            self.meta.fixed_thetas = value
            return
        _, k, name = path.split(".")
        setattr(self.blocks[int(k)], name, value)


def zero_gradients(w: ModernWeights) -> dict[str, np.ndarray]:
    """Gradient accumulator shaped like the trainable parameters."""
    return {name: np.zeros_like(arr) for name, arr in w.named_parameters()}


# ---------------------------------------------------------------------------
# layer primitives (batched; feature maps are (B, *spatial, channels))


def _tap_offsets(kw: tuple[int, ...]):
    import itertools

    return list(itertools.product(*(range(k) for k in kw)))


def _tap_slice(offset: tuple[int, ...], spatial: tuple[int, ...]):
    return (slice(None),) + tuple(slice(o, o + s) for o, s in zip(offset, spatial)) + (slice(None),)


def conv_same(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray):
    """Cross-correlation with zero 'same' padding, stride 1 (odd kernels).

    Implemented as a sum of shifted matmuls over the kernel taps, which
    keeps the inner products in BLAS without materializing window views.
    """
    d = kernel.ndim - 2
    kw = kernel.shape[:d]
    spatial = x.shape[1 : 1 + d]
    pad = [(0, 0)] + [((k - 1) // 2, (k - 1) // 2) for k in kw] + [(0, 0)]
    xp = np.pad(x, pad)
    out = np.empty(x.shape[:-1] + (kernel.shape[-1],))
    out[...] = bias
    for off in _tap_offsets(kw):
        out += xp[_tap_slice(off, spatial)] @ kernel[off]
    return out, (xp, kernel, spatial)


def conv_same_backward(g: np.ndarray, cache):
    xp, kernel, spatial = cache
    d = kernel.ndim - 2
    kw = kernel.shape[:d]
    batch_sp = tuple(range(0, d + 1))
    gb = g.sum(axis=batch_sp)
    gk = np.empty_like(kernel)
    gp = np.zeros(g.shape[:1] + xp.shape[1 : 1 + d] + xp.shape[-1:])
    g2 = g.reshape(-1, g.shape[-1])
    for off in _tap_offsets(kw):
        sl = _tap_slice(off, spatial)
        gk[off] = xp[sl].reshape(-1, xp.shape[-1]).T @ g2
        gp[sl] += g @ kernel[off].T
    crop = (slice(None),) + tuple(
        slice((k - 1) // 2, (k - 1) // 2 + s) for k, s in zip(kw, spatial)
    ) + (slice(None),)
    return gp[crop], gk, gb


def batch_norm(z: np.ndarray, blk: LsWeights, mode: BnMode):
    """Normalize (B, F) activations; train mode uses biased batch statistics
    and reports updated running statistics without mutating the block."""
    if mode is BnMode.TRAIN:
        mean = z.mean(axis=0)
        var = z.var(axis=0)
        new_running = (
            BN_MOMENTUM * blk.bn_running_mean + (1.0 - BN_MOMENTUM) * mean,
            BN_MOMENTUM * blk.bn_running_var + (1.0 - BN_MOMENTUM) * var,
        )
    else:
        mean = blk.bn_running_mean
        var = blk.bn_running_var
        new_running = None
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (z - mean) * inv_std
    out = blk.bn_scale * xhat + blk.bn_shift
    return out, (mode, xhat, inv_std, blk.bn_scale), new_running


def batch_norm_backward(g: np.ndarray, cache):
    mode, xhat, inv_std, scale = cache
    gscale = (g * xhat).sum(axis=0)
    gshift = g.sum(axis=0)
    gx = g * scale
    if mode is BnMode.INFER:
        gz = gx * inv_std
    else:
        gz = inv_std * (gx - gx.mean(axis=0) - xhat * (gx * xhat).mean(axis=0))
    return gz, gscale, gshift


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# ---------------------------------------------------------------------------
# thresholding block


@dataclass
class LsCache:
    dims: int
    f1: np.ndarray
    active: np.ndarray
    sign_f1: np.ndarray
    conv1_cache: tuple
    conv2_cache: tuple
    auto: tuple | None  # (gap, z1n, h, alpha, bn_cache) in adaptive mode


def _broadcast_theta(theta: np.ndarray, dims: int) -> np.ndarray:
    if theta.ndim == 1:  # fixed per-channel thresholds
        return theta
    return theta.reshape(theta.shape[:1] + (1,) * dims + theta.shape[1:])


def ls_forward(x_dc: np.ndarray, blk: LsWeights, fixed_theta: np.ndarray | None, bn_mode: BnMode):
    """One thresholding block on a batch of complex spectra (B, *spatial).

    Returns (x_s, theta, cache, new_running_stats); theta is (B, C) in
    adaptive mode, the fixed (C,) vector otherwise.
    """
    dims = x_dc.ndim - 1
    sp_axes = tuple(range(1, 1 + dims))
    c0 = np.stack([x_dc.real, x_dc.imag], axis=-1)
    f1, conv1_cache = conv_same(c0, blk.conv1_kernel, blk.conv1_bias)
    absf1 = np.abs(f1)
    new_running = None
    auto = None
    if fixed_theta is None:
        gap = absf1.mean(axis=sp_axes)
        z1 = gap @ blk.fc1_weight + blk.fc1_bias
        z1n, bn_cache, new_running = batch_norm(z1, blk, bn_mode)
        h = np.maximum(z1n, 0.0)
        z2 = h @ blk.fc2_weight + blk.fc2_bias
        alpha = sigmoid(z2)
        theta = gap * alpha
        auto = (gap, z1n, h, alpha, bn_cache)
    else:
        theta = fixed_theta
    theta_b = _broadcast_theta(theta, dims)
    active = absf1 > theta_b
    sign_f1 = np.sign(f1)
    f2 = sign_f1 * np.maximum(absf1 - theta_b, 0.0)
    out, conv2_cache = conv_same(f2, blk.conv2_kernel, blk.conv2_bias)
    x_s = out[..., 0] + 1j * out[..., 1]
    cache = LsCache(dims, f1, active, sign_f1, conv1_cache, conv2_cache, auto)
    return x_s, theta, cache, new_running


def ls_backward(gx_s: np.ndarray, blk: LsWeights, cache: LsCache):
    """Reverse-mode companion of :func:`ls_forward`.

    Returns (gx_dc, parameter gradients dict, dtheta_fixed); the last is the
    gradient for the block's fixed threshold vector (None in adaptive mode).
    """
    dims = cache.dims
    sp_axes = tuple(range(1, 1 + dims))
    g_out = np.stack([gx_s.real, gx_s.imag], axis=-1)
    df2, gk2, gb2 = conv_same_backward(g_out, cache.conv2_cache)
    df1 = np.where(cache.active, df2, 0.0)
    dtheta_pos = -(cache.sign_f1 * np.where(cache.active, df2, 0.0))
    grads: dict[str, np.ndarray] = {
        "conv2_kernel": gk2,
        "conv2_bias": gb2,
    }
    dtheta_fixed = None
    if cache.auto is not None:
        gap, z1n, h, alpha, bn_cache = cache.auto
        dtheta = dtheta_pos.sum(axis=sp_axes)
        dgap = dtheta * alpha
        dalpha = dtheta * gap
        dz2 = dalpha * alpha * (1.0 - alpha)
        dh = dz2 @ blk.fc2_weight.T
        grads["fc2_weight"] = h.T @ dz2
        grads["fc2_bias"] = dz2.sum(axis=0)
        dz1n = np.where(z1n > 0, dh, 0.0)
        dz1, gscale, gshift = batch_norm_backward(dz1n, bn_cache)
        grads["bn_scale"] = gscale
        grads["bn_shift"] = gshift
        dgap = dgap + dz1 @ blk.fc1_weight.T
        grads["fc1_weight"] = gap.T @ dz1
        grads["fc1_bias"] = dz1.sum(axis=0)
        spatial_size = int(np.prod(cache.f1.shape[1 : 1 + dims]))
        df1 = df1 + cache.sign_f1 * _broadcast_theta(dgap, dims) / spatial_size
    else:
        dtheta_fixed = dtheta_pos.sum(axis=(0,) + sp_axes)
        grads["fc1_weight"] = np.zeros_like(blk.fc1_weight)
        grads["fc1_bias"] = np.zeros_like(blk.fc1_bias)
        grads["bn_scale"] = np.zeros_like(blk.bn_scale)
        grads["bn_shift"] = np.zeros_like(blk.bn_shift)
        grads["fc2_weight"] = np.zeros_like(blk.fc2_weight)
        grads["fc2_bias"] = np.zeros_like(blk.fc2_bias)
    dc0, gk1, gb1 = conv_same_backward(df1, cache.conv1_cache)
    grads["conv1_kernel"] = gk1
    grads["conv1_bias"] = gb1
    gx_dc = dc0[..., 0] + 1j * dc0[..., 1]
    return gx_dc, grads, dtheta_fixed


def threshold_autoset(features: np.ndarray, blk: LsWeights, bn_mode: BnMode = BnMode.INFER) -> np.ndarray:
    """Per-channel thresholds for one feature map (spatial x channels).

    g is the spatial mean of |features| per channel; theta = g * alpha with
    alpha = Sigmoid(fc2(ReLU(BN(fc1(g))))), so 0 <= theta_c < g_c.
    """
    feats = np.asarray(features, dtype=np.float64)[None, ...]
    sp_axes = tuple(range(1, feats.ndim - 1))
    gap = np.abs(feats).mean(axis=sp_axes)
    z1 = gap @ blk.fc1_weight + blk.fc1_bias
    z1n, _, _ = batch_norm(z1, blk, BnMode(bn_mode))
    h = np.maximum(z1n, 0.0)
    alpha = sigmoid(h @ blk.fc2_weight + blk.fc2_bias)
    return (gap * alpha)[0]


# ---------------------------------------------------------------------------
# batched transform helpers


def dft_batch(x: np.ndarray, dims: int) -> np.ndarray:
    if dims == 2:
        return np.fft.fft2(x, axes=(-2, -1), norm="ortho")
    return np.fft.fft(x, axis=-1, norm="ortho")


def idft_batch(x: np.ndarray, dims: int) -> np.ndarray:
    if dims == 2:
        return np.fft.ifft2(x, axes=(-2, -1), norm="ortho")
    return np.fft.ifft(x, axis=-1, norm="ortho")


def dc_batch(x: np.ndarray, y: np.ndarray, mask: np.ndarray, dims: int) -> np.ndarray:
    """Data consistency on a batch: measured time-domain points win."""
    t = idft_batch(x, dims)
    t = np.where(mask, y, t)
    return dft_batch(t, dims)


def dc_batch_backward(g: np.ndarray, mask: np.ndarray, dims: int) -> np.ndarray:
    """Adjoint of the x branch of data consistency: the sampled positions
    contribute nothing, the rest pass through."""
    t = idft_batch(g, dims)
    t = np.where(mask, 0.0, t)
    return dft_batch(t, dims)


# ---------------------------------------------------------------------------
# spec-level surfaces


def data_consistency(x_s: ComplexSeries, p: ReconProblem) -> ComplexSeries:
    """Spectrum after re-imposing the measured points of ``p``.

    Equals x_s + F U^T (y - U F^H x_s).
    """
    if x_s.values.shape != p.y_full.values.shape:
        raise ValidationError("x_s", "shape does not match the problem grid")
    out = apply_data_consistency(x_s.values, p.y_full.values, p.schedule.mask())
    return ComplexSeries(out, Domain.FREQUENCY)


def ls_apply(
    x_dc: ComplexSeries,
    blk: LsWeights,
    fixed_theta: np.ndarray | None = None,
    bn_mode: BnMode = BnMode.INFER,
) -> tuple[ComplexSeries, np.ndarray]:
    """Apply one thresholding block to a single spectrum; returns the block
    output and the thresholds that were used."""
    x = x_dc.values[None, ...]
    x_s, theta, _, _ = ls_forward(x, blk, fixed_theta, BnMode(bn_mode))
    theta = theta if theta.ndim == 1 else theta[0]
    return ComplexSeries(x_s[0], Domain.FREQUENCY), theta


def unrolled_forward(
    y: np.ndarray,
    mask: np.ndarray,
    w: ModernWeights,
    bn_mode: BnMode,
    with_cache: bool = False,
):
    """Run the K iterations on a batch. Returns (outputs per iteration,
    caches or None, per-block running-stat updates or None)."""
    dims = w.meta.dims
    x = dft_batch(y, dims)
    outs = []
    caches = [] if with_cache else None
    runnings = []
    for k in range(w.meta.k_iters):
        x_dc = dc_batch(x, y, mask, dims)
        fixed = w.meta.fixed_thetas[k] if w.meta.non_adaptive else None
        x_s, _, cache, new_running = ls_forward(x_dc, w.blocks[k], fixed, bn_mode)
        if with_cache:
            caches.append(cache)
        runnings.append(new_running)
        outs.append(x_s)
        x = x_s
    return outs, caches, runnings


def _problem_batch(p: ReconProblem) -> tuple[np.ndarray, np.ndarray]:
    return p.y_full.values[None, ...], p.schedule.mask()[None, ...]


def modern_forward(
    p: ReconProblem, w: ModernWeights, bn_mode: BnMode = BnMode.INFER
) -> list[ComplexSeries]:
    """All K iteration outputs for one problem, x0 = F y_full.

    The network is size-agnostic: any grid compatible with the weight
    dimensionality works without retraining.
    """
    dims = 2 if p.schedule.is_plane else 1
    if dims != w.meta.dims:
        raise ValidationError("dims", f"problem is {dims}-D but weights are {w.meta.dims}-D")
    y, mask = _problem_batch(p)
    outs, _, _ = unrolled_forward(y, mask, w, BnMode(bn_mode))
    return [ComplexSeries(o[0], Domain.FREQUENCY) for o in outs]


def modern_reconstruct(
    p: ReconProblem,
    w: ModernWeights,
    bn_mode: BnMode = BnMode.INFER,
    final_dc: bool = True,
) -> ComplexSeries:
    """Final reconstruction: the last iteration output, data-consistent with
    the measured points when ``final_dc`` (default)."""
    outs = modern_forward(p, w, bn_mode)
    x_last = outs[-1]
    if final_dc:
        return data_consistency(x_last, p)
    return x_last


def ist_equivalent_weights(theta0: np.ndarray, k_iters: int, dims: int = 1) -> ModernWeights:
    """Weights that make the network reproduce fixed-threshold separable-real
    IST: identity center-tap convolutions routing the real/imaginary channels
    through features 0 and 1, fixed thresholds theta0 in every block."""
    theta0 = np.asarray(theta0, dtype=np.float64)
    if theta0.ndim != 1:
        raise ValidationError("theta0", "expected a per-channel vector")
    if np.any(theta0 < 0):
        raise ValidationError("theta0", "must be nonnegative")
    c = theta0.shape[0]
    kw = (KERNEL_WIDTH,) * dims
    center = tuple(k // 2 for k in kw)
    blocks = []
    for _ in range(k_iters):
        conv1 = np.zeros(kw + (IO_CHANNELS, c))
        conv2 = np.zeros(kw + (c, IO_CHANNELS))
        conv1[center + (0, 0)] = 1.0
        conv1[center + (1, 1)] = 1.0
        conv2[center + (0, 0)] = 1.0
        conv2[center + (1, 1)] = 1.0
        blocks.append(
            LsWeights(
                conv1_kernel=conv1,
                conv1_bias=np.zeros(c),
                fc1_weight=np.zeros((c, IO_CHANNELS)),
                fc1_bias=np.zeros(IO_CHANNELS),
                bn_scale=np.ones(IO_CHANNELS),
                bn_shift=np.zeros(IO_CHANNELS),
                bn_running_mean=np.zeros(IO_CHANNELS),
                bn_running_var=np.ones(IO_CHANNELS),
                fc2_weight=np.zeros((IO_CHANNELS, c)),
                fc2_bias=np.zeros(c),
                conv2_kernel=conv2,
                conv2_bias=np.zeros(IO_CHANNELS),
            )
        )
    meta = NetMeta(
        k_iters=k_iters,
        dims=dims,
        non_adaptive=True,
        fixed_thetas=np.tile(theta0, (k_iters, 1)),
    )
    w = ModernWeights(blocks, meta)
    w.validate()
    return w
