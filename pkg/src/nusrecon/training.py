"""Training pipeline for the unrolled network.

Synthetic signal pairs, deep-supervision loss over all K iteration outputs,
hand-written reverse-mode gradients through the whole unrolled pipeline,
He initialization, Adam, and the epoch loop with RLNE monitoring.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import TrainingError, ValidationError
from .ist import ReconProblem, prepare_problem
from .network import (
    IO_CHANNELS,
    KERNEL_WIDTH,
    BnMode,
    LsWeights,
    ModernWeights,
    NetMeta,
    dc_batch,
    dc_batch_backward,
    ls_backward,
    unrolled_forward,
    zero_gradients,
)
from .sampling import extract, poisson_gap_schedule
from .signals import (
    ComplexSeries,
    Domain,
    PeakModel,
    SyntheticSignalSpec,
    synthesize_fid,
    unitary_dft,
    virtual_echo_values,
)

FIXED_THETA_INIT = 0.01


@dataclass(frozen=True)
class DatasetSpec:
    """Synthetic dataset recipe: peak parameter ranges, grid, NUS density.

    Defaults are desk scale; the full-size runs are reached by raising
    ``q_total`` and ``epochs`` in the train config.
    """

    q_total: int = 4000
    n: int = 128
    peaks_range: tuple[int, int] = (1, 10)
    amplitude_range: tuple[float, float] = (0.05, 1.0)
    frequency_range: tuple[float, float] = (0.01, 0.99)
    decay_range: tuple[float, float] = (10.0, 179.2)
    phase_range: tuple[float, float] = (0.0, 2.0 * math.pi)
    noise_sigma: float = 1e-4
    density: float = 0.25
    ve: bool = True
    split: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.q_total < 1:
            raise ValidationError("q_total", "must be >= 1")
        if self.n < 8:
            raise ValidationError("n", "must be >= 8")
        if not 0 < self.density <= 1:
            raise ValidationError("density", "must be in (0, 1]")
        if not 0 < self.split < 1:
            raise ValidationError("split", "must be in (0, 1)")
        for name in ("peaks_range", "amplitude_range", "frequency_range", "decay_range", "phase_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValidationError(name, "empty range")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma", "must be >= 0")


@dataclass
class Dataset:
    """Sample pairs in batched array form: zero-filled inputs, acquisition
    masks and label spectra all on the working grid."""

    y_full: np.ndarray  # (Q, G) complex
    mask: np.ndarray  # (Q, G) bool
    labels: np.ndarray  # (Q, G) complex
    ve: bool
    original_n: int

    def __len__(self) -> int:
        return self.y_full.shape[0]

    @property
    def grid_n(self) -> int:
        return self.y_full.shape[1]

    def pair(self, i: int) -> tuple[ReconProblem, ComplexSeries]:
        """Materialize sample ``i`` as a (problem, label) pair."""
        from .sampling import Schedule

        idx = np.flatnonzero(self.mask[i])
        schedule = Schedule(self.grid_n, idx)
        problem = ReconProblem(
            ComplexSeries(self.y_full[i], Domain.TIME), schedule, ve=self.ve, original_n=self.original_n
        )
        return problem, ComplexSeries(self.labels[i], Domain.FREQUENCY)


@dataclass
class DatasetSplit:
    train: Dataset
    valid: Dataset
    spec: DatasetSpec


def draw_sample_params(spec: DatasetSpec, q: int):
    """Peak set and sub-seeds for sample ``q``, deterministic in the spec."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed, q])))
    j = int(rng.integers(spec.peaks_range[0], spec.peaks_range[1] + 1))
    peaks = tuple(
        PeakModel(
            amplitude=float(rng.uniform(*spec.amplitude_range)),
            frequency=float(rng.uniform(*spec.frequency_range)),
            decay=float(rng.uniform(*spec.decay_range)),
            phase=float(rng.uniform(*spec.phase_range)),
        )
        for _ in range(j)
    )
    fid_seed = int(rng.integers(0, 2**63 - 1))
    sched_seed = int(rng.integers(0, 2**63 - 1))
    return peaks, fid_seed, sched_seed


def _draw_sample(spec: DatasetSpec, q: int):
    peaks, fid_seed, sched_seed = draw_sample_params(spec, q)
    sig = SyntheticSignalSpec(peaks, spec.n, noise_sigma=spec.noise_sigma, seed=fid_seed, ranges=None)
    r = synthesize_fid(sig).values
    count = max(1, int(round(spec.density * spec.n)))
    schedule = poisson_gap_schedule(spec.n, count, sched_seed)
    return r, schedule


def generate_dataset(spec: DatasetSpec) -> DatasetSplit:
    """Draw ``q_total`` (undersampled input, fully sampled spectrum) pairs.

    Every sample gets its own peaks, noise and a fresh sampling schedule;
    everything is deterministic in ``spec.seed``. Labels are the spectra of
    the noisy fully sampled FIDs (virtual-echo space when ``ve``).
    """
    grid = 2 * spec.n if spec.ve else spec.n
    q = spec.q_total
    y_full = np.zeros((q, grid), dtype=np.complex128)
    mask = np.zeros((q, grid), dtype=bool)
    labels = np.zeros((q, grid), dtype=np.complex128)
    for i in range(q):
        r, schedule = _draw_sample(spec, i)
        problem = prepare_problem(extract(r, schedule), schedule, ve=spec.ve)
        y_full[i] = problem.y_full.values
        mask[i] = problem.schedule.mask()
        full = virtual_echo_values(r) if spec.ve else r
        labels[i] = unitary_dft(full)
    n_train = int(round(spec.split * q))
    n_train = min(max(n_train, 1), q - 1) if q > 1 else 1
    def make(sl):
        return Dataset(y_full[sl], mask[sl], labels[sl], ve=spec.ve, original_n=spec.n)

    return DatasetSplit(train=make(slice(0, n_train)), valid=make(slice(n_train, q)), spec=spec)


def deep_supervision_loss(outputs: list[np.ndarray], x_ref: np.ndarray) -> float:
    """Mean over iterations and batch of the squared l2 residual:
    L = (1 / (K B)) * sum_k sum_b ||x_ref - x_k||^2.

    1-D references are a single sample; otherwise the leading axis is the
    batch (plane samples must carry an explicit batch axis).
    """
    if len(outputs) < 1:
        raise ValidationError("outputs", "need at least one iteration output")
    ref = np.asarray(x_ref)
    total = 0.0
    for out in outputs:
        out = np.asarray(out)
        if out.shape != ref.shape:
            raise ValidationError("outputs", f"shape {out.shape} does not match reference {ref.shape}")
        diff = ref - out
        total += float(np.sum(diff.real**2 + diff.imag**2))
    k = len(outputs)
    batch = 1 if ref.ndim == 1 else ref.shape[0]
    return total / (k * batch)


def grad(
    w: ModernWeights,
    batch: tuple[np.ndarray, np.ndarray, np.ndarray],
    bn_mode: BnMode = BnMode.TRAIN,
    tied: bool = False,
):
    """Loss and exact reverse-mode gradients for one minibatch.

    ``batch`` is (y_full, mask, labels) with a leading batch axis. With
    ``tied`` the per-block gradients are summed into block 0's slots, the
    chain rule for weights shared across iterations.
    """
    y, mask, ref = batch
    if y.shape[0] < 1:
        raise ValidationError("batch", "batch must be nonempty")
    outs, caches, runnings = unrolled_forward(y, mask, w, bn_mode, with_cache=True)
    k_iters = w.meta.k_iters
    b = y.shape[0]
    loss = deep_supervision_loss(outs, ref)
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite loss {loss}")
    coef = 2.0 / (k_iters * b)
    grads = zero_gradients(w)
    dims = w.meta.dims
    g_next = np.zeros_like(outs[-1])
    for k in reversed(range(k_iters)):
        gx = coef * (outs[k] - ref) + g_next
        gx_dc, block_grads, dtheta_fixed = ls_backward(gx, w.blocks[k], caches[k])
        slot = 0 if tied else k
        for name, val in block_grads.items():
            grads[f"blocks.{slot}.{name}"] += val
        if dtheta_fixed is not None:
            grads["fixed_thetas"][slot] += dtheta_fixed
        g_next = dc_batch_backward(gx_dc, mask, dims)
    return loss, grads, runnings


def he_init(shape: tuple[int, ...], fan_in: int, rng: np.random.Generator) -> np.ndarray:
    """Normal(0, sqrt(2 / fan_in)) weights."""
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)


def init_weights(
    k_iters: int = 10,
    dims: int = 1,
    channels: int = 32,
    seed: int = 0,
    non_adaptive: bool = False,
    trained_density: float | None = None,
    ve_trained: bool = True,
) -> ModernWeights:
    """He-initialized network: biases zero, batch norm at identity, fixed
    thresholds (ablation mode) at a small positive constant."""
    rng = np.random.Generator(np.random.PCG64(seed))
    kw = (KERNEL_WIDTH,) * dims
    kernel_taps = int(np.prod(kw))
    blocks = []
    for _ in range(k_iters):
        blocks.append(
            LsWeights(
                conv1_kernel=he_init(kw + (IO_CHANNELS, channels), kernel_taps * IO_CHANNELS, rng),
                conv1_bias=np.zeros(channels),
                fc1_weight=he_init((channels, IO_CHANNELS), channels, rng),
                fc1_bias=np.zeros(IO_CHANNELS),
                bn_scale=np.ones(IO_CHANNELS),
                bn_shift=np.zeros(IO_CHANNELS),
                bn_running_mean=np.zeros(IO_CHANNELS),
                bn_running_var=np.ones(IO_CHANNELS),
                fc2_weight=he_init((IO_CHANNELS, channels), IO_CHANNELS, rng),
                fc2_bias=np.zeros(channels),
                conv2_kernel=he_init(kw + (channels, IO_CHANNELS), kernel_taps * channels, rng),
                conv2_bias=np.zeros(IO_CHANNELS),
            )
        )
    meta = NetMeta(
        k_iters=k_iters,
        dims=dims,
        non_adaptive=non_adaptive,
        fixed_thetas=np.full((k_iters, channels), FIXED_THETA_INIT) if non_adaptive else None,
        trained_density=trained_density,
        ve_trained=ve_trained,
    )
    w = ModernWeights(blocks, meta)
    w.validate()
    return w


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_weights(cls, w: ModernWeights) -> "AdamState":
        return cls(m=zero_gradients(w), v=zero_gradients(w))


def adam_step(
    w: ModernWeights,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Standard bias-corrected Adam update, in place on ``w``."""
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for name, param in w.named_parameters():
        g = grads[name]
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g**2
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        w.set_parameter(name, param - lr * m_hat / (np.sqrt(v_hat) + eps))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch: int = 10
    lr0: float = 0.001
    lr_decay: float = 0.95
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    k_iters: int = 10
    tied: bool = False
    non_adaptive: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError("epochs", "must be >= 1")
        if self.batch < 1:
            raise ValidationError("batch", "must be >= 1")
        if not self.lr0 > 0:
            raise ValidationError("lr0", "must be > 0")
        if not 0 < self.lr_decay <= 1:
            raise ValidationError("lr_decay", "must be in (0, 1]")


@dataclass
class EpochStats:
    epoch: int
    train_rlne: float
    valid_rlne: float
    lr: float


@dataclass
class TrainHistory:
    initial_valid_rlne: float
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0


def _apply_running(w: ModernWeights, runnings) -> None:
    for blk, upd in zip(w.blocks, runnings):
        if upd is not None:
            blk.bn_running_mean, blk.bn_running_var = upd


def _sample_norms(a: np.ndarray) -> np.ndarray:
    return np.linalg.norm(a.reshape(a.shape[0], -1), axis=1)


def evaluate_rlne(w: ModernWeights, ds: Dataset, chunk: int = 256, final_dc: bool = True) -> np.ndarray:
    """Per-sample RLNE of the final reconstruction over a dataset, computed
    with inference-mode batch norm."""
    out = np.zeros(len(ds))
    for start in range(0, len(ds), chunk):
        sl = slice(start, min(start + chunk, len(ds)))
        y, mask, ref = ds.y_full[sl], ds.mask[sl], ds.labels[sl]
        outs, _, _ = unrolled_forward(y, mask, w, BnMode.INFER)
        x = outs[-1]
        if final_dc:
            x = dc_batch(x, y, mask, w.meta.dims)
        out[sl] = _sample_norms(x - ref) / _sample_norms(ref)
    return out


def baseline_rlne(ds: Dataset) -> np.ndarray:
    """RLNE of the zero-filled spectrum x0 = F y_full per sample."""
    from .network import dft_batch

    x0 = dft_batch(ds.y_full, 1)
    return _sample_norms(x0 - ds.labels) / _sample_norms(ds.labels)


def _tied_broadcast(w: ModernWeights) -> None:
    for k in range(1, len(w.blocks)):
        w.blocks[k] = w.blocks[0].copy()
    if w.meta.non_adaptive:
        w.meta.fixed_thetas[1:] = w.meta.fixed_thetas[0]


def train(
    data: DatasetSplit | tuple[Dataset, Dataset],
    cfg: TrainConfig,
    init: ModernWeights | None = None,
    log=None,
) -> tuple[ModernWeights, TrainHistory]:
    """Minibatch Adam training with per-epoch exponential lr decay.

    Shuffling, initialization and batching are all seeded; single-threaded
    runs are bit-for-bit reproducible. Returns the weights of the epoch with
    the best validation RLNE plus the full history.
    """
    if isinstance(data, DatasetSplit):
        train_ds, valid_ds = data.train, data.valid
        density = data.spec.density
        ve = data.spec.ve
    else:
        train_ds, valid_ds = data
        density = None
        ve = train_ds.ve
    if len(train_ds) < 1:
        raise ValidationError("dataset", "training split is empty")
    w = init.copy() if init is not None else init_weights(
        k_iters=cfg.k_iters,
        dims=1,
        seed=cfg.seed,
        non_adaptive=cfg.non_adaptive,
        trained_density=density,
        ve_trained=ve,
    )
    w.meta.trained_density = density
    w.meta.ve_trained = ve
    state = AdamState.for_weights(w)
    shuffle_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 0xD0])))
    history = TrainHistory(initial_valid_rlne=float(np.mean(evaluate_rlne(w, valid_ds))))
    best_rlne = math.inf
    best_weights = w.copy()
    for epoch in range(cfg.epochs):
        lr = cfg.lr0 * cfg.lr_decay**epoch
        order = shuffle_rng.permutation(len(train_ds))
        for start in range(0, len(order), cfg.batch):
            idx = order[start : start + cfg.batch]
            batch = (train_ds.y_full[idx], train_ds.mask[idx], train_ds.labels[idx])
            try:
                loss, grads, runnings = grad(w, batch, BnMode.TRAIN, tied=cfg.tied)
            except TrainingError as exc:
                raise TrainingError(f"epoch {epoch}, batch at {start}: {exc}") from exc
            _apply_running(w, runnings)
            adam_step(w, grads, state, lr, cfg.beta1, cfg.beta2, cfg.eps)
            if cfg.tied:
                _tied_broadcast(w)
            if cfg.non_adaptive:
                np.maximum(w.meta.fixed_thetas, 0.0, out=w.meta.fixed_thetas)
        train_rlne = float(np.mean(evaluate_rlne(w, train_ds)))
        valid_rlne = float(np.mean(evaluate_rlne(w, valid_ds)))
        history.epochs.append(EpochStats(epoch + 1, train_rlne, valid_rlne, lr))
        if valid_rlne < best_rlne:
            best_rlne = valid_rlne
            best_weights = w.copy()
            history.best_epoch = epoch + 1
        if log is not None:
            log(f"epoch {epoch + 1:3d}  train_rlne {train_rlne:.4f}  valid_rlne {valid_rlne:.4f}  lr {lr:.2e}")
    return best_weights, history
