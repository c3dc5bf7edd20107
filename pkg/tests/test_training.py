import numpy as np
import pytest

from nusrecon.errors import TrainingError, ValidationError
from nusrecon.network import BnMode, FEATURE_CHANNELS, ist_equivalent_weights
from nusrecon.training import (
    AdamState,
    DatasetSpec,
    TrainConfig,
    adam_step,
    baseline_rlne,
    deep_supervision_loss,
    draw_sample_params,
    evaluate_rlne,
    generate_dataset,
    grad,
    he_init,
    init_weights,
    train,
)


def tiny_dataset(q=12, n=32, density=0.5, seed=0, ve=True):
    return generate_dataset(DatasetSpec(q_total=q, n=n, density=density, seed=seed, ve=ve))


def batch_of(ds, idx):
    idx = np.asarray(idx)
    return ds.y_full[idx], ds.mask[idx], ds.labels[idx]


class TestGenerateDataset:
    def test_split_counts(self):
        split = tiny_dataset(q=10)
        assert len(split.train) == 9 and len(split.valid) == 1

    def test_deterministic(self):
        a = tiny_dataset(seed=5)
        b = tiny_dataset(seed=5)
        np.testing.assert_array_equal(a.train.y_full, b.train.y_full)
        np.testing.assert_array_equal(a.valid.labels, b.valid.labels)

    def test_parameter_draws_within_ranges(self):
        # 10^4 draws of the peak parameters stay inside the configured table
        spec = DatasetSpec(q_total=1, seed=123)
        n_draws = 0
        q = 0
        while n_draws < 10_000:
            peaks, _, _ = draw_sample_params(spec, q)
            for p in peaks:
                assert 0.05 <= p.amplitude <= 1.0
                assert 0.01 <= p.frequency <= 0.99
                assert 10.0 <= p.decay <= 179.2
                assert 0.0 <= p.phase <= 2 * np.pi
                n_draws += 1
            assert 1 <= len(peaks) <= 10
            q += 1

    def test_ve_grid_and_masks(self):
        split = tiny_dataset(n=32, ve=True)
        assert split.train.grid_n == 64
        # zero off the sampled set
        assert np.all(split.train.y_full[~split.train.mask] == 0)

    def test_pair_materialization(self):
        split = tiny_dataset()
        problem, label = split.train.pair(0)
        assert problem.ve and problem.original_n == 32
        np.testing.assert_array_equal(problem.y_full.values, split.train.y_full[0])


class TestDeepSupervisionLoss:
    def test_zero_when_equal(self, rng):
        ref = rng.normal(size=(2, 8)) + 1j * rng.normal(size=(2, 8))
        assert deep_supervision_loss([ref.copy(), ref.copy()], ref) == 0

    def test_single_entry_case(self):
        ref = np.array([1.0 + 0j, 0.0])
        assert deep_supervision_loss([np.zeros(2, dtype=complex)], ref) == pytest.approx(1.0)

    def test_matches_scratch_recomputation(self, rng):
        k, b, n = 3, 4, 16
        ref = rng.normal(size=(b, n)) + 1j * rng.normal(size=(b, n))
        outs = [rng.normal(size=(b, n)) + 1j * rng.normal(size=(b, n)) for _ in range(k)]
        total = 0.0
        for out in outs:
            for q in range(b):
                d = ref[q] - out[q]
                total += float(np.sum(d.real**2) + np.sum(d.imag**2))
        want = total / (k * b)
        assert deep_supervision_loss(outs, ref) == pytest.approx(want, rel=1e-12)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValidationError):
            deep_supervision_loss([np.zeros((2, 4), dtype=complex)], np.zeros((2, 5), dtype=complex))


def relative_gradient_errors(w, batch, bn_mode=BnMode.TRAIN, h_scale=1e-4, max_entries=6):
    """Central finite differences vs analytic gradients, per parameter.

    The 1e-6 denominator floor keeps directions whose true gradient is zero
    (e.g. per-feature fc1 bias shifts, absorbed exactly by train-mode batch
    norm) from dividing finite-difference noise by itself; it sits four
    orders above the FD noise floor. ``max_entries=None`` sweeps every
    entry of every parameter.
    """
    _, grads, _ = grad(w, batch, bn_mode)
    rng = np.random.Generator(np.random.PCG64(7))
    worst = {}
    for name, param in w.named_parameters():
        g = grads[name]
        flat = param.reshape(-1)
        if max_entries is None or flat.size <= max_entries:
            picks = np.arange(flat.size)
        else:
            picks = rng.choice(flat.size, size=max_entries, replace=False)
        err = 0.0
        for idx in picks:
            old = flat[idx]
            h = h_scale * max(1.0, abs(old))
            flat[idx] = old + h
            up, _, _ = grad(w, batch, bn_mode)
            flat[idx] = old - h
            dn, _, _ = grad(w, batch, bn_mode)
            flat[idx] = old
            fd = (up - dn) / (2 * h)
            a = g.reshape(-1)[idx]
            err = max(err, abs(a - fd) / max(abs(a), abs(fd), 1e-6))
        worst[name] = err
    return worst


class TestGrad:
    def test_zero_residual_zero_gradients(self):
        w = ist_equivalent_weights(np.zeros(FEATURE_CHANNELS), k_iters=2)
        y = np.zeros((2, 16), dtype=complex)
        mask = np.zeros((2, 16), dtype=bool)
        mask[:, :4] = True
        ref = np.zeros((2, 16), dtype=complex)
        loss, grads, _ = grad(w, (y, mask, ref))
        assert loss == 0
        for g in grads.values():
            assert np.all(g == 0)

    def test_finite_differences_adaptive(self):
        # seeds picked for healthy soft-threshold/ReLU/abs margins so the
        # finite-difference steps stay on one side of every kink
        split = tiny_dataset(q=6, n=8, density=0.5, seed=3, ve=False)
        w = init_weights(k_iters=2, seed=3)
        batch = batch_of(split.train, [0, 1, 2])
        worst = relative_gradient_errors(w, batch)
        for name, err in worst.items():
            assert err <= 1e-4, f"{name}: rel err {err}"

    def test_finite_differences_non_adaptive(self):
        split = tiny_dataset(q=6, n=8, density=0.5, seed=4, ve=False)
        w = init_weights(k_iters=2, seed=12, non_adaptive=True)
        w.meta.fixed_thetas[:] = 0.05
        batch = batch_of(split.train, [0, 1, 2])
        worst = relative_gradient_errors(w, batch)
        for name, err in worst.items():
            assert err <= 1e-4, f"{name}: rel err {err}"

    def test_tied_gradient_is_sum_of_untied(self):
        split = tiny_dataset(q=6, n=8, density=0.5, seed=5, ve=False)
        w = init_weights(k_iters=3, seed=13)
        # make the blocks identical so the tied reading applies
        for k in range(1, 3):
            w.blocks[k] = w.blocks[0].copy()
        batch = batch_of(split.train, [0, 1])
        _, untied, _ = grad(w, batch, tied=False)
        _, tied, _ = grad(w, batch, tied=True)
        from nusrecon.network import PARAM_FIELDS

        for name in PARAM_FIELDS:
            want = sum(untied[f"blocks.{k}.{name}"] for k in range(3))
            np.testing.assert_allclose(tied[f"blocks.0.{name}"], want, atol=1e-12)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_loss_raises(self):
        w = init_weights(k_iters=1, seed=14)
        y = np.full((1, 8), np.inf, dtype=complex)
        mask = np.ones((1, 8), dtype=bool)
        ref = np.zeros((1, 8), dtype=complex)
        with pytest.raises(TrainingError):
            grad(w, (y, mask, ref))


class TestHeInit:
    def test_variance_matches_fan_in(self):
        rng = np.random.Generator(np.random.PCG64(0))
        fan_in = 50
        draws = he_init((100_000,), fan_in, rng)
        assert abs(np.var(draws) - 2.0 / fan_in) < 0.05 * 2.0 / fan_in

    def test_biases_zero_bn_identity(self):
        w = init_weights(k_iters=2, seed=15)
        for blk in w.blocks:
            assert np.all(blk.conv1_bias == 0) and np.all(blk.conv2_bias == 0)
            assert np.all(blk.fc1_bias == 0) and np.all(blk.fc2_bias == 0)
            assert np.all(blk.bn_scale == 1) and np.all(blk.bn_shift == 0)
            assert np.all(blk.bn_running_mean == 0) and np.all(blk.bn_running_var == 1)

    def test_deterministic_by_seed(self):
        a = init_weights(k_iters=2, seed=16)
        b = init_weights(k_iters=2, seed=16)
        np.testing.assert_array_equal(a.blocks[1].conv1_kernel, b.blocks[1].conv1_kernel)


class TestAdam:
    def test_zero_grad_no_change(self):
        w = init_weights(k_iters=1, seed=17)
        before = {n: p.copy() for n, p in w.named_parameters()}
        state = AdamState.for_weights(w)
        zero = {n: np.zeros_like(p) for n, p in w.named_parameters()}
        adam_step(w, zero, state, lr=0.1)
        assert state.t == 1
        for n, p in w.named_parameters():
            np.testing.assert_array_equal(p, before[n])

    def test_hand_computed_two_step_trace(self):
        # single parameter, constant gradient 0.5, lr 0.1:
        # bias correction makes each step move exactly lr
        w = ist_equivalent_weights(np.full(FEATURE_CHANNELS, 0.1), k_iters=1)
        w.meta.fixed_thetas[:] = 1.0
        state = AdamState.for_weights(w)
        g = {n: np.zeros_like(p) for n, p in w.named_parameters()}
        g["fixed_thetas"] = np.full_like(w.meta.fixed_thetas, 0.5)
        adam_step(w, g, state, lr=0.1)
        np.testing.assert_allclose(w.meta.fixed_thetas, 0.9, atol=1e-7)
        adam_step(w, g, state, lr=0.1)
        np.testing.assert_allclose(w.meta.fixed_thetas, 0.8, atol=1e-7)

    def test_update_magnitude_bounded(self, rng):
        w = init_weights(k_iters=1, seed=18)
        state = AdamState.for_weights(w)
        lr = 0.01
        for step in range(5):
            g = {n: rng.normal(size=p.shape) for n, p in w.named_parameters()}
            before = {n: p.copy() for n, p in w.named_parameters()}
            adam_step(w, g, state, lr)
            for n, p in w.named_parameters():
                assert np.max(np.abs(p - before[n])) <= lr * 1.2


class TestTrain:
    def test_one_epoch_reduces_single_batch_loss(self):
        wins = 0
        for seed in range(5):
            split = tiny_dataset(q=11, n=32, density=0.5, seed=seed)
            cfg = TrainConfig(epochs=1, batch=10, k_iters=3, seed=seed)
            batch = batch_of(split.train, np.arange(10))
            w0 = init_weights(k_iters=3, seed=seed)
            loss_before, _, _ = grad(w0, batch, BnMode.TRAIN)
            w, _ = train(split, cfg)
            loss_after, _, _ = grad(w, batch, BnMode.TRAIN)
            wins += int(loss_after < loss_before)
        assert wins >= 4

    def test_history_shape(self):
        split = tiny_dataset(q=12, n=32)
        cfg = TrainConfig(epochs=3, batch=5, k_iters=2, seed=1)
        _, history = train(split, cfg)
        assert len(history.epochs) == 3
        for rec in history.epochs:
            assert np.isfinite(rec.train_rlne) and np.isfinite(rec.valid_rlne)
        assert history.epochs[0].lr == pytest.approx(0.001)
        assert history.epochs[1].lr == pytest.approx(0.00095)

    def test_bitwise_deterministic(self):
        split = tiny_dataset(q=8, n=16, seed=2)
        cfg = TrainConfig(epochs=2, batch=4, k_iters=2, seed=3)
        w1, h1 = train(split, cfg)
        w2, h2 = train(split, cfg)
        for (n1, p1), (n2, p2) in zip(w1.named_parameters(), w2.named_parameters()):
            assert n1 == n2
            np.testing.assert_array_equal(p1, p2)
        assert h1.epochs[-1].valid_rlne == h2.epochs[-1].valid_rlne

    def test_evaluate_and_baseline_rlne(self):
        split = tiny_dataset(q=8, n=16, seed=6)
        w = init_weights(k_iters=2, seed=7)
        vals = evaluate_rlne(w, split.valid)
        base = baseline_rlne(split.valid)
        assert vals.shape == (len(split.valid),)
        assert np.all(np.isfinite(vals)) and np.all(base > 0)
