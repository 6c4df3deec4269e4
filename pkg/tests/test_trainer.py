import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cssr import autodiff as ad
from cssr.autodiff import Parameter, Tensor
from cssr.errors import ConfigurationError, NumericError, ShapeError
from cssr.trainer import (Adam, TrainConfig, apply_augment, augment, init_state, learning_rate, load_state,
                          mix_generated, parse_log, sample_batch, sample_crops, save_state, score_pairs,
                          train_joint, train_step)

from conftest import toy_config


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        p = Parameter(np.array([1.0, -2.0]), "p")
        opt = Adam({"p": p})
        opt.step(1e-3)
        assert np.array_equal(p.data, [1.0, -2.0]) and opt.t == 1

    @settings(max_examples=40, deadline=None)
    @given(g=st.floats(1e-3, 1e3) | st.floats(-1e3, -1e-3), lr=st.floats(1e-6, 1e-1))
    def test_first_step_is_signed_lr(self, g, lr):
        p = Parameter(np.array([0.0]), "p")
        p.grad = np.array([g])
        opt = Adam({"p": p})
        opt.step(lr)
        # m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
        assert abs(p.data[0] + lr * g / (abs(g) + 1e-8)) < 1e-12 * lr
        # the gap to lr * sign(g) is lr * eps / |g|, below 1e-6 lr once |g| >= 1e-2
        if abs(g) >= 1e-2:
            assert abs(p.data[0] + lr * np.sign(g)) < 1e-6 * lr

    def test_matches_reference_loop(self):
        rng = np.random.default_rng(0)
        p = Parameter(rng.normal(size=3), "p")
        x, m, v = p.data.copy(), np.zeros(3), np.zeros(3)
        opt = Adam({"p": p})
        for t in range(1, 6):
            g = rng.normal(size=3)
            p.grad = g.copy()
            opt.step(0.01)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            x = x - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert np.allclose(p.data, x, atol=1e-14)


class TestSchedule:
    def test_halving(self):
        cfg = TrainConfig()
        assert learning_rate(cfg, 0) == 1e-4
        assert learning_rate(cfg, 49_999) == 1e-4
        assert learning_rate(cfg, 50_000) == 5e-5
        assert learning_rate(cfg, 149_999) == 2.5e-5

    @settings(max_examples=50, deadline=None)
    @given(t=st.integers(0, 10 ** 6), every=st.integers(1, 10 ** 5))
    def test_formula(self, t, every):
        cfg = TrainConfig(halve_every=every)
        assert learning_rate(cfg, t) == 1e-4 * 2.0 ** (-(t // every))

    def test_mix_fraction(self):
        assert TrainConfig().generated_fraction == pytest.approx(0.2)

    def test_invalid(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(mix_gamma=1.5)
        with pytest.raises(ConfigurationError):
            TrainConfig(arch="durcan-5")
        with pytest.raises(ConfigurationError):
            TrainConfig(alpha=0.9)


class TestAugment:
    def test_group_properties(self):
        img = np.random.default_rng(0).uniform(size=(6, 4, 3))
        assert np.array_equal(apply_augment(apply_augment(img, 1, False), 1, False), apply_augment(img, 2, False))
        assert np.array_equal(apply_augment(apply_augment(img, 0, True), 0, True), img)
        assert np.array_equal(apply_augment(img, 4, False), img)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 1000))
    def test_pair_stays_aligned(self, seed):
        rng = np.random.default_rng(seed)
        lr = rng.uniform(size=(3, 5, 3))
        hr = np.kron(lr, np.ones((4, 4, 1)))
        hr_a, lr_a = augment(hr, lr, rng)
        assert hr_a.shape[0] == 4 * lr_a.shape[0] and hr_a.shape[1] == 4 * lr_a.shape[1]
        assert np.array_equal(hr_a, np.kron(lr_a, np.ones((4, 4, 1))))

    def test_ratio_violation(self):
        with pytest.raises(ShapeError):
            augment(np.zeros((8, 8, 3)), np.zeros((3, 2, 3)), np.random.default_rng(0))


class TestSampling:
    def test_crops_geometric(self, toy_dataset):
        # nearest-upsampled LR makes the geometric pairing directly checkable
        ds = [(np.kron(lr, np.ones((4, 4, 1))), lr) for _, lr in toy_dataset]
        cfg = toy_config(batch=6)
        hr, lr = sample_crops(ds, cfg, np.random.default_rng(1))
        assert hr.shape == (6, 3, 48, 48) and lr.shape == (6, 3, 12, 12)
        assert np.array_equal(hr, np.kron(lr, np.ones((1, 1, 4, 4))))

    def test_crop_too_large(self, toy_dataset):
        with pytest.raises(ShapeError):
            sample_crops(toy_dataset, toy_config(crop=48), np.random.default_rng(0))

    def test_empty(self):
        with pytest.raises(ValueError):
            sample_crops([], toy_config(), np.random.default_rng(0))

    def test_flags_and_degenerate_mix(self, toy_dataset):
        cfg = toy_config(mix_gamma=0.0)
        state = init_state(cfg)
        lr, hr, flags = sample_batch(toy_dataset, state.nets.generator, cfg, np.random.default_rng(0))
        assert flags.shape == (cfg.batch,) and not flags.any()

    def test_generated_fraction(self):
        rng = np.random.default_rng(0)
        lr = np.zeros((10_000, 1, 1, 1), np.float32)
        _, flags = mix_generated(lr, lr, None, TrainConfig().generated_fraction, rng)
        assert abs(flags.mean() - 0.2) <= 0.02

    def test_generated_samples_replaced(self, toy_dataset):
        cfg = toy_config(mix_gamma=1.0, batch=8)
        state = init_state(cfg)
        hr, lr = sample_crops(toy_dataset, cfg, np.random.default_rng(2))
        mixed, flags = mix_generated(lr, hr, state.nets.generator, 1.0, np.random.default_rng(3))
        assert flags.all()
        gen = state.nets.generator
        with ad.no_grad():
            want = gen(Tensor(hr)).data
        assert np.array_equal(mixed, want)


class TestTraining:
    def test_step_order_and_generator_isolation(self, toy_dataset):
        cfg = toy_config(mix_gamma=1.0, max_iters=2)
        state = init_state(cfg)
        train_step(state, toy_dataset, cfg)
        assert all(not p.grad.any() for p in state.nets.generator.parameters().values())
        assert state.opt_d.t == state.opt_g.t == state.opt_sr.t == 1

    def test_same_seed_same_log(self, toy_dataset):
        cfg = toy_config(max_iters=4)
        a = train_joint(toy_dataset, cfg).log
        b = train_joint(toy_dataset, cfg).log
        assert np.abs(np.array(a) - np.array(b)).max() <= 1e-12

    def test_resume_matches(self, toy_dataset, tmp_path):
        cfg = toy_config(max_iters=6)
        full = train_joint(toy_dataset, cfg).log
        part = train_joint(toy_dataset, cfg, stop_at=3)
        save_state(part, cfg, tmp_path / "ck")
        resumed = train_joint(toy_dataset, cfg, resume=tmp_path / "ck")
        assert resumed.iteration == 6
        assert np.abs(np.array(full[3:]) - np.array(resumed.log)).max() <= 1e-6

    def test_log_file_and_checkpoints(self, toy_dataset, tmp_path):
        cfg = toy_config(max_iters=4, checkpoint_every=2)
        state = train_joint(toy_dataset, cfg, out_dir=tmp_path)
        rows = parse_log((tmp_path / "loss_log.tsv").read_text())
        assert (tmp_path / "loss_log.tsv").read_text().startswith("iter\tL_D\tL_G\tL_SR\tlr\n")
        assert [r[0] for r in rows] == [0, 1, 2, 3]
        assert np.allclose(np.array(rows), np.array(state.log), rtol=1e-8)
        assert (tmp_path / "iter_0000002" / "durcan.cssr").is_file()
        restored = load_state(cfg, tmp_path / "iter_0000004")
        for (n, p), (_, q) in zip(state.nets.durcan.named_parameters(), restored.nets.durcan.named_parameters()):
            assert np.array_equal(p.data, q.data), n

    def test_nan_aborts_with_term(self, toy_dataset):
        cfg = toy_config(max_iters=1)
        state = init_state(cfg)
        state.nets.durcan.tail.bias.data[...] = np.nan
        with pytest.raises(NumericError, match="L_SR"):
            train_step(state, toy_dataset, cfg)

    def test_freeze_prefixes(self, toy_dataset):
        cfg = toy_config(max_iters=2, freeze="head,durbs,conv_ed,upsample,tail", joint=False)
        state = init_state(cfg)
        assert set(state.opt_sr.params) == {k for k in state.nets.durcan.parameters() if k.startswith("rcab")}
        before = {k: p.data.copy() for k, p in state.nets.durcan.parameters().items()}
        train_joint(toy_dataset, cfg, state=state)
        for k, p in state.nets.durcan.parameters().items():
            assert np.array_equal(before[k], p.data) != k.startswith("rcab"), k

    def test_freeze_everything_rejected(self):
        with pytest.raises(ConfigurationError):
            init_state(toy_config(freeze="head,rcab,durbs,conv_ed,upsample,tail"))

    def test_score_pairs(self, toy_dataset):
        state = init_state(toy_config())
        s = score_pairs(state.nets.durcan, toy_dataset[:1])
        assert np.isfinite([s.psnr_sr, s.psnr_bicubic, s.laplacian_error]).all()
        assert s.gain_db == s.psnr_sr - s.psnr_bicubic
