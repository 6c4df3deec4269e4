import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.ndimage import convolve

from cssr import autodiff as ad
from cssr.autodiff import Tensor
from cssr.errors import ConfigurationError, ShapeError
from cssr.losses import (BCE_EPS, FeatureExtractor, LossWeights, bce, content_loss, discriminator_loss,
                         generator_adv_loss, generator_loss, l1_loss, laplacian, laplacian_loss,
                         restoration_loss, smoothed_labels)


def rand(*shape, seed=0):
    return np.random.default_rng(seed).uniform(size=shape)


class TestL1:
    def test_zero_and_offset(self):
        a = rand(1, 3, 4, 4)
        assert l1_loss(Tensor(a), Tensor(a)).item() == 0.0
        assert abs(l1_loss(Tensor(a + 0.5), Tensor(a)).item() - 0.5) < 1e-12

    def test_naive(self):
        a, b = rand(2, 3, 4, 5), rand(2, 3, 4, 5, seed=1)
        total = 0.0
        for v, w in zip(a.ravel(), b.ravel()):
            total += abs(v - w)
        assert abs(l1_loss(Tensor(a), Tensor(b)).item() - total / a.size) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            l1_loss(Tensor(rand(1, 3, 4, 4)), Tensor(rand(1, 3, 4, 5)))


class TestLaplacian:
    def test_reference_filter(self):
        a, b = rand(1, 1, 3, 3), rand(1, 1, 3, 3, seed=1)
        k = np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]], dtype=float)
        ref = np.mean(np.abs(convolve(a[0, 0], k, mode="constant") - convolve(b[0, 0], k, mode="constant")))
        assert abs(laplacian_loss(Tensor(a), Tensor(b)).item() - ref) < 1e-12

    def test_constant_interior_is_zero(self):
        lap = laplacian(Tensor(np.full((1, 3, 6, 6), 0.7))).data
        assert np.allclose(lap[:, :, 1:-1, 1:-1], 0, atol=1e-15)
        a, b = np.full((1, 1, 6, 6), 0.2), np.full((1, 1, 6, 6), 0.9)
        diff = np.abs(laplacian(Tensor(a)).data - laplacian(Tensor(b)).data)
        assert np.allclose(diff[:, :, 1:-1, 1:-1], 0, atol=1e-15)

    def test_identical_is_zero(self):
        a = rand(1, 3, 5, 5)
        assert laplacian_loss(Tensor(a), Tensor(a)).item() == 0.0


class TestRestoration:
    def test_eta_zero_is_l1(self):
        a, b = Tensor(rand(1, 3, 6, 6)), Tensor(rand(1, 3, 6, 6, seed=1))
        w = LossWeights(eta=0.0)
        assert restoration_loss(a, b, w).item() == l1_loss(a, b).item()

    def test_default_eta(self):
        assert LossWeights().eta == 6e-3
        assert LossWeights().lam == 1e-3

    def test_identical_is_zero(self):
        a = Tensor(rand(1, 3, 6, 6))
        assert restoration_loss(a, a).item() == 0.0

    def test_monotone_in_eta(self):
        a, b = Tensor(rand(1, 3, 6, 6)), Tensor(rand(1, 3, 6, 6, seed=1))
        vals = [restoration_loss(a, b, LossWeights(eta=e)).item() for e in (0, 1e-3, 6e-3, 0.1, 1.0)]
        assert all(x < y for x, y in zip(vals, vals[1:]))

    def test_negative_weight_rejected(self):
        with pytest.raises(ConfigurationError):
            LossWeights(eta=-1.0)


class TestLabels:
    def test_bounds(self):
        rng = np.random.default_rng(0)
        fake = smoothed_labels("fake", 10_000, rng)
        real = smoothed_labels("real", 10_000, rng)
        assert fake.min() >= 0 and fake.max() <= 0.2
        assert real.min() >= 0.8 and real.max() <= 1.0

    def test_hard_limit(self):
        w = LossWeights(alpha=0.0, beta=1.0)
        rng = np.random.default_rng(0)
        assert np.all(smoothed_labels("fake", 5, rng, w) == 0)
        assert np.all(smoothed_labels("real", 5, rng, w) == 1)

    def test_errors(self):
        with pytest.raises(ValueError):
            smoothed_labels("maybe", 3, np.random.default_rng(0))
        with pytest.raises(ConfigurationError):
            LossWeights(alpha=0.9, beta=0.8)


def binary_entropy(y):
    y = np.clip(y, BCE_EPS, 1 - BCE_EPS)
    return -np.mean(y * np.log(y) + (1 - y) * np.log(1 - y))


class TestAdversarial:
    def test_bce_minimum_at_labels(self):
        rng = np.random.default_rng(1)
        a, b = smoothed_labels("real", 6, rng), smoothed_labels("fake", 6, rng)
        loss = discriminator_loss(Tensor(a.astype(float)), Tensor(b.astype(float)), a, b).item()
        assert abs(loss - (binary_entropy(a.astype(float)) + binary_entropy(b.astype(float)))) < 1e-6
        for shift in (0.05, -0.05):
            moved = discriminator_loss(Tensor(np.clip(a + shift, 0, 1)), Tensor(np.clip(b + shift, 0, 1)), a, b)
            assert moved.item() > loss

    def test_half_scores_hard_labels(self):
        half = Tensor(np.full(4, 0.5))
        loss = discriminator_loss(half, half, np.ones(4), np.zeros(4)).item()
        assert abs(loss - 2 * math.log(2)) < 1e-12
        assert generator_adv_loss(half, half, np.ones(4), np.zeros(4)).item() == loss

    def test_perfect_discriminator_maximises_generator_loss(self):
        ones, zeros = np.ones(3), np.zeros(3)
        configs = [(0.999, 0.001), (0.9, 0.1), (0.5, 0.5), (0.2, 0.8)]
        vals = [generator_adv_loss(Tensor(np.full(3, r)), Tensor(np.full(3, f)), ones, zeros).item()
                for r, f in configs]
        assert vals[0] == max(vals)

    def test_label_role_swap(self):
        rng = np.random.default_rng(2)
        r, f = Tensor(rng.uniform(size=5)), Tensor(rng.uniform(size=5))
        a, b = rng.uniform(0.8, 1, 5), rng.uniform(0, 0.2, 5)
        assert discriminator_loss(r, f, b, a).item() == generator_adv_loss(r, f, a, b).item()

    def test_saturated_probabilities_stay_finite(self):
        loss = bce(np.array([0.0, 1.0]), Tensor(np.array([1.0, 0.0])))
        assert np.isfinite(loss.item())
        assert abs(loss.item() + math.log(BCE_EPS)) < 1e-9

    def test_out_of_range_probabilities(self):
        with pytest.raises(ValueError):
            bce(np.array([1.0]), Tensor(np.array([1.5])))
        with pytest.raises(ValueError):
            bce(np.array([1.0]), Tensor(np.array([np.nan])))


class TestContent:
    def test_identical_zero(self):
        a = Tensor(rand(1, 3, 8, 8))
        assert content_loss(a, a, FeatureExtractor()).item() == 0.0

    def test_identity_extractor_doubles_l1(self):
        a, b = Tensor(rand(1, 3, 5, 5)), Tensor(rand(1, 3, 5, 5, seed=1))
        assert abs(content_loss(a, b, lambda t: t).item() - 2 * l1_loss(a, b).item()) < 1e-15

    def test_extractor_frozen(self):
        ext = FeatureExtractor()
        assert ext.trainable() == {}
        assert len(ext.layers) == 5

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_all_losses_nonnegative(self, seed):
        a, b = Tensor(rand(1, 3, 6, 6, seed=seed)), Tensor(rand(1, 3, 6, 6, seed=seed + 1))
        rng = np.random.default_rng(seed)
        s1, s2 = Tensor(rng.uniform(size=3)), Tensor(rng.uniform(size=3))
        ra, fa = smoothed_labels("real", 3, rng), smoothed_labels("fake", 3, rng)
        ext = FeatureExtractor((3, 4, 4), dtype=np.float64)
        for v in (l1_loss(a, b), laplacian_loss(a, b), restoration_loss(a, b), content_loss(a, b, ext),
                  discriminator_loss(s1, s2, ra, fa), generator_loss(a, b, s1, s2, ra, fa, ext)):
            assert v.item() >= 0


def test_generator_loss_weighting():
    a, b = Tensor(rand(1, 3, 6, 6)), Tensor(rand(1, 3, 6, 6, seed=1))
    s1, s2 = Tensor(np.array([0.7, 0.6])), Tensor(np.array([0.2, 0.4]))
    ra, fa = np.array([0.9, 0.95]), np.array([0.1, 0.05])
    ext = FeatureExtractor((3, 4), dtype=np.float64)
    want = content_loss(a, b, ext).item() + 1e-3 * generator_adv_loss(s1, s2, ra, fa).item()
    assert abs(generator_loss(a, b, s1, s2, ra, fa, ext).item() - want) < 1e-12


def test_loss_gradient_reaches_inputs():
    a = Tensor(rand(1, 3, 4, 4), requires_grad=True)
    ad.backward(restoration_loss(a, Tensor(rand(1, 3, 4, 4, seed=1))))
    assert a.grad.shape == a.shape and np.abs(a.grad).sum() > 0
