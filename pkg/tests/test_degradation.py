from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cssr.degradation import (DegradationParams, degrade, degrade_float, gaussian_kernel, make_dataset,
                              read_manifest, synthetic_images)
from cssr.errors import ConfigurationError, ImageIOError, ShapeError
from cssr.imageio import write_image


def box_oracle(img, f):
    """Integer block sums with half-up rounding."""
    h, w, c = img.shape
    s = img.astype(np.int64).reshape(h // f, f, w // f, f, c).sum(axis=(1, 3))
    n = f * f
    return ((2 * s + n) // (2 * n)).astype(np.uint8)


class TestKernel:
    def test_delta(self):
        k = gaussian_kernel(0.0, 2)
        assert k[2, 2] == 1 and k.sum() == 1

    @settings(max_examples=30, deadline=None)
    @given(sigma=st.floats(0.05, 4.0), radius=st.integers(1, 8))
    def test_normalised(self, sigma, radius):
        assert abs(gaussian_kernel(sigma, radius).sum() - 1) < 1e-12

    def test_isotropic(self):
        k = gaussian_kernel(1.0, 2)
        assert np.array_equal(k, np.rot90(k)) and k.shape == (5, 5)

    def test_negative_sigma(self):
        with pytest.raises(ValueError):
            gaussian_kernel(-1.0)


class TestDegrade:
    def test_identity_is_box_downsample(self):
        img = np.random.default_rng(0).integers(0, 256, size=(32, 24, 3), dtype=np.uint8)
        assert np.array_equal(degrade(img, DegradationParams.identity()), box_oracle(img, 4))

    def test_bias_shifts_mean(self):
        img = np.random.default_rng(1).integers(50, 200, size=(48, 48, 3), dtype=np.uint8)
        base = DegradationParams.identity()
        shifted = replace(base, color_bias=(0.1, 0.1, 0.1))
        diff = degrade(img, shifted).astype(float).mean() - degrade(img, base).astype(float).mean()
        assert abs(diff / 255.0 - 0.1) < 0.005

    def test_fixed_seed_bitwise(self):
        img = synthetic_images(1, 48)[0]
        p = DegradationParams(seed=11)
        assert np.array_equal(degrade(img, p), degrade(img, p))

    def test_output_shape(self):
        img = np.zeros((40, 24, 3), np.uint8)
        assert degrade(img, DegradationParams()).shape == (10, 6, 3)
        p = replace(DegradationParams(), screen_scale=2, camera_scale=2)
        assert degrade(img, p).shape == (10, 6, 3)

    def test_indivisible(self):
        with pytest.raises(ShapeError):
            degrade(np.zeros((30, 32, 3), np.uint8), DegradationParams())

    def test_invalid_params(self):
        with pytest.raises(ConfigurationError):
            DegradationParams(gamma=0)
        with pytest.raises(ConfigurationError):
            DegradationParams(camera_noise_sigma=-0.1)
        with pytest.raises(ConfigurationError):
            DegradationParams(color_gain=(1.0, 0.0, 1.0))

    def test_noise_monotone(self):
        img = synthetic_images(1, 48, seed=3)[0].astype(np.float64)
        clean = replace(DegradationParams(), screen_noise_sigma=0.0, camera_noise_sigma=0.0)
        ref = degrade_float(img, clean)
        mses = []
        for sigma in (0.005, 0.01, 0.02, 0.04):
            p = replace(clean, camera_noise_sigma=sigma)
            mses.append(np.mean([np.mean((degrade_float(img, replace(p, seed=s)) - ref) ** 2)
                                 for s in range(20)]))
        assert all(a < b for a, b in zip(mses, mses[1:]))


class TestDataset:
    def test_make_dataset(self, tmp_path):
        src = tmp_path / "src"
        src.mkdir()
        for i, img in enumerate(synthetic_images(4, 96)):
            write_image(src / f"im{i}.ppm", img)
        manifest = make_dataset(src, DegradationParams(seed=5), 4, tmp_path / "out")
        pairs = read_manifest(manifest).load()
        assert len(pairs) == 4
        for hr, lr in pairs:
            assert hr.shape == (96, 96, 3) and lr.shape == (24, 24, 3)
        lines = manifest.read_text().splitlines()
        assert all(len(line.split("\t")) == 2 for line in lines)

    def test_distinct_seeds_differ(self):
        img = synthetic_images(1, 48)[0]
        a = degrade(img, DegradationParams(seed=0))
        b = degrade(img, DegradationParams(seed=1))
        assert not np.array_equal(a, b)

    def test_unreadable_inputs_listed(self, tmp_path):
        src = tmp_path / "src"
        src.mkdir()
        write_image(src / "good.ppm", synthetic_images(1, 16)[0])
        (src / "bad.ppm").write_bytes(b"P6\n16 16\n255\n\x00\x01")
        with pytest.raises(ImageIOError, match="bad.ppm"):
            make_dataset(src, DegradationParams(), 2, tmp_path / "out")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ImageIOError):
            read_manifest(tmp_path / "nope.txt")

    def test_synthetic_images_deterministic(self):
        a, b = synthetic_images(2, 32, seed=4), synthetic_images(2, 32, seed=4)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        assert a[0].dtype == np.uint8 and a[0].shape == (32, 32, 3)
