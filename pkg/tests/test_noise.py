import numpy as np
import pytest

from noisebench.datasets import Dataset
from noisebench.errors import ConfigError, ShapeError
from noisebench.linalg import PcaModel
from noisebench.noise import (
    GaborPcaSampler,
    StimulusStream,
    build_gabor_bank,
    fit_gabor_pca,
    gabor_weights,
    gen_white,
    load_sampler,
    mix,
    sample_gabor,
    save_sampler,
)


class TestWhite:
    def test_deterministic(self):
        assert np.array_equal(gen_white((1, 8, 8), 3, 11), gen_white((1, 8, 8), 3, 11))
        assert not np.array_equal(gen_white((1, 8, 8), 3, 11), gen_white((1, 8, 8), 4, 11))

    def test_uniform_mean(self):
        x = np.concatenate([gen_white((1, 28, 28), i, 0).ravel() for i in range(200)])
        assert 0.497 <= x.mean() <= 0.503
        assert x.min() >= 0 and x.max() < 1

    def test_gaussian_clipping_fraction(self):
        x = np.concatenate([gen_white((1, 28, 28), i, 0, "gaussian", 0.2).ravel() for i in range(200)])
        # P(|z| > 2.5) for a N(0.5, 0.2) clipped to [0, 1]
        frac = np.mean((x == 0) | (x == 1))
        assert abs(frac - 0.0124) < 0.004
        assert abs(x.mean() - 0.5) < 0.005

    def test_gaussian_needs_positive_sigma(self):
        with pytest.raises(ConfigError):
            gen_white((1, 4, 4), 0, 0, "gaussian", 0.0)
        with pytest.raises(ConfigError):
            gen_white((1, 4, 4), 0, 0, "pink")


class TestMix:
    def test_endpoints_and_midpoint(self, rng):
        s = rng.uniform(size=(1, 4, 4)).astype(np.float32)
        n = rng.uniform(size=(1, 4, 4)).astype(np.float32)
        assert np.array_equal(mix(s, n, 1.0), s)
        assert np.array_equal(mix(s, n, 0.0), n)
        assert np.allclose(mix(np.ones(4), np.zeros(4), 0.5), 0.5)

    def test_broadcasts_one_signal_over_batch(self):
        out = mix(np.ones((1, 2, 2)), np.zeros((3, 1, 2, 2)), 0.25)
        assert out.shape == (3, 1, 2, 2) and np.allclose(out, 0.25)

    @pytest.mark.parametrize("g", [-0.1, 1.5])
    def test_gamma_range(self, g):
        with pytest.raises(ConfigError):
            mix(np.ones(2), np.ones(2), g)


class TestGaborBank:
    @pytest.mark.parametrize("scales,count", [((2, 4, 10), 960), ((2, 4, 7, 11), 1520), ((1,), 8)])
    def test_count(self, scales, count):
        h = 32 if 11 in scales else 28
        assert build_gabor_bank(h, h, scales).size == count

    def test_unit_norm(self):
        b = build_gabor_bank(16, 16, (1, 2))
        assert np.allclose(np.linalg.norm(b.wavelets.reshape(b.size, -1), axis=1), 1)

    def test_single_scale_is_centred(self):
        b = build_gabor_bank(9, 9, (1,))
        assert np.all(b.params[:, 1:3] == 0)
        # every even-phase wavelet peaks at the image centre
        even = b.wavelets[b.params[:, 4] == 0]
        assert all(np.unravel_index(np.argmax(w), w.shape) == (4, 4) for w in even)

    def test_scale_too_large(self):
        with pytest.raises(ConfigError):
            build_gabor_bank(8, 8, (9,))


def _tiny_data(rng, n=30, h=8):
    imgs = rng.uniform(size=(n, 1, h, h)).astype(np.float32)
    return Dataset(imgs, np.zeros(n, dtype=np.int64), 1)


class TestGaborPca:
    def test_weights_shape_and_ridge_fit(self, rng):
        bank = build_gabor_bank(8, 8, (1, 2))
        data = _tiny_data(rng)
        w = gabor_weights(data, bank, alpha=1.0)
        assert w.shape == (30, 40)
        g = bank.design()
        ref = np.linalg.solve(g.T @ g + np.eye(40), g.T @ data.images[:, 0].reshape(30, -1).T).T
        assert np.allclose(w, ref, atol=1e-8)

    def test_bank_size_mismatch(self, rng):
        with pytest.raises(ShapeError):
            gabor_weights(_tiny_data(rng, h=8), build_gabor_bank(10, 10, (1,)))

    def test_samples_in_range_and_deterministic(self, rng):
        sampler = fit_gabor_pca(_tiny_data(rng), build_gabor_bank(8, 8, (1, 2)), k_components=5)
        a = sample_gabor(sampler, 4, 1)
        assert a.shape == (1, 8, 8)
        assert a.min() == 0.0 and a.max() == 1.0
        assert np.array_equal(a, sample_gabor(sampler, 4, 1))
        assert 0 < sampler.explained_variance[0] <= 1

    def test_repeated_image_is_degenerate_but_fits(self, rng):
        img = rng.uniform(size=(1, 1, 8, 8)).astype(np.float32)
        data = Dataset(np.repeat(img, 6, axis=0), np.zeros(6, dtype=np.int64), 1)
        sampler = fit_gabor_pca(data, build_gabor_bank(8, 8, (1,)), k_components=3)
        assert np.allclose(sampler.pcas[0].explained_variance_ratio, 0)
        # collapsed score ranges: every sample is the rescaled mean-weight image
        assert np.array_equal(sampler.sample(0, 0), sampler.sample(1, 5))

    def test_collapsed_ranges_give_mean_image(self):
        bank = build_gabor_bank(8, 8, (1,))
        mean_w = np.linspace(-1, 1, bank.size)
        comps = np.eye(bank.size)[:2]
        pca = PcaModel(mean_w, comps, np.zeros(2), np.zeros((2, 2)))
        s = GaborPcaSampler(bank, [pca])
        img = (mean_w @ bank.wavelets.reshape(bank.size, -1)).reshape(8, 8)
        img = (img - img.min()) / (img.max() - img.min())
        assert np.allclose(s.sample(3, 3)[0], img, atol=2 ** -23)

    def test_save_load_reproduces_samples(self, tmp_path, rng):
        sampler = fit_gabor_pca(_tiny_data(rng), build_gabor_bank(8, 8, (1, 2)), k_components=4)
        save_sampler(sampler, tmp_path / "s.wngs")
        back = load_sampler(tmp_path / "s.wngs")
        for i in range(5):
            assert np.array_equal(back.sample(i, 9), sampler.sample(i, 9))


class TestStream:
    def test_batch_matches_items(self):
        s = StimulusStream("white_uniform", (1, 5, 5), 20, seed=2)
        b = s.batch(3, 8)
        assert all(np.array_equal(b[j], s[3 + j]) for j in range(5))
        assert len(s) == 20

    def test_gaussian_stream(self):
        s = StimulusStream("white_gaussian", (1, 5, 5), 4, seed=2, sigma=0.15)
        assert np.array_equal(s[1], gen_white((1, 5, 5), 1, 2, "gaussian", 0.15))

    def test_bad_source(self):
        with pytest.raises(ConfigError):
            StimulusStream("brown", (1, 5, 5), 4, 0)
        with pytest.raises(ConfigError):
            StimulusStream("gabor_pca", (1, 5, 5), 4, 0)
