import numpy as np
import pytest

from noisebench.datasets import Dataset
from noisebench.errors import ConfigError, NoSpikes, ShapeError
from noisebench.nn import build_network
from noisebench.sta import (
    UnitAddress,
    cosine,
    mean_layer_activation,
    rf_window,
    sta,
    stc,
    unit_sta_filters,
    whitened_sta,
)


@pytest.fixture(scope="module")
def gauss():
    return np.random.default_rng(7).normal(size=(100_000, 6))


class TestSta:
    def test_constant_response_is_zero(self, gauss):
        res = sta(gauss, lambda x: np.ones(len(x)))
        assert np.abs(res.mu).max() < 4 / np.sqrt(len(gauss))
        assert res.n_sp == len(gauss)

    def test_relu_of_projection_recovers_direction(self, gauss):
        w = np.array([1.0, -2.0, 0.5, 0.0, 1.0, 0.3])
        res = sta(gauss, lambda x: np.maximum(x @ w, 0))
        assert cosine(res.mu, w) > 0.99

    def test_threshold_on_first_axis(self, gauss):
        res = sta(gauss[:, :1], lambda x: (x[:, 0] > 0).astype(float))
        # half-normal mean sqrt(2/pi)
        assert res.mu[0] == pytest.approx(np.sqrt(2 / np.pi), abs=0.02)

    def test_no_spikes(self, gauss):
        with pytest.raises(NoSpikes):
            sta(gauss[:100], lambda x: np.zeros(len(x)))

    def test_negative_response_rejected(self, gauss):
        with pytest.raises(ConfigError):
            sta(gauss[:10], lambda x: -np.ones(len(x)))


class TestWhitenedSta:
    def test_isotropic_matches_plain(self, gauss):
        w = np.array([0.5, 1, 0, 0, -1, 2])
        y = np.maximum(gauss @ w, 0)
        assert cosine(whitened_sta(gauss, y), sta(gauss, lambda x: np.maximum(x @ w, 0)).mu) > 0.98

    def test_correlated_linear_response(self, rng):
        c = np.array([[1.0, 0.8, 0.2], [0.8, 1.0, 0.5], [0.2, 0.5, 1.0]])
        x = rng.multivariate_normal(np.zeros(3), c, size=20_000)
        w = np.array([1.0, -0.5, 2.0])
        y = x @ w + 10.0  # keep responses positive
        assert cosine(whitened_sta(x, y), w) > 0.999

    def test_singular_design_falls_back_to_ridge(self, rng):
        x = rng.normal(size=(500, 2))
        x = np.hstack([x, x[:, :1]])  # duplicated column
        out = whitened_sta(x, np.maximum(x[:, 1], 0))
        assert np.all(np.isfinite(out))

    def test_zero_response(self, rng):
        with pytest.raises(NoSpikes):
            whitened_sta(rng.normal(size=(10, 2)), np.zeros(10))


class TestStc:
    def test_hand_case(self):
        x = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        res = stc(x, lambda b: np.array([1.0, 1.0, 2.0])[: len(b)], np.zeros(2), center=False)
        assert np.allclose(res.lam, [[0.75, 0.5], [0.5, 0.75]])
        assert np.allclose(res.eigenvalues, [1.25, 0.25])

    def test_constant_response_gives_prior(self, rng):
        x = rng.normal(size=(100_000, 8))
        res = stc(x, lambda b: np.ones(len(b)), np.zeros(8))
        assert np.linalg.norm(res.lam - np.eye(8)) / np.sqrt(8) < 0.05

    def test_energy_model(self, rng):
        x = rng.normal(size=(50_000, 5))
        w = np.array([1.0, 1.0, 0.0, -1.0, 0.5])
        w /= np.linalg.norm(w)
        res = stc(x, lambda b: (b @ w) ** 2, np.zeros(5))
        assert abs(cosine(res.eigenvectors[:, 0], w)) > 0.98


class TestUnitFilters:
    def test_planted_kernel_is_recovered(self, rng):
        net = build_network("cnn_mnist", (1, 16, 16), 3, init_seed=0, dtype=np.float64)
        kernel = rng.normal(size=(5, 5))
        net.weights["conv1"][0, 0] = kernel
        net.map_bias["conv1"][0] = 0.0
        res = unit_sta_filters(net, "conv1", [UnitAddress("conv1", 0, 5, 6)], n=20_000, seed=1)[0]
        assert res.window == (5, 6, 5)
        assert cosine(res.rf_crop[0], kernel) > 0.99
        assert cosine(res.mu[0], kernel) > 0.95

    def test_units_at_one_position_share_stimuli(self):
        net = build_network("cnn_mnist", (1, 16, 16), 3, init_seed=0)
        net.weights["conv1"][1] = net.weights["conv1"][0]
        out = unit_sta_filters(net, "conv1", [0, 1], n=2000, seed=3)
        assert np.array_equal(out[0].whitened, out[1].whitened)

    def test_dead_units_flagged(self):
        net = build_network("cnn_mnist", (1, 16, 16), 3, init_seed=0)
        net.map_bias["conv1"][:] = -100.0
        out = unit_sta_filters(net, "conv1", [0, 1], n=500)
        assert all(r.dead and r.mu is None for r in out)

    def test_border_unit_window_is_cropped(self):
        net = build_network("cnn_cifar", (3, 8, 8), 2, init_seed=0)
        res = unit_sta_filters(net, "conv1", [UnitAddress("conv1", 0, 0, 0)], n=600)[0]
        assert res.window == (-1, -1, 3)
        assert res.rf_crop.shape == (3, 3, 3)
        assert np.all(res.rf_crop[:, 0, :] == 0)

    def test_rf_window_and_bad_unit(self):
        net = build_network("cnn_mnist", (1, 28, 28), 10)
        assert rf_window(net, "conv2", 0, 0) == (0, 0, 14)
        with pytest.raises(ShapeError):
            unit_sta_filters(net, "conv1", [UnitAddress("conv1", 99)], n=10)


class TestMeanActivation:
    def test_identical_inputs_have_zero_distance(self):
        net = build_network("cnn_mnist", (1, 16, 16), 2)
        img = np.full((6, 1, 16, 16), 0.3, dtype=np.float32)
        ds = Dataset(img, np.array([0, 1] * 3), 2)
        out = mean_layer_activation(net, ds, ["conv1", "fc"])
        assert np.allclose(out["conv1"].distances, 0) and out["fc"].mean_pairwise_distance() == 0

    def test_disjoint_quadrants_are_separated(self):
        net = build_network("cnn_mnist", (1, 16, 16), 2, init_seed=1)
        img = np.zeros((4, 1, 16, 16), dtype=np.float32)
        img[:2, 0, :8, :8] = 1
        img[2:, 0, 8:, 8:] = 1
        ds = Dataset(img, np.array([0, 0, 1, 1]), 2)
        out = mean_layer_activation(net, ds, net.stage_names())
        assert all(m.distances[0, 1] > 0 for m in out.values())

    def test_empty_class_flagged(self):
        net = build_network("logreg", (1, 4, 4), 3)
        ds = Dataset(np.zeros((2, 1, 4, 4), np.float32), np.array([0, 1]), 3)
        m = mean_layer_activation(net, ds, "fc")["fc"]
        assert m.empty.tolist() == [False, False, True] and np.isnan(m.distances[2, 0])
