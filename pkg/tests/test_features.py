import warnings

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from spectroclust.errors import ConfigError, DataError, ZeroVarianceError
from spectroclust.features import (FeatureSet, PCAReducer, extract_features, fit_pca, flatten, l2_normalize,
                                   transform_pca, upscale)
from spectroclust.networks import NetworkConfig, build_network, count_parameters


def toy(size=32, k=6, seed=0, dim=64):
    return build_network(NetworkConfig(variant="TOY", input_size=size, num_classes=k, descriptor_dim=dim, seed=seed))


# networks

def test_resnet_parameter_count():
    n = count_parameters(build_network(NetworkConfig(variant="RN", input_size=128, num_classes=23)))
    assert abs(n - 11e6) / 11e6 < 0.10


@pytest.mark.slow
def test_vgg_parameter_count_and_ratio():
    vgg = count_parameters(build_network(NetworkConfig(variant="VGG", input_size=224, num_classes=23)))
    rn = count_parameters(build_network(NetworkConfig(variant="RN", input_size=128, num_classes=23)))
    assert abs(vgg - 133e6) / 133e6 < 0.10
    assert rn < vgg / 10


def test_toy_descriptor_shape_and_conv_budget():
    net = toy()
    x = torch.rand(3, 1, 32, 32)
    assert net.descriptors(x).shape == (3, 64)
    assert net(x).shape == (3, 6)
    convs = [m for m in net.modules() if isinstance(m, torch.nn.Conv2d)]
    assert len(convs) <= 6


def test_network_config_validation():
    with pytest.raises(ConfigError):
        NetworkConfig(variant="LSTM")
    with pytest.raises(ConfigError):
        NetworkConfig(input_channels=3)
    with pytest.raises(ConfigError):
        NetworkConfig(num_classes=1)
    assert NetworkConfig(variant="rn").descriptor_dim == 512


def test_build_is_seeded():
    a, b, c = toy(seed=1), toy(seed=1), toy(seed=2)
    assert a.trunk_hash() == b.trunk_hash() != c.trunk_hash()


def test_reset_final_layer_keeps_trunk():
    net = toy()
    before = net.trunk_hash()
    w = net.final_layer.weight.detach().clone()
    net.reset_final_layer(seed=123)
    assert net.trunk_hash() == before
    assert not torch.equal(w, net.final_layer.weight)


# extraction

def test_extract_identical_tiles_identical_descriptors():
    net = toy()
    tiles = np.random.default_rng(0).uniform(size=(4, 32, 32)).astype(np.float32)
    tiles[2] = tiles[0]
    d = extract_features(net, tiles).descriptors
    assert np.array_equal(d[0], d[2])


def test_extract_batching_invariant():
    net = toy()
    tiles = np.random.default_rng(1).uniform(size=(128, 32, 32)).astype(np.float32)
    a = extract_features(net, tiles, batch_size=1).descriptors
    b = extract_features(net, tiles, batch_size=64).descriptors
    assert np.abs(a - b).max() <= 1e-5


def test_extract_zero_tile_snapshot():
    net = toy(seed=0)
    d = extract_features(net, np.zeros((1, 32, 32), np.float32)).descriptors[0]
    assert np.all(np.isfinite(d))
    again = extract_features(toy(seed=0), np.zeros((1, 32, 32), np.float32)).descriptors[0]
    assert np.array_equal(d, again)


def test_extract_size_mismatch_and_resize():
    net = toy(size=32)
    tiles = np.random.default_rng(2).uniform(size=(2, 16, 16)).astype(np.float32)
    with pytest.raises(DataError):
        extract_features(net, tiles)
    assert extract_features(net, tiles, resize=True).descriptors.shape == (2, 64)


def test_extract_restores_training_mode():
    net = toy()
    net.train()
    extract_features(net, np.zeros((2, 32, 32), np.float32))
    assert net.training


# upscale / flatten

def test_upscale_constant():
    out = upscale(np.full((8, 8), 0.3, np.float32), 20)
    np.testing.assert_allclose(out, 0.3, atol=1e-6)


def test_upscale_monotone_columns():
    out = upscale(np.array([[0, 1], [0, 1]], np.float32), 4)
    assert np.all(np.diff(out, axis=1) >= 0) and out.min() >= 0 and out.max() <= 1


def test_upscale_stripe_thickness():
    tile = np.zeros((128, 128), np.float32)
    tile[:, 40:44] = 1.0
    out = upscale(tile, 224)
    thick = int((out[0] >= 0.5).sum())
    assert abs(thick - 4 * 224 / 128) <= 1


def test_upscale_rejects_downscale():
    with pytest.raises(ConfigError):
        upscale(np.zeros((8, 8)), 4)


def test_flatten():
    a, b, c, d = 0.1, 0.2, 0.3, 0.4
    f = flatten(np.array([[[a, b], [c, d]]], np.float32))
    np.testing.assert_allclose(f.descriptors[0], [a, b, c, d])
    assert f.source == "flatten"
    tiles = np.random.default_rng(3).uniform(size=(3, 128, 128)).astype(np.float32)
    flat = flatten(tiles).descriptors
    assert flat.shape[1] == 16384 and np.array_equal(flat.reshape(3, 128, 128), tiles)


def test_featureset_roundtrip(tmp_path):
    fs = FeatureSet(np.arange(6, dtype=np.float32).reshape(2, 3), "cnn_TOY", epoch_tag=4)
    fs.save(tmp_path / "f.bin")
    back = FeatureSet.load(tmp_path / "f.bin")
    assert np.array_equal(back.descriptors, fs.descriptors) and back.epoch_tag == 4 and back.source == "cnn_TOY"


# PCA

def test_pca_line_plus_noise():
    rng = np.random.default_rng(4)
    t = rng.normal(size=200)
    X = np.c_[t, 2 * t] + 1e-3 * rng.normal(size=(200, 2))
    assert fit_pca(X, evr_threshold=0.9).n_components_ == 1


def test_pca_fixed_and_errors():
    X = np.random.default_rng(5).normal(size=(10, 4))
    assert fit_pca(X, fixed_d=3).components_.shape == (3, 4)
    with pytest.raises(ConfigError):
        fit_pca(X, fixed_d=10)
    with pytest.raises(ConfigError):
        fit_pca(X)
    with pytest.raises(ConfigError):
        fit_pca(X, evr_threshold=0.9, fixed_d=2)
    with pytest.raises(ZeroVarianceError):
        fit_pca(np.ones((5, 3)), evr_threshold=0.9)


def test_pca_transform_contract():
    X = np.random.default_rng(6).normal(size=(30, 5))
    p = fit_pca(X, fixed_d=5)
    np.testing.assert_allclose(transform_pca(p, p.mean_[None]), 0, atol=1e-12)
    e = transform_pca(p, (p.mean_ + p.components_[0])[None])[0]
    np.testing.assert_allclose(e, np.eye(5)[0], atol=1e-12)
    Y = np.random.default_rng(7).normal(size=(4, 5))
    np.testing.assert_allclose(p.inverse_transform(p.transform(Y)), Y, atol=1e-5)
    with pytest.raises(DataError):
        p.transform(np.zeros((2, 4)))


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 20), st.integers(1, 5), st.integers(0, 10_000))
def test_pca_evr_properties(n, f, seed):
    X = np.random.default_rng(seed).normal(size=(n, f))
    p = fit_pca(X, evr_threshold=1.0)
    evr = p.explained_variance_ratio_
    assert np.all(np.diff(p.cumulative_evr_) >= -1e-12)
    assert np.all(np.diff(evr) <= 1e-12) and np.all((evr >= 0) & (evr <= 1 + 1e-12))
    assert p.cumulative_evr_[-1] == pytest.approx(1.0, abs=1e-6)
    np.testing.assert_allclose(p.components_ @ p.components_.T, np.eye(p.n_components_), atol=1e-5)
    # first component captures the top covariance eigenvalue
    top = np.linalg.eigvalsh(np.cov(X, rowvar=False).reshape(f, f))[-1]
    assert p.explained_variance_[0] == pytest.approx(top, rel=1e-8, abs=1e-12)


def test_pca_cap_and_randomized_solver():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(60, 40))
    capped = PCAReducer(evr_threshold=0.99, max_components=5).fit(X)
    assert capped.n_components_ == 5
    low_rank = rng.normal(size=(60, 6)) * [10, 8, 6, 4, 3, 2] @ rng.normal(size=(6, 40)) + 1e-3 * X
    full = PCAReducer(n_components=6, svd_solver="full").fit(low_rank)
    rand = PCAReducer(n_components=6, svd_solver="randomized").fit(low_rank)
    np.testing.assert_allclose(np.abs(full.components_), np.abs(rand.components_), atol=1e-4)


def test_pca_save_load(tmp_path):
    X = np.random.default_rng(9).normal(size=(20, 6))
    p = fit_pca(X, evr_threshold=0.8)
    p.save(tmp_path / "p.bin")
    q = PCAReducer.load(tmp_path / "p.bin")
    np.testing.assert_allclose(q.transform(X), p.transform(X), atol=1e-5)
    assert q.n_components_ == p.n_components_


# L2

def test_l2_examples():
    np.testing.assert_allclose(l2_normalize([[3.0, 4.0]]), [[0.6, 0.8]])
    u = np.array([[0.0, 1.0]])
    np.testing.assert_array_equal(l2_normalize(u), u)
    with pytest.warns(RuntimeWarning):
        out, zeros = l2_normalize(np.zeros((1, 3)), return_zero_count=True)
    assert zeros == 1 and np.all(out == 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_l2_idempotent_and_direction(seed):
    X = np.random.default_rng(seed).normal(size=(5, 4))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        Y = l2_normalize(X)
    np.testing.assert_allclose(np.linalg.norm(Y, axis=1), 1, atol=1e-6)
    np.testing.assert_allclose(l2_normalize(Y), Y, atol=1e-12)
    cos = (X * Y).sum(1) / np.linalg.norm(X, axis=1)
    np.testing.assert_allclose(cos, 1, atol=1e-12)
