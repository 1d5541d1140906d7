"""Whitening and grating stimuli checks against small closed-form cases."""

import math

import numpy as np
import pytest

from cgdbm.errors import ConfigError, DomainError
from cgdbm.io import save_matrix, write_pgm
from cgdbm.stimuli import (PatchConfig, Whitener, default_frequencies,
                           default_orientations, default_phases, dewhiten,
                           extract_patches, fit_whitener, generate_gratings,
                           group_by_orientation, load_grayscale_images,
                           mean_centered_norm, target_amplitude, whiten)
from cgdbm.synth import dead_leaves_image, make_corpus


# --- patches ----------------------------------------------------------------

def test_load_images_sorted_and_mixed(tmp_path, rng):
    write_pgm(tmp_path / "b.pgm", np.zeros((4, 4)))
    save_matrix(tmp_path / "a.cgmat", np.ones((5, 5)))
    write_pgm(tmp_path / "c.pgm", np.full((4, 4), 0.5))
    imgs = load_grayscale_images(tmp_path)
    assert len(imgs) == 3
    assert imgs[0].shape == (5, 5) and imgs[0][0, 0] == 1.0  # a.cgmat first
    assert imgs[1][0, 0] == 0.0
    (tmp_path / "noise.txt").write_text("ignored")
    assert len(load_grayscale_images(tmp_path)) == 3


def test_load_images_empty_dir_raises(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_grayscale_images(tmp_path)


def test_extract_patches_shapes_and_content(rng):
    # single constant-gradient image: every patch is a shifted copy
    img = np.arange(100, dtype=float).reshape(10, 10)
    cfg = PatchConfig(patch_side=3, n_patches=50, train_fraction=0.8, pca_k=9)
    train, test = extract_patches([img], cfg, rng)
    assert train.shape == (40, 9)
    assert test.shape == (10, 9)
    # each row must be an actual 3x3 window of img
    for row in train[:5]:
        patch = row.reshape(3, 3)
        top_left = patch[0, 0]
        r, c = divmod(int(top_left), 10)
        np.testing.assert_array_equal(patch, img[r:r + 3, c:c + 3])


def test_extract_patches_skips_small_images(rng):
    small = np.zeros((2, 2))
    big = np.ones((8, 8))
    cfg = PatchConfig(patch_side=4, n_patches=10, train_fraction=0.5,
                      pca_k=16)
    train, test = extract_patches([small, big], cfg, rng)
    assert np.all(train == 1.0) and np.all(test == 1.0)
    with pytest.raises(DomainError):
        extract_patches([small], cfg, rng)


def test_patch_config_validation():
    with pytest.raises(ConfigError):
        PatchConfig(patch_side=1).validate()
    with pytest.raises(ConfigError):
        PatchConfig(train_fraction=1.0).validate()
    with pytest.raises(ConfigError):
        PatchConfig(patch_side=3, pca_k=10).validate()


# --- whitening --------------------------------------------------------------

def test_whitener_known_diagonal_covariance(rng):
    # independent columns with variances 9, 4, 1: eigvecs are axes
    n = 40000
    x = rng.normal(size=(n, 3)) * np.array([3.0, 2.0, 1.0])
    w = fit_whitener(x, 3)
    assert np.all(np.diff(w.eigvals) <= 0)
    np.testing.assert_allclose(w.eigvals, [9.0, 4.0, 1.0], rtol=0.05)
    # each basis column is an axis up to sign
    for j in range(3):
        assert np.max(np.abs(w.basis[:, j])) > 0.99


def test_whitened_covariance_is_identity(rng):
    d, k, n = 12, 5, 3000
    mix = rng.normal(size=(d, d))
    x = rng.normal(size=(n, d)) @ mix + rng.normal(size=d)
    w = fit_whitener(x, k)
    v = whiten(w, x)
    cov = np.cov(v, rowvar=False, ddof=1)
    np.testing.assert_allclose(cov, np.eye(k), atol=1e-6)
    assert np.max(np.abs(v.mean(axis=0))) < 1e-10


def test_dewhiten_then_whiten_is_identity(rng):
    d, k = 9, 4
    x = rng.normal(size=(500, d)) @ rng.normal(size=(d, d))
    w = fit_whitener(x, k)
    v = rng.normal(size=(20, k))
    np.testing.assert_allclose(whiten(w, dewhiten(w, v)), v, atol=1e-10)


def test_whiten_dewhiten_is_rank_k_projection(rng):
    d, k = 10, 6
    x = rng.normal(size=(800, d)) @ rng.normal(size=(d, d))
    w = fit_whitener(x, k)
    y = rng.normal(size=(30, d))
    recon = dewhiten(w, whiten(w, y))
    # oracle: explicit projector onto the basis columns, around the mean
    proj = w.basis @ w.basis.T
    expected = (y - w.mean) @ proj + w.mean
    np.testing.assert_allclose(recon, expected, atol=1e-8)
    # idempotent
    np.testing.assert_allclose(dewhiten(w, whiten(w, recon)), recon,
                               atol=1e-8)


def test_fit_whitener_rank_deficient_raises(rng):
    # rank 2 data in 5 dims cannot support k=4
    base = rng.normal(size=(2, 5))
    x = rng.normal(size=(100, 2)) @ base
    with pytest.raises(DomainError):
        fit_whitener(x, 4)
    w = fit_whitener(x, 2)
    assert w.k == 2


def test_fit_whitener_input_validation(rng):
    with pytest.raises(DomainError):
        fit_whitener(rng.normal(size=(1, 4)), 2)
    with pytest.raises(DomainError):
        fit_whitener(rng.normal(size=(10, 4)), 5)


# --- gratings ---------------------------------------------------------------

def test_grating_grid_size_and_order():
    g, specs = generate_gratings(12)
    assert g.shape == (8 * 6 * 4, 144)
    assert len(specs) == 192
    # orientation-major ordering
    assert specs[0].orientation_deg == 0.0
    assert specs[23].orientation_deg == 0.0
    assert specs[24].orientation_deg == 22.5
    # frequency then phase within a block
    assert specs[0].frequency == specs[3].frequency
    assert specs[0].phase == 0.0
    assert specs[1].phase == pytest.approx(math.pi / 2)


def test_grating_zero_orientation_rows_constant():
    # orientation 0: intensity varies along columns only
    g, specs = generate_gratings(8, orientations_deg=[0.0], frequencies=[2.0],
                                 phases=[0.3], amplitude=1.5)
    patch = g[0].reshape(8, 8)
    for r in range(1, 8):
        np.testing.assert_allclose(patch[r], patch[0], atol=1e-12)
    np.testing.assert_allclose(
        patch[0], 1.5 * np.cos(2 * np.pi * 2.0 * np.arange(8) / 8 + 0.3),
        atol=1e-12)


def test_grating_90_degrees_columns_constant():
    g, _ = generate_gratings(8, orientations_deg=[90.0], frequencies=[1.0],
                             phases=[0.0])
    patch = g[0].reshape(8, 8)
    for c in range(1, 8):
        np.testing.assert_allclose(patch[:, c], patch[:, 0], atol=1e-12)


def test_grating_amplitude_linearity():
    g1, _ = generate_gratings(10, amplitude=1.0)
    g2, _ = generate_gratings(10, amplitude=2.0)
    np.testing.assert_allclose(g2, 2.0 * g1, atol=1e-12)


def test_default_grids():
    assert list(default_orientations()) == [0.0, 22.5, 45.0, 67.5, 90.0,
                                            112.5, 135.0, 157.5]
    f = default_frequencies(12)
    assert f[0] == pytest.approx(1.0)
    assert f[-1] == pytest.approx(3.0)
    assert len(f) == 6
    assert len(default_phases()) == 4


def test_target_amplitude_matches_norms(rng):
    patches = rng.normal(size=(200, 64)) * 3.0 + 5.0
    unit, _ = generate_gratings(8, amplitude=1.0)
    a = target_amplitude(patches, unit)
    scaled, _ = generate_gratings(8, amplitude=a)
    got = float(np.mean(np.linalg.norm(scaled, axis=1)))
    want = mean_centered_norm(patches)
    assert got == pytest.approx(want, abs=1e-9)


def test_target_amplitude_zero_patches():
    unit, _ = generate_gratings(8, amplitude=1.0)
    assert target_amplitude(np.zeros((10, 64)), unit) == 0.0


def test_group_by_orientation():
    g, specs = generate_gratings(8)
    orientations, groups = group_by_orientation(g, specs)
    assert len(orientations) == 8
    assert all(grp.shape == (24, 64) for grp in groups)
    np.testing.assert_array_equal(groups[0], g[:24])


# --- synthetic corpus -------------------------------------------------------

def test_dead_leaves_range_and_determinism():
    img1 = dead_leaves_image(32, np.random.default_rng(7))
    img2 = dead_leaves_image(32, np.random.default_rng(7))
    np.testing.assert_array_equal(img1, img2)
    assert img1.shape == (32, 32)
    assert img1.min() >= 0.0 and img1.max() <= 1.0
    # occlusion scenes are piecewise constant: many exact repeats
    assert len(np.unique(img1)) < 300


def test_make_corpus_deterministic_and_distinct():
    imgs = make_corpus(4, 24, seed=3)
    again = make_corpus(4, 24, seed=3)
    assert len(imgs) == 4
    for a, b in zip(imgs, again):
        np.testing.assert_array_equal(a, b)
    assert not np.array_equal(imgs[0], imgs[1])


def test_corpus_has_oriented_structure(rng):
    # whitening a dead-leaves patch set must succeed at moderate k and
    # concentrate variance in the leading components
    imgs = make_corpus(6, 48, seed=11)
    cfg = PatchConfig(patch_side=8, n_patches=2000, train_fraction=0.9,
                      pca_k=30)
    train, _ = extract_patches(imgs, cfg, rng)
    w = fit_whitener(train, 30)
    assert w.eigvals[0] > 10 * w.eigvals[29]
