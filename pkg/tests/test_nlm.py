import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ldnlm.errors import ParameterError, ShapeError
from ldnlm.nlm import NlmConfig, local_filter, nlm_denoise, nlm_weights, resolve_h

from _oracles import correlate_loops, nlm_quadruple_loop


def test_local_filter_matches_loop_oracle(rng):
    img = rng.random((9, 11)).astype(np.float32) * 100
    kern = rng.random((3, 5))
    np.testing.assert_allclose(local_filter(img, kern), correlate_loops(img, kern), rtol=1e-6)


def test_local_filter_box_average_of_constant():
    out = local_filter(np.full((6, 6), 7.0), np.full((3, 3), 1 / 9))
    np.testing.assert_allclose(out, 7.0, rtol=1e-6)


def test_local_filter_rejects_even_kernel():
    with pytest.raises(ShapeError):
        local_filter(np.ones((4, 4)), np.ones((2, 3)))


@pytest.mark.parametrize("seed", range(3))
def test_kernels_match_quadruple_loop_exactly(nlm_kernel, seed):
    img = np.random.default_rng(seed).random((12, 12)).astype(np.float32) * 200
    cfg = NlmConfig(search_radius=3, patch_radius=1)
    expected = nlm_quadruple_loop(img, 3, 1, resolve_h(img, cfg))
    np.testing.assert_array_equal(nlm_denoise(img, cfg, kernel=nlm_kernel), expected)


def test_backends_bit_identical(rng):
    from ldnlm import nlm

    img = rng.random((20, 17)).astype(np.float32) * 50
    cfg = NlmConfig(search_radius=4, patch_radius=2, h=30.0)
    a = nlm_denoise(img, cfg, kernel=nlm._nlm_numba)
    b = nlm_denoise(img, cfg, kernel=nlm._nlm_numpy)
    assert a.tobytes() == b.tobytes()


def test_constant_is_fixed_point(nlm_kernel):
    img = np.full((10, 10), 42.0, dtype=np.float32)
    out = nlm_denoise(img, NlmConfig(search_radius=3, patch_radius=1), kernel=nlm_kernel)
    np.testing.assert_array_equal(out, img)


@pytest.mark.parametrize("k", range(8))
def test_dihedral_equivariance(rng, k):
    img = rng.random((14, 14)).astype(np.float32) * 100
    cfg = NlmConfig(search_radius=3, patch_radius=1, h=40.0)

    def tr(a):
        a = np.rot90(a, k % 4)
        return np.ascontiguousarray(a.T if k >= 4 else a)

    np.testing.assert_allclose(nlm_denoise(tr(img), cfg), tr(nlm_denoise(img, cfg)), rtol=1e-5)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(0, 6), st.integers(0, 6), st.floats(1.0, 500.0))
def test_weights_are_normalized(seed, r, c, h):
    win = np.random.default_rng(seed).random((7, 7)).astype(np.float32) * 100
    w = nlm_weights(win, (r, c), NlmConfig(search_radius=3, patch_radius=1, h=h))
    assert np.all(w >= 0)
    assert abs(w.sum() - 1.0) < 1e-6
    assert w[r, c] == w.max()


def test_smoothing_reduces_speckle_variance():
    from ldnlm.speckle import NoiseSpec, synthesize_speckled

    noisy = synthesize_speckled(np.full((40, 40), 100.0), NoiseSpec(1.0, 5))
    out = nlm_denoise(noisy, NlmConfig(search_radius=5, patch_radius=1))
    assert out.var() < 0.25 * noisy.var()


def test_output_stays_within_input_range(rng):
    img = rng.random((15, 15)).astype(np.float32) * 80 + 10
    out = nlm_denoise(img, NlmConfig(search_radius=3, patch_radius=1))
    assert out.min() >= img.min() - 1e-4 and out.max() <= img.max() + 1e-4


def test_auto_h_scales_with_mean_and_looks():
    img = np.full((4, 4), 10.0)
    h1 = resolve_h(img, NlmConfig(patch_radius=1))
    assert h1 == pytest.approx(np.sqrt(2 * 9) * 10.0)
    assert resolve_h(img, NlmConfig(patch_radius=1, looks=4)) == pytest.approx(h1 / 2)
    assert resolve_h(img, NlmConfig(h=3.0)) == 3.0


@pytest.mark.parametrize("kwargs", [dict(search_radius=0), dict(patch_radius=10), dict(h=0.0),
                                    dict(looks=-1.0), dict(boundary="wrap")])
def test_config_validation(kwargs):
    with pytest.raises(ParameterError):
        NlmConfig(**kwargs)


def test_weights_center_outside_window():
    with pytest.raises(ShapeError):
        nlm_weights(np.ones((5, 5)), (5, 0))
