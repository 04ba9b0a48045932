import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from focusattn.errors import ParameterError, ShapeError
from focusattn.posenc import (
    FeatureMap,
    conditional_pe,
    init_peg_kernels,
    learnable_pe,
    make_pe,
    sinusoidal_pe,
)


def test_sinusoidal_single_pixel():
    np.testing.assert_allclose(sinusoidal_pe(1, 1, 4).data, [[0.0, -1.0, 0.0, -1.0]], rtol=0, atol=1e-12)


def test_sinusoidal_against_closed_form():
    H, W, D = 3, 5, 8
    pe = sinusoidal_pe(H, W, D).data
    y, x = 2, 1
    row = pe[y * W + x]
    for axis, coord, extent in ((0, y, H), (1, x, W)):
        p = (coord + 0.5) / extent * 2 * np.pi
        for j in range(D // 2):
            omega = 10000 ** (2 * (j // 2) / (D // 2))
            want = np.sin(p / omega) if j % 2 == 0 else np.cos(p / omega)
            assert row[axis * D // 2 + j] == pytest.approx(want, abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.sampled_from([4, 8, 12, 32]))
def test_sinusoidal_row_norm(H, W, D):
    pe = sinusoidal_pe(H, W, D)
    np.testing.assert_allclose((pe.data ** 2).sum(axis=1), D / 2, rtol=0, atol=1e-9)


def test_sinusoidal_axis_separability():
    pe = sinusoidal_pe(4, 6, 8).data.reshape(4, 6, 8)
    assert np.array_equal(pe[2, 0, :4], pe[2, 5, :4])
    assert np.array_equal(pe[0, 3, 4:], pe[3, 3, 4:])


def test_sinusoidal_channel_check():
    with pytest.raises(ParameterError):
        sinusoidal_pe(2, 2, 6)


def test_learnable_determinism_and_range():
    a, b = learnable_pe(3, 3, 8, seed=1), learnable_pe(3, 3, 8, seed=1)
    assert np.array_equal(a.data, b.data)
    assert not np.array_equal(a.data, learnable_pe(3, 3, 8, seed=2).data)
    one = learnable_pe(1, 1, 4, seed=0).data
    assert one.shape == (1, 4) and np.all(np.abs(one) <= 0.02)


def test_conditional_identity_and_zero(rng):
    feat = FeatureMap(3, 4, rng.standard_normal((12, 4)))
    k = np.zeros((4, 3, 3))
    assert np.array_equal(conditional_pe(feat, k).data, np.zeros((12, 4)))
    k[:, 1, 1] = 1
    assert np.array_equal(conditional_pe(feat, k).data, feat.data)


def test_conditional_constant_tap_counts():
    feat = FeatureMap(4, 5, np.full((20, 2), 1.5))
    out = conditional_pe(feat, np.ones((2, 3, 3))).data.reshape(4, 5, 2)
    assert np.all(out[1:3, 1:4] == 9 * 1.5)
    for y, x in [(0, 0), (0, 4), (3, 0), (3, 4)]:
        assert np.all(out[y, x] == 4 * 1.5)
    assert np.all(out[0, 2] == 6 * 1.5)


def test_conditional_locality(rng):
    feat = FeatureMap(5, 6, rng.standard_normal((30, 4)))
    k = init_peg_kernels(4, 3)
    base = conditional_pe(feat, k).data
    poked = feat.data.copy()
    poked[2 * 6 + 3] += 10.0
    changed = np.flatnonzero(np.any(conditional_pe(FeatureMap(5, 6, poked), k).data != base, axis=1))
    assert len(changed) <= 9
    assert {(i // 6, i % 6) for i in changed} <= {(y, x) for y in (1, 2, 3) for x in (2, 3, 4)}


def test_conditional_channel_mismatch(rng):
    with pytest.raises(ShapeError):
        conditional_pe(FeatureMap(2, 2, rng.standard_normal((4, 4))), np.zeros((3, 3, 3)))


@pytest.mark.parametrize("kind", ["sinusoidal", "learnable_absolute", "conditional"])
def test_make_pe_deterministic(kind, rng):
    feat = FeatureMap(4, 4, rng.standard_normal((16, 8)))
    a, b = make_pe(kind, feat, 5), make_pe(kind, feat, 5)
    assert a.kind == kind and a.data.shape == (16, 8)
    assert np.array_equal(a.data, b.data)
