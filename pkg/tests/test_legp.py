import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from timessm import autodiff as ad
from timessm.legp import (
    IllConditioned,
    build_two_scale,
    composite_gauss,
    default_scales,
    gauss_legendre,
    legp_block,
    orthonormal_basis,
    piecewise_projection,
    project_down,
    project_up,
    projection_error,
)


def coefficients(f, k, a=0.0, b=1.0):
    """Orthonormal Legendre coefficients of f on [a, b], rescaled to [0, 1]."""
    x, w = gauss_legendre(40)
    t = 0.5 * (x + 1)
    return (orthonormal_basis(k, t) * 0.5 * w) @ f(a + (b - a) * t)


def test_gauss_nodes_small():
    x, w = gauss_legendre(2)
    np.testing.assert_allclose(x, [-1 / np.sqrt(3), 1 / np.sqrt(3)], rtol=1e-15)
    np.testing.assert_allclose(w, [1, 1], rtol=1e-15)
    x, w = gauss_legendre(3)
    np.testing.assert_allclose(x, [-np.sqrt(0.6), 0, np.sqrt(0.6)], atol=1e-15)
    np.testing.assert_allclose(w, [5 / 9, 8 / 9, 5 / 9], rtol=1e-14)


@pytest.mark.parametrize("k", [1, 4, 17, 64, 256])
def test_gauss_weights_sum_and_match_reference(k):
    x, w = gauss_legendre(k)
    assert abs(w.sum() - 2.0) < 1e-13
    xr, wr = np.polynomial.legendre.leggauss(k)
    np.testing.assert_allclose(x, xr, atol=1e-13)
    np.testing.assert_allclose(w, wr, atol=1e-13)


def test_quartic_integral():
    t, w = composite_gauss(1, 3)
    assert abs(np.sum(w * (2 * t - 1) ** 4) * 2 - 0.4) < 1e-15


def test_gauss_rejects_out_of_range():
    with pytest.raises(ValueError):
        gauss_legendre(0)
    with pytest.raises(ValueError):
        gauss_legendre(257)


def test_constant_basis_two_scale():
    ops = build_two_scale(1)
    np.testing.assert_allclose(ops.H_left, [[1 / np.sqrt(2)]], rtol=1e-15)
    np.testing.assert_allclose(ops.H_right, [[1 / np.sqrt(2)]], rtol=1e-15)


@pytest.mark.parametrize("k", [1, 2, 5, 16, 64])
def test_rows_orthonormal_and_pseudo_inverse(k):
    ops = build_two_scale(k)
    S = np.hstack([ops.H_left, ops.H_right])
    np.testing.assert_allclose(S @ S.T, np.eye(k), atol=1e-12)
    np.testing.assert_array_equal(ops.Hd_left, ops.H_left.T)


@pytest.mark.parametrize("k", [1, 3, 8])
def test_up_then_down_is_identity_on_parent(k):
    ops = build_two_scale(k)
    c = np.random.default_rng(k).standard_normal((5, k))
    left, right = project_down(c, ops.Hd_left, ops.Hd_right)
    np.testing.assert_allclose(project_up(left, right, ops.H_left, ops.H_right), c, atol=1e-13)


@pytest.mark.parametrize("k", [2, 4, 7])
def test_merge_is_exact_for_polynomials(k):
    # degree < k polynomials lie in both spaces, so the merge is lossless
    rng = np.random.default_rng(k)
    poly = np.polynomial.Polynomial(rng.standard_normal(k))
    ops = build_two_scale(k)
    left = coefficients(poly, k, 0.0, 0.5)
    right = coefficients(poly, k, 0.5, 1.0)
    parent = coefficients(poly, k)
    np.testing.assert_allclose(project_up(left, right, ops.H_left, ops.H_right), np.sqrt(2) * parent, atol=1e-12)


def test_constants_preserved():
    # the scaled mean of two constant halves is the constant
    ops = build_two_scale(4)
    left = coefficients(lambda t: 3.0 + 0 * t, 4, 0, 0.5)
    up = project_up(left, left, ops.H_left, ops.H_right) / np.sqrt(2)
    np.testing.assert_allclose(up, [3.0, 0, 0, 0], atol=1e-13)


@pytest.mark.parametrize("k", [2, 3, 6])
def test_linear_ramp_keeps_coarse_energy(k):
    ops = build_two_scale(k)
    ramp = lambda t: t  # noqa: E731
    left, right = coefficients(ramp, k, 0, 0.5), coefficients(ramp, k, 0.5, 1)
    coarse = project_up(left, right, ops.H_left, ops.H_right)
    fine_energy = np.sum(left**2) + np.sum(right**2)
    assert np.sum(coarse**2) / fine_energy > 0.8


def test_ill_conditioned_operators_rejected():
    with pytest.raises(IllConditioned):
        build_two_scale(4, tol=-1.0)
    with pytest.raises(ValueError):
        build_two_scale(65)


def test_default_scales():
    assert default_scales(96) == 6
    assert default_scales(1) == 0
    assert default_scales(6) == 2


def test_block_without_scales_is_identity():
    x = np.random.default_rng(0).standard_normal((2, 6, 3))
    assert legp_block(x, build_two_scale(3), 0) is x
    np.testing.assert_array_equal(legp_block(x, build_two_scale(3), 0, include_input=False), 0 * x)


def brute_block(x, ops, r_max):
    """Per-position loop oracle for a (length, k) trajectory."""
    levels = [x]
    for _ in range(r_max):
        cur = levels[-1]
        if len(cur) % 2:
            cur = np.vstack([cur, np.zeros((1, cur.shape[1]))])
        levels.append(np.array([ops.H_left @ cur[2 * i] + ops.H_right @ cur[2 * i + 1] for i in range(len(cur) // 2)]))
    total = x.copy()
    for r in range(1, r_max + 1):
        for pos in range(len(x)):
            c = levels[r][pos >> r]
            for bit in range(r - 1, -1, -1):
                c = (ops.Hd_right if (pos >> bit) & 1 else ops.Hd_left) @ c
            total[pos] += c
    return total


@pytest.mark.parametrize("length,r_max", [(8, 3), (7, 2), (6, 2), (96, 6)])
def test_block_matches_loop_oracle(length, r_max):
    ops = build_two_scale(4)
    x = np.random.default_rng(length).standard_normal((length, 4))
    got = legp_block(x[None], ops, r_max)[0]
    np.testing.assert_allclose(got, brute_block(x, ops, r_max), atol=1e-12)


def test_block_with_unitary_basis_commutes():
    rng = np.random.default_rng(1)
    ops = build_two_scale(4)
    Q, _ = np.linalg.qr(rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4)))
    x_leg = rng.standard_normal((1, 8, 4))
    x_modal = np.einsum("blm,nm->bln", x_leg, Q.conj().T)
    got = legp_block(x_modal, ops, 3, basis=Q)
    expected = np.einsum("bln,mn->blm", legp_block(x_leg, ops, 3), Q.conj().T)
    np.testing.assert_allclose(got, expected, atol=1e-12)


def test_block_gradient():
    ops = build_two_scale(3)
    X = ad.Param(np.random.default_rng(2).standard_normal((2, 6, 3)), "x")
    w = np.random.default_rng(3).standard_normal((2, 6, 3))
    err = ad.grad_check(lambda t: ad.sum(ad.square(legp_block(t.watch(X), ops, 2)) * w), [X])
    assert err < 1e-6


def test_piecewise_projection_reproduces_piecewise_polynomials():
    t, w = composite_gauss(64, 6)
    f = np.where(t < 0.5, 2 * t**2, 1 - t)
    np.testing.assert_allclose(piecewise_projection(f, t, w, 3, 1), f, atol=1e-12)


def test_projection_error_of_linear_with_constants():
    # ||t - Q_r^1 t|| = 2^-r / sqrt(12) exactly
    for r in range(4):
        assert projection_error(lambda t: t, 1, r) == pytest.approx(2.0**-r / np.sqrt(12), rel=1e-10)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 5), st.integers(0, 4))
def test_projection_error_decreases_with_scale(k, r):
    f = lambda t: np.sin(2 * np.pi * t)  # noqa: E731
    assert projection_error(f, k, r + 1) <= projection_error(f, k, r) + 1e-14
