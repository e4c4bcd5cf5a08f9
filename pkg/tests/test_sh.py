import numpy as np
import pytest
from scipy.special import sph_harm_y

from adgs.sh import C0, n_coeffs, rgb_to_sh_dc, sh_basis, sh_eval


def complex_sh_oracle(dirs):
    """Real basis built from scipy's complex harmonics (Condon-Shortley phase
    kept): sqrt(2) Re Y_l^m for m > 0, sqrt(2) Im Y_l^|m| for m < 0."""
    x, y, z = dirs.T
    theta = np.arccos(np.clip(z, -1, 1))
    phi = np.arctan2(y, x)
    cols = []
    for l in range(4):
        for m in range(-l, l + 1):
            c = sph_harm_y(l, abs(m), theta, phi)
            if m > 0:
                cols.append(np.sqrt(2) * c.real)
            elif m < 0:
                cols.append(np.sqrt(2) * c.imag)
            else:
                cols.append(c.real)
    return np.stack(cols, axis=1)


def unit(rng, n):
    d = rng.standard_normal((n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def test_basis_matches_scipy_oracle(rng):
    d = unit(rng, 200)
    assert np.allclose(sh_basis(d, 3), complex_sh_oracle(d), atol=1e-12)


def test_basis_is_orthonormal_on_sphere():
    # Monte Carlo Gram matrix with many samples
    d = unit(np.random.default_rng(0), 400_000)
    Y = sh_basis(d, 3)
    gram = 4 * np.pi * Y.T @ Y / len(d)
    assert np.allclose(gram, np.eye(16), atol=0.02)


def test_basis_gradient_matches_finite_differences(rng):
    d = unit(rng, 20)
    _, dY = sh_basis(d, 3, with_grad=True)
    h = 1e-6
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        num = (sh_basis(d + e, 3) - sh_basis(d - e, 3)) / (2 * h)
        assert np.allclose(dY[:, :, j], num, atol=1e-7)


def test_degree_masks_higher_bands(rng):
    d = unit(rng, 5)
    Y1 = sh_basis(d, 1)
    assert np.all(Y1[:, 4:] == 0)
    assert n_coeffs(0) == 1 and n_coeffs(3) == 16


def test_dc_only_colour_is_direction_independent(rng):
    sh = np.zeros((16, 3))
    sh[0] = rgb_to_sh_dc(np.array([0.2, 0.5, 0.9]))
    for d in unit(rng, 5):
        assert np.allclose(sh_eval(sh, d, 3), [0.2, 0.5, 0.9])
    assert np.isclose(rgb_to_sh_dc(0.5 + C0), 1.0)


@pytest.mark.parametrize("degree", [0, 1, 2, 3])
def test_colour_clamped_at_zero(degree):
    sh = np.zeros((16, 3))
    sh[0] = -5.0
    assert np.all(sh_eval(sh, np.array([0.0, 0.0, 1.0]), degree) == 0.0)
