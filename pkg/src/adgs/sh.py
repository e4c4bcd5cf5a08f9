"""Real spherical harmonics up to degree 3 (3DGS sign convention)."""

from __future__ import annotations

import numpy as np

MAX_DEGREE = 3
N_COEFFS = (MAX_DEGREE + 1) ** 2

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
      -1.0925484305920792, 0.5462742152960396)
C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
      0.3731763325901154, -0.4570457994644658, 1.445305721320277,
      -0.5900435899266435)


def n_coeffs(degree: int) -> int:
    return (degree + 1) ** 2


def sh_basis(dirs: np.ndarray, degree: int = MAX_DEGREE, with_grad: bool = False):
    """Evaluate the basis at unit directions ``dirs`` (N, 3).

    Returns ``Y`` of shape (N, 16) with columns above ``degree`` left at zero.
    With ``with_grad`` also returns ``dY`` (N, 16, 3), the partials with
    respect to the (unnormalized) x, y, z components.
    """
    dirs = np.asarray(dirs, dtype=np.float64)
    n = dirs.shape[0]
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    Y = np.zeros((n, N_COEFFS))
    dY = np.zeros((n, N_COEFFS, 3)) if with_grad else None
    Y[:, 0] = C0
    if degree >= 1:
        Y[:, 1] = -C1 * y
        Y[:, 2] = C1 * z
        Y[:, 3] = -C1 * x
        if with_grad:
            dY[:, 1, 1] = -C1
            dY[:, 2, 2] = C1
            dY[:, 3, 0] = -C1
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        Y[:, 4] = C2[0] * x * y
        Y[:, 5] = C2[1] * y * z
        Y[:, 6] = C2[2] * (2.0 * zz - xx - yy)
        Y[:, 7] = C2[3] * x * z
        Y[:, 8] = C2[4] * (xx - yy)
        if with_grad:
            dY[:, 4, 0] = C2[0] * y
            dY[:, 4, 1] = C2[0] * x
            dY[:, 5, 1] = C2[1] * z
            dY[:, 5, 2] = C2[1] * y
            dY[:, 6, 0] = -2.0 * C2[2] * x
            dY[:, 6, 1] = -2.0 * C2[2] * y
            dY[:, 6, 2] = 4.0 * C2[2] * z
            dY[:, 7, 0] = C2[3] * z
            dY[:, 7, 2] = C2[3] * x
            dY[:, 8, 0] = 2.0 * C2[4] * x
            dY[:, 8, 1] = -2.0 * C2[4] * y
    if degree >= 3:
        Y[:, 9] = C3[0] * y * (3.0 * xx - yy)
        Y[:, 10] = C3[1] * x * y * z
        Y[:, 11] = C3[2] * y * (4.0 * zz - xx - yy)
        Y[:, 12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
        Y[:, 13] = C3[4] * x * (4.0 * zz - xx - yy)
        Y[:, 14] = C3[5] * z * (xx - yy)
        Y[:, 15] = C3[6] * x * (xx - 3.0 * yy)
        if with_grad:
            dY[:, 9, 0] = C3[0] * 6.0 * x * y
            dY[:, 9, 1] = C3[0] * (3.0 * xx - 3.0 * yy)
            dY[:, 10, 0] = C3[1] * y * z
            dY[:, 10, 1] = C3[1] * x * z
            dY[:, 10, 2] = C3[1] * x * y
            dY[:, 11, 0] = -2.0 * C3[2] * x * y
            dY[:, 11, 1] = C3[2] * (4.0 * zz - xx - 3.0 * yy)
            dY[:, 11, 2] = 8.0 * C3[2] * y * z
            dY[:, 12, 0] = -6.0 * C3[3] * x * z
            dY[:, 12, 1] = -6.0 * C3[3] * y * z
            dY[:, 12, 2] = C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)
            dY[:, 13, 0] = C3[4] * (4.0 * zz - 3.0 * xx - yy)
            dY[:, 13, 1] = -2.0 * C3[4] * x * y
            dY[:, 13, 2] = 8.0 * C3[4] * x * z
            dY[:, 14, 0] = 2.0 * C3[5] * x * z
            dY[:, 14, 1] = -2.0 * C3[5] * y * z
            dY[:, 14, 2] = C3[5] * (xx - yy)
            dY[:, 15, 0] = C3[6] * (3.0 * xx - 3.0 * yy)
            dY[:, 15, 1] = -6.0 * C3[6] * x * y
    if with_grad:
        return Y, dY
    return Y


def sh_eval(sh_coeffs, direction, degree: int = MAX_DEGREE) -> np.ndarray:
    """Color of one Gaussian seen along ``direction``: 0.5 + SH, clamped at 0."""
    coeffs = np.asarray(sh_coeffs, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64).reshape(1, 3)
    Y = sh_basis(d, degree)[0]
    k = n_coeffs(degree)
    return np.maximum(Y[:k] @ coeffs[:k] + 0.5, 0.0)


def sh_colors(sh_coeffs: np.ndarray, dirs: np.ndarray, degree: int):
    """Vectorized colors for N Gaussians. Returns (colors, raw) with raw unclamped."""
    k = n_coeffs(degree)
    Y = sh_basis(dirs, degree)
    raw = np.einsum("nk,nkc->nc", Y[:, :k], sh_coeffs[:, :k, :]) + 0.5
    return np.maximum(raw, 0.0), raw


def rgb_to_sh_dc(rgb):
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / C0
