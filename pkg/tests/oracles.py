"""Independent brute-force oracles used by the tests.

Everything here is written against the mathematical definitions (explicit
sums, numpy FFT, dense matrices) and stays independent of the package's
vectorized implementations it checks.
"""

import numpy as np


def dft2_centered(image):
    """Centered 2-D DFT via numpy's FFT: Y[v, u] = sum_p x[p] e^{-2pi i (u px/W + v py/H)}."""
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(image)))


def idft2_centered_adjoint(samples_grid):
    """Conjugate-transpose of :func:`dft2_centered` (unnormalized)."""
    h, w = samples_grid.shape
    return np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(samples_grid))) * (h * w)


def nudft_loops(image, coords):
    """Exact non-uniform DFT as an explicit per-sample double loop (slow)."""
    h, w = image.shape
    py = np.arange(h) - h // 2
    px = np.arange(w) - w // 2
    out = np.zeros(coords.shape[0], dtype=complex)
    for m, (kx, ky) in enumerate(coords):
        acc = 0.0 + 0.0j
        for yy in range(h):
            for xx in range(w):
                acc += image[yy, xx] * np.exp(-2j * np.pi * (kx * px[xx] + ky * py[yy]))
        out[m] = acc
    return out


def cartesian_coords(h, w):
    """Full Cartesian grid of k-space coordinates in row-major (v, u) order."""
    u = np.arange(w) - w // 2
    v = np.arange(h) - h // 2
    kx, ky = np.meshgrid(u / w, v / h)
    return np.stack([kx.ravel(), ky.ravel()], axis=1)


def dense_encoding_matrix(coords, shape):
    """Materialized E with E[m, p] = exp(-2pi i k_m . p), pixels row-major."""
    h, w = shape
    py = (np.arange(h) - h // 2).astype(float)
    px = (np.arange(w) - w // 2).astype(float)
    pyg, pxg = np.meshgrid(py, px, indexing="ij")
    pix = np.stack([pxg.ravel(), pyg.ravel()], axis=1)  # (N, 2) as (px, py)
    phase = coords @ pix.T  # (M, N): kx*px + ky*py
    return np.exp(-2j * np.pi * phase)


def conv2d_loops(x, kernel, bias, stride, padding):
    """Direct-summation cross-correlation oracle."""
    cin, h, w = x.shape
    cout, _, kh, kw = kernel.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((cout, ho, wo))
    for o in range(cout):
        for i in range(ho):
            for j in range(wo):
                acc = 0.0
                for c in range(cin):
                    for a in range(kh):
                        for b in range(kw):
                            acc += kernel[o, c, a, b] * xp[c, i * stride + a, j * stride + b]
                out[o, i, j] = acc + (bias[o] if bias is not None else 0.0)
    return out


def cg_least_squares(op, samples, n_iter, x0=None):
    """Conjugate gradient on the normal equations E^H E x = E^H y."""
    b = op.adjoint(samples)
    x = np.zeros(op.shape, dtype=complex) if x0 is None else x0.astype(complex).copy()
    r = b - op.normal(x)
    p = r.copy()
    rs = float(np.vdot(r, r).real)
    for _ in range(n_iter):
        ap = op.normal(p)
        denom = float(np.vdot(p, ap).real)
        if denom <= 0 or rs == 0:
            break
        alpha = rs / denom
        x = x + alpha * p
        r = r - alpha * ap
        rs_new = float(np.vdot(r, r).real)
        if np.sqrt(rs_new) < 1e-14:
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


def power_iteration_norm(matvec, shape, n_iter=60, seed=0):
    """Largest singular value of a linear map given its normal-equations matvec."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    v /= np.linalg.norm(v)
    sigma_sq = 0.0
    for _ in range(n_iter):
        u = matvec(v)
        sigma_sq = float(np.vdot(v, u).real)
        nrm = np.linalg.norm(u)
        if nrm == 0:
            return 0.0
        v = u / nrm
    return np.sqrt(max(sigma_sq, 0.0))


def soft_threshold_scalar(z, t):
    """Complex scalar soft-threshold."""
    mag = abs(z)
    if mag <= t:
        return 0.0 + 0.0j
    return (mag - t) * z / mag
