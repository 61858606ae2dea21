"""Compiled hot loops: d = 1 steppers, histogram binning, separable kernel passes.

Everything here is plain-array numba; orchestration, validation and shapes
live in the public modules.  Kernel polynomials arrive as ascending
coefficient arrays; cell-averaged kernel application uses sampled
antiderivative tables (lo, dx, values) with linear interpolation, where the
caller pre-scales the table values by 1/cell_width.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# model codes, kept in sync with models.py
FAST_FREE = 0
FAST_HARMONIC = 1
FAST_DOUBLE_WELL = 2


@njit(cache=True, inline="always")
def _drift1(code, gamma, spring, x, y):
    if code == FAST_FREE:
        return 0.0
    if code == FAST_HARMONIC:
        return -(gamma * y + spring * x)
    # double well: V'(x) = x^3 - x
    return -(gamma * y + x * x * x - x)


@njit(cache=True)
def em_chunk_d1(code, gamma, spring, sigma, x, y, dt, rng, xs, ys, trapezoid):
    """Fill one chunk of an Euler path; returns (x_end, y_end, bad_index or -1).

    xs[i], ys[i] receive the state *after* step i; the caller owns the sample
    at the chunk start.
    """
    n = xs.shape[0]
    sdt = np.sqrt(dt)
    for i in range(n):
        yn = y + _drift1(code, gamma, spring, x, y) * dt + sigma * sdt * rng.standard_normal()
        if trapezoid:
            xn = x + 0.5 * (y + yn) * dt
        else:
            xn = x + y * dt
        x = xn
        y = yn
        xs[i] = x
        ys[i] = y
        if i & 1023 == 0 and not (np.isfinite(x) and np.isfinite(y)):
            return x, y, i
    if not (np.isfinite(x) and np.isfinite(y)):
        return x, y, n - 1
    return x, y, -1


@njit(cache=True)
def free_exact_chunk_d1(x, y, dt, sigma, rng, xs, ys):
    """Exact free-model transition sampling: per step,
    dY = sigma sqrt(dt) xi2 and dX = y dt + sigma dt^{3/2} (xi2/2 + xi1/sqrt(12))."""
    n = xs.shape[0]
    sdt = np.sqrt(dt)
    c1 = sigma * dt * sdt * 0.5
    c2 = sigma * dt * sdt / np.sqrt(12.0)
    for i in range(n):
        xi2 = rng.standard_normal()
        xi1 = rng.standard_normal()
        x = x + y * dt + c1 * xi2 + c2 * xi1
        y = y + sigma * sdt * xi2
        xs[i] = x
        ys[i] = y
    return x, y


@njit(cache=True, inline="always")
def _linear_cell(u):
    """Linear-binning split: cell index pair and the weight of the left cell.

    u is the position in units of cells from the first cell center; mass goes
    to the two nearest cell centers proportionally to proximity, which keeps
    the binned first moment exact (second-order placement error).
    """
    i0 = int(np.floor(u))
    return i0, u - i0


@njit(cache=True)
def em_hists_d1(
    code, gamma, spring, sigma, x, y, dt, n, rng,
    Hd, Hn, bx0, by0, inv_db_x, inv_db_y, want_num, trapezoid,
):
    """Fused Euler stepping + occupation/increment histograms (no path storage).

    Hd accumulates time (weight dt) at the pre-step state; Hn accumulates the
    velocity increment of the step, which is the integrand pairing for
    stochastic-integral estimators.  Samples are linear-binned (split over the
    four neighboring cells).  Returns (x, y, bad_index or -1).
    """
    nbx, nby = Hd.shape
    sdt = np.sqrt(dt)
    for i in range(n):
        ux = (x - bx0) * inv_db_x - 0.5
        uy = (y - by0) * inv_db_y - 0.5
        yn = y + _drift1(code, gamma, spring, x, y) * dt + sigma * sdt * rng.standard_normal()
        if -1.0 < ux < nbx and -1.0 < uy < nby:
            ix, fx = _linear_cell(ux)
            iy, fy = _linear_cell(uy)
            dyw = yn - y
            for a in range(2):
                ja = ix + a
                if ja < 0 or ja >= nbx:
                    continue
                wa = fx if a == 1 else 1.0 - fx
                for b in range(2):
                    jb = iy + b
                    if jb < 0 or jb >= nby:
                        continue
                    w = wa * (fy if b == 1 else 1.0 - fy)
                    Hd[ja, jb] += w * dt
                    if want_num:
                        Hn[ja, jb] += w * dyw
        if trapezoid:
            x = x + 0.5 * (y + yn) * dt
        else:
            x = x + y * dt
        y = yn
        if i & 1023 == 0 and not (np.isfinite(x) and np.isfinite(y)):
            return x, y, i
    if not (np.isfinite(x) and np.isfinite(y)):
        return x, y, n - 1
    return x, y, -1


@njit(cache=True, inline="always")
def _polyval(coef, u):
    v = 0.0
    for j in range(coef.shape[0] - 1, -1, -1):
        v = v * u + coef[j]
    return v


@njit(cache=True)
def em_bump_averages_d1(
    code, gamma, spring, sigma, x, y, dt, n, rng,
    cx, cy, s1s, s2s, coef1, coef2, out,
):
    """Fused Euler stepping + time averages of product bumps at several scales.

    out[j] receives (1/T) * sum_k f_j(Z_k) dt with
    f_j(x, y) = K1((cx - x)/s1s[j]) K2((cy - y)/s2s[j]) (unnormalized bump).
    """
    m = s1s.shape[0]
    sdt = np.sqrt(dt)
    for i in range(n):
        for j in range(m):
            u = (cx - x) / s1s[j]
            if -0.5 <= u <= 0.5:
                v = (cy - y) / s2s[j]
                if -0.5 <= v <= 0.5:
                    out[j] += _polyval(coef1, u) * _polyval(coef2, v)
        yn = y + _drift1(code, gamma, spring, x, y) * dt + sigma * sdt * rng.standard_normal()
        x = x + y * dt
        y = yn
    for j in range(m):
        out[j] /= n
    return x, y


@njit(cache=True)
def em_point_numerators_d1(
    code, gamma, spring, sigma, x, y, dt, n, rng,
    zx, zy, h1s, h2s, coef1, coef2, out,
):
    """Fused Euler stepping + stochastic-integral numerator at point probes.

    out[j] receives (1/T) sum_k (h1 h2)^{-1} K1((zx - X_k)/h1) K2((zy - Y_k)/h2)
    (Y_{k+1} - Y_k) for (h1, h2) = (h1s[j], h2s[j]).
    """
    m = h1s.shape[0]
    sdt = np.sqrt(dt)
    T = n * dt
    for i in range(n):
        yn = y + _drift1(code, gamma, spring, x, y) * dt + sigma * sdt * rng.standard_normal()
        dy = yn - y
        for j in range(m):
            u = (zx - x) / h1s[j]
            if -0.5 <= u <= 0.5:
                v = (zy - y) / h2s[j]
                if -0.5 <= v <= 0.5:
                    out[j] += _polyval(coef1, u) * _polyval(coef2, v) * dy / (h1s[j] * h2s[j])
        x = x + y * dt
        y = yn
    for j in range(m):
        out[j] /= T
    return x, y


@njit(cache=True)
def bin_points_d1(xs, ys, ws, bx0, by0, inv_db_x, inv_db_y, H):
    """Linear binning of weighted samples into H (out-of-window samples dropped)."""
    nbx, nby = H.shape
    for k in range(xs.shape[0]):
        ux = (xs[k] - bx0) * inv_db_x - 0.5
        uy = (ys[k] - by0) * inv_db_y - 0.5
        if not (-1.0 < ux < nbx and -1.0 < uy < nby):
            continue
        ix, fx = _linear_cell(ux)
        iy, fy = _linear_cell(uy)
        for a in range(2):
            ja = ix + a
            if ja < 0 or ja >= nbx:
                continue
            wa = fx if a == 1 else 1.0 - fx
            for b in range(2):
                jb = iy + b
                if jb < 0 or jb >= nby:
                    continue
                H[ja, jb] += ws[k] * wa * (fy if b == 1 else 1.0 - fy)


@njit(cache=True)
def grid_accumulate_d1(xs, ys, ws, gx0, gdx, ngx, gy0, gdy, ngy, h1, h2, coef1, coef2, out):
    """Exact kernel-weighted accumulation of samples onto a uniform grid.

    out[i, j] += w * (h1 h2)^{-1} K1((gx_i - X)/h1) K2((gy_j - Y)/h2) over all
    samples; only grid nodes inside the kernel support are touched.
    """
    inv = 1.0 / (h1 * h2)
    kx = np.empty(ngx)
    ky = np.empty(ngy)
    for k in range(xs.shape[0]):
        x = xs[k]
        y = ys[k]
        w = ws[k] * inv
        i0 = int(np.ceil((x - 0.5 * h1 - gx0) / gdx))
        i1 = int(np.floor((x + 0.5 * h1 - gx0) / gdx))
        if i0 < 0:
            i0 = 0
        if i1 > ngx - 1:
            i1 = ngx - 1
        if i1 < i0:
            continue
        j0 = int(np.ceil((y - 0.5 * h2 - gy0) / gdy))
        j1 = int(np.floor((y + 0.5 * h2 - gy0) / gdy))
        if j0 < 0:
            j0 = 0
        if j1 > ngy - 1:
            j1 = ngy - 1
        if j1 < j0:
            continue
        for i in range(i0, i1 + 1):
            kx[i - i0] = _polyval(coef1, (gx0 + i * gdx - x) / h1)
        for j in range(j0, j1 + 1):
            ky[j - j0] = _polyval(coef2, (gy0 + j * gdy - y) / h2)
        for i in range(i0, i1 + 1):
            wk = w * kx[i - i0]
            for j in range(j0, j1 + 1):
                out[i, j] += wk * ky[j - j0]


@njit(cache=True, inline="always")
def _ik_interp(u, lo, dx, vals):
    t = (u - lo) / dx
    m = vals.shape[0]
    if t <= 0.0:
        return vals[0]
    if t >= m - 1:
        return vals[m - 1]
    it = int(t)
    fr = t - it
    return vals[it] * (1.0 - fr) + vals[it + 1] * fr


@njit(cache=True)
def stage1_pass(H, bx0, db, ex, ik_lo, ik_dx, ik_vals, A):
    """x-reduction: A[i, :] += sum_j w_ij H[j, :] with w_ij the cell-averaged
    kernel weight of x-bin j at eval point ex[i] (table pre-scaled by 1/db)."""
    nbx, nby = H.shape
    m = ik_vals.shape[0]
    hi_s = ik_lo + (m - 1) * ik_dx
    for i in range(ex.shape[0]):
        j0 = int(np.floor((ex[i] + ik_lo - bx0) / db))
        j1 = int(np.floor((ex[i] + hi_s - bx0) / db))
        if j0 < 0:
            j0 = 0
        if j1 > nbx - 1:
            j1 = nbx - 1
        if j1 < j0:
            continue
        prev = _ik_interp(bx0 + j0 * db - ex[i], ik_lo, ik_dx, ik_vals)
        for j in range(j0, j1 + 1):
            cur = _ik_interp(bx0 + (j + 1) * db - ex[i], ik_lo, ik_dx, ik_vals)
            w = cur - prev
            prev = cur
            if w != 0.0:
                for iy in range(nby):
                    A[i, iy] += w * H[j, iy]


@njit(cache=True)
def stage2_pass(A, by0, db, ey, ik_lo, ik_dx, ik_vals, out):
    """y-reduction of a stage-1 array onto the eval grid (same weight scheme)."""
    ni, nby = A.shape
    m = ik_vals.shape[0]
    hi_s = ik_lo + (m - 1) * ik_dx
    for jj in range(ey.shape[0]):
        j0 = int(np.floor((ey[jj] + ik_lo - by0) / db))
        j1 = int(np.floor((ey[jj] + hi_s - by0) / db))
        if j0 < 0:
            j0 = 0
        if j1 > nby - 1:
            j1 = nby - 1
        if j1 < j0:
            continue
        for i in range(ni):
            prev = _ik_interp(by0 + j0 * db - ey[jj], ik_lo, ik_dx, ik_vals)
            acc = 0.0
            for j in range(j0, j1 + 1):
                cur = _ik_interp(by0 + (j + 1) * db - ey[jj], ik_lo, ik_dx, ik_vals)
                acc += (cur - prev) * A[i, j]
                prev = cur
            out[i, jj] += acc
