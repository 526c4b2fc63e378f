"""Compiled per-candidate kernels for scoring and refining a population of poses.

Every candidate is processed by the same sequential code path, so a result
never depends on which other candidates share the call or how a population
is split into chunks. Reductions run in point-index order.
"""

from __future__ import annotations

import numba as nb
import numpy as np

from cemreg.nn_index import UNCOVERED, fallback_point, nn_lookup

DEGENERACY_RTOL = 1e-10


@nb.njit(cache=True, nogil=True)
def kabsch_core(P, Q, w):
    """Weighted rigid fit minimizing sum w_i |R p_i + t - q_i|^2.

    Returns (R, t, degenerate). ``degenerate`` is set when fewer than three
    weights are positive or the weighted cross-covariance has rank < 2.
    """
    n = P.shape[0]
    wsum = 0.0
    npos = 0
    pc = np.zeros(3)
    qc = np.zeros(3)
    for i in range(n):
        wi = w[i]
        if wi > 0.0:
            npos += 1
        wsum += wi
        for k in range(3):
            pc[k] += wi * P[i, k]
            qc[k] += wi * Q[i, k]
    R = np.eye(3)
    t = np.zeros(3)
    if npos < 3 or not wsum > 0.0:
        if wsum > 0.0:
            for k in range(3):
                t[k] = (qc[k] - pc[k]) / wsum
        return R, t, True
    for k in range(3):
        pc[k] /= wsum
        qc[k] /= wsum
    H = np.zeros((3, 3))
    for i in range(n):
        wi = w[i]
        if wi == 0.0:
            continue
        a0 = P[i, 0] - pc[0]
        a1 = P[i, 1] - pc[1]
        a2 = P[i, 2] - pc[2]
        b0 = Q[i, 0] - qc[0]
        b1 = Q[i, 1] - qc[1]
        b2 = Q[i, 2] - qc[2]
        H[0, 0] += wi * a0 * b0
        H[0, 1] += wi * a0 * b1
        H[0, 2] += wi * a0 * b2
        H[1, 0] += wi * a1 * b0
        H[1, 1] += wi * a1 * b1
        H[1, 2] += wi * a1 * b2
        H[2, 0] += wi * a2 * b0
        H[2, 1] += wi * a2 * b1
        H[2, 2] += wi * a2 * b2
    U, S, Vt = np.linalg.svd(H)
    degenerate = not (S[1] > DEGENERACY_RTOL * S[0])
    V = Vt.T
    D = np.eye(3)
    if np.linalg.det(V @ U.T) < 0.0:
        D[2, 2] = -1.0
    R = V @ D @ U.T
    for k in range(3):
        t[k] = qc[k] - (R[k, 0] * pc[0] + R[k, 1] * pc[1] + R[k, 2] * pc[2])
    return R, t, degenerate


@nb.njit(cache=True, nogil=True)
def _inlier_sum_forward(X, R, t, eps, tgt):
    # sum over source points of the inlier weight of R x + t against the target
    fine, coarse = tgt[0], tgt[1]
    eps2 = eps * eps
    acc = 0.0
    for i in range(X.shape[0]):
        x0 = X[i, 0]
        x1 = X[i, 1]
        x2 = X[i, 2]
        px = R[0, 0] * x0 + R[0, 1] * x1 + R[0, 2] * x2 + t[0]
        py = R[1, 0] * x0 + R[1, 1] * x1 + R[1, 2] * x2 + t[1]
        pz = R[2, 0] * x0 + R[2, 1] * x1 + R[2, 2] * x2 + t[2]
        d2, j = nn_lookup(px, py, pz, eps2, fine)
        if j == UNCOVERED:
            d2, j = nn_lookup(px, py, pz, eps2, coarse)
        if j == UNCOVERED:
            d2, j = fallback_point(px, py, pz, eps2, tgt)
        if j >= 0:
            acc += 1.0 - np.sqrt(d2) / eps
    return acc


@nb.njit(cache=True, nogil=True)
def _inlier_sum_backward(Y, R, t, eps, src):
    # distance from y to R X + t equals distance from R^T (y - t) to X
    fine, coarse = src[0], src[1]
    eps2 = eps * eps
    acc = 0.0
    for j in range(Y.shape[0]):
        y0 = Y[j, 0] - t[0]
        y1 = Y[j, 1] - t[1]
        y2 = Y[j, 2] - t[2]
        qx = R[0, 0] * y0 + R[1, 0] * y1 + R[2, 0] * y2
        qy = R[0, 1] * y0 + R[1, 1] * y1 + R[2, 1] * y2
        qz = R[0, 2] * y0 + R[1, 2] * y1 + R[2, 2] * y2
        d2, i = nn_lookup(qx, qy, qz, eps2, fine)
        if i == UNCOVERED:
            d2, i = nn_lookup(qx, qy, qz, eps2, coarse)
        if i == UNCOVERED:
            d2, i = fallback_point(qx, qy, qz, eps2, src)
        if i >= 0:
            acc += 1.0 - np.sqrt(d2) / eps
    return acc


@nb.njit(cache=True, nogil=True)
def dmc_population(X, Y, Rs, ts, eps, src, tgt):
    """Maximum-consensus error of ``R_c X + t_c`` against ``Y`` for every candidate c."""
    K = Rs.shape[0]
    out = np.empty(K)
    n = X.shape[0]
    m = Y.shape[0]
    for c in range(K):
        a = _inlier_sum_forward(X, Rs[c], ts[c], eps, tgt)
        b = _inlier_sum_backward(Y, Rs[c], ts[c], eps, src)
        out[c] = 2.0 - a / n - b / m
    return out


@nb.njit(cache=True, nogil=True)
def icp_population(X, Y, Rs, ts, max_iter, tol, tgt):
    """Point-to-point ICP from each initial pose ``(R_c, t_c)`` applied to ``X``.

    Each iteration matches every moved source point to its nearest target
    point, solves the unit-weight rigid fit and composes it onto the pose.
    Stops after ``max_iter`` iterations, once the post-solve correspondence
    MSE improves by less than ``tol``, or as soon as every moved point
    coincides with its match (the pose is then left untouched).

    Returns final poses, final post-solve MSE, iteration counts, the per
    iteration MSE history (NaN-padded) and degeneracy flags.
    """
    K = Rs.shape[0]
    n = X.shape[0]
    R_out = np.empty((K, 3, 3))
    t_out = np.empty((K, 3))
    mse_out = np.empty(K)
    iters = np.zeros(K, np.int64)
    hist = np.full((K, max_iter), np.nan)
    degen = np.zeros(K, np.bool_)
    P = np.empty((n, 3))
    M = np.empty((n, 3))
    w = np.ones(n)
    J = np.zeros(n, np.int64)
    fine, coarse = tgt[0], tgt[1]
    for cand in range(K):
        R = Rs[cand].copy()
        t = ts[cand].copy()
        prev = np.inf
        mse = np.inf
        for it in range(max_iter):
            gap = 0.0
            for i in range(n):
                x0 = X[i, 0]
                x1 = X[i, 1]
                x2 = X[i, 2]
                px = R[0, 0] * x0 + R[0, 1] * x1 + R[0, 2] * x2 + t[0]
                py = R[1, 0] * x0 + R[1, 1] * x1 + R[1, 2] * x2 + t[1]
                pz = R[2, 0] * x0 + R[2, 1] * x1 + R[2, 2] * x2 + t[2]
                P[i, 0] = px
                P[i, 1] = py
                P[i, 2] = pz
                bound2 = np.inf
                if it > 0:
                    # the previous match bounds the search; it is still a valid answer
                    j = J[i]
                    dx = px - Y[j, 0]
                    dy = py - Y[j, 1]
                    dz = pz - Y[j, 2]
                    bound2 = dx * dx + dy * dy + dz * dz
                _, j = nn_lookup(px, py, pz, bound2, fine)
                if j == UNCOVERED:
                    _, j = nn_lookup(px, py, pz, bound2, coarse)
                if j == UNCOVERED:
                    _, j = fallback_point(px, py, pz, bound2, tgt)
                if j < 0:
                    j = J[i]
                J[i] = j
                M[i, 0] = Y[j, 0]
                M[i, 1] = Y[j, 1]
                M[i, 2] = Y[j, 2]
                dx = px - M[i, 0]
                dy = py - M[i, 1]
                dz = pz - M[i, 2]
                gap += dx * dx + dy * dy + dz * dz
            if gap == 0.0:
                # every point already sits on its match; the pose is exact
                mse = 0.0
                hist[cand, it] = 0.0
                iters[cand] = it + 1
                break
            dR, dt, bad = kabsch_core(P, M, w)
            if bad:
                degen[cand] = True
                acc = 0.0
                for i in range(n):
                    for k in range(3):
                        r = P[i, k] - M[i, k]
                        acc += r * r
                mse = acc / n
                break
            R = dR @ R
            t = dR @ t + dt
            acc = 0.0
            for i in range(n):
                for k in range(3):
                    r = dR[k, 0] * P[i, 0] + dR[k, 1] * P[i, 1] + dR[k, 2] * P[i, 2] + dt[k] - M[i, k]
                    acc += r * r
            mse = acc / n
            hist[cand, it] = mse
            iters[cand] = it + 1
            if prev - mse < tol:
                break
            prev = mse
        R_out[cand] = R
        t_out[cand] = t
        mse_out[cand] = mse
    return R_out, t_out, mse_out, iters, hist, degen
