"""numba-compiled twins of the kernels in ``_numpy``."""
import math

import numpy as np
from numba import njit


@njit(cache=True)
def attention_pool(F, V, w):
    # matmuls go through BLAS; scalar triple loops cannot vectorize the reduction
    s = np.tanh(F @ V.T) @ w
    a = np.exp(s - s.max())
    a /= a.sum()
    return a @ F, a


@njit(cache=True)
def abmil_bag_grad(F, bounds, V, w, c, b, y):
    gV = np.zeros_like(V)
    gw = np.zeros_like(w)
    gc = np.zeros_like(c)
    gb = 0.0
    total = 0.0
    Vt = np.ascontiguousarray(V.T)
    for blk in range(bounds.shape[0] - 1):
        Fb = np.ascontiguousarray(F[bounds[blk]:bounds[blk + 1]])
        H = np.tanh(Fb @ Vt)
        s = H @ w
        a = np.exp(s - s.max())
        a /= a.sum()
        e = a @ Fb
        logit = b + c @ e
        total += max(logit, 0.0) - logit * y + math.log1p(math.exp(-abs(logit)))
        if logit >= 0:
            sig = 1.0 / (1.0 + math.exp(-logit))
        else:
            ex = math.exp(logit)
            sig = ex / (1.0 + ex)
        delta = sig - y
        gb += delta
        gc += delta * e
        da = delta * (Fb @ c)
        ds = a * (da - a @ da)
        gw += H.T @ ds
        dpre = (ds[:, None] * w[None, :]) * (1.0 - H * H)
        gV += dpre.T @ Fb
    return total, gV, gw, gc, gb


@njit(cache=True)
def _eig2(a, b, c):
    R = np.empty((2, 2))
    lam = np.empty(2)
    if b == 0.0:
        if a >= c:
            lam[0] = a
            lam[1] = c
            R[0, 0] = 1.0
            R[0, 1] = 0.0
            R[1, 0] = 0.0
            R[1, 1] = 1.0
        else:
            lam[0] = c
            lam[1] = a
            R[0, 0] = 0.0
            R[0, 1] = 1.0
            R[1, 0] = 1.0
            R[1, 1] = 0.0
        return lam, R
    theta = 0.5 * math.atan2(2.0 * b, a - c)
    cs = math.cos(theta)
    sn = math.sin(theta)
    lam[0] = a * cs * cs + 2.0 * b * sn * cs + c * sn * sn
    lam[1] = a * sn * sn - 2.0 * b * sn * cs + c * cs * cs
    R[0, 0] = cs
    R[0, 1] = -sn
    R[1, 0] = sn
    R[1, 1] = cs
    return lam, R


@njit(cache=True)
def _orth2(Z):
    d = Z.shape[0]
    Q = np.empty((d, 2))
    q1 = Z[:, 0].copy()
    n1 = math.sqrt(np.dot(q1, q1))
    if n1 <= 1e-300:
        q1[:] = 0.0
        q1[0] = 1.0
        n1 = 1.0
    q1 /= n1
    z2 = Z[:, 1].copy()
    scale = math.sqrt(np.dot(z2, z2))
    q2 = z2 - np.dot(q1, z2) * q1
    q2 = q2 - np.dot(q1, q2) * q1
    n2 = math.sqrt(np.dot(q2, q2))
    if n2 <= 1e-13 * scale or n2 <= 1e-300:
        q2[:] = 0.0
        q2[np.argmin(np.abs(q1))] = 1.0
        q2 = q2 - np.dot(q1, q2) * q1
        n2 = math.sqrt(np.dot(q2, q2))
    Q[:, 0] = q1
    Q[:, 1] = q2 / n2
    return Q


@njit(cache=True)
def top2_eigh(C, Q, tol, max_iter):
    d = C.shape[0]
    Q = _orth2(Q.copy())
    lam = np.zeros(2)
    it = 0
    for it in range(1, max_iter + 1):
        Z = C @ Q
        T = Q.T @ Z
        lam, R = _eig2(T[0, 0], 0.5 * (T[0, 1] + T[1, 0]), T[1, 1])
        Q = Q @ R
        Z = Z @ R
        res = 0.0
        for i in range(d):
            for j in range(2):
                r = Z[i, j] - Q[i, j] * lam[j]
                res += r * r
        if math.sqrt(res) <= tol * max(abs(lam[0]), 1e-300) or d == 2:
            break
        Q = _orth2(Z)
    return lam, Q, it
