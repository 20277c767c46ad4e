"""Reference kernels written with vectorized numpy.

Every function here has a twin in ``_numba`` with the same signature and
semantics; the two are cross-checked in the test-suite.
"""
import math

import numpy as np


def attention_pool(F, V, w):
    scores = np.tanh(F @ V.T) @ w
    scores = scores - scores.max()
    a = np.exp(scores)
    a /= a.sum()
    return a @ F, a


def abmil_bag_grad(F, bounds, V, w, c, b, y):
    """Summed BCE loss and parameter gradients over consecutive row blocks of F.

    Block ``i`` is ``F[bounds[i]:bounds[i + 1]]``; each block is one pseudo-bag
    carrying the label ``y``.
    """
    gV = np.zeros_like(V)
    gw = np.zeros_like(w)
    gc = np.zeros_like(c)
    gb = 0.0
    total = 0.0
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        Fi = F[lo:hi]
        H = np.tanh(Fi @ V.T)
        s = H @ w
        s = s - s.max()
        a = np.exp(s)
        a /= a.sum()
        e = a @ Fi
        logit = float(c @ e) + b
        total += max(logit, 0.0) - logit * y + math.log1p(math.exp(-abs(logit)))
        delta = _sigmoid(logit) - y
        gc += delta * e
        gb += delta
        da = Fi @ (delta * c)
        ds = a * (da - a @ da)
        gw += H.T @ ds
        dpre = np.outer(ds, w) * (1.0 - H * H)
        gV += dpre.T @ Fi
    return total, gV, gw, gc, gb


def top2_eigh(C, Q, tol, max_iter):
    """Orthogonal iteration for the two leading eigenpairs of a symmetric matrix.

    ``Q`` is a d x 2 starting block. Returns (values, vectors, iterations).
    """
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
        res = math.sqrt(float(((Z - Q * lam) ** 2).sum()))
        if res <= tol * max(abs(lam[0]), 1e-300) or d == 2:
            break
        Q = _orth2(Z)
    return lam, Q, it


def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    ex = math.exp(x)
    return ex / (1.0 + ex)


def _eig2(a, b, c):
    if b == 0.0:
        if a >= c:
            return np.array([a, c]), np.eye(2)
        return np.array([c, a]), np.array([[0.0, 1.0], [1.0, 0.0]])
    theta = 0.5 * math.atan2(2.0 * b, a - c)
    cs, sn = math.cos(theta), math.sin(theta)
    l1 = a * cs * cs + 2.0 * b * sn * cs + c * sn * sn
    l2 = a * sn * sn - 2.0 * b * sn * cs + c * cs * cs
    return np.array([l1, l2]), np.array([[cs, -sn], [sn, cs]])


def _orth2(Z):
    Q = np.empty_like(Z)
    q1 = Z[:, 0]
    n1 = math.sqrt(float(q1 @ q1))
    if n1 <= 1e-300:
        q1 = np.zeros(Z.shape[0])
        q1[0] = 1.0
        n1 = 1.0
    q1 = q1 / n1
    z2 = Z[:, 1]
    scale = math.sqrt(float(z2 @ z2))
    q2 = z2 - (q1 @ z2) * q1
    q2 = q2 - (q1 @ q2) * q1
    n2 = math.sqrt(float(q2 @ q2))
    if n2 <= 1e-13 * scale or n2 <= 1e-300:
        q2 = np.zeros(Z.shape[0])
        q2[int(np.argmin(np.abs(q1)))] = 1.0
        q2 = q2 - (q1 @ q2) * q1
        n2 = math.sqrt(float(q2 @ q2))
    Q[:, 0] = q1
    Q[:, 1] = q2 / n2
    return Q
