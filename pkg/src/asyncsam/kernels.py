"""Hot numeric kernels: softmax-regression and one-hidden-layer MLP loss/gradient.

Every kernel exists twice: an explicit-loop version compiled with ``@njit``
(``nogil`` so the two pipeline lanes can overlap on multi-core hosts) and a
vectorized numpy version. The module-level names dispatch according to
:data:`asyncsam._accel.USE_NUMBA`: the numpy path only when numba is disabled,
otherwise the loops (large MLP batches still go to numpy, see below).

Flat parameter layouts (row-major):

* softmax regression: ``W (d, k)`` then ``b (k)``
* MLP: ``W1 (d, h)``, ``b1 (h)``, ``W2 (h, k)``, ``b2 (k)``

Losses are mean softmax cross-entropy over the selected rows ``idx``.
"""
import math

import numpy as np

from ._accel import USE_NUMBA, njit

TANH = 0
RELU = 1
ACTIVATIONS = {"tanh": TANH, "relu": RELU}


# ---------------------------------------------------------------- loop kernels


@njit(cache=True, nogil=True, error_model="numpy")
def _softmax_ce_row(z, label, p):
    """Write softmax(z) into p, return cross-entropy of ``label``."""
    k = z.shape[0]
    zmax = z[0]
    for j in range(1, k):
        if z[j] > zmax:
            zmax = z[j]
    s = 0.0
    for j in range(k):
        p[j] = math.exp(z[j] - zmax)
        s += p[j]
    for j in range(k):
        p[j] /= s
    return math.log(s) + zmax - z[label]


@njit(cache=True, nogil=True, error_model="numpy")
def softreg_loss_grad_loops(w, X, y, idx, k, want_grad):
    d = X.shape[1]
    m = idx.shape[0]
    grad = np.zeros(w.shape[0])
    z = np.empty(k)
    p = np.empty(k)
    boff = d * k
    loss = 0.0
    for s in range(m):
        i = idx[s]
        for j in range(k):
            z[j] = w[boff + j]
        for a in range(d):
            xa = X[i, a]
            row = a * k
            for j in range(k):
                z[j] += xa * w[row + j]
        loss += _softmax_ce_row(z, y[i], p)
        if want_grad:
            p[y[i]] -= 1.0
            for a in range(d):
                xa = X[i, a]
                row = a * k
                for j in range(k):
                    grad[row + j] += xa * p[j]
            for j in range(k):
                grad[boff + j] += p[j]
    inv = 1.0 / m
    for q in range(grad.shape[0]):
        grad[q] *= inv
    return loss * inv, grad


@njit(cache=True, nogil=True, error_model="numpy")
def mlp_loss_grad_loops(w, X, y, idx, h, k, act, want_grad):
    d = X.shape[1]
    m = idx.shape[0]
    o_b1 = d * h
    o_w2 = o_b1 + h
    o_b2 = o_w2 + h * k
    grad = np.zeros(w.shape[0])
    z1 = np.empty(h)
    a1 = np.empty(h)
    z2 = np.empty(k)
    p = np.empty(k)
    dz1 = np.empty(h)
    loss = 0.0
    for s in range(m):
        i = idx[s]
        for u in range(h):
            z1[u] = w[o_b1 + u]
        for a in range(d):
            xa = X[i, a]
            row = a * h
            for u in range(h):
                z1[u] += xa * w[row + u]
        for u in range(h):
            if act == 0:
                a1[u] = 1.0 - 2.0 / (math.exp(2.0 * z1[u]) + 1.0)
            else:
                a1[u] = z1[u] if z1[u] > 0.0 else 0.0
        for j in range(k):
            z2[j] = w[o_b2 + j]
        for u in range(h):
            au = a1[u]
            row = o_w2 + u * k
            for j in range(k):
                z2[j] += au * w[row + j]
        loss += _softmax_ce_row(z2, y[i], p)
        if not want_grad:
            continue
        p[y[i]] -= 1.0
        for j in range(k):
            grad[o_b2 + j] += p[j]
        for u in range(h):
            au = a1[u]
            row = o_w2 + u * k
            back = 0.0
            for j in range(k):
                grad[row + j] += au * p[j]
                back += w[row + j] * p[j]
            if act == 0:
                dz1[u] = back * (1.0 - au * au)
            else:
                dz1[u] = back if z1[u] > 0.0 else 0.0
        for u in range(h):
            grad[o_b1 + u] += dz1[u]
        for a in range(d):
            xa = X[i, a]
            row = a * h
            for u in range(h):
                grad[row + u] += xa * dz1[u]
    inv = 1.0 / m
    for q in range(grad.shape[0]):
        grad[q] *= inv
    return loss * inv, grad


@njit(cache=True, nogil=True, error_model="numpy")
def spin(n):
    """Busy-work: ``n`` dependent floating-point updates. Releases the GIL."""
    x = 1.0
    for _ in range(n):
        x = x * 1.0000001 + 1e-9
        if x > 2.0:
            x -= 1.0
    return x


# --------------------------------------------------------------- numpy kernels


def _softmax_ce(Z, labels):
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    S = E.sum(axis=1, keepdims=True)
    P = E / S
    rows = np.arange(Z.shape[0])
    losses = np.log(S[:, 0]) - Z[rows, labels]
    return losses, P


def softreg_loss_grad_numpy(w, X, y, idx, k, want_grad):
    d = X.shape[1]
    W = w[: d * k].reshape(d, k)
    b = w[d * k:]
    Xb = X[idx]
    yb = y[idx]
    m = idx.shape[0]
    losses, P = _softmax_ce(Xb @ W + b, yb)
    loss = losses.mean()
    if not want_grad:
        return loss, np.zeros(w.shape[0])
    P[np.arange(m), yb] -= 1.0
    P /= m
    return loss, np.concatenate([(Xb.T @ P).ravel(), P.sum(axis=0)])


def mlp_loss_grad_numpy(w, X, y, idx, h, k, act, want_grad):
    d = X.shape[1]
    o_b1 = d * h
    o_w2 = o_b1 + h
    o_b2 = o_w2 + h * k
    W1 = w[:o_b1].reshape(d, h)
    b1 = w[o_b1:o_w2]
    W2 = w[o_w2:o_b2].reshape(h, k)
    b2 = w[o_b2:]
    Xb = X[idx]
    yb = y[idx]
    m = idx.shape[0]
    Z1 = Xb @ W1 + b1
    A1 = np.tanh(Z1) if act == TANH else np.maximum(Z1, 0.0)
    losses, P = _softmax_ce(A1 @ W2 + b2, yb)
    loss = losses.mean()
    if not want_grad:
        return loss, np.zeros(w.shape[0])
    P[np.arange(m), yb] -= 1.0
    P /= m
    back = P @ W2.T
    dZ1 = back * (1.0 - A1 * A1) if act == TANH else back * (Z1 > 0.0)
    return loss, np.concatenate([
        (Xb.T @ dZ1).ravel(), dZ1.sum(axis=0), (A1.T @ P).ravel(), P.sum(axis=0),
    ])


# The MLP loops lose to BLAS once the batch outgrows a few dozen rows
# (benchmarks/bench_kernels.py); the softmax-regression loops win throughout.
MLP_LOOP_MAX_BATCH = 64


def _mlp_dispatch(w, X, y, idx, h, k, act, want_grad):
    if idx.shape[0] <= MLP_LOOP_MAX_BATCH:
        return mlp_loss_grad_loops(w, X, y, idx, h, k, act, want_grad)
    return mlp_loss_grad_numpy(w, X, y, idx, h, k, act, want_grad)


if USE_NUMBA:
    softreg_loss_grad = softreg_loss_grad_loops
    mlp_loss_grad = _mlp_dispatch
else:
    softreg_loss_grad = softreg_loss_grad_numpy
    mlp_loss_grad = mlp_loss_grad_numpy
