"""Straight-line reference computations used as independent test oracles.

These re-derive gradients and step rules from the quadratic's matrices
directly instead of calling the library's step functions.
"""
import numpy as np


def quad_grad(obj, w, idx):
    g = obj.A @ (w - obj.offset)
    if obj.noise is not None:
        g = g + obj.noise[np.asarray(idx)].mean(axis=0)
    return g


def unit(g):
    return g / np.sqrt(np.sum(g * g))


def sam_oracle(obj, w, batches, lr, r):
    traj = [w]
    for idx in batches:
        g = quad_grad(obj, w, idx)
        w_hat = w + r * unit(g)
        w = w - lr * quad_grad(obj, w_hat, idx)
        traj.append(w)
    return traj


def async_oracle(obj, w, descent_batches, ascent_batches, lr, r, tau=1):
    """Ascent gradient at w_{t - tau} on ascent batch t - tau perturbs step t."""
    traj = [w]
    for t, idx in enumerate(descent_batches):
        if t >= tau:
            s = t - tau
            stale = quad_grad(obj, traj[s], ascent_batches[s])
            w_hat = w + r * unit(stale)
        else:
            w_hat = w
        w = w - lr * quad_grad(obj, w_hat, idx)
        traj.append(w)
    return traj


def looksam_oracle(obj, w, batches, lr, r, k):
    traj = [w]
    direction = None
    for t, idx in enumerate(batches):
        if t % k == 0:
            direction = unit(quad_grad(obj, w, idx))
        w = w - lr * quad_grad(obj, w + r * direction, idx)
        traj.append(w)
    return traj
