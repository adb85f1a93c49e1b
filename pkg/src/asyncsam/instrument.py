"""Diagnostics: gradient cosine similarity, gradient norms, loss landscapes and
an empirical check of the async-SAM convergence bound on quadratics."""
from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .data import MiniBatch
from .objectives import (
    DimensionMismatch, Objective, ParamVector, QuadraticObjective, eval_gradient, eval_loss, full_gradient,
    smoothness_constant,
)
from .optimizers import OptimizerConfig
from .pipeline import TrainingTrace, train


class DegenerateCosineWarning(RuntimeWarning):
    pass


def cosine_similarity(u: ParamVector, v: ParamVector) -> float:
    """``<u, v> / (|u| |v|)``; 0.0 (with a warning) if either vector is zero."""
    if u.dim != v.dim:
        raise DimensionMismatch(f"dimensions differ: {u.dim} vs {v.dim}")
    nu = float(np.linalg.norm(u.values))
    nv = float(np.linalg.norm(v.values))
    if nu == 0.0 or nv == 0.0:
        warnings.warn("cosine similarity of a zero vector; returning 0", DegenerateCosineWarning, stacklevel=2)
        return 0.0
    c = float(u.values @ v.values) / (nu * nv)
    return min(1.0, max(-1.0, c))


class CosineProbe:
    """Training hook: records ``grad L_probe(w_t)`` on one fixed probe batch."""

    def __init__(self, obj: Objective, probe_batch: MiniBatch, window: int):
        self.obj = obj
        self.batch = probe_batch
        self.window = window
        self.grads: list[ParamVector] = []

    def __call__(self, t: int, w: ParamVector):
        if t < self.window:
            self.grads.append(eval_gradient(self.obj, w, self.batch))

    def similarities(self) -> np.ndarray:
        g = self.grads
        return np.array([cosine_similarity(g[t + 1], g[t]) for t in range(len(g) - 1)])


def probe_cossim_trace(obj: Objective, cfg: OptimizerConfig, probe_batch: MiniBatch, window: int,
                       T: int | None = None, seed: int = 0, mode: str = "serial") -> np.ndarray:
    """Cosine similarity of consecutive probe-batch gradients along a training run.

    Entry ``t`` compares ``grad L_probe(w_{t+1})`` with ``grad L_probe(w_t)``;
    the result has ``window - 1`` entries.
    """
    T = window if T is None else T
    if window < 2:
        raise ValueError("window must cover at least two iterations")
    if window > T:
        raise ValueError(f"window {window} exceeds run length {T}")
    probe = CosineProbe(obj, probe_batch, window)
    train(obj, cfg, mode, T, seed, hook=probe, grad_norm_every=0)
    return probe.similarities()


def grad_norm_trace(trace: TrainingTrace, obj: Objective, stride: int = 1) -> np.ndarray:
    """Full-dataset gradient norms at iterations ``0, stride, 2*stride, ... < T``."""
    if stride < 1:
        raise ValueError("stride must be at least 1")
    if trace.params is None:
        raise ValueError("trace has no parameter history; train with record_params=True")
    layout = trace.final_params.layout
    return np.array([
        np.linalg.norm(full_gradient(obj, ParamVector(trace.params[t], layout)).values)
        for t in range(0, trace.T, stride)
    ])


# ------------------------------------------------------------------ landscape


@dataclass(frozen=True)
class LandscapeGrid:
    """``values[i, j]`` is the full-dataset loss at ``center + x[i] d1 + y[j] d2``."""

    values: np.ndarray
    x: np.ndarray
    y: np.ndarray
    directions: np.ndarray
    seed: int
    radius: float
    center_loss: float
    center_index: tuple[int, int]

    @property
    def center_cell(self) -> float:
        return float(self.values[self.center_index])


def grid_axis(grid_n: int, radius: float) -> np.ndarray:
    """Uniform lattice in ``[-radius, radius]`` that always contains 0 at index ``grid_n // 2``."""
    if grid_n == 1:
        return np.zeros(1)
    c = grid_n // 2
    return (np.arange(grid_n) - c) * (radius / c)


def normalized_direction(rng: np.random.Generator, w: ParamVector) -> np.ndarray:
    """Gaussian direction rescaled per segment to the segment norm of ``w`` (unit norm if that is 0)."""
    d = rng.standard_normal(w.dim)
    for seg in w.layout:
        sl = slice(seg.offset, seg.offset + seg.length)
        dn = np.linalg.norm(d[sl])
        wn = np.linalg.norm(w.values[sl])
        d[sl] *= (wn if wn > 0 else 1.0) / dn
    return d


def loss_landscape(obj: Objective, w_center: ParamVector, seed: int = 0, grid_n: int = 30,
                   radius: float = 1.0, directions: np.ndarray | None = None) -> LandscapeGrid:
    if w_center.dim == 0:
        raise ValueError("zero-dimension model")
    if not radius > 0:
        raise ValueError("radius must be positive")
    if grid_n < 1:
        raise ValueError("grid_n must be positive")
    if directions is None:
        rng = np.random.default_rng(seed)
        directions = np.stack([normalized_direction(rng, w_center), normalized_direction(rng, w_center)])
    directions = np.asarray(directions, dtype=np.float64)
    if directions.shape != (2, w_center.dim):
        raise DimensionMismatch("directions must have shape (2, dim)")
    xs = grid_axis(grid_n, radius)
    ys = xs.copy()
    batch = obj.all_indices()
    w = w_center.values
    values = np.empty((grid_n, grid_n))
    for i, x in enumerate(xs):
        for j, y in enumerate(ys):
            values[i, j] = eval_loss(obj, w_center.like(w + x * directions[0] + y * directions[1]), batch)
    c = grid_n // 2
    return LandscapeGrid(values, xs, ys, directions, seed, radius, eval_loss(obj, w_center, batch), (c, c))


def flatness_score(grid: LandscapeGrid) -> float:
    """Mean excess loss over the grid relative to the centre."""
    return float(np.mean(grid.values - grid.center_loss))


def landscape_csv(grid: LandscapeGrid) -> str:
    buf = io.StringIO()
    buf.write("# asyncsam-landscape v1\n")
    buf.write("x\\y," + ",".join(repr(float(v)) for v in grid.y) + "\n")
    for i, x in enumerate(grid.x):
        buf.write(repr(float(x)) + "," + ",".join(repr(float(v)) for v in grid.values[i]) + "\n")
    return buf.getvalue()


def landscape_svg(grid: LandscapeGrid, zmax: float = 10.0, cell: int = 12) -> str:
    """Heat map; colour clipped at ``zmax`` (the stored values are not)."""
    n_x, n_y = grid.values.shape
    lo = float(grid.values.min())
    span = max(min(zmax, float(grid.values.max())) - lo, 1e-12)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{n_x * cell}" height="{n_y * cell}">']
    for i in range(n_x):
        for j in range(n_y):
            s = min(1.0, (grid.values[i, j] - lo) / span)
            r, g, b = int(255 * s), int(64 + 96 * (1 - abs(2 * s - 1))), int(255 * (1 - s))
            # y axis points up
            parts.append(f'<rect x="{i * cell}" y="{(n_y - 1 - j) * cell}" width="{cell}" height="{cell}" '
                         f'fill="rgb({r},{g},{b})"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ----------------------------------------------------------- convergence bound


@dataclass(frozen=True)
class TheoremConstants:
    beta: float
    sigma2: float
    G2: float


@dataclass(frozen=True)
class BoundCheck:
    lhs: float
    rhs: float
    constants: TheoremConstants
    holds: bool
    descent_term: float
    variance_term: float
    norm_term: float
    note: str = "sigma^2 and G^2 are suprema over visited and perturbed iterates, not global bounds"


def trajectory_constants(obj: Objective, points: np.ndarray) -> tuple[float, float]:
    """Max over ``points`` of the per-sample gradient variance and of the max squared per-sample norm."""
    idx = np.arange(obj.n)
    sigma2 = 0.0
    G2 = 0.0
    for p in points:
        g = obj.per_sample_gradients(p, idx)
        mean = g.mean(axis=0)
        sigma2 = max(sigma2, float(np.mean(np.sum((g - mean) ** 2, axis=1))))
        G2 = max(G2, float(np.max(np.sum(g * g, axis=1))))
    return sigma2, G2


def theorem1_check(trace: TrainingTrace, obj: Objective, cfg: OptimizerConfig | None = None) -> BoundCheck:
    """Evaluate both sides of the async-SAM average-gradient-norm bound on a recorded run.

    Left side: ``(1/T) sum_t |grad L(w_t)|^2``. Right side:
    ``2/(T lr) (L(w_0) - L(w_T)) + (2 b^2 r^2 / b' + (4 b^2 r^2 + lr b) / b) s^2 + 4 b^2 r^2 G^2``
    with ``b`` the smoothness constant, ``s^2`` the gradient variance and
    ``G^2`` the squared per-sample gradient norm bound.
    """
    if not isinstance(obj, QuadraticObjective):
        raise TypeError("the bound check needs a quadratic objective (exact smoothness constant)")
    cfg = trace.optimizer_config if cfg is None else cfg
    if cfg.rule not in ("async_sam", "sgd"):
        raise ValueError("the bound covers async_sam (and its r = 0 limit, sgd)")
    if cfg.momentum != 0:
        raise ValueError("the bound assumes plain (momentum-free) descent")
    if trace.params is None or trace.perturbed is None:
        raise ValueError("trace has no parameter history; train with record_params=True")
    beta = smoothness_constant(obj)
    lr = cfg.lr
    if not lr > 0:
        raise ValueError("learning rate must be positive")
    if lr > 1.0 / beta * (1 + 1e-12):
        raise ValueError(f"precondition lr <= 1/beta violated: lr={lr}, 1/beta={1.0 / beta}")
    r = cfg.radius if cfg.rule == "async_sam" else 0.0
    T = trace.T
    b, bp = cfg.batch_size, cfg.ascent_batch_size
    W = trace.params
    lhs = float(np.mean([np.sum(full_gradient(obj, ParamVector(W[t], obj.layout)).values ** 2) for t in range(T)]))
    sigma2, G2 = trajectory_constants(obj, np.concatenate([W, trace.perturbed]))
    L0 = obj.full_loss(W[0])
    LT = obj.full_loss(W[T])
    b2r2 = beta ** 2 * r ** 2
    descent_term = 2.0 / (T * lr) * (L0 - LT)
    variance_term = (2.0 * b2r2 / bp + (4.0 * b2r2 + lr * beta) / b) * sigma2
    norm_term = 4.0 * b2r2 * G2
    rhs = descent_term + variance_term + norm_term
    if not (math.isfinite(lhs) and math.isfinite(rhs)):
        raise FloatingPointError("non-finite bound terms")
    return BoundCheck(lhs, rhs, TheoremConstants(beta, sigma2, G2), lhs <= rhs, descent_term, variance_term,
                      norm_term)
