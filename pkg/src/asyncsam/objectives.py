"""Differentiable objectives with exact gradients.

Three objectives share one interface: a random-noise quadratic (exact
smoothness constant, used for bound checks), multinomial logistic
regression, and a one-hidden-layer MLP. All losses and gradients are means
over the mini-batch.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .data import Dataset, MiniBatch


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Segment:
    name: str
    offset: int
    length: int


@dataclass(frozen=True)
class ParamVector:
    """Flat parameter state plus per-layer segmentation."""

    values: np.ndarray
    layout: tuple[Segment, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ValueError("parameter values must be one-dimensional")
        if not np.isfinite(values).all():
            raise FloatingPointError("non-finite parameter values (diverged?)")
        object.__setattr__(self, "values", values)
        pos = 0
        for seg in self.layout:
            if seg.offset != pos or seg.length <= 0:
                raise ValueError(f"segment {seg.name!r} is not contiguous")
            pos += seg.length
        if pos != values.shape[0]:
            raise ValueError(f"layout covers {pos} entries, values have {values.shape[0]}")

    @classmethod
    def flat(cls, values, name="w") -> ParamVector:
        values = np.asarray(values, dtype=np.float64)
        return cls(values, (Segment(name, 0, values.shape[0]),))

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def like(self, values) -> ParamVector:
        """Same layout, new values."""
        return ParamVector(values, self.layout)

    def segment(self, name: str) -> np.ndarray:
        for seg in self.layout:
            if seg.name == name:
                return self.values[seg.offset:seg.offset + seg.length]
        raise KeyError(name)

    def copy(self) -> ParamVector:
        return ParamVector(self.values.copy(), self.layout)


def make_layout(shapes: Sequence[tuple[str, int]]) -> tuple[Segment, ...]:
    out = []
    pos = 0
    for name, length in shapes:
        out.append(Segment(name, pos, length))
        pos += length
    return tuple(out)


class Objective:
    """Base class. Subclasses implement ``_loss_grad`` on raw float arrays."""

    kind: str
    layout: tuple[Segment, ...]

    @property
    def n(self) -> int:
        raise NotImplementedError

    @property
    def dim(self) -> int:
        return sum(seg.length for seg in self.layout)

    def _loss_grad(self, w: np.ndarray, idx: np.ndarray, want_grad: bool):
        raise NotImplementedError

    def per_sample_gradients(self, w: np.ndarray, idx: np.ndarray) -> np.ndarray:
        """Gradients of the individual sample losses, one row per index."""
        return np.stack([self._loss_grad(w, idx[i:i + 1], True)[1] for i in range(idx.shape[0])])

    def init_params(self, rng: np.random.Generator) -> ParamVector:
        return ParamVector(np.zeros(self.dim), self.layout)

    def all_indices(self) -> MiniBatch:
        return MiniBatch(np.arange(self.n))

    def describe(self) -> dict:
        return {"kind": self.kind, "dim": self.dim, "n": self.n}

    def _check(self, w: ParamVector, batch: MiniBatch):
        if w.dim != self.dim:
            raise DimensionMismatch(f"parameter dimension {w.dim} != objective dimension {self.dim}")
        if batch.size == 0:
            raise ValueError("empty mini-batch")
        idx = batch.indices
        if idx.min() < 0 or idx.max() >= self.n:
            raise IndexError(f"batch indices outside [0, {self.n})")


class QuadraticObjective(Objective):
    """``l_i(w) = 1/2 (w-c)^T A (w-c) + zeta_i . (w-c)``.

    ``zeta`` rows are centred, so the full-dataset loss is exactly the
    quadratic ``1/2 (w-c)^T A (w-c)`` and every per-sample gradient shares the
    Lipschitz constant ``lambda_max(A)``. With ``noise=None`` the objective is
    deterministic and batch-independent.
    """

    kind = "quadratic"

    def __init__(self, A, offset=None, noise=None, n: int = 1):
        A = np.asarray(A, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("A must be square")
        if not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(1.0, np.abs(A).max())):
            raise ValueError("A must be symmetric")
        if np.linalg.eigvalsh(A).min() < -1e-10 * max(1.0, np.abs(A).max()):
            raise ValueError("A must be positive semi-definite")
        self.A = A
        d = A.shape[0]
        self.offset = np.zeros(d) if offset is None else np.asarray(offset, dtype=np.float64)
        if self.offset.shape != (d,):
            raise ValueError("offset dimension must match A")
        if noise is None:
            self.noise = None
            self._n = int(n)
        else:
            noise = np.asarray(noise, dtype=np.float64)
            if noise.ndim != 2 or noise.shape[1] != d:
                raise ValueError("noise must be an (n, d) array")
            self.noise = noise - noise.mean(axis=0)
            self._n = noise.shape[0]
        self.layout = make_layout([("w", d)])

    @property
    def n(self) -> int:
        return self._n

    def _loss_grad(self, w, idx, want_grad):
        delta = w - self.offset
        Ad = self.A @ delta
        loss = 0.5 * float(delta @ Ad)
        grad = Ad
        if self.noise is not None:
            zbar = self.noise[idx].mean(axis=0)
            loss += float(zbar @ delta)
            grad = Ad + zbar
        return loss, grad

    def per_sample_gradients(self, w, idx):
        Ad = self.A @ (w - self.offset)
        if self.noise is None:
            return np.tile(Ad, (idx.shape[0], 1))
        return Ad + self.noise[idx]

    def full_loss(self, w: np.ndarray) -> float:
        delta = w - self.offset
        return 0.5 * float(delta @ self.A @ delta)

    def init_params(self, rng):
        return ParamVector(self.offset + rng.standard_normal(self.dim), self.layout)

    def describe(self):
        return {**super().describe(), "noisy": self.noise is not None}


def random_quadratic(seed: int, d: int = 20, n: int = 512, noise_scale: float = 1.0,
                     eig_range: tuple[float, float] = (0.1, 4.0)) -> QuadraticObjective:
    """Random SPD quadratic with a seeded spectrum, basis, offset and gradient noise."""
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    eigs = rng.uniform(*eig_range, size=d)
    eigs[0], eigs[-1] = eig_range
    A = (Q * eigs) @ Q.T
    A = 0.5 * (A + A.T)
    offset = rng.standard_normal(d)
    noise = noise_scale * rng.standard_normal((n, d)) if noise_scale > 0 else None
    return QuadraticObjective(A, offset, noise, n=n)


class _ClassifierObjective(Objective):
    def __init__(self, dataset: Dataset):
        self.dataset = dataset
        self.X = np.ascontiguousarray(dataset.features, dtype=np.float64)
        self.y = np.ascontiguousarray(dataset.labels, dtype=np.int64)
        self.k = dataset.k

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def logits(self, w: np.ndarray, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def accuracy(self, w: ParamVector, dataset: Dataset | None = None) -> float:
        ds = self.dataset if dataset is None else dataset
        pred = self.logits(w.values, np.asarray(ds.features, dtype=np.float64)).argmax(axis=1)
        return float((pred == ds.labels).mean())


class LogisticObjective(_ClassifierObjective):
    """Multinomial logistic regression (softmax cross-entropy, no hidden layer)."""

    kind = "logistic"

    def __init__(self, dataset: Dataset):
        super().__init__(dataset)
        d = self.X.shape[1]
        self.layout = make_layout([("W", d * self.k), ("b", self.k)])

    def _loss_grad(self, w, idx, want_grad):
        return kernels.softreg_loss_grad(w, self.X, self.y, idx, self.k, want_grad)

    def logits(self, w, X):
        d = X.shape[1]
        return X @ w[: d * self.k].reshape(d, self.k) + w[d * self.k:]


class MLPObjective(_ClassifierObjective):
    """One hidden layer (tanh or relu), softmax cross-entropy output."""

    kind = "mlp"

    def __init__(self, dataset: Dataset, hidden: int = 64, activation: str = "tanh"):
        super().__init__(dataset)
        if activation not in kernels.ACTIVATIONS:
            raise ValueError(f"activation must be one of {sorted(kernels.ACTIVATIONS)}")
        if hidden < 1:
            raise ValueError("hidden width must be positive")
        self.hidden = int(hidden)
        self.activation = activation
        self._act = kernels.ACTIVATIONS[activation]
        d = self.X.shape[1]
        self.layout = make_layout([
            ("W1", d * self.hidden), ("b1", self.hidden), ("W2", self.hidden * self.k), ("b2", self.k),
        ])

    def _loss_grad(self, w, idx, want_grad):
        return kernels.mlp_loss_grad(w, self.X, self.y, idx, self.hidden, self.k, self._act, want_grad)

    def logits(self, w, X):
        d, h, k = X.shape[1], self.hidden, self.k
        W1 = w[: d * h].reshape(d, h)
        b1 = w[d * h: d * h + h]
        W2 = w[d * h + h: d * h + h + h * k].reshape(h, k)
        b2 = w[d * h + h + h * k:]
        Z = X @ W1 + b1
        A = np.tanh(Z) if self._act == kernels.TANH else np.maximum(Z, 0.0)
        return A @ W2 + b2

    def init_params(self, rng):
        d, h, k = self.X.shape[1], self.hidden, self.k
        # Glorot-uniform weights, zero biases
        lim1 = np.sqrt(6.0 / (d + h))
        lim2 = np.sqrt(6.0 / (h + k))
        values = np.concatenate([
            rng.uniform(-lim1, lim1, d * h), np.zeros(h), rng.uniform(-lim2, lim2, h * k), np.zeros(k),
        ])
        return ParamVector(values, self.layout)

    def describe(self):
        return {**super().describe(), "hidden": self.hidden, "activation": self.activation}


# ------------------------------------------------------------------ operations


def eval_loss(obj: Objective, w: ParamVector, batch: MiniBatch) -> float:
    obj._check(w, batch)
    return float(obj._loss_grad(w.values, batch.indices, False)[0])


def eval_gradient(obj: Objective, w: ParamVector, batch: MiniBatch) -> ParamVector:
    obj._check(w, batch)
    return w.like(obj._loss_grad(w.values, batch.indices, True)[1])


def eval_loss_and_gradient(obj: Objective, w: ParamVector, batch: MiniBatch) -> tuple[float, ParamVector]:
    """One fused forward/backward pass."""
    obj._check(w, batch)
    loss, grad = obj._loss_grad(w.values, batch.indices, True)
    return float(loss), w.like(grad)


def full_loss(obj: Objective, w: ParamVector) -> float:
    return eval_loss(obj, w, obj.all_indices())


def full_gradient(obj: Objective, w: ParamVector) -> ParamVector:
    return eval_gradient(obj, w, obj.all_indices())


def finite_diff_gradient(obj: Objective, w: ParamVector, batch: MiniBatch, h=None) -> ParamVector:
    """Central differences per coordinate.

    ``h`` may be a scalar or a per-coordinate array; ``None`` uses
    ``1e-5 * (1 + |w_i|)``.
    """
    x = w.values
    steps = 1e-5 * (1.0 + np.abs(x)) if h is None else np.broadcast_to(np.asarray(h, dtype=np.float64), x.shape)
    if np.any(steps <= 0):
        raise ValueError("finite-difference step must be positive")
    obj._check(w, batch)
    out = np.empty_like(x)
    probe = x.copy()
    for i in range(x.shape[0]):
        probe[i] = x[i] + steps[i]
        up = obj._loss_grad(probe, batch.indices, False)[0]
        probe[i] = x[i] - steps[i]
        down = obj._loss_grad(probe, batch.indices, False)[0]
        probe[i] = x[i]
        out[i] = (up - down) / (2.0 * steps[i])
    return w.like(out)


def smoothness_constant(obj: Objective, tol: float = 1e-10, max_iter: int = 100_000) -> float:
    """Largest eigenvalue of the quadratic's matrix, by power iteration."""
    if not isinstance(obj, QuadraticObjective):
        raise TypeError(f"smoothness constant is not analytically available for {obj.kind!r} objectives")
    A = obj.A
    v = np.random.default_rng(0).standard_normal(A.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        u = A @ v
        norm = np.linalg.norm(u)
        if norm == 0.0:
            return 0.0
        v_next = u / norm
        lam_next = float(v_next @ A @ v_next)
        # stop on an eigen-residual, not just the Rayleigh quotient, to avoid early stalls
        resid = np.linalg.norm(A @ v_next - lam_next * v_next)
        v = v_next
        if abs(lam_next - lam) <= tol * abs(lam_next) and resid <= np.sqrt(tol) * abs(lam_next):
            return lam_next
        lam = lam_next
    return lam
