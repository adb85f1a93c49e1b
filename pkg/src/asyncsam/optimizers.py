"""Step rules: SGD with momentum, SAM, generalized SAM, LookSAM-lite, async SAM.

Every rule splits into a *descent gradient* (``*_gradient`` functions, which
the training loop composes with :func:`sgd_step` so momentum applies to the
final descent gradient only) and a pure one-step convenience wrapper that
returns ``w - lr * g``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .data import MiniBatch
from .objectives import DimensionMismatch, Objective, ParamVector, eval_gradient, eval_loss_and_gradient

RULES = ("sgd", "sam", "gsam", "looksam", "async_sam")


@dataclass(frozen=True)
class OptimizerConfig:
    rule: str = "sgd"
    lr: float = 0.1
    radius: float = 0.1
    momentum: float = 0.0
    alpha: float = 0.7
    reuse_interval: int = 2
    staleness: int = 1
    batch_size: int = 32
    ascent_batch_size: int | None = None
    eps_norm: float = 1e-12

    def __post_init__(self):
        if self.rule not in RULES:
            raise ValueError(f"unknown rule {self.rule!r}; expected one of {RULES}")
        if not self.lr >= 0:
            raise ValueError("learning rate must be non-negative")
        if self.radius < 0:
            raise ValueError("perturbation radius must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")
        if self.reuse_interval < 1:
            raise ValueError("reuse interval must be at least 1")
        if self.staleness < 0:
            raise ValueError("staleness must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.ascent_batch_size is None:
            object.__setattr__(self, "ascent_batch_size", self.batch_size)
        if not 1 <= self.ascent_batch_size <= self.batch_size:
            raise ValueError(
                f"ascent batch size {self.ascent_batch_size} must lie in [1, batch size {self.batch_size}] (b' <= b)")
        if not self.eps_norm > 0:
            raise ValueError("eps_norm must be positive")

    def with_(self, **changes) -> OptimizerConfig:
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MomentumState:
    velocity: ParamVector

    @classmethod
    def zeros_like(cls, w: ParamVector) -> MomentumState:
        return cls(w.like(np.zeros(w.dim)))


def _check_dims(a: ParamVector, b: ParamVector):
    if a.dim != b.dim:
        raise DimensionMismatch(f"dimensions differ: {a.dim} vs {b.dim}")


def ascent_direction(g: ParamVector, eps_norm: float = 1e-12) -> np.ndarray | None:
    """``g / ||g||`` (global L2 norm), or ``None`` when ``||g|| < eps_norm``."""
    norm = float(np.linalg.norm(g.values))
    if not norm >= eps_norm:
        return None
    return g.values / norm


def shift(w: ParamVector, direction: np.ndarray | None, r: float) -> ParamVector:
    if direction is None or r == 0:
        return w
    return w.like(w.values + r * direction)


def perturb(w: ParamVector, g: ParamVector, r: float, eps_norm: float = 1e-12) -> ParamVector:
    """``w + r * g / ||g||``; returns ``w`` itself for a degenerate ``g``."""
    _check_dims(w, g)
    return shift(w, ascent_direction(g, eps_norm), r)


def sgd_step(w: ParamVector, g: ParamVector, cfg: OptimizerConfig,
             state: MomentumState | None = None) -> tuple[ParamVector, MomentumState]:
    """Heavy-ball update ``v <- momentum * v + g; w <- w - lr * v``."""
    _check_dims(w, g)
    if state is None:
        state = MomentumState.zeros_like(w)
    _check_dims(w, state.velocity)
    if cfg.momentum == 0:
        v = g.values
    else:
        v = cfg.momentum * state.velocity.values + g.values
    return w.like(w.values - cfg.lr * v), MomentumState(w.like(v))


def gsam_combine(g_perturbed: ParamVector, g_plain: ParamVector, alpha: float) -> ParamVector:
    """``alpha * g_perturbed + (1 - alpha) * g_plain``."""
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    _check_dims(g_perturbed, g_plain)
    # exact endpoints, and exact when nothing was perturbed
    if alpha == 1:
        return g_perturbed
    if alpha == 0 or g_perturbed is g_plain or np.array_equal(g_perturbed.values, g_plain.values):
        return g_plain
    return g_perturbed.like(alpha * g_perturbed.values + (1.0 - alpha) * g_plain.values)


# ----------------------------------------------------------- descent gradients
# Each returns (descent gradient, mini-batch loss at the evaluation point, info)


def sam_gradient(obj: Objective, w: ParamVector, batch: MiniBatch, cfg: OptimizerConfig):
    loss, g_plain = eval_loss_and_gradient(obj, w, batch)
    w_hat = perturb(w, g_plain, cfg.radius, cfg.eps_norm)
    if w_hat is w:
        return g_plain, loss, w_hat, g_plain
    loss, g = eval_loss_and_gradient(obj, w_hat, batch)
    return g, loss, w_hat, g_plain


def gsam_gradient(obj, w, batch, cfg):
    g_hat, loss, w_hat, g_plain = sam_gradient(obj, w, batch, cfg)
    return gsam_combine(g_hat, g_plain, cfg.alpha), loss, w_hat


def looksam_gradient(obj, w, batch, cfg, cached_direction, step_index):
    """Recompute the ascent direction when ``step_index % k == 0`` or nothing is cached."""
    refresh = cached_direction is None or step_index % cfg.reuse_interval == 0
    if refresh:
        g_plain = eval_gradient(obj, w, batch)
        cached_direction = ascent_direction(g_plain, cfg.eps_norm)
    w_hat = shift(w, cached_direction, cfg.radius)
    loss, g = eval_loss_and_gradient(obj, w_hat, batch)
    return g, loss, w_hat, cached_direction, refresh


def async_sam_gradient(obj, w, batch, stale_g: ParamVector | None, cfg):
    """Descent gradient at ``w`` perturbed along a stale ascent gradient (or unperturbed)."""
    w_hat = w if stale_g is None else perturb(w, stale_g, cfg.radius, cfg.eps_norm)
    loss, g = eval_loss_and_gradient(obj, w_hat, batch)
    return g, loss, w_hat


# ------------------------------------------------------------ one-step wrappers


def _descend(w: ParamVector, g: ParamVector, cfg: OptimizerConfig) -> ParamVector:
    return w.like(w.values - cfg.lr * g.values)


def sam_step(obj: Objective, w: ParamVector, batch: MiniBatch, cfg: OptimizerConfig) -> ParamVector:
    """``w - lr * grad L(w + r grad L(w) / ||grad L(w)||)`` on one shared batch."""
    g = sam_gradient(obj, w, batch, cfg)[0]
    return _descend(w, g, cfg)


def gsam_step(obj, w, batch, cfg) -> ParamVector:
    return _descend(w, gsam_gradient(obj, w, batch, cfg)[0], cfg)


def looksam_step(obj, w, batch, cfg, cached_direction=None, step_index=0):
    """Returns ``(new w, direction cache)``."""
    g, _, _, cache, _ = looksam_gradient(obj, w, batch, cfg, cached_direction, step_index)
    return _descend(w, g, cfg), cache


def async_sam_step(obj, w_t, descent_batch, stale_g, cfg) -> ParamVector:
    """One asynchronous SAM step.

    With ``stale_g=None`` (the first iteration) this is a plain descent step.
    Otherwise the model is perturbed along the received ascent gradient and the
    descent gradient is taken there on ``descent_batch``.
    """
    if stale_g is not None:
        _check_dims(w_t, stale_g)
    return _descend(w_t, async_sam_gradient(obj, w_t, descent_batch, stale_g, cfg)[0], cfg)
