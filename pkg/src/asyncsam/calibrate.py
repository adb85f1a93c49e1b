"""System-aware ascent batch size and slow-resource emulation.

The slow resource is emulated by busy-work: after a gradient evaluation that
took ``t`` seconds, the lane spins (CPU-bound, GIL released) until ``s * t``
seconds have elapsed in total.
"""
from __future__ import annotations

import math
import statistics
import time
from dataclasses import dataclass

import numpy as np

from . import kernels
from .data import BatchSampler, MiniBatch
from .objectives import Objective

_SPIN_TARGET_S = 5e-6
_spin_chunk: int | None = None


@dataclass(frozen=True)
class ThrottleSpec:
    factor: float = 1.0

    def __post_init__(self):
        if not self.factor >= 1:
            raise ValueError("slowdown factor must be >= 1")

    @property
    def active(self) -> bool:
        return self.factor > 1


NO_THROTTLE = ThrottleSpec(1.0)


@dataclass(frozen=True)
class CalibrationResult:
    t_fast: float
    t_slow: float
    ratio: float
    b_prime: int
    batch_size: int

    def csv_row(self) -> str:
        return f"{self.t_fast:.9g},{self.t_slow:.9g},{self.ratio:.6g},{self.b_prime}"

    CSV_HEADER = "t_fast,t_slow,ratio,b_prime"


def _chunk() -> int:
    """Spin iterations that take roughly ``_SPIN_TARGET_S`` on this host."""
    global _spin_chunk
    if _spin_chunk is None:
        n = 1000
        kernels.spin(n)
        rates = []
        for _ in range(5):
            t0 = time.perf_counter()
            kernels.spin(20_000)
            rates.append(20_000 / max(time.perf_counter() - t0, 1e-9))
        _spin_chunk = max(1, int(statistics.median(rates) * _SPIN_TARGET_S))
    return _spin_chunk


def busy_wait(seconds: float) -> None:
    """Spin until ``seconds`` of wall time have passed."""
    if seconds <= 0:
        return
    chunk = _chunk()
    deadline = time.perf_counter() + seconds
    while True:
        remaining = deadline - time.perf_counter()
        if remaining <= 0:
            return
        # the last chunk is scaled down so the deadline is not overshot by a whole chunk
        kernels.spin(chunk if remaining >= _SPIN_TARGET_S else max(1, int(chunk * remaining / _SPIN_TARGET_S)))


def throttled_split(fn, throttle: ThrottleSpec = NO_THROTTLE):
    """Like :func:`throttled` but returns ``(result, compute seconds, total seconds)``."""
    t0 = time.perf_counter()
    out = fn()
    elapsed = time.perf_counter() - t0
    if throttle.active:
        busy_wait((throttle.factor - 1.0) * elapsed)
    return out, elapsed, time.perf_counter() - t0


def throttled(fn, throttle: ThrottleSpec = NO_THROTTLE):
    """Call ``fn()``, stretch its wall time by ``throttle.factor``; return ``(result, seconds)``."""
    out, _, total = throttled_split(fn, throttle)
    return out, total


def _time_once(obj: Objective, w: np.ndarray, idx: np.ndarray, throttle: ThrottleSpec) -> float:
    return throttled(lambda: obj._loss_grad(w, idx, True), throttle)[1]


def measure_time_per_sample(obj: Objective, batch_size: int, throttle: ThrottleSpec = NO_THROTTLE,
                            trials: int = 15, seed: int = 0) -> float:
    """Median over ``trials`` of (batch gradient wall time / batch size), after one warm-up."""
    if trials < 3:
        raise ValueError("need at least 3 timing trials")
    if batch_size < 1:
        raise ValueError("batch size must be at least 1")
    rng = np.random.default_rng(seed)
    w = obj.init_params(rng).values
    sampler = BatchSampler(seed, obj.n)
    _time_once(obj, w, sampler.sample(batch_size), throttle)
    times = [_time_once(obj, w, sampler.sample(batch_size), throttle) / batch_size for _ in range(trials)]
    return statistics.median(times)


def ascent_batch_size(b: int, t_fast: float, t_slow: float) -> int:
    """``clamp(ceil(b * t_fast / t_slow), 1, b)``."""
    if b < 1:
        raise ValueError("batch size must be at least 1")
    if not (t_fast > 0 and t_slow > 0):
        raise ValueError("per-sample times must be positive")
    # round off float noise first so that e.g. 40 / 4 stays 10 rather than 11
    raw = round(b * t_fast / t_slow, 9)
    return min(b, max(1, math.ceil(raw)))


def calibrate(obj: Objective, batch_size: int, throttle: ThrottleSpec, trials: int = 15,
              seed: int = 0) -> CalibrationResult:
    """Time the fast and the emulated slow lane on the same batches.

    Each trial makes one untimed call and then one throttled call. The
    throttled call's compute portion is the fast-lane time and its stretched
    total is the slow-lane time, so both come from identical conditions.
    ``t_fast`` is the median fast time per sample; the ratio is the median of
    the per-trial slow/fast ratios (pairing keeps trial-to-trial compute jitter
    out of it) and ``t_slow = ratio * t_fast``.
    """
    if trials < 3:
        raise ValueError("need at least 3 timing trials")
    if batch_size < 1:
        raise ValueError("batch size must be at least 1")
    rng = np.random.default_rng(seed)
    w = obj.init_params(rng).values
    sampler = BatchSampler(seed, obj.n)
    fast, ratios = [], []
    for _ in range(trials + 1):
        idx = sampler.sample(batch_size)
        # untimed call first: vectorized kernels run measurably slower right after a spin
        obj._loss_grad(w, idx, True)
        _, compute, total = throttled_split(lambda: obj._loss_grad(w, idx, True), throttle)
        fast.append(compute / batch_size)
        ratios.append(total / compute)
    # the first trial is a discarded warm-up
    t_fast = statistics.median(fast[1:])
    ratio = statistics.median(ratios[1:])
    t_slow = ratio * t_fast
    return CalibrationResult(t_fast, t_slow, ratio, ascent_batch_size(batch_size, t_fast, t_slow), batch_size)
