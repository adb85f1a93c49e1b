"""Training orchestration.

``serial`` mode is a single-lane, bit-deterministic emulation of the
asynchronous algorithm for any staleness ``tau >= 0`` (and runs every other
rule). ``concurrent`` mode runs async SAM on two threads with ``tau = 1``:
the ascent lane computes the perturbation gradient at ``w_t`` while the
descent lane computes ``w_{t+1}``. The lanes hand off through two depth-1
slots, so the descent step at iteration ``t`` always consumes the ascent
gradient tagged ``t - 1``. Batch streams are pre-seeded per lane, so both
modes produce the same trajectory; concurrency changes timing only.

Timings cover gradient computation and parameter updates. Data loading and
instrumentation (full-gradient norms, hooks) are excluded from the clock.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import queue
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .calibrate import NO_THROTTLE, ThrottleSpec, throttled
from .data import SHUFFLED_EPOCHS, WITH_REPLACEMENT, BatchSampler, MiniBatch, stream_seeds
from .objectives import Objective, ParamVector, eval_gradient, eval_loss_and_gradient, full_gradient
from .optimizers import (
    MomentumState, OptimizerConfig, async_sam_gradient, gsam_gradient, looksam_gradient, sam_gradient, sgd_step,
)

SCHEMA_VERSION = 1
TRACE_COLUMNS = ("t", "loss", "grad_norm", "wall_s", "ascent_s", "descent_s", "staleness")
TIMING_NOTE = "timings cover gradient compute and updates only; data loading and instrumentation excluded"
NO_STALENESS = -1


class TraceSchemaError(ValueError):
    pass


@dataclass(frozen=True)
class AscentMessage:
    source_iteration: int
    gradient: ParamVector
    compute_time: float


@dataclass
class TrainingTrace:
    """Per-iteration columns plus everything needed to replay the run.

    ``loss`` is the mini-batch loss reported by the descent evaluation (at the
    perturbed point for SAM-type rules). ``grad_norm`` is the full-dataset
    gradient norm at ``w_t`` every ``grad_norm_every`` iterations, NaN
    elsewhere. ``wall_s`` is cumulative. ``staleness`` is -1 when no
    perturbation gradient was used.
    """

    t: np.ndarray
    loss: np.ndarray
    grad_norm: np.ndarray
    wall_s: np.ndarray
    ascent_s: np.ndarray
    descent_s: np.ndarray
    staleness: np.ndarray
    descent_draw: np.ndarray
    ascent_draw: np.ndarray
    final_params: ParamVector
    initial_params: ParamVector
    config: dict
    seed: int
    mode: str
    T: int
    throttle: float = 1.0
    sampling: str = WITH_REPLACEMENT
    grad_norm_every: int = 10
    objective: dict = field(default_factory=dict)
    params: np.ndarray | None = None
    perturbed: np.ndarray | None = None
    messages_produced: int | None = None
    messages_consumed: int | None = None
    schema_version: int = SCHEMA_VERSION
    digest: str = ""

    def __post_init__(self):
        if not self.digest:
            self.digest = self.compute_digest()

    def snapshot(self) -> dict:
        return {
            "schema_version": self.schema_version, "config": self.config, "seed": self.seed, "mode": self.mode,
            "T": self.T, "throttle": self.throttle, "sampling": self.sampling,
            "grad_norm_every": self.grad_norm_every, "objective": self.objective,
        }

    def compute_digest(self) -> str:
        blob = json.dumps(self.snapshot(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    @property
    def iteration_times(self) -> np.ndarray:
        return np.diff(np.concatenate([[0.0], self.wall_s]))

    @property
    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(**self.config)


# ------------------------------------------------------------------- training


def _validate(cfg: OptimizerConfig, mode: str, T: int):
    if T < 1:
        raise ValueError("T must be at least 1")
    if mode not in ("serial", "concurrent"):
        raise ValueError(f"mode must be 'serial' or 'concurrent', got {mode!r}")
    if mode == "concurrent":
        if cfg.rule != "async_sam":
            raise ValueError("concurrent mode runs only the async_sam rule")
        if cfg.staleness != 1:
            raise ValueError("concurrent mode fixes staleness to 1")
    # tau >= T never uses a perturbation; T = 1 with the default tau = 1 is allowed as a single plain step
    if cfg.rule == "async_sam" and cfg.staleness >= max(T, 2):
        raise ValueError(f"staleness {cfg.staleness} must be smaller than T={T}")


class _Recorder:
    def __init__(self, obj, T, grad_norm_every, record_params, hook):
        self.obj = obj
        self.T = T
        self.every = grad_norm_every
        self.hook = hook
        self.loss = np.empty(T)
        self.grad_norm = np.full(T, np.nan)
        self.wall = np.empty(T)
        self.ascent = np.zeros(T)
        self.descent = np.empty(T)
        self.staleness = np.full(T, NO_STALENESS, dtype=np.int64)
        self.descent_draw = np.empty(T, dtype=np.int64)
        self.ascent_draw = np.full(T, -1, dtype=np.int64)
        self.params = np.empty((T + 1, obj.dim)) if record_params else None
        self.perturbed = np.empty((T, obj.dim)) if record_params else None
        self.clock = 0.0
        self.produced = None
        self.consumed = None

    def before(self, t, w: ParamVector):
        """Untimed instrumentation at the start of iteration t."""
        if self.params is not None:
            self.params[t] = w.values
        if self.every and t % self.every == 0:
            self.grad_norm[t] = float(np.linalg.norm(full_gradient(self.obj, w).values))
        if self.hook is not None:
            self.hook(t, w)

    def finish(self, w_final: ParamVector):
        if self.params is not None:
            self.params[self.T] = w_final.values
        if self.hook is not None:
            self.hook(self.T, w_final)


def train(obj: Objective, cfg: OptimizerConfig, mode: str = "serial", T: int = 100, seed: int = 0, *,
          w0: ParamVector | None = None, throttle: ThrottleSpec = NO_THROTTLE, sampling: str = WITH_REPLACEMENT,
          grad_norm_every: int = 10, record_params: bool = False,
          hook: Callable[[int, ParamVector], None] | None = None) -> TrainingTrace:
    """Run ``T`` iterations of ``cfg.rule`` and return the trace.

    ``hook(t, w_t)`` is called (untimed) before every iteration and once more
    with the final parameters. ``throttle`` slows the ascent computation of
    ``async_sam`` to emulate a slower resource.
    """
    _validate(cfg, mode, T)
    if sampling == SHUFFLED_EPOCHS and cfg.batch_size > obj.n:
        raise ValueError("batch size exceeds dataset size under shuffled epochs")
    seeds = stream_seeds(seed)
    if w0 is None:
        w0 = obj.init_params(np.random.default_rng(seeds["init"]))
    elif w0.dim != obj.dim:
        raise ValueError("initial parameters do not match the objective")
    rec = _Recorder(obj, T, grad_norm_every, record_params, hook)
    descent = BatchSampler(seeds["descent"], obj.n, sampling)
    ascent = BatchSampler(seeds["ascent"], obj.n, sampling)
    if mode == "serial":
        w = _run_serial(obj, cfg, T, w0, rec, descent, ascent, throttle)
    else:
        w = _run_concurrent(obj, cfg, T, w0, rec, descent, ascent, throttle)
    rec.finish(w)
    return TrainingTrace(
        t=np.arange(T), loss=rec.loss, grad_norm=rec.grad_norm, wall_s=rec.wall, ascent_s=rec.ascent,
        descent_s=rec.descent, staleness=rec.staleness, descent_draw=rec.descent_draw, ascent_draw=rec.ascent_draw,
        final_params=w, initial_params=w0, config=cfg.to_dict(), seed=int(seed), mode=mode, T=T,
        throttle=throttle.factor, sampling=sampling, grad_norm_every=grad_norm_every, objective=obj.describe(),
        params=rec.params, perturbed=rec.perturbed, messages_produced=rec.produced,
        messages_consumed=rec.consumed,
    )


def _run_serial(obj, cfg, T, w, rec, descent, ascent, throttle):
    state = MomentumState.zeros_like(w)
    pending: deque[tuple[int, ParamVector]] = deque()
    cache = None
    tau = cfg.staleness
    for t in range(T):
        rec.before(t, w)
        t0 = time.perf_counter()
        batch = MiniBatch(descent.sample(cfg.batch_size))
        rec.descent_draw[t] = descent.position - 1
        asc_time = 0.0
        w_hat = w
        rule = cfg.rule
        if rule == "sgd":
            start = time.perf_counter()
            loss, g = eval_loss_and_gradient(obj, w, batch)
        elif rule in ("sam", "gsam"):
            start = time.perf_counter()
            if rule == "sam":
                g, loss, w_hat, _ = sam_gradient(obj, w, batch, cfg)
            else:
                g, loss, w_hat = gsam_gradient(obj, w, batch, cfg)
            rec.staleness[t] = 0
        elif rule == "looksam":
            start = time.perf_counter()
            g, loss, w_hat, cache, refreshed = looksam_gradient(obj, w, batch, cfg, cache, t)
            if cache is not None:
                rec.staleness[t] = 0 if refreshed else t % cfg.reuse_interval
        else:
            stale = None
            if tau == 0:
                # synchronous limit: ascent on the head of the descent batch
                stale, asc_time = throttled(lambda: eval_gradient(obj, w, batch.head(cfg.ascent_batch_size)), throttle)
                rec.ascent_draw[t] = rec.descent_draw[t]
                rec.staleness[t] = 0
            else:
                if t + tau <= T - 1:
                    asc_batch = MiniBatch(ascent.sample(cfg.ascent_batch_size))
                    g_asc, asc_time = throttled(lambda: eval_gradient(obj, w, asc_batch), throttle)
                    pending.append((ascent.position - 1, g_asc))
                if t >= tau:
                    draw, stale = pending.popleft()
                    rec.ascent_draw[t] = draw
                    rec.staleness[t] = tau
            start = time.perf_counter()
            g, loss, w_hat = async_sam_gradient(obj, w, batch, stale, cfg)
        w_next, state = sgd_step(w, g, cfg, state)
        now = time.perf_counter()
        rec.descent[t] = now - start
        rec.ascent[t] = asc_time
        rec.loss[t] = loss
        rec.clock += now - t0
        rec.wall[t] = rec.clock
        if rec.perturbed is not None:
            rec.perturbed[t] = w_hat.values
        w = w_next
    return w


# ---------------------------------------------------------- concurrent lanes

_CLOSE = None


def run_ascent_lane(obj: Objective, cfg: OptimizerConfig, sampler: BatchSampler,
                    parameter_feed: Iterator, throttle: ThrottleSpec = NO_THROTTLE) -> Iterator[AscentMessage]:
    """For each ``(t, w_t)`` snapshot from the feed, emit ``AscentMessage(t, grad L^{b'}(w_t))``.

    Stops cleanly when the feed is exhausted or yields ``None``.
    """
    for item in parameter_feed:
        if item is _CLOSE:
            return
        t, w = item
        batch = MiniBatch(sampler.sample(cfg.ascent_batch_size))
        g, seconds = throttled(lambda: eval_gradient(obj, w, batch), throttle)
        yield AscentMessage(t, g, seconds)


def _queue_iter(q: queue.Queue):
    while True:
        item = q.get()
        if item is _CLOSE:
            return
        yield item


class _AscentWorker(threading.Thread):
    def __init__(self, obj, cfg, sampler, throttle):
        super().__init__(name="ascent-lane", daemon=True)
        self.feed: queue.Queue = queue.Queue(maxsize=1)
        self.mailbox: queue.Queue = queue.Queue(maxsize=1)
        self.produced = 0
        self._lane = run_ascent_lane(obj, cfg, sampler, _queue_iter(self.feed), throttle)

    def run(self):
        try:
            for msg in self._lane:
                self.produced += 1
                self.mailbox.put(msg)
        except BaseException as exc:  # surfaced in the descent lane
            self.mailbox.put(exc)


def _run_concurrent(obj, cfg, T, w, rec, descent, ascent, throttle):
    worker = _AscentWorker(obj, cfg, ascent, throttle)
    worker.start()
    state = MomentumState.zeros_like(w)
    consumed = 0
    try:
        for t in range(T):
            rec.before(t, w)
            t0 = time.perf_counter()
            worker.feed.put((t, w.copy()))
            batch = MiniBatch(descent.sample(cfg.batch_size))
            rec.descent_draw[t] = descent.position - 1
            stale = None
            if t >= 1:
                msg = worker.mailbox.get()
                if isinstance(msg, BaseException):
                    raise RuntimeError("ascent lane failed") from msg
                if msg.source_iteration != t - 1:
                    raise RuntimeError(f"descent step {t} received ascent gradient from iteration "
                                       f"{msg.source_iteration}")
                consumed += 1
                stale = msg.gradient
                rec.ascent[t] = msg.compute_time
                rec.ascent_draw[t] = t - 1
                rec.staleness[t] = 1
            start = time.perf_counter()
            g, loss, w_hat = async_sam_gradient(obj, w, batch, stale, cfg)
            w_next, state = sgd_step(w, g, cfg, state)
            now = time.perf_counter()
            rec.descent[t] = now - start
            rec.loss[t] = loss
            rec.clock += now - t0
            rec.wall[t] = rec.clock
            if rec.perturbed is not None:
                rec.perturbed[t] = w_hat.values
            w = w_next
    finally:
        # the message for iteration T-1 is never consumed; drain so the lane can exit
        _shutdown(worker)
    rec.consumed = consumed
    rec.produced = worker.produced
    return w


def _shutdown(worker: _AscentWorker):
    while worker.is_alive():
        try:
            worker.feed.put_nowait(_CLOSE)
        except queue.Full:
            pass
        try:
            worker.mailbox.get(timeout=0.01)
        except queue.Empty:
            pass
    worker.join()


# ------------------------------------------------------------------ replay


def replay(trace: TrainingTrace, obj: Objective) -> TrainingTrace:
    """Re-execute a trace serially from its recorded seeds and configuration."""
    if trace.schema_version != SCHEMA_VERSION:
        raise TraceSchemaError(f"unsupported trace schema version {trace.schema_version}")
    if trace.compute_digest() != trace.digest:
        raise TraceSchemaError("trace configuration does not match its digest (tampered)")
    recorded = trace.objective or {}
    if recorded.get("kind", obj.kind) != obj.kind or recorded.get("dim", obj.dim) != obj.dim:
        raise TraceSchemaError("trace was recorded on a different objective")
    try:
        cfg = OptimizerConfig(**trace.config)
    except TypeError as exc:
        raise TraceSchemaError(f"incomplete configuration snapshot: {exc}") from exc
    if trace.initial_params.dim != obj.dim:
        raise TraceSchemaError("initial parameters do not match the objective")
    return train(obj, cfg, "serial", trace.T, trace.seed, w0=trace.initial_params, sampling=trace.sampling,
                 grad_norm_every=trace.grad_norm_every, record_params=trace.params is not None)


# ---------------------------------------------------------------- file I/O


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else repr(float(x))


def trace_csv(trace: TrainingTrace) -> str:
    buf = io.StringIO()
    buf.write(f"# asyncsam-trace v{SCHEMA_VERSION}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for i in range(trace.T):
        stale = int(trace.staleness[i])
        writer.writerow([int(trace.t[i]), _fmt(trace.loss[i]), _fmt(trace.grad_norm[i]), _fmt(trace.wall_s[i]),
                         _fmt(trace.ascent_s[i]), _fmt(trace.descent_s[i]), "none" if stale < 0 else stale])
    return buf.getvalue()


def write_trace(trace: TrainingTrace, csv_path, manifest_path, extra: dict | None = None) -> None:
    """Write the trace CSV and a JSON manifest; ``extra`` entries are merged into the manifest."""
    with open(csv_path, "w") as f:
        f.write(trace_csv(trace))
    manifest = {
        **(extra or {}), **trace.snapshot(), "digest": trace.digest, "note": TIMING_NOTE,
        "initial_params": trace.initial_params.values.tolist(),
        "final_params": trace.final_params.values.tolist(),
    }
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def read_trace_csv(path) -> dict[str, np.ndarray]:
    with open(path) as f:
        first = f.readline().strip()
        if first != f"# asyncsam-trace v{SCHEMA_VERSION}":
            raise TraceSchemaError(f"unrecognised trace header {first!r}")
        rows = list(csv.reader(f))
    if not rows or tuple(rows[0]) != TRACE_COLUMNS:
        raise TraceSchemaError("trace CSV columns do not match the v1 schema")
    body = rows[1:]
    out = {}
    for j, name in enumerate(TRACE_COLUMNS):
        col = [r[j] for r in body]
        if name == "staleness":
            out[name] = np.array([NO_STALENESS if v == "none" else int(v) for v in col], dtype=np.int64)
        elif name == "t":
            out[name] = np.array([int(v) for v in col], dtype=np.int64)
        else:
            out[name] = np.array([float(v) for v in col])
    return out


def load_trace(csv_path, manifest_path, layout) -> TrainingTrace:
    """Rebuild a trace from its CSV and manifest (parameter history is not stored)."""
    with open(manifest_path) as f:
        manifest = json.load(f)
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise TraceSchemaError(f"unsupported manifest schema version {manifest.get('schema_version')}")
    cols = read_trace_csv(csv_path)
    T = int(manifest["T"])
    if cols["t"].shape[0] != T:
        raise TraceSchemaError("trace CSV row count does not match the manifest")
    return TrainingTrace(
        t=cols["t"], loss=cols["loss"], grad_norm=cols["grad_norm"], wall_s=cols["wall_s"],
        ascent_s=cols["ascent_s"], descent_s=cols["descent_s"], staleness=cols["staleness"],
        descent_draw=np.arange(T), ascent_draw=np.full(T, -1), final_params=ParamVector(
            np.asarray(manifest["final_params"]), layout),
        initial_params=ParamVector(np.asarray(manifest["initial_params"]), layout),
        config=manifest["config"], seed=manifest["seed"], mode=manifest["mode"], T=T,
        throttle=manifest["throttle"], sampling=manifest["sampling"], grad_norm_every=manifest["grad_norm_every"],
        objective=manifest["objective"], digest=manifest["digest"],
    )
