"""``asyncsam`` command line: run, compare, calibrate, cossim, landscape, replay.

Exit codes: 0 ok, 2 configuration error, 3 runtime error, 4 I/O error.
Files written by a failing command are removed before exiting.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import backend
from .calibrate import ThrottleSpec, calibrate
from .config import AUTO, ConfigError, ExperimentConfig, parse_config
from .data import MiniBatch, generate_gaussian_blobs, load_idx_dataset
from .instrument import flatness_score, landscape_csv, landscape_svg, loss_landscape, probe_cossim_trace, \
    theorem1_check
from .objectives import LogisticObjective, MLPObjective, ParamVector, full_gradient, full_loss, random_quadratic
from .pipeline import TraceSchemaError, load_trace, replay, train, write_trace

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 0, 2, 3, 4

SUMMARY_VERSION = 1
SUMMARY_COLUMNS = ("rule", "seed", "final_loss", "test_acc", "mean_iter_s", "grad_norm")
COSSIM_VERSION = 1


class Outputs:
    """Tracks files written by a command so that a failure can remove them."""

    def __init__(self, root):
        self.root = Path(root)
        self.written: list[Path] = []
        self.created: list[Path] = []

    def path(self, name: str) -> Path:
        p = self.root / name
        missing = []
        d = p.parent
        while not d.exists():
            missing.append(d)
            d = d.parent
        for d in reversed(missing):
            d.mkdir()
            self.created.append(d)
        self.written.append(p)
        return p

    def write(self, name: str, text: str) -> Path:
        p = self.path(name)
        p.write_text(text)
        return p

    def cleanup(self):
        for p in self.written:
            try:
                p.unlink()
            except OSError:
                pass
        for d in reversed(self.created):
            try:
                d.rmdir()
            except OSError:
                pass


# --------------------------------------------------------------- construction


def build_objective(exp: ExperimentConfig):
    """Return ``(objective, test dataset or None)``."""
    o, d = exp.objective, exp.data
    if o["kind"] == "quadratic":
        obj = random_quadratic(o["seed"], d=o["dim"], n=o["noise_samples"], noise_scale=o["noise_scale"],
                               eig_range=(o["eig_min"], o["eig_max"]))
        return obj, None
    if d["source"] == "blobs":
        full = generate_gaussian_blobs(d["seed"], n=d["n"] + d["n_test"], d=d["d"], k=d["k"], spread=d["spread"],
                                       label_noise=d["label_noise"])
        train_set, test_set = full.split(d["n"]) if d["n_test"] else (full, None)
    else:
        train_set = load_idx_dataset(d["images"], d["labels"], d["limit"])
        test_set = None
        if d["test_images"] and d["test_labels"]:
            test_set = load_idx_dataset(d["test_images"], d["test_labels"], d["limit"])
    if o["kind"] == "logistic":
        return LogisticObjective(train_set), test_set
    return MLPObjective(train_set, hidden=o["hidden"], activation=o["activation"]), test_set


def _throttle(exp: ExperimentConfig, args) -> ThrottleSpec:
    return ThrottleSpec(args.throttle if args.throttle is not None else exp.run["throttle"])


def _mode(exp: ExperimentConfig, args) -> str:
    return args.mode or exp.run["mode"]


def _seeds(base: int, count: int) -> list[int]:
    return [base + i for i in range(count)]


def resolve_optimizer(exp: ExperimentConfig, obj, throttle: ThrottleSpec, **overrides):
    """Optimizer config with ``b_prime = auto`` replaced by a calibrated value."""
    if exp.optimizer["b_prime"] == AUTO and "b_prime" not in overrides:
        result = calibrate(obj, exp.optimizer["b"], throttle, exp.instrument["calibrate_trials"], exp.run["seed"])
        overrides["b_prime"] = result.b_prime
    return exp.optimizer_config(**overrides)


def _test_accuracy(obj, w: ParamVector, test_set) -> float:
    if test_set is None or not hasattr(obj, "accuracy"):
        return math.nan
    return obj.accuracy(w, test_set)


def _manifest_extra(exp: ExperimentConfig, obj, trace, test_set) -> dict:
    return {
        "experiment": exp.to_dict(), "package_version": __version__, "backend": backend(),
        "final_loss": full_loss(obj, trace.final_params),
        "test_acc": _test_accuracy(obj, trace.final_params, test_set),
    }


# ------------------------------------------------------------------ commands


def cmd_run(exp: ExperimentConfig, args, out: Outputs) -> int:
    mode = _mode(exp, args)
    if mode == "concurrent" and exp.optimizer["rule"] != "async_sam":
        raise ConfigError("concurrent mode requires rule = async_sam", path=exp.source)
    obj, test_set = build_objective(exp)
    throttle = _throttle(exp, args)
    cfg = resolve_optimizer(exp, obj, throttle)
    seeds = _seeds(exp.run["seed"], args.seeds or exp.run["seeds"])
    check = exp.instrument["theorem_check"]
    for seed in seeds:
        prefix = "" if len(seeds) == 1 else f"seed_{seed}/"
        trace = train(obj, cfg, mode, exp.run["T"], seed, throttle=throttle, sampling=exp.data["sampling"],
                      grad_norm_every=exp.run["grad_norm_every"], record_params=check)
        extra = _manifest_extra(exp, obj, trace, test_set)
        write_trace(trace, out.path(prefix + "trace.csv"), out.path(prefix + "manifest.json"), extra)
        line = (f"seed {seed}: rule={cfg.rule} mode={mode} T={trace.T} final_loss={extra['final_loss']:.6g} "
                f"mean_iter_s={trace.iteration_times.mean():.3g}")
        if not math.isnan(extra["test_acc"]):
            line += f" test_acc={extra['test_acc']:.4f}"
        print(line)
        if check:
            bc = theorem1_check(trace, obj, cfg)
            report = (f"lhs={bc.lhs!r}\nrhs={bc.rhs!r}\nholds={bc.holds}\nbeta={bc.constants.beta!r}\n"
                      f"sigma2={bc.constants.sigma2!r}\nG2={bc.constants.G2!r}\nnote={bc.note}\n")
            out.write(prefix + "theorem.txt", report)
            print(f"  bound: lhs={bc.lhs:.6g} rhs={bc.rhs:.6g} holds={bc.holds}")
    return EXIT_OK


def summary_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    buf.write(f"# asyncsam-summary v{SUMMARY_VERSION}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    for row in rows:
        writer.writerow([row["rule"], row["seed"]] + [repr(float(row[c])) for c in SUMMARY_COLUMNS[2:]])
    return buf.getvalue()


def read_summary_csv(path) -> list[dict]:
    with open(path) as f:
        first = f.readline().strip()
        if first != f"# asyncsam-summary v{SUMMARY_VERSION}":
            raise TraceSchemaError(f"unrecognised summary header {first!r}")
        rows = list(csv.reader(f))
    if not rows or tuple(rows[0]) != SUMMARY_COLUMNS:
        raise TraceSchemaError("summary columns do not match the v1 schema")
    return [{"rule": r[0], "seed": int(r[1]), **{c: float(v) for c, v in zip(SUMMARY_COLUMNS[2:], r[2:])}}
            for r in rows[1:]]


def cmd_compare(exp: ExperimentConfig, args, out: Outputs) -> int:
    obj, test_set = build_objective(exp)
    throttle = _throttle(exp, args)
    mode = _mode(exp, args)
    base_cfg = resolve_optimizer(exp, obj, throttle)
    seeds = _seeds(exp.run["seed"], args.seeds or exp.compare["seeds"])
    rows = []
    for rule in exp.compare["rules"]:
        cfg = base_cfg.with_(rule=rule)
        rule_mode = mode if rule == "async_sam" else "serial"
        for seed in seeds:
            trace = train(obj, cfg, rule_mode, exp.run["T"], seed, throttle=throttle, sampling=exp.data["sampling"],
                          grad_norm_every=exp.run["grad_norm_every"])
            extra = _manifest_extra(exp, obj, trace, test_set)
            write_trace(trace, out.path(f"traces/{rule}_seed{seed}.csv"),
                        out.path(f"traces/{rule}_seed{seed}.json"), extra)
            row = {
                "rule": rule, "seed": seed, "final_loss": extra["final_loss"], "test_acc": extra["test_acc"],
                "mean_iter_s": float(trace.iteration_times.mean()),
                "grad_norm": float(np.linalg.norm(full_gradient(obj, trace.final_params).values)),
            }
            rows.append(row)
            print(f"{rule:>10s} seed {seed}: loss={row['final_loss']:.5g} acc={row['test_acc']:.4f} "
                  f"iter={row['mean_iter_s'] * 1e3:.3f}ms grad_norm={row['grad_norm']:.4g}")
    out.write("summary.csv", summary_csv(rows))
    return EXIT_OK


def cmd_calibrate(exp: ExperimentConfig, args, out: Outputs) -> int:
    obj, _ = build_objective(exp)
    throttle = _throttle(exp, args)
    b = exp.optimizer["b"]
    result = calibrate(obj, b, throttle, exp.instrument["calibrate_trials"], exp.run["seed"])
    print(f"calibration: b={b} throttle={throttle.factor:g} backend={backend()}")
    print(f"  t_fast = {result.t_fast:.4g} s/sample")
    print(f"  t_slow = {result.t_slow:.4g} s/sample")
    print(f"  ratio  = {result.ratio:.4g}")
    print(f"  b' = {result.b_prime}")
    print(result.CSV_HEADER)
    print(result.csv_row())
    out.write("calibration.csv", result.CSV_HEADER + "\n" + result.csv_row() + "\n")
    return EXIT_OK


def cmd_cossim(exp: ExperimentConfig, args, out: Outputs) -> int:
    obj, _ = build_objective(exp)
    throttle = _throttle(exp, args)
    cfg = resolve_optimizer(exp, obj, throttle)
    mode = _mode(exp, args) if cfg.rule == "async_sam" else "serial"
    rng = np.random.default_rng(exp.run["seed"])
    size = min(exp.instrument["probe_size"], obj.n)
    probe = MiniBatch(np.sort(rng.choice(obj.n, size=size, replace=False)))
    window = exp.instrument["cossim_window"]
    sims = probe_cossim_trace(obj, cfg, probe, window, T=window, seed=exp.run["seed"], mode=mode)
    lines = [f"# asyncsam-cossim v{COSSIM_VERSION}", "t,cossim"]
    lines += [f"{t},{float(c)!r}" for t, c in enumerate(sims)]
    out.write("cossim.csv", "\n".join(lines) + "\n")
    print(f"cossim: rule={cfg.rule} window={window} median={np.median(sims):.4f} min={sims.min():.4f}")
    return EXIT_OK


def cmd_landscape(exp: ExperimentConfig, args, out: Outputs) -> int:
    obj, _ = build_objective(exp)
    throttle = _throttle(exp, args)
    cfg = resolve_optimizer(exp, obj, throttle)
    mode = _mode(exp, args) if cfg.rule == "async_sam" else "serial"
    trace = train(obj, cfg, mode, exp.run["T"], exp.run["seed"], throttle=throttle, sampling=exp.data["sampling"],
                  grad_norm_every=0)
    ins = exp.instrument
    grid = loss_landscape(obj, trace.final_params, seed=ins["landscape_seed"], grid_n=ins["landscape_grid"],
                          radius=ins["landscape_radius"])
    out.write("landscape.csv", landscape_csv(grid))
    out.write("landscape.svg", landscape_svg(grid))
    print(f"landscape: rule={cfg.rule} grid={ins['landscape_grid']} radius={ins['landscape_radius']:g} "
          f"center_loss={grid.center_loss:.6g} flatness={flatness_score(grid):.6g}")
    return EXIT_OK


def cmd_replay(args) -> int:
    run_dir = Path(args.out or ".")
    manifest_path = run_dir / "manifest.json"
    with open(manifest_path) as f:
        manifest = json.load(f)
    if "experiment" not in manifest:
        raise TraceSchemaError("manifest lacks the experiment configuration")
    exp = ExperimentConfig.from_dict(manifest["experiment"])
    obj, _ = build_objective(exp)
    trace = load_trace(run_dir / "trace.csv", manifest_path, obj.layout)
    again = replay(trace, obj)
    same_loss = np.array_equal(again.loss, trace.loss)
    same_params = np.array_equal(again.final_params.values, trace.final_params.values)
    print(f"replay: loss columns {'identical' if same_loss else 'DIFFER'}, "
          f"final parameters {'identical' if same_params else 'DIFFER'}")
    return EXIT_OK if same_loss and same_params else EXIT_RUNTIME


COMMANDS = {
    "run": cmd_run, "compare": cmd_compare, "calibrate": cmd_calibrate, "cossim": cmd_cossim,
    "landscape": cmd_landscape,
}


_HELP = {
    "run": "train one rule and write trace.csv and manifest.json",
    "compare": "train several rules over several seeds and write summary.csv",
    "calibrate": "time both lanes and report the ascent batch size b'",
    "cossim": "record cosine similarity of consecutive probe-batch gradients",
    "landscape": "train, then evaluate the loss on a 2-D slice around the result",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="experiment config file")
    common.add_argument("--out", help="output directory (default: run.out from the config)")
    common.add_argument("--seeds", type=int, help="number of seeds, expanding to base, base+1, ...")
    common.add_argument("--mode", choices=("serial", "concurrent"))
    common.add_argument("--throttle", type=float, help="slowdown factor s >= 1 of the ascent lane")
    parser = argparse.ArgumentParser(prog="asyncsam", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=_HELP[name])
    rp = sub.add_parser("replay", help="re-execute a run directory and compare it with its recorded trace")
    rp.add_argument("--out", required=True, help="run directory holding trace.csv and manifest.json")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = None
    try:
        if args.command == "replay":
            return cmd_replay(args)
        if args.seeds is not None and args.seeds < 1:
            raise ConfigError("--seeds must be at least 1")
        if args.throttle is not None and not args.throttle >= 1:
            raise ConfigError("--throttle must be at least 1")
        exp = parse_config(args.config)
        out = Outputs(args.out or exp.run["out"])
        return COMMANDS[args.command](exp, args, out)
    except ConfigError as exc:
        _fail(out, f"config error: {exc}")
        return EXIT_CONFIG
    except OSError as exc:
        _fail(out, f"I/O error: {exc}")
        return EXIT_IO
    except (ValueError, TypeError, ArithmeticError, RuntimeError) as exc:
        _fail(out, f"runtime error: {exc}")
        return EXIT_RUNTIME


def _fail(out: Outputs | None, message: str):
    if out is not None:
        out.cleanup()
    print(f"asyncsam: {message}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
