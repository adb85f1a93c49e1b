"""Sectioned ``key = value`` experiment configuration.

Example::

    [objective]
    kind = mlp
    hidden = 64

    [optimizer]
    rule = async_sam
    b = 128
    b_prime = 32

Unknown sections or keys, malformed values and constraint violations raise
:class:`ConfigError` carrying the offending line number.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

from .data import POLICIES
from .optimizers import RULES, OptimizerConfig


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, path=None):
        self.line = line
        self.path = path
        where = f"{path}:" if path else ""
        where += f"{line}: " if line is not None else (" " if where else "")
        super().__init__(f"{where}{message}")


class ConfigFileNotFound(FileNotFoundError):
    pass


def _int(s):
    return int(s)


def _float(s):
    return float(s)


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _opt_int(s):
    return None if s.strip().lower() in ("", "none") else int(s)


def _ascent_batch(s):
    """Integer, ``none`` (use b) or ``auto`` (calibrate against the throttle)."""
    if s.strip().lower() == "auto":
        return AUTO
    return _opt_int(s)


AUTO = "auto"


def _str(s):
    return s.strip()


def _list(s):
    return tuple(x.strip() for x in s.split(",") if x.strip())


def _choice(*options):
    def conv(s):
        s = s.strip()
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {s!r}")
        return s
    return conv


def _rules(s):
    rules = _list(s)
    for r in rules:
        if r not in RULES:
            raise ValueError(f"unknown rule {r!r}")
    if not rules:
        raise ValueError("empty rule list")
    return rules


_pos = (lambda v: v > 0, "must be positive")
_nonneg = (lambda v: v >= 0, "must be non-negative")
_ge1 = (lambda v: v >= 1, "must be at least 1")
_unit = (lambda v: 0 <= v <= 1, "must lie in [0, 1]")
_unit_open = (lambda v: 0 <= v < 1, "must lie in [0, 1)")

# section -> key -> (converter, default, check)
SCHEMA = {
    "objective": {
        "kind": (_choice("mlp", "logistic", "quadratic"), "mlp", None),
        "hidden": (_int, 64, _ge1),
        "activation": (_choice("tanh", "relu"), "tanh", None),
        "dim": (_int, 20, _ge1),
        "noise_samples": (_int, 512, _ge1),
        "noise_scale": (_float, 1.0, _nonneg),
        "eig_min": (_float, 0.1, _nonneg),
        "eig_max": (_float, 4.0, _pos),
        "seed": (_int, 0, None),
    },
    "data": {
        "source": (_choice("blobs", "idx"), "blobs", None),
        "n": (_int, 2000, _ge1),
        "n_test": (_int, 1000, _nonneg),
        "d": (_int, 20, _ge1),
        "k": (_int, 4, (lambda v: v >= 2, "must be at least 2")),
        "spread": (_float, 0.5, _pos),
        "label_noise": (_float, 0.1, _unit_open),
        "seed": (_int, 0, None),
        "images": (_str, "", None),
        "labels": (_str, "", None),
        "test_images": (_str, "", None),
        "test_labels": (_str, "", None),
        "limit": (_opt_int, None, None),
        "sampling": (_choice(*POLICIES), POLICIES[0], None),
    },
    "optimizer": {
        "rule": (_choice(*RULES), "sgd", None),
        "lr": (_float, 0.1, _nonneg),
        "r": (_float, 0.1, _nonneg),
        "momentum": (_float, 0.9, _unit_open),
        "alpha": (_float, 0.7, _unit),
        "k": (_int, 2, _ge1),
        "tau": (_int, 1, _nonneg),
        "b": (_int, 32, _ge1),
        "b_prime": (_ascent_batch, None, None),
        "eps_norm": (_float, 1e-12, _pos),
    },
    "run": {
        "mode": (_choice("serial", "concurrent"), "serial", None),
        "T": (_int, 1000, _ge1),
        "seed": (_int, 0, None),
        "seeds": (_int, 1, _ge1),
        "out": (_str, "runs", None),
        "throttle": (_float, 1.0, _ge1),
        "grad_norm_every": (_int, 10, _nonneg),
    },
    "compare": {
        "rules": (_rules, ("sgd", "sam", "async_sam"), None),
        "seeds": (_int, 3, _ge1),
    },
    "instrument": {
        "cossim_window": (_int, 1000, (lambda v: v >= 2, "must be at least 2")),
        "probe_size": (_int, 256, _ge1),
        "landscape_radius": (_float, 1.0, _pos),
        "landscape_grid": (_int, 30, _ge1),
        "landscape_seed": (_int, 0, None),
        "theorem_check": (_bool, False, None),
        "calibrate_trials": (_int, 15, (lambda v: v >= 3, "must be at least 3")),
    },
}


@dataclass
class ExperimentConfig:
    objective: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)
    run: dict = field(default_factory=dict)
    compare: dict = field(default_factory=dict)
    instrument: dict = field(default_factory=dict)
    source: str | None = None

    def optimizer_config(self, **overrides) -> OptimizerConfig:
        """Build the optimizer config; ``b_prime = auto`` must be resolved by the caller via overrides."""
        o = {**self.optimizer, **overrides}
        if o["b_prime"] == AUTO:
            raise ValueError("b_prime = auto has not been resolved")
        return OptimizerConfig(
            rule=o["rule"], lr=o["lr"], radius=o["r"], momentum=o["momentum"], alpha=o["alpha"],
            reuse_interval=o["k"], staleness=o["tau"], batch_size=o["b"], ascent_batch_size=o["b_prime"],
            eps_norm=o["eps_norm"],
        )

    def to_dict(self) -> dict:
        return {name: dict(getattr(self, name)) for name in SCHEMA}

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        lines = []
        for section, values in data.items():
            lines.append(f"[{section}]")
            for key, value in values.items():
                if value is None:
                    value = "none"
                elif isinstance(value, (list, tuple)):
                    value = ", ".join(value)
                lines.append(f"{key} = {value}")
        return parse_config_text("\n".join(lines))


def parse_config(path) -> ExperimentConfig:
    if not os.path.exists(path):
        raise ConfigFileNotFound(f"config file not found: {path}")
    with open(path) as f:
        text = f.read()
    return parse_config_text(text, path=str(path))


def parse_config_text(text: str, path=None) -> ExperimentConfig:
    values = {s: {k: spec[1] for k, spec in keys.items()} for s, keys in SCHEMA.items()}
    where: dict[tuple[str, str], int] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {line!r}", lineno, path)
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", lineno, path)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno, path)
        if section is None:
            raise ConfigError("key outside of any section", lineno, path)
        key, _, value = (part.strip() for part in line.partition("="))
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno, path)
        if (section, key) in where:
            raise ConfigError(f"duplicate key {key!r} (first set on line {where[section, key]})", lineno, path)
        conv, _, check = SCHEMA[section][key]
        try:
            parsed = conv(value)
        except ValueError as exc:
            raise ConfigError(f"{section}.{key}: bad value {value!r} ({exc})", lineno, path) from None
        if check is not None and parsed is not None and not check[0](parsed):
            raise ConfigError(f"{section}.{key} {check[1]} (got {parsed!r})", lineno, path)
        values[section][key] = parsed
        where[section, key] = lineno

    def line_of(section, key):
        return where.get((section, key))

    opt = values["optimizer"]
    if opt["b_prime"] not in (None, AUTO) and not 1 <= opt["b_prime"] <= opt["b"]:
        raise ConfigError(f"optimizer.b_prime = {opt['b_prime']} violates 1 <= b' <= b (b = {opt['b']})",
                          line_of("optimizer", "b_prime") or line_of("optimizer", "b"), path)
    if values["objective"]["eig_min"] > values["objective"]["eig_max"]:
        raise ConfigError("objective.eig_min exceeds eig_max", line_of("objective", "eig_min"), path)
    run = values["run"]
    # rule = sgd with mode = concurrent is legal: compare runs the non-async rules serially
    if run["mode"] == "concurrent" and opt["tau"] != 1:
        raise ConfigError("concurrent mode fixes tau = 1", line_of("optimizer", "tau"), path)
    if opt["rule"] == "async_sam" and opt["tau"] >= max(run["T"], 2):
        raise ConfigError("optimizer.tau must be smaller than run.T", line_of("optimizer", "tau"), path)
    data = values["data"]
    if data["source"] == "idx" and not (data["images"] and data["labels"]):
        raise ConfigError("data.source = idx needs images and labels paths", line_of("data", "source"), path)
    if data["source"] == "blobs" and data["n"] < data["k"]:
        raise ConfigError("data.n must be at least data.k", line_of("data", "n"), path)
    if data["sampling"] == "shuffled-epochs" and opt["b"] > data["n"] and values["objective"]["kind"] != "quadratic":
        raise ConfigError("optimizer.b exceeds data.n under shuffled epochs", line_of("optimizer", "b"), path)
    return ExperimentConfig(**values, source=path)
