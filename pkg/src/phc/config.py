"""Flat key-value run configuration.

The on-disk format is one ``section.key = value`` pair per line, with ``#``
comments. Parsing and serialization are inverse to each other: parse ->
serialize -> parse returns an identical config.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

from .graph import AGGREGATORS, SKIP_MODES, TASKS
from .layers import WEIGHT_SCHEMES

CONTRIBUTION_SCHEMES = ("auto", "complex", "quaternion", "shifted-identity", "uniform")
DROPOUT_MODES = ("component", "flat")


@dataclass
class ModelConfig:
    n: int = 2
    mp_layers: int = 3
    width: int = 32
    mp_mlp: bool = True
    aggregator: str = "sum"
    skip: str = "previous"
    mp_dropout: float = 0.1
    dn_dropout: float = 0.2
    dropout_mode: str = "component"
    contribution_scheme: str = "auto"
    weight_scheme: str = "phc-normal"
    frozen_contributions: bool = False
    batchnorm: bool = True
    downstream: tuple[int, int] = (32, 16)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    lambda1: float = 1e-2
    lambda2: float = 0.0
    p_norm: float = 2.0
    plateau_gamma: float = 0.5
    patience: int = 10
    min_lr: float = 1e-6
    epochs: int = 300
    clip_norm: float = 0.0
    batch_size: int = 128
    task: str = "regression-mae"


@dataclass
class DataConfig:
    path: str = ""
    task: str = "regression-mae"
    splits: tuple[float, float, float] = (0.8, 0.1, 0.1)


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "runs/out"
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def validate(self) -> None:
        m, t, d = self.model, self.training, self.data
        if m.n < 1:
            raise ValueError("model.n must be a positive integer")
        if m.mp_layers < 1:
            raise ValueError("model.mp_layers must be at least 1")
        for w in (m.width, *m.downstream):
            if w < 1 or w % m.n:
                raise ValueError(f"width {w} must be positive and divisible by n={m.n}")
        if m.aggregator not in AGGREGATORS:
            raise ValueError(f"unknown aggregator {m.aggregator!r}")
        if m.skip not in SKIP_MODES:
            raise ValueError(f"unknown skip mode {m.skip!r}")
        if not 0.0 <= m.mp_dropout < 1.0 or not 0.0 <= m.dn_dropout < 1.0:
            raise ValueError("dropout rates must lie in [0, 1)")
        if m.dropout_mode not in DROPOUT_MODES:
            raise ValueError(f"unknown dropout mode {m.dropout_mode!r}")
        if m.contribution_scheme not in CONTRIBUTION_SCHEMES:
            raise ValueError(f"unknown contribution scheme {m.contribution_scheme!r}")
        if m.contribution_scheme == "complex" and m.n != 2:
            raise ValueError("complex contribution scheme requires n=2")
        if m.contribution_scheme == "quaternion" and m.n != 4:
            raise ValueError("quaternion contribution scheme requires n=4")
        if m.weight_scheme not in WEIGHT_SCHEMES:
            raise ValueError(f"unknown weight scheme {m.weight_scheme!r}")
        if t.lambda1 < 0 or t.lambda2 < 0:
            raise ValueError("regularization coefficients must be non-negative")
        if t.p_norm < 1:
            raise ValueError("training.p_norm must be at least 1")
        if not 0.0 < t.plateau_gamma < 1.0:
            raise ValueError("training.plateau_gamma must lie in (0, 1)")
        if t.patience < 1:
            raise ValueError("training.patience must be at least 1")
        if t.lr <= 0 or t.min_lr <= 0:
            raise ValueError("learning rates must be positive")
        if t.epochs < 1 or t.batch_size < 1:
            raise ValueError("training.epochs and training.batch_size must be positive")
        if t.clip_norm < 0:
            raise ValueError("training.clip_norm must be non-negative")
        if d.task not in TASKS:
            raise ValueError(f"unknown task {d.task!r}")
        if len(d.splits) != 3 or any(s < 0 for s in d.splits):
            raise ValueError("data.splits needs three non-negative fractions")
        if abs(sum(d.splits) - 1.0) > 1e-9:
            raise ValueError(f"data.splits must sum to 1, got {sum(d.splits)}")


def _parse_bool(s: str) -> bool:
    low = s.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _parse_int_pair(s: str) -> tuple[int, int]:
    parts = [p.strip() for p in s.split(",")]
    if len(parts) != 2:
        raise ValueError(f"expected two comma-separated integers, got {s!r}")
    return int(parts[0]), int(parts[1])


def _parse_float_triple(s: str) -> tuple[float, float, float]:
    parts = [p.strip() for p in s.split(",")]
    if len(parts) != 3:
        raise ValueError(f"expected three comma-separated numbers, got {s!r}")
    return float(parts[0]), float(parts[1]), float(parts[2])


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# key -> (section attribute, field, parser); section None means top level.
_KEYS = {
    "seed": (None, "seed", int),
    "out": (None, "out", str),
    "model.n": ("model", "n", int),
    "model.mp_layers": ("model", "mp_layers", int),
    "model.width": ("model", "width", int),
    "model.mp_mlp": ("model", "mp_mlp", _parse_bool),
    "model.aggregator": ("model", "aggregator", str),
    "model.skip": ("model", "skip", str),
    "model.mp_dropout": ("model", "mp_dropout", float),
    "model.dn_dropout": ("model", "dn_dropout", float),
    "model.dropout_mode": ("model", "dropout_mode", str),
    "model.contribution_scheme": ("model", "contribution_scheme", str),
    "model.weight_scheme": ("model", "weight_scheme", str),
    "model.frozen_contributions": ("model", "frozen_contributions", _parse_bool),
    "model.batchnorm": ("model", "batchnorm", _parse_bool),
    "model.downstream": ("model", "downstream", _parse_int_pair),
    "training.lr": ("training", "lr", float),
    "training.lambda1": ("training", "lambda1", float),
    "training.lambda2": ("training", "lambda2", float),
    "training.p_norm": ("training", "p_norm", float),
    "training.plateau_gamma": ("training", "plateau_gamma", float),
    "training.patience": ("training", "patience", int),
    "training.min_lr": ("training", "min_lr", float),
    "training.epochs": ("training", "epochs", int),
    "training.clip_norm": ("training", "clip_norm", float),
    "training.batch_size": ("training", "batch_size", int),
    "data.path": ("data", "path", str),
    "data.task": ("data", "task", str),
    "data.splits": ("data", "splits", _parse_float_triple),
}


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _KEYS:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        section, fieldname, parser = _KEYS[key]
        target = cfg if section is None else getattr(cfg, section)
        try:
            setattr(target, fieldname, parser(value))
        except ValueError as exc:
            raise ValueError(f"config line {lineno}: {exc}") from exc
    cfg.training.task = cfg.data.task
    cfg.validate()
    return cfg


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for key, (section, fieldname, _) in _KEYS.items():
        target = cfg if section is None else getattr(cfg, section)
        lines.append(f"{key} = {_fmt(getattr(target, fieldname))}")
    return "\n".join(lines) + "\n"


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_config(cfg))


def config_equal(a: RunConfig, b: RunConfig) -> bool:
    return asdict(a) == asdict(b)
