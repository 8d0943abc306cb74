"""One INI file per experiment: network, correlation, optimizer, schedule, training and data settings.

Every key is optional; missing keys take the defaults of the matching
dataclass.  Unknown sections or keys and unparsable values raise
:class:`ConfigError` naming ``[section] key``.
"""

import configparser
import io
from dataclasses import dataclass, field, fields, replace

from .errors import ConfigError, ContractError
from .losses import ROUND_SCALE_WEIGHTS, LossWeightSchedule
from .network import NetworkConfig, desk_config
from .stereo_ops import CorrelationConfig
from .trainer import OptimizerConfig, TrainConfig


@dataclass(frozen=True)
class DataConfig:
    """Synthetic stereogram settings used by ``gen-data`` and the desk experiments."""

    train_size: int = 200
    test_size: int = 40
    height: int = 64
    width: int = 128
    seed: int = 1
    test_seed: int = 2
    max_disparity: float = 12.0
    dot_size: int = 2
    constant_probability: float = 0.25


@dataclass(frozen=True)
class ExperimentConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)


def desk_experiment():
    """The CPU preset: small network, 64x128 stereograms, abbreviated rounds, larger step size."""
    return ExperimentConfig(
        network=desk_config(),
        train=TrainConfig(
            batch_size=4,
            seed=0,
            loss_schedule=LossWeightSchedule.abbreviated((5, 5, 5, 8)),
            optimizer=OptimizerConfig(initial_lr=1e-3),
        ),
        data=DataConfig(),
    )


PRESETS = {"default": ExperimentConfig, "desk": desk_experiment}

_SIMPLE = {
    "network": lambda c: c.network,
    "correlation": lambda c: c.network.corr,
    "optimizer": lambda c: c.train.optimizer,
    "train": lambda c: c.train,
    "data": lambda c: c.data,
}
_SKIP = {"network": {"corr", "scales"}, "train": {"loss_schedule", "optimizer"}}


def _scalar_fields(section, obj):
    return [f for f in fields(obj) if f.name not in _SKIP.get(section, ())]


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ", ".join(_format(v) for v in value)
    return str(value)


def _parse(raw, default, where):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            lowered = raw.lower()
            if lowered in ("true", "yes", "on", "1"):
                return True
            if lowered in ("false", "no", "off", "0"):
                return False
            raise ValueError(f"expected a boolean, got {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(p.strip() for p in raw.split(",") if p.strip())
        return raw
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _floats(raw, where):
    try:
        return tuple(float(p) for p in raw.split(",") if p.strip())
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _build(cls_obj, section, updates):
    try:
        return replace(cls_obj, **updates)
    except (ContractError, ConfigError, ValueError, TypeError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def _parse_schedule(items, default):
    where = "[schedule]"
    epochs = [e for _, e in default.rounds]
    weights = [w for w, _ in default.rounds]
    if "epochs" in items:
        try:
            epochs = [int(p) for p in items.pop("epochs").split(",") if p.strip()]
        except ValueError as exc:
            raise ConfigError(f"{where} epochs: {exc}") from None
        while len(weights) < len(epochs):
            weights.append(ROUND_SCALE_WEIGHTS[-1])
        weights = weights[: len(epochs)]
    for key in list(items):
        if not (key.startswith("round") and key[5:].isdigit()):
            raise ConfigError(f"{where} {key}: unknown key (expected 'epochs' or 'roundN')")
        r = int(key[5:])
        if not 1 <= r <= len(epochs):
            raise ConfigError(f"{where} {key}: round out of range 1..{len(epochs)}")
        weights[r - 1] = _floats(items.pop(key), f"{where} {key}")
    try:
        return LossWeightSchedule(tuple(zip(map(tuple, weights), epochs)))
    except ContractError as exc:
        raise ConfigError(f"{where} {exc}") from None


def loads(text, base=None):
    """Parse INI text on top of ``base`` (defaults: :class:`ExperimentConfig`)."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from None
    cfg = base or ExperimentConfig()
    known = set(_SIMPLE) | {"schedule"}
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"[{section}]: unknown section (expected one of {sorted(known)})")

    sections = {}
    for section in _SIMPLE:
        if not parser.has_section(section):
            sections[section] = {}
            continue
        obj = _SIMPLE[section](cfg)
        allowed = {f.name: getattr(obj, f.name) for f in _scalar_fields(section, obj)}
        updates = {}
        for key, raw in parser.items(section):
            if key not in allowed:
                raise ConfigError(f"[{section}] {key}: unknown key")
            updates[key] = _parse(raw, allowed[key], f"[{section}] {key}")
        sections[section] = updates

    corr = _build(cfg.network.corr, "correlation", sections["correlation"])
    network = _build(cfg.network, "network", dict(sections["network"], corr=corr))
    optimizer = _build(cfg.train.optimizer, "optimizer", sections["optimizer"])
    sched = cfg.train.loss_schedule
    if parser.has_section("schedule"):
        sched = _parse_schedule(dict(parser.items("schedule")), sched)
    train = _build(cfg.train, "train", dict(sections["train"], optimizer=optimizer, loss_schedule=sched))
    data = _build(cfg.data, "data", sections["data"])
    return ExperimentConfig(network=network, train=train, data=data)


def load(path, base=None):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return loads(text, base)


def dumps(cfg):
    """Render every setting of ``cfg``; ``loads(dumps(cfg)) == cfg``."""
    parser = configparser.ConfigParser(interpolation=None)
    for section, getter in _SIMPLE.items():
        obj = getter(cfg)
        parser[section] = {f.name: _format(getattr(obj, f.name)) for f in _scalar_fields(section, obj)}
    sched = cfg.train.loss_schedule
    entries = {"epochs": _format([e for _, e in sched.rounds])}
    for i, (weights, _) in enumerate(sched.rounds, 1):
        entries[f"round{i}"] = _format([repr(float(w)) for w in weights])
    parser["schedule"] = entries
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def to_dict(cfg):
    """JSON-able snapshot used in run manifests."""
    return {
        "network": cfg.network.to_dict(),
        "optimizer": {f.name: getattr(cfg.train.optimizer, f.name) for f in fields(cfg.train.optimizer)},
        "train": {f.name: getattr(cfg.train, f.name) for f in _scalar_fields("train", cfg.train)},
        "schedule": [{"weights": list(w), "epochs": e} for w, e in cfg.train.loss_schedule.rounds],
        "data": {f.name: getattr(cfg.data, f.name) for f in fields(cfg.data)},
    }
