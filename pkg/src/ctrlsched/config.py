"""Simulation configuration and its key-value file form.

Files are YAML (JSON is accepted too, being a subset). Every key is
optional; unknown keys are rejected with the offending path in the message.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .dynamics import COUNTER_CAP, PendulumParams, PlantModel, pendulum_model
from .phy import ChannelModel, FrameConfig, McsEntry, McsTable, Numerology
from .scheduler import BlockLayout, Policy

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration; the message names the key and constraint."""


@dataclass(frozen=True)
class SimConfig:
    devices: int = 25
    cell_radius: float = 50.0
    min_distance: float = 1.0
    duration: float = 1000.0
    cycle_period: float = 0.01
    policy: Policy = Policy.CONTROL_OPTIMAL
    seed: int = 0
    trials: int = 1
    rho: int = 12
    payload_bytes: int = 100
    numerology: Numerology = field(default_factory=Numerology)
    frame: FrameConfig = field(default_factory=FrameConfig)
    channel: ChannelModel = field(default_factory=ChannelModel)
    mcs_table: McsTable = field(default_factory=McsTable.default)
    pendulum: PendulumParams = field(default_factory=PendulumParams)
    lqr_q: tuple = (1.0, 1.0, 1.0, 1.0)
    lqr_r: tuple = (1.0,)
    noise_cov: tuple = (1e-6, 1e-6, 1e-6, 1e-6)
    lyapunov_weight: str = "riccati"
    initial_angle_var: float = 0.01
    fall_angle: float = math.pi / 6
    counter_cap: int = COUNTER_CAP

    @property
    def n_cycles(self) -> int:
        return int(round(self.duration / self.cycle_period))

    @property
    def payload_bits(self) -> int:
        return 8 * self.payload_bytes

    def layout(self) -> BlockLayout:
        return BlockLayout.from_numerology(self.numerology, self.frame.total_prbs, self.rho)

    def plant_model(self) -> PlantModel:
        Q = _matrix(self.lqr_q)
        R = _matrix(self.lqr_r)
        W = _matrix(self.noise_cov)
        if self.lyapunov_weight == "riccati":
            return pendulum_model(self.pendulum, Q=Q, R=R, W=W)
        return pendulum_model(self.pendulum, Q=Q, R=R, W=W, P=np.eye(4))

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    def validate(self) -> None:
        _require(self.devices >= 0, "devices", "must be >= 0")
        _require(self.cell_radius > 0, "cell_radius", "must be > 0")
        _require(0 < self.min_distance <= self.cell_radius, "min_distance",
                 "must be in (0, cell_radius]")
        _require(self.duration >= 0, "duration", "must be >= 0")
        _require(self.cycle_period > 0, "cycle_period", "must be > 0")
        _require(math.isclose(self.cycle_period, self.frame.frame_duration, rel_tol=1e-9),
                 "cycle_period", "must equal frame.frame_duration (one cycle per frame)")
        _require(math.isclose(self.frame.cycle_period, self.cycle_period, rel_tol=1e-9),
                 "frame.cycle_period", "must equal cycle_period")
        ratio = self.duration / self.cycle_period
        _require(abs(ratio - round(ratio)) < 1e-6, "duration",
                 "must be an integral number of cycle periods")
        _require(0 <= self.seed < 2**64, "seed", "must be a 64-bit unsigned integer")
        _require(self.trials >= 1, "trials", "must be >= 1")
        _require(self.rho >= 1, "rho", "must be >= 1")
        _require(self.rho <= self.frame.total_prbs, "rho", "must not exceed frame.total_prbs")
        _require(self.payload_bytes >= 1, "payload_bytes", "must be >= 1")
        _require(self.lyapunov_weight in ("riccati", "identity"), "lyapunov_weight",
                 "must be 'riccati' or 'identity'")
        _require(self.initial_angle_var >= 0, "initial_angle_var", "must be >= 0")
        _require(0 < self.fall_angle < math.pi / 2, "fall_angle", "must be in (0, pi/2)")
        _require(self.counter_cap >= 1, "counter_cap", "must be >= 1")
        try:
            self.frame.check(self.numerology)
        except ValueError as exc:
            raise ConfigError(f"frame: {exc}") from None
        problems = self.mcs_table.monotonicity_problems()
        _require(not problems, "mcs_table", "; ".join(problems))
        for key, value, size in (("lqr_q", self.lqr_q, 4), ("lqr_r", self.lqr_r, 1),
                                 ("noise_cov", self.noise_cov, 4)):
            try:
                M = _matrix(value)
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from None
            _require(M.shape == (size, size), key,
                     f"must be a length-{size} diagonal or a {size}x{size} matrix")


def _require(cond, key, constraint):
    if not cond:
        raise ConfigError(f"{key}: {constraint}")


def _matrix(value) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim == 1:
        return np.diag(arr)
    if arr.ndim == 2 and arr.shape[0] == arr.shape[1]:
        return arr
    raise ValueError(f"expected a diagonal list or square matrix, got shape {arr.shape}")


_NESTED = {
    "numerology": Numerology,
    "frame": FrameConfig,
    "channel": ChannelModel,
    "pendulum": PendulumParams,
}
_TUPLE_FIELDS = ("lqr_q", "lqr_r", "noise_cov")


def _build_nested(cls, key, data):
    if not isinstance(data, dict):
        raise ConfigError(f"{key}: must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{key}.{unknown[0]}: unknown key")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: {exc}") from None


def _build_table(data) -> McsTable:
    if not isinstance(data, list) or not data:
        raise ConfigError("mcs_table: must be a nonempty list of entries")
    names = {f.name for f in dataclasses.fields(McsEntry)}
    entries = []
    for pos, item in enumerate(data):
        if not isinstance(item, dict):
            raise ConfigError(f"mcs_table[{pos}]: must be a mapping")
        unknown = sorted(set(item) - names)
        if unknown:
            raise ConfigError(f"mcs_table[{pos}].{unknown[0]}: unknown key")
        item = {"index": pos, **item}
        try:
            entries.append(McsEntry(**item))
        except TypeError as exc:
            raise ConfigError(f"mcs_table[{pos}]: {exc}") from None
    try:
        return McsTable(entries)
    except ValueError as exc:
        raise ConfigError(f"mcs_table: {exc}") from None


def config_from_dict(data: dict | None, base: SimConfig | None = None,
                     validate: bool = True) -> SimConfig:
    """Overlay ``data`` onto ``base`` (defaults when omitted) and validate."""
    base = base or SimConfig()
    data = dict(data or {})
    version = data.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: unsupported version {version!r}")
    known = {f.name for f in dataclasses.fields(SimConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown key")
    changes = {}
    for key, value in data.items():
        if key in _NESTED:
            merged = {**dataclasses.asdict(getattr(base, key)), **(value or {})} \
                if isinstance(value, dict) else value
            changes[key] = _build_nested(_NESTED[key], key, merged)
        elif key == "mcs_table":
            changes[key] = _build_table(value)
        elif key == "policy":
            try:
                changes[key] = Policy.parse(value)
            except ValueError:
                raise ConfigError(f"policy: unknown scheduler {value!r}") from None
        elif key in _TUPLE_FIELDS:
            changes[key] = _freeze(value)
        else:
            changes[key] = value
    cfg = dataclasses.replace(base, **changes)
    if validate:
        cfg.validate()
    return cfg


def _freeze(value):
    if isinstance(value, (list, tuple)):
        return tuple(_freeze(v) for v in value)
    return float(value)


def config_to_dict(cfg: SimConfig) -> dict:
    out = {}
    for f in dataclasses.fields(SimConfig):
        value = getattr(cfg, f.name)
        if f.name in _NESTED:
            value = dataclasses.asdict(value)
        elif f.name == "mcs_table":
            value = value.to_dicts()
        elif f.name == "policy":
            value = value.value
        elif f.name in _TUPLE_FIELDS:
            value = np.asarray(value, dtype=float).tolist()
        out[f.name] = value
    return {"schema_version": SCHEMA_VERSION, **out}


def load_config(path, validate: bool = True) -> SimConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML/JSON ({exc})") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(data, validate=validate)


def load_mcs_table(path) -> McsTable:
    """Read an MCS table from a file holding a list or a ``mcs_table`` key."""
    data = yaml.safe_load(Path(path).read_text())
    if isinstance(data, dict):
        data = data.get("mcs_table")
    return _build_table(data)
