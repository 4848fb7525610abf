"""Run configuration, the self-describing binary array format, and checkpoints.

Array files are laid out as::

    8 bytes   magic b"ERDMARR1"
    4 bytes   header length n (little-endian uint32)
    n bytes   UTF-8 JSON header: version, shape, dtype ("<f4") and free metadata
    payload   little-endian float32 values in row-major order

Trajectories, forecasts and network checkpoints all use this layout.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .denoiser import RawNetwork
from .dynamics import SystemSpec
from .errors import ConfigError, ERDMError, FormatError
from .noise_prior import NoisePriorConfig
from .sampler import SamplerConfig
from .schedule import NoiseSchedule
from .training import TrainingConfig
from .weighting import LossWeighting

MAGIC = b"ERDMARR1"
FORMAT_VERSION = 1
MAX_HEADER = 1 << 24


# ---------------------------------------------------------------------------
# configuration sections not owned by other modules


@dataclass(frozen=True)
class InitConfig:
    kind: str = "external_forecaster"
    forecaster_checkpoint: str = ""

    def __post_init__(self):
        if self.kind not in ("external_forecaster", "persistence", "truth"):
            raise ConfigError("init.kind", f"unknown init strategy {self.kind!r}")


@dataclass(frozen=True)
class DataConfig:
    n_train_traj: int = 8
    train_length: int = 10000
    n_test_traj: int = 50
    test_length: int = 65
    seed: int = 0
    test_seed: int = 12345

    def __post_init__(self):
        for name in ("n_train_traj", "train_length", "n_test_traj", "test_length"):
            if getattr(self, name) < 1:
                raise ConfigError(f"data.{name}", "must be positive")


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "erdm"
    hidden: tuple = (128, 128)
    out_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("erdm", "edm"):
            raise ConfigError("model.kind", f"must be 'erdm' or 'edm', got {self.kind!r}")
        hidden = tuple(self.hidden)
        if not hidden or any(int(h) != h or h < 1 for h in hidden):
            raise ConfigError("model.hidden", f"must be a list of positive widths, got {self.hidden}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in hidden))


@dataclass(frozen=True)
class BaselineConfig:
    """Noise discretization and training law of the next-step baseline."""

    sigma_min: float = 0.002
    sigma_max: float = 80.0
    rho: float = 7.0
    p_mean: float = -1.2
    p_std: float = 1.2
    n_steps: int = 20

    def __post_init__(self):
        if self.n_steps < 1:
            raise ConfigError("baseline.n_steps", "must be at least 1")
        if not self.p_std > 0:
            raise ConfigError("baseline.p_std", "must be positive")
        if not 0 < self.sigma_min < self.sigma_max:
            raise ConfigError("baseline.sigma_min", "need 0 < sigma_min < sigma_max")

    @property
    def schedule(self) -> NoiseSchedule:
        return NoiseSchedule(self.sigma_min, self.sigma_max, self.rho, window=1)

    def weighting(self, sigma_data: float = 1.0) -> LossWeighting:
        return LossWeighting(self.p_mean, self.p_std, sigma_data, use_pdf=False)


SECTIONS = {
    "schedule": NoiseSchedule,
    "weighting": LossWeighting,
    "sampler": SamplerConfig,
    "prior": NoisePriorConfig,
    "init": InitConfig,
    "system": SystemSpec,
    "data": DataConfig,
    "model": ModelConfig,
    "baseline": BaselineConfig,
    "training": TrainingConfig,
}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    members: int = 50
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)
    weighting: LossWeighting = field(default_factory=LossWeighting)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    prior: NoisePriorConfig = field(default_factory=NoisePriorConfig)
    init: InitConfig = field(default_factory=InitConfig)
    system: SystemSpec = field(default_factory=SystemSpec)
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)

    def __post_init__(self):
        if int(self.members) != self.members or self.members < 2:
            raise ConfigError("members", f"ensembles need at least two members, got {self.members}")
        if self.sampler.dt > self.schedule.window:
            raise ConfigError("sampler.steps_per_snapshot", "a step may not finish more snapshots than the window")

    def to_dict(self) -> dict:
        out = {"seed": self.seed, "members": self.members}
        for name in SECTIONS:
            sec = dataclasses.asdict(getattr(self, name))
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in sec.items()}
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("<root>", "configuration must be a JSON object")
        unknown = set(data) - set(SECTIONS) - {"seed", "members"}
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown configuration key")
        kwargs = {}
        for key in ("seed", "members"):
            if key in data:
                kwargs[key] = _coerce(key, data[key], int)
        for name, section_cls in SECTIONS.items():
            if name in data:
                kwargs[name] = _build_section(name, section_cls, data[name])
        try:
            return cls(**kwargs)
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError("<root>", str(exc)) from exc

    def with_overrides(self, overrides) -> "RunConfig":
        return RunConfig.from_dict(apply_overrides(self.to_dict(), overrides))

    @property
    def hash(self) -> str:
        return config_hash(self)


def _coerce(path: str, value, kind):
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected a boolean, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return int(value)
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    if kind is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, f"expected a list, got {value!r}")
        return tuple(_coerce(f"{path}[{i}]", v, int) for i, v in enumerate(value))
    return value


def _build_section(name: str, section_cls, data):
    if not isinstance(data, dict):
        raise ConfigError(name, "section must be a JSON object")
    fields = {f.name: f for f in dataclasses.fields(section_cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"{name}.{sorted(unknown)[0]}", "unknown configuration key")
    defaults = section_cls()
    kwargs = {}
    for key, value in data.items():
        kind = type(getattr(defaults, key))
        kwargs[key] = _coerce(f"{name}.{key}", value, kind)
    try:
        return section_cls(**kwargs)
    except ConfigError as exc:
        if not exc.field.startswith(name + "."):
            raise ConfigError(f"{name}.{exc.field}", exc.message) from exc
        raise
    except ERDMError as exc:
        named = [k for k in fields if k in str(exc)]
        path = f"{name}.{named[0]}" if named else name
        raise ConfigError(path, str(exc)) from exc


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``key=value`` strings (dotted keys, JSON values) to a config dictionary."""
    data = json.loads(json.dumps(data))
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(item, "override must look like section.key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        parts = key.strip().split(".")
        node = data
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(key, "unknown configuration section")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(key, "unknown configuration key")
        node[parts[-1]] = value
    return data


def config_hash(cfg: RunConfig) -> str:
    text = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def save_config(cfg: RunConfig, path) -> None:
    text = json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"
    _atomic_write(path, text.encode("utf-8"))


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON: {exc}") from exc
    return RunConfig.from_dict(data)


# ---------------------------------------------------------------------------
# binary arrays


def _atomic_write(path, payload: bytes) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_array(header: dict, data) -> bytes:
    arr = np.ascontiguousarray(np.asarray(data), dtype="<f4")
    meta = dict(header or {})
    meta.update({"version": FORMAT_VERSION, "shape": list(arr.shape), "dtype": "<f4"})
    head = json.dumps(meta, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<I", len(head)) + head + arr.tobytes(order="C")


def decode_array(blob: bytes):
    if len(blob) < len(MAGIC) + 4 or blob[: len(MAGIC)] != MAGIC:
        raise FormatError("not an array file (bad magic)")
    (n,) = struct.unpack("<I", blob[len(MAGIC) : len(MAGIC) + 4])
    start = len(MAGIC) + 4
    if n > MAX_HEADER or start + n > len(blob):
        raise FormatError("truncated or oversized header")
    try:
        header = json.loads(blob[start : start + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable header: {exc}") from exc
    if not isinstance(header, dict):
        raise FormatError("header must be a JSON object")
    if header.get("version") != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {header.get('version')!r}")
    if header.get("dtype") != "<f4":
        raise FormatError(f"unsupported dtype {header.get('dtype')!r}")
    shape = header.get("shape")
    if not isinstance(shape, list) or not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in shape):
        raise FormatError(f"invalid shape {shape!r}")
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    payload = blob[start + n :]
    if len(payload) != 4 * count:
        raise FormatError(f"payload holds {len(payload)} bytes, shape {shape} needs {4 * count}")
    data = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    return header, data


def write_array(path, header: dict, data) -> None:
    _atomic_write(path, encode_array(header, data))


def read_array(path):
    with open(path, "rb") as fh:
        return decode_array(fh.read())


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, net: RawNetwork, params=None, meta: dict | None = None) -> None:
    """Store ``params`` (defaults to the network's own) with the architecture in the header."""
    params = net.params if params is None else params
    flat = np.concatenate([np.asarray(p).ravel() for p in params])
    header = {
        "kind": "checkpoint",
        "window": net.window,
        "dim": net.dim,
        "cond_dim": net.cond_dim,
        "hidden": list(net.hidden),
        "layer_shapes": net.mlp.shapes(),
    }
    header.update(meta or {})
    write_array(path, header, flat)


def load_checkpoint(path):
    """Return ``(network, header)``; parameters come back as float64."""
    header, flat = read_array(path)
    if header.get("kind") != "checkpoint":
        raise FormatError(f"{path} is not a checkpoint")
    try:
        net = RawNetwork(header["window"], header["dim"], header["hidden"], cond_dim=header["cond_dim"])
    except (KeyError, TypeError, ValueError, ERDMError) as exc:
        raise FormatError(f"invalid checkpoint header: {exc}") from exc
    if net.mlp.shapes() != header.get("layer_shapes"):
        raise FormatError("checkpoint layer shapes do not match its architecture")
    if flat.size != net.n_params:
        raise FormatError(f"checkpoint holds {flat.size} values, architecture needs {net.n_params}")
    net.mlp.set_flat(flat.astype(np.float64))
    return net, header
