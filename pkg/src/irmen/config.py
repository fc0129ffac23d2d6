"""Run configuration: one YAML file, every default spelled out.

Unknown keys are rejected and physical parameters are validated by building
the corresponding model objects at load time.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml

from .cenn_engine import OtaModel, StageTiming
from .constants import (
    ALPHA, ALPHA_ME, C_ME, ETA, K_ANIS, LAMBDA_NM, MS, OTA_MAX_CURRENT, OTA_STATIC_POWER,
    POWERED_WINDOW, R_IR, RHO, STAGE_DELAY, V_D, V_SUPPLY, V_THRESHOLD,
)
from .errors import ConfigError, IrmenError
from .experiments import (
    MC_ITERATIONS, SWEEP_LENGTHS, DeviceSettings, MemoryDemoConfig, SweepConfig, parse_bits,
)
from .irmen_cell import CellParams
from .magnetodynamics import DEFAULT_ME_THICKNESS_NM, DEFAULT_THICKNESS_NM, DEFAULT_WIDTH_NM


@dataclass
class CellSection:
    C: float = C_ME
    R_IR: float = R_IR
    R_FM: float = 20e3 - 2.0
    R_gnd: float = 2.0
    eta: float = ETA
    lambda_nm: float = LAMBDA_NM
    rho: float = RHO
    V_D: float = V_D
    read_pulse: float = 200e-12
    gain_nm: float = LAMBDA_NM
    C_load: float = 1e-15
    v_rail: float = V_SUPPLY
    i_max: float = OTA_MAX_CURRENT


@dataclass
class DeviceSection:
    length: float = 60.0  # nm, for single-length commands
    temperature: float = 300.0  # K
    width: float = DEFAULT_WIDTH_NM
    thickness: float = DEFAULT_THICKNESS_NM
    Ms: float = MS
    K: float = K_ANIS
    alpha: float = ALPHA
    me_thickness: float = DEFAULT_ME_THICKNESS_NM
    alpha_me: float = ALPHA_ME
    bias_ratio: float = 3e-3
    dt: float = 1e-12
    cell: CellSection = field(default_factory=CellSection)


@dataclass
class OtaSection:
    max_current: float = OTA_MAX_CURRENT
    supply: float = V_SUPPLY
    v_threshold: float = V_THRESHOLD
    gate_cap: float = 0.2e-15
    access_cap: float = 0.1e-15
    static_power: float = OTA_STATIC_POWER
    mirror_ratio: float = 2.0


@dataclass
class TimingSection:
    powered_window: float = POWERED_WINDOW
    stage_delay: float = STAGE_DELAY


@dataclass
class NetworkSection:
    layers: list = field(default_factory=lambda: ["conv:4", "relu", "pool", "conv:8", "relu",
                                                  "pool", "fc:10"])
    bits: typing.Optional[str] = None  # "unlimited" or an integer
    mode: str = "ideal"  # classify mode: ideal | device


@dataclass
class TrainSection:
    epochs: int = 12
    batch_size: int = 50
    lr: float = 0.01
    weight_decay: float = 0.0
    sharpness: float = 36.0
    limit: typing.Optional[int] = None


@dataclass
class MemorySection:
    length: float = 60.0
    temperature: float = 300.0
    levels: list = field(default_factory=lambda: [0.6, -0.4])
    write_time: float = 1e-9
    hold_time: float = 12e-9
    read_pulse: float = 200e-12
    read_period: float = 2e-9
    first_read: float = 3e-9
    record_every: float = 10e-12


@dataclass
class TransferSection:
    ratios: list = field(default_factory=lambda: [1.5, 2.0, 4.0])
    points: int = 61
    max_input: float = 1.5
    temperature: float = 0.0


@dataclass
class McSection:
    lengths: list = field(default_factory=lambda: list(SWEEP_LENGTHS))
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    iterations: int = MC_ITERATIONS
    temperature: float = 300.0


@dataclass
class SweepSection:
    variable: str = "fm_length"
    values: list = field(default_factory=lambda: list(SWEEP_LENGTHS))
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    subset_size: int = 500
    subset_start: int = 4500  # held-out block, as for classify
    length: float = 60.0
    bits: typing.Optional[str] = None
    temperature: float = 300.0
    mc_iterations: int = 2000


@dataclass
class ClassifySection:
    subset_size: typing.Optional[int] = 500
    subset_start: int = 4500  # the bundled subset's held-out block


@dataclass
class ExperimentSection:
    memory: MemorySection = field(default_factory=MemorySection)
    transfer: TransferSection = field(default_factory=TransferSection)
    mc: McSection = field(default_factory=McSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    classify: ClassifySection = field(default_factory=ClassifySection)


@dataclass
class IoSection:
    data_dir: typing.Optional[str] = None  # default: $IRMEN_DATA_DIR, then bundled data
    data_prefix: str = "mnist5k"
    weights: typing.Optional[str] = None  # default: bundled trained weights
    weights_out: str = "weights.irmw"
    output_dir: str = "out"


@dataclass
class RunConfig:
    seed: int = 0
    jobs: int = 1
    device: DeviceSection = field(default_factory=DeviceSection)
    ota: OtaSection = field(default_factory=OtaSection)
    timing: TimingSection = field(default_factory=TimingSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    train: TrainSection = field(default_factory=TrainSection)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    io: IoSection = field(default_factory=IoSection)

    # -- builders for domain objects --------------------------------------

    def cell_params(self) -> CellParams:
        return CellParams(**dataclasses.asdict(self.device.cell))

    def device_settings(self) -> DeviceSettings:
        d = dataclasses.asdict(self.device)
        d.pop("length")
        d.pop("temperature")
        d["cell"] = self.cell_params()
        return DeviceSettings(**d)

    def ota_model(self) -> OtaModel:
        return OtaModel(**dataclasses.asdict(self.ota))

    def stage_timing(self) -> StageTiming:
        return StageTiming(**dataclasses.asdict(self.timing))

    def memory_config(self) -> MemoryDemoConfig:
        d = dataclasses.asdict(self.experiment.memory)
        d["levels"] = tuple(d["levels"])
        return MemoryDemoConfig(seed=self.seed, **d)

    def sweep_config(self) -> SweepConfig:
        d = dataclasses.asdict(self.experiment.sweep)
        d["values"] = tuple(d["values"])
        d["seeds"] = tuple(d["seeds"])
        d["bits"] = parse_bits(d["bits"])
        return SweepConfig(**d)

    def network_spec(self):
        from .conn_pipeline import NetworkSpec

        return NetworkSpec.from_strings(self.network.layers)

    def bits(self):
        return parse_bits(self.network.bits)

    def validate(self):
        """Build every model once so bad values fail at load time."""
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.network.mode not in ("ideal", "device"):
            raise ConfigError(f"network.mode must be ideal or device, not {self.network.mode!r}")
        try:
            s = self.device_settings()
            s.sim(self.device.length, self.device.temperature)
            self.ota_model()
            self.stage_timing()
            self.memory_config()
            self.sweep_config()
            self.bits()
            self.network_spec()
        except IrmenError as e:
            raise ConfigError(f"invalid configuration: {e}") from e
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid configuration: {e}") from e
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)


def _coerce(tp, value, where):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        tp = args[0]
        if tp is str:
            return str(value)
    if value is None:
        raise ConfigError(f"{where} must not be null")
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise ConfigError(f"{where} must be a number")
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"{where} must be a number, got {value!r}") from None
    if tp is int:
        if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
            raise ConfigError(f"{where} must be an integer")
        try:
            return int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{where} must be an integer, got {value!r}") from None
    if tp is str:
        if not isinstance(value, (str, int, float)):
            raise ConfigError(f"{where} must be a string")
        return str(value)
    if tp is list or origin is list:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where} must be a list")
        return list(value)
    return value


def _build(cls, data, where):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    hints = typing.get_type_hints(cls)
    names = [f.name for f in fields(cls)]
    unknown = sorted(set(data) - set(names))
    if unknown:
        prefix = f"{where}." if where else ""
        raise ConfigError(f"unknown config key(s): {', '.join(prefix + k for k in unknown)}")
    kw = {}
    for k, v in data.items():
        tp = hints[k]
        path = f"{where}.{k}" if where else k
        kw[k] = _build(tp, v, path) if is_dataclass(tp) else _coerce(tp, v, path)
    return cls(**kw)


def from_dict(data) -> RunConfig:
    return _build(RunConfig, data, "").validate()


def load(path=None) -> RunConfig:
    if path is None:
        return RunConfig().validate()
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: not valid YAML ({e})") from None
    return from_dict(data or {})


def apply_override(data: dict, dotted: str, raw: str) -> dict:
    """Set ``a.b.c`` in a nested dict from a YAML scalar string."""
    keys = dotted.split(".")
    node = data
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {dotted}: {k} is not a section")
    node[keys[-1]] = yaml.safe_load(raw)
    return data
