"""Per-stage and per-image energy and delay accounting.

Components per stage:

* ``ota_static``: every active OTA powered for the window
* ``gate_cycling``: each active OTA's input gate charged through the full swing
* ``access_cycling``: each active OTA's weight-storage access transistor cycled
* ``drive``: read current through every memory cell during the window
* ``write``: charge delivered to every written ME capacitor at full scale

The final fully connected layer is evaluated off-grid and never counted.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .cenn_engine import OtaModel, StageTiming, output_shape
from .constants import BASELINE_DELAY, BASELINE_ENERGY
from .errors import ParameterError
from .irmen_cell import CellParams
from .io_utils import atomic_write_text

COMPONENTS = ("ota_static", "gate_cycling", "access_cycling", "drive", "write")

# OtaModel's default static power is calibrated (calibrate_static_power) so the
# default network with 40 nm magnets lands at CALIBRATION_TARGET per image.
CALIBRATION_TARGET = 100e-12
CALIBRATION_LENGTH = 40.0


@dataclass(frozen=True)
class StageEnergy:
    ota_static: float = 0.0
    gate_cycling: float = 0.0
    access_cycling: float = 0.0
    drive: float = 0.0
    write: float = 0.0
    index: int = 0
    tag: str = ""
    n_cells: int = 0
    n_otas: float = 0.0
    n_read: int = 0

    @property
    def total(self) -> float:
        return sum(getattr(self, c) for c in COMPONENTS)


@dataclass(frozen=True)
class EnergyModels:
    ota: OtaModel = field(default_factory=OtaModel)
    cell: CellParams = field(default_factory=CellParams)
    timing: StageTiming = field(default_factory=StageTiming)
    v_write: float = 0.0  # full-scale capacitor voltage (magnet saturation), V

    @classmethod
    def for_length(cls, length, ota: OtaModel | None = None, cell: CellParams | None = None,
                   timing: StageTiming | None = None, v_write: float | None = None):
        """Default models with the write swing of ``length`` nm magnets."""
        if v_write is None:
            from .magnetodynamics import MagnetSim

            v_write = MagnetSim.for_length(length, temperature=0.0).v_saturation
        return cls(ota or OtaModel(), cell or CellParams(), timing or StageTiming(), v_write)


def stage_energy(grid_dims, template, ota: OtaModel, cell: CellParams,
                 timing: StageTiming | None = None, *, in_channels: int = 1,
                 n_read: int | None = None, v_write: float = 0.0, index=0,
                 tag="") -> StageEnergy:
    """Energy of one stage writing a grid of ``grid_dims`` cells.

    ``n_read`` memory cells are read (defaults to the written cell count).
    """
    timing = timing or StageTiming()
    n = int(np.prod(grid_dims)) if np.size(grid_dims) else 0
    n_read = n if n_read is None else int(n_read)
    if n < 0 or n_read < 0:
        raise ParameterError("cell counts must be non-negative")
    n_otas = template.active_otas(in_channels) * n
    window = timing.powered_window
    swing2 = ota.v_swing**2
    supply_swing = ota.v_swing
    return StageEnergy(
        ota_static=n_otas * ota.static_power * window,
        gate_cycling=n_otas * 0.5 * ota.gate_cap * swing2,
        access_cycling=n_otas * 0.5 * ota.access_cap * swing2,
        drive=n_read * cell.V_D**2 / (cell.R_FM + cell.R_gnd) * window,
        write=n * cell.C * abs(v_write) * supply_swing,
        index=index, tag=tag, n_cells=n, n_otas=float(n_otas), n_read=n_read,
    )


@dataclass
class EnergyReport:
    stages: list
    delay: float
    baseline_energy: float = BASELINE_ENERGY
    baseline_delay: float = BASELINE_DELAY
    metadata: dict = field(default_factory=dict)

    @property
    def totals(self) -> dict:
        return {c: float(sum(getattr(s, c) for s in self.stages)) for c in COMPONENTS}

    @property
    def total(self) -> float:
        return float(sum(self.totals.values()))

    @property
    def n_stages(self) -> int:
        return len(self.stages)

    @property
    def energy_ratio(self) -> float:
        """Baseline energy over this design's energy (inf for an empty schedule)."""
        return self.baseline_energy / self.total if self.total > 0 else float("inf")

    @property
    def delay_ratio(self) -> float:
        return self.baseline_delay / self.delay if self.delay > 0 else float("inf")

    def summary(self) -> dict:
        return {
            "n_stages": self.n_stages,
            "energy_per_image_J": self.total,
            "components_J": self.totals,
            "delay_s": self.delay,
            "baseline_energy_J": self.baseline_energy,
            "baseline_delay_s": self.baseline_delay,
            "baseline_energy_ratio": self.energy_ratio,
            "baseline_delay_ratio": self.delay_ratio,
            "fc_layer_included": False,
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        d = self.summary()
        d["stages"] = [dict(asdict(s), total=s.total) for s in self.stages]
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        out = io.StringIO()
        cols = [f.name for f in fields(StageEnergy)] + ["total"]
        w = csv.writer(out, lineterminator="\n")
        w.writerow(cols)
        for s in self.stages:
            w.writerow([repr(v) if isinstance(v, float) else v
                        for v in [getattr(s, c) for c in cols[:-1]] + [s.total]])
        return out.getvalue()

    def write(self, json_path=None, csv_path=None):
        if json_path:
            atomic_write_text(json_path, self.to_json())
        if csv_path:
            atomic_write_text(csv_path, self.to_csv())


def total_delay(schedule, timing: StageTiming | None = None) -> float:
    timing = timing or StageTiming()
    return len(schedule) * timing.stage_delay


def image_energy(schedule, models: EnergyModels | None = None,
                 input_shape=(1, 28, 28)) -> EnergyReport:
    """Sum stage energies along a compiled schedule (FC layer excluded).

    Grid sizes follow the schedule from ``input_shape``; each stage reads the
    whole memory grid, except the first whose input arrives from the DAC.
    """
    models = models or EnergyModels.for_length(CALIBRATION_LENGTH)
    stages = getattr(schedule, "stages", schedule)
    shape = tuple(input_shape)
    records = []
    for k, st in enumerate(stages):
        t = st.template
        out = output_shape(t, shape)
        n_read = int(np.prod(shape)) if k > 0 else 0
        records.append(stage_energy(out, t, models.ota, models.cell, models.timing,
                                    in_channels=shape[0], n_read=n_read,
                                    v_write=models.v_write, index=k, tag=st.tag))
        shape = out
    meta = {
        "static_power_W": models.ota.static_power,
        "v_write_V": models.v_write,
        "input_shape": list(input_shape),
    }
    return EnergyReport(records, total_delay(stages, models.timing), metadata=meta)


def calibrate_static_power(schedule, models: EnergyModels, target=CALIBRATION_TARGET,
                           input_shape=(1, 28, 28)) -> float:
    """Static OTA power that makes ``image_energy`` equal ``target``."""
    from dataclasses import replace

    zero = replace(models, ota=replace(models.ota, static_power=0.0))
    rep = image_energy(schedule, zero, input_shape)
    ota_time = sum(s.n_otas for s in rep.stages) * models.timing.powered_window
    if ota_time == 0:
        raise ParameterError("schedule has no active OTAs to calibrate against")
    p = (target - rep.total) / ota_time
    if p < 0:
        raise ParameterError(f"dynamic energy {rep.total:.3e} J already exceeds the target")
    return p
