"""Dual-grid CeNN executor.

A stage drives every cell of the compute grid with the summed output
currents of its OTAs. Each OTA multiplies one template weight by one
normalized neighbour output (from the memory grid through B, from the
compute grid's own previous outputs through A) and clips at full scale.
The cell then turns that current into a new output, either through an
analytic transfer function (ideal mode) or by simulating every magnet
(device mode).

Grids hold ``(channels, rows, cols)`` planes. Templates are depthwise
(one 3x3 kernel shared by all channels) unless ``B`` carries explicit
``(out, in, 3, 3)`` channel mixing.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .constants import OTA_MAX_CURRENT, OTA_STATIC_POWER, POWERED_WINDOW, STAGE_DELAY, V_SUPPLY, V_THRESHOLD
from .errors import ParameterError, StructuralError
from .irmen_cell import CellParams, calibrated, read_batch, target_voltage
from .magnetodynamics import MagnetSim, equilibrium_state

log = logging.getLogger(__name__)

# (row, col) offsets in template order
OFFSETS = [(di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1)]


@dataclass(frozen=True)
class Template:
    A: np.ndarray
    B: np.ndarray
    z: np.ndarray | float = 0.0
    precision_bits: int | None = None
    boundary: float = 0.0  # output of the virtual cells outside the grid
    input_stride: int = 1  # memory-grid sampling pitch (folds in pool subsampling)
    name: str = ""

    def __post_init__(self):
        A = np.asarray(self.A, dtype=np.float64)
        B = np.asarray(self.B, dtype=np.float64)
        if A.shape != (3, 3):
            raise StructuralError(f"A template must be 3x3, got {A.shape}")
        if B.ndim == 2:
            if B.shape != (3, 3):
                raise StructuralError(f"B template must be 3x3, got {B.shape}")
        elif B.ndim != 4 or B.shape[2:] != (3, 3):
            raise StructuralError(f"channel-mixing B must be (out, in, 3, 3), got {B.shape}")
        z = np.asarray(self.z, dtype=np.float64)
        if B.ndim == 4 and z.ndim and z.shape != (B.shape[0],):
            raise StructuralError(f"bias shape {z.shape} does not match {B.shape[0]} outputs")
        if self.input_stride < 1:
            raise ParameterError("input stride must be >= 1")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "z", z)

    @property
    def depthwise(self) -> bool:
        return self.B.ndim == 2

    def out_channels(self, in_channels: int) -> int:
        if self.depthwise:
            return in_channels
        if self.B.shape[1] != in_channels:
            raise StructuralError(
                f"template {self.name!r} expects {self.B.shape[1]} input channels, "
                f"memory grid has {in_channels}"
            )
        return self.B.shape[0]

    def weights(self) -> np.ndarray:
        return np.concatenate([self.A.ravel(), self.B.ravel(), np.atleast_1d(self.z).ravel()])

    def active_otas(self, in_channels: int) -> int:
        """OTAs powered per compute cell (nonzero weights plus a bias source)."""
        a = int(np.count_nonzero(self.A))
        if self.depthwise:
            b = int(np.count_nonzero(self.B))
            z = int(np.count_nonzero(self.z)) and 1
        else:
            per_out = np.count_nonzero(self.B.reshape(self.B.shape[0], -1), axis=1)
            b = float(per_out.mean())
            z = float(np.mean(np.broadcast_to(self.z, (self.B.shape[0],)) != 0))
        return a + b + z


def _step_for(bits: int, w_max: float) -> float:
    return w_max / max(2 ** (bits - 1) - 1, 1)


def quantize_weights(t: Template, bits: int | None) -> Template:
    """Round A, B and z onto a symmetric uniform grid spanning the template's largest weight.

    ``bits`` b gives 2^b - 1 levels (sign plus b-1 magnitude bits); b = 1 is
    treated as the ternary grid {-w_max, 0, w_max}. ``None`` leaves the
    template untouched.
    """
    if bits is None:
        return t
    if int(bits) != bits or bits < 1:
        raise ParameterError(f"precision must be a positive integer of bits, got {bits}")
    w_max = float(np.abs(t.weights()).max()) if t.weights().size else 0.0
    if w_max == 0.0:
        return replace(t, precision_bits=int(bits))
    step = _step_for(int(bits), w_max)

    def q(x):
        return np.round(np.asarray(x) / step) * step

    return replace(t, A=q(t.A), B=q(t.B), z=q(t.z), precision_bits=int(bits))


def quantization_step(t: Template, bits: int) -> float:
    return _step_for(bits, float(np.abs(t.weights()).max()))


@dataclass(frozen=True)
class OtaModel:
    max_current: float = OTA_MAX_CURRENT
    supply: float = V_SUPPLY
    v_threshold: float = V_THRESHOLD
    gate_cap: float = 0.2e-15
    access_cap: float = 0.1e-15
    static_power: float = OTA_STATIC_POWER
    mirror_ratio: float = 2.0

    def __post_init__(self):
        if min(self.max_current, self.supply, self.gate_cap, self.mirror_ratio) <= 0:
            raise ParameterError("OTA constants must be positive")
        if self.static_power < 0 or self.access_cap < 0:
            raise ParameterError("OTA power and access capacitance must be >= 0")

    @property
    def v_swing(self) -> float:
        return 2 * self.supply


def ota_current(v_in_normalized, weight, ota: OtaModel | None = None):
    """Output current in A: weight * v * full scale, clipped at full scale."""
    imax = (ota or OtaModel()).max_current
    return np.clip(np.asarray(weight) * np.asarray(v_in_normalized), -1.0, 1.0) * imax


@dataclass(frozen=True)
class StageTiming:
    powered_window: float = POWERED_WINDOW
    stage_delay: float = STAGE_DELAY

    def __post_init__(self):
        if not 0 < self.powered_window <= self.stage_delay:
            raise ParameterError("powered window must be positive and no longer than a stage")


def _neighbours(y: np.ndarray, di: int, dj: int, stride: int, boundary: float,
                out_hw: tuple[int, int]) -> np.ndarray:
    """Values at (stride*i + di*stride, stride*j + dj*stride), boundary outside."""
    c, h, w = y.shape
    oh, ow = out_hw
    pad = stride
    yp = np.full((c, h + 2 * pad, w + 2 * pad), boundary)
    yp[:, pad:pad + h, pad:pad + w] = y
    r0 = pad + di * stride
    c0 = pad + dj * stride
    return yp[:, r0:r0 + stride * oh:stride, c0:c0 + stride * ow:stride]


def output_shape(t: Template, mem_shape) -> tuple[int, int, int]:
    c, h, w = mem_shape
    s = t.input_stride
    if h % s or w % s:
        raise StructuralError(f"grid {h}x{w} not divisible by input stride {s}")
    return t.out_channels(c), h // s, w // s


def template_input(t: Template, mem_out: np.ndarray, own_out: np.ndarray | None) -> np.ndarray:
    """Normalized cell input currents: clipped OTA products summed per cell."""
    mem_out = np.asarray(mem_out, dtype=np.float64)
    if mem_out.ndim != 3:
        raise StructuralError(f"grid outputs must be (channels, rows, cols), got {mem_out.shape}")
    shape = output_shape(t, mem_out.shape)
    hw = shape[1:]
    u = np.zeros(shape)
    for k, (di, dj) in enumerate(OFFSETS):
        nb = _neighbours(mem_out, di, dj, t.input_stride, t.boundary, hw)
        if t.depthwise:
            w = t.B.flat[k]
            if w:
                u += np.clip(w * nb, -1.0, 1.0)
        else:
            w = t.B[:, :, k // 3, k % 3]
            if np.any(w):
                u += np.clip(w[:, :, None, None] * nb[None], -1.0, 1.0).sum(axis=1)
    if np.any(t.A):
        if own_out is None or own_out.shape != shape:
            raise StructuralError("feedback template needs the compute grid's previous outputs")
        for k, (di, dj) in enumerate(OFFSETS):
            w = t.A.flat[k]
            if w:
                u += np.clip(w * _neighbours(own_out, di, dj, 1, t.boundary, hw), -1.0, 1.0)
    z = np.clip(t.z, -1.0, 1.0)
    u += z[:, None, None] if z.ndim else z
    return u


@dataclass
class CennGrid:
    """One of the two cell arrays.

    ``outputs`` are the normalized readouts from the grid's last read. In
    device mode ``m`` and ``v_cap`` carry the physical state and ``stale``
    marks a grid that has been written but not read since.
    """

    outputs: np.ndarray
    m: np.ndarray | None = None
    v_cap: np.ndarray | None = None
    stale: bool = False
    name: str = "A"

    def __post_init__(self):
        self.outputs = np.asarray(self.outputs, dtype=np.float64)
        if self.outputs.ndim != 3:
            raise StructuralError("grid outputs must be (channels, rows, cols)")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.outputs.shape

    @property
    def size(self) -> int:
        return self.outputs.size

    @classmethod
    def at_rest(cls, shape, name="A", device=False):
        g = cls(np.zeros(shape), name=name)
        if device:
            g.m = equilibrium_state(np.zeros(int(np.prod(shape))))
            g.v_cap = np.zeros(shape)
        return g

    @classmethod
    def loaded(cls, values, name="A"):
        """A grid whose outputs are set directly (external input plane)."""
        v = np.asarray(values, dtype=np.float64)
        if v.ndim == 2:
            v = v[None]
        return cls(v.copy(), name=name)

    def copy(self) -> "CennGrid":
        return CennGrid(
            self.outputs.copy(),
            None if self.m is None else self.m.copy(),
            None if self.v_cap is None else self.v_cap.copy(),
            self.stale,
            self.name,
        )


@dataclass(frozen=True)
class DeviceModel:
    """Magnet and cell electrical parameters shared by every cell in a grid."""

    sim: MagnetSim
    cell: CellParams

    @classmethod
    def for_length(cls, length, temperature=0.0, dt=1e-12, cell: CellParams | None = None,
                   **sim_kw) -> "DeviceModel":
        """Magnets of the given length with the shunt calibrated to them."""
        sim = MagnetSim.for_length(length, temperature=temperature, dt=dt, **sim_kw)
        return cls(sim, calibrated(cell or CellParams(), sim))

    @property
    def thermal(self) -> bool:
        return self.sim.params.temperature > 0


def _key(noise_keys, name):
    if noise_keys is None:
        return None
    return noise_keys(name)


def read_grid(g: CennGrid, device: DeviceModel, timing: StageTiming, noise_key=None) -> CennGrid:
    """Read every cell of a stale device grid during a powered window."""
    if not g.stale:
        return g
    if device.thermal and noise_key is None:
        raise ParameterError("thermal device run needs a noise key")
    y = read_batch(device.sim, device.cell, g.m, g.v_cap.ravel(), pulse=timing.powered_window,
                   noise_key=noise_key)
    g.outputs = y.reshape(g.shape)
    g.stale = False
    return g


@dataclass(frozen=True)
class StageRecord:
    index: int
    tag: str
    layer: str
    src: str
    dst: str
    shape: tuple
    in_channels: int
    n_cells: int
    n_active_otas: float
    n_read: int
    mean_abs_v: float
    duration: float


def stage_step(mem: CennGrid, comp: CennGrid, t: Template, timing: StageTiming | None = None,
               *, transfer: Callable | None = None, device: DeviceModel | None = None,
               noise_keys: Callable | None = None) -> CennGrid:
    """Run one stage: read ``mem``, drive ``comp``, let it settle.

    Exactly one of ``transfer`` (ideal mode) and ``device`` must be given.
    Returns the updated compute grid; ``mem`` is read in place but its stored
    state is otherwise left alone.
    """
    timing = timing or StageTiming()
    if (transfer is None) == (device is None):
        raise ParameterError("give exactly one of an analytic transfer or a device model")
    if device is not None:
        read_grid(mem, device, timing, _key(noise_keys, "read"))
    shape = output_shape(t, mem.shape)
    if comp.shape != shape:
        comp = CennGrid.at_rest(shape, comp.name, device is not None)
    elif comp.stale:
        raise StructuralError(f"grid {comp.name} was written but never read")
    u = template_input(t, mem.outputs, comp.outputs if np.any(t.A) else None)
    comp = comp.copy()
    if device is None:
        comp.outputs = transfer(u)
        return comp
    if comp.m is None:
        comp.m = equilibrium_state(np.zeros(comp.size))
        comp.v_cap = np.zeros(shape)
    v_new = target_voltage(u * device.cell.i_max, device.cell)
    device.sim.run(comp.m, comp.v_cap.ravel(), v_new.ravel(), duration=timing.stage_delay,
                   ramp_time=timing.powered_window, noise_key=_key(noise_keys, "drive"))
    comp.v_cap = v_new
    comp.stale = True
    return comp


@dataclass(frozen=True)
class ScheduledStage:
    template: Template
    src: str = "A"  # memory grid for this stage
    layer: str = ""
    tag: str = ""

    @property
    def dst(self) -> str:
        return "B" if self.src == "A" else "A"


@dataclass
class ScheduleResult:
    grids: dict
    final: str
    records: list = field(default_factory=list)

    @property
    def output(self) -> np.ndarray:
        return self.grids[self.final].outputs

    @property
    def delay(self) -> float:
        return sum(r.duration for r in self.records)


def run_schedule(grids: dict, schedule, timing: StageTiming | None = None, *,
                 transfer: Callable | None = None, device: DeviceModel | None = None,
                 noise_keys: Callable | None = None, taps: list | None = None) -> ScheduleResult:
    """Execute stages in order with strict memory/compute alternation.

    ``grids`` maps "A" and "B" to :class:`CennGrid`. ``noise_keys(stage, what)``
    supplies per-stage noise keys in device mode. When ``taps`` is a list,
    the outputs written by every stage are appended to it.
    """
    schedule = list(schedule)
    if not schedule:
        raise ParameterError("schedule is empty")
    timing = timing or StageTiming()
    grids = dict(grids)
    records = []
    prev_dst = None
    for k, st in enumerate(schedule):
        if prev_dst is not None and st.src != prev_dst:
            raise StructuralError(
                f"stage {k} reads grid {st.src} but stage {k - 1} wrote grid {prev_dst}"
            )
        mem, comp = grids[st.src], grids[st.dst]
        keys = None if noise_keys is None else (lambda what, k=k: noise_keys(k, what))
        n_read = mem.size if mem.stale else 0
        out = stage_step(mem, comp, st.template, timing, transfer=transfer, device=device,
                         noise_keys=keys)
        grids[st.dst] = out
        vbar = 0.0 if out.v_cap is None else float(np.abs(out.v_cap).mean())
        records.append(StageRecord(
            k, st.tag, st.layer, st.src, st.dst, out.shape, mem.shape[0], out.size,
            st.template.active_otas(mem.shape[0]) * out.size, n_read, vbar,
            timing.stage_delay,
        ))
        if taps is not None:
            if device is not None:
                tap = out.copy()
                read_grid(tap, device, timing, None if noise_keys is None
                          else noise_keys(k, "tap"))
                taps.append(tap.outputs)
            else:
                taps.append(out.outputs.copy())
        prev_dst = st.dst
    final = schedule[-1].dst
    if device is not None:
        read_grid(grids[final], device, timing,
                  None if noise_keys is None else noise_keys(len(schedule), "read"))
    return ScheduleResult(grids, final, records)
