"""Electrical model of a single magnetoelectric neuron cell.

The cell stores its input as charge on the ME capacitor, converts that charge
into a hard-axis field on the free layer and reads the free layer through a
Thevenin inverse-Rashba source (V_IR = V_1 * m_y, source resistance R_IR)
loaded by the next OTA's gate capacitance.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .constants import (
    C_ME, ETA, LAMBDA_NM, OTA_MAX_CURRENT, POWERED_WINDOW, R_IR, RHO, STAGE_DELAY,
    V_D, V_SUPPLY,
)
from .errors import ParameterError
from .magnetodynamics import MagnetSim, MagnetState, equilibrium_state

ENERGY_CATEGORIES = ("write", "shunt", "read_drive")


@dataclass(frozen=True)
class CellParams:
    C: float = C_ME
    R_IR: float = R_IR
    R_FM: float = 20e3 - 2.0
    R_gnd: float = 2.0
    R_shunt: float = 50e3
    eta: float = ETA
    lambda_nm: float = LAMBDA_NM
    rho: float = RHO  # informational only
    V_D: float = V_D
    read_pulse: float = 200e-12
    gain_nm: float = LAMBDA_NM  # spin-to-charge gain length; unresolved absolute scale
    C_load: float = 1e-15
    v_rail: float = V_SUPPLY
    i_max: float = OTA_MAX_CURRENT

    def __post_init__(self):
        for name in ("C", "R_IR", "R_FM", "R_gnd", "R_shunt", "C_load", "lambda_nm",
                     "gain_nm", "read_pulse", "v_rail", "i_max"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be positive")
        if not 0 < self.eta <= 1:
            raise ParameterError(f"eta {self.eta} outside (0, 1]")
        if not 0 < self.V_D <= 0.1 + 1e-12:
            raise ParameterError(f"drive voltage {self.V_D} V outside (0, 100 mV]")

    @property
    def readout_tau(self) -> float:
        return self.R_IR * self.C_load

    @property
    def v_disturb(self) -> float:
        """Shift of the FM electrode potential while the read current flows."""
        return self.V_D * self.R_gnd / (self.R_FM + self.R_gnd)

    @property
    def drive_current(self) -> float:
        return self.V_D / (self.R_FM + self.R_gnd)


def calibrated(p: CellParams, sim: MagnetSim) -> CellParams:
    """Shunt chosen so full-scale OTA current just saturates the magnet."""
    return replace(p, R_shunt=sim.v_saturation / p.i_max)


def v1_reference(p: CellParams) -> float:
    """Output potential of a cell saturated along the readout axis."""
    return p.V_D * p.R_IR / (p.R_FM + p.R_gnd) * p.eta * (p.gain_nm / p.lambda_nm)


@dataclass
class CellState:
    v_cap: float = 0.0
    magnet: MagnetState = field(default_factory=MagnetState)
    energy: dict = field(default_factory=lambda: dict.fromkeys(ENERGY_CATEGORIES, 0.0))

    def charged(self, **delta) -> "CellState":
        e = dict(self.energy)
        for k, v in delta.items():
            if v < 0:
                raise ParameterError(f"negative {k} energy {v}")
            e[k] += v
        return replace(self, energy=e)

    @property
    def total_energy(self) -> float:
        return sum(self.energy.values())


@dataclass(frozen=True)
class ReadResult:
    t: np.ndarray
    v_ir_trace: np.ndarray
    v_out: float
    normalized: float


def _check_rails(v, p: CellParams):
    if abs(v) > p.v_rail * (1 + 1e-12):
        raise ParameterError(f"capacitor voltage {v} V beyond the +/-{p.v_rail} V rails")


def inject_input(s: CellState, i_in: float, dt: float, p: CellParams) -> CellState:
    """Integrate C dv/dt = i_in - v/R_shunt exactly over ``dt``."""
    if dt < 0:
        raise ParameterError("dt must be non-negative")
    if abs(i_in) > p.i_max:
        warnings.warn(f"input {i_in:.3e} A clipped to the OTA limit", RuntimeWarning,
                      stacklevel=2)
        i_in = math.copysign(p.i_max, i_in)
    tau = p.R_shunt * p.C
    v_inf = i_in * p.R_shunt
    v0 = s.v_cap
    decay = math.exp(-dt / tau)
    v1 = v_inf + (v0 - v_inf) * decay
    v1 = max(-p.v_rail, min(p.v_rail, v1))
    # Joule heat in the shunt: integral of v(t)^2 / R over the step
    a, b = v_inf, v0 - v_inf
    heat = (a * a * dt + 2 * a * b * tau * (1 - decay)
            + b * b * tau / 2 * (1 - decay * decay)) / p.R_shunt
    stored = 0.5 * p.C * (v1 * v1 - v0 * v0)
    out = s.charged(write=max(stored, 0.0), shunt=max(heat, 0.0))
    out.v_cap = v1
    return out


def slew_voltage(v_old, v_new, t, window=POWERED_WINDOW):
    """Capacitor voltage under the slew-limited drive used for network stages."""
    u = np.clip(np.asarray(t, dtype=np.float64) / window, 0.0, 1.0)
    return v_old + u * (np.asarray(v_new) - v_old)


def target_voltage(i_in, p: CellParams):
    """Settled capacitor voltage for input current ``i_in``, clipped to the rails."""
    return np.clip(np.asarray(i_in, dtype=np.float64) * p.R_shunt, -p.v_rail, p.v_rail)


def rc_filter(x, dt, tau, y0=0.0):
    """First-order low pass matching the kernel's readout recursion."""
    c = 1.0 - math.exp(-dt / tau)
    y = np.empty(len(x))
    acc = y0
    for k, v in enumerate(x):
        acc += c * (v - acc)
        y[k] = acc
    return y


def read(s: CellState, p: CellParams, sim: MagnetSim, *, pulse=None, rng=None,
         noise_key=None, step0=0):
    """Drive a read pulse and return the updated state and the readout.

    The capacitor charge is untouched; the magnet sees the small ME field shift
    caused by the drive current for the duration of the pulse.
    """
    pulse = p.read_pulse if pulse is None else pulse
    if pulse > 200e-12 + 1e-18:
        warnings.warn(f"read pulse {pulse * 1e12:.0f} ps exceeds the 200 ps hold budget",
                      RuntimeWarning, stacklevel=2)
    m = s.magnet.m[None, :].copy()
    rec = sim.run(m, s.v_cap - p.v_disturb, duration=pulse, rng=rng, noise_key=noise_key,
                  step0=step0, record_every=1)
    n = int(round(pulse / sim.dt))
    v1 = v1_reference(p)
    my = rec[:, 0, 1] if n else np.empty(0)
    trace = v1 * rc_filter(my, sim.dt, p.readout_tau)
    v_out = float(trace[-1]) if n else 0.0
    t = sim.dt * np.arange(1, n + 1)
    out = s.charged(read_drive=p.V_D * p.drive_current * pulse)
    out.magnet = MagnetState(m[0])
    return out, ReadResult(t, trace, v_out, v_out / v1)


def hold(s: CellState, sim: MagnetSim, duration, *, rng=None, noise_key=None, step0=0,
         record_every=0):
    """Let the magnet evolve under the stored charge; returns (state, record)."""
    m = s.magnet.m[None, :].copy()
    rec = sim.run(m, s.v_cap, duration=duration, rng=rng, noise_key=noise_key, step0=step0,
                  record_every=record_every)
    return replace(s, magnet=MagnetState(m[0])), rec


@dataclass(frozen=True)
class TransferCurve:
    inputs: np.ndarray
    outputs: np.ndarray
    length: float
    width: float


def transfer_curve(p: CellParams, sim: MagnetSim, inputs, *, settle=6e-9, ramp=1e-9,
                   average=2e-9, rng=None, noise_key=None) -> TransferCurve:
    """Quasi-static response of normalized output to normalized input current.

    Each input starts from the zero-input rest state; the capacitor voltage is
    ramped to its target and held. At T=0 the output is the final m_y, at
    T>0 it is the mean of m_y over the last ``average`` seconds.
    """
    x = np.asarray(inputs, dtype=np.float64)
    v = target_voltage(x * p.i_max, p)
    m = equilibrium_state(np.zeros(x.size))
    thermal = sim.params.temperature > 0
    if thermal and noise_key is None and rng is None:
        raise ParameterError("a random stream is required at T > 0")
    every = max(1, int(round(10e-12 / sim.dt)))
    rec = sim.run(m, np.zeros(x.size), v, duration=settle, ramp_time=ramp, rng=rng,
                  noise_key=noise_key, record_every=every if thermal else 0)
    if thermal:
        k = max(1, int(round(average / (every * sim.dt))))
        y = rec[-k:, :, 1].mean(axis=0)
    else:
        y = m[:, 1].copy()
    return TransferCurve(x, y, sim.geometry.length, sim.geometry.width)


@dataclass(frozen=True)
class PeripheryModel:
    """External circuitry charged to one cell write.

    The driving OTA runs at full scale for the powered window, its first
    stage drawing 1/mirror_ratio of the output current, and the OTA input
    gate and the cell access transistor are each cycled once.
    """

    i_drive: float = OTA_MAX_CURRENT
    v_swing: float = 2 * V_SUPPLY
    window: float = POWERED_WINDOW
    mirror_ratio: float = 2.0
    c_gate: float = 0.2e-15
    c_access: float = 0.1e-15

    def energy(self) -> float:
        ota = (1 + 1 / self.mirror_ratio) * self.i_drive * self.v_swing * self.window
        caps = 0.5 * (self.c_gate + self.c_access) * self.v_swing**2
        return ota + caps


@dataclass(frozen=True)
class WriteEnergy:
    intrinsic: float
    periphery: float

    @property
    def total(self) -> float:
        return self.intrinsic + self.periphery


def write_energy(p: CellParams, v_target, periphery: PeripheryModel | None = None) -> WriteEnergy:
    _check_rails(v_target, p)
    intrinsic = 0.5 * p.C * v_target * v_target
    per = (periphery or PeripheryModel()).energy() if v_target != 0 else 0.0
    return WriteEnergy(intrinsic, per)


def stage_response(sim: MagnetSim, p: CellParams, m, v_old, v_new, *, window=POWERED_WINDOW,
                   stage=STAGE_DELAY, read_pulse=POWERED_WINDOW, noise_key=None, rng=None):
    """One network stage for a batch of cells followed by the next stage's read.

    ``m`` (n, 3) is advanced in place. Returns the normalized readouts.
    The read uses the same noise stream continued past the stage.
    """
    if rng is not None and noise_key is None and sim.params.temperature > 0:
        from .magnetodynamics import draw_noise_key
        noise_key = draw_noise_key(rng)
    sim.run(m, v_old, v_new, duration=stage, ramp_time=window, noise_key=noise_key)
    return read_batch(sim, p, m, v_new, pulse=read_pulse, noise_key=noise_key,
                      step0=int(round(stage / sim.dt)))


def read_batch(sim: MagnetSim, p: CellParams, m, v_cap, *, pulse, noise_key=None, step0=0):
    """Normalized RC-filtered readouts of a batch; ``m`` advanced in place."""
    n = m.shape[0]
    filt = np.zeros(n)
    v = np.broadcast_to(np.asarray(v_cap, dtype=np.float64), (n,)) - p.v_disturb
    sim.run(m, v, duration=pulse, noise_key=noise_key, step0=step0,
            readout_tau=p.readout_tau, readout=filt)
    return filt


def soft_clamp(x, sharpness):
    """Odd saturating curve x / (1 + |x|^p)^(1/p); tends to clip(x, -1, 1) as p grows."""
    x = np.asarray(x, dtype=np.float64)
    p = float(sharpness)
    ax = np.abs(x)
    # evaluated in log space so large p does not overflow
    with np.errstate(divide="ignore"):
        lg = np.log(ax)
    denom = np.exp(np.logaddexp(0.0, p * lg) / p)
    return np.where(ax == 0, 0.0, x / denom)


@dataclass(frozen=True)
class TransferFit:
    sharpness: float
    rms_residual: float
    max_residual: float

    def __call__(self, x):
        return soft_clamp(x, self.sharpness)


def fit_transfer(curve: TransferCurve, bounds=(1.0, 64.0)) -> TransferFit:
    """Least-squares sharpness of the soft clamp against a simulated curve."""
    from scipy.optimize import minimize_scalar

    x, y = curve.inputs, curve.outputs

    def loss(lp):
        return float(np.mean((soft_clamp(x, math.exp(lp)) - y) ** 2))

    res = minimize_scalar(loss, bounds=tuple(math.log(b) for b in bounds), method="bounded")
    p = math.exp(res.x)
    r = soft_clamp(x, p) - y
    return TransferFit(p, float(np.sqrt(np.mean(r * r))), float(np.abs(r).max()))
