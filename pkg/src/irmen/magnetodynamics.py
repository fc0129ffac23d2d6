"""Stochastic macrospin dynamics.

The effective field is the sum of uniaxial crystalline anisotropy, the
uniform-prism demagnetizing field, the magnetoelectric field from the cell
capacitor and a Brown thermal field. Single-magnet helpers work on plain
3-vectors; :func:`evolve` advances a whole batch of magnets through the
selected backend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import backend
from .constants import ALPHA, ALPHA_ME, GAMMA, K_ANIS, KB, MS, MU0, NM, NM3
from .errors import ParameterError

DEFAULT_ME_THICKNESS_NM = 5.0


@dataclass(frozen=True)
class MagnetGeometry:
    """Rectangular free layer; the easy axis runs along ``length``."""

    length: float  # nm
    width: float  # nm
    thickness: float  # nm

    def __post_init__(self):
        if min(self.length, self.width, self.thickness) <= 0:
            raise ParameterError(f"non-positive magnet dimension in {self}")

    @property
    def volume(self) -> float:
        """Volume in nm^3."""
        return self.length * self.width * self.thickness

    @property
    def volume_m3(self) -> float:
        return self.volume * NM3

    @property
    def aspect(self) -> float:
        return self.length / self.width

    def check_easy_axis(self):
        if self.length <= self.width:
            raise ParameterError(
                f"length {self.length} nm must exceed width {self.width} nm "
                "for an in-plane easy axis along the length"
            )


# Fixed cross-section: the 17-60 nm length sweep spans the 1530-5400 nm^3 volume range.
DEFAULT_WIDTH_NM = 15.0
DEFAULT_THICKNESS_NM = 6.0


def geometry_for_length(length, width=DEFAULT_WIDTH_NM, thickness=DEFAULT_THICKNESS_NM):
    return MagnetGeometry(float(length), float(width), float(thickness))


def _aharoni_nz(a, b, c):
    """Aharoni's closed form for the z factor of a 2a x 2b x 2c prism."""
    r = math.sqrt(a * a + b * b + c * c)
    ab = math.hypot(a, b)
    bc = math.hypot(b, c)
    ac = math.hypot(a, c)
    t = (
        (b * b - c * c) / (2 * b * c) * math.log((r - a) / (r + a))
        + (a * a - c * c) / (2 * a * c) * math.log((r - b) / (r + b))
        + b / (2 * c) * math.log((ab + a) / (ab - a))
        + a / (2 * c) * math.log((ab + b) / (ab - b))
        + c / (2 * a) * math.log((bc - b) / (bc + b))
        + c / (2 * b) * math.log((ac - a) / (ac + a))
        + 2 * math.atan(a * b / (c * r))
        + (a**3 + b**3 - 2 * c**3) / (3 * a * b * c)
        + (a * a + b * b - 2 * c * c) / (3 * a * b * c) * r
        + c / (a * b) * (ac + bc)
        - (ab**3 + bc**3 + ac**3) / (3 * a * b * c)
    )
    return t / math.pi


def demag_factors(geometry: MagnetGeometry) -> tuple[float, float, float]:
    """Diagonal demagnetizing factors (Nx, Ny, Nz) of a uniformly magnetized prism.

    x runs along the length, y along the width, z along the thickness.
    """
    if not isinstance(geometry, MagnetGeometry):
        geometry = MagnetGeometry(*geometry)
    a, b, c = geometry.length / 2, geometry.width / 2, geometry.thickness / 2
    nx = _aharoni_nz(b, c, a)
    ny = _aharoni_nz(c, a, b)
    nz = _aharoni_nz(a, b, c)
    return nx, ny, nz


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0:
        raise ParameterError("zero direction vector")
    return v / n


@dataclass(frozen=True)
class MagnetParams:
    Ms: float = MS
    K: float = K_ANIS
    alpha: float = ALPHA
    gamma: float = GAMMA
    mu0: float = MU0
    temperature: float = 300.0
    easy_axis: tuple = (1.0, 0.0, 0.0)
    me_axis: tuple = (0.0, 1.0, 0.0)
    demag_tensor: tuple = (1 / 3, 1 / 3, 1 / 3)

    def __post_init__(self):
        if min(self.Ms, self.K, self.gamma, self.mu0) <= 0:
            raise ParameterError("Ms, K, gamma and mu0 must be positive")
        if not 0 < self.alpha < 1:
            raise ParameterError(f"damping {self.alpha} outside (0, 1)")
        if self.temperature < 0:
            raise ParameterError("negative temperature")
        n = self.demag_tensor
        if min(n) < 0 or abs(sum(n) - 1.0) > 1e-9:
            raise ParameterError(f"demag factors {n} must be >= 0 and sum to 1")
        object.__setattr__(self, "easy_axis", tuple(_unit(self.easy_axis)))
        object.__setattr__(self, "me_axis", tuple(_unit(self.me_axis)))

    @classmethod
    def for_geometry(cls, geometry: MagnetGeometry, **kw) -> "MagnetParams":
        return cls(demag_tensor=demag_factors(geometry), **kw)

    def with_temperature(self, temperature):
        return replace(self, temperature=temperature)

    @property
    def anisotropy_field_max(self) -> float:
        """2K/(mu0 Ms), A/m."""
        return 2 * self.K / (self.mu0 * self.Ms)

    def stiffness(self) -> np.ndarray:
        """Diagonal H_int = k * m for anisotropy plus demag.

        Only valid when the easy axis lies on a coordinate axis.
        """
        e = np.asarray(self.easy_axis)
        if np.count_nonzero(np.abs(e) > 1e-12) != 1:
            raise ParameterError("batched stepper needs a coordinate-aligned easy axis")
        return self.anisotropy_field_max * e * e - self.Ms * np.asarray(self.demag_tensor)

    def hard_axis_saturation(self) -> float:
        """Field along ``me_axis`` that fully rotates m off the easy axis at T=0, A/m."""
        e = np.asarray(self.easy_axis)
        h = np.asarray(self.me_axis)
        n = np.asarray(self.demag_tensor)
        if abs(e @ h) > 1e-12:
            raise ParameterError("ME axis must be perpendicular to the easy axis")
        return self.anisotropy_field_max + self.Ms * float(h * h @ n - e * e @ n)


@dataclass
class MagnetState:
    m: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))

    def __post_init__(self):
        self.m = _unit(self.m)


@dataclass(frozen=True)
class FieldSample:
    h_anis: np.ndarray
    h_demag: np.ndarray
    h_me: np.ndarray
    h_thermal: np.ndarray

    @property
    def h_total(self) -> np.ndarray:
        return self.h_anis + self.h_demag + self.h_me + self.h_thermal


def anisotropy_field(m, p: MagnetParams) -> np.ndarray:
    e = np.asarray(p.easy_axis)
    return p.anisotropy_field_max * float(np.dot(m, e)) * e


def demag_field(m, p: MagnetParams) -> np.ndarray:
    return -p.Ms * np.asarray(p.demag_tensor) * np.asarray(m, dtype=np.float64)


def me_field_magnitude(v_cap, p: MagnetParams, me_thickness=DEFAULT_ME_THICKNESS_NM,
                       alpha_me=ALPHA_ME):
    """|H_ME| in A/m for a capacitor voltage (signed, linear in v_cap)."""
    if me_thickness <= 0:
        raise ParameterError("ME layer thickness must be positive")
    return alpha_me * (v_cap / (me_thickness * NM)) / p.mu0


def me_field(v_cap, p: MagnetParams, me_thickness=DEFAULT_ME_THICKNESS_NM,
             alpha_me=ALPHA_ME) -> np.ndarray:
    return me_field_magnitude(v_cap, p, me_thickness, alpha_me) * np.asarray(p.me_axis)


def thermal_sigma(p: MagnetParams, geometry: MagnetGeometry, dt: float) -> float:
    """Per-component standard deviation of the Brown field, A/m."""
    if dt <= 0:
        raise ParameterError("dt must be positive")
    if p.temperature == 0:
        return 0.0
    var = 2 * p.alpha * KB * p.temperature / (
        p.gamma * p.mu0**2 * p.Ms * geometry.volume_m3 * dt
    )
    return math.sqrt(var)


def thermal_field(p: MagnetParams, geometry: MagnetGeometry, dt: float,
                  rng: np.random.Generator, size=None) -> np.ndarray:
    sigma = thermal_sigma(p, geometry, dt)
    shape = (3,) if size is None else (size, 3)
    if sigma == 0.0:
        return np.zeros(shape)
    return sigma * rng.standard_normal(shape)


def effective_field(m, p: MagnetParams, h_me=None, h_thermal=None) -> FieldSample:
    zero = np.zeros(3)
    return FieldSample(
        anisotropy_field(m, p),
        demag_field(m, p),
        zero if h_me is None else np.asarray(h_me, dtype=np.float64),
        zero if h_thermal is None else np.asarray(h_thermal, dtype=np.float64),
    )


def llg_rhs(m, h_total, p: MagnetParams) -> np.ndarray:
    """dm/dt in 1/s for the damped Landau-Lifshitz form, gamma > 0."""
    m = np.asarray(m, dtype=np.float64)
    c = np.cross(m, h_total)
    return -p.gamma * p.mu0 * (c + p.alpha * np.cross(m, c))


def rk4_step(m, field_fn: Callable[[np.ndarray, float], np.ndarray], dt: float,
             p: MagnetParams, t: float = 0.0) -> np.ndarray:
    """One classical RK4 step followed by renormalization.

    ``field_fn(m, t)`` returns the total field; a thermal contribution must be
    held fixed inside it for the duration of the step.
    """
    if dt <= 0:
        raise ParameterError("dt must be positive")
    m = np.asarray(m, dtype=np.float64)
    k1 = llg_rhs(m, field_fn(m, t), p)
    k2 = llg_rhs(m + 0.5 * dt * k1, field_fn(m + 0.5 * dt * k1, t + 0.5 * dt), p)
    k3 = llg_rhs(m + 0.5 * dt * k2, field_fn(m + 0.5 * dt * k2, t + 0.5 * dt), p)
    k4 = llg_rhs(m + dt * k3, field_fn(m + dt * k3, t + dt), p)
    out = m + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return out / np.linalg.norm(out)


def thermal_stability(p: MagnetParams, geometry: MagnetGeometry) -> float:
    """Crystalline barrier K*V in units of kB*T."""
    if p.temperature <= 0:
        raise ParameterError("thermal stability needs T > 0")
    return p.K * geometry.volume_m3 / (KB * p.temperature)


def draw_noise_key(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**64, dtype=np.uint64))


def evolve(m: np.ndarray, p: MagnetParams, geometry: MagnetGeometry, h_start, h_end=None,
           *, duration: float, dt: float, ramp_time: float = 0.0, ramp_offset: float = 0.0,
           rng: np.random.Generator | None = None, noise_key: int | None = None,
           step0: int = 0, readout_axis: int | None = None, readout_tau: float = 0.0,
           readout=None, record_every: int = 0, kernel=None):
    """Advance a batch of magnets ``m`` (n, 3) in place.

    The external field ramps linearly from ``h_start`` to ``h_end`` over
    ``ramp_time`` (measured from ``-ramp_offset``) and is held afterwards.
    With ``readout_axis`` set, ``readout`` (n,) is low-pass filtered toward
    m[:, axis] with time constant ``readout_tau``. Returns recorded states
    (n_rec, n, 3) when ``record_every`` > 0.
    """
    if dt <= 0:
        raise ParameterError("dt must be positive")
    n_steps = int(round(duration / dt))
    if n_steps < 0 or abs(n_steps * dt - duration) > 1e-6 * dt + 1e-24:
        raise ParameterError(f"duration {duration} is not a whole number of {dt} steps")
    n = m.shape[0]
    h0 = np.broadcast_to(np.asarray(h_start, dtype=np.float64), (n, 3))
    h1 = h0 if h_end is None else np.broadcast_to(np.asarray(h_end, dtype=np.float64), (n, 3))
    sigma = thermal_sigma(p, geometry, dt)
    if sigma > 0 and noise_key is None:
        if rng is None:
            raise ParameterError("a random stream or noise key is required at T > 0")
        noise_key = draw_noise_key(rng)
    k = kernel or backend.kernel
    return k.run(
        m, p.stiffness(), h0, h1,
        n_steps=n_steps, dt=dt, gmu=p.gamma * p.mu0, alpha=p.alpha,
        t_ramp=ramp_time, t0=ramp_offset, sigma=sigma, noise_key=noise_key, step0=step0,
        filt_axis=-1 if readout_axis is None else readout_axis,
        filt_tau=readout_tau, filt=readout, rec_every=record_every,
    )


def equilibrium_state(x, sign=1.0):
    """T=0 equilibrium under a hard-axis field of ``x`` times saturation.

    Assumes the default frame: easy axis x, ME axis y.
    """
    y = np.clip(np.asarray(x, dtype=np.float64), -1.0, 1.0)
    sign = np.broadcast_to(np.asarray(sign, dtype=np.float64), y.shape)
    return np.stack([sign * np.sqrt(1.0 - y * y), y, np.zeros_like(y)], axis=-1)


@dataclass(frozen=True)
class MagnetSim:
    """One magnet design plus integrator settings, driven by capacitor voltage.

    Default frame only: easy axis x, ME and readout axis y.
    """

    geometry: MagnetGeometry
    params: MagnetParams
    dt: float = 1e-12
    me_thickness: float = DEFAULT_ME_THICKNESS_NM
    alpha_me: float = ALPHA_ME
    bias_ratio: float = 3e-3  # easy-axis bias field as a fraction of hard-axis saturation

    def __post_init__(self):
        if self.dt <= 0:
            raise ParameterError("dt must be positive")
        self.geometry.check_easy_axis()

    @classmethod
    def for_length(cls, length, temperature=300.0, dt=1e-12, **kw):
        g = geometry_for_length(length)
        return cls(g, MagnetParams.for_geometry(g, temperature=temperature), dt=dt, **kw)

    def with_temperature(self, temperature):
        return replace(self, params=self.params.with_temperature(temperature))

    @property
    def field_per_volt(self) -> float:
        return me_field_magnitude(1.0, self.params, self.me_thickness, self.alpha_me)

    @property
    def v_saturation(self) -> float:
        """Capacitor voltage whose ME field just saturates m along the ME axis."""
        return self.params.hard_axis_saturation() / self.field_per_volt

    def fields(self, v) -> np.ndarray:
        """(n, 3) ME fields for capacitor voltages ``v``."""
        v = np.atleast_1d(np.asarray(v, dtype=np.float64))
        h = self.field_per_volt * v[:, None] * np.asarray(self.params.me_axis)
        if self.bias_ratio:
            h = h + self.bias_field * np.asarray(self.params.easy_axis)
        return h

    @property
    def bias_field(self) -> float:
        return self.bias_ratio * self.params.hard_axis_saturation()

    def run(self, m, v_start, v_end=None, *, duration, ramp_time=0.0, rng=None,
            noise_key=None, step0=0, readout_tau=0.0, readout=None, record_every=0,
            kernel=None):
        """Advance magnets ``m`` (n, 3) in place while the voltage ramps v_start -> v_end."""
        h0 = self.fields(v_start)
        h1 = None if v_end is None else self.fields(v_end)
        axis = None if readout is None else 1
        return evolve(
            m, self.params, self.geometry, h0, h1, duration=duration, dt=self.dt,
            ramp_time=ramp_time, rng=rng, noise_key=noise_key, step0=step0,
            readout_axis=axis, readout_tau=readout_tau, readout=readout,
            record_every=record_every, kernel=kernel,
        )
