"""Scenario harness: memory demo, transfer curves, Monte Carlo error, sweeps.

Every stochastic quantity draws from counter-based streams keyed by
(experiment point, seed), so results do not depend on execution order or on
the number of worker processes.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .cenn_engine import DeviceModel
from .energy_delay import EnergyModels, image_energy
from .errors import ParameterError
from .irmen_cell import (
    CellParams, CellState, calibrated, fit_transfer, inject_input, stage_response,
    target_voltage, transfer_curve, v1_reference,
)
from .constants import ALPHA, ALPHA_ME, K_ANIS, MS
from .magnetodynamics import (
    DEFAULT_ME_THICKNESS_NM, DEFAULT_THICKNESS_NM, DEFAULT_WIDTH_NM, MagnetGeometry,
    MagnetParams, MagnetSim, MagnetState, equilibrium_state,
)

log = logging.getLogger(__name__)

SWEEP_LENGTHS = (17.0, 25.0, 30.0, 40.0, 50.0, 60.0)
MC_ITERATIONS = 12300
MC_INPUT_RANGE = 1.2


def stream_key(seed: int, *path: int) -> int:
    """64-bit noise key for a point in the experiment tree."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def stream_rng(seed: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(path)))


def _length_code(length) -> int:
    return int(round(float(length) * 1000))


@dataclass(frozen=True)
class DeviceSettings:
    """Magnet, integrator and cell settings shared by every experiment."""

    width: float = DEFAULT_WIDTH_NM
    thickness: float = DEFAULT_THICKNESS_NM
    Ms: float = MS
    K: float = K_ANIS
    alpha: float = ALPHA
    me_thickness: float = DEFAULT_ME_THICKNESS_NM
    alpha_me: float = ALPHA_ME
    bias_ratio: float = 3e-3
    dt: float = 1e-12
    cell: CellParams = field(default_factory=CellParams)

    def __post_init__(self):
        if self.dt <= 0 or self.me_thickness <= 0:
            raise ParameterError("dt and ME thickness must be positive")
        if self.bias_ratio < 0:
            raise ParameterError("bias ratio must be >= 0")

    def geometry(self, length) -> MagnetGeometry:
        return MagnetGeometry(float(length), self.width, self.thickness)

    def sim(self, length, temperature=0.0) -> MagnetSim:
        g = self.geometry(length)
        params = MagnetParams.for_geometry(g, Ms=self.Ms, K=self.K, alpha=self.alpha,
                                           temperature=temperature)
        return MagnetSim(g, params, dt=self.dt, me_thickness=self.me_thickness,
                         alpha_me=self.alpha_me, bias_ratio=self.bias_ratio)

    def model(self, length, temperature=0.0) -> DeviceModel:
        sim = self.sim(length, temperature)
        return DeviceModel(sim, calibrated(self.cell, sim))

    def energy_models(self, length, ota=None, timing=None) -> EnergyModels:
        return EnergyModels.for_length(length, ota=ota, cell=self.cell, timing=timing,
                                       v_write=self.sim(length).v_saturation)


def _settings(s):
    return s if s is not None else DeviceSettings()


# ---------------------------------------------------------------- memory demo


@dataclass(frozen=True)
class MemoryDemoConfig:
    length: float = 60.0
    temperature: float = 300.0
    levels: tuple = (0.6, -0.4)  # normalized write currents
    write_time: float = 1e-9
    hold_time: float = 12e-9
    read_pulse: float = 200e-12
    read_period: float = 2e-9
    first_read: float = 3e-9  # after the write ends, once write ringing has decayed
    record_every: float = 10e-12
    seed: int = 0

    def __post_init__(self):
        if not self.levels:
            raise ParameterError("at least one write level is required")
        if self.read_pulse <= 0 or self.read_period <= self.read_pulse:
            raise ParameterError("read period must exceed the read pulse")
        if self.first_read + self.read_pulse > self.hold_time:
            raise ParameterError("hold period too short for a read")


@dataclass(frozen=True)
class ReadEvent:
    level: int
    t_start: float
    v_cap_before: float
    v_cap_after: float
    v_out: float
    normalized: float


@dataclass
class MemoryTrace:
    t: np.ndarray
    m: np.ndarray  # (n, 3)
    v_cap: np.ndarray
    i_drive: np.ndarray
    read_active: np.ndarray
    v_ir: np.ndarray
    reads: list
    read_traces: list  # (t, v) for each read at full time resolution
    readout_tau: float
    v1: float

    def levels(self) -> dict:
        out = {}
        for r in self.reads:
            out.setdefault(r.level, []).append(r.normalized)
        return {k: np.array(v) for k, v in out.items()}

    def spreads(self) -> dict:
        """Relative spread (max - min) / |mean| of the readouts in each hold."""
        return {k: float(np.ptp(v) / max(abs(v.mean()), 1e-12)) for k, v in self.levels().items()}

    def v_cap_preserved(self) -> bool:
        return all(r.v_cap_before == r.v_cap_after for r in self.reads)

    def fitted_tau(self, read=-1, settle_fraction=0.98) -> float:
        """Time constant from a log-linear fit to the rising edge of one readout."""
        t, v = self.read_traces[read]
        v_inf = v[-1]
        frac = 1.0 - v / v_inf
        use = frac > 1.0 - settle_fraction
        slope = np.polyfit(t[use], np.log(frac[use]), 1)[0]
        return -1.0 / slope

    def drift(self) -> dict:
        """Relative change between the first and last readout of each hold."""
        return {k: float(abs(v[-1] - v[0]) / max(abs(v[0]), 1e-12))
                for k, v in self.levels().items()}

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["t_s", "m_x", "m_y", "m_z", "v_cap_V", "i_drive_A", "read_active", "v_ir_V"])
        for k in range(len(self.t)):
            w.writerow([repr(float(self.t[k])), *(repr(float(x)) for x in self.m[k]),
                        repr(float(self.v_cap[k])), repr(float(self.i_drive[k])),
                        int(self.read_active[k]), repr(float(self.v_ir[k]))])
        return out.getvalue()

    def reads_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["level", "t_start_s", "v_cap_before_V", "v_cap_after_V", "v_out_V",
                    "normalized"])
        for r in self.reads:
            w.writerow([r.level, repr(r.t_start), repr(r.v_cap_before), repr(r.v_cap_after),
                        repr(r.v_out), repr(r.normalized)])
        return out.getvalue()

    def summary(self) -> dict:
        return {
            "reads": len(self.reads),
            "levels": {str(k): [float(x) for x in v] for k, v in self.levels().items()},
            "spread": {str(k): v for k, v in self.spreads().items()},
            "drift": {str(k): v for k, v in self.drift().items()},
            "v_cap_bit_identical": self.v_cap_preserved(),
            "readout_tau_s": self.readout_tau,
            "fitted_tau_s": self.fitted_tau(),
        }


def memory_demo(cfg: MemoryDemoConfig | None = None,
                settings: DeviceSettings | None = None) -> MemoryTrace:
    """Write each level, hold it, and read it repeatedly with short pulses.

    During a write the OTA current charges the capacitor through the shunt;
    during the hold the access device isolates the capacitor, so its voltage
    is fixed and the magnet evolves under the stored field (plus noise). A
    read drives current through the magnet for ``read_pulse`` and returns the
    RC-filtered inverse-Rashba potential.
    """
    cfg = cfg or MemoryDemoConfig()
    dev = _settings(settings).model(cfg.length, cfg.temperature)
    sim, p = dev.sim, dev.cell
    dt = sim.dt
    key = stream_key(cfg.seed, 0, _length_code(cfg.length))
    v1 = v1_reference(p)
    rec_n = max(1, int(round(cfg.record_every / dt)))
    chunk_n = rec_n
    chunk = chunk_n * dt

    state = CellState(magnet=MagnetState(equilibrium_state(0.0)))
    m = state.magnet.m[None, :].copy()
    step = 0
    t_rows, m_rows, v_rows, i_rows, r_rows, ir_rows = [], [], [], [], [], []
    reads, read_traces = [], []

    def log_row(t, v, i, active, vir):
        t_rows.append(t)
        m_rows.append(m[0].copy())
        v_rows.append(v)
        i_rows.append(i)
        r_rows.append(active)
        ir_rows.append(vir)

    log_row(0.0, 0.0, 0.0, 0, 0.0)
    t = 0.0
    for level, x in enumerate(cfg.levels):
        i_in = float(x) * p.i_max
        n_chunks = int(round(cfg.write_time / chunk))
        for _ in range(n_chunks):
            v0 = state.v_cap
            state = inject_input(state, i_in, chunk, p)
            sim.run(m, v0, state.v_cap, duration=chunk, ramp_time=chunk, noise_key=key,
                    step0=step)
            step += chunk_n
            t += chunk
            log_row(t, state.v_cap, i_in, 0, 0.0)
        hold_start = t
        next_read = hold_start + cfg.first_read
        hold_end = hold_start + cfg.hold_time
        while t < hold_end - 0.5 * dt:
            if abs(t - next_read) < 0.5 * dt and t + cfg.read_pulse <= hold_end + 0.5 * dt:
                v_before = state.v_cap
                n_read = int(round(cfg.read_pulse / dt))
                filt = np.zeros(1)
                rec = sim.run(m, state.v_cap - p.v_disturb, duration=cfg.read_pulse,
                              noise_key=key, step0=step, readout_tau=p.readout_tau,
                              readout=filt, record_every=1)
                # reconstruct the filtered trace from the recorded m_y
                c = 1.0 - math.exp(-dt / p.readout_tau)
                y, trace = 0.0, np.empty(n_read)
                for k in range(n_read):
                    y += c * (rec[k, 0, 1] - y)
                    trace[k] = y
                trace *= v1
                read_traces.append((dt * np.arange(1, n_read + 1), trace))
                for k in range(rec_n - 1, n_read, rec_n):
                    log_row(t + (k + 1) * dt, state.v_cap, 0.0, 1, float(trace[k]))
                step += n_read
                t += cfg.read_pulse
                v_out = float(filt[0] * v1)
                state = state.charged(read_drive=p.V_D * p.drive_current * cfg.read_pulse)
                reads.append(ReadEvent(level, next_read, v_before, state.v_cap, v_out,
                                       float(filt[0])))
                next_read += cfg.read_period
                continue
            span = min(chunk, next_read - t if next_read > t + 0.5 * dt else chunk,
                       hold_end - t)
            n = int(round(span / dt))
            sim.run(m, state.v_cap, duration=n * dt, noise_key=key, step0=step)
            step += n
            t += n * dt
            log_row(t, state.v_cap, 0.0, 0, 0.0)
    return MemoryTrace(np.array(t_rows), np.array(m_rows), np.array(v_rows), np.array(i_rows),
                       np.array(r_rows), np.array(ir_rows), reads, read_traces,
                       p.readout_tau, v1)


# ---------------------------------------------------------------- transfer curves


@dataclass
class TransferSweep:
    ratios: list
    inputs: np.ndarray
    outputs: list  # one array per ratio
    fits: list

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["input"] + [f"ratio_{r:g}" for r in self.ratios])
        for k, x in enumerate(self.inputs):
            w.writerow([repr(float(x))] + [repr(float(y[k])) for y in self.outputs])
        return out.getvalue()

    def summary(self) -> dict:
        return {
            "ratios": list(self.ratios),
            "sharpness": [f.sharpness for f in self.fits],
            "rms_residual": [f.rms_residual for f in self.fits],
            "max_residual": [f.max_residual for f in self.fits],
            "monotone": [bool(np.all(np.diff(y) >= -1e-9)) for y in self.outputs],
            "endpoints": [[float(y[0]), float(y[-1])] for y in self.outputs],
        }


def transfer_sweep(ratios, inputs=None, *, temperature=0.0, seed=0,
                   settings: DeviceSettings | None = None) -> TransferSweep:
    """Quasi-static transfer curves for magnets of length ``ratio * width``."""
    x = np.linspace(-1.5, 1.5, 61) if inputs is None else np.asarray(inputs, dtype=np.float64)
    s = _settings(settings)
    outs, fits = [], []
    for k, r in enumerate(ratios):
        s.geometry(float(r) * s.width).check_easy_axis()
        dev = s.model(float(r) * s.width, temperature)
        sim, p = dev.sim, dev.cell
        key = stream_key(seed, 1, k) if temperature > 0 else None
        c = transfer_curve(p, sim, x, noise_key=key)
        outs.append(c.outputs)
        fits.append(fit_transfer(c))
    return TransferSweep(list(ratios), x, outs, fits)


# ---------------------------------------------------------------- Monte Carlo


@dataclass
class McResult:
    length: float
    seed: int
    temperature: float
    inputs: np.ndarray
    outputs: np.ndarray
    errors: np.ndarray
    bin_edges: np.ndarray
    counts: np.ndarray

    @property
    def iterations(self) -> int:
        return len(self.errors)

    @property
    def mean_abs_error(self) -> float:
        return float(np.mean(np.abs(self.errors)))

    @property
    def sem_abs_error(self) -> float:
        a = np.abs(self.errors)
        return float(a.std(ddof=1) / np.sqrt(a.size)) if a.size > 1 else 0.0

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["iteration", "input", "output", "error"])
        for k in range(self.iterations):
            w.writerow([k, repr(float(self.inputs[k])), repr(float(self.outputs[k])),
                        repr(float(self.errors[k]))])
        return out.getvalue()

    def summary(self) -> dict:
        return {
            "length_nm": self.length, "seed": self.seed, "temperature_K": self.temperature,
            "iterations": self.iterations, "mean_abs_error": self.mean_abs_error,
            "sem_abs_error": self.sem_abs_error,
            "histogram": {"edges": [float(e) for e in self.bin_edges],
                          "counts": [int(c) for c in self.counts]},
        }


def transfer_error_mc(length, iterations=MC_ITERATIONS, seed=0, *, temperature=300.0,
                      bins=41, settings: DeviceSettings | None = None) -> McResult:
    """Random-input error of one network stage against the saturated-linear ideal.

    Iteration k starts from the equilibrium of input k-1 (the first from
    zero), applies input k during a powered window, lets the magnet settle
    for the rest of the stage and reads it in the next window. All
    iterations are simulated as one batch; iteration k owns cell k of the
    noise stream.
    """
    if iterations < 1:
        raise ParameterError("iterations must be >= 1")
    dev = _settings(settings).model(length, temperature)
    rng = stream_rng(seed, 2, _length_code(length))
    x = rng.uniform(-MC_INPUT_RANGE, MC_INPUT_RANGE, iterations)
    prev = np.concatenate([[0.0], x[:-1]])
    m = equilibrium_state(prev)
    v0 = target_voltage(prev * dev.cell.i_max, dev.cell)
    v1 = target_voltage(x * dev.cell.i_max, dev.cell)
    key = stream_key(seed, 2, _length_code(length)) if temperature > 0 else None
    y = stage_response(dev.sim, dev.cell, m, v0, v1, noise_key=key)
    err = y - np.clip(x, -1.0, 1.0)
    edges = np.linspace(-1.0, 1.0, bins + 1)
    counts, _ = np.histogram(np.clip(err, edges[0], edges[-1]), edges)
    return McResult(float(length), int(seed), float(temperature), x, y, err, edges, counts)


# ---------------------------------------------------------------- accuracy sweeps

SWEEP_VARIABLES = ("fm_length", "bits")


@dataclass(frozen=True)
class SweepConfig:
    variable: str = "fm_length"
    values: tuple = SWEEP_LENGTHS
    seeds: tuple = (0, 1, 2)
    subset_size: int = 500
    subset_start: int = 0
    length: float = 60.0  # fixed length for a bits sweep
    bits: int | None = None  # fixed precision for a length sweep
    temperature: float = 300.0
    mc_iterations: int = 2000

    def __post_init__(self):
        if self.variable not in SWEEP_VARIABLES:
            raise ParameterError(f"sweep variable must be one of {SWEEP_VARIABLES}")
        if not self.values:
            raise ParameterError("sweep needs at least one value")
        if len(self.seeds) < 1:
            raise ParameterError("sweep needs at least one seed")
        if self.subset_size < 1:
            raise ParameterError("subset size must be >= 1")
        object.__setattr__(self, "values", tuple(self.values))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    def point(self, value):
        """(length, bits) for one sweep value."""
        if self.variable == "fm_length":
            return float(value), self.bits
        return self.length, parse_bits(value)


def parse_bits(value):
    if value is None or (isinstance(value, str) and value.lower() in ("inf", "unlimited", "none")):
        return None
    if isinstance(value, float) and math.isinf(value):
        return None
    return int(value)


@dataclass(frozen=True)
class SweepRow:
    variable: str
    value: str
    seed: int
    length: float
    bits: str
    accuracy: float
    energy_J: float
    mean_transfer_error: float
    n_images: int


def _sweep_point(args):
    cfg, spec, weights, dataset, value, seed, settings = args
    from .conn_pipeline import compile_network, predict

    length, bits = cfg.point(value)
    sched = compile_network(spec, weights, bits=bits)
    dev = settings.model(length, cfg.temperature)
    scores = predict(dataset, sched, weights, "device", device=dev, seed=seed,
                     offset=cfg.subset_start)
    acc = float(np.mean(np.argmax(scores, axis=1) == dataset.labels))
    energy = image_energy(sched, settings.energy_models(length)).total
    mc = transfer_error_mc(length, cfg.mc_iterations, seed, temperature=cfg.temperature,
                           settings=settings)
    return SweepRow(cfg.variable, str(value), seed, length,
                    "unlimited" if bits is None else str(bits), acc, energy,
                    mc.mean_abs_error, len(dataset))


@dataclass
class SweepTable:
    config: SweepConfig
    rows: list

    def values(self):
        return [str(v) for v in self.config.values]

    def accuracy(self) -> np.ndarray:
        """(values, seeds) accuracy matrix."""
        idx = {(r.value, r.seed): r.accuracy for r in self.rows}
        return np.array([[idx[(v, s)] for s in self.config.seeds] for v in self.values()])

    def aggregate(self) -> list:
        out = []
        for v in self.values():
            rs = [r for r in self.rows if r.value == v]
            acc = np.array([r.accuracy for r in rs])
            err = np.array([r.mean_transfer_error for r in rs])
            out.append({
                "value": v, "length_nm": rs[0].length, "bits": rs[0].bits,
                "accuracy_mean": float(acc.mean()),
                "accuracy_sd": float(acc.std(ddof=1)) if acc.size > 1 else 0.0,
                "energy_J": rs[0].energy_J,
                "mean_transfer_error": float(err.mean()),
                "seeds": len(rs),
            })
        return out

    def to_csv(self, seed=None) -> str:
        out = io.StringIO()
        names = list(SweepRow.__dataclass_fields__)
        w = csv.writer(out, lineterminator="\n")
        w.writerow(names)
        for r in self.rows:
            if seed is None or r.seed == seed:
                w.writerow([repr(v) if isinstance(v, float) else v
                            for v in (getattr(r, n) for n in names)])
        return out.getvalue()

    def summary(self) -> dict:
        return {"config": {k: (list(v) if isinstance(v, tuple) else v)
                           for k, v in asdict(self.config).items()},
                "points": self.aggregate()}


def accuracy_sweep(cfg: SweepConfig, spec, weights, dataset, *, jobs=1,
                   settings: DeviceSettings | None = None) -> SweepTable:
    """Device-mode accuracy, energy and transfer error at every (value, seed).

    Points sharing a seed use the same noise keys per image and stage, so
    differences between values are paired comparisons.
    """
    data = dataset.subset(cfg.subset_size, cfg.subset_start)
    settings = _settings(settings)
    work = [(cfg, spec, weights, data, v, s, settings) for v in cfg.values for s in cfg.seeds]
    if jobs > 1 and len(work) > 1:
        from multiprocessing import get_context

        with get_context("fork").Pool(min(jobs, len(work))) as pool:
            rows = pool.map(_sweep_point, work, chunksize=1)
    else:
        rows = [_sweep_point(w) for w in work]
    return SweepTable(cfg, rows)


def rank_correlation(x, y) -> float:
    """Spearman correlation (average ranks for ties)."""
    from scipy.stats import spearmanr

    if np.ptp(np.asarray(x, dtype=float)) == 0 or np.ptp(np.asarray(y, dtype=float)) == 0:
        return 0.0
    r = spearmanr(x, y).statistic
    return float(r) if np.isfinite(r) else 0.0


def nonincreasing_within(means, sds, slack=1.0) -> bool:
    """True if every later mean is at most the earlier one plus ``slack`` combined sd."""
    means = np.asarray(means, dtype=np.float64)
    sds = np.asarray(sds, dtype=np.float64)
    for i in range(len(means)):
        for j in range(i + 1, len(means)):
            if means[j] > means[i] + slack * math.hypot(sds[i], sds[j]):
                return False
    return True
