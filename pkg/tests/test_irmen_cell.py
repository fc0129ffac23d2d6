import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from irmen import irmen_cell as ic
from irmen.errors import ParameterError
from irmen.magnetodynamics import MagnetSim, MagnetState, equilibrium_state


@pytest.fixture(scope="module")
def sim0():
    return MagnetSim.for_length(60, temperature=0.0)


@pytest.fixture(scope="module")
def cell(sim0):
    return ic.calibrated(ic.CellParams(), sim0)


class TestParams:
    @pytest.mark.parametrize("kw", [{"C": 0}, {"R_IR": -1}, {"eta": 0}, {"eta": 1.5},
                                    {"V_D": 0.2}, {"C_load": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ParameterError):
            ic.CellParams(**kw)

    def test_readout_tau(self):
        assert ic.CellParams().readout_tau == pytest.approx(20e3 * 1e-15)

    def test_calibrated_shunt_maps_full_scale_to_saturation(self, sim0, cell):
        assert cell.R_shunt * cell.i_max == pytest.approx(sim0.v_saturation, rel=1e-12)


class TestV1:
    def test_default_value(self):
        # V_D * R_IR / (R_FM + R_gnd) * eta, with lambda cancelling
        assert ic.v1_reference(ic.CellParams()) == pytest.approx(0.1 * 20e3 / 20e3 * 0.8, rel=1e-12)

    def test_linear_in_drive(self):
        p = ic.CellParams(V_D=0.05)
        assert ic.v1_reference(ic.CellParams(V_D=0.1)) == pytest.approx(2 * ic.v1_reference(p))

    def test_linear_in_source_resistance(self):
        a = ic.v1_reference(ic.CellParams(R_IR=10e3))
        assert ic.v1_reference(ic.CellParams(R_IR=20e3)) == pytest.approx(2 * a)


class TestInject:
    p = ic.CellParams(R_shunt=50e3)

    def test_zero_input_unchanged(self):
        s = ic.inject_input(ic.CellState(), 0.0, 1e-9, self.p)
        assert s.v_cap == 0.0 and s.total_energy == 0.0

    def test_steady_state(self):
        s = ic.inject_input(ic.CellState(), 4e-7, 1e-6, self.p)
        assert s.v_cap == pytest.approx(4e-7 * 50e3, rel=1e-12)

    @pytest.mark.parametrize("t", [10e-12, 50e-12, 200e-12])
    def test_step_response(self, t):
        tau = 50e3 * 1e-15
        s = ic.CellState()
        for _ in range(100):
            s = ic.inject_input(s, 5e-7, t / 100, self.p)
        assert s.v_cap == pytest.approx(0.025 * (1 - math.exp(-t / tau)), rel=1e-3)

    def test_energy_balance(self):
        # work done by the current source = stored + dissipated
        i, dt, v0 = 6e-7, 80e-12, -0.01
        tau = 50e-12
        v_inf = i * 50e3
        work = i * (v_inf * dt + (v0 - v_inf) * tau * (1 - math.exp(-dt / tau)))
        s = ic.inject_input(ic.CellState(v_cap=v0), i, dt, self.p)
        stored = 0.5 * 1e-15 * (s.v_cap**2 - v0**2)
        assert stored + s.energy["shunt"] == pytest.approx(work, rel=1e-9)

    def test_over_range_current_warns_and_clips(self):
        with pytest.warns(RuntimeWarning):
            s = ic.inject_input(ic.CellState(), 5e-6, 1e-6, self.p)
        assert s.v_cap == pytest.approx(1e-6 * 50e3)

    def test_negative_dt(self):
        with pytest.raises(ParameterError):
            ic.inject_input(ic.CellState(), 0.0, -1.0, self.p)


def test_rc_filter_matches_exponential():
    dt, tau = 1e-12, 20e-12
    y = ic.rc_filter(np.ones(100), dt, tau)
    k = np.arange(1, 101)
    assert np.allclose(y, 1 - np.exp(-k * dt / tau), rtol=1e-12, atol=1e-15)


class TestRead:
    def test_saturated_magnet_reads_one(self, sim0, cell):
        s = ic.CellState(v_cap=2 * sim0.v_saturation, magnet=MagnetState([0.0, 1.0, 0.0]))
        _, r = ic.read(s, cell, sim0)
        assert r.normalized == pytest.approx(1.0, abs=5e-3)
        assert r.v_out == pytest.approx(ic.v1_reference(cell) * r.normalized)

    def test_repeated_reads_identical_at_zero_temperature(self, sim0, cell):
        v = 0.4 * sim0.v_saturation
        s = ic.CellState(v_cap=v, magnet=MagnetState(equilibrium_state(0.4)))
        s, _ = ic.hold(s, sim0, 3e-9)
        s1, r1 = ic.read(s, cell, sim0)
        s1, _ = ic.hold(s1, sim0, 2e-9)
        s2, r2 = ic.read(s1, cell, sim0)
        assert s2.v_cap == s.v_cap
        assert r2.v_out == pytest.approx(r1.v_out, abs=1e-4 * ic.v1_reference(cell))
        assert r1.normalized == pytest.approx(0.4, abs=0.02)

    def test_read_charges_drive_energy(self, sim0, cell):
        s, _ = ic.read(ic.CellState(), cell, sim0, pulse=100e-12)
        assert s.energy["read_drive"] == pytest.approx(0.1**2 / 20e3 * 100e-12)

    def test_long_pulse_warns(self, sim0, cell):
        with pytest.warns(RuntimeWarning):
            ic.read(ic.CellState(), cell, sim0, pulse=300e-12)

    def test_thermal_repeat_spread_small_for_long_magnet(self, cell):
        sim = MagnetSim.for_length(60, temperature=300.0)
        v = 0.5 * sim.v_saturation
        outs = []
        for key in range(5):
            s = ic.CellState(v_cap=v, magnet=MagnetState(equilibrium_state(0.5)))
            s, _ = ic.hold(s, sim, 2e-9, noise_key=key)
            _, r = ic.read(s, ic.calibrated(cell, sim), sim, noise_key=1000 + key)
            outs.append(r.normalized)
        # same order as the per-iteration errors in the 60 nm Monte Carlo
        assert np.std(outs) < 0.05
        assert np.mean(outs) == pytest.approx(0.5, abs=0.05)


@pytest.fixture(scope="module")
def curve(sim0, cell):
    return ic.transfer_curve(cell, sim0, np.linspace(-1.5, 1.5, 31))


class TestTransferCurve:
    def test_monotone(self, curve):
        assert np.all(np.diff(curve.outputs) >= -1e-9)

    def test_zero_and_saturation(self, curve):
        assert curve.outputs[15] == pytest.approx(0.0, abs=1e-6)
        assert curve.outputs[0] == pytest.approx(-1.0, abs=1e-3)
        assert curve.outputs[-1] == pytest.approx(1.0, abs=1e-3)

    def test_fit_is_close(self, curve):
        fit = ic.fit_transfer(curve)
        assert fit.rms_residual < 0.01
        assert fit(0.5) == pytest.approx(0.5, abs=0.02)

    def test_thermal_needs_stream(self, cell):
        with pytest.raises(ParameterError):
            ic.transfer_curve(cell, MagnetSim.for_length(60), [0.1])


class TestWriteEnergy:
    def test_intrinsic_table_value(self):
        e = ic.write_energy(ic.CellParams(C=1e-15), 0.1)
        assert e.intrinsic == pytest.approx(5e-18, rel=1e-12)
        assert e.intrinsic <= 10e-18

    def test_zero(self):
        assert ic.write_energy(ic.CellParams(), 0.0).total == 0.0

    def test_periphery_window(self):
        e = ic.write_energy(ic.CellParams(), 0.1)
        assert 0.24e-15 <= e.total <= 0.79e-15

    def test_periphery_formula(self):
        pm = ic.PeripheryModel()
        assert pm.energy() == pytest.approx(1.5 * 1e-6 * 1.0 * 130e-12 + 0.5 * 0.3e-15 * 1.0)

    def test_beyond_rails(self):
        with pytest.raises(ParameterError):
            ic.write_energy(ic.CellParams(), 0.6)


class TestSoftClamp:
    @given(st.floats(-50, 50, allow_nan=False), st.floats(1, 200))
    def test_odd_and_bounded(self, x, p):
        y = float(ic.soft_clamp(x, p))
        assert float(ic.soft_clamp(-x, p)) == pytest.approx(-y, abs=1e-15)
        assert abs(y) <= min(abs(x), 1.0) + 1e-12

    def test_tends_to_clip(self):
        x = np.linspace(-3, 3, 61)
        assert np.allclose(ic.soft_clamp(x, 400), np.clip(x, -1, 1), atol=2e-3)

    def test_no_overflow(self):
        with np.errstate(over="raise", invalid="raise"):
            assert ic.soft_clamp(1e6, 64) == pytest.approx(1.0)

    def test_fit_recovers_sharpness(self):
        x = np.linspace(-2, 2, 81)
        c = ic.TransferCurve(x, ic.soft_clamp(x, 12.0), 60, 15)
        assert ic.fit_transfer(c).sharpness == pytest.approx(12.0, rel=1e-3)
