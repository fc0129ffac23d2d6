import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from irmen import cenn_engine as ce
from irmen.errors import ParameterError, StructuralError
from irmen.irmen_cell import read_batch, soft_clamp
from irmen.magnetodynamics import equilibrium_state


def copy_template(**kw):
    B = np.zeros((3, 3))
    B[1, 1] = 1.0
    return ce.Template(np.zeros((3, 3)), B, **kw)


def ideal(u):
    return soft_clamp(u, 36)


@pytest.fixture(scope="module")
def dev60():
    return ce.DeviceModel.for_length(60, temperature=0.0)


class TestTemplate:
    @pytest.mark.parametrize("A, B", [
        (np.zeros((5, 5)), np.zeros((3, 3))),
        (np.zeros((3, 3)), np.zeros((5, 5))),
        (np.zeros((3, 3)), np.zeros((2, 3, 5, 5))),
    ])
    def test_shape_errors(self, A, B):
        with pytest.raises(StructuralError):
            ce.Template(A, B)

    def test_bias_shape_mismatch(self):
        with pytest.raises(StructuralError):
            ce.Template(np.zeros((3, 3)), np.zeros((4, 2, 3, 3)), z=np.zeros(3))

    def test_channel_mismatch(self):
        t = ce.Template(np.zeros((3, 3)), np.ones((4, 2, 3, 3)))
        assert t.out_channels(2) == 4
        with pytest.raises(StructuralError):
            t.out_channels(3)

    def test_active_otas_skip_zero_weights(self):
        t = copy_template(z=0.3)
        assert t.active_otas(5) == 2
        assert copy_template().active_otas(1) == 1


class TestQuantize:
    def test_unlimited_is_identity(self):
        t = copy_template(z=0.123)
        assert ce.quantize_weights(t, None) is t

    def test_one_bit_is_ternary(self):
        rng = np.random.default_rng(1)
        t = ce.Template(rng.normal(size=(3, 3)), rng.normal(size=(3, 3)), z=0.2)
        q = ce.quantize_weights(t, 1)
        w_max = np.abs(t.weights()).max()
        assert set(np.round(q.weights() / w_max, 12)) <= {-1.0, 0.0, 1.0}

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, (2, 3, 3, 3), elements=st.floats(-4, 4)), st.integers(1, 10))
    def test_rounding_bound(self, B, bits):
        t = ce.Template(np.zeros((3, 3)), B, z=np.zeros(2))
        if not np.any(B):
            return
        q = ce.quantize_weights(t, bits)
        step = ce.quantization_step(t, bits)
        assert np.abs(q.weights() - t.weights()).max() <= step / 2 * (1 + 1e-12)
        assert q.precision_bits == bits

    def test_mean_error_shrinks_with_bits(self):
        rng = np.random.default_rng(7)
        ts = [ce.Template(np.zeros((3, 3)), rng.normal(size=(4, 2, 3, 3)), z=rng.normal(size=4))
              for _ in range(20)]
        mse = [np.mean([np.mean((ce.quantize_weights(t, b).weights() - t.weights()) ** 2)
                        for t in ts]) for b in range(2, 9)]
        assert all(a > b for a, b in zip(mse, mse[1:]))

    @pytest.mark.parametrize("bits", [0, -1, 2.5])
    def test_invalid_bits(self, bits):
        with pytest.raises(ParameterError):
            ce.quantize_weights(copy_template(), bits)


class TestOta:
    def test_zero_input(self):
        assert ce.ota_current(0.0, 1.7) == 0.0

    def test_full_scale(self):
        assert ce.ota_current(1.0, 1.0) == pytest.approx(1e-6)

    @pytest.mark.parametrize("w, v, expected", [(2.0, 1.0, 1e-6), (-3.0, 0.5, -1e-6), (0.5, 0.5, 0.25e-6)])
    def test_clamp(self, w, v, expected):
        assert ce.ota_current(v, w) == pytest.approx(expected)

    def test_swing(self):
        assert ce.OtaModel().v_swing == 1.0

    def test_timing_window_must_fit(self):
        with pytest.raises(ParameterError):
            ce.StageTiming(powered_window=2e-9, stage_delay=1.5e-9)


class TestTemplateInput:
    def test_copy_is_identity(self):
        y = np.random.default_rng(0).uniform(-1, 1, (2, 5, 4))
        assert np.array_equal(ce.template_input(copy_template(), y, None), y)

    def test_boundary_enters_edges(self):
        B = np.zeros((3, 3))
        B[0, 1] = 1.0  # north neighbour
        t = ce.Template(np.zeros((3, 3)), B, boundary=-1.0)
        u = ce.template_input(t, np.zeros((1, 3, 3)), None)
        assert np.all(u[0, 0] == -1.0) and np.all(u[0, 1:] == 0.0)

    def test_products_clip_individually(self):
        B = np.zeros((3, 3))
        B[1, 1] = 3.0
        B[1, 2] = 3.0
        u = ce.template_input(ce.Template(np.zeros((3, 3)), B), np.full((1, 2, 2), 0.5), None)
        # interior column sees two clipped products, the right column one plus a zero boundary
        assert np.allclose(u[0, :, 0], 2.0) and np.allclose(u[0, :, 1], 1.0)

    def test_stride_subsamples(self):
        y = np.arange(16.0).reshape(1, 4, 4) / 16
        u = ce.template_input(copy_template(input_stride=2), y, None)
        assert np.array_equal(u[0], y[0, ::2, ::2])

    def test_stride_must_divide(self):
        with pytest.raises(StructuralError):
            ce.template_input(copy_template(input_stride=2), np.zeros((1, 3, 4)), None)

    def test_feedback_needs_own_outputs(self):
        A = np.zeros((3, 3))
        A[1, 1] = 0.5
        t = ce.Template(A, np.zeros((3, 3)))
        with pytest.raises(StructuralError):
            ce.template_input(t, np.zeros((1, 2, 2)), None)
        u = ce.template_input(t, np.zeros((1, 2, 2)), np.ones((1, 2, 2)))
        assert np.allclose(u, 0.5)

    def test_channel_mixing_sums_inputs(self):
        B = np.zeros((1, 2, 3, 3))
        B[0, :, 1, 1] = [0.5, -0.25]
        y = np.stack([np.ones((2, 2)), np.ones((2, 2))])
        u = ce.template_input(ce.Template(np.zeros((3, 3)), B, z=np.array([0.1])), y, None)
        assert u.shape == (1, 2, 2) and np.allclose(u, 0.35)


class TestStageStep:
    def test_needs_exactly_one_mode(self, dev60):
        g = ce.CennGrid.loaded(np.zeros((2, 2)))
        with pytest.raises(ParameterError):
            ce.stage_step(g, ce.CennGrid.at_rest((1, 2, 2), "B"), copy_template())
        with pytest.raises(ParameterError):
            ce.stage_step(g, ce.CennGrid.at_rest((1, 2, 2), "B"), copy_template(),
                          transfer=ideal, device=dev60)

    def test_ideal_copy(self):
        y = np.random.default_rng(2).uniform(-0.9, 0.9, (3, 4))
        out = ce.stage_step(ce.CennGrid.loaded(y), ce.CennGrid.at_rest((1, 3, 4), "B"),
                            copy_template(), transfer=ideal)
        assert np.allclose(out.outputs[0], y, atol=1e-12)

    def test_device_copy_within_two_percent(self, dev60):
        y = np.random.default_rng(3).uniform(-1, 1, (6, 6))
        out = ce.stage_step(ce.CennGrid.loaded(y), ce.CennGrid.at_rest((1, 6, 6), "B", True),
                            copy_template(), device=dev60)
        assert out.stale
        ce.read_grid(out, dev60, ce.StageTiming())
        err = out.outputs[0] - y
        assert np.sqrt(np.mean(err**2)) < 0.02

    def test_zero_template_decays_to_rest(self, dev60):
        comp = ce.CennGrid.at_rest((1, 2, 2), "B", True)
        comp.m = equilibrium_state(np.full(4, 0.6))
        comp.v_cap = np.full((1, 2, 2), 0.6 * dev60.sim.v_saturation)
        comp.outputs = np.full((1, 2, 2), 0.6)
        zero = ce.Template(np.zeros((3, 3)), np.zeros((3, 3)))
        out = ce.stage_step(ce.CennGrid.loaded(np.ones((2, 2))), comp, zero, device=dev60)
        ce.read_grid(out, dev60, ce.StageTiming())
        assert np.all(out.v_cap == 0.0)
        assert np.abs(out.outputs).max() < 0.02

    def test_stale_compute_grid_rejected(self, dev60):
        g = ce.CennGrid.at_rest((1, 2, 2), "B", True)
        g.stale = True
        with pytest.raises(StructuralError):
            ce.stage_step(ce.CennGrid.loaded(np.zeros((2, 2))), g, copy_template(), device=dev60)

    def test_thermal_read_needs_key(self):
        dev = ce.DeviceModel.for_length(60, temperature=300.0)
        g = ce.CennGrid.at_rest((1, 2, 2), "A", True)
        g.stale = True
        with pytest.raises(ParameterError):
            ce.read_grid(g, dev, ce.StageTiming())


class TestSchedule:
    def stages(self, n):
        return [ce.ScheduledStage(copy_template(), "A" if k % 2 == 0 else "B") for k in range(n)]

    def grids(self, y):
        return {"A": ce.CennGrid.loaded(y, "A"), "B": ce.CennGrid.at_rest((1,) + y.shape, "B")}

    def test_empty_is_error(self):
        with pytest.raises(ParameterError):
            ce.run_schedule({}, [], transfer=ideal)

    def test_single_copy(self):
        y = np.linspace(-0.8, 0.8, 9).reshape(3, 3)
        res = ce.run_schedule(self.grids(y), self.stages(1), transfer=ideal)
        assert res.final == "B" and np.allclose(res.output[0], y)

    def test_alternation_enforced(self):
        bad = [ce.ScheduledStage(copy_template(), "A"), ce.ScheduledStage(copy_template(), "A")]
        with pytest.raises(StructuralError):
            ce.run_schedule(self.grids(np.zeros((2, 2))), bad, transfer=ideal)

    @pytest.mark.parametrize("n", [1, 2, 7, 28])
    def test_delay(self, n):
        res = ce.run_schedule(self.grids(np.zeros((2, 2))), self.stages(n), transfer=ideal)
        assert res.delay == pytest.approx(n * 1.5e-9, rel=1e-12)
        assert all(r.duration == 1.5e-9 for r in res.records)

    def test_device_round_trip(self, dev60):
        y = np.random.default_rng(4).uniform(-1, 1, (8, 8))
        taps = []
        res = ce.run_schedule(self.grids(y), self.stages(2), device=dev60, taps=taps)
        assert res.final == "A"
        err = res.output[0] - y
        assert np.sqrt(np.mean(err**2)) < 0.02
        assert len(taps) == 2
        # second stage read every cell of grid B
        assert res.records[1].n_read == 64 and res.records[0].n_read == 0

    def test_read_does_not_disturb_memory(self, dev60):
        # magnet trajectory with the read current flowing vs an undisturbed hold
        v = np.linspace(-0.8, 0.8, 9) * dev60.sim.v_saturation
        m0 = equilibrium_state(v / dev60.sim.v_saturation)
        dev60.sim.run(m0, v, duration=3e-9)
        a, b = m0.copy(), m0.copy()
        read_batch(dev60.sim, dev60.cell, a, v, pulse=130e-12)
        dev60.sim.run(b, v, duration=130e-12)
        assert np.abs(a - b).max() < 1e-3
