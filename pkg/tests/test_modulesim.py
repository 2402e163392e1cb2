import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cellscreen.ecm import CellParams, default_cells
from cellscreen.modulesim import (
    ModuleConfig,
    ProtocolViolation,
    ThermalConfig,
    cv_current,
    delta_t_max,
    initial_state,
    sensor_temps,
    snapshot,
    step,
    thermal_step,
)

soc3 = st.tuples(*(st.floats(0.05, 0.95),) * 3)
sw3 = st.tuples(st.booleans(), st.booleans(), st.booleans())


def quiet_module(**kw) -> ModuleConfig:
    return ModuleConfig(thermal=ThermalConfig(sensor_noise_sd=0.0), **kw)


class TestSnapshot:
    @given(soc3, st.floats(-250.0, 250.0), sw3)
    def test_module_voltage_is_sum_of_cells(self, socs, i, sw):
        st_ = snapshot(quiet_module(), socs, i, sw)
        assert st_.v_module == pytest.approx(sum(st_.v_cells))

    @given(soc3, st.floats(-250.0, 250.0), sw3)
    def test_kirchhoff_per_branch(self, socs, i, sw):
        st_ = snapshot(quiet_module(), socs, i, sw)
        for cs, ib, closed in zip(st_.cell_states, st_.i_bleed, sw):
            assert cs.i_cell + ib == pytest.approx(i, abs=1e-9)
            if not closed:
                assert ib == 0.0

    def test_interconnect_adds_drop(self):
        base = snapshot(quiet_module(), (0.5,) * 3, 100.0)
        with_ic = snapshot(quiet_module(interconnect_r=1e-4), (0.5,) * 3, 100.0)
        assert with_ic.v_module - base.v_module == pytest.approx(2 * 1e-4 * 100.0)

    def test_heat_nonnegative(self):
        st_ = snapshot(quiet_module(), (0.5,) * 3, -80.0, (True, False, True))
        assert st_.heat_w > 0


class TestStep:
    @given(soc3, st.floats(-250.0, 250.0), sw3)
    def test_soc_follows_cell_current(self, socs, i, sw):
        cfg = quiet_module()
        s0 = snapshot(cfg, socs, i, sw)
        s1 = step(cfg, s0, i, sw, 0.1)
        for cs0, cs1, p in zip(s0.cell_states, s1.cell_states, cfg.cells):
            assert cs1.soc - cs0.soc == pytest.approx(cs0.i_cell * 0.1 / (3600 * p.capacity_ah), rel=1e-9, abs=1e-15)

    def test_rest_with_open_switches_is_frozen(self):
        cfg = quiet_module()
        s = initial_state(cfg, (0.3, 0.5, 0.7))
        for _ in range(100):
            s = step(cfg, s, 0.0, (False,) * 3, 0.1)
        assert s.socs == (0.3, 0.5, 0.7)

    def test_bleed_discharges_only_closed_cell(self):
        cfg = quiet_module()
        s = initial_state(cfg, (0.5, 0.5, 0.5))
        for _ in range(10):
            s = step(cfg, s, 0.0, (False, True, False), 1.0)
        assert s.socs[0] == 0.5 and s.socs[2] == 0.5
        assert s.socs[1] < 0.5

    def test_saturation_names_cell(self):
        cfg = ModuleConfig(cells=default_cells((244.8, 1.0, 244.8)), thermal=ThermalConfig(sensor_noise_sd=0.0))
        s = initial_state(cfg, (0.9, 0.9, 0.9))
        with pytest.raises(ProtocolViolation) as err:
            for _ in range(1000):
                s = step(cfg, s, 244.8, (False,) * 3, 0.1)
        assert err.value.cell == 2

    def test_charge_conservation_series_string(self):
        # without balancing every Cell receives the same charge
        cfg = ModuleConfig(cells=default_cells((200.0, 220.0, 240.0)), thermal=ThermalConfig(sensor_noise_sd=0.0))
        s = initial_state(cfg, (0.2, 0.2, 0.2))
        for _ in range(600):
            s = step(cfg, s, 50.0, (False,) * 3, 1.0)
        charge = [(soc - 0.2) * p.capacity_ah for soc, p in zip(s.socs, cfg.cells)]
        assert np.allclose(charge, 50.0 * 600 / 3600.0)


class TestCv:
    @given(st.tuples(*(st.floats(0.6, 0.98),) * 3), sw3, st.floats(11.0, 12.6))
    def test_cv_current_holds_voltage(self, socs, sw, vt):
        cfg = quiet_module()
        s = snapshot(cfg, socs, 0.0, sw)
        i = cv_current(cfg, s, vt, sw)
        assert snapshot(cfg, socs, i, sw).v_module == pytest.approx(vt, abs=1e-9)


class TestThermal:
    def test_relaxes_to_setpoint(self):
        th = ThermalConfig(mode="lumped", setpoint=25.0)
        t = 30.0
        for _ in range(20000):
            t = thermal_step(th, t, 0.0, 1.0)
        assert t == pytest.approx(25.0, abs=1e-3)

    def test_steady_rise_is_heat_times_resistance(self):
        th = ThermalConfig(mode="lumped", setpoint=25.0, thermal_resistance=0.1)
        t = 25.0
        for _ in range(40000):
            t = thermal_step(th, t, 30.0, 1.0)
        assert t == pytest.approx(28.0, abs=1e-3)

    def test_sensor_noise_reproducible(self):
        th = ThermalConfig(sensor_noise_sd=0.05)
        assert sensor_temps(th, 25.0, 42) == sensor_temps(th, 25.0, 42)
        assert sensor_temps(th, 25.0, 42) != sensor_temps(th, 25.0, 43)

    def test_prescribed_trajectory(self):
        th = ThermalConfig(trajectory=((0.0, 25.0), (100.0, 29.0)))
        assert th.prescribed_temp(50.0) == pytest.approx(27.0)
        assert th.prescribed_temp(500.0) == pytest.approx(29.0)

    def test_delta_t_max(self):
        assert delta_t_max((25.0, 26.5, 24.0)) == pytest.approx(2.5)

    def test_rejects_unknown_mode(self):
        with pytest.raises(ValueError):
            ThermalConfig(mode="magic")

    def test_cell_offsets_shift_resistance(self):
        cfg = ModuleConfig(thermal=ThermalConfig(cell_offsets=(0.0, 5.0, 0.0), sensor_noise_sd=0.0))
        s = snapshot(cfg, (0.5,) * 3, 100.0)
        v = s.v_cells
        # the warmer middle Cell has the lower resistance and so the lower charging voltage
        assert v[1] < v[0] and v[0] == pytest.approx(v[2])


def test_default_cells_share_params():
    cells = default_cells()
    assert all(isinstance(c, CellParams) for c in cells) and len(cells) == 3
