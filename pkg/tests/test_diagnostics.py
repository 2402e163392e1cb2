import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cellscreen.diagnostics import (
    CellMetrics,
    DiagnosticError,
    FitError,
    VoltageWindow,
    discharge_capacity,
    discharge_energy,
    fit_rt,
    module_rollup,
    pack_stats,
    pearson,
    pulse_analysis,
    pulse_resistance,
    voltage_window,
    window_integral,
)
from cellscreen.ecm import RT_COEFFICIENTS, ResistanceLaw
from cellscreen.logio import TestLog
from cellscreen.protocol import HppcBlock, hppc_tag, pulse_sequence


def make_log(v: np.ndarray, i: np.ndarray, tags, seg_ids=None, dt=0.1, setpoint=25.0) -> TestLog:
    v = np.asarray(v, dtype=float)
    # one trace shared by all Cells, or a (3, n) array of Cell traces
    v = np.column_stack([v] * 3) if v.ndim == 1 else v.T
    n = len(i)
    seg_ids = np.zeros(n, dtype=np.int64) if seg_ids is None else np.asarray(seg_ids, dtype=np.int64)
    zeros = np.zeros(n, dtype=np.int64)
    cols = {
        "time_s": np.arange(n) * dt, "segment_id": seg_ids, "i_module_a": np.asarray(i, dtype=float),
        "v_module_v": v.sum(axis=1), "v1_v": v[:, 0], "v2_v": v[:, 1], "v3_v": v[:, 2],
        "s1": zeros, "s2": zeros, "s3": zeros,
        "t_tc1_c": np.full(n, setpoint), "t_tc2_c": np.full(n, setpoint), "t_tc3_c": np.full(n, setpoint),
        "balancing_enabled": zeros,
    }
    segs = ";".join(f"{k}:CC:{t}" for k, t in enumerate(tags))
    return TestLog({"segments": segs, "setpoint_c": f"{setpoint:g}"}, cols)


def hppc_log(r_ohm=(2e-4, 2e-4, 2e-4), latency=1, scale=1.0, q_step=None, ocv=3.7) -> TestLog:
    """Zero-order ECM HPPC block with the voltage delayed by ``latency`` samples."""
    i = [0.0] * 20
    for amps, pulse_s, rest_s in pulse_sequence(HppcBlock()):
        i += [amps * scale] * int(pulse_s * 10) + [0.0] * int(rest_s * 10)
    i = np.array(i)
    shifted = np.concatenate([np.zeros(latency), i[:len(i) - latency]])
    v = np.column_stack([ocv + r * shifted for r in r_ohm])
    if q_step:
        v = np.round(v / q_step) * q_step
    return make_log(v.T, i, [hppc_tag(0.9)])


class TestVoltageWindow:
    def test_worked_example(self):
        n = 10
        traces = np.column_stack([np.linspace(mx, mn, n) for mx, mn in
                                  ((4.195, 3.31), (4.193, 3.33), (4.197, 3.32))])
        w = voltage_window([make_log(traces.T, np.full(n, -81.6), ["capacity"])])
        assert (w.v_lower, w.v_upper) == (3.33, 4.193)

    def test_clamped_to_nominal_limits(self):
        traces = np.column_stack([np.linspace(4.3, 3.0, 10)] * 3)
        w = voltage_window([make_log(traces.T, np.full(10, -81.6), ["capacity"])])
        assert (w.v_lower, w.v_upper) == (3.3, 4.2)

    @given(st.lists(st.tuples(st.floats(3.35, 3.7), st.floats(3.8, 4.19)), min_size=3, max_size=30))
    def test_brute_force_equivalence(self, pairs):
        n_mod = len(pairs) // 3
        logs = []
        for m in range(n_mod):
            tr = np.column_stack([np.array([hi, (hi + lo) / 2, lo]) for lo, hi in pairs[3 * m:3 * m + 3]])
            logs.append(make_log(tr.T, np.full(3, -81.6), ["capacity"]))
        used = pairs[:3 * n_mod]
        w = voltage_window(logs)
        assert w.v_upper == min(min(hi for _, hi in used), 4.2)
        assert w.v_lower == max(max(lo for lo, _ in used), 3.3)

    def test_errors(self):
        with pytest.raises(DiagnosticError):
            voltage_window([])
        with pytest.raises(DiagnosticError):
            voltage_window([make_log(np.full((3, 4), 3.7), np.zeros(4), ["rest"])])
        with pytest.raises(DiagnosticError):
            VoltageWindow(4.0, 3.5)


class TestCapacityEnergy:
    def _rectangle(self, hours, v_mid=3.7):
        # 2 samples ramp in, constant v_mid for the hours, ramp out; all at 81.6 A
        n = int(hours * 36000) + 1
        v = np.full(n, v_mid)
        v[0], v[-1] = 4.0, 3.4
        return v, np.full(n, -81.6)

    def test_rectangle_capacity(self):
        v, i = self._rectangle(2.0)
        log = make_log(v, i, ["capacity"])
        # crossings at the first and last sample when the window is (3.4, 4.0)
        assert discharge_capacity(log, 1, VoltageWindow(3.4, 4.0)) == pytest.approx(163.2, rel=1e-9)

    def test_rectangle_energy(self):
        t = np.arange(0, 3600.1, 0.1)
        assert window_integral(t, np.full(t.size, 81.6 * 3.7), 0.0, 3600.0) / 3600.0 == pytest.approx(301.92)

    def test_interpolated_crossings(self):
        t = np.arange(5) * 0.1
        v = np.array([4.0, 3.9, 3.8, 3.7, 3.6])
        log = make_log(v, np.full(5, -100.0), ["capacity"])
        q = discharge_capacity(log, 1, VoltageWindow(3.65, 3.95))
        assert q == pytest.approx(100.0 * 0.3 / 3600.0)

    def test_shrinking_window_decreases_capacity(self):
        v = np.linspace(4.2, 3.3, 5000)
        log = make_log(v, np.full(5000, -81.6), ["capacity"])
        wide = discharge_capacity(log, 1, VoltageWindow(3.35, 4.15))
        narrow = discharge_capacity(log, 1, VoltageWindow(3.40, 4.15))
        assert narrow < wide

    def test_energy_over_capacity_is_mean_voltage(self):
        v = np.linspace(4.2, 3.3, 5000)
        log = make_log(v, np.full(5000, -81.6), ["capacity"])
        w = VoltageWindow(3.35, 4.15)
        ratio = discharge_energy(log, 1, w) / discharge_capacity(log, 1, w)
        assert 3.35 < ratio < 4.15 and ratio == pytest.approx(3.75, abs=1e-3)

    def test_bound_never_crossed(self):
        v = np.linspace(4.2, 3.6, 100)
        log = make_log(v, np.full(100, -81.6), ["capacity"])
        with pytest.raises(DiagnosticError, match="Cell 2"):
            discharge_capacity(log, 2, VoltageWindow(3.4, 4.1))


class TestRollup:
    def test_min_and_sum(self):
        m = module_rollup([CellMetrics(218, 808), CellMetrics(219, 810), CellMetrics(220, 809)])
        assert (m.q_module_ah, m.e_module_wh, m.weakest_index, m.tie) == (218, 2427, 1, False)

    def test_tie(self):
        m = module_rollup([CellMetrics(219, 1), CellMetrics(219, 1), CellMetrics(219, 1)])
        assert m.weakest_index == 1 and m.tie

    @given(st.lists(st.floats(200, 230), min_size=3, max_size=3))
    def test_identities(self, q):
        m = module_rollup([CellMetrics(x, 3.7 * x) for x in q])
        assert m.q_module_ah == min(q)
        assert m.e_module_wh == sum(3.7 * x for x in q)
        assert q[m.weakest_index - 1] == min(q)


class TestPulseResistance:
    def test_exact_recovery(self):
        log = hppc_log((2.185e-4, 1.996e-4, 2.181e-4))
        for j, r in enumerate((0.2185, 0.1996, 0.2181), start=1):
            assert pulse_resistance(log, j, 0.9) == pytest.approx(r, rel=1e-9)

    def test_quantized_recovery(self):
        log = hppc_log((1.996e-4,) * 3, q_step=5e-4)
        assert pulse_resistance(log, 2, 0.9) == pytest.approx(0.1996, rel=0.1)

    @pytest.mark.parametrize("latency", [0, 1, 2, 3])
    def test_latency_tolerant(self, latency):
        log = hppc_log(latency=latency)
        assert pulse_resistance(log, 1, 0.9) == pytest.approx(0.2, rel=1e-9)

    def test_extra_latency_keeps_edge_pairing(self):
        a = pulse_analysis(hppc_log(latency=1), 1, 0.9)
        b = pulse_analysis(hppc_log(latency=2), 1, 0.9)
        assert a.edges == b.edges and a.amps == b.amps

    def test_amplitude_invariance(self):
        a = pulse_resistance(hppc_log(), 1, 0.9)
        b = pulse_resistance(hppc_log(scale=0.5), 1, 0.9)
        assert a == pytest.approx(b, rel=1e-9)

    def test_split_by_direction(self):
        p = pulse_analysis(hppc_log(), 1, 0.9)
        assert p.r_discharge_mohm == pytest.approx(p.r_charge_mohm)
        assert sorted(p.amps) == sorted(a for a, _, _ in pulse_sequence(HppcBlock()))

    def test_missing_pulses(self):
        log = hppc_log()
        cut = log.select(np.arange(len(log)) < 3000)
        with pytest.raises(DiagnosticError, match="pulses"):
            pulse_resistance(cut, 1, 0.9)

    def test_nonzero_pre_pulse_current(self):
        log = hppc_log()
        log.columns["i_module_a"] = np.where(log.current == 0.0, 1.0, log.current)
        with pytest.raises(DiagnosticError, match="not from rest"):
            pulse_resistance(log, 1, 0.9)

    def test_setpoint_checked(self):
        with pytest.raises(DiagnosticError):
            pulse_resistance(hppc_log(), 1, 0.9, temp_setpoint=35.0)

    def test_missing_block(self):
        with pytest.raises(DiagnosticError):
            pulse_resistance(hppc_log(), 1, 0.4)


class TestFit:
    def _points(self, noise, rng):
        law = ResistanceLaw(RT_COEFFICIENTS)
        pts = []
        for soc in (0.9, 0.65, 0.4):
            for temp in np.concatenate([s + rng.uniform(0, 4, 30) for s in (15, 25, 35)]):
                pts.append((temp, soc, 1000 * law(temp, soc) + rng.normal(0, noise)))
        return pts

    def test_noiseless_recovery(self):
        fit = fit_rt(self._points(0.0, np.random.default_rng(0)))
        for soc, a1, a2, a3 in RT_COEFFICIENTS:
            c = fit.levels[soc]
            assert c.a1 == pytest.approx(a1, rel=0.01)
            assert c.a2 == pytest.approx(a2, abs=0.01 * 25)
            assert c.a3 == pytest.approx(a3, rel=0.01)
            assert c.rmse_mohm < 1e-4

    def test_noisy_rmse_matches_noise(self):
        fit = fit_rt(self._points(0.009, np.random.default_rng(1)))
        for c in fit.levels.values():
            assert c.rmse_mohm == pytest.approx(0.009, rel=0.25)

    def test_decreasing(self):
        fit = fit_rt(self._points(0.009, np.random.default_rng(2)))
        t = np.linspace(15, 35, 50)
        for soc in fit.levels:
            assert np.all(np.diff(fit.predict(t, soc)) < 0)

    def test_two_orders_below_scale(self):
        fit = fit_rt(self._points(0.0, np.random.default_rng(3)))
        assert all(c.rmse_mohm < 0.19 / 100 for c in fit.levels.values())

    def test_needs_three_temperatures(self):
        with pytest.raises(FitError):
            fit_rt([(15.0, 0.9, 0.26), (25.0, 0.9, 0.22), (15.0, 0.9, 0.261)])

    def test_no_points(self):
        with pytest.raises(FitError):
            fit_rt([])


class TestPackStats:
    def _modules(self, n, rng):
        mods = []
        for _ in range(n):
            qs = [rng.normal(mu, sd) for mu, sd in ((218.80, 0.64), (218.96, 0.52), (218.95, 0.52))]
            mods.append([CellMetrics(q, 3.7 * q, {(0.9, 25.0): 0.2}) for q in qs])
        return mods

    def test_sampling_means(self):
        rep = pack_stats(self._modules(36, np.random.default_rng(36)))
        for name, mu, sd in (("Cell 1", 218.80, 0.64), ("Cell 2", 218.96, 0.52), ("Cell 3", 218.95, 0.52)):
            assert abs(rep.capacity[name].mean - mu) <= 2 * sd / 6

    def test_sample_sd(self):
        rep = pack_stats([[CellMetrics(q, q, {}) for q in (1.0, 2.0, 3.0)],
                          [CellMetrics(q, q, {}) for q in (3.0, 4.0, 5.0)]])
        assert rep.capacity["Cell 1"].sd == pytest.approx(math.sqrt(2.0))

    def test_histogram(self):
        rep = pack_stats(self._modules(36, np.random.default_rng(5)))
        assert sum(rep.weakest_counts) == 36
        assert rep.weakest_cumulative == tuple(np.cumsum(rep.weakest_counts))

    def test_pearson_bounds_and_perfect(self):
        x = np.arange(10.0)
        assert pearson(x, 2 * x + 1) == 1.0
        assert pearson(x, -x) == -1.0
        with pytest.raises(DiagnosticError):
            pearson(x, np.ones(10))

    def test_render_format(self):
        mods = [[CellMetrics(218.80 + d, 808.73 + d, {}), CellMetrics(219.0, 810.0, {}), CellMetrics(219.0, 810.0, {})]
                for d in (-0.64, 0.64)]
        text = pack_stats(mods).render()
        row = next(l for l in text.splitlines() if l.startswith("Cell 1"))
        assert "218.80" in row and "0.91" in row
        assert "Pearson" in text and "weakest" in text

    def test_resistance_grouped_by_temperature(self):
        mods = [[CellMetrics(218.0 + j, 800.0, {(0.9, 15.0): 0.26, (0.9, 25.0): 0.22}) for j in range(3)]
                for _ in range(4)]
        rep = pack_stats(mods)
        assert set(rep.resistance) == {15.0, 25.0}
        assert rep.resistance[15.0]["Cell 2"].mean == pytest.approx(0.26)
