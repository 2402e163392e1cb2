import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cellscreen.mbh import (
    AdcSaturationError,
    AdcSpec,
    BalancerConfig,
    ChannelErrors,
    CorrectionModel,
    DelayLine,
    DividerSpec,
    FilterSpec,
    MbhConfig,
    MeasuredFrame,
    MeasurementChain,
    adc_convert,
    balance_decide,
    delay_line,
    delta_v_max,
    filter_step,
    measure,
    node_potentials,
    reconstruct_cells,
)

volts3 = st.tuples(*(st.floats(3.0, 4.3),) * 3)


class TestComponents:
    def test_divider_ratio(self):
        assert DividerSpec().scale == pytest.approx(0.25)

    def test_filter_constants(self):
        f = FilterSpec()
        assert f.tau == pytest.approx(1.41e-3)
        assert f.cutoff_hz == pytest.approx(1 / (2 * math.pi * 1.41e-3))

    def test_native_step(self):
        assert AdcSpec().native_step == 125e-6

    def test_correction_range_checked(self):
        with pytest.raises(ValueError):
            CorrectionModel(gains=(1.5, 1.0, 1.0))

    def test_matching_errors_invert_correction(self):
        corr = CorrectionModel()
        err = ChannelErrors.matching(corr)
        for m, k, g, o in zip(corr.gains, corr.biases, err.gains, err.offsets):
            x = 7.3
            assert m * (g * x + o) + k == pytest.approx(x)


class TestFilter:
    def test_attenuation_at_ten_times_cutoff(self):
        # steady-state amplitude of a sine at 10 f_LP through the discretized filter
        filt = FilterSpec()
        f = 10 * filt.cutoff_hz
        dt = 1e-6
        t = np.arange(0.0, 0.05, dt)
        x = np.sin(2 * math.pi * f * t)
        y = np.empty_like(x)
        state = (0.0, 0.0, 0.0)
        for n, xn in enumerate(x):
            state = filter_step(filt, state, (xn, 0.0, 0.0), dt)
            y[n] = state[0]
        tail = y[len(y) // 2:]
        gain = 0.5 * (tail.max() - tail.min())
        assert gain == pytest.approx(1 / math.sqrt(1 + 100), rel=2e-3)

    @given(st.floats(1e-5, 1.0), st.floats(-5.0, 5.0), st.floats(-5.0, 5.0))
    def test_step_moves_towards_input(self, dt, y0, x):
        y1 = filter_step(FilterSpec(), (y0,) * 3, (x,) * 3, dt)[0]
        assert min(y0, x) - 1e-12 <= y1 <= max(y0, x) + 1e-12

    def test_settles_within_one_sample(self):
        # 0.1 s is about 71 time constants
        y = filter_step(FilterSpec(), (0.0,) * 3, (1.0,) * 3, 0.1)
        assert y[0] == pytest.approx(1.0, abs=1e-12)

    def test_rejects_nonpositive_dt(self):
        with pytest.raises(ValueError):
            filter_step(FilterSpec(), (0,) * 3, (0,) * 3, 0.0)


class TestAdc:
    @given(st.tuples(*(st.floats(0.0, 4.096),) * 3))
    def test_output_on_half_millivolt_grid(self, y):
        out = adc_convert(DividerSpec(), AdcSpec(), y)
        for v in out:
            k = v / 5e-4
            assert abs(k - round(k)) < 1e-6

    @given(st.tuples(*(st.floats(0.0, 4.096),) * 3))
    def test_rounding_error_half_step(self, y):
        out = adc_convert(DividerSpec(), AdcSpec(), y)
        for a, b in zip(out, y):
            assert abs(a * 0.25 - b) <= 0.5 * 125e-6 + 1e-15

    def test_saturation(self):
        with pytest.raises(AdcSaturationError) as err:
            adc_convert(DividerSpec(), AdcSpec(), (1.0, 4.2, 1.0))
        assert err.value.channel == 2

    def test_negative_input_saturates(self):
        with pytest.raises(AdcSaturationError):
            adc_convert(DividerSpec(), AdcSpec(), (-0.01, 1.0, 1.0))


class TestMeasure:
    @given(volts3)
    def test_calibrated_board_error_within_quantization(self, v):
        nodes = node_potentials(v)
        corr = CorrectionModel()
        state = tuple(0.25 * x for x in nodes)
        ch, _ = measure(DividerSpec(), FilterSpec(), AdcSpec(), corr, nodes, state, 0.1)
        cells = reconstruct_cells(ch)
        for got, want in zip(cells, v):
            # two quantized channels per Cell, each within half a corrected step
            assert abs(got - want) <= 1.0 * 5e-4 + 1e-9

    @given(volts3)
    def test_identity_chain_raw_grid(self, v):
        cfg = MbhConfig.ideal()
        chain = MeasurementChain(cfg)
        chain.reset_filter(v)
        frame = chain.sample(0.0)
        for x in frame.v_cells:
            k = x / 5e-4
            assert abs(k - round(k)) < 1e-6

    @given(volts3)
    def test_reconstruct_inverts_nodes(self, v):
        assert reconstruct_cells(node_potentials(v)) == pytest.approx(v)

    def test_uncorrected_board_is_biased(self):
        cfg = MbhConfig(hardware=ChannelErrors())
        chain = MeasurementChain(cfg)
        chain.reset_filter((4.2, 4.2, 4.2))
        v1 = chain.sample(0.0).v_cells[0]
        assert v1 == pytest.approx(0.9894 * 4.2 - 0.002, abs=1e-3)

    def test_adc_noise_reproducible(self):
        cfg = MbhConfig(adc_noise_sd=1e-3)
        a = MeasurementChain(cfg, np.random.default_rng(1))
        b = MeasurementChain(cfg, np.random.default_rng(1))
        for c in (a, b):
            c.reset_filter((3.7, 3.7, 3.7))
        assert [a.sample(0.1 * k).v_cells for k in range(5)] == [b.sample(0.1 * k).v_cells for k in range(5)]


class TestDelay:
    def test_one_sample_latency(self):
        q = DelayLine(1)
        frames = [MeasuredFrame(0.1 * k, (float(k),) * 3) for k in range(5)]
        out = [delay_line(f, q) for f in frames]
        assert out[0] is None
        assert [o.timestamp for o in out[1:]] == [f.timestamp for f in frames[:-1]]

    def test_zero_depth_passthrough(self):
        q = DelayLine(0)
        f = MeasuredFrame(0.0, (3.7,) * 3)
        assert q.push(f) is f

    @given(st.integers(0, 5), st.integers(1, 30))
    def test_depth_observable(self, depth, n):
        q = DelayLine(depth)
        out = [q.push(MeasuredFrame(float(k), (0.0,) * 3)) for k in range(n)]
        released = [o.timestamp for o in out if o is not None]
        assert released == [float(k) for k in range(max(0, n - depth))]
        assert all(o is None for o in out[:depth])

    def test_latency_visible_in_chain(self):
        chain = MeasurementChain(MbhConfig.ideal())
        chain.reset_filter((3.7, 3.7, 3.7))
        reported = []
        for k, v in enumerate([3.7, 3.7, 3.75, 3.75, 3.75]):
            chain.advance((v, 3.7, 3.7), 0.1)
            out = chain.deliver(chain.sample(0.1 * k))
            reported.append(None if out is None else out.v_cells[0])
        assert reported[2] == pytest.approx(3.7) and reported[3] == pytest.approx(3.75)


class TestBalancer:
    def test_threshold_law(self):
        cfg = BalancerConfig(v_th=2.5e-3)
        assert balance_decide(cfg, (4.0, 4.0025, 4.0024)) == (False, True, False)

    def test_disabled(self):
        assert balance_decide(BalancerConfig(enabled=False), (3.0, 4.0, 4.1)) == (False, False, False)

    @given(volts3, st.floats(1e-4, 0.05))
    def test_never_closes_all_switches(self, v, th):
        # the lowest Cell always stays open, so at most two bleed at once
        s = balance_decide(BalancerConfig(v_th=th), v)
        assert not s[int(np.argmin(v))]
        assert sum(s) <= 2

    @given(volts3, st.floats(1e-4, 0.05))
    def test_only_high_cells_bleed(self, v, th):
        s = balance_decide(BalancerConfig(v_th=th), v)
        for closed, x in zip(s, v):
            assert closed == (x >= min(v) + th)

    def test_delta_v_max(self):
        assert delta_v_max((3.70, 3.71, 3.705)) == pytest.approx(0.01)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            BalancerConfig(v_th=0.0)
        with pytest.raises(ValueError):
            BalancerConfig(r_bleed=-1.0)
