import textwrap

import numpy as np
import pytest

from cellscreen.campaign import (
    CampaignConfig,
    Normal,
    campaign_from_dict,
    load_campaign,
    log_name,
    module_config,
    plan_for,
    sample_modules,
)
from cellscreen.config import ConfigError, load_plan, load_yaml, plan_from_dict


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return p


class TestPlanDocument:
    def test_custom_plan(self, tmp_path):
        p = write(tmp_path, "plan.yaml", """\
            name: short
            setpoint_temp: 30
            segments:
              - {kind: CC, current_a: -81.6, tag: capacity,
                 exits: [{kind: min_cell_voltage, threshold: 3.3}]}
              - {kind: Rest, duration_s: 60}
            """)
        plan = load_plan(p)
        assert plan.name == "short" and plan.setpoint_temp == 30
        assert [s.kind for s in plan.segments] == ["CC", "Rest"]
        assert plan.segments[0].exits[0].threshold == 3.3

    def test_preset_reference(self):
        plan = plan_from_dict(load_yaml("preset: hppc\nsetpoint_temp: 15\n"))
        assert plan.name == "hppc" and plan.setpoint_temp == 15

    def test_unknown_key_line(self, tmp_path):
        p = write(tmp_path, "plan.yaml", """\
            segments:
              - kind: Rest
                duration_s: 5
                colour: red
            """)
        with pytest.raises(ConfigError) as err:
            load_plan(p)
        assert err.value.line == 4 and "colour" in str(err.value) and str(p) in str(err.value)

    def test_bad_threshold_line(self, tmp_path):
        p = write(tmp_path, "plan.yaml", """\
            segments:
              - kind: CC
                current_a: -10
                exits:
                  - kind: min_cell_voltage
                    threshold: 1.0
            """)
        with pytest.raises(ConfigError) as err:
            load_plan(p)
        assert err.value.line == 5

    def test_wrong_type_line(self, tmp_path):
        p = write(tmp_path, "plan.yaml", """\
            segments:
              - kind: Rest
                duration_s: long
            """)
        with pytest.raises(ConfigError) as err:
            load_plan(p)
        assert err.value.line == 3 and "number" in str(err.value)

    def test_yaml_syntax_error_line(self, tmp_path):
        p = write(tmp_path, "plan.yaml", "segments:\n  - kind: Rest\n    duration_s: [1, 2\n")
        with pytest.raises(ConfigError) as err:
            load_plan(p)
        assert err.value.line is not None and err.value.line >= 3

    def test_empty_segments(self):
        with pytest.raises(ConfigError, match="segments"):
            plan_from_dict(load_yaml("name: x\nsegments: []\n"))


class TestCampaignDocument:
    def test_defaults(self):
        cfg = CampaignConfig()
        assert cfg.modules == 1 and cfg.temperatures == (25.0,)
        assert cfg.capacity_ah[0] == Normal(218.80, 0.64)

    def test_full_document(self, tmp_path):
        p = write(tmp_path, "c.yaml", """\
            modules: 36
            seed: 7
            temperatures: [15, 25, 35]
            workers: 2
            initial_soc: {mean: 0.5, sd: 0.001}
            capacity_ah:
              - {mean: 218.80, sd: 0.64}
              - {mean: 218.96, sd: 0.52}
              - {mean: 218.95, sd: 0.52}
            thermal: {mode: lumped, sensor_noise_sd: 0.02}
            balancer: {v_th: 0.003}
            """)
        cfg = load_campaign(p)
        assert cfg.modules == 36 and cfg.temperatures == (15.0, 25.0, 35.0)
        assert cfg.thermal.mode == "lumped" and cfg.thermal.sensor_noise_sd == 0.02
        assert cfg.mbh.balancer.v_th == 0.003

    def test_module_count_validated(self, tmp_path):
        p = write(tmp_path, "c.yaml", "seed: 1\nmodules: 0\n")
        with pytest.raises(ConfigError, match="at least one module"):
            load_campaign(p)

    def test_unphysical_distribution(self, tmp_path):
        p = write(tmp_path, "c.yaml", """\
            capacity_ah:
              - {mean: 218.8, sd: 0.6}
              - {mean: 20.0, sd: 0.5}
              - {mean: 218.9, sd: 0.5}
            """)
        with pytest.raises(ConfigError, match="physical range"):
            load_campaign(p)

    def test_integer_field_type(self, tmp_path):
        p = write(tmp_path, "c.yaml", "seed: 1\nmodules: two\n")
        with pytest.raises(ConfigError) as err:
            load_campaign(p)
        assert err.value.line == 2

    def test_unknown_key(self, tmp_path):
        p = write(tmp_path, "c.yaml", "seed: 1\n\nmodulez: 3\n")
        with pytest.raises(ConfigError) as err:
            load_campaign(p)
        assert err.value.line == 3

    def test_temperature_range(self):
        with pytest.raises(ConfigError, match="supported"):
            campaign_from_dict(load_yaml("temperatures: [5, 25]\n"))

    def test_position_count(self):
        with pytest.raises(ConfigError, match="three"):
            campaign_from_dict(load_yaml("r0_25c_mohm: [{mean: 0.2}]\n"))


class TestSampling:
    def test_reproducible_and_independent(self):
        cfg = CampaignConfig(modules=5, seed=3)
        a, b = sample_modules(cfg), sample_modules(cfg)
        assert a == b
        assert len({s.seed for s in a}) == 5
        assert sample_modules(CampaignConfig(modules=6, seed=3))[:5] == a

    def test_sample_statistics(self):
        samples = sample_modules(CampaignConfig(modules=400, seed=1))
        q1 = np.array([s.capacity_ah[0] for s in samples])
        assert abs(q1.mean() - 218.80) < 3 * 0.64 / np.sqrt(400)
        assert q1.std(ddof=1) == pytest.approx(0.64, rel=0.15)

    def test_module_config_hits_injected_resistance(self):
        s = sample_modules(CampaignConfig(seed=2))[0]
        m = module_config(s, CampaignConfig().thermal)
        for cell, r in zip(m.cells, s.r0_25c_mohm):
            assert cell.r0(25.0, 0.65) * 1000 == pytest.approx(r)
            assert cell.r0(15.0, 0.65) > cell.r0(35.0, 0.65)

    def test_capacity_test_only_at_capacity_temp(self):
        cfg = CampaignConfig(temperatures=(15.0, 25.0, 35.0))
        assert plan_for(cfg, 25.0).name == "standard"
        assert plan_for(cfg, 15.0).name == "hppc"
        full = CampaignConfig(temperatures=(15.0, 25.0), full_profile_all_temps=True)
        assert plan_for(full, 15.0).name == "standard"

    def test_plan_file_relative_to_config(self, tmp_path):
        write(tmp_path, "p.yaml", "segments:\n  - {kind: Rest, duration_s: 1}\n")
        cfg = load_campaign(write(tmp_path, "c.yaml", "plan: p.yaml\ntemperatures: [35]\n"))
        plan = plan_for(cfg, 35.0)
        assert plan.setpoint_temp == 35.0 and len(plan.segments) == 1

    def test_log_names(self):
        assert log_name(3, 25.0) == "module_003_T25.csv"
        assert log_name(12, 15.0, compress=True) == "module_012_T15.csv.gz"
