import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from celsim.aging import (
    AgingParams, CycleSet, capacity_fade, cycling_damage, rainflow, replacement_schedule,
    schedule_from_fade, turning_points,
)
from celsim.dispatch import EconomicParams
from celsim.errors import AgingParameterError
from oracles import reference_rainflow, reference_turning_points


class TestTurningPoints:
    def test_plateaus_and_monotone_runs(self):
        x = [0.0, 0.2, 0.2, 0.5, 0.3, 0.3, 0.1, 0.4]
        assert_array_equal(turning_points(x), [0.0, 0.5, 0.1, 0.4])

    def test_matches_reference(self, rng):
        for _ in range(50):
            x = np.round(rng.random(40), 1)
            assert turning_points(x).tolist() == reference_turning_points(x)

    def test_short(self):
        assert turning_points([]).size == 0
        assert_array_equal(turning_points([0.3, 0.3]), [0.3])


class TestRainflow:
    def test_constant_has_no_cycles(self):
        assert len(rainflow(np.full(100, 0.5))) == 0

    def test_single_full_swing(self):
        c = rainflow([0.0, 1.0, 0.0])
        assert c.as_multiset() == [(1.0, 0.5, 0.5), (1.0, 0.5, 0.5)]
        assert c.equivalent_full_cycles == 1.0

    def test_inner_cycle_extracted(self):
        c = rainflow([0.0, 0.8, 0.4, 0.6, 0.0])
        full = [(d, m) for d, m, k in c.as_multiset() if k == 1.0]
        assert_allclose(full, [(0.2, 0.5)])

    def test_matches_reference_on_random_sequences(self, rng):
        for _ in range(100):
            x = rng.random(int(rng.integers(2, 200)))
            assert rainflow(x).as_multiset() == reference_rainflow(x)

    def test_matches_reference_with_ties(self, rng):
        for _ in range(100):
            x = np.round(rng.random(60), 1)
            assert rainflow(x).as_multiset() == reference_rainflow(x)

    def test_counted_range_equals_travel(self, rng):
        # Each turning-point move is counted once: full cycles twice, halves once.
        x = rng.random(300)
        c = rainflow(x)
        travel = np.abs(np.diff(turning_points(x))).sum()
        assert_allclose(np.sum(2 * c.count * c.depth), travel, rtol=1e-12)

    def test_add(self):
        a = rainflow([0, 1, 0])
        assert len(a + CycleSet.empty()) == len(a)


class TestFade:
    def test_cycling_calibration(self):
        cycles = CycleSet(np.ones(3000), np.full(3000, 0.5), np.ones(3000))
        assert abs(capacity_fade(cycles, 0.0) - 0.20) <= 1e-9

    def test_calendar_calibration(self):
        assert abs(capacity_fade(CycleSet.empty(), 15.0) - 0.20) <= 1e-9

    def test_exponent(self):
        p = AgingParams()
        c = CycleSet([0.5], [0.5], [1.0])
        assert_allclose(cycling_damage(c, p), 0.5 ** 1.1, rtol=1e-15)

    def test_mean_soc_weight(self):
        p = AgingParams(mean_soc_weight=lambda m: 2.0 * np.ones_like(m))
        c = CycleSet([0.5], [0.9], [1.0])
        assert_allclose(cycling_damage(c, p), 2 * 0.5 ** 1.1, rtol=1e-15)

    def test_clamped(self):
        assert capacity_fade(CycleSet.empty(), 1000.0) == 1.0

    def test_negative_years(self):
        with pytest.raises(ValueError):
            capacity_fade(CycleSet.empty(), -1.0)

    @pytest.mark.parametrize("kwargs", [dict(k_cyc=-1.0), dict(eol_threshold=1.0),
                                        dict(cyc_exponent=0.0)])
    def test_invalid_params(self, kwargs):
        with pytest.raises(AgingParameterError):
            AgingParams(**kwargs)


class TestReplacement:
    def test_calendar_only_battery(self):
        # 0.2/15 per year reaches 80% capacity after exactly 15 years.
        s = schedule_from_fade(0.2 / 15.0, 25, 0.03, 0.80, battery_capex=1000.0)
        assert s.battery_years == (15.0,)
        assert s.l_bat == 12.5
        assert_allclose(s.battery_residual, 1000.0 * (1 - 10 / 15))
        assert_allclose(s.battery_replacement_pv, 1000.0 / 1.03 ** 15)

    def test_inverter_at_fixed_interval(self):
        s = schedule_from_fade(0.0, 25, 0.03, inverter_capex=400.0)
        assert s.inverter_years == (15.0,)
        assert_allclose(s.inverter_residual, 400.0 * (1 - 10 / 15))
        assert s.battery_years == () and math.isinf(s.battery_life_years)

    def test_net_pv_oracle(self):
        s = schedule_from_fade(0.05, 25, 0.03, 0.80, battery_capex=100.0, inverter_capex=10.0)
        # Life 4 years: replacements at 4, 8, ..., 24.
        assert s.battery_years == (4.0, 8.0, 12.0, 16.0, 20.0, 24.0)
        expected = sum(100.0 / 1.03 ** y for y in range(4, 25, 4)) + 10.0 / 1.03 ** 15
        residual = 100.0 * (1 - 1 / 4) + 10.0 * (1 - 10 / 15)
        assert_allclose(s.net_replacement_pv(), expected - residual / 1.03 ** 25, rtol=1e-12)

    def test_zero_fade_with_cycling_rejected(self):
        with pytest.raises(AgingParameterError):
            schedule_from_fade(0.0, cycling=True)

    def test_replacements_non_decreasing_in_threshold(self):
        counts = [len(schedule_from_fade(0.02, 25, eol_threshold=th).battery_years)
                  for th in (0.6, 0.7, 0.8, 0.9)]
        assert counts == sorted(counts)

    def test_from_soc_trace(self):
        econ = EconomicParams()
        daily = np.tile(np.concatenate([np.linspace(0, 1, 48), np.linspace(1, 0, 48)]), 365)
        s = replacement_schedule(daily, econ, battery_capex=1000.0)
        fade = 365 * (0.2 / 3000.0) + 0.2 / 15.0
        assert_allclose(s.annual_fade, fade, rtol=1e-9)
        assert_allclose(s.battery_life_years, 0.2 / fade, rtol=1e-9)

    def test_no_battery(self):
        s = replacement_schedule(None, EconomicParams())
        assert s.battery_builds == 1 and s.l_bat == 25.0
