import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from celsim import tariff as tf
from celsim.aging import schedule_from_fade
from celsim.errors import AxisMismatchError, IrrUndefinedError, ValidationError
from celsim.finance import (
    BillBreakdown, CashflowLedger, bills_with_cel, bills_without_cel, discounted_payback, irr,
    irr_detail, lcoe, npv, profit, pro_rata, replacement_entries, revenue_loss, settle_exchange,
    sum_bills, total_cost,
)
from oracles import loop_lcoe, loop_npv, loop_settlement


def random_ledger(rng, years=None):
    n = int(rng.integers(1, 30)) if years is None else years
    return CashflowLedger(rng.uniform(0, 5000, n + 1), rng.uniform(0.1, 50, n + 1))


class TestLedger:
    def test_annual(self):
        led = CashflowLedger.annual(1000.0, 100.0, 2.0, 3, extra={2: 50.0})
        assert_array_equal(led.costs, [1000.0, 100.0, 150.0, 100.0])
        assert_array_equal(led.energy_mwh, [0.0, 2.0, 2.0, 2.0])
        assert led.horizon == 3

    def test_extra_outside_horizon(self):
        with pytest.raises(ValidationError):
            CashflowLedger.annual(0.0, 1.0, 1.0, 3, extra={4: 1.0})

    def test_shape_checks(self):
        with pytest.raises(ValidationError):
            CashflowLedger([1.0, 2.0], [1.0])

    def test_replacement_entries(self):
        s = schedule_from_fade(0.2 / 15, 25, battery_capex=1000.0, inverter_capex=400.0)
        entries = replacement_entries(s, 1000.0, 400.0)
        assert entries[15] == 1400.0
        assert_allclose(entries[25], -(1000.0 + 400.0) * (1 - 10 / 15))
        assert replacement_entries(None, 1.0, 1.0) == {}


class TestLcoe:
    def test_trivial(self):
        for years in (1, 10, 25):
            led = CashflowLedger(np.full(years + 1, 100.0), np.full(years + 1, 1.0))
            assert_allclose(lcoe(led, 0.0), 0.10, rtol=1e-14)

    def test_single_year(self):
        assert_allclose(lcoe(CashflowLedger([230.0], [2.0]), 0.03), 0.115, rtol=1e-14)

    def test_declining_yield_oracle(self):
        years = np.arange(26)
        costs = np.where(years == 0, 50000.0, 800.0)
        energy = np.where(years == 0, 0.0, 30.0 * 0.995 ** (years - 1))
        assert_allclose(lcoe(CashflowLedger(costs, energy), 0.03),
                        loop_lcoe(costs, energy, 0.03), rtol=1e-12)

    def test_ratio_invariance(self, rng):
        for _ in range(1000):
            led = random_ledger(rng)
            k = rng.uniform(0.1, 10)
            scaled = CashflowLedger(led.costs * k, led.energy_mwh * k)
            r = rng.uniform(0, 0.1)
            assert_allclose(lcoe(scaled, r), lcoe(led, r), rtol=1e-12)

    def test_zero_energy(self):
        with pytest.raises(ValidationError):
            lcoe(CashflowLedger([1.0, 1.0], [0.0, 0.0]), 0.03)


class TestProfit:
    def test_identical(self, rng):
        led = random_ledger(rng, 25)
        assert profit(led, led, 0.03) == 0.0

    def test_trivial(self):
        base = CashflowLedger(np.r_[0.0, np.full(25, 1000.0)], np.ones(26))
        scen = CashflowLedger(np.r_[0.0, np.full(25, 900.0)], np.ones(26))
        assert_allclose(profit(base, scen, 0.0), 2500.0, rtol=1e-14)

    def test_random_oracle(self, rng):
        for _ in range(100):
            a, b = random_ledger(rng, 25), random_ledger(rng, 25)
            assert_allclose(profit(a, b, 0.03), loop_npv(a.costs - b.costs, 0.03), rtol=1e-10,
                            atol=1e-8)

    def test_horizon_mismatch(self, rng):
        with pytest.raises(ValidationError, match="horizon"):
            profit(random_ledger(rng, 10), random_ledger(rng, 11), 0.03)

    def test_npv_oracle(self, rng):
        flows = rng.normal(0, 100, 20)
        assert_allclose(npv(flows, 0.05), loop_npv(flows, 0.05), rtol=1e-12)


class TestIrr:
    def test_one_period(self):
        assert abs(irr([-100, 110]) - 0.10) <= 1e-6

    def test_two_period(self):
        assert abs(irr([-100, 0, 121]) - 0.10) <= 1e-6

    def test_quadratic(self):
        # 60 x^2 + 60 x - 100 = 0 with x = 1 / (1 + r)
        x = (-60 + np.sqrt(60 ** 2 + 4 * 60 * 100)) / 120
        assert_allclose(irr([-100, 60, 60]), 1 / x - 1, atol=1e-7)
        assert_allclose(irr([-100, 60, 60]), 0.13066, atol=1e-5)

    def test_root_is_npv_zero(self, rng):
        for _ in range(50):
            flows = np.r_[-rng.uniform(100, 1000), rng.uniform(10, 200, 15)]
            try:
                r = irr(flows)
            except IrrUndefinedError:
                continue
            assert abs(loop_npv(flows, r)) < 1e-5 * abs(flows[0])

    def test_no_sign_change(self):
        with pytest.raises(IrrUndefinedError):
            irr([100, 10, 10])
        with pytest.raises(IrrUndefinedError):
            irr([0, 0])

    def test_multiple_roots_flagged(self):
        # Roots at 10% and 20%.
        flows = [-1.0, 2.3, -1.32]
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            res = irr_detail(flows)
        assert res.multiple_roots
        assert_allclose(res.rate, 0.10, atol=1e-7)
        assert any("roots" in str(w.message) for w in caught)

    def test_payback(self):
        assert discounted_payback([-100, 60, 60], 0.0) == 2.0
        assert discounted_payback([-100, 10], 0.0) is None


class TestSettlement:
    def test_conservation_random(self, axis, rng):
        internal = tf.internal_double()
        ghi = rng.uniform(0, 1000, axis.n_steps)
        for k in range(1000):
            members = int(rng.integers(1, 6))
            steps = rng.choice(axis.n_steps, 8, replace=False)
            net = np.zeros((axis.n_steps, members))
            net[steps] = rng.normal(0, 3, (8, members))
            schedule = internal if k % 2 else tf.internal_dynamic()
            s = settle_exchange(net, schedule, axis, ghi)
            assert abs(s.payments().sum() - s.receipts().sum() - s.dso_retained()) <= 1e-9
            assert_allclose(s.alloc_import.sum(axis=1), s.exchange_kwh, atol=1e-12)
            assert_allclose(s.alloc_export.sum(axis=1), s.exchange_kwh, atol=1e-12)

    def test_loop_oracle(self, axis, rng):
        net = rng.normal(0, 2, (axis.n_steps, 4))
        internal = tf.internal_double()
        s = settle_exchange(net, internal, axis)
        e, g, x = tf.decompose_series(internal, axis)
        rows = slice(0, 500)
        pay, rec, exch = loop_settlement(net[rows].tolist(), 0.25, (e + g + x)[rows], e[rows])
        s500 = settle_exchange(np.vstack([net[rows], np.zeros((axis.n_steps - 500, 4))]),
                               internal, axis)
        assert_allclose(s500.payments(), pay, rtol=1e-12)
        assert_allclose(s500.receipts(), rec, rtol=1e-12)
        assert_allclose(s.exchange_kwh[rows], exch, rtol=1e-12)

    def test_exchange_is_min(self, axis):
        net = np.zeros((axis.n_steps, 3))
        net[0] = [2.0, -1.0, -0.5]
        s = settle_exchange(net, tf.internal_double(), axis)
        assert s.exchange_kwh[0] == 1.5 * 0.25
        assert_allclose(s.alloc_import[0], [0.375, 0.0, 0.0])
        assert_allclose(s.alloc_export[0], [0.0, 0.25, 0.125])
        assert_allclose(s.residual_import[0], [0.125, 0.0, 0.0])

    def test_axis_mismatch(self, axis):
        with pytest.raises(AxisMismatchError):
            settle_exchange(np.zeros((10, 2)), tf.internal_double(), axis)

    def test_pro_rata_zero_volume(self):
        assert_array_equal(pro_rata(np.zeros((1, 2)), np.zeros(1)), [[0.0, 0.0]])


class TestBills:
    def test_without_cel_oracle(self, axis):
        net = np.ones((axis.n_steps, 1))
        bill = bills_without_cel(net, tf.external_double(), axis)[0]
        peak = tf.TouWindow().is_peak(axis).sum()
        off = axis.n_steps - peak
        assert_allclose(bill.energy, (peak * 0.1668 + off * 0.1181) * 0.25, rtol=1e-12)
        assert_allclose(bill.tax, axis.n_steps * 0.0315 * 0.25, rtol=1e-12)
        assert_allclose(bill.total, (peak * 0.3649 + off * 0.2487) * 0.25, rtol=1e-12)

    def test_no_exchange_collapses(self, axis, rng):
        net = np.abs(rng.normal(0, 1, (axis.n_steps, 3)))  # all importing
        ext = tf.external_double()
        s = settle_exchange(net, tf.internal_double(), axis)
        assert s.total_exchange_kwh == 0.0
        for a, b in zip(bills_without_cel(net, ext, axis), bills_with_cel(s, ext, axis)):
            assert_allclose(b.total, a.total, rtol=1e-12)
            assert revenue_loss(a, b) == pytest.approx(0.0, abs=1e-9)

    def test_revenue_loss_is_forgone_grid_and_tax(self, axis):
        net = np.zeros((axis.n_steps, 2))
        net[:, 0] = 1.0
        net[:, 1] = -1.0
        ext = tf.external_double()
        s = settle_exchange(net, tf.internal_double(), axis)
        before = sum_bills(bills_without_cel(net, ext, axis))
        after = sum_bills(bills_with_cel(s, ext, axis))
        # Every import is matched internally: the DSO loses the external bill
        # and keeps only the reduced grid and tax components.
        assert_allclose(revenue_loss(before, after), before.total - after.grid_cel - after.tax_cel,
                        rtol=1e-12)
        assert after.external == 0.0

    def test_negative_component_rejected(self):
        with pytest.raises(ValidationError):
            BillBreakdown(-1.0, 0.0, 0.0)

    def test_total_cost(self):
        assert total_cost(100.0, 20.0) == 120.0
