import json
import math
import time

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from celsim.dataset import BUILDING_TABLE, build_network, bundled_network
from celsim.errors import ConvergenceError, TopologyError, ValidationError
from celsim.powerflow import (
    S_BASE_KVA, Line, LvNetwork, Transformer, box_stats, load_network, nodal_injections,
    run_year, save_network, solve_flow, solve_step, voltage_stats,
)
from oracles import newton_flow


def chain(n, r=0.02, x=0.005, transformer=Transformer()):
    buses = [f"N{k}" for k in range(n)]
    lines = [Line(f"L{k}", f"N{k - 1}", f"N{k}", 10.0, r, x) for k in range(1, n)]
    return LvNetwork(tuple(buses), tuple(lines), transformer)


def random_tree(rng, n):
    buses = [f"N{k}" for k in range(n)]
    lines = [Line(f"L{k}", f"N{int(rng.integers(0, k))}", f"N{k}", 10.0,
                  float(rng.uniform(0.005, 0.06)), float(rng.uniform(0.0, 0.01)))
             for k in range(1, n)]
    return LvNetwork(tuple(buses), tuple(lines))


def newton_for(net, p_kw, q_kvar):
    z = net.branch_impedance_pu()
    s = (np.asarray(p_kw) + 1j * np.asarray(q_kvar)) / S_BASE_KVA
    return newton_flow(net.n_bus, net.parent, z, s, z[0])


class TestTopology:
    def test_bfs_order_and_parents(self):
        net = LvNetwork(("C", "A", "B"), (Line("1", "A", "B", 1, 0.1, 0), Line("2", "B", "C", 1, 0.1, 0)),
                        root="A")
        assert net.buses == ("A", "B", "C")
        assert net.parent == (-1, 0, 1)

    def test_cycle_is_non_radial(self):
        lines = (Line("1", "A", "B", 1, 0.1, 0), Line("2", "B", "C", 1, 0.1, 0),
                 Line("3", "C", "A", 1, 0.1, 0))
        with pytest.raises(TopologyError, match="non-radial"):
            LvNetwork(("A", "B", "C"), lines)

    def test_cycle_with_tree_line_count(self):
        lines = (Line("1", "A", "B", 1, 0.1, 0), Line("2", "B", "C", 1, 0.1, 0),
                 Line("3", "C", "B", 1, 0.1, 0))
        with pytest.raises(TopologyError, match="non-radial"):
            LvNetwork(("A", "B", "C", "D"), lines)

    def test_unknown_bus(self):
        with pytest.raises(TopologyError, match="unknown bus"):
            LvNetwork(("A", "B"), (Line("1", "A", "Z", 1, 0.1, 0),))

    def test_negative_impedance(self):
        with pytest.raises(ValidationError):
            Line("1", "A", "B", 1, -0.1, 0)

    def test_zero_impedance_warns(self):
        net = LvNetwork(("A", "B"), (Line("1", "A", "B", 1, 0.0, 0.0),))
        assert net.warnings() == ["line 1 has zero impedance"]

    def test_subtree_matrix(self):
        net = chain(3)
        assert_array_equal(net.subtree_matrix(), np.triu(np.ones((3, 3))))

    def test_round_trip(self, tmp_path):
        net = build_network()
        save_network(tmp_path / "n.json", net)
        again = load_network(tmp_path / "n.json")
        assert again.to_dict() == net.to_dict()

    def test_bundled_matches_builder(self):
        assert bundled_network().to_dict() == build_network().to_dict()

    def test_bundled_feeder(self):
        net = build_network()
        assert net.n_bus == 33 and len(net.lines) == 32
        assert set(net.building_bus) == set(BUILDING_TABLE)

    def test_malformed(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"buses": ["A"], "lines": [{"id": "1"}]}))
        with pytest.raises(TopologyError, match="malformed"):
            load_network(path)


class TestTransformer:
    def test_impedance(self):
        z = Transformer(630.0, uk_pct=4.0, xr=5.0).z_pu(1000.0)
        assert_allclose(abs(z), 0.04 * 1000 / 630, rtol=1e-14)
        assert_allclose(z.imag / z.real, 5.0, rtol=1e-14)


class TestSweep:
    def test_zero_injection(self):
        res = solve_flow(build_network(), np.zeros((3, 33)))
        assert_array_equal(res.vm, 1.0)
        assert_array_equal(res.p_slack_kw, 0.0)

    def test_two_bus_analytic(self):
        # Ideal transformer, one resistive line: V = (1 + sqrt(1 - 4 R P)) / 2.
        net = chain(2, r=0.016, x=0.0, transformer=Transformer(uk_pct=0.0))
        res = solve_step(net, {"N1": 50.0})
        r_pu = 0.016 / net.z_base
        p_pu = 50.0 / S_BASE_KVA
        assert_allclose(res.vm[0, 1], (1 + math.sqrt(1 - 4 * r_pu * p_pu)) / 2, atol=1e-12)
        assert_allclose(res.vm[0, 0], 1.0, atol=1e-15)

    def test_against_newton(self, rng):
        for _ in range(30):
            n = int(rng.integers(2, 6))
            net = random_tree(rng, n)
            p = rng.uniform(-80, 80, n)
            q = rng.uniform(-20, 20, n)
            res = solve_flow(net, p, q)
            assert_allclose(res.v[0], newton_for(net, p, q), atol=1e-6)

    def test_against_newton_on_feeder(self, rng):
        net = build_network()
        p = rng.uniform(-20, 20, net.n_bus)
        res = solve_flow(net, p)
        assert_allclose(res.v[0], newton_for(net, p, np.zeros_like(p)), atol=1e-8)

    def test_balance_and_losses(self, rng):
        net = build_network()
        res = solve_flow(net, rng.uniform(-30, 30, (50, net.n_bus)))
        assert res.balance_residual_kw().max() <= 1e-6
        assert np.all(res.losses_kw >= 0)

    def test_voltage_rise_under_export(self):
        net = chain(4)
        res = solve_step(net, {"N3": -60.0})
        assert np.all(np.diff(res.vm[0]) > 0)
        assert res.max_feed_in() > 0 and res.max_drawn() == 0

    def test_power_factor(self):
        net = chain(3)
        res = solve_step(net, {"N2": 30.0}, pf=0.9)
        q_load = 30.0 * math.tan(math.acos(0.9))
        q_loss = (res.line_current_a[0] / net.i_base) ** 2 @ net.branch_impedance_pu()[1:].imag
        q_tr = (abs(res.p_slack_kw[0] + 1j * res.q_slack_kvar[0]) / S_BASE_KVA) ** 2 \
            * net.branch_impedance_pu()[0].imag
        assert_allclose(res.q_slack_kvar[0], q_load + (q_loss + q_tr) * S_BASE_KVA, rtol=1e-9)
        with pytest.raises(ValidationError):
            solve_step(net, {"N2": 30.0}, pf=0.0)

    def test_non_convergence_names_step(self):
        net = chain(3, r=5.0)
        p = np.zeros((3, 3))
        p[2, 2] = 5e4
        with pytest.raises(ConvergenceError) as info:
            solve_flow(net, p, max_iter=20)
        assert info.value.step == 2

    def test_line_loading_ratio(self):
        net = chain(2)
        res = solve_step(net, {"N1": 40.0})
        assert_allclose(res.line_loading_pct[0, 0], res.line_current_a[0, 0] / 120.0 * 100)

    def test_column_mismatch(self):
        with pytest.raises(ValidationError):
            solve_flow(chain(3), np.zeros(4))


class TestYear:
    def test_full_year_balance(self, dataset):
        net = dataset.network
        kw = {b.id: b.load.values for b in dataset.buildings}
        t0 = time.perf_counter()
        res = run_year(net, kw)
        elapsed = time.perf_counter() - t0
        assert res.n_steps == dataset.axis.n_steps
        assert res.balance_residual_kw().max() <= 1e-6
        assert elapsed < 60
        total = sum(v.sum() for v in kw.values())
        assert_allclose(res.injection_kw.sum(), total, rtol=1e-12)

    def test_nodal_injections(self):
        net = build_network()
        out = nodal_injections(net, {"25": np.ones(2), "17": np.ones(2)}, {"B1": np.full(2, 3.0)})
        assert out[0, net.bus_index("B22")] == 2.0
        assert out[0, net.bus_index("B1")] == 3.0


class TestVoltageStats:
    def test_percentiles(self):
        vm = np.column_stack([np.linspace(0.95, 1.05, 101), np.ones(101)])
        stats = voltage_stats(vm, ["a", "b"])
        over = np.linspace(0.95, 1.05, 101)[51:]
        under = np.linspace(0.95, 1.05, 101)[:50]
        assert_allclose(stats[0].p95_over, np.percentile(over, 95))
        assert_allclose(stats[0].p95_under, np.percentile(under, 5))
        assert stats[1].p95_over is None and stats[1].n_under == 0

    def test_box(self):
        b = box_stats([1, 2, 3, 4, 100])
        assert b.median == 3 and b.whisker_hi == 4
        assert box_stats([]) is None

    def test_empty(self):
        with pytest.raises(ValidationError):
            voltage_stats(np.empty((0, 2)))
