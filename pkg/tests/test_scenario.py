import csv
import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from celsim.errors import ScenarioError, ValidationError
from celsim.scenario import (
    SUMMARY_COLUMNS, DatasetSource, ScenarioSpec, SweepSpec, battery_bus, choose_pv_buildings,
    member_count, pv_to_load_ratio, ratio_sweep, run_batch, run_scenario, select_members,
    with_internal_tariff, write_scenario_outputs, write_summary,
)


@pytest.fixture(scope="module")
def cel30(dataset):
    return run_scenario(ScenarioSpec("cel30", member_fraction=0.3), dataset)


@pytest.fixture(scope="module")
def cel30_battery(dataset):
    return run_scenario(ScenarioSpec("cel30b", member_fraction=0.3, battery="central",
                                     battery_kwh=40.0), dataset)


class TestSpecs:
    @pytest.mark.parametrize("fraction, count", [(0.3, 9), (0.6, 19), (1.0, 32)])
    def test_member_count(self, fraction, count):
        assert member_count(32, fraction) == count

    @pytest.mark.parametrize("kwargs", [
        dict(member_fraction=0.0), dict(allocation="nearest"), dict(pv_penetration=1.5),
        dict(battery="home"), dict(placement="middle"), dict(internal_tariff="flat"),
        dict(extra_actor="factory"), dict(battery="central", cel=False), dict(battery_kwh=-1.0),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValidationError):
            ScenarioSpec("x", **kwargs)

    def test_from_dict_rejects_unknown(self):
        with pytest.raises(ValidationError, match="unknown"):
            ScenarioSpec.from_dict({"id": "x", "colour": "red"})

    def test_round_trip(self):
        s = ScenarioSpec("x", members=("1", "2"), battery="central", battery_kwh=5.0)
        assert ScenarioSpec.from_dict(s.to_dict()) == s

    def test_with_internal_tariff(self):
        s = with_internal_tariff(ScenarioSpec("x"), "dynamic")
        assert (s.id, s.internal_tariff) == ("x-dynamic", "dynamic")

    def test_sweep_battery_needs_capacity(self):
        with pytest.raises(ValidationError):
            SweepSpec("s", battery=True)


class TestSelection:
    def test_end_of_line_is_farthest_first(self, dataset):
        members = select_members(dataset, ScenarioSpec("x", member_fraction=0.3))
        dist = dataset.network.electrical_distance()
        chosen = [dist[b.bus_id] for b in members]
        rest = [dist[b.bus_id] for b in dataset.buildings if b not in members]
        assert chosen == sorted(chosen, reverse=True)
        assert min(chosen) >= max(rest)

    def test_random_is_seeded(self, dataset):
        a = select_members(dataset, ScenarioSpec("x", 0.3, allocation="random", seed=1))
        b = select_members(dataset, ScenarioSpec("x", 0.3, allocation="random", seed=1))
        c = select_members(dataset, ScenarioSpec("x", 0.3, allocation="random", seed=2))
        assert [m.id for m in a] == [m.id for m in b]
        assert [m.id for m in a] != [m.id for m in c]
        assert len({m.id for m in a}) == 9

    def test_explicit_members(self, dataset):
        members = select_members(dataset, ScenarioSpec("x", members=("3", "1")))
        assert [m.id for m in members] == ["3", "1"]
        with pytest.raises(ValidationError):
            select_members(dataset, ScenarioSpec("x", members=("99",)))

    def test_pv_choice(self, dataset):
        members = list(dataset.buildings)
        chosen = choose_pv_buildings(members, 0.5, dataset)
        assert len(chosen) == 16
        ratios = [pv_to_load_ratio(b, dataset) for b in chosen]
        assert ratios == sorted(ratios)
        everything = choose_pv_buildings(members, 1.0, dataset)
        assert "19" not in {b.id for b in everything}       # no roof
        assert len(everything) == 31

    def test_battery_placement(self, dataset):
        members = list(dataset.buildings)
        assert battery_bus(dataset, members, "up") == "B1"
        dist = dataset.network.electrical_distance()
        assert battery_bus(dataset, members, "down") == max(dist, key=dist.get)


class TestPipeline:
    def test_conservation(self, cel30):
        s = cel30.settlement
        assert abs(s.payments().sum() - s.receipts().sum() - s.dso_retained()) <= 1e-6
        ts = 0.25
        deficit = np.maximum(cel30.member_net_kw, 0).sum(axis=1) * ts
        surplus = np.maximum(-cel30.member_net_kw, 0).sum(axis=1) * ts
        assert_allclose(s.exchange_kwh, np.minimum(deficit, surplus), rtol=1e-12)

    def test_report(self, cel30, dataset):
        rep = cel30.report
        assert len(rep.members) == 9
        assert rep.battery_kwh == 0.0
        assert set(rep.summary_row()) == set(SUMMARY_COLUMNS)
        e = rep.economic
        load = sum(dataset.building(m).annual_load_mwh for m in rep.members)
        assert_allclose(e["load_mwh"], load, rtol=1e-9)
        assert 0 < e["revenue_loss_pct"] < 100
        assert e["bill_cel_chf"] <= e["bill_no_cel_chf"]
        assert e["exchange_mwh"] > 0

    def test_flow_covers_feeder(self, cel30, dataset):
        flow = cel30.flow
        assert flow.v.shape == (dataset.axis.n_steps, dataset.network.n_bus)
        assert flow.balance_residual_kw().max() <= 1e-6

    def test_stand_alone_has_no_loss(self, dataset):
        res = run_scenario(ScenarioSpec("solo", member_fraction=0.3, cel=False), dataset)
        assert res.settlement is None
        assert res.report.economic["revenue_loss_chf"] == 0.0
        assert res.report.economic["exchange_mwh"] == 0.0

    def test_battery_is_participant(self, cel30_battery):
        res = cel30_battery
        assert res.participants[-1] == "battery"
        assert_allclose(res.member_net_kw[:, -1], res.plan.p_ch - res.plan.p_dis)
        assert res.plan.balance_residual() <= 1e-6
        assert res.report.technical["battery_bus"] is not None
        s = res.settlement
        assert abs(s.payments().sum() - s.receipts().sum() - s.dso_retained()) <= 1e-6

    def test_large_producer(self, dataset):
        res = run_scenario(ScenarioSpec("prod", member_fraction=0.3, pv_penetration=0.0,
                                        extra_actor="large_producer"), dataset)
        assert res.participants[-1] == "large_producer"
        assert_allclose(res.report.pv_kwp, 547 * 0.315, rtol=1e-12)

    def test_errors_wrapped(self, dataset):
        with pytest.raises(ScenarioError, match="bad"):
            run_scenario(ScenarioSpec("bad", members=("99",)), dataset)


class TestOutputs:
    def test_files(self, cel30, tmp_path):
        out = write_scenario_outputs(cel30, tmp_path)
        for name in ("kpi.json", "bills.csv", "flows.csv", "voltages.csv", "lines.csv"):
            assert (out / name).exists()
        kpi = json.loads((out / "kpi.json").read_text())
        assert kpi["scenario_id"] == "cel30"
        with open(out / "flows.csv") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 35041 and rows[1][0] == "2025-01-01T00:00"

    def test_summary_header_only(self, tmp_path):
        path = write_summary([], tmp_path / "summary.csv")
        assert path.read_text() == ",".join(SUMMARY_COLUMNS) + "\n"


class TestSweep:
    def test_small_sweep(self, dataset):
        points = ratio_sweep(SweepSpec("s", members=("1", "2", "4", "5")), dataset)
        assert points[0].exchange_mwh == 0.0 and points[0].ratio == 0.0
        assert [p.n_pv for p in points] == [0, 1, 2, 3, 4]
        ratios = [p.ratio for p in points]
        assert ratios == sorted(ratios)

    def test_explicit_order(self, dataset):
        points = ratio_sweep(SweepSpec("s", members=("1", "2"), order=("2",)), dataset)
        assert [p.added for p in points] == [None, "2"]
        with pytest.raises(ValidationError):
            ratio_sweep(SweepSpec("s", members=("1", "2"), order=("3",)), dataset)


class TestBatch:
    def test_parallel_equals_serial(self, tmp_path):
        specs = [ScenarioSpec("a", members=("1", "2", "7")),
                 ScenarioSpec("b", members=("4", "5"), internal_tariff="dynamic")]
        serial = run_batch(specs, DatasetSource(), out_dir=tmp_path / "s", jobs=1)
        parallel = run_batch(specs, DatasetSource(), out_dir=tmp_path / "p", jobs=2)
        assert [o.row for o in serial] == [o.row for o in parallel]
        assert (tmp_path / "s" / "summary.csv").read_bytes() == \
            (tmp_path / "p" / "summary.csv").read_bytes()

    def test_failure_recorded(self, tmp_path):
        specs = [ScenarioSpec("ok", members=("1",)), ScenarioSpec("bad", members=("99",))]
        outcomes = run_batch(specs, DatasetSource(), out_dir=tmp_path)
        assert [o.ok for o in outcomes] == [True, False]
        text = (tmp_path / "summary.csv").read_text().splitlines()
        assert len(text) == 3 and text[2].startswith("bad,failed")

    def test_duplicate_ids(self):
        with pytest.raises(ValidationError):
            run_batch([ScenarioSpec("a"), ScenarioSpec("a")], DatasetSource())
