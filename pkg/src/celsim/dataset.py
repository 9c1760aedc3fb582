"""Bundled synthetic 32-building rural feeder.

Annual loads and installed PV capacities per building, and the 32 line
segments (length, R1, X1), are the reference values for the studied village.
Connectivity between segments is not known, so the feeder topology here
is a plausible radial layout (three branches leaving the transformer bus) and
the 15-minute load and meteo series are synthetic. Roof areas are back-solved
so that the 70% roof rule reproduces each building's reference capacity.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional

from . import tariff as tf
from .errors import IngestionError
from .powerflow import LvNetwork, load_network, save_network
from .timeseries import (
    Building, Meteo, PvDesign, TimeAxis, ingest_profile, synthesize_load, synthesize_meteo,
    write_profile,
)

DEFAULT_YEAR = 2025
DEFAULT_SEED = 2025
NONRESIDENTIAL_THRESHOLD_MWH = 10.0

# Building id -> (annual load MWh, installed PV kWp).
BUILDING_TABLE = {
    "1": (6.6, 113.4), "2": (7.0, 40.3), "3": (22.0, 172.3), "4": (4.2, 12.9),
    "5": (11.2, 33.7), "6": (2.5, 36.2), "7": (1.7, 12.3), "8": (4.1, 22.1),
    "9": (4.2, 20.8), "10": (2.8, 29.3), "11": (31.6, 107.1), "12": (6.5, 22.7),
    "13": (7.0, 39.4), "14": (15.3, 71.5), "15": (4.1, 19.5), "16": (3.9, 13.9),
    "17": (1.8, 7.2), "18": (0.9, 3.2), "19": (0.6, 0.0), "20": (16.6, 60.8),
    "21": (5.4, 23.0), "22": (4.8, 22.1), "23": (1.7, 6.0), "24": (3.5, 69.6),
    "25": (0.2, 2.5), "26": (11.4, 32.5), "27": (3.4, 18.6), "28": (2.5, 19.2),
    "29": (3.9, 17.6), "30": (3.9, 25.5), "31": (7.0, 71.5), "32": (1.4, 23.6),
}

# Segment id, length m, R1 ohm, X1 ohm; segment k feeds bus B{k+1}.
LINE_TABLE = [
    ("401663523", 69.0, 0.034, 0.006), ("401663529", 24.0, 0.012, 0.002),
    ("43928166", 35.0, 0.008, 0.003), ("43923879", 8.0, 0.002, 0.001),
    ("43970837", 9.0, 0.002, 0.001), ("43970839", 75.0, 0.007, 0.005),
    ("43970838", 20.0, 0.005, 0.002), ("43817110", 15.0, 0.004, 0.001),
    ("43970830", 33.0, 0.009, 0.003), ("43818057", 37.0, 0.010, 0.003),
    ("43850647", 3.0, 0.003, 0.000), ("43974044", 22.0, 0.020, 0.002),
    ("43970841", 35.0, 0.051, 0.003), ("43970840", 9.0, 0.013, 0.001),
    ("43970820", 48.0, 0.013, 0.004), ("43970816", 10.0, 0.003, 0.001),
    ("43897486", 40.0, 0.021, 0.013), ("43821648", 22.0, 0.035, 0.008),
    ("43854952", 36.0, 0.048, 0.003), ("43994083", 25.0, 0.037, 0.002),
    ("43970821", 2.0, 0.003, 0.000), ("43970819", 17.0, 0.023, 0.002),
    ("109249426", 13.0, 0.003, 0.001), ("109249452", 43.0, 0.063, 0.004),
    ("43985272", 63.0, 0.017, 0.005), ("151640501", 32.0, 0.008, 0.002),
    ("43829950", 40.0, 0.011, 0.003), ("151640973", 40.0, 0.037, 0.003),
    ("43943613", 4.0, 0.006, 0.000), ("43909489", 16.0, 0.023, 0.001),
    ("43985275", 80.0, 0.117, 0.007), ("43985271", 22.0, 0.029, 0.002),
]

# Upstream bus index of B{k+1} for segment k.
LINE_PARENT = [0, 1, 0, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 10, 15,
               0, 17, 18, 19, 20, 21, 17, 23, 16, 25, 26, 27, 28, 29, 30, 31]

JUNCTION_BUSES = ("B3", "B4", "B8", "B10", "B17", "B23", "B25", "B28")

# Building 3 (largest producer and consumer) sits next to the transformer.
BUILDING_BUS = {
    "1": "B2", "2": "B5", "3": "B1", "4": "B6", "5": "B7", "6": "B9", "7": "B11",
    "8": "B12", "9": "B13", "10": "B14", "11": "B15", "12": "B16", "13": "B18",
    "14": "B19", "15": "B20", "16": "B21", "17": "B22", "18": "B24", "19": "B26",
    "20": "B27", "21": "B29", "22": "B30", "23": "B31", "24": "B32",
    "25": "B22", "26": "B24", "27": "B26", "28": "B27", "29": "B29", "30": "B30",
    "31": "B31", "32": "B32",
}

LARGE_CONSUMER_MWH = 22.0
LARGE_PRODUCER_KWP = 172.3


def roof_area_for(kwp: float, p_nom_w: float = 315.0, module_area: float = 1.6310) -> float:
    """Smallest roof whose 70% share holds the module count closest to ``kwp``."""
    n = round(kwp * 1000.0 / p_nom_w)
    return n * module_area / 0.70 + 1e-6 if n > 0 else 0.0


def archetype_for(annual_mwh: float) -> str:
    return "nonresidential" if annual_mwh > NONRESIDENTIAL_THRESHOLD_MWH else "residential"


def bundled_network() -> LvNetwork:
    """Network shipped as package data (identical to :func:`build_network`)."""
    with resources.as_file(resources.files("celsim.data") / "network.json") as path:
        return load_network(path)


def build_network() -> LvNetwork:
    data = {
        "root": "B0",
        "buses": [f"B{k}" for k in range(len(LINE_TABLE) + 1)],
        "lines": [{"id": sid, "from": f"B{LINE_PARENT[k]}", "to": f"B{k + 1}",
                   "length_m": length, "r1_ohm": r, "x1_ohm": x}
                  for k, (sid, length, r, x) in enumerate(LINE_TABLE)],
        "buildings": BUILDING_BUS,
    }
    return LvNetwork.from_dict(data)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Everything a scenario needs: feeder, buildings, weather, tariffs."""

    network: LvNetwork
    buildings: tuple
    meteo: Meteo
    tariffs: dict

    @property
    def axis(self) -> TimeAxis:
        return self.meteo.axis

    def building(self, bid: str) -> Building:
        for b in self.buildings:
            if b.id == bid:
                return b
        raise KeyError(bid)

    def building_ids(self) -> list:
        return [b.id for b in self.buildings]


@lru_cache(maxsize=4)
def synthetic_dataset(seed: int = DEFAULT_SEED, year: int = DEFAULT_YEAR) -> Dataset:
    """Deterministic synthetic dataset; buildings carry no PV until a scenario adds it."""
    axis = TimeAxis.for_year(year)
    meteo = synthesize_meteo(axis, seed)
    buildings = []
    for k, (bid, (mwh, kwp)) in enumerate(BUILDING_TABLE.items()):
        arch = archetype_for(mwh)
        load = synthesize_load(mwh, arch, seed * 1000 + k, axis)
        buildings.append(Building(bid, BUILDING_BUS[bid], load, roof_area_for(kwp), None, arch))
    return Dataset(build_network(), tuple(buildings), meteo, tf.default_schedules())


def write_dataset(out_dir, dataset: Dataset) -> Path:
    """Write a dataset as files readable by :func:`read_dataset`."""
    out = Path(out_dir)
    (out / "profiles").mkdir(parents=True, exist_ok=True)
    save_network(out / "network.json", dataset.network)
    tf.save_tariffs(out / "tariffs.json", dataset.tariffs)
    write_profile(out / "profiles" / "ghi.csv", dataset.meteo.ghi)
    write_profile(out / "profiles" / "temp.csv", dataset.meteo.temp)
    with open(out / "buildings.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "bus_id", "roof_area_m2", "archetype", "load_file"])
        for b in dataset.buildings:
            name = f"load_{b.id}.csv"
            w.writerow([b.id, b.bus_id, repr(b.roof_area), b.archetype, name])
            write_profile(out / "profiles" / name, b.load)
    return out


def read_dataset(root, network: Optional[str] = None, tariffs: Optional[str] = None) -> Dataset:
    """Load a dataset directory laid out by :func:`write_dataset`."""
    root = Path(root)
    net = load_network(network or root / "network.json")
    schedules = tf.load_tariffs(tariffs or root / "tariffs.json")
    prof = root / "profiles"
    meteo = Meteo(ingest_profile(prof / "ghi.csv", "W/m2"), ingest_profile(prof / "temp.csv", "degC"))
    buildings = []
    with open(root / "buildings.csv", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            try:
                roof = float(row["roof_area_m2"])
                load = ingest_profile(prof / row["load_file"], "kW")
            except KeyError as exc:
                raise IngestionError(f"buildings.csv missing column {exc}") from exc
            buildings.append(Building(row["id"], row["bus_id"], load, roof, None,
                                      row.get("archetype") or "residential"))
    return Dataset(net, tuple(buildings), meteo, schedules)


def large_consumer_load(axis: TimeAxis, seed: int):
    return synthesize_load(LARGE_CONSUMER_MWH, "residential", seed, axis)


def large_producer_design() -> PvDesign:
    n = round(LARGE_PRODUCER_KWP * 1000.0 / 315.0)
    return PvDesign(n)


def network_json() -> str:
    return json.dumps(build_network().to_dict(), indent=2) + "\n"
