"""Radial low-voltage power flow and technical KPIs.

The network is a tree hanging below the transformer LV bus. Each bus owns
exactly one upstream branch: a line, or the transformer for the root bus,
whose MV side is the 1.0 p.u. slack. With that convention a backward-forward
sweep over all time steps at once is two matrix products per iteration:

    J = I @ D.T            branch currents from nodal currents
    V = 1 - (J * z) @ D    bus voltages from branch drops

where ``D[i, j] = 1`` when bus ``j`` lies in the subtree of bus ``i``.
Quantities are per unit on ``S_BASE_KVA`` and the nominal line-to-line
voltage of the LV side.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence

import numpy as np

from .errors import ConvergenceError, TopologyError, ValidationError

S_BASE_KVA = 1000.0
DEFAULT_RATED_A = 120.0


@dataclass(frozen=True)
class Line:
    id: str
    from_bus: str
    to_bus: str
    length_m: float
    r1_ohm: float
    x1_ohm: float
    rated_a: float = DEFAULT_RATED_A

    def __post_init__(self):
        if self.r1_ohm < 0 or self.x1_ohm < 0:
            raise ValidationError(f"line {self.id}: negative impedance")
        if self.rated_a <= 0:
            raise ValidationError(f"line {self.id}: rated current must be positive")

    @property
    def z_ohm(self) -> complex:
        return complex(self.r1_ohm, self.x1_ohm)


@dataclass(frozen=True)
class Transformer:
    s_kva: float = 630.0
    v_hv_kv: float = 20.0
    v_lv_kv: float = 0.4
    uk_pct: float = 4.0
    xr: float = 5.0

    def z_pu(self, s_base_kva: float = S_BASE_KVA) -> complex:
        """Short-circuit impedance converted to the system base."""
        z = self.uk_pct / 100.0 * s_base_kva / self.s_kva
        r = z / math.sqrt(1.0 + self.xr ** 2)
        return complex(r, r * self.xr)


@dataclass(frozen=True, eq=False)
class LvNetwork:
    """Radial feeder: buses, lines, transformer and building placement.

    Bus order is normalised to breadth-first order from ``root`` (the
    transformer LV bus); ``parent[k]`` is the index of bus ``k``'s upstream
    bus and ``branch_line[k]`` the line feeding it (``None`` for the root).
    """

    buses: tuple
    lines: tuple
    transformer: Transformer = Transformer()
    building_bus: Mapping[str, str] = field(default_factory=dict)
    root: Optional[str] = None

    def __post_init__(self):
        buses = tuple(str(b) for b in self.buses)
        if len(set(buses)) != len(buses):
            raise TopologyError("duplicate bus ids")
        root = str(self.root) if self.root is not None else buses[0]
        if root not in buses:
            raise TopologyError(f"root bus {root!r} is not a bus")
        known = set(buses)
        adj: Dict[str, list] = {b: [] for b in buses}
        for ln in self.lines:
            for end in (ln.from_bus, ln.to_bus):
                if end not in known:
                    raise TopologyError(f"line {ln.id} references unknown bus {end!r}")
            if ln.from_bus == ln.to_bus:
                raise TopologyError(f"non-radial: line {ln.id} is a self loop")
            adj[ln.from_bus].append(ln)
            adj[ln.to_bus].append(ln)
        if len(self.lines) != len(buses) - 1:
            raise TopologyError(
                f"non-radial: {len(self.lines)} lines for {len(buses)} buses (a tree needs "
                f"{len(buses) - 1})"
            )
        order, parent, feed = [root], {root: None}, {root: None}
        queue = deque([root])
        while queue:
            bus = queue.popleft()
            for ln in adj[bus]:
                other = ln.to_bus if ln.from_bus == bus else ln.from_bus
                if ln is feed[bus]:
                    continue
                if other in parent:
                    raise TopologyError(f"non-radial: cycle through line {ln.id}")
                parent[other], feed[other] = bus, ln
                order.append(other)
                queue.append(other)
        if len(order) != len(buses):
            missing = sorted(known - set(order))
            raise TopologyError(f"disconnected buses: {missing}")
        for bid, bus in self.building_bus.items():
            if bus not in known:
                raise TopologyError(f"building {bid} mapped to unknown bus {bus!r}")
        index = {b: k for k, b in enumerate(order)}
        object.__setattr__(self, "buses", tuple(order))
        object.__setattr__(self, "root", root)
        object.__setattr__(self, "building_bus", dict(self.building_bus))
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "parent", tuple(-1 if parent[b] is None else index[parent[b]]
                                                 for b in order))
        object.__setattr__(self, "branch_line", tuple(feed[b] for b in order))

    # ---------------------------------------------------------------- basics

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def v_base(self) -> float:
        return self.transformer.v_lv_kv * 1000.0

    @property
    def z_base(self) -> float:
        return self.v_base ** 2 / (S_BASE_KVA * 1000.0)

    @property
    def i_base(self) -> float:
        return S_BASE_KVA * 1000.0 / (math.sqrt(3.0) * self.v_base)

    def bus_index(self, bus: str) -> int:
        return self._index[bus]

    def line_ids(self) -> list:
        return [ln.id for ln in self.branch_line[1:]]

    def warnings(self) -> list:
        return [f"line {ln.id} has zero impedance" for ln in self.lines
                if ln.r1_ohm == 0 and ln.x1_ohm == 0]

    # ------------------------------------------------------------- matrices

    def branch_impedance_pu(self) -> np.ndarray:
        """Upstream branch impedance per bus; the root's branch is the transformer."""
        z = np.empty(self.n_bus, dtype=complex)
        z[0] = self.transformer.z_pu()
        for k, ln in enumerate(self.branch_line[1:], start=1):
            z[k] = ln.z_ohm / self.z_base
        return z

    def subtree_matrix(self) -> np.ndarray:
        """``D[i, j] = 1`` iff bus ``j`` is bus ``i`` or one of its descendants."""
        n = self.n_bus
        d = np.eye(n)
        for k in range(n - 1, 0, -1):      # children precede parents in reverse BFS
            d[self.parent[k]] += d[k]
        return d

    def electrical_distance(self) -> Dict[str, float]:
        """Sum of line |Z| (ohm) on the path from the transformer to each bus."""
        dist = np.zeros(self.n_bus)
        for k in range(1, self.n_bus):
            dist[k] = dist[self.parent[k]] + abs(self.branch_line[k].z_ohm)
        return dict(zip(self.buses, dist.tolist()))

    def path_lines(self, bus: str) -> list:
        k, out = self._index[bus], []
        while k > 0:
            out.append(self.branch_line[k].id)
            k = self.parent[k]
        return out[::-1]

    def with_scaled_impedance(self, factor: float) -> "LvNetwork":
        lines = tuple(Line(ln.id, ln.from_bus, ln.to_bus, ln.length_m, ln.r1_ohm * factor,
                           ln.x1_ohm * factor, ln.rated_a) for ln in self.lines)
        return LvNetwork(self.buses, lines, self.transformer, self.building_bus, self.root)

    def to_dict(self) -> dict:
        t = self.transformer
        return {
            "root": self.root,
            "buses": list(self.buses),
            "lines": [{"id": ln.id, "from": ln.from_bus, "to": ln.to_bus, "length_m": ln.length_m,
                       "r1_ohm": ln.r1_ohm, "x1_ohm": ln.x1_ohm, "rated_a": ln.rated_a}
                      for ln in self.lines],
            "transformer": {"s_kva": t.s_kva, "v_hv_kv": t.v_hv_kv, "v_lv_kv": t.v_lv_kv,
                            "uk_pct": t.uk_pct, "xr": t.xr},
            "buildings": dict(self.building_bus),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LvNetwork":
        try:
            lines = tuple(Line(str(d["id"]), str(d["from"]), str(d["to"]), float(d.get("length_m", 0.0)),
                               float(d["r1_ohm"]), float(d["x1_ohm"]),
                               float(d.get("rated_a", DEFAULT_RATED_A)))
                          for d in data["lines"])
            buses = [str(b["id"]) if isinstance(b, dict) else str(b) for b in data["buses"]]
        except (KeyError, TypeError) as exc:
            raise TopologyError(f"malformed network description: missing {exc}") from exc
        transformer = Transformer(**data.get("transformer", {}))
        return cls(tuple(buses), lines, transformer,
                   {str(k): str(v) for k, v in data.get("buildings", {}).items()}, data.get("root"))


def load_network(path) -> LvNetwork:
    with open(path, encoding="utf-8") as fh:
        return LvNetwork.from_dict(json.load(fh))


def save_network(path, net: LvNetwork) -> None:
    Path(path).write_text(json.dumps(net.to_dict(), indent=2) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# Sweep
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FlowResult:
    """Power-flow results over ``n_steps`` (rows) for every bus or line.

    ``v`` is the complex bus voltage (p.u.); line quantities exclude the
    transformer, whose flow is reported separately. Transformer power is
    measured at the MV slack: positive ``p_slack_kw`` draws from the grid.
    """

    net: LvNetwork
    v: np.ndarray
    line_current_a: np.ndarray
    line_loading_pct: np.ndarray
    p_slack_kw: np.ndarray
    q_slack_kvar: np.ndarray
    losses_kw: np.ndarray
    injection_kw: np.ndarray
    iterations: int
    mismatch_pu: float

    @property
    def n_steps(self) -> int:
        return self.v.shape[0]

    @property
    def vm(self) -> np.ndarray:
        return np.abs(self.v)

    @property
    def transformer_kva(self) -> np.ndarray:
        return np.hypot(self.p_slack_kw, self.q_slack_kvar)

    @property
    def feed_in_kw(self) -> np.ndarray:
        return np.maximum(-self.p_slack_kw, 0.0)

    @property
    def drawn_kw(self) -> np.ndarray:
        return np.maximum(self.p_slack_kw, 0.0)

    def balance_residual_kw(self) -> np.ndarray:
        """|sum(injections) + losses - transformer flow| per step."""
        return np.abs(self.injection_kw.sum(axis=1) + self.losses_kw - self.p_slack_kw)

    def max_feed_in(self) -> float:
        return float(self.feed_in_kw.max(initial=0.0))

    def max_drawn(self) -> float:
        return float(self.drawn_kw.max(initial=0.0))

    def line_table(self) -> list:
        """Per-line max and median loading (%)."""
        ids = self.net.line_ids()
        lmax = self.line_loading_pct.max(axis=0)
        lmed = np.median(self.line_loading_pct, axis=0)
        return [{"line": i, "max_loading_pct": float(a), "median_loading_pct": float(b)}
                for i, a, b in zip(ids, lmax, lmed)]


def solve_flow(
    net: LvNetwork,
    p_kw,
    q_kvar=None,
    pf: float = 1.0,
    tol: float = 1e-10,
    max_iter: int = 100,
) -> FlowResult:
    """Backward-forward sweep for one or many steps.

    ``p_kw`` has shape ``(n_steps, n_bus)`` (or ``(n_bus,)``) in network bus
    order; positive values are net consumption. Reactive power defaults to
    ``P * tan(acos(pf))``.

    Raises
    ------
    ConvergenceError
        If some step has not converged after ``max_iter`` sweeps; the error
        carries the first such step index.
    """
    p = np.atleast_2d(np.asarray(p_kw, dtype=float))
    if p.shape[1] != net.n_bus:
        raise ValidationError(f"injections have {p.shape[1]} columns, network has {net.n_bus} buses")
    if not 0 < pf <= 1:
        raise ValidationError("power factor must lie in (0, 1]")
    if q_kvar is None:
        q = p * math.tan(math.acos(pf))
    else:
        q = np.atleast_2d(np.asarray(q_kvar, dtype=float))
    s = (p + 1j * q) / S_BASE_KVA
    z = net.branch_impedance_pu()
    d = net.subtree_matrix()
    v = np.ones_like(s)
    active = np.ones(s.shape[0], dtype=bool)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        idx = np.flatnonzero(active)
        va = v[idx]
        current = np.conj(s[idx] / va)
        branch = current @ d.T
        v_new = 1.0 - (branch * z) @ d
        delta = np.abs(v_new - va).max(axis=1)
        v[idx] = v_new
        done = delta < tol
        active[idx[done]] = False
        if not active.any():
            break
    else:
        raise ConvergenceError(
            f"power flow did not converge in {max_iter} iterations",
            step=int(np.flatnonzero(active)[0]),
        )
    current = np.conj(s / v)
    branch = current @ d.T
    mismatch = float(np.abs(v * np.conj(current) - s).max(initial=0.0))
    s_slack = np.conj(branch[:, 0]) * S_BASE_KVA      # V_slack = 1
    losses = (np.abs(branch) ** 2 * z.real).sum(axis=1) * S_BASE_KVA
    line_i = np.abs(branch[:, 1:]) * net.i_base
    rated = np.array([ln.rated_a for ln in net.branch_line[1:]])
    return FlowResult(
        net=net, v=v, line_current_a=line_i, line_loading_pct=line_i / rated * 100.0,
        p_slack_kw=s_slack.real, q_slack_kvar=s_slack.imag, losses_kw=losses,
        injection_kw=p, iterations=iterations, mismatch_pu=mismatch,
    )


def solve_step(net: LvNetwork, injections: Mapping[str, float], pf: float = 1.0,
               **kwargs) -> FlowResult:
    """Single-step flow from a ``{bus_id: net kW}`` mapping."""
    p = np.zeros((1, net.n_bus))
    for bus, value in injections.items():
        p[0, net.bus_index(bus)] += value
    return solve_flow(net, p, pf=pf, **kwargs)


def nodal_injections(net: LvNetwork, building_kw: Mapping[str, np.ndarray],
                     extra: Optional[Mapping[str, np.ndarray]] = None) -> np.ndarray:
    """Stack per-building net consumption into an ``(n_steps, n_bus)`` array.

    ``extra`` maps bus ids directly to series (e.g. a community battery).
    """
    series = list(building_kw.values()) + list((extra or {}).values())
    if not series:
        raise ValidationError("no injections given")
    n_steps = len(series[0])
    out = np.zeros((n_steps, net.n_bus))
    for bid, values in building_kw.items():
        if bid not in net.building_bus:
            raise TopologyError(f"building {bid} has no bus assignment")
        if len(values) != n_steps:
            raise ValidationError(f"building {bid} series length differs")
        out[:, net.bus_index(net.building_bus[bid])] += values
    for bus, values in (extra or {}).items():
        if len(values) != n_steps:
            raise ValidationError(f"bus {bus} series length differs")
        out[:, net.bus_index(bus)] += values
    return out


def run_year(net: LvNetwork, building_kw: Mapping[str, np.ndarray],
             extra: Optional[Mapping[str, np.ndarray]] = None, pf: float = 1.0,
             **kwargs) -> FlowResult:
    """Flow for every step of post-optimization nodal curves."""
    return solve_flow(net, nodal_injections(net, building_kw, extra), pf=pf, **kwargs)


# --------------------------------------------------------------------------
# Voltage statistics
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BoxStats:
    q1: float
    median: float
    q3: float
    whisker_lo: float
    whisker_hi: float


def box_stats(samples) -> Optional[BoxStats]:
    """Quartiles and 1.5 IQR whiskers clipped to the data."""
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        return None
    q1, med, q3 = np.percentile(x, [25, 50, 75])
    iqr = q3 - q1
    lo = x[x >= q1 - 1.5 * iqr].min()
    hi = x[x <= q3 + 1.5 * iqr].max()
    return BoxStats(float(q1), float(med), float(q3), float(lo), float(hi))


@dataclass(frozen=True)
class BusVoltageStats:
    bus: str
    p95_over: Optional[float]
    p95_under: Optional[float]
    n_over: int
    n_under: int
    box: Optional[BoxStats]


def voltage_stats(vm, buses: Optional[Sequence[str]] = None, level: float = 95.0) -> list:
    """Per-bus percentiles of over- and under-voltage samples.

    Over-voltage uses the ``level`` percentile of samples above 1 p.u.;
    under-voltage the ``100 - level`` percentile of samples below 1 p.u., so
    both describe the deviation exceeded in only 5% of the deviating steps.
    """
    vm = np.atleast_2d(np.asarray(vm, dtype=float))
    if vm.shape[0] == 0:
        raise ValidationError("voltage statistics need at least one step")
    buses = list(buses) if buses is not None else [str(k) for k in range(vm.shape[1])]
    out = []
    for k, bus in enumerate(buses):
        col = vm[:, k]
        over = col[col > 1.0]
        under = col[col < 1.0]
        out.append(BusVoltageStats(
            bus=bus,
            p95_over=float(np.percentile(over, level)) if over.size else None,
            p95_under=float(np.percentile(under, 100.0 - level)) if under.size else None,
            n_over=int(over.size),
            n_under=int(under.size),
            box=box_stats(col),
        ))
    return out
