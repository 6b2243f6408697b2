"""Network topology, driver groups, cost functions, and a-priori bounds."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError
from .flux import ArcDescriptor


class CostFunction:
    """Scalar cost of a departure or arrival time, with derivative.

    Kinds:
      * ``affine(a, b)``:      c(t) = a + b*t
      * ``quadratic(a, b, c)``: c(t) = a + b*t + c*t**2
      * ``vickrey(target, early_rate, late_rate, smoothing)``:
        c(t) = t + P(t - target) with P a smoothed two-sided schedule
        penalty (early_rate on the early side, late_rate on the late
        side); the kink at the target is rounded over ``smoothing``.
    """

    def __init__(self, kind, params):
        self.kind = kind
        self.params = dict(params)
        if kind == "vickrey":
            e = self.params["early_rate"]
            l = self.params["late_rate"]
            eps = self.params.get("smoothing", 0.05)
            if e < 0 or l < 0 or eps <= 0:
                raise ConfigurationError("vickrey rates must be >= 0, smoothing > 0")
            self.params["smoothing"] = eps
        elif kind not in ("affine", "quadratic"):
            raise ConfigurationError(f"unknown cost kind {kind!r}")

    @classmethod
    def affine(cls, a, b):
        return cls("affine", {"a": a, "b": b})

    @classmethod
    def quadratic(cls, a, b, c):
        return cls("quadratic", {"a": a, "b": b, "c": c})

    @classmethod
    def vickrey(cls, target, early_rate, late_rate, smoothing=0.05):
        return cls(
            "vickrey",
            {"target": target, "early_rate": early_rate, "late_rate": late_rate,
             "smoothing": smoothing},
        )

    @staticmethod
    def _smooth_relu(x, eps):
        return 0.5 * (x + np.sqrt(x * x + eps * eps))

    @staticmethod
    def _smooth_relu_deriv(x, eps):
        return 0.5 * (1.0 + x / np.sqrt(x * x + eps * eps))

    def value(self, t):
        t_arr = np.asarray(t, dtype=float)
        p = self.params
        if self.kind == "affine":
            out = p["a"] + p["b"] * t_arr
        elif self.kind == "quadratic":
            out = p["a"] + p["b"] * t_arr + p["c"] * t_arr * t_arr
        else:
            x = t_arr - p["target"]
            eps = p["smoothing"]
            pen = p["early_rate"] * self._smooth_relu(-x, eps) + p[
                "late_rate"
            ] * self._smooth_relu(x, eps)
            out = t_arr + pen
        return float(out) if np.isscalar(t) else out

    def deriv(self, t):
        t_arr = np.asarray(t, dtype=float)
        p = self.params
        if self.kind == "affine":
            out = np.full_like(t_arr, p["b"])
        elif self.kind == "quadratic":
            out = p["b"] + 2.0 * p["c"] * t_arr
        else:
            x = t_arr - p["target"]
            eps = p["smoothing"]
            dpen = -p["early_rate"] * self._smooth_relu_deriv(-x, eps) + p[
                "late_rate"
            ] * self._smooth_relu_deriv(x, eps)
            out = 1.0 + dpen
        return float(out) if np.isscalar(t) else out

    def __call__(self, t):
        return self.value(t)

    def __repr__(self):
        args = ", ".join(f"{k}={v:g}" for k, v in self.params.items())
        return f"CostFunction({self.kind}, {args})"


@dataclass(frozen=True)
class GroupDescriptor:
    """A homogeneous population of drivers sharing OD pair and costs."""

    size: float
    origin: str
    destination: str
    departure_cost: CostFunction
    arrival_cost: CostFunction

    def __post_init__(self):
        if self.size < 0:
            raise ConfigurationError("group size must be nonnegative")
        if self.origin == self.destination:
            raise ConfigurationError("group origin and destination must differ")

    def combined_cost(self, t):
        return self.departure_cost.value(t) + self.arrival_cost.value(t)


@dataclass(frozen=True)
class Path:
    """A loop-free chain of arcs between an origin and a destination."""

    nodes: tuple
    arcs: tuple

    def __post_init__(self):
        seen = set()
        for n in self.nodes:
            if n in seen:
                raise ConfigurationError(f"path repeats node {n!r}")
            seen.add(n)
        for arc, (a, b) in zip(self.arcs, zip(self.nodes[:-1], self.nodes[1:])):
            if arc.from_node != a or arc.to_node != b:
                raise ConfigurationError("path arcs do not chain through its nodes")

    @property
    def origin(self):
        return self.nodes[0]

    @property
    def destination(self):
        return self.nodes[-1]

    @property
    def free_flow_time(self):
        return sum(a.mu for a in self.arcs)

    def __repr__(self):
        return "Path(" + "->".join(self.nodes) + ")"


@dataclass(frozen=True)
class SolverBounds:
    """A-priori horizon, rate, and window bounds used by the solvers."""

    t_max: float       # worst-case travel time over any viable path
    t0: float          # no departure/arrival outside [-t0, t0] at equilibrium
    kappa: float       # equilibrium departure-rate bound
    horizon: float     # half-width of the feasible departure window
    delta_min: float   # shortest free-flow traversal time over all arcs

    def __post_init__(self):
        if min(self.t_max, self.t0, self.kappa, self.horizon, self.delta_min) <= 0:
            raise ConfigurationError("all solver bounds must be positive")
        total = self.horizon - self.t0
        if total < -1e-9 * max(1.0, self.horizon):
            raise ConfigurationError("horizon must equal t0 + G/kappa")


class Network:
    """Immutable road network with driver groups and enumerated paths."""

    def __init__(self, nodes, arcs, groups):
        self.nodes = list(nodes)
        if len(set(self.nodes)) != len(self.nodes):
            raise ConfigurationError("duplicate node ids")
        node_set = set(self.nodes)
        seen_pairs = set()
        for arc in arcs:
            if arc.from_node not in node_set or arc.to_node not in node_set:
                raise ConfigurationError(
                    f"arc {arc.from_node}->{arc.to_node} references unknown node"
                )
            if arc.key in seen_pairs:
                raise ConfigurationError(f"duplicate arc {arc.from_node}->{arc.to_node}")
            seen_pairs.add(arc.key)
        self.arcs = list(arcs)
        self.groups = list(groups)
        for g in self.groups:
            if g.origin not in node_set or g.destination not in node_set:
                raise ConfigurationError("group references unknown node")
        self.arc_by_key = {a.key: a for a in self.arcs}
        self.paths = enumerate_paths(self)
        self._paths_by_od = {}
        for i, p in enumerate(self.paths):
            self._paths_by_od.setdefault((p.origin, p.destination), []).append(i)
        for k, g in enumerate(self.groups):
            if (g.origin, g.destination) not in self._paths_by_od:
                raise ConfigurationError(
                    f"group {k} has no viable path {g.origin}->{g.destination}"
                )

    @property
    def total_demand(self):
        return sum(g.size for g in self.groups)

    def paths_for_group(self, k):
        """Indices into self.paths of the viable paths of group k."""
        g = self.groups[k]
        return self._paths_by_od[(g.origin, g.destination)]

    @property
    def f_max(self):
        return max(a.flux.f_max for a in self.arcs)


def enumerate_paths(network) -> list:
    """All loop-free chains joining each OD pair that some group uses.

    Deterministic order: lexicographic by node sequence.
    """
    out_arcs = {}
    for arc in network.arcs:
        out_arcs.setdefault(arc.from_node, []).append(arc)
    for lst in out_arcs.values():
        lst.sort(key=lambda a: a.to_node)

    od_pairs = sorted({(g.origin, g.destination) for g in network.groups})
    paths = []
    for origin, dest in od_pairs:
        stack = [(origin, (origin,), ())]
        found = []
        while stack:
            node, visited, arcs = stack.pop()
            if node == dest:
                found.append(Path(visited, arcs))
                continue
            # push in reverse so lexicographically smaller successors pop first
            for arc in reversed(out_arcs.get(node, [])):
                if arc.to_node in visited:
                    continue
                stack.append((arc.to_node, visited + (arc.to_node,), arcs + (arc,)))
        found.sort(key=lambda p: p.nodes)
        paths.extend(found)
    paths.sort(key=lambda p: p.nodes)
    return paths


def max_travel_time(network: Network, path: Path, total_demand: float) -> float:
    """Worst-case traversal time of a path under total demand.

    Per arc: queueing bounded by demand over capacity, driving bounded by
    length over the slowest uncongested speed.
    """
    if total_demand < 0:
        raise DomainError("total demand must be nonnegative")
    return sum(
        total_demand / a.flux.f_max + a.length / a.flux.speed_at_capacity
        for a in path.arcs
    )


def scan_window(network: Network, t_max: float, *, scan_step=0.25, scan_cap=10**6) -> float:
    """Smallest t0 (on a scan grid) outside which departing is certainly
    worse than the crude strategy of leaving at t = 0.

    Scans outward from the smallest window containing all cost minima.
    """
    rhs = max(
        g.departure_cost.value(0.0) + g.arrival_cost.value(t_max) for g in network.groups
    )

    def worst(t):
        return min(g.combined_cost(t) for g in network.groups)

    t0 = _initial_window(network)
    steps = 0
    while worst(t0) <= rhs or worst(-t0) <= rhs:
        t0 += scan_step
        steps += 1
        if steps > scan_cap:
            raise ConfigurationError(
                "combined costs do not grow at the scan horizon; widen the scan "
                "or check cost coercivity"
            )
    return t0


def compute_bounds(network: Network, *, scan_step=0.25, scan_cap=10**6) -> SolverBounds:
    """Derive the horizon/rate bounds needed by the equilibrium solver."""
    G = network.total_demand
    t_max = max(max_travel_time(network, p, G) for p in network.paths)
    t0 = scan_window(network, t_max, scan_step=scan_step, scan_cap=scan_cap)

    # conservative derivative window: intermediate iterates may arrive up to
    # t_max past the departure window
    grid = np.linspace(-t0 - t_max, t0 + t_max, 1001)
    phi_max = max(float(np.max(np.abs(g.departure_cost.deriv(grid)))) for g in network.groups)
    psi_min = min(float(np.min(g.arrival_cost.deriv(grid))) for g in network.groups)
    if psi_min <= 0:
        raise ConfigurationError(
            "arrival cost is not strictly increasing on the working window"
        )
    if phi_max <= 0:
        raise ConfigurationError("departure cost has zero derivative on the window")
    kappa = phi_max * network.f_max / psi_min
    horizon = t0 + (G / kappa if G > 0 else 0.0)
    if G == 0:
        horizon = t0
    delta_min = min(a.mu for a in network.arcs)
    return SolverBounds(t_max=t_max, t0=t0, kappa=kappa, horizon=max(horizon, t0),
                        delta_min=delta_min)


def _initial_window(network):
    """Smallest window (rounded to 0.25) containing every group's cost minimum."""
    extent = 1.0
    while True:
        grid = np.linspace(-extent, extent, 4097)
        interior = True
        t_far = 0.0
        for g in network.groups:
            vals = g.combined_cost(grid)
            i = int(np.argmin(vals))
            if i == 0 or i == len(grid) - 1:
                interior = False
                break
            t_far = max(t_far, abs(grid[i]))
        if interior:
            return max(0.25, float(np.ceil(t_far / 0.25) * 0.25))
        extent *= 2.0
        if extent > 1e9:
            raise ConfigurationError("could not bracket the cost minima; check costs")


@dataclass
class ValidationReport:
    """Outcome of the structural-assumption checks, item by item."""

    items: list = field(default_factory=list)

    def add(self, name, passed, detail=""):
        self.items.append({"name": name, "passed": bool(passed), "detail": detail})

    @property
    def passed(self):
        return all(item["passed"] for item in self.items)

    def as_dict(self):
        return {"passed": self.passed, "items": self.items}


def validate_assumptions(network: Network, window) -> ValidationReport:
    """Check flux concavity/positivity and cost monotonicity on a window."""
    lo, hi = window
    report = ValidationReport()
    for arc in network.arcs:
        flux = arc.flux
        grid = np.linspace(0.0, flux.rho_jam, 1001)
        f = flux.flow(grid)
        name = f"flux[{arc.from_node}->{arc.to_node}]"
        report.add(f"{name} endpoints", abs(f[0]) <= 1e-9 and abs(f[-1]) <= 1e-9)
        report.add(f"{name} nonnegative", bool(np.all(f >= -1e-9)))
        report.add(
            f"{name} concave",
            bool(np.all(np.diff(f, 2) <= 1e-7 * max(1.0, flux.f_max))),
        )
        inc = grid <= flux.rho_star
        report.add(
            f"{name} increasing branch",
            bool(np.all(np.diff(f[inc]) >= -1e-9)),
        )
    tgrid = np.linspace(lo, hi, 1001)
    for k, g in enumerate(network.groups):
        dphi = g.departure_cost.deriv(tgrid)
        dpsi = g.arrival_cost.deriv(tgrid)
        report.add(f"group[{k}] departure cost decreasing", bool(np.all(dphi < 0)))
        report.add(f"group[{k}] arrival cost increasing", bool(np.all(dpsi > 0)))
        mid = g.combined_cost(0.5 * (lo + hi))
        report.add(
            f"group[{k}] combined cost grows at window edges",
            g.combined_cost(lo) >= mid - 1e-9 and g.combined_cost(hi) >= mid - 1e-9,
        )
        if g.arrival_cost.kind == "vickrey":
            p = g.arrival_cost.params
            pen_d = g.arrival_cost.deriv(tgrid) - 1.0
            report.add(
                f"group[{k}] schedule penalty slope > -1",
                bool(np.all(pen_d > -1.0)),
            )
    return report
