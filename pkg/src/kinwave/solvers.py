"""Cost evaluation, equilibrium diagnostics, and the two solvers.

Costs: each driver pays phi(departure) + psi(arrival).  The global
solver minimizes the aggregate cost over admissible departure patterns;
the Nash solver seeks a pattern where no driver can do better by
switching departure time or path, measured by the equilibrium gap.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

from .curves import CumulativeCurve
from .errors import ConfigurationError
from .loading import DepartureProfile, LoadingResult, arrival_time_path, network_load
from .network import Network, SolverBounds, compute_bounds

_EMPTY_FRAC = 1e-9   # bins carrying less than this fraction of G_k count as empty
_GL_ORDER = 8

_gl_nodes, _gl_weights = leggauss(_GL_ORDER)


def _integrate_against(curve: CumulativeCurve, cost) -> float:
    """Exact-ish Stieltjes integral of a cost function against a curve.

    Gauss-Legendre per linear segment: exact for polynomial costs up to
    degree 15, spectrally accurate for the smoothed schedule penalty.
    """
    t, v = curve.t, curve.v
    if len(t) < 2:
        return 0.0
    dm = np.diff(v)
    live = dm > 0
    if not np.any(live):
        return 0.0
    a, b = t[:-1][live], t[1:][live]
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    nodes = mid[:, None] + half[:, None] * _gl_nodes[None, :]
    vals = cost.value(nodes.ravel()).reshape(nodes.shape)
    seg = (vals * _gl_weights[None, :]).sum(axis=1) * 0.5
    return float(np.sum(seg * dm[live]))


def total_cost(network: Network, profile: DepartureProfile, *,
               loading: LoadingResult | None = None, dt=1e-3,
               check_mass=True) -> float:
    """Aggregate cost J = sum over drivers of phi(departure) + psi(arrival)."""
    if loading is None:
        loading = network_load(network, profile, dt=dt, check_mass=check_mass)
    J = 0.0
    for k, g in enumerate(network.groups):
        for p in network.paths_for_group(k):
            dep = loading.departures.get((k, p))
            arr = loading.arrivals.get((k, p))
            if dep is None or dep.total <= 0:
                continue
            J += _integrate_against(dep, g.departure_cost)
            J += _integrate_against(arr, g.arrival_cost)
    return J


@dataclass
class CostProfile:
    """Per-(group, path) driver cost sampled on the profile's bin grid.

    ``times`` holds bin edges and midpoints; ``values[(k, p)]`` the cost
    phi_k(t) + psi_k(arrival at destination) for a departure at each time.
    """

    times: np.ndarray
    values: dict
    midpoint_index: np.ndarray   # positions of bin midpoints within times

    def midpoints(self, k, p):
        return self.values[(k, p)][self.midpoint_index]


def cost_profile(network: Network, loading: LoadingResult) -> CostProfile:
    prof = loading.profile
    edges = prof.bin_edges
    mids = edges[:-1] + 0.5 * prof.bin_width
    times = np.unique(np.concatenate((edges, mids)))
    mid_idx = np.searchsorted(times, mids)
    values = {}
    for k, g in enumerate(network.groups):
        for p in network.paths_for_group(k):
            arr = arrival_time_path(loading, network.paths[p], times)
            values[(k, p)] = g.departure_cost.value(times) + g.arrival_cost.value(arr)
    return CostProfile(times, values, mid_idx)


@dataclass
class EquilibriumReport:
    """Equilibrium-gap diagnostics for a departure profile."""

    group_used_cost: list          # realized cost on each group's support (max)
    group_support_min: list        # min cost over the support
    group_best_cost: list          # cheapest alternative anywhere on the grid
    group_gap: list
    gap: float
    iterations: int = 0
    converged: bool = True
    gap_history: list = field(default_factory=list)
    rate_bound: float | None = None          # kappa diagnostic bound
    max_rate: float | None = None
    support_window: tuple | None = None      # [-T0, T0] padded by one bin
    support_ok: bool | None = None
    rates_ok: bool | None = None

    def as_dict(self):
        return {
            "gap": self.gap,
            "converged": self.converged,
            "iterations": self.iterations,
            "groups": [
                {
                    "used_cost": self.group_used_cost[k],
                    "support_min_cost": self.group_support_min[k],
                    "best_cost": self.group_best_cost[k],
                    "gap": self.group_gap[k],
                }
                for k in range(len(self.group_gap))
            ],
            "gap_history": self.gap_history,
            "rate_bound": self.rate_bound,
            "max_rate": self.max_rate,
            "support_window": list(self.support_window) if self.support_window else None,
            "support_ok": self.support_ok,
            "rates_ok": self.rates_ok,
        }


def _gap_from_costs(network, profile, costs: CostProfile) -> EquilibriumReport:
    width = profile.bin_width
    used, sup_min, best, gaps = [], [], [], []
    for k, g in enumerate(network.groups):
        thresh = _EMPTY_FRAC * max(1.0, g.size)
        c_used = -np.inf
        c_sup_min = np.inf
        c_best = np.inf
        for p in network.paths_for_group(k):
            phi_mid = costs.midpoints(k, p)
            c_best = min(c_best, float(np.min(costs.values[(k, p)])))
            mass = profile.rates[k, p] * width
            live = mass > thresh
            if np.any(live):
                c_used = max(c_used, float(np.max(phi_mid[live])))
                c_sup_min = min(c_sup_min, float(np.min(phi_mid[live])))
        if not np.isfinite(c_used):     # zero-mass group
            c_used = c_best
            c_sup_min = c_best
        used.append(c_used)
        sup_min.append(c_sup_min)
        best.append(c_best)
        gaps.append(max(c_used - c_best, 0.0))
    return EquilibriumReport(
        group_used_cost=used, group_support_min=sup_min, group_best_cost=best,
        group_gap=gaps, gap=max(gaps) if gaps else 0.0,
    )


def nash_gap(network: Network, profile: DepartureProfile, *,
             loading: LoadingResult | None = None, dt=1e-3) -> EquilibriumReport:
    """Equilibrium gap: realized support cost minus best alternative cost.

    Zero (within tolerance) exactly when the profile is a Nash
    equilibrium on its bin grid.
    """
    profile.validate(network)
    if loading is None:
        loading = network_load(network, profile, dt=dt)
    return _gap_from_costs(network, profile, cost_profile(network, loading))


# ---------------------------------------------------------------------
# Nash solver: damped proportional-swap dynamics
# ---------------------------------------------------------------------


def _make_grid(bounds: SolverBounds, bins: int):
    start = -bounds.horizon
    width = 2.0 * bounds.horizon / bins
    return start, width


def _uniform_start(network, bounds, bins, start, width):
    """Uniform rates over [-T0, T0] split equally across viable paths."""
    K, P = len(network.groups), len(network.paths)
    rates = np.zeros((K, P, bins))
    edges = start + width * np.arange(bins + 1)
    lo = np.maximum(edges[:-1], -bounds.t0)
    hi = np.minimum(edges[1:], bounds.t0)
    overlap = np.maximum(hi - lo, 0.0)
    if overlap.sum() <= 0:
        overlap = np.full(bins, width)
    for k, g in enumerate(network.groups):
        ps = network.paths_for_group(k)
        share = g.size / len(ps)
        for p in ps:
            rates[k, p] = share * overlap / (overlap.sum() * width)
    return rates


def solve_nash(network: Network, *, bins=64, tol=1e-3, max_iter=5000,
               damping=0.2, dt=1e-3, bounds: SolverBounds | None = None):
    """Seek a Nash equilibrium by damped mass transfer toward cheap cells.

    Each iteration loads the network, evaluates per-cell driver costs,
    and shifts mass from expensive (path, bin) cells toward cheap ones,
    clipped so rates stay within [0, 4*kappa].  The transfer uses an
    extragradient scheme (costs re-evaluated at a predictor point) so
    that the queueing feedback does not induce limit cycles.  Returns
    the best profile found and its diagnostics; ``converged`` is False
    if the gap never reached ``tol``.
    """
    if bins < 2:
        raise ConfigurationError("solve_nash needs at least 2 bins")
    if bounds is None:
        bounds = compute_bounds(network)
    start, width = _make_grid(bounds, bins)
    cap = 4.0 * bounds.kappa
    rates = _uniform_start(network, bounds, bins, start, width)
    if np.any(rates > cap):
        raise ConfigurationError("initial uniform rates exceed the 4*kappa cap")
    profile = DepartureProfile(start, width, rates)

    best_profile, best_report = None, None
    history = []
    it = 0
    rc = cap * (1 + 1e-9)
    for it in range(1, max_iter + 1):
        loading = network_load(network, profile, dt=dt, rate_cap=rc)
        costs = cost_profile(network, loading)
        report = _gap_from_costs(network, profile, costs)
        history.append(report.gap)
        if best_report is None or report.gap < best_report.gap:
            best_profile, best_report = profile.copy(), report
        if report.gap <= tol:
            break
        predictor = _swap_step(network, profile, costs, damping, cap)
        mid_loading = network_load(network, predictor, dt=dt, rate_cap=rc)
        mid_costs = cost_profile(network, mid_loading)
        profile = _swap_step(network, profile, mid_costs, damping, cap)
    else:
        it = max_iter

    best_report.iterations = it
    best_report.converged = best_report.gap <= tol
    best_report.gap_history = history
    _attach_diagnostics(network, best_profile, best_report, bounds)
    return best_profile, best_report


def _project_box_simplex(v, total, cap):
    """Projection onto {0 <= x <= cap, sum x = total} by bisection on the
    Lagrange shift."""
    lo = float(np.min(v)) - cap - 1.0
    hi = float(np.max(v)) + 1.0
    for _ in range(100):
        theta = 0.5 * (lo + hi)
        s = np.clip(v - theta, 0.0, cap).sum()
        if s > total:
            lo = theta
        else:
            hi = theta
    return np.clip(v - 0.5 * (lo + hi), 0.0, cap)


def _swap_step(network, profile, costs, damping, cap):
    """One damped mass transfer: shift each group's mass toward its cheap
    (path, bin) cells.

    Projected fixed-point update m <- proj(m - alpha * Phi) on the
    box-constrained mass simplex: cells costlier than the projection
    threshold send mass, all cheaper cells receive, and the transfer
    sizes scale with the cost excess, so steps shrink as the gap closes.
    """
    width = profile.bin_width
    rates = profile.rates.copy()
    cap_mass = cap * width
    for k, g in enumerate(network.groups):
        if g.size <= 0:
            continue
        ps = network.paths_for_group(k)
        phi = np.concatenate([costs.midpoints(k, p) for p in ps])
        mass = np.concatenate([rates[k, p] * width for p in ps])
        alpha = damping * max(g.size, 1e-12)
        new = _project_box_simplex(mass - alpha * phi, g.size, cap_mass)
        split = new.reshape(len(ps), -1)
        for j, p in enumerate(ps):
            rates[k, p] = split[j] / width
    out = DepartureProfile(profile.start, width, rates)
    # restore exact per-group mass lost to the finite bisection
    for k, g in enumerate(network.groups):
        m = out.rates[k].sum() * width
        if m > 0 and g.size > 0:
            out.rates[k] *= g.size / m
    return out


def _attach_diagnostics(network, profile, report, bounds):
    width = profile.bin_width
    report.rate_bound = bounds.kappa
    report.max_rate = float(profile.rates.max()) if profile.rates.size else 0.0
    window = (-bounds.t0 - width, bounds.t0 + width)
    report.support_window = window
    edges = profile.bin_edges
    live = profile.rates.sum(axis=(0, 1)) * width > _EMPTY_FRAC * max(
        1.0, network.total_demand
    )
    if np.any(live):
        lo = float(edges[:-1][live].min())
        hi = float(edges[1:][live].max())
        report.support_ok = lo >= window[0] - 1e-12 and hi <= window[1] + 1e-12
    else:
        report.support_ok = True
    report.rates_ok = report.max_rate <= bounds.kappa * (1.0 + 1e-6)


# ---------------------------------------------------------------------
# Global-optimum solver: projected finite-difference descent
# ---------------------------------------------------------------------


def _project_simplex(v, total):
    """Euclidean projection of v onto {x >= 0, sum x = total}."""
    if total <= 0:
        return np.zeros_like(v)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    idx = np.arange(1, len(v) + 1)
    cond = u - css / idx > 0
    rho = idx[cond][-1]
    theta = css[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


def solve_global(network: Network, *, bins=16, tol=1e-6, max_iter=100,
                 restarts=2, dt=1e-3, seed=0,
                 bounds: SolverBounds | None = None,
                 init: DepartureProfile | None = None):
    """Minimize aggregate cost over admissible departure patterns.

    Projected gradient descent with central finite differences on the
    per-group mass simplices, multi-started from random points (plus
    ``init`` if given, e.g. to warm-start from an equilibrium profile).
    Always returns the best profile found and its cost.
    """
    if bins < 2:
        raise ConfigurationError("solve_global needs at least 2 bins")
    if bounds is None:
        bounds = compute_bounds(network)
    start, width = _make_grid(bounds, bins)
    rng = np.random.default_rng(seed)
    K, P = len(network.groups), len(network.paths)
    group_paths = [network.paths_for_group(k) for k in range(K)]

    def to_profile(masses):
        rates = np.zeros((K, P, bins))
        for k, ps in enumerate(group_paths):
            for j, p in enumerate(ps):
                rates[k, p] = masses[k][j] / width
        return DepartureProfile(start, width, rates)

    def from_profile(prof):
        return [
            np.array([prof.rates[k, p] * prof.bin_width for p in ps])
            for k, ps in enumerate(group_paths)
        ]

    def objective(masses):
        return total_cost(network, to_profile(masses), dt=dt, check_mass=False)

    starts = []
    if init is not None:
        if abs(init.start - start) > 1e-12 or abs(init.bin_width - width) > 1e-12 or \
                init.n_bins != bins:
            raise ConfigurationError("init profile must share the solver's bin grid")
        starts.append(from_profile(init))
    for _ in range(restarts):
        masses = []
        for k, ps in enumerate(group_paths):
            w = rng.dirichlet(np.ones(len(ps) * bins)).reshape(len(ps), bins)
            masses.append(w * network.groups[k].size)
        starts.append(masses)
    if not starts:
        starts.append(from_profile(to_profile(
            [np.full((len(ps), bins), network.groups[k].size / (len(ps) * bins))
             for k, ps in enumerate(group_paths)])))

    best_masses, best_J = None, np.inf
    for masses in starts:
        masses = [m.copy() for m in masses]
        J = objective(masses)
        for _ in range(max_iter):
            grad = []
            for k, ps in enumerate(group_paths):
                h = 1e-4 * max(network.groups[k].size, 1e-6)
                gk = np.zeros_like(masses[k])
                flat = masses[k].ravel()
                gf = gk.ravel()
                for i in range(flat.size):
                    saved = flat[i]
                    flat[i] = saved + h
                    J_hi = objective(masses)
                    flat[i] = max(saved - h, 0.0)
                    J_lo = objective(masses)
                    flat[i] = saved
                    gf[i] = (J_hi - J_lo) / (h + min(saved, h))
                grad.append(gk)
            gnorm = np.sqrt(sum(float(np.sum(g * g)) for g in grad))
            if gnorm <= 1e-14:
                break
            lr = max(network.total_demand, 1e-3) / gnorm
            improved = False
            while lr > 1e-12:
                trial = [
                    _project_simplex((m - lr * g).ravel(), network.groups[k].size)
                    .reshape(m.shape)
                    for k, (m, g) in enumerate(zip(masses, grad))
                ]
                J_t = objective(trial)
                if J_t < J - 1e-15:
                    improved = J - J_t > tol
                    masses, J = trial, J_t
                    break
                lr *= 0.5
            if not improved:
                break
        if J < best_J:
            best_masses, best_J = masses, J
    return to_profile(best_masses), best_J
