"""Piecewise-linear cumulative-count curves and single-arc evolution.

A cumulative curve records how many vehicles have passed a reference
point by each time.  Arc dynamics reduce to a min-plus (inf-) convolution
of the entry curve with the convex kernel built from the flux conjugate:

    exit(t) = min_tau { entry(tau) + L * g*((t - tau) / L) }

For fluxes whose conjugate is piecewise linear (triangular, sampled) the
convolution is evaluated exactly; for smooth conjugates (Greenshields) it
is evaluated on a uniform time grid of step ``dt``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, LoadingError
from .flux import ArcDescriptor

_REL = 1e-12


class CumulativeCurve:
    """Nondecreasing continuous piecewise-linear function of time.

    Constant extension on both sides: value(t) = v[0] for t <= t[0]
    (v[0] must be zero) and value(t) = v[-1] for t >= t[-1].
    Immutable by convention; all operations return new curves.
    """

    __slots__ = ("t", "v")

    def __init__(self, t, v, validate=True):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        v = np.atleast_1d(np.asarray(v, dtype=float))
        if validate:
            if t.shape != v.shape or t.ndim != 1 or len(t) == 0:
                raise DomainError("curve needs matching 1-d time and value arrays")
            if not np.all(np.isfinite(t)) or not np.all(np.isfinite(v)):
                raise DomainError("curve breakpoints must be finite")
            if np.any(np.diff(t) <= 0):
                raise DomainError("breakpoint times must be strictly increasing")
            scale = max(1.0, float(np.max(np.abs(v))))
            if np.any(np.diff(v) < -1e-9 * scale):
                raise DomainError("curve values must be nondecreasing")
            if abs(v[0]) > 1e-9 * scale:
                raise DomainError("curve must start at value 0")
            # snap tiny negative drifts so downstream arithmetic stays monotone
            v = np.maximum.accumulate(np.maximum(v, 0.0))
        self.t = t
        self.v = v

    # -- constructors -------------------------------------------------

    @classmethod
    def zero(cls, t0=0.0):
        return cls([t0], [0.0], validate=False)

    @classmethod
    def from_step_rates(cls, times, rates):
        """Curve with piecewise-constant rate ``rates[i]`` on [times[i], times[i+1])."""
        times = np.asarray(times, dtype=float)
        rates = np.asarray(rates, dtype=float)
        if len(times) != len(rates) + 1:
            raise DomainError("need len(times) == len(rates) + 1")
        if np.any(rates < 0):
            raise DomainError("rates must be nonnegative")
        v = np.concatenate(([0.0], np.cumsum(rates * np.diff(times))))
        return cls(times, v).simplify()

    @classmethod
    def combine(cls, curves):
        """Pointwise sum of curves (exact on the union of breakpoints)."""
        curves = [c for c in curves if c is not None]
        if not curves:
            return cls.zero()
        ts = np.unique(np.concatenate([c.t for c in curves]))
        vs = np.sum([c(ts) for c in curves], axis=0)
        return cls(ts, vs, validate=False).simplify()

    # -- queries ------------------------------------------------------

    def __call__(self, x):
        out = np.interp(x, self.t, self.v)
        return float(out) if np.isscalar(x) else out

    @property
    def total(self):
        return float(self.v[-1])

    @property
    def slopes(self):
        if len(self.t) < 2:
            return np.zeros(0)
        return np.diff(self.v) / np.diff(self.t)

    @property
    def max_slope(self):
        s = self.slopes
        return float(np.max(s)) if len(s) else 0.0

    def inverse(self, beta):
        """Generalized left inverse inf{ t : value(t) >= beta }.

        beta = 0 returns the first breakpoint time.  beta above the total
        mass raises DomainError.
        """
        scalar = np.isscalar(beta)
        b = np.atleast_1d(np.asarray(beta, dtype=float))
        tol = 1e-9 * max(1.0, self.total)
        if np.any(b < -tol) or np.any(b > self.total + tol):
            raise DomainError("count outside [0, total mass]")
        b = np.clip(b, 0.0, self.total)
        idx = np.searchsorted(self.v, b, side="left")
        idx = np.clip(idx, 0, len(self.t) - 1)
        out = np.empty_like(b)
        at_start = idx == 0
        out[at_start] = self.t[0]
        rest = ~at_start
        i = idx[rest]
        dv = self.v[i] - self.v[i - 1]
        frac = np.where(dv > 0, (b[rest] - self.v[i - 1]) / np.where(dv > 0, dv, 1.0), 1.0)
        out[rest] = self.t[i - 1] + frac * (self.t[i] - self.t[i - 1])
        return float(out[0]) if scalar else out

    # -- transforms ---------------------------------------------------

    def simplify(self):
        """Drop interior breakpoints that are (numerically) collinear."""
        t, v = self.t, self.v
        scale = max(1.0, float(np.abs(v).max()))
        # repeated vectorized passes: dropping a point can expose new
        # collinearity, but a fixpoint is reached in very few rounds
        while len(t) > 2:
            cross = (t[1:-1] - t[:-2]) * (v[2:] - v[:-2]) - (t[2:] - t[:-2]) * (
                v[1:-1] - v[:-2]
            )
            span = np.maximum(t[2:] - t[:-2], 1e-300)
            drop = np.abs(cross) <= _REL * scale * span
            if not np.any(drop):
                break
            # never drop two adjacent points in one pass (each test assumes
            # its neighbours survive)
            drop[1:] &= ~drop[:-1]
            keep = np.ones(len(t), dtype=bool)
            keep[1:-1] = ~drop
            t, v = t[keep], v[keep]
        if t is self.t:
            return self
        return CumulativeCurve(t, v, validate=False)

    def truncate(self, T):
        """Freeze the curve at time T (constant extension afterwards)."""
        if T >= self.t[-1]:
            return self
        val = self(T)
        keep = self.t < T - 1e-15
        t = np.concatenate((self.t[keep], [T]))
        v = np.concatenate((self.v[keep], [val]))
        return CumulativeCurve(t, v, validate=False)

    def shift(self, dt):
        return CumulativeCurve(self.t + dt, self.v, validate=False)


# ---------------------------------------------------------------------
# Min-plus evolution along one arc
# ---------------------------------------------------------------------


def _exact_minplus(entry: CumulativeCurve, arc: ArcDescriptor) -> CumulativeCurve:
    """Exact inf-convolution for arcs whose conjugate is piecewise linear."""
    flux = arc.flux
    L = arc.length
    mu = arc.mu
    entry = entry.simplify()
    total = entry.total
    if total <= 0.0:
        return CumulativeCurve([entry.t[0] + mu], [0.0], validate=False)
    taus, U = entry.t, entry.v
    paces = np.asarray(flux.conjugate_kinks(), dtype=float)
    s_kinks = L * paces  # s_kinks[0] == mu
    K_at_kinks = L * flux.conjugate(paces)

    def kernel(s):
        return L * flux.conjugate(np.asarray(s, dtype=float) / L)

    def kernel_inv(x):
        return L * flux.conjugate_inverse(x / L)

    # candidate kink times of the lower envelope; the envelope reaches the
    # total mass once every member function has, so collect each member's
    # reach-total time as well
    drain_a = taus + np.array([kernel_inv(total - u) for u in U])
    drain_b = np.array(
        [entry.inverse(max(0.0, total - k)) for k in K_at_kinks]
    ) + s_kinks
    cands = (taus[:, None] + s_kinks[None, :]).ravel()
    cands = np.unique(np.concatenate((cands, drain_a, drain_b, [taus[0] + mu])))
    t_end = float(max(np.max(drain_a), np.max(drain_b)))
    cands = cands[(cands >= taus[0] + mu - 1e-15) & (cands <= t_end + 1e-15)]
    if cands[-1] < t_end:
        cands = np.append(cands, t_end)

    def eval_all(tvec):
        tvec = np.atleast_1d(np.asarray(tvec, dtype=float))
        fam_a = U[None, :] + kernel(tvec[:, None] - taus[None, :])
        fam_b = entry(tvec[:, None] - s_kinks[None, :]) + K_at_kinks[None, :]
        return np.concatenate((fam_a, fam_b), axis=1)

    mat = eval_all(cands)
    vals = mat.min(axis=1)
    winners = mat.argmin(axis=1)
    scale = max(1.0, total)

    pts = [(float(cands[0]), float(vals[0]))]

    def refine(a, va, wa, b, vb, wb, mat_a, mat_b, depth=0):
        # all member functions are affine on [a, b]; insert envelope kinks
        if wa == wb or b - a <= 1e-13 * max(1.0, abs(a), abs(b)) or depth > 30:
            pts.append((float(b), float(vb)))
            return
        fa1, fb1 = mat_a[wa], mat_b[wa]
        fa2, fb2 = mat_a[wb], mat_b[wb]
        m1 = (fb1 - fa1) / (b - a)
        m2 = (fb2 - fa2) / (b - a)
        if abs(m1 - m2) < 1e-300:
            pts.append((float(b), float(vb)))
            return
        x = a + (fa2 - fa1) / (m1 - m2)
        if not (a + 1e-13 < x < b - 1e-13):
            pts.append((float(b), float(vb)))
            return
        row = eval_all([x])[0]
        vx = row.min()
        wx = int(row.argmin())
        cross_val = fa1 + m1 * (x - a)
        if vx < cross_val - 1e-11 * scale:
            refine(a, va, wa, x, vx, wx, mat_a, row, depth + 1)
            refine(x, vx, wx, b, vb, wb, row, mat_b, depth + 1)
        else:
            pts.append((float(x), float(cross_val)))
            pts.append((float(b), float(vb)))

    for i in range(len(cands) - 1):
        refine(
            cands[i], vals[i], winners[i], cands[i + 1], vals[i + 1], winners[i + 1],
            mat[i], mat[i + 1],
        )

    ts = np.array([p[0] for p in pts])
    vs = np.array([p[1] for p in pts])
    keep = np.concatenate(([True], np.diff(ts) > 1e-14 * max(1.0, abs(ts[-1]))))
    ts, vs = ts[keep], vs[keep]
    vs = np.clip(vs, 0.0, total)
    vs = np.maximum.accumulate(vs)
    return CumulativeCurve(ts, vs, validate=False).simplify()


def _monge_row_minima(ts, taus, U, objective):
    """Row minima of A[r, c] = U[c] + K(ts[r] - taus[c]) by divide and conquer.

    Valid because the kernel is convex, making A inverse-Monge; the
    (leftmost) minimizing column is then nondecreasing in the row index.
    """
    n = len(ts)
    vals = np.empty(n)
    args = np.empty(n, dtype=int)
    stack = [(0, n, 0, len(taus))]
    while stack:
        r0, r1, c0, c1 = stack.pop()
        if r0 >= r1:
            continue
        rm = (r0 + r1) // 2
        row = objective(ts[rm], taus[c0:c1], U[c0:c1])
        j = int(np.argmin(row))
        vals[rm] = row[j]
        args[rm] = c0 + j
        stack.append((r0, rm, c0, c0 + j + 1))
        stack.append((rm + 1, r1, c0 + j, c1))
    return vals, args


def _grid_minplus(entry, arc, dt, t_hi=None):
    """Grid evaluation of the inf-convolution for smooth conjugates.

    The output curve interpolates exact values sampled every ``dt``;
    minimization is over entry breakpoints plus the same uniform grid.
    """
    flux = arc.flux
    L = arc.length
    mu = arc.mu
    entry = entry.simplify()
    total = entry.total
    if total <= 0.0:
        return CumulativeCurve([entry.t[0] + mu], [0.0], validate=False)

    # a-priori drain bound: queueing (total/F_max) plus slowest uncongested
    # travel (L / v(rho_star)) past the last entry breakpoint
    t_end = entry.t[-1] + total / flux.f_max + L / flux.speed_at_capacity + dt
    if t_hi is not None:
        t_end = min(t_end, t_hi)
    t_lo = entry.t[0] + mu

    def objective(t, tau_slice, u_slice):
        return u_slice + L * flux.conjugate((t - tau_slice) / L)

    while True:
        n = max(2, int(np.ceil((t_end - t_lo) / dt)) + 1)
        ts = t_lo + dt * np.arange(n)
        tau_grid = entry.t[0] + dt * np.arange(
            int(np.ceil((ts[-1] - entry.t[0]) / dt)) + 1
        )
        taus = np.unique(np.concatenate((tau_grid, entry.t)))
        U = entry(taus)
        vals, _ = _monge_row_minima(ts, taus, U, objective)
        if t_hi is not None or vals[-1] >= total - 1e-9 * max(1.0, total):
            break
        t_end = t_lo + 1.5 * (t_end - t_lo)
    vals = np.clip(vals, 0.0, total)
    vals = np.maximum.accumulate(vals)
    return CumulativeCurve(ts, vals, validate=False).simplify()


def lax_hopf_exit(entry: CumulativeCurve, arc: ArcDescriptor, dt: float = 1e-3,
                  t_hi: float | None = None):
    """Exit curve of an arc fed by ``entry``, via the variational formula.

    Exact for piecewise-linear conjugates; sampled on a grid of step
    ``dt`` otherwise.  ``t_hi`` optionally bounds the sampling horizon of
    the grid evaluation (exact kinds always compute the full curve).
    """
    if not np.isfinite(entry.total):
        raise DomainError("entry curve must carry bounded total mass")
    if arc.flux.conjugate_kinks() is not None:
        curve = _exact_minplus(entry, arc)
    else:
        curve = _grid_minplus(entry, arc, dt, t_hi=t_hi)
    # Snap tail values that are within rounding error of the final total:
    # a one-ulp dip on the last flat segment would otherwise push left
    # inverses of the total past the whole tail, grossly inflating exit
    # times of the last drivers.
    snap = 64.0 * np.finfo(float).eps * max(1.0, entry.total)
    near = curve.v >= entry.total - snap
    if np.any(near) and not np.all(curve.v[near] == entry.total):
        v = curve.v.copy()
        v[near] = entry.total
        curve = CumulativeCurve(curve.t, v).simplify()
    return curve


@dataclass(frozen=True)
class ExitComputation:
    """Entry/exit curve pair for one arc, with FIFO exit-time queries."""

    entry: CumulativeCurve
    exit: CumulativeCurve
    arc: ArcDescriptor

    def validate(self, tol=1e-9):
        ts = np.unique(np.concatenate((self.entry.t, self.exit.t)))
        scale = max(1.0, self.entry.total)
        if np.any(self.exit(ts) > self.entry(ts) + tol * scale):
            raise LoadingError("exit curve exceeds entry curve")
        if self.exit.max_slope > self.arc.flux.f_max + 1e-9:
            raise LoadingError("exit curve steeper than arc capacity")
        if abs(self.exit.total - self.entry.total) > tol * scale:
            raise LoadingError("exit and entry totals differ")

    def exit_time(self, t):
        """Exit time of a driver entering (possibly queueing) at time t.

        Equals max(t + mu, first time the exit curve reaches the driver's
        cumulative entry count); nondecreasing in t.
        """
        scalar = np.isscalar(t)
        tv = np.atleast_1d(np.asarray(t, dtype=float))
        beta = np.minimum(self.entry(tv), self.exit.total)
        out = np.maximum(tv + self.arc.mu, self.exit.inverse(beta))
        return float(out[0]) if scalar else out


def exit_time(entry: CumulativeCurve, arc: ArcDescriptor, t, dt: float = 1e-3):
    """Convenience wrapper: exit time for a single query against ``entry``."""
    comp = ExitComputation(entry, lax_hopf_exit(entry, arc, dt=dt), arc)
    return comp.exit_time(t)


# ---------------------------------------------------------------------
# Modulus of continuity for arc exit times
# ---------------------------------------------------------------------


def modulus_of_continuity(arc: ArcDescriptor, M: float, G: float):
    """Uniform modulus phi with exit_time(t2) - exit_time(t1) <= phi(t2 - t1).

    Valid for entry curves whose rate is bounded by M and whose total
    mass is at most G.  phi is continuous with phi(0) = 0.
    """
    if M <= 0 or G <= 0:
        raise DomainError("need positive rate bound M and mass bound G")
    mu = arc.mu

    def _h(s):
        return arc.kernel(s)

    def phi_flat(xi):
        target = min(M * xi, G)
        if target <= 0:
            return 0.0
        hi = 1.0
        while -_h(-mu - hi) < target:
            hi *= 2.0
            if hi > 1e12:
                raise LoadingError("kernel never reaches the requested depth")
        lo = 0.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if -_h(-mu - mid) < target:
                lo = mid
            else:
                hi = mid
        return hi

    def phi_sharp(xi):
        if xi <= 0:
            return 0.0
        span = max(xi, M * xi)

        def violation(tau):
            # max over s in [-span, 0] of h(s - tau) - M s  (concave in s)
            lo, hi = -span, 0.0
            for _ in range(200):
                m1 = lo + (hi - lo) / 3.0
                m2 = hi - (hi - lo) / 3.0
                if _h(m1 - tau) - M * m1 < _h(m2 - tau) - M * m2:
                    lo = m1
                else:
                    hi = m2
            s = 0.5 * (lo + hi)
            cand = [_h(s - tau) - M * s, _h(-span - tau) + M * span, _h(-tau)]
            return max(cand)

        if violation(mu) <= 0:
            return xi
        hi = mu + 1.0
        while violation(hi) > 0:
            hi *= 2.0
            if hi > 1e12:
                raise LoadingError("no feasible shift for the sharp modulus")
        lo = mu
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if violation(mid) > 0:
                lo = mid
            else:
                hi = mid
        return xi + hi - mu

    def phi(xi):
        if xi < 0:
            raise DomainError("time gap must be nonnegative")
        if xi == 0:
            return 0.0
        return max(phi_sharp(xi), phi_flat(xi))

    return phi


def write_curve_csv(curve: CumulativeCurve, path):
    """Export a curve as ``t,value`` rows at full precision."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("t,value\n")
        for t, v in zip(curve.t, curve.v):
            f.write(f"{t:.17g},{v:.17g}\n")
