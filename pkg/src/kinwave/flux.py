"""Concave arc flux functions and their convex-analysis machinery.

A flux function F(rho) = rho * v(rho) is concave, nonnegative on
[0, rho_jam], zero at both ends, and strictly increasing up to the
critical density rho_star where it attains the capacity F_max.  On the
increasing branch it has an inverse  rho = g(u)  (convex, nondecreasing),
whose Legendre conjugate  g*(p) = max_u (p*u - g(u))  drives the
cumulative-curve evolution along an arc.  The shift kernel
h(s) = -L * g*(-s/L) is the vertical gap one arc of length L imposes
between entry and exit curves.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, ConfigurationError, DomainError

_TOL = 1e-9


class FluxDescriptor:
    """A concave fundamental diagram with inverse and conjugate machinery.

    Supported kinds:
      * ``greenshields``: F(rho) = v_free * rho * (1 - rho/rho_jam)
      * ``triangular``:   F(rho) = min(v_free*rho, w_back*(rho_jam - rho))
      * ``sampled``:      concave piecewise-linear through given breakpoints

    Instances are immutable after construction and safe to share.
    """

    def __init__(self, kind, params, breakpoints=None):
        self.kind = kind
        self.params = dict(params)
        if kind == "greenshields":
            a = float(self.params["v_free"])
            R = float(self.params["rho_jam"])
            if a <= 0 or R <= 0:
                raise ConfigurationError("greenshields needs v_free > 0 and rho_jam > 0")
            self.rho_jam = R
            self.rho_star = R / 2.0
            self.f_max = a * R / 4.0
            self.free_flow_pace = 1.0 / a
            self._table = None
        elif kind == "triangular":
            a = float(self.params["v_free"])
            w = float(self.params["w_back"])
            R = float(self.params["rho_jam"])
            if a <= 0 or w <= 0 or R <= 0:
                raise ConfigurationError("triangular needs positive v_free, w_back, rho_jam")
            self.rho_jam = R
            self.rho_star = w * R / (a + w)
            self.f_max = a * self.rho_star
            self.free_flow_pace = 1.0 / a
            self._table = None
        elif kind == "sampled":
            self._init_sampled(breakpoints)
        else:
            raise ConfigurationError(f"unknown flux kind {kind!r}")
        self._validate()

    # -- constructors -------------------------------------------------

    @classmethod
    def greenshields(cls, v_free, rho_jam):
        return cls("greenshields", {"v_free": v_free, "rho_jam": rho_jam})

    @classmethod
    def triangular(cls, v_free, w_back, rho_jam):
        return cls("triangular", {"v_free": v_free, "w_back": w_back, "rho_jam": rho_jam})

    @classmethod
    def sampled(cls, breakpoints):
        return cls("sampled", {}, breakpoints=breakpoints)

    def _init_sampled(self, breakpoints):
        pts = np.asarray(breakpoints, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
            raise ConfigurationError("sampled flux needs >= 3 (density, flow) breakpoints")
        rho, q = pts[:, 0], pts[:, 1]
        if not np.all(np.diff(rho) > 0):
            raise ConfigurationError("sampled flux densities must be strictly increasing")
        if abs(rho[0]) > 0 or abs(q[0]) > _TOL or abs(q[-1]) > _TOL:
            raise ConfigurationError("sampled flux must start at (0, 0) and end at (rho_jam, 0)")
        if np.any(q < -_TOL):
            raise ConfigurationError("sampled flux must be nonnegative")
        slopes = np.diff(q) / np.diff(rho)
        if np.any(np.diff(slopes) > _TOL):
            raise ConfigurationError("sampled flux must be concave")
        i_star = int(np.argmax(q))
        if i_star == 0 or i_star == len(q) - 1:
            raise ConfigurationError("sampled flux capacity must be interior")
        # reject flat segments on the increasing branch: g would be set-valued
        if np.any(slopes[:i_star] <= _TOL):
            raise ConfigurationError(
                "sampled flux must be strictly increasing up to its capacity point"
            )
        self.rho_jam = float(rho[-1])
        self.rho_star = float(rho[i_star])
        self.f_max = float(q[i_star])
        self._rho = rho
        self._q = q
        # increasing-branch table: g maps flow -> density
        self._g_u = q[: i_star + 1]
        self._g_rho = rho[: i_star + 1]
        self._g_slopes = np.diff(self._g_rho) / np.diff(self._g_u)
        self.free_flow_pace = float(self._g_slopes[0])
        self._table = True

    # -- basic queries ------------------------------------------------

    @property
    def free_flow_speed(self):
        """v(0), the speed of cars on an empty road."""
        return 1.0 / self.free_flow_pace

    @property
    def speed_at_capacity(self):
        """v(rho_star) = F_max / rho_star, the slowest uncongested speed."""
        return self.f_max / self.rho_star

    def flow(self, rho):
        """Evaluate F(rho).  Raises DomainError outside [0, rho_jam]."""
        rho_arr = np.asarray(rho, dtype=float)
        if np.any(rho_arr < -_TOL) or np.any(rho_arr > self.rho_jam + _TOL):
            raise DomainError(f"density outside [0, {self.rho_jam}]")
        rho_arr = np.clip(rho_arr, 0.0, self.rho_jam)
        if self.kind == "greenshields":
            a, R = self.params["v_free"], self.params["rho_jam"]
            out = a * rho_arr * (1.0 - rho_arr / R)
        elif self.kind == "triangular":
            a, w, R = (self.params[k] for k in ("v_free", "w_back", "rho_jam"))
            out = np.minimum(a * rho_arr, w * (R - rho_arr))
        else:
            out = np.interp(rho_arr, self._rho, self._q)
        out = np.maximum(out, 0.0)
        return float(out) if np.isscalar(rho) else out

    def density(self, u):
        """Inverse of the increasing branch: the rho in [0, rho_star] with F(rho) = u.

        Raises CapacityError for u > F_max.
        """
        u_arr = np.asarray(u, dtype=float)
        if np.any(u_arr < -_TOL):
            raise DomainError("flow must be nonnegative")
        if np.any(u_arr > self.f_max * (1.0 + 1e-12) + _TOL):
            raise CapacityError(f"flow exceeds capacity F_max = {self.f_max}")
        u_arr = np.clip(u_arr, 0.0, self.f_max)
        if self.kind == "greenshields":
            a, R = self.params["v_free"], self.params["rho_jam"]
            out = 0.5 * R * (1.0 - np.sqrt(np.maximum(0.0, 1.0 - 4.0 * u_arr / (a * R))))
        elif self.kind == "triangular":
            out = u_arr / self.params["v_free"]
        else:
            out = np.interp(u_arr, self._g_u, self._g_rho)
        return float(out) if np.isscalar(u) else out

    def conjugate(self, p):
        """Legendre conjugate g*(p) = max_{u in [0, F_max]} (p*u - g(u)).

        Extended by zero for p below the free-flow pace (including p < 0),
        where the maximizer is u = 0.
        """
        p_arr = np.asarray(p, dtype=float)
        if self.kind == "greenshields":
            a, R = self.params["v_free"], self.params["rho_jam"]
            ap = a * p_arr
            with np.errstate(divide="ignore", invalid="ignore"):
                val = R * (ap - 1.0) ** 2 / (4.0 * ap)
            out = np.where(p_arr <= self.free_flow_pace, 0.0, val)
        elif self.kind == "triangular":
            out = self.f_max * np.maximum(0.0, p_arr - self.free_flow_pace)
        else:
            # conjugate of a convex piecewise-linear function: max over vertices
            vals = p_arr[..., None] * self._g_u - self._g_rho
            out = np.maximum(np.max(vals, axis=-1), 0.0)
        return float(out) if np.isscalar(p) else out

    def conjugate_inverse(self, x):
        """Smallest p >= 0 with g*(p) = x, for x >= 0 (used for drain horizons)."""
        x = float(x)
        if x < 0:
            raise DomainError("conjugate_inverse needs x >= 0")
        if x == 0.0:
            return self.free_flow_pace
        if self.kind == "triangular":
            return self.free_flow_pace + x / self.f_max
        if self.kind == "sampled":
            kinks = np.asarray(self.conjugate_kinks())
            vals = self.conjugate(kinks)
            if x <= vals[-1]:
                return float(np.interp(x, vals, kinks))
            return float(kinks[-1] + (x - vals[-1]) / self.f_max)
        # greenshields: bisection on the closed form
        lo, hi = self.free_flow_pace, self.free_flow_pace + 1.0
        while self.conjugate(hi) < x:
            hi *= 2.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self.conjugate(mid) < x:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def conjugate_kinks(self):
        """Pace values where g* changes slope, or None for smooth kinds.

        A non-None return means g* is exactly piecewise linear: zero up to
        the first kink (the free-flow pace), then convex with slopes equal
        to the increasing-branch flow values, ending at slope F_max.
        """
        if self.kind == "triangular":
            return [self.free_flow_pace]
        if self.kind == "sampled":
            return [self.free_flow_pace] + list(self._g_slopes[1:])
        return None

    def kernel(self, length, s):
        """Shift kernel h(s) = -length * g*(-s/length).

        Zero for s >= -mu (mu = length * free-flow pace), negative and
        concave below.
        """
        if length <= 0:
            raise DomainError("arc length must be positive")
        s_arr = np.asarray(s, dtype=float)
        out = -length * self.conjugate(-s_arr / length)
        return float(out) if np.isscalar(s) else out

    # -- validation ---------------------------------------------------

    def _validate(self):
        grid = np.linspace(0.0, self.rho_jam, 1001)
        f = self.flow(grid)
        if abs(f[0]) > _TOL or abs(f[-1]) > _TOL:
            raise ConfigurationError("flux must vanish at rho = 0 and rho = rho_jam")
        if np.any(f < -_TOL):
            raise ConfigurationError("flux must be nonnegative")
        d2 = np.diff(f, 2)
        if np.any(d2 > 1e-7 * max(1.0, self.f_max)):
            raise ConfigurationError("flux must be concave")
        inc = grid <= self.rho_star
        df = np.diff(f[inc])
        if np.any(df < -_TOL):
            raise ConfigurationError("flux must be increasing up to rho_star")

    def __repr__(self):
        if self.kind == "sampled":
            return f"FluxDescriptor(sampled, {len(self._rho)} pts, F_max={self.f_max:g})"
        args = ", ".join(f"{k}={v:g}" for k, v in self.params.items())
        return f"FluxDescriptor({self.kind}, {args})"


@dataclass(frozen=True)
class ArcDescriptor:
    """A directed viable arc: endpoints, length, and flux function."""

    from_node: str
    to_node: str
    length: float
    flux: FluxDescriptor

    def __post_init__(self):
        if self.length <= 0:
            raise ConfigurationError(
                f"arc {self.from_node}->{self.to_node} must have positive length"
            )

    @property
    def mu(self):
        """Minimum (free-flow) traversal time."""
        return self.length * self.flux.free_flow_pace

    @property
    def key(self):
        return (self.from_node, self.to_node)

    def kernel(self, s):
        return self.flux.kernel(self.length, s)

    def __repr__(self):
        return f"Arc({self.from_node}->{self.to_node}, L={self.length:g}, {self.flux.kind})"


def eval_flux(flux: FluxDescriptor, rho):
    """F(rho) for rho in [0, rho_jam]."""
    return flux.flow(rho)


def inverse_g(flux: FluxDescriptor, u):
    """Density on the increasing branch with F(rho) = u, for u in [0, F_max]."""
    return flux.density(u)


def legendre(flux: FluxDescriptor, p):
    """Conjugate g*(p) of the flow-to-density map."""
    return flux.conjugate(p)


def h_kernel(flux: FluxDescriptor, length, s):
    """Shift kernel h(s) = -length * g*(-s/length)."""
    return flux.kernel(length, s)
