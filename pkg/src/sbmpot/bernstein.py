"""Complete Bernstein functions used as Laplace exponents of subordinators.

Three closed families are supported: the stable subordinator, finite sums of
stable ones, and the exponentially tilted (relativistic) stable subordinator.
Every kind carries its exact Levy density, which the samplers rely on.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import gamma

from .errors import DimensionTooSmall, EmptyGrid


@dataclass(frozen=True)
class BernsteinSpec:
    """Laplace exponent phi of a driftless subordinator.

    kind is one of "stable", "stable_sum", "relativistic". Use the module level
    constructors rather than filling the fields by hand.
    """
    kind: str
    terms: tuple = ()          # ((weight, alpha), ...) for stable and stable_sum
    alpha: float = 1.0
    mass: float = 0.0          # relativistic m

    def __post_init__(self):
        if self.kind in ("stable", "stable_sum"):
            if not self.terms:
                raise ValueError("stable spec needs at least one term")
            for w, a in self.terms:
                if not w > 0:
                    raise ValueError(f"weight must be positive, got {w}")
                if not 0 < a < 2:
                    raise ValueError(f"alpha must lie in (0, 2), got {a}")
        elif self.kind == "relativistic":
            if not 0 < self.alpha < 2:
                raise ValueError(f"alpha must lie in (0, 2), got {self.alpha}")
            if not self.mass > 0:
                raise ValueError(f"mass must be positive, got {self.mass}")
        else:
            raise ValueError(f"unknown kind {self.kind!r}")

    @property
    def drift(self):
        return 0.0

    @property
    def theta(self):
        """Tilting rate m^{2/alpha} of the relativistic kind."""
        return self.mass ** (2.0 / self.alpha)

    @property
    def is_stable(self):
        return self.kind == "stable"

    @property
    def stable_alpha(self):
        """alpha of a pure stable spec."""
        if not self.is_stable:
            raise ValueError("not a pure stable spec")
        return self.terms[0][1]

    @property
    def small_scale_index(self):
        """Exponent governing j(r) ~ r^{-d-a} as r -> 0."""
        if self.kind == "relativistic":
            return self.alpha
        return max(a for _, a in self.terms)

    def phi(self, lam):
        lam = np.asarray(lam, dtype=float)
        if self.kind == "relativistic":
            # m((1 + lam/theta)^{alpha/2} - 1) without cancellation near 0
            return self.mass * np.expm1(self.alpha / 2 * np.log1p(lam / self.theta))
        out = np.zeros_like(lam)
        for w, a in self.terms:
            out = out + w * lam ** (a / 2)
        return out

    def levy_density(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "relativistic":
            b = self.alpha / 2
            return b / gamma(1 - b) * t ** (-1 - b) * np.exp(-self.theta * t)
        out = np.zeros_like(t)
        for w, a in self.terms:
            b = a / 2
            out = out + w * b / gamma(1 - b) * t ** (-1 - b)
        return out

    def log_levy_density(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "relativistic":
            b = self.alpha / 2
            return np.log(b / gamma(1 - b)) - (1 + b) * np.log(t) - self.theta * t
        logs = [np.log(w * (a / 2) / gamma(1 - a / 2)) - (1 + a / 2) * np.log(t) for w, a in self.terms]
        return np.logaddexp.reduce(np.array(logs), axis=0)

    def describe(self):
        if self.kind == "relativistic":
            return {"kind": "relativistic", "alpha": self.alpha, "m": self.mass}
        if self.kind == "stable":
            return {"kind": "stable", "alpha": self.stable_alpha}
        return {"kind": "stable_sum", "terms": [list(t) for t in self.terms]}


def Stable(alpha):
    return BernsteinSpec("stable", terms=((1.0, float(alpha)),), alpha=float(alpha))


def StableSum(terms):
    terms = tuple((float(w), float(a)) for w, a in terms)
    if not terms:
        raise ValueError("stable_sum needs a non-empty term list")
    return BernsteinSpec("stable_sum", terms=terms, alpha=max(a for _, a in terms))


def RelativisticStable(alpha, m):
    return BernsteinSpec("relativistic", alpha=float(alpha), mass=float(m))


def phi_eval(spec, lam):
    if np.any(np.asarray(lam) < 0):
        raise ValueError("phi is defined for lambda >= 0")
    return spec.phi(lam)


def levy_density_eval(spec, t):
    if np.any(np.asarray(t) <= 0):
        raise ValueError("Levy density needs t > 0")
    return spec.levy_density(t)


def char_exponent(spec, xi):
    xi = np.asarray(xi, dtype=float)
    return spec.phi(np.sum(xi * xi, axis=-1))


def laplace_exponent_quad(spec, lam):
    """phi(lam) recomputed from the Levy density, int (1 - e^{-lam t}) mu(t) dt."""
    f = lambda u: -np.expm1(-lam * np.exp(u)) * np.exp(spec.log_levy_density(np.exp(u)) + u)
    edges = [-700.0, -200.0, -60.0, -20.0, 0.0, 20.0, 60.0, 200.0, 700.0]
    with np.errstate(over="ignore", under="ignore"):
        return sum(integrate.quad(f, a, b, epsabs=0, epsrel=1e-12, limit=200)[0] for a, b in zip(edges[:-1], edges[1:]))


@dataclass
class ScalingReport:
    satisfied_lsc: bool
    satisfied_usc: bool
    delta1: float
    delta2: float
    a1: float
    a2: float
    grid: list = field(repr=False)
    global_variant: bool
    worst_violation: float


def _phi_callable(spec):
    return spec.phi if isinstance(spec, BernsteinSpec) else spec


def check_scaling(spec, lam_grid, r_grid, global_variant=True, floor=0.05):
    """Audit the lower and upper scaling conditions on a finite grid.

    The indices are the extreme log-slopes of lam -> phi(lam r)/phi(r) taken
    over lambda pairs at least one decade apart (or the full grid span when it
    is shorter). a1 and a2 are then the tightest constants on the grid. An
    index is accepted when it stays at least `floor` away from 0 and 1.
    `spec` may also be a plain callable phi for auditing synthetic functions.
    """
    lam = np.unique(np.asarray(lam_grid, dtype=float))
    r = np.unique(np.asarray(r_grid, dtype=float))
    if lam.size == 0 or r.size == 0:
        raise EmptyGrid("scaling audit needs non-empty grids")
    if np.any(lam < 1):
        raise ValueError("lambda grid must lie in [1, inf)")
    if not global_variant and np.any(r < 1):
        raise ValueError("H1 audit needs r >= 1")
    phi = _phi_callable(spec)
    base = phi(r)
    vals = phi(np.outer(lam, r))        # shape (n_lam, n_r)
    ratio = vals / base
    grid = [(float(a), float(b)) for a in lam for b in r]

    if lam.size < 2:
        delta1 = delta2 = float("nan")
    else:
        loglam = np.log(lam)
        gap = min(np.log(10.0), loglam[-1] - loglam[0])
        i, j = np.triu_indices(lam.size, 1)
        keep = loglam[j] - loglam[i] >= gap - 1e-12
        i, j = i[keep], j[keep]
        slopes = (np.log(vals[j]) - np.log(vals[i])) / (loglam[j] - loglam[i])[:, None]
        delta1 = float(np.min(slopes))
        delta2 = float(np.max(slopes))

    if np.isnan(delta1):
        a1 = a2 = 1.0
        lsc = usc = False
        worst = float("inf")
    else:
        a1 = float(np.min(ratio / lam[:, None] ** delta1))
        a2 = float(np.max(ratio / lam[:, None] ** delta2))
        tol = 1e-9
        lsc = bool(delta1 >= floor - tol and delta1 < 1)
        usc = bool(0 < delta2 <= 1 - floor + tol)
        worst = float(max(0.0, floor - delta1, delta2 - (1 - floor)))
    return ScalingReport(lsc, usc, delta1, delta2, a1, a2, grid, bool(global_variant), worst)


def check_transience(spec, d, blowup=1e8, s_max=700.0):
    """Chung-Fuchs test: transient iff d >= 3 or int_0^1 dlam / phi(lam) < inf.

    With lam = e^{-s} the integral runs over s in (0, inf). It is summed over
    blocks [0,1], [1,2], [2,4], ... up to s_max (the edge of double range); the
    remainder is extrapolated from the local exponential decay rate of the
    integrand. Divergence is declared when that extrapolated partial integral
    exceeds `blowup`.
    """
    if d < 2:
        raise DimensionTooSmall(f"d must be at least 2, got {d}")
    if d >= 3:
        return True
    phi = _phi_callable(spec)

    def g(s):
        lam = np.exp(-s)
        return lam / phi(lam)

    edges = [0.0, 1.0]
    while edges[-1] < s_max:
        edges.append(min(2 * edges[-1], s_max))
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        total += integrate.quad(g, a, b, epsrel=1e-10, limit=200)[0]
        if not np.isfinite(total) or total > blowup:
            return False
    g_end, g_prev = g(s_max), g(s_max - 1.0)
    rate = np.log(g_prev) - np.log(g_end)
    if not rate > 0:
        return False
    return bool(total + g_end / rate <= blowup)
