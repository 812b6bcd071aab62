"""Green potentials, Poisson kernels and integrals, and the operator L.

Monte Carlo estimators average per-path quantities from the samplers in
`simulate`; ball closed forms give deterministic tabulations used as oracles.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.interpolate import BarycentricInterpolator
from scipy.spatial import cKDTree
from scipy.special import roots_legendre

from .errors import GeometryViolation, GridTooCoarse, QuadratureNonConvergent, SupportViolation
from .kernels import poisson_constant, sphere_area
from .simulate import Constant, JumpTo, Pointwise, as_stream, exit_sample_timestep, exit_sample_wos

METHODS = ("mc_timestep", "mc_wos", "quadrature", "hybrid")


@dataclass(frozen=True)
class Estimate:
    value: float
    std_error: float
    n: int
    method: str
    flags: tuple = ()

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.method == "quadrature" and self.std_error != 0:
            raise ValueError("quadrature estimates carry no standard error")
        if self.std_error < 0:
            raise ValueError("negative standard error")

    def __float__(self):
        return float(self.value)

    def to_dict(self):
        return {"value": self.value, "std_error": self.std_error, "n": self.n, "method": self.method,
                "flags": list(self.flags)}


def exact(value, n=0):
    return Estimate(float(value), 0.0, n, "quadrature")


def combine(parts, weights=None):
    """Weighted sum of independent estimates."""
    weights = np.ones(len(parts)) if weights is None else np.asarray(weights, dtype=float)
    value = float(sum(w * p.value for w, p in zip(weights, parts)))
    se = float(np.sqrt(sum((w * p.std_error) ** 2 for w, p in zip(weights, parts))))
    methods = {p.method for p in parts}
    method = methods.pop() if len(methods) == 1 else "hybrid"
    if method == "quadrature" and se > 0:
        method = "hybrid"
    if method != "quadrature" and se == 0 and all(p.method == "quadrature" for p in parts):
        method = "quadrature"
    flags = tuple(sorted({f for p in parts for f in p.flags}))
    return Estimate(value, se, max(p.n for p in parts), method, flags)


# outer charges

@dataclass(frozen=True)
class OuterCharge:
    """A non-negative measure on the complement: a density plus point atoms.

    `radial` = (g, breaks) records that the density is g(|y|) with kinks at
    `breaks`, which enables the closed-form ball tabulation.
    """
    density: object = None
    atoms: tuple = ()
    radial: tuple = None
    support_radius: float = np.inf
    shape: tuple = None        # ("ball", c, r, v) or ("annulus", r1, r2, v) when known

    @classmethod
    def zero(cls):
        return cls()

    @classmethod
    def annulus(cls, r1, r2, value=1.0):
        def g(s):
            s = np.asarray(s, dtype=float)
            return np.where((s > r1) & (s < r2), value, 0.0)

        def dens(y):
            return g(np.linalg.norm(np.atleast_2d(y), axis=-1))

        return cls(dens, (), (g, (r1, r2)), float(r2), ("annulus", float(r1), float(r2), float(value)))

    @classmethod
    def ball_indicator(cls, center, radius, value=1.0):
        c = np.asarray(center, dtype=float)

        def dens(y):
            return np.where(np.linalg.norm(np.atleast_2d(y) - c, axis=-1) < radius, value, 0.0)

        return cls(dens, (), None, float(np.linalg.norm(c) + radius), ("ball", c, float(radius), float(value)))

    @classmethod
    def point(cls, z, mass=1.0):
        return cls(None, ((tuple(np.asarray(z, dtype=float)), float(mass)),))

    @property
    def is_zero(self):
        return self.density is None and not self.atoms

    def density_at(self, y):
        y = np.atleast_2d(y)
        if self.density is None:
            return np.zeros(len(y))
        return np.asarray(self.density(y), dtype=float)

    def quadrature(self, d, n_r=8, n_ang=32):
        """Nodes y and weights w with sum w g(y) ~ int g dlam, or None for a generic density.

        Gauss-Legendre in the radius of the support shell and the periodic
        angular rule; atoms enter as nodes carrying their mass.
        """
        if self.density is not None and self.shape is None:
            return None
        nodes, weights = [np.zeros((0, d))], [np.zeros(0)]
        if self.shape is not None:
            kind, a, b, v = self.shape
            lo, hi, c = (0.0, b, a) if kind == "ball" else (a, b, np.zeros(d))
            t, w = roots_legendre(n_r)
            s = lo + (hi - lo) * (t + 1) / 2
            ws = w * (hi - lo) / 2 * s ** (d - 1)
            dirs, wa = _sphere_rule(d, n_ang)
            nodes.append((c + s[:, None, None] * dirs[None]).reshape(-1, d))
            weights.append(v * np.outer(ws, wa).ravel())
        for z, m in self.atoms:
            nodes.append(np.asarray(z, dtype=float)[None])
            weights.append(np.array([m]))
        return np.vstack(nodes), np.concatenate(weights)

    def validate(self, domain):
        for z, m in self.atoms:
            if m <= 0:
                raise GeometryViolation("atom masses must be positive")
            if domain.contains(np.asarray(z)[None])[0]:
                raise GeometryViolation(f"atom {z} lies inside the domain")
        return self

    def scaled(self, c):
        dens = None if self.density is None else (lambda y, f=self.density: c * f(y))
        rad = None if self.radial is None else ((lambda s, g=self.radial[0]: c * g(s)), self.radial[1])
        shape = None if self.shape is None else self.shape[:3] + (c * self.shape[3],)
        return OuterCharge(dens, tuple((z, c * m) for z, m in self.atoms), rad, self.support_radius, shape)

    def __add__(self, other):
        if self.density is None or other.density is None:
            dens = self.density or other.density
        else:
            dens = lambda y, f=self.density, g=other.density: f(y) + g(y)
        rad = None
        if self.radial is not None and other.radial is not None:
            rad = ((lambda s, f=self.radial[0], g=other.radial[0]: f(s) + g(s)),
                   tuple(sorted(set(self.radial[1]) | set(other.radial[1]))))
        elif self.density is None:
            rad = other.radial
        elif other.density is None:
            rad = self.radial
        return OuterCharge(dens, self.atoms + other.atoms, rad, max(self.support_radius, other.support_radius))


# Monte Carlo helpers

def _resolve_method(model, method):
    if method == "auto":
        return "wos" if model.is_stable else "timestep"
    if method == "wos" and not model.is_stable:
        from .errors import UnsupportedModel
        raise UnsupportedModel("walk on spheres needs the stable kind")
    return method


def exit_batch(model, domain, X, n_per, rng, method="auto", dt=1e-3, functionals=None, **kw):
    """Exit samples for n_per paths from each row of X (rows repeated consecutively)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    starts = np.repeat(X, n_per, axis=0)
    method = _resolve_method(model, method)
    if method == "wos":
        b = exit_sample_wos(model.alpha, domain, starts, as_stream(rng), functionals, n_paths=len(starts), **kw)
    else:
        b = exit_sample_timestep(model, domain, starts, dt, as_stream(rng), functionals, n_paths=len(starts), **kw)
    return b, "mc_wos" if method == "wos" else "mc_timestep"


def group_stats(vals, n_per):
    v = np.asarray(vals, dtype=float).reshape(-1, n_per)
    return v.mean(axis=1), v.std(axis=1, ddof=1) / np.sqrt(n_per)


def _estimates(mean, se, n_per, method, flags=()):
    return [Estimate(float(m), float(s), n_per, method, tuple(flags)) for m, s in zip(mean, se)]


def _single(x, ests):
    return ests[0] if np.ndim(x) == 1 else ests


def _is_zero_function(f):
    if f is None:
        return True
    if isinstance(f, (int, float)) and f == 0:
        return True
    return isinstance(f, Constant) and f.c == 0


def green_potential(model, domain, f, x, n_paths, rng, method="auto", dt=1e-3, **kw):
    """G_D f(x) = E_x int_0^tau f(X_t) dt from occupation accumulators."""
    X = np.atleast_2d(x)
    if _is_zero_function(f):
        return _single(x, [exact(0.0, n_paths) for _ in X])
    func = Constant(float(f)) if isinstance(f, (int, float)) else f
    if not hasattr(func, "ball_integral"):
        func = Pointwise(func)
    b, meth = exit_batch(model, domain, X, n_paths, rng, method, dt, [func], **kw)
    mean, se = group_stats(b.accumulators[func.name], n_paths)
    return _single(x, _estimates(mean, se, n_paths, meth))


def expected_exit_time(model, domain, x, n_paths, rng, method="auto", dt=1e-3, **kw):
    return green_potential(model, domain, Constant(1.0), x, n_paths, rng, method, dt, **kw)


def _cell_size(domain):
    R = domain.bounding_radius if domain.bounded else domain.complement_radius
    return 0.01 * max(R, 1e-12)


def poisson_kernel_est(model, domain, x, y, n_paths, rng, method="auto", dt=1e-3, **kw):
    """P_D(x, y) = G_D[j(|. - y|)](x) for y outside the closure of D.

    Walk on spheres accumulates the closed-form ball Poisson kernel at y per
    step, which is exact in expectation; time stepping sums j(|X_k - y|) dt.
    """
    y = np.asarray(y, dtype=float)
    gap = -float(domain.sdf(y[None])[0])
    if gap < 0:
        raise GeometryViolation("y must lie outside the domain")
    if gap == 0:
        raise GeometryViolation("P_D(x, y) on the boundary may be infinite; use martin.classify_accessible")
    flags = ("NearBoundarySingularity",) if gap < 10 * _cell_size(domain) else ()
    meth = _resolve_method(model, method)
    func = JumpTo(model, y, name="jump") if meth == "wos" else \
        Pointwise(lambda w: model.j(np.linalg.norm(w - y, axis=-1)), "jump")
    X = np.atleast_2d(x)
    b, mname = exit_batch(model, domain, X, n_paths, rng, meth, dt, [func], **kw)
    mean, se = group_stats(b.accumulators["jump"], n_paths)
    return _single(x, _estimates(mean, se, n_paths, mname, flags))


def _divergence_flag(vals):
    vals = np.asarray(vals)
    if not np.all(np.isfinite(vals)):
        return True
    tot = vals.sum()
    return bool(tot > 0 and len(vals) >= 100 and vals.max() > 0.5 * tot)


def poisson_integral(model, domain, lam, x, n_paths, rng, method="auto", dt=1e-3, **kw):
    """P_D lambda(x): density part from exit samples, atoms via poisson_kernel_est.

    The two parts use independent substreams and are added as independent
    estimates. The flag InfiniteIntegral marks a single path dominating the mean.
    """
    X = np.atleast_2d(x)
    if lam.is_zero:
        return _single(x, [exact(0.0, n_paths) for _ in X])
    lam.validate(domain)
    stream = as_stream(rng)
    parts = []
    flags = [set() for _ in X]
    if lam.density is not None:
        b, meth = exit_batch(model, domain, X, n_paths, stream.substream(0), method, dt, **kw)
        vals = np.where(b.escaped, 0.0, lam.density_at(b.exit_position))
        mean, se = group_stats(vals, n_paths)
        for i, v in enumerate(vals.reshape(len(X), -1)):
            if _divergence_flag(v):
                flags[i].add("InfiniteIntegral")
        parts.append(_estimates(mean, se, n_paths, meth))
    for k, (z, m) in enumerate(lam.atoms):
        est = poisson_kernel_est(model, domain, X, z, n_paths, stream.substream(1, k), method, dt, **kw)
        parts.append([Estimate(m * e.value, m * e.std_error, e.n, e.method, e.flags) for e in est])
    out = []
    for i in range(len(X)):
        c = combine([p[i] for p in parts])
        out.append(Estimate(c.value, c.std_error, c.n, c.method, tuple(sorted(set(c.flags) | flags[i]))))
    return _single(x, out)


# closed-form tabulation on balls

class BallPoissonTable:
    """P_B lambda for the alpha-stable process on B(0, r), lambda radial.

    P_B g(x) = g(r+) + C (r^2 - rho^2)^{alpha/2} Q(rho^2) with
    Q(q) = int_r^inf (s^2 - r^2)^{-alpha/2} s (g(s) - g(r+)) / (s^2 - q) ds,
    C = C_P |S^{d-1}|. Q is smooth on [0, r^2] and is tabulated on Chebyshev
    nodes. Outside the ball the table returns g (the extended function).
    """

    def __init__(self, alpha, d, r, g, breaks=(), n_cheb=40):
        self.alpha, self.d, self.r, self.g = alpha, d, r, g
        self.breaks = tuple(sorted(b for b in breaks if b > r))
        self.g_edge = float(g(r * (1 + 1e-12)))
        self.C = poisson_constant(d, alpha) * sphere_area(d)
        k = np.arange(n_cheb)
        q = 0.5 * r * r * (1 - np.cos(np.pi * (k + 0.5) / n_cheb))
        self._interp = BarycentricInterpolator(q, [self._Q(qi) for qi in q])

    def _Q(self, q):
        a, r, g, ge = self.alpha, self.r, self.g, self.g_edge
        edges = [r] + list(self.breaks)
        if len(edges) == 1:
            edges.append(2 * r)

        def jump(s, lo, hi):
            # g between kinks, never sampled exactly on a kink
            return float(g(min(max(s, lo + 1e-12 * hi), hi - 1e-12 * hi))) - ge

        h = lambda s: (s + r) ** (-a / 2) * s * jump(s, r, edges[1]) / (s * s - q)
        tot = integrate.quad(h, r, edges[1], weight="alg", wvar=(-a / 2, 0.0), limit=200)[0]
        for lo, hi in zip(edges[1:-1], edges[2:]):
            f = lambda s: (s * s - r * r) ** (-a / 2) * s * jump(s, lo, hi) / (s * s - q)
            tot += integrate.quad(f, lo, hi, limit=200, epsabs=1e-13, epsrel=1e-11)[0]
        lo = edges[-1]
        f = lambda s: (s * s - r * r) ** (-a / 2) * s * jump(s, lo, np.inf) / (s * s - q)
        tail = integrate.quad(f, lo, np.inf, limit=400, epsabs=1e-13, epsrel=1e-11)[0]
        if not np.isfinite(tail):
            raise QuadratureNonConvergent("tail of the ball Poisson integral diverges")
        return tot + tail

    def inside(self, rho):
        rho = np.asarray(rho, dtype=float)
        q = np.minimum(rho * rho, self.r ** 2)
        return self.g_edge + self.C * (self.r ** 2 - q) ** (self.alpha / 2) * self._interp(q)

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        rho = np.linalg.norm(x, axis=-1)
        out = np.asarray(self.g(rho), dtype=float).copy()
        m = rho < self.r
        out[m] = self.inside(rho[m])
        return out


def ball_poisson_integral(alpha, d, r, lam, n_cheb=40):
    """Deterministic P_B lambda (callable on points) for a radial density lambda on B(0, r)^c."""
    if lam.radial is None or lam.atoms:
        raise ValueError("closed-form tabulation needs a radial density without atoms")
    g, breaks = lam.radial
    return BallPoissonTable(alpha, d, r, g, breaks, n_cheb)


# P_D^* lambda as a queryable measure

class StarMeasure:
    """P_D lambda(y) dy on D glued to lambda on the complement."""

    def __init__(self, domain, lam, grid_points, values, spacing, n_check=2000, seed=0):
        self.domain, self.lam = domain, lam
        self.points = np.asarray(grid_points, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.spacing = float(spacing)
        self.cell_volume = self.spacing ** domain.d
        inside = domain.contains(self.points)
        self.points, self.values = self.points[inside], self.values[inside]
        if not len(self.points):
            raise GridTooCoarse("no grid point inside the domain")
        lo, hi = domain.sample_box()
        probe = np.random.default_rng(seed).uniform(lo, hi, (n_check, domain.d))
        probe = probe[domain.contains(probe)]
        gap = cKDTree(self.points).query(probe)[0] if len(probe) else np.zeros(1)
        if np.max(gap) > self.spacing * np.sqrt(domain.d):
            raise GridTooCoarse(f"grid leaves holes of size {np.max(gap):.3g} in the domain")

    def interior_mass(self, lo, hi):
        sel = np.all((self.points >= lo) & (self.points < hi), axis=1)
        return float(self.values[sel].sum() * self.cell_volume)

    def exterior_mass(self, lo, hi, n=48):
        lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
        tot = 0.0
        if self.lam.density is not None:
            x, w = roots_legendre(n)
            axes = [0.5 * (a + b) + 0.5 * (b - a) * x for a, b in zip(lo, hi)]
            wts = [0.5 * (b - a) * w for a, b in zip(lo, hi)]
            mesh = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(lo))
            W = np.prod(np.stack(np.meshgrid(*wts, indexing="ij"), -1).reshape(-1, len(lo)), axis=1)
            outside = ~self.domain.contains(mesh)
            tot += float(np.sum(W * outside * self.lam.density_at(mesh)))
        for z, m in self.lam.atoms:
            if np.all((np.asarray(z) >= lo) & (np.asarray(z) < hi)):
                tot += m
        return tot

    def mass(self, lo, hi):
        return self.interior_mass(lo, hi) + self.exterior_mass(lo, hi)


def extend_star(domain, lam, interior_values):
    """interior_values = (grid_points, values, spacing) on a regular grid over D."""
    pts, vals, h = interior_values
    return StarMeasure(domain, lam, pts, vals, h)


# the operator L

def _sphere_rule(d, n_ang):
    if d == 2:
        t = 2 * np.pi * (np.arange(n_ang) + 0.5) / n_ang
        return np.column_stack([np.cos(t), np.sin(t)]), np.full(n_ang, 2 * np.pi / n_ang)
    if d == 3:
        ct, cw = roots_legendre(max(n_ang // 2, 2))
        ph = 2 * np.pi * (np.arange(n_ang) + 0.5) / n_ang
        st = np.sqrt(1 - ct ** 2)
        dirs = np.stack([np.outer(st, np.cos(ph)), np.outer(st, np.sin(ph)), np.outer(ct, np.ones(n_ang))], -1)
        return dirs.reshape(-1, 3), np.outer(cw, np.full(n_ang, 2 * np.pi / n_ang)).ravel()
    raise ValueError("angular rules implemented for d = 2, 3")


def _tanh_sinh(h=0.1, tmax=3.2):
    t = np.arange(-tmax, tmax + h / 2, h)
    s = 0.5 * np.pi * np.sinh(t)
    x = np.tanh(s)
    w = h * 0.5 * np.pi * np.cosh(t) / np.cosh(s) ** 2
    keep = np.abs(x) < 1
    return (x[keep] + 1) / 2, w[keep] / 2


_TS = _tanh_sinh()


@dataclass
class LValue:
    value: float
    inner: float
    outer: float
    tail: float
    tail_bound: float

    def __float__(self):
        return float(self.value)


def _ray_breaks(x, omega, spheres, lo, hi):
    out = []
    for c, R in spheres:
        v = x - np.asarray(c, dtype=float)
        b = float(omega @ v)
        disc = b * b - (float(v @ v) - R * R)
        if disc > 0:
            sq = np.sqrt(disc)
            out += [t for t in (-b - sq, -b + sq) if lo < t < hi]
    return out


def operator_L_apply(model, u, x, rho, interfaces=(), T=None, u_far=None, n_ang=None, n_inner=32,
                     return_parts=False):
    """Lu(x) = PV int (u(x+h) - u(x)) j(|h|) dh.

    Inside |h| < rho the symmetric second difference is integrated radially
    after t = rho v^{1/(2-a)}, which cancels the t^{1-a} behaviour for small
    index a. Outside, each ray is split at log-spaced radii and at crossings
    of the `interfaces` spheres (c, R) where u may have kinks; tanh-sinh on
    each piece absorbs endpoint singularities. Beyond T the tail
    (u_far - u(x)) * jump_tail(T) is added and |u| bounds are reported.
    """
    x = np.asarray(x, dtype=float)
    d = model.d
    if rho <= 0:
        raise ValueError("inner radius must be positive")
    n_ang = n_ang or (256 if d == 2 else 32)
    dirs, aw = _sphere_rule(d, n_ang)
    ux = float(u(x[None])[0])
    a = model.spec.small_scale_index
    p = 1.0 / (2.0 - a)
    v, vw = roots_legendre(n_inner)
    v, vw = (v + 1) / 2, vw / 2
    t = rho * v ** p
    dt = rho * p * v ** (p - 1)
    pts_p = x + t[:, None, None] * dirs[None]
    pts_m = x - t[:, None, None] * dirs[None]
    up = u(pts_p.reshape(-1, d)).reshape(len(t), -1)
    um = u(pts_m.reshape(-1, d)).reshape(len(t), -1)
    A = ((up - ux) + (um - ux)) / 2 @ aw
    inner = float(np.sum(vw * dt * t ** (d - 1) * model.j(t) * A))
    if T is None:
        ext = max([np.linalg.norm(np.asarray(c) - x) + R for c, R in interfaces] + [1.0])
        T = 1e3 * max(ext, rho)
    nlog = int(np.ceil(np.log2(T / rho)))
    base = list(rho * 2.0 ** np.arange(nlog)) + [T]
    sn, sw = _TS
    outer = 0.0
    for omega, w_om in zip(dirs, aw):
        knots = np.unique(np.array(base + _ray_breaks(x, omega, interfaces, rho, T)))
        lo, hi = knots[:-1], knots[1:]
        tt = (lo[:, None] + (hi - lo)[:, None] * sn[None]).ravel()
        ww = ((hi - lo)[:, None] * sw[None]).ravel()
        vals = u(x + tt[:, None] * omega[None]) - ux
        outer += w_om * float(np.sum(ww * vals * model.j(tt) * tt ** (d - 1)))
    if u_far is None:
        e = np.zeros(d)
        e[0] = 10 * T
        u_far = float(u((x + e)[None])[0])
    mass = model.jump_tail(T)
    tail = (u_far - ux) * mass
    if not np.isfinite(inner + outer):
        raise QuadratureNonConvergent("non-finite value in the L quadrature")
    res = LValue(inner + outer + tail, inner, outer, tail, (abs(u_far) + abs(ux)) * mass)
    return res if return_parts else res.value


# weak pairing with test bumps

@dataclass(frozen=True)
class Bump:
    """phi(x) = amp (1 - |x - c|^2 / a^2)^4 on |x - c| < a."""
    center: tuple
    radius: float
    amp: float = 1.0

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        s2 = np.sum((x - np.asarray(self.center)) ** 2, axis=-1) / self.radius ** 2
        return self.amp * np.where(s2 < 1, (1 - np.minimum(s2, 1)) ** 4, 0.0)

    def scaled(self, c):
        return Bump(self.center, self.radius, c * self.amp)

    @property
    def c2_norm(self):
        a = self.radius
        return abs(self.amp) * (1 + 8 * (6 / 7) ** 3 / np.sqrt(7) / a + 8 / a ** 2)

    def l1_norm(self, d):
        # int (1 - s^2)^4 s^{d-1} ds = B(d/2, 5) / 2
        from scipy.special import beta
        return abs(self.amp) * sphere_area(d) * self.radius ** d * beta(d / 2, 5) / 2


def _bump_L_profile(model, bump, n_near=48, far=1.6):
    """L phi as a function of s = |x - c|, tabulated on [0, far a] and by direct integral beyond."""
    d = model.d
    c = np.asarray(bump.center, dtype=float)
    a = bump.radius
    e = np.zeros(d)
    e[0] = 1.0
    s_near = np.linspace(0, far * a, n_near)
    near = np.array([operator_L_apply(model, bump, c + s * e, 0.25 * a, interfaces=[(c, a)], T=4 * a + s,
                                      u_far=0.0) for s in s_near])
    dirs, aw = _sphere_rule(d, 64 if d == 2 else 16)
    r, rw = roots_legendre(40)
    r, rw = a * (r + 1) / 2, a * rw / 2
    prof = bump.amp * (1 - (r / a) ** 2) ** 4

    def far_val(s):
        pts = r[:, None, None] * dirs[None] - s * e
        dist = np.linalg.norm(pts, axis=-1)
        return float(np.sum(rw[:, None] * (prof * r ** (d - 1))[:, None] * aw[None] * model.j(dist)))

    from scipy.interpolate import CubicSpline
    spline = CubicSpline(s_near, near)

    def L(s):
        s = np.asarray(s, dtype=float)
        out = np.empty_like(s)
        m = s <= far * a
        out[m] = spline(s[m])
        out[~m] = [far_val(v) for v in s[~m]]
        return out

    return L


def weak_L_pairing(model, u, lam, phi, domain, R_out=None, n_rad=160, n_ang=None, margin_samples=2000, seed=0):
    """int_D u L phi + int_{D^c} L phi d lambda for a test bump phi with support inside D.

    Polar quadrature about the bump centre. Beyond R_out the integrand is
    dropped; the reported bound uses |L phi(x)| <= ||phi||_1 j(|x-c| - a).
    """
    d = model.d
    c = np.asarray(phi.center, dtype=float)
    a = phi.radius
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((margin_samples, d))
    shell = c + a * g / np.linalg.norm(g, axis=1, keepdims=True) * rng.uniform(0, 1, (margin_samples, 1)) ** (1 / d)
    if not np.all(domain.contains(shell)) or domain.sdf(c[None])[0] <= a:
        raise SupportViolation("bump support must lie compactly inside the domain")
    Lp = _bump_L_profile(model, phi)
    R_out = R_out or 200 * a
    n_ang = n_ang or (128 if d == 2 else 24)
    dirs, aw = _sphere_rule(d, n_ang)
    knots = [0, a, 1.6 * a] + list(1.6 * a * 2.0 ** np.arange(1, int(np.log2(R_out / (1.6 * a))) + 1)) + [R_out]
    knots = np.unique(np.array(knots))
    sn, sw = _TS
    tot = 0.0
    for lo, hi in zip(knots[:-1], knots[1:]):
        s = lo + (hi - lo) * sn
        w = (hi - lo) * sw
        Ls = Lp(s)
        pts = c + s[:, None, None] * dirs[None]
        flat = pts.reshape(-1, d)
        inside = domain.contains(flat)
        vals = np.where(inside, u(flat), lam.density_at(flat)).reshape(len(s), -1)
        tot += float(np.sum(w * Ls * s ** (d - 1) * (vals @ aw)))
    for z, m in lam.atoms:
        tot += m * float(Lp(np.array([np.linalg.norm(np.asarray(z) - c)]))[0])
    return tot


def bump_integral(phi, f, d, n_rad=48, n_ang=None):
    """int f phi for a bump phi (polar Gauss rule on its support)."""
    c = np.asarray(phi.center, dtype=float)
    dirs, aw = _sphere_rule(d, n_ang or (64 if d == 2 else 16))
    r, rw = roots_legendre(n_rad)
    r, rw = phi.radius * (r + 1) / 2, phi.radius * rw / 2
    pts = c + r[:, None, None] * dirs[None]
    vals = (f(pts.reshape(-1, d)) * phi(pts.reshape(-1, d))).reshape(len(r), -1)
    return float(np.sum(rw * r ** (d - 1) * (vals @ aw)))
