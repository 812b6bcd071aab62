"""Deterministic kernels: jumping kernel, free Green function, ball closed forms.

Conventions: Brownian motion has generator Delta (covariance 2t), so the stable
subordinator phi(lam) = lam^{alpha/2} yields the isotropic alpha-stable process
with characteristic exponent |xi|^alpha.
"""
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate, interpolate, optimize
from scipy.special import betainc, gamma, gammaln, roots_legendre

from .bernstein import BernsteinSpec, check_transience
from .errors import CoincidentPoints, GeometryViolation, NotFound, QuadratureNonConvergent, RecurrentModel


def sphere_area(d):
    """Surface area of the unit sphere S^{d-1}."""
    return 2 * np.pi ** (d / 2) / gamma(d / 2)


def ball_volume(d, r=1.0):
    return np.pi ** (d / 2) / gamma(d / 2 + 1) * r ** d


# subordination integral

def _subordination_quad(spec, d, r, epsrel=1e-10):
    """j(r) = int (4 pi t)^{-d/2} e^{-r^2/4t} mu(t) dt with t = e^u.

    The log-integrand is unimodal in u, so the range is split at its peak and
    at fixed offsets on either side.
    """
    r2 = r * r

    def logf(u):
        t = np.exp(u)
        with np.errstate(over="ignore"):
            return -d / 2 * np.log(4 * np.pi * t) - r2 / (4 * t) + spec.log_levy_density(t) + u

    t_guess = r2 / (2 * d + 4)
    if spec.kind == "relativistic":
        t_guess = min(t_guess, r / (2 * np.sqrt(spec.theta)))
    u_guess = np.log(t_guess)
    peak = optimize.minimize_scalar(lambda u: -logf(u), bracket=(u_guess - 1, u_guess + 1), method="brent").x
    if not np.isfinite(peak):
        raise QuadratureNonConvergent(f"subordination integrand has no peak at r={r}")
    scale = logf(peak)
    f = lambda u: np.exp(logf(u) - scale)
    edges = peak + np.array([-12.0, -4.0, -1.0, 0.0, 1.0, 4.0, 12.0, 40.0, 120.0])
    total = 0.0
    err = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, e = integrate.quad(f, a, b, epsabs=1e-300, epsrel=epsrel, limit=200)
        total += val
        err += e
    if not np.isfinite(total) or err > 1e3 * epsrel * abs(total):
        raise QuadratureNonConvergent(f"subordination integral at r={r}: value {total}, error {err}")
    return total * np.exp(scale)


@lru_cache(maxsize=None)
def stable_jump_constant(d, alpha):
    """c(d, alpha) in j(r) = c r^{-d-alpha}, from one quadrature at r = 1."""
    from .bernstein import Stable
    return _subordination_quad(Stable(alpha), d, 1.0)


def subordination_integral(spec, d, r):
    return _subordination_quad(spec, d, float(r))


@dataclass(frozen=True)
class KernelTable:
    """Interpolated j on a log grid.

    The interpolant is a cubic spline of log j against log r. Below the grid j is
    continued by the small-scale power law, above it by direct quadrature.
    """
    radii: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    small_index: float = 1.0
    tail_rule: str = "power law below grid, direct quadrature above"
    max_rel_error: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "_spline", interpolate.CubicSpline(np.log(self.radii), np.log(self.values)))

    def __call__(self, r, spec=None, d=None):
        r = np.asarray(r, dtype=float)
        out = np.exp(self._spline(np.log(np.clip(r, self.radii[0], self.radii[-1]))))
        lo = r < self.radii[0]
        if np.any(lo):
            out = np.where(lo, self.values[0] * (r / self.radii[0]) ** (-(d or 0) - self.small_index), out)
        hi = r > self.radii[-1]
        if np.any(hi) and spec is not None:
            vals = np.array([_subordination_quad(spec, d, float(x)) for x in np.atleast_1d(r[hi])])
            out = np.array(out, copy=True)
            out[hi] = vals
        return out

    def to_csv(self, path):
        np.savetxt(path, np.column_stack([self.radii, self.values]), delimiter=",",
                   header="radius,value", comments="", fmt="%.17g")


def build_kernel_table(spec, d, r_min=1e-4, r_max=50.0, n=600, budget=1e-6, max_doublings=4):
    """Tabulate j and validate on held-out midpoints against direct quadrature."""
    for _ in range(max_doublings + 1):
        radii = np.geomspace(r_min, r_max, n)
        values = np.array([_subordination_quad(spec, d, r) for r in radii])
        tab = KernelTable(radii, values, small_index=spec.small_scale_index)
        mids = np.sqrt(radii[:-1] * radii[1:])[::2]
        direct = np.array([_subordination_quad(spec, d, r) for r in mids])
        err = float(np.max(np.abs(tab(mids) / direct - 1)))
        if err <= budget:
            object.__setattr__(tab, "max_rel_error", err)
            return tab
        n *= 2
    raise QuadratureNonConvergent(f"kernel table misses the {budget} budget (error {err})")


_TABLES = {}


@dataclass(frozen=True)
class ProcessModel:
    """Subordinate Brownian motion in R^d. Refuses recurrent models."""
    d: int
    spec: BernsteinSpec
    transient: bool = field(default=True, init=False)

    def __post_init__(self):
        if self.d < 2:
            from .errors import DimensionTooSmall
            raise DimensionTooSmall(f"d must be at least 2, got {self.d}")
        if not check_transience(self.spec, self.d):
            raise RecurrentModel(f"{self.spec.kind} in d={self.d} is recurrent")

    @property
    def is_stable(self):
        return self.spec.is_stable

    @property
    def alpha(self):
        return self.spec.stable_alpha

    def table(self):
        key = (self.d, self.spec)
        if key not in _TABLES:
            _TABLES[key] = build_kernel_table(self.spec, self.d)
        return _TABLES[key]

    def j(self, r):
        r = np.asarray(r, dtype=float)
        if self.spec.kind in ("stable", "stable_sum"):
            out = np.zeros_like(r)
            for w, a in self.spec.terms:
                out = out + w * stable_jump_constant(self.d, a) * r ** (-self.d - a)
            return out
        return self.table()(r, self.spec, self.d)

    def jump_tail(self, T):
        """Levy measure of {|h| > T}."""
        if self.spec.kind in ("stable", "stable_sum"):
            return sum(w * sphere_area(self.d) * stable_jump_constant(self.d, a) * T ** (-a) / a
                       for w, a in self.spec.terms)
        f = lambda u: np.exp(self.d * u) * float(self.j(np.exp(u)))
        lo = np.log(T)
        hi = lo + np.log(60.0 / np.sqrt(self.spec.theta) / T + 2.0) + 2.0
        return sphere_area(self.d) * integrate.quad(f, lo, hi, epsrel=1e-10, limit=200)[0]

    def describe(self):
        out = dict(self.spec.describe())
        out["d"] = self.d
        return out


def jumping_kernel(model, r):
    if np.any(np.asarray(r) <= 0):
        raise ValueError("j is evaluated at r > 0")
    return model.j(r)


def kernel_ratio_audit(model, r0, delta_grid, r_max=20.0, n_r=400):
    """Table delta -> sup over r in (r0, r_max] of j(r)/j(r + delta)."""
    if not 0 < r0 < 1:
        raise ValueError("r0 must lie in (0, 1)")
    deltas = np.asarray(delta_grid, dtype=float)
    if np.any((deltas <= 0) | (deltas >= 1)):
        raise ValueError("delta grid must lie in (0, 1)")
    r = np.geomspace(r0, r_max, n_r)
    jr = model.j(r)
    return {float(dl): float(np.max(jr / model.j(r + dl))) for dl in deltas}


@dataclass
class ComparabilityResult:
    p: float
    direction: str
    certificate: list = field(repr=False)
    worst_ratio: float = 1.0


def _comparability_holds(model, R, eps, near, far, direction, n_ang=33):
    """Check (1+eps)^-1 j(ref) <= j(|y - z|) <= (1+eps) j(ref) on a sampled grid.

    near/far are radius arrays for the small and large point; the reference is
    the large point, since j is radial only |y|, |z| and the angle matter.
    """
    ang = np.linspace(0.0, np.pi, n_ang)
    a, b, t = np.meshgrid(near, far, ang, indexing="ij")
    dist = np.sqrt(np.maximum(a * a + b * b - 2 * a * b * np.cos(t), 1e-300))
    ratio = model.j(dist) / model.j(b)
    lo, hi = float(np.min(ratio)), float(np.max(ratio))
    ok = lo >= 1 / (1 + eps) and hi <= 1 + eps
    worst = max(hi, 1 / lo)
    return ok, worst, (near, far, ang)


def comparability_radius(model, R, eps, q, direction="inner", far_factor=1e3, n_rad=40, tol=1e-4, p_max=1e3):
    """Binary search for p in the comparability lemma (inner) or assumption E (outer).

    For tabulated kernels the far radii are capped at the table range.
    """
    r_cap = np.inf if model.spec.kind in ("stable", "stable_sum") else model.table().radii[-1]
    if direction == "inner":
        if not 0 < q <= 1:
            raise ValueError("inner comparability needs q in (0, 1]")
        far = np.geomspace(q * R, max(min(far_factor * R, r_cap), q * R), n_rad)

        def test(p):
            near = np.linspace(0.0, p * R, 9)
            return _comparability_holds(model, R, eps, near, far, direction)

        lo, hi = 0.0, q
        if not test(tol * q)[0]:
            raise NotFound("no inner comparability radius found")
        lo = tol * q
        while hi - lo > tol * q:
            mid = 0.5 * (lo + hi)
            if test(mid)[0]:
                lo = mid
            else:
                hi = mid
        p = lo
    elif direction == "outer":
        if not q > 1 or R < 1:
            raise ValueError("outer comparability needs q > 1 and R >= 1")
        near = np.linspace(0.0, q * R, 9)

        def test(p):
            if p * R >= r_cap:
                return False, np.inf, (near, np.array([p * R]), np.zeros(1))
            far = np.geomspace(p * R, min(far_factor * p * R, r_cap), n_rad)
            ok, worst, grid = _comparability_holds(model, R, eps, near, far, direction)
            return ok, worst, (grid[1], grid[0], grid[2])

        if not test(p_max)[0]:
            raise NotFound("assumption E not certified: no outer radius in the search range")
        lo, hi = q, p_max
        while hi - lo > tol * q:
            mid = 0.5 * (lo + hi)
            if test(mid)[0]:
                hi = mid
            else:
                lo = mid
        p = hi
    else:
        raise ValueError(f"direction must be inner or outer, got {direction!r}")
    ok, worst, grid = test(p)
    cert = [{"z_radii": grid[0].tolist(), "y_radii": grid[1].tolist(), "angles": grid[2].tolist()}]
    return ComparabilityResult(float(p), direction, cert, float(worst))


@dataclass(frozen=True)
class GreenValue:
    value: float
    profile_only: bool


def riesz_constant(d, alpha):
    """G(x) = A |x|^{alpha - d} for the alpha-stable process in R^d, d > alpha."""
    return gamma((d - alpha) / 2) / (2 ** alpha * np.pi ** (d / 2) * gamma(alpha / 2))


def free_green(model, r):
    r = np.asarray(r, dtype=float)
    if model.is_stable:
        a = model.alpha
        return GreenValue(riesz_constant(model.d, a) * r ** (a - model.d), False)
    return GreenValue(1.0 / (r ** model.d * model.spec.phi(r ** -2.0)), True)


# closed forms for the isotropic alpha-stable process on balls

def poisson_constant(d, alpha):
    return gamma(d / 2) * np.pi ** (-d / 2 - 1) * np.sin(np.pi * alpha / 2)


def exit_time_constant(d, alpha):
    return np.exp(gammaln(d / 2) - alpha * np.log(2) - gammaln(1 + alpha / 2) - gammaln((d + alpha) / 2))


def _norm(v):
    return np.sqrt(np.sum(np.square(v), axis=-1))


def ball_poisson(alpha, d, r, x, y, center=None, check=True):
    """Poisson kernel of B(center, r) for the alpha-stable process."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if center is not None:
        x = x - center
        y = y - center
    x2 = np.sum(x * x, axis=-1)
    y2 = np.sum(y * y, axis=-1)
    if check and (np.any(x2 >= r * r) or np.any(y2 <= r * r)):
        raise GeometryViolation("ball_poisson needs |x| < r < |y|")
    dist = _norm(x - y)
    return poisson_constant(d, alpha) * ((r * r - x2) / (y2 - r * r)) ** (alpha / 2) * dist ** (-d)


def ball_green(alpha, d, r, x, y, center=None):
    """Green function of B(center, r); zero when either point is outside."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if center is not None:
        x = x - center
        y = y - center
    x2 = np.sum(x * x, axis=-1)
    y2 = np.sum(y * y, axis=-1)
    dist = _norm(x - y)
    if np.any(dist == 0):
        raise CoincidentPoints("ball_green is singular on the diagonal")
    inside = (x2 < r * r) & (y2 < r * r)
    w = np.where(inside, (r * r - x2) * (r * r - y2), 0.0)
    # int_0^z s^{a-1}(1+s)^{-d/2} ds = B(a, b) I_{z/(1+z)}(a, b), z/(1+z) = w/(w + r^2 dist^2)
    q = w / (w + r * r * dist * dist)
    a, b = alpha / 2, (d - alpha) / 2
    val = riesz_constant(d, alpha) * dist ** (alpha - d) * betainc(a, b, q)
    return np.where(inside, val, 0.0)


def _graded_nodes(a, b, n, toward):
    """Gauss nodes on [a, b] per row: log spacing, or quintic grading toward both ends."""
    x, w = roots_legendre(n)
    v, w = (x + 1) / 2, w / 2
    a, b = a[:, None], b[:, None]
    if toward == "log":
        L = np.log(b / a)
        t = a * np.exp(L * v)
        return t, w * t * L
    return a + (b - a) * _smooth(v), w * _dsmooth(v) * (b - a)


def _smooth(v):
    return v ** 3 * (10 - 15 * v + 6 * v * v)


def _dsmooth(v):
    return 30 * v * v * (1 - v) ** 2


def ball_jump_cut(alpha, d, r, dz, eps, n=24):
    """int over B(y, r) minus B(z, eps) of G_B(y, w) |w - z|^{-d-alpha} dw, where dz = |y - z| >= r.

    Times the jump constant this is the ball Poisson kernel with B(z, eps) cut
    out. G_B(y, .) is radial about y and blows up like |w - y|^{alpha-d}, so a
    small ball B(y, delta) clear of the cut is integrated in polar coordinates
    about y. The rest is integrated in polar coordinates about z: rho = |w - z|
    over pieces split where the caps of S(z, rho) change shape, with nodes
    graded toward both ends of every piece and of every cap.
    """
    r, dz, eps = np.broadcast_arrays(*(np.atleast_1d(np.asarray(v, dtype=float)) for v in (r, dz, eps)))
    r, dz, eps = r.ravel(), dz.ravel(), eps.ravel()
    a2, b2 = alpha / 2, (d - alpha) / 2
    kap = riesz_constant(d, alpha)
    xu, wu = roots_legendre(n)
    u, wu = (xu + 1) / 2, wu / 2
    out = np.zeros(r.shape)

    lo = np.maximum(eps, dz - r)
    hi = dz + r
    dead = hi <= lo
    touching = ~dead & (lo <= 0)                 # z on the sphere and nothing cut: divergent
    out[touching] = np.inf
    live = ~dead & ~touching
    if not live.any():
        return out
    R, D, L, H = r[live], dz[live], lo[live], hi[live]
    delta = np.where(D > eps[live], 0.5 * np.minimum(R, D - eps[live]), 0.0)

    def green(s2, Rb):
        q = np.clip(1 - s2 / Rb ** 2, 0.0, 1.0)
        return kap * s2 ** ((alpha - d) / 2) * betainc(a2, b2, q)

    def cap_angle(rho, Db, rad):
        return np.arccos(np.clip((rho ** 2 + Db ** 2 - rad ** 2) / (2 * rho * Db), -1.0, 1.0))

    def piece(a, b, toward):
        res = np.zeros(a.shape)
        keep = b > a
        if keep.any():
            res[keep] = _piece(a[keep], b[keep], R[keep], D[keep], delta[keep], toward)
        return res

    def _piece(a, b, R, D, delta, toward):
        rho, wr = _graded_nodes(a, b, n, toward)
        Rb, Db, db = R[:, None], D[:, None], delta[:, None]
        if d == 1:
            t = np.abs(rho - Db)
            cap = np.where((t < Rb) & (t > db), green(np.maximum(t, 1e-300) ** 2, Rb), 0.0)
        else:
            p0 = cap_angle(rho, Db, db)[..., None]
            p1 = cap_angle(rho, Db, Rb)[..., None]
            p1 = np.maximum(p1, p0)
            phi = p0 + (p1 - p0) * _smooth(u)
            dphi = (p1 - p0) * _dsmooth(u) * wu
            s2 = rho[..., None] ** 2 + Db[..., None] ** 2 - 2 * rho[..., None] * Db[..., None] * np.cos(phi)
            s2 = np.maximum(s2, np.maximum(db, 1e-12 * Rb)[..., None] ** 2)
            cap = sphere_area(d - 1) * np.sum(green(s2, Rb[..., None]) * np.sin(phi) ** (d - 2) * dphi, axis=-1)
        return np.sum(wr * rho ** (-1 - alpha) * cap, axis=-1)

    A = np.clip(D - delta, L, H)
    B = np.clip(D + delta, L, H)
    C = np.clip(D, L, H)
    m = np.where(L < 0.5 * A, np.sqrt(L * A), L)
    val = piece(L, m, "log") + piece(m, A, "ends") + piece(A, C, "ends") + piece(C, B, "ends") + piece(B, H, "ends")

    # B(y, delta): s = delta t^{1/alpha} turns s^{alpha-1} ds into delta^alpha / alpha dt
    inner = delta > 0
    if inner.any():
        dl, Db, Rb = delta[inner][:, None], D[inner][:, None], R[inner][:, None]
        t, wt = (xu + 1) / 2, wu
        sr = dl * t ** (1 / alpha)
        radial = kap * betainc(a2, b2, np.clip(1 - sr ** 2 / Rb ** 2, 0.0, 1.0)) * dl ** alpha / alpha * wt
        if d == 1:
            ang = sum((Db - sgn * sr) ** (-1 - alpha) for sgn in (1.0, -1.0))
        else:
            ct, cw = roots_legendre(n)
            th = np.arccos(ct)                   # polar angle from the direction y -> z
            if d == 2:
                th = np.pi * (ct + 1) / 2
                wth = cw * np.pi / 2
            else:
                wth = cw * np.sin(th) ** (d - 3)
            dist2 = Db[..., None] ** 2 + sr[..., None] ** 2 - 2 * Db[..., None] * sr[..., None] * np.cos(th)
            ang = sphere_area(d - 1) * np.sum(wth * dist2 ** (-(d + alpha) / 2), axis=-1)
        val[inner] += np.sum(radial * ang, axis=-1)
    out[live] = val
    return out


def ball_green_kappa(d, alpha):
    """kappa with G = kappa |x-y|^{alpha-d} int_0^z s^{alpha/2-1}(1+s)^{-d/2} ds."""
    a, b = alpha / 2, (d - alpha) / 2
    return riesz_constant(d, alpha) * gamma(a + b) / (gamma(a) * gamma(b))


def ball_expected_exit(alpha, d, r, x, center=None):
    x = np.asarray(x, dtype=float)
    if center is not None:
        x = x - center
    x2 = np.sum(x * x, axis=-1)
    return exit_time_constant(d, alpha) * np.maximum(r * r - x2, 0.0) ** (alpha / 2)


def ball_exit_radial_cdf(alpha, rho):
    """P(|X_tau| <= rho r) for the walk started at the centre of B(0, r).

    r^2/|X_tau|^2 is Beta(alpha/2, 1 - alpha/2) in every dimension.
    """
    rho = np.asarray(rho, dtype=float)
    return np.where(rho <= 1, 0.0, 1.0 - betainc(alpha / 2, 1 - alpha / 2, 1.0 / np.maximum(rho, 1.0) ** 2))


def ball_martin_kernel(alpha, d, r, x, z, x0=None):
    """Martin kernel of B(0, r) at boundary point z, normalised at x0 (default 0)."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    x0 = np.zeros(z.shape[-1]) if x0 is None else np.asarray(x0, dtype=float)
    num = np.maximum(r * r - np.sum(x * x, axis=-1), 0.0) ** (alpha / 2) * _norm(x0 - z) ** d
    den = (r * r - np.sum(x0 * x0, axis=-1)) ** (alpha / 2) * _norm(x - z) ** d
    return num / den
