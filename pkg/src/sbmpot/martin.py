"""Martin boundary numerics: accessibility, Martin kernels and the boundary trace.

Green-function ratios are taken in closed form on balls and by paired Monte
Carlo (walks started at the approach point, by symmetry of G_D) elsewhere.
Only the alpha-stable kind is supported, since both routes need the free
Riesz kernel and exact ball exit laws.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.special import roots_legendre

from .errors import (GeometryViolation, InaccessibleSupport, InvalidBoundaryPoint, NonConvergentRatio,
                     UnsupportedModel)
from .geometry import Ball, _gradient, boundary_sample, default_exhaustion
from .kernels import ball_green, ball_martin_kernel, ball_poisson, riesz_constant
from .potential import Estimate, _TS, exact
from .simulate import Constant, JumpTo, as_stream, ball_green_rule, exit_sample_wos

INFINITY = "inf"


def _is_inf(z):
    return isinstance(z, str) and z == INFINITY


def _require_stable(model):
    if not model.is_stable:
        raise UnsupportedModel("Martin numerics are implemented for the stable kind only")


@dataclass
class BoundaryMeasure:
    """Atoms (point or INFINITY, mass) plus an optional binned part (representatives, masses)."""
    atoms: list = field(default_factory=list)
    binned: tuple = None

    @property
    def total_mass(self):
        tot = sum(m for _, m in self.atoms)
        if self.binned is not None:
            tot += float(np.sum(self.binned[1]))
        return tot

    def validate(self, domain, tol=1e-6):
        scale = max(domain.bounding_radius if domain.bounded else domain.complement_radius, 1.0)
        for z, m in self.atoms:
            if m < 0:
                raise GeometryViolation("boundary masses must be non-negative")
            if _is_inf(z):
                if domain.bounded:
                    raise InvalidBoundaryPoint("the point at infinity is not a boundary point of a bounded domain")
            elif abs(float(domain.sdf(np.asarray(z, dtype=float)[None])[0])) > tol * scale:
                raise InvalidBoundaryPoint(f"{z} is not on the boundary")
        return self


@dataclass
class AccessibilityVerdict:
    point: object
    verdict: str
    evidence: dict


@dataclass
class TraceEstimate:
    stages: list
    interior_mass_trend: list
    total_mass_trend: list
    limit: BoundaryMeasure
    converged: bool
    bins: object = None


# accessibility

def _check_boundary_point(domain, z, tol=1e-6):
    scale = max(domain.bounding_radius if domain.bounded else domain.complement_radius, 1.0)
    if abs(float(domain.sdf(z[None])[0])) > tol * scale:
        raise InvalidBoundaryPoint(f"{z.tolist()} is not on the boundary")


def _angle_pieces(lo, hi, centre, width, n=12):
    """Gauss pieces on [lo, hi] refined geometrically around `centre`."""
    br = [lo, hi]
    for k in range(10):
        for sgn in (-1, 1):
            v = centre + sgn * width * 4.0 ** k
            if lo < v < hi:
                br.append(v)
    br = np.unique(br)
    g, w = roots_legendre(n)
    nodes = (br[:-1, None] + (br[1:] - br[:-1])[:, None] * (g[None] + 1) / 2).ravel()
    wts = ((br[1:] - br[:-1])[:, None] * w[None] / 2).ravel()
    return nodes, wts


def _ball_truncated_integrals(model, ball, z, x0, eps, n_ang=48):
    """I_eps = int_{B minus B(z, eps)} G_B(x0, w) j(|w - z|) dw by polar quadrature about z.

    Rays leave z at angle phi to the inward normal and stay in the ball while
    t < 2R cos(phi). Pieces in t and phi are refined around the pole at x0.
    """
    d, a = model.d, model.alpha
    c, R = ball.center, ball.radius
    n = (c - z) / R
    basis = np.linalg.svd(n[None])[2][1:]
    v0 = x0 - z
    t0 = np.linalg.norm(v0)
    phi0 = np.arccos(np.clip(v0 @ n / t0, -1, 1)) if t0 > 0 else 0.0
    if d == 2 and t0 > 0 and v0 @ basis[0] < 0:
        phi0 = -phi0
    sn, sw = _TS
    edges = np.unique(np.concatenate([np.sort(eps), [2 * R], [t0] if eps.min() < t0 < 2 * R else []]))
    pieces = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        s, sw_ = np.log(lo) + (np.log(hi) - np.log(lo)) * sn, (np.log(hi) - np.log(lo)) * sw
        t = np.exp(s)
        tot = np.zeros_like(t)
        for k, tk in enumerate(t):
            phimax = np.arccos(min(tk / (2 * R), 1.0))
            width = max(abs(tk - t0) / tk, 1e-9)
            if d == 2:
                ph, w = _angle_pieces(-phimax, phimax, phi0, width)
                dirs = np.cos(ph)[:, None] * n + np.sin(ph)[:, None] * basis[0]
            else:
                ph3, pw3 = _angle_pieces(0.0, phimax, abs(phi0), width)
                ps = 2 * np.pi * (np.arange(n_ang) + 0.5) / n_ang
                dirs = (np.cos(ph3)[:, None, None] * n + np.sin(ph3)[:, None, None] *
                        (np.cos(ps)[None, :, None] * basis[0] + np.sin(ps)[None, :, None] * basis[1])).reshape(-1, d)
                w = (pw3 * np.sin(ph3))[:, None].repeat(n_ang, 1).ravel() * (2 * np.pi / n_ang)
            pts = z + tk * dirs
            g = ball_green(a, d, R, np.broadcast_to(x0, pts.shape), pts, center=c)
            tot[k] = np.sum(w * g)
        pieces.append(float(np.sum(sw_ * t * tot * model.j(t) * t ** (d - 1))))
    cum = np.cumsum(pieces[::-1])[::-1]
    return np.array([cum[np.searchsorted(edges, e)] for e in eps])


def _fit_growth(eps, vals):
    le, lv = np.log(eps), np.log(np.maximum(vals, 1e-300))
    A = np.column_stack([le, np.ones_like(le)])
    coef, res, *_ = np.linalg.lstsq(A, lv, rcond=None)
    pred = A @ coef
    ss = np.sum((lv - lv.mean()) ** 2)
    r2 = 1 - np.sum((lv - pred) ** 2) / ss if ss > 0 else 1.0
    return float(coef[0]), float(r2)


def classify_accessible(model, domain, z, x0=None, schedule=None, n_paths=20000, rng=0, esc_radius=None):
    """Accessible / inaccessible / inconclusive verdict for a boundary point or INFINITY."""
    _require_stable(model)
    x0 = domain.deep_point() if x0 is None else np.asarray(x0, dtype=float)
    if not domain.contains(x0[None])[0]:
        raise GeometryViolation("x0 must lie in the domain")
    stream = as_stream(rng)
    if _is_inf(z):
        return _classify_infinity(model, domain, x0, schedule, n_paths, stream, esc_radius)
    z = np.asarray(z, dtype=float)
    _check_boundary_point(domain, z)
    scale = domain.bounding_radius if domain.bounded else max(domain.complement_radius, 1.0)
    eps = np.asarray(schedule if schedule is not None else 0.5 * scale * 2.0 ** -np.arange(10), dtype=float)
    if domain.is_ball:
        vals = _ball_truncated_integrals(model, domain.tree, z, x0, eps)
        se = np.zeros_like(vals)
        how = "quadrature"
    else:
        funcs = [JumpTo(model, z, e, name=f"eps{k}") for k, e in enumerate(eps)]
        b = exit_sample_wos(model.alpha, domain, x0, stream, funcs, n_paths=n_paths, esc_radius=esc_radius)
        acc = np.column_stack([b.accumulators[f.name] for f in funcs])
        vals = acc.mean(axis=0)
        se = acc.std(axis=0, ddof=1) / np.sqrt(n_paths)
        how = "wos_accumulator"
    slope, r2 = _fit_growth(eps, vals)
    order = np.argsort(-eps)
    incr = np.diff(vals[order])
    ev = {"eps": eps.tolist(), "partial_integrals": vals.tolist(), "std_errors": se.tolist(), "slope": slope,
          "r2": r2, "method": how}
    if slope < -0.1 and r2 > 0.9 and np.all(incr > -4 * np.hypot(se[order][1:], se[order][:-1])):
        verdict = "accessible"
    elif len(incr) >= 3 and abs(incr[-1]) < 1e-3 * abs(vals[order][-1]) and abs(incr[-1]) <= abs(incr[-3]):
        verdict = "inaccessible"
    else:
        verdict = "inconclusive"
    return AccessibilityVerdict(z.tolist(), verdict, ev)


def _classify_infinity(model, domain, x0, schedule, n_paths, stream, esc_radius):
    if domain.bounded:
        raise InvalidBoundaryPoint("the point at infinity is not a boundary point of a bounded domain")
    R0 = 100.0 * max(domain.complement_radius, 1.0) if esc_radius is None else esc_radius
    b = exit_sample_wos(model.alpha, domain, x0, stream.substream(0), n_paths=n_paths, esc_radius=R0)
    p = float(np.mean(b.escaped))
    se = float(np.sqrt(max(p * (1 - p), 1.0 / n_paths) / n_paths))
    ev = {"escape_radius": R0, "escape_probability": p, "std_error": se}
    # sensitivity to the escape radius: rerun a quarter of the paths at 10 R0
    n2 = max(n_paths // 4, 100)
    b2 = exit_sample_wos(model.alpha, domain, x0, stream.substream(2), n_paths=n2, esc_radius=10 * R0)
    p2 = float(np.mean(b2.escaped))
    ev["escape_sensitivity"] = {"escape_radius": 10 * R0, "escape_probability": p2,
                                "std_error": float(np.sqrt(max(p2 * (1 - p2), 1.0 / n2) / n2))}
    if p - 4 * se > 0:
        return AccessibilityVerdict(INFINITY, "accessible", ev)
    # bounded E tau along truncations D cap B(0, R_k) means infinity is not reached
    radii = np.asarray(schedule if schedule is not None else
                       max(domain.complement_radius, 1.0) * 4.0 * 2.0 ** np.arange(5), dtype=float)
    means, ses = [], []
    for k, Rk in enumerate(radii):
        from .geometry import Domain, Inter
        trunc = Domain(Inter((domain.tree, Ball(np.zeros(domain.d), float(Rk)))))
        bt = exit_sample_wos(model.alpha, trunc, x0, stream.substream(1, k), [Constant()], n_paths=n_paths)
        v = bt.accumulators["one"]
        means.append(float(v.mean()))
        ses.append(float(v.std(ddof=1) / np.sqrt(n_paths)))
    ev.update({"truncation_radii": radii.tolist(), "expected_exit": means, "std_errors": ses})
    incr = np.abs(np.diff(means))
    comb = np.hypot(ses[1:], ses[:-1])
    if incr[-1] < 4 * comb[-1] and incr[-1] <= incr[0] + 4 * comb[0]:
        return AccessibilityVerdict(INFINITY, "inaccessible", ev)
    slope, r2 = _fit_growth(1 / radii, np.array(means))
    ev.update({"slope": slope, "r2": r2})
    if slope < -0.1 and r2 > 0.9:
        return AccessibilityVerdict(INFINITY, "accessible", ev)
    return AccessibilityVerdict(INFINITY, "inconclusive", ev)


# Martin kernel

def inward_normal(domain, z):
    if domain.is_ball:
        n = domain.tree.center - z
    else:
        n = _gradient(domain, z[None], h=1e-7)[0]
    return n / np.linalg.norm(n)


def _richardson(h, vals, se=None):
    """Extrapolate vals(h) to h = 0 using the order seen at the three finest levels."""
    v = np.asarray(vals, dtype=float)
    se = np.zeros_like(v) if se is None else np.asarray(se, dtype=float)
    d1, d2 = v[-2] - v[-3], v[-1] - v[-2]
    ratio = h[-2] / h[-1]
    tol = 4 * np.hypot(se[-1], se[-2]) + 1e-12 * abs(v[-1])
    if abs(d2) <= tol:
        return v[-1], se[-1], None
    if d1 * d2 <= 0:
        raise NonConvergentRatio(f"ratios oscillate at the finest levels: {v[-3:].tolist()}")
    p = np.log(abs(d1 / d2)) / np.log(ratio)
    if not p > 0:
        raise NonConvergentRatio(f"ratios do not settle: {v[-3:].tolist()}")
    a = 1.0 / (ratio ** p - 1)
    return v[-1] + a * d2, np.hypot((1 + a) * se[-1], a * se[-2]), float(p)


def _riesz(model, r):
    return riesz_constant(model.d, model.alpha) * r ** (model.alpha - model.d)


def martin_kernel(model, domain, x, z, x0=None, approach=None, n_paths=40000, rng=0, return_levels=False):
    """M_D(x, z) = lim G_D(x, v)/G_D(x0, v) as v -> z.

    On balls the Green function is closed form. Elsewhere, by symmetry,
    G_D(x, v) = E_v[G(v - x) - G(X_tau - x)] with G the free Riesz kernel, so
    numerator and denominator come from the same walks started at v.
    """
    _require_stable(model)
    x = np.asarray(x, dtype=float)
    x0 = domain.deep_point() if x0 is None else np.asarray(x0, dtype=float)
    if not domain.contains(np.vstack([x, x0])).all():
        raise GeometryViolation("x and x0 must lie in the domain")
    if np.allclose(x, x0):
        return exact(1.0)
    stream = as_stream(rng)
    if _is_inf(z):
        if domain.bounded:
            raise InvalidBoundaryPoint("the point at infinity is not a boundary point of a bounded domain")
        e = np.zeros(domain.d)
        e[0] = 1.0
        radii = np.asarray(approach if approach is not None else
                           max(domain.complement_radius, 1.0) * 4.0 * 2.0 ** np.arange(4))
        pts = [R * e for R in radii]
        h = 1.0 / radii
    else:
        z = np.asarray(z, dtype=float)
        _check_boundary_point(domain, z)
        n = inward_normal(domain, z)
        scale = domain.bounding_radius if domain.bounded else max(domain.complement_radius, 1.0)
        h = np.asarray(approach if approach is not None else 0.05 * scale * 2.0 ** -np.arange(4), dtype=float)
        pts = [z + hk * n for hk in h]
        for v in pts:
            if not domain.contains(v[None])[0]:
                raise GeometryViolation("approach point left the domain; shrink the schedule")
    vals, ses = [], []
    method = "quadrature"
    if domain.is_ball and not _is_inf(z):
        c, R = domain.tree.center, domain.tree.radius
        for v in pts:
            vals.append(float(ball_green(model.alpha, model.d, R, x, v, c) / ball_green(model.alpha, model.d, R, x0, v, c)))
            ses.append(0.0)
    else:
        method = "mc_wos"
        for k, v in enumerate(pts):
            b = exit_sample_wos(model.alpha, domain, v, stream.substream(k), n_paths=n_paths)
            Y = b.exit_position
            out = ~b.escaped
            ga = _riesz(model, np.linalg.norm(v - x)) - np.where(out, _riesz(model, np.linalg.norm(Y - x, axis=1)), 0)
            gb = _riesz(model, np.linalg.norm(v - x0)) - np.where(out, _riesz(model, np.linalg.norm(Y - x0, axis=1)), 0)
            ma, mb = ga.mean(), gb.mean()
            r = ma / mb
            cov = np.cov(ga, gb)
            var = (cov[0, 0] - 2 * r * cov[0, 1] + r * r * cov[1, 1]) / (mb * mb * n_paths)
            vals.append(float(r))
            ses.append(float(np.sqrt(max(var, 0.0))))
    val, se, p = _richardson(np.asarray(h), vals, ses)
    flags = []
    if domain.is_ball and not _is_inf(z):
        ref = float(ball_martin_kernel(model.alpha, model.d, domain.tree.radius, x - domain.tree.center,
                                       z - domain.tree.center, x0 - domain.tree.center))
        if abs(val - ref) > 1e-2 * abs(ref):
            flags.append("closed_form_mismatch")
    est = Estimate(float(val), 0.0 if method == "quadrature" else float(se), 0 if method == "quadrature" else n_paths,
                   method, tuple(flags))
    if return_levels:
        return est, {"h": np.asarray(h).tolist(), "ratios": vals, "std_errors": ses, "order": p}
    return est


def martin_integral(model, domain, mu, x, x0=None, waiver=False, verdicts=None, **kw):
    """M_D mu(x) = sum of masses times M_D(x, z) over atoms and bin representatives."""
    mu.validate(domain)
    pts = list(mu.atoms)
    if mu.binned is not None:
        pts += [(tuple(p), float(m)) for p, m in zip(*mu.binned)]
    pts = [(z, m) for z, m in pts if m > 0]
    if not pts:
        return exact(0.0)
    x0 = domain.deep_point() if x0 is None else np.asarray(x0, dtype=float)
    verdicts = {} if verdicts is None else verdicts
    parts = []
    for k, (z, m) in enumerate(pts):
        key = z if _is_inf(z) else tuple(np.round(np.asarray(z, dtype=float), 12))
        if not waiver:
            if key not in verdicts:
                verdicts[key] = classify_accessible(model, domain, z if _is_inf(z) else np.asarray(z), x0,
                                                    n_paths=kw.get("n_paths", 20000)).verdict
            if verdicts[key] == "inaccessible":
                raise InaccessibleSupport(f"boundary point {z} is inaccessible")
        zz = z if _is_inf(z) else np.asarray(z, dtype=float)
        parts.append((m, martin_kernel(model, domain, x, zz, x0, rng=as_stream(kw.get("rng", 0)).substream(k),
                                       **{a: b for a, b in kw.items() if a != "rng"})))
    val = sum(m * e.value for m, e in parts)
    se = float(np.sqrt(sum((m * e.std_error) ** 2 for m, e in parts)))
    methods = {e.method for _, e in parts}
    method = methods.pop() if len(methods) == 1 else "hybrid"
    if method == "quadrature" and se > 0:
        method = "hybrid"
    return Estimate(float(val), se, max(e.n for _, e in parts), method)


# boundary trace

class BoundaryBins:
    """Equal-count partition of the boundary by direction seen from a reference point."""

    def __init__(self, domain, n_bins, ref, n_samples=4000, seed=0):
        self.ref = np.asarray(ref, dtype=float)
        self.d = domain.d
        rng = np.random.default_rng(seed)
        pts = boundary_sample(domain, n_samples, rng)
        u = pts - self.ref
        if self.d == 2:
            ang = np.sort(np.arctan2(u[:, 1], u[:, 0]))
            self.edges = np.quantile(ang, np.linspace(0, 1, n_bins + 1)[1:-1])
            self.centroids = None
        else:
            u = u / np.linalg.norm(u, axis=1, keepdims=True)
            cent, _ = kmeans2(u, n_bins, seed=seed, minit="++")
            self.centroids = cent / np.linalg.norm(cent, axis=1, keepdims=True)
            self.edges = None
        lab = self.assign(pts)
        self.representatives = np.array([pts[lab == k].mean(axis=0) if np.any(lab == k) else self.ref
                                         for k in range(n_bins)])
        self.n_bins = n_bins

    def assign(self, y):
        u = np.atleast_2d(y) - self.ref
        if self.d == 2:
            return np.searchsorted(self.edges, np.arctan2(u[:, 1], u[:, 0]))
        u = u / np.maximum(np.linalg.norm(u, axis=1, keepdims=True), 1e-300)
        return np.argmax(u @ self.centroids.T, axis=1)


def _interior_fraction(alpha, d, centers, radii, Y, inner, rule):
    """P(pre-exit position lies in `inner` | last ball and landing point).

    The pre-exit position has density G_B(c, w) j(|w - Y|) / P_B(c, Y) on the
    last ball B(c, r); balls fully inside or outside `inner` give 1 or 0, and
    straddling balls use the ball Green rule.
    """
    s = inner.sdf(centers)
    frac = np.where(s >= radii, 1.0, 0.0)
    mixed = np.flatnonzero((s < radii) & (s > -radii))
    if mixed.size:
        nodes, weights = rule
        from .kernels import stable_jump_constant
        cj = stable_jump_constant(d, alpha)
        for i in mixed:
            w = centers[i] + radii[i] * nodes
            dist = np.linalg.norm(w - Y[i], axis=1)
            jw = cj * dist ** (-d - alpha)
            ins = inner.contains(w)
            tot = np.sum(weights * jw)
            frac[i] = np.sum(weights * jw * ins) / tot if tot > 0 else 0.0
    return frac


def _sphere_mean_j(model, t, s, n=64):
    """Average of j(|t w - s e|) over unit vectors w (rotation invariance)."""
    d = model.d
    if d == 2:
        th = 2 * np.pi * (np.arange(n) + 0.5) / n
        dist = np.sqrt(t[:, None] ** 2 + s * s - 2 * t[:, None] * s * np.cos(th)[None])
        return model.j(dist).mean(axis=1)
    c, w = roots_legendre(n)
    wt = w * (1 - c * c) ** ((d - 3) / 2)
    wt /= wt.sum()
    dist = np.sqrt(t[:, None] ** 2 + s * s - 2 * t[:, None] * s * c[None])
    return model.j(dist) @ wt


def _ball_interior_fraction(model, rho, rho_a, s, n_t=32):
    """pi(s): share of P_U(0, y), |y| = s, coming from jumps that start in B(0, rho_a)."""
    if rho <= rho_a:
        return np.ones_like(s)
    from .kernels import sphere_area
    d, a = model.d, model.alpha
    v, w = roots_legendre(n_t)
    v, w = (v + 1) / 2, w / 2
    t = rho_a * v ** (1 / a)
    jac = rho_a / a * v ** (1 / a - 1)
    e = np.zeros(d)
    e[0] = 1.0
    G = ball_green(a, d, rho, np.zeros((n_t, d)), t[:, None] * e)
    out = np.empty(len(s))
    for i, si in enumerate(s):
        num = sphere_area(d) * np.sum(w * jac * G * t ** (d - 1) * _sphere_mean_j(model, t, si))
        y = si * e
        out[i] = num / float(ball_poisson(a, d, rho, np.zeros(d), y))
    return np.minimum(out, 1.0)


def _ball_trace_stage(model, R, rho, rho_a, u, bins, centre, peaks, n_ang=64):
    """Deterministic stage measure for concentric balls U = B(c, rho) in D = B(c, R), x0 = c."""
    d, a = model.d, model.alpha
    sn, sw = _TS
    s = rho + (R - rho) * sn
    ws = (R - rho) * sw
    keep = (s > rho) & (s < R)
    s, ws = s[keep], ws[keep]
    Pu = ball_poisson(a, d, rho, np.zeros((len(s), d)), s[:, None] * np.eye(d)[0])
    pi = _ball_interior_fraction(model, rho, rho_a, s)
    axis = np.eye(d)[0]
    if peaks:
        axis = np.asarray(peaks[0], dtype=float) - centre
        axis /= np.linalg.norm(axis)
    basis = np.linalg.svd(axis[None])[2][1:]
    peak_ang = []
    for p in peaks or []:
        q = np.asarray(p, dtype=float) - centre
        ang = np.arctan2(q @ basis[0], q @ axis) if d == 2 else np.arccos(np.clip(q @ axis / np.linalg.norm(q), -1, 1))
        peak_ang.append(ang)
    edge_ang = []
    if d == 2 and bins.edges is not None:
        for e in bins.edges:
            v = np.array([np.cos(e), np.sin(e)])
            edge_ang.append(np.arctan2(v @ basis[0], v @ axis))
    g, gw = roots_legendre(12)
    interior = 0.0
    masses = np.zeros(bins.n_bins)
    for si, wsi, Pi, pii in zip(s, ws, Pu, pi):
        width = max((R - si) / R, 1e-12)
        lo, hi = (-np.pi, np.pi) if d == 2 else (0.0, np.pi)
        br = [lo, hi] + [e for e in edge_ang if lo < e < hi]
        for pa in peak_ang:
            br += [pa + sg * width * 4.0 ** k for k in range(14) for sg in (-1, 1) if lo < pa + sg * width * 4.0 ** k < hi]
        br = np.unique(br)
        th = (br[:-1, None] + (br[1:] - br[:-1])[:, None] * (g[None] + 1) / 2).ravel()
        tw = ((br[1:] - br[:-1])[:, None] * gw[None] / 2).ravel()
        if d == 2:
            dirs = np.cos(th)[:, None] * axis + np.sin(th)[:, None] * basis[0]
            W = tw
        else:
            ps = 2 * np.pi * (np.arange(n_ang) + 0.5) / n_ang
            dirs = (np.cos(th)[:, None, None] * axis + np.sin(th)[:, None, None] *
                    (np.cos(ps)[None, :, None] * basis[0] + np.sin(ps)[None, :, None] * basis[1])).reshape(-1, d)
            W = (tw * np.sin(th))[:, None].repeat(n_ang, 1).ravel() * (2 * np.pi / n_ang)
        y = centre + si * dirs
        val = W * u(y)
        base = wsi * si ** (d - 1) * Pi
        interior += base * pii * val.sum()
        masses += base * (1 - pii) * np.bincount(bins.assign(y), weights=val, minlength=bins.n_bins)
    return float(interior), masses


def boundary_trace(model, domain, u, exhaustion=None, x0=None, n_stages=5, n_bins=8, n_paths=40000, rng=0,
                   tol=0.05, interior_depth=None, bins=None, peaks=None, method="auto"):
    """Stage measures eta_U u for U along an exhaustion, binned over the closure of D.

    The total mass of eta_U u is E_{x0}[u(Y); Y in D minus U] for Y the exit
    point of U. Its part on the interior set A = {delta_D > depth} is split off
    by the pre-exit location (conditioned on the last walk ball), and the rest
    is assigned to boundary bins by the direction of the landing point.

    For a ball with concentric stages and x0 at the centre both parts are
    computed by quadrature (method "quadrature"); `peaks` lists boundary
    points near which u is sharply peaked so the angular rule refines there.
    Otherwise walk on spheres is used; unbounded u then gives heavy tailed
    samples and the estimate degrades.
    """
    _require_stable(model)
    if not domain.bounded:
        raise GeometryViolation("boundary_trace needs a bounded domain")
    x0 = domain.deep_point() if x0 is None else np.asarray(x0, dtype=float)
    ex = exhaustion or default_exhaustion(domain, n_stages)
    depth = interior_depth if interior_depth is not None else 0.5 * ex.erosions[0]
    from .geometry import Domain, erode
    inner = Domain(erode(domain.tree, depth))
    bins = bins or BoundaryBins(domain, n_bins, x0)
    rule = ball_green_rule(model.alpha, model.d)
    stream = as_stream(rng)
    stages, interior, totals = [], [], []
    concentric = domain.is_ball and np.allclose(x0, domain.tree.center) and all(
        U.is_ball and np.allclose(U.tree.center, domain.tree.center) for U in ex.stages)
    if method == "auto":
        method = "quadrature" if concentric else "mc_wos"
    if method == "quadrature" and not concentric:
        raise GeometryViolation("quadrature traces need concentric ball stages and x0 at the centre")
    for k, U in enumerate(ex.stages):
        if not U.contains(x0[None])[0]:
            raise GeometryViolation(f"x0 is outside exhaustion stage {k + 1}")
        if method == "quadrature":
            m_int, masses = _ball_trace_stage(model, domain.tree.radius, U.tree.radius, inner.tree.radius, u, bins,
                                              domain.tree.center, peaks)
            total = m_int + float(masses.sum())
            stages.append({"stage": k + 1, "interior": m_int, "boundary_bins": masses, "total": total,
                           "std_error": 0.0})
            interior.append(m_int)
            totals.append(total)
            continue
        b = exit_sample_wos(model.alpha, U, x0, stream.substream(k), n_paths=n_paths)
        Y = b.exit_position
        inD = domain.contains(Y) & ~b.escaped
        vals = np.zeros(n_paths)
        if inD.any():
            vals[inD] = u(Y[inD])
        frac = np.zeros(n_paths)
        if inD.any():
            frac[inD] = _interior_fraction(model.alpha, model.d, b.last_center[inD], b.last_radius[inD], Y[inD],
                                           inner, rule)
        lab = bins.assign(Y)
        masses = np.bincount(lab, weights=vals * (1 - frac), minlength=bins.n_bins) / n_paths
        m_int = float(np.sum(vals * frac) / n_paths)
        total = float(vals.mean())
        stages.append({"stage": k + 1, "interior": m_int, "boundary_bins": masses,
                       "total": total, "std_error": float(vals.std(ddof=1) / np.sqrt(n_paths))})
        interior.append(m_int)
        totals.append(total)
    tv = None
    if len(stages) >= 2:
        a, c = stages[-2], stages[-1]
        tv = abs(a["interior"] - c["interior"]) + float(np.sum(np.abs(a["boundary_bins"] - c["boundary_bins"])))
    converged = tv is not None and tv < tol * max(1.0, totals[-1])
    last = stages[-1]
    limit = BoundaryMeasure([], (bins.representatives, last["boundary_bins"].copy())) if converged else None
    return TraceEstimate(stages, interior, totals, limit, converged, bins)
