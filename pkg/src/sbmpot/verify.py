"""Scripted checks of the potential theory: mean values, boundary Harnack,
oscillation taming, Martin kernels and the representation round trip.

Each configuration draws from its own substream keyed by configuration id, so
results do not depend on evaluation order.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .bernstein import Stable
from .errors import GeometryViolation, UnsupportedModel
from .geometry import Domain, ball_domain
from .kernels import ProcessModel, ball_green, ball_martin_kernel
from .martin import BoundaryMeasure, boundary_trace
from .potential import Estimate, OuterCharge, ball_poisson_integral, exit_batch, poisson_integral, \
    poisson_kernel_est
from .simulate import JumpTo, as_stream


# exit law agreement

@dataclass
class ExitLawReport:
    ks: float
    critical: float
    p_value: float
    order: float
    n_eff: float
    ks_finest: float
    passed: bool


def richardson_ks(wos_r, level_r, dts, level=0.01):
    """Two-sample KS of WoS radii against the Richardson limit of time-stepped radii.

    The empirical CDFs F_1, F_2, F_3 (coarse to fine, mesh ratio q) give the
    observed order p from ||F_2 - F_1|| / ||F_3 - F_2|| = q^p, clipped to
    [0.25, 2], and the limit F_3 + a (F_3 - F_2) with a = 1 / (q^p - 1). The
    extrapolated CDF has variance ((1 + a)^2 + a^2) F (1 - F) / n, so the
    Kolmogorov law is applied with the matching effective sample size.
    """
    from scipy.stats import kstwo
    dts = np.asarray(dts, dtype=float)
    order = np.argsort(-dts)
    levels = [np.sort(np.asarray(level_r[i], dtype=float)) for i in order]
    dts = dts[order]
    w = np.sort(np.asarray(wos_r, dtype=float))
    grid = np.concatenate([w] + levels)
    F = [np.searchsorted(v, grid, side="right") / len(v) for v in levels]
    Fw = np.searchsorted(w, grid, side="right") / len(w)
    q = dts[-2] / dts[-1]
    num = np.sqrt(np.mean((F[1] - F[0]) ** 2))
    den = np.sqrt(np.mean((F[2] - F[1]) ** 2))
    p = float(np.clip(np.log(num / den) / np.log(q), 0.25, 2.0)) if den > 0 and num > 0 else 2.0
    a = 1.0 / (q ** p - 1.0)
    F0 = F[2] + a * (F[2] - F[1])
    ks = float(np.max(np.abs(F0 - Fw)))
    n_ts = len(levels[-1])
    n_eff = float(1.0 / (1.0 / len(w) + ((1 + a) ** 2 + a ** 2) / n_ts))
    n_int = max(int(n_eff), 1)
    crit = float(kstwo.isf(level, n_int))
    pval = float(kstwo.sf(ks, n_int))
    fin = float(np.max(np.abs(F[2] - Fw)))
    return ExitLawReport(ks, crit, pval, p, n_eff, fin, ks <= crit)


def exit_law_agreement(model=None, n_paths=100000, seed=0, dts=(1e-2, 1e-3, 1e-4), level=0.01, workers=None):
    """Radial exit laws from the centre of B(0,1): walk on spheres vs coupled time stepping."""
    model = model or _stable2()
    d = model.d
    D = ball_domain(np.zeros(d), 1.0)
    stream = as_stream(seed)
    fine = min(dts)
    lev = tuple(int(round(t / fine)) for t in dts)
    from .simulate import exit_sample_timestep_levels, exit_sample_wos
    w = exit_sample_wos(model.alpha, D, np.zeros(d), stream.substream(0), n_paths=n_paths, workers=workers)
    ts = exit_sample_timestep_levels(model, D, np.zeros(d), fine, stream.substream(1), lev, n_paths=n_paths,
                                     workers=workers)
    radii = [np.linalg.norm(b.exit_position, axis=1) for b in ts]
    return richardson_ks(np.linalg.norm(w.exit_position, axis=1), radii, dts, level)


# mean value property

def check_mean_value(model, domain, f, lam, U, x, n_paths, rng, method="auto", dt=1e-3, singular=None,
                     share=0.2):
    """Residual f(x) - E_x[F(X_tau_U)] with F = f on D minus U and the charge on D^c.

    Atoms of the charge contribute sum m P_U(x, z) from an independent substream.
    When f blows up at boundary points `singular` (Martin kernels), F(Y) has
    infinite variance; for a ball U and the stable kind a fraction `share` of
    the samples is then drawn from a density ~ |y - z|^{alpha/2 - d} around
    each such z and all samples are weighted by P_U(x, y) / q_mix(y), which
    keeps the estimator unbiased with finite variance.
    """
    x = np.asarray(x, dtype=float)
    if not U.contains(x[None])[0]:
        raise GeometryViolation("x must lie in U")
    stream = as_stream(rng)
    use_is = bool(singular) and U.is_ball and model.is_stable
    n_main = n_paths - (int(share * n_paths) if use_is else 0)
    b, meth = exit_batch(model, U, x, n_main, stream.substream(0), method, dt)
    Y = b.exit_position
    esc = b.escaped
    if use_is:
        from .kernels import ball_poisson, sphere_area
        g = stream.substream(3).generator(0)
        c, r = U.tree.center, U.tree.radius
        sing = [np.asarray(z, dtype=float) for z in singular]
        gam = model.alpha / 2
        kap = [max(0.5 * (np.linalg.norm(z - c) - r), 1e-3 * r) for z in sing]
        n_each = (n_paths - n_main) // len(sing)
        extra = []
        for z, k in zip(sing, kap):
            t = k * g.uniform(size=n_each) ** (1 / gam)
            w = g.standard_normal((n_each, model.d))
            extra.append(z + t[:, None] * w / np.linalg.norm(w, axis=1, keepdims=True))
        Y = np.vstack([Y] + extra)
        esc = np.concatenate([esc, np.zeros(len(Y) - len(esc), bool)])
        n_tot = len(Y)
        outside = np.linalg.norm(Y - c, axis=1) > r
        P = np.where(outside, ball_poisson(model.alpha, model.d, r, x, np.where(outside[:, None], Y, c + 2 * r),
                                           center=c, check=False), 0.0)
        q = n_main / n_tot * P
        for z, k in zip(sing, kap):
            t = np.linalg.norm(Y - z, axis=1)
            dens = np.where(t < k, gam * t ** (gam - 1) / (k ** gam * sphere_area(model.d) * np.maximum(t, 1e-300) ** (model.d - 1)), 0.0)
            q = q + n_each / n_tot * dens
        weight = np.where(q > 0, P / np.where(q > 0, q, 1.0), 0.0)
        meth = "hybrid"
    else:
        weight = np.ones(len(Y))
    inD = domain.contains(Y) & ~esc & (weight > 0)
    vals = np.zeros(len(Y))
    if inD.any():
        vals[inD] = f(Y[inD]) * weight[inD]
    out = ~domain.contains(Y) & ~esc
    if out.any():
        vals[out] = lam.density_at(Y[out]) * weight[out]
    fx = float(np.asarray(f(x[None]))[0])
    mean = float(vals.mean())
    se2 = float(vals.var(ddof=1) / len(vals))
    for k, (z, m) in enumerate(lam.atoms):
        e = poisson_kernel_est(model, U, x, z, n_paths, stream.substream(1, k), method, dt)
        mean += m * e.value
        se2 += (m * e.std_error) ** 2
    return Estimate(fx - mean, float(np.sqrt(se2)), n_paths, meth)


def sample_ball_pairs(domain, n, rng, min_frac=0.2, max_frac=0.8):
    """n pairs (U, x) with U a ball compactly inside domain and x in U."""
    out = []
    lo, hi = domain.sample_box()
    while len(out) < n:
        c = rng.uniform(lo, hi)
        depth = float(domain.sdf(c[None])[0])
        if depth <= 0.05 * np.max(hi - lo):
            continue
        r = depth * rng.uniform(min_frac, max_frac)
        g = rng.standard_normal(domain.d)
        x = c + r * rng.uniform(0, 0.9) * g / np.linalg.norm(g)
        out.append((ball_domain(c, r), x))
    return out


# boundary Harnack

@dataclass
class BHPReport:
    rows: list
    max_cross: float
    max_first_half: float
    all_finite: bool
    passed: bool


def _rule_resolves(domain, charge, rule):
    """False when the domain touches the charge support, where P_B(x, y) blows up like
    dist(y, D)^{-alpha/2} and a fixed Gauss rule in the radius is biased."""
    nodes = rule[0]
    if domain.contains(nodes).any():
        return False
    if charge.shape is None:
        return True
    kind, a, b, _ = charge.shape
    width = (b - a) if kind == "annulus" else b
    dens = nodes[:len(nodes) - len(charge.atoms)]
    return bool(len(dens) == 0 or np.min(-domain.sdf(dens)) > 0.1 * width)


def _paired_poisson(model, domain, X, charges, n_paths, rng, method="auto", smooth=True, mem=2 * 10 ** 8):
    """Per-path estimates of P_D rho(x) for every charge, from shared walks per x.

    With the stable kind and charges carrying a quadrature rule, each walk
    scores sum_n int P_{B_n}(x_n, y) rho(dy) over its balls instead of
    rho(X_tau): the conditional expectation of the same quantity given the
    ball sequence, so the mean is unchanged and the variance far smaller.
    """
    X = np.atleast_2d(X)
    rules = [c.quadrature(domain.d) for c in charges] if smooth and model.is_stable and method in ("auto", "wos") \
        else [None]
    if any(r is None for r in rules) or not all(_rule_resolves(domain, c, r) for c, r in zip(charges, rules)):
        b, _ = exit_batch(model, domain, X, n_paths, rng, method)
        Y = b.exit_position
        vals = np.stack([np.where(b.escaped, 0.0, c.density_at(Y)) for c in charges])
        return vals.reshape(len(charges), len(X), n_paths)
    nodes = np.vstack([r[0] for r in rules])
    W = np.zeros((len(nodes), len(charges)))
    k = 0
    for ci, (y, w) in enumerate(rules):
        W[k:k + len(y), ci] = w
        k += len(y)
    funcs = [JumpTo(model, y, name=f"q{i}") for i, y in enumerate(nodes)]
    group = max(1, int(mem // (8 * n_paths * len(nodes))))
    stream = as_stream(rng)
    out = np.empty((len(charges), len(X), n_paths))
    for g0 in range(0, len(X), group):
        rows = X[g0:g0 + group]
        b, _ = exit_batch(model, domain, rows, n_paths, stream.substream(g0), "wos", functionals=funcs)
        acc = np.column_stack([b.accumulators[f.name] for f in funcs])
        out[:, g0:g0 + len(rows)] = (acc @ W).T.reshape(len(charges), len(rows), n_paths)
    return out


def _log_ratio(va, vb):
    """log(mean a / mean b) and its delta-method standard error from paired samples."""
    ma, mb = va.mean(-1), vb.mean(-1)
    n = va.shape[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        ca = ((va - ma[..., None]) * (va - ma[..., None])).sum(-1) / (n - 1)
        cb = ((vb - mb[..., None]) * (vb - mb[..., None])).sum(-1) / (n - 1)
        cab = ((va - ma[..., None]) * (vb - mb[..., None])).sum(-1) / (n - 1)
        lr = np.log(ma) - np.log(mb)
        var = (ca / ma ** 2 + cb / mb ** 2 - 2 * cab / (ma * mb)) / n
    return lr, np.sqrt(np.maximum(var, 0.0))


def sample_in(domain, n, rng, radius=None, min_depth=0.0, max_tries=10 ** 6):
    lo, hi = domain.sample_box()
    if radius is not None:
        lo, hi = np.maximum(lo, -radius), np.minimum(hi, radius)
    pts = []
    tries = 0
    while len(pts) < n:
        cand = rng.uniform(lo, hi, (4 * n, domain.d))
        ok = domain.sdf(cand) > min_depth
        if radius is not None:
            ok &= np.linalg.norm(cand, axis=1) < radius
        pts.extend(cand[ok])
        tries += 4 * n
        if tries > max_tries:
            raise GeometryViolation("could not sample points in the requested region")
    return np.array(pts[:n])


def check_bhp(model, R, domains, charges, n_config, n_paths, rng, method="auto"):
    """Cross ratios P rho(x1) P lam(x2) / (P rho(x2) P lam(x1)) over 2 n_config configurations.

    Configuration k uses domain k mod len(domains), points x1, x2 in D cap B_{R/2}
    and two distinct charges. Passes when every ratio is finite and the max over
    all configurations is below 1.5 times the max over the first n_config.
    """
    stream = as_stream(rng)
    rows = []
    for k in range(2 * n_config):
        sub = stream.substream(k)
        g = sub.generator(10 ** 6)
        di = k % len(domains)
        D = domains[di]
        x = sample_in(D, 2, g, radius=R / 2)
        i, j = g.choice(len(charges), 2, replace=False)
        v = _paired_poisson(model, D, x, [charges[i], charges[j]], n_paths, sub, method)
        # log cross = [log P_i(x1) - log P_j(x1)] - [log P_i(x2) - log P_j(x2)]
        lr, se = _log_ratio(v[0], v[1])
        lc = lr[0] - lr[1]
        cross = float(np.exp(lc))
        rows.append({"config": k, "domain": di, "x1": x[0].tolist(), "x2": x[1].tolist(), "rho": int(i),
                     "lam": int(j), "cross_ratio": cross, "log_se": float(np.hypot(se[0], se[1])),
                     "finite": bool(np.isfinite(cross) and cross > 0)})
    # the statement is symmetric in (x1, x2), so report max(c, 1/c)
    sym = np.array([max(r["cross_ratio"], 1 / r["cross_ratio"]) if r["finite"] else np.inf for r in rows])
    m_all, m_half = float(np.max(sym)), float(np.max(sym[:n_config]))
    finite = all(r["finite"] for r in rows)
    return BHPReport(rows, m_all, m_half, finite, bool(finite and m_all / m_half < 1.5))


# relative oscillation

@dataclass
class ROReport:
    delta_grid: list
    per_delta: list
    eta_target: float
    uniform_pass: bool
    passing_index: int = None
    family: dict = field(default_factory=dict)
    per_config: dict = field(default_factory=dict)


def nested_cloud(domain, delta0, delta_min, n, rng, cone=0.1):
    """Points of D cap B_delta0 with |x| log-uniform on [delta_min, delta0].

    Only points with delta_D(x) >= cone |x| are kept so that every point is
    resolvable by Monte Carlo; the cloud is shared by all delta.
    """
    sob = qmc.Sobol(domain.d, seed=rng)
    pts = []
    while len(pts) < n:
        u = sob.random(256)
        r = delta_min * (delta0 / delta_min) ** u[:, 0]
        if domain.d == 2:
            ang = 2 * np.pi * u[:, 1]
            dirs = np.column_stack([np.cos(ang), np.sin(ang)])
        else:
            z = 2 * u[:, 1] - 1
            ph = 2 * np.pi * u[:, 2]
            s = np.sqrt(1 - z * z)
            dirs = np.column_stack([s * np.cos(ph), s * np.sin(ph), z] + [np.zeros(len(z))] * (domain.d - 3))
        cand = r[:, None] * dirs
        ok = domain.sdf(cand) >= cone * r
        pts.extend(cand[ok])
    return np.array(pts[:n])


def resolved_ro(r, se, k=2.0):
    """Relative oscillation at k standard errors: max(r - k se) / min(r + k se), at least 1."""
    if len(r) == 0:
        return 1.0
    return float(max(np.max(r - k * se) / np.min(r + k * se), 1.0))


def _halving(R, n_delta):
    return [R / 2 * 0.5 ** k for k in range(n_delta)]


def oscillation_sweep(model, R, eta, domains, charge_pairs, deltas=None, n_cloud=256, n_paths=20000, rng=0,
                      method="auto", delta_min=None):
    """RO of P_D lam1 / P_D lam2 over D cap B_delta for every (domain, pair), per delta."""
    deltas = list(deltas or _halving(R, 7))
    delta_min = delta_min or deltas[-1] / 4
    stream = as_stream(rng)
    charges = []
    for a, b in charge_pairs:
        for c in (a, b):
            if not any(c is q for q in charges):
                charges.append(c)
    idx = [(next(i for i, q in enumerate(charges) if q is a), next(i for i, q in enumerate(charges) if q is b))
           for a, b in charge_pairs]
    table = {}
    for di, D in enumerate(domains):
        sub = stream.substream(di)
        cloud = nested_cloud(D, deltas[0], delta_min, n_cloud, sub.generator(10 ** 6))
        v = _paired_poisson(model, D, cloud, charges, n_paths, sub, method)
        rad = np.linalg.norm(cloud, axis=1)
        for pi, (a, b) in enumerate(idx):
            lr, se = _log_ratio(v[a], v[b])
            ratio = np.exp(lr)
            ok = np.isfinite(lr)
            ro_res, ro_raw = [], []
            for dl in deltas:
                m = ok & (rad < dl)
                ro_res.append(resolved_ro(ratio[m], ratio[m] * se[m]))
                ro_raw.append(float(ratio[m].max() / ratio[m].min()) if m.any() else 1.0)
            table[(di, pi)] = {"resolved": ro_res, "raw": ro_raw, "n_points": [int(np.sum(rad < dl)) for dl in deltas],
                               "unresolved": int(np.sum(~ok))}
    per_delta = []
    passing = None
    for k, dl in enumerate(deltas):
        vals = {cfg: t["resolved"][k] for cfg, t in table.items()}
        worst = max(vals, key=vals.get)
        per_delta.append((dl, vals[worst], f"domain{worst[0]}_pair{worst[1]}"))
        if passing is None and vals[worst] <= 1 + eta:
            passing = k
    return ROReport(deltas, per_delta, eta, passing is not None, passing,
                    {"domains": [D.literal for D in domains], "pairs": len(charge_pairs), "n_cloud": n_cloud,
                     "n_paths": n_paths}, {f"domain{a}_pair{b}": t for (a, b), t in table.items()})


def martin_oscillation_sweep(model, rho, eta, centers, radii=None, x_frac=0.5, n_cloud=256, rng=0):
    """RO over y in D cap B_r of G_D(x, y)/G_D(x0, y) for balls D = B(c, |c|).

    0 is on the boundary of every ball; x and x0 sit at distance x_frac |c|
    from the centre on either side, outside closed B_rho. Green functions are
    closed form.
    """
    if not model.is_stable:
        raise UnsupportedModel("closed-form ball Green functions need the stable kind")
    radii = list(radii or _halving(min(np.linalg.norm(c) for c in centers), 8))
    stream = as_stream(rng)
    table = {}
    for ci, c in enumerate(centers):
        c = np.asarray(c, dtype=float)
        Rb = float(np.linalg.norm(c))
        D = ball_domain(c, Rb)
        perp = np.zeros(model.d)
        perp[:2] = [-c[1], c[0]]
        perp = perp / np.linalg.norm(perp) if np.linalg.norm(perp) > 0 else np.eye(model.d)[1]
        x = c + x_frac * Rb * perp
        x0 = c - x_frac * Rb * perp
        if np.linalg.norm(x) <= rho or np.linalg.norm(x0) <= rho:
            raise GeometryViolation("x and x0 must lie outside the closed ball B_rho")
        cloud = nested_cloud(D, radii[0], radii[-1] / 4, n_cloud, stream.substream(ci).generator(0), cone=0.0)
        num = ball_green(model.alpha, model.d, Rb, np.broadcast_to(x, cloud.shape), cloud, c)
        den = ball_green(model.alpha, model.d, Rb, np.broadcast_to(x0, cloud.shape), cloud, c)
        ratio = num / den
        rad = np.linalg.norm(cloud, axis=1)
        table[ci] = [float(ratio[rad < r].max() / ratio[rad < r].min()) if np.any(rad < r) else 1.0 for r in radii]
    per, passing = [], None
    for k, r in enumerate(radii):
        worst = max(table, key=lambda ci: table[ci][k])
        per.append((r, table[worst][k], f"ball{worst}"))
        if passing is None and table[worst][k] <= 1 + eta:
            passing = k
    return ROReport(radii, per, eta, passing is not None, passing,
                    {"centers": [list(map(float, c)) for c in centers], "rho": rho}, {f"ball{k}": v for k, v in table.items()})


# representation round trip

@dataclass
class RoundTripReport:
    inputs: dict
    reconstructed_mass: Estimate
    expected_mass: float
    pointwise_residuals: list
    trace_fraction_in_bin: float
    trace_mass: float
    passed: bool


def representation_roundtrip(model, domain, lam, mu, xs=None, n_paths=40000, rng=0, n_stages=5, n_bins=8,
                             n_mean_value=5):
    """Synthesize f = P_D lam + M_D mu on a ball and recover mu.

    (i) mass: f(x0) - P_D lam(x0) with P_D lam(x0) by Monte Carlo;
    (ii) the boundary trace of f, whose limit should sit on the atoms of mu;
    (iii) mean-value residuals of (f, lam) at sampled (U, x).
    """
    if not (model.is_stable and domain.is_ball):
        raise UnsupportedModel("the round trip synthesizes f in closed form on balls (stable kind)")
    c, R = domain.tree.center, domain.tree.radius
    x0 = c.copy()
    tab = ball_poisson_integral(model.alpha, model.d, R, lam) if not lam.is_zero else None
    atoms = [(np.asarray(z, dtype=float), m) for z, m in mu.atoms]

    def f(y):
        y = np.atleast_2d(y)
        out = tab(y - c) if tab is not None else np.zeros(len(y))
        inside = domain.contains(y)
        for z, m in atoms:
            out = out + m * np.where(inside, ball_martin_kernel(model.alpha, model.d, R, y - c, z - c), 0.0)
        return out

    stream = as_stream(rng)
    p0 = poisson_integral(model, domain, lam, x0, n_paths, stream.substream(0))
    mass = Estimate(float(f(x0[None])[0]) - p0.value, p0.std_error, n_paths, "hybrid" if p0.std_error > 0 else "quadrature")
    expected = mu.total_mass
    tr = boundary_trace(model, domain, f, x0=x0, n_stages=n_stages, n_bins=n_bins,
                        peaks=[z for z, _ in atoms] or None)
    last = tr.stages[-1]
    if atoms:
        zbins = {int(tr.bins.assign(z[None])[0]) for z, _ in atoms}
        frac = float(sum(last["boundary_bins"][b] for b in zbins) / max(last["total"], 1e-300))
    else:
        frac = float("nan")
    g = stream.substream(1).generator(0)
    resid = []
    for k, (U, x) in enumerate(sample_ball_pairs(domain, n_mean_value, g)):
        e = check_mean_value(model, domain, f, lam, U, x, n_paths, stream.substream(2, k),
                             singular=[z for z, _ in atoms] or None)
        resid.append({"x": x.tolist(), "U": U.literal, "residual": e.value, "std_error": e.std_error,
                      "ok": bool(abs(e.value) <= 4 * e.std_error)})
    mass_ok = abs(mass.value - expected) <= 0.05 * expected if expected > 0 else \
        abs(mass.value) <= 4 * mass.std_error + 1e-12
    trace_ok = (frac >= 0.95) if atoms else (last["total"] <= 0.05 * tr.stages[0]["total"])
    passed = bool(mass_ok and trace_ok and all(r["ok"] for r in resid))
    return RoundTripReport({"domain": domain.literal, "atoms": [(z.tolist(), m) for z, m in atoms]}, mass, expected,
                           resid, frac, last["total"], passed)


# default suites used by the CLI

def default_family(d=2):
    """Domains inside B_1 with 0 on the boundary and charges outside B_1."""
    if d != 2:
        raise ValueError("the default family is two dimensional")
    domains = [Domain.parse(s) for s in (
        "ball(0.5 0; 0.5)",
        "box(0 -0.5; 0.8 0.5)",
        "diff(ball(0.5 0; 0.5), ball(0.5 0.3; 0.15))",
        "inter(ball(0.5 0; 0.5), box(0 -0.3; 1 1))",
        "union(ball(0.4 0; 0.4), box(0.3 -0.2; 0.9 0.2))",
    )]
    charges = [OuterCharge.ball_indicator((-1.6, 0.0), 0.5), OuterCharge.ball_indicator((0.0, 1.6), 0.5),
               OuterCharge.annulus(1.2, 2.0), OuterCharge.ball_indicator((1.8, -0.8), 0.5)]
    return domains, charges


@dataclass
class SuiteResult:
    suite: str
    passed: bool
    rows: list
    worst_case: dict
    seeds: dict


def _stable2():
    return ProcessModel(2, Stable(1.0))


def suite_mean_value(model=None, n_paths=100000, seed=0, n_pairs=5):
    model = model or _stable2()
    d = model.d
    D = ball_domain(np.zeros(d), 1.0)
    lam = OuterCharge.annulus(1.0, 2.0)
    tab = ball_poisson_integral(model.alpha, d, 1.0, lam)
    z = np.eye(d)[0]
    everywhere = OuterCharge(lambda y: np.ones(len(np.atleast_2d(y))))
    cases = [("poisson_integral", tab, lam, None),
             ("martin_kernel", lambda y: ball_martin_kernel(model.alpha, d, 1.0, y, z), OuterCharge.zero(), [z]),
             ("constant", lambda y: np.ones(len(np.atleast_2d(y))), everywhere, None)]
    stream = as_stream(seed).substream(1)
    rows = []
    for ci, (name, f, lm, sing) in enumerate(cases):
        pairs = sample_ball_pairs(D, n_pairs, stream.substream(ci).generator(0))
        for k, (U, x) in enumerate(pairs):
            e = check_mean_value(model, D, f, lm, U, x, n_paths, stream.substream(ci, k), singular=sing)
            rows.append({"case": name, "U": U.literal, "x": x.tolist(), "residual": e.value,
                         "std_error": e.std_error, "pass": bool(abs(e.value) <= 4 * e.std_error)})
    worst = max(rows, key=lambda r: abs(r["residual"]) / max(r["std_error"], 1e-300) if r["residual"] else 0)
    return SuiteResult("mean-value", all(r["pass"] for r in rows), rows, worst, {"seed": seed})


def suite_bhp(model=None, n_paths=4000, seed=0, n_config=50):
    model = model or _stable2()
    domains, charges = default_family(model.d)
    rep = check_bhp(model, 1.0, domains, charges, n_config, n_paths, as_stream(seed).substream(2))
    worst = max(rep.rows, key=lambda r: max(r["cross_ratio"], 1 / r["cross_ratio"]))
    return SuiteResult("bhp", rep.passed, rep.rows, {"max_cross": rep.max_cross, "max_first_half": rep.max_first_half,
                                                     "config": worst["config"]}, {"seed": seed})


def suite_oscillation(model=None, n_paths=1000, seed=0, eta=0.25):
    model = model or _stable2()
    domains, c = default_family(model.d)
    pairs = [(c[0], c[1]), (c[0], c[2]), (c[1], c[3])]
    rep = oscillation_sweep(model, 1.0, eta, domains[:3], pairs, n_paths=n_paths, rng=as_stream(seed).substream(3))
    rows = [{"delta": dl, "sup_ro": ro, "argmax": arg} for dl, ro, arg in rep.per_delta]
    return SuiteResult("oscillation", rep.uniform_pass, rows, {"passing_index": rep.passing_index}, {"seed": seed})


def suite_martin_oscillation(model=None, seed=0, eta=0.2):
    model = model or _stable2()
    centers = [np.array([0.5, 0.0]), np.array([0.0, 0.75]), np.array([-0.7, 0.7])]
    rep = martin_oscillation_sweep(model, 0.2, eta, centers, rng=seed)
    rows = [{"r": r, "sup_ro": ro, "argmax": arg} for r, ro, arg in rep.per_delta]
    return SuiteResult("martin-oscillation", rep.uniform_pass, rows, {"passing_index": rep.passing_index},
                       {"seed": seed})


def suite_roundtrip(model=None, n_paths=40000, seed=0):
    model = model or _stable2()
    d = model.d
    D = ball_domain(np.zeros(d), 1.0)
    z = np.zeros(d)
    z[:2] = [np.cos(0.3), np.sin(0.3)]
    rep = representation_roundtrip(model, D, OuterCharge.annulus(1.0, 2.0), BoundaryMeasure([(z, 0.5)]),
                                   n_paths=n_paths, rng=as_stream(seed).substream(4))
    rows = [dict(r, kind="mean_value") for r in rep.pointwise_residuals]
    rows.append({"kind": "mass", "value": rep.reconstructed_mass.value, "std_error": rep.reconstructed_mass.std_error,
                 "expected": rep.expected_mass})
    rows.append({"kind": "trace", "fraction_in_bin": rep.trace_fraction_in_bin, "trace_mass": rep.trace_mass})
    return SuiteResult("roundtrip", rep.passed, rows, {"mass": rep.reconstructed_mass.value,
                                                        "fraction_in_bin": rep.trace_fraction_in_bin}, {"seed": seed})


SUITES = {
    "mean-value": suite_mean_value,
    "bhp": suite_bhp,
    "oscillation": suite_oscillation,
    "martin-oscillation": suite_martin_oscillation,
    "roundtrip": suite_roundtrip,
}


def run_suite(name, model=None, seed=0, budget=1.0):
    """Run one named suite; budget scales the path counts."""
    fn = SUITES[name]
    kw = {"model": model, "seed": seed}
    defaults = {"mean-value": 100000, "bhp": 4000, "oscillation": 1000, "roundtrip": 40000}
    if name in defaults:
        kw["n_paths"] = max(200, int(defaults[name] * budget))
    return fn(**kw)
