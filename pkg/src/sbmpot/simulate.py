"""Exit sampling for subordinate Brownian motion.

Two samplers share one batch format:

* time stepping with exact increments X_{t+dt} - X_t = sqrt(2 S_dt) N, which
  works for every catalog model and overshoots the boundary naturally;
* walk on spheres for the stable kind, which draws exact exits from the
  largest inscribed balls and accumulates occupation integrals per ball.

Paths are split into fixed chunks, each with its own seed sequence, so results
do not depend on how chunks are spread over workers.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from . import _backend
from .errors import MaxStepsExceeded, StepBudgetExceeded, UnsupportedModel
from .kernels import ball_jump_cut, exit_time_constant, poisson_constant, stable_jump_constant

CHUNK = 2048


@dataclass(frozen=True)
class RngStream:
    """Deterministic stream keyed by (seed, stream_id); chunks get their own generators."""
    seed: int
    stream_id: tuple = (0,)

    def __post_init__(self):
        sid = self.stream_id
        object.__setattr__(self, "stream_id", tuple(sid) if isinstance(sid, (tuple, list)) else (int(sid),))

    def generator(self, chunk=0):
        ss = np.random.SeedSequence(self.seed, spawn_key=(*self.stream_id, int(chunk)))
        return np.random.Generator(np.random.PCG64(ss))

    def substream(self, *keys):
        return RngStream(self.seed, (*self.stream_id, *[int(k) for k in keys]))


def as_stream(rng):
    if isinstance(rng, RngStream):
        return rng
    if isinstance(rng, (int, np.integer)):
        return RngStream(int(rng))
    raise TypeError("rng must be an RngStream or an integer seed")


# increments

def stable_subordinator_increment(index, t, rng, size=None):
    """Draws of S_t with E exp(-lam S_t) = exp(-t lam^index)."""
    if not 0 < index < 1:
        raise ValueError("stable index must lie in (0, 1)")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    from ._kernels_py import kanter
    n = 1 if size is None else size
    out = t ** (1 / index) * kanter(index, n, gen)
    return out[0] if size is None else out


def subordinator_params(spec, max_tries=10 ** 6):
    if spec.kind == "relativistic":
        return (1, np.array([spec.alpha / 2]), np.array([1.0]), spec.theta, max_tries)
    betas = np.array([a / 2 for _, a in spec.terms])
    scales = np.array([w for w, _ in spec.terms])
    return (0, betas, scales, 0.0, max_tries)


def subordinator_increment(spec, dt, rng, size=None):
    from ._kernels_py import sub_increment
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    n = 1 if size is None else size
    out = sub_increment(subordinator_params(spec), dt, n, gen)
    return out[0] if size is None else out


def sbm_increment(model, dt, rng, size=None):
    """X_dt = sqrt(2 S_dt) N, N standard normal in R^d."""
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    n = 1 if size is None else size
    S = subordinator_increment(model.spec, dt, gen, n)
    out = np.sqrt(2 * S)[:, None] * gen.standard_normal((n, model.d))
    return out[0] if size is None else out


# functionals accumulated along paths

class Functional:
    """A function f >= 0 whose occupation integral int_0^tau f(X_t) dt is tracked."""
    name = "f"

    def __call__(self, x):
        raise NotImplementedError

    def ball_integral(self, centers, radii, alpha, rule):
        """int_{B(c, r)} G_{B(c,r)}(c, w) f(w) dw for each ball (by quadrature)."""
        nodes, weights = rule
        out = np.empty(len(radii))
        step = max(1, 200000 // len(weights))
        for s in range(0, len(radii), step):
            c, r = centers[s:s + step], radii[s:s + step]
            pts = c[:, None, :] + r[:, None, None] * nodes[None]
            vals = self(pts.reshape(-1, pts.shape[-1])).reshape(len(r), -1)
            out[s:s + step] = r ** alpha * (vals @ weights)
        return out


class Pointwise(Functional):
    def __init__(self, f, name="f"):
        self.f = f
        self.name = name

    def __call__(self, x):
        return np.asarray(self.f(x), dtype=float) * np.ones(len(x))


class Constant(Functional):
    def __init__(self, c=1.0, name="one"):
        self.c = float(c)
        self.name = name

    def __call__(self, x):
        return np.full(len(x), self.c)

    def ball_integral(self, centers, radii, alpha, rule):
        d = centers.shape[1]
        return self.c * exit_time_constant(d, alpha) * radii ** alpha


class JumpTo(Functional):
    """f(w) = j(|w - z|); its ball integral is the ball Poisson kernel at z."""

    def __init__(self, model, z, eps=0.0, name=None):
        self.model = model
        self.z = np.asarray(z, dtype=float)
        self.eps = float(eps)
        self.name = name or f"jump_to_{np.round(self.z, 6).tolist()}"

    def __call__(self, x):
        dist = np.linalg.norm(x - self.z, axis=-1)
        return np.where(dist >= self.eps, self.model.j(np.maximum(dist, 1e-300)), 0.0)


def as_functional(f):
    if f is None or isinstance(f, Functional):
        return f
    return Pointwise(f)


@lru_cache(maxsize=None)
def ball_green_rule(alpha, d, n_r=16, n_ang=32):
    """Nodes w and weights v on B(0,1) with sum v f(w) ~ int G_{B1}(0,w) f(w) dw.

    Radially rho = t^{1/alpha} flattens the rho^{alpha-1} factor and Gauss-Jacobi
    in t absorbs the (1 - t)^{alpha/2} decay at the sphere. Weights are scaled
    so they sum to E_0 tau exactly.
    """
    from scipy.special import betainc
    from .kernels import riesz_constant, sphere_area
    x, w = roots_jacobi(n_r, alpha / 2, 0.0)       # weight (1 - x)^{alpha/2} on [-1, 1]
    t = (x + 1) / 2
    wt = w / 2 ** (1 + alpha / 2)                  # weight (1 - t)^{alpha/2} on [0, 1]
    rho = t ** (1 / alpha)
    a, b = alpha / 2, (d - alpha) / 2
    smooth = sphere_area(d) * riesz_constant(d, alpha) / alpha * betainc(a, b, 1 - rho ** 2) / (1 - t) ** (alpha / 2)
    radial_w = wt * smooth
    if d == 2:
        ang = 2 * np.pi * (np.arange(n_ang) + 0.5) / n_ang
        dirs = np.column_stack([np.cos(ang), np.sin(ang)])
        ang_w = np.full(n_ang, 1.0 / n_ang)
    elif d == 3:
        ct, cw = roots_legendre(max(n_ang // 2, 2))
        ph = 2 * np.pi * (np.arange(n_ang) + 0.5) / n_ang
        st = np.sqrt(1 - ct ** 2)
        dirs = np.stack([np.outer(st, np.cos(ph)), np.outer(st, np.sin(ph)), np.outer(ct, np.ones(n_ang))], -1).reshape(-1, 3)
        ang_w = np.outer(cw / 2, np.full(n_ang, 1.0 / n_ang)).ravel()
    else:
        g = np.random.default_rng(12345).standard_normal((n_ang * n_ang, d))
        dirs = g / np.linalg.norm(g, axis=1, keepdims=True)
        ang_w = np.full(len(dirs), 1.0 / len(dirs))
    nodes = (rho[:, None, None] * dirs[None]).reshape(-1, d)
    weights = np.outer(radial_w, ang_w).ravel()
    weights *= exit_time_constant(d, alpha) / weights.sum()
    return nodes, weights


# batch containers

@dataclass
class ExitRecord:
    exit_position: np.ndarray
    exit_time: float
    occupation_accumulators: dict
    steps: int
    escaped_to_infinity: bool


@dataclass
class ExitBatch:
    """Exit data for n paths; exit_time is None for walk on spheres."""
    exit_position: np.ndarray
    steps: np.ndarray
    escaped: np.ndarray
    method: str
    exit_time: np.ndarray = None
    accumulators: dict = field(default_factory=dict)
    dt: float = None
    last_center: np.ndarray = None
    last_radius: np.ndarray = None

    @property
    def n(self):
        return len(self.steps)

    def record(self, i):
        return ExitRecord(self.exit_position[i], None if self.exit_time is None else float(self.exit_time[i]),
                          {k: float(v[i]) for k, v in self.accumulators.items()}, int(self.steps[i]),
                          bool(self.escaped[i]))

    def records(self):
        return [self.record(i) for i in range(self.n)]

    def __iter__(self):
        return iter(self.records())


def _concat_batches(parts):
    first = parts[0]

    def cat(name):
        vals = [getattr(p, name) for p in parts]
        return None if vals[0] is None else np.concatenate(vals)

    acc = {k: np.concatenate([p.accumulators[k] for p in parts]) for k in first.accumulators}
    return ExitBatch(cat("exit_position"), cat("steps"), cat("escaped"), first.method, cat("exit_time"), acc,
                     first.dt, cat("last_center"), cat("last_radius"))


def _starts(x, n_paths, d):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.size != d:
            raise ValueError(f"start point must have {d} coordinates")
        return np.tile(x, (n_paths, 1))
    if x.shape != (n_paths, d):
        raise ValueError("start array must have shape (n_paths, d)")
    return np.ascontiguousarray(x)


def _escape_radius(domain, esc_radius):
    if esc_radius is not None:
        return float(esc_radius)
    if domain.bounded:
        return np.inf
    return 100.0 * max(domain.complement_radius, 1.0)


def _run_chunks(fn, starts, stream, workers, args):
    n = len(starts)
    chunks = [(starts[s:s + CHUNK], stream, c) for c, s in enumerate(range(0, n, CHUNK))]
    if workers is None or workers <= 1 or len(chunks) == 1:
        return [fn(*ch, *args) for ch in chunks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        futs = [ex.submit(fn, *ch, *args) for ch in chunks]
        return [f.result() for f in futs]


def _timestep_chunk(x0, stream, chunk, prog, dt, sub, max_steps, esc, levels, backend, functionals):
    gen = stream.generator(chunk)
    if functionals:
        return _timestep_with_functionals(x0, gen, prog, dt, sub, max_steps, esc, functionals)
    K = _backend.get(backend)
    pos, steps, status = K.timestep_exit(prog, np.ascontiguousarray(x0), dt, sub, max_steps, esc, gen, levels)
    return pos, steps, status, {}


def _timestep_with_functionals(x0, gen, prog, dt, sub, max_steps, esc, functionals):
    from ._kernels_py import sub_increment
    from .geometry import eval_program
    n, d = x0.shape
    x = np.array(x0, dtype=float)
    pos = np.zeros((n, 1, d))
    steps = np.zeros((n, 1), dtype=np.int64)
    status = np.zeros((n, 1), dtype=np.int8)
    sums = {f.name: np.zeros(n) for f in functionals}
    active = np.arange(n)
    k = 0
    while active.size:
        xa = x[active]
        for f in functionals:
            sums[f.name][active] += f(xa)
        S = sub_increment(sub, dt, active.size, gen)
        xa = xa + np.sqrt(2 * S)[:, None] * gen.standard_normal((active.size, d))
        x[active] = xa
        k += 1
        out = eval_program(prog, xa) <= 0
        stop = out | (k >= max_steps) | (np.sum(xa * xa, axis=1) > esc ** 2)
        idx = active[stop]
        pos[idx, 0] = xa[stop]
        steps[idx, 0] = k
        status[idx, 0] = np.where(out[stop], 0, np.where(k >= max_steps, 1, 2))
        active = active[~stop]
    return pos, steps, status, {name: v * dt for name, v in sums.items()}


def _check_status(status, budget, strict):
    if strict and np.any(status == 1):
        raise MaxStepsExceeded(f"{int(np.sum(status == 1))} paths hit the step budget {budget}")


def exit_sample_timestep_levels(model, domain, x, dt, rng, levels=(1,), n_paths=None, registered_functionals=None,
                                max_steps=10 ** 8, esc_radius=None, workers=None, backend=None, strict=True):
    """Coupled exit samples at mesh sizes dt * levels[l], all read off one fine path."""
    stream = as_stream(rng)
    n_paths = 1 if n_paths is None and np.ndim(x) == 1 else (n_paths or len(x))
    starts = _starts(x, n_paths, domain.d)
    if np.any(domain.sdf(starts) <= 0):
        raise ValueError("start points must lie inside the domain")
    funcs = [as_functional(f) for f in (registered_functionals or [])]
    if funcs and tuple(levels) != (1,):
        raise ValueError("functionals are tracked on the fine level only")
    esc = _escape_radius(domain, esc_radius)
    sub = subordinator_params(model.spec)
    lev = np.asarray(levels, dtype=np.int64)
    res = _run_chunks(_timestep_chunk, starts, stream, workers,
                      (domain.program, float(dt), sub, int(max_steps), esc, lev, backend, funcs))
    pos = np.concatenate([r[0] for r in res])
    steps = np.concatenate([r[1] for r in res])
    status = np.concatenate([r[2] for r in res])
    _check_status(status, max_steps, strict)
    acc = {name: np.concatenate([r[3][name] for r in res]) for name in (res[0][3] if res else {})}
    out = []
    for l, L in enumerate(lev):
        out.append(ExitBatch(pos[:, l], steps[:, l], status[:, l] == 2, "mc_timestep",
                             steps[:, l] * dt, acc if l == 0 else {}, dt * L))
    return out


def exit_sample_timestep(model, domain, x, dt, rng, registered_functionals=None, n_paths=None, **kw):
    """Time-stepped exit sampling; exit_time = steps * dt."""
    return exit_sample_timestep_levels(model, domain, x, dt, rng, (1,), n_paths, registered_functionals, **kw)[0]


def _wos_chunk(x0, stream, chunk, prog, alpha, max_steps, esc, targets, eps, record, backend):
    gen = stream.generator(chunk)
    K = _backend.get(backend)
    d = x0.shape[1]
    return K.wos_exit(prog, np.ascontiguousarray(x0), float(alpha), exit_time_constant(d, alpha),
                      poisson_constant(d, alpha), int(max_steps), float(esc), gen,
                      np.ascontiguousarray(targets, dtype=float).reshape(-1, d),
                      np.ascontiguousarray(eps, dtype=float), bool(record))


def exit_sample_wos(alpha, domain, x, rng, registered_functionals=None, n_paths=None, max_steps=10 ** 5,
                    esc_radius=None, workers=None, backend=None, strict=True, rule=None, return_walks=False):
    """Walk-on-spheres exit sampling for the alpha-stable process.

    Accumulators: Constant functionals use the closed-form exit time of each
    ball, JumpTo functionals the closed-form ball Poisson kernel, anything
    else the ball Green quadrature rule (requires storing the walk). A JumpTo
    with eps > 0 cuts B(z, eps) out of every ball; balls that meet the cut are
    integrated afterwards by kernels.ball_jump_cut on the stored walk.
    """
    stream = as_stream(rng)
    n_paths = 1 if n_paths is None and np.ndim(x) == 1 else (n_paths or len(x))
    d = domain.d
    starts = _starts(x, n_paths, d)
    if np.any(domain.sdf(starts) <= 0):
        raise ValueError("start points must lie inside the domain")
    funcs = [as_functional(f) for f in (registered_functionals or [])]
    jumps = [f for f in funcs if isinstance(f, JumpTo)]
    generic = [f for f in funcs if not isinstance(f, (JumpTo, Constant))]
    for f in jumps:
        if not f.model.is_stable or abs(f.model.alpha - alpha) > 0:
            raise UnsupportedModel("walk on spheres needs the stable model that drives it")
    targets = np.array([f.z for f in jumps]).reshape(-1, d)
    eps = np.array([f.eps for f in jumps])
    record = bool(generic) or return_walks or bool(np.any(eps > 0))
    esc = _escape_radius(domain, esc_radius)
    res = _run_chunks(_wos_chunk, starts, stream, workers, (domain.program, alpha, max_steps, esc, targets, eps,
                                                              record, backend))
    status = np.concatenate([r["status"] for r in res])
    if strict and np.any(status == 1):
        raise StepBudgetExceeded(f"{int(np.sum(status == 1))} walks hit the step budget {max_steps}")
    occ = np.concatenate([r["occ"] for r in res])
    acc_all = np.concatenate([r["acc"] for r in res]) if jumps else None
    accs = {}
    for f in funcs:
        if isinstance(f, Constant):
            accs[f.name] = f.c * occ
    for t, f in enumerate(jumps):
        accs[f.name] = acc_all[:, t]
    walks = None
    if record:
        centers = np.concatenate([r["centers"] for r in res])
        radii = np.concatenate([r["radii"] for r in res])
        counts = np.concatenate([np.diff(r["offsets"]) for r in res])
        walks = (centers, radii, counts)
        owner = np.repeat(np.arange(n_paths), counts)
        for t, f in enumerate(jumps):
            if f.eps > 0:
                dz = np.linalg.norm(centers - f.z, axis=1)
                cut = (dz < radii + f.eps) & (dz + radii > f.eps)
                if cut.any():
                    idx = np.flatnonzero(cut)
                    vals = np.concatenate([ball_jump_cut(alpha, d, radii[i], dz[i], f.eps, n=16)
                                           for i in np.array_split(idx, -(-idx.size // 4096))])
                    vals *= stable_jump_constant(d, alpha)
                    accs[f.name] = accs[f.name] + np.bincount(owner[cut], weights=vals, minlength=n_paths)
        if generic:
            q = rule or ball_green_rule(alpha, d)
            for f in generic:
                per_ball = f.ball_integral(centers, radii, alpha, q)
                accs[f.name] = np.bincount(owner, weights=per_ball, minlength=n_paths)
    batch = ExitBatch(np.concatenate([r["pos"] for r in res]), np.concatenate([r["steps"] for r in res]),
                      status == 2, "mc_wos", None, accs, None,
                      np.concatenate([r["last_center"] for r in res]), np.concatenate([r["last_radius"] for r in res]))
    batch.occupation = occ
    if return_walks:
        batch.walks = walks
    return batch


@dataclass
class EmpiricalMeasure:
    points: np.ndarray
    escaped_fraction: float
    n: int

    @property
    def total_mass(self):
        return len(self.points) / self.n + self.escaped_fraction


def harmonic_measure(model, domain, x, n_paths, rng, method="wos", dt=1e-3, **kw):
    """Empirical exit distribution; escaped paths go to the point at infinity."""
    if method == "wos":
        if not model.is_stable:
            raise UnsupportedModel("walk on spheres needs the stable kind")
        b = exit_sample_wos(model.alpha, domain, x, rng, n_paths=n_paths, **kw)
    elif method == "timestep":
        b = exit_sample_timestep(model, domain, x, dt, rng, n_paths=n_paths, **kw)
    else:
        raise ValueError(f"unknown method {method!r}")
    return EmpiricalMeasure(b.exit_position[~b.escaped], float(np.mean(b.escaped)), b.n)
