"""Pure numpy exit samplers, vectorised over the active paths.

Same call signatures and return layout as the compiled module; the two agree
in distribution, not draw for draw.
"""
import numpy as np

from .errors import TiltingRejectionStalled
from .geometry import eval_program


def kanter(beta, size, rng):
    if beta == 0.5:
        z = rng.standard_normal(size)
        return 0.5 / (z * z)
    u = rng.uniform(0.0, np.pi, size)
    u = np.where(u == 0.0, np.pi / 2, u)
    e = rng.standard_exponential(size)
    return np.sin(beta * u) / np.sin(u) ** (1 / beta) * (np.sin((1 - beta) * u) / e) ** ((1 - beta) / beta)


def sub_increment(sub, dt, size, rng):
    kind, betas, scales, theta, max_tries = sub
    if kind == 0:
        out = np.zeros(size)
        for b, w in zip(betas, scales):
            out += (w * dt) ** (1 / b) * kanter(b, size, rng)
        return out
    b = betas[0]
    out = np.empty(size)
    todo = np.arange(size)
    tries = 0
    while todo.size:
        draw = dt ** (1 / b) * kanter(b, todo.size, rng)
        ok = rng.uniform(size=todo.size) < np.exp(-theta * draw)
        out[todo[ok]] = draw[ok]
        todo = todo[~ok]
        tries += 1
        if tries > max_tries:
            raise TiltingRejectionStalled("tilting acceptance loop exceeded its budget")
    return out


def timestep_exit(prog, x0, dt, sub, max_steps, esc_radius, gen, levels):
    levels = np.asarray(levels, dtype=np.int64)
    n, d = x0.shape
    nl = levels.size
    x = np.array(x0, dtype=float)
    pos = np.zeros((n, nl, d))
    steps = np.zeros((n, nl), dtype=np.int64)
    status = np.zeros((n, nl), dtype=np.int8)
    active = np.arange(n)
    k = 0
    while active.size:
        m = active.size
        S = sub_increment(sub, dt, m, gen)
        x[active] += np.sqrt(2 * S)[:, None] * gen.standard_normal((m, d))
        k += 1
        xa = x[active]
        outside = eval_program(prog, xa) <= 0
        for l in range(nl):
            if k % levels[l] == 0:
                hit = outside & (steps[active, l] == 0)
                idx = active[hit]
                steps[idx, l] = k
                pos[idx, l] = xa[hit]
        pending = np.any(steps[active] == 0, axis=1)
        stop = pending & ((k >= max_steps) | (np.sum(xa * xa, axis=1) > esc_radius ** 2))
        if np.any(stop):
            idx = active[stop]
            code = 1 if k >= max_steps else 2
            for l in range(nl):
                sel = idx[steps[idx, l] == 0]
                steps[sel, l] = k
                status[sel, l] = code
                pos[sel, l] = x[sel]
            pending &= ~stop
        active = active[pending]
    return pos, steps, status


def wos_exit(prog, x0, alpha, occ_const, pk_const, max_steps, esc_radius, gen, targets, target_eps, record):
    n, d = x0.shape
    m = targets.shape[0]
    x = np.array(x0, dtype=float)
    steps = np.zeros(n, dtype=np.int64)
    status = np.zeros(n, dtype=np.int8)
    occ = np.zeros(n)
    acc = np.zeros((n, m))
    lastc = np.zeros((n, d))
    lastr = np.zeros(n)
    rec_idx, rec_c, rec_r = [], [], []
    s = eval_program(prog, x)
    active = np.flatnonzero(s > 0)
    s = s[active]
    a2 = alpha / 2
    while active.size:
        xa = x[active]
        esc = np.sum(xa * xa, axis=1) > esc_radius ** 2
        over = steps[active] >= max_steps
        status[active[esc]] = 2
        status[active[over & ~esc]] = 1
        keep = ~(esc | over)
        active, xa, s = active[keep], xa[keep], s[keep]
        if not active.size:
            break
        r = s
        ra = r ** alpha
        occ[active] += occ_const * ra
        for t in range(m):
            e = target_eps[t]
            dz = np.linalg.norm(xa - targets[t], axis=1)
            with np.errstate(divide="ignore", invalid="ignore"):
                val = pk_const * ra * (dz * dz - r * r) ** (-a2) * dz ** (-d)
            val = np.where(dz > r, val, np.inf)
            # balls meeting B(z, eps) are handled by the caller from the recorded walk
            acc[active, t] += np.where(dz >= r + e, val, 0.0)
        if record:
            rec_idx.append(active.copy())
            rec_c.append(xa.copy())
            rec_r.append(r.copy())
        lastc[active] = xa
        lastr[active] = r
        rho = r / np.sqrt(gen.beta(a2, 1 - a2, size=active.size))
        g = gen.standard_normal((active.size, d))
        g *= (rho / np.linalg.norm(g, axis=1))[:, None]
        x[active] = xa + g
        steps[active] += 1
        s = eval_program(prog, x[active])
        inside = s > 0
        active, s = active[inside], s[inside]
    out = {"pos": x, "steps": steps, "status": status, "occ": occ, "acc": acc,
           "last_center": lastc, "last_radius": lastr}
    if record:
        if rec_idx:
            idx = np.concatenate(rec_idx)
            order = np.argsort(idx, kind="stable")
            out["centers"] = np.concatenate(rec_c)[order]
            out["radii"] = np.concatenate(rec_r)[order]
            counts = np.bincount(idx, minlength=n)
        else:
            out["centers"] = np.zeros((0, d))
            out["radii"] = np.zeros(0)
            counts = np.zeros(n, dtype=np.int64)
        out["offsets"] = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return out


def sdf_batch(prog, x):
    return eval_program(prog, x)
