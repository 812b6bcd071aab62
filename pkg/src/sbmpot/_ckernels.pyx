# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled exit samplers: time stepping and walk on spheres."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, pow, sin, exp, fabs, fmax, fmin, M_PI, INFINITY
from cpython.pycapsule cimport PyCapsule_GetPointer, PyCapsule_IsValid
from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport (random_standard_normal, random_standard_exponential,
                                          random_standard_uniform, random_beta)

cnp.import_array()

cdef enum:
    MAXSTACK = 64
    MAXDIM = 16

cdef enum:
    OP_BALL = 0
    OP_BOX = 1
    OP_ALL = 2
    OP_UNION = 3
    OP_INTER = 4
    OP_DIFF = 5
    OP_ERODE = 6


cdef bitgen_t* _bitgen(object gen) except NULL:
    capsule = gen.bit_generator.capsule
    if not PyCapsule_IsValid(capsule, "BitGenerator"):
        raise ValueError("invalid bit generator")
    return <bitgen_t*> PyCapsule_GetPointer(capsule, "BitGenerator")


cdef struct Prog:
    const int* ops
    const int* iargs
    const double* fargs
    int nops
    const double* balls
    const double* boxes
    int d


cdef double sdf(Prog* p, const double* x) noexcept nogil:
    cdef double stack[MAXSTACK]
    cdef int top = 0, k, i, op, d = p.d
    cdef double acc, v, inner, gap, a, b
    cdef const double* c
    for k in range(p.nops):
        op = p.ops[k]
        if op == OP_BALL:
            c = p.balls + p.iargs[k] * (d + 1)
            acc = 0.0
            for i in range(d):
                v = x[i] - c[i]
                acc += v * v
            stack[top] = c[d] - sqrt(acc)
            top += 1
        elif op == OP_BOX:
            c = p.boxes + p.iargs[k] * 2 * d
            inner = INFINITY
            gap = 0.0
            for i in range(d):
                inner = fmin(inner, fmin(x[i] - c[i], c[d + i] - x[i]))
                v = fmax(fmax(c[i] - x[i], x[i] - c[d + i]), 0.0)
                gap += v * v
            stack[top] = -sqrt(gap) if gap > 0 else inner
            top += 1
        elif op == OP_ALL:
            stack[top] = INFINITY
            top += 1
        elif op == OP_ERODE:
            stack[top - 1] -= p.fargs[k]
        else:
            b = stack[top - 1]
            a = stack[top - 2]
            top -= 1
            if op == OP_UNION:
                stack[top - 1] = fmax(a, b)
            elif op == OP_INTER:
                stack[top - 1] = fmin(a, b)
            else:
                stack[top - 1] = fmin(a, -b)
    return stack[0]


cdef inline double kanter(bitgen_t* bg, double beta) noexcept nogil:
    """One-sided stable variate with E exp(-lam S) = exp(-lam^beta)."""
    cdef double u = 0.0, e, z
    if beta == 0.5:
        # Levy distribution: 1/(2 Z^2) has Laplace transform exp(-sqrt(lam))
        z = random_standard_normal(bg)
        return 0.5 / (z * z)
    while u == 0.0:
        u = M_PI * random_standard_uniform(bg)
    e = random_standard_exponential(bg)
    return sin(beta * u) / pow(sin(u), 1.0 / beta) * pow(sin((1.0 - beta) * u) / e, (1.0 - beta) / beta)


cdef struct Sub:
    int kind            # 0 stable sum, 1 tilted stable
    int nterms
    const double* betas
    const double* scales
    double theta
    long max_tries


cdef double sub_increment(Sub* s, bitgen_t* bg, double dt, int* stalled) noexcept nogil:
    cdef double out = 0.0, draw
    cdef int i
    cdef long tries = 0
    if s.kind == 0:
        for i in range(s.nterms):
            out += pow(s.scales[i] * dt, 1.0 / s.betas[i]) * kanter(bg, s.betas[i])
        return out
    while True:
        draw = pow(dt, 1.0 / s.betas[0]) * kanter(bg, s.betas[0])
        if random_standard_uniform(bg) < exp(-s.theta * draw):
            return draw
        tries += 1
        if tries > s.max_tries:
            stalled[0] = 1
            return draw


cdef inline void set_prog(Prog* p, const int[::1] ops, const int[::1] iargs, const double[::1] fargs,
                          const double[:, ::1] balls, const double[:, ::1] boxes, int d):
    p.ops = &ops[0]
    p.iargs = &iargs[0]
    p.fargs = &fargs[0]
    p.nops = ops.shape[0]
    p.balls = &balls[0, 0] if balls.shape[0] > 0 else NULL
    p.boxes = &boxes[0, 0] if boxes.shape[0] > 0 else NULL
    p.d = d


def timestep_exit(prog, double[:, ::1] x0, double dt, sub, long max_steps, double esc_radius, gen, levels):
    """Euler-free exit sampling: exact increments on a grid of mesh dt.

    levels are observation strides; level l only checks the domain every
    levels[l] steps, so one fine path serves several mesh sizes at once.
    """
    cdef int d = prog.d, n = x0.shape[0], i, k, l
    cdef int nl
    cdef const int[::1] ops = prog.ops
    cdef const int[::1] iargs = prog.iargs
    cdef const double[::1] fargs = prog.fargs
    cdef const double[:, ::1] balls = np.ascontiguousarray(prog.balls)
    cdef const double[:, ::1] boxes = np.ascontiguousarray(prog.boxes)
    cdef Prog p
    set_prog(&p, ops, iargs, fargs, balls, boxes, d)
    cdef long[::1] strides = np.ascontiguousarray(levels, dtype=np.int64)
    nl = strides.shape[0]
    kind, betas_, scales_, theta, max_tries = sub
    cdef double[::1] betas = np.ascontiguousarray(betas_, dtype=float)
    cdef double[::1] scales = np.ascontiguousarray(scales_, dtype=float)
    cdef Sub s
    s.kind = kind
    s.nterms = betas.shape[0]
    s.betas = &betas[0]
    s.scales = &scales[0]
    s.theta = theta
    s.max_tries = max_tries
    cdef bitgen_t* bg = _bitgen(gen)
    pos_arr = np.zeros((n, nl, d))
    steps_arr = np.zeros((n, nl), dtype=np.int64)
    status_arr = np.zeros((n, nl), dtype=np.int8)
    cdef double[:, :, ::1] pos = pos_arr
    cdef long[:, ::1] steps = steps_arr
    cdef signed char[:, ::1] status = status_arr
    cdef double x[MAXDIM]
    cdef double S, sc, r2
    cdef int pending, stalled = 0
    cdef long kk
    with gen.bit_generator.lock:
        with nogil:
            for i in range(n):
                for k in range(d):
                    x[k] = x0[i, k]
                pending = nl
                kk = 0
                while pending > 0:
                    S = sub_increment(&s, bg, dt, &stalled)
                    sc = sqrt(2.0 * S)
                    r2 = 0.0
                    for k in range(d):
                        x[k] += sc * random_standard_normal(bg)
                        r2 += x[k] * x[k]
                    kk += 1
                    if sdf(&p, x) <= 0:
                        for l in range(nl):
                            if steps[i, l] == 0 and kk % strides[l] == 0:
                                steps[i, l] = kk
                                for k in range(d):
                                    pos[i, l, k] = x[k]
                                pending -= 1
                    if pending > 0 and (kk >= max_steps or r2 > esc_radius * esc_radius):
                        for l in range(nl):
                            if steps[i, l] == 0:
                                steps[i, l] = kk
                                status[i, l] = 1 if kk >= max_steps else 2
                                for k in range(d):
                                    pos[i, l, k] = x[k]
                        pending = 0
    if stalled:
        from .errors import TiltingRejectionStalled
        raise TiltingRejectionStalled("tilting acceptance loop exceeded its budget")
    return pos_arr, steps_arr, status_arr


def wos_exit(prog, double[:, ::1] x0, double alpha, double occ_const, double pk_const, long max_steps,
             double esc_radius, gen, double[:, ::1] targets, double[::1] target_eps, bint record):
    """Walk on spheres for the isotropic alpha-stable process.

    Each step jumps from the centre y of the largest inscribed ball B(y, r) to
    y + r B^{-1/2} theta with B ~ Beta(alpha/2, 1 - alpha/2) and theta uniform.
    Returns exit points, step counts, sum of E tau over the visited balls and,
    for every target z, the sum of ball Poisson kernels P_B(y, z) over the
    balls that miss B(z, eps). Balls meeting B(z, eps) are left to the caller,
    which has the recorded walk.
    """
    cdef int d = prog.d, n = x0.shape[0], m = targets.shape[0], i, k, t
    cdef const int[::1] ops = prog.ops
    cdef const int[::1] iargs = prog.iargs
    cdef const double[::1] fargs = prog.fargs
    cdef const double[:, ::1] balls = np.ascontiguousarray(prog.balls)
    cdef const double[:, ::1] boxes = np.ascontiguousarray(prog.boxes)
    cdef Prog p
    set_prog(&p, ops, iargs, fargs, balls, boxes, d)
    cdef bitgen_t* bg = _bitgen(gen)
    pos_arr = np.zeros((n, d))
    steps_arr = np.zeros(n, dtype=np.int64)
    status_arr = np.zeros(n, dtype=np.int8)
    occ_arr = np.zeros(n)
    acc_arr = np.zeros((n, m))
    lastc_arr = np.zeros((n, d))
    lastr_arr = np.zeros(n)
    cdef double[:, ::1] pos = pos_arr
    cdef long[::1] steps = steps_arr
    cdef signed char[::1] status = status_arr
    cdef double[::1] occ = occ_arr
    cdef double[:, ::1] acc = acc_arr
    cdef double[:, ::1] lastc = lastc_arr
    cdef double[::1] lastr = lastr_arr
    cdef long cap = 1024, used = 0
    rec_c_arr = np.zeros((cap if record else 1, d))
    rec_r_arr = np.zeros(cap if record else 1)
    offsets_arr = np.zeros(n + 1, dtype=np.int64)
    cdef double[:, ::1] rec_c = rec_c_arr
    cdef double[::1] rec_r = rec_r_arr
    cdef long[::1] offsets = offsets_arr
    cdef double x[MAXDIM]
    cdef double g[MAXDIM]
    cdef double s, r, rho, nrm, dz2, dz, a2 = alpha / 2.0, ra, esc2 = esc_radius * esc_radius, r2
    cdef long kk
    with gen.bit_generator.lock:
        for i in range(n):
            for k in range(d):
                x[k] = x0[i, k]
            kk = 0
            s = sdf(&p, x)
            while s > 0:
                r2 = 0.0
                for k in range(d):
                    r2 += x[k] * x[k]
                if r2 > esc2:
                    status[i] = 2
                    break
                if kk >= max_steps:
                    status[i] = 1
                    break
                r = s
                ra = pow(r, alpha)
                occ[i] += occ_const * ra
                for t in range(m):
                    dz2 = 0.0
                    for k in range(d):
                        dz = x[k] - targets[t, k]
                        dz2 += dz * dz
                    dz = sqrt(dz2)
                    if dz >= r + target_eps[t]:
                        if dz2 > r * r:
                            acc[i, t] += pk_const * ra * pow(dz2 - r * r, -a2) * pow(dz, -d)
                        else:
                            acc[i, t] = INFINITY
                if record:
                    if used >= cap:
                        cap *= 2
                        rec_c_arr = np.resize(rec_c_arr, (cap, d))
                        rec_r_arr = np.resize(rec_r_arr, cap)
                        rec_c = rec_c_arr
                        rec_r = rec_r_arr
                    for k in range(d):
                        rec_c[used, k] = x[k]
                    rec_r[used] = r
                    used += 1
                for k in range(d):
                    lastc[i, k] = x[k]
                lastr[i] = r
                rho = r / sqrt(random_beta(bg, a2, 1.0 - a2))
                nrm = 0.0
                for k in range(d):
                    g[k] = random_standard_normal(bg)
                    nrm += g[k] * g[k]
                nrm = rho / sqrt(nrm)
                for k in range(d):
                    x[k] += nrm * g[k]
                kk += 1
                s = sdf(&p, x)
            for k in range(d):
                pos[i, k] = x[k]
            steps[i] = kk
            offsets[i + 1] = used
    out = {"pos": pos_arr, "steps": steps_arr, "status": status_arr, "occ": occ_arr, "acc": acc_arr,
           "last_center": lastc_arr, "last_radius": lastr_arr}
    if record:
        out["centers"] = rec_c_arr[:used].copy()
        out["radii"] = rec_r_arr[:used].copy()
        out["offsets"] = offsets_arr
    return out


def sdf_batch(prog, double[:, ::1] x):
    cdef int d = prog.d, n = x.shape[0], i
    cdef const int[::1] ops = prog.ops
    cdef const int[::1] iargs = prog.iargs
    cdef const double[::1] fargs = prog.fargs
    cdef const double[:, ::1] balls = np.ascontiguousarray(prog.balls)
    cdef const double[:, ::1] boxes = np.ascontiguousarray(prog.boxes)
    cdef Prog p
    set_prog(&p, ops, iargs, fargs, balls, boxes, d)
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    for i in range(n):
        out[i] = sdf(&p, &x[i, 0])
    return out_arr
