"""Constructive solid geometry over balls and axis boxes.

Every node exposes a conservative signed distance s(x): positive inside, never
larger than the true distance to the complement, and 1-Lipschitz. Membership is
s(x) > 0, which keeps every domain open. Unions take the max, intersections the
min and differences A minus closed(B) the min of s_A and -s_B.

Literal grammar (whitespace separated numbers):

    ball(c1 c2 ...; r)           open ball
    box(lo1 lo2 ...; hi1 hi2 ...) open box, entries may be inf or -inf
    all(d)                       the whole space R^d
    union(A, B, ...)
    inter(A, B, ...)
    diff(A, B)                   A minus the closure of B
    complement(A)                same as diff(all(d), A)
    erode(A; r)                  points of A deeper than r
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDomain, DomainSyntaxError, SamplingStalled

OP_BALL, OP_BOX, OP_ALL, OP_UNION, OP_INTER, OP_DIFF, OP_ERODE = range(7)


class Node:
    d = 0

    def sdf(self, x):
        raise NotImplementedError

    def radius_bound(self):
        """Upper bound on |x| over the node's set (inf when unbounded)."""
        raise NotImplementedError

    def finite_extent(self):
        """Largest |x| reached by any bounded primitive (for the complement's bounded part)."""
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Ball(Node):
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")

    @property
    def d(self):
        return self.center.size

    def sdf(self, x):
        return self.radius - np.linalg.norm(x - self.center, axis=-1)

    def radius_bound(self):
        return float(np.linalg.norm(self.center) + self.radius)

    finite_extent = radius_bound

    def literal(self):
        return f"ball({_fmt(self.center)}; {_num(self.radius)})"

    def emit(self, prog):
        prog.balls.append(np.append(self.center, self.radius))
        prog.code.append((OP_BALL, len(prog.balls) - 1, 0.0))


@dataclass(frozen=True, eq=False)
class Box(Node):
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float))
        if self.lo.shape != self.hi.shape or np.any(self.hi <= self.lo):
            raise ValueError("box needs lo < hi in every coordinate")

    @property
    def d(self):
        return self.lo.size

    def sdf(self, x):
        inner = np.minimum(np.min(x - self.lo, axis=-1), np.min(self.hi - x, axis=-1))
        gap = np.maximum(np.maximum(self.lo - x, x - self.hi), 0.0)
        outer = np.linalg.norm(gap, axis=-1)
        return np.where(outer > 0, -outer, inner)

    def radius_bound(self):
        return float(np.linalg.norm(np.maximum(np.abs(self.lo), np.abs(self.hi))))

    def finite_extent(self):
        ends = np.concatenate([self.lo, self.hi])
        ends = ends[np.isfinite(ends)]
        return float(np.sqrt(self.d) * np.max(np.abs(ends))) if ends.size else 0.0

    def literal(self):
        return f"box({_fmt(self.lo)}; {_fmt(self.hi)})"

    def emit(self, prog):
        prog.boxes.append(np.concatenate([self.lo, self.hi]))
        prog.code.append((OP_BOX, len(prog.boxes) - 1, 0.0))


@dataclass(frozen=True, eq=False)
class AllSpace(Node):
    dim: int

    @property
    def d(self):
        return self.dim

    def sdf(self, x):
        return np.full(np.shape(x)[:-1], np.inf)

    def radius_bound(self):
        return np.inf

    def finite_extent(self):
        return 0.0

    def literal(self):
        return f"all({self.dim})"

    def emit(self, prog):
        prog.code.append((OP_ALL, 0, 0.0))


@dataclass(frozen=True, eq=False)
class Union(Node):
    parts: tuple

    @property
    def d(self):
        return self.parts[0].d

    def sdf(self, x):
        return np.max([p.sdf(x) for p in self.parts], axis=0)

    def radius_bound(self):
        return max(p.radius_bound() for p in self.parts)

    def finite_extent(self):
        return max(p.finite_extent() for p in self.parts)

    def literal(self):
        return "union(" + ", ".join(p.literal() for p in self.parts) + ")"

    def emit(self, prog):
        self.parts[0].emit(prog)
        for p in self.parts[1:]:
            p.emit(prog)
            prog.code.append((OP_UNION, 0, 0.0))


@dataclass(frozen=True, eq=False)
class Inter(Node):
    parts: tuple

    @property
    def d(self):
        return self.parts[0].d

    def sdf(self, x):
        return np.min([p.sdf(x) for p in self.parts], axis=0)

    def radius_bound(self):
        return min(p.radius_bound() for p in self.parts)

    def finite_extent(self):
        return max(p.finite_extent() for p in self.parts)

    def literal(self):
        return "inter(" + ", ".join(p.literal() for p in self.parts) + ")"

    def emit(self, prog):
        self.parts[0].emit(prog)
        for p in self.parts[1:]:
            p.emit(prog)
            prog.code.append((OP_INTER, 0, 0.0))


@dataclass(frozen=True, eq=False)
class Diff(Node):
    a: Node
    b: Node

    @property
    def d(self):
        return self.a.d

    def sdf(self, x):
        return np.minimum(self.a.sdf(x), -self.b.sdf(x))

    def radius_bound(self):
        return self.a.radius_bound()

    def finite_extent(self):
        return max(self.a.finite_extent(), self.b.finite_extent())

    def literal(self):
        if isinstance(self.a, AllSpace):
            return f"complement({self.b.literal()})"
        return f"diff({self.a.literal()}, {self.b.literal()})"

    def emit(self, prog):
        self.a.emit(prog)
        self.b.emit(prog)
        prog.code.append((OP_DIFF, 0, 0.0))


@dataclass(frozen=True, eq=False)
class Erode(Node):
    a: Node
    r: float

    @property
    def d(self):
        return self.a.d

    def sdf(self, x):
        return self.a.sdf(x) - self.r

    def radius_bound(self):
        return self.a.radius_bound()

    def finite_extent(self):
        return self.a.finite_extent()

    def literal(self):
        return f"erode({self.a.literal()}; {_num(self.r)})"

    def emit(self, prog):
        self.a.emit(prog)
        prog.code.append((OP_ERODE, 0, float(self.r)))


def erode(node, r):
    """Erosion with the obvious simplification for a single ball."""
    if isinstance(node, Ball):
        if r >= node.radius:
            raise DegenerateDomain(f"erosion by {r} empties ball of radius {node.radius}")
        return Ball(node.center, node.radius - r)
    return Erode(node, float(r))


def _num(v):
    v = float(v)
    if np.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v) if v != int(v) else str(int(v))


def _fmt(arr):
    return " ".join(_num(v) for v in arr)


# compiled form consumed by the sampling kernels

@dataclass
class _ProgBuilder:
    code: list = field(default_factory=list)
    balls: list = field(default_factory=list)
    boxes: list = field(default_factory=list)


@dataclass(frozen=True)
class Program:
    """Postfix program for the signed distance, evaluated by a stack machine."""
    d: int
    ops: np.ndarray
    iargs: np.ndarray
    fargs: np.ndarray
    balls: np.ndarray
    boxes: np.ndarray
    depth: int

    def __reduce__(self):
        return (Program, (self.d, self.ops, self.iargs, self.fargs, self.balls, self.boxes, self.depth))


def compile_program(node):
    b = _ProgBuilder()
    node.emit(b)
    d = node.d
    ops = np.array([c[0] for c in b.code], dtype=np.int32)
    depth, cur = 0, 0
    for op in ops:
        cur += 1 if op in (OP_BALL, OP_BOX, OP_ALL) else (-1 if op in (OP_UNION, OP_INTER, OP_DIFF) else 0)
        depth = max(depth, cur)
    return Program(
        d=d,
        ops=ops,
        iargs=np.array([c[1] for c in b.code], dtype=np.int32),
        fargs=np.array([c[2] for c in b.code], dtype=float),
        balls=np.array(b.balls, dtype=float).reshape(-1, d + 1),
        boxes=np.array(b.boxes, dtype=float).reshape(-1, 2 * d),
        depth=depth,
    )


def eval_program(prog, x):
    """Reference numpy interpreter of a compiled program."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = prog.d
    stack = []
    for op, ia, fa in zip(prog.ops, prog.iargs, prog.fargs):
        if op == OP_BALL:
            c = prog.balls[ia]
            stack.append(c[d] - np.linalg.norm(x - c[:d], axis=1))
        elif op == OP_BOX:
            stack.append(Box(prog.boxes[ia, :d], prog.boxes[ia, d:]).sdf(x))
        elif op == OP_ALL:
            stack.append(np.full(x.shape[0], np.inf))
        elif op == OP_ERODE:
            stack[-1] = stack[-1] - fa
        else:
            b = stack.pop()
            a = stack.pop()
            stack.append(np.maximum(a, b) if op == OP_UNION else np.minimum(a, b) if op == OP_INTER else np.minimum(a, -b))
    return stack[0]


# domains

class Domain:
    """An open subset of R^d given by a CSG tree."""

    def __init__(self, tree):
        self.tree = tree
        self.d = tree.d
        self.bounding_radius = tree.radius_bound()
        self.bounded = bool(np.isfinite(self.bounding_radius))
        self.complement_radius = tree.finite_extent()
        self.program = compile_program(tree)

    @classmethod
    def parse(cls, text):
        return cls(parse_domain(text))

    @property
    def literal(self):
        return self.tree.literal()

    def __repr__(self):
        return f"Domain({self.literal!r})"

    def __reduce__(self):
        return (Domain, (self.tree,))

    @property
    def is_ball(self):
        return isinstance(self.tree, Ball)

    def sdf(self, x):
        return self.tree.sdf(np.asarray(x, dtype=float))

    def contains(self, x):
        return self.sdf(x) > 0

    def dist_to_complement(self, x):
        return np.maximum(self.sdf(x), 0.0)

    @property
    def distance_exact(self):
        """True when dist_to_complement is exact rather than a lower bound."""
        return isinstance(self.tree, (Ball, Box))

    def sample_box(self):
        R = self.bounding_radius if self.bounded else self.complement_radius
        return -R * np.ones(self.d), R * np.ones(self.d)

    def deep_point(self, n=4096, seed=0):
        """Approximate Chebyshev centre: the sampled point with largest depth."""
        if isinstance(self.tree, Ball):
            return self.tree.center.copy()
        rng = np.random.default_rng(seed)
        lo, hi = self.sample_box()
        pts = rng.uniform(lo, hi, size=(n, self.d))
        s = self.sdf(pts)
        best = pts[np.argmax(s)]
        step = (hi - lo).max() / n ** (1 / self.d)
        for _ in range(40):
            cand = best + step * rng.standard_normal((64, self.d))
            sc = self.sdf(cand)
            if sc.max() > self.sdf(best):
                best = cand[np.argmax(sc)]
            else:
                step *= 0.7
        if not self.sdf(best) > 0:
            raise DegenerateDomain("no interior point found")
        return best


def ball_domain(center, radius):
    return Domain(Ball(np.asarray(center, dtype=float), float(radius)))


def contains(domain, x):
    return domain.contains(x)


def dist_to_complement(domain, x):
    return domain.dist_to_complement(x)


def _gradient(domain, x, h=1e-6):
    g = np.empty_like(x)
    for k in range(x.shape[1]):
        e = np.zeros(x.shape[1])
        e[k] = h
        g[:, k] = (domain.sdf(x + e) - domain.sdf(x - e)) / (2 * h)
    return g


def boundary_sample(domain, n, rng, h=None, max_batches=200):
    """Approximately uniform points on the boundary, just outside the domain.

    Points are rejection sampled from the shell |s| < h and pushed onto the
    zero level set along the gradient of s, then nudged so that s <= 0.
    """
    lo, hi = domain.sample_box()
    if not np.all(np.isfinite(hi - lo)):
        raise SamplingStalled("boundary sampling needs a bounded domain or complement")
    if h is None:
        h = 1e-2 * float(np.max(hi - lo))
    lo, hi = lo - h, hi + h
    out = []
    got = 0
    batch = max(4 * n, 4096)
    for _ in range(max_batches):
        pts = rng.uniform(lo, hi, size=(batch, domain.d))
        s = domain.sdf(pts)
        pts = pts[np.abs(s) < h]
        if pts.size:
            for _ in range(4):
                g = _gradient(domain, pts)
                gn = np.maximum(np.sum(g * g, axis=1), 1e-12)
                pts = pts - (domain.sdf(pts) / gn)[:, None] * g
            s = domain.sdf(pts)
            pts = pts[(s <= 0) & (s > -h)]
            out.append(pts)
            got += len(pts)
        if got >= n:
            break
    if got < n:
        raise SamplingStalled(f"only {got} of {n} boundary points after {max_batches} batches")
    pts = np.concatenate(out)[:n]
    return pts


@dataclass
class Exhaustion:
    stages: list
    erosions: list
    radii: list
    margins: list

    def __len__(self):
        return len(self.stages)


def default_exhaustion(domain, n_stages, r1=None, ratio=0.1, truncation=None, n_check=2000, seed=0):
    """Stages {x in D : delta_D(x) > r_k} intersected with B(0, R_k).

    r_k = r1 ratio^{k-1}; r1 defaults to half the depth of the deep point. For
    bounded domains the clipping ball is omitted; otherwise R_k = truncation 2^{k-1}.
    """
    if not domain.bounded and truncation is None:
        raise DegenerateDomain("unbounded domains need a truncation radius")
    if r1 is None:
        r1 = 0.5 * float(domain.sdf(domain.deep_point()))
    rng = np.random.default_rng(seed)
    stages, erosions, radii = [], [], []
    for k in range(n_stages):
        rk = r1 * ratio ** k
        node = erode(domain.tree, rk)
        Rk = np.inf
        if not domain.bounded:
            Rk = truncation * 2 ** k
            node = Inter((node, Ball(np.zeros(domain.d), Rk)))
        stage = Domain(node)
        if not np.any(stage.sdf(_interior_cloud(domain, rng)) > 0):
            raise DegenerateDomain(f"exhaustion stage {k + 1} is empty")
        stages.append(stage)
        erosions.append(rk)
        radii.append(Rk)
    margins = []
    for k in range(n_stages - 1):
        pts = boundary_sample(stages[k], n_check, rng)
        margins.append(float(np.min(stages[k + 1].sdf(pts))))
        if not margins[-1] > 0:
            raise DegenerateDomain(f"stage {k + 1} is not compactly inside stage {k + 2}")
    return Exhaustion(stages, erosions, radii, margins)


def _interior_cloud(domain, rng, n=4096):
    lo, hi = domain.sample_box()
    return rng.uniform(lo, hi, size=(n, domain.d))


# literal parser

class _Parser:
    def __init__(self, text):
        self.text = text
        self.pos = 0

    def error(self, msg):
        raise DomainSyntaxError(msg, self.text, self.pos)

    def skip(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self):
        self.skip()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch):
        if self.peek() != ch:
            self.error(f"expected {ch!r}")
        self.pos += 1

    def word(self):
        self.skip()
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos].isalpha():
            self.pos += 1
        if start == self.pos:
            self.error("expected a shape name")
        return self.text[start:self.pos]

    def numbers(self, stop):
        vals = []
        while True:
            self.skip()
            start = self.pos
            while self.pos < len(self.text) and not self.text[self.pos].isspace() and self.text[self.pos] not in stop:
                self.pos += 1
            tok = self.text[start:self.pos]
            if not tok:
                break
            try:
                vals.append(float(tok))
            except ValueError:
                self.pos = start
                self.error(f"bad number {tok!r}")
        if not vals:
            self.error("expected numbers")
        return vals

    def expr(self, dim=None):
        start = self.pos
        name = self.word().lower()
        self.expect("(")
        if name == "ball":
            c = self.numbers(";)")
            self.expect(";")
            self.skip()
            at = self.pos
            r = self.numbers(")")
            if len(r) != 1 or not r[0] > 0:
                self.pos = at
                self.error("ball radius must be one positive number")
            node = Ball(np.array(c), r[0])
        elif name == "box":
            self.skip()
            at = self.pos
            lo = self.numbers(";)")
            self.expect(";")
            hi = self.numbers(")")
            if len(lo) != len(hi) or any(b <= a for a, b in zip(lo, hi)):
                self.pos = at
                self.error("box corners must have equal length with lo < hi")
            node = Box(np.array(lo), np.array(hi))
        elif name == "all":
            self.skip()
            at = self.pos
            v = self.numbers(")")
            if len(v) != 1 or v[0] != int(v[0]) or v[0] < 2:
                self.pos = at
                self.error("all() takes one integer dimension >= 2")
            node = AllSpace(int(v[0]))
        elif name in ("union", "inter"):
            parts = [self.expr()]
            while self.peek() == ",":
                self.pos += 1
                parts.append(self.expr())
            node = Union(tuple(parts)) if name == "union" else Inter(tuple(parts))
        elif name == "diff":
            a = self.expr()
            self.expect(",")
            b = self.expr()
            node = Diff(a, b)
        elif name == "complement":
            a = self.expr()
            node = Diff(AllSpace(a.d), a)
        elif name == "erode":
            a = self.expr()
            self.expect(";")
            self.skip()
            at = self.pos
            r = self.numbers(")")
            if len(r) != 1 or not r[0] > 0:
                self.pos = at
                self.error("erosion radius must be one positive number")
            node = erode(a, r[0])
        else:
            self.pos = start
            self.error(f"unknown shape {name!r}")
        self.expect(")")
        dims = {p.d for p in _children(node)} | {node.d}
        if len(dims) != 1:
            self.pos = start
            self.error("mixed dimensions")
        if node.d < 2:
            self.pos = start
            self.error("dimension must be at least 2")
        return node


def _children(node):
    if isinstance(node, (Union, Inter)):
        return node.parts
    if isinstance(node, Diff):
        return (node.a, node.b)
    if isinstance(node, Erode):
        return (node.a,)
    return ()


def parse_domain(text):
    p = _Parser(text)
    node = p.expr()
    if p.peek():
        p.error("trailing characters")
    return node
