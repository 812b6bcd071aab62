import numpy as np
import pytest
from hypothesis import given, strategies as st

from sbmpot import _backend
from sbmpot.errors import DegenerateDomain, DomainSyntaxError, SamplingStalled
from sbmpot.geometry import (Ball, Box, Diff, Domain, Union, boundary_sample, default_exhaustion, eval_program,
                             parse_domain)


def test_ball_contains_and_sdf():
    D = Domain.parse("ball(0 0; 1)")
    assert D.is_ball and D.bounded and D.d == 2
    x = np.array([[0.0, 0.0], [0.6, 0.0], [1.0, 0.0], [3.0, 4.0]])
    np.testing.assert_allclose(D.sdf(x), [1.0, 0.4, 0.0, -4.0])
    np.testing.assert_array_equal(D.contains(x), [True, True, False, False])
    np.testing.assert_allclose(D.dist_to_complement(x), [1.0, 0.4, 0.0, 0.0])


def test_box_with_infinite_sides():
    D = Domain.parse("box(0 -inf; inf inf)")
    assert not D.bounded
    np.testing.assert_allclose(D.sdf(np.array([[2.0, -7.0], [-0.5, 3.0]])), [2.0, -0.5])


def test_complement_and_diff():
    C = Domain.parse("complement(ball(0 0 0; 1))")
    assert not C.bounded and C.complement_radius == 1.0
    np.testing.assert_allclose(C.sdf(np.array([[3.0, 0, 0], [0.25, 0, 0]])), [2.0, -0.75])
    A = Domain.parse("diff(ball(0 0; 2), ball(0 0; 1))")
    np.testing.assert_array_equal(A.contains(np.array([[1.5, 0], [0.5, 0], [2.5, 0]])), [True, False, False])


def test_union_inter_erode():
    U = Domain.parse("union(ball(-1 0; 1), ball(1 0; 1))")
    assert U.contains(np.array([-1.5, 0.0])) and U.contains(np.array([1.5, 0.0]))
    assert not U.contains(np.array([0.0, 0.9]))
    I = Domain.parse("inter(ball(-0.5 0; 1), ball(0.5 0; 1))")
    assert I.contains(np.zeros(2)) and not I.contains(np.array([-1.2, 0.0]))
    E = Domain.parse("erode(box(-1 -1; 1 1); 0.25)")
    assert E.sdf(np.zeros(2)) == pytest.approx(0.75)
    assert Domain.parse("erode(ball(0 0; 1); 0.25)").is_ball


def test_erode_empties_ball():
    with pytest.raises(DegenerateDomain):
        parse_domain("erode(ball(0 0; 1); 1)")


@pytest.mark.parametrize("text,pos", [
    ("ball(0 0; -1)", 10),
    ("ball(0 0 1)", 10),
    ("blob(0; 1)", 0),
    ("ball(0 x; 1)", 7),
    ("union(ball(0 0; 1), ball(0 0 0; 1))", 0),
    ("ball(0 0; 1) extra", 13),
    ("all(1)", 4),
    ("box(1 1; 0 2)", 4),
    ("erode(ball(0 0; 1); 0 1)", 20),
])
def test_syntax_error_positions(text, pos):
    with pytest.raises(DomainSyntaxError) as e:
        parse_domain(text)
    assert e.value.pos == pos
    assert f"at position {pos}" in str(e.value)


def test_whitespace_and_case_tolerated():
    a = parse_domain("  BALL( 1   2 ;  3 ) ")
    assert a.literal() == "ball(1 2; 3)"


coord = st.floats(-5, 5, allow_nan=False).map(lambda v: round(v, 3))


@st.composite
def trees(draw, depth=2):
    if depth == 0 or draw(st.booleans()):
        if draw(st.booleans()):
            return Ball(np.array([draw(coord), draw(coord)]), draw(st.floats(0.1, 3).map(lambda v: round(v, 3))))
        lo = np.array([draw(coord), draw(coord)])
        return Box(lo, lo + np.array([draw(st.floats(0.1, 3)), draw(st.floats(0.1, 3))]).round(3) + 0.001)
    kind = draw(st.sampled_from(["union", "diff"]))
    a, b = draw(trees(depth=depth - 1)), draw(trees(depth=depth - 1))
    return Union((a, b)) if kind == "union" else Diff(a, b)


pts2 = st.lists(st.tuples(coord, coord), min_size=1, max_size=20).map(np.array)


@given(trees(), pts2)
def test_literal_round_trip(tree, x):
    back = parse_domain(tree.literal())
    assert back.literal() == tree.literal()
    np.testing.assert_allclose(back.sdf(x), tree.sdf(x), rtol=0, atol=1e-12)


@given(trees(), pts2)
def test_program_matches_tree(tree, x):
    D = Domain(tree)
    np.testing.assert_allclose(eval_program(D.program, x), D.sdf(x), rtol=0, atol=1e-12)
    for name in ("python", "compiled"):
        try:
            k = _backend.get(name)
        except ImportError:
            continue
        np.testing.assert_allclose(k.sdf_batch(D.program, x), D.sdf(x), rtol=0, atol=1e-12)


@given(trees(), pts2, pts2)
def test_sdf_is_one_lipschitz(tree, x, y):
    n = min(len(x), len(y))
    x, y = x[:n], y[:n]
    diff = np.abs(tree.sdf(x) - tree.sdf(y))
    assert np.all(diff <= np.linalg.norm(x - y, axis=1) + 1e-9)


@given(trees(), pts2)
def test_distance_is_lower_bound(tree, x):
    # the ball of radius dist around x stays inside the domain
    D = Domain(tree)
    r = D.dist_to_complement(x)
    rng = np.random.default_rng(0)
    u = rng.standard_normal((len(x), 2))
    u /= np.linalg.norm(u, axis=1)[:, None]
    probe = x + 0.999 * r[:, None] * u
    assert np.all(D.contains(probe) | (r == 0))


def test_boundary_sample_on_circle():
    D = Domain.parse("ball(0 0; 1)")
    pts = boundary_sample(D, 4000, np.random.default_rng(1))
    r = np.linalg.norm(pts, axis=1)
    assert np.all(r >= 1) and np.all(r < 1.02)
    # uniform on the circle: first moments vanish, E cos^2 = 1/2
    theta = np.arctan2(pts[:, 1], pts[:, 0])
    assert abs(np.cos(theta).mean()) < 0.05 and abs(np.sin(theta).mean()) < 0.05
    assert np.mean(np.cos(theta) ** 2) == pytest.approx(0.5, abs=0.03)


def test_boundary_sample_unbounded_needs_bounded_part():
    with pytest.raises(SamplingStalled):
        boundary_sample(Domain.parse("box(0 -inf; inf inf)"), 10, np.random.default_rng(0))


def test_exhaustion_ball():
    D = Domain.parse("ball(0 0; 1)")
    ex = default_exhaustion(D, 3)
    np.testing.assert_allclose(ex.erosions, [0.5, 0.05, 0.005])
    assert all(s.is_ball for s in ex.stages)
    np.testing.assert_allclose([s.tree.radius for s in ex.stages], [0.5, 0.95, 0.995])
    assert all(m > 0 for m in ex.margins)


def test_exhaustion_unbounded():
    D = Domain.parse("complement(ball(0 0 0; 1))")
    with pytest.raises(DegenerateDomain):
        default_exhaustion(D, 2)
    ex = default_exhaustion(D, 2, r1=0.5, truncation=4.0)
    assert ex.radii == [4.0, 8.0]
    assert ex.stages[0].bounded
    x = np.array([3.0, 0, 0])
    assert ex.stages[0].contains(x) and ex.stages[1].contains(x)


def test_deep_point_is_interior():
    D = Domain.parse("diff(box(-1 -1; 1 1), ball(0 0; 0.5))")
    p = D.deep_point()
    assert D.sdf(p) > 0.2
