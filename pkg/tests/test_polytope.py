import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import HalfspaceIntersection

from psf import polytope as pt
from psf.errors import EmptyInvariantSet, EmptySet, NotConverged, Unbounded
from psf.polytope import HalfspacePolytope as HP
from psf.polytope import ImplicitSumSet


def triangle():
    # vertices (0,0), (1,0), (0,1)
    return HP([[-1, 0], [0, -1], [1, 1]], [0, 0, 1])


def vertices_2d(P, interior):
    hs = np.c_[P.A, -P.b]
    return HalfspaceIntersection(hs, np.asarray(interior, dtype=float)).intersections


# -- construction ------------------------------------------------------------

def test_zero_row_rejected():
    with pytest.raises(ValueError):
        HP([[0.0, 0.0]], [1.0])


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        HP([[1.0, 0.0]], [1.0, 2.0])


def test_polytope_is_immutable():
    P = HP.symmetric_box([1.0, 1.0])
    with pytest.raises(ValueError):
        P.b[0] = 5.0


def test_json_round_trip_is_exact():
    P = HP(np.random.default_rng(0).normal(size=(7, 3)), np.random.default_rng(1).uniform(1, 2, 7))
    Q = HP.from_json(P.to_json())
    assert Q.same_data(P)
    assert set(json.loads(P.to_json())) == {"A", "b"}


# -- support -----------------------------------------------------------------

@pytest.mark.parametrize("d, expected", [((1, 0), 1.0), ((1, 1), 2.0)])
def test_support_box(d, expected):
    assert pt.support(HP.symmetric_box([1, 1]), d) == pytest.approx(expected, abs=1e-12)


def test_support_triangle_matches_vertex_enumeration():
    verts = np.array([[0, 0], [1, 0], [0, 1]], dtype=float)
    rng = np.random.default_rng(3)
    P = triangle()
    assert pt.support(P, (1, 1)) == pytest.approx(1.0, abs=1e-9)
    for _ in range(20):
        d = rng.normal(size=2)
        assert pt.support(P, d) == pytest.approx(np.max(verts @ d), abs=1e-9)


def test_support_box_fast_path_agrees_with_lp():
    rng = np.random.default_rng(4)
    box = HP.box([-1, -2, 0.5], [2, 1, 3])
    rotated_rows = HP(np.vstack([box.A, [[1e-3, 1e-3, 1e-3]]]), np.r_[box.b, 100.0])  # not a box
    assert box.is_box and not rotated_rows.is_box
    for _ in range(20):
        d = rng.normal(size=3)
        assert pt.support(box, d) == pytest.approx(pt.support(rotated_rows, d), abs=1e-9)


def test_support_empty_raises():
    with pytest.raises(EmptySet):
        pt.support(HP([[1.0], [-1.0]], [-1.0, -1.0]), [1.0])
    with pytest.raises(EmptySet):
        pt.support(HP([[1.0, 1.0], [-1.0, -1.0]], [-1.0, -1.0]), [1.0, 0.0])


def test_support_unbounded_raises():
    with pytest.raises(Unbounded):
        pt.support(HP([[1.0, 1.0]], [1.0]), [-1.0, 0.0])
    with pytest.raises(Unbounded):
        pt.support(HP([[1.0, 0.0]], [1.0]), [0.0, 1.0])


# -- implicit sums -------------------------------------------------------------

def test_support_sum_empty_is_origin():
    S = ImplicitSumSet([], dim=3)
    assert pt.support_sum(S, [1.0, -2.0, 0.5]) == 0.0


def test_support_sum_two_terms():
    W = HP.symmetric_box([0.1, 0.1, 0.1])
    S = ImplicitSumSet([(np.eye(3), W), (0.5 * np.eye(3), W)])
    assert pt.support_sum(S, [1, 0, 0]) == pytest.approx(0.15, abs=1e-12)


def test_support_sum_single_identity_term():
    P = triangle()
    S = ImplicitSumSet([(np.eye(2), P)])
    for d in ([1, 2], [-1, 0.3]):
        assert pt.support_sum(S, d) == pytest.approx(pt.support(P, d), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(k=st.integers(1, 5), d=st.lists(st.floats(-5, 5), min_size=2, max_size=2))
def test_support_additivity(k, d):
    P = triangle()
    S = ImplicitSumSet([(np.eye(2), P)] * k)
    assert pt.support_sum(S, d) == pytest.approx(k * pt.support(P, d), abs=1e-8)


def test_linear_image_of_sum():
    W = HP.symmetric_box([1.0, 2.0])
    M = np.array([[1.0, 1.0]])
    S = ImplicitSumSet([(np.eye(2), W)]).linear_image(M)
    assert S.dim == 1
    assert pt.support_sum(S, [1.0]) == pytest.approx(3.0)


# -- tighten / contains -------------------------------------------------------

def test_tighten_interval():
    R = pt.tighten(HP.symmetric_box([1.0]), HP.symmetric_box([0.2]))
    assert R.bounding_box()[0] == pytest.approx([-0.8]) and R.bounding_box()[1] == pytest.approx([0.8])


def test_tighten_by_origin_is_identity():
    P = triangle()
    R = pt.tighten(P, ImplicitSumSet([], dim=2))
    assert R.same_data(P)


def test_tighten_to_empty():
    R = pt.tighten(HP.symmetric_box([1, 1]), HP.symmetric_box([1.5, 1.5]))
    assert R.is_empty()


@pytest.mark.parametrize("half, inside, slack", [(0.5, True, 0.5), (1.0, True, 0.0), (1.1, False, -0.1)])
def test_contains_set_boxes(half, inside, slack):
    ok, worst = pt.contains_set(HP.symmetric_box([1, 1]), HP.symmetric_box([half, half]))
    assert ok is inside
    assert worst == pytest.approx(slack, abs=1e-12)


def test_contains_set_empty_inner_raises():
    with pytest.raises(EmptySet):
        pt.contains_set(triangle(), HP([[1.0, 0.0], [-1.0, 0.0]], [-1.0, -1.0]))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_pontryagin_membership(seed):
    rng = np.random.default_rng(seed)
    n = 2
    P = HP.box(-rng.uniform(0.5, 2, n), rng.uniform(0.5, 2, n))
    S = HP.box(-rng.uniform(0, 0.4, n), rng.uniform(0, 0.4, n))
    R = pt.tighten(P, S)
    lb, ub = S.bounding_box()
    corners = np.array(list(itertools.product(*zip(lb, ub))))
    for x in rng.uniform(-2, 2, size=(100, n)):
        if R.contains_point(x):
            for s in np.vstack([corners, rng.uniform(lb, ub, size=(10, n))]):
                assert P.contains_point(x + s)


# -- emptiness, redundancy, points --------------------------------------------

def test_is_empty_contradiction():
    assert pt.is_empty(HP([[1.0], [-1.0]], [-1.0, -1.0]))
    assert not pt.is_empty(triangle())


def test_remove_redundant_interval():
    P = HP([[1.0], [-1.0], [1.0]], [1.0, 1.0, 2.0])
    assert pt.remove_redundant(P).n_rows == 2


def test_remove_redundant_preserves_set_and_is_irredundant():
    rng = np.random.default_rng(7)
    angles = rng.uniform(0, 2 * np.pi, 30)
    A = np.c_[np.cos(angles), np.sin(angles)]
    b = rng.uniform(1.0, 1.5, 30)
    P = HP(A, b)
    R = pt.remove_redundant(P)
    assert R.n_rows < P.n_rows
    v_full = vertices_2d(P, [0, 0])
    v_red = vertices_2d(R, [0, 0])
    for v in v_red:
        assert P.contains_point(v, tol=1e-8)
    for v in v_full:
        assert R.contains_point(v, tol=1e-8)
    # deleting any remaining row strictly enlarges the set
    for i in range(R.n_rows):
        keep = np.arange(R.n_rows) != i
        h = pt.support(HP(np.vstack([R.A[keep], R.A[i]]), np.r_[R.b[keep], R.b[i] + 1.0]), R.A[i])
        assert h > R.b[i] + 1e-9


def test_contains_point():
    assert pt.contains_point(HP.symmetric_box([1, 1]), [0, 0])
    assert not pt.contains_point(HP.symmetric_box([1, 1]), [1.1, 0])
    assert pt.contains_point(HP.symmetric_box([1, 1]), [1 + 5e-10, 0])


# -- maximal RPI --------------------------------------------------------------

def test_max_rpi_scalar_already_invariant():
    Om = pt.max_rpi([[0.5]], HP.symmetric_box([1.0]), HP.symmetric_box([0.1]))
    lb, ub = Om.bounding_box()
    assert lb == pytest.approx([-1.0]) and ub == pytest.approx([1.0])


def test_max_rpi_deadbeat_keeps_constraint_set():
    X0 = HP.box([-1, -2], [3, 1])
    Om = pt.max_rpi(np.zeros((2, 2)), X0, HP.origin(2))
    assert pt.contains_set(Om, X0)[1] >= -1e-12 and pt.contains_set(X0, Om)[1] >= -1e-12


def test_max_rpi_empty():
    with pytest.raises(EmptyInvariantSet):
        pt.max_rpi([[0.5]], HP.symmetric_box([1.0]), HP.symmetric_box([0.6]))


def test_max_rpi_scalar_cut():
    # x+ = -0.9 x + w, w in [-0.05, 0.05], X0 = [-1, 2]: the upper bound c must
    # satisfy -0.9 c - 0.05 >= -1, so c = 0.95 / 0.9; the lower bound stays -1.
    Om = pt.max_rpi([[-0.9]], HP.box([-1.0], [2.0]), HP.symmetric_box([0.05]))
    lb, ub = Om.bounding_box()
    assert lb == pytest.approx([-1.0], abs=1e-9)
    assert ub == pytest.approx([0.95 / 0.9], abs=1e-9)


def test_max_rpi_planar_matches_certificate_and_is_maximal():
    A_K = np.array([[0.9, 0.3], [-0.2, 0.8]])
    X0 = HP.symmetric_box([1.0, 1.0])
    W = HP.symmetric_box([0.02, 0.02])
    Om = pt.max_rpi(A_K, X0, W)
    assert pt.rpi_certificate(Om, A_K, W) >= -1e-8
    assert pt.contains_set(X0, Om)[1] >= -1e-9
    # brute-force oracle: points whose disturbed successors stay in X0 for 60 steps
    # under worst-case vertex disturbances are inside the maximal RPI set
    rng = np.random.default_rng(0)
    corners = np.array(list(itertools.product([-0.02, 0.02], repeat=2)))
    for x in rng.uniform(-1, 1, size=(200, 2)):
        if Om.contains_point(x):
            continue
        # outside Om: some disturbance sequence must leave X0
        frontier = [x]
        left = False
        for _ in range(60):
            nxt = []
            for z in frontier:
                for w in corners:
                    y = A_K @ z + w
                    if not X0.contains_point(y):
                        left = True
                        break
                    nxt.append(y)
                if left:
                    break
            if left or not X0.contains_point(x):
                left = True
                break
            # keep the extreme candidates only
            nxt = np.array(nxt)
            idx = {int(np.argmax(nxt @ d)) for d in np.vstack([np.eye(2), -np.eye(2), corners])}
            frontier = nxt[sorted(idx)]
        assert left, x


def test_max_rpi_iterates_are_nested_and_cap_enforced():
    A_K = np.array([[0.99, 0.1], [-0.1, 0.99]])
    with pytest.raises(NotConverged):
        pt.max_rpi(A_K, HP.symmetric_box([1.0, 1.0]), HP.symmetric_box([1e-3, 1e-3]), max_iter=2)
    Om = pt.max_rpi(A_K, HP.symmetric_box([1.0, 1.0]), HP.symmetric_box([1e-3, 1e-3]))
    assert pt.contains_set(HP.symmetric_box([1.0, 1.0]), Om)[1] >= -1e-9
    assert pt.rpi_certificate(Om, A_K, HP.symmetric_box([1e-3, 1e-3])) >= -1e-8


# -- sampling -----------------------------------------------------------------

def test_sample_origin():
    assert np.all(pt.sample(HP.origin(3), 5) == 0)


def test_sample_box_vertex():
    w = pt.sample(HP.symmetric_box([0.1] * 4), 11, "vertex")
    assert np.allclose(np.abs(w), 0.1)


def test_sample_uniform_reproducible():
    W = HP.symmetric_box([1.0])
    a, b = pt.sample(W, 42, "uniform"), pt.sample(W, 42, "uniform")
    assert a == b and -1 <= a[0] <= 1


def test_sample_vertex_non_box_is_member_and_extreme():
    P = triangle()
    rng = np.random.default_rng(0)
    for _ in range(20):
        w = pt.sample(P, rng, "vertex")
        assert P.contains_point(w)
        assert min(np.linalg.norm(w - v) for v in ([0, 0], [1, 0], [0, 1])) < 1e-8


def test_sample_unknown_mode():
    with pytest.raises(ValueError):
        pt.sample(HP.symmetric_box([1.0]), 0, "gaussian")
