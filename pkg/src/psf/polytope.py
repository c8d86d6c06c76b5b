"""H-representation polytopes and the set operations used by the tube design.

Every query goes through support functions evaluated by LP, so Minkowski sums
of linear images (the tube sets) never have to be built explicitly.
"""
from __future__ import annotations

import json
import logging

import numpy as np

from .convex_solver import Status, solve_lp
from .errors import EmptyInvariantSet, EmptySet, NotConverged, SamplingFailed, Unbounded

log = logging.getLogger(__name__)

POINT_TOL = 1e-9
RPI_TOL = 1e-9


class HalfspacePolytope:
    """The set ``{x : A x <= b}``. Treated as immutable."""

    def __init__(self, A, b):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).ravel()
        if A.shape[0] != b.shape[0]:
            raise ValueError(f"A has {A.shape[0]} rows but b has {b.shape[0]} entries")
        if A.shape[0] and np.any(np.all(A == 0, axis=1)):
            raise ValueError("rows of A must be nonzero")
        A.setflags(write=False)
        b.setflags(write=False)
        self.A = A
        self.b = b
        self._box = self._box_bounds()

    @classmethod
    def box(cls, lb, ub) -> "HalfspacePolytope":
        lb = np.atleast_1d(np.asarray(lb, dtype=float))
        ub = np.atleast_1d(np.asarray(ub, dtype=float))
        n = lb.size
        return cls(np.vstack([np.eye(n), -np.eye(n)]), np.r_[ub, -lb])

    @classmethod
    def symmetric_box(cls, half_widths) -> "HalfspacePolytope":
        h = np.atleast_1d(np.asarray(half_widths, dtype=float))
        return cls.box(-h, h)

    @classmethod
    def origin(cls, n) -> "HalfspacePolytope":
        return cls.box(np.zeros(n), np.zeros(n))

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    def __repr__(self):
        return f"HalfspacePolytope(dim={self.dim}, rows={self.n_rows})"

    # -- boxes get closed-form support -------------------------------------

    def _box_bounds(self):
        if self.A.shape[0] == 0:
            return None
        nz = self.A != 0
        if not np.all(nz.sum(axis=1) == 1):
            return None
        n = self.dim
        lb = np.full(n, -np.inf)
        ub = np.full(n, np.inf)
        for row, off in zip(self.A, self.b):
            j = int(np.flatnonzero(row)[0])
            bound = off / row[j]
            if row[j] > 0:
                ub[j] = min(ub[j], bound)
            else:
                lb[j] = max(lb[j], bound)
        return lb, ub

    @property
    def is_box(self) -> bool:
        return self._box is not None

    # -- queries -----------------------------------------------------------

    def support(self, d) -> float:
        return support(self, d)

    def is_empty(self) -> bool:
        return is_empty(self)

    def contains_point(self, x, tol=POINT_TOL) -> bool:
        return contains_point(self, x, tol)

    def intersect(self, other: "HalfspacePolytope") -> "HalfspacePolytope":
        return HalfspacePolytope(np.vstack([self.A, other.A]), np.r_[self.b, other.b])

    def linear_preimage(self, M) -> "HalfspacePolytope":
        """``{x : M x in self}``."""
        M = np.atleast_2d(np.asarray(M, dtype=float))
        A = self.A @ M
        keep = np.any(A != 0, axis=1)
        if np.any(self.b[~keep] < 0):
            return HalfspacePolytope(np.vstack([np.eye(M.shape[1])[:1], -np.eye(M.shape[1])[:1]]), [-1.0, -1.0])
        return HalfspacePolytope(A[keep], self.b[keep])

    def bounding_box(self):
        if self._box is not None:
            lb, ub = self._box
            if np.any(lb > ub):
                raise EmptySet("polytope is empty")
            return lb.copy(), ub.copy()
        n = self.dim
        eye = np.eye(n)
        ub = np.array([support(self, eye[j]) for j in range(n)])
        lb = np.array([-support(self, -eye[j]) for j in range(n)])
        return lb, ub

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "b": self.b.tolist()}

    @classmethod
    def from_dict(cls, data) -> "HalfspacePolytope":
        A = np.asarray(data["A"], dtype=float)
        b = np.asarray(data["b"], dtype=float)
        if A.size == 0:
            A = A.reshape(0, int(data.get("dim", 0)))
        return cls(A, b)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "HalfspacePolytope":
        return cls.from_dict(json.loads(text))

    def same_data(self, other: "HalfspacePolytope") -> bool:
        return self.A.shape == other.A.shape and np.array_equal(self.A, other.A) and np.array_equal(self.b, other.b)


class ImplicitSumSet:
    """Minkowski sum ``M_1 P_1 + ... + M_k P_k`` accessed through support queries.

    An empty term list is the singleton ``{0}``; ``dim`` must then be given.
    """

    def __init__(self, terms=(), dim=None):
        terms = tuple((np.atleast_2d(np.asarray(M, dtype=float)), P) for M, P in terms)
        for M, P in terms:
            if M.shape[1] != P.dim:
                raise ValueError(f"map with {M.shape[1]} columns applied to a {P.dim}-dim set")
        if dim is None:
            if not terms:
                raise ValueError("dim required for an empty sum")
            dim = terms[0][0].shape[0]
        self.terms = terms
        self.dim = int(dim)

    def support(self, d) -> float:
        return support_sum(self, d)

    def linear_image(self, M) -> "ImplicitSumSet":
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return ImplicitSumSet([(M @ T, P) for T, P in self.terms], dim=M.shape[0])

    def plus(self, M, P) -> "ImplicitSumSet":
        return ImplicitSumSet(self.terms + ((M, P),), dim=self.dim)


def support(P: HalfspacePolytope, d) -> float:
    """``max_{x in P} d'x``."""
    d = np.asarray(d, dtype=float).ravel()
    if P._box is not None:
        lb, ub = P._box
        if np.any(lb > ub):
            raise EmptySet("polytope is empty")
        if np.any((d > 0) & np.isinf(ub)) or np.any((d < 0) & np.isinf(lb)):
            raise Unbounded("support is unbounded in this direction")
        return float(np.sum(np.where(d > 0, d * ub, 0.0)) + np.sum(np.where(d < 0, d * lb, 0.0)))
    if not np.any(d):
        if is_empty(P):
            raise EmptySet("polytope is empty")
        return 0.0
    res = solve_lp(-d, P.A, P.b)
    if res.status == Status.OPTIMAL:
        return -res.objective_value
    if res.status == Status.INFEASIBLE:
        raise EmptySet("polytope is empty")
    if res.status == Status.UNBOUNDED:
        raise Unbounded("support is unbounded in this direction")
    raise RuntimeError(f"LP backend failed ({res.status.value})")


def support_sum(S: ImplicitSumSet, d) -> float:
    d = np.asarray(d, dtype=float).ravel()
    return float(sum(support(P, M.T @ d) for M, P in S.terms))


def _support_any(Q, d) -> float:
    if isinstance(Q, HalfspacePolytope):
        return support(Q, d)
    return Q.support(d)


def tighten(P: HalfspacePolytope, S) -> HalfspacePolytope:
    """Pontryagin difference ``P - S`` by shifting each halfspace by ``h_S(a_i)``."""
    offsets = np.array([_support_any(S, a) for a in P.A])
    return HalfspacePolytope(P.A, P.b - offsets)


def contains_set(P: HalfspacePolytope, Q) -> tuple[bool, float]:
    """Whether ``Q`` lies in ``P``, with the worst slack ``min_i b_i - h_Q(a_i)``."""
    slacks = P.b - np.array([_support_any(Q, a) for a in P.A])
    worst = float(np.min(slacks)) if slacks.size else np.inf
    return worst >= 0.0, worst


def is_empty(P: HalfspacePolytope) -> bool:
    if P._box is not None:
        lb, ub = P._box
        return bool(np.any(lb > ub))
    if P.n_rows == 0:
        return False
    res = solve_lp(np.zeros(P.dim), P.A, P.b)
    return res.status == Status.INFEASIBLE


def contains_point(P: HalfspacePolytope, x, tol=POINT_TOL) -> bool:
    x = np.asarray(x, dtype=float).ravel()
    return bool(np.all(P.A @ x - P.b <= tol))


def point_violation(P: HalfspacePolytope, x) -> float:
    if P.n_rows == 0:
        return 0.0
    return float(max(np.max(P.A @ np.asarray(x, dtype=float).ravel() - P.b), 0.0))


def _normalized(P: HalfspacePolytope):
    norms = np.linalg.norm(P.A, axis=1)
    return P.A / norms[:, None], P.b / norms


def remove_redundant(P: HalfspacePolytope, tol=1e-10) -> HalfspacePolytope:
    """Drop halfspaces implied by the others (one LP per row).

    Rows are scaled to unit normals and exact duplicates merged first.
    """
    if P.n_rows == 0 or is_empty(P):
        return P
    A, b = _normalized(P)
    # merge parallel duplicates, keeping the tightest offset
    keys = np.round(A, 12)
    order = np.lexsort(np.c_[b, keys].T[::-1])
    kept_idx = []
    seen = {}
    for i in order:
        key = keys[i].tobytes()
        if key in seen:
            continue
        seen[key] = i
        kept_idx.append(i)
    kept_idx.sort()
    A, b = A[kept_idx], b[kept_idx]

    active = np.ones(len(b), dtype=bool)
    for i in range(len(b)):
        active[i] = False
        others_A, others_b = A[active], b[active]
        # cap the tested row so the LP stays bounded
        res = solve_lp(-A[i], np.vstack([others_A, A[i]]), np.r_[others_b, b[i] + 1.0])
        if res.status != Status.OPTIMAL or -res.objective_value > b[i] + tol:
            active[i] = True
    return HalfspacePolytope(A[active], b[active])


def rpi_certificate(Omega: HalfspacePolytope, A_K, W: HalfspacePolytope) -> float:
    """Worst slack of ``A_K Omega + W`` inside ``Omega`` (>= 0 means invariant)."""
    image = ImplicitSumSet([(A_K, Omega), (np.eye(Omega.dim), W)])
    return contains_set(Omega, image)[1]


def max_rpi(A_K, X0: HalfspacePolytope, W: HalfspacePolytope, max_iter=200, tol=RPI_TOL):
    """Maximal robust positive invariant set of ``x+ = A_K x + w`` inside ``X0``.

    Iterates ``Omega <- Omega  ∩  {x : A_K x + W  ⊆ Omega}`` until the
    pre-set no longer cuts anything off. Only pre-images of rows added in the
    previous sweep are tested: pre-images of older rows were already implied
    by a superset of the current iterate.
    """
    A_K = np.atleast_2d(np.asarray(A_K, dtype=float))
    Omega = remove_redundant(X0)
    if Omega.is_empty():
        raise EmptyInvariantSet("constraint set is empty")
    frontier = np.arange(Omega.n_rows)
    rows_at_cleanup = Omega.n_rows
    for k in range(max_iter):
        A_new = Omega.A[frontier] @ A_K
        b_new = Omega.b[frontier] - np.array([support(W, a) for a in Omega.A[frontier]])
        cut = []
        for i, a in enumerate(A_new):
            if not np.any(a):
                if b_new[i] < -tol:
                    raise EmptyInvariantSet(f"iterate {k + 1} is empty")
                continue
            try:
                h = support(Omega, a)
            except Unbounded:
                h = np.inf
            if h > b_new[i] + tol * np.linalg.norm(a):
                cut.append(i)
        if not cut:
            if Omega.n_rows > rows_at_cleanup:
                Omega = remove_redundant(Omega)
            log.debug("max_rpi converged after %d iterations with %d rows", k, Omega.n_rows)
            return Omega
        n_old = Omega.n_rows
        Omega = HalfspacePolytope(np.vstack([Omega.A, A_new[cut]]), np.r_[Omega.b, b_new[cut]])
        if Omega.is_empty():
            raise EmptyInvariantSet(f"iterate {k + 1} is empty")
        frontier = np.arange(n_old, Omega.n_rows)
        if Omega.n_rows >= 2 * rows_at_cleanup:
            Omega, frontier = _remove_redundant_keep(Omega, frontier)
            rows_at_cleanup = Omega.n_rows
    raise NotConverged(f"max_rpi did not converge in {max_iter} iterations")


def _remove_redundant_keep(P: HalfspacePolytope, frontier):
    """Redundancy removal that keeps track of which surviving rows are frontier rows."""
    reduced = remove_redundant(P)
    An, bn = _normalized(P)
    front = set()
    for j, (a, b) in enumerate(zip(reduced.A, reduced.b)):
        match = np.flatnonzero(np.all(np.abs(An - a) <= 1e-12, axis=1) & (np.abs(bn - b) <= 1e-12))
        if np.any(np.isin(match, frontier)):
            front.add(j)
    return reduced, np.array(sorted(front), dtype=int)


def sample(W: HalfspacePolytope, seed=None, mode="vertex", max_attempts=100_000):
    """Draw a point of ``W``. ``seed`` may be an int or a ``numpy.random.Generator``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    lb, ub = W.bounding_box()
    if mode == "vertex":
        signs = rng.choice([-1.0, 1.0], size=W.dim)
        if W.is_box:
            return np.where(signs > 0, ub, lb)
        res = solve_lp(-signs, W.A, W.b)
        if res.status != Status.OPTIMAL:
            raise SamplingFailed(f"vertex LP failed ({res.status.value})")
        return res.x
    if mode == "uniform":
        for _ in range(max_attempts):
            x = rng.uniform(lb, ub)
            if contains_point(W, x):
                return x
        raise SamplingFailed(f"rejection sampling exceeded {max_attempts} attempts")
    raise ValueError(f"unknown sampling mode {mode!r}")
