"""Subspaces, the gap metric and width-property checks on null spaces.

When ``Phi Phi^T = I`` the robust width property of ``Phi`` is the statement
that every subspace within gap ``alpha`` of ``ker Phi`` has the width property
``||x||_2 <= rho ||x||#``.  This module provides the pieces to probe that
equivalence numerically.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linprog

from ._random import substream
from ._validation import as_vector, check_positive
from .cs_space import WeightedSparsity
from .exceptions import InputError, PreconditionError, RwpLabError
from .solvers import DecodeProblem, SensingOperator, SolverConfig, decode
from .width_rwp import RwpParams, rwp_search

__all__ = [
    "Subspace", "random_subspace", "null_space", "gap_metric", "min_max_correlation",
    "in_thickened_set", "construct_nearby_subspace", "WidthPropertyReport",
    "width_property_check", "HarnessReport", "rwp_ball_harness",
]

ORTHO_TOL = 1e-10


def _sign_fix(Q):
    # largest-magnitude entry of each column made positive
    if Q.shape[1] == 0:
        return Q
    idx = np.argmax(np.abs(Q), axis=0)
    signs = np.sign(Q[idx, np.arange(Q.shape[1])])
    signs[signs == 0] = 1.0
    return Q * signs


class Subspace:
    """A subspace of ``R^N`` held as an orthonormal basis (columns)."""

    def __init__(self, basis, check=True):
        B = np.asarray(basis, dtype=np.float64)
        if B.ndim != 2:
            raise InputError("basis must be a 2-d array (N x dim)")
        if check and B.shape[1] and np.abs(B.T @ B - np.eye(B.shape[1])).max() > ORTHO_TOL:
            raise InputError("basis columns are not orthonormal")
        self.basis = B

    @classmethod
    def span(cls, vectors, rtol=1e-10):
        """Span of the columns of ``vectors`` (QR with column pivoting)."""
        V = np.asarray(vectors, dtype=np.float64)
        if V.ndim == 1:
            V = V[:, None]
        if V.shape[1] == 0:
            return cls(np.zeros((V.shape[0], 0)), check=False)
        Q, R, _ = sla.qr(V, mode="economic", pivoting=True)
        d = np.abs(np.diag(R))
        r = int(np.sum(d > rtol * d[0])) if d.size and d[0] > 0 else 0
        return cls(_sign_fix(Q[:, :r]), check=False)

    @property
    def N(self):
        return self.basis.shape[0]

    @property
    def dim(self):
        return self.basis.shape[1]

    @property
    def projector(self):
        return self.basis @ self.basis.T

    def project(self, x):
        return self.basis @ (self.basis.T @ x)

    def complement(self):
        if self.dim == 0:
            return Subspace(np.eye(self.N), check=False)
        Q, _ = np.linalg.qr(self.basis, mode="complete")
        return Subspace(_sign_fix(Q[:, self.dim:]), check=False)

    def contains(self, x, tol=1e-9):
        x = np.asarray(x, dtype=np.float64)
        return np.linalg.norm(x - self.project(x)) <= tol * max(1.0, np.linalg.norm(x))

    def __repr__(self):
        return f"Subspace(N={self.N}, dim={self.dim})"


def random_subspace(N, dim, seed=0):
    """Uniform draw from the Grassmannian of ``dim``-planes in ``R^N``."""
    N = check_positive(N, "N", integer=True)
    dim = check_positive(dim, "dim", strict=False, integer=True)
    if dim > N:
        raise InputError(f"dim = {dim} exceeds N = {N}")
    return Subspace.span(substream(seed).standard_normal((N, dim)))


def null_space(operator, rtol=1e-10):
    A = SensingOperator.coerce(operator).matrix
    return Subspace(_sign_fix(sla.null_space(A, rcond=rtol)), check=False)


def _same_ambient(X, Y):
    if X.N != Y.N:
        raise InputError(f"ambient dimensions differ: {X.N} vs {Y.N}")


def gap_metric(X, Y, cross_check=True):
    """``||P_X - P_Y||_2``.

    For subspaces of equal dimension the value also equals
    ``||P_{Y^perp} P_X||_2``; with ``cross_check`` the two are compared and a
    disagreement above ``1e-9`` raises.
    """
    _same_ambient(X, Y)
    # both orders, so the result is bitwise symmetric in (X, Y)
    diff = X.projector - Y.projector
    d = max(float(np.linalg.norm(diff, 2)), float(np.linalg.norm(-diff, 2)))
    if cross_check and X.dim == Y.dim and X.dim:
        alt = X.basis - Y.basis @ (Y.basis.T @ X.basis)
        d2 = float(np.linalg.norm(alt, 2))
        if abs(d - d2) > 1e-9:
            raise RwpLabError(f"gap metric cross-check failed: {d} vs {d2}")
    return min(d, 1.0)


def min_max_correlation(X, Y):
    """``min over unit x in X of ||P_Y x||_2`` (least singular value of ``U_Y^T U_X``)."""
    _same_ambient(X, Y)
    if X.dim == 0:
        raise InputError("X is the zero subspace")
    if Y.dim < X.dim:
        return 0.0
    s = np.linalg.svd(Y.basis.T @ X.basis, compute_uv=False)
    return float(min(s[-1], 1.0))


def in_thickened_set(Y, x, alpha):
    """``||P_{Y^perp} x|| < alpha ||x||``."""
    x = np.asarray(x, dtype=np.float64)
    return bool(np.linalg.norm(x - Y.project(x)) < alpha * np.linalg.norm(x))


def construct_nearby_subspace(Y, e, alpha):
    """``X = (Y ∩ e^perp) + span{e}``: same dimension as ``Y``, contains ``e``
    and lies within gap ``alpha`` of ``Y``."""
    e = as_vector(e, Y.N, "e")
    ne = np.linalg.norm(e)
    if ne == 0:
        raise PreconditionError("e must be nonzero")
    off = np.linalg.norm(e - Y.project(e))
    if not off < alpha * ne:
        raise PreconditionError(f"||P_(Y^perp) e|| = {off:.6g} is not < alpha*||e|| = "
                                f"{alpha * ne:.6g}")
    if alpha > 1:
        raise PreconditionError(f"alpha*||e|| = {alpha * ne:.6g} exceeds ||e|| = {ne:.6g}")
    u = e / ne
    c = Y.basis.T @ u
    # orthonormal basis of c^perp inside coefficient space
    Q, _ = np.linalg.qr(c[:, None], mode="complete")
    Z = Y.basis @ Q[:, 1:]
    X = Subspace.span(np.column_stack([Z, u]))
    if X.dim != Y.dim or not X.contains(u) or not gap_metric(X, Y) < alpha:
        raise RwpLabError("nearby-subspace construction failed numerically")
    return X


# -- width property ----------------------------------------------------------

@dataclass
class WidthPropertyReport:
    """``holds_empirically`` is ``True`` when no ``x`` in the subspace with
    ``||x||_2 > rho ||x||#`` was found (exact on the grid path, heuristic
    otherwise)."""

    holds_empirically: bool
    violation: np.ndarray
    max_ratio: float
    rho: float
    method: str

    def as_dict(self):
        return {
            "holds_empirically": self.holds_empirically,
            "violation": None if self.violation is None else self.violation.tolist(),
            "max_ratio": self.max_ratio,
            "rho": self.rho,
            "method": self.method,
        }


def _grid_coefficients(dim, res):
    if dim == 1:
        return np.ones((1, 1))
    if dim == 2:
        t = np.arange(0.0, np.pi, res)
        return np.column_stack([np.cos(t), np.sin(t)])
    th = np.arange(0.0, np.pi / 2 + res, res)     # hemisphere suffices (x ~ -x)
    ph = np.arange(0.0, 2 * np.pi, res)
    T, P = np.meshgrid(th, ph, indexing="ij")
    return np.column_stack([(np.sin(T) * np.cos(P)).ravel(), (np.sin(T) * np.sin(P)).ravel(),
                            np.cos(T).ravel()])


def _min_sharp_on_hyperplane(space, Y, x0):
    """``argmin ||x||#`` over ``x in Y`` with ``<x, x0> = 1``."""
    U = Y.basis
    a = U.T @ x0
    if isinstance(space, WeightedSparsity):
        N, d = U.shape
        w = space.weights
        # variables (c, t): min w.t  s.t.  -t <= U c <= t,  a.c = 1
        cost = np.concatenate([np.zeros(d), w])
        A_ub = np.block([[U, -np.eye(N)], [-U, -np.eye(N)]])
        b_ub = np.zeros(2 * N)
        A_eq = np.concatenate([a, np.zeros(N)])[None, :]
        bounds = [(None, None)] * d + [(0, None)] * N
        res = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0], bounds=bounds,
                      method="highs")
        if res.status != 0:
            return None
        return U @ res.x[:d]
    # generic: equality-constrained decode in the coordinates of Y
    comp = Y.complement()
    Phi = np.vstack([comp.basis.T, x0[None, :]])
    y = np.zeros(Phi.shape[0])
    y[-1] = 1.0
    res = decode(DecodeProblem(space, Phi, y, 0.0), SolverConfig(max_iters=20000))
    return Y.project(res.x_star)


def _ratio(space, x):
    n2 = np.linalg.norm(x)
    s = space.sharp_norm(x)
    return np.inf if s == 0 and n2 > 0 else (n2 / s if n2 > 0 else 0.0)


def width_property_check(Y, space, rho, restarts=10, seed=0, max_rounds=50,
                         grid_res=None):
    """Search ``Y`` for ``x`` with ``||x||_2 > rho ||x||#``.

    ``||x||_2/||x||#`` is maximized over the unit sphere of ``Y``.  For
    ``dim(Y) <= 3`` a dense grid over that sphere is scanned first.  Each
    start is then refined by the ascent ``x <- argmin{||u||# : u in Y,
    <u, x> = 1}``, which never decreases the ratio.  Starts are the grid
    optimum, the projections of the coordinate axes with the largest
    ratios, and ``restarts`` Gaussian directions.
    """
    rho = check_positive(rho, "rho")
    if Y.dim == 0:
        return WidthPropertyReport(True, None, 0.0, rho, "trivial")
    if Y.N != space.ambient_dim:
        raise InputError(f"subspace lives in R^{Y.N}, space has dimension {space.ambient_dim}")
    starts = []
    method = "ascent"
    if Y.dim <= 3:
        res = grid_res or (1e-3 if Y.dim <= 2 else 1e-2)
        C = _grid_coefficients(Y.dim, res)
        X = C @ Y.basis.T
        s = space.sharp_norm_rows(X)
        with np.errstate(divide="ignore"):
            r = np.where(s > 0, 1.0 / np.where(s > 0, s, 1.0), np.inf)
        starts.append(X[int(np.argmax(r))])
        method = "grid+ascent"
    P = Y.projector
    cols = [P[:, i] for i in range(Y.N) if np.linalg.norm(P[:, i]) > 1e-12]
    cols.sort(key=lambda c: -_ratio(space, c))
    starts.extend(cols[:min(len(cols), max(3, restarts // 2))])
    rng = substream(seed, 1)
    starts.extend(Y.project(rng.standard_normal(Y.N)) for _ in range(restarts))

    best, best_x = -np.inf, None
    for x in starts:
        nx = np.linalg.norm(x)
        if nx < 1e-12:
            continue
        x = x / nx
        r = _ratio(space, x)
        for _ in range(max_rounds):
            if r > 1 / rho * (1 + 1e-6) + 1e-9:
                break  # already a witness with margin
            u = _min_sharp_on_hyperplane(space, Y, x)
            if u is None or np.linalg.norm(u) < 1e-12:
                break
            u = u / np.linalg.norm(u)
            ru = _ratio(space, u)
            if ru <= r * (1 + 1e-10):
                break
            x, r = u, ru
        if r > best:
            best, best_x = r, x
    violated = best_x is not None and np.linalg.norm(best_x) - rho * space.sharp_norm(best_x) >= 1e-9
    return WidthPropertyReport(not violated, best_x if violated else None, float(best), rho,
                               method)


# -- RWP versus gap balls ----------------------------------------------------

@dataclass
class HarnessReport:
    trials: int
    direction1_failures: int
    rwp_verdict: str
    direction2_checked: bool
    direction2_confirmed: bool
    degenerate_alpha: bool
    notes: list = field(default_factory=list)

    def as_dict(self):
        return dict(self.__dict__)


def rwp_ball_harness(Phi, space, rho, alpha, trials=100, seed=0, restarts=10,
                     rwp_restarts=20):
    """Probe both directions of "RWP iff every nearby subspace has WP".

    Direction 1 samples subspaces ``X`` with ``d(X, ker Phi) < alpha`` (via
    :func:`construct_nearby_subspace`) and counts those on which the width
    property check fails.  Direction 2 runs :func:`rwp_search`; when it finds
    a witness, the nearby subspace through the witness must fail the check.
    One representative ``Phi`` per null space is used (``Phi Phi^T = I``).
    """
    op = SensingOperator.coerce(Phi)
    A = op.matrix
    if np.abs(A @ A.T - np.eye(op.M)).max() > 1e-8:
        raise PreconditionError("Phi Phi^T must equal the identity (within 1e-8)")
    rho = check_positive(rho, "rho")
    alpha = check_positive(alpha, "alpha")
    trials = check_positive(trials, "trials", integer=True)
    Y = null_space(op)
    Yp = Y.complement()
    notes = ["one measurement operator per null space (Phi Phi^T = I)"]
    degenerate = alpha > 1
    if degenerate:
        notes.append("alpha > 1: every subspace of matching dimension is within reach")

    failures = 0
    for i in range(trials):
        rng = substream(seed, 2, i)
        if degenerate or Y.dim == 0 or Yp.dim == 0:
            X = random_subspace(op.N, Y.dim, seed=int(rng.integers(2 ** 63))) \
                if degenerate else Y
        else:
            y = Y.project(rng.standard_normal(op.N))
            w = Yp.project(rng.standard_normal(op.N))
            s = alpha * rng.random()
            e = np.sqrt(1 - s * s) * y / np.linalg.norm(y) + s * w / np.linalg.norm(w)
            X = construct_nearby_subspace(Y, e, alpha)
        rep = width_property_check(X, space, rho, restarts=restarts, seed=seed + i)
        failures += not rep.holds_empirically

    rwp = rwp_search(op, space, RwpParams(rho, alpha), restarts=rwp_restarts, seed=seed)
    checked = confirmed = False
    if rwp.violated and alpha <= 1:
        checked = True
        X = construct_nearby_subspace(Y, rwp.witness, alpha)
        x = rwp.witness
        confirmed = X.contains(x) and np.linalg.norm(x) - rho * space.sharp_norm(x) >= 1e-9
        if confirmed:
            confirmed = not width_property_check(X, space, rho, restarts=restarts,
                                                 seed=seed).holds_empirically
    return HarnessReport(trials, failures, rwp.verdict, checked, confirmed, degenerate, notes)
