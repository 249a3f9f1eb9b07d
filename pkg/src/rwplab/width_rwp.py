"""Gaussian widths, robust-width searches, RIP constants and constant algebra.

The width of ``S = rho^-1 B# ∩ S^{N-1}`` is estimated through the support
function of its convex hull, ``max <x, g>`` over ``||x||_2 <= 1`` and
``||x||# <= rho^-1``, averaged over Gaussian draws.  The robust width property
(RWP) at ``(rho, alpha)`` is equivalent to ``||Phi x||_2 >= alpha`` on the
same set, which :func:`rwp_search` probes for counterexamples.
"""

import math
from fractions import Fraction
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator

from ._random import substream
from ._validation import check_positive
from .exceptions import GuardError, InputError, PreconditionError
from .solvers import SensingOperator, _effective_matrix

__all__ = [
    "WidthEstimate", "RwpParams", "RwpReport", "RipReport",
    "width_sample", "gaussian_width_mc", "analytic_width_bound_l1", "top_energy_mc",
    "rwp_search", "RobustWidthSearch", "rip_enumerate", "rip_to_rwp",
    "guarantee_constants", "converse_constants", "cai_zhang_feasible",
    "cai_zhang_threshold", "measurement_budget",
]

# strict margin required of an RWP counterexample after re-evaluation
WITNESS_MARGIN = 1e-9
COMBINATORIAL_GUARD = 10 ** 6


@dataclass(frozen=True)
class WidthEstimate:
    mean: float
    samples: int
    upper_conf: float
    confidence_level: float
    per_sample_solver_tol: float
    std: float = float("nan")

    def as_dict(self):
        return dict(self.__dict__)


@dataclass(frozen=True)
class RwpParams:
    rho: float
    alpha: float

    def __post_init__(self):
        check_positive(self.rho, "rho")
        check_positive(self.alpha, "alpha")


@dataclass
class RwpReport:
    """Outcome of a counterexample search.

    ``no_violation_found`` is evidence only; it never certifies the property.
    """

    verdict: str
    witness: np.ndarray
    min_ratio: float
    restarts: int
    params: RwpParams
    empty_set: bool = False
    witness_ratio: float = float("nan")

    @property
    def violated(self):
        return self.verdict == "violation_found"

    def as_dict(self):
        return {
            "verdict": self.verdict,
            "witness": None if self.witness is None else self.witness.tolist(),
            "witness_ratio": self.witness_ratio,
            "min_ratio": self.min_ratio,
            "restarts": self.restarts,
            "rho": self.params.rho,
            "alpha": self.params.alpha,
            "empty_set": self.empty_set,
        }


@dataclass
class RipReport:
    J: int
    delta_no_squares: float
    delta_squares: float
    worst_support: tuple
    sigma_min: float
    sigma_max: float
    supports_checked: int
    exhaustive: bool = True
    notes: list = field(default_factory=list)

    def as_dict(self):
        d = dict(self.__dict__)
        d["worst_support"] = list(self.worst_support)
        d["lower_bound_only"] = not self.exhaustive
        return d


# -- widths ------------------------------------------------------------------

def width_sample(space, rho, g):
    """``max <x, g>`` over ``||x||_2 <= 1``, ``||x||# <= 1/rho``."""
    rho = check_positive(rho, "rho")
    return space.support_maximizer(g, 1.0 / rho)[1]


def _width_block(space, rho, seed, indices):
    N = space.ambient_dim
    out = np.empty(len(indices))
    for k, i in enumerate(indices):
        g = substream(seed, i).standard_normal(N)
        out[k] = width_sample(space, rho, g)
    return out


def _blocks(n, n_blocks):
    edges = np.linspace(0, n, n_blocks + 1).astype(int)
    return [range(edges[b], edges[b + 1]) for b in range(n_blocks) if edges[b + 1] > edges[b]]


def gaussian_width_mc(space, rho, samples=1000, confidence=0.95, seed=0, n_jobs=1):
    """Monte Carlo Gaussian width of ``rho^-1 B# ∩ S`` with a one-sided bound.

    Sample ``i`` uses its own counter-based substream keyed by ``(seed, i)``
    and the mean is reduced in index order, so the estimate does not depend
    on ``n_jobs``.  ``upper_conf`` adds the Gaussian-concentration deviation
    ``sqrt(2 ln(1/(1-confidence)) / samples)`` (the sample map is 1-Lipschitz).
    """
    samples = check_positive(samples, "samples", integer=True)
    if samples < 2:
        raise InputError("samples must be >= 2")
    if not 0 < confidence < 1:
        raise InputError("confidence must lie in (0, 1)")
    rho = check_positive(rho, "rho")
    n_jobs = n_jobs or 1
    blocks = _blocks(samples, max(1, n_jobs) * 4 if n_jobs != 1 else 1)
    if n_jobs == 1:
        parts = [_width_block(space, rho, seed, b) for b in blocks]
    else:
        parts = Parallel(n_jobs=n_jobs)(delayed(_width_block)(space, rho, seed, b)
                                        for b in blocks)
    vals = np.concatenate(parts)
    mean = float(np.mean(vals))
    dev = math.sqrt(2.0 * math.log(1.0 / (1.0 - confidence)) / samples)
    return WidthEstimate(mean=mean, samples=samples, upper_conf=mean + dev,
                         confidence_level=float(confidence),
                         per_sample_solver_tol=1e-12, std=float(np.std(vals, ddof=1)))


def analytic_width_bound_l1(J, N, c):
    """``c * sqrt(J * ln(c N / J))``; requires ``c N / J > 1``."""
    J = check_positive(J, "J", integer=True)
    N = check_positive(N, "N", integer=True)
    c = check_positive(c, "c")
    if J > N:
        raise InputError(f"J = {J} exceeds N = {N}")
    if c * N / J <= 1:
        raise InputError(f"c*N/J = {c * N / J:g} must exceed 1")
    return c * math.sqrt(J * math.log(c * N / J))


def top_energy_mc(J, N, samples=10000, seed=0):
    """Monte Carlo estimate of ``E ||g_J||_2``, the energy of the J largest
    coordinates of a standard Gaussian vector.  Twice this dominates the l1
    width at ``rho^-1 = sqrt(J)``."""
    J = check_positive(J, "J", integer=True)
    N = check_positive(N, "N", integer=True)
    if J > N:
        raise InputError(f"J = {J} exceeds N = {N}")
    G = substream(seed, 0).standard_normal((samples, N))
    top = -np.sort(-np.abs(G), axis=1)[:, :J]
    return float(np.mean(np.linalg.norm(top, axis=1)))


# -- RWP search --------------------------------------------------------------

def _search_from(space, A, radius, g, max_iters, step):
    """Generalized power iteration maximizing ``||x||^2 - step ||A x||^2``
    over the convex hull; yields every visited point."""
    x, _ = space.support_maximizer(g, radius)
    yield x
    AtA_x = A.T @ (A @ x)
    for _ in range(max_iters):
        x_new, _ = space.support_maximizer(x - step * AtA_x, radius)
        yield x_new
        if np.linalg.norm(x_new - x) <= 1e-12:
            return
        x = x_new
        AtA_x = A.T @ (A @ x)


def _run_restart(space, A, params, radius, start, max_iters, step):
    best_ratio, best_x, witness = np.inf, None, None
    R = 1.0 / params.rho
    for x in _search_from(space, A, radius, start, max_iters, step):
        nx = np.linalg.norm(x)
        if nx < 1e-12:
            continue
        xn = x / nx
        if space.sharp_norm(xn) > R:
            continue
        ratio = float(np.linalg.norm(A @ xn))
        if ratio < best_ratio:
            best_ratio, best_x = ratio, xn
        if (params.alpha - ratio >= WITNESS_MARGIN
                and 1.0 - params.rho * space.sharp_norm(xn) >= WITNESS_MARGIN):
            witness = xn
            break
    return best_ratio, best_x, witness


def rwp_search(operator, space, params, restarts=20, seed=0, max_iters=300, n_jobs=1):
    """Search for ``x`` with ``||Phi x|| < alpha ||x||`` and ``||x|| > rho ||x||#``.

    Each restart runs a power-type ascent of ``||x||^2 - ||Phi x||^2/||Phi||^2``
    over ``conv(rho^-1 B# ∩ S)`` whose linear steps are exact support-function
    maximizers.  The first restart starts from the least singular direction of
    ``Phi``; the rest start from independent Gaussian directions.  A witness is
    reported only if both inequalities hold with margin ``1e-9`` on the
    normalized point.
    """
    op = SensingOperator.coerce(operator)
    if op.N != space.ambient_dim:
        raise InputError(f"operator has {op.N} columns, space has dimension "
                         f"{space.ambient_dim}")
    if not isinstance(params, RwpParams):
        params = RwpParams(*params)
    restarts = check_positive(restarts, "restarts", integer=True)
    R = 1.0 / params.rho
    if space.sphere_min_sharp() > R * (1 - 1e-12):
        return RwpReport("no_violation_found", None, float("inf"), restarts, params,
                         empty_set=True)
    # search slightly inside the sharp ball so witnesses are strict
    radius = R * (1 - 1e-6)
    A = _effective_matrix(space, op.matrix)
    nA = float(np.linalg.norm(A, 2))
    step = 1.0 / nA ** 2 if nA > 0 else 0.0

    starts = []
    _, _, Vt = np.linalg.svd(A, full_matrices=True)
    v_min = space.project(Vt[-1])
    if np.linalg.norm(v_min) < 1e-12:
        v_min = space.project(Vt[min(A.shape[0], A.shape[1]) - 1])
    starts.append(v_min)
    for r in range(1, restarts):
        starts.append(substream(seed, r).standard_normal(space.ambient_dim))

    job = delayed(_run_restart)
    if n_jobs == 1:
        runs = [_run_restart(space, A, params, radius, s, max_iters, step) for s in starts]
    else:
        runs = Parallel(n_jobs=n_jobs)(job(space, A, params, radius, s, max_iters, step)
                                       for s in starts)
    min_ratio = min(r[0] for r in runs)
    for ratio, _, witness in runs:  # first restart in index order wins
        if witness is not None:
            wr = float(np.linalg.norm(A @ witness))
            return RwpReport("violation_found", witness, min_ratio, restarts, params,
                             witness_ratio=wr)
    return RwpReport("no_violation_found", None, float(min_ratio), restarts, params)


class RobustWidthSearch(BaseEstimator):
    """Estimator wrapper around :func:`rwp_search`.

    ``fit(X)`` takes the sensing matrix. After fitting, ``verdict_`` is
    ``"violation_found"`` or ``"no_violation_found"``; ``witness_`` holds the
    counterexample (or ``None``) and ``min_ratio_`` the smallest
    ``||X x||/||x||`` seen on the feasible set.
    """

    def __init__(self, space=None, rho=1.0, alpha=0.5, restarts=20, max_iter=300,
                 random_state=0, n_jobs=1):
        self.space = space
        self.rho = rho
        self.alpha = alpha
        self.restarts = restarts
        self.max_iter = max_iter
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        from .cs_space import WeightedSparsity

        op = SensingOperator.coerce(X)
        space = self.space if self.space is not None else WeightedSparsity.l1(op.N, 1)
        rep = rwp_search(op, space, RwpParams(self.rho, self.alpha), self.restarts,
                         self.random_state, self.max_iter, self.n_jobs)
        self.report_ = rep
        self.verdict_ = rep.verdict
        self.witness_ = rep.witness
        self.min_ratio_ = rep.min_ratio
        self.empty_set_ = rep.empty_set
        self.n_features_in_ = op.N
        return self


# -- RIP ---------------------------------------------------------------------

def _support_sigmas(A, supports):
    sub = A[:, supports]                   # (M, n, J)
    sub = np.moveaxis(sub, 1, 0)           # (n, M, J)
    s = np.linalg.svd(sub, compute_uv=False)
    smax = s[:, 0]
    smin = s[:, -1] if sub.shape[2] <= sub.shape[1] else np.zeros(len(supports))
    return smin, smax


def rip_enumerate(operator, J, mode="exhaustive", samples=10000, seed=0, chunk=4096):
    """Extremal singular values over size-``J`` column supports.

    ``mode="exhaustive"`` visits every support and refuses when there are more
    than one million; ``mode="sample"`` draws ``samples`` random supports and
    the deltas it reports are lower bounds.
    """
    op = SensingOperator.coerce(operator)
    A = op.matrix
    N = op.N
    J = check_positive(J, "J", integer=True)
    if J > N:
        raise InputError(f"J = {J} exceeds N = {N}")
    total = math.comb(N, J)
    if mode == "exhaustive":
        if total > COMBINATORIAL_GUARD:
            raise GuardError(f"C({N},{J}) = {total} supports exceeds the "
                             f"{COMBINATORIAL_GUARD} guard; use mode='sample' "
                             "(reports a lower bound on delta)")
        it = combinations(range(N), J)
        exhaustive = True
    elif mode == "sample":
        rng = substream(seed, 0)
        it = (tuple(sorted(rng.choice(N, J, replace=False))) for _ in range(samples))
        exhaustive = False
    else:
        raise InputError(f"unknown mode {mode!r}")

    glob_min, glob_max = np.inf, -np.inf
    worst, worst_delta, count = None, -np.inf, 0
    while True:
        batch = [s for _, s in zip(range(chunk), it)]
        if not batch:
            break
        sup = np.array(batch)
        smin, smax = _support_sigmas(A, sup)
        delta = np.maximum(smax - 1.0, 1.0 - smin)
        k = int(np.argmax(delta))
        if delta[k] > worst_delta:
            worst_delta, worst = float(delta[k]), tuple(int(i) for i in sup[k])
        glob_min = min(glob_min, float(smin.min()))
        glob_max = max(glob_max, float(smax.max()))
        count += len(batch)
    return RipReport(
        J=J,
        delta_no_squares=max(glob_max - 1.0, 1.0 - glob_min),
        delta_squares=max(glob_max ** 2 - 1.0, 1.0 - glob_min ** 2),
        worst_support=worst,
        sigma_min=glob_min,
        sigma_max=glob_max,
        supports_checked=count,
        exhaustive=exhaustive,
    )


# -- constant algebra --------------------------------------------------------

def rip_to_rwp(J, delta):
    """RWP parameters implied by no-squares RIP of order ``J`` with ``delta < 1/3``.

    ``alpha = 1/3 - delta`` is evaluated in exact rational arithmetic and
    rounded once, so e.g. ``delta = 0.2`` gives exactly ``2/15``.
    """
    J = check_positive(J, "J", integer=True)
    if not 0 <= delta < 1 / 3:
        raise PreconditionError(f"delta = {delta} must satisfy 0 <= delta < 1/3")
    return RwpParams(rho=3 / math.sqrt(J), alpha=float(Fraction(1, 3) - Fraction(delta)))


def guarantee_constants(params, L):
    """``(C0, C1) = (4 rho, 2 / alpha)``, valid when ``rho <= 1/(4L)``."""
    if not isinstance(params, RwpParams):
        params = RwpParams(*params)
    L = check_positive(L, "L")
    if params.rho > 1 / (4 * L):
        raise PreconditionError(f"rho = {params.rho} exceeds 1/(4L) = {1 / (4 * L)}")
    return 4 * params.rho, 2 / params.alpha


def converse_constants(C0, C1):
    """RWP parameters ``(2 C0, 1/(2 C1))`` implied by uniform stable recovery."""
    C0 = check_positive(C0, "C0")
    C1 = check_positive(C1, "C1")
    return RwpParams(rho=2 * C0, alpha=1 / (2 * C1))


def cai_zhang_threshold(t):
    """RIP threshold ``sqrt((t-1)/t)`` at order ``t K``."""
    t = np.asarray(t, dtype=np.float64)
    return np.sqrt((t - 1) / t)


def cai_zhang_feasible(K, t_grid_resolution=1e-3, t_min=4 / 3, t_max=1e4):
    """Is there ``t`` with ``(tK - 3)/(tK + 5) < sqrt((t-1)/t)``?

    The grid covers ``[t_min, t_max]``.  As ``t -> inf`` both sides tend to 1
    with gaps ``8/(tK)`` and ``1/(2t)``, so for ``K < 16`` the inequality holds
    for all large ``t`` and the far end is checked analytically by walking
    ``t`` out geometrically.  Returns ``(feasible, witness_t)``.
    """
    K = check_positive(K, "K", integer=True)
    res = check_positive(t_grid_resolution, "t_grid_resolution")

    def ok(t):
        return (t * K - 3) / (t * K + 5) < cai_zhang_threshold(t)

    n = int(math.ceil((t_max - t_min) / res)) + 1
    step = 1_000_000
    for a in range(0, n, step):
        t = t_min + res * np.arange(a, min(n, a + step))
        t = t[t <= t_max]
        hit = np.flatnonzero(ok(t))
        if hit.size:
            return True, float(t[hit[0]])
    if 8 / K > 0.5:
        t = t_max
        for _ in range(200):
            t *= 2
            if ok(t):
                return True, float(t)
    return False, None


def measurement_budget(scheme, **inputs):
    """Number of measurements and RWP ``alpha`` for a sampling scheme.

    ``gordon``: ``w_est, lam, alpha`` and optional ``C`` (default 1.01 times
    the minimum allowed); ``M = ceil(C w^2)``.
    ``bowling_general``: ``w_est, sigma_max, sigma_min, c0, c1``;
    ``M = ceil(c0 (sigma_max/sigma_min)^2 w^2)``, ``alpha = c1 sigma_min sqrt(M)``.
    ``bowling_l1``: ``J, N, v, sigma_min, c0, c1``;
    ``M = ceil(c0 (v / sigma_min^2) J ln N)``, same ``alpha``.
    The constants ``c0, c1, C`` are unspecified absolute constants; callers
    supply them.
    """
    def need(*names):
        missing = [n for n in names if n not in inputs]
        if missing:
            raise InputError(f"{scheme} needs {', '.join(missing)}")
        return [float(inputs[n]) for n in names]

    def ceil(v):
        return int(math.ceil(round(v, 9)))

    if scheme == "gordon":
        w, lam, alpha = need("w_est", "lam", "alpha")
        check_positive(lam, "lam")
        check_positive(alpha, "alpha")
        k = 1 + 1 / math.sqrt(lam)
        if alpha >= 1 / k:
            raise PreconditionError(f"alpha = {alpha} must be < 1/(1+1/sqrt(lam)) = {1 / k}")
        C_min = 1 / (1 - k * alpha) ** 2
        C = float(inputs.get("C", 1.01 * C_min))
        if C <= C_min:
            raise PreconditionError(f"C = {C} must exceed {C_min}")
        return ceil(C * w * w), alpha
    if scheme == "bowling_general":
        w, smax, smin, c0, c1 = need("w_est", "sigma_max", "sigma_min", "c0", "c1")
        for v, nm in ((smax, "sigma_max"), (smin, "sigma_min"), (c0, "c0"), (c1, "c1")):
            check_positive(v, nm)
        if smin > smax:
            raise PreconditionError("sigma_min exceeds sigma_max")
        M = ceil(c0 * (smax / smin) ** 2 * w * w)
        return M, c1 * smin * math.sqrt(M)
    if scheme == "bowling_l1":
        J, N, v, smin, c0, c1 = need("J", "N", "v", "sigma_min", "c0", "c1")
        for val, nm in ((J, "J"), (N, "N"), (v, "v"), (smin, "sigma_min"), (c0, "c0"),
                        (c1, "c1")):
            check_positive(val, nm)
        if J > N:
            raise PreconditionError(f"J = {J} exceeds N = {N}")
        M = ceil(c0 * (v / smin ** 2) * J * math.log(N))
        return M, c1 * smin * math.sqrt(M)
    raise InputError(f"unknown scheme {scheme!r}")
