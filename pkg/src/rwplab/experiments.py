"""Recovery experiments that pair the decoder with RWP estimates.

Every trial is keyed by ``(cell, trial)``; its operator seed and signal come
from the substream of that key, so serial and parallel runs produce the same
rows in the same order.
"""

import math
from dataclasses import dataclass, field, asdict

import numpy as np
from joblib import Parallel, delayed

from ._random import substream
from ._validation import as_vector, check_positive
from .cs_space import make_space
from .ensembles import EnsembleSpec, make_operator, spiked
from .exceptions import InputError, PreconditionError
from .solvers import DecodeProblem, SensingOperator, SolverConfig, decode
from .width_rwp import (
    RwpParams, cai_zhang_feasible, cai_zhang_threshold, converse_constants,
    guarantee_constants, rip_enumerate, rip_to_rwp, rwp_search,
)

__all__ = [
    "TrialRecord", "SweepConfig", "ExperimentResult", "make_signal", "run_trial",
    "calibrate_alpha", "forward_experiment", "converse_experiment", "rwp_not_rip_study",
    "TRIAL_FIELDS",
]

SLACK_TOL = 1e-5
DEFAULT_ALPHA_GRID = (0.5, 0.3, 0.2, 0.1, 0.05, 0.02, 0.01)

TRIAL_FIELDS = [
    "cell", "trial", "seed", "model", "M", "N", "K", "epsilon", "rho", "alpha", "C0", "C1",
    "error_l2", "bound_value", "slack", "status", "converged", "iterations", "residual",
    "objective",
]


@dataclass
class TrialRecord:
    seed: int
    model: str
    M: int
    N: int
    K: int
    epsilon: float
    error_l2: float
    bound_value: float
    slack: float
    converged: bool
    iterations: int
    residual: float
    objective: float
    C0: float = float("nan")
    C1: float = float("nan")
    rho: float = float("nan")
    alpha: float = float("nan")
    cell: int = 0
    trial: int = 0
    status: str = "ok"

    @property
    def negative_slack(self):
        return self.status == "ok" and self.slack < -SLACK_TOL

    def as_dict(self):
        return asdict(self)


def make_signal(space, rng, beta=0.5, exact_atom=False):
    """Atom plus a perturbation of sharp norm ``beta`` (skipped for exact atoms).

    Returns ``(x, atom)``.  The distribution is a coverage device only.
    """
    a = space.project(space.random_atom(rng))
    if exact_atom or beta == 0:
        return a, a
    p = space.project(rng.standard_normal(space.ambient_dim))
    s = space.sharp_norm(p)
    if s == 0:
        return a, a
    return a + (beta / s) * p, a


def run_trial(space, operator, x_natural, epsilon, noise_dir, C0, C1, seed=0, config=None,
              atom=None):
    """Decode ``y = Phi x + epsilon * noise_dir`` and compare the error with
    ``C0 ||x - a||# + C1 epsilon`` at ``a = best_atom_approx(x)`` (or ``atom``)."""
    op = SensingOperator.coerce(operator)
    x = space.project(space.check_signal(x_natural, "x_natural"))
    noise_dir = as_vector(noise_dir, op.M, "noise_dir")
    if np.linalg.norm(noise_dir) > 1 + 1e-12:
        raise InputError("noise_dir must have norm at most 1")
    epsilon = check_positive(epsilon, "epsilon", strict=False)
    y = op.forward(x) + epsilon * noise_dir
    res = decode(DecodeProblem(space, op, y, epsilon), config)
    a = space.best_atom_approx(x) if atom is None else atom
    err = float(np.linalg.norm(res.x_star - x))
    bound = float(C0 * space.sharp_norm(x - a) + C1 * epsilon)
    return TrialRecord(
        seed=int(seed), model=space.model, M=op.M, N=op.N, K=space.K, epsilon=float(epsilon),
        error_l2=err, bound_value=bound, slack=bound - err, converged=res.converged,
        iterations=res.iterations, residual=res.residual, objective=res.objective,
        C0=float(C0), C1=float(C1), status="ok" if res.converged else "not_converged",
    )


def calibrate_alpha(operator, space, rho, alpha_grid=DEFAULT_ALPHA_GRID, restarts=10, seed=0):
    """Largest ``alpha`` in the grid at which :func:`rwp_search` finds no
    violation at ``rho``; ``None`` if every grid value is violated."""
    for alpha in sorted(alpha_grid, reverse=True):
        rep = rwp_search(operator, space, RwpParams(rho, alpha), restarts=restarts, seed=seed)
        if not rep.violated:
            return alpha
    return None


@dataclass
class SweepConfig:
    """Grid of forward trials.

    ``rwp`` selects the source of ``(rho, alpha)``:

    * ``{"source": "fixed", "rho": r, "alpha": a}``
    * ``{"source": "search", "rho": r (default 1/(4L)), "alpha_grid": [...],
      "restarts": n}``: per-operator calibration with :func:`calibrate_alpha`
    * ``{"source": "rip", "J": j}``: ``rip_to_rwp(J, delta)`` with ``delta``
      enumerated on each operator
    """

    N: int
    M_list: list
    K_list: list
    eps_list: list = field(default_factory=lambda: [0.0])
    trials: int = 10
    ensemble: str = "orthonormalized"
    model: dict = field(default_factory=lambda: {"model": "l1"})
    beta: float = 0.5
    exact_atom: bool = False
    rwp: dict = field(default_factory=lambda: {"source": "search"})
    seed: int = 0
    max_iters: int = 5000
    tol: float = 1e-7

    def __post_init__(self):
        if not (self.M_list and self.K_list and self.eps_list):
            raise InputError("sweep grid must be nonempty")
        check_positive(self.trials, "trials", integer=True)
        check_positive(self.N, "N", integer=True)
        for e in self.eps_list:
            check_positive(e, "epsilon", strict=False)
        if self.rwp.get("source") not in ("fixed", "search", "rip"):
            raise InputError(f"unknown rwp source {self.rwp.get('source')!r}")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(d) - known
        if unknown:
            raise InputError(f"unknown sweep keys: {', '.join(sorted(unknown))}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise InputError(str(exc)) from exc

    def to_dict(self):
        return asdict(self)

    def cells(self):
        return [(M, K, eps) for M in self.M_list for K in self.K_list for eps in self.eps_list]


@dataclass
class ExperimentResult:
    records: list
    summary: list
    skipped: list
    config: dict

    def rows(self):
        return [r.as_dict() for r in self.records]

    def as_dict(self):
        return {"summary": self.summary, "skipped": self.skipped}


def _space_for(sweep, K):
    params = dict(sweep.model)
    model = params.pop("model", "l1")
    if model not in ("weighted", "weighted_sparsity", "nuclear", "low_rank"):
        params.setdefault("N", sweep.N)
    return make_space(model, K=K, **params)


def _rwp_for(sweep, op, space, seed):
    """``(rho, alpha, status)`` for one operator."""
    src = sweep.rwp["source"]
    L = space.bound_L
    if src == "fixed":
        return float(sweep.rwp["rho"]), float(sweep.rwp["alpha"]), "ok"
    if src == "search":
        rho = float(sweep.rwp.get("rho", 1 / (4 * L)))
        alpha = calibrate_alpha(op, space, rho, sweep.rwp.get("alpha_grid", DEFAULT_ALPHA_GRID),
                                sweep.rwp.get("restarts", 10), seed)
        return rho, alpha, "ok" if alpha is not None else "rwp_not_validated"
    rep = rip_enumerate(op, int(sweep.rwp["J"]))
    if rep.delta_no_squares >= 1 / 3:
        return math.nan, None, "rip_delta_too_large"
    p = rip_to_rwp(rep.J, rep.delta_no_squares)
    return p.rho, p.alpha, "ok"


def _trial_job(sweep, cell_idx, M, K, eps, t):
    rng = substream(sweep.seed, cell_idx, t)
    op_seed = int(rng.integers(2 ** 63))
    space = _space_for(sweep, K)
    op = make_operator(EnsembleSpec(sweep.ensemble, M, sweep.N, op_seed))
    rho, alpha, status = _rwp_for(sweep, op, space, op_seed)
    x, _ = make_signal(space, rng, sweep.beta, sweep.exact_atom)
    noise = rng.standard_normal(M)
    noise /= np.linalg.norm(noise)
    C0 = C1 = math.nan
    if status == "ok":
        try:
            C0, C1 = guarantee_constants(RwpParams(rho, alpha), space.bound_L)
        except PreconditionError:
            status = "rho_above_limit"
    config = SolverConfig(max_iters=sweep.max_iters, tol_primal=sweep.tol, tol_dual=sweep.tol)
    rec = run_trial(space, op, x, eps, noise, C0, C1, seed=op_seed, config=config)
    rec.cell, rec.trial = cell_idx, t
    rec.rho, rec.alpha = rho, math.nan if alpha is None else alpha
    if status != "ok":
        rec.status = status
    return rec


def _summarize(cell_idx, M, K, eps, recs):
    ok = [r for r in recs if r.status == "ok"]
    errs = np.array([r.error_l2 for r in recs])
    return {
        "cell": cell_idx, "M": M, "K": K, "epsilon": eps, "trials": len(recs),
        "validated": len(ok),
        "negative_slack": sum(r.negative_slack for r in recs),
        "nonnegative_slack_fraction": (sum(not r.negative_slack for r in ok) / len(ok)
                                       if ok else None),
        "min_slack": min((r.slack for r in ok), default=None),
        "median_error": float(np.median(errs)),
        "max_error": float(errs.max()),
        "median_bound": (float(np.median([r.bound_value for r in ok])) if ok else None),
        "not_converged": sum(not r.converged for r in recs),
        "statuses": sorted({r.status for r in recs}),
    }


def forward_experiment(sweep, n_jobs=1):
    """Run every ``(M, K, epsilon)`` cell of the sweep.

    Cells with ``rho > 1/(4L)`` under a fixed source are skipped with the
    reason; per-operator failures (unvalidated RWP, RIP constant too large)
    are kept as rows with a non-``ok`` status so they stay visible.
    """
    cells = sweep.cells()
    skipped, jobs = [], []
    for ci, (M, K, eps) in enumerate(cells):
        space = _space_for(sweep, K)
        if sweep.rwp["source"] == "fixed" and float(sweep.rwp["rho"]) > 1 / (4 * space.bound_L):
            skipped.append({"cell": ci, "M": M, "K": K, "epsilon": eps,
                            "reason": f"rho exceeds 1/(4L) = {1 / (4 * space.bound_L):.6g}"})
            continue
        if M > sweep.N and sweep.ensemble == "subsampled_trig":
            skipped.append({"cell": ci, "M": M, "K": K, "epsilon": eps, "reason": "M > N"})
            continue
        jobs.extend((ci, M, K, eps, t) for t in range(sweep.trials))
    if n_jobs == 1:
        recs = [_trial_job(sweep, *j) for j in jobs]
    else:
        recs = Parallel(n_jobs=n_jobs)(delayed(_trial_job)(sweep, *j) for j in jobs)
    summary = []
    for ci, (M, K, eps) in enumerate(cells):
        cell_recs = [r for r in recs if r.cell == ci]
        if cell_recs:
            summary.append(_summarize(ci, M, K, eps, cell_recs))
    return ExperimentResult(recs, summary, skipped, sweep.to_dict())


def converse_experiment(C0, C1, space, operator, restarts=20, seed=0, trials=10, beta=0.5):
    """Check the converse direction on one operator.

    Searches for an RWP violation at ``converse_constants(C0, C1)``.  Forward
    trials use random signals plus, when a witness ``w`` exists, the adversarial
    instance ``x = w`` with noise ``-Phi w`` (measurements identically zero).
    A violation together with nonnegative slack on every trial would contradict
    the converse and is flagged.
    """
    op = SensingOperator.coerce(operator)
    params = converse_constants(C0, C1)
    rep = rwp_search(op, space, params, restarts=restarts, seed=seed)
    recs = []
    for t in range(trials):
        rng = substream(seed, 7, t)
        x, _ = make_signal(space, rng, beta)
        noise = rng.standard_normal(op.M)
        noise /= np.linalg.norm(noise)
        recs.append(run_trial(space, op, x, 0.0, noise, C0, C1, seed=t))
    if rep.violated:
        w = rep.witness
        Pw = op.forward(w)
        eps = float(np.linalg.norm(Pw))
        noise = -Pw / eps if eps > 0 else np.zeros(op.M)
        recs.append(run_trial(space, op, w, eps, noise, C0, C1, seed=-1,
                              atom=np.zeros_like(w)))
    uniform_ok = all(r.slack >= -SLACK_TOL for r in recs)
    return {
        "rho": params.rho,
        "alpha": params.alpha,
        "rwp": rep.as_dict(),
        "trials": [r.as_dict() for r in recs],
        "uniform_recovery": uniform_ok,
        "consistent": not (rep.violated and uniform_ok),
        "contradiction": bool(rep.violated and uniform_ok),
    }


def _eig_ratio(A, J):
    lam = np.linalg.eigvalsh(A[:, :J].T @ A[:, :J])
    return float(lam[-1] / lam[0]) if lam[0] > 0 else math.inf


def rwp_not_rip_study(N=200, M=50, J_list=(20,), seeds=range(50), K=5, n_jobs=1):
    """Spiked-ensemble study: RIP-based guarantees fail while l1 recovery works.

    Per seed: (i) the eigenvalue ratio of ``Phi_J^T Phi_J`` on the first ``J``
    columns (every support contains the all-ones direction) against
    ``(J+1)/4``; (ii) the implied RIP lower bound ``delta_J >= (r-1)/(r+1)``
    compared with ``sqrt((t-1)/t)`` at ``t = J/K`` for every ``J`` from
    ``ceil(4K/3)`` up (for ``J > M`` the bound is 1); (iii) noiseless l1
    recovery of a random ``K``-sparse signal.
    """
    seeds = list(seeds)
    J_list = [check_positive(J, "J", integer=True) for J in J_list]
    J_lo = math.ceil(4 * K / 3)

    def one(seed):
        op = spiked(M, N, seed)
        A = op.matrix
        ratios = {J: _eig_ratio(A, J) for J in J_list}
        cz_margin = math.inf
        for J in range(J_lo, min(N, M) + 1):
            r = _eig_ratio(A, J)
            d = 1.0 if math.isinf(r) else (r - 1) / (r + 1)
            cz_margin = min(cz_margin, d - float(cai_zhang_threshold(J / K)))
        rng = substream(seed, 11)
        x = np.zeros(N)
        supp = rng.choice(N, K, replace=False)
        x[supp] = rng.standard_normal(K)
        space = make_space("l1", N=N, K=K)
        res = decode(DecodeProblem(space, op, A @ x, 0.0))
        rel = float(np.linalg.norm(res.x_star - x) / np.linalg.norm(x))
        return {
            "seed": seed,
            "ratios": {str(J): r for J, r in ratios.items()},
            "ratio_exceeds": {str(J): ratios[J] > (J + 1) / 4 for J in J_list},
            "delta_lower": {str(J): (ratios[J] - 1) / (ratios[J] + 1) for J in J_list},
            "cz_void_margin": cz_margin,
            "cz_void": cz_margin > 0,
            "recovery_rel_error": rel,
            "recovered": rel <= 1e-4,
            "converged": res.converged,
        }

    if n_jobs == 1:
        per_seed = [one(s) for s in seeds]
    else:
        per_seed = Parallel(n_jobs=n_jobs)(delayed(one)(s) for s in seeds)
    n = len(per_seed)
    cz = {k: cai_zhang_feasible(k)[0] for k in range(1, 41)}
    k_star = max((k for k, f in cz.items() if f), default=0)
    return {
        "N": N, "M": M, "K": K, "J_list": J_list, "seeds": seeds,
        "per_seed": per_seed,
        "ratio_exceeds_fraction": {str(J): sum(p["ratio_exceeds"][str(J)] for p in per_seed) / n
                                   for J in J_list},
        "structural_delta_bound": {str(J): (J - 3) / (J + 5) for J in J_list},
        "cz_void_fraction": sum(p["cz_void"] for p in per_seed) / n,
        "cz_feasible_by_K": {str(k): v for k, v in cz.items()},
        "cz_K_star": k_star,
        "recovery_fraction": sum(p["recovered"] for p in per_seed) / n,
    }
