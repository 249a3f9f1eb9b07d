import math

import numpy as np
import pytest
from sklearn.base import clone

from oracles import rip_brute_force
from rwplab.cs_space import make_space
from rwplab.exceptions import GuardError, InputError, PreconditionError
from rwplab.width_rwp import (
    RobustWidthSearch, RwpParams, analytic_width_bound_l1, cai_zhang_feasible,
    converse_constants, gaussian_width_mc, guarantee_constants, measurement_budget,
    rip_enumerate, rip_to_rwp, rwp_search, top_energy_mc, width_sample,
)


# -- constants ---------------------------------------------------------------

def test_rip_to_rwp():
    p = rip_to_rwp(9, 0.2)
    assert (p.rho, p.alpha) == (1.0, 2 / 15)
    p = rip_to_rwp(36, 0.0)
    assert (p.rho, p.alpha) == (0.5, 1 / 3)
    with pytest.raises(PreconditionError):
        rip_to_rwp(9, 1 / 3)


def test_guarantee_and_converse():
    C0, C1 = guarantee_constants(RwpParams(0.05, 0.25), 4)
    assert C0 == pytest.approx(0.2, abs=1e-15) and C1 == 8.0
    guarantee_constants(RwpParams(1 / 16, 0.5), 4)  # boundary accepted
    with pytest.raises(PreconditionError):
        guarantee_constants(RwpParams(0.1, 0.5), 4)
    p = converse_constants(1, 2)
    assert (p.rho, p.alpha) == (2.0, 0.25)
    p = converse_constants(0.5, 0.5)
    assert (p.rho, p.alpha) == (1.0, 1.0)
    with pytest.raises(InputError):
        converse_constants(0, 1)


def test_constant_round_trip():
    rho, alpha = 0.03, 0.4
    back = converse_constants(*guarantee_constants(RwpParams(rho, alpha), 2))
    assert back.rho == pytest.approx(8 * rho)
    assert back.alpha == pytest.approx(alpha / 4)


def test_params_validated():
    with pytest.raises(InputError):
        RwpParams(0, 0.1)
    with pytest.raises(InputError):
        RwpParams(0.1, -1)


# -- widths ------------------------------------------------------------------

def test_width_sample_trivial_cases(rng):
    l1 = make_space("l1", N=5, K=1)
    g = rng.standard_normal(5)
    assert width_sample(l1, 1 / math.sqrt(5), g) == pytest.approx(np.linalg.norm(g))
    l1_2 = make_space("l1", N=2, K=1)
    assert width_sample(l1_2, 1.0, [2.0, -1.0]) == pytest.approx(2.0)


def test_width_sample_grid_oracle():
    space = make_space("l1", N=3, K=1)
    g = np.array([3.0, 2.0, 1.0])
    R = math.sqrt(2)
    # feasible set's hull maximum is attained on the boundary; grid the sphere
    th = np.arange(0, math.pi + 1e-3, 1e-3)
    ph = np.arange(0, 2 * math.pi, 1e-3)
    T, P = np.meshgrid(th, ph, indexing="ij")
    X = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], -1).reshape(-1, 3)
    l1 = np.abs(X).sum(1)
    sphere_best = (X[l1 <= R] @ g).max()
    # points of the hull off the sphere: scaled sphere points on the l1 boundary
    inner_best = ((X / np.maximum(l1 / R, 1.0)[:, None]) @ g).max()
    oracle = max(sphere_best, inner_best)
    assert width_sample(space, 1 / R, g) == pytest.approx(oracle, abs=5e-3)


def test_width_sample_monotone_and_homogeneous(rng):
    space = make_space("block", N=12, block_size=3, K=1)
    g = rng.standard_normal(12)
    vals = [width_sample(space, 1 / R, g) for R in (1.0, 1.3, 1.8, 2.5, 4.0)]
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))
    assert width_sample(space, 0.6, 3 * g) == pytest.approx(3 * width_sample(space, 0.6, g))


@pytest.mark.parametrize("N", [8, 32])
def test_width_bracket_full_ball(N):
    n = 2000
    est = gaussian_width_mc(make_space("l1", N=N, K=1), 1 / math.sqrt(N), n, seed=5)
    assert (1 - 1 / N) * math.sqrt(N) - 3 / math.sqrt(n) < est.mean < math.sqrt(N) + 3 / math.sqrt(n)
    assert est.upper_conf > est.mean


def test_width_one_dimensional():
    est = gaussian_width_mc(make_space("l1", N=1, K=1), 1.0, 4000, seed=2)
    assert est.mean == pytest.approx(math.sqrt(2 / math.pi), abs=0.03)


def test_upper_confidence_coverage():
    truth = math.sqrt(2 / math.pi)
    space = make_space("l1", N=1, K=1)
    hits = sum(gaussian_width_mc(space, 1.0, 200, 0.9, seed=s).upper_conf >= truth
               for s in range(100))
    assert hits >= 90


def test_width_independent_of_worker_count():
    space = make_space("l1", N=16, K=2)
    a = gaussian_width_mc(space, 0.5, 200, seed=9, n_jobs=1)
    b = gaussian_width_mc(space, 0.5, 200, seed=9, n_jobs=3)
    assert a == b


def test_l1_width_below_top_energy_bound():
    space = make_space("l1", N=32, K=4)
    est = gaussian_width_mc(space, 1 / 2, 2000, seed=1)
    assert est.mean <= 2 * top_energy_mc(4, 32, 4000, seed=1)


def test_analytic_bound():
    N = 50
    assert analytic_width_bound_l1(N, N, math.e) == pytest.approx(math.e * math.sqrt(N))
    c = 2.0
    N = int(round(math.e * 1e4 / c))
    assert analytic_width_bound_l1(1, N, c) == pytest.approx(c * math.sqrt(math.log(c * N)))
    with pytest.raises(InputError):
        analytic_width_bound_l1(10, 10, 1.0)


def test_calibrated_constant_dominates_width():
    # smallest c in the candidate list whose bound beats the MC width at N=64, J=8
    space = make_space("l1", N=64, K=8)
    means = [gaussian_width_mc(space, 1 / math.sqrt(8), 500, seed=s).upper_conf
             for s in range(5)]
    passing = [c for c in (1, 1.5, 2, 3) if all(m <= analytic_width_bound_l1(8, 64, c)
                                                 for m in means)]
    assert passing and passing[0] == 1.5


def test_width_input_errors():
    space = make_space("l1", N=4, K=1)
    with pytest.raises(InputError):
        gaussian_width_mc(space, 0.5, samples=1)
    with pytest.raises(InputError):
        gaussian_width_mc(space, 0.5, confidence=1.0)
    with pytest.raises(InputError):
        gaussian_width_mc(space, -0.5)


# -- RWP search --------------------------------------------------------------

def test_rwp_null_coordinate_witness():
    Phi = np.array([[0.0, 1, 0], [0, 0, 1]])
    rep = rwp_search(Phi, make_space("l1", N=3, K=1), RwpParams(0.9, 0.1), restarts=3)
    assert rep.violated
    assert np.allclose(np.abs(rep.witness), [1, 0, 0], atol=1e-6)
    assert rep.witness_ratio <= 1e-9


def test_rwp_identity_never_violated():
    rep = rwp_search(np.eye(6), make_space("l1", N=6, K=1), RwpParams(0.5, 1.0), restarts=5)
    assert not rep.violated
    assert rep.min_ratio == pytest.approx(1.0)


def test_rwp_empty_set_flag():
    space = make_space("weighted", weights=[2.0, 3.0], K=1)
    rep = rwp_search(np.eye(2), space, RwpParams(1.0, 0.5))
    assert rep.empty_set and not rep.violated


def test_rwp_grid_oracle(rng):
    th = np.arange(0, math.pi, 1e-2)
    ph = np.arange(0, 2 * math.pi, 1e-2)
    T, P = np.meshgrid(th, ph, indexing="ij")
    S = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], -1).reshape(-1, 3)
    l1 = np.abs(S).sum(1)
    space = make_space("l1", N=3, K=1)
    agree = checked = 0
    for trial in range(30):
        A = rng.standard_normal((2, 3))
        rho, alpha = rng.uniform(0.58, 0.95), rng.uniform(0.05, 1.0)
        # margins measured on the grid; skip near-boundary parameter pairs
        inside = l1 <= 1 / rho
        if not inside.any():
            continue
        m = np.linalg.norm(S[inside] @ A.T, axis=1).min()
        if abs(m - alpha) < 0.05:
            continue
        checked += 1
        rep = rwp_search(A, space, RwpParams(rho, alpha), restarts=10, seed=trial)
        agree += rep.violated == (m < alpha)
    assert checked >= 10 and agree == checked


def test_rwp_deterministic_and_parallel_invariant(rng):
    A = rng.standard_normal((8, 16))
    space = make_space("l1", N=16, K=2)
    a = rwp_search(A, space, RwpParams(0.4, 0.3), restarts=6, seed=4)
    b = rwp_search(A, space, RwpParams(0.4, 0.3), restarts=6, seed=4, n_jobs=2)
    assert a.as_dict() == b.as_dict()


def test_rwp_dimension_mismatch():
    with pytest.raises(InputError):
        rwp_search(np.eye(3), make_space("l1", N=4, K=1), RwpParams(0.5, 0.5))


def test_robust_width_estimator():
    Phi = np.array([[0.0, 1, 0], [0, 0, 1]])
    est = RobustWidthSearch(rho=0.9, alpha=0.1, restarts=3).fit(Phi)
    assert est.verdict_ == "violation_found"
    assert clone(est).get_params()["rho"] == 0.9


def test_rip_implies_no_rwp_violation(rng):
    seen = 0
    for s in range(60):
        N = int(rng.integers(6, 11))
        M = N - 1
        A = np.linalg.qr(rng.standard_normal((N, N)))[0][:M] * math.sqrt(1.0)
        rep = rip_enumerate(A, 1)
        if rep.delta_no_squares >= 1 / 3:
            continue
        p = rip_to_rwp(1, rep.delta_no_squares)
        seen += 1
        assert not rwp_search(A, make_space("l1", N=N, K=1), p, restarts=5, seed=s).violated
    assert seen > 0


# -- RIP ---------------------------------------------------------------------

def test_rip_trivial_cases():
    Q = np.linalg.qr(np.random.default_rng(0).standard_normal((6, 6)))[0]
    rep = rip_enumerate(Q, 3)
    assert rep.delta_no_squares == pytest.approx(0, abs=1e-12)
    assert rep.delta_squares == pytest.approx(0, abs=1e-12)
    rep = rip_enumerate(2 * np.eye(4), 1)
    assert rep.delta_squares == pytest.approx(3)
    assert rep.delta_no_squares == pytest.approx(1)


def test_rip_conventions_on_diagonal():
    rep = rip_enumerate(np.diag([1.0, 1.1, 1.2, 1.05]), 2)
    assert 1 + rep.delta_squares == pytest.approx((1 + rep.delta_no_squares) ** 2)


def test_rip_against_brute_force(rng):
    A = rng.standard_normal((5, 9)) / math.sqrt(5)
    for J in (1, 2, 3, 6):
        rep = rip_enumerate(A, J, chunk=7)
        smin, smax = rip_brute_force(A, J)
        assert rep.sigma_min == pytest.approx(smin)
        assert rep.sigma_max == pytest.approx(smax)
        assert rep.supports_checked == math.comb(9, J)


def test_rip_guard_and_sampling(rng):
    A = rng.standard_normal((10, 40))
    with pytest.raises(GuardError):
        rip_enumerate(A, 10)
    rep = rip_enumerate(A, 10, mode="sample", samples=50, seed=1)
    assert not rep.exhaustive and rep.as_dict()["lower_bound_only"]
    assert rep == rip_enumerate(A, 10, mode="sample", samples=50, seed=1)


def test_spiked_support_ratio_exceeds():
    from rwplab.ensembles import spiked
    hits = 0
    for s in range(50):
        A = spiked(40, 60, s).matrix[:, :10]
        lam = np.linalg.eigvalsh(A.T @ A)
        hits += lam[-1] / lam[0] > 11 / 4
    assert hits >= 45


# -- Cai-Zhang and budgets ---------------------------------------------------

def test_cai_zhang():
    ok, t = cai_zhang_feasible(1)
    assert ok and t == pytest.approx(4 / 3)
    assert cai_zhang_feasible(15)[0]
    assert not cai_zhang_feasible(16)[0]
    assert not cai_zhang_feasible(26)[0]


def test_cai_zhang_witness_satisfies_inequality():
    for K in (2, 7, 12, 15):
        ok, t = cai_zhang_feasible(K)
        assert ok
        assert (t * K - 3) / (t * K + 5) < math.sqrt((t - 1) / t)


def test_budget_gordon():
    lam = 0.5
    alpha = 1 / (2 * (1 + 1 / math.sqrt(lam)))
    C = 1.01 / (1 - (1 + math.sqrt(2)) * alpha) ** 2
    M, a = measurement_budget("gordon", w_est=10, lam=lam, alpha=alpha, C=C)
    assert M == math.ceil(C * 100) and a == alpha
    with pytest.raises(PreconditionError):
        measurement_budget("gordon", w_est=10, lam=lam, alpha=0.5)
    with pytest.raises(PreconditionError):
        measurement_budget("gordon", w_est=10, lam=lam, alpha=alpha, C=1.0)


def test_budget_bowling():
    M, a = measurement_budget("bowling_general", w_est=4, sigma_max=2, sigma_min=2, c0=3, c1=0.5)
    assert M == 48 and a == pytest.approx(0.5 * 2 * math.sqrt(48))
    M0 = 7
    M, _ = measurement_budget("bowling_l1", J=5, N=100, v=2 / M0, sigma_min=math.sqrt(1 / M0),
                              c0=1.5, c1=1)
    assert M == math.ceil(2 * 1.5 * 5 * math.log(100))
    with pytest.raises(InputError):
        measurement_budget("bowling_l1", J=5)
    with pytest.raises(InputError):
        measurement_budget("nope")


def test_tail_bound_property(rng):
    # ||x - x_J||_2 < ||x||_2 / (rho sqrt(J)) whenever ||x||_2 > rho ||x||_1
    for _ in range(2000):
        N = int(rng.integers(4, 30))
        J = int(rng.integers(1, N))
        x = rng.standard_normal(N) * rng.exponential(1.0, N) ** 3
        rho = rng.uniform(0.05, 1.0)
        if np.linalg.norm(x) <= rho * np.abs(x).sum():
            continue
        tail = np.sort(np.abs(x))[: N - J]
        assert np.linalg.norm(tail) < np.linalg.norm(x) / (rho * math.sqrt(J))
