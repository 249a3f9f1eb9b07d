"""Signal models for compressed sensing.

A CS space bundles a finite-dimensional Hilbert space, a set of structured
"atoms" containing zero, and a sharp norm such that every ``z`` splits as
``z = z1 + z2`` where ``z1`` adds to the atom without cancellation and ``z2``
has sharp norm at most ``L`` times the Euclidean norm of ``z``.

Four models are provided:

=================  ==========================  ===============
model              sharp norm                  bound ``L``
=================  ==========================  ===============
weighted sparsity  ``||W x||_1``               ``sqrt(K)``
block sparsity     ``sum_j ||x_j||_2``         ``sqrt(K)``
gradient sparsity  ``||grad x||_1`` (TV)       ``2 Delta sqrt(K)``
low rank           nuclear norm                ``sqrt(2K)``
=================  ==========================  ===============

All signals are flat float64 vectors; matrices in the low-rank model are
flattened row-major.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from ._validation import as_vector, check_positive
from .exceptions import InputError, PreconditionError

__all__ = [
    "CsSpace", "WeightedSparsity", "BlockSparsity", "GradientSparsity", "LowRank",
    "Decomposition", "make_space", "sharp_norm", "decompose", "best_atom_approx",
    "gradient_operator_norm_bound", "soft_threshold",
]

# relative size below which an entry/singular value counts as zero
ZERO_RTOL = 1e-12
RANK_RTOL = 1e-10


def soft_threshold(x, thresh):
    return np.sign(x) * np.maximum(np.abs(x) - thresh, 0.0)


def _zero_tol(x):
    scale = np.max(np.abs(x)) if x.size else 0.0
    return ZERO_RTOL * max(scale, 1.0)


def svd(X, full_matrices=False):
    """LAPACK SVD with a deterministic sign convention.

    Each left singular vector is flipped so that its first entry of
    non-negligible magnitude is positive; the matching right vector follows.
    """
    U, s, Vt = np.linalg.svd(X, full_matrices=full_matrices)
    k = s.shape[0]
    for j in range(k):
        col = U[:, j]
        idx = np.flatnonzero(np.abs(col) > 1e-12)
        if idx.size and col[idx[0]] < 0:
            U[:, j] = -col
            Vt[j] = -Vt[j]
    return U, s, Vt


@dataclass(frozen=True)
class Decomposition:
    """A split ``z = z1 + z2`` certifying CS-space property (ii) at an atom."""

    z1: np.ndarray
    z2: np.ndarray

    def certificates(self, space, a, z):
        """Relative residuals of the four decomposition invariants.

        Returns a dict with ``reconstruction``, ``orthogonality`` and
        ``additivity`` (relative errors), ``membership`` (bool: ``z2`` lies in
        the model's auxiliary set) and ``bound_ratio`` (``||z2||# / (L ||z||_2)``).
        """
        z = np.asarray(z, dtype=np.float64)
        zn = np.linalg.norm(z)
        scale = max(zn, 1e-300)
        recon = np.linalg.norm(self.z1 + self.z2 - z) / scale
        ortho = abs(float(self.z1 @ self.z2)) / max(zn * zn, 1e-300)
        lhs = space.sharp_norm(a + self.z1)
        rhs = space.sharp_norm(a) + space.sharp_norm(self.z1)
        addit = abs(lhs - rhs) / max(rhs, 1e-300) if rhs > 0 else abs(lhs)
        denom = space.bound_L * zn
        ratio = space.sharp_norm(self.z2) / denom if denom > 0 else 0.0
        return {
            "reconstruction": float(recon),
            "orthogonality": float(ortho),
            "additivity": float(addit),
            "membership": bool(space.in_auxiliary_set(self.z2, a)),
            "bound_ratio": float(ratio),
        }

    def is_valid(self, space, a, z, rtol=1e-8, recon_rtol=1e-10):
        c = self.certificates(space, a, z)
        return (c["reconstruction"] <= recon_rtol and c["orthogonality"] <= rtol
                and c["additivity"] <= rtol and c["membership"]
                and c["bound_ratio"] <= 1 + rtol)


class CsSpace:
    """Base class for CS-space models.

    Subclasses define the sharp norm, its proximal map, the atom set and the
    decomposition rule.  Instances are immutable after construction.
    """

    model = None

    def __init__(self, ambient_dim, K):
        self.ambient_dim = check_positive(ambient_dim, "ambient_dim", integer=True)
        self.K = check_positive(K, "K", integer=True)

    # -- geometry -----------------------------------------------------------
    @property
    def bound_L(self):
        raise NotImplementedError

    def check_signal(self, x, name="x"):
        return as_vector(x, self.ambient_dim, name)

    def project(self, x):
        """Orthogonal projection of a raw vector onto the Hilbert space."""
        return np.asarray(x, dtype=np.float64)

    def norm2(self, x):
        return float(np.linalg.norm(self.project(x)))

    def sharp_norm(self, x):
        raise NotImplementedError

    def sharp_norm_rows(self, X):
        """Sharp norm of every row of a 2-d array."""
        return np.array([self.sharp_norm(x) for x in np.asarray(X, dtype=np.float64)])

    def sphere_min_sharp(self):
        """``min ||x||#`` over unit vectors of the Hilbert space.

        ``rho^-1 B# ∩ S`` is empty exactly when ``rho^-1`` is below this value.
        """
        raise NotImplementedError

    # -- atoms --------------------------------------------------------------
    def atom_violation(self, a):
        """Return a message if ``a`` is not an atom, else ``None``."""
        raise NotImplementedError

    def is_atom(self, a):
        return self.atom_violation(self.check_signal(a, "a")) is None

    def _require_atom(self, a):
        msg = self.atom_violation(a)
        if msg is not None:
            raise PreconditionError(f"not an atom of the {self.model} model: {msg}")

    def in_auxiliary_set(self, b, a=None):
        raise NotImplementedError

    def decompose(self, a, z):
        raise NotImplementedError

    def best_atom_approx(self, x):
        raise NotImplementedError

    # -- proximal machinery -------------------------------------------------
    def prox(self, v, t, state=None):
        """``argmin_u 0.5||u - v||^2 + t ||u||#``.

        ``state`` is an optional dict used by iterative prox maps for warm
        starts; callers that reuse it across calls get faster convergence.
        """
        raise NotImplementedError

    def polish_equality(self, A, y, x, dual=None):
        """Exact minimizer of ``||u||#`` s.t. ``A u = y`` near ``x``, or ``None``.

        ``dual`` is an optional estimate of the multiplier of ``A u = y``.

        Models that can certify optimality through KKT conditions override
        this; the base class never polishes.
        """
        return None

    def project_sharp_ball(self, v, radius, tol=1e-12):
        """Euclidean projection onto ``{u : ||u||# <= radius}``.

        Uses the fact that the projection equals ``prox(v, lam)`` for the
        multiplier ``lam`` at which the sharp-norm constraint binds.
        """
        v = self.project(self.check_signal(v, "v"))
        if self.sharp_norm(v) <= radius:
            return v
        if radius <= 0:
            return np.zeros_like(v)
        state = {}
        lo, hi = 0.0, 1.0
        while self.sharp_norm(self.prox(v, hi, state)) > radius:
            hi *= 2.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self.sharp_norm(self.prox(v, mid, state)) > radius:
                lo = mid
            else:
                hi = mid
            if hi - lo <= tol * hi:
                break
        return self.prox(v, hi, state)

    def support_maximizer(self, g, radius, tol=1e-12):
        """Maximize ``<x, g>`` over ``||x||_2 <= 1``, ``||x||# <= radius``.

        Returns ``(x, value)``.  By Lagrange duality on the sharp constraint
        the value is ``min_lam lam*radius + ||prox_{lam #}(g)||_2``; its
        derivative is ``radius - ||p||#/||p||_2`` with ``p`` the prox output,
        so the multiplier is found by bisection and ``x = p/||p||_2``.
        """
        g = self.project(self.check_signal(g, "g"))
        gn = np.linalg.norm(g)
        if gn == 0:
            return np.zeros_like(g), 0.0
        if self.sharp_norm(g) <= radius * gn:
            return g / gn, float(gn)
        state = {}
        zero = 1e-12 * gn
        hi = 1.0
        while np.linalg.norm(self.prox(g, hi, state)) > zero:
            hi *= 2.0
        lo, p_lo = 0.0, g
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            p = self.prox(g, mid, state)
            pn = np.linalg.norm(p)
            if pn > 1e-8 * gn and self.sharp_norm(p) > radius * pn:
                lo, p_lo = mid, p
            else:
                hi = mid
            if hi - lo <= tol * hi:
                break
        x = p_lo / np.linalg.norm(p_lo)
        sx = self.sharp_norm(x)
        if sx > radius:
            x = x * (radius / sx)
        # near the last breakpoint the primal direction is noisy while the
        # dual objective stays accurate, so report the dual value
        return x, float(lo * radius + np.linalg.norm(p_lo)) if lo > 0 else float(x @ g)

    def random_atom(self, rng):
        """Draw a random atom (used by property tests and signal generators)."""
        raise NotImplementedError

    def params(self):
        """Model parameters as a JSON-friendly dict."""
        return {"model": self.model, "ambient_dim": self.ambient_dim, "K": self.K}

    def __repr__(self):
        return f"{type(self).__name__}(ambient_dim={self.ambient_dim}, K={self.K})"


class _AtomicSpace(CsSpace):
    """Models whose sharp norm is a weighted l1 norm of "magnitudes".

    For these (weighted l1, group l2/l1, nuclear) the support function of
    ``B_2 ∩ radius B#`` reduces to a one-dimensional weighted l1 problem on the
    magnitudes, solved exactly by bisection on the threshold.
    """

    def magnitudes(self, g):
        """Return ``(m, w, lift)``: magnitudes, weights and a lift map.

        ``lift(s)`` maps shrunk magnitudes back to a signal aligned with ``g``.
        """
        raise NotImplementedError

    def support_maximizer(self, g, radius, tol=1e-13):
        g = self.project(self.check_signal(g, "g"))
        m, w, lift = self.magnitudes(g)
        norm_m = np.linalg.norm(m)
        if norm_m == 0:
            return np.zeros_like(g), 0.0
        if w @ m <= radius * norm_m:
            return lift(m / norm_m), float(norm_m)
        # Dual: min_lam lam*radius + ||(m - lam w)_+||_2.  The ratio
        # w.s/||s|| of the shrunk magnitudes decreases in lam; bisect for the
        # multiplier where it meets the budget.
        lo, hi = 0.0, float(np.max(m / w))
        for _ in range(400):
            mid = 0.5 * (lo + hi)
            s = np.maximum(m - mid * w, 0.0)
            ns = np.linalg.norm(s)
            if ns > 0 and (w @ s) > radius * ns:
                lo = mid
            else:
                hi = mid
            if hi - lo <= tol * hi:
                break
        s = np.maximum(m - lo * w, 0.0)
        ns = np.linalg.norm(s)
        if ns == 0:
            s = (m / w == hi).astype(float)
            ns = np.linalg.norm(s)
        x = s / ns
        # past the last breakpoint the maximizer is a vertex strictly inside
        # the unit ball; the rescale also removes bisection overshoot
        wx = w @ x
        if wx > radius:
            x = x * (radius / wx)
        return lift(x), float(x @ m)

    def project_sharp_ball(self, v, radius, tol=1e-13):
        v = self.project(self.check_signal(v, "v"))
        m, w, lift = self.magnitudes(v)
        if w @ m <= radius:
            return v
        if radius <= 0:
            return np.zeros_like(v)
        lo, hi = 0.0, float(np.max(m / w))
        for _ in range(300):
            mid = 0.5 * (lo + hi)
            if w @ np.maximum(m - mid * w, 0.0) > radius:
                lo = mid
            else:
                hi = mid
            if hi - lo <= tol * hi:
                break
        return lift(np.maximum(m - hi * w, 0.0))


class WeightedSparsity(_AtomicSpace):
    """Weighted sparsity: ``||x||# = sum_i w_i |x_i|``.

    Atoms are vectors with weighted sparsity ``sum_{i in supp x} w_i^2 <= K``.
    Unit weights give the classical l1 / K-sparse model.
    """

    model = "weighted_sparsity"

    def __init__(self, weights, K):
        w = as_vector(weights, name="weights")
        if w.size == 0 or np.any(w <= 0):
            raise InputError("weights must be strictly positive")
        super().__init__(w.size, K)
        self.weights = w
        self.weights.setflags(write=False)

    @classmethod
    def l1(cls, N, K):
        return cls(np.ones(check_positive(N, "N", integer=True)), K)

    @property
    def bound_L(self):
        return float(np.sqrt(self.K))

    def sharp_norm(self, x):
        x = self.check_signal(x)
        return float(self.weights @ np.abs(x))

    def sphere_min_sharp(self):
        return float(self.weights.min())

    def sharp_norm_rows(self, X):
        return np.abs(np.asarray(X, dtype=np.float64)) @ self.weights

    def weighted_sparsity(self, x):
        return float(np.sum(self.weights[np.asarray(x) != 0] ** 2))

    def atom_violation(self, a):
        s = self.weighted_sparsity(a)
        if s > self.K * (1 + 1e-12):
            return f"weighted sparsity S_W(a) = {s:g} exceeds K = {self.K}"
        return None

    def in_auxiliary_set(self, b, a=None):
        return self.atom_violation(b) is None

    def decompose(self, a, z):
        a = self.check_signal(a, "a")
        z = self.check_signal(z, "z")
        self._require_atom(a)
        on = a != 0
        z2 = np.where(on, z, 0.0)
        return Decomposition(z1=z - z2, z2=z2)

    def best_atom_approx(self, x):
        x = self.check_signal(x)
        score = self.weights * np.abs(x)
        order = np.argsort(-score, kind="stable")
        keep = np.zeros(x.size, dtype=bool)
        budget = 0.0
        for i in order:
            if score[i] == 0:
                break
            cost = self.weights[i] ** 2
            if budget + cost <= self.K * (1 + 1e-12):
                keep[i] = True
                budget += cost
        return np.where(keep, x, 0.0)

    def prox(self, v, t, state=None):
        t = check_positive(t, "t")
        v = self.check_signal(v, "v")
        return soft_threshold(v, t * self.weights)

    def polish_equality(self, A, y, x, dual=None, kkt_tol=1e-9):
        # candidate supports: the largest entries of x at a few cut levels, and
        # the coordinates where the dual estimate is closest to binding; a
        # candidate is accepted only with a dual certificate
        mag = np.abs(x)
        if not mag.any():
            return None
        sizes = {int(np.sum(mag > r * mag.max())) for r in (1e-2, 1e-3, 1e-4, 1e-6)}
        sizes.add(min(A.shape[0], x.size))
        orders = [np.lexsort((-mag, ))]
        if dual is not None:
            orders.append(np.lexsort((-mag, -np.abs(A.T @ dual) / self.weights)))
        scale = max(1.0, float(np.linalg.norm(y)))
        seen = set()
        for k, order in ((k, o) for k in sorted(sizes) for o in orders):
            if not 0 < k <= A.shape[0]:
                continue
            S = np.sort(order[:k])
            key = S.tobytes()
            if key in seen:
                continue
            seen.add(key)
            As = A[:, S]
            xs, *_ = np.linalg.lstsq(As, y, rcond=None)
            if np.linalg.norm(As @ xs - y) > kkt_tol * scale:
                continue
            sign = np.sign(xs)
            if np.any(sign == 0):
                continue
            target = self.weights[S] * sign
            lam, *_ = np.linalg.lstsq(As.T, target, rcond=None)
            if np.linalg.norm(As.T @ lam - target) > kkt_tol * max(1.0, np.linalg.norm(target)):
                continue
            if np.max(np.abs(A.T @ lam) / self.weights) > 1 + kkt_tol:
                continue
            out = np.zeros_like(x)
            out[S] = xs
            return out
        return None

    def magnitudes(self, g):
        sign = np.sign(g)
        return np.abs(g), self.weights, lambda s: sign * s

    def random_atom(self, rng):
        order = rng.permutation(self.ambient_dim)
        a = np.zeros(self.ambient_dim)
        budget = 0.0
        target = rng.integers(0, self.K + 1)
        for i in order:
            cost = self.weights[i] ** 2
            if budget + cost > target:
                continue
            a[i] = rng.standard_normal()
            budget += cost
        return a

    def params(self):
        d = super().params()
        d["weights"] = self.weights.tolist()
        return d


class BlockSparsity(_AtomicSpace):
    """Block sparsity: ``||x||# = sum_j ||x_j||_2`` over a partition of indices.

    Parameters
    ----------
    blocks : sequence of sequences of int
        Disjoint index sets covering ``0..N-1``.
    K : int
        Maximum number of nonzero blocks of an atom.
    """

    model = "block_sparsity"

    def __init__(self, blocks, K):
        blocks = [np.asarray(b, dtype=np.intp).ravel() for b in blocks]
        if not blocks or any(b.size == 0 for b in blocks):
            raise InputError("blocks must be nonempty")
        flat = np.concatenate(blocks)
        N = flat.size
        if np.any(np.sort(flat) != np.arange(N)):
            raise InputError("blocks must partition 0..N-1 without overlap")
        super().__init__(N, K)
        self.blocks = tuple(blocks)
        group = np.empty(N, dtype=np.intp)
        for j, b in enumerate(blocks):
            group[b] = j
        self.group = group
        self.group.setflags(write=False)
        self.n_blocks = len(blocks)

    @classmethod
    def uniform(cls, N, block_size, K):
        if N % block_size:
            raise InputError(f"N={N} is not a multiple of block_size={block_size}")
        idx = np.arange(N)
        return cls([idx[i:i + block_size] for i in range(0, N, block_size)], K)

    @property
    def bound_L(self):
        return float(np.sqrt(self.K))

    def block_norms(self, x):
        return np.sqrt(np.bincount(self.group, weights=np.asarray(x) ** 2,
                                   minlength=self.n_blocks))

    def sharp_norm(self, x):
        x = self.check_signal(x)
        return float(np.sum(self.block_norms(x)))

    def sphere_min_sharp(self):
        return 1.0

    def sharp_norm_rows(self, X):
        X = np.asarray(X, dtype=np.float64)
        ind = np.zeros((self.ambient_dim, self.n_blocks))
        ind[np.arange(self.ambient_dim), self.group] = 1.0
        return np.sqrt((X ** 2) @ ind).sum(axis=1)

    def active_blocks(self, x):
        nz = np.bincount(self.group, weights=(np.asarray(x) != 0).astype(float),
                         minlength=self.n_blocks)
        return nz > 0

    def atom_violation(self, a):
        k = int(np.sum(self.active_blocks(a)))
        if k > self.K:
            return f"block sparsity {k} exceeds K = {self.K}"
        return None

    def in_auxiliary_set(self, b, a=None):
        return self.atom_violation(b) is None

    def decompose(self, a, z):
        a = self.check_signal(a, "a")
        z = self.check_signal(z, "z")
        self._require_atom(a)
        on = self.active_blocks(a)[self.group]
        z2 = np.where(on, z, 0.0)
        return Decomposition(z1=z - z2, z2=z2)

    def best_atom_approx(self, x):
        x = self.check_signal(x)
        norms = self.block_norms(x)
        order = np.argsort(-norms, kind="stable")[: self.K]
        keep = np.zeros(self.n_blocks, dtype=bool)
        keep[order[norms[order] > 0]] = True
        return np.where(keep[self.group], x, 0.0)

    def prox(self, v, t, state=None):
        t = check_positive(t, "t")
        v = self.check_signal(v, "v")
        norms = self.block_norms(v)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(norms > 0, np.maximum(1.0 - t / norms, 0.0), 0.0)
        return v * scale[self.group]

    def magnitudes(self, g):
        norms = self.block_norms(g)
        with np.errstate(divide="ignore", invalid="ignore"):
            unit = np.where(norms[self.group] > 0, g / norms[self.group], 0.0)

        def lift(s):
            return unit * s[self.group]

        return norms, np.ones(self.n_blocks), lift

    def random_atom(self, rng):
        k = rng.integers(0, min(self.K, self.n_blocks) + 1)
        chosen = rng.choice(self.n_blocks, size=k, replace=False)
        on = np.isin(self.group, chosen)
        return np.where(on, rng.standard_normal(self.ambient_dim), 0.0)

    def params(self):
        d = super().params()
        d["blocks"] = [b.tolist() for b in self.blocks]
        return d


class GradientSparsity(CsSpace):
    """Gradient sparsity on a directed graph; the sharp norm is total variation.

    Signals live in ``R^V``; the Hilbert space is the orthogonal complement of
    ``ker(grad)``, i.e. signals with zero mean on each weak component.  Sharp
    norms are shift invariant, so raw vectors are accepted and projected
    (per-component mean removal) wherever inner products or l2 norms are taken.

    Parameters
    ----------
    n_vertices : int
    edges : array-like of shape (E, 2)
        Directed edges ``(i, j)`` with 0-based vertex labels;
        ``(grad x)[(i, j)] = x[j] - x[i]``.
    K : int
        Maximum number of nonzero gradient entries of an atom.
    """

    model = "gradient_sparsity"

    def __init__(self, n_vertices, edges, K):
        super().__init__(n_vertices, K)
        V = self.ambient_dim
        edges = np.asarray(edges, dtype=np.intp).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= V):
            raise InputError("edge endpoints must lie in 0..n_vertices-1")
        self.edges = edges
        self.edges.setflags(write=False)
        E = edges.shape[0]
        rows = np.repeat(np.arange(E), 2)
        cols = edges[:, ::-1].ravel()  # (j, i) per row -> +1 at j, -1 at i
        vals = np.tile([1.0, -1.0], E)
        self.grad = sp.csr_matrix((vals, (rows, cols)), shape=(E, V))
        degree = np.bincount(edges.ravel(), minlength=V) if E else np.zeros(V, int)
        self.max_degree = int(degree.max()) if V else 0
        adj = sp.csr_matrix((np.ones(E), (edges[:, 0], edges[:, 1])), shape=(V, V))
        n_comp, labels = connected_components(adj, directed=True, connection="weak")
        self.n_components = int(n_comp)
        self.component = labels
        self._comp_size = np.bincount(labels, minlength=n_comp).astype(float)

    @classmethod
    def path(cls, n_vertices, K):
        return cls(n_vertices, [(i, i + 1) for i in range(n_vertices - 1)], K)

    @classmethod
    def grid(cls, rows, cols, K):
        """Four-neighbour image grid with right and down edges."""
        idx = np.arange(rows * cols).reshape(rows, cols)
        right = np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1)
        down = np.stack([idx[:-1].ravel(), idx[1:].ravel()], axis=1)
        return cls(rows * cols, np.vstack([right, down]), K)

    @property
    def bound_L(self):
        return float(2 * self.max_degree * np.sqrt(self.K))

    def gradient(self, x):
        return self.grad @ np.asarray(x, dtype=np.float64)

    def _component_means(self, x, labels, n, sizes):
        sums = np.bincount(labels, weights=x, minlength=n)
        return (sums / sizes)[labels]

    def project(self, x):
        x = np.asarray(x, dtype=np.float64)
        return x - self._component_means(x, self.component, self.n_components,
                                         self._comp_size)

    def sharp_norm(self, x):
        x = self.check_signal(x)
        return float(np.sum(np.abs(self.gradient(x))))

    def sphere_min_sharp(self, exact_limit=16):
        """Smallest TV of a unit vector with zero mean on each component.

        The extreme points of the TV ball are centred cut indicators, so the
        value is ``min_S cut(S) / sqrt(|S| (n - |S|) / n)`` over vertex subsets
        ``S`` of a component of size ``n``.  Components up to ``exact_limit``
        vertices are enumerated; larger ones use sweep cuts of the Fiedler
        vector, which gives an upper bound.
        """
        from itertools import combinations

        best = np.inf
        E = self.edges
        for c in range(self.n_components):
            verts = np.flatnonzero(self.component == c)
            n = verts.size
            if n < 2:
                continue
            local = {v: i for i, v in enumerate(verts)}
            mask = self.component[E[:, 0]] == c
            e = np.array([[local[a], local[b]] for a, b in E[mask]]).reshape(-1, 2)
            if n <= exact_limit:
                member = np.zeros(n, bool)
                for k in range(1, n // 2 + 1):
                    for S in combinations(range(n), k):
                        member[:] = False
                        member[list(S)] = True
                        cut = np.sum(member[e[:, 0]] != member[e[:, 1]])
                        best = min(best, cut / np.sqrt(k * (n - k) / n))
            else:
                lap = sp.csr_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
                lap = lap + lap.T
                lap = sp.diags(np.asarray(lap.sum(axis=1)).ravel()) - lap
                _, vecs = np.linalg.eigh(lap.toarray())
                order = np.argsort(vecs[:, 1], kind="stable")
                member = np.zeros(n, bool)
                for k in range(1, n):
                    member[order[k - 1]] = True
                    cut = np.sum(member[e[:, 0]] != member[e[:, 1]])
                    best = min(best, cut / np.sqrt(k * (n - k) / n))
        return float(best)

    def sharp_norm_rows(self, X):
        X = np.asarray(X, dtype=np.float64)
        return np.abs(self.grad @ X.T).sum(axis=0)

    def _gradient_support(self, a):
        d = self.gradient(a)
        return np.abs(d) > _zero_tol(d) if d.size else np.zeros(0, bool)

    def atom_violation(self, a):
        k = int(np.sum(self._gradient_support(a)))
        if k > self.K:
            return f"gradient sparsity ||grad a||_0 = {k} exceeds K = {self.K}"
        return None

    def in_auxiliary_set(self, b, a=None):
        b = np.asarray(b, dtype=np.float64)
        nnz_b = int(np.sum(np.abs(b) > _zero_tol(b)))
        nnz_grad = int(np.sum(self._gradient_support(b)))
        return nnz_b <= 2 * self.K and nnz_grad <= 2 * self.K * self.max_degree

    def _support_components(self, support_edges):
        V = self.ambient_dim
        e = self.edges[support_edges]
        adj = sp.csr_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(V, V))
        n, labels = connected_components(adj, directed=True, connection="weak")
        return n, labels

    def decompose(self, a, z):
        """Split ``z`` by averaging over components of the gradient support of ``a``.

        ``z1`` is the orthogonal projection of ``z`` onto signals constant on
        each weak component of ``(V, supp(grad a))``; ``z2 = z - z1``.
        """
        a = self.check_signal(a, "a")
        z = self.check_signal(z, "z")
        self._require_atom(a)
        n, labels = self._support_components(self._gradient_support(a))
        sizes = np.bincount(labels, minlength=n).astype(float)
        z1 = self._component_means(z, labels, n, sizes)
        return Decomposition(z1=z1, z2=z - z1)

    def best_atom_approx(self, x):
        """Greedy gradient-sparse approximation (a heuristic, not optimal).

        Repeatedly merges the edge carrying the smallest nonzero gradient into
        the set of "flat" edges and replaces ``x`` by its average over the
        resulting components, until at most ``K`` gradient entries remain.
        """
        x = self.project(self.check_signal(x))
        flat = np.zeros(self.edges.shape[0], dtype=bool)
        a = x
        while True:
            d = self.gradient(a)
            nz = np.abs(d) > _zero_tol(d)
            if nz.sum() <= self.K:
                return self.project(a)
            cand = np.flatnonzero(nz)
            e = cand[np.argmin(np.abs(d[cand]))]
            flat[e] = True
            n, labels = self._support_components(flat)
            sizes = np.bincount(labels, minlength=n).astype(float)
            a = self._component_means(x, labels, n, sizes)

    def prox(self, v, t, state=None, tol=1e-10, max_iter=20000):
        """TV proximal map by accelerated projected ascent on the edge dual.

        Solves ``max_{|p| <= 1} -0.5||v - t grad^T p||^2`` with step
        ``1/(t^2 * 2 Delta)`` (Gershgorin bound on ``||grad||^2``).  Every few
        iterations the current bound pattern of ``p`` is polished by an exact
        least-squares solve on the free edges; the polished point is accepted
        once it satisfies the KKT conditions.
        """
        t = check_positive(t, "t")
        v = self.project(self.check_signal(v, "v"))
        E = self.edges.shape[0]
        if E == 0:
            return v.copy()
        D, Dt = self.grad, self.grad.T.tocsr()
        lip = 2.0 * self.max_degree
        p = state.get("p") if state is not None else None
        p = np.zeros(E) if p is None or p.shape != (E,) else p.copy()
        q, theta = p.copy(), 1.0
        scale = max(1.0, float(v @ v))
        target = max(0.5 * tol * tol * scale, 1e-14 * scale)
        for it in range(max_iter):
            u = v - t * (Dt @ q)
            p_new = np.clip(q + (D @ u) / (t * lip), -1.0, 1.0)
            theta_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * theta * theta))
            q = p_new + ((theta - 1.0) / theta_new) * (p_new - p)
            p, theta = p_new, theta_new
            if it % 25 == 24:
                exact = self._polish_tv_dual(v, t, p)
                if exact is not None:
                    p = exact
                    break
                u = v - t * (Dt @ p)
                primal = 0.5 * float((u - v) @ (u - v)) + t * np.sum(np.abs(D @ u))
                if primal - (0.5 * float(v @ v) - 0.5 * float(u @ u)) <= target:
                    break
        if state is not None:
            state["p"] = p
        return v - t * (Dt @ p)

    def _polish_tv_dual(self, v, t, p, kkt_tol=1e-12):
        """Exact dual solution for the bound pattern of ``p``, or ``None``."""
        at_bound = np.abs(p) >= 1.0 - 1e-9
        sigma = np.sign(p) * at_bound
        free = ~at_bound
        Dt = self.grad.T.tocsr()
        rhs = v - t * (Dt @ sigma)
        p_new = sigma.copy()
        if free.any():
            A = t * Dt[:, free].toarray()
            p_new[free] = np.linalg.lstsq(A, rhs, rcond=None)[0]
            if np.any(np.abs(p_new[free]) > 1.0 + kkt_tol):
                return None
        u = v - t * (Dt @ p_new)
        du = self.grad @ u
        scale = max(1.0, float(np.max(np.abs(u))))
        # stationarity on free edges, outward-pointing gradient on bound edges
        if free.any() and np.max(np.abs(du[free])) > 1e-9 * scale:
            return None
        if np.any(du[at_bound] * sigma[at_bound] < -1e-9 * scale):
            return None
        return np.clip(p_new, -1.0, 1.0)

    def random_atom(self, rng):
        # piecewise-constant signal: flat on components after removing <= K edges
        E = self.edges.shape[0]
        k = int(rng.integers(0, min(self.K, E) + 1))
        cut = np.ones(E, dtype=bool)
        cut[rng.choice(E, size=k, replace=False)] = False
        n, labels = self._support_components(cut)
        levels = rng.standard_normal(n)
        a = self.project(levels[labels])
        if self.atom_violation(a) is not None:  # cut edges inside a component
            return self.best_atom_approx(a)
        return a

    def params(self):
        d = super().params()
        d["edges"] = self.edges.tolist()
        return d


class LowRank(_AtomicSpace):
    """Real ``m x n`` matrices with the nuclear norm; atoms have rank <= K."""

    model = "low_rank"

    def __init__(self, m, n, K):
        self.shape = (check_positive(m, "m", integer=True),
                      check_positive(n, "n", integer=True))
        super().__init__(self.shape[0] * self.shape[1], K)

    @property
    def bound_L(self):
        return float(np.sqrt(2 * self.K))

    def as_matrix(self, x):
        return np.asarray(x, dtype=np.float64).reshape(self.shape)

    def sphere_min_sharp(self):
        return 1.0

    def sharp_norm_rows(self, X):
        X = np.asarray(X, dtype=np.float64).reshape(-1, *self.shape)
        return np.linalg.svd(X, compute_uv=False).sum(axis=1)

    def singular_values(self, x):
        return np.linalg.svd(self.as_matrix(x), compute_uv=False)

    def rank(self, x):
        s = self.singular_values(x)
        if s.size == 0 or s[0] == 0:
            return 0
        return int(np.sum(s > RANK_RTOL * s[0]))

    def sharp_norm(self, x):
        x = self.check_signal(x)
        return float(np.sum(self.singular_values(x)))

    def atom_violation(self, a):
        r = self.rank(a)
        if r > self.K:
            return f"rank(a) = {r} exceeds K = {self.K}"
        return None

    def in_auxiliary_set(self, b, a=None):
        return self.rank(b) <= 2 * self.K

    def decompose(self, a, z):
        """Recht-Fazel-Parrilo split: ``Z1 = (I - U U^T) Z (I - V V^T)``.

        ``U``, ``V`` span the column and row spaces of ``a``; this is the
        lower-right block of ``U^T Z V`` in the full SVD basis of ``a``.
        """
        a = self.check_signal(a, "a")
        z = self.check_signal(z, "z")
        self._require_atom(a)
        A, Z = self.as_matrix(a), self.as_matrix(z)
        r = self.rank(a)
        if r == 0:
            return Decomposition(z1=z.copy(), z2=np.zeros_like(z))
        U, _, Vt = svd(A)
        U, V = U[:, :r], Vt[:r].T
        left = Z - U @ (U.T @ Z)
        Z1 = left - (left @ V) @ V.T
        z1 = Z1.ravel()
        return Decomposition(z1=z1, z2=z - z1)

    def best_atom_approx(self, x):
        X = self.as_matrix(self.check_signal(x))
        U, s, Vt = svd(X)
        k = min(self.K, s.size)
        return ((U[:, :k] * s[:k]) @ Vt[:k]).ravel()

    def prox(self, v, t, state=None):
        t = check_positive(t, "t")
        V = self.as_matrix(self.check_signal(v, "v"))
        U, s, Vt = svd(V)
        return ((U * np.maximum(s - t, 0.0)) @ Vt).ravel()

    def magnitudes(self, g):
        U, s, Vt = svd(self.as_matrix(g))

        def lift(sv):
            return ((U * sv) @ Vt).ravel()

        return s, np.ones_like(s), lift

    def random_atom(self, rng):
        m, n = self.shape
        r = int(rng.integers(0, min(self.K, m, n) + 1))
        return (rng.standard_normal((m, r)) @ rng.standard_normal((r, n))).ravel()

    def params(self):
        d = super().params()
        d["shape"] = list(self.shape)
        return d


def make_space(model, **params):
    """Build a space from a model name and keyword parameters.

    Accepted names: ``l1``, ``weighted`` / ``weighted_sparsity``, ``block`` /
    ``block_sparsity``, ``tv`` / ``gradient`` / ``gradient_sparsity``,
    ``nuclear`` / ``low_rank``.
    """
    K = params.get("K", 1)
    if model == "l1":
        return WeightedSparsity.l1(params["N"], K)
    if model in ("weighted", "weighted_sparsity"):
        return WeightedSparsity(params["weights"], K)
    if model in ("block", "block_sparsity"):
        if "blocks" in params:
            return BlockSparsity(params["blocks"], K)
        return BlockSparsity.uniform(params["N"], params["block_size"], K)
    if model in ("tv", "gradient", "gradient_sparsity"):
        if "edges" in params:
            return GradientSparsity(params["n_vertices"], params["edges"], K)
        if "grid" in params:
            return GradientSparsity.grid(*params["grid"], K)
        return GradientSparsity.path(params.get("n_vertices", params.get("N")), K)
    if model in ("nuclear", "low_rank"):
        m, n = params["shape"]
        return LowRank(m, n, K)
    raise InputError(f"unknown model {model!r}")


def sharp_norm(space, x):
    return space.sharp_norm(x)


def decompose(space, a, z):
    return space.decompose(a, z)


def best_atom_approx(space, x):
    return space.best_atom_approx(x)


def gradient_operator_norm_bound(space):
    """Gershgorin bound ``sqrt(2 Delta)`` on the spectral norm of the gradient."""
    if space.edges.shape[0] == 0:
        return 0.0
    return float(np.sqrt(2 * space.max_degree))
