"""Random sensing operators and their on-disk container.

Every generator draws from a counter-based stream keyed by the seed alone, so
``(kind, M, N, seed)`` determines the operator bit for bit.

Binary container (little endian)::

    magic  b"RWPLOP"      6 bytes
    version uint16        currently 1
    kind    16 bytes      ASCII, NUL padded
    M, N    uint64 each
    seed    uint64        2**64 - 1 when unknown
    data    M*N float64   row major

A JSON sidecar ``<file>.json`` repeats the header and carries the operator
metadata and a SHA-256 of the payload.
"""

import hashlib
import json
import math
import os
import struct
from dataclasses import dataclass

import numpy as np
from scipy.fft import dct

from ._random import substream
from ._validation import as_matrix, check_positive
from .exceptions import InputError, PreconditionError
from .output import atomic_write
from .solvers import SensingOperator

__all__ = [
    "EnsembleSpec", "SpikedStats", "make_operator", "gaussian_iid", "orthonormalize_rows",
    "correlated_rows", "spiked_covariance", "spiked", "subsampled_trig", "spd_sqrt",
    "save_operator", "load_operator", "read_vector", "write_vector", "atomic_write",
]

KINDS = ("gaussian_iid", "orthonormalized", "correlated_rows", "spiked", "subsampled_trig")
MAGIC = b"RWPLOP"
CONTAINER_VERSION = 1
_HEADER = struct.Struct("<6sH16sQQQ")
_NO_SEED = 2 ** 64 - 1


@dataclass(frozen=True)
class EnsembleSpec:
    kind: str
    M: int
    N: int
    seed: int = 0
    covariance: np.ndarray = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown ensemble {self.kind!r}; choose from {', '.join(KINDS)}")
        check_positive(self.M, "M", integer=True)
        check_positive(self.N, "N", integer=True)
        if (self.covariance is not None) != (self.kind == "correlated_rows"):
            raise InputError("covariance is required for, and only for, correlated_rows")


@dataclass(frozen=True)
class SpikedStats:
    sigma_max_sq: float
    sigma_min_sq: float
    v: float


def make_operator(spec):
    if spec.kind == "gaussian_iid":
        return gaussian_iid(spec.M, spec.N, spec.seed)
    if spec.kind == "orthonormalized":
        op = orthonormalize_rows(gaussian_iid(spec.M, spec.N, spec.seed).matrix)
        op.meta.update(ensemble="orthonormalized", seed=spec.seed)
        return op
    if spec.kind == "correlated_rows":
        return correlated_rows(spec.covariance, spec.M, spec.seed)
    if spec.kind == "spiked":
        return spiked(spec.M, spec.N, spec.seed)
    return subsampled_trig(spec.N, spec.M, spec.seed)


def gaussian_iid(M, N, seed=0):
    M = check_positive(M, "M", integer=True)
    N = check_positive(N, "N", integer=True)
    G = substream(seed).standard_normal((M, N))
    return SensingOperator(G, meta={"ensemble": "gaussian_iid", "seed": int(seed)})


def orthonormalize_rows(G):
    """``(G G^T)^{-1/2} G``; the result has orthonormal rows spanning G's row space."""
    G = as_matrix(G, "G")
    lam, V = np.linalg.eigh(G @ G.T)
    if lam[0] <= 1e-12 * lam[-1] or lam[-1] <= 0:
        raise PreconditionError(f"G G^T is near singular: eigenvalue {lam[0]:.3e} vs "
                                f"largest {lam[-1]:.3e}")
    Phi = (V / np.sqrt(lam)) @ V.T @ G
    return SensingOperator(Phi, meta={"ensemble": "orthonormalized"})


def spd_sqrt(C):
    """Symmetric square root via eigendecomposition (eigenvalues floored at
    ``1e-14`` times the largest)."""
    C = as_matrix(C, "covariance")
    if C.shape[0] != C.shape[1] or not np.allclose(C, C.T, rtol=0, atol=1e-12 * np.abs(C).max()):
        raise InputError("covariance must be a symmetric square matrix")
    lam, V = np.linalg.eigh(C)
    if lam[0] <= 0:
        raise InputError(f"covariance is not positive definite (eigenvalue {lam[0]:.3e})")
    lam = np.maximum(lam, 1e-14 * lam[-1])
    return (V * np.sqrt(lam)) @ V.T


def correlated_rows(covariance, M, seed=0):
    """Rows ``Sigma^{1/2} g`` with ``g`` standard Gaussian."""
    root = spd_sqrt(covariance)
    M = check_positive(M, "M", integer=True)
    G = substream(seed).standard_normal((M, root.shape[0]))
    return SensingOperator(G @ root, meta={"ensemble": "correlated_rows", "seed": int(seed)})


def spiked_covariance(N, M):
    """``(1/M)(I + 1 1^T)`` and its extreme eigenvalues and largest diagonal entry."""
    N = check_positive(N, "N", integer=True)
    M = check_positive(M, "M", integer=True)
    C = (np.eye(N) + np.ones((N, N))) / M
    smin = 1.0 / M if N > 1 else 2.0 / M
    return C, SpikedStats(sigma_max_sq=(N + 1) / M, sigma_min_sq=smin, v=2.0 / M)


def spiked(M, N, seed=0):
    """Rows drawn iid from the spiked covariance.

    ``(I + 1 1^T)^{1/2} = I + c 1 1^T`` with ``c = (sqrt(N+1) - 1)/N``, so no
    eigendecomposition is needed.
    """
    M = check_positive(M, "M", integer=True)
    N = check_positive(N, "N", integer=True)
    G = substream(seed).standard_normal((M, N))
    c = (math.sqrt(N + 1) - 1) / N
    Phi = (G + c * G.sum(axis=1, keepdims=True)) / math.sqrt(M)
    return SensingOperator(Phi, meta={"ensemble": "spiked", "seed": int(seed)})


def subsampled_trig(N, M, seed=0):
    """``M`` distinct rows of the orthonormal DCT-II basis, scaled by ``sqrt(N/M)``.

    A real-valued stand-in for randomly subsampled Fourier rows; rows are
    drawn without replacement and kept in increasing order.
    """
    N = check_positive(N, "N", integer=True)
    M = check_positive(M, "M", integer=True)
    if M > N:
        raise InputError(f"M = {M} exceeds N = {N}")
    rows = np.sort(substream(seed).choice(N, M, replace=False))
    basis = dct(np.eye(N), type=2, norm="ortho", axis=0)
    Phi = basis[rows] * math.sqrt(N / M)
    return SensingOperator(Phi, kind="subsampled_trig", rows=rows,
                           meta={"ensemble": "subsampled_trig", "seed": int(seed),
                                 "sampling": "without_replacement"})


# -- files -------------------------------------------------------------------

def save_operator(path, op):
    op = SensingOperator.coerce(op)
    seed = op.meta.get("seed")
    seed_field = _NO_SEED if seed is None else int(seed) & (2 ** 64 - 1)
    kind = op.meta.get("ensemble", op.kind)
    header = _HEADER.pack(MAGIC, CONTAINER_VERSION, kind.encode("ascii")[:16], op.M, op.N,
                          seed_field)
    payload = op.matrix.astype("<f8").tobytes(order="C")
    atomic_write(path, header + payload)
    side = {
        "format": "rwplab-operator",
        "version": CONTAINER_VERSION,
        "kind": kind,
        "operator_kind": op.kind,
        "M": op.M,
        "N": op.N,
        "seed": seed,
        "meta": op.meta,
        "rows": None if op.rows is None else op.rows.tolist(),
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    atomic_write(os.fspath(path) + ".json",
                 (json.dumps(side, sort_keys=True, indent=2) + "\n").encode())


def load_operator(path):
    path = os.fspath(path)
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read operator file {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise InputError(f"{path}: truncated header")
    magic, version, kind, M, N, seed = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise InputError(f"{path}: not an operator container")
    if version != CONTAINER_VERSION:
        raise InputError(f"{path}: unsupported container version {version}")
    payload = raw[_HEADER.size:]
    if len(payload) != 8 * M * N:
        raise InputError(f"{path}: expected {M}x{N} float64 payload, got {len(payload)} bytes")
    A = np.frombuffer(payload, dtype="<f8").reshape(M, N).astype(np.float64)
    kind = kind.rstrip(b"\0").decode("ascii")
    meta = {"ensemble": kind}
    if seed != _NO_SEED:
        meta["seed"] = int(seed)
    op_kind, rows = "dense", None
    side_path = path + ".json"
    if os.path.exists(side_path):
        with open(side_path) as fh:
            side = json.load(fh)
        if side.get("sha256") != hashlib.sha256(payload).hexdigest():
            raise InputError(f"{side_path}: checksum does not match {path}")
        meta.update(side.get("meta", {}))
        op_kind = side.get("operator_kind", "dense")
        rows = side.get("rows")
    return SensingOperator(A, kind=op_kind, rows=rows, meta=meta)


def read_vector(path):
    """Plain-text vector, one float per line (blank lines and ``#`` comments skipped)."""
    try:
        with open(path) as fh:
            lines = [ln.split("#", 1)[0].strip() for ln in fh]
    except OSError as exc:
        raise InputError(f"cannot read vector file {path}: {exc}") from exc
    try:
        vals = [float(ln) for ln in lines if ln]
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc
    v = np.array(vals, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise InputError(f"{path}: non-finite entries")
    return v


def write_vector(path, v):
    text = "".join(f"{float(x)!r}\n" for x in np.asarray(v, dtype=np.float64).ravel())
    atomic_write(path, text.encode())
