"""so(d) <-> SO(d) conversions.

A flat vector ``z`` of length d(d-1)/2 fills the strict upper triangle of an
antisymmetric matrix row by row; the matrix exponential maps it to a rotation.
"""
import numpy as np

from .exceptions import DimensionError, NumericError, StructureError

# Taylor order used after scaling; with ||A / 2^s||_1 <= 1/2 the truncation
# error is below 0.5**19 / 19! ~ 1e-23.
_TAYLOR_ORDER = 18
_SCALE_NORM = 0.5


def lie_dim(d):
    """Number of free parameters of so(d)."""
    return d * (d - 1) // 2


def dim_from_lie(n):
    """Inverse of :func:`lie_dim`; raises if ``n`` is not triangular."""
    d = int(round((1 + np.sqrt(1 + 8 * n)) / 2))
    if lie_dim(d) != n:
        raise DimensionError(f"{n} is not of the form d(d-1)/2")
    return d


def pack_antisymmetric(z, d=None):
    """Build the antisymmetric matrix whose upper triangle (row-major) is ``z``."""
    z = np.asarray(z, dtype=float).ravel()
    if d is None:
        d = dim_from_lie(z.size)
    expected = lie_dim(d)
    if z.size != expected:
        raise DimensionError(
            f"so({d}) vector must have length {expected}, got {z.size}")
    A = np.zeros((d, d))
    iu = np.triu_indices(d, k=1)
    A[iu] = z
    A[(iu[1], iu[0])] = -z
    return A


def unpack_antisymmetric(A, atol=1e-12):
    """Row-major upper triangle of an antisymmetric matrix."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {A.shape}")
    asym = np.max(np.abs(A + A.T)) if A.size else 0.0
    if asym > atol:
        raise StructureError(
            f"matrix is not antisymmetric: max |A + A^T| = {asym:.3e} > {atol:g}")
    return A[np.triu_indices(A.shape[0], k=1)].copy()


def matrix_exp(A):
    """Matrix exponential by scaling and squaring with a Taylor kernel.

    Accurate to ~1e-13 for antisymmetric inputs with entries bounded by pi.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NumericError("matrix_exp: input has non-finite entries")
    d = A.shape[0]
    norm = np.max(np.sum(np.abs(A), axis=0)) if d else 0.0
    s = 0
    if norm > _SCALE_NORM:
        s = int(np.ceil(np.log2(norm / _SCALE_NORM)))
    B = A / (2.0 ** s)

    # Horner evaluation of sum_k B^k / k!
    eye = np.eye(d)
    E = eye
    for k in range(_TAYLOR_ORDER, 0, -1):
        E = eye + (B @ E) / k
    for _ in range(s):
        E = E @ E
    return E


def random_rotation(d, rng):
    """Haar-distributed element of SO(d).

    QR of a standard Gaussian matrix with the signs of R's diagonal folded
    into Q, then one column flipped if the determinant is -1.
    """
    if d < 1:
        raise DimensionError(f"dimension must be >= 1, got {d}")
    rng = np.random.default_rng(rng)
    if d == 1:
        return np.ones((1, 1))
    G = rng.standard_normal((d, d))
    Q, R = np.linalg.qr(G)
    Q = Q * np.sign(np.diag(R))
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q


def is_rotation(W, orth_tol=1e-10, det_tol=1e-8):
    """Check the SO(d) invariants up to the given tolerances."""
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        return False
    err = np.max(np.abs(W.T @ W - np.eye(W.shape[0])))
    return bool(err <= orth_tol and abs(np.linalg.det(W) - 1.0) <= det_tol)
