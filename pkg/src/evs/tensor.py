"""Small symmetric-matrix algebra for d <= 3.

Single-matrix functions take anything convertible to a ``(d, d)`` float array.
The ``batch_*`` helpers act on stacks of shape ``(..., d, d)`` and are what the
regularity weights use at every grid node.
"""

from __future__ import annotations

import math

import numpy as np

from evs.errors import ContractError, DomainError

SYMMETRY_TOL = 1e-12
ZERO_EIG_RTOL = 1e-14


def _as_matrix(A) -> np.ndarray:
    a = np.array(A, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or not 1 <= a.shape[0] <= 3:
        raise ContractError(f"expected a square matrix of size 1..3, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DomainError("matrix has non-finite entries")
    return a


def _check_symmetric(a: np.ndarray) -> None:
    if np.max(np.abs(a - a.T), initial=0.0) > SYMMETRY_TOL:
        raise ContractError("matrix is not symmetric within 1e-12")


def sym_part(A) -> np.ndarray:
    """Return ``(A + A^T) / 2``, mirrored so the result is exactly symmetric."""
    a = _as_matrix(A)
    s = 0.5 * (a + a.T)
    upper = np.triu(s)
    return upper + np.triu(s, 1).T


def skw_part(A) -> np.ndarray:
    """Return ``(A - A^T) / 2`` (exactly antisymmetric)."""
    a = _as_matrix(A)
    return 0.5 * (a - a.T)


# {{{ eigendecomposition

def _eigh2(a: float, b: float, c: float) -> tuple[np.ndarray, np.ndarray]:
    # normalise so tiny or huge entries neither underflow nor overflow
    scale = max(abs(a), abs(b), abs(c))
    if scale == 0.0:
        return np.zeros(2), np.eye(2)
    lam, V = _eigh2_unit(a / scale, b / scale, c / scale)
    return lam * scale, V


def _eigh2_unit(a: float, b: float, c: float) -> tuple[np.ndarray, np.ndarray]:
    half = 0.5 * (a - c)
    r = math.hypot(half, b)
    mean = 0.5 * (a + c)
    if r == 0.0:
        return np.array([mean, mean]), np.eye(2)
    lam1 = mean + r
    lam2 = mean - r
    # recover the small-magnitude root from the determinant to avoid cancellation
    det = a * c - b * b
    if abs(lam1) >= abs(lam2) and lam1 != 0.0:
        lam2 = det / lam1
    elif lam2 != 0.0:
        lam1 = det / lam2
    if half >= 0.0:
        v = np.array([r + half, b])
    else:
        v = np.array([b, r - half])
    v /= math.hypot(v[0], v[1])
    V = np.array([[v[0], -v[1]], [v[1], v[0]]])
    return np.array([lam1, lam2]), V


def _jacobi_eigh(a: np.ndarray, max_sweeps: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi rotations; deterministic and accurate for tiny matrices."""
    a = a.copy()
    d = a.shape[0]
    V = np.eye(d)
    scale = max(np.max(np.abs(a)), 1e-300)
    for _ in range(max_sweeps):
        off = sum(a[p, q] ** 2 for p in range(d) for q in range(p + 1, d))
        if math.sqrt(off) <= 1e-17 * scale:
            break
        for p in range(d):
            for q in range(p + 1, d):
                if a[p, q] == 0.0:
                    continue
                if abs(a[p, q]) <= 1e-17 * scale:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                cs = 1.0 / math.sqrt(t * t + 1.0)
                sn = t * cs
                J = np.eye(d)
                J[p, p] = J[q, q] = cs
                J[p, q] = sn
                J[q, p] = -sn
                a = J.T @ a @ J
                V = V @ J
    return np.diag(a).copy(), V


def _eigh(s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = s.shape[0]
    if d == 1:
        return np.array([s[0, 0]]), np.eye(1)
    if d == 2:
        return _eigh2(s[0, 0], s[0, 1], s[1, 1])
    return _jacobi_eigh(s)

# }}}


def sym_signed_parts(S) -> tuple[np.ndarray, np.ndarray]:
    """Split a symmetric matrix into its PSD and NSD parts, ``S = S_+ + S_-``.

    Eigenvalues with ``|lambda| <= 1e-14 (1 + |S|_2)`` are treated as zero and
    kept in the positive part, so rounding noise never leaks into ``S_-``.
    """
    s = _as_matrix(S)
    _check_symmetric(s)
    s = 0.5 * (s + s.T)
    lam, V = _eigh(s)
    thresh = ZERO_EIG_RTOL * (1.0 + np.max(np.abs(lam)))
    d = s.shape[0]
    pos = np.zeros((d, d))
    neg = np.zeros((d, d))
    for j in range(d):
        outer = lam[j] * np.outer(V[:, j], V[:, j])
        if lam[j] < -thresh:
            neg += outer
        else:
            pos += outer
    return 0.5 * (pos + pos.T), 0.5 * (neg + neg.T)


def spectral_norm(S) -> float:
    """Largest singular value."""
    a = _as_matrix(S)
    if np.array_equal(a, a.T):
        lam, _ = _eigh(a)
        return float(np.max(np.abs(lam)))
    lam, _ = _eigh(a.T @ a)
    return math.sqrt(max(float(np.max(lam)), 0.0))


def trace_norm(S) -> float:
    """Sum of absolute eigenvalues of a symmetric matrix."""
    s = _as_matrix(S)
    _check_symmetric(s)
    lam, _ = _eigh(0.5 * (s + s.T))
    return math.fsum(abs(x) for x in lam)


# {{{ batched helpers

def batch_sym(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def batch_skw(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A - np.swapaxes(A, -1, -2))


def batch_sym_eigvals(S: np.ndarray) -> np.ndarray:
    """Eigenvalues of a stack of symmetric matrices, ascending, shape ``(..., d)``."""
    d = S.shape[-1]
    if d == 1:
        return S[..., 0, :].copy()
    if d == 2:
        a = S[..., 0, 0]
        b = 0.5 * (S[..., 0, 1] + S[..., 1, 0])
        c = S[..., 1, 1]
        r = np.hypot(0.5 * (a - c), b)
        mean = 0.5 * (a + c)
        return np.stack([mean - r, mean + r], axis=-1)
    flat = S.reshape(-1, d, d)
    out = np.empty((flat.shape[0], d))
    for i, s in enumerate(flat):
        lam, _ = _jacobi_eigh(0.5 * (s + s.T))
        out[i] = np.sort(lam)
    return out.reshape(S.shape[:-1])


def batch_neg_part_norm(S: np.ndarray) -> np.ndarray:
    """``|S_-|_2`` for each symmetric matrix in the stack."""
    lam = batch_sym_eigvals(S)
    return np.maximum(-lam[..., 0], 0.0)


def batch_spectral_norm(A: np.ndarray) -> np.ndarray:
    """Largest singular value of each matrix in the stack."""
    d = A.shape[-1]
    if d == 1:
        return np.abs(A[..., 0, 0])
    if d == 2:
        # cancellation-free closed form for 2x2 singular values
        a, b = A[..., 0, 0], A[..., 0, 1]
        c, d_ = A[..., 1, 0], A[..., 1, 1]
        return 0.5 * (np.hypot(a + d_, b - c) + np.hypot(a - d_, b + c))
    AtA = np.swapaxes(A, -1, -2) @ A
    lam = batch_sym_eigvals(AtA)
    return np.sqrt(np.maximum(lam[..., -1], 0.0))

# }}}
