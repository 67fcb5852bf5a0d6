"""Small dense symmetric eigensolvers (cyclic Jacobi)."""

from __future__ import annotations

import numpy as np

MAX_DIM = 256
ZERO_THRESHOLD = 1e-8


class SingularDegreeError(ValueError):
    """The diagonal metric matrix has a non-positive entry."""


class DegenerateSpectrumError(ValueError):
    """No eigenvalue lies above the zero threshold."""


def jacobi_eigh(a: np.ndarray, tol: float = 1e-15, max_sweeps: int = 100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(w, v)`` with eigenvalues ascending and eigenvectors as columns.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError(f"expected a square matrix, got {a.shape}")
    if not np.allclose(a, a.T, atol=1e-12 * max(1.0, np.abs(a).max(initial=0.0))):
        raise ValueError("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    scale = np.linalg.norm(a)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol * max(scale, 1e-300):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # rotate rows/cols p and q
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def _fix_sign(v: np.ndarray, tiny: float = 1e-12) -> np.ndarray:
    nz = np.flatnonzero(np.abs(v) > tiny)
    if nz.size and v[nz[0]] < 0:
        return -v
    return v


def generalized_eig_smallest(L: np.ndarray, D: np.ndarray, threshold: float = ZERO_THRESHOLD,
                             max_dim: int = MAX_DIM) -> tuple[float, np.ndarray]:
    """Smallest eigenpair of ``L v = lam D v`` with ``lam > threshold``.

    ``D`` must be diagonal with positive entries.  The problem is symmetrised as
    D^{-1/2} L D^{-1/2} w = lam w, and v = D^{-1/2} w so that v^T D v = 1.
    The sign is fixed so that the first non-negligible entry is positive.
    """
    L = np.asarray(L, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    n = L.shape[0]
    if n > max_dim:
        raise ValueError(f"matrix dimension {n} exceeds cap {max_dim}")
    d = np.diag(D) if D.ndim == 2 else D
    if np.any(d <= 0):
        bad = int(np.flatnonzero(d <= 0)[0])
        raise SingularDegreeError(f"diagonal entry {bad} of D is {d[bad]!r} (must be > 0)")
    inv_sqrt = 1.0 / np.sqrt(d)
    s = L * inv_sqrt[:, None] * inv_sqrt[None, :]
    w, vecs = jacobi_eigh(s)
    above = np.flatnonzero(w > threshold)
    if above.size == 0:
        raise DegenerateSpectrumError("all generalized eigenvalues are below the zero threshold")
    i = above[0]
    v = inv_sqrt * vecs[:, i]
    v = v / np.sqrt(np.sum(d * v * v))
    return float(w[i]), _fix_sign(v)
