"""Channel scanning order from a channel-similarity graph.

Channels are mapped to scalars v minimising sum_ij (v_i - v_j)^2 g_ij under
v^T D v = 1, which is the generalised eigenproblem L v = lam D v with the
graph Laplacian L = D - G.  Sorting the eigenvector at the smallest non-zero
eigenvalue gives the scan order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .eigen import DegenerateSpectrumError, SingularDegreeError, generalized_eig_smallest
from .ssm import permutation_matrix


class ZeroVarianceError(ValueError):
    pass


@dataclass
class ChannelPermutation:
    """Scan order ``pi`` (channel scanned at position k), its matrix ``H`` and the mapping vector.

    ``H`` satisfies ``(H x)[k] = x[pi[k]]``.  ``degenerate`` marks the identity
    fallback used when the similarity graph has no usable spectrum.
    """

    pi: np.ndarray
    H: np.ndarray
    fiedler: np.ndarray
    eigenvalue: float
    objective: float
    G: np.ndarray
    degenerate: bool = False

    @property
    def inverse(self) -> np.ndarray:
        return np.argsort(self.pi)


def check_similarity(G: np.ndarray) -> np.ndarray:
    G = np.asarray(G, dtype=np.float64)
    C = G.shape[0]
    if G.shape != (C, C):
        raise ValueError(f"similarity matrix must be square, got {G.shape}")
    if not np.allclose(G, G.T, atol=1e-12):
        raise ValueError("similarity matrix must be symmetric")
    if np.any(G < 0):
        raise ValueError("similarity matrix must be non-negative")
    G = G.copy()
    np.fill_diagonal(G, 0.0)
    return G


def pearson_similarity(data: np.ndarray, names=None) -> np.ndarray:
    """|Pearson correlation| between channels, pooled over windows and time steps.

    ``data`` is ``[M, L, C]`` (or ``[T, C]``).  The diagonal is zeroed.
    """
    data = np.asarray(data, dtype=np.float64)
    flat = data.reshape(-1, data.shape[-1])
    centred = flat - flat.mean(axis=0)
    ss = np.sum(centred * centred, axis=0)
    for c in range(flat.shape[1]):
        if ss[c] <= 0.0:
            label = names[c] if names is not None else c
            raise ZeroVarianceError(f"channel {label!r} has zero variance")
    norm = np.sqrt(ss)
    corr = (centred.T @ centred) / np.outer(norm, norm)
    G = np.clip(np.abs(corr), 0.0, 1.0)
    np.fill_diagonal(G, 0.0)
    return G


def laplacian(G: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(L, D)`` with D the degree matrix."""
    D = np.diag(G.sum(axis=1))
    return D - G, D


def eval_ordering_objective(v: np.ndarray, G: np.ndarray) -> float:
    """sum over ordered pairs of (v_i - v_j)^2 g_ij."""
    v = np.asarray(v, dtype=np.float64)
    diff = v[:, None] - v[None, :]
    return float(np.sum(diff * diff * np.asarray(G)))


def adjacency_score(order, G: np.ndarray) -> float:
    """sum_k g_{pi_k, pi_{k+1}}: similarity between neighbours in the scan order."""
    order = np.asarray(order)
    return float(np.sum(G[order[:-1], order[1:]]))


def solve_ordering(G: np.ndarray) -> ChannelPermutation:
    """Spectral channel ordering; identity with a warning if the graph is degenerate."""
    G = check_similarity(G)
    C = G.shape[0]
    L, D = laplacian(G)
    try:
        lam, v = generalized_eig_smallest(L, D)
    except (DegenerateSpectrumError, SingularDegreeError) as exc:
        warnings.warn(f"channel similarity is degenerate ({exc}); using identity order",
                      RuntimeWarning, stacklevel=2)
        pi = np.arange(C)
        return ChannelPermutation(pi, permutation_matrix(pi), np.zeros(C), 0.0, 0.0, G,
                                  degenerate=True)
    # values equal to 10 decimals count as ties and keep index order
    pi = np.argsort(np.round(v, 10), kind="stable")
    return ChannelPermutation(pi, permutation_matrix(pi), v, lam,
                              eval_ordering_objective(v, G), G)
