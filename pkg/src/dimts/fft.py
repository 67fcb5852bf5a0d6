"""Discrete Fourier transform: radix-2 fast path plus a direct O(n^2) sum.

Both paths transform along one axis of a real array and are vectorised over the
remaining axes.  :func:`dft_node` wraps the transform as a differentiable
operation returning the real and imaginary parts as separate graph nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Node, _accumulate, _make, as_node


@dataclass
class ComplexArray:
    re: np.ndarray
    im: np.ndarray

    def __post_init__(self):
        if self.re.shape != self.im.shape:
            raise ValueError(f"re/im shape mismatch: {self.re.shape} vs {self.im.shape}")

    def to_complex(self) -> np.ndarray:
        return self.re + 1j * self.im


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def naive_dft(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """X_k = sum_j x_j exp(-2 pi i jk / n), evaluated term by term as a matrix product."""
    x = np.moveaxis(np.asarray(x), axis, -1)
    n = x.shape[-1]
    jk = np.outer(np.arange(n), np.arange(n)) % n
    w = np.exp(-2j * np.pi * jk / n)
    return np.moveaxis(x @ w.T, -1, axis)


def _radix2(x: np.ndarray) -> np.ndarray:
    # iterative decimation in time over the last axis
    n = x.shape[-1]
    levels = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(levels):
        rev |= ((idx >> b) & 1) << (levels - 1 - b)
    out = x[..., rev].astype(np.complex128)
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = out.reshape(out.shape[:-1] + (n // size, size))
        even = blocks[..., :half].copy()
        odd = blocks[..., half:] * tw
        blocks[..., :half] = even + odd
        blocks[..., half:] = even - odd
        out = blocks.reshape(out.shape)
        size *= 2
    return out


def fft(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Complex DFT along ``axis``; radix-2 when the length is a power of two."""
    x = np.asarray(x)
    n = x.shape[axis]
    if n == 0:
        raise ValueError("dft of an empty array")
    if not is_power_of_two(n):
        return naive_dft(x, axis)
    return np.moveaxis(_radix2(np.moveaxis(x, axis, -1)), -1, axis)


def dft(x, axis: int = -1) -> ComplexArray:
    out = fft(np.asarray(x, dtype=np.float64), axis)
    return ComplexArray(out.real.copy(), out.imag.copy())


def dft_node(x, axis: int = -1) -> tuple[Node, Node]:
    """Differentiable DFT of a real input; returns ``(re, im)`` nodes.

    The transform is linear and the DFT matrix is symmetric, so the adjoint of
    (Re F, Im F) applied to (g_re, g_im) is Re F g_re + Im F g_im.
    """
    x = as_node(x)
    spec = fft(x.value, axis)
    re = _make(spec.real.copy(), (x,), lambda g: _accumulate(x, fft(g, axis).real))
    im = _make(spec.imag.copy(), (x,), lambda g: _accumulate(x, fft(g, axis).imag))
    return re, im
