"""Gaussian kernels and same-length zero-padded convolution.

All routines operate on the last axis, so a batch of signals of shape
``(..., L)`` is smoothed in one call.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

# Kernel sizes and standard deviations used by the smooth attack.
DEFAULT_SIZES = (5, 7, 11, 15, 19)
DEFAULT_SIGMAS = (1.0, 3.0, 5.0, 7.0, 10.0)


@dataclass(frozen=True, eq=False)
class GaussianKernel:
    half_width: int
    sigma: float
    weights: np.ndarray

    @property
    def size(self) -> int:
        return 2 * self.half_width + 1


def gaussian_kernel(size: int, sigma: float) -> GaussianKernel:
    """Normalized discrete Gaussian of odd length ``size``.

    ``sigma -> inf`` gives a moving average, ``sigma -> 0`` a delta.
    """
    if int(size) != size or size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be an odd positive integer, got {size!r}")
    if not sigma > 0 or not np.isfinite(sigma):
        raise ValueError(f"sigma must be positive and finite, got {sigma!r}")
    k = (int(size) - 1) // 2
    offsets = np.arange(-k, k + 1, dtype=np.float64)
    logits = -(offsets**2) / (2.0 * float(sigma) ** 2)
    # the center term is exp(0) = 1, so the denominator never underflows
    raw = np.exp(logits)
    w = raw / raw.sum()
    w.flags.writeable = False
    return GaussianKernel(half_width=k, sigma=float(sigma), weights=w)


@dataclass(frozen=True)
class KernelBank:
    kernels: tuple[GaussianKernel, ...]

    def __post_init__(self):
        if not self.kernels:
            raise ValueError("kernel bank must be non-empty")

    @classmethod
    def from_lists(cls, sizes: Sequence[int], sigmas: Sequence[float]) -> "KernelBank":
        if len(sizes) != len(sigmas):
            raise ValueError(f"{len(sizes)} sizes but {len(sigmas)} sigmas")
        return cls(tuple(gaussian_kernel(s, g) for s, g in zip(sizes, sigmas)))

    @classmethod
    def default(cls) -> "KernelBank":
        return cls.from_lists(DEFAULT_SIZES, DEFAULT_SIGMAS)

    @classmethod
    def delta(cls) -> "KernelBank":
        """Single near-identity kernel; smoothing with it is a no-op."""
        return cls((gaussian_kernel(3, 1e-6),))

    def __len__(self):
        return len(self.kernels)

    @property
    def sizes(self) -> list[int]:
        return [k.size for k in self.kernels]

    @property
    def sigmas(self) -> list[float]:
        return [k.sigma for k in self.kernels]


def _correlate_weights(a: np.ndarray, weights: np.ndarray) -> np.ndarray:
    # out[n] = sum_j a[n - j + K] * w[j], reads outside [0, L) are zero
    a = np.asarray(a, dtype=np.float64)
    length = a.shape[-1]
    k = (len(weights) - 1) // 2
    out = np.zeros_like(a)
    for j, w in enumerate(weights):
        shift = k - j  # out[n] += w * a[n + shift]
        if shift >= 0:
            if shift < length:
                out[..., : length - shift] += w * a[..., shift:]
        elif -shift < length:
            out[..., -shift:] += w * a[..., : length + shift]
    return out


def convolve_same(a, kernel: GaussianKernel) -> np.ndarray:
    """Convolve along the last axis with zero padding, keeping the length."""
    a = np.asarray(a, dtype=np.float64)
    if a.shape[-1] < 1:
        raise ValueError("cannot convolve an empty signal")
    return _correlate_weights(a, kernel.weights)


def bank_smooth(theta, bank: KernelBank) -> np.ndarray:
    """Average of ``convolve_same(theta, k)`` over every kernel in the bank."""
    theta = np.asarray(theta, dtype=np.float64)
    acc = np.zeros_like(theta)
    for kern in bank.kernels:
        acc += convolve_same(theta, kern)
    return acc / len(bank)


def bank_smooth_adjoint(g, bank: KernelBank) -> np.ndarray:
    """Transpose of :func:`bank_smooth`, used to pull gradients back onto theta.

    The transpose of a zero-padded convolution is the same convolution with
    the kernel reversed.
    """
    g = np.asarray(g, dtype=np.float64)
    acc = np.zeros_like(g)
    for kern in bank.kernels:
        acc += _correlate_weights(g, kern.weights[::-1])
    return acc / len(bank)


def second_difference(x) -> np.ndarray:
    """``x[t+1] - 2 x[t] + x[t-1]`` over interior points of the last axis."""
    x = np.asarray(x, dtype=np.float64)
    return x[..., 2:] - 2.0 * x[..., 1:-1] + x[..., :-2]
