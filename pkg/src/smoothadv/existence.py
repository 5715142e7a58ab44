"""Dense bands of adversarial examples around one signal.

Three constructions, each checked against the classifier:

* Gaussian resampling: add i.i.d. noise to a known adversarial example,
  smooth the resulting perturbation with the kernel bank and clip it.
* Concatenation: splice two resampled examples at a point where they cross.
* Uniform band sampling: draw each timestep uniformly between the per-step
  min and max of the resampled population, then smooth and clip.

Every draw gets its own RNG stream derived from ``(seed, construction, i)``
so results do not depend on evaluation order or batching.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from smoothadv.attacks import clip_inf
from smoothadv.data import RhythmClass
from smoothadv.kernels import KernelBank, bank_smooth

_GAUSS_STREAM = 1
_UNIFORM_STREAM = 2


@dataclass(frozen=True)
class NoiseSpec:
    """i.i.d. Gaussian noise, parameterized by its variance (25 -> std 5)."""

    variance: float = 25.0

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError(f"noise variance must be positive, got {self.variance}")

    @property
    def std(self) -> float:
        return float(np.sqrt(self.variance))


@dataclass(frozen=True, eq=False)
class Band:
    lower: np.ndarray
    upper: np.ndarray
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("a band needs at least two samples")
        if self.lower.shape != self.upper.shape or np.any(self.lower > self.upper):
            raise ValueError("band lower bound must not exceed upper bound")

    def __len__(self):
        return len(self.lower)

    def contains(self, signal) -> bool:
        s = np.asarray(signal)
        return bool(np.all((self.lower <= s) & (s <= self.upper)))

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def to_dict(self) -> dict:
        return {"min": self.lower.tolist(), "max": self.upper.tolist(), "n": self.n}


def _arr(x) -> np.ndarray:
    return np.asarray(getattr(x, "samples", x), dtype=np.float64)


def _stream(seed: int, kind: int, i: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, kind, i])


def resample_gaussian(x, x_adv, noise: NoiseSpec, bank: KernelBank, epsilon: float,
                      rng: np.random.Generator, delta: np.ndarray | None = None) -> np.ndarray:
    """``x + clip(bank_smooth(x_adv + delta - x), 0, epsilon)`` with fresh noise ``delta``.

    Passing ``delta`` explicitly skips the draw (``rng`` is then unused).
    """
    x, x_adv = _arr(x), _arr(x_adv)
    if x.shape != x_adv.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {x_adv.shape}")
    if delta is None:
        delta = rng.normal(0.0, noise.std, size=x.shape)
    return x + clip_inf(bank_smooth(x_adv + delta - x, bank), 0.0, epsilon)


def build_band(samples: Sequence) -> Band:
    arr = np.stack([_arr(s) for s in samples]) if len(samples) else np.empty((0, 0))
    if arr.shape[0] < 2:
        raise ValueError("a band needs at least two samples")
    return Band(arr.min(axis=0), arr.max(axis=0), arr.shape[0])


def find_intersections(x1, x2) -> list[int]:
    """Split points where two signals cross.

    A split point ``t`` (1-based count of leading samples) is reported when
    ``x1 - x2`` is exactly zero at sample ``t`` or changes sign between
    samples ``t`` and ``t + 1``.
    """
    d = _arr(x1) - _arr(x2)
    if d.shape != _arr(x2).shape:
        raise ValueError("length mismatch")
    hits = (d == 0.0)
    hits[:-1] |= (d[:-1] * d[1:]) < 0
    return [int(i) + 1 for i in np.flatnonzero(hits)]


def concatenate_at(x1, x2, t: int) -> np.ndarray:
    """First ``t`` samples of ``x1`` followed by the rest of ``x2``."""
    x1, x2 = _arr(x1), _arr(x2)
    if x1.shape != x2.shape:
        raise ValueError("length mismatch")
    if not 1 <= t < len(x1):
        raise ValueError(f"split point must satisfy 1 <= t < {len(x1)}, got {t}")
    return np.concatenate([x1[:t], x2[t:]])


def draw_uniform(band: Band, rng: np.random.Generator) -> np.ndarray:
    """One independent U(min[t], max[t]) draw per timestep; a zero-width step returns its point."""
    return rng.uniform(band.lower, band.upper)


def sample_uniform_band(x, band: Band, bank: KernelBank, epsilon: float, rng: np.random.Generator,
                        a: np.ndarray | None = None) -> np.ndarray:
    x = _arr(x)
    if len(band) != len(x):
        raise ValueError(f"band length {len(band)} does not match signal length {len(x)}")
    if a is None:
        a = draw_uniform(band, rng)
    return x + clip_inf(bank_smooth(a - x, bank), 0.0, epsilon)


@dataclass
class ExistenceReport:
    n: int
    seed: int
    frac_gaussian_adversarial: float
    frac_uniform_adversarial: float
    frac_concat_adversarial: Optional[float]
    n_concat: int
    band: Band
    id: str = ""
    label: Optional[RhythmClass] = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "label": None if self.label is None else self.label.value,
            "n": self.n,
            "seed": self.seed,
            "frac_gaussian_adversarial": self.frac_gaussian_adversarial,
            "frac_uniform_adversarial": self.frac_uniform_adversarial,
            "frac_concat_adversarial": self.frac_concat_adversarial,
            "n_concat": self.n_concat,
            "band": {"min": self.band.lower.tolist(), "max": self.band.upper.tolist()},
        }


def _hybrids(samples: np.ndarray, max_pairs: int, pool: int) -> np.ndarray:
    """Splice up to ``max_pairs`` crossing pairs among the first ``pool`` samples.

    Each pair is cut at its crossing nearest the middle of the signal.
    """
    length = samples.shape[1]
    mid = length / 2.0
    out = []
    m = min(pool, len(samples))
    for i in range(m):
        for j in range(i + 1, m):
            cuts = [t for t in find_intersections(samples[i], samples[j]) if 1 <= t < length]
            if not cuts:
                continue
            t = min(cuts, key=lambda c: (abs(c - mid), c))
            out.append(concatenate_at(samples[i], samples[j], t))
            if len(out) >= max_pairs:
                return np.stack(out)
    return np.stack(out) if out else np.empty((0, length))


def existence_experiment(model, x, x_adv, y, n: int = 1000, bank: KernelBank | None = None,
                         epsilon: float = 10.0, seed: int = 0, noise: NoiseSpec = NoiseSpec(),
                         max_pairs: int = 100, pair_pool: int = 200) -> ExistenceReport:
    """Measure how much of the neighbourhood of ``x_adv`` stays adversarial.

    A variant is adversarial when the model does not predict the true class
    ``y``.  Hybrids from concatenation are classified as spliced, without
    further smoothing.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    bank = bank or KernelBank.default()
    x, x_adv = _arr(x), _arr(x_adv)
    if x.shape != x_adv.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {x_adv.shape}")
    y = RhythmClass.parse(y).index

    deltas = np.stack([_stream(seed, _GAUSS_STREAM, i).normal(0.0, noise.std, size=x.shape) for i in range(n)])
    gauss = x + clip_inf(bank_smooth(x_adv + deltas - x, bank), 0.0, epsilon)
    band = build_band(gauss)

    draws = np.stack([draw_uniform(band, _stream(seed, _UNIFORM_STREAM, i)) for i in range(n)])
    uniform = x + clip_inf(bank_smooth(draws - x, bank), 0.0, epsilon)

    hybrids = _hybrids(gauss, max_pairs, pair_pool)

    def frac_adv(batch):
        if len(batch) == 0:
            return None
        pred, _ = model.predict_batch(batch)
        return float(np.mean(pred != y))

    return ExistenceReport(
        n=n,
        seed=seed,
        frac_gaussian_adversarial=frac_adv(gauss),
        frac_uniform_adversarial=frac_adv(uniform),
        frac_concat_adversarial=frac_adv(hybrids),
        n_concat=len(hybrids),
        band=band,
        label=RhythmClass.from_index(y),
    )
