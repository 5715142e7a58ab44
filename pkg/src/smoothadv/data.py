"""Signals, labeled datasets, a synthetic rhythm generator and the JSONL format."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

N_CLASSES = 4
MIN_SIGNAL_LENGTH = 16


class DatasetError(ValueError):
    """Malformed, empty or otherwise unusable dataset input."""


class StratificationError(DatasetError):
    pass


class RhythmClass(enum.Enum):
    NORMAL = "Normal"
    AF = "AF"
    OTHER = "Other"
    NOISE = "Noise"

    @property
    def index(self) -> int:
        return _CLASS_ORDER.index(self)

    @classmethod
    def from_index(cls, i: int) -> "RhythmClass":
        return _CLASS_ORDER[int(i)]

    @classmethod
    def parse(cls, label) -> "RhythmClass":
        if isinstance(label, RhythmClass):
            return label
        try:
            return cls(label)
        except ValueError:
            raise DatasetError(f"unknown rhythm label {label!r}") from None

    def __str__(self):
        return self.value


_CLASS_ORDER = list(RhythmClass)


@dataclass(frozen=True, eq=False)
class Signal:
    samples: np.ndarray
    sample_rate_hz: float = 300.0

    def __post_init__(self):
        arr = np.array(self.samples, dtype=np.float64)
        if arr.ndim != 1:
            raise DatasetError(f"signal must be one-dimensional, got shape {arr.shape}")
        if len(arr) < MIN_SIGNAL_LENGTH:
            raise DatasetError(f"signal needs at least {MIN_SIGNAL_LENGTH} samples, got {len(arr)}")
        if not np.isfinite(arr).all():
            raise DatasetError("signal contains non-finite samples")
        if not self.sample_rate_hz > 0:
            raise DatasetError(f"sample rate must be positive, got {self.sample_rate_hz}")
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))

    def __len__(self):
        return len(self.samples)

    def __eq__(self, other):
        if not isinstance(other, Signal):
            return NotImplemented
        return self.sample_rate_hz == other.sample_rate_hz and np.array_equal(self.samples, other.samples)

    __hash__ = None


@dataclass(frozen=True)
class LabeledExample:
    signal: Signal
    label: RhythmClass
    id: str


@dataclass(frozen=True, eq=False)
class Dataset:
    """An ordered collection of labeled examples with unique ids.

    Equality compares the examples only; ``split_seed`` is provenance.
    """

    examples: tuple
    split_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))
        if not self.examples:
            raise DatasetError("empty dataset")
        seen = set()
        for ex in self.examples:
            if ex.id in seen:
                raise DatasetError(f"duplicate example id {ex.id!r}")
            seen.add(ex.id)

    def __len__(self):
        return len(self.examples)

    def __iter__(self) -> Iterator[LabeledExample]:
        return iter(self.examples)

    def __getitem__(self, i) -> LabeledExample:
        return self.examples[i]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.examples == other.examples

    __hash__ = None

    def class_counts(self) -> dict[RhythmClass, int]:
        counts = {c: 0 for c in RhythmClass}
        for ex in self.examples:
            counts[ex.label] += 1
        return counts

    def arrays(self, length: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Stack into ``(n, length)`` samples and ``(n,)`` class indices."""
        if length is None:
            length = max(len(ex.signal) for ex in self.examples)
        x = np.stack([fit_length(ex.signal.samples, length) for ex in self.examples])
        y = np.array([ex.label.index for ex in self.examples], dtype=np.intp)
        return x, y


def fit_length(x, length: int) -> np.ndarray:
    """Zero-pad or truncate at the tail so the last axis has ``length`` samples."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if n == length:
        return x.copy()
    if n > length:
        return x[..., :length].copy()
    pad = [(0, 0)] * (x.ndim - 1) + [(0, length - n)]
    return np.pad(x, pad)


# -- synthetic rhythms -------------------------------------------------------
#
# Beats are sums of Gaussian bumps (P, QRS, T).  The classes:
#   Normal  fixed R-R interval, constant amplitude
#   AF      irregular R-R intervals, no P waves, fibrillatory baseline
#   Other   fixed R-R interval, every second beat a half-height broad complex
#   Noise   white noise

SYNTH_FS = 128.0
R_AMPLITUDE = 100.0
BASELINE_NOISE = 2.0
NOISE_CLASS_STD = 30.0


def _bump(t: np.ndarray, center: float, width: float, height: float) -> np.ndarray:
    return height * np.exp(-0.5 * ((t - center) / width) ** 2)


def _beat_train(rng: np.random.Generator, length: int, beat_times: Sequence[float],
                amplitudes: Sequence[float], p_waves: bool, ectopic: Sequence[bool] = ()) -> np.ndarray:
    t = np.arange(length, dtype=np.float64)
    x = np.zeros(length)
    ectopic = list(ectopic) or [False] * len(beat_times)
    for bt, amp, wide in zip(beat_times, amplitudes, ectopic):
        if wide:
            # broad complex with discordant T wave and no P wave
            x += _bump(t, bt, 4.0, amp)
            x += _bump(t, bt + 20.0, 7.0, -0.4 * amp)
            continue
        x += _bump(t, bt, 1.5, amp)
        x += _bump(t, bt + 3.0, 1.5, -0.2 * amp)  # S dip
        x += _bump(t, bt + 22.0, 6.0, 0.3 * amp)
        if p_waves:
            x += _bump(t, bt - 16.0, 3.0, 0.15 * amp)
    return x + rng.normal(0.0, BASELINE_NOISE, size=length)


def _regular_times(rng: np.random.Generator, length: int, rr: float) -> np.ndarray:
    start = rng.uniform(0.0, rr)
    return np.arange(start - rr, length + rr, rr)


def _synth_one(rng: np.random.Generator, label: RhythmClass, length: int) -> np.ndarray:
    scale = rng.uniform(0.85, 1.15) * R_AMPLITUDE
    if label is RhythmClass.NOISE:
        return rng.normal(0.0, NOISE_CLASS_STD, size=length)
    if label is RhythmClass.AF:
        times, t = [], rng.uniform(-60.0, 0.0)
        while t < length + 60:
            times.append(t)
            t += rng.uniform(25.0, 110.0)
        x = _beat_train(rng, length, times, [scale] * len(times), p_waves=False)
        # fibrillatory waves replace the P waves
        tt = np.arange(length)
        f_hz = rng.uniform(5.0, 8.0)
        x += 0.08 * scale * np.sin(2 * np.pi * f_hz * tt / SYNTH_FS + rng.uniform(0, 2 * np.pi))
        return x
    rr = rng.uniform(55.0, 85.0)
    times = _regular_times(rng, length, rr)
    if label is RhythmClass.OTHER:
        # bigeminy: every second beat is a low, broad ectopic complex
        alternate = [k % 2 == 1 for k in range(len(times))]
        amps = [0.5 * scale if odd else scale for odd in alternate]
        return _beat_train(rng, length, times, amps, p_waves=True, ectopic=alternate)
    return _beat_train(rng, length, times, [scale] * len(times), p_waves=True)


def generate_synthetic(n_per_class: int, length: int, seed: int, fs: float = SYNTH_FS) -> Dataset:
    """``n_per_class`` synthetic recordings per rhythm class.

    Each recording draws from its own stream keyed by ``(seed, class, i)``,
    so the output is a pure function of the arguments.
    """
    if int(n_per_class) != n_per_class or n_per_class < 1:
        raise DatasetError(f"n_per_class must be a positive integer, got {n_per_class!r}")
    if int(length) != length or length < 64:
        raise DatasetError(f"length must be an integer >= 64, got {length!r}")
    examples = []
    for label in RhythmClass:
        for i in range(int(n_per_class)):
            rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, label.index, i])
            samples = _synth_one(rng, label, int(length))
            examples.append(LabeledExample(Signal(samples, fs), label, f"{label.value.lower()}-{i:04d}"))
    return Dataset(tuple(examples), split_seed=int(seed))


# -- splitting ---------------------------------------------------------------


def split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified train/test split; each class contributes round(f * n_c) test examples."""
    if not 0.0 < test_fraction < 1.0:
        raise DatasetError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    by_class: dict[RhythmClass, list[int]] = {}
    for i, ex in enumerate(dataset):
        by_class.setdefault(ex.label, []).append(i)
    rng = np.random.default_rng(seed)
    test_idx = set()
    for label in RhythmClass:
        members = by_class.get(label)
        if not members:
            continue
        if len(members) < 2:
            raise StratificationError(f"class {label} has {len(members)} example; need at least 2 to stratify")
        n_test = int(math.floor(test_fraction * len(members) + 0.5))
        chosen = rng.permutation(len(members))[:n_test]
        test_idx.update(members[k] for k in chosen)
    train = [ex for i, ex in enumerate(dataset) if i not in test_idx]
    test = [ex for i, ex in enumerate(dataset) if i in test_idx]
    if not train or not test:
        raise StratificationError("split leaves an empty side; adjust test_fraction")
    return Dataset(tuple(train), seed), Dataset(tuple(test), seed)


# -- JSONL -------------------------------------------------------------------


def example_to_record(ex: LabeledExample) -> dict:
    return {
        "id": ex.id,
        "label": ex.label.value,
        "fs": ex.signal.sample_rate_hz,
        "samples": ex.signal.samples.tolist(),
    }


def save_dataset(dataset: Iterable[LabeledExample], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ex in dataset:
            fh.write(json.dumps(example_to_record(ex), allow_nan=False))
            fh.write("\n")


def _parse_constant(name):
    raise ValueError(f"non-finite value {name}")


def load_dataset(path, split_seed: int = 0) -> Dataset:
    examples = []
    with open(Path(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line, parse_constant=_parse_constant)
            except ValueError as err:
                raise DatasetError(f"{path}:{lineno}: malformed record: {err}") from None
            if not isinstance(rec, dict):
                raise DatasetError(f"{path}:{lineno}: record must be a JSON object")
            missing = {"id", "label", "fs", "samples"} - rec.keys()
            if missing:
                raise DatasetError(f"{path}:{lineno}: missing field(s) {sorted(missing)}")
            try:
                label = RhythmClass.parse(rec["label"])
            except DatasetError as err:
                raise DatasetError(f"{path}:{lineno}: {err}") from None
            samples = rec["samples"]
            if not isinstance(samples, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in samples
            ):
                raise DatasetError(f"{path}:{lineno}: samples must be a list of numbers")
            try:
                sig = Signal(samples, rec["fs"])
            except (DatasetError, TypeError) as err:
                raise DatasetError(f"{path}:{lineno}: {err}") from None
            examples.append(LabeledExample(sig, label, str(rec["id"])))
    if not examples:
        raise DatasetError("empty dataset")
    return Dataset(tuple(examples), split_seed)
