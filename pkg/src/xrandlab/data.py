"""Datasets, synthetic generation, CSV ingestion, splitting and seeded randomness."""
from __future__ import annotations

import csv
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ContractError, IngestionError

GOODWARE = 0
MALWARE = 1


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ConfigurationError(f"stream keys must be non-negative, got {key}")
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


def make_rng(seed: int, *keys) -> np.random.Generator:
    """Return a PCG64 generator for ``seed`` and an optional substream path.

    ``make_rng(7, "explain", 12)`` and ``make_rng(7, "explain", 13)`` are
    statistically independent streams; the same arguments always reproduce
    the same stream.
    """
    if seed < 0 or seed >= 2**64:
        raise ConfigurationError(f"seed must be a 64-bit unsigned integer, got {seed}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key_to_int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def child_seed(rng: np.random.Generator) -> int:
    """Draw a fresh 63-bit seed from ``rng`` (for handing to independent workers)."""
    return int(rng.integers(0, 2**63 - 1))


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple
    # rows [boundary:] were appended by ``merge``; None for an unmerged dataset
    boundary: int | None = None
    value_pool: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64, copy=True)
        y = np.array(self.labels, copy=True)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ContractError(f"features must be a non-empty N x d matrix, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise ContractError(f"labels must have shape ({X.shape[0]},), got {y.shape}")
        if not np.all((y == 0) | (y == 1)):
            raise ContractError("labels must contain only 0 (goodware) or 1 (malware)")
        if not np.all(np.isfinite(X)):
            raise ContractError("features must be finite")
        names = tuple(str(n) for n in self.feature_names)
        if len(names) != X.shape[1]:
            raise ContractError(f"expected {X.shape[1]} feature names, got {len(names)}")
        y = y.astype(np.int64)
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "feature_names", names)
        pool = tuple(np.unique(X[:, j]) for j in range(X.shape[1]))
        for p in pool:
            p.setflags(write=False)
        object.__setattr__(self, "value_pool", pool)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> tuple[int, int]:
        n1 = int(self.labels.sum())
        return self.n_samples - n1, n1

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.features[index], self.labels[index], self.feature_names)

    def with_labels(self, labels) -> "Dataset":
        return Dataset(self.features, labels, self.feature_names, self.boundary)


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic two-class benchmark.

    Informative columns get a class-mean shift of ``signal_strength * decay**r``
    where ``r`` is the column's rank within its group, so a handful of columns
    dominate the separation. Goodware-informative columns take larger values on
    goodware (negative correlation with the label), malware-informative columns
    the opposite.
    """

    n_samples: int = 2000
    n_features: int = 100
    n_goodware_informative: int = 20
    n_malware_informative: int = 20
    signal_strength: float = 2.0
    quantization_levels: int = 16
    decay: float = 0.85
    value_range: float = 4.0

    def validate(self):
        if self.n_samples < 1 or self.n_features < 1:
            raise ConfigurationError("n_samples and n_features must be >= 1")
        if self.n_goodware_informative < 0 or self.n_malware_informative < 0:
            raise ConfigurationError("informative counts must be non-negative")
        if self.n_goodware_informative + self.n_malware_informative > self.n_features:
            raise ConfigurationError("n_goodware_informative + n_malware_informative exceeds n_features")
        if not self.signal_strength >= 0:
            raise ConfigurationError("signal_strength must be non-negative")
        if self.quantization_levels < 2:
            raise ConfigurationError("quantization_levels must be >= 2")
        if not 0 < self.decay <= 1:
            raise ConfigurationError("decay must lie in (0, 1]")
        if not self.value_range > 0:
            raise ConfigurationError("value_range must be positive")

    def grid(self) -> np.ndarray:
        return np.linspace(-self.value_range, self.value_range, self.quantization_levels)


def quantize(values: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Snap every entry of ``values`` to the nearest point of the sorted ``grid``."""
    pos = np.searchsorted(grid, values)
    pos = np.clip(pos, 1, len(grid) - 1)
    left = grid[pos - 1]
    right = grid[pos]
    return np.where(values - left <= right - values, left, right)


def generate_synthetic(spec: SynthSpec, rng: np.random.Generator) -> Dataset:
    spec.validate()
    n, d = spec.n_samples, spec.n_features
    n_mal = n // 2
    labels = np.zeros(n, dtype=np.int64)
    labels[:n_mal] = MALWARE
    labels = rng.permutation(labels)

    X = rng.standard_normal((n, d))
    columns = rng.permutation(d)
    centered = labels - 0.5
    g, m = spec.n_goodware_informative, spec.n_malware_informative
    for r, col in enumerate(columns[:g]):
        X[:, col] -= spec.signal_strength * spec.decay**r * centered
    for r, col in enumerate(columns[g:g + m]):
        X[:, col] += spec.signal_strength * spec.decay**r * centered

    X = quantize(X, spec.grid())
    names = [f"f{j}" for j in range(d)]
    return Dataset(X, labels, names)


def informative_columns(spec: SynthSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Recover the (goodware, malware) informative column indices for a seed.

    Consumes ``rng`` exactly as :func:`generate_synthetic` does, so pass a
    generator built from the same seed.
    """
    n, d = spec.n_samples, spec.n_features
    rng.permutation(np.zeros(n))
    rng.standard_normal((n, d))
    columns = rng.permutation(d)
    g, m = spec.n_goodware_informative, spec.n_malware_informative
    return columns[:g].copy(), columns[g:g + m].copy()


def load_csv(path, label_column: str = "label") -> Dataset:
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"{path}: no such file")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: file is empty (a header row is required)") from None
        header = [h.strip() for h in header]
        if label_column not in header:
            raise IngestionError(f"{path}: label column {label_column!r} not found in header")
        label_at = header.index(label_column)
        names = [h for i, h in enumerate(header) if i != label_at]
        if not names:
            raise IngestionError(f"{path}: no feature columns besides {label_column!r}")
        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise IngestionError(f"{path}: row {lineno} has {len(row)} cells, expected {len(header)}")
            values = []
            for i, cell in enumerate(row):
                try:
                    val = float(cell)
                except ValueError:
                    raise IngestionError(
                        f"{path}: row {lineno}, column {header[i]!r}: non-numeric cell {cell!r}"
                    ) from None
                if not math.isfinite(val):
                    raise IngestionError(f"{path}: row {lineno}, column {header[i]!r}: non-finite value {cell!r}")
                if i == label_at:
                    if val not in (0.0, 1.0):
                        raise IngestionError(
                            f"{path}: row {lineno}, column {label_column!r}: label must be 0 or 1, got {cell!r}"
                        )
                    labels.append(int(val))
                else:
                    values.append(val)
            rows.append(values)
    if not rows:
        raise IngestionError(f"{path}: no data rows")
    return Dataset(np.array(rows, dtype=np.float64), np.array(labels), names)


def save_csv(data: Dataset, path, label_column: str = "label"):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(data.feature_names) + [label_column])
        for x, y in zip(data.features, data.labels):
            writer.writerow([repr(float(v)) for v in x] + [int(y)])


def _stratified_quota(counts, fraction):
    ideal = [c * fraction for c in counts]
    quota = [math.floor(q) for q in ideal]
    target = round(sum(counts) * fraction)
    order = sorted(range(len(counts)), key=lambda c: (-(ideal[c] - quota[c]), c))
    for c in order:
        if sum(quota) >= target:
            break
        if quota[c] < counts[c]:
            quota[c] += 1
    return quota


def split(data: Dataset, fraction: float, rng: np.random.Generator) -> tuple[Dataset, Dataset]:
    """Stratified split into a ``fraction`` part and its complement.

    Both parts keep the original relative row order.
    """
    if not 0 < fraction < 1:
        raise ConfigurationError(f"split fraction must lie strictly between 0 and 1, got {fraction}")
    if data.n_samples < 2:
        raise ConfigurationError("cannot stratify a dataset with fewer than 2 rows")
    counts = [int(np.sum(data.labels == c)) for c in (0, 1)]
    quota = _stratified_quota(counts, fraction)
    first = []
    for c in (0, 1):
        idx = np.flatnonzero(data.labels == c)
        first.append(rng.permutation(idx)[:quota[c]])
    first = np.sort(np.concatenate(first))
    if len(first) == 0 or len(first) == data.n_samples:
        raise ConfigurationError(
            f"split fraction {fraction} leaves an empty part for N={data.n_samples}"
        )
    mask = np.zeros(data.n_samples, dtype=bool)
    mask[first] = True
    return data.subset(mask), data.subset(~mask)


def merge(base: Dataset, extra: Dataset) -> Dataset:
    """Append ``extra`` rows below ``base`` and record where they start."""
    if base.n_features != extra.n_features:
        raise ContractError("cannot merge datasets with different feature counts")
    X = np.vstack([base.features, extra.features])
    y = np.concatenate([base.labels, extra.labels])
    return Dataset(X, y, base.feature_names, boundary=base.n_samples)
