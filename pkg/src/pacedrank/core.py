"""Core domain types shared by every other module.

Conventions: feature matrices are row-major with one item per row, all
indices are 0-based, and all randomness flows from explicit seeds so that
repeated runs are bit-identical. Arrays held by these types are locked
(read-only) after construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import (
    ConfigInvalid,
    NonFiniteValue,
    SampleTooLarge,
    ShapeMismatch,
    TooSmall,
)


def _frozen_array(values, dtype=np.float64) -> np.ndarray:
    out = np.array(values, dtype=dtype, order="C")
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Dataset:
    """Aligned image/text feature matrices; row i of each side is one pair."""

    images: np.ndarray  # n x p
    texts: np.ndarray  # n x q
    ids: Optional[tuple[str, ...]] = None

    @property
    def n(self) -> int:
        return self.images.shape[0]

    @property
    def p(self) -> int:
        return self.images.shape[1]

    @property
    def q(self) -> int:
        return self.texts.shape[1]


def validate_dataset(images, texts, ids: Optional[Sequence[str]] = None) -> Dataset:
    """Check shapes and finiteness and return a locked Dataset.

    Raises ShapeMismatch when row counts differ, NonFiniteValue when a NaN
    or infinity is present, and TooSmall for fewer than two pairs.
    """
    images = np.asarray(images, dtype=np.float64)
    texts = np.asarray(texts, dtype=np.float64)
    if images.ndim != 2 or texts.ndim != 2:
        raise ShapeMismatch("feature matrices must be 2-dimensional")
    if images.shape[0] != texts.shape[0]:
        raise ShapeMismatch(
            f"row counts differ: {images.shape[0]} image rows vs "
            f"{texts.shape[0]} text rows"
        )
    if images.shape[0] < 2:
        raise TooSmall("need at least 2 aligned pairs")
    if not np.isfinite(images).all() or not np.isfinite(texts).all():
        raise NonFiniteValue("feature matrices must contain only finite values")
    locked_ids: Optional[tuple[str, ...]] = None
    if ids is not None:
        locked_ids = tuple(str(s) for s in ids)
        if len(locked_ids) != images.shape[0]:
            raise ShapeMismatch("ids length differs from the number of rows")
    return Dataset(_frozen_array(images), _frozen_array(texts), locked_ids)


@dataclass(frozen=True)
class EmbeddingParams:
    """Affine-plus-sigmoid map parameters for both modalities."""

    W1: np.ndarray  # d x p
    b1: np.ndarray  # d
    W2: np.ndarray  # d x q
    b2: np.ndarray  # d

    @property
    def d(self) -> int:
        return self.W1.shape[0]

    @property
    def p(self) -> int:
        return self.W1.shape[1]

    @property
    def q(self) -> int:
        return self.W2.shape[1]

    @classmethod
    def from_arrays(cls, W1, b1, W2, b2) -> "EmbeddingParams":
        """Validating constructor: locks arrays and checks shape consistency."""
        W1 = _frozen_array(W1)
        b1 = _frozen_array(b1)
        W2 = _frozen_array(W2)
        b2 = _frozen_array(b2)
        if W1.ndim != 2 or W2.ndim != 2 or b1.ndim != 1 or b2.ndim != 1:
            raise ShapeMismatch("W1/W2 must be matrices, b1/b2 vectors")
        if W1.shape[0] < 1:
            raise ConfigInvalid("embedding dimension must be at least 1")
        if W1.shape[0] != W2.shape[0] or b1.shape[0] != W1.shape[0] or b2.shape[0] != W1.shape[0]:
            raise ShapeMismatch("embedding dimension differs between components")
        for arr in (W1, b1, W2, b2):
            if not np.isfinite(arr).all():
                raise NonFiniteValue("embedding parameters must be finite")
        return cls(W1, b1, W2, b2)


@dataclass(frozen=True)
class Tetrad:
    """One ranking supervision unit: query k, its aligned item, negative j.

    Under the default construction the order label is always +1: the aligned
    item must outrank the negative.
    """

    query_index: int
    negative_index: int
    label: int = 1

    def __post_init__(self) -> None:
        if self.negative_index == self.query_index:
            raise ConfigInvalid("negative index must differ from the query index")
        if self.label not in (-1, 1):
            raise ConfigInvalid("label must be +1 or -1")


@dataclass(frozen=True)
class TetradSet:
    """Per-query groups of negatives; group k lists the j's paired with query k."""

    n: int
    groups: tuple[np.ndarray, ...]

    @cached_property
    def offsets(self) -> np.ndarray:
        sizes = [0] + [len(g) for g in self.groups]
        return _frozen_array(np.cumsum(sizes), dtype=np.int64)

    @property
    def total(self) -> int:
        return int(self.offsets[-1])

    @cached_property
    def flat_queries(self) -> np.ndarray:
        reps = [np.full(len(g), k, dtype=np.int64) for k, g in enumerate(self.groups)]
        return _frozen_array(np.concatenate(reps) if reps else [], dtype=np.int64)

    @cached_property
    def flat_negatives(self) -> np.ndarray:
        return _frozen_array(
            np.concatenate(self.groups) if self.groups else [], dtype=np.int64
        )

    def iter_tetrads(self) -> Iterator[Tetrad]:
        for k, group in enumerate(self.groups):
            for j in group:
                yield Tetrad(k, int(j))


def build_tetrads(
    dataset: Dataset, m: Optional[int] = None, seed: Optional[int] = None
) -> TetradSet:
    """Construct the per-query tetrad groups.

    With m=None every query is paired with all n-1 other items. With an
    integer m, each query gets m distinct sampled negatives, deterministic
    under the seed. Raises SampleTooLarge when m exceeds n-1.
    """
    n = dataset.n
    if m is None:
        groups = []
        for k in range(n):
            js = np.concatenate([np.arange(k, dtype=np.int64), np.arange(k + 1, n, dtype=np.int64)])
            groups.append(_frozen_array(js, dtype=np.int64))
        return TetradSet(n, tuple(groups))
    if m < 1:
        raise ConfigInvalid("sample size must be at least 1")
    if m > n - 1:
        raise SampleTooLarge(f"requested {m} negatives per query but only {n - 1} exist")
    rng = np.random.default_rng(seed)
    groups = []
    for k in range(n):
        pool = np.concatenate([np.arange(k, dtype=np.int64), np.arange(k + 1, n, dtype=np.int64)])
        picked = rng.choice(pool, size=m, replace=False)
        picked.sort()
        groups.append(_frozen_array(picked, dtype=np.int64))
    return TetradSet(n, tuple(groups))


@dataclass(frozen=True)
class GroupedVector:
    """A flat per-tetrad vector plus offsets mirroring a TetradSet's groups."""

    values: np.ndarray
    offsets: np.ndarray

    def __post_init__(self) -> None:
        values = _frozen_array(self.values)
        offsets = _frozen_array(self.offsets, dtype=np.int64)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "offsets", offsets)
        if offsets.ndim != 1 or len(offsets) < 1 or offsets[0] != 0:
            raise ConfigInvalid("offsets must start at 0")
        if (np.diff(offsets) < 0).any():
            raise ConfigInvalid("offsets must be non-decreasing")
        if int(offsets[-1]) != len(values):
            raise ConfigInvalid("offsets must end at the number of values")

    @classmethod
    def from_groups(cls, groups: Sequence[np.ndarray]) -> "GroupedVector":
        sizes = [0] + [len(g) for g in groups]
        flat = np.concatenate(groups) if groups else np.empty(0)
        return cls(np.asarray(flat, dtype=np.float64), np.cumsum(sizes))

    @property
    def n_groups(self) -> int:
        return len(self.offsets) - 1

    @property
    def total(self) -> int:
        return len(self.values)

    def group(self, k: int) -> np.ndarray:
        return self.values[int(self.offsets[k]) : int(self.offsets[k + 1])]

    def group_sums(self) -> np.ndarray:
        return np.array(
            [float(np.sum(self.group(k))) for k in range(self.n_groups)]
        )

    def group_sizes(self) -> np.ndarray:
        return np.diff(self.offsets)


class ImportanceVector(GroupedVector):
    """Per-tetrad selection weights in [0, 1], grouped per query."""

    def __post_init__(self) -> None:
        super().__post_init__()
        if len(self.values) and (
            (self.values < 0.0).any() or (self.values > 1.0).any()
        ):
            raise ConfigInvalid("importance weights must lie in [0, 1]")


@dataclass(frozen=True)
class PacingState:
    """Self-paced thresholds and their multiplicative growth factors."""

    lam: float
    gamma: float
    lam_growth: float = 1.1
    gamma_growth: float = 1.1

    def __post_init__(self) -> None:
        if not (self.lam > 0.0 and np.isfinite(self.lam)):
            raise ConfigInvalid("lam must be a positive finite real")
        if not (self.gamma >= 0.0 and np.isfinite(self.gamma)):
            raise ConfigInvalid("gamma must be a nonnegative finite real")
        if self.lam_growth < 1.0 or self.gamma_growth < 1.0:
            raise ConfigInvalid("growth factors must be at least 1")


@dataclass(frozen=True)
class LossConfig:
    """Hinge ranking loss settings."""

    margin: float = 0.1

    def __post_init__(self) -> None:
        if not (self.margin >= 0.0 and np.isfinite(self.margin)):
            raise ConfigInvalid("margin must be a nonnegative finite real")
