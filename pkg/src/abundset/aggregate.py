"""Sample-level aggregation strategies.

Each strategy maps a :class:`Sample` (an unordered set of sequence
embeddings with abundances) to one fixed-size vector:

* ``average``                  unweighted mean of the unique embeddings
* ``weighted-average``         abundance-weighted mean
* ``set-transformer``          Set Transformer over an abundance-replicated set
* ``weighted-set-transformer`` abundance-weighted sum of per-element encoder outputs
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .errors import ConfigError, DimensionError, EmptyInputError
from .numerics import ParamStore, Tensor, matmul, reshape
from .setattn import SetTransformerConfig, encode_set, pool_set

STRATEGIES = ("average", "weighted-average", "set-transformer", "weighted-set-transformer")
TRANSFORMER_STRATEGIES = ("set-transformer", "weighted-set-transformer")
DEFAULT_BUDGET = 256


@dataclass
class SequenceRecord:
    embedding: np.ndarray
    abundance: float


@dataclass
class Sample:
    """One microbiome sample: row ``i`` of ``embeddings`` has abundance ``abundances[i]``."""

    id: str
    embeddings: np.ndarray
    abundances: np.ndarray
    label: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.embeddings = np.atleast_2d(np.asarray(self.embeddings, dtype=np.float64))
        self.abundances = np.asarray(self.abundances, dtype=np.float64).reshape(-1)
        if len(self.abundances) != self.embeddings.shape[0]:
            raise DimensionError(f"sample {self.id}: {self.embeddings.shape[0]} embeddings "
                                 f"but {len(self.abundances)} abundances")

    @classmethod
    def from_records(cls, id: str, records, label=None) -> "Sample":
        records = list(records)
        if not records:
            raise EmptyInputError(f"sample {id} has no records")
        return cls(id, np.stack([r.embedding for r in records]),
                   np.array([r.abundance for r in records]), label)

    @property
    def n_records(self) -> int:
        return len(self.abundances)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    @property
    def records(self) -> list[SequenceRecord]:
        return [SequenceRecord(e, float(a)) for e, a in zip(self.embeddings, self.abundances)]

    def permuted(self, order) -> "Sample":
        order = np.asarray(order)
        return Sample(self.id, self.embeddings[order], self.abundances[order], self.label, dict(self.meta))


def normalize_abundance(sample: Sample) -> np.ndarray:
    """Relative abundances a_i / sum_j a_j."""
    a = sample.abundances
    if a.size == 0:
        raise EmptyInputError(f"sample {sample.id} has no records")
    if np.any(a < 0):
        raise ValueError(f"sample {sample.id}: negative abundance")
    total = a.sum()
    if not total > 0:
        raise EmptyInputError(f"sample {sample.id}: abundances sum to zero")
    if np.all(a == a[0]):
        # equal abundances reduce to the plain mean bit for bit
        return np.full(a.size, 1.0 / a.size)
    return a / total


def _check_nonempty(sample: Sample):
    if sample.n_records == 0:
        raise EmptyInputError(f"sample {sample.id} has no records")


def average_pool(sample: Sample) -> np.ndarray:
    _check_nonempty(sample)
    n = sample.n_records
    return np.full(n, 1.0 / n) @ sample.embeddings


def weighted_average_pool(sample: Sample) -> np.ndarray:
    _check_nonempty(sample)
    return normalize_abundance(sample) @ sample.embeddings


def _decrement_gain(count: int, quota: Fraction) -> Fraction:
    """Reduction in |count - quota| from taking one copy away."""
    return abs(count - quota) - abs(count - 1 - quota)


def apportion(sample: Sample, budget: int) -> np.ndarray:
    """Copies per record: largest remainder of budget * alpha_i, at least one each.

    Quotas are computed in exact rational arithmetic. Ties go to the lower
    index; records rounded to zero take a copy from the record whose count
    loses the least L1 accuracy by giving one up (ties: the higher index
    gives it up).
    """
    n = sample.n_records
    if budget < n:
        raise ConfigError("budget", f"repetition budget {budget} smaller than {n} records")
    if not sample.abundances.sum() > 0:
        raise EmptyInputError(f"sample {sample.id}: abundances sum to zero")
    return np.array(_apportion_cached(sample.abundances.tobytes(), budget), dtype=np.int64)


@lru_cache(maxsize=4096)
def _apportion_cached(raw: bytes, budget: int) -> tuple[int, ...]:
    a = [Fraction(x) for x in np.frombuffer(raw, dtype=np.float64).tolist()]
    n = len(a)
    total = sum(a)
    quotas = [x * budget / total for x in a]
    counts = [int(q) for q in quotas]
    spare = budget - sum(counts)
    order = sorted(range(n), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:spare]:
        counts[i] += 1
    zeros = [i for i in range(n) if counts[i] == 0]
    if zeros:
        # repeatedly take from the best donor; max-heap on (gain, index)
        heap = [(-_decrement_gain(counts[j], quotas[j]), -j) for j in range(n) if counts[j] > 1]
        heapq.heapify(heap)
        for i in zeros:
            _, neg_j = heapq.heappop(heap)
            j = -neg_j
            counts[j] -= 1
            counts[i] = 1
            if counts[j] > 1:
                heapq.heappush(heap, (-_decrement_gain(counts[j], quotas[j]), neg_j))
    return tuple(counts)


def repetition_expand(sample: Sample, budget: int = DEFAULT_BUDGET) -> np.ndarray:
    """Embeddings with row i repeated ``apportion(sample, budget)[i]`` times."""
    _check_nonempty(sample)
    return np.repeat(sample.embeddings, apportion(sample, budget), axis=0)


def set_transformer_pool(sample: Sample, config: SetTransformerConfig, params: ParamStore,
                         budget: int = DEFAULT_BUDGET) -> Tensor:
    expanded = repetition_expand(sample, budget)
    return pool_set(encode_set(expanded, config, params), config, params)


def weighted_set_transformer_pool(sample: Sample, config: SetTransformerConfig, params: ParamStore) -> Tensor:
    """Encode the unique records once, then take the abundance-weighted sum of the rows."""
    encoded = encode_set(sample.embeddings, config, params)
    alpha = Tensor(normalize_abundance(sample)[None, :], dtype=params.dtype)
    return reshape(matmul(alpha, encoded), (config.model_dim,))


@dataclass
class Aggregator:
    """A named strategy plus whatever it needs at inference time."""

    strategy: str
    config: SetTransformerConfig | None = None
    params: ParamStore | None = None
    budget: int = DEFAULT_BUDGET

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError("strategy", f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.trainable and (self.config is None or self.params is None):
            raise ConfigError("strategy", f"{self.strategy} needs a SetTransformerConfig and ParamStore")

    @property
    def trainable(self) -> bool:
        return self.strategy in TRANSFORMER_STRATEGIES

    @property
    def output_dim(self) -> int | None:
        if self.strategy == "set-transformer":
            return self.config.pooled_dim
        if self.strategy == "weighted-set-transformer":
            return self.config.model_dim
        return self.config.input_dim if self.config else None

    def tensor(self, sample: Sample) -> Tensor:
        """Differentiable embedding (records on the active tape for transformer strategies)."""
        if self.strategy == "set-transformer":
            return set_transformer_pool(sample, self.config, self.params, self.budget)
        if self.strategy == "weighted-set-transformer":
            return weighted_set_transformer_pool(sample, self.config, self.params)
        dtype = self.params.dtype if self.params is not None else np.float64
        return Tensor(self(sample), dtype=dtype)

    def __call__(self, sample: Sample) -> np.ndarray:
        if self.strategy == "average":
            return average_pool(sample)
        if self.strategy == "weighted-average":
            return weighted_average_pool(sample)
        return self.tensor(sample).data.copy()

    def embed_all(self, samples) -> np.ndarray:
        return np.stack([self(s) for s in samples])
