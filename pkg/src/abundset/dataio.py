"""Dataset ingestion, label derivation and train/test splitting.

File formats (all tab-separated):

* manifest: header ``sample_id  label  path`` (extra columns allowed);
  ``path`` is relative to the manifest's directory. An empty or ``NA``
  label means unlabeled unless a :class:`LabelRule` derives it.
* record file: no header, one row per sequence: ``abundance  v1 .. v_dim``.
* metadata table: header row, one row per sample, keyed by ``sample_id``.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .aggregate import Sample
from .errors import ConfigError, ConflictError, DataError, SchemaError

log = logging.getLogger(__name__)

MANIFEST_COLUMNS = ("sample_id", "label", "path")
MISSING = {"", "na", "n/a", "nan", "none"}


# ---------------------------------------------------------------------------
# label rules
# ---------------------------------------------------------------------------


@dataclass
class LabelRule:
    """Maps a metadata row to 1, 0 or exclusion.

    kinds:
      ``field-equals``     1 if ``row[field]`` is in ``positive``, else 0
      ``threshold-binary`` 1 if float(row[field]) >= ``threshold``, else 0;
                           non-numeric values are excluded
      ``empo3-soil``       1 for "Solid (non-saline)", else 0
    Values listed in ``exclude`` (case-insensitive) are always excluded.
    """

    kind: str
    field: str = "label"
    positive: tuple[str, ...] = ()
    exclude: tuple[str, ...] = ("not applicable", "not provided", "missing")
    threshold: float | None = None

    KINDS = ("field-equals", "threshold-binary", "empo3-soil")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError("label_rule.kind", f"unknown rule kind {self.kind!r}")
        self.positive = tuple(self.positive)
        self.exclude = tuple(self.exclude)
        if self.kind == "empo3-soil" and not self.positive:
            self.positive = ("Solid (non-saline)",)
        if self.kind == "field-equals" and not self.positive:
            raise ConfigError("label_rule.positive", "field-equals needs at least one positive value")
        if self.kind == "threshold-binary" and self.threshold is None:
            raise ConfigError("label_rule.threshold", "threshold-binary needs a threshold")

    @classmethod
    def from_dict(cls, d: Mapping) -> "LabelRule":
        known = {"kind", "field", "positive", "exclude", "threshold"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError("label_rule", f"unknown keys {sorted(unknown)}")
        return cls(**d)

    def apply(self, value: str) -> int | None:
        v = value.strip()
        if v.lower() in {e.lower() for e in self.exclude} or v.lower() in MISSING:
            return None
        if self.kind == "threshold-binary":
            try:
                x = float(v)
            except ValueError:
                return None
            return int(x >= self.threshold)
        return int(v in self.positive)


def derive_labels(metadata: Iterable[Mapping[str, str]], rule: LabelRule,
                  id_field: str = "sample_id") -> tuple[dict[str, int], list[str]]:
    """Label every metadata row; returns ``(labels by id, excluded ids)``."""
    labels: dict[str, int] = {}
    excluded: list[str] = []
    for row in metadata:
        if rule.field not in row:
            raise ConfigError("label_rule.field", f"field {rule.field!r} not in metadata")
        sid = row[id_field]
        label = rule.apply(row[rule.field])
        if label is None:
            excluded.append(sid)
        else:
            labels[sid] = label
    return labels, excluded


def read_table(path) -> list[dict[str, str]]:
    """Header-keyed rows of a TSV file."""
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            reader = csv.reader(fh, delimiter="\t")
            header = next(reader, None)
            if header is None:
                raise DataError(f"{path}: empty table")
            rows = []
            for lineno, fields in enumerate(reader, start=2):
                if not fields:
                    continue
                if len(fields) != len(header):
                    raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(fields)}")
                rows.append(dict(zip(header, fields)))
            return rows
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------


@dataclass
class Dataset:
    """Loaded samples plus the ids dropped or excluded on the way."""

    samples: list[Sample]
    dim: int
    rejected: list[str] = field(default_factory=list)
    excluded: list[str] = field(default_factory=list)
    source: Path | None = None

    def __iter__(self):
        return iter(self.samples)

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    @property
    def labels(self) -> dict[str, int | None]:
        return {s.id: s.label for s in self.samples}

    def by_id(self) -> dict[str, Sample]:
        return {s.id: s for s in self.samples}


def read_records(path, dim: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Parse a record file into ``(abundances, embeddings)``."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read record file {path}: {exc}") from exc
    rows = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        fields = line.rstrip("\n").split("\t")
        try:
            values = [float(x) for x in fields]
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric field") from None
        if len(values) < 2:
            raise DataError(f"{path}:{lineno}: need an abundance and at least one embedding value")
        if dim is None:
            dim = len(values) - 1
        elif len(values) - 1 != dim:
            raise SchemaError(f"{path}:{lineno}: {len(values) - 1} embedding columns, dataset has {dim}")
        rows.append(values)
    if not rows:
        return np.zeros(0), np.zeros((0, dim or 0))
    arr = np.asarray(rows, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise DataError(f"{path}: non-finite values")
    if np.any(arr[:, 0] < 0):
        raise DataError(f"{path}: negative abundance")
    return arr[:, 0], arr[:, 1:]


def _parse_label(raw: str, where: str) -> int | None:
    if raw.strip().lower() in MISSING:
        return None
    try:
        return int(raw)
    except ValueError:
        raise DataError(f"{where}: label {raw!r} is not an integer (use a label rule for raw metadata)") from None


def load_dataset(manifest, rule: LabelRule | None = None, dim: int | None = None) -> Dataset:
    """Read a manifest and its record files.

    Zero-abundance records are dropped; samples left empty are reported in
    ``Dataset.rejected``. With a ``rule``, labels come from the rule applied
    to the manifest row and excluded samples are listed in
    ``Dataset.excluded``.
    """
    manifest = Path(manifest)
    if not manifest.is_file():
        raise DataError(f"manifest not found: {manifest}")
    rows = read_table(manifest)
    if rows and not set(MANIFEST_COLUMNS) <= set(rows[0]):
        raise SchemaError(f"{manifest}: header must contain {MANIFEST_COLUMNS}")
    seen = Counter(r["sample_id"] for r in rows)
    dupes = sorted(k for k, v in seen.items() if v > 1)
    if dupes:
        raise DataError(f"{manifest}: duplicate sample ids {dupes}")

    samples, rejected, excluded = [], [], []
    for lineno, row in enumerate(rows, start=2):
        sid = row["sample_id"]
        if rule is not None:
            if rule.field not in row:
                raise ConfigError("label_rule.field", f"field {rule.field!r} not in manifest {manifest}")
            label = rule.apply(row[rule.field])
            if label is None:
                excluded.append(sid)
                continue
        else:
            label = _parse_label(row["label"], f"{manifest}:{lineno}")
        abundances, embeddings = read_records(manifest.parent / row["path"], dim)
        if embeddings.shape[0]:
            dim = embeddings.shape[1]
        keep = abundances > 0
        if not keep.any():
            rejected.append(sid)
            continue
        meta = {k: v for k, v in row.items() if k not in MANIFEST_COLUMNS}
        samples.append(Sample(sid, embeddings[keep], abundances[keep], label, meta))
    if rejected:
        log.warning("%s: rejected %d samples with no non-zero records: %s", manifest, len(rejected), rejected)
    if not samples:
        raise DataError(f"{manifest}: no usable samples")
    return Dataset(samples, dim, rejected, excluded, manifest)


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------


@dataclass
class DatasetSplit:
    train: list[str]
    test: list[str]
    seed: int | None = None

    def to_dict(self) -> dict:
        return {"train": self.train, "test": self.test, "seed": self.seed}


def _pairs(labels) -> list[tuple[str, int]]:
    if isinstance(labels, Mapping):
        items = list(labels.items())
    else:
        items = list(labels)
        if items and not isinstance(items[0], tuple):
            items = [(str(i), lab) for i, lab in enumerate(items)]
    return [(sid, int(lab)) for sid, lab in items if lab is not None]


def split_sizes(class_sizes: Mapping[int, int], train_fraction: float = 0.8) -> dict[int, int]:
    """Per-class test counts.

    The test set holds ceil((1 - train_fraction) * n) samples, shared out by
    largest remainder of each class's proportional quota (ties to the lower
    class). Every class with at least two samples keeps at least one sample
    on each side.
    """
    n = sum(class_sizes.values())
    n_test = math.ceil((1 - Fraction(str(train_fraction))) * n)
    classes = sorted(class_sizes)
    quotas = {c: Fraction(n_test * class_sizes[c], n) for c in classes}
    counts = {c: math.floor(q) for c, q in quotas.items()}
    spare = n_test - sum(counts.values())
    for c in sorted(classes, key=lambda c: (-(quotas[c] - counts[c]), c))[:spare]:
        counts[c] += 1
    for c in classes:
        size = class_sizes[c]
        if size == 1:
            counts[c] = 0
        elif counts[c] == 0:
            counts[c] = 1
            donor = max(classes, key=lambda k: (counts[k], k))
            if donor != c and counts[donor] > 1:
                counts[donor] -= 1
        counts[c] = min(counts[c], max(size - 1, 0))
    return counts


def stratified_split(labels, train_fraction: float = 0.8, seed: int = 0) -> DatasetSplit:
    """Deterministic per-class shuffle-and-cut.

    ``labels`` is a mapping id -> label (None entries are ignored) or a
    sequence of (id, label) pairs.
    """
    if not 0 < train_fraction < 1:
        raise ConfigError("train_fraction", "must be in (0, 1)")
    pairs = _pairs(labels)
    by_class: dict[int, list[str]] = {}
    for sid, lab in pairs:
        by_class.setdefault(lab, []).append(sid)
    if len(by_class) < 2:
        raise DataError(f"stratification needs at least two classes, found {sorted(by_class)}")
    counts = split_sizes({c: len(v) for c, v in by_class.items()}, train_fraction)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in sorted(by_class):
        ids = sorted(by_class[c])
        order = rng.permutation(len(ids))
        test.extend(ids[i] for i in order[:counts[c]])
        train.extend(ids[i] for i in order[counts[c]:])
    return DatasetSplit(sorted(train), sorted(test), seed)


def cross_study_split(train_manifest, test_manifest, rule: LabelRule | None = None
                      ) -> tuple[DatasetSplit, Dataset, Dataset]:
    """Train on one study, test on another; no shuffling."""
    train = load_dataset(train_manifest, rule)
    test = load_dataset(test_manifest, rule)
    overlap = sorted(set(train.ids) & set(test.ids))
    if overlap:
        raise ConflictError(f"sample ids present in both studies: {overlap}")
    if train.dim != test.dim:
        raise SchemaError(f"embedding dimension differs between studies: {train.dim} vs {test.dim}")
    return DatasetSplit(train.ids, test.ids, None), train, test


def label_counts(samples: Sequence[Sample]) -> dict[int, int]:
    return dict(sorted(Counter(s.label for s in samples if s.label is not None).items()))
