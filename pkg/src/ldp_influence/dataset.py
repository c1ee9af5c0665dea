"""Categorical tabular data: loading, encoding, splitting and group selection."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class SchemaError(ValueError):
    pass


class DataParseError(ValueError):
    pass


@dataclass(frozen=True)
class CategoricalDomain:
    name: str
    categories: tuple[str, ...]
    encode: str = "onehot"

    def __post_init__(self):
        cats = tuple(str(c) for c in self.categories)
        object.__setattr__(self, "categories", cats)
        if len(set(cats)) != len(cats):
            raise SchemaError(f"attribute {self.name!r} has duplicate categories")
        if len(cats) < 2:
            raise SchemaError(f"attribute {self.name!r} needs at least 2 categories")
        if self.encode not in ("onehot", "binary"):
            raise SchemaError(f"attribute {self.name!r}: unknown encode mode {self.encode!r}")
        if self.encode == "binary" and len(cats) != 2:
            raise SchemaError(f"attribute {self.name!r}: binary encoding needs exactly 2 categories")

    @property
    def cardinality(self) -> int:
        return len(self.categories)

    def index(self, value: str) -> int:
        try:
            return self.categories.index(str(value))
        except ValueError:
            raise SchemaError(f"unknown category {value!r} for attribute {self.name!r}") from None


@dataclass(frozen=True)
class Dataset:
    """Records stored as category indices, one column per attribute."""

    attributes: tuple[CategoricalDomain, ...]
    records: np.ndarray
    label_attribute: int

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(self.attributes))
        rec = np.asarray(self.records, dtype=np.int64)
        if rec.ndim != 2 or rec.shape[1] != len(self.attributes):
            raise SchemaError(
                f"records must be n x {len(self.attributes)}, got shape {rec.shape}"
            )
        cards = np.array([a.cardinality for a in self.attributes])
        if rec.size and (rec.min() < 0 or np.any(rec >= cards[None, :])):
            raise SchemaError("record value out of range for its attribute")
        if not 0 <= self.label_attribute < len(self.attributes):
            raise SchemaError(f"label attribute index {self.label_attribute} out of range")
        rec.setflags(write=False)
        object.__setattr__(self, "records", rec)

    @property
    def n(self) -> int:
        return self.records.shape[0]

    @property
    def n_classes(self) -> int:
        return self.attributes[self.label_attribute].cardinality

    @property
    def labels(self) -> np.ndarray:
        return self.records[:, self.label_attribute]

    def attribute_index(self, name: str) -> int:
        for i, a in enumerate(self.attributes):
            if a.name == name:
                return i
        raise SchemaError(f"no attribute named {name!r}")

    def subset(self, rows) -> "Dataset":
        return Dataset(self.attributes, self.records[np.asarray(rows, dtype=np.int64)], self.label_attribute)

    def with_records(self, records) -> "Dataset":
        return Dataset(self.attributes, records, self.label_attribute)


@dataclass(frozen=True)
class Schema:
    attributes: tuple[CategoricalDomain, ...]
    label: str
    dedup: bool = False
    features: tuple[str, ...] | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        try:
            attrs = tuple(
                CategoricalDomain(a["name"], tuple(a["categories"]), a.get("encode", "onehot"))
                for a in d["attributes"]
            )
            label = d["label"]
        except (KeyError, TypeError) as e:
            raise SchemaError(f"malformed schema: {e}") from None
        names = [a.name for a in attrs]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate attribute names in schema")
        if label not in names:
            raise SchemaError(f"label {label!r} is not a schema attribute")
        feats = d.get("features")
        if feats is not None:
            unknown = set(feats) - set(names)
            if unknown:
                raise SchemaError(f"unknown feature(s) {sorted(unknown)}")
            feats = tuple(feats)
        return cls(attrs, label, bool(d.get("dedup", False)), feats)

    @classmethod
    def load(cls, path) -> "Schema":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def load_csv(path, schema: Schema | dict) -> Dataset:
    """Read a header-first CSV whose columns include every schema attribute.

    Extra columns are ignored. With ``schema.features`` set, only those features
    (plus the label) are kept. Duplicate rows are dropped (first occurrence
    kept) when ``schema.dedup`` is true.
    """
    if isinstance(schema, dict):
        schema = Schema.from_dict(schema)
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    keep = [a for a in schema.attributes if schema.features is None
            or a.name in schema.features or a.name == schema.label]
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataParseError(f"{path}: empty file") from None
        missing = [a.name for a in keep if a.name not in header]
        if missing:
            raise SchemaError(f"{path}: columns missing from header: {missing}")
        cols = [header.index(a.name) for a in keep]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataParseError(
                    f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}"
                )
            try:
                rows.append([a.index(row[c].strip()) for a, c in zip(keep, cols)])
            except SchemaError as e:
                raise SchemaError(f"{path}: row {lineno}: {e}") from None
    records = np.array(rows, dtype=np.int64).reshape(len(rows), len(keep))
    if schema.dedup and len(records):
        _, first = np.unique(records, axis=0, return_index=True)
        records = records[np.sort(first)]
    label = [a.name for a in keep].index(schema.label)
    return Dataset(tuple(keep), records, label)


@dataclass(frozen=True)
class Encoder:
    """Maps category-index records to a numeric design matrix.

    Each non-label attribute occupies a contiguous column block: ``d`` columns
    for one-hot, one column for binary. The bias column, when present, is last.
    """

    attributes: tuple[CategoricalDomain, ...]
    label_attribute: int
    bias: bool = True
    binarize: bool = False

    @property
    def feature_attributes(self) -> list[int]:
        return [i for i in range(len(self.attributes)) if i != self.label_attribute]

    def _width(self, i: int) -> int:
        a = self.attributes[i]
        if a.encode == "binary" or (self.binarize and a.cardinality == 2):
            return 1
        return a.cardinality

    @property
    def encoding_map(self) -> dict[str, tuple[int, int]]:
        out, start = {}, 0
        for i in self.feature_attributes:
            w = self._width(i)
            out[self.attributes[i].name] = (start, start + w)
            start += w
        return out

    @property
    def n_columns(self) -> int:
        return sum(self._width(i) for i in self.feature_attributes) + int(self.bias)

    def encode(self, records: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        records = np.atleast_2d(np.asarray(records, dtype=np.int64))
        n = records.shape[0]
        X = np.zeros((n, self.n_columns))
        rows = np.arange(n)
        start = 0
        for i in self.feature_attributes:
            w = self._width(i)
            if w == 1:
                X[:, start] = records[:, i]
            else:
                X[rows, start + records[:, i]] = 1.0
            start += w
        if self.bias:
            X[:, -1] = 1.0
        return X, records[:, self.label_attribute].copy()

    def decode(self, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`encode`; rejects rows that are not valid encodings."""
        X = np.atleast_2d(X)
        out = np.zeros((X.shape[0], len(self.attributes)), dtype=np.int64)
        for name, (lo, hi) in self.encoding_map.items():
            i = next(j for j, a in enumerate(self.attributes) if a.name == name)
            block = X[:, lo:hi]
            if hi - lo == 1:
                if not np.all((block == 0) | (block == 1)):
                    raise ValueError(f"binary column for {name!r} is not 0/1")
                out[:, i] = block[:, 0].astype(np.int64)
            else:
                if not (np.all((block == 0) | (block == 1)) and np.all(block.sum(axis=1) == 1)):
                    raise ValueError(f"one-hot block for {name!r} is malformed")
                out[:, i] = block.argmax(axis=1)
        out[:, self.label_attribute] = y
        return out


@dataclass(frozen=True)
class EncodedDataset:
    """Design matrix plus the categorical records it came from."""

    X: np.ndarray
    y: np.ndarray
    n_classes: int
    encoder: Encoder | None = None
    records: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=np.int64)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise ValueError(f"design matrix {X.shape} and labels {y.shape} disagree")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise ValueError("label out of range")
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def design_matrix(self) -> np.ndarray:
        return self.X

    @property
    def labels(self) -> np.ndarray:
        return self.y

    @property
    def encoding_map(self) -> dict[str, tuple[int, int]]:
        return self.encoder.encoding_map if self.encoder is not None else {}

    def subset(self, rows) -> "EncodedDataset":
        rows = np.asarray(rows, dtype=np.int64)
        rec = None if self.records is None else self.records[rows]
        return EncodedDataset(self.X[rows], self.y[rows], self.n_classes, self.encoder, rec)

    def with_labels(self, y) -> "EncodedDataset":
        rec = self.records
        if rec is not None and self.encoder is not None:
            rec = rec.copy()
            rec[:, self.encoder.label_attribute] = y
        return EncodedDataset(self.X, y, self.n_classes, self.encoder, rec)

    def reencode(self, records: np.ndarray) -> "EncodedDataset":
        """Encode replacement records with this dataset's encoder."""
        if self.encoder is None:
            raise ValueError("dataset has no encoder; cannot re-encode records")
        X, y = self.encoder.encode(records)
        return EncodedDataset(X, y, self.n_classes, self.encoder, np.asarray(records))


def encode(ds: Dataset, bias: bool = True, binarize: bool = False) -> EncodedDataset:
    """One-hot encode every feature attribute (binary attributes may use one column).

    An attribute declared ``encode="binary"`` always gets a single column;
    ``binarize=True`` does the same for every two-category attribute.
    """
    enc = Encoder(ds.attributes, ds.label_attribute, bias=bias, binarize=binarize)
    X, y = enc.encode(ds.records)
    return EncodedDataset(X, y, ds.n_classes, enc, ds.records)


def split(ds: Dataset, test_fraction: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    perm = np.random.default_rng(seed).permutation(ds.n)
    n_test = int(round(test_fraction * ds.n))
    test = np.sort(perm[:n_test])
    train = np.sort(perm[n_test:])
    return ds.subset(train), ds.subset(test)


@dataclass(frozen=True)
class SelectionRule:
    attribute: str
    value: str
    fraction: float
    seed: int = 0


@dataclass(frozen=True)
class GroupSpec:
    """Training rows to randomize (``indices``) and test rows to score (``test_indices``)."""

    indices: np.ndarray
    test_indices: np.ndarray
    rule: SelectionRule | None = None

    def __post_init__(self):
        for name in ("indices", "test_indices"):
            a = np.unique(np.asarray(getattr(self, name), dtype=np.int64))
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def size(self) -> int:
        return len(self.indices)


def select_group(train: Dataset, rule: SelectionRule, test: Dataset | None = None,
                 n_test: int | None = None, allow_empty: bool = False) -> GroupSpec:
    """Pick the first ``floor(k * m)`` of the ``m`` matching rows after a seeded shuffle.

    The shuffle depends only on the rule's seed and the matching rows, so for a
    fixed seed smaller fractions select prefixes of larger ones. The test group
    defaults to every test row.
    """
    if not 0 < rule.fraction <= 1:
        raise ValueError(f"group fraction must be in (0, 1], got {rule.fraction}")
    a = train.attribute_index(rule.attribute)
    code = train.attributes[a].index(rule.value)
    match = np.flatnonzero(train.records[:, a] == code)
    if match.size == 0:
        raise ValueError(f"no training rows with {rule.attribute} == {rule.value!r}")
    order = np.random.default_rng(rule.seed).permutation(match)
    size = int(np.floor(rule.fraction * match.size + 1e-9))
    if size == 0 and not allow_empty:
        raise ValueError(
            f"fraction {rule.fraction} of {match.size} matching rows selects nothing"
        )
    if n_test is None:
        n_test = test.n if test is not None else 0
    return GroupSpec(order[:size], np.arange(n_test), rule)


def subsample_test(group: GroupSpec, size: int, seed: int = 0) -> GroupSpec:
    """Replace the test group by a seeded random subset of ``size`` rows."""
    te = group.test_indices
    if size >= te.size:
        return group
    pick = np.random.default_rng(seed).choice(te, size=size, replace=False)
    return GroupSpec(group.indices, pick, group.rule)


def make_synthetic(n: int = 2000, cardinalities: Sequence[int] = (2, 2, 2, 2, 2),
                   n_classes: int = 2, strength: float = 1.5, noise: float = 1.0,
                   seed: int = 0) -> Dataset:
    """Random categorical dataset whose label depends on the features.

    Features are drawn uniformly; the label comes from a softmax over random
    per-category effects scaled by ``strength``, with logit noise of scale ``noise``.
    """
    rng = np.random.default_rng(seed)
    cards = [int(d) for d in cardinalities]
    feats = np.column_stack([rng.integers(0, d, size=n) for d in cards]) if cards else np.zeros((n, 0), int)
    logits = np.zeros((n, n_classes))
    for j, d in enumerate(cards):
        effect = rng.normal(scale=strength, size=(d, n_classes))
        logits += effect[feats[:, j]]
    logits += rng.gumbel(scale=noise, size=logits.shape)
    y = logits.argmax(axis=1)
    attrs = [CategoricalDomain(f"x{j}", tuple(str(c) for c in range(d)),
                               "binary" if d == 2 else "onehot")
             for j, d in enumerate(cards)]
    attrs.append(CategoricalDomain("label", tuple(str(c) for c in range(n_classes))))
    return Dataset(tuple(attrs), np.column_stack([feats, y]), len(cards))
