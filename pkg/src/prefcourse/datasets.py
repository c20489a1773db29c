"""Dataset ingestion: schema-driven CSV loading, min-max scaling, one-hot
encoding, the 80/20 split, and the synthetic two-feature benchmark set."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"


class SchemaError(ValueError):
    """Schema file malformed or inconsistent with itself."""


class DataError(ValueError):
    """CSV contents violate the schema (missing column, bad value, ...)."""


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, CATEGORICAL):
            raise SchemaError(f"unknown feature kind {self.kind!r}")
        if self.kind == CATEGORICAL and len(self.categories) < 2:
            raise SchemaError(f"{self.name}: categorical needs >= 2 categories")
        if self.kind == CONTINUOUS and self.categories:
            raise SchemaError(f"{self.name}: continuous feature lists categories")


@dataclass(frozen=True)
class DatasetSchema:
    """Declarative description of a CSV: feature columns plus the label."""

    features: tuple[FeatureSpec, ...]
    label: str
    positive_label: str = "1"

    def __post_init__(self):
        names = [f.name for f in self.features] + [self.label]
        if len(set(names)) != len(names):
            raise SchemaError("column names must be unique")
        if not self.features:
            raise SchemaError("schema needs at least one feature")

    @classmethod
    def from_json(cls, obj: dict) -> "DatasetSchema":
        feats = tuple(
            FeatureSpec(
                name=f["name"],
                kind=f["kind"],
                categories=tuple(f.get("categories", ())),
            )
            for f in obj["features"]
        )
        return cls(
            features=feats,
            label=obj["label"],
            positive_label=str(obj.get("positive_label", "1")),
        )

    @classmethod
    def from_file(cls, path) -> "DatasetSchema":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def to_json(self) -> dict:
        feats = []
        for f in self.features:
            entry = {"name": f.name, "kind": f.kind}
            if f.kind == CATEGORICAL:
                entry["categories"] = list(f.categories)
            feats.append(entry)
        return {
            "features": feats,
            "label": self.label,
            "positive_label": self.positive_label,
        }


@dataclass(frozen=True)
class Block:
    """Maps one schema feature to its column span in the encoded matrix."""

    name: str
    kind: str
    start: int
    stop: int  # exclusive
    categories: tuple[str, ...] = ()


@dataclass
class Dataset:
    """Scaled, encoded feature matrix with its split and inverse maps."""

    x: np.ndarray
    y: np.ndarray
    train_mask: np.ndarray
    test_mask: np.ndarray
    blocks: list[Block]
    scale_min: np.ndarray  # per encoded column; one-hot columns use (0, 1)
    scale_max: np.ndarray
    name: str = "dataset"
    columns: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.columns:
            self.columns = []
            for b in self.blocks:
                if b.kind == CONTINUOUS:
                    self.columns.append(b.name)
                else:
                    self.columns.extend(f"{b.name}={c}" for c in b.categories)

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def size(self) -> int:
        return self.x.shape[0]

    def train(self) -> tuple[np.ndarray, np.ndarray]:
        return self.x[self.train_mask], self.y[self.train_mask]

    def test(self) -> tuple[np.ndarray, np.ndarray]:
        return self.x[self.test_mask], self.y[self.test_mask]

    def unscale(self, row: np.ndarray) -> dict:
        """Encoded/scaled row back to named original-space values."""
        row = np.asarray(row, dtype=float)
        out: dict = {}
        for b in self.blocks:
            if b.kind == CONTINUOUS:
                lo, hi = self.scale_min[b.start], self.scale_max[b.start]
                out[b.name] = float(row[b.start] * (hi - lo) + lo)
            else:
                out[b.name] = b.categories[int(np.argmax(row[b.start : b.stop]))]
        return out

    def one_hot_blocks(self) -> list[tuple[int, int]]:
        return [(b.start, b.stop) for b in self.blocks if b.kind == CATEGORICAL]

    def encode_row(self, features: dict) -> np.ndarray:
        """Named original-space values to a scaled encoded row.

        Continuous values are clipped into the observed range so the row
        lands inside the unit-box feasible set.
        """
        row = np.zeros(self.dim)
        for b in self.blocks:
            if b.name not in features:
                raise DataError(f"missing feature {b.name!r}")
            v = features[b.name]
            if b.kind == CONTINUOUS:
                lo, hi = self.scale_min[b.start], self.scale_max[b.start]
                try:
                    row[b.start] = min(max((float(v) - lo) / (hi - lo), 0.0), 1.0)
                except (TypeError, ValueError) as exc:
                    raise DataError(f"{b.name}: non-numeric value") from exc
            else:
                if v not in b.categories:
                    raise DataError(f"{b.name}: unknown category {v!r}")
                row[b.start + b.categories.index(str(v))] = 1.0
        return row


def _make_split(n: int, rng: np.random.Generator, train_frac: float = 0.8):
    order = rng.permutation(n)
    cut = int(round(train_frac * n))
    train = np.zeros(n, dtype=bool)
    train[order[:cut]] = True
    return train, ~train


def _encode(
    raw_cols: dict[str, list[str]], schema: DatasetSchema, name: str
) -> tuple[np.ndarray, list[Block], np.ndarray, np.ndarray]:
    n = len(next(iter(raw_cols.values())))
    blocks: list[Block] = []
    parts: list[np.ndarray] = []
    mins: list[float] = []
    maxs: list[float] = []
    start = 0
    for f in schema.features:
        vals = raw_cols[f.name]
        if f.kind == CONTINUOUS:
            try:
                col = np.array([float(v) for v in vals])
            except ValueError as exc:
                raise DataError(f"{f.name}: non-numeric continuous value") from exc
            if not np.all(np.isfinite(col)):
                raise DataError(f"{f.name}: non-finite continuous value")
            lo, hi = float(col.min()), float(col.max())
            if hi <= lo:
                raise DataError(f"{f.name}: constant column (min = max)")
            parts.append(((col - lo) / (hi - lo))[:, None])
            blocks.append(Block(f.name, CONTINUOUS, start, start + 1))
            mins.append(lo)
            maxs.append(hi)
            start += 1
        else:
            index = {c: k for k, c in enumerate(f.categories)}
            hot = np.zeros((n, len(f.categories)))
            for row, v in enumerate(vals):
                if v not in index:
                    raise DataError(f"{f.name}: unseen category {v!r}")
                hot[row, index[v]] = 1.0
            parts.append(hot)
            blocks.append(
                Block(f.name, CATEGORICAL, start, start + len(f.categories), f.categories)
            )
            mins.extend([0.0] * len(f.categories))
            maxs.extend([1.0] * len(f.categories))
            start += len(f.categories)
    x = np.hstack(parts)
    return x, blocks, np.array(mins), np.array(maxs)


def load_csv(
    path,
    schema: DatasetSchema,
    seed: int = 0,
    train_frac: float = 0.8,
) -> Dataset:
    """Scale, encode and split a CSV according to its schema.

    Continuous features map affinely onto [0,1] using the observed min/max;
    categorical features expand to one-hot blocks in schema category order.
    The split is uniform 80/20, deterministic in the seed.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError("empty CSV")
        header = [h.strip() for h in reader.fieldnames]
        rows = [
            {k.strip(): (v or "").strip() for k, v in row.items()} for row in reader
        ]
    needed = [f.name for f in schema.features] + [schema.label]
    for col in needed:
        if col not in header:
            raise DataError(f"missing column {col!r}")
    if len(rows) < 2:
        raise DataError("need at least two data rows")
    raw_cols = {c: [row[c] for row in rows] for c in needed}
    x, blocks, lo, hi = _encode(raw_cols, schema, path.stem)
    y = np.array(
        [1 if v == schema.positive_label else 0 for v in raw_cols[schema.label]]
    )
    rng = np.random.default_rng(seed)
    train, test = _make_split(len(rows), rng, train_frac)
    return Dataset(x, y, train, test, blocks, lo, hi, name=path.stem)


SYNTH_X1_RANGE = (-2.0, 4.0)
SYNTH_X2_RANGE = (-2.0, 7.0)


def synthetic_boundary(x1: np.ndarray) -> np.ndarray:
    return 1.0 + x1 + 2.0 * x1**2 + x1**3 - x1**4


def gen_synthetic(
    n: int, rng: np.random.Generator, train_frac: float = 0.8
) -> Dataset:
    """Two uniform features on [-2,4] x [-2,7]; label 1 above the quartic
    boundary x2 >= 1 + x1 + 2 x1^2 + x1^3 - x1^4.  Scaled like any dataset."""
    if n < 2:
        raise DataError("need n >= 2")
    x1 = rng.uniform(*SYNTH_X1_RANGE, size=n)
    x2 = rng.uniform(*SYNTH_X2_RANGE, size=n)
    y = (x2 >= synthetic_boundary(x1)).astype(int)
    raw = np.column_stack([x1, x2])
    lo, hi = raw.min(axis=0), raw.max(axis=0)
    span = hi - lo
    if np.any(span <= 0):
        raise DataError("degenerate sample: constant feature")
    x = (raw - lo) / span
    blocks = [Block("x1", CONTINUOUS, 0, 1), Block("x2", CONTINUOUS, 1, 2)]
    train, test = _make_split(n, rng, train_frac)
    return Dataset(x, y, train, test, blocks, lo.copy(), hi.copy(), name="synthetic")


def schema_dir() -> Path:
    return Path(__file__).parent / "schemas"


def bundled_schemas() -> dict[str, Path]:
    return {p.stem: p for p in sorted(schema_dir().glob("*.json"))}
