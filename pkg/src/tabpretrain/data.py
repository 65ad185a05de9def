"""CSV ingestion, imputation, scaling, one-hot encoding, splits, and the
label-noise / label-masking protocols.

Datasets arrive as a CSV with a header row (empty cells mean missing) plus a
JSON schema sidecar mapping each column name to one of "numerical",
"categorical", or "label". Exactly one label column is required.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

MISSING = None  # internal missing marker; empty CSV cells map to it

KINDS = ("numerical", "categorical", "label")


class IngestionError(ValueError):
    """Malformed CSV input or schema mismatch."""


@dataclass
class Schema:
    names: list[str]
    kinds: list[str]

    def __post_init__(self):
        for k in self.kinds:
            if k not in KINDS:
                raise IngestionError(f"unknown column kind {k!r}")
        if self.kinds.count("label") != 1:
            raise IngestionError("schema must declare exactly one label column")
        if len(self.names) < 2:
            raise IngestionError("schema needs at least one feature column")

    @property
    def label_column(self) -> str:
        return self.names[self.kinds.index("label")]

    def kind_of(self, name: str) -> str:
        return self.kinds[self.names.index(name)]

    @classmethod
    def from_file(cls, path) -> "Schema":
        with open(path) as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise IngestionError("schema file must be a JSON object of column -> kind")
        return cls(list(raw.keys()), list(raw.values()))

    def to_file(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(dict(zip(self.names, self.kinds)), fh, indent=2)


@dataclass
class RawTable:
    names: list[str]
    kinds: list[str]
    columns: list[list]  # column-major cells; MISSING marks absent values

    @property
    def n_rows(self) -> int:
        return len(self.columns[0]) if self.columns else 0


def load_csv(path, schema: Schema) -> RawTable:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        if set(header) != set(schema.names):
            unknown = set(header) - set(schema.names)
            missing = set(schema.names) - set(header)
            bad = sorted(unknown | missing)
            raise IngestionError(f"{path}: header does not match schema, offending column(s): {bad}")
        order = [header.index(name) for name in schema.names]
        columns: list[list] = [[] for _ in schema.names]
        for rownum, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise IngestionError(f"{path}: row {rownum} has {len(row)} cells, expected {len(header)}")
            for col, src in zip(columns, order):
                cell = row[src].strip()
                col.append(MISSING if cell == "" else cell)
    return RawTable(list(schema.names), list(schema.kinds), columns)


def drop_empty_columns(table: RawTable) -> RawTable:
    keep = [
        j
        for j in range(len(table.names))
        if table.kinds[j] == "label" or any(c is not MISSING for c in table.columns[j])
    ]
    return RawTable(
        [table.names[j] for j in keep],
        [table.kinds[j] for j in keep],
        [table.columns[j] for j in keep],
    )


def impute(table: RawTable) -> RawTable:
    """Fill missing cells: numerical -> full-dataset mean, categorical -> mode.

    Mode ties break to the lexicographically smallest category. Statistics are
    computed over the full dataset by design (scalers, by contrast, fit on the
    training split only).
    """
    columns = []
    for name, kind, col in zip(table.names, table.kinds, table.columns):
        present = [c for c in col if c is not MISSING]
        if not present:
            raise IngestionError(f"column {name!r} is entirely missing; drop it first")
        if all(c is not MISSING for c in col):
            columns.append(list(col))
            continue
        if kind == "numerical":
            fill = str(np.mean([float(c) for c in present]))
        else:
            counts = Counter(present)
            best = max(counts.values())
            fill = min(c for c, n in counts.items() if n == best)
        columns.append([fill if c is MISSING else c for c in col])
    return RawTable(list(table.names), list(table.kinds), columns)


@dataclass
class Scaler:
    """Per-numerical-feature statistics for zscore/minmax/mean scaling.

    Standard deviation is the population form (divide by n). Degenerate
    features (std == 0 or max == min) map to 0.
    """

    kind: str
    mean: np.ndarray
    std: np.ndarray
    min: np.ndarray
    max: np.ndarray

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "min": self.min.tolist(),
            "max": self.max.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(d["kind"], *(np.asarray(d[k], dtype=float) for k in ("mean", "std", "min", "max")))


def fit_scaler(train_values: np.ndarray, kind: str) -> Scaler:
    """train_values: (n_train, n_numerical) matrix of the training rows."""
    if kind not in ("zscore", "minmax", "mean", "none"):
        raise ValueError(f"unknown scaling kind {kind!r}")
    v = np.asarray(train_values, dtype=float)
    if v.size == 0:
        z = np.zeros(v.shape[1] if v.ndim == 2 else 0)
        return Scaler(kind, z, z.copy(), z.copy(), z.copy())
    return Scaler(kind, v.mean(axis=0), v.std(axis=0), v.min(axis=0), v.max(axis=0))


def apply_scaler(scaler: Scaler, values: np.ndarray) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if scaler.kind == "none":
        return v.copy()
    span = scaler.max - scaler.min
    if scaler.kind == "zscore":
        denom = scaler.std
        center = scaler.mean
    elif scaler.kind == "minmax":
        denom = span
        center = scaler.min
    else:  # mean scaling
        denom = span
        center = scaler.mean
    out = np.zeros_like(v)
    ok = denom != 0
    out[:, ok] = (v[:, ok] - center[ok]) / denom[ok]
    return out


@dataclass
class ProcessedDataset:
    """Encoded features plus the pre-encoding typed columns used for marginal
    sampling.

    raw_columns[j] is a float array for numerical features (already scaled,
    i.e. in the same units as X) or a list of category strings for categorical
    ones. feature_blocks[j] is the half-open encoded column range of raw
    feature j.
    """

    X: np.ndarray
    y: np.ndarray
    raw_columns: list
    kinds: list[str]  # per raw feature: "numerical" | "categorical"
    categories: dict[int, list[str]]  # raw feature index -> category order
    feature_blocks: list[tuple[int, int]]
    classes: list[str]
    feature_names: list[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def M(self) -> int:
        return len(self.raw_columns)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def encode_value(self, j: int, value) -> np.ndarray:
        """Encoded block for raw feature j taking `value`; unseen categories
        produce an all-zero block."""
        lo, hi = self.feature_blocks[j]
        if self.kinds[j] == "numerical":
            return np.array([float(value)])
        block = np.zeros(hi - lo)
        cats = self.categories[j]
        if value in cats:
            block[cats.index(value)] = 1.0
        return block


def one_hot(table: RawTable, scaler: Scaler | None = None) -> ProcessedDataset:
    """Encode an imputed table. Numerical features pass through (scaled when a
    fitted scaler is given); each categorical feature becomes one binary column
    per observed category, in first-appearance order. Class indices follow
    first appearance in file order."""
    feat_idx = [j for j, k in enumerate(table.kinds) if k != "label"]
    label_idx = table.kinds.index("label")

    num_positions = [j for j in feat_idx if table.kinds[j] == "numerical"]
    if num_positions:
        num_matrix = np.array(
            [[float(c) for c in table.columns[j]] for j in num_positions], dtype=float
        ).T
        if scaler is not None:
            num_matrix = apply_scaler(scaler, num_matrix)
        scaled_numeric = {j: num_matrix[:, k] for k, j in enumerate(num_positions)}
    else:
        scaled_numeric = {}

    raw_columns, kinds, categories, blocks, names = [], [], {}, [], []
    encoded_cols: list[np.ndarray] = []
    pos = 0
    for j in feat_idx:
        names.append(table.names[j])
        if table.kinds[j] == "numerical":
            col = scaled_numeric[j]
            raw_columns.append(col.copy())
            kinds.append("numerical")
            encoded_cols.append(col)
            blocks.append((pos, pos + 1))
            pos += 1
        else:
            col = list(table.columns[j])
            raw_columns.append(col)
            kinds.append("categorical")
            cats = list(dict.fromkeys(col))
            categories[len(raw_columns) - 1] = cats
            block = np.zeros((len(col), len(cats)))
            for i, c in enumerate(col):
                block[i, cats.index(c)] = 1.0
            encoded_cols.extend(block.T)
            blocks.append((pos, pos + len(cats)))
            pos += len(cats)

    X = np.column_stack(encoded_cols) if encoded_cols else np.zeros((table.n_rows, 0))
    label_col = table.columns[label_idx]
    classes = list(dict.fromkeys(label_col))
    y = np.array([classes.index(c) for c in label_col], dtype=np.int64)
    return ProcessedDataset(X, y, raw_columns, kinds, categories, blocks, classes, names)


@dataclass
class Splits:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    seed: int

    def to_dict(self) -> dict:
        return {
            "train": self.train.tolist(),
            "validation": self.validation.tolist(),
            "test": self.test.tolist(),
            "seed": self.seed,
        }


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def make_splits(n: int, seed: int) -> Splits:
    """Seeded 70/10/20 partition (round-half-up on the first two, test takes
    the remainder)."""
    if n < 10:
        raise ValueError("need at least 10 rows to split")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = _round_half_up(0.7 * n)
    n_val = _round_half_up(0.1 * n)
    return Splits(perm[:n_train], perm[n_train : n_train + n_val], perm[n_train + n_val :], seed)


def corrupt_labels(
    y_train: np.ndarray, noise_rate: float, num_classes: int, rng: np.random.Generator
) -> np.ndarray:
    """Redraw exactly round(noise_rate * n) labels uniformly over all classes
    (the true class included)."""
    if not 0.0 <= noise_rate <= 1.0:
        raise ValueError("noise_rate must lie in [0, 1]")
    y = np.asarray(y_train).copy()
    k = _round_half_up(noise_rate * len(y))
    chosen = rng.choice(len(y), size=k, replace=False)
    y[chosen] = rng.integers(0, num_classes, size=k)
    return y


def mask_labels(
    train_indices: np.ndarray, labeled_fraction: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded partition of the training indices into (labeled, unlabeled)."""
    if not 0.0 < labeled_fraction <= 1.0:
        raise ValueError("labeled_fraction must lie in (0, 1]")
    idx = np.asarray(train_indices)
    perm = rng.permutation(len(idx))
    k = _round_half_up(labeled_fraction * len(idx))
    return idx[perm[:k]], idx[perm[k:]]


def process_csv(
    csv_path, schema: Schema, splits_seed: int, scaling: str = "zscore"
) -> tuple[ProcessedDataset, Splits]:
    """Full pipeline: load, drop all-missing columns, impute, split, fit the
    scaler on training rows only, encode."""
    table = drop_empty_columns(load_csv(csv_path, schema))
    table = impute(table)
    splits = make_splits(table.n_rows, splits_seed)
    num_positions = [j for j, k in enumerate(table.kinds) if k == "numerical"]
    if num_positions:
        train_vals = np.array(
            [[float(table.columns[j][i]) for j in num_positions] for i in splits.train],
            dtype=float,
        )
        scaler = fit_scaler(train_vals, scaling)
    else:
        scaler = fit_scaler(np.zeros((0, 0)), scaling)
    return one_hot(table, scaler), splits
