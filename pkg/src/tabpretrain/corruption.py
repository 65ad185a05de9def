"""Corrupted-view generation: marginal sampling and its ablation variants.

Draw order from the run RNG is documented and fixed: index sets first, then
replacement values, example-major. Marginal and joint strategies operate on the
pre-encoding raw columns and re-encode; mean/gaussian/zero/missing_learnable
operate directly on the encoded matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from tabpretrain.data import ProcessedDataset

STRATEGIES = ("marginal", "none", "mean", "gaussian", "joint", "missing_learnable", "zero")


class ConfigurationError(ValueError):
    """Inconsistent corruption configuration (e.g. strategy without its pool)."""


@dataclass(frozen=True)
class CorruptionConfig:
    strategy: str = "marginal"
    rate: float = 0.6
    index_selection: str = "fixed_count"  # or "bernoulli"
    view_policy: str = "corrupt_one"  # or "corrupt_both"
    index_sharing: str = "per_example"  # or "shared_batch"
    donor: str = "per_example"  # or "single_row"
    gaussian_sigma: float = 0.5
    unique_pool: bool = False  # True: deduplicate each feature's marginal pool

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"unknown strategy {self.strategy!r}")
        if not 0.0 <= self.rate <= 1.0:
            raise ConfigurationError("corruption rate must lie in [0, 1]")
        if self.index_selection not in ("fixed_count", "bernoulli"):
            raise ConfigurationError(f"unknown index_selection {self.index_selection!r}")
        if self.view_policy not in ("corrupt_one", "corrupt_both"):
            raise ConfigurationError(f"unknown view_policy {self.view_policy!r}")
        if self.index_sharing not in ("per_example", "shared_batch"):
            raise ConfigurationError(f"unknown index_sharing {self.index_sharing!r}")
        if self.donor not in ("per_example", "single_row"):
            raise ConfigurationError(f"unknown donor {self.donor!r}")
        if self.gaussian_sigma <= 0:
            raise ConfigurationError("gaussian_sigma must be positive")

    def with_(self, **kw) -> "CorruptionConfig":
        return replace(self, **kw)


@dataclass
class MarginalPool:
    """Per-raw-feature training values, aligned by training row so a donor row
    index selects a consistent raw example. Also carries training-split means
    of the encoded columns for the mean strategy."""

    feature_values: list  # per raw feature: float ndarray or list[str], length n_train
    encoded_mean: np.ndarray
    n_train: int


def build_marginal_pool(dataset: ProcessedDataset, train_indices) -> MarginalPool:
    idx = np.asarray(train_indices)
    if idx.size == 0:
        raise ValueError("cannot build a marginal pool from an empty training split")
    values = []
    for j in range(dataset.M):
        col = dataset.raw_columns[j]
        if dataset.kinds[j] == "numerical":
            values.append(np.asarray(col)[idx].copy())
        else:
            values.append([col[i] for i in idx])
    return MarginalPool(values, dataset.X[idx].mean(axis=0), len(idx))


@dataclass
class CorruptionDraw:
    index_sets: list[np.ndarray]  # per example, corrupted raw feature indices
    encoded_mask: np.ndarray  # bool (batch, M_enc): encoded columns that were replaced


def select_indices(
    M: int, config: CorruptionConfig, batch_size: int, rng: np.random.Generator
) -> list[np.ndarray]:
    """Per-example raw feature index sets.

    fixed_count draws a uniform q-subset with q = floor(rate * M); bernoulli
    includes each index with probability rate, resampling until nonempty.
    shared_batch reuses the first draw for every example.
    """
    if M < 1:
        raise ValueError("need at least one feature")

    def one_set() -> np.ndarray:
        if config.index_selection == "fixed_count":
            q = int(np.floor(config.rate * M))
            return np.sort(rng.choice(M, size=q, replace=False))
        while True:
            picked = np.flatnonzero(rng.random(M) < config.rate)
            if picked.size:
                return picked

    if config.index_sharing == "shared_batch":
        shared = one_set()
        return [shared.copy() for _ in range(batch_size)]
    return [one_set() for _ in range(batch_size)]


def _pool_draw(pool: MarginalPool, j: int, rng: np.random.Generator, unique: bool):
    vals = pool.feature_values[j]
    if unique:
        if isinstance(vals, np.ndarray):
            vals = np.unique(vals)
        else:
            vals = sorted(set(vals))
    return vals[rng.integers(0, len(vals))]


def corrupt_batch(
    batch: np.ndarray,
    dataset: ProcessedDataset,
    config: CorruptionConfig,
    pool: MarginalPool | None,
    index_sets: list[np.ndarray],
    rng: np.random.Generator,
    learnable_values: np.ndarray | None = None,
) -> tuple[np.ndarray, CorruptionDraw]:
    """Apply the configured strategy to a copy of `batch` at the given raw
    feature index sets. Untouched coordinates stay bit-identical."""
    out = np.array(batch, dtype=float, copy=True)
    mask = np.zeros(out.shape, dtype=bool)
    strategy = config.strategy
    if strategy in ("marginal", "joint", "mean") and pool is None:
        raise ConfigurationError(f"strategy {strategy!r} requires a marginal pool")
    if strategy == "missing_learnable" and learnable_values is None:
        raise ConfigurationError("missing_learnable strategy requires learnable values")

    single_donor = None
    if config.donor == "single_row" and strategy in ("marginal", "joint"):
        single_donor = int(rng.integers(0, pool.n_train))

    for i, idx in enumerate(index_sets):
        if strategy == "none" or idx.size == 0:
            continue
        donor = None
        if strategy == "joint":
            donor = single_donor if single_donor is not None else int(rng.integers(0, pool.n_train))
        for j in idx:
            lo, hi = dataset.feature_blocks[j]
            if strategy == "marginal":
                if single_donor is not None:
                    v = pool.feature_values[j][single_donor]
                else:
                    v = _pool_draw(pool, j, rng, config.unique_pool)
                out[i, lo:hi] = dataset.encode_value(j, v)
            elif strategy == "joint":
                out[i, lo:hi] = dataset.encode_value(j, pool.feature_values[j][donor])
            elif strategy == "mean":
                out[i, lo:hi] = pool.encoded_mean[lo:hi]
            elif strategy == "gaussian":
                out[i, lo:hi] += rng.normal(0.0, config.gaussian_sigma, size=hi - lo)
            elif strategy == "zero":
                out[i, lo:hi] = 0.0
            elif strategy == "missing_learnable":
                out[i, lo:hi] = learnable_values[lo:hi]
            mask[i, lo:hi] = True
    return out, CorruptionDraw(index_sets, mask)


def make_views(
    batch: np.ndarray,
    dataset: ProcessedDataset,
    config: CorruptionConfig,
    pool: MarginalPool | None,
    rng: np.random.Generator,
    learnable_values: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, CorruptionDraw]:
    """Build the two contrastive views. corrupt_one keeps view_a bit-identical
    to the input; corrupt_both corrupts both with independent draws. The
    returned draw describes view_b (the one the learnable-missing gradient
    needs)."""
    M = dataset.M
    if config.view_policy == "corrupt_one":
        idx_b = select_indices(M, config, batch.shape[0], rng)
        view_b, draw_b = corrupt_batch(batch, dataset, config, pool, idx_b, rng, learnable_values)
        return np.array(batch, dtype=float, copy=True), view_b, draw_b
    idx_a = select_indices(M, config, batch.shape[0], rng)
    view_a, _ = corrupt_batch(batch, dataset, config, pool, idx_a, rng, learnable_values)
    idx_b = select_indices(M, config, batch.shape[0], rng)
    view_b, draw_b = corrupt_batch(batch, dataset, config, pool, idx_b, rng, learnable_values)
    return view_a, view_b, draw_b
