"""Training loops: contrastive pre-training with early stopping on a static
corrupted validation set, autoencoder and discriminative variants, supervised
fine-tuning, and co-training.

All loops are deterministic given (dataset, splits, config, seed): the run RNG
drives shuffling, corruption, and any dropout/mixup draws in a fixed order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from tabpretrain import losses
from tabpretrain.corruption import (
    ConfigurationError,
    CorruptionConfig,
    MarginalPool,
    build_marginal_pool,
    make_views,
)
from tabpretrain.data import ProcessedDataset, Splits
from tabpretrain.nn import (
    Adam,
    Mlp,
    l2_normalize_rows,
    l2_normalize_rows_backward,
    mse,
    smooth_labels,
    softmax_cross_entropy,
)

HIDDEN_DIM = 256


@dataclass
class PretrainConfig:
    batch_size: int = 128
    temperature: float = 1.0
    corruption: CorruptionConfig = field(default_factory=CorruptionConfig)
    max_epochs: int = 1000
    patience: int = 3
    val_build_epochs: int = 10
    loss: str = "infonce"  # infonce | barlow | align_uniform
    validation_metric: str = "infonce_loss"  # infonce_loss | infonce_error
    barlow_lambda: float = 5e-3
    align_weight: float = 1.0
    uniform_weight: float = 1.0
    learning_rate: float = 1e-3

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.batch_size < 2:
            raise ValueError("contrastive batches need at least 2 examples")


@dataclass
class FinetuneConfig:
    batch_size: int = 128
    max_epochs: int = 200
    patience: int = 3
    learning_rate: float = 1e-3
    label_smoothing: float = 0.0
    dropout: float = 0.0
    mixup_alpha: float = 0.0  # 0 disables mixup
    scarf_augmentation: bool = False
    augmentation_corruption: CorruptionConfig = field(default_factory=CorruptionConfig)


@dataclass
class TrainOutcome:
    train_curve: list[float]
    val_curve: list[float]
    epochs_used: int
    stop_reason: str  # "patience" | "max_epochs"
    best_epoch: int  # 1-based; 0 when no epoch ran
    best_metric: float
    test_accuracy: float | None = None


class ModelBundle:
    """Encoder f (4 layers), contrastive head g (2 layers, l2-normalized
    output), classification head h (2 layers), plus optional decoder /
    discriminator-projection heads and the learnable missing-value vector."""

    def __init__(self, f: Mlp, g: Mlp, h: Mlp, decoder: Mlp | None = None,
                 disc_proj: Mlp | None = None, learnable_missing: np.ndarray | None = None):
        self.f = f
        self.g = g
        self.h = h
        self.decoder = decoder
        self.disc_proj = disc_proj
        self.learnable_missing = learnable_missing

    @classmethod
    def create(
        cls,
        input_dim: int,
        num_classes: int,
        rng: np.random.Generator,
        hidden: int = HIDDEN_DIM,
        with_decoder: bool = False,
        with_disc_proj: bool = False,
        with_learnable_missing: bool = False,
        encoder_layers: int = 4,
        head_layers: int = 2,
    ) -> "ModelBundle":
        f = Mlp.create([input_dim] + [hidden] * encoder_layers, rng, final_activation="relu")
        g = Mlp.create([hidden] * head_layers + [hidden], rng)
        h = Mlp.create([hidden] * head_layers + [num_classes], rng)
        decoder = Mlp.create([hidden] * head_layers + [input_dim], rng) if with_decoder else None
        disc_proj = Mlp.create([hidden, 1], rng) if with_disc_proj else None
        lmv = np.zeros(input_dim) if with_learnable_missing else None
        return cls(f, g, h, decoder, disc_proj, lmv)

    def _nets(self) -> list[Mlp]:
        return [m for m in (self.f, self.g, self.h, self.decoder, self.disc_proj) if m is not None]

    def copy_weights(self) -> list[np.ndarray]:
        out = []
        for net in self._nets():
            out.extend(net.copy_weights())
        if self.learnable_missing is not None:
            out.append(self.learnable_missing.copy())
        return out

    def set_weights(self, weights: list[np.ndarray]) -> None:
        pos = 0
        for net in self._nets():
            k = len(net.parameters())
            net.set_weights(weights[pos : pos + k])
            pos += k
        if self.learnable_missing is not None:
            self.learnable_missing[...] = weights[pos]

    def embed(self, batch: np.ndarray) -> np.ndarray:
        """z = normalize(g(f(batch))), caching for embed_backward."""
        self._g_raw = self.g.forward(self.f.forward(batch))
        return l2_normalize_rows(self._g_raw)

    def embed_backward(self, grad_z: np.ndarray) -> tuple[list, list, np.ndarray]:
        grad_raw = l2_normalize_rows_backward(self._g_raw, grad_z)
        g_grads, grad_mid = self.g.backward(grad_raw)
        f_grads, grad_in = self.f.backward(grad_mid)
        return f_grads, g_grads, grad_in

    def classify(self, batch: np.ndarray, dropout: float = 0.0,
                 rng: np.random.Generator | None = None) -> np.ndarray:
        return self.h.forward(self.f.forward(batch, dropout, rng), dropout, rng)

    def classify_backward(self, grad_logits: np.ndarray) -> tuple[list, list]:
        h_grads, grad_mid = self.h.backward(grad_logits)
        f_grads, _ = self.f.backward(grad_mid)
        return f_grads, h_grads


class EarlyStopper:
    """Stops after `patience` consecutive epochs without strict improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self._bad = 0

    def update(self, metric: float, epoch: int) -> bool:
        if metric < self.best:
            self.best = metric
            self.best_epoch = epoch
            self._bad = 0
        else:
            self._bad += 1
        return self._bad >= self.patience


def iterate_batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


@dataclass
class StaticValidationPairs:
    originals: list[np.ndarray]
    corrupted: list[np.ndarray]


def build_static_validation(
    dataset: ProcessedDataset,
    val_indices: np.ndarray,
    config: CorruptionConfig,
    pool: MarginalPool,
    rng: np.random.Generator,
    epochs: int = 10,
    batch_size: int = 128,
    learnable_values: np.ndarray | None = None,
) -> StaticValidationPairs:
    """Cycle the validation split `epochs` times, storing one corrupted view
    per example per pass. Built once; immutable during training."""
    val_indices = np.asarray(val_indices)
    if val_indices.size == 0:
        raise ValueError("validation split is empty")
    originals, corrupted = [], []
    for _ in range(epochs):
        for batch_idx in iterate_batches(len(val_indices), batch_size, rng):
            batch = dataset.X[val_indices[batch_idx]]
            _, view_b, _ = make_views(batch, dataset, config, pool, rng, learnable_values)
            originals.append(batch)
            corrupted.append(view_b)
    return StaticValidationPairs(originals, corrupted)


def _contrastive_loss(cfg: PretrainConfig, z: np.ndarray, zt: np.ndarray):
    """Loss value and gradients w.r.t. the normalized embeddings."""
    if cfg.loss == "infonce":
        s = z @ zt.T  # rows already unit-norm
        loss, grad_s = losses.infonce(s, cfg.temperature)
        return loss, grad_s @ zt, grad_s.T @ z
    if cfg.loss == "barlow":
        return losses.barlow_twins(z, zt, cfg.barlow_lambda)
    if cfg.loss == "align_uniform":
        return losses.align_uniform(z, zt, cfg.align_weight, cfg.uniform_weight)
    raise ConfigurationError(f"unknown pre-training loss {cfg.loss!r}")


def _validation_metric(bundle: ModelBundle, pairs: StaticValidationPairs, cfg: PretrainConfig) -> float:
    vals, weights = [], []
    for orig, corr in zip(pairs.originals, pairs.corrupted):
        if orig.shape[0] < 2:
            continue
        z = bundle.embed(orig)
        zt = bundle.embed(corr)
        if cfg.validation_metric == "infonce_error":
            vals.append(losses.infonce_error(z @ zt.T))
        else:
            vals.append(_contrastive_loss(cfg, z, zt)[0])
        weights.append(orig.shape[0])
    return float(np.average(vals, weights=weights))


def pretrain_scarf(
    dataset: ProcessedDataset,
    splits: Splits,
    bundle: ModelBundle,
    config: PretrainConfig,
    rng: np.random.Generator,
    pool: MarginalPool | None = None,
) -> TrainOutcome:
    """Contrastive pre-training of f and g; labels are never read.

    Per mini-batch: generate views, embed both through normalize(g(f(.))),
    take one Adam step. After each epoch the metric on the static validation
    pairs decides early stopping; best-epoch weights are restored."""
    if pool is None:
        pool = build_marginal_pool(dataset, splits.train)
    learnable = bundle.learnable_missing if config.corruption.strategy == "missing_learnable" else None
    if config.corruption.strategy == "missing_learnable" and learnable is None:
        raise ConfigurationError("bundle lacks learnable missing values")
    pairs = build_static_validation(
        dataset, splits.validation, config.corruption, pool, rng,
        config.val_build_epochs, config.batch_size, learnable,
    )
    params = bundle.f.parameters() + bundle.g.parameters()
    if learnable is not None:
        params = params + [learnable]
    opt = Adam(params, learning_rate=config.learning_rate)
    train_idx = np.asarray(splits.train)

    stopper = EarlyStopper(config.patience)
    train_curve, val_curve = [], []
    best_weights = bundle.copy_weights()
    stop_reason = "max_epochs"
    epochs_used = 0
    for epoch in range(1, config.max_epochs + 1):
        epoch_losses, epoch_sizes = [], []
        for batch_sel in iterate_batches(len(train_idx), config.batch_size, rng):
            if batch_sel.size < 2:
                continue  # InfoNCE needs a negative
            batch = dataset.X[train_idx[batch_sel]]
            view_a, view_b, draw = make_views(batch, dataset, config.corruption, pool, rng, learnable)
            z = bundle.embed(view_a)
            fa_cache = (bundle.f._cache, bundle.g._cache, bundle._g_raw)
            zt = bundle.embed(view_b)
            loss, grad_z, grad_zt = _contrastive_loss(config, z, zt)
            f_grads_b, g_grads_b, grad_in_b = bundle.embed_backward(grad_zt)
            bundle.f._cache, bundle.g._cache, bundle._g_raw = fa_cache
            f_grads_a, g_grads_a, _ = bundle.embed_backward(grad_z)
            grads = [a + b for a, b in zip(f_grads_a + g_grads_a, f_grads_b + g_grads_b)]
            if learnable is not None:
                lmv_grad = np.where(draw.encoded_mask, grad_in_b, 0.0).sum(axis=0)
                grads.append(lmv_grad)
            opt.step(grads)
            epoch_losses.append(loss)
            epoch_sizes.append(batch_sel.size)
        train_curve.append(float(np.average(epoch_losses, weights=epoch_sizes)) if epoch_losses else np.nan)
        metric = _validation_metric(bundle, pairs, config)
        val_curve.append(metric)
        if metric < stopper.best:
            best_weights = bundle.copy_weights()
        epochs_used = epoch
        if stopper.update(metric, epoch):
            stop_reason = "patience"
            break
    bundle.set_weights(best_weights)
    return TrainOutcome(train_curve, val_curve, epochs_used, stop_reason,
                        stopper.best_epoch, stopper.best)


AE_VARIANTS = ("no_noise", "additive_noise", "scarf_corruption")


def _ae_input(batch, variant, dataset, config, pool, rng, sigma=0.5):
    if variant == "no_noise":
        return np.array(batch, copy=True)
    if variant == "additive_noise":
        return batch + rng.normal(0.0, sigma, size=batch.shape)
    _, view_b, _ = make_views(batch, dataset, config, pool, rng)
    return view_b


def pretrain_autoencoder(
    dataset: ProcessedDataset,
    splits: Splits,
    bundle: ModelBundle,
    variant: str,
    config: PretrainConfig,
    rng: np.random.Generator,
    noise_sigma: float = 0.5,
) -> TrainOutcome:
    """Reconstruction pre-training: decoder(f(x_in)) vs the uncorrupted input,
    MSE loss, early stopping on static validation reconstruction loss."""
    if variant not in AE_VARIANTS:
        raise ConfigurationError(f"unknown autoencoder variant {variant!r}")
    if bundle.decoder is None:
        raise ConfigurationError("autoencoder pre-training requires a decoder head")
    pool = build_marginal_pool(dataset, splits.train)

    val_idx = np.asarray(splits.validation)
    if val_idx.size == 0:
        raise ValueError("validation split is empty")
    originals, corrupted = [], []
    for _ in range(config.val_build_epochs):
        for sel in iterate_batches(len(val_idx), config.batch_size, rng):
            batch = dataset.X[val_idx[sel]]
            originals.append(batch)
            corrupted.append(_ae_input(batch, variant, dataset, config.corruption, pool, rng, noise_sigma))
    train_idx = np.asarray(splits.train)
    opt = Adam(bundle.f.parameters() + bundle.decoder.parameters(), learning_rate=config.learning_rate)

    stopper = EarlyStopper(config.patience)
    train_curve, val_curve = [], []
    best_weights = bundle.copy_weights()
    stop_reason = "max_epochs"
    epochs_used = 0
    for epoch in range(1, config.max_epochs + 1):
        epoch_losses, epoch_sizes = [], []
        for sel in iterate_batches(len(train_idx), config.batch_size, rng):
            batch = dataset.X[train_idx[sel]]
            x_in = _ae_input(batch, variant, dataset, config.corruption, pool, rng, noise_sigma)
            recon = bundle.decoder.forward(bundle.f.forward(x_in))
            loss, grad = mse(recon, batch)
            d_grads, grad_mid = bundle.decoder.backward(grad)
            f_grads, _ = bundle.f.backward(grad_mid)
            opt.step(f_grads + d_grads)
            epoch_losses.append(loss)
            epoch_sizes.append(sel.size)
        train_curve.append(float(np.average(epoch_losses, weights=epoch_sizes)))
        vals = [mse(bundle.decoder.forward(bundle.f.forward(ci)), oi)[0]
                for oi, ci in zip(originals, corrupted)]
        metric = float(np.average(vals, weights=[o.shape[0] for o in originals]))
        val_curve.append(metric)
        if metric < stopper.best:
            best_weights = bundle.copy_weights()
        epochs_used = epoch
        if stopper.update(metric, epoch):
            stop_reason = "patience"
            break
    bundle.set_weights(best_weights)
    return TrainOutcome(train_curve, val_curve, epochs_used, stop_reason,
                        stopper.best_epoch, stopper.best)


def pretrain_discriminative(
    dataset: ProcessedDataset,
    splits: Splits,
    bundle: ModelBundle,
    config: PretrainConfig,
    rng: np.random.Generator,
) -> TrainOutcome:
    """Original-vs-corrupted discrimination through a final scalar projection
    on g; binary logistic loss, validation metric is classification error at
    logit 0 on the static pairs."""
    if bundle.disc_proj is None:
        raise ConfigurationError("discriminative pre-training requires the scalar projection head")
    pool = build_marginal_pool(dataset, splits.train)
    pairs = build_static_validation(
        dataset, splits.validation, config.corruption, pool, rng,
        config.val_build_epochs, config.batch_size,
    )
    params = bundle.f.parameters() + bundle.g.parameters() + bundle.disc_proj.parameters()
    opt = Adam(params, learning_rate=config.learning_rate)
    train_idx = np.asarray(splits.train)

    def logits_of(batch):
        return bundle.disc_proj.forward(bundle.g.forward(bundle.f.forward(batch)))

    stopper = EarlyStopper(config.patience)
    train_curve, val_curve = [], []
    best_weights = bundle.copy_weights()
    stop_reason = "max_epochs"
    epochs_used = 0
    for epoch in range(1, config.max_epochs + 1):
        epoch_losses, epoch_sizes = [], []
        for sel in iterate_batches(len(train_idx), config.batch_size, rng):
            batch = dataset.X[train_idx[sel]]
            _, view_b, _ = make_views(batch, dataset, config.corruption, pool, rng)
            stacked = np.vstack([batch, view_b])
            labels = np.concatenate([np.zeros(len(batch)), np.ones(len(view_b))])
            logit = logits_of(stacked)
            loss, grad = losses.binary_logistic(logit, labels)
            p_grads, grad_mid = bundle.disc_proj.backward(grad.reshape(-1, 1))
            g_grads, grad_mid = bundle.g.backward(grad_mid)
            f_grads, _ = bundle.f.backward(grad_mid)
            opt.step(f_grads + g_grads + p_grads)
            epoch_losses.append(loss)
            epoch_sizes.append(2 * sel.size)
        train_curve.append(float(np.average(epoch_losses, weights=epoch_sizes)))
        errs, sizes = [], []
        for orig, corr in zip(pairs.originals, pairs.corrupted):
            stacked = np.vstack([orig, corr])
            labels = np.concatenate([np.zeros(len(orig)), np.ones(len(corr))])
            pred = (logits_of(stacked).reshape(-1) > 0).astype(float)
            errs.append(float(np.mean(pred != labels)))
            sizes.append(len(labels))
        metric = float(np.average(errs, weights=sizes))
        val_curve.append(metric)
        if metric < stopper.best:
            best_weights = bundle.copy_weights()
        epochs_used = epoch
        if stopper.update(metric, epoch):
            stop_reason = "patience"
            break
    bundle.set_weights(best_weights)
    return TrainOutcome(train_curve, val_curve, epochs_used, stop_reason,
                        stopper.best_epoch, stopper.best)


def _onehot(y: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((len(y), num_classes))
    out[np.arange(len(y)), y] = 1.0
    return out


def classification_error(bundle: ModelBundle, X: np.ndarray, y: np.ndarray) -> float:
    logits = bundle.classify(X)
    return float(np.mean(logits.argmax(axis=1) != y))


def finetune(
    dataset: ProcessedDataset,
    splits: Splits,
    labeled_indices: np.ndarray,
    bundle: ModelBundle,
    config: FinetuneConfig,
    rng: np.random.Generator,
    y_train_override: np.ndarray | None = None,
    soft_targets: np.ndarray | None = None,
    cotrain: "CotrainSpec | None" = None,
    evaluate_test: bool = True,
) -> TrainOutcome:
    """Supervised training of f and h with cross-entropy, early stopping on
    validation classification error, best weights restored, test accuracy
    evaluated once at the end.

    y_train_override supplies per-row labels indexed like dataset.y (used by
    the label-noise and pseudo-labeling protocols); soft_targets, when given,
    is an (n, K) matrix of target distributions indexed by dataset row and
    overrides hard labels."""
    labeled_indices = np.asarray(labeled_indices)
    if labeled_indices.size == 0:
        raise ValueError("no labeled training rows")
    K = dataset.num_classes
    y_full = dataset.y if y_train_override is None else y_train_override

    pool = None
    learnable = None
    if config.scarf_augmentation or cotrain is not None:
        pool = build_marginal_pool(dataset, splits.train)
    params = bundle.f.parameters() + bundle.h.parameters()
    if cotrain is not None and cotrain.aux == "contrastive":
        params = params + bundle.g.parameters()
    if cotrain is not None and cotrain.aux == "autoencoder":
        if bundle.decoder is None:
            raise ConfigurationError("autoencoder co-training requires a decoder head")
        params = params + bundle.decoder.parameters()
    opt = Adam(params, learning_rate=config.learning_rate)

    val_X = dataset.X[splits.validation]
    val_y = dataset.y[splits.validation]

    stopper = EarlyStopper(config.patience)
    train_curve, val_curve = [], []
    best_weights = bundle.copy_weights()
    stop_reason = "max_epochs"
    epochs_used = 0
    for epoch in range(1, config.max_epochs + 1):
        epoch_losses, epoch_sizes = [], []
        for sel in iterate_batches(len(labeled_indices), config.batch_size, rng):
            rows = labeled_indices[sel]
            x = dataset.X[rows]
            if soft_targets is not None:
                targets = soft_targets[rows]
            else:
                targets = _onehot(y_full[rows], K)
                if config.label_smoothing:
                    targets = smooth_labels(targets, config.label_smoothing, K)
            if config.mixup_alpha:
                from tabpretrain.baselines import mixup_batch

                x, targets = mixup_batch(x, targets, config.mixup_alpha, rng)
            if config.scarf_augmentation:
                x, _ = _augment(x, dataset, config.augmentation_corruption, pool, rng)
            logits = bundle.classify(x, config.dropout, rng)
            loss, grad = softmax_cross_entropy(logits, targets)
            h_grads, grad_mid = bundle.h.backward(grad)
            f_grads, _ = bundle.f.backward(grad_mid)
            grads = f_grads + h_grads
            total_loss = loss
            if cotrain is not None:
                aux_loss, aux_grads = _cotrain_term(bundle, x, dataset, pool, rng, cotrain)
                total_loss = loss + cotrain.weight * aux_loss
                for i in range(len(f_grads)):
                    grads[i] = grads[i] + cotrain.weight * aux_grads["f"][i]
                if "extra" in aux_grads:
                    grads = grads + [cotrain.weight * g for g in aux_grads["extra"]]
            opt.step(grads)
            epoch_losses.append(total_loss)
            epoch_sizes.append(sel.size)
        train_curve.append(float(np.average(epoch_losses, weights=epoch_sizes)))
        metric = classification_error(bundle, val_X, val_y)
        val_curve.append(metric)
        if metric < stopper.best:
            best_weights = bundle.copy_weights()
        epochs_used = epoch
        if stopper.update(metric, epoch):
            stop_reason = "patience"
            break
    bundle.set_weights(best_weights)
    outcome = TrainOutcome(train_curve, val_curve, epochs_used, stop_reason,
                           stopper.best_epoch, stopper.best)
    if evaluate_test:
        outcome.test_accuracy = 1.0 - classification_error(
            bundle, dataset.X[splits.test], dataset.y[splits.test]
        )
    return outcome


def _augment(x, dataset, corruption_config, pool, rng):
    """Replace a training batch by its corrupted copy (augmentation baseline)."""
    from tabpretrain.corruption import corrupt_batch, select_indices

    idx = select_indices(dataset.M, corruption_config, x.shape[0], rng)
    return corrupt_batch(x, dataset, corruption_config, pool, idx, rng)


@dataclass
class CotrainSpec:
    weight: float = 0.1
    aux: str = "contrastive"  # or "autoencoder"
    corruption: CorruptionConfig = field(default_factory=CorruptionConfig)
    temperature: float = 1.0
    ae_variant: str = "additive_noise"
    noise_sigma: float = 0.5

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("co-training weight must be nonnegative")


def _cotrain_term(bundle, x, dataset, pool, rng, spec: CotrainSpec):
    """Auxiliary loss on the supervised mini-batch plus gradients for f and the
    auxiliary head."""
    if spec.aux == "contrastive":
        if x.shape[0] < 2:
            return 0.0, {"f": [np.zeros_like(p) for p in bundle.f.parameters()],
                         "extra": [np.zeros_like(p) for p in bundle.g.parameters()]}
        view_a, view_b, _ = make_views(x, dataset, spec.corruption, pool, rng)
        z = bundle.embed(view_a)
        cache = (bundle.f._cache, bundle.g._cache, bundle._g_raw)
        zt = bundle.embed(view_b)
        s = z @ zt.T
        loss, grad_s = losses.infonce(s, spec.temperature)
        f_b, g_b, _ = bundle.embed_backward(grad_s.T @ z)
        bundle.f._cache, bundle.g._cache, bundle._g_raw = cache
        f_a, g_a, _ = bundle.embed_backward(grad_s @ zt)
        return loss, {"f": [a + b for a, b in zip(f_a, f_b)],
                      "extra": [a + b for a, b in zip(g_a, g_b)]}
    x_in = _ae_input(x, spec.ae_variant, dataset, spec.corruption, pool, rng, spec.noise_sigma)
    recon = bundle.decoder.forward(bundle.f.forward(x_in))
    loss, grad = mse(recon, x)
    d_grads, grad_mid = bundle.decoder.backward(grad)
    f_grads, _ = bundle.f.backward(grad_mid)
    return loss, {"f": f_grads, "extra": d_grads}
