"""Dense MLP forward/backward, losses, and the Adam optimizer.

All math is float64 numpy. Weight matrices are stored (in_dim, out_dim) so a
batch forward is ``x @ W + b``. Gradients of every loss are averaged over the
batch, which keeps learning-rate semantics independent of batch size.
"""

from __future__ import annotations

import json

import numpy as np


class ShapeError(ValueError):
    """Incompatible array shapes passed to a numerical operation."""


class StateError(RuntimeError):
    """Operation called out of order (e.g. backward before forward)."""


_ACTIVATIONS = ("relu", "identity")


def _as_f64(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return a


class DenseLayer:
    def __init__(self, weights: np.ndarray, bias: np.ndarray, activation: str = "relu"):
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.weights = _as_f64(weights)
        self.bias = _as_f64(bias)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ShapeError("bias length must equal the layer output width")
        self.activation = activation

    @classmethod
    def init(cls, in_dim: int, out_dim: int, activation: str, rng: np.random.Generator) -> "DenseLayer":
        # Scaled-uniform init with bound sqrt(6 / fan_in); bias zero.
        bound = np.sqrt(6.0 / in_dim)
        w = rng.uniform(-bound, bound, size=(in_dim, out_dim))
        return cls(w, np.zeros(out_dim), activation)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]


class Mlp:
    """Fixed-topology MLP with a cached forward pass for backprop.

    Optional inverted dropout is applied to every layer's post-activation
    output except the last layer's.
    """

    def __init__(self, layers: list[DenseLayer]):
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ShapeError("adjacent layer widths disagree")
        self.layers = layers
        self._cache = None

    @classmethod
    def create(
        cls,
        dims: list[int],
        rng: np.random.Generator,
        final_activation: str = "identity",
    ) -> "Mlp":
        layers = []
        for k in range(len(dims) - 1):
            act = "relu" if k < len(dims) - 2 else final_activation
            layers.append(DenseLayer.init(dims[k], dims[k + 1], act, rng))
        return cls(layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def forward(
        self,
        batch: np.ndarray,
        dropout_rate: float = 0.0,
        rng: np.random.Generator | None = None,
    ) -> np.ndarray:
        x = _as_f64(batch)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(
                f"batch has {x.shape[1] if x.ndim == 2 else '?'} columns, layer expects {self.in_dim}"
            )
        if dropout_rate and rng is None:
            raise ValueError("dropout requires an rng")
        inputs, preacts, masks = [], [], []
        for k, layer in enumerate(self.layers):
            inputs.append(x)
            z = x @ layer.weights + layer.bias
            preacts.append(z)
            x = np.maximum(z, 0.0) if layer.activation == "relu" else z
            if dropout_rate and k < len(self.layers) - 1:
                mask = dropout_mask(x.shape, dropout_rate, rng)
                x = x * mask
                masks.append(mask)
            else:
                masks.append(None)
        self._cache = (inputs, preacts, masks)
        return x

    def backward(self, output_grad: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Gradients w.r.t. every parameter (same order as parameters()) and the input."""
        if self._cache is None:
            raise StateError("backward called before forward")
        inputs, preacts, masks = self._cache
        g = _as_f64(output_grad)
        if g.shape != (inputs[0].shape[0], self.out_dim):
            raise ShapeError("output_grad shape does not match the last forward output")
        grads: list[np.ndarray] = [None] * (2 * len(self.layers))
        for k in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[k]
            if masks[k] is not None:
                g = g * masks[k]
            if layer.activation == "relu":
                g = g * (preacts[k] > 0)
            grads[2 * k] = inputs[k].T @ g
            grads[2 * k + 1] = g.sum(axis=0)
            g = g @ layer.weights.T
        return grads, g

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.append(layer.weights)
            out.append(layer.bias)
        return out

    def copy_weights(self) -> list[np.ndarray]:
        return [p.copy() for p in self.parameters()]

    def set_weights(self, weights: list[np.ndarray]) -> None:
        for p, w in zip(self.parameters(), weights):
            p[...] = w


class Adam:
    """Adam with bias correction over a flat list of parameter arrays.

    Updates are applied in place; a zero gradient leaves parameters
    bit-identical.
    """

    def __init__(
        self,
        params: list[np.ndarray],
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        self.params = params
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.first_moment = [np.zeros_like(p) for p in params]
        self.second_moment = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ShapeError("gradient list length does not match parameter list")
        self.step_count += 1
        t = self.step_count
        for p, g, m, v in zip(self.params, grads, self.first_moment, self.second_moment):
            if g.shape != p.shape:
                raise ShapeError("gradient shape does not match parameter shape")
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1**t)
            v_hat = v / (1 - self.beta2**t)
            p -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, target_dist: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy between row softmax and a target distribution.

    Returns the loss and its gradient w.r.t. the logits.
    """
    logits = _as_f64(logits)
    target = _as_f64(target_dist)
    if logits.shape != target.shape:
        raise ShapeError("logits and target shapes differ")
    if np.any(target < 0) or not np.allclose(target.sum(axis=1), 1.0, atol=1e-8):
        raise ValueError("target rows must be distributions (nonnegative, sum to 1)")
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = float(-(target * log_probs).sum() / n)
    grad = (np.exp(log_probs) - target) / n
    return loss, grad


def smooth_labels(onehot: np.ndarray, weight: float, num_classes: int) -> np.ndarray:
    if not 0.0 <= weight < 1.0:
        raise ValueError("smoothing weight must lie in [0, 1)")
    return (1.0 - weight) * _as_f64(onehot) + weight / num_classes


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: 0 with probability `rate`, else 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must lie in [0, 1)")
    if rate == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


zero_row_normalizations = 0  # diagnostic: zero rows seen by l2_normalize_rows


def l2_normalize_rows(m: np.ndarray) -> np.ndarray:
    """Divide each row by its Euclidean norm; zero rows pass through unchanged
    (counted in `zero_row_normalizations`)."""
    global zero_row_normalizations
    m = _as_f64(m)
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    n_zero = int((norms == 0.0).sum())
    if n_zero:
        zero_row_normalizations += n_zero
    safe = np.where(norms == 0.0, 1.0, norms)
    return m / safe


def l2_normalize_rows_backward(raw: np.ndarray, grad_z: np.ndarray) -> np.ndarray:
    """Backprop through row normalization: raw rows u, z = u/||u||."""
    raw = _as_f64(raw)
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    z = raw / safe
    inner = (z * grad_z).sum(axis=1, keepdims=True)
    return (grad_z - z * inner) / safe


def mse(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    pred = _as_f64(pred)
    target = _as_f64(target)
    if pred.shape != target.shape:
        raise ShapeError("pred and target shapes differ")
    diff = pred - target
    loss = float((diff * diff).mean())
    grad = 2.0 * diff / diff.size
    return loss, grad


def save_mlp(path, mlp: Mlp) -> None:
    """Checkpoint format: npz with a JSON 'meta' entry (dims + activation tags)
    and one row-major float64 array per weight/bias, keyed layer{k}_w / layer{k}_b."""
    meta = {
        "dims": [mlp.in_dim] + [layer.out_dim for layer in mlp.layers],
        "activations": [layer.activation for layer in mlp.layers],
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
    for k, layer in enumerate(mlp.layers):
        arrays[f"layer{k}_w"] = np.ascontiguousarray(layer.weights)
        arrays[f"layer{k}_b"] = np.ascontiguousarray(layer.bias)
    np.savez(path, **arrays)


def load_mlp(path) -> Mlp:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        layers = [
            DenseLayer(data[f"layer{k}_w"], data[f"layer{k}_b"], act)
            for k, act in enumerate(meta["activations"])
        ]
    return Mlp(layers)
