import numpy as np
import pytest

from tabpretrain.data import ProcessedDataset


def make_numeric_dataset(n=200, d=6, seed=0, separable=True, num_classes=2):
    """Synthetic all-numerical ProcessedDataset with an optional separable
    signal in the first two features."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    if separable:
        y = (X[:, 0] + X[:, 1] > 0).astype(np.int64)
    else:
        y = rng.integers(0, num_classes, size=n)
    classes = [str(k) for k in range(num_classes)]
    return ProcessedDataset(
        X, y, [X[:, j].copy() for j in range(d)], ["numerical"] * d, {},
        [(j, j + 1) for j in range(d)], classes,
    )


def make_blob_dataset(n=400, d=8, seed=0, sep=4.0):
    """Two well-separated Gaussian blobs; linearly separable with margin."""
    rng = np.random.default_rng(seed)
    half = n // 2
    X = np.vstack([
        rng.normal(-sep / 2, 1.0, size=(half, d)),
        rng.normal(sep / 2, 1.0, size=(n - half, d)),
    ])
    y = np.concatenate([np.zeros(half, dtype=np.int64), np.ones(n - half, dtype=np.int64)])
    perm = rng.permutation(n)
    X, y = X[perm], y[perm]
    return ProcessedDataset(
        X, y, [X[:, j].copy() for j in range(d)], ["numerical"] * d, {},
        [(j, j + 1) for j in range(d)], ["0", "1"],
    )


def central_difference(f, params, h=1e-5):
    """Central finite-difference gradient of scalar f() w.r.t. each array in
    params (mutated in place during probing)."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + h
            fp = f()
            p[idx] = orig - h
            fm = f()
            p[idx] = orig
            g[idx] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def assert_grads_close(analytic, numeric, rtol=1e-5):
    for a, n in zip(analytic, numeric):
        scale = max(np.abs(a).max(), np.abs(n).max(), 1e-8)
        np.testing.assert_allclose(a, n, atol=rtol * scale, rtol=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
