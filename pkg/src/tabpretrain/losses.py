"""Contrastive and auxiliary pre-training objectives.

Every loss returns (value, gradients) with gradients averaged so that they are
the exact derivatives of the returned scalar. The contrastive loss keeps the
1/N factor inside the log denominator, so its value differs from the more
common convention by exactly -log N while the gradients coincide.
"""

from __future__ import annotations

import numpy as np

from tabpretrain.nn import ShapeError


def cosine_similarity_matrix(z: np.ndarray, z_tilde: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    z_tilde = np.asarray(z_tilde, dtype=float)
    if z.shape[1] != z_tilde.shape[1]:
        raise ShapeError("embedding widths differ")
    nz = np.linalg.norm(z, axis=1)
    nt = np.linalg.norm(z_tilde, axis=1)
    if np.any(nz == 0) or np.any(nt == 0):
        raise ValueError("zero-norm embedding row")
    return (z / nz[:, None]) @ (z_tilde / nt[:, None]).T


def infonce(s: np.ndarray, temperature: float) -> tuple[float, np.ndarray]:
    """Mean over rows of -log(exp(s_ii/t) / mean_k exp(s_ik/t)), with the
    gradient w.r.t. s."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    s = np.asarray(s, dtype=float)
    n = s.shape[0]
    if s.shape != (n, n):
        raise ShapeError("similarity matrix must be square")
    st = s / temperature
    row_max = st.max(axis=1, keepdims=True)
    e = np.exp(st - row_max)
    lse = np.log(e.sum(axis=1)) + row_max[:, 0]
    # per-row: -s_ii/t + log((1/n) sum_k exp(s_ik/t))
    loss = float(np.mean(-np.diag(st) + lse - np.log(n)))
    p = e / e.sum(axis=1, keepdims=True)
    grad = p.copy()
    grad[np.arange(n), np.arange(n)] -= 1.0
    grad /= n * temperature
    return loss, grad


def infonce_error(s: np.ndarray) -> float:
    """Fraction of rows whose argmax is off the diagonal (ties break to the
    smallest index)."""
    s = np.asarray(s, dtype=float)
    n = s.shape[0]
    if s.shape != (n, n):
        raise ShapeError("similarity matrix must be square")
    return float(np.mean(s.argmax(axis=1) != np.arange(n)))


def binary_logistic(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    logits = np.asarray(logits, dtype=float).reshape(-1)
    labels = np.asarray(labels, dtype=float).reshape(-1)
    if logits.shape != labels.shape:
        raise ShapeError("logits and labels lengths differ")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0 or 1")
    n = logits.size
    # log(1 + exp(-x)) computed stably via logaddexp
    loss = float(np.mean(np.logaddexp(0.0, logits) - labels * logits))
    sigma = 1.0 / (1.0 + np.exp(-logits))
    grad = (sigma - labels) / n
    return loss, grad


def _batch_norm_columns(z: np.ndarray, eps: float = 1e-12):
    mu = z.mean(axis=0)
    centered = z - mu
    std = np.sqrt((centered**2).mean(axis=0))
    denom = std + eps
    return centered / denom, centered, std, denom


def _batch_norm_backward(grad_y, centered, std, denom):
    n = centered.shape[0]
    safe_std = np.where(std == 0.0, 1.0, std)
    term = centered * ((grad_y * centered).sum(axis=0) / (n * safe_std * denom**2))
    return (grad_y - grad_y.mean(axis=0)) / denom - term


def barlow_twins(
    z_a: np.ndarray, z_b: np.ndarray, lambda_offdiag: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """Redundancy-reduction loss on the cross-correlation of batch-normalized
    embeddings: sum_d (1 - C_dd)^2 + lambda * sum_{d != e} C_de^2."""
    z_a = np.asarray(z_a, dtype=float)
    z_b = np.asarray(z_b, dtype=float)
    if z_a.shape != z_b.shape:
        raise ShapeError("view embeddings must share a shape")
    n, d = z_a.shape
    if n < 2:
        raise ValueError("batch normalization needs at least 2 rows")
    ya, ca, sa, da = _batch_norm_columns(z_a)
    yb, cb, sb, db = _batch_norm_columns(z_b)
    c = ya.T @ yb / n
    off = ~np.eye(d, dtype=bool)
    loss = float(((1.0 - np.diag(c)) ** 2).sum() + lambda_offdiag * (c[off] ** 2).sum())
    grad_c = 2.0 * lambda_offdiag * np.where(off, c, 0.0)
    grad_c[np.arange(d), np.arange(d)] = -2.0 * (1.0 - np.diag(c))
    grad_ya = yb @ grad_c.T / n
    grad_yb = ya @ grad_c / n
    return loss, _batch_norm_backward(grad_ya, ca, sa, da), _batch_norm_backward(grad_yb, cb, sb, db)


def align_uniform(
    z: np.ndarray,
    z_tilde: np.ndarray,
    weight_align: float,
    weight_uniform: float,
    cross_pairs: bool = False,
) -> tuple[float, np.ndarray, np.ndarray]:
    """a * mean_i ||z_i - zt_i||^2 + u * log(mean_{i != j} exp(-2||z_i - z_j||^2)).

    The uniformity term uses original-view pairs by default; cross_pairs=True
    additionally pools the corrupted-view embeddings into the pairwise term.
    """
    z = np.asarray(z, dtype=float)
    zt = np.asarray(z_tilde, dtype=float)
    if z.shape != zt.shape:
        raise ShapeError("view embeddings must share a shape")
    n = z.shape[0]
    if n < 2:
        raise ValueError("uniformity needs at least 2 rows")
    diff = z - zt
    align = float((diff**2).sum() / n)
    grad_z = weight_align * 2.0 * diff / n
    grad_zt = -weight_align * 2.0 * diff / n

    pts = np.vstack([z, zt]) if cross_pairs else z
    m = pts.shape[0]
    sq = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    off = ~np.eye(m, dtype=bool)
    expv = np.where(off, np.exp(-2.0 * sq), 0.0)
    total = expv.sum()
    uniform = float(np.log(total / (m * (m - 1))))
    # d/dp_i of log(sum): each unordered pair appears twice in the ordered sum
    w = expv / total
    grad_pts = -8.0 * (pts * w.sum(axis=1, keepdims=True) - w @ pts)
    grad_pts *= weight_uniform
    if cross_pairs:
        grad_z += grad_pts[:n]
        grad_zt += grad_pts[n:]
    else:
        grad_z += grad_pts
    return weight_align * align + weight_uniform * uniform, grad_z, grad_zt
