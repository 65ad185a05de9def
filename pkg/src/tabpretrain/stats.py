"""Benchmark statistics: Welch's t-test, pairwise win matrices with the
minimum-win-ratio column, and relative-improvement (box-plot) exports, plus
line-delimited results persistence for multi-trial sweeps.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass

import numpy as np


@dataclass
class MethodRun:
    dataset_id: str
    method_name: str
    trial_index: int
    seed: int
    setting: str  # full | noise30 | semi25
    test_accuracy: float
    epochs_used: int = 0
    pretrain_epochs: int = 0
    wall_time: float = 0.0

    def key(self) -> tuple:
        return (self.dataset_id, self.method_name, self.setting, self.trial_index)


def append_run(path, run: MethodRun) -> None:
    # wall_time is not persisted so reruns with one seed are byte-identical
    record = asdict(run)
    record.pop("wall_time")
    with open(path, "a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def load_runs(path) -> list[MethodRun]:
    runs = []
    if not os.path.exists(path):
        return runs
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                runs.append(MethodRun(**json.loads(line)))
    return runs


def completed_keys(path) -> set[tuple]:
    return {r.key() for r in load_runs(path)}


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the regularized incomplete beta (Lentz's method)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-12:
            break
    return h


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with df degrees of freedom."""
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    x = df / (df + t * t)
    return regularized_incomplete_beta(df / 2.0, 0.5, x)


def welch_t_test(a, b) -> tuple[float, float, float]:
    """Unequal-variance two-sample t statistic, Welch-Satterthwaite degrees of
    freedom, and the two-sided p-value.

    Both samples having zero variance is a degenerate case: equal means give
    (0, inf, 1); different means count as a deterministic separation (p = 0).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each sample needs at least 2 observations")
    va = a.var(ddof=1)
    vb = b.var(ddof=1)
    diff = a.mean() - b.mean()
    if va == 0.0 and vb == 0.0:
        if diff == 0.0:
            return 0.0, float("inf"), 1.0
        return math.copysign(float("inf"), diff), float("inf"), 0.0
    sa, sb = va / len(a), vb / len(b)
    t = diff / math.sqrt(sa + sb)
    df = (sa + sb) ** 2 / (sa**2 / (len(a) - 1) + sb**2 / (len(b) - 1))
    return float(t), float(df), student_t_two_sided_p(t, df)


def compare(a_runs, b_runs, p_threshold: float) -> str:
    """'win' / 'loss' for a vs b by mean ordering when significant, else 'tie'.
    p exactly at the threshold counts as a tie."""
    _, _, p = welch_t_test(a_runs, b_runs)
    if p >= p_threshold:
        return "tie"
    return "win" if np.mean(a_runs) > np.mean(b_runs) else "loss"


@dataclass
class WinMatrix:
    methods: list[str]
    wins: np.ndarray  # (M, M) significant wins of row method over column method
    losses: np.ndarray

    def ratio(self, i: int, j: int) -> float | None:
        total = self.wins[i, j] + self.losses[i, j]
        return None if total == 0 else self.wins[i, j] / total

    def min_ratio_column(self) -> list[float | None]:
        out = []
        for i in range(len(self.methods)):
            ratios = [self.ratio(i, j) for j in range(len(self.methods)) if j != i]
            ratios = [r for r in ratios if r is not None]
            out.append(min(ratios) if ratios else None)
        return out

    def cell_text(self, i: int, j: int) -> str:
        total = int(self.wins[i, j] + self.losses[i, j])
        return "-" if total == 0 else f"{int(self.wins[i, j])}/{total}"


def _accuracies_by_dataset(runs, method: str, setting: str | None = None):
    out: dict[str, list[float]] = {}
    for r in runs:
        if r.method_name == method and (setting is None or r.setting == setting):
            out.setdefault(r.dataset_id, []).append(r.test_accuracy)
    return out


def win_matrix(runs, methods: list[str], p: float = 0.05, setting: str | None = None) -> WinMatrix:
    per_method = {m: _accuracies_by_dataset(runs, m, setting) for m in methods}
    n = len(methods)
    wins = np.zeros((n, n), dtype=int)
    loss = np.zeros((n, n), dtype=int)
    for i, mi in enumerate(methods):
        for j, mj in enumerate(methods):
            if i == j:
                continue
            shared = set(per_method[mi]) & set(per_method[mj])
            for d in shared:
                verdict = compare(per_method[mi][d], per_method[mj][d], p)
                if verdict == "win":
                    wins[i, j] += 1
                elif verdict == "loss":
                    loss[i, j] += 1
    return WinMatrix(methods, wins, loss)


@dataclass
class BoxPlotEntry:
    method: str
    reference: str
    dataset_id: str
    relative_improvement_pct: float


def relative_improvement(
    runs, method: str, reference: str, p: float = 0.20, setting: str | None = None
) -> list[BoxPlotEntry]:
    """Per-dataset 100*(acc_method - acc_ref)/acc_ref over datasets whose means
    differ at the box-plot p filter. Zero-accuracy references are skipped."""
    acc_m = _accuracies_by_dataset(runs, method, setting)
    acc_r = _accuracies_by_dataset(runs, reference, setting)
    entries = []
    for d in sorted(set(acc_m) & set(acc_r)):
        if compare(acc_m[d], acc_r[d], p) == "tie":
            continue
        ref_mean = float(np.mean(acc_r[d]))
        if ref_mean == 0.0:
            continue
        gain = 100.0 * (float(np.mean(acc_m[d])) - ref_mean) / ref_mean
        entries.append(BoxPlotEntry(method, reference, d, gain))
    return entries


def win_matrix_csv(wm: WinMatrix) -> str:
    header = ["method"] + wm.methods + ["min_ratio"]
    lines = [",".join(header)]
    min_col = wm.min_ratio_column()
    for i, m in enumerate(wm.methods):
        cells = [m]
        for j in range(len(wm.methods)):
            cells.append("" if i == j else wm.cell_text(i, j))
        cells.append("" if min_col[i] is None else f"{min_col[i]:.4f}")
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def box_plot_csv(entries: list[BoxPlotEntry]) -> str:
    lines = ["method,reference,dataset_id,relative_improvement_pct"]
    for e in entries:
        lines.append(f"{e.method},{e.reference},{e.dataset_id},{e.relative_improvement_pct:.4f}")
    return "\n".join(lines) + "\n"


def win_matrix_svg(wm: WinMatrix) -> str:
    """Self-contained heat map of the win matrix with fractional annotations."""
    n = len(wm.methods)
    cell, left, top = 70, 130, 60
    width = left + (n + 1) * cell + 20
    height = top + n * cell + 20
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        '<style>text{font-family:sans-serif;font-size:11px}</style>',
    ]
    for j, m in enumerate(wm.methods):
        parts.append(f'<text x="{left + j * cell + cell / 2}" y="{top - 10}" text-anchor="middle">{m}</text>')
    parts.append(f'<text x="{left + n * cell + cell / 2}" y="{top - 10}" text-anchor="middle">min</text>')
    min_col = wm.min_ratio_column()
    for i, m in enumerate(wm.methods):
        y = top + i * cell
        parts.append(f'<text x="{left - 8}" y="{y + cell / 2}" text-anchor="end">{m}</text>')
        for j in range(n + 1):
            x = left + j * cell
            if j < n:
                r = None if i == j else wm.ratio(i, j)
                label = "" if i == j else wm.cell_text(i, j)
            else:
                r = min_col[i]
                label = "-" if r is None else f"{r:.2f}"
            if r is None:
                fill = "#dddddd"
            else:
                # blue (low) to red (high) through white
                red = int(255 * min(1.0, 2 * r))
                blue = int(255 * min(1.0, 2 * (1 - r)))
                green = int(255 * (1 - abs(2 * r - 1)))
                fill = f"rgb({red},{green},{blue})"
            parts.append(
                f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{fill}" stroke="#888"/>'
            )
            if label:
                parts.append(
                    f'<text x="{x + cell / 2}" y="{y + cell / 2 + 4}" text-anchor="middle">{label}</text>'
                )
    parts.append("</svg>")
    return "\n".join(parts)
