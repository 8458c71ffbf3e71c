"""Exact t-SNE to two dimensions, plus SVG / TSV output."""

from __future__ import annotations

from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .errors import ConfigError, EmptyInputError, NumericError, DimensionError

COLORS = {0: "#1f77b4", 1: "#ff7f0e"}


@dataclass
class TsneConfig:
    perplexity: float = 5.0
    iterations: int = 1000
    exaggeration: float = 12.0
    exaggeration_iters: int = 100
    learning_rate: float = 200.0
    momentum: float = 0.5
    final_momentum: float = 0.8
    momentum_switch: int = 250
    min_gain: float = 0.01
    seed: int = 0
    tol: float = 1e-5
    max_bisection: int = 50

    def validate(self, n_points: int | None = None) -> "TsneConfig":
        if self.iterations < 1:
            raise ConfigError("iterations", "must be >= 1")
        if not self.perplexity > 0:
            raise ConfigError("perplexity", "must be > 0")
        if n_points is not None and self.perplexity >= n_points:
            raise ConfigError("perplexity", f"perplexity {self.perplexity} must be below the {n_points} points")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate", "must be > 0")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TsneResult:
    coordinates: np.ndarray
    kl: float
    kl_history: dict[int, float]


def squared_distances(x: np.ndarray) -> np.ndarray:
    sq = (x * x).sum(axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * x @ x.T
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def _row_affinities(dist: np.ndarray, beta: float) -> tuple[np.ndarray, float]:
    """Gaussian conditional for one row and its Shannon entropy (nats)."""
    shifted = dist - dist.min()
    p = np.exp(-shifted * beta)
    total = p.sum()
    p /= total
    entropy = np.log(total) + beta * float(np.dot(shifted, p))
    return p, entropy


def conditional_affinities(x: np.ndarray, perplexity: float, tol: float = 1e-5,
                           max_steps: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Rows p_{j|i}, each bisected on precision until its entropy is log(perplexity).

    Returns ``(P, entropies)``.
    """
    n = len(x)
    dist = squared_distances(x)
    target = np.log(perplexity)
    P = np.zeros((n, n))
    entropies = np.zeros(n)
    for i in range(n):
        others = np.r_[0:i, i + 1:n]
        di = dist[i, others]
        beta, lo, hi = 1.0, 0.0, np.inf
        # start near the data scale so bisection converges within max_steps
        positive = di[di > 0]
        if positive.size:
            beta = 1.0 / np.median(positive)
        for _ in range(max_steps):
            p, h = _row_affinities(di, beta)
            if abs(h - target) <= tol:
                break
            if h > target:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = (beta + lo) / 2.0
        P[i, others] = p
        entropies[i] = h
    return P, entropies


def joint_affinities(x: np.ndarray, perplexity: float, tol: float = 1e-5, max_steps: int = 50) -> np.ndarray:
    P, _ = conditional_affinities(x, perplexity, tol, max_steps)
    P = (P + P.T) / (2.0 * len(x))
    return np.maximum(P, 1e-12)


def _kl(P: np.ndarray, Q: np.ndarray) -> float:
    return float(np.sum(P * np.log(P / Q)))


def tsne(embeddings, config: TsneConfig | None = None) -> TsneResult:
    """Gradient descent on KL(P || Q) with a Student-t low-dimensional kernel."""
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError("embeddings must be an n x dim matrix")
    n = len(x)
    if n < 3:
        raise ConfigError("perplexity", f"t-SNE needs at least 3 points, got {n}")
    config = (config or TsneConfig()).validate(n)
    if not np.isfinite(x).all():
        raise NumericError("non-finite embedding values")

    P = joint_affinities(x, config.perplexity, config.tol, config.max_bisection)
    rng = np.random.default_rng(config.seed)
    y = 1e-4 * rng.standard_normal((n, 2))
    velocity = np.zeros_like(y)
    gains = np.ones_like(y)
    history: dict[int, float] = {}

    for it in range(config.iterations):
        exaggerate = it < config.exaggeration_iters
        Pe = P * config.exaggeration if exaggerate else P
        num = 1.0 / (1.0 + squared_distances(y))
        np.fill_diagonal(num, 0.0)
        Q = np.maximum(num / num.sum(), 1e-12)
        W = (Pe - Q) * num
        grad = 4.0 * (np.diag(W.sum(axis=1)) - W) @ y

        momentum = config.momentum if it < config.momentum_switch else config.final_momentum
        same_sign = np.sign(grad) == np.sign(velocity)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        gains = np.maximum(gains, config.min_gain)
        velocity = momentum * velocity - config.learning_rate * gains * grad
        y = y + velocity
        y = y - y.mean(axis=0)
        if not np.isfinite(y).all():
            raise NumericError(f"t-SNE diverged at iteration {it + 1}")
        step = it + 1
        if step == config.exaggeration_iters or step % 50 == 0 or step == config.iterations:
            history[step] = _kl(P, _q_matrix(y))
    final = _kl(P, _q_matrix(y))
    history[config.iterations] = final
    return TsneResult(y, final, history)


def _q_matrix(y: np.ndarray) -> np.ndarray:
    num = 1.0 / (1.0 + squared_distances(y))
    np.fill_diagonal(num, 0.0)
    return np.maximum(num / num.sum(), 1e-12)


def _fmt(v: float) -> str:
    return format(float(v), ".9g")


def write_coordinates(path, coordinates, labels, ids=None) -> Path:
    path = Path(path)
    ids = ids if ids is not None else [str(i) for i in range(len(coordinates))]
    lines = ["sample_id\tx\ty\tlabel"]
    for sid, (cx, cy), lab in zip(ids, coordinates, labels):
        lines.append(f"{sid}\t{_fmt(cx)}\t{_fmt(cy)}\t{'' if lab is None else int(lab)}")
    path.write_text("\n".join(lines) + "\n")
    return path


def read_coordinates(path) -> tuple[list[str], np.ndarray, list[int | None]]:
    ids, coords, labels = [], [], []
    for line in Path(path).read_text().splitlines()[1:]:
        sid, cx, cy, lab = line.split("\t")
        ids.append(sid)
        coords.append((float(cx), float(cy)))
        labels.append(int(lab) if lab else None)
    return ids, np.array(coords), labels


def emit_plot(coordinates, labels, path, ids=None, title: str | None = None) -> tuple[Path, Path]:
    """Write an SVG scatter (label 0: blue circles, label 1: orange squares) and a coordinate TSV.

    The TSV goes next to the SVG with a ``.tsv`` suffix. Returns both paths.
    """
    coords = np.asarray(coordinates, dtype=np.float64)
    labels = list(labels)
    if coords.size == 0 or len(coords) == 0:
        raise EmptyInputError("nothing to plot")
    if coords.ndim != 2 or coords.shape[1] != 2 or len(labels) != len(coords):
        raise DimensionError("coordinates must be n x 2 and aligned with labels")
    path = Path(path)
    size, pad, r = 480.0, 30.0, 4.0
    lo = coords.min(axis=0)
    span = np.where(coords.max(axis=0) - lo > 0, coords.max(axis=0) - lo, 1.0)
    px = pad + (coords - lo) / span * (size - 2 * pad)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size:g}" height="{size:g}" '
             f'viewBox="0 0 {size:g} {size:g}" style="background:white">']
    if title:
        parts.append(f'<text x="{pad:g}" y="{pad / 2:g}" font-size="12">{title}</text>')
    for (x, y), lab in zip(px, labels):
        y = size - y
        color = COLORS.get(lab, "#7f7f7f")
        if lab == 1:
            parts.append(f'<rect class="mark label-1" x="{x - r:.2f}" y="{y - r:.2f}" '
                         f'width="{2 * r:g}" height="{2 * r:g}" fill="{color}"/>')
        else:
            parts.append(f'<circle class="mark label-{lab}" cx="{x:.2f}" cy="{y:.2f}" r="{r:g}" fill="{color}"/>')
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")
    tsv = write_coordinates(path.with_suffix(".tsv"), coords, labels, ids)
    return path, tsv
