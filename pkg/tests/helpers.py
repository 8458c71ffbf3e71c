"""Independent oracles shared by the test modules."""

import math

import numpy as np

from abundset.numerics import Tape, backward


def central_differences(loss_fn, params, h=1e-5):
    """Numerical gradient of ``loss_fn()`` w.r.t. every tensor in ``params``."""
    grads = {}
    for name, p in params.items():
        base = p.data
        num = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            up = base.copy()
            up[idx] += h
            p.data = up
            fp = loss_fn()
            down = base.copy()
            down[idx] -= h
            p.data = down
            fm = loss_fn()
            num[idx] = (fp - fm) / (2 * h)
        p.data = base
        grads[name] = num
    return grads


def gradient_errors(build_loss, params, h=1e-5):
    """Per-tensor relative error of tape gradients against central differences.

    The denominator is floored at 1% of the largest gradient norm in the
    block so tensors whose exact gradient is zero (e.g. key biases, which
    softmax ignores) are judged against the block's scale.
    """
    params.zero_grad()
    with Tape() as tape:
        loss = build_loss()
    backward(loss, tape, params)
    analytic = {k: p.grad.copy() for k, p in params.items()}
    numeric = central_differences(lambda: float(build_loss().data), params, h)
    scale = max(np.linalg.norm(g) for g in numeric.values())
    errors = {}
    for k in analytic:
        a, n = analytic[k], numeric[k]
        denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-2 * scale, 1e-12)
        errors[k] = float(np.linalg.norm(a - n) / denom)
    return errors


def matmul_loops(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def layer_norm_ref(row, gain, bias, eps):
    n = len(row)
    mu = sum(row) / n
    var = sum((v - mu) ** 2 for v in row) / n
    return np.array([(v - mu) / math.sqrt(var + eps) * g + b for v, g, b in zip(row, gain, bias)])


def mab_reference(x, y, params, prefix, eps=1e-5):
    """Single-head MAB written out row by row from the parameter arrays."""
    P = {k: v.data.astype(np.float64) for k, v in params.items()}
    d = x.shape[1]

    def lin(v, name):
        return v @ P[f"{name}.w"] + P[f"{name}.b"]

    att = f"{prefix}.att"
    q, k, v = lin(x, f"{att}.q"), lin(y, f"{att}.k"), lin(y, f"{att}.v")
    out = np.zeros_like(q)
    for i in range(len(x)):
        scores = [float(np.dot(q[i], k[j])) / math.sqrt(d) for j in range(len(y))]
        top = max(scores)
        w = [math.exp(s - top) for s in scores]
        total = sum(w)
        out[i] = sum((wj / total) * v[j] for j, wj in enumerate(w))
    mh = lin(out, f"{att}.o")
    h = np.array([layer_norm_ref(r, P[f"{prefix}.ln0.g"], P[f"{prefix}.ln0.b"], eps) for r in x + mh])
    ff = lin(np.maximum(lin(h, f"{prefix}.ff.fc1"), 0.0), f"{prefix}.ff.fc2")
    return np.array([layer_norm_ref(r, P[f"{prefix}.ln1.g"], P[f"{prefix}.ln1.b"], eps) for r in h + ff])


def apportion_bruteforce(abundances, budget):
    """Counts minimising sum |c_i - R * alpha_i| with every c_i >= 1, by enumeration.

    Among ties the lexicographically last tuple wins, i.e. lower indices get
    the larger count.
    """
    import itertools
    a = np.asarray(abundances, dtype=float)
    alpha = a / a.sum()
    n = len(a)
    best = None
    for counts in itertools.product(range(1, budget + 1), repeat=n):
        if sum(counts) != budget:
            continue
        err = sum(abs(c - budget * al) for c, al in zip(counts, alpha))
        if best is None or err <= best[0] + 1e-12:
            best = (err, counts)
    return list(best[1])


def silhouette(points, labels):
    points = np.asarray(points)
    labels = np.asarray(labels)
    d = np.sqrt(((points[:, None] - points[None]) ** 2).sum(-1))
    scores = []
    for i in range(len(points)):
        same = (labels == labels[i])
        same[i] = False
        a = d[i, same].mean()
        b = min(d[i, labels == c].mean() for c in set(labels.tolist()) if c != labels[i])
        scores.append((b - a) / max(a, b))
    return float(np.mean(scores))
