"""Brute-force reference computations used to check the fast code paths.

Nothing here imports from ``ctxvad`` except plain data types.
"""

import math

import numpy as np


def minmax_scan(vectors):
    """Per-dimension min/max by explicit loops."""
    d = len(vectors[0])
    mins = [math.inf] * d
    maxs = [-math.inf] * d
    for v in vectors:
        for i, x in enumerate(v):
            mins[i] = min(mins[i], x)
            maxs[i] = max(maxs[i], x)
    return mins, maxs


def tls_residual_sweep(points, n_angles=20000, refine=3):
    """Min over line direction of sum of squared perpendicular distances.

    For a fixed unit normal n the best offset is the mean projection, so the
    residual is sum((p - mean) . n)^2; sweep the normal angle over [0, pi)
    on a grid, then refine around the best angle with finer local grids.
    """
    p = np.asarray(points, dtype=float)
    d = p - p.mean(axis=0)

    def res(theta):
        n = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        return ((d @ n.T) ** 2).sum(axis=0)

    thetas = np.linspace(0, np.pi, n_angles, endpoint=False)
    r = res(thetas)
    best = thetas[np.argmin(r)]
    step = np.pi / n_angles
    for _ in range(refine):
        local = np.linspace(best - step, best + step, 2001)
        rl = res(local)
        best = local[np.argmin(rl)]
        step = step / 1000
    return float(res(np.array([best]))[0])


def pairwise_auc(scores, labels):
    """P(score+ > score-) + 0.5 P(tie) over all positive/negative pairs."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    pos, neg = s[y], s[~y]
    gt = (pos[:, None] > neg[None, :]).sum()
    eq = (pos[:, None] == neg[None, :]).sum()
    return (gt + 0.5 * eq) / (len(pos) * len(neg))


def confusion_rates(scores, labels, threshold):
    """(FPR, TPR) with abnormal = score > threshold, by direct counting."""
    tp = fp = fn = tn = 0
    for s, y in zip(scores, labels):
        pred = s > threshold
        if y and pred:
            tp += 1
        elif y:
            fn += 1
        elif pred:
            fp += 1
        else:
            tn += 1
    return fp / (fp + tn), tp / (tp + fn)


def dense_sweep_eer(scores, labels, n_thresholds=100_000):
    """EER from a dense grid of thresholds.

    Rates are counted at every grid threshold (abnormal = score > t); the
    crossing of FPR and FNR is located between two consecutive grid points
    and linearly interpolated there.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    pos, neg = np.sort(s[y]), np.sort(s[~y])
    lo, hi = s.min(), s.max()
    pad = (hi - lo) * 1e-3 + 1e-9
    t = np.linspace(lo - pad, hi + pad, n_thresholds)
    fpr = (len(neg) - np.searchsorted(neg, t, side="right")) / len(neg)
    fnr = np.searchsorted(pos, t, side="right") / len(pos)
    d = fpr - fnr  # +1 at low thresholds, -1 at high ones
    hit = np.nonzero(d <= 0)[0][0]
    if d[hit] == 0:
        return float(fpr[hit])
    a, b = hit - 1, hit
    w = d[a] / (d[a] - d[b])
    return float(fpr[a] + w * (fpr[b] - fpr[a]))


def trailing_window_max(speeds, window):
    """Max over positions of the mean of the last min(window, i+1) samples."""
    best = 0.0
    for i in range(len(speeds)):
        chunk = speeds[max(0, i - window + 1): i + 1]
        best = max(best, sum(chunk) / len(chunk))
    return best


def hand_forward(model_dict, x):
    """Eval-mode forward pass with explicit loops over a saved-model dict."""

    def arr(d):
        vals = [float(v) for v in d["data"]]
        if len(d["shape"]) == 1:
            return vals
        rows, cols = d["shape"]
        return [vals[r * cols:(r + 1) * cols] for r in range(rows)]

    h = list(map(float, x))
    layers = model_dict["layers"]
    for li, layer in enumerate(layers):
        W, b = arr(layer["W"]), arr(layer["b"])
        z = [b[j] + sum(h[i] * W[i][j] for i in range(len(h))) for j in range(len(b))]
        if li == len(layers) - 1:
            return z
        bn = model_dict["bn"][li]
        g, be = arr(bn["gamma"]), arr(bn["beta"])
        mu, var = arr(bn["running_mean"]), arr(bn["running_var"])
        eps = float(bn["eps"])
        h = [
            1.0 / (1.0 + math.exp(-((z[j] - mu[j]) / math.sqrt(var[j] + eps) * g[j] + be[j])))
            for j in range(len(z))
        ]
    return h


def central_differences(f, arrays, step=1e-5):
    """Numerical gradient of scalar f() w.r.t. every entry of each array (in place)."""
    out = {}
    for name, a in arrays.items():
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = a[idx]
            a[idx] = old + step
            fp = f()
            a[idx] = old - step
            fm = f()
            a[idx] = old
            g[idx] = (fp - fm) / (2 * step)
        out[name] = g
    return out
