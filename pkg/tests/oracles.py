"""Independent reference computations shared by the unit and acceptance tests."""

import math

import numpy as np

FD_STEP = 1e-5


def fd_gradient(f, x, h=FD_STEP):
    """Central differences of the scalar function ``f`` at ``x``."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(a, b, floor=1e-8):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def naive_mlp_logits(weights, biases, x):
    """Scalar-loop forward pass: tanh on every layer but the last."""
    h = [float(v) for v in x]
    for l, (w, b) in enumerate(zip(weights, biases)):
        out = []
        for r in range(len(w)):
            acc = float(b[r])
            for c in range(len(h)):
                acc += float(w[r][c]) * h[c]
            out.append(acc)
        h = [math.tanh(v) for v in out] if l < len(weights) - 1 else out
    return np.array(h)


def ridge_gap(clf, x):
    """Distance in score between the active piece and the runner-up for piecewise regions (inf if smooth)."""
    from loopfill.classifiers import LShape, UnionOfBalls

    if isinstance(clf, UnionOfBalls):
        s = np.sort(clf._scores(x[None, :])[0])
        return s[-1] - s[-2] if len(s) > 1 else math.inf
    if isinstance(clf, LShape):
        gaps = np.concatenate([x - clf.lo, clf.hi - x])
        cut = np.concatenate([x - clf._cut_lo_open, clf._cut_hi_open - x])
        box_s, cut_s = np.sort(gaps)[:2], np.sort(cut)[:2]
        pieces = sorted([box_s[1] - box_s[0], cut_s[1] - cut_s[0], abs(box_s[0] + cut_s[0])])
        return pieces[0]
    return math.inf


def smooth_probe(clf, rng, lo, hi, margin=1e-3):
    """Uniform point of the box whose FD stencil stays off the non-smooth ridges."""
    while True:
        x = rng.uniform(lo, hi, size=clf.dim)
        if ridge_gap(clf, x) > margin:
            return x


def max_fd_error(clf, probes):
    worst = 0.0
    for x in probes:
        for k in range(clf.num_labels):
            fd = fd_gradient(lambda p: clf.logits(p)[k], x)
            worst = max(worst, rel_err(fd, clf.logit_gradient(x, k)))
    return worst
