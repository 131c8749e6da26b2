"""Hard-label and differentiable classifiers.

Labels are logit indices ``0 .. K-1``; argmax ties resolve to the smallest
index. The analytic regions are binary: label 1 inside, label 0 outside, with
logits ``[0, score(x)]`` where ``score`` is positive inside.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import GeometryError


class ClassifierError(ValueError):
    pass


class ConfigError(ClassifierError):
    pass


def argmax_first(logits: np.ndarray) -> np.ndarray:
    # np.argmax already returns the first maximal index; kept as a named rule.
    return np.argmax(logits, axis=-1)


class HardLabelClassifier:
    dim: int
    num_labels: int

    def classify_batch(self, xs) -> np.ndarray:
        raise NotImplementedError

    def classify(self, x) -> int:
        x = self._check_point(x)
        return int(self.classify_batch(x[None, :])[0])

    def _check_point(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1 or x.shape[0] != self.dim:
            raise GeometryError(f"dimension mismatch: classifier expects {self.dim}, got shape {x.shape}")
        return x

    def _check_batch(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        if xs.ndim == 1 and xs.size == 0:
            xs = xs.reshape(0, self.dim)
        if xs.ndim != 2 or xs.shape[1] != self.dim:
            raise GeometryError(f"dimension mismatch: classifier expects (N, {self.dim}), got {xs.shape}")
        return xs


class DifferentiableClassifier(HardLabelClassifier):
    def logits_batch(self, xs) -> np.ndarray:
        raise NotImplementedError

    def logits(self, x) -> np.ndarray:
        return self.logits_batch(self._check_point(x)[None, :])[0]

    def logit_gradient(self, x, k: int) -> np.ndarray:
        raise NotImplementedError

    def classify_batch(self, xs) -> np.ndarray:
        xs = self._check_batch(xs)
        if len(xs) == 0:
            return np.zeros(0, dtype=np.int64)
        return argmax_first(self.logits_batch(xs)).astype(np.int64)

    def _check_label(self, k: int) -> int:
        if not (0 <= int(k) < self.num_labels):
            raise ClassifierError(f"label {k} outside 0..{self.num_labels - 1}")
        return int(k)


class Constant(DifferentiableClassifier):
    """Every point gets ``label``; logits are a one-hot constant."""

    is_convex = True
    is_simply_connected = True

    def __init__(self, dim: int, label: int = 1, num_labels: int = 2):
        self.dim = int(dim)
        self.num_labels = int(num_labels)
        self.label = self._check_label(label)

    def logits_batch(self, xs):
        xs = self._check_batch(xs)
        out = np.zeros((len(xs), self.num_labels))
        out[:, self.label] = 1.0
        return out

    def logit_gradient(self, x, k):
        self._check_label(k)
        return np.zeros(self._check_point(x).shape)


class Affine(DifferentiableClassifier):
    """Logits ``W x + b``; every decision region is an intersection of halfspaces."""

    is_convex = True
    is_simply_connected = True

    def __init__(self, weights, biases):
        self.weights = np.array(weights, dtype=np.float64, ndmin=2)
        self.biases = np.array(biases, dtype=np.float64).reshape(-1)
        if self.weights.shape[0] != self.biases.shape[0]:
            raise ConfigError("affine: weights and biases disagree on label count")
        self.num_labels, self.dim = self.weights.shape

    @classmethod
    def halfspace(cls, w, b: float) -> "Affine":
        """Binary classifier with label 1 where ``w.x + b > 0``."""
        w = np.asarray(w, dtype=np.float64)
        return cls(np.stack([np.zeros_like(w), w]), [0.0, float(b)])

    def logits_batch(self, xs):
        xs = self._check_batch(xs)
        return xs @ self.weights.T + self.biases

    def logit_gradient(self, x, k):
        self._check_point(x)
        return self.weights[self._check_label(k)].copy()


class _BinaryRegion(DifferentiableClassifier):
    num_labels = 2

    def score_batch(self, xs: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def score_gradient(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def contains(self, xs) -> np.ndarray:
        """Exact membership test, independent of the logit path."""
        raise NotImplementedError

    def logits_batch(self, xs):
        xs = self._check_batch(xs)
        s = self.score_batch(xs)
        out = np.zeros((len(s), 2))
        out[:, 1] = s
        return out

    def classify_batch(self, xs):
        # argmax of [0, s] with ties to label 0
        return (self.score_batch(self._check_batch(xs)) > 0).astype(np.int64)

    def logit_gradient(self, x, k):
        x = self._check_point(x)
        if self._check_label(k) == 0:
            return np.zeros_like(x)
        return self.score_gradient(x)


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else np.zeros_like(v)


class Ball(_BinaryRegion):
    """Open ball; score is the signed distance ``r - |x - c|``."""

    is_convex = True
    is_simply_connected = True

    def __init__(self, center, radius: float):
        self.center = np.asarray(center, dtype=np.float64)
        self.radius = float(radius)
        if self.radius <= 0:
            raise ConfigError("ball: radius must be positive")
        self.dim = self.center.shape[0]

    def score_batch(self, xs):
        d = xs - self.center
        return self.radius - np.sqrt(np.einsum("ij,ij->i", d, d))

    def score_gradient(self, x):
        return -_unit(x - self.center)

    def contains(self, xs):
        xs = self._check_batch(xs)
        return np.sum((xs - self.center) ** 2, axis=1) < self.radius**2


class Annulus(_BinaryRegion):
    """Spherical shell ``r_in < |x - c| < r_out``.

    The score ``(r_out - rho)(rho - r_in) / (r_out - r_in)`` is smooth away
    from the centre and has unit slope on both boundary spheres.
    """

    is_convex = False
    is_simply_connected = False

    def __init__(self, center, inner: float, outer: float):
        self.center = np.asarray(center, dtype=np.float64)
        self.inner = float(inner)
        self.outer = float(outer)
        if not (0 < self.inner < self.outer):
            raise ConfigError("annulus: need 0 < inner < outer")
        self.dim = self.center.shape[0]

    def score_batch(self, xs):
        d = xs - self.center
        rho = np.sqrt(np.einsum("ij,ij->i", d, d))
        return (self.outer - rho) * (rho - self.inner) / (self.outer - self.inner)

    def score_gradient(self, x):
        rho = np.linalg.norm(x - self.center)
        slope = (self.outer + self.inner - 2 * rho) / (self.outer - self.inner)
        return slope * _unit(x - self.center)

    def contains(self, xs):
        xs = self._check_batch(xs)
        r2 = np.sum((xs - self.center) ** 2, axis=1)
        return (r2 > self.inner**2) & (r2 < self.outer**2)


class UnionOfBalls(_BinaryRegion):
    """Union of open balls; score is the max of the per-ball signed distances.

    The gradient is that of the nearest-to-surface ball, which is exact except
    on the measure-zero set where two balls tie.
    """

    is_convex = False

    def __init__(self, centers, radii):
        self.centers = np.array(centers, dtype=np.float64, ndmin=2)
        self.radii = np.asarray(radii, dtype=np.float64).reshape(-1)
        if len(self.radii) != len(self.centers) or len(self.radii) == 0:
            raise ConfigError("union_of_balls: need one radius per centre")
        if np.any(self.radii <= 0):
            raise ConfigError("union_of_balls: radii must be positive")
        self.dim = self.centers.shape[1]

    @property
    def is_simply_connected(self) -> bool:
        # Declared for the two-ball suites; a chain of three or more balls can enclose a hole.
        if len(self.radii) > 2:
            return None
        if len(self.radii) == 1:
            return True
        gap = np.linalg.norm(self.centers[0] - self.centers[1])
        return bool(gap < self.radii.sum()) and self.dim >= 2

    def _scores(self, xs):
        d = np.linalg.norm(xs[:, None, :] - self.centers[None, :, :], axis=2)
        return self.radii[None, :] - d

    def score_batch(self, xs):
        return self._scores(xs).max(axis=1)

    def score_gradient(self, x):
        k = int(np.argmax(self._scores(x[None, :])[0]))
        return -_unit(x - self.centers[k])

    def contains(self, xs):
        xs = self._check_batch(xs)
        d2 = np.sum((xs[:, None, :] - self.centers[None, :, :]) ** 2, axis=2)
        return np.any(d2 < self.radii[None, :] ** 2, axis=1)


def _box_score(xs, lo, hi):
    # Positive inside the open box; equals the l-inf distance to the nearest face.
    return np.minimum(xs - lo, hi - xs).min(axis=1)


def _box_score_gradient(x, lo, hi):
    gaps = np.concatenate([x - lo, hi - x])
    k = int(np.argmin(gaps))
    g = np.zeros_like(x)
    n = len(x)
    g[k % n] = 1.0 if k < n else -1.0
    return g


class LShape(_BinaryRegion):
    """Open box ``(lo, hi)`` minus the closed corner box ``[cut_lo, cut_hi]``.

    Score is ``min(box_score, -cut_score)``, piecewise linear with exact
    gradients off the measure-zero ridges. Cut faces lying on or beyond the
    outer box are dropped from ``cut_score``: leaving the cut through them would
    also leave the box, so they must not attract repair steps.
    """

    is_convex = False
    is_simply_connected = True

    def __init__(self, lo, hi, cut_lo, cut_hi):
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)
        self.cut_lo = np.asarray(cut_lo, dtype=np.float64)
        self.cut_hi = np.asarray(cut_hi, dtype=np.float64)
        shapes = {a.shape for a in (self.lo, self.hi, self.cut_lo, self.cut_hi)}
        if len(shapes) != 1:
            raise ConfigError("lshape: box corners must share a dimension")
        if np.any(self.lo >= self.hi) or np.any(self.cut_lo >= self.cut_hi):
            raise ConfigError("lshape: need lo < hi and cut_lo < cut_hi")
        touches = (self.cut_lo <= self.lo) | (self.cut_hi >= self.hi)
        if not np.all(touches):
            raise ConfigError("lshape: the cut must reach the outer box in every coordinate")
        self._cut_lo_open = np.where(self.cut_lo <= self.lo, -np.inf, self.cut_lo)
        self._cut_hi_open = np.where(self.cut_hi >= self.hi, np.inf, self.cut_hi)
        if np.all(np.isinf(self._cut_lo_open) & np.isinf(self._cut_hi_open)):
            raise ConfigError("lshape: the cut covers the whole box")
        self.dim = self.lo.shape[0]

    @classmethod
    def standard(cls, dim: int) -> "LShape":
        """``(-1, 1)^n`` minus the quadrant ``[0, 1]^2 x [-1, 1]^(n-2)``."""
        if dim < 2:
            raise ConfigError("lshape: need dim >= 2")
        lo = -np.ones(dim)
        hi = np.ones(dim)
        cut_lo = -np.ones(dim)
        cut_lo[:2] = 0.0
        return cls(lo, hi, cut_lo, hi.copy())

    def score_batch(self, xs):
        outer = _box_score(xs, self.lo, self.hi)
        cut = _box_score(xs, self._cut_lo_open, self._cut_hi_open)
        return np.minimum(outer, -cut)

    def score_gradient(self, x):
        outer = _box_score(x[None, :], self.lo, self.hi)[0]
        cut = _box_score(x[None, :], self._cut_lo_open, self._cut_hi_open)[0]
        if outer <= -cut:
            return _box_score_gradient(x, self.lo, self.hi)
        return -_box_score_gradient(x, self._cut_lo_open, self._cut_hi_open)

    def contains(self, xs):
        xs = self._check_batch(xs)
        in_box = np.all((xs > self.lo) & (xs < self.hi), axis=1)
        in_cut = np.all((xs >= self.cut_lo) & (xs <= self.cut_hi), axis=1)
        return in_box & ~in_cut


@dataclass(eq=False)
class TinyMLP(DifferentiableClassifier):
    """tanh hidden layers, affine output. ``weights[l]`` has shape ``(out, in)``."""

    weights: list
    biases: list
    is_convex: bool | None = field(default=None, repr=False)
    is_simply_connected: bool | None = field(default=None, repr=False)

    def __post_init__(self):
        self.weights = [np.array(w, dtype=np.float64, ndmin=2) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64).reshape(-1) for b in self.biases]
        if not self.weights or len(self.weights) != len(self.biases):
            raise ConfigError("mlp: need one bias vector per weight matrix")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape[0] != b.shape[0]:
                raise ConfigError(f"mlp: layer {l} weight rows {w.shape[0]} != bias length {b.shape[0]}")
            if l > 0 and w.shape[1] != self.weights[l - 1].shape[0]:
                raise ConfigError(f"mlp: layer {l} input width does not match previous layer")
        self.dim = self.weights[0].shape[1]
        self.num_labels = self.weights[-1].shape[0]

    @property
    def dims(self) -> list[int]:
        return [self.dim] + [w.shape[0] for w in self.weights]

    def logits_batch(self, xs):
        h = self._check_batch(xs)
        last = len(self.weights) - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.T + b
            if l < last:
                h = np.tanh(h)
        return h

    def logit_gradient(self, x, k):
        x = self._check_point(x)
        k = self._check_label(k)
        acts = [x]
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(w @ h + b)
            acts.append(h)
        grad = self.weights[-1][k].copy()
        for l in range(len(self.weights) - 2, -1, -1):
            grad = (grad * (1.0 - acts[l + 1] ** 2)) @ self.weights[l]
        return grad

    def hidden_features(self, xs) -> np.ndarray:
        h = self._check_batch(xs)
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ w.T + b)
        return h

    def to_json(self) -> dict:
        return {
            "dims": self.dims,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TinyMLP":
        try:
            model = cls(doc["weights"], doc["biases"])
        except KeyError as exc:
            raise ConfigError(f"mlp: missing field {exc.args[0]!r}") from None
        if "dims" in doc and list(doc["dims"]) != model.dims:
            raise ConfigError(f"mlp: dims {doc['dims']} do not match weights {model.dims}")
        return model

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n")

    @classmethod
    def load(cls, path) -> "TinyMLP":
        return cls.from_json(json.loads(Path(path).read_text()))


def random_mlp(dims: Sequence[int], seed: int, init: str = "random", gain: float = 1.0) -> TinyMLP:
    dims = [int(d) for d in dims]
    if len(dims) < 2 or any(d <= 0 for d in dims):
        raise ConfigError(f"mlp: invalid dims {dims}")
    if init == "identity":
        if len(set(dims)) != 1:
            raise ConfigError("mlp: identity init needs equal widths")
        return TinyMLP([np.eye(dims[0]) for _ in dims[1:]], [np.zeros(dims[0]) for _ in dims[1:]])
    if init == "zero":
        return TinyMLP([np.zeros((o, i)) for i, o in zip(dims, dims[1:])], [np.zeros(o) for o in dims[1:]])
    if init != "random":
        raise ConfigError(f"mlp: unknown init {init!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims, dims[1:]):
        weights.append(rng.normal(0.0, gain / np.sqrt(fan_in), size=(fan_out, fan_in)))
        biases.append(rng.normal(0.0, 0.5 * gain, size=fan_out))
    return TinyMLP(weights, biases)


def fit_last_layer(model: TinyMLP, xs: np.ndarray, labels: np.ndarray, ridge: float = 1e-8) -> TinyMLP:
    """Least-squares refit of the output layer to +-1 one-hot targets."""
    feats = model.hidden_features(xs)
    design = np.hstack([feats, np.ones((len(feats), 1))])
    targets = -np.ones((len(xs), model.num_labels))
    targets[np.arange(len(xs)), labels] = 1.0
    gram = design.T @ design + ridge * np.eye(design.shape[1])
    sol = np.linalg.solve(gram, design.T @ targets)
    weights = list(model.weights[:-1]) + [sol[:-1].T.copy()]
    biases = list(model.biases[:-1]) + [sol[-1].copy()]
    return TinyMLP(weights, biases)


def _center(spec: dict, dim: int | None) -> np.ndarray:
    if "center" in spec:
        return np.asarray(spec["center"], dtype=np.float64)
    if dim is None:
        raise ConfigError(f"{spec.get('type')}: need 'center' or 'dim'")
    return np.zeros(int(dim))


def make_suite_classifier(spec: dict, seed: int = 0) -> DifferentiableClassifier:
    """Build a classifier from a JSON-style description.

    Recognised ``type`` values: ``ball``, ``annulus``, ``union_of_balls``,
    ``lshape``, ``affine``, ``constant``, ``mlp``. ``seed`` is only consumed by
    randomised descriptions (``affine`` without weights, ``mlp`` without a path).
    """
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigError("classifier spec must be an object with a 'type' field")
    kind = spec["type"]
    dim = spec.get("dim")
    try:
        if kind == "ball":
            return Ball(_center(spec, dim), spec.get("radius", 1.0))
        if kind == "annulus":
            return Annulus(_center(spec, dim), spec.get("inner", 1.0), spec.get("outer", 2.0))
        if kind == "union_of_balls":
            if "balls" in spec:
                balls = spec["balls"]
                return UnionOfBalls([b["center"] for b in balls], [b["radius"] for b in balls])
            if dim is None:
                raise ConfigError("union_of_balls: need 'balls' or 'dim'")
            # two unit balls at +-offset along the first axis
            offset = float(spec.get("offset", 0.8))
            c = np.zeros((2, int(dim)))
            c[0, 0], c[1, 0] = -offset, offset
            return UnionOfBalls(c, [float(spec.get("radius", 1.0))] * 2)
        if kind == "lshape":
            if "lo" in spec:
                return LShape(spec["lo"], spec["hi"], spec["cut_lo"], spec["cut_hi"])
            if dim is None:
                raise ConfigError("lshape: need box corners or 'dim'")
            return LShape.standard(int(dim))
        if kind == "affine":
            if "weights" in spec:
                return Affine(spec["weights"], spec["biases"])
            if dim is None:
                raise ConfigError("affine: need 'weights' or 'dim'")
            rng = np.random.default_rng(seed)
            return Affine.halfspace(rng.normal(size=int(dim)), float(rng.normal()))
        if kind == "constant":
            return Constant(int(dim), spec.get("label", 1), spec.get("num_labels", 2))
        if kind == "mlp":
            if "path" in spec:
                return TinyMLP.load(spec["path"])
            if "weights" in spec:
                return TinyMLP.from_json(spec)
            return random_mlp(spec["dims"], seed, spec.get("init", "random"))
    except KeyError as exc:
        raise ConfigError(f"{kind}: missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{kind}: {exc}") from None
    raise ConfigError(f"unknown classifier type {kind!r}")


class MembershipOracle(HardLabelClassifier):
    """Hard labels straight from a region's exact ``contains`` test (label 1 inside)."""

    def __init__(self, region: _BinaryRegion):
        self.region = region
        self.dim = region.dim
        self.num_labels = 2

    def classify_batch(self, xs) -> np.ndarray:
        return np.asarray(self.region.contains(self._check_batch(xs)), dtype=np.int64)
