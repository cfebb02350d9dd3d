"""Kinematics -> activation inverse map: a 6-15-3 MLP trained from scratch.

Hidden layer is tanh, output layer sigmoid so predictions live in (0, 1).
Inputs are min/max normalized with statistics taken from the babbling rows
and frozen for the life of the map.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

N_IN, N_HIDDEN, N_OUT = 6, 15, 3
N_WEIGHTS = N_IN * N_HIDDEN + N_HIDDEN + N_HIDDEN * N_OUT + N_OUT
FORMAT_NAME = "tendonleg.inverse_map"
FORMAT_VERSION = 1
INPUT_CLAMP = 0.5
BABBLING = "babbling"

LEARNING_RATE = 0.01
MOMENTUM = 0.9
BATCH_SIZE = 64
TRAIN_EPOCHS = 2000
REFINE_EPOCHS = 500


class TrainingDiverged(RuntimeError):
    pass


class ProvenanceError(ValueError):
    """Refinement data does not contain the full babbling set."""


# ---------------------------------------------------------------------------
# data


@dataclass
class SampleSet:
    """Kinematics/activation pairs with a source tag per row."""

    inputs: np.ndarray
    targets: np.ndarray
    sources: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float).reshape(-1, N_IN)
        self.targets = np.asarray(self.targets, dtype=float).reshape(-1, N_OUT)
        self.sources = np.asarray(self.sources, dtype=object).reshape(-1)
        n = len(self.inputs)
        if len(self.targets) != n or len(self.sources) != n:
            raise ValueError("inputs, targets and sources must have equal length")
        if not np.all(np.isfinite(self.inputs)):
            raise ValueError("non-finite kinematics in sample set")
        if np.any(self.targets < 0) or np.any(self.targets > 1):
            raise ValueError("activation targets must lie in [0, 1]")

    def __len__(self):
        return len(self.inputs)

    @property
    def babbling_mask(self) -> np.ndarray:
        return self.sources == BABBLING

    def babbling(self) -> "SampleSet":
        m = self.babbling_mask
        return SampleSet(self.inputs[m], self.targets[m], self.sources[m])

    def normalization(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-dimension min/max of the babbling rows (all rows if none)."""
        m = self.babbling_mask
        rows = self.inputs[m] if m.any() else self.inputs
        return rows.min(axis=0), rows.max(axis=0)

    def babbling_fingerprint(self) -> str:
        b = self.babbling()
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(b.inputs).tobytes())
        h.update(np.ascontiguousarray(b.targets).tobytes())
        return h.hexdigest()

    def extend(self, other: "SampleSet") -> "SampleSet":
        return SampleSet(np.vstack([self.inputs, other.inputs]),
                         np.vstack([self.targets, other.targets]),
                         np.concatenate([self.sources, other.sources]))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["q1", "q2", "dq1", "dq2", "ddq1", "ddq2", "a1", "a2", "a3", "source"])
            for x, y, s in zip(self.inputs, self.targets, self.sources):
                w.writerow([repr(float(v)) for v in (*x, *y)] + [s])

    @classmethod
    def from_csv(cls, path) -> "SampleSet":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or len(rows[0]) != 10:
            raise ValueError(f"{path}: not a sample-set CSV")
        body = rows[1:]
        if not body:
            raise ValueError(f"{path}: no samples")
        try:
            num = np.array([[float(v) for v in r[:9]] for r in body])
        except (ValueError, IndexError) as exc:
            raise ValueError(f"{path}: malformed row ({exc})") from None
        return cls(num[:, :6], num[:, 6:], np.array([r[9] for r in body], dtype=object))


def samples_from_rollout(q: np.ndarray, activations: np.ndarray, dt: float,
                         source: str) -> SampleSet:
    """Pair observed kinematics with the activations that were applied.

    Velocities and accelerations come from central differences of the
    observed angles, the same construction used for desired trajectories.
    """
    q = np.asarray(q, dtype=float)
    dq = np.gradient(q, dt, axis=0, edge_order=1)
    ddq = np.gradient(dq, dt, axis=0, edge_order=1)
    x = np.hstack([q, dq, ddq])
    return SampleSet(x, np.clip(activations, 0.0, 1.0), np.full(len(q), source, dtype=object))


# ---------------------------------------------------------------------------
# compiled kernels


@numba.njit(cache=True)
def _forward(W1, b1, W2, b2, xn, h, y):
    for i in range(N_HIDDEN):
        acc = b1[i]
        for k in range(N_IN):
            acc += W1[i, k] * xn[k]
        h[i] = math.tanh(acc)
    for o in range(N_OUT):
        acc = b2[o]
        for i in range(N_HIDDEN):
            acc += W2[o, i] * h[i]
        y[o] = 1.0 / (1.0 + math.exp(-acc))


@numba.njit(cache=True)
def _batch_grad(W1, b1, W2, b2, X, Y, idx, start, stop, gW1, gb1, gW2, gb2):
    """Gradient of mean squared error over rows ``idx[start:stop]``.

    Returns the batch loss (mean over rows and outputs).
    """
    gW1[:] = 0.0
    gb1[:] = 0.0
    gW2[:] = 0.0
    gb2[:] = 0.0
    h = np.empty(N_HIDDEN)
    y = np.empty(N_OUT)
    dz = np.empty(N_OUT)
    n = stop - start
    scale = 2.0 / (n * N_OUT)
    loss = 0.0
    for r in range(start, stop):
        row = idx[r]
        xn = X[row]
        _forward(W1, b1, W2, b2, xn, h, y)
        for o in range(N_OUT):
            e = y[o] - Y[row, o]
            loss += e * e
            dz[o] = scale * e * y[o] * (1.0 - y[o])
            gb2[o] += dz[o]
            for i in range(N_HIDDEN):
                gW2[o, i] += dz[o] * h[i]
        for i in range(N_HIDDEN):
            dh = 0.0
            for o in range(N_OUT):
                dh += W2[o, i] * dz[o]
            dh *= 1.0 - h[i] * h[i]
            gb1[i] += dh
            for k in range(N_IN):
                gW1[i, k] += dh * xn[k]
    return loss / (n * N_OUT)


@numba.njit(cache=True)
def _sgd_epoch(W1, b1, W2, b2, V1, vb1, V2, vb2, X, Y, idx, lr, mom, batch):
    gW1 = np.empty_like(W1)
    gb1 = np.empty_like(b1)
    gW2 = np.empty_like(W2)
    gb2 = np.empty_like(b2)
    n = len(idx)
    total = 0.0
    for start in range(0, n, batch):
        stop = min(start + batch, n)
        total += _batch_grad(W1, b1, W2, b2, X, Y, idx, start, stop,
                             gW1, gb1, gW2, gb2) * (stop - start)
        V1 *= mom
        V1 -= lr * gW1
        vb1 *= mom
        vb1 -= lr * gb1
        V2 *= mom
        V2 -= lr * gW2
        vb2 *= mom
        vb2 -= lr * gb2
        W1 += V1
        b1 += vb1
        W2 += V2
        b2 += vb2
    return total / n


# ---------------------------------------------------------------------------
# the map


@dataclass
class InverseMap:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    x_min: np.ndarray
    x_max: np.ndarray
    meta: dict = field(default_factory=dict)
    # per-epoch training loss of the most recent fit; not serialized
    loss_history: np.ndarray | None = field(default=None, repr=False, compare=False)

    @classmethod
    def zeros(cls, x_min=None, x_max=None) -> "InverseMap":
        return cls(np.zeros((N_HIDDEN, N_IN)), np.zeros(N_HIDDEN), np.zeros((N_OUT, N_HIDDEN)),
                   np.zeros(N_OUT),
                   np.zeros(N_IN) if x_min is None else np.asarray(x_min, float),
                   np.ones(N_IN) if x_max is None else np.asarray(x_max, float))

    @property
    def weights(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.b1, self.W2.ravel(), self.b2])

    def with_weights(self, w) -> "InverseMap":
        w = np.asarray(w, dtype=float)
        if w.shape != (N_WEIGHTS,):
            raise ValueError(f"expected {N_WEIGHTS} weights")
        a = N_IN * N_HIDDEN
        b = a + N_HIDDEN
        c = b + N_HIDDEN * N_OUT
        return InverseMap(w[:a].reshape(N_HIDDEN, N_IN).copy(), w[a:b].copy(),
                          w[b:c].reshape(N_OUT, N_HIDDEN).copy(), w[c:].copy(),
                          self.x_min.copy(), self.x_max.copy(), dict(self.meta))

    def normalize(self, x: np.ndarray) -> np.ndarray:
        span = self.x_max - self.x_min
        span = np.where(span > 0, span, 1.0)
        return np.clip((x - self.x_min) / span, -INPUT_CLAMP, 1.0 + INPUT_CLAMP)

    def predict(self, kinematics) -> np.ndarray:
        """Activation for one 6-vector ``[q1, q2, dq1, dq2, ddq1, ddq2]``."""
        x = np.asarray(kinematics, dtype=float)
        if x.shape != (N_IN,) or not np.all(np.isfinite(x)):
            raise ValueError(f"kinematics must be {N_IN} finite values")
        h = np.tanh(self.W1 @ self.normalize(x) + self.b1)
        return 1.0 / (1.0 + np.exp(-(self.W2 @ h + self.b2)))

    def predict_batch(self, X) -> np.ndarray:
        h = np.tanh(self.normalize(np.asarray(X, float)) @ self.W1.T + self.b1)
        return 1.0 / (1.0 + np.exp(-(h @ self.W2.T + self.b2)))

    def loss(self, data: SampleSet) -> float:
        return float(np.mean((self.predict_batch(data.inputs) - data.targets) ** 2))

    # serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        return {"format": FORMAT_NAME, "version": FORMAT_VERSION,
                "topology": [N_IN, N_HIDDEN, N_OUT],
                "weights": [float(v) for v in self.weights],
                "x_min": [float(v) for v in self.x_min],
                "x_max": [float(v) for v in self.x_max],
                "meta": self.meta}

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "InverseMap":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not an inverse-map file ({exc})") from None
        if d.get("format") != FORMAT_NAME or d.get("version") != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported map format")
        base = cls.zeros(np.array(d["x_min"]), np.array(d["x_max"]))
        out = base.with_weights(np.array(d["weights"]))
        out.meta = d.get("meta", {})
        return out


def init_map(data: SampleSet, seed: int) -> InverseMap:
    rng = np.random.default_rng(seed)
    lim1 = math.sqrt(6.0 / (N_IN + N_HIDDEN))
    lim2 = math.sqrt(6.0 / (N_HIDDEN + N_OUT))
    x_min, x_max = data.normalization()
    return InverseMap(rng.uniform(-lim1, lim1, (N_HIDDEN, N_IN)), np.zeros(N_HIDDEN),
                      rng.uniform(-lim2, lim2, (N_OUT, N_HIDDEN)), np.zeros(N_OUT),
                      x_min, x_max, {})


def _fit(net: InverseMap, data: SampleSet, seed: int, epochs: int,
         lr=LEARNING_RATE, momentum=MOMENTUM, batch=BATCH_SIZE) -> InverseMap:
    W1, b1, W2, b2 = (np.array(a, dtype=float) for a in (net.W1, net.b1, net.W2, net.b2))
    V1, vb1, V2, vb2 = (np.zeros_like(a) for a in (W1, b1, W2, b2))
    X = np.ascontiguousarray(net.normalize(data.inputs))
    Y = np.ascontiguousarray(data.targets)
    rng = np.random.default_rng([seed, 1])
    history = np.empty(epochs)
    for e in range(epochs):
        idx = rng.permutation(len(X))
        history[e] = _sgd_epoch(W1, b1, W2, b2, V1, vb1, V2, vb2, X, Y, idx, lr, momentum, batch)
        if not math.isfinite(history[e]):
            raise TrainingDiverged(f"loss became non-finite at epoch {e}")
    out = InverseMap(W1, b1, W2, b2, net.x_min.copy(), net.x_max.copy(), dict(net.meta))
    out.loss_history = history
    return out


def train(data: SampleSet, seed: int = 0, epochs: int = TRAIN_EPOCHS, **hyper) -> InverseMap:
    """Fit a fresh map by momentum mini-batch gradient descent."""
    if len(data) == 0:
        raise ValueError("cannot train on an empty sample set")
    net = _fit(init_map(data, seed), data, seed, epochs, **hyper)
    net.meta = {"epochs": epochs, "seed": seed, "n_samples": len(data),
                "final_loss": net.loss(data), "refinements": 0,
                "babbling_fingerprint": data.babbling_fingerprint(),
                "n_babbling": int(data.babbling_mask.sum())}
    return net


def refine(net: InverseMap, cumulative: SampleSet, seed: int = 0,
           epochs: int = REFINE_EPOCHS, **hyper) -> InverseMap:
    """Warm-start training on ``cumulative``, which must hold every babbling row
    the map was built from."""
    expected = net.meta.get("babbling_fingerprint")
    if expected is not None and cumulative.babbling_fingerprint() != expected:
        raise ProvenanceError("refinement data must include the complete babbling set")
    if expected is None and not cumulative.babbling_mask.any():
        raise ProvenanceError("refinement data has no babbling rows")
    out = _fit(net, cumulative, seed, epochs, **hyper)
    out.meta = dict(net.meta)
    out.meta.update(refinements=int(net.meta.get("refinements", 0)) + 1,
                    n_samples=len(cumulative), refine_epochs=epochs,
                    final_loss=out.loss(cumulative))
    return out


# ---------------------------------------------------------------------------
# gradient check


def loss_and_grad(net: InverseMap, data: SampleSet) -> tuple[float, np.ndarray]:
    X = np.ascontiguousarray(net.normalize(data.inputs))
    Y = np.ascontiguousarray(data.targets)
    g = [np.empty_like(a) for a in (net.W1, net.b1, net.W2, net.b2)]
    idx = np.arange(len(X))
    loss = _batch_grad(net.W1, net.b1, net.W2, net.b2, X, Y, idx, 0, len(X), *g)
    return loss, np.concatenate([a.ravel() for a in g])


def gradient_check(net: InverseMap, data: SampleSet, n_weights: int = 20, h: float = 1e-5,
                   seed: int = 0, grad_fn=loss_and_grad) -> float:
    """Max relative error between ``grad_fn`` and central differences of the
    loss, over ``n_weights`` randomly chosen weights.

    The relative error is ``|g - g_fd| / max(|g| + |g_fd|, 1e-8)``.
    """
    if len(data) == 0:
        raise ValueError("gradient check needs data")
    _, grad = grad_fn(net, data)
    w0 = net.weights
    picks = np.random.default_rng(seed).choice(N_WEIGHTS, size=min(n_weights, N_WEIGHTS),
                                               replace=False)
    worst = 0.0
    for i in picks:
        wp, wm = w0.copy(), w0.copy()
        wp[i] += h
        wm[i] -= h
        fd = (net.with_weights(wp).loss(data) - net.with_weights(wm).loss(data)) / (2 * h)
        err = abs(grad[i] - fd) / max(abs(grad[i]) + abs(fd), 1e-8)
        worst = max(worst, err)
    return worst
