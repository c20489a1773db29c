"""Classifiers the recourse search acts on: a small ReLU MLP trained with
mini-batch gradient descent, and logistic regression for fast tests.

Both expose the same surface: probability, thresholded decision at 0.5, and
the input gradient of the probability (used by the recourse descent), all in
plain numpy and deterministic for a fixed seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .datasets import Dataset

PROB_CLIP = 1e-12
THRESHOLD = 0.5


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class MLPClassifier:
    """Fully connected ReLU network with a sigmoid head."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def arch(self) -> tuple[int, ...]:
        return tuple(w.shape[1] for w in self.weights[:-1])

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @classmethod
    def init(cls, input_dim: int, arch: tuple[int, ...], rng: np.random.Generator):
        sizes = [input_dim, *arch, 1]
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            scale = np.sqrt(2.0 / fan_in)
            weights.append(rng.standard_normal((fan_in, fan_out)) * scale)
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    def _forward(self, x: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        acts = [x]
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
            acts.append(h)
        z = (h @ self.weights[-1] + self.biases[-1]).ravel()
        return acts, z

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        _, z = self._forward(x)
        return np.clip(_sigmoid(z), PROB_CLIP, 1.0 - PROB_CLIP)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return (self.predict_proba(x) >= THRESHOLD).astype(int)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        """d f / d x per row, by back-propagation through the ReLU stack."""
        x2 = np.atleast_2d(np.asarray(x, dtype=float))
        pres = []
        h = x2
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            z = h @ w + b
            pres.append(z)
            h = np.maximum(z, 0.0)
        out = (h @ self.weights[-1] + self.biases[-1]).ravel()
        p = _sigmoid(out)
        delta = (p * (1.0 - p))[:, None] * self.weights[-1].T
        for w, z in zip(reversed(self.weights[:-1]), reversed(pres)):
            delta = (delta * (z > 0.0)) @ w.T
        return delta if np.asarray(x).ndim > 1 else delta[0]

    def train(
        self,
        x: np.ndarray,
        y: np.ndarray,
        epochs: int = 200,
        lr: float = 1e-3,
        batch_size: int = 32,
        rng: np.random.Generator | None = None,
    ):
        """Mini-batch gradient descent on binary cross-entropy."""
        rng = rng or np.random.default_rng(0)
        n = x.shape[0]
        for _ in range(epochs):
            order = rng.permutation(n)
            for lo in range(0, n, batch_size):
                idx = order[lo : lo + batch_size]
                self._step(x[idx], y[idx], lr)
        return self

    def _step(self, xb: np.ndarray, yb: np.ndarray, lr: float):
        pres, acts = [], [xb]
        h = xb
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            z = h @ w + b
            pres.append(z)
            h = np.maximum(z, 0.0)
            acts.append(h)
        out = (h @ self.weights[-1] + self.biases[-1]).ravel()
        p = _sigmoid(out)
        # Loss is the batch SUM of cross-entropies: d/d(logit) = p - y.
        delta = (p - yb)[:, None]
        grads_w = [acts[-1].T @ delta]
        grads_b = [delta.sum(axis=0)]
        delta = delta @ self.weights[-1].T
        for w, z, act in zip(
            reversed(self.weights[:-1]), reversed(pres), reversed(acts[:-1])
        ):
            delta = delta * (z > 0.0)
            grads_w.append(act.T @ delta)
            grads_b.append(delta.sum(axis=0))
            delta = delta @ w.T
        grads_w.reverse()
        grads_b.reverse()
        for w, b, gw, gb in zip(self.weights, self.biases, grads_w, grads_b):
            w -= lr * gw
            b -= lr * gb

    def to_json(self) -> dict:
        return {
            "kind": "mlp",
            "arch": list(self.arch),
            "input_dim": self.input_dim,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MLPClassifier":
        return cls(
            [np.array(w, dtype=float) for w in obj["weights"]],
            [np.array(b, dtype=float) for b in obj["biases"]],
        )


@dataclass
class LogisticClassifier:
    """Affine score through a sigmoid; analytic input gradient."""

    w: np.ndarray
    b: float

    @property
    def input_dim(self) -> int:
        return self.w.shape[0]

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x2 = np.atleast_2d(np.asarray(x, dtype=float))
        return np.clip(_sigmoid(x2 @ self.w + self.b), PROB_CLIP, 1.0 - PROB_CLIP)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return (self.predict_proba(x) >= THRESHOLD).astype(int)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        p = self.predict_proba(x)
        g = (p * (1.0 - p))[:, None] * self.w[None, :]
        return g if x.ndim > 1 else g[0]

    @classmethod
    def fit(
        cls,
        x: np.ndarray,
        y: np.ndarray,
        epochs: int = 500,
        lr: float = 0.5,
    ) -> "LogisticClassifier":
        n, d = x.shape
        w = np.zeros(d)
        b = 0.0
        for _ in range(epochs):
            p = _sigmoid(x @ w + b)
            err = (p - y) / n
            w -= lr * (x.T @ err)
            b -= lr * float(err.sum())
        return cls(w, b)

    def to_json(self) -> dict:
        return {"kind": "logistic", "w": self.w.tolist(), "b": self.b}

    @classmethod
    def from_json(cls, obj: dict) -> "LogisticClassifier":
        return cls(np.array(obj["w"], dtype=float), float(obj["b"]))


Classifier = MLPClassifier | LogisticClassifier


def train_classifier(
    dataset: Dataset,
    arch: tuple[int, ...] = (20, 50, 20),
    epochs: int = 200,
    lr: float = 1e-3,
    batch_size: int = 32,
    seed: int = 0,
) -> MLPClassifier:
    """Train the MLP on the dataset's train split, deterministically."""
    x, y = dataset.train()
    if x.shape[0] == 0:
        raise ValueError("empty training split")
    if len(np.unique(y)) < 2:
        raise ValueError("training data contains a single class")
    rng = np.random.default_rng(seed)
    model = MLPClassifier.init(dataset.dim, arch, rng)
    return model.train(x, y, epochs=epochs, lr=lr, batch_size=batch_size, rng=rng)


def train_logistic(dataset: Dataset) -> LogisticClassifier:
    x, y = dataset.train()
    if len(np.unique(y)) < 2:
        raise ValueError("training data contains a single class")
    return LogisticClassifier.fit(x, y)


def save_classifier(model: Classifier, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_json(), fh)


def load_classifier(path) -> Classifier:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    if obj.get("kind") == "mlp":
        return MLPClassifier.from_json(obj)
    if obj.get("kind") == "logistic":
        return LogisticClassifier.from_json(obj)
    raise ValueError(f"unknown checkpoint kind {obj.get('kind')!r}")


def positives(model: Classifier, x: np.ndarray) -> np.ndarray:
    """Indices predicted favorable; the candidate pool for elicitation."""
    return np.flatnonzero(model.predict(x) == 1)


def accuracy(model: Classifier, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(model.predict(x) == y))
