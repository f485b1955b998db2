"""Differentiable softmax classifiers over caller-supplied feature vectors.

The distillation engine only needs three things from a classifier: a softmax
forward pass, backpropagation from logit-space gradients to a flat parameter
vector, and parameter (de)serialization. Two implementations are provided: a
linear softmax and a one-hidden-layer tanh network. Both are deterministic
given parameters and inputs.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Sequence

import numpy as np


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class Classifier(ABC):
    """Softmax classifier interface used by the distillation trainer."""

    feature_dim: int
    n_classes: int

    @abstractmethod
    def logits(self, X: np.ndarray) -> np.ndarray: ...

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        """Softmax output; each row is a valid probability vector."""
        return softmax(self.logits(np.atleast_2d(X)))

    @abstractmethod
    def param_vector(self) -> np.ndarray:
        """Flat copy of all trainable parameters."""

    @abstractmethod
    def set_param_vector(self, v: np.ndarray) -> None: ...

    @abstractmethod
    def grad_param_vector(self, batches: Sequence[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
        """Accumulate dLoss/dparams over (inputs, dLoss/dlogits) pairs."""

    @abstractmethod
    def weight_decay_vector(self) -> np.ndarray:
        """Gradient of (1/2)||W||^2 over weights, zero over biases."""

    @abstractmethod
    def to_spec(self) -> dict: ...

    def check_features(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.feature_dim:
            raise ValueError(f"feature dimension mismatch: got {X.shape[1]}, classifier expects {self.feature_dim}")
        return X


class LinearSoftmaxClassifier(Classifier):
    """logits = X @ W + b with L2 penalty applied to W only."""

    def __init__(self, feature_dim: int, n_classes: int, rng: np.random.Generator | None = None, init_scale: float = 0.0):
        self.feature_dim = int(feature_dim)
        self.n_classes = int(n_classes)
        if rng is not None and init_scale > 0:
            self.W = init_scale * rng.standard_normal((feature_dim, n_classes))
        else:
            self.W = np.zeros((feature_dim, n_classes))
        self.b = np.zeros(n_classes)

    def logits(self, X: np.ndarray) -> np.ndarray:
        X = self.check_features(X)
        return X @ self.W + self.b

    def param_vector(self) -> np.ndarray:
        return np.concatenate([self.W.ravel(), self.b])

    def set_param_vector(self, v: np.ndarray) -> None:
        v = np.asarray(v, dtype=float)
        k = self.feature_dim * self.n_classes
        self.W = v[:k].reshape(self.feature_dim, self.n_classes).copy()
        self.b = v[k : k + self.n_classes].copy()

    def grad_param_vector(self, batches: Sequence[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
        gW = np.zeros_like(self.W)
        gb = np.zeros_like(self.b)
        for X, dZ in batches:
            gW += X.T @ dZ
            gb += dZ.sum(axis=0)
        return np.concatenate([gW.ravel(), gb])

    def weight_decay_vector(self) -> np.ndarray:
        return np.concatenate([self.W.ravel(), np.zeros_like(self.b)])

    def to_spec(self) -> dict:
        return {
            "type": "linear",
            "feature_dim": self.feature_dim,
            "n_classes": self.n_classes,
            "W": self.W.tolist(),
            "b": self.b.tolist(),
        }

    @classmethod
    def from_spec(cls, spec: dict) -> "LinearSoftmaxClassifier":
        clf = cls(spec["feature_dim"], spec["n_classes"])
        clf.W = np.asarray(spec["W"], dtype=float)
        clf.b = np.asarray(spec["b"], dtype=float)
        return clf


class MLPClassifier(Classifier):
    """One hidden tanh layer; smooth enough for finite-difference checks."""

    def __init__(
        self,
        feature_dim: int,
        n_classes: int,
        hidden: int = 32,
        rng: np.random.Generator | None = None,
        init_scale: float = 0.1,
    ):
        self.feature_dim = int(feature_dim)
        self.n_classes = int(n_classes)
        self.hidden = int(hidden)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.W1 = init_scale * rng.standard_normal((feature_dim, hidden))
        self.b1 = np.zeros(hidden)
        self.W2 = init_scale * rng.standard_normal((hidden, n_classes))
        self.b2 = np.zeros(n_classes)

    def _hidden(self, X: np.ndarray) -> np.ndarray:
        return np.tanh(X @ self.W1 + self.b1)

    def logits(self, X: np.ndarray) -> np.ndarray:
        X = self.check_features(X)
        return self._hidden(X) @ self.W2 + self.b2

    def param_vector(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.b1, self.W2.ravel(), self.b2])

    def set_param_vector(self, v: np.ndarray) -> None:
        v = np.asarray(v, dtype=float)
        i = 0
        for name, shape in (
            ("W1", (self.feature_dim, self.hidden)),
            ("b1", (self.hidden,)),
            ("W2", (self.hidden, self.n_classes)),
            ("b2", (self.n_classes,)),
        ):
            size = int(np.prod(shape))
            setattr(self, name, v[i : i + size].reshape(shape).copy())
            i += size

    def grad_param_vector(self, batches: Sequence[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
        gW1 = np.zeros_like(self.W1)
        gb1 = np.zeros_like(self.b1)
        gW2 = np.zeros_like(self.W2)
        gb2 = np.zeros_like(self.b2)
        for X, dZ in batches:
            H = self._hidden(X)
            gW2 += H.T @ dZ
            gb2 += dZ.sum(axis=0)
            dH = (dZ @ self.W2.T) * (1.0 - H * H)
            gW1 += X.T @ dH
            gb1 += dH.sum(axis=0)
        return np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2])

    def weight_decay_vector(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), np.zeros_like(self.b1), self.W2.ravel(), np.zeros_like(self.b2)])

    def to_spec(self) -> dict:
        return {
            "type": "mlp",
            "feature_dim": self.feature_dim,
            "n_classes": self.n_classes,
            "hidden": self.hidden,
            "W1": self.W1.tolist(),
            "b1": self.b1.tolist(),
            "W2": self.W2.tolist(),
            "b2": self.b2.tolist(),
        }

    @classmethod
    def from_spec(cls, spec: dict) -> "MLPClassifier":
        clf = cls(spec["feature_dim"], spec["n_classes"], hidden=spec["hidden"])
        clf.W1 = np.asarray(spec["W1"], dtype=float)
        clf.b1 = np.asarray(spec["b1"], dtype=float)
        clf.W2 = np.asarray(spec["W2"], dtype=float)
        clf.b2 = np.asarray(spec["b2"], dtype=float)
        return clf


def classifier_from_spec(spec: dict) -> Classifier:
    kind = spec.get("type")
    if kind == "linear":
        return LinearSoftmaxClassifier.from_spec(spec)
    if kind == "mlp":
        return MLPClassifier.from_spec(spec)
    raise ValueError(f"unknown classifier type {kind!r}")
