"""Flat-parameter feedforward models and mini-batch SGD.

Every model is a dense MLP described by layer widths; logistic regression is
the no-hidden-layer special case.  Parameters live in a single flat float64
vector with a fixed layout (per layer: weight matrix in C order, then bias),
so the federated code can treat a model as an opaque vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_expit, logsumexp

from ..errors import NumericFailure

HIDDEN_ACTIVATIONS = ("relu", "sigmoid")
LOSSES = ("bce", "cce")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture descriptor for a flat-parameter MLP.

    ``layers`` lists widths input-first, e.g. ``(784, 32, 10)``.  Hidden
    layers share one activation; the output layer is implied by the loss
    (sigmoid for ``bce``, softmax for ``cce``) and is computed from logits
    inside the loss for numerical stability.
    """

    layers: tuple
    hidden_activation: str = "relu"
    loss: str = "cce"

    def __post_init__(self):
        layers = tuple(int(v) for v in self.layers)
        object.__setattr__(self, "layers", layers)
        if len(layers) < 2:
            raise ValueError("need at least input and output widths")
        if any(v < 1 for v in layers):
            raise ValueError("layer widths must be positive")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown activation {self.hidden_activation!r}")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.loss == "bce" and layers[-1] != 1:
            raise ValueError("bce requires a single output unit")

    @property
    def n_params(self) -> int:
        return sum(
            (fan_in + 1) * fan_out
            for fan_in, fan_out in zip(self.layers[:-1], self.layers[1:])
        )

    @property
    def n_classes(self) -> int:
        return 2 if self.loss == "bce" else self.layers[-1]

    def init_weights(self, rng: np.random.Generator) -> np.ndarray:
        """Uniform init in +-sqrt(6/(fan_in+fan_out)); biases zero."""
        parts = []
        for fan_in, fan_out in zip(self.layers[:-1], self.layers[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            parts.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
            parts.append(np.zeros(fan_out))
        return np.concatenate(parts)

    def unpack(self, w: np.ndarray):
        """Flat vector -> list of (W, b) views.  No copies."""
        if w.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {w.shape}")
        out = []
        pos = 0
        for fan_in, fan_out in zip(self.layers[:-1], self.layers[1:]):
            W = w[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out)
            pos += fan_in * fan_out
            b = w[pos : pos + fan_out]
            pos += fan_out
            out.append((W, b))
        return out

    def pack(self, params) -> np.ndarray:
        """Inverse of unpack; bitwise round trip."""
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in params])

    def _forward_hidden(self, w: np.ndarray, X: np.ndarray):
        """Returns (per-layer activations, logits).  Activations include X."""
        acts = [X]
        h = X
        layers = self.unpack(w)
        for W, b in layers[:-1]:
            z = h @ W + b
            if self.hidden_activation == "relu":
                h = np.maximum(z, 0.0)
            else:
                h = expit(z)
            acts.append(h)
        W, b = layers[-1]
        logits = h @ W + b
        return acts, logits

    def predict_proba(self, w: np.ndarray, X: np.ndarray) -> np.ndarray:
        """Class probabilities; shape (records,) for bce, (records, classes) for cce."""
        _, logits = self._forward_hidden(w, X)
        if self.loss == "bce":
            return expit(logits[:, 0])
        return np.exp(logits - logsumexp(logits, axis=1, keepdims=True))

    def predict_labels(self, w: np.ndarray, X: np.ndarray) -> np.ndarray:
        if self.loss == "bce":
            return (self.predict_proba(w, X) >= 0.5).astype(np.int64)
        _, logits = self._forward_hidden(w, X)
        return np.argmax(logits, axis=1)

    def loss_and_grad(self, w: np.ndarray, X: np.ndarray, y: np.ndarray):
        """Mean loss over the batch and its flat gradient."""
        acts, logits = self._forward_hidden(w, X)
        B = X.shape[0]
        if self.loss == "bce":
            z = logits[:, 0]
            yf = y.astype(np.float64)
            # -[y log p + (1-y) log(1-p)] = -log_expit(z) + (1-y)z, stable in z
            loss = float(np.mean(-log_expit(z) + (1.0 - yf) * z))
            delta = ((expit(z) - yf) / B)[:, None]
        else:
            log_z = logsumexp(logits, axis=1, keepdims=True)
            log_p = logits - log_z
            loss = float(-np.mean(log_p[np.arange(B), y]))
            delta = np.exp(log_p)
            delta[np.arange(B), y] -= 1.0
            delta /= B
        if not np.isfinite(loss):
            raise NumericFailure(f"non-finite loss {loss}")

        layers = self.unpack(w)
        grads = [None] * len(layers)
        back = delta
        for li in range(len(layers) - 1, -1, -1):
            W, _ = layers[li]
            h_in = acts[li]
            gW = h_in.T @ back
            gb = back.sum(axis=0)
            grads[li] = (gW, gb)
            if li == 0:
                break
            back = back @ W.T
            h = acts[li]
            if self.hidden_activation == "relu":
                back = back * (h > 0.0)
            else:
                back = back * h * (1.0 - h)
        return loss, self.pack(grads)


def sgd(
    model: ModelSpec,
    X: np.ndarray,
    y: np.ndarray,
    w: np.ndarray,
    t_gd: int,
    eta: float,
    batch_size: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """T_gd epochs of mini-batch SGD, w <- w - eta * grad(batch).

    Batch order is drawn from ``rng``; the trailing partial batch is used.
    Returns the updated flat weights (input untouched).
    """
    if X.shape[0] != y.shape[0]:
        raise ValueError("feature/label record counts differ")
    if batch_size < 1 or t_gd < 0:
        raise ValueError("batch_size >= 1 and t_gd >= 0 required")
    w = np.array(w, dtype=np.float64, copy=True)
    n = X.shape[0]
    for _ in range(t_gd):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            sel = order[start : start + batch_size]
            _, g = model.loss_and_grad(w, X[sel], y[sel])
            w -= eta * g
    if not np.all(np.isfinite(w)):
        raise NumericFailure("non-finite weights after SGD")
    return w
