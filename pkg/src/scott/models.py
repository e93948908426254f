"""Forecasting models with exact gradients, and the oracle binding them to examples.

Both models map a batch of context windows ``X`` (n, context_len) to a
prediction head and expose per-example losses plus weighted-sum or
per-example gradients of those losses with respect to a flat parameter vector.
"""
from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


def _check_theta(theta, dim):
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (dim,):
        raise ValueError(f"parameter vector has shape {theta.shape}, model expects ({dim},)")
    return theta


class ARModel:
    """AR(p) point forecaster trained with squared error.

    Coefficient ``theta[j]`` multiplies the j-th of the last ``p`` context
    values, oldest first, so ``z_hat[t0+1] = sum_j theta[j] * z[t0-p+1+j]``.
    Horizons longer than one step are forecast recursively.
    """

    loss_kind = "mse"

    def __init__(self, order: int, pred_len: int = 1):
        if order < 1:
            raise ValueError("AR order must be >= 1")
        self.order = order
        self.pred_len = pred_len
        self.dim = order

    def __repr__(self):
        return f"ARModel(order={self.order}, pred_len={self.pred_len})"

    def init_params(self, rng=None) -> np.ndarray:
        return np.zeros(self.dim)

    def _window(self, X):
        if X.shape[1] < self.order:
            raise ValueError(f"context length {X.shape[1]} shorter than AR order {self.order}")
        return X[:, X.shape[1] - self.order:]

    def predict(self, theta, X) -> np.ndarray:
        theta = _check_theta(theta, self.dim)
        w = self._window(X)
        out = np.empty((X.shape[0], self.pred_len))
        for k in range(self.pred_len):
            out[:, k] = w @ theta
            w = np.column_stack([w[:, 1:], out[:, k]])
        return out

    def _jacobians(self, theta, X):
        # predictions (n, H) and their Jacobians (n, H, d)
        w = self._window(X)
        n, p = w.shape
        Jw = np.zeros((n, p, self.dim))
        preds = np.empty((n, self.pred_len))
        J = np.empty((n, self.pred_len, self.dim))
        for k in range(self.pred_len):
            preds[:, k] = w @ theta
            J[:, k] = w + np.einsum("npd,p->nd", Jw, theta)
            if k + 1 < self.pred_len:
                w = np.column_stack([w[:, 1:], preds[:, k]])
                Jw = np.concatenate([Jw[:, 1:], J[:, k][:, None, :]], axis=1)
        return preds, J

    def losses(self, theta, X, Y) -> np.ndarray:
        return np.sum((self.predict(theta, X) - Y) ** 2, axis=1)

    def loss_grad(self, theta, X, Y, weights):
        theta = _check_theta(theta, self.dim)
        if self.pred_len == 1:
            w = self._window(X)
            r = w @ theta - Y[:, 0]
            return r ** 2, (2.0 * weights * r) @ w
        preds, J = self._jacobians(theta, X)
        r = preds - Y
        return np.sum(r ** 2, axis=1), np.einsum("n,nh,nhd->d", 2.0 * weights, r, J)

    def example_grads(self, theta, X, Y) -> np.ndarray:
        theta = _check_theta(theta, self.dim)
        if self.pred_len == 1:
            w = self._window(X)
            r = w @ theta - Y[:, 0]
            return 2.0 * r[:, None] * w
        preds, J = self._jacobians(theta, X)
        return np.einsum("nh,nhd->nd", 2.0 * (preds - Y), J)


class FeedforwardModel:
    """Fully connected tanh network on the context window.

    The output head holds ``pred_len`` means (``loss="mse"``) or ``pred_len``
    means followed by ``pred_len`` log-scales (``loss="nll"``, Gaussian
    negative log-likelihood).
    """

    def __init__(self, context_len: int, pred_len: int, hidden=(32, 32), loss: str = "mse"):
        if loss not in ("mse", "nll"):
            raise ValueError(f"unknown loss {loss!r}")
        if any(h < 1 for h in hidden) or context_len < 1 or pred_len < 1:
            raise ValueError("layer widths must be >= 1")
        self.loss_kind = loss
        self.pred_len = pred_len
        out = pred_len if loss == "mse" else 2 * pred_len
        self.widths = (context_len, *hidden, out)
        self._slices = []
        off = 0
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            self._slices.append((off, fan_out, fan_in))
            off += fan_out * fan_in + fan_out
        self.dim = off

    def __repr__(self):
        return f"FeedforwardModel(widths={self.widths}, loss={self.loss_kind!r})"

    def init_params(self, rng) -> np.ndarray:
        theta = np.empty(self.dim)
        for off, fan_out, fan_in in self._slices:
            s = 1.0 / math.sqrt(fan_in)
            size = fan_out * fan_in + fan_out
            theta[off:off + size] = rng.uniform(-s, s, size)
        return theta

    def _layers(self, theta):
        for off, fan_out, fan_in in self._slices:
            W = theta[off:off + fan_out * fan_in].reshape(fan_out, fan_in)
            b = theta[off + fan_out * fan_in:off + fan_out * fan_in + fan_out]
            yield W, b

    def _forward(self, theta, X):
        theta = _check_theta(theta, self.dim)
        if X.shape[1] != self.widths[0]:
            raise ValueError(f"context length {X.shape[1]} does not match input width {self.widths[0]}")
        acts = [X]
        layers = list(self._layers(theta))
        a = X
        for k, (W, b) in enumerate(layers):
            a = a @ W.T + b
            if k + 1 < len(layers):
                a = np.tanh(a)
            acts.append(a)
        return layers, acts

    def _head_loss(self, out, Y):
        H = self.pred_len
        if self.loss_kind == "mse":
            r = out - Y
            return np.sum(r ** 2, axis=1), 2.0 * r
        mu, s = out[:, :H], out[:, H:]
        inv_var = np.exp(-2.0 * s)
        r2 = (Y - mu) ** 2
        losses = np.sum(s + 0.5 * r2 * inv_var + HALF_LOG_2PI, axis=1)
        dout = np.concatenate([(mu - Y) * inv_var, 1.0 - r2 * inv_var], axis=1)
        return losses, dout

    def predict(self, theta, X) -> np.ndarray:
        """Point forecast (the mean head for the NLL model)."""
        _, acts = self._forward(theta, X)
        return acts[-1][:, :self.pred_len]

    def head(self, theta, X) -> np.ndarray:
        return self._forward(theta, X)[1][-1]

    def losses(self, theta, X, Y) -> np.ndarray:
        _, acts = self._forward(theta, X)
        return self._head_loss(acts[-1], Y)[0]

    def loss_grad(self, theta, X, Y, weights):
        layers, acts = self._forward(theta, X)
        losses, delta = self._head_loss(acts[-1], Y)
        delta = delta * weights[:, None]
        grad = np.empty(self.dim)
        for k in range(len(layers) - 1, -1, -1):
            off, fan_out, fan_in = self._slices[k]
            a_prev = acts[k]
            grad[off:off + fan_out * fan_in] = (delta.T @ a_prev).ravel()
            grad[off + fan_out * fan_in:off + fan_out * fan_in + fan_out] = delta.sum(axis=0)
            if k:
                delta = (delta @ layers[k][0]) * (1.0 - a_prev ** 2)
        return losses, grad

    def example_grads(self, theta, X, Y) -> np.ndarray:
        layers, acts = self._forward(theta, X)
        _, delta = self._head_loss(acts[-1], Y)
        n = X.shape[0]
        G = np.empty((n, self.dim))
        for k in range(len(layers) - 1, -1, -1):
            off, fan_out, fan_in = self._slices[k]
            a_prev = acts[k]
            G[:, off:off + fan_out * fan_in] = np.einsum("no,ni->noi", delta, a_prev).reshape(n, -1)
            G[:, off + fan_out * fan_in:off + fan_out * fan_in + fan_out] = delta
            if k:
                delta = (delta @ layers[k][0]) * (1.0 - a_prev ** 2)
        return G


class GradientOracle:
    """A model bound to a fixed set of examples, indexed ``0..n-1``.

    ``n_evals`` counts per-example gradient computations; loss evaluation and
    calls made inside :meth:`uncounted` are free.
    """

    def __init__(self, model, X, Y):
        self.model = model
        self.X = np.asarray(X, dtype=np.float64)
        self.Y = np.asarray(Y, dtype=np.float64)
        if self.X.shape[0] != self.Y.shape[0]:
            raise ValueError("X and Y disagree on the number of examples")
        if self.Y.shape[1] != model.pred_len:
            raise ValueError(f"targets have horizon {self.Y.shape[1]}, model predicts {model.pred_len}")
        self.n_evals = 0
        self._counting = True

    @property
    def dim(self) -> int:
        return self.model.dim

    @property
    def n_examples(self) -> int:
        return self.X.shape[0]

    @contextmanager
    def uncounted(self):
        prev, self._counting = self._counting, False
        try:
            yield self
        finally:
            self._counting = prev

    def _count(self, n):
        if self._counting:
            self.n_evals += n

    def _idx(self, idx):
        if idx is None:
            return np.arange(self.n_examples)
        return np.atleast_1d(np.asarray(idx, dtype=np.int64))

    def predict(self, theta, idx) -> np.ndarray:
        idx = self._idx(idx)
        return self.model.predict(theta, self.X[idx])

    def losses(self, theta, idx=None) -> np.ndarray:
        idx = self._idx(idx)
        return self.model.losses(theta, self.X[idx], self.Y[idx])

    def value(self, theta, idx=None) -> float:
        """Mean loss over ``idx`` (all examples by default)."""
        return float(np.mean(self.losses(theta, idx)))

    def loss(self, theta, i: int) -> float:
        return float(self.losses(theta, [i])[0])

    def weighted_grad(self, theta, idx, weights) -> np.ndarray:
        """``sum_k weights[k] * grad f_{idx[k]}(theta)``."""
        idx = self._idx(idx)
        weights = np.asarray(weights, dtype=np.float64)
        self._count(idx.size)
        return self.model.loss_grad(theta, self.X[idx], self.Y[idx], weights)[1]

    def grad(self, theta, idx) -> np.ndarray:
        """Mean gradient over ``idx`` (duplicates count with multiplicity)."""
        idx = self._idx(idx)
        return self.weighted_grad(theta, idx, np.full(idx.size, 1.0 / idx.size))

    def example_grads(self, theta, idx=None) -> np.ndarray:
        idx = self._idx(idx)
        self._count(idx.size)
        return self.model.example_grads(theta, self.X[idx], self.Y[idx])
