"""Minimal dense-network stack, embedding tables and Adam.

This is the differentiable machinery behind the recommender scorers, the
policy networks and the critic. Reverse-mode gradients are exact and are
checked against central finite differences in the test suite.
"""

import numpy as np

from .errors import TrainingDivergence

ACTIVATIONS = ("identity", "relu")


class DenseStack:
    """Chain of affine layers with identity or rectifier activations."""

    def __init__(self, sizes, activations, rng, weight_scale=None):
        if len(activations) != len(sizes) - 1:
            raise ValueError("need one activation per layer")
        for act in activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        self.sizes = list(sizes)
        self.activations = list(activations)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            scale = weight_scale if weight_scale is not None \
                else np.sqrt(2.0 / fan_in)
            self.weights.append(rng.normal(0.0, scale, size=(fan_out, fan_in)))
            self.biases.append(np.zeros(fan_out))

    @classmethod
    def mlp(cls, in_dim, out_dim, n_layers, width, rng):
        """n_layers affine maps: (n_layers - 1) rectified hidden layers of
        the given width, identity output."""
        if n_layers < 1:
            raise ValueError("need at least one layer")
        sizes = [in_dim] + [width] * (n_layers - 1) + [out_dim]
        acts = ["relu"] * (n_layers - 1) + ["identity"]
        return cls(sizes, acts, rng)

    @property
    def in_dim(self):
        return self.sizes[0]

    @property
    def out_dim(self):
        return self.sizes[-1]

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def forward(self, x):
        """Returns (output, cache). Accepts a vector or a batch of rows."""
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        a = x.reshape(1, -1) if squeeze else x
        if a.shape[1] != self.in_dim:
            raise ValueError(
                f"input dim {a.shape[1]} != expected {self.in_dim}")
        inputs = [a]
        pre = []
        for w, b, act in zip(self.weights, self.biases, self.activations):
            z = a @ w.T + b
            pre.append(z)
            a = np.maximum(z, 0.0) if act == "relu" else z
            inputs.append(a)
        cache = (inputs, pre, squeeze)
        return (a[0] if squeeze else a), cache

    def backward(self, cache, out_grad):
        """Exact reverse-mode gradients.

        Returns ([(dW, db), ...] aligned with layers, input gradient).
        """
        inputs, pre, squeeze = cache
        g = np.asarray(out_grad, dtype=np.float64)
        g = g.reshape(1, -1) if squeeze else g
        if g.shape != pre[-1].shape:
            raise ValueError("out_grad shape does not match forward cache")
        param_grads = [None] * len(self.weights)
        for layer in range(len(self.weights) - 1, -1, -1):
            if self.activations[layer] == "relu":
                g = g * (pre[layer] > 0.0)
            dw = g.T @ inputs[layer]
            db = g.sum(axis=0)
            param_grads[layer] = (dw, db)
            g = g @ self.weights[layer]
        return param_grads, (g[0] if squeeze else g)


def masked_softmax(logits, mask):
    """Probabilities over unmasked entries; masked entries are exactly 0."""
    logits = np.asarray(logits, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if logits.shape != mask.shape:
        raise ValueError("logits/mask shape mismatch")
    if not mask.any():
        raise ValueError("all entries masked")
    shifted = logits - logits[mask].max()
    exp = np.where(mask, np.exp(np.where(mask, shifted, 0.0)), 0.0)
    return exp / exp.sum()


def masked_log_softmax(logits, mask):
    """Log-probabilities on unmasked entries; masked entries are -inf."""
    logits = np.asarray(logits, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("all entries masked")
    shifted = logits - logits[mask].max()
    safe = np.where(mask, shifted, -np.inf)
    logz = np.log(np.sum(np.exp(shifted[mask])))
    return safe - logz


class EmbeddingTable:
    """Dense row-indexed embedding matrix with mean pooling."""

    def __init__(self, rows, dim, rng, scale=0.1):
        self.values = rng.normal(0.0, scale, size=(rows, dim))

    @property
    def rows(self):
        return self.values.shape[0]

    @property
    def dim(self):
        return self.values.shape[1]

    def mean_pool(self, ids):
        """Mean of the given rows; the empty mean is the zero vector."""
        if len(ids) == 0:
            return np.zeros(self.dim)
        return self.values[np.asarray(ids, dtype=np.int64)].mean(axis=0)


class Adam:
    """Bias-corrected Adam over a fixed list of parameter arrays."""

    def __init__(self, params, lr=5e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads):
        """Apply one update in place; grads align with the parameter list."""
        if len(grads) != len(self.params):
            raise ValueError("grads do not align with parameters")
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise TrainingDivergence("non-finite gradient")
        self.step_count += 1
        b1c = 1.0 - self.beta1 ** self.step_count
        b2c = 1.0 - self.beta2 ** self.step_count
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def save_archive(path, named_arrays):
    """Checkpoint named float64 tensors to an .npz archive."""
    np.savez(path, **{k: np.asarray(v, dtype=np.float64)
                      for k, v in named_arrays.items()})


def load_archive(path):
    with np.load(path) as data:
        return {k: data[k].copy() for k in data.files}
