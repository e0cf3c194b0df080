"""Minimal function-approximation stack: two-layer tanh networks with
hand-derived gradients, Adam, and a fixed-width Gaussian policy head.

Everything is plain numpy; parameters live in dicts keyed w1/b1/w2/b2 so the
optimizer state mirrors them exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class DivergenceError(RuntimeError):
    """Raised when gradients or parameters stop being finite."""


PARAM_KEYS = ("w1", "b1", "w2", "b2")


@dataclass
class Mlp:
    """y = w2 @ tanh(w1 @ x + b1) + b2."""

    params: dict

    @classmethod
    def init(cls, in_dim: int, hidden: int, out_dim: int, rng) -> "Mlp":
        # symmetric uniform init keeps tanh in its near-linear regime
        s1 = math.sqrt(6.0 / (in_dim + hidden))
        s2 = math.sqrt(6.0 / (hidden + out_dim))
        return cls({
            "w1": rng.uniform(-s1, s1, (hidden, in_dim)),
            "b1": np.zeros(hidden),
            "w2": rng.uniform(-s2, s2, (out_dim, hidden)),
            "b2": np.zeros(out_dim),
        })

    @property
    def in_dim(self) -> int:
        return self.params["w1"].shape[1]

    @property
    def out_dim(self) -> int:
        return self.params["w2"].shape[0]

    def _promote(self, x):
        xx = np.asarray(x, dtype=float)
        single = xx.ndim == 1
        xx = np.atleast_2d(xx)
        if xx.shape[1] != self.in_dim:
            raise ValueError("input dim %d != expected %d" % (xx.shape[1], self.in_dim))
        return xx, single

    def forward(self, x):
        y, _ = self.forward_with_hidden(x)
        return y

    def forward_with_hidden(self, x):
        """Forward pass returning (output, hidden activations) for reuse in backward."""
        xx, single = self._promote(x)
        p = self.params
        h = np.tanh(xx @ p["w1"].T + p["b1"])
        y = h @ p["w2"].T + p["b2"]
        if single:
            return y[0], h[0]
        return y, h

    def backward(self, x, upstream, hidden=None):
        """Gradients of sum(upstream * output) w.r.t. params and input.

        ``upstream`` holds d(loss)/d(output) per sample; parameter gradients
        are summed over the batch.  Returns (grad dict, input gradient).
        """
        xx, single = self._promote(x)
        dy = np.atleast_2d(np.asarray(upstream, dtype=float))
        if dy.shape != (xx.shape[0], self.out_dim):
            raise ValueError("upstream shape %r != %r" % (dy.shape, (xx.shape[0], self.out_dim)))
        p = self.params
        if hidden is None:
            h = np.tanh(xx @ p["w1"].T + p["b1"])
        else:
            h = np.atleast_2d(hidden)
        dh = dy @ p["w2"]
        dz = dh * (1.0 - h * h)
        grads = {
            "w2": dy.T @ h,
            "b2": dy.sum(axis=0),
            "w1": dz.T @ xx,
            "b1": dz.sum(axis=0),
        }
        dx = dz @ p["w1"]
        return grads, (dx[0] if single else dx)


@dataclass
class AdamState:
    """Adam moments and step counter for one parameter dict."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict, lr: float, **kw) -> "AdamState":
        state = cls(lr=lr, **kw)
        state.m = {k: np.zeros_like(p) for k, p in params.items()}
        state.v = {k: np.zeros_like(p) for k, p in params.items()}
        return state


def adam_step(state: AdamState, params: dict, grads: dict, lr_scale: float = 1.0) -> dict:
    """One bias-corrected Adam update, in place on ``params``.

    ``lr_scale`` multiplies the base rate (used by decaying schedules).
    """
    for k in params:
        if not np.all(np.isfinite(grads[k])):
            raise DivergenceError("diverged")
    state.t += 1
    b1t = 1.0 - state.beta1 ** state.t
    b2t = 1.0 - state.beta2 ** state.t
    for k in params:
        g = grads[k]
        state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g
        state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * g * g
        mhat = state.m[k] / b1t
        vhat = state.v[k] / b2t
        params[k] -= state.lr * lr_scale * mhat / (np.sqrt(vhat) + state.eps)
    return params


@dataclass
class GaussianPolicy:
    """Diagonal Gaussian over actions: mean from an Mlp, fixed std sigma."""

    mean_net: Mlp
    sigma: float = 0.1

    def mean(self, x):
        return self.mean_net.forward(x)

    def sample(self, x, rng):
        """Draw (action, log-probability); works on single states or batches."""
        mu = self.mean_net.forward(x)
        z = rng.standard_normal(np.shape(mu))
        a = mu + self.sigma * z
        return a, self.log_prob_given_mean(mu, a)

    def log_prob(self, x, a):
        return self.log_prob_given_mean(self.mean_net.forward(x), a)

    def log_prob_given_mean(self, mu, a):
        d = np.shape(mu)[-1]
        quad = ((np.asarray(a) - mu) ** 2).sum(axis=-1) / (2.0 * self.sigma ** 2)
        return -quad - d * math.log(self.sigma * math.sqrt(2.0 * math.pi))

    def logprob_grad(self, x, a, weights=None):
        """Gradient of sum_i weights_i * log pi(a_i|x_i) w.r.t. mean-net params.

        The score of a fixed-sigma Gaussian is (a - mean)/sigma^2 pushed back
        through the mean network.  ``weights=None`` means all ones.
        """
        xx = np.atleast_2d(np.asarray(x, dtype=float))
        aa = np.atleast_2d(np.asarray(a, dtype=float))
        mu, h = self.mean_net.forward_with_hidden(xx)
        upstream = (aa - mu) / self.sigma ** 2
        if weights is not None:
            upstream = upstream * np.asarray(weights, dtype=float).reshape(-1, 1)
        grads, _ = self.mean_net.backward(xx, upstream, h)
        return grads


def params_flat_norm(params: dict) -> float:
    return math.sqrt(sum(float((p * p).sum()) for p in params.values()))


def params_max_abs(params: dict) -> float:
    return max(float(np.abs(p).max()) for p in params.values())


def check_finite(params: dict, limit: float = 1e6):
    for k, p in params.items():
        if not np.all(np.isfinite(p)) or np.abs(p).max() > limit:
            raise DivergenceError("diverged")


def save_params(path, named_params: dict):
    """Checkpoint a {name: array} dict as CSV lines name,shape,values..."""
    lines = []
    for name in sorted(named_params):
        arr = np.asarray(named_params[name], dtype=float)
        shape = "x".join(str(d) for d in arr.shape) or "0"
        vals = ",".join(repr(float(v)) for v in arr.ravel())
        lines.append("%s,%s,%s" % (name, shape, vals))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_params(path) -> dict:
    out = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            name, shape, rest = line.split(",", 2)
            dims = tuple(int(d) for d in shape.split("x")) if shape != "0" else ()
            vals = np.array([float(v) for v in rest.split(",")])
            out[name] = vals.reshape(dims)
    return out
