"""Surrogates of U: a global network metamodel over (u, alpha) and local
diagonal-quadratic models around a point."""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core_math import (DenseNet, DimensionError, init_net, net_backward, net_forward,
                        net_from_dict, net_to_dict)
from .option_net import decode_continuous
from .problem_families import evaluate, sample_instance, utility_batch

RIDGE = 1e-8


class UnsupportedFamilyError(ValueError):
    pass


@dataclass
class ForwardMetamodel:
    """Input is concat(u, alpha); output is the predicted utility."""

    net: DenseNet
    u_dim: int
    alpha_dim: int
    sample_count: int = 0
    input_low: list = None
    input_high: list = None
    holdout_rmse: float = math.nan
    rmse_trace: list = field(default_factory=list)

    def __post_init__(self):
        if self.net.n_inputs != self.u_dim + self.alpha_dim or self.net.n_outputs != 1:
            raise DimensionError(f"net {self.net.layer_sizes} does not fit u_dim={self.u_dim}, "
                                 f"alpha_dim={self.alpha_dim}")

    def to_dict(self):
        d = net_to_dict(self.net)
        d.update({"kind": "forward_metamodel", "alpha_dim": self.alpha_dim,
                  "u_dim": self.u_dim, "sample_count": self.sample_count,
                  "input_low": self.input_low, "input_high": self.input_high,
                  "holdout_rmse": self.holdout_rmse})
        return d

    @classmethod
    def from_dict(cls, d):
        if d.get("kind") != "forward_metamodel":
            raise ValueError(f"not a forward metamodel file (kind={d.get('kind')!r})")
        return cls(net_from_dict(d), int(d["u_dim"]), int(d["alpha_dim"]),
                   int(d.get("sample_count", 0)), d.get("input_low"), d.get("input_high"),
                   float(d.get("holdout_rmse", math.nan)))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _mm_input(mm, u, alpha):
    u = np.asarray(u, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if u.shape[-1] != mm.u_dim or alpha.shape[-1] != mm.alpha_dim:
        raise DimensionError(f"metamodel expects u of {mm.u_dim} and alpha of {mm.alpha_dim}")
    return np.concatenate([u, alpha], axis=-1)


def metamodel_eval(mm, u, alpha):
    out = net_forward(mm.net, _mm_input(mm, u, alpha))
    return float(out[0]) if out.ndim == 1 else out[:, 0]


def metamodel_grad_u(mm, u, alpha):
    x = _mm_input(mm, u, alpha)
    _, gx = net_backward(mm.net, x, np.ones(1))
    return gx[:mm.u_dim]


def _fold_affine(net, x_mean, x_scale, y_mean, y_scale):
    """Rewrite a net trained on standardized data so it maps raw inputs to
    raw outputs: first layer absorbs the input scaling, last layer the
    output scaling."""
    w = net.weights.copy()
    folded = net.with_weights(w)
    layers = folded.layers()
    W0, b0 = layers[0]
    b0 -= W0 @ (x_mean / x_scale)
    W0 /= x_scale
    WL, bL = layers[-1]
    WL *= y_scale
    bL *= y_scale
    bL += y_mean
    return folded


def fit_forward_metamodel(spec, sample_count, epochs, rng, hidden=(16, 16),
                          learning_rate=0.01, batch_size=32, holdout_fraction=0.2,
                          momentum=0.9):
    """Regress U on uniformly sampled (u, alpha); see ``fit_metamodel_data``."""
    if not spec.continuous:
        raise UnsupportedFamilyError("forward metamodels cover continuous families only")
    d = spec.dimension
    if sample_count < 10 * d:
        raise ValueError(f"need at least {10 * d} samples, got {sample_count}")
    A = np.stack([sample_instance(spec, rng).alpha for _ in range(sample_count)])
    U = rng.uniform(spec.u_low, spec.u_high, size=(sample_count, d))
    y = utility_batch(spec.family, U, A)
    n_hold = max(1, int(round(holdout_fraction * sample_count)))
    return fit_metamodel_data(U[n_hold:], A[n_hold:], y[n_hold:], epochs, rng, hidden,
                              learning_rate, batch_size, momentum,
                              holdout=(U[:n_hold], A[:n_hold], y[:n_hold]))


def fit_metamodel_data(U, A, y, epochs, rng, hidden=(16, 16), learning_rate=0.01,
                       batch_size=32, momentum=0.9, holdout=None):
    """Mini-batch SGD with heavy-ball momentum on squared error.

    Inputs and targets are standardized for training and the scaling is then
    folded into the first and last layers, so evaluation stays a single
    forward pass on raw (u, alpha). RMSE is tracked per epoch on ``holdout``
    (or on the training data when no holdout is given).
    """
    U, A, y = np.asarray(U, float), np.asarray(A, float), np.asarray(y, float)
    X = np.hstack([U, A])
    if holdout is None:
        Xho, yho = X, y
    else:
        Xho, yho = np.hstack([holdout[0], holdout[1]]), np.asarray(holdout[2], float)
    x_mean, x_scale = X.mean(axis=0), X.std(axis=0)
    x_scale[x_scale == 0] = 1.0
    y_mean, y_scale = float(y.mean()), float(y.std()) or 1.0
    Xs = (X - x_mean) / x_scale
    ys = ((y - y_mean) / y_scale)[:, None]

    net = init_net((X.shape[1], *hidden, 1), rng)
    w = net.weights.copy()
    vel = np.zeros_like(w)
    n = Xs.shape[0]
    bs = min(batch_size, n)
    rmse_trace = []

    def rmse(weights):
        raw_net = _fold_affine(net.with_weights(weights), x_mean, x_scale, y_mean, y_scale)
        return float(np.sqrt(np.mean((net_forward(raw_net, Xho)[:, 0] - yho) ** 2)))

    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            cur = net.with_weights(w)
            G = 2.0 * (net_forward(cur, Xs[idx]) - ys[idx]) / len(idx)
            grad, _ = net_backward(cur, Xs[idx], G)
            vel = momentum * vel - learning_rate * grad
            w = w + vel
        rmse_trace.append(rmse(w))

    raw_net = _fold_affine(net.with_weights(w), x_mean, x_scale, y_mean, y_scale)
    all_x = np.vstack([X, Xho])
    return ForwardMetamodel(raw_net, U.shape[1], A.shape[1], n + (0 if holdout is None
                                                                  else Xho.shape[0]),
                            [float(v) for v in all_x.min(axis=0)],
                            [float(v) for v in all_x.max(axis=0)],
                            rmse_trace[-1] if rmse_trace else rmse(w), rmse_trace)


# --------------------------------------------------------------------------
# local models
# --------------------------------------------------------------------------

@dataclass
class LocalQuadraticModel:
    """U(c + delta) ~ a + g.delta + 0.5 * sum h_i delta_i^2 within radius."""

    center: np.ndarray
    a: float
    g: np.ndarray
    h: np.ndarray
    radius: float
    regularized: bool = False
    residual: float = 0.0

    def predict(self, u):
        delta = np.asarray(u, dtype=float) - self.center
        return self.a + delta @ self.g + 0.5 * (delta * delta) @ self.h


def _ball_samples(rng, count, d, radius):
    z = rng.standard_normal((count, d))
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    r = radius * rng.random((count, 1)) ** (1.0 / d)
    return z / norms * r


def fit_local_quadratic(desc, center, radius, sample_count, rng):
    """Least-squares diagonal-quadratic fit from samples in the radius ball.

    The normal equations are solved directly; if they are singular a ridge
    of 1e-8 is added and ``regularized`` is set.
    """
    if desc.family == "tsp":
        raise UnsupportedFamilyError("local quadratic models need a continuous family")
    c = np.asarray(center, dtype=float)
    d = c.size
    if sample_count < 2 * d + 1:
        raise ValueError(f"need at least {2 * d + 1} samples, got {sample_count}")
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    delta = _ball_samples(rng, sample_count, d, radius)
    y = utility_batch(desc.family, c + delta, desc.alpha)
    Phi = np.hstack([np.ones((sample_count, 1)), delta, 0.5 * delta * delta])
    M = Phi.T @ Phi
    rhs = Phi.T @ y
    regularized = False
    if np.linalg.matrix_rank(M) < M.shape[0]:
        M = M + RIDGE * np.eye(M.shape[0])
        regularized = True
    coef = np.linalg.solve(M, rhs)
    residual = float(np.max(np.abs(Phi @ coef - y)))
    return LocalQuadraticModel(c, float(coef[0]), coef[1:d + 1], coef[d + 1:],
                               max(float(radius), np.finfo(float).tiny), regularized, residual)


# --------------------------------------------------------------------------
# surrogate-guided search
# --------------------------------------------------------------------------

def surrogate_ascent(mm, desc, start, steps, step_size, box=(-5.0, 5.0)):
    """Projected gradient ascent on the metamodel's prediction in u."""
    if desc.family == "tsp":
        raise UnsupportedFamilyError("surrogate ascent needs a continuous family")
    u = np.clip(np.asarray(getattr(start, "values", start), dtype=float), *box)
    for _ in range(steps):
        u = np.clip(u + step_size * metamodel_grad_u(mm, u, desc.alpha), *box)
    return decode_continuous(u, box)


def surrogate_ascent_gain(mm, desc, start, steps, step_size):
    """True utility after ascent minus true utility at the start."""
    end = surrogate_ascent(mm, desc, start, steps, step_size)
    return evaluate(desc, end) - evaluate(desc, decode_continuous(start))
