"""Dense tanh networks with exact backpropagation, seeded RNG streams and
finite-difference gradient checking.

Weights live in one flat vector. For each layer, in order from input to
output, the weight matrix of shape ``(fan_out, fan_in)`` is stored row-major,
followed by the bias vector of length ``fan_out``.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

MODEL_FORMAT_VERSION = 1
FD_STEP = 1e-5


class DimensionError(ValueError):
    """Input or gradient vector does not match the network shape."""


class ModelFormatError(ValueError):
    pass


# --------------------------------------------------------------------------
# RNG streams
#
# A stream is a numpy Generator over PCG64. The root stream for ``seed`` is
# ``PCG64(SeedSequence(seed))``; child ``i`` of ``seed`` is
# ``PCG64(SeedSequence(seed, spawn_key=(i,)))``. Both are stable across
# platforms for a given numpy major version.
# --------------------------------------------------------------------------

def make_rng(seed):
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def child_rng(seed, index):
    """Independent stream number ``index`` derived from ``seed``."""
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    ss = np.random.SeedSequence(seed, spawn_key=(int(index),))
    return np.random.Generator(np.random.PCG64(ss))


def draw_seed(rng):
    """Draw a fresh 63-bit seed from a stream (used to fan out work)."""
    return int(rng.integers(0, 2**63 - 1))


# --------------------------------------------------------------------------
# networks
# --------------------------------------------------------------------------

def param_count(layer_sizes):
    return sum((a + 1) * b for a, b in zip(layer_sizes[:-1], layer_sizes[1:]))


@dataclass
class DenseNet:
    layer_sizes: tuple
    weights: np.ndarray
    hidden_activation: str = "tanh"
    output_activation: str = "linear"

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.layer_sizes) < 2:
            raise ValueError("layer_sizes needs at least input and output widths")
        if any(s < 1 for s in self.layer_sizes):
            raise ValueError(f"layer widths must be positive: {self.layer_sizes}")
        if self.hidden_activation != "tanh" or self.output_activation != "linear":
            raise ValueError("only tanh hidden / linear output is supported")
        self.weights = np.ascontiguousarray(self.weights, dtype=float)
        expected = param_count(self.layer_sizes)
        if self.weights.shape != (expected,):
            raise ValueError(
                f"weights length {self.weights.size} != {expected} for {self.layer_sizes}")

    @property
    def n_inputs(self):
        return self.layer_sizes[0]

    @property
    def n_outputs(self):
        return self.layer_sizes[-1]

    def layers(self):
        """(W, b) views into the flat weight vector, input layer first."""
        return _split(self.weights, self.layer_sizes)

    def with_weights(self, weights):
        return DenseNet(self.layer_sizes, np.array(weights, dtype=float),
                        self.hidden_activation, self.output_activation)

    def copy(self):
        return self.with_weights(self.weights.copy())


def _split(flat, layer_sizes):
    out = []
    pos = 0
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        n_w = fan_in * fan_out
        W = flat[pos:pos + n_w].reshape(fan_out, fan_in)
        pos += n_w
        b = flat[pos:pos + fan_out]
        pos += fan_out
        out.append((W, b))
    return out


def init_net(layer_sizes, rng):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init for weights and biases."""
    layer_sizes = tuple(int(s) for s in layer_sizes)
    chunks = []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        lim = 1.0 / math.sqrt(fan_in)
        chunks.append(rng.uniform(-lim, lim, size=(fan_in + 1) * fan_out))
    return DenseNet(layer_sizes, np.concatenate(chunks))


def zero_net(layer_sizes):
    layer_sizes = tuple(int(s) for s in layer_sizes)
    return DenseNet(layer_sizes, np.zeros(param_count(layer_sizes)))


def _as_batch(net, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != net.n_inputs:
        raise DimensionError(
            f"input width {X.shape[-1] if X.ndim else 0} != net input width {net.n_inputs}")
    return X, single


def _forward_cache(net, X):
    acts = [X]
    layers = net.layers()
    h = X
    for i, (W, b) in enumerate(layers):
        z = h @ W.T + b
        h = z if i == len(layers) - 1 else np.tanh(z)
        acts.append(h)
    return acts


def net_forward(net, x):
    """Evaluate the network on one input vector or a batch (rows)."""
    X, single = _as_batch(net, x)
    out = _forward_cache(net, X)[-1]
    return out[0] if single else out


def net_backward(net, x, output_grad):
    """Gradients of <net(x), output_grad> w.r.t. the flat weights and x.

    With a batch, parameter gradients are summed over rows and the input
    gradient is returned per row.
    """
    X, single = _as_batch(net, x)
    G = np.asarray(output_grad, dtype=float)
    G = G[None, :] if G.ndim == 1 else G
    if G.shape != (X.shape[0], net.n_outputs):
        raise DimensionError(
            f"output_grad shape {G.shape} != {(X.shape[0], net.n_outputs)}")
    acts = _forward_cache(net, X)
    layers = net.layers()
    grad = np.empty_like(net.weights)
    grad_views = _split(grad, net.layer_sizes)
    delta = G
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        gW, gb = grad_views[i]
        h_in = acts[i]
        gW[...] = delta.T @ h_in
        gb[...] = delta.sum(axis=0)
        delta = delta @ W
        if i > 0:
            delta = delta * (1.0 - h_in * h_in)
    return grad, (delta[0] if single else delta)


# --------------------------------------------------------------------------
# gradient check
# --------------------------------------------------------------------------

def _rel_err(a, b):
    return np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))


def finite_difference_grads(net, x, output_grad, step=FD_STEP):
    """Central-difference gradients of <net(x), output_grad>."""
    x = np.asarray(x, dtype=float)
    g_out = np.asarray(output_grad, dtype=float)

    def objective(w, inp):
        return float(np.dot(net_forward(net.with_weights(w), inp), g_out))

    w0 = net.weights.copy()
    p_num = np.empty_like(w0)
    for j in range(w0.size):
        wp = w0.copy()
        wm = w0.copy()
        wp[j] += step
        wm[j] -= step
        p_num[j] = (objective(wp, x) - objective(wm, x)) / (2 * step)
    i_num = np.empty_like(x)
    for j in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[j] += step
        xm[j] -= step
        i_num[j] = (objective(w0, xp) - objective(w0, xm)) / (2 * step)
    return p_num, i_num


def gradient_discrepancy(net, x, output_grad=None, backward=net_backward):
    """Max relative error between ``backward`` and central differences."""
    x = np.asarray(x, dtype=float)
    if output_grad is None:
        # fixed direction so the check is a pure function of (net, x)
        output_grad = make_rng(0).standard_normal(net.n_outputs)
    p_an, i_an = backward(net, x, output_grad)
    p_num, i_num = finite_difference_grads(net, x, output_grad)
    errs = [0.0]
    if p_an.size:
        errs.append(float(np.max(_rel_err(p_an, p_num))))
    if i_an.size:
        errs.append(float(np.max(_rel_err(i_an, i_num))))
    return max(errs)


def check_gradient(net, x, tolerance, output_grad=None, backward=net_backward):
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    return gradient_discrepancy(net, x, output_grad, backward) <= tolerance


def random_gradcheck_suite(seed, count=100, max_width=8, max_hidden=3, tolerance=1e-3):
    """Run check_gradient over ``count`` random nets; returns per-net results."""
    rng = make_rng(seed)
    results = []
    for i in range(count):
        n_hidden = int(rng.integers(0, max_hidden + 1))
        sizes = tuple(int(s) for s in rng.integers(1, max_width + 1, size=n_hidden + 2))
        net = init_net(sizes, rng)
        x = rng.uniform(-2.0, 2.0, size=sizes[0])
        g = rng.standard_normal(sizes[-1])
        err = gradient_discrepancy(net, x, g)
        results.append({"index": i, "layer_sizes": list(sizes), "max_rel_error": err,
                        "passed": err <= tolerance})
    return results


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

def net_to_dict(net):
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "layer_sizes": list(net.layer_sizes),
        "hidden_activation": net.hidden_activation,
        "weights": [float(w) for w in net.weights],
    }


def net_from_dict(d):
    if d.get("format_version") != MODEL_FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format_version {d.get('format_version')!r}")
    try:
        return DenseNet(tuple(d["layer_sizes"]), np.array(d["weights"], dtype=float),
                        d.get("hidden_activation", "tanh"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model: {exc}") from exc


def save_net(net, path, **extra):
    d = net_to_dict(net)
    d.update(extra)
    with open(path, "w") as fh:
        json.dump(d, fh, indent=1)
        fh.write("\n")


def load_net(path):
    with open(path) as fh:
        return net_from_dict(json.load(fh))
