"""Stochastic option generators u(alpha, e, T).

The noise vector is ``e = T * z`` with ``z`` standard normal, so ``T = 0``
gives a deterministic generator. Continuous outputs are clipped to the
solution box; TSP outputs are random keys decoded by stable argsort.
"""

import json
from dataclasses import dataclass

import numpy as np

from .core_math import (DenseNet, DimensionError, init_net, net_forward, net_from_dict,
                        net_to_dict, zero_net)
from .problem_families import (CONTINUOUS, FAMILIES, FamilyError, continuous, evaluate,
                               permutation, permutation_keys)


class ModeError(ValueError):
    """Refinement requested on a net built without the refinement input."""


@dataclass
class OptionNet:
    net: DenseNet
    alpha_dim: int
    noise_dim: int
    output_dim: int
    family: str
    refinement_mode: bool = False
    u_low: float = -5.0
    u_high: float = 5.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise FamilyError(f"unknown family {self.family!r}")
        want_in = self.alpha_dim + self.noise_dim + (self.output_dim if self.refinement_mode else 0)
        if self.net.n_inputs != want_in or self.net.n_outputs != self.output_dim:
            raise DimensionError(
                f"net {self.net.layer_sizes} does not fit alpha_dim={self.alpha_dim}, "
                f"noise_dim={self.noise_dim}, output_dim={self.output_dim}, "
                f"refinement={self.refinement_mode}")

    @property
    def box(self):
        return (self.u_low, self.u_high)

    def with_weights(self, weights):
        return OptionNet(self.net.with_weights(weights), self.alpha_dim, self.noise_dim,
                         self.output_dim, self.family, self.refinement_mode,
                         self.u_low, self.u_high)

    def to_dict(self):
        d = net_to_dict(self.net)
        d.update({"alpha_dim": self.alpha_dim, "noise_dim": self.noise_dim,
                  "family": self.family, "refinement_mode": self.refinement_mode,
                  "u_low": self.u_low, "u_high": self.u_high})
        return d

    @classmethod
    def from_dict(cls, d):
        net = net_from_dict(d)
        return cls(net, int(d["alpha_dim"]), int(d["noise_dim"]), net.n_outputs,
                   d["family"], bool(d.get("refinement_mode", False)),
                   float(d.get("u_low", -5.0)), float(d.get("u_high", 5.0)))


@dataclass(frozen=True)
class SampleConfig:
    temperature: float = 0.0
    k: int = 1
    refine_rounds: int = 0

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be nonnegative")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.refine_rounds < 0:
            raise ValueError("refine_rounds must be nonnegative")


def make_option_net(spec, hidden=(16,), rng=None, noise_dim=None, refinement_mode=False):
    """Size an OptionNet for ``spec``; ``rng=None`` gives an all-zero net."""
    out = spec.dimension
    noise = out if noise_dim is None else int(noise_dim)
    sizes = (spec.alpha_dim + noise + (out if refinement_mode else 0), *hidden, out)
    net = zero_net(sizes) if rng is None else init_net(sizes, rng)
    return OptionNet(net, spec.alpha_dim, noise, out, spec.family, refinement_mode,
                     spec.u_low, spec.u_high)


def save_option_net(onet, path, **extra):
    d = onet.to_dict()
    d.update(extra)
    with open(path, "w") as fh:
        json.dump(d, fh, indent=1)
        fh.write("\n")


def load_option_net(path):
    with open(path) as fh:
        return OptionNet.from_dict(json.load(fh))


# --------------------------------------------------------------------------
# decoding
# --------------------------------------------------------------------------

def decode_continuous(raw, box=(-5.0, 5.0)):
    return continuous(np.clip(np.asarray(raw, dtype=float), box[0], box[1]))


def decode_permutation(raw, n=None):
    """Cities sorted by ascending score, ties by ascending index.

    The stable sort totally orders -inf < reals < +inf; NaN sorts last.
    """
    raw = np.asarray(raw, dtype=float)
    if n is not None and raw.shape != (n,):
        raise DimensionError(f"expected {n} scores, got {raw.shape}")
    return permutation(np.argsort(raw, kind="stable"))


def decode(onet, raw):
    if onet.family in CONTINUOUS:
        return decode_continuous(raw, onet.box)
    return decode_permutation(raw, onet.output_dim)


def encode_solution(u):
    """Net-side encoding of a candidate: reals as-is, tours as rank/n keys."""
    if u.kind == "permutation":
        return permutation_keys(u.values)
    return np.asarray(u.values, dtype=float)


# --------------------------------------------------------------------------
# sampling
# --------------------------------------------------------------------------

def _check_desc(onet, desc):
    if desc.family != onet.family or desc.alpha.size != onet.alpha_dim:
        raise DimensionError(
            f"descriptor ({desc.family}, {desc.alpha.size}) does not match option net "
            f"({onet.family}, {onet.alpha_dim})")


def _draw_noise(onet, T, rng):
    # always consume the draw so T does not shift the stream
    return T * rng.standard_normal(onet.noise_dim)


def raw_sample(onet, desc, T, rng):
    if onet.refinement_mode:
        raise ModeError("refinement-mode nets need the previous guess; use refine()")
    if T < 0:
        raise ValueError("temperature must be nonnegative")
    _check_desc(onet, desc)
    e = _draw_noise(onet, T, rng)
    return net_forward(onet.net, np.concatenate([desc.alpha, e]))


def sample_option(onet, desc, T, rng):
    return decode(onet, raw_sample(onet, desc, T, rng))


def best_of_k(onet, desc, T, k, rng):
    """Best of ``k`` independent samples; the earliest draw wins ties."""
    if k < 1:
        raise ValueError("k must be at least 1")
    best, best_u = None, -np.inf
    for _ in range(k):
        cand = sample_option(onet, desc, T, rng)
        util = evaluate(desc, cand)
        if best is None or util > best_u:
            best, best_u = cand, util
    return best, best_u


def refine(onet, desc, u_prev, T, rng):
    """One proposal conditioned on the previous guess."""
    if not onet.refinement_mode:
        raise ModeError("option net was not built in refinement mode")
    if T < 0:
        raise ValueError("temperature must be nonnegative")
    _check_desc(onet, desc)
    prev = encode_solution(u_prev)
    if prev.size != onet.output_dim:
        raise DimensionError(f"previous guess has {prev.size} entries, expected {onet.output_dim}")
    e = _draw_noise(onet, T, rng)
    return decode(onet, net_forward(onet.net, np.concatenate([desc.alpha, prev, e])))


def refine_loop(onet, desc, u_start, T, rounds, rng):
    """Keep-best refinement for ``rounds`` proposals.

    Returns (incumbent, utility, per-round incumbent utilities starting with
    the start point's).
    """
    best = u_start
    best_u = evaluate(desc, u_start)
    history = [best_u]
    for _ in range(rounds):
        cand = refine(onet, desc, best, T, rng)
        util = evaluate(desc, cand)
        if util > best_u:
            best, best_u = cand, util
        history.append(best_u)
    return best, best_u, history

