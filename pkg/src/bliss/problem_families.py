"""Parameterized utility families U(u, alpha).

Three families are defined, all maximized:

* ``quadratic_bowl``:    U = -sum (u_i - a_i)^2
* ``shifted_rastrigin``: U = -sum [(u_i - a_i)^2 - 10 cos(2 pi (u_i - a_i)) + 10]
* ``tsp``:               U = -(closed tour length), alpha holds n flattened (x, y)
"""

import itertools
import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core_math import make_rng

FAMILIES = ("quadratic_bowl", "shifted_rastrigin", "tsp")
CONTINUOUS = ("quadratic_bowl", "shifted_rastrigin")
INSTANCE_FORMAT_VERSION = 1
RASTRIGIN_A = 10.0
TSP_ORACLE_MAX_N = 10
ALPHA_RANGE = {"quadratic_bowl": (-2.0, 2.0), "shifted_rastrigin": (-2.0, 2.0),
               "tsp": (0.0, 1.0)}


class FamilyError(ValueError):
    """Candidate or descriptor does not fit the family."""


class UnsupportedSizeError(ValueError):
    pass


@dataclass(frozen=True)
class FamilySpec:
    family: str
    dimension: int
    alpha_low: float = None
    alpha_high: float = None
    u_low: float = -5.0
    u_high: float = 5.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise FamilyError(f"unknown family {self.family!r}")
        if int(self.dimension) < 1:
            raise FamilyError("dimension must be positive")
        object.__setattr__(self, "dimension", int(self.dimension))
        lo, hi = ALPHA_RANGE[self.family]
        if self.alpha_low is None:
            object.__setattr__(self, "alpha_low", lo)
        if self.alpha_high is None:
            object.__setattr__(self, "alpha_high", hi)
        for a, b in ((self.alpha_low, self.alpha_high), (self.u_low, self.u_high)):
            if not (math.isfinite(a) and math.isfinite(b) and a < b):
                raise FamilyError(f"bad bounds [{a}, {b}]")
        if self.alpha_low < lo or self.alpha_high > hi:
            raise FamilyError(f"{self.family} descriptor bounds must stay within [{lo}, {hi}]")

    @property
    def continuous(self):
        return self.family in CONTINUOUS

    @property
    def alpha_dim(self):
        return 2 * self.dimension if self.family == "tsp" else self.dimension

    @property
    def box(self):
        return (self.u_low, self.u_high)


@dataclass(frozen=True, eq=False)
class InstanceDescriptor:
    family: str
    dimension: int
    alpha: np.ndarray

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=float)
        alpha.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        want = 2 * self.dimension if self.family == "tsp" else self.dimension
        if self.family not in FAMILIES:
            raise FamilyError(f"unknown family {self.family!r}")
        if alpha.shape != (want,):
            raise FamilyError(f"alpha length {alpha.size} != {want} for {self.family}")
        lo, hi = ALPHA_RANGE[self.family]
        if not np.all((alpha >= lo) & (alpha <= hi)):
            raise FamilyError(f"{self.family} alpha must lie in [{lo}, {hi}]")

    @property
    def cities(self):
        return self.alpha.reshape(-1, 2)

    def __eq__(self, other):
        return (isinstance(other, InstanceDescriptor) and self.family == other.family
                and self.dimension == other.dimension
                and np.array_equal(self.alpha, other.alpha))

    def __hash__(self):
        return hash((self.family, self.dimension, self.alpha.tobytes()))

    def to_dict(self):
        return {"format_version": INSTANCE_FORMAT_VERSION, "family": self.family,
                "dimension": self.dimension, "alpha": [float(a) for a in self.alpha]}

    @classmethod
    def from_dict(cls, d):
        if d.get("format_version") != INSTANCE_FORMAT_VERSION:
            raise FamilyError(f"unsupported instance format_version {d.get('format_version')!r}")
        return cls(d["family"], int(d["dimension"]), d["alpha"])


@dataclass(frozen=True, eq=False)
class CandidateSolution:
    kind: str  # "continuous" or "permutation"
    values: np.ndarray

    def __post_init__(self):
        dtype = int if self.kind == "permutation" else float
        values = np.array(self.values, dtype=dtype)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __eq__(self, other):
        return (isinstance(other, CandidateSolution) and self.kind == other.kind
                and np.array_equal(self.values, other.values))

    def __hash__(self):
        return hash((self.kind, self.values.tobytes()))

    def to_list(self):
        return [int(v) for v in self.values] if self.kind == "permutation" \
            else [float(v) for v in self.values]


def continuous(values):
    return CandidateSolution("continuous", values)


def permutation(values):
    return CandidateSolution("permutation", values)


def spec_for(desc, **bounds):
    return FamilySpec(desc.family, desc.dimension, **bounds)


# --------------------------------------------------------------------------
# sampling
# --------------------------------------------------------------------------

def sample_instance(spec, rng):
    alpha = rng.uniform(spec.alpha_low, spec.alpha_high, size=spec.alpha_dim)
    return InstanceDescriptor(spec.family, spec.dimension, alpha)


def instance_from_seed(spec, seed):
    """The instance identified by ``seed`` (its own stream, nothing shared)."""
    return sample_instance(spec, make_rng(seed))


def solution_space(desc, u_low=-5.0, u_high=5.0):
    """(kind, dimension, box); permutation scores are unbounded."""
    if desc.family == "tsp":
        return "permutation", desc.dimension, (-math.inf, math.inf)
    return "continuous", desc.dimension, (u_low, u_high)


def is_valid_permutation(values, n):
    v = np.asarray(values)
    return v.shape == (n,) and np.array_equal(np.sort(v), np.arange(n))


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------

def _check_candidate(desc, u):
    if desc.family == "tsp":
        if u.kind != "permutation" or not is_valid_permutation(u.values, desc.dimension):
            raise FamilyError(f"tsp n={desc.dimension} needs a permutation, got {u!r}")
    else:
        if u.kind != "continuous" or u.values.shape != (desc.dimension,):
            raise FamilyError(f"{desc.family} d={desc.dimension} needs a real vector, got {u!r}")


def tour_length(cities, order):
    pts = np.asarray(cities)[np.asarray(order)]
    return float(np.sum(np.linalg.norm(pts - np.roll(pts, -1, axis=0), axis=1)))


def _continuous_utility(family, diff):
    if family == "quadratic_bowl":
        return -np.sum(diff * diff, axis=-1)
    return -np.sum(diff * diff - RASTRIGIN_A * np.cos(2 * np.pi * diff) + RASTRIGIN_A, axis=-1)


def evaluate(desc, u):
    _check_candidate(desc, u)
    if desc.family == "tsp":
        return -tour_length(desc.cities, u.values)
    return float(_continuous_utility(desc.family, u.values - desc.alpha))


def utility_batch(family, U, A):
    """Vectorized continuous utility for rows of u and alpha (no checks)."""
    return _continuous_utility(family, np.asarray(U) - np.asarray(A))


def utility_grad(family, U, A):
    """dU/du for continuous families; rows of u and alpha."""
    diff = np.asarray(U, dtype=float) - np.asarray(A, dtype=float)
    if family == "quadratic_bowl":
        return -2.0 * diff
    if family == "shifted_rastrigin":
        return -(2.0 * diff + 2 * np.pi * RASTRIGIN_A * np.sin(2 * np.pi * diff))
    raise FamilyError(f"{family} utility is not differentiable in u")


# --------------------------------------------------------------------------
# exact optimum
# --------------------------------------------------------------------------

def tsp_tour_count(n):
    """Distinct closed tours with city 0 fixed first, reversal identified."""
    return 1 if n < 3 else math.factorial(n - 1) // 2


@lru_cache(maxsize=8)
def _tsp_tours(n):
    """Canonical tours in lexicographic order: city 0 first, and of each
    tour/reversal pair only the lexicographically smaller one."""
    if n == 1:
        return np.zeros((1, 1), dtype=np.int64)
    if n == 2:
        return np.array([[0, 1]], dtype=np.int64)
    rest = np.array(list(itertools.permutations(range(1, n))), dtype=np.int64)
    rest = rest[rest[:, 0] < rest[:, -1]]
    tours = np.hstack([np.zeros((rest.shape[0], 1), dtype=np.int64), rest])
    tours.setflags(write=False)
    return tours


def _brute_force_tsp(desc):
    n = desc.dimension
    if n > TSP_ORACLE_MAX_N:
        raise UnsupportedSizeError(f"tsp oracle supports n <= {TSP_ORACLE_MAX_N}, got {n}")
    tours = _tsp_tours(n)
    c = desc.cities
    D = np.linalg.norm(c[:, None, :] - c[None, :, :], axis=-1)
    lengths = D[tours, np.roll(tours, -1, axis=1)].sum(axis=1)
    best = lengths.min()
    # equal-length tours can differ by rounding; the first (lexicographic) wins
    idx = int(np.flatnonzero(lengths <= best + 1e-12 * max(1.0, best))[0])
    return permutation(tours[idx]), tours.shape[0]


def oracle_optimum(desc, u_low=-5.0, u_high=5.0):
    if desc.family == "tsp":
        return _brute_force_tsp(desc)[0]
    return continuous(np.clip(desc.alpha, u_low, u_high))


def oracle_supported(desc):
    return desc.family in CONTINUOUS or desc.dimension <= TSP_ORACLE_MAX_N


def oracle_with_count(desc):
    """Exact optimum plus the number of candidates enumerated to find it."""
    if desc.family == "tsp":
        return _brute_force_tsp(desc)
    return oracle_optimum(desc), 1


# --------------------------------------------------------------------------
# permutation helpers
# --------------------------------------------------------------------------

def two_opt_move(order, i, j):
    """Reverse the segment order[i..j] (inclusive), i < j."""
    out = np.array(order, copy=True)
    out[i:j + 1] = out[i:j + 1][::-1]
    return out


def best_two_opt_gain(desc, order):
    """Largest tour-length reduction achievable by a single 2-opt move."""
    order = np.asarray(order)
    n = order.size
    base = tour_length(desc.cities, order)
    best = 0.0
    for i in range(n - 1):
        for j in range(i + 1, n):
            gain = base - tour_length(desc.cities, two_opt_move(order, i, j))
            best = max(best, gain)
    return best


def permutation_keys(order):
    """Random-key encoding: key[city] = position of city in the tour / n."""
    order = np.asarray(order)
    n = order.size
    keys = np.empty(n)
    keys[order] = np.arange(n) / n
    return keys


# --------------------------------------------------------------------------
# files
# --------------------------------------------------------------------------

def save_instances(instances, path):
    with open(path, "w") as fh:
        json.dump([d.to_dict() for d in instances], fh, indent=1)
        fh.write("\n")


def load_instances(path):
    with open(path) as fh:
        data = json.load(fh)
    if isinstance(data, dict):
        data = [data]
    return [InstanceDescriptor.from_dict(d) for d in data]
