"""Training routes for option nets.

* ``population``: particle swarm over whole flat weight vectors, one particle
  per network.
* ``supervised_inverse``: regress the oracle optimum from the descriptor.
* ``pathwise``: stochastic gradient ascent on expected utility, with the
  gradient taken through the clipped decode (continuous families only).
"""

import csv
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .core_math import child_rng, draw_seed, net_backward, net_forward
from .option_net import decode_permutation, make_option_net
from .problem_families import (evaluate, oracle_optimum, permutation_keys, sample_instance,
                               utility_batch, utility_grad)

log = logging.getLogger(__name__)

ROUTES = ("population", "supervised_inverse", "pathwise")
TRACE_HEADER = ("iteration", "best_fitness", "mean_fitness", "temperature", "evaluations")


class UnsupportedFamilyError(ValueError):
    pass


# --------------------------------------------------------------------------
# temperature schedules
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TemperatureSchedule:
    kind: str = "constant"
    t0: float = 0.0
    gamma: float = 1.0
    t_final: float = 0.0
    horizon: int = 1

    def __post_init__(self):
        if self.kind not in ("constant", "exponential", "linear"):
            raise ValueError(f"unknown schedule {self.kind!r}")
        if self.t0 < 0 or self.t_final < 0:
            raise ValueError("temperatures must be nonnegative")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")

    @classmethod
    def constant(cls, t0):
        return cls("constant", t0)

    @classmethod
    def exponential(cls, t0, gamma):
        return cls("exponential", t0, gamma=gamma)

    @classmethod
    def linear(cls, t0, t_final, horizon):
        return cls("linear", t0, t_final=t_final, horizon=horizon)


def schedule_temperature(schedule, iteration):
    if iteration < 0:
        raise ValueError("iteration must be nonnegative")
    if schedule.kind == "constant":
        return schedule.t0
    if schedule.kind == "exponential":
        return schedule.t0 * schedule.gamma ** iteration
    frac = min(iteration / schedule.horizon, 1.0)
    return schedule.t0 + (schedule.t_final - schedule.t0) * frac


# --------------------------------------------------------------------------
# config and trace
# --------------------------------------------------------------------------

@dataclass
class TrainerConfig:
    route: str = "population"
    iterations: int = 100
    batch_size: int = 16
    samples_per_instance: int = 1
    learning_rate: float = 0.05
    swarm_size: int = 12
    omega: float = 0.72
    c1: float = 1.49
    c2: float = 1.49
    hidden_sizes: tuple = (16,)
    dataset_size: int = 500
    noise_dim: int = None
    schedule: TemperatureSchedule = field(default_factory=TemperatureSchedule)

    def __post_init__(self):
        if isinstance(self.schedule, dict):
            self.schedule = TemperatureSchedule(**self.schedule)
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        if self.route not in ROUTES:
            raise ValueError(f"unknown route {self.route!r}")
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.batch_size < 1 or self.samples_per_instance < 1 or self.swarm_size < 1:
            raise ValueError("batch_size, samples_per_instance and swarm_size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if min(self.omega, self.c1, self.c2) < 0:
            raise ValueError("swarm coefficients must be nonnegative")

    def to_dict(self):
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown trainer config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TraceRecord:
    iteration: int
    best_fitness: float
    mean_fitness: float
    temperature: float
    evaluations: int


class TrainingTrace(list):
    """List of TraceRecord, one per iteration (iteration 0 = initial state)."""

    def add(self, iteration, best, mean, T, evaluations):
        if self and evaluations <= self[-1].evaluations:
            raise ValueError("evaluation count must strictly increase")
        self.append(TraceRecord(int(iteration), float(best), float(mean), float(T),
                                int(evaluations)))

    def best_fitness(self):
        return np.array([r.best_fitness for r in self])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_HEADER)
            for r in self:
                w.writerow([r.iteration, repr(r.best_fitness), repr(r.mean_fitness),
                            repr(r.temperature), r.evaluations])

    @classmethod
    def read_csv(cls, path):
        trace = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                trace.append(TraceRecord(int(row["iteration"]), float(row["best_fitness"]),
                                         float(row["mean_fitness"]), float(row["temperature"]),
                                         int(row["evaluations"])))
        return trace


# --------------------------------------------------------------------------
# fitness
# --------------------------------------------------------------------------

def _noise(rng, n_instances, samples, noise_dim):
    return rng.standard_normal((n_instances, samples, noise_dim))


def batch_utilities(onet, batch, T, Z):
    """Utilities of sampled options, shape (instances, samples).

    ``Z`` holds the standard-normal draws, shape (instances, samples, noise_dim).
    """
    A = np.stack([d.alpha for d in batch])
    n, s = Z.shape[:2]
    X = np.concatenate([np.repeat(A[:, None, :], s, axis=1), T * Z], axis=2)
    raw = net_forward(onet.net, X.reshape(n * s, -1)).reshape(n, s, -1)
    if onet.family == "tsp":
        out = np.empty((n, s))
        for i, desc in enumerate(batch):
            for j in range(s):
                out[i, j] = evaluate(desc, decode_permutation(raw[i, j]))
        return out
    U = np.clip(raw, onet.u_low, onet.u_high)
    return utility_batch(onet.family, U, A[:, None, :])


def fitness(onet, batch, T, samples_per_instance, rng):
    """Mean over instances of the mean utility of sampled options."""
    if not batch:
        raise ValueError("instance batch must be non-empty")
    Z = _noise(rng, len(batch), samples_per_instance, onet.noise_dim)
    return float(np.mean(batch_utilities(onet, batch, T, Z)))


# --------------------------------------------------------------------------
# route 1: population of networks
# --------------------------------------------------------------------------

@dataclass
class PopulationState:
    particles: np.ndarray
    velocities: np.ndarray
    pbest: np.ndarray
    pbest_fitness: np.ndarray
    gbest: np.ndarray = None
    gbest_fitness: float = -math.inf

    def update_bests(self, fit):
        better = fit > self.pbest_fitness
        self.pbest[better] = self.particles[better]
        self.pbest_fitness[better] = fit[better]
        i = int(np.argmax(self.pbest_fitness))
        if self.gbest is None or self.pbest_fitness[i] > self.gbest_fitness:
            self.gbest = self.pbest[i].copy()
            self.gbest_fitness = float(self.pbest_fitness[i])


def train_population(spec, config, rng, batch=None):
    """Canonical PSO in weight space.

    Every fitness call in the run uses the same frozen instance batch and the
    same noise stream, so particles are compared on common random numbers.
    Returns the option net built from the global best and the trace.
    """
    if config.route != "population":
        raise ValueError(f"config route is {config.route!r}, not 'population'")
    template = make_option_net(spec, config.hidden_sizes, None, config.noise_dim)
    init_seed = draw_seed(rng)
    if batch is None:
        batch = [sample_instance(spec, rng) for _ in range(config.batch_size)]
    noise_seed = draw_seed(rng)
    move_rng = child_rng(draw_seed(rng), 0)
    n_part = config.swarm_size
    per_eval = len(batch) * config.samples_per_instance
    reinit_count = [0]

    def new_weights():
        reinit_count[0] += 1
        return make_option_net(spec, config.hidden_sizes, child_rng(init_seed, reinit_count[0]),
                               config.noise_dim).net.weights

    def evaluate_all(W, T):
        fit = np.empty(len(W))
        for i, w in enumerate(W):
            f = fitness(template.with_weights(w), batch, T, config.samples_per_instance,
                        child_rng(noise_seed, 0))
            if not math.isfinite(f):
                log.warning("particle %d produced non-finite fitness; reinitialized", i)
                W[i] = new_weights()
                state.velocities[i] = 0.0
                f = -math.inf
            fit[i] = f
        return fit

    W0 = np.stack([new_weights() for _ in range(n_part)])
    state = PopulationState(W0, np.zeros_like(W0), W0.copy(), np.full(n_part, -math.inf))
    trace = TrainingTrace()
    evals = 0

    T = schedule_temperature(config.schedule, 0)
    fit = evaluate_all(state.particles, T)
    evals += n_part * per_eval
    state.update_bests(fit)
    trace.add(0, state.gbest_fitness, _finite_mean(fit), T, evals)

    for it in range(1, config.iterations + 1):
        T = schedule_temperature(config.schedule, it)
        r1 = move_rng.random(state.particles.shape)
        r2 = move_rng.random(state.particles.shape)
        state.velocities = (config.omega * state.velocities
                            + config.c1 * r1 * (state.pbest - state.particles)
                            + config.c2 * r2 * (state.gbest - state.particles))
        state.particles = state.particles + state.velocities
        fit = evaluate_all(state.particles, T)
        evals += n_part * per_eval
        state.update_bests(fit)
        trace.add(it, state.gbest_fitness, _finite_mean(fit), T, evals)

    return template.with_weights(state.gbest), trace


def _finite_mean(x):
    x = np.asarray(x)
    x = x[np.isfinite(x)]
    return float(np.mean(x)) if x.size else -math.inf


# --------------------------------------------------------------------------
# route 2: supervised inverse metamodel
# --------------------------------------------------------------------------

def inverse_target(desc):
    """Optimum as a net output: the point itself, or rank keys for a tour."""
    u = oracle_optimum(desc)
    if u.kind == "permutation":
        return permutation_keys(u.values)
    return np.asarray(u.values, dtype=float)


def inverse_dataset_from_instances(instances):
    return [(d, inverse_target(d)) for d in instances]


def build_inverse_dataset(spec, count, rng):
    return inverse_dataset_from_instances([sample_instance(spec, rng) for _ in range(count)])


def _supervised_arrays(onet, dataset):
    A = np.stack([d.alpha for d, _ in dataset])
    Y = np.stack([np.asarray(t, dtype=float) for _, t in dataset])
    if A.shape[1] != onet.alpha_dim or Y.shape[1] != onet.output_dim:
        raise ValueError("dataset dimensions do not match the option net")
    X = np.hstack([A, np.zeros((A.shape[0], onet.noise_dim))])
    return X, Y


def supervised_loss(onet, dataset):
    X, Y = _supervised_arrays(onet, dataset)
    return float(np.mean((net_forward(onet.net, X) - Y) ** 2))


def train_supervised_inverse(spec, config, dataset, rng):
    """Mini-batch SGD on mean squared error with the noise input held at 0."""
    if not dataset:
        raise ValueError("dataset must be non-empty")
    onet = make_option_net(spec, config.hidden_sizes, rng, config.noise_dim)
    X, Y = _supervised_arrays(onet, dataset)
    w = onet.net.weights.copy()
    n = X.shape[0]
    bs = min(config.batch_size, n)
    trace = TrainingTrace()
    best = -math.inf
    evals = 0
    for epoch in range(1, config.iterations + 1):
        order = rng.permutation(n)
        net = onet.net
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            net = net.with_weights(w)
            pred = net_forward(net, X[idx])
            G = 2.0 * (pred - Y[idx]) / (len(idx) * Y.shape[1])
            grad, _ = net_backward(net, X[idx], G)
            w -= config.learning_rate * grad
        evals += n
        loss = float(np.mean((net_forward(onet.net.with_weights(w), X) - Y) ** 2))
        best = max(best, -loss)
        trace.add(epoch, best, -loss, 0.0, evals)
    return onet.with_weights(w), trace


# --------------------------------------------------------------------------
# route 3: pathwise gradient
# --------------------------------------------------------------------------

def pathwise_objective(onet, alphas, Z, T):
    """Mean utility of clip(net(alpha, T z)) over rows of alphas and Z."""
    A = np.asarray(alphas, dtype=float)
    X = np.hstack([A, T * np.asarray(Z, dtype=float)])
    U = np.clip(net_forward(onet.net, X), onet.u_low, onet.u_high)
    return float(np.mean(utility_batch(onet.family, U, A)))


def pathwise_gradient(onet, alphas, Z, T):
    """Exact weight gradient of pathwise_objective (clip subgradient 0 outside)."""
    A = np.asarray(alphas, dtype=float)
    X = np.hstack([A, T * np.asarray(Z, dtype=float)])
    raw = net_forward(onet.net, X)
    U = np.clip(raw, onet.u_low, onet.u_high)
    inside = (raw > onet.u_low) & (raw < onet.u_high)
    G = utility_grad(onet.family, U, A) * inside / A.shape[0]
    grad, _ = net_backward(onet.net, X, G)
    return grad


def train_pathwise(spec, config, rng):
    if not spec.continuous:
        raise UnsupportedFamilyError(f"pathwise training needs a differentiable family, "
                                     f"got {spec.family}")
    onet = make_option_net(spec, config.hidden_sizes, rng, config.noise_dim)
    w = onet.net.weights.copy()
    s = config.samples_per_instance
    trace = TrainingTrace()
    best = -math.inf
    evals = 0
    for it in range(config.iterations):
        T = schedule_temperature(config.schedule, it)
        batch = [sample_instance(spec, rng) for _ in range(config.batch_size)]
        A = np.repeat(np.stack([d.alpha for d in batch]), s, axis=0)
        Z = rng.standard_normal((A.shape[0], onet.noise_dim))
        current = onet.with_weights(w)
        mean_u = pathwise_objective(current, A, Z, T)
        w = w + config.learning_rate * pathwise_gradient(current, A, Z, T)
        evals += A.shape[0]
        best = max(best, mean_u)
        trace.add(it, best, mean_u, T, evals)
    return onet.with_weights(w), trace


def train(spec, config, rng, dataset=None):
    """Dispatch on ``config.route``."""
    if config.route == "population":
        return train_population(spec, config, rng)
    if config.route == "pathwise":
        return train_pathwise(spec, config, rng)
    if dataset is None:
        dataset = build_inverse_dataset(spec, config.dataset_size, rng)
    return train_supervised_inverse(spec, config, dataset, rng)
