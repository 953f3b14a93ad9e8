"""Classical searchers: random search, hill climbing, simulated annealing,
particle swarm on u directly, and exhaustive enumeration.

Every searcher routes its utility calls through an ``EvaluationCounter`` so the
budget is enforced in one place. Searchers stop when the budget is spent or,
when the budget carries a target gap and the optimum is known, once the
incumbent is within the gap.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .problem_families import (continuous, evaluate, oracle_optimum, oracle_supported,
                               oracle_with_count, permutation, two_opt_move)
from .trainers import TemperatureSchedule, schedule_temperature

HILL_SIGMA = 0.1
PSO_OMEGA = 0.72
PSO_C1 = 1.49
PSO_C2 = 1.49


class UnsupportedFamilyError(ValueError):
    pass


class BudgetExhausted(Exception):
    pass


@dataclass(frozen=True)
class SearchBudget:
    max_evaluations: int
    target_gap: float = None
    stop_at_target: bool = True

    def __post_init__(self):
        if self.max_evaluations < 1:
            raise ValueError("max_evaluations must be at least 1")
        if self.target_gap is not None and self.target_gap < 0:
            raise ValueError("target_gap must be nonnegative")


@dataclass
class SearchResult:
    best: object
    best_utility: float
    evaluations_used: int
    reached_target: bool
    curve: list = field(default_factory=list)  # (evaluations, best utility)
    evaluations_to_target: int = None

    def to_dict(self):
        return {"best": self.best.to_list(), "kind": self.best.kind,
                "best_utility": self.best_utility, "evaluations_used": self.evaluations_used,
                "reached_target": self.reached_target,
                "evaluations_to_target": self.evaluations_to_target,
                "curve": [[int(e), float(u)] for e, u in self.curve]}

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    def write_curve_csv(self, path):
        with open(path, "w") as fh:
            fh.write("evaluations,best_utility\n")
            for e, u in self.curve:
                fh.write(f"{int(e)},{float(u)!r}\n")


_ORACLE_CACHE = {}


def oracle_utility(desc):
    if desc not in _ORACLE_CACHE:
        if len(_ORACLE_CACHE) > 256:
            _ORACLE_CACHE.clear()
        _ORACLE_CACHE[desc] = evaluate(desc, oracle_optimum(desc))
    return _ORACLE_CACHE[desc]


class EvaluationCounter:
    """Owns the evaluation count, the incumbent and the best-so-far curve."""

    def __init__(self, desc, budget, target_utility=None):
        self.desc = desc
        self.budget = budget
        if target_utility is None and budget.target_gap is not None and oracle_supported(desc):
            target_utility = oracle_utility(desc) - budget.target_gap
        self.target = target_utility
        self.evaluations = 0
        self.best = None
        self.best_utility = -math.inf
        self.curve = []
        self.evaluations_to_target = None

    @property
    def remaining(self):
        return self.budget.max_evaluations - self.evaluations

    @property
    def reached_target(self):
        return self.evaluations_to_target is not None

    @property
    def done(self):
        return self.remaining <= 0 or (self.reached_target and self.budget.stop_at_target)

    def evaluate(self, u):
        if self.remaining <= 0:
            raise BudgetExhausted
        util = evaluate(self.desc, u)
        self._record(u, util, 1)
        return util

    def charge(self, count, u, util):
        """Account for ``count`` evaluations done elsewhere that produced
        best candidate ``u`` with utility ``util``."""
        if count > self.remaining:
            raise BudgetExhausted
        self._record(u, util, count)

    def _record(self, u, util, count):
        self.evaluations += count
        if util > self.best_utility:
            self.best, self.best_utility = u, util
        if self.curve and self.curve[-1][1] >= self.best_utility:
            self.curve.append((self.evaluations, self.curve[-1][1]))
        else:
            self.curve.append((self.evaluations, self.best_utility))
        if (self.evaluations_to_target is None and self.target is not None
                and self.best_utility >= self.target):
            self.evaluations_to_target = self.evaluations

    def result(self):
        return SearchResult(self.best, float(self.best_utility), self.evaluations,
                            self.reached_target, list(self.curve), self.evaluations_to_target)


# --------------------------------------------------------------------------
# proposals
# --------------------------------------------------------------------------

def random_candidate(desc, rng, box=(-5.0, 5.0)):
    if desc.family == "tsp":
        return permutation(rng.permutation(desc.dimension))
    return continuous(rng.uniform(box[0], box[1], size=desc.dimension))


def neighbor(desc, u, rng, box=(-5.0, 5.0), sigma=HILL_SIGMA):
    """Gaussian step on one random coordinate, or a random 2-opt move."""
    if desc.family == "tsp":
        n = desc.dimension
        if n < 3:
            return u
        i, j = sorted(rng.choice(n, size=2, replace=False))
        return permutation(two_opt_move(u.values, i, j))
    v = np.array(u.values, dtype=float)
    i = int(rng.integers(desc.dimension))
    v[i] = np.clip(v[i] + sigma * rng.standard_normal(), box[0], box[1])
    return continuous(v)


def _start(counter, start, start_utility):
    if start_utility is None:
        start_utility = counter.evaluate(start)
    elif counter.best is None or start_utility > counter.best_utility:
        counter.best, counter.best_utility = start, start_utility
    return start_utility


# --------------------------------------------------------------------------
# searchers
# --------------------------------------------------------------------------

def random_search(desc, budget, rng, counter=None):
    counter = counter or EvaluationCounter(desc, budget)
    while not counter.done:
        counter.evaluate(random_candidate(desc, rng))
    return counter.result()


def hill_climb(desc, start, budget, rng, counter=None, start_utility=None):
    """First-improvement local search; only strictly better moves are kept.

    ``start_utility`` skips evaluating the start (its cost already charged to
    ``counter``).
    """
    counter = counter or EvaluationCounter(desc, budget)
    cur, cur_u = start, _start(counter, start, start_utility)
    while not counter.done:
        cand = neighbor(desc, cur, rng)
        util = counter.evaluate(cand)
        if util > cur_u:
            cur, cur_u = cand, util
    return counter.result()


def metropolis_accept(delta_u, T, rng):
    if delta_u > 0:
        return True
    if T <= 0:
        return False
    if delta_u == 0:
        return True
    return rng.random() < math.exp(delta_u / T)


def simulated_annealing(desc, start, budget, schedule, rng, counter=None, start_utility=None):
    """Metropolis search; temperature index is the number of proposals made."""
    if isinstance(schedule, dict):
        schedule = TemperatureSchedule(**schedule)
    counter = counter or EvaluationCounter(desc, budget)
    cur, cur_u = start, _start(counter, start, start_utility)
    step = 0
    while not counter.done:
        cand = neighbor(desc, cur, rng)
        util = counter.evaluate(cand)
        if metropolis_accept(util - cur_u, schedule_temperature(schedule, step), rng):
            cur, cur_u = cand, util
        step += 1
    return counter.result()


def particle_swarm_direct(desc, budget, swarm_size, rng, omega=PSO_OMEGA, c1=PSO_C1,
                          c2=PSO_C2, box=(-5.0, 5.0), counter=None):
    """Canonical PSO on u; positions clipped to the box."""
    if desc.family == "tsp":
        raise UnsupportedFamilyError("particle swarm on u needs a continuous family")
    counter = counter or EvaluationCounter(desc, budget)
    d = desc.dimension
    lo, hi = box
    X = rng.uniform(lo, hi, size=(swarm_size, d))
    V = rng.uniform(-(hi - lo), hi - lo, size=(swarm_size, d)) * 0.1
    P = X.copy()
    pf = np.full(swarm_size, -math.inf)
    g, gf = None, -math.inf

    def sweep():
        nonlocal g, gf
        for i in range(swarm_size):
            if counter.done:
                return False
            f = counter.evaluate(continuous(X[i]))
            if f > pf[i]:
                P[i], pf[i] = X[i], f
                if f > gf:
                    g, gf = X[i].copy(), f
        return True

    while sweep() and not counter.done:
        r1 = rng.random(X.shape)
        r2 = rng.random(X.shape)
        V[:] = omega * V + c1 * r1 * (P - X) + c2 * r2 * (g - X)
        X[:] = np.clip(X + V, lo, hi)
    return counter.result()


def brute_force(desc):
    """Exact optimum; evaluations_used is the number of candidates enumerated."""
    u, count = oracle_with_count(desc)
    util = evaluate(desc, u)
    return SearchResult(u, util, count, True, [(count, util)], count)
