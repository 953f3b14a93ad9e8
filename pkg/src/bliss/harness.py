"""Experiment orchestration: warm-start A/B runs, generalization on held-out
instances, and report persistence.

Instances are identified by seed (``instance_from_seed``). Test seeds start at
``TEST_SEED_START`` so they never collide with training seeds, which are taken
from ``[0, TEST_SEED_START)``.
"""

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .baselines import (EvaluationCounter, SearchBudget, hill_climb, oracle_utility,
                        random_candidate, random_search, simulated_annealing)
from .core_math import child_rng
from .option_net import SampleConfig, best_of_k
from .problem_families import FamilySpec, instance_from_seed, oracle_supported
from .trainers import TemperatureSchedule

REPORT_FORMAT_VERSION = 1
TEST_SEED_START = 1_000_000
BASELINES = ("hill_climb", "simulated_annealing")


class ReportError(ValueError):
    pass


class ReportFormatError(ReportError):
    pass


class ReportVersionError(ReportError):
    pass


class AggregateMismatchError(ReportError):
    pass


class PlanError(ValueError):
    pass


@dataclass
class ExperimentPlan:
    family: str
    dimension: int
    baseline: str = "hill_climb"
    budget: int = 2000
    target_gap: float = 0.01
    train_seeds: tuple = (0, 0)  # half-open range used to train the option net
    test_count: int = 100
    test_seed_start: int = TEST_SEED_START
    seed: int = 0
    temperature: float = 0.0
    k: int = 8
    anneal: dict = field(default_factory=lambda: {"kind": "exponential", "t0": 1.0,
                                                  "gamma": 0.995})
    workers: int = 1

    def __post_init__(self):
        self.train_seeds = tuple(int(s) for s in self.train_seeds)
        if self.baseline not in BASELINES:
            raise PlanError(f"unknown baseline {self.baseline!r}")
        if self.k < 1 or self.budget < self.k + 1:
            raise PlanError("budget must exceed k (the warm arm pays for its samples)")
        lo, hi = self.train_seeds
        test_hi = self.test_seed_start + self.test_count
        if lo < test_hi and self.test_seed_start < hi:
            raise PlanError("training and test instance seeds overlap")

    @property
    def spec(self):
        return FamilySpec(self.family, self.dimension)

    @property
    def test_seeds(self):
        return list(range(self.test_seed_start, self.test_seed_start + self.test_count))

    def to_dict(self):
        d = asdict(self)
        d["train_seeds"] = list(self.train_seeds)
        return d


@dataclass
class RunReport:
    kind: str
    records: list
    config: dict
    aggregates: dict = None
    format_version: int = REPORT_FORMAT_VERSION

    def __post_init__(self):
        if self.aggregates is None:
            self.aggregates = compute_aggregates(self.kind, self.records)

    def to_dict(self):
        return {"format_version": self.format_version, "kind": self.kind,
                "config": self.config, "records": self.records,
                "aggregates": self.aggregates}

    def __eq__(self, other):
        return isinstance(other, RunReport) and self.to_dict() == other.to_dict()


# --------------------------------------------------------------------------
# aggregates
# --------------------------------------------------------------------------

def _median(values):
    return float(np.median(values)) if len(values) else None


def _mean(values):
    return float(np.mean(values)) if len(values) else None


def _to_target(rec, key):
    """Evaluations-to-target, with misses counted as budget + 1."""
    v = rec[key]
    return rec["budget"] + 1 if v is None else v


def compute_aggregates(kind, records):
    if kind == "warmstart":
        cold_u = [r["cold_best_utility"] for r in records]
        warm_u = [r["warm_best_utility"] for r in records]
        has_oracle = [r for r in records if r["oracle_utility"] is not None]
        cold_t = [_to_target(r, "cold_evaluations_to_target") for r in has_oracle]
        warm_t = [_to_target(r, "warm_evaluations_to_target") for r in has_oracle]
        return {
            "count": len(records),
            "median_cold_best_utility": _median(cold_u),
            "median_warm_best_utility": _median(warm_u),
            "mean_cold_best_utility": _mean(cold_u),
            "mean_warm_best_utility": _mean(warm_u),
            "median_cold_evaluations_to_target": _median(cold_t),
            "median_warm_evaluations_to_target": _median(warm_t),
            "cold_reached": sum(r["cold_evaluations_to_target"] is not None for r in has_oracle),
            "warm_reached": sum(r["warm_evaluations_to_target"] is not None for r in has_oracle),
            # a win is reaching the target in strictly fewer evaluations
            "warm_win_rate": _mean([float(w < c) for c, w in zip(cold_t, warm_t)]),
            "warm_loss_rate": _mean([float(w > c) for c, w in zip(cold_t, warm_t)]),
        }
    if kind == "generalization":
        utils = [r["utility"] for r in records]
        gaps = [r["gap"] for r in records if r["gap"] is not None]
        return {"count": len(records), "median_utility": _median(utils),
                "mean_utility": _mean(utils), "median_gap": _median(gaps),
                "mean_gap": _mean(gaps)}
    raise ReportFormatError(f"unknown report kind {kind!r}")


# --------------------------------------------------------------------------
# experiments
# --------------------------------------------------------------------------

def _map_ordered(fn, items, workers):
    """Map in index order; results are assembled by index whatever the
    worker count, so reports do not depend on scheduling."""
    if workers <= 1:
        return [fn(i, x) for i, x in enumerate(items)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, i, x) for i, x in enumerate(items)]
        return [f.result() for f in futures]


def _run_baseline(plan, desc, start, counter, rng, start_utility=None):
    if plan.baseline == "hill_climb":
        return hill_climb(desc, start, counter.budget, rng, counter, start_utility)
    return simulated_annealing(desc, start, counter.budget, TemperatureSchedule(**plan.anneal),
                               rng, counter, start_utility)


def _check_onet(onet, spec):
    if onet.family != spec.family or onet.alpha_dim != spec.alpha_dim \
            or onet.output_dim != spec.dimension:
        raise PlanError(f"option net ({onet.family}, alpha {onet.alpha_dim}, out "
                        f"{onet.output_dim}) does not match {spec.family} d={spec.dimension}")
    if onet.refinement_mode:
        raise PlanError("warm starts need a plain (non-refinement) option net")


def warm_start_experiment(plan, onet):
    """Cold vs warm runs of the plan's baseline on each test instance.

    Both arms get the same evaluation budget and run until it is spent; the
    warm arm first pays ``k`` evaluations for best-of-k sampling. Stopping at
    the target is disabled so the totals match exactly; evaluations-to-target
    is read off each arm's curve.
    """
    spec = plan.spec
    _check_onet(onet, spec)
    budget = SearchBudget(plan.budget, plan.target_gap, stop_at_target=False)

    def one(i, seed):
        desc = instance_from_seed(spec, seed)
        oracle_u = oracle_utility(desc) if oracle_supported(desc) else None
        cold_rng = child_rng(plan.seed, 2 * i)
        warm_rng = child_rng(plan.seed, 2 * i + 1)

        cold = EvaluationCounter(desc, budget)
        cold_res = _run_baseline(plan, desc, random_candidate(desc, cold_rng), cold, cold_rng)

        warm = EvaluationCounter(desc, budget)
        start, start_u = best_of_k(onet, desc, plan.temperature, plan.k, warm_rng)
        warm.charge(plan.k, start, start_u)
        warm_res = _run_baseline(plan, desc, start, warm, warm_rng, start_u)

        if cold_res.evaluations_used != warm_res.evaluations_used:
            raise AssertionError(f"budget mismatch on instance {seed}")
        return {
            "instance_seed": seed,
            "budget": plan.budget,
            "cold_best_utility": cold_res.best_utility,
            "warm_best_utility": warm_res.best_utility,
            "warm_start_utility": float(start_u),
            "cold_evaluations_used": cold_res.evaluations_used,
            "warm_evaluations_used": warm_res.evaluations_used,
            "cold_evaluations_to_target": cold_res.evaluations_to_target,
            "warm_evaluations_to_target": warm_res.evaluations_to_target,
            "oracle_utility": oracle_u,
        }

    records = _map_ordered(one, plan.test_seeds, plan.workers)
    train = set(range(*plan.train_seeds))
    if any(r["instance_seed"] in train for r in records):
        raise PlanError("test instance seed collides with a training seed")
    return RunReport("warmstart", records, plan.to_dict())


def generalization_eval(onet, spec, test_count, sampling, seed, test_seed_start=TEST_SEED_START,
                        workers=1, with_random_baseline=True):
    """best-of-k utility and optimality gap on held-out instances.

    With ``with_random_baseline`` each record also carries the best of ``k``
    uniform random candidates on the same instance (matched budget).
    """
    if isinstance(sampling, dict):
        sampling = SampleConfig(**sampling)
    _check_onet(onet, spec)
    seeds = list(range(test_seed_start, test_seed_start + test_count))

    def one(i, s):
        desc = instance_from_seed(spec, s)
        rng = child_rng(seed, 2 * i)
        _, util = best_of_k(onet, desc, sampling.temperature, sampling.k, rng)
        oracle_u = oracle_utility(desc) if oracle_supported(desc) else None
        rec = {"instance_seed": s, "utility": float(util), "oracle_utility": oracle_u,
               "gap": None if oracle_u is None else max(0.0, oracle_u - util)}
        if with_random_baseline:
            rs = random_search(desc, SearchBudget(sampling.k), child_rng(seed, 2 * i + 1))
            rec["random_utility"] = rs.best_utility
            rec["random_gap"] = None if oracle_u is None else max(0.0, oracle_u - rs.best_utility)
        return rec

    records = _map_ordered(one, seeds, workers)
    config = {"family": spec.family, "dimension": spec.dimension, "test_count": test_count,
              "test_seed_start": test_seed_start, "seed": seed, "temperature": sampling.temperature,
              "k": sampling.k}
    return RunReport("generalization", records, config)


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

def _same(a, b):
    if a is None or b is None:
        return a is b
    if isinstance(a, float) or isinstance(b, float):
        return math.isclose(a, b, rel_tol=1e-12, abs_tol=1e-12)
    return a == b


def save_report(report, path):
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=1, allow_nan=False)
        fh.write("\n")


def load_report(path):
    try:
        with open(path) as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ReportFormatError(f"cannot read report {path}: {exc}") from exc
    if not isinstance(d, dict):
        raise ReportFormatError("report must be a JSON object")
    if d.get("format_version") != REPORT_FORMAT_VERSION:
        raise ReportVersionError(f"unsupported report format_version {d.get('format_version')!r}")
    try:
        kind, records, config, stored = d["kind"], d["records"], d["config"], d["aggregates"]
        fresh = compute_aggregates(kind, records)
    except (KeyError, TypeError) as exc:
        raise ReportFormatError(f"malformed report: {exc}") from exc
    if set(fresh) != set(stored) or not all(_same(fresh[k], stored[k]) for k in fresh):
        raise AggregateMismatchError("stored aggregates do not match the records")
    return RunReport(kind, records, config, stored, d["format_version"])


def write_summary_csv(report, path):
    """One row per instance, columns as in the records."""
    if not report.records:
        cols = []
    else:
        cols = list(report.records[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in report.records:
            w.writerow(["" if r[c] is None else (repr(r[c]) if isinstance(r[c], float) else r[c])
                        for c in cols])
