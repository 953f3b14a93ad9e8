"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 config/validation error, 3 runtime
failure. Every run writes ``manifest.json`` with the resolved config into the
output directory; it is the only file carrying a timestamp.
"""

import argparse
import datetime
import json
import logging
import os
import sys

from . import __version__
from .core_math import child_rng, make_rng, random_gradcheck_suite
from .harness import (ExperimentPlan, PlanError, generalization_eval, save_report,
                      warm_start_experiment, write_summary_csv)
from .option_net import SampleConfig, load_option_net, save_option_net
from .problem_families import (FamilySpec, evaluate, instance_from_seed, load_instances,
                               oracle_with_count, sample_instance, save_instances)
from .trainers import (TrainerConfig, inverse_dataset_from_instances, train_pathwise,
                       train_population, train_supervised_inverse)

log = logging.getLogger("bliss")

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p):
    p.add_argument("--config", metavar="PATH", help="JSON config; flags override its values")
    p.add_argument("--seed", type=int, metavar="U64")
    p.add_argument("--out", metavar="DIR", help="output directory (default: out)")
    p.add_argument("--workers", type=int, metavar="N")
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None,
                   help="index-ordered reductions (default on)")


def build_parser():
    parser = _Parser(prog="bliss", description="Option-net training and evaluation")
    parser.add_argument("--version", action="version", version=f"bliss {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-instances", help="sample instance descriptors")
    _common(p)
    p.add_argument("--family")
    p.add_argument("--dim", type=int)
    p.add_argument("--count", type=int)

    p = sub.add_parser("oracle", help="exact optima for an instance file")
    _common(p)
    p.add_argument("--instances", metavar="PATH")

    p = sub.add_parser("train", help="train an option net (route from config)")
    _common(p)
    p.add_argument("--family")
    p.add_argument("--dim", type=int)
    p.add_argument("--route", choices=("population", "supervised_inverse", "pathwise"))
    p.add_argument("--iterations", type=int)

    p = sub.add_parser("eval", help="held-out generalization of a trained option net")
    _common(p)
    p.add_argument("--model", metavar="PATH")
    p.add_argument("--test-count", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("-k", type=int)

    p = sub.add_parser("warmstart", help="cold vs warm-started baseline search")
    _common(p)
    p.add_argument("--model", metavar="PATH")
    p.add_argument("--baseline", choices=("hill_climb", "simulated_annealing"))
    p.add_argument("--budget", type=int)
    p.add_argument("--eps", type=float, dest="target_gap")
    p.add_argument("--test-count", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("-k", type=int)

    p = sub.add_parser("gradcheck", help="finite-difference check of backpropagation")
    _common(p)
    p.add_argument("--count", type=int)
    p.add_argument("--tolerance", type=float)
    return parser


DEFAULTS = {
    "gen-instances": {"family": "tsp", "dim": 7, "count": 10},
    "oracle": {"instances": None},
    "train": {"family": "quadratic_bowl", "dim": 2, "trainer": {}},
    "eval": {"model": None, "test_count": 100, "temperature": 0.0, "k": 8,
             "test_seed_start": 1_000_000},
    "warmstart": {"model": None, "baseline": "hill_climb", "budget": 2000, "target_gap": 0.01,
                  "test_count": 100, "temperature": 0.0, "k": 8, "test_seed_start": 1_000_000,
                  "train_seeds": [0, 0]},
    "gradcheck": {"count": 100, "tolerance": 1e-3},
}
COMMON = {"seed": 0, "out": "out", "workers": 1, "deterministic": True}
# flags that land inside the nested trainer config
TRAINER_FLAGS = ("route", "iterations")


def resolve_config(args):
    cfg = dict(COMMON)
    cfg.update(json.loads(json.dumps(DEFAULTS[args.command])))
    if args.config:
        try:
            with open(args.config) as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg.update(file_cfg)
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        if args.command == "train" and key in TRAINER_FLAGS:
            cfg.setdefault("trainer", {})[key] = value
        else:
            cfg[key] = value
    seed = cfg["seed"]
    if not isinstance(seed, int) or seed < 0 or seed >= 2**64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    if int(cfg["workers"]) < 1:
        raise ConfigError("workers must be at least 1")
    if not cfg["deterministic"]:
        log.warning("non-deterministic mode requested; reductions stay index-ordered anyway")
    return cfg


def _dump(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, allow_nan=False)
        fh.write("\n")


def _spec(cfg):
    try:
        return FamilySpec(cfg["family"], int(cfg["dim"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad family/dim: {exc}") from exc


def _load_model(cfg):
    if not cfg.get("model"):
        raise ConfigError("--model is required")
    try:
        return load_option_net(cfg["model"])
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load model {cfg['model']}: {exc}") from exc


# --------------------------------------------------------------------------
# subcommands; each returns the list of files written
# --------------------------------------------------------------------------

def cmd_gen_instances(cfg, out):
    spec = _spec(cfg)
    count = int(cfg["count"])
    if count < 1:
        raise ConfigError("count must be positive")
    instances = [sample_instance(spec, child_rng(cfg["seed"], i)) for i in range(count)]
    save_instances(instances, os.path.join(out, "instances.json"))
    return ["instances.json"]


def cmd_oracle(cfg, out):
    if not cfg.get("instances"):
        raise ConfigError("--instances is required")
    try:
        instances = load_instances(cfg["instances"])
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load instances: {exc}") from exc
    rows = []
    for desc in instances:
        try:
            u, count = oracle_with_count(desc)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        rows.append({"instance": desc.to_dict(), "kind": u.kind, "optimum": u.to_list(),
                     "utility": evaluate(desc, u), "enumerated": count})
    _dump(rows, os.path.join(out, "oracle.json"))
    return ["oracle.json"]


def cmd_train(cfg, out):
    spec = _spec(cfg)
    try:
        tcfg = TrainerConfig.from_dict(dict(cfg.get("trainer", {})))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad trainer config: {exc}") from exc
    rng = make_rng(cfg["seed"])
    train_seeds = [0, 0]
    if tcfg.route == "population":
        onet, trace = train_population(spec, tcfg, rng)
    elif tcfg.route == "pathwise":
        if not spec.continuous:
            raise ConfigError("pathwise training needs a continuous family")
        onet, trace = train_pathwise(spec, tcfg, rng)
    else:
        train_seeds = [0, tcfg.dataset_size]
        instances = [instance_from_seed(spec, s) for s in range(*train_seeds)]
        try:
            dataset = inverse_dataset_from_instances(instances)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        onet, trace = train_supervised_inverse(spec, tcfg, dataset, rng)
    cfg["trainer"] = tcfg.to_dict()
    cfg["train_seeds"] = train_seeds
    save_option_net(onet, os.path.join(out, "option_net.json"), train_seeds=train_seeds)
    trace.write_csv(os.path.join(out, "trace.csv"))
    return ["option_net.json", "trace.csv"]


def cmd_eval(cfg, out):
    onet = _load_model(cfg)
    spec = FamilySpec(onet.family, onet.output_dim)
    try:
        sampling = SampleConfig(float(cfg["temperature"]), int(cfg["k"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    report = generalization_eval(onet, spec, int(cfg["test_count"]), sampling, cfg["seed"],
                                 int(cfg["test_seed_start"]), int(cfg["workers"]))
    save_report(report, os.path.join(out, "report.json"))
    write_summary_csv(report, os.path.join(out, "summary.csv"))
    return ["report.json", "summary.csv"]


def cmd_warmstart(cfg, out):
    onet = _load_model(cfg)
    if cfg["train_seeds"] == [0, 0]:
        with open(cfg["model"]) as fh:
            cfg["train_seeds"] = json.load(fh).get("train_seeds", [0, 0])
    try:
        plan = ExperimentPlan(onet.family, onet.output_dim, cfg["baseline"], int(cfg["budget"]),
                              float(cfg["target_gap"]), tuple(cfg["train_seeds"]),
                              int(cfg["test_count"]), int(cfg["test_seed_start"]), cfg["seed"],
                              float(cfg["temperature"]), int(cfg["k"]),
                              workers=int(cfg["workers"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad warm-start plan: {exc}") from exc
    report = warm_start_experiment(plan, onet)
    save_report(report, os.path.join(out, "report.json"))
    write_summary_csv(report, os.path.join(out, "summary.csv"))
    return ["report.json", "summary.csv"]


def cmd_gradcheck(cfg, out):
    tol = float(cfg["tolerance"])
    if tol <= 0:
        raise ConfigError("tolerance must be positive")
    results = random_gradcheck_suite(cfg["seed"], int(cfg["count"]), tolerance=tol)
    passed = sum(r["passed"] for r in results)
    summary = {"count": len(results), "passed": passed, "tolerance": tol,
               "max_rel_error": max(r["max_rel_error"] for r in results), "nets": results}
    _dump(summary, os.path.join(out, "gradcheck.json"))
    print(f"gradcheck: {passed}/{len(results)} nets pass at tolerance {tol:g} "
          f"(max relative error {summary['max_rel_error']:.3g})")
    if passed != len(results):
        raise RuntimeError(f"{len(results) - passed} nets failed the gradient check")
    return ["gradcheck.json"]


COMMANDS = {"gen-instances": cmd_gen_instances, "oracle": cmd_oracle, "train": cmd_train,
            "eval": cmd_eval, "warmstart": cmd_warmstart, "gradcheck": cmd_gradcheck}


def run_cli(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        cfg = resolve_config(args)
        out = cfg["out"]
        os.makedirs(out, exist_ok=True)
        files = COMMANDS[args.command](cfg, out)
    except (ConfigError, PlanError) as exc:
        print(f"bliss: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 -- mapped to the runtime exit code
        print(f"bliss: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    manifest = {"command": args.command, "argv": argv, "config": cfg, "outputs": files,
                "version": __version__,
                "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat()}
    _dump(manifest, os.path.join(out, "manifest.json"))
    return EXIT_OK


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
