import numpy as np
import pytest

from bliss.core_math import make_rng
from bliss.option_net import decode_permutation, make_option_net
from bliss.problem_families import (FamilySpec, InstanceDescriptor, instance_from_seed,
                                    oracle_optimum, sample_instance)
from bliss.trainers import (TemperatureSchedule, TrainerConfig, TrainingTrace,
                            UnsupportedFamilyError, build_inverse_dataset, fitness,
                            inverse_dataset_from_instances, pathwise_gradient,
                            pathwise_objective, schedule_temperature, supervised_loss,
                            train, train_pathwise, train_population, train_supervised_inverse)

from conftest import unit_square


def identity_net(spec):
    """Single linear layer copying alpha to the output, ignoring noise."""
    onet = make_option_net(spec, hidden=())
    d = spec.dimension
    W = np.hstack([np.eye(d), np.zeros((d, onet.noise_dim))])
    return onet.with_weights(np.concatenate([W.ravel(), np.zeros(d)]))


# ---------------------------------------------------------------- schedules

def test_schedules():
    assert schedule_temperature(TemperatureSchedule.constant(1.0), 17) == 1.0
    assert schedule_temperature(TemperatureSchedule.exponential(2.0, 0.5), 2) == 0.5
    lin = TemperatureSchedule.linear(1.0, 0.0, 10)
    assert schedule_temperature(lin, 5) == 0.5
    assert schedule_temperature(lin, 10) == 0.0
    assert schedule_temperature(lin, 15) == 0.0
    with pytest.raises(ValueError):
        TemperatureSchedule.exponential(1.0, 0.0)
    with pytest.raises(ValueError):
        schedule_temperature(lin, -1)


def test_config_validation_and_round_trip():
    cfg = TrainerConfig(route="pathwise", schedule={"kind": "exponential", "t0": 1.0,
                                                    "gamma": 0.9})
    assert TrainerConfig.from_dict(cfg.to_dict()) == cfg
    for bad in ({"iterations": 0}, {"learning_rate": 0.0}, {"route": "evolve"}):
        with pytest.raises(ValueError):
            TrainerConfig(**bad)
    with pytest.raises(ValueError):
        TrainerConfig.from_dict({"itertions": 3})


# ---------------------------------------------------------------- fitness

def test_fitness_identity_net_is_maximal():
    spec = FamilySpec("quadratic_bowl", 2)
    batch = [sample_instance(spec, make_rng(s)) for s in range(8)]
    assert fitness(identity_net(spec), batch, 0.0, 3, make_rng(0)) == 0.0


def test_fitness_zero_net():
    spec = FamilySpec("quadratic_bowl", 2)
    zero = make_option_net(spec, (4,))
    origin = [InstanceDescriptor("quadratic_bowl", 2, [0.0, 0.0])] * 3
    assert fitness(zero, origin, 0.0, 2, make_rng(0)) == 0.0
    one = [InstanceDescriptor("quadratic_bowl", 2, [1.0, 1.0])]
    assert fitness(zero, one, 0.0, 1, make_rng(0)) == -2.0
    with pytest.raises(ValueError):
        fitness(zero, [], 0.0, 1, make_rng(0))


def test_fitness_tsp_runs():
    spec = FamilySpec("tsp", 5)
    onet = make_option_net(spec, (8,), make_rng(0))
    batch = [instance_from_seed(spec, s) for s in range(3)]
    assert fitness(onet, batch, 1.0, 4, make_rng(0)) < 0


# ---------------------------------------------------------------- population

def test_population_degenerate_coefficients_freeze_weights():
    spec = FamilySpec("quadratic_bowl", 2)
    cfg = TrainerConfig(iterations=10, swarm_size=4, batch_size=4, omega=0.0, c1=0.0, c2=0.0,
                        hidden_sizes=(4,))
    onet, trace = train_population(spec, cfg, make_rng(1))
    best = trace.best_fitness()
    assert np.all(best == best[0])
    means = [r.mean_fitness for r in trace]
    assert np.all(np.array(means) == means[0])


def test_population_trace_monotone_and_accounting():
    spec = FamilySpec("shifted_rastrigin", 2)
    cfg = TrainerConfig(iterations=15, swarm_size=5, batch_size=3, samples_per_instance=2,
                        hidden_sizes=(4,), schedule={"kind": "linear", "t0": 1.0,
                                                     "t_final": 0.1, "horizon": 10})
    _, trace = train_population(spec, cfg, make_rng(2))
    best = trace.best_fitness()
    assert np.all(np.diff(best) >= 0)
    assert [r.evaluations for r in trace] == [5 * 3 * 2 * (i + 1) for i in range(16)]
    assert trace[-1].temperature == pytest.approx(0.1)


def test_population_improves_on_frozen_batch():
    spec = FamilySpec("quadratic_bowl", 2)
    batch = [instance_from_seed(spec, s) for s in range(16)]
    cfg = TrainerConfig(iterations=60, swarm_size=12, batch_size=16, hidden_sizes=(8,))
    onet, trace = train_population(spec, cfg, make_rng(11), batch=batch)
    assert trace[-1].best_fitness > trace[0].best_fitness
    assert fitness(onet, batch, 0.0, 1, make_rng(0)) == pytest.approx(trace[-1].best_fitness)


def test_population_tsp():
    spec = FamilySpec("tsp", 5)
    cfg = TrainerConfig(iterations=5, swarm_size=4, batch_size=2, hidden_sizes=(4,),
                        schedule={"kind": "constant", "t0": 0.5})
    onet, trace = train_population(spec, cfg, make_rng(0))
    assert onet.family == "tsp" and np.all(np.diff(trace.best_fitness()) >= 0)


def test_population_deterministic():
    spec = FamilySpec("quadratic_bowl", 2)
    cfg = TrainerConfig(iterations=5, swarm_size=3, batch_size=2, hidden_sizes=(3,))
    a, ta = train_population(spec, cfg, make_rng(9))
    b, tb = train_population(spec, cfg, make_rng(9))
    assert a.net.weights.tobytes() == b.net.weights.tobytes() and ta == tb


# ---------------------------------------------------------------- supervised inverse

def test_inverse_dataset_targets():
    spec = FamilySpec("quadratic_bowl", 3)
    for desc, target in build_inverse_dataset(spec, 5, make_rng(0)):
        np.testing.assert_array_equal(target, desc.alpha)
    (_, keys), = inverse_dataset_from_instances([unit_square()])
    np.testing.assert_allclose(keys, [0, 0.25, 0.5, 0.75])


def test_inverse_dataset_tsp_decodes_to_optimum():
    spec = FamilySpec("tsp", 6)
    for desc, target in build_inverse_dataset(spec, 10, make_rng(1)):
        assert decode_permutation(target) == oracle_optimum(desc)


def test_supervised_memorizes_single_record():
    spec = FamilySpec("quadratic_bowl", 2)
    desc = instance_from_seed(spec, 0)
    dataset = inverse_dataset_from_instances([desc] * 8)
    cfg = TrainerConfig(route="supervised_inverse", iterations=200, batch_size=4,
                        learning_rate=0.05, hidden_sizes=(8,))
    onet, trace = train_supervised_inverse(spec, cfg, dataset, make_rng(3))
    assert supervised_loss(onet, dataset) < 1e-6
    assert trace[-1].mean_fitness == pytest.approx(-supervised_loss(onet, dataset))


def test_supervised_bowl_generalizes():
    spec = FamilySpec("quadratic_bowl", 2)
    train_set = inverse_dataset_from_instances([instance_from_seed(spec, s) for s in range(500)])
    test_set = [instance_from_seed(spec, 1_000_000 + s) for s in range(100)]
    cfg = TrainerConfig(route="supervised_inverse", iterations=200, batch_size=16,
                        learning_rate=0.05, hidden_sizes=(16,))
    onet, trace = train_supervised_inverse(spec, cfg, train_set, make_rng(7))
    untrained = make_option_net(spec, (16,), make_rng(7))

    def err(o):
        A = np.stack([d.alpha for d in test_set])
        from bliss.core_math import net_forward
        pred = net_forward(o.net, np.hstack([A, np.zeros_like(A)]))
        return np.mean(np.linalg.norm(pred - A, axis=1))

    assert err(onet) < 0.2
    assert err(untrained) > 1.0
    assert trace[-1].mean_fitness >= trace[0].mean_fitness
    assert [r.evaluations for r in trace] == [500 * (i + 1) for i in range(200)]


# ---------------------------------------------------------------- pathwise

def test_pathwise_stationary_at_optimum_reproducer():
    spec = FamilySpec("quadratic_bowl", 3)
    onet = identity_net(spec)
    A = np.stack([instance_from_seed(spec, s).alpha for s in range(5)])
    Z = make_rng(0).standard_normal((5, onet.noise_dim))
    assert not pathwise_gradient(onet, A, Z, 1.0).any()


@pytest.mark.parametrize("config", range(20))
def test_pathwise_gradient_matches_finite_differences(config):
    r = make_rng(500 + config)
    family = ("quadratic_bowl", "shifted_rastrigin")[config % 2]
    spec = FamilySpec(family, int(r.integers(1, 4)))
    onet = make_option_net(spec, (int(r.integers(2, 6)),), r)
    n = int(r.integers(1, 5))
    A = np.stack([sample_instance(spec, r).alpha for _ in range(n)])
    Z = r.standard_normal((n, onet.noise_dim))
    T = float(r.uniform(0, 2))
    grad = pathwise_gradient(onet, A, Z, T)
    w0 = onet.net.weights
    num = np.empty_like(w0)
    h = 1e-5
    for j in range(w0.size):
        wp, wm = w0.copy(), w0.copy()
        wp[j] += h
        wm[j] -= h
        num[j] = (pathwise_objective(onet.with_weights(wp), A, Z, T)
                  - pathwise_objective(onet.with_weights(wm), A, Z, T)) / (2 * h)
    rel = np.abs(grad - num) / np.maximum(1.0, np.maximum(np.abs(grad), np.abs(num)))
    assert rel.max() <= 1e-3


def test_pathwise_improves_bowl():
    spec = FamilySpec("quadratic_bowl", 3)
    cfg = TrainerConfig(route="pathwise", iterations=400, batch_size=16, learning_rate=0.05,
                        hidden_sizes=(16,), schedule={"kind": "exponential", "t0": 0.5,
                                                      "gamma": 0.99})
    onet, trace = train_pathwise(spec, cfg, make_rng(4))
    eval_batch = [instance_from_seed(spec, 1_000_000 + s) for s in range(50)]
    start = make_option_net(spec, (16,), make_rng(4))
    assert fitness(onet, eval_batch, 0.0, 1, make_rng(0)) > \
        fitness(start, eval_batch, 0.0, 1, make_rng(0))
    assert [r.evaluations for r in trace][:3] == [16, 32, 48]


def test_pathwise_rejects_tsp():
    with pytest.raises(UnsupportedFamilyError):
        train_pathwise(FamilySpec("tsp", 5), TrainerConfig(route="pathwise"), make_rng(0))


def test_train_dispatch_deterministic():
    spec = FamilySpec("quadratic_bowl", 2)
    cfg = TrainerConfig(route="supervised_inverse", iterations=3, dataset_size=20)
    a, _ = train(spec, cfg, make_rng(1))
    b, _ = train(spec, cfg, make_rng(1))
    assert a.net.weights.tobytes() == b.net.weights.tobytes()


def test_trace_csv_round_trip(tmp_path):
    spec = FamilySpec("quadratic_bowl", 2)
    _, trace = train_pathwise(spec, TrainerConfig(route="pathwise", iterations=5), make_rng(0))
    path = tmp_path / "t.csv"
    trace.write_csv(path)
    assert path.read_text().splitlines()[0] == \
        "iteration,best_fitness,mean_fitness,temperature,evaluations"
    assert TrainingTrace.read_csv(path) == trace


def test_trace_rejects_non_increasing_evaluations():
    t = TrainingTrace()
    t.add(0, 0.0, 0.0, 0.0, 5)
    with pytest.raises(ValueError):
        t.add(1, 0.0, 0.0, 0.0, 5)
