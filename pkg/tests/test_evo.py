import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridform.evo import (
    FunctionProblem, GAConfig, OptimizationError, convergence_report, crowding_distance, dominates,
    environmental_selection, non_dominated_sort, reduction_report, run, variation,
)


def brute_force_fronts(F):
    """Peel fronts by checking every pair directly."""
    remaining = list(range(len(F)))
    fronts = []
    while remaining:
        front = [i for i in remaining
                 if not any(all(F[j][k] <= F[i][k] for k in range(len(F[i])))
                            and any(F[j][k] < F[i][k] for k in range(len(F[i])))
                            for j in remaining if j != i)]
        fronts.append(sorted(front))
        remaining = [i for i in remaining if i not in front]
    return fronts


def two_parabolas(x):
    return np.array([x[0] ** 2, (x[0] - 2) ** 2])


def generational_distance(F):
    x = np.linspace(0, 2, 20001)
    true = np.stack([x ** 2, (x - 2) ** 2], axis=1)
    d = np.sqrt(((F[:, None, :] - true[None]) ** 2).sum(-1)).min(axis=1)
    return d.mean()


def test_dominance_examples():
    assert dominates((1, 1, 1, 1), (2, 2, 2, 2))
    assert not dominates((1, 1, 1, 1), (1, 1, 1, 1))
    assert not dominates((1, 3, 1, 1), (2, 2, 2, 2))
    assert not dominates((2, 2, 2, 2), (1, 3, 1, 1))


def test_sort_examples():
    assert non_dominated_sort(np.ones((5, 4))) == [[0, 1, 2, 3, 4]]
    assert non_dominated_sort([(1, 4), (2, 3), (3, 2), (2, 5)]) == [[0, 1, 2], [3]]
    with pytest.raises(ValueError):
        non_dominated_sort(np.zeros((0, 2)))


def test_sort_matches_brute_force():
    rng = np.random.default_rng(0)
    for trial in range(100):
        n = int(rng.integers(1, 51))
        # coarse integer values force ties and duplicates
        F = rng.integers(0, 5, size=(n, 4)).astype(float) if trial % 2 else rng.random((n, 4))
        fronts = non_dominated_sort(F)
        assert [sorted(f) for f in fronts] == brute_force_fronts(F.tolist())
        for k, front in enumerate(fronts):
            for a in front:
                assert not any(dominates(F[b], F[a]) for b in front)
                if k:
                    assert any(dominates(F[b], F[a]) for b in fronts[k - 1])


def test_crowding_examples():
    assert np.all(np.isinf(crowding_distance([(0, 1), (1, 0)])))
    d = crowding_distance([(0, 2), (1, 1), (2, 0)])
    assert np.isinf(d[0]) and np.isinf(d[2]) and d[1] == pytest.approx(2.0)
    # a flat objective contributes nothing
    d = crowding_distance([(0, 5), (1, 5), (3, 5)])
    assert d[1] == pytest.approx(1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(3, 20), st.integers(0, 2 ** 31))
def test_crowding_permutation_invariant(n, seed):
    rng = np.random.default_rng(seed)
    F = rng.random((n, 3))
    perm = rng.permutation(n)
    np.testing.assert_allclose(crowding_distance(F)[perm], crowding_distance(F[perm]), rtol=1e-12)


def test_environmental_selection_prefers_fronts():
    F = np.array([(1, 4), (2, 3), (3, 2), (2, 5), (4, 4), (0, 9)], float)
    keep = environmental_selection(F, 4)
    assert set(keep) == {0, 1, 2, 5}


def test_variation_identity_without_operators(rng):
    bounds = np.array([[-1, 1], [0, 10], [5, 6]], float)
    P = bounds[:, 0] + rng.random((10, 3)) * (bounds[:, 1] - bounds[:, 0])
    cfg = GAConfig(crossover_prob=0.0, mutation_prob=0.0)
    np.testing.assert_array_equal(variation(P, bounds, cfg, np.random.default_rng(1)), P)


def test_variation_respects_bounds():
    rng = np.random.default_rng(2)
    bounds = np.array([[-3, 5], [0.2, 5], [-1e-3, 1e-3]], float)
    cfg = GAConfig(mutation_prob=1.0)
    lo, hi = bounds[:, 0], bounds[:, 1]
    for _ in range(10_000 // 10):
        P = lo + rng.random((10, 3)) * (hi - lo)
        P[0] = lo
        P[1] = hi
        C = variation(P, bounds, cfg, rng)
        assert np.all(C >= lo) and np.all(C <= hi)


def test_variation_deterministic(rng):
    bounds = np.array([[0, 1]] * 4, float)
    P = rng.random((8, 4))
    a = variation(P, bounds, GAConfig(), np.random.default_rng(5))
    b = variation(P, bounds, GAConfig(), np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, P)


def test_config_validation():
    for bad in ({"population": 5}, {"population": 2}, {"generations": 0}, {"crossover_prob": 1.5}):
        with pytest.raises(ValueError):
            GAConfig(**bad)


@pytest.fixture(scope="module")
def parabola_run():
    prob = FunctionProblem(np.array([[-3.0, 5.0]]), two_parabolas, ("f1", "f2"))
    return run(prob, GAConfig(population=40, generations=60, seed=0))


def test_run_converges_to_true_front(parabola_run):
    h = parabola_run
    assert len(h.records) == 60
    final = h.records[-1]
    front = non_dominated_sort(final.F)[0]
    assert generational_distance(final.F[front]) < 0.05
    assert generational_distance(h.archive_F) < 0.05
    assert np.all((h.archive_X > -0.01) & (h.archive_X < 2.01))


def test_run_history_properties(parabola_run):
    h = parabola_run
    bsf = np.vstack([h.initial.best_so_far, h.best_so_far()])
    assert np.all(np.diff(bsf, axis=0) <= 0)
    for r in h.records:
        assert np.all(r.best_so_far <= r.best)
        for front in non_dominated_sort(r.F):
            for a in front:
                assert not any(dominates(r.F[b], r.F[a]) for b in front)
    assert h.n_evaluations == 40 * 61
    lines = h.history_csv().splitlines()
    assert lines[0] == "generation,best_f1,best_f2" and len(lines) == 61
    assert len(h.population_csv().splitlines()) == 1 + 61 * 40


def test_run_deterministic(parabola_run):
    prob = FunctionProblem(np.array([[-3.0, 5.0]]), two_parabolas, ("f1", "f2"))
    again = run(prob, GAConfig(seed=0))
    assert again.history_csv() == parabola_run.history_csv()
    assert again.population_csv() == parabola_run.population_csv()


def test_infeasible_handling():
    def f(x):
        return np.array([x[0], np.inf if x[0] < 0.5 else 1 - x[0]])
    h = run(FunctionProblem(np.array([[0.0, 1.0]]), f, ("a", "b")), GAConfig(population=8, generations=5))
    assert np.all(np.isfinite(h.archive_F)) and np.all(h.archive_X >= 0.5)
    with pytest.raises(OptimizationError):
        run(FunctionProblem(np.array([[0.0, 1.0]]), lambda x: np.array([np.nan, 1.0]), ("a", "b")),
            GAConfig(population=4, generations=1))


def test_baseline_is_first_individual():
    prob = FunctionProblem(np.array([[-3.0, 5.0]]), two_parabolas, ("f1", "f2"), baseline=np.array([4.0]))
    h = run(prob, GAConfig(population=4, generations=2))
    assert h.initial.X[0, 0] == 4.0
    np.testing.assert_array_equal(h.initial.F[0], two_parabolas([4.0]))


def test_reduction_report():
    r = reduction_report(np.full((5, 2), 3.0), ["a", "b"])
    assert r["a"]["reduction_percent"] == 0 and r["b"]["reduction_percent"] == 0
    r = reduction_report(np.array([[10.0], [9.0], [8.0]]), ["a"])
    assert r["a"] == {"initial": 10.0, "best": 8.0, "reduction_percent": pytest.approx(20.0)}


def test_convergence_report_recomputes(parabola_run):
    h = parabola_run
    rep = convergence_report(h)
    for k, name in enumerate(h.objective_names):
        first = h.initial.F[np.all(np.isfinite(h.initial.F), axis=1), k].min()
        best = min(first, min(r.F[:, k].min() for r in h.records))
        assert rep[name]["initial"] == first
        assert rep[name]["best"] == best
        assert rep[name]["reduction_percent"] == pytest.approx(100 * (first - best) / first)


def test_convergence_report_uses_baseline():
    prob = FunctionProblem(np.array([[-3.0, 5.0]]), two_parabolas, ("f1", "f2"), baseline=np.array([4.0]))
    h = run(prob, GAConfig(population=8, generations=5))
    rep = convergence_report(h)
    assert rep["f1"]["initial"] == 16.0 and rep["f2"]["initial"] == 4.0
    assert rep["f1"]["best"] == h.best_so_far()[-1, 0]


def test_infeasible_baseline_rejected():
    prob = FunctionProblem(np.array([[0.0, 1.0]]), lambda x: np.array([np.inf, 1.0]) if x[0] < 0.5 else x,
                           ("a",), baseline=np.array([0.1]))
    with pytest.raises(OptimizationError):
        run(prob, GAConfig(population=4, generations=1))
