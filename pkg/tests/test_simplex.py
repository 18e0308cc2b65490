import numpy as np

from lcrisk.simplex import nelder_mead, refined_minimize


def quadratic(x):
    return float(np.sum((x - 1.5) ** 2))


def rosenbrock(x):
    return float(100.0 * (x[1] - x[0] ** 2) ** 2 + (1 - x[0]) ** 2)


def test_quadratic_minimum():
    res = nelder_mead(quadratic, np.zeros(4), scale=0.5, max_fev=4000, tol=1e-12)
    assert res.converged
    assert np.max(np.abs(res.x - 1.5)) < 1e-5


def test_rosenbrock():
    res = nelder_mead(rosenbrock, np.array([-1.2, 1.0]), scale=0.5,
                      max_fev=4000, tol=1e-14)
    assert res.fun < 1e-9
    assert np.max(np.abs(res.x - 1.0)) < 1e-3


def test_deterministic():
    a = nelder_mead(rosenbrock, np.array([0.3, -0.7]), max_fev=1500, tol=1e-12)
    b = nelder_mead(rosenbrock, np.array([0.3, -0.7]), max_fev=1500, tol=1e-12)
    assert np.array_equal(a.x, b.x)
    assert a.fun == b.fun and a.nfev == b.nfev


def test_infeasible_region_handled():
    def partial(x):
        if x[0] < 0:
            return float("inf")
        return float((x[0] - 2.0) ** 2 + x[1] ** 2)

    res = nelder_mead(partial, np.array([0.5, 1.0]), max_fev=2000, tol=1e-12)
    assert res.fun < 1e-8


def test_budget_respected():
    calls = []

    def counted(x):
        calls.append(1)
        return quadratic(x)

    res = nelder_mead(counted, np.zeros(6), max_fev=100, tol=0.0)
    assert len(calls) <= 100 + 7   # one final in-flight step may run over


def test_refined_minimize_improves_with_proposals():
    # two symmetric wells; the proposal hops from the shallow to the deep one
    def two_wells(x):
        return float(min(np.sum((x - 2) ** 2) + 1.0, np.sum((x + 2) ** 2)))

    rng = np.random.default_rng(0)
    res = refined_minimize(two_wells, np.array([2.2, 1.8]), rng, max_fev=800,
                           refine_fev=400,
                           proposals=lambda x: [-x])
    assert res.fun < 1e-8
    assert np.max(np.abs(res.x + 2)) < 1e-3


def test_refined_minimize_deterministic_given_rng_seed():
    def f(x):
        return float(np.sum(x ** 2) + 0.1 * np.sum(np.cos(3 * x)))

    res1 = refined_minimize(f, np.ones(3), np.random.default_rng(5),
                            max_fev=600, refine_fev=200)
    res2 = refined_minimize(f, np.ones(3), np.random.default_rng(5),
                            max_fev=600, refine_fev=200)
    assert np.array_equal(res1.x, res2.x)
    assert res1.fun == res2.fun
