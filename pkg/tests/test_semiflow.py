"""Semi-flow integration: semigroup, monotonicity, oracles, entrance times."""

import numpy as np
import pytest

from morseflow.semiflow import (
    FlowParams,
    backward_flow_unstable,
    entrance_time,
    entrance_time_batch,
    flow,
    flow_batch,
    metric_grad_norm,
    preimage_oracle,
    record_trajectory,
    sublevel_oracle,
    whole_space,
)
from morseflow.systems import make_system


@pytest.fixture(scope="module")
def circle():
    return make_system("circle")


@pytest.fixture(scope="module")
def torus():
    return make_system("torus2")


@pytest.fixture(scope="module")
def sphere():
    return make_system("sphere2")


def test_critical_point_is_fixed(circle):
    for theta in (0.0, 0.5):
        out = flow(circle, np.array([[theta]]), 3.0)
        assert abs(out[0, 0] - theta) < 1e-9


def test_time_zero_identity(torus):
    rng = np.random.default_rng(0)
    X = torus.random_points(rng, 5)
    Y, _, _ = flow_batch(torus, X, 0.0)
    assert np.array_equal(X, Y)


def test_circle_converges_to_minimum(circle):
    out = flow(circle, np.array([[0.25]]), 5.0)
    assert abs(out[0, 0] - 0.5) < 1e-6


def test_semigroup_property():
    rng = np.random.default_rng(1)
    for name in ("circle", "torus2", "sphere2"):
        sys_ = make_system(name)
        X = sys_.random_points(rng, 100)
        s = rng.uniform(0.0, 0.4, size=100)
        t = rng.uniform(0.0, 0.4, size=100)
        A, _, _ = flow_batch(sys_, X, s)
        A, _, _ = flow_batch(sys_, A, t)
        B, _, _ = flow_batch(sys_, X, s + t)
        assert sys_.distance(A, B).max() < 1e-6, name


def test_objective_monotone_along_trajectories(torus):
    rng = np.random.default_rng(2)
    X = torus.random_points(rng, 10)
    for x in X:
        traj = record_trajectory(torus, x[None], t_end=2.0)
        diffs = np.diff(traj.objective)
        assert diffs.max() <= 1e-9


def test_energy_identity(torus):
    rng = np.random.default_rng(3)
    X = torus.random_points(rng, 10)
    for x in X:
        traj = record_trajectory(torus, x[None], t_end=1.0)
        drop = traj.objective[0] - traj.objective[-1]
        if drop > 1e-6:
            assert abs(drop - traj.dissipation) / drop < 1e-3


def test_loopspace_flow_decreases_action():
    sys_ = make_system("loopspace", base_dim=1, num_points=16, amplitude=0.4)
    rng = np.random.default_rng(4)
    X = sys_.random_points(rng, 4)
    Y, _, _ = flow_batch(sys_, X, 0.3)
    assert np.all(sys_.objective(Y) <= sys_.objective(X) + 1e-9)


def test_preimage_of_everything(torus):
    rng = np.random.default_rng(5)
    A = whole_space()
    P = preimage_oracle(torus, A, 1.0)
    X = torus.random_points(rng, 50)
    assert P.contains(X).all()


def test_preimage_time_zero_identity(torus):
    rng = np.random.default_rng(6)
    A = sublevel_oracle(torus, 0.3)
    P = preimage_oracle(torus, A, 0.0)
    X = torus.random_points(rng, 1000)
    assert np.array_equal(A.contains(X), P.contains(X))


def test_invariant_set_inside_preimage(circle):
    # sublevel sets are semi-flow invariant: A subset of preimage(A, T)
    A = sublevel_oracle(circle, 0.2)
    P = preimage_oracle(circle, A, 2.0)
    rng = np.random.default_rng(7)
    X = circle.random_points(rng, 300)
    inA = A.contains(X)
    assert P.contains(X[inA]).all()


def test_circle_preimage_cross_validated_by_dense_sampling(circle):
    # membership in the preimage of {f < 0.5} agrees with a dense 1-D
    # grid oracle evaluated by direct flow
    A = sublevel_oracle(circle, 0.5)
    P = preimage_oracle(circle, A, 2.0)
    thetas = np.linspace(0.01, 0.99, 197)[:, None]
    direct, _, _ = flow_batch(circle, thetas, 2.0)
    expect = circle.objective(direct) < 0.5
    got = P.contains(thetas)
    assert np.array_equal(got, expect)
    assert P.contains(np.array([[0.3]]))[0]


def test_backward_flow_round_trip(circle):
    # point on the unstable manifold of the maximum theta=0
    q = flow(circle, np.array([[1e-4]]), 0.5)
    crit = type("C", (), {"id": "max"})()
    back = backward_flow_unstable(circle, crit, q, 0.4)
    again, _, _ = flow_batch(circle, np.atleast_2d(back), 0.4)
    assert abs(again[0, 0] - q[0, 0]) < 1e-6


def test_entrance_time_zero_inside(torus):
    A = sublevel_oracle(torus, 1.0)
    p = np.array([[0.5, 0.5]])
    assert entrance_time(torus, A, p) == 0.0


def test_entrance_time_matches_bisection_oracle(circle):
    # crossing level c: flow from theta=0.1 downhill; compare against a
    # bisection on the integrated path
    level = -0.3
    A = sublevel_oracle(circle, level)
    p = np.array([[0.1]])
    t_star = entrance_time(circle, A, p)
    assert np.isfinite(t_star)
    # oracle: bisect total time until objective at endpoint crosses level
    lo, hi = 0.0, 5.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        end, _, _ = flow_batch(circle, p, mid)
        if circle.objective(end)[0] < level:
            hi = mid
        else:
            lo = mid
    assert abs(t_star - hi) < 1e-6


def test_entrance_time_infinite_on_stable_manifold(circle):
    # the maximum never reaches the sublevel set below its own value
    A = sublevel_oracle(circle, 0.5)
    params = FlowParams(max_time=20.0)
    t = entrance_time(circle, A, np.array([[0.0]]), params)
    assert np.isinf(t)


def test_entrance_time_consistency_under_flow(circle):
    # for positively invariant A: T(A, flow_s p) <= max(T(A,p) - s, 0) + tol
    A = sublevel_oracle(circle, -0.2)
    rng = np.random.default_rng(8)
    X = rng.uniform(0.05, 0.45, size=(20, 1))
    t0 = entrance_time_batch(circle, A, X)
    s = 0.15
    Xs, _, _ = flow_batch(circle, X, s)
    t1 = entrance_time_batch(circle, A, Xs)
    assert np.all(t1 <= np.maximum(t0 - s, 0.0) + 1e-6)


def test_grad_norm_metric_consistency():
    sys_ = make_system("loopspace", base_dim=1, num_points=8, amplitude=0.4)
    rng = np.random.default_rng(9)
    X = sys_.random_points(rng, 5)
    # d/ds S(flow_s) = -|grad|^2 in the metric
    h = 1e-6
    Y, _, _ = flow_batch(sys_, X, h)
    lhs = (sys_.objective(Y) - sys_.objective(X)) / h
    rhs = -metric_grad_norm(sys_, X) ** 2
    assert np.abs(lhs - rhs).max() < 1e-3 * np.abs(rhs).max()
