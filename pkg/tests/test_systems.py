"""Built-in systems: gradients, Hessian spectra, finite-difference checks."""

import numpy as np
import pytest

from morseflow.systems import (
    BUILTIN_SYSTEMS,
    finite_difference_check,
    gradient,
    hessian_spectrum,
    make_system,
)

TWO_PI = 2 * np.pi


def all_systems():
    return [
        make_system("circle"),
        make_system("sphere2"),
        make_system("sphere2_bump"),
        make_system("torus2"),
        make_system("loopspace", base_dim=1, num_points=8, amplitude=0.4),
    ]


def test_sphere_gradient_vanishes_at_pole():
    sys_ = make_system("sphere2")
    g = gradient(sys_, sys_.point([0.0, 0.0, 1.0]))
    assert np.allclose(g.components, 0.0, atol=1e-12)


def test_circle_gradient_quarter_turn():
    sys_ = make_system("circle")
    g = gradient(sys_, sys_.point([0.25]))
    assert g.components[0] == pytest.approx(-TWO_PI, rel=1e-12)


def test_constant_loop_critical_when_potential_off():
    sys_ = make_system("loopspace", base_dim=1, num_points=8, amplitude=0.0)
    g = gradient(sys_, sys_.point(sys_.constant_loop(0.37)))
    assert np.allclose(g.components, 0.0, atol=1e-12)


def test_constraint_violation_rejected():
    sys_ = make_system("sphere2")
    from morseflow.errors import InvalidPointError

    with pytest.raises(InvalidPointError):
        gradient(sys_, sys_.point([0.0, 0.0, 1.5]))


def test_sphere_hessian_index_two_at_north_pole():
    sys_ = make_system("sphere2")
    spec = hessian_spectrum(sys_, sys_.point([0.0, 0.0, 1.0]))
    vals = [v for v, _ in spec]
    assert len(vals) == 2
    assert all(v < 0 for v in vals)
    assert vals == sorted(vals)


def test_circle_hessian_at_max():
    sys_ = make_system("circle")
    (val, vec), = hessian_spectrum(sys_, sys_.point([0.0]))
    assert val == pytest.approx(-4 * np.pi**2, rel=1e-6)


def test_hessian_eigenframe_orthonormal():
    rng = np.random.default_rng(0)
    for sys_ in all_systems():
        X = sys_.random_points(rng, 1)
        spec = hessian_spectrum(sys_, sys_.point(X[0]))
        vecs = np.array([t.components for _, t in spec])
        G = np.empty((len(vecs), len(vecs)))
        for i in range(len(vecs)):
            for j in range(len(vecs)):
                G[i, j] = sys_.metric_inner(X, vecs[i][None], vecs[j][None])[0]
        assert np.abs(G - np.eye(len(vecs))).max() < 1e-8


def test_finite_difference_all_systems():
    rng = np.random.default_rng(1)
    for sys_ in all_systems():
        X = sys_.random_points(rng, 100)
        worst = max(
            finite_difference_check(sys_, sys_.point(x), h=1e-5) for x in X
        )
        assert worst < 1e-6, sys_.name


def test_retraction_idempotent():
    rng = np.random.default_rng(2)
    for sys_ in all_systems():
        X = sys_.random_points(rng, 20)
        V = rng.normal(size=X.shape) * 0.05
        Y = sys_.retract_array(X + sys_.project_tangent(X, V))
        Z = sys_.retract_array(Y)
        assert np.abs(Y - Z).max() < 1e-10
        assert sys_.constraint_violation(Y).max() < 1e-10


def test_field_jacobian_matches_finite_differences():
    rng = np.random.default_rng(3)
    for sys_ in all_systems():
        X = sys_.random_points(rng, 3)
        J = sys_.field_jacobian(X)
        h = 1e-6
        for i in range(len(X)):
            for d in range(sys_.ambient_dim):
                e = np.zeros(sys_.ambient_dim)
                e[d] = h
                fp = -sys_.gradient_field((X[i] + e)[None])[0]
                fm = -sys_.gradient_field((X[i] - e)[None])[0]
                fd = (fp - fm) / (2 * h)
                assert np.abs(J[i, :, d] - fd).max() < 1e-4 * (1 + np.abs(fd).max()), sys_.name


def test_loop_action_bounded_below():
    sys_ = make_system("loopspace", base_dim=1, num_points=8, amplitude=0.4)
    rng = np.random.default_rng(4)
    X = sys_.random_points(rng, 200)
    assert np.all(sys_.objective(X) >= -0.4 - 1e-12)


def test_loop_action_cyclic_invariance():
    # time-independent potential: cyclic relabeling leaves the action fixed
    sys_ = make_system("loopspace", base_dim=1, num_points=8, amplitude=0.4)
    rng = np.random.default_rng(5)
    X = sys_.random_points(rng, 10)
    S0 = sys_.objective(X)
    for shift in (1, 3):
        Q = X.reshape(len(X), 8, 1)
        S1 = sys_.objective(np.roll(Q, shift, axis=1).reshape(len(X), 8))
        assert np.abs(S0 - S1).max() < 1e-12


def test_discrete_critical_point_equation():
    # second-difference equation at a constant critical loop
    sys_ = make_system("loopspace", base_dim=1, num_points=8, amplitude=0.4)
    q = sys_.constant_loop(0.5)
    g = sys_.euclidean_gradient(q[None])[0]
    assert np.abs(g).max() < 1e-12


def test_winding_class_detection():
    sys_ = make_system("loopspace", base_dim=1, num_points=8, amplitude=0.0, winding=1)
    w = sys_.winding_class(sys_.winding_loop(0.2)[None])
    assert w[0][0] == 1
    sys0 = make_system("loopspace", base_dim=1, num_points=8, amplitude=0.0)
    assert sys0.winding_class(sys0.constant_loop(0.9)[None])[0][0] == 0


def test_builtin_names():
    for name in BUILTIN_SYSTEMS:
        s = make_system(name)
        assert s.dim >= 1
