"""Conley pairs: axioms, disk geometry, relative homology, leaf decay."""

import numpy as np
import pytest

from morseflow.conley import (
    ConleyParams,
    build_conley_pair,
    conley_pair_homology,
    du_sphere_samples,
    leaf_convergence_probe,
    sample_disks,
    verify_axioms,
)
from morseflow.critical import find_critical_points
from morseflow.errors import ConfigurationError
from morseflow.semiflow import backward_flow_unstable
from morseflow.systems import make_system


@pytest.fixture(scope="module")
def torus_setup():
    sys_ = make_system("torus2")
    reg = find_critical_points(sys_)
    pairs = {c.id: build_conley_pair(sys_, c, reg) for c in reg.points}
    return sys_, reg, pairs


@pytest.fixture(scope="module")
def sphere_setup():
    sys_ = make_system("sphere2")
    reg = find_critical_points(sys_)
    pairs = {c.id: build_conley_pair(sys_, c, reg) for c in reg.points}
    return sys_, reg, pairs


def test_x_in_N_minus_L(torus_setup):
    sys_, reg, pairs = torus_setup
    for c in reg.points:
        pair = pairs[c.id]
        assert pair.N.contains(c.location[None])[0]
        assert not pair.L.contains(c.location[None])[0]


def test_minimum_has_empty_exit_set(torus_setup):
    sys_, reg, pairs = torus_setup
    mn = reg.of_index(0)[0]
    pair = pairs[mn.id]
    rng = np.random.default_rng(0)
    X = sys_.random_points(rng, 400)
    assert not pair.L.contains(X).any()
    # N is the sublevel component: every N-point has value < c + eps
    inside = X[pair.N.contains(X)]
    if len(inside):
        assert np.all(sys_.objective(inside) < mn.value + pair.params.epsilon)


def test_axioms_all_points(torus_setup):
    sys_, reg, pairs = torus_setup
    for c in reg.points:
        rep = verify_axioms(sys_, pairs[c.id], reg, n_samples=150, seed=3)
        assert rep.ok, (c.id, rep.violations)


def test_axioms_sphere(sphere_setup):
    sys_, reg, pairs = sphere_setup
    for c in reg.points:
        rep = verify_axioms(sys_, pairs[c.id], reg, n_samples=100, seed=4)
        assert rep.ok, (c.id, rep.violations)


def test_pair_homology_concentrated_in_index(torus_setup):
    sys_, reg, pairs = torus_setup
    for c in reg.points:
        ranks, _ = conley_pair_homology(
            sys_, pairs[c.id], reg, grid_n=64, refine_check=False
        )
        for ell, (betti, torsion) in enumerate(ranks):
            assert betti == (1 if ell == c.index else 0), (c.id, ranks)
            assert torsion == ()


def test_pair_homology_sphere(sphere_setup):
    sys_, reg, pairs = sphere_setup
    for c in reg.points:
        ranks, _ = conley_pair_homology(
            sys_, pairs[c.id], reg, grid_n=64, refine_check=False
        )
        for ell, (betti, torsion) in enumerate(ranks):
            assert betti == (1 if ell == c.index else 0), (c.id, ranks)


def test_too_coarse_parameters_rejected(torus_setup):
    sys_, reg, pairs = torus_setup
    sad = reg.of_index(1)[0]
    gap = 0.4
    with pytest.raises(ConfigurationError):
        build_conley_pair(
            sys_, sad, reg, params=ConleyParams(epsilon=3 * gap, tau=1e-3, crit=sad.id)
        )


def test_nesting_in_epsilon_and_tau(torus_setup):
    sys_, reg, pairs = torus_setup
    sad = reg.of_index(1)[1]
    eps, tau = 0.1, 4.0 / sad.spectral_gap
    big = build_conley_pair(sys_, sad, reg, params=ConleyParams(eps, tau, sad.id))
    small_eps = build_conley_pair(sys_, sad, reg, params=ConleyParams(0.5 * eps, tau, sad.id))
    large_tau = build_conley_pair(sys_, sad, reg, params=ConleyParams(eps, 1.5 * tau, sad.id))
    rng = np.random.default_rng(7)
    U = rng.uniform(-1, 1, size=(1000, 2)) * (1.2 * big.n_extent)
    X = sys_.retract_array(sad.location[None] + U @ big.frame)
    in_big = big.N.contains(X)
    assert np.all(~small_eps.N.contains(X) | in_big)  # N^{delta,tau} inside N^{eps,tau}
    assert np.all(~large_tau.N.contains(X) | in_big)  # N^{eps,T} inside N^{eps,tau}


def test_N_cap_unstable_manifold(torus_setup):
    # backward images of descending-sphere points lie in N exactly when the
    # backward time exceeds tau
    sys_, reg, pairs = torus_setup
    sad = reg.of_index(1)[0]
    pair = pairs[sad.id]
    eps, tau = pair.params.epsilon, pair.params.tau
    disks = sample_disks(sys_, sad, eps, n=8, registry=reg)
    for q in disks["descending_sphere"].points:
        inside = backward_flow_unstable(sys_, sad, q, 1.5 * tau)
        outside = backward_flow_unstable(sys_, sad, q, 0.5 * tau)
        assert pair.N.contains(inside[None])[0]
        assert not pair.N.contains(outside[None])[0]


def test_ascending_disk_inside_N(torus_setup):
    sys_, reg, pairs = torus_setup
    sad = reg.of_index(1)[0]
    pair = pairs[sad.id]
    disks = sample_disks(sys_, sad, pair.params.epsilon, n=16, registry=reg)
    asc = disks["ascending_disk"].points
    assert pair.N.contains(asc).all()
    assert np.all(sys_.objective(asc) < sad.value + pair.params.epsilon)


def test_descending_sphere_on_level(sphere_setup):
    sys_, reg, pairs = sphere_setup
    mx = reg.of_index(2)[0]
    eps = pairs[mx.id].params.epsilon
    disks = sample_disks(sys_, mx, eps, n=48, registry=reg)
    sphere = disks["descending_sphere"].points
    assert len(sphere) == 48
    assert np.abs(sys_.objective(sphere) - (mx.value - eps)).max() < 1e-8


def test_index_zero_conventions(torus_setup):
    sys_, reg, pairs = torus_setup
    mn = reg.of_index(0)[0]
    disks = sample_disks(sys_, mn, pairs[mn.id].params.epsilon, n=8, registry=reg)
    assert disks["descending_sphere"].points.shape[0] == 0  # S^{-1} = empty
    assert np.allclose(disks["descending_disk"].points[0], mn.location)


def test_index_one_sphere_is_two_points(torus_setup):
    sys_, reg, pairs = torus_setup
    sad = reg.of_index(1)[0]
    disks = sample_disks(sys_, sad, pairs[sad.id].params.epsilon, n=8, registry=reg)
    assert disks["descending_sphere"].points.shape[0] == 2
    assert np.array_equal(disks["descending_sphere"].sphere_params, [[1.0], [-1.0]])


def test_du_sphere_inside_exit_set(torus_setup):
    sys_, reg, pairs = torus_setup
    for c in reg.points:
        if c.index == 0:
            continue
        pair = pairs[c.id]
        S = du_sphere_samples(sys_, c, pair, n=12)
        assert pair.L.contains(S).all(), c.id


def test_leaf_convergence_decay(torus_setup):
    sys_, reg, pairs = torus_setup
    sad = reg.of_index(1)[1]
    pair = pairs[sad.id]
    disks = sample_disks(sys_, sad, pair.params.epsilon, n=8, registry=reg)
    gamma = disks["descending_sphere"].points[0]
    Ts = pair.params.tau + np.linspace(0.03, 0.13, 5)
    rows = leaf_convergence_probe(sys_, sad, gamma, Ts, pair, reg)
    T = np.array([r[0] for r in rows])
    D = np.log(np.array([r[1] for r in rows]))
    assert np.all(np.diff(D) < 0)  # monotone decay
    A = np.vstack([T, np.ones_like(T)]).T
    coef, res, *_ = np.linalg.lstsq(A, D, rcond=None)
    ss = ((D - D.mean()) ** 2).sum()
    r2 = 1 - res[0] / ss
    assert r2 >= 0.9
    assert -coef[0] >= sad.spectral_gap / 16.0
