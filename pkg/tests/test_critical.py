"""Critical point registries on the built-in systems."""

import numpy as np
import pytest

from morseflow.critical import (
    SearchConfig,
    chain_vector,
    choose_rho,
    find_critical_points,
    orient,
)
from morseflow.semiflow import metric_grad_norm
from morseflow.systems import make_system


@pytest.fixture(scope="module")
def torus_registry():
    sys_ = make_system("torus2")
    return sys_, find_critical_points(sys_)


def test_sphere_two_points():
    sys_ = make_system("sphere2")
    reg = find_critical_points(sys_)
    assert len(reg.points) == 2
    assert sorted(c.index for c in reg.points) == [0, 2]
    assert reg.euler_characteristic() == 2
    south = min(reg.points, key=lambda c: c.value)
    assert np.allclose(south.location, [0, 0, -1], atol=1e-6)


def test_circle_two_points():
    sys_ = make_system("circle")
    reg = find_critical_points(sys_)
    assert len(reg.points) == 2
    assert sorted(c.index for c in reg.points) == [0, 1]
    assert reg.euler_characteristic() == 0


def test_torus_four_points(torus_registry):
    sys_, reg = torus_registry
    assert len(reg.points) == 4
    assert sorted(c.index for c in reg.points) == [0, 1, 1, 2]
    assert reg.euler_characteristic() == 0
    values = sorted(c.value for c in reg.points)
    assert values == pytest.approx([-1.8, -0.2, 0.2, 1.8])


def test_bump_sphere_four_points():
    sys_ = make_system("sphere2_bump")
    reg = find_critical_points(sys_)
    assert len(reg.points) == 4
    assert sorted(c.index for c in reg.points) == [0, 1, 2, 2]
    assert reg.euler_characteristic() == 2


def test_loopspace_two_points_winding_zero():
    sys_ = make_system("loopspace", base_dim=1, num_points=16, amplitude=0.4)
    reg = find_critical_points(sys_, level=1.0, cfg=SearchConfig(n_random=128))
    assert len(reg.points) == 2
    assert sorted(c.index for c in reg.points) == [0, 1]
    vals = sorted(c.value for c in reg.points)
    assert vals == pytest.approx([-0.4, 0.4])
    assert reg.euler_characteristic() == 0


def test_registry_certificates(torus_registry):
    sys_, reg = torus_registry
    for c in reg.points:
        assert metric_grad_norm(sys_, c.location[None])[0] < 1e-9
        assert c.index == int(np.sum(c.eigenvalues < 0))
        assert c.spectral_gap > 1e-6 * np.abs(c.eigenvalues).max()
        assert c.neg_frame.shape[0] == c.index
        # frame vectors orthonormal in the metric
        for i in range(c.index):
            for j in range(c.index):
                ip = sys_.metric_inner(
                    c.location[None], c.neg_frame[i][None], c.neg_frame[j][None]
                )[0]
                assert abs(ip - (1.0 if i == j else 0.0)) < 1e-8


def test_level_filter(torus_registry):
    sys_, _ = torus_registry
    reg = find_critical_points(sys_, level=0.0)
    assert sorted(c.index for c in reg.points) == [0, 1]


def test_regular_value_error(torus_registry):
    sys_, reg = torus_registry
    from morseflow.errors import RegularValueError

    crit_val = reg.points[1].value
    with pytest.raises(RegularValueError):
        find_critical_points(sys_, level=crit_val)


def test_registry_stable_under_seed_doubling(torus_registry):
    sys_, reg = torus_registry
    reg2 = find_critical_points(sys_, cfg=SearchConfig(seeds_per_dim=48))
    assert len(reg.points) == len(reg2.points)
    for a, b in zip(reg.points, reg2.points):
        assert sys_.distance(a.location[None], b.location[None])[0] < 1e-6


def test_choose_rho_torus(torus_registry):
    sys_, reg = torus_registry
    rho = choose_rho(reg, sys_, n_shots=300)
    assert rho > 0
    min_sep = min(
        sys_.distance(a.location[None], b.location[None])[0]
        for i, a in enumerate(reg.points)
        for b in reg.points[i + 1 :]
    )
    assert rho < 0.5 * min_sep


def test_choose_rho_circle():
    sys_ = make_system("circle")
    reg = find_critical_points(sys_)
    rho = choose_rho(reg, sys_, n_shots=100)
    assert 0 < rho < 0.25  # below a quarter of the circumference


def test_orientation_relation(torus_registry):
    _, reg = torus_registry
    gens = [c.id for c in reg.points]
    x = reg.points[0]
    plus, minus = orient(x, +1), orient(x, -1)
    assert minus == -plus
    assert chain_vector(gens, [plus, minus]) == [0, 0, 0, 0]
    assert chain_vector(gens, [plus]) == [1, 0, 0, 0]
