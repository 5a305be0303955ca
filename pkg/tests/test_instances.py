import numpy as np
import pytest

from rieszlab.cz import lambda_threshold
from rieszlab.geometry import GraphError, LatticeSpec, build_conic_end, build_connected_sum
from rieszlab.instances import cz_instance, lattice_bump_fields, random_remote_ball, smooth_bump


def test_smooth_bump_profile(path_long):
    c = path_long.basepoint + 10
    f = smooth_bump(path_long, c, 4.0)
    assert f[c] == 1.0
    assert f[c + 2] == pytest.approx(0.5)  # s(1/2) = 1/2
    assert np.all(f[np.abs(np.arange(path_long.n) - c) >= 4] == 0)


def test_bump_fields_remote_and_alternating(sum9):
    fields = lattice_bump_fields(sum9)
    assert len(fields) == 10
    labels = np.asarray(sum9.metadata["end_labels"])
    ends = [int(labels[bf.ball.center]) for bf in fields]
    assert ends == [0, 1] * 5
    for bf in fields:
        assert "remote" in bf.ball.classification
        assert set(np.flatnonzero(bf.field)) <= set(bf.ball.members)


def test_bump_fields_same_physical_instances(sum9):
    fine = build_connected_sum(LatticeSpec(3, 17, 0.5), LatticeSpec(3, 17, 0.5), 4)
    coarse = lattice_bump_fields(sum9)
    refined = lattice_bump_fields(fine)
    for a, b in zip(coarse, refined):
        assert a.ball.radius == b.ball.radius
        assert sum9.r[a.ball.center] == pytest.approx(fine.r[b.ball.center])


def test_bump_fields_need_lattice():
    with pytest.raises(GraphError):
        lattice_bump_fields(build_conic_end(2, 8))


def test_random_remote_ball(sum9):
    rng = np.random.default_rng(0)
    for _ in range(10):
        assert "remote" in random_remote_ball(sum9, rng).classification


def test_cz_instance_levels(sum9):
    inst = cz_instance(sum9, np.random.default_rng(1))
    assert 1 <= inst.q <= 2
    assert np.all(np.diff(inst.lambdas) >= 0)
    assert inst.lambdas[0] > lambda_threshold(sum9, inst.u, inst.ball, inst.q)
