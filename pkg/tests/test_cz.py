import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rieszlab.cz import (
    LAMBDA_PRECONDITION_C,
    assemble_H,
    cz_decompose,
    cz_partition,
    lambda_threshold,
    maximal_function,
    maximal_function_bruteforce,
    partition_gradient_constant,
    verify_cz,
    whitney_cover,
)
from rieszlab.geometry import GraphError, LatticeSpec, ball, build_connected_sum, build_lattice_box
from rieszlab.instances import cz_instance, smooth_noise_field
from rieszlab.spectral import gradient, vertex_density


@pytest.fixture(scope="module")
def small_graphs():
    return {
        "path": build_lattice_box(1, 30),
        "grid": build_lattice_box(2, 7, 0.5),
        "sum": build_connected_sum(LatticeSpec(3, 5), LatticeSpec(3, 5), 2),
    }


class TestMaximalFunction:
    def test_constant(self, sum5):
        np.testing.assert_allclose(maximal_function(sum5, np.full(sum5.n, -2.5)), 2.5, rtol=1e-12)

    @pytest.mark.parametrize("name", ["path", "grid", "sum"])
    def test_matches_bruteforce(self, small_graphs, name, rng):
        g = small_graphs[name]
        for _ in range(3):
            v = rng.standard_normal(g.n) * (rng.random(g.n) < 0.3)
            np.testing.assert_allclose(maximal_function(g, v), maximal_function_bruteforce(g, v),
                                       rtol=1e-12, atol=1e-14)

    def test_chunking_irrelevant(self, small_graphs, rng):
        g = small_graphs["sum"]
        v = rng.standard_normal(g.n)
        np.testing.assert_allclose(maximal_function(g, v, chunk=7), maximal_function(g, v), rtol=1e-14)

    @given(st.lists(st.floats(-10, 10), min_size=30, max_size=30))
    def test_dominates_field(self, values):
        g = build_lattice_box(1, 30)
        v = np.array(values)
        assert np.all(maximal_function(g, v) >= np.abs(v) - 1e-12)

    def test_floor_exact_above(self, small_graphs, rng):
        g = small_graphs["sum"]
        v = np.abs(rng.standard_normal(g.n)) * (rng.random(g.n) < 0.1)
        full = maximal_function(g, v)
        floor = float(np.percentile(full, 50))
        cut = maximal_function(g, v, floor=floor)
        above = full > floor
        np.testing.assert_allclose(cut[above], full[above], rtol=1e-12)
        assert np.all(cut <= full + 1e-12)

    def test_weak_11_bounded(self, small_graphs, rng):
        # lambda mu{Mv > lambda} / ||v||_1 measured over a lambda grid against the brute force
        for g in small_graphs.values():
            v = np.abs(rng.standard_normal(g.n)) * (rng.random(g.n) < 0.2)
            M = maximal_function_bruteforce(g, v)
            l1 = g.mu @ v
            ratios = [lam * g.mu[M > lam].sum() / l1 for lam in np.geomspace(M.max() / 50, M.max(), 12)]
            assert max(ratios) < 20


class TestWhitney:
    def test_single_vertex(self, path_long):
        x = 20
        balls = whitney_cover(path_long, [x])
        assert len(balls) == 1
        assert balls[0].center == x and balls[0].radius == pytest.approx(0.5)
        assert balls[0].members.tolist() == [x]

    def test_interval(self, path_long):
        Omega = np.arange(10, 25)
        balls = whitney_cover(path_long, Omega)
        covered = set().union(*(set(b.members) for b in balls))
        assert covered == set(Omega)
        assert covered <= set(Omega)

    def test_radius_ratio_and_touch(self, cube9):
        d = cube9.distances_from(0)
        Omega = np.flatnonzero(d < 6)
        balls = whitney_cover(cube9, Omega)
        F = np.setdiff1d(np.arange(cube9.n), Omega)
        for bi in balls:
            assert cube9.distances_from(bi.center)[F].min() < 3 * bi.radius
            for bj in balls:
                if np.intersect1d(bi.members, bj.members).size:
                    assert 1 / 3 <= bi.radius / bj.radius <= 3

    def test_deterministic(self, cube9):
        Omega = np.flatnonzero(cube9.distances_from(3) < 4.5)
        a = [(b.center, b.radius) for b in whitney_cover(cube9, Omega)]
        b = [(b.center, b.radius) for b in whitney_cover(cube9, Omega)]
        assert a == b

    def test_errors(self, path_long):
        with pytest.raises(GraphError):
            whitney_cover(path_long, [])
        with pytest.raises(GraphError):
            whitney_cover(path_long, np.arange(path_long.n))


class TestPartition:
    def test_one_ball(self, path_long):
        B = ball(path_long, 20, 3.0)
        chi = cz_partition(path_long, [B], B.members)
        np.testing.assert_allclose(chi[0, B.members], 1.0)
        assert chi[0].sum() == pytest.approx(B.members.size)

    def test_sums_to_one(self, cube9):
        Omega = np.flatnonzero(cube9.distances_from(0) < 5)
        balls = whitney_cover(cube9, Omega)
        chi = cz_partition(cube9, balls, Omega)
        np.testing.assert_allclose(chi[:, Omega].sum(axis=0), 1.0, atol=1e-12)
        outside = np.setdiff1d(np.arange(cube9.n), Omega)
        assert np.all(chi[:, outside] == 0)
        for i, b in enumerate(balls):
            off = np.setdiff1d(np.arange(cube9.n), b.members)
            assert np.all(chi[i, off] == 0)
        assert np.isfinite(partition_gradient_constant(cube9, balls, chi))

    def test_uncovered(self, path_long):
        with pytest.raises(GraphError):
            cz_partition(path_long, [ball(path_long, 5, 1.0)], [5, 6])


def _instance(g, seed, q=1.5):
    rng = np.random.default_rng(seed)
    return cz_instance(g, rng, q=q, percentiles=(70.0,))


class TestDecomposition:
    def test_empty_level_set(self, sum9):
        inst = _instance(sum9, 0)
        lam = float(inst.maximal.max() ** (1 / inst.q)) * 1.01
        dec = cz_decompose(sum9, inst.u, inst.ball, inst.q, lam, maximal=inst.maximal)
        assert dec.balls == [] and dec.Omega.size == 0
        np.testing.assert_array_equal(dec.good_part, inst.u)
        assert np.all(assemble_H(dec) == 0)
        assert verify_cz(dec).all_passed

    def test_precondition(self, sum9):
        inst = _instance(sum9, 1)
        thr = lambda_threshold(sum9, inst.u, inst.ball, inst.q)
        with pytest.raises(GraphError):
            cz_decompose(sum9, inst.u, inst.ball, inst.q, 0.99 * thr)
        with pytest.raises(ValueError):
            cz_decompose(sum9, inst.u, inst.ball, 0.5, thr * 2)

    def test_support_check(self, sum9):
        inst = _instance(sum9, 2)
        u = inst.u.copy()
        u[np.setdiff1d(np.arange(sum9.n), inst.ball.members)[0]] = 1.0
        with pytest.raises(GraphError):
            cz_decompose(sum9, u, inst.ball, inst.q, 10.0)

    @pytest.mark.parametrize("seed", [3, 4, 5])
    def test_seventieth_percentile(self, sum9, seed):
        inst = _instance(sum9, seed)
        dec = cz_decompose(sum9, inst.u, inst.ball, inst.q, float(inst.lambdas[0]), maximal=inst.maximal)
        rep = verify_cz(dec)
        assert rep.all_passed, rep.passed
        assert rep.sum_identity_error <= 1e-10
        assert rep.edge_identity_error <= 1e-9
        assert rep.N == dec.overlap_N >= 1
        for c in (rep.c2, rep.c3a, rep.c3b, rep.c4):
            assert np.isfinite(c)

    def test_level_set_definition(self, sum9):
        inst = _instance(sum9, 6)
        lam = float(inst.lambdas[0])
        dec = cz_decompose(sum9, inst.u, inst.ball, inst.q, lam)
        M = maximal_function(sum9, vertex_density(sum9, np.abs(gradient(sum9, inst.u)) ** inst.q))
        assert set(dec.Omega) == set(np.flatnonzero(M > lam**inst.q))

    def test_edge_identity_direct(self, sum9):
        inst = _instance(sum9, 7)
        dec = cz_decompose(sum9, inst.u, inst.ball, inst.q, float(inst.lambdas[0]), maximal=inst.maximal)
        a, b = sum9.edges.T
        F = dec.F_mask
        lhs = gradient(sum9, inst.u - dec.bad_parts.sum(axis=0))
        rhs = gradient(sum9, inst.u) * (F[a] & F[b]) + dec.H
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)

    def test_c2_stable_over_lambda_grid(self, sum9):
        rng = np.random.default_rng(8)
        inst = cz_instance(sum9, rng, q=1.5)
        c2 = []
        for lam in inst.lambdas:
            dec = cz_decompose(sum9, inst.u, inst.ball, inst.q, float(lam), maximal=inst.maximal)
            c2.append(verify_cz(dec).c2)
        positive = [c for c in c2 if c > 0]
        assert positive and max(positive) / min(positive) < 4

    def test_report_json(self, sum9):
        inst = _instance(sum9, 9)
        dec = cz_decompose(sum9, inst.u, inst.ball, inst.q, float(inst.lambdas[0]), maximal=inst.maximal)
        data = json.loads(json.dumps(verify_cz(dec).to_dict()))
        assert {"c2", "c3a", "c3b", "c4", "N", "radius_ratio_range", "property7"} <= set(data)
        assert data["params"]["q"] == inst.q
        assert data["params"]["precondition_C"] == LAMBDA_PRECONDITION_C

    def test_noise_field_supported(self, sum9, rng):
        B = ball(sum9, 10, 3.0)
        u = smooth_noise_field(sum9, B, rng)
        outside = np.setdiff1d(np.arange(sum9.n), B.members)
        assert np.all(u[outside] == 0)
