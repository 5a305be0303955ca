import json
import math

import numpy as np
import pytest

from rieszlab.covering import admissible_cover
from rieszlab.geometry import GraphError, LatticeSpec, ball, build_connected_sum, build_lattice_box
from rieszlab.inequalities import (
    TestDictionary,
    evaluate_ratio,
    hardy_constant,
    hardy_sum_bound,
    measure_diagonal,
    measure_weak_type,
    poincare_constant,
    reverse_riesz_constant,
    riesz_constant,
)
from rieszlab.instances import lattice_bump_fields
from rieszlab.spectral import edge_lp_norm, edge_mask, gradient, lp_norm

SMALL = TestDictionary(n_centers=3, radii=(0.3, 0.6), heat_times=(0.05,), n_noise=1)


class TestPoincare:
    def test_two_vertex_oracle(self):
        g = build_lattice_box(1, 2)
        B = ball(g, 0, 1.5)
        # K = [[1, -1], [-1, 1]], mu = I: lambda_2 = 2, witness (1, -1)
        est = poincare_constant(g, B, 2.0)
        assert est.method == "spectral-exact"
        assert est.constant == pytest.approx(1 / (1.5 * math.sqrt(2)), rel=1e-12)
        f = np.array([1.0, -1.0])
        assert evaluate_ratio(g, "PoincareBall", f, 2.0, {"center": 0, "radius": 1.5}) == pytest.approx(
            est.constant, rel=1e-12)

    def test_singleton_rejected(self, path_long):
        with pytest.raises(GraphError):
            poincare_constant(path_long, ball(path_long, 3, 1.0), 2.0)

    def test_disconnected_is_infinite(self):
        # a zero-weight edge splits the ball subgraph
        g = build_lattice_box(1, 3)
        g.weights[:] = [1.0, 0.0]
        est = poincare_constant(g, ball(g, 1, 1.5), 2.0)
        assert est.constant == math.inf and est.context["disconnected"]

    def test_remote_balls_bounded(self, sum9):
        cov = admissible_cover(sum9, 4.0)
        balls = [b for b in cov.balls[1:] if b.members.size >= 2][:1]
        balls += [ball(sum9, b.center, 2.0) for b in cov.balls[1:][::200]]
        consts = [poincare_constant(sum9, b, 1.5, SMALL).constant for b in balls]
        assert all(np.isfinite(consts)) and max(consts) < 5

    def test_witness_reproduces(self, sum7):
        B = ball(sum7, 0, 2.5)
        est = poincare_constant(sum7, B, 1.5, SMALL)
        again = evaluate_ratio(sum7, "PoincareBall", est.witness, 1.5, est.context)
        assert abs(again - est.constant) <= 1e-8 * est.constant

    def test_holder_ordering(self, sum7):
        B = ball(sum7, 0, 2.5)
        m = B.members
        est = poincare_constant(sum7, B, 1.5, SMALL)
        c2 = poincare_constant(sum7, B, 2.0).constant
        # doubling bounds the passage from exponent 1.5 to 2 on one ball
        assert c2 <= 4 * est.constant
        f = est.witness
        osc = f - (sum7.mu[m] @ f[m]) / sum7.mu[m].sum()
        inner = edge_mask(sum7, m, "inner")
        G = gradient(sum7, f)
        V, E = sum7.mu[m].sum(), sum7.edge_measure[inner].sum()
        for lo, hi in ((1.5, 2.0), (1.2, 1.5)):
            assert lp_norm(sum7, osc, lo, where=m) / V ** (1 / lo) <= (
                lp_norm(sum7, osc, hi, where=m) / V ** (1 / hi) * (1 + 1e-12))
            assert edge_lp_norm(sum7, G, lo, inner) / E ** (1 / lo) <= (
                edge_lp_norm(sum7, G, hi, inner) / E ** (1 / hi) * (1 + 1e-12))


class TestHardy:
    def test_single_vertex_closed_form(self, cube9):
        x = cube9.basepoint + 1
        f = np.zeros(cube9.n)
        f[x] = 1.0
        p = 1.5
        touching = (cube9.edges == x).any(axis=1)
        closed = cube9.mu[x] * (1 + cube9.r[x]) ** -p / np.sum(
            cube9.edge_measure[touching] * cube9.lengths[touching] ** -p)
        assert evaluate_ratio(cube9, "Hardy", f, p) == pytest.approx(closed, rel=1e-12)

    def test_exact_matches_witness(self, cube9):
        est = hardy_constant(cube9, 2.0)
        assert est.method == "spectral-exact"
        assert evaluate_ratio(cube9, "Hardy", est.witness, 2.0) == pytest.approx(est.constant, rel=1e-8)

    def test_dictionary_below_exact(self, cube9):
        exact = hardy_constant(cube9, 2.0).constant
        low = hardy_constant(cube9, 2.0, SMALL, exact=False).constant
        assert 0 < low <= exact * (1 + 1e-9)

    def test_monotone_in_side(self):
        consts = [hardy_constant(build_lattice_box(3, s), 2.0).constant for s in (9, 13, 17)]
        assert consts[0] < consts[1] < consts[2] < 4

    def test_connected_sum_refinement(self, sum7, sum9):
        a = hardy_constant(sum7, 2.0).constant
        b = hardy_constant(sum9, 2.0).constant
        assert np.isfinite(a) and np.isfinite(b) and 0.5 <= b / a <= 2

    def test_rejects_small_p(self, cube9):
        with pytest.raises(ValueError):
            hardy_constant(cube9, 0.5)


class TestRiesz:
    @pytest.mark.parametrize("name", ["path_long", "grid2", "sum5"])
    def test_p2_is_one(self, name, request):
        g = request.getfixturevalue(name)
        assert reverse_riesz_constant(g, 2.0, SMALL).constant == pytest.approx(1.0, abs=1e-9)
        assert riesz_constant(g, 2.0, SMALL).constant == pytest.approx(1.0, abs=1e-9)

    def test_witness_and_scale(self, sum7):
        for tag, fn in (("RRp", reverse_riesz_constant), ("Rp", riesz_constant)):
            est = fn(sum7, 1.5, SMALL)
            r1 = evaluate_ratio(sum7, tag, est.witness, 1.5)
            assert abs(r1 - est.constant) <= 1e-8 * est.constant
            assert evaluate_ratio(sum7, tag, 2 * est.witness, 1.5) == pytest.approx(r1, rel=1e-12)
        f = hardy_constant(sum7, 1.5, SMALL, exact=False).witness
        assert evaluate_ratio(sum7, "Hardy", 2 * f, 1.5) == pytest.approx(
            evaluate_ratio(sum7, "Hardy", f, 1.5), rel=1e-12)

    def test_constant_plus_indicator(self, sum5):
        f = np.ones(sum5.n) * 3.0
        f[:5] += 1.0
        a = evaluate_ratio(sum5, "RRp", f, 1.5)
        g = f - 3.0
        assert np.isfinite(a) and a == pytest.approx(evaluate_ratio(sum5, "RRp", g, 1.5), rel=1e-10)

    def test_superset_monotone(self, sum5):
        small = TestDictionary(radii=(0.2, 0.4), heat_times=(0.05,))
        big = TestDictionary(radii=(0.2, 0.4, 0.7), heat_times=(0.05, 0.25))
        for fn in (reverse_riesz_constant, riesz_constant):
            assert fn(sum5, 1.5, big).dictionary_bound >= fn(sum5, 1.5, small).dictionary_bound

    def test_constant_is_lower_bound_of_atoms(self, sum5):
        est = reverse_riesz_constant(sum5, 1.5, SMALL)
        assert est.constant >= est.dictionary_bound
        assert est.lower_bound
        json.dumps(est.to_row())

    def test_riesz_rejects_p1(self, sum5):
        with pytest.raises(ValueError):
            riesz_constant(sum5, 1.0)


class TestWeakType:
    def test_zero_field(self, sum9):
        B = ball(sum9, 0, 2.0)
        est = measure_weak_type(sum9, np.zeros(sum9.n), B, 1.5)
        assert est.constant == 0.0

    def test_above_max(self, sum9):
        bf = lattice_bump_fields(sum9, count=1)[0]
        est = measure_weak_type(sum9, bf.field, bf.ball, 1.5, lambda_grid=[1e6])
        assert est.constant == 0.0

    def test_empty_grid(self, sum9):
        bf = lattice_bump_fields(sum9, count=1)[0]
        with pytest.raises(GraphError):
            measure_weak_type(sum9, bf.field, bf.ball, 1.5, lambda_grid=[])

    def test_support(self, sum9):
        with pytest.raises(GraphError):
            measure_weak_type(sum9, np.ones(sum9.n), ball(sum9, 0, 1.5), 1.5)

    def test_bump_finite(self):
        g = build_connected_sum(LatticeSpec(3, 17, 0.5), LatticeSpec(3, 17, 0.5), 4)
        bf = lattice_bump_fields(g, count=1)[0]
        est = measure_weak_type(g, bf.field, bf.ball, 1.5)
        assert 0 < est.constant < np.inf
        assert est.context["grid_size"] == 32


class TestDiagonalAndAssembly:
    def test_single_ball_p2(self, path3, rng):
        cov = admissible_cover(path3, 10.0)
        est = measure_diagonal(path3, cov, rng.standard_normal(path3.n), 2.0)
        assert est.constant <= 1 + 1e-9

    def test_constant_field(self, sum7):
        cov = admissible_cover(sum7, 3.0)
        est = measure_diagonal(sum7, cov, np.ones(sum7.n), 1.5)
        assert est.context.get("ratios_finite", True)
        assert np.isfinite(est.constant)

    def test_rejects_p(self, sum7):
        cov = admissible_cover(sum7, 3.0)
        with pytest.raises(ValueError):
            measure_diagonal(sum7, cov, np.ones(sum7.n), 3.0)

    def test_supported_in_anchor(self, sum7):
        cov = admissible_cover(sum7, 6.0)
        f = np.clip(1.0 - sum7.r / 2.5, 0.0, None)
        est = hardy_sum_bound(sum7, cov, f, 1.5)
        grad = edge_lp_norm(sum7, gradient(sum7, f), 1.5)
        assert est.constant == pytest.approx(lp_norm(sum7, f, 1.5) / 6.0 / grad, rel=1e-12)

    def test_radius_check_and_cross_validation(self, sum7):
        cov = admissible_cover(sum7, 3.0)
        rr = reverse_riesz_constant(sum7, 1.5, SMALL)
        est = hardy_sum_bound(sum7, cov, rr.witness, 1.5)
        terms = est.context["terms"]
        assert terms["radius_check"]
        for b in cov.balls:
            assert np.all((sum7.r[b.members] + 1) / b.radius <= terms["radius_constant"] * (1 + 1e-12))
        assert 1 / 3 <= terms["pipeline_ratio"] / rr.constant <= 3
        assert terms["direct_ratio"] == pytest.approx(rr.constant, rel=1e-6)

    def test_zero_gradient(self, sum7):
        cov = admissible_cover(sum7, 3.0)
        with pytest.raises(GraphError):
            hardy_sum_bound(sum7, cov, np.ones(sum7.n), 1.5)
