import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rieszlab.covering import (
    BAND,
    REMOTE_DILATION,
    admissible_cover,
    gradient_leibniz_bound,
    localize,
    verify_covering,
)
from rieszlab.geometry import GraphError, LatticeSpec, build_connected_sum, build_lattice_box


@pytest.fixture(scope="module")
def long_path():
    return build_lattice_box(1, 2049)


@pytest.fixture(scope="module")
def cover9(sum9):
    return admissible_cover(sum9, 4.0)


class TestConstruction:
    def test_single_ball(self, path3):
        cov = admissible_cover(path3, 10.0)
        assert len(cov.balls) == 1
        np.testing.assert_array_equal(cov.chi.toarray(), np.ones((1, path3.n)))
        rep = verify_covering(cov)
        assert rep.overlap_N == 1 and rep.all_passed

    def test_radius_at_1024(self, long_path):
        cov = admissible_cover(long_path, 16.0)
        far = [b for b in cov.balls[1:] if long_path.r[b.center] == 1024]
        assert far
        assert all(1.0 <= b.radius <= 2.0 for b in far)

    def test_band_and_remote(self, cover9):
        g = cover9.graph
        lo, hi = BAND
        for b in cover9.balls[1:]:
            assert lo * g.r[b.center] <= b.radius * (1 + 1e-12)
            assert b.radius <= hi * g.r[b.center] * (1 + 1e-12)
            assert REMOTE_DILATION * b.radius <= g.r[b.center] / 2

    def test_anchor_first(self, cover9):
        B0 = cover9.balls[0]
        assert B0.center == cover9.graph.basepoint and B0.radius == 4.0

    def test_deterministic(self, sum9):
        a = admissible_cover(sum9, 4.0)
        b = admissible_cover(sum9, 4.0)
        assert [(x.center, x.radius) for x in a.balls] == [(x.center, x.radius) for x in b.balls]

    def test_enlarges_r0(self, sum9):
        # a radius factor of 1/20 breaks 14B-remoteness everywhere; absorbing every centre is the only way out
        cov = admissible_cover(sum9, 2.0, radius_factor=1 / 20)
        assert cov.enlargements >= 1 and len(cov.balls) == 1

    def test_bad_r0(self, sum9):
        with pytest.raises(GraphError):
            admissible_cover(sum9, 0.0)

    def test_json(self, cover9):
        data = json.loads(json.dumps(cover9.to_dict()))
        assert data["r0"] == 4.0 and data["n_balls"] == len(cover9.balls)


class TestVerification:
    def test_all_pass(self, cover9):
        rep = verify_covering(cover9)
        assert rep.all_passed, rep.passed
        assert rep.partition_error <= 1e-12
        assert rep.covered and rep.support_ok and rep.chi_in_unit_interval

    def test_gradient_constant_reported(self, cover9):
        rep = verify_covering(cover9)
        assert 0 < rep.gradient_constant < np.inf
        json.dumps(rep.to_dict())

    def test_overlap_stable_under_refinement(self, cover9):
        fine = build_connected_sum(LatticeSpec(3, 17, 0.5), LatticeSpec(3, 17, 0.5), 4)
        a = verify_covering(cover9).overlap_N
        b = verify_covering(admissible_cover(fine, 4.0)).overlap_N
        assert abs(a - b) <= 1


class TestLocalize:
    def test_ones(self, cover9):
        parts = localize(cover9, np.ones(cover9.graph.n))
        np.testing.assert_allclose(parts.toarray(), cover9.chi.toarray())

    @given(st.integers(0, 2**32 - 1))
    def test_sum_and_support(self, seed):
        g = build_connected_sum(LatticeSpec(3, 7), LatticeSpec(3, 7), 2)
        cov = admissible_cover(g, 3.0)
        f = np.random.default_rng(seed).standard_normal(g.n)
        parts = localize(cov, f)
        np.testing.assert_allclose(np.asarray(parts.sum(axis=0)).ravel(), f, atol=1e-12)
        for alpha, b in enumerate(cov.balls):
            row = parts.getrow(alpha)
            assert set(row.indices[row.data != 0]) <= set(b.members)


class TestLeibniz:
    def test_zero(self, cover9):
        rep = gradient_leibniz_bound(cover9, np.zeros(cover9.graph.n), 1.5)
        assert rep.max_constant == 0 and rep.aggregate_lp == 0 and rep.aggregate_sum == 0

    def test_random_field(self, cover9, rng):
        f = rng.standard_normal(cover9.graph.n)
        rep = gradient_leibniz_bound(cover9, f, 1.5)
        assert rep.edgewise_ok
        assert np.isfinite(rep.max_constant)
        assert rep.aggregate_lp <= verify_covering(cover9).overlap_N ** (1 / 1.5) + 1e-12
        assert rep.aggregate_lp <= rep.overlap_bound + 1e-12

    def test_rejects_small_p(self, cover9):
        with pytest.raises(ValueError):
            gradient_leibniz_bound(cover9, np.zeros(cover9.graph.n), 0.5)
