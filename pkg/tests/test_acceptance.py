"""Acceptance criteria 1-9, each printed as one PASS/FAIL line in the terminal summary."""

import numpy as np
import pytest

from rieszlab import studies
from rieszlab.geometry import LatticeSpec, build_connected_sum, build_lattice_box
from rieszlab.spectral import grad_norm_p, lp_norm, sqrt_apply_quadrature, sqrt_apply_spectral

pytestmark = pytest.mark.slow


def _rel_mu(g, a, b):
    return lp_norm(g, a - b, 2) / lp_norm(g, b, 2)


def test_1_l2_identity(record_criterion):
    graphs = {
        "path41": build_lattice_box(1, 41),
        "grid33": build_lattice_box(2, 33),
        "cube9": build_lattice_box(3, 9),
        "cube13_h0.5": build_lattice_box(3, 13, 0.5),
        "sum9": build_connected_sum(LatticeSpec(3, 9), LatticeSpec(3, 9), 2),
        "sum9_h0.5": build_connected_sum(LatticeSpec(3, 9, 0.5), LatticeSpec(3, 9, 0.5), 4),
    }
    worst = 0.0
    for i, g in enumerate(graphs.values()):
        assert g.n <= 3000
        rng = np.random.default_rng([1, i])
        U = rng.standard_normal((g.n, 100))
        for k in range(100):
            a = lp_norm(g, sqrt_apply_spectral(g, U[:, k]), 2)
            b = grad_norm_p(g, U[:, k], 2)
            worst = max(worst, abs(a - b) / b)
    ok = record_criterion("1", worst <= 1e-10, f"worst relative L2-identity error {worst:.2e} (tol 1e-10)")
    assert ok


def test_2_quadrature_oracle(record_criterion):
    graphs = {
        "path41": build_lattice_box(1, 41),
        "path9": build_lattice_box(1, 9),
        "grid9": build_lattice_box(2, 9),
        "cube9": build_lattice_box(3, 9),
        "sum9": build_connected_sum(LatticeSpec(3, 9), LatticeSpec(3, 9), 2),
    }
    worst, where = 0.0, ""
    for i, (name, g) in enumerate(graphs.items()):
        rng = np.random.default_rng([2, i])
        for _ in range(5):
            u = rng.standard_normal(g.n)
            err = _rel_mu(g, sqrt_apply_quadrature(g, u), sqrt_apply_spectral(g, u))
            if err > worst:
                worst, where = err, name
    ok = record_criterion("2", worst <= 1e-6, f"worst relative error {worst:.2e} on {where} (tol 1e-6)")
    assert ok


@pytest.fixture(scope="module")
def hardy_ladder():
    return studies.hardy_ladder()


def test_3_hardy_monotone(record_criterion, hardy_ladder):
    c = hardy_ladder.y
    ok = bool(np.all(np.diff(c) > 0))
    detail = "C_17, C_33, C_65 = " + ", ".join(f"{x:.4f}" for x in c) + " (strictly increasing)"
    assert record_criterion("3 hard", ok, detail)


def test_3_hardy_bracket(record_criterion, hardy_ladder):
    c65 = hardy_ladder.y[-1]
    ok = 2.8 <= c65 <= 4.0
    record_criterion("3 soft", ok, f"C_65 = {c65:.4f}, bracket [2.8, 4.0]; continuum value 4")
    if not ok:
        pytest.xfail("soft bracket not reached at side 65; convergence to 4 is logarithmic in the box size")


def test_4_cz_suite(record_criterion):
    g = studies.connected_sum(9)
    runs = studies.cz_suite(g, 20)
    props = all(r.all_passed for r in runs)
    sum_err = max(r.sum_error for r in runs)
    edge_err = max(r.edge_error for r in runs)
    finite = all(np.all(np.isfinite(r.c2 + r.c3a + r.c3b + r.c4)) for r in runs)
    spread = max(r.c2_spread for r in runs)
    ok = props and sum_err <= 1e-10 and edge_err <= 1e-9 and finite and spread < 4
    failed = sorted({f for r in runs for f in r.failed})
    detail = (f"20 instances, properties {'all pass' if props else f'failed {failed}'}; "
              f"sum identity {sum_err:.1e} (1e-10), edge identity {edge_err:.1e} (1e-9), "
              f"worst c2 spread over the lambda grid {spread:.2f} (< 4)")
    assert record_criterion("4", ok, detail)


def test_5_covering(record_criterion):
    coarse, fine = studies.covering_refinement()
    passed = coarse.all_passed and fine.all_passed
    part = max(coarse.partition_error, fine.partition_error)
    ratio = fine.gradient_constant / coarse.gradient_constant
    ok = passed and part <= 1e-12 and coarse.radius_band and fine.radius_band and 0.5 <= ratio <= 2
    detail = (f"properties {'all pass' if passed else 'FAIL'}; partition error {part:.1e} (1e-12); "
              f"gradient constant {coarse.gradient_constant:.3f} -> {fine.gradient_constant:.3f} "
              f"(ratio {ratio:.2f}, factor 2)")
    assert record_criterion("5", ok, detail)


def test_6_operator_split(record_criterion):
    coarse, fine = studies.spacing_pair()
    a = studies.split_bounds(coarse)
    b = studies.split_bounds(fine)
    vals = np.array([[x.U, x.T_off, y.U, y.T_off] for x, y in zip(a, b)])
    finite = bool(np.all(np.isfinite(vals)) and np.all(vals[:, [0, 2]] > 0))
    ratios = np.r_[vals[:, 2] / vals[:, 0], vals[:, 3] / vals[:, 1]]
    ok = finite and bool(np.all((ratios >= 0.5) & (ratios <= 2)))
    detail = (f"10 fields x s in (1.5, 2, 3), U and T off 4B: fine/coarse ratios in "
              f"[{ratios.min():.2f}, {ratios.max():.2f}] (factor 2)")
    assert record_criterion("6", ok, detail)


def test_7_reverse_riesz(record_criterion):
    series = studies.reverse_riesz_levels()
    ratios = [s.y[1] / s.y[0] for s in series]
    ok = all(np.isfinite(s.y).all() for s in series) and all(0.5 < r < 2 for r in ratios)
    detail = "; ".join(f"p={s.extra['p']:g}: {s.y[0]:.3f} -> {s.y[1]:.3f} (ratio {r:.2f})"
                       for s, r in zip(series, ratios)) + " (factor 2)"
    assert record_criterion("7", ok, detail)


def test_8_riesz_growth(record_criterion):
    p2, p4 = studies.riesz_levels()
    grows = bool(np.all(np.diff(p4.y) > 0))
    exact = max(abs(c - 1) for c in p2.y)
    ok = grows and exact <= 1e-9
    detail = ("p=4: " + ", ".join(f"{c:.3f}" for c in p4.y) + " on sides 5, 9, 13 (strictly increasing); "
              f"p=2: max |C - 1| = {exact:.1e} (1e-9)")
    assert record_criterion("8", ok, detail)


def test_9_weak_type(record_criterion):
    _, fine = studies.spacing_pair()
    rows = studies.weak_type_study(fine)
    finite = all(np.isfinite(r.constant) and r.constant > 0 for r in rows)
    inside = all(r.inside for r in rows)
    ok = finite and inside and len(rows) == 10
    edge = [f"#{r.instance} ({r.ball_size}-vertex ball) at index {r.argmax}" for r in rows if not r.inside]
    detail = (f"10 instances, constants in [{min(r.constant for r in rows):.3f}, "
              f"{max(r.constant for r in rows):.3f}], argmax indices "
              f"{sorted(r.argmax for r in rows)} of {rows[0].grid_size}"
              + (f"; at the upper edge: {', '.join(edge)}" if edge else ""))
    assert record_criterion("9", ok, detail)
