"""Refinement studies shared by the acceptance suite and the scripts.

Each study returns plain dataclasses of measured numbers; pass/fail
thresholds are left to the caller.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .covering import admissible_cover, verify_covering
from .cz import cz_decompose, verify_cz
from .geometry import LatticeSpec, WeightedGraph, ball, build_connected_sum, build_lattice_box
from .inequalities import (
    TestDictionary,
    hardy_constant,
    measure_weak_type,
    reverse_riesz_constant,
    riesz_constant,
)
from .instances import cz_instance, lattice_bump_fields
from .spectral import QuadratureSettings, lp_norm, split_TU

SPLIT_EXPONENTS = (1.5, 2.0, 3.0)


def connected_sum(side: int, spacing: float = 1.0, neck: float = 2.0) -> WeightedGraph:
    """Two cubic ends of ``side`` vertices per axis joined by a neck of physical length ``neck``."""
    spec = LatticeSpec(3, side, spacing)
    return build_connected_sum(spec, spec, max(1, int(round(neck / spacing))))


def spacing_pair() -> tuple[WeightedGraph, WeightedGraph]:
    """Side 9 at spacing 1 and side 17 at spacing 1/2: the same physical model refined once."""
    return connected_sum(9, 1.0), connected_sum(17, 0.5)


@dataclass
class Series:
    label: str
    x: list
    y: list
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def hardy_ladder(sides=(17, 33, 65)) -> Series:
    """Exact ``p = 2`` Hardy constants on cubes with Dirichlet faces."""
    consts = [hardy_constant(build_lattice_box(3, s), 2.0).constant for s in sides]
    return Series("hardy_cube_p2", list(sides), consts)


@dataclass
class CZRun:
    seed: int
    q: float
    lambdas: list
    all_passed: bool
    failed: list
    sum_error: float
    edge_error: float
    c2: list
    c3a: list
    c3b: list
    c4: list
    N: list

    @property
    def c2_spread(self) -> float:
        pos = [c for c in self.c2 if c > 0]
        return max(pos) / min(pos) if pos else 1.0


def cz_suite(g: WeightedGraph, count: int = 20, seed: int = 0) -> list[CZRun]:
    """Random ``(u, lambda, q)`` instances on remote balls, each at a 4-point lambda grid."""
    runs = []
    for k in range(count):
        rng = np.random.default_rng([seed, k])
        inst = cz_instance(g, rng)
        reps = [verify_cz(cz_decompose(g, inst.u, inst.ball, inst.q, float(lam), maximal=inst.maximal))
                for lam in inst.lambdas]
        failed = sorted({key for r in reps for key, ok in r.passed.items() if not ok})
        runs.append(CZRun(k, inst.q, [float(x) for x in inst.lambdas], not failed, failed,
                          max(r.sum_identity_error for r in reps),
                          max(r.edge_identity_error for r in reps),
                          [r.c2 for r in reps], [r.c3a for r in reps], [r.c3b for r in reps],
                          [r.c4 for r in reps], [r.N for r in reps]))
    return runs


def covering_refinement(r0: float = 4.0) -> list:
    """Covering reports on the spacing pair."""
    return [verify_covering(admissible_cover(g, r0)) for g in spacing_pair()]


@dataclass
class SplitRow:
    instance: int
    radius: float
    exponent: float
    U: float
    T_off: float


def split_bounds(g: WeightedGraph, count: int = 10,
                 settings: QuadratureSettings | None = None) -> list[SplitRow]:
    """``r ||U f||_s / ||f||_s`` and ``r ||T f||_{L^s(M - 4B)} / ||f||_s`` for bump instances."""
    rows = []
    for k, inst in enumerate(lattice_bump_fields(g, count)):
        r = inst.ball.radius
        T, U = split_TU(g, inst.field, r, settings)
        outside = np.ones(g.n, bool)
        outside[ball(g, inst.ball.center, 4 * r).members] = False
        for s in SPLIT_EXPONENTS:
            fn = lp_norm(g, inst.field, s)
            rows.append(SplitRow(k, r, s, r * lp_norm(g, U, s) / fn,
                                 r * lp_norm(g, T, s, where=outside) / fn))
    return rows


def reverse_riesz_levels(sides=(9, 17), ps=(1.2, 1.5), dictionary: TestDictionary | None = None) -> list:
    """Reverse Riesz lower bounds on connected sums of growing side at unit spacing."""
    out = []
    for p in ps:
        consts = [reverse_riesz_constant(connected_sum(s), p, dictionary).constant for s in sides]
        out.append(Series(f"RR_p{p:g}", list(sides), consts, {"p": p}))
    return out


def riesz_levels(sides=(5, 9, 13), ps=(2.0, 4.0), dictionary: TestDictionary | None = None) -> list:
    """Riesz lower bounds on connected sums of growing side at unit spacing."""
    out = []
    for p in ps:
        consts = [riesz_constant(connected_sum(s), p, dictionary).constant for s in sides]
        out.append(Series(f"R_p{p:g}", list(sides), consts, {"p": p}))
    return out


@dataclass
class WeakRow:
    instance: int
    constant: float
    argmax: int
    grid_size: int
    ball_size: int

    @property
    def inside(self) -> bool:
        # the top grid point is max |Lap^(1/2) phi| itself, where the level set is empty
        return self.argmax <= self.grid_size - 3


def weak_type_study(g: WeightedGraph, count: int = 10, q: float = 1.5) -> list[WeakRow]:
    rows = []
    for k, inst in enumerate(lattice_bump_fields(g, count)):
        est = measure_weak_type(g, inst.field, inst.ball, q)
        rows.append(WeakRow(k, est.constant, est.context["argmax"], est.context["grid_size"],
                            int(inst.ball.members.size)))
    return rows
