"""Reproducible test instances: remote balls carrying bump or CZ fields.

Offsets for lattice models are physical (multiplied by the spacing), so the
same instances exist at every spacing of a refinement study.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .cz import lambda_threshold, maximal_function
from .geometry import Ball, GraphError, WeightedGraph, ball, lattice_vertex
from .spectral import gradient, heat_apply, vertex_density


@dataclass
class BallField:
    """A field supported in the remote ball ``ball``."""

    ball: Ball
    field: np.ndarray
    label: str = ""


def smooth_bump(g: WeightedGraph, center: int, radius: float) -> np.ndarray:
    """``s(1 - d/radius)`` with the smoothstep ``s(t) = t^2 (3 - 2t)``, zero off the open ball."""
    d = g.distances_from(center)
    t = np.clip(1.0 - d / radius, 0.0, 1.0)
    f = t * t * (3.0 - 2.0 * t)
    f[d >= radius] = 0.0
    return f


def _spacing(g: WeightedGraph) -> float:
    params = g.metadata.get("params", {})
    if "end_a" in params:
        return float(params["end_a"].get("spacing", 1.0))
    return float(params.get("spacing", 1.0))


def lattice_bump_fields(
    g: WeightedGraph, count: int = 10, radii: tuple = (1.0, 1.5), min_offset: int = 2
) -> list[BallField]:
    """Smooth bumps at unit-cube offsets (L1 norm ``>= min_offset``) from the end centres.

    Ends alternate on connected sums.  Radii are evenly spaced over
    ``radii``; every ball is checked to be remote.
    """
    builder = g.metadata.get("builder")
    if builder not in ("lattice_box", "connected_sum"):
        raise GraphError(f"lattice bump fields need a lattice-based graph, got {builder!r}")
    n = int(g.metadata["dimension"])
    h = _spacing(g)
    scale = int(round(1.0 / h)) if h < 1 else 1
    offsets = [o for o in itertools.product((-1, 0, 1), repeat=n) if sum(map(abs, o)) >= min_offset]
    if len(offsets) < count:
        raise GraphError(f"only {len(offsets)} offsets available for {count} instances")
    two_ends = builder == "connected_sum"
    out = []
    for k, (off, r) in enumerate(zip(offsets[:count], np.linspace(*radii, count))):
        x = lattice_vertex(g, [scale * o for o in off], end=k % 2 if two_ends else 0)
        b = ball(g, x, float(r))
        if "remote" not in b.classification:
            raise GraphError(f"instance ball at offset {off} with radius {r} is not remote")
        out.append(BallField(b, smooth_bump(g, x, float(r)), f"offset={off},end={k % 2}"))
    return out


def random_remote_ball(
    g: WeightedGraph, rng: np.random.Generator, far: float = 0.75, shrink: tuple = (0.6, 1.0)
) -> Ball:
    """Ball centred at a random vertex with ``r(x) >= far * max r``, radius ``s r(x)/2`` with ``s`` in ``shrink``."""
    cands = np.flatnonzero(g.r >= far * g.r.max())
    x = int(rng.choice(cands))
    return ball(g, x, float(rng.uniform(*shrink) * g.r[x] / 2))


def smooth_noise_field(g: WeightedGraph, B: Ball, rng: np.random.Generator) -> np.ndarray:
    """Heat-smoothed white noise on ``B`` (time ``r^2/16``) times the tent of ``B``."""
    xi = np.zeros(g.n)
    xi[B.members] = rng.standard_normal(B.members.size)
    u = heat_apply(g, xi, B.radius**2 / 16)
    d = g.distances_from(B.center)
    u = u * np.clip(1.0 - d / B.radius, 0.0, None)
    u[d >= B.radius] = 0.0
    return u


@dataclass
class CZInstance:
    ball: Ball
    u: np.ndarray
    q: float
    maximal: np.ndarray
    lambdas: np.ndarray


def cz_instance(
    g: WeightedGraph, rng: np.random.Generator, q: float | None = None,
    percentiles: tuple = (60.0, 70.0, 80.0, 90.0),
) -> CZInstance:
    """Random remote ball and field with ``lambda`` levels at percentiles of ``M^(1/q)``.

    The percentiles are taken over the vertices of the ball where ``M^(1/q)``
    exceeds the decomposition threshold.  ``q`` is drawn from ``[1, 2]`` when
    not given.
    """
    B = random_remote_ball(g, rng)
    u = smooth_noise_field(g, B, rng)
    q = float(rng.uniform(1.0, 2.0)) if q is None else float(q)
    M = maximal_function(g, vertex_density(g, np.abs(gradient(g, u)) ** q))
    levels = M[B.members] ** (1.0 / q)
    levels = levels[levels > lambda_threshold(g, u, B, q)]
    if levels.size == 0:
        raise GraphError("maximal function never exceeds the decomposition threshold on B")
    lambdas = np.percentile(levels, percentiles)
    return CZInstance(B, u, q, M, lambdas)
