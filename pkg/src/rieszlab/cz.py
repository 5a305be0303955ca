"""Uncentered maximal function and the Sobolev Calderon-Zygmund decomposition.

Given ``u`` supported in a ball ``B``, the level set
``Omega = {M(|grad u|^q) > lambda^q}`` is covered by Whitney balls, a tent
partition of unity ``chi_i`` is built on it, and ``u`` splits as
``g + sum_i b_i`` with ``b_i = (u - u_{B_i}) chi_i``.  Edge quantities such as
``|grad u|^q`` are turned into vertex densities with
:func:`rieszlab.spectral.vertex_density` before the maximal function is taken.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .geometry import Ball, GraphError, WeightedGraph, ball, classify_ball, volume
from .spectral import check_field, edge_lp_norm, edge_mask, gradient, lp_norm, vertex_density

LAMBDA_PRECONDITION_C = 1.0
WHITNEY_RADIUS = 0.5
WHITNEY_SEPARATION = 0.25
_CHUNK = 256


def _tie_tol(d: np.ndarray) -> np.ndarray:
    return 1e-12 * np.maximum(1.0, np.abs(d))


def _limited_rows(g: WeightedGraph, centers: np.ndarray, max_volume: float) -> np.ndarray:
    """Distance rows, exact at least up to the radius where the ball volume reaches ``max_volume``."""
    if not np.isfinite(max_volume):
        return np.atleast_2d(g._dijkstra(centers))
    D = np.full((centers.size, g.n), np.inf)
    todo = np.arange(centers.size)
    limit = 2 * float(g.lengths.max(initial=1.0))
    total = g.mu.sum()
    while todo.size:
        rows = np.atleast_2d(g._dijkstra(centers[todo], limit=limit))
        D[todo] = rows
        reached = np.where(np.isfinite(rows), g.mu, 0.0).sum(axis=1)
        todo = todo[(reached < max_volume) & (reached < total)]
        limit *= 2
    return D


def maximal_function(g: WeightedGraph, v, floor: float = 0.0, chunk: int = _CHUNK) -> np.ndarray:
    """Exact uncentered maximal function ``sup_{B ∋ x} V(B)^-1 sum_B mu |v|``.

    For each center the distinct open balls are the prefixes of the vertices
    sorted by distance, cut at the end of a tie group.  Averages over those
    prefixes, followed by a suffix maximum, give the best ball centered there
    that contains each vertex.

    With ``floor > 0`` only balls of volume below ``||v||_1 / floor`` are
    enumerated (no larger ball can average above ``floor``).  The result is
    then exact wherever it exceeds ``floor`` and a lower bound elsewhere.
    """
    v = np.abs(check_field(g, v))
    if v.ndim != 1:
        raise GraphError("maximal_function takes a single field")
    mass = g.mu * v
    max_volume = mass.sum() / floor if floor > 0 else np.inf
    out = np.zeros(g.n)
    for start in range(0, g.n, chunk):
        centers = np.arange(start, min(start + chunk, g.n))
        D = _limited_rows(g, centers, max_volume)
        cols = np.flatnonzero(np.isfinite(D).any(axis=0))
        D = D[:, cols]
        local = np.argsort(D, axis=1, kind="stable")
        order = cols[local]
        ds = np.take_along_axis(D, local, axis=1)
        finite = np.isfinite(ds)
        avg = np.cumsum(mass[order], axis=1) / np.cumsum(g.mu[order], axis=1)
        avg[~finite] = 0.0
        # each position takes the average of the prefix ending at its tie group's end;
        # the unreached tail (inf, inf) compares as a tie and forms one zero group
        with np.errstate(invalid="ignore"):
            is_end = np.concatenate(
                [np.diff(ds, axis=1) > _tie_tol(ds[:, :-1]), np.ones((len(centers), 1), bool)],
                axis=1,
            )
        pos = np.where(is_end, np.arange(cols.size), cols.size)
        end_of = np.minimum.accumulate(pos[:, ::-1], axis=1)[:, ::-1]
        avg = np.take_along_axis(avg, end_of, axis=1)
        best = np.maximum.accumulate(avg[:, ::-1], axis=1)[:, ::-1]
        vals = np.empty_like(best)
        np.put_along_axis(vals, local, best, axis=1)
        np.maximum.at(out, cols, vals.max(axis=0))
    return out


def maximal_function_bruteforce(g: WeightedGraph, v) -> np.ndarray:
    """Enumerate every (center, radius) ball: O(n^3), for testing only."""
    v = np.abs(check_field(g, v))
    D = g.distance_matrix()
    out = np.zeros(g.n)
    for z in range(g.n):
        for rho in np.unique(D[z]):
            members = D[z] <= rho
            a = (g.mu[members] @ v[members]) / g.mu[members].sum()
            out[members] = np.maximum(out[members], a)
    return out


def distance_to_set(g: WeightedGraph, S) -> np.ndarray:
    S = np.asarray(S, dtype=np.int64)
    if S.size == 0:
        return np.full(g.n, np.inf)
    if g.n == 1:
        return np.zeros(1)
    return csgraph.dijkstra(g.adjacency, directed=False, indices=S, min_only=True)


def _as_mask(g: WeightedGraph, S) -> np.ndarray:
    S = np.asarray(S)
    if S.dtype == bool:
        return S.copy()
    mask = np.zeros(g.n, bool)
    mask[S.astype(np.int64)] = True
    return mask


def whitney_cover(g: WeightedGraph, Omega) -> list[Ball]:
    """Whitney balls ``B(x_i, d(x_i, F)/2)`` with disjoint quarter-balls, ``F`` the complement of ``Omega``.

    Candidates are visited by decreasing ``d(x, F)`` (ties by vertex id); a
    candidate is kept when its quarter-ball misses every kept quarter-ball.
    """
    inside = _as_mask(g, Omega)
    if not inside.any():
        raise GraphError("Whitney cover of an empty set")
    if inside.all():
        raise GraphError("level set is the whole graph: the complement F is empty")
    dF = distance_to_set(g, np.flatnonzero(~inside))
    cand = np.flatnonzero(inside)
    cand = cand[np.lexsort((cand, -dF[cand]))]
    taken = np.zeros(g.n, bool)
    balls = []
    for x in cand:
        r = WHITNEY_RADIUS * dF[x]
        d = g._dijkstra(int(x), limit=r)
        quarter = d < WHITNEY_SEPARATION * r
        if taken[quarter].any():
            continue
        taken |= quarter
        members = np.flatnonzero(d < r)
        members.setflags(write=False)
        balls.append(Ball(int(x), float(r), members, classify_ball(g, int(x), float(r))))
    return balls


def tent_functions(g: WeightedGraph, balls: list[Ball]) -> np.ndarray:
    """Rows ``max(0, 1 - d(x, x_i)/r_i)``; positive exactly on the open balls."""
    phi = np.zeros((len(balls), g.n))
    for i, b in enumerate(balls):
        d = g.local_distances(b.center, b.radius)
        phi[i, b.members] = 1.0 - d[b.members] / b.radius
    return phi


def cz_partition(g: WeightedGraph, balls: list[Ball], Omega) -> np.ndarray:
    """Partition of unity on ``Omega`` subordinate to ``balls``; one row per ball."""
    inside = _as_mask(g, Omega)
    phi = tent_functions(g, balls)
    phi[:, ~inside] = 0.0
    total = phi.sum(axis=0)
    uncovered = inside & (total <= 0)
    if uncovered.any():
        raise GraphError(f"{int(uncovered.sum())} vertices of Omega are not covered by the balls")
    chi = np.divide(phi, total, out=np.zeros_like(phi), where=total > 0)
    return chi


def partition_gradient_constant(g: WeightedGraph, balls: list[Ball], chi: np.ndarray) -> float:
    """``max_i r_i ||grad chi_i||_inf``."""
    if not balls:
        return 0.0
    grads = np.abs((g.incidence @ chi.T) / g.lengths[:, None])
    radii = np.array([b.radius for b in balls])
    return float(np.max(grads.max(axis=0) * radii))


@dataclass(eq=False)
class CZDecomposition:
    """``u = g + sum_i b_i`` at level ``lam``; ``chi`` and ``bad_parts`` have one row per ball."""

    graph: WeightedGraph
    u: np.ndarray
    B: Ball
    q: float
    lam: float
    Omega: np.ndarray
    balls: list
    chi: np.ndarray
    averages: np.ndarray
    bad_parts: np.ndarray
    good_part: np.ndarray
    H: np.ndarray
    maximal: np.ndarray
    precondition_C: float = LAMBDA_PRECONDITION_C

    @property
    def F_mask(self) -> np.ndarray:
        mask = np.ones(self.graph.n, bool)
        mask[self.Omega] = False
        return mask

    @property
    def overlap_N(self) -> int:
        return membership_overlap(self.graph, self.balls)

    def to_dict(self) -> dict:
        return {
            "q": self.q,
            "lambda": self.lam,
            "ball": self.B.to_dict(),
            "omega_size": int(self.Omega.size),
            "balls": [b.to_dict() for b in self.balls],
            "overlap_N": self.overlap_N,
            "precondition_C": self.precondition_C,
            "graph": dict(self.graph.metadata),
        }


def membership_overlap(g: WeightedGraph, balls: list[Ball]) -> int:
    if not balls:
        return 0
    count = np.zeros(g.n, dtype=np.int64)
    for b in balls:
        count[b.members] += 1
    return int(count.max())


def _membership(g: WeightedGraph, balls: list[Ball]) -> sparse.csr_matrix:
    rows = np.concatenate([np.full(b.members.size, i) for i, b in enumerate(balls)])
    cols = np.concatenate([b.members for b in balls])
    return sparse.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(len(balls), g.n))


def lambda_threshold(g: WeightedGraph, u, B: Ball, q: float, C: float = LAMBDA_PRECONDITION_C) -> float:
    """``(C ||grad u||_q^q / V(B))^(1/q)``."""
    return (C * edge_lp_norm(g, gradient(g, u), q) ** q / volume(g, B)) ** (1.0 / q)


def cz_decompose(
    g: WeightedGraph,
    u,
    B: Ball,
    q: float,
    lam: float,
    C: float = LAMBDA_PRECONDITION_C,
    maximal: np.ndarray | None = None,
) -> CZDecomposition:
    """Calderon-Zygmund decomposition of ``u`` (supported in ``B``) at level ``lam``.

    ``maximal`` may pass a precomputed ``M(|grad u|^q)`` to reuse across a
    lambda grid; it must be exact above ``lambda^q`` (see the ``floor``
    argument of :func:`maximal_function`).
    """
    u = check_field(g, u).copy()
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    outside = np.ones(g.n, bool)
    outside[B.members] = False
    if np.any(u[outside] != 0):
        raise GraphError("u is not supported in the ball B")
    threshold = lambda_threshold(g, u, B, q, C)
    if not lam > threshold:
        raise GraphError(f"lambda {lam:.4g} does not exceed the threshold {threshold:.4g}")
    if maximal is None:
        maximal = maximal_function(g, vertex_density(g, np.abs(gradient(g, u)) ** q),
                                   floor=threshold**q)
    Omega = np.flatnonzero(maximal > lam**q)
    if Omega.size == g.n:
        raise GraphError("level set is the whole graph")
    if Omega.size == 0:
        z = np.zeros((0, g.n))
        return CZDecomposition(g, u, B, q, lam, Omega, [], z, np.zeros(0), z, u.copy(),
                               np.zeros(g.m), maximal, C)
    balls = whitney_cover(g, Omega)
    chi = cz_partition(g, balls, Omega)
    averages = np.array([(g.mu[b.members] @ u[b.members]) / g.mu[b.members].sum() for b in balls])
    bad = (u[None, :] - averages[:, None]) * chi
    good = u - bad.sum(axis=0)
    dec = CZDecomposition(g, u, B, q, lam, Omega, balls, chi, averages, bad, good,
                          np.zeros(g.m), maximal, C)
    dec.H = assemble_H(dec)
    return dec


def assemble_H(dec: CZDecomposition) -> np.ndarray:
    """Correction field with ``grad g = grad u * 1_F + H`` edge-wise.

    Edges inside ``Omega``: ``sum_m chi_m(e) sum_{i in I_m} (u_{B_i} - u_{B_m}) grad chi_i(e)``
    with ``chi_m(e)`` the endpoint average and ``I_m`` the balls meeting the
    one-step neighbourhood of ``B_m``.  Edges from ``x`` in ``Omega`` to ``y``
    in ``F``: ``sum_i chi_i(x) (u(y) - u_{B_i}) / l`` (oriented ``x -> y``).
    Edges inside ``F`` carry zero.
    """
    g = dec.graph
    H = np.zeros(g.m)
    if not dec.balls:
        return H
    inside = ~dec.F_mask
    a, b = g.edges.T
    interior = inside[a] & inside[b]
    crossing = inside[a] ^ inside[b]

    A = _membership(g, dec.balls)
    near = (A @ (g.adjacency != 0).astype(float) + A) > 0
    P = ((A @ near.T.astype(float)) > 0).astype(float).tocsr()
    uB = dec.averages

    ea, eb, el = a[interior], b[interior], g.lengths[interior]
    dchi = (dec.chi[:, eb] - dec.chi[:, ea]) / el
    chi_e = 0.5 * (dec.chi[:, ea] + dec.chi[:, eb])
    X = P @ (uB[:, None] * dchi)
    Y = P @ dchi
    H[interior] = np.sum(chi_e * (X - uB[:, None] * Y), axis=0)

    ca, cb, cl = a[crossing], b[crossing], g.lengths[crossing]
    x_in = inside[ca]
    x = np.where(x_in, ca, cb)
    y = np.where(x_in, cb, ca)
    sign = np.where(x_in, 1.0, -1.0)
    vals = np.sum(dec.chi[:, x] * (dec.u[y][None, :] - uB[:, None]), axis=0) / cl
    H[crossing] = sign * vals
    return H


@dataclass
class CZPropertyReport:
    """Outcome of every decomposition property, with measured constants."""

    passed: dict
    c2: float
    c_grad_g: float
    c3a: float
    c3b: float
    c4: float
    N: int
    radius_ratio_range: tuple
    property7: bool
    sum_identity_error: float
    edge_identity_error: float
    partition_gradient: float
    poincare_ratios: list = field(default_factory=list)
    params: dict = field(default_factory=dict)

    @property
    def all_passed(self) -> bool:
        return all(self.passed.values())

    def to_dict(self) -> dict:
        return {
            "passed": {k: bool(v) for k, v in self.passed.items()},
            "all_passed": bool(self.all_passed),
            "c2": self.c2,
            "c_grad_g": self.c_grad_g,
            "c3a": self.c3a,
            "c3b": self.c3b,
            "c4": self.c4,
            "N": self.N,
            "radius_ratio_range": list(self.radius_ratio_range),
            "property7": bool(self.property7),
            "sum_identity_error": self.sum_identity_error,
            "edge_identity_error": self.edge_identity_error,
            "partition_gradient": self.partition_gradient,
            "poincare_ratios": list(self.poincare_ratios),
            "params": self.params,
        }


def verify_cz(dec: CZDecomposition, sum_tol: float = 1e-10, edge_tol: float = 1e-9) -> CZPropertyReport:
    g, u, q, lam = dec.graph, dec.u, dec.q, dec.lam
    scale = max(1.0, float(np.abs(u).max(initial=0.0)))
    residual = u - dec.good_part - dec.bad_parts.sum(axis=0)
    sum_err = float(g.mu @ np.abs(residual)) / scale

    grad_u = gradient(g, u)
    grad_g = gradient(g, dec.good_part)
    F = dec.F_mask
    a, b = g.edges.T
    in_F = F[a] & F[b]
    edge_err = float(np.abs(grad_g - grad_u * in_F - dec.H).max(initial=0.0))
    edge_scale = max(1.0, float(np.abs(grad_u).max(initial=0.0)))
    edge_err /= edge_scale

    two_B = ball(g, dec.B.center, 2 * dec.B.radius).members
    in_2B = np.zeros(g.n, bool)
    in_2B[two_B] = True
    g_support_ok = bool(np.all(dec.good_part[~in_2B] == 0))
    omega_in_2B = bool(np.all(in_2B[dec.Omega]))
    c2 = float(np.abs(dec.H).max(initial=0.0)) / lam
    c_grad_g = float(np.abs(grad_g).max(initial=0.0)) / lam

    balls = dec.balls
    inside = ~F
    c3a = c3b = 0.0
    poincare = []
    support_ok = True
    balls_in_omega = True
    for i, bi in enumerate(balls):
        outside_i = np.ones(g.n, bool)
        outside_i[bi.members] = False
        support_ok &= bool(np.all(dec.bad_parts[i, outside_i] == 0))
        balls_in_omega &= bool(np.all(inside[bi.members]))
        gu_local = edge_lp_norm(g, grad_u, q, edge_mask(g, bi.members, "inner"))
        bnorm = lp_norm(g, dec.bad_parts[i], q)
        if gu_local > 0:
            c3a = max(c3a, bnorm / (bi.radius * gu_local))
            osc = lp_norm(g, u - dec.averages[i], q, where=bi.members)
            poincare.append(osc / (bi.radius * gu_local))
        grad_b = edge_lp_norm(g, gradient(g, dec.bad_parts[i]), q) ** q
        c3b = max(c3b, grad_b / (lam**q * volume(g, bi)))
    total_grad = edge_lp_norm(g, grad_u, q) ** q
    c4 = sum(volume(g, bi) for bi in balls) * lam**q / total_grad if total_grad > 0 else 0.0
    N = membership_overlap(g, balls)

    lo, hi = 1.0, 1.0
    radius_ok = True
    prop7 = True
    if balls:
        A = _membership(g, balls)
        meet = (A @ A.T).tocoo()
        radii = np.array([bi.radius for bi in balls])
        ratios = radii[meet.row] / radii[meet.col]
        lo, hi = float(ratios.min()), float(ratios.max())
        radius_ok = lo >= 1 / 3 - 1e-12 and hi <= 3 + 1e-12
        dF = distance_to_set(g, np.flatnonzero(F))
        prop7 = bool(np.all(dF[[bi.center for bi in balls]] < 3 * radii))

    finite = all(np.isfinite(c) for c in (c2, c_grad_g, c3a, c3b, c4))
    passed = {
        "1_sum_identity": sum_err <= sum_tol,
        "2_good_part": g_support_ok and edge_err <= edge_tol and np.isfinite(c2) and np.isfinite(c_grad_g),
        "3_bad_parts": support_ok and np.isfinite(c3a) and np.isfinite(c3b),
        "4_volume_sum": bool(np.isfinite(c4)),
        "5_overlap": N < np.inf,
        "6_radius_ratio": bool(radius_ok),
        "7_touch_complement": prop7,
        "omega_in_2B": omega_in_2B,
        "balls_in_omega": bool(balls_in_omega),
        "constants_finite": bool(finite),
    }
    return CZPropertyReport(
        passed=passed,
        c2=c2,
        c_grad_g=c_grad_g,
        c3a=c3a,
        c3b=c3b,
        c4=float(c4),
        N=N,
        radius_ratio_range=(lo, hi),
        property7=prop7,
        sum_identity_error=sum_err,
        edge_identity_error=edge_err,
        partition_gradient=partition_gradient_constant(g, balls, dec.chi),
        poincare_ratios=[float(x) for x in poincare],
        params=dec.to_dict(),
    )
