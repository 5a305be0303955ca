"""Admissible-ball covering of the whole graph with a tent partition of unity.

``B_0 = B(o, r0)`` is anchored; every other ball is centred at a greedy net
point ``x`` (visited by decreasing ``r(x)``) with radius
``RADIUS_FACTOR * r(x)``, at the lower edge of the band
``2^-10 r(x) <= r_alpha <= 2^-9 r(x)``.  The net covers everything outside
``B(o, r0/2)``, where ``chi_0`` ramps linearly from 1 down to 0 at ``r0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .geometry import Ball, GraphError, WeightedGraph, ball, classify_ball
from .spectral import check_field, edge_lp_norm, gradient

RADIUS_FACTOR = 2.0**-10
BAND = (2.0**-10, 2.0**-9)
REMOTE_DILATION = 14.0
ANCHOR_PLATEAU = 0.5  # chi_0 = 1 on B(o, ANCHOR_PLATEAU * r0)
_BAND_TOL = 1e-12


@dataclass(eq=False)
class AdmissibleCovering:
    """Balls (``B_0`` first) and partition of unity; ``chi`` is sparse with one row per ball."""

    graph: WeightedGraph
    balls: list
    chi: sparse.csr_matrix
    r0: float
    radius_factor: float = RADIUS_FACTOR
    enlargements: int = 0

    @property
    def radii(self) -> np.ndarray:
        return np.array([b.radius for b in self.balls])

    @property
    def overlap_N(self) -> int:
        """Largest number of balls containing a single vertex."""
        A = membership_matrix(self.graph, self.balls)
        return int(np.asarray(A.sum(axis=0)).max())

    @property
    def max_meeting(self) -> int:
        """Max over balls of the number of balls meeting it (itself included)."""
        A = membership_matrix(self.graph, self.balls)
        meets = (A @ A.T) > 0
        return int(np.asarray(meets.sum(axis=1)).max())

    def chi_field(self, alpha: int) -> np.ndarray:
        return self.chi.getrow(alpha).toarray().ravel()

    def to_dict(self) -> dict:
        return {
            "r0": self.r0,
            "radius_factor": self.radius_factor,
            "enlargements": self.enlargements,
            "n_balls": len(self.balls),
            "overlap_N": self.overlap_N,
            "balls": [b.to_dict() for b in self.balls],
            "graph": dict(self.graph.metadata.get("params", {})),
        }


def membership_matrix(g: WeightedGraph, balls: list) -> sparse.csr_matrix:
    rows = np.concatenate([np.full(b.members.size, i) for i, b in enumerate(balls)])
    cols = np.concatenate([b.members for b in balls])
    return sparse.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(len(balls), g.n))


def _anchored_partition(g: WeightedGraph, balls: list) -> sparse.csr_matrix:
    """``chi_0`` is a ramp on ``B_0``; the net-ball tents share ``1 - chi_0``."""
    B0, rest = balls[0], balls[1:]
    chi0 = np.clip((1.0 - g.r / B0.radius) / (1.0 - ANCHOR_PLATEAU), 0.0, 1.0)
    chi0[np.setdiff1d(np.arange(g.n), B0.members)] = 0.0
    rows, cols, vals = [], [], []
    for i, b in enumerate(rest):
        if b.members.size == 1:
            d = np.zeros(1)
        else:
            d = g.local_distances(b.center, b.radius)[b.members]
        rows.append(np.full(b.members.size, i))
        cols.append(b.members)
        vals.append(1.0 - d / b.radius)
    if rest:
        phi = sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(len(rest), g.n),
        )
    else:
        phi = sparse.csr_matrix((0, g.n))
    total = np.asarray(phi.sum(axis=0)).ravel()
    if np.any((total <= 0) & (chi0 < 1)):
        raise GraphError("covering leaves vertices uncovered")
    share = np.divide(1.0 - chi0, total, out=np.zeros(g.n), where=total > 0)
    return sparse.vstack([sparse.csr_matrix(chi0[None, :]), phi @ sparse.diags(share)]).tocsr()


def _net_balls(g: WeightedGraph, B0: Ball, factor: float) -> list:
    covered = g.r <= ANCHOR_PLATEAU * B0.radius
    order = np.lexsort((np.arange(g.n), -g.r))
    balls = []
    for x in order:
        if covered[x]:
            continue
        radius = factor * g.r[x]
        b = ball(g, int(x), radius, B0.radius)
        if b.members.size == 0:
            # radius below every positive distance still keeps the open ball's center
            b = Ball(int(x), float(radius), np.array([x]), b.classification)
        covered[b.members] = True
        balls.append(b)
    return balls


def admissible_cover(
    g: WeightedGraph, r0: float | None = None, radius_factor: float = RADIUS_FACTOR,
    max_enlargements: int = 64,
) -> AdmissibleCovering:
    """Covering by ``B(o, r0)`` plus remote balls whose 14-fold dilates are remote.

    Net balls whose 14-dilate is not remote are absorbed by enlarging ``r0``
    to swallow their centres, and the net is rebuilt.
    """
    r0 = g.default_r0 if r0 is None else float(r0)
    if not r0 > 0:
        raise GraphError("r0 must be positive")
    if not radius_factor > 0:
        raise GraphError("radius factor must be positive")
    for attempt in range(max_enlargements + 1):
        B0 = ball(g, g.basepoint, r0, r0)
        if B0.members.size == g.n:
            # no ramp needed when B_0 already holds the whole graph
            chi = sparse.csr_matrix(np.ones((1, g.n)))
            return AdmissibleCovering(g, [B0], chi, r0, radius_factor, attempt)
        balls = _net_balls(g, B0, radius_factor)
        bad = [b for b in balls if not REMOTE_DILATION * b.radius <= g.r[b.center] / 2]
        if not bad:
            all_balls = [B0, *balls]
            return AdmissibleCovering(g, all_balls, _anchored_partition(g, all_balls), r0,
                                      radius_factor, attempt)
        r0 = max(g.r[b.center] for b in bad) + min(g.lengths)
    raise GraphError(f"14B-remote property not reached after {max_enlargements} enlargements of r0")


@dataclass
class CoveringReport:
    covered: bool
    admissible: bool
    overlap_N: int
    max_meeting: int
    meeting_counts: dict
    partition_error: float
    chi_in_unit_interval: bool
    support_ok: bool
    gradient_constant: float
    radius_band: bool
    remote14: bool
    passed: dict = field(default_factory=dict)

    @property
    def all_passed(self) -> bool:
        return all(self.passed.values())

    def to_dict(self) -> dict:
        out = dict(vars(self))
        out["meeting_counts"] = {str(k): v for k, v in self.meeting_counts.items()}
        out["passed"] = {k: bool(v) for k, v in self.passed.items()}
        out["all_passed"] = bool(self.all_passed)
        return out


def verify_covering(cov: AdmissibleCovering, partition_tol: float = 1e-12) -> CoveringReport:
    g, balls = cov.graph, cov.balls
    A = membership_matrix(g, balls)
    multiplicity = np.asarray(A.sum(axis=0)).ravel()
    covered = bool(np.all(multiplicity > 0))
    admissible = all("admissible" in classify_ball(g, b.center, b.radius, cov.r0) for b in balls)
    N = int(multiplicity.max())

    in_ball = {}
    for R in (cov.r0, 2 * cov.r0, float(g.r.max()) + 1):
        inside = g.r < R
        in_ball[R] = int(np.sum(A[:, inside].sum(axis=1) > 0))

    chi = cov.chi
    partition_error = float(np.abs(np.asarray(chi.sum(axis=0)).ravel() - 1).max())
    chi_range = bool(chi.data.min(initial=0.0) >= 0 and chi.data.max(initial=0.0) <= 1 + 1e-15)
    support_ok = bool(((chi != 0).astype(int) - (chi != 0).multiply(A)).nnz == 0)

    grads = (sparse.diags(1.0 / g.lengths) @ abs(g.incidence @ chi.T)).tocsc()
    gmax = np.asarray(grads.max(axis=0).todense()).ravel()
    gradient_constant = float(np.max(gmax * cov.radii))

    lo, hi = BAND
    band = all(
        lo * g.r[b.center] * (1 - _BAND_TOL) <= b.radius <= hi * g.r[b.center] * (1 + _BAND_TOL)
        for b in balls[1:]
    )
    remote14 = all(REMOTE_DILATION * b.radius <= g.r[b.center] / 2 for b in balls[1:])
    passed = {
        "1_admissible": admissible,
        "2_locally_finite": N < np.inf,
        "3_finite_near_o": all(v < np.inf for v in in_ball.values()),
        "4_partition": covered and partition_error <= partition_tol and chi_range and support_ok
        and np.isfinite(gradient_constant),
        "5_radius_band": band,
        "remote_14B": remote14,
        "anchored_B0": balls[0].center == g.basepoint and balls[0].radius == cov.r0,
    }
    return CoveringReport(covered, admissible, N, cov.max_meeting, in_ball,
                          partition_error, chi_range, support_ok, gradient_constant, band,
                          remote14, passed)


def localize(cov: AdmissibleCovering, f) -> sparse.csr_matrix:
    """Rows ``f_alpha = chi_alpha f``; they sum to ``f``."""
    f = check_field(cov.graph, f)
    return cov.chi.multiply(f[None, :]).tocsr()


@dataclass
class LeibnizReport:
    """Best per-ball constants in ``||grad f_a||_p <= C (||f_a / r_a||_p + ||grad f||_{L^p(B_a)})``."""

    p: float
    per_alpha: np.ndarray
    max_constant: float
    aggregate_lp: float
    aggregate_sum: float
    edge_multiplicity: int
    overlap_bound: float
    edgewise_ok: bool

    def to_dict(self) -> dict:
        out = dict(vars(self))
        out["per_alpha"] = [float(x) for x in self.per_alpha]
        return out


def gradient_leibniz_bound(cov: AdmissibleCovering, f, p: float) -> LeibnizReport:
    """Product-rule bound per ball plus the overlap aggregate.

    Local gradient norms use edges with both endpoints in the ball.  The
    aggregate ``(sum_a ||grad f||_{L^p(B_a)}^p)^(1/p) / ||grad f||_p`` is at
    most ``k^(1/p)`` with ``k`` the largest number of balls holding a single
    edge (``k <= N``); the literal sum of norms is reported alongside.
    """
    g = cov.graph
    if p < 1:
        raise ValueError("p must be >= 1")
    f = check_field(g, f)
    grad_f = gradient(g, f)
    total = edge_lp_norm(g, grad_f, p)
    a, b = g.edges.T
    chi = cov.chi
    A = membership_matrix(g, cov.balls).tocsc()
    inner = A[:, a].multiply(A[:, b]).tocsr()  # ball x edge, both endpoints inside
    edge_count = np.asarray(inner.sum(axis=0)).ravel()
    local_p = inner @ (g.edge_measure * np.abs(grad_f) ** p)

    inv_len = sparse.diags(1.0 / g.lengths)
    parts = localize(cov, f)
    grad_parts = (inv_len @ (g.incidence @ parts.T)).tocoo()  # edge x ball
    grad_chi = (inv_len @ (g.incidence @ chi.T)).tocsc()
    chi_lip = np.asarray(abs(grad_chi).max(axis=0).todense()).ravel()

    num_p = np.bincount(grad_parts.col, g.edge_measure[grad_parts.row]
                        * np.abs(grad_parts.data) ** p, len(cov.balls))
    part_p = np.asarray(abs(parts).power(p) @ g.mu).ravel() / cov.radii**p
    denom = part_p ** (1 / p) + local_p ** (1 / p)
    num = num_p ** (1 / p)
    per = np.divide(num, denom, out=np.zeros_like(num), where=denom > 0)

    e, al = grad_parts.row, grad_parts.col
    edgewise = True
    if e.size:
        chi_csr = chi.tocsr()
        chi_a = np.asarray(chi_csr[al, a[e]]).ravel()
        chi_b = np.asarray(chi_csr[al, b[e]]).ravel()
        bound = chi_lip[al] * np.maximum(abs(f[a[e]]), abs(f[b[e]])) + np.maximum(
            chi_a, chi_b) * abs(grad_f[e])
        edgewise = bool(np.all(np.abs(grad_parts.data) <= bound * (1 + 1e-12) + 1e-300))

    k = int(edge_count.max(initial=1))
    if total > 0:
        agg_lp = float(np.sum(local_p) ** (1 / p) / total)
        agg_sum = float(np.sum(local_p ** (1 / p)) / total)
    else:
        agg_lp = agg_sum = 0.0
    return LeibnizReport(p, per, float(per.max(initial=0.0)), agg_lp, agg_sum, k,
                         float(max(k, 1) ** (1 / p)), edgewise)
