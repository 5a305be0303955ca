"""Lower bounds for best constants in Poincare, Hardy, Riesz and reverse Riesz inequalities.

Every estimator maximizes a ratio ``||A f|| / ||B f||`` of linear images of
test fields.  The images of all dictionary atoms are computed once; the
bound is the best atom, refined by coordinate ascent on a combination of
the top atoms.  Results are lower bounds for the true suprema, except the
``spectral-exact`` values at ``p = 2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
import numpy as np
from scipy import linalg, sparse
from scipy.sparse import linalg as splinalg

from .covering import AdmissibleCovering, localize
from .cz import LAMBDA_PRECONDITION_C
from .geometry import Ball, GraphError, WeightedGraph, ball, volume
from .spectral import (
    DENSE_CAP,
    QuadratureSettings,
    apply_function,
    check_field,
    edge_lp_norm,
    edge_mask,
    gradient,
    heat_apply,
    lp_norm,
    project_constants,
    resolve_method,
    split_TU_batch,
    sqrt_apply,
)

DEGENERATE_RTOL = 1e-12
ASCENT_ITERATIONS = 200
ASCENT_ATOMS = 8
LAMBDA_GRID_POINTS = 32
SQRT_TOL = 1e-12
TAGS = ("RRp", "Rp", "Hardy", "PoincareBall", "WeakType", "HardySum", "Diagonal")


@dataclass
class InequalityEstimate:
    """One measured constant; ``constant`` is a lower bound unless ``method == 'spectral-exact'``."""

    tag: str
    p: float
    constant: float
    method: str
    witness: np.ndarray
    q: float | None = None
    dictionary_bound: float | None = None
    context: dict = field(default_factory=dict)

    @property
    def lower_bound(self) -> bool:
        return self.method != "spectral-exact"

    def to_row(self, witness_file: str | None = None) -> dict:
        return {
            "tag": self.tag,
            "p": self.p,
            "q": self.q,
            "constant": self.constant,
            "method": self.method,
            "lower_bound": self.lower_bound,
            "dictionary_bound": self.dictionary_bound,
            "witness_file": witness_file,
            "context": self.context,
        }


# ----------------------------------------------------------------------
# test dictionary


@dataclass(frozen=True)
class TestDictionary:
    """Generator of witness fields.

    Scales are relative to ``L``, the largest ``r(x)`` over the region the
    fields live on: bump and tent radii are ``fraction * L``, heat times are
    ``fraction * L**2``.  Bump centres are drawn from the region with
    ``seed``.  Power profiles are ``(1 + r)^a`` cut off at ``fraction * L``.
    On graphs with end labels, signed copies (``+`` on one end, ``-`` on the
    other) of the radial profiles are added.
    """

    __test__ = False  # not a pytest class

    seed: int = 0
    n_centers: int = 6
    radii: tuple = (0.2, 0.4, 0.7)
    heat_times: tuple = (0.01, 0.05, 0.25)
    n_noise: int = 2
    powers: tuple = (-1.5, -1.0, -0.5, -0.25, 0.5, 1.0)
    cutoffs: tuple = (0.5, 1.0)
    signed_ends: bool = True

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(self).items()}

    def generate(self, g: WeightedGraph, region=None, dirichlet=None) -> tuple[np.ndarray, list]:
        """Atoms as columns of an ``(n, K)`` array plus labels.

        ``region`` restricts supports to a vertex set; ``dirichlet`` lists
        vertices forced to zero.  Constant or non-finite atoms are dropped.
        """
        rng = np.random.default_rng(self.seed)
        mask = np.ones(g.n, bool)
        if region is not None:
            mask[:] = False
            mask[np.asarray(region, dtype=np.int64)] = True
        if dirichlet is not None:
            mask[np.asarray(dirichlet, dtype=np.int64)] = False
        verts = np.flatnonzero(mask)
        if verts.size == 0:
            raise GraphError("empty region for the test dictionary")
        h = float(g.lengths.min(initial=1.0))
        base = g.basepoint
        dist_o = g.r
        if region is not None:
            # local radial coordinate around the region's most central vertex
            base = int(verts[np.argmin(dist_o[verts])]) if g.basepoint not in verts else g.basepoint
            dist_o = g.distances_from(base)
        L = max(float(dist_o[verts].max()), 2 * h)
        atoms, labels = [], []

        def add(v, label):
            v = np.where(mask, v, 0.0)
            if np.all(np.isfinite(v)) and np.ptp(v) > 0:
                atoms.append(v)
                labels.append(label)

        centers = rng.choice(verts, size=min(self.n_centers, verts.size), replace=False)
        centers = np.unique(np.r_[centers, [base] if mask[base] else []].astype(np.int64))
        for z in centers:
            d = g.distances_from(int(z))
            for frac in self.radii:
                rho = max(frac * L, 1.5 * h)
                tent = np.clip(1 - d / rho, 0, None)
                add(tent, f"tent(z={z},rho={rho:.3g})")
                add(tent**2 * (3 - 2 * tent), f"bump(z={z},rho={rho:.3g})")
        for k in range(self.n_noise):
            xi = np.where(mask, rng.standard_normal(g.n), 0.0)
            for frac in self.heat_times:
                t = frac * L * L
                add(heat_apply(g, xi, t), f"heat_noise(k={k},t={t:.3g})")
        for a in self.powers:
            for frac in self.cutoffs:
                cut = np.clip(1 - dist_o / (frac * L), 0, None)
                add((1 + dist_o) ** a * cut, f"power(a={a},cut={frac})")
        labels_end = g.metadata.get("end_labels")
        if self.signed_ends and labels_end is not None:
            sign = np.select([np.asarray(labels_end) == 0, np.asarray(labels_end) == 1], [1.0, -1.0], 0.0)
            for frac in self.cutoffs:
                cut = np.clip(1 - g.r / (frac * L), 0, None)
                for rho in (2 * h, 0.1 * L, 0.3 * L):
                    add(sign * np.minimum(1.0, g.r / rho) * cut, f"signed_ramp(rho={rho:.3g},cut={frac})")
                for a in self.powers:
                    add(sign * (1 + g.r) ** a * cut, f"signed_power(a={a},cut={frac})")
        if not atoms:
            raise GraphError("test dictionary produced no admissible field")
        return np.stack(atoms, axis=1), labels


# ----------------------------------------------------------------------
# ratio machinery


def _norm(x: np.ndarray, w: np.ndarray, p: float) -> np.ndarray:
    return (w @ np.abs(x) ** p) ** (1.0 / p)


@dataclass
class LinearRatio:
    """``(||num f||_{p_num} / ||den f||_{p_den})^power`` on combinations of atoms.

    Images are stored per atom, so a combination ``c`` costs two small
    matrix-vector products.  Fields whose gradient is negligible against the
    field itself are rejected (ratio ``-inf``).
    """

    atoms: np.ndarray
    num: np.ndarray
    num_w: np.ndarray
    den: np.ndarray
    den_w: np.ndarray
    p_num: float
    p_den: float
    grad: np.ndarray
    grad_w: np.ndarray
    field_w: np.ndarray
    p_grad: float
    power: float = 1.0

    def _check(self, gnorm, fnorm, dnorm):
        ok = (gnorm > DEGENERATE_RTOL * fnorm) & (dnorm > 0)
        return ok

    def atom_ratios(self) -> np.ndarray:
        n = _norm(self.num, self.num_w, self.p_num)
        d = _norm(self.den, self.den_w, self.p_den)
        gn = _norm(self.grad, self.grad_w, self.p_grad)
        fn = _norm(self.atoms, self.field_w, self.p_grad)
        ok = self._check(gn, fn, d)
        out = np.full(n.shape, -np.inf)
        out[ok] = (n[ok] / d[ok]) ** self.power
        return out

    def ratio(self, idx: np.ndarray, c: np.ndarray) -> float:
        n = float(_norm(self.num[:, idx] @ c, self.num_w, self.p_num))
        d = float(_norm(self.den[:, idx] @ c, self.den_w, self.p_den))
        gn = float(_norm(self.grad[:, idx] @ c, self.grad_w, self.p_grad))
        fn = float(_norm(self.atoms[:, idx] @ c, self.field_w, self.p_grad))
        if not self._check(gn, fn, d):
            return -np.inf
        return (n / d) ** self.power

    def maximize(self, k: int = ASCENT_ATOMS, iterations: int = ASCENT_ITERATIONS):
        """Best atom, then coordinate ascent with step halving on the top ``k`` atoms."""
        r = self.atom_ratios()
        if not np.any(np.isfinite(r)):
            raise GraphError("no admissible test field (all ratios degenerate)")
        dict_bound = float(r.max())
        order = np.argsort(-r, kind="stable")
        idx = order[: min(k, int(np.isfinite(r).sum()))]
        scale = _norm(self.atoms[:, idx], self.field_w, self.p_grad)
        c = np.zeros(idx.size)
        c[0] = 1.0 / scale[0]
        best = self.ratio(idx, c)
        step = 0.5
        for _ in range(iterations):
            improved = False
            for j in range(1, idx.size) if idx.size > 1 else ():
                for s in (step, -step):
                    trial = c.copy()
                    trial[j] += s / scale[j]
                    val = self.ratio(idx, trial)
                    if val > best * (1 + 1e-14):
                        c, best, improved = trial, val, True
                        break
            if not improved:
                step /= 2
                if step < 1e-6:
                    break
        witness = self.atoms[:, idx] @ c
        return dict_bound, best, witness


def _sqrt_images(g: WeightedGraph, F: np.ndarray, method: str = "auto") -> np.ndarray:
    return apply_function(g, project_constants(g, F), np.sqrt, method, tol=SQRT_TOL)


def _grad_ratio(g: WeightedGraph, F: np.ndarray, num, num_w, den, den_w, p, power=1.0,
                p_num=None, p_den=None) -> LinearRatio:
    G = gradient(g, F)
    return LinearRatio(F, num, num_w, den, den_w, p_num or p, p_den or p, G, g.edge_measure,
                       g.mu, p, power)


def evaluate_ratio(g: WeightedGraph, tag: str, f, p: float, context: dict | None = None) -> float:
    """Ratio of one field for the inequality ``tag``; used to re-check witnesses."""
    context = context or {}
    f = check_field(g, f)
    if tag == "RRp":
        return lp_norm(g, sqrt_apply(g, project_constants(g, f), tol=SQRT_TOL), p) / edge_lp_norm(g, gradient(g, f), p)
    if tag == "Rp":
        return edge_lp_norm(g, gradient(g, f), p) / lp_norm(g, sqrt_apply(g, project_constants(g, f), tol=SQRT_TOL), p)
    if tag == "Hardy":
        num = np.sum(g.mu * (np.abs(f) / (1 + g.r)) ** p)
        return float(num / edge_lp_norm(g, gradient(g, f), p) ** p)
    if tag == "PoincareBall":
        B = ball(g, context["center"], context["radius"])
        m = B.members
        fb = (g.mu[m] @ f[m]) / g.mu[m].sum()
        num = lp_norm(g, f - fb, p, where=m)
        return num / (B.radius * edge_lp_norm(g, gradient(g, f), p, edge_mask(g, m, "inner")))
    raise ValueError(f"no direct ratio for tag {tag!r}")


def _estimate(tag, g, problem: LinearRatio, p, dictionary, context, method_default="ascent"):
    dict_bound, best, witness = problem.maximize()
    method = "ascent" if best > dict_bound else "dictionary"
    ctx = {"graph": dict(g.metadata.get("params", {})), "builder": g.metadata.get("builder"),
           "dictionary": dictionary.to_dict(), "n_atoms": int(problem.atoms.shape[1]), **context}
    return InequalityEstimate(tag, p, float(best), method, witness, None, dict_bound, ctx)


# ----------------------------------------------------------------------
# Poincare


def _neumann_second_eigenvalue(g: WeightedGraph, members: np.ndarray) -> tuple[float, np.ndarray]:
    S = members
    a, b = g.edges.T
    inner = edge_mask(g, S, "inner")
    pos = -np.ones(g.n, dtype=np.int64)
    pos[S] = np.arange(S.size)
    ea, eb, w = pos[a[inner]], pos[b[inner]], g.weights[inner]
    K = sparse.coo_matrix((np.r_[w, w, -w, -w], (np.r_[ea, eb, ea, eb], np.r_[ea, eb, eb, ea])),
                          shape=(S.size, S.size)).toarray()
    lam, vec = linalg.eigh(K, np.diag(g.mu[S]))
    return float(max(lam[1], 0.0)), vec[:, 1]


def poincare_constant(
    g: WeightedGraph, b: Ball, p: float, dictionary: TestDictionary | None = None
) -> InequalityEstimate:
    """Best ``C`` in ``||f - f_B||_{L^p(B)} <= C r ||grad f||_{L^p(B)}`` (edges inside ``B``).

    ``p = 2`` is solved exactly by the Neumann eigenproblem on the ball
    subgraph: ``C = 1 / (r sqrt(lambda_2))``.  A disconnected ball subgraph
    gives ``C = inf``.
    """
    dictionary = dictionary or TestDictionary()
    m = np.asarray(b.members)
    if m.size < 2:
        raise GraphError("Poincare constant needs a ball with at least two vertices")
    context = {"center": int(b.center), "radius": float(b.radius), "size": int(m.size)}
    if p == 2:
        lam2, vec = _neumann_second_eigenvalue(g, m)
        witness = np.zeros(g.n)
        witness[m] = vec
        if lam2 <= 1e-12:
            context["disconnected"] = True
            return InequalityEstimate("PoincareBall", p, math.inf, "spectral-exact", witness,
                                      context=context)
        return InequalityEstimate("PoincareBall", p, 1.0 / (b.radius * math.sqrt(lam2)),
                                  "spectral-exact", witness, context=context)
    F, _ = dictionary.generate(g, region=m)
    mu_m = g.mu[m]
    osc = F[m] - (mu_m @ F[m]) / mu_m.sum()
    inner = edge_mask(g, m, "inner")
    G = gradient(g, F)
    problem = LinearRatio(F, osc, mu_m, b.radius * G[inner], g.edge_measure[inner], p, p,
                          G[inner], g.edge_measure[inner], g.mu, p)
    return _estimate("PoincareBall", g, problem, p, dictionary, context)


# ----------------------------------------------------------------------
# Hardy


def hardy_weight(g: WeightedGraph) -> np.ndarray:
    return 1.0 / (1.0 + g.r)


def _hardy_exact(g: WeightedGraph, dirichlet: np.ndarray) -> tuple[float, np.ndarray]:
    free = np.ones(g.n, bool)
    free[dirichlet] = False
    idx = np.flatnonzero(free)
    if idx.size == 0:
        raise GraphError("every vertex is a Dirichlet vertex")
    K = g.stiffness.tocsr()[idx][:, idx].tocsc()
    W = sparse.diags(g.mu[idx] * hardy_weight(g)[idx] ** 2).tocsc()
    if idx.size <= DENSE_CAP:
        lam, vec = linalg.eigh(K.toarray(), W.toarray(), subset_by_index=[0, 0])
        lam0, v0 = float(lam[0]), vec[:, 0]
    else:
        import pyamg

        ml = pyamg.smoothed_aggregation_solver(K.tocsr())
        M = ml.aspreconditioner()
        rng = np.random.default_rng(0)
        X = rng.random((idx.size, 1)) + 0.5
        lam, vec = splinalg.lobpcg(K, X, B=W, M=M, largest=False, tol=1e-9, maxiter=500)
        lam0, v0 = float(lam[0]), vec[:, 0]
    witness = np.zeros(g.n)
    witness[idx] = v0
    return lam0, witness


def hardy_constant(
    g: WeightedGraph, p: float, dictionary: TestDictionary | None = None, exact: bool = True
) -> InequalityEstimate:
    """Best ``C`` in ``sum mu (|f|/(1 + r))^p <= C sum m_e |grad f|^p``.

    Fields vanish on ``metadata['boundary']`` (Dirichlet), so the finite box
    stands in for the whole space.  At ``p = 2`` (with ``exact``) the value
    is ``1 / lambda_min`` of ``K f = lambda diag(mu / (1 + r)^2) f``.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    dictionary = dictionary or TestDictionary()
    dirichlet = np.asarray(g.boundary, dtype=np.int64)
    context = {"dirichlet_vertices": int(dirichlet.size)}
    if p == 2 and exact:
        lam0, witness = _hardy_exact(g, dirichlet)
        witness /= max(np.abs(witness).max(), 1e-300)
        est = InequalityEstimate("Hardy", p, 1.0 / lam0, "spectral-exact", witness, context=context)
        est.dictionary_bound = None
        return est
    F, _ = dictionary.generate(g, dirichlet=dirichlet)
    weighted = F * hardy_weight(g)[:, None]
    problem = _grad_ratio(g, F, weighted, g.mu, gradient(g, F), g.edge_measure, p, power=p)
    return _estimate("Hardy", g, problem, p, dictionary, context)


# ----------------------------------------------------------------------
# Riesz and reverse Riesz


def _riesz_problem(g, F, p, reverse: bool, method="auto") -> LinearRatio:
    grad = gradient(g, F)
    root = _sqrt_images(g, F, method)
    if reverse:
        return _grad_ratio(g, F, root, g.mu, grad, g.edge_measure, p)
    return _grad_ratio(g, F, grad, g.edge_measure, root, g.mu, p)


def reverse_riesz_constant(
    g: WeightedGraph, p: float, dictionary: TestDictionary | None = None, method: str = "auto"
) -> InequalityEstimate:
    """Lower bound for ``sup ||Lap^(1/2) f||_p / ||grad f||_p``."""
    if p < 1:
        raise ValueError("p must be >= 1")
    dictionary = dictionary or TestDictionary()
    F, _ = dictionary.generate(g)
    problem = _riesz_problem(g, F, p, reverse=True, method=method)
    return _estimate("RRp", g, problem, p, dictionary, {"sqrt": resolve_method(g, method)})


def riesz_constant(
    g: WeightedGraph, p: float, dictionary: TestDictionary | None = None, method: str = "auto"
) -> InequalityEstimate:
    """Lower bound for ``sup ||grad f||_p / ||Lap^(1/2) f||_p``."""
    if not p > 1:
        raise ValueError("p must be > 1")
    dictionary = dictionary or TestDictionary()
    F, _ = dictionary.generate(g)
    problem = _riesz_problem(g, F, p, reverse=False, method=method)
    return _estimate("Rp", g, problem, p, dictionary, {"sqrt": resolve_method(g, method)})


# ----------------------------------------------------------------------
# weak type, diagonal and assembly


def measure_weak_type(
    g: WeightedGraph, phi, B: Ball, q: float, lambda_grid=None, C: float = LAMBDA_PRECONDITION_C
) -> InequalityEstimate:
    """``sup_lambda lambda^q mu{x in 4B : |Lap^(1/2) phi| > lambda} / ||grad phi||_q^q``.

    The default grid has 32 log-spaced points from the threshold
    ``(C ||grad phi||_q^q / V(B))^(1/q)`` to ``max_{4B} |Lap^(1/2) phi|``.
    """
    phi = check_field(g, phi)
    outside = np.ones(g.n, bool)
    outside[B.members] = False
    if np.any(phi[outside] != 0):
        raise GraphError("phi is not supported in B")
    grad_q = edge_lp_norm(g, gradient(g, phi), q) ** q
    context = {"center": int(B.center), "radius": float(B.radius), "C": C}
    if grad_q == 0:
        return InequalityEstimate("WeakType", q, 0.0, "measured", phi, q, context=context)
    four = ball(g, B.center, 4 * B.radius).members
    S = np.abs(sqrt_apply(g, project_constants(g, phi)))[four]
    mu4 = g.mu[four]
    threshold = (C * grad_q / volume(g, B)) ** (1 / q)
    if lambda_grid is None:
        top = float(S.max())
        if not top > threshold:
            raise GraphError("empty lambda grid: threshold exceeds max |Lap^(1/2) phi| on 4B")
        lambda_grid = np.geomspace(threshold, top, LAMBDA_GRID_POINTS)
    lambda_grid = np.asarray(lambda_grid, dtype=float)
    if lambda_grid.size == 0:
        raise GraphError("empty lambda grid")
    level = np.array([mu4[S > lam].sum() for lam in lambda_grid])
    values = lambda_grid**q * level / grad_q
    k = int(np.argmax(values))
    context.update(threshold=threshold, grid=lambda_grid.tolist(), values=values.tolist(),
                   argmax=k, grid_size=int(lambda_grid.size))
    return InequalityEstimate("WeakType", q, float(values[k]), "measured", phi, q, context=context)


def _four_balls(cov: AdmissibleCovering) -> list[np.ndarray]:
    return [ball(cov.graph, b.center, 4 * b.radius).members for b in cov.balls]


def _parts_dense(cov: AdmissibleCovering, f: np.ndarray, alphas) -> np.ndarray:
    parts = localize(cov, f)
    return parts[alphas].toarray().T  # (n, len(alphas))


def measure_diagonal(
    g: WeightedGraph, cov: AdmissibleCovering, f, p: float, alphas=None
) -> InequalityEstimate:
    """``max_alpha ||Lap^(1/2) f_a||_{L^p(4B_a)}^p / ||grad f_a||_{L^p(B_a)}^p``.

    The gradient of ``f_a`` is summed over edges touching ``B_a`` (its whole
    support).  ``alphas`` restricts the balls, which keeps large graphs tractable.
    """
    if not 1 < p <= 2:
        raise ValueError("diagonal estimate needs p in (1, 2]")
    f = check_field(g, f)
    alphas = np.arange(len(cov.balls)) if alphas is None else np.asarray(alphas, dtype=np.int64)
    F = _parts_dense(cov, f, alphas)
    roots = sqrt_apply(g, project_constants(g, F))
    grads = gradient(g, F)
    ratios = np.full(alphas.size, np.nan)
    for k, a in enumerate(alphas):
        B = cov.balls[a]
        den = edge_lp_norm(g, grads[:, k], p, edge_mask(g, B.members, "touching")) ** p
        if den <= DEGENERATE_RTOL * max(lp_norm(g, F[:, k], p), 1e-300) ** p:
            continue
        four = ball(g, B.center, 4 * B.radius).members
        ratios[k] = lp_norm(g, roots[:, k], p, where=four) ** p / den
    if np.all(np.isnan(ratios)):
        return InequalityEstimate("Diagonal", p, 0.0, "measured", f, context={"skipped": "all"})
    k = int(np.nanargmax(ratios))
    context = {"alpha": int(alphas[k]), "n_alpha": int(alphas.size),
               "ratios_finite": bool(np.all(np.isfinite(ratios[~np.isnan(ratios)]))),
               "covering": {"r0": cov.r0, "n_balls": len(cov.balls)}}
    return InequalityEstimate("Diagonal", p, float(ratios[k]), "measured", F[:, k].copy(),
                              context=context)


@dataclass
class AssemblyTerms:
    """Pieces of the chain ``||Lap^(1/2) f||_p <= diag + T + U`` and the Hardy sum, relative to ``||grad f||_p``."""

    direct_ratio: float
    pipeline_ratio: float
    diagonal: float
    off_T: float
    off_U: float
    hardy_sum: float
    hardy_sum_lp: float
    radius_constant: float
    radius_check: bool

    def to_dict(self) -> dict:
        return dict(vars(self))


def hardy_sum_bound(
    g: WeightedGraph,
    cov: AdmissibleCovering,
    f,
    p: float,
    settings: QuadratureSettings | None = None,
) -> InequalityEstimate:
    """Hardy sum ``sum_a ||f_a / r_a||_p / ||grad f||_p`` and the covering assembly of ``Lap^(1/2) f``.

    The assembled field is ``sum_a [1_{4B_a} Lap^(1/2) f_a + 1_{M-4B_a} (T_a + U_a) f_a]``
    with the splitting at ``r_a^2``; its norm is compared with the direct
    ``||Lap^(1/2) f||_p``.  Sums of norms are reported literally and as
    ``l^p`` sums.  ``radius_constant`` is ``max (r(x) + 1) / r_a`` over
    ``x`` in ``B_a``.  Dense eigenbasis only.
    """
    f = check_field(g, f)
    grad = edge_lp_norm(g, gradient(g, f), p)
    if grad == 0:
        raise GraphError("grad f = 0: Hardy-sum ratio undefined")
    if g.n > DENSE_CAP:
        raise GraphError(f"assembly pipeline needs the dense eigenbasis (n = {g.n} > {DENSE_CAP})")
    radii = cov.radii
    parts = localize(cov, f)
    part_norms = np.asarray(abs(parts).power(p) @ g.mu).ravel() ** (1 / p) / radii
    hardy_sum = float(part_norms.sum() / grad)
    hardy_lp = float(np.sum(part_norms**p) ** (1 / p) / grad)
    rad_c = max(float(((g.r[b.members] + 1) / b.radius).max()) for b in cov.balls)

    base = settings or QuadratureSettings()
    eps, R = base.resolve(g)
    eps = min(eps, 0.5 * float(radii.min()) ** 2)
    settings = QuadratureSettings(eps=eps, R=max(R, 2 * float(radii.max()) ** 2), nodes=base.nodes,
                                  tail_correction=base.tail_correction, tol=base.tol)
    F = parts.toarray().T
    T, U = split_TU_batch(g, F, radii, settings)
    roots = T + U
    inside4 = np.zeros((g.n, len(cov.balls)), bool)
    for a, members in enumerate(_four_balls(cov)):
        inside4[members, a] = True
    def col_norms(X):
        return (g.mu @ np.abs(X) ** p) ** (1 / p)

    diag = col_norms(np.where(inside4, roots, 0.0))
    offT = col_norms(np.where(inside4, 0.0, T))
    offU = col_norms(np.where(inside4, 0.0, U))
    assembled = np.where(inside4, roots, T + U).sum(axis=1)
    direct = sqrt_apply(g, project_constants(g, f))
    terms = AssemblyTerms(
        direct_ratio=lp_norm(g, direct, p) / grad,
        pipeline_ratio=lp_norm(g, assembled, p) / grad,
        diagonal=float(diag.sum() / grad),
        off_T=float(offT.sum() / grad),
        off_U=float(offU.sum() / grad),
        hardy_sum=hardy_sum,
        hardy_sum_lp=hardy_lp,
        radius_constant=rad_c,
        radius_check=bool(np.isfinite(rad_c)),
    )
    context = {"terms": terms.to_dict(), "quadrature": settings.to_dict(),
               "covering": {"r0": cov.r0, "n_balls": len(cov.balls)}}
    return InequalityEstimate("HardySum", p, hardy_sum, "measured", f, context=context)
