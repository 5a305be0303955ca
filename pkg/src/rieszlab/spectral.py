"""Graph Laplacian, heat semigroup and square root of the Laplacian.

Conventions: a scalar field is an ``(n,)`` array aligned with the vertex order
(or an ``(n, k)`` array of ``k`` fields); an edge field is an ``(m,)`` array on
edges oriented ``a -> b``.  The Laplacian is

    (Lap u)(x) = mu(x)**-1 * sum_{y ~ x} w_xy (u(x) - u(y)),

self-adjoint and nonnegative in L^2(mu).  Functions of the Laplacian are
evaluated either in a cached dense mu-orthonormal eigenbasis (small graphs)
or by Lanczos on the symmetrized operator ``M^-1/2 K M^-1/2`` (large graphs).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import linalg as splinalg

from .geometry import GraphError, WeightedGraph

DENSE_CAP = 3000
KRYLOV_TOL = 1e-8
GAUSSIAN_RATE = 5.0
SQRT_PI = math.sqrt(math.pi)


class SpectralCapError(GraphError):
    """Dense eigendecomposition requested above the configured vertex cap."""


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (achieved relative change {residual:.3e})")
        self.residual = residual


def check_field(g: WeightedGraph, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape[:1] != (g.n,) or u.ndim > 2:
        raise GraphError(f"field of shape {u.shape} is not aligned with {g.n} vertices")
    if not np.all(np.isfinite(u)):
        raise GraphError("field has non-finite values")
    return u


def _col(v: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Reshape a per-vertex vector to broadcast against ``u``."""
    return v if u.ndim == 1 else v[:, None]


# ----------------------------------------------------------------------
# local operators


def laplacian_apply(g: WeightedGraph, u) -> np.ndarray:
    u = check_field(g, u)
    return (g.stiffness @ u) / _col(g.mu, u)


def gradient(g: WeightedGraph, u) -> np.ndarray:
    """Edge field ``(u(b) - u(a)) / l_e``."""
    u = check_field(g, u)
    return (g.incidence @ u) / _col(g.lengths, u)


def inner(g: WeightedGraph, u, v) -> float:
    """L^2(mu) inner product."""
    return float(np.sum(g.mu * u * v))


def lp_norm(g: WeightedGraph, v, p: float, where=None) -> float:
    """``(sum_x mu(x) |v(x)|^p)^(1/p)``, optionally over a vertex subset."""
    v = np.asarray(v, dtype=float)
    mu = g.mu
    if where is not None:
        v, mu = v[where], mu[where]
    if np.isinf(p):
        return float(np.max(np.abs(v), initial=0.0))
    return float(np.sum(mu * np.abs(v) ** p) ** (1.0 / p))


def edge_mask(g: WeightedGraph, vertices, mode: str = "inner") -> np.ndarray:
    """Edges with both (``inner``) or at least one (``touching``) endpoint in ``vertices``."""
    inside = np.zeros(g.n, bool)
    inside[np.asarray(vertices, dtype=np.int64)] = True
    a, b = g.edges.T
    if mode == "inner":
        return inside[a] & inside[b]
    if mode == "touching":
        return inside[a] | inside[b]
    raise ValueError(f"unknown edge restriction mode {mode!r}")


def edge_lp_norm(g: WeightedGraph, field_e, p: float, mask=None) -> float:
    """``(sum_e m_e |F(e)|^p)^(1/p)`` for an edge field ``F``."""
    field_e = np.asarray(field_e, dtype=float)
    m_e = g.edge_measure
    if mask is not None:
        field_e, m_e = field_e[mask], m_e[mask]
    if np.isinf(p):
        return float(np.max(np.abs(field_e), initial=0.0))
    return float(np.sum(m_e * np.abs(field_e) ** p) ** (1.0 / p))


def grad_norm_p(g: WeightedGraph, u, p: float, restriction=None, mode: str = "inner") -> float:
    """``||grad u||_p`` with edge measure ``m_e = w_e l_e^2``.

    With ``restriction`` only edges with both endpoints in the vertex set are
    summed (``mode="touching"`` keeps edges with at least one endpoint in it).
    """
    if p < 1:
        raise ValueError(f"exponent must be >= 1, got {p}")
    mask = None if restriction is None else edge_mask(g, restriction, mode)
    return edge_lp_norm(g, gradient(g, u), p, mask)


def vertex_density(g: WeightedGraph, edge_values) -> np.ndarray:
    """Vertex function ``rho`` with ``sum_x mu rho = sum_e m_e F(e)``.

    Half of each edge's mass is assigned to each endpoint; used to feed edge
    quantities such as ``|grad u|^q`` into vertex operators.
    """
    edge_values = np.asarray(edge_values, dtype=float) * g.edge_measure / 2
    a, b = g.edges.T
    mass = np.bincount(a, edge_values, g.n) + np.bincount(b, edge_values, g.n)
    return mass / g.mu


def project_constants(g: WeightedGraph, u) -> np.ndarray:
    """Remove the mu-weighted mean (orthogonal projection off the kernel)."""
    u = check_field(g, u)
    mean = (g.mu @ u) / g.mu.sum()
    return u - mean


# ----------------------------------------------------------------------
# spectral backends


@dataclass
class Eigensystem:
    """Dense spectrum: ``lam`` ascending, ``phi`` mu-orthonormal eigenvectors (columns)."""

    lam: np.ndarray
    phi: np.ndarray
    mu: np.ndarray

    def coefficients(self, u: np.ndarray) -> np.ndarray:
        return self.phi.T @ (_col(self.mu, u) * u)

    def synthesize(self, coeffs: np.ndarray) -> np.ndarray:
        return self.phi @ coeffs

    def apply(self, u: np.ndarray, values: np.ndarray) -> np.ndarray:
        """``sum_k values_k <u, phi_k>_mu phi_k``; ``values`` may be ``(n,)`` or ``(n, k)``."""
        c = self.coefficients(u)
        if values.ndim == 2 and c.ndim == 1:
            c = c[:, None]
        if values.ndim == 1 and c.ndim == 2:
            values = values[:, None]
        return self.synthesize(values * c)


def eigensystem(g: WeightedGraph, cap: int = DENSE_CAP) -> Eigensystem:
    if g.n > cap:
        raise SpectralCapError(f"dense eigendecomposition of {g.n} vertices exceeds cap {cap}")
    with g._lock:
        cached = g._spectral_cache.get("eig")
    if cached is not None:
        return cached
    s = np.sqrt(g.mu)
    sym = g.stiffness.toarray() / s[:, None] / s[None, :]
    lam, q = linalg.eigh(sym)
    lam = np.clip(lam, 0.0, None)
    es = Eigensystem(lam=lam, phi=q / s[:, None], mu=g.mu)
    with g._lock:
        g._spectral_cache["eig"] = es
    return es


def _sym_matvec(g: WeightedGraph):
    s = np.sqrt(g.mu)
    K = g.stiffness
    return lambda x: (K @ (x / s)) / s


def lanczos_apply(
    g: WeightedGraph,
    u,
    functions: Sequence[Callable[[np.ndarray], np.ndarray]],
    tol: float = KRYLOV_TOL,
    max_steps: int | None = None,
    check_every: int = 10,
) -> list[np.ndarray]:
    """Evaluate ``f(Lap) u`` for each ``f`` on the kernel-free part of ``u`` by Lanczos.

    Full reorthogonalization; the constant direction is deflated.  Iteration
    stops when every result changes by less than ``tol`` (relative) between
    checks, or when the Krylov space becomes invariant.
    """
    u = check_field(g, u)
    s = np.sqrt(g.mu)
    z = s / np.linalg.norm(s)
    b = s * project_constants(g, u)
    b -= z * (z @ b)
    beta0 = np.linalg.norm(b)
    if beta0 == 0:
        return [np.zeros(g.n) for _ in functions]
    matvec = _sym_matvec(g)
    max_steps = min(max_steps or 1500, g.n - 1)
    V = np.empty((g.n, max_steps + 1))
    V[:, 0] = b / beta0
    alpha, beta = [], []
    prev = None
    change = np.inf
    for j in range(max_steps):
        w = matvec(V[:, j])
        if j:
            w -= beta[-1] * V[:, j - 1]
        a_j = V[:, j] @ w
        w -= a_j * V[:, j]
        for _ in range(2):
            w -= V[:, : j + 1] @ (V[:, : j + 1].T @ w)
            w -= z * (z @ w)
        alpha.append(a_j)
        b_j = np.linalg.norm(w)
        invariant = b_j <= 1e-13 * max(abs(a_j), 1.0)
        m = j + 1
        if invariant or m % check_every == 0 or m == max_steps:
            theta, Y = linalg.eigh_tridiagonal(np.array(alpha), np.array(beta)) if m > 1 else (
                np.array(alpha), np.ones((1, 1)))
            theta = np.clip(theta, 0.0, None)
            cur = [V[:, :m] @ (Y @ (f(theta) * Y[0, :])) * beta0 for f in functions]
            if prev is not None:
                change = max(
                    np.linalg.norm(c - p) / max(np.linalg.norm(c), 1e-300)
                    for c, p in zip(cur, prev)
                )
            if invariant or change < tol:
                return [c / s for c in cur]
            prev = cur
        beta.append(b_j)
        V[:, j + 1] = w / b_j
    raise ConvergenceError(f"Lanczos did not converge in {max_steps} steps", change)


def resolve_method(g: WeightedGraph, method: str = "auto", cap: int = DENSE_CAP) -> str:
    if method == "auto":
        return "dense" if g.n <= cap else "krylov"
    if method not in ("dense", "krylov"):
        raise ValueError(f"unknown spectral method {method!r}")
    return method


def apply_function(
    g: WeightedGraph,
    u,
    f: Callable[[np.ndarray], np.ndarray],
    method: str = "auto",
    tol: float = KRYLOV_TOL,
) -> np.ndarray:
    """``f(Lap) u`` where ``f`` acts on eigenvalues; handles ``(n, k)`` batches."""
    u = check_field(g, u)
    if g.n == 1:
        return u * float(f(np.zeros(1))[0])
    method = resolve_method(g, method)
    if method == "dense":
        es = eigensystem(g)
        return es.apply(u, f(es.lam))
    mean = (g.mu @ u) / g.mu.sum()
    f0 = float(f(np.zeros(1))[0])
    if u.ndim == 1:
        return lanczos_apply(g, u, [f], tol)[0] + f0 * mean
    cols = [lanczos_apply(g, u[:, k], [f], tol)[0] for k in range(u.shape[1])]
    return np.stack(cols, axis=1) + f0 * mean[None, :]


# ----------------------------------------------------------------------
# heat semigroup


def heat_apply(g: WeightedGraph, u, t: float, method: str = "auto") -> np.ndarray:
    """``exp(-t Lap) u``."""
    if t < 0:
        raise ValueError("heat time must be nonnegative")
    u = check_field(g, u)
    if t == 0:
        return u.copy()
    return apply_function(g, u, lambda lam: np.exp(-t * lam), method)


def heat_kernel(g: WeightedGraph, x: int, y: int, t: float, method: str = "auto") -> float:
    """``p_t(x, y)`` with ``exp(-t Lap) u (x) = sum_y mu(y) p_t(x, y) u(y)``."""
    if t <= 0:
        raise ValueError("heat kernel needs t > 0")
    delta = np.zeros(g.n)
    delta[y] = 1.0 / g.mu[y]
    return float(heat_apply(g, delta, t, method)[x])


def heat_kernel_row(g: WeightedGraph, x: int, t: float, derivative: int = 0) -> np.ndarray:
    """``y -> d^k/dt^k p_t(x, y)`` from the dense eigenbasis."""
    es = eigensystem(g)
    vals = np.exp(-t * es.lam) * (-es.lam) ** derivative
    return es.phi @ (vals * es.phi[x])


@dataclass
class HeatBoundReport:
    """Measured constants in the Gaussian upper bounds over a sample grid.

    ``constant`` bounds ``p_t V(x, sqrt t) exp(d^2/(c t))``; the derivative
    constants bound ``|dp_t/dt| t V(., sqrt t) exp(d^2/(c t))`` with the
    volume at ``x`` (``derivative_constant``) or at ``y``
    (``derivative_constant_y``).  Samples with ``d > t / l_min`` sit in the
    Poisson regime of the discrete kernel, where no Gaussian bound holds; they
    are listed in ``skipped`` and left out of the constants.
    """

    constant: float
    gaussian_c: float
    derivative_constant: float
    derivative_constant_y: float
    samples: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "constant": self.constant,
            "gaussian_c": self.gaussian_c,
            "derivative_constant": self.derivative_constant,
            "derivative_constant_y": self.derivative_constant_y,
            "samples": [list(map(float, s)) for s in self.samples],
            "skipped": [list(map(float, s)) for s in self.skipped],
        }


def _ball_volume(g: WeightedGraph, x: int, radius: float) -> float:
    d = g.distances_from(x)
    v = g.mu[d < radius].sum()
    return float(v) if v > 0 else float(g.mu[x])


def check_gaussian_bounds(
    g: WeightedGraph, grid: Sequence[tuple[int, int, float]], c: float = GAUSSIAN_RATE
) -> HeatBoundReport:
    best = best_d = best_dy = 0.0
    used, skipped = [], []
    l_min = float(g.lengths.min()) if g.m else 1.0
    for x, y, t in grid:
        if t <= 0:
            raise ValueError("Gaussian bound grid needs t > 0")
        x, y = int(x), int(y)
        d = g.distances_from(x)[y]
        if d > t / l_min:
            skipped.append((x, y, t))
            continue
        used.append((x, y, t))
        gauss = math.exp(d * d / (c * t))
        vx = _ball_volume(g, x, math.sqrt(t))
        vy = _ball_volume(g, y, math.sqrt(t))
        p = heat_kernel_row(g, x, t)[y]
        dp = abs(heat_kernel_row(g, x, t, derivative=1)[y])
        best = max(best, p * vx * gauss)
        best_d = max(best_d, dp * t * vx * gauss)
        best_dy = max(best_dy, dp * t * vy * gauss)
    return HeatBoundReport(best, c, best_d, best_dy, used, skipped)


# ----------------------------------------------------------------------
# square root


def sqrt_apply_spectral(g: WeightedGraph, u, cap: int = DENSE_CAP) -> np.ndarray:
    """``Lap^(1/2) u`` in the dense eigenbasis (the oracle).

    Constants are projected off first so the round-off zero eigenvalue does
    not leak ``sqrt(1e-16)`` into the result.
    """
    u = project_constants(g, check_field(g, u))
    if g.n > cap:
        raise SpectralCapError(f"spectral square root of {g.n} vertices exceeds cap {cap}")
    es = eigensystem(g, cap)
    return es.apply(u, np.sqrt(es.lam))


def sqrt_apply(g: WeightedGraph, u, method: str = "auto", tol: float = KRYLOV_TOL) -> np.ndarray:
    """``Lap^(1/2) u``: dense eigenbasis when small, Lanczos otherwise."""
    return apply_function(g, u, np.sqrt, method, tol)


def spectral_extremes(g: WeightedGraph) -> tuple[float, float]:
    """Estimates ``(lambda_2, lambda_max)`` of the Laplacian.

    ``lambda_max`` is the Gershgorin bound ``max 2 deg_w(x)/mu(x)`` (an upper
    bound).  ``lambda_2`` comes from the cached dense spectrum when present,
    otherwise from shift-invert Lanczos.
    """
    with g._lock:
        cached = g._spectral_cache.get("extremes")
    if cached is not None:
        return cached
    deg = np.asarray(g.stiffness.diagonal())
    lam_max = float(np.max(2 * deg / g.mu))
    if g.n == 1:
        ext = (lam_max, lam_max)
    elif "eig" in g._spectral_cache or g.n <= DENSE_CAP:
        ext = (float(eigensystem(g).lam[1]), lam_max)
    else:
        s = np.sqrt(g.mu)
        S = sparse.diags(1 / s) @ g.stiffness @ sparse.diags(1 / s)
        vals = splinalg.eigsh(S.tocsc(), k=2, sigma=-1e-3 * lam_max, which="LM",
                              return_eigenvectors=False)
        ext = (float(np.sort(vals)[1]), lam_max)
    with g._lock:
        g._spectral_cache["extremes"] = ext
    return ext


@dataclass(frozen=True)
class QuadratureSettings:
    """Gauss-Legendre rule in ``log t`` on ``[eps, R]``.

    ``eps``/``R`` default to ``1e-3 / lambda_max`` and ``1e3 / lambda_2``.
    ``nodes`` is the count per panel (the interval is cut at breakpoints).
    With ``tail_correction`` the piece on ``[0, eps]`` is added through its
    Taylor expansion ``2 eps^(1/2) Lap - (2/3) eps^(3/2) Lap^2``.
    """

    eps: float | None = None
    R: float | None = None
    nodes: int = 200
    tail_correction: bool = True
    tol: float = 1e-6

    def resolve(self, g: WeightedGraph) -> tuple[float, float]:
        lam2, lam_max = spectral_extremes(g)
        eps = self.eps if self.eps is not None else 1e-3 / lam_max
        R = self.R if self.R is not None else 1e3 / lam2
        if not 0 < eps < R:
            raise ValueError(f"quadrature needs 0 < eps < R, got eps={eps}, R={R}")
        if self.nodes < 2:
            raise ValueError("quadrature needs at least 2 nodes")
        return eps, R

    def to_dict(self) -> dict:
        return {"eps": self.eps, "R": self.R, "nodes": self.nodes,
                "tail_correction": self.tail_correction, "tol": self.tol}


def log_gauss_legendre(a: float, b: float, nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes ``t_k`` and weights with ``int_a^b h(t) t^(-1/2) dt ~ sum w_k h(t_k)``."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    la, lb = math.log(a), math.log(b)
    s = 0.5 * (lb - la) * x + 0.5 * (lb + la)
    t = np.exp(s)
    return t, 0.5 * (lb - la) * w * np.sqrt(t)


def _panel_multiplier(lam: np.ndarray, a: float, b: float, nodes: int) -> np.ndarray:
    """``pi^(-1/2) sum_k w_k lam exp(-t_k lam)``: the quadrature of one panel as a spectral multiplier."""
    t, w = log_gauss_legendre(a, b, nodes)
    lam = np.asarray(lam, dtype=float)
    return (lam[..., None] * np.exp(-lam[..., None] * t) @ w) / SQRT_PI


def _tail_multiplier(lam: np.ndarray, eps: float) -> np.ndarray:
    return (2 * math.sqrt(eps) * lam - (2.0 / 3.0) * eps**1.5 * lam**2) / SQRT_PI


def truncation_bound(eps: float, R: float, lam2: float, lam_max: float, tail_correction=True) -> float:
    """Relative truncation error of the cut integral at the extreme eigenvalue estimates."""
    lower_exact = math.sqrt(lam_max) * math.erf(math.sqrt(lam_max * eps))
    lower_approx = float(_tail_multiplier(np.array([lam_max]), eps)[0]) if tail_correction else 0.0
    lower = abs(lower_exact - lower_approx) / math.sqrt(lam_max)
    upper = math.erfc(math.sqrt(lam2 * R))
    return max(lower, upper)


def quadrature_multiplier(
    lam: np.ndarray, eps: float, R: float, nodes: int, breakpoints=(), tail_correction=True
) -> list[np.ndarray]:
    """Per-panel multipliers; their sum approximates ``sqrt(lam)``."""
    cuts = [eps, *sorted(breakpoints), R]
    panels = [_panel_multiplier(lam, a, b, nodes) for a, b in zip(cuts[:-1], cuts[1:])]
    if tail_correction:
        panels[0] = panels[0] + _tail_multiplier(lam, eps)
    return panels


def _warn_truncation(g: WeightedGraph, eps: float, R: float, settings: QuadratureSettings):
    if g.n == 1:
        return
    lam2, lam_max = spectral_extremes(g)
    bound = truncation_bound(eps, R, lam2, lam_max, settings.tail_correction)
    if bound > settings.tol:
        warnings.warn(
            f"quadrature truncation bound {bound:.2e} exceeds tolerance {settings.tol:.0e}"
            f" (eps={eps:.3e}, R={R:.3e})",
            RuntimeWarning,
            stacklevel=3,
        )


def _apply_panels(g, u, multipliers, method):
    """Apply several spectral multipliers to ``u``; returns one field per multiplier."""
    u = project_constants(g, u)
    if g.n == 1:
        return [np.zeros_like(u) for _ in multipliers]
    method = resolve_method(g, method)
    if method == "dense":
        es = eigensystem(g)
        return [es.apply(u, mult(es.lam)) for mult in multipliers]
    if u.ndim == 2:
        cols = [lanczos_apply(g, u[:, k], multipliers) for k in range(u.shape[1])]
        return [np.stack([c[i] for c in cols], axis=1) for i in range(len(multipliers))]
    return lanczos_apply(g, u, multipliers)


def sqrt_apply_quadrature(
    g: WeightedGraph,
    u,
    eps: float | None = None,
    R: float | None = None,
    nodes: int = 200,
    settings: QuadratureSettings | None = None,
    breakpoints: Sequence[float] = (),
    method: str = "auto",
) -> np.ndarray:
    """``pi^(-1/2) int_eps^R Lap exp(-t Lap) u t^(-1/2) dt`` by Gauss-Legendre in ``log t``.

    ``u`` is projected off the constants first.  Breakpoints split the rule
    into panels of ``nodes`` points each (see :func:`split_TU`).
    """
    settings = settings or QuadratureSettings(eps=eps, R=R, nodes=nodes)
    eps, R = settings.resolve(g)
    _warn_truncation(g, eps, R, settings)
    for bp in breakpoints:
        if not eps < bp < R:
            raise ValueError(f"breakpoint {bp} outside (eps, R) = ({eps}, {R})")

    def total(lam):
        return sum(quadrature_multiplier(lam, eps, R, settings.nodes, breakpoints,
                                         settings.tail_correction))

    return _apply_panels(g, u, [total], method)[0]


def split_TU(
    g: WeightedGraph,
    u,
    r_alpha: float,
    settings: QuadratureSettings | None = None,
    method: str = "auto",
) -> tuple[np.ndarray, np.ndarray]:
    """Short-time part ``T`` (``t < r_alpha^2``) and long-time part ``U`` of the quadrature.

    ``T + U`` equals :func:`sqrt_apply_quadrature` with breakpoint ``r_alpha**2``.
    """
    settings = settings or QuadratureSettings()
    if not r_alpha > 0:
        raise ValueError("r_alpha must be positive")
    eps, R = settings.resolve(g)
    bp = r_alpha**2
    if not eps < bp < R:
        raise ValueError(f"r_alpha^2 = {bp} outside (eps, R) = ({eps}, {R})")

    def t_part(lam):
        return quadrature_multiplier(lam, eps, R, settings.nodes, (bp,), settings.tail_correction)[0]

    def u_part(lam):
        return quadrature_multiplier(lam, eps, R, settings.nodes, (bp,), settings.tail_correction)[1]

    T, U = _apply_panels(g, u, [t_part, u_part], method)
    return T, U


def split_TU_batch(
    g: WeightedGraph, F: np.ndarray, radii: Sequence[float], settings: QuadratureSettings | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """:func:`split_TU` for the columns of ``F`` with per-column radii (dense path only)."""
    settings = settings or QuadratureSettings()
    F = check_field(g, F)
    radii = np.asarray(radii, dtype=float)
    eps, R = settings.resolve(g)
    es = eigensystem(g)
    Fp = project_constants(g, F)
    T_mult = np.empty((es.lam.size, F.shape[1]))
    U_mult = np.empty_like(T_mult)
    unique, which = np.unique(radii, return_inverse=True)
    for k, r in enumerate(unique):
        bp = r**2
        if not eps < bp < R:
            raise ValueError(f"r_alpha^2 = {bp} outside (eps, R) = ({eps}, {R})")
        cols = which == k
        T_mult[:, cols], U_mult[:, cols] = (m[:, None] for m in quadrature_multiplier(
            es.lam, eps, R, settings.nodes, (bp,), settings.tail_correction))
    c = es.coefficients(Fp)
    return es.synthesize(T_mult * c), es.synthesize(U_mult * c)
