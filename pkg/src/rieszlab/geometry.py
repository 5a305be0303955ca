"""Weighted-graph models of manifolds with ends.

A :class:`WeightedGraph` carries a vertex measure ``mu``, undirected edges with
conductance ``w`` and length ``len``, and a basepoint ``o``.  Distances are
shortest-path distances with respect to the edge lengths.  The builders
produce lattice boxes (discrete R^n), connected sums of two boxes joined by a
neck (discrete R^n # R^n) and discrete cones.

Lattice scaling is ``w = h**(n-2)``, ``mu = h**n``, ``len = h`` so that
``sum_e w_e (u(a) - u(b))**2`` discretizes the Dirichlet energy.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

# All-pairs distance matrices are only cached below this vertex count.
ALL_PAIRS_CAP = 5000
_SOURCE_CACHE_SIZE = 256


class GraphError(ValueError):
    """Raised for invalid graph construction parameters or degenerate input."""


@dataclass(eq=False)
class WeightedGraph:
    """Discrete model manifold.

    Parameters
    ----------
    mu : (n,) array
        Vertex measure, strictly positive.
    edges : (m, 2) int array
        Unordered edges stored with ``a < b``; edge fields are oriented a -> b.
    weights, lengths : (m,) arrays
        Conductances ``w_e`` and lengths ``l_e``, strictly positive.
    basepoint : int
        The point ``o``; ``r(x) = d(x, o)``.
    metadata : dict
        Builder name and parameters.  Builders also store ``boundary`` (vertex
        ids where the model is truncated), ``default_r0`` and, for connected
        sums, ``end_labels``.
    """

    mu: np.ndarray
    edges: np.ndarray
    weights: np.ndarray
    lengths: np.ndarray
    basepoint: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mu = np.ascontiguousarray(self.mu, dtype=float)
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.weights = np.ascontiguousarray(self.weights, dtype=float)
        self.lengths = np.ascontiguousarray(self.lengths, dtype=float)
        n = self.mu.size
        if n == 0:
            raise GraphError("graph has no vertices")
        if np.any(self.mu <= 0) or not np.all(np.isfinite(self.mu)):
            raise GraphError("vertex measure must be positive and finite")
        if len(edges) != self.weights.size or len(edges) != self.lengths.size:
            raise GraphError("edge arrays have inconsistent lengths")
        if np.any(self.weights <= 0) or np.any(self.lengths <= 0):
            raise GraphError("edge weights and lengths must be positive")
        if len(edges) and (edges.min() < 0 or edges.max() >= n):
            raise GraphError("edge endpoint out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise GraphError("self loops are not allowed")
        swap = edges[:, 0] > edges[:, 1]
        edges[swap] = edges[swap][:, ::-1]
        self.edges = edges
        if not 0 <= int(self.basepoint) < n:
            raise GraphError("basepoint is not a vertex")
        self.basepoint = int(self.basepoint)
        if n > 1:
            ncomp, _ = csgraph.connected_components(self.adjacency, directed=False)
            if ncomp != 1:
                raise GraphError(f"graph is disconnected ({ncomp} components)")
        self._lock = threading.Lock()
        self._source_cache: dict[int, np.ndarray] = {}
        self._all_pairs: np.ndarray | None = None
        self._spectral_cache: dict = {}
        # r(x) is needed by nearly everything; compute it eagerly.
        self.r = self._dijkstra(self.basepoint)
        self.r.setflags(write=False)

    # ------------------------------------------------------------------
    # structure
    @property
    def n(self) -> int:
        return self.mu.size

    @property
    def m(self) -> int:
        return len(self.edges)

    @property
    def edge_measure(self) -> np.ndarray:
        """``m_e = w_e * l_e**2``; with it ``sum_e m_e |grad u|^2`` is the energy."""
        return self.weights * self.lengths**2

    @property
    def adjacency(self) -> sparse.csr_matrix:
        """Symmetric sparse matrix of edge lengths (used for shortest paths)."""
        if not hasattr(self, "_adjacency"):
            a, b = self.edges.T
            n = self.mu.size
            mat = sparse.coo_matrix(
                (np.r_[self.lengths, self.lengths], (np.r_[a, b], np.r_[b, a])),
                shape=(n, n),
            )
            self._adjacency = mat.tocsr()
        return self._adjacency

    @property
    def stiffness(self) -> sparse.csr_matrix:
        """Energy matrix ``K`` with ``u @ K @ u = sum_e w_e (u(a) - u(b))**2``."""
        if not hasattr(self, "_stiffness"):
            a, b = self.edges.T
            n = self.n
            w = self.weights
            off = sparse.coo_matrix(
                (np.r_[-w, -w], (np.r_[a, b], np.r_[b, a])), shape=(n, n)
            ).tocsr()
            deg = np.bincount(a, w, n) + np.bincount(b, w, n)
            self._stiffness = (off + sparse.diags(deg)).tocsr()
        return self._stiffness

    @property
    def incidence(self) -> sparse.csr_matrix:
        """Signed incidence ``D`` with ``(D u)_e = u(b) - u(a)``."""
        if not hasattr(self, "_incidence"):
            a, b = self.edges.T
            m = self.m
            rows = np.r_[np.arange(m), np.arange(m)]
            vals = np.r_[-np.ones(m), np.ones(m)]
            self._incidence = sparse.coo_matrix(
                (vals, (rows, np.r_[a, b])), shape=(m, self.n)
            ).tocsr()
        return self._incidence

    @property
    def boundary(self) -> np.ndarray:
        return np.asarray(self.metadata.get("boundary", []), dtype=np.int64)

    @property
    def default_r0(self) -> float:
        return float(self.metadata.get("default_r0", 4.0))

    def with_basepoint(self, basepoint: int) -> "WeightedGraph":
        return WeightedGraph(
            self.mu, self.edges, self.weights, self.lengths, basepoint, dict(self.metadata)
        )

    # ------------------------------------------------------------------
    # distances
    def _dijkstra(self, sources, limit=np.inf) -> np.ndarray:
        if self.n == 1:
            return np.zeros(1) if np.ndim(sources) == 0 else np.zeros((len(sources), 1))
        return csgraph.dijkstra(self.adjacency, directed=False, indices=sources, limit=limit)

    def distances_from(self, source: int) -> np.ndarray:
        """Shortest-path distances from ``source`` to every vertex (cached)."""
        source = int(source)
        if self._all_pairs is not None:
            return self._all_pairs[source]
        with self._lock:
            hit = self._source_cache.get(source)
        if hit is not None:
            return hit
        d = self._dijkstra(source)
        d.setflags(write=False)
        with self._lock:
            if len(self._source_cache) >= _SOURCE_CACHE_SIZE:
                self._source_cache.pop(next(iter(self._source_cache)))
            self._source_cache[source] = d
        return d

    def distance_matrix(self) -> np.ndarray:
        """All-pairs distances; only for graphs with at most ``ALL_PAIRS_CAP`` vertices."""
        if self.n > ALL_PAIRS_CAP:
            raise GraphError(
                f"all-pairs distances requested for {self.n} vertices (cap {ALL_PAIRS_CAP})"
            )
        with self._lock:
            if self._all_pairs is None:
                d = np.atleast_2d(self._dijkstra(np.arange(self.n)))
                d.setflags(write=False)
                self._all_pairs = d
            return self._all_pairs

    def local_distances(self, center: int, radius: float) -> np.ndarray:
        """Distances from ``center``, exact up to ``radius`` and ``inf`` beyond."""
        if self._all_pairs is not None or int(center) in self._source_cache:
            return self.distances_from(center)
        return self._dijkstra(int(center), limit=radius)

    # ------------------------------------------------------------------
    # serialization
    def to_dict(self) -> dict:
        return {
            "vertices": [
                {"id": i, "mu": float(m), "r": float(r)}
                for i, (m, r) in enumerate(zip(self.mu, self.r))
            ],
            "edges": [
                {"a": int(a), "b": int(b), "w": float(w), "len": float(l)}
                for (a, b), w, l in zip(self.edges, self.weights, self.lengths)
            ],
            "basepoint": self.basepoint,
            "metadata": _jsonable(self.metadata),
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, data: dict) -> "WeightedGraph":
        verts = sorted(data["vertices"], key=lambda v: v["id"])
        if [v["id"] for v in verts] != list(range(len(verts))):
            raise GraphError("vertex ids must be 0..n-1")
        edges = data["edges"]
        return cls(
            mu=np.array([v["mu"] for v in verts], dtype=float),
            edges=np.array([[e["a"], e["b"]] for e in edges], dtype=np.int64).reshape(-1, 2),
            weights=np.array([e["w"] for e in edges], dtype=float),
            lengths=np.array([e["len"] for e in edges], dtype=float),
            basepoint=data["basepoint"],
            metadata=dict(data.get("metadata", {})),
        )

    @classmethod
    def from_json(cls, text: str) -> "WeightedGraph":
        return cls.from_dict(json.loads(text))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def field_to_json(u: np.ndarray) -> str:
    """Serialize a vertex field as a JSON array in vertex order."""
    return json.dumps([float(x) for x in np.asarray(u, dtype=float).ravel()])


def field_from_json(text: str, g: WeightedGraph | None = None) -> np.ndarray:
    u = np.asarray(json.loads(text), dtype=float)
    if g is not None and u.shape != (g.n,):
        raise GraphError(f"field of length {u.size} does not match {g.n} vertices")
    return u


# ----------------------------------------------------------------------
# builders


@dataclass(frozen=True)
class LatticeSpec:
    """Parameters of a lattice box: dimension, vertices per axis, spacing."""

    n: int
    side: int
    spacing: float = 1.0

    def validate(self):
        if self.n < 1:
            raise GraphError(f"lattice dimension must be >= 1, got {self.n}")
        if self.side < 2:
            raise GraphError(f"lattice side must be >= 2, got {self.side}")
        if not self.spacing > 0:
            raise GraphError(f"lattice spacing must be positive, got {self.spacing}")


def _lattice_arrays(spec: LatticeSpec):
    spec.validate()
    n, side, h = spec.n, spec.side, float(spec.spacing)
    shape = (side,) * n
    nv = side**n
    idx = np.arange(nv).reshape(shape)
    edges = []
    for axis in range(n):
        lo = np.take(idx, np.arange(side - 1), axis=axis).ravel()
        hi = np.take(idx, np.arange(1, side), axis=axis).ravel()
        edges.append(np.stack([lo, hi], axis=1))
    edges = np.concatenate(edges)
    # row-major lattice order: vertex id = ravel_multi_index(coords)
    grid = np.stack(np.unravel_index(np.arange(nv), shape), axis=1)
    center_index = (side - 1) // 2
    coords = (grid - (side - 1) / 2.0) * h
    on_face = np.any((grid == 0) | (grid == side - 1), axis=1)
    center = int(np.ravel_multi_index((center_index,) * n, shape))
    mu = np.full(nv, h**n)
    w = np.full(len(edges), h ** (n - 2))
    lengths = np.full(len(edges), h)
    return mu, edges, w, lengths, center, coords, np.flatnonzero(on_face)


def build_lattice_box(n: int, side: int, spacing: float = 1.0) -> WeightedGraph:
    """Integer-lattice box ``{0..side-1}^n`` scaled by ``spacing``; basepoint at the center."""
    spec = LatticeSpec(int(n), int(side), float(spacing))
    mu, edges, w, lengths, center, coords, boundary = _lattice_arrays(spec)
    meta = {
        "builder": "lattice_box",
        "params": {"n": spec.n, "side": spec.side, "spacing": spec.spacing},
        "boundary": boundary.tolist(),
        "default_r0": 4.0 * spec.spacing,
        "dimension": spec.n,
    }
    return WeightedGraph(mu, edges, w, lengths, center, meta)


def build_connected_sum(
    end_a: LatticeSpec, end_b: LatticeSpec, neck_length: int = 1
) -> WeightedGraph:
    """Two lattice boxes whose centers are joined by a path of ``neck_length`` edges.

    Vertex order: end ``a`` (row-major), end ``b`` (row-major), then the
    ``neck_length - 1`` interior neck vertices from ``a`` towards ``b``.  The
    basepoint is the neck vertex ``neck_length // 2`` steps from the center of
    ``a`` (the exact midpoint when ``neck_length`` is even).
    """
    if isinstance(end_a, dict):
        end_a = LatticeSpec(**end_a)
    if isinstance(end_b, dict):
        end_b = LatticeSpec(**end_b)
    if neck_length < 1:
        raise GraphError(f"neck_length must be >= 1, got {neck_length}")
    mu_a, e_a, w_a, l_a, c_a, x_a, bd_a = _lattice_arrays(end_a)
    mu_b, e_b, w_b, l_b, c_b, x_b, bd_b = _lattice_arrays(end_b)
    na, nb = mu_a.size, mu_b.size
    h = float(end_a.spacing)
    n_neck = neck_length - 1
    neck_ids = na + nb + np.arange(n_neck)
    path = np.r_[c_a, neck_ids, na + c_b]
    neck_edges = np.stack([path[:-1], path[1:]], axis=1)
    mu = np.r_[mu_a, mu_b, np.full(n_neck, h**end_a.n)]
    edges = np.concatenate([e_a, e_b + na, neck_edges])
    w = np.r_[w_a, w_b, np.full(neck_length, h ** (end_a.n - 2))]
    lengths = np.r_[l_a, l_b, np.full(neck_length, h)]
    basepoint = int(path[neck_length // 2])
    labels = np.r_[np.zeros(na, int), np.ones(nb, int), np.full(n_neck, -1)]
    meta = {
        "builder": "connected_sum",
        "params": {
            "end_a": vars(end_a),
            "end_b": vars(end_b),
            "neck_length": int(neck_length),
        },
        "boundary": np.r_[bd_a, bd_b + na].tolist(),
        "end_labels": labels.tolist(),
        "default_r0": 4.0 * neck_length * h,
        "dimension": end_a.n,
    }
    return WeightedGraph(mu, edges, w, lengths, basepoint, meta)


def lattice_vertex(g: WeightedGraph, offset: Sequence[int], end: int = 0) -> int:
    """Vertex at integer ``offset`` from the center of a lattice box (or of end ``end`` of a connected sum)."""
    params = g.metadata.get("params", {})
    builder = g.metadata.get("builder")
    if builder == "lattice_box":
        n, side, base = params["n"], params["side"], 0
    elif builder == "connected_sum":
        spec_a, spec_b = params["end_a"], params["end_b"]
        spec = spec_a if end == 0 else spec_b
        n, side = spec["n"], spec["side"]
        base = 0 if end == 0 else spec_a["side"] ** spec_a["n"]
    else:
        raise GraphError(f"lattice_vertex needs a lattice-based graph, got {builder!r}")
    if len(offset) != n:
        raise GraphError(f"offset {tuple(offset)} has wrong dimension for n={n}")
    coords = (side - 1) // 2 + np.asarray(offset, dtype=np.int64)
    if np.any(coords < 0) or np.any(coords >= side):
        raise GraphError(f"offset {tuple(offset)} leaves the box of side {side}")
    return int(base + np.ravel_multi_index(tuple(coords), (side,) * n))


def _sphere_points(n: int, count: int) -> np.ndarray:
    if n == 1:
        return np.array([[-1.0], [1.0]])
    if n == 2:
        ang = 2 * np.pi * np.arange(count) / count
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    # n == 3: Fibonacci sphere
    k = np.arange(count) + 0.5
    z = 1 - 2 * k / count
    phi = np.pi * (1 + 5**0.5) * k
    s = np.sqrt(1 - z**2)
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)


def build_conic_end(n: int, levels: int, cross_scale: float = 1.0) -> WeightedGraph:
    """Discrete cone over a sphere: apex plus ``levels`` concentric cross-sections.

    Level ``j`` carries about ``(2 pi cross_scale j)**(n-1)`` points on a
    sphere of radius ``cross_scale * j``; consecutive levels are joined
    radially to the nearest point of the previous level, giving volume growth
    of order ``R**n``.  Supported dimensions: 1, 2, 3.
    """
    if levels < 2:
        raise GraphError(f"levels must be >= 2, got {levels}")
    if not cross_scale > 0:
        raise GraphError(f"cross_scale must be positive, got {cross_scale}")
    if n not in (1, 2, 3):
        raise GraphError(f"conic ends are implemented for n in (1, 2, 3), got {n}")
    from scipy.spatial import cKDTree

    points = [np.zeros((1, max(n, 1)))]
    level_of = [0]
    for j in range(1, levels + 1):
        radius = cross_scale * j
        if n == 1:
            count = 2
        elif n == 2:
            count = max(3, int(math.ceil(2 * np.pi * radius)))
        else:
            count = max(4, int(math.ceil(4 * np.pi * radius**2)))
        points.append(radius * _sphere_points(n, count))
        level_of.extend([j] * count)
    offsets = np.cumsum([0] + [len(p) for p in points])
    coords = np.concatenate(points)
    level_of = np.asarray(level_of)
    edges, lengths = [], []
    for j in range(1, levels + 1):
        ids = np.arange(offsets[j], offsets[j + 1])
        prev = np.arange(offsets[j - 1], offsets[j])
        # radial edges to the nearest direction on the previous level
        if j == 1:
            nearest = np.zeros(len(ids), int)
        else:
            tree = cKDTree(coords[prev] / (cross_scale * (j - 1)))
            _, nearest = tree.query(coords[ids] / (cross_scale * j))
        for v, pv in zip(ids, prev[nearest]):
            edges.append((pv, v))
            lengths.append(1.0)
        # cross-section edges
        if n == 2:
            for k in range(len(ids)):
                a, b = ids[k], ids[(k + 1) % len(ids)]
                edges.append((a, b))
                lengths.append(float(np.linalg.norm(coords[a] - coords[b])))
        elif n == 3:
            sub = cKDTree(coords[ids])
            _, nb = sub.query(coords[ids], k=min(5, len(ids)))
            seen = set()
            for k, row in enumerate(nb):
                for q in row[1:]:
                    key = (min(ids[k], ids[q]), max(ids[k], ids[q]))
                    if key not in seen:
                        seen.add(key)
                        edges.append(key)
                        lengths.append(float(np.linalg.norm(coords[key[0]] - coords[key[1]])))
    edges = np.asarray(edges, dtype=np.int64)
    lengths = np.asarray(lengths)
    mu = np.ones(len(coords))
    w = np.ones(len(edges))
    meta = {
        "builder": "conic_end",
        "params": {"n": int(n), "levels": int(levels), "cross_scale": float(cross_scale)},
        "boundary": np.flatnonzero(level_of == levels).tolist(),
        "default_r0": 4.0,
        "dimension": int(n),
    }
    return WeightedGraph(mu, edges, w, lengths, 0, meta)


# ----------------------------------------------------------------------
# balls


@dataclass(eq=False, frozen=True)
class Ball:
    """Open ball ``{y : d(center, y) < radius}`` with its resolved members."""

    center: int
    radius: float
    members: np.ndarray
    classification: frozenset

    @property
    def is_remote(self) -> bool:
        return "remote" in self.classification

    @property
    def is_anchored(self) -> bool:
        return "anchored" in self.classification

    @property
    def is_admissible(self) -> bool:
        return "admissible" in self.classification

    def to_dict(self) -> dict:
        return {
            "center": int(self.center),
            "radius": float(self.radius),
            "classification": sorted(self.classification),
            "size": int(self.members.size),
        }


def classify_ball(g: WeightedGraph, center: int, radius: float, r0: float | None = None) -> frozenset:
    """Remote / anchored / admissible labels of ``B(center, radius)`` ('plain' if none)."""
    r0 = g.default_r0 if r0 is None else r0
    labels = set()
    if radius <= g.r[center] / 2:
        labels.add("remote")
    if center == g.basepoint:
        labels.add("anchored")
    if "remote" in labels or ("anchored" in labels and radius <= r0):
        labels.add("admissible")
    return frozenset(labels or {"plain"})


def ball(g: WeightedGraph, center: int, radius: float, r0: float | None = None) -> Ball:
    if not 0 <= center < g.n:
        raise GraphError(f"center {center} is not a vertex")
    if radius < 0:
        raise GraphError("radius must be nonnegative")
    center = int(center)
    if radius == 0:
        members = np.empty(0, dtype=np.int64)
    elif g.m == 0 or radius <= g.lengths.min():
        members = np.array([center], dtype=np.int64)
    else:
        d = g.local_distances(center, radius)
        members = np.flatnonzero(d < radius)
    members.setflags(write=False)
    return Ball(center, float(radius), members, classify_ball(g, center, radius, r0))


def dilate(g: WeightedGraph, b: Ball, factor: float, r0: float | None = None) -> Ball:
    return ball(g, b.center, factor * b.radius, r0)


def volume(g: WeightedGraph, b: Ball | Iterable[int]) -> float:
    members = b.members if isinstance(b, Ball) else np.asarray(list(b), dtype=np.int64)
    return float(g.mu[members].sum())


def annulus(g: WeightedGraph, b: Ball, j: int) -> np.ndarray:
    """Vertices of ``2**(j+1) B`` that are not in ``2**j B``."""
    if j < 1:
        raise GraphError("annulus index must be >= 1")
    outer = dilate(g, b, 2.0 ** (j + 1)).members
    inner = dilate(g, b, 2.0**j).members
    return np.setdiff1d(outer, inner, assume_unique=True)


# ----------------------------------------------------------------------
# volume growth


@dataclass
class VolumeGrowthReport:
    doubling_constant: float
    doubling_exponent: float
    reverse_exponent: float
    samples: list
    used: int

    def to_dict(self) -> dict:
        return _jsonable(vars(self))


def estimate_volume_growth(
    g: WeightedGraph, sample: Sequence[tuple[int, float, float]]
) -> VolumeGrowthReport:
    """Measured doubling constant and volume-growth exponents over ``(x, r, R)`` triples.

    ``doubling_constant = max V(x,2r)/V(x,r)``; the exponent of each triple is
    ``log(V(x,R)/V(x,r)) / log(R/r)``; ``D`` is the max and ``nu`` the min.
    Triples whose small ball is empty are ignored.
    """
    sample = [(int(x), float(r), float(R)) for x, r, R in sample]
    if not sample:
        raise GraphError("empty volume-growth sample")
    dbl, expos, used = [], [], []
    for x, r, R in sample:
        if not 0 < r < R:
            raise GraphError(f"need 0 < r < R, got r={r}, R={R}")
        d = g.distances_from(x)
        v_r = g.mu[d < r].sum()
        if v_r == 0:
            continue
        dbl.append(g.mu[d < 2 * r].sum() / v_r)
        expos.append(math.log(g.mu[d < R].sum() / v_r) / math.log(R / r))
        used.append((x, r, R))
    if not used:
        raise GraphError("every sampled small ball is empty")
    return VolumeGrowthReport(
        doubling_constant=float(max(dbl)),
        doubling_exponent=float(max(expos)),
        reverse_exponent=float(min(expos)),
        samples=used,
        used=len(used),
    )


def fit_growth_exponent(g: WeightedGraph, center: int, radii: Sequence[float]) -> float:
    """Least-squares slope of ``log V(center, R)`` against ``log R``."""
    d = g.distances_from(center)
    radii = np.asarray(radii, dtype=float)
    vols = np.array([g.mu[d < R].sum() for R in radii])
    keep = vols > 0
    slope, _ = np.polyfit(np.log(radii[keep]), np.log(vols[keep]), 1)
    return float(slope)
