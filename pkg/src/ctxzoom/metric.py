"""Finite metric spaces and the covering/packing machinery built on them.

Every space here is a finite indexed point set.  Distances are truncated at 1
and balls are closed.  Functions that take ``idx`` operate on the sub-multiset
of points it selects (``None`` means every point).
"""
from __future__ import annotations

import heapq
import math
from typing import Optional

import numpy as np

# Slack for closed-ball membership; distances are sums of a few floats.
EPS = 1e-12

DENSE_LIMIT = 2000
_CHUNK = 512


class MetricError(ValueError):
    pass


class SimilaritySpace:
    """A finite point set with a distance truncated at 1.

    ``metric`` is one of

    * ``"lp"``: ``min(1, scale * ||a - b||_p ** power)`` on ``coords``
    * ``"discrete"``: ``scale`` between distinct points (no similarity info)
    * ``"zero"``: all distances 0 (a pseudo-metric, used for sleeping bandits)
    * ``"matrix"``: explicit distance matrix
    """

    def __init__(
        self,
        coords=None,
        metric: str = "lp",
        *,
        p: float = 1.0,
        scale: float = 1.0,
        power: float = 1.0,
        matrix=None,
        n: Optional[int] = None,
        kind: str = "custom",
        dim: Optional[float] = None,
    ):
        if metric not in ("lp", "discrete", "zero", "matrix"):
            raise MetricError(f"unknown metric {metric!r}")
        if kind not in ("context", "arms", "product", "custom"):
            raise MetricError(f"unknown space kind {kind!r}")
        self.metric = metric
        self.p = float(p)
        self.scale = float(scale)
        self.power = float(power)
        self.kind = kind
        self.dim = dim
        self.coords = None
        self.matrix = None
        if metric == "lp":
            c = np.asarray(coords, dtype=float)
            if c.ndim == 1:
                c = c[:, None]
            self.coords = c
            self.n = len(c)
        elif metric == "matrix":
            m = np.asarray(matrix, dtype=float)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise MetricError("distance matrix must be square")
            self.matrix = np.minimum(m, 1.0)
            self.n = len(m)
        else:
            if n is None:
                n = len(coords) if coords is not None else None
            if n is None:
                raise MetricError(f"{metric} metric needs n")
            self.n = int(n)
            if coords is not None:
                c = np.asarray(coords, dtype=float)
                self.coords = c[:, None] if c.ndim == 1 else c
        if metric == "discrete" and not 0.0 <= self.scale <= 1.0:
            raise MetricError("discrete distance must lie in [0, 1]")
        self._dense = None

    def __len__(self) -> int:
        return self.n

    def __repr__(self) -> str:
        return f"SimilaritySpace(n={self.n}, metric={self.metric!r}, kind={self.kind!r})"

    # -- distances -----------------------------------------------------------

    def cross(self, a, b) -> np.ndarray:
        """Distance matrix between index arrays ``a`` and ``b``."""
        a = np.atleast_1d(np.asarray(a, dtype=np.intp))
        b = np.atleast_1d(np.asarray(b, dtype=np.intp))
        if self._dense is not None:
            return self._dense[np.ix_(a, b)]
        if self.metric == "lp":
            diff = np.abs(self.coords[a][:, None, :] - self.coords[b][None, :, :])
            if self.p == 1.0:
                base = diff.sum(-1)
            elif self.p == 2.0:
                base = np.sqrt((diff * diff).sum(-1))
            elif math.isinf(self.p):
                base = diff.max(-1)
            else:
                base = (diff ** self.p).sum(-1) ** (1.0 / self.p)
            if self.power != 1.0:
                base = base ** self.power
            return np.minimum(1.0, self.scale * base)
        if self.metric == "discrete":
            return np.where(a[:, None] == b[None, :], 0.0, self.scale)
        if self.metric == "zero":
            return np.zeros((len(a), len(b)))
        return self.matrix[np.ix_(a, b)]

    def dist(self, i: int, j: int) -> float:
        return float(self.cross([i], [j])[0, 0])

    def dist_from(self, i: int, idx=None) -> np.ndarray:
        if idx is None:
            idx = np.arange(self.n)
        return self.cross([i], idx)[0]

    def dense(self) -> np.ndarray:
        """Full distance matrix; cached for spaces up to ``DENSE_LIMIT`` points."""
        if self._dense is not None:
            return self._dense
        if self.n > DENSE_LIMIT:
            raise MetricError(f"refusing dense matrix for {self.n} points")
        idx = np.arange(self.n)
        self._dense = self.cross(idx, idx)
        return self._dense

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "metric": self.metric, "n": self.n, "dim": self.dim}
        if self.metric == "lp":
            d.update(coords=self.coords.tolist(), p=self.p, scale=self.scale, power=self.power)
        elif self.metric == "discrete":
            d.update(scale=self.scale)
        elif self.metric == "matrix":
            d.update(matrix=self.matrix.tolist())
        if self.coords is not None and self.metric != "lp":
            d["coords"] = self.coords.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimilaritySpace":
        metric = d.get("metric", "lp")
        if "grid" in d:
            g = d["grid"]
            return line_grid(
                g["m"], lo=g.get("lo", 0.0), hi=g.get("hi", 1.0),
                scale=d.get("scale", 1.0), power=d.get("power", 1.0),
                kind=d.get("kind", "custom"),
            ) if g.get("shape", "line") == "line" else square_grid(
                g["m"], p=d.get("p", 1.0), kind=d.get("kind", "custom"))
        p = d.get("p", 1.0)
        if p == "inf":
            p = math.inf
        return cls(
            d.get("coords"),
            metric,
            p=p,
            scale=d.get("scale", 1.0),
            power=d.get("power", 1.0),
            matrix=d.get("matrix"),
            n=d.get("n"),
            kind=d.get("kind", "custom"),
            dim=d.get("dim"),
        )


def line_grid(m: int, lo: float = 0.0, hi: float = 1.0, *, scale: float = 1.0,
              power: float = 1.0, kind: str = "custom") -> SimilaritySpace:
    """``m`` evenly spaced points on ``[lo, hi]`` with ``min(1, scale*|a-b|**power)``."""
    coords = np.linspace(lo, hi, m) if m > 1 else np.array([lo], dtype=float)
    dim = 1.0 / power if scale > 0 else 0.0
    return SimilaritySpace(coords, "lp", scale=scale, power=power, kind=kind, dim=dim)


def square_grid(m: int, *, p: float = 1.0, kind: str = "custom") -> SimilaritySpace:
    """``m x m`` grid on the unit square (row-major)."""
    t = np.linspace(0.0, 1.0, m)
    xx, yy = np.meshgrid(t, t, indexing="ij")
    coords = np.stack([xx.ravel(), yy.ravel()], axis=1)
    return SimilaritySpace(coords, "lp", p=p, kind=kind, dim=2.0)


def discrete_space(n: int, *, distance: float = 1.0, kind: str = "arms") -> SimilaritySpace:
    return SimilaritySpace(None, "discrete", n=n, scale=distance, kind=kind, dim=0.0)


def zero_space(n: int, *, kind: str = "context") -> SimilaritySpace:
    return SimilaritySpace(None, "zero", n=n, kind=kind, dim=0.0)


class ProductSpace(SimilaritySpace):
    """Feasible context-arm pairs under ``min(1, D_X + D_Y)``.

    Point ``i`` is the pair ``(px[i], py[i])``; pairs are enumerated row-major
    over the feasibility mask.
    """

    def __init__(self, context_space: SimilaritySpace, arm_space: SimilaritySpace, feasible=None):
        nx, ny = len(context_space), len(arm_space)
        if feasible is None:
            feasible = np.ones((nx, ny), dtype=bool)
        feasible = np.asarray(feasible, dtype=bool)
        if feasible.shape != (nx, ny):
            raise MetricError("feasibility mask does not match the component spaces")
        self.context_space = context_space
        self.arm_space = arm_space
        self.feasible = feasible
        self.px, self.py = (a.astype(np.intp) for a in np.nonzero(feasible))
        self.metric = "product"
        self.kind = "product"
        self.n = len(self.px)
        self.coords = None
        self.matrix = None
        dx, dy = context_space.dim, arm_space.dim
        self.dim = None if dx is None or dy is None else dx + dy
        self._dense = None
        self._pair_index = None

    def __repr__(self) -> str:
        return f"ProductSpace(n={self.n}, |X|={len(self.context_space)}, |Y|={len(self.arm_space)})"

    def cross(self, a, b) -> np.ndarray:
        a = np.atleast_1d(np.asarray(a, dtype=np.intp))
        b = np.atleast_1d(np.asarray(b, dtype=np.intp))
        if self._dense is not None:
            return self._dense[np.ix_(a, b)]
        dx = self.context_space.cross(self.px[a], self.px[b])
        dy = self.arm_space.cross(self.py[a], self.py[b])
        return np.minimum(1.0, dx + dy)

    def pair_dist(self, x, y, x2, y2) -> np.ndarray:
        """Distance between pairs given by component indices (broadcasting)."""
        dx = self.context_space.cross(np.atleast_1d(x), np.atleast_1d(x2))
        dy = self.arm_space.cross(np.atleast_1d(y), np.atleast_1d(y2))
        return np.minimum(1.0, dx + dy)

    def index_of(self, x: int, y: int) -> int:
        if self._pair_index is None:
            lookup = -np.ones(self.feasible.shape, dtype=np.intp)
            lookup[self.px, self.py] = np.arange(self.n)
            self._pair_index = lookup
        i = int(self._pair_index[x, y])
        if i < 0:
            raise MetricError(f"pair ({x}, {y}) is not feasible")
        return i

    def to_dict(self) -> dict:
        d = {
            "kind": "product",
            "context": self.context_space.to_dict(),
            "arms": self.arm_space.to_dict(),
        }
        if self.feasible.all():
            d["feasible"] = "all"
        else:
            d["feasible"] = np.argwhere(self.feasible).tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProductSpace":
        X = SimilaritySpace.from_dict(d["context"])
        Y = SimilaritySpace.from_dict(d["arms"])
        return cls(X, Y, feasible_from_json(d.get("feasible", "all"), len(X), len(Y)))


def feasible_from_json(value, nx: int, ny: int) -> np.ndarray:
    if value == "all" or value is None:
        return np.ones((nx, ny), dtype=bool)
    mask = np.zeros((nx, ny), dtype=bool)
    pairs = np.asarray(value, dtype=np.intp).reshape(-1, 2)
    mask[pairs[:, 0], pairs[:, 1]] = True
    return mask


def space_from_dict(d: dict) -> SimilaritySpace:
    if d.get("kind") == "product":
        return ProductSpace.from_dict(d)
    return SimilaritySpace.from_dict(d)


# -- validation --------------------------------------------------------------


def validate_metric(space: SimilaritySpace, *, max_exhaustive: int = 200,
                    samples: int = 100_000, rng=None, tol: float = 1e-9) -> list[str]:
    """Check identity, symmetry, the triangle inequality and the unit bound.

    Exhaustive over all triples for small spaces, random triples otherwise.
    Returns a list of human-readable violations (empty when the space is valid).
    """
    problems = []
    n = len(space)
    if n == 0:
        return problems
    if n <= max_exhaustive:
        idx = np.arange(n)
        D = space.cross(idx, idx)
        if np.abs(np.diag(D)).max() > tol:
            problems.append("dist(p, p) != 0")
        if np.abs(D - D.T).max() > tol:
            problems.append("asymmetric distances")
        if D.max() > 1 + tol or D.min() < -tol:
            problems.append("distance outside [0, 1]")
        # d(i,k) <= d(i,j) + d(j,k) for all j, vectorized over i,k
        for j in range(n):
            if (D - (D[:, j][:, None] + D[j][None, :]) > tol).any():
                problems.append(f"triangle inequality fails through point {j}")
                break
        return problems
    rng = np.random.default_rng(0) if rng is None else rng
    i, j, k = rng.integers(0, n, size=(3, samples))
    batch = 2000
    for s in range(0, samples, batch):
        ii, jj, kk = i[s:s + batch], j[s:s + batch], k[s:s + batch]
        dik = _pairwise_gather(space, ii, kk)
        dij = _pairwise_gather(space, ii, jj)
        djk = _pairwise_gather(space, jj, kk)
        dji = _pairwise_gather(space, jj, ii)
        if (dij < -tol).any() or (dij > 1 + tol).any():
            problems.append("distance outside [0, 1]")
            break
        if (_pairwise_gather(space, ii, ii) > tol).any():
            problems.append("dist(p, p) != 0")
            break
        if (dik > dij + djk + tol).any():
            problems.append("triangle inequality fails on a sampled triple")
            break
        if (np.abs(dij - dji) > tol).any():
            problems.append("asymmetric distances")
            break
    return problems


def _pairwise_gather(space: SimilaritySpace, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise distances d(a[i], b[i])."""
    if isinstance(space, ProductSpace):
        dx = _pairwise_gather(space.context_space, space.px[a], space.px[b])
        dy = _pairwise_gather(space.arm_space, space.py[a], space.py[b])
        return np.minimum(1.0, dx + dy)
    if space.metric == "lp":
        diff = np.abs(space.coords[a] - space.coords[b])
        if space.p == 1.0:
            base = diff.sum(-1)
        elif math.isinf(space.p):
            base = diff.max(-1)
        else:
            base = (diff ** space.p).sum(-1) ** (1.0 / space.p)
        return np.minimum(1.0, space.scale * base ** space.power)
    if space.metric == "discrete":
        return np.where(a == b, 0.0, space.scale)
    if space.metric == "zero":
        return np.zeros(len(a))
    return space.matrix[a, b]


# -- neighborhoods -----------------------------------------------------------


def _as_idx(space: SimilaritySpace, idx) -> np.ndarray:
    if idx is None:
        return np.arange(len(space), dtype=np.intp)
    return np.asarray(idx, dtype=np.intp).ravel()


def _neighbor_lists(space, idx: np.ndarray, radius: float) -> list[np.ndarray]:
    """For each position i in ``idx``: positions j with d <= radius, nearest first."""
    out = []
    for s in range(0, len(idx), _CHUNK):
        D = space.cross(idx[s:s + _CHUNK], idx)
        for row in D:
            nb = np.flatnonzero(row <= radius + EPS)
            out.append(nb[np.lexsort((nb, row[nb]))])
    return out


def _threshold_graph(space, idx: np.ndarray, radius: float):
    import networkx as nx

    G = nx.Graph()
    G.add_nodes_from(range(len(idx)))
    for s in range(0, len(idx), _CHUNK):
        D = space.cross(idx[s:s + _CHUNK], idx)
        ii, jj = np.nonzero(D <= radius + EPS)
        G.add_edges_from((int(a) + s, int(b)) for a, b in zip(ii, jj) if a + s < b)
    return G


# -- covering ----------------------------------------------------------------


def greedy_cover(space: SimilaritySpace, r: float, idx=None) -> list[np.ndarray]:
    """Cover the points by sets of diameter at most ``r``, greedily.

    Each candidate set is grown from a seed point by absorbing uncovered
    neighbours, nearest first, while the diameter stays within ``r``.  The
    largest candidate is taken each step (lazy evaluation, ties to the lowest
    seed).  Returns the chosen sets as arrays of point indices.
    """
    if r <= 0:
        raise MetricError("covering radius must be positive")
    idx = _as_idx(space, idx)
    idx = np.unique(idx)
    m = len(idx)
    if m == 0:
        return []
    nbrs = _neighbor_lists(space, idx, r)
    uncovered = np.ones(m, dtype=bool)

    def grow(seed: int) -> np.ndarray:
        cand = nbrs[seed]
        cand = cand[uncovered[cand]]
        if len(cand) <= 1:
            return cand
        D = space.cross(idx[cand], idx[cand])
        pos = cand
        worst = np.zeros(len(pos))
        keep = np.zeros(len(pos), dtype=bool)
        for c in range(len(pos)):
            if worst[c] <= r + EPS:
                keep[c] = True
                np.maximum(worst, D[c], out=worst)
        return cand[keep]

    heap = [(-len(nbrs[i]), i) for i in range(m)]
    heapq.heapify(heap)
    chosen = []
    while uncovered.any():
        negsize, seed = heapq.heappop(heap)
        if not uncovered[seed]:
            continue
        members = grow(seed)
        if heap and len(members) < -heap[0][0]:
            heapq.heappush(heap, (-len(members), seed))
            continue
        uncovered[members] = False
        chosen.append(idx[members])
    return chosen


def _maximal_cliques(space, idx: np.ndarray, r: float) -> list[list[int]]:
    import networkx as nx

    return [sorted(c) for c in nx.find_cliques(_threshold_graph(space, idx, r))]


def exact_cover(space: SimilaritySpace, r: float, idx=None, *, limit: int = 200) -> list[np.ndarray]:
    """Minimum cover by sets of diameter <= r (set cover over maximal cliques).

    Any set of diameter at most ``r`` is a clique of the threshold graph
    ``d <= r`` and so lies inside a maximal clique; the minimum clique cover
    therefore equals the covering number.  Solved as a 0/1 program.
    """
    from scipy.optimize import Bounds, LinearConstraint, milp
    from scipy.sparse import lil_matrix

    idx = np.unique(_as_idx(space, idx))
    m = len(idx)
    if m == 0:
        return []
    if m > limit:
        raise MetricError(f"exact cover limited to {limit} points, got {m}")
    cliques = _maximal_cliques(space, idx, r)
    A = lil_matrix((m, len(cliques)))
    for j, c in enumerate(cliques):
        for i in c:
            A[i, j] = 1
    res = milp(
        c=np.ones(len(cliques)),
        constraints=LinearConstraint(A.tocsr(), lb=np.ones(m), ub=np.inf),
        integrality=np.ones(len(cliques)),
        bounds=Bounds(0, 1),
    )
    if not res.success:
        raise MetricError(f"set-cover solver failed: {res.message}")
    pick = np.flatnonzero(res.x > 0.5)
    covered = np.zeros(m, dtype=bool)
    sets = []
    for j in pick:
        members = np.array([i for i in cliques[j] if not covered[i]], dtype=np.intp)
        covered[members] = True
        if len(members):
            sets.append(idx[members])
    return sets


def covering_number(space: SimilaritySpace, r: float, idx=None, *, exact: bool = False) -> int:
    """Number of diameter-``r`` sets needed to cover the points (0 if empty).

    Greedy upper bound by default; ``exact=True`` solves the set cover exactly
    for small point sets.
    """
    idx = _as_idx(space, idx)
    if len(idx) == 0:
        return 0
    if exact:
        return len(exact_cover(space, r, idx))
    return len(greedy_cover(space, r, idx))


# -- packing and nets ----------------------------------------------------------


def greedy_packing(space: SimilaritySpace, r: float, idx=None) -> np.ndarray:
    """Maximal r-packing by minimum-degree greedy.

    Repeatedly keep the surviving point with the fewest surviving neighbours
    within ``r`` (lowest index on ties) and discard those neighbours.
    """
    idx = np.unique(_as_idx(space, idx))
    if len(idx) == 0:
        return idx
    nbrs = _neighbor_lists(space, idx, r)
    alive = np.ones(len(idx), dtype=bool)
    deg = np.array([len(nb) for nb in nbrs])
    kept = []
    while alive.any():
        cand = np.flatnonzero(alive)
        c = int(cand[deg[cand].argmin()])
        kept.append(c)
        gone = nbrs[c][alive[nbrs[c]]]
        alive[gone] = False
        for g in gone:
            nb = nbrs[g]
            deg[nb] -= 1
    return idx[np.sort(np.array(kept, dtype=np.intp))]


def _sequential_packing(space: SimilaritySpace, r: float, idx=None) -> np.ndarray:
    """Maximal r-packing in index order: keep a point if it is > r from all kept."""
    idx = np.unique(_as_idx(space, idx))
    kept: list[int] = []
    mind = np.full(len(idx), np.inf)
    for pos in range(len(idx)):
        if mind[pos] > r + EPS:
            kept.append(pos)
            np.minimum(mind, space.cross([idx[pos]], idx)[0], out=mind)
    return idx[np.array(kept, dtype=np.intp)]


def exact_packing(space: SimilaritySpace, r: float, idx=None, *, limit: int = 200) -> np.ndarray:
    """Maximum r-packing: a maximum independent set of the threshold graph."""
    from scipy.optimize import Bounds, LinearConstraint, milp
    from scipy.sparse import lil_matrix

    idx = np.unique(_as_idx(space, idx))
    m = len(idx)
    if m == 0:
        return idx
    if m > limit:
        raise MetricError(f"exact packing limited to {limit} points, got {m}")
    cliques = [c for c in _maximal_cliques(space, idx, r) if len(c) > 1]
    if not cliques:
        return idx
    A = lil_matrix((len(cliques), m))
    for j, c in enumerate(cliques):
        for i in c:
            A[j, i] = 1
    res = milp(
        c=-np.ones(m),
        constraints=LinearConstraint(A.tocsr(), lb=-np.inf, ub=np.ones(len(cliques))),
        integrality=np.ones(m),
        bounds=Bounds(0, 1),
    )
    if not res.success:
        raise MetricError(f"packing solver failed: {res.message}")
    return idx[np.flatnonzero(res.x > 0.5)]


def packing_number(space: SimilaritySpace, r: float, idx=None, *, exact: bool = False) -> int:
    """Size of an r-packing (points pairwise more than ``r`` apart).

    Greedy maximal packing by default, maximum packing with ``exact=True``.
    Empty input gives 0.
    """
    if r <= 0:
        raise MetricError("packing radius must be positive")
    idx = _as_idx(space, idx)
    if len(idx) == 0:
        return 0
    if exact:
        return len(exact_packing(space, r, idx))
    return len(greedy_packing(space, r, idx))


def build_r_net(space: SimilaritySpace, r: float, idx=None) -> np.ndarray:
    """Greedy r-net: net points pairwise > r apart, every point within r of the net."""
    if r <= 0:
        raise MetricError("net radius must be positive")
    return _sequential_packing(space, r, idx)


def check_r_net(space: SimilaritySpace, net, r: float, idx=None) -> list[str]:
    idx = np.unique(_as_idx(space, idx))
    net = np.asarray(net, dtype=np.intp)
    problems = []
    if len(idx) and not len(net):
        return ["empty net for a nonempty set"]
    if len(net) > 1:
        D = space.cross(net, net)
        np.fill_diagonal(D, np.inf)
        if (D <= r + EPS).any():
            problems.append("two net points within distance r")
    if len(idx):
        reach = np.concatenate([space.cross(idx[s:s + _CHUNK], net).min(1)
                                for s in range(0, len(idx), _CHUNK)])
        if (reach > r + EPS).any():
            problems.append("a point is farther than r from the net")
    return problems


def nearest(space: SimilaritySpace, points, targets) -> tuple[np.ndarray, np.ndarray]:
    """For each point, the nearest target (lowest index on ties) and its distance."""
    points = np.atleast_1d(np.asarray(points, dtype=np.intp))
    targets = np.asarray(targets, dtype=np.intp)
    D = space.cross(points, targets)
    j = D.argmin(1)
    return targets[j], D[np.arange(len(points)), j]


# -- doubling constant ---------------------------------------------------------


def doubling_constant_estimate(space: SimilaritySpace, idx=None, *, max_centers: int = 200) -> int:
    """Largest count of half-diameter sets needed to cover a tested ball.

    Tested balls: every point (or an evenly strided subset of ``max_centers``)
    at dyadic radii ``2^-i`` down to the smallest positive distance.  Each ball's
    points (diameter ``D``) are covered greedily by sets of diameter ``D/2``.
    """
    idx = np.unique(_as_idx(space, idx))
    if len(idx) <= 1:
        return 1
    if len(idx) <= DENSE_LIMIT:
        D = space.cross(idx, idx)
    else:
        D = None
    centers = np.arange(len(idx))
    if len(centers) > max_centers:
        centers = centers[np.linspace(0, len(centers) - 1, max_centers).astype(int)]
    if D is not None:
        pos = D[D > EPS]
        dmin = pos.min() if pos.size else 1.0
    else:
        dmin = max(float(np.sort(space.cross(idx[:1], idx)[0])[1]), 1e-6)
    radii = []
    rho = 1.0
    while rho >= dmin / 2:
        radii.append(rho)
        rho /= 2
    best = 1
    seen: set[tuple] = set()
    for c in centers:
        row = D[c] if D is not None else space.cross(idx[[c]], idx)[0]
        for rho in radii:
            members = np.flatnonzero(row <= rho + EPS)
            if len(members) <= best:
                break
            key = tuple(members)
            if key in seen:
                continue
            seen.add(key)
            sub = D[np.ix_(members, members)] if D is not None else space.cross(idx[members], idx[members])
            diam = sub.max()
            if diam <= EPS:
                continue
            count = len(greedy_cover(space, diam / 2, idx[members]))
            best = max(best, count)
    return best
