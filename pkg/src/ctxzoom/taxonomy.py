"""Bandits over a tree-shaped taxonomy of arms with implicit distances.

The distance between two leaves is the payoff spread (weight) of their lowest
common ancestor, which the algorithm never sees.  It samples subtrees by random
descent, estimates both payoffs and weights, and refines the active frontier
when a subtree's estimated weight becomes large relative to its confidence
radius.
"""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .environments import EnvironmentInstance
from .metric import SimilaritySpace, zero_space


class TaxonomyError(ValueError):
    pass


class Taxonomy:
    """Rooted tree given by a parent array (``parent[root] == -1``); leaves are the arms.

    Arms are numbered by increasing leaf node id.
    """

    def __init__(self, parent: Sequence[int], d_T: Optional[int] = None):
        parent = np.asarray(parent, dtype=np.intp)
        n = len(parent)
        if n == 0:
            raise TaxonomyError("empty tree")
        roots = np.flatnonzero(parent < 0)
        if len(roots) != 1:
            raise TaxonomyError("a taxonomy needs exactly one root")
        self.parent = parent
        self.root = int(roots[0])
        self.children: list[list[int]] = [[] for _ in range(n)]
        for v, p in enumerate(parent):
            if p >= 0:
                if p >= n:
                    raise TaxonomyError(f"node {v} has parent {p} outside the tree")
                self.children[p].append(v)
        deg = np.array([len(c) for c in self.children])
        if ((deg == 1)).any():
            raise TaxonomyError("every internal node needs out-degree at least 2")
        self.d_T = int(deg.max()) if d_T is None else int(d_T)
        if deg.max() > self.d_T:
            raise TaxonomyError(f"out-degree {deg.max()} exceeds the bound {self.d_T}")
        self.degree = deg
        # preorder so each subtree is a contiguous slice
        order, depth = [], np.zeros(n, dtype=np.intp)
        stack = [self.root]
        while stack:
            v = stack.pop()
            order.append(v)
            for c in reversed(self.children[v]):
                depth[c] = depth[v] + 1
                stack.append(c)
        if len(order) != n:
            raise TaxonomyError("parent array does not describe a connected tree")
        self.order = np.array(order, dtype=np.intp)
        self.pos = np.empty(n, dtype=np.intp)
        self.pos[self.order] = np.arange(n)
        size = np.ones(n, dtype=np.intp)
        for v in self.order[::-1]:
            if parent[v] >= 0:
                size[parent[v]] += size[v]
        self.end = self.pos + size
        self.depth = depth
        self.is_leaf = deg == 0
        self.leaves = np.flatnonzero(self.is_leaf)
        self.arm_of = np.full(n, -1, dtype=np.intp)
        self.arm_of[self.leaves] = np.arange(len(self.leaves))
        self.internal = np.flatnonzero(~self.is_leaf)

    def __len__(self) -> int:
        return len(self.parent)

    @property
    def n_arms(self) -> int:
        return len(self.leaves)

    def subtree(self, v: int) -> np.ndarray:
        return self.order[self.pos[v]:self.end[v]]

    def path_up(self, v: int) -> list[int]:
        out = []
        while v >= 0:
            out.append(int(v))
            v = self.parent[v]
        return out

    def reach_probabilities(self, v: int) -> np.ndarray:
        """``P(v, u)`` for every node ``u`` (0 outside the subtree of ``v``)."""
        P = np.zeros(len(self))
        P[v] = 1.0
        for u in self.subtree(v):
            if not self.is_leaf[u]:
                share = P[u] / self.degree[u]
                for c in self.children[u]:
                    P[c] = share
        return P

    def random_descend(self, v: int, rng: np.random.Generator) -> int:
        """Walk from ``v`` to a leaf choosing uniformly among children; returns the leaf node."""
        while not self.is_leaf[v]:
            kids = self.children[v]
            v = kids[int(rng.integers(len(kids)))]
        return int(v)

    def leaf_distance(self, leaf_mu) -> np.ndarray:
        """Implicit arm metric: weight of the lowest common ancestor (arms x arms)."""
        leaf_mu = np.asarray(leaf_mu, dtype=float)
        w = all_weights(self, leaf_mu)
        k = self.n_arms
        D = np.zeros((k, k))
        for v in self.internal:
            # pairs of leaves in different children of v have v as their LCA
            groups = [self.arm_of[self.subtree(c)] for c in self.children[v]]
            groups = [g[g >= 0] for g in groups]
            for i, a in enumerate(groups):
                for b in groups[i + 1:]:
                    D[np.ix_(a, b)] = w[v]
                    D[np.ix_(b, a)] = w[v]
        return D

    def to_dict(self) -> dict:
        return {"parent": self.parent.tolist(), "d_T": self.d_T}

    @classmethod
    def from_dict(cls, d: dict) -> "Taxonomy":
        return cls(d["parent"], d.get("d_T"))

    @classmethod
    def balanced(cls, degree: int, depth: int) -> "Taxonomy":
        parent = [-1]
        frontier = [0]
        for _ in range(depth):
            nxt = []
            for p in frontier:
                for _ in range(degree):
                    parent.append(p)
                    nxt.append(len(parent) - 1)
            frontier = nxt
        return cls(parent)

    @classmethod
    def random(cls, rng: np.random.Generator, *, depth: int = 3, d_T: int = 3,
               leaf_prob: float = 0.2) -> "Taxonomy":
        """Random tree: each non-root node above ``depth`` stays a leaf with ``leaf_prob``."""
        parent = [-1]
        frontier = [(0, 0)]
        while frontier:
            v, dep = frontier.pop(0)
            if dep >= depth or (dep > 0 and rng.random() < leaf_prob):
                continue
            for _ in range(int(rng.integers(2, d_T + 1))):
                parent.append(v)
                frontier.append((len(parent) - 1, dep + 1))
        return cls(parent, d_T)


# -- ground-truth oracles --------------------------------------------------------------


def all_weights(tax: Taxonomy, leaf_mu) -> np.ndarray:
    """``wgt(v) = max - min`` of leaf payoffs below ``v`` for every node."""
    leaf_mu = np.asarray(leaf_mu, dtype=float)
    hi = np.full(len(tax), -np.inf)
    lo = np.full(len(tax), np.inf)
    hi[tax.leaves] = lo[tax.leaves] = leaf_mu
    for v in tax.order[::-1]:
        p = tax.parent[v]
        if p >= 0:
            hi[p] = max(hi[p], hi[v])
            lo[p] = min(lo[p], lo[v])
    return hi - lo


def true_weight(tax: Taxonomy, leaf_mu, v: int) -> float:
    return float(all_weights(tax, leaf_mu)[v])


def node_means(tax: Taxonomy, leaf_mu) -> np.ndarray:
    """``mu(v)``: expected payoff of a random sample from the subtree of ``v``."""
    mu = np.zeros(len(tax))
    mu[tax.leaves] = np.asarray(leaf_mu, dtype=float)
    for v in tax.order[::-1]:
        if not tax.is_leaf[v]:
            mu[v] = np.mean(mu[tax.children[v]])
    return mu


def true_quality(tax: Taxonomy, leaf_mu) -> float:
    """Largest ``q`` such that every informative subtree holding an optimal arm has
    internal ``u, u'`` with ``|mu(u) - mu(u')| >= wgt(v)/2`` and both reach
    probabilities at least ``q``.

    Subtrees of weight 0 are not informative; with none left the quality is 1.
    The value can be 0 (for instance when an informative subtree has a single
    internal node).
    """
    leaf_mu = np.asarray(leaf_mu, dtype=float)
    w = all_weights(tax, leaf_mu)
    mu = node_means(tax, leaf_mu)
    best_arm = tax.leaves[leaf_mu >= leaf_mu.max()]
    holders = set()
    for leaf in best_arm:
        holders.update(tax.path_up(int(leaf)))
    q = 1.0
    for v in sorted(holders):
        if w[v] <= 0:
            continue
        sub = tax.subtree(v)
        inner = sub[~tax.is_leaf[sub]]
        P = tax.reach_probabilities(v)[inner]
        gap = np.abs(mu[inner][:, None] - mu[inner][None, :]) >= w[v] / 2 - 1e-12
        score = np.where(gap, np.minimum(P[:, None], P[None, :]), 0.0)
        q = min(q, float(score.max()))
    return q


# -- algorithm ---------------------------------------------------------------------------


def tax_confidence_radius(n, T: float, *, log_T: Optional[float] = None):
    """``sqrt(8 log T / (2 + n))`` with the natural log."""
    if log_T is None:
        if T < 2:
            raise ValueError("horizon must be at least 2")
        log_T = math.log(T)
    return np.sqrt(8.0 * log_T / (2.0 + np.asarray(n, dtype=float)))


def k_a(q_hat: float) -> float:
    if not 0 < q_hat <= 1:
        raise ValueError("q_hat must lie in (0, 1]")
    return 4.0 * math.sqrt(2.0 / q_hat)


def node_index(n, payoff_sum, T: float, q_hat: float, *, log_T: Optional[float] = None):
    """``mu_t(v) + (1 + 2 k_A) rad_t(v)`` with ``mu_t = 0`` for unsampled nodes."""
    n = np.asarray(n, dtype=float)
    mean = np.divide(payoff_sum, n, out=np.zeros_like(n), where=n > 0)
    return mean + (1.0 + 2.0 * k_a(q_hat)) * tax_confidence_radius(n, T, log_T=log_T)


def weight_estimate_pairs(n, payoff_sum, nodes, log_T: float) -> float:
    """Reference pair scan: ``max over u1, u2 of max(0, |mu1 - mu2| - rad1 - rad2)``."""
    n = np.asarray(n, dtype=float)[nodes]
    s = np.asarray(payoff_sum, dtype=float)[nodes]
    mean = np.divide(s, n, out=np.zeros_like(n), where=n > 0)
    rad = tax_confidence_radius(n, 0, log_T=log_T)
    gap = np.abs(mean[:, None] - mean[None, :]) - rad[:, None] - rad[None, :]
    return float(max(0.0, gap.max()))


class TaxonomyBandit:
    """Active-frontier bandit on a taxonomy.

    Each round: (S1) split active internal nodes whose weight estimate reaches
    ``k_A`` times their confidence radius; (S2) select the active node of
    largest index (lowest id on ties); (S3) play a random leaf below it.
    Feedback updates every node on the path from the selected node down to the
    played leaf.
    """

    name = "taxonomy"

    def __init__(self, tax: Taxonomy, T: int, rng: np.random.Generator, q_hat: float = 0.5):
        self.tax = tax
        self.T = int(T)
        self.log_T = math.log(max(self.T, 2))
        self.q_hat = float(q_hat)
        self.k_A = k_a(q_hat)
        self.rng = rng
        m = len(tax)
        self.n = np.zeros(m)
        self.payoff_sum = np.zeros(m)
        self.active = np.zeros(m, dtype=bool)
        self.active[tax.root] = True
        self.retired = np.zeros(m, dtype=bool)
        self.selected_count = np.zeros(m, dtype=np.intp)
        # hi[v] = max over T(v) of (mu_t - rad), lo[v] = min over T(v) of (mu_t + rad)
        r0 = math.sqrt(8.0 * self.log_T / 2.0)
        self.hi = np.full(m, -r0)
        self.lo = np.full(m, r0)
        self.deactivations: list[tuple[int, int]] = []
        self.round = 0
        self._check = [tax.root]
        self.last_cell = -1
        self._pending = None

    @property
    def structure_size(self) -> int:
        return int(self.active.sum())

    def rad(self, v) -> np.ndarray:
        return tax_confidence_radius(self.n[v], 0, log_T=self.log_T)

    def weight_estimate(self, v: int) -> float:
        if self.tax.is_leaf[v]:
            raise TaxonomyError("weight estimates are defined for internal nodes")
        return max(0.0, float(self.hi[v] - self.lo[v]))

    def index(self, v) -> np.ndarray:
        n = self.n[v]
        mean = np.divide(self.payoff_sum[v], n, out=np.zeros_like(n), where=n > 0)
        return mean + (1.0 + 2.0 * self.k_A) * self.rad(v)

    def rebalance(self) -> list[int]:
        """Step S1; returns the nodes deactivated in this call."""
        out = []
        work = list(self._check)
        while work:
            v = work.pop()
            if not self.active[v] or self.tax.is_leaf[v]:
                continue
            if self.weight_estimate(v) >= self.k_A * float(self.rad(v)):
                self.active[v] = False
                self.retired[v] = True
                out.append(v)
                self.deactivations.append((v, self.round))
                for c in self.tax.children[v]:
                    self.active[c] = True
                    work.append(c)
        self._check = []
        return out

    def select(self) -> int:
        nodes = np.flatnonzero(self.active)
        return int(nodes[np.argmax(self.index(nodes))])

    def step(self) -> tuple[int, int]:
        """S1 to S3: returns ``(selected node, played leaf node)``."""
        self.rebalance()
        v = self.select()
        leaf = self.tax.random_descend(v, self.rng)
        self._pending = (v, leaf)
        self.last_cell = v
        return v, leaf

    def feedback(self, node: int, leaf: int, payoff: float) -> None:
        if self._pending != (node, leaf):
            raise TaxonomyError("feedback does not match the node and leaf played this round")
        if not 0.0 <= payoff <= 1.0:
            raise ValueError(f"payoff {payoff} outside [0, 1]")
        self._pending = None
        self.selected_count[node] += 1
        path = []
        u = leaf
        while True:
            path.append(u)
            if u == node:
                break
            u = self.tax.parent[u]
        path = np.array(path)
        self.n[path] += 1
        self.payoff_sum[path] += payoff
        self._refresh(leaf)
        self._check = [node]
        self.round += 1

    def _refresh(self, leaf: int) -> None:
        # own terms changed only on the played path; aggregate up to the root
        log_T = self.log_T
        for u in self.tax.path_up(leaf):
            n = self.n[u]
            mean = self.payoff_sum[u] / n if n > 0 else 0.0
            rad = math.sqrt(8.0 * log_T / (2.0 + n))
            hi, lo = mean - rad, mean + rad
            for c in self.tax.children[u]:
                hi = max(hi, self.hi[c])
                lo = min(lo, self.lo[c])
            self.hi[u], self.lo[u] = hi, lo

    # harness interface: a single context, arms are leaves
    def choose(self, x: int) -> int:
        _, leaf = self.step()
        return int(self.tax.arm_of[leaf])

    def update(self, x: int, arm: int, payoff: float) -> None:
        if self._pending is None or self.tax.arm_of[self._pending[1]] != arm:
            raise TaxonomyError("update does not match the last choice")
        self.feedback(self._pending[0], self._pending[1], payoff)

    def snapshot(self) -> dict:
        return {
            "algorithm": "taxonomy",
            "T": self.T,
            "q_hat": self.q_hat,
            "round": self.round,
            "tree": self.tax.to_dict(),
            "n": self.n.tolist(),
            "payoff_sum": self.payoff_sum.tolist(),
            "active": np.flatnonzero(self.active).tolist(),
            "retired": np.flatnonzero(self.retired).tolist(),
            "selected": self.selected_count.tolist(),
            "deactivations": [list(d) for d in self.deactivations],
        }


class PhasedTaxonomyBandit:
    """Removes the dependence on ``T`` and ``q_hat``: phase ``i`` runs a fresh
    instance for ``2^i`` rounds with ``q_hat = 1/i``."""

    name = "taxonomy_phased"

    def __init__(self, tax: Taxonomy, T: int, rng: np.random.Generator):
        self.tax = tax
        self.rng = rng
        self.phase = 0
        self.left = 0
        self.inner: Optional[TaxonomyBandit] = None

    @property
    def structure_size(self) -> int:
        return self.inner.structure_size if self.inner else 1

    @property
    def last_cell(self) -> int:
        return self.inner.last_cell if self.inner else -1

    def choose(self, x: int) -> int:
        if self.left == 0:
            self.phase += 1
            self.left = 2 ** self.phase
            self.inner = TaxonomyBandit(self.tax, self.left, self.rng, q_hat=1.0 / self.phase)
        return self.inner.choose(x)

    def update(self, x: int, arm: int, payoff: float) -> None:
        self.inner.update(x, arm, payoff)
        self.left -= 1


# -- environments and audits ------------------------------------------------------------


def make_taxonomy_env(tax: Taxonomy, leaf_mu, T: int) -> EnvironmentInstance:
    """Single-context instance whose arms are the leaves, with the implicit tree metric."""
    leaf_mu = np.asarray(leaf_mu, dtype=float)
    if leaf_mu.shape != (tax.n_arms,):
        raise TaxonomyError("need one expected payoff per leaf")
    Y = SimilaritySpace(None, "matrix", matrix=tax.leaf_distance(leaf_mu), kind="arms")
    env = EnvironmentInstance(
        zero_space(1), Y, leaf_mu[None, :], np.ones((1, tax.n_arms), dtype=bool),
        np.zeros(T, dtype=np.intp), cyclic=True, name="taxonomy",
        params={"tree": tax.to_dict(), "leaf_mu": leaf_mu.tolist(), "T": T},
    )
    return env


def clustered_payoffs(tax: Taxonomy, rng: np.random.Generator, *, spread: float = 0.4,
                      base: float = 0.5) -> np.ndarray:
    """Leaf payoffs constant on each bottom cluster (leaves sharing a parent),
    drifting by ``spread * 2^-depth`` steps along the tree."""
    value = np.zeros(len(tax))
    value[tax.root] = base
    for v in tax.order:
        for c in tax.children[v]:
            step = spread * 2.0 ** -tax.depth[c]
            value[c] = value[v] + (rng.uniform(-step, step) if not tax.is_leaf[c] else 0.0)
    return np.clip(value[tax.leaves], 0.0, 1.0)


def random_taxonomy_env(*, T: int, rng=None, depth: int = 3, d_T: int = 3, leaf_prob: float = 0.2,
                        spread: float = 0.4) -> EnvironmentInstance:
    rng = np.random.default_rng(rng)
    tax = Taxonomy.random(rng, depth=depth, d_T=d_T, leaf_prob=leaf_prob)
    env = make_taxonomy_env(tax, clustered_payoffs(tax, rng, spread=spread), T)
    env.params.update({"depth": depth, "d_T": d_T, "leaf_prob": leaf_prob, "spread": spread})
    return env


def taxonomy_from_env(env: EnvironmentInstance) -> Taxonomy:
    if "tree" not in env.params:
        raise TaxonomyError("instance does not carry a taxonomy")
    return Taxonomy.from_dict(env.params["tree"])


class TaxonomyAuditor:
    """Per-round replay checks for :class:`TaxonomyBandit`.

    invariant: after S1 every active internal node has ``wgt_t < k_A rad_t``
    (recomputed from raw counts over each subtree); weight_bound: those
    estimates never exceed the true weight (a clean-execution property);
    path: the nodes whose counts changed are exactly the selected-node-to-leaf
    path; p1, p2: the two clean-execution properties; lemma3b: badness at most
    four times the true weight at every deactivation; lemma3a is evaluated by
    :meth:`finish`.
    """

    checks = ("invariant", "weight_bound", "path", "frontier", "p1", "p2", "lemma3a", "lemma3b")

    def __init__(self, env: EnvironmentInstance, T: int):
        self.tax = taxonomy_from_env(env)
        self.leaf_mu = env.mu[0]
        self.mu = node_means(self.tax, self.leaf_mu)
        self.wgt = all_weights(self.tax, self.leaf_mu)
        self.mu_star = float(self.leaf_mu.max())
        self.stats = {c: {"violations": 0, "events": 0, "first_round": None, "detail": ""} for c in self.checks}
        tax = self.tax
        anc, desc, prob = [], [], []
        for v in tax.internal:
            P = tax.reach_probabilities(v)
            sub = tax.subtree(v)[1:]
            anc.extend([v] * len(sub))
            desc.extend(sub.tolist())
            prob.extend(P[sub].tolist())
        self.anc = np.array(anc, dtype=np.intp)
        self.desc = np.array(desc, dtype=np.intp)
        self.prob = np.array(prob)
        self._seen_deact = 0

    def _note(self, check, t, ok_count, events, detail=""):
        s = self.stats[check]
        s["events"] += events
        bad = events - ok_count
        if bad:
            s["violations"] += bad
            if s["first_round"] is None:
                s["first_round"] = t
                s["detail"] = detail

    def before(self, t: int, x: int, policy: TaxonomyBandit) -> None:
        self._n = policy.n.copy()
        self._retired = policy.retired.copy()

    def after(self, t: int, x: int, y: int, payoff: float, policy: TaxonomyBandit) -> None:
        tax = self.tax
        log_T = policy.log_T
        v = policy.last_cell
        leaf = int(tax.leaves[y])
        # invariant after S1 (checked on the state used for selection: counts before feedback)
        n_old = self._n
        s_old = policy.payoff_sum.copy()
        path = [leaf]
        while path[-1] != v:
            path.append(int(tax.parent[path[-1]]))
        s_old[path] -= payoff
        mean = np.divide(s_old, n_old, out=np.zeros_like(n_old), where=n_old > 0)
        rad = tax_confidence_radius(n_old, 0, log_T=log_T)
        act = np.flatnonzero(policy.active & ~tax.is_leaf)
        if len(act):
            order_hi = (mean - rad)[tax.order]
            order_lo = (mean + rad)[tax.order]
            ok = below = 0
            for a in act:
                seg = slice(tax.pos[a], tax.end[a])
                wgt_t = max(0.0, order_hi[seg].max() - order_lo[seg].min())
                ok += wgt_t < policy.k_A * rad[a]
                below += wgt_t <= self.wgt[a] + 1e-12
            self._note("invariant", t, ok, len(act), "active node violates the weight invariant")
            self._note("weight_bound", t, below, len(act), "weight estimate above the true weight")
        changed = np.flatnonzero(policy.n != n_old)
        self._note("path", t, int(sorted(changed.tolist()) == sorted(path)), 1,
                   f"updated nodes {changed.tolist()} differ from path {path}")
        self._note("frontier", t, int(not (self._retired & policy.active).any()), 1, "a retired node is active again")
        # clean-execution properties on the current counts
        n = policy.n
        pos = n > 0
        mean = np.divide(policy.payoff_sum, n, out=np.zeros_like(n), where=pos)
        rad = tax_confidence_radius(n, 0, log_T=log_T)
        ok = np.abs(mean - self.mu)[pos] <= rad[pos] + 1e-12
        self._note("p1", t, int(ok.sum()), int(pos.sum()), "empirical mean outside its confidence radius")
        need = n[self.anc] * self.prob >= 8.0 * log_T
        if need.any():
            ok = n[self.desc][need] >= 0.5 * n[self.anc][need] * self.prob[need]
            self._note("p2", t, int(ok.sum()), int(need.sum()), "descendant under-sampled")
        new = policy.deactivations[self._seen_deact:]
        self._seen_deact = len(policy.deactivations)
        for node, _ in new:
            delta = self.mu_star - self.mu[node]
            self._note("lemma3b", t, int(delta <= 4 * self.wgt[node] + 1e-12), 1,
                       f"node {node}: badness {delta:.4g} > 4 * weight {self.wgt[node]:.4g}")

    def finish(self, policy: TaxonomyBandit) -> None:
        N = policy.selected_count
        pos = np.flatnonzero(N > 0)
        delta = self.mu_star - self.mu[pos]
        bound = 1e3 * policy.k_A ** 2 * policy.log_T
        ok = N[pos] * delta ** 2 <= bound
        self._note("lemma3a", policy.round, int(ok.sum()), len(pos), "selection count too large for its badness")

    def report(self) -> dict:
        return {c: dict(s, passed=s["violations"] == 0) for c, s in self.stats.items()}


def save_taxonomy(tax: Taxonomy, leaf_mu, path) -> None:
    Path(path).write_text(json.dumps({"tree": tax.to_dict(), "leaf_mu": np.asarray(leaf_mu).tolist()}))


def load_taxonomy(path) -> tuple[Taxonomy, np.ndarray]:
    d = json.loads(Path(path).read_text())
    return Taxonomy.from_dict(d["tree"]), np.asarray(d["leaf_mu"], dtype=float)
