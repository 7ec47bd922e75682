"""Contextual zooming over the similarity space of feasible context-arm pairs.

The algorithm keeps a growing collection of balls (all of them stay active).
Each round it looks at the balls whose domain meets the arriving context,
takes the one with the largest index and plays the lowest-index arm in its
domain.  A ball whose confidence radius has dropped to its own radius spawns a
child of half the radius at the pair just played.
"""
from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .metric import EPS, ProductSpace, space_from_dict

MIN_RADIUS = 2.0 ** -20
MATRIX_LIMIT = 4096
CACHE_LIMIT = 100_000


class ZoomingFault(RuntimeError):
    """The ball collection lost a property that a correct build always keeps."""


def confidence_radius(n, T: float, *, log_T: Optional[float] = None):
    """``4 * sqrt(log T / (1 + n))`` with the natural log."""
    if log_T is None:
        if T < 2:
            raise ValueError("horizon must be at least 2")
        log_T = math.log(T)
    return 4.0 * np.sqrt(log_T / (1.0 + np.asarray(n, dtype=float)))


def preindex_value(n, payoff_sum, radius, log_T: float):
    n = np.asarray(n, dtype=float)
    nu = np.divide(payoff_sum, n, out=np.zeros_like(n), where=n > 0)
    return nu + 2.0 * np.asarray(radius) + confidence_radius(n, 0, log_T=log_T)


class ContextualZooming:
    """Contextual zooming policy on a :class:`ProductSpace`.

    ``fault`` exists for mutation testing only: ``"skip_activation"`` never
    activates children.
    """

    name = "zooming"

    def __init__(self, space: ProductSpace, T: int, *, fault: Optional[str] = None,
                 min_radius: float = MIN_RADIUS):
        if not isinstance(space, ProductSpace):
            raise TypeError("contextual zooming runs on a ProductSpace of feasible pairs")
        if space.n == 0:
            raise ValueError("no feasible context-arm pairs")
        self.space = space
        self.X = space.context_space
        self.Y = space.arm_space
        self.feasible = space.feasible
        self.T = int(T)
        self.log_T = math.log(max(self.T, 2))
        self.fault = fault
        self.min_radius = min_radius
        self._DY = self.Y.dense() if len(self.Y) <= 2000 else None
        self._arms: dict[int, np.ndarray] = {}
        cap = 64
        self.cx = np.zeros(cap, dtype=np.intp)
        self.cy = np.zeros(cap, dtype=np.intp)
        self.level = np.zeros(cap, dtype=np.intp)
        self.radius = np.zeros(cap)
        self.n = np.zeros(cap)
        self.payoff_sum = np.zeros(cap)
        self.parent = np.full(cap, -1, dtype=np.intp)
        self.activated = np.zeros(cap, dtype=np.intp)
        self.pre = np.zeros(cap)
        # M[i, j] = D(center_i, center_j) if r_j >= r_i else inf, kept while small
        self._M = np.full((cap, cap), np.inf)
        self._cache: dict[int, tuple] = {}
        self.size = 0
        self.round = 0
        self.floor_reached = False
        self._add(int(space.px[0]), int(space.py[0]), 0, -1, -1)
        self.last_cell = -1
        self.last_rad = math.inf
        self.last_child = -1
        self._pending = None

    # -- ball storage ---------------------------------------------------------

    def _add(self, x: int, y: int, level: int, parent: int, t: int) -> int:
        if self.size == len(self.cx):
            for name in ("cx", "cy", "level", "radius", "n", "payoff_sum", "parent", "activated", "pre"):
                a = getattr(self, name)
                grown = np.zeros(2 * len(a), dtype=a.dtype)
                grown[: len(a)] = a
                setattr(self, name, grown)
            if self._M is not None:
                cap = len(self.cx)
                if cap > MATRIX_LIMIT:
                    self._M = None
                else:
                    M = np.full((cap, cap), np.inf)
                    M[: self.size, : self.size] = self._M[: self.size, : self.size]
                    self._M = M
        b = self.size
        self.cx[b], self.cy[b], self.level[b] = x, y, level
        self.radius[b] = 2.0 ** -level
        self.parent[b], self.activated[b] = parent, t
        self.n[b] = self.payoff_sum[b] = 0.0
        self.pre[b] = 2.0 * self.radius[b] + 4.0 * math.sqrt(self.log_T)
        self.size += 1
        if self._M is not None:
            d = self.center_dist([b], np.arange(self.size))[0]
            lv = self.level[: self.size]
            self._M[b, : self.size] = np.where(lv <= level, d, np.inf)
            self._M[: self.size, b] = np.where(lv >= level, d, np.inf)
        return b

    @property
    def structure_size(self) -> int:
        return self.size

    def _dy(self, rows, cols) -> np.ndarray:
        if self._DY is not None:
            return self._DY[np.ix_(rows, cols)]
        return self.Y.cross(rows, cols)

    def _feasible_arms(self, x: int) -> np.ndarray:
        arms = self._arms.get(x)
        if arms is None:
            arms = np.flatnonzero(self.feasible[x])
            self._arms[x] = arms
        return arms

    # -- per-ball quantities ----------------------------------------------------

    def confidence(self, ids=None) -> np.ndarray:
        ids = slice(0, self.size) if ids is None else ids
        return confidence_radius(self.n[ids], 0, log_T=self.log_T)

    def preindex(self, ids=None) -> np.ndarray:
        ids = slice(0, self.size) if ids is None else ids
        return self.pre[ids]

    def center_dist(self, a, b) -> np.ndarray:
        a = np.atleast_1d(a)
        b = np.atleast_1d(b)
        d = self.X.cross(self.cx[a], self.cx[b]) + self._dy(self.cy[a], self.cy[b])
        return np.minimum(1.0, d)

    def index(self, ids) -> np.ndarray:
        """``min over balls B' with r(B') >= r(B) of preindex(B') + D(B, B')``."""
        ids = np.atleast_1d(ids)
        if self._M is not None:
            return (self.pre[None, : self.size] + self._M[ids, : self.size]).min(axis=1)
        total = self.pre[None, : self.size] + self.center_dist(ids, np.arange(self.size))
        total[self.level[None, : self.size] > self.level[ids][:, None]] = np.inf
        return total.min(axis=1)

    def domain_mask(self, x: int, upto: Optional[int] = None):
        """Candidate balls for context ``x`` and their domain over feasible arms.

        Returns ``(balls, arms, mask)`` where ``mask[i, j]`` says whether
        ``(x, arms[j])`` lies in ``balls[i]`` and in no active ball of strictly
        smaller radius.
        """
        nb = self.size if upto is None else upto
        arms = self._feasible_arms(x)
        dx = self.X.cross([x], self.cx[:nb])[0]
        balls = np.flatnonzero(dx <= self.radius[:nb] + EPS)
        dist = np.minimum(1.0, dx[balls][:, None] + self._dy(self.cy[balls], arms))
        inside = dist <= self.radius[balls][:, None] + EPS
        lv = self.level[balls]
        mask = inside.copy()
        covered = np.zeros(len(arms), dtype=bool)
        for l in np.unique(lv)[::-1]:
            rows = lv == l
            mask[rows] &= ~covered
            covered |= inside[rows].any(axis=0)
        return balls, arms, mask

    # -- policy interface ---------------------------------------------------------

    def relevant(self, x: int) -> tuple[np.ndarray, np.ndarray]:
        """Relevant balls for context ``x`` and the lowest arm in each one's domain.

        Cached per context; a cached entry is rebuilt only when a ball added
        since then could contain a pair with context ``x``.
        """
        hit = self._cache.get(x)
        if hit is not None:
            built, rel, first = hit
            if built == self.size:
                return rel, first
            dx = self.X.cross([x], self.cx[built:self.size])[0]
            if not (dx <= self.radius[built:self.size] + EPS).any():
                self._cache[x] = (self.size, rel, first)
                return rel, first
        balls, arms, mask = self.domain_mask(x)
        relevant = mask.any(axis=1)
        if not relevant.any():
            raise ZoomingFault(f"round {self.round}: no relevant ball for context {x}")
        rel = balls[relevant]
        first = arms[np.argmax(mask[relevant], axis=1)]
        if len(self._cache) > CACHE_LIMIT:
            self._cache.clear()
        self._cache[x] = (self.size, rel, first)
        return rel, first

    def choose(self, x: int) -> int:
        rel, first = self.relevant(x)
        idx = self.index(rel)
        pick = int(np.argmax(idx))
        b = int(rel[pick])
        arm = int(first[pick])
        self.last_cell = b
        self.last_rad = 4.0 * math.sqrt(self.log_T / (1.0 + self.n[b]))
        self.last_child = -1
        self._pending = (x, arm, b)
        return arm

    def update(self, x: int, arm: int, payoff: float) -> None:
        if not 0.0 <= payoff <= 1.0:
            raise ValueError(f"payoff {payoff} outside [0, 1]")
        if self._pending is None or self._pending[:2] != (x, arm):
            raise ValueError("update does not match the last choice")
        b = self._pending[2]
        self._pending = None
        self.n[b] += 1
        self.payoff_sum[b] += payoff
        self.pre[b] = (self.payoff_sum[b] / self.n[b] + 2.0 * self.radius[b]
                       + 4.0 * math.sqrt(self.log_T / (1.0 + self.n[b])))
        if self.last_rad <= self.radius[b] and self.fault != "skip_activation":
            if self.radius[b] / 2 >= self.min_radius:
                self.last_child = self._add(x, arm, int(self.level[b]) + 1, b, self.round)
            else:
                self.floor_reached = True
        self.round += 1

    # -- snapshots -----------------------------------------------------------------

    def snapshot(self) -> dict:
        s = self.size
        return {
            "algorithm": "zooming",
            "T": self.T,
            "round": self.round,
            "log_T": self.log_T,
            "space": self.space.to_dict(),
            "balls": [
                {"center": [int(self.cx[i]), int(self.cy[i])], "radius": float(self.radius[i]),
                 "n": int(self.n[i]), "payoff_sum": float(self.payoff_sum[i]),
                 "parent": int(self.parent[i]) if self.parent[i] >= 0 else None,
                 "activation_round": int(self.activated[i])}
                for i in range(s)
            ],
        }


def audit_snapshot(snap: dict, space: Optional[ProductSpace] = None) -> dict:
    """Structural checks on a zooming snapshot; ``{check: (ok, detail)}``."""
    if space is None:
        space = space_from_dict(snap["space"])
    balls = snap["balls"]
    cx = np.array([b["center"][0] for b in balls], dtype=np.intp)
    cy = np.array([b["center"][1] for b in balls], dtype=np.intp)
    r = np.array([b["radius"] for b in balls])
    out = {}

    # covering: any ball of radius 1 covers everything (distances are truncated at 1)
    if (r >= 1.0).any():
        out["covering"] = (True, "")
    else:
        pts = np.arange(space.n)
        centers = np.array([space.index_of(x, y) for x, y in zip(cx, cy)])
        ok = True
        for s in range(0, space.n, 512):
            d = space.cross(pts[s:s + 512], centers)
            if not (d <= r[None, :] + EPS).any(axis=1).all():
                ok = False
                break
        out["covering"] = (ok, "" if ok else "some feasible pair lies in no ball")

    bad = ""
    for rad in np.unique(r):
        ids = np.flatnonzero(r == rad)
        if len(ids) < 2:
            continue
        d = np.minimum(1.0, space.context_space.cross(cx[ids], cx[ids])
                       + space.arm_space.cross(cy[ids], cy[ids]))
        np.fill_diagonal(d, np.inf)
        if (d <= rad).any():
            i, j = np.argwhere(d <= rad)[0]
            bad = f"balls {ids[i]} and {ids[j]} of radius {rad} are {d[i, j]:.4g} apart"
            break
    out["separation"] = (not bad, bad)

    bad = ""
    for i, b in enumerate(balls):
        p = b["parent"]
        if b["n"] < 0 or not -EPS <= b["payoff_sum"] <= b["n"] + EPS:
            bad = f"ball {i}: statistics out of range"
        elif p is None:
            if i != 0 or b["radius"] != 1.0:
                bad = f"ball {i}: only the first ball may lack a parent"
        elif abs(balls[p]["radius"] - 2 * b["radius"]) > EPS:
            bad = f"ball {i}: radius is not half its parent's"
        elif balls[p]["activation_round"] >= b["activation_round"]:
            bad = f"ball {i}: activated no later than its parent"
        if bad:
            break
    out["parent_chain"] = (not bad, bad)
    return out


class ZoomAuditor:
    """Per-round replay checks for :class:`ContextualZooming`.

    The auditor keeps its own play counts and payoff sums per ball and
    recomputes domains, indices and activations from scratch, so it does not
    share the policy's caches.  Checks:

    * ``domain``: the played arm is the lowest arm in the selected ball's domain;
    * ``selection``: the selected ball has the largest index among relevant balls;
    * ``activation``: a child appears exactly when the pre-update confidence
      radius is at most the ball's radius, centred at the played pair;
    * ``separation``: a new child is more than its radius away from every
      other ball of the same radius;
    * ``parent_chain``: a child's radius is half its parent's;
    * ``clean``: ``|nu(B) - mu(center)| <= r(B) + rad(B)``, counted over every
      (round, ball) pair;
    * ``lemma``: the played pair has badness at most ``15 r(B)``;
    * ``corollary``: a new child's center has badness at most ``12 r(child)``;
    * ``covering``: evaluated on the final ball set by :meth:`finish`.

    ``lemma`` and ``corollary`` hold in clean executions; ``clean`` itself is a
    high-probability event, so a rare violation is not a bug.
    """

    checks = ("domain", "selection", "activation", "separation", "parent_chain",
              "clean", "lemma", "corollary", "covering")

    def __init__(self, env, T: int):
        self.env = env
        self.X = env.context_space
        self.Y = env.arm_space
        self.DY = self.Y.dense() if len(self.Y) <= 2000 else None
        self.feasible = env.feasible
        self.log_T = math.log(max(int(T), 2))
        self.gap = env.badness() if env.has_exact_mu else None
        self.stats = {c: {"violations": 0, "events": 0, "first_round": None, "detail": ""} for c in self.checks}
        self.cx: list[int] = []
        self.cy: list[int] = []
        self.r: list[float] = []
        self.n: list[float] = []
        self.s: list[float] = []
        self._unclean: set[int] = set()

    def _note(self, check: str, t: int, ok: bool, detail: str = "") -> None:
        st = self.stats[check]
        st["events"] += 1
        if not ok:
            st["violations"] += 1
            if st["first_round"] is None:
                st["first_round"] = t
                st["detail"] = detail

    def _dy(self, rows, cols):
        if self.DY is not None:
            return self.DY[np.ix_(rows, cols)]
        return self.Y.cross(rows, cols)

    def _sync(self, policy: ContextualZooming) -> None:
        # pick up the root ball on the first round
        if not self.cx:
            self.cx.append(int(policy.cx[0]))
            self.cy.append(int(policy.cy[0]))
            self.r.append(float(policy.radius[0]))
            self.n.append(0.0)
            self.s.append(0.0)

    def before(self, t: int, x: int, policy: ContextualZooming) -> None:
        self._sync(policy)
        self._size = policy.size

    def after(self, t: int, x: int, y: int, payoff: float, policy: ContextualZooming) -> None:
        b = policy.last_cell
        nb = len(self.cx)
        cx = np.array(self.cx)
        cy = np.array(self.cy)
        r = np.array(self.r)
        n = np.array(self.n)
        s = np.array(self.s)
        arms = np.flatnonzero(self.feasible[x])
        dx = self.X.cross([x], cx)[0]
        near = np.flatnonzero(dx <= r + EPS)
        inside = np.minimum(1.0, dx[near][:, None] + self._dy(cy[near], arms)) <= r[near][:, None] + EPS
        # a pair belongs to the domain of the smallest balls containing it
        smallest = np.where(inside, r[near][:, None], np.inf).min(axis=0)
        dom = inside & (r[near][:, None] <= smallest[None, :])
        relevant = dom.any(axis=1)
        rel = near[relevant]
        lowest = arms[np.argmax(dom[relevant], axis=1)]
        rad = 4.0 * np.sqrt(self.log_T / (1.0 + n))
        nu = np.divide(s, n, out=np.zeros_like(n), where=n > 0)
        pre = nu + 2.0 * r + rad
        dc = np.minimum(1.0, self.X.cross(cx[rel], cx) + self._dy(cy[rel], cy))
        dc[r[None, :] < r[rel][:, None]] = np.inf
        index = (pre[None, :] + dc).min(axis=1)
        best = rel[np.argmax(index)] if len(rel) else -1
        self._note("selection", t, b == best, f"selected ball {b}, replay picks {best}")
        where = np.flatnonzero(rel == b)
        ok = len(where) == 1 and lowest[where[0]] == y
        self._note("domain", t, ok, f"played arm {y} is not the lowest arm in the domain of ball {b}")
        if not 0 <= b < nb:
            return

        grow = policy.size - self._size
        due = rad[b] <= r[b] and r[b] / 2 >= policy.min_radius
        ok = grow == (1 if due else 0)
        if ok and grow:
            c = policy.size - 1
            ok = (policy.cx[c], policy.cy[c]) == (x, y) and policy.parent[c] == b
        self._note("activation", t, ok, f"ball {b}: rad {rad[b]:.4g} vs r {r[b]:.4g}, {grow} new balls")

        self.n[b] += 1
        self.s[b] += payoff
        if self.gap is not None:
            n_b = self.n[b]
            mu_c = self.env.mu[self.cx[b], self.cy[b]]
            err = abs(self.s[b] / n_b - mu_c)
            if err <= self.r[b] + 4.0 * math.sqrt(self.log_T / (1.0 + n_b)) + EPS:
                self._unclean.discard(b)
            else:
                self._unclean.add(b)
            # every (round, ball) pair is an event; only the updated ball can change status
            st = self.stats["clean"]
            st["events"] += nb
            if self._unclean:
                st["violations"] += len(self._unclean)
                if st["first_round"] is None:
                    st["first_round"] = t
                    st["detail"] = f"ball {b}: |nu - mu(center)| = {err:.4g}"
            self._note("lemma", t, self.gap[x, y] <= 15.0 * self.r[b] + EPS,
                       f"pair ({x}, {y}) has badness {self.gap[x, y]:.4g} in a ball of radius {self.r[b]:.4g}")

        for c in range(self._size, policy.size):
            rc = float(policy.radius[c])
            p = int(policy.parent[c])
            self._note("parent_chain", t, 0 <= p < c and abs(policy.radius[p] - 2 * rc) <= EPS,
                       f"ball {c}: bad parent {p}")
            same = np.flatnonzero(np.array(self.r) == rc)
            if len(same):
                d = np.minimum(1.0, self.X.cross([policy.cx[c]], cx[same])[0]
                               + self._dy([policy.cy[c]], cy[same])[0])
                self._note("separation", t, bool((d > rc).all()), f"ball {c} within {d.min():.4g} of an equal ball")
            else:
                self._note("separation", t, True)
            if self.gap is not None:
                g = self.gap[policy.cx[c], policy.cy[c]]
                self._note("corollary", t, g <= 12.0 * rc + EPS, f"child {c} center badness {g:.4g} > 12 * {rc:.4g}")
            self.cx.append(int(policy.cx[c]))
            self.cy.append(int(policy.cy[c]))
            self.r.append(rc)
            self.n.append(0.0)
            self.s.append(0.0)

    def finish(self, policy: ContextualZooming) -> None:
        ok, detail = audit_snapshot(policy.snapshot(), policy.space)["covering"]
        self._note("covering", policy.round, ok, detail)

    def report(self) -> dict:
        return {c: dict(st, passed=st["violations"] == 0) for c, st in self.stats.items()}
