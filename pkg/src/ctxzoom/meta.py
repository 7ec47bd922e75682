"""Adaptive context partition with a fresh adversarial bandit per context ball.

Balls live in the context space only.  A ball of radius ``r`` serves at most
``T0(r)`` rounds (it is then *full*); when every active ball containing the
arriving context is full, the smallest of them gets a child of half its radius
centred at the context.  Each round is served by the latest-activated ball that
contains the context and is not full.
"""
from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .baselines import Exp3
from .metric import EPS, ProductSpace, SimilaritySpace, build_r_net, covering_number, doubling_constant_estimate


class ProtocolError(RuntimeError):
    pass


def t0(r: float, c_y: float, d_y: float) -> int:
    """Hit budget ``ceil(c_Y * r^-(2 + d_Y) * max(1, ln(1/r)))``, at least 1."""
    if not 0 < r <= 1:
        raise ValueError("radius must lie in (0, 1]")
    if c_y <= 0 or d_y < 0:
        raise ValueError("need c_Y > 0 and d_Y >= 0")
    value = c_y * r ** -(2.0 + d_y) * max(1.0, math.log(1.0 / r))
    # guard against 8.000000000000002 style rounding before the ceiling
    return max(1, math.ceil(value - 1e-9))


def rk_covering_number(space: SimilaritySpace, arrivals, r: float, k: float, *, exact: bool = False) -> int:
    """``r``-covering number of the arrivals whose ``r``-ball holds at least ``k`` arrivals.

    Multiplicities count: ``arrivals`` is a sequence of point indices of ``space``.
    """
    arrivals = np.asarray(arrivals, dtype=np.intp)
    if len(arrivals) == 0:
        return 0
    pts, mult = np.unique(arrivals, return_counts=True)
    heavy = []
    for s in range(0, len(pts), 512):
        D = space.cross(pts[s:s + 512], pts)
        load = ((D <= r + EPS) * mult[None, :]).sum(axis=1)
        heavy.append(pts[s:s + 512][load >= k])
    heavy = np.concatenate(heavy)
    if len(heavy) == 0:
        return 0
    return covering_number(space, r, heavy, exact=exact)


class ContextualBandit:
    """Meta-algorithm over context balls with per-ball EXP3 subroutines.

    ``arm_radius`` (optional) restricts every subroutine to a fixed r-net of
    the arm space; by default subroutines see all arms.  ``c_y`` defaults to
    the number of subroutine arms and ``d_y`` to 0, the convergence-time
    parameters of EXP3 on a finite arm set.
    """

    name = "meta"

    def __init__(self, space: ProductSpace, T: int, rng: np.random.Generator, *,
                 c_y: Optional[float] = None, d_y: float = 0.0, arm_radius: Optional[float] = None):
        self.X: SimilaritySpace = space.context_space
        self.Y: SimilaritySpace = space.arm_space
        self.feasible = space.feasible
        self.T = int(T)
        self.rng = rng
        if arm_radius is None:
            self.arms = np.arange(len(self.Y))
        else:
            self.arms = build_r_net(self.Y, arm_radius)
        self.arm_radius = arm_radius
        self.c_y = float(len(self.arms)) if c_y is None else float(c_y)
        self.d_y = float(d_y)
        self._budget: dict[int, int] = {}
        self.centers: list[int] = []
        self.levels: list[int] = []
        self.hits: list[int] = []
        self.parents: list[int] = []
        self.activated: list[int] = []
        self.bandits: list[Exp3] = []
        self.children: list[list[int]] = []
        self.round = 0
        self._add(0, 0, -1)
        self.last_cell = -1
        self.last_activated = -1
        self._pending = None

    # -- structure ---------------------------------------------------------------

    def budget(self, level: int) -> int:
        b = self._budget.get(level)
        if b is None:
            b = self._budget[level] = t0(2.0 ** -level, self.c_y, self.d_y)
        return b

    def radius(self, i: int) -> float:
        return 2.0 ** -self.levels[i]

    def full(self, i: int) -> bool:
        return self.hits[i] >= self.budget(self.levels[i])

    def _add(self, center: int, level: int, parent: int) -> int:
        i = len(self.centers)
        self.centers.append(int(center))
        self.levels.append(int(level))
        self.hits.append(0)
        self.parents.append(int(parent))
        self.activated.append(self.round)
        self.bandits.append(Exp3(len(self.arms), self.budget(level), self.rng))
        self.children.append([])
        if parent >= 0:
            self.children[parent].append(i)
        return i

    @property
    def structure_size(self) -> int:
        return len(self.centers)

    def containing(self, x: int) -> np.ndarray:
        """Ids of active balls containing context ``x`` (activation order)."""
        d = self.X.cross([x], self.centers)[0]
        r = 2.0 ** -np.asarray(self.levels, dtype=float)
        return np.flatnonzero(d <= r + EPS)

    def route(self, x: int) -> int:
        """Run the activation rule for ``x`` and return the ball that is hit."""
        inside = self.containing(x)
        open_ = [i for i in inside if not self.full(i)]
        self.last_activated = -1
        if not open_:
            # smallest radius among the (all full) containing balls, earliest on ties
            b = max(inside, key=lambda i: (self.levels[i], -i))
            self.last_activated = self._add(x, self.levels[b] + 1, b)
            return self.last_activated
        return int(open_[-1])

    # -- policy interface ----------------------------------------------------------

    def choose(self, x: int) -> int:
        b = self.route(x)
        allowed = self.feasible[x, self.arms]
        if not allowed.any():
            raise ProtocolError(f"context {x} has no feasible subroutine arm")
        j = self.bandits[b].choose(None if allowed.all() else allowed)
        self.last_cell = b
        self._pending = (x, int(self.arms[j]), b, j)
        return int(self.arms[j])

    def update(self, x: int, arm: int, payoff: float) -> None:
        if self._pending is None or self._pending[:2] != (x, arm):
            raise ProtocolError("feedback does not match the ball hit this round")
        self.feedback(self._pending[2], arm, payoff)

    def feedback(self, ball: int, arm: int, payoff: float) -> None:
        if self._pending is None or ball != self._pending[2] or arm != self._pending[1]:
            raise ProtocolError(f"feedback for ball {ball}, which was not hit this round")
        self.bandits[ball].update(self._pending[3], payoff)
        self.hits[ball] += 1
        self._pending = None
        self.round += 1

    # -- analysis --------------------------------------------------------------------

    def snapshot(self) -> dict:
        return {
            "algorithm": "meta",
            "T": self.T,
            "round": self.round,
            "c_y": self.c_y,
            "d_y": self.d_y,
            "context_space": self.X.to_dict(),
            "balls": [
                {"center": self.centers[i], "radius": self.radius(i), "hits": self.hits[i],
                 "budget": self.budget(self.levels[i]), "full": self.full(i),
                 "parent": self.parents[i] if self.parents[i] >= 0 else None,
                 "activation_round": self.activated[i]}
                for i in range(len(self.centers))
            ],
        }


def audit_meta_snapshot(snap: dict, arrivals=None, space: Optional[SimilaritySpace] = None) -> dict:
    """End-of-run checks on a meta snapshot: hit budgets, separation, children and full-ball counts.

    Returns ``{check: (ok, detail)}``.  The children and full-ball checks need
    the arrival sequence.
    """
    from .metric import space_from_dict

    X = space_from_dict(snap["context_space"]) if space is None else space
    balls = snap["balls"]
    centers = np.array([b["center"] for b in balls], dtype=np.intp)
    radii = np.array([b["radius"] for b in balls])
    out = {}
    over = [i for i, b in enumerate(balls) if b["hits"] > b["budget"]]
    out["hit_budget"] = (not over, f"balls over budget: {over[:5]}" if over else "")
    bad = ""
    for r in np.unique(radii):
        ids = np.flatnonzero(radii == r)
        if len(ids) > 1:
            D = X.cross(centers[ids], centers[ids])
            np.fill_diagonal(D, np.inf)
            if (D <= r).any():
                i, j = np.argwhere(D <= r)[0]
                bad = f"balls {ids[i]} and {ids[j]} of radius {r} are {D[i, j]:.4g} apart"
                break
    out["separation"] = (not bad, bad)
    if arrivals is not None:
        arrivals = np.asarray(arrivals, dtype=np.intp)
        support = np.unique(arrivals)
        c_dbl = doubling_constant_estimate(X, support)
        kids = np.bincount([b["parent"] for b in balls if b["parent"] is not None], minlength=len(balls))
        worst = int(kids.max()) if len(kids) else 0
        out["children"] = (worst <= c_dbl ** 2, f"max children {worst}, doubling estimate {c_dbl}")
        report = full_ball_report(snap, arrivals, X, c_dbl)
        bad = [f"r={row['radius']}: {row['full']} full > {row['bound']}" for row in report if row["full"] > row["bound"]]
        out["full_balls"] = (not bad, "; ".join(bad))
    return out


def full_ball_report(snap: dict, arrivals, X: SimilaritySpace, c_dbl: Optional[int] = None) -> list[dict]:
    """Per radius: number of full balls against the (r, k)-covering numbers of the arrivals.

    ``bound`` uses slack ``k = T0(r)``; ``bound_dbl`` uses the smaller slack
    ``T0(r) / C_dbl`` and is reported for comparison only.
    """
    arrivals = np.asarray(arrivals, dtype=np.intp)
    if c_dbl is None:
        c_dbl = doubling_constant_estimate(X, np.unique(arrivals))
    rows = []
    for r in sorted({b["radius"] for b in snap["balls"]}, reverse=True):
        level = [b for b in snap["balls"] if b["radius"] == r]
        k = level[0]["budget"]
        rows.append({
            "radius": r,
            "full": sum(b["full"] for b in level),
            "budget": k,
            "bound": rk_covering_number(X, arrivals, r, k),
            "bound_dbl": rk_covering_number(X, arrivals, r, k / c_dbl),
        })
    return rows


class MetaAuditor:
    """Per-round replay checks for :class:`ContextualBandit`.

    ``one_hit``, ``hit_budget``, ``separation`` and ``activation`` replay the
    routing rule each round; ``children`` bounds every ball's child count by
    the squared doubling constant of the arrival support; :meth:`finish`
    compares the number of full balls per radius with the (r, T0(r))-covering
    number of the arrivals.
    """

    checks = ("one_hit", "hit_budget", "separation", "activation", "children", "full_balls")

    def __init__(self, env, T: int):
        self.env = env
        self.arrivals = env.arrivals_for(T)
        self.c_dbl = doubling_constant_estimate(env.context_space, np.unique(self.arrivals))
        self.stats = {c: {"violations": 0, "events": 0, "first_round": None, "detail": ""} for c in self.checks}

    def _note(self, check: str, t: int, ok: bool, detail: str = "") -> None:
        s = self.stats[check]
        s["events"] += 1
        if not ok:
            s["violations"] += 1
            if s["first_round"] is None:
                s["first_round"] = t
                s["detail"] = detail

    def before(self, t: int, x: int, policy: ContextualBandit) -> None:
        self._size = policy.structure_size
        self._open = [i for i in policy.containing(x) if not policy.full(i)]
        self._inside = list(policy.containing(x))

    def after(self, t: int, x: int, y: int, payoff: float, policy: ContextualBandit) -> None:
        b = policy.last_cell
        new = policy.structure_size - self._size
        if self._open:
            self._note("activation", t, new == 0, "activated a ball although a containing ball was open")
            expect = self._open[-1]
        else:
            ok = new == 1 and policy.centers[-1] == x
            if ok:
                par = max(self._inside, key=lambda i: (policy.levels[i], -i))
                ok = policy.parents[-1] == par and policy.levels[-1] == policy.levels[par] + 1
            self._note("activation", t, ok, "missing or malformed child activation")
            expect = policy.structure_size - 1
        self._note("one_hit", t, b == expect, f"hit ball {b}, expected {expect}")
        lv = policy.levels[b]
        self._note("hit_budget", t, policy.hits[b] <= policy.budget(lv), f"ball {b} over budget")
        if new:
            c = policy.structure_size - 1
            same = [i for i in range(c) if policy.levels[i] == policy.levels[c]]
            ok = True
            if same:
                d = policy.X.cross([policy.centers[c]], [policy.centers[i] for i in same])[0]
                ok = bool((d > policy.radius(c)).all())
            self._note("separation", t, ok, f"ball {c} too close to an equal-radius ball")
            p = policy.parents[c]
            kids = len(policy.children[p])
            self._note("children", t, kids <= self.c_dbl ** 2, f"ball {p} has {kids} children > {self.c_dbl}^2")

    def finish(self, policy: ContextualBandit) -> None:
        rows = full_ball_report(policy.snapshot(), self.arrivals[:policy.round], policy.X, self.c_dbl)
        for row in rows:
            self._note("full_balls", policy.round, row["full"] <= row["bound"],
                       f"radius {row['radius']}: {row['full']} full balls > {row['bound']}")

    def report(self) -> dict:
        return {c: dict(s, passed=s["violations"] == 0) for c, s in self.stats.items()}
