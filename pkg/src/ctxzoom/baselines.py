"""Reference policies: EXP3, UCB1 and the uniform (fixed-partition) algorithm."""
from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .metric import ProductSpace, SimilaritySpace, build_r_net, nearest


def _check_payoff(payoff: float) -> None:
    if not 0.0 <= payoff <= 1.0:
        raise ValueError(f"payoff {payoff} outside [0, 1]")


def exp3_gamma(k: int, T: int) -> float:
    if k <= 1:
        return 1.0
    return min(1.0, math.sqrt(k * math.log(k) / ((math.e - 1) * max(T, 1))))


class Exp3:
    """EXP3 over ``k`` arms with weights kept in log space.

    Sampling probabilities are ``(1 - gamma) * w / sum(w) + gamma / k``; the
    played arm's log-weight grows by ``gamma * xhat / k`` with the
    importance-weighted payoff ``xhat = payoff / p``.
    """

    def __init__(self, k: int, T: int, rng: np.random.Generator, gamma: Optional[float] = None):
        if k < 1:
            raise ValueError("EXP3 needs at least one arm")
        self.k = k
        self.gamma = exp3_gamma(k, T) if gamma is None else float(gamma)
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        self.logw = np.zeros(k)
        self.rng = rng
        self.plays = 0
        self._p = None

    def probabilities(self, allowed: Optional[np.ndarray] = None) -> np.ndarray:
        w = np.exp(self.logw - self.logw.max())
        p = (1.0 - self.gamma) * w / w.sum() + self.gamma / self.k
        if allowed is not None:
            p = np.where(allowed, p, 0.0)
            p /= p.sum()
        return p

    def choose(self, allowed: Optional[np.ndarray] = None) -> int:
        if self.k == 1:
            self._p = 1.0
            return 0
        p = self.probabilities(allowed)
        arm = int(np.searchsorted(np.cumsum(p), self.rng.random() * p.sum(), side="right"))
        arm = min(arm, self.k - 1)
        while p[arm] == 0.0:
            arm -= 1
        self._p = float(p[arm])
        return arm

    def update(self, arm: int, payoff: float) -> None:
        _check_payoff(payoff)
        self.plays += 1
        if self.k == 1:
            return
        p = self._p if self._p is not None else float(self.probabilities()[arm])
        self.logw[arm] += self.gamma * (payoff / p) / self.k
        self._p = None

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.logw - self.logw.max())


class UCB1:
    """UCB1: untried arms first (lowest index), then ``mean + sqrt(2 ln t / n)``."""

    def __init__(self, k: int):
        if k < 1:
            raise ValueError("UCB1 needs at least one arm")
        self.k = k
        self.n = np.zeros(k)
        self.total = np.zeros(k)
        self.t = 0

    def choose(self, allowed: Optional[np.ndarray] = None) -> int:
        ok = np.ones(self.k, dtype=bool) if allowed is None else np.asarray(allowed, dtype=bool)
        untried = np.flatnonzero(ok & (self.n == 0))
        if len(untried):
            return int(untried[0])
        ucb = self.total / np.maximum(self.n, 1) + np.sqrt(2.0 * math.log(max(self.t, 1)) / np.maximum(self.n, 1))
        return int(np.argmax(np.where(ok, ucb, -np.inf)))

    def update(self, arm: int, payoff: float) -> None:
        _check_payoff(payoff)
        self.n[arm] += 1
        self.total[arm] += payoff
        self.t += 1


# -- context-blind policies ---------------------------------------------------------


class StaticPolicy:
    """Run a k-armed bandit on the arms, ignoring the context apart from feasibility."""

    def __init__(self, bandit, feasible: np.ndarray, name: str):
        self.bandit = bandit
        self.feasible = np.asarray(feasible, dtype=bool)
        self.all_feasible = bool(self.feasible.all())
        self.name = name
        self.last_cell = 0
        self.structure_size = 1

    def choose(self, x: int) -> int:
        return self.bandit.choose(None if self.all_feasible else self.feasible[x])

    def update(self, x: int, arm: int, payoff: float) -> None:
        self.bandit.update(arm, payoff)


def ucb1_policy(space: ProductSpace, T: int, rng=None) -> StaticPolicy:
    return StaticPolicy(UCB1(len(space.arm_space)), space.feasible, "ucb1")


def exp3_policy(space: ProductSpace, T: int, rng) -> StaticPolicy:
    return StaticPolicy(Exp3(len(space.arm_space), T, rng), space.feasible, "exp3")


# -- uniform algorithm -----------------------------------------------------------------


EXP3_CONSTANT = 2.0 * math.sqrt(math.e - 1.0)


def uniform_granularity(T: int, d_x: float, d_y: float) -> float:
    """``T ** (-1 / (2 + d_X + d_Y))``: balances discretization and per-cell bandit regret."""
    return float(max(T, 2)) ** (-1.0 / (2.0 + d_x + d_y))


def predicted_uniform_regret(r: float, n_cells: int, n_arms: int, T: int) -> float:
    """``r T`` discretization plus ``n_cells`` EXP3 bounds, each over an equal share of ``T``."""
    per_cell = EXP3_CONSTANT * math.sqrt(n_arms * (T / n_cells) * math.log(max(n_arms, 2)))
    return r * T + n_cells * per_cell


def choose_granularity(X: SimilaritySpace, Y: SimilaritySpace, T: int, *, steps: int = 4,
                       max_halvings: int = 20) -> tuple[float, np.ndarray, np.ndarray]:
    """Scan ``r = 2^(-j/steps)`` and keep the nets minimizing :func:`predicted_uniform_regret`.

    The scan stops once both nets contain every point.  Returns ``(r, context_net, arm_net)``.
    """
    best = None
    for j in range(steps * max_halvings + 1):
        r = 2.0 ** (-j / steps)
        cx, cy = build_r_net(X, r), build_r_net(Y, r)
        value = predicted_uniform_regret(r, len(cx), len(cy), T)
        if best is None or value < best[0]:
            best = (value, r, cx, cy)
        if len(cx) == len(X) and len(cy) == len(Y):
            break
    return best[1], best[2], best[3]


class UniformPartition:
    """Fixed r-nets on contexts and arms, one EXP3 per context cell.

    Each arriving context is routed to its nearest context-net point; that
    cell's EXP3 (tuned for an equal share of the horizon) picks among the
    arm-net points feasible for the context.  When no net arm is feasible the
    lowest feasible arm is played and the cell's EXP3 is not updated.

    ``granularity="predicted"`` (default) picks ``r`` by minimizing the
    predicted regret over a geometric scan; ``"power"`` uses
    ``T^(-1/(2 + d_X + d_Y))`` with the declared dimensions.  An explicit ``r``
    overrides both.
    """

    name = "uniform"

    def __init__(self, space: ProductSpace, T: int, rng: np.random.Generator, *,
                 r: Optional[float] = None, granularity: str = "predicted",
                 d_x: Optional[float] = None, d_y: Optional[float] = None):
        X, Y = space.context_space, space.arm_space
        self.X, self.Y = X, Y
        self.feasible = space.feasible
        self.T = T
        self.rng = rng
        if r is None and granularity == "predicted":
            self.r, self.context_net, self.arm_net = choose_granularity(X, Y, T)
        else:
            if r is None:
                if granularity != "power":
                    raise ValueError(f"unknown granularity rule {granularity!r}")
                d_x = (X.dim if X.dim is not None else 1.0) if d_x is None else d_x
                d_y = (Y.dim if Y.dim is not None else 1.0) if d_y is None else d_y
                r = uniform_granularity(T, d_x, d_y)
            self.r = float(r)
            self.context_net = build_r_net(X, self.r)
            self.arm_net = build_r_net(Y, self.r)
        self._route: dict[int, int] = {}
        self.cells: dict[int, Exp3] = {}
        self.last_cell = -1
        self._played = None

    @property
    def structure_size(self) -> int:
        return len(self.cells)

    def route(self, x: int) -> int:
        c = self._route.get(x)
        if c is None:
            pt, _ = nearest(self.X, [x], self.context_net)
            c = int(pt[0])
            self._route[x] = c
        return c

    def choose(self, x: int) -> int:
        c = self.route(x)
        self.last_cell = c
        cell = self.cells.get(c)
        if cell is None:
            horizon = max(1, self.T // len(self.context_net))
            cell = self.cells[c] = Exp3(len(self.arm_net), horizon, self.rng)
        allowed = self.feasible[x, self.arm_net]
        if not allowed.any():
            self._played = None
            return int(np.flatnonzero(self.feasible[x])[0])
        j = cell.choose(None if allowed.all() else allowed)
        self._played = (c, j)
        return int(self.arm_net[j])

    def update(self, x: int, arm: int, payoff: float) -> None:
        _check_payoff(payoff)
        if self._played is not None:
            c, j = self._played
            self.cells[c].update(j, payoff)
        self._played = None
