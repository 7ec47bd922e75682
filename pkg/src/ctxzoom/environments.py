"""Problem instances: expected payoffs over context-arm pairs plus an arrival schedule.

An instance stores ``mu`` as a dense ``(n_contexts, n_arms)`` table (or a
``(T, n_contexts, n_arms)`` table for oblivious adversarial payoffs), a
feasibility mask, and the sequence of context arrivals.  Payoffs are sampled
Bernoulli(mu) unless configured otherwise.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .metric import (
    EPS,
    ProductSpace,
    SimilaritySpace,
    discrete_space,
    feasible_from_json,
    line_grid,
    space_from_dict,
    zero_space,
)


class InstanceError(ValueError):
    """Bad generator parameters or an instance that violates its contract."""


class FeasibilityError(InstanceError):
    pass


class UnsupportedOperation(InstanceError):
    pass


@dataclass
class EnvironmentInstance:
    context_space: SimilaritySpace
    arm_space: SimilaritySpace
    mu: Optional[np.ndarray]
    feasible: np.ndarray
    arrivals: np.ndarray
    mu_rounds: Optional[np.ndarray] = None
    noise: str = "bernoulli"
    noise_scale: float = 0.1
    cyclic: bool = False
    name: str = "custom"
    params: dict = field(default_factory=dict)
    # generator name -> label used when reporting regret ("contextual" or "dynamic")
    regret_kind: str = "contextual"

    def __post_init__(self):
        nx, ny = len(self.context_space), len(self.arm_space)
        self.feasible = np.asarray(self.feasible, dtype=bool)
        self.arrivals = np.asarray(self.arrivals, dtype=np.intp)
        if self.feasible.shape != (nx, ny):
            raise InstanceError("feasibility mask shape does not match the spaces")
        if self.mu is None and self.mu_rounds is None:
            raise InstanceError("an instance needs mu or mu_rounds")
        if self.mu is not None:
            self.mu = np.asarray(self.mu, dtype=float)
            if self.mu.shape != (nx, ny):
                raise InstanceError("mu table shape does not match the spaces")
            if self.mu.min() < 0 or self.mu.max() > 1:
                raise InstanceError("expected payoffs must lie in [0, 1]")
        if self.mu_rounds is not None:
            self.mu_rounds = np.asarray(self.mu_rounds, dtype=float)
            if self.mu_rounds.shape[1:] != (nx, ny):
                raise InstanceError("mu_rounds shape does not match the spaces")
        if self.noise not in ("bernoulli", "gaussian"):
            raise InstanceError(f"unknown noise rule {self.noise!r}")
        if len(self.arrivals) == 0:
            raise InstanceError("empty arrival sequence")
        if self.arrivals.min() < 0 or self.arrivals.max() >= nx:
            raise InstanceError("arrival outside the context space")
        seen = np.unique(self.arrivals)
        if not self.feasible[seen].any(axis=1).all():
            raise InstanceError("an arriving context has no feasible arm")
        self._space = None
        self._best = None

    # -- basic accessors -----------------------------------------------------

    @property
    def n_contexts(self) -> int:
        return len(self.context_space)

    @property
    def n_arms(self) -> int:
        return len(self.arm_space)

    @property
    def horizon(self) -> int:
        return len(self.arrivals)

    @property
    def adversarial(self) -> bool:
        return self.mu_rounds is not None

    @property
    def has_exact_mu(self) -> bool:
        return self.mu is not None

    def similarity_space(self) -> ProductSpace:
        if self._space is None:
            self._space = ProductSpace(self.context_space, self.arm_space, self.feasible)
        return self._space

    def arrival(self, t: int) -> int:
        """Context arriving in 0-based round ``t``."""
        if t < len(self.arrivals):
            return int(self.arrivals[t])
        if not self.cyclic:
            raise InstanceError(f"round {t} beyond the arrival sequence of length {len(self.arrivals)}")
        return int(self.arrivals[t % len(self.arrivals)])

    def arrivals_for(self, T: int) -> np.ndarray:
        if T <= len(self.arrivals):
            return self.arrivals[:T]
        if not self.cyclic:
            raise InstanceError(f"horizon {T} exceeds the arrival sequence ({len(self.arrivals)})")
        reps = -(-T // len(self.arrivals))
        return np.tile(self.arrivals, reps)[:T]

    def mean(self, t: int, x: int, y: int) -> float:
        if self.mu_rounds is not None:
            return float(self.mu_rounds[t % len(self.mu_rounds), x, y])
        return float(self.mu[x, y])

    def mean_table(self, t: int) -> np.ndarray:
        if self.mu_rounds is not None:
            return self.mu_rounds[t % len(self.mu_rounds)]
        return self.mu

    # -- benchmark -----------------------------------------------------------

    def _benchmark(self):
        """Per-context best arm: argmax of mu (or of summed mu_t), lowest index on ties."""
        if self._best is None:
            table = self.mu if self.mu_rounds is None else self.mu_rounds.sum(axis=0)
            masked = np.where(self.feasible, table, -np.inf)
            arm = masked.argmax(axis=1)
            self._best = arm
        return self._best

    def best_arms(self) -> np.ndarray:
        return self._benchmark()

    def mu_star(self) -> np.ndarray:
        """Benchmark payoff per context (time-invariant instances only)."""
        if self.mu is None:
            raise UnsupportedOperation("mu_star needs a time-invariant mu table")
        arm = self._benchmark()
        out = self.mu[np.arange(self.n_contexts), arm]
        out[~self.feasible.any(axis=1)] = np.nan
        return out

    def badness(self) -> np.ndarray:
        """``mu*(x) - mu(x, y)`` for every pair (nan where infeasible)."""
        gap = self.mu_star()[:, None] - self.mu
        return np.where(self.feasible, gap, np.nan)

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "params": self.params,
            "spaces": {"context": self.context_space.to_dict(), "arms": self.arm_space.to_dict()},
            "feasible": "all" if self.feasible.all() else np.argwhere(self.feasible).tolist(),
            "arrivals": self.arrivals.tolist(),
            "cyclic": self.cyclic,
            "noise": {"rule": self.noise, "scale": self.noise_scale},
            "regret_kind": self.regret_kind,
        }
        if self.mu is not None:
            d["mu"] = self.mu.tolist()
        if self.mu_rounds is not None:
            d["mu_rounds"] = self.mu_rounds.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EnvironmentInstance":
        if "mu" not in d and "mu_rounds" not in d:
            if "generator" not in d:
                raise InstanceError("instance document needs a mu table or a generator entry")
            return generate(d["generator"], d.get("params", {}), seed=d.get("seed", 0))
        X = space_from_dict(d["spaces"]["context"])
        Y = space_from_dict(d["spaces"]["arms"])
        noise = d.get("noise", {})
        return cls(
            context_space=X,
            arm_space=Y,
            mu=d.get("mu"),
            mu_rounds=d.get("mu_rounds"),
            feasible=feasible_from_json(d.get("feasible", "all"), len(X), len(Y)),
            arrivals=d["arrivals"],
            noise=noise.get("rule", "bernoulli"),
            noise_scale=noise.get("scale", 0.1),
            cyclic=d.get("cyclic", False),
            name=d.get("name", "custom"),
            params=d.get("params", {}),
            regret_kind=d.get("regret_kind", "contextual"),
        )


def save_instance(env: EnvironmentInstance, path) -> None:
    Path(path).write_text(json.dumps(env.to_dict()))


def load_instance(path) -> EnvironmentInstance:
    return EnvironmentInstance.from_dict(json.loads(Path(path).read_text()))


# -- operations ----------------------------------------------------------------


def sample_payoff(env: EnvironmentInstance, round: int, context: int, arm: int, rng) -> float:
    """One realized payoff for ``(context, arm)``; deterministic given ``rng`` state."""
    if not env.feasible[context, arm]:
        raise FeasibilityError(f"pair ({context}, {arm}) is not feasible")
    m = env.mean(round, context, arm)
    if env.noise == "bernoulli":
        return 1.0 if rng.random() < m else 0.0
    return float(min(1.0, max(0.0, m + env.noise_scale * rng.standard_normal())))


def best_response(env: EnvironmentInstance, context: int, round: int = 0) -> tuple[int, float]:
    """Benchmark arm for ``context`` and its expected payoff in ``round``.

    Time-invariant instances: exhaustive argmax of mu over feasible arms.
    Adversarial instances: the fixed per-context arm maximizing the payoff
    summed over all rounds.  Ties go to the lowest arm index.
    """
    if not env.feasible[context].any():
        raise FeasibilityError(f"context {context} has no feasible arm")
    arm = int(env.best_arms()[context])
    return arm, env.mean(round, context, arm)


def check_lipschitz(env: EnvironmentInstance, *, exhaustive_limit: int = 10_000,
                    samples: int = 100_000, rng=None, tol: float = 1e-9) -> list[str]:
    """Check ``|mu(p) - mu(q)| <= D(p, q)`` over feasible pairs.

    Exhaustive when there are at most ``exhaustive_limit`` feasible pairs,
    otherwise on random pairs plus pairs that are close in index.  Every
    payoff table of an adversarial instance is checked the same way.
    """
    tables = [env.mu] if env.mu is not None else list(env.mu_rounds)
    problems = []
    space = env.similarity_space()
    for t, table in enumerate(tables):
        if space.n <= exhaustive_limit:
            bad = _lipschitz_exhaustive(env, table, tol)
        else:
            bad = _lipschitz_sampled(env, table, samples, rng, tol)
        if bad:
            problems.append(f"table {t}: {bad}")
            break
    return problems


def _lipschitz_exhaustive(env, table, tol) -> str:
    X, Y, F = env.context_space, env.arm_space, env.feasible
    if F.all():
        # with mu defined on all of X x Y, rows and columns Lipschitz imply jointly Lipschitz
        DY = Y.dense() if len(Y) <= 2000 else None
        if DY is not None:
            for x in range(len(X)):
                gap = np.abs(table[x][:, None] - table[x][None, :]) - DY
                if gap.max() > tol:
                    return f"context {x}: arm-direction gap {gap.max():.3g}"
            cols = np.arange(len(X))
            for s in range(0, len(X), 256):
                DX = X.cross(cols[s:s + 256], cols)
                for y in range(len(Y)):
                    gap = np.abs(table[s:s + 256, y][:, None] - table[:, y][None, :]) - DX
                    if gap.max() > tol:
                        return f"arm {y}: context-direction gap {gap.max():.3g}"
            return ""
    space = env.similarity_space()
    vals = table[space.px, space.py]
    idx = np.arange(space.n)
    for s in range(0, space.n, 256):
        D = space.cross(idx[s:s + 256], idx)
        gap = np.abs(vals[s:s + 256][:, None] - vals[None, :]) - D
        if gap.max() > tol:
            return f"pair gap {gap.max():.3g}"
    return ""


def _lipschitz_sampled(env, table, samples, rng, tol) -> str:
    from .metric import _pairwise_gather

    rng = np.random.default_rng(12345) if rng is None else rng
    space = env.similarity_space()
    vals = table[space.px, space.py]
    n = space.n
    a = rng.integers(0, n, samples)
    b = rng.integers(0, n, samples)
    near = np.clip(a + rng.integers(-64, 65, samples), 0, n - 1)
    step = max(1, len(env.arm_space))
    near_ctx = np.clip(a + step * rng.integers(-64, 65, samples), 0, n - 1)
    for other in (b, near, near_ctx):
        d = _pairwise_gather(space, a, other)
        gap = np.abs(vals[a] - vals[other]) - d
        if gap.max() > tol:
            return f"sampled pair gap {gap.max():.3g}"
    return ""


def _validated(env: EnvironmentInstance) -> EnvironmentInstance:
    bad = check_lipschitz(env)
    if bad:
        raise InstanceError("generated instance violates the Lipschitz condition: " + "; ".join(bad))
    return env


# -- generators ----------------------------------------------------------------


def _rng(rng):
    if rng is None or isinstance(rng, (int, np.integer)):
        return np.random.default_rng(rng)
    return rng


def make_needle_instance(n_x: int, n_y: int, r: float, needle=None, rng=None, *,
                         T: Optional[int] = None, spacing: Optional[float] = None,
                         context_fill: int = 0, arm_fill: int = 0) -> EnvironmentInstance:
    """Needle-in-a-haystack family: one good arm per net context.

    Net contexts and net arms sit on lines ``spacing`` apart (default ``2r``),
    so each set is an r-packing.  ``context_fill``/``arm_fill`` add evenly spaced
    off-net points between neighbouring net points.  On the net,
    ``mu(x, needle(x)) = 1/2 + r/2`` and ``mu(x, y) = 1/2 + r/4`` otherwise;
    elsewhere ``mu`` is the smoothing ``max over net pairs of
    max(1/2, mu0 - D_X - D_Y)``.  Contexts arrive round-robin over the net.
    """
    if n_x < 1 or n_y < 2:
        raise InstanceError("needle instance needs n_x >= 1 and n_y >= 2")
    if not 0 < r <= 0.5:
        raise InstanceError("needle radius must lie in (0, 1/2]")
    spacing = 2 * r if spacing is None else float(spacing)
    if spacing <= r:
        raise InstanceError("net spacing must exceed r for the net points to be r-separated")
    rng = _rng(rng)
    if needle is None:
        needle = rng.integers(0, n_y, n_x)
    needle = np.asarray(needle, dtype=np.intp)
    if needle.shape != (n_x,) or needle.min() < 0 or needle.max() >= n_y:
        raise InstanceError("needle assignment must map each net context to a net arm")

    def axis(n, fill):
        pts = []
        for i in range(n):
            pts.append(i * spacing)
            if i + 1 < n:
                pts.extend(i * spacing + spacing * (j + 1) / (fill + 1) for j in range(fill))
        pts = np.array(pts)
        net = np.arange(n) * (fill + 1)
        return pts, net

    cx, net_x = axis(n_x, context_fill)
    cy, net_y = axis(n_y, arm_fill)
    X = SimilaritySpace(cx, "lp", kind="context", dim=1.0)
    Y = SimilaritySpace(cy, "lp", kind="arms", dim=1.0)
    mu0 = np.full((n_x, n_y), 0.5 + r / 4)
    mu0[np.arange(n_x), needle] = 0.5 + r / 2
    DX = X.cross(np.arange(len(X)), net_x)
    DY = Y.cross(np.arange(len(Y)), net_y)
    # mu[x, y] = max_{i,j} max(1/2, mu0[i, j] - DX[x, i] - DY[y, j])
    mu = np.full((len(X), len(Y)), 0.5)
    for i in range(n_x):
        for j in range(n_y):
            mu = np.maximum(mu, mu0[i, j] - DX[:, i][:, None] - DY[:, j][None, :])
    if T is None:
        T = int(math.ceil(n_x * n_y / r ** 2))
    arrivals = net_x[np.arange(T) % n_x]
    env = EnvironmentInstance(
        X, Y, mu, np.ones(mu.shape, dtype=bool), arrivals, cyclic=True, name="needle",
        params={"n_x": n_x, "n_y": n_y, "r": r, "needle": needle.tolist(), "spacing": spacing,
                "context_fill": context_fill, "arm_fill": arm_fill, "T": T,
                "net_contexts": net_x.tolist(), "net_arms": net_y.tolist()},
    )
    return _validated(env)


def _arrival_schedule(kind: str, n_x: int, T: int, rng) -> np.ndarray:
    if kind == "round_robin":
        return np.arange(T) % n_x
    if kind == "uniform":
        return rng.integers(0, n_x, T)
    raise InstanceError(f"unknown arrival schedule {kind!r}")


def make_peak_instance(m_x: int, m_y: int, *, T: int, rng=None, arm_scale: float = 1.0,
                       peak: float = 0.5, tilt: float = 0.0, height: float = 0.9,
                       floor: float = 0.1, plateau: float = 0.0,
                       arrivals: str = "uniform") -> EnvironmentInstance:
    """Single-peak payoffs on a line of contexts times a line of arms.

    ``mu(x, y) = max(floor, height - arm_scale * max(0, |y - y0(x)| - plateau/2))``
    (a flat top of width ``plateau`` in arm coordinates) with peak location ``y0(x) = peak + tilt * (x - 1/2)``.  The arm metric is
    ``min(1, arm_scale * |y - y'|)`` so ``mu`` is Lipschitz whenever
    ``arm_scale * |tilt| <= 1``.
    """
    if arm_scale * abs(tilt) > 1 + 1e-12:
        raise InstanceError("arm_scale * |tilt| must be at most 1")
    if not 0 <= floor <= height <= 1:
        raise InstanceError("need 0 <= floor <= height <= 1")
    rng = _rng(rng)
    X = line_grid(m_x, kind="context")
    Y = line_grid(m_y, scale=arm_scale, kind="arms")
    xs, ys = X.coords[:, 0], Y.coords[:, 0]
    y0 = peak + tilt * (xs - 0.5)
    off = np.maximum(0.0, np.abs(ys[None, :] - y0[:, None]) - plateau / 2)
    mu = np.maximum(floor, height - arm_scale * off)
    env = EnvironmentInstance(
        X, Y, mu, np.ones(mu.shape, dtype=bool), _arrival_schedule(arrivals, m_x, T, rng),
        name="peak",
        params={"m_x": m_x, "m_y": m_y, "T": T, "arm_scale": arm_scale, "peak": peak,
                "tilt": tilt, "height": height, "floor": floor, "plateau": plateau,
                "arrivals": arrivals},
    )
    return _validated(env)


def make_random_lipschitz(m_x: int, m_y: int, *, T: int, rng=None, bumps: int = 3,
                          floor: float = 0.2, arrivals: str = "uniform",
                          arm_scale: float = 1.0) -> EnvironmentInstance:
    """Random instance: upper envelope of a few 1-Lipschitz cones on a grid."""
    rng = _rng(rng)
    X = line_grid(m_x, kind="context")
    Y = line_grid(m_y, scale=arm_scale, kind="arms")
    cx = rng.integers(0, m_x, bumps)
    cy = rng.integers(0, m_y, bumps)
    h = rng.uniform(0.5, 0.95, bumps)
    DX = X.cross(np.arange(m_x), cx)
    DY = Y.cross(np.arange(m_y), cy)
    mu = np.full((m_x, m_y), floor)
    for i in range(bumps):
        mu = np.maximum(mu, h[i] - DX[:, i][:, None] - DY[:, i][None, :])
    env = EnvironmentInstance(
        X, Y, np.clip(mu, 0, 1), np.ones((m_x, m_y), dtype=bool),
        _arrival_schedule(arrivals, m_x, T, rng), name="random_lipschitz",
        params={"m_x": m_x, "m_y": m_y, "T": T, "bumps": bumps, "floor": floor,
                "arrivals": arrivals, "arm_scale": arm_scale},
    )
    return _validated(env)


def make_drifting_env(k: int, sigma: float, shape: str, T: int, rng=None, *,
                      step_scale: float = 0.5) -> EnvironmentInstance:
    """Drifting k-armed bandit as a contextual instance with ``x_t = t``.

    ``linear``: ``D_X(t, t') = min(1, sigma*|t - t'|)``; each arm's mean takes
    uniform steps in ``[-sigma, sigma]`` reflected into ``[0, 1]``.
    ``sqrt``: ``D_X(t, t') = min(1, sigma*sqrt|t - t'|)``; Gaussian steps with
    standard deviation ``step_scale * sigma`` are projected onto the interval
    allowed by all earlier values, which keeps every pair within the metric.
    Arms carry no similarity information (distance 1).
    """
    if sigma < 0:
        raise InstanceError("sigma must be nonnegative")
    if T < 1 or k < 1:
        raise InstanceError("need T >= 1 and k >= 1")
    if shape not in ("linear", "sqrt"):
        raise InstanceError("shape must be 'linear' or 'sqrt'")
    rng = _rng(rng)
    power = 1.0 if shape == "linear" else 0.5
    X = SimilaritySpace(np.arange(T, dtype=float), "lp", scale=sigma, power=power,
                        kind="context", dim=(1.0 / power) if sigma > 0 else 0.0)
    Y = discrete_space(k)
    mu = np.empty((T, k))
    mu[0] = rng.uniform(0.0, 1.0, k)
    if sigma > 0 and shape == "linear":
        steps = rng.uniform(-sigma, sigma, (T, k))
        for t in range(1, T):
            v = mu[t - 1] + steps[t]
            v = np.where(v < 0, -v, v)
            mu[t] = np.where(v > 1, 2 - v, v)
    elif sigma > 0:
        window = int(math.ceil(1.0 / sigma ** 2))
        # rev[window - j] = sigma * sqrt(j): bound for a lag of j rounds
        rev = sigma * np.sqrt(np.arange(window, 0, -1, dtype=float))
        steps = rng.normal(0.0, step_scale * sigma, (T, k))
        walk = np.empty((k, T))
        walk[:, 0] = mu[0]
        buf = np.empty((k, window))
        for t in range(1, T):
            lo = max(0, t - window)
            past = walk[:, lo:t]
            b = rev[window - (t - lo):]
            tmp = buf[:, : t - lo]
            np.subtract(past, b, out=tmp)
            low = tmp.max(axis=1)
            np.add(past, b, out=tmp)
            high = tmp.min(axis=1)
            v = walk[:, t - 1] + steps[t]
            v = np.where(v < 0, -v, v)
            v = np.where(v > 1, 2 - v, v)
            walk[:, t] = np.clip(v, np.maximum(low, 0.0), np.minimum(high, 1.0))
        mu = np.ascontiguousarray(walk.T)
    else:
        mu[:] = mu[0]
    env = EnvironmentInstance(
        X, Y, mu, np.ones((T, k), dtype=bool), np.arange(T), name="drifting",
        params={"k": k, "sigma": sigma, "shape": shape, "T": T, "step_scale": step_scale},
        regret_kind="dynamic",
    )
    return _validated(env)


def make_sleeping_env(num_arms: int, awake_schedule, mu, T: Optional[int] = None, *,
                      arm_space: Optional[SimilaritySpace] = None) -> EnvironmentInstance:
    """Sleeping bandit: each round's context is its set of awake arms.

    Contexts are the distinct awake sets in order of first appearance, all at
    distance 0 from each other; only awake arms are feasible.
    """
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (num_arms,):
        raise InstanceError("mu must give one expected payoff per arm")
    rows = []
    for s in awake_schedule:
        s = np.asarray(s)
        if s.dtype == bool:
            if s.shape != (num_arms,):
                raise InstanceError("awake mask has the wrong length")
            awake = tuple(np.flatnonzero(s).tolist())
        else:
            awake = tuple(sorted(set(int(a) for a in s)))
        if not awake:
            raise InstanceError("every round needs at least one awake arm")
        if awake[0] < 0 or awake[-1] >= num_arms:
            raise InstanceError("awake arm out of range")
        rows.append(awake)
    if T is not None:
        if len(rows) < T:
            raise InstanceError("awake schedule shorter than T")
        rows = rows[:T]
    contexts: dict[tuple, int] = {}
    arrivals = [contexts.setdefault(a, len(contexts)) for a in rows]
    feasible = np.zeros((len(contexts), num_arms), dtype=bool)
    for awake, c in contexts.items():
        feasible[c, list(awake)] = True
    Y = discrete_space(num_arms) if arm_space is None else arm_space
    X = zero_space(len(contexts))
    table = np.tile(mu, (len(contexts), 1))
    env = EnvironmentInstance(
        X, Y, table, feasible, arrivals, name="sleeping",
        params={"num_arms": num_arms, "awake_sets": [list(a) for a in contexts]},
    )
    return _validated(env)


def make_adversarial_env(context_space: SimilaritySpace, arm_space: SimilaritySpace,
                         mu_rounds, arrivals, feasible=None) -> EnvironmentInstance:
    """Oblivious adversarial instance from precomputed per-round payoff tables."""
    mu_rounds = np.asarray(mu_rounds, dtype=float)
    if feasible is None:
        feasible = np.ones(mu_rounds.shape[1:], dtype=bool)
    env = EnvironmentInstance(context_space, arm_space, None, feasible, arrivals,
                              mu_rounds=mu_rounds, name="adversarial")
    return _validated(env)


GENERATORS = {
    "needle": make_needle_instance,
    "peak": make_peak_instance,
    "random_lipschitz": make_random_lipschitz,
    "drifting": make_drifting_env,
    "sleeping": make_sleeping_env,
}


def generate(name: str, params: dict, seed: int = 0) -> EnvironmentInstance:
    """Build an instance from a generator name, keyword parameters and a seed."""
    if name not in GENERATORS and name != "taxonomy":
        raise InstanceError(f"unknown generator {name!r}; choose from {sorted(GENERATORS) + ['taxonomy']}")
    if name == "taxonomy":
        from .taxonomy import random_taxonomy_env

        return random_taxonomy_env(rng=np.random.default_rng(seed), **params)
    params = dict(params)
    if name == "sleeping":
        return make_sleeping_env(**params)
    return GENERATORS[name](rng=np.random.default_rng(seed), **params)


# -- zooming number ------------------------------------------------------------

ZOOM_CONSTANT = 12.0


def near_optimal_pairs(env: EnvironmentInstance, r: float, constant: float = ZOOM_CONSTANT) -> np.ndarray:
    """Indices (into the feasible-pair space) of pairs with badness at most ``constant * r``."""
    if not env.has_exact_mu:
        raise UnsupportedOperation("zooming number needs exact time-invariant expected payoffs")
    space = env.similarity_space()
    gap = env.badness()[space.px, space.py]
    return np.flatnonzero(gap <= constant * r + EPS)


def zooming_number(env: EnvironmentInstance, r: float, *, exact: bool = False,
                   constant: float = ZOOM_CONSTANT) -> int:
    """Covering number at scale ``r`` of the near-optimal pairs ``{badness <= 12 r}``.

    The greedy estimate is the smaller of a direct greedy cover of the
    near-optimal set and the number of sets of a greedy cover of all feasible
    pairs that meet it, so it never exceeds the full-space greedy count.
    """
    from .metric import covering_number, greedy_cover

    if r <= 0:
        raise InstanceError("r must be positive")
    idx = near_optimal_pairs(env, r, constant)
    space = env.similarity_space()
    if exact:
        return covering_number(space, r, idx, exact=True)
    direct = covering_number(space, r, idx)
    inside = np.zeros(space.n, dtype=bool)
    inside[idx] = True
    hits = sum(1 for s in greedy_cover(space, r) if inside[s].any())
    return min(direct, hits)
