"""Experiment runner: seeded streams, the round loop, regret accounting, audits and sweeps."""
from __future__ import annotations

import csv
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .baselines import UniformPartition, exp3_policy, ucb1_policy
from .environments import EnvironmentInstance, InstanceError, generate, load_instance
from .meta import ContextualBandit, MetaAuditor, audit_meta_snapshot
from .metric import space_from_dict
from .taxonomy import (PhasedTaxonomyBandit, Taxonomy, TaxonomyAuditor, TaxonomyBandit,
                       taxonomy_from_env)
from .zooming import ContextualZooming, ZoomAuditor, audit_snapshot

log = logging.getLogger(__name__)

CSV_COLUMNS = ("round", "context_id", "arm_id", "payoff", "inst_regret", "cum_regret", "structure_size")
STREAMS = ("instance", "noise", "algorithm")


class ConfigError(ValueError):
    pass


def streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent Philox generators for instance generation, payoff noise and algorithm sampling.

    Stream ``i`` is ``SeedSequence(seed, spawn_key=(i,))``, so replicates with
    different seeds and the three components never share random numbers.
    """
    return {
        name: np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(i,))))
        for i, name in enumerate(STREAMS)
    }


# -- run log --------------------------------------------------------------------------


@dataclass
class RunLog:
    context: np.ndarray
    arm: np.ndarray
    payoff: np.ndarray
    inst_regret: np.ndarray
    structure_size: np.ndarray
    cell: np.ndarray
    phase: Optional[np.ndarray] = None
    regret_kind: str = "contextual"
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.context)

    @property
    def cum_regret(self) -> np.ndarray:
        return np.cumsum(self.inst_regret)

    @property
    def total_regret(self) -> float:
        return float(self.inst_regret.sum())

    @property
    def average_regret(self) -> float:
        return self.total_regret / max(len(self), 1)

    def to_csv(self, path=None) -> str:
        """Fixed schema; floats use ``repr`` so equal runs give equal bytes."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        cum = self.cum_regret
        for t in range(len(self)):
            w.writerow((t + 1, int(self.context[t]), int(self.arm[t]), repr(float(self.payoff[t])),
                        repr(float(self.inst_regret[t])), repr(float(cum[t])), int(self.structure_size[t])))
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def summary(self) -> dict:
        out = {"T": len(self), "total_regret": self.total_regret, "average_regret": self.average_regret,
               "regret_kind": self.regret_kind, "final_structure_size": int(self.structure_size[-1]) if len(self) else 0}
        if self.phase is not None:
            out["phases"] = int(self.phase.max()) if len(self) else 0
        out.update(self.meta)
        return out


def read_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {c: np.array([float(r[c]) for r in rows]) for c in CSV_COLUMNS}


def benchmark_table(env: EnvironmentInstance, T: int) -> Callable[[int, int], float]:
    """``mu*(x)`` for round ``t``: the per-context best arm's expected payoff.

    Adversarial instances use the fixed per-context arm maximizing the payoff
    summed over the rounds, evaluated at round ``t``.
    """
    best = env.best_arms()
    if env.mu_rounds is None:
        star = env.mu[np.arange(env.n_contexts), best]
        return lambda t, x: float(star[x])
    return lambda t, x: env.mean(t, x, int(best[x]))


def contextual_regret(log_or_pairs, env: EnvironmentInstance) -> np.ndarray:
    """Cumulative regret series recomputed from the played (context, arm) pairs.

    For drifting instances this is dynamic regret (contexts are rounds and the
    benchmark is the per-round best arm); divide by ``T`` for its average.
    """
    if isinstance(log_or_pairs, RunLog):
        ctx, arms = log_or_pairs.context, log_or_pairs.arm
    else:
        ctx, arms = (np.asarray(a, dtype=np.intp) for a in log_or_pairs)
    star = benchmark_table(env, len(ctx))
    gap = np.array([star(t, x) - env.mean(t, x, y) for t, (x, y) in enumerate(zip(ctx, arms))])
    return np.cumsum(gap)


def cell_regret(log: RunLog) -> dict[int, float]:
    """Regret split by the structure cell (ball or node) that made each choice."""
    out: dict[int, float] = {}
    for c, g in zip(log.cell.tolist(), log.inst_regret.tolist()):
        out[c] = out.get(c, 0.0) + g
    return out


# -- policies ------------------------------------------------------------------------------


class OraclePolicy:
    """Plays the benchmark arm of every context; regret 0 by construction."""

    name = "oracle"
    structure_size = 1
    last_cell = 0

    def __init__(self, env: EnvironmentInstance):
        self.best = env.best_arms()

    def choose(self, x: int) -> int:
        return int(self.best[x])

    def update(self, x: int, arm: int, payoff: float) -> None:
        pass


class DoublingWrapper:
    """Anytime policy: phase ``i`` runs a fresh instance tuned for ``2^i`` rounds.

    Phase boundaries fall after rounds 2, 6, 14, ...  (lengths 2, 4, 8, ...); the
    last phase is cut short at the end of the run.  All phases share one
    algorithm generator.
    """

    def __init__(self, factory: Callable[[int], object]):
        self.factory = factory
        self.phase = 0
        self.left = 0
        self.inner = None

    @property
    def name(self) -> str:
        return f"doubling({getattr(self.inner, 'name', '?')})"

    @property
    def structure_size(self) -> int:
        return self.inner.structure_size if self.inner is not None else 0

    @property
    def last_cell(self) -> int:
        return self.inner.last_cell

    def choose(self, x: int) -> int:
        if self.left == 0:
            self.phase += 1
            self.left = 2 ** self.phase
            self.inner = self.factory(self.left)
        return self.inner.choose(x)

    def update(self, x: int, arm: int, payoff: float) -> None:
        self.inner.update(x, arm, payoff)
        self.left -= 1


def phase_lengths(T: int) -> list[int]:
    out, i = [], 1
    while T > 0:
        out.append(min(2 ** i, T))
        T -= out[-1]
        i += 1
    return out


def _taxonomy(env: EnvironmentInstance) -> Taxonomy:
    return taxonomy_from_env(env)


ALGORITHMS: dict[str, Callable] = {
    "zooming": lambda env, T, rng, **kw: ContextualZooming(env.similarity_space(), T, **kw),
    "uniform": lambda env, T, rng, **kw: UniformPartition(env.similarity_space(), T, rng, **kw),
    "ucb1": lambda env, T, rng, **kw: ucb1_policy(env.similarity_space(), T, rng),
    "exp3": lambda env, T, rng, **kw: exp3_policy(env.similarity_space(), T, rng),
    "meta": lambda env, T, rng, **kw: ContextualBandit(env.similarity_space(), T, rng, **kw),
    "taxonomy": lambda env, T, rng, **kw: TaxonomyBandit(_taxonomy(env), T, rng, **kw),
    "taxonomy_phased": lambda env, T, rng, **kw: PhasedTaxonomyBandit(_taxonomy(env), T, rng),
    "oracle": lambda env, T, rng, **kw: OraclePolicy(env),
}

AUDITORS = {"zooming": ZoomAuditor, "meta": MetaAuditor, "taxonomy": TaxonomyAuditor}


def make_policy(name: str, env: EnvironmentInstance, T: int, rng: np.random.Generator, *,
                doubling: bool = False, **params):
    if name not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {name!r}; choose from {sorted(ALGORITHMS)}")
    if name in ("taxonomy", "taxonomy_phased") and "tree" not in env.params:
        raise ConfigError(f"{name} needs a taxonomy instance")
    build = ALGORITHMS[name]
    if doubling:
        return DoublingWrapper(lambda horizon: build(env, horizon, rng, **params))
    return build(env, T, rng, **params)


# -- the round loop ---------------------------------------------------------------------


def run(env: EnvironmentInstance, policy, T: int, noise_rng: np.random.Generator,
        auditors=()) -> RunLog:
    """Play ``T`` rounds: reveal the context, let the policy choose, draw the payoff, give feedback.

    Payoff noise is pre-drawn from ``noise_rng`` (one uniform or normal per
    round), so policies run on the same seed see common random numbers.
    """
    if T < 1:
        raise ConfigError("T must be at least 1")
    arrivals = env.arrivals_for(T)
    if env.noise == "bernoulli":
        draws = noise_rng.random(T)
    else:
        draws = noise_rng.standard_normal(T)
    star = benchmark_table(env, T)
    arm = np.zeros(T, dtype=np.intp)
    payoff = np.zeros(T)
    gap = np.zeros(T)
    size = np.zeros(T, dtype=np.intp)
    cell = np.zeros(T, dtype=np.intp)
    phase = np.zeros(T, dtype=np.intp) if isinstance(policy, DoublingWrapper) else None
    feasible = env.feasible
    for t in range(T):
        x = int(arrivals[t])
        for a in auditors:
            a.before(t, x, policy)
        y = policy.choose(x)
        if not feasible[x, y]:
            raise InstanceError(f"round {t}: policy chose infeasible arm {y} for context {x}")
        m = env.mean(t, x, y)
        if env.noise == "bernoulli":
            p = 1.0 if draws[t] < m else 0.0
        else:
            p = min(1.0, max(0.0, m + env.noise_scale * draws[t]))
        policy.update(x, y, p)
        for a in auditors:
            a.after(t, x, y, p, policy)
        arm[t], payoff[t], gap[t] = y, p, star(t, x) - m
        size[t] = policy.structure_size
        cell[t] = policy.last_cell
        if phase is not None:
            phase[t] = policy.phase
    for a in auditors:
        if hasattr(a, "finish"):
            a.finish(policy)
    return RunLog(arrivals.copy(), arm, payoff, gap, size, cell, phase, env.regret_kind)


# -- configuration -------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    environment: dict
    algorithm: dict
    T: int
    seeds: list = field(default_factory=lambda: [0])
    audit: bool = False
    doubling: bool = False
    output_dir: Optional[str] = None
    base_dir: str = "."

    def __post_init__(self):
        self.T = int(float(self.T))
        if self.T < 1:
            raise ConfigError("T must be at least 1")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        self.seeds = [int(s) for s in self.seeds]
        if isinstance(self.algorithm, str):
            self.algorithm = {"name": self.algorithm}
        if self.algorithm.get("name") not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm.get('name')!r}")
        f = self.environment.get("file")
        if f is not None and not self._path(f).exists():
            raise ConfigError(f"instance file {f} does not exist")

    def _path(self, f) -> Path:
        p = Path(f)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "ExperimentConfig":
        known = {"environment", "algorithm", "T", "seeds", "audit", "doubling", "output_dir"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        for key in ("environment", "algorithm", "T"):
            if key not in d:
                raise ConfigError(f"config is missing {key!r}")
        return cls(**d, base_dir=str(base_dir))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        return cls.from_dict(json.loads(path.read_text()), base_dir=path.parent)

    def to_dict(self) -> dict:
        return {"environment": self.environment, "algorithm": self.algorithm, "T": self.T,
                "seeds": self.seeds, "audit": self.audit, "doubling": self.doubling,
                "output_dir": self.output_dir}

    def build_environment(self, rng: np.random.Generator) -> EnvironmentInstance:
        desc = self.environment
        if "file" in desc:
            return load_instance(self._path(desc["file"]))
        if "generator" in desc:
            seed = desc.get("seed")
            if seed is None:
                seed = int(rng.integers(2 ** 63))
            params = dict(desc.get("params", {}))
            if desc["generator"] in ("peak", "random_lipschitz", "drifting", "taxonomy") and "T" not in params:
                params["T"] = self.T
            return generate(desc["generator"], params, seed)
        return EnvironmentInstance.from_dict(desc)


def output_dir(config: Optional[ExperimentConfig] = None) -> Path:
    d = os.environ.get("CTXZOOM_OUTPUT_DIR") or (config.output_dir if config else None) or "ctxzoom_out"
    return Path(d)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("CTXZOOM_WORKERS", "1")))
    except ValueError:
        raise ConfigError("CTXZOOM_WORKERS must be an integer")


def run_config(config: ExperimentConfig, seed: int, *, write: bool = False) -> dict:
    """One seeded run; returns the summary, the log and (when auditing) the audit report."""
    rng = streams(seed)
    env = config.build_environment(rng["instance"])
    algo = dict(config.algorithm)
    name = algo.pop("name")
    policy = make_policy(name, env, config.T, rng["algorithm"], doubling=config.doubling, **algo)
    auditors = []
    if config.audit and not config.doubling and name in AUDITORS:
        auditors = [AUDITORS[name](env, config.T)]
    result_log = run(env, policy, config.T, rng["noise"], auditors)
    summary = {"seed": seed, "algorithm": name, **result_log.summary()}
    report = merge_reports([a.report() for a in auditors]) if auditors else {}
    if report:
        summary["audit_passed"] = all(v["passed"] for v in report.values())
    if write:
        out = output_dir(config)
        out.mkdir(parents=True, exist_ok=True)
        result_log.to_csv(out / f"{name}_seed{seed}.csv")
        if hasattr(policy, "snapshot"):
            (out / f"{name}_seed{seed}_snapshot.json").write_text(json.dumps(policy.snapshot()))
        if report:
            (out / f"{name}_seed{seed}_audit.json").write_text(json.dumps(report, indent=1))
    return {"summary": summary, "log": result_log, "audit": report}


def merge_reports(reports) -> dict:
    out: dict = {}
    for rep in reports:
        for check, s in rep.items():
            agg = out.setdefault(check, {"passed": True, "violations": 0, "events": 0,
                                         "first_round": None, "detail": ""})
            agg["violations"] += s["violations"]
            agg["events"] += s["events"]
            agg["passed"] = agg["passed"] and s["passed"]
            if s["first_round"] is not None and agg["first_round"] is None:
                agg["first_round"], agg["detail"] = s["first_round"], s["detail"]
    return out


def _run_one(args):
    config_dict, base_dir, seed, write = args
    cfg = ExperimentConfig.from_dict(config_dict, base_dir=base_dir)
    res = run_config(cfg, seed, write=write)
    return res["summary"]


def sweep(config: ExperimentConfig, grid: Optional[dict[str, list]] = None, *,
          workers: Optional[int] = None, write: bool = False) -> list[dict]:
    """Run every seed for every value of each swept parameter; results sorted by (point, seed).

    ``grid`` maps ``T`` or ``algorithm.<key>`` / ``environment.params.<key>``
    to a list of values; multiple keys form a full product.
    """
    grid = grid or {}
    points = [{}]
    for key, values in grid.items():
        points = [dict(p, **{key: v}) for p in points for v in values]
    jobs = []
    for i, point in enumerate(points):
        d = json.loads(json.dumps(config.to_dict()))
        for key, value in point.items():
            _assign(d, key, value)
        if write:
            d["output_dir"] = str(output_dir(config) / f"point{i}")
        for seed in config.seeds:
            jobs.append(((d, config.base_dir, seed, write), i, point))
    workers = worker_count() if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, [j[0] for j in jobs]))
    else:
        results = [_run_one(j[0]) for j in jobs]
    rows = [{"point": i, **res, **point} for (_, i, point), res in zip(jobs, results)]
    rows.sort(key=lambda r: (r["point"], r["seed"]))
    return rows


def _assign(d: dict, key: str, value) -> None:
    parts = key.split(".")
    target = d
    for p in parts[:-1]:
        target = target.setdefault(p, {})
    target[parts[-1]] = value


def write_rows(rows: list[dict], path) -> None:
    keys: list[str] = []
    for r in rows:
        keys.extend(k for k in r if k not in keys)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


# -- snapshot checks -------------------------------------------------------------------------


def audit(snapshot: dict, checks=None, *, arrivals=None) -> dict:
    """Structural checks on a saved snapshot: ``{check: {passed, detail}}``."""
    algo = snapshot.get("algorithm")
    if algo == "zooming":
        raw = audit_snapshot(snapshot)
    elif algo == "meta":
        raw = audit_meta_snapshot(snapshot, arrivals, space_from_dict(snapshot["context_space"]))
    elif algo == "taxonomy":
        raw = audit_taxonomy_snapshot(snapshot)
    else:
        raise ConfigError(f"snapshot of unknown algorithm {algo!r}")
    if checks:
        missing = set(checks) - set(raw)
        if missing:
            raise ConfigError(f"unknown checks {sorted(missing)} for {algo}")
        raw = {k: raw[k] for k in checks}
    return {k: {"passed": bool(ok), "detail": detail} for k, (ok, detail) in raw.items()}


def audit_taxonomy_snapshot(snap: dict) -> dict:
    """Frontier and count checks: every leaf has exactly one active node on its root path,
    retired nodes are inactive, and a node is sampled at least as often as it was selected."""
    tax = Taxonomy.from_dict(snap["tree"])
    active = np.zeros(len(tax), dtype=bool)
    active[snap["active"]] = True
    retired = np.zeros(len(tax), dtype=bool)
    retired[snap["retired"]] = True
    bad = [int(leaf) for leaf in tax.leaves if active[tax.path_up(int(leaf))].sum() != 1]
    out = {"frontier": (not bad, f"leaves without exactly one active ancestor: {bad[:5]}" if bad else "")}
    both = np.flatnonzero(active & retired)
    out["retired"] = (len(both) == 0, f"retired but active: {both[:5].tolist()}" if len(both) else "")
    n = np.asarray(snap["n"])
    sel = np.asarray(snap["selected"])
    low = np.flatnonzero(n < sel)
    out["counts"] = (len(low) == 0, f"nodes with fewer samples than selections: {low[:5].tolist()}" if len(low) else "")
    return out
