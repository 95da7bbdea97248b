"""Experiment orchestration: configuration, the monitoring loop, metrics and output files.

A run pits every configured policy against the same environment realisation
for each replication index (seed pairing), records the per-cycle regret on
expected rewards and, for simulations, the product-space estimation error.

Output files
------------
``regret.csv``
    ``cycle,policy,replication,instantaneous,cumulative``; cycles are
    1-based, one row per (policy, replication, cycle).
``estimation_error.csv``
    ``cycle,policy,replication,error`` at every ``error_stride`` cycles and
    at the final cycle (simulations only).
``summary.json``
    Config echo, seeds, per-policy final-regret statistics, failures and
    wall-clock time.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .collab_model import PopulationModel, Regularizer, SimilarityGraph
from .environment import (
    GroundTruth,
    ReplayDataset,
    SimConfig,
    load_replay,
    simulate_population,
    similarity_heat_kernel,
    similarity_inner,
)
from .errors import ConfigError, DimensionError
from .policy import (
    POLICY_NAMES,
    ExplorationParams,
    RegretBoundParams,
    laplacian_trace_term,
    lemma1_width_c,
    lemma1_width_q,
    make_policy,
    theorem1_bound,
)

logger = logging.getLogger(__name__)

REGRET_HEADER = ("cycle", "policy", "replication", "instantaneous", "cumulative")
ERROR_HEADER = ("cycle", "policy", "replication", "error")
SWEEP_AXES = ("N", "K", "M", "sigma2")

_SHARED_POLICY_KEYS = {"name", "label", "eta1", "eta2", "lam"}
_POLICY_KEYS = {
    "clucb": {"alpha_q", "alpha_c", "inner_iters", "als_mode", "tol", "init", "mode",
              "delta", "bounds"},
    "linucb": {"alpha"},
    "goblin": {"alpha"},
}
_POLICY_KEYS["clucb_nosim"] = _POLICY_KEYS["clucb"]

_SIM_KEYS = {"kind", "N", "K_true", "sigma2", "noise_sd", "time_scale", "q_scale", "priors",
             "similarity"}
_REPLAY_KEYS = {"kind", "data", "risks", "bandwidth", "reward_sign", "reward_offset"}


# -- configuration ------------------------------------------------------------


@dataclass
class ExperimentConfig:
    """Declarative description of one experiment.

    ``environment`` is a mapping with ``kind`` set to ``"sim"`` or
    ``"replay"``.  Simulation keys: ``N, K_true, sigma2, noise_sd,
    time_scale, q_scale, priors, similarity`` (``"inner"`` or ``"cosine"``).
    Replay keys: ``data, risks, bandwidth, reward_sign, reward_offset``.

    ``policies`` is a list of mappings with a ``name`` from the registered
    set, an optional unique ``label`` and per-policy hyperparameters that
    override the shared ``eta1, eta2, lam, inner_iters``.

    ``M`` is an absolute count when integral and at least 1, otherwise a
    fraction of N rounded up.  ``seeds``, when given, lists one seed per
    replication; otherwise replication ``r`` uses ``seed + r``.  ``K`` is the
    number of canonical models fitted (default: the simulated ``K_true``,
    or 3 for replay).
    """

    environment: dict = field(default_factory=lambda: {"kind": "sim"})
    policies: list = field(default_factory=lambda: [{"name": n} for n in POLICY_NAMES])
    M: float = 0.33
    T: int = 3000
    replications: int = 1
    seed: int = 0
    seeds: list | None = None
    K: int | None = None
    eta1: float = 0.3
    eta2: float = 0.3
    lam: float = 0.01
    inner_iters: int = 2
    error_stride: int = 10
    workers: int = 1
    output_dir: str | None = None

    def __post_init__(self):
        env = dict(self.environment)
        kind = env.setdefault("kind", "sim")
        allowed = {"sim": _SIM_KEYS, "replay": _REPLAY_KEYS}.get(kind)
        if allowed is None:
            raise ConfigError(f"environment kind must be 'sim' or 'replay', got {kind!r}")
        unknown = set(env) - allowed
        if unknown:
            raise ConfigError(f"unknown {kind} environment keys: {sorted(unknown)}")
        if kind == "replay" and "data" not in env:
            raise ConfigError("replay environment needs a 'data' path")
        if env.get("similarity", "inner") not in ("inner", "cosine"):
            raise ConfigError("similarity must be 'inner' or 'cosine'")
        self.environment = env

        if not self.policies:
            raise ConfigError("at least one policy is required")
        specs, labels = [], set()
        for entry in self.policies:
            spec = {"name": entry} if isinstance(entry, str) else dict(entry)
            name = spec.get("name")
            if name not in POLICY_NAMES:
                raise ConfigError(f"unknown policy {name!r}; expected one of {POLICY_NAMES}")
            unknown = set(spec) - _SHARED_POLICY_KEYS - _POLICY_KEYS[name]
            if unknown:
                raise ConfigError(f"unknown options for {name}: {sorted(unknown)}")
            spec.setdefault("label", name)
            if spec["label"] in labels:
                raise ConfigError(f"duplicate policy label {spec['label']!r}")
            labels.add(spec["label"])
            specs.append(spec)
        self.policies = specs

        if self.T < 1:
            raise ConfigError("T must be at least 1")
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if self.seeds is not None:
            self.seeds = [int(s) for s in self.seeds]
            if len(self.seeds) != self.replications:
                raise ConfigError("seeds must list exactly one seed per replication")
        if self.M <= 0:
            raise ConfigError("M must be positive")
        if self.K is not None and self.K < 1:
            raise ConfigError("K must be at least 1")
        if self.error_stride < 1 or self.workers < 1 or self.inner_iters < 1:
            raise ConfigError("error_stride, workers and inner_iters must be at least 1")
        if self.kind == "sim":
            self.sim_config(0)  # validate eagerly

    @property
    def kind(self):
        return self.environment["kind"]

    @classmethod
    def from_dict(cls, data) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(data)

    def to_dict(self):
        return asdict(self)

    def replace(self, **changes) -> "ExperimentConfig":
        data = self.to_dict()
        data.update(changes)
        return ExperimentConfig.from_dict(data)

    def seed_schedule(self):
        if self.seeds is not None:
            return list(self.seeds)
        return [self.seed + r for r in range(self.replications)]

    def resolve_M(self, N) -> int:
        """Capacity as a unit count for a population of ``N``."""
        M = self.M
        if M >= 1:
            if M != int(M):
                raise ConfigError(f"absolute capacity must be an integer, got {M}")
            M = int(M)
        else:
            M = math.ceil(M * N - 1e-9)
        if not 1 <= M <= N:
            raise ConfigError(f"capacity M={M} must lie in [1, {N}]")
        return M

    def sim_config(self, seed) -> SimConfig:
        env = {k: v for k, v in self.environment.items() if k not in ("kind", "similarity")}
        if "priors" in env and env["priors"] is not None:
            env["priors"] = tuple(env["priors"])
        return SimConfig(T=self.T, seed=seed, **env)

    def model_rank(self):
        if self.K is not None:
            return self.K
        return self.environment.get("K_true", 3) if self.kind == "sim" else 3


# -- metrics ------------------------------------------------------------------


def cycle_regret(true_outcomes, mask, M) -> float:
    """Shortfall of the selected units against the best ``M`` units.

    Only the units in which the two sets differ are summed, so an optimal
    selection scores exactly zero.
    """
    y = np.asarray(true_outcomes, dtype=float).ravel()
    mask = np.asarray(mask, dtype=bool).ravel()
    if mask.shape != y.shape:
        raise DimensionError(f"mask has {mask.size} entries for {y.size} outcomes")
    if int(mask.sum()) != M:
        raise ValueError(f"selection has {int(mask.sum())} units, capacity is {M}")
    top = np.zeros(y.size, dtype=bool)
    top[np.argsort(-y, kind="stable")[:M]] = True
    return max(float(y[top & ~mask].sum() - y[mask & ~top].sum()), 0.0)


def estimation_error(model, truth) -> float:
    """Frobenius distance between estimated and true coefficient matrices.

    ``model`` is a :class:`PopulationModel` or a p x N coefficient array;
    ``truth`` a :class:`GroundTruth` or a p x N array.  Comparing products
    makes the error invariant to any invertible re-mixing of the factors.
    """
    est = model.coefficients() if isinstance(model, PopulationModel) else np.asarray(model)
    ref = truth.beta if isinstance(truth, GroundTruth) else np.asarray(truth)
    if est.shape != ref.shape:
        raise DimensionError(f"coefficient shapes differ: {est.shape} vs {ref.shape}")
    return float(np.linalg.norm(est - ref))


# -- results ------------------------------------------------------------------


@dataclass
class RunRecord:
    """One policy on one replication."""

    policy: str
    replication: int
    seed: int
    instantaneous: np.ndarray
    selections: np.ndarray  # T x N boolean
    error_cycles: np.ndarray  # 1-based
    errors: np.ndarray

    @property
    def cumulative(self):
        return np.cumsum(self.instantaneous)

    @property
    def final_regret(self):
        return float(self.instantaneous.sum())


@dataclass
class Failure:
    policy: str
    replication: int
    seed: int
    error: str
    message: str


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    N: int
    M: int
    seeds: list
    records: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    wall_clock: float = 0.0

    @property
    def labels(self):
        return [spec["label"] for spec in self.config.policies]

    def record(self, label, replication):
        for rec in self.records:
            if rec.policy == label and rec.replication == replication:
                return rec
        raise KeyError((label, replication))

    def runs(self, label):
        return sorted((r for r in self.records if r.policy == label), key=lambda r: r.replication)

    def finals(self, label) -> np.ndarray:
        return np.array([r.final_regret for r in self.runs(label)])

    def mean_error_at(self, label, cycle) -> float:
        """Seed-averaged estimation error at 1-based ``cycle``."""
        vals = []
        for r in self.runs(label):
            hit = np.flatnonzero(r.error_cycles == cycle)
            if hit.size == 0:
                raise KeyError(f"no error recorded at cycle {cycle}")
            vals.append(r.errors[hit[0]])
        return float(np.mean(vals))

    @property
    def ok(self):
        return not self.failures

    def summary(self):
        policies = {}
        for label in self.labels:
            finals = self.finals(label)
            n = finals.size
            policies[label] = {
                "completed": n,
                "failed": sum(f.policy == label for f in self.failures),
                "mean_final_regret": float(finals.mean()) if n else None,
                "sd_final_regret": float(finals.std(ddof=1)) if n > 1 else (0.0 if n else None),
                "final_regret": [float(v) for v in finals],
            }
        return {
            "config": self.config.to_dict(),
            "N": self.N,
            "M": self.M,
            "T": self.config.T,
            "seeds": list(self.seeds),
            "policies": policies,
            "failures": [asdict(f) for f in self.failures],
            "wall_clock_seconds": self.wall_clock,
        }


# -- running ------------------------------------------------------------------


@dataclass
class _Environment:
    """Everything a policy run needs from one replication's world."""

    features: np.ndarray  # T x p
    expected: np.ndarray  # T x N rewards used for regret
    observed: np.ndarray  # T x N rewards revealed to the policy
    graph: SimilarityGraph
    truth: GroundTruth | None = None


def _sim_environment(cfg: ExperimentConfig, seed) -> _Environment:
    sim = cfg.sim_config(seed)
    truth, oracle = simulate_population(sim)
    cosine = cfg.environment.get("similarity", "inner") == "cosine"
    W = similarity_inner(truth.C_true, normalized=cosine)
    T = sim.T
    expected = np.vstack([oracle.expected(t) for t in range(T)])
    observed = np.vstack([oracle.sample(t) for t in range(T)])
    features = np.vstack([oracle.features(t) for t in range(T)])
    return _Environment(features, expected, observed, SimilarityGraph.from_weights(W), truth)


def _replay_environment(cfg: ExperimentConfig, data: ReplayDataset) -> _Environment:
    env = cfg.environment
    sign = env.get("reward_sign", 1.0)
    offset = env.get("reward_offset", 0.0)
    if data.risk_factors is not None:
        W = similarity_heat_kernel(data.risk_factors, env.get("bandwidth"))
        graph = SimilarityGraph.from_weights(W)
    else:
        logger.warning("no risk factors supplied; running replay without a similarity graph")
        graph = SimilarityGraph.empty(data.N)
    rewards = sign * data.outcomes + offset
    features = np.vstack([data.features(t) for t in range(data.T)])
    return _Environment(features, rewards, rewards, graph)


def _run_policy(cfg: ExperimentConfig, spec, env: _Environment, replication, seed, M):
    T, N = env.expected.shape
    p = env.features.shape[1]
    params = {k: v for k, v in spec.items() if k not in ("name", "label")}
    kw = {"eta1": cfg.eta1, "eta2": cfg.eta2, "lam": cfg.lam, "inner_iters": cfg.inner_iters}
    kw.update({k: params.pop(k) for k in list(params) if k in kw})
    if spec["name"] in ("clucb", "clucb_nosim"):
        bounds = params.pop("bounds", None)
        kw["exploration"] = ExplorationParams(
            params.pop("alpha_q", 1.0), params.pop("alpha_c", 1.0),
            delta=params.pop("delta", 0.1), mode=params.pop("mode", "fixed"))
        if bounds is not None:
            kw["bounds"] = RegretBoundParams(**bounds)
    policy = make_policy(spec["name"], N, p, cfg.model_rank(), env.graph, seed=seed, **kw, **params)

    inst = np.zeros(T)
    selections = np.zeros((T, N), dtype=bool)
    err_cycles, errors = [], []
    for t in range(T):
        X = np.broadcast_to(env.features[t], (N, p))
        mask = policy.select(X, M)
        selections[t] = mask
        inst[t] = cycle_regret(env.expected[t], mask, M)
        units = np.flatnonzero(mask)
        policy.update(units, X[units], env.observed[t, units])
        if env.truth is not None and ((t + 1) % cfg.error_stride == 0 or t == T - 1):
            err_cycles.append(t + 1)
            errors.append(estimation_error(policy.coefficients(), env.truth))
    return RunRecord(spec["label"], replication, seed, inst, selections,
                     np.array(err_cycles, dtype=int), np.array(errors))


def _replication(cfg: ExperimentConfig, replication, seed, M, specs, data=None):
    """Run the given policies on one replication; failures are caught per policy."""
    out = []
    try:
        env = _sim_environment(cfg, seed) if data is None else _replay_environment(cfg, data)
    except Exception as exc:  # noqa: BLE001 - isolate to this replication
        logger.error("replication %d: environment failed: %s", replication, exc)
        return [Failure(s["label"], replication, seed, type(exc).__name__, str(exc)) for s in specs]
    for spec in specs:
        try:
            out.append(_run_policy(cfg, spec, env, replication, seed, M))
        except Exception as exc:  # noqa: BLE001 - isolate to this replication
            logger.error("%s replication %d failed: %s", spec["label"], replication, exc)
            out.append(Failure(spec["label"], replication, seed, type(exc).__name__, str(exc)))
    return out


def run_experiment(cfg: ExperimentConfig, data: ReplayDataset | None = None) -> ExperimentResult:
    """Run every policy on every replication of ``cfg``.

    Each replication draws one environment from its seed and all policies
    are evaluated on it.  With ``workers > 1`` replications run in separate
    processes; results are merged in (policy, replication) order so output
    does not depend on completion order.  A failing policy run is recorded
    and skipped.  For replay configs the dataset is loaded from
    ``environment["data"]`` unless ``data`` is given.
    """
    start = time.perf_counter()
    seeds = cfg.seed_schedule()
    if cfg.kind == "replay":
        if data is None:
            data = load_replay(cfg.environment["data"], cfg.T, cfg.environment.get("risks"))
        N = data.N
    else:
        N = cfg.environment.get("N", SimConfig.N)
    M = cfg.resolve_M(N)
    specs = cfg.policies

    outputs = []
    if cfg.workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(_replication, cfg, r, s, M, specs, data)
                       for r, s in enumerate(seeds)]
            for r, fut in enumerate(futures):
                try:
                    outputs.extend(fut.result())
                except Exception as exc:  # noqa: BLE001 - worker crashed
                    outputs.extend(Failure(s["label"], r, seeds[r], type(exc).__name__, str(exc))
                                   for s in specs)
    else:
        for r, s in enumerate(seeds):
            outputs.extend(_replication(cfg, r, s, M, specs, data))

    order = {label: i for i, label in enumerate(s["label"] for s in specs)}
    key = lambda o: (order[o.policy], o.replication)  # noqa: E731
    result = ExperimentResult(
        config=cfg, N=N, M=M, seeds=seeds,
        records=sorted((o for o in outputs if isinstance(o, RunRecord)), key=key),
        failures=sorted((o for o in outputs if isinstance(o, Failure)), key=key),
    )
    result.wall_clock = time.perf_counter() - start
    return result


def sweep(base: ExperimentConfig, axis, values) -> dict:
    """Run ``base`` once per value of ``axis`` with the same seed schedule.

    ``K`` changes both the simulated group count and the fitted rank.
    Returns a dict mapping each value to its :class:`ExperimentResult`.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    if axis in ("N", "K", "sigma2") and base.kind != "sim":
        raise ConfigError(f"axis {axis} needs a simulated environment")
    results = {}
    for value in values:
        if axis == "M":
            cfg = base.replace(M=value)
        elif axis == "K":
            cfg = base.replace(K=int(value),
                               environment={**base.environment, "K_true": int(value)})
        elif axis == "N":
            cfg = base.replace(environment={**base.environment, "N": int(value)})
        else:
            cfg = base.replace(environment={**base.environment, "sigma2": float(value)})
        logger.info("sweep %s=%s", axis, value)
        results[value] = run_experiment(cfg)
    return results


# -- persistence --------------------------------------------------------------


def _fmt(x):
    return repr(float(x))


def _open_for_write(path):
    try:
        return open(path, "w", newline="", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def emit_results(result: ExperimentResult | None, out_dir, config=None) -> dict:
    """Write ``regret.csv``, ``estimation_error.csv`` and ``summary.json``.

    ``None`` writes header-only CSVs.  The error file is omitted for replay
    runs.  Returns the written paths keyed by file stem.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out}: {exc.strerror or exc}") from exc
    records = result.records if result is not None else []
    cfg = result.config if result is not None else config
    paths = {"regret": out / "regret.csv"}

    with _open_for_write(paths["regret"]) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REGRET_HEADER)
        for rec in records:
            cum = rec.cumulative
            for t in range(rec.instantaneous.size):
                w.writerow([t + 1, rec.policy, rec.replication,
                            _fmt(rec.instantaneous[t]), _fmt(cum[t])])

    if cfg is None or cfg.kind == "sim":
        paths["estimation_error"] = out / "estimation_error.csv"
        with _open_for_write(paths["estimation_error"]) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(ERROR_HEADER)
            for rec in records:
                for c, e in zip(rec.error_cycles, rec.errors):
                    w.writerow([int(c), rec.policy, rec.replication, _fmt(e)])

    if result is not None:
        paths["summary"] = out / "summary.json"
        with _open_for_write(paths["summary"]) as fh:
            json.dump(result.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return paths


def emit_sweep(results: dict, axis, out_dir) -> Path:
    """Write each value's results to ``<axis>=<value>/`` plus ``sweep_summary.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sweep_summary.csv"
    with _open_for_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("axis", "value", "policy", "completed", "failed", "mean_final", "sd_final"))
        for value, res in results.items():
            emit_results(res, out / f"{axis}={value}")
            for label, s in res.summary()["policies"].items():
                mean = "" if s["mean_final_regret"] is None else _fmt(s["mean_final_regret"])
                sd = "" if s["sd_final_regret"] is None else _fmt(s["sd_final_regret"])
                w.writerow((axis, value, label, s["completed"], s["failed"], mean, sd))
    return path


# -- diagnostics --------------------------------------------------------------

_BOUND_KEYS = {"S", "L", "P", "v1", "v2", "eps1", "eps2", "m", "delta", "T"}


def regret_bound(cfg: ExperimentConfig, constants, data: ReplayDataset | None = None) -> dict:
    """Evaluate the CL-UCB regret bound for the setting described by ``cfg``.

    ``constants`` holds the norm bounds ``S, L, P``, the rates ``v1, v2``
    and slacks ``eps1, eps2``, plus optional ``m`` (default: the resolved
    capacity), ``delta`` (default 0.1) and ``T`` (default ``cfg.T``).  The
    graph comes from the first seed's environment; both width multipliers
    are the computed radii at the horizon.
    """
    unknown = set(constants) - _BOUND_KEYS
    if unknown:
        raise ConfigError(f"unknown bound constants: {sorted(unknown)}")
    missing = {"S", "L", "P"} - set(constants)
    if missing:
        raise ConfigError(f"missing bound constants: {sorted(missing)}")
    seed = cfg.seed_schedule()[0]
    if cfg.kind == "replay":
        if data is None:
            data = load_replay(cfg.environment["data"], cfg.T, cfg.environment.get("risks"))
        env = _replay_environment(cfg, data)
    else:
        env = _sim_environment(cfg, seed)
    N = env.expected.shape[1]
    p = env.features.shape[1]
    K = cfg.model_rank()
    T = int(constants.get("T", cfg.T))
    delta = float(constants.get("delta", 0.1))
    bounds = RegretBoundParams(
        **{k: v for k, v in constants.items() if k not in ("m", "delta", "T")},
        m=int(constants.get("m", cfg.resolve_M(N))),
    )
    reg = Regularizer(cfg.eta1, cfg.eta2, cfg.lam, env.graph.E, K)
    trace = laplacian_trace_term(reg, T)
    alpha_q = lemma1_width_q(T, K, p, cfg.eta1, bounds, delta)
    alpha_c = lemma1_width_c(T, N, K, cfg.eta2, bounds, trace, delta)
    bound = theorem1_bound(T, N, K, p, cfg.eta1, cfg.eta2, bounds, trace, alpha_q, alpha_c)
    return {"T": T, "N": N, "K": K, "p": p, "m": bounds.m, "delta": delta,
            "trace_term": trace, "alpha_q": alpha_q, "alpha_c": alpha_c, "bound": bound}
