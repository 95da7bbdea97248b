"""Synthetic populations, similarity matrices and longitudinal replay data."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigError, ReplayFormatError

logger = logging.getLogger(__name__)

#: MMSE severity bands, for reporting only.
MMSE_HEALTHY = (27, 30)
MMSE_MCI = (24, 26)
MMSE_DEMENTIA = (0, 23)

REPLAY_HEADER = ("unit_id", "timestamp_months", "outcome")


@dataclass(frozen=True)
class SimConfig:
    """Parameters of the simulated degradation population.

    Memberships come from a zero-mean Gaussian mixture whose ``k``-th
    component has variance ``sigma2`` in coordinate ``k`` and 1 elsewhere.
    Outcomes follow a quadratic trend in (normalised) time plus Gaussian noise.
    """

    N: int = 50
    K_true: int = 3
    p: int = 3
    sigma2: float = 100.0
    noise_sd: float = 1.0
    T: int = 3000
    seed: int = 0
    time_scale: str = "normalized"
    q_scale: float = 1.0
    priors: tuple | None = None

    def __post_init__(self):
        if not self.N >= self.K_true >= 1:
            raise ConfigError("need N >= K_true >= 1")
        if self.p != 3:
            raise ConfigError("the quadratic degradation model has p = 3")
        if self.sigma2 <= 0 or self.noise_sd < 0 or self.T < 1:
            raise ConfigError("need sigma2 > 0, noise_sd >= 0 and T >= 1")
        if self.time_scale not in ("normalized", "raw"):
            raise ConfigError(f"unknown time_scale {self.time_scale!r}")
        if self.priors is not None:
            pr = np.asarray(self.priors, dtype=float)
            if pr.shape != (self.K_true,) or np.any(pr < 0) or not np.isclose(pr.sum(), 1):
                raise ConfigError("priors must be K_true non-negative weights summing to 1")


@dataclass(frozen=True)
class GroundTruth:
    Q_true: np.ndarray  # p x K
    C_true: np.ndarray  # K x N
    beta: np.ndarray  # p x N
    group_label: np.ndarray  # N

    @property
    def N(self):
        return self.C_true.shape[1]


def features_at(t, cfg: SimConfig) -> np.ndarray:
    """Feature vector ``[1, tau, tau^2]`` of cycle ``t``.

    ``tau = t / (T - 1)`` in normalised mode and ``tau = t`` in raw mode.
    """
    if not 0 <= t < cfg.T:
        raise IndexError(f"cycle {t} outside [0, {cfg.T})")
    if cfg.time_scale == "raw":
        tau = float(t)
    else:
        tau = t / (cfg.T - 1) if cfg.T > 1 else 0.0
    return np.array([1.0, tau, tau * tau])


def feature_matrix(T, time_scale="normalized") -> np.ndarray:
    """Features of all cycles as a T x 3 array."""
    t = np.arange(T, dtype=float)
    tau = t if time_scale == "raw" else (t / (T - 1) if T > 1 else np.zeros(T))
    return np.column_stack([np.ones(T), tau, tau * tau])


class OutcomeOracle:
    """Noise-free and noisy outcomes of a simulated population.

    The noise for cycle ``t`` is drawn for all N units at once (unit-major)
    from a stream that depends only on the seed, so every policy run against
    the same oracle seed sees identical draws regardless of what it selects.
    """

    def __init__(self, truth: GroundTruth, cfg: SimConfig, noise_seed):
        self.truth = truth
        self.cfg = cfg
        self._features = feature_matrix(cfg.T, cfg.time_scale)
        self._means = self._features @ truth.beta  # T x N
        rng = np.random.default_rng(noise_seed)
        self._noise = cfg.noise_sd * rng.standard_normal((cfg.T, truth.N))

    def features(self, t):
        return self._features[t]

    def expected(self, t) -> np.ndarray:
        return self._means[t]

    def sample(self, t) -> np.ndarray:
        return self._means[t] + self._noise[t]

    def __call__(self, t, unit=None):
        y = self.sample(t)
        return y if unit is None else y[unit]


def _canonical_models(rng, p, K, scale):
    Q = rng.standard_normal((p, K))
    if K <= p:
        Q, R = np.linalg.qr(Q)
        Q = Q * np.sign(np.diag(R))
    else:
        Q = Q / np.linalg.norm(Q, axis=0)
    return scale * Q


def simulate_population(cfg: SimConfig):
    """Draw a ground-truth population and its outcome oracle.

    Returns ``(GroundTruth, OutcomeOracle)``.  Canonical models are random
    normal columns, orthonormalised when ``K_true <= p`` (unit-normalised
    otherwise) and scaled by ``q_scale``.
    """
    truth_seq, noise_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    rng = np.random.default_rng(truth_seq)
    K, N = cfg.K_true, cfg.N
    if K != 3:
        logger.info("K_true=%d: using %d axis-dominant mixture components", K, K)
    Q = _canonical_models(rng, cfg.p, K, cfg.q_scale)
    priors = np.full(K, 1.0 / K) if cfg.priors is None else np.asarray(cfg.priors, dtype=float)
    labels = rng.choice(K, size=N, p=priors)
    sd = np.ones((N, K))
    sd[np.arange(N), labels] = math.sqrt(cfg.sigma2)
    C = (sd * rng.standard_normal((N, K))).T
    truth = GroundTruth(Q_true=Q, C_true=C, beta=Q @ C, group_label=labels)
    return truth, OutcomeOracle(truth, cfg, noise_seq)


def similarity_inner(C, normalized=False, clip_negative=True) -> np.ndarray:
    """Similarity ``w_ij = c_i' c_j`` between membership columns of ``C``.

    With ``normalized`` each inner product is divided by the two norms
    (cosine similarity).  Negative similarities are set to zero unless
    ``clip_negative`` is False, which keeps the Laplacian positive
    semidefinite.
    """
    C = np.asarray(C, dtype=float)
    W = C.T @ C
    if normalized:
        norms = np.linalg.norm(C, axis=0)
        norms[norms == 0] = 1.0
        W = W / np.outer(norms, norms)
    if clip_negative:
        W = np.maximum(W, 0.0)
    W = 0.5 * (W + W.T)
    np.fill_diagonal(W, 0.0)
    return W


def similarity_heat_kernel(risk_factors, bandwidth=None, standardize=True) -> np.ndarray:
    """Heat-kernel similarity ``exp(-||z_i - z_j||^2 / bandwidth)``.

    Columns are standardised first unless ``standardize`` is False.
    ``bandwidth=None`` picks the median off-diagonal squared distance.
    """
    Z = np.asarray(risk_factors, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    if standardize:
        sd = Z.std(axis=0)
        sd[sd == 0] = 1.0
        Z = (Z - Z.mean(axis=0)) / sd
    d2 = cdist(Z, Z, "sqeuclidean")
    if bandwidth is None:
        off = d2[~np.eye(len(Z), dtype=bool)]
        med = float(np.median(off)) if off.size else 0.0
        bandwidth = med if med > 0 else 1.0
    if bandwidth <= 0:
        raise ConfigError("heat-kernel bandwidth must be positive")
    W = np.exp(-d2 / bandwidth)
    np.fill_diagonal(W, 0.0)
    return W


# -- replay -------------------------------------------------------------------


@dataclass
class ReplayDataset:
    """Longitudinal outcomes resampled onto an equally spaced cycle grid.

    ``outcomes`` is T x N; ``cycle_times`` holds the timestamp (months) of
    each cycle.  ``extrapolated`` lists units whose series was carried flat
    beyond their own observed range.
    """

    unit_ids: list
    times: list  # per unit, observed timestamps
    values: list  # per unit, observed outcomes
    cycle_times: np.ndarray
    outcomes: np.ndarray
    risk_factors: np.ndarray | None = None
    risk_names: list = field(default_factory=list)
    extrapolated: list = field(default_factory=list)
    dropped: list = field(default_factory=list)

    @property
    def N(self):
        return len(self.unit_ids)

    @property
    def T(self):
        return len(self.cycle_times)

    def features(self, t):
        T = self.T
        tau = t / (T - 1) if T > 1 else 0.0
        return np.array([1.0, tau, tau * tau])


def _parse_float(text, path, line, column):
    try:
        value = float(text)
    except ValueError:
        raise ReplayFormatError(f"column {column!r}: {text!r} is not a number", path, line) from None
    if not math.isfinite(value):
        raise ReplayFormatError(f"column {column!r}: non-finite value", path, line)
    return value


def read_outcomes_csv(path):
    """Parse a ``unit_id,timestamp_months,outcome`` file.

    Returns an insertion-ordered dict ``unit_id -> list[(time, outcome|None)]``.
    """
    path = Path(path)
    series = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ReplayFormatError("file is empty", path, 1) from None
        if tuple(h.strip() for h in header) != REPLAY_HEADER:
            raise ReplayFormatError(f"expected header {','.join(REPLAY_HEADER)}", path, 1)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ReplayFormatError(f"expected 3 fields, got {len(row)}", path, line)
            uid = row[0].strip()
            if not uid:
                raise ReplayFormatError("empty unit_id", path, line)
            t = _parse_float(row[1].strip(), path, line, "timestamp_months")
            raw = row[2].strip()
            y = None if raw == "" else _parse_float(raw, path, line, "outcome")
            series.setdefault(uid, []).append((t, y))
    if not series:
        raise ReplayFormatError("no data rows", path)
    return series


def read_risks_csv(path):
    """Parse a ``unit_id,f1..fk`` file into ``(names, {unit_id: vector})``."""
    path = Path(path)
    rows = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ReplayFormatError("file is empty", path, 1) from None
        if len(header) < 2 or header[0] != "unit_id":
            raise ReplayFormatError("expected header unit_id,f1,...,fk", path, 1)
        names = header[1:]
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ReplayFormatError(
                    f"expected {len(header)} fields, got {len(row)}", path, line
                )
            rows[row[0].strip()] = np.array(
                [_parse_float(c.strip(), path, line, n) for c, n in zip(row[1:], names)]
            )
    return names, rows


def load_replay(outcomes_path, T, risks_path=None) -> ReplayDataset:
    """Load, interpolate and resample a longitudinal outcome file.

    Missing outcomes are filled by linear interpolation between the nearest
    observed timestamps; the global observed span is split into ``T`` equally
    spaced cycles.  Outside a unit's own observed range its nearest observed
    value is carried flat.  Units with fewer than two observations are
    dropped with a warning.
    """
    if T < 1:
        raise ConfigError("T must be at least 1")
    series = read_outcomes_csv(outcomes_path)
    unit_ids, times, values, dropped = [], [], [], []
    for uid, rows in series.items():
        obs = sorted((t, y) for t, y in rows if y is not None)
        ts = np.array([t for t, _ in obs])
        if len(np.unique(ts)) < 2:
            dropped.append(uid)
            continue
        if len(np.unique(ts)) != len(ts):
            raise ReplayFormatError(f"unit {uid!r} has duplicate timestamps", outcomes_path)
        unit_ids.append(uid)
        times.append(ts)
        values.append(np.array([y for _, y in obs]))
    if dropped:
        logger.warning("dropping %d unit(s) with fewer than 2 observations: %s",
                       len(dropped), ", ".join(dropped[:10]))
    if not unit_ids:
        raise ReplayFormatError("no unit has at least two observed outcomes", outcomes_path)

    t0 = min(ts[0] for ts in times)
    t1 = max(ts[-1] for ts in times)
    cycle_times = np.linspace(t0, t1, T) if T > 1 else np.array([t0])
    outcomes = np.empty((T, len(unit_ids)))
    extrapolated = []
    for j, (ts, ys) in enumerate(zip(times, values)):
        outcomes[:, j] = np.interp(cycle_times, ts, ys)
        if ts[0] > t0 or ts[-1] < t1:
            extrapolated.append(unit_ids[j])
    if extrapolated:
        logger.warning("%d unit(s) carried flat outside their observed range", len(extrapolated))

    risk_factors, names = None, []
    if risks_path is not None:
        names, rows = read_risks_csv(risks_path)
        missing = [u for u in unit_ids if u not in rows]
        if missing:
            raise ReplayFormatError(f"no risk factors for units {missing[:5]}", risks_path)
        risk_factors = np.vstack([rows[u] for u in unit_ids])

    return ReplayDataset(
        unit_ids=unit_ids,
        times=times,
        values=values,
        cycle_times=cycle_times,
        outcomes=outcomes,
        risk_factors=risk_factors,
        risk_names=names,
        extrapolated=extrapolated,
        dropped=dropped,
    )


def write_synthetic_replay(outcomes_path, risks_path, n_units=50, seed=0,
                           visits=(0, 12, 24, 36, 48, 60), missing_rate=0.1, n_risks=4):
    """Write an MMSE-shaped synthetic replay pair of CSV files.

    Three latent decline groups drive both the quadratic MMSE trajectories
    (clipped to 0..30) and the risk factors.  Baseline and the last visit are
    always observed; other visits are blanked with probability
    ``missing_rate``.
    """
    rng = np.random.default_rng(seed)
    group = rng.integers(0, 3, size=n_units)
    base = np.array([29.0, 27.0, 25.0])[group] + rng.normal(0, 0.7, n_units)
    slope = np.array([-0.01, -0.05, -0.12])[group] + rng.normal(0, 0.01, n_units)
    curve = np.array([0.0, -0.0004, -0.0012])[group] + rng.normal(0, 0.0002, n_units)
    centers = rng.normal(0, 1.5, size=(3, n_risks))
    risks = centers[group] + rng.normal(0, 0.5, size=(n_units, n_risks))
    visits = np.asarray(visits, dtype=float)

    outcomes_path, risks_path = Path(outcomes_path), Path(risks_path)
    with outcomes_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(REPLAY_HEADER)
        for i in range(n_units):
            for k, t in enumerate(visits):
                y = base[i] + slope[i] * t + curve[i] * t * t + rng.normal(0, 0.5)
                y = float(np.clip(np.round(y, 1), 0, 30))
                interior = 0 < k < len(visits) - 1
                blank = interior and rng.random() < missing_rate
                w.writerow([f"U{i:04d}", f"{t:g}", "" if blank else f"{y:g}"])
    with risks_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["unit_id"] + [f"f{j + 1}" for j in range(n_risks)])
        for i in range(n_units):
            w.writerow([f"U{i:04d}"] + [f"{v:.6f}" for v in risks[i]])
    return group
