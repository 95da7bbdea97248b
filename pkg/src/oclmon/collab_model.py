"""Collaborative regression model and its online alternating least squares fit.

Every unit ``i`` has coefficients ``beta_i = Q @ c_i`` where ``Q`` (p x K)
holds the canonical models and ``c_i`` (column ``i`` of the K x N matrix
``C``) is the unit's membership vector.  The fit minimises::

    sum_(t,i monitored) (x_ti' Q c_i - y_ti)^2
        + eta1 ||Q||_F^2 + eta2 ||C||_F^2 + lam tr(C E C')

with ``E`` the graph Laplacian of a unit-similarity matrix.

Vector layouts used throughout (all other code relies on them):

* ``q = vec_q(Q) = Q.ravel()`` so that ``q[j*K + k] = Q[j, k]``.  With this
  ordering the design matrix ``kron(X_t, I_K)`` (Kp x NK) maps ``vec(C)`` to
  the per-unit predictions.
* ``vec_c(C)`` stacks the membership columns ``[c_1; ...; c_N]`` (length NK).
* ``c_tilde = kron(F, I_K)^{1/2} vec_c(C)`` with ``F = I_N + (lam/eta2) E``.
  Then ``eta2 ||c_tilde||^2 = eta2 ||C||_F^2 + lam tr(C E C')``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg

from .errors import ConfigError, DimensionError, IllConditionedError

logger = logging.getLogger(__name__)

#: Condition-number estimate above which a normal-equations matrix is rejected.
MAX_CONDITION = 1e12
#: Eigenvalue floor used when taking square roots of ``F``.
EIG_FLOOR = 1e-12


def vec_q(Q):
    return np.asarray(Q, dtype=float).ravel()


def unvec_q(q, p, K):
    return np.asarray(q, dtype=float).reshape(p, K)


def vec_c(C):
    return np.asarray(C, dtype=float).T.ravel()


def unvec_c(v, K, N):
    return np.asarray(v, dtype=float).reshape(N, K).T


@dataclass
class PopulationModel:
    """Canonical models ``Q`` (p x K) and memberships ``C`` (K x N)."""

    Q: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        if self.Q.ndim != 2 or self.C.ndim != 2:
            raise DimensionError("Q and C must be 2-D")
        if self.Q.shape[1] != self.C.shape[0]:
            raise DimensionError(
                f"Q has {self.Q.shape[1]} columns but C has {self.C.shape[0]} rows"
            )
        if min(self.Q.shape[0], self.Q.shape[1], self.C.shape[1]) < 1:
            raise DimensionError("p, K and N must all be at least 1")

    @property
    def p(self) -> int:
        return self.Q.shape[0]

    @property
    def K(self) -> int:
        return self.Q.shape[1]

    @property
    def N(self) -> int:
        return self.C.shape[1]

    def coefficients(self) -> np.ndarray:
        """Individual coefficient vectors ``beta_i = Q c_i`` as a p x N matrix."""
        return self.Q @ self.C

    def predict(self, x, unit):
        return predict(self, x, unit)


def predict(model: PopulationModel, x, unit: int) -> float:
    """Predicted outcome ``x' Q c_unit`` for one unit."""
    x = np.asarray(x, dtype=float).ravel()
    if not 0 <= unit < model.N:
        raise IndexError(f"unit {unit} out of range for N={model.N}")
    if x.shape != (model.p,):
        raise DimensionError(f"feature vector has length {x.size}, expected {model.p}")
    if not np.all(np.isfinite(x)):
        raise ValueError("feature vector contains non-finite values")
    return float(x @ model.Q @ model.C[:, unit])


def build_laplacian(W) -> np.ndarray:
    """Graph Laplacian ``diag(W 1) - W`` of a similarity matrix.

    Asymmetric input is symmetrised and a non-zero diagonal is dropped, both
    with a warning.
    """
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise DimensionError(f"similarity matrix must be square, got shape {W.shape}")
    if not np.all(np.isfinite(W)):
        raise ValueError("similarity matrix contains non-finite entries")
    if not np.allclose(W, W.T, rtol=0, atol=1e-12):
        warnings.warn("similarity matrix is not symmetric; using (W + W') / 2", stacklevel=2)
        W = 0.5 * (W + W.T)
    if np.any(np.diag(W) != 0):
        warnings.warn("similarity matrix has a non-zero diagonal; zeroing it", stacklevel=2)
        W = W.copy()
        np.fill_diagonal(W, 0.0)
    return np.diag(W.sum(axis=1)) - W


@dataclass(frozen=True)
class SimilarityGraph:
    W: np.ndarray
    E: np.ndarray

    @classmethod
    def from_weights(cls, W):
        E = build_laplacian(W)
        W = np.diag(np.diag(E)) - E
        return cls(W=W, E=E)

    @classmethod
    def empty(cls, N):
        Z = np.zeros((N, N))
        return cls(W=Z, E=Z.copy())

    @property
    def N(self) -> int:
        return self.W.shape[0]


class Regularizer:
    """Penalty weights and the membership-side metric ``F = I + (lam/eta2) E``.

    Parameters
    ----------
    eta1, eta2 : float
        Ridge weights on ``Q`` and ``C``.
    lam : float
        Weight of the Laplacian smoothness term ``tr(C E C')``.
    laplacian : array (N, N)
        Graph Laplacian ``E``.
    K : int
        Number of canonical models; sets the size of the Kronecker factors.
    """

    def __init__(self, eta1, eta2, lam, laplacian, K):
        if eta1 < 0 or eta2 < 0 or lam < 0:
            raise ConfigError("eta1, eta2 and lam must be non-negative")
        E = np.asarray(laplacian, dtype=float)
        if E.ndim != 2 or E.shape[0] != E.shape[1]:
            raise DimensionError("laplacian must be square")
        if lam > 0 and eta2 == 0:
            raise ConfigError("lam > 0 requires eta2 > 0 (F = I + (lam/eta2) E)")
        self.eta1 = float(eta1)
        self.eta2 = float(eta2)
        self.lam = float(lam)
        self.E = E
        self.K = int(K)
        self.N = E.shape[0]

        scale = self.lam / self.eta2 if self.lam > 0 else 0.0
        F = np.eye(self.N) + scale * E
        self.F = 0.5 * (F + F.T)
        if scale == 0.0:
            self.F_half = np.eye(self.N)
            self.F_half_inv = np.eye(self.N)
        else:
            w, V = linalg.eigh(self.F)
            w = np.maximum(w, EIG_FLOOR)
            sw = np.sqrt(w)
            self.F_half = (V * sw) @ V.T
            self.F_half_inv = (V / sw) @ V.T
        self.identity_metric = scale == 0.0

    @classmethod
    def from_graph(cls, graph: SimilarityGraph, K, eta1=0.3, eta2=0.3, lam=0.01):
        return cls(eta1, eta2, lam, graph.E, K)

    @cached_property
    def F_kron(self):
        return np.kron(self.F, np.eye(self.K))

    @cached_property
    def F_kron_half(self):
        return np.kron(self.F_half, np.eye(self.K))

    @cached_property
    def F_kron_half_inv(self):
        return np.kron(self.F_half_inv, np.eye(self.K))

    def inverse_trace(self) -> float:
        """``tr(kron(F, I_K)^{-1})``, the per-cycle term of the regret bound."""
        return self.K * float(np.trace(linalg.inv(self.F)))

    def to_tilde(self, C) -> np.ndarray:
        """``c_tilde = kron(F, I_K)^{1/2} vec(C)``."""
        C = np.asarray(C, dtype=float)
        return (self.F_half @ C.T).ravel()

    def from_tilde(self, c_tilde) -> np.ndarray:
        """Membership matrix ``C`` (K x N) recovered from ``c_tilde``."""
        Ct = np.asarray(c_tilde, dtype=float).reshape(self.N, self.K)
        return (self.F_half_inv @ Ct).T

    def penalty(self, model: PopulationModel) -> float:
        Q, C = model.Q, model.C
        return (
            self.eta1 * float(np.sum(Q * Q))
            + self.eta2 * float(np.sum(C * C))
            + self.lam * float(np.trace(C @ self.E @ C.T))
        )


class History:
    """Append-only log of monitored ``(cycle, unit, x, y)`` records."""

    def __init__(self, p, N):
        self.p = int(p)
        self.N = int(N)
        # per-unit moments sum x x', sum x y, sum y^2
        self.xx = np.zeros((self.N, self.p, self.p))
        self.xy = np.zeros((self.N, self.p))
        self.yy = np.zeros(self.N)
        self._cycles = []
        self._units = []
        self._X = []
        self._y = []
        self._cache = None

    def append(self, cycle, units, X, y):
        units = np.asarray(units, dtype=int).ravel()
        X = np.asarray(X, dtype=float).reshape(len(units), self.p)
        y = np.asarray(y, dtype=float).ravel()
        if len(y) != len(units):
            raise DimensionError("units and outcomes differ in length")
        if len(units) == 0:
            return
        self._cycles.append(np.full(len(units), cycle, dtype=int))
        self._units.append(units.copy())
        self._X.append(X.copy())
        self._y.append(y.copy())
        np.add.at(self.xx, units, X[:, :, None] * X[:, None, :])
        np.add.at(self.xy, units, X * y[:, None])
        np.add.at(self.yy, units, y * y)
        self._cache = None

    def __len__(self):
        return sum(len(u) for u in self._units)

    def arrays(self):
        """``(cycles, units, X, y)`` as concatenated arrays."""
        if self._cache is None:
            if not self._units:
                self._cache = (
                    np.zeros(0, dtype=int),
                    np.zeros(0, dtype=int),
                    np.zeros((0, self.p)),
                    np.zeros(0),
                )
            else:
                self._cache = (
                    np.concatenate(self._cycles),
                    np.concatenate(self._units),
                    np.concatenate(self._X),
                    np.concatenate(self._y),
                )
        return self._cache


@dataclass
class SufficientStats:
    """Online normal equations for both ALS half-steps.

    ``A, b`` belong to the canonical side (size Kp), ``D, d`` to the
    membership side (size NK, in ``c_tilde`` coordinates).
    """

    A: np.ndarray
    b: np.ndarray
    D: np.ndarray
    d: np.ndarray
    q_hat: np.ndarray
    c_tilde_hat: np.ndarray
    history: History
    p: int
    K: int
    N: int
    _A_cho: tuple | None = field(default=None, repr=False)
    _D_cho: tuple | None = field(default=None, repr=False)

    @classmethod
    def initial(cls, reg: Regularizer, p, Q0=None, C0=None):
        K, N = reg.K, reg.N
        if Q0 is None:
            Q0 = np.zeros((p, K))
        if C0 is None:
            C0 = np.zeros((K, N))
        model = PopulationModel(Q0, C0)
        if (model.p, model.K, model.N) != (p, K, N):
            raise DimensionError("initial Q/C do not match (p, K, N)")
        return cls(
            A=reg.eta1 * np.eye(K * p),
            b=np.zeros(K * p),
            D=reg.eta2 * np.eye(N * K),
            d=np.zeros(N * K),
            q_hat=vec_q(model.Q),
            c_tilde_hat=reg.to_tilde(model.C),
            history=History(p, N),
            p=p,
            K=K,
            N=N,
        )

    @property
    def Q(self):
        return unvec_q(self.q_hat, self.p, self.K)

    def model(self, reg: Regularizer) -> PopulationModel:
        return PopulationModel(self.Q, reg.from_tilde(self.c_tilde_hat))

    def A_factor(self):
        if self._A_cho is None:
            self._A_cho = _spd_factor(self.A, "eta1")
        return self._A_cho

    def D_factor(self):
        if self._D_cho is None:
            self._D_cho = _spd_factor(self.D, "eta2")
        return self._D_cho

    def invalidate(self):
        self._A_cho = None
        self._D_cho = None


# -- Table-1 style transforms -------------------------------------------------


@dataclass(frozen=True)
class TransformedFeatures:
    """Dense forms of the reshaped design matrices for one cycle.

    These are only needed for checking identities on small problems; the
    estimator works with the equivalent per-unit blocks directly.
    """

    X_big: np.ndarray  # Kp x NK, kron(X_t, I_K)
    x_tilde: np.ndarray  # Np x N, column i holds x_i in block i
    C_diag: np.ndarray  # NK x N, block diagonal of the membership columns
    Q_tilde: np.ndarray  # Np x NK, kron(I_N, Q) kron(F, I_K)^{-1/2}

    def unit_design(self, unit, K):
        """``X_{t,i}``: the columns of ``X_big`` belonging to one unit."""
        X = np.zeros_like(self.X_big)
        sl = slice(unit * K, (unit + 1) * K)
        X[:, sl] = self.X_big[:, sl]
        return X


def transformed_features(X, Q, C, reg: Regularizer, monitored=None) -> TransformedFeatures:
    """Build the dense transformed matrices for features ``X`` (N x p).

    Rows of unmonitored units are zeroed first (``monitored`` is a boolean
    mask; all units are kept when it is None).
    """
    X = np.asarray(X, dtype=float)
    N, p = X.shape
    K = reg.K
    if monitored is not None:
        X = X * np.asarray(monitored, dtype=bool)[:, None]
    bold_X = X.T  # p x N
    X_big = np.kron(bold_X, np.eye(K))
    x_tilde = np.zeros((N * p, N))
    C_diag = np.zeros((N * K, N))
    for i in range(N):
        x_tilde[i * p:(i + 1) * p, i] = X[i]
        C_diag[i * K:(i + 1) * K, i] = C[:, i]
    Q_tilde = np.kron(np.eye(N), Q) @ reg.F_kron_half_inv
    return TransformedFeatures(X_big=X_big, x_tilde=x_tilde, C_diag=C_diag, Q_tilde=Q_tilde)


def canonical_design(X, C_units):
    """Rows ``kron(x_i, c_i)`` for each (feature row, membership column) pair.

    ``X`` is (m, p) and ``C_units`` is (K, m); the result is (m, Kp) and its
    inner product with ``vec_q(Q)`` is the prediction ``x_i' Q c_i``.
    """
    X = np.asarray(X, dtype=float)
    C_units = np.asarray(C_units, dtype=float)
    m, p = X.shape
    return (X[:, :, None] * C_units.T[:, None, :]).reshape(m, p * C_units.shape[0])


def membership_design(X, units, Q, reg: Regularizer):
    """Columns ``Q_tilde' x_tilde_i`` (NK x m) for the given units.

    Equal to ``kron(F^{-1/2}[:, i], Q' x_i)``; its inner product with
    ``c_tilde`` is the prediction ``x_i' Q c_i``.
    """
    X = np.asarray(X, dtype=float)
    units = np.asarray(units, dtype=int)
    H = X @ Q  # m x K
    if reg.identity_metric:
        G = np.zeros((reg.N, reg.K, len(units)))
        G[units, :, np.arange(len(units))] = H
    else:
        G = reg.F_half_inv[:, units][:, None, :] * H.T[None, :, :]
    return G.reshape(reg.N * reg.K, len(units))


# -- solves ------------------------------------------------------------------


def _spd_factor(M, parameter):
    try:
        cho = linalg.cho_factor(M, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise IllConditionedError(
            f"matrix is not positive definite; increase {parameter}", parameter
        ) from exc
    diag = np.abs(np.diag(cho[0]))
    if not np.all(np.isfinite(diag)) or diag.min() == 0.0:
        raise IllConditionedError(
            f"matrix is singular; increase {parameter}", parameter, np.inf
        )
    cond = (diag.max() / diag.min()) ** 2
    if cond > MAX_CONDITION:
        raise IllConditionedError(
            f"matrix is ill-conditioned (estimate {cond:.3g}); increase {parameter}",
            parameter,
            cond,
        )
    return cho


def solve_canonical(stats: SufficientStats) -> np.ndarray:
    """Solve ``A q = b`` and store the result as ``stats.q_hat``."""
    stats._A_cho = _spd_factor(stats.A, "eta1")
    stats.q_hat = linalg.cho_solve(stats._A_cho, stats.b, check_finite=False)
    return stats.q_hat


def solve_membership(stats: SufficientStats, reg: Regularizer):
    """Solve ``D c_tilde = d``; returns ``(c_tilde, C)``."""
    stats._D_cho = _spd_factor(stats.D, "eta2")
    stats.c_tilde_hat = linalg.cho_solve(stats._D_cho, stats.d, check_finite=False)
    return stats.c_tilde_hat, reg.from_tilde(stats.c_tilde_hat)


def accumulate_observation(stats: SufficientStats, reg: Regularizer, model: PopulationModel,
                           unit, x, y, cycle=0):
    """Add one monitored observation to all four statistics.

    ``model`` is the parameter snapshot used to linearise each half-step.
    The observation is also appended to the history.
    """
    x = np.asarray(x, dtype=float).ravel()
    if (model.p, model.K, model.N) != (stats.p, stats.K, stats.N):
        raise DimensionError("model snapshot does not match the statistics")
    if x.shape != (stats.p,):
        raise DimensionError(f"feature vector has length {x.size}, expected {stats.p}")
    if not (np.all(np.isfinite(x)) and np.isfinite(y)):
        raise ValueError("observation contains non-finite values")
    z = np.kron(x, model.C[:, unit])
    g = membership_design(x[None, :], [unit], model.Q, reg)[:, 0]
    stats.A += np.outer(z, z)
    stats.b += z * y
    stats.D += np.outer(g, g)
    stats.d += g * y
    stats.invalidate()
    stats.history.append(cycle, [unit], x[None, :], [y])
    return stats


def refit_stats(stats: SufficientStats, reg: Regularizer, model: PopulationModel, side):
    """Rebuild one side's statistics over the full history using ``model``.

    Uses the per-unit moments kept by the history, so the cost does not
    grow with the number of records.
    """
    h = stats.history
    if side == "canonical":
        C = model.C
        A = np.einsum("ujl,ku,mu->jklm", h.xx, C, C).reshape(stats.p * stats.K, -1)
        stats.A = reg.eta1 * np.eye(stats.K * stats.p) + A
        stats.b = (h.xy.T @ C.T).ravel()
        stats._A_cho = None
    elif side == "membership":
        Q = model.Q
        B = np.einsum("jk,ujl,lm->ukm", Q, h.xx, Q)
        H = h.xy @ Q
        NK = stats.N * stats.K
        if reg.identity_metric:
            D = linalg.block_diag(*B) if stats.N > 0 else np.zeros((0, 0))
            d = H.ravel()
        else:
            Fh = reg.F_half_inv
            # blockdiag(B) @ kron(Fh, I_K), then left-multiply by kron(Fh, I_K)
            right = (B[:, :, None, :] * Fh[:, None, :, None]).reshape(NK, NK)
            D = reg.F_kron_half_inv @ right
            D = 0.5 * (D + D.T)
            d = (Fh @ H).ravel()
        stats.D = reg.eta2 * np.eye(NK) + D
        stats.d = d
        stats._D_cho = None
    else:
        raise ValueError(f"unknown side {side!r}")
    return stats


def objective(model: PopulationModel, history: History, reg: Regularizer) -> float:
    """Penalised squared error over all monitored records."""
    _, units, X, y = history.arrays()
    if model.N != reg.N or model.K != reg.K:
        raise DimensionError("model does not match the regulariser")
    if X.shape[1] != model.p:
        raise DimensionError("history feature dimension does not match Q")
    resid = np.einsum("mk,km->m", X @ model.Q, model.C[:, units]) - y
    return float(resid @ resid) + reg.penalty(model)


def als_fit(stats: SufficientStats, reg: Regularizer, units, X, y, *, cycle=None,
            max_inner_iters=2, tol=0.0, mode="incremental", update_membership=True,
            trace=None) -> PopulationModel:
    """One cycle of alternating least squares on the newly monitored units.

    Each inner iteration solves the canonical half-step with memberships
    fixed, then the membership half-step with the fresh canonical models.

    In ``"incremental"`` mode the statistics carried over from earlier
    cycles are kept as they are and only this cycle's contribution is
    re-linearised at every inner iteration.  ``"refit"`` rebuilds both sides
    from the full history each time, which makes every half-step an exact
    block minimisation of the objective.

    Iteration stops after ``max_inner_iters`` or, when ``tol > 0``, once the
    relative decrease of the objective drops below ``tol``.  When ``trace`` is
    a list the objective after each inner iteration is appended to it.
    """
    units = np.asarray(units, dtype=int).ravel()
    X = np.asarray(X, dtype=float).reshape(len(units), stats.p)
    y = np.asarray(y, dtype=float).ravel()
    if mode not in ("incremental", "refit"):
        raise ValueError(f"unknown ALS mode {mode!r}")
    if len(units) == 0:
        return stats.model(reg)
    if np.any(units < 0) or np.any(units >= stats.N):
        raise IndexError("unit index out of range")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("observations contain non-finite values")
    if cycle is None:
        cycle = len(stats.history._cycles)
    stats.history.append(cycle, units, X, y)

    A0, b0, D0, d0 = stats.A, stats.b, stats.D, stats.d
    track = tol > 0 or trace is not None
    prev = objective(stats.model(reg), stats.history, reg) if tol > 0 else None
    model = stats.model(reg)
    for _ in range(max(1, int(max_inner_iters))):
        if mode == "refit":
            refit_stats(stats, reg, model, "canonical")
        else:
            Z = canonical_design(X, model.C[:, units])
            stats.A = A0 + Z.T @ Z
            stats.b = b0 + Z.T @ y
        solve_canonical(stats)
        Q = stats.Q
        if update_membership:
            if mode == "refit":
                refit_stats(stats, reg, PopulationModel(Q, model.C), "membership")
            else:
                G = membership_design(X, units, Q, reg)
                stats.D = D0 + G @ G.T
                stats.d = d0 + G @ y
            _, C = solve_membership(stats, reg)
        else:
            C = model.C
        model = PopulationModel(Q, C)
        if track:
            value = objective(model, stats.history, reg)
            if trace is not None:
                trace.append(value)
            if tol > 0:
                if prev is not None and prev - value <= tol * max(abs(prev), 1e-300):
                    break
                prev = value
    return model


# -- initialisation -----------------------------------------------------------


def lloyd_kmeans(points, centroids, max_iter=100):
    """Lloyd iterations from the given centroids.

    Ties in the assignment step go to the lowest centroid index; an empty
    cluster keeps its previous centroid.  Returns ``(labels, centroids)``.
    """
    P = np.asarray(points, dtype=float)
    cent = np.array(centroids, dtype=float)
    labels = None
    for _ in range(max_iter):
        d2 = ((P[:, None, :] - cent[None, :, :]) ** 2).sum(axis=2)
        new = np.argmin(d2, axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for k in range(cent.shape[0]):
            members = P[labels == k]
            if len(members):
                cent[k] = members.mean(axis=0)
    return labels, cent


def kmeans(points, K, seed, max_iter=100):
    """Seeded k-means; initial centroids are ``K`` distinct random rows."""
    P = np.asarray(points, dtype=float)
    rng = np.random.default_rng(seed)
    init = rng.choice(P.shape[0], size=K, replace=False)
    return lloyd_kmeans(P, P[np.sort(init)], max_iter=max_iter)


@dataclass
class MembershipInit:
    C: np.ndarray
    Q: np.ndarray
    labels: np.ndarray
    degenerate: bool


def init_membership(W, K, seed, p=3, warmup=None, eta1=0.3) -> MembershipInit:
    """Initial memberships from k-means clustering of the rows of ``W``.

    Each unit gets the one-hot vector of its cluster, scaled by the mean
    off-diagonal similarity inside that cluster (1 when that is undefined or
    not positive).  ``warmup`` may be ``(units, X, y)``; then ``Q`` is one
    canonical half-step solved against it, otherwise zero.
    """
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise DimensionError(f"similarity matrix must be square, got shape {W.shape}")
    N = W.shape[0]
    if K < 1 or K > N:
        raise ConfigError(f"K={K} must lie in [1, N={N}]")
    Wc = 0.5 * (W + W.T)
    np.fill_diagonal(Wc, 0.0)

    degenerate = bool(np.all(Wc == Wc[0]))
    if degenerate:
        logger.warning("similarity rows are all equal; using cyclic one-hot memberships")
        labels = np.arange(N) % K
    else:
        labels, _ = kmeans(Wc, K, seed)

    C = np.zeros((K, N))
    for k in range(K):
        members = np.flatnonzero(labels == k)
        scale = 1.0
        if len(members) > 1:
            block = Wc[np.ix_(members, members)]
            m = block.sum() / (len(members) * (len(members) - 1))
            if np.isfinite(m) and m > 0:
                scale = float(m)
        C[k, members] = scale

    Q = np.zeros((p, K))
    if warmup is not None:
        w_units, w_X, w_y = warmup
        w_units = np.asarray(w_units, dtype=int)
        Z = canonical_design(np.asarray(w_X, dtype=float), C[:, w_units])
        A = eta1 * np.eye(K * p) + Z.T @ Z
        cho = _spd_factor(A, "eta1")
        Q = unvec_q(linalg.cho_solve(cho, Z.T @ np.asarray(w_y, dtype=float)), p, K)
    return MembershipInit(C=C, Q=Q, labels=np.asarray(labels), degenerate=degenerate)
