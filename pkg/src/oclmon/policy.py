"""Arm-selection policies and their confidence-width diagnostics.

All policies share one protocol: ``scores(X)`` rates every unit given the
cycle's feature matrix ``X`` (N x p), ``select(X, M)`` turns scores into a
capacity-``M`` selection mask, and ``update(units, X_sel, y_sel)`` feeds back
the outcomes of the monitored units only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .collab_model import (
    PopulationModel,
    Regularizer,
    SimilarityGraph,
    SufficientStats,
    _spd_factor,
    als_fit,
    canonical_design,
    init_membership,
    membership_design,
)
from .errors import ConfigError


@dataclass(frozen=True)
class ExplorationParams:
    """Width multipliers for the two uncertainty terms of the CL-UCB score.

    ``mode="fixed"`` uses ``alpha_q`` and ``alpha_c`` as given;
    ``mode="lemma1"`` recomputes both every cycle from
    :func:`lemma1_width_q` / :func:`lemma1_width_c` at confidence ``delta``.
    """

    alpha_q: float = 1.0
    alpha_c: float = 1.0
    delta: float = 0.1
    mode: str = "fixed"

    def __post_init__(self):
        if self.alpha_q < 0 or self.alpha_c < 0:
            raise ConfigError("exploration multipliers must be non-negative")
        if not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")
        if self.mode not in ("fixed", "lemma1"):
            raise ConfigError(f"unknown exploration mode {self.mode!r}")


@dataclass(frozen=True)
class RegretBoundParams:
    """Norm bounds and convergence constants entering the confidence widths.

    ``S`` bounds the spectral norm of the per-cycle design, ``L`` the norm of
    ``vec(Q)``, ``P`` the spectral norm of the membership design.  ``v1, v2``
    are the assumed q-linear rates of the two ALS half-steps and ``eps1,
    eps2`` their slacks.  ``m`` is the per-cycle selection size.
    """

    S: float
    L: float
    P: float
    v1: float = 0.5
    v2: float = 0.5
    eps1: float = 0.0
    eps2: float = 0.0
    m: int = 1

    def __post_init__(self):
        if min(self.S, self.L, self.P, self.v1, self.v2, self.m) <= 0:
            raise ConfigError("S, L, P, v1, v2 and m must be positive")
        if self.eps1 < 0 or self.eps2 < 0:
            raise ConfigError("eps1 and eps2 must be non-negative")
        if self.v1 + self.eps1 >= 1 or self.v2 + self.eps2 >= 1:
            raise ConfigError("v + eps must be below 1 on both sides")


def _geometric(v, t):
    # v (1 - v^t) / (1 - v)
    return v * (1.0 - v ** t) / (1.0 - v)


def lemma1_width_q(t, K, p, eta1, bounds: RegretBoundParams, delta=0.1) -> float:
    """Confidence radius of the canonical-model estimate after ``t`` cycles."""
    Kp = K * p
    S, L, P = bounds.S, bounds.L, bounds.P
    ratio = (eta1 * Kp + t * S ** 2 * P ** 2) / (eta1 * Kp * delta)
    first = math.sqrt(max(Kp * math.log(ratio), 0.0))
    second = 2 * S * P * L / math.sqrt(eta1) * _geometric(bounds.v1 + bounds.eps1, t)
    return first + second + math.sqrt(eta1) * L


def lemma1_width_c(t, N, K, eta2, bounds: RegretBoundParams, trace_term, delta=0.1,
                   C=None, F=None) -> float:
    """Confidence radius of the membership estimate after ``t`` cycles.

    ``trace_term`` is the accumulated ``sum_t' tr(kron(F, I_K)^{-1})``
    (see :func:`laplacian_trace_term`).  The last term uses
    ``eta2 * sqrt(tr(C F C'))`` for the reference memberships ``C``; it is
    zero when ``C`` is omitted.
    """
    NK = N * K
    S, L, P = bounds.S, bounds.L, bounds.P
    ratio = (eta2 * NK + S ** 2 * L ** 2 * trace_term) / (eta2 * NK * delta)
    first = math.sqrt(max(NK * math.log(ratio), 0.0))
    second = 2 * S * P * L / math.sqrt(eta2) * _geometric(bounds.v2 + bounds.eps2, t)
    third = 0.0
    if C is not None:
        C = np.asarray(C, dtype=float)
        F = np.eye(C.shape[1]) if F is None else np.asarray(F, dtype=float)
        third = eta2 * math.sqrt(max(float(np.trace(C @ F @ C.T)), 0.0))
    return first + second + third


def laplacian_trace_term(reg: Regularizer, t) -> float:
    """``sum_{t'=1..t} sum_j (kron(F, I_K)^{-1})_jj = t * K * tr(F^{-1})``."""
    return t * reg.inverse_trace()


def theorem1_bound(T, N, K, p, eta1, eta2, bounds: RegretBoundParams, trace_term,
                   alpha_q, alpha_c) -> float:
    """Upper bound on the cumulative regret of CL-UCB after ``T`` cycles.

    The final geometric term uses ``v = max(v1 + eps1, v2 + eps2)`` and the
    selection size ``bounds.m``.
    """
    if T <= 0:
        return 0.0
    NK, Kp = N * K, K * p
    S, L, P = bounds.S, bounds.L, bounds.P
    mem = 2 * alpha_c * math.sqrt(
        2 * T * NK * math.log(1 + S ** 2 * L ** 2 * trace_term / (eta2 * NK))
    )
    can = 2 * alpha_q * math.sqrt(2 * T * Kp * math.log(1 + T * S ** 2 * P ** 2 / (eta1 * Kp)))
    v = max(bounds.v1 + bounds.eps1, bounds.v2 + bounds.eps2)
    tail = 2 * bounds.m * v ** 2 * (1 - v ** (2 * T)) / (1 - v ** 2)
    return mem + can + tail


def select_top_m(scores, M) -> np.ndarray:
    """Boolean mask of the ``M`` highest scores; ties go to the lower index."""
    scores = np.asarray(scores, dtype=float).ravel()
    N = scores.size
    if not 1 <= M <= N:
        raise ConfigError(f"capacity M={M} must lie in [1, {N}]")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    order = np.argsort(-scores, kind="stable")
    mask = np.zeros(N, dtype=bool)
    mask[order[:M]] = True
    return mask


def clucb_scores(stats: SufficientStats, reg: Regularizer, X, alpha_q, alpha_c,
                 return_parts=False):
    """CL-UCB scores of all units for the feature matrix ``X`` (N x p).

    The score is the predicted outcome plus ``alpha_c`` times the
    membership-side width and ``alpha_q`` times the canonical-side width.
    With ``return_parts`` the tuple ``(prediction, width_c, width_q)`` is
    returned instead.
    """
    X = np.asarray(X, dtype=float)
    N = reg.N
    Q = stats.Q
    C = reg.from_tilde(stats.c_tilde_hat)
    Z = canonical_design(X, C)
    pred = Z @ stats.q_hat
    SA = linalg.cho_solve(stats.A_factor(), Z.T, check_finite=False)
    width_q = np.sqrt(np.maximum(np.einsum("an,an->n", Z.T, SA), 0.0))
    G = membership_design(X, np.arange(N), Q, reg)
    SD = linalg.cho_solve(stats.D_factor(), G, check_finite=False)
    width_c = np.sqrt(np.maximum(np.einsum("an,an->n", G, SD), 0.0))
    if return_parts:
        return pred, width_c, width_q
    return pred + alpha_c * width_c + alpha_q * width_q


def clucb_score(stats, reg, x, unit, params: ExplorationParams) -> float:
    """CL-UCB score of a single unit with feature vector ``x``."""
    X = np.zeros((reg.N, stats.p))
    X[unit] = np.asarray(x, dtype=float).ravel()
    return float(clucb_scores(stats, reg, X, params.alpha_q, params.alpha_c)[unit])


class Policy:
    name = "policy"

    def scores(self, X):
        raise NotImplementedError

    def select(self, X, M):
        return select_top_m(self.scores(X), M)

    def update(self, units, X, y):
        raise NotImplementedError

    def coefficients(self):
        """Current per-unit coefficient estimates as a p x N matrix."""
        raise NotImplementedError


class CLUCB(Policy):
    """Collaborative-learning UCB.

    Parameters
    ----------
    N, p, K : int
        Population size, feature dimension and number of canonical models.
    graph : SimilarityGraph, optional
        Unit similarities.  Its weights seed the k-means initialisation and
        its Laplacian enters the membership penalty.
    eta1, eta2, lam : float
        Ridge weights and Laplacian weight.
    exploration : ExplorationParams
        Width multipliers (or ``mode="lemma1"`` for computed widths).
    bounds : RegretBoundParams, optional
        Required in ``lemma1`` mode.
    reference_C : array (K, N), optional
        Memberships used in the last term of the membership width in
        ``lemma1`` mode; defaults to the current estimate.
    inner_iters, tol, als_mode :
        Passed to :func:`~oclmon.collab_model.als_fit`.
    init : {"kmeans", "zeros"}
        Membership initialisation, ignored when ``C0`` is given.
    update_membership : bool
        Set False to keep memberships frozen at their initial value.
    """

    name = "clucb"

    def __init__(self, N, p, K, graph=None, *, eta1=0.3, eta2=0.3, lam=0.01,
                 exploration=None, bounds=None, reference_C=None, inner_iters=2,
                 tol=0.0, als_mode="incremental", init="kmeans", seed=0, C0=None,
                 Q0=None, update_membership=True):
        self.N, self.p, self.K = int(N), int(p), int(K)
        self.graph = graph if graph is not None else SimilarityGraph.empty(N)
        self.reg = Regularizer(eta1, eta2, lam, self.graph.E, K)
        self.exploration = exploration if exploration is not None else ExplorationParams()
        if self.exploration.mode == "lemma1" and bounds is None:
            raise ConfigError("lemma1 exploration needs RegretBoundParams")
        self.bounds = bounds
        self.reference_C = reference_C
        self.inner_iters = inner_iters
        self.tol = tol
        self.als_mode = als_mode
        self.update_membership = update_membership
        if C0 is None:
            if init == "kmeans":
                start = init_membership(self.graph.W, K, seed, p=p, eta1=eta1)
                C0 = start.C
                Q0 = start.Q if Q0 is None else Q0
            elif init == "zeros":
                C0 = np.zeros((K, N))
            else:
                raise ConfigError(f"unknown membership init {init!r}")
        self.stats = SufficientStats.initial(self.reg, p, Q0, C0)
        self.t = 0
        self._inv_trace = None

    def alphas(self):
        ex = self.exploration
        if ex.mode == "fixed":
            return ex.alpha_q, ex.alpha_c
        if self._inv_trace is None:
            self._inv_trace = self.reg.inverse_trace()
        C = self.reference_C
        if C is None:
            C = self.reg.from_tilde(self.stats.c_tilde_hat)
        aq = lemma1_width_q(self.t, self.K, self.p, self.reg.eta1, self.bounds, ex.delta)
        ac = lemma1_width_c(self.t, self.N, self.K, self.reg.eta2, self.bounds,
                            self.t * self._inv_trace, ex.delta, C=C, F=self.reg.F)
        return aq, ac

    def scores(self, X):
        aq, ac = self.alphas()
        return clucb_scores(self.stats, self.reg, X, aq, ac)

    def score_parts(self, X):
        return clucb_scores(self.stats, self.reg, X, 0.0, 0.0, return_parts=True)

    def update(self, units, X, y):
        als_fit(self.stats, self.reg, units, X, y, cycle=self.t,
                max_inner_iters=self.inner_iters, tol=self.tol, mode=self.als_mode,
                update_membership=self.update_membership)
        self.t += 1

    def model(self) -> PopulationModel:
        return self.stats.model(self.reg)

    def coefficients(self):
        return self.model().coefficients()


class LinUCB(Policy):
    """Disjoint LinUCB: an independent ridge regression per unit."""

    name = "linucb"

    def __init__(self, N, p, *, eta=0.3, alpha=1.0):
        if eta <= 0:
            raise ConfigError("LinUCB needs eta > 0")
        self.N, self.p = int(N), int(p)
        self.alpha = float(alpha)
        self.A = np.tile(eta * np.eye(p), (N, 1, 1))
        self.b = np.zeros((N, p))
        self.t = 0

    def theta(self):
        return np.linalg.solve(self.A, self.b[:, :, None])[:, :, 0]

    def scores(self, X):
        X = np.asarray(X, dtype=float)
        theta = self.theta()
        Ainv_x = np.linalg.solve(self.A, X[:, :, None])[:, :, 0]
        width = np.sqrt(np.maximum(np.einsum("np,np->n", X, Ainv_x), 0.0))
        return np.einsum("np,np->n", X, theta) + self.alpha * width

    def update(self, units, X, y):
        units = np.asarray(units, dtype=int)
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        np.add.at(self.A, units, X[:, :, None] * X[:, None, :])
        np.add.at(self.b, units, X * y[:, None])
        self.t += 1

    def coefficients(self):
        return self.theta().T


class GOBLin(Policy):
    """Graph-regularised LinUCB on the stacked Np-dimensional parameter.

    The prior precision is ``eta * I + lam * kron(E, I_p)``, i.e. the ridge
    penalty ``eta ||B||^2 + lam tr(B E B')`` on the p x N coefficient matrix.
    """

    name = "goblin"

    def __init__(self, N, p, graph=None, *, eta=0.3, lam=0.01, alpha=1.0):
        if eta <= 0:
            raise ConfigError("GOB.Lin needs eta > 0")
        self.N, self.p = int(N), int(p)
        self.alpha = float(alpha)
        graph = graph if graph is not None else SimilarityGraph.empty(N)
        self.A = eta * np.eye(N * p) + lam * np.kron(graph.E, np.eye(p))
        self.A = 0.5 * (self.A + self.A.T)
        self.b = np.zeros(N * p)
        self._cho = None
        self.t = 0

    def _factor(self):
        if self._cho is None:
            self._cho = _spd_factor(self.A, "eta")
        return self._cho

    def theta(self):
        return linalg.cho_solve(self._factor(), self.b, check_finite=False).reshape(self.N, self.p)

    def scores(self, X):
        X = np.asarray(X, dtype=float)
        N, p = self.N, self.p
        Phi = np.zeros((N, p, N))
        Phi[np.arange(N), :, np.arange(N)] = X
        Phi = Phi.reshape(N * p, N)
        S = linalg.cho_solve(self._factor(), Phi, check_finite=False).reshape(N, p, N)
        quad = np.einsum("np,npn->n", X, S)
        width = np.sqrt(np.maximum(quad, 0.0))
        return np.einsum("np,np->n", X, self.theta()) + self.alpha * width

    def update(self, units, X, y):
        units = np.asarray(units, dtype=int)
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        p = self.p
        Phi = np.zeros((self.N * p, len(units)))
        for col, (u, x) in enumerate(zip(units, X)):
            Phi[u * p:(u + 1) * p, col] = x
        self.A += Phi @ Phi.T
        self.b += Phi @ y
        self._cho = None
        self.t += 1

    def coefficients(self):
        return self.theta().T


POLICY_NAMES = ("clucb", "clucb_nosim", "goblin", "linucb")


def make_policy(name, N, p, K, graph, *, eta1=0.3, eta2=0.3, lam=0.01, alpha_q=1.0,
                alpha_c=1.0, alpha=1.0, inner_iters=2, seed=0, **extra) -> Policy:
    """Instantiate a registered policy by name.

    ``clucb_nosim`` is CL-UCB with the Laplacian weight forced to zero; it
    still uses the similarity graph for its k-means initialisation.
    """
    if name == "clucb" or name == "clucb_nosim":
        exploration = extra.pop("exploration", None) or ExplorationParams(alpha_q, alpha_c)
        pol = CLUCB(N, p, K, graph, eta1=eta1, eta2=eta2,
                    lam=0.0 if name == "clucb_nosim" else lam,
                    exploration=exploration, inner_iters=inner_iters, seed=seed, **extra)
        pol.name = name
        return pol
    if extra:
        raise ConfigError(f"unexpected options for {name}: {sorted(extra)}")
    if name == "linucb":
        return LinUCB(N, p, eta=eta1, alpha=alpha)
    if name == "goblin":
        return GOBLin(N, p, graph, eta=eta1, lam=lam, alpha=alpha)
    raise ConfigError(f"unknown policy {name!r}; expected one of {POLICY_NAMES}")
