"""Robust aggregation of overlapping partial 3D poses.

Each group hypothesis ``F_j`` (``n_g x 3``) is only known up to a translation,
so the full pose ``X`` (``n x 3``) and per-group offsets ``t_j`` are recovered
jointly from::

    min_{X, t}  sum_j || X[g_j] + 1 t_j^T - F_j ||

with the l1, l2,1 (row-wise Euclidean) or squared Frobenius norm. Stacking the
groups gives the linear model ``A G - F`` with ``A = [E, I (x) 1]`` and
``G = [X; t]``, which is solved by scaled-dual ADMM: the G-step is a
minimum-norm least-squares solve with a cached pseudo-inverse of ``A``, and the
N-step is the proximal operator of the chosen norm.

``A`` is rank deficient (shifting ``X`` by ``c`` and every ``t_j`` by ``-c``
leaves the residual unchanged); the reported ``X`` is root-centred and ``t``
absorbs the shift.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import _kernels
from .core import GroupSet, group_coverage, selection_matrix

OBJECTIVES = ("l1", "l21", "fro")


class InfeasibleProblemError(ValueError):
    """Some joint is not covered by any group."""


@dataclass(frozen=True)
class ADMMSettings:
    mu0: float = 1e-2
    mu_growth: float = 1.1
    mu_max: float = 10.0
    tol_primal: float = 1e-8
    tol_dual: float = 1e-8
    max_iter: int = 2000
    objective: str = "l21"
    # drop the translation unknowns (t_j = 0); used by the median check
    fix_translations: bool = False

    def __post_init__(self):
        if self.mu0 <= 0:
            raise ValueError("mu0 must be positive")
        if self.mu_growth < 1:
            raise ValueError("mu_growth must be >= 1")
        if self.tol_primal <= 0 or self.tol_dual <= 0:
            raise ValueError("tolerances must be positive")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")


class ConsensusSystem:
    """The group-dependent part of the problem: ``E``, ``A`` and ``pinv(A)``.

    Only depends on the groups, so one instance is built per GroupSet and
    shared (read-only) across every sample solved with it.
    """

    def __init__(self, groups: GroupSet, fix_translations: bool = False, root: int = 0):
        cov = group_coverage(groups.groups, groups.n)
        if (cov == 0).any():
            raise InfeasibleProblemError(f"joints {np.flatnonzero(cov == 0).tolist()} are not in any group")
        self.groups = groups
        self.n = groups.n
        self.n_g = groups.n_g
        self.n_t = groups.n_t
        self.root = root
        self.fix_translations = fix_translations
        self.E = np.vstack([selection_matrix(g, self.n).T for g in groups.groups])
        if fix_translations:
            self.A = self.E
        else:
            self.A = np.hstack([self.E, np.kron(np.eye(self.n_t), np.ones((self.n_g, 1)))])
        self.A.setflags(write=False)

    @cached_property
    def pinv(self) -> np.ndarray:
        P = np.linalg.pinv(self.A, rcond=1e-12)
        P.setflags(write=False)
        return P

    def split(self, G: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        X = G[..., : self.n, :]
        if self.fix_translations:
            t = np.zeros(G.shape[:-2] + (self.n_t, 3))
        else:
            t = G[..., self.n:, :]
        return X, t

    def gauge_fix(self, X: np.ndarray, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self.fix_translations:
            return X, t
        c = X[..., self.root:self.root + 1, :]
        return X - c, t + c


@dataclass
class ConsensusProblem:
    """Stacked selection matrix ``E`` and hypotheses ``F`` (``n_t*n_g x 3``)."""

    system: ConsensusSystem
    F: np.ndarray

    @property
    def E(self) -> np.ndarray:
        return self.system.E

    @property
    def groups(self) -> GroupSet:
        return self.system.groups

    @property
    def n(self) -> int:
        return self.system.n


@dataclass
class ConsensusSolution:
    X: np.ndarray
    t: np.ndarray
    objective_trace: np.ndarray
    residual_trace: np.ndarray  # (iterations, 2): primal, dual
    iterations: int
    converged: bool
    objective: float = field(default=np.nan)


def assemble(predictions, groups: GroupSet, n: int | None = None, *,
             system: ConsensusSystem | None = None, fix_translations: bool = False) -> ConsensusProblem:
    """Stack per-group predictions (``3*n_g`` vectors or ``n_g x 3`` blocks) into a problem.

    ``predictions`` may carry a leading sample axis: ``(N, n_t, n_g, 3)``.
    """
    if n is not None and n != groups.n:
        raise ValueError(f"n={n} does not match the GroupSet (n={groups.n})")
    P = np.asarray(predictions, dtype=float)
    if P.shape[-1] == 3 * groups.n_g and (P.ndim == 2 or P.shape[-2] == groups.n_t and P.shape[-1] != 3):
        P = P.reshape(P.shape[:-1] + (groups.n_g, 3))
    if P.shape[-3:-1] != (groups.n_t, groups.n_g) or P.shape[-1] != 3:
        raise ValueError(f"expected {groups.n_t} predictions of {groups.n_g} joints, got shape {np.shape(predictions)}")
    F = P.reshape(P.shape[:-3] + (groups.n_t * groups.n_g, 3))
    if system is None:
        system = ConsensusSystem(groups, fix_translations=fix_translations)
    return ConsensusProblem(system, F)


def objective_value(R: np.ndarray, objective: str) -> np.ndarray:
    """Norm of the residual stack; reduces the last two axes."""
    if objective == "l21":
        return np.sqrt(np.einsum("...j,...j->...", R, R)).sum(axis=-1)
    if objective == "l1":
        return np.abs(R).sum(axis=(-2, -1))
    if objective == "fro":
        return (R ** 2).sum(axis=(-2, -1))
    raise ValueError(f"unknown objective {objective!r}")


def n_update(R: np.ndarray, mu: float, objective: str = "l21") -> np.ndarray:
    """Proximal operator of ``(1/mu) * ||.||`` evaluated at ``R``."""
    R = np.asarray(R, dtype=float)
    if mu <= 0:
        raise ValueError("mu must be positive")
    if objective == "l21":
        norms = np.sqrt(np.einsum("...j,...j->...", R, R))[..., None]
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(norms > 0, np.maximum(1.0 - 1.0 / (mu * norms), 0.0), 0.0)
        return R * scale
    if objective == "l1":
        return np.sign(R) * np.maximum(np.abs(R) - 1.0 / mu, 0.0)
    if objective == "fro":
        return R * (mu / (mu + 2.0))
    raise ValueError(f"unknown objective {objective!r}")


def g_update(N: np.ndarray, U: np.ndarray, problem: ConsensusProblem) -> np.ndarray:
    """Minimum-norm minimiser of ``||A G - F - N + U||_F`` over ``G``."""
    return problem.system.pinv @ (problem.F + N - U)


def _left(M: np.ndarray, X: np.ndarray) -> np.ndarray:
    """``M @ X[s]`` for every sample of ``X`` (``(S, k, 3)``) as one GEMM."""
    S, k, d = X.shape
    Y = M @ X.transpose(1, 0, 2).reshape(k, S * d)
    return Y.reshape(M.shape[0], S, d).transpose(1, 0, 2)


def solve(problem: ConsensusProblem, settings: ADMMSettings = ADMMSettings()) -> ConsensusSolution:
    """Solve one problem (``F`` of shape ``(m, 3)``)."""
    if problem.F.ndim != 2:
        raise ValueError("solve() takes a single problem; use solve_batch for stacked F")
    return solve_batch(problem, settings)[0]


def _admm(problem: ConsensusProblem, settings: ADMMSettings, trace: bool = True):
    system = problem.system
    if system.fix_translations != settings.fix_translations:
        system = ConsensusSystem(system.groups, fix_translations=settings.fix_translations, root=system.root)
        problem = ConsensusProblem(system, problem.F)
    F = np.asarray(problem.F, dtype=float)
    single = F.ndim == 2
    if single:
        F = F[None]
    S = F.shape[0]
    A, P = system.A, system.pinv
    obj = settings.objective
    F_in = F
    if not system.fix_translations:
        # t_j absorbs any shift of hypothesis j, so solving for its centred
        # copy is the same problem and makes the iterates translation-free
        c = F.reshape(S, system.n_t, system.n_g, 3).mean(axis=2)
        F = F - np.repeat(c, system.n_g, axis=1)

    # l1 / l2,1 solutions are positively homogeneous in F, so each sample is
    # solved at unit RMS and rescaled; this keeps mu dimensionless
    scale = np.linalg.norm(F, axis=(1, 2))
    scale[scale == 0] = 1.0
    rms = scale / np.sqrt(F.shape[1] * F.shape[2]) if obj != "fro" else np.ones(S)
    F = F / rms[:, None, None]
    scale = scale / rms
    mu = settings.mu0
    active = np.ones(S, dtype=bool)
    iters = np.zeros(S, dtype=int)
    obj_trace = np.full((settings.max_iter if trace else 0, S), np.nan)
    res_trace = np.full((settings.max_iter if trace else 0, S, 2), np.nan)

    # sample-minor layout (rows, S, 3) so both products are single GEMMs;
    # samples are compacted out only when some of them converge
    def mul(M, X):
        return (M @ X.reshape(X.shape[0], -1)).reshape(M.shape[0], X.shape[1], 3)

    kind = {"l21": _kernels.L21, "l1": _kernels.L1, "fro": _kernels.FRO}[obj]
    a = np.arange(S)
    Fa = np.ascontiguousarray(F.transpose(1, 0, 2))
    Na, Ua = np.zeros_like(Fa), np.zeros_like(Fa)
    Ba = Fa.copy()
    G = np.empty((S, P.shape[0], 3))
    sa = scale
    primal2, dual2, value = np.empty(S), np.empty(S), np.empty(S)
    live = np.ones(S, dtype=bool)
    for k in range(settings.max_iter):
        if not live.any():
            break
        Ga = mul(P, Ba)
        D = mul(A, Ga)
        D -= Fa
        mu_next = min(mu * settings.mu_growth, settings.mu_max)
        m = a.size
        _kernels.admm_step(D, Fa, Na, Ua, Ba, mu, mu / mu_next, kind, primal2[:m], dual2[:m], value[:m])
        primal = np.sqrt(primal2[:m]) / sa
        dual = mu * np.sqrt(dual2[:m]) / sa
        if trace:
            obj_trace[k, a[live]] = value[:m][live]
            res_trace[k, a[live], 0] = primal[live]
            res_trace[k, a[live], 1] = dual[live]
        iters[a[live]] = k + 1
        mu = mu_next
        done = live & (primal < settings.tol_primal) & (dual < settings.tol_dual)
        if done.any():
            # converged samples keep their iterate from this step; the arrays
            # are compacted lazily because copying them costs more than a step
            G[a[done]] = Ga[:, done].transpose(1, 0, 2)
            active[a[done]] = False
            live &= ~done
            if live.sum() < 0.75 * live.size:
                a, sa = a[live], sa[live]
                Fa, Na, Ua, Ba = (np.ascontiguousarray(Z[:, live]) for Z in (Fa, Na, Ua, Ba))
                Ga = Ga[:, live]
                live = np.ones(a.size, dtype=bool)
    G[a[live]] = Ga[:, live].transpose(1, 0, 2)

    G = G * rms[:, None, None]
    if not system.fix_translations:
        G[:, system.n:] += c
    F = F_in
    obj_trace *= rms[None, :]
    return system, F, G, iters, active, obj_trace, res_trace


def solve_batch(problem: ConsensusProblem, settings: ADMMSettings = ADMMSettings()) -> list[ConsensusSolution]:
    """ADMM over a stack of independent problems sharing one ConsensusSystem.

    Every sample follows the same penalty schedule and is frozen once it meets
    both tolerances, so results do not depend on what else is in the batch.
    """
    system, F, G, iters, active, obj_trace, res_trace = _admm(problem, settings)
    A, obj = system.A, settings.objective
    S = G.shape[0]
    X, t = system.split(G)
    X, t = system.gauge_fix(X, t)
    out = []
    for s in range(S):
        it = iters[s]
        out.append(ConsensusSolution(
            X=X[s], t=t[s],
            objective_trace=obj_trace[:it, s].copy(),
            residual_trace=res_trace[:it, s].copy(),
            iterations=int(it),
            converged=not active[s],
            objective=float(objective_value(A @ G[s] - F[s], obj)),
        ))
    return out


def aggregate(predictions, groups: GroupSet, settings: ADMMSettings = ADMMSettings(),
              system: ConsensusSystem | None = None) -> np.ndarray:
    """Full poses ``(N, n, 3)`` from per-group predictions ``(N, n_t, n_g, 3)``."""
    problem = assemble(predictions, groups, system=system, fix_translations=settings.fix_translations)
    single = problem.F.ndim == 2
    if single:
        problem = ConsensusProblem(problem.system, problem.F[None])
    if settings.objective == "fro":
        X = mean_aggregate(problem)
    else:
        system, _, G, *_ = _admm(problem, settings, trace=False)
        X, _ = system.gauge_fix(*system.split(G))
    return X[0] if single else X


def mean_aggregate(problem: ConsensusProblem) -> np.ndarray:
    """Least-squares consensus: per-joint mean after optimal translation alignment."""
    system = problem.system
    G = system.pinv @ problem.F
    X, t = system.split(G)
    X, _ = system.gauge_fix(X, t)
    return X


def oracle_solve_small(problem: ConsensusProblem, objective: str = "l21",
                       iterations: int = 1_000_000, fix_translations: bool | None = None) -> ConsensusSolution:
    """Reference solution by projected subgradient descent; for tests only.

    Starts from the least-squares consensus and takes normalised subgradient
    steps ``c_r / sqrt(k + 1)``. The budget is split into ten stages, each
    restarting from the best iterate with ``c_r`` ten times smaller. The root row
    of ``X`` is held at 0 when translations are free.
    """
    system = problem.system
    if fix_translations is not None and fix_translations != system.fix_translations:
        system = ConsensusSystem(system.groups, fix_translations=fix_translations, root=system.root)
    if system.n > 4 or system.n_t > 5:
        raise ValueError("oracle_solve_small is limited to n <= 4 and n_t <= 5")
    if objective not in ("l1", "l21"):
        raise ValueError("the oracle handles the l1 and l21 objectives")
    F = np.ascontiguousarray(problem.F, dtype=float)
    A = np.ascontiguousarray(system.A, dtype=float)
    X, t = system.split(system.pinv @ F)
    X, t = system.gauge_fix(X, t)
    G0 = X.copy() if system.fix_translations else np.vstack([X, t])
    free = np.ones(G0.shape[0], dtype=np.bool_)
    if not system.fix_translations:
        free[system.root] = False

    from ._oracle import projected_subgradient
    step = max(float(np.abs(F).max()), 1.0)
    G, best = projected_subgradient(A, F, G0, free, objective == "l21", iterations, step, 10)
    X, t = system.split(G)
    return ConsensusSolution(X=X, t=t, objective_trace=np.array([best]), residual_trace=np.zeros((0, 2)),
                             iterations=iterations, converged=True, objective=float(best))


class ConsensusAggregator(TransformerMixin, BaseEstimator):
    """Transformer mapping per-group 3D hypotheses to full root-centred poses.

    ``fit`` builds (and caches) the pseudo-inverse for ``groups``; ``transform``
    takes ``(N, n_t, 3*n_g)`` or ``(N, n_t, n_g, 3)`` predictions.
    """

    def __init__(self, groups: GroupSet | None = None, objective: str = "l21", mu0: float = 1e-2,
                 mu_growth: float = 1.1, mu_max: float = 10.0, tol: float = 1e-8, max_iter: int = 2000):
        self.groups = groups
        self.objective = objective
        self.mu0 = mu0
        self.mu_growth = mu_growth
        self.mu_max = mu_max
        self.tol = tol
        self.max_iter = max_iter

    def _settings(self) -> ADMMSettings:
        return ADMMSettings(mu0=self.mu0, mu_growth=self.mu_growth, mu_max=self.mu_max,
                            tol_primal=self.tol, tol_dual=self.tol, max_iter=self.max_iter,
                            objective=self.objective)

    def fit(self, X=None, y=None):
        if self.groups is None:
            raise ValueError("ConsensusAggregator needs a GroupSet")
        self._settings()
        self.system_ = ConsensusSystem(self.groups)
        _ = self.system_.pinv
        return self

    def transform(self, X):
        from sklearn.utils.validation import check_is_fitted
        check_is_fitted(self, "system_")
        return aggregate(X, self.groups, self._settings(), system=self.system_)

    def solve(self, X) -> list[ConsensusSolution]:
        """Like ``transform`` but returns full diagnostics per sample."""
        from sklearn.utils.validation import check_is_fitted
        check_is_fitted(self, "system_")
        problem = assemble(X, self.groups, system=self.system_)
        if problem.F.ndim == 2:
            problem = ConsensusProblem(problem.system, problem.F[None])
        return solve_batch(problem, self._settings())


def with_objective(settings: ADMMSettings, objective: str) -> ADMMSettings:
    return replace(settings, objective=objective)
