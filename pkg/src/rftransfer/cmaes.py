"""(mu/mu_w, lambda)-CMA-ES with box constraints and BIPOP restarts.

The update equations are the standard ones (rank-one + rank-mu covariance
update, cumulative step-size adaptation) with positive recombination weights.

Box constraints are handled by repair with penalty: the objective sees the
coordinate-wise clipped candidate, while :func:`tell` adds
``fit_range * ||x_raw - x_clip||^2`` to its value before ranking and updates
the distribution from the raw (unclipped) samples.
"""
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .exceptions import DimensionError, InputError, NumericError

MAX_CONDITION = 1e14
BUDGET_FACTOR = 250


class OptimizationError(RuntimeError):
    """The objective raised; ``evaluations`` counts calls made before it."""

    def __init__(self, message, evaluations):
        super().__init__(f"{message} (after {evaluations} evaluations)")
        self.evaluations = evaluations


@dataclass(frozen=True, eq=False)
class SearchSpace:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float).ravel()
        upper = np.asarray(self.upper, dtype=float).ravel()
        if lower.shape != upper.shape or lower.size == 0:
            raise DimensionError("lower and upper bounds must be non-empty "
                                 "vectors of equal length")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise InputError("bounds must be finite")
        if np.any(lower >= upper):
            raise InputError("every lower bound must be below its upper bound")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def box(cls, dim, lo, hi):
        return cls(np.full(dim, float(lo)), np.full(dim, float(hi)))

    @property
    def dim(self):
        return self.lower.size

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def repair(self, x):
        return np.clip(x, self.lower, self.upper)


def default_popsize(dim):
    return 4 + int(math.floor(3 * math.log(dim)))


@dataclass(eq=False)
class CmaState:
    space: SearchSpace
    m: np.ndarray
    sigma: float
    C: np.ndarray
    p_sigma: np.ndarray
    p_c: np.ndarray
    lam: int
    mu: int
    weights: np.ndarray
    mueff: float
    c_sigma: float
    d_sigma: float
    c_c: float
    c_1: float
    c_mu: float
    chi_n: float
    generation: int = 0
    fit_range: float = 0.0
    # eigendecomposition of C: C = B diag(D^2) B^T
    B: Optional[np.ndarray] = None
    D: Optional[np.ndarray] = None
    # last ask(): raw samples, their normalized steps, repaired candidates
    x_raw: Optional[np.ndarray] = None
    steps: Optional[np.ndarray] = None
    x_repaired: Optional[np.ndarray] = None

    @property
    def dim(self):
        return self.m.size

    @property
    def condition(self):
        if self.D is None:
            self._eigen()
        return float((self.D.max() / self.D.min()) ** 2)

    def _eigen(self):
        try:
            evals, B = np.linalg.eigh(self.C)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"covariance factorization failed: {exc}") from exc
        if not np.all(np.isfinite(evals)) or evals.max() <= 0:
            raise NumericError("covariance matrix is not positive definite")
        # eigenvalue floor far beyond MAX_CONDITION; only reached by bare
        # ask/tell loops that skip the condition-number termination
        floor = evals.max() * 1e-20
        if evals.min() < floor:
            evals = np.maximum(evals, floor)
            C = (B * evals) @ B.T
            self.C = 0.5 * (C + C.T)
        self.B = B
        self.D = np.sqrt(evals)

    def ask(self, rng, inject=None):
        return ask(self, rng, inject)

    def tell(self, candidates, fitnesses):
        return tell(self, candidates, fitnesses)


def cma_init(space, x0, sigma0, lam=None):
    x0 = np.asarray(x0, dtype=float).ravel()
    n = space.dim
    if x0.size != n:
        raise DimensionError(f"x0 has length {x0.size}, search space has {n}")
    if not space.contains(x0):
        raise InputError("x0 lies outside the search space")
    if not (sigma0 > 0 and math.isfinite(sigma0)):
        raise InputError(f"sigma0 must be positive and finite, got {sigma0}")
    lam = default_popsize(n) if lam is None else int(lam)
    if lam < 2:
        raise InputError(f"population size must be >= 2, got {lam}")
    mu = lam // 2
    w = math.log((lam + 1) / 2) - np.log(np.arange(1, mu + 1))
    w = w / w.sum()
    mueff = 1.0 / np.sum(w ** 2)
    c_sigma = (mueff + 2) / (n + mueff + 5)
    d_sigma = 1 + 2 * max(0.0, math.sqrt((mueff - 1) / (n + 1)) - 1) + c_sigma
    c_c = (4 + mueff / n) / (n + 4 + 2 * mueff / n)
    c_1 = 2 / ((n + 1.3) ** 2 + mueff)
    c_mu = min(1 - c_1, 2 * (mueff - 2 + 1 / mueff) / ((n + 2) ** 2 + mueff))
    chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))
    return CmaState(space=space, m=x0.copy(), sigma=float(sigma0), C=np.eye(n),
                    p_sigma=np.zeros(n), p_c=np.zeros(n), lam=lam, mu=mu,
                    weights=w, mueff=mueff, c_sigma=c_sigma, d_sigma=d_sigma,
                    c_c=c_c, c_1=c_1, c_mu=c_mu, chi_n=chi_n)


def ask(state, rng, inject=None):
    """Sample ``lam`` candidates; returns their bound-repaired images.

    ``inject`` optionally replaces the first raw samples with given points.
    """
    if state.B is None:
        state._eigen()
    n, lam = state.dim, state.lam
    z = rng.standard_normal((lam, n))
    steps = (z * state.D) @ state.B.T
    x_raw = state.m + state.sigma * steps
    if inject is not None:
        inject = np.atleast_2d(np.asarray(inject, dtype=float))
        if inject.shape[0] > lam or inject.shape[1] != n:
            raise DimensionError(f"cannot inject {inject.shape} into a "
                                 f"population of {lam} x {n}")
        # cap the Mahalanobis length of injected steps, as for mirrored samples
        cap = math.sqrt(n) + 2 * n / (n + 2)
        for k, x in enumerate(inject):
            step = (x - state.m) / state.sigma
            maha = np.linalg.norm((state.B.T @ step) / state.D)
            if maha > cap:
                step = step * (cap / maha)
            x_raw[k] = x
            steps[k] = step
    state.x_raw = x_raw
    state.steps = steps
    state.x_repaired = state.space.repair(x_raw)
    return [row.copy() for row in state.x_repaired]


def tell(state, candidates, fitnesses):
    """Update mean, covariance and step size from evaluated candidates."""
    if state.x_raw is None:
        raise InputError("tell() called before ask()")
    f = np.asarray(fitnesses, dtype=float).ravel()
    if len(candidates) != state.lam or f.size != state.lam:
        raise DimensionError(f"expected {state.lam} candidates and fitnesses, got "
                             f"{len(candidates)} and {f.size}")
    if np.any(np.isnan(f)):
        raise InputError("fitness values contain NaN")
    n = state.dim

    finite = f[np.isfinite(f)]
    spread = float(np.ptp(finite)) if finite.size else 0.0
    if state.generation == 0:
        state.fit_range = spread
    else:
        state.fit_range = 0.8 * state.fit_range + 0.2 * spread
    violation = np.sum((state.x_raw - state.x_repaired) ** 2, axis=1)
    penalized = f + state.fit_range * violation

    order = np.argsort(penalized, kind="stable")
    sel = state.steps[order[:state.mu]]
    y_w = state.weights @ sel

    state.m = state.m + state.sigma * y_w
    inv_sqrt_C = state.B @ np.diag(1 / state.D) @ state.B.T
    state.p_sigma = ((1 - state.c_sigma) * state.p_sigma
                     + math.sqrt(state.c_sigma * (2 - state.c_sigma) * state.mueff)
                     * (inv_sqrt_C @ y_w))
    ps_norm = np.linalg.norm(state.p_sigma)
    h_sigma = (ps_norm / math.sqrt(1 - (1 - state.c_sigma) ** (2 * (state.generation + 1)))
               < (1.4 + 2 / (n + 1)) * state.chi_n)
    state.p_c = ((1 - state.c_c) * state.p_c
                 + h_sigma * math.sqrt(state.c_c * (2 - state.c_c) * state.mueff) * y_w)
    delta = (1 - h_sigma) * state.c_c * (2 - state.c_c)
    rank_mu = (sel.T * state.weights) @ sel
    C = ((1 - state.c_1 - state.c_mu) * state.C
         + state.c_1 * (np.outer(state.p_c, state.p_c) + delta * state.C)
         + state.c_mu * rank_mu)
    state.C = 0.5 * (C + C.T)
    sigma = state.sigma * math.exp((state.c_sigma / state.d_sigma)
                                   * (ps_norm / state.chi_n - 1))
    state.sigma = min(max(sigma, 1e-300), 1e300)
    state.generation += 1
    state.x_raw = state.steps = state.x_repaired = None
    state._eigen()
    return state


@dataclass(eq=False)
class OptimResult:
    best_x: np.ndarray
    best_f: float
    evaluations: int
    restarts_used: int
    termination_reason: str
    generations: int = 0
    history: List[float] = field(default_factory=list)
    runs: list = field(default_factory=list)


def stagnation_window(dim, lam):
    return 10 + math.ceil(30 * dim / lam)


def cma_run(objective: Callable, space, x0, sigma0, budget=None, tol=1e-12,
            rng=None, lam=None, inject=None, ftarget=None):
    """Single CMA-ES run.

    Stops on budget exhaustion (``"budget"``), a best-per-generation range
    below ``tol`` over the stagnation window (``"stagnation"``), a covariance
    condition number above 1e14 (``"condition"``), or ``ftarget``.
    """
    rng = np.random.default_rng(rng)
    state = cma_init(space, x0, sigma0, lam)
    if budget is None:
        budget = BUDGET_FACTOR * space.dim * state.lam
    if budget < state.lam:
        raise InputError(f"budget {budget} is smaller than the population "
                         f"size {state.lam}")
    window = stagnation_window(space.dim, state.lam)
    best_x, best_f = None, math.inf
    evals = 0
    history = []
    gen_best = []
    reason = "budget"
    while evals + state.lam <= budget:
        cands = ask(state, rng, inject if state.generation == 0 else None)
        fits = np.empty(state.lam)
        for k, x in enumerate(cands):
            try:
                fits[k] = objective(x)
            except Exception as exc:
                raise OptimizationError(f"objective failed: {exc!r}", evals) from exc
            evals += 1
        k = int(np.argmin(np.where(np.isnan(fits), np.inf, fits)))
        if fits[k] < best_f:
            best_f = float(fits[k])
            best_x = cands[k]
        history.append(best_f)
        gen_best.append(float(np.nanmin(fits)))

        tell(state, cands, fits)

        if ftarget is not None and best_f <= ftarget:
            reason = "ftarget"
            break
        recent = gen_best[-window:]
        if len(recent) >= window and max(recent) - min(recent) < tol:
            reason = "stagnation"
            break
        if state.condition > MAX_CONDITION:
            reason = "condition"
            break
    if best_x is None:
        raise InputError("no generation could be evaluated within the budget")
    return OptimResult(best_x=best_x, best_f=best_f, evaluations=evals,
                       restarts_used=0, termination_reason=reason,
                       generations=state.generation, history=history)


def bipop_run(objective, space, init_sampler, sigma0, total_budget,
              n_restarts=3, rng=None, lam=None, tol=1e-12, inject=None,
              budget_factor=BUDGET_FACTOR, ftarget=None):
    """BIPOP-CMA-ES: one default run plus alternating large/small restarts.

    Restart ``r`` is large-population (``lam * 2**ceil(r/2)``, full sigma0) for
    odd ``r`` and small-population for even ``r``, where the small regime draws
    ``u ~ U(0,1)``, uses ``lam * (lam_large / (2 lam))**(u**2)`` and
    ``sigma0 * 10**(-2u)``, and is capped at half the evaluations spent by the
    preceding large run.  Each run is also capped at ``budget_factor * dim *
    lam_run`` evaluations.
    """
    if n_restarts < 0:
        raise InputError(f"n_restarts must be >= 0, got {n_restarts}")
    rng = np.random.default_rng(rng)
    dim = space.dim
    lam_default = default_popsize(dim) if lam is None else int(lam)
    remaining = int(total_budget)
    if remaining < lam_default:
        raise InputError(f"budget {remaining} is smaller than the population "
                         f"size {lam_default}")

    x0 = init_sampler(rng)
    first = cma_run(objective, space, x0, sigma0,
                    budget=min(remaining, budget_factor * dim * lam_default),
                    tol=tol, rng=rng, lam=lam_default, inject=inject,
                    ftarget=ftarget)
    runs = [first]
    remaining -= first.evaluations
    best = first
    history = list(first.history)
    last_large_lam = lam_default
    last_large_spend = first.evaluations
    restarts = 0

    for r in range(1, n_restarts + 1):
        if ftarget is not None and best.best_f <= ftarget:
            break
        if r % 2 == 1:
            run_lam = lam_default * 2 ** math.ceil(r / 2)
            run_sigma = sigma0
            run_budget = min(remaining, budget_factor * dim * run_lam)
        else:
            u = rng.uniform()
            ratio = 0.5 * last_large_lam / lam_default
            run_lam = max(2, int(math.floor(lam_default * ratio ** (u * u))))
            run_sigma = sigma0 * 10 ** (-2 * u)
            run_budget = min(remaining, budget_factor * dim * run_lam,
                             max(run_lam, last_large_spend // 2))
        if run_budget < run_lam:
            break
        x0 = init_sampler(rng)
        res = cma_run(objective, space, x0, run_sigma, budget=run_budget,
                      tol=tol, rng=rng, lam=run_lam, ftarget=ftarget)
        restarts += 1
        runs.append(res)
        remaining -= res.evaluations
        if r % 2 == 1:
            last_large_lam = run_lam
            last_large_spend = res.evaluations
        if res.best_f < best.best_f:
            best = res
        for v in res.history:
            history.append(min(history[-1], v) if history else v)

    return OptimResult(best_x=best.best_x, best_f=best.best_f,
                       evaluations=sum(r.evaluations for r in runs),
                       restarts_used=restarts,
                       termination_reason=runs[-1].termination_reason,
                       generations=sum(r.generations for r in runs),
                       history=history, runs=runs)
