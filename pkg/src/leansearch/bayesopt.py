"""Gaussian-process Bayesian optimization over config spaces.

The loop evaluates ``n1`` prior configs (Sobol-sequenced, or uniform random
in ``random`` mode), then runs ``n2`` steps; each step draws ``n3`` fresh
candidates, scores their expected improvement against the GP posterior, and
spends one objective evaluation on the argmax. Exactly ``n1 + n2`` objective
evaluations happen regardless of mode; candidate scoring never calls the
objective. The GP prior mean is the mean of the observed objective values and
the covariance comes from the configuration-similarity kernel plus diagonal
observation noise.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.stats import norm, qmc

from .configs import Config, SearchSpace
from .kernel import KernelSpec, covariance_matrix, cross_similarity
from .objective import ObjectiveOutcome
from .spaces import default_complete, map_unit_sample, unit_dim

MODES = ("random", "grid", "balanced", "extreme")
# mode -> (n1, n2); n3 only matters when n2 > 0
MODE_BUDGETS = {"random": (30, 0), "grid": (30, 0), "balanced": (15, 15), "extreme": (1, 29)}

JITTERS = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


class GPNumericsError(RuntimeError):
    """Covariance factorization failed even at maximum jitter."""


@dataclass(frozen=True)
class BOSettings:
    n1: int = 15
    n2: int = 15
    n3: int = 1000
    xi: float = 1e-4
    sigma_n2: float = 1e-4
    mode: str = "balanced"
    rng_seed: int = 0
    stratified: bool = False  # scrambled-Sobol candidate draws instead of uniform

    def __post_init__(self):
        if self.n1 < 1 or self.n2 < 0 or self.n3 < 1:
            raise ValueError("need n1 >= 1, n2 >= 0, n3 >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    @classmethod
    def for_mode(cls, mode: str, rng_seed: int = 0, n3: int = 1000, xi: float = 1e-4, sigma_n2: float = 1e-4):
        n1, n2 = MODE_BUDGETS[mode]
        return cls(n1=n1, n2=n2, n3=n3, xi=xi, sigma_n2=sigma_n2, mode=mode, rng_seed=rng_seed)

    @property
    def budget(self) -> int:
        return self.n1 + self.n2


# ---------------------------------------------------------------------------
# Sampling


def sobol_unit(dim: int, n: int) -> np.ndarray:
    """First ``n`` points of the unscrambled Sobol sequence, skipping the zero point."""
    try:
        sampler = qmc.Sobol(d=dim, scramble=False)
    except ValueError as exc:
        raise ValueError(f"Sobol direction numbers unavailable for dimension {dim}") from exc
    count = 1 << max(1, math.ceil(math.log2(n + 1)))
    points = sampler.random_base2(int(math.log2(count)))
    return points[1 : n + 1]


def sobol_sample(space: SearchSpace, n: int, seed: int = 0, complete=None) -> list[Config]:
    """``n`` valid configs at the space's Sobol points.

    The low-discrepancy points are mapped through each hyperparameter's scale
    and rounded to legal values; ``complete`` turns the family-specific
    sample into a full config (defaults fill preset training HPs). ``seed``
    is accepted for interface symmetry; the unscrambled sequence is fixed.
    """
    del seed
    if complete is None:
        complete = lambda sample: default_complete(space, sample)  # noqa: E731
    points = sobol_unit(unit_dim(space), n)
    return [complete(map_unit_sample(space, u)) for u in points]


def random_sample(space: SearchSpace, n: int, rng: np.random.Generator, complete=None,
                  stratified: bool = False) -> list[Config]:
    """``n`` valid configs sampled over the legal space.

    Uniform by default; ``stratified`` draws a seed-scrambled Sobol batch
    instead, spreading the candidates more evenly.
    """
    if complete is None:
        complete = lambda sample: default_complete(space, sample)  # noqa: E731
    d = unit_dim(space)
    if stratified:
        sampler = qmc.Sobol(d=d, scramble=True, seed=rng)
        count = 1 << max(1, math.ceil(math.log2(n)))
        points = sampler.random_base2(int(math.log2(count)))[:n]
        return [complete(map_unit_sample(space, u)) for u in points]
    return [complete(map_unit_sample(space, rng.random(d))) for _ in range(n)]


# ---------------------------------------------------------------------------
# Gaussian process


def _factor_spd(k: np.ndarray):
    """Cholesky with escalating diagonal jitter (clean, then 1e-10 .. 1e-6)."""
    try:
        return scipy.linalg.cho_factor(k, lower=True)
    except scipy.linalg.LinAlgError:
        pass
    eye = np.eye(k.shape[0])
    for jitter in JITTERS:
        try:
            return scipy.linalg.cho_factor(k + jitter * eye, lower=True)
        except scipy.linalg.LinAlgError:
            continue
    raise GPNumericsError("covariance factorization failed at maximum jitter 1e-6")


class GPState:
    """Observed configs, their objective values, and the fitted posterior pieces."""

    def __init__(self, spec: KernelSpec, sigma_n2: float):
        self.spec = spec
        self.sigma_n2 = float(sigma_n2)
        self.configs: list[Config] = []
        self.fvals: list[float] = []
        self._chol = None
        self._alpha = None
        self._mean = 0.0

    def __len__(self) -> int:
        return len(self.configs)

    @property
    def mean(self) -> float:
        return self._mean

    @property
    def incumbent(self) -> tuple[Optional[Config], float]:
        if not self.configs:
            return None, math.inf
        i = int(np.argmin(self.fvals))
        return self.configs[i], self.fvals[i]

    def add(self, config: Config, f: float) -> None:
        if not math.isfinite(f):
            raise ValueError("GP observations must be finite")
        self.configs.append(config)
        self.fvals.append(float(f))
        self._refresh()

    def _refresh(self) -> None:
        f = np.asarray(self.fvals)
        self._mean = float(f.mean())
        cov = covariance_matrix(self.configs, self.spec, self.sigma_n2)
        self._chol = _factor_spd(cov)
        self._alpha = scipy.linalg.cho_solve(self._chol, f - self._mean)

    def posterior(self, candidates: Sequence[Config]) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and standard deviation at each candidate."""
        if not self.configs:
            raise ValueError("posterior requires at least one observation")
        k_star = cross_similarity(self.configs, candidates, self.spec)  # (n_obs, m)
        mu = self._mean + k_star.T @ self._alpha
        v = scipy.linalg.cho_solve(self._chol, k_star)
        var = 1.0 - np.einsum("ij,ij->j", k_star, v)
        return mu, np.sqrt(np.clip(var, 0.0, None))


def gp_posterior(state: GPState, candidate: Config, spec: KernelSpec | None = None) -> tuple[float, float]:
    """Posterior (mean, std) at one candidate config."""
    if spec is not None and spec is not state.spec and spec != state.spec:
        raise ValueError("kernel spec does not match the GP state")
    mu, sigma = state.posterior([candidate])
    return float(mu[0]), float(sigma[0])


def expected_improvement(mu_post, sigma_post, f_star: float, xi: float = 1e-4):
    """Expected improvement below the incumbent, offset by xi (minimization form).

    EI = (f* - mu - xi) Phi(z) + sigma phi(z), z = (f* - mu - xi)/sigma, and 0
    wherever sigma = 0. Accepts scalars or arrays.
    """
    mu = np.asarray(mu_post, dtype=float)
    sigma = np.asarray(sigma_post, dtype=float)
    if np.any(sigma < 0):
        raise ValueError("sigma_post must be non-negative")
    improvement = f_star - mu - xi
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sigma > 0, improvement / np.where(sigma > 0, sigma, 1.0), 0.0)
    ei = improvement * norm.cdf(z) + sigma * norm.pdf(z)
    ei = np.where(sigma > 0, np.clip(ei, 0.0, None), 0.0)
    if np.ndim(mu_post) == 0 and np.ndim(sigma_post) == 0:
        return float(ei)
    return ei


# ---------------------------------------------------------------------------
# The loop


@dataclass(frozen=True)
class EvalEvent:
    kind: str = field(default="eval", init=False)
    index: int  # evaluation counter within this BO run
    phase: str  # "prior" | "step"
    step: Optional[int]
    config: Config
    outcome: ObjectiveOutcome
    wall_time: float


@dataclass(frozen=True)
class CandidateEvent:
    kind: str = field(default="candidate", init=False)
    step: int
    index: int  # candidate index within the step
    config: Config
    ei: float
    mu: float
    sigma: float


@dataclass
class BOResult:
    best_config: Optional[Config]
    best_f: float
    events: list
    n_evaluations: int
    state: GPState


ObjectiveFn = Callable[[Config, int], ObjectiveOutcome]


def bo_minimize(
    space: SearchSpace,
    spec: KernelSpec,
    objective_fn: ObjectiveFn,
    settings: BOSettings,
    complete=None,
    on_event=None,
) -> BOResult:
    """Minimize ``objective_fn`` over the space with exactly n1 + n2 evaluations.

    ``objective_fn(config, eval_index)`` returns an
    :class:`~leansearch.objective.ObjectiveOutcome`; failures (f = +inf) are
    recorded in the trace but excluded from GP conditioning. ``on_event`` is
    called with every :class:`EvalEvent` and :class:`CandidateEvent` as it
    happens, in deterministic order.
    """
    rng = np.random.default_rng(settings.rng_seed)
    state = GPState(spec, settings.sigma_n2)
    events: list = []
    eval_counter = 0

    def emit(event):
        events.append(event)
        if on_event is not None:
            on_event(event)

    def spend(config: Config, phase: str, step: Optional[int]) -> ObjectiveOutcome:
        nonlocal eval_counter
        outcome = objective_fn(config, eval_counter)
        emit(EvalEvent(index=eval_counter, phase=phase, step=step, config=config,
                       outcome=outcome, wall_time=time.time()))
        eval_counter += 1
        if math.isfinite(outcome.f):
            state.add(config, outcome.f)
        return outcome

    if settings.mode == "random":
        prior = random_sample(space, settings.n1, rng, complete)
    else:
        prior = sobol_sample(space, settings.n1, complete=complete)
    for config in prior:
        spend(config, "prior", None)

    for step in range(settings.n2):
        candidates = random_sample(space, settings.n3, rng, complete,
                                   stratified=settings.stratified)
        if len(state) == 0:
            # Every evaluation so far failed; no posterior to score against.
            chosen = 0
            for idx, cand in enumerate(candidates):
                emit(CandidateEvent(step=step, index=idx, config=cand, ei=0.0, mu=math.nan, sigma=math.nan))
        else:
            mu, sigma = state.posterior(candidates)
            _, f_star = state.incumbent
            ei = expected_improvement(mu, sigma, f_star, settings.xi)
            for idx, cand in enumerate(candidates):
                emit(CandidateEvent(step=step, index=idx, config=cand,
                                    ei=float(ei[idx]), mu=float(mu[idx]), sigma=float(sigma[idx])))
            chosen = int(np.argmax(ei))  # ties break to the lowest index
        spend(candidates[chosen], "step", step)

    best_config, best_f = state.incumbent
    if best_config is None and events:
        # All evaluations failed; report the first config with f = +inf.
        first = next(e for e in events if e.kind == "eval")
        best_config, best_f = first.config, math.inf
    return BOResult(best_config=best_config, best_f=best_f, events=events,
                    n_evaluations=eval_counter, state=state)
