"""Scikit-learn style estimator wrapping the policy-optimization loop.

``fit`` takes an environment in place of a design matrix; ``predict`` maps a
state matrix to actions, so a fitted agent drops into ``clone``/``get_params``
based tooling (sweeps, grid search over reuse sizes).
"""
from __future__ import annotations

import time
from dataclasses import astuple, dataclass, fields

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .envs import Env
from .estimators import (
    Batch,
    FactorizationError,
    RatioOverflowError,
    ReplayWindow,
    RatioStats,
    fim_estimate_reuse,
    fim_estimate_vanilla,
    grad_estimate_reuse,
    grad_estimate_vanilla,
    natural_direction,
    surrogate_objective,
)
from .optim import AdamState, ProjectionBox, StepSchedule, adam_precondition, trpo_step, update_step
from .policies import GaussianShiftPolicy, policy_for_env
from .sampling import sample_occupancy_iid, sample_single_path

ALGOS = ("vpg", "rpg", "vnpg", "rnpg", "trpo_reuse")
NATURAL = {"vnpg", "rnpg", "trpo_reuse"}
REUSING = {"rpg", "rnpg", "trpo_reuse"}


class DivergenceError(FloatingPointError):
    """Training produced non-finite parameters or a broken estimator invariant."""


@dataclass
class RunRecord:
    rep: int
    iteration: int
    mean_reward: float
    theta_norm: float
    grad_norm: float
    ratio_max: float
    wall_ms: int

    @classmethod
    def header(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def row(self) -> tuple:
        return astuple(self)


def resolve_reuse(algo: str, K_grad: int, K_fim: int) -> tuple[int, int]:
    """Effective ``(K_grad, K_fim)``: vanilla methods never reuse, RPG has no Fisher step."""
    if algo not in ALGOS:
        raise ValueError(f"unknown algorithm {algo!r}; expected one of {ALGOS}")
    if K_grad < 1 or K_fim < 1:
        raise ValueError("reuse sizes must be >= 1")
    if algo in ("vpg", "vnpg"):
        return 1, 1
    if algo == "rpg":
        return K_grad, 1
    return K_grad, K_fim


def _has_closed_form_advantage(env) -> bool:
    return type(env).advantage is not Env.advantage


class NaturalPolicyGradient(BaseEstimator):
    """(Natural) policy gradient with importance-weighted reuse of past batches.

    Parameters
    ----------
    algo : {"vpg", "rpg", "vnpg", "rnpg", "trpo_reuse"}
        ``vpg``/``vnpg`` use the current batch only; ``rpg``/``rnpg`` average
        the gradient over the last ``K_grad`` batches with per-pair policy
        ratios; the natural variants precondition with the regularized Fisher
        estimate built from the last ``K_fim`` batches.
    batch_size : int
        Episodes per iteration (single-path) or i.i.d. occupancy draws.
    schedule, alpha, power : step size ``alpha`` or ``alpha / n**power``.
    independent_fim : bool
        Draw a separate batch for the Fisher estimate so it is independent of
        the gradient estimate.
    theta0 : float, optional
        Initial parameter for the scalar Gaussian policy (ignored for networks).
    """

    def __init__(self, algo="rnpg", n_iter=150, batch_size=4, K_grad=10, K_fim=1,
                 epsilon=1e-3, schedule="constant", alpha=0.01, power=0.9, adam=True,
                 box_radius=1e6, omega_max=None, sampling="single_path",
                 independent_fim=False, trpo_delta=0.01, theta0=None,
                 random_state=None, record_every=1, rep=0):
        self.algo = algo
        self.n_iter = n_iter
        self.batch_size = batch_size
        self.K_grad = K_grad
        self.K_fim = K_fim
        self.epsilon = epsilon
        self.schedule = schedule
        self.alpha = alpha
        self.power = power
        self.adam = adam
        self.box_radius = box_radius
        self.omega_max = omega_max
        self.sampling = sampling
        self.independent_fim = independent_fim
        self.trpo_delta = trpo_delta
        self.theta0 = theta0
        self.random_state = random_state
        self.record_every = record_every
        self.rep = rep

    def _rng(self):
        if isinstance(self.random_state, np.random.Generator):
            return self.random_state
        seed = 0 if self.random_state is None else int(self.random_state)
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))

    def _step_schedule(self) -> StepSchedule:
        if self.schedule == "constant":
            return StepSchedule("constant", self.alpha)
        return StepSchedule(self.schedule, self.alpha, self.power)

    def _sample(self, env, theta, rng):
        if self.sampling == "iid":
            return sample_occupancy_iid(env, self.policy_, theta, self.batch_size, rng)
        if self.sampling == "single_path":
            return sample_single_path(env, self.policy_, theta, self.batch_size, rng)
        raise ValueError(f"unknown sampling mode {self.sampling!r}")

    def fit(self, env, y=None):
        algo = self.algo
        k_grad, k_fim = resolve_reuse(algo, self.K_grad, self.K_fim)
        if self.n_iter < 1 or self.batch_size < 1:
            raise ValueError("n_iter and batch_size must be >= 1")
        schedule = self._step_schedule()
        box = ProjectionBox(self.box_radius)
        natural = algo in NATURAL
        reuse = algo in REUSING
        gamma = env.spec.gamma
        rng = self._rng()

        self.policy_ = policy_for_env(env)
        if isinstance(self.policy_, GaussianShiftPolicy):
            theta = self.policy_.init_params(rng, 0.0 if self.theta0 is None else self.theta0)
        else:
            theta = self.policy_.init_params(rng)
        adv_fn = env.advantage if _has_closed_form_advantage(env) else None
        window = ReplayWindow(max(k_grad, k_fim))
        adam_state = AdamState.zeros(len(theta)) if self.adam and algo != "trpo_reuse" else None

        self.history_ = []
        self.n_failed_steps_ = 0
        start = time.perf_counter()
        for n in range(1, self.n_iter + 1):
            samples = self._sample(env, theta, rng)
            fim_samples = self._sample(env, theta, rng) if natural and self.independent_fim else None
            window.append(Batch(samples, theta, n, fim_samples))
            try:
                if reuse:
                    grad, stats = grad_estimate_reuse(window, self.policy_, theta, k_grad, gamma,
                                                      adv_fn, self.omega_max, return_ratios=True)
                else:
                    grad = grad_estimate_vanilla(window.batches[-1], self.policy_, theta, gamma, adv_fn)
                    stats = RatioStats()
                if natural:
                    if reuse:
                        fim = fim_estimate_reuse(window, self.policy_, theta, k_fim, self.epsilon,
                                                 self.omega_max)
                    else:
                        fim = fim_estimate_vanilla(window.batches[-1], self.policy_, theta, self.epsilon)
                if algo == "trpo_reuse":
                    surrogate = surrogate_objective(window, self.policy_, theta, k_grad, gamma,
                                                    adv_fn, self.omega_max)
                    new_theta, info = trpo_step(theta, grad, fim, self.trpo_delta, surrogate)
                    self.n_failed_steps_ += not info.accepted
                    new_theta = box.project(new_theta)
                else:
                    direction = natural_direction(grad, fim)[0] if natural else grad
                    if adam_state is not None:
                        direction = adam_precondition(direction, adam_state)
                    new_theta = update_step(theta, direction, schedule, n, box)
            except (RatioOverflowError, FactorizationError, FloatingPointError) as exc:
                raise DivergenceError(f"iteration {n}: {exc}") from exc
            if not np.all(np.isfinite(new_theta)):
                raise DivergenceError(f"iteration {n}: parameters became non-finite")
            if n % max(self.record_every, 1) == 0 or n == self.n_iter:
                self.history_.append(RunRecord(
                    rep=self.rep, iteration=n, mean_reward=_mean_reward(samples, gamma),
                    theta_norm=float(np.linalg.norm(new_theta)), grad_norm=float(np.linalg.norm(grad)),
                    ratio_max=stats.max, wall_ms=int(1000 * (time.perf_counter() - start)),
                ))
            theta = new_theta
        self.theta_ = theta
        self.n_iter_ = self.n_iter
        self.env_spec_ = env.spec
        return self

    def predict(self, X):
        """Greedy actions for a matrix of states (mean action for Gaussian policies)."""
        check_is_fitted(self, "theta_")
        X = check_array(X, ensure_2d=True)
        if isinstance(self.policy_, GaussianShiftPolicy):
            return self.theta_[0] - X[:, 0]
        return self.policy_.greedy_actions(self.theta_, X)

    def predict_proba(self, X):
        check_is_fitted(self, "theta_")
        if isinstance(self.policy_, GaussianShiftPolicy):
            raise AttributeError("continuous policies have no class probabilities")
        return self.policy_.probs(self.theta_, check_array(X))

    def score(self, env, y=None, n_episodes: int = 10):
        """Mean undiscounted return of ``n_episodes`` rollouts of the fitted policy."""
        check_is_fitted(self, "theta_")
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([self.rep, 0x5C0])))
        batch = sample_single_path(env, self.policy_, self.theta_, n_episodes, rng)
        return float(batch.episode_returns.mean())

    def params(self):
        check_is_fitted(self, "theta_")
        return self.policy_.params(self.theta_)


def _mean_reward(samples, gamma):
    if samples.mode == "single_path":
        return float(samples.episode_returns.mean())
    return float(samples.rewards.mean() / (1.0 - gamma))
