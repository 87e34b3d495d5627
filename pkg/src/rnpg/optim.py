"""Parameter updates: projected ascent, Adam preconditioning, KL-constrained steps."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .estimators import natural_direction

KL_SLACK = 1e-12


@dataclass(frozen=True)
class StepSchedule:
    """``alpha`` (constant) or ``alpha / n**power`` (polynomial), for n = 1, 2, ..."""

    kind: str = "constant"
    alpha: float = 0.01
    power: float = 0.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("step size alpha must be positive")
        if self.kind == "polynomial":
            if not 0.5 < self.power <= 1.0:
                raise ValueError("polynomial schedule needs power in (0.5, 1]")
        elif self.kind != "constant":
            raise ValueError(f"unknown schedule kind {self.kind!r}")

    def __call__(self, n: int) -> float:
        if n < 1:
            raise ValueError("iterations are counted from 1")
        if self.kind == "constant":
            return self.alpha
        return self.alpha / n**self.power


@dataclass(frozen=True)
class ProjectionBox:
    radius: float = 1e6

    def __post_init__(self):
        if not (np.isfinite(self.radius) and self.radius > 0):
            raise ValueError("box radius must be positive and finite")

    def project(self, theta):
        return np.clip(theta, -self.radius, self.radius)


def update_step(theta, direction, schedule: StepSchedule, n: int, box: ProjectionBox = ProjectionBox()):
    direction = np.asarray(direction, dtype=float)
    if not np.all(np.isfinite(direction)):
        raise FloatingPointError("update direction is not finite")
    return box.project(np.asarray(theta, dtype=float) + schedule(n) * direction)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, d: int) -> "AdamState":
        return cls(np.zeros(d), np.zeros(d), 0)


def adam_precondition(direction, state: AdamState, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam transform of an ascent direction; mutates ``state``."""
    d = np.asarray(direction, dtype=float)
    state.t += 1
    state.m = beta1 * state.m + (1 - beta1) * d
    state.v = beta2 * state.v + (1 - beta2) * d * d
    m_hat = state.m / (1 - beta1**state.t)
    v_hat = state.v / (1 - beta2**state.t)
    return m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class TrustRegionInfo:
    accepted: bool
    backtracks: int
    kl: float
    improvement: float
    full_step: np.ndarray = field(repr=False, default=None)


def trpo_step(theta, grad_hat, fim_hat, delta: float,
              objective_eval: Optional[Callable] = None, max_backtracks: int = 10):
    """Natural step scaled to the quadratic KL radius, then halved until accepted.

    A candidate is accepted when the quadratic KL is within ``delta`` and the
    objective (``objective_eval`` if given, else the linear model) does not
    decrease. Returns ``(theta_new, info)``; ``theta`` is returned unchanged if
    every candidate fails.
    """
    theta = np.asarray(theta, dtype=float)
    g = np.asarray(grad_hat, dtype=float)
    f = np.atleast_2d(np.asarray(fim_hat, dtype=float))
    if not np.any(g):
        return theta.copy(), TrustRegionInfo(False, 0, 0.0, 0.0, np.zeros_like(theta))
    x, _ = natural_direction(g, f)
    xfx = float(x @ f @ x)
    if xfx <= 0:
        raise ArithmeticError("x^T F x <= 0: Fisher estimate is not positive definite")
    step = np.sqrt(2.0 * delta / xfx) * x
    full = step.copy()
    base = objective_eval(theta) if objective_eval is not None else 0.0
    for k in range(max_backtracks):
        kl = 0.5 * float(step @ f @ step)
        if objective_eval is not None:
            improvement = objective_eval(theta + step) - base
        else:
            improvement = float(g @ step)
        if kl <= delta + KL_SLACK and improvement >= 0:
            return theta + step, TrustRegionInfo(True, k, kl, improvement, full)
        step = 0.5 * step
    return theta.copy(), TrustRegionInfo(False, max_backtracks, 0.0, 0.0, full)
