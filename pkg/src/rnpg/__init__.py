"""Natural policy gradient with importance-weighted trajectory reuse."""
from .agent import NaturalPolicyGradient
from .envs import CartPole, LQC, make_env
from .experiment import ExperimentConfig, lqc_verify, run_experiment, sweep_reuse
from .policies import GaussianShiftPolicy, SoftmaxMLPPolicy, make_policy

__all__ = [
    "CartPole",
    "ExperimentConfig",
    "GaussianShiftPolicy",
    "LQC",
    "NaturalPolicyGradient",
    "SoftmaxMLPPolicy",
    "lqc_verify",
    "make_env",
    "make_policy",
    "run_experiment",
    "sweep_reuse",
]
__version__ = "0.1.0"
