import dataclasses

import numpy as np
import pytest
from sklearn.base import clone

from rnpg.agent import DivergenceError, NaturalPolicyGradient, RunRecord, resolve_reuse
from rnpg.envs import CartPole, LQC


def history_rows(agent):
    # wall-clock time is the only field allowed to differ between runs
    return [dataclasses.replace(r, wall_ms=0) for r in agent.history_]


def test_get_params_and_clone():
    a = NaturalPolicyGradient(algo="rpg", K_grad=7, alpha=0.3)
    p = a.get_params()
    assert p["algo"] == "rpg" and p["K_grad"] == 7 and p["alpha"] == 0.3
    b = clone(a)
    assert b.get_params() == p
    b.set_params(K_grad=3)
    assert b.K_grad == 3 and a.K_grad == 7


def test_resolve_reuse():
    assert resolve_reuse("vnpg", 10, 5) == (1, 1)
    assert resolve_reuse("rpg", 10, 5) == (10, 1)
    assert resolve_reuse("rnpg", 10, 5) == (10, 5)
    with pytest.raises(ValueError):
        resolve_reuse("ppo", 1, 1)
    with pytest.raises(ValueError):
        resolve_reuse("rnpg", 0, 1)


def test_k1_reuse_matches_vanilla_cartpole():
    kw = dict(n_iter=15, batch_size=2, random_state=4)
    v = NaturalPolicyGradient(algo="vnpg", **kw).fit(CartPole())
    r = NaturalPolicyGradient(algo="rnpg", K_grad=1, K_fim=1, **kw).fit(CartPole())
    assert np.array_equal(v.theta_, r.theta_)
    assert history_rows(v) == history_rows(r)


def test_k1_reuse_matches_vanilla_lqc():
    kw = dict(n_iter=40, batch_size=5, sampling="iid", schedule="polynomial", alpha=1.0, power=0.9,
              adam=False, epsilon=0.01, theta0=2.0, independent_fim=True, random_state=9)
    v = NaturalPolicyGradient(algo="vnpg", **kw).fit(LQC())
    r = NaturalPolicyGradient(algo="rnpg", K_grad=1, K_fim=1, **kw).fit(LQC())
    assert np.array_equal(v.theta_, r.theta_)
    assert history_rows(v) == history_rows(r)


def test_lqc_training_moves_towards_optimum():
    a = NaturalPolicyGradient(algo="rnpg", K_grad=5, n_iter=400, batch_size=5, sampling="iid",
                              schedule="polynomial", alpha=1.0, power=0.9, adam=False, epsilon=0.01,
                              theta0=2.0, independent_fim=True, random_state=1).fit(LQC())
    assert abs(a.theta_[0]) < 0.5
    assert a.predict(np.array([[0.5]]))[0] == pytest.approx(a.theta_[0] - 0.5)
    with pytest.raises(AttributeError):
        a.predict_proba(np.array([[0.0]]))


@pytest.mark.parametrize("algo", ["vpg", "rpg", "vnpg", "rnpg", "trpo_reuse"])
def test_every_algorithm_runs_on_cartpole(algo):
    a = NaturalPolicyGradient(algo=algo, n_iter=4, batch_size=2, K_grad=3, K_fim=2, random_state=0)
    a.fit(CartPole())
    assert a.theta_.shape == (226,)
    assert [r.iteration for r in a.history_] == [1, 2, 3, 4]
    assert all(np.isfinite(r.mean_reward) for r in a.history_)


def test_predict_and_score_cartpole():
    a = NaturalPolicyGradient(n_iter=2, batch_size=2, random_state=0).fit(CartPole())
    X = np.zeros((3, 4))
    assert set(a.predict(X)) <= {0, 1}
    np.testing.assert_allclose(a.predict_proba(X).sum(axis=1), 1.0)
    assert 1 <= a.score(CartPole(), n_episodes=3) <= 200
    params = a.params()
    assert params.kind == "softmax_mlp" and params.dims["hidden"] == 32


def test_predict_before_fit():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        NaturalPolicyGradient().predict(np.zeros((1, 4)))


def test_record_every():
    a = NaturalPolicyGradient(n_iter=7, batch_size=1, record_every=3, random_state=0).fit(CartPole())
    assert [r.iteration for r in a.history_] == [3, 6, 7]


def test_reuse_reports_ratios():
    a = NaturalPolicyGradient(algo="rnpg", K_grad=4, n_iter=6, batch_size=2, random_state=2).fit(CartPole())
    assert a.history_[0].ratio_max == 1.0
    assert any(r.ratio_max != 1.0 for r in a.history_[1:])


def test_divergence_is_reported(monkeypatch):
    import rnpg.agent as agent_mod

    def broken(*args, **kwargs):
        raise FloatingPointError("boom")

    monkeypatch.setattr(agent_mod, "update_step", broken)
    a = NaturalPolicyGradient(n_iter=3, batch_size=1, random_state=0)
    with pytest.raises(DivergenceError, match="iteration 1"):
        a.fit(CartPole())


def test_bad_hyperparameters():
    with pytest.raises(ValueError):
        NaturalPolicyGradient(n_iter=0).fit(CartPole())
    with pytest.raises(ValueError):
        NaturalPolicyGradient(sampling="mixed", n_iter=1).fit(CartPole())


def test_record_header():
    assert RunRecord.header() == ["rep", "iteration", "mean_reward", "theta_norm", "grad_norm",
                                  "ratio_max", "wall_ms"]
