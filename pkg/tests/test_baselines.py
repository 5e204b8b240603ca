import numpy as np
import pytest
from sklearn.base import clone

from risvec import channel as ch
from risvec.baselines import (
    CentralizedDDPG,
    RandomPowerPolicy,
    ddpg_train,
    random_phase_mode,
    random_power_policy,
)
from risvec.env import EnvConfig, VECEnv, make_env_factory
from risvec.exceptions import DimensionError
from risvec.marl import TrainConfig


def tiny_env(K=2, T=10):
    return EnvConfig(K=K, T=T, geometry=ch.SystemGeometry(n_elements=4))


def test_random_power_policy_range():
    cfg = EnvConfig(K=3, p_max_offload=0.5)
    a = random_power_policy(np.random.default_rng(0), cfg)
    assert a.shape == (3, 2)
    assert np.all(a[:, 0] <= 0.5) and np.all(a >= 0) and np.all(a[:, 1] <= 1.0)


def test_random_phase_mode_switches_env():
    env = random_phase_mode(VECEnv(tiny_env(), seed=0))
    assert env.phase_mode == "random"
    env.step(np.full((2, 2), 0.5))
    assert len(env.theta) == 4


def test_random_power_estimator_metrics():
    model = RandomPowerPolicy(episodes=3, random_state=0).fit(make_env_factory(tiny_env(), seed=0))
    assert len(model.metrics_) == 3
    # uniform powers on [0, 1] W for two components and two vehicles average 2 W
    assert 0.5 < model.metrics_[0]["mean_total_power"] < 3.5
    assert model.predict(np.zeros((2, 5))).shape == (2, 2)
    with pytest.raises(DimensionError):
        model.predict(np.zeros((1, 5)))


def test_random_power_power_is_independent_of_arrival_rate():
    # common random numbers: the policy draws from its own stream
    powers = []
    for eta in (1e6, 3e6):
        cfg = EnvConfig(K=2, T=10, arrival_rate=eta, geometry=ch.SystemGeometry(n_elements=4))
        model = RandomPowerPolicy(episodes=2, random_state=5).fit(make_env_factory(cfg, seed=1))
        powers.append([m["mean_total_power"] for m in model.metrics_])
    assert powers[0] == powers[1]


def test_ddpg_from_train_config_doubles_widths():
    cfg = TrainConfig(actor_hidden=(64, 64), local_critic_hidden=(64, 64, 64), seed=9)
    est = CentralizedDDPG.from_train_config(cfg)
    assert est.actor_hidden == (128, 128)
    assert est.critic_hidden == (128, 128, 128)
    assert est.random_state == 9
    assert clone(est).get_params() == est.get_params()


def test_ddpg_fit_shapes_and_determinism():
    fac = make_env_factory(tiny_env(), seed=2)
    kw = dict(episodes=3, batch_size=8, actor_hidden=(8,), critic_hidden=(8,), random_state=4)
    m1 = CentralizedDDPG(**kw).fit(fac)
    m2 = CentralizedDDPG(**kw).fit(fac)
    assert m1.actor_.layer_widths == [10, 8, 4]
    assert m1.critic_.layer_widths == [14, 8, 1]
    for a, b in zip(m1.metrics_, m2.metrics_):
        for key in a:
            assert np.array_equal(a[key], b[key], equal_nan=True)
    assert np.isfinite(m1.metrics_[-1]["critic1_loss"])
    p = m1.predict(np.zeros((2, 5)))
    assert p.shape == (2, 2) and np.all((p >= 0) & (p <= 1))


def test_ddpg_train_wrapper():
    cfg = TrainConfig(episodes=1, batch_size=8, actor_hidden=(4,), local_critic_hidden=(4,))
    model, metrics = ddpg_train(make_env_factory(tiny_env(), seed=0), cfg)
    assert len(metrics) == 1
    assert model.actor_hidden == (8,)
