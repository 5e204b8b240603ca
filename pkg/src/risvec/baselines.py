"""Comparison policies sharing the environment and the metrics schema."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_batch
from .env import ACT_DIM, OBS_DIM
from .exceptions import DimensionError, NumericError
from .marl import (
    EpisodeStats,
    ObservationScaler,
    ReplayBuffer,
    critic_regression_step,
    noise_at,
)
from .nn import MLP, Adam, soft_update


def random_power_policy(rng, cfg):
    """Uniform powers in ``[0, P_max]`` for every vehicle, shape (K, 2)."""
    return rng.uniform(0.0, 1.0, size=(cfg.K, ACT_DIM)) * cfg.action_high


def random_phase_mode(env):
    """Switch ``env`` to uniformly random RIS phases each slot."""
    env.phase_mode = "random"
    return env


class RandomPowerPolicy(BaseEstimator):
    """Lower-bound reference: uniform random powers, nothing learned.

    ``fit`` only rolls out episodes so the metrics line up with the trained
    methods.
    """

    def __init__(self, episodes=300, random_state=None):
        self.episodes = episodes
        self.random_state = random_state

    def fit(self, env_factory):
        env = env_factory()
        # same stream layout as the learners: the policy draws from the noise stream
        _, noise_ss, _ = np.random.SeedSequence(self.random_state).spawn(3)
        self._rng = np.random.default_rng(noise_ss)
        self.n_agents_ = env.K
        self._cfg = env.config
        self.metrics_ = []
        for episode in range(1, self.episodes + 1):
            env.reset()
            stats = EpisodeStats(env.K)
            for _ in range(env.config.T):
                stats.add_step(env.step(random_power_policy(self._rng, env.config)))
            self.metrics_.append(stats.record(episode, noise_scale=float("nan")))
        return self

    def predict(self, observations):
        check_is_fitted(self, "metrics_")
        obs, _ = check_batch(observations, OBS_DIM, "observations")
        if obs.shape[0] != self.n_agents_:
            raise DimensionError(f"expected {self.n_agents_} observation rows, got {obs.shape[0]}")
        return random_power_policy(self._rng, self._cfg)


class CentralizedDDPG(BaseEstimator):
    """Single-agent DDPG over the joint state (5K) and joint action (2K).

    Trained on the global reward with one actor/critic pair and their
    targets, updated every learning step.
    """

    def __init__(self, lr_critic=1e-3, lr_actor=1e-4, gamma=0.99, tau=0.005, batch_size=64,
                 buffer_size=10**6, episodes=300, noise_scale=0.2, noise_decay=0.995,
                 noise_floor=0.01, warmup=None, actor_hidden=(128, 128),
                 critic_hidden=(128, 128, 128), random_state=None):
        self.lr_critic = lr_critic
        self.lr_actor = lr_actor
        self.gamma = gamma
        self.tau = tau
        self.batch_size = batch_size
        self.buffer_size = buffer_size
        self.episodes = episodes
        self.noise_scale = noise_scale
        self.noise_decay = noise_decay
        self.noise_floor = noise_floor
        self.warmup = warmup
        self.actor_hidden = actor_hidden
        self.critic_hidden = critic_hidden
        self.random_state = random_state

    @classmethod
    def from_train_config(cls, config):
        """Mirror a :class:`~risvec.marl.TrainConfig`, doubling hidden widths."""
        return cls(
            lr_critic=config.lr_critic, lr_actor=config.lr_actor, gamma=config.gamma,
            tau=config.tau, batch_size=config.batch_size, buffer_size=config.buffer_size,
            episodes=config.episodes, noise_scale=config.noise_scale,
            noise_decay=config.noise_decay, noise_floor=config.noise_floor, warmup=config.warmup,
            actor_hidden=tuple(2 * w for w in config.actor_hidden),
            critic_hidden=tuple(2 * w for w in config.local_critic_hidden),
            random_state=config.seed,
        )

    def _setup(self, env):
        K = env.K
        init_ss, noise_ss, replay_ss = np.random.SeedSequence(self.random_state).spawn(3)
        init_rng = np.random.default_rng(init_ss)
        self._noise_rng = np.random.default_rng(noise_ss)
        self._replay_rng = np.random.default_rng(replay_ss)
        self.n_agents_ = K
        self.action_high_ = env.config.action_high.copy()
        self.scaler_ = ObservationScaler(env.config.buffer_scale)
        self.actor_ = MLP([K * OBS_DIM, *self.actor_hidden, K * ACT_DIM], "bounded-sigmoid", init_rng)
        self.critic_ = MLP([K * (OBS_DIM + ACT_DIM), *self.critic_hidden, 1], "linear", init_rng)
        self.target_actor_ = self.actor_.copy()
        self.target_critic_ = self.critic_.copy()
        self._actor_opt = Adam(self.actor_.params, lr=self.lr_actor)
        self._critic_opt = Adam(self.critic_.params, lr=self.lr_critic)
        self.buffer_ = ReplayBuffer(self.buffer_size, K)
        self.metrics_ = []

    def _act(self, obs, noise):
        x = self.scaler_(obs).reshape(-1)
        a = self.actor_.forward(x)
        if noise > 0:
            a = a + noise * self._noise_rng.standard_normal(a.shape)
        return np.clip(a, 0.0, 1.0).reshape(self.n_agents_, ACT_DIM) * self.action_high_

    def _learn(self, stats):
        batch = self.buffer_.sample(self.batch_size, self._replay_rng)
        B = batch.global_reward.size
        s = self.scaler_(batch.states).reshape(B, -1)
        s2 = self.scaler_(batch.next_states).reshape(B, -1)
        a = (batch.actions / self.action_high_).reshape(B, -1)

        a2 = self.target_actor_.forward(s2)
        y = batch.global_reward + self.gamma * self.target_critic_.forward(np.concatenate([s2, a2], 1))[:, 0]
        loss = critic_regression_step(self.critic_, self._critic_opt, np.concatenate([s, a], 1), y)
        stats.add_loss("critic1_loss", loss)

        pi = self.actor_.forward(s)
        _, g = self.critic_.backward(np.concatenate([s, pi], 1), np.full((B, 1), 1.0 / B))
        grads, _ = self.actor_.backward(s, -g[:, s.shape[1]:])
        if not all(np.all(np.isfinite(gr)) for gr in grads):
            raise NumericError("actor gradient is not finite")
        self._actor_opt.step(grads)

        soft_update(self.target_critic_, self.critic_, self.tau)
        soft_update(self.target_actor_, self.actor_, self.tau)

    def fit(self, env_factory):
        env = env_factory()
        self._setup(env)
        warmup = self.batch_size if self.warmup is None else max(self.warmup, self.batch_size)
        for episode in range(1, self.episodes + 1):
            obs = env.reset()
            noise = noise_at(episode, self.noise_scale, self.noise_decay, self.noise_floor)
            stats = EpisodeStats(env.K)
            for _ in range(env.config.T):
                self.scaler_.update(obs)
                out = env.step(self._act(obs, noise))
                self.buffer_.store(obs, out.diagnostics["actions"], out.local_rewards,
                                   out.global_reward, out.observations)
                stats.add_step(out)
                if len(self.buffer_) > warmup:
                    self._learn(stats)
                obs = out.observations
            self.metrics_.append(stats.record(episode, noise_scale=noise))
        return self

    def predict(self, observations):
        check_is_fitted(self, "actor_")
        obs, _ = check_batch(observations, OBS_DIM, "observations")
        if obs.shape[0] != self.n_agents_:
            raise DimensionError(f"expected {self.n_agents_} observation rows, got {obs.shape[0]}")
        return self._act(obs, 0.0)


def ddpg_train(env_factory, config):
    model = CentralizedDDPG.from_train_config(config).fit(env_factory)
    return model, model.metrics_

