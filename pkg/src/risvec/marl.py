"""
Modified MADDPG for per-vehicle power allocation.

Each agent k owns an actor ``pi_k(s_k)`` and a local critic ``Q_k(s_k, a_k)``
trained on its own reward. Two global critics ``Q_g1, Q_g2`` see the joint
state and action and regress to a shared twin-min target built from the
global reward. The actor ascends the sum of the global-critic and
local-critic action gradients.

Global critics learn on every learning step; local critics and actors only
during episodes whose 1-based index is a multiple of ``delay``.
"""

import math
from collections import namedtuple
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_batch
from .env import ACT_DIM, OBS_DIM
from .exceptions import CapacityError, ConfigError, DimensionError, NumericError
from .nn import MLP, Adam, soft_update

Batch = namedtuple("Batch", "states actions local_rewards global_reward next_states")


@dataclass(frozen=True)
class Transition:
    joint_state: np.ndarray  # (K, 5)
    joint_action: np.ndarray  # (K, 2)
    local_rewards: np.ndarray  # (K,)
    global_reward: float
    next_joint_state: np.ndarray  # (K, 5)


@dataclass(frozen=True)
class TrainConfig:
    lr_critic: float = 1e-3
    lr_actor: float = 1e-4
    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 64
    buffer_size: int = 10**6
    delay: int = 2
    episodes: int = 300
    noise_scale: float = 0.2
    noise_decay: float = 0.995
    noise_floor: float = 0.01
    warmup: int | None = None
    actor_hidden: tuple = (64, 64)
    local_critic_hidden: tuple = (64, 64, 64)
    global_critic_hidden: tuple = (128, 128, 128)
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ConfigError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not 0 < self.tau <= 1:
            raise ConfigError(f"tau must lie in (0, 1], got {self.tau}")
        if self.delay < 1 or self.batch_size < 1:
            raise ConfigError("delay and batch_size must be >= 1")
        if self.buffer_size < self.batch_size:
            raise ConfigError("buffer_size must be >= batch_size")
        if self.episodes < 0:
            raise ConfigError("episodes must be >= 0")
        object.__setattr__(self, "actor_hidden", tuple(self.actor_hidden))
        object.__setattr__(self, "local_critic_hidden", tuple(self.local_critic_hidden))
        object.__setattr__(self, "global_critic_hidden", tuple(self.global_critic_hidden))

    def estimator_params(self):
        params = asdict(self)
        params["random_state"] = params.pop("seed")
        return params


class ReplayBuffer:
    """FIFO ring of joint transitions.

    Storage grows geometrically up to ``capacity`` so a large nominal
    capacity costs nothing until it is used.
    """

    def __init__(self, capacity, n_agents, obs_dim=OBS_DIM, act_dim=ACT_DIM):
        if capacity < 1:
            raise ConfigError("replay capacity must be >= 1")
        self.capacity = int(capacity)
        self.n_agents = n_agents
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self._data = {}
        self._alloc(min(self.capacity, 1024))
        self.size = 0
        self._next = 0

    def _alloc(self, n):
        K = self.n_agents
        shapes = {
            "states": (K, self.obs_dim),
            "actions": (K, self.act_dim),
            "local_rewards": (K,),
            "global_reward": (),
            "next_states": (K, self.obs_dim),
        }
        for key, shape in shapes.items():
            arr = np.zeros((n, *shape))
            old = self._data.get(key)
            if old is not None:
                arr[: old.shape[0]] = old
            self._data[key] = arr

    def __len__(self):
        return self.size

    def store(self, state, action, local_rewards, global_reward, next_state):
        allocated = self._data["states"].shape[0]
        if self._next >= allocated:
            self._alloc(min(self.capacity, 2 * allocated))
        i = self._next
        d = self._data
        d["states"][i] = state
        d["actions"][i] = action
        d["local_rewards"][i] = local_rewards
        d["global_reward"][i] = global_reward
        d["next_states"][i] = next_state
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def store_transition(self, t):
        self.store(t.joint_state, t.joint_action, t.local_rewards, t.global_reward, t.next_joint_state)

    def _ordered(self):
        """Storage indices from oldest to newest."""
        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.size) + self._next) % self.capacity

    def transition(self, i):
        """The i-th oldest stored transition."""
        j = self._ordered()[i]
        d = self._data
        return Transition(d["states"][j].copy(), d["actions"][j].copy(), d["local_rewards"][j].copy(),
                          float(d["global_reward"][j]), d["next_states"][j].copy())

    def sample_indices(self, batch_size, rng):
        if batch_size > self.size:
            raise CapacityError(f"cannot sample {batch_size} transitions from {self.size}")
        return rng.choice(self.size, size=batch_size, replace=False)

    def sample(self, batch_size, rng):
        """Uniform mini-batch without replacement."""
        idx = self._ordered()[self.sample_indices(batch_size, rng)]
        return Batch(*(self._data[key][idx] for key in Batch._fields))


class ObservationScaler:
    """Bit-valued features divided by a fixed scale, SNR by its running max."""

    def __init__(self, bit_scale=1e5):
        self.bit_scale = bit_scale
        self.snr_max = 0.0

    def update(self, obs):
        self.snr_max = max(self.snr_max, float(np.max(np.asarray(obs)[..., 4])))

    def __call__(self, obs):
        obs = np.asarray(obs, dtype=np.float64)
        scale = np.full(OBS_DIM, 1.0 / self.bit_scale)
        scale[4] = 1.0 / max(self.snr_max, 1e-12)
        return obs * scale


def joint_input(states, actions):
    """Concatenate (B, K, 5) states and (B, K, 2) actions into (B, 7K)."""
    B = states.shape[0]
    return np.concatenate([states.reshape(B, -1), actions.reshape(B, -1)], axis=1)


def select_action(actor, obs, noise_scale, rng, high):
    """Actor output plus Gaussian noise, clamped to ``[0, high]`` per component.

    ``obs`` must already be normalized; ``noise_scale`` is a fraction of
    ``high``. Returns watts.
    """
    a = actor.forward(obs)
    if noise_scale > 0:
        a = a + noise_scale * rng.standard_normal(a.shape)
    return np.clip(a, 0.0, 1.0) * high


def critic_regression_step(net, optimizer, x, y):
    """One Adam step on mean squared error; returns the pre-step loss."""
    residual = net.forward(x)[:, 0] - y
    loss = float(np.mean(residual**2))
    if not math.isfinite(loss):
        raise NumericError("critic loss is not finite")
    grads, _ = net.backward(x, (2.0 * residual / residual.size)[:, None])
    optimizer.step(grads)
    return loss


def global_target(r_g, next_states, target_actors, target_critics, gamma):
    """Twin-min bootstrap target for the global critics.

    Returns ``(y_g, bootstraps)`` where ``bootstraps[j]`` is target critic
    j's value at the target-policy action.
    """
    K = next_states.shape[1]
    a_next = np.stack([target_actors[k].forward(next_states[:, k, :]) for k in range(K)], axis=1)
    x_next = joint_input(next_states, a_next)
    boot = np.stack([c.forward(x_next)[:, 0] for c in target_critics])
    return r_g + gamma * boot.min(axis=0), boot


def local_target(r_l, next_state_k, target_actor, target_local_critic, gamma):
    a_next = target_actor.forward(next_state_k)
    q_next = target_local_critic.forward(np.concatenate([next_state_k, a_next], axis=1))[:, 0]
    return r_l + gamma * q_next


def actor_gradient(k, states, actions, actor, global_critic, local_critic):
    """Parameter gradients of the negated actor objective for agent k.

    Agent k's action is replaced by ``actor(s_k)``; other agents keep their
    batch actions.
    """
    B, K, _ = states.shape
    s_k = states[:, k, :]
    pi = actor.forward(s_k)
    joint = actions.copy()
    joint[:, k, :] = pi
    ones = np.full((B, 1), 1.0 / B)
    _, g_joint = global_critic.backward(joint_input(states, joint), ones)
    start = K * OBS_DIM + k * ACT_DIM
    g_global = g_joint[:, start:start + ACT_DIM]
    _, g_loc = local_critic.backward(np.concatenate([s_k, pi], axis=1), ones)
    g_local = g_loc[:, OBS_DIM:]
    grads, _ = actor.backward(s_k, -(g_global + g_local))
    return grads


class _Agent:
    def __init__(self, actor, local_critic, lr_actor, lr_critic):
        self.actor = actor
        self.target_actor = actor.copy()
        self.local_critic = local_critic
        self.target_local_critic = local_critic.copy()
        self.actor_opt = Adam(actor.params, lr=lr_actor)
        self.critic_opt = Adam(local_critic.params, lr=lr_critic)


class EpisodeStats:
    """Accumulates per-step quantities into one metrics record."""

    def __init__(self, K):
        self.K = K
        self.steps = 0
        self.global_reward = 0.0
        self.agent_rewards = np.zeros(K)
        self.power = 0.0
        self.buffer = 0.0
        self.objective = 0.0
        self.losses = {}

    def add_step(self, outcome):
        d = outcome.diagnostics
        self.steps += 1
        self.global_reward += outcome.global_reward
        self.agent_rewards += outcome.local_rewards
        self.power += float(np.sum(d["power"]))
        self.buffer += float(np.mean(outcome.observations[:, 0]))
        self.objective += d["objective"]

    def add_loss(self, name, value):
        self.losses.setdefault(name, []).append(value)

    def record(self, episode, **extra):
        n = max(self.steps, 1)
        rec = {
            "episode": episode,
            "global_reward": self.global_reward / n,
            "mean_total_power": self.power / n,
            "mean_buffer": self.buffer / n,
            "mean_objective": self.objective / n,
        }
        for name in ("critic1_loss", "critic2_loss", "local_critic_loss"):
            vals = self.losses.get(name)
            rec[name] = float(np.mean(vals)) if vals else float("nan")
        rec.update(extra)
        rec["agent_rewards"] = (self.agent_rewards / n).tolist()
        return rec


def noise_at(episode, scale, decay, floor):
    """Exploration scale for a 1-based episode index."""
    return max(floor, scale * decay ** (episode - 1))


class ModifiedMADDPG(BaseEstimator):
    """Multi-agent DDPG with per-agent local critics and twin global critics.

    Hyperparameters mirror :class:`TrainConfig`. ``fit`` takes a zero-argument
    callable returning a seeded :class:`~risvec.env.VECEnv`; ``predict`` maps
    a (K, 5) observation array to (K, 2) powers in watts.

    Attributes
    ----------
    actors_ : list of MLP
    metrics_ : list of dict
        One record per episode.
    twin_min_checks_ : int
        Batch rows on which the twin-min target property was verified.
    """

    def __init__(self, lr_critic=1e-3, lr_actor=1e-4, gamma=0.99, tau=0.005, batch_size=64,
                 buffer_size=10**6, delay=2, episodes=300, noise_scale=0.2, noise_decay=0.995,
                 noise_floor=0.01, warmup=None, actor_hidden=(64, 64),
                 local_critic_hidden=(64, 64, 64), global_critic_hidden=(128, 128, 128),
                 random_state=None):
        self.lr_critic = lr_critic
        self.lr_actor = lr_actor
        self.gamma = gamma
        self.tau = tau
        self.batch_size = batch_size
        self.buffer_size = buffer_size
        self.delay = delay
        self.episodes = episodes
        self.noise_scale = noise_scale
        self.noise_decay = noise_decay
        self.noise_floor = noise_floor
        self.warmup = warmup
        self.actor_hidden = actor_hidden
        self.local_critic_hidden = local_critic_hidden
        self.global_critic_hidden = global_critic_hidden
        self.random_state = random_state

    def _setup(self, env):
        K = env.K
        init_ss, noise_ss, replay_ss = np.random.SeedSequence(self.random_state).spawn(3)
        init_rng = np.random.default_rng(init_ss)
        self._noise_rng = np.random.default_rng(noise_ss)
        self._replay_rng = np.random.default_rng(replay_ss)
        self.n_agents_ = K
        self.action_high_ = env.config.action_high.copy()
        self.scaler_ = ObservationScaler(env.config.buffer_scale)
        self.agents_ = []
        for _ in range(K):
            actor = MLP([OBS_DIM, *self.actor_hidden, ACT_DIM], "bounded-sigmoid", init_rng)
            critic = MLP([OBS_DIM + ACT_DIM, *self.local_critic_hidden, 1], "linear", init_rng)
            self.agents_.append(_Agent(actor, critic, self.lr_actor, self.lr_critic))
        width = K * (OBS_DIM + ACT_DIM)
        self.global_critics_ = [MLP([width, *self.global_critic_hidden, 1], "linear", init_rng)
                                for _ in range(2)]
        self.target_global_critics_ = [c.copy() for c in self.global_critics_]
        self._global_opts = [Adam(c.params, lr=self.lr_critic) for c in self.global_critics_]
        self.buffer_ = ReplayBuffer(self.buffer_size, K)
        self.metrics_ = []
        self.twin_min_checks_ = 0
        self.learning_steps_ = 0
        self.actor_updates_ = 0

    @property
    def actors_(self):
        return [a.actor for a in self.agents_]

    def _warmup(self):
        return self.batch_size if self.warmup is None else max(self.warmup, self.batch_size)

    def _normalized(self, batch):
        return (self.scaler_(batch.states), batch.actions / self.action_high_,
                self.scaler_(batch.next_states))

    def update_global_critics(self, batch):
        s, a, s2 = self._normalized(batch)
        targets = [ag.target_actor for ag in self.agents_]
        y, boot = global_target(batch.global_reward, s2, targets, self.target_global_critics_, self.gamma)
        # twin-min property, checked on every row
        for j in range(2):
            if not np.all(y <= batch.global_reward + self.gamma * boot[j]):
                raise AssertionError("twin-min target exceeds an individual bootstrap")
        self.twin_min_checks_ += y.size
        x = joint_input(s, a)
        return tuple(critic_regression_step(c, opt, x, y)
                     for c, opt in zip(self.global_critics_, self._global_opts))

    def update_local_critic(self, k, batch):
        s, a, s2 = self._normalized(batch)
        ag = self.agents_[k]
        y = local_target(batch.local_rewards[:, k], s2[:, k, :], ag.target_actor,
                         ag.target_local_critic, self.gamma)
        x = np.concatenate([s[:, k, :], a[:, k, :]], axis=1)
        return critic_regression_step(ag.local_critic, ag.critic_opt, x, y)

    def update_actor(self, k, batch):
        s, a, _ = self._normalized(batch)
        ag = self.agents_[k]
        grads = actor_gradient(k, s, a, ag.actor, self.global_critics_[0], ag.local_critic)
        norm = float(np.sqrt(sum(np.sum(g * g) for g in grads)))
        if not math.isfinite(norm):
            raise NumericError("actor gradient is not finite")
        ag.actor_opt.step(grads)
        self.actor_updates_ += 1
        return norm

    def _learn(self, episode, stats):
        batch = self.buffer_.sample(self.batch_size, self._replay_rng)
        l1, l2 = self.update_global_critics(batch)
        for c, t in zip(self.global_critics_, self.target_global_critics_):
            soft_update(t, c, self.tau)
        stats.add_loss("critic1_loss", l1)
        stats.add_loss("critic2_loss", l2)
        if episode % self.delay == 0:
            for k, ag in enumerate(self.agents_):
                stats.add_loss("local_critic_loss", self.update_local_critic(k, batch))
                self.update_actor(k, batch)
                soft_update(ag.target_actor, ag.actor, self.tau)
                soft_update(ag.target_local_critic, ag.local_critic, self.tau)
        self.learning_steps_ += 1

    def _act(self, obs, noise):
        x = self.scaler_(obs)
        return np.stack([
            select_action(ag.actor, x[k], noise, self._noise_rng, self.action_high_)
            for k, ag in enumerate(self.agents_)
        ])

    def fit(self, env_factory):
        env = env_factory()
        self._setup(env)
        warmup = self._warmup()
        for episode in range(1, self.episodes + 1):
            obs = env.reset()
            noise = noise_at(episode, self.noise_scale, self.noise_decay, self.noise_floor)
            stats = EpisodeStats(env.K)
            for _ in range(env.config.T):
                self.scaler_.update(obs)
                actions = self._act(obs, noise)
                out = env.step(actions)
                self.buffer_.store(obs, out.diagnostics["actions"], out.local_rewards,
                                   out.global_reward, out.observations)
                stats.add_step(out)
                if len(self.buffer_) > warmup:
                    self._learn(episode, stats)
                obs = out.observations
            self.metrics_.append(stats.record(episode, noise_scale=noise))
        return self

    def predict(self, observations):
        """Deterministic powers (watts) for a (K, 5) observation array."""
        check_is_fitted(self, "agents_")
        obs, _ = check_batch(observations, OBS_DIM, "observations")
        if obs.shape[0] != self.n_agents_:
            raise DimensionError(f"expected {self.n_agents_} observation rows, got {obs.shape[0]}")
        return self._act(obs, 0.0)


def train(env_factory, config):
    """Train with a :class:`TrainConfig`; returns ``(estimator, metrics)``."""
    model = ModifiedMADDPG(**config.estimator_params()).fit(env_factory)
    return model, model.metrics_
