"""
Multi-vehicle edge-computing environment.

Each slot every vehicle picks an offloading power and a local CPU power.
Offloaded bits follow the Shannon rate through the RIS, local bits follow
the DVFS frequency ``(p_l / c) ** (1/3)``. Tasks arrive as Poisson packets
and wait in a per-vehicle buffer.

Observation of vehicle k (width 5), emitted after slot t::

    [q_k(t+1), q_ko(t), q_kl(t), q_ko(t) + q_kl(t) - q_k(t), snr_k(t)]

i.e. the buffer entering the next slot, what the last slot could serve,
the signed over-service of the last slot and the last SNR.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import channel as ch
from .exceptions import ConfigError, DimensionError, DomainError
from .phase_opt import bcd_optimize, modulus_sum_objective, random_phases

OBS_DIM = 5
ACT_DIM = 2
PHASE_MODES = ("bcd", "random")


@dataclass(frozen=True)
class RoadGeometry:
    """Two perpendicular straight roads crossing at ``center``.

    Vehicles drive along x (road 0) or y (road 1) and wrap around at
    ``center +/- half_length``.
    """

    center: tuple = (200.0, 200.0, 0.0)
    half_length: float = 50.0

    def __post_init__(self):
        if len(self.center) != 3:
            raise ConfigError("road center must be a 3-vector")
        if not self.half_length > 0:
            raise ConfigError("road half_length must be > 0")
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))


@dataclass(frozen=True)
class EnvConfig:
    K: int = 8
    dt: float = 0.1
    arrival_rate: float = 3e6
    bandwidth: float = 1e6
    cycles_per_bit: float = 500.0
    capacitance: float = 1e-28
    f_max: float = 2.15e9
    p_max_offload: float = 1.0
    p_max_local: float = 1.0
    w1: float = 1.0
    w2: float = 0.6
    pen1: float = 2.0
    pen2: float = 2.0
    # None -> 2x / 1x the mean arrivals per slot
    buffer_threshold: float | None = None
    overflow_margin: float | None = None
    buffer_scale: float = 1e5
    task_unit: float = 1000.0
    T: int = 100
    speed_range: tuple = (10 / 3.6, 15 / 3.6)
    n_bits: int = 3
    phase_mode: str = "bcd"
    bcd_max_sweeps: int = 50
    road: RoadGeometry = field(default_factory=RoadGeometry)
    geometry: ch.SystemGeometry = field(default_factory=ch.SystemGeometry)
    channel: ch.ChannelParams = field(default_factory=ch.ChannelParams)

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 1:
            raise ConfigError(f"K must be an integer >= 1, got {self.K}")
        if int(self.T) != self.T or self.T < 1:
            raise ConfigError(f"T must be an integer >= 1, got {self.T}")
        for name in ("dt", "bandwidth", "cycles_per_bit", "capacitance", "f_max",
                     "p_max_offload", "p_max_local", "buffer_scale", "task_unit"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        for name in ("arrival_rate", "w1", "w2", "pen1", "pen2"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        lo, hi = self.speed_range
        if not 0 <= lo <= hi:
            raise ConfigError(f"speed_range must satisfy 0 <= lo <= hi, got {self.speed_range}")
        if self.n_bits < 0:
            raise ConfigError("n_bits must be >= 0")
        if self.phase_mode not in PHASE_MODES:
            raise ConfigError(f"phase_mode must be one of {PHASE_MODES}, got {self.phase_mode!r}")
        if self.road.center[2] == self.geometry.ris_pos[2]:
            raise ConfigError("road plane intersects the RIS height; vehicles could hit the RIS")

    @property
    def n_elements(self):
        return self.geometry.n_elements

    @property
    def mean_arrivals(self):
        return self.arrival_rate * self.dt

    @property
    def resolved_buffer_threshold(self):
        if self.buffer_threshold is None:
            return 2.0 * self.mean_arrivals
        return self.buffer_threshold

    @property
    def resolved_overflow_margin(self):
        if self.overflow_margin is None:
            return self.mean_arrivals
        return self.overflow_margin

    @property
    def action_high(self):
        return np.array([self.p_max_offload, self.p_max_local])


@dataclass
class VehicleState:
    position: np.ndarray
    velocity: np.ndarray
    buffer: float
    last_snr: float


@dataclass
class StepOutcome:
    observations: np.ndarray  # (K, 5)
    local_rewards: np.ndarray  # (K,)
    global_reward: float
    diagnostics: dict
    done: bool = False


def sample_arrivals(rng, arrival_rate, dt, task_unit=1000.0, size=None):
    """Poisson packet arrivals in bits with mean ``arrival_rate * dt``."""
    if arrival_rate < 0:
        raise DomainError(f"arrival_rate must be >= 0, got {arrival_rate}")
    return rng.poisson(arrival_rate * dt / task_unit, size=size) * task_unit


def local_capacity(p_l, cfg):
    """Bits processed locally in one slot at local power ``p_l``."""
    p_l = np.asarray(p_l, dtype=np.float64)
    if np.any(p_l < 0):
        raise DomainError("local power must be >= 0")
    freq = np.minimum(np.cbrt(p_l / cfg.capacitance), cfg.f_max)
    out = cfg.dt * freq / cfg.cycles_per_bit
    return float(out) if out.ndim == 0 else out


def offload_capacity(p_o, gain, cfg):
    """Bits offloaded in one slot at power ``p_o`` over a link of power gain ``gain``."""
    gamma = ch.snr(np.asarray(p_o, dtype=np.float64), gain, cfg.channel.noise_power)
    out = cfg.dt * cfg.bandwidth * np.log2(1.0 + gamma)
    return float(out) if out.ndim == 0 else out


def queue_update(q, q_o, q_l, arrivals):
    """Return ``(q_next, overflow)``; overflow is service capacity left unused."""
    served = q_o + q_l
    q_next = np.maximum(0.0, q - served) + arrivals
    overflow = np.maximum(0.0, served - q)
    if np.ndim(q_next) == 0:
        return float(q_next), float(overflow)
    return q_next, overflow


def local_reward(action, q_next, overflow, cfg):
    """Per-vehicle reward; vectorized over the leading axis of ``action``."""
    action = np.asarray(action, dtype=np.float64)
    power = action[..., 0] + action[..., 1]
    cost = cfg.w1 * power + cfg.w2 * np.asarray(q_next) / cfg.buffer_scale
    r = -cost
    r = r - cfg.pen1 * (np.asarray(q_next) > cfg.resolved_buffer_threshold)
    r = r - cfg.pen2 * (np.asarray(overflow) > cfg.resolved_overflow_margin)
    return float(r) if np.ndim(r) == 0 else r


def global_reward(local):
    local = np.asarray(local, dtype=np.float64)
    if local.size == 0:
        raise DomainError("global reward needs at least one local reward")
    return float(np.mean(local))


class VECEnv:
    """RIS-assisted vehicular edge computing environment for K agents.

    Parameters
    ----------
    config : EnvConfig
    seed : int or numpy.random.SeedSequence, optional
        Seeds three independent streams: mobility, task arrivals and random
        phases. Switching the phase source therefore leaves arrivals and
        mobility untouched.
    """

    obs_dim = OBS_DIM
    act_dim = ACT_DIM

    def __init__(self, config=None, seed=None):
        self.config = config if config is not None else EnvConfig()
        self.phase_mode = self.config.phase_mode
        self.h_rb = ch.ris_bs_gain(self.config.geometry, self.config.channel)
        self._theta = None
        self.clamp_count = 0
        self.reset(seed)

    @property
    def K(self):
        return self.config.K

    def _seed(self, seed):
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        mob, arr, pha = ss.spawn(3)
        self._mobility_rng = np.random.default_rng(mob)
        self._arrival_rng = np.random.default_rng(arr)
        self._phase_rng = np.random.default_rng(pha)

    def reset(self, seed=None):
        """Place vehicles and empty all buffers.

        Without ``seed`` the random streams continue from where they are, so
        successive episodes differ but the whole sequence stays reproducible.
        """
        cfg = self.config
        if seed is not None or not hasattr(self, "_mobility_rng"):
            self._seed(seed)
        rng = self._mobility_rng
        K = cfg.K
        road = rng.integers(0, 2, size=K)
        direction = rng.choice([-1.0, 1.0], size=K)
        offset = rng.uniform(-cfg.road.half_length, cfg.road.half_length, size=K)
        speed = rng.uniform(*cfg.speed_range, size=K)
        axes = np.zeros((K, 3))
        axes[np.arange(K), road] = 1.0
        self._axes = axes
        self.positions = np.asarray(cfg.road.center) + axes * offset[:, None]
        self.velocities = axes * (direction * speed)[:, None]
        self.buffers = np.zeros(K)
        self.last_snr = np.zeros(K)
        self._last_q_o = np.zeros(K)
        self._last_q_l = np.zeros(K)
        self._last_over = np.zeros(K)
        self.t = 0
        return self.observe()

    def observe(self):
        return np.column_stack(
            [self.buffers, self._last_q_o, self._last_q_l, self._last_over, self.last_snr]
        )

    @property
    def vehicles(self):
        return [
            VehicleState(self.positions[k].copy(), self.velocities[k].copy(),
                         float(self.buffers[k]), float(self.last_snr[k]))
            for k in range(self.K)
        ]

    @property
    def theta(self):
        """Phase-shift matrix used in the most recent slot."""
        return self._theta

    def channels(self):
        """Vehicle -> RIS channels at the current positions, shape (K, N)."""
        return ch.vu_ris_gains(self.positions, self.config.geometry, self.config.channel)

    def advance_vehicles(self, dt=None):
        cfg = self.config
        dt = cfg.dt if dt is None else dt
        self.positions = self.positions + self.velocities * dt
        # wrap the along-road coordinate into [-L, L)
        center = np.asarray(cfg.road.center)
        L = cfg.road.half_length
        along = np.sum((self.positions - center) * self._axes, axis=1)
        wrapped = (along + L) % (2 * L) - L
        self.positions = self.positions + self._axes * (wrapped - along)[:, None]
        return self.positions

    def _select_phases(self, h_kr):
        cfg = self.config
        if self.phase_mode == "random":
            return random_phases(self._phase_rng, cfg.n_elements, cfg.n_bits)
        theta, _ = bcd_optimize(self.h_rb, h_kr, cfg.n_bits, max_sweeps=cfg.bcd_max_sweeps)
        return theta

    def _clamp(self, actions):
        actions = np.asarray(actions, dtype=np.float64)
        if actions.shape != (self.K, ACT_DIM):
            raise DimensionError(f"actions must have shape {(self.K, ACT_DIM)}, got {actions.shape}")
        if not np.all(np.isfinite(actions)):
            raise DomainError("actions must be finite")
        clipped = np.clip(actions, 0.0, self.config.action_high)
        n = int(np.count_nonzero(clipped != actions))
        self.clamp_count += n
        return clipped, n

    def step(self, actions):
        cfg = self.config
        actions, n_clamped = self._clamp(actions)
        p_o, p_l = actions[:, 0], actions[:, 1]

        h_kr = self.channels()
        theta = self._select_phases(h_kr)
        self._theta = theta
        cascade = ch.cascaded_channel(self.h_rb, h_kr)
        gains = np.abs(cascade @ theta.coefficients) ** 2
        objective = float(np.sum(gains))

        gamma = ch.snr(p_o, gains, cfg.channel.noise_power)
        q_o = offload_capacity(p_o, gains, cfg)
        q_l = local_capacity(p_l, cfg)
        arrivals = sample_arrivals(self._arrival_rng, cfg.arrival_rate, cfg.dt, cfg.task_unit, size=cfg.K)

        q = self.buffers
        q_next, overflow = queue_update(q, q_o, q_l, arrivals)
        rewards = local_reward(actions, q_next, overflow, cfg)
        r_g = global_reward(rewards)

        self.advance_vehicles()
        self._last_q_o = q_o
        self._last_q_l = q_l
        self._last_over = q_o + q_l - q
        self.last_snr = gamma
        self.buffers = q_next
        self.t += 1

        diagnostics = {
            "offload_bits": q_o,
            "local_bits": q_l,
            "served_bits": np.minimum(q, q_o + q_l),
            "arrivals": arrivals,
            "overflow": overflow,
            "buffer_penalty": q_next > cfg.resolved_buffer_threshold,
            "overflow_penalty": overflow > cfg.resolved_overflow_margin,
            "snr": gamma,
            "gains": gains,
            "objective": objective,
            "phase_indices": theta.indices,
            "power": p_o + p_l,
            "actions": actions,
            "clamped": n_clamped,
        }
        return StepOutcome(self.observe(), rewards, r_g, diagnostics, done=self.t >= cfg.T)

    def objective(self, theta=None):
        """Modulus-sum objective of ``theta`` (default: last used) on current channels."""
        theta = self._theta if theta is None else theta
        return modulus_sum_objective(theta, self.h_rb, self.channels())


def reset(config, seed=None):
    """Create an environment and return it with its initial observations."""
    env = VECEnv(config, seed)
    return env, env.observe()


def make_env_factory(config, seed=None):
    """Callable returning a freshly seeded environment each call."""

    def factory():
        return VECEnv(config, seed)

    return factory


def dvfs_frequency(p_l, capacitance, f_max=math.inf):
    return min((p_l / capacitance) ** (1.0 / 3.0), f_max)
