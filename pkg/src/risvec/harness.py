"""
Experiment configuration, seeded orchestration and metrics persistence.

A configuration file is YAML with four sections::

    scenario: sweep-elements
    method: maddpg-bcd          # maddpg-bcd | maddpg-random-phase | ddpg | random-power
    seed: 0
    repetitions: 3
    output: runs/sweep-elements
    window: 50
    sweep: {axis: N, values: [8, 16, 24]}
    env:   {K: 2, N: 8, b: 3, eta: 3e6, ...}
    train: {episodes: 300, alpha_C: 1e-3, ...}

``env.K`` is required; every other key has a default (see ``ENV_KEYS`` and
``TRAIN_KEYS``). Unknown keys are rejected.

Each (sweep value, repetition) run writes ``metrics.csv`` and
``manifest.json`` under ``<output>/<method>/<axis>=<value>/rep<r>/``.
Seeds depend on the base seed and the repetition only, so every sweep value
and every method of one repetition sees the same random streams.
"""

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .baselines import CentralizedDDPG, RandomPowerPolicy, random_phase_mode
from .channel import SPEED_OF_LIGHT, ChannelParams, SystemGeometry
from .env import EnvConfig, RoadGeometry, VECEnv
from .exceptions import ConfigError, DomainError
from .marl import ModifiedMADDPG, TrainConfig

METHODS = ("maddpg-bcd", "maddpg-random-phase", "ddpg", "random-power")
METRICS_SCHEMA = "risvec-metrics v1"
MANIFEST_SCHEMA = "risvec-manifest v1"
OUTPUT_ROOT_ENV = "RISVEC_OUTPUT_ROOT"
DEFAULT_WINDOW = 50

_FIXED_COLUMNS = [
    "method", "sweep_axis", "sweep_value", "repetition", "episode", "global_reward",
    "mean_total_power", "mean_buffer", "mean_objective", "critic1_loss", "critic2_loss",
    "local_critic_loss", "noise_scale",
]


def _positive(v):
    return v > 0


def _nonneg(v):
    return v >= 0


# key -> (kind, check, default)
ENV_KEYS = {
    "K": ("int", _positive, None),
    "N": ("int", _positive, 40),
    "b": ("int", _nonneg, 3),
    "eta": ("float", _nonneg, 3e6),
    "sigma2_dbm": ("float", None, -110.0),
    "alpha_rb": ("float", _positive, 2.5),
    "alpha_kr": ("float", _positive, 2.2),
    "W": ("float", _positive, 1e6),
    "L": ("float", _positive, 500.0),
    "c": ("float", _positive, 1e-28),
    "F_max": ("float", _positive, 2.15e9),
    "P_max_o": ("float", _positive, 1.0),
    "P_max_l": ("float", _positive, 1.0),
    "w1": ("float", _nonneg, 1.0),
    "w2": ("float", _nonneg, 0.6),
    "pen1": ("float", _nonneg, 2.0),
    "pen2": ("float", _nonneg, 2.0),
    "dt": ("float", _positive, 0.1),
    "T": ("int", _positive, 100),
    "rho": ("float", _positive, 1e-3),
    "rician_R": ("float", _nonneg, 10.0),
    "carrier_hz": ("float", _positive, 2e9),
    "element_spacing": ("optfloat", _positive, None),
    "bs_pos": ("vec3", None, (0.0, 0.0, 25.0)),
    "ris_pos": ("vec3", None, (220.0, 220.0, 25.0)),
    "road_center": ("vec3", None, (200.0, 200.0, 0.0)),
    "road_half_length": ("float", _positive, 50.0),
    "speed_kmh": ("pair", lambda v: 0 <= v[0] <= v[1], (10.0, 15.0)),
    "buffer_threshold": ("optfloat", _nonneg, None),
    "overflow_margin": ("optfloat", _nonneg, None),
    "buffer_scale": ("float", _positive, 1e5),
    "task_unit": ("float", _positive, 1000.0),
    "bcd_max_sweeps": ("int", _positive, 50),
}

TRAIN_KEYS = {
    "alpha_C": ("float", _positive, 1e-3),
    "alpha_A": ("float", _positive, 1e-4),
    "gamma": ("float", lambda v: 0 < v < 1, 0.99),
    "tau": ("float", lambda v: 0 < v <= 1, 0.005),
    "I": ("int", _positive, 64),
    "D": ("int", _positive, 10**6),
    "d": ("int", _positive, 2),
    "episodes": ("int", _nonneg, 300),
    "noise_scale": ("float", _nonneg, 0.2),
    "noise_decay": ("float", lambda v: 0 < v <= 1, 0.995),
    "noise_floor": ("float", _nonneg, 0.01),
    "warmup": ("optint", _nonneg, None),
    "actor_hidden": ("widths", None, (64, 64)),
    "local_critic_hidden": ("widths", None, (64, 64, 64)),
    "global_critic_hidden": ("widths", None, (128, 128, 128)),
}

_TOP_KEYS = {"scenario", "method", "seed", "repetitions", "output", "window", "sweep", "env", "train"}


def _coerce(key, value, kind, check):
    """Convert a parsed YAML value to the canonical Python type for ``kind``."""
    try:
        if kind.startswith("opt") and value is None:
            return None
        if kind in ("int", "optint"):
            f = float(value)
            if not f.is_integer():
                raise ValueError
            out = int(f)
        elif kind in ("float", "optfloat"):
            out = float(value)
            if not math.isfinite(out):
                raise ValueError
        elif kind == "vec3":
            out = tuple(float(v) for v in value)
            if len(out) != 3:
                raise ValueError
        elif kind == "pair":
            out = tuple(float(v) for v in value)
            if len(out) != 2:
                raise ValueError
        elif kind == "widths":
            out = tuple(int(v) for v in value)
            if not out or min(out) < 1:
                raise ValueError
        else:  # pragma: no cover
            raise AssertionError(kind)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot interpret {value!r} as {kind}") from None
    if check is not None and not check(out):
        raise ConfigError(f"{key}: value {out!r} out of range")
    return out


def _normalize(section, table, values):
    out = {}
    for key, value in values.items():
        if key not in table:
            raise ConfigError(f"{section}.{key}: unknown key")
        kind, check, _ = table[key]
        out[key] = _coerce(f"{section}.{key}", value, kind, check)
    return out


def resolve_env_keys(overrides):
    keys = {k: default for k, (_, _, default) in ENV_KEYS.items()}
    keys.update(_normalize("env", ENV_KEYS, overrides))
    if keys["K"] is None:
        raise ConfigError("env.K: required key missing")
    return keys


def build_env_config(overrides):
    """Map config-file keys onto an :class:`EnvConfig`."""
    k = resolve_env_keys(overrides)
    wavelength = SPEED_OF_LIGHT / k["carrier_hz"]
    try:
        geometry = SystemGeometry(k["bs_pos"], k["ris_pos"], wavelength, k["element_spacing"], k["N"])
        channel = ChannelParams(k["rho"], k["alpha_rb"], k["alpha_kr"], k["rician_R"], k["sigma2_dbm"])
        return EnvConfig(
            K=k["K"], dt=k["dt"], arrival_rate=k["eta"], bandwidth=k["W"], cycles_per_bit=k["L"],
            capacitance=k["c"], f_max=k["F_max"], p_max_offload=k["P_max_o"],
            p_max_local=k["P_max_l"], w1=k["w1"], w2=k["w2"], pen1=k["pen1"], pen2=k["pen2"],
            buffer_threshold=k["buffer_threshold"], overflow_margin=k["overflow_margin"],
            buffer_scale=k["buffer_scale"], task_unit=k["task_unit"], T=k["T"],
            speed_range=tuple(v / 3.6 for v in k["speed_kmh"]), n_bits=k["b"],
            bcd_max_sweeps=k["bcd_max_sweeps"],
            road=RoadGeometry(k["road_center"], k["road_half_length"]),
            geometry=geometry, channel=channel,
        )
    except ValueError as exc:
        raise ConfigError(f"env: {exc}") from exc


def build_train_config(overrides, seed=0):
    k = {key: default for key, (_, _, default) in TRAIN_KEYS.items()}
    k.update(_normalize("train", TRAIN_KEYS, overrides))
    return TrainConfig(
        lr_critic=k["alpha_C"], lr_actor=k["alpha_A"], gamma=k["gamma"], tau=k["tau"],
        batch_size=k["I"], buffer_size=k["D"], delay=k["d"], episodes=k["episodes"],
        noise_scale=k["noise_scale"], noise_decay=k["noise_decay"], noise_floor=k["noise_floor"],
        warmup=k["warmup"], actor_hidden=k["actor_hidden"],
        local_critic_hidden=k["local_critic_hidden"],
        global_critic_hidden=k["global_critic_hidden"], seed=seed,
    )


@dataclass(frozen=True)
class ExperimentSpec:
    env: dict
    scenario: str = "default"
    method: str = "maddpg-bcd"
    train: dict = field(default_factory=dict)
    sweep_axis: str | None = None
    sweep_values: tuple = ()
    repetitions: int = 1
    seed: int = 0
    output: str | None = None
    window: int = DEFAULT_WINDOW

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method: must be one of {METHODS}, got {self.method!r}")
        if self.repetitions < 1:
            raise ConfigError("repetitions: must be >= 1")
        if self.window < 1:
            raise ConfigError("window: must be >= 1")
        env = _normalize("env", ENV_KEYS, self.env)
        if "K" not in env:
            raise ConfigError("env.K: required key missing")
        object.__setattr__(self, "env", env)
        object.__setattr__(self, "train", _normalize("train", TRAIN_KEYS, self.train))
        if self.sweep_axis is not None:
            if self.sweep_axis not in ENV_KEYS:
                raise ConfigError(f"sweep.axis: unknown env key {self.sweep_axis!r}")
            kind, check, _ = ENV_KEYS[self.sweep_axis]
            values = tuple(_coerce(f"sweep.values[{self.sweep_axis}]", v, kind, check)
                           for v in self.sweep_values)
            if not values:
                raise ConfigError("sweep.values: at least one value required")
            if any(not v > 0 for v in values):
                raise ConfigError("sweep.values: must be positive")
            object.__setattr__(self, "sweep_values", values)
        elif self.sweep_values:
            raise ConfigError("sweep.values given without sweep.axis")

    def runs(self):
        """Yield ``(sweep_value, repetition)`` pairs in execution order."""
        values = self.sweep_values if self.sweep_axis else (None,)
        for value in values:
            for rep in range(self.repetitions):
                yield value, rep

    def to_dict(self):
        def plain(v):
            return list(v) if isinstance(v, tuple) else v

        out = {
            "scenario": self.scenario,
            "method": self.method,
            "seed": self.seed,
            "repetitions": self.repetitions,
            "output": self.output,
            "window": self.window,
            "env": {k: plain(v) for k, v in self.env.items()},
            "train": {k: plain(v) for k, v in self.train.items()},
        }
        if self.sweep_axis:
            out["sweep"] = {"axis": self.sweep_axis, "values": list(self.sweep_values)}
        return out


def _key_lines(text):
    """Map dotted keys to 1-based line numbers for diagnostics."""
    lines = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return lines
    if not isinstance(root, yaml.MappingNode):
        return lines
    for knode, vnode in root.value:
        lines[knode.value] = knode.start_mark.line + 1
        if isinstance(vnode, yaml.MappingNode):
            for sk, _ in vnode.value:
                lines[f"{knode.value}.{sk.value}"] = sk.start_mark.line + 1
    return lines


def parse_config(text, source="<config>"):
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}:{mark.column + 1}" if mark else source
        raise ConfigError(f"{where}: YAML parse error: {getattr(exc, 'problem', exc)}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    lines = _key_lines(text)

    def located(key, exc):
        line = lines.get(key)
        prefix = f"{source}:{line}" if line else source
        return ConfigError(f"{prefix}: {exc}")

    for key in raw:
        if key not in _TOP_KEYS:
            raise located(key, f"{key}: unknown key")
    for section in ("env", "train", "sweep"):
        if raw.get(section) is not None and not isinstance(raw[section], dict):
            raise located(section, f"{section}: must be a mapping")
    sweep = raw.get("sweep") or {}
    extra = set(sweep) - {"axis", "values"}
    if extra:
        raise located("sweep", f"sweep.{sorted(extra)[0]}: unknown key")
    kwargs = {k: raw[k] for k in ("scenario", "method", "output") if k in raw}
    for key in ("seed", "repetitions", "window"):
        if key in raw:
            kwargs[key] = _coerce(key, raw[key], "int", None)
    try:
        return ExperimentSpec(
            env=raw.get("env") or {},
            train=raw.get("train") or {},
            sweep_axis=sweep.get("axis"),
            sweep_values=tuple(sweep.get("values") or ()),
            **kwargs,
        )
    except ConfigError as exc:
        key = str(exc).split(":", 1)[0]
        raise located(key, exc) from None


def load_config(path):
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), str(path))


def dump_config(spec):
    return yaml.safe_dump(spec.to_dict(), sort_keys=False)


def save_config(spec, path):
    Path(path).write_text(dump_config(spec), encoding="utf-8")


def derive_seeds(base_seed, repetition):
    """Run seed plus independent env and agent seeds for one repetition."""
    ss = np.random.SeedSequence([int(base_seed), int(repetition)])
    run_seed = int(ss.generate_state(1)[0])
    env_ss, agent_ss = ss.spawn(2)
    return {
        "run": run_seed,
        "env": int(env_ss.generate_state(1)[0]),
        "agent": int(agent_ss.generate_state(1)[0]),
    }


def fit_method(method, env_config, train_config, seeds):
    """Train/roll out one method and return the fitted estimator."""
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}")

    def factory():
        env = VECEnv(env_config, seeds["env"])
        if method == "maddpg-random-phase":
            random_phase_mode(env)
        return env

    train_config = replace(train_config, seed=seeds["agent"])
    if method.startswith("maddpg"):
        model = ModifiedMADDPG(**train_config.estimator_params())
    elif method == "ddpg":
        model = CentralizedDDPG.from_train_config(train_config)
    else:
        model = RandomPowerPolicy(episodes=train_config.episodes, random_state=seeds["agent"])
    return model.fit(factory)


def run_method(method, env_config, train_config, seeds):
    """Per-episode metric records of :func:`fit_method`."""
    return fit_method(method, env_config, train_config, seeds).metrics_


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def format_metrics(records, method, sweep_axis, sweep_value, repetition, n_agents):
    """Render metric records as the versioned CSV text."""
    buf = io.StringIO()
    buf.write(f"# {METRICS_SCHEMA}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_FIXED_COLUMNS + [f"reward_agent_{k}" for k in range(n_agents)])
    for rec in records:
        row = [method, sweep_axis or "", _fmt(sweep_value), repetition]
        row += [_fmt(rec[c]) for c in _FIXED_COLUMNS[4:]]
        row += [_fmt(float(r)) for r in rec["agent_rewards"]]
        writer.writerow(row)
    return buf.getvalue()


def read_metrics(path):
    """Parse a metrics CSV into a list of dicts (numeric columns as float)."""
    with open(path, encoding="utf-8", newline="") as fh:
        first = fh.readline().rstrip("\n")
        if first != f"# {METRICS_SCHEMA}":
            raise ValueError(f"{path}: unsupported metrics schema line {first!r}")
        rows = []
        for row in csv.DictReader(fh):
            rec = {}
            for key, val in row.items():
                if key in ("method", "sweep_axis"):
                    rec[key] = val
                elif key in ("repetition", "episode"):
                    rec[key] = int(val)
                else:
                    rec[key] = float(val) if val != "" else None
            rows.append(rec)
    return rows


def _run_dir(root, method, axis, value, rep):
    sweep = f"{axis}={_fmt(value)}" if axis else "base"
    return Path(root) / method / sweep / f"rep{rep}"


def default_output_root():
    return os.environ.get(OUTPUT_ROOT_ENV, "runs")


def _write_manifest(path, manifest):
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run_single(spec, sweep_value, rep, run_dir):
    env_keys = dict(spec.env)
    if spec.sweep_axis:
        env_keys[spec.sweep_axis] = sweep_value
    env_keys = resolve_env_keys(env_keys)
    train = build_train_config(spec.train)
    seeds = derive_seeds(spec.seed, rep)
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "code_version": __version__,
        "scenario": spec.scenario,
        "method": spec.method,
        "sweep_axis": spec.sweep_axis,
        "sweep_value": sweep_value,
        "repetition": rep,
        "base_seed": spec.seed,
        "seeds": seeds,
        "env": {k: list(v) if isinstance(v, tuple) else v for k, v in env_keys.items()},
        "train": {k: list(v) if isinstance(v, tuple) else v
                  for k, v in _train_keys(train).items()},
        "metrics_file": "metrics.csv",
        "status": "incomplete",
    }
    manifest_path = run_dir / "manifest.json"
    _write_manifest(manifest_path, manifest)
    records = run_method(spec.method, build_env_config(env_keys), train, seeds)
    text = format_metrics(records, spec.method, spec.sweep_axis, sweep_value, rep, env_keys["K"])
    (run_dir / "metrics.csv").write_bytes(text.encode("utf-8"))
    manifest["status"] = "complete"
    _write_manifest(manifest_path, manifest)
    return manifest_path


def _train_keys(cfg):
    return {
        "alpha_C": cfg.lr_critic, "alpha_A": cfg.lr_actor, "gamma": cfg.gamma, "tau": cfg.tau,
        "I": cfg.batch_size, "D": cfg.buffer_size, "d": cfg.delay, "episodes": cfg.episodes,
        "noise_scale": cfg.noise_scale, "noise_decay": cfg.noise_decay,
        "noise_floor": cfg.noise_floor, "warmup": cfg.warmup, "actor_hidden": cfg.actor_hidden,
        "local_critic_hidden": cfg.local_critic_hidden,
        "global_critic_hidden": cfg.global_critic_hidden,
    }


def run_experiment(spec, output=None):
    """Execute every (sweep value, repetition) run; returns manifest paths."""
    root = output or spec.output or default_output_root()
    manifests = []
    for value, rep in spec.runs():
        run_dir = _run_dir(root, spec.method, spec.sweep_axis, value, rep)
        manifests.append(run_single(spec, value, rep, run_dir))
    return manifests


def replay_manifest(path):
    """Re-run the run described by a manifest; returns the regenerated CSV text."""
    manifest = json.loads(Path(path).read_text(encoding="utf-8"))
    if manifest.get("schema") != MANIFEST_SCHEMA:
        raise ValueError(f"{path}: unsupported manifest schema {manifest.get('schema')!r}")
    env_keys = resolve_env_keys(manifest["env"])
    train = build_train_config(manifest["train"])
    records = run_method(manifest["method"], build_env_config(env_keys), train, manifest["seeds"])
    return format_metrics(records, manifest["method"], manifest["sweep_axis"],
                          manifest["sweep_value"], manifest["repetition"], env_keys["K"])


def collect_metric_files(inputs):
    """Expand files and directories (searched recursively) into metrics CSV paths."""
    files = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            files.extend(sorted(p.rglob("metrics.csv")))
        else:
            files.append(p)
    return files


def _stats(values):
    arr = np.asarray(values, dtype=np.float64)
    std = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
    return float(np.mean(arr)), std


def summarize(paths, window=DEFAULT_WINDOW, buffer_scale=1e5):
    """Final-window statistics per (method, sweep value) across repetitions.

    ``cost`` is ``mean_total_power + mean_buffer / buffer_scale``.
    """
    if not paths:
        raise DomainError("summarize needs at least one metrics file")
    runs = {}
    for path in paths:
        rows = read_metrics(path)
        if not rows:
            continue
        tail = rows[-window:]
        key = (rows[0]["method"], rows[0]["sweep_axis"], rows[0]["sweep_value"])
        power = float(np.mean([r["mean_total_power"] for r in tail]))
        buffer = float(np.mean([r["mean_buffer"] for r in tail]))
        runs.setdefault(key, []).append({
            "reward": float(np.mean([r["global_reward"] for r in tail])),
            "power": power,
            "buffer": buffer,
            "cost": power + buffer / buffer_scale,
        })
    if not runs:
        raise DomainError("metrics files contain no episodes")
    table = []
    for (method, axis, value), items in sorted(runs.items(), key=lambda kv: (kv[0][0], kv[0][2] or 0)):
        row = {"method": method, "sweep_axis": axis, "sweep_value": value, "runs": len(items)}
        for name in ("reward", "power", "buffer", "cost"):
            row[f"{name}_mean"], row[f"{name}_std"] = _stats([it[name] for it in items])
        table.append(row)
    return table


def format_summary(table):
    buf = io.StringIO()
    if not table:
        return ""
    writer = csv.DictWriter(buf, fieldnames=list(table[0]), lineterminator="\n")
    writer.writeheader()
    for row in table:
        writer.writerow({k: _fmt(v) for k, v in row.items()})
    return buf.getvalue()
