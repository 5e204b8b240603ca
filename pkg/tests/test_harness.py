import json
from pathlib import Path

import pytest

from risvec.cli import main
from risvec.exceptions import ConfigError, DomainError
from risvec.harness import (
    METRICS_SCHEMA,
    ExperimentSpec,
    build_env_config,
    build_train_config,
    collect_metric_files,
    derive_seeds,
    dump_config,
    format_metrics,
    load_config,
    parse_config,
    read_metrics,
    replay_manifest,
    run_experiment,
    save_config,
    summarize,
)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

TINY = """\
scenario: tiny
method: {method}
seed: 3
repetitions: 2
sweep: {{axis: eta, values: [1e6, 2e6, 3e6]}}
env: {{K: 2, N: 4, T: 5}}
train: {{episodes: 2, I: 8, actor_hidden: [4], local_critic_hidden: [4], global_critic_hidden: [4]}}
"""


def test_defaults_file_round_trip(tmp_path):
    spec = load_config(CONFIGS / "defaults.yaml")
    path = tmp_path / "again.yaml"
    save_config(spec, path)
    assert load_config(path) == spec
    assert parse_config(dump_config(spec)) == spec


def test_defaults_file_matches_builtin_defaults():
    spec = load_config(CONFIGS / "defaults.yaml")
    cfg = build_env_config(spec.env)
    assert cfg.K == 8 and cfg.n_elements == 40 and cfg.n_bits == 3
    assert cfg.arrival_rate == 3e6
    assert cfg.channel.noise_power == pytest.approx(1e-14)
    train = build_train_config(spec.train)
    assert train.batch_size == 64 and train.delay == 2 and train.buffer_size == 10**6


@pytest.mark.parametrize("name", ["sweep_elements.yaml", "sweep_arrival.yaml"])
def test_shipped_sweep_configs_parse(name):
    spec = load_config(CONFIGS / name)
    assert spec.sweep_axis in ("N", "eta")
    assert len(list(spec.runs())) == len(spec.sweep_values) * spec.repetitions


def test_missing_K_is_named():
    with pytest.raises(ConfigError, match="env.K"):
        parse_config("env: {N: 8}\n")


def test_arrival_override_parses_to_float():
    spec = parse_config('env: {K: 2, eta: "3e6"}\n')
    assert spec.env["eta"] == 3e6
    assert build_env_config(spec.env).arrival_rate == 3e6


def test_unknown_key_reports_line():
    text = "seed: 0\nenv:\n  K: 2\n  bogus: 1\n"
    with pytest.raises(ConfigError, match=r"<config>:4: env.bogus: unknown key"):
        parse_config(text)
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("env: {K: 2}\nextra: 1\n")


def test_range_violation_named():
    with pytest.raises(ConfigError, match="env.N"):
        parse_config("env: {K: 2, N: -3}\n")
    with pytest.raises(ConfigError, match="train.gamma"):
        parse_config("env: {K: 2}\ntrain: {gamma: 1.5}\n")
    with pytest.raises(ConfigError, match="sweep.values"):
        parse_config("env: {K: 2}\nsweep: {axis: eta, values: [0]}\n")


def test_yaml_syntax_error_has_position():
    with pytest.raises(ConfigError, match=r"<config>:2:"):
        parse_config("env: {K: 2\nseed: [\n")


def test_spec_invariants():
    with pytest.raises(ConfigError):
        ExperimentSpec(env={"K": 2}, repetitions=0)
    with pytest.raises(ConfigError):
        ExperimentSpec(env={"K": 2}, method="ppo")


def test_seeds_depend_on_repetition_only():
    assert derive_seeds(0, 0) == derive_seeds(0, 0)
    assert derive_seeds(0, 0) != derive_seeds(0, 1)
    assert derive_seeds(0, 0) != derive_seeds(1, 0)
    s = derive_seeds(7, 2)
    assert len({s["run"], s["env"], s["agent"]}) == 3


@pytest.fixture(scope="module")
def tiny_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    spec = parse_config(TINY.format(method="maddpg-bcd"))
    manifests = run_experiment(spec, root)
    return spec, root, manifests


def test_run_experiment_writes_one_manifest_per_run(tiny_runs):
    spec, root, manifests = tiny_runs
    assert len(manifests) == 6
    for path in manifests:
        m = json.loads(Path(path).read_text())
        assert m["status"] == "complete"
        assert m["schema"] == "risvec-manifest v1"
        assert (Path(path).parent / "metrics.csv").exists()
    assert (root / "maddpg-bcd" / "eta=2000000.0" / "rep1" / "manifest.json").exists()


def test_metrics_file_schema(tiny_runs):
    _, root, manifests = tiny_runs
    csv_path = Path(manifests[0]).parent / "metrics.csv"
    raw = csv_path.read_bytes()
    assert raw.startswith(f"# {METRICS_SCHEMA}\n".encode())
    assert b"\r" not in raw
    rows = read_metrics(csv_path)
    assert len(rows) == 2
    assert {"method", "episode", "global_reward", "mean_total_power", "mean_buffer",
            "reward_agent_0", "reward_agent_1"} <= set(rows[0])


def test_rerun_is_byte_identical(tiny_runs, tmp_path):
    spec, root, manifests = tiny_runs
    again = run_experiment(spec, tmp_path)
    for a, b in zip(manifests, again):
        assert (Path(a).parent / "metrics.csv").read_bytes() == (Path(b).parent / "metrics.csv").read_bytes()


def test_replay_manifest_regenerates_metrics(tiny_runs):
    _, _, manifests = tiny_runs
    path = Path(manifests[3])
    assert replay_manifest(path).encode() == (path.parent / "metrics.csv").read_bytes()
    assert main(["replay", "--manifest", str(path)]) == 0


def test_same_repetition_shares_seeds_across_sweep(tiny_runs):
    _, _, manifests = tiny_runs
    seeds = [json.loads(Path(p).read_text())["seeds"] for p in manifests]
    # runs are ordered value-major: rep0, rep1 for each of three values
    assert seeds[0] == seeds[2] == seeds[4]
    assert seeds[1] == seeds[3] == seeds[5]
    assert seeds[0] != seeds[1]


def test_reader_rejects_unknown_schema(tmp_path):
    bad = tmp_path / "metrics.csv"
    bad.write_text("# risvec-metrics v99\nmethod\n")
    with pytest.raises(ValueError, match="unsupported"):
        read_metrics(bad)


def test_summarize_single_run_has_zero_std(tiny_runs):
    _, _, manifests = tiny_runs
    table = summarize([Path(manifests[0]).parent / "metrics.csv"])
    assert len(table) == 1
    row = table[0]
    assert row["runs"] == 1
    assert row["reward_std"] == 0.0 and row["power_std"] == 0.0
    assert row["cost_mean"] == pytest.approx(row["power_mean"] + row["buffer_mean"] / 1e5)


def test_summarize_groups_repetitions(tiny_runs):
    _, root, _ = tiny_runs
    table = summarize(collect_metric_files([root]))
    assert [r["sweep_value"] for r in table] == [1e6, 2e6, 3e6]
    assert all(r["runs"] == 2 for r in table)


def test_summarize_default_window_is_last_50(tmp_path):
    records = [{"episode": e, "global_reward": float(e), "mean_total_power": 0.0, "mean_buffer": 0.0,
                "mean_objective": 0.0, "critic1_loss": float("nan"), "critic2_loss": float("nan"),
                "local_critic_loss": float("nan"), "noise_scale": 0.1, "agent_rewards": [float(e)]}
               for e in range(1, 101)]
    path = tmp_path / "metrics.csv"
    path.write_text(format_metrics(records, "random-power", None, None, 0, 1))
    row = summarize([path])[0]
    assert row["reward_mean"] == pytest.approx(sum(range(51, 101)) / 50)


def test_summarize_empty_input():
    with pytest.raises(DomainError):
        summarize([])


def test_cli_run_and_summarize(tmp_path, monkeypatch, capsys):
    cfg = tmp_path / "tiny.yaml"
    cfg.write_text(TINY.format(method="random-power"))
    monkeypatch.setenv("RISVEC_OUTPUT_ROOT", str(tmp_path / "root"))
    assert main(["run", "--config", str(cfg), "--episodes", "1", "--seed", "4"]) == 0
    out = capsys.readouterr().out.split()
    assert len(out) == 6 and all(str(tmp_path / "root") in p for p in out)
    assert main(["summarize", "--input", str(tmp_path / "root"), "--window", "1"]) == 0
    text = capsys.readouterr().out
    assert text.splitlines()[0].startswith("method,sweep_axis,sweep_value,runs")
    assert len(text.splitlines()) == 4


def test_cli_oracle_and_gradcheck(capsys):
    assert main(["oracle", "--instances", "20"]) == 0
    assert capsys.readouterr().out.count("PASS") == 4
    assert main(["gradcheck", "--networks", "3"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_cli_reports_config_errors(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("env: {N: 8}\n")
    assert main(["run", "--config", str(cfg)]) == 2
    assert "env.K" in capsys.readouterr().err
