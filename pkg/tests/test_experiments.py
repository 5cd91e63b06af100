import csv
import dataclasses
import math

import numpy as np
import pytest

from holostream import cli
from holostream import experiments as ex
from holostream.agent import PPOConfig
from holostream.channel import ScenarioDims
from holostream.config import EpisodeConfig, ExperimentConfig, SweepDefaults, TrainSpec
from holostream.env import HoloStreamEnv, baseline_policy
from holostream.media import BitrateLadder, FovProcess


def small_config(**sweep):
    """Two users, two APs, short episodes: enough to exercise the plumbing quickly."""
    episode = EpisodeConfig(dims=ScenarioDims(M=2, K=2, I=2, N=6, L=2, T=3),
                            ladder=BitrateLadder((8e6, 20e6)),
                            fov=FovProcess(N=6, fov_size=2))
    base = dict(seeds=(101, 102), episodes=2, schemes=("proposed", "B1"), W=(16e6, 28e6),
                tau=(0.015,), C_max=(3e9,), discount=(0.9,))
    base.update(sweep)
    return ExperimentConfig(episode, PPOConfig(hidden=8, batch_size=6, minibatch=6),
                            TrainSpec(episodes=3, discounts=(0.9, 0.99), schemes=("proposed",)),
                            SweepDefaults(**base))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = small_config()
    paths = ex.run_training(cfg, out)
    return cfg, out, paths


def test_training_writes_checkpoints_and_curve(trained):
    cfg, out, paths = trained
    assert set(paths) == {("proposed", 0.9), ("proposed", 0.99)}
    assert all(p.exists() for p in paths.values())
    rows = ex.read_convergence(out / "convergence.csv")
    assert len(rows) == cfg.train.episodes * len(cfg.train.discounts)
    assert {r["discount"] for r in rows} == {0.9, 0.99}


def test_training_curve_reproducible(trained, tmp_path):
    cfg, out, _ = trained
    ex.run_training(cfg, tmp_path)
    assert (out / "convergence.csv").read_bytes() == (tmp_path / "convergence.csv").read_bytes()


def test_fixed_schemes_are_not_trained(tmp_path):
    paths = ex.run_training(small_config(), tmp_path, schemes=("B1",))
    assert paths == {}


def test_single_point_sweep_row_count(trained):
    cfg, out, _ = trained
    rows = ex.run_sweep(cfg, "W", out / "checkpoints", values=[28e6], schemes=["B1"], seeds=[101])
    assert len(rows) == cfg.sweep.episodes
    assert {r.scheme for r in rows} == {"B1"}


def test_mean_qoe_recomputes_from_env(trained):
    cfg, out, _ = trained
    rows = ex.run_sweep(cfg, "W", out / "checkpoints", values=[16e6], schemes=["B1"], seeds=[102])
    env = HoloStreamEnv.for_scheme(cfg.episode.replace(seed=102, W=16e6, tau_range=(0.015, 0.015),
                                                       cmax_range=(3e9, 3e9)), "B1")
    for row in rows:
        env.reset(row.episode)
        rewards, done = [], False
        while not done:
            o = env.step(baseline_policy("B1", env))
            rewards.append(o.reward)
            done = o.done
        assert row.qoe == pytest.approx(sum(rewards), rel=1e-12)
        assert row.mean_qoe == pytest.approx(np.mean(rewards), rel=1e-12)


def test_schemes_share_random_streams(trained):
    cfg, out, _ = trained
    rows = ex.run_sweep(cfg, "C_max", out / "checkpoints", schemes=["proposed", "B1"], seeds=[101])
    assert len(rows) == 2 * cfg.sweep.episodes
    env_a = HoloStreamEnv.for_scheme(cfg.episode.replace(seed=101), "proposed")
    env_b = HoloStreamEnv.for_scheme(cfg.episode.replace(seed=101), "B1")
    env_a.reset(1)
    env_b.reset(1)
    np.testing.assert_array_equal(env_a.channel().h, env_b.channel().h)
    assert env_a.fov.visible[0].tolist() == env_b.fov.visible[0].tolist()


def test_missing_checkpoint_names_scheme(tmp_path):
    with pytest.raises(FileNotFoundError, match="B3"):
        ex.run_sweep(small_config(), "W", tmp_path, schemes=["B3"])


def test_unknown_variable_rejected(trained):
    cfg, out, _ = trained
    with pytest.raises(ValueError):
        ex.run_sweep(cfg, "bandwidth", out / "checkpoints")


def test_rows_round_trip_through_csv(trained, tmp_path):
    cfg, out, _ = trained
    rows = ex.run_sweep(cfg, "W", out / "checkpoints")
    ex.write_rows(rows, tmp_path / "rows.csv", timing=True)
    assert ex.read_rows(tmp_path / "rows.csv") == rows
    ex.write_rows(rows, tmp_path / "stable.csv")
    back = ex.read_rows(tmp_path / "stable.csv")
    assert back == [dataclasses.replace(r, wall_time_s=0.0) for r in rows]


def test_sweep_is_byte_stable_and_worker_independent(trained, tmp_path):
    cfg, out, _ = trained
    a = ex.run_sweep(cfg, "W", out / "checkpoints")
    b = ex.run_sweep(cfg, "W", out / "checkpoints", workers=2)
    ex.write_rows(a, tmp_path / "a.csv")
    ex.write_rows(b, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_report_files_headers_and_aggregation(trained, tmp_path):
    cfg, out, _ = trained
    rows = ex.run_sweep(cfg, "W", out / "checkpoints")
    conv = ex.read_convergence(out / "convergence.csv")
    summary = ex.emit_report(rows, tmp_path, conv)
    for name, columns in [("fig2_convergence.csv", ex.FIG2_COLUMNS),
                          ("fig3_qoe_vs_W.csv", ex.FIGURE_COLUMNS),
                          ("fig4_qoe_vs_tau.csv", ex.FIGURE_COLUMNS),
                          ("fig5_qoe_vs_cmax.csv", ex.FIGURE_COLUMNS),
                          ("summary.csv", ex.SUMMARY_COLUMNS)]:
        with open(tmp_path / name) as fh:
            assert tuple(next(csv.reader(fh))) == columns
    with open(tmp_path / "fig3_qoe_vs_W.csv") as fh:
        fig3 = list(csv.DictReader(fh))
    assert len(fig3) == 2 * 2
    for line in fig3:
        group = [r.qoe for r in rows if r.scheme == line["scheme"] and r.value == float(line["value"])]
        assert float(line["mean_qoe"]) == pytest.approx(math.fsum(group) / len(group), rel=1e-12)
        assert int(line["n"]) == len(group)
    assert len(summary) == 4
    with open(tmp_path / "fig2_convergence.csv") as fh:
        assert len(list(csv.DictReader(fh))) == len(conv)


def test_report_rejects_empty_input(tmp_path):
    with pytest.raises(ValueError):
        ex.emit_report([], tmp_path)


def test_smoothing_is_trailing_mean():
    assert ex.smooth([1.0, 3.0, 5.0], window=2) == [1.0, 2.0, 4.0]


def test_cli_end_to_end(tmp_path, capsys):
    cfg_path = tmp_path / "small.ini"
    cfg_path.write_text("""
[scenario]
M = 2
K = 2
I = 2
N = 6
L = 2
T = 3
fov_size = 2
[media]
ladder_bps = 8e6, 20e6
[ppo]
hidden = 8
batch_size = 6
minibatch = 6
[train]
episodes = 2
discounts = 0.9
schemes = proposed
[sweep]
seeds = 101
episodes = 1
schemes = proposed, B1
W = 28e6
tau = 0.015
C_max = 3e9
discount = 0.9
""")
    out = tmp_path / "out"
    base = ["--config", str(cfg_path), "--out", str(out)]
    assert cli.main(["train"] + base) == 0
    assert cli.main(["evaluate"] + base) == 0
    assert cli.main(["sweep"] + base) == 0
    assert cli.main(["report", "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "proposed" in printed and "B1" in printed
    for name in ("fig2_convergence.csv", "fig3_qoe_vs_W.csv", "fig4_qoe_vs_tau.csv",
                 "fig5_qoe_vs_cmax.csv", "summary.csv", "sweep_discount.csv"):
        assert (out / name).exists()
    assert cli.main(["sweep"] + base + ["--schemes", "B3"]) == 2
    bad = tmp_path / "bad.ini"
    bad.write_text("[scenario]\nK = two\n")
    assert cli.main(["train", "--config", str(bad), "--out", str(out)]) == 2
    assert "bad.ini:2" in capsys.readouterr().err
