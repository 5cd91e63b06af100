"""Training runs, parameter sweeps and the CSV files behind each figure.

Files written (all comma separated, one header line, ``\\n`` line ends):

``convergence.csv``
    scheme, discount, episode, qoe, feasible_fraction
``sweep_<variable>.csv``
    scheme, variable, value, seed, episode, qoe, mean_qoe, feasible_fraction
    and ``wall_time_s`` when timing is requested. ``qoe`` is the episode
    total of the reward (sum over slots and users), ``mean_qoe`` the mean
    reward per slot. ``value`` is in SI units (Hz, s, cycles/s).
``fig2_convergence.csv``
    scheme, discount, episode, qoe, qoe_avg (trailing mean over 50 episodes)
``fig3_qoe_vs_W.csv``, ``fig4_qoe_vs_tau.csv``, ``fig5_qoe_vs_cmax.csv``
    scheme, value, mean_qoe, std_qoe, n, feasible_fraction; one row per
    (scheme, value), ``mean_qoe`` averaging episode totals over seeds and
    episodes.
``summary.csv``
    variable, scheme, value, mean_qoe, std_qoe, n, feasible_fraction

Everything except ``wall_time_s`` is byte-stable for a fixed config.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import astuple, dataclass, fields, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np
import torch

from .agent import PPOAgent, train
from .config import ExperimentConfig, load_config
from .env import HoloStreamEnv, baseline_policy, get_scheme

logger = logging.getLogger(__name__)

VARIABLES = ("W", "tau", "C_max", "discount")
CONVERGENCE_COLUMNS = ("scheme", "discount", "episode", "qoe", "feasible_fraction")
FIGURE_COLUMNS = ("scheme", "value", "mean_qoe", "std_qoe", "n", "feasible_fraction")
FIG2_COLUMNS = ("scheme", "discount", "episode", "qoe", "qoe_avg")
SUMMARY_COLUMNS = ("variable",) + FIGURE_COLUMNS
FIGURE_FILES = {"W": "fig3_qoe_vs_W.csv", "tau": "fig4_qoe_vs_tau.csv", "C_max": "fig5_qoe_vs_cmax.csv"}
SMOOTHING_WINDOW = 50


@dataclass(frozen=True)
class ResultRow:
    scheme: str
    variable: str
    value: float
    seed: int
    episode: int
    qoe: float
    mean_qoe: float
    feasible_fraction: float
    wall_time_s: float = 0.0

    @property
    def key(self):
        return (self.scheme, self.variable, self.value, self.seed, self.episode)


RESULT_COLUMNS = tuple(f.name for f in fields(ResultRow))


def _as_config(config: Union[str, Path, ExperimentConfig]) -> ExperimentConfig:
    return config if isinstance(config, ExperimentConfig) else load_config(config)


def checkpoint_path(directory, scheme: str, discount: float) -> Path:
    return Path(directory) / f"{scheme}_gamma{discount:g}.pt"


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def _write_csv(path: Path, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])


# ---------------------------------------------------------------- training

def run_training(config, out_dir, schemes: Optional[Sequence[str]] = None,
                 discounts: Optional[Sequence[float]] = None, episodes: Optional[int] = None,
                 seed: Optional[int] = None) -> dict:
    """Train every (learned scheme, discount) pair and save checkpoints.

    Writes ``convergence.csv`` with one row per (scheme, discount, episode)
    and returns ``{(scheme, discount): checkpoint path}``.
    """
    cfg = _as_config(config)
    out = Path(out_dir)
    schemes = tuple(schemes or cfg.train.schemes)
    discounts = tuple(discounts or cfg.train.discounts)
    episodes = cfg.train.episodes if episodes is None else episodes
    seed = cfg.train.seed if seed is None else seed
    torch.set_num_threads(1)

    paths, rows = {}, []
    for name in schemes:
        if not get_scheme(name).learned:
            logger.info("scheme %s has a fixed policy, nothing to train", name)
            continue
        for gamma in discounts:
            env = HoloStreamEnv.for_scheme(cfg.episode.replace(seed=seed), name)
            start = time.perf_counter()
            agent, log = train(env, episodes, replace(cfg.ppo, gamma=gamma), seed=seed)
            logger.info("trained %s (gamma=%g) for %d episodes in %.1f s", name, gamma,
                        episodes, time.perf_counter() - start)
            path = checkpoint_path(out / "checkpoints", name, gamma)
            path.parent.mkdir(parents=True, exist_ok=True)
            agent.save(path)
            paths[(name, gamma)] = path
            rows += [(name, gamma, e["episode"], e["qoe"], e["feasible_fraction"]) for e in log]
    _write_csv(out / "convergence.csv", CONVERGENCE_COLUMNS, rows)
    return paths


def read_convergence(path) -> list:
    with open(path, newline="") as fh:
        return [dict(scheme=r["scheme"], discount=float(r["discount"]), episode=int(r["episode"]),
                     qoe=float(r["qoe"]), feasible_fraction=float(r["feasible_fraction"]))
                for r in csv.DictReader(fh)]


# ------------------------------------------------------------------- sweeps

def _point_config(cfg: ExperimentConfig, variable: str, value: float, seed: int):
    """Episode config for one sweep point; unswept variables sit at their base values."""
    s = cfg.sweep
    ep = cfg.episode.replace(seed=seed, tau_range=(s.base_tau, s.base_tau),
                             cmax_range=(s.base_cmax, s.base_cmax))
    if variable == "W":
        return ep.replace(W=float(value))
    if variable == "tau":
        return ep.replace(tau_range=(float(value), float(value)))
    if variable == "C_max":
        return ep.replace(cmax_range=(float(value), float(value)))
    if variable == "discount":
        return ep
    raise ValueError(f"unknown sweep variable {variable!r}, expected one of {VARIABLES}")


def evaluate_episode(env: HoloStreamEnv, scheme: str, episode: int, agent=None,
                     greedy: bool = True):
    """Run one episode; returns (total reward, per-slot rewards, feasible fraction)."""
    env.reset(episode)
    if agent is not None:
        # common random numbers for stochastic evaluation across sweep points
        agent.rng = np.random.default_rng([env.seed, 0xE7A1])
    rewards, feasible, done = [], 0, False
    while not done:
        out = env.step(baseline_policy(scheme, env, agent, greedy))
        rewards.append(out.reward)
        feasible += out.feasible
        done = out.done
    return math.fsum(rewards), rewards, feasible / len(rewards)


def _evaluate_point(task):
    cfg, scheme, variable, value, seed, ckpt, episodes, greedy = task
    torch.set_num_threads(1)
    agent = PPOAgent.load(ckpt) if ckpt is not None else None
    env = HoloStreamEnv.for_scheme(_point_config(cfg, variable, value, seed), scheme)
    rows = []
    for episode in range(episodes):
        start = time.perf_counter()
        total, rewards, feasible = evaluate_episode(env, scheme, episode, agent, greedy)
        rows.append(ResultRow(scheme, variable, float(value), seed, episode, total,
                              total / len(rewards), feasible, time.perf_counter() - start))
    return rows


def run_sweep(config, variable: str, checkpoints=None, values: Optional[Sequence[float]] = None,
              schemes: Optional[Sequence[str]] = None, seeds: Optional[Sequence[int]] = None,
              episodes: Optional[int] = None, workers: Optional[int] = None,
              greedy: Optional[bool] = None) -> list:
    """Evaluate each scheme at each grid value over common seeds and episodes.

    Learned schemes load ``checkpoints/<scheme>_gamma<g>.pt``; for the
    ``discount`` variable ``g`` is the grid value, otherwise the first
    training discount. Rows come back sorted by (scheme, value, seed, episode).
    """
    cfg = _as_config(config)
    s = cfg.sweep
    if variable not in VARIABLES:
        raise ValueError(f"unknown sweep variable {variable!r}, expected one of {VARIABLES}")
    values = tuple(getattr(s, variable) if values is None else values)
    schemes = tuple(schemes or s.schemes)
    seeds = tuple(s.seeds if seeds is None else seeds)
    episodes = s.episodes if episodes is None else episodes
    workers = s.workers if workers is None else workers
    greedy = s.greedy if greedy is None else greedy

    tasks = []
    for name in schemes:
        learned = get_scheme(name).learned
        for value in values:
            ckpt = None
            if learned:
                gamma = value if variable == "discount" else cfg.train.discounts[0]
                if checkpoints is None:
                    raise FileNotFoundError(f"scheme {name} needs a checkpoint directory")
                ckpt = checkpoint_path(checkpoints, name, gamma)
                if not ckpt.exists():
                    raise FileNotFoundError(f"no checkpoint for scheme {name} (gamma={gamma:g}) at {ckpt}")
            for seed in seeds:
                tasks.append((cfg, name, variable, value, seed, ckpt, episodes, greedy))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_evaluate_point, tasks))
    else:
        chunks = [_evaluate_point(t) for t in tasks]
    rows = [r for chunk in chunks for r in chunk]
    return sorted(rows, key=lambda r: (r.scheme, r.value, r.seed, r.episode))


def write_rows(rows: Sequence[ResultRow], path, timing: bool = False) -> None:
    columns = RESULT_COLUMNS if timing else RESULT_COLUMNS[:-1]
    _write_csv(Path(path), columns, (astuple(r)[:len(columns)] for r in rows))


def read_rows(path) -> list:
    with open(path, newline="") as fh:
        return [ResultRow(r["scheme"], r["variable"], float(r["value"]), int(r["seed"]),
                          int(r["episode"]), float(r["qoe"]), float(r["mean_qoe"]),
                          float(r["feasible_fraction"]), float(r.get("wall_time_s") or 0.0))
                for r in csv.DictReader(fh)]


# ------------------------------------------------------------------ report

def aggregate(rows: Sequence[ResultRow]) -> list:
    """Per (variable, scheme, value): mean and std of episode QoE, count, feasibility."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((r.variable, r.scheme, r.value), []).append(r)
    out = []
    for (variable, scheme, value), group in sorted(groups.items()):
        q = np.array([r.qoe for r in group])
        out.append(dict(variable=variable, scheme=scheme, value=value,
                        mean_qoe=math.fsum(q) / len(q), std_qoe=float(np.std(q)), n=len(q),
                        feasible_fraction=math.fsum(r.feasible_fraction for r in group) / len(group)))
    return out


def smooth(values: Sequence[float], window: int = SMOOTHING_WINDOW) -> list:
    """Trailing mean over at most ``window`` entries."""
    out, acc = [], []
    for v in values:
        acc.append(v)
        if len(acc) > window:
            acc.pop(0)
        out.append(math.fsum(acc) / len(acc))
    return out


def emit_report(rows: Sequence[ResultRow], out_dir, convergence: Optional[Sequence[dict]] = None) -> list:
    """Write the per-figure CSVs and ``summary.csv``; return the summary rows.

    Figures without data get a header-only file so the set of outputs is
    always the same.
    """
    if not rows:
        raise ValueError("emit_report needs at least one result row")
    out = Path(out_dir)
    summary = aggregate(rows)
    _write_csv(out / "summary.csv", SUMMARY_COLUMNS,
               ([s[c] for c in SUMMARY_COLUMNS] for s in summary))
    for variable, name in FIGURE_FILES.items():
        _write_csv(out / name, FIGURE_COLUMNS,
                   ([s[c] for c in FIGURE_COLUMNS] for s in summary if s["variable"] == variable))
    fig2 = []
    curves: dict = {}
    for r in convergence or ():
        curves.setdefault((r["scheme"], r["discount"]), []).append(r)
    for (scheme, gamma), curve in sorted(curves.items()):
        curve = sorted(curve, key=lambda r: r["episode"])
        avg = smooth([r["qoe"] for r in curve])
        fig2 += [(scheme, gamma, r["episode"], r["qoe"], a) for r, a in zip(curve, avg)]
    _write_csv(out / "fig2_convergence.csv", FIG2_COLUMNS, fig2)
    return summary


def format_summary(summary: Sequence[dict]) -> str:
    lines = [f"{'variable':<9}{'scheme':<10}{'value':>12}{'mean_qoe':>12}{'std':>10}{'n':>5}{'feasible':>10}"]
    for s in summary:
        lines.append(f"{s['variable']:<9}{s['scheme']:<10}{s['value']:>12.6g}{s['mean_qoe']:>12.2f}"
                     f"{s['std_qoe']:>10.2f}{s['n']:>5d}{s['feasible_fraction']:>10.3f}")
    return "\n".join(lines)
