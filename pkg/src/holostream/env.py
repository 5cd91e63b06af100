"""Slot-level streaming environment and the comparison schemes.

Observation layout, per user k in order, with the divisors from ObsScales:

    [r_k(t-1)/rate, Q_k(t-1)/quality, tau/tau, C_max/cmax,
     dist_{k,1..F}/dist, occ_{k,1..F}/occ]

where F is the FoV size and tiles follow the FoV order. ``r_k`` is the
rate achieved in the previous slot (0 at the start and after a failed slot).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .agent import decode_action
from .beamform import Status, achieved_sinr, build_problem, solve
from .channel import ChannelRealization, rate, sample_channel
from .config import EpisodeConfig
from .media import TileSelection, check_selection, required_sinrs
from .qoe import (QoeRecord, buffer_update, qoe_slot, quality_fluctuation,
                  rebuffer_indicator, video_quality)


class SimulationError(RuntimeError):
    pass


def episode_seed(seed: int, episode: int) -> int:
    return int(np.random.SeedSequence([seed, episode]).generate_state(1)[0])


@dataclass
class StepOutcome:
    obs: np.ndarray
    reward: float
    records: list  # QoeRecord per user
    status: Status
    rates: np.ndarray
    targets: np.ndarray
    power: float
    t: int
    done: bool

    @property
    def feasible(self) -> bool:
        return self.status is Status.FEASIBLE


@dataclass(frozen=True)
class Scheme:
    name: str
    cooperative: bool
    learned: bool
    compress: bool
    fixed_level: int = 2


SCHEMES = {
    "proposed": Scheme("proposed", cooperative=True, learned=True, compress=True),
    "B1": Scheme("B1", cooperative=True, learned=False, compress=False),
    "B2": Scheme("B2", cooperative=True, learned=True, compress=False),
    "B3": Scheme("B3", cooperative=False, learned=True, compress=True),
    "B4": Scheme("B4", cooperative=False, learned=False, compress=False),
}


def get_scheme(name: str) -> Scheme:
    try:
        return SCHEMES[name]
    except KeyError:
        raise ValueError(f"unknown scheme {name!r}, expected one of {sorted(SCHEMES)}") from None


class HoloStreamEnv:
    """One streaming episode at a time.

    ``cooperative=False`` serves every user from AP 0 only, with the same
    per-AP power cap. ``compress=False`` shrinks the action heads to L
    choices so the agent can never request compressed tiles.
    """

    def __init__(self, cfg: EpisodeConfig, cooperative: bool = True, compress: bool = True):
        self.cfg = cfg
        self.cooperative = cooperative
        self.compress = compress
        self.aps = list(range(cfg.dims.M)) if cooperative else [0]
        self.K = cfg.dims.K
        self.F = cfg.fov.fov_size
        self.L = cfg.dims.L
        self.n_heads = self.K * self.F
        self.n_choices = 2 * self.L if compress else self.L
        self.obs_dim = self.K * (4 + 2 * self.F)
        self.episode: Optional[int] = None

    @classmethod
    def for_scheme(cls, cfg: EpisodeConfig, scheme) -> "HoloStreamEnv":
        s = get_scheme(scheme) if isinstance(scheme, str) else scheme
        return cls(cfg, cooperative=s.cooperative, compress=s.compress)

    def reset(self, episode: int = 0) -> np.ndarray:
        cfg = self.cfg
        self.episode = episode
        self.seed = episode_seed(cfg.seed, episode)
        rng = np.random.default_rng([self.seed, 0x7A0])
        self.tau = float(rng.uniform(*cfg.tau_range))
        self.C_max = float(rng.uniform(*cfg.cmax_range))
        self.timing = cfg.timing(self.tau)
        self.device = cfg.device(self.C_max)
        self.noise = cfg.noise
        self.t = 1
        self.Q_prev = np.zeros(self.K)
        self.G = np.full(self.K, cfg.buffer_init)
        self.r_prev = np.zeros(self.K)
        self.fov = cfg.fov.sample(self.seed, self.t, self.K)
        return self.observation()

    def observation(self) -> np.ndarray:
        s = self.cfg.obs
        rows = []
        for k in range(self.K):
            rows.append(np.concatenate([
                [self.r_prev[k] / s.rate, self.Q_prev[k] / s.quality, self.tau / s.tau, self.C_max / s.cmax],
                np.asarray(self.fov.dist[k]) / s.dist,
                np.asarray(self.fov.occ[k]) / s.occ,
            ]))
        obs = np.concatenate(rows)
        if obs.shape != (self.obs_dim,):
            raise ValueError(f"observation has length {obs.size}, expected {self.obs_dim} "
                             f"(FoV sizes must all equal {self.F})")
        return obs

    def channel(self) -> ChannelRealization:
        return sample_channel(self.cfg.dims, self.cfg.pathloss, self.seed, self.t).restrict(self.aps)

    def step(self, sel: TileSelection) -> StepOutcome:
        if self.episode is None:
            raise RuntimeError("call reset() before step()")
        if self.t > self.cfg.dims.T:
            raise RuntimeError("episode is over, call reset()")
        cfg, t = self.cfg, self.t
        check_selection(sel, self.fov)
        try:
            targets = required_sinrs(sel, cfg.ladder, self.timing, self.device, self.noise, cfg.xi)
            ch = self.channel()
            if np.all(np.isfinite(targets)):
                problem = build_problem(ch, targets, cfg.power_caps[self.aps], self.noise)
                sol = solve(problem)
                status, power = sol.status, sol.power
            else:
                status, power = Status.INFEASIBLE, 0.0
        except (ValueError, ArithmeticError) as exc:
            raise SimulationError(f"episode {self.episode}, slot {t}: {exc}") from exc

        feasible = status is Status.FEASIBLE
        rates = np.zeros(self.K)
        if feasible:
            gammas = achieved_sinr(sol.w, problem)
            rates = np.array([rate(max(g, 0.0), self.noise.W) for g in gammas])

        records = []
        for k in range(self.K):
            Q = video_quality(self.fov, sel, cfg.ladder, cfg.weights, k)
            dQ = quality_fluctuation(Q, self.Q_prev[k])
            G = buffer_update(self.G[k], cfg.T_g, self.tau, cfg.buffer_max,
                              delivered=feasible or not cfg.strict_buffer)
            B = rebuffer_indicator(G)
            records.append(QoeRecord(Q, dQ, B, qoe_slot(Q, dQ, B, cfg.weights), G, feasible))
        reward = math.fsum(r.qoe for r in records) if feasible else 0.0

        self.Q_prev = np.array([r.Q for r in records])
        self.G = np.array([r.G for r in records])
        self.r_prev = rates
        done = t >= cfg.dims.T
        self.t += 1
        if not done:
            self.fov = cfg.fov.sample(self.seed, self.t, self.K)
        return StepOutcome(self.observation(), reward, records, status, rates,
                           targets, power, t, done)

    def decode(self, choices) -> TileSelection:
        return decode_action(choices, self.fov, self.L, self.n_choices)

    def step_action(self, choices):
        """Agent-facing step: head choices in, (obs, reward, done, info) out."""
        out = self.step(self.decode(choices))
        return out.obs, out.reward, out.done, dict(feasible=out.feasible, outcome=out)


def baseline_policy(kind: str, env: HoloStreamEnv, agent=None, greedy: bool = True) -> TileSelection:
    """Selection a scheme makes for the env's current slot.

    B1 and B4 request every visible tile at level 2 uncompressed. B2, B3 and
    the proposed scheme need a trained ``agent`` matching the env's heads.
    """
    scheme = get_scheme(kind)
    if not scheme.learned:
        return TileSelection.constant(env.fov, min(scheme.fixed_level, env.L), 0)
    if agent is None:
        raise ValueError(f"scheme {kind} needs a trained agent")
    choices, _, _ = agent.act(env.observation(), greedy=greedy)
    return env.decode(choices)
