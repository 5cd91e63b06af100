"""Scenario configuration and the INI-style experiment file.

The experiment file has one section per concern ([scenario], [channel],
[media], [qoe], [observation], [ppo], [train], [sweep]). Every key is
optional; unknown sections or keys are rejected so typos do not pass
silently. Values use SI units unless the key name says otherwise
(``*_dbm``, ``*_db``, ``*_dbm_hz``). Lists are comma separated.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .agent import PPOConfig
from .channel import NoiseModel, ScenarioDims, dbm_to_watt
from .media import BitrateLadder, DeviceModel, FovProcess, TimingConfig
from .qoe import QoeWeights


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ObsScales:
    """Divisors applied to each observation feature."""

    rate: float = 1e9  # bps
    quality: float = 20.0
    tau: float = 0.015  # s
    cmax: float = 3e9  # cycles/s
    dist: float = 5.0
    occ: float = 4.0


@dataclass(frozen=True)
class EpisodeConfig:
    dims: ScenarioDims = ScenarioDims(M=4, K=3)
    ladder: BitrateLadder = BitrateLadder((8e6, 12e6, 16e6, 24e6))
    T_g: float = 0.015
    phi: float = 0.80
    bits_per_cycle: float = 0.25
    tau_range: tuple = (0.010, 0.020)
    cmax_range: tuple = (0.5e9, 5.5e9)
    N0_dbm_hz: float = -174.0
    W: float = 28e6
    power_dbm: float = 38.0
    # scalar, one value per AP, or K rows of M values
    pathloss_db: Union[float, tuple] = -130.0
    # added to every AP except AP 0, so AP 0 is the strongest link by default
    other_ap_offset_db: float = -13.0
    xi: float = 0.80
    weights: QoeWeights = QoeWeights()
    fov: FovProcess = FovProcess()
    G_max: Optional[float] = None  # default 10 * T_g
    G0: Optional[float] = None  # default G_max / 2
    strict_buffer: bool = False
    seed: int = 0
    obs: ObsScales = ObsScales()

    def __post_init__(self):
        for name in ("tau_range", "cmax_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ConfigError(f"{name} must satisfy 0 < low <= high, got {(lo, hi)}")
        if self.fov.N != self.dims.N:
            raise ConfigError(f"FoV process uses N={self.fov.N} but scenario has N={self.dims.N}")
        if self.ladder.L != self.dims.L:
            raise ConfigError(f"ladder has {self.ladder.L} levels but scenario has L={self.dims.L}")
        if not self.W > 0 or not self.bits_per_cycle > 0 or not 0 <= self.phi <= 1:
            raise ConfigError("W and bits_per_cycle must be > 0 and phi in [0, 1]")
        if self.xi < 0:
            raise ConfigError("xi must be >= 0")
        try:
            np.broadcast_to(np.asarray(self.pathloss_db, dtype=float), (self.dims.K, self.dims.M))
        except ValueError:
            raise ConfigError(f"pathloss_db must be a scalar, {self.dims.M} per-AP values or "
                              f"{self.dims.K}x{self.dims.M} rows, got {self.pathloss_db}") from None
        if self.G_max is not None and self.G_max < 0:
            raise ConfigError("G_max must be >= 0")
        if self.G0 is not None and not 0 <= self.G0 <= self.buffer_max:
            raise ConfigError("G0 must lie in [0, G_max]")

    @property
    def noise(self) -> NoiseModel:
        return NoiseModel.from_dbm_per_hz(self.N0_dbm_hz, self.W)

    @property
    def pathloss(self) -> np.ndarray:
        """(K, M) mean per-entry channel gains E|h|^2."""
        K, M = self.dims.K, self.dims.M
        db = np.broadcast_to(np.asarray(self.pathloss_db, dtype=float), (K, M)).copy()
        db[:, 1:] += self.other_ap_offset_db
        return 10.0 ** (db / 10.0)

    @property
    def power_caps(self) -> np.ndarray:
        return np.full(self.dims.M, dbm_to_watt(self.power_dbm))

    @property
    def buffer_max(self) -> float:
        return 10 * self.T_g if self.G_max is None else self.G_max

    @property
    def buffer_init(self) -> float:
        return self.buffer_max / 2 if self.G0 is None else self.G0

    def timing(self, tau: float) -> TimingConfig:
        return TimingConfig(tau, self.T_g, self.phi)

    def device(self, C_max: float) -> DeviceModel:
        return DeviceModel(C_max, self.bits_per_cycle)

    def replace(self, **changes) -> "EpisodeConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class TrainSpec:
    episodes: int = 6000
    discounts: tuple = (0.90, 0.99)
    schemes: tuple = ("proposed", "B2", "B3")
    seed: int = 0


@dataclass(frozen=True)
class SweepDefaults:
    seeds: tuple = (101, 102, 103, 104)
    episodes: int = 5
    schemes: tuple = ("proposed", "B1", "B2", "B3", "B4")
    W: tuple = (16e6, 22e6, 28e6, 34e6, 40e6)
    tau: tuple = (0.010, 0.0125, 0.015, 0.0175, 0.020)
    C_max: tuple = (1e9, 2e9, 3e9, 4e9, 5e9)
    discount: tuple = (0.90, 0.99)
    workers: int = 1
    # values held fixed while another variable is swept
    base_tau: float = 0.015
    base_cmax: float = 3e9
    greedy: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    train: TrainSpec = TrainSpec()
    sweep: SweepDefaults = SweepDefaults()


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.replace(" ", "").split(",") if x)


def _strs(text: str) -> tuple:
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _pathloss(text: str):
    """``-130``, per-AP ``-130, -136`` or per-link rows ``-130, -136; -136, -130``."""
    rows = [tuple(float(x) for x in row.split(",")) for row in text.split(";")]
    if len(rows) > 1:
        return tuple(rows)
    return rows[0][0] if len(rows[0]) == 1 else rows[0]


def _optional_float(text: str):
    return None if text.strip().lower() in ("", "none", "auto") else float(text)


# section -> key -> parser
SCHEMA = {
    "scenario": dict(M=int, K=int, I=int, N=int, L=int, T=int, fov_size=int, seed=int),
    "channel": dict(n0_dbm_hz=float, bandwidth_hz=float, power_dbm=float,
                    pathloss_db=_pathloss, other_ap_offset_db=float,
                    sinr_threshold=float),
    "media": dict(ladder_bps=_floats, tile_time_s=float, compression_ratio=float,
                  bits_per_cycle=float, tau_min_s=float, tau_max_s=float,
                  cmax_min=float, cmax_max=float, dist_min=float, dist_max=float,
                  occ_max=float),
    "qoe": dict(alpha1=float, alpha2=float, w_dist=float, w_o=float, w_mu=float,
                buffer_max_s=_optional_float, buffer_init_s=_optional_float,
                strict_buffer=_bool),
    "observation": dict(rate=float, quality=float, tau=float, cmax=float, dist=float, occ=float),
    "ppo": dict(hidden=int, lr_actor=float, lr_critic=float, clip=float, epochs=int,
                minibatch=int, batch_size=int, lam=float, entropy_coef=float,
                max_grad_norm=float, reward_scale=float, normalize_advantages=_bool,
                critic_polyak=_optional_float, bootstrap_episode_end=_bool,
                anneal_lr=_bool),
    "train": dict(episodes=int, discounts=_floats, schemes=_strs, seed=int),
    "sweep": dict(seeds=lambda s: tuple(int(x) for x in _floats(s)), episodes=int,
                  schemes=_strs, W=_floats, tau=_floats, C_max=_floats,
                  discount=_floats, workers=int, base_tau=float, base_cmax=float,
                  greedy=_bool),
}


def _key_lines(text: str) -> dict:
    """Map (section, key) to its 1-based line number."""
    lines, section = {}, None
    for i, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
        elif section and s and s[0] not in "#;" and ("=" in s or ":" in s):
            key = s.split("=", 1)[0].split(":", 1)[0].strip()
            lines[(section, key)] = i
    return lines


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    where = _key_lines(text)
    values: dict = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in parser.items(section):
            line = where.get((section, key), "?")
            if key not in SCHEMA[section]:
                raise ConfigError(f"{source}:{line}: unknown key '{key}' in [{section}]")
            try:
                values[(section, key)] = SCHEMA[section][key](raw)
            except ValueError as exc:
                raise ConfigError(f"{source}:{line}: [{section}] {key} = {raw!r}: {exc}") from exc
    try:
        return _build(values)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path))


def _build(v: dict) -> ExperimentConfig:
    def get(section, key, default):
        return v.get((section, key), default)

    base = EpisodeConfig()
    d = base.dims
    dims = ScenarioDims(M=get("scenario", "M", d.M), K=get("scenario", "K", d.K),
                        I=get("scenario", "I", d.I), N=get("scenario", "N", d.N),
                        L=get("scenario", "L", d.L), T=get("scenario", "T", d.T))
    f = base.fov
    fov = FovProcess(N=dims.N, fov_size=get("scenario", "fov_size", f.fov_size),
                     dist_range=(get("media", "dist_min", f.dist_range[0]),
                                 get("media", "dist_max", f.dist_range[1])),
                     occ_max=get("media", "occ_max", f.occ_max))
    w = base.weights
    weights = QoeWeights(**{k: get("qoe", k, getattr(w, k))
                            for k in ("alpha1", "alpha2", "w_dist", "w_o", "w_mu")})
    obs = ObsScales(**{k: get("observation", k, getattr(base.obs, k))
                       for k in ("rate", "quality", "tau", "cmax", "dist", "occ")})
    episode = EpisodeConfig(
        dims=dims,
        ladder=BitrateLadder(get("media", "ladder_bps", base.ladder.mu)),
        T_g=get("media", "tile_time_s", base.T_g),
        phi=get("media", "compression_ratio", base.phi),
        bits_per_cycle=get("media", "bits_per_cycle", base.bits_per_cycle),
        tau_range=(get("media", "tau_min_s", base.tau_range[0]),
                   get("media", "tau_max_s", base.tau_range[1])),
        cmax_range=(get("media", "cmax_min", base.cmax_range[0]),
                    get("media", "cmax_max", base.cmax_range[1])),
        N0_dbm_hz=get("channel", "n0_dbm_hz", base.N0_dbm_hz),
        W=get("channel", "bandwidth_hz", base.W),
        power_dbm=get("channel", "power_dbm", base.power_dbm),
        pathloss_db=get("channel", "pathloss_db", base.pathloss_db),
        other_ap_offset_db=get("channel", "other_ap_offset_db", base.other_ap_offset_db),
        xi=get("channel", "sinr_threshold", base.xi),
        weights=weights,
        fov=fov,
        G_max=get("qoe", "buffer_max_s", base.G_max),
        G0=get("qoe", "buffer_init_s", base.G0),
        strict_buffer=get("qoe", "strict_buffer", base.strict_buffer),
        seed=get("scenario", "seed", base.seed),
        obs=obs,
    )
    ppo_fields = {k: v[("ppo", k)] for (s, k) in v if s == "ppo"}
    ppo = PPOConfig(**ppo_fields)
    t = TrainSpec()
    train = TrainSpec(**{k: get("train", k, getattr(t, k)) for k in ("episodes", "discounts", "schemes", "seed")})
    s = SweepDefaults()
    sweep = SweepDefaults(**{k: get("sweep", k, getattr(s, k)) for k in
                             ("seeds", "episodes", "schemes", "W", "tau", "C_max", "discount", "workers",
                              "base_tau", "base_cmax", "greedy")})
    return ExperimentConfig(episode, ppo, train, sweep)
