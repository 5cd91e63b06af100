"""Tiles, bitrate ladder, field of view and the per-slot time budget."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import NoiseModel


class SelectionError(ValueError):
    """A tile selection does not line up with the user's field of view."""


@dataclass(frozen=True)
class BitrateLadder:
    mu: tuple  # bps, ascending

    def __post_init__(self):
        mu = tuple(float(x) for x in self.mu)
        object.__setattr__(self, "mu", mu)
        if not mu:
            raise ValueError("bitrate ladder is empty")
        if any(not x > 0 for x in mu):
            raise ValueError("bitrates must be > 0")
        if any(b < a for a, b in zip(mu, mu[1:])):
            raise ValueError("bitrate ladder must be non-decreasing")

    @property
    def L(self) -> int:
        return len(self.mu)

    def bitrate(self, level) -> np.ndarray:
        """Bitrate of 1-based quality level(s)."""
        level = np.asarray(level)
        if level.size and (level.min() < 1 or level.max() > self.L):
            raise SelectionError(f"quality level outside 1..{self.L}")
        return np.asarray(self.mu)[level - 1]


@dataclass(frozen=True)
class FovState:
    """Per-user visible tiles with their virtual distance and occlusion level."""

    visible: tuple
    dist: tuple
    occ: tuple

    def __post_init__(self):
        if not len(self.visible) == len(self.dist) == len(self.occ):
            raise ValueError("visible/dist/occ must have one entry per user")
        for k, (v, d, o) in enumerate(zip(self.visible, self.dist, self.occ)):
            if not len(v) == len(d) == len(o):
                raise ValueError(f"user {k}: visible/dist/occ lengths differ")
            if len(set(np.asarray(v).tolist())) != len(v):
                raise ValueError(f"user {k}: repeated tile in field of view")
            if np.any(np.asarray(d) <= 0):
                raise ValueError(f"user {k}: distances must be > 0")
            if np.any(np.asarray(o) < 1):
                raise ValueError(f"user {k}: occlusion levels must be >= 1")

    @property
    def K(self) -> int:
        return len(self.visible)

    @classmethod
    def from_arrays(cls, visible, dist, occ) -> "FovState":
        return cls(
            tuple(np.asarray(v, dtype=int) for v in visible),
            tuple(np.asarray(d, dtype=float) for d in dist),
            tuple(np.asarray(o, dtype=float) for o in occ),
        )


@dataclass(frozen=True)
class TileSelection:
    """Quality level ``l`` (1..L) and compression flag ``eta`` per visible tile.

    ``tiles[k]`` lists the tile indices the entries refer to, in the same
    order as the user's field of view.
    """

    tiles: tuple
    level: tuple
    eta: tuple

    def __post_init__(self):
        if not len(self.tiles) == len(self.level) == len(self.eta):
            raise SelectionError("tiles/level/eta must have one entry per user")
        for k, (n, l, e) in enumerate(zip(self.tiles, self.level, self.eta)):
            if not len(n) == len(l) == len(e):
                raise SelectionError(f"user {k}: tiles/level/eta lengths differ")
            if len(e) and not np.all(np.isin(e, (0, 1))):
                raise SelectionError(f"user {k}: compression flags must be 0 or 1")

    @property
    def K(self) -> int:
        return len(self.tiles)

    @classmethod
    def for_fov(cls, fov: FovState, level, eta) -> "TileSelection":
        """Build a selection over ``fov`` from per-user level/flag sequences."""
        return cls(
            tuple(np.asarray(v, dtype=int) for v in fov.visible),
            tuple(np.asarray(l, dtype=int) for l in level),
            tuple(np.asarray(e, dtype=int) for e in eta),
        )

    @classmethod
    def constant(cls, fov: FovState, level: int, eta: int = 0) -> "TileSelection":
        return cls.for_fov(
            fov,
            [np.full(len(v), level) for v in fov.visible],
            [np.full(len(v), eta) for v in fov.visible],
        )


def check_selection(sel: TileSelection, fov: FovState) -> None:
    """Raise SelectionError unless ``sel`` covers exactly each user's FoV."""
    if sel.K != fov.K:
        raise SelectionError(f"selection has {sel.K} users, FoV has {fov.K}")
    for k in range(fov.K):
        if not np.array_equal(np.asarray(sel.tiles[k]), np.asarray(fov.visible[k])):
            raise SelectionError(f"user {k}: selection tiles {list(sel.tiles[k])} "
                                 f"differ from FoV {list(fov.visible[k])}")


@dataclass(frozen=True)
class DeviceModel:
    C_max: float  # CPU cycles per second
    b: float  # bits decoded per cycle

    def __post_init__(self):
        if not (self.C_max > 0 and self.b > 0):
            raise ValueError("C_max and b must be > 0")


@dataclass(frozen=True)
class TimingConfig:
    tau: float  # slot duration (s)
    T_g: float  # play time of a tile (s)
    phi: float  # compression ratio

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if not self.T_g > 0:
            raise ValueError(f"T_g must be > 0, got {self.T_g}")
        if not 0 <= self.phi <= 1:
            raise ValueError(f"phi must lie in [0, 1], got {self.phi}")


def _user_bits(sel: TileSelection, ladder: BitrateLadder, timing: TimingConfig, k: int):
    if not 0 <= k < sel.K:
        raise SelectionError(f"user {k} out of range for K={sel.K}")
    bits = ladder.bitrate(np.asarray(sel.level[k], dtype=int)) * timing.T_g
    return bits, np.asarray(sel.eta[k], dtype=float)


def payload_bits(sel: TileSelection, ladder: BitrateLadder, timing: TimingConfig, k: int) -> float:
    """Bits sent to user ``k``; compressed tiles shrink by the ratio ``phi``."""
    bits, eta = _user_bits(sel, ladder, timing, k)
    return float(np.sum((1.0 - eta) * bits + timing.phi * eta * bits))


def compressed_bits(sel: TileSelection, ladder: BitrateLadder, timing: TimingConfig, k: int) -> float:
    bits, eta = _user_bits(sel, ladder, timing, k)
    return float(np.sum(timing.phi * eta * bits))


def transmission_time(payload: float, r: float) -> float:
    """Seconds to push ``payload`` bits at ``r`` bps (inf when r=0 and payload>0)."""
    if payload < 0 or r < 0:
        raise ValueError("payload and rate must be >= 0")
    if payload == 0:
        return 0.0
    if r == 0:
        return math.inf
    return payload / r


def decoding_time(sel: TileSelection, ladder: BitrateLadder, timing: TimingConfig,
                  dev: DeviceModel, k: int) -> float:
    return compressed_bits(sel, ladder, timing, k) / (dev.C_max * dev.b)


def slot_feasible(T_r: float, T_d: float, tau: float) -> bool:
    if T_r < 0 or T_d < 0:
        raise ValueError("times must be >= 0")
    return T_r + T_d <= tau


def required_sinr(sel: TileSelection, ladder: BitrateLadder, timing: TimingConfig,
                  dev: DeviceModel, noise: NoiseModel, xi: float, k: int) -> float:
    """Smallest SINR for user ``k`` that meets both the threshold and the slot deadline.

    Inverts W*log2(1+gamma) = D / (tau - T_d). Returns ``math.inf`` when the
    decoding time alone uses up the slot.
    """
    D = payload_bits(sel, ladder, timing, k)
    T_d = decoding_time(sel, ladder, timing, dev, k)
    if T_d >= timing.tau:
        return math.inf
    exponent = D / (noise.W * (timing.tau - T_d))
    if exponent > 1000:  # 2**exponent overflows long before this matters
        return math.inf
    return max(xi, 2.0 ** exponent - 1.0)


def required_sinrs(sel, ladder, timing, dev, noise, xi) -> np.ndarray:
    return np.array([required_sinr(sel, ladder, timing, dev, noise, xi, k) for k in range(sel.K)])


@dataclass(frozen=True)
class FovProcess:
    """Seeded synthetic field-of-view generator.

    Each user sees ``fov_size`` distinct tiles out of ``N`` per slot, with
    distances uniform in ``dist_range`` and occlusion levels uniform in
    ``[1, occ_max]``.
    """

    N: int = 15
    fov_size: int = 6
    dist_range: tuple = (1.0, 5.0)
    occ_max: float = 4.0

    def __post_init__(self):
        if not 0 <= self.fov_size <= self.N:
            raise ValueError("fov_size must be within 0..N")
        lo, hi = self.dist_range
        if not 0 < lo <= hi:
            raise ValueError("dist_range must satisfy 0 < lo <= hi")
        if self.occ_max < 1:
            raise ValueError("occ_max must be >= 1")

    def sample(self, seed: int, t: int, K: int) -> FovState:
        visible, dist, occ = [], [], []
        lo, hi = self.dist_range
        for k in range(K):
            rng = np.random.default_rng([seed, t, k, 0xF0F])
            visible.append(np.sort(rng.choice(self.N, size=self.fov_size, replace=False)))
            dist.append(rng.uniform(lo, hi, self.fov_size))
            occ.append(rng.uniform(1.0, self.occ_max, self.fov_size))
        return FovState.from_arrays(visible, dist, occ)
