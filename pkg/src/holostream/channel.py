"""Block-fading multi-AP downlink channel, SINR and achievable rate."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


@dataclass(frozen=True)
class ScenarioDims:
    """Sizes of one scenario.

    M APs, K users, I antennas per AP, N tiles, L quality levels and
    T slots per episode.
    """

    M: int
    K: int
    I: int = 4
    N: int = 15
    L: int = 4
    T: int = 10

    def __post_init__(self):
        for name in ("M", "K", "I", "N", "L", "T"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")


@dataclass(frozen=True)
class NoiseModel:
    N0: float  # W/Hz
    W: float  # Hz

    def __post_init__(self):
        if not self.N0 > 0:
            raise ValueError(f"N0 must be > 0, got {self.N0}")
        if not self.W > 0:
            raise ValueError(f"W must be > 0, got {self.W}")

    @classmethod
    def from_dbm_per_hz(cls, n0_dbm_hz: float, W: float) -> "NoiseModel":
        return cls(dbm_to_watt(n0_dbm_hz), W)

    @property
    def power(self) -> float:
        """Noise power N0*W in watts."""
        return self.N0 * self.W


@dataclass(frozen=True)
class ChannelRealization:
    """Channel vectors of one slot, ``h[k, m]`` is h_{k,m} in C^I."""

    h: np.ndarray
    t: int = 0

    @property
    def K(self) -> int:
        return self.h.shape[0]

    @property
    def M(self) -> int:
        return self.h.shape[1]

    @property
    def I(self) -> int:
        return self.h.shape[2]

    def stacked(self) -> np.ndarray:
        """(K, M*I) array, AP-major concatenation [h_{k,1}; ...; h_{k,M}]."""
        return self.h.reshape(self.K, self.M * self.I)

    def restrict(self, aps) -> "ChannelRealization":
        """Channel seen when only the listed APs transmit."""
        return ChannelRealization(self.h[:, list(aps), :], self.t)


def _pathloss_matrix(pathloss, K: int, M: int) -> np.ndarray:
    pl = np.broadcast_to(np.asarray(pathloss, dtype=float), (K, M))
    if not np.all(pl > 0) or not np.all(np.isfinite(pl)):
        raise ValueError("pathloss entries must be finite and > 0")
    return pl


def sample_channel(dims: ScenarioDims, pathloss, seed: int, t: int) -> ChannelRealization:
    """Draw the Rayleigh block-fading channel of slot ``t``.

    Every link (k, m) gets its own generator seeded from (seed, t, k, m), so
    a realization never depends on how many links were drawn before it and
    slots can be generated in any order or in parallel.

    Args:
        dims: scenario sizes (uses K, M, I).
        pathloss: scalar or (K, M) array of per-link mean gains E|h_i|^2.
        seed: scenario seed, a non-negative integer.
        t: slot index.
    """
    pl = _pathloss_matrix(pathloss, dims.K, dims.M)
    h = np.empty((dims.K, dims.M, dims.I), dtype=complex)
    for k in range(dims.K):
        for m in range(dims.M):
            rng = np.random.default_rng([seed, t, k, m])
            z = rng.standard_normal((2, dims.I))
            h[k, m] = np.sqrt(pl[k, m] / 2.0) * (z[0] + 1j * z[1])
    return ChannelRealization(h, t)


def effective_gains(ch: ChannelRealization, w: np.ndarray) -> np.ndarray:
    """Matrix ``g[k, j] = sum_m h_{k,m}^H w_{j,m}``."""
    w = np.asarray(w)
    if w.shape != ch.h.shape:
        raise ValueError(f"beamformer shape {w.shape} does not match channel {ch.h.shape}")
    return np.einsum("kmi,jmi->kj", ch.h.conj(), w)


def sinr_all(ch: ChannelRealization, w, noise: NoiseModel) -> np.ndarray:
    """SINR of every user, shape (K,)."""
    p = np.abs(effective_gains(ch, _weights(w))) ** 2
    signal = np.diag(p)
    interference = p.sum(axis=1) - signal
    return signal / (interference + noise.power)


def sinr(ch: ChannelRealization, w, noise: NoiseModel, k: int) -> float:
    """SINR of user ``k`` for beamformers ``w`` (array (K, M, I) or a solution)."""
    if not 0 <= k < ch.K:
        raise IndexError(f"user {k} out of range for K={ch.K}")
    return float(sinr_all(ch, w, noise)[k])


def _weights(w) -> np.ndarray:
    return np.asarray(getattr(w, "w", w))


def rate(gamma: float, W: float) -> float:
    """Achievable rate W*log2(1+gamma) in bps."""
    if gamma < 0 or math.isnan(gamma):
        raise ValueError(f"SINR must be >= 0, got {gamma}")
    return W * math.log2(1.0 + gamma)
