"""Per-slot quality of experience: quality, fluctuation and rebuffering."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .media import BitrateLadder, FovState, SelectionError, TileSelection


@dataclass(frozen=True)
class QoeWeights:
    alpha1: float = 0.5
    alpha2: float = 0.5
    w_dist: float = 1.0
    w_o: float = 1.0
    w_mu: float = 16.0

    def __post_init__(self):
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ValueError("alpha1 and alpha2 must be >= 0")
        if not (self.w_dist > 0 and self.w_o > 0 and self.w_mu > 0):
            raise ValueError("w_dist, w_o and w_mu must be > 0")


@dataclass(frozen=True)
class QoeRecord:
    """One user in one slot.

    ``feasible`` is False when the slot could not be delivered; such records
    keep their Q/dQ/B/qoe values for diagnostics but earn no reward.
    """

    Q: float
    dQ: float
    B: int
    qoe: float
    G: float = 0.0
    feasible: bool = True


def tile_weights(fov: FovState, weights: QoeWeights, k: int) -> np.ndarray:
    """Importance of each visible tile, w_dist/dist + w_o/occ."""
    return weights.w_dist / np.asarray(fov.dist[k]) + weights.w_o / np.asarray(fov.occ[k])


def video_quality(fov: FovState, sel: TileSelection, ladder: BitrateLadder,
                  weights: QoeWeights, k: int) -> float:
    """Sum over visible tiles of importance times ln(w_mu * mu_l / mu_L)."""
    if len(sel.level[k]) != len(fov.visible[k]):
        raise SelectionError(f"user {k}: selection does not cover the FoV")
    if len(fov.visible[k]) == 0:
        return 0.0
    mu = ladder.bitrate(np.asarray(sel.level[k], dtype=int))
    log_q = np.log(weights.w_mu / ladder.mu[-1] * mu)
    return float(np.sum(tile_weights(fov, weights, k) * log_q))


def quality_fluctuation(Q_t: float, Q_prev: float) -> float:
    return abs(Q_t - Q_prev)


def buffer_update(G_prev: float, T_g: float, tau: float, G_max: float,
                  delivered: bool = True) -> float:
    """Buffer level after one slot: min(G_max, [G_prev + T_g - tau]^+).

    With ``delivered=False`` the slot's tiles are not credited (strict mode).
    """
    if min(G_prev, T_g, tau, G_max) < 0:
        raise ValueError("buffer quantities must be >= 0")
    gain = T_g if delivered else 0.0
    # net inflow first so that T_g == tau leaves the buffer exactly unchanged
    return min(G_max, max(G_prev + (gain - tau), 0.0))


def rebuffer_indicator(G: float) -> int:
    if G < 0:
        raise ValueError("buffer level must be >= 0")
    return int(G == 0)


def qoe_slot(Q: float, dQ: float, B: int, weights: QoeWeights) -> float:
    if B not in (0, 1):
        raise ValueError(f"rebuffer indicator must be 0 or 1, got {B!r}")
    return Q - weights.alpha1 * dQ - weights.alpha2 * B


def qoe_aggregate(records: Mapping[tuple, QoeRecord]) -> float:
    """Total QoE over a complete (user, slot) grid keyed by ``(k, t)``."""
    if not records:
        raise ValueError("no QoE records")
    users = {k for k, _ in records}
    slots = {t for _, t in records}
    missing = [(k, t) for k in sorted(users) for t in sorted(slots) if (k, t) not in records]
    if missing:
        raise KeyError(f"QoE grid is incomplete, missing {missing[:5]}")
    return float(sum(r.qoe for r in records.values()))
