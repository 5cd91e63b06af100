"""Per-slot beamforming: minimum-power SINR-constrained design under per-AP caps.

The SINR constraint gamma_k >= Gamma_k is not convex as written, but the
SINR is invariant to a common phase rotation of each user's beamformer, so
we may take h_k^H w_k real and non-negative. The constraint then becomes the
second-order cone

    Re(h_k^H w_k) >= sqrt(Gamma_k) * || [h_k^H w_j for j != k, sqrt(N0 W)] ||

and the problem is an SOCP. Complex quantities are mapped to real ones by
stacking [Re w; Im w]; channels and powers are rescaled so that the noise
power is one and the smallest single-user power demand is of order one.
"""
from __future__ import annotations

import enum
import functools
import logging
import threading
import time
import warnings
from dataclasses import dataclass, field

import clarabel
import cvxpy as cp
import numpy as np
from scipy import sparse

from .channel import ChannelRealization, NoiseModel, effective_gains

logger = logging.getLogger(__name__)


class Status(str, enum.Enum):
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    NUMERICAL_FAILURE = "numerical-failure"


@dataclass(frozen=True)
class BeamformingProblem:
    h: np.ndarray  # (K, M*I) stacked channels, AP-major
    caps: np.ndarray  # (M,) per-AP power caps in W
    targets: np.ndarray  # (K,) SINR targets
    noise_power: float  # N0*W in W
    M: int
    I: int

    @property
    def K(self) -> int:
        return self.h.shape[0]

    def channel(self) -> ChannelRealization:
        return ChannelRealization(self.h.reshape(self.K, self.M, self.I))


@dataclass
class BeamformerSolution:
    w: np.ndarray  # (K, M, I)
    status: Status
    power: float = 0.0
    iterations: int = 0
    solve_time: float = 0.0
    ap_power: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def feasible(self) -> bool:
        return self.status is Status.FEASIBLE


def build_problem(ch: ChannelRealization, targets, caps, noise: NoiseModel) -> BeamformingProblem:
    targets = np.asarray(targets, dtype=float).reshape(-1)
    caps = np.asarray(caps, dtype=float).reshape(-1)
    if targets.shape != (ch.K,):
        raise ValueError(f"expected {ch.K} SINR targets, got {targets.shape[0]}")
    if caps.shape != (ch.M,):
        raise ValueError(f"expected {ch.M} power caps, got {caps.shape[0]}")
    if np.any(caps <= 0):
        raise ValueError("power caps must be > 0")
    if np.any(targets < 0) or np.any(np.isnan(targets)):
        raise ValueError("SINR targets must be >= 0")
    return BeamformingProblem(ch.stacked().copy(), caps, targets, noise.power, ch.M, ch.I)


def achieved_sinr(w: np.ndarray, problem: BeamformingProblem) -> np.ndarray:
    p = np.abs(effective_gains(problem.channel(), w)) ** 2
    signal = np.diag(p)
    return signal / (p.sum(axis=1) - signal + problem.noise_power)


def ap_powers(w: np.ndarray) -> np.ndarray:
    """Transmit power of each AP, sum_k ||w_{k,m}||^2."""
    return np.sum(np.abs(w) ** 2, axis=(0, 2))


def verify_solution(sol: BeamformerSolution, problem: BeamformingProblem, tol: float = 1e-6) -> bool:
    """Check per-AP power caps and SINR targets at relative tolerance ``tol``."""
    w = np.asarray(sol.w)
    if w.shape != (problem.K, problem.M, problem.I) or not np.all(np.isfinite(w)):
        return False
    if np.any(ap_powers(w) > problem.caps * (1 + tol)):
        return False
    return bool(np.all(achieved_sinr(w, problem) >= problem.targets * (1 - tol)))


def max_single_user_sinr(problem: BeamformingProblem) -> np.ndarray:
    """Best SINR each user could get alone: every AP beams to it at full power."""
    h = problem.h.reshape(problem.K, problem.M, problem.I)
    amp = np.sum(np.sqrt(problem.caps)[None, :] * np.linalg.norm(h, axis=2), axis=1)
    return amp ** 2 / problem.noise_power


def _real_rows(g: np.ndarray):
    """Rows mapping [Re w; Im w] to Re(g^H w) and Im(g^H w)."""
    return (np.concatenate([g.real, g.imag], axis=-1),
            np.concatenate([-g.imag, g.real], axis=-1))


@functools.lru_cache(maxsize=32)
def _cone_layout(K: int, M: int, I: int):
    """Parts of the conic data that depend only on the problem shape."""
    n = M * I
    # user cone rows: (cone k, row r) pairs for the interference of beam j
    others = [(k, j, r) for k in range(K) for r, j in enumerate(j for j in range(K) if j != k)]
    kk, jj, rr = (np.array(v, dtype=int).reshape(-1) for v in zip(*others)) if others else (
        np.zeros(0, int),) * 3
    aps = np.zeros((M, 1 + 2 * I * K, K, 2 * n))
    for m in range(M):
        cols = np.r_[m * I:(m + 1) * I, n + m * I:n + (m + 1) * I]
        for k in range(K):
            aps[m, 1 + k * 2 * I + np.arange(2 * I), k, cols] = -1.0
    cones = ([clarabel.ZeroConeT(K)] + [clarabel.SecondOrderConeT(2 * K)] * K
             + [clarabel.SecondOrderConeT(1 + 2 * I * K)] * M)
    P = sparse.identity(K * 2 * n, format="csc") * 2.0
    return kk, jj, rr, aps.reshape(M * (1 + 2 * I * K), K * 2 * n), cones, P


def _cone_data(g: np.ndarray, targets: np.ndarray, caps: np.ndarray, M: int, I: int):
    """Clarabel data (P, q, A, b, cones) for the normalized problem.

    The variable is X (K, 2n) flattened row-major; constraints read
    A x + s = b with s in the listed cones: one zero cone pinning
    Im(g_k^H w_k), one SINR cone per user, one power cone per AP.
    """
    K = g.shape[0]
    n = M * I
    kk, jj, rr, ap_rows, cones, P = _cone_layout(K, M, I)
    a_re, a_im = _real_rows(g)
    s = np.sqrt(targets)
    idx = np.arange(K)

    eq = np.zeros((K, K, 2 * n))
    eq[idx, idx] = a_im
    user = np.zeros((K, 2 * K, K, 2 * n))
    user[idx, 0, idx] = -a_re
    user[kk, 1 + 2 * rr, jj] = -s[kk, None] * a_re[kk]
    user[kk, 2 + 2 * rr, jj] = -s[kk, None] * a_im[kk]
    b_user = np.zeros((K, 2 * K))
    b_user[:, -1] = s
    b_ap = np.zeros((M, 1 + 2 * I * K))
    b_ap[:, 0] = np.sqrt(caps)

    A = np.vstack([eq.reshape(K, -1), user.reshape(2 * K * K, -1), ap_rows])
    b = np.concatenate([np.zeros(K), b_user.ravel(), b_ap.ravel()])
    return P, np.zeros(K * 2 * n), sparse.csc_matrix(A), b, cones


_CLARABEL_STATUS = {
    "Solved": "optimal",
    "AlmostSolved": "optimal_inaccurate",
    "PrimalInfeasible": "infeasible",
    "AlmostPrimalInfeasible": "infeasible_inaccurate",
}


def _solve_clarabel(g, targets, caps, M, I):
    P, q, A, b, cones = _cone_data(g, targets, caps, M, I)
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    sol = clarabel.DefaultSolver(P, q, A, b, cones, settings).solve()
    status = _CLARABEL_STATUS.get(str(sol.status).split(".")[-1], "failure")
    K, n = g.shape[0], M * I
    x = np.asarray(sol.x).reshape(K, 2 * n)
    w = (x[:, :n] + 1j * x[:, n:]).reshape(K, M, I)
    return status, w, int(sol.iterations)


class _CvxpyProgram:
    """Same cone program modeled in cvxpy, compiled once per (K, M, I)."""

    def __init__(self, K: int, M: int, I: int):
        n = M * I
        self.K, self.M, self.I = K, M, I
        self.x = cp.Variable((K, 2 * n))
        self.re = [cp.Parameter(2 * n) for _ in range(K)]
        self.im = [cp.Parameter(2 * n) for _ in range(K)]
        self.scaled = [cp.Parameter((2, 2 * n)) for _ in range(K)]
        self.noise = [cp.Parameter(nonneg=True) for _ in range(K)]
        self.cap = [cp.Parameter(nonneg=True) for _ in range(M)]
        cons = []
        for k in range(K):
            parts = [self.scaled[k] @ self.x[j] for j in range(K) if j != k]
            parts.append(cp.reshape(self.noise[k], (1,), order="F"))
            cons.append(cp.SOC(self.re[k] @ self.x[k], cp.hstack(parts)))
            cons.append(self.im[k] @ self.x[k] == 0)
        for m in range(M):
            cols = np.r_[m * I:(m + 1) * I, n + m * I:n + (m + 1) * I]
            cons.append(cp.SOC(self.cap[m], cp.vec(self.x[:, cols], order="F")))
        self.problem = cp.Problem(cp.Minimize(cp.sum_squares(self.x)), cons)

    def solve(self, g, targets, caps, solver=cp.CLARABEL):
        n = self.M * self.I
        a_re, a_im = _real_rows(g)
        for k in range(self.K):
            s = np.sqrt(targets[k])
            self.re[k].value = a_re[k]
            self.im[k].value = a_im[k]
            self.scaled[k].value = s * np.vstack([a_re[k], a_im[k]])
            self.noise[k].value = s
        for m in range(self.M):
            self.cap[m].value = np.sqrt(caps[m])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            self.problem.solve(solver=solver)
        x = self.x.value
        w = None if x is None else (x[:, :n] + 1j * x[:, n:]).reshape(self.K, self.M, self.I)
        stats = self.problem.solver_stats
        iters = int(stats.num_iters) if stats is not None and stats.num_iters is not None else 0
        return self.problem.status, w, iters


_local = threading.local()


def _solve_cvxpy(g, targets, caps, M, I, solver=cp.CLARABEL):
    cache = getattr(_local, "programs", None)
    if cache is None:
        cache = _local.programs = {}
    key = (g.shape[0], M, I)
    if key not in cache:
        cache[key] = _CvxpyProgram(*key)
    return cache[key].solve(g, targets, caps, solver)


BACKENDS = {
    "clarabel": _solve_clarabel,
    "cvxpy": _solve_cvxpy,
    "cvxpy-cvxopt": lambda *a: _solve_cvxpy(*a, solver=cp.CVXOPT),
}


def solve(problem: BeamformingProblem, tol: float = 1e-6, backend: str = "clarabel",
          fallbacks=("cvxpy-cvxopt",)) -> BeamformerSolution:
    """Minimum total-power beamformers meeting every SINR target and AP cap.

    Returns status INFEASIBLE when no beamformer meets the constraints and
    NUMERICAL_FAILURE when the conic solver fails or returns a point that
    does not pass :func:`verify_solution` at ``tol``. ``backend`` picks the
    first solver route; the ``fallbacks`` are tried when it returns neither
    a solution nor an infeasibility certificate.
    """
    K, M, I = problem.K, problem.M, problem.I
    start = time.perf_counter()
    zeros = np.zeros((K, M, I), dtype=complex)

    def result(status, w=zeros, iters=0):
        return BeamformerSolution(w, status, float(np.sum(np.abs(w) ** 2)), iters,
                                  time.perf_counter() - start, ap_powers(w))

    targets = problem.targets
    if not np.all(np.isfinite(targets)):
        return result(Status.INFEASIBLE)
    if np.all(targets == 0):
        return result(Status.FEASIBLE)
    # necessary condition, also spares the solver hopeless instances
    if np.any(targets > max_single_user_sinr(problem) * (1 + 1e-9)):
        return result(Status.INFEASIBLE)

    gain = np.sum(np.abs(problem.h) ** 2, axis=1)
    if np.any(gain == 0):
        return result(Status.INFEASIBLE)
    p0 = float(np.max(targets * problem.noise_power / gain))
    g = problem.h * np.sqrt(p0 / problem.noise_power)

    attempts = [backend] + [b for b in fallbacks if b != backend]
    status, v, iters = "failure", None, 0
    for name in attempts:
        try:
            status, v, iters = BACKENDS[name](g, targets, problem.caps / p0, M, I)
        except (cp.error.SolverError, ValueError, ArithmeticError) as exc:
            logger.debug("backend %s failed: %s", name, exc)
            status = "failure"
            continue
        if status in ("optimal", "infeasible"):
            break
        logger.debug("backend %s returned %s, trying next", name, status)

    if status in ("infeasible", "infeasible_inaccurate"):
        return result(Status.INFEASIBLE, iters=iters)
    if status not in ("optimal", "optimal_inaccurate") or v is None:
        return result(Status.NUMERICAL_FAILURE, iters=iters)
    sol = result(Status.FEASIBLE, v * np.sqrt(p0), iters)
    if not verify_solution(sol, problem, tol):
        logger.debug("solver point failed verification (status %s)", status)
        sol.status = Status.NUMERICAL_FAILURE
    return sol
