"""Channel-variance estimators from contaminated training observations.

All estimators work row-by-row: with diagonal covariances the rows of the
observation matrix are mutually independent, so each antenna m poses an
independent estimation problem for the length-K variance vector c_m.

Implemented estimators:
  * two-step reconstruction: per-slot sample variances, then a right
    inverse of the compound allocation matrix;
  * approximate ML: fixed-point iteration on the weighted normal
    equations obtained from the stationarity condition of the negative
    log-likelihood, with slot weights 1 / slot_power^2;
  * shared-scaling batch form: one weighted right inverse shared by all
    antenna rows;
  * adaptive estimator: exponentially-forgetting accumulation of the
    weighted normal equations with a Cholesky factor updated in place.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg

from .channel import SquaredObservations
from .errors import IdentifiabilityError, SingularSystemError
from .schedule import Allocation, Schedule, rank_and_condition

__all__ = [
    "ObsCovEstimate",
    "CovEstimate",
    "AdaptiveState",
    "MLFixedPointResult",
    "estimate_obs_covariances",
    "two_step_reconstruct",
    "shared_scaling_estimate",
    "negative_llf",
    "llf_gradient",
    "ml_fixed_point",
    "estimate_all_rows_ml",
    "shared_scaling_fixed_point",
    "adaptive_update",
    "save_cov_estimate_csv",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ObsCovEstimate:
    """Per-slot observation variances (sample means of squared magnitudes)."""

    c_obs: np.ndarray  # (M, N * Ttr)
    sample_count: int

    def __post_init__(self) -> None:
        if np.any(self.c_obs < 0):
            raise ValueError("observation variances must be nonnegative")


@dataclass(frozen=True)
class CovEstimate:
    """Estimated per-antenna, per-user channel variances."""

    C_hat: np.ndarray  # (M, K)

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.C_hat)):
            raise ValueError("estimate contains non-finite entries")


class MLFixedPointResult(NamedTuple):
    c_hat: np.ndarray
    iterations: int
    converged: bool


def estimate_obs_covariances(
    B: SquaredObservations, schedule: Schedule, repeats: int
) -> ObsCovEstimate:
    """Average the squared observations over `repeats` passes of the schedule.

    The sample mean of |phi|^2 is exactly the ML estimate of each slot's
    observation variance.
    """
    block = schedule.N * schedule.Ttr
    total = B.B.shape[1]
    if total % block != 0:
        raise ValueError(
            f"{total} observation slots do not divide into blocks of "
            f"{block} (N={schedule.N}, Ttr={schedule.Ttr})"
        )
    if total != repeats * block:
        raise ValueError(
            f"expected {repeats} repeats x {block} slots = {repeats * block} "
            f"columns, got {total}"
        )
    M = B.B.shape[0]
    means = B.B.reshape(M, repeats, block).mean(axis=1)
    return ObsCovEstimate(means, repeats)


def _clamped(C: np.ndarray, clamp: bool) -> np.ndarray:
    return np.maximum(C, 0.0) if clamp else C


def two_step_reconstruct(
    obs: ObsCovEstimate,
    schedule: Schedule,
    sigma_v2: float,
    *,
    clamp: bool = True,
) -> CovEstimate:
    """Right-invert the compound allocation: C =  (c_obs - sigma_v2) pinv(compound).

    Requires the compound allocation matrix to have full row rank K;
    otherwise the channel variances are not uniquely reconstructible.
    """
    rank, _ = rank_and_condition(schedule)
    if rank < schedule.K:
        raise IdentifiabilityError(
            f"compound allocation has rank {rank} < K={schedule.K}; channel "
            f"variances cannot be uniquely reconstructed"
        )
    rhs = (obs.c_obs - sigma_v2).T  # (N*Ttr, M)
    sol, *_ = np.linalg.lstsq(schedule.compound.T, rhs, rcond=None)
    return CovEstimate(_clamped(sol.T, clamp))


def shared_scaling_estimate(
    B_mean: np.ndarray,
    Pi_tilde: np.ndarray,
    D: np.ndarray | None,
    sigma_v2: float,
    *,
    clamp: bool = True,
) -> CovEstimate:
    """Weighted right inverse shared by all antenna rows.

    C = (B_mean - sigma_v2) D Pi^T (Pi D Pi^T)^{-1} for a positive diagonal
    D (given as a vector of slot weights; None means identity).  With
    D = identity this reduces exactly to the two-step reconstruction.
    """
    Pi = np.asarray(Pi_tilde, dtype=float)
    d = np.ones(Pi.shape[1]) if D is None else np.asarray(D, dtype=float)
    if d.shape != (Pi.shape[1],):
        raise ValueError(f"D must be a length-{Pi.shape[1]} weight vector")
    if np.any(d <= 0) or not np.all(np.isfinite(d)):
        raise ValueError("D must be strictly positive and finite")
    G = (Pi * d) @ Pi.T
    rhs = Pi @ (d[:, None] * (np.asarray(B_mean) - sigma_v2).T)  # (K, M)
    try:
        sol = scipy.linalg.solve(G, rhs, assume_a="pos")
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"weighted Gram matrix is singular: {exc}") from exc
    return CovEstimate(_clamped(sol.T, clamp))


def _slot_powers(c_m: np.ndarray, Pi: np.ndarray, sigma_v2: float) -> np.ndarray:
    return Pi.T @ c_m + sigma_v2


def negative_llf(
    c_m: np.ndarray, b_m: np.ndarray, Pi: np.ndarray, sigma_v2: float
) -> float:
    """Negative log-likelihood of one antenna row's squared observations.

    sum_i [ b_i / p_i + log p_i ] with slot powers p_i = pi_i^T c_m + sigma_v2.
    """
    powers = _slot_powers(np.asarray(c_m, float), np.asarray(Pi, float), sigma_v2)
    if np.any(powers <= 0):
        raise ValueError("all slot powers must be strictly positive")
    return float(np.sum(b_m / powers + np.log(powers)))


def llf_gradient(
    c_m: np.ndarray, b_m: np.ndarray, Pi: np.ndarray, sigma_v2: float
) -> np.ndarray:
    """Gradient of `negative_llf` with respect to the variance vector."""
    Pi = np.asarray(Pi, dtype=float)
    powers = _slot_powers(np.asarray(c_m, float), Pi, sigma_v2)
    if np.any(powers <= 0):
        raise ValueError("all slot powers must be strictly positive")
    return Pi @ ((powers - b_m) / powers**2)


def _safe_llf(c_m: np.ndarray, b_m: np.ndarray, Pi: np.ndarray, sigma_v2: float) -> float:
    try:
        return negative_llf(c_m, b_m, Pi, sigma_v2)
    except ValueError:
        return np.inf


def _weighted_solve(
    Pi: np.ndarray, d: np.ndarray, rhs: np.ndarray
) -> np.ndarray:
    G = (Pi * d) @ Pi.T
    try:
        return scipy.linalg.solve(G, Pi @ (d * rhs), assume_a="pos")
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(
            f"weighted normal equations are singular: {exc}"
        ) from exc


def ml_fixed_point(
    b_m: np.ndarray,
    Pi: np.ndarray,
    sigma_v2: float,
    init: np.ndarray | None = None,
    tol: float = 1e-8,
    max_iter: int = 200,
) -> MLFixedPointResult:
    """Fixed-point iteration on the stationarity condition of the LLF.

    Each step solves the weighted normal equations with slot weights
    d_i = 1 / slot_power_i^2 frozen at the previous iterate, then clamps
    the result to the nonnegative orthant.  If the LLF increases, the step
    is halved toward the previous iterate (up to 10 times); the cost is
    neither convex nor quasi-convex, so this only safeguards against
    divergence without moving the fixed points.

    Convergence requires the step criterion ||c_new - c_old||_inf <=
    tol * (1 + ||c_old||_inf) and, at interior iterates, a certified
    gradient norm <= 10 * tol.
    """
    Pi = np.asarray(Pi, dtype=float)
    b_m = np.asarray(b_m, dtype=float)
    K = Pi.shape[0]
    if init is None:
        # warm start from the unweighted (two-step) solution
        sol, *_ = np.linalg.lstsq(Pi.T, b_m - sigma_v2, rcond=None)
        c = np.maximum(sol, 0.0)
    else:
        c = np.asarray(init, dtype=float).copy()
        if c.shape != (K,) or np.any(c < 0):
            raise ValueError("init must be a nonnegative length-K vector")

    obj = _safe_llf(c, b_m, Pi, sigma_v2)
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        powers = _slot_powers(c, Pi, sigma_v2)
        if np.any(powers <= 0) or not np.all(np.isfinite(powers)):
            raise SingularSystemError(
                "slot powers vanished; weights 1/power^2 are undefined"
            )
        d = powers**-2
        c_new = np.maximum(_weighted_solve(Pi, d, b_m - sigma_v2), 0.0)
        obj_new = _safe_llf(c_new, b_m, Pi, sigma_v2)
        if obj_new > obj:
            # backtrack toward the previous iterate while it helps; when no
            # halving descends, take the full step anyway: the clamped fixed
            # point may sit slightly uphill of the path minimum, and the map
            # stays bounded for positive noise power
            cand, obj_cand, accepted = c_new, obj_new, False
            for _ in range(10):
                cand = 0.5 * (cand + c)
                obj_cand = _safe_llf(cand, b_m, Pi, sigma_v2)
                if obj_cand <= obj:
                    c_new, obj_new, accepted = cand, obj_cand, True
                    break
            if not accepted and not np.isfinite(obj_new):
                # all candidates leave the LLF domain: stall out honestly
                break

        step_ok = np.max(np.abs(c_new - c)) <= tol * (1.0 + np.max(np.abs(c)))
        c, obj = c_new, obj_new
        if step_ok:
            if np.all(c > 0):
                # interior iterate: certify stationarity before stopping
                if np.max(np.abs(llf_gradient(c, b_m, Pi, sigma_v2))) <= 10 * tol:
                    converged = True
                    break
            else:
                converged = True
                break

    grad_norm = float(np.max(np.abs(llf_gradient(c, b_m, Pi, sigma_v2))))
    logger.debug(
        "ml_fixed_point: iterations=%d grad_norm=%.3e converged=%s",
        iterations, grad_norm, converged,
    )
    return MLFixedPointResult(c, iterations, converged)


def estimate_all_rows_ml(
    B: SquaredObservations | np.ndarray,
    Pi: np.ndarray,
    sigma_v2: float,
    tol: float = 1e-8,
    max_iter: int = 200,
    *,
    return_convergence: bool = False,
):
    """Run `ml_fixed_point` independently on every antenna row.

    The rows are independent problems; results do not depend on the order
    in which they are solved.  Non-convergence of individual rows is
    reported via the aggregated flags (and a warning), not an error.
    """
    Bm = B.B if isinstance(B, SquaredObservations) else np.asarray(B, float)
    Pi = np.asarray(Pi, dtype=float)
    # shared warm start: unweighted right inverse for all rows at once
    init_all, *_ = np.linalg.lstsq(Pi.T, (Bm - sigma_v2).T, rcond=None)
    init_all = np.maximum(init_all.T, 0.0)

    C_hat = np.empty((Bm.shape[0], Pi.shape[0]))
    flags = np.empty(Bm.shape[0], dtype=bool)
    for m in range(Bm.shape[0]):
        res = ml_fixed_point(Bm[m], Pi, sigma_v2, init=init_all[m],
                             tol=tol, max_iter=max_iter)
        C_hat[m] = res.c_hat
        flags[m] = res.converged
    if not np.all(flags):
        logger.warning(
            "ml_fixed_point did not converge on %d of %d antenna rows",
            int(np.sum(~flags)), flags.size,
        )
    est = CovEstimate(C_hat)
    if return_convergence:
        return est, flags
    return est


def shared_scaling_fixed_point(
    B: SquaredObservations | np.ndarray,
    Pi: np.ndarray,
    sigma_v2: float,
    tol: float = 1e-8,
    max_iter: int = 200,
) -> CovEstimate:
    """Batch variant with one scaling matrix shared by all antenna rows.

    The shared slot weights are rebuilt from the antenna-averaged variance
    estimate, trading some accuracy for a single K x K solve per sweep.
    """
    Bm = B.B if isinstance(B, SquaredObservations) else np.asarray(B, float)
    Pi = np.asarray(Pi, dtype=float)
    est = shared_scaling_estimate(Bm, Pi, None, sigma_v2)
    C = est.C_hat
    for _ in range(max_iter):
        powers = Pi.T @ C.mean(axis=0) + sigma_v2
        if np.any(powers <= 0):
            raise SingularSystemError("average slot powers vanished")
        C_new = shared_scaling_estimate(Bm, Pi, powers**-2, sigma_v2).C_hat
        done = np.max(np.abs(C_new - C)) <= tol * (1.0 + np.max(np.abs(C)))
        C = C_new
        if done:
            break
    return CovEstimate(C)


def _chol_rank1_update(L: np.ndarray, x: np.ndarray) -> None:
    """In-place lower-triangular Cholesky update: L L^T + x x^T."""
    x = x.copy()
    n = x.size
    for k in range(n):
        if x[k] == 0.0:
            continue
        r = np.hypot(L[k, k], x[k])
        c = r / L[k, k]
        s = x[k] / L[k, k]
        L[k, k] = r
        if k + 1 < n:
            L[k + 1 :, k] = (L[k + 1 :, k] + s * x[k + 1 :]) / c
            x[k + 1 :] = c * x[k + 1 :] - s * L[k + 1 :, k]


@dataclass(frozen=True)
class AdaptiveState:
    """State of the adaptive variance estimator for one antenna row.

    Xi accumulates the weighted Gram matrix of the allocations, psi the
    weighted observations; chol is the lower Cholesky factor of Xi kept
    up to date with rank-one updates instead of refactoring.
    """

    Xi: np.ndarray      # (K, K)
    psi: np.ndarray     # (K,)
    c_hat: np.ndarray   # (K,)
    lam: float
    chol: np.ndarray    # (K, K) lower triangular, Xi = chol @ chol.T

    @classmethod
    def initialize(cls, K: int, lam: float = 0.99) -> "AdaptiveState":
        if not 0.0 < lam <= 1.0:
            raise ValueError(f"forgetting factor must be in (0, 1], got {lam}")
        return cls(
            Xi=np.eye(K),
            psi=np.zeros(K),
            c_hat=np.ones(K),
            lam=lam,
            chol=np.eye(K),
        )

    @property
    def K(self) -> int:
        return self.psi.size


def adaptive_update(
    state: AdaptiveState,
    alloc: Allocation,
    b_m_t: np.ndarray,
    sigma_v2: float,
    *,
    unit_scaling: bool = False,
) -> AdaptiveState:
    """One interval of the adaptive estimator.

    Slot weights come from the current variance estimate,
    d_p = 1 / (pi_p^T c_hat + sigma_v2)^2; both accumulators are decayed
    by the forgetting factor before the new interval is added, and the
    new estimate solves Xi c = psi through the maintained Cholesky
    factor, clamped to the nonnegative orthant.

    `unit_scaling=True` freezes the weights at one (plain recursive
    least squares), which is mainly useful for equivalence checks against
    the batch reconstruction.
    """
    A = alloc.assignment
    b_m_t = np.asarray(b_m_t, dtype=float)
    if A.shape[0] != state.K:
        raise ValueError(f"allocation has K={A.shape[0]}, state has K={state.K}")
    if b_m_t.shape != (alloc.Ttr,):
        raise ValueError(f"need one squared observation per pilot ({alloc.Ttr})")

    if unit_scaling:
        d = np.ones(alloc.Ttr)
    else:
        slot_power = A.T @ state.c_hat + sigma_v2
        if np.any(slot_power <= 0) or not np.all(np.isfinite(slot_power)):
            raise SingularSystemError("slot powers vanished in adaptive update")
        d = slot_power**-2

    psi = state.lam * state.psi + A @ (d * (b_m_t - sigma_v2))
    Xi = state.lam * state.Xi + (A * d) @ A.T
    chol = np.sqrt(state.lam) * state.chol
    for p in range(alloc.Ttr):
        _chol_rank1_update(chol, np.sqrt(d[p]) * A[:, p])
    c_raw = scipy.linalg.cho_solve((chol, True), psi)
    return AdaptiveState(
        Xi=Xi, psi=psi, c_hat=np.maximum(c_raw, 0.0), lam=state.lam, chol=chol
    )


def save_cov_estimate_csv(est: CovEstimate, path: str) -> None:
    """Write the M x K estimate with a header row of user indices."""
    header = ",".join(str(k) for k in range(est.C_hat.shape[1]))
    np.savetxt(path, est.C_hat, delimiter=",", header=header, comments="")
