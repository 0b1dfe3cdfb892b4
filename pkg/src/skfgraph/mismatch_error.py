"""Exact error statistics of a Kalman filter run with the wrong mode trajectory.

Conditional on a (true, used) trajectory pair the state and the filter error
evolve jointly as a linear-Gaussian system::

    x_n = A_i x_{n-1} + nu_n
    e_n = (I - K H)(A_i - A_j) x_{n-1} + (I - K H) A_j e_{n-1} + (I - K H) nu_n - K omega_n

where ``i`` is the true mode, ``j`` the mode the filter uses and ``K`` the
gain of the filter's own Riccati recursion. The first and second moments of
the stacked vector ``(x, e)`` are therefore propagated exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import CapacityError, PreconditionError
from .kalman import kalman_gain
from .slds_core import DetectionModel, SldsModel, require_valid, symmetrize

DEFAULT_PAIR_CAP = 10**6


@dataclass(frozen=True)
class PairTrajectoryStats:
    """Joint moments of (true state, filter error) for one trajectory pair.

    ``joint_mean`` is the stacked ``(E[x_n], E[e_n])`` of length 2z and
    ``joint_second`` the 2z x 2z raw second moment ``E[(x; e)(x; e)^T]``.
    ``filter_cov`` is the covariance the mismatched filter believes in.
    """

    true_suffix: tuple[int, ...]
    used_suffix: tuple[int, ...]
    joint_mean: np.ndarray
    joint_second: np.ndarray
    filter_cov: np.ndarray
    weight: float

    @property
    def z(self) -> int:
        return self.filter_cov.shape[0]

    @property
    def error_mean(self) -> np.ndarray:
        return self.joint_mean[self.z :]

    @property
    def error_second(self) -> np.ndarray:
        z = self.z
        return self.joint_second[z:, z:]

    @property
    def mse(self) -> float:
        return float(np.trace(self.error_second))


@dataclass(frozen=True)
class MseReport:
    """Per-step expected squared error, error mean and error covariance."""

    per_step_mse: np.ndarray  # (T0,)
    per_step_mean: np.ndarray  # (T0, z)
    per_step_cov: np.ndarray  # (T0, z, z)

    def rows(self):
        """CSV rows ``(step, mse, bias_norm, cov_trace)`` with 1-based steps."""
        for n, (mse, mean, cov) in enumerate(zip(self.per_step_mse, self.per_step_mean, self.per_step_cov), start=1):
            yield n, float(mse), float(np.linalg.norm(mean)), float(np.trace(cov))


def initial_stats(model: SldsModel, weight: float = 1.0) -> PairTrajectoryStats:
    """Moments at n = 0, where the estimate is the prior mean for every pair."""
    m0, P0 = model.x0_mean, model.P0
    z = model.z
    mean = np.concatenate([m0, np.zeros(z)])
    second = np.empty((2 * z, 2 * z))
    second[:z, :z] = P0 + np.outer(m0, m0)
    second[:z, z:] = P0
    second[z:, :z] = P0
    second[z:, z:] = P0
    return PairTrajectoryStats((), (), mean, symmetrize(second), P0.copy(), weight)


def error_step(stats: PairTrajectoryStats, true_mode: int, used_mode: int, model: SldsModel) -> PairTrajectoryStats:
    """Advance a pair's joint moments by one step (true mode ``i``, used mode ``j``)."""
    r = model.r
    if not (0 <= true_mode < r and 0 <= used_mode < r):
        raise PreconditionError(f"mode index out of range for r={r}")
    Ai, Qi = model.modes[true_mode].A, model.modes[true_mode].Q
    Aj, Qj = model.modes[used_mode].A, model.modes[used_mode].Q
    H, R = model.H, model.R
    z, m = model.z, model.m

    P_pred = symmetrize(Aj @ stats.filter_cov @ Aj.T + Qj)
    K = kalman_gain(P_pred, H, R)
    IKH = np.eye(z) - K @ H

    F = np.zeros((2 * z, 2 * z))
    F[:z, :z] = Ai
    F[z:, :z] = IKH @ (Ai - Aj)
    F[z:, z:] = IKH @ Aj
    # (nu, omega) enter both rows; the shared nu gives the (I - KH) Q cross block
    G = np.zeros((2 * z, z + m))
    G[:z, :z] = np.eye(z)
    G[z:, :z] = IKH
    G[z:, z:] = -K
    noise = np.zeros((z + m, z + m))
    noise[:z, :z] = Qi
    noise[z:, z:] = R

    return PairTrajectoryStats(
        true_suffix=stats.true_suffix + (true_mode,),
        used_suffix=stats.used_suffix + (used_mode,),
        joint_mean=F @ stats.joint_mean,
        joint_second=symmetrize(F @ stats.joint_second @ F.T + G @ noise @ G.T),
        filter_cov=symmetrize(IKH @ P_pred),
        weight=stats.weight,
    )


def propagate_pair(model: SldsModel, true_traj: Sequence[int], used_traj: Sequence[int]) -> list[PairTrajectoryStats]:
    """Moments at every step for one fixed pair of trajectories (weight 1)."""
    if len(true_traj) != len(used_traj):
        raise PreconditionError("trajectories must have equal length")
    stats = initial_stats(model)
    out = []
    for i, j in zip(true_traj, used_traj):
        stats = error_step(stats, i, j, model)
        out.append(stats)
    return out


def _pair_levels(model, detection, horizon, used_modes, cap):
    if horizon < 1:
        raise PreconditionError("horizon T0 must be >= 1")
    r = model.r
    used = list(range(r)) if used_modes is None else sorted(set(int(k) for k in used_modes))
    if any(not 0 <= k < r for k in used):
        raise PreconditionError("used_modes index out of range")
    rho = detection.matrix(r)
    outside = [k for k in range(r) if k not in used]
    if outside and np.any(rho[:, outside] > 0):
        raise PreconditionError("detection assigns probability to modes outside used_modes")
    count = float(r) ** horizon * float(len(used)) ** horizon
    if count > cap:
        raise CapacityError(
            f"{count:.3g} trajectory pairs exceed the cap of {cap}; reduce the horizon T0 (currently {horizon})"
        )

    level = [initial_stats(model)]
    for n in range(horizon):
        nxt = []
        for stats in level:
            for i in range(r):
                p_true = model.priors[i] if n == 0 else model.transitions[stats.true_suffix[-1], i]
                if p_true == 0:
                    continue
                for j in used:
                    w = stats.weight * p_true * rho[i, j]
                    if w == 0:
                        continue
                    nxt.append(replace(error_step(stats, i, j, model), weight=float(w)))
        level = nxt
        yield level


def enumerate_pairs(
    model: SldsModel,
    detection: DetectionModel,
    horizon: int = 1,
    used_modes: Sequence[int] | None = None,
    cap: int = DEFAULT_PAIR_CAP,
) -> list[PairTrajectoryStats]:
    """All live (weight > 0) trajectory pairs of length ``horizon``.

    Weights follow ``prior/transition(true) * P(detect used | true)`` at every
    step, with detection independent across time given the true trajectory.
    """
    require_valid(model)
    level = []
    for level in _pair_levels(model, detection, horizon, used_modes, cap):
        pass
    return level


def expected_mse(
    model: SldsModel,
    detection: DetectionModel,
    horizon: int = 1,
    used_modes: Sequence[int] | None = None,
    cap: int = DEFAULT_PAIR_CAP,
) -> MseReport:
    """Mixture of pair moments: expected squared error, error mean and covariance per step."""
    require_valid(model)
    z = model.z
    mse, means, covs = [], [], []
    for level in _pair_levels(model, detection, horizon, used_modes, cap):
        mean = np.zeros(z)
        second = np.zeros((z, z))
        for stats in level:
            mean += stats.weight * stats.error_mean
            second += stats.weight * stats.error_second
        mse.append(np.trace(second))
        means.append(mean)
        covs.append(symmetrize(second - np.outer(mean, mean)))
    return MseReport(np.array(mse), np.array(means), np.array(covs))
