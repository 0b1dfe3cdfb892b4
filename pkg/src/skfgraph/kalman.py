"""Kalman filtering and the finite-memory MAP switching Kalman filter."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy import linalg

from .errors import NumericalError, PreconditionError
from .slds_core import ModeParams, SldsModel, require_valid, symmetrize

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GaussianBelief:
    """Filtered state mean and covariance."""

    mean: np.ndarray
    cov: np.ndarray


class MeasurementUpdate(NamedTuple):
    belief: GaussianBelief
    innovation: np.ndarray
    log_likelihood: float


@dataclass(frozen=True)
class SkfResult:
    """Output of :func:`skf_map`.

    ``estimates[n]`` is the belief of the single most probable branch at step
    ``n``; ``detected[n]`` is the argmax of ``mode_posteriors[n]``.
    """

    estimates: list[GaussianBelief]
    detected: np.ndarray
    mode_posteriors: np.ndarray  # (T, r)
    log_likelihood: float

    @property
    def means(self) -> np.ndarray:
        return np.array([b.mean for b in self.estimates])


def time_update(belief: GaussianBelief, mode: ModeParams) -> GaussianBelief:
    A = mode.A
    if A.shape[1] != belief.mean.shape[0]:
        raise PreconditionError(f"A is {A.shape} but the belief has dimension {belief.mean.shape[0]}")
    return GaussianBelief(A @ belief.mean, symmetrize(A @ belief.cov @ A.T + mode.Q))


def _factor_innovation(S: np.ndarray):
    try:
        return linalg.cho_factor(S, lower=True, check_finite=False)
    except linalg.LinAlgError:
        cond = np.linalg.cond(S)
        raise NumericalError(f"innovation covariance is singular or indefinite (condition number {cond:.3e})") from None


def kalman_gain(pred_cov: np.ndarray, H: np.ndarray, R: np.ndarray) -> np.ndarray:
    """``K = P H^T (H P H^T + R)^{-1}`` via a Cholesky solve."""
    S = symmetrize(H @ pred_cov @ H.T + R)
    factor = _factor_innovation(S)
    return linalg.cho_solve(factor, H @ pred_cov, check_finite=False).T


def measurement_update(
    pred: GaussianBelief,
    H: np.ndarray,
    R: np.ndarray,
    y: np.ndarray,
    joseph: bool = False,
) -> MeasurementUpdate:
    """Condition a predicted belief on measurement ``y``.

    The covariance update is ``(I - K H) P`` unless ``joseph`` is set, in which
    case the Joseph form ``(I - K H) P (I - K H)^T + K R K^T`` is used.
    """
    mean, cov = pred.mean, pred.cov
    if H.shape[1] != mean.shape[0] or H.shape[0] != np.shape(y)[0]:
        raise PreconditionError(f"H is {H.shape}, belief dim {mean.shape[0]}, measurement dim {np.shape(y)[0]}")
    S = symmetrize(H @ cov @ H.T + R)
    factor = _factor_innovation(S)
    innovation = y - H @ mean
    K = linalg.cho_solve(factor, H @ cov, check_finite=False).T
    IKH = np.eye(mean.shape[0]) - K @ H
    if joseph:
        new_cov = IKH @ cov @ IKH.T + K @ R @ K.T
    else:
        new_cov = IKH @ cov
    white = linalg.solve_triangular(factor[0], innovation, lower=True, check_finite=False)
    logdet = 2.0 * np.sum(np.log(np.diag(factor[0])))
    ll = -0.5 * (float(white @ white) + logdet + innovation.shape[0] * LOG_2PI)
    return MeasurementUpdate(GaussianBelief(mean + K @ innovation, symmetrize(new_cov)), innovation, ll)


def initial_belief(model: SldsModel) -> GaussianBelief:
    return GaussianBelief(model.x0_mean.copy(), model.P0.copy())


def kf_filter(
    model: SldsModel,
    mode_sequence: Sequence[int],
    measurements: np.ndarray,
    joseph: bool = False,
) -> list[GaussianBelief]:
    """Run a Kalman filter that uses ``modes[mode_sequence[n]]`` at step n."""
    measurements = np.atleast_2d(np.asarray(measurements, dtype=float))
    if len(mode_sequence) != len(measurements):
        raise PreconditionError("mode_sequence and measurements must have equal length")
    belief = initial_belief(model)
    out = []
    for k, y in zip(mode_sequence, measurements):
        pred = time_update(belief, model.modes[k])
        belief = measurement_update(pred, model.H, model.R, y, joseph).belief
        out.append(belief)
    return out


def riccati(model: SldsModel, mode_sequence: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Gains and filtered covariances of a filter that follows ``mode_sequence``.

    Returns ``(gains, covs)`` with shapes (T, z, m) and (T, z, z).
    """
    z, m = model.z, model.m
    T = len(mode_sequence)
    gains = np.empty((T, z, m))
    covs = np.empty((T, z, z))
    P = model.P0
    for n, k in enumerate(mode_sequence):
        mode = model.modes[k]
        P_pred = symmetrize(mode.A @ P @ mode.A.T + mode.Q)
        K = kalman_gain(P_pred, model.H, model.R)
        P = symmetrize((np.eye(z) - K @ model.H) @ P_pred)
        gains[n], covs[n] = K, P
    return gains, covs


def kf_filter_batch(model: SldsModel, mode_sequence: Sequence[int], measurements: np.ndarray) -> np.ndarray:
    """Filter many measurement sequences with one shared mode sequence.

    All runs share the gain sequence, so only the means are propagated per
    run. ``measurements`` is (N, T, m); returns the filtered means (N, T, z).
    """
    measurements = np.asarray(measurements, dtype=float)
    N, T, _ = measurements.shape
    gains, _ = riccati(model, mode_sequence)
    means = np.empty((N, T, model.z))
    x = np.broadcast_to(model.x0_mean, (N, model.z))
    for n, k in enumerate(mode_sequence):
        x = x @ model.modes[k].A.T
        x = x + (measurements[:, n] - x @ model.H.T) @ gains[n].T
        means[:, n] = x
    return means


def skf_map(
    model: SldsModel,
    measurements: np.ndarray,
    memory_u: int = 1,
    use_transition_prior: bool = True,
    joseph: bool = False,
    check: bool = True,
) -> SkfResult:
    """MAP switching Kalman filter with finite trajectory memory.

    Every surviving branch is extended with all r modes; a branch's log-weight
    accumulates the log prior/transition probability (unless
    ``use_transition_prior`` is False, giving a pure likelihood-ratio detector)
    plus the innovation log-likelihood. After scoring, only the best branch of
    each class sharing the last ``memory_u - 1`` modes survives. Mode
    posteriors are computed over all extended branches before pruning.

    ``check=False`` skips model validation (for callers that validated once).
    """
    if memory_u < 1:
        raise PreconditionError("memory_u must be >= 1")
    if check:
        require_valid(model)
    measurements = np.atleast_2d(np.asarray(measurements, dtype=float))
    r = model.r
    with np.errstate(divide="ignore"):
        log_priors = np.log(model.priors)
        log_trans = np.log(model.transitions)
    keep = memory_u - 1
    branches: list[tuple[tuple[int, ...], GaussianBelief, float]] = [((), initial_belief(model), 0.0)]
    estimates: list[GaussianBelief] = []
    posteriors = np.empty((len(measurements), r))
    log_evidence = 0.0

    for n, y in enumerate(measurements):
        candidates = []
        for traj, belief, logw in branches:
            for i, mode in enumerate(model.modes):
                upd = measurement_update(time_update(belief, mode), model.H, model.R, y, joseph)
                w = logw + upd.log_likelihood
                if use_transition_prior:
                    w += log_priors[i] if not traj else log_trans[traj[-1], i]
                candidates.append((traj + (i,), upd.belief, w))

        logw = np.array([c[2] for c in candidates])
        top = logw.max()
        if not np.isfinite(top):
            raise NumericalError(f"all branch weights vanished at step {n}")
        w = np.exp(logw - top)
        total = w.sum()
        log_evidence = top + math.log(total)
        current = np.array([c[0][-1] for c in candidates])
        posteriors[n] = np.bincount(current, weights=w / total, minlength=r)
        estimates.append(candidates[int(np.argmax(logw))][1])

        best: dict[tuple[int, ...], tuple] = {}
        for cand in candidates:
            key = cand[0][-keep:] if keep else ()
            if key not in best or cand[2] > best[key][2]:
                best[key] = cand
        branches = [best[key] for key in sorted(best)]

    detected = np.argmax(posteriors, axis=1)
    return SkfResult(estimates, detected, posteriors, float(log_evidence))
