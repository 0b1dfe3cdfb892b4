"""Fully connected mode graph weighted by the excess error of merging two modes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError
from .mismatch_error import propagate_pair
from .slds_core import SldsModel, require_valid

REDUCTIONS = ("mean", "sum")


@dataclass(frozen=True)
class ModeGraph:
    """Symmetric, zero-diagonal edge matrix over the modes.

    ``per_step_edges[n]`` holds the contribution of step ``n + 1`` so that
    ``edges == per_step_edges.sum(axis=0)``.
    """

    edges: np.ndarray
    horizon: int
    per_step_edges: np.ndarray | None = None

    @property
    def r(self) -> int:
        return self.edges.shape[0]

    def at_step(self, n: int) -> "ModeGraph":
        """Single-step graph for 0-based step ``n``."""
        if self.per_step_edges is None:
            raise PreconditionError("graph was built without per-step edges")
        return ModeGraph(self.per_step_edges[n], 1, self.per_step_edges[n : n + 1])

    def rows(self):
        """CSV rows ``(i, j, d)`` for i < j with 1-based labels."""
        for i in range(self.r):
            for j in range(i + 1, self.r):
                yield i + 1, j + 1, float(self.edges[i, j])


def conditional_mse(model: SldsModel, true_mode: int, filter_mode: int, horizon: int = 1) -> np.ndarray:
    """Per-step ``E|x_n - xhat_n|^2`` with mode ``true_mode`` held true and the
    filter running ``filter_mode`` at every step of the horizon."""
    if horizon < 1:
        raise PreconditionError("horizon T0 must be >= 1")
    stats = propagate_pair(model, [true_mode] * horizon, [filter_mode] * horizon)
    return np.array([s.mse for s in stats])


def _combine(mse_ij, mse_ii, mse_ji, mse_jj, reduction):
    excess = (mse_ij - mse_ii) + (mse_ji - mse_jj)
    return 0.5 * excess if reduction == "mean" else excess


def edge_weight(model: SldsModel, i: int, j: int, horizon: int = 1, reduction: str = "mean") -> float:
    """Excess squared error of representing modes ``i`` and ``j`` by either one alone.

    Each direction contributes the error of the wrong-mode filter minus the
    error of the matched filter, accumulated over the horizon. ``reduction``
    averages the two directions (``"mean"``, default) or adds them (``"sum"``).
    With ``"mean"`` and equal priors inside a cluster, the cluster-excess
    formula in :mod:`skfgraph.clustering` equals the true excess error.
    """
    if i == j:
        raise PreconditionError("edge_weight needs two distinct modes")
    if reduction not in REDUCTIONS:
        raise PreconditionError(f"reduction must be one of {REDUCTIONS}")
    per_step = _combine(
        conditional_mse(model, i, j, horizon),
        conditional_mse(model, i, i, horizon),
        conditional_mse(model, j, i, horizon),
        conditional_mse(model, j, j, horizon),
        reduction,
    )
    return float(per_step.sum())


def build_graph(model: SldsModel, horizon: int = 1, reduction: str = "mean") -> ModeGraph:
    """Compute all r(r-1)/2 edges; matched-filter errors are computed once per mode."""
    require_valid(model)
    if reduction not in REDUCTIONS:
        raise PreconditionError(f"reduction must be one of {REDUCTIONS}")
    r = model.r
    matched = [conditional_mse(model, i, i, horizon) for i in range(r)]
    per_step = np.zeros((horizon, r, r))
    for i in range(r):
        for j in range(i + 1, r):
            d = _combine(
                conditional_mse(model, i, j, horizon),
                matched[i],
                conditional_mse(model, j, i, horizon),
                matched[j],
                reduction,
            )
            per_step[:, i, j] = per_step[:, j, i] = d
    return ModeGraph(per_step.sum(axis=0), horizon, per_step)
