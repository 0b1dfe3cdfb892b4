"""Monte Carlo verification, runtime benchmarking and the KF-count saving model.

Every comparison filters one shared simulated batch (common random numbers),
so differences between configurations are estimated from paired runs.
"""

from __future__ import annotations

import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .clustering import Partition, reduced_from_representatives, sample_representatives, theorem1_excess
from .errors import PreconditionError
from .kalman import kf_filter_batch, skf_map
from .mode_graph import ModeGraph
from .slds_core import DetectionModel, SimulationBatch, SldsModel, require_valid, simulate_batch


@dataclass(frozen=True)
class McComparison:
    """MC squared-error curves for several filter configurations."""

    labels: list[str]
    per_step_mse: np.ndarray  # (L, T)
    per_step_stderr: np.ndarray  # (L, T)
    runs: int
    seed: int

    def curve(self, label: str) -> tuple[np.ndarray, np.ndarray]:
        k = self.labels.index(label)
        return self.per_step_mse[k], self.per_step_stderr[k]

    def rows(self):
        for label, mse, se in zip(self.labels, self.per_step_mse, self.per_step_stderr):
            for n, (a, b) in enumerate(zip(mse, se), start=1):
                yield label, n, float(a), float(b)


@dataclass(frozen=True)
class ExcessComparison:
    """MC excess error of a reduced filter over the full one, next to the prediction."""

    partition: Partition
    mc_excess: np.ndarray  # (T,)
    stderr: np.ndarray  # (T,)
    predicted: float
    predicted_per_step: np.ndarray | None  # (T0,) when the graph has per-step edges


@dataclass(frozen=True)
class BenchResult:
    label: str
    n_modes: int
    median_seconds: float
    repetitions: int


@dataclass(frozen=True)
class FlopSaving:
    kf_count_saved: int
    flop_estimate_saved: int
    note: str = ""


def mean_and_stderr(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column means and standard errors of an (N, T) sample array."""
    N = samples.shape[0]
    if N < 2:
        raise PreconditionError("at least two runs are needed for a standard error")
    return samples.mean(axis=0), samples.std(axis=0, ddof=1) / np.sqrt(N)


def _stream(seed, tag: str) -> np.random.Generator:
    key = zlib.crc32(tag.encode())
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(key,)))


def _check_compatible(a: SldsModel, b: SldsModel) -> None:
    if a.z != b.z or a.m != b.m:
        raise PreconditionError(f"model dimensions differ: (z, m) = ({a.z}, {a.m}) vs ({b.z}, {b.m})")


def _squared_errors(states: np.ndarray, means: np.ndarray) -> np.ndarray:
    return ((states - means) ** 2).sum(axis=-1)


def _skf_errors(
    models: Sequence[SldsModel],
    batch: SimulationBatch,
    memory_u: int,
    workers: int = 1,
    use_transition_prior: bool = True,
) -> np.ndarray:
    """Squared errors of skf_map run k on ``models[k]`` (one model per run)."""

    def one(k):
        res = skf_map(models[k], batch.measurements[k], memory_u, use_transition_prior, check=False)
        return _squared_errors(batch.states[k], res.means)

    if workers == 1:
        rows = [one(k) for k in range(len(batch))]
    else:
        with ThreadPoolExecutor(max_workers=workers or None) as pool:
            rows = list(pool.map(one, range(len(batch))))
    return np.array(rows)


def _forced_errors(model: SldsModel, used: np.ndarray, batch: SimulationBatch) -> np.ndarray:
    """Squared errors of Kalman filters forced to follow ``used`` (N, T) mode sequences.

    Runs sharing a used sequence share their gains and are filtered together.
    """
    out = np.empty(used.shape)
    seqs, inverse = np.unique(used, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    for g, seq in enumerate(seqs):
        idx = np.flatnonzero(inverse == g)
        means = kf_filter_batch(model, seq, batch.measurements[idx])
        out[idx] = _squared_errors(batch.states[idx], means)
    return out


def _representative_maps(model: SldsModel, partition: Partition, N: int, rng: np.random.Generator) -> np.ndarray:
    """(N, r) array: for each run, the representative used for each full-model mode."""
    maps = np.empty((N, model.r), dtype=int)
    for members in partition.clusters:
        p = model.priors[list(members)]
        p = p / p.sum() if p.sum() > 0 else np.full(len(members), 1.0 / len(members))
        reps = np.asarray(members)[rng.choice(len(members), size=N, p=p)] if len(members) > 1 else members[0]
        maps[:, list(members)] = np.reshape(reps, (-1, 1)) if len(members) > 1 else reps
    return maps


def configuration_errors(
    true_model: SldsModel,
    batch: SimulationBatch,
    partition: Partition | None,
    detection: DetectionModel | None,
    memory_u: int,
    seed,
    workers: int = 1,
    use_transition_prior: bool = True,
) -> np.ndarray:
    """(N, T) squared errors of the full (``partition=None``) or a reduced filter.

    ``detection=None`` runs the MAP switching filter on the (reduced) model.
    ``perfect`` / ``oracle-cluster`` force the filter onto the representative
    of the true mode's cluster; ``confusion`` draws a detected mode per step
    from the confusion matrix and uses its cluster representative.
    Representatives are resampled for every run.
    """
    N, T = batch.modes.shape
    part = partition or Partition.singletons(true_model.r)
    rep_map = _representative_maps(true_model, part, N, _stream(seed, "representatives:" + str(part)))

    if detection is None:
        models = []
        for k in range(N):
            reps = [int(rep_map[k, c[0]]) for c in part.clusters]
            models.append(reduced_from_representatives(true_model, part, reps) if partition else true_model)
        return _skf_errors(models, batch, memory_u, workers, use_transition_prior)

    if detection.kind == "confusion":
        rho = detection.matrix(true_model.r)
        rng = _stream(seed, "detection")
        u = rng.random((N, T))
        cum = np.cumsum(rho, axis=1)[batch.modes]
        detected = np.minimum((u[..., None] >= cum).sum(axis=-1), true_model.r - 1)
    else:
        detected = batch.modes
    used = np.take_along_axis(rep_map, detected, axis=1)
    return _forced_errors(true_model, used, batch)


def mc_mse(
    true_model: SldsModel,
    filter_model: SldsModel,
    memory_u: int = 1,
    T: int = 10,
    N: int = 1000,
    seed: int = 0,
    workers: int = 1,
    use_transition_prior: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-step MC mean of ``|x_n - xhat_n|^2`` and its standard error."""
    _check_compatible(true_model, filter_model)
    require_valid(filter_model)
    if N < 2:
        raise PreconditionError("N must be >= 2")
    batch = simulate_batch(true_model, T, N, seed)
    errors = _skf_errors([filter_model] * N, batch, memory_u, workers, use_transition_prior)
    return mean_and_stderr(errors)


def mc_compare(
    true_model: SldsModel,
    partitions: Sequence[Partition],
    memory_u: int = 1,
    T: int = 10,
    N: int = 1000,
    seed: int = 0,
    detection: DetectionModel | None = None,
    workers: int = 1,
    use_transition_prior: bool = True,
) -> McComparison:
    """MC curves of the full filter (label ``full``) and one reduced filter per partition."""
    if N < 2:
        raise PreconditionError("N must be >= 2")
    batch = simulate_batch(true_model, T, N, seed)
    labels, mse, se = [], [], []
    for part in [None, *partitions]:
        errors = configuration_errors(
            true_model, batch, part, detection, memory_u, seed, workers, use_transition_prior
        )
        m, s = mean_and_stderr(errors)
        labels.append("full" if part is None else str(part))
        mse.append(m)
        se.append(s)
    return McComparison(labels, np.array(mse), np.array(se), N, seed)


def mc_excess(
    true_model: SldsModel,
    partition: Partition,
    graph: ModeGraph,
    priors,
    detection: DetectionModel | None,
    T: int,
    N: int,
    seed: int = 0,
    memory_u: int = 1,
    workers: int = 1,
    use_transition_prior: bool = True,
) -> ExcessComparison:
    """Paired MC excess error of the reduced filter over the full filter.

    The prediction is the cluster-excess formula on ``graph``; when the graph
    carries per-step edges the per-step predictions are reported as well.
    """
    if N < 2:
        raise PreconditionError("N must be >= 2")
    batch = simulate_batch(true_model, T, N, seed)
    full = configuration_errors(true_model, batch, None, detection, memory_u, seed, workers, use_transition_prior)
    reduced = configuration_errors(
        true_model, batch, partition, detection, memory_u, seed, workers, use_transition_prior
    )
    excess, stderr = mean_and_stderr(reduced - full)
    per_step = None
    if graph.per_step_edges is not None:
        per_step = np.array([theorem1_excess(partition, priors, graph.at_step(n)) for n in range(graph.horizon)])
    return ExcessComparison(partition, excess, stderr, theorem1_excess(partition, priors, graph), per_step)


def runtime_bench(
    model: SldsModel,
    partitions: Sequence[Partition],
    memory_u: int = 1,
    T: int = 10,
    N_timing: int = 5,
    seed: int = 0,
    runs_per_rep: int = 20,
) -> list[BenchResult]:
    """Median wall time of skf_map for the full model and each reduced model.

    One warm-up pass precedes the timed repetitions, which are interleaved
    across configurations; each repetition filters ``runs_per_rep``
    simulated sequences. Only orderings and ratios of the
    results are meaningful.
    """
    if N_timing < 5:
        raise PreconditionError("N_timing must be >= 5 for a stable median")
    batch = simulate_batch(model, T, runs_per_rep, seed)
    rng = _stream(seed, "bench")
    configs = [("full", model)]
    for part in partitions:
        reps = sample_representatives(part, model.priors, rng)
        configs.append((str(part), reduced_from_representatives(model, part, reps)))
    def run(m):
        t0 = time.perf_counter()
        for y in batch.measurements:
            skf_map(m, y, memory_u, check=False)
        return time.perf_counter() - t0

    for _, m in configs:
        run(m)
    # round-robin so slow periods on the host hit every configuration alike
    times = [[run(m) for _, m in configs] for _ in range(N_timing)]
    per_config = np.median(np.array(times), axis=0)
    return [BenchResult(label, m.r, float(t), N_timing) for (label, m), t in zip(configs, per_config)]


def flop_saving(memory_u: int, full_modes: int, reduced_modes: int, state_dim: int, meas_dim: int) -> FlopSaving:
    """KF runs saved by reducing ``full_modes`` to ``reduced_modes`` with memory ``u``.

    The flop estimate realizes the per-filter cost ``n m^2 + n^2 m + n^3``
    with unit constants.
    """
    u, p, q, n, m = memory_u, full_modes, reduced_modes, state_dim, meas_dim
    if q >= p:
        raise PreconditionError("reduced_modes must be smaller than full_modes")
    if u < 1:
        raise PreconditionError("memory_u must be >= 1")
    saved = u**p - u**q
    note = "the u^p - u^q count vanishes for u = 1" if u == 1 else ""
    return FlopSaving(saved, saved * (n * m * m + n * n * m + n**3), note)


@dataclass(frozen=True)
class DetectionEstimate:
    """Per-step empirical confusion matrices; rows of unrealized true modes are NaN."""

    matrix: np.ndarray  # (T, r, r)
    counts: np.ndarray  # (T, r, r)

    @property
    def unavailable(self) -> np.ndarray:
        return self.counts.sum(axis=2) == 0


def detection_matrix_estimate(
    model: SldsModel,
    memory_u: int = 1,
    T: int = 10,
    N: int = 1000,
    seed: int = 0,
    workers: int = 1,
    use_transition_prior: bool = True,
) -> DetectionEstimate:
    """Tabulate ``P(detected = j | true = i)`` per step from skf_map detections."""
    if N < 100:
        raise PreconditionError("N must be >= 100")
    require_valid(model)
    batch = simulate_batch(model, T, N, seed)
    r = model.r

    def one(k):
        return skf_map(model, batch.measurements[k], memory_u, use_transition_prior, check=False).detected

    if workers == 1:
        detected = np.array([one(k) for k in range(N)])
    else:
        with ThreadPoolExecutor(max_workers=workers or None) as pool:
            detected = np.array(list(pool.map(one, range(N))))
    counts = np.zeros((T, r, r))
    for n in range(T):
        np.add.at(counts[n], (batch.modes[:, n], detected[:, n]), 1.0)
    totals = counts.sum(axis=2, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        matrix = np.where(totals > 0, counts / totals, np.nan)
    return DetectionEstimate(matrix, counts)
