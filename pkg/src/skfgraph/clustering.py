"""Minimum-sum clustering of SLDS modes and construction of the reduced model."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import PreconditionError
from .mode_graph import ModeGraph
from .slds_core import SldsModel

EXHAUSTIVE_MAX_MODES = 12


class PartitionError(PreconditionError):
    """A partition is malformed or does not cover the mode set."""


@dataclass(frozen=True, order=True)
class Partition:
    """Disjoint grouping of modes ``0..r-1`` in canonical form.

    Members are sorted ascending and clusters are ordered by smallest member,
    so equal partitions compare equal and sort deterministically. The string
    form uses 1-based labels: ``{1,3}|{2}|{4}``.
    """

    clusters: tuple[tuple[int, ...], ...]

    @classmethod
    def from_clusters(cls, clusters: Iterable[Iterable[int]], r: int | None = None) -> "Partition":
        groups = [tuple(sorted(int(k) for k in c)) for c in clusters]
        members = [k for g in groups for k in g]
        if any(len(g) == 0 for g in groups):
            raise PartitionError("empty cluster")
        if len(set(members)) != len(members):
            raise PartitionError("clusters are not disjoint")
        n = len(members) if r is None else r
        if any(not 0 <= k < n for k in members):
            raise PartitionError(f"index out of range for r={n}")
        if sorted(members) != list(range(n)):
            raise PartitionError(f"clusters do not cover all {n} modes")
        return cls(tuple(sorted(groups)))

    @classmethod
    def parse(cls, text: str, r: int | None = None) -> "Partition":
        """Parse ``{1,3}|{2}|{4}`` (1-based, any order) into a canonical partition."""
        parts = [p.strip() for p in text.strip().split("|")]
        clusters = []
        for p in parts:
            match = re.fullmatch(r"\{\s*(\d+(?:\s*,\s*\d+)*)\s*\}", p)
            if not match:
                raise PartitionError(f"cannot parse cluster {p!r} in {text!r}")
            clusters.append([int(k) - 1 for k in match.group(1).split(",")])
        return cls.from_clusters(clusters, r)

    @classmethod
    def singletons(cls, r: int) -> "Partition":
        return cls(tuple((k,) for k in range(r)))

    @property
    def r(self) -> int:
        return sum(len(c) for c in self.clusters)

    def __len__(self) -> int:
        return len(self.clusters)

    def __str__(self) -> str:
        return "|".join("{" + ",".join(str(k + 1) for k in c) + "}" for c in self.clusters)

    def cluster_of(self) -> np.ndarray:
        """Array mapping each mode to the index of its cluster."""
        out = np.empty(self.r, dtype=int)
        for c, members in enumerate(self.clusters):
            out[list(members)] = c
        return out

    @property
    def is_trivial(self) -> bool:
        return all(len(c) == 1 for c in self.clusters)


@dataclass(frozen=True)
class ClusterReport:
    partition: Partition
    predicted_excess: float
    rank: int
    heuristic: bool = False
    flags: tuple[str, ...] = field(default=())


def _representative_probs(priors: np.ndarray, members: Sequence[int], renormalize: bool) -> np.ndarray:
    p = priors[list(members)]
    if not renormalize:
        return p
    total = p.sum()
    return p / total if total > 0 else np.full(len(p), 1.0 / len(p))


def _cluster_excess(members, priors, D, renormalize):
    if len(members) < 2:
        return 0.0
    idx = list(members)
    rep = _representative_probs(priors, idx, renormalize)
    true = priors[idx]
    # sum over ordered pairs j != k of pi_j * pi~_k * d(k, j); the diagonal of D is zero
    return float(true @ D[np.ix_(idx, idx)].T @ rep)


def theorem1_excess(partition: Partition, priors, graph: ModeGraph, renormalize: bool = True) -> float:
    """Predicted excess squared error of replacing each cluster by a random member.

    Sums ``pi_j * pi~_k * d(k, j)`` over ordered pairs of distinct modes that
    share a cluster. ``pi~_k`` is the representative probability: the prior
    renormalized within the cluster, or the raw prior when ``renormalize`` is
    False.
    """
    priors = np.asarray(priors, dtype=float)
    D = np.asarray(graph.edges, dtype=float)
    if priors.shape != (D.shape[0],):
        raise PreconditionError(f"priors length {priors.size} does not match graph size {D.shape[0]}")
    if partition.r != D.shape[0]:
        raise PartitionError(f"partition covers {partition.r} modes, graph has {D.shape[0]}")
    return sum(_cluster_excess(c, priors, D, renormalize) for c in partition.clusters)


def set_partitions(r: int) -> Iterator[Partition]:
    """All set partitions of ``range(r)`` via restricted growth strings."""
    if r < 1:
        return
    labels = [0] * r

    def rec(k: int, n_blocks: int):
        if k == r:
            blocks = [[] for _ in range(n_blocks)]
            for mode, b in enumerate(labels):
                blocks[b].append(mode)
            yield Partition(tuple(tuple(b) for b in blocks))
            return
        for b in range(n_blocks + 1):
            labels[k] = b
            yield from rec(k + 1, max(n_blocks, b + 1))

    yield from rec(1, 1)


def greedy_merge_path(graph: ModeGraph, priors, renormalize: bool = True) -> list[Partition]:
    """Agglomerative path from all singletons down to one cluster.

    Each step merges the two clusters whose union adds the least predicted
    excess. Element ``n`` of the result has ``r - n`` clusters.
    """
    priors = np.asarray(priors, dtype=float)
    D = np.asarray(graph.edges, dtype=float)
    r = D.shape[0]
    clusters = [(i,) for i in range(r)]
    path = [Partition.singletons(r)]
    while len(clusters) > 1:
        best = None
        for a in range(len(clusters)):
            for b in range(a + 1, len(clusters)):
                merged = tuple(sorted(clusters[a] + clusters[b]))
                delta = (
                    _cluster_excess(merged, priors, D, renormalize)
                    - _cluster_excess(clusters[a], priors, D, renormalize)
                    - _cluster_excess(clusters[b], priors, D, renormalize)
                )
                if best is None or delta < best[0]:
                    best = (delta, a, b, merged)
        _, a, b, merged = best
        clusters = [c for n, c in enumerate(clusters) if n not in (a, b)] + [merged]
        path.append(Partition.from_clusters(clusters, r))
    return path


def min_sum_cluster(
    graph: ModeGraph,
    priors,
    k: int | None = None,
    budget: float | None = None,
    renormalize: bool = True,
    exhaustive_max: int = EXHAUSTIVE_MAX_MODES,
) -> list[ClusterReport]:
    """Rank partitions by predicted excess error.

    With ``k`` only partitions with exactly ``k`` clusters are returned; with
    ``budget`` only partitions whose excess is within the budget, ordered by
    fewest clusters first (so the first report answers "smallest model within
    the error budget"). With neither, every partition is ranked. Ties are
    broken by canonical partition order. Above ``exhaustive_max`` modes only
    the partitions on the greedy merge path are considered and every report
    is flagged ``heuristic``.
    """
    priors = np.asarray(priors, dtype=float)
    D = np.asarray(graph.edges, dtype=float)
    r = D.shape[0]
    if k is not None and not 1 <= k <= r:
        raise PreconditionError(f"cluster count k must be in [1, {r}]")
    if budget is not None and budget < 0:
        raise PreconditionError("excess budget must be >= 0")
    if priors.shape != (r,):
        raise PreconditionError(f"priors length {priors.size} does not match graph size {r}")

    heuristic = r > exhaustive_max
    candidates = greedy_merge_path(graph, priors, renormalize) if heuristic else set_partitions(r)
    scored = []
    for part in candidates:
        if k is not None and len(part) != k:
            continue
        excess = theorem1_excess(part, priors, graph, renormalize)
        if budget is not None and excess > budget:
            continue
        scored.append((excess, part))
    if budget is not None:
        scored.sort(key=lambda t: (len(t[1]), t[0], t[1]))
    else:
        scored.sort(key=lambda t: (t[0], t[1]))
    return [ClusterReport(part, excess, rank, heuristic) for rank, (excess, part) in enumerate(scored, start=1)]


def sample_representatives(partition: Partition, priors, rng: np.random.Generator) -> tuple[int, ...]:
    """Draw one representative per cluster with within-cluster renormalized priors."""
    priors = np.asarray(priors, dtype=float)
    reps = []
    for members in partition.clusters:
        if len(members) == 1:
            reps.append(members[0])
            continue
        p = _representative_probs(priors, members, True)
        reps.append(int(members[rng.choice(len(members), p=p)]))
    return tuple(reps)


def reduced_from_representatives(model: SldsModel, partition: Partition, representatives: Sequence[int]) -> SldsModel:
    """Reduced model keeping each cluster's representative (A, Q).

    Priors aggregate by cluster. Transition rows are the within-cluster
    prior-weighted average of the member rows, summed over target clusters.
    """
    if partition.r != model.r:
        raise PartitionError(f"partition covers {partition.r} modes, model has {model.r}")
    c = len(partition)
    priors = np.array([model.priors[list(m)].sum() for m in partition.clusters])
    trans = np.zeros((c, c))
    for a, src in enumerate(partition.clusters):
        w = _representative_probs(model.priors, src, True)
        rows = w @ model.transitions[list(src)]
        for b, dst in enumerate(partition.clusters):
            trans[a, b] = rows[list(dst)].sum()
    trans /= trans.sum(axis=1, keepdims=True)
    modes = [model.modes[k] for k in representatives]
    return model.with_modes(modes, priors, trans)


def reduce_model(model: SldsModel, partition: Partition, seed) -> tuple[SldsModel, tuple[int, ...]]:
    """Sample representatives with the seeded stream and build the reduced model."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    reps = sample_representatives(partition, model.priors, rng)
    return reduced_from_representatives(model, partition, reps), reps


@dataclass(frozen=True)
class ConsistencyReport:
    """Heuristic check of the assumptions behind the cluster-excess prediction.

    ``intra_inter_ratio`` is max intra-cluster edge / min inter-cluster edge
    (0 without intra edges, inf without inter edges). ``nearest_outside``
    lists modes of non-singleton clusters whose nearest neighbour by edge
    weight lies in another cluster.
    """

    intra_inter_ratio: float
    nearest_outside: tuple[int, ...]

    @property
    def flags(self) -> tuple[str, ...]:
        return tuple(f"nn-outside:{k + 1}" for k in self.nearest_outside)

    @property
    def ok(self) -> bool:
        return not self.nearest_outside


def excess_consistency_check(partition: Partition, graph: ModeGraph) -> ConsistencyReport:
    D = np.asarray(graph.edges, dtype=float)
    r = D.shape[0]
    if partition.r != r:
        raise PartitionError(f"partition covers {partition.r} modes, graph has {r}")
    label = partition.cluster_of()
    same = label[:, None] == label[None, :]
    off = ~np.eye(r, dtype=bool)
    intra = D[same & off]
    inter = D[~same]
    if intra.size == 0:
        ratio = 0.0
    elif inter.size == 0:
        ratio = float("inf")
    else:
        ratio = float(intra.max() / inter.min()) if inter.min() > 0 else float("inf")
    outside = []
    for k in range(r):
        if len(partition.clusters[label[k]]) < 2:
            continue
        others = np.where(off[k], D[k], np.inf)
        nearest = int(np.argmin(others))
        if label[nearest] != label[k]:
            outside.append(k)
    return ConsistencyReport(ratio, tuple(outside))
