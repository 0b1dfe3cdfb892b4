"""SLDS domain types, validation, forward simulation and the diffusion test model.

Mode indices are 0-based everywhere in the Python API. Text surfaces
(partition strings, CSV files) use 1-based labels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import ModelError, PreconditionError

PROB_TOL = 1e-12
STREAM_NAMES = ("initial", "process", "measurement", "modes", "representatives", "detection")


def symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def _is_psd(M: np.ndarray, rel_tol: float = 1e-10) -> bool:
    if M.size == 0:
        return True
    eig = np.linalg.eigvalsh(symmetrize(M))
    scale = max(float(np.abs(np.trace(M))), 1.0)
    return bool(eig.min() >= -rel_tol * scale)


def psd_factor(M: np.ndarray, what: str = "covariance") -> np.ndarray:
    """Return F with F @ F.T == M for a symmetric PSD matrix.

    Uses an eigendecomposition so singular (e.g. all-zero) covariances are
    accepted. Raises ModelError when M has a materially negative eigenvalue.
    """
    M = symmetrize(np.asarray(M, dtype=float))
    eig, vec = np.linalg.eigh(M)
    scale = max(float(np.abs(np.trace(M))), 1.0)
    if eig.size and eig.min() < -1e-10 * scale:
        raise ModelError(f"{what} is not positive semi-definite (min eigenvalue {eig.min():.3g})")
    return vec * np.sqrt(np.clip(eig, 0.0, None))


@dataclass(frozen=True)
class ModeParams:
    """One switching regime: evolution matrix ``A`` and process-noise covariance ``Q``."""

    A: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "A", np.atleast_2d(np.asarray(self.A, dtype=float)))
        object.__setattr__(self, "Q", np.atleast_2d(np.asarray(self.Q, dtype=float)))

    @property
    def z(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class SldsModel:
    """A switching linear dynamic system with constant ``H`` and ``R``.

    Attributes:
        modes: The r switching regimes.
        H: (m, z) measurement operator.
        R: (m, m) measurement-noise covariance.
        priors: (r,) prior mode probabilities.
        transitions: (r, r) row-stochastic matrix, ``transitions[i, j] = P(S_n=j | S_{n-1}=i)``.
        x0_mean: (z,) initial state mean.
        P0: (z, z) initial state covariance.
    """

    modes: tuple[ModeParams, ...]
    H: np.ndarray
    R: np.ndarray
    priors: np.ndarray
    transitions: np.ndarray
    x0_mean: np.ndarray
    P0: np.ndarray

    def __post_init__(self):
        modes = tuple(m if isinstance(m, ModeParams) else ModeParams(*m) for m in self.modes)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "H", np.atleast_2d(np.asarray(self.H, dtype=float)))
        object.__setattr__(self, "R", np.atleast_2d(np.asarray(self.R, dtype=float)))
        object.__setattr__(self, "priors", np.atleast_1d(np.asarray(self.priors, dtype=float)))
        object.__setattr__(self, "transitions", np.atleast_2d(np.asarray(self.transitions, dtype=float)))
        object.__setattr__(self, "x0_mean", np.atleast_1d(np.asarray(self.x0_mean, dtype=float)))
        object.__setattr__(self, "P0", np.atleast_2d(np.asarray(self.P0, dtype=float)))

    @property
    def r(self) -> int:
        return len(self.modes)

    @property
    def z(self) -> int:
        return self.x0_mean.shape[0]

    @property
    def m(self) -> int:
        return self.H.shape[0]

    def with_modes(self, modes: Sequence[ModeParams], priors, transitions) -> "SldsModel":
        return SldsModel(tuple(modes), self.H, self.R, priors, transitions, self.x0_mean, self.P0)


@dataclass(frozen=True)
class SimulationRun:
    """One simulated trajectory: ground-truth states, measurements and realized modes."""

    states: np.ndarray  # (T, z)
    measurements: np.ndarray  # (T, m)
    modes: np.ndarray  # (T,) int

    @property
    def T(self) -> int:
        return self.states.shape[0]


@dataclass(frozen=True)
class SimulationBatch:
    """N independent simulated runs stacked along the first axis."""

    states: np.ndarray  # (N, T, z)
    measurements: np.ndarray  # (N, T, m)
    modes: np.ndarray  # (N, T) int

    def __len__(self) -> int:
        return self.states.shape[0]

    def __getitem__(self, k: int) -> SimulationRun:
        return SimulationRun(self.states[k], self.measurements[k], self.modes[k])


@dataclass(frozen=True)
class DetectionModel:
    """How the mode used by the filter relates to the true mode.

    ``kind`` is one of ``"perfect"``, ``"oracle-cluster"`` or ``"confusion"``.
    For ``"confusion"``, ``confusion[i, j] = P(detect j | true i)``. For
    ``"oracle-cluster"``, ``mapping[i]`` is the mode the filter uses whenever
    ``i`` is true (the representative of ``i``'s cluster); Monte Carlo callers
    that resample representatives per run may omit it.
    """

    kind: str = "perfect"
    confusion: np.ndarray | None = None
    mapping: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("perfect", "oracle-cluster", "confusion"):
            raise PreconditionError(f"unknown detection kind {self.kind!r}")
        if self.kind == "confusion":
            if self.confusion is None:
                raise PreconditionError("confusion detection needs a confusion matrix")
            C = np.atleast_2d(np.asarray(self.confusion, dtype=float))
            if C.shape[0] != C.shape[1] or np.any(C < 0) or np.any(np.abs(C.sum(axis=1) - 1) > PROB_TOL):
                raise PreconditionError("confusion matrix must be square and row-stochastic")
            object.__setattr__(self, "confusion", C)
        if self.kind == "oracle-cluster" and self.mapping is not None:
            object.__setattr__(self, "mapping", tuple(int(k) for k in self.mapping))

    def matrix(self, r: int) -> np.ndarray:
        """Effective r x r confusion matrix."""
        if self.kind == "perfect":
            return np.eye(r)
        if self.kind == "oracle-cluster":
            if self.mapping is None:
                raise PreconditionError("oracle-cluster detection needs a mode mapping here")
            if len(self.mapping) != r or not all(0 <= k < r for k in self.mapping):
                raise PreconditionError(f"mode mapping does not cover {r} modes")
            C = np.zeros((r, r))
            C[np.arange(r), list(self.mapping)] = 1.0
            return C
        if self.confusion.shape != (r, r):
            raise PreconditionError(f"confusion matrix shape {self.confusion.shape} != ({r}, {r})")
        return self.confusion


def validate_model(model: SldsModel) -> list[str]:
    """Return every violated invariant of ``model``; an empty list means valid."""
    report: list[str] = []
    if model.r < 1:
        return ["modes: at least one mode is required"]
    z = model.z
    for k, mode in enumerate(model.modes):
        if mode.A.shape != (z, z):
            report.append(f"modes[{k}].A: shape {mode.A.shape} != ({z}, {z})")
        if mode.Q.shape != (z, z):
            report.append(f"modes[{k}].Q: shape {mode.Q.shape} != ({z}, {z})")
            continue
        if not np.all(np.isfinite(mode.A)) or not np.all(np.isfinite(mode.Q)):
            report.append(f"modes[{k}]: non-finite entries")
            continue
        if not np.allclose(mode.Q, mode.Q.T, rtol=1e-10, atol=1e-12):
            report.append(f"modes[{k}].Q: Q not symmetric")
        elif not _is_psd(mode.Q):
            report.append(f"modes[{k}].Q: Q not PSD")
    m = model.H.shape[0]
    if model.H.shape[1] != z:
        report.append(f"H: shape {model.H.shape} does not map z={z} states")
    if model.R.shape != (m, m):
        report.append(f"R: shape {model.R.shape} != ({m}, {m})")
    elif not np.allclose(model.R, model.R.T, rtol=1e-10, atol=1e-12):
        report.append("R: R not symmetric")
    elif not _is_psd(model.R):
        report.append("R: R not PSD")
    if model.P0.shape != (z, z):
        report.append(f"P0: shape {model.P0.shape} != ({z}, {z})")
    elif not np.allclose(model.P0, model.P0.T, rtol=1e-10, atol=1e-12):
        report.append("P0: P0 not symmetric")
    elif not _is_psd(model.P0):
        report.append("P0: P0 not PSD")
    r = model.r
    if model.priors.shape != (r,):
        report.append(f"priors: length {model.priors.size} != r={r}")
    else:
        if np.any(model.priors < 0):
            report.append("priors: negative probability")
        if abs(model.priors.sum() - 1.0) > PROB_TOL:
            report.append(f"priors: priors sum ≠ 1 (sum = {model.priors.sum():.6g})")
    if model.transitions.shape != (r, r):
        report.append(f"transitions: shape {model.transitions.shape} != ({r}, {r})")
    else:
        if np.any(model.transitions < 0):
            report.append("transitions: negative probability")
        sums = model.transitions.sum(axis=1)
        for k in np.flatnonzero(np.abs(sums - 1.0) > PROB_TOL):
            report.append(f"transitions[{k}]: row sum ≠ 1 (sum = {sums[k]:.6g})")
    return report


def require_valid(model: SldsModel) -> None:
    report = validate_model(model)
    if report:
        raise ModelError("invalid SLDS model: " + "; ".join(report))


def substreams(seed) -> dict[str, np.random.Generator]:
    """Split one seed into independent named generators (see ``STREAM_NAMES``)."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return {name: np.random.default_rng(child) for name, child in zip(STREAM_NAMES, ss.spawn(len(STREAM_NAMES)))}


def sample_modes(model: SldsModel, T: int, N: int, rng: np.random.Generator) -> np.ndarray:
    """Draw N mode sequences of length T from the Markov chain (priors, transitions)."""
    u = rng.random((N, T))
    modes = np.empty((N, T), dtype=int)
    cum_prior = np.cumsum(model.priors)
    cum_trans = np.cumsum(model.transitions, axis=1)
    modes[:, 0] = np.minimum(np.searchsorted(cum_prior, u[:, 0], side="right"), model.r - 1)
    for n in range(1, T):
        rows = cum_trans[modes[:, n - 1]]
        modes[:, n] = np.minimum((u[:, n, None] >= rows).sum(axis=1), model.r - 1)
    return modes


def simulate_batch(model: SldsModel, T: int, N: int, seed, modes: np.ndarray | None = None) -> SimulationBatch:
    """Simulate N independent runs of length T, vectorized over runs.

    ``modes`` optionally fixes the (N, T) mode sequences instead of sampling them.
    """
    if T < 1 or N < 1:
        raise PreconditionError("T and N must be >= 1")
    require_valid(model)
    streams = substreams(seed)
    z, m = model.z, model.m
    if modes is None:
        modes = sample_modes(model, T, N, streams["modes"])
    else:
        modes = np.asarray(modes, dtype=int).reshape(N, T)
        if modes.min() < 0 or modes.max() >= model.r:
            raise PreconditionError("mode index out of range")
    x = model.x0_mean + streams["initial"].standard_normal((N, z)) @ psd_factor(model.P0, "P0").T
    q_factors = [psd_factor(mode.Q, f"modes[{k}].Q") for k, mode in enumerate(model.modes)]
    r_factor = psd_factor(model.R, "R")
    states = np.empty((N, T, z))
    measurements = np.empty((N, T, m))
    for n in range(T):
        nu = streams["process"].standard_normal((N, z))
        omega = streams["measurement"].standard_normal((N, m))
        x_new = np.empty_like(x)
        for k, mode in enumerate(model.modes):
            idx = modes[:, n] == k
            if idx.any():
                x_new[idx] = x[idx] @ mode.A.T + nu[idx] @ q_factors[k].T
        x = x_new
        states[:, n] = x
        measurements[:, n] = x @ model.H.T + omega @ r_factor.T
    return SimulationBatch(states, measurements, modes)


def simulate(model: SldsModel, T: int, seed) -> SimulationRun:
    """Simulate one run of the SLDS; identical seeds give bit-identical output."""
    return simulate_batch(model, T, 1, seed)[0]


def trajectory_prior(model: SldsModel, trajectory: Sequence[int]) -> float:
    """Probability of a mode trajectory under the model's Markov chain."""
    if len(trajectory) == 0:
        raise PreconditionError("trajectory must be non-empty")
    if any(not 0 <= i < model.r for i in trajectory):
        raise PreconditionError("mode index out of range")
    p = float(model.priors[trajectory[0]])
    for a, b in zip(trajectory[:-1], trajectory[1:]):
        p *= float(model.transitions[a, b])
    return p


def neumann_laplacian(z: int) -> np.ndarray:
    """Second-difference matrix with zero-flux boundary rows (rows sum to 0)."""
    L = -2.0 * np.eye(z) + np.eye(z, k=1) + np.eye(z, k=-1)
    L[0, 0] = L[-1, -1] = -1.0
    return L


def step_amplitude_for_snr(z: int, r_var: float, snr_db: float) -> float:
    """Step height ``a`` such that a half-domain step has the requested mean SNR."""
    return math.sqrt(z * r_var * 10.0 ** (snr_db / 10.0) / (z // 2))


def build_diffusion_slds(
    z: int = 60,
    diffusivities: Sequence[float] = (0.01, 1.0, 0.19, 0.71),
    alpha: float = 0.25,
    q_var: float = 0.0004,
    r_var: float = 0.04,
    step_amplitude: float | None = None,
    snr_db: float = 6.6,
    P0: np.ndarray | None = None,
) -> SldsModel:
    """Explicit finite-difference 1-D heat equation with switching diffusivity.

    Each mode is ``A = I + alpha * eta * L`` with the Neumann Laplacian ``L``,
    ``Q = q_var * I``. The initial mean is a step whose first ``z // 2``
    entries equal ``step_amplitude`` (calibrated to ``snr_db`` when omitted).
    """
    etas = [float(e) for e in diffusivities]
    if z < 2:
        raise PreconditionError("grid size z must be >= 2")
    if not etas or min(etas) < 0 or alpha <= 0 or alpha * max(etas) > 0.5:
        raise PreconditionError(
            f"explicit scheme unstable or ill-posed: alpha={alpha}, max eta={max(etas, default=0)}"
        )
    if q_var <= 0 or r_var <= 0:
        raise PreconditionError("q_var and r_var must be positive")
    if step_amplitude is None:
        step_amplitude = step_amplitude_for_snr(z, r_var, snr_db)
    L = neumann_laplacian(z)
    eye = np.eye(z)
    modes = tuple(ModeParams(eye + alpha * eta * L, q_var * eye) for eta in etas)
    r = len(etas)
    x0 = np.zeros(z)
    x0[: z // 2] = step_amplitude
    return SldsModel(
        modes=modes,
        H=eye.copy(),
        R=r_var * eye,
        priors=np.full(r, 1.0 / r),
        transitions=np.full((r, r), 1.0 / r),
        x0_mean=x0,
        P0=q_var * eye if P0 is None else P0,
    )


def first_step_snr_db(model: SldsModel) -> float:
    """Mean SNR of the first measurement: ``|x0_mean|^2 / trace(R)`` in dB."""
    return 10.0 * math.log10(float(model.x0_mean @ model.x0_mean) / float(np.trace(model.R)))


def model_from_dict(doc: Mapping[str, Any]) -> SldsModel:
    """Build a model from its JSON form (explicit matrices or ``diffusion`` shorthand).

    Raises KeyError/TypeError/ValueError on ill-formed documents.
    """
    if "diffusion" in doc:
        d = dict(doc["diffusion"])
        return build_diffusion_slds(
            z=int(d.get("z", 60)),
            diffusivities=d.get("etas", (0.01, 1.0, 0.19, 0.71)),
            alpha=float(d.get("alpha", 0.25)),
            q_var=float(d.get("q_var", 0.0004)),
            r_var=float(d.get("r_var", 0.04)),
            step_amplitude=d.get("step_amplitude"),
            snr_db=float(d.get("snr_db", 6.6)),
        )
    modes = tuple(ModeParams(np.array(md["A"], dtype=float), np.array(md["Q"], dtype=float)) for md in doc["modes"])
    r = len(modes)
    z = modes[0].z if modes else int(doc["z"])
    return SldsModel(
        modes=modes,
        H=np.array(doc.get("H", np.eye(z)), dtype=float),
        R=np.array(doc["R"], dtype=float),
        priors=np.array(doc.get("priors", np.full(r, 1.0 / max(r, 1))), dtype=float),
        transitions=np.array(doc.get("transitions", np.full((r, r), 1.0 / max(r, 1))), dtype=float),
        x0_mean=np.array(doc.get("x0_mean", np.zeros(z)), dtype=float),
        P0=np.array(doc.get("P0", np.zeros((z, z))), dtype=float),
    )


def model_to_dict(model: SldsModel) -> dict[str, Any]:
    return {
        "z": model.z,
        "m": model.m,
        "modes": [{"A": mode.A.tolist(), "Q": mode.Q.tolist()} for mode in model.modes],
        "H": model.H.tolist(),
        "R": model.R.tolist(),
        "priors": model.priors.tolist(),
        "transitions": model.transitions.tolist(),
        "x0_mean": model.x0_mean.tolist(),
        "P0": model.P0.tolist(),
    }
