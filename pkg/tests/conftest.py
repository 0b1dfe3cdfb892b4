import numpy as np
import pytest

from skfgraph.slds_core import ModeParams, SldsModel

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion reported as PASS/FAIL")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    number, title = marker.args
    if report.when == "setup" and report.passed:
        return
    if _CRITERIA.get(number, (title, "PASS"))[1] == "PASS":
        _CRITERIA[number] = (title, "PASS" if report.passed else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status = _CRITERIA[number]
        terminalreporter.write_line(f"{status} criterion {number}: {title}")


def scalar_model(A, Q, R=0.04, H=1.0, priors=None, transitions=None, x0=1.0, P0=0.04) -> SldsModel:
    """Scalar SLDS with one mode per entry of ``A``/``Q``."""
    A = np.atleast_1d(A)
    Q = np.broadcast_to(np.atleast_1d(Q), A.shape)
    r = len(A)
    priors = np.full(r, 1.0 / r) if priors is None else priors
    transitions = np.full((r, r), 1.0 / r) if transitions is None else transitions
    modes = tuple(ModeParams([[a]], [[q]]) for a, q in zip(A, Q))
    return SldsModel(modes, [[H]], [[R]], priors, transitions, [x0], [[P0]])


def random_stable_model(rng, r=3, z=2, m=2) -> SldsModel:
    """Random model with spectral radius < 1 and well-conditioned covariances."""
    modes = []
    for _ in range(r):
        A = rng.normal(size=(z, z))
        A *= rng.uniform(0.3, 0.95) / max(abs(np.linalg.eigvals(A)))
        L = rng.normal(size=(z, z)) * 0.3
        modes.append(ModeParams(A, L @ L.T + 0.05 * np.eye(z)))
    H = rng.normal(size=(m, z))
    L = rng.normal(size=(m, m)) * 0.3
    priors = rng.dirichlet(np.ones(r))
    transitions = rng.dirichlet(np.ones(r), size=r)
    return SldsModel(tuple(modes), H, L @ L.T + 0.1 * np.eye(m), priors, transitions, rng.normal(size=z), 0.5 * np.eye(z))
