import numpy as np
import pytest

from panelvar.dataset import DEFAULT_NPIS
from panelvar.model import ModelSpec, PanelVarModel
from panelvar.synth import default_truth, simulate_panel


def small_panel(C=2, T=10, seed=0, K=len(DEFAULT_NPIS)):
    npis = list(DEFAULT_NPIS[:K])
    truth = default_truth(C, npis, seed=seed)
    return simulate_panel(truth, C=C, T=T, seed=seed), truth


@pytest.fixture(scope="session")
def tiny():
    data, truth = small_panel()
    spec = ModelSpec(npi_names=list(data.npi_names))
    return data, spec, PanelVarModel(data, spec)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_draws(flat, names, chains=1):
    """Wrap a (draws, dim) array as PosteriorDraws without sampling."""
    from panelvar.sampler import PosteriorDraws

    flat = np.asarray(flat, dtype=float)
    n = flat.shape[0] // chains
    return PosteriorDraws(draws=flat.reshape(chains, n, -1), names=list(names),
                          divergences=np.zeros(chains, int), treedepth=np.zeros((chains, n), int),
                          step_sizes=np.ones(chains), inv_metric=np.ones((chains, flat.shape[1])),
                          accept_stat=np.ones((chains, n)), n_leapfrog=np.ones((chains, n), int))


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_report():
    """Record one PASS/FAIL line; lines are echoed now and repeated in the summary."""

    def report(number, title, ok, detail=""):
        status = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        line = f"criterion {number} {status}: {title}" + (
            f" ({detail})" if detail else "")
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
