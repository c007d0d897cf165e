import numpy as np
import pytest

from diffscm.models import DcmHyperparams, fit_dcm
from diffscm.rng import substream
from diffscm.scm import fixed_scm


@pytest.fixture(scope="session")
def chain_nlin():
    return fixed_scm("chain", "NLIN")


@pytest.fixture(scope="session")
def trained_chain(chain_nlin):
    """Chain NLIN DCM at the desk defaults (n=2000, 200 epochs), plus held-out data."""
    train = chain_nlin.sample_observational(2000, substream(0, "train")).values
    model = fit_dcm(train, chain_nlin.graph, DcmHyperparams(epochs=200), substream(0, "fit"))
    held_out = chain_nlin.sample_observational(1000, substream(0, "held-out"))
    return model, train, held_out


@pytest.fixture(scope="session")
def tiny_dcm(chain_nlin):
    """A quickly trained small DCM for plumbing tests."""
    train = chain_nlin.sample_observational(300, np.random.default_rng(0)).values
    hp = DcmHyperparams(T=20, hidden=(16, 16), epochs=3)
    return fit_dcm(train, chain_nlin.graph, hp, np.random.default_rng(1)), train


def pytest_terminal_summary(terminalreporter):
    import sys

    results = getattr(sys.modules.get("test_acceptance"), "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(results):
        terminalreporter.write_line(results[num])
