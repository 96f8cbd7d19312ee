import numpy as np
import pytest

from comconsensus import benchmark
from comconsensus.graph import spectrum
from comconsensus.models import SynthesisConfig
from comconsensus.synthesis import (
    design_h2_absolute,
    design_h2_relative,
    design_hinf_absolute,
    design_hinf_relative,
)


@pytest.fixture(scope="session")
def model():
    return benchmark.six_agent_model()


@pytest.fixture(scope="session")
def graph():
    return benchmark.six_agent_graph()


@pytest.fixture(scope="session")
def spec(graph):
    return spectrum(graph)


@pytest.fixture(scope="session")
def designed(model, graph):
    """Designed protocols for both feedback cases: ``{case: (h2, hinf)}``."""
    out = {}
    for case, d2, dinf in (("relative", design_h2_relative, design_hinf_relative),
                           ("absolute", design_h2_absolute, design_hinf_absolute)):
        cfg = SynthesisConfig(gamma2=2.0, feedback_case=case)
        h2 = d2(model, graph, cfg)
        out[case] = (h2, dinf(model, graph, h2, cfg))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
