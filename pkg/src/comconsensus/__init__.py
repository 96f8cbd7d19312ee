"""Two-step H2 / H-infinity consensus protocol design for multi-agent networks."""

from .graph import Graph, GraphSpectrum, laplacian, spectrum
from .models import AgentModel, H2Protocol, HinfProtocol, SynthesisConfig
from .network import assemble_step1, assemble_step2, certify_h2, certify_hinf, decompose
from .synthesis import design_h2_absolute, design_h2_relative, design_hinf_absolute, design_hinf_relative

__all__ = [
    "Graph",
    "GraphSpectrum",
    "laplacian",
    "spectrum",
    "AgentModel",
    "H2Protocol",
    "HinfProtocol",
    "SynthesisConfig",
    "assemble_step1",
    "assemble_step2",
    "certify_h2",
    "certify_hinf",
    "decompose",
    "design_h2_relative",
    "design_h2_absolute",
    "design_hinf_relative",
    "design_hinf_absolute",
]
