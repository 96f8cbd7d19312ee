"""The six-agent benchmark: second-order agents on a six-node graph.

Besides the model and the graph this module carries reference gains and
reported values for the benchmark, used as verification inputs.
"""

import numpy as np

from .graph import Graph
from .models import AgentModel, H2Protocol, HinfProtocol

LAMBDA2 = 1.3820
LAMBDA_N = 5.3028
GAMMA2 = 2.0
GAMMA_INF_MIN = 1.5808

REFERENCE_F = np.array([[-0.1627, 0.7430]])
REFERENCE_G = np.array([[0.5685], [0.7966]])
REFERENCE_AC = np.array([[-0.5031, 0.0], [0.0, -0.5031]])
REFERENCE_BC = np.zeros((2, 1))
REFERENCE_CC = np.zeros((1, 2))
REFERENCE_DC = np.array([[-0.4045]])

# (agents, amplitude, angular frequency in rad/s)
DISTURBANCE_PATTERN = (((1, 3), 3.0, 110.0), ((2, 4), 3.0, 30.0), ((5, 6), 3.0, 60.0))


def six_agent_model() -> AgentModel:
    return AgentModel(
        A=[[-2.0, 2.0], [-1.0, 1.0]],
        B0=[[0.0, 0.0], [0.5, 0.0]],
        B1=[[1.0], [0.6]],
        B2=[[1.0], [-2.0]],
        C1=[[1.0, 0.0]],
        C2=[[1.0, 0.8]],
        D0=[[0.0, 1.0]],
        D1=[[0.1]],
    )


def six_agent_graph() -> Graph:
    return Graph.from_edges(6, [(1, 2), (1, 3), (1, 4), (1, 5), (2, 3), (2, 6), (4, 5), (5, 6)])


def reference_h2(feedback_case="relative") -> H2Protocol:
    return H2Protocol(F=REFERENCE_F.copy(), G=REFERENCE_G.copy(), feedback_case=feedback_case,
                      gamma2=GAMMA2)


def reference_hinf(feedback_case="relative") -> HinfProtocol:
    return HinfProtocol(REFERENCE_AC.copy(), REFERENCE_BC.copy(), REFERENCE_CC.copy(),
                        REFERENCE_DC.copy(), gamma_inf_achieved=GAMMA_INF_MIN,
                        feedback_case=feedback_case)
