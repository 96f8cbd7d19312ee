"""Closed-loop network realizations, modal decomposition and norm certificates.

Stacked vectors are block-major: a state block ``x`` of per-agent size ``n``
occupies ``N * n`` consecutive entries ordered agent by agent.  Every network
matrix is a sum of terms ``I (x) X`` and ``L (x) Y``, so the change of
coordinates ``U (x) I`` with ``U^T L U = diag(lambda)`` splits it into one
subsystem per Laplacian eigenvalue.  The ``lambda_1 = 0`` mode carries the
network average and is excluded from all consensus norms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, IllFormed, UnstableSubsystem
from .graph import Graph, GraphSpectrum, consensus_projector, laplacian
from .models import AgentModel, H2Protocol, HinfProtocol
from .numlin import LtiSystem, h2_norm, hinf_norm, is_hurwitz

__all__ = [
    "ClosedLoopNetwork",
    "SubsystemFamily",
    "assemble_step1",
    "assemble_step2",
    "assemble_combined",
    "decompose",
    "project",
    "certify_h2",
    "certify_hinf",
    "step1_subsystem",
    "step2_data",
    "step2_subsystem",
]


@dataclass
class ClosedLoopNetwork:
    """Stacked realization of a closed-loop multi-agent network.

    ``block_map`` lists ``(name, per_agent_size)`` for the state, input and
    output blocks, in stacking order.
    """

    realization: LtiSystem
    stage: str
    feedback_case: str
    block_map: dict
    n_agents: int
    model: AgentModel
    h2: H2Protocol
    hinf: HinfProtocol | None = None

    def state_slice(self, name, agent=None):
        return _slice(self.block_map["states"], self.n_agents, name, agent)

    def input_slice(self, name, agent=None):
        return _slice(self.block_map["inputs"], self.n_agents, name, agent)

    def output_slice(self, name, agent=None):
        return _slice(self.block_map["outputs"], self.n_agents, name, agent)

    def to_dict(self):
        r = self.realization
        return {
            "stage": self.stage,
            "feedback_case": self.feedback_case,
            "n_agents": self.n_agents,
            "block_map": {k: [list(b) for b in v] for k, v in self.block_map.items()},
            "A": r.A.tolist(),
            "B": r.B.tolist(),
            "C": r.C.tolist(),
            "D": r.D.tolist(),
        }

    def dump_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")


def _slice(blocks, N, name, agent):
    start = 0
    for b, size in blocks:
        if b == name:
            if agent is None:
                return slice(start, start + N * size)
            if not 1 <= agent <= N:
                raise IndexError(f"agent {agent} outside [1, {N}]")
            s = start + (agent - 1) * size
            return slice(s, s + size)
        start += N * size
    raise KeyError(name)


@dataclass
class SubsystemFamily:
    """One subsystem per nonzero Laplacian eigenvalue, ordered as ``lambdas``."""

    systems: list
    lambdas: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self):
        return len(self.systems)


def _check_dims(m: AgentModel, h2: H2Protocol, hi: HinfProtocol | None = None):
    if h2.F.shape != (m.p, m.n):
        raise DimensionMismatch(f"F is {h2.F.shape}, expected {(m.p, m.n)}")
    if h2.G.shape != (m.n, m.m1):
        raise DimensionMismatch(f"G is {h2.G.shape}, expected {(m.n, m.m1)}")
    if hi is not None:
        if hi.Bc.shape[1] != m.m1 or hi.Cc.shape[0] != m.p:
            raise DimensionMismatch(
                f"inner controller maps {hi.Bc.shape[1]} -> {hi.Cc.shape[0]}, expected {m.m1} -> {m.p}"
            )


def _kron_blocks(g: Graph):
    N = g.n_nodes
    return np.eye(N), laplacian(g), consensus_projector(N)


def assemble_step1(m: AgentModel, g: Graph, h2: H2Protocol) -> ClosedLoopNetwork:
    """Outer loop alone, driven by the noise ``w0`` with output ``z``.

    Relative case: state ``(x, v)`` with the distributed observer.  Absolute
    case: state ``(x, v_breve)`` with local observers and Laplacian-coupled
    feedback.
    """
    _check_dims(m, h2)
    I, L, M = _kron_blocks(g)
    A, B0, B2, C1, C2, D0 = m.A, m.B0, m.B2, m.C1, m.C2, m.D0
    F, G = h2.F, h2.G
    BF = B2 @ F
    if h2.feedback_case == "relative":
        Acl = np.block([
            [np.kron(I, A), np.kron(I, BF)],
            [np.kron(L, G @ C2), np.kron(I, A - G @ C2) + np.kron(L, BF)],
        ])
        Bcl = np.vstack([np.kron(I, B0), np.kron(L, G @ D0)])
        observer = "v"
    else:
        Acl = np.block([
            [np.kron(I, A), np.kron(L, BF)],
            [np.kron(I, G @ C2), np.kron(I, A - G @ C2) + np.kron(L, BF)],
        ])
        Bcl = np.vstack([np.kron(I, B0), np.kron(I, G @ D0)])
        observer = "vb"
    Ccl = np.hstack([np.kron(M, C1), np.zeros((g.n_nodes * m.m2, g.n_nodes * m.n))])
    block_map = {
        "states": [("x", m.n), (observer, m.n)],
        "inputs": [("w0", m.q2)],
        "outputs": [("z", m.m2)],
    }
    return ClosedLoopNetwork(LtiSystem(Acl, Bcl, Ccl), "step1", h2.feedback_case, block_map,
                             g.n_nodes, m, h2)


def _step2_matrices(m: AgentModel, g: Graph, h2: H2Protocol, hi: HinfProtocol, with_noise: bool):
    """Closed loop in ``(x, e, n)`` coordinates, inputs ``w`` (and ``w0``)."""
    I, L, M = _kron_blocks(g)
    N = g.n_nodes
    A, B2, C1, C2 = m.A, m.B2, m.C1, m.C2
    F, G = h2.F, h2.G
    BF = B2 @ F
    nc = hi.order
    Bw = m.B1 if not with_noise else np.hstack([m.B1, m.B0])
    Dw = m.D1 if not with_noise else np.hstack([m.D1, m.D0])
    n_in = Bw.shape[1]
    Zn = np.zeros((N * m.n, N * m.n))
    if h2.feedback_case == "relative":
        Abar = np.block([[np.kron(I, A) + np.kron(L, BF), np.kron(I, BF)],
                         [Zn, np.kron(I, A - G @ C2)]])
        # e = v - (L (x) I) x; the observer error is driven by Laplacian-weighted input noise
        Bc1 = np.vstack([np.kron(I, Bw), np.kron(L, G @ Dw - Bw)])
        Cc2 = np.hstack([np.zeros((N * m.m1, N * m.n)), np.kron(I, C2)])
        Dc1 = np.kron(L, Dw)
    else:
        Abar = np.block([[np.kron(I, A) + np.kron(L, BF), np.kron(L, BF)],
                         [Zn, np.kron(I, A - G @ C2)]])
        # e = v_breve - x; local observers see the local input noise only
        Bc1 = np.vstack([np.kron(I, Bw), np.kron(I, G @ Dw - Bw)])
        # controller input sum_j a_ij (f_i - f_j) with f_i = C2 e_i - D w_i
        Cc2 = np.hstack([np.zeros((N * m.m1, N * m.n)), np.kron(L, C2)])
        Dc1 = np.kron(L, Dw)
    Bc2 = np.vstack([np.kron(I, B2), np.zeros((N * m.n, N * m.p))])
    Ac_, Bc_, Cc_, Dc_ = (np.kron(I, X) for X in (hi.Ac, hi.Bc, hi.Cc, hi.Dc))
    Acl = np.block([[Abar + Bc2 @ Dc_ @ Cc2, Bc2 @ Cc_], [Bc_ @ Cc2, Ac_]])
    Bcl = np.vstack([Bc1 - Bc2 @ Dc_ @ Dc1, -Bc_ @ Dc1])
    Ccl = np.hstack([np.kron(M, C1), np.zeros((N * m.m2, N * (m.n + nc)))])
    return Acl, Bcl, Ccl, n_in


def assemble_step2(m: AgentModel, g: Graph, h2: H2Protocol, hi: HinfProtocol) -> ClosedLoopNetwork:
    """Outer and inner loop, driven by the disturbance ``w`` with output ``z``.

    State ``(x, e, n)`` where ``e`` is the observer error: ``e_i = v_i -
    sum_j a_ij (x_i - x_j)`` (relative) or ``e_i = v_breve_i - x_i``
    (absolute).
    """
    _check_dims(m, h2, hi)
    Acl, Bcl, Ccl, _ = _step2_matrices(m, g, h2, hi, with_noise=False)
    block_map = {
        "states": [("x", m.n), ("e", m.n), ("n", hi.order)],
        "inputs": [("w", m.q1)],
        "outputs": [("z", m.m2)],
    }
    return ClosedLoopNetwork(LtiSystem(Acl, Bcl, Ccl), "step2", h2.feedback_case, block_map,
                             g.n_nodes, m, h2, hi)


def assemble_combined(m: AgentModel, g: Graph, h2: H2Protocol, hi: HinfProtocol) -> ClosedLoopNetwork:
    """Complete loop driven by both ``w`` and ``w0`` (input order ``w`` then ``w0``)."""
    _check_dims(m, h2, hi)
    Acl, Bcl, Ccl, _ = _step2_matrices(m, g, h2, hi, with_noise=True)
    N = g.n_nodes
    # inputs come out interleaved per agent as (w_i, w0_i); regroup block-major
    perm = np.concatenate([
        np.concatenate([np.arange(i * (m.q1 + m.q2), i * (m.q1 + m.q2) + m.q1) for i in range(N)]),
        np.concatenate([np.arange(i * (m.q1 + m.q2) + m.q1, (i + 1) * (m.q1 + m.q2)) for i in range(N)]),
    ]).astype(int)
    Bcl = Bcl[:, perm]
    block_map = {
        "states": [("x", m.n), ("e", m.n), ("n", hi.order)],
        "inputs": [("w", m.q1), ("w0", m.q2)],
        "outputs": [("z", m.m2)],
    }
    return ClosedLoopNetwork(LtiSystem(Acl, Bcl, Ccl), "combined", h2.feedback_case, block_map,
                             g.n_nodes, m, h2, hi)


def step1_subsystem(m: AgentModel, h2: H2Protocol, lam: float) -> LtiSystem:
    """Modal outer-loop subsystem at eigenvalue ``lam`` (observer state scaled by ``1/lam``)."""
    A, B2, C2 = m.A, m.B2, m.C2
    F, G = h2.F, h2.G
    Acl = np.block([[A, lam * B2 @ F], [G @ C2, A - G @ C2 + lam * B2 @ F]])
    Bcl = np.vstack([m.B0, G @ m.D0])
    Ccl = np.hstack([m.C1, np.zeros((m.m2, m.n))])
    return LtiSystem(Acl, Bcl, Ccl)


def step2_data(m: AgentModel, h2: H2Protocol, lam: float, nc: int, Bw=None, Dw=None) -> dict:
    """Open-loop data of the modal inner-loop design problem at ``lam``.

    Keys ``A``, ``B1``, ``B2``, ``C1``, ``C2``, ``D1``.  The state is
    ``(x_hat, e_hat, n_hat)``; the controller ``K = [[Ac, Bc], [Cc, Dc]]``
    closes the loop as ``A + B2 K C2`` with disturbance input
    ``B1 + B2 K D1``.
    """
    n, p, m1 = m.n, m.p, m.m1
    Bw = m.B1 if Bw is None else Bw
    Dw = m.D1 if Dw is None else Dw
    q = Bw.shape[1]
    F, G = h2.F, h2.G
    Z = np.zeros
    return {
        "A": np.block([
            [m.A + lam * m.B2 @ F, m.B2 @ F, Z((n, nc))],
            [Z((n, n)), m.A - G @ m.C2, Z((n, nc))],
            [Z((nc, 2 * n + nc))],
        ]),
        "B2": np.block([[Z((n, nc)), m.B2], [Z((n, nc)), Z((n, p))], [np.eye(nc), Z((nc, p))]]),
        "C2": np.block([[Z((nc, 2 * n)), np.eye(nc)], [Z((m1, n)), m.C2, Z((m1, nc))]]),
        "C1": np.hstack([m.C1, Z((m.m2, n + nc))]),
        "B1": np.vstack([Bw, lam * (G @ Dw - Bw), Z((nc, q))]),
        "D1": np.vstack([Z((nc, q)), -lam * Dw]),
    }


def step2_subsystem(m: AgentModel, h2: H2Protocol, hi: HinfProtocol, lam: float,
                    with_noise: bool = False) -> LtiSystem:
    Bw = np.hstack([m.B1, m.B0]) if with_noise else None
    Dw = np.hstack([m.D1, m.D0]) if with_noise else None
    d = step2_data(m, h2, lam, hi.order, Bw, Dw)
    K = hi.K
    return LtiSystem(d["A"] + d["B2"] @ K @ d["C2"], d["B1"] + d["B2"] @ K @ d["D1"], d["C1"])


def decompose(net: ClosedLoopNetwork, spec: GraphSpectrum) -> SubsystemFamily:
    """The ``N - 1`` modal subsystems of ``net`` over the nonzero eigenvalues of ``spec``.

    Both feedback cases lead to the same modal form; in the absolute case
    the observer error is scaled by ``lambda_i`` to reach it.
    """
    if spec.n_nodes != net.n_agents:
        raise DimensionMismatch(f"spectrum has {spec.n_nodes} nodes, network has {net.n_agents}")
    lams = np.asarray(spec.nonzero_eigenvalues, dtype=float)
    if net.stage == "step1":
        systems = [step1_subsystem(net.model, net.h2, lam) for lam in lams]
    else:
        noise = net.stage == "combined"
        systems = [step2_subsystem(net.model, net.h2, net.hinf, lam, noise) for lam in lams]
    return SubsystemFamily(systems, lams)


def _modal_basis(blocks, N, U):
    """Orthogonal ``T = blockdiag(U (x) I_k)`` and the indices of non-average modes."""
    mats, keep, start = [], [], 0
    for _, k in blocks:
        mats.append(np.kron(U, np.eye(k)))
        keep.extend(range(start + k, start + N * k))
        start += N * k
    T = np.zeros((start, start))
    o = 0
    for M in mats:
        s = M.shape[0]
        T[o:o + s, o:o + s] = M
        o += s
    return T, np.array(keep, dtype=int)


def project(net: ClosedLoopNetwork, spec: GraphSpectrum) -> LtiSystem:
    """Network restricted to the consensus-error subspace.

    Applies ``U (x) I`` to every state, input and output block and discards
    the ``lambda_1`` coordinates.  This uses only the stacked realization, not
    the modal formulas behind :func:`decompose`.
    """
    N, U = net.n_agents, spec.diagonalizer
    Ts, ks = _modal_basis(net.block_map["states"], N, U)
    Ti, ki = _modal_basis(net.block_map["inputs"], N, U)
    To, ko = _modal_basis(net.block_map["outputs"], N, U)
    r = net.realization
    A = (Ts.T @ r.A @ Ts)[np.ix_(ks, ks)]
    B = (Ts.T @ r.B @ Ti)[np.ix_(ks, ki)]
    C = (To.T @ r.C @ Ts)[np.ix_(ko, ks)]
    D = (To.T @ r.D @ Ti)[np.ix_(ko, ki)]
    return LtiSystem(A, B, C, D)


def _require_stable(fam: SubsystemFamily):
    for lam, s in zip(fam.lambdas, fam.systems):
        if not is_hurwitz(s.A):
            ab = float(np.max(np.linalg.eigvals(s.A).real))
            raise UnstableSubsystem(
                f"subsystem at lambda = {lam:.6g} is not Hurwitz (spectral abscissa {ab:.3e})", lam=float(lam)
            )


def certify_h2(net: ClosedLoopNetwork, spec: GraphSpectrum) -> float:
    """``sqrt(sum_i ||T_i||_2^2)`` over the modal subsystems of a step-one network."""
    if net.stage != "step1":
        raise IllFormed(f"H2 certification needs a step-one network, got stage {net.stage!r}")
    fam = decompose(net, spec)
    _require_stable(fam)
    return float(np.sqrt(sum(h2_norm(s) ** 2 for s in fam.systems)))


def certify_hinf(net: ClosedLoopNetwork, spec: GraphSpectrum) -> float:
    """``max_i ||T_i||_inf`` over the modal subsystems of a step-two network."""
    if net.stage != "step2":
        raise IllFormed(f"H-infinity certification needs a step-two network, got stage {net.stage!r}")
    fam = decompose(net, spec)
    _require_stable(fam)
    if not fam.systems:
        return 0.0
    return float(max(hinf_norm(s) for s in fam.systems))
