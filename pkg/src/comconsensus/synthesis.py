"""Two-step protocol synthesis: H2 outer loop, then residual-driven H-infinity inner loop.

Step one picks the observer gain ``G`` from a filter Riccati equation and the
feedback gain ``F`` from an SDP in ``(Pbar, tau, W)``.  Step two fixes
``(F, G)`` and finds the inner controller ``K = [[Ac, Bc], [Cc, Dc]]`` from
a pair of LMIs at the extreme Laplacian eigenvalues, sharing a block-diagonal
Lyapunov matrix.  Every returned protocol is re-certified on the assembled
network.
"""

from __future__ import annotations

import logging

import numpy as np

from .errors import (
    IllFormed,
    Infeasible,
    InfeasibleBudget,
    NotStabilizable,
    NumericalFailure,
    RankDeficient,
    UnstableSubsystem,
)
from .graph import Graph, GraphSpectrum, spectrum
from .lmi import Affine, LmiProblem, solve_sdp
from .models import AgentModel, H2Protocol, HinfProtocol, SynthesisConfig
from .network import assemble_step1, assemble_step2, certify_h2, certify_hinf, step2_data
from .numlin import is_hurwitz, solve_filter_riccati

__all__ = [
    "design_h2_relative",
    "design_h2_absolute",
    "design_hinf_relative",
    "design_hinf_absolute",
    "design_hinf_bisection",
    "build_T",
    "filter_gain",
    "h2_lmi_blocks",
    "hinf_lmi_block",
    "hinf_lmi_margin",
    "is_stabilizable",
    "check_h2_invariants",
]

log = logging.getLogger(__name__)

RIC_EPS = 1e-6
CERT_RTOL = 1e-6


def is_stabilizable(A, B, tol=1e-9) -> bool:
    """PBH test on the closed right half-plane eigenvalues of ``A``."""
    A = np.atleast_2d(A)
    n = A.shape[0]
    for s in np.linalg.eigvals(A):
        if s.real >= -tol:
            M = np.hstack([A - s * np.eye(n), B])
            if np.linalg.matrix_rank(M, tol=1e-9 * max(1.0, np.linalg.norm(M, 2))) < n:
                return False
    return True


def filter_gain(m: AgentModel, eps=RIC_EPS):
    """``(Q, G)`` from ``A Q + Q A^T - Q C2^T C2 Q + B0 B0^T + eps' I = 0``, ``G = Q C2^T``.

    ``eps' = eps * ||B0 B0^T + I||`` turns the strict Riccati inequality into
    an equation with a stabilizing solution.
    """
    W0 = m.B0 @ m.B0.T
    W0 = W0 + eps * np.linalg.norm(W0 + np.eye(m.n), 2) * np.eye(m.n)
    Q = solve_filter_riccati(m.A, m.C2, W0)
    return Q, Q @ m.C2.T


def h2_lmi_blocks(m: AgentModel, Q, Pbar, tau, W):
    """The two step-one matrices that must be negative / positive definite.

    Returns ``(coupling, trace)`` where ``coupling`` is
    ``[[Pbar A^T + A Pbar - tau B2 B2^T, Pbar C1^T], [C1 Pbar, -I]]`` and
    ``trace`` is ``[[Pbar, Q C2^T], [C2 Q, W]]``.  Works on arrays and on
    :class:`Affine` expressions alike.
    """
    A, B2, C1, C2 = m.A, m.B2, m.C1, m.C2
    coupling = Affine.block([
        [Pbar @ A.T + A @ Pbar - tau * (B2 @ B2.T), Pbar @ C1.T],
        [C1 @ Pbar, -np.eye(m.m2)],
    ])
    trace = Affine.block([[Pbar, Q @ C2.T], [C2 @ Q, W]])
    return coupling, trace


def _validate_h2_inputs(m: AgentModel, spec: GraphSpectrum):
    if spec.n_nodes < 2:
        raise IllFormed("H2 consensus design needs at least two agents")
    if not m.satisfies_noise_assumption():
        raise IllFormed("noise channels must satisfy D0 B0^T = 0 and D0 D0^T = I")
    if not is_stabilizable(m.A, m.B2):
        raise NotStabilizable("(A, B2) is not stabilizable")


def _design_h2(m: AgentModel, g: Graph, cfg: SynthesisConfig, case: str) -> H2Protocol:
    spec = spectrum(g)
    _validate_h2_inputs(m, spec)
    N = spec.n_nodes
    budget = cfg.gamma2**2 / (N - 1)
    Q, G = filter_gain(m)
    floor = float(np.trace(m.C1 @ Q @ m.C1.T))
    budget_text = f"tr(W) + tr(C1 Q C1^T) < gamma2^2/(N-1) = {budget:.6g}"
    if floor >= budget:
        raise InfeasibleBudget(
            f"H2 budget unattainable: tr(C1 Q C1^T) = {floor:.6g} alone exceeds gamma2^2/(N-1) = {budget:.6g}",
            inequality=budget_text,
        )

    p = LmiProblem()
    Pbar = p.symmetric(m.n, "Pbar")
    tau = p.scalar("tau")
    W = p.symmetric(m.m1, "W")
    coupling, trace = h2_lmi_blocks(m, Q, Pbar, tau, W)
    p.require_pd(Pbar, "Pbar")
    p.require_pd(tau, "tau")
    p.require_nd(coupling, "coupling")
    p.require_pd(trace, "trace")
    if cfg.h2_objective == "coupling":
        p.require_nd(W.trace() + (floor - budget), "budget")
        p.minimize(tau)
    else:
        p.require_psd(cfg.tau_max - tau, "tau_max")
        p.minimize(W.trace())
    try:
        sol = solve_sdp(p)
    except Infeasible as exc:
        raise InfeasibleBudget(f"step-one LMIs infeasible: {exc.certificate}", inequality=budget_text) from exc

    Pv, tv, Wv = (p.value(X, sol.theta) for X in (Pbar, tau, W))
    tv = float(tv[0, 0])
    total = float(np.trace(Wv)) + floor
    if not total < budget:
        raise InfeasibleBudget(
            f"H2 budget not met at the SDP optimum: tr(W) + tr(C1 Q C1^T) = {total:.6g} >= {budget:.6g}",
            inequality=budget_text,
        )
    c = tv / (2.0 * spec.lambda2)
    F = -c * m.B2.T @ np.linalg.inv(Pv)
    h2 = H2Protocol(F=F, G=G, c=c, feedback_case=case, Q=Q, Pbar=Pv, tau=tv, W=Wv, gamma2=cfg.gamma2)
    check_h2_invariants(m, spec, h2)
    h2.certified_h2 = certify_h2(assemble_step1(m, g, h2), spec)
    if not h2.certified_h2 < cfg.gamma2:
        raise InfeasibleBudget(
            f"certified network H2 norm {h2.certified_h2:.6g} is not below gamma2 = {cfg.gamma2:g}",
            inequality="sum_i ||T_i||_2^2 < gamma2^2",
        )
    return h2


def check_h2_invariants(m: AgentModel, spec: GraphSpectrum, h2: H2Protocol):
    """Raise unless ``A - G C2`` and every ``A + lambda_i B2 F`` are Hurwitz."""
    if not is_hurwitz(m.A - h2.G @ m.C2):
        raise NumericalFailure("observer matrix A - G C2 is not Hurwitz")
    for lam in spec.nonzero_eigenvalues:
        if not is_hurwitz(m.A + lam * m.B2 @ h2.F):
            raise UnstableSubsystem(f"A + lambda B2 F is not Hurwitz at lambda = {lam:.6g}", lam=float(lam))


def design_h2_relative(m: AgentModel, g: Graph, cfg: SynthesisConfig) -> H2Protocol:
    """Observer gain ``G`` and feedback gain ``F`` for the relative-output protocol.

    Parameters
    ----------
    m, g
        Agent model and a connected communication graph.
    cfg
        ``cfg.gamma2`` is the H2 budget; ``cfg.h2_objective`` picks the SDP
        objective (see :class:`SynthesisConfig`).

    Returns
    -------
    H2Protocol
        Gains, coupling scalar ``c = tau / (2 lambda_2)`` and the certificate
        ``(Q, Pbar, tau, W)``; ``certified_h2`` holds the network H2 norm.

    Raises
    ------
    InfeasibleBudget
        The LMIs or the trace budget cannot be met.
    NotDetectable, NotStabilizable, DisconnectedGraph
    """
    return _design_h2(m, g, cfg, "relative")


def design_h2_absolute(m: AgentModel, g: Graph, cfg: SynthesisConfig) -> H2Protocol:
    """As :func:`design_h2_relative`, for local observers and Laplacian-coupled feedback.

    The modal subsystems coincide with the relative case, so the gains are
    the same; only the certification runs on the absolute-output network.
    """
    return _design_h2(m, g, cfg, "absolute")


def build_T(B2frak) -> np.ndarray:
    """Nonsingular ``T`` with ``T @ B2frak = [I; 0]``.

    The top rows are the pseudo-inverse of ``B2frak``, the bottom rows an
    orthonormal basis of its left null space, each signed so that its
    largest-magnitude entry is positive.
    """
    B = np.atleast_2d(np.asarray(B2frak, dtype=float))
    rows, r = B.shape
    if r > rows:
        raise RankDeficient(f"matrix with shape {B.shape} cannot have full column rank")
    U, s, _ = np.linalg.svd(B)
    if s.size == 0 or s[-1] <= 1e-10 * max(s[0], np.finfo(float).tiny) or s[0] == 0.0:
        raise RankDeficient("matrix does not have full column rank")
    comp = U[:, r:].T.copy()
    for k in range(comp.shape[0]):
        if comp[k, np.argmax(np.abs(comp[k]))] < 0:
            comp[k] = -comp[k]
    return np.vstack([np.linalg.pinv(B), comp])


def _transformed(d, T, Ti):
    return {"A": T @ d["A"] @ Ti, "B1": T @ d["B1"], "C2": d["C2"] @ Ti, "C1": d["C1"] @ Ti, "D1": d["D1"]}


def hinf_lmi_block(db, S, V, gamma_sq):
    """``[[Abar^T S + S Abar + C2bar^T V^T + V C2bar + C1bar^T C1bar, S B1bar + V D1], [., -gamma^2 I]]``.

    ``db`` holds transformed data (keys ``A``, ``B1``, ``C1``, ``C2``, ``D1``);
    ``S``, ``V`` and ``gamma_sq`` may be arrays or :class:`Affine`.
    """
    q = db["B1"].shape[1]
    Y = db["A"].T @ S + S @ db["A"] + db["C2"].T @ V.T + V @ db["C2"] + db["C1"].T @ db["C1"]
    X = S @ db["B1"] + V @ db["D1"]
    return Affine.block([[Y, X], [X.T, -1.0 * (gamma_sq * np.eye(q))]])


def _block_diag_affine(S11, S22):
    r, s = S11.shape[0], S22.shape[0]
    return Affine.block([[S11, np.zeros((r, s))], [np.zeros((s, r)), S22]])


def _stack_v(V1, extra_rows):
    return Affine.block([[V1], [np.zeros((extra_rows, V1.shape[1]))]])


def hinf_lmi_margin(m: AgentModel, h2: H2Protocol, hi: HinfProtocol, lam: float) -> float:
    """Largest eigenvalue of the step-two LMI at ``lam``, negated (``>= 0`` means satisfied)."""
    if hi.S11 is None or hi.S22 is None or hi.V1 is None or hi.T is None:
        raise IllFormed("protocol carries no LMI certificate")
    d = step2_data(m, h2, lam, hi.order)
    T = hi.T
    db = _transformed(d, T, np.linalg.inv(T))
    r, s = hi.S11.shape[0], hi.S22.shape[0]
    S = np.block([[hi.S11, np.zeros((r, s))], [np.zeros((s, r)), hi.S22]])
    V = np.vstack([hi.V1, np.zeros((s, hi.V1.shape[1]))])
    M = hinf_lmi_block(db, S, V, hi.gamma_inf_achieved**2).const
    return float(-np.linalg.eigvalsh(0.5 * (M + M.T))[-1])


def _hinf_sdp(m: AgentModel, spec: GraphSpectrum, h2: H2Protocol, nc: int, gamma=None):
    """Solve the two-eigenvalue LMI problem; ``gamma=None`` minimizes the bound."""
    lams = (spec.lambda2, spec.lambdaN)
    data = [step2_data(m, h2, lam, nc) for lam in lams]
    T = build_T(data[0]["B2"])
    Ti = np.linalg.inv(T)
    r = nc + m.p
    dim = 2 * m.n + nc
    p = LmiProblem()
    S11 = p.symmetric(r, "S11")
    S22 = p.symmetric(dim - r, "S22")
    V1 = p.full(r, nc + m.m1, "V1")
    g2 = p.scalar("gamma_sq") if gamma is None else gamma**2
    S = _block_diag_affine(S11, S22)
    V = _stack_v(V1, dim - r)
    p.require_pd(S11, "S11")
    p.require_pd(S22, "S22")
    for lam, d in zip(lams, data):
        p.require_nd(hinf_lmi_block(_transformed(d, T, Ti), S, V, g2), f"bounded-real at lambda={lam:.6g}")
    if gamma is None:
        p.minimize(g2)
    sol = solve_sdp(p)
    S11v, S22v, V1v = (p.value(X, sol.theta) for X in (S11, S22, V1))
    gsq = float(p.value(g2, sol.theta)[0, 0]) if gamma is None else gamma**2
    return T, S11v, S22v, V1v, gsq


def _extract(m, nc, S11, V1):
    K = np.linalg.solve(S11, V1)
    return K[:nc, :nc], K[:nc, nc:], K[nc:, :nc], K[nc:, nc:]


def _design_hinf(m: AgentModel, g: Graph, h2: H2Protocol, cfg: SynthesisConfig, case: str) -> HinfProtocol:
    spec = spectrum(g)
    if spec.n_nodes < 2:
        raise IllFormed("H-infinity consensus design needs at least two agents")
    nc = m.n if cfg.controller_order is None else cfg.controller_order
    try:
        T, S11, S22, V1, gsq = _hinf_sdp(m, spec, h2, nc, cfg.gamma_inf)
    except Infeasible as exc:
        raise InfeasibleBudget(
            f"step-two LMIs infeasible at gamma_inf = {cfg.gamma_inf:g}: {exc.certificate}",
            inequality="bounded-real LMI at lambda_2 and lambda_N",
        ) from exc
    hi = _finish_hinf(m, g, spec, h2, case, nc, T, S11, S22, V1, gsq)
    return hi


def _finish_hinf(m, g, spec, h2, case, nc, T, S11, S22, V1, gsq):
    Ac, Bc, Cc, Dc = _extract(m, nc, S11, V1)
    hi = HinfProtocol(Ac, Bc, Cc, Dc, gamma_inf_achieved=float(np.sqrt(gsq)), feedback_case=case,
                      S11=S11, S22=S22, V1=V1, T=T, T_condition=float(np.linalg.cond(T)))
    h2_case = H2Protocol(F=h2.F, G=h2.G, c=h2.c, feedback_case=case)
    cert = certify_hinf(assemble_step2(m, g, h2_case, hi), spec)
    if cert > hi.gamma_inf_achieved * (1.0 + CERT_RTOL) + 1e-9:
        raise NumericalFailure(
            f"post-hoc H-infinity norm {cert:.6g} exceeds the LMI bound {hi.gamma_inf_achieved:.6g}"
        )
    hi.certified_hinf = cert
    return hi


def design_hinf_relative(m: AgentModel, g: Graph, h2: H2Protocol, cfg: SynthesisConfig) -> HinfProtocol:
    """Inner controller driven by the relative residual ``f_i``.

    Solves one SDP over ``(S11, S22, V1, gamma^2)`` with the bounded-real
    LMI at ``lambda_2`` and ``lambda_N``; ``K = S11^{-1} V1``.  The bound
    holds at every intermediate eigenvalue because the LMI is affine in
    ``lambda``.

    Raises
    ------
    RankDeficient
        ``B2`` does not have full column rank.
    InfeasibleBudget
        A fixed ``cfg.gamma_inf`` cannot be certified.
    """
    return _design_hinf(m, g, h2, cfg, "relative")


def design_hinf_absolute(m: AgentModel, g: Graph, h2: H2Protocol, cfg: SynthesisConfig) -> HinfProtocol:
    """Inner controller driven by ``sum_j a_ij (f~_i - f~_j)`` for local observers.

    After scaling the observer error by ``lambda_i`` the modal subsystems
    coincide with the relative case, so the same LMIs apply; certification
    runs on the absolute-output network.
    """
    return _design_hinf(m, g, h2, cfg, "absolute")


def design_hinf_bisection(m: AgentModel, g: Graph, h2: H2Protocol, cfg: SynthesisConfig,
                          lower=0.0, upper=None, rtol=1e-3) -> HinfProtocol:
    """Smallest feasible ``gamma_inf`` by bisection over fixed-gamma feasibility problems."""
    spec = spectrum(g)
    nc = m.n if cfg.controller_order is None else cfg.controller_order
    if upper is None:
        upper = 1.0
        for _ in range(40):
            try:
                best = _hinf_sdp(m, spec, h2, nc, upper)
                break
            except Infeasible:
                lower, upper = upper, 2.0 * upper
        else:
            raise InfeasibleBudget("no feasible gamma_inf found", inequality="bounded-real LMI")
    else:
        try:
            best = _hinf_sdp(m, spec, h2, nc, upper)
        except Infeasible as exc:
            raise InfeasibleBudget(f"upper bracket gamma_inf = {upper:g} infeasible",
                                   inequality="bounded-real LMI") from exc
    while upper - lower > rtol * upper:
        mid = 0.5 * (lower + upper)
        try:
            best = _hinf_sdp(m, spec, h2, nc, mid)
            upper = mid
        except Infeasible:
            lower = mid
    T, S11, S22, V1, gsq = best
    return _finish_hinf(m, g, spec, h2, cfg.feedback_case, nc, T, S11, S22, V1, gsq)
