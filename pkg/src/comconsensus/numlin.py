"""Lyapunov and Riccati solvers, H2 and H-infinity norms of LTI systems."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import (
    DimensionMismatch,
    NoStabilizingSolution,
    NonzeroFeedthrough,
    NotDetectable,
    UnstableMatrix,
)

__all__ = [
    "LtiSystem",
    "is_hurwitz",
    "solve_lyapunov",
    "solve_care",
    "solve_filter_riccati",
    "bounded_real_riccati",
    "freqresp",
    "h2_norm",
    "hinf_norm",
]

STABILITY_MARGIN = 1e-8


@dataclass(frozen=True)
class LtiSystem:
    """Continuous-time state-space realization ``x' = Ax + Bw, y = Cx + Dw``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray | None = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionMismatch(f"A must be square, got {A.shape}")
        try:
            B = np.asarray(self.B, dtype=float).reshape(A.shape[0], -1)
            C = np.asarray(self.C, dtype=float).reshape(-1, A.shape[0])
            if self.D is None:
                D = np.zeros((C.shape[0], B.shape[1]))
            else:
                D = np.asarray(self.D, dtype=float).reshape(C.shape[0], B.shape[1])
        except ValueError as exc:
            raise DimensionMismatch(f"inconsistent realization dimensions: {exc}") from exc
        for name, m in (("A", A), ("B", B), ("C", C), ("D", D)):
            if not np.all(np.isfinite(m)):
                raise DimensionMismatch(f"{name} has non-finite entries")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)

    @property
    def n_states(self):
        return self.A.shape[0]

    @property
    def n_inputs(self):
        return self.B.shape[1]

    @property
    def n_outputs(self):
        return self.C.shape[0]


def is_hurwitz(A, margin=STABILITY_MARGIN) -> bool:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        return True
    return bool(np.max(np.linalg.eigvals(A).real) < -margin)


def _spectral_abscissa(A):
    return float(np.max(np.linalg.eigvals(A).real)) if A.size else -np.inf


def solve_lyapunov(A, Qm) -> np.ndarray:
    """Solve ``A X + X A^T + Qm = 0`` for a Hurwitz ``A``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Qm = np.atleast_2d(np.asarray(Qm, dtype=float))
    if Qm.shape != A.shape:
        raise DimensionMismatch(f"A is {A.shape} but Qm is {Qm.shape}")
    if not is_hurwitz(A):
        raise UnstableMatrix(
            f"Lyapunov solve needs a Hurwitz matrix (spectral abscissa {_spectral_abscissa(A):.3e})"
        )
    X = sla.solve_continuous_lyapunov(A, -Qm)
    return 0.5 * (X + X.T)


def solve_care(A, R, Q, tol=1e-9) -> np.ndarray:
    """Stabilizing solution of ``A^T X + X A - X R X + Q = 0``.

    Both ``R`` and ``Q`` must be symmetric; ``R`` may be indefinite.  The
    solution is read off the stable invariant subspace of the Hamiltonian
    ``[[A, -R], [-Q, -A^T]]`` obtained from an ordered real Schur form.  On
    success ``A - R X`` is Hurwitz.

    Raises
    ------
    NoStabilizingSolution
        If the Hamiltonian has eigenvalues on (or numerically near) the
        imaginary axis, or the stable subspace is not a graph subspace.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    n = A.shape[0]
    H = np.block([[A, -R], [-Q, -A.T]])
    scale = max(1.0, np.linalg.norm(H, 1))
    evals = np.linalg.eigvals(H)
    if np.min(np.abs(evals.real)) <= tol * scale:
        raise NoStabilizingSolution("Hamiltonian has eigenvalues on the imaginary axis")
    T, Z, sdim = sla.schur(H, output="real", sort="lhp")
    if sdim != n:
        raise NoStabilizingSolution(f"stable subspace has dimension {sdim}, expected {n}")
    U11, U21 = Z[:n, :n], Z[n:, :n]
    if np.linalg.cond(U11) > 1e12:
        raise NoStabilizingSolution("stable invariant subspace is not complementary")
    X = np.linalg.solve(U11.T, U21.T).T
    X = 0.5 * (X + X.T)
    if not is_hurwitz(A - R @ X, margin=0.0):
        raise NoStabilizingSolution("computed solution is not stabilizing")
    return X


def solve_filter_riccati(A, C2, W0) -> np.ndarray:
    """Stabilizing solution of ``A Q + Q A^T - Q C2^T C2 Q + W0 = 0``.

    ``A - Q C2^T C2`` is Hurwitz for the returned ``Q``.  Callers turning the
    strict inequality ``A Q + Q A^T - Q C2^T C2 Q + B0 B0^T < 0`` into this
    equation pass ``W0 = B0 B0^T + eps I`` with a small ``eps > 0``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C2 = np.atleast_2d(np.asarray(C2, dtype=float))
    W0 = np.atleast_2d(np.asarray(W0, dtype=float))
    if C2.shape[1] != A.shape[0] or W0.shape != A.shape:
        raise DimensionMismatch("inconsistent dimensions in filter Riccati data")
    try:
        Q = solve_care(A.T, C2.T @ C2, W0)
    except NoStabilizingSolution as exc:
        raise NotDetectable(f"(C2, A) is not detectable: {exc}") from exc
    return Q


def bounded_real_riccati(sys: LtiSystem, gamma) -> np.ndarray:
    """Stabilizing ``X`` of ``A^T X + X A + X B B^T X / gamma^2 + C^T C = 0``.

    Exists (for Hurwitz ``A`` and zero feedthrough) exactly when the H-infinity
    norm of ``sys`` is below ``gamma``.
    """
    if np.any(sys.D):
        raise NonzeroFeedthrough("bounded-real Riccati form assumes D = 0")
    return solve_care(sys.A, -(sys.B @ sys.B.T) / gamma**2, sys.C.T @ sys.C)


def freqresp(sys: LtiSystem, omega) -> np.ndarray:
    """Frequency response ``C (j w I - A)^{-1} B + D`` stacked over ``omega``.

    Returns an array of shape ``(len(omega), n_outputs, n_inputs)``.
    """
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    n = sys.n_states
    if n == 0:
        return np.broadcast_to(sys.D, (len(omega),) + sys.D.shape).astype(complex)
    # Hessenberg reduction keeps the per-frequency solves cheap and accurate.
    H, Z = sla.hessenberg(sys.A, calc_q=True)
    Bh = Z.T @ sys.B
    Ch = sys.C @ Z
    eye = np.eye(n)
    out = np.empty((len(omega), sys.n_outputs, sys.n_inputs), dtype=complex)
    for k, w in enumerate(omega):
        out[k] = Ch @ np.linalg.solve(1j * w * eye - H, Bh) + sys.D
    return out


def h2_norm(sys: LtiSystem) -> float:
    """H2 norm ``sqrt(tr(C X C^T))`` with ``A X + X A^T + B B^T = 0``."""
    if np.any(sys.D):
        raise NonzeroFeedthrough("H2 norm is infinite for nonzero feedthrough")
    if sys.n_states == 0:
        return 0.0
    X = solve_lyapunov(sys.A, sys.B @ sys.B.T)
    return float(np.sqrt(max(np.trace(sys.C @ X @ sys.C.T), 0.0)))


def _sigma_max(M):
    return float(np.linalg.svd(M, compute_uv=False)[0]) if M.size else 0.0


def _imaginary_frequencies(sys, gamma, tol=1e-7):
    """Frequencies ``w >= 0`` where ``j w`` is an eigenvalue of the gamma-Hamiltonian."""
    A, B, C, D = sys.A, sys.B, sys.C, sys.D
    R = gamma**2 * np.eye(sys.n_inputs) - D.T @ D
    Rinv = np.linalg.inv(R)
    Ak = A + B @ Rinv @ D.T @ C
    H = np.block(
        [
            [Ak, B @ Rinv @ B.T],
            [-C.T @ (np.eye(sys.n_outputs) + D @ Rinv @ D.T) @ C, -Ak.T],
        ]
    )
    evals = np.linalg.eigvals(H)
    hit = np.abs(evals.real) <= tol * np.maximum(1.0, np.abs(evals))
    return np.unique(np.abs(evals[hit].imag))


def hinf_norm(sys: LtiSystem, rtol=1e-6) -> float:
    """H-infinity norm by bisection on the Hamiltonian imaginary-axis test.

    Every imaginary-axis eigenvalue is confirmed by evaluating the largest
    singular value at that frequency, so numerical near-misses never raise
    the lower bound above a true singular value.
    """
    A = sys.A
    if not is_hurwitz(A):
        raise UnstableMatrix(
            f"H-infinity norm needs a Hurwitz matrix (spectral abscissa {_spectral_abscissa(A):.3e})"
        )
    sd = _sigma_max(sys.D)
    if not np.any(sys.C) or not np.any(sys.B):
        return sd
    abscissa = abs(_spectral_abscissa(A))
    lower = max(sd, _sigma_max(freqresp(sys, [0.0])[0]))
    poles = np.linalg.eigvals(A)
    peaks = np.unique(np.abs(poles.imag))
    if peaks.size:
        lower = max(lower, max(_sigma_max(g) for g in freqresp(sys, peaks)))
    upper = sd + 2.0 * np.linalg.norm(sys.C, 2) * np.linalg.norm(sys.B, 2) / abscissa + 1.0
    upper = max(upper, 1.01 * lower)
    # The cheap bracket is not a bound for strongly non-normal A; grow until certified.
    for _ in range(200):
        freqs = _imaginary_frequencies(sys, upper)
        if freqs.size == 0:
            break
        lower = max(lower, max(_sigma_max(g) for g in freqresp(sys, freqs)))
        upper = max(2.0 * upper, 1.01 * lower)
    if lower == 0.0:
        return 0.0
    while upper - lower > rtol * lower:
        gamma = 0.5 * (lower + upper)
        freqs = _imaginary_frequencies(sys, gamma)
        if freqs.size:
            peak = max(_sigma_max(g) for g in freqresp(sys, freqs))
            if peak >= gamma * (1.0 - 1e-9):
                lower = max(gamma, peak)
                continue
        upper = gamma
    return 0.5 * (lower + upper)
