"""Dense LMI feasibility and linear-objective SDP on top of cvxopt.

Problems are stated in the standard affine form ``F0 + sum_k theta_k F_k >= 0``
(positive semidefinite) over a vector of scalar decision variables
``theta``.  Matrix-valued unknowns are built with :class:`LmiProblem` helpers
that return :class:`Affine` expressions; symmetric matrices use one scalar
per upper-triangular entry.

Every reported solution is re-verified by an eigenvalue check on each block,
independently of the interior-point solver's own stopping criteria.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IllFormed, Infeasible, NumericalFailure

__all__ = [
    "Affine",
    "LmiBlock",
    "LmiProblem",
    "SdpSolution",
    "solve_sdp",
    "schur_embed",
    "strict_shift",
]

log = logging.getLogger(__name__)

VERIFY_RTOL = 1e-9
DEFAULT_BOX = 1e4
_BOX_RETRIES = (1.0, 10.0, 0.1)


def strict_shift(constant) -> float:
    """Margin used to replace a strict inequality by a closed one."""
    return 1e-7 * (1.0 + float(np.linalg.norm(np.atleast_2d(constant), 2)))


class Affine:
    """Matrix expression ``const + sum_k theta_k coeffs[k]``.

    ``coeffs`` maps a variable index to its coefficient matrix.  Supports
    ``+``, ``-``, scalar ``*``, ``@`` with constant arrays, ``.T`` and block
    assembly through :meth:`Affine.block`.
    """

    __array_priority__ = 100

    def __init__(self, const, coeffs=None):
        self.const = np.atleast_2d(np.asarray(const, dtype=float))
        self.coeffs = {} if coeffs is None else coeffs

    @property
    def shape(self):
        return self.const.shape

    @staticmethod
    def lift(x):
        return x if isinstance(x, Affine) else Affine(x)

    def __add__(self, other):
        other = Affine.lift(other)
        if other.shape != self.shape:
            raise IllFormed(f"shape mismatch {self.shape} + {other.shape}")
        coeffs = dict(self.coeffs)
        for k, m in other.coeffs.items():
            coeffs[k] = coeffs[k] + m if k in coeffs else m
        return Affine(self.const + other.const, coeffs)

    __radd__ = __add__

    def __neg__(self):
        return Affine(-self.const, {k: -m for k, m in self.coeffs.items()})

    def __sub__(self, other):
        return self + (-Affine.lift(other))

    def __rsub__(self, other):
        return Affine.lift(other) - self

    def __mul__(self, scalar):
        """Product with a constant scalar, or a 1x1 expression scaling a constant matrix."""
        if isinstance(scalar, Affine):
            raise IllFormed("product of two decision-dependent expressions is not affine")
        arr = np.asarray(scalar, dtype=float)
        if arr.size != 1:
            if self.shape != (1, 1):
                raise IllFormed("only a 1x1 expression can scale a matrix")
            M = np.atleast_2d(arr)
            return Affine(self.const[0, 0] * M, {k: m[0, 0] * M for k, m in self.coeffs.items()})
        s = float(arr.reshape(()))
        return Affine(s * self.const, {k: s * m for k, m in self.coeffs.items()})

    __rmul__ = __mul__

    def __matmul__(self, M):
        if isinstance(M, Affine):
            raise IllFormed("product of two decision-dependent expressions is not affine")
        M = np.atleast_2d(M)
        return Affine(self.const @ M, {k: m @ M for k, m in self.coeffs.items()})

    def __rmatmul__(self, M):
        M = np.atleast_2d(M)
        return Affine(M @ self.const, {k: M @ m for k, m in self.coeffs.items()})

    @property
    def T(self):
        return Affine(self.const.T, {k: m.T for k, m in self.coeffs.items()})

    def sym(self):
        """``(X + X^T) / 2``."""
        return 0.5 * (self + self.T)

    def trace(self):
        return Affine([[np.trace(self.const)]], {k: np.atleast_2d(np.trace(m)) for k, m in self.coeffs.items()})

    def value(self, theta):
        out = self.const.copy()
        for k, m in self.coeffs.items():
            out = out + theta[k] * m
        return out

    @staticmethod
    def block(rows):
        """Assemble a block matrix from a nested list of expressions/arrays."""
        lifted = [[Affine.lift(b) for b in row] for row in rows]
        heights = [row[0].shape[0] for row in lifted]
        widths = [b.shape[1] for b in lifted[0]]
        for r, row in enumerate(lifted):
            if len(row) != len(widths):
                raise IllFormed("ragged block row")
            for c, b in enumerate(row):
                if b.shape != (heights[r], widths[c]):
                    raise IllFormed(f"block ({r},{c}) has shape {b.shape}, expected {(heights[r], widths[c])}")
        const = np.block([[b.const for b in row] for row in lifted])
        keys = set().union(*(b.coeffs for row in lifted for b in row))
        coeffs = {}
        for k in keys:
            coeffs[k] = np.block(
                [[b.coeffs.get(k, np.zeros(b.shape)) for b in row] for row in lifted]
            )
        return Affine(const, coeffs)


@dataclass
class LmiBlock:
    """One constraint ``F0 + sum_k theta_k F[k] >= 0``; ``F`` has shape ``(n_vars, m, m)``."""

    F0: np.ndarray
    F: np.ndarray
    name: str = ""

    def value(self, theta):
        return self.F0 + np.tensordot(theta, self.F, axes=1)

    def margin(self, theta):
        M = self.value(theta)
        return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])

    def scale(self, theta):
        return max(1.0, float(np.linalg.norm(self.value(theta), 2)))


@dataclass
class SdpSolution:
    theta: np.ndarray
    objective_value: float | None
    margin: float
    block_margins: dict = field(default_factory=dict)
    status: str = "optimal"


class LmiProblem:
    """Container for an affine LMI feasibility or minimization problem.

    Variables are created incrementally with :meth:`scalar`, :meth:`symmetric`
    and :meth:`full`; constraints with :meth:`require_psd`, :meth:`require_pd`
    and :meth:`require_nd`.
    """

    def __init__(self, box=DEFAULT_BOX):
        self.n_vars = 0
        self.names = []
        self._blocks = []  # (name, Affine) pairs, materialized lazily
        self.objective = None
        self.box = box

    # decision variables
    def _new(self, label):
        k = self.n_vars
        self.n_vars += 1
        self.names.append(label)
        return k

    def scalar(self, name="t"):
        k = self._new(name)
        return Affine([[0.0]], {k: np.ones((1, 1))})

    def symmetric(self, n, name="X"):
        const = np.zeros((n, n))
        coeffs = {}
        for i in range(n):
            for j in range(i, n):
                k = self._new(f"{name}[{i},{j}]")
                E = np.zeros((n, n))
                E[i, j] = E[j, i] = 1.0
                coeffs[k] = E
        return Affine(const, coeffs)

    def full(self, rows, cols, name="V"):
        coeffs = {}
        for i in range(rows):
            for j in range(cols):
                k = self._new(f"{name}[{i},{j}]")
                E = np.zeros((rows, cols))
                E[i, j] = 1.0
                coeffs[k] = E
        return Affine(np.zeros((rows, cols)), coeffs)

    # constraints
    def require_psd(self, expr, name=""):
        """``expr >= 0``; ``expr`` is symmetrized."""
        expr = Affine.lift(expr)
        if expr.shape[0] != expr.shape[1]:
            raise IllFormed(f"constraint {name!r} is not square: {expr.shape}")
        self._blocks.append((name or f"block{len(self._blocks)}", expr.sym()))

    def require_pd(self, expr, name=""):
        """Strict ``expr > 0`` as ``expr >= eps I``."""
        expr = Affine.lift(expr)
        eps = strict_shift(expr.const)
        self.require_psd(expr - eps * np.eye(expr.shape[0]), name)

    def require_nd(self, expr, name=""):
        """Strict ``expr < 0`` as ``-expr >= eps I``."""
        self.require_pd(-Affine.lift(expr), name)

    def minimize(self, expr):
        expr = Affine.lift(expr)
        if expr.shape != (1, 1):
            raise IllFormed("objective must be scalar")
        self.objective = expr

    # materialization
    @property
    def blocks(self):
        out = []
        for name, expr in self._blocks:
            m = expr.shape[0]
            F = np.zeros((self.n_vars, m, m))
            for k, c in expr.coeffs.items():
                F[k] = c
            out.append(LmiBlock(expr.const.copy(), F, name))
        return out

    def objective_vector(self):
        c = np.zeros(self.n_vars)
        if self.objective is not None:
            for k, m in self.objective.coeffs.items():
                c[k] = m[0, 0]
        return c

    def value(self, expr, theta):
        return Affine.lift(expr).value(theta)

    def to_dict(self):
        return {
            "n_vars": self.n_vars,
            "variables": self.names,
            "objective": None if self.objective is None else self.objective_vector().tolist(),
            "objective_offset": None if self.objective is None else float(self.objective.const[0, 0]),
            "blocks": [
                {"name": b.name, "F0": b.F0.tolist(), "F": [f.tolist() for f in b.F]}
                for b in self.blocks
            ],
        }

    def dump_json(self, path):
        """Write the problem data (row-major matrices) for external cross-checking."""
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def from_blocks(cls, blocks, objective=None, box=DEFAULT_BOX):
        """Build a problem directly from ``(F0, [F_1, ..., F_n])`` pairs."""
        blocks = list(blocks)
        if blocks:
            n_vars = len(blocks[0][1])
        elif objective is not None:
            n_vars = len(objective)
        else:
            n_vars = 0
        prob = cls(box=box)
        for k in range(n_vars):
            prob.scalar(f"theta{k}")
        for b, (F0, Fs) in enumerate(blocks):
            F0 = np.atleast_2d(np.asarray(F0, dtype=float))
            if F0.shape[0] != F0.shape[1]:
                raise IllFormed(f"block {b}: F0 is not square")
            if not np.allclose(F0, F0.T):
                raise IllFormed(f"block {b}: F0 is not symmetric")
            if len(Fs) != n_vars:
                raise IllFormed(f"block {b} has {len(Fs)} coefficient matrices, expected {n_vars}")
            coeffs = {}
            for k, Fk in enumerate(Fs):
                Fk = np.atleast_2d(np.asarray(Fk, dtype=float))
                if Fk.shape != F0.shape:
                    raise IllFormed(f"block {b}: F_{k + 1} has shape {Fk.shape}, F0 has {F0.shape}")
                if not np.allclose(Fk, Fk.T):
                    raise IllFormed(f"block {b}: F_{k + 1} is not symmetric")
                coeffs[k] = Fk
            prob._blocks.append((f"block{b}", Affine(F0, coeffs)))
        if objective is not None:
            c = np.asarray(objective, dtype=float)
            if c.shape != (n_vars,):
                raise IllFormed(f"objective has shape {c.shape}, expected ({n_vars},)")
            prob.objective = Affine([[0.0]], {k: np.atleast_2d(c[k]) for k in range(n_vars)})
        return prob


def schur_embed(lyap, cross, gain=None):
    """PSD block equivalent to ``lyap + cross gain^{-1} cross^T < 0`` with ``gain > 0``.

    Returns ``[[-lyap, cross], [cross^T, gain]]`` (``gain`` defaults to the
    identity).  By the Schur complement this block is positive definite
    exactly when ``gain > 0`` and the quadratic inequality holds, so all of
    ``[[L, X], [X^T, -gamma I]] < 0``-type conditions reduce to it.
    """
    lyap = Affine.lift(lyap)
    cross = Affine.lift(cross)
    if lyap.shape[0] != lyap.shape[1] or cross.shape[0] != lyap.shape[0]:
        raise IllFormed(f"incompatible shapes {lyap.shape} and {cross.shape}")
    gain = Affine.lift(np.eye(cross.shape[1]) if gain is None else gain)
    if gain.shape != (cross.shape[1], cross.shape[1]):
        raise IllFormed(f"gain must be {cross.shape[1]}x{cross.shape[1]}, got {gain.shape}")
    return Affine.block([[-lyap, cross], [cross.T, gain]])


# ---------------------------------------------------------------------------
# solver


def _cvx_data(blocks, n_vars, extra_t=False, box=None):
    from cvxopt import matrix

    Gs, hs = [], []
    for b in blocks:
        m = b.F0.shape[0]
        cols = [-b.F[k].reshape(-1, order="F") for k in range(n_vars)]
        if extra_t:
            cols.append(np.eye(m).reshape(-1, order="F"))
        G = np.column_stack(cols) if cols else np.zeros((m * m, 0))
        Gs.append(matrix(np.ascontiguousarray(G)))
        hs.append(matrix(np.ascontiguousarray(b.F0)))
    nx = n_vars + (1 if extra_t else 0)
    rows, h = [], []
    if box is not None:
        for k in range(n_vars):
            e = np.zeros(nx)
            e[k] = 1.0
            rows += [e, -e]
            h += [box, box]
    if extra_t:
        e = np.zeros(nx)
        e[-1] = 1.0
        rows.append(e)
        h.append(1.0)
    Gl = matrix(np.array(rows, dtype=float)) if rows else None
    hl = matrix(np.array(h, dtype=float)) if rows else None
    return Gl, hl, Gs, hs


_OPTIONS = {"show_progress": False, "maxiters": 200, "abstol": 1e-10, "reltol": 1e-10, "feastol": 1e-10}
_LOOSE = {"abstol": 1e-8, "reltol": 1e-8, "feastol": 1e-8}
# cvxopt can hit a zero pivot close to convergence; these settings are tried in order.
_ATTEMPTS = ((None, {}), ("ldl", {}), ("ldl", _LOOSE), (None, _LOOSE))


def _run(c, Gl, hl, Gs, hs):
    from cvxopt import matrix, solvers

    err = None
    for kkt, extra in _ATTEMPTS:
        options = dict(_OPTIONS, **extra)
        try:
            return solvers.sdp(matrix(c), Gl=Gl, hl=hl, Gs=Gs, hs=hs, options=options, kktsolver=kkt)
        except (ArithmeticError, ValueError) as exc:
            err = exc
    raise NumericalFailure(f"interior-point solver failed: {err}") from err


def _farkas(blocks):
    """Search for ``Z_j >= 0`` with ``sum tr Z_j = 1`` and ``sum tr(Z_j F_jk) = 0`` minimizing ``sum tr(Z_j F0_j)``.

    Returns the verified infeasibility gap ``max_theta sum_j tr(Z_j F_j(theta))``
    after projecting the solver's ``Z`` onto the PSD cone, or ``None`` when the
    search fails.  A negative value proves the LMI system infeasible.
    """
    from cvxopt import matrix, solvers

    n_vars = blocks[0].F.shape[0]
    index, offset = [], 0
    for b in blocks:
        m = b.F0.shape[0]
        iu = np.triu_indices(m)
        index.append((offset, iu, m))
        offset += len(iu[0])

    def unpack(z, j):
        off, iu, m = index[j]
        Z = np.zeros((m, m))
        Z[iu] = z[off:off + len(iu[0])]
        return Z + np.triu(Z, 1).T

    # Linear functionals of the packed upper triangle.
    def functional(mats):
        row = np.zeros(offset)
        for j, M in enumerate(mats):
            off, iu, m = index[j]
            W = 2.0 * M - np.diag(np.diag(M))
            row[off:off + len(iu[0])] = W[iu]
        return row

    c = functional([b.F0 for b in blocks])
    A = np.vstack([functional([np.eye(b.F0.shape[0]) for b in blocks])]
                  + [functional([b.F[k] for b in blocks]) for k in range(n_vars)])
    rhs = np.zeros(A.shape[0])
    rhs[0] = 1.0
    U, sv, Vt = np.linalg.svd(A, full_matrices=False)
    r = int(np.sum(sv > 1e-10 * sv[0]))
    Ar, br = sv[:r, None] * Vt[:r], U[:, :r].T @ rhs
    if np.linalg.norm(Ar.T @ np.linalg.lstsq(Ar.T, A.T, rcond=None)[0] - A.T) > 1e-8 * sv[0] or \
            np.linalg.norm(U[:, :r] @ br - rhs) > 1e-8:
        return None
    Gs, hs = [], []
    for j, b in enumerate(blocks):
        off, iu, m = index[j]
        G = np.zeros((m * m, offset))
        for k, (a, bb) in enumerate(zip(*iu)):
            E = np.zeros((m, m))
            E[a, bb] = E[bb, a] = -1.0
            G[:, off + k] = E.reshape(-1, order="F")
        Gs.append(matrix(G))
        hs.append(matrix(np.zeros((m, m))))
    try:
        sol = solvers.sdp(matrix(c), Gs=Gs, hs=hs, A=matrix(Ar), b=matrix(br),
                          options=dict(_OPTIONS, **_LOOSE), kktsolver="ldl")
    except (ArithmeticError, ValueError):
        return None
    if sol["x"] is None:
        return None
    z = np.array(sol["x"]).ravel()
    Zs = []
    for j in range(len(blocks)):
        w, V = np.linalg.eigh(unpack(z, j))
        Zs.append((V * np.clip(w, 0.0, None)) @ V.T)
    total = sum(np.trace(Z) for Z in Zs)
    if total <= 0:
        return None
    Zs = [Z / total for Z in Zs]
    f0 = sum(float(np.sum(Z * b.F0)) for Z, b in zip(Zs, blocks))
    g = sum(np.einsum("kij,ij->k", b.F, Z) for Z, b in zip(Zs, blocks))
    return f0, g


def _verify(blocks, theta):
    margins = {b.name: b.margin(theta) for b in blocks}
    ok = all(margins[b.name] >= -VERIFY_RTOL * b.scale(theta) for b in blocks)
    return ok, (min(margins.values()) if margins else np.inf), margins


def _run_boxed(c, blocks, n_vars, box, extra_t=False):
    """Run the solver, retrying with a rescaled box when cvxopt hits a domain error."""
    err = None
    for factor in _BOX_RETRIES:
        Gl, hl, Gs, hs = _cvx_data(blocks, n_vars, extra_t=extra_t, box=box * factor)
        try:
            return _run(c, Gl, hl, Gs, hs)
        except NumericalFailure as exc:
            err = exc
    raise err


def _phase_one(blocks, n_vars, box):
    """Maximize ``t`` subject to ``F_j(theta) >= t I``, ``t <= 1`` and a box on theta."""
    c = np.zeros(n_vars + 1)
    c[-1] = -1.0
    sol = _run_boxed(c, blocks, n_vars, box, extra_t=True)
    x = np.array(sol["x"]).ravel() if sol["x"] is not None else None
    return sol["status"], x, sol.get("zs")


def _dual_bound(blocks, zs, box):
    """Upper bound of ``sum_j tr(Z_j F_j(theta))`` over the box, from solver duals.

    The duals are projected onto the PSD cone first, so a negative bound
    proves that no ``theta`` in the box makes every block PSD.
    """
    if not zs:
        return np.inf
    f0, g = 0.0, np.zeros(blocks[0].F.shape[0])
    for b, z in zip(blocks, zs):
        Z = np.array(z).reshape(b.F0.shape, order="F")
        w, V = np.linalg.eigh(0.5 * (Z + Z.T))
        Z = (V * np.clip(w, 0.0, None)) @ V.T
        f0 += float(np.sum(Z * b.F0))
        g += np.einsum("kij,ij->k", b.F, Z)
    return f0 + box * float(np.sum(np.abs(g)))


def _feasible_center(blocks, n, box):
    """Phase-one point with a verified margin, or raise Infeasible / NumericalFailure."""
    status, x, zs = _phase_one(blocks, n, box)
    if x is None:
        raise NumericalFailure(f"phase-one solve returned no point (status {status})")
    center, t_star = x[:n], x[n]
    scale = max(b.scale(center) for b in blocks)
    ok, margin, margins = _verify(blocks, center)
    if ok:
        return center, margin, margins
    if status == "optimal" and t_star < -VERIFY_RTOL * scale:
        worst = min(margins, key=margins.get)
        raise Infeasible(
            "LMI problem is infeasible",
            certificate=(
                f"max over theta of the smallest constraint eigenvalue is {t_star:.3e} < 0 "
                f"(box |theta| <= {box:g}); tightest block {worst!r}"
            ),
        )
    if status == "primal infeasible":
        raise Infeasible("LMI problem is infeasible", certificate="phase-one problem primal infeasible")
    bound = _dual_bound(blocks, zs, box)
    certificate = _farkas(blocks) if bound >= 0 else None
    if certificate is not None:
        f0, g = certificate
        bound = f0 + box * float(np.sum(np.abs(g)))
    if bound < 0:
        raise Infeasible(
            "LMI problem is infeasible",
            certificate=(
                f"dual matrices Z_j >= 0 give sum_j tr(Z_j F_j(theta)) <= {bound:.3e} < 0 "
                f"for all |theta| <= {box:g}"
            ),
        )
    # A degenerate optimal face can push theta into the box; smaller boxes only
    # ever contribute verified feasible points, never infeasibility verdicts.
    for factor in (1e-1, 1e-2):
        _, x, _ = _phase_one(blocks, n, box * factor)
        if x is not None:
            ok, m2, mg2 = _verify(blocks, x[:n])
            if ok:
                return x[:n], m2, mg2
    raise NumericalFailure(
        f"phase-one solver stalled (status {status}, t = {t_star:.3e}, verified margin {margin:.3e})"
    )


def solve_sdp(p: LmiProblem) -> SdpSolution:
    """Solve an LMI problem; raise :class:`Infeasible` when no point exists.

    Feasibility is decided by a phase-one problem that maximizes the smallest
    eigenvalue over all blocks.  When an objective is present a second solve
    minimizes it; if the optimizer lands marginally outside the cone it is
    pulled toward the phase-one point until the eigenvalue check passes.

    Raises
    ------
    IllFormed
        Non-square or non-symmetric blocks, dimension mismatches.
    Infeasible
        The best attainable smallest eigenvalue is negative.
    NumericalFailure
        The interior-point iterations did not converge to a decision.
    """
    blocks = p.blocks
    if not blocks:
        raise IllFormed("problem has no constraints")
    for b in blocks:
        if b.F0.shape[0] != b.F0.shape[1] or b.F.shape[1:] != b.F0.shape:
            raise IllFormed(f"block {b.name} has inconsistent shapes")
        if not np.allclose(b.F0, b.F0.T) or not np.allclose(b.F, np.transpose(b.F, (0, 2, 1))):
            raise IllFormed(f"block {b.name} is not symmetric")
    n = p.n_vars

    center, margin, margins = _feasible_center(blocks, n, p.box)

    if p.objective is None:
        return SdpSolution(theta=center, objective_value=None, margin=margin, block_margins=margins,
                           status="feasible")

    c = p.objective_vector()
    offset = float(p.objective.const[0, 0])
    sol = _run_boxed(c, blocks, n, p.box)
    if sol["x"] is None:
        raise NumericalFailure(f"objective solve returned no point (status {sol['status']})")
    theta = np.array(sol["x"]).ravel()
    if sol["status"] != "optimal":
        log.debug("objective solve ended with status %s", sol["status"])
    ok, margin, margins = _verify(blocks, theta)
    if not ok:
        for alpha in (1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0):
            trial = (1.0 - alpha) * theta + alpha * center
            ok, margin, margins = _verify(blocks, trial)
            if ok:
                theta = trial
                break
    if not ok:
        raise NumericalFailure("objective solve produced no verified feasible point")
    if sol["status"] not in ("optimal",) and np.any(np.abs(theta) > 0.999 * p.box):
        raise NumericalFailure("objective appears unbounded below (box constraint active)")
    return SdpSolution(theta=theta, objective_value=float(c @ theta) + offset, margin=margin,
                       block_margins=margins, status=sol["status"])
