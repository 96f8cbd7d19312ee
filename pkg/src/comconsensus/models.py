"""Agent model, synthesis configuration and protocol containers."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, IllFormed

__all__ = [
    "AgentModel",
    "SynthesisConfig",
    "H2Protocol",
    "HinfProtocol",
    "load_model",
    "save_model",
    "save_protocols",
    "load_protocols",
]

MODEL_FIELDS = ("A", "B0", "B1", "B2", "C1", "C2", "D0", "D1")


def _mat(x, name):
    try:
        m = np.array(x, dtype=float)
    except (TypeError, ValueError) as exc:
        raise IllFormed(f"field {name!r} is not a numeric matrix") from exc
    if m.ndim == 0:
        m = m.reshape(1, 1)
    if m.ndim == 1:
        raise IllFormed(f"field {name!r} must be a 2-D row-major array, got a flat list")
    if m.ndim != 2:
        raise IllFormed(f"field {name!r} must be 2-D")
    if not np.all(np.isfinite(m)):
        raise IllFormed(f"field {name!r} has non-finite entries")
    return m


@dataclass(frozen=True)
class AgentModel:
    """Identical agent dynamics

        x' = A x + B0 w0 + B1 w + B2 u,   y = C2 x + D0 w0 + D1 w,

    with consensus performance weighted by ``C1``.
    """

    A: np.ndarray
    B0: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    D0: np.ndarray
    D1: np.ndarray

    def __post_init__(self):
        for name in MODEL_FIELDS:
            object.__setattr__(self, name, _mat(getattr(self, name), name))
        n = self.A.shape[0]
        checks = [
            ("A", self.A.shape, (n, n)),
            ("B0", self.B0.shape[0], n),
            ("B1", self.B1.shape[0], n),
            ("B2", self.B2.shape[0], n),
            ("C1", self.C1.shape[1], n),
            ("C2", self.C2.shape[1], n),
            ("D0", self.D0.shape, (self.C2.shape[0], self.B0.shape[1])),
            ("D1", self.D1.shape, (self.C2.shape[0], self.B1.shape[1])),
        ]
        for name, got, want in checks:
            if got != want:
                raise DimensionMismatch(f"{name}: got {got}, expected {want}")

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def p(self):
        return self.B2.shape[1]

    @property
    def q1(self):
        return self.B1.shape[1]

    @property
    def q2(self):
        return self.B0.shape[1]

    @property
    def m1(self):
        return self.C2.shape[0]

    @property
    def m2(self):
        return self.C1.shape[0]

    def satisfies_noise_assumption(self, tol=1e-10):
        """``D0 B0^T = 0`` and ``D0 D0^T = I``."""
        return bool(
            np.allclose(self.D0 @ self.B0.T, 0.0, atol=tol)
            and np.allclose(self.D0 @ self.D0.T, np.eye(self.m1), atol=tol)
        )

    def replace(self, **kw):
        d = {k: getattr(self, k) for k in MODEL_FIELDS}
        d.update(kw)
        return AgentModel(**d)

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in MODEL_FIELDS}

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise IllFormed("model document must be a JSON object")
        missing = [k for k in MODEL_FIELDS if k not in d]
        if missing:
            raise IllFormed(f"model document is missing field {missing[0]!r}")
        return cls(**{k: _mat(d[k], k) for k in MODEL_FIELDS})


@dataclass(frozen=True)
class SynthesisConfig:
    """Design targets.

    ``gamma_inf=None`` requests minimization of the H-infinity bound.
    ``h2_objective`` selects the step-one SDP objective: ``"coupling"``
    minimizes ``tau`` with the H2 budget imposed as a constraint,
    ``"trace"`` minimizes ``tr(W)`` with ``tau <= tau_max`` and tests the
    budget afterwards.
    """

    gamma2: float
    gamma_inf: float | None = None
    controller_order: int | None = None
    feedback_case: str = "relative"
    h2_objective: str = "coupling"
    tau_max: float = 1e3

    def __post_init__(self):
        if not self.gamma2 > 0:
            raise IllFormed("gamma2 must be positive")
        if self.gamma_inf is not None and not self.gamma_inf > 0:
            raise IllFormed("gamma_inf must be positive")
        if self.feedback_case not in ("relative", "absolute"):
            raise IllFormed(f"unknown feedback case {self.feedback_case!r}")
        if self.h2_objective not in ("coupling", "trace"):
            raise IllFormed(f"unknown step-one objective {self.h2_objective!r}")
        if self.controller_order is not None and self.controller_order < 1:
            raise IllFormed("controller_order must be a positive integer")

    @property
    def minimize_gamma_inf(self):
        return self.gamma_inf is None


@dataclass
class H2Protocol:
    """Outer-loop gains.

    Relative case: observer ``v_i' = (A - G C2) v_i + sum_j a_ij (B2 (u_i - u_j)
    + G (y_i - y_j))`` with ``u_2i = F v_i``.  Absolute case: local observer
    with gain ``G`` and ``u_2i = F sum_j a_ij (v_i - v_j)``.
    """

    F: np.ndarray
    G: np.ndarray
    c: float = float("nan")
    feedback_case: str = "relative"
    Q: np.ndarray | None = None
    Pbar: np.ndarray | None = None
    tau: float | None = None
    W: np.ndarray | None = None
    gamma2: float | None = None
    certified_h2: float | None = None

    def __post_init__(self):
        self.F = np.atleast_2d(np.asarray(self.F, dtype=float))
        self.G = np.asarray(self.G, dtype=float)
        if self.G.ndim == 1:
            self.G = self.G.reshape(-1, 1)


@dataclass
class HinfProtocol:
    """Residual-driven inner loop ``n_i' = Ac n_i + Bc f_i, u_inf_i = Cc n_i + Dc f_i``.

    In the absolute case the controller input is the Laplacian-weighted
    residual ``sum_j a_ij (f_i - f_j)`` instead of ``f_i``.
    """

    Ac: np.ndarray
    Bc: np.ndarray
    Cc: np.ndarray
    Dc: np.ndarray
    gamma_inf_achieved: float | None = None
    feedback_case: str = "relative"
    certified_hinf: float | None = None
    S11: np.ndarray | None = None
    S22: np.ndarray | None = None
    V1: np.ndarray | None = None
    T: np.ndarray | None = None
    T_condition: float | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("Ac", "Bc", "Cc", "Dc"):
            setattr(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        nc = self.Ac.shape[0]
        if self.Ac.shape != (nc, nc) or self.Bc.shape[0] != nc or self.Cc.shape[1] != nc:
            raise DimensionMismatch("inconsistent inner-controller dimensions")
        if self.Dc.shape != (self.Cc.shape[0], self.Bc.shape[1]):
            raise DimensionMismatch("Dc shape does not match Cc/Bc")

    @property
    def order(self):
        return self.Ac.shape[0]

    @property
    def K(self):
        """``[[Ac, Bc], [Cc, Dc]]``."""
        return np.block([[self.Ac, self.Bc], [self.Cc, self.Dc]])

    @classmethod
    def zero(cls, model, order=None, feedback_case="relative"):
        """Disconnected inner loop (stable ``Ac = -I``, all couplings zero)."""
        nc = model.n if order is None else order
        return cls(-np.eye(nc), np.zeros((nc, model.m1)), np.zeros((model.p, nc)),
                   np.zeros((model.p, model.m1)), feedback_case=feedback_case)


def _arr(x):
    return None if x is None else np.asarray(x, dtype=float).tolist()


def protocols_to_dict(h2: H2Protocol, hi: HinfProtocol | None = None):
    doc = {
        "metadata": {
            "gamma2": h2.gamma2,
            "gamma_inf_achieved": None if hi is None else hi.gamma_inf_achieved,
            "feedback_case": h2.feedback_case,
            "certified_h2": h2.certified_h2,
            "certified_hinf": None if hi is None else hi.certified_hinf,
        },
        "h2": {"F": _arr(h2.F), "G": _arr(h2.G), "c": h2.c, "tau": h2.tau,
               "Q": _arr(h2.Q), "Pbar": _arr(h2.Pbar), "W": _arr(h2.W)},
        "hinf": None,
    }
    if hi is not None:
        doc["hinf"] = {"Ac": _arr(hi.Ac), "Bc": _arr(hi.Bc), "Cc": _arr(hi.Cc), "Dc": _arr(hi.Dc),
                       "S11": _arr(hi.S11), "S22": _arr(hi.S22), "V1": _arr(hi.V1), "T": _arr(hi.T)}
    return doc


def protocols_from_dict(doc):
    if not isinstance(doc, dict) or "h2" not in doc:
        raise IllFormed("protocol document is missing field 'h2'")
    meta = doc.get("metadata", {})
    case = meta.get("feedback_case", "relative")
    h = doc["h2"]
    for k in ("F", "G"):
        if k not in h:
            raise IllFormed(f"protocol document is missing field 'h2.{k}'")

    def opt(d, k):
        return None if d.get(k) is None else np.array(d[k], dtype=float)

    h2 = H2Protocol(F=np.array(h["F"], dtype=float), G=np.array(h["G"], dtype=float),
                    c=float("nan") if h.get("c") is None else h["c"], feedback_case=case,
                    Q=opt(h, "Q"), Pbar=opt(h, "Pbar"), tau=h.get("tau"), W=opt(h, "W"),
                    gamma2=meta.get("gamma2"), certified_h2=meta.get("certified_h2"))
    hi = None
    if doc.get("hinf"):
        k = doc["hinf"]
        for name in ("Ac", "Bc", "Cc", "Dc"):
            if name not in k:
                raise IllFormed(f"protocol document is missing field 'hinf.{name}'")
        hi = HinfProtocol(Ac=np.array(k["Ac"], dtype=float), Bc=np.array(k["Bc"], dtype=float),
                          Cc=np.array(k["Cc"], dtype=float), Dc=np.array(k["Dc"], dtype=float),
                          gamma_inf_achieved=meta.get("gamma_inf_achieved"), feedback_case=case,
                          certified_hinf=meta.get("certified_hinf"),
                          S11=opt(k, "S11"), S22=opt(k, "S22"), V1=opt(k, "V1"), T=opt(k, "T"))
    return h2, hi


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise IllFormed(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc


def load_model(path) -> AgentModel:
    return AgentModel.from_dict(_read_json(path))


def save_model(model: AgentModel, path):
    Path(path).write_text(json.dumps(model.to_dict()) + "\n")


def save_protocols(path, h2: H2Protocol, hi: HinfProtocol | None = None):
    Path(path).write_text(json.dumps(protocols_to_dict(h2, hi), indent=1) + "\n")


def load_protocols(path):
    return protocols_from_dict(_read_json(path))
