"""Euler-Maruyama simulation of the complete two-loop network.

The stacked dynamics are built agent by agent from the protocol equations
(observer, feedback, residual, inner controller), without going through the
Kronecker-product assembly in :mod:`comconsensus.network`; the two
constructions therefore cross-check each other.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, IllFormed, NonpositiveStep, UnknownSeries
from .graph import Graph
from .models import AgentModel, H2Protocol, HinfProtocol

__all__ = [
    "Sinusoid",
    "SampleTable",
    "DisturbanceSpec",
    "NoiseSpec",
    "Trajectory",
    "simulate",
    "rms",
    "parse_disturbance",
    "parse_noise",
    "write_csv",
    "closed_loop_matrices",
]

DEFAULT_DT = 1e-3
DEFAULT_HORIZON = 30.0
DEFAULT_SEED = 42


@dataclass(frozen=True)
class Sinusoid:
    amplitude: float
    omega: float
    phase: float = 0.0

    def __call__(self, t):
        return self.amplitude * np.sin(self.omega * np.asarray(t) + self.phase)

    def text(self):
        ph = f"{self.phase:+g}" if self.phase else ""
        return f"{self.amplitude:g}*sin({self.omega:g}t{ph})"


@dataclass(frozen=True)
class SampleTable:
    """Piecewise-linear signal through ``(times, values)``, held constant outside."""

    times: tuple
    values: tuple

    def __post_init__(self):
        if len(self.times) != len(self.values) or len(self.times) == 0:
            raise IllFormed("sample table needs equally many times and values")
        if np.any(np.diff(self.times) <= 0):
            raise IllFormed("sample table times must increase strictly")

    def __call__(self, t):
        return np.interp(np.asarray(t, dtype=float), self.times, self.values)

    def text(self):
        return f"table[{len(self.times)}]"


@dataclass(frozen=True)
class DisturbanceSpec:
    """Deterministic disturbance ``w_i(t)``; absent ``(agent, channel)`` entries are zero.

    ``entries`` maps 1-based ``(agent, channel)`` pairs to signals.
    """

    entries: dict = field(default_factory=dict)

    @classmethod
    def zero(cls):
        return cls({})

    def scaled(self, factor):
        out = {}
        for key, s in self.entries.items():
            if isinstance(s, Sinusoid):
                out[key] = Sinusoid(factor * s.amplitude, s.omega, s.phase)
            else:
                out[key] = SampleTable(s.times, tuple(factor * np.asarray(s.values)))
        return DisturbanceSpec(out)

    def evaluate(self, times, n_agents, n_channels):
        """Array of shape ``(len(times), n_agents, n_channels)``."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        out = np.zeros((times.size, n_agents, n_channels))
        for (agent, ch), sig in self.entries.items():
            if not (1 <= agent <= n_agents and 1 <= ch <= n_channels):
                raise DimensionMismatch(
                    f"disturbance entry for agent {agent}, channel {ch} outside {n_agents} agents x {n_channels} channels"
                )
            out[:, agent - 1, ch - 1] = sig(times)
        return out

    def text(self):
        if not self.entries:
            return "zero"
        return "; ".join(f"agent={a},channel={c}:{s.text()}" for (a, c), s in sorted(self.entries.items()))


@dataclass(frozen=True)
class NoiseSpec:
    """Process/measurement noise ``w0``.

    ``gaussian``: white noise with intensity ``level`` (increments
    ``N(0, level * dt)``).  ``uniform``: samples ``level * U[0, 1)`` held over
    each step.  ``off``: no noise.
    """

    kind: str = "gaussian"
    level: float = 1.0
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if self.kind not in ("gaussian", "uniform", "off"):
            raise IllFormed(f"unknown noise kind {self.kind!r}")
        if not self.level >= 0:
            raise IllFormed("noise level must be nonnegative")

    @classmethod
    def off(cls, seed=DEFAULT_SEED):
        return cls("off", 0.0, seed)

    def text(self):
        return "off" if self.kind == "off" else f"{self.kind}:{self.level:g}"


_SIN = re.compile(
    r"^\s*(?:(?P<amp>[-+]?[\d.eE+-]+)\s*\*\s*)?sin\(\s*(?P<om>[\d.eE+-]+)\s*\*?\s*t\s*"
    r"(?P<ph>[-+]\s*[\d.eE+-]+)?\s*\)\s*$"
)


def _parse_signal(text):
    text = text.strip()
    if text in ("0", "zero"):
        return None
    mt = _SIN.match(text)
    if not mt:
        raise IllFormed(f"cannot parse disturbance signal {text!r}; expected e.g. 3*sin(110t)")
    try:
        amp = float(mt["amp"]) if mt["amp"] else 1.0
        om = float(mt["om"])
        ph = float(mt["ph"].replace(" ", "")) if mt["ph"] else 0.0
    except ValueError as exc:
        raise IllFormed(f"bad number in disturbance signal {text!r}") from exc
    return Sinusoid(amp, om, ph)


def parse_disturbance(text, n_channels=1) -> DisturbanceSpec:
    """Parse ``"agent=1,3:3*sin(110t); agent=2,4:3*sin(30t)"``.

    Each clause assigns a sinusoid to the listed agents.  A clause may name a
    single channel as ``agent=1,3,channel=2:...``; otherwise every channel of
    those agents receives the signal.  ``""``, ``"0"`` and ``"zero"`` mean
    no disturbance.
    """
    text = (text or "").strip()
    if text in ("", "0", "zero", "off"):
        return DisturbanceSpec.zero()
    entries = {}
    for clause in filter(None, (c.strip() for c in text.split(";"))):
        if ":" not in clause:
            raise IllFormed(f"disturbance clause {clause!r} lacks ':'")
        head, sig = clause.split(":", 1)
        m = re.match(r"^\s*agent\s*=\s*([\d,\s]+?)\s*(?:,\s*channel\s*=\s*(\d+))?\s*$", head)
        if not m:
            raise IllFormed(f"disturbance clause {clause!r} must start with agent=<ids>")
        agents = [int(a) for a in m.group(1).split(",") if a.strip()]
        channels = [int(m.group(2))] if m.group(2) else list(range(1, n_channels + 1))
        s = _parse_signal(sig)
        for a in agents:
            for c in channels:
                if s is None:
                    entries.pop((a, c), None)
                else:
                    entries[(a, c)] = s
    return DisturbanceSpec(entries)


def parse_noise(text, seed=DEFAULT_SEED) -> NoiseSpec:
    """Parse ``"gaussian:1"``, ``"uniform:30"`` or ``"off"``."""
    text = (text or "off").strip()
    if text == "off":
        return NoiseSpec.off(seed)
    kind, _, level = text.partition(":")
    try:
        lv = float(level) if level else 1.0
    except ValueError as exc:
        raise IllFormed(f"bad noise level in {text!r}") from exc
    return NoiseSpec(kind.strip(), lv, seed)


@dataclass
class Trajectory:
    """Sampled closed-loop signals.

    ``series[name]`` has shape ``(len(times), N, k)``.  Names: ``x``, ``v``
    (observer state, ``v_breve`` in the absolute case), ``n`` (inner
    controller state, when present), ``z``, ``f`` (residual, ``f~`` in the
    absolute case), ``u2``, ``uinf``, ``w`` and ``w0``.
    """

    times: np.ndarray
    series: dict
    metadata: dict

    def __getitem__(self, name):
        try:
            return self.series[name]
        except KeyError:
            raise UnknownSeries(f"no series named {name!r}; available: {sorted(self.series)}") from None

    def consensus_error(self):
        """``max_{i,j} ||x_i(t) - x_j(t)||`` at each sample."""
        x = self.series["x"]
        d = x[:, :, None, :] - x[:, None, :, :]
        return np.sqrt((d**2).sum(axis=-1)).max(axis=(1, 2))


CSV_SERIES = ("x", "v", "n", "z", "f", "u2", "uinf")


@dataclass
class _Signal:
    """Linear map ``s -> Ms s + Mw w + M0 w0`` for one recorded/internal signal."""

    Ms: np.ndarray
    Mw: np.ndarray
    M0: np.ndarray

    __array_ufunc__ = None

    def __add__(self, o):
        return _Signal(self.Ms + o.Ms, self.Mw + o.Mw, self.M0 + o.M0)

    def __sub__(self, o):
        return _Signal(self.Ms - o.Ms, self.Mw - o.Mw, self.M0 - o.M0)

    def __rmatmul__(self, M):
        return _Signal(M @ self.Ms, M @ self.Mw, M @ self.M0)

    def __rmul__(self, c):
        return _Signal(c * self.Ms, c * self.Mw, c * self.M0)


def closed_loop_matrices(m: AgentModel, g: Graph, h2: H2Protocol, hi: HinfProtocol | None = None):
    """Agent-by-agent construction of the full loop.

    Returns ``(layout, deriv, signals)``: ``layout`` maps state names to
    ``(offset, per_agent_size)``; ``deriv`` is the :class:`_Signal` giving the
    state derivative; ``signals[name]`` is a list over agents of
    :class:`_Signal` objects for the recorded outputs.
    """
    if hi is not None and hi.feedback_case != h2.feedback_case:
        raise IllFormed("outer and inner protocols are designed for different feedback cases")
    if h2.F.shape != (m.p, m.n) or h2.G.shape != (m.n, m.m1):
        raise DimensionMismatch("protocol gains do not match the agent model")
    if hi is not None and (hi.Bc.shape[1] != m.m1 or hi.Cc.shape[0] != m.p):
        raise DimensionMismatch("inner controller does not match the agent model")
    N = g.n_nodes
    a = g.adjacency()
    n, nc = m.n, (0 if hi is None else hi.order)
    layout = {"x": (0, n), "v": (N * n, n)}
    if hi is not None:
        layout["n"] = (2 * N * n, nc)
    ns, nw, n0 = N * (2 * n + nc), N * m.q1, N * m.q2

    def state(name, i):
        off, k = layout[name]
        Ms = np.zeros((k, ns))
        Ms[:, off + i * k: off + (i + 1) * k] = np.eye(k)
        return _Signal(Ms, np.zeros((k, nw)), np.zeros((k, n0)))

    def w(i):
        Mw = np.zeros((m.q1, nw))
        Mw[:, i * m.q1:(i + 1) * m.q1] = np.eye(m.q1)
        return _Signal(np.zeros((m.q1, ns)), Mw, np.zeros((m.q1, n0)))

    def w0(i):
        M0 = np.zeros((m.q2, n0))
        M0[:, i * m.q2:(i + 1) * m.q2] = np.eye(m.q2)
        return _Signal(np.zeros((m.q2, ns)), np.zeros((m.q2, nw)), M0)

    def zero(k):
        return _Signal(np.zeros((k, ns)), np.zeros((k, nw)), np.zeros((k, n0)))

    def lap(sig):
        """``sum_j a_ij (s_i - s_j)`` for a per-agent list of signals."""
        out = []
        for i in range(N):
            acc = zero(sig[i].Ms.shape[0])
            for j in range(N):
                if a[i, j]:
                    acc = acc + a[i, j] * (sig[i] - sig[j])
            out.append(acc)
        return out

    x = [state("x", i) for i in range(N)]
    v = [state("v", i) for i in range(N)]
    y = [m.C2 @ x[i] + m.D0 @ w0(i) + m.D1 @ w(i) for i in range(N)]
    relative = h2.feedback_case == "relative"
    if relative:
        ly = lap(y)
        f = [m.C2 @ v[i] - ly[i] for i in range(N)]
        u2 = [h2.F @ v[i] for i in range(N)]
        ctrl_in = f
    else:
        f = [m.C2 @ v[i] - y[i] for i in range(N)]
        lv = lap(v)
        u2 = [h2.F @ lv[i] for i in range(N)]
        ctrl_in = lap(f)
    if hi is not None:
        nn = [state("n", i) for i in range(N)]
        uinf = [hi.Cc @ nn[i] + hi.Dc @ ctrl_in[i] for i in range(N)]
    else:
        uinf = [zero(m.p) for _ in range(N)]
    u = [u2[i] + uinf[i] for i in range(N)]

    xd = [m.A @ x[i] + m.B0 @ w0(i) + m.B1 @ w(i) + m.B2 @ u[i] for i in range(N)]
    if relative:
        # neighbours share their applied inputs so the estimate tracks sum_j a_ij (x_i - x_j)
        lu, ly = lap(u), lap(y)
        vd = [(m.A - h2.G @ m.C2) @ v[i] + m.B2 @ lu[i] + h2.G @ ly[i] for i in range(N)]
    else:
        vd = [m.A @ v[i] + m.B2 @ u[i] + h2.G @ (y[i] - m.C2 @ v[i]) for i in range(N)]
    parts = xd + vd
    if hi is not None:
        parts += [hi.Ac @ nn[i] + hi.Bc @ ctrl_in[i] for i in range(N)]
    deriv = _Signal(np.vstack([s.Ms for s in parts]), np.vstack([s.Mw for s in parts]),
                    np.vstack([s.M0 for s in parts]))

    xbar = zero(n)
    for i in range(N):
        xbar = xbar + (1.0 / N) * x[i]
    z = [m.C1 @ (x[i] - xbar) for i in range(N)]
    signals = {"x": x, "v": v, "z": z, "f": f, "u2": u2, "uinf": uinf}
    if hi is not None:
        signals["n"] = nn
    return layout, deriv, signals


def simulate(m: AgentModel, g: Graph, h2: H2Protocol, hi: HinfProtocol | None = None, x0=None,
             w: DisturbanceSpec | None = None, w0: NoiseSpec | None = None,
             dt: float = DEFAULT_DT, T: float = DEFAULT_HORIZON) -> Trajectory:
    """Integrate the closed loop with the Euler-Maruyama scheme.

    Parameters
    ----------
    x0
        Agent initial states, shape ``(N, n)``; drawn from ``U[-1, 1]`` with
        the noise seed when omitted.  Protocol states start at zero.
    w, w0
        Disturbance and noise specifications (defaults: zero, unit Gaussian).
    dt, T
        Step and horizon; ``round(T / dt)`` steps are taken.

    Raises
    ------
    NonpositiveStep
        ``dt <= 0`` or ``T < dt``.
    DimensionMismatch
        Inconsistent initial state or protocol dimensions.
    """
    if not dt > 0:
        raise NonpositiveStep(f"step must be positive, got {dt}")
    if not T >= dt:
        raise NonpositiveStep(f"horizon {T} is shorter than the step {dt}")
    w = DisturbanceSpec.zero() if w is None else w
    w0 = NoiseSpec() if w0 is None else w0
    N = g.n_nodes
    rng = np.random.default_rng(w0.seed)
    if x0 is None:
        x0 = rng.uniform(-1.0, 1.0, size=(N, m.n))
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (N, m.n):
        raise DimensionMismatch(f"x0 has shape {x0.shape}, expected {(N, m.n)}")

    layout, deriv, signals = closed_loop_matrices(m, g, h2, hi)
    K = int(round(T / dt))
    times = dt * np.arange(K + 1)
    W = w.evaluate(times, N, m.q1).reshape(K + 1, N * m.q1)
    if w0.kind == "gaussian":
        # recorded w0 is the increment divided by dt, the usual white-noise sample
        W0 = rng.standard_normal((K + 1, N * m.q2)) * np.sqrt(w0.level / dt)
    elif w0.kind == "uniform":
        W0 = w0.level * rng.random((K + 1, N * m.q2))
    else:
        W0 = np.zeros((K + 1, N * m.q2))

    ns = deriv.Ms.shape[0]
    S = np.zeros((K + 1, ns))
    S[0, :N * m.n] = x0.ravel()
    Phi = np.eye(ns) + dt * deriv.Ms
    drive = dt * (W[:-1] @ deriv.Mw.T + W0[:-1] @ deriv.M0.T)
    s = S[0]
    for k in range(K):
        s = Phi @ s + drive[k]
        S[k + 1] = s

    series = {}
    for name, sigs in signals.items():
        Ms = np.stack([sg.Ms for sg in sigs])
        Mw = np.stack([sg.Mw for sg in sigs])
        M0 = np.stack([sg.M0 for sg in sigs])
        series[name] = (np.einsum("aks,ts->tak", Ms, S) + np.einsum("akw,tw->tak", Mw, W)
                        + np.einsum("akw,tw->tak", M0, W0))
    series["w"] = W.reshape(K + 1, N, m.q1)
    series["w0"] = W0.reshape(K + 1, N, m.q2)
    meta = {
        "dt": dt,
        "horizon": T,
        "steps": K,
        "seed": int(w0.seed),
        "feedback_case": h2.feedback_case,
        "inner_loop": hi is not None,
        "n_agents": N,
        "disturbance": w.text(),
        "noise": w0.text(),
    }
    return Trajectory(times, series, meta)


def rms(traj: Trajectory, series: str, window=None) -> float:
    """Root mean square of all entries of a series over ``window = (t0, t1)``."""
    data = traj[series]
    t = traj.times
    if window is None:
        window = (t[0], t[-1])
    t0, t1 = window
    tol = 1e-9 * max(1.0, abs(t[-1]))
    if t0 < t[0] - tol or t1 > t[-1] + tol or t1 < t0:
        raise ValueError(f"window {window} not within [{t[0]}, {t[-1]}]")
    sel = (t >= t0 - tol) & (t <= t1 + tol)
    return float(np.sqrt(np.mean(data[sel] ** 2)))


def csv_header(traj: Trajectory):
    cols = ["t"]
    for name in CSV_SERIES:
        if name in traj.series:
            _, N, k = traj.series[name].shape
            cols += [f"{name}_{i}_{j}" for i in range(1, N + 1) for j in range(1, k + 1)]
    return cols


def write_csv(traj: Trajectory, path):
    """Write the CSV trajectory and a JSON sidecar (``<path stem>.json``)."""
    path = Path(path)
    blocks = [traj.times[:, None]]
    for name in CSV_SERIES:
        if name in traj.series:
            arr = traj.series[name]
            blocks.append(arr.reshape(arr.shape[0], -1))
    data = np.hstack(blocks)
    np.savetxt(path, data, delimiter=",", header=",".join(csv_header(traj)), comments="", fmt="%.17g")
    sidecar = path.with_suffix(".json")
    sidecar.write_text(json.dumps(traj.metadata, indent=1, sort_keys=True) + "\n")
    return sidecar
