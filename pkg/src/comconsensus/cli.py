"""Command-line front end: ``spectrum``, ``synth``, ``simulate`` and ``repro``.

Reports are ``key=value`` lines on stdout.  Exit codes:

0  success
1  a reproduction target failed, or a numerical failure
2  unreadable or ill-formed input
3  disconnected graph
4  infeasible H2 or H-infinity budget
5  invalid simulation arguments (step, horizon, dimensions)
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from . import benchmark
from .errors import (
    ConsensusError,
    DimensionMismatch,
    DisconnectedGraph,
    IllFormed,
    InfeasibleBudget,
    NonpositiveStep,
    NotDetectable,
    NotStabilizable,
)
from .graph import is_connected, load_graph, spectrum
from .models import SynthesisConfig, load_model, load_protocols, save_protocols
from .network import assemble_step1, assemble_step2, certify_h2, certify_hinf, decompose
from .numlin import is_hurwitz
from . import sim, synthesis

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_DISCONNECTED, EXIT_BUDGET, EXIT_SIM = 0, 1, 2, 3, 4, 5

BENCHMARK_DISTURBANCE = "agent=1,3:3*sin(110t); agent=2,4:3*sin(30t); agent=5,6:3*sin(60t)"


def _fmt(x):
    return f"{x:.6g}"


def _mat(M):
    return json.dumps(np.asarray(M).tolist())


def _emit(out, key, value):
    print(f"{key}={value}", file=out or sys.stdout)


def _load_inputs(args):
    try:
        g = load_graph(args.graph)
        m = load_model(args.model) if getattr(args, "model", None) else None
    except OSError as exc:
        raise IllFormed(f"cannot read input: {exc}") from exc
    return m, g


def cmd_spectrum(args, out=None):
    try:
        g = load_graph(args.graph)
    except OSError as exc:
        raise IllFormed(f"cannot read {args.graph}: {exc}") from exc
    _emit(out, "n", g.n_nodes)
    if not is_connected(g):
        _emit(out, "connected", "false")
        raise DisconnectedGraph(f"graph in {args.graph} is disconnected")
    sp = spectrum(g)
    _emit(out, "connected", "true")
    _emit(out, "lambda2", f"{sp.lambda2:.4f}")
    _emit(out, "lambdaN", f"{sp.lambdaN:.4f}")
    _emit(out, "eigenvalues", ",".join(f"{v:.4f}" for v in sp.eigenvalues))
    return EXIT_OK


def _config(args):
    gamma_inf = None if args.gamma_inf is None else args.gamma_inf
    return SynthesisConfig(gamma2=args.gamma2, gamma_inf=gamma_inf, controller_order=args.order,
                           feedback_case=args.case, h2_objective=args.h2_objective)


def _design(m, g, cfg):
    rel = cfg.feedback_case == "relative"
    h2 = (synthesis.design_h2_relative if rel else synthesis.design_h2_absolute)(m, g, cfg)
    hi = (synthesis.design_hinf_relative if rel else synthesis.design_hinf_absolute)(m, g, h2, cfg)
    return h2, hi


def cmd_synth(args, out=None):
    m, g = _load_inputs(args)
    cfg = _config(args)
    t0 = time.perf_counter()
    h2, hi = _design(m, g, cfg)
    _emit(out, "feedback_case", cfg.feedback_case)
    _emit(out, "F", _mat(h2.F))
    _emit(out, "G", _mat(h2.G))
    _emit(out, "c", _fmt(h2.c))
    _emit(out, "certified_h2", _fmt(h2.certified_h2))
    _emit(out, "gamma2", _fmt(cfg.gamma2))
    _emit(out, "h2_budget_met", str(h2.certified_h2 < cfg.gamma2).lower())
    _emit(out, "Ac", _mat(hi.Ac))
    _emit(out, "Bc", _mat(hi.Bc))
    _emit(out, "Cc", _mat(hi.Cc))
    _emit(out, "Dc", _mat(hi.Dc))
    _emit(out, "gamma_inf_achieved", _fmt(hi.gamma_inf_achieved))
    _emit(out, "certified_hinf", _fmt(hi.certified_hinf))
    hinf_ok = cfg.gamma_inf is None or hi.certified_hinf < cfg.gamma_inf
    _emit(out, "hinf_budget_met", str(hinf_ok).lower())
    _emit(out, "elapsed_s", f"{time.perf_counter() - t0:.3f}")
    if args.out:
        save_protocols(args.out, h2, hi)
        _emit(out, "protocol_file", args.out)
    return EXIT_OK if hinf_ok and h2.certified_h2 < cfg.gamma2 else EXIT_BUDGET


def cmd_simulate(args, out=None):
    m, g = _load_inputs(args)
    try:
        h2, hi = load_protocols(args.protocol)
    except OSError as exc:
        raise IllFormed(f"cannot read {args.protocol}: {exc}") from exc
    if args.no_inner:
        hi = None
    w = sim.parse_disturbance(args.disturbance, m.q1)
    w0 = sim.parse_noise(args.noise, args.seed)
    traj = sim.simulate(m, g, h2, hi, w=w, w0=w0, dt=args.dt, T=args.horizon)
    sidecar = sim.write_csv(traj, args.out)
    _emit(out, "csv", args.out)
    _emit(out, "metadata", str(sidecar))
    _emit(out, "steps", traj.metadata["steps"])
    _emit(out, "consensus_error_final", _fmt(traj.consensus_error()[-1]))
    _emit(out, "residual_final", _fmt(float(np.abs(traj["f"][-1]).max())))
    half = (traj.times[-1] / 2, traj.times[-1])
    _emit(out, "rms_z_second_half", _fmt(sim.rms(traj, "z", half)))
    return EXIT_OK


def _repro_rows(case, reference, seeds):
    """Targets for one feedback case: ``(name, value, target, passed)``."""
    m, g = benchmark.six_agent_model(), benchmark.six_agent_graph()
    rows = []
    sp = spectrum(g)
    rows.append(("lambda2", sp.lambda2, "1.3820 +- 1e-3", abs(sp.lambda2 - benchmark.LAMBDA2) <= 1e-3))
    rows.append(("lambdaN", sp.lambdaN, "5.3028 +- 1e-3", abs(sp.lambdaN - benchmark.LAMBDA_N) <= 1e-3))

    cfg = SynthesisConfig(gamma2=benchmark.GAMMA2, feedback_case=case)
    h2, hi = _design(m, g, cfg)
    rows.append((f"{case}.certified_h2", h2.certified_h2, "< 2", h2.certified_h2 < benchmark.GAMMA2))
    gmin = hi.gamma_inf_achieved
    rows.append((f"{case}.gamma_inf_min", gmin, "1.5808 +- 10%",
                 abs(gmin - benchmark.GAMMA_INF_MIN) <= 0.1 * benchmark.GAMMA_INF_MIN))

    if reference:
        ph2, phi = benchmark.reference_h2(case), benchmark.reference_hinf(case)
        fam = decompose(assemble_step1(m, g, ph2), sp)
        stable = all(is_hurwitz(s.A) for s in fam.systems)
        rows.append((f"{case}.reference_gains_stable", float(stable), "all 5 subsystems Hurwitz", stable))
        v = certify_h2(assemble_step1(m, g, ph2), sp)
        rows.append((f"{case}.reference_gains_h2", v, "< 2", v < benchmark.GAMMA2))
        v = certify_hinf(assemble_step2(m, g, ph2, phi), sp)
        rows.append((f"{case}.reference_controller_hinf", v, "<= 1.5808*1.001",
                     v <= benchmark.GAMMA_INF_MIN * 1.001))

    quiet = sim.NoiseSpec.off(sim.DEFAULT_SEED)
    tr = sim.simulate(m, g, h2, hi, w0=quiet)
    fmax = float(np.abs(tr["f"][-1]).max())
    rows.append((f"{case}.residual_at_T", fmax, "< 1e-6", fmax < 1e-6))

    dist = sim.parse_disturbance(BENCHMARK_DISTURBANCE, m.q1)
    worst = -np.inf
    for seed in range(seeds):
        noise = sim.NoiseSpec.off(seed)
        a = sim.rms(sim.simulate(m, g, h2, hi, w=dist, w0=noise), "z", (15.0, 30.0))
        b = sim.rms(sim.simulate(m, g, h2, None, w=dist, w0=noise), "z", (15.0, 30.0))
        worst = max(worst, a / b)
    rows.append((f"{case}.rms_ratio_inner_vs_outer", worst, "< 1 for every seed", worst < 1.0))
    return rows


def cmd_repro(args, out=None):
    cases = ("relative", "absolute") if args.case == "both" else (args.case,)
    all_ok = True
    seen = set()
    for case in cases:
        for name, value, target, ok in _repro_rows(case, args.reference_gains, args.seeds):
            if name in seen:
                continue
            seen.add(name)
            all_ok &= bool(ok)
            _emit(out, name, f"{_fmt(value)} target={target} status={'PASS' if ok else 'FAIL'}")
    _emit(out, "overall", "PASS" if all_ok else "FAIL")
    return EXIT_OK if all_ok else EXIT_FAIL


def build_parser():
    p = argparse.ArgumentParser(prog="comconsensus", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("spectrum", help="Laplacian spectrum of a graph file")
    s.add_argument("graph")
    s.set_defaults(func=cmd_spectrum)

    s = sub.add_parser("synth", help="design both protocol steps")
    s.add_argument("model")
    s.add_argument("graph")
    s.add_argument("--gamma2", type=float, required=True)
    grp = s.add_mutually_exclusive_group()
    grp.add_argument("--gamma-inf", type=float, default=None)
    grp.add_argument("--minimize-gamma-inf", action="store_true")
    s.add_argument("--case", choices=("relative", "absolute"), default="relative")
    s.add_argument("--order", type=int, default=None, help="inner controller order (default n)")
    s.add_argument("--h2-objective", choices=("coupling", "trace"), default="coupling")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("simulate", help="simulate a designed protocol")
    s.add_argument("model")
    s.add_argument("graph")
    s.add_argument("protocol")
    s.add_argument("--dt", type=float, default=sim.DEFAULT_DT)
    s.add_argument("--horizon", type=float, default=sim.DEFAULT_HORIZON)
    s.add_argument("--seed", type=int, default=sim.DEFAULT_SEED)
    s.add_argument("--disturbance", default="")
    s.add_argument("--noise", default="gaussian:1")
    s.add_argument("--no-inner", action="store_true", help="drop the inner loop")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("repro", help="reproduce the six-agent benchmark")
    s.add_argument("--paper-gains", "--reference-gains", dest="reference_gains", action="store_true",
                   help="also verify the published reference gains")
    s.add_argument("--case", choices=("relative", "absolute", "both"), default="relative")
    s.add_argument("--seeds", type=int, default=10)
    s.set_defaults(func=cmd_repro)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DisconnectedGraph as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DISCONNECTED
    except InfeasibleBudget as exc:
        print(f"error: {exc}", file=sys.stderr)
        _emit(sys.stdout, "failed_inequality", exc.inequality)
        return EXIT_BUDGET
    except (NonpositiveStep, DimensionMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SIM if args.command == "simulate" else EXIT_INPUT
    except IllFormed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NotDetectable, NotStabilizable) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ConsensusError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
