import json

import numpy as np
import pytest

from comconsensus import benchmark
from comconsensus.errors import DimensionMismatch, IllFormed, UnstableSubsystem
from comconsensus.graph import Graph, spectrum
from comconsensus.models import AgentModel, H2Protocol, HinfProtocol
from comconsensus.network import (
    assemble_combined,
    assemble_step1,
    assemble_step2,
    certify_h2,
    certify_hinf,
    decompose,
    project,
)
from comconsensus.numlin import LtiSystem, freqresp, h2_norm, hinf_norm, is_hurwitz

from oracles import (
    agentwise_step2,
    quad_h2,
    random_agent,
    random_connected_graph,
    small_controller,
    stabilizing_gains,
    sweep_hinf,
)

a, b0, b1, b2, c1, c2, d1 = -0.3, 0.7, 0.4, 1.3, 0.9, 1.1, 0.2
f_, g_ = -0.8, 0.6
SCALAR = AgentModel(A=[[a]], B0=[[b0, 0.0]], B1=[[b1]], B2=[[b2]], C1=[[c1]], C2=[[c2]],
                    D0=[[0.0, 1.0]], D1=[[d1]])


def scalar_h2(case):
    return H2Protocol(F=[[f_]], G=[[g_]], feedback_case=case)


def test_two_agent_relative_hand_expansion():
    net = assemble_step1(SCALAR, Graph.path(2), scalar_h2("relative"))
    bf, gc = b2 * f_, g_ * c2
    A = np.array([[a, 0, bf, 0],
                  [0, a, 0, bf],
                  [gc, -gc, a - gc + bf, -bf],
                  [-gc, gc, -bf, a - gc + bf]])
    B = np.array([[b0, 0, 0, 0],
                  [0, 0, b0, 0],
                  [0, g_, 0, -g_],
                  [0, -g_, 0, g_]])
    C = np.array([[c1 / 2, -c1 / 2, 0, 0], [-c1 / 2, c1 / 2, 0, 0]])
    r = net.realization
    assert np.allclose(r.A, A) and np.allclose(r.B, B) and np.allclose(r.C, C)
    assert not np.any(r.D)


def test_two_agent_absolute_hand_expansion():
    net = assemble_step1(SCALAR, Graph.path(2), scalar_h2("absolute"))
    bf, gc = b2 * f_, g_ * c2
    A = np.array([[a, 0, bf, -bf],
                  [0, a, -bf, bf],
                  [gc, 0, a - gc + bf, -bf],
                  [0, gc, -bf, a - gc + bf]])
    B = np.array([[b0, 0, 0, 0], [0, 0, b0, 0], [0, g_, 0, 0], [0, 0, 0, g_]])
    assert np.allclose(net.realization.A, A) and np.allclose(net.realization.B, B)


def test_two_agent_decomposition_substitution():
    sp = spectrum(Graph.path(2))
    fam = decompose(assemble_step1(SCALAR, Graph.path(2), scalar_h2("relative")), sp)
    assert len(fam) == 1 and fam.lambdas[0] == pytest.approx(2.0)
    lam = 2.0
    s = fam.systems[0]
    assert np.allclose(s.A, [[a, lam * b2 * f_], [g_ * c2, a - g_ * c2 + lam * b2 * f_]])
    assert np.allclose(s.B, [[b0, 0], [0, g_]])
    assert np.allclose(s.C, [[c1, 0]])


@pytest.mark.parametrize("case", ["relative", "absolute"])
def test_two_agent_step2_matches_agentwise(case):
    hi = HinfProtocol([[-0.5]], [[0.3]], [[0.2]], [[-0.4]], feedback_case=case)
    h2 = scalar_h2(case)
    net = assemble_step2(SCALAR, Graph.path(2), h2, hi)
    ref = agentwise_step2(SCALAR, Graph.path(2), h2, hi)
    w = np.array([0.1, 0.9, 4.0])
    assert np.allclose(freqresp(net.realization, w), freqresp(ref, w), atol=1e-12)
    assert np.allclose(np.sort_complex(np.linalg.eigvals(net.realization.A)),
                       np.sort_complex(np.linalg.eigvals(ref.A)), atol=1e-9)


@pytest.mark.parametrize("case", ["relative", "absolute"])
def test_random_step2_matches_agentwise(rng, case):
    for _ in range(5):
        m = random_agent(rng)
        g = random_connected_graph(rng, n_max=5)
        h2 = stabilizing_gains(m, spectrum(g).lambda2)
        h2.feedback_case = case
        hi = small_controller(rng, m, int(rng.integers(1, 3)))
        net = assemble_step2(m, g, h2, hi)
        ref = agentwise_step2(m, g, h2, hi)
        w = np.array([0.3, 1.7, 11.0])
        G1, G2 = freqresp(net.realization, w), freqresp(ref, w)
        assert np.allclose(G1, G2, atol=1e-9 * max(1.0, np.abs(G2).max()))


def test_benchmark_dimensions(model, graph, designed):
    h2, hi = designed["relative"]
    assert assemble_step1(model, graph, h2).realization.n_states == 24
    net2 = assemble_step2(model, graph, h2, hi)
    assert net2.realization.n_states == 36
    assert net2.realization.n_inputs == 6 and net2.realization.n_outputs == 6
    comb = assemble_combined(model, graph, h2, hi)
    assert comb.realization.n_inputs == 6 * (model.q1 + model.q2)


def test_slices(model, graph, designed):
    h2, hi = designed["relative"]
    net = assemble_step2(model, graph, h2, hi)
    assert net.state_slice("e") == slice(12, 24)
    assert net.state_slice("n", 2) == slice(26, 28)
    with pytest.raises(KeyError):
        net.state_slice("v")
    with pytest.raises(IndexError):
        net.state_slice("x", 7)


def test_combined_columns_regrouped(model, graph, designed):
    h2, hi = designed["absolute"]
    comb = assemble_combined(model, graph, h2, hi).realization
    step2 = assemble_step2(model, graph, h2, hi).realization
    cols = assemble_combined(model, graph, h2, hi).input_slice("w")
    assert np.allclose(comb.B[:, cols], step2.B)
    assert np.allclose(comb.A, step2.A)


def test_single_agent_zero_norms(model):
    g = Graph(1)
    h2 = benchmark.reference_h2()
    sp = spectrum(g)
    assert certify_h2(assemble_step1(model, g, h2), sp) == 0.0
    assert certify_hinf(assemble_step2(model, g, h2, benchmark.reference_hinf()), sp) == 0.0
    assert not np.any(assemble_step1(model, g, h2).realization.C)


def test_complete_graph_equal_subsystems(model):
    g = Graph.complete(3)
    h2 = stabilizing_gains(model, 3.0)
    fam = decompose(assemble_step1(model, g, h2), spectrum(g))
    assert np.allclose(fam.lambdas, [3.0, 3.0])
    assert h2_norm(fam.systems[0]) == pytest.approx(h2_norm(fam.systems[1]), rel=1e-12)


def test_benchmark_subsystems(model, graph, spec, designed):
    h2, _ = designed["relative"]
    fam = decompose(assemble_step1(model, graph, h2), spec)
    assert len(fam) == 5
    assert fam.lambdas[0] == pytest.approx(1.3820, abs=1e-3)
    assert fam.lambdas[-1] == pytest.approx(5.3028, abs=1e-3)


def test_sign_flipped_G_unstable(model, graph, spec):
    h2 = benchmark.reference_h2()
    bad = H2Protocol(F=h2.F, G=-h2.G)
    assert not is_hurwitz(model.A - bad.G @ model.C2)
    with pytest.raises(UnstableSubsystem) as exc:
        certify_h2(assemble_step1(model, graph, bad), spec)
    assert exc.value.lam in list(spec.nonzero_eigenvalues)


def test_stage_checks(model, graph, spec, designed):
    h2, hi = designed["relative"]
    with pytest.raises(IllFormed):
        certify_h2(assemble_step2(model, graph, h2, hi), spec)
    with pytest.raises(IllFormed):
        certify_hinf(assemble_step1(model, graph, h2), spec)
    with pytest.raises(DimensionMismatch):
        decompose(assemble_step1(model, graph, h2), spectrum(Graph.path(3)))


def test_dimension_mismatch(model, graph):
    with pytest.raises(DimensionMismatch):
        assemble_step1(model, graph, H2Protocol(F=np.ones((1, 3)), G=np.ones((2, 1))))
    with pytest.raises(DimensionMismatch):
        assemble_step2(model, graph, benchmark.reference_h2(),
                       HinfProtocol(-np.eye(2), np.zeros((2, 2)), np.zeros((1, 2)), np.zeros((1, 2))))


@pytest.mark.parametrize("case", ["relative", "absolute"])
def test_zeroed_inner_loop_equals_step1_through_B1(model, graph, spec, case):
    h2 = benchmark.reference_h2(case)
    zero = HinfProtocol.zero(model, feedback_case=case)
    inner = certify_hinf(assemble_step2(model, graph, h2, zero), spec)
    # outer loop alone, driven through the disturbance channels
    through_w = assemble_step1(model.replace(B0=model.B1, D0=model.D1), graph, h2)
    assert inner == pytest.approx(hinf_norm(project(through_w, spec)), rel=1e-6)
    assert inner >= certify_hinf(assemble_step2(model, graph, h2, benchmark.reference_hinf(case)), spec)


def test_zero_disturbance_gives_zero(model, graph, spec):
    m = model.replace(B1=np.zeros((2, 1)), D1=np.zeros((1, 1)))
    net = assemble_step2(m, graph, benchmark.reference_h2(), benchmark.reference_hinf())
    assert certify_hinf(net, spec) == 0.0


@pytest.mark.parametrize("case", ["relative", "absolute"])
def test_reference_gains_certify(model, graph, spec, case):
    h2 = benchmark.reference_h2(case)
    fam = decompose(assemble_step1(model, graph, h2), spec)
    assert all(is_hurwitz(s.A) for s in fam.systems)
    assert certify_h2(assemble_step1(model, graph, h2), spec) < 2.0
    hinf = certify_hinf(assemble_step2(model, graph, h2, benchmark.reference_hinf(case)), spec)
    assert hinf <= 1.5808 * 1.001


@pytest.mark.parametrize("case", ["relative", "absolute"])
def test_projection_identities_benchmark(model, graph, spec, designed, case):
    h2, hi = designed[case]
    n1 = assemble_step1(model, graph, h2)
    fam = decompose(n1, spec)
    total = sum(h2_norm(s) ** 2 for s in fam.systems)
    assert abs(certify_h2(n1, spec) ** 2 - total) <= 1e-8 * total
    assert certify_h2(n1, spec) == pytest.approx(h2_norm(project(n1, spec)), rel=1e-9)
    assert certify_h2(n1, spec) == pytest.approx(quad_h2(project(n1, spec)), rel=1e-3)
    n2 = assemble_step2(model, graph, h2, hi)
    assert certify_hinf(n2, spec) == pytest.approx(sweep_hinf(project(n2, spec)), rel=1e-4)


def test_projection_identities_random(rng):
    for _ in range(4):
        m = random_agent(rng)
        g = random_connected_graph(rng, n_max=6)
        sp = spectrum(g)
        for case in ("relative", "absolute"):
            h2 = stabilizing_gains(m, sp.lambda2)
            h2.feedback_case = case
            n1 = assemble_step1(m, g, h2)
            assert certify_h2(n1, sp) == pytest.approx(h2_norm(project(n1, sp)), rel=1e-8)
            hi = HinfProtocol.zero(m, feedback_case=case)
            n2 = assemble_step2(m, g, h2, hi)
            assert certify_hinf(n2, sp) == pytest.approx(sweep_hinf(project(n2, sp), n_points=20_000), rel=1e-4)


def test_original_coordinates_invariance(model, graph, spec, designed):
    # the projected realization and the stacked one share the transfer function on z
    h2, _ = designed["relative"]
    net = assemble_step1(model, graph, h2)
    w = np.array([0.2, 1.0, 7.0])
    full = freqresp(net.realization, w)
    proj = project(net, spec)
    U = spec.diagonalizer
    Pz, Pw = np.kron(U[:, 1:], np.eye(model.m2)), np.kron(U[:, 1:], np.eye(model.q2))
    assert np.allclose(Pz.T @ full @ Pw, freqresp(proj, w), atol=1e-12)
    # z never sees the average mode, so the dropped input columns contribute nothing
    avg = np.kron(U[:, :1], np.eye(model.q2))
    assert np.allclose(full @ avg, 0.0, atol=1e-12)
    assert np.linalg.norm(full, axis=(1, 2)) == pytest.approx(np.linalg.norm(freqresp(proj, w), axis=(1, 2)),
                                                              rel=1e-9)


def test_dump_json(tmp_path, model, graph):
    net = assemble_step1(model, graph, benchmark.reference_h2())
    net.dump_json(tmp_path / "n.json")
    doc = json.loads((tmp_path / "n.json").read_text())
    assert doc["stage"] == "step1" and doc["n_agents"] == 6
    assert np.array_equal(np.array(doc["A"]), net.realization.A)
    assert doc["block_map"]["states"] == [["x", 2], ["v", 2]]
    back = LtiSystem(doc["A"], doc["B"], doc["C"], doc["D"])
    assert back.n_states == 24
