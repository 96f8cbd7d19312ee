import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from comconsensus.errors import IllFormed, Infeasible
from comconsensus.lmi import LmiProblem, schur_embed, solve_sdp, strict_shift
from comconsensus.synthesis import filter_gain, h2_lmi_blocks


def rand_sym(rng, m):
    R = rng.standard_normal((m, m))
    return 0.5 * (R + R.T)


def feasible_instance(rng, m, n_vars):
    """Blocks built around a known point ``theta*`` with ``F(theta*) = S > 0``."""
    theta = rng.uniform(-2, 2, n_vars)
    Fs = [rand_sym(rng, m) for _ in range(n_vars)]
    R = rng.standard_normal((m, m))
    S = R @ R.T + 0.1 * np.eye(m)
    F0 = S - sum(t * F for t, F in zip(theta, Fs))
    return F0, Fs, theta


def infeasible_instance(rng, m, n_vars):
    """Blocks with a separating ``Z >= 0``: ``tr(Z F_k) = 0`` and ``tr(Z F0) = -1``."""
    R = rng.standard_normal((m, max(1, m // 2)))
    Z = R @ R.T
    Z /= np.trace(Z)
    zz = np.sum(Z * Z)
    Fs = []
    for _ in range(n_vars):
        F = rand_sym(rng, m)
        Fs.append(F - np.sum(Z * F) / zz * Z)
    F0 = rand_sym(rng, m)
    F0 -= (np.sum(Z * F0) + 1.0) / zz * Z
    return F0, Fs, Z


def oracle_margin(blocks, theta):
    return min(np.linalg.eigvalsh(F0 + np.tensordot(theta, np.array(Fs), axes=1))[0] for F0, Fs in blocks)


def test_minimize_scalar_lower_bound():
    sol = solve_sdp(LmiProblem.from_blocks([([[-1.0]], [[[1.0]]])], objective=[1.0]))
    assert sol.theta[0] == pytest.approx(1.0, abs=1e-6)
    assert sol.objective_value == pytest.approx(1.0, abs=1e-6)
    assert sol.margin >= -1e-9


def test_maximize_on_psd_boundary():
    F0 = np.eye(2)
    F1 = np.array([[0.0, 1.0], [1.0, 0.0]])
    sol = solve_sdp(LmiProblem.from_blocks([(F0, [F1])], objective=[-1.0]))
    assert sol.theta[0] == pytest.approx(1.0, abs=1e-6)


def test_constant_negative_block_infeasible():
    with pytest.raises(Infeasible) as exc:
        solve_sdp(LmiProblem.from_blocks([(-np.eye(2), [np.zeros((2, 2))])]))
    assert exc.value.certificate


def test_feasibility_only_returns_interior_point():
    sol = solve_sdp(LmiProblem.from_blocks([([[-1.0]], [[[1.0]]]), ([[3.0]], [[[-1.0]]])]))
    assert 1.0 <= sol.theta[0] <= 3.0
    assert sol.objective_value is None


def test_schur_embed_scalar():
    # a = -1, c1 = 1, b2 = 0: [[2p, p], [p, 1]] >= 0 iff 0 <= p <= 2
    prob = LmiProblem()
    p = prob.scalar("p")
    a, c1 = np.array([[-1.0]]), np.array([[1.0]])
    blk = schur_embed(p @ a.T + a @ p, p @ c1.T)
    assert np.allclose(blk.value([0.7]), [[1.4, 0.7], [0.7, 1.0]])
    prob.require_psd(blk)
    prob.minimize(-1.0 * p)
    assert solve_sdp(prob).theta[0] == pytest.approx(2.0, abs=1e-6)


def test_schur_embed_zero_cross_is_block_diagonal():
    prob = LmiProblem()
    P = prob.symmetric(2)
    A = np.array([[-1.0, 3.0], [0.0, -2.0]])
    blk = schur_embed(P @ A.T + A @ P, np.zeros((2, 1)))
    v = blk.value(np.arange(1, 4, dtype=float))
    assert np.allclose(v[:2, 2:], 0) and np.allclose(v[2:, 2:], 1)


def test_schur_embed_shape_errors():
    with pytest.raises(IllFormed):
        schur_embed(np.eye(2), np.ones((3, 1)))
    with pytest.raises(IllFormed):
        schur_embed(np.eye(2), np.ones((2, 1)), gain=np.eye(2))


def test_benchmark_blocks_affine_and_symmetric(model, rng):
    Q, _ = filter_gain(model)
    prob = LmiProblem()
    Pbar = prob.symmetric(model.n, "P")
    tau = prob.scalar("tau")
    W = prob.symmetric(model.m1, "W")
    for blk in h2_lmi_blocks(model, Q, Pbar, tau, W):
        t1, t2 = rng.standard_normal((2, prob.n_vars))
        a = rng.uniform()
        v1, v2 = blk.value(t1), blk.value(t2)
        assert np.allclose(v1, v1.T)
        assert np.allclose(blk.value(a * t1 + (1 - a) * t2), a * v1 + (1 - a) * v2)
        # coefficient matrices are the finite differences
        z = np.zeros(prob.n_vars)
        for k in range(prob.n_vars):
            e = z.copy()
            e[k] = 1.0
            assert np.allclose(blk.value(e) - blk.value(z), blk.coeffs.get(k, 0.0))


def test_affine_products():
    prob = LmiProblem()
    t = prob.scalar()
    M = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.allclose((t * M).value([2.0]), 2 * M)
    assert np.allclose((M @ (t * np.eye(2))).value([3.0]), 3 * M)
    assert np.allclose((t * M).trace().value([1.0]), [[5.0]])
    X = prob.symmetric(2)
    with pytest.raises(IllFormed):
        X * M
    with pytest.raises(IllFormed):
        X @ X
    with pytest.raises(IllFormed):
        X + np.eye(3)


def test_strict_constraints_are_shifted():
    prob = LmiProblem()
    t = prob.scalar()
    prob.require_pd(t)
    prob.minimize(t)
    sol = solve_sdp(prob)
    assert sol.theta[0] == pytest.approx(strict_shift([[0.0]]), rel=1e-3)
    assert sol.theta[0] > 0


@pytest.mark.parametrize("blocks", [
    [(np.ones((2, 3)), [np.ones((2, 3))])],
    [(np.array([[0.0, 1.0], [0.0, 0.0]]), [np.eye(2)])],
    [(np.eye(2), [np.eye(3)])],
    [(np.eye(2), [np.eye(2), np.eye(2)]), (np.eye(2), [np.eye(2)])],
])
def test_ill_formed(blocks):
    with pytest.raises(IllFormed):
        LmiProblem.from_blocks(blocks)


def test_ill_formed_objective_and_empty():
    with pytest.raises(IllFormed):
        LmiProblem.from_blocks([(np.eye(1), [np.eye(1)])], objective=[1.0, 2.0])
    with pytest.raises(IllFormed):
        solve_sdp(LmiProblem())
    prob = LmiProblem()
    with pytest.raises(IllFormed):
        prob.require_psd(prob.full(2, 3))


def test_dump_json(tmp_path):
    F0, Fs = np.eye(2), [np.array([[0.0, 1.0], [1.0, 0.0]])]
    prob = LmiProblem.from_blocks([(F0, Fs)], objective=[-1.0])
    prob.dump_json(tmp_path / "p.json")
    doc = json.loads((tmp_path / "p.json").read_text())
    assert doc["n_vars"] == 1 and doc["objective"] == [-1.0]
    assert np.allclose(doc["blocks"][0]["F0"], F0) and np.allclose(doc["blocks"][0]["F"][0], Fs[0])


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 12), st.integers(1, 20), st.integers(0, 2**32 - 1))
def test_constructed_feasible(m, n_vars, seed):
    rng = np.random.default_rng(seed)
    F0, Fs, _ = feasible_instance(rng, m, n_vars)
    sol = solve_sdp(LmiProblem.from_blocks([(F0, Fs)]))
    scale = max(1.0, np.linalg.norm(F0 + np.tensordot(sol.theta, np.array(Fs), axes=1), 2))
    assert oracle_margin([(F0, Fs)], sol.theta) >= -1e-9 * scale
    assert sol.margin >= -1e-9 * scale


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 12), st.integers(1, 20), st.integers(0, 2**32 - 1))
def test_constructed_infeasible(m, n_vars, seed):
    rng = np.random.default_rng(seed)
    F0, Fs, Z = infeasible_instance(rng, m, n_vars)
    # the separating direction proves infeasibility for every theta
    theta = rng.standard_normal(n_vars)
    assert np.sum(Z * (F0 + np.tensordot(theta, np.array(Fs), axes=1))) == pytest.approx(-1.0)
    with pytest.raises(Infeasible):
        solve_sdp(LmiProblem.from_blocks([(F0, Fs)]))


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 6), st.integers(1, 5), st.floats(1e-3, 1.0), st.integers(0, 2**32 - 1))
def test_relaxation_monotone(m, n_vars, delta, seed):
    rng = np.random.default_rng(seed)
    F0, Fs, _ = feasible_instance(rng, m, n_vars)
    c = rng.standard_normal(n_vars)
    # box rows |theta_k| <= 3 keep the objective bounded
    box = []
    for k in range(n_vars):
        e = np.zeros(n_vars)
        e[k] = 1.0
        box.append((np.diag([3.0, 3.0]), [np.diag([-x, x]) for x in e]))
    tight = solve_sdp(LmiProblem.from_blocks([(F0, Fs)] + box, objective=c))
    loose = solve_sdp(LmiProblem.from_blocks([(F0 + delta * np.eye(m), Fs)] + box, objective=c))
    assert loose.objective_value <= tight.objective_value + 1e-6 * max(1.0, abs(tight.objective_value))
