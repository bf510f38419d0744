import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperricci import Hypergraph
from hyperricci.curvature import forman_curvature
from hyperricci.diffusion import (
    DiffusionConfig,
    DivergenceError,
    StabilityError,
    analytic_kprime,
    analytic_provider,
    apply_operator,
    assemble_matrices,
    diffuse,
    euler_step,
    node_update_direction,
    rk4_step,
    row_sums,
    stability_bound,
)
from hyperricci.flow import attribute_weight, dirichlet_energy
from hyperricci.synthgen import SbmConfig, generate_sbm

from conftest import hypergraph_with_features, random_hypergraph, unit_rows
from oracles import dense_incidence, direction_loop, kprime_straight, s_matrix_dense


def constant(kp):
    return lambda h, X, t: kp


class TestConfig:
    @pytest.mark.parametrize("kw", [{"tau": 0.0}, {"T": -1}, {"mode": "implicit"},
                                    {"epsilon_denominator": 0.0}, {"epsilon_denominator": 1.5}])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            DiffusionConfig(**kw)


class TestAnalyticKprime:
    def test_zero_curvature(self, toy, rng):
        X = unit_rows(rng, toy.n, 3)
        np.testing.assert_array_equal(analytic_kprime(toy, X, np.zeros(3), np.ones(3)), 0.0)

    def test_identical_features_finite(self, toy):
        # m_ie is x_i scaled by sum_j (d_i d_j)^-1/2 / S_e, so the gap is 1 - that share squared
        X = np.tile([[1.0, 0.0]], (toy.n, 1))
        kp, per_node = analytic_kprime(toy, X, np.ones(3), np.ones(3), 1e-3, per_node=True)
        assert np.all(np.isfinite(kp))
        isd = 1 / np.sqrt(toy.node_degree)
        k = 0
        for e, nodes in enumerate(toy.edges):
            S_e = sum(isd[list(nodes)]) ** 2
            for i in nodes:
                share = isd[i] * sum(isd[list(nodes)]) / S_e
                assert per_node[k] == pytest.approx(-1 / len(nodes) / ((1 - share**2) * S_e), rel=1e-12)
                k += 1

    def test_floor_applies(self, toy):
        X = np.tile([[1.0, 0.0]], (toy.n, 1))
        kp, per_node = analytic_kprime(toy, X, np.ones(3), np.ones(3), 1.0, per_node=True)
        S_e = np.add.reduceat((1 / np.sqrt(toy.node_degree))[toy.edge_nodes], toy.edge_ptr[:-1]) ** 2
        np.testing.assert_allclose(kp, -1 / toy.edge_size / S_e, rtol=1e-12)

    def test_against_straight_implementation(self, rng):
        for _ in range(20):
            h = random_hypergraph(rng, n_range=(4, 12), m_range=(2, 6))
            X = unit_rows(rng, h.n, 3)
            kappa = rng.standard_normal(h.m)
            w = rng.uniform(0.1, 2.0, h.m)
            kp, per_node = analytic_kprime(h, X, kappa, w, 1e-3, per_node=True)
            ref_node, ref_edge = kprime_straight(h, X, kappa, w, 1e-3)
            np.testing.assert_allclose(per_node, ref_node, rtol=1e-10, atol=1e-12)
            np.testing.assert_allclose(kp, ref_edge, rtol=1e-10, atol=1e-12)

    @given(hypergraph_with_features(d=3))
    def test_sign_opposes_curvature(self, hx):
        h, X = hx
        w = attribute_weight(h, X)
        kappa = forman_curvature(h, w)
        kp = analytic_kprime(h, X, kappa, w)
        nz = np.abs(kappa) > 1e-12
        assert np.all(np.sign(kp[nz]) == -np.sign(kappa[nz]))
        assert np.all(kp[~nz] == 0)


class TestDirection:
    def test_fixed_point(self, toy):
        X = np.tile([[0.0, 1.0, 0.0]], (toy.n, 1))
        for use_cosine in (True, False):
            assert np.all(node_update_direction(toy, X, [1.0, -2.0, 0.5], use_cosine) == 0.0)

    def test_fixed_point_per_component(self):
        h = Hypergraph(5, [[0, 1], [1, 2], [3, 4]])
        X = np.array([[1.0, 0.0]] * 3 + [[0.0, 1.0]] * 2)
        assert np.all(node_update_direction(h, X, [1.0, 2.0, 3.0]) == 0.0)
        assert np.all(apply_operator(h, X, [1.0, 2.0, 3.0]) == 0.0)

    @settings(max_examples=50)
    @given(hypergraph_with_features(d=4), st.integers(0, 2**31 - 1))
    def test_orthogonal_to_features(self, hx, seed):
        h, X = hx
        kp = np.random.default_rng(seed).standard_normal(h.m)
        D = node_update_direction(h, X, kp)
        assert np.max(np.abs(np.einsum("ij,ij->i", X, D))) < 1e-9

    @pytest.mark.parametrize("use_cosine", [True, False])
    def test_loop_matrix_and_factored_agree(self, rng, use_cosine):
        for _ in range(50):
            h = random_hypergraph(rng, n_range=(4, 50))
            X = unit_rows(rng, h.n, 3)
            kp = rng.standard_normal(h.m)
            _, _, F = assemble_matrices(h, X, kp, use_cosine)
            loop = node_update_direction(h, X, kp, use_cosine)
            # the per-node sum equals F X; the stepper moves along -F X
            np.testing.assert_allclose(F @ X, loop, atol=1e-9)
            np.testing.assert_allclose(apply_operator(h, X, kp, use_cosine), F @ X, atol=1e-9)
            np.testing.assert_allclose(loop, direction_loop(h, X, kp, use_cosine), atol=1e-9)


class TestMatrices:
    def test_single_edge_unit_kprime(self):
        h = Hypergraph(6, [list(range(6))])
        S, _, _ = assemble_matrices(h, np.eye(6), [1.0])
        np.testing.assert_allclose(S.toarray(), np.ones((6, 6)))

    def test_dense_oracle(self, rng):
        for _ in range(10):
            h = random_hypergraph(rng, n_range=(3, 9), m_range=(2, 6))
            kp = rng.standard_normal(h.m)
            S, _, _ = assemble_matrices(h, unit_rows(rng, h.n, 2), kp)
            np.testing.assert_allclose(S.toarray(), s_matrix_dense(h, kp), atol=1e-14)

    def test_symmetric(self, rng):
        h = random_hypergraph(rng)
        S, C, _ = assemble_matrices(h, unit_rows(rng, h.n, 3), rng.standard_normal(h.m))
        assert abs(S - S.T).max() < 1e-12
        assert abs(C - C.T).max() < 1e-12

    def test_cosine_support_is_edge_pairs(self, rng):
        h = random_hypergraph(rng)
        _, C, _ = assemble_matrices(h, unit_rows(rng, h.n, 3), np.ones(h.m))
        H = dense_incidence(h)
        np.testing.assert_array_equal(C.toarray() != 0, (H @ H.T) > 0)

    def test_identical_rows(self, rng):
        h = random_hypergraph(rng)
        X = np.tile(unit_rows(rng, 1, 3), (h.n, 1))
        kp = rng.uniform(0.1, 1.0, h.m)
        S, C, F = assemble_matrices(h, X, kp)
        np.testing.assert_allclose(C.data, 1.0)
        L = sp.diags(np.asarray(S.sum(axis=1)).ravel()) - S
        np.testing.assert_allclose(F.toarray(), L.toarray(), atol=1e-14)
        np.testing.assert_allclose(F @ X, 0.0, atol=1e-14)

    def test_row_sums(self, rng):
        h = random_hypergraph(rng)
        kp = rng.standard_normal(h.m)
        np.testing.assert_allclose(row_sums(h, kp), s_matrix_dense(h, kp).sum(axis=1), atol=1e-13)


class TestStabilityBound:
    def test_arithmetic(self):
        cert = stability_bound(np.array([[1.0, 1.0], [0.5, 0.5]]), tau_used=0.4)
        assert cert.max_row_sum == 2.0 and cert.tau_bound == 0.5 and cert.stable

    def test_row_sum_vector(self):
        cert = stability_bound(np.array([2.0, 1.0]), tau_used=0.6)
        assert cert.tau_bound == 0.5 and cert.stable is False

    def test_inapplicable(self):
        cert = stability_bound(np.array([-1.0, 0.0]), tau_used=0.1)
        assert not cert.applicable and cert.tau_bound is None and cert.stable is None
        assert cert.to_dict()["stable"] is None

    @given(hypergraph_with_features(d=2), st.floats(0.01, 100.0))
    def test_scaling(self, hx, c):
        h, X = hx
        kp = np.linspace(0.1, 1.0, h.m)
        b1 = stability_bound(assemble_matrices(h, X, kp)[0]).tau_bound
        bc = stability_bound(assemble_matrices(h, X, c * kp)[0]).tau_bound
        assert bc == pytest.approx(b1 / c, rel=1e-10)

    @settings(max_examples=100)
    @given(hypergraph_with_features(d=3), st.integers(0, 2**31 - 1))
    def test_no_growth_without_cosine(self, hx, seed):
        # without the cosine factor F = diag(S 1) - S with S PSD, so its spectrum sits in [0, max row sum]
        h, X = hx
        kp = np.random.default_rng(seed).uniform(0.0, 2.0, h.m)
        tau = stability_bound(row_sums(h, kp)).tau_bound
        Y = euler_step(X, lambda Z: apply_operator(h, Z, kp, use_cosine=False), tau, renormalize=False)
        assert np.linalg.norm(Y) <= np.linalg.norm(X) * (1 + 1e-12)

    @settings(max_examples=100)
    @given(hypergraph_with_features(d=3), st.integers(0, 2**31 - 1))
    def test_cosine_step_growth_identity(self, hx, seed):
        # with unit rows and the cosine factor, <X, F X> = 0, so the raw step grows by exactly tau^2 |F X|^2
        h, X = hx
        kp = np.random.default_rng(seed).uniform(0.0, 2.0, h.m)
        FX = apply_operator(h, X, kp)
        assert abs(np.sum(X * FX)) < 1e-9
        tau = stability_bound(row_sums(h, kp)).tau_bound
        Y = X - tau * FX
        lhs = np.linalg.norm(Y) ** 2 - np.linalg.norm(X) ** 2
        assert lhs == pytest.approx(tau**2 * np.linalg.norm(FX) ** 2, abs=1e-9)

    def test_renormalized_step_keeps_norm(self, rng):
        h = random_hypergraph(rng)
        X = unit_rows(rng, h.n, 3)
        kp = rng.uniform(0.0, 1.0, h.m)
        tau = stability_bound(row_sums(h, kp)).tau_bound
        Y = euler_step(X, lambda Z: apply_operator(h, Z, kp), tau)
        assert np.linalg.norm(Y) == pytest.approx(np.linalg.norm(X), rel=1e-12)


class TestEuler:
    def test_zero_operator(self, rng):
        X = unit_rows(rng, 5, 3)
        np.testing.assert_array_equal(euler_step(X, np.zeros((5, 5)), 0.3, renormalize=False), X)

    def test_identical_rows_fixed(self, toy):
        X = np.tile([[0.0, 0.6, 0.8]], (toy.n, 1))
        Y = euler_step(X, lambda Z: apply_operator(toy, Z, [1.0, -1.0, 2.0]), 0.2)
        np.testing.assert_allclose(Y, X, atol=1e-15)

    def test_nan_aborts_with_step(self):
        with pytest.raises(DivergenceError, match="step 7"):
            euler_step(np.ones((2, 2)), np.array([[np.inf, 0.0], [0.0, 0.0]]), 0.1, step=7)

    def test_rejects_bad_tau(self):
        with pytest.raises(ValueError):
            euler_step(np.ones((2, 2)), np.eye(2), 0.0)

    def test_richardson(self, toy, rng):
        # fixed K' so the right-hand side is a smooth function of X
        X = unit_rows(rng, toy.n, 3)
        kp = np.array([0.4, 0.7, 0.3])
        op = lambda Z: apply_operator(toy, Z, kp)
        errs = []
        for tau in (0.04, 0.02, 0.01):
            one = euler_step(X, op, tau, renormalize=False)
            two = euler_step(euler_step(X, op, tau / 2, renormalize=False), op, tau / 2, renormalize=False)
            errs.append(np.linalg.norm(one - two))
        ratios = np.array(errs[:-1]) / np.array(errs[1:])
        np.testing.assert_allclose(ratios, 4.0, rtol=0.05)

    def test_rk4_matches_euler_limit(self, toy, rng):
        X = unit_rows(rng, toy.n, 3)
        kp = np.array([0.4, 0.7, 0.3])
        op = lambda Z: apply_operator(toy, Z, kp)
        ref = rk4_step(X, op, 0.1)
        Y = X
        for _ in range(1000):
            Y = euler_step(Y, op, 1e-4, renormalize=False)
        assert np.linalg.norm(Y - ref) < 1e-4
        # fourth order: halving the step shrinks the one-step gap to a 2^5 smaller value
        half = rk4_step(rk4_step(X, op, 0.05), op, 0.05)
        assert np.linalg.norm(half - ref) < 1e-6


class TestDiffuse:
    def test_zero_steps(self, toy, rng):
        X = unit_rows(rng, toy.n, 3)
        res = diffuse(toy, X, DiffusionConfig(T=0))
        assert len(res.trajectory) == 1
        np.testing.assert_allclose(res.final, X, atol=1e-15)
        assert res.energy_report is None and res.certificates == []

    def test_refuses_unstable_tau(self, toy, rng):
        X = unit_rows(rng, toy.n, 3)
        kp = np.ones(3)
        bound = stability_bound(row_sums(toy, kp)).tau_bound
        with pytest.raises(StabilityError, match="exceeds the stability bound"):
            diffuse(toy, X, DiffusionConfig(tau=2 * bound, T=2), constant(kp))
        res = diffuse(toy, X, DiffusionConfig(tau=2 * bound, T=2), constant(kp), force=True)
        assert res.certificates[0].stable is False

    def test_divergence_guard(self, toy, rng):
        X = unit_rows(rng, toy.n, 3)
        cfg = DiffusionConfig(tau=10.0, T=50, use_cosine=False, renormalize_each_step=False)
        with pytest.raises(DivergenceError):
            diffuse(toy, X, cfg, constant(-np.ones(3)))

    def test_energy_recomputed_from_snapshots(self, rng):
        h = random_hypergraph(rng, n_range=(10, 30))
        res = diffuse(h, rng.standard_normal((h.n, 4)), DiffusionConfig(tau=0.05, T=6),
                      force=True, snapshot_steps=(0, 3, 6))
        assert sorted(res.snapshots) == [0, 3, 6]
        for t, X in res.snapshots.items():
            assert res.energy[t] == dirichlet_energy(h, X)
            np.testing.assert_array_equal(X, res.trajectory[t])
        for X, E in zip(res.trajectory, res.energy):
            assert E == pytest.approx(dirichlet_energy(h, X), rel=1e-14)

    def test_unit_rows_kept(self, rng):
        h = random_hypergraph(rng)
        res = diffuse(h, rng.standard_normal((h.n, 3)), DiffusionConfig(tau=0.05, T=5), force=True)
        for X in res.trajectory:
            np.testing.assert_allclose(np.linalg.norm(X, axis=1), 1.0, atol=1e-9)

    def test_keep_trajectory_off(self, toy, rng):
        res = diffuse(toy, unit_rows(rng, toy.n, 3), DiffusionConfig(tau=0.01, T=5), force=True,
                      keep_trajectory=False)
        assert len(res.trajectory) == 1 and len(res.energy) == 6

    def test_provider_matches_analytic(self, toy, rng):
        X = unit_rows(rng, toy.n, 3)
        cfg = DiffusionConfig(tau=0.01, T=1)
        w = attribute_weight(toy, X)
        expected = analytic_kprime(toy, X, forman_curvature(toy, w), w)
        np.testing.assert_array_equal(analytic_provider(cfg)(toy, X, 0), expected)

    def test_fixed_positive_kprime_without_cosine_smooths(self, rng):
        for _ in range(30):
            h = random_hypergraph(rng)
            kp = rng.uniform(0.1, 2.0, h.m)
            tau = stability_bound(row_sums(h, kp)).tau_bound
            res = diffuse(h, unit_rows(rng, h.n, 3), DiffusionConfig(tau=tau, T=30, use_cosine=False),
                          constant(kp))
            assert np.all(np.diff(res.energy) <= 1e-12)

    @pytest.mark.slow
    def test_sbm_energy_floor_vs_mean_baseline(self):
        ds = generate_sbm(SbmConfig(n_per_class=500, edges=200, alpha=2, seed=0))
        h = ds.hypergraph
        res = diffuse(h, ds.features, DiffusionConfig(tau=0.05, T=40))
        rep = res.energy_report
        assert np.all(res.energy >= rep.B2) and rep.B2 > 0
        kp = np.ones(h.m)
        tau = stability_bound(row_sums(h, kp)).tau_bound
        base = diffuse(h, ds.features, DiffusionConfig(tau=tau, T=40, use_cosine=False, renormalize_each_step=False),
                       constant(kp))
        assert np.all(np.diff(base.energy) <= 0)
        assert base.energy[-1] < 1e-3 * base.energy[0]
        assert res.energy[-1] > 0.5 * res.energy[0]
