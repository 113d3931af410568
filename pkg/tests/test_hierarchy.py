import numpy as np
import pytest

from hiermimo import (
    ConfigError,
    CsiQuality,
    PrecoderPartition,
    Scheme,
    build_config,
    clip_w_opt,
    draw_channel,
    draw_csi,
    evaluate_rates,
    hierarchical_precode,
    naive_distributed_precode,
    objective,
    per_tx_normalize,
    perfect_csit_precode,
    power_ratios,
    precode,
    robust_wmmse,
    solve_lambda_bisection,
    update_precoder,
    update_w_opt,
)
from hiermimo.hierarchy import precode_all
from hiermimo.metrics import mmse_filter_bank, mse_matrix, phi_diag_full, psi_diag_full
from hiermimo.wmmse import update_weights

from conftest import crandn, fd_lagrangian_grad


def random_state(rng, cfg, sigma_val=0.5):
    """A consistent (H, sigma, T, G, Omega, psi) tuple at a random iterate."""
    H = crandn(rng, cfg.M_tot, cfg.N_tot)
    sigma = np.full((cfg.M_tot, cfg.N_tot), sigma_val)
    T = crandn(rng, cfg.M_tot, cfg.d_tot)
    T *= np.sqrt(cfg.P_tot) / np.linalg.norm(T)
    G = mmse_filter_bank(cfg, H, T, sigma)
    phi = phi_diag_full(sigma, T)
    mbars = [
        mse_matrix(cfg, H, T, G.blocks[k], k, phi[cfg.rx_slices[k]])
        for k in range(cfg.K)
    ]
    Om = update_weights(mbars)
    psi = psi_diag_full(sigma, G.aggregate, Om.aggregate)
    return H, sigma, T, G, Om, psi


class TestUpdateWOpt:
    def test_empty_fixed_block_is_centralized_update(self):
        rng = np.random.default_rng(0)
        cfg = build_config({"K": 3, "P": 5.0})
        H, sigma, T, G, Om, psi = random_state(rng, cfg)
        w_in = np.zeros((0, cfg.d_tot), dtype=complex)
        T_ref, lam = update_precoder(cfg, H, G, Om, psi)
        W = update_w_opt(cfg, H, G, Om, psi, w_in, lam)
        assert np.abs(W - T_ref).max() <= 1e-12 * max(1.0, np.abs(T_ref).max())

    def test_zero_filters_positive_lambda(self):
        cfg = build_config({"K": 2, "P": 1.0})
        H = crandn(np.random.default_rng(1), 2, 2)
        from hiermimo import RxFilterBank, WeightBank

        G = RxFilterBank(blocks=(np.zeros((1, 1), complex),) * 2)
        Om = WeightBank(blocks=(np.eye(1, dtype=complex),) * 2)
        w_in = np.zeros((1, 2), dtype=complex)
        W = update_w_opt(cfg, H, G, Om, None, w_in, lam=0.5)
        assert np.all(W == 0)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_beats_random_equal_norm_blocks(self, seed):
        rng = np.random.default_rng(seed)
        cfg = build_config({"K": 3, "P": 4.0})
        H, sigma, T, G, Om, psi = random_state(rng, cfg)
        w_in = T[:1]
        budget = cfg.P_tot - np.linalg.norm(w_in) ** 2
        lam, w_opt = solve_lambda_bisection(cfg, H, G, Om, psi, w_in, budget)
        base = objective(cfg, H, np.vstack([w_in, w_opt]), G, Om, sigma)
        nrm = np.linalg.norm(w_opt)
        for _ in range(1000):
            w_try = crandn(rng, *w_opt.shape)
            w_try *= nrm / np.linalg.norm(w_try)
            val = objective(cfg, H, np.vstack([w_in, w_try]), G, Om, sigma)
            assert val >= base - 1e-9

    @pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
    def test_fixed_block_stationarity(self, seed):
        # gradient of the Lagrangian restricted to the free rows vanishes
        rng = np.random.default_rng(seed)
        cfg = build_config({"K": 3, "P": 6.0})
        H, sigma, T, G, Om, psi = random_state(rng, cfg)
        m_in = 1
        w_in = T[:m_in]
        lam = 0.37
        w_opt = update_w_opt(cfg, H, G, Om, psi, w_in, lam)
        T_new = np.vstack([w_in, w_opt])
        grad = fd_lagrangian_grad(
            cfg, H, T_new, G, Om, sigma, lam, cfg.P_tot, first_free_row=m_in
        )
        scale = fd_lagrangian_grad(
            cfg, H, T, G, Om, sigma, lam, cfg.P_tot, first_free_row=m_in
        )
        assert grad <= 1e-6 * max(1.0, scale)

    def test_psi_switch_changes_update(self):
        rng = np.random.default_rng(5)
        cfg = build_config({"K": 2, "P": 3.0})
        H, sigma, T, G, Om, psi = random_state(rng, cfg)
        w_in = T[:1]
        with_psi = update_w_opt(cfg, H, G, Om, psi, w_in, 0.2, include_psi=True)
        without = update_w_opt(cfg, H, G, Om, psi, w_in, 0.2, include_psi=False)
        assert not np.allclose(with_psi, without)
        # the displayed form equals passing no psi at all
        none_psi = update_w_opt(cfg, H, G, Om, None, w_in, 0.2, include_psi=True)
        assert np.allclose(without, none_psi)


class TestSolveLambdaBisection:
    def test_lambda_zero_feasible(self):
        rng = np.random.default_rng(1)
        cfg = build_config({"K": 2, "P": 1.0})
        H, sigma, T, G, Om, psi = random_state(rng, cfg, sigma_val=0.3)
        w_in = T[:1]
        direct = update_w_opt(cfg, H, G, Om, psi, w_in, 0.0)
        budget = 2.0 * np.linalg.norm(direct) ** 2  # above the unconstrained norm
        lam, w_opt = solve_lambda_bisection(cfg, H, G, Om, psi, w_in, budget)
        assert lam == 0.0
        assert np.allclose(w_opt, direct)

    @pytest.mark.parametrize("seed", range(5))
    def test_power_residual(self, seed):
        rng = np.random.default_rng(seed)
        cfg = build_config({"K": 3, "P": 2.0})
        H, sigma, T, G, Om, psi = random_state(rng, cfg)
        w_in = T[:1]
        budget = cfg.P_tot - np.linalg.norm(w_in) ** 2
        lam, w_opt = solve_lambda_bisection(cfg, H, G, Om, psi, w_in, budget)
        if lam > 0:
            assert abs(np.linalg.norm(w_opt) ** 2 - budget) <= 1e-8 * budget

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_lambda_matches_grid_search(self, seed):
        rng = np.random.default_rng(seed)
        cfg = build_config({"K": 3, "P": 2.0})
        H, sigma, T, G, Om, psi = random_state(rng, cfg)
        w_in = T[:1]
        budget = cfg.P_tot - np.linalg.norm(w_in) ** 2
        lam, w_opt = solve_lambda_bisection(cfg, H, G, Om, psi, w_in, budget)
        assert lam > 0
        grid = np.linspace(0.0, 2.0 * lam + 0.5, 10_000)
        res = [
            abs(
                np.linalg.norm(update_w_opt(cfg, H, G, Om, psi, w_in, g)) ** 2 - budget
            )
            for g in grid[1:]
        ]
        lam_grid = grid[1:][int(np.argmin(res))]
        assert abs(lam - lam_grid) <= grid[1] - grid[0] + 1e-12

    def test_nonpositive_budget_rejected(self):
        rng = np.random.default_rng(2)
        cfg = build_config({"K": 2, "P": 1.0})
        H, sigma, T, G, Om, psi = random_state(rng, cfg)
        with pytest.raises(ConfigError):
            solve_lambda_bisection(cfg, H, G, Om, psi, T[:1], -0.5)


class TestClipWOpt:
    def test_within_budget_unchanged(self):
        w = np.array([[1.0 + 0j]])
        w_in = np.zeros((0, 1), dtype=complex)
        out = clip_w_opt(w, w_in, 4.0)
        assert np.array_equal(out, w)

    def test_scaled_to_remaining_budget(self):
        w = np.array([[3.0 + 0j]])  # norm^2 = 9, remaining budget 4
        w_in = np.ones((1, 1), dtype=complex)  # uses 1 of p_tot = 5
        out = clip_w_opt(w, w_in, 5.0)
        assert abs(np.linalg.norm(out) - 2.0) <= 1e-12
        assert np.allclose(out / np.linalg.norm(out), w / np.linalg.norm(w))

    def test_zero_block_passthrough(self):
        w = np.zeros((2, 2), dtype=complex)
        out = clip_w_opt(w, np.zeros((0, 2), complex), 1.0)
        assert np.all(out == 0)


class TestPerTxNormalize:
    def test_scales_by_sqrt_of_max_ratio(self):
        cfg = build_config({"K": 2, "P": 1.0})
        T = np.array([[2.0 + 0j, 0.0], [0.5, 0.0]])  # block norms^2 = 4, 0.25
        out = per_tx_normalize(cfg, T)
        assert np.allclose(out, T / 2.0)
        assert np.allclose(power_ratios(cfg, out), [1.0, 0.0625])

    def test_feasible_unchanged(self):
        cfg = build_config({"K": 2, "P": 1.0})
        T = np.array([[np.sqrt(0.5) + 0j, 0.0], [np.sqrt(0.5), 0.0]])
        out = per_tx_normalize(cfg, T)
        assert out is T or np.array_equal(out, T)

    def test_argmax_preserved(self):
        rng = np.random.default_rng(3)
        cfg = build_config({"K": 3, "P": [1.0, 2.0, 0.5]})
        T = 3.0 * crandn(rng, 3, 3)
        before = int(np.argmax(power_ratios(cfg, T)))
        out = per_tx_normalize(cfg, T)
        assert int(np.argmax(power_ratios(cfg, out))) == before


class TestPrecoderPartition:
    def test_split_and_stack(self):
        rng = np.random.default_rng(4)
        cfg = build_config({"K": 3, "M": [2, 1, 2], "N": 1, "d": 1})
        T = crandn(rng, 5, 3)
        H = crandn(rng, 5, 3)
        part = PrecoderPartition.split(cfg, T, H, j=1)
        assert part.w_in.shape == (2, 3)
        assert part.w_opt.shape == (3, 3)
        assert part.h_in.shape == (2, 3)
        assert np.array_equal(part.stack(), T)


class TestHierarchicalPrecode:
    @pytest.mark.parametrize("variant", ["bisection", "clipping"])
    def test_zero_sigma_equals_centralized(self, cfg4, variant):
        rng = np.random.default_rng(5)
        ch = draw_channel(cfg4, rng)
        csi = draw_csi(cfg4, ch, CsiQuality.perfect(cfg4), rng)
        eff = hierarchical_precode(csi, cfg4, variant)
        ref = per_tx_normalize(cfg4, robust_wmmse(cfg4, ch.H, None).T)
        assert np.abs(eff.T - ref).max() <= 1e-9

    @pytest.mark.parametrize("variant", ["bisection", "clipping"])
    def test_single_tx_reduces_to_centralized(self, variant):
        cfg = build_config({"K": 1, "M": 2, "N": 2, "d": 2, "P": 4.0})
        rng = np.random.default_rng(6)
        ch = draw_channel(cfg, rng)
        quality = CsiQuality.from_block_variances(cfg, [0.25])
        csi = draw_csi(cfg, ch, quality, rng)
        eff = hierarchical_precode(csi, cfg, variant)
        ref = per_tx_normalize(
            cfg, robust_wmmse(cfg, csi.estimate(0), csi.sigma(0)).T
        )
        assert np.array_equal(eff.T, ref)

    def test_degeneracy_chain_all_schemes(self, cfg4):
        rng = np.random.default_rng(7)
        ch = draw_channel(cfg4, rng)
        csi = draw_csi(cfg4, ch, CsiQuality.perfect(cfg4), rng)
        effs = [
            perfect_csit_precode(ch, cfg4),
            naive_distributed_precode(csi, cfg4),
            hierarchical_precode(csi, cfg4, "bisection"),
            hierarchical_precode(csi, cfg4, "clipping"),
        ]
        base = effs[0].T
        for eff in effs[1:]:
            assert np.abs(eff.T - base).max() <= 1e-9

    def test_deterministic_rerun_bitwise(self, cfg4, quality4):
        rng = np.random.default_rng(8)
        ch = draw_channel(cfg4, rng)
        csi = draw_csi(cfg4, ch, quality4, rng)
        a = hierarchical_precode(csi, cfg4, "bisection")
        b = hierarchical_precode(csi, cfg4, "bisection")
        assert np.array_equal(a.T, b.T)

    @pytest.mark.parametrize("variant", ["bisection", "clipping"])
    def test_power_feasible_all_stages(self, cfg4, quality4, variant):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            ch = draw_channel(cfg4, rng)
            csi = draw_csi(cfg4, ch, quality4, rng)
            eff = hierarchical_precode(csi, cfg4, variant)
            assert not eff.flagged
            assert power_ratios(cfg4, eff.T).max() <= 1 + 1e-9

    def test_exhausted_budget_flags_trial(self, cfg4, quality4, monkeypatch):
        # the guard cannot trigger through the normal flow (stages normalize),
        # so force a stage failure and check the flagged, full-shape result
        import hiermimo.hierarchy as hier

        monkeypatch.setattr(hier, "_stage_solve", lambda *a, **k: (None, 0.0))
        rng = np.random.default_rng(20)
        ch = draw_channel(cfg4, rng)
        csi = draw_csi(cfg4, ch, quality4, rng)
        eff = hier.hierarchical_precode(csi, cfg4, "bisection")
        assert eff.flagged
        assert "budget" in eff.note
        assert eff.T.shape == (cfg4.M_tot, cfg4.d_tot)

    def test_stage_solve_rejects_spent_budget(self, cfg4, quality4):
        from hiermimo.hierarchy import _stage_solve
        from hiermimo.wmmse import SolverOptions as SO

        rng = np.random.default_rng(21)
        ch = draw_channel(cfg4, rng)
        w_in = crandn(rng, 2, 4)
        w_in *= np.sqrt(2 * cfg4.P_tot) / np.linalg.norm(w_in)
        T, lam = _stage_solve(
            cfg4, ch.H, np.zeros((4, 4)), w_in, None, "bisection", SO(), pivot=2
        )
        assert T is None

    def test_stage_reuse_for_equal_csi(self, cfg4, quality4):
        # TX 2 and TX 3 both hold the exact channel: their stages coincide,
        # and the bisection/clipping variants agree on those blocks
        rng = np.random.default_rng(9)
        ch = draw_channel(cfg4, rng)
        csi = draw_csi(cfg4, ch, quality4, rng)
        assert np.array_equal(csi.estimate(2), csi.estimate(3))
        eff = hierarchical_precode(csi, cfg4, "bisection")
        assert eff.T.shape == (4, 4)

    def test_beats_naive_on_paired_trials(self, cfg4, quality4):
        # common-random-numbers comparison at 10 dB over 1000 trials
        wins = 0
        n = 1000
        for t in range(n):
            rng = np.random.default_rng((123, t))
            ch = draw_channel(cfg4, rng)
            csi = draw_csi(cfg4, ch, quality4, rng)
            effs = precode_all(
                (Scheme.HIER_BISECTION, Scheme.NAIVE_DISTRIBUTED), ch, csi, cfg4
            )
            r_h = evaluate_rates(cfg4, ch, effs[Scheme.HIER_BISECTION].T).total
            r_n = evaluate_rates(cfg4, ch, effs[Scheme.NAIVE_DISTRIBUTED].T).total
            wins += r_h >= r_n
        assert wins >= 0.95 * n

    def test_stage_convergence_stationarity(self):
        # run one stage loop to tight convergence without normalization and
        # check the free-row Lagrangian gradient at the final bisection update
        rng = np.random.default_rng(10)
        cfg = build_config({"K": 3, "P": 5.0})
        H_hat = crandn(rng, 3, 3)
        sigma = np.full((3, 3), 0.4)
        w_in = crandn(rng, 1, 3)
        w_in *= np.sqrt(0.8 * cfg.P[0]) / np.linalg.norm(w_in)
        budget = cfg.P_tot - np.linalg.norm(w_in) ** 2
        T = np.vstack([w_in, crandn(rng, 2, 3)])
        lam = 0.0
        for _ in range(300):
            G = mmse_filter_bank(cfg, H_hat, T, sigma)
            phi = phi_diag_full(sigma, T)
            mbars = [
                mse_matrix(cfg, H_hat, T, G.blocks[k], k, phi[cfg.rx_slices[k]])
                for k in range(cfg.K)
            ]
            Om = update_weights(mbars)
            psi = psi_diag_full(sigma, G.aggregate, Om.aggregate)
            lam, w_opt = solve_lambda_bisection(cfg, H_hat, G, Om, psi, w_in, budget)
            T_new = np.vstack([w_in, w_opt])
            if np.abs(T_new - T).max() <= 1e-12:
                T = T_new
                break
            T = T_new
        grad = fd_lagrangian_grad(cfg, H_hat, T, G, Om, sigma, lam, cfg.P_tot, 1)
        T_rand = np.vstack([w_in, crandn(np.random.default_rng(11), 2, 3)])
        scale = fd_lagrangian_grad(cfg, H_hat, T_rand, G, Om, sigma, lam, cfg.P_tot, 1)
        assert grad <= 1e-6 * max(1.0, scale)


class TestNaiveDistributed:
    def test_zero_sigma_equals_centralized(self, cfg4):
        rng = np.random.default_rng(11)
        ch = draw_channel(cfg4, rng)
        csi = draw_csi(cfg4, ch, CsiQuality.perfect(cfg4), rng)
        eff = naive_distributed_precode(csi, cfg4)
        ref = perfect_csit_precode(ch, cfg4)
        assert np.array_equal(eff.T, ref.T)

    def test_perfect_tx_block_from_true_channel(self, cfg4):
        # TX with sigma = 0 contributes the block it would compute from H
        quality = CsiQuality.from_block_variances(cfg4, [0.9, 0.0, 0.0, 0.0])
        rng = np.random.default_rng(12)
        ch = draw_channel(cfg4, rng)
        csi = draw_csi(cfg4, ch, quality, rng)
        eff = naive_distributed_precode(csi, cfg4)
        ref = perfect_csit_precode(ch, cfg4)
        for j in (1, 2, 3):
            sl = cfg4.tx_slices[j]
            assert np.array_equal(eff.T[sl], ref.T[sl])

    def test_power_feasible(self, cfg4, quality4):
        rng = np.random.default_rng(13)
        ch = draw_channel(cfg4, rng)
        csi = draw_csi(cfg4, ch, quality4, rng)
        eff = naive_distributed_precode(csi, cfg4)
        assert power_ratios(cfg4, eff.T).max() <= 1 + 1e-9


class TestPrecodeAll:
    def test_matches_per_scheme_calls(self, cfg4, quality4):
        rng = np.random.default_rng(14)
        ch = draw_channel(cfg4, rng)
        csi = draw_csi(cfg4, ch, quality4, rng)
        effs = precode_all(tuple(Scheme), ch, csi, cfg4)
        for s in Scheme:
            single = precode(s, ch, csi, cfg4)
            assert np.array_equal(single.T, effs[s].T)
