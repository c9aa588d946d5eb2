import numpy as np
import pytest
from numpy.testing import assert_allclose

from fedcs import protocols as proto
from fedcs.bpdn import SolverOptions
from fedcs.codec import SensingConfig, compress
from fedcs.ml import ModelSpec, synthetic_blobs
from fedcs.protocols import (
    HyperParams,
    ServerState,
    calibrate_sensitivity,
    clip,
    client_update_cs,
    client_update_freq,
    client_update_rnd,
    client_update_std,
    cohort_size,
    decode_mean,
    local_delta,
    make_weights,
    mask_headroom,
    payload_length,
    privatize,
    round_index_set,
    sample_clients,
    server_round_cs,
    server_round_cs_dp,
    server_round_freq,
    server_round_freq_dp,
    server_round_rnd,
    server_round_rnd_dp,
    server_round_std,
    server_round_std_dp,
)
from fedcs.secagg import derive_modulus, gen_masks

HP = HyperParams(eta=0.3, c=0.1, t_cl=5, t_gd=2, batch_size=8)


def tiny_task(seed=0):
    rng = np.random.default_rng(seed)
    model = ModelSpec(layers=(6, 4, 2))
    ds = synthetic_blobs(48, 6, 2, rng, active_dims=4)
    w = model.init_weights(rng)
    return model, ds, w


class TestCohorts:
    def test_sample_size_matches_ratio(self):
        idx = sample_clients(6000, 1 / 60, np.random.default_rng(0))
        assert idx.size == 100
        assert np.unique(idx).size == 100
        idx = sample_clients(5011, 100 / 5011, np.random.default_rng(1))
        assert idx.size == 100

    def test_full_participation(self):
        idx = sample_clients(7, 1.0, np.random.default_rng(0))
        assert np.array_equal(np.sort(idx), np.arange(7))

    def test_cohort_size_rounds(self):
        assert cohort_size(6000, 1 / 60) == 100
        assert cohort_size(10, 0.25) == 2

    def test_vanishing_cohort_rejected(self):
        with pytest.raises(ValueError):
            sample_clients(100, 1e-9, np.random.default_rng(0))

    def test_bad_ratio_rejected(self):
        with pytest.raises(ValueError):
            sample_clients(10, 0.0, np.random.default_rng(0))
        with pytest.raises(ValueError):
            sample_clients(10, 1.5, np.random.default_rng(0))


class TestClipping:
    def test_inside_ball_untouched(self):
        v = np.array([0.3, -0.4])
        assert_allclose(clip(v, 1.0), v)

    def test_outside_ball_rescaled(self):
        v = np.array([3.0, 4.0])
        out = clip(v, 1.0)
        assert np.linalg.norm(out) == pytest.approx(1.0)
        assert_allclose(out, v / 5.0)

    def test_nonpositive_bound_rejected(self):
        with pytest.raises(ValueError):
            clip(np.ones(2), 0.0)

    def test_median_calibration(self):
        assert calibrate_sensitivity([0.1, 0.3, 0.5]) == pytest.approx(0.3)
        assert calibrate_sensitivity([0.1, 0.3, 0.5, 0.7]) == pytest.approx(0.4)
        with pytest.raises(ValueError):
            calibrate_sensitivity([])


class TestWeights:
    def test_data_size_mode(self):
        w = make_weights([10, 30], "data_size")
        assert_allclose(w, [0.25, 0.75])

    def test_uniform_mode(self):
        assert_allclose(make_weights([10, 30, 5], "uniform"), [1 / 3] * 3)

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            make_weights([1, 2], "softmax")


class TestRoundIndexSet:
    def test_full_rate_is_identity(self):
        assert np.array_equal(round_index_set(10, 10, seed=3), np.arange(10))

    def test_sorted_unique_subset(self):
        idx = round_index_set(1000, 100, seed=7)
        assert idx.size == 100
        assert np.array_equal(idx, np.unique(idx))

    def test_seed_dependence(self):
        a = round_index_set(1000, 100, seed=1)
        b = round_index_set(1000, 100, seed=1)
        c = round_index_set(1000, 100, seed=2)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)


class TestPayloads:
    def test_entries_per_scheme(self):
        assert payload_length("fl-std", 100, 10) == 100
        assert payload_length("fl-std-dp", 100, 10) == 100
        for scheme in ("fl-cs", "fl-cs-dp", "fl-rnd", "fl-rnd-dp", "fl-freq", "fl-freq-dp"):
            assert payload_length(scheme, 100, 10) == 10
        with pytest.raises(ValueError):
            payload_length("fl-top-k", 100, 10)

    def test_mask_headroom_covers_noise(self):
        hp = HyperParams(eta=0.3, c=0.1, t_cl=5, t_gd=2, batch_size=8, s=2.0, sigma=1.5)
        assert mask_headroom(hp, 9) == pytest.approx(2.0 * (1 + 6 * 1.5 / 3))
        quiet = HyperParams(eta=0.3, c=0.1, t_cl=5, t_gd=2, batch_size=8, s=2.0, sigma=0.0)
        assert mask_headroom(quiet, 9) == pytest.approx(2.0)


class TestClientUpdates:
    def test_local_delta_is_training_difference(self):
        model, ds, w = tiny_task()
        delta = local_delta(model, w, ds.X, ds.y, HP, np.random.default_rng(5))
        from fedcs.ml import sgd
        trained = sgd(model, ds.X, ds.y, w, HP.t_gd, HP.eta, HP.batch_size,
                      np.random.default_rng(5))
        assert_allclose(delta, trained - w, atol=1e-12)

    def test_std_update_is_local_delta(self):
        model, ds, w = tiny_task()
        a = client_update_std(model, w, ds.X, ds.y, HP, np.random.default_rng(5))
        b = local_delta(model, w, ds.X, ds.y, HP, np.random.default_rng(5))
        assert np.array_equal(a, b)

    def test_cs_update_composes_delta_and_codec(self):
        model, ds, w = tiny_task()
        cfg = SensingConfig.from_ratio(n=w.size, r=0.5, P=2, shuffle_seed=1)
        payload = client_update_cs(model, w, ds.X, ds.y, HP, cfg,
                                   np.random.default_rng(5))
        delta = local_delta(model, w, ds.X, ds.y, HP, np.random.default_rng(5))
        assert_allclose(payload, compress(delta, cfg), atol=1e-12)

    def test_rnd_update_is_a_slice(self):
        model, ds, w = tiny_task()
        idx = round_index_set(w.size, 8, seed=2)
        payload = client_update_rnd(model, w, ds.X, ds.y, HP, idx,
                                    np.random.default_rng(5))
        delta = local_delta(model, w, ds.X, ds.y, HP, np.random.default_rng(5))
        assert np.array_equal(payload, delta[idx])

    def test_freq_update_keeps_leading_coefficients(self):
        from fedcs.codec import freq_compress
        model, ds, w = tiny_task()
        payload = client_update_freq(model, w, ds.X, ds.y, HP, 8,
                                     np.random.default_rng(5))
        delta = local_delta(model, w, ds.X, ds.y, HP, np.random.default_rng(5))
        assert_allclose(payload, freq_compress(delta, 8), atol=1e-12)


class TestPrivatize:
    def dp_hp(self, s=1.0, sigma=0.0):
        return HyperParams(eta=0.3, c=0.1, t_cl=5, t_gd=2, batch_size=8,
                           s=s, sigma=sigma)

    def test_noiseless_is_just_clipping(self, rng):
        payload = rng.normal(size=32) * 5
        out = privatize(payload, self.dp_hp(s=1.0), 4, np.random.default_rng(0))
        assert_allclose(out, clip(payload, 1.0), atol=1e-12)

    def test_noise_scales_with_cohort(self):
        hp = self.dp_hp(s=2.0, sigma=3.0)
        k = 16
        draws = np.stack([
            privatize(np.zeros(4000), hp, k, np.random.default_rng(t))
            for t in range(4)
        ])
        want = hp.s * hp.sigma / np.sqrt(k)
        assert draws.std() == pytest.approx(want, rel=0.05)

    def test_missing_parameters_rejected(self):
        with pytest.raises(ValueError):
            privatize(np.zeros(4), HP, 4, np.random.default_rng(0))
        with pytest.raises(ValueError):
            privatize(np.zeros(4), self.dp_hp(), 0, np.random.default_rng(0))

    def test_masked_payload_decodes(self):
        hp = self.dp_hp(s=2.0, sigma=0.0)  # wide enough that nothing clips
        k = 3
        ring = derive_modulus(mask_headroom(hp, k), k)
        masks = gen_masks(k, 8, ring, mask_seed=7)
        vs = [np.full(8, 0.25), np.full(8, -0.5), np.full(8, 0.125)]
        shares = [
            privatize(v, hp, k, np.random.default_rng(i), mask=m, ring=ring)
            for i, (v, m) in enumerate(zip(vs, masks))
        ]
        mean = decode_mean(shares, ring)
        assert_allclose(mean, np.full(8, -0.125 / 3), atol=2 ** -19)

    def test_plaintext_decode_mean(self):
        updates = [np.array([1.0, 3.0]), np.array([2.0, 5.0])]
        assert_allclose(decode_mean(updates, None), [1.5, 4.0])


class TestServerRounds:
    def test_std_moves_by_weighted_mean(self):
        state = ServerState.initial(np.zeros(4))
        ups = [np.array([1.0, 0, 0, 0]), np.array([0, 1.0, 0, 0])]
        out = server_round_std(state, ups, weights=np.array([0.25, 0.75]))
        assert_allclose(out.w, [0.25, 0.75, 0, 0])
        assert out.round_index == 1
        assert np.all(state.w == 0)  # caller's state untouched

    def test_rnd_scatters_into_index_set(self):
        state = ServerState.initial(np.zeros(6))
        idx = np.array([1, 4])
        out = server_round_rnd(state, [np.array([0.5, -0.5])], idx)
        assert_allclose(out.w, [0, 0.5, 0, 0, -0.5, 0])

    def test_rnd_payload_length_checked(self):
        state = ServerState.initial(np.zeros(6))
        with pytest.raises(ValueError):
            server_round_rnd(state, [np.ones(3)], np.array([1, 4]))

    def test_freq_full_rate_matches_std(self, rng):
        w0 = rng.normal(size=16)
        ups = [rng.normal(size=16) for _ in range(3)]
        from fedcs.codec import freq_compress
        coeff_ups = [freq_compress(u, 16) for u in ups]
        a = server_round_std(ServerState.initial(w0.copy()), ups)
        b = server_round_freq(ServerState.initial(w0.copy()), coeff_ups)
        assert np.abs(a.w - b.w).max() <= 1e-9

    def test_freq_constant_update_survives_compression(self):
        w0 = np.zeros(12)
        const = np.full(12, 0.4)
        from fedcs.codec import freq_compress
        out = server_round_freq(ServerState.initial(w0), [freq_compress(const, 2)])
        assert_allclose(out.w, const, atol=1e-12)

    def cs_setup(self, n=24, r=1.0, seed=0):
        cfg = SensingConfig.from_ratio(n=n, r=r, P=2, shuffle_seed=seed)
        hp = HyperParams(eta=0.3, c=0.1, t_cl=5, t_gd=2, batch_size=8,
                         eta_g=0.7, rho=0.9)
        state = ServerState.initial(np.zeros(n), m=cfg.m)
        return cfg, hp, state

    def test_cs_full_rate_tiny_penalty_applies_mean(self, rng):
        cfg, hp, state = self.cs_setup()
        ups = [compress(rng.normal(size=24), cfg) for _ in range(3)]
        out, report = server_round_cs(state, ups, hp, cfg, SolverOptions(lam=1e-12))
        from fedcs.codec import lowpass_reconstruct
        want = hp.eta_g * lowpass_reconstruct(np.mean(ups, axis=0), cfg)
        assert np.abs(out.w - want).max() <= 1e-8
        assert np.abs(out.e).max() <= 1e-8
        assert len(report.chunks) == cfg.P

    def test_cs_momentum_recurrence(self, rng):
        cfg, hp, state = self.cs_setup()
        y1 = [compress(rng.normal(size=24), cfg)]
        y2 = [compress(rng.normal(size=24), cfg)]
        s1, _ = server_round_cs(state, y1, hp, cfg, SolverOptions(lam=1e-12))
        s2, _ = server_round_cs(s1, y2, hp, cfg, SolverOptions(lam=1e-12))
        assert_allclose(s1.u, y1[0], atol=1e-12)
        assert_allclose(s2.u, hp.rho * s1.u + y2[0], atol=1e-12)
        assert s2.round_index == 2

    def test_cs_error_feedback_identity(self, rng):
        # e' must equal the unexplained measurement residual, every round
        cfg = SensingConfig.from_ratio(n=24, r=0.25, P=2, shuffle_seed=3)
        hp = HyperParams(eta=0.3, c=0.1, t_cl=5, t_gd=2, batch_size=8,
                         eta_g=0.7, rho=0.9)
        opts = SolverOptions(lam=0.05)
        state = ServerState.initial(np.zeros(24), m=cfg.m)
        for _ in range(4):
            ups = [compress(rng.normal(size=24), cfg) for _ in range(2)]
            y_mean = np.mean(ups, axis=0)
            u_next = hp.rho * state.u + y_mean
            v = hp.eta_g * u_next + state.e
            out, _ = server_round_cs(state, ups, hp, cfg, opts)
            reconstructed = out.w - state.w
            assert np.abs(out.e - (v - compress(reconstructed, cfg))).max() <= 1e-12
            state = out

    def test_dp_rounds_with_zero_noise_match_uniform_mean(self, rng):
        n = 16
        hp = HyperParams(eta=0.3, c=0.1, t_cl=5, t_gd=2, batch_size=8,
                         eta_g=0.7, rho=0.9, s=50.0, sigma=0.0)
        noise = lambda t: np.random.default_rng(t)
        deltas = [rng.normal(size=n) for _ in range(3)]

        plain = server_round_std(ServerState.initial(np.zeros(n)), deltas)
        private = server_round_std_dp(
            ServerState.initial(np.zeros(n)),
            [privatize(d, hp, 3, noise(i)) for i, d in enumerate(deltas)])
        assert np.abs(plain.w - private.w).max() <= 1e-9

        idx = round_index_set(n, 4, seed=1)
        sliced = [d[idx] for d in deltas]
        plain = server_round_rnd(ServerState.initial(np.zeros(n)), sliced, idx)
        private = server_round_rnd_dp(
            ServerState.initial(np.zeros(n)),
            [privatize(p, hp, 3, noise(i)) for i, p in enumerate(sliced)], idx)
        assert np.abs(plain.w - private.w).max() <= 1e-9

        from fedcs.codec import freq_compress
        coeffs = [freq_compress(d, 4) for d in deltas]
        plain = server_round_freq(ServerState.initial(np.zeros(n)), coeffs)
        private = server_round_freq_dp(
            ServerState.initial(np.zeros(n)),
            [privatize(c, hp, 3, noise(i)) for i, c in enumerate(coeffs)])
        assert np.abs(plain.w - private.w).max() <= 1e-9

        cfg = SensingConfig.from_ratio(n=n, r=1.0, P=2, shuffle_seed=0)
        comp = [compress(d, cfg) for d in deltas]
        opts = SolverOptions(lam=1e-12)
        hp_cs = HyperParams(eta=0.3, c=0.1, t_cl=5, t_gd=2, batch_size=8,
                            eta_g=0.7, rho=0.9, s=50.0, sigma=0.0)
        plain, _ = server_round_cs(
            ServerState.initial(np.zeros(n), m=cfg.m), comp, hp_cs, cfg, opts)
        private, _ = server_round_cs_dp(
            ServerState.initial(np.zeros(n), m=cfg.m),
            [privatize(c, hp_cs, 3, noise(i)) for i, c in enumerate(comp)],
            hp_cs, cfg, opts)
        assert np.abs(plain.w - private.w).max() <= 1e-9

    def test_masked_zero_noise_matches_plaintext_mean(self):
        hp = HyperParams(eta=0.3, c=0.1, t_cl=5, t_gd=2, batch_size=8,
                         s=1.0, sigma=0.0)
        k, dim = 4, 16
        r = np.random.default_rng(3)
        deltas = [clip(r.normal(size=dim), hp.s) for _ in range(k)]
        ring = derive_modulus(mask_headroom(hp, k), k)
        masks = gen_masks(k, dim, ring, mask_seed=2)
        shares = [
            privatize(d, hp, k, np.random.default_rng(i), mask=m, ring=ring)
            for i, (d, m) in enumerate(zip(deltas, masks))
        ]
        plain = server_round_std(ServerState.initial(np.zeros(dim)), deltas)
        masked = server_round_std_dp(ServerState.initial(np.zeros(dim)), shares,
                                     ring=ring)
        assert np.abs(plain.w - masked.w).max() <= 2 ** -19

    def test_aggregate_noise_standard_deviation(self):
        # summed client noise must carry std S*sigma per coordinate
        hp = HyperParams(eta=0.3, c=0.1, t_cl=5, t_gd=2, batch_size=8,
                         s=1.5, sigma=2.0)
        k, dim = 8, 10 ** 4
        shares = [
            privatize(np.zeros(dim), hp, k, np.random.default_rng(100 + i))
            for i in range(k)
        ]
        out = server_round_std_dp(ServerState.initial(np.zeros(dim)), shares)
        summed = out.w * k
        assert summed.std() == pytest.approx(hp.s * hp.sigma, rel=0.05)


def test_server_state_initial_shapes():
    st = ServerState.initial(np.zeros(5), m=3)
    assert st.w.shape == (5,)
    assert st.u.shape == (3,)
    assert st.e.shape == (3,)
    assert st.round_index == 0
