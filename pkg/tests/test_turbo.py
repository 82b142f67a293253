import numpy as np
import pytest

from turbowdm.constellation import build_constellation
from turbowdm.fec import Interleaver, LdpcCode
from turbowdm.metrics import effective_snr
from turbowdm.turbo import (
    ChannelTapTrack,
    SlidingWindowConfig,
    TurboError,
    lmmse_equalize,
    nlms_tap_preconvergence,
    rls_estimate,
    turbo_loop,
)
from turbowdm.waveform import build_frame


@pytest.fixture(scope="module")
def qpsk():
    return build_constellation(4)


@pytest.fixture(scope="module")
def code():
    return LdpcCode.bundled("rate45_n2048")


def mimo_channel():
    """Static 2x2 ISI channel taps, main tap at the decision delay."""
    h = np.zeros((2, 2, 3), dtype=complex)
    h[0, 0] = [0.3, 0.85, 0.2j]
    h[1, 1] = [0.25j, 0.9, 0.15]
    h[0, 1] = [0.05, 0.1, 0.02]
    h[1, 0] = [0.0, 0.08j, 0.05]
    return h


def apply_channel(s, h, delay, noise_var=0.0, rng=None):
    """r_o[i] = sum_{p,n} conj(h[o,p,n]) s_p[i+d-n] + AWGN."""
    m = s.shape[1]
    lp1 = h.shape[2]
    r = np.zeros((2, m), dtype=complex)
    for i in range(m):
        idx = i + delay - np.arange(lp1)
        v = np.zeros((2, lp1), dtype=complex)
        ok = (idx >= 0) & (idx < m)
        v[:, ok] = s[:, idx[ok]]
        r[:, i] = np.einsum("opn,pn->o", np.conj(h), v)
    if noise_var:
        r += np.sqrt(noise_var / 2.0) * (
            rng.standard_normal(r.shape) + 1j * rng.standard_normal(r.shape)
        )
    return r


def qpsk_stream(m, seed):
    rng = np.random.default_rng(seed)
    re = rng.integers(0, 2, (2, m)) * 2 - 1
    im = rng.integers(0, 2, (2, m)) * 2 - 1
    return (re + 1j * im) / np.sqrt(2.0)


def encoded_frame(c, code, n_blocks, seed, pilot_rate=0.05):
    rng = np.random.default_rng(seed)
    streams = []
    for _ in range(2):
        chunks = []
        for b in range(n_blocks):
            info = rng.integers(0, 2, code.k).astype(np.uint8)
            chunks.append(Interleaver(code.n, b).interleave(code.encode(info)))
        streams.append(np.concatenate(chunks))
    return build_frame(
        np.stack(streams), c, pilot_rate, n_blocks, seed=seed, symbol_rate=32e9
    )


def static_track(h, m):
    return ChannelTapTrack(
        taps={
            "xx": np.tile(h[0, 0], (m, 1)),
            "xy": np.tile(h[0, 1], (m, 1)),
            "yx": np.tile(h[1, 0], (m, 1)),
            "yy": np.tile(h[1, 1], (m, 1)),
        }
    )


class TestConfig:
    def test_window_and_delay(self):
        cfg = SlidingWindowConfig(n1=1, n2=3, channel_memory=2)
        assert cfg.n_window == 5
        assert cfg.delay == 1

    def test_invalid_window(self):
        with pytest.raises(TurboError):
            SlidingWindowConfig(n1=-1)

    def test_invalid_forgetting(self):
        with pytest.raises(TurboError):
            SlidingWindowConfig(forgetting=1.5)


class TestRls:
    def test_matches_batch_least_squares(self):
        # lam = 1: RLS solves the same normal equations as batch LS
        cfg = SlidingWindowConfig(forgetting=1.0, rls_delta=0.01)
        m = 3000
        s = qpsk_stream(m, 0)
        h = mimo_channel()
        rng = np.random.default_rng(1)
        r = apply_channel(s, h, cfg.delay, 1e-4, rng)
        _, state, _ = rls_estimate(r, s, cfg)
        vmat = np.zeros((m, 6), dtype=complex)
        for i in range(m):
            idx = i + cfg.delay - np.arange(3)
            v = np.zeros((2, 3), dtype=complex)
            ok = (idx >= 0) & (idx < m)
            v[:, ok] = s[:, idx[ok]]
            vmat[i] = v.ravel()
        for o in range(2):
            g, *_ = np.linalg.lstsq(vmat, r[o], rcond=None)
            np.testing.assert_allclose(
                state.h[o], np.conj(g).reshape(2, 3), atol=2e-3
            )

    def test_static_channel_convergence(self):
        cfg = SlidingWindowConfig()
        m = 4000
        s = qpsk_stream(m, 2)
        h = mimo_channel()
        rng = np.random.default_rng(3)
        sn2 = 0.02
        r = apply_channel(s, h, cfg.delay, sn2, rng)
        _, state, err = rls_estimate(r, s, cfg)
        assert np.max(np.abs(state.h - h)) < 0.05
        tail = np.mean(np.abs(err[:, -500:]) ** 2)
        assert abs(tail - sn2) < 0.5 * sn2

    def test_tracks_rotating_channel(self):
        # slow common phase rotation: prediction error stays near the
        # noise floor instead of growing with the accumulated phase
        cfg = SlidingWindowConfig()
        m = 4000
        s = qpsk_stream(m, 4)
        h = mimo_channel()
        rng = np.random.default_rng(5)
        sn2 = 0.01
        rot = np.exp(1j * 2.0 * np.pi * 5e-5 * np.arange(m))
        r_static = apply_channel(s, h, cfg.delay, 0.0)
        r = r_static * rot + np.sqrt(sn2 / 2.0) * (
            rng.standard_normal((2, m)) + 1j * rng.standard_normal((2, m))
        )
        _, _, err = rls_estimate(r, s, cfg)
        tail = np.mean(np.abs(err[:, -1000:]) ** 2)
        assert tail < 5.0 * sn2

    def test_skips_uninformative_regressors(self):
        # long stretches of zero means must not destabilize the estimator
        cfg = SlidingWindowConfig()
        m = 3000
        s = qpsk_stream(m, 6)
        means = s.copy()
        means[:, 500:2500] = 0.0
        h = mimo_channel()
        rng = np.random.default_rng(7)
        r = apply_channel(s, h, cfg.delay, 0.01, rng)
        _, state, err = rls_estimate(r, means, cfg)
        assert np.all(np.isfinite(state.h))
        assert np.all(np.isfinite(state.sigma))
        assert np.mean(np.abs(err[:, -200:]) ** 2) < 0.1

    def test_nlms_preconvergence_near_truth(self):
        cfg = SlidingWindowConfig()
        m = 4000
        s = qpsk_stream(m, 8)
        h = mimo_channel()
        rng = np.random.default_rng(9)
        r = apply_channel(s, h, cfg.delay, 0.01, rng)
        h0 = nlms_tap_preconvergence(r, s, cfg, np.ones(m, dtype=bool))
        assert np.max(np.abs(h0 - h)) < 0.1


class TestLmmse:
    def test_scalar_wiener_closed_form(self):
        # unit memoryless channel with sigma_n^2 = 1: w = mu = 0.5, nu2 = 0.25
        m = 64
        s = qpsk_stream(m, 10)
        cfg = SlidingWindowConfig(n1=0, n2=0, channel_memory=0)
        ones = np.ones((m, 1), dtype=complex)
        zero = np.zeros((m, 1), dtype=complex)
        track = ChannelTapTrack(
            taps={"xx": ones, "xy": zero, "yx": zero.copy(), "yy": ones.copy()}
        )
        s_hat, mu, nu2 = lmmse_equalize(
            s, track, np.zeros((2, m), complex), np.ones((2, m)), cfg, 1.0
        )
        np.testing.assert_allclose(s_hat, 0.5 * s, atol=1e-12)
        np.testing.assert_allclose(mu, 0.5, atol=1e-12)
        np.testing.assert_allclose(nu2, 0.25, atol=1e-12)

    def test_genie_priors_reach_matched_filter_bound(self):
        cfg = SlidingWindowConfig()
        m = 4000
        s = qpsk_stream(m, 11)
        h = mimo_channel()
        rng = np.random.default_rng(12)
        sn2 = 0.02
        r = apply_channel(s, h, cfg.delay, sn2, rng)
        track = static_track(h, m)
        s_hat, mu, _ = lmmse_equalize(r, track, s, np.zeros((2, m)), cfg, sn2)
        for p in range(2):
            mfb_db = 10.0 * np.log10(np.sum(np.abs(h[:, p, :]) ** 2) / sn2)
            snr_db = effective_snr(s[p], s_hat[p] / mu[p])
            assert abs(snr_db - mfb_db) < 0.3

    def test_priors_improve_over_blind(self):
        cfg = SlidingWindowConfig()
        m = 4000
        s = qpsk_stream(m, 13)
        h = mimo_channel()
        rng = np.random.default_rng(14)
        sn2 = 0.02
        r = apply_channel(s, h, cfg.delay, sn2, rng)
        track = static_track(h, m)
        blind, mu0, _ = lmmse_equalize(
            r, track, np.zeros((2, m), complex), np.ones((2, m)), cfg, sn2
        )
        genie, mu1, _ = lmmse_equalize(r, track, s, np.zeros((2, m)), cfg, sn2)
        for p in range(2):
            a = effective_snr(s[p], blind[p] / mu0[p])
            b = effective_snr(s[p], genie[p] / mu1[p])
            assert b > a + 1.0

    def test_phase_equivariance(self):
        cfg = SlidingWindowConfig()
        m = 500
        s = qpsk_stream(m, 15)
        h = mimo_channel()
        rng = np.random.default_rng(16)
        r = apply_channel(s, h, cfg.delay, 0.02, rng)
        track = static_track(h, m)
        base, mu, nu2 = lmmse_equalize(
            r, track, np.zeros((2, m), complex), np.ones((2, m)), cfg, 0.02
        )
        rot = np.exp(0.7j)
        out, mu_r, nu2_r = lmmse_equalize(
            r * rot, track, np.zeros((2, m), complex), np.ones((2, m)), cfg, 0.02
        )
        np.testing.assert_allclose(out, rot * base, atol=1e-12)
        np.testing.assert_allclose(mu_r, mu, atol=1e-12)
        np.testing.assert_allclose(nu2_r, nu2, atol=1e-12)

    def test_equivalent_awgn_variance_relation(self):
        # nu2 = mu*sig2 - mu^2*sig2 by construction, floored away from zero
        cfg = SlidingWindowConfig()
        m = 300
        s = qpsk_stream(m, 17)
        h = mimo_channel()
        rng = np.random.default_rng(18)
        r = apply_channel(s, h, cfg.delay, 0.05, rng)
        _, mu, nu2 = lmmse_equalize(
            r, static_track(h, m), np.zeros((2, m), complex), np.ones((2, m)),
            cfg, 0.05,
        )
        np.testing.assert_allclose(nu2, np.maximum(mu - mu**2, 1e-9), atol=1e-12)
        assert np.all((mu >= 0.0) & (mu <= 1.0))

    def test_track_length_mismatch(self):
        cfg = SlidingWindowConfig()
        s = qpsk_stream(10, 19)
        with pytest.raises(TurboError):
            lmmse_equalize(
                s, static_track(mimo_channel(), 9),
                np.zeros((2, 10), complex), np.ones((2, 10)), cfg, 0.1,
            )


@pytest.fixture(scope="module")
def hard_run(qpsk, code):
    # noise chosen so plain demapping fails but the first turbo
    # iteration decodes cleanly
    frame = encoded_frame(qpsk, code, 6, seed=0)
    cfg = SlidingWindowConfig(n_turbo_iters=4)
    rng = np.random.default_rng(1)
    r = apply_channel(frame.symbols, mimo_channel(), cfg.delay, 0.12, rng)
    return turbo_loop(r, frame, cfg, code, qpsk), frame


class TestTurboLoop:
    def test_iterations_fix_decoding(self, hard_run):
        res, _ = hard_run
        assert res.records[0].post_fec_ber > 1e-3
        assert res.records[-1].post_fec_ber == 0.0

    def test_snr_gain(self, hard_run):
        res, _ = hard_run
        assert res.records[-1].snr_db > res.records[0].snr_db + 1.5

    def test_gmi_improves(self, hard_run):
        res, _ = hard_run
        assert (
            res.records[-1].gmi_bits_per_4d_symbol
            > res.records[0].gmi_bits_per_4d_symbol + 0.2
        )

    def test_final_bits_match_transmitted(self, hard_run, qpsk, code):
        res, frame = hard_run
        nb, n = frame.n_blocks, frame.block_len
        for p in range(2):
            kofs = 0
            for b in range(nb):
                cw = Interleaver(n, b).deinterleave(
                    frame.coded_bits[p, b * n : (b + 1) * n]
                )
                np.testing.assert_array_equal(
                    res.hard_bits[p, kofs : kofs + code.k], cw[code.info_positions]
                )
                kofs += code.k

    def test_early_exit_on_saturation(self, qpsk, code):
        frame = encoded_frame(qpsk, code, 6, seed=2)
        cfg = SlidingWindowConfig(n_turbo_iters=5)
        rng = np.random.default_rng(3)
        r = apply_channel(frame.symbols, mimo_channel(), cfg.delay, 0.05, rng)
        res = turbo_loop(r, frame, cfg, code, qpsk)
        assert len(res.records) < 6
        assert res.records[-1].post_fec_ber == 0.0

    def test_zero_iterations_single_record(self, qpsk, code):
        frame = encoded_frame(qpsk, code, 6, seed=4)
        cfg = SlidingWindowConfig(n_turbo_iters=0)
        rng = np.random.default_rng(5)
        r = apply_channel(frame.symbols, mimo_channel(), cfg.delay, 0.05, rng)
        res = turbo_loop(r, frame, cfg, code, qpsk)
        assert len(res.records) == 1
        assert res.records[0].turbo_iteration == 0

    def test_diagnostics_are_json_lines(self, hard_run):
        import json

        res, _ = hard_run
        assert res.diagnostics
        d = json.loads(res.diagnostics[0])
        assert {"iteration", "pol", "block", "parity_ok"} <= set(d)

    def test_shape_mismatch(self, qpsk, code):
        frame = encoded_frame(qpsk, code, 6, seed=6)
        cfg = SlidingWindowConfig()
        with pytest.raises(TurboError):
            turbo_loop(np.zeros((2, 7), complex), frame, cfg, code, qpsk)
