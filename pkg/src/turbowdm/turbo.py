"""Adaptive turbo equalization: RLS channel estimation tracking the
time-varying 2x2 ISI, a sliding-window MIMO SISO LMMSE equalizer using
symbol priors, and the iteration loop with the SISO LDPC decoder.

Channel convention: the received symbol stream r is modeled per
polarization pair as r_i = sum_n conj(h_n) * s_{i+d-n} + noise, n = 0..L,
with decision delay d = floor((L+1)/2), so the main tap h_d multiplies s_i
and both pre- and post-cursor ISI are covered.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import constellation as cst
from .constellation import Constellation
from .fec import Interleaver, LdpcCode, decode
from .metrics import (
    MetricsRecord,
    effective_snr,
    effective_snr_symbolwise,
    gmi_bits_per_2d,
    post_fec_ber,
)
from .waveform import SymbolFrame

log = logging.getLogger(__name__)

POLS = ("xx", "xy", "yx", "yy")


class TurboError(RuntimeError):
    pass


@dataclass(frozen=True)
class SlidingWindowConfig:
    """Equalizer window (N = N1+N2+1), channel memory L, RLS forgetting
    factor, noise variance, and turbo iteration count."""

    n1: int = 0
    n2: int = 2
    channel_memory: int = 2  # L
    forgetting: float = 0.99
    noise_var: float | None = None  # estimated from pilots when None
    n_turbo_iters: int = 5
    rls_delta: float = 0.01
    nlms_step: float = 0.1
    feedback: str = "a_posteriori"  # or "extrinsic"

    def __post_init__(self):
        if self.n1 < 0 or self.n2 < 0:
            raise TurboError("window bounds must be nonnegative")
        if not 0 < self.forgetting <= 1:
            raise TurboError("forgetting factor must be in (0, 1]")

    @property
    def n_window(self) -> int:
        return self.n1 + self.n2 + 1

    @property
    def delay(self) -> int:
        return (self.channel_memory + 1) // 2


@dataclass
class ChannelTapTrack:
    """Per-instant 2x2 MIMO tap estimates, each of length L+1.

    ``taps[k]`` for k in {xx, xy, yx, yy} has shape (n_instants, L+1) and
    holds the filter taps used to predict the received sample at that
    instant (pre-update RLS state).
    """

    taps: dict[str, np.ndarray]

    @property
    def n_instants(self) -> int:
        return self.taps["xx"].shape[0]

    @property
    def memory(self) -> int:
        return self.taps["xx"].shape[1] - 1


@dataclass
class RlsState:
    memory: int
    forgetting: float
    delta: float = 0.01
    sigma: np.ndarray = field(default=None)  # (2(L+1), 2(L+1)) inverse correlation
    h: np.ndarray = field(default=None)  # (2, 2, L+1): [out pol, in pol, tap]

    def __post_init__(self):
        if self.sigma is None:
            self.reinitialize()
        if self.h is None:
            self.h = np.zeros((2, 2, self.memory + 1), dtype=complex)

    def reinitialize(self) -> None:
        dim = 2 * (self.memory + 1)
        self.sigma = np.eye(dim, dtype=complex) / self.delta


def _regression(means: np.ndarray, i: int, memory: int, delay: int) -> np.ndarray:
    """Regression vectors [s_mean(i+d-n)]_{n=0..L} per polarization (2, L+1)."""
    idx = i + delay - np.arange(memory + 1)
    valid = (idx >= 0) & (idx < means.shape[1])
    out = np.zeros((2, memory + 1), dtype=complex)
    out[:, valid] = means[:, idx[valid]]
    return out


def nlms_tap_preconvergence(
    received: np.ndarray,
    means: np.ndarray,
    cfg: SlidingWindowConfig,
    region: np.ndarray,
    step: float | None = None,
    eps: float = 1e-6,
) -> np.ndarray:
    """Data-aided NLMS pre-convergence of the channel-estimator taps over a
    known-symbol region. Returns taps shaped like RlsState.h."""
    memory, delay = cfg.channel_memory, cfg.delay
    h = np.zeros((2, 2, memory + 1), dtype=complex)
    mu = cfg.nlms_step if step is None else step
    for i in np.nonzero(region)[0]:
        v = _regression(means, i, memory, delay)  # (2, L+1)
        r_hat = np.einsum("opn,pn->o", np.conj(h), v)
        e = received[:, i] - r_hat
        norm = np.sum(np.abs(v) ** 2, axis=1) + eps  # per input pol
        for o in range(2):
            h[o] += (mu * np.conj(e[o]) / norm)[:, None] * v
    return h


def rls_estimate(
    received: np.ndarray,
    means: np.ndarray,
    cfg: SlidingWindowConfig,
    state: RlsState | None = None,
    initial_taps: np.ndarray | None = None,
) -> tuple[ChannelTapTrack, RlsState]:
    """Exponentially weighted RLS tracking of the 2x2 channel taps.

    ``received`` and ``means`` are (2, m): symbol-rate samples and the soft
    symbol means aligned to them (pilot means pinned to the pilot symbols).
    Returns (tap track, state, prediction errors); the full pre-update tap
    trajectory is kept for the LMMSE pass.
    """
    m = received.shape[1]
    if state is None:
        state = RlsState(memory=cfg.channel_memory, forgetting=cfg.forgetting,
                         delta=cfg.rls_delta)
    if initial_taps is not None:
        state.h = initial_taps.astype(complex).copy()
    lam = cfg.forgetting
    lp1 = cfg.channel_memory + 1
    track = np.empty((m, 2, 2, lp1), dtype=complex)
    errors = np.empty((2, m), dtype=complex)
    h = state.h
    sigma = state.sigma
    # near-zero regressors (uninformative priors) carry no tap information;
    # updating on them only inflates sigma by 1/lam per step
    v_floor = 1e-3 * (cfg.channel_memory + 1)
    for i in range(m):
        v = _regression(means, i, cfg.channel_memory, cfg.delay)
        track[i] = h
        u = v.ravel()  # joint regressor over both input polarizations
        r_hat = np.conj(h.reshape(2, -1)) @ u
        e = received[:, i] - r_hat
        errors[:, i] = e
        if np.sum(np.abs(u) ** 2) <= v_floor:
            continue
        su = sigma @ u
        gain = su / (lam + np.real(np.vdot(u, su)))
        sigma = (sigma - np.outer(gain, np.conj(su))) / lam
        # re-symmetrize: the rank-1 form slowly loses Hermitianity and can
        # turn indefinite after a few thousand updates
        sigma = 0.5 * (sigma + sigma.conj().T)
        if not np.all(np.isfinite(sigma)) or np.max(np.abs(sigma)) > 1e9:
            log.warning("RLS inverse-correlation lost conditioning; reinitializing")
            state.reinitialize()
            sigma = state.sigma
            continue
        h += (np.conj(e)[:, None] * gain[None, :]).reshape(h.shape)
    state.h = h
    state.sigma = sigma
    taps = {
        "xx": track[:, 0, 0],
        "xy": track[:, 0, 1],
        "yx": track[:, 1, 0],
        "yy": track[:, 1, 1],
    }
    return ChannelTapTrack(taps=taps), state, errors


def _effective_taps(track: ChannelTapTrack) -> np.ndarray:
    """(m, 2, 2, L+1) channel coefficients c_n = conj(h_n)."""
    m = track.n_instants
    lp1 = track.memory + 1
    c = np.empty((m, 2, 2, lp1), dtype=complex)
    c[:, 0, 0] = np.conj(track.taps["xx"])
    c[:, 0, 1] = np.conj(track.taps["xy"])
    c[:, 1, 0] = np.conj(track.taps["yx"])
    c[:, 1, 1] = np.conj(track.taps["yy"])
    return c


def lmmse_equalize(
    received: np.ndarray,
    track: ChannelTapTrack,
    means: np.ndarray,
    variances: np.ndarray,
    cfg: SlidingWindowConfig,
    noise_var: float,
    symbol_energy: float = 1.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sliding-window MIMO 2x2 LMMSE estimation with symbol priors.

    Per instant: the windowed channel matrix is assembled from the tap
    track, the prior mean of the center symbol is excluded from the
    interference cancellation while its variance entry is the blind symbol
    energy, and the Wiener solution is obtained by a direct Hermitian solve.

    Returns (estimates (2, m), scale mu (2, m), noise nu2 (2, m)).
    """
    m = received.shape[1]
    if track.n_instants != m:
        raise TurboError("tap track does not cover all instants")
    n1, n2, mem = cfg.n1, cfg.n2, cfg.channel_memory
    nw = cfg.n_window
    wwin = nw + mem  # symbol window width per polarization
    d = cfg.delay
    sig2 = symbol_energy

    c = _effective_taps(track)  # (m, 2, 2, L+1)

    # banded window matrix H (m, 2N, 2W): rows are received samples
    # r_{i0-N1..i0+N2} with i0 = j - d; columns are symbols s_{j-N1-L..j+N2}
    hmat = np.zeros((m, 2 * nw, 2 * wwin), dtype=complex)
    j = np.arange(m)
    i0 = j - d
    for row in range(nw):
        for n in range(mem + 1):
            col = row + mem - n  # position of s_{t-n} within the window
            ci = np.clip(i0 - n1 + row, 0, m - 1)  # taps at the row's instant
            for o in range(2):
                for p in range(2):
                    hmat[:, o * nw + row, p * wwin + col] = c[ci, o, p, n]

    # windowed means/variances; outside the frame: mean 0, variance sig2
    def window(arr: np.ndarray, fill: float) -> np.ndarray:
        out = np.full((m, 2 * wwin), fill, dtype=arr.dtype)
        for p in range(2):
            for t in range(wwin):
                idx = j - n1 - mem + t  # symbol index s_{j-N1-L+t}
                valid = (idx >= 0) & (idx < m)
                out[valid, p * wwin + t] = arr[p, idx[valid]]
        return out

    sbar = window(means.astype(complex), 0.0)
    svar = window(variances.astype(float), sig2)
    center = n1 + mem  # window position of s_j
    sbar[:, center] = 0.0
    sbar[:, wwin + center] = 0.0
    svar[:, center] = sig2
    svar[:, wwin + center] = sig2

    # r window with zero padding outside the frame
    rwin = np.zeros((m, 2 * nw), dtype=complex)
    for p in range(2):
        for t in range(nw):
            idx = i0 - n1 + t
            valid = (idx >= 0) & (idx < m)
            rwin[valid, p * nw + t] = received[p, idx[valid]]

    # A = H R H^H + sigma_n^2 I ; b = H e sig2 (response to the center symbol)
    hr = hmat * svar[:, None, :]
    a = hr @ hmat.conj().transpose(0, 2, 1)
    a += noise_var * np.eye(2 * nw)[None]
    hsel = np.stack([hmat[:, :, center], hmat[:, :, wwin + center]], axis=-1)
    w = np.linalg.solve(a, hsel * sig2)  # (m, 2N, 2)

    resid = rwin - np.einsum("mrc,mc->mr", hmat, sbar)
    s_hat = np.einsum("mrp,mr->pm", np.conj(w), resid)

    mu_full = np.einsum("mrp,mrk->mpk", np.conj(w), hsel)  # (m, 2, 2)
    mu = np.clip(np.real(np.einsum("mpp->pm", mu_full)), 0.0, 1.0)
    nu2 = np.maximum(mu * sig2 - mu**2 * sig2, cst.NU2_FLOOR_REL * sig2)
    return s_hat, mu, nu2


@dataclass
class TurboResult:
    llrs: list[np.ndarray]  # per iteration: (2, n_data, q) extrinsic L-values
    hard_bits: np.ndarray  # (2, total coded bits), final iteration
    tap_tracks: list[ChannelTapTrack | None]
    records: list[MetricsRecord]
    diagnostics: list[str]  # line-delimited JSON


def _frame_llr_to_blocks(
    llrs: np.ndarray, frame: SymbolFrame, interleavers: list[Interleaver]
) -> np.ndarray:
    """(n_data, q) data-instant L-values -> (n_blocks, n) deinterleaved."""
    flat = llrs.reshape(-1)
    nb, n = frame.n_blocks, frame.block_len
    out = np.empty((nb, n))
    for b in range(nb):
        out[b] = interleavers[b].deinterleave(flat[b * n : (b + 1) * n])
    return out


def _blocks_to_frame_llr(
    blocks: np.ndarray, frame: SymbolFrame, interleavers: list[Interleaver], q: int
) -> np.ndarray:
    flat = np.concatenate(
        [interleavers[b].interleave(blocks[b]) for b in range(frame.n_blocks)]
    )
    return flat.reshape(-1, q)


def turbo_loop(
    received: np.ndarray,
    frame: SymbolFrame,
    cfg: SlidingWindowConfig,
    code: LdpcCode,
    c: Constellation,
    interleaver_seed: int = 0,
    n_train_blocks: int = 3,
    decoder_iters: int = 50,
    context: dict | None = None,
) -> TurboResult:
    """Run the iterative equalize/decode loop on one frame.

    ``received`` is the symbol-rate dual-pol output of the front-end DSP,
    aligned to the frame. Iteration 0 bypasses the equalizer and demaps the
    received symbols under a scalar AWGN assumption; subsequent iterations
    feed decoder soft output to the RLS channel estimator and the LMMSE
    equalizer, then demap its output with the updated priors.
    """
    ctx = context or {}
    m = frame.n_instants
    received = np.asarray(received)
    if received.shape != (2, m):
        raise TurboError(f"received shape {received.shape} != (2, {m})")
    q = c.q
    nb, n = frame.n_blocks, frame.block_len
    data_pos = frame.data_positions
    pilot = frame.pilot_mask
    interleavers = [Interleaver(n, interleaver_seed + b) for b in range(nb)]

    # receiver-known region: pilots plus the data-aided training blocks
    block_of_data = frame.block_of_data_symbol(q)
    train_data = block_of_data < n_train_blocks
    known = pilot.copy()
    known[data_pos[train_data]] = True

    # policy: metrics skip training blocks and the trailing block
    counted_data = (block_of_data >= n_train_blocks) & (block_of_data < nb - 1)
    counted_pos = data_pos[counted_data]

    # noise variance from pilot residuals of the unequalized stream
    pil_res = received[:, pilot] - frame.symbols[:, pilot]
    sigma_n2 = float(np.mean(np.abs(pil_res) ** 2))
    if cfg.noise_var is not None:
        sigma_n2 = cfg.noise_var

    true_info = np.stack(
        [
            np.concatenate(
                [
                    _info_bits_of_block(frame.coded_bits[p], b, n, code, interleavers[b])
                    for b in range(nb)
                ]
            )
            for p in range(2)
        ]
    )

    result = TurboResult([], None, [], [], [])
    prior_blocks = None  # (2, nb, n) L-values in deinterleaved (code) domain
    seed = int(ctx.get("seed", 0))

    for it in range(cfg.n_turbo_iters + 1):
        if it == 0:
            s_hat = received
            mu = np.ones((2, m))
            nu2 = np.full((2, m), max(sigma_n2, 1e-12))
            track = None
            prior_sym = [None, None]
        else:
            means = np.empty((2, m), dtype=complex)
            variances = np.empty((2, m))
            prior_sym = []
            for p in range(2):
                pl = _blocks_to_frame_llr(prior_blocks[p], frame, interleavers, q)
                prior_sym.append(pl)
                pr = cst.symbol_priors(pl, c)
                mn, vr = cst.soft_stats(pr, c)
                means[p, data_pos] = mn
                variances[p, data_pos] = vr
            means[:, known] = frame.symbols[:, known]
            variances[:, known] = 0.0
            h0 = nlms_tap_preconvergence(received, means, cfg, known)
            track, _, rls_err = rls_estimate(received, means, cfg, initial_taps=h0)
            # refresh the noise estimate from the pilot-position residuals,
            # where the regression means are exact
            sigma_n2 = max(float(np.mean(np.abs(rls_err[:, pilot]) ** 2)), 1e-12)
            if cfg.noise_var is not None:
                sigma_n2 = cfg.noise_var
            s_hat, mu, nu2 = lmmse_equalize(
                received, track, means, variances, cfg, sigma_n2,
                symbol_energy=c.energy,
            )

        # demap data instants (pilots removed after the equalizer)
        llrs = np.empty((2, data_pos.size, q))
        llrs_noprior = np.empty_like(llrs)
        for p in range(2):
            llrs[p] = cst.extrinsic_llrs(
                s_hat[p, data_pos], mu[p, data_pos], nu2[p, data_pos],
                prior_sym[p], c,
            )
            llrs_noprior[p] = cst.extrinsic_llrs(
                s_hat[p, data_pos], mu[p, data_pos], nu2[p, data_pos], None, c
            )

        # decode each block
        dec_info = np.empty_like(true_info)
        app = np.empty((2, nb, n))
        all_ok = True
        diag_blocks = []
        for p in range(2):
            blocks = _frame_llr_to_blocks(llrs[p], frame, interleavers)
            kofs = 0
            for b in range(nb):
                post, hard, ok, iters = decode(blocks[b], code, decoder_iters)
                if cfg.feedback == "extrinsic":
                    app[p, b] = post - blocks[b]
                else:
                    app[p, b] = post
                dec_info[p, kofs : kofs + code.k] = hard[code.info_positions]
                kofs += code.k
                all_ok &= ok
                diag_blocks.append(
                    {
                        "iteration": it,
                        "pol": "xy"[p],
                        "block": b,
                        "decoder_iterations": iters,
                        "parity_ok": bool(ok),
                        "mean_abs_llr": float(np.mean(np.abs(blocks[b]))),
                    }
                )

        ber, counted = post_fec_ber(dec_info, true_info, nb, n_train_blocks, 1)
        bias = np.where(mu[:, counted_pos] > 1e-6, mu[:, counted_pos], 1.0)
        s_ref = frame.symbols[:, counted_pos]
        s_cnt = s_hat[:, counted_pos] / bias
        gmi4d = sum(
            gmi_bits_per_2d(
                llrs_noprior[p][counted_data],
                frame.coded_bits[p].reshape(-1, q)[counted_data],
            )
            for p in range(2)
        )
        rec = MetricsRecord(
            launch_power_dbm=float(ctx.get("launch_power_dbm", np.nan)),
            n_spans=int(ctx.get("n_spans", 0)),
            mode=str(ctx.get("mode", "synthetic")),
            turbo_iteration=it,
            seed=seed,
            post_fec_ber=ber,
            snr_db=effective_snr(s_ref, s_cnt),
            snr_db_symbolwise=effective_snr_symbolwise(s_ref, s_cnt),
            gmi_bits_per_4d_symbol=gmi4d,
            n_bits_counted=counted,
            trial=int(ctx.get("trial", 0)),
        )
        result.llrs.append(llrs)
        result.tap_tracks.append(track)
        result.records.append(rec)
        result.diagnostics.extend(json.dumps(d, sort_keys=True) for d in diag_blocks)
        result.hard_bits = dec_info
        prior_blocks = app
        # stop once decoding is clean and the equalizer SNR has saturated
        if all_ok and it >= 2:
            if abs(rec.snr_db - result.records[-2].snr_db) < 0.01:
                break
    return result


def _info_bits_of_block(
    coded_stream: np.ndarray,
    b: int,
    n: int,
    code: LdpcCode,
    interleaver: Interleaver,
) -> np.ndarray:
    cw = interleaver.deinterleave(coded_stream[b * n : (b + 1) * n])
    return cw[code.info_positions]
