"""Symbol framing with pilots, RRC shaping/matched filtering, FFT
resampling, WDM multiplexing and channel-of-interest extraction."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.signal import upfirdn

from .constellation import Constellation, map_bits


class WaveformError(ValueError):
    pass


@dataclass
class DualPolSignal:
    """Sampled dual-polarization complex waveform."""

    x: np.ndarray
    y: np.ndarray
    sample_rate: float
    center_freq_offset: float = 0.0

    def __post_init__(self):
        if len(self.x) != len(self.y):
            raise WaveformError("polarization lengths differ")
        if self.sample_rate <= 0:
            raise WaveformError("sample_rate must be positive")

    def __len__(self) -> int:
        return len(self.x)

    def fields(self) -> np.ndarray:
        return np.stack([self.x, self.y])

    def power(self) -> float:
        """Total average power, both polarizations."""
        return float(np.mean(np.abs(self.x) ** 2 + np.abs(self.y) ** 2))

    def scaled(self, factor: float) -> "DualPolSignal":
        return replace(self, x=self.x * factor, y=self.y * factor)


@dataclass
class SymbolFrame:
    """Dual-pol symbol sequence with pilot mask and data/bit alignment.

    ``symbols`` has shape (2, n_instants). Pilots are co-located across
    polarizations; data instant j of a polarization carries interleaved
    coded bits q*j .. q*j+q-1 of that polarization's bit stream.
    """

    symbols: np.ndarray
    pilot_mask: np.ndarray
    coded_bits: np.ndarray  # (2, n_blocks * n) interleaved coded bits
    n_blocks: int
    block_len: int
    symbol_rate: float
    seed: int

    @property
    def n_instants(self) -> int:
        return self.symbols.shape[1]

    @property
    def data_positions(self) -> np.ndarray:
        return np.nonzero(~self.pilot_mask)[0]

    @property
    def n_data(self) -> int:
        return int(np.sum(~self.pilot_mask))

    def data_symbols(self) -> np.ndarray:
        return self.symbols[:, ~self.pilot_mask]

    def pilot_symbols(self) -> np.ndarray:
        return self.symbols[:, self.pilot_mask]

    def block_of_data_symbol(self, q: int) -> np.ndarray:
        """FEC block index of each data instant (index of its first bit)."""
        return (np.arange(self.n_data) * q) // self.block_len


def pilot_positions(n_data: int, pilot_rate: float) -> np.ndarray:
    """Boolean mask over instants: fixed-stride pilots between data symbols."""
    if pilot_rate <= 0:
        return np.zeros(n_data, dtype=bool)
    stride = int(round(1.0 / pilot_rate))
    # total instants T with ceil(T/stride) pilots and n_data data symbols
    total = n_data
    while total - int(np.ceil(total / stride)) < n_data:
        total += 1
    mask = np.zeros(total, dtype=bool)
    mask[::stride] = True
    return mask


def build_frame(
    coded_bits: np.ndarray,
    c: Constellation,
    pilot_rate: float,
    n_blocks: int,
    seed: int,
    symbol_rate: float = 32e9,
) -> SymbolFrame:
    """Assemble the dual-pol symbol frame: mapped data symbols with seeded
    pilot symbols inserted at a fixed stride."""
    coded_bits = np.atleast_2d(np.asarray(coded_bits, dtype=np.uint8))
    if coded_bits.shape[0] != 2:
        raise WaveformError("expected coded bits for two polarizations")
    total_bits = coded_bits.shape[1]
    if total_bits % c.q:
        raise WaveformError("coded bit count not divisible by q")
    if total_bits % n_blocks:
        raise WaveformError("coded bit count not divisible by block count")
    block_len = total_bits // n_blocks
    n_data = total_bits // c.q
    mask = pilot_positions(n_data, pilot_rate)
    total = mask.size
    rng = np.random.default_rng(seed)
    n_pilots = int(mask.sum())
    symbols = np.empty((2, total), dtype=complex)
    for p in range(2):
        symbols[p, ~mask] = map_bits(coded_bits[p], c)
        symbols[p, mask] = c.points[rng.integers(0, c.order, n_pilots)]
    return SymbolFrame(
        symbols=symbols,
        pilot_mask=mask,
        coded_bits=coded_bits,
        n_blocks=n_blocks,
        block_len=block_len,
        symbol_rate=symbol_rate,
        seed=seed,
    )


def extract_data_bits(frame: SymbolFrame, c: Constellation) -> np.ndarray:
    """Invert the frame's data/bit alignment from its own symbols (round-trip
    check helper): nearest-point demap of the data instants."""
    from .constellation import hard_decide

    out = np.empty_like(frame.coded_bits)
    for p in range(2):
        idx = hard_decide(frame.data_symbols()[p], c)
        out[p] = c.bit_labels[idx].ravel()
    return out


def rrc_taps(samples_per_symbol: int, rolloff: float, span_symbols: int = 64) -> np.ndarray:
    """Unit-energy root-raised-cosine FIR taps."""
    if not 0 < rolloff <= 1:
        raise WaveformError(f"invalid rolloff {rolloff}")
    if samples_per_symbol < 2:
        raise WaveformError("need at least 2 samples/symbol")
    sps = samples_per_symbol
    n = span_symbols * sps
    t = (np.arange(-n // 2, n // 2 + 1)) / sps  # in symbol periods
    a = rolloff
    taps = np.empty_like(t)
    for i, ti in enumerate(t):
        if abs(ti) < 1e-9:
            taps[i] = 1.0 - a + 4.0 * a / np.pi
        elif abs(abs(ti) - 1.0 / (4.0 * a)) < 1e-9:
            taps[i] = (a / np.sqrt(2.0)) * (
                (1.0 + 2.0 / np.pi) * np.sin(np.pi / (4.0 * a))
                + (1.0 - 2.0 / np.pi) * np.cos(np.pi / (4.0 * a))
            )
        else:
            num = np.sin(np.pi * ti * (1 - a)) + 4 * a * ti * np.cos(np.pi * ti * (1 + a))
            den = np.pi * ti * (1 - (4 * a * ti) ** 2)
            taps[i] = num / den
    return taps / np.sqrt(np.sum(taps**2))


def rrc_shape(
    frame: SymbolFrame,
    samples_per_symbol: int,
    rolloff: float,
    span_symbols: int = 64,
) -> DualPolSignal:
    """Upsample and pulse-shape the frame; output is delay-compensated so
    sample ``i*sps`` corresponds to symbol instant ``i``."""
    g = rrc_taps(samples_per_symbol, rolloff, span_symbols)
    delay = (len(g) - 1) // 2
    out = []
    for p in range(2):
        v = upfirdn(g, frame.symbols[p], up=samples_per_symbol)
        out.append(v[delay : delay + frame.n_instants * samples_per_symbol])
    return DualPolSignal(
        x=out[0],
        y=out[1],
        sample_rate=samples_per_symbol * frame.symbol_rate,
    )


def matched_filter(
    signal: DualPolSignal,
    rolloff: float,
    span_symbols: int = 64,
    symbol_rate: float = 32e9,
) -> DualPolSignal:
    sps = signal.sample_rate / symbol_rate
    if abs(sps - round(sps)) > 1e-9:
        raise WaveformError("sample rate is not an integer multiple of symbol rate")
    g = rrc_taps(int(round(sps)), rolloff, span_symbols)
    delay = (len(g) - 1) // 2
    x = np.convolve(signal.x, g)[delay : delay + len(signal)]
    y = np.convolve(signal.y, g)[delay : delay + len(signal)]
    return replace(signal, x=x, y=y)


def fft_resample(signal: DualPolSignal, new_sample_rate: float) -> DualPolSignal:
    """Spectral resampling to a commensurate sample rate."""
    ratio = new_sample_rate / signal.sample_rate
    n = len(signal)
    n_new = int(round(n * ratio))
    if abs(n * ratio - n_new) > 1e-6:
        raise WaveformError("resampling ratio not commensurate with signal length")
    out = []
    for v in (signal.x, signal.y):
        spec = np.fft.fft(v)
        spec_new = np.zeros(n_new, dtype=complex)
        keep = min(n, n_new)
        h = keep // 2
        spec_new[:h] = spec[:h]
        spec_new[-h:] = spec[-h:]
        out.append(np.fft.ifft(spec_new) * (n_new / n))
    return replace(signal, x=out[0], y=out[1], sample_rate=new_sample_rate)


def wdm_mux(channels: list[DualPolSignal], spacing_hz: float) -> DualPolSignal:
    """Sum of frequency-shifted channels with the center channel at 0 Hz."""
    if not channels:
        raise WaveformError("no channels")
    fs = channels[0].sample_rate
    n = max(len(ch) for ch in channels)
    if any(abs(ch.sample_rate - fs) > 1e-6 for ch in channels):
        raise WaveformError("channels must share a sample rate")
    n_ch = len(channels)
    if (n_ch - 1) * spacing_hz >= fs:
        raise WaveformError("aggregate WDM band exceeds the sampling bandwidth")
    t = np.arange(n) / fs
    x = np.zeros(n, dtype=complex)
    y = np.zeros(n, dtype=complex)
    center = (n_ch - 1) / 2.0
    for i, ch in enumerate(channels):
        f = (i - center) * spacing_hz
        tone = np.exp(2j * np.pi * f * t)
        x[: len(ch)] += ch.x * tone[: len(ch)]
        y[: len(ch)] += ch.y * tone[: len(ch)]
    return DualPolSignal(x=x, y=y, sample_rate=fs)


def select_channel(
    signal: DualPolSignal,
    offset_hz: float,
    bandwidth_hz: float,
    out_sample_rate: float | None = None,
    transition_hz: float | None = None,
) -> DualPolSignal:
    """Band-pass filter around ``offset_hz``, downconvert to baseband, and
    resample. The filter is flat in its passband with a raised-cosine
    transition to the stopband."""
    fs = signal.sample_rate
    if bandwidth_hz >= fs:
        raise WaveformError("bandwidth exceeds sample rate")
    if transition_hz is None:
        transition_hz = 0.15 * bandwidth_hz
    n = len(signal)
    t = np.arange(n) / fs
    f = np.fft.fftfreq(n, d=1.0 / fs)
    half = bandwidth_hz / 2.0
    af = np.abs(f)
    mask = np.zeros(n)
    mask[af <= half] = 1.0
    trans = (af > half) & (af < half + transition_hz)
    mask[trans] = 0.5 * (1.0 + np.cos(np.pi * (af[trans] - half) / transition_hz))
    shift = np.exp(-2j * np.pi * offset_hz * t)
    x = np.fft.ifft(np.fft.fft(signal.x * shift) * mask)
    y = np.fft.ifft(np.fft.fft(signal.y * shift) * mask)
    out = DualPolSignal(x=x, y=y, sample_rate=fs, center_freq_offset=0.0)
    if out_sample_rate is not None and abs(out_sample_rate - fs) > 1e-6:
        out = fft_resample(out, out_sample_rate)
    return out


def save_signal(path: str | Path, signal: DualPolSignal) -> None:
    """Binary dump: little-endian float32 interleaved (xRe,xIm,yRe,yIm) plus
    a JSON sidecar with sample_rate and length."""
    path = Path(path)
    buf = np.empty(4 * len(signal), dtype="<f4")
    buf[0::4] = signal.x.real
    buf[1::4] = signal.x.imag
    buf[2::4] = signal.y.real
    buf[3::4] = signal.y.imag
    path.write_bytes(buf.tobytes())
    sidecar = {
        "sample_rate": signal.sample_rate,
        "length": len(signal),
        "center_freq_offset": signal.center_freq_offset,
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar))


def load_signal(path: str | Path) -> DualPolSignal:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    buf = np.frombuffer(path.read_bytes(), dtype="<f4")
    x = buf[0::4] + 1j * buf[1::4]
    y = buf[2::4] + 1j * buf[3::4]
    return DualPolSignal(
        x=x.astype(complex),
        y=y.astype(complex),
        sample_rate=meta["sample_rate"],
        center_freq_offset=meta.get("center_freq_offset", 0.0),
    )
