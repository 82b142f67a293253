"""Campaign configuration, the seeded Monte Carlo trial runner, sweep
orchestration over launch power / span count / receiver mode, and
plot-ready table emission."""

from __future__ import annotations

import configparser
import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import fiber as fib
from .constellation import build_constellation
from .fec import LdpcCode
from .metrics import MetricsRecord
from .sync_dsp import DdpllState, NlmsState, ddpll, nlms_equalize
from .turbo import SlidingWindowConfig, turbo_loop
from .waveform import (
    DualPolSignal,
    build_frame,
    fft_resample,
    matched_filter,
    rrc_shape,
    select_channel,
    wdm_mux,
)

log = logging.getLogger(__name__)

MODES = ("edc", "dbp", "dbp_turbo")


class HarnessError(RuntimeError):
    pass


@dataclass
class CampaignConfig:
    modulation: int = 64
    n_wdm_channels: int = 3
    baud: float = 32e9
    grid_spacing_hz: float = 37.5e9
    pilot_rate: float = 0.05
    rolloff: float = 0.01
    rrc_span: int = 64
    tx_samples_per_symbol: int = 4
    fiber: fib.FiberParams = field(default_factory=fib.FiberParams)
    dbp_step_m: float = 10e3
    code_file: str = "rate45_n2048"
    n_blocks: int = 18
    n_train_blocks: int = 3
    decoder_iters: int = 50
    turbo: SlidingWindowConfig = field(default_factory=SlidingWindowConfig)
    nlms_taps: int = 13
    nlms_step: float = 0.05
    pll_bw_norm: float = 1e-3
    bypass_sync_dsp: bool = False
    power_dbm_list: tuple[float, ...] = (2.0,)
    span_list: tuple[int, ...] = (10,)
    modes: tuple[str, ...] = MODES
    n_trials: int = 1
    base_seed: int = 1234

    def __post_init__(self):
        if not self.power_dbm_list or not self.span_list:
            raise HarnessError("sweep axes must be non-empty")
        if self.n_trials < 1:
            raise HarnessError("n_trials must be >= 1")
        for m in self.modes:
            if m not in MODES:
                raise HarnessError(f"unknown receiver mode {m!r}")


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(t) for t in s.replace(",", " ").split())


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(t) for t in s.replace(",", " ").split())


def load_config(path: str | Path) -> CampaignConfig:
    """Parse the sectioned key-value config file (INI syntax)."""
    path = Path(path)
    if not path.exists():
        preset = resources.files("turbowdm.presets") / f"{path.name}"
        if preset.is_file():
            path = preset
        else:
            raise HarnessError(f"config file {path} not found")
    cp = configparser.ConfigParser()
    cp.read_string(Path(path).read_text() if isinstance(path, Path) else path.read_text())

    sig = cp["signal"] if cp.has_section("signal") else {}
    fb = cp["fiber"] if cp.has_section("fiber") else {}
    code = cp["code"] if cp.has_section("code") else {}
    tb = cp["turbo"] if cp.has_section("turbo") else {}
    dsp = cp["dsp"] if cp.has_section("dsp") else {}
    sw = cp["sweep"] if cp.has_section("sweep") else {}
    run = cp["run"] if cp.has_section("run") else {}

    fiber = fib.FiberParams(
        alpha_db_per_km=float(fb.get("alpha_db_per_km", 0.2)),
        gamma_per_w_km=float(fb.get("gamma_per_w_km", 1.3)),
        dispersion_ps_nm_km=float(fb.get("dispersion_ps_nm_km", 17.0)),
        span_km=float(fb.get("span_km", 50.0)),
        n_spans=int(fb.get("n_spans", 10)),
        nf_db=float(fb.get("nf_db", 4.5)),
        step_m=float(fb.get("step_m", 1000.0)),
        center_wavelength_nm=float(fb.get("center_wavelength_nm", 1550.0)),
    )
    turbo = SlidingWindowConfig(
        n1=int(tb.get("n1", 0)),
        n2=int(tb.get("n2", 2)),
        channel_memory=int(tb.get("channel_memory", 2)),
        forgetting=float(tb.get("forgetting", 0.99)),
        n_turbo_iters=int(tb.get("n_turbo_iters", 5)),
        rls_delta=float(tb.get("rls_delta", 0.01)),
        nlms_step=float(tb.get("nlms_step", 0.1)),
        feedback=tb.get("feedback", "a_posteriori"),
    )
    return CampaignConfig(
        modulation=int(sig.get("modulation", 64)),
        n_wdm_channels=int(sig.get("n_wdm_channels", 3)),
        baud=float(sig.get("baud", 32e9)),
        grid_spacing_hz=float(sig.get("grid_spacing_hz", 37.5e9)),
        pilot_rate=float(sig.get("pilot_rate", 0.05)),
        rolloff=float(sig.get("rolloff", 0.01)),
        rrc_span=int(sig.get("rrc_span", 64)),
        tx_samples_per_symbol=int(sig.get("tx_samples_per_symbol", 4)),
        fiber=fiber,
        dbp_step_m=float(fb.get("dbp_step_m", 10e3)),
        code_file=code.get("file", "rate45_n2048"),
        n_blocks=int(code.get("n_blocks", 18)),
        n_train_blocks=int(code.get("n_train_blocks", 3)),
        decoder_iters=int(code.get("decoder_iters", 50)),
        turbo=turbo,
        nlms_taps=int(dsp.get("nlms_taps", 13)),
        nlms_step=float(dsp.get("nlms_step", 0.05)),
        pll_bw_norm=float(dsp.get("pll_bw_norm", 1e-3)),
        bypass_sync_dsp=dsp.get("bypass_sync_dsp", "false").lower() in ("1", "true", "yes"),
        power_dbm_list=_floats(sw.get("power_dbm", "2")),
        span_list=_ints(sw.get("spans", str(fiber.n_spans))),
        modes=tuple(sw.get("modes", "edc dbp dbp_turbo").split()),
        n_trials=int(run.get("n_trials", 1)),
        base_seed=int(run.get("base_seed", 1234)),
    )


def cell_seed(base_seed: int, power_dbm: float, n_spans: int, mode: str, trial: int) -> int:
    """Stable per-cell seed so sweep cells are order-independent."""
    key = f"{base_seed}|{power_dbm:.6f}|{n_spans}|{mode}|{trial}"
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "big") >> 1


def _load_code(name: str) -> LdpcCode:
    p = Path(name)
    if p.exists():
        return LdpcCode.from_file(p)
    return LdpcCode.bundled(name)


def run_trial(
    cfg: CampaignConfig,
    power_dbm: float,
    n_spans: int,
    mode: str,
    seed: int,
    code: LdpcCode | None = None,
) -> list[MetricsRecord]:
    """One seeded Monte Carlo trial: transmit, propagate, receive, and run
    the turbo loop (single iteration-0 pass for edc/dbp modes). Returns one
    record per turbo iteration."""
    if mode not in MODES:
        raise HarnessError(f"unknown receiver mode {mode!r}")
    rng = np.random.default_rng(seed)
    c = build_constellation(cfg.modulation)
    if code is None:
        code = _load_code(cfg.code_file)

    from .fec import Interleaver

    interleaver_seed = seed % (2**31)
    n, k = code.n, code.k
    coi_index = (cfg.n_wdm_channels - 1) // 2

    # transmit waveforms per channel; the channel of interest keeps its frame
    channels = []
    frame_coi = None
    for ch in range(cfg.n_wdm_channels):
        coded = np.empty((2, cfg.n_blocks * n), dtype=np.uint8)
        for p in range(2):
            for b in range(cfg.n_blocks):
                info = rng.integers(0, 2, k).astype(np.uint8)
                cw = code.encode(info)
                il = Interleaver(n, interleaver_seed + b)
                coded[p, b * n : (b + 1) * n] = il.interleave(cw)
        frame = build_frame(
            coded, c, cfg.pilot_rate, cfg.n_blocks,
            seed=int(rng.integers(0, 2**31)), symbol_rate=cfg.baud,
        )
        if ch == coi_index:
            frame_coi = frame
        channels.append(rrc_shape(frame, cfg.tx_samples_per_symbol, cfg.rolloff, cfg.rrc_span))

    # set per-channel launch power and multiplex
    p_w = 1e-3 * 10.0 ** (power_dbm / 10.0)
    channels = [ch.scaled(np.sqrt(p_w / ch.power())) for ch in channels]
    wdm = wdm_mux(channels, cfg.grid_spacing_hz)

    link = replace(cfg.fiber, n_spans=n_spans)
    rx = fib.propagate_link(wdm, link, n_spans, seed=int(rng.integers(0, 2**63 - 1)))

    # receiver front end: channel select, 2 samples/symbol, DBP or EDC, MF
    bw = cfg.baud * (1.0 + cfg.rolloff)
    guard = max(cfg.grid_spacing_hz - bw, 0.1 * cfg.baud)
    rx = select_channel(
        rx, 0.0, bw, out_sample_rate=2 * cfg.baud,
        transition_hz=min(0.15 * bw, guard),
    )
    distance = n_spans * link.span_km
    if mode == "edc":
        rx = fib.edc(rx, link, distance)
    else:
        rx = fib.dbp(rx, link, distance, cfg.dbp_step_m)
    rx = matched_filter(rx, cfg.rolloff, cfg.rrc_span, cfg.baud)

    block_sym = frame_coi.block_of_data_symbol(c.q)
    train_mask = np.zeros(frame_coi.n_instants, dtype=bool)
    train_mask[frame_coi.data_positions[block_sym < cfg.n_train_blocks]] = True

    if cfg.bypass_sync_dsp:
        # idealized front end: pilot-correlation alignment and a single
        # static complex gain per polarization, no adaptive NLMS/CPR
        from .sync_dsp import coarse_align

        aligned = fft_resample(coarse_align(rx, frame_coi, 2), cfg.baud)
        symbols = aligned.fields()
        pil = frame_coi.pilot_mask
        for p in range(2):
            ref = frame_coi.symbols[p, pil]
            g = np.vdot(ref, symbols[p, pil]) / np.vdot(ref, ref)
            symbols[p] /= g
    else:
        nlms = NlmsState(n_taps=cfg.nlms_taps, step_size=cfg.nlms_step)
        symbols = nlms_equalize(rx, frame_coi, nlms, train_mask=train_mask)
        symbols, _ = ddpll(
            symbols, frame_coi, c, DdpllState(loop_bw_norm=cfg.pll_bw_norm)
        )

    n_iters = cfg.turbo.n_turbo_iters if mode == "dbp_turbo" else 0
    result = turbo_loop(
        symbols,
        frame_coi,
        replace(cfg.turbo, n_turbo_iters=n_iters),
        code,
        c,
        interleaver_seed=interleaver_seed,
        n_train_blocks=cfg.n_train_blocks,
        decoder_iters=cfg.decoder_iters,
        context={
            "launch_power_dbm": power_dbm,
            "n_spans": n_spans,
            "mode": mode,
            "seed": seed,
        },
    )
    return result.records


def _run_cell(args) -> tuple[tuple, list[MetricsRecord] | None, str | None]:
    cfg, power, spans, mode, trial = args
    seed = cell_seed(cfg.base_seed, power, spans, mode, trial)
    key = (power, spans, mode, trial)
    try:
        recs = run_trial(cfg, power, spans, mode, seed)
        for r in recs:
            r.trial = trial
        return key, recs, None
    except Exception as exc:  # cell failures must not kill the campaign
        log.exception("cell %s failed", key)
        return key, None, f"{type(exc).__name__}: {exc}"


def run_campaign(
    cfg: CampaignConfig, jobs: int = 1
) -> tuple[list[MetricsRecord], list[dict], list[tuple]]:
    """Execute every (power, spans, mode, trial) cell; aggregate per cell
    and per iteration. Returns (records, aggregate rows, failed cells)."""
    cells = [
        (cfg, power, spans, mode, trial)
        for power in cfg.power_dbm_list
        for spans in cfg.span_list
        for mode in cfg.modes
        for trial in range(cfg.n_trials)
    ]
    results: dict[tuple, list[MetricsRecord]] = {}
    failures: list[tuple] = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for key, recs, err in pool.map(_run_cell, cells):
                if recs is None:
                    failures.append((key, err))
                else:
                    results[key] = recs
    else:
        for cell in cells:
            key, recs, err = _run_cell(cell)
            if recs is None:
                failures.append((key, err))
            else:
                results[key] = recs
    records = [r for key in sorted(results) for r in results[key]]
    summary = aggregate(records)
    return records, summary, failures


def aggregate(records: list[MetricsRecord]) -> list[dict]:
    """Mean BER/SNR/GMI per (power, spans, mode, iteration) across trials."""
    cells: dict[tuple, list[MetricsRecord]] = {}
    for r in records:
        cells.setdefault(
            (r.launch_power_dbm, r.n_spans, r.mode, r.turbo_iteration), []
        ).append(r)
    rows = []
    for (power, spans, mode, it), rs in sorted(cells.items()):
        rows.append(
            {
                "power_dbm": power,
                "n_spans": spans,
                "mode": mode,
                "iteration": it,
                "ber": float(np.mean([r.post_fec_ber for r in rs])),
                "snr_db": float(np.mean([r.snr_db for r in rs])),
                "gmi_bits_per_4d": float(
                    np.mean([r.gmi_bits_per_4d_symbol for r in rs])
                ),
                "n_trials": len(rs),
            }
        )
    return rows


def final_iteration_rows(rows: list[dict]) -> list[dict]:
    """Keep, per (power, spans, mode), only the last turbo iteration."""
    best: dict[tuple, dict] = {}
    for row in rows:
        key = (row["power_dbm"], row["n_spans"], row["mode"])
        if key not in best or row["iteration"] > best[key]["iteration"]:
            best[key] = row
    return [best[k] for k in sorted(best)]


def optimal_launch_power(rows: list[dict], mode: str, n_spans: int) -> dict:
    """Row with the highest SNR over the power axis for one mode."""
    cand = [
        r for r in final_iteration_rows(rows)
        if r["mode"] == mode and r["n_spans"] == n_spans
    ]
    if not cand:
        raise HarnessError(f"no results for mode {mode!r} at {n_spans} spans")
    return max(cand, key=lambda r: r["snr_db"])


def emit_tables(rows: list[dict], out_dir: str | Path) -> list[Path]:
    """Plot-ready CSVs: metric-vs-power (per span count) and metric-vs-spans
    (per power), one row per (cell, iteration)."""
    import csv

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    specs = [
        ("power_sweep.csv", ["power_dbm", "mode", "iteration", "n_spans",
                             "ber", "snr_db", "gmi_bits_per_4d"]),
        ("span_sweep.csv", ["n_spans", "mode", "iteration", "power_dbm",
                            "ber", "snr_db", "gmi_bits_per_4d"]),
    ]
    for name, fields in specs:
        path = out_dir / name
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=fields, extrasaction="ignore")
            w.writeheader()
            for row in rows:
                w.writerow(row)
        paths.append(path)
    return paths
