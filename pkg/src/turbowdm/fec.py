"""LDPC coding: parity-check file I/O, systematic encoding, random
interleaving, and soft-output sum-product decoding.

Parity-check file format: first line "n m", then m lines of space-separated
0-based column indices (one line per check row).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np

from .constellation import L_MAX


class FecError(ValueError):
    pass


def load_parity(path: str | Path) -> list[list[int]]:
    lines = Path(path).read_text().split("\n")
    n, m = (int(t) for t in lines[0].split())
    rows = []
    for i in range(1, m + 1):
        row = sorted(int(t) for t in lines[i].split())
        if row and (row[0] < 0 or row[-1] >= n):
            raise FecError(f"column index out of range in row {i - 1}")
        rows.append(row)
    return rows


def save_parity(path: str | Path, n: int, rows: list[list[int]]) -> None:
    out = [f"{n} {len(rows)}"]
    out += [" ".join(str(c) for c in sorted(r)) for r in rows]
    Path(path).write_text("\n".join(out) + "\n")


def _gf2_row_reduce(h: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """In-place GF(2) row echelon reduction; returns (reduced, pivot columns)."""
    h = h.copy()
    m, n = h.shape
    pivots: list[int] = []
    r = 0
    for col in range(n):
        if r >= m:
            break
        rows = np.nonzero(h[r:, col])[0]
        if rows.size == 0:
            continue
        pr = r + rows[0]
        if pr != r:
            h[[r, pr]] = h[[pr, r]]
        elim = np.nonzero(h[:, col])[0]
        elim = elim[elim != r]
        h[elim] ^= h[r]
        pivots.append(col)
        r += 1
    return h, pivots


@dataclass
class LdpcCode:
    """Binary LDPC code defined by its sparse parity-check matrix.

    Encoding is systematic over the non-pivot (information) columns; parity
    values at the pivot columns are produced by a precomputed GF(2) map.
    """

    n: int
    check_rows: list[list[int]]
    _enc: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.m = len(self.check_rows)
        # flat edge arrays for vectorized message passing, grouped by check
        self.edge_check = np.concatenate(
            [np.full(len(r), i) for i, r in enumerate(self.check_rows)]
        )
        self.edge_var = np.concatenate([np.asarray(r, dtype=int) for r in self.check_rows])
        self.check_starts = np.cumsum([0] + [len(r) for r in self.check_rows[:-1]])
        self._build_encoder()

    @classmethod
    def from_file(cls, path: str | Path) -> "LdpcCode":
        rows = load_parity(path)
        n = int(Path(path).read_text().split("\n")[0].split()[0])
        return cls(n=n, check_rows=rows)

    @classmethod
    def bundled(cls, name: str) -> "LdpcCode":
        with resources.as_file(resources.files("turbowdm.codes") / f"{name}.txt") as p:
            return cls.from_file(p)

    def _build_encoder(self) -> None:
        h = np.zeros((self.m, self.n), dtype=np.uint8)
        for i, r in enumerate(self.check_rows):
            h[i, r] = 1
        red, pivots = _gf2_row_reduce(h)
        rank = len(pivots)
        info_cols = np.setdiff1d(np.arange(self.n), pivots)
        # rows of the reduced system that carry the pivots, in pivot order
        self._enc["pivot_cols"] = np.asarray(pivots)
        self._enc["info_cols"] = info_cols
        # parity = A_info @ u  (mod 2) where reduced rows read pivot + info part
        self._enc["a_info"] = red[:rank][:, info_cols]
        self._enc["rank"] = rank
        self.k = self.n - rank

    @property
    def rate(self) -> Fraction:
        return Fraction(self.k, self.n)

    @property
    def info_positions(self) -> np.ndarray:
        return self._enc["info_cols"]

    def encode(self, info_bits: np.ndarray) -> np.ndarray:
        info_bits = np.asarray(info_bits, dtype=np.uint8)
        if info_bits.size != self.k:
            raise FecError(f"expected {self.k} info bits, got {info_bits.size}")
        cw = np.zeros(self.n, dtype=np.uint8)
        cw[self._enc["info_cols"]] = info_bits
        parity = (self._enc["a_info"] @ info_bits.astype(np.int64)) & 1
        cw[self._enc["pivot_cols"]] = parity.astype(np.uint8)
        return cw

    def syndrome(self, bits: np.ndarray) -> np.ndarray:
        bits = np.asarray(bits, dtype=np.int64)
        return np.bitwise_and(
            np.add.reduceat(bits[self.edge_var], self.check_starts), 1
        )

    def check(self, bits: np.ndarray) -> bool:
        return not self.syndrome(bits).any()


def encode(info_bits: np.ndarray, code: LdpcCode) -> np.ndarray:
    return code.encode(info_bits)


_PHI_MIN = 1e-12


def _phi(x: np.ndarray) -> np.ndarray:
    # phi(x) = -ln tanh(x/2), self-inverse on (0, inf)
    x = np.clip(x, _PHI_MIN, L_MAX)
    return -np.log(np.tanh(0.5 * x))


def decode(
    llrs: np.ndarray, code: LdpcCode, max_iter: int = 50
) -> tuple[np.ndarray, np.ndarray, bool, int]:
    """Flooding sum-product decoding.

    ``llrs`` follow the package convention L = ln P(1)/P(0). Returns
    (a-posteriori L-values, hard bits, converged flag, iterations used).
    """
    llrs = np.asarray(llrs, dtype=float)
    if llrs.size != code.n:
        raise FecError(f"expected {code.n} L-values, got {llrs.size}")
    # classic SPA formulas assume L = ln P(0)/P(1); flip in and out
    lam = np.clip(-llrs, -L_MAX, L_MAX)
    ev, ec, starts = code.edge_var, code.edge_check, code.check_starts
    m_cv = np.zeros(ev.size)
    app = lam

    def settled(a: np.ndarray) -> bool:
        # exact-zero L-values are erasures; their hard decision is undefined
        return bool(np.all(a != 0.0)) and code.check((a < 0).astype(np.uint8))

    it_used = 0
    converged = settled(app)
    if not converged:
        for it in range(1, max_iter + 1):
            it_used = it
            m_vc = np.clip(app[ev] - m_cv, -L_MAX, L_MAX)
            sign = np.where(m_vc < 0, -1.0, 1.0)
            neg = (m_vc < 0).astype(np.int64)
            par = np.add.reduceat(neg, starts) & 1  # per-check sign parity
            mag = _phi(np.abs(m_vc))
            mag_sum = np.add.reduceat(mag, starts)
            ext_mag = _phi(np.clip(mag_sum[ec] - mag, _PHI_MIN, None))
            ext_sign = np.where(par[ec], -1.0, 1.0) * sign
            m_cv = np.clip(ext_sign * ext_mag, -L_MAX, L_MAX)
            app = lam + np.bincount(ev, weights=m_cv, minlength=code.n)
            if settled(app):
                converged = True
                break
    hard = (app < 0).astype(np.uint8)
    return np.clip(-app, -L_MAX, L_MAX), hard, converged, it_used


@dataclass(frozen=True)
class Interleaver:
    """Seeded random permutation of a coded frame."""

    length: int
    seed: int

    @property
    def permutation(self) -> np.ndarray:
        return np.random.default_rng(self.seed).permutation(self.length)

    def interleave(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.size != self.length:
            raise FecError(f"expected length {self.length}, got {x.size}")
        return x[self.permutation]

    def deinterleave(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y)
        if y.size != self.length:
            raise FecError(f"expected length {self.length}, got {y.size}")
        out = np.empty_like(y)
        out[self.permutation] = y
        return out


def make_regular_code(n: int, m: int, col_weight: int = 3, seed: int = 0) -> LdpcCode:
    """Random near-regular LDPC construction with double-edge avoidance and
    best-effort 4-cycle avoidance; adequate for desk-scale simulation codes.
    """
    rng = np.random.default_rng(seed)
    rows: list[set[int]] = [set() for _ in range(m)]
    row_load = np.zeros(m, dtype=int)
    pair_seen: set[tuple[int, int]] = set()
    for col in range(n):
        chosen: list[int] = []
        for _ in range(col_weight):
            order = np.lexsort((rng.random(m), row_load))
            placed = False
            for r in order:
                if r in chosen:
                    continue
                pairs = [(min(r, c), max(r, c)) for c in chosen]
                if any(p in pair_seen for p in pairs) and rng.random() < 0.95:
                    continue
                chosen.append(int(r))
                placed = True
                break
            if not placed:
                r = int(order[0]) if order[0] not in chosen else int(order[1])
                chosen.append(r)
        for r in chosen:
            rows[r].add(col)
            row_load[r] += 1
        for i in range(len(chosen)):
            for j in range(i + 1, len(chosen)):
                a, b = sorted((chosen[i], chosen[j]))
                pair_seen.add((a, b))
    return LdpcCode(n=n, check_rows=[sorted(r) for r in rows])
