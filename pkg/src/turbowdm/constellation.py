"""Square QAM constellations, Gray labeling, and soft bit/symbol statistics.

Bit L-value convention throughout the package: L = ln P(b=1) / P(b=0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# L-values beyond this are numerically saturated; clip to keep exponentials finite.
L_MAX = 40.0

# Relative floor on the equivalent-channel noise variance; prevents the
# singularity when priors become certain and the residual variance collapses.
NU2_FLOOR_REL = 1e-9


class ConstellationError(ValueError):
    pass


def _gray(n: int) -> int:
    return n ^ (n >> 1)


@dataclass(frozen=True)
class Constellation:
    """Unit-energy square QAM with reflected-binary Gray labeling.

    ``points`` has shape (M,), ``bit_labels`` shape (M, q) with the first
    q/2 bits addressing the in-phase level and the last q/2 the quadrature
    level, each axis Gray coded.
    """

    order: int
    points: np.ndarray
    bit_labels: np.ndarray
    energy: float

    @property
    def q(self) -> int:
        return self.bit_labels.shape[1]

    def labels_as_int(self) -> np.ndarray:
        w = 1 << np.arange(self.q - 1, -1, -1)
        return self.bit_labels @ w


def build_constellation(order: int) -> Constellation:
    """Build a unit-average-energy Gray-labeled square QAM constellation."""
    if order not in (4, 16, 64, 256):
        raise ConstellationError(f"unsupported QAM order {order}")
    m = int(round(np.sqrt(order)))
    q = int(round(np.log2(order)))
    half_q = q // 2
    levels = np.arange(-(m - 1), m, 2, dtype=float)
    scale = np.sqrt(2.0 * (order - 1) / 3.0)

    points = np.empty(order, dtype=complex)
    labels = np.zeros((order, q), dtype=np.uint8)
    for ix in range(m):
        gx = _gray(ix)
        for iy in range(m):
            gy = _gray(iy)
            idx = ix * m + iy
            points[idx] = (levels[ix] + 1j * levels[iy]) / scale
            for b in range(half_q):
                labels[idx, b] = (gx >> (half_q - 1 - b)) & 1
                labels[idx, half_q + b] = (gy >> (half_q - 1 - b)) & 1
    energy = float(np.mean(np.abs(points) ** 2))
    return Constellation(order=order, points=points, bit_labels=labels, energy=energy)


def bit_probs_from_llrs(llrs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return elementwise (log P(b=0), log P(b=1)) from L-values."""
    l = np.clip(llrs, -L_MAX, L_MAX)
    # log sigmoid, stable on both tails
    logp1 = -np.logaddexp(0.0, -l)
    logp0 = -np.logaddexp(0.0, l)
    return logp0, logp1


def symbol_priors(llrs: np.ndarray, c: Constellation) -> np.ndarray:
    """Per-symbol prior probability table from a-priori bit L-values.

    ``llrs`` is flat with length q*m or already shaped (m, q). Returns an
    (m, M) array of probabilities, each row normalized to 1.
    """
    q = c.q
    llrs = np.asarray(llrs, dtype=float)
    if llrs.ndim == 1:
        if llrs.size % q:
            raise ConstellationError(
                f"LLR length {llrs.size} not divisible by q={q}"
            )
        llrs = llrs.reshape(-1, q)
    elif llrs.shape[1] != q:
        raise ConstellationError("LLR block shape does not match constellation")
    logp0, logp1 = bit_probs_from_llrs(llrs)
    b = c.bit_labels.astype(float)  # (M, q)
    logp = logp1 @ b.T + logp0 @ (1.0 - b.T)  # (m, M)
    logp -= logp.max(axis=1, keepdims=True)
    p = np.exp(logp)
    p /= p.sum(axis=1, keepdims=True)
    return p


def soft_stats(priors: np.ndarray, c: Constellation) -> tuple[np.ndarray, np.ndarray]:
    """First/second-order symbol statistics from a prior probability table.

    Returns (mean, variance), each of shape (m,).
    """
    priors = np.atleast_2d(priors)
    mean = priors @ c.points
    e2 = priors @ (np.abs(c.points) ** 2)
    var = np.maximum(e2 - np.abs(mean) ** 2, 0.0)
    return mean, var


def extrinsic_llrs(
    estimates: np.ndarray,
    scale: np.ndarray | float,
    noise_var: np.ndarray | float,
    prior_llrs: np.ndarray | None,
    c: Constellation,
    l_max: float = L_MAX,
) -> np.ndarray:
    """Extrinsic bit L-values from equalized symbols on the equivalent
    AWGN channel s_hat = mu*s + eta.

    The prior of bit l itself is excluded from the likelihood weighting of
    L_e(b^l); only the priors of the other bits of the same symbol enter.
    Likelihood sums run in the log domain. Returns shape (m, q).
    """
    s_hat = np.atleast_1d(np.asarray(estimates, dtype=complex))
    m = s_hat.size
    q = c.q
    mu = np.broadcast_to(np.asarray(scale, dtype=float), (m,))
    floor = NU2_FLOOR_REL * c.energy
    nu2 = np.asarray(noise_var, dtype=float)
    if np.any(nu2 <= 0):
        nu2 = np.maximum(nu2, floor)
    nu2 = np.broadcast_to(nu2, (m,))

    # (m, M) log-likelihoods, constants dropped (they cancel in the ratio)
    d = s_hat[:, None] - mu[:, None] * c.points[None, :]
    loglik = -(np.abs(d) ** 2) / nu2[:, None]

    if prior_llrs is None:
        lw_bit = np.zeros((m, q, 2))
    else:
        prior_llrs = np.asarray(prior_llrs, dtype=float).reshape(m, q)
        logp0, logp1 = bit_probs_from_llrs(prior_llrs)
        lw_bit = np.stack([logp0, logp1], axis=-1)  # (m, q, 2)

    b = c.bit_labels  # (M, q)
    # total prior log-weight of each symbol, then remove bit l's own term
    w_total = np.zeros((m, c.order))
    for r in range(q):
        w_total += lw_bit[:, r, b[:, r]]

    out = np.empty((m, q))
    for l in range(q):
        w_excl = w_total - lw_bit[:, l, b[:, l]]
        metric = loglik + w_excl
        num = _logsumexp_masked(metric, b[:, l] == 1)
        den = _logsumexp_masked(metric, b[:, l] == 0)
        out[:, l] = num - den
    return np.clip(out, -l_max, l_max)


def _logsumexp_masked(metric: np.ndarray, mask: np.ndarray) -> np.ndarray:
    sub = metric[:, mask]
    mx = sub.max(axis=1)
    return mx + np.log(np.sum(np.exp(sub - mx[:, None]), axis=1))


def hard_decide(symbols: np.ndarray, c: Constellation) -> np.ndarray:
    """Indices of the nearest constellation points."""
    d = np.abs(np.atleast_1d(symbols)[:, None] - c.points[None, :])
    return np.argmin(d, axis=1)


def map_bits(bits: np.ndarray, c: Constellation) -> np.ndarray:
    """Map a flat bit sequence (length divisible by q) to symbols."""
    q = c.q
    bits = np.asarray(bits, dtype=np.uint8).reshape(-1, q)
    w = 1 << np.arange(q - 1, -1, -1)
    idx_of_label = np.empty(c.order, dtype=int)
    idx_of_label[c.labels_as_int()] = np.arange(c.order)
    return c.points[idx_of_label[bits @ w]]
