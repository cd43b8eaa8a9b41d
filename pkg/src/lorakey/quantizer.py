"""Differential quantization of RSSI series, index sharing, and baselines.

Comparison positions are 1-based: position ``i`` compares sample ``i+1``
against sample ``i`` (both 1-based), so a series of ``N`` samples has
comparison positions ``1..N-1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import RssiTrace, as_bits

DEFAULT_EPSILON = 2
DEFAULT_CALIBRATION_QUANTILE = 0.95


class InsufficientDataError(ValueError):
    pass


class AlignmentError(ValueError):
    pass


@dataclass(frozen=True)
class QuantizerConfig:
    """Quantizer settings.

    ``epsilon`` is the RSSI resolution in dB. With ``hold_reference`` set, a
    dropped comparison keeps the previous reference sample instead of moving
    on to the next adjacent pair.
    """

    epsilon: int = DEFAULT_EPSILON
    hold_reference: bool = False

    def __post_init__(self):
        if int(self.epsilon) != self.epsilon or self.epsilon < 0:
            raise ValueError("epsilon must be a non-negative integer")


@dataclass(frozen=True)
class QuantizationResult:
    bits: np.ndarray
    kept_indices: tuple[int, ...]
    dropped_indices: tuple[int, ...]

    @property
    def n_samples(self) -> int:
        return len(self.kept_indices) + len(self.dropped_indices) + 1


def differential_quantize(x, cfg: QuantizerConfig | None = None) -> QuantizationResult:
    """Emit one bit per adjacent pair whose change exceeds ``cfg.epsilon``.

    Rises above ``+epsilon`` give 1, falls below ``-epsilon`` give 0, and
    everything in between is dropped. Bounds are strict.
    """
    cfg = cfg or QuantizerConfig()
    x = np.asarray(x, dtype=np.int64)
    if x.ndim != 1 or len(x) < 2:
        raise InsufficientDataError("differential quantization needs at least 2 samples")

    if not cfg.hold_reference:
        diff = x[1:] - x[:-1]
        up = diff > cfg.epsilon
        down = diff < -cfg.epsilon
        keep = up | down
        positions = np.arange(1, len(x))
        return QuantizationResult(
            bits=up[keep].astype(np.uint8),
            kept_indices=tuple(positions[keep].tolist()),
            dropped_indices=tuple(positions[~keep].tolist()),
        )

    bits, kept, dropped = [], [], []
    ref = x[0]
    for i in range(1, len(x)):
        if x[i] > ref + cfg.epsilon:
            bits.append(1)
        elif x[i] < ref - cfg.epsilon:
            bits.append(0)
        else:
            dropped.append(i)
            continue
        kept.append(i)
        ref = x[i]
    return QuantizationResult(np.array(bits, dtype=np.uint8), tuple(kept), tuple(dropped))


def merge_kept_indices(
    res_a: QuantizationResult, res_b: QuantizationResult
) -> tuple[np.ndarray, np.ndarray]:
    """Keep only the bits at comparison positions both parties retained."""
    if res_a.n_samples != res_b.n_samples:
        raise AlignmentError(
            f"series lengths differ ({res_a.n_samples} vs {res_b.n_samples})"
        )
    common = np.intersect1d(res_a.kept_indices, res_b.kept_indices)
    return select_bits(res_a, common), select_bits(res_b, common)


def common_kept(kept_a, kept_b) -> np.ndarray:
    return np.intersect1d(np.asarray(kept_a, dtype=np.int64), np.asarray(kept_b, dtype=np.int64))


def select_bits(res: QuantizationResult, positions) -> np.ndarray:
    """Bits of ``res`` at the given kept comparison positions, in order."""
    kept = np.asarray(res.kept_indices, dtype=np.int64)
    where = np.searchsorted(kept, positions)
    if len(positions) and (
        (where >= len(kept)).any() or (kept[np.minimum(where, len(kept) - 1)] != positions).any()
    ):
        raise AlignmentError("requested positions were not kept by this party")
    return res.bits[where].astype(np.uint8)


def calibrate_epsilon(
    static_trace: RssiTrace | np.ndarray, q: float = DEFAULT_CALIBRATION_QUANTILE
) -> int:
    """Resolution from a static capture: ceiling of the q-quantile of |steps|.

    Uses the inverted-CDF quantile so isolated spikes above the quantile do
    not leak into the estimate.
    """
    if not 0 < q <= 1:
        raise ValueError("q must lie in (0, 1]")
    x = static_trace.rssi if isinstance(static_trace, RssiTrace) else np.asarray(static_trace)
    if len(x) < 2:
        raise InsufficientDataError("calibration needs at least 2 samples")
    steps = np.abs(np.diff(x.astype(np.float64)))
    return int(math.ceil(np.quantile(steps, q, method="inverted_cdf")))


def mean_quantize(x) -> np.ndarray:
    """Baseline threshold quantizer: 1 strictly above the series mean."""
    x = np.asarray(x, dtype=np.float64)
    if len(x) < 1:
        raise InsufficientDataError("mean quantization needs at least 1 sample")
    return as_bits(x > x.mean())
