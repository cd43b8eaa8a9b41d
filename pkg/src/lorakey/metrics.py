"""Reciprocity and secrecy metrics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .core import as_bits

DEFAULT_MI_BINS = 16


class UndefinedCorrelationError(ValueError):
    pass


@dataclass(frozen=True)
class MetricsReport:
    """Reciprocity and secrecy figures; Eve's terms are None without her trace."""

    rho: float
    kdr: float | None
    mi_ab_bits: float
    mi_ae_bits: float | None = None
    mi_be_bits: float | None = None
    csk_lower_bits: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def pearson_rho(x_a, x_b) -> float:
    """Sample Pearson correlation of two equal-length series."""
    a = np.asarray(x_a, dtype=np.float64)
    b = np.asarray(x_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("series must be 1-D and of equal length")
    if len(a) < 2:
        raise ValueError("correlation needs at least 2 samples")
    da, db = a - a.mean(), b - b.mean()
    denom = np.sqrt(np.dot(da, da)) * np.sqrt(np.dot(db, db))
    if denom == 0:
        raise UndefinedCorrelationError("a constant series has no correlation")
    return float(np.clip(np.dot(da, db) / denom, -1.0, 1.0))


def kdr(k_a, k_b) -> float:
    """Key disagreement ratio: fraction of positions where the keys differ."""
    a, b = as_bits(k_a), as_bits(k_b)
    if len(a) != len(b):
        raise ValueError(f"key lengths differ ({len(a)} vs {len(b)})")
    if len(a) == 0:
        raise ValueError("KDR is undefined for empty keys")
    return float(np.count_nonzero(a != b)) / len(a)


def _bin_index(x: np.ndarray, bins: int) -> np.ndarray:
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros(len(x), dtype=np.int64)
    idx = np.floor((x - lo) / (hi - lo) * bins).astype(np.int64)
    return np.minimum(idx, bins - 1)


def _entropy_from_counts(counts: np.ndarray) -> float:
    # sorted so the sum does not depend on the histogram's orientation
    p = np.sort(counts[counts > 0]) / counts.sum()
    return float(-(p * np.log2(p)).sum())


def binned_entropy(x, bins: int = DEFAULT_MI_BINS) -> float:
    x = np.asarray(x, dtype=np.float64)
    if len(x) == 0:
        raise ValueError("entropy of an empty series is undefined")
    return _entropy_from_counts(np.bincount(_bin_index(x, bins), minlength=bins))


def mi_plugin(x, y, bins: int = DEFAULT_MI_BINS) -> float:
    """Plug-in mutual information in bits over equal-width bins.

    Each series is binned over its own range. The estimate is biased upward
    by roughly (bins-1)^2 / (2 N ln 2) for independent inputs.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) != len(y):
        raise ValueError("series must have equal length")
    if len(x) == 0:
        raise ValueError("mutual information of empty series is undefined")
    if bins < 2:
        raise ValueError("bins must be at least 2")
    bx, by = _bin_index(x, bins), _bin_index(y, bins)
    joint = np.bincount(bx * bins + by, minlength=bins * bins).reshape(bins, bins)
    h_x = _entropy_from_counts(joint.sum(axis=1))
    h_y = _entropy_from_counts(joint.sum(axis=0))
    h_xy = _entropy_from_counts(joint.ravel())
    return max(0.0, h_x + h_y - h_xy)


def capacity_bound(x_a, x_b, x_e, bins: int = DEFAULT_MI_BINS) -> float:
    """Lower bound I(A;B) - min(I(A;E), I(B;E)) on the secret key capacity.

    Negative values are returned as-is: they flag an insecure setup.
    """
    if not len(x_a) == len(x_b) == len(x_e):
        raise ValueError("series must have equal length")
    i_ab = mi_plugin(x_a, x_b, bins)
    return i_ab - min(mi_plugin(x_a, x_e, bins), mi_plugin(x_b, x_e, bins))


def metrics_report(x_a, x_b, x_e, k_a, k_b, bins: int = DEFAULT_MI_BINS) -> MetricsReport:
    i_ab = mi_plugin(x_a, x_b, bins)
    i_ae = mi_plugin(x_a, x_e, bins)
    i_be = mi_plugin(x_b, x_e, bins)
    return MetricsReport(
        rho=pearson_rho(x_a, x_b),
        kdr=kdr(k_a, k_b),
        mi_ab_bits=i_ab,
        mi_ae_bits=i_ae,
        mi_be_bits=i_be,
        csk_lower_bits=i_ab - min(i_ae, i_be),
    )
