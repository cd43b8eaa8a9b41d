"""The nine SP 800-22 tests used to vet quantized key sequences.

Parameters are picked from the sequence length so that keys of a few
hundred bits can be tested:

* block frequency: ``M = max(20, n // 10)`` capped at 128
* serial: ``m = floor(log2 n) - 3``
* approximate entropy: ``m = max(1, floor(log2 n) - 6)``
* longest run: the SP 800-22 (M, K) table for n >= 128 / 6272 / 750000
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import gammaincc

from .core import as_bits

DEFAULT_ALPHA = 0.01
HARD_MIN_BITS = 10
SUITE_ORDER = (
    "frequency",
    "block_frequency",
    "runs",
    "longest_run_of_1s",
    "dft",
    "serial",
    "approximate_entropy",
    "cumulative_sums_fwd",
    "cumulative_sums_rev",
)
_ALIASES = {"cusum_fwd": "cumulative_sums_fwd", "cusum_rev": "cumulative_sums_rev"}
MIN_BITS = {
    "frequency": HARD_MIN_BITS,
    "runs": HARD_MIN_BITS,
    "block_frequency": 100,
    "longest_run_of_1s": 128,
    "dft": 100,
    "serial": 100,
    "approximate_entropy": 100,
    "cumulative_sums_fwd": 100,
    "cumulative_sums_rev": 100,
}


class SequenceTooShort(ValueError):
    pass


@dataclass(frozen=True)
class TestResult:
    __test__ = False  # not a pytest class

    test_name: str
    p_values: tuple[float, ...]
    alpha: float = DEFAULT_ALPHA
    applicable: bool = True
    note: str = ""

    @property
    def passed(self) -> bool:
        return self.applicable and all(p > self.alpha for p in self.p_values)

    def to_dict(self) -> dict:
        return {
            "test_name": self.test_name,
            "p_values": list(self.p_values),
            "pass": self.passed,
            "applicable": self.applicable,
            "note": self.note,
        }


@dataclass(frozen=True)
class NistReport:
    sequence_length: int
    alpha: float
    results: tuple[TestResult, ...] = field(default_factory=tuple)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def result(self, name: str) -> TestResult:
        name = _ALIASES.get(name, name)
        return next(r for r in self.results if r.test_name == name)

    def to_dict(self) -> dict:
        return {
            "sequence_length": self.sequence_length,
            "alpha": self.alpha,
            "pass": self.passed,
            "results": [r.to_dict() for r in self.results],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def table(self) -> str:
        lines = [f"{'test':<22}{'p-value(s)':<22}result", "-" * 50]
        lines.append(f"{'sequence length':<22}{self.sequence_length}")
        for r in self.results:
            ps = ", ".join(f"{p:.4f}" for p in r.p_values) or "-"
            status = "PASS" if r.passed else ("n/a" if not r.applicable else "FAIL")
            lines.append(f"{r.test_name:<22}{ps:<22}{status}")
        return "\n".join(lines)


def _igamc(a: float, x: float) -> float:
    return float(gammaincc(a, x))


def _clip(p: float) -> float:
    return min(1.0, max(0.0, p))


def _check_len(bits: np.ndarray, name: str):
    if len(bits) < MIN_BITS[name]:
        raise SequenceTooShort(f"{name} needs at least {MIN_BITS[name]} bits, got {len(bits)}")


def frequency_test(bits, alpha: float = DEFAULT_ALPHA) -> TestResult:
    bits = as_bits(bits)
    _check_len(bits, "frequency")
    n = len(bits)
    s = 2 * int(bits.sum()) - n
    return TestResult("frequency", (math.erfc(abs(s) / math.sqrt(2 * n)),), alpha)


def runs_test(bits, alpha: float = DEFAULT_ALPHA) -> TestResult:
    bits = as_bits(bits)
    _check_len(bits, "runs")
    n = len(bits)
    pi = bits.sum() / n
    if abs(pi - 0.5) >= 2 / math.sqrt(n):
        return TestResult("runs", (0.0,), alpha, note="frequency precheck failed")
    v = 1 + int(np.count_nonzero(bits[1:] != bits[:-1]))
    num = abs(v - 2 * n * pi * (1 - pi))
    den = 2 * math.sqrt(2 * n) * pi * (1 - pi)
    return TestResult("runs", (math.erfc(num / den),), alpha)


def block_size(n: int) -> int:
    return min(128, max(20, n // 10))


def block_frequency_test(bits, alpha: float = DEFAULT_ALPHA, m: int | None = None) -> TestResult:
    bits = as_bits(bits)
    _check_len(bits, "block_frequency")
    m = block_size(len(bits)) if m is None else m
    nblocks = len(bits) // m
    pis = bits[: nblocks * m].reshape(nblocks, m).mean(axis=1)
    chi2 = 4 * m * float(((pis - 0.5) ** 2).sum())
    return TestResult("block_frequency", (_igamc(nblocks / 2, chi2 / 2),), alpha, note=f"M={m}")


@lru_cache(maxsize=None)
def _max_run_cdf(m: int) -> tuple[float, ...]:
    """P(longest run of ones in m fair bits <= r) for r = 0..m."""
    out = []
    for r in range(m + 1):
        # state: length of current trailing run of ones, capped at r
        probs = [1.0] + [0.0] * r
        for _ in range(m):
            nxt = [0.0] * (r + 1)
            total = sum(probs)
            nxt[0] = total / 2
            for j in range(r):
                nxt[j + 1] += probs[j] / 2
            probs = nxt
        out.append(sum(probs))
    return tuple(out)


def longest_run_classes(m: int, lo: int, hi: int) -> np.ndarray:
    """Class probabilities for run <= lo, lo+1, ..., >= hi in an m-bit block."""
    cdf = _max_run_cdf(m)
    probs = [cdf[lo]]
    probs += [cdf[r] - cdf[r - 1] for r in range(lo + 1, hi)]
    probs.append(1.0 - cdf[hi - 1])
    return np.array(probs)


def _longest_run_params(n: int) -> tuple[int, int, int]:
    if n >= 750000:
        return 10000, 10, 16
    if n >= 6272:
        return 128, 4, 9
    return 8, 1, 4


def longest_run_test(bits, alpha: float = DEFAULT_ALPHA) -> TestResult:
    bits = as_bits(bits)
    _check_len(bits, "longest_run_of_1s")
    m, lo, hi = _longest_run_params(len(bits))
    nblocks = len(bits) // m
    blocks = bits[: nblocks * m].reshape(nblocks, m)
    longest = np.zeros(nblocks, dtype=np.int64)
    run = np.zeros(nblocks, dtype=np.int64)
    for j in range(m):
        run = np.where(blocks[:, j] == 1, run + 1, 0)
        longest = np.maximum(longest, run)
    classes = np.clip(longest, lo, hi) - lo
    counts = np.bincount(classes, minlength=hi - lo + 1)
    pi = longest_run_classes(m, lo, hi)
    chi2 = float((((counts - nblocks * pi) ** 2) / (nblocks * pi)).sum())
    k = hi - lo
    return TestResult("longest_run_of_1s", (_igamc(k / 2, chi2 / 2),), alpha, note=f"M={m}")


def dft_test(bits, alpha: float = DEFAULT_ALPHA) -> TestResult:
    bits = as_bits(bits)
    _check_len(bits, "dft")
    n = len(bits)
    x = 2.0 * bits - 1.0
    half = n // 2
    mags = np.abs(np.fft.fft(x))[:half]
    threshold = math.sqrt(math.log(1 / 0.05) * n)
    n0 = 0.95 * half
    n1 = int(np.count_nonzero(mags < threshold))
    d = (n1 - n0) / math.sqrt(half * 0.95 * 0.05 / 2)
    return TestResult("dft", (math.erfc(abs(d) / math.sqrt(2)),), alpha)


def _pattern_counts(bits: np.ndarray, m: int) -> np.ndarray:
    """Counts of overlapping m-bit patterns with wrap-around."""
    if m == 0:
        return np.array([len(bits)])
    ext = np.concatenate([bits, bits[: m - 1]]).astype(np.int64)
    n = len(bits)
    codes = np.zeros(n, dtype=np.int64)
    for j in range(m):
        codes = (codes << 1) | ext[j : j + n]
    return np.bincount(codes, minlength=1 << m)


def _psi2(bits: np.ndarray, m: int) -> float:
    if m <= 0:
        return 0.0
    n = len(bits)
    counts = _pattern_counts(bits, m).astype(np.float64)
    return float((1 << m) / n * (counts**2).sum() - n)


def serial_block_length(n: int) -> int:
    return max(2, int(math.floor(math.log2(n))) - 3)


def apen_block_length(n: int) -> int:
    return max(1, int(math.floor(math.log2(n))) - 6)


def serial_test(bits, alpha: float = DEFAULT_ALPHA, m: int | None = None) -> TestResult:
    bits = as_bits(bits)
    _check_len(bits, "serial")
    m = serial_block_length(len(bits)) if m is None else m
    p0, p1, p2 = _psi2(bits, m), _psi2(bits, m - 1), _psi2(bits, m - 2)
    d1 = p0 - p1
    d2 = p0 - 2 * p1 + p2
    pv = (_igamc(2 ** (m - 2), d1 / 2), _igamc(2 ** (m - 3), d2 / 2))
    return TestResult("serial", pv, alpha, note=f"m={m}")


def _phi(bits: np.ndarray, m: int) -> float:
    counts = _pattern_counts(bits, m)
    c = np.sort(counts[counts > 0]) / len(bits)
    return float((c * np.log(c)).sum())


def approximate_entropy_test(bits, alpha: float = DEFAULT_ALPHA, m: int | None = None) -> TestResult:
    bits = as_bits(bits)
    _check_len(bits, "approximate_entropy")
    n = len(bits)
    m = apen_block_length(n) if m is None else m
    apen = _phi(bits, m) - _phi(bits, m + 1)
    chi2 = 2 * n * (math.log(2) - apen)
    return TestResult("approximate_entropy", (_igamc(2 ** (m - 1), chi2 / 2),), alpha, note=f"m={m}")


def _phi_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2))


def _cusum_p(n: int, z: int) -> float:
    if z == 0:
        return 1.0
    sq = math.sqrt(n)
    total = 1.0
    for k in range(math.trunc((-n / z + 1) / 4), math.trunc((n / z - 1) / 4) + 1):
        total -= _phi_cdf((4 * k + 1) * z / sq) - _phi_cdf((4 * k - 1) * z / sq)
    for k in range(math.trunc((-n / z - 3) / 4), math.trunc((n / z - 1) / 4) + 1):
        total += _phi_cdf((4 * k + 3) * z / sq) - _phi_cdf((4 * k + 1) * z / sq)
    return _clip(total)


def cusum_test(bits, alpha: float = DEFAULT_ALPHA, reverse: bool = False) -> TestResult:
    bits = as_bits(bits)
    name = "cumulative_sums_rev" if reverse else "cumulative_sums_fwd"
    _check_len(bits, name)
    x = 2 * bits.astype(np.int64) - 1
    if reverse:
        x = x[::-1]
    z = int(np.abs(np.cumsum(x)).max())
    return TestResult(name, (_cusum_p(len(bits), z),), alpha)


_TESTS = {
    "frequency": frequency_test,
    "block_frequency": block_frequency_test,
    "runs": runs_test,
    "longest_run_of_1s": longest_run_test,
    "dft": dft_test,
    "serial": serial_test,
    "approximate_entropy": approximate_entropy_test,
    "cumulative_sums_fwd": lambda b, alpha=DEFAULT_ALPHA: cusum_test(b, alpha),
    "cumulative_sums_rev": lambda b, alpha=DEFAULT_ALPHA: cusum_test(b, alpha, reverse=True),
}


def remaining_tests(bits, name: str, alpha: float = DEFAULT_ALPHA) -> TestResult:
    """Run one of the tests other than frequency/runs by name.

    Sequences below the test's minimum length give a not-applicable result
    rather than raising.
    """
    name = _ALIASES.get(name, name)
    if name in ("frequency", "runs") or name not in _TESTS:
        raise KeyError(f"unknown test {name!r}")
    try:
        return _TESTS[name](bits, alpha)
    except SequenceTooShort as exc:
        return TestResult(name, (), alpha, applicable=False, note=str(exc))


def run_suite(bits, alpha: float = DEFAULT_ALPHA) -> NistReport:
    bits = as_bits(bits)
    results = []
    for name in SUITE_ORDER:
        try:
            results.append(_TESTS[name](bits, alpha))
        except SequenceTooShort as exc:
            results.append(TestResult(name, (), alpha, applicable=False, note=str(exc)))
    return NistReport(len(bits), alpha, tuple(results))
