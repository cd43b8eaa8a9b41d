import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lorakey.nist import (
    SUITE_ORDER,
    SequenceTooShort,
    TestResult,
    approximate_entropy_test,
    block_frequency_test,
    cusum_test,
    dft_test,
    frequency_test,
    longest_run_classes,
    longest_run_test,
    remaining_tests,
    run_suite,
    runs_test,
    serial_test,
)

# worked-example sequences from SP 800-22
EPS100 = (
    "1100100100001111110110101010001000100001011010001100001000110100"
    "110001001100011001100010100010111000"
)
LONGEST128 = (
    "1100110000010101011011000100110011100000000000100100110101010001"
    "0001001111010110100000001101011111001100111001101101100010110010"
)


def bits(text):
    return [int(c) for c in text]


def p(result):
    return result.p_values[0]


@pytest.mark.parametrize(
    "fn, seq, expected, tol",
    [
        (frequency_test, "1011010101", 0.527089, 1e-6),
        (frequency_test, EPS100, 0.109599, 1e-6),
        (runs_test, "1001101011", 0.147232, 1e-6),
        (runs_test, EPS100, 0.500798, 1e-6),
        (lambda b: block_frequency_test(b, m=10), EPS100, 0.706438, 1e-6),
        (lambda b: approximate_entropy_test(b, m=2), EPS100, 0.235301, 1e-6),
        (cusum_test, EPS100, 0.219194, 1e-6),
        (lambda b: cusum_test(b, reverse=True), EPS100, 0.114866, 1e-6),
        # the published value uses class probabilities rounded to 4 places
        (longest_run_test, LONGEST128, 0.180598, 1e-4),
    ],
)
def test_worked_examples(fn, seq, expected, tol):
    assert p(fn(bits(seq))) == pytest.approx(expected, abs=tol)


def test_runs_on_1011010101():
    # V = 9 runs, pi = 0.6: erfc(|9 - 4.8| / (2 sqrt(20) 0.24))
    expected = math.erfc(4.2 / (2 * math.sqrt(20) * 0.24))
    assert p(runs_test(bits("1011010101"))) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.005658, abs=1e-6)


def dft_oracle(b):
    n = len(b)
    x = [2 * v - 1 for v in b]
    mags = [abs(sum(x[t] * cmath.exp(-2j * math.pi * k * t / n) for t in range(n))) for k in range(n // 2)]
    thresh = math.sqrt(math.log(1 / 0.05) * n)
    n1 = sum(m < thresh for m in mags)
    n0 = 0.95 * n / 2
    d = (n1 - n0) / math.sqrt(n * 0.95 * 0.05 / 4)
    return math.erfc(abs(d) / math.sqrt(2))


@pytest.mark.parametrize("seed", range(5))
def test_dft_matches_direct_transform(seed):
    b = np.random.default_rng(seed).integers(0, 2, 200).tolist()
    assert p(dft_test(b)) == pytest.approx(dft_oracle(b), abs=1e-12)


def test_longest_run_class_probabilities():
    # table values for M = 8 and M = 128
    assert longest_run_classes(8, 1, 4) == pytest.approx([0.2148, 0.3672, 0.2305, 0.1875], abs=1e-4)
    assert longest_run_classes(128, 4, 9) == pytest.approx(
        [0.1174, 0.2430, 0.2493, 0.1752, 0.1027, 0.1124], abs=1e-4
    )


def test_serial_two_p_values():
    r = serial_test(bits(EPS100), m=2)
    assert len(r.p_values) == 2
    assert r.note == "m=2"


@pytest.mark.parametrize("name", ["frequency", "runs", "cumulative_sums_fwd", "cumulative_sums_rev"])
def test_all_zeros_fail(name):
    rep = run_suite([0] * 400)
    assert not rep.result(name).passed
    assert not rep.passed


def test_alternation():
    alt = [0, 1] * 200
    assert p(runs_test(alt[:100])) < 1e-10
    assert not dft_test(alt).passed


def test_all_ones_runs_precheck():
    r = runs_test([1] * 100)
    assert r.p_values == (0.0,)
    assert not r.passed


@pytest.mark.parametrize("fn", [frequency_test, runs_test])
def test_hard_minimum(fn):
    with pytest.raises(SequenceTooShort):
        fn([1, 0] * 4)


def test_short_sequence_not_applicable():
    rep = run_suite([1, 0, 1, 1, 0, 0, 1, 0, 1, 1, 0, 1])
    r = rep.result("dft")
    assert not r.applicable and not r.passed and r.p_values == ()
    assert rep.result("frequency").applicable
    assert remaining_tests([1, 0] * 10, "cusum_fwd").applicable is False


def test_remaining_tests_names():
    b = np.random.default_rng(0).integers(0, 2, 400)
    for name in SUITE_ORDER[1:]:
        if name != "runs":
            assert remaining_tests(b, name).test_name == name
    with pytest.raises(KeyError):
        remaining_tests(b, "frequency")


def test_suite_layout():
    b = np.random.default_rng(1).integers(0, 2, 397)
    rep = run_suite(b)
    assert tuple(r.test_name for r in rep.results) == SUITE_ORDER
    assert rep.sequence_length == 397
    d = rep.to_dict()
    assert [r["test_name"] for r in d["results"]] == list(SUITE_ORDER)
    assert "pass" in d["results"][0]


def test_pass_needs_every_p_above_alpha():
    assert TestResult("serial", (0.5, 0.02), 0.01).passed
    assert not TestResult("serial", (0.5, 0.01), 0.01).passed


bitseqs = st.lists(st.integers(0, 1), min_size=128, max_size=300)


@settings(max_examples=60, deadline=None)
@given(bitseqs)
def test_symmetries(b):
    comp = [1 - v for v in b]
    rev = b[::-1]
    assert p(frequency_test(b)) == pytest.approx(p(frequency_test(comp)))
    assert p(frequency_test(b)) == pytest.approx(p(frequency_test(rev)))
    assert p(runs_test(b)) == pytest.approx(p(runs_test(rev)))
    assert p(cusum_test(rev)) == pytest.approx(p(cusum_test(b, reverse=True)))


@settings(max_examples=40, deadline=None)
@given(bitseqs)
def test_p_values_in_unit_interval(b):
    for r in run_suite(b).results:
        assert all(0.0 <= v <= 1.0 and math.isfinite(v) for v in r.p_values)


def test_prng_pass_rate_n400():
    rng = np.random.default_rng(2024)
    fails = {name: 0 for name in SUITE_ORDER}
    for _ in range(100):
        for r in run_suite(rng.integers(0, 2, 400)).results:
            fails[r.test_name] += not r.passed
    # 1% expected per test, 2% for serial's pair; 7 of 100 is far in the tail
    assert max(fails.values()) <= 7
