"""Binary BCH codes over GF(2^m).

Words are handled internally as Python integers where bit ``d`` holds the
coefficient of ``x**d``. The public bit-sequence view lists coefficients from
the highest degree down, so a systematic codeword reads as the ``k`` message
bits followed by the ``n - k`` parity bits.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .core import as_bits

# Primitive polynomials over GF(2), bit d = coefficient of x^d.
PRIMITIVE_POLYS = {
    2: 0b111,
    3: 0b1011,
    4: 0b10011,
    5: 0b100101,
    6: 0b1000011,
    7: 0b10001001,
    8: 0b100011101,
}

# name -> (m, t)
CODE_PRESETS = {
    "bch15_t3": (4, 3),
    "bch31_t3": (5, 3),
    "bch63_t5": (6, 5),
}
# "BCH(15,3,3)" is not a standard code; t=3 at n=15 gives k=5.
PRESET_ALIASES = {"bch15_3_3": "bch15_t3"}


class DecodeFailure(Exception):
    """The received word is not within the decoding radius of any codeword."""


class GaloisField:
    """GF(2^m) with log/antilog tables built from a primitive polynomial."""

    def __init__(self, m: int, primitive_poly: int | None = None):
        if not 2 <= m <= 8:
            raise ValueError("m must lie in [2, 8]")
        poly = PRIMITIVE_POLYS[m] if primitive_poly is None else primitive_poly
        if poly.bit_length() != m + 1:
            raise ValueError(f"polynomial must have degree {m}")
        self.m = m
        self.poly = poly
        self.order = (1 << m) - 1

        exp = [0] * (2 * self.order)
        log = [-1] * (1 << m)
        x = 1
        for i in range(self.order):
            if log[x] != -1:
                raise ValueError(f"{poly:#b} is not primitive: alpha has order {i}")
            exp[i] = x
            log[x] = i
            x <<= 1
            if x >> m:
                x ^= poly
        if x != 1:
            raise ValueError(f"{poly:#b} is not primitive")
        for i in range(self.order, 2 * self.order):
            exp[i] = exp[i - self.order]
        self.exp = tuple(exp)
        self.log = tuple(log)

    def __repr__(self):
        return f"GaloisField(m={self.m}, poly={self.poly:#b})"

    def mul(self, a: int, b: int) -> int:
        if a == 0 or b == 0:
            return 0
        return self.exp[self.log[a] + self.log[b]]

    def inv(self, a: int) -> int:
        if a == 0:
            raise ZeroDivisionError("0 has no inverse in GF(2^m)")
        return self.exp[(self.order - self.log[a]) % self.order]

    def alpha_pow(self, e: int) -> int:
        return self.exp[e % self.order]


def gf_mul(a: int, b: int, f: GaloisField) -> int:
    return f.mul(a, b)


def gf2_polymod(a: int, b: int) -> int:
    """Remainder of a(x) / b(x) over GF(2)."""
    db = b.bit_length() - 1
    while a and a.bit_length() - 1 >= db:
        a ^= b << (a.bit_length() - 1 - db)
    return a


def gf2_polymul(a: int, b: int) -> int:
    out = 0
    while b:
        if b & 1:
            out ^= a
        a <<= 1
        b >>= 1
    return out


def minimal_polynomial(f: GaloisField, j: int) -> int:
    """Minimal polynomial of alpha^j over GF(2), as a bitmask."""
    coset = []
    e = j % f.order
    while e not in coset:
        coset.append(e)
        e = (2 * e) % f.order
    # multiply out prod (x - alpha^c); coefficients are field elements
    coeffs = [1]
    for c in coset:
        root = f.alpha_pow(c)
        nxt = [0] * (len(coeffs) + 1)
        for i, a in enumerate(coeffs):
            nxt[i + 1] ^= a
            nxt[i] ^= f.mul(a, root)
        coeffs = nxt
    if any(a not in (0, 1) for a in coeffs):
        raise ArithmeticError("minimal polynomial has coefficients outside GF(2)")
    return sum(a << i for i, a in enumerate(coeffs))


class BchCode:
    """Narrow-sense binary BCH code of length 2^m - 1 and designed distance 2t+1.

    ``k`` follows from the degree of the generator, the lcm of the minimal
    polynomials of alpha^1 .. alpha^2t.
    """

    def __init__(self, m: int, t: int, primitive_poly: int | None = None, name: str | None = None):
        self.field = GaloisField(m, primitive_poly)
        self.n = self.field.order
        if not 1 <= t or 2 * t >= self.n:
            raise ValueError(f"t={t} is not a valid designed capability for n={self.n}")
        self.t = t

        factors = []
        for j in range(1, 2 * t + 1):
            mp = minimal_polynomial(self.field, j)
            if mp not in factors:
                factors.append(mp)
        g = 1
        for mp in factors:
            g = gf2_polymul(g, mp)
        if gf2_polymod((1 << self.n) | 1, g) != 0:
            raise ArithmeticError("generator does not divide x^n + 1")
        self.generator = g
        self.k = self.n - (g.bit_length() - 1)
        if self.k < 1:
            raise ValueError(f"t={t} leaves no message bits at n={self.n}")
        self.name = name or f"bch{self.n}_t{t}"
        self._build_tables()

    def __repr__(self):
        return f"BchCode(n={self.n}, k={self.k}, t={self.t})"

    @property
    def generator_bits(self) -> np.ndarray:
        """Generator coefficients from x^(n-k) down to x^0."""
        deg = self.n - self.k
        return as_bits([(self.generator >> d) & 1 for d in range(deg, -1, -1)])

    def _build_tables(self):
        f, n, r = self.field, self.n, self.n - self.k
        self._parity_of_msg_bit = [gf2_polymod(1 << (i + r), self.generator) for i in range(self.k)]
        # packed syndromes: S_j occupies bits [m*(j-1), m*j)
        per_degree = []
        for d in range(n):
            packed = 0
            for j in range(1, 2 * self.t + 1):
                packed |= f.alpha_pow(j * d) << (f.m * (j - 1))
            per_degree.append(packed)
        self._synd_tables = []
        for base in range(0, n, 8):
            table = [0] * 256
            for byte in range(1, 256):
                low = byte & -byte
                d = base + low.bit_length() - 1
                table[byte] = table[byte ^ low] ^ (per_degree[d] if d < n else 0)
            self._synd_tables.append(table)

    # integer-level API, used on hot paths

    def encode_int(self, msg: int) -> int:
        parity = 0
        i = 0
        m = msg
        while m:
            if m & 1:
                parity ^= self._parity_of_msg_bit[i]
            m >>= 1
            i += 1
        return (msg << (self.n - self.k)) | parity

    def syndromes_packed(self, word: int) -> int:
        s = 0
        for table in self._synd_tables:
            s ^= table[word & 0xFF]
            word >>= 8
        return s

    def syndromes_int(self, word: int) -> list[int]:
        s = self.syndromes_packed(word)
        mask = self.field.order
        return [(s >> (self.field.m * j)) & mask for j in range(2 * self.t)]

    def error_locator(self, synd: list[int]) -> list[int]:
        """Berlekamp-Massey: connection polynomial coefficients, lowest first."""
        f = self.field
        C, B = [1], [1]
        L, shift, b = 0, 1, 1
        for r in range(len(synd)):
            d = synd[r]
            for i in range(1, L + 1):
                if i < len(C):
                    d ^= f.mul(C[i], synd[r - i])
            if d == 0:
                shift += 1
                continue
            coef = f.mul(d, f.inv(b))
            T = list(C)
            need = len(B) + shift
            if len(C) < need:
                C = C + [0] * (need - len(C))
            for i, bi in enumerate(B):
                C[i + shift] ^= f.mul(coef, bi)
            if 2 * L <= r:
                L = r + 1 - L
                B, b, shift = T, d, 1
            else:
                shift += 1
        while len(C) > 1 and C[-1] == 0:
            C.pop()
        if len(C) - 1 != L:
            raise DecodeFailure("error locator degree does not match register length")
        return C

    def decode_int(self, word: int) -> tuple[int, list[int]]:
        """Correct up to t errors; returns (codeword, error degrees)."""
        if self.syndromes_packed(word) == 0:
            return word, []
        f = self.field
        synd = self.syndromes_int(word)
        locator = self.error_locator(synd)
        nu = len(locator) - 1
        if nu > self.t:
            raise DecodeFailure(f"{nu} errors located, capability is {self.t}")
        # Chien search: error at degree d iff locator(alpha^-d) == 0
        logs = [f.log[c] if c else -1 for c in locator]
        degrees = []
        for d in range(self.n):
            inv = (f.order - d) % f.order
            acc = 0
            for i, lc in enumerate(logs):
                if lc >= 0:
                    acc ^= f.exp[(lc + i * inv) % f.order]
            if acc == 0:
                degrees.append(d)
        if len(degrees) != nu:
            raise DecodeFailure("error locator roots are not all in the field")
        corrected = word
        for d in degrees:
            corrected ^= 1 << d
        if self.syndromes_packed(corrected) != 0:
            raise DecodeFailure("correction did not yield a codeword")
        return corrected, degrees

    def random_codeword_int(self, rng: np.random.Generator) -> int:
        msg = int(rng.integers(0, 1 << self.k)) if self.k < 63 else int(
            "".join(map(str, rng.integers(0, 2, self.k))), 2
        )
        return self.encode_int(msg)

    # bit-sequence API

    def bits_to_int(self, bits) -> int:
        value = 0
        for bit in bits:
            value = (value << 1) | int(bit)
        return value

    def int_to_bits(self, value: int, length: int | None = None) -> np.ndarray:
        length = self.n if length is None else length
        return as_bits([(value >> (length - 1 - j)) & 1 for j in range(length)])


def bch_encode(msg, code: BchCode) -> np.ndarray:
    """Systematic encoding: message bits followed by x^(n-k)·msg(x) mod g(x)."""
    msg = as_bits(msg)
    if len(msg) != code.k:
        raise ValueError(f"message must have {code.k} bits, got {len(msg)}")
    return code.int_to_bits(code.encode_int(code.bits_to_int(msg)))


def bch_syndromes(word, code: BchCode) -> list[int]:
    word = as_bits(word)
    if len(word) != code.n:
        raise ValueError(f"word must have {code.n} bits, got {len(word)}")
    return code.syndromes_int(code.bits_to_int(word))


def bch_decode(word, code: BchCode) -> tuple[np.ndarray, set[int]]:
    """Bounded-distance decoding.

    Returns the corrected codeword and the flipped positions (indices into
    the bit sequence). Raises :class:`DecodeFailure` when the word cannot be
    corrected within ``code.t`` errors.
    """
    word = as_bits(word)
    if len(word) != code.n:
        raise ValueError(f"word must have {code.n} bits, got {len(word)}")
    cw, degrees = code.decode_int(code.bits_to_int(word))
    return code.int_to_bits(cw), {code.n - 1 - d for d in degrees}


def get_code(name: str) -> BchCode:
    """Look up a code preset such as ``bch15_t3``."""
    return _preset(PRESET_ALIASES.get(name, name))


@lru_cache(maxsize=None)
def _preset(canonical: str) -> BchCode:
    try:
        m, t = CODE_PRESETS[canonical]
    except KeyError:
        raise KeyError(f"unknown code preset {canonical!r}; choose from {sorted(CODE_PRESETS)}") from None
    return BchCode(m, t, name=canonical)
