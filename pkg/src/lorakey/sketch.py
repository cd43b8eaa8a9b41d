"""Code-offset secure sketch reconciliation and hash privacy amplification."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .bch import BchCode, DecodeFailure, get_code
from .core import as_bits

HASH_NAME = "sha256"
DIGEST_BITS = 256
DEFAULT_KEY_BITS = 128
STAGES = ("quantized", "reconciled", "amplified")


class ReconcileFailure(Exception):
    def __init__(self, failed_blocks):
        self.failed_blocks = tuple(failed_blocks)
        super().__init__(f"blocks {list(self.failed_blocks)} could not be decoded")


class EntropyBudgetError(ValueError):
    pass


class UnsupportedLengthError(ValueError):
    pass


class SketchFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SketchMessage:
    """Public helper data: one ``n``-bit offset per key block."""

    code_id: str
    block_count: int
    s_blocks: tuple[int, ...]
    pad_len: int
    n: int

    def __post_init__(self):
        if self.block_count < 1 or len(self.s_blocks) != self.block_count:
            raise SketchFormatError("block_count must match the number of s blocks")
        if not 0 <= self.pad_len < self.n:
            raise SketchFormatError("pad_len must lie in [0, n)")
        if any(not 0 <= s < (1 << self.n) for s in self.s_blocks):
            raise SketchFormatError(f"every s block must fit in {self.n} bits")

    @property
    def key_length(self) -> int:
        return self.block_count * self.n - self.pad_len

    def to_json(self) -> str:
        width = (self.n + 3) // 4
        return json.dumps(
            {
                "code_id": self.code_id,
                "block_count": self.block_count,
                "pad_len": self.pad_len,
                "s_blocks": [format(s, f"0{width}x") for s in self.s_blocks],
            },
            indent=2,
        ) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SketchMessage":
        try:
            obj = json.loads(text)
            code = get_code(obj["code_id"])
            return cls(
                code_id=obj["code_id"],
                block_count=int(obj["block_count"]),
                s_blocks=tuple(int(h, 16) for h in obj["s_blocks"]),
                pad_len=int(obj["pad_len"]),
                n=code.n,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SketchFormatError(f"malformed sketch message: {exc}") from exc


@dataclass(frozen=True)
class KeyMaterial:
    bits: np.ndarray
    stage: str

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}")

    def __len__(self):
        return len(self.bits)


def split_blocks(bits, n: int) -> tuple[list[int], int]:
    """Zero-pad to a multiple of ``n`` and pack each block into an int."""
    bits = as_bits(bits)
    pad_len = (-len(bits)) % n
    padded = np.concatenate([bits, np.zeros(pad_len, dtype=np.uint8)])
    blocks = []
    for start in range(0, len(padded), n):
        value = 0
        for b in padded[start:start + n]:
            value = (value << 1) | int(b)
        blocks.append(value)
    return blocks, pad_len


def join_blocks(blocks, n: int, pad_len: int) -> np.ndarray:
    bits = [(v >> (n - 1 - j)) & 1 for v in blocks for j in range(n)]
    return as_bits(bits[: len(bits) - pad_len])


def sketch_block(key_block: int, codeword: int) -> int:
    return key_block ^ codeword


def make_sketch(k_a, code: BchCode, rng: np.random.Generator) -> SketchMessage:
    """Alice's side: hide each key block behind a fresh random codeword."""
    k_a = as_bits(k_a)
    if len(k_a) < 1:
        raise ValueError("cannot sketch an empty key")
    blocks, pad_len = split_blocks(k_a, code.n)
    s = tuple(sketch_block(b, code.random_codeword_int(rng)) for b in blocks)
    return SketchMessage(code.name, len(blocks), s, pad_len, code.n)


def recover_key(k_b, sketch: SketchMessage, code: BchCode) -> KeyMaterial:
    """Bob's side: decode k_b XOR s back onto the code and undo the offset.

    Raises :class:`ReconcileFailure` listing every undecodable block.
    """
    if sketch.code_id != code.name or sketch.n != code.n:
        raise ValueError(f"sketch was made with {sketch.code_id}, not {code.name}")
    k_b = as_bits(k_b)
    if len(k_b) != sketch.key_length:
        raise ValueError(f"key has {len(k_b)} bits, sketch expects {sketch.key_length}")
    blocks, _ = split_blocks(k_b, code.n)
    out, failed = [], []
    for i, (kb, s) in enumerate(zip(blocks, sketch.s_blocks)):
        try:
            c_hat, _ = code.decode_int(kb ^ s)
        except DecodeFailure:
            failed.append(i)
            continue
        out.append(c_hat ^ s)
    if failed:
        raise ReconcileFailure(failed)
    return KeyMaterial(join_blocks(out, code.n, sketch.pad_len), "reconciled")


def leaked_bits(sketch: SketchMessage, code: BchCode) -> int:
    return sketch.block_count * (code.n - code.k)


def effective_entropy(key_len: int, sketch: SketchMessage, code: BchCode) -> int:
    """Key length minus the n-k bits per block disclosed by the sketch."""
    return key_len - leaked_bits(sketch, code)


def pack_key(bits) -> bytes:
    """Canonical byte packing: 4-byte big-endian bit length, then MSB-first bits."""
    bits = as_bits(bits)
    return len(bits).to_bytes(4, "big") + np.packbits(bits).tobytes()


def amplify(key, out_len_bits: int = DEFAULT_KEY_BITS, salt: bytes = b"") -> KeyMaterial:
    """Compress ``key`` to ``out_len_bits`` with truncated SHA-256."""
    key = as_bits(key)
    if not 1 <= out_len_bits <= DIGEST_BITS:
        raise UnsupportedLengthError(f"output length must lie in [1, {DIGEST_BITS}] bits")
    if len(key) < out_len_bits:
        raise EntropyBudgetError(f"key has {len(key)} bits, cannot yield {out_len_bits}")
    digest = hashlib.new(HASH_NAME, bytes(salt) + pack_key(key)).digest()
    bits = np.unpackbits(np.frombuffer(digest, dtype=np.uint8))[:out_len_bits]
    return KeyMaterial(bits.astype(np.uint8), "amplified")


def confirmation_tag(key) -> str:
    """Hash exchanged to confirm both parties hold the same key."""
    return hashlib.new(HASH_NAME, b"key-confirmation" + pack_key(key)).hexdigest()
