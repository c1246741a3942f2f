"""Mask and sparse-gradient wire formats plus compression accounting.

The byte-packed mask layout is the bit-exact format circulated during the
simulator's mask-agreement round: bit i of a mask is stored in byte i // 8 at
bit position i % 8 (least-significant bit first), and any padding bits in the
final byte are zero. Decoders treat nonzero padding or a size mismatch as
wire corruption.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CodecError, InputError, StructuralError

# Default wire sizes. The protocol ships 4-byte values and 4-byte indices for
# sparse entries; masks are bit-packed.
VALUE_BYTES = 4
INDEX_BYTES = 4


@dataclass(frozen=True)
class BitMask:
    """Per-parameter send/keep decisions."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.bits)
        if arr.ndim != 1:
            raise StructuralError(f"mask must be one-dimensional, got shape {arr.shape}")
        if arr.dtype != np.bool_:
            arr = arr.astype(bool)
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "bits", arr)

    @property
    def length(self) -> int:
        return int(self.bits.shape[0])

    def popcount(self) -> int:
        return int(np.count_nonzero(self.bits))

    def density(self) -> float:
        if self.length == 0:
            return 0.0
        return self.popcount() / self.length

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BitMask):
            return NotImplemented
        return self.length == other.length and bool(np.array_equal(self.bits, other.bits))

    def __hash__(self) -> int:  # frozen dataclass with array field
        return hash((self.length, self.bits.tobytes()))

    @classmethod
    def zeros(cls, length: int) -> "BitMask":
        return cls(np.zeros(int(length), dtype=bool))

    @classmethod
    def ones(cls, length: int) -> "BitMask":
        return cls(np.ones(int(length), dtype=bool))


@dataclass(frozen=True)
class EncodedMask:
    """Byte-packed form of a BitMask (LSB-first within each byte)."""

    payload: bytes
    bit_length: int


@dataclass(frozen=True)
class SparseGradient:
    """Sorted coordinate (index, value) pairs over a dense vector of
    ``total_length`` entries."""

    indices: np.ndarray
    values: np.ndarray
    total_length: int

    def __post_init__(self) -> None:
        idx = np.ascontiguousarray(np.asarray(self.indices, dtype=np.int64))
        val = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if idx.ndim != 1 or val.ndim != 1:
            raise StructuralError("indices and values must be one-dimensional")
        if idx.shape[0] != val.shape[0]:
            raise StructuralError(
                f"index/value count mismatch: {idx.shape[0]} vs {val.shape[0]}"
            )
        if idx.size:
            if idx[0] < 0 or idx[-1] >= self.total_length:
                raise StructuralError("indices out of range for total_length")
            if np.any(np.diff(idx) <= 0):
                raise StructuralError("indices must be strictly increasing")
        idx.setflags(write=False)
        val.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    @property
    def nnz(self) -> int:
        return int(self.indices.shape[0])

    def densify(self) -> np.ndarray:
        dense = np.zeros(self.total_length, dtype=np.float64)
        dense[self.indices] = self.values
        return dense

    def payload_bytes(self, value_bytes: int = VALUE_BYTES, index_bytes: int = INDEX_BYTES) -> int:
        return self.nnz * (value_bytes + index_bytes)


def encoded_size(bit_length: int) -> int:
    """Bytes occupied by a bit-packed mask of the given length."""
    return (int(bit_length) + 7) // 8


def encode_mask(mask: BitMask) -> EncodedMask:
    """Pack a mask into bytes, LSB-first, zero-padding the final byte."""
    packed = np.packbits(mask.bits, bitorder="little")
    return EncodedMask(payload=packed.tobytes(), bit_length=mask.length)


def decode_mask(enc: EncodedMask) -> BitMask:
    """Exact inverse of :func:`encode_mask`.

    Raises:
        CodecError: if the payload size disagrees with ``bit_length`` or any
            padding bit is set. Either signals wire corruption.
    """
    expected = encoded_size(enc.bit_length)
    if len(enc.payload) != expected:
        raise CodecError(
            f"payload is {len(enc.payload)} bytes, expected {expected} "
            f"for bit_length {enc.bit_length}"
        )
    if enc.bit_length == 0:
        return BitMask(np.zeros(0, dtype=bool))
    raw = np.frombuffer(enc.payload, dtype=np.uint8)
    bits = np.unpackbits(raw, bitorder="little")
    padding = bits[enc.bit_length:]
    if np.any(padding):
        raise CodecError("nonzero padding bits in final byte")
    return BitMask(bits[: enc.bit_length].astype(bool))


def or_masks(masks: list[BitMask]) -> BitMask:
    """Elementwise logical OR of equal-length masks."""
    if not masks:
        raise StructuralError("or_masks requires at least one mask")
    length = masks[0].length
    for m in masks[1:]:
        if m.length != length:
            raise StructuralError(f"mask length mismatch: {m.length} vs {length}")
    combined = np.zeros(length, dtype=bool)
    for m in masks:
        np.logical_or(combined, m.bits, out=combined)
    return BitMask(combined)


def split_by_mask(grad: np.ndarray, mask: BitMask) -> tuple[SparseGradient, np.ndarray]:
    """Split a dense vector into (sent sparse part, kept remainder).

    No arithmetic touches the values: masked entries are copied into the
    sparse part and zeroed in the remainder, so densify(sent) + kept
    reconstructs the input exactly.
    """
    vec = np.asarray(grad, dtype=np.float64)
    if vec.ndim != 1 or vec.shape[0] != mask.length:
        raise StructuralError(
            f"gradient length {vec.shape} does not match mask length {mask.length}"
        )
    idx = np.flatnonzero(mask.bits)
    sent = SparseGradient(indices=idx, values=vec[idx].copy(), total_length=mask.length)
    kept = np.where(mask.bits, 0.0, vec)
    return sent, kept


def compression_ratio(
    sent: SparseGradient,
    enc_mask_bytes: int,
    value_bytes_per_entry: int = VALUE_BYTES,
    index_bytes_per_entry: int = INDEX_BYTES,
    dense_bytes: int | None = None,
) -> float:
    """Dense payload bytes divided by sparse-encoded payload bytes.

    Larger means more compression; a value below 1 flags a densified payload
    that costs more on the wire than the dense gradient would. Returns +inf
    when the sparse payload is empty and no mask bytes were spent.
    """
    if dense_bytes is None:
        dense_bytes = sent.total_length * value_bytes_per_entry
    if dense_bytes <= 0:
        raise InputError(f"dense_bytes must be > 0, got {dense_bytes}")
    sparse_bytes = sent.nnz * (value_bytes_per_entry + index_bytes_per_entry) + enc_mask_bytes
    if sparse_bytes == 0:
        return math.inf
    return dense_bytes / sparse_bytes
