import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ringprune import (
    BitMask,
    CodecError,
    EncodedMask,
    InputError,
    SparseGradient,
    StructuralError,
    compression_ratio,
    decode_mask,
    encode_mask,
    encoded_size,
    or_masks,
    split_by_mask,
)


def _mask(bits):
    return BitMask(np.asarray(bits, dtype=bool))


# --- encode / decode ---------------------------------------------------------


def test_encode_lsb_first():
    enc = encode_mask(_mask([1, 0, 1, 1, 0, 0, 0, 0, 1]))
    assert enc.payload == bytes([0x0D, 0x01])
    assert enc.bit_length == 9


def test_encode_all_zero():
    enc = encode_mask(_mask([0] * 16))
    assert enc.payload == bytes([0x00, 0x00])


def test_encode_empty():
    enc = encode_mask(_mask([]))
    assert enc.payload == b""
    assert enc.bit_length == 0
    assert decode_mask(enc).length == 0


def test_decode_inverse_of_encode():
    mask = decode_mask(EncodedMask(payload=bytes([0x0D, 0x01]), bit_length=9))
    assert mask.bits.tolist() == [True, False, True, True, False, False, False, False, True]


def test_decode_zero_byte():
    assert decode_mask(EncodedMask(payload=bytes([0x00]), bit_length=8)).popcount() == 0


def test_decode_rejects_nonzero_padding():
    with pytest.raises(CodecError):
        decode_mask(EncodedMask(payload=bytes([0x80]), bit_length=4))


def test_decode_rejects_size_mismatch():
    with pytest.raises(CodecError):
        decode_mask(EncodedMask(payload=bytes([0x01, 0x00]), bit_length=4))
    with pytest.raises(CodecError):
        decode_mask(EncodedMask(payload=b"", bit_length=4))


@given(st.lists(st.booleans(), min_size=0, max_size=300))
@settings(max_examples=200, deadline=None)
def test_roundtrip_property(bits):
    mask = _mask(bits)
    enc = encode_mask(mask)
    assert len(enc.payload) == encoded_size(mask.length)
    assert decode_mask(enc) == mask


# --- or_masks ----------------------------------------------------------------


def test_or_elementwise():
    assert or_masks([_mask([1, 0, 0]), _mask([0, 0, 1])]).bits.tolist() == [True, False, True]


def test_or_identity_element():
    m = _mask([1, 0, 1, 1])
    assert or_masks([m, _mask([0, 0, 0, 0])]) == m


def test_or_union_bound():
    # Union bound oracle over random draws: density(OR) <= min(1, r * d).
    rng = np.random.default_rng(5)
    length, r, d = 400, 5, 0.1
    k = int(length * d)
    for _ in range(100):
        masks = []
        for _ in range(r):
            bits = np.zeros(length, dtype=bool)
            bits[rng.choice(length, size=k, replace=False)] = True
            masks.append(BitMask(bits))
        combined = or_masks(masks)
        assert combined.density() <= min(1.0, r * d) + 1e-12
        assert combined.density() >= max(m.density() for m in masks)


def test_or_commutative_associative_idempotent():
    rng = np.random.default_rng(6)
    a, b, c = (BitMask(rng.random(64) < 0.3) for _ in range(3))
    assert or_masks([a, b]) == or_masks([b, a])
    assert or_masks([or_masks([a, b]), c]) == or_masks([a, or_masks([b, c])])
    assert or_masks([a, a]) == a


def test_or_errors():
    with pytest.raises(StructuralError):
        or_masks([])
    with pytest.raises(StructuralError):
        or_masks([_mask([1, 0]), _mask([1, 0, 0])])


# --- split_by_mask ------------------------------------------------------------


def test_split_basic():
    sent, kept = split_by_mask(np.array([1.0, 2.0, 3.0]), _mask([1, 0, 1]))
    assert sent.indices.tolist() == [0, 2]
    assert sent.values.tolist() == [1.0, 3.0]
    assert kept.tolist() == [0.0, 2.0, 0.0]


def test_split_all_ones_keeps_nothing():
    grad = np.array([1.5, -2.0])
    sent, kept = split_by_mask(grad, _mask([1, 1]))
    assert np.array_equal(sent.densify(), grad)
    assert not kept.any()


def test_split_reconstruction_identity():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        n = int(rng.integers(1, 60))
        grad = rng.standard_normal(n)
        mask = BitMask(rng.random(n) < rng.random())
        sent, kept = split_by_mask(grad, mask)
        assert np.array_equal(sent.densify() + kept, grad)  # exact


def test_split_length_mismatch():
    with pytest.raises(StructuralError):
        split_by_mask(np.zeros(3), _mask([1, 0]))


@given(st.lists(st.tuples(st.floats(-1e6, 1e6), st.booleans()), min_size=1, max_size=80))
@settings(max_examples=200, deadline=None)
def test_split_conservation_property(pairs):
    grad = np.array([p[0] for p in pairs])
    mask = _mask([p[1] for p in pairs])
    sent, kept = split_by_mask(grad, mask)
    assert np.array_equal(sent.densify() + kept, grad)
    assert sent.nnz == mask.popcount()


# --- SparseGradient -----------------------------------------------------------


def test_sparse_densify_sparsify_identity():
    sg = SparseGradient(np.array([1, 4, 7]), np.array([0.5, -1.0, 2.0]), 9)
    dense = sg.densify()
    idx = np.flatnonzero(dense)
    assert idx.tolist() == sg.indices.tolist()
    assert dense[idx].tolist() == sg.values.tolist()


def test_sparse_validation():
    with pytest.raises(StructuralError):
        SparseGradient(np.array([3, 1]), np.array([1.0, 2.0]), 5)  # unsorted
    with pytest.raises(StructuralError):
        SparseGradient(np.array([1, 1]), np.array([1.0, 2.0]), 5)  # duplicate
    with pytest.raises(StructuralError):
        SparseGradient(np.array([0, 7]), np.array([1.0, 2.0]), 5)  # out of range
    with pytest.raises(StructuralError):
        SparseGradient(np.array([0]), np.array([1.0, 2.0]), 5)  # count mismatch


# --- compression_ratio ---------------------------------------------------------


def _sparse(nnz, total):
    return SparseGradient(np.arange(nnz), np.ones(nnz), total)


def test_ratio_canonical_example():
    # 1000 params, 4 B dense, 25 entries at 4+4 B, no mask: 4000 / 200 = 20x.
    assert compression_ratio(_sparse(25, 1000), 0, 4, 4, 4000) == 20.0


def test_ratio_full_mask_is_densified():
    ratio = compression_ratio(_sparse(1000, 1000), 0, 4, 4, 4000)
    assert ratio < 1.0


def test_ratio_empty_payload_is_infinite():
    assert compression_ratio(_sparse(0, 1000), 0, 4, 4, 4000) == math.inf


def test_ratio_counts_mask_overhead():
    assert compression_ratio(_sparse(25, 1000), 125, 4, 4, 4000) == pytest.approx(4000 / 325)


def test_ratio_requires_positive_dense_bytes():
    with pytest.raises(InputError):
        compression_ratio(_sparse(1, 10), 0, 4, 4, 0)


def test_ratio_strictly_decreasing_in_nnz():
    ratios = [compression_ratio(_sparse(k, 1000), 8, 4, 4, 4000) for k in range(1, 50)]
    assert all(b < a for a, b in zip(ratios, ratios[1:]))
