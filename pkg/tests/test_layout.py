import pytest

from ringprune import LayerLayout, StructuralError


def test_from_sizes_builds_contiguous_offsets():
    layout = LayerLayout.from_sizes([("a", 3), ("b", 2), ("c", 5)])
    assert layout.names == ("a", "b", "c")
    assert layout.offsets == (0, 3, 5)
    assert layout.lengths == (3, 2, 5)
    assert layout.total_length == 10
    assert layout.n_layers == 3
    assert layout.slice_of(1) == slice(3, 5)


def test_every_index_belongs_to_exactly_one_layer():
    layout = LayerLayout.from_sizes([("a", 4), ("b", 6)])
    seen = []
    for j in range(layout.n_layers):
        sl = layout.slice_of(j)
        seen.extend(range(sl.start, sl.stop))
    assert seen == list(range(layout.total_length))


def test_gap_between_layers_rejected():
    with pytest.raises(StructuralError):
        LayerLayout(("a", "b"), (0, 4), (3, 2))


def test_overlap_rejected():
    with pytest.raises(StructuralError):
        LayerLayout(("a", "b"), (0, 2), (3, 2))


def test_zero_length_layer_rejected():
    # A zero-length layer would break strictly increasing offsets.
    with pytest.raises(StructuralError):
        LayerLayout.from_sizes([("a", 3), ("empty", 0), ("b", 2)])


def test_nonzero_first_offset_rejected():
    with pytest.raises(StructuralError):
        LayerLayout(("a",), (1,), (3,))


def test_duplicate_names_rejected():
    with pytest.raises(StructuralError):
        LayerLayout.from_sizes([("a", 3), ("a", 2)])


def test_empty_layout_rejected():
    with pytest.raises(StructuralError):
        LayerLayout((), (), ())


def test_slice_out_of_range():
    layout = LayerLayout.from_sizes([("a", 3)])
    with pytest.raises(StructuralError):
        layout.slice_of(1)
    with pytest.raises(StructuralError):
        layout.slice_of(-1)
