"""Contract checks shared by estimators and grid ops."""

import numpy as np
import pytest

from davi.errors import ValidationError
from davi.validation import (
    check_binary_map,
    check_image_tile,
    check_pair,
    check_pairs_array,
    check_probability_map,
    check_same_shape,
    check_target_maps,
)


def test_probability_map_canonicalizes_dtype():
    out = check_probability_map([[0.0, 1.0], [0.25, 0.5]])
    assert out.dtype == np.float32
    assert out.shape == (2, 2)


@pytest.mark.parametrize(
    "bad",
    [
        np.array([0.5, 0.5]),  # 1-D
        np.array([[0.5, 1.5]]),  # above 1
        np.array([[-0.1, 0.5]]),  # below 0
        np.array([[np.nan, 0.5]]),
        np.zeros((0, 3)),  # empty
    ],
)
def test_probability_map_rejects(bad):
    with pytest.raises(ValidationError):
        check_probability_map(bad)


def test_binary_map_accepts_bool_and_int():
    assert check_binary_map(np.array([[True, False]])).dtype == np.uint8
    assert check_binary_map(np.array([[0, 1]], dtype=np.int64)).tolist() == [[0, 1]]


def test_binary_map_rejects_other_values():
    with pytest.raises(ValidationError):
        check_binary_map(np.array([[0, 2]]))
    with pytest.raises(ValidationError):
        check_binary_map(np.array([[0.5, 0.5]]))


def test_same_shape():
    check_same_shape(("a", np.zeros((2, 3))), ("b", np.ones((2, 3))))
    with pytest.raises(ValidationError) as err:
        check_same_shape(("a", np.zeros((2, 3))), ("b", np.zeros((3, 2))))
    assert "a=" in str(err.value) and "b=" in str(err.value)


def test_image_tile_shape_and_range():
    check_image_tile(np.zeros((4, 5, 3), dtype=np.float32))
    with pytest.raises(ValidationError):
        check_image_tile(np.zeros((4, 5), dtype=np.float32))
    with pytest.raises(ValidationError):
        check_image_tile(np.zeros((4, 5, 4), dtype=np.float32))
    with pytest.raises(ValidationError):
        check_image_tile(np.full((4, 5, 3), 1.5, dtype=np.float32))


def test_pair_requires_matching_shapes():
    pre = np.zeros((4, 4, 3), dtype=np.float32)
    post = np.zeros((4, 6, 3), dtype=np.float32)
    with pytest.raises(ValidationError):
        check_pair(pre, post)


def test_pairs_array_from_tuples(rng):
    pairs = [
        (rng.random((4, 4, 3), dtype=np.float32), rng.random((4, 4, 3), dtype=np.float32))
        for _ in range(3)
    ]
    arr = check_pairs_array(pairs)
    assert arr.shape == (3, 2, 4, 4, 3)
    assert arr.dtype == np.float32


def test_pairs_array_passthrough(rng):
    arr = rng.random((2, 2, 4, 4, 3)).astype(np.float32)
    out = check_pairs_array(arr)
    assert out.shape == arr.shape


def test_pairs_array_rejects_junk():
    with pytest.raises(ValidationError):
        check_pairs_array([])
    with pytest.raises(ValidationError):
        check_pairs_array(np.zeros((2, 3, 4, 4, 3), dtype=np.float32))
    with pytest.raises(ValidationError):
        check_pairs_array(np.full((1, 2, 4, 4, 3), 2.0, dtype=np.float32))


def test_target_maps():
    y = np.zeros((3, 4, 4), dtype=np.uint8)
    out = check_target_maps(y, 3, (4, 4))
    assert out.dtype == np.uint8
    with pytest.raises(ValidationError):
        check_target_maps(y, 2, (4, 4))
    with pytest.raises(ValidationError):
        check_target_maps(np.full((3, 4, 4), 3), 3, (4, 4))
