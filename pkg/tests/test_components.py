import numpy as np
import pytest

from oracles import flood_fill_components

from tumorbox.components import connected_components
from tumorbox.errors import ValidationError


def pixel_sets(comps):
    return {frozenset(map(tuple, c.pixels.tolist())) for c in comps}


def test_diagonal_pair_eight_connected():
    mask = np.zeros((3, 3), dtype=bool)
    mask[0, 0] = mask[1, 1] = True
    comps = connected_components(mask, connectivity=8)
    assert len(comps) == 1
    assert comps[0].area == 2


def test_diagonal_pair_four_connected():
    mask = np.zeros((3, 3), dtype=bool)
    mask[0, 0] = mask[1, 1] = True
    comps = connected_components(mask, connectivity=4)
    assert len(comps) == 2
    assert all(c.area == 1 for c in comps)


@pytest.mark.parametrize("connectivity", [4, 8])
def test_random_masks_match_flood_fill(connectivity):
    rng = np.random.default_rng(55)
    for _ in range(20):
        mask = rng.random((64, 64)) < 0.3
        comps = connected_components(mask, connectivity=connectivity)
        assert pixel_sets(comps) == flood_fill_components(mask, connectivity)


def test_sorted_by_area_then_topleft():
    mask = np.zeros((6, 10), dtype=bool)
    mask[0, 7:9] = True   # area 2, anchor (0, 7)
    mask[3, 0:2] = True   # area 2, anchor (3, 0)
    mask[5, 4:9] = True   # area 5
    comps = connected_components(mask, connectivity=8)
    assert [c.area for c in comps] == [5, 2, 2]
    assert comps[1].anchor == (0, 7)
    assert comps[2].anchor == (3, 0)


def test_centroid_is_pixel_mean():
    mask = np.zeros((4, 4), dtype=bool)
    mask[1, 1] = mask[1, 2] = mask[2, 1] = mask[2, 2] = True
    comps = connected_components(mask)
    assert comps[0].centroid == (1.5, 1.5)


def test_empty_mask_gives_empty_list():
    assert connected_components(np.zeros((5, 5), dtype=bool)) == []


def test_connectivity_validation():
    with pytest.raises(ValidationError):
        connected_components(np.zeros((2, 2), dtype=bool), connectivity=6)
