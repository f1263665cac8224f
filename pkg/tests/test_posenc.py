import numpy as np
import pytest

from satmamba.model import positional_encoding


def test_origin_is_zero_sines_one_cosines():
    table = positional_encoding(3, 3, 16)
    row0 = table[0]
    # layout: [row-sin | row-cos | col-sin | col-cos], 4 values each
    assert np.all(row0[0:4] == 0.0)
    assert np.all(row0[4:8] == 1.0)
    assert np.all(row0[8:12] == 0.0)
    assert np.all(row0[12:16] == 1.0)


def test_values_in_unit_interval():
    table = positional_encoding(7, 9, 32)
    assert table.min() >= -1.0 and table.max() <= 1.0


def test_full_grid_rows_pairwise_distinct():
    table = positional_encoding(14, 14, 768)
    assert table.shape == (196, 768)
    diffs = table[:, None, :] - table[None, :, :]
    dist = np.sqrt((diffs ** 2).sum(axis=2))
    dist[np.diag_indices(196)] = np.inf
    assert dist.min() > 0.0


def test_dim_must_be_divisible_by_four():
    with pytest.raises(ValueError, match="divisible by 4"):
        positional_encoding(2, 2, 10)
