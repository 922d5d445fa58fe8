import numpy as np
import pytest

from latealign.posembed import PositionalTable, stretch


def _interp_oracle(entries, keep, factor):
    """Independent per-column linear interpolation via np.interp."""
    length, dim = entries.shape
    out_len = keep + (length - keep) * factor
    out = np.empty((out_len, dim))
    out[:keep] = entries[:keep]
    grid = np.arange(length, dtype=np.float64)
    s = keep + (np.arange(keep, out_len) - keep) / factor
    for c in range(dim):
        out[keep:, c] = np.interp(s, grid, entries[:, c])
    return out


def test_stock_configuration_length_and_oracle():
    rng = np.random.default_rng(0)
    pe = PositionalTable(rng.normal(size=(77, 8)))
    out = stretch(pe, keep=20, factor=4)
    assert out.length == 248
    assert np.array_equal(out.entries[:20], pe.entries[:20])
    oracle = _interp_oracle(pe.entries, 20, 4)
    assert np.max(np.abs(out.entries - oracle)) < 1e-12


def test_factor_one_is_identity():
    rng = np.random.default_rng(1)
    pe = PositionalTable(rng.normal(size=(13, 4)))
    out = stretch(pe, keep=5, factor=1)
    assert np.array_equal(out.entries, pe.entries)


def test_grid_alignment_rows_are_exact():
    rng = np.random.default_rng(2)
    pe = PositionalTable(rng.normal(size=(16, 3)))
    keep, factor = 4, 4
    out = stretch(pe, keep, factor)
    for m in range(16 - keep):
        assert np.array_equal(out.entries[keep + m * factor], pe.entries[keep + m])


def test_interpolation_value_on_ramp():
    # 1-D ramp table pe[k] = k: output row 22 sits at source 20.5
    pe = PositionalTable(np.arange(77, dtype=np.float64).reshape(-1, 1))
    out = stretch(pe, keep=20, factor=4)
    assert out.entries[22, 0] == pytest.approx(20.5, abs=1e-12)


def test_affine_tables_stay_affine():
    d = 5
    rng = np.random.default_rng(3)
    slope = rng.normal(size=d)
    intercept = rng.normal(size=d)
    k = np.arange(30, dtype=np.float64)[:, None]
    pe = PositionalTable(k * slope + intercept)
    out = stretch(pe, keep=6, factor=3)
    s = 6 + (np.arange(6, out.length) - 6) / 3.0
    expected = s[:, None] * slope + intercept
    assert np.max(np.abs(out.entries[6:] - expected)) < 1e-12


def test_keep_zero_interpolates_everything():
    pe = PositionalTable(np.arange(10, dtype=np.float64).reshape(-1, 1))
    out = stretch(pe, keep=0, factor=2)
    assert out.length == 20
    assert out.entries[1, 0] == pytest.approx(0.5, abs=1e-12)


def test_tail_rows_clamp_to_last_source_row():
    pe = PositionalTable(np.arange(10, dtype=np.float64).reshape(-1, 1))
    out = stretch(pe, keep=2, factor=4)
    # last output row samples s = 9.75, clamped interpolation stays at 9
    assert out.entries[-1, 0] == pytest.approx(9.0, abs=1e-12)


def test_errors():
    pe = PositionalTable(np.zeros((4, 2)))
    with pytest.raises(ValueError, match="nothing to stretch"):
        stretch(pe, keep=4, factor=2)
    with pytest.raises(ValueError):
        stretch(pe, keep=2, factor=0)
    with pytest.raises(ValueError):
        stretch(pe, keep=-1, factor=2)
    with pytest.raises(ValueError):
        PositionalTable(np.array([[np.nan, 1.0]]))
