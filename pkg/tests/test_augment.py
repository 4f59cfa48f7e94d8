import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patchasd.augment import (
    PATCH,
    PatchGrid,
    SpecAugConfig,
    patchify,
    spec_augment,
    unpatchify,
)
from patchasd.dsp import MelSpectrogram


def make_spec(n_frames=100, n_mels=128, seed=0):
    rng = np.random.default_rng(seed)
    return MelSpectrogram(rng.normal(size=(n_frames, n_mels)), n_mels)


class TestSpecAugment:
    def test_zero_params_is_identity(self):
        s = make_spec()
        out = spec_augment(s, SpecAugConfig(0, 0, 2, 2), np.random.default_rng(1))
        np.testing.assert_array_equal(out.values, s.values)

    def test_fixed_seed_is_deterministic(self):
        s = make_spec()
        cfg = SpecAugConfig(40, 80)
        a = spec_augment(s, cfg, np.random.default_rng(7))
        b = spec_augment(s, cfg, np.random.default_rng(7))
        np.testing.assert_array_equal(a.values, b.values)

    def test_input_unmodified(self):
        s = make_spec()
        before = s.values.copy()
        spec_augment(s, SpecAugConfig(40, 80), np.random.default_rng(2))
        np.testing.assert_array_equal(s.values, before)

    def test_freq_mask_width_bounded(self):
        s = make_spec(n_frames=200)
        cfg = SpecAugConfig(freq_mask_param=40, time_mask_param=0,
                            n_freq_masks=1, n_time_masks=0)
        for seed in range(25):
            out = spec_augment(s, cfg, np.random.default_rng(seed))
            fill = s.values.mean()
            masked_cols = np.all(out.values == fill, axis=0)
            assert 0 <= masked_cols.sum() <= 40

    def test_unmasked_entries_bit_identical(self):
        s = make_spec()
        out = spec_augment(s, SpecAugConfig(30, 30, 1, 1), np.random.default_rng(3))
        changed = out.values != s.values
        # changed entries form full rows/columns of the mask fill value
        fill = s.values.mean()
        assert np.all(out.values[changed] == fill)
        untouched = ~changed
        np.testing.assert_array_equal(out.values[untouched], s.values[untouched])

    def test_mask_param_exceeding_extent_rejected(self):
        s = make_spec(n_frames=50, n_mels=128)
        with pytest.raises(ValueError):
            spec_augment(s, SpecAugConfig(129, 10), np.random.default_rng(0))
        with pytest.raises(ValueError):
            spec_augment(s, SpecAugConfig(10, 51), np.random.default_rng(0))

    def test_negative_config_rejected(self):
        with pytest.raises(ValueError):
            SpecAugConfig(-1, 0)


class TestPatchify:
    def test_grid_arithmetic_for_ten_second_clip(self):
        s = make_spec(n_frames=998, n_mels=128)
        g = patchify(s)
        assert g.grid_shape == (8, 63)
        assert g.n_patches == 504

    def test_single_column_grid(self):
        s = make_spec(n_frames=16, n_mels=128)
        g = patchify(s)
        assert g.grid_shape == (8, 1)
        assert g.n_patches == 8

    def test_round_trip_reproduces_padded_spectrogram(self):
        s = make_spec(n_frames=100, n_mels=64)
        g = patchify(s)
        restored = unpatchify(g)
        assert restored.shape == (112, 64)
        np.testing.assert_array_equal(restored[:100], s.values)
        # padding reads as the spectrogram minimum
        assert np.all(restored[100:] == s.values.min())

    def test_patches_are_16x16_freq_major(self):
        s = make_spec(n_frames=32, n_mels=32)
        g = patchify(s)
        assert g.grid_shape == (2, 2)
        # patch 0 covers mel 0..16, frames 0..16, stored [freq, time]
        np.testing.assert_array_equal(g.patches[0], s.values[:16, :16].T)
        # raster order is frequency-major: index 1 is (row 0, col 1)
        np.testing.assert_array_equal(g.patches[1], s.values[16:32, :16].T)
        np.testing.assert_array_equal(g.patches[2], s.values[:16, 16:32].T)

    def test_vectors_flatten_row_major(self):
        s = make_spec(n_frames=16, n_mels=16)
        g = patchify(s)
        np.testing.assert_array_equal(g.vectors()[0], s.values[:16, :16].T.reshape(-1))

    def test_row_col_indices(self):
        s = make_spec(n_frames=48, n_mels=32)
        g = patchify(s)
        r, c = g.row_col_indices()
        assert g.grid_shape == (2, 3)
        np.testing.assert_array_equal(r, [0, 0, 0, 1, 1, 1])
        np.testing.assert_array_equal(c, [0, 1, 2, 0, 1, 2])

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            patchify(MelSpectrogram(np.zeros((0, 128)), 128))
        with pytest.raises(ValueError):
            patchify(make_spec(n_frames=20, n_mels=8))
        with pytest.raises(ValueError):
            patchify(make_spec(n_frames=20, n_mels=24))

    def test_grid_consistency_validated(self):
        with pytest.raises(ValueError):
            PatchGrid(np.zeros((3, PATCH, PATCH)), (2, 2))


@settings(max_examples=40, deadline=None)
@given(
    n_frames=st.integers(min_value=1, max_value=200),
    rows=st.integers(min_value=1, max_value=8),
    seed=st.integers(min_value=0, max_value=2**31),
)
def test_patchify_round_trip_property(n_frames, rows, seed):
    rng = np.random.default_rng(seed)
    values = rng.normal(size=(n_frames, rows * PATCH))
    s = MelSpectrogram(values, rows * PATCH)
    g = patchify(s)
    cols = -(-n_frames // PATCH)
    assert g.grid_shape == (rows, cols)
    restored = unpatchify(g)
    np.testing.assert_array_equal(restored[:n_frames], values)


@settings(max_examples=30, deadline=None)
@given(
    freq=st.integers(min_value=0, max_value=64),
    time=st.integers(min_value=0, max_value=50),
    seed=st.integers(min_value=0, max_value=2**31),
)
def test_spec_augment_only_touches_masked_lines(freq, time, seed):
    s = make_spec(n_frames=60, n_mels=64, seed=1)
    cfg = SpecAugConfig(freq, time, 2, 2)
    out = spec_augment(s, cfg, np.random.default_rng(seed))
    diff = out.values != s.values
    changed_cols = np.any(diff, axis=0)
    changed_rows = np.any(diff, axis=1)
    fill = s.values.mean()
    # every fully-changed line is filled with the mean
    for j in np.nonzero(changed_cols)[0]:
        col = out.values[:, j]
        assert np.all(col[diff[:, j]] == fill)
    for i in np.nonzero(changed_rows)[0]:
        row = out.values[i]
        assert np.all(row[diff[i]] == fill)
