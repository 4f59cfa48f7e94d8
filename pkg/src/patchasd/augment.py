"""SpecAugment-style masking (no time warping) and 16x16 patch extraction.

Masks are filled with the spectrogram's global mean rather than zeros so a
masked region reads as average energy instead of artificial silence. Time
warping is deliberately absent: warps can look like genuine anomalies.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dsp import MelSpectrogram

PATCH = 16


@dataclass(frozen=True)
class SpecAugConfig:
    freq_mask_param: int = 40   # max masked mel bands per mask
    time_mask_param: int = 80   # max masked frames per mask
    n_freq_masks: int = 2
    n_time_masks: int = 2

    def __post_init__(self):
        if self.freq_mask_param < 0 or self.time_mask_param < 0:
            raise ValueError("mask parameters must be non-negative")
        if self.n_freq_masks < 0 or self.n_time_masks < 0:
            raise ValueError("mask counts must be non-negative")


@dataclass(frozen=True)
class PatchGrid:
    """16x16 spectrogram blocks in frequency-major raster order.

    ``patches[r * cols + c]`` is the block covering mel bands
    ``[16r, 16r+16)`` and frames ``[16c, 16c+16)``, stored as
    [freq, time].
    """

    patches: np.ndarray          # [n_patches, PATCH, PATCH]
    grid_shape: tuple[int, int]  # (rows_freq, cols_time)

    def __post_init__(self):
        rows, cols = self.grid_shape
        if self.patches.shape != (rows * cols, PATCH, PATCH):
            raise ValueError(
                f"patches shape {self.patches.shape} inconsistent with grid {self.grid_shape}"
            )

    @property
    def n_patches(self) -> int:
        return self.patches.shape[0]

    def vectors(self) -> np.ndarray:
        """Flatten each block row-major to a [n_patches, 256] matrix."""
        return self.patches.reshape(self.n_patches, PATCH * PATCH)

    def row_col_indices(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-patch (frequency-row, time-col) grid coordinates."""
        rows, cols = self.grid_shape
        r = np.repeat(np.arange(rows), cols)
        c = np.tile(np.arange(cols), rows)
        return r, c


def spec_augment(s: MelSpectrogram, cfg: SpecAugConfig, rng: np.random.Generator) -> MelSpectrogram:
    """Mask random frequency bands and time spans with the spectrogram mean.

    Each mask width is drawn uniformly from {0..param}; the input is never
    modified. Raises if a mask parameter exceeds the spectrogram extent.
    """
    values = s.values
    n_frames, n_mels = values.shape
    if cfg.freq_mask_param > n_mels:
        raise ValueError(f"freq_mask_param {cfg.freq_mask_param} > n_mels {n_mels}")
    if cfg.time_mask_param > n_frames:
        raise ValueError(f"time_mask_param {cfg.time_mask_param} > n_frames {n_frames}")
    out = values.copy()
    fill = values.mean()
    for _ in range(cfg.n_freq_masks):
        f = int(rng.integers(0, cfg.freq_mask_param + 1))
        f0 = int(rng.integers(0, n_mels - f + 1))
        out[:, f0:f0 + f] = fill
    for _ in range(cfg.n_time_masks):
        t = int(rng.integers(0, cfg.time_mask_param + 1))
        t0 = int(rng.integers(0, n_frames - t + 1))
        out[t0:t0 + t, :] = fill
    return replace(s, values=out)


def pad_frames(values: np.ndarray, patch: int = PATCH) -> np.ndarray:
    """Pad the time axis up to a multiple of ``patch`` with the spectrogram minimum."""
    n_frames = values.shape[0]
    padded_len = -(-n_frames // patch) * patch
    if padded_len == n_frames:
        return values
    pad = np.full((padded_len - n_frames, values.shape[1]), values.min(), dtype=values.dtype)
    return np.concatenate([values, pad], axis=0)


def patchify(s: MelSpectrogram, patch: int = PATCH) -> PatchGrid:
    """Split a spectrogram into patch tokens, frequency-major raster order."""
    values = s.values
    if values.size == 0:
        raise ValueError("cannot patchify an empty spectrogram")
    n_mels = values.shape[1]
    if n_mels < patch:
        raise ValueError(f"n_mels {n_mels} smaller than patch size {patch}")
    if n_mels % patch != 0:
        raise ValueError(f"n_mels {n_mels} not divisible by patch size {patch}")
    padded = pad_frames(values, patch)
    rows = n_mels // patch
    cols = padded.shape[0] // patch
    # [time, mel] -> [mel, time] -> blocks in (row, col) order
    blocks = (
        padded.T.reshape(rows, patch, cols, patch)
        .transpose(0, 2, 1, 3)
        .reshape(rows * cols, patch, patch)
    )
    return PatchGrid(np.ascontiguousarray(blocks), (rows, cols))


def unpatchify(g: PatchGrid) -> np.ndarray:
    """Reassemble the padded [time, mel] spectrogram from a patch grid."""
    rows, cols = g.grid_shape
    mel_time = (
        g.patches.reshape(rows, cols, PATCH, PATCH)
        .transpose(0, 2, 1, 3)
        .reshape(rows * PATCH, cols * PATCH)
    )
    return mel_time.T
