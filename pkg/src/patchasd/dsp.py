"""Waveform handling and the log-mel spectrogram frontend.

Defaults follow the pipeline's frontend contract: 25 ms Hann windows with a
10 ms hop at 16 kHz, a 512-point FFT, and a 128-band HTK-mel filterbank over
the full 0..8 kHz range. Filter weights are triangle areas averaged over each
FFT-bin cell rather than point samples; at 128 bands against a 512-point FFT
the lowest triangles are narrower than one bin, so point sampling would leave
them empty while area averaging keeps every band live.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.io import wavfile

TARGET_SAMPLE_RATE = 16000


class AudioFormatError(ValueError):
    """Unsupported or malformed audio input."""


@dataclass(frozen=True)
class FrontendConfig:
    sample_rate: int = TARGET_SAMPLE_RATE
    win_s: float = 0.025
    hop_s: float = 0.010
    n_fft: int = 512
    n_mels: int = 128
    f_min: float = 0.0
    f_max: float = 8000.0
    log_floor: float = 1e-10

    @property
    def win_samples(self) -> int:
        return int(round(self.win_s * self.sample_rate))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop_s * self.sample_rate))


@dataclass(frozen=True)
class Waveform:
    """Mono audio clip with samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = TARGET_SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise AudioFormatError("waveform must be a non-empty 1-D array")
        object.__setattr__(self, "samples", samples)

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class MelSpectrogram:
    """Log-mel energies, one row per frame."""

    values: np.ndarray  # [n_frames, n_mels]
    n_mels: int = 128
    frame_hop_s: float = 0.010
    frame_win_s: float = 0.025

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2 or values.shape[1] != self.n_mels:
            raise ValueError(f"values must be [n_frames, {self.n_mels}], got {values.shape}")
        object.__setattr__(self, "values", values)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def resample_linear(samples: np.ndarray, sr_in: int, sr_out: int) -> np.ndarray:
    """Resample by linear interpolation on the shared time axis."""
    if sr_in == sr_out:
        return np.asarray(samples, dtype=np.float64)
    duration = len(samples) / sr_in
    n_out = max(1, int(round(duration * sr_out)))
    t_in = np.arange(len(samples)) / sr_in
    t_out = np.arange(n_out) / sr_out
    return np.interp(t_out, t_in, samples)


def read_wav(path) -> Waveform:
    """Read a mono WAV clip (16-bit PCM or 32-bit float), resampled to 16 kHz."""
    try:
        sr, data = wavfile.read(path)
    except Exception as exc:
        raise AudioFormatError(f"cannot read WAV file {path}: {exc}") from exc
    if data.ndim != 1:
        raise AudioFormatError(f"{path}: expected mono audio, got {data.ndim} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise AudioFormatError(f"{path}: unsupported sample format {data.dtype}")
    samples = resample_linear(samples, sr, TARGET_SAMPLE_RATE)
    return Waveform(samples, TARGET_SAMPLE_RATE)


def write_wav(path, w: Waveform) -> None:
    """Write 16-bit PCM mono."""
    scaled = np.clip(np.round(w.samples * 32768.0), -32768, 32767)
    wavfile.write(path, w.sample_rate, scaled.astype(np.int16))


def stft(w: Waveform, win_samples: int, hop_samples: int, n_fft: int) -> np.ndarray:
    """Hann-windowed short-time Fourier transform.

    Frames start at multiples of the hop; the trailing partial frame is
    dropped (no padding), so n_frames = floor((len - win) / hop) + 1.
    Windows shorter than n_fft are zero-padded on the right before the FFT.
    """
    if win_samples > n_fft:
        raise ValueError(f"win_samples {win_samples} exceeds n_fft {n_fft}")
    if hop_samples < 1:
        raise ValueError("hop_samples must be >= 1")
    samples = w.samples
    if samples.size < win_samples:
        raise AudioFormatError(
            f"clip of {samples.size} samples is shorter than one {win_samples}-sample window"
        )
    n_frames = (samples.size - win_samples) // hop_samples + 1
    offsets = np.arange(n_frames) * hop_samples
    frames = samples[offsets[:, None] + np.arange(win_samples)[None, :]]
    frames = frames * hann_window(win_samples)[None, :]
    return np.fft.rfft(frames, n=n_fft, axis=1)


def hz_to_mel(f) -> np.ndarray:
    """HTK mel scale: 2595 * log10(1 + f/700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m) -> np.ndarray:
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(n_mels: int, f_min: float, f_max: float) -> np.ndarray:
    """Centers of the uniform mel grid, in Hz."""
    grid = np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2)
    return mel_to_hz(grid[1:-1])


def _triangle_segment_integral(a, b, lo, hi, peak_at_hi):
    """Integral over [a, b] of the linear ramp on [lo, hi] (0 -> 1 or 1 -> 0)."""
    u = np.maximum(a, lo)
    v = np.minimum(b, hi)
    width = np.maximum(v - u, 0.0)
    span = hi - lo
    if peak_at_hi:
        avg = ((u - lo) + (v - lo)) / (2.0 * span)
    else:
        avg = ((hi - u) + (hi - v)) / (2.0 * span)
    return np.where(width > 0, width * avg, 0.0)


def mel_filterbank(n_fft: int, n_mels: int, sample_rate: int,
                   f_min: float = 0.0, f_max: float = 8000.0) -> np.ndarray:
    """Triangular mel filterbank, [n_mels, n_fft//2 + 1].

    Triangles sit on the uniform HTK-mel grid between f_min and f_max. Each
    weight is the triangle's average value over the FFT bin's frequency cell,
    which keeps narrow low-frequency filters non-empty at high mel counts.
    """
    nyquist = sample_rate / 2.0
    if not (0.0 <= f_min < f_max <= nyquist):
        raise ValueError(f"need 0 <= f_min < f_max <= {nyquist}, got [{f_min}, {f_max}]")
    if n_mels < 1:
        raise ValueError("n_mels must be >= 1")
    n_bins = n_fft // 2 + 1
    grid_hz = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    left = grid_hz[:-2, None]
    center = grid_hz[1:-1, None]
    right = grid_hz[2:, None]

    bin_hz = np.arange(n_bins) * sample_rate / n_fft
    bin_width = sample_rate / n_fft
    cell_lo = np.maximum(bin_hz - bin_width / 2.0, 0.0)[None, :]
    cell_hi = np.minimum(bin_hz + bin_width / 2.0, nyquist)[None, :]

    rising = _triangle_segment_integral(cell_lo, np.minimum(cell_hi, center), left, center, True)
    falling = _triangle_segment_integral(np.maximum(cell_lo, center), cell_hi, center, right, False)
    weights = (rising + falling) / (cell_hi - cell_lo)

    row_sums = weights.sum(axis=1)
    if np.any(row_sums <= 0.0):
        empty = int(np.argmin(row_sums))
        raise ValueError(
            f"mel filter row {empty} is empty: n_mels={n_mels} too large for "
            f"FFT resolution n_fft={n_fft} at {sample_rate} Hz"
        )
    return weights


def log_mel(w: Waveform, cfg: FrontendConfig | None = None) -> MelSpectrogram:
    """Log mel-energy spectrogram: log(max(filterbank @ |STFT|^2, floor))."""
    cfg = cfg or FrontendConfig()
    if w.sample_rate != cfg.sample_rate:
        raise ValueError(
            f"waveform rate {w.sample_rate} != configured rate {cfg.sample_rate}"
        )
    spec = stft(w, cfg.win_samples, cfg.hop_samples, cfg.n_fft)
    power = np.abs(spec) ** 2
    fb = mel_filterbank(cfg.n_fft, cfg.n_mels, cfg.sample_rate, cfg.f_min, cfg.f_max)
    energies = power @ fb.T
    values = np.log(np.maximum(energies, cfg.log_floor))
    return MelSpectrogram(values, cfg.n_mels, cfg.hop_s, cfg.win_s)


def standardize(s: MelSpectrogram, eps: float = 1e-5) -> MelSpectrogram:
    """Per-spectrogram standardization: subtract global mean, divide by global std + eps."""
    v = s.values
    out = (v - v.mean()) / (v.std() + eps)
    return replace(s, values=out)
