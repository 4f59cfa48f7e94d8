import numpy as np
import pytest
from scipy.io import wavfile

from patchasd import dsp
from patchasd.dsp import (
    FrontendConfig,
    MelSpectrogram,
    Waveform,
    hann_window,
    hz_to_mel,
    log_mel,
    mel_center_frequencies,
    mel_filterbank,
    mel_to_hz,
    read_wav,
    standardize,
    stft,
    write_wav,
)


def test_stft_all_zero_waveform():
    w = Waveform(np.zeros(4000))
    spec = stft(w, 400, 160, 512)
    assert np.all(spec == 0)


def test_stft_frame_count():
    w = Waveform(np.random.default_rng(0).normal(size=16000) * 0.1)
    spec = stft(w, 400, 160, 512)
    assert spec.shape == (98, 257)


def test_stft_ten_second_clip_has_998_frames():
    w = Waveform(np.zeros(160000))
    assert stft(w, 400, 160, 512).shape[0] == 998


def test_stft_rejects_short_clip():
    with pytest.raises(dsp.AudioFormatError):
        stft(Waveform(np.zeros(100)), 400, 160, 512)


def test_stft_rejects_window_longer_than_fft():
    with pytest.raises(ValueError):
        stft(Waveform(np.zeros(4000)), 600, 160, 512)


def test_stft_sinusoid_peaks_at_bin_center():
    # 1250 Hz sits exactly on bin 40 of a 512-point FFT at 16 kHz.
    fs, k, n_fft = 16000, 40, 512
    f = k * fs / n_fft
    t = np.arange(8000) / fs
    w = Waveform(0.5 * np.sin(2 * np.pi * f * t))
    spec = stft(w, 400, 160, n_fft)
    mags = np.abs(spec)
    assert np.all(np.argmax(mags, axis=1) == k)


def test_stft_matches_direct_dft_oracle():
    # Independent route: evaluate the windowed DFT sum directly per frame.
    fs, n_fft, win, hop = 16000, 512, 400, 160
    rng = np.random.default_rng(3)
    samples = 0.3 * np.sin(2 * np.pi * 1250.0 * np.arange(2000) / fs)
    samples += 0.05 * rng.normal(size=2000)
    w = Waveform(samples)
    spec = stft(w, win, hop, n_fft)

    window = hann_window(win)
    for frame_idx in (0, 5):
        frame = samples[frame_idx * hop: frame_idx * hop + win] * window
        n = np.arange(win)
        for k in (0, 40, 200, 256):
            direct = np.sum(frame * np.exp(-2j * np.pi * k * n / n_fft))
            assert abs(spec[frame_idx, k] - direct) < 1e-8


class TestMelFilterbank:
    def test_every_row_positive_and_interior_bins_covered(self):
        fb = mel_filterbank(512, 128, 16000, 0.0, 8000.0)
        assert fb.shape == (128, 257)
        assert np.all(fb >= 0)
        assert np.all(fb.sum(axis=1) > 0)
        coverage = fb.sum(axis=0)
        assert np.all(coverage[1:-1] > 0)

    def test_peak_frequencies_monotonic(self):
        fb = mel_filterbank(512, 64, 16000, 0.0, 8000.0)
        peaks = np.argmax(fb, axis=1)
        assert np.all(np.diff(peaks) >= 0)
        # coarse bank: strictly increasing peak bins
        fb = mel_filterbank(512, 24, 16000, 0.0, 8000.0)
        assert np.all(np.diff(np.argmax(fb, axis=1)) > 0)

    def test_each_row_has_unique_maximum(self):
        for n_mels in (24, 64, 128):
            fb = mel_filterbank(512, n_mels, 16000, 0.0, 8000.0)
            for row in fb:
                assert np.count_nonzero(row == row.max()) == 1

    def test_centers_match_independent_htk_grid(self):
        # Oracle: recompute the uniform mel grid from the HTK formula directly.
        n_mels, f_min, f_max = 40, 0.0, 8000.0
        lo = 2595.0 * np.log10(1.0 + f_min / 700.0)
        hi = 2595.0 * np.log10(1.0 + f_max / 700.0)
        mels = lo + (hi - lo) * np.arange(1, n_mels + 1) / (n_mels + 1)
        expected = 700.0 * (10.0 ** (mels / 2595.0) - 1.0)
        got = mel_center_frequencies(n_mels, f_min, f_max)
        np.testing.assert_allclose(got, expected, rtol=1e-12)

    def test_peak_bin_tracks_center_frequency(self):
        fb = mel_filterbank(512, 40, 16000, 0.0, 8000.0)
        centers = mel_center_frequencies(40, 0.0, 8000.0)
        bin_hz = np.arange(257) * 16000 / 512
        peak_hz = bin_hz[np.argmax(fb, axis=1)]
        assert np.all(np.abs(peak_hz - centers) <= 16000 / 512)

    def test_invalid_ranges_rejected(self):
        with pytest.raises(ValueError):
            mel_filterbank(512, 40, 16000, -1.0, 8000.0)
        with pytest.raises(ValueError):
            mel_filterbank(512, 40, 16000, 4000.0, 4000.0)
        with pytest.raises(ValueError):
            mel_filterbank(512, 40, 16000, 0.0, 9000.0)
        with pytest.raises(ValueError):
            mel_filterbank(512, 0, 16000, 0.0, 8000.0)

    def test_mel_scale_round_trip(self):
        f = np.array([0.0, 440.0, 1000.0, 8000.0])
        np.testing.assert_allclose(mel_to_hz(hz_to_mel(f)), f, atol=1e-9)


class TestLogMel:
    def test_all_zero_waveform_hits_log_floor(self):
        cfg = FrontendConfig()
        s = log_mel(Waveform(np.zeros(16000)), cfg)
        np.testing.assert_allclose(s.values, np.log(cfg.log_floor))

    def test_scaling_waveform_shifts_log_energies(self):
        rng = np.random.default_rng(1)
        samples = 0.2 * rng.normal(size=16000)
        cfg = FrontendConfig(log_floor=1e-30)
        a = log_mel(Waveform(samples), cfg)
        b = log_mel(Waveform(np.clip(2 * samples, -1, 1) if False else 2 * samples), cfg)
        np.testing.assert_allclose(b.values - a.values, 2 * np.log(2.0), atol=1e-9)

    def test_ten_second_clip_frame_count(self):
        s = log_mel(Waveform(np.zeros(160000)))
        assert s.n_frames == 998
        assert s.n_mels == 128

    def test_energy_monotonicity(self):
        # Pointwise-larger power never lowers any log-mel entry.
        rng = np.random.default_rng(2)
        quiet = 0.05 * rng.normal(size=16000)
        loud = quiet * 3.0
        a = log_mel(Waveform(quiet))
        b = log_mel(Waveform(loud))
        assert np.all(b.values >= a.values - 1e-12)

    def test_deterministic_and_per_clip_independent(self):
        rng = np.random.default_rng(3)
        clips = [0.1 * rng.normal(size=16000) for _ in range(3)]
        first = [log_mel(Waveform(c)).values for c in clips]
        second = [log_mel(Waveform(c)).values for c in reversed(clips)]
        for a, b in zip(first, reversed(second)):
            np.testing.assert_array_equal(a, b)

    def test_sample_rate_mismatch_rejected(self):
        with pytest.raises(ValueError):
            log_mel(Waveform(np.zeros(22050), 22050), FrontendConfig())


def test_standardize_zero_mean_unit_std():
    rng = np.random.default_rng(4)
    s = MelSpectrogram(rng.normal(3.0, 2.0, size=(50, 128)))
    z = standardize(s)
    assert abs(z.values.mean()) < 1e-9
    assert abs(z.values.std() - 1.0) < 1e-4


class TestWavIO:
    def test_pcm16_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        samples = np.clip(0.3 * rng.normal(size=16000), -1, 1)
        path = tmp_path / "clip.wav"
        write_wav(path, Waveform(samples))
        back = read_wav(path)
        assert back.sample_rate == 16000
        np.testing.assert_allclose(back.samples, samples, atol=1.0 / 32768)

    def test_float32_wav(self, tmp_path):
        samples = np.linspace(-0.5, 0.5, 8000, dtype=np.float32)
        path = tmp_path / "f32.wav"
        wavfile.write(path, 16000, samples)
        back = read_wav(path)
        np.testing.assert_allclose(back.samples, samples, atol=1e-7)

    def test_resampling_to_16k(self, tmp_path):
        sr_in = 22050
        t = np.arange(sr_in) / sr_in
        samples = (0.4 * np.sin(2 * np.pi * 440 * t)).astype(np.float32)
        path = tmp_path / "hi.wav"
        wavfile.write(path, sr_in, samples)
        back = read_wav(path)
        assert back.sample_rate == 16000
        assert abs(back.samples.size - 16000) <= 1
        # tone survives resampling
        spec = np.abs(stft(back, 400, 160, 512))
        peak_hz = np.argmax(spec, axis=1) * 16000 / 512
        assert np.all(np.abs(peak_hz - 440) < 32)

    def test_stereo_rejected(self, tmp_path):
        path = tmp_path / "stereo.wav"
        wavfile.write(path, 16000, np.zeros((1000, 2), dtype=np.int16))
        with pytest.raises(dsp.AudioFormatError):
            read_wav(path)

    def test_unsupported_dtype_rejected(self, tmp_path):
        path = tmp_path / "i32.wav"
        wavfile.write(path, 16000, np.zeros(1000, dtype=np.int32))
        with pytest.raises(dsp.AudioFormatError):
            read_wav(path)

    def test_garbage_file_rejected(self, tmp_path):
        path = tmp_path / "bad.wav"
        path.write_bytes(b"not a wav file")
        with pytest.raises(dsp.AudioFormatError):
            read_wav(path)
