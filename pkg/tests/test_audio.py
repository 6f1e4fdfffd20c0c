"""WAV parsing, STFT, source separation, mel projection, feature format."""

import struct
import wave

import numpy as np
import pytest
from scipy.signal import get_window

from sesn.audio import (CLIP_SECONDS, HOP, HPDF_MAGIC, LOG_FLOOR, N_MELS,
                        TARGET_RATE, WINDOW, AudioClip, HpdFeature,
                        dump_feature, extract_hpd, hann_window, hpss,
                        hz_to_mel, load_feature, mel_filterbank, mel_project,
                        mel_to_hz, parse_feature, read_wav, resample_clip,
                        save_feature, stft)
from sesn.errors import ConfigError, InputError, ParseError


def write_pcm16_wav(path, samples, rate):
    """Independent writer built on the stdlib wave module."""
    ints = np.clip(np.round(samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(samples.shape[1])
        fh.setsampwidth(2)
        fh.setframerate(rate)
        fh.writeframes(ints.tobytes())


def build_wav_bytes(fmt_code, channels, rate, bits, payload):
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", fmt_code, channels, rate, rate * block, block, bits)
    body = (b"fmt " + struct.pack("<I", len(fmt)) + fmt
            + b"data" + struct.pack("<I", len(payload)) + payload)
    return b"RIFF" + struct.pack("<I", 4 + len(body)) + b"WAVE" + body


class TestWavReading:
    def test_pcm16_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        samples = rng.uniform(-0.9, 0.9, size=(1000, 2))
        path = tmp_path / "clip.wav"
        write_pcm16_wav(path, samples, 48000)
        clip = read_wav(path)
        assert clip.sample_rate == 48000
        assert clip.samples.shape == (1000, 2)
        assert np.max(np.abs(clip.samples - samples)) <= 1.0 / 32768

    def test_float32_exact(self, tmp_path):
        vals = np.array([[0.25, -0.5], [1.0, -1.0]], dtype="<f4")
        path = tmp_path / "f32.wav"
        path.write_bytes(build_wav_bytes(3, 2, 48000, 32, vals.tobytes()))
        clip = read_wav(path)
        assert np.array_equal(clip.samples, vals.astype(np.float64))

    def test_pcm24_values(self, tmp_path):
        # frames: (max positive, min negative), (half scale, zero)
        triplets = bytes([0xFF, 0xFF, 0x7F,  0x00, 0x00, 0x80,
                          0x00, 0x00, 0x40,  0x00, 0x00, 0x00])
        path = tmp_path / "p24.wav"
        path.write_bytes(build_wav_bytes(1, 2, 44100, 24, triplets))
        clip = read_wav(path)
        want = np.array([[(2 ** 23 - 1) / 2 ** 23, -1.0], [0.5, 0.0]])
        assert np.allclose(clip.samples, want, atol=1e-12)

    def test_pcm32_values(self, tmp_path):
        vals = np.array([2 ** 31 - 1, -2 ** 31, 2 ** 30, 0], dtype="<i4")
        path = tmp_path / "p32.wav"
        path.write_bytes(build_wav_bytes(1, 2, 48000, 32, vals.tobytes()))
        clip = read_wav(path)
        want = np.array([[(2 ** 31 - 1) / 2 ** 31, -1.0], [0.5, 0.0]])
        assert np.allclose(clip.samples, want, atol=1e-12)

    def test_mono_rejected(self, tmp_path):
        path = tmp_path / "mono.wav"
        with wave.open(str(path), "wb") as fh:
            fh.setnchannels(1)
            fh.setsampwidth(2)
            fh.setframerate(48000)
            fh.writeframes(b"\x00\x00" * 100)
        with pytest.raises(InputError, match="mono"):
            read_wav(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.wav"
        path.write_bytes(b"NOTARIFFFILE")
        with pytest.raises(ParseError, match="RIFF"):
            read_wav(path)

    def test_truncated_data_chunk_named(self, tmp_path):
        blob = build_wav_bytes(1, 2, 48000, 16, b"\x00" * 64)
        path = tmp_path / "cut.wav"
        path.write_bytes(blob[:-10])
        with pytest.raises(ParseError, match="data"):
            read_wav(path)

    def test_missing_fmt_chunk(self, tmp_path):
        body = b"data" + struct.pack("<I", 4) + b"\x00" * 4
        path = tmp_path / "nofmt.wav"
        path.write_bytes(b"RIFF" + struct.pack("<I", 4 + len(body)) + b"WAVE" + body)
        with pytest.raises(ParseError, match="fmt"):
            read_wav(path)

    def test_unsupported_bit_depth(self, tmp_path):
        path = tmp_path / "pcm8.wav"
        path.write_bytes(build_wav_bytes(1, 2, 48000, 8, b"\x80" * 64))
        with pytest.raises(ParseError, match="8"):
            read_wav(path)

    def test_unknown_format_code(self, tmp_path):
        path = tmp_path / "alaw.wav"
        path.write_bytes(build_wav_bytes(6, 2, 48000, 16, b"\x00" * 64))
        with pytest.raises(ParseError, match="format"):
            read_wav(path)


class TestStft:
    def test_window_matches_scipy_periodic_hann(self):
        want = get_window("hann", WINDOW, fftbins=True)
        assert np.allclose(hann_window(WINDOW), want, atol=1e-14)

    def test_frame_count_and_bins(self):
        n = CLIP_SECONDS * TARGET_RATE
        mag = stft(np.zeros(n) + 1e-9)
        assert mag.shape == (WINDOW // 2 + 1, n // HOP)

    def test_dc_signal_lands_in_bin_zero(self):
        mag = stft(np.full(HOP * 20, 2.0))
        interior = mag[:, 2:-2]
        assert np.allclose(interior[0], 2.0 * hann_window(WINDOW).sum(), atol=1e-8)
        assert np.all(interior[10:] < 1e-8)

    def test_bin_centered_sine_concentrates_in_mainlobe(self):
        # Hann mainlobe spans three bins; for a bin-centered tone those
        # three carry all the energy
        k = 40
        n = HOP * 64
        t = np.arange(n)
        sig = np.sin(2 * np.pi * k * t / WINDOW)
        mag = stft(sig)
        interior = mag[:, 4:-4] ** 2
        ratio = interior[k - 1:k + 2].sum() / interior.sum()
        assert ratio > 0.999

    def test_hop_shift_consistency(self):
        rng = np.random.default_rng(1)
        sig = rng.standard_normal(HOP * 32)
        a = stft(sig)
        b = stft(sig[HOP:])
        assert np.allclose(a[:, 1:], b, atol=1e-10)

    def test_rejects_matrix_input(self):
        with pytest.raises(InputError):
            stft(np.zeros((100, 2)))

    def test_rejects_too_short_signal(self):
        with pytest.raises(InputError):
            stft(np.zeros(HOP - 1))


class TestHpss:
    def test_complementarity(self):
        rng = np.random.default_rng(2)
        mag = np.abs(rng.standard_normal((101, 80))) + 0.01
        h, p = hpss(mag)
        assert np.max(np.abs(h + p - mag)) < 1e-6

    def test_components_nonnegative(self):
        rng = np.random.default_rng(3)
        h, p = hpss(np.abs(rng.standard_normal((50, 60))))
        assert np.all(h >= 0) and np.all(p >= 0)

    def test_steady_tone_goes_harmonic(self):
        mag = np.full((101, 80), 0.01)
        mag[30, :] = 1.0
        h, p = hpss(mag)
        mask = h[30, 10:-10] / mag[30, 10:-10]
        assert np.all(mask >= 0.99)

    def test_click_goes_percussive(self):
        mag = np.full((101, 80), 0.01)
        mag[:, 40] = 1.0
        h, p = hpss(mag)
        mask = p[10:-10, 40] / mag[10:-10, 40]
        assert np.all(mask >= 0.99)

    def test_rejects_vector_input(self):
        with pytest.raises(InputError):
            hpss(np.zeros(100))


class TestMelFilterbank:
    def test_htk_formula_spot_values(self):
        assert np.isclose(hz_to_mel(700.0), 2595.0 * np.log10(2.0))
        assert np.isclose(hz_to_mel(0.0), 0.0)
        assert np.isclose(mel_to_hz(hz_to_mel(1234.5)), 1234.5)

    def test_shape_and_nonnegativity(self):
        bank = mel_filterbank(TARGET_RATE, WINDOW)
        assert bank.shape == (N_MELS, WINDOW // 2 + 1)
        assert np.all(bank >= 0)
        assert np.all(bank <= 1.0 + 1e-12)

    def test_interior_bins_covered(self):
        # edge bins at exactly fmin/fmax carry no triangle weight
        bank = mel_filterbank(TARGET_RATE, WINDOW)
        coverage = bank.sum(axis=0)
        assert np.all(coverage[1:-1] > 0)

    def test_every_filter_nonempty(self):
        bank = mel_filterbank(TARGET_RATE, WINDOW)
        assert np.all(bank.sum(axis=1) > 0)

    def test_centers_increase_on_mel_scale(self):
        bank = mel_filterbank(TARGET_RATE, WINDOW)
        peaks = bank.argmax(axis=1)
        assert np.all(np.diff(peaks) > 0)

    def test_fmax_above_nyquist_rejected(self):
        with pytest.raises(ConfigError, match="Nyquist"):
            mel_filterbank(TARGET_RATE, WINDOW, fmax=24001.0)

    def test_mel_project_log_floor(self):
        bank = mel_filterbank(TARGET_RATE, WINDOW)
        out = mel_project(np.zeros((WINDOW // 2 + 1, 10)), bank)
        assert np.allclose(out, np.log(LOG_FLOOR), atol=1e-12)

    def test_mel_project_shape_mismatch(self):
        bank = mel_filterbank(TARGET_RATE, WINDOW)
        with pytest.raises(InputError):
            mel_project(np.zeros((100, 10)), bank)


class TestFeatureExtraction:
    def test_noise_clip_shape(self):
        rng = np.random.default_rng(4)
        clip = AudioClip(rng.standard_normal((CLIP_SECONDS * TARGET_RATE, 2)) * 0.1,
                         TARGET_RATE)
        feat = extract_hpd(clip, label=5, clip_id="noise")
        assert feat.values.shape == (N_MELS, 500, 3)
        assert feat.values.dtype == np.float32
        assert feat.label == 5

    def test_identical_channels_floor_the_difference_channel(self):
        rng = np.random.default_rng(5)
        mono = rng.standard_normal((CLIP_SECONDS * TARGET_RATE, 1)) * 0.1
        clip = AudioClip(np.concatenate([mono, mono], axis=1), TARGET_RATE)
        feat = extract_hpd(clip, clip_id="same")
        assert np.allclose(feat.values[:, :, 2], np.log(LOG_FLOOR), atol=1e-4)

    def test_wrong_duration_rejected(self):
        clip = AudioClip(np.zeros((TARGET_RATE * 5, 2)), TARGET_RATE)
        with pytest.raises(InputError, match="samples"):
            extract_hpd(clip)

    def test_other_rate_resampled(self):
        rng = np.random.default_rng(6)
        clip = AudioClip(rng.standard_normal((CLIP_SECONDS * 16000, 2)) * 0.1, 16000)
        feat = extract_hpd(clip, clip_id="rs")
        assert feat.values.shape == (N_MELS, 500, 3)

    def test_resample_identity_at_target_rate(self):
        clip = AudioClip(np.zeros((100, 2)), TARGET_RATE)
        assert resample_clip(clip) is clip

    def test_resample_halves_length(self):
        clip = AudioClip(np.zeros((96000, 2)), 96000)
        assert resample_clip(clip).samples.shape[0] == 48000

    def test_clip_id_defaults_to_source_stem(self, tmp_path):
        rng = np.random.default_rng(7)
        path = tmp_path / "airport-barcelona-0-0-a.wav"
        write_pcm16_wav(path, rng.uniform(-0.2, 0.2, size=(CLIP_SECONDS * 8000, 2)), 8000)
        feat = extract_hpd(read_wav(path))
        assert feat.clip_id == "airport-barcelona-0-0-a"

    def test_mid_and_side_channels_differ(self):
        rng = np.random.default_rng(8)
        left = rng.standard_normal((CLIP_SECONDS * TARGET_RATE, 1)) * 0.1
        right = rng.standard_normal((CLIP_SECONDS * TARGET_RATE, 1)) * 0.1
        clip = AudioClip(np.concatenate([left, right], axis=1), TARGET_RATE)
        feat = extract_hpd(clip, clip_id="lr")
        assert not np.allclose(feat.values[:, :, 0], feat.values[:, :, 2], atol=0.1)


class TestFeatureFormat:
    def test_round_trip(self):
        rng = np.random.default_rng(9)
        feat = HpdFeature(rng.standard_normal((4, 6, 3)).astype(np.float32), 7, "clip/one")
        back = parse_feature(dump_feature(feat))
        assert back.label == 7
        assert back.clip_id == "clip/one"
        assert np.array_equal(back.values, feat.values)

    def test_file_round_trip(self, tmp_path):
        rng = np.random.default_rng(10)
        feat = HpdFeature(rng.standard_normal((8, 20, 3)).astype(np.float32), 2, "x")
        path = tmp_path / "x.hpdf"
        save_feature(path, feat)
        back = load_feature(path)
        assert np.array_equal(back.values, feat.values)

    def test_golden_header_layout(self):
        feat = HpdFeature(np.zeros((1, 1, 1), dtype=np.float32), 3, "ab")
        blob = dump_feature(feat)
        want = (HPDF_MAGIC + struct.pack("<IIIIII", 1, 1, 1, 1, 3, 2)
                + b"ab" + struct.pack("<f", 0.0))
        assert blob == want

    def test_bad_magic(self):
        with pytest.raises(ParseError, match="magic"):
            parse_feature(b"XXXX" + b"\x00" * 40)

    def test_truncated_payload_named(self, tmp_path):
        feat = HpdFeature(np.zeros((2, 3, 3), dtype=np.float32), 0, "t")
        path = tmp_path / "t.hpdf"
        path.write_bytes(dump_feature(feat)[:-5])
        with pytest.raises(ParseError, match="t.hpdf"):
            load_feature(path)

    def test_unsupported_version(self):
        feat = HpdFeature(np.zeros((1, 1, 1), dtype=np.float32), 0, "v")
        blob = bytearray(dump_feature(feat))
        blob[4:8] = struct.pack("<I", 9)
        with pytest.raises(ParseError, match="version"):
            parse_feature(bytes(blob))

    def test_dump_deterministic(self):
        rng = np.random.default_rng(11)
        feat = HpdFeature(rng.standard_normal((4, 5, 3)).astype(np.float32), 1, "d")
        assert dump_feature(feat) == dump_feature(feat)
