"""Audio front end: WAV reading, STFT, source separation and log-mel features.

Each 10-second stereo clip becomes a mels x frames x 3 tensor. The first two
channels are log-mel spectra of the harmonic and percussive components of the
mid (L+R)/2 signal; the third is the log-mel spectrum of the side L-R signal.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from math import gcd
from pathlib import Path
from typing import BinaryIO, Tuple, Union

import numpy as np
from scipy.ndimage import median_filter
from scipy.signal import resample_poly

from .errors import ConfigError, InputError, ParseError

TARGET_RATE = 48000
CLIP_SECONDS = 10
WINDOW = 1920            # 40 ms at 48 kHz
HOP = WINDOW // 2        # 50% overlap
N_MELS = 64
MEDIAN_WIDTH = 17
LOG_FLOOR = 1e-10
MASK_EPS = 1e-10

HPDF_MAGIC = b"HPDF"
HPDF_VERSION = 1


@dataclass
class AudioClip:
    """Stereo samples in float64, shape (n, 2), plus the sample rate."""
    samples: np.ndarray
    sample_rate: int
    source: str = "<memory>"

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[1] != 2:
            raise InputError(f"{self.source}: expected stereo samples of shape (n, 2), "
                             f"got {self.samples.shape}")


@dataclass
class HpdFeature:
    """A mels x frames x 3 feature tensor with its label and clip id."""
    values: np.ndarray
    label: int
    clip_id: str

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 3:
            raise InputError(f"feature for {self.clip_id!r} must be rank 3, "
                             f"got rank {self.values.ndim}")


# -- WAV parsing -------------------------------------------------------------

def _read_exact(fh: BinaryIO, n: int, source: str, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ParseError(f"{source}: truncated while reading {what}")
    return buf


def read_wav(path: Union[str, Path]) -> AudioClip:
    """Parse a RIFF/WAVE file into an AudioClip.

    Accepts PCM 16/24/32-bit and IEEE float32, stereo only. Malformed or
    truncated files raise ParseError naming the offending chunk; mono input
    raises InputError.
    """
    source = str(path)
    with open(path, "rb") as fh:
        header = _read_exact(fh, 12, source, "RIFF header")
        if header[:4] != b"RIFF":
            raise ParseError(f"{source}: missing RIFF marker in RIFF header")
        if header[8:12] != b"WAVE":
            raise ParseError(f"{source}: missing WAVE marker in RIFF header")
        fmt = None
        data = None
        while True:
            chunk_header = fh.read(8)
            if len(chunk_header) == 0:
                break
            if len(chunk_header) < 8:
                raise ParseError(f"{source}: truncated chunk header")
            cid = chunk_header[:4]
            (size,) = struct.unpack("<I", chunk_header[4:])
            name = cid.decode("ascii", errors="replace").strip()
            body = _read_exact(fh, size, source, f"'{name}' chunk")
            if size % 2 == 1:
                fh.read(1)   # chunks are word-aligned
            if cid == b"fmt ":
                if len(body) < 16:
                    raise ParseError(f"{source}: 'fmt ' chunk too short ({len(body)} bytes)")
                fmt = struct.unpack("<HHIIHH", body[:16])
            elif cid == b"data":
                data = body
            if fmt is not None and data is not None:
                break
        if fmt is None:
            raise ParseError(f"{source}: no 'fmt ' chunk found")
        if data is None:
            raise ParseError(f"{source}: no 'data' chunk found")
    audio_format, channels, sample_rate, _, block_align, bits = fmt
    if audio_format not in (1, 3):
        raise ParseError(f"{source}: unsupported audio format code {audio_format} "
                         f"in 'fmt ' chunk (want PCM or IEEE float)")
    if channels < 1:
        raise ParseError(f"{source}: 'fmt ' chunk declares {channels} channels")
    if channels == 1:
        raise InputError(f"{source}: clip is mono, stereo input is required")
    if channels != 2:
        raise InputError(f"{source}: clip has {channels} channels, stereo input is required")
    if audio_format == 3:
        if bits != 32:
            raise ParseError(f"{source}: IEEE float must be 32-bit, got {bits}")
        raw = np.frombuffer(data[:len(data) - len(data) % block_align], dtype="<f4")
        samples = raw.astype(np.float64)
    elif bits == 16:
        raw = np.frombuffer(data[:len(data) - len(data) % block_align], dtype="<i2")
        samples = raw.astype(np.float64) / 32768.0
    elif bits == 32:
        raw = np.frombuffer(data[:len(data) - len(data) % block_align], dtype="<i4")
        samples = raw.astype(np.float64) / 2147483648.0
    elif bits == 24:
        usable = len(data) - len(data) % block_align
        triplets = np.frombuffer(data[:usable], dtype=np.uint8).reshape(-1, 3)
        as_int = (triplets[:, 0].astype(np.int32)
                  | (triplets[:, 1].astype(np.int32) << 8)
                  | (triplets[:, 2].astype(np.int32) << 16))
        as_int = np.where(as_int >= 1 << 23, as_int - (1 << 24), as_int)
        samples = as_int.astype(np.float64) / 8388608.0
    else:
        raise ParseError(f"{source}: unsupported PCM bit depth {bits} in 'fmt ' chunk")
    if samples.size % 2 != 0:
        raise ParseError(f"{source}: 'data' chunk holds a half frame")
    return AudioClip(samples.reshape(-1, 2), sample_rate, source)


# -- spectral transforms -----------------------------------------------------

def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft(signal: np.ndarray, window: int = WINDOW, hop: int = HOP) -> np.ndarray:
    """Magnitude spectrogram, shape (window // 2 + 1, n // hop).

    Frame i covers samples [i * hop, i * hop + window); the tail is zero
    padded so a clip of n samples yields exactly n // hop frames.
    """
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim != 1:
        raise InputError(f"stft expects a 1-D signal, got rank {signal.ndim}")
    if signal.size < hop:
        raise InputError(f"signal of {signal.size} samples is shorter than one hop ({hop})")
    frames = signal.size // hop
    padded = np.concatenate([signal, np.zeros(window - hop, dtype=np.float64)])
    win = hann_window(window)
    idx = np.arange(window)[None, :] + hop * np.arange(frames)[:, None]
    segments = padded[idx] * win[None, :]
    spectrum = np.fft.rfft(segments, axis=1)
    return np.abs(spectrum).T


def hpss(magnitude: np.ndarray, width: int = MEDIAN_WIDTH) -> Tuple[np.ndarray, np.ndarray]:
    """Split a magnitude spectrogram into harmonic and percussive parts.

    Median filtering along time smooths out percussive onsets, leaving the
    harmonic estimate; filtering along frequency does the reverse. Soft
    Wiener masks built from the squared estimates then split the input.
    """
    mag = np.asarray(magnitude, dtype=np.float64)
    if mag.ndim != 2:
        raise InputError(f"hpss expects a 2-D spectrogram, got rank {mag.ndim}")
    harm = median_filter(mag, size=(1, width), mode="reflect")
    perc = median_filter(mag, size=(width, 1), mode="reflect")
    harm2 = harm * harm
    perc2 = perc * perc
    total = harm2 + perc2 + MASK_EPS
    mask_h = harm2 / total
    mask_p = perc2 / total
    return mag * mask_h, mag * mask_p


def hz_to_mel(freq):
    return 2595.0 * np.log10(1.0 + np.asarray(freq, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int = N_MELS,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular mel filters, shape (n_mels, n_fft // 2 + 1), unnormalized."""
    nyquist = sample_rate / 2.0
    if fmax is None:
        fmax = nyquist
    if fmax > nyquist:
        raise ConfigError(f"fmax {fmax} exceeds the Nyquist frequency {nyquist}")
    if not 0.0 <= fmin < fmax:
        raise ConfigError(f"need 0 <= fmin < fmax, got fmin={fmin}, fmax={fmax}")
    n_bins = n_fft // 2 + 1
    bin_freqs = np.arange(n_bins) * sample_rate / n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    weights = np.zeros((n_mels, n_bins), dtype=np.float64)
    for m in range(n_mels):
        lo, center, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (bin_freqs - lo) / (center - lo)
        down = (hi - bin_freqs) / (hi - center)
        weights[m] = np.maximum(0.0, np.minimum(up, down))
    return weights


def mel_project(magnitude: np.ndarray, filterbank: np.ndarray) -> np.ndarray:
    """Log-compressed mel spectrogram: log(filterbank @ magnitude + floor)."""
    mag = np.asarray(magnitude, dtype=np.float64)
    if mag.ndim != 2 or mag.shape[0] != filterbank.shape[1]:
        raise InputError(f"spectrogram shape {mag.shape} does not match "
                         f"filterbank with {filterbank.shape[1]} frequency bins")
    return np.log(filterbank @ mag + LOG_FLOOR)


# -- feature assembly --------------------------------------------------------

def resample_clip(clip: AudioClip, target_rate: int = TARGET_RATE) -> AudioClip:
    """Polyphase resample to the target rate; identity if already there."""
    if clip.sample_rate == target_rate:
        return clip
    g = gcd(target_rate, clip.sample_rate)
    up, down = target_rate // g, clip.sample_rate // g
    samples = resample_poly(clip.samples, up, down, axis=0)
    return AudioClip(samples, target_rate, clip.source)


def extract_hpd(clip: AudioClip, label: int = 0, clip_id: str | None = None) -> HpdFeature:
    """Build the 3-channel harmonic/percussive/difference feature tensor."""
    clip = resample_clip(clip)
    expected = CLIP_SECONDS * clip.sample_rate
    if clip.samples.shape[0] != expected:
        raise InputError(f"{clip.source}: expected {expected} samples "
                         f"({CLIP_SECONDS} s at {clip.sample_rate} Hz), "
                         f"got {clip.samples.shape[0]}")
    left = clip.samples[:, 0]
    right = clip.samples[:, 1]
    mono = 0.5 * (left + right)
    side = left - right
    mag_mono = stft(mono)
    harmonic, percussive = hpss(mag_mono)
    mag_side = stft(side)
    bank = mel_filterbank(clip.sample_rate, WINDOW)
    channels = np.stack([
        mel_project(harmonic, bank),
        mel_project(percussive, bank),
        mel_project(mag_side, bank),
    ], axis=-1)
    if clip_id is None:
        clip_id = Path(clip.source).stem
    return HpdFeature(channels.astype(np.float32), label, clip_id)


# -- on-disk feature format --------------------------------------------------

def dump_feature(feature: HpdFeature) -> bytes:
    """Serialize: magic, u32 version/mels/frames/channels/label, u32 id
    length, the UTF-8 clip id, then float32 little-endian values in
    (mel, frame, channel) C order.
    """
    mels, frames, channels = feature.values.shape
    ident = feature.clip_id.encode("utf-8")
    head = HPDF_MAGIC + struct.pack("<IIIIII", HPDF_VERSION, mels, frames,
                                    channels, feature.label, len(ident))
    payload = np.ascontiguousarray(feature.values, dtype="<f4").tobytes()
    return head + ident + payload


def save_feature(path: Union[str, Path], feature: HpdFeature) -> None:
    with open(path, "wb") as fh:
        fh.write(dump_feature(feature))


def parse_feature(buf: bytes, source: str = "<bytes>") -> HpdFeature:
    if len(buf) < 4 or buf[:4] != HPDF_MAGIC:
        raise ParseError(f"{source}: not a feature file (bad magic)")
    if len(buf) < 28:
        raise ParseError(f"{source}: truncated header")
    version, mels, frames, channels, label, idlen = struct.unpack("<IIIIII", buf[4:28])
    if version != HPDF_VERSION:
        raise ParseError(f"{source}: unsupported feature version {version}")
    offset = 28
    if len(buf) < offset + idlen:
        raise ParseError(f"{source}: truncated clip id")
    clip_id = buf[offset:offset + idlen].decode("utf-8")
    offset += idlen
    count = mels * frames * channels
    expected = offset + 4 * count
    if len(buf) != expected:
        raise ParseError(f"{source}: expected {expected} bytes for a "
                         f"{mels}x{frames}x{channels} feature, got {len(buf)}")
    values = np.frombuffer(buf, dtype="<f4", count=count, offset=offset)
    return HpdFeature(values.reshape(mels, frames, channels).copy(), label, clip_id)


def load_feature(path: Union[str, Path]) -> HpdFeature:
    with open(path, "rb") as fh:
        return parse_feature(fh.read(), source=str(path))
