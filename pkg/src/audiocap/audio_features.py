"""Log mel-band energy extraction for fixed 30 s, 44.1 kHz recordings.

Pipeline: 16-bit PCM WAV -> mono signal in [-1, 1] padded or cut to 30 s ->
Hamming-windowed 2048-sample frames every 1024 samples -> radix-2 FFT power
spectra -> 64 unit-peak triangular mel filters -> natural log with a 1e-10
floor.  With the frame count convention floor((L - window) / hop), a 30 s
clip divides into exactly 1289 frames, so every recording maps to a
1289 x 64 feature matrix.

All functions are pure; extraction over many files can run in parallel.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

SAMPLE_RATE = 44100
CLIP_SECONDS = 30
CLIP_SAMPLES = SAMPLE_RATE * CLIP_SECONDS  # 1,323,000
WINDOW_SIZE = 2048
HOP_SIZE = 1024
N_MELS = 64
LOG_FLOOR = 1e-10

FEATURE_MAGIC = b"ACF1"
FEATURE_VERSION = 1

__all__ = [
    "AudioFormatError",
    "UnsupportedRateError",
    "FrameTooShortError",
    "PcmSignal",
    "load_audio",
    "frame_signal",
    "hamming_window",
    "fft_radix2",
    "power_spectrum",
    "mel_filterbank",
    "hz_to_mel",
    "mel_to_hz",
    "extract_features",
    "save_features",
    "load_features",
]


class AudioFormatError(ValueError):
    """File is not readable 16-bit PCM WAV (or a valid feature file)."""


class UnsupportedRateError(AudioFormatError):
    """WAV sample rate is not 44.1 kHz."""


class FrameTooShortError(ValueError):
    """Signal shorter than one analysis window."""


@dataclass(frozen=True)
class PcmSignal:
    """Mono audio in [-1, 1] at 44.1 kHz."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE


def load_audio(path) -> PcmSignal:
    """Read a 44.1 kHz, 16-bit PCM WAV and fix its length to 30 s.

    Stereo is downmixed by averaging the two channels per sample.  Shorter
    material is zero-padded and longer material cut to the first
    1,323,000 samples.
    """
    try:
        with wave.open(str(path), "rb") as wav:
            n_channels = wav.getnchannels()
            width = wav.getsampwidth()
            rate = wav.getframerate()
            n_frames = wav.getnframes()
            raw = wav.readframes(min(n_frames, CLIP_SAMPLES))
    except (wave.Error, EOFError) as exc:
        raise AudioFormatError(f"{path}: {exc}") from exc
    if rate != SAMPLE_RATE:
        raise UnsupportedRateError(f"{path}: sample rate {rate} Hz, need {SAMPLE_RATE} Hz")
    if width != 2:
        raise AudioFormatError(f"{path}: sample width {width * 8} bits, need 16")
    if n_channels not in (1, 2):
        raise AudioFormatError(f"{path}: {n_channels} channels, need 1 or 2")

    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    if n_channels == 2:
        pcm = pcm.reshape(-1, 2).mean(axis=1)
    pcm /= 32768.0
    if pcm.size < CLIP_SAMPLES:
        pcm = np.concatenate([pcm, np.zeros(CLIP_SAMPLES - pcm.size)])
    else:
        pcm = pcm[:CLIP_SAMPLES]
    return PcmSignal(samples=pcm)


@lru_cache(maxsize=None)
def hamming_window(size: int = WINDOW_SIZE) -> np.ndarray:
    """w[n] = 0.54 - 0.46 cos(2 pi n / (size - 1))."""
    n = np.arange(size)
    window = 0.54 - 0.46 * np.cos(2.0 * np.pi * n / (size - 1))
    window.setflags(write=False)
    return window


def frame_signal(signal: PcmSignal, window: int = WINDOW_SIZE, hop: int = HOP_SIZE) -> np.ndarray:
    """Split into Hamming-windowed frames: (n_frames, window).

    Frame t covers samples [t*hop, t*hop + window); the frame count is
    floor((len - window) / hop).  That convention (no +1) is what makes a
    30 s clip come out as exactly 1289 frames.
    """
    samples = np.asarray(signal.samples, dtype=np.float64)
    if samples.ndim != 1:
        raise ValueError("expected a mono 1-D signal")
    if samples.size < window:
        raise FrameTooShortError(
            f"signal of {samples.size} samples is shorter than the {window}-sample window"
        )
    n_frames = (samples.size - window) // hop
    index = hop * np.arange(n_frames)[:, None] + np.arange(window)[None, :]
    return samples[index] * hamming_window(window)


@lru_cache(maxsize=None)
def _bit_reversal(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    forward = np.arange(n)
    reversed_idx = np.zeros(n, dtype=np.intp)
    for _ in range(bits):
        reversed_idx = (reversed_idx << 1) | (forward & 1)
        forward >>= 1
    reversed_idx.setflags(write=False)
    return reversed_idx


def fft_radix2(x: np.ndarray) -> np.ndarray:
    """Iterative decimation-in-time radix-2 FFT along the last axis.

    The transform size must be a power of two.  Leading axes are carried
    along unchanged, so a stack of frames transforms in one call.
    """
    x = np.asarray(x)
    n = x.shape[-1]
    if n < 2 or n & (n - 1):
        raise ValueError(f"FFT size {n} is not a power of two")
    out = np.asarray(x, dtype=np.complex128)[..., _bit_reversal(n)]
    half = 1
    while half < n:
        twiddle = np.exp((-1j * np.pi / half) * np.arange(half))
        blocks = out.reshape(out.shape[:-1] + (n // (2 * half), 2, half))
        even = blocks[..., 0, :]
        odd = blocks[..., 1, :] * twiddle
        out = np.concatenate([even + odd, even - odd], axis=-1).reshape(x.shape)
        half *= 2
    return out


def power_spectrum(frame: np.ndarray) -> np.ndarray:
    """|DFT|^2 on bins 0..n/2 (real-input symmetry), along the last axis.

    A 2048-sample frame yields 1025 nonnegative values.
    """
    frame = np.asarray(frame, dtype=np.float64)
    n = frame.shape[-1]
    spectrum = fft_radix2(frame)[..., : n // 2 + 1]
    return spectrum.real**2 + spectrum.imag**2


def hz_to_mel(hz) -> np.ndarray:
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel) -> np.ndarray:
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=None)
def mel_filterbank(
    n_mels: int = N_MELS, n_fft: int = WINDOW_SIZE, sample_rate: int = SAMPLE_RATE
) -> np.ndarray:
    """Unit-peak triangular filters as an (n_mels, n_fft // 2 + 1) matrix.

    Centers are equally spaced on the mel scale m = 2595 log10(1 + f/700)
    between 0 Hz and Nyquist; each filter rises from its left neighbor's
    center and falls to its right neighbor's, with no area normalization.
    """
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2))
    bins_hz = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)
    bank = np.zeros((n_mels, n_fft // 2 + 1))
    for i in range(n_mels):
        left, center, right = edges_hz[i], edges_hz[i + 1], edges_hz[i + 2]
        rising = (bins_hz - left) / (center - left)
        falling = (right - bins_hz) / (right - center)
        bank[i] = np.clip(np.minimum(rising, falling), 0.0, None)
    bank.setflags(write=False)
    return bank


def filter_centers_hz(n_mels: int = N_MELS, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Center frequency of each triangular filter, in Hz."""
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2))
    return edges_hz[1:-1]


def extract_features(signal: PcmSignal) -> np.ndarray:
    """The 1289 x 64 natural-log mel-band energy matrix of a 30 s signal.

    Row t is ln(max(filterbank @ power_spectrum(frame_t), 1e-10)).
    """
    frames = frame_signal(signal)
    spectra = power_spectrum(frames)
    bank = mel_filterbank()
    energies = np.stack([bank @ row for row in spectra])
    return np.log(np.maximum(energies, LOG_FLOOR))


def save_features(path, features: np.ndarray) -> None:
    """Write an "ACF1" feature file.

    Layout: magic "ACF1", three u32 little-endian (version, rows, cols),
    then rows*cols float32 little-endian values, row-major.
    """
    arr = np.ascontiguousarray(features, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError(f"feature matrix must be rank 2, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<III", FEATURE_VERSION, arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes())


def load_features(path) -> np.ndarray:
    """Read an "ACF1" feature file back as a float64 (rows, cols) matrix."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:4] != FEATURE_MAGIC:
        raise AudioFormatError(f"{path}: not an ACF1 feature file")
    version, rows, cols = struct.unpack_from("<III", blob, 4)
    if version != FEATURE_VERSION:
        raise AudioFormatError(f"{path}: unsupported feature file version {version}")
    expected = 16 + 4 * rows * cols
    if len(blob) != expected:
        raise AudioFormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4", offset=16).reshape(rows, cols)
    return data.astype(np.float64)
