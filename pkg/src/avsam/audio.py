"""WAV loading and the fixed-shape log-spectrogram front end.

Mono PCM16 WAV in, (257, 300) log-magnitude spectrogram out under default
parameters: 3 s at 22050 Hz, n_fft=512, hop=220, periodic Hann window,
centered zero padding, trailing frames truncated, log(|STFT| + 1e-10).
"""

from __future__ import annotations

import math
import wave
from dataclasses import dataclass

import numpy as np
from scipy.signal import get_window, resample_poly

from .config import AudioConfig


class AudioError(ValueError):
    """Decode failures and contract violations on audio inputs."""


@dataclass
class Waveform:
    samples: np.ndarray  # float64 in [-1, 1]
    sample_rate: int = 22050

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise AudioError(f"waveform must be 1-D, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise AudioError("sample_rate must be positive")
        if not np.isfinite(self.samples).all():
            raise AudioError("waveform contains non-finite samples")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class Spectrogram:
    values: np.ndarray  # (freq_bins, frames), float64
    params: AudioConfig

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise AudioError(f"spectrogram must be 2-D, got shape {self.values.shape}")


def _read_wav(path: str) -> tuple[np.ndarray, int]:
    try:
        with wave.open(path, "rb") as wf:
            n_channels = wf.getnchannels()
            sampwidth = wf.getsampwidth()
            rate = wf.getframerate()
            n_frames = wf.getnframes()
            raw = wf.readframes(n_frames)
    except FileNotFoundError:
        raise
    except (wave.Error, EOFError) as exc:
        raise AudioError(f"cannot decode WAV file {path!r}: {exc}") from exc
    if n_channels != 1:
        raise AudioError(f"{path!r}: expected mono WAV, got {n_channels} channels")
    if sampwidth != 2:
        raise AudioError(f"{path!r}: expected PCM16, got sample width {sampwidth}")
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return data, rate


def save_wav(path: str, samples: np.ndarray, sample_rate: int = 22050) -> None:
    """Write float samples in [-1, 1] as mono PCM16 little-endian."""
    clipped = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = np.round(clipped * 32767.0).astype("<i2")
    with wave.open(path, "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(pcm.tobytes())


def _fit_length(samples: np.ndarray, target: int) -> np.ndarray:
    """Center-crop or zero-pad symmetrically to exactly ``target`` samples."""
    n = len(samples)
    if n == target:
        return samples
    if n > target:
        start = (n - target) // 2
        return samples[start : start + target]
    out = np.zeros(target, dtype=samples.dtype)
    start = (target - n) // 2
    out[start : start + n] = samples
    return out


def load_waveform(path: str, params: AudioConfig | None = None) -> Waveform:
    """Load a mono PCM16 WAV, resample to the target rate, fit to the target length."""
    params = params or AudioConfig()
    data, rate = _read_wav(path)
    if rate != params.sr:
        g = math.gcd(params.sr, rate)
        data = resample_poly(data, params.sr // g, rate // g)
        data = np.clip(data, -1.0, 1.0)
    data = _fit_length(data, params.n_samples)
    return Waveform(samples=data, sample_rate=params.sr)


def compute_log_spectrogram(w: Waveform, params: AudioConfig | None = None) -> Spectrogram:
    """Centered magnitude STFT, trailing frames truncated, then ``log(mag + eps)``.

    Requires the waveform to be exactly ``params.duration_s`` at ``params.sr``;
    anything else is a contract violation, not silently fixed here.
    """
    params = params or AudioConfig()
    if w.sample_rate != params.sr:
        raise AudioError(f"expected sample rate {params.sr}, got {w.sample_rate}")
    if len(w.samples) != params.n_samples:
        raise AudioError(
            f"expected exactly {params.n_samples} samples "
            f"({params.duration_s} s at {params.sr} Hz), got {len(w.samples)}"
        )
    n_fft, hop = params.n_fft, params.hop
    window = np.zeros(n_fft)
    # Periodic Hann, zero-padded symmetrically if win_length < n_fft.
    win = get_window("hann", params.win_length, fftbins=True)
    off = (n_fft - params.win_length) // 2
    window[off : off + params.win_length] = win

    pad = n_fft // 2
    padded = np.concatenate([np.zeros(pad), w.samples, np.zeros(pad)])
    n_frames_full = 1 + (len(padded) - n_fft) // hop
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n_frames_full)[:, None]
    frames = padded[idx] * window[None, :]
    mag = np.abs(np.fft.rfft(frames, n=n_fft, axis=1)).T  # (bins, frames)
    mag = mag[:, : params.frames]
    if mag.shape[1] < params.frames:
        raise AudioError(
            f"framing produced {mag.shape[1]} frames, need {params.frames}; "
            "hop too large for the configured duration"
        )
    return Spectrogram(values=np.log(mag + params.eps), params=params)
