"""Waveform container, WAV I/O and band-limited rate conversion."""

from __future__ import annotations

import math
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from stressanon.errors import ConfigError, UnsupportedEncodingError, WavFormatError

PCM16_SCALE = 32768.0
SINC_TAPS_PER_SIDE = 32
_CHUNK = 8192


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Mono waveform with its sample rate.

    Samples are stored as a read-only float64 array. Amplitudes read from
    PCM files lie in [-1, 1); processing steps may exceed that range slightly
    and ``write_wav`` clips on output.
    """

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self) -> None:
        x = np.array(self.samples, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(x)):
            raise ValueError("audio samples must be finite")
        if int(self.sample_rate_hz) <= 0:
            raise ConfigError(f"sample rate must be positive, got {self.sample_rate_hz}")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz

    def with_samples(self, samples: np.ndarray) -> AudioClip:
        return AudioClip(samples, self.sample_rate_hz)


def read_wav(path: str | Path) -> AudioClip:
    """Read an 8- or 16-bit PCM WAV file, downmixing stereo by channel mean."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except wave.Error as exc:
        msg = str(exc)
        if "unknown format" in msg:
            raise UnsupportedEncodingError(f"{path}: {msg}") from exc
        raise WavFormatError(f"{path}: {msg}") from exc
    except EOFError as exc:
        raise WavFormatError(f"{path}: truncated header") from exc

    if width == 2:
        data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / PCM16_SCALE
    elif width == 1:
        data = (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    else:
        raise UnsupportedEncodingError(f"{path}: {8 * width}-bit PCM is not supported")
    if n_channels < 1 or rate <= 0:
        raise WavFormatError(f"{path}: invalid channel count or sample rate")
    usable = (data.size // n_channels) * n_channels
    data = data[:usable].reshape(-1, n_channels).mean(axis=1)
    return AudioClip(data, rate)


def write_wav(clip: AudioClip, path: str | Path) -> None:
    """Write ``clip`` as 16-bit mono PCM. Amplitudes are clipped to the PCM range."""
    path = Path(path)
    pcm = np.round(clip.samples * PCM16_SCALE)
    pcm = np.clip(pcm, -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(clip.sample_rate_hz)
        wf.writeframes(pcm.tobytes())


def resample_ratio(x: np.ndarray, ratio: float, n_out: int | None = None) -> np.ndarray:
    """Band-limited resampling of ``x`` by ``ratio`` = output rate / input rate.

    Hann-windowed sinc interpolation with 32 zero crossings per side at the
    lower of the two rates. When downsampling the kernel is stretched so the
    cutoff sits at the output Nyquist frequency.
    """
    x = np.asarray(x, dtype=np.float64)
    if ratio <= 0 or not math.isfinite(ratio):
        raise ConfigError(f"resampling ratio must be positive, got {ratio}")
    if n_out is None:
        n_out = int(round(x.size * ratio))
    if ratio == 1.0 and n_out == x.size:
        return x.copy()
    if x.size == 0 or n_out == 0:
        return np.zeros(n_out)

    cutoff = min(1.0, ratio)
    half = int(math.ceil(SINC_TAPS_PER_SIDE / cutoff))
    offsets = np.arange(-half + 1, half + 1)
    padded = np.concatenate([np.zeros(half), x, np.zeros(half + 1)])
    out = np.empty(n_out)
    for start in range(0, n_out, _CHUNK):
        t = np.arange(start, min(start + _CHUNK, n_out)) / ratio
        base = np.floor(t).astype(np.int64)
        k = base[:, None] + offsets[None, :]
        d = t[:, None] - k
        window = 0.5 * (1.0 + np.cos(np.pi * np.clip(d / half, -1.0, 1.0)))
        kernel = cutoff * np.sinc(cutoff * d) * window
        valid = (k >= -half) & (k < x.size + half + 1)
        taps = padded[np.where(valid, k + half, 0)]
        out[start:start + t.size] = np.sum(taps * kernel * valid, axis=1)
    return out


def resample(clip: AudioClip, new_rate_hz: int) -> AudioClip:
    """Convert ``clip`` to ``new_rate_hz``; length becomes round(N * new / old)."""
    if int(new_rate_hz) <= 0:
        raise ConfigError(f"sample rate must be positive, got {new_rate_hz}")
    if new_rate_hz == clip.sample_rate_hz:
        return clip
    ratio = new_rate_hz / clip.sample_rate_hz
    return AudioClip(resample_ratio(clip.samples, ratio), new_rate_hz)
