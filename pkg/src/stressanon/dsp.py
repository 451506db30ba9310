"""Speech preprocessing chain.

Wiener denoising -> pre-emphasis -> STFT -> mel filterbank -> log mel
spectrogram (LMS) -> DCT -> MFCC.  Also hosts the inverse STFT used by the
Wiener filter and by VTLP augmentation, and the binary/CSV feature formats.
"""

from __future__ import annotations

import enum
import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.fft
from scipy.ndimage import median_filter

from stressanon.audio import AudioClip
from stressanon.errors import ConfigError, DomainError, InsufficientInputError, ShapeError


class FeatureKind(str, enum.Enum):
    LMS = "lms"
    MFCC = "mfcc"


@dataclass(frozen=True)
class WienerConfig:
    """Single-channel Wiener gain settings.

    ``spectral_median_bins`` smooths the noise PSD estimate across frequency
    with a running median so that stationary narrow-band components (tones,
    sustained harmonics) are not mistaken for noise. 0 disables it.
    """

    noise_frame_fraction: float = 0.10
    gain_floor: float = 0.01
    spectral_median_bins: int = 15

    def __post_init__(self) -> None:
        if not 0.0 < self.noise_frame_fraction <= 1.0:
            raise ConfigError("noise_frame_fraction must lie in (0, 1]")
        if not 0.0 < self.gain_floor < 1.0:
            raise ConfigError("gain_floor must lie in (0, 1)")
        if self.spectral_median_bins < 0:
            raise ConfigError("spectral_median_bins must be >= 0")


@dataclass(frozen=True)
class PreprocessConfig:
    window_ms: float = 25.0
    hop_ms: float = 10.0
    fft_size: int | None = None  # None: next power of two >= window
    preemphasis_alpha: float = 0.97
    n_mels: int = 128
    n_mfcc: int = 20
    eps: float = 1e-10
    use_wiener: bool = True
    wiener: WienerConfig = field(default_factory=WienerConfig)

    def __post_init__(self) -> None:
        if isinstance(self.wiener, dict):
            object.__setattr__(self, "wiener", WienerConfig(**self.wiener))
        if self.window_ms <= 0 or self.hop_ms <= 0:
            raise ConfigError("window_ms and hop_ms must be positive")
        if self.hop_ms > self.window_ms:
            raise ConfigError("hop_ms must not exceed window_ms")
        if not 0.0 <= self.preemphasis_alpha < 1.0:
            raise ConfigError("preemphasis_alpha must lie in [0, 1)")
        if self.fft_size is not None and (self.fft_size <= 0 or self.fft_size & (self.fft_size - 1)):
            raise ConfigError("fft_size must be a positive power of two")
        if self.n_mels < 1 or self.n_mfcc < 1:
            raise ConfigError("n_mels and n_mfcc must be positive")
        if self.n_mfcc > self.n_mels:
            raise ConfigError("n_mfcc must not exceed n_mels")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")

    def window_samples(self, sample_rate_hz: int) -> int:
        return int(round(sample_rate_hz * self.window_ms / 1000.0))

    def hop_samples(self, sample_rate_hz: int) -> int:
        return max(1, int(round(sample_rate_hz * self.hop_ms / 1000.0)))

    def resolved_fft_size(self, sample_rate_hz: int) -> int:
        win = self.window_samples(sample_rate_hz)
        if self.fft_size is None:
            return 1 << max(0, (win - 1).bit_length())
        if self.fft_size < win:
            raise ConfigError(f"fft_size {self.fft_size} is shorter than the window ({win} samples)")
        return self.fft_size

    def digest(self) -> bytes:
        """16-byte hash identifying this configuration in feature headers."""
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).digest()[:16]


@dataclass(frozen=True, eq=False)
class ComplexSpectrogram:
    values: np.ndarray  # frames x bins, complex
    sample_rate_hz: int
    window_samples: int
    hop_samples: int
    fft_size: int

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def bins(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class MelFilterbank:
    weights: np.ndarray  # n_mels x bins
    centers_hz: np.ndarray

    @property
    def n_mels(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Frames x coefficients real matrix tagged with its feature kind."""

    kind: FeatureKind
    values: np.ndarray
    sample_rate_hz: int = 0
    config_hash: bytes = b"\x00" * 16

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ShapeError(f"feature map must be 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("feature map contains non-finite values")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "kind", FeatureKind(self.kind))

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def coeffs(self) -> int:
        return self.values.shape[1]


def frame_count(n_samples: int, window: int, hop: int) -> int:
    if n_samples < window:
        raise InsufficientInputError(f"{n_samples} samples is shorter than one window ({window})")
    return 1 + (n_samples - window) // hop


def pre_emphasis(clip: AudioClip, alpha: float) -> AudioClip:
    """First-order high-frequency boost y[n] = x[n] - alpha * x[n-1]."""
    if not 0.0 <= alpha < 1.0:
        raise DomainError(f"pre-emphasis alpha must lie in [0, 1), got {alpha}")
    x = clip.samples
    if x.size == 0 or alpha == 0.0:
        return clip
    y = np.empty_like(x)
    y[0] = x[0]
    y[1:] = x[1:] - alpha * x[:-1]
    return clip.with_samples(y)


def _frames(x: np.ndarray, window: int, hop: int) -> np.ndarray:
    n = frame_count(x.size, window, hop)
    idx = np.arange(window)[None, :] + hop * np.arange(n)[:, None]
    return x[idx]


def _stft_array(x: np.ndarray, window: int, hop: int, fft_size: int) -> np.ndarray:
    win = np.hamming(window)
    return np.fft.rfft(_frames(x, window, hop) * win, n=fft_size, axis=1)


def stft(clip: AudioClip, cfg: PreprocessConfig) -> ComplexSpectrogram:
    """Hamming-windowed short-time Fourier transform, one row per frame."""
    sr = clip.sample_rate_hz
    window, hop = cfg.window_samples(sr), cfg.hop_samples(sr)
    fft_size = cfg.resolved_fft_size(sr)
    values = _stft_array(clip.samples, window, hop, fft_size)
    return ComplexSpectrogram(values, sr, window, hop, fft_size)


def padded_length(n_samples: int, window: int, hop: int) -> int:
    """Smallest length >= n_samples whose frames tile every sample."""
    if n_samples <= window:
        return window
    return window + -(-(n_samples - window) // hop) * hop


def istft(values: np.ndarray, window: int, hop: int, fft_size: int, length: int) -> np.ndarray:
    """Weighted overlap-add inverse of ``_stft_array`` (Hamming analysis and synthesis)."""
    win = np.hamming(window)
    frames = np.fft.irfft(values, n=fft_size, axis=1)[:, :window] * win
    total = window + hop * (frames.shape[0] - 1)
    out = np.zeros(total)
    norm = np.zeros(total)
    for i, frame in enumerate(frames):
        out[i * hop:i * hop + window] += frame
        norm[i * hop:i * hop + window] += win * win
    out = np.divide(out, norm, out=np.zeros_like(out), where=norm > 1e-12)
    if total >= length:
        return out[:length]
    return np.concatenate([out, np.zeros(length - total)])


def analysis_frames(x: np.ndarray, window: int, hop: int, fft_size: int) -> tuple[np.ndarray, int]:
    """STFT of ``x`` zero-padded so that every input sample is covered by a frame."""
    n = padded_length(x.size, window, hop)
    padded = np.concatenate([x, np.zeros(n - x.size)])
    return _stft_array(padded, window, hop, fft_size), n


def wiener_filter(clip: AudioClip, cfg: WienerConfig, pcfg: PreprocessConfig) -> AudioClip:
    """Spectral-gain Wiener denoising with a noise PSD from the quietest frames.

    Gain per bin is ``max((|X|^2 - N) / |X|^2, gain_floor)``; the enhanced
    spectrum keeps the noisy phase and is resynthesised by overlap-add.
    """
    sr = clip.sample_rate_hz
    window, hop = pcfg.window_samples(sr), pcfg.hop_samples(sr)
    fft_size = pcfg.resolved_fft_size(sr)
    x = clip.samples
    if x.size < window:
        raise InsufficientInputError(f"{x.size} samples is shorter than one window ({window})")
    if not np.any(x):
        return clip

    spec, _ = analysis_frames(x, window, hop, fft_size)
    power = np.abs(spec) ** 2
    n_noise = max(1, int(round(cfg.noise_frame_fraction * power.shape[0])))
    quietest = np.argsort(power.sum(axis=1), kind="stable")[:n_noise]
    noise_psd = power[quietest].mean(axis=0)
    if cfg.spectral_median_bins > 1:
        noise_psd = median_filter(noise_psd, size=cfg.spectral_median_bins, mode="nearest")

    with np.errstate(divide="ignore", invalid="ignore"):
        gain = np.where(power > 0, (power - noise_psd) / power, 0.0)
    gain = np.maximum(gain, cfg.gain_floor)
    y = istft(spec * gain, window, hop, fft_size, x.size)
    return clip.with_samples(y)


def log_amplitude(spec: ComplexSpectrogram, eps: float = 1e-10) -> np.ndarray:
    return np.log(np.abs(spec.values) + eps)


def hz_to_mel(f):
    """O'Shaughnessy mel scale, 2595 * log10(1 + f / 700)."""
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise DomainError("frequency must be non-negative")
    mel = 2595.0 * np.log10(1.0 + f / 700.0)
    return float(mel) if mel.ndim == 0 else mel


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    if np.any(m < 0):
        raise DomainError("mel value must be non-negative")
    hz = 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    return float(hz) if hz.ndim == 0 else hz


@lru_cache(maxsize=32)
def _filterbank(n_mels: int, fft_size: int, sample_rate_hz: int) -> MelFilterbank:
    bins = fft_size // 2 + 1
    if n_mels < 2:
        raise ConfigError("a mel filterbank needs at least two filters")
    if n_mels > bins:
        raise ConfigError(f"{n_mels} mel filters exceed the {bins} FFT bins")
    edges_hz = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate_hz / 2.0), n_mels + 2))
    bin_hz = np.arange(bins) * sample_rate_hz / fft_size
    lo, center, hi = edges_hz[:-2, None], edges_hz[1:-1, None], edges_hz[2:, None]
    rising = (bin_hz[None, :] - lo) / (center - lo)
    falling = (hi - bin_hz[None, :]) / (hi - center)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    # low filters can be narrower than one bin; give them the nearest bin
    for row in np.flatnonzero(weights.sum(axis=1) <= 0):
        weights[row, int(np.argmin(np.abs(bin_hz - edges_hz[row + 1])))] = 1.0
    weights.setflags(write=False)
    centers = edges_hz[1:-1].copy()
    centers.setflags(write=False)
    return MelFilterbank(weights, centers)


def build_mel_filterbank(cfg: PreprocessConfig, sample_rate_hz: int) -> MelFilterbank:
    """Triangular filters equispaced on the mel axis between 0 Hz and Nyquist."""
    return _filterbank(cfg.n_mels, cfg.resolved_fft_size(sample_rate_hz), int(sample_rate_hz))


def mel_spectrogram(spec: ComplexSpectrogram, fb: MelFilterbank) -> np.ndarray:
    """Mel-weighted power spectrogram, frames x n_mels."""
    if fb.weights.shape[1] != spec.bins:
        raise ShapeError(
            f"filterbank expects {fb.weights.shape[1]} bins, spectrogram has {spec.bins}"
        )
    return (np.abs(spec.values) ** 2) @ fb.weights.T


def log_mel_spectrogram(spec: ComplexSpectrogram, fb: MelFilterbank, eps: float = 1e-10,
                        config_hash: bytes = b"\x00" * 16) -> FeatureMap:
    lms = np.log(mel_spectrogram(spec, fb) + eps)
    return FeatureMap(FeatureKind.LMS, lms, spec.sample_rate_hz, config_hash)


def mfcc(lms: FeatureMap, n_mfcc: int) -> FeatureMap:
    """Orthonormal DCT-II of each LMS frame, truncated to ``n_mfcc`` coefficients."""
    if lms.kind is not FeatureKind.LMS:
        raise TypeError(f"mfcc expects an LMS feature map, got {lms.kind.value}")
    if not 1 <= n_mfcc <= lms.coeffs:
        raise ConfigError(f"n_mfcc must lie in [1, {lms.coeffs}], got {n_mfcc}")
    cep = scipy.fft.dct(lms.values, type=2, norm="ortho", axis=1)[:, :n_mfcc]
    return FeatureMap(FeatureKind.MFCC, cep, lms.sample_rate_hz, lms.config_hash)


def extract_features(clip: AudioClip, kind: FeatureKind | str, cfg: PreprocessConfig) -> FeatureMap:
    """Run the full chain on ``clip`` and return LMS or MFCC features."""
    kind = FeatureKind(kind)
    if cfg.use_wiener:
        clip = wiener_filter(clip, cfg.wiener, cfg)
    clip = pre_emphasis(clip, cfg.preemphasis_alpha)
    spec = stft(clip, cfg)
    fb = build_mel_filterbank(cfg, clip.sample_rate_hz)
    lms = log_mel_spectrogram(spec, fb, cfg.eps, cfg.digest())
    if kind is FeatureKind.LMS:
        return lms
    return mfcc(lms, cfg.n_mfcc)


def silence_row(kind: FeatureKind | str, cfg: PreprocessConfig) -> np.ndarray:
    """Feature vector of an all-zero frame; used as the padding value."""
    floor = np.full((1, cfg.n_mels), np.log(cfg.eps))
    if FeatureKind(kind) is FeatureKind.LMS:
        return floor[0]
    return scipy.fft.dct(floor, type=2, norm="ortho", axis=1)[0, :cfg.n_mfcc]


# -- serialization --------------------------------------------------------

_MAGIC = b"SAFM"
_VERSION = 1
_HEADER = struct.Struct("<4sHBIII16s")
_KIND_CODES = {FeatureKind.LMS: 0, FeatureKind.MFCC: 1}


def save_feature_map(fm: FeatureMap, path: str | Path) -> None:
    """Binary container: fixed header followed by row-major little-endian float32."""
    header = _HEADER.pack(_MAGIC, _VERSION, _KIND_CODES[fm.kind], fm.frames, fm.coeffs,
                          fm.sample_rate_hz, fm.config_hash)
    Path(path).write_bytes(header + fm.values.astype("<f4").tobytes())


def load_feature_map(path: str | Path) -> FeatureMap:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise ValueError(f"{path}: truncated feature header")
    magic, version, code, frames, coeffs, sr, digest = _HEADER.unpack_from(blob)
    if magic != _MAGIC or version != _VERSION:
        raise ValueError(f"{path}: not a feature map (magic={magic!r}, version={version})")
    body = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size)
    if body.size != frames * coeffs:
        raise ValueError(f"{path}: expected {frames * coeffs} values, found {body.size}")
    kind = FeatureKind.LMS if code == 0 else FeatureKind.MFCC
    return FeatureMap(kind, body.reshape(frames, coeffs).astype(np.float64), sr, digest)


def feature_map_to_csv(fm: FeatureMap, path: str | Path) -> None:
    header = ",".join(f"c{i}" for i in range(fm.coeffs))
    np.savetxt(path, fm.values, delimiter=",", header=header, comments="", fmt="%.6g")
