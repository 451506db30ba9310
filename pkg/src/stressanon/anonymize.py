"""Lightweight voice anonymization by WSOLA stretch + faster resampling.

The signal is time-stretched by a factor ``a`` with waveform-similarity
overlap-add (duration changes, pitch does not) and the stretched result is
then played back ``a`` times faster, so the output has the original length
while every frequency is scaled by ``a``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from stressanon.audio import AudioClip, resample_ratio
from stressanon.errors import ConfigError, InsufficientInputError


class Gender(str, enum.Enum):
    MALE = "male"
    FEMALE = "female"
    UNSPECIFIED = "unspecified"


@dataclass(frozen=True)
class WsolaConfig:
    frame_ms: float = 25.0
    overlap_fraction: float = 0.5
    search_ms: float = 7.5

    def __post_init__(self) -> None:
        if self.frame_ms <= 0:
            raise ConfigError("frame_ms must be positive")
        if not 0.0 < self.overlap_fraction < 1.0:
            raise ConfigError("overlap_fraction must lie in (0, 1)")
        if self.search_ms < 0:
            raise ConfigError("search_ms must be non-negative")
        if self.frame_ms <= 2.0 * self.search_ms:
            raise ConfigError("frame_ms must exceed twice search_ms")

    def frame_samples(self, sample_rate_hz: int) -> int:
        return max(4, int(round(self.frame_ms * sample_rate_hz / 1000.0)))

    def synthesis_hop(self, sample_rate_hz: int) -> int:
        frame = self.frame_samples(sample_rate_hz)
        return max(1, int(round(frame * (1.0 - self.overlap_fraction))))

    def search_samples(self, sample_rate_hz: int) -> int:
        return int(round(self.search_ms * sample_rate_hz / 1000.0))


@dataclass(frozen=True)
class AnonymizationProfile:
    stretch_factor_a: float
    gender: Gender = Gender.UNSPECIFIED
    wsola: WsolaConfig = field(default_factory=WsolaConfig)

    def __post_init__(self) -> None:
        if not (self.stretch_factor_a > 0 and math.isfinite(self.stretch_factor_a)):
            raise ConfigError(f"stretch factor must be positive, got {self.stretch_factor_a}")
        object.__setattr__(self, "gender", Gender(self.gender))


@dataclass(frozen=True)
class GenderFactors:
    """Per-gender stretch factors; male voices are raised, female lowered."""

    male: float = 1.20
    female: float = 0.85
    default: float = 1.15

    def __post_init__(self) -> None:
        for name in ("male", "female", "default"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"anonymize.{name}.a must be positive")
        if self.default == 1.0:
            raise ConfigError("anonymize.default.a must differ from 1 so the voice is modified")


def profile_for(gender: Gender | str, factors: GenderFactors | None = None,
                wsola: WsolaConfig | None = None) -> AnonymizationProfile:
    factors = factors or GenderFactors()
    gender = Gender(gender)
    a = {Gender.MALE: factors.male, Gender.FEMALE: factors.female}.get(gender, factors.default)
    return AnonymizationProfile(a, gender, wsola or WsolaConfig())


def _periodic_hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _best_offset(template: np.ndarray, region: np.ndarray, n: int) -> int:
    """Index in ``region`` whose length-``n`` segment best matches ``template``.

    Similarity is normalized cross-correlation; ties go to the candidate
    closest to the centre of the search region.
    """
    n_cand = region.size - n + 1
    windows = np.lib.stride_tricks.sliding_window_view(region, n)
    dots = windows @ template
    energy = np.sqrt(np.sum(windows * windows, axis=1) * float(template @ template))
    score = np.divide(dots, energy, out=np.zeros(n_cand), where=energy > 1e-12)
    centre = (n_cand - 1) // 2
    best = np.flatnonzero(score >= score.max() - 1e-12)
    return int(best[np.argmin(np.abs(best - centre))])


def wsola_stretch(clip: AudioClip, a: float, cfg: WsolaConfig | None = None) -> AudioClip:
    """Change duration by factor ``a`` without changing pitch.

    Output frames are placed every synthesis hop; the input segment for each
    frame is searched within ``search_ms`` of its natural position
    (output time / a) for the best waveform match with the natural
    continuation of the previously copied segment.
    """
    cfg = cfg or WsolaConfig()
    if not (a > 0 and math.isfinite(a)):
        raise ConfigError(f"stretch factor must be positive, got {a}")
    sr = clip.sample_rate_hz
    frame = cfg.frame_samples(sr)
    hop_out = cfg.synthesis_hop(sr)
    tol = cfg.search_samples(sr)
    x = clip.samples
    if x.size < frame:
        raise InsufficientInputError(f"{x.size} samples is shorter than one WSOLA frame ({frame})")

    n_out = int(round(a * x.size))
    n_frames = max(1, -(-(n_out - frame) // hop_out) + 1) if n_out > frame else 1
    hop_in = hop_out / a
    # zero padding keeps every candidate segment in bounds
    pad = tol + frame + hop_out
    xp = np.concatenate([np.zeros(pad), x, np.zeros(pad + int(math.ceil(hop_in * n_frames)) + frame)])
    window = _periodic_hann(frame)

    out = np.zeros(hop_out * (n_frames - 1) + frame)
    wsum = np.zeros_like(out)
    prev = pad
    for k in range(n_frames):
        natural = pad + int(round(k * hop_in))
        if k == 0:
            start = natural
        else:
            template = xp[prev + hop_out:prev + hop_out + frame]
            lo = natural - tol
            start = lo + _best_offset(template, xp[lo:natural + tol + frame], frame)
        seg = xp[start:start + frame]
        out[k * hop_out:k * hop_out + frame] += window * seg
        wsum[k * hop_out:k * hop_out + frame] += window
        prev = start
    y = np.divide(out, wsum, out=np.zeros_like(out), where=wsum > 1e-8)
    if y.size >= n_out:
        y = y[:n_out]
    else:
        y = np.concatenate([y, np.zeros(n_out - y.size)])
    return clip.with_samples(y)


def anonymize(clip: AudioClip, profile: AnonymizationProfile) -> AudioClip:
    """Stretch by ``a``, then reinterpret at ``a * sr`` and convert back to ``sr``.

    The result has exactly the input length; a tone at ``f`` comes out at
    ``a * f`` (content pushed above Nyquist is removed by the band limit).
    """
    a = profile.stretch_factor_a
    stretched = wsola_stretch(clip, a, profile.wsola)
    y = resample_ratio(stretched.samples, 1.0 / a, n_out=len(clip))
    return clip.with_samples(y)
