from __future__ import annotations

import numpy as np
import pytest

from stressanon.anonymize import (
    AnonymizationProfile, Gender, GenderFactors, WsolaConfig, anonymize, profile_for, wsola_stretch,
)
from stressanon.audio import AudioClip
from stressanon.errors import ConfigError, InsufficientInputError
from oracles import correlation, peak_frequency, tone

SR = 8000


def _harmonic(n=8000, f0=150.0, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(n) / SR
    x = sum((0.3 / k) * np.sin(2 * np.pi * f0 * k * t + rng.uniform(0, 6.28)) for k in range(1, 6))
    return x * (0.7 + 0.3 * np.sin(2 * np.pi * 4 * t))


def test_wsola_config_invariants():
    with pytest.raises(ConfigError):
        WsolaConfig(frame_ms=10.0, search_ms=5.0)
    assert WsolaConfig().frame_samples(SR) == 200


def test_wsola_identity():
    x = _harmonic()
    out = wsola_stretch(AudioClip(x, SR), 1.0)
    assert len(out) == len(x)
    assert correlation(out.samples, x) >= 0.99


def test_wsola_length_contract():
    out = wsola_stretch(AudioClip(_harmonic(), SR), 1.5)
    assert abs(len(out) - 12000) <= WsolaConfig().frame_samples(SR)


@pytest.mark.parametrize("a", [0.8, 1.5])
def test_wsola_keeps_pitch(a):
    out = wsola_stretch(AudioClip(tone(220, SR, 8000), SR), a)
    assert abs(peak_frequency(out.samples, SR) / 220 - 1) <= 0.02


def test_wsola_too_short():
    with pytest.raises(InsufficientInputError):
        wsola_stretch(AudioClip(np.zeros(100), SR), 1.2)


def test_anonymize_identity():
    x = _harmonic(seed=3)
    out = anonymize(AudioClip(x, SR), AnonymizationProfile(1.0))
    assert len(out) == len(x)
    assert correlation(out.samples, x) >= 0.99


def test_anonymize_scales_pitch():
    out = anonymize(AudioClip(tone(220, SR, 8000), SR), AnonymizationProfile(1.2))
    assert len(out) == 8000
    assert abs(peak_frequency(out.samples, SR) / 264 - 1) <= 0.03


@pytest.mark.parametrize("a,f", [(0.85, 300.0), (1.2, 500.0), (1.15, 800.0), (0.9, 1500.0)])
def test_pitch_scaling_law(a, f):
    out = anonymize(AudioClip(tone(f, SR, 6000), SR), AnonymizationProfile(a))
    assert abs(peak_frequency(out.samples, SR) / f / a - 1) <= 0.03


def test_content_above_nyquist_is_removed_not_an_error():
    out = anonymize(AudioClip(tone(3800, SR, 4000), SR), AnonymizationProfile(1.2))
    assert len(out) == 4000 and np.all(np.isfinite(out.samples))
    assert np.sqrt(np.mean(out.samples[500:-500] ** 2)) < 0.05


def test_anonymize_is_deterministic():
    clip = AudioClip(_harmonic(seed=5), SR)
    p = profile_for("male")
    assert anonymize(clip, p).samples.tobytes() == anonymize(clip, p).samples.tobytes()


@pytest.mark.parametrize("a", [0.85, 1.15, 1.2])
def test_anonymized_speechlike_signal_differs(a):
    x = _harmonic(seed=1)
    out = anonymize(AudioClip(x, SR), AnonymizationProfile(a))
    assert correlation(out.samples, x) < 0.9


def test_profile_lookup():
    f = GenderFactors()
    assert profile_for(Gender.MALE).stretch_factor_a == f.male == 1.20
    assert profile_for("female").stretch_factor_a == f.female == 0.85
    default = profile_for(Gender.UNSPECIFIED)
    assert default.stretch_factor_a == f.default and default.stretch_factor_a != 1.0
    custom = profile_for("male", GenderFactors(male=1.3))
    assert custom.stretch_factor_a == 1.3


def test_profile_invariants():
    with pytest.raises(ConfigError):
        AnonymizationProfile(0.0)
    with pytest.raises(ConfigError):
        GenderFactors(default=1.0)
    with pytest.raises(ConfigError):
        GenderFactors(male=-1.0)
