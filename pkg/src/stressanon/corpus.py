"""Dataset model: label taxonomies, JSONL manifests, splitting, synthetic corpora."""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

import numpy as np

from stressanon.anonymize import Gender
from stressanon.audio import AudioClip, read_wav, write_wav
from stressanon.errors import ManifestError, SplitError


class SpeakingStyle(str, enum.Enum):
    ANGER = "anger"
    FAST = "fast"
    LOMBARD = "lombard"
    LOUD = "loud"
    CLEAR = "clear"
    NEUTRAL = "neutral"
    SLOW = "slow"
    SOFT = "soft"
    QUESTION = "question"


class IsaLevel(str, enum.Enum):
    BORING = "boring"
    RELAXED = "relaxed"
    COMFORTABLE = "comfortable"
    HIGH = "high"
    EXCESSIVE = "excessive"

    @property
    def rank(self) -> int:
        return list(IsaLevel).index(self) + 1


class StressLabel(str, enum.Enum):
    STRESS = "stress"
    NO_STRESS = "no_stress"


class Domain(str, enum.Enum):
    SUSAS_LIKE = "susas_like"
    ATC_LIKE = "atc_like"
    SYNTHETIC = "synthetic"


class Split(str, enum.Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


_STYLE_GROUPS = {
    SpeakingStyle.ANGER: StressLabel.STRESS,
    SpeakingStyle.FAST: StressLabel.STRESS,
    SpeakingStyle.LOMBARD: StressLabel.STRESS,
    SpeakingStyle.LOUD: StressLabel.STRESS,
    SpeakingStyle.CLEAR: StressLabel.NO_STRESS,
    SpeakingStyle.NEUTRAL: StressLabel.NO_STRESS,
    SpeakingStyle.SLOW: StressLabel.NO_STRESS,
    SpeakingStyle.SOFT: StressLabel.NO_STRESS,
}

_ISA_GROUPS = {
    IsaLevel.BORING: StressLabel.NO_STRESS,
    IsaLevel.RELAXED: StressLabel.NO_STRESS,
    IsaLevel.COMFORTABLE: StressLabel.NO_STRESS,
    IsaLevel.HIGH: StressLabel.STRESS,
    IsaLevel.EXCESSIVE: StressLabel.STRESS,
}


def group_style(style: SpeakingStyle | str) -> StressLabel | None:
    """Binary stress group of a speaking style; ``None`` means excluded (question)."""
    return _STYLE_GROUPS.get(SpeakingStyle(style))


def group_isa(level: IsaLevel | str) -> StressLabel:
    return _ISA_GROUPS[IsaLevel(level)]


# -- manifest -------------------------------------------------------------

@dataclass(frozen=True)
class Utterance:
    id: str
    audio_path: str
    speaker_id: str = ""
    gender: Gender = Gender.UNSPECIFIED
    domain: Domain = Domain.SYNTHETIC
    style: SpeakingStyle | None = None
    isa: IsaLevel | None = None
    stress: StressLabel | None = None
    split: Split | None = None
    anonymized: bool = False
    augment_method: str | None = None
    source_id: str | None = None
    copy_index: int | None = None
    extra: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.id:
            raise ManifestError("utterance id must be a non-empty string")
        object.__setattr__(self, "gender", Gender(self.gender))
        object.__setattr__(self, "domain", Domain(self.domain))
        for name, enum_type in (("style", SpeakingStyle), ("isa", IsaLevel),
                                ("stress", StressLabel), ("split", Split)):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, enum_type(value))
        if self.style is not None and self.isa is not None:
            raise ManifestError(f"{self.id}: style and isa labels are mutually exclusive")

    @property
    def stress_label(self) -> StressLabel | None:
        """Explicit stress label, else the grouping of style / ISA level."""
        if self.stress is not None:
            return self.stress
        if self.style is not None:
            return group_style(self.style)
        if self.isa is not None:
            return group_isa(self.isa)
        return None

    def replace(self, **changes: Any) -> Utterance:
        return dataclasses.replace(self, **changes)

    def to_record(self) -> dict[str, Any]:
        rec: dict[str, Any] = {}
        for f in dataclasses.fields(self):
            if f.name == "extra":
                continue
            value = getattr(self, f.name)
            rec[f.name] = value.value if isinstance(value, enum.Enum) else value
        for key, value in self.extra.items():
            rec[key] = value
        return rec

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> Utterance:
        known = {f.name for f in dataclasses.fields(cls)} - {"extra"}
        kwargs = {k: v for k, v in rec.items() if k in known}
        extra = {k: v for k, v in rec.items() if k not in known}
        for key in ("gender", "domain"):
            if kwargs.get(key) is None:
                kwargs.pop(key, None)
        return cls(**kwargs, extra=extra)


LABEL_AXES = ("stress", "style", "isa")


def label_of(utt: Utterance, by: str) -> str | None:
    """Class label of ``utt`` on axis ``by`` (stress / style / isa)."""
    if by == "stress":
        lab = utt.stress_label
    elif by == "style":
        lab = utt.style
    elif by == "isa":
        lab = utt.isa
    else:
        raise ValueError(f"unknown label axis {by!r}; expected one of {LABEL_AXES}")
    return None if lab is None else lab.value


def class_names(by: str) -> list[str]:
    """Ordered class names of a label axis."""
    enum_type = {"stress": StressLabel, "style": SpeakingStyle, "isa": IsaLevel}[by]
    return [e.value for e in enum_type]


@dataclass(frozen=True)
class Manifest:
    utterances: tuple[Utterance, ...]
    metadata: Mapping[str, Any] = field(default_factory=dict)
    base_dir: Path | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "utterances", tuple(self.utterances))
        counts = Counter(u.id for u in self.utterances)
        dupes = sorted(i for i, c in counts.items() if c > 1)
        if dupes:
            raise ManifestError(f"duplicate utterance ids: {dupes[:5]}")

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    def with_utterances(self, utterances: Iterable[Utterance], **metadata: Any) -> Manifest:
        return Manifest(tuple(utterances), {**self.metadata, **metadata}, self.base_dir)

    def filter(self, pred: Callable[[Utterance], bool]) -> Manifest:
        return self.with_utterances(u for u in self.utterances if pred(u))

    def in_split(self, split: Split | str) -> Manifest:
        split = Split(split)
        return self.filter(lambda u: u.split is split)

    def audio_file(self, utt: Utterance) -> Path:
        p = Path(utt.audio_path)
        if p.is_absolute() or self.base_dir is None:
            return p
        return self.base_dir / p

    def load_audio(self, utt: Utterance) -> AudioClip:
        return read_wav(self.audio_file(utt))

    def counts(self, by: str = "stress") -> dict[tuple[str | None, str | None], int]:
        """Utterance counts per (class, split)."""
        out: Counter = Counter()
        for u in self.utterances:
            out[(label_of(u, by), None if u.split is None else u.split.value)] += 1
        return dict(out)


def meta_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def write_manifest(manifest: Manifest, path: str | Path) -> None:
    """JSON Lines, one utterance per line; metadata goes to ``<path>.meta.json``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for utt in manifest.utterances:
            fh.write(json.dumps(utt.to_record(), ensure_ascii=False) + "\n")
    meta_path(path).write_text(json.dumps(dict(manifest.metadata), sort_keys=True, indent=2) + "\n",
                               encoding="utf-8")


def read_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    utterances = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"invalid JSON: {exc.msg}", lineno) from exc
            if not isinstance(rec, dict):
                raise ManifestError("record must be a JSON object", lineno)
            for required in ("id", "audio_path"):
                if required not in rec:
                    raise ManifestError(f"missing required field {required!r}", lineno)
            try:
                utterances.append(Utterance.from_record(rec))
            except (ValueError, TypeError) as exc:
                raise ManifestError(str(exc), lineno) from exc
    mp = meta_path(path)
    metadata = json.loads(mp.read_text(encoding="utf-8")) if mp.exists() else {}
    return Manifest(tuple(utterances), metadata, path.parent)


# -- splitting ------------------------------------------------------------

def split_counts(n: int, test_fraction: float = 0.2, val_fraction: float = 0.2) -> tuple[int, int, int]:
    """(train, val, test) sizes: floor on the held-out part, test first then val."""
    if n < 3:
        raise SplitError(f"a class needs at least 3 samples to split, got {n}")
    test = int(np.floor(test_fraction * n))
    val = int(np.floor(val_fraction * (n - test)))
    return n - test - val, val, test


def derive_seed(*parts: Any) -> int:
    """Stable 63-bit seed from arbitrary printable parts."""
    blob = "\x1f".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little") >> 1


def split_manifest(manifest: Manifest, seed: int = 0, by: str = "stress",
                   test_fraction: float = 0.2, val_fraction: float = 0.2) -> Manifest:
    """Stratified train/val/test assignment.

    For the stress axis, utterances whose style is excluded from the binary
    grouping are dropped before splitting. Every class is shuffled with its
    own seed, then cut into test, val and train blocks sized by
    :func:`split_counts`.
    """
    groups: dict[str, list[Utterance]] = defaultdict(list)
    for utt in manifest.utterances:
        lab = label_of(utt, by)
        if lab is None:
            if by == "stress" and utt.style is SpeakingStyle.QUESTION:
                continue
            raise SplitError(f"utterance {utt.id} has no {by} label")
        groups[lab].append(utt)

    assigned: dict[str, Split] = {}
    for lab in sorted(groups):
        members = sorted(groups[lab], key=lambda u: u.id)
        train, val, test = split_counts(len(members), test_fraction, val_fraction)
        order = np.random.default_rng(derive_seed("split", seed, lab)).permutation(len(members))
        for rank, idx in enumerate(order):
            if rank < test:
                assigned[members[idx].id] = Split.TEST
            elif rank < test + val:
                assigned[members[idx].id] = Split.VAL
            else:
                assigned[members[idx].id] = Split.TRAIN
    kept = [u.replace(split=assigned[u.id]) for u in manifest.utterances if u.id in assigned]
    return manifest.with_utterances(kept, split_seed=seed, split_axis=by)


# -- SUSAS shape check ----------------------------------------------------

SUSAS_PER_STYLE = 630
SUSAS_NEUTRAL = 631


@dataclass
class ShapeReport:
    ok: bool
    style_counts: dict[str, int]
    total: int
    binary_total: int
    violations: list[str]

    def render(self) -> str:
        lines = [f"total={self.total} binary={self.binary_total} ok={self.ok}"]
        lines += [f"  {s}: {c}" for s, c in self.style_counts.items()]
        lines += [f"  VIOLATION {v}" for v in self.violations]
        return "\n".join(lines)


def validate_susas_shape(manifest: Manifest) -> ShapeReport:
    """Check 630 utterances per style, 631 neutral, 5671 total, 5041 binary."""
    counts = Counter(u.style for u in manifest.utterances if u.style is not None)
    style_counts = {s.value: counts.get(s, 0) for s in SpeakingStyle}
    violations = []
    for style in SpeakingStyle:
        want = SUSAS_NEUTRAL if style is SpeakingStyle.NEUTRAL else SUSAS_PER_STYLE
        if style_counts[style.value] != want:
            violations.append(f"{style.value}: expected {want}, found {style_counts[style.value]}")
    total = len(manifest.utterances)
    expected_total = 8 * SUSAS_PER_STYLE + SUSAS_NEUTRAL
    if total != expected_total:
        violations.append(f"total: expected {expected_total}, found {total}")
    binary = sum(1 for u in manifest.utterances if u.style is not None and group_style(u.style) is not None)
    expected_binary = expected_total - SUSAS_PER_STYLE
    if binary != expected_binary:
        violations.append(f"binary subset: expected {expected_binary}, found {binary}")
    return ShapeReport(not violations, style_counts, total, binary, violations)


# -- synthetic corpus -----------------------------------------------------

@dataclass(frozen=True)
class StyleKnobs:
    gain_db: float = 0.0
    pitch: float = 1.0
    period: float = 1.0
    jitter: float = 0.0
    noise_snr_db: float | None = None
    rise: float = 0.0
    formant_shift: float = 1.0


STYLE_KNOBS = {
    SpeakingStyle.ANGER: StyleKnobs(gain_db=8.0, pitch=1.25, jitter=0.05, period=0.85),
    SpeakingStyle.FAST: StyleKnobs(gain_db=2.0, period=0.5),
    SpeakingStyle.LOMBARD: StyleKnobs(gain_db=6.0, pitch=1.15, noise_snr_db=10.0),
    SpeakingStyle.LOUD: StyleKnobs(gain_db=12.0, pitch=1.1),
    SpeakingStyle.CLEAR: StyleKnobs(gain_db=1.0, period=1.1, formant_shift=1.1),
    SpeakingStyle.NEUTRAL: StyleKnobs(),
    SpeakingStyle.SLOW: StyleKnobs(period=1.6),
    SpeakingStyle.SOFT: StyleKnobs(gain_db=-10.0, pitch=0.95),
    SpeakingStyle.QUESTION: StyleKnobs(rise=0.35),
}

# acoustic stand-ins for ISA workload levels
ISA_STYLE = {
    IsaLevel.BORING: SpeakingStyle.SLOW,
    IsaLevel.RELAXED: SpeakingStyle.SOFT,
    IsaLevel.COMFORTABLE: SpeakingStyle.NEUTRAL,
    IsaLevel.HIGH: SpeakingStyle.FAST,
    IsaLevel.EXCESSIVE: SpeakingStyle.LOUD,
}

_STRESS_STYLES = [s for s, g in _STYLE_GROUPS.items() if g is StressLabel.STRESS]
_CALM_STYLES = [s for s, g in _STYLE_GROUPS.items() if g is StressLabel.NO_STRESS]

BASE_RMS = 0.04
BASE_SYLLABLE_S = 0.22
N_SPEAKERS = 8


def _speaker(index: int, f0_scale: float) -> tuple[str, Gender, float]:
    gender = Gender.MALE if index % 2 == 0 else Gender.FEMALE
    base = 110.0 + 7.0 * (index // 2) if gender is Gender.MALE else 190.0 + 9.0 * (index // 2)
    return f"spk{index:02d}", gender, base * f0_scale


def synth_clip(style: SpeakingStyle | str, f0_hz: float, rng: np.random.Generator,
               sample_rate_hz: int = 8000, duration_s: float = 1.0) -> AudioClip:
    """Harmonic-complex pseudo utterance carrying the acoustic cues of ``style``.

    Fundamental plus four harmonics weighted by two formant-like bumps,
    amplitude-modulated into syllables. Style knobs set gain, pitch,
    syllable period, jitter, babble noise and final pitch rise.
    """
    knobs = STYLE_KNOBS[SpeakingStyle(style)]
    n = int(round(duration_s * sample_rate_hz))
    t = np.arange(n) / sample_rate_hz

    f0 = f0_hz * knobs.pitch * rng.uniform(0.95, 1.05)
    drift = np.cumsum(rng.normal(size=n)) / np.sqrt(n)
    contour = 1.0 + 0.02 * drift + knobs.rise * np.clip((t / duration_s - 0.6) / 0.4, 0.0, 1.0)
    if knobs.jitter:
        steps = rng.normal(scale=knobs.jitter, size=int(duration_s * 50) + 2)
        contour *= 1.0 + np.interp(t, np.linspace(0, duration_s, steps.size), steps)
    phase = 2.0 * np.pi * np.cumsum(f0 * contour) / sample_rate_hz

    formants = np.array([500.0, 1500.0]) * knobs.formant_shift * rng.uniform(0.95, 1.05)
    voiced = np.zeros(n)
    for h in range(1, 6):
        amp = 0.15 + np.sum(np.exp(-((h * f0 - formants) ** 2) / (2 * 250.0 ** 2)))
        voiced += amp * np.sin(h * phase + rng.uniform(0, 2 * np.pi))

    period = BASE_SYLLABLE_S * knobs.period * rng.uniform(0.9, 1.1)
    syllable = (0.5 - 0.5 * np.cos(2 * np.pi * (t / period + rng.uniform()))) ** 2
    x = voiced * syllable
    x *= BASE_RMS * 10 ** ((knobs.gain_db + rng.uniform(-2.0, 2.0)) / 20) / np.sqrt(np.mean(x ** 2))

    if knobs.noise_snr_db is not None:
        spectrum = np.fft.rfft(rng.normal(size=n))
        freqs = np.fft.rfftfreq(n, 1.0 / sample_rate_hz)
        spectrum[(freqs < 300) | (freqs > 1500)] = 0.0
        babble = np.fft.irfft(spectrum, n=n)
        babble *= np.sqrt(np.mean(x ** 2) / 10 ** (knobs.noise_snr_db / 10) / np.mean(babble ** 2))
        x = x + babble
    return AudioClip(np.clip(x, -0.99, 0.99), sample_rate_hz)


def _choose_style(label: str, axis: str, rng: np.random.Generator) -> tuple[SpeakingStyle, dict]:
    if axis == "style":
        return SpeakingStyle(label), {"style": SpeakingStyle(label)}
    if axis == "isa":
        level = IsaLevel(label)
        return ISA_STYLE[level], {"isa": level}
    stress = StressLabel(label)
    pool = _STRESS_STYLES if stress is StressLabel.STRESS else _CALM_STYLES
    style = pool[int(rng.integers(len(pool)))]
    return style, {"style": style, "stress": stress}


def synth_corpus(counts: Mapping[str, int], out_dir: str | Path, axis: str = "stress",
                 sample_rate_hz: int = 8000, seed: int = 0, corpus: str = "synth",
                 domain: Domain | str = Domain.SYNTHETIC, f0_scale: float = 1.0,
                 duration_s: float = 1.0) -> Manifest:
    """Generate a labelled corpus of synthetic utterances and its manifest.

    ``counts`` maps class names on ``axis`` (stress / style / isa) to the
    number of clips. Audio lands in ``<out_dir>/<corpus>/unsplit/<id>.wav``;
    the manifest stores paths relative to ``out_dir``. Identical arguments
    give identical audio.
    """
    if axis not in LABEL_AXES:
        raise ValueError(f"unknown label axis {axis!r}")
    out_dir = Path(out_dir)
    audio_dir = out_dir / corpus / "unsplit"
    audio_dir.mkdir(parents=True, exist_ok=True)
    valid = set(class_names(axis))
    utterances = []
    index = 0
    for label in sorted(counts):
        if label not in valid:
            raise ValueError(f"{label!r} is not a {axis} class; expected one of {sorted(valid)}")
        if counts[label] < 1:
            raise ValueError(f"class {label!r} needs at least one clip")
        for _ in range(counts[label]):
            uid = f"{corpus}-{index:05d}"
            rng = np.random.default_rng(derive_seed("synth", seed, uid))
            style, labels = _choose_style(label, axis, rng)
            speaker_id, gender, f0 = _speaker(int(rng.integers(N_SPEAKERS)), f0_scale)
            clip = synth_clip(style, f0, rng, sample_rate_hz, duration_s)
            rel = Path(corpus) / "unsplit" / f"{uid}.wav"
            write_wav(clip, out_dir / rel)
            utterances.append(Utterance(uid, rel.as_posix(), speaker_id, gender, Domain(domain), **labels))
            index += 1
    meta = {"corpus": corpus, "sample_rate": sample_rate_hz, "seed": seed, "axis": axis}
    return Manifest(tuple(utterances), meta, out_dir)
