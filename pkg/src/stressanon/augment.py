"""VTLP and white-noise augmentation plus the class-balancing copy plan."""

from __future__ import annotations

import enum
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from stressanon.audio import AudioClip, write_wav
from stressanon.corpus import Manifest, Split, Utterance, derive_seed, label_of
from stressanon.dsp import PreprocessConfig, analysis_frames, istft
from stressanon.errors import ConfigError, DomainError, PlanError, PlanViolationError


class AugmentMethod(str, enum.Enum):
    NONE = "none"
    VTLP = "vtlp"
    WHITE_NOISE = "white_noise"


SPLIT_ORDER = (Split.TRAIN, Split.VAL, Split.TEST)


@dataclass(frozen=True)
class AugmentationSpec:
    method: AugmentMethod = AugmentMethod.NONE
    vtlp_warp_range: tuple[float, float] = (0.9, 1.1)
    vtlp_cutoff_fraction: float = 0.8
    noise_snr_db: float = 20.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "method", AugmentMethod(self.method))
        low, high = self.vtlp_warp_range
        if not 0.0 < low <= 1.0 <= high:
            raise ConfigError(f"VTLP warp range must satisfy 0 < low <= 1 <= high, got {self.vtlp_warp_range}")
        if math.isnan(self.noise_snr_db):
            raise ConfigError("noise_snr_db must not be NaN")
        if not 0.0 < self.vtlp_cutoff_fraction < 1.0:
            raise ConfigError("vtlp_cutoff_fraction must lie in (0, 1)")

    def apply(self, clip: AudioClip, seed: int, cfg: PreprocessConfig | None = None) -> tuple[AudioClip, dict]:
        """Augment ``clip`` with this method; returns the clip and provenance details."""
        rng = np.random.default_rng(seed)
        if self.method is AugmentMethod.VTLP:
            warp = float(rng.uniform(*self.vtlp_warp_range))
            out = vtlp(clip, warp, cfg or PreprocessConfig(), cutoff_fraction=self.vtlp_cutoff_fraction)
            return out, {"vtlp_warp": round(warp, 6)}
        if self.method is AugmentMethod.WHITE_NOISE:
            return add_white_noise(clip, self.noise_snr_db, seed), {"noise_snr_db": self.noise_snr_db}
        return clip, {}


def warp_frequency(f, alpha: float, nyquist: float, cutoff_fraction: float = 0.8):
    """Piecewise-linear VTLP warp: scale by ``alpha`` below the boundary, then
    a straight line to Nyquist so that 0 and Nyquist stay fixed."""
    f = np.asarray(f, dtype=np.float64)
    boundary = cutoff_fraction * nyquist * min(alpha, 1.0) / alpha
    upper = nyquist - (nyquist - alpha * boundary) / (nyquist - boundary) * (nyquist - f)
    return np.where(f <= boundary, alpha * f, upper)


def _unwarp_frequency(g, alpha: float, nyquist: float, cutoff_fraction: float) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    boundary = cutoff_fraction * nyquist * min(alpha, 1.0) / alpha
    knee = alpha * boundary
    upper = nyquist - (nyquist - g) * (nyquist - boundary) / (nyquist - knee)
    return np.where(g <= knee, g / alpha, upper)


def _principal(phase: np.ndarray) -> np.ndarray:
    return (phase + np.pi) % (2.0 * np.pi) - np.pi


def vtlp(clip: AudioClip, warp: float, cfg: PreprocessConfig | None = None,
         seed: int | None = None, cutoff_fraction: float = 0.8) -> AudioClip:
    """Vocal tract length perturbation by warping the STFT frequency axis.

    Magnitudes are read from the un-warped frequency of every output bin.
    Phases are re-accumulated from the warped instantaneous frequencies so a
    moved partial stays coherent between frames; ``warp=1`` reproduces the
    input. ``seed`` is accepted for interface symmetry and unused: the
    transform is deterministic given ``warp``.
    """
    if not warp > 0:
        raise DomainError(f"VTLP warp factor must be positive, got {warp}")
    cfg = cfg or PreprocessConfig()
    sr = clip.sample_rate_hz
    window, hop = cfg.window_samples(sr), cfg.hop_samples(sr)
    fft_size = cfg.resolved_fft_size(sr)
    x = clip.samples
    if x.size == 0:
        return clip

    spec, _ = analysis_frames(x, window, hop, fft_size)
    n_bins = spec.shape[1]
    nyquist = sr / 2.0
    bin_hz = np.arange(n_bins) * sr / fft_size
    src_pos = np.clip(_unwarp_frequency(bin_hz, warp, nyquist, cutoff_fraction) * fft_size / sr, 0, n_bins - 1)
    lo = np.floor(src_pos).astype(int)
    hi = np.minimum(lo + 1, n_bins - 1)
    frac = src_pos - lo
    nearest = np.rint(src_pos).astype(int)

    mag = np.abs(spec)
    mag_out = mag[:, lo] * (1.0 - frac) + mag[:, hi] * frac

    phase = np.angle(spec)
    expected = 2.0 * np.pi * np.arange(n_bins) * hop / fft_size
    # instantaneous frequency (rad/sample) of each input bin between frames
    inst = np.empty_like(phase)
    inst[0] = expected / hop
    inst[1:] = (expected + _principal(np.diff(phase, axis=0) - expected)) / hop
    inst_hz = np.abs(inst[:, nearest]) * sr / (2.0 * np.pi)
    warped_rad = warp_frequency(np.minimum(inst_hz, nyquist), warp, nyquist, cutoff_fraction) * 2.0 * np.pi / sr
    out_phase = np.empty_like(phase)
    out_phase[0] = phase[0, nearest]
    out_phase[1:] = phase[0, nearest] + np.cumsum(warped_rad[1:] * hop, axis=0)
    y = istft(mag_out * np.exp(1j * out_phase), window, hop, fft_size, x.size)
    return clip.with_samples(y)


def add_white_noise(clip: AudioClip, snr_db: float, seed: int) -> AudioClip:
    """Add Gaussian noise scaled so that the realised SNR equals ``snr_db``."""
    if math.isinf(snr_db) and snr_db > 0:
        return clip
    x = clip.samples
    p_signal = float(np.mean(x * x)) if x.size else 0.0
    if p_signal <= 0.0:
        raise DomainError("SNR is undefined for a silent clip")
    noise = np.random.default_rng(seed).normal(size=x.size)
    noise *= math.sqrt(p_signal / 10.0 ** (snr_db / 10.0) / float(np.mean(noise * noise)))
    return clip.with_samples(x + noise)


# -- plan -----------------------------------------------------------------

@dataclass(frozen=True)
class MethodAllocation:
    """``sources`` clean utterances each produce ``copies`` augmented versions."""

    sources: int
    copies: int

    @property
    def outputs(self) -> int:
        return self.sources * self.copies


@dataclass(frozen=True)
class PlanCell:
    clean: int
    methods: Mapping[AugmentMethod, MethodAllocation]
    # True when augmented sources are taken out of the clean pool (majority class)
    replaces_sources: bool = False

    @property
    def input_count(self) -> int:
        if self.replaces_sources:
            return self.clean + sum(a.sources for a in self.methods.values())
        return self.clean

    @property
    def total(self) -> int:
        return self.clean + sum(a.outputs for a in self.methods.values())


@dataclass(frozen=True)
class AugmentationPlan:
    cells: Mapping[tuple[str, Split], PlanCell]
    minority_class: str
    methods: tuple[AugmentMethod, ...] = (AugmentMethod.VTLP, AugmentMethod.WHITE_NOISE)

    def cell(self, label: str, split: Split | str) -> PlanCell:
        return self.cells[(label, Split(split))]

    def classes(self) -> list[str]:
        return sorted({label for label, _ in self.cells})

    def totals(self, label: str) -> list[int]:
        return [self.cell(label, s).total for s in SPLIT_ORDER]

    def clean_counts(self, label: str) -> list[int]:
        return [self.cell(label, s).clean for s in SPLIT_ORDER]

    def outputs(self, label: str, method: AugmentMethod | str) -> list[int]:
        method = AugmentMethod(method)
        return [self.cell(label, s).methods[method].outputs for s in SPLIT_ORDER]

    def is_identity(self) -> bool:
        return all(a.outputs == 0 for c in self.cells.values() for a in c.methods.values())

    def render(self) -> str:
        """Text table in the layout of the augmentation summary."""
        labels = self.classes()
        head = ["method"] + [f"{lab} {[self.cell(lab, sp).input_count for sp in SPLIT_ORDER]}"
                             for lab in labels]
        rows = [["none"] + [str(self.clean_counts(lab)) for lab in labels]]
        for m in self.methods:
            row = [m.value]
            for lab in labels:
                allocs = [self.cell(lab, s).methods[m] for s in SPLIT_ORDER]
                copies = {a.copies for a in allocs if a.sources}
                row.append(f"{[a.sources for a in allocs]} * {max(copies) if copies else 0}")
            rows.append(row)
        rows.append(["total"] + [str(self.totals(lab)) for lab in labels])
        return "\n".join("\t".join(r) for r in [head] + rows)


def build_plan(class_counts: Mapping[str, Sequence[int]], minority_class: str | None = None,
               copies_per_method: int = 5,
               methods: Sequence[AugmentMethod | str] = (AugmentMethod.VTLP, AugmentMethod.WHITE_NOISE)
               ) -> AugmentationPlan:
    """Balance two classes given per-split (train, val, test) clean counts.

    Every minority sample is kept and gets ``copies_per_method`` copies per
    method. The majority class generates, per method, as many augmented
    samples as the minority does; each majority sample still appears exactly
    once (augmented samples replace their source) and the rest stay clean.
    Classes that are already equal in every split get an identity plan.
    """
    if len(class_counts) != 2:
        raise PlanError(f"plan needs exactly two classes, got {sorted(class_counts)}")
    methods = tuple(AugmentMethod(m) for m in methods)
    if copies_per_method < 0:
        raise PlanError("copies_per_method must be non-negative")
    counts = {lab: [int(c) for c in v] for lab, v in class_counts.items()}
    for lab, v in counts.items():
        if len(v) != 3 or min(v) < 0:
            raise PlanError(f"class {lab!r} needs three non-negative split counts, got {v}")
        if sum(v) == 0:
            raise PlanError(f"class {lab!r} is empty")
    if minority_class is None:
        minority_class = min(sorted(counts), key=lambda lab: sum(counts[lab]))
    if minority_class not in counts:
        raise PlanError(f"minority class {minority_class!r} not among {sorted(counts)}")
    majority_class = next(lab for lab in counts if lab != minority_class)

    cells: dict[tuple[str, Split], PlanCell] = {}
    if counts[minority_class] == counts[majority_class]:
        # already balanced in every split: nothing to do
        for lab in counts:
            for i, split in enumerate(SPLIT_ORDER):
                cells[(lab, split)] = PlanCell(counts[lab][i], {m: MethodAllocation(0, 0) for m in methods})
        return AugmentationPlan(cells, minority_class, methods)
    for i, split in enumerate(SPLIT_ORDER):
        m = counts[minority_class][i]
        cells[(minority_class, split)] = PlanCell(
            m, {meth: MethodAllocation(m, copies_per_method) for meth in methods})
        n = counts[majority_class][i]
        per_method = min(copies_per_method * m, n // max(1, len(methods)))
        cells[(majority_class, split)] = PlanCell(
            n - len(methods) * per_method,
            {meth: MethodAllocation(per_method, 1 if per_method else 0) for meth in methods},
            replaces_sources=True)
    return AugmentationPlan(cells, minority_class, methods)


@dataclass
class _Job:
    source: Utterance
    method: AugmentMethod
    copy_index: int


def execute_plan(manifest: Manifest, plan: AugmentationPlan,
                 specs: Mapping[AugmentMethod | str, AugmentationSpec] | None = None,
                 seed: int = 0, out_dir: str | Path | None = None, by: str = "stress",
                 preprocess: PreprocessConfig | None = None) -> Manifest:
    """Materialise ``plan`` on a split manifest.

    Augmented copies inherit the split of their source and record
    ``source_id``, ``augment_method``, ``copy_index`` and the derived seed.
    Audio goes to ``<out_dir>/<corpus>/<split>/<id>.wav``.
    """
    specs = {AugmentMethod(k): v for k, v in (specs or {}).items()}
    for meth in plan.methods:
        specs.setdefault(meth, AugmentationSpec(method=meth))

    groups: dict[tuple[str, Split], list[Utterance]] = {}
    for utt in manifest.utterances:
        if utt.split is None:
            raise PlanViolationError(f"utterance {utt.id} has no split; split the manifest first")
        groups.setdefault((label_of(utt, by), utt.split), []).append(utt)
    for key in set(groups) | set(plan.cells):
        have = len(groups.get(key, []))
        cell = plan.cells.get(key)
        want = cell.input_count if cell else 0
        if have != want:
            raise PlanViolationError(f"class {key[0]!r} split {key[1].value}: plan expects {want}, manifest has {have}")

    if plan.is_identity():
        return manifest
    if out_dir is None:
        raise ConfigError("out_dir is required when the plan creates audio")
    out_dir = Path(out_dir)
    corpus = str(manifest.metadata.get("corpus", "corpus"))

    kept: set[str] = set()
    jobs: list[_Job] = []
    for (label, split), members in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
        cell = plan.cells[(label, split)]
        members = sorted(members, key=lambda u: u.id)
        if cell.replaces_sources:
            order = np.random.default_rng(derive_seed("plan", seed, label, split.value)).permutation(len(members))
            shuffled = [members[i] for i in order]
            kept.update(u.id for u in shuffled[:cell.clean])
            cursor = cell.clean
            for meth in plan.methods:
                alloc = cell.methods[meth]
                for utt in shuffled[cursor:cursor + alloc.sources]:
                    jobs.extend(_Job(utt, meth, c) for c in range(alloc.copies))
                cursor += alloc.sources
        else:
            kept.update(u.id for u in members)
            for meth in plan.methods:
                for utt in members[:cell.methods[meth].sources]:
                    jobs.extend(_Job(utt, meth, c) for c in range(cell.methods[meth].copies))

    def relocate(utt: Utterance) -> Utterance:
        src = manifest.audio_file(utt).resolve()
        return utt.replace(audio_path=Path(os.path.relpath(src, out_dir.resolve())).as_posix())

    new_by_source: dict[str, list[Utterance]] = {}
    for job in sorted(jobs, key=lambda j: (j.source.id, j.method.value, j.copy_index)):
        src = job.source
        aug_seed = derive_seed(seed, src.id, job.method.value, job.copy_index)
        clip, details = specs[job.method].apply(manifest.load_audio(src), aug_seed, preprocess)
        uid = f"{src.id}-{job.method.value}{job.copy_index}"
        rel = Path(corpus) / src.split.value / f"{uid}.wav"
        (out_dir / rel).parent.mkdir(parents=True, exist_ok=True)
        write_wav(clip, out_dir / rel)
        extra = {**src.extra, "augment_seed": aug_seed, **details}
        new_by_source.setdefault(src.id, []).append(src.replace(
            id=uid, audio_path=rel.as_posix(), augment_method=job.method.value,
            source_id=src.id, copy_index=job.copy_index, extra=extra))

    out: list[Utterance] = []
    for utt in manifest.utterances:
        if utt.id in kept:
            out.append(relocate(utt))
        out.extend(new_by_source.get(utt.id, []))
    return Manifest(tuple(out), {**manifest.metadata, "augment_seed": seed,
                                 "augment_minority": plan.minority_class}, out_dir)
