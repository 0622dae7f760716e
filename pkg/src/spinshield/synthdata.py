"""Planted-shortcut synthetic clips and dataset files.

Clips are multi-sinusoid patch profiles.  Fake clips carry two independent
fingerprints:

* an *amplitude shortcut*: an extra sinusoid at one spectral bin, trivially
  visible in the amplitude spectrum and trivially removable by masking it;
* a *robust coherence cue*: the leading component flips sign at one mid-clip
  frame shared by every patch, a temporally coherent event.

Real clips carry the same sign-flip marginals, but scattered: each patch
inverts one side of its own stratified flip frame, so per-patch amplitude
spectra are distributed identically to the fakes' and the patch-mean profile
cancels to zero.  The only exploitable differences are therefore the shortcut
bin (pure amplitude, fragile) and the cross-patch coherence of the flip
(temporal structure, untouched by per-bin amplitude edits).  A detector that
reads only amplitudes collapses when the shortcut bin is suppressed; one that
reads the coherent structure does not.  That contrast is what the training
harness measures.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import clipio
from .errors import DataFormatError
from .parallel import parallel_map
from .spectral import DEFAULT_FPS, FloatArray, PatchSignalClip

PHASE_SLOPE_RANGE = 0.15  # radians per patch-grid step

# shared high-band texture: both classes carry patch-incoherent energy around
# the shortcut bin, so the absolute level there is uninformative and only the
# planted excess separates the classes
TEXTURE_AMPLITUDE = (0.20, 0.45)


@dataclass(frozen=True)
class DatasetSpec:
    n_clips: int = 4000
    frames: int = 16
    patches: int = 16
    shortcut_bin: int = 5
    shortcut_amplitude: float = 0.8
    phase_cue_strength: float = 1.0
    base_amplitudes: tuple[float, ...] = (1.0, 0.6, 0.3)
    base_bins: tuple[int, ...] = (1, 2, 3)
    base_level_range: tuple[float, float] = (0.3, 0.7)
    noise_std: float = 0.05
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_clips < 1:
            raise ValueError("n_clips must be positive")
        if self.base_level_range[0] > self.base_level_range[1]:
            raise ValueError("base_level_range must be ordered")
        if self.frames < 4:
            raise ValueError("need at least 4 frames")
        if self.patches < 1:
            raise ValueError("patches must be positive")
        if len(self.base_amplitudes) != len(self.base_bins) or not self.base_bins:
            raise ValueError("base_amplitudes and base_bins must align and be non-empty")
        nyquist = self.frames // 2
        if not 1 <= self.shortcut_bin <= nyquist - 1:
            raise ValueError(f"shortcut bin must lie in [1, {nyquist - 1}]")
        if self.shortcut_bin in self.base_bins:
            raise ValueError("shortcut bin must be distinct from base component bins")
        if any(not 1 <= b <= nyquist - 1 for b in self.base_bins):
            raise ValueError("base bins must be interior bins")
        if self.noise_std < 0 or self.shortcut_amplitude < 0:
            raise ValueError("amplitudes and noise must be non-negative")


@dataclass(frozen=True)
class LabeledClip:
    clip: PatchSignalClip
    y: int
    provenance: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.y not in (0, 1):
            raise ValueError("label must be 0 (real) or 1 (fake)")


def _patch_grid_shape(patches: int) -> tuple[int, int]:
    rows = max(1, int(math.isqrt(patches)))
    cols = math.ceil(patches / rows)
    return rows, cols


def _clip_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.array([seed, index], dtype=np.uint64)))


def _flip_profiles(
    spec: DatasetSpec, label: int, t0: int, rng: np.random.Generator
) -> FloatArray:
    """Per-patch multipliers carrying the coherence cue.

    Fakes invert the leading component from the shared frame t0 onward.  Reals
    invert one side (early or late, alternating) of per-patch flip frames that
    stratify the same range, which matches the per-patch amplitude-spectrum
    marginals while the patch-mean profile cancels.
    """
    m, t_len = spec.patches, spec.frames
    t = np.arange(t_len)
    factor = 1.0 - 2.0 * spec.phase_cue_strength
    if label == 1:
        return np.where(t[None, :] >= t0, factor, 1.0) * np.ones((m, 1))
    lo, hi = t_len // 4, 3 * t_len // 4
    strat_t0 = lo + (np.arange(m) * (hi - lo + 1)) // m
    late_side = np.arange(m) % 2 == 0
    order = rng.permutation(m)
    t0_m = strat_t0[order]
    late_m = late_side[order]
    late_mask = t[None, :] >= t0_m[:, None]
    segment = np.where(late_m[:, None], late_mask, ~late_mask)
    return np.where(segment, factor, 1.0)


def generate_clip(spec: DatasetSpec, index: int) -> LabeledClip:
    """One clip; fake labels land on even indices so any prefix stays balanced."""
    label = 1 if index % 2 == 0 else 0
    rng = _clip_rng(spec.seed, index)
    m, t_len = spec.patches, spec.frames
    rows, cols = _patch_grid_shape(m)
    pr = np.arange(m) // cols
    pc = np.arange(m) % cols
    t = np.arange(t_len)

    base_level = rng.uniform(spec.base_level_range[0], spec.base_level_range[1], size=m)
    signals = np.tile(base_level[:, None], (1, t_len))

    # all stochastic choices are drawn regardless of label so that with both
    # cues switched off the two populations are literally identical
    t0 = int(rng.integers(t_len // 4, 3 * t_len // 4 + 1))
    flip = _flip_profiles(spec, label, t0, rng) if spec.phase_cue_strength != 0.0 else None

    for i, (amp, bin_k) in enumerate(zip(spec.base_amplitudes, spec.base_bins)):
        psi = rng.uniform(0.0, 2.0 * np.pi)
        slope_r = rng.uniform(-PHASE_SLOPE_RANGE, PHASE_SLOPE_RANGE)
        slope_c = rng.uniform(-PHASE_SLOPE_RANGE, PHASE_SLOPE_RANGE)
        phases = psi + slope_r * pr + slope_c * pc
        wave = np.sin(2.0 * np.pi * bin_k * t[None, :] / t_len + phases[:, None])
        if i == 0 and flip is not None:
            wave = wave * flip
        signals += amp * wave

    # texture around the shortcut bin, identical in distribution for both classes
    nyquist = t_len // 2
    lo_amp, hi_amp = TEXTURE_AMPLITUDE
    for bin_k in range(max(1, spec.shortcut_bin - 1), min(nyquist - 1, spec.shortcut_bin + 1) + 1):
        c_k = rng.uniform(lo_amp, hi_amp)
        rho = rng.uniform(0.0, 2.0 * np.pi, size=m)
        signals += c_k * np.sin(2.0 * np.pi * bin_k * t[None, :] / t_len + rho[:, None])

    chi = rng.uniform(0.0, 2.0 * np.pi)
    chi_r = rng.uniform(-PHASE_SLOPE_RANGE, PHASE_SLOPE_RANGE)
    chi_c = rng.uniform(-PHASE_SLOPE_RANGE, PHASE_SLOPE_RANGE)
    if label == 1:
        shortcut_phase = chi + chi_r * pr + chi_c * pc
        signals += spec.shortcut_amplitude * np.sin(
            2.0 * np.pi * spec.shortcut_bin * t[None, :] / t_len + shortcut_phase[:, None]
        )

    signals += rng.normal(0.0, spec.noise_std, size=(m, t_len))
    clip = PatchSignalClip(signals=signals, fps=DEFAULT_FPS)
    return LabeledClip(clip=clip, y=label, provenance={"index": index, "t0": t0})


def generate_dataset(spec: DatasetSpec) -> list[LabeledClip]:
    """Balanced dataset, deterministic in the spec seed, ceil(n/2) fakes."""
    return parallel_map(lambda i: generate_clip(spec, i), range(spec.n_clips))


def phase_cue_statistic(clip: PatchSignalClip, component_bin: int = 1) -> float:
    """Largest patch-coherent frame-to-frame jump of the demodulated carrier phase.

    The clip's spectrum is first flattened to pure phase (every coefficient
    divided by its own magnitude), which cancels any amplitude-only edit
    exactly and leaves only phase structure.  Each phase-only patch signal is
    then demodulated at the carrier bin and summed over sliding half-clip
    windows; a sign flip drives that sum through zero and produces a near-pi
    jump in its phase trajectory at the flip frame.  Taking the median over
    patches before the max over frames makes the statistic respond to
    *synchronized* jumps only: scattered per-patch flips contribute nothing.
    """
    t_len = clip.frame_count
    coeffs = np.fft.rfft(clip.signals, axis=1)
    scale = np.abs(coeffs)
    equalized = np.where(scale > 1e-12, coeffs / np.where(scale > 1e-12, scale, 1.0), 0.0)
    stop = equalized.shape[1] - 1 if t_len % 2 == 0 else equalized.shape[1]
    full = np.concatenate([equalized, np.conj(equalized[:, 1:stop][:, ::-1])], axis=1)
    signals = np.fft.ifft(full, axis=1).real

    w = max(2, t_len // 2)
    t = np.arange(t_len)
    demod = signals * np.exp(-2j * np.pi * component_bin * t / t_len)[None, :]
    windows = np.lib.stride_tricks.sliding_window_view(demod, w, axis=1)
    proj = windows.sum(axis=2)  # (M, T - w + 1) linear windowed projections
    theta = np.angle(proj)
    jumps = np.abs((np.diff(theta, axis=1) + np.pi) % (2.0 * np.pi) - np.pi)
    coherent = np.median(jumps, axis=0)  # per-frame jump agreed on by most patches
    return float(coherent.max())


# --- dataset files ----------------------------------------------------------------

MANIFEST_VERSION = 1


def spec_to_dict(spec: DatasetSpec) -> dict:
    return {
        "n_clips": spec.n_clips,
        "frames": spec.frames,
        "patches": spec.patches,
        "shortcut_bin": spec.shortcut_bin,
        "shortcut_amplitude": spec.shortcut_amplitude,
        "phase_cue_strength": spec.phase_cue_strength,
        "base_amplitudes": list(spec.base_amplitudes),
        "base_bins": list(spec.base_bins),
        "base_level_range": list(spec.base_level_range),
        "noise_std": spec.noise_std,
        "seed": spec.seed,
    }


def spec_from_dict(data: dict) -> DatasetSpec:
    try:
        return DatasetSpec(
            n_clips=int(data["n_clips"]),
            frames=int(data.get("frames", 16)),
            patches=int(data.get("patches", 16)),
            shortcut_bin=int(data.get("shortcut_bin", 5)),
            shortcut_amplitude=float(data.get("shortcut_amplitude", 0.8)),
            phase_cue_strength=float(data.get("phase_cue_strength", 1.0)),
            base_amplitudes=tuple(float(a) for a in data.get("base_amplitudes", (1.0, 0.6, 0.3))),
            base_bins=tuple(int(b) for b in data.get("base_bins", (1, 2, 3))),
            base_level_range=tuple(float(v) for v in data.get("base_level_range", (0.3, 0.7))),
            noise_std=float(data.get("noise_std", 0.05)),
            seed=int(data.get("seed", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"bad dataset spec: {exc}") from exc


def save_dataset(
    clips: list[LabeledClip], spec: DatasetSpec, out_dir: Path, clip_format: str = "csv"
) -> Path:
    """Write per-clip files plus a manifest JSON; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ext = "csv" if clip_format == "csv" else "spsc"
    entries = []
    for i, labeled in enumerate(clips):
        name = f"clip_{i:05d}.{ext}"
        clipio.write_clip(labeled.clip, out_dir / name, clip_format)
        entries.append({"path": name, "label": labeled.y, "provenance": labeled.provenance})
    manifest = {
        "version": MANIFEST_VERSION,
        "clip_format": clip_format,
        "spec": spec_to_dict(spec),
        "seed": spec.seed,
        "clips": entries,
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=1), encoding="utf-8")
    return manifest_path


def load_clips(manifest_path: Path, clip_format: str | None = None) -> list[LabeledClip]:
    """Load every clip listed in a manifest, validating labels and signals."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DataFormatError(f"manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"bad manifest JSON: {exc}") from exc
    if manifest.get("version") != MANIFEST_VERSION:
        raise DataFormatError(f"unsupported manifest version {manifest.get('version')!r}")
    fmt = clip_format or manifest.get("clip_format", "csv")
    base = manifest_path.parent
    out: list[LabeledClip] = []
    for entry in manifest.get("clips", []):
        try:
            label = int(entry["label"])
            rel = entry["path"]
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"bad manifest entry {entry!r}: {exc}") from exc
        try:
            clip = clipio.read_clip(base / rel, fmt)
        except ValueError as exc:
            raise DataFormatError(f"{rel}: {exc}") from exc
        out.append(LabeledClip(clip=clip, y=label, provenance=dict(entry.get("provenance", {}))))
    if not out:
        raise DataFormatError(f"{manifest_path}: manifest lists no clips")
    return out


def load_dataset(manifest_path: Path) -> tuple[DatasetSpec, list[LabeledClip]]:
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    spec = spec_from_dict(manifest["spec"])
    return spec, load_clips(manifest_path)
