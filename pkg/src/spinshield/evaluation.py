"""Robustness evaluation: AUC under attacks, notch sweeps, the white-box
adaptive attack, feature dumps, and the serializable evaluation report.

Inference is single-stream: every score comes from the clean-view path
(standardize, encode, classify); the adversary and env views never run here
except inside the adaptive attack's own perturbation search.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import attacks as atk
from . import autodiff as ad
from . import models as md
from .autodiff import Node
from .errors import DataFormatError, NumericalAbort
from .parallel import parallel_map
from .spectral import FloatArray, FrequencyGrid, PatchSignalClip, dft_onesided, recompose
from .synthdata import LabeledClip

DEFAULT_ADAPTIVE_BUDGET = math.log(2.0)
DEFAULT_ADAPTIVE_STEPS = 40

REPORT_FORMAT = "spinshield-evalreport-v1"


def compute_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Rank-statistic AUC with ties counted one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length vectors")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = scores.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    _, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    cum = np.cumsum(counts)
    avg_rank = cum - (counts - 1) / 2.0  # average 1-based rank within each tie group
    ranks = avg_rank[inverse]
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _clean_path(bundle: md.ModelBundle, x: FloatArray) -> tuple[FloatArray, FloatArray]:
    """Features and fake-probabilities for a stack of flat clips."""
    p = {name: Node(arr) for name, arr in md.named_arrays(bundle).items()}
    h = md.encoder_forward(md.standardize_rows(Node(x)), p)
    probs = ad.softmax(md.classifier_logits(h, p))
    return h.value, probs.value


def score_clips(bundle: md.ModelBundle, clips: list[PatchSignalClip]) -> np.ndarray:
    """Fake-class probability per clip through the clean inference path."""
    if not clips:
        return np.zeros(0)
    x = np.stack([c.signals.reshape(-1) for c in clips])
    if x.shape[1] != bundle.input_width:
        raise ValueError(f"clips flatten to {x.shape[1]}, model expects {bundle.input_width}")
    _, probs = _clean_path(bundle, x)
    return probs[:, 1]


def score_clip(bundle: md.ModelBundle, clip: PatchSignalClip) -> float:
    return float(score_clips(bundle, [clip])[0])


def _attack_seed(base_seed: int, eval_seed: int, kind: str, clip_id: int) -> int:
    kind_idx = (atk.ALL_KINDS + (atk.KIND_IDENTITY,)).index(kind)
    ss = np.random.SeedSequence(entropy=(base_seed, eval_seed, kind_idx, clip_id))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass
class EvalReport:
    """Per-attack AUC plus everything needed to regenerate it bit for bit."""

    config: dict
    clip_ids: list[int]
    labels: list[int]
    clean_scores: list[float]
    clean_auc: float
    attacks: dict = field(default_factory=dict)
    # attacks[kind] = {"aucs": [...], "mean": ..., "std": ...,
    #                  "per_seed": [{"seed": ..., "specs": [...], "scores": [...], "auc": ...}]}

    def to_dict(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "config": self.config,
            "clip_ids": self.clip_ids,
            "labels": self.labels,
            "clean_scores": self.clean_scores,
            "clean_auc": self.clean_auc,
            "attacks": self.attacks,
        }

    def save(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @staticmethod
    def from_dict(data: dict) -> "EvalReport":
        if data.get("format") != REPORT_FORMAT:
            raise DataFormatError(f"unknown report format {data.get('format')!r}")
        try:
            return EvalReport(
                config=data["config"],
                clip_ids=[int(i) for i in data["clip_ids"]],
                labels=[int(y) for y in data["labels"]],
                clean_scores=[float(s) for s in data["clean_scores"]],
                clean_auc=float(data["clean_auc"]),
                attacks=data["attacks"],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"incomplete report: {exc}") from exc

    @staticmethod
    def load(path: Path) -> "EvalReport":
        path = Path(path)
        if not path.exists():
            raise DataFormatError(f"report not found: {path}")
        try:
            return EvalReport.from_dict(json.loads(path.read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"bad report JSON in {path}: {exc}") from exc


def _ordered(labeled: list[LabeledClip]) -> list[tuple[int, LabeledClip]]:
    pairs = [(int(lc.provenance.get("index", i)), lc) for i, lc in enumerate(labeled)]
    pairs.sort(key=lambda p: p[0])
    return pairs


def evaluate_under_attacks(
    bundle: md.ModelBundle,
    labeled: list[LabeledClip],
    kinds: tuple[str, ...] = atk.ALL_KINDS,
    n_seeds: int = 3,
    base_seed: int = 0,
    sigma: float = atk.DEFAULT_NOISE_SIGMA,
    tukey_alpha: float = atk.DEFAULT_TUKEY_ALPHA,
) -> EvalReport:
    """Sample one attack per clip per seed per kind, score, and aggregate AUC."""
    pairs = _ordered(labeled)
    clip_ids = [cid for cid, _ in pairs]
    clips = [lc.clip for _, lc in pairs]
    labels = np.array([lc.y for _, lc in pairs], dtype=np.intp)
    grid = FrequencyGrid(clips[0].frame_count)

    clean_scores = score_clips(bundle, clips)
    clean_auc = compute_auc(clean_scores, labels)
    report = EvalReport(
        config={
            "base_seed": base_seed,
            "eval_seeds": list(range(n_seeds)),
            "kinds": list(kinds),
            "sigma": sigma,
            "tukey_alpha": tukey_alpha,
            "n_clips": len(clips),
        },
        clip_ids=clip_ids,
        labels=[int(y) for y in labels],
        clean_scores=[float(s) for s in clean_scores],
        clean_auc=clean_auc,
    )

    patches = clips[0].patch_count
    for kind in kinds:
        per_seed = []
        aucs = []
        for eval_seed in range(n_seeds):
            specs = [
                atk.sample_attack(
                    kind, grid, _attack_seed(base_seed, eval_seed, kind, cid),
                    patches=patches, sigma=sigma, tukey_alpha=tukey_alpha,
                )
                for cid in clip_ids
            ]
            attacked = parallel_map(
                lambda pair: atk.apply_attack(pair[0], pair[1]), list(zip(clips, specs))
            )
            scores = score_clips(bundle, attacked)
            auc = compute_auc(scores, labels)
            aucs.append(auc)
            per_seed.append({
                "seed": eval_seed,
                "specs": [atk.spec_to_dict(s) for s in specs],
                "scores": [float(s) for s in scores],
                "auc": auc,
            })
        report.attacks[kind] = {
            "aucs": aucs,
            "mean": float(np.mean(aucs)),
            "std": float(np.std(aucs)),
            "per_seed": per_seed,
        }
    return report


def replay_report(
    report: EvalReport, bundle: md.ModelBundle, labeled: list[LabeledClip]
) -> EvalReport:
    """Recompute a report from its own embedded attack specs (no re-sampling)."""
    pairs = _ordered(labeled)
    by_id = {cid: lc for cid, lc in pairs}
    try:
        clips = [by_id[cid].clip for cid in report.clip_ids]
    except KeyError as exc:
        raise DataFormatError(f"report references missing clip id {exc}") from exc
    labels = np.array(report.labels, dtype=np.intp)

    clean_scores = score_clips(bundle, clips)
    out = EvalReport(
        config=report.config,
        clip_ids=list(report.clip_ids),
        labels=list(report.labels),
        clean_scores=[float(s) for s in clean_scores],
        clean_auc=compute_auc(clean_scores, labels),
    )
    for kind, block in report.attacks.items():
        per_seed = []
        aucs = []
        for seed_block in block["per_seed"]:
            specs = [atk.spec_from_dict(d) for d in seed_block["specs"]]
            attacked = parallel_map(
                lambda pair: atk.apply_attack(pair[0], pair[1]), list(zip(clips, specs))
            )
            scores = score_clips(bundle, attacked)
            auc = compute_auc(scores, labels)
            aucs.append(auc)
            per_seed.append({
                "seed": seed_block["seed"],
                "specs": [atk.spec_to_dict(s) for s in specs],
                "scores": [float(s) for s in scores],
                "auc": auc,
            })
        out.attacks[kind] = {
            "aucs": aucs,
            "mean": float(np.mean(aucs)),
            "std": float(np.std(aucs)),
            "per_seed": per_seed,
        }
    return out


def notch_sweep(bundle: md.ModelBundle, labeled: list[LabeledClip]) -> list[dict]:
    """Clean AUC followed by AUC under a full-suppression unit notch at each
    interior bin; mirrors the vulnerable-band probe."""
    pairs = _ordered(labeled)
    clips = [lc.clip for _, lc in pairs]
    labels = np.array([lc.y for _, lc in pairs], dtype=np.intp)
    grid = FrequencyGrid(clips[0].frame_count)

    rows = [{"bin": None, "omega_k": None, "auc": compute_auc(score_clips(bundle, clips), labels)}]
    for center in range(1, grid.n_bins - 1):
        spec = atk.AttackSpec(
            kind=atk.KIND_NOTCH,
            params=atk.NotchParams(center_bin=center, width_bins=1, floor=0.0),
        )
        attacked = parallel_map(lambda c: atk.apply_attack(c, spec), clips)
        auc = compute_auc(score_clips(bundle, attacked), labels)
        rows.append({"bin": center, "omega_k": center / grid.window, "auc": auc})
    return rows


def write_sweep_csv(rows: list[dict], path: Path) -> None:
    lines = ["omega_k,auc"]
    for row in rows:
        omega = "none" if row["omega_k"] is None else repr(row["omega_k"])
        lines.append(f"{omega},{row['auc']!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def adaptive_attack(
    bundle: md.ModelBundle,
    labeled: LabeledClip,
    steps: int = DEFAULT_ADAPTIVE_STEPS,
    budget: float = DEFAULT_ADAPTIVE_BUDGET,
) -> tuple[PatchSignalClip, float]:
    """White-box per-clip attack: ascend the true-label CE over a bounded
    log-amplitude modulation field, phase fixed; returns the strongest
    perturbed clip found and its post-attack score."""
    if budget < 0:
        raise ValueError("budget must be non-negative")
    clip, y = labeled.clip, labeled.y
    if budget == 0.0 or steps <= 0:
        return clip, score_clip(bundle, clip)

    spectrum = dft_onesided(clip)
    amp = spectrum.amplitude
    phase = spectrum.phase
    window = spectrum.grid.window
    params = {name: Node(arr) for name, arr in md.named_arrays(bundle).items()}
    step_size = 2.5 * budget / steps

    def objective(u: FloatArray, want_grad: bool) -> tuple[float, FloatArray | None]:
        u_node = Node(u)
        new_amp = ad.mul(Node(amp), ad.exp(u_node))
        x = ad.reshape(md.recompose_rows(new_amp, phase, window), (1, amp.shape[0] * window))
        h = md.encoder_forward(md.standardize_rows(x), params)
        logits = md.classifier_logits(h, params)
        ce = ad.mean_all(ad.cross_entropy_with_logits(logits, np.array([y])))
        if not np.isfinite(ce.value):
            raise NumericalAbort("adaptive attack objective became non-finite")
        if not want_grad:
            return float(ce.value), None
        ad.backward(ce)
        if not np.all(np.isfinite(u_node.grad)):
            raise NumericalAbort("adaptive attack gradient became non-finite")
        return float(ce.value), u_node.grad

    u = np.zeros_like(amp)
    best_u = u
    best_obj = -np.inf
    for _ in range(steps):
        value, grad = objective(u, want_grad=True)
        if value > best_obj:
            best_obj = value
            best_u = u
        u = np.clip(u + step_size * np.sign(grad), -budget, budget)
    value, _ = objective(u, want_grad=False)
    if value > best_obj:
        best_u = u

    attacked_core = recompose(amp * np.exp(best_u), phase, FrequencyGrid(window))
    attacked = PatchSignalClip(signals=attacked_core.signals, fps=clip.fps)
    return attacked, score_clip(bundle, attacked)


def adaptive_attack_suite(
    bundle: md.ModelBundle,
    labeled: list[LabeledClip],
    steps: int = DEFAULT_ADAPTIVE_STEPS,
    budget: float = DEFAULT_ADAPTIVE_BUDGET,
) -> dict:
    """Post-attack scores and AUC over a clip set."""
    pairs = _ordered(labeled)
    labels = np.array([lc.y for _, lc in pairs], dtype=np.intp)
    results = parallel_map(
        lambda pair: adaptive_attack(bundle, pair[1], steps=steps, budget=budget), pairs
    )
    scores = np.array([score for _, score in results])
    return {
        "clip_ids": [cid for cid, _ in pairs],
        "scores": [float(s) for s in scores],
        "auc": compute_auc(scores, labels),
        "steps": steps,
        "budget": budget,
    }


def dump_features(bundle: md.ModelBundle, labeled: list[LabeledClip], path: Path) -> None:
    """CSV of encoder features for the clean and env view of every clip."""
    pairs = _ordered(labeled)
    clips = [lc.clip for _, lc in pairs]
    x_clean = np.stack([c.signals.reshape(-1) for c in clips])
    h_clean, _ = _clean_path(bundle, x_clean)

    env_clips = []
    for clip in clips:
        env_clip, _ = md.lsa_perturb(dft_onesided(clip), bundle.generator, bundle.delta, fps=clip.fps)
        env_clips.append(env_clip)
    x_env = np.stack([c.signals.reshape(-1) for c in env_clips])
    h_env, _ = _clean_path(bundle, x_env)

    dim = h_clean.shape[1]
    header = "clip,view,y," + ",".join(f"h{j}" for j in range(dim))
    lines = [header]
    for row, (cid, lc) in enumerate(pairs):
        lines.append(f"{cid},clean,{lc.y}," + ",".join(repr(float(v)) for v in h_clean[row]))
    for row, (cid, lc) in enumerate(pairs):
        lines.append(f"{cid},env,{lc.y}," + ",".join(repr(float(v)) for v in h_env[row]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
