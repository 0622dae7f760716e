"""Alternating minimax training loop and its configuration.

One detector step minimizes the combined objective over encoder and heads with
the adversary frozen; every R-th batch the adversary takes a step maximizing
its own objective with the detector frozen.  All randomness flows from the
config seed through counter-based streams, so identical configs reproduce
identical parameters bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import autodiff as ad
from . import models as md
from . import objectives as obj
from .attacks import DEFAULT_EPS0, DEFAULT_NOISE_SIGMA
from .autodiff import Node
from .errors import DataFormatError, NumericalAbort
from .evaluation import compute_auc, score_clips
from .spectral import FloatArray, FrequencyGrid, dft_onesided, recompose
from .synthdata import LabeledClip

MODES = ("baseline", "spinshield", "naive_aug")

LOG_COLUMNS = ("step", "phase", "L_det", "L_sym", "L_blind", "L_gen", "mmd", "mask_reg", "total")

# sub-stream tags for the run-level counter-based RNG
_STREAM_SPLIT = 1
_STREAM_BATCH = 2
_STREAM_NAIVE = 3

# log-amplitude noise scale for the naive augmentation mode (matches the
# evaluation noise attack's default)
NAIVE_SIGMA = 0.5

# model selection keeps the latest epoch whose validation AUC is within this
# tolerance of the best seen; under the minimax objective robustness keeps
# improving after clean accuracy saturates, so ties go to the most-trained model
VAL_SELECTION_TOLERANCE = 0.005


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "spinshield"
    epochs: int = 25
    batch_size: int = 32
    learning_rate: float = 1e-3
    generator_learning_rate: float = 2e-2
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    detector_steps_per_generator_step: int = 1
    weights: obj.LossWeights = field(default_factory=obj.LossWeights)
    alpha: float = md.DEFAULT_ALPHA
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.detector_steps_per_generator_step < 1:
            raise ValueError("alternation ratio must be >= 1")
        if self.learning_rate <= 0 or self.generator_learning_rate <= 0 or self.alpha <= 0:
            raise ValueError("learning rates and alpha must be positive")


def config_to_dict(config: TrainConfig) -> dict:
    return {
        "mode": config.mode,
        "epochs": config.epochs,
        "batch_size": config.batch_size,
        "learning_rate": config.learning_rate,
        "generator_learning_rate": config.generator_learning_rate,
        "adam_betas": list(config.adam_betas),
        "adam_eps": config.adam_eps,
        "detector_steps_per_generator_step": config.detector_steps_per_generator_step,
        "weights": {
            "gamma": config.weights.gamma,
            "lambda_mask": config.weights.lambda_mask,
            "lambda_sym": config.weights.lambda_sym,
            "lambda_blind": config.weights.lambda_blind,
        },
        "alpha": config.alpha,
        "seed": config.seed,
    }


def config_from_dict(data: dict) -> TrainConfig:
    try:
        w = data.get("weights", {})
        return TrainConfig(
            mode=data.get("mode", "spinshield"),
            epochs=int(data.get("epochs", 25)),
            batch_size=int(data.get("batch_size", 32)),
            learning_rate=float(data.get("learning_rate", 1e-3)),
            generator_learning_rate=float(data.get("generator_learning_rate", 2e-2)),
            adam_betas=tuple(float(b) for b in data.get("adam_betas", (0.9, 0.999))),
            adam_eps=float(data.get("adam_eps", 1e-8)),
            detector_steps_per_generator_step=int(data.get("detector_steps_per_generator_step", 1)),
            weights=obj.LossWeights(
                gamma=float(w.get("gamma", 1.0)),
                lambda_mask=float(w.get("lambda_mask", 0.1)),
                lambda_sym=float(w.get("lambda_sym", 0.9)),
                lambda_blind=float(w.get("lambda_blind", 0.7)),
            ),
            alpha=float(data.get("alpha", md.DEFAULT_ALPHA)),
            seed=int(data.get("seed", 0)),
        )
    except (TypeError, ValueError) as exc:
        raise DataFormatError(f"bad train config: {exc}") from exc


def load_config(path: Path) -> TrainConfig:
    try:
        return config_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"bad train config JSON: {exc}") from exc


class Adam:
    """Adaptive moment optimizer over a named set of live parameter arrays."""

    def __init__(
        self,
        arrays: dict[str, FloatArray],
        lr: float,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ) -> None:
        self.arrays = arrays
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(arr) for name, arr in arrays.items()}
        self.v = {name: np.zeros_like(arr) for name, arr in arrays.items()}

    def step(self, grads: dict[str, FloatArray]) -> None:
        self.t += 1
        bias1 = 1.0 - self.beta1**self.t
        bias2 = 1.0 - self.beta2**self.t
        for name, g in grads.items():
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            self.arrays[name] -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


def _run_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.array([seed, stream], dtype=np.uint64)))


def split_indices(n: int, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Deterministic 80/10/10 train/val/test split of clip indices."""
    if n < 10:
        raise ValueError("need at least 10 clips to split")
    perm = _run_rng(seed, _STREAM_SPLIT).permutation(n)
    n_test = n // 10
    n_val = n // 10
    test = perm[:n_test]
    val = perm[n_test : n_test + n_val]
    train = perm[n_test + n_val :]
    return train, val, test


def _stack_dataset(clips: list[LabeledClip]) -> tuple[FloatArray, FloatArray, FloatArray, np.ndarray, int, int, int]:
    shapes = {lc.clip.signals.shape for lc in clips}
    if len(shapes) != 1:
        raise ValueError(f"clips have inconsistent shapes: {sorted(shapes)}")
    m, t_len = shapes.pop()
    amps, phases = [], []
    for lc in clips:
        spectrum = dft_onesided(lc.clip)
        amps.append(spectrum.amplitude)
        phases.append(spectrum.phase)
    signals = np.stack([lc.clip.signals for lc in clips])
    labels = np.array([lc.y for lc in clips], dtype=np.intp)
    return signals, np.stack(amps), np.stack(phases), labels, m, t_len, m * t_len


def _batch_minmax_norm(amp: FloatArray) -> FloatArray:
    """Per-clip joint min-max normalization over patches and bins."""
    lo = amp.min(axis=(1, 2), keepdims=True)
    hi = amp.max(axis=(1, 2), keepdims=True)
    span = hi - lo
    return np.where(span == 0.0, 0.0, (amp - lo) / np.where(span == 0.0, 1.0, span))


def _graph_nodes(
    bundle: md.ModelBundle, trainable_groups: tuple[str, ...]
) -> tuple[dict[str, Node], dict[str, Node]]:
    """Bind every parameter to a graph node; only the trainable group's nodes
    are aliased into the tracked map the optimizer reads."""
    graph: dict[str, Node] = {}
    tracked: dict[str, Node] = {}
    for name, arr in md.named_arrays(bundle).items():
        node = Node(arr)
        graph[name] = node
        if name.split(".", 1)[0] in trainable_groups:
            tracked[name] = node
    return graph, tracked


def step_gradients(
    bundle: md.ModelBundle, graph: dict[str, Node], tracked: dict[str, Node]
) -> dict[str, FloatArray]:
    """Gradient map over all parameters; frozen groups are identically zero."""
    return {
        name: (tracked[name].grad if name in tracked else np.zeros_like(arr))
        for name, arr in md.named_arrays(bundle).items()
    }


def _check_finite(value: float, what: str, step: int) -> float:
    if not np.isfinite(value):
        raise NumericalAbort(f"{what} is non-finite ({value}) at step {step}")
    return float(value)


def lsa_env_views(
    amp: FloatArray,
    phase: FloatArray,
    window: int,
    gen_nodes: dict[str, Node],
    alpha: float,
    delta: float,
) -> tuple[Node, Node]:
    """Batch adversarial views: (B, M*T) signal node plus the (B*M, bins) mask node."""
    b, m, k = amp.shape
    norm = _batch_minmax_norm(amp)
    signals, mask = md.lsa_perturb_graph(
        amp.reshape(b * m, k),
        norm.reshape(b * m, k),
        phase.reshape(b * m, k),
        window,
        gen_nodes,
        alpha,
        delta,
    )
    return ad.reshape(signals, (b, m * window)), mask


def naive_env_views(
    amp: FloatArray,
    phase: FloatArray,
    window: int,
    rng: np.random.Generator,
    sigma: float = DEFAULT_NOISE_SIGMA,
    eps0: float = DEFAULT_EPS0,
) -> FloatArray:
    """Gaussian log-amplitude noise views, one draw per bin shared across patches.

    Sharing the draw over patches rescales whole spectral bands per clip, which
    is the strongest honest form of this augmentation; fully independent draws
    average out across patches and barely pressure patch-mean features.
    """
    b, m, k = amp.shape
    draws = rng.normal(0.0, sigma, size=(b, 1, k)) * np.ones((1, m, 1))
    new_amp = (amp + eps0) * np.exp(draws)
    clip = recompose(new_amp.reshape(b * m, k), phase.reshape(b * m, k), FrequencyGrid(window))
    return clip.signals.reshape(b, m * window)


@dataclass
class TrainResult:
    bundle: md.ModelBundle
    log_rows: list[dict]
    val_auc_by_epoch: list[float]
    best_epoch: int
    train_indices: np.ndarray
    val_indices: np.ndarray
    test_indices: np.ndarray


def write_log(rows: Iterable[dict], path: Path) -> None:
    lines = [",".join(LOG_COLUMNS)]
    for row in rows:
        lines.append(",".join("" if row.get(c) is None else repr(row[c]) if isinstance(row[c], float) else str(row[c]) for c in LOG_COLUMNS))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def train(
    config: TrainConfig,
    dataset: list[LabeledClip],
    epoch_hook: "Callable[[int, md.ModelBundle], None] | None" = None,
) -> TrainResult:
    """Train one detector per the config mode; returns the best-validation model.

    ``epoch_hook`` (if given) observes the live bundle after each epoch; the
    returned bundle is still the best-validation snapshot.
    """
    signals, amps, phases, labels, m, t_len, width = _stack_dataset(dataset)
    n_bins = t_len // 2 + 1
    train_idx, val_idx, test_idx = split_indices(len(dataset), config.seed)
    if len(np.unique(labels[val_idx])) < 2 or len(np.unique(labels[train_idx])) < 2:
        raise ValueError("train/val splits must contain both classes")

    bundle = md.init_bundle(
        input_width=width, n_bins=n_bins, alpha=config.alpha, seed=config.seed
    )
    arrays = md.named_arrays(bundle)
    det_names = [n for n in arrays if n.startswith(("enc.", "head."))]
    gen_names = [n for n in arrays if n.startswith("gen.")]
    det_opt = Adam({n: arrays[n] for n in det_names}, config.learning_rate, config.adam_betas, config.adam_eps)
    gen_opt = Adam(
        {n: arrays[n] for n in gen_names},
        config.generator_learning_rate,
        config.adam_betas,
        config.adam_eps,
    )

    batch_rng = _run_rng(config.seed, _STREAM_BATCH)
    naive_rng = _run_rng(config.seed, _STREAM_NAIVE)

    log_rows: list[dict] = []
    val_auc_by_epoch: list[float] = []
    best_auc = -1.0
    best_epoch = -1
    best_arrays: dict[str, FloatArray] = {n: a.copy() for n, a in arrays.items()}
    step = 0
    batch_counter = 0
    ratio = config.detector_steps_per_generator_step
    val_clips = [dataset[i].clip for i in val_idx]

    for epoch in range(config.epochs):
        order = batch_rng.permutation(train_idx)
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            x_clean = signals[batch].reshape(len(batch), width)
            y = labels[batch]
            a_batch = amps[batch]
            p_batch = phases[batch]

            # --- detector step: adversary frozen ---------------------------------
            graph, tracked = _graph_nodes(bundle, ("enc", "head"))
            if config.mode == "baseline":
                x_env_arr = None
            elif config.mode == "spinshield":
                env_node, _ = lsa_env_views(
                    a_batch, p_batch, t_len, graph, config.alpha, bundle.delta
                )
                x_env_arr = env_node.value
            else:  # naive_aug
                x_env_arr = naive_env_views(a_batch, p_batch, t_len, naive_rng, sigma=NAIVE_SIGMA)

            h_clean = md.encoder_forward(md.standardize_rows(Node(x_clean)), graph)
            logits_clean = md.classifier_logits(h_clean, graph)
            if x_env_arr is None:
                l_det = obj.detector_loss(logits_clean, None, y)
                l_sym = Node(0.0)
                l_blind = Node(0.0)
            else:
                h_env = md.encoder_forward(md.standardize_rows(Node(x_env_arr)), graph)
                logits_env = md.classifier_logits(h_env, graph)
                l_det = obj.detector_loss(logits_clean, logits_env, y)
                l_sym = obj.symmetric_kl(ad.softmax(logits_clean), ad.softmax(logits_env))
                l_blind = obj.blindness_loss(
                    h_clean, h_env, lambda z: md.domain_logits(z, graph, through_grl=False)
                )
            total = obj.total_loss(l_det, l_sym, l_blind, config.weights)
            for node, what in ((l_det, "L_det"), (l_sym, "L_sym"), (l_blind, "L_blind"), (total, "total")):
                _check_finite(node.value, what, step)
            ad.backward(total)
            grads = step_gradients(bundle, graph, tracked)
            det_opt.step({n: grads[n] for n in det_names})
            log_rows.append({
                "step": step, "phase": "theta",
                "L_det": float(l_det.value), "L_sym": float(l_sym.value),
                "L_blind": float(l_blind.value), "L_gen": None, "mmd": None,
                "mask_reg": None, "total": float(total.value),
            })
            step += 1

            # --- adversary step: detector frozen ----------------------------------
            batch_counter += 1
            if config.mode == "spinshield" and batch_counter % ratio == 0:
                graph, tracked = _graph_nodes(bundle, ("gen",))
                env_node, mask_node = lsa_env_views(
                    a_batch, p_batch, t_len, graph, config.alpha, bundle.delta
                )
                h_env = md.encoder_forward(md.standardize_rows(env_node), graph)
                logits_env = md.classifier_logits(h_env, graph)
                h_clean_const = md.encoder_forward(md.standardize_rows(Node(x_clean)), graph)
                d_mmd = obj.mmd(Node(h_clean_const.value), h_env)
                l_gen = obj.generator_loss(logits_env, y, d_mmd, mask_node, config.weights)
                reg = obj.mask_regularizer(mask_node)
                for node, what in ((d_mmd, "mmd"), (reg, "mask_reg"), (l_gen, "L_gen")):
                    _check_finite(node.value, what, step)
                loss = ad.neg(l_gen)  # ascend by minimizing the negation
                ad.backward(loss)
                grads = step_gradients(bundle, graph, tracked)
                gen_opt.step({n: grads[n] for n in gen_names})
                log_rows.append({
                    "step": step, "phase": "phi",
                    "L_det": None, "L_sym": None, "L_blind": None,
                    "L_gen": float(l_gen.value), "mmd": float(d_mmd.value),
                    "mask_reg": float(reg.value), "total": float(loss.value),
                })
                step += 1

        val_scores = score_clips(bundle, val_clips)
        val_auc = compute_auc(val_scores, labels[val_idx])
        val_auc_by_epoch.append(val_auc)
        if val_auc >= best_auc - VAL_SELECTION_TOLERANCE:
            best_auc = max(best_auc, val_auc)
            best_epoch = epoch
            best_arrays = {n: a.copy() for n, a in arrays.items()}
        if epoch_hook is not None:
            epoch_hook(epoch, bundle)

    md.set_named_arrays(bundle, best_arrays)
    return TrainResult(
        bundle=bundle,
        log_rows=log_rows,
        val_auc_by_epoch=val_auc_by_epoch,
        best_epoch=best_epoch,
        train_indices=train_idx,
        val_indices=val_idx,
        test_indices=test_idx,
    )
