"""Two-phase semi-supervised training, the supervised grasp loss, IOU-based
evaluation, and the labelled-ratio sweep.

Phase 1 trains the vector-quantized autoencoder on every image. Phase 2
freezes the encoder and codebook (verified bit-exactly via checksums),
reinitializes the decoder, and trains decoder plus grasp head on the labelled
fraction only, against rasterized target maps. The phase-2 loss is the sum of
per-map mean squared errors with the width map scaled by 1/150; the head is
trained on its raw outputs (sigmoid quality, unnormalized angle pair), while
prediction-time maps normalize the angle pair."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .data import SplitSpec, W_MAX, rasterize_targets, split_by_ratio
from .errors import ConfigError, FreezeViolation, TrainingDiverged
from .geometry import (
    GraspMaps,
    angle_diff,
    grasp_from_maps,
    grasp_from_rect,
    iou,
    rect_from_grasp,
)
from .network import (
    assemble_rggcnn2,
    build_ggcnn2,
    model_from_arrays,
    packaged_config,
    predict_maps,
)
from .vqvae import VQVAEConfig, train_vqvae
from .weights import checksum_arrays, module_arrays, subset

log = logging.getLogger(__name__)

TEST_FRACTION = 1.0 / 6.0


@dataclass
class PhaseConfig:
    epochs: int
    batch: int = 16
    lr: float = 1e-3


@dataclass
class TrainConfig:
    ratio: float = 1.0
    seed: int = 0
    phase1: PhaseConfig = field(default_factory=lambda: PhaseConfig(epochs=40))
    phase2: PhaseConfig = field(default_factory=lambda: PhaseConfig(epochs=40))
    beta: float = 0.25
    smooth_sigma: float = 2.0
    iou_threshold: float = 0.25
    angle_threshold: float = math.pi / 6.0
    k: int = 128
    d: int = 64
    hidden: int = 32
    head_config: object = None

    def __post_init__(self):
        if not 0.0 < self.iou_threshold < 1.0:
            raise ConfigError(f"iou threshold must lie in (0, 1), got {self.iou_threshold}")
        if not 0.0 < self.angle_threshold <= math.pi / 2.0:
            raise ConfigError(
                f"angle threshold must lie in (0, pi/2], got {self.angle_threshold}"
            )
        if not 0.0 < self.ratio <= 1.0:
            raise ConfigError(f"ratio must lie in (0, 1], got {self.ratio}")


def grasp_loss(pred: GraspMaps, target: GraspMaps) -> float:
    """Sum of per-map MSEs: Q, cos2phi, sin2phi and W scaled by 1/150."""
    if pred.shape != target.shape:
        raise ConfigError(f"map shapes differ: {pred.shape} vs {target.shape}")

    def mse(a, b):
        return float(np.mean((np.asarray(a, dtype=np.float64) - b) ** 2))

    return (
        mse(pred.Q, target.Q)
        + mse(pred.cos2phi, target.cos2phi)
        + mse(pred.sin2phi, target.sin2phi)
        + mse(pred.W / W_MAX, target.W / W_MAX)
    )


def _target_tensors(scenes) -> torch.Tensor:
    """Stack rasterized targets as (N, 4, H, W): Q, cos2phi, sin2phi, W/150."""
    maps = []
    for s in scenes:
        t = rasterize_targets(s, *s.shape)
        maps.append(np.stack([t.Q, t.cos2phi, t.sin2phi, t.W / W_MAX]))
    return torch.from_numpy(np.stack(maps).astype(np.float32))


def _head_loss(outputs, targets: torch.Tensor) -> torch.Tensor:
    """The same per-map MSE sum, on raw head outputs (Q through a sigmoid)."""
    q_raw, cos_raw, sin_raw, w_raw = outputs
    pred = torch.cat([torch.sigmoid(q_raw), cos_raw, sin_raw, w_raw], dim=1)
    return ((pred - targets) ** 2).mean(dim=(0, 2, 3)).sum()


def _train_head(model, trainable, scenes, phase: PhaseConfig, seed: int) -> list:
    from .vqvae import scenes_to_tensor

    images = scenes_to_tensor(scenes)
    targets = _target_tensors(scenes)
    opt = torch.optim.Adam(trainable, lr=phase.lr)
    rng = np.random.default_rng(seed)
    history = []
    n = images.shape[0]
    step = 0
    for epoch in range(phase.epochs):
        order = rng.permutation(n)
        total, batches = 0.0, 0
        for start in range(0, n, phase.batch):
            idx = torch.from_numpy(order[start : start + phase.batch])
            loss = _head_loss(model(images[idx]), targets[idx])
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"grasp loss became non-finite at epoch {epoch}, step {step}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item()
            batches += 1
            step += 1
        history.append({"epoch": epoch, "loss": total / batches})
        if epoch % 20 == 0 or epoch == phase.epochs - 1:
            log.debug("head epoch %d: loss %.5f", epoch, history[-1]["loss"])
    return history


def train_two_phase(scenes, config: TrainConfig) -> tuple[dict, dict]:
    """Full semi-supervised pipeline on one scene list.

    Returns (weight arrays for the assembled model, training report). The
    report carries both phase histories and the frozen-component checksums
    measured before and after phase 2.
    """
    labelled, unlabelled = split_by_ratio(scenes, SplitSpec(config.ratio, config.seed))
    vq_cfg = VQVAEConfig(
        hidden=config.hidden,
        k=config.k,
        d=config.d,
        beta=config.beta,
        epochs=config.phase1.epochs,
        batch=config.phase1.batch,
        lr=config.phase1.lr,
        seed=config.seed,
    )
    vq_arrays, phase1_hist = train_vqvae(labelled + unlabelled, vq_cfg)
    model = assemble_rggcnn2(vq_arrays, config.head_config, seed=config.seed + 1)
    checksum_before = model.frozen_checksum()
    phase2_hist = _train_head(
        model, model.trainable_parameters(), labelled, config.phase2, config.seed + 2
    )
    checksum_after = model.frozen_checksum()
    if checksum_after != checksum_before:
        raise FreezeViolation("encoder/codebook arrays changed during phase 2")
    arrays = model.frozen_arrays()
    arrays.update(module_arrays(model.decoder, "decoder."))
    arrays.update(module_arrays(model.head, "head."))
    report = {
        "n_scenes": len(scenes),
        "n_labelled": len(labelled),
        "phase1": phase1_hist,
        "phase2": phase2_hist,
        "checksums": {"frozen_before": checksum_before, "frozen_after": checksum_after},
    }
    return arrays, report


def train_supervised_baseline(scenes, config: TrainConfig) -> tuple[dict, dict]:
    """Bare grasp network trained on the labelled fraction only (no phase 1)."""
    labelled, _ = split_by_ratio(scenes, SplitSpec(config.ratio, config.seed))
    head_config = config.head_config or packaged_config("ggcnn2.cfg")
    torch.manual_seed(config.seed + 1)
    model = build_ggcnn2(head_config)
    history = _train_head(
        model, list(model.parameters()), labelled, config.phase2, config.seed + 2
    )
    report = {
        "n_scenes": len(scenes),
        "n_labelled": len(labelled),
        "phase2": history,
    }
    return module_arrays(model), report


@dataclass
class EvalResult:
    n_scenes: int
    n_success: int
    accuracy: float
    records: list
    excluded: int = 0


def evaluate(model, test_scenes, config: TrainConfig) -> EvalResult:
    """Score the top-1 grasp per scene against its ground-truth rectangles.

    A scene succeeds when some positive rectangle has IOU above the threshold
    and angle separation below the threshold. Scenes without positives are
    excluded but counted.
    """
    records = []
    n_success = 0
    excluded = 0
    for scene in test_scenes:
        if not scene.positive_rects:
            excluded += 1
            continue
        maps = predict_maps(model, scene.image)
        grasp = grasp_from_maps(maps, config.smooth_sigma)
        rect = rect_from_grasp(grasp)
        scored = []
        for gt in scene.positive_rects:
            overlap = iou(rect, gt)
            d_angle = angle_diff(grasp.angle, grasp_from_rect(gt).angle)
            ok = overlap > config.iou_threshold and d_angle < config.angle_threshold
            scored.append((overlap, ok, gt))
        passing = [s for s in scored if s[1]]
        best = max(passing or scored, key=lambda s: s[0])
        success = bool(passing)
        n_success += success
        records.append(
            {
                "scene": scene.id,
                "grasp": {
                    "u": grasp.u,
                    "v": grasp.v,
                    "angle": grasp.angle,
                    "width": grasp.width,
                    "height": grasp.height,
                    "quality": grasp.quality,
                },
                "best_iou": best[0],
                "matched_rect": best[2].to_list(),
                "success": success,
            }
        )
    n_scenes = len(records)
    if n_scenes == 0:
        raise ConfigError("evaluation needs at least one scene with positive rectangles")
    return EvalResult(
        n_scenes=n_scenes,
        n_success=n_success,
        accuracy=100.0 * n_success / n_scenes,
        records=records,
        excluded=excluded,
    )


def make_test_split(scenes, seed: int, fraction: float = TEST_FRACTION) -> tuple[list, list]:
    """Image-wise held-out split drawn before any ratio split; (test, pool)."""
    if not scenes:
        raise ConfigError("cannot split an empty scene list")
    n = len(scenes)
    n_test = max(1, math.floor(fraction * n))
    if n_test >= n:
        raise ConfigError(f"test fraction {fraction} leaves no training scenes")
    order = np.random.default_rng(seed).permutation(n)
    test = [scenes[i] for i in order[:n_test]]
    pool = [scenes[i] for i in order[n_test:]]
    return test, pool


@dataclass
class SweepRow:
    ratio: float
    accuracy: float
    n_labelled: int


@dataclass
class SweepTable:
    rows: list

    def to_csv(self, path) -> None:
        lines = ["ratio,accuracy"]
        for row in self.rows:
            lines.append(f"{row.ratio},{row.accuracy}")
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")


def _sweep_one(args) -> SweepRow:
    pool, test_scenes, cfg = args
    arrays, report = train_two_phase(pool, cfg)
    model = model_from_arrays(arrays, cfg.head_config)
    result = evaluate(model, test_scenes, cfg)
    log.info("ratio %.2f: accuracy %.2f%%", cfg.ratio, result.accuracy)
    return SweepRow(ratio=cfg.ratio, accuracy=result.accuracy, n_labelled=report["n_labelled"])


def ratio_sweep(scenes, ratios, base_config: TrainConfig, workers: int = 1) -> SweepTable:
    """Train and evaluate at each labelled ratio against one fixed test split.

    The held-out split is drawn before any ratio split and shared by every
    run; each ratio derives its seed from (base seed + ratio index).
    """
    cleaned = []
    for r in ratios:
        if r in cleaned:
            warnings.warn(f"duplicate ratio {r} dropped")
            continue
        if not 0.0 < r <= 1.0:
            raise ConfigError(f"ratio must lie in (0, 1], got {r}")
        cleaned.append(r)
    test_scenes, pool = make_test_split(scenes, seed=base_config.seed)
    jobs = [
        (pool, test_scenes, replace(base_config, ratio=r, seed=base_config.seed + i))
        for i, r in enumerate(cleaned)
    ]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool_exec:
            rows = list(pool_exec.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(job) for job in jobs]
    return SweepTable(rows)
