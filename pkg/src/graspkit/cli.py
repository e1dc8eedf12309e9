"""Command-line entry point.

Commands: train, sweep, predict, eval, calibrate, execute-sim, synth-data.
Every command writes a run manifest next to its outputs so reruns are
reproducible; all randomness funnels through the --seed flag. Exit codes:
0 success, 1 runtime failure, 2 usage error. Config precedence is
flags > config file (YAML) > defaults. GRASPKIT_THREADS caps how many worker
processes a sweep may fan out to.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import yaml

from . import data as data_mod
from .calibration import (
    MappingMatrix,
    ObservationSet,
    apply_mapping,
    fit_mapping,
    pose_from_grasp,
)
from .errors import ExecutionAborted, GraspkitError
from .geometry import GraspPose2D, grasp_from_maps
from .kinematics import KinematicChain, default_chain, fk
from .network import model_from_arrays, parse_network_config, predict_maps
from .plots import save_maps_panel, save_sweep_plot
from .trajectory import GraspObject, TableGeom, plan_trajectory, simulate_execution
from .training import (
    PhaseConfig,
    TrainConfig,
    evaluate,
    make_test_split,
    ratio_sweep,
    train_supervised_baseline,
    train_two_phase,
)
from .weights import file_checksum, load_archive, save_archive

DEFAULT_RATIOS = (0.1, 0.3, 0.5, 0.7, 0.9)
DEFAULT_INTRINSICS = {"fx": 525.0, "fy": 525.0, "cx": None, "cy": None}


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    input_hashes: dict
    output_paths: list
    wall_clock_s: float
    archive_hash: str | None = None

    def write(self, out_dir: Path) -> Path:
        path = Path(out_dir) / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=1, sort_keys=True))
        return path


def _hash_input(path_or_spec) -> str:
    p = Path(str(path_or_spec))
    if p.is_file():
        return file_checksum(p)
    if p.is_dir():
        h = hashlib.sha256()
        for f in sorted(p.rglob("*")):
            if f.is_file():
                h.update(f.name.encode())
                h.update(f.read_bytes())
        return h.hexdigest()
    return f"spec:{path_or_spec}"


def _positive_ratio(text: str) -> float:
    val = float(text)
    if not 0.0 < val <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1], got {text}")
    return val


def _ratio_list(text: str) -> list:
    return [_positive_ratio(tok) for tok in text.split(",") if tok]


def load_dataset(spec: str, seed: int, default_n: int = 32):
    """Resolve a --data argument: 'synth', 'synth:N', an exported scene dir,
    or a Cornell-layout directory."""
    if spec == "synth" or spec.startswith("synth:"):
        n = int(spec.split(":", 1)[1]) if ":" in spec else default_n
        return data_mod.synth_dataset(n, seed=seed)
    root = Path(spec)
    if not root.exists():
        raise GraspkitError(f"dataset path does not exist: {spec}")
    if next(root.rglob("pcd*cpos.txt"), None) is not None:
        scenes = data_mod.load_cornell_dir(root)
        return [data_mod.center_crop_resize(s, 300) for s in scenes]
    return data_mod.load_scene_dir(root)


def _train_config(args) -> TrainConfig:
    """flags > config file > defaults."""
    file_cfg = {}
    if getattr(args, "config", None):
        file_cfg = yaml.safe_load(Path(args.config).read_text()) or {}
        if not isinstance(file_cfg, dict):
            raise GraspkitError(f"config file {args.config} must hold a mapping")

    def pick(name, default):
        flag = getattr(args, name.replace("-", "_"), None)
        if flag is not None:
            return flag
        return file_cfg.get(name, default)

    head = pick("head_config", None)
    config = TrainConfig(
        ratio=pick("ratio", 1.0),
        seed=pick("seed", 0),
        phase1=PhaseConfig(
            epochs=int(pick("phase1_epochs", 40)),
            batch=int(pick("phase1_batch", 16)),
            lr=float(pick("phase1_lr", 1e-3)),
        ),
        phase2=PhaseConfig(
            epochs=int(pick("phase2_epochs", 40)),
            batch=int(pick("phase2_batch", 16)),
            lr=float(pick("phase2_lr", 1e-3)),
        ),
        beta=float(pick("beta", 0.25)),
        smooth_sigma=float(pick("sigma", 2.0)),
        iou_threshold=float(pick("iou_threshold", 0.25)),
        angle_threshold=float(pick("angle_threshold", math.pi / 6.0)),
        k=int(pick("k", 128)),
        d=int(pick("d", 64)),
        hidden=int(pick("hidden", 32)),
        head_config=parse_network_config(head) if head else None,
    )
    return config


def _config_summary(config: TrainConfig) -> dict:
    d = asdict(config)
    d["head_config"] = "custom" if config.head_config else "ggcnn2.cfg"
    return d


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args) -> int:
    t0 = time.time()
    out = _out_dir(args)
    scenes = load_dataset(args.data, seed=args.seed or 0)
    config = _train_config(args)
    if args.baseline:
        arrays, report = train_supervised_baseline(scenes, config)
    else:
        arrays, report = train_two_phase(scenes, config)
    weights_path = out / "weights.gkw"
    save_archive(weights_path, arrays)
    (out / "report.json").write_text(json.dumps(report, indent=1))
    RunManifest(
        command="train" if not args.baseline else "train --baseline",
        config=_config_summary(config),
        seed=config.seed,
        input_hashes={"data": _hash_input(args.data)},
        output_paths=[str(weights_path), str(out / "report.json")],
        wall_clock_s=time.time() - t0,
        archive_hash=file_checksum(weights_path),
    ).write(out)
    print(f"wrote {weights_path}")
    return 0


def cmd_sweep(args) -> int:
    t0 = time.time()
    out = _out_dir(args)
    scenes = load_dataset(args.data, seed=args.seed or 0)
    config = _train_config(args)
    workers = max(1, int(os.environ.get("GRASPKIT_THREADS", "1")))
    table = ratio_sweep(scenes, args.ratios, config, workers=min(workers, len(args.ratios)))
    csv_path = out / "sweep.csv"
    table.to_csv(csv_path)
    png_path = out / "sweep.png"
    save_sweep_plot(table.rows, png_path)
    RunManifest(
        command="sweep",
        config={**_config_summary(config), "ratios": list(args.ratios)},
        seed=config.seed,
        input_hashes={"data": _hash_input(args.data)},
        output_paths=[str(csv_path), str(png_path)],
        wall_clock_s=time.time() - t0,
    ).write(out)
    for row in table.rows:
        print(f"ratio {row.ratio}: accuracy {row.accuracy:.2f}%")
    return 0


def _load_image(path) -> np.ndarray:
    from PIL import Image

    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return arr


def _crop_divisible(image: np.ndarray, divisor: int) -> np.ndarray:
    h, w = image.shape[:2]
    nh, nw = (h // divisor) * divisor, (w // divisor) * divisor
    if nh == 0 or nw == 0:
        raise GraspkitError(f"image {h}x{w} smaller than the network divisor {divisor}")
    if (nh, nw) != (h, w):
        top, left = (h - nh) // 2, (w - nw) // 2
        print(f"notice: center-cropped {h}x{w} -> {nh}x{nw} to satisfy divisibility")
        return image[top : top + nh, left : left + nw]
    return image


def cmd_predict(args) -> int:
    t0 = time.time()
    out = _out_dir(args)
    arrays = load_archive(args.weights)
    head_cfg = parse_network_config(args.head_config) if args.head_config else None
    model = model_from_arrays(arrays, head_cfg)
    image = _crop_divisible(_load_image(args.image), model.divisor)
    maps = predict_maps(model, image)
    grasp = grasp_from_maps(maps, args.sigma)
    grasp_path = out / "grasp.json"
    grasp_path.write_text(grasp.to_json())
    panel_path = out / "panel.png"
    save_maps_panel(image, maps, panel_path, grasp=grasp)
    RunManifest(
        command="predict",
        config={"sigma": args.sigma},
        seed=0,
        input_hashes={"weights": _hash_input(args.weights), "image": _hash_input(args.image)},
        output_paths=[str(grasp_path), str(panel_path)],
        wall_clock_s=time.time() - t0,
    ).write(out)
    print(grasp.to_json())
    return 0


def cmd_eval(args) -> int:
    t0 = time.time()
    out = _out_dir(args)
    arrays = load_archive(args.weights)
    head_cfg = parse_network_config(args.head_config) if args.head_config else None
    model = model_from_arrays(arrays, head_cfg)
    scenes = load_dataset(args.data, seed=args.seed or 0)
    config = _train_config(args)
    result = evaluate(model, scenes, config)
    payload = {
        "n_scenes": result.n_scenes,
        "n_success": result.n_success,
        "accuracy": result.accuracy,
        "excluded": result.excluded,
        "records": result.records,
    }
    (out / "eval.json").write_text(json.dumps(payload, indent=1))
    RunManifest(
        command="eval",
        config=_config_summary(config),
        seed=config.seed,
        input_hashes={"weights": _hash_input(args.weights), "data": _hash_input(args.data)},
        output_paths=[str(out / "eval.json")],
        wall_clock_s=time.time() - t0,
    ).write(out)
    print(f"accuracy {result.accuracy:.2f}% ({result.n_success}/{result.n_scenes})")
    return 0


def cmd_calibrate(args) -> int:
    t0 = time.time()
    out = _out_dir(args)
    obs = ObservationSet.from_csv(args.obs)
    mapping = fit_mapping(obs)
    residual = float(
        np.max(np.abs(mapping.T @ obs.camera_matrix() - obs.robot_matrix()))
    )
    mapping_path = out / "mapping.json"
    mapping.to_json(mapping_path)
    RunManifest(
        command="calibrate",
        config={"n_observations": len(obs), "max_residual": residual},
        seed=0,
        input_hashes={"obs": _hash_input(args.obs)},
        output_paths=[str(mapping_path)],
        wall_clock_s=time.time() - t0,
    ).write(out)
    print(f"wrote {mapping_path} (max residual {residual:.3e})")
    return 0


def cmd_execute_sim(args) -> int:
    t0 = time.time()
    out = _out_dir(args)
    chain = KinematicChain.from_cfg(args.chain) if args.chain else default_chain()
    if args.grasp:
        grasp = GraspPose2D.from_json(Path(args.grasp).read_text())
        image = None
    else:
        if not (args.weights and args.image):
            raise GraspkitError("execute-sim needs either --grasp or both --weights and --image")
        arrays = load_archive(args.weights)
        model = model_from_arrays(arrays)
        image = _crop_divisible(_load_image(args.image), model.divisor)
        maps = predict_maps(model, image)
        grasp = grasp_from_maps(maps, args.sigma)
    if grasp.no_grasp:
        raise GraspkitError("no grasp found in the quality map")
    h, w = (image.shape[:2] if image is not None else (480, 640))
    intrinsics = {
        "fx": args.fx,
        "fy": args.fy,
        "cx": args.cx if args.cx is not None else w / 2.0,
        "cy": args.cy if args.cy is not None else h / 2.0,
    }
    cam_pose = pose_from_grasp(grasp, args.depth, intrinsics)
    mapping = MappingMatrix.from_json(args.mapping)
    robot_pose = apply_mapping(mapping, cam_pose)
    table = TableGeom()
    home = fk(chain, chain.home)
    plan = plan_trajectory(
        robot_pose,
        GraspObject(depth_gpc=args.object_depth, height_gpc=args.object_height),
        table,
        home,
    )
    log_path = out / "execution.jsonl"
    try:
        exec_log = simulate_execution(chain, plan, table)
    except ExecutionAborted as e:
        if e.log is not None:
            e.log.to_jsonl(log_path)
        print(f"error: {e}", file=sys.stderr)
        return 1
    exec_log.to_jsonl(log_path)
    summary = {
        "success": exec_log.success,
        "flags": exec_log.flags,
        "waypoints": [[float(v) for v in wp.pose.as_vector()] for wp in plan],
    }
    (out / "execution.json").write_text(json.dumps(summary, indent=1))
    RunManifest(
        command="execute-sim",
        config={
            "depth": args.depth,
            "object_depth": args.object_depth,
            "object_height": args.object_height,
        },
        seed=0,
        input_hashes={"mapping": _hash_input(args.mapping)},
        output_paths=[str(log_path), str(out / "execution.json")],
        wall_clock_s=time.time() - t0,
    ).write(out)
    print(f"execution {'succeeded' if exec_log.success else 'FAILED'}; log at {log_path}")
    return 0 if exec_log.success else 1


def cmd_synth_data(args) -> int:
    t0 = time.time()
    out = _out_dir(args)
    scenes = data_mod.synth_dataset(args.n, seed=args.seed or 0, h=args.size, w=args.size)
    data_mod.export_scenes(scenes, out)
    RunManifest(
        command="synth-data",
        config={"n": args.n, "size": args.size},
        seed=args.seed or 0,
        input_hashes={},
        output_paths=[str(out)],
        wall_clock_s=time.time() - t0,
    ).write(out)
    print(f"wrote {args.n} scenes under {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graspkit",
        description="Semi-supervised grasp prediction toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_train_flags(p):
        p.add_argument("--data", required=True, help="synth, synth:N, or a dataset directory")
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--config", default=None, help="YAML config file")
        p.add_argument("--ratio", type=_positive_ratio, default=None)
        p.add_argument("--sigma", type=float, default=None)
        p.add_argument("--head-config", default=None)
        for phase in ("phase1", "phase2"):
            p.add_argument(f"--{phase}-epochs", type=int, default=None)
            p.add_argument(f"--{phase}-batch", type=int, default=None)
            p.add_argument(f"--{phase}-lr", type=float, default=None)
        p.add_argument("--beta", type=float, default=None)
        p.add_argument("--k", type=int, default=None)
        p.add_argument("--d", type=int, default=None)
        p.add_argument("--hidden", type=int, default=None)

    p_train = sub.add_parser("train", help="two-phase training (or --baseline)")
    add_train_flags(p_train)
    p_train.add_argument("--baseline", action="store_true", help="supervised head only")
    p_train.set_defaults(func=cmd_train)

    p_sweep = sub.add_parser("sweep", help="labelled-ratio sweep")
    add_train_flags(p_sweep)
    p_sweep.add_argument(
        "--ratios", type=_ratio_list, default=list(DEFAULT_RATIOS),
        help="comma-separated ratios (default 0.1,0.3,0.5,0.7,0.9)",
    )
    p_sweep.set_defaults(func=cmd_sweep)

    p_pred = sub.add_parser("predict", help="grasp maps for one image")
    p_pred.add_argument("--weights", required=True)
    p_pred.add_argument("--image", required=True)
    p_pred.add_argument("--out", required=True)
    p_pred.add_argument("--sigma", type=float, default=2.0)
    p_pred.add_argument("--head-config", default=None)
    p_pred.set_defaults(func=cmd_predict)

    p_eval = sub.add_parser("eval", help="IOU accuracy of saved weights on a dataset")
    add_train_flags(p_eval)
    p_eval.add_argument("--weights", required=True)
    p_eval.set_defaults(func=cmd_eval)

    p_cal = sub.add_parser("calibrate", help="fit the 7x7 pose mapping from a CSV")
    p_cal.add_argument("--obs", required=True, help="observation CSV")
    p_cal.add_argument("--out", required=True)
    p_cal.set_defaults(func=cmd_calibrate)

    p_exec = sub.add_parser("execute-sim", help="predict, map, plan and simulate a pick")
    p_exec.add_argument("--weights")
    p_exec.add_argument("--image")
    p_exec.add_argument("--grasp", help="grasp JSON (skips prediction)")
    p_exec.add_argument("--mapping", required=True)
    p_exec.add_argument("--chain", default=None)
    p_exec.add_argument("--out", required=True)
    p_exec.add_argument("--sigma", type=float, default=2.0)
    p_exec.add_argument("--depth", type=float, default=0.5, help="camera depth at grasp center (m)")
    p_exec.add_argument("--fx", type=float, default=DEFAULT_INTRINSICS["fx"])
    p_exec.add_argument("--fy", type=float, default=DEFAULT_INTRINSICS["fy"])
    p_exec.add_argument("--cx", type=float, default=None)
    p_exec.add_argument("--cy", type=float, default=None)
    p_exec.add_argument("--object-depth", type=float, default=0.15)
    p_exec.add_argument("--object-height", type=float, default=0.05)
    p_exec.set_defaults(func=cmd_execute_sim)

    p_synth = sub.add_parser("synth-data", help="export a synthetic dataset")
    p_synth.add_argument("--n", type=int, required=True)
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--size", type=int, default=64)
    p_synth.set_defaults(func=cmd_synth_data)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("GRASPKIT_LOGLEVEL", "WARNING"))
    torch.set_num_threads(1)
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except GraspkitError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
