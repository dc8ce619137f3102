"""Command-line front end: reproducible perturbation experiments.

Subcommands
-----------
simulate    sample per-frame pitch/roll, rewrite labels, warp images
evaluate    AP40 / AOS / center-distance metric tables, optional A/B diff
rectify     move detections between camera viewports given extrinsics
pose-error  geodesic angular error of estimated extrinsics vs. pose truth
loss        content/style loss kernels over serialized feature tensors

Conventions
-----------
* All angles on the command line are **radians**; reports additionally
  show degrees where an angle is reported.
* Every run is deterministic given its inputs and flags: reports carry no
  timestamps, map keys are sorted, and ``--jobs N`` produces artifacts
  byte-identical to ``--jobs 1``.
* A flat ``key=value`` config file (``--config``) may supply any flag of
  its subcommand, spelled without the leading dashes; explicit flags win.
  The ``CAMPERTURB_SEED`` environment variable overrides the seed from
  either source (master override for CI matrices).
* Exit codes: 0 success, 1 usage/config error, 2 I/O or data error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .errors import (
    CamPerturbError,
    ChannelMismatch,
    NoGroundTruth,
    NoMatches,
    ShapeMismatch,
)
from .geometry import ExtrinsicPerturbation, perturbation_matrix
from .horizon import HorizonLine, VanishingPoint, angular_error, extrinsics_from_horizon_vp
from .kitti import (
    DifficultyBin,
    parse_calib_file,
    parse_label_file,
    parse_odometry_poses,
    write_label_file,
)
from .losses import (
    FeatureTensor,
    content_loss,
    loss_gradients,
    style_loss,
    total_loss,
)
from .metrics import (
    DetectionFrame,
    average_orientation_similarity,
    average_precision_40,
    nuscenes_errors,
)
from .netpbm import read_image, write_image
from .simulate import (
    DEFAULT_CLAMP,
    DEFAULT_SIGMA,
    PerturbationSpec,
    SceneFrame,
    simulate_frame,
    transform_labels,
)
from .tensorio import load_tensor

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2

SEED_ENV_VAR = "CAMPERTURB_SEED"


class _UsageError(Exception):
    """Bad flags or config values: reported on stderr, exit code 1."""


class _IOFailure(Exception):
    """Missing or unreadable inputs: reported on stderr, exit code 2."""


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so exit codes stay ours."""

    def error(self, message):
        raise _UsageError(message)


# ---------------------------------------------------------------------------
# config file / flag resolution


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _read_config_file(path: str) -> dict[str, str]:
    """Read a flat key=value file; '#' starts a comment, blank lines skipped."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise _UsageError(f"cannot read config file {path}: {exc}") from exc
    values: dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise _UsageError(
                f"config file {path} line {line_no}: expected key=value, got {raw!r}"
            )
        values[key.strip()] = value.strip()
    return values


class _Option:
    """One resolvable option: flag name, converter, default."""

    def __init__(self, name, convert, default=None, required=False):
        self.name = name            # config-file key, e.g. "sigma-pitch"
        self.dest = name.replace("-", "_")
        self.convert = convert
        self.default = default
        self.required = required


def _resolve_options(args: argparse.Namespace, options: list[_Option]):
    """Merge flag values over config-file values over defaults."""
    config: dict[str, str] = {}
    if getattr(args, "config", None):
        config = _read_config_file(args.config)
        known = {opt.name for opt in options}
        unknown = sorted(set(config) - known)
        if unknown:
            raise _UsageError(
                f"unknown config key(s) {', '.join(unknown)}; "
                f"known keys: {', '.join(sorted(known))}"
            )
    resolved = {}
    for opt in options:
        value = getattr(args, opt.dest, None)
        if value is None and opt.name in config:
            try:
                value = opt.convert(config[opt.name])
            except (ValueError, TypeError) as exc:
                raise _UsageError(
                    f"config key {opt.name}: {exc}"
                ) from exc
        if value is None:
            value = opt.default
        if value is None and opt.required:
            raise _UsageError(f"--{opt.name} is required")
        resolved[opt.dest] = value
    return argparse.Namespace(**resolved)


def _flag_type(convert):
    """Wrap a converter so argparse reports failures as usage errors."""

    def parse(text):
        try:
            return convert(text)
        except (ValueError, TypeError) as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc

    return parse


def _angle(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"angle must be finite, got {text!r}")
    return value


def _nonneg_angle(text: str) -> float:
    value = _angle(text)
    if value < 0:
        raise ValueError(f"angle must be >= 0, got {value}")
    return value


def _seed_value(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {value}")
    return value


def _jobs_value(text: str) -> int:
    value = int(text)
    if value < 1:
        raise ValueError(f"jobs must be >= 1, got {value}")
    return value


def _fill_value(text: str) -> int:
    value = int(text)
    if not 0 <= value <= 255:
        raise ValueError(f"fill must be a byte value 0..255, got {value}")
    return value


def _threshold_value(text: str) -> float:
    value = float(text)
    if not 0.0 < value <= 1.0:
        raise ValueError(f"iou threshold must lie in (0, 1], got {value}")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if not math.isfinite(value) or value <= 0:
        raise ValueError(f"expected a positive number, got {text!r}")
    return value


def _nonneg_float(text: str) -> float:
    value = float(text)
    if not math.isfinite(value) or value < 0:
        raise ValueError(f"expected a non-negative number, got {text!r}")
    return value


def _comma_list(text: str) -> tuple[str, ...]:
    items = tuple(part.strip() for part in text.split(",") if part.strip())
    if not items:
        raise ValueError(f"expected a comma-separated list, got {text!r}")
    return items


_METRIC_CHOICES = ("ap2d", "apbev", "ap3d", "aos", "nuscenes")
_DIFFICULTY_CHOICES = ("easy", "moderate", "hard")


def _metric_list(text: str) -> tuple[str, ...]:
    metrics = _comma_list(text)
    for m in metrics:
        if m not in _METRIC_CHOICES:
            raise ValueError(
                f"unknown metric {m!r}; choose from {', '.join(_METRIC_CHOICES)}"
            )
    return metrics


def _difficulty_list(text: str) -> tuple[str, ...]:
    bins = _comma_list(text)
    for b in bins:
        if b not in _DIFFICULTY_CHOICES:
            raise ValueError(
                f"unknown difficulty {b!r}; choose from {', '.join(_DIFFICULTY_CHOICES)}"
            )
    return bins


def _apply_seed_env(resolved) -> None:
    """CAMPERTURB_SEED is a master override: it beats flags and config."""
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None:
        return
    try:
        resolved.seed = _seed_value(raw)
    except ValueError as exc:
        raise _UsageError(f"{SEED_ENV_VAR}: {exc}") from exc


# ---------------------------------------------------------------------------
# shared I/O helpers


def _require_dir(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise _IOFailure(f"{what} directory does not exist: {p}")
    return p


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise _IOFailure(f"{what} file does not exist: {p}")
    return p


def _read_bytes(path: Path, what: str) -> bytes:
    try:
        return path.read_bytes()
    except OSError as exc:
        raise _IOFailure(f"cannot read {what} {path}: {exc}") from exc


def _frame_ids(label_dir: Path) -> list[str]:
    ids = sorted(p.stem for p in label_dir.glob("*.txt"))
    if not ids:
        raise _IOFailure(f"no .txt label files found in {label_dir}")
    return ids


def _parallel_map(fn, items, jobs: int) -> list:
    """Order-preserving map, optionally threaded; results keyed by position."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _json_dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _emit_report(text: str, out_path: str | None) -> None:
    if out_path:
        try:
            Path(out_path).parent.mkdir(parents=True, exist_ok=True)
            Path(out_path).write_text(text)
        except OSError as exc:
            raise _IOFailure(f"cannot write report {out_path}: {exc}") from exc
    else:
        sys.stdout.write(text)


def _csv_text(header: list[str], rows: list[list]) -> str:
    import csv
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _load_calibration(calib_path: Path, frame_id: str):
    """Calibration for one frame: per-frame file in a dir, or one shared file."""
    if calib_path.is_dir():
        per_frame = calib_path / f"{frame_id}.txt"
        if not per_frame.is_file():
            raise _IOFailure(f"calibration file does not exist: {per_frame}")
        return parse_calib_file(_read_bytes(per_frame, "calibration"))
    return parse_calib_file(_read_bytes(calib_path, "calibration"))


def _load_sidecar(path: Path) -> dict[str, ExtrinsicPerturbation]:
    """Read a {frame_id, pitch, roll} JSON-lines sidecar."""
    entries: dict[str, ExtrinsicPerturbation] = {}
    for line_no, line in enumerate(
        _read_bytes(path, "sidecar").decode("utf-8", errors="replace").splitlines(),
        start=1,
    ):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            entries[str(record["frame_id"])] = ExtrinsicPerturbation(
                pitch=float(record["pitch"]), roll=float(record["roll"])
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise _IOFailure(f"sidecar {path} line {line_no}: {exc}") from exc
    return entries


# ---------------------------------------------------------------------------
# simulate


_SIMULATE_OPTIONS = [
    _Option("labels", str, required=True),
    _Option("calib", str, required=True),
    _Option("images", str),
    _Option("out", str, required=True),
    _Option("sigma-pitch", _nonneg_angle, DEFAULT_SIGMA),
    _Option("sigma-roll", _nonneg_angle, DEFAULT_SIGMA),
    _Option("clamp", _nonneg_angle, DEFAULT_CLAMP),
    _Option("seed", _seed_value, 0),
    _Option("fill", _fill_value, 0),
    _Option("jobs", _jobs_value, 1),
]


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _resolve_options(args, _SIMULATE_OPTIONS)
    _apply_seed_env(cfg)
    try:
        spec = PerturbationSpec(
            sigma_pitch=cfg.sigma_pitch,
            sigma_roll=cfg.sigma_roll,
            clamp=cfg.clamp,
            seed=cfg.seed,
        )
    except (ValueError, CamPerturbError) as exc:
        raise _UsageError(str(exc)) from exc
    label_dir = _require_dir(cfg.labels, "label")
    calib_path = Path(cfg.calib)
    if not calib_path.exists():
        raise _IOFailure(f"calibration path does not exist: {calib_path}")
    image_dir = _require_dir(cfg.images, "image") if cfg.images else None
    out_dir = Path(cfg.out)
    out_labels = out_dir / "labels"
    out_images = out_dir / "images"
    try:
        out_labels.mkdir(parents=True, exist_ok=True)
        if image_dir is not None:
            out_images.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise _IOFailure(f"cannot create output directory: {exc}") from exc

    frame_ids = _frame_ids(label_dir)

    def process(frame_id: str):
        """Returns (frame_id, perturbed, image, extension) or (frame_id, error)."""
        try:
            labels = parse_label_file(
                _read_bytes(label_dir / f"{frame_id}.txt", "label file")
            )
            calib = _load_calibration(calib_path, frame_id)
            image = None
            extension = None
            if image_dir is not None:
                for ext in (".ppm", ".pgm"):
                    candidate = image_dir / f"{frame_id}{ext}"
                    if candidate.is_file():
                        image = read_image(_read_bytes(candidate, "image"))
                        extension = ext
                        break
            frame = SceneFrame(
                frame_id=frame_id,
                intrinsics=calib.intrinsics(),
                labels=tuple(labels),
                image=image,
            )
            perturbed, warped = simulate_frame(frame, spec, fill=cfg.fill)
            return (frame_id, perturbed, warped, extension, None)
        except (CamPerturbError, _IOFailure) as exc:
            return (frame_id, None, None, None, str(exc))

    results = _parallel_map(process, frame_ids, cfg.jobs)

    processed = 0
    dropped = 0
    failures: list[tuple[str, str]] = []
    sidecar_lines: list[str] = []
    for frame_id, perturbed, warped, extension, error in sorted(
        results, key=lambda r: r[0]
    ):
        if error is not None:
            failures.append((frame_id, error))
            continue
        try:
            (out_labels / f"{frame_id}.txt").write_bytes(
                write_label_file(list(perturbed.labels))
            )
            if warped is not None:
                (out_images / f"{frame_id}{extension}").write_bytes(
                    write_image(warped)
                )
        except OSError as exc:
            raise _IOFailure(f"cannot write outputs for frame {frame_id}: {exc}") from exc
        sidecar_lines.append(
            json.dumps(
                {
                    "frame_id": frame_id,
                    "pitch": perturbed.applied.pitch,
                    "roll": perturbed.applied.roll,
                },
                sort_keys=True,
            )
        )
        processed += 1
        dropped += perturbed.dropped
    try:
        (out_dir / "perturbations.jsonl").write_text(
            "\n".join(sidecar_lines) + ("\n" if sidecar_lines else "")
        )
    except OSError as exc:
        raise _IOFailure(f"cannot write sidecar: {exc}") from exc

    print(f"frames processed: {processed}")
    print(f"objects dropped: {dropped}")
    print(f"frame failures: {len(failures)}")
    for frame_id, reason in failures:
        print(f"  {frame_id}: {reason}")
    if processed == 0:
        raise _IOFailure("no frame could be processed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate


_EVALUATE_OPTIONS = [
    _Option("gt", str, required=True),
    _Option("det", str, required=True),
    _Option("det-disturbed", str),
    _Option("out", str),
    _Option("classes", _comma_list, ("Car",)),
    _Option("metrics", _metric_list, ("ap3d",)),
    _Option("difficulties", _difficulty_list, ("easy", "moderate", "hard")),
    _Option("iou-threshold", _threshold_value, 0.7),
    _Option("match-radius", _positive_float, 2.0),
    _Option("format", str, "json"),
    _Option("jobs", _jobs_value, 1),
]

_BIN_BY_NAME = {
    "easy": DifficultyBin.EASY,
    "moderate": DifficultyBin.MODERATE,
    "hard": DifficultyBin.HARD,
}


def _load_detection_frames(
    gt_dir: Path, det_dir: Path, jobs: int
) -> list[DetectionFrame]:
    """One DetectionFrame per gt file; a missing det file means no detections."""
    frame_ids = _frame_ids(gt_dir)

    def load(frame_id: str) -> DetectionFrame:
        gt = parse_label_file(_read_bytes(gt_dir / f"{frame_id}.txt", "gt labels"))
        det_path = det_dir / f"{frame_id}.txt"
        dets = []
        if det_path.is_file():
            dets = parse_label_file(_read_bytes(det_path, "detections"))
        try:
            return DetectionFrame(
                frame_id=frame_id, ground_truth=tuple(gt), detections=tuple(dets)
            )
        except ValueError as exc:
            raise _IOFailure(f"frame {frame_id}: {exc}") from exc

    return _parallel_map(load, frame_ids, jobs)


def _metric_cells(frames, cfg) -> list[dict]:
    """One report cell per (metric, class, difficulty); 'n/a' when undefined."""
    cells: list[dict] = []
    kind_by_metric = {"ap2d": "2d", "apbev": "bev", "ap3d": "3d"}
    for metric in cfg.metrics:
        for class_name in cfg.classes:
            if metric == "nuscenes":
                try:
                    errors = nuscenes_errors(frames, class_name, cfg.match_radius)
                    values = {
                        "nuscenes_ate": errors.ate,
                        "nuscenes_ase": errors.ase,
                        "nuscenes_aoe": errors.aoe,
                    }
                except (NoMatches, NoGroundTruth):
                    values = {
                        "nuscenes_ate": "n/a",
                        "nuscenes_ase": "n/a",
                        "nuscenes_aoe": "n/a",
                    }
                for name, value in values.items():
                    cell = {
                        "metric": name,
                        "class": class_name,
                        "difficulty": "all",
                        "threshold": cfg.match_radius,
                        "value": value,
                    }
                    if name == "nuscenes_aoe" and value != "n/a":
                        cell["value_degrees"] = math.degrees(value)
                    cells.append(cell)
                continue
            for difficulty in cfg.difficulties:
                bin_ = _BIN_BY_NAME[difficulty]
                try:
                    if metric == "aos":
                        value, _ = average_orientation_similarity(
                            frames, class_name, cfg.iou_threshold, bin_
                        )
                    else:
                        value, _ = average_precision_40(
                            frames,
                            class_name,
                            kind_by_metric[metric],
                            cfg.iou_threshold,
                            bin_,
                        )
                except NoGroundTruth:
                    value = "n/a"
                cells.append(
                    {
                        "metric": metric,
                        "class": class_name,
                        "difficulty": difficulty,
                        "threshold": cfg.iou_threshold,
                        "value": value,
                    }
                )
    return cells


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _resolve_options(args, _EVALUATE_OPTIONS)
    if cfg.format not in ("json", "csv"):
        raise _UsageError(f"--format must be json or csv, got {cfg.format!r}")
    gt_dir = _require_dir(cfg.gt, "ground-truth")
    det_dir = _require_dir(cfg.det, "detection")
    frames = _load_detection_frames(gt_dir, det_dir, cfg.jobs)
    cells = _metric_cells(frames, cfg)
    if cfg.det_disturbed:
        disturbed_dir = _require_dir(cfg.det_disturbed, "disturbed detection")
        disturbed_frames = _load_detection_frames(gt_dir, disturbed_dir, cfg.jobs)
        disturbed_cells = _metric_cells(disturbed_frames, cfg)
        merged = []
        for original, disturbed in zip(cells, disturbed_cells):
            cell = {k: original[k] for k in ("metric", "class", "difficulty", "threshold")}
            cell["original"] = original["value"]
            cell["disturbed"] = disturbed["value"]
            if original["value"] == "n/a" or disturbed["value"] == "n/a":
                cell["decrease"] = "n/a"
            else:
                cell["decrease"] = disturbed["value"] - original["value"]
            merged.append(cell)
        cells = merged
    report = {
        "parameters": {
            "classes": list(cfg.classes),
            "difficulties": list(cfg.difficulties),
            "iou_threshold": cfg.iou_threshold,
            "match_radius": cfg.match_radius,
            "metrics": list(cfg.metrics),
            "frames": len(frames),
        },
        "cells": cells,
    }
    if cfg.format == "json":
        text = _json_dumps(report)
    else:
        if cfg.det_disturbed:
            header = [
                "metric", "class", "difficulty", "threshold",
                "original", "disturbed", "decrease",
            ]
            rows = [
                [c["metric"], c["class"], c["difficulty"], c["threshold"],
                 c["original"], c["disturbed"], c["decrease"]]
                for c in cells
            ]
        else:
            header = ["metric", "class", "difficulty", "threshold", "value"]
            rows = [
                [c["metric"], c["class"], c["difficulty"], c["threshold"], c["value"]]
                for c in cells
            ]
        text = _csv_text(header, rows)
    _emit_report(text, cfg.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# rectify


_RECTIFY_OPTIONS = [
    _Option("det", str, required=True),
    _Option("calib", str, required=True),
    _Option("out", str, required=True),
    _Option("sidecar", str),
    _Option("horizon", str),
    _Option("truth-sidecar", str),
    _Option("direction", str, "undo"),
    _Option("report", str),
    _Option("jobs", _jobs_value, 1),
]


def _load_horizon_annotations(path: Path) -> dict[str, dict]:
    entries: dict[str, dict] = {}
    for line_no, line in enumerate(
        _read_bytes(path, "horizon annotations").decode("utf-8", errors="replace").splitlines(),
        start=1,
    ):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            entries[str(record["frame_id"])] = {
                "slope": float(record["slope"]),
                "intercept_v": float(record["intercept_v"]),
                "vp_u": float(record["vp_u"]),
                "vp_v": float(record["vp_v"]),
            }
        except (KeyError, TypeError, ValueError) as exc:
            raise _IOFailure(f"horizon annotations {path} line {line_no}: {exc}") from exc
    return entries


def cmd_rectify(args: argparse.Namespace) -> int:
    cfg = _resolve_options(args, _RECTIFY_OPTIONS)
    if cfg.direction not in ("undo", "apply"):
        raise _UsageError(f"--direction must be undo or apply, got {cfg.direction!r}")
    if (cfg.sidecar is None) == (cfg.horizon is None):
        raise _UsageError("exactly one of --sidecar or --horizon is required")
    det_dir = _require_dir(cfg.det, "detection")
    calib_path = Path(cfg.calib)
    if not calib_path.exists():
        raise _IOFailure(f"calibration path does not exist: {calib_path}")
    out_dir = Path(cfg.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise _IOFailure(f"cannot create output directory: {exc}") from exc

    sidecar = _load_sidecar(Path(cfg.sidecar)) if cfg.sidecar else None
    horizon = _load_horizon_annotations(Path(cfg.horizon)) if cfg.horizon else None
    truth = _load_sidecar(Path(cfg.truth_sidecar)) if cfg.truth_sidecar else None

    frame_ids = _frame_ids(det_dir)

    def process(frame_id: str):
        try:
            labels = parse_label_file(
                _read_bytes(det_dir / f"{frame_id}.txt", "detections")
            )
            calib = _load_calibration(calib_path, frame_id)
            intrinsics = calib.intrinsics()
            if sidecar is not None:
                if frame_id not in sidecar:
                    raise _IOFailure(f"frame {frame_id} missing from sidecar")
                estimate = sidecar[frame_id]
            else:
                if frame_id not in horizon:
                    raise _IOFailure(f"frame {frame_id} missing from horizon annotations")
                ann = horizon[frame_id]
                estimate = extrinsics_from_horizon_vp(
                    HorizonLine(slope=ann["slope"], intercept_v=ann["intercept_v"]),
                    VanishingPoint(u=ann["vp_u"], v=ann["vp_v"]),
                    intrinsics,
                )
            rotation = perturbation_matrix(estimate)
            if cfg.direction == "undo":
                rotation = rotation.T
            moved, dropped = transform_labels(labels, intrinsics, rotation)
            error_deg = None
            if truth is not None and frame_id in truth:
                error_deg = angular_error(
                    perturbation_matrix(estimate),
                    perturbation_matrix(truth[frame_id]),
                )
            return (frame_id, moved, dropped, error_deg, None)
        except (CamPerturbError, _IOFailure) as exc:
            return (frame_id, None, 0, None, str(exc))

    results = _parallel_map(process, frame_ids, cfg.jobs)

    processed = 0
    dropped_total = 0
    failures: list[tuple[str, str]] = []
    per_frame_errors: list[tuple[str, float]] = []
    for frame_id, moved, dropped, error_deg, failure in sorted(
        results, key=lambda r: r[0]
    ):
        if failure is not None:
            failures.append((frame_id, failure))
            continue
        try:
            (out_dir / f"{frame_id}.txt").write_bytes(write_label_file(list(moved)))
        except OSError as exc:
            raise _IOFailure(f"cannot write outputs for frame {frame_id}: {exc}") from exc
        processed += 1
        dropped_total += dropped
        if error_deg is not None:
            per_frame_errors.append((frame_id, error_deg))

    print(f"frames processed: {processed}")
    print(f"objects dropped: {dropped_total}")
    print(f"frame failures: {len(failures)}")
    for frame_id, reason in failures:
        print(f"  {frame_id}: {reason}")
    report: dict = {
        "direction": cfg.direction,
        "frames_processed": processed,
        "objects_dropped": dropped_total,
        "failures": [{"frame_id": f, "reason": r} for f, r in failures],
    }
    if per_frame_errors:
        degs = [e for _, e in per_frame_errors]
        mean_deg = sum(degs) / len(degs)
        max_deg = max(degs)
        report["angular_error"] = {
            "per_frame_deg": [
                {"frame_id": f, "deg": e} for f, e in per_frame_errors
            ],
            "mean_deg": mean_deg,
            "mean_rad": math.radians(mean_deg),
            "max_deg": max_deg,
            "max_rad": math.radians(max_deg),
        }
        print(
            f"angular error vs truth: mean {mean_deg:.9f} deg "
            f"({math.radians(mean_deg):.3e} rad), max {max_deg:.9f} deg"
        )
    if cfg.report:
        _emit_report(_json_dumps(report), cfg.report)
    if processed == 0:
        raise _IOFailure("no frame could be processed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# pose-error


_POSE_ERROR_OPTIONS = [
    _Option("est", str, required=True),
    _Option("gt-poses", str, required=True),
    _Option("report", str),
    _Option("format", str, "json"),
]


def _load_estimates(path: Path) -> list[np.ndarray]:
    """Estimated rotations: either a pitch/roll JSON-lines sidecar or a pose file.

    Sidecar entries align with ground-truth pose lines by file order.
    """
    data = _read_bytes(path, "estimates")
    head = data.lstrip()[:1]
    if head == b"{":
        rotations = []
        for line_no, line in enumerate(
            data.decode("utf-8", errors="replace").splitlines(), start=1
        ):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                p = ExtrinsicPerturbation(
                    pitch=float(record["pitch"]), roll=float(record["roll"])
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise _IOFailure(f"estimates {path} line {line_no}: {exc}") from exc
            rotations.append(perturbation_matrix(p))
        return rotations
    return [pose.rotation for pose in parse_odometry_poses(data)]


def cmd_pose_error(args: argparse.Namespace) -> int:
    cfg = _resolve_options(args, _POSE_ERROR_OPTIONS)
    if cfg.format not in ("json", "csv"):
        raise _UsageError(f"--format must be json or csv, got {cfg.format!r}")
    est_path = _require_file(cfg.est, "estimates")
    gt_path = _require_file(cfg.gt_poses, "ground-truth poses")
    estimates = _load_estimates(est_path)
    poses = parse_odometry_poses(_read_bytes(gt_path, "poses"))
    if len(estimates) != len(poses):
        raise _UsageError(
            f"frame count mismatch: {len(estimates)} estimates vs "
            f"{len(poses)} ground-truth poses"
        )
    if not poses:
        raise _UsageError("no poses to compare")
    errors_deg = [
        angular_error(est, pose.rotation) for est, pose in zip(estimates, poses)
    ]
    path_length = 0.0
    for prev, curr in zip(poses, poses[1:]):
        path_length += float(np.linalg.norm(curr.translation - prev.translation))
    mean_deg = sum(errors_deg) / len(errors_deg)
    deg_per_m = (mean_deg / path_length) if path_length > 0 else "n/a"
    report = {
        "frames": len(poses),
        "per_frame_deg": errors_deg,
        "mean_angular_error_deg": mean_deg,
        "mean_angular_error_rad": math.radians(mean_deg),
        "max_angular_error_deg": max(errors_deg),
        "path_length_m": path_length,
        "angular_error_deg_per_m": deg_per_m,
    }
    if cfg.format == "json":
        text = _json_dumps(report)
    else:
        header = ["quantity", "value"]
        rows = [
            ["frames", len(poses)],
            ["mean_angular_error_deg", mean_deg],
            ["mean_angular_error_rad", math.radians(mean_deg)],
            ["max_angular_error_deg", max(errors_deg)],
            ["path_length_m", path_length],
            ["angular_error_deg_per_m", deg_per_m],
        ]
        text = _csv_text(header, rows)
    _emit_report(text, cfg.report)
    return EXIT_OK


# ---------------------------------------------------------------------------
# loss


_LOSS_OPTIONS = [
    _Option("output", str, required=True),
    _Option("content", str, required=True),
    _Option("style", _comma_list, ()),
    _Option("gamma-content", _nonneg_float, 1.0),
    _Option("gamma-style", _nonneg_float, 1.0),
    _Option("grad-check", _parse_bool, False),
    _Option("fd-step", _positive_float, 1e-4),
    _Option("report", str),
]

#: Gradient check probes every coordinate up to this tensor size, then strides.
_GRAD_CHECK_FULL_SIZE = 512
_GRAD_CHECK_SAMPLES = 64


def _finite_difference_check(
    out: FeatureTensor, content: FeatureTensor, styles, gamma_c, gamma_s, step
):
    """Central finite differences vs. analytic gradient on probe coordinates."""
    analytic = loss_gradients(out, content, styles, gamma_c, gamma_s).data
    flat = out.data.ravel()
    size = flat.size
    if size <= _GRAD_CHECK_FULL_SIZE:
        coords = range(size)
    else:
        stride = max(1, size // _GRAD_CHECK_SAMPLES)
        coords = range(0, size, stride)
    fd_values = []
    an_values = []
    for idx in coords:
        h = step * max(1.0, abs(flat[idx]))
        for sign in (+1.0, -1.0):
            data = out.data.copy()
            data.flat[idx] += sign * h
            value = total_loss(
                FeatureTensor(data=data), content, styles, gamma_c, gamma_s
            )
            if sign > 0:
                plus = value
            else:
                minus = value
        fd_values.append((plus - minus) / (2.0 * h))
        an_values.append(float(analytic.flat[idx]))
    fd = np.array(fd_values)
    an = np.array(an_values)
    scale = max(float(np.abs(fd).max()), float(np.abs(an).max()), 1e-12)
    max_rel = float(np.abs(an - fd).max() / scale)
    return {
        "coords_checked": len(fd_values),
        "step": step,
        "max_relative_error": max_rel,
    }


def cmd_loss(args: argparse.Namespace) -> int:
    cfg = _resolve_options(args, _LOSS_OPTIONS)
    out_tensor = load_tensor(_require_file(cfg.output, "output tensor"))
    content_tensor = load_tensor(_require_file(cfg.content, "content tensor"))
    style_tensors = [
        load_tensor(_require_file(p, "style tensor")) for p in cfg.style
    ]
    try:
        content_value = content_loss(out_tensor, content_tensor)
        style_values = [style_loss(out_tensor, s) for s in style_tensors]
        total_value = total_loss(
            out_tensor,
            content_tensor,
            style_tensors,
            cfg.gamma_content,
            cfg.gamma_style,
        )
    except (ShapeMismatch, ChannelMismatch) as exc:
        raise _UsageError(str(exc)) from exc
    report = {
        "content_loss": content_value,
        "style_losses": style_values,
        "style_loss_sum": sum(style_values),
        "total_loss": total_value,
        "gamma_content": cfg.gamma_content,
        "gamma_style": cfg.gamma_style,
    }
    if cfg.grad_check:
        try:
            report["grad_check"] = _finite_difference_check(
                out_tensor,
                content_tensor,
                style_tensors,
                cfg.gamma_content,
                cfg.gamma_style,
                cfg.fd_step,
            )
        except (ShapeMismatch, ChannelMismatch) as exc:
            raise _UsageError(str(exc)) from exc
    _emit_report(_json_dumps(report), cfg.report)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> _Parser:
    parser = _Parser(
        prog="camperturb",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")

    def add_common(p):
        p.add_argument("--config", help="flat key=value config file; flags win")

    sim = sub.add_parser(
        "simulate", help="perturb a labeled dataset with sampled pitch/roll"
    )
    add_common(sim)
    sim.add_argument("--labels", help="directory of KITTI label .txt files")
    sim.add_argument("--calib", help="calibration file, or directory of per-frame files")
    sim.add_argument("--images", help="optional directory of .ppm/.pgm images")
    sim.add_argument("--out", help="output directory")
    sim.add_argument(
        "--sigma-pitch", type=_flag_type(_nonneg_angle),
        help=f"pitch sampling sigma in radians (default {DEFAULT_SIGMA:.6f} = 1 deg)",
    )
    sim.add_argument(
        "--sigma-roll", type=_flag_type(_nonneg_angle),
        help=f"roll sampling sigma in radians (default {DEFAULT_SIGMA:.6f} = 1 deg)",
    )
    sim.add_argument(
        "--clamp", type=_flag_type(_nonneg_angle),
        help=f"symmetric clamp in radians (default {DEFAULT_CLAMP:.6f} = 10 deg)",
    )
    sim.add_argument(
        "--seed", type=_flag_type(_seed_value),
        help=f"unsigned 64-bit seed (default 0); {SEED_ENV_VAR} overrides",
    )
    sim.add_argument(
        "--fill", type=_flag_type(_fill_value),
        help="byte value for out-of-view warp samples (default 0)",
    )
    sim.add_argument("--jobs", type=_flag_type(_jobs_value), help="worker threads")
    sim.set_defaults(handler=cmd_simulate)

    ev = sub.add_parser("evaluate", help="detection metric tables (AP40/AOS/nuScenes)")
    add_common(ev)
    ev.add_argument("--gt", help="ground-truth label directory")
    ev.add_argument("--det", help="detection label directory (16-field files)")
    ev.add_argument(
        "--det-disturbed",
        help="second detection directory: emit original/disturbed/decrease rows",
    )
    ev.add_argument("--out", help="report file (default: stdout)")
    ev.add_argument(
        "--classes", type=_flag_type(_comma_list), help="comma list (default Car)"
    )
    ev.add_argument(
        "--metrics", type=_flag_type(_metric_list),
        help=f"comma list from {{{','.join(_METRIC_CHOICES)}}} (default ap3d)",
    )
    ev.add_argument(
        "--difficulties", type=_flag_type(_difficulty_list),
        help="comma list from {easy,moderate,hard} (default all three)",
    )
    ev.add_argument(
        "--iou-threshold", type=_flag_type(_threshold_value),
        help="IoU threshold for AP/AOS matching (default 0.7)",
    )
    ev.add_argument(
        "--match-radius", type=_flag_type(_positive_float),
        help="BEV center-distance radius in metres for nuscenes (default 2.0)",
    )
    ev.add_argument("--format", choices=("json", "csv"), help="report format")
    ev.add_argument("--jobs", type=_flag_type(_jobs_value), help="worker threads")
    ev.set_defaults(handler=cmd_evaluate)

    rec = sub.add_parser(
        "rectify", help="move detections between viewports given extrinsics"
    )
    add_common(rec)
    rec.add_argument("--det", help="detection label directory")
    rec.add_argument("--calib", help="calibration file, or directory of per-frame files")
    rec.add_argument("--out", help="output label directory")
    rec.add_argument("--sidecar", help="{frame_id,pitch,roll} JSON-lines extrinsics")
    rec.add_argument(
        "--horizon", help="{frame_id,slope,intercept_v,vp_u,vp_v} JSON-lines annotations"
    )
    rec.add_argument(
        "--truth-sidecar",
        help="optional truth extrinsics; reports per-frame angular error",
    )
    rec.add_argument(
        "--direction", choices=("undo", "apply"),
        help="undo: rotate by the inverse (default); apply: rotate forward",
    )
    rec.add_argument("--report", help="optional JSON report file")
    rec.add_argument("--jobs", type=_flag_type(_jobs_value), help="worker threads")
    rec.set_defaults(handler=cmd_rectify)

    pe = sub.add_parser(
        "pose-error", help="angular error of estimated extrinsics vs pose truth"
    )
    add_common(pe)
    pe.add_argument(
        "--est",
        help="estimates: pitch/roll JSON-lines sidecar or 3x4 pose file",
    )
    pe.add_argument("--gt-poses", help="ground-truth 3x4 pose file")
    pe.add_argument("--report", help="report file (default: stdout)")
    pe.add_argument("--format", choices=("json", "csv"), help="report format")
    pe.set_defaults(handler=cmd_pose_error)

    lo = sub.add_parser("loss", help="content/style loss kernels over tensors")
    add_common(lo)
    lo.add_argument("--output", help="serialized output/generated feature tensor")
    lo.add_argument("--content", help="serialized content-target tensor")
    lo.add_argument(
        "--style", type=_flag_type(_comma_list),
        help="comma list of serialized style-target tensors",
    )
    lo.add_argument(
        "--gamma-content", type=_flag_type(_nonneg_float),
        help="content weight (default 1.0)",
    )
    lo.add_argument(
        "--gamma-style", type=_flag_type(_nonneg_float),
        help="style weight (default 1.0)",
    )
    lo.add_argument(
        "--grad-check", action="store_const", const=True,
        help="verify analytic gradients against central finite differences",
    )
    lo.add_argument(
        "--fd-step", type=_flag_type(_positive_float),
        help="finite-difference relative step (default 1e-4)",
    )
    lo.add_argument("--report", help="report file (default: stdout)")
    lo.set_defaults(handler=cmd_loss)

    return parser


def main(argv=None) -> int:
    """Entry point; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "subcommand", None):
            raise _UsageError("a subcommand is required (see --help)")
        return args.handler(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ShapeMismatch, ChannelMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _IOFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except CamPerturbError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


def run() -> None:
    """Console-script wrapper."""
    raise SystemExit(main())


if __name__ == "__main__":
    run()
