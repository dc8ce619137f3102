"""Shared factories for test fixtures: labels, boxes, frames, datasets."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from camperturb import (
    Box3D,
    CameraIntrinsics,
    CameraPoint,
    DetectionFrame,
    ObjectLabel,
    SceneFrame,
    project,
    write_label_file,
)

DEFAULT_K = CameraIntrinsics(fx=700.0, fy=700.0, cx=600.0, cy=180.0)


def make_box(
    x: float = 0.0,
    y: float = 1.65,
    z: float = 20.0,
    height: float = 1.5,
    width: float = 1.6,
    length: float = 3.9,
    yaw: float = 0.0,
) -> Box3D:
    return Box3D(
        center=CameraPoint(x, y, z),
        height=height,
        width=width,
        length=length,
        yaw=yaw,
    )


def bbox_from_box(k: CameraIntrinsics, box: Box3D) -> tuple[float, float, float, float]:
    """Axis-aligned image hull of the projected 3D corners."""
    from camperturb import box_corners

    corners = box_corners(box)
    us, vs = [], []
    for corner in corners:
        pt = project(k, CameraPoint(*corner))
        us.append(pt.u)
        vs.append(pt.v)
    return min(us), min(vs), max(us), max(vs)


def make_label(
    class_name: str = "Car",
    box: Box3D | None = None,
    k: CameraIntrinsics = DEFAULT_K,
    truncated: float = 0.0,
    occluded: int = 0,
    score: float | None = None,
    bbox: tuple[float, float, float, float] | None = None,
    alpha: float | None = None,
) -> ObjectLabel:
    if box is None:
        box = make_box()
    if bbox is None:
        bbox = bbox_from_box(k, box)
    if alpha is None:
        alpha = _wrap(box.yaw - math.atan2(box.center.x, box.center.z))
    return ObjectLabel(
        class_name=class_name,
        truncated=truncated,
        occluded=occluded,
        alpha=alpha,
        bbox_left=bbox[0],
        bbox_top=bbox[1],
        bbox_right=bbox[2],
        bbox_bottom=bbox[3],
        height=box.height,
        width=box.width,
        length=box.length,
        x=box.center.x,
        y=box.center.y,
        z=box.center.z,
        rotation_y=box.yaw,
        score=score,
    )


def _wrap(angle: float) -> float:
    return (angle + math.pi) % (2.0 * math.pi) - math.pi


def with_score(label: ObjectLabel, score: float) -> ObjectLabel:
    import dataclasses

    return dataclasses.replace(label, score=score)


def detection_frame(
    gt: list[ObjectLabel], det: list[ObjectLabel], frame_id: str = "000000"
) -> DetectionFrame:
    return DetectionFrame(frame_id=frame_id, ground_truth=tuple(gt), detections=tuple(det))


CALIB_TEXT = (
    "P0: 700 0 600 0 0 700 180 0 0 0 1 0\n"
    "P2: 700 0 600 0 0 700 180 0 0 0 1 0\n"
)


def write_calib(path: Path, text: str = CALIB_TEXT) -> None:
    path.write_bytes(text.encode("ascii"))


def desk_scene_frames(
    n_frames: int = 60,
    k: CameraIntrinsics = DEFAULT_K,
    image_size: tuple[int, int] = (1242, 375),
) -> list[SceneFrame]:
    """Synthetic street scenes: each frame carries 3-5 cars at varied depths.

    Geometry is chosen so boxes stay well inside the frustum and image
    bounds under perturbations of a few degrees.
    """
    rng = np.random.default_rng(20240817)
    frames = []
    for i in range(n_frames):
        n_boxes = 3 + int(rng.integers(0, 3))
        labels = []
        for _ in range(n_boxes):
            box = make_box(
                x=float(rng.uniform(-4.0, 4.0)),
                y=1.65,
                z=float(rng.uniform(9.0, 28.0)),
                height=float(rng.uniform(1.4, 1.8)),
                width=float(rng.uniform(1.5, 1.8)),
                length=float(rng.uniform(3.4, 4.4)),
                yaw=float(rng.uniform(-math.pi, math.pi)),
            )
            labels.append(make_label("Car", box, k=k))
        frames.append(
            SceneFrame(
                frame_id=f"{i:06d}",
                intrinsics=k,
                labels=tuple(labels),
                image_size=image_size,
            )
        )
    return frames


def write_kitti_dataset(
    root: Path,
    frames: list[SceneFrame],
    calib_text: str = CALIB_TEXT,
    scores: bool = False,
) -> tuple[Path, Path]:
    """Write frames as a label dir + calib dir; returns (label_dir, calib_dir).

    Labels pass through the package writer so fixed-point quantization is
    applied once, exactly as a real dataset on disk would have it.
    """
    import dataclasses

    label_dir = root / "label_2"
    calib_dir = root / "calib"
    label_dir.mkdir(parents=True, exist_ok=True)
    calib_dir.mkdir(parents=True, exist_ok=True)
    for frame in frames:
        labels = list(frame.labels)
        if scores:
            labels = [dataclasses.replace(lab, score=0.9) for lab in labels]
        (label_dir / f"{frame.frame_id}.txt").write_bytes(write_label_file(labels))
        write_calib(calib_dir / f"{frame.frame_id}.txt", calib_text)
    return label_dir, calib_dir


def reload_frames(
    label_dir: Path, calib_dir: Path, image_size: tuple[int, int] = (1242, 375)
) -> list[SceneFrame]:
    """Read a written dataset back into SceneFrames (quantized ground truth)."""
    from camperturb import parse_calib_file, parse_label_file

    frames = []
    for label_path in sorted(label_dir.glob("*.txt")):
        frame_id = label_path.stem
        labels = parse_label_file(label_path.read_bytes())
        calib = parse_calib_file((calib_dir / f"{frame_id}.txt").read_bytes())
        frames.append(
            SceneFrame(
                frame_id=frame_id,
                intrinsics=calib.intrinsics(),
                labels=tuple(labels),
                image_size=image_size,
            )
        )
    return frames
