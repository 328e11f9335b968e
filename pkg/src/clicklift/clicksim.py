"""Simulated manual clicks: one BEV click per instance, with optional error radius.

With a zero error range the click lands on the instance point nearest the
BEV centroid. A positive error range draws uniformly among the instance
points whose BEV distance to the centroid is at most that radius, modelling
an annotator clicking anywhere inside a disc around the instance center.
"""
import zlib

import numpy as np

from .dataio import ClickAnnotation, LabelStage
from .errors import InputError
from .geometry import bev_centroid, bev_distances


def pick_click_point(instance_points, error_range: float, seed: int) -> int:
    """Index (into ``instance_points``) of the simulated click point.

    error_range == 0 picks the point with minimal BEV distance to the
    centroid, ties broken by lowest index. error_range > 0 samples uniformly
    among the points within the disc, falling back to the nearest point when
    the disc is empty. Deterministic for a fixed seed.
    """
    pts = np.asarray(instance_points, dtype=np.float64)
    if pts.ndim != 2 or len(pts) == 0:
        raise InputError("instance must have at least one point")
    if error_range < 0:
        raise InputError(f"error_range must be >= 0, got {error_range}")
    center = bev_centroid(pts)
    dists = bev_distances(pts, center)
    if error_range == 0:
        return int(np.argmin(dists))
    inside = np.nonzero(dists <= error_range)[0]
    if len(inside) == 0:
        return int(np.argmin(dists))
    rng = np.random.default_rng(seed)
    return int(inside[rng.integers(len(inside))])


def simulate_click(
    instance_points,
    error_range: float,
    seed: int,
    frame_id: str = "",
    instance_id: int = -1,
    class_id: int = 0,
) -> ClickAnnotation:
    """Simulate the click for one instance; bev is the chosen point's (x, y)."""
    pts = np.asarray(instance_points, dtype=np.float64)
    local = pick_click_point(pts, error_range, seed)
    return ClickAnnotation(
        frame_id=frame_id,
        instance_id=instance_id,
        class_id=class_id,
        bev=(float(pts[local, 0]), float(pts[local, 1])),
        resolved_point_index=local,
    )


def simulate_frame_clicks(frame, gt_labels, error_range: float, seed: int):
    """One click per instance present in the frame's ground-truth labels.

    The returned annotations carry frame-level resolved point indices.
    Instances are visited in ascending id order; each gets an independent
    sub-seed so insertion order cannot change any draw.
    """
    if gt_labels.stage is not LabelStage.GT:
        raise InputError("frame clicks are simulated from ground-truth labels")
    clicks = []
    inst_ids = np.unique(gt_labels.instance_ids)
    for inst in inst_ids[inst_ids >= 0]:
        member = np.nonzero(gt_labels.instance_ids == inst)[0]
        class_id = int(gt_labels.class_ids[member[0]])
        sub_seed = np.random.SeedSequence(
            entropy=seed,
            spawn_key=(zlib.crc32(frame.frame_id.encode()), int(inst)),
        ).generate_state(1)[0]
        local = pick_click_point(frame.points[member], error_range, int(sub_seed))
        frame_index = int(member[local])
        clicks.append(
            ClickAnnotation(
                frame_id=frame.frame_id,
                instance_id=int(inst),
                class_id=class_id,
                bev=(
                    float(frame.points[frame_index, 0]),
                    float(frame.points[frame_index, 1]),
                ),
                resolved_point_index=frame_index,
            )
        )
    return clicks
