"""Deterministic synthetic LiDAR sequences with exact per-point ground truth.

A scene is a ground plane, optional wall slabs, and rigid box instances
(vehicle, pedestrian, cyclist) moving on linear trajectories while the ego
vehicle drives forward. Points are sampled on box faces and the ground with
a radial density profile that is dense near the sensor and sparse far away.
Cyclists are built from two touching primitive boxes (bicycle plus rider)
sharing one instance id, so composite-mask behavior has something real to
chew on.

Every random draw comes from a counter-based generator keyed by
(seed, frame, entity), which makes output independent of generation order
and schedule.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataio
from .dataio import (
    FrameRecord,
    LabelStage,
    PointCloudFrame,
    PredictionSet,
    PseudoLabelSet,
    SequenceManifest,
)
from .errors import SceneSpecError
from .geometry import Calibration, make_pose, project_points
from .maskprovider import Mask2D

CLASS_NAMES = ("vehicle", "pedestrian", "cyclist")

_DEFAULT_EXTENTS = {
    "vehicle": (4.4, 1.9, 1.5),
    "pedestrian": (0.6, 0.6, 1.7),
    "cyclist": (1.9, 0.6, 1.8),
}
_CLEARANCE = 0.5  # gap between box bottom and the ground plane


@dataclass
class InstanceSpec:
    class_name: str
    start_xy: tuple
    yaw: float = 0.0
    velocity: tuple = (0.0, 0.0)
    extents: tuple = None
    instance_id: int = -1

    def __post_init__(self):
        if self.class_name not in CLASS_NAMES:
            raise SceneSpecError(f"unknown class {self.class_name!r}")
        if self.extents is None:
            self.extents = _DEFAULT_EXTENTS[self.class_name]
        if any(e <= 0 for e in self.extents):
            raise SceneSpecError(f"extents must be positive, got {self.extents}")

    def center_at(self, t: float):
        return (
            self.start_xy[0] + self.velocity[0] * t,
            self.start_xy[1] + self.velocity[1] * t,
        )


@dataclass
class WallSpec:
    center_xy: tuple
    length: float
    height: float = 3.0
    yaw: float = 0.0


@dataclass
class SceneSpec:
    seed: int = 0
    num_frames: int = 1
    frame_dt: float = 0.1
    ego_speed: float = 0.5
    ego_yaw_rate: float = 0.0
    image_width: int = 640
    image_height: int = 360
    focal_px: float = 480.0
    camera_height: float = 1.8
    mask_dilation_px: int = 0
    density_at_zero: float = 120.0    # points per m^2 at zero range
    density_falloff: float = 18.0     # range scale of the inverse-square falloff
    background_scale: float = 0.15
    ground_radius: float = 45.0
    ground_min_radius: float = 2.0
    walls: list = field(default_factory=list)
    instances: list = field(default_factory=list)

    def __post_init__(self):
        if self.density_at_zero <= 0 or self.density_falloff <= 0:
            raise SceneSpecError("density profile parameters must be positive")
        if self.background_scale <= 0:
            raise SceneSpecError("background_scale must be positive")
        for i, inst in enumerate(self.instances):
            if inst.instance_id < 0:
                inst.instance_id = i

    def density(self, r) -> np.ndarray:
        """Surface sampling density (points / m^2) at range r from the sensor."""
        r = np.asarray(r, dtype=np.float64)
        return self.density_at_zero / (1.0 + (r / self.density_falloff) ** 2)

    def calibration(self) -> Calibration:
        # camera at the ego origin, camera_height up, optical axis along +x
        rot = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
        center = np.array([0.0, 0.0, self.camera_height])
        ext = np.eye(4)
        ext[:3, :3] = rot
        ext[:3, 3] = -rot @ center
        intr = np.array(
            [
                [self.focal_px, 0.0, self.image_width / 2.0],
                [0.0, self.focal_px, self.image_height / 2.0],
                [0.0, 0.0, 1.0],
            ]
        )
        return Calibration(intr, ext, self.image_width, self.image_height)

    def ego_pose(self, frame_index: int) -> np.ndarray:
        t = frame_index * self.frame_dt
        yaw = self.ego_yaw_rate * t
        return make_pose((self.ego_speed * t, 0.0, 0.0), yaw)


@dataclass
class SyntheticSequence:
    spec: SceneSpec
    manifest: SequenceManifest
    frames: list                # PointCloudFrame per frame (ego coordinates)
    gt_labels: list             # PseudoLabelSet (stage GT) per frame
    gt_masks: dict              # frame_id -> (width, height, [(inst, cls, rle), ...])


def _rng(spec: SceneSpec, frame: int, entity: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=spec.seed, spawn_key=(frame, entity))
    return np.random.Generator(np.random.Philox(seq))


def _box_parts(inst: InstanceSpec):
    """(dx, dy, dz, offset_xyz) primitive boxes making up one instance."""
    ex, ey, ez = inst.extents
    if inst.class_name != "cyclist":
        return [(ex, ey, ez, (0.0, 0.0, 0.0))]
    bike_h = 0.5 * ez
    rider_h = ez - bike_h
    return [
        (ex, 0.6 * ey, bike_h, (0.0, 0.0, 0.0)),
        (0.5 * ex, ey, rider_h, (-0.1 * ex, 0.0, bike_h)),
    ]


def _jittered_face(rng, length_a, length_b, density):
    """Stratified samples over a rectangle: one point per grid cell.

    Keeps the count near area * density while bounding the largest gap, so
    surfaces stay connected under fixed-eps clustering instead of
    fragmenting at random like pure uniform draws would.
    """
    step = 1.0 / np.sqrt(density)
    na = max(1, int(round(length_a / step)))
    nb = max(1, int(round(length_b / step)))
    ia, ib = np.meshgrid(np.arange(na), np.arange(nb), indexing="ij")
    a = (ia.reshape(-1) + rng.uniform(0, 1, na * nb)) * (length_a / na) - 0.5 * length_a
    b = (ib.reshape(-1) + rng.uniform(0, 1, na * nb)) * (length_b / nb) - 0.5 * length_b
    return a, b


def _sample_box_part(rng, density, dx, dy, dz, center_xy, yaw, z_bottom):
    """Sample the four sides and top of one upright box at the given density."""
    cos, sin = np.cos(yaw), np.sin(yaw)
    faces = [("x+", dy, dz), ("x-", dy, dz), ("y+", dx, dz), ("y-", dx, dz), ("top", dx, dy)]
    pts = []
    for name, la, lb in faces:
        a, b = _jittered_face(rng, la, lb, density)
        count = len(a)
        if name == "x+":
            local = np.column_stack([np.full(count, 0.5 * dx), a, b + 0.5 * dz])
        elif name == "x-":
            local = np.column_stack([np.full(count, -0.5 * dx), a, b + 0.5 * dz])
        elif name == "y+":
            local = np.column_stack([a, np.full(count, 0.5 * dy), b + 0.5 * dz])
        elif name == "y-":
            local = np.column_stack([a, np.full(count, -0.5 * dy), b + 0.5 * dz])
        else:
            local = np.column_stack([a, b, np.full(count, dz)])
        world = np.empty_like(local)
        world[:, 0] = center_xy[0] + cos * local[:, 0] - sin * local[:, 1]
        world[:, 1] = center_xy[1] + sin * local[:, 0] + cos * local[:, 1]
        world[:, 2] = z_bottom + local[:, 2]
        pts.append(world)
    return np.vstack(pts)


def _sample_instance(rng, spec, inst, ego_xy, t):
    """World-frame point blocks, one per primitive part of the instance."""
    cx, cy = inst.center_at(t)
    cos, sin = np.cos(inst.yaw), np.sin(inst.yaw)
    parts = []
    for dx, dy, dz, (ox, oy, oz) in _box_parts(inst):
        part_cx = cx + cos * ox - sin * oy
        part_cy = cy + sin * ox + cos * oy
        sensor_range = np.hypot(part_cx - ego_xy[0], part_cy - ego_xy[1])
        pts = _sample_box_part(
            rng, float(spec.density(sensor_range)),
            dx, dy, dz, (part_cx, part_cy), inst.yaw, _CLEARANCE + oz,
        )
        parts.append(pts)
    return parts


def _sample_ground(rng, spec, ego_xy):
    """Annulus-by-annulus sampling so local density follows the profile."""
    edges = np.arange(spec.ground_min_radius, spec.ground_radius + 1.0, 1.0)
    chunks = []
    for r0, r1 in zip(edges[:-1], edges[1:]):
        mid = 0.5 * (r0 + r1)
        area = np.pi * (r1 * r1 - r0 * r0)
        count = int(round(area * float(spec.density(mid)) * spec.background_scale))
        if count <= 0:
            continue
        ang = rng.uniform(0.0, 2.0 * np.pi, size=count)
        rad = np.sqrt(rng.uniform(r0 * r0, r1 * r1, size=count))
        chunks.append(
            np.column_stack(
                [ego_xy[0] + rad * np.cos(ang), ego_xy[1] + rad * np.sin(ang), np.zeros(count)]
            )
        )
    if not chunks:
        return np.empty((0, 3))
    return np.vstack(chunks)


def _sample_wall(rng, spec, wall: WallSpec, ego_xy):
    """Vertical slab sampled per 1 m segment at that segment's range."""
    cos, sin = np.cos(wall.yaw), np.sin(wall.yaw)
    n_seg = max(1, int(np.ceil(wall.length)))
    seg_len = wall.length / n_seg
    chunks = []
    for k in range(n_seg):
        s_mid = -0.5 * wall.length + (k + 0.5) * seg_len
        seg_x = wall.center_xy[0] + cos * s_mid
        seg_y = wall.center_xy[1] + sin * s_mid
        r = np.hypot(seg_x - ego_xy[0], seg_y - ego_xy[1])
        count = int(round(seg_len * wall.height * float(spec.density(r)) * spec.background_scale))
        if count <= 0:
            continue
        s = rng.uniform(s_mid - 0.5 * seg_len, s_mid + 0.5 * seg_len, size=count)
        z = rng.uniform(0.0, wall.height, size=count)
        chunks.append(
            np.column_stack(
                [wall.center_xy[0] + cos * s, wall.center_xy[1] + sin * s, z]
            )
        )
    if not chunks:
        return np.empty((0, 3))
    return np.vstack(chunks)


def _instance_aabb(inst: InstanceSpec, t: float):
    cx, cy = inst.center_at(t)
    ex, ey, _ = inst.extents
    cos, sin = abs(np.cos(inst.yaw)), abs(np.sin(inst.yaw))
    hx = 0.5 * (ex * cos + ey * sin)
    hy = 0.5 * (ex * sin + ey * cos)
    return cx - hx, cy - hy, cx + hx, cy + hy


def _wall_aabb(wall: WallSpec):
    cos, sin = abs(np.cos(wall.yaw)), abs(np.sin(wall.yaw))
    hx = 0.5 * wall.length * cos + 0.25
    hy = 0.5 * wall.length * sin + 0.25
    return (
        wall.center_xy[0] - hx,
        wall.center_xy[1] - hy,
        wall.center_xy[0] + hx,
        wall.center_xy[1] + hy,
    )


def _aabbs_overlap(a, b) -> bool:
    return a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]


def _validate_layout(spec: SceneSpec):
    for f in range(spec.num_frames):
        t = f * spec.frame_dt
        boxes = [_instance_aabb(inst, t) for inst in spec.instances]
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                if _aabbs_overlap(boxes[i], boxes[j]):
                    raise SceneSpecError(
                        f"instances {spec.instances[i].instance_id} and "
                        f"{spec.instances[j].instance_id} overlap at frame {f}"
                    )
            for wall in spec.walls:
                if _aabbs_overlap(boxes[i], _wall_aabb(wall)):
                    raise SceneSpecError(
                        f"instance {spec.instances[i].instance_id} overlaps a wall at frame {f}"
                    )


def _world_to_ego(points_world, pose):
    rot = pose[:3, :3]
    trans = pose[:3, 3]
    return (points_world - trans) @ rot


def _zbuffer_masks(spec, calib, part_slices, pixel_of, depth_of, class_of):
    """Ground-truth masks with contested pixels resolved to the nearest part.

    Foreground instances compete per pixel: the part holding the shallowest
    point owns it. That keeps stored masks disjoint, so a prompt pixel maps
    to exactly one instance, the way a perfect 2D segmenter would see the
    scene. Each part mask then dilates by the configured radius.
    """
    part_ids = []   # (instance_id, class_id, slice) per part, in emit order
    for inst in spec.instances:
        for start, stop in part_slices[inst.instance_id]:
            part_ids.append((inst.instance_id, class_of[inst.class_name], start, stop))

    owner = {}      # pixel id -> (depth, part index)
    for k, (_inst, _cls, start, stop) in enumerate(part_ids):
        for i in range(start, stop):
            pix = pixel_of[i]
            if pix < 0:
                continue
            cur = owner.get(pix)
            if cur is None or depth_of[i] < cur[0]:
                owner[pix] = (depth_of[i], k)

    entries = []
    n_pixels = calib.image_width * calib.image_height
    for k, (inst_id, cls, start, stop) in enumerate(part_ids):
        ids = pixel_of[start:stop]
        ids = ids[ids >= 0]
        ids = np.unique(ids)
        ids = ids[[owner[p][1] == k for p in ids]] if len(ids) else ids
        if len(ids) == 0:
            continue
        flat = np.zeros(n_pixels, dtype=bool)
        flat[ids] = True
        mask = Mask2D.from_bool_array(
            flat.reshape(calib.image_height, calib.image_width)
        ).dilated(spec.mask_dilation_px)
        entries.append((inst_id, cls, mask.to_rle_list()))
    return entries


def generate_sequence(spec: SceneSpec) -> SyntheticSequence:
    """Build the full sequence: frames, GT labels, GT masks, manifest."""
    _validate_layout(spec)
    calib = spec.calibration()
    class_of = {name: i for i, name in enumerate(CLASS_NAMES)}

    frames, gt_labels, gt_masks, records = [], [], {}, []
    for f in range(spec.num_frames):
        frame_id = f"{f:06d}"
        t = f * spec.frame_dt
        pose = spec.ego_pose(f)
        ego_xy = (pose[0, 3], pose[1, 3])

        blocks, classes, instances = [], [], []
        part_slices = {}  # instance_id -> [(start, stop), ...] per part
        cursor = 0

        ground = _sample_ground(_rng(spec, f, 0), spec, ego_xy)
        blocks.append(ground)
        classes.append(np.full(len(ground), -1, dtype=np.int32))
        instances.append(np.full(len(ground), -1, dtype=np.int32))
        cursor += len(ground)

        for w_i, wall in enumerate(spec.walls):
            pts = _sample_wall(_rng(spec, f, 10_000 + w_i), spec, wall, ego_xy)
            blocks.append(pts)
            classes.append(np.full(len(pts), -1, dtype=np.int32))
            instances.append(np.full(len(pts), -1, dtype=np.int32))
            cursor += len(pts)

        for inst in spec.instances:
            rng = _rng(spec, f, 20_000 + inst.instance_id)
            parts = _sample_instance(rng, spec, inst, ego_xy, t)
            slices = []
            for pts in parts:
                blocks.append(pts)
                classes.append(np.full(len(pts), class_of[inst.class_name], dtype=np.int32))
                instances.append(np.full(len(pts), inst.instance_id, dtype=np.int32))
                slices.append((cursor, cursor + len(pts)))
                cursor += len(pts)
            part_slices[inst.instance_id] = slices

        world = np.vstack(blocks) if blocks else np.empty((0, 3))
        points = _world_to_ego(world, pose)
        intensity = _rng(spec, f, 1).uniform(0.0, 1.0, size=len(points)).astype(np.float32)

        frame = PointCloudFrame(
            frame_id=frame_id,
            points=points,
            intensity=intensity,
            pose=pose,
            timestamp=t,
        )
        labels = PseudoLabelSet(
            np.concatenate(classes) if classes else np.empty(0, dtype=np.int32),
            np.concatenate(instances) if instances else np.empty(0, dtype=np.int32),
            np.ones(len(points), dtype=np.float32),
            LabelStage.GT,
        )

        proj_idx, pixels = project_points(points, calib)
        pixel_of = np.full(len(points), -1, dtype=np.int64)
        depth_of = np.full(len(points), np.inf)
        if len(proj_idx):
            cols = np.floor(pixels[:, 0]).astype(np.int64)
            rows = np.floor(pixels[:, 1]).astype(np.int64)
            pixel_of[proj_idx] = rows * calib.image_width + cols
            depth_of[proj_idx] = pixels[:, 2]

        entries = _zbuffer_masks(spec, calib, part_slices, pixel_of, depth_of, class_of)
        gt_masks[frame_id] = (calib.image_width, calib.image_height, entries)

        frames.append(frame)
        gt_labels.append(labels)
        records.append(
            FrameRecord(
                frame_id=frame_id,
                point_file=f"frames/{frame_id}.bin",
                pose=pose,
                timestamp=t,
            )
        )

    manifest = SequenceManifest(
        sequence_id=f"synthetic-{spec.seed}",
        frames=records,
        calibration=calib,
        classes=list(CLASS_NAMES),
    )
    return SyntheticSequence(spec, manifest, frames, gt_labels, gt_masks)


def write_sequence(seq: SyntheticSequence, out_dir) -> None:
    paths = dataio.sequence_paths(out_dir)
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    paths["frames"].mkdir(exist_ok=True)
    paths["gt_labels"].mkdir(exist_ok=True)
    paths["gt_masks"].mkdir(exist_ok=True)
    dataio.write_manifest(paths["manifest"], seq.manifest)
    for frame, labels in zip(seq.frames, seq.gt_labels):
        dataio.write_frame(paths["frames"] / f"{frame.frame_id}.bin", frame)
        dataio.write_labels(paths["gt_labels"] / f"{frame.frame_id}.bin", labels)
    for frame_id, (w, h, entries) in seq.gt_masks.items():
        dataio.write_masks(paths["gt_masks"] / f"{frame_id}.json", w, h, entries)


# ---------------------------------------------------------------------------
# stand-in network outputs


def make_predictions(
    gt: PseudoLabelSet,
    num_classes: int,
    corruption: float,
    seed: int,
    confidence: float = 0.9,
    floor: float = 0.02,
) -> PredictionSet:
    """Per-point score vectors derived from ground truth.

    Foreground points get ``confidence`` on their true class (a ``corruption``
    fraction is flipped to a random wrong class, modelling class confusion of
    a mostly reliable predictor); background stays uniformly low, as a
    calibrated network would keep it.
    """
    n = len(gt.class_ids)
    rng = np.random.default_rng(seed)
    scores = np.full((n, num_classes), floor, dtype=np.float32)
    fg = np.nonzero(gt.class_ids >= 0)[0]
    target = gt.class_ids[fg].astype(np.int64)
    flip = rng.random(len(fg)) < corruption
    offset = rng.integers(1, num_classes, size=len(fg))
    target[flip] = (target[flip] + offset[flip]) % num_classes
    scores[fg, target] = confidence
    return PredictionSet(scores)


def make_predicted_instances(gt: PseudoLabelSet, seed: int, drop_fraction: float = 0.1):
    """High-IoU instance candidates: GT sets with a few points dropped."""
    rng = np.random.default_rng(seed)
    out = []
    for inst in np.unique(gt.instance_ids):
        if inst < 0:
            continue
        member = np.nonzero(gt.instance_ids == inst)[0]
        keep = rng.random(len(member)) >= drop_fraction * rng.random()
        if not keep.any():
            keep[:] = True
        out.append(
            {
                "instance_id": int(inst),
                "class_id": int(gt.class_ids[member[0]]),
                "score": float(rng.uniform(0.7, 0.99)),
                "point_indices": [int(i) for i in member[keep]],
            }
        )
    return out


def corrupt_labels(gt: PseudoLabelSet, fraction: float, num_classes: int, seed: int) -> PseudoLabelSet:
    """Flip the class of a random fraction of points to a different value."""
    rng = np.random.default_rng(seed)
    out = gt.copy(stage=LabelStage.PLG)
    n = len(out.class_ids)
    hit = np.nonzero(rng.random(n) < fraction)[0]
    values = np.arange(-1, num_classes)
    for i in hit:
        choices = values[values != out.class_ids[i]]
        out.class_ids[i] = rng.choice(choices)
    return out


# ---------------------------------------------------------------------------
# randomized scene layouts


def random_scene_spec(
    seed: int,
    n_instances: int = 10,
    num_frames: int = 1,
    with_wall: bool = False,
    moving: bool = False,
    background_scale: float = 0.15,
    class_cycle=("vehicle", "pedestrian", "cyclist"),
) -> SceneSpec:
    """Random non-overlapping layout fully inside the camera frustum.

    ``with_wall`` adds a slab a couple of meters behind the first vehicle, so
    mask bleed has something to leak onto.
    """
    rng = np.random.default_rng(seed)
    spec = SceneSpec(seed=seed, num_frames=num_frames, background_scale=background_scale)
    half_fov = np.arctan((spec.image_width / 2.0) / spec.focal_px)

    placed = []
    instances = []
    attempts = 0
    while len(instances) < n_instances and attempts < 400:
        attempts += 1
        class_name = class_cycle[len(instances) % len(class_cycle)]
        extents = _DEFAULT_EXTENTS[class_name]
        reach = 0.5 * np.hypot(extents[0], extents[1])
        rng_range = rng.uniform(8.0, 26.0)
        max_ang = half_fov - np.arcsin(min(0.9, (reach + 0.5) / rng_range))
        ang = rng.uniform(-max_ang, max_ang)
        cx, cy = rng_range * np.cos(ang), rng_range * np.sin(ang)
        yaw = rng.uniform(-0.15, 0.15)
        inst = InstanceSpec(
            class_name=class_name,
            start_xy=(cx, cy),
            yaw=yaw,
            velocity=tuple(rng.uniform(-0.5, 0.5, size=2)) if moving else (0.0, 0.0),
            instance_id=len(instances),
        )
        horizon = (num_frames - 1) * spec.frame_dt
        boxes = [_instance_aabb(inst, t) for t in (0.0, horizon)]
        grown = [(b[0] - 1.0, b[1] - 1.0, b[2] + 1.0, b[3] + 1.0) for b in boxes]
        if any(
            _aabbs_overlap(g, p) for g in grown for p in placed
        ):
            continue
        placed.extend(grown)
        instances.append(inst)
    if len(instances) < n_instances:
        raise SceneSpecError(
            f"could not place {n_instances} instances without overlap (seed {seed})"
        )
    spec.instances = instances

    if with_wall:
        anchor = next((i for i in instances if i.class_name == "vehicle"), instances[0])
        cx, cy = anchor.start_xy
        r = np.hypot(cx, cy)
        ux, uy = cx / r, cy / r
        gap = 0.5 * max(anchor.extents[:2]) + rng.uniform(1.6, 2.4)
        wall = WallSpec(
            center_xy=(cx + ux * gap, cy + uy * gap),
            length=10.0,
            height=3.2,
            yaw=np.arctan2(uy, ux) + np.pi / 2.0,
        )
        spec.walls = [wall]
        _validate_layout(spec)
    return spec


def camera_visible_points(frame: PointCloudFrame, gt: PseudoLabelSet, calib: Calibration):
    """instance_id -> frame indices of that instance's camera-visible points.

    Visibility matches the ground-truth mask construction: a foreground
    point counts as visible when it projects into the image and its own
    instance owns that pixel in the z-buffer (so points hidden behind a
    nearer instance in image space are not "visible").
    """
    idx, pixels = project_points(frame.points, calib)
    in_image = np.zeros(len(frame.points), dtype=bool)
    in_image[idx] = True
    pixel_of = np.full(len(frame.points), -1, dtype=np.int64)
    depth_of = np.full(len(frame.points), np.inf)
    if len(idx):
        cols = np.floor(pixels[:, 0]).astype(np.int64)
        rows = np.floor(pixels[:, 1]).astype(np.int64)
        pixel_of[idx] = rows * calib.image_width + cols
        depth_of[idx] = pixels[:, 2]

    fg = np.nonzero((gt.instance_ids >= 0) & in_image)[0]
    owner = {}
    for i in fg:
        pix = pixel_of[i]
        cur = owner.get(pix)
        if cur is None or depth_of[i] < cur[0]:
            owner[pix] = (depth_of[i], int(gt.instance_ids[i]))

    out = {}
    for inst in np.unique(gt.instance_ids):
        if inst < 0:
            continue
        member = np.nonzero((gt.instance_ids == inst) & in_image)[0]
        member = member[[owner[pixel_of[i]][1] == int(inst) for i in member]] if len(member) else member
        out[int(inst)] = member
    return out


# ---------------------------------------------------------------------------
# JSON round trip for scene specs


def spec_to_json(spec: SceneSpec) -> dict:
    return {
        "seed": spec.seed,
        "num_frames": spec.num_frames,
        "frame_dt": spec.frame_dt,
        "ego_speed": spec.ego_speed,
        "ego_yaw_rate": spec.ego_yaw_rate,
        "image_width": spec.image_width,
        "image_height": spec.image_height,
        "focal_px": spec.focal_px,
        "camera_height": spec.camera_height,
        "mask_dilation_px": spec.mask_dilation_px,
        "density_at_zero": spec.density_at_zero,
        "density_falloff": spec.density_falloff,
        "background_scale": spec.background_scale,
        "ground_radius": spec.ground_radius,
        "ground_min_radius": spec.ground_min_radius,
        "walls": [
            {
                "center_xy": list(w.center_xy),
                "length": w.length,
                "height": w.height,
                "yaw": w.yaw,
            }
            for w in spec.walls
        ],
        "instances": [
            {
                "class_name": i.class_name,
                "start_xy": list(i.start_xy),
                "yaw": i.yaw,
                "velocity": list(i.velocity),
                "extents": list(i.extents),
                "instance_id": i.instance_id,
            }
            for i in spec.instances
        ],
    }


def spec_from_json(doc: dict) -> SceneSpec:
    walls = [WallSpec(tuple(w["center_xy"]), w["length"], w.get("height", 3.0), w.get("yaw", 0.0)) for w in doc.get("walls", [])]
    instances = [
        InstanceSpec(
            class_name=i["class_name"],
            start_xy=tuple(i["start_xy"]),
            yaw=i.get("yaw", 0.0),
            velocity=tuple(i.get("velocity", (0.0, 0.0))),
            extents=tuple(i["extents"]) if i.get("extents") else None,
            instance_id=i.get("instance_id", -1),
        )
        for i in doc.get("instances", [])
    ]
    kwargs = {
        k: doc[k]
        for k in (
            "seed", "num_frames", "frame_dt", "ego_speed", "ego_yaw_rate",
            "image_width", "image_height", "focal_px", "camera_height",
            "mask_dilation_px", "density_at_zero", "density_falloff",
            "background_scale", "ground_radius", "ground_min_radius",
        )
        if k in doc
    }
    return SceneSpec(walls=walls, instances=instances, **kwargs)


def load_scene_spec(path) -> SceneSpec:
    return spec_from_json(json.loads(Path(path).read_text()))


def save_scene_spec(spec: SceneSpec, path) -> None:
    Path(path).write_text(json.dumps(spec_to_json(spec), indent=2))
