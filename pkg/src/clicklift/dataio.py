"""On-disk formats: binary per-point payloads plus JSON metadata.

Binary layouts (everything little-endian):

* frame file     -- magic ``YOCL``, u32 point count, then per point
                    float32 x, y, z, intensity (16 bytes/point).
* label file     -- u32 point count, u8 stage, then per point
                    int32 class_id, int32 instance_id, float32 confidence.
* prediction file-- u32 point count, u16 class count, then float32 scores
                    row-major (count x num).

Metadata (manifests, clicks, masks, predicted instances, configs) is UTF-8
JSON. Readers raise FormatError with a byte offset instead of crashing on
malformed input.
"""
import json
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError
from .geometry import Calibration

FRAME_MAGIC = b"YOCL"


class LabelStage(Enum):
    """Provenance of a label set. GT is reserved for synthetic ground truth."""

    GT = 0
    PLG = 1
    TSU = 2
    ILE = 3


@dataclass
class PointCloudFrame:
    """One LiDAR sweep in its own ego frame."""

    frame_id: str
    points: np.ndarray            # (N, 3) float64
    intensity: np.ndarray         # (N,) float32
    pose: np.ndarray = None       # (4, 4) ego -> world
    timestamp: float = 0.0

    @property
    def num_points(self) -> int:
        return len(self.points)


@dataclass
class PseudoLabelSet:
    """Per-point class / instance / confidence plus the producing stage."""

    class_ids: np.ndarray         # (N,) int32, -1 = ignored
    instance_ids: np.ndarray      # (N,) int32, -1 = none
    confidence: np.ndarray        # (N,) float32 in [0, 1]
    stage: LabelStage

    def __post_init__(self):
        self.class_ids = np.asarray(self.class_ids, dtype=np.int32)
        self.instance_ids = np.asarray(self.instance_ids, dtype=np.int32)
        self.confidence = np.asarray(self.confidence, dtype=np.float32)
        n = len(self.class_ids)
        if len(self.instance_ids) != n or len(self.confidence) != n:
            raise InputError("label arrays must share one length")

    def copy(self, stage=None) -> "PseudoLabelSet":
        return PseudoLabelSet(
            self.class_ids.copy(),
            self.instance_ids.copy(),
            self.confidence.copy(),
            stage if stage is not None else self.stage,
        )

    @classmethod
    def empty(cls, n: int, stage: LabelStage) -> "PseudoLabelSet":
        return cls(
            np.full(n, -1, dtype=np.int32),
            np.full(n, -1, dtype=np.int32),
            np.zeros(n, dtype=np.float32),
            stage,
        )


@dataclass
class PredictionSet:
    """Per-point class-confidence vectors standing in for network outputs."""

    scores: np.ndarray            # (N, num) float32 in [0, 1]

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float32)
        if self.scores.ndim != 2:
            raise InputError(f"scores must be (N, num), got {self.scores.shape}")

    @property
    def num_classes(self) -> int:
        return self.scores.shape[1]


@dataclass
class FrameRecord:
    frame_id: str
    point_file: str
    pose: np.ndarray
    timestamp: float


@dataclass
class SequenceManifest:
    sequence_id: str
    frames: list
    calibration: Calibration
    classes: list = field(default_factory=list)

    def __post_init__(self):
        ids = [f.frame_id for f in self.frames]
        if len(set(ids)) != len(ids):
            raise InputError("frame ids must be unique")
        times = [f.timestamp for f in self.frames]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise InputError("frame timestamps must be strictly increasing")

    def frame_index(self, frame_id: str) -> int:
        for i, f in enumerate(self.frames):
            if f.frame_id == frame_id:
                return i
        raise KeyError(frame_id)


@dataclass
class ClickAnnotation:
    """A single BEV click bound to one instance of one frame."""

    frame_id: str
    instance_id: int
    class_id: int
    bev: tuple                    # (x, y) meters
    resolved_point_index: int = None


# ---------------------------------------------------------------------------
# binary payloads


def _read_exact(fh, n, path, offset, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(
            f"truncated {what}: wanted {n} bytes, got {len(buf)}",
            path=path,
            offset=offset,
        )
    return buf


def write_frame(path, frame: PointCloudFrame) -> None:
    points = np.asarray(frame.points, dtype=np.float32)
    intensity = np.asarray(frame.intensity, dtype=np.float32)
    if len(intensity) != len(points):
        raise InputError("intensity length must match point count")
    payload = np.column_stack([points, intensity]).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(FRAME_MAGIC)
        fh.write(struct.pack("<I", len(points)))
        fh.write(payload.tobytes())


def read_frame(path, frame_id=None, pose=None, timestamp=0.0) -> PointCloudFrame:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, path, 0, "frame header")
        if magic != FRAME_MAGIC:
            raise FormatError(
                f"bad magic {magic!r}, expected {FRAME_MAGIC!r}", path=path, offset=0
            )
        count = struct.unpack("<I", _read_exact(fh, 4, path, 4, "point count"))[0]
        raw = fh.read()
    expected = count * 16
    if len(raw) != expected:
        raise FormatError(
            f"point payload is {len(raw)} bytes, header count {count} implies {expected}",
            path=path,
            offset=8 + min(len(raw), expected),
        )
    data = np.frombuffer(raw, dtype="<f4").reshape(count, 4)
    return PointCloudFrame(
        frame_id=frame_id if frame_id is not None else path.stem,
        points=data[:, :3].astype(np.float64),
        intensity=data[:, 3].copy(),
        pose=pose,
        timestamp=timestamp,
    )


def write_labels(path, labels: PseudoLabelSet) -> None:
    n = len(labels.class_ids)
    rec = np.empty(n, dtype=[("cls", "<i4"), ("inst", "<i4"), ("conf", "<f4")])
    rec["cls"] = labels.class_ids
    rec["inst"] = labels.instance_ids
    rec["conf"] = labels.confidence
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", n))
        fh.write(struct.pack("<B", labels.stage.value))
        fh.write(rec.tobytes())


def read_labels(path) -> PseudoLabelSet:
    path = Path(path)
    with open(path, "rb") as fh:
        count = struct.unpack("<I", _read_exact(fh, 4, path, 0, "label count"))[0]
        stage_byte = struct.unpack("<B", _read_exact(fh, 1, path, 4, "stage byte"))[0]
        raw = fh.read()
    try:
        stage = LabelStage(stage_byte)
    except ValueError:
        raise FormatError(f"unknown stage byte {stage_byte}", path=path, offset=4)
    expected = count * 12
    if len(raw) != expected:
        raise FormatError(
            f"label payload is {len(raw)} bytes, header count {count} implies {expected}",
            path=path,
            offset=5 + min(len(raw), expected),
        )
    rec = np.frombuffer(raw, dtype=[("cls", "<i4"), ("inst", "<i4"), ("conf", "<f4")])
    return PseudoLabelSet(
        rec["cls"].copy(), rec["inst"].copy(), rec["conf"].copy(), stage
    )


def write_predictions(path, preds: PredictionSet) -> None:
    n, num = preds.scores.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<IH", n, num))
        fh.write(preds.scores.astype("<f4").tobytes())


def read_predictions(path) -> PredictionSet:
    path = Path(path)
    with open(path, "rb") as fh:
        head = _read_exact(fh, 6, path, 0, "prediction header")
        count, num = struct.unpack("<IH", head)
        raw = fh.read()
    expected = count * num * 4
    if len(raw) != expected:
        raise FormatError(
            f"score payload is {len(raw)} bytes, header implies {expected}",
            path=path,
            offset=6 + min(len(raw), expected),
        )
    scores = np.frombuffer(raw, dtype="<f4").reshape(count, num)
    return PredictionSet(scores.copy())


# ---------------------------------------------------------------------------
# JSON metadata


def write_manifest(path, manifest: SequenceManifest) -> None:
    doc = {
        "sequence_id": manifest.sequence_id,
        "classes": list(manifest.classes),
        "calibration": {
            "intrinsic": manifest.calibration.intrinsic.reshape(-1).tolist(),
            "extrinsic": manifest.calibration.extrinsic.reshape(-1).tolist(),
            "image_width": manifest.calibration.image_width,
            "image_height": manifest.calibration.image_height,
        },
        "frames": [
            {
                "frame_id": f.frame_id,
                "point_file": f.point_file,
                "pose": np.asarray(f.pose, dtype=np.float64).reshape(-1).tolist(),
                "timestamp": f.timestamp,
            }
            for f in manifest.frames
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2))


def read_manifest(path) -> SequenceManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest is not valid JSON: {exc}", path=path) from exc
    try:
        calib = Calibration(
            intrinsic=np.array(doc["calibration"]["intrinsic"]).reshape(3, 3),
            extrinsic=np.array(doc["calibration"]["extrinsic"]).reshape(4, 4),
            image_width=doc["calibration"]["image_width"],
            image_height=doc["calibration"]["image_height"],
        )
        frames = [
            FrameRecord(
                frame_id=f["frame_id"],
                point_file=f["point_file"],
                pose=np.array(f["pose"], dtype=np.float64).reshape(4, 4),
                timestamp=float(f["timestamp"]),
            )
            for f in doc["frames"]
        ]
        return SequenceManifest(
            sequence_id=doc["sequence_id"],
            frames=frames,
            calibration=calib,
            classes=list(doc["classes"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"manifest field error: {exc}", path=path) from exc


def write_clicks(path, clicks) -> None:
    lines = [
        json.dumps(
            {
                "frame_id": c.frame_id,
                "instance_id": int(c.instance_id),
                "class_id": int(c.class_id),
                "bev": [float(c.bev[0]), float(c.bev[1])],
            }
        )
        for c in clicks
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_clicks(path):
    path = Path(path)
    clicks = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
            clicks.append(
                ClickAnnotation(
                    frame_id=doc["frame_id"],
                    instance_id=int(doc["instance_id"]),
                    class_id=int(doc["class_id"]),
                    bev=(float(doc["bev"][0]), float(doc["bev"][1])),
                )
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError, IndexError) as exc:
            raise FormatError(f"bad click on line {lineno}: {exc}", path=path) from exc
    return clicks


def write_masks(path, width, height, entries) -> None:
    """entries: iterable of (instance_id, class_id, rle-list [start, len, ...])."""
    doc = {
        "width": int(width),
        "height": int(height),
        "instances": [
            {
                "instance_id": int(inst),
                "class_id": int(cls),
                "rle": [int(v) for v in rle],
            }
            for inst, cls, rle in entries
        ],
    }
    Path(path).write_text(json.dumps(doc))


def read_masks(path):
    """Returns (width, height, [(instance_id, class_id, rle-list), ...])."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
        width, height = int(doc["width"]), int(doc["height"])
        entries = [
            (int(e["instance_id"]), int(e["class_id"]), [int(v) for v in e["rle"]])
            for e in doc["instances"]
        ]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad mask file: {exc}", path=path) from exc
    return width, height, entries


def write_predicted_instances(path, instances) -> None:
    """instances: iterable of dicts {instance_id, class_id, score, point_indices}."""
    doc = [
        {
            "instance_id": int(e["instance_id"]),
            "class_id": int(e["class_id"]),
            "score": float(e["score"]),
            "point_indices": [int(i) for i in e["point_indices"]],
        }
        for e in instances
    ]
    Path(path).write_text(json.dumps(doc))


def read_predicted_instances(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
        return [
            {
                "instance_id": int(e["instance_id"]),
                "class_id": int(e["class_id"]),
                "score": float(e["score"]),
                "point_indices": [int(i) for i in e["point_indices"]],
            }
            for e in doc
        ]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad predicted-instance file: {exc}", path=path) from exc


# ---------------------------------------------------------------------------
# sequence-directory conventions


def sequence_paths(seq_dir):
    """Canonical layout of a generated sequence directory."""
    seq_dir = Path(seq_dir)
    return {
        "manifest": seq_dir / "manifest.json",
        "frames": seq_dir / "frames",
        "gt_labels": seq_dir / "gt_labels",
        "gt_masks": seq_dir / "gt_masks",
        "predictions": seq_dir / "predictions",
        "pred_instances": seq_dir / "pred_instances",
        "clicks": seq_dir / "clicks.jsonl",
    }


def load_sequence(seq_dir):
    """Read manifest plus every frame (points, pose, timestamp) of a sequence."""
    paths = sequence_paths(seq_dir)
    manifest = read_manifest(paths["manifest"])
    frames = []
    for rec in manifest.frames:
        frame = read_frame(
            Path(seq_dir) / rec.point_file,
            frame_id=rec.frame_id,
            pose=rec.pose,
            timestamp=rec.timestamp,
        )
        frames.append(frame)
    return manifest, frames
