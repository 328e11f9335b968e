"""Stage orchestration: label generation -> voting update -> enhancement -> eval.

Each stage reads the previous stage's label files from the output directory
and overwrites its own deterministically, so re-runs with a fixed seed are
byte-identical. Frames are independent inside every stage, which lets the
generation stage fan out over a thread pool without changing any output.
"""
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataio, ile, metrics, plg, synthgen, tsu
from .dataio import LabelStage, PseudoLabelSet
from .errors import ConfigError, InputError
from .geometry import point_ranges, project_points
from .maskprovider import FileBackedProvider, SyntheticOracleProvider

log = logging.getLogger("clicklift.pipeline")

STAGES = ("plg", "tsu", "ile", "eval")


@dataclass
class PipelineConfig:
    sequence_dir: str
    output_dir: str
    clicks_path: str = None              # default: <sequence_dir>/clicks.jsonl
    predictions_dir: str = None          # default: <sequence_dir>/predictions
    pred_instances_dir: str = None       # default: <sequence_dir>/pred_instances
    masks: dict = field(
        default_factory=lambda: {"provider": "oracle", "bleed_pixels": 0, "composite_merge": True}
    )
    constraints: plg.GeometricConstraints = field(default_factory=plg.default_constraints)
    tsu_config: tsu.TsuConfig = field(default_factory=tsu.TsuConfig)
    ile_config: ile.IleConfig = field(default_factory=ile.IleConfig)
    iou_thresholds: tuple = metrics.DEFAULT_THRESHOLDS
    max_prompts: int = 5
    prompt_radius: float = 0.1
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        seq = Path(self.sequence_dir)
        if self.clicks_path is None:
            self.clicks_path = str(seq / "clicks.jsonl")
        if self.predictions_dir is None:
            self.predictions_dir = str(seq / "predictions")
        if self.pred_instances_dir is None:
            self.pred_instances_dir = str(seq / "pred_instances")

    @classmethod
    def from_json(cls, doc: dict) -> "PipelineConfig":
        kwargs = {
            k: doc[k]
            for k in (
                "sequence_dir", "output_dir", "clicks_path", "predictions_dir",
                "pred_instances_dir", "masks", "max_prompts", "prompt_radius",
                "seed", "workers",
            )
            if k in doc
        }
        if "constraints" in doc:
            c = doc["constraints"]
            kwargs["constraints"] = (
                plg.load_constraints(c) if isinstance(c, str) else plg.constraints_from_json(c)
            )
        if "tsu" in doc:
            kwargs["tsu_config"] = tsu.TsuConfig(**doc["tsu"])
        if "ile" in doc:
            kwargs["ile_config"] = ile.IleConfig(**doc["ile"])
        if "iou_thresholds" in doc:
            kwargs["iou_thresholds"] = tuple(doc["iou_thresholds"])
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.from_json(json.loads(Path(path).read_text()))


def _require(path, stage, what):
    if not Path(path).exists():
        raise InputError(f"stage {stage!r} needs {what} at {path}, which does not exist")
    return Path(path)


def _label_dir(cfg, stage: str) -> Path:
    return Path(cfg.output_dir) / f"labels_{stage}"


def make_provider(cfg: PipelineConfig):
    doc = cfg.masks
    kind = doc.get("provider", "oracle")
    if kind == "oracle":
        masks_dir = _require(
            dataio.sequence_paths(cfg.sequence_dir)["gt_masks"], "plg", "ground-truth masks"
        )
        mask_docs = {
            p.stem: dataio.read_masks(p) for p in sorted(masks_dir.glob("*.json"))
        }
        return SyntheticOracleProvider.from_mask_files(
            mask_docs,
            bleed_pixels=int(doc.get("bleed_pixels", 0)),
            composite_merge=bool(doc.get("composite_merge", True)),
        )
    if kind == "files":
        masks_dir = _require(doc["path"], "plg", "mask files")
        mask_docs = {
            p.stem: dataio.read_masks(p) for p in sorted(masks_dir.glob("*.json"))
        }
        return FileBackedProvider(mask_docs)
    raise ConfigError(f"unknown mask provider {kind!r}")


def _previous_labels(cfg, stage: str, frame_ids, frame_sizes):
    """Labels produced by the nearest earlier stage, or all-ignored sets."""
    order = {"tsu": ["plg"], "ile": ["tsu", "plg"], "eval": ["ile", "tsu", "plg"]}
    for earlier in order.get(stage, []):
        directory = _label_dir(cfg, earlier)
        if directory.exists():
            return [
                dataio.read_labels(directory / f"{fid}.bin") for fid in frame_ids
            ], earlier
    if stage == "eval":
        raise InputError(
            f"stage 'eval' found no label files under {cfg.output_dir} "
            "(run plg/tsu/ile first)"
        )
    return [
        PseudoLabelSet.empty(n, LabelStage.PLG) for n in frame_sizes
    ], None


def run_plg_stage(cfg: PipelineConfig, manifest, frames):
    provider = make_provider(cfg)
    clicks_path = _require(cfg.clicks_path, "plg", "click annotations")
    clicks = dataio.read_clicks(clicks_path)
    by_frame = {}
    for c in clicks:
        by_frame.setdefault(c.frame_id, []).append(c)

    out_dir = _label_dir(cfg, "plg")
    out_dir.mkdir(parents=True, exist_ok=True)
    outcomes = []

    def _one_frame(frame):
        projections = project_points(frame.points, manifest.calibration)
        labels = PseudoLabelSet.empty(len(frame.points), LabelStage.PLG)
        frame_outcomes = []
        for click in by_frame.get(frame.frame_id, []):
            outcome = plg.generate_pseudo_label(
                frame,
                click,
                provider,
                cfg.constraints,
                manifest.calibration,
                max_prompts=cfg.max_prompts,
                prompt_radius=cfg.prompt_radius,
                projections=projections,
            )
            if outcome.accepted:
                labels.class_ids[outcome.indices] = click.class_id
                labels.instance_ids[outcome.indices] = click.instance_id
                labels.confidence[outcome.indices] = 1.0
            frame_outcomes.append(
                {
                    "frame_id": frame.frame_id,
                    "instance_id": click.instance_id,
                    "class_id": click.class_id,
                    "accepted": outcome.accepted,
                    "reason": outcome.reason,
                    "prompts_tried": outcome.prompts_tried,
                    "label_points": int(len(outcome.indices)),
                }
            )
        return frame, labels, frame_outcomes

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_one_frame, frames))
    else:
        results = [_one_frame(f) for f in frames]

    for frame, labels, frame_outcomes in results:
        dataio.write_labels(out_dir / f"{frame.frame_id}.bin", labels)
        outcomes.extend(frame_outcomes)
    (Path(cfg.output_dir) / "plg_outcomes.json").write_text(json.dumps(outcomes, indent=2))
    accepted = sum(1 for o in outcomes if o["accepted"])
    log.info("plg: %d/%d clicks accepted", accepted, len(outcomes))


def run_tsu_stage(cfg: PipelineConfig, manifest, frames):
    pred_dir = _require(cfg.predictions_dir, "tsu", "prediction files")
    frame_ids = [f.frame_id for f in frames]
    previous, _ = _previous_labels(cfg, "tsu", frame_ids, [len(f.points) for f in frames])
    preds = []
    for fid in frame_ids:
        preds.append(dataio.read_predictions(_require(pred_dir / f"{fid}.bin", "tsu", "predictions")))

    out_dir = _label_dir(cfg, "tsu")
    out_dir.mkdir(parents=True, exist_ok=True)
    n_adj = cfg.tsu_config.n_adjacent
    for t, frame in enumerate(frames):
        adjacent = [
            (frames[a], preds[a], frames[a].pose)
            for a in range(max(0, t - n_adj), t)
        ]
        space = tsu.build_voting_space(adjacent, frame.pose, cfg.tsu_config)
        updated = tsu.update_labels(frame, previous[t], space, cfg.tsu_config)
        dataio.write_labels(out_dir / f"{frame.frame_id}.bin", updated)
    log.info("tsu: updated %d frames (n_adjacent=%d)", len(frames), n_adj)


def run_ile_stage(cfg: PipelineConfig, manifest, frames):
    inst_dir = _require(cfg.pred_instances_dir, "ile", "predicted instances")
    frame_ids = [f.frame_id for f in frames]
    previous, _ = _previous_labels(cfg, "ile", frame_ids, [len(f.points) for f in frames])

    out_dir = _label_dir(cfg, "ile")
    out_dir.mkdir(parents=True, exist_ok=True)
    replaced_total = 0
    for t, frame in enumerate(frames):
        labels = previous[t].copy(stage=LabelStage.ILE)
        path = inst_dir / f"{frame.frame_id}.json"
        candidates_doc = dataio.read_predicted_instances(path) if path.exists() else []
        ranges = point_ranges(frame.points)
        out = labels.copy(stage=LabelStage.ILE)
        for inst in np.unique(labels.instance_ids):
            if inst < 0:
                continue
            member = np.nonzero(labels.instance_ids == inst)[0]
            class_id = int(labels.class_ids[member[0]])
            candidates = [
                ile.PredictedInstance(np.asarray(d["point_indices"]), d["score"])
                for d in candidates_doc
                if d["class_id"] == class_id
            ]
            new_indices, replaced = ile.ile_update(
                member, candidates, float(ranges[member].mean()), cfg.ile_config
            )
            if replaced:
                replaced_total += 1
                score = next(
                    d["score"]
                    for d in candidates_doc
                    if d["class_id"] == class_id
                    and np.array_equal(
                        np.unique(np.asarray(d["point_indices"])), new_indices
                    )
                )
                out.class_ids[member] = -1
                out.instance_ids[member] = -1
                out.confidence[member] = 0.0
                out.class_ids[new_indices] = class_id
                out.instance_ids[new_indices] = inst
                out.confidence[new_indices] = score
        dataio.write_labels(out_dir / f"{frame.frame_id}.bin", out)
    log.info("ile: replaced %d instances", replaced_total)


def run_eval_stage(cfg: PipelineConfig, manifest, frames):
    gt_dir = _require(
        dataio.sequence_paths(cfg.sequence_dir)["gt_labels"], "eval", "ground-truth labels"
    )
    frame_ids = [f.frame_id for f in frames]
    pred_labels, source = _previous_labels(
        cfg, "eval", frame_ids, [len(f.points) for f in frames]
    )
    gt_labels = [dataio.read_labels(gt_dir / f"{fid}.bin") for fid in frame_ids]
    report = metrics.evaluate(
        pred_labels, gt_labels, manifest.classes, thresholds=cfg.iou_thresholds
    )
    report.save(
        Path(cfg.output_dir) / "report.json", Path(cfg.output_dir) / "report.txt"
    )
    log.info("eval (%s labels): mIoU=%s mAP=%s", source, report.miou, report.mean_ap)
    return report


def run_pipeline(cfg: PipelineConfig, stages=STAGES):
    """Execute the requested stages in canonical order. Returns the eval report
    when the eval stage ran, else None."""
    bad = [s for s in stages if s not in STAGES]
    if bad:
        raise ConfigError(f"unknown stages {bad}; valid: {list(STAGES)}")
    manifest, frames = dataio.load_sequence(cfg.sequence_dir)
    Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)

    report = None
    for stage in STAGES:
        if stage not in stages:
            continue
        log.info("running stage %s", stage)
        if stage == "plg":
            run_plg_stage(cfg, manifest, frames)
        elif stage == "tsu":
            run_tsu_stage(cfg, manifest, frames)
        elif stage == "ile":
            run_ile_stage(cfg, manifest, frames)
        else:
            report = run_eval_stage(cfg, manifest, frames)
    return report


def prepare_synthetic_inputs(
    seq: synthgen.SyntheticSequence,
    out_dir,
    click_error_range: float = 0.0,
    label_corruption: float = 0.0,
    prediction_corruption: float = 0.1,
    seed: int = 0,
) -> None:
    """Write clicks, predictions and predicted instances for a synthetic sequence.

    Convenience used by the CLI and tests: everything a full pipeline run
    needs beyond the sequence itself, derived deterministically from GT.
    """
    from .clicksim import simulate_frame_clicks

    paths = dataio.sequence_paths(out_dir)
    paths["predictions"].mkdir(parents=True, exist_ok=True)
    paths["pred_instances"].mkdir(parents=True, exist_ok=True)
    num_classes = len(seq.manifest.classes)

    clicks = []
    for frame, gt in zip(seq.frames, seq.gt_labels):
        clicks.extend(simulate_frame_clicks(frame, gt, click_error_range, seed))
        preds = synthgen.make_predictions(
            gt, num_classes, prediction_corruption, seed=seed + 17
        )
        dataio.write_predictions(paths["predictions"] / f"{frame.frame_id}.bin", preds)
        dataio.write_predicted_instances(
            paths["pred_instances"] / f"{frame.frame_id}.json",
            synthgen.make_predicted_instances(gt, seed=seed + 29),
        )
    dataio.write_clicks(paths["clicks"], clicks)
