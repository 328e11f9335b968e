"""HTTP service for interactive click annotation.

Serves a loaded sequence as BEV point scatters, turns posted clicks into
pseudo labels synchronously, persists accepted labels, and reports metrics
over what has been persisted. Generation is stateless per request;
persistence is serialized by a single writer lock.
"""
import threading
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import dataio, metrics, plg
from .dataio import ClickAnnotation, LabelStage, PseudoLabelSet
from .errors import ClickLiftError
from .geometry import point_ranges, project_points
from .pipeline import PipelineConfig, make_provider

BEV_POINT_BUDGET = 50_000


class ClickBody(BaseModel):
    frame_id: str
    class_id: int
    bev: tuple[float, float]


class AcceptBody(BaseModel):
    frame_id: str
    class_id: int
    point_indices: list[int]
    instance_id: int | None = None
    confidence: float = 1.0


class AnnotationService:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.manifest, self.frames = dataio.load_sequence(cfg.sequence_dir)
        self.by_id = {f.frame_id: f for f in self.frames}
        self.provider = make_provider(cfg)
        self.projections = {}
        self._proj_lock = threading.Lock()
        self._write_lock = threading.Lock()

        gt_dir = dataio.sequence_paths(cfg.sequence_dir)["gt_labels"]
        self.gt = {}
        if gt_dir.exists():
            for f in self.frames:
                path = gt_dir / f"{f.frame_id}.bin"
                if path.exists():
                    self.gt[f.frame_id] = dataio.read_labels(path)

        self.labels_dir = Path(cfg.output_dir) / "labels_plg"
        self.labels_dir.mkdir(parents=True, exist_ok=True)

    def frame(self, frame_id: str):
        if frame_id not in self.by_id:
            raise KeyError(frame_id)
        return self.by_id[frame_id]

    def frame_projections(self, frame):
        with self._proj_lock:
            if frame.frame_id not in self.projections:
                self.projections[frame.frame_id] = project_points(
                    frame.points, self.manifest.calibration
                )
            return self.projections[frame.frame_id]

    def bev_payload(self, frame_id: str) -> dict:
        frame = self.frame(frame_id)
        n = len(frame.points)
        stride = max(1, int(np.ceil(n / BEV_POINT_BUDGET)))
        sel = np.arange(0, n, stride)
        ranges = point_ranges(frame.points[sel])
        gt = self.gt.get(frame_id)
        payload = {
            "frame_id": frame_id,
            "num_points": n,
            "stride": stride,
            "x": np.round(frame.points[sel, 0], 3).tolist(),
            "y": np.round(frame.points[sel, 1], 3).tolist(),
            "range": np.round(ranges, 3).tolist(),
            "point_index": sel.tolist(),
        }
        if gt is not None:
            payload["gt_class"] = gt.class_ids[sel].tolist()
        return payload

    def handle_click(self, body: ClickBody) -> dict:
        frame = self.frame(body.frame_id)
        if not (0 <= body.class_id < len(self.manifest.classes)):
            raise ValueError(f"class_id out of range: {body.class_id}")
        click = ClickAnnotation(
            frame_id=body.frame_id,
            instance_id=-1,
            class_id=body.class_id,
            bev=(float(body.bev[0]), float(body.bev[1])),
        )
        outcome = plg.generate_pseudo_label(
            frame,
            click,
            self.provider,
            self.cfg.constraints,
            self.manifest.calibration,
            max_prompts=self.cfg.max_prompts,
            prompt_radius=max(self.cfg.prompt_radius, 0.25),
            projections=self.frame_projections(frame),
        )
        result = {
            "status": "accepted" if outcome.accepted else "rejected",
            "point_indices": [int(i) for i in outcome.indices],
            "prompts_tried": outcome.prompts_tried,
        }
        if not outcome.accepted:
            result["rejection_reason"] = outcome.reason
        iou_vs_gt = self._iou_vs_gt(body.frame_id, outcome)
        if iou_vs_gt is not None:
            result["iou_vs_gt"] = iou_vs_gt
        return result

    def _iou_vs_gt(self, frame_id, outcome):
        gt = self.gt.get(frame_id)
        if gt is None or not outcome.accepted:
            return None
        # score against the camera-visible part of the best-overlapping instance
        frame = self.by_id[frame_id]
        proj_idx, _ = self.frame_projections(frame)
        visible = np.zeros(len(frame.points), dtype=bool)
        visible[proj_idx] = True
        label = set(int(i) for i in outcome.indices)
        best = 0.0
        for inst in np.unique(gt.instance_ids):
            if inst < 0:
                continue
            member = np.nonzero((gt.instance_ids == inst) & visible)[0]
            gt_set = set(int(i) for i in member)
            if not gt_set:
                continue
            inter = len(label & gt_set)
            union = len(label | gt_set)
            if union:
                best = max(best, inter / union)
        return best

    def accept_label(self, body: AcceptBody) -> dict:
        frame = self.frame(body.frame_id)
        n = len(frame.points)
        indices = np.unique(np.asarray(body.point_indices, dtype=np.int64))
        if len(indices) == 0:
            raise ValueError("point_indices must be non-empty")
        if indices.min() < 0 or indices.max() >= n:
            raise ValueError("point_indices out of frame bounds")
        with self._write_lock:
            path = self.labels_dir / f"{body.frame_id}.bin"
            labels = (
                dataio.read_labels(path)
                if path.exists()
                else PseudoLabelSet.empty(n, LabelStage.PLG)
            )
            instance_id = body.instance_id
            if instance_id is None:
                used = labels.instance_ids[labels.instance_ids >= 0]
                instance_id = int(used.max()) + 1 if len(used) else 0
            labels.class_ids[indices] = body.class_id
            labels.instance_ids[indices] = instance_id
            labels.confidence[indices] = body.confidence
            dataio.write_labels(path, labels)
        return {"frame_id": body.frame_id, "instance_id": instance_id, "points": len(indices)}

    def report(self) -> dict:
        if not self.gt:
            raise ValueError("no ground-truth labels available for this sequence")
        pred, gt = [], []
        for f in self.frames:
            if f.frame_id not in self.gt:
                continue
            path = self.labels_dir / f"{f.frame_id}.bin"
            pred.append(
                dataio.read_labels(path)
                if path.exists()
                else PseudoLabelSet.empty(len(f.points), LabelStage.PLG)
            )
            gt.append(self.gt[f.frame_id])
        report = metrics.evaluate(pred, gt, self.manifest.classes, self.cfg.iou_thresholds)
        return report.to_json()


def create_app(cfg: PipelineConfig) -> FastAPI:
    service = AnnotationService(cfg)
    app = FastAPI(title="clicklift annotation service")
    app.state.service = service

    @app.exception_handler(ClickLiftError)
    async def _domain_error(request, exc):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.get("/api/sequences")
    def sequences():
        return [
            {
                "sequence_id": service.manifest.sequence_id,
                "classes": service.manifest.classes,
                "frames": [f.frame_id for f in service.frames],
            }
        ]

    @app.get("/api/frames/{frame_id}/bev")
    def frame_bev(frame_id: str):
        try:
            return service.bev_payload(frame_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown frame {frame_id!r}")

    @app.post("/api/clicks")
    def clicks(body: ClickBody):
        try:
            return service.handle_click(body)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown frame {body.frame_id!r}")
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    @app.post("/api/labels/accept")
    def accept(body: AcceptBody):
        try:
            return service.accept_label(body)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown frame {body.frame_id!r}")
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    @app.get("/api/report")
    def report():
        try:
            return service.report()
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    frontend = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    if frontend.exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(frontend), html=True), name="ui")
    return app


def serve(cfg: PipelineConfig, port: int = 8000, host: str = "127.0.0.1"):
    import uvicorn

    uvicorn.run(create_app(cfg), host=host, port=port, log_level="info")
