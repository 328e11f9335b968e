import numpy as np
import pytest
from fastapi.testclient import TestClient

from clicklift import synthgen
from clicklift.pipeline import PipelineConfig, prepare_synthetic_inputs
from clicklift.server import create_app


@pytest.fixture(scope="module")
def client(tmp_path_factory):
    root = tmp_path_factory.mktemp("serve_seq")
    spec = synthgen.random_scene_spec(seed=23, n_instances=4, num_frames=2)
    seq = synthgen.generate_sequence(spec)
    synthgen.write_sequence(seq, root)
    prepare_synthetic_inputs(seq, root, seed=23)
    cfg = PipelineConfig(
        sequence_dir=str(root),
        output_dir=str(tmp_path_factory.mktemp("serve_out")),
    )
    app = create_app(cfg)
    with TestClient(app) as c:
        c.scene = seq  # stash for tests
        yield c


def vehicle_click(seq):
    spec_inst = next(i for i in seq.spec.instances if i.class_name == "vehicle")
    gt = seq.gt_labels[0]
    frame = seq.frames[0]
    member = np.nonzero(gt.instance_ids == spec_inst.instance_id)[0]
    x = float(frame.points[member, 0].mean())
    y = float(frame.points[member, 1].mean())
    # use an actual instance point closest to the BEV centroid
    d = np.hypot(frame.points[member, 0] - x, frame.points[member, 1] - y)
    k = member[int(np.argmin(d))]
    return {
        "frame_id": "000000",
        "class_id": 0,
        "bev": [float(frame.points[k, 0]), float(frame.points[k, 1])],
    }


class TestEndpoints:
    def test_sequences(self, client):
        doc = client.get("/api/sequences").json()
        assert len(doc) == 1
        assert doc[0]["frames"] == ["000000", "000001"]
        assert doc[0]["classes"] == ["vehicle", "pedestrian", "cyclist"]

    def test_bev_payload(self, client):
        resp = client.get("/api/frames/000000/bev")
        assert resp.status_code == 200
        doc = resp.json()
        assert doc["num_points"] > 0
        assert len(doc["x"]) == len(doc["y"]) == len(doc["range"])
        assert len(doc["x"]) <= 50_000
        assert "gt_class" in doc

    def test_unknown_frame_404(self, client):
        assert client.get("/api/frames/zzz/bev").status_code == 404

    def test_click_on_vehicle_accepted(self, client):
        body = vehicle_click(client.scene)
        doc = client.post("/api/clicks", json=body).json()
        assert doc["status"] == "accepted"
        assert doc["point_indices"]
        assert doc["iou_vs_gt"] >= 0.9

    def test_click_on_background_rejected(self, client):
        doc = client.post(
            "/api/clicks",
            json={"frame_id": "000000", "class_id": 0, "bev": [-30.0, -30.0]},
        ).json()
        assert doc["status"] == "rejected"
        assert doc["rejection_reason"] == "no_mask"

    def test_identical_clicks_identical_responses(self, client):
        body = vehicle_click(client.scene)
        a = client.post("/api/clicks", json=body).json()
        b = client.post("/api/clicks", json=body).json()
        assert a == b

    def test_click_bad_class_400(self, client):
        body = vehicle_click(client.scene)
        body["class_id"] = 99
        assert client.post("/api/clicks", json=body).status_code == 400

    def test_malformed_body_422(self, client):
        resp = client.post("/api/clicks", json={"frame_id": "000000"})
        assert resp.status_code == 422
        assert any("class_id" in str(e.get("loc")) for e in resp.json()["detail"])

    def test_accept_and_report_flow(self, client):
        body = vehicle_click(client.scene)
        label = client.post("/api/clicks", json=body).json()
        resp = client.post(
            "/api/labels/accept",
            json={
                "frame_id": "000000",
                "class_id": 0,
                "point_indices": label["point_indices"],
            },
        )
        assert resp.status_code == 200
        assert resp.json()["points"] == len(label["point_indices"])
        report = client.get("/api/report").json()
        assert report["semantic"]["per_class_iou"]["0"] > 0

    def test_accept_with_bad_indices_400(self, client):
        resp = client.post(
            "/api/labels/accept",
            json={"frame_id": "000000", "class_id": 0, "point_indices": [10**9]},
        )
        assert resp.status_code == 400
