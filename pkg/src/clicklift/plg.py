"""Click-to-label generation: mask lifting, clustering, and geometric filtering.

One click becomes a 3D label through the chain
project -> mask lookup -> lift (points whose pixels fall in the mask) ->
density clustering -> pick the cluster holding the click -> per-class
geometric checks. Failures trigger prompt re-selection among nearby points
until the attempt budget runs out.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .dataio import ClickAnnotation
from .errors import ConfigError, InputError
from .geometry import Calibration, bev_distances, point_ranges, project_points
from .maskprovider import MaskRequest


@dataclass
class Cluster:
    indices: np.ndarray          # sorted frame-level point indices
    extents: np.ndarray          # (3,) max - min per axis
    count: int
    mean_range: float
    is_noise: bool               # fewer than min_pts members


@dataclass
class ClassBounds:
    min_extent: tuple = (0.0, 0.0, 0.0)
    max_extent: tuple = (np.inf, np.inf, np.inf)
    min_points: int = 1
    max_volume: float = np.inf
    max_depth_spread: float = np.inf

    def __post_init__(self):
        for lo, hi in zip(self.min_extent, self.max_extent):
            if lo > hi:
                raise ConfigError(f"extent bound min {lo} > max {hi}")


@dataclass
class GeometricConstraints:
    per_class: dict = field(default_factory=dict)   # class_id -> ClassBounds
    eps: float = 0.4
    min_pts: int = 5

    def __post_init__(self):
        if self.eps <= 0:
            raise ConfigError(f"clustering eps must be > 0, got {self.eps}")
        if self.min_pts < 1:
            raise ConfigError("min_pts must be >= 1")

    def bounds_for(self, class_id: int) -> ClassBounds:
        return self.per_class.get(class_id, ClassBounds())


def default_constraints() -> GeometricConstraints:
    """Shipped defaults for the vehicle / pedestrian / cyclist class set."""
    return GeometricConstraints(
        per_class={
            0: ClassBounds((0.5, 0.5, 0.3), (8.0, 3.0, 3.0), 5, 40.0, 10.0),
            1: ClassBounds((0.0, 0.0, 0.0), (1.2, 1.2, 2.2), 5, 3.5, 2.0),
            2: ClassBounds((0.0, 0.0, 0.0), (2.5, 1.2, 2.2), 5, 7.0, 3.5),
        },
        eps=0.4,
        min_pts=5,
    )


def constraints_to_json(constraints: GeometricConstraints) -> dict:
    return {
        "eps": constraints.eps,
        "min_pts": constraints.min_pts,
        "classes": {
            str(cid): {
                "min_extent": list(b.min_extent),
                "max_extent": [None if np.isinf(v) else v for v in b.max_extent],
                "min_points": b.min_points,
                "max_volume": None if np.isinf(b.max_volume) else b.max_volume,
                "max_depth_spread": None
                if np.isinf(b.max_depth_spread)
                else b.max_depth_spread,
            }
            for cid, b in constraints.per_class.items()
        },
    }


def constraints_from_json(doc: dict) -> GeometricConstraints:
    def _inf(v):
        return np.inf if v is None else float(v)

    per_class = {
        int(cid): ClassBounds(
            tuple(b.get("min_extent", (0.0, 0.0, 0.0))),
            tuple(_inf(v) for v in b.get("max_extent", (None, None, None))),
            int(b.get("min_points", 1)),
            _inf(b.get("max_volume")),
            _inf(b.get("max_depth_spread")),
        )
        for cid, b in doc.get("classes", {}).items()
    }
    return GeometricConstraints(
        per_class=per_class,
        eps=float(doc.get("eps", 0.4)),
        min_pts=int(doc.get("min_pts", 5)),
    )


def load_constraints(path) -> GeometricConstraints:
    return constraints_from_json(json.loads(Path(path).read_text()))


# rejection reasons, in the language of the filtering chain
R_NO_MASK = "no_mask"
R_EMPTY_LIFT = "empty_lift"
R_NO_CLUSTER = "no_cluster"
R_COUNT = "constraint_count"
R_EXTENT_X = "constraint_extent_x"
R_EXTENT_Y = "constraint_extent_y"
R_EXTENT_Z = "constraint_extent_z"
R_VOLUME = "constraint_volume"
R_DEPTH = "constraint_depth"
R_EXHAUSTED = "exhausted_prompts"


@dataclass
class PlgOutcome:
    accepted: bool
    indices: np.ndarray          # empty iff rejected
    reason: str = None           # set iff rejected
    prompts_tried: int = 0

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.accepted and (len(self.indices) == 0 or self.reason is not None):
            raise InputError("accepted outcome must carry indices and no reason")


def color_lift(mask, projections) -> np.ndarray:
    """Frame indices whose floored pixel is a member pixel of the mask.

    ``projections`` is the (indices, pixels) pair from project_points on the
    same frame and camera.
    """
    idx, pixels = projections
    if len(idx) == 0:
        return np.empty(0, dtype=np.int64)
    cols = np.floor(pixels[:, 0]).astype(np.int64)
    rows = np.floor(pixels[:, 1]).astype(np.int64)
    if (cols >= mask.width).any() or (rows >= mask.height).any():
        raise InputError("projection exceeds mask dimensions")
    member = mask.contains_pixel_ids(rows * mask.width + cols)
    return np.asarray(idx)[member]


def cluster(point_indices, points, eps: float, min_pts: int = 1):
    """Density-connected components of the selected points.

    Two points are linked when their 3D distance is at most eps; components
    are the transitive closure. Components smaller than min_pts are kept but
    flagged as noise. The partition is independent of input order: clusters
    come back sorted by their smallest member index.
    """
    if eps <= 0:
        raise ConfigError(f"eps must be > 0, got {eps}")
    if min_pts < 1:
        raise ConfigError("min_pts must be >= 1")
    sel = np.sort(np.asarray(point_indices, dtype=np.int64))
    if len(sel) == 0:
        return []
    pts = np.asarray(points, dtype=np.float64)[sel]

    parent = np.arange(len(sel))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    tree = cKDTree(pts)
    for a, b in tree.query_pairs(eps, output_type="ndarray"):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    roots = np.array([find(i) for i in range(len(sel))])
    clusters = []
    ranges = point_ranges(pts)
    for root in np.unique(roots):
        local = np.nonzero(roots == root)[0]
        member_pts = pts[local]
        extents = member_pts.max(axis=0) - member_pts.min(axis=0)
        clusters.append(
            Cluster(
                indices=sel[local],
                extents=extents,
                count=len(local),
                mean_range=float(ranges[local].mean()),
                is_noise=len(local) < min_pts,
            )
        )
    clusters.sort(key=lambda c: int(c.indices[0]))
    return clusters


def select_and_filter(clusters, click_point_index: int, constraints, class_id: int, depths=None):
    """Pick the cluster containing the click point and run the class checks.

    Returns (cluster, None) on acceptance or (None, reason). Checks run in a
    fixed order (count, extent per axis, volume, depth spread) and the first
    violation is reported. Noise clusters are never eligible. ``depths`` maps
    frame index -> camera depth and is required only when a finite
    max_depth_spread bound is configured.
    """
    chosen = None
    for c in clusters:
        if not c.is_noise and click_point_index in c.indices:
            chosen = c
            break
    if chosen is None:
        return None, R_NO_CLUSTER

    b = constraints.bounds_for(class_id)
    if chosen.count < b.min_points:
        return None, R_COUNT
    for axis, reason in enumerate((R_EXTENT_X, R_EXTENT_Y, R_EXTENT_Z)):
        if not (b.min_extent[axis] <= chosen.extents[axis] <= b.max_extent[axis]):
            return None, reason
    volume = float(np.prod(chosen.extents))
    if volume > b.max_volume:
        return None, R_VOLUME
    if np.isfinite(b.max_depth_spread):
        if depths is None:
            raise InputError("depth spread bound configured but no depths supplied")
        zs = depths[chosen.indices]
        zs = zs[np.isfinite(zs)]
        if len(zs) and zs.max() - zs.min() > b.max_depth_spread:
            return None, R_DEPTH
    return chosen, None


def generate_pseudo_label(
    frame,
    click: ClickAnnotation,
    mask_provider,
    constraints: GeometricConstraints,
    calib: Calibration,
    max_prompts: int = 5,
    prompt_radius: float = 0.1,
    projections=None,
) -> PlgOutcome:
    """Run the full lift / cluster / filter chain for one click.

    Candidate prompts are the frame points within ``prompt_radius`` (BEV) of
    the click, nearest first, ties by index. Each becomes an image prompt in
    turn until one yields a cluster that clears the geometric checks; the
    first acceptance wins. ``projections`` may carry a precomputed
    project_points result for the frame.
    """
    if max_prompts < 1:
        raise ConfigError("max_prompts must be >= 1")
    radius = max(prompt_radius, 0.1)

    if projections is None:
        projections = project_points(frame.points, calib)
    proj_idx, pixels = projections
    n = len(frame.points)
    uv = np.full((n, 2), np.nan)
    depth_of = np.full(n, np.nan)
    if len(proj_idx):
        uv[proj_idx] = pixels[:, :2]
        depth_of[proj_idx] = pixels[:, 2]

    dists = bev_distances(frame.points, click.bev)
    in_disc = np.nonzero(dists <= radius)[0]
    order = np.lexsort((in_disc, dists[in_disc]))
    ordered = in_disc[order]
    candidates = ordered[np.isfinite(depth_of[ordered])]

    if len(candidates) == 0:
        return PlgOutcome(False, [], R_NO_MASK, prompts_tried=0)

    tried = 0
    last_reason = R_NO_MASK
    for cand in candidates[:max_prompts]:
        cand = int(cand)
        tried += 1
        u, v = uv[cand]
        mask = mask_provider.get_mask(
            MaskRequest(frame_id=frame.frame_id, prompt=(u, v), class_id=click.class_id)
        )
        if mask is None:
            last_reason = R_NO_MASK
            continue
        lifted = color_lift(mask, projections)
        if len(lifted) == 0:
            last_reason = R_EMPTY_LIFT
            continue
        clusters = cluster(lifted, frame.points, constraints.eps, constraints.min_pts)
        chosen, reason = select_and_filter(
            clusters, cand, constraints, click.class_id, depths=depth_of
        )
        if chosen is not None:
            return PlgOutcome(True, chosen.indices, prompts_tried=tried)
        last_reason = reason
    if tried == max_prompts and len(candidates) > max_prompts:
        last_reason = R_EXHAUSTED
    return PlgOutcome(False, [], last_reason, prompts_tried=tried)
