"""Temporal voxel voting: adjacent-frame predictions overwrite current labels.

Adjacent frames are re-expressed in the current frame, voxelized, and each
voxel accumulates the per-class confidence vectors of its points. A voxel
resolves to a class when the vote-count and score gates pass, or to the
ignore value -1 otherwise; current-frame points inside resolved voxels take
the voxel's class, everything else keeps its previous label.

Both gate thresholds can scale with the voxel's BEV distance from the ego
sensor. Two scaling directions exist because the source material for this
mechanism is self-contradictory: the literal algorithm multiplies thresholds
by dist/D (cheaper updates near the sensor), while its prose description
asks for the opposite. The literal form is the default.
"""
from dataclasses import dataclass, field

import numpy as np

from .dataio import LabelStage, PseudoLabelSet
from .errors import ConfigError, InputError
from .geometry import transform_frame, voxel_indices

SCALE_ALGORITHM = "algorithm1"     # T' = (dist / D) * T
SCALE_PROSE = "prose"              # T' = (D / max(dist, eps)) * T

MODE_SOFT = "soft"
MODE_HARD = "hard"


@dataclass
class TsuConfig:
    voxel_size: float = 0.3
    distance_normalizer: float = 20.0          # D, meters
    vote_threshold: float = 2.0                # base T_vote
    score_threshold: float = 0.5               # base T_score
    vote_mode: str = MODE_SOFT
    dynamic_count: bool = True
    dynamic_score: bool = True
    scaling: str = SCALE_ALGORITHM
    n_adjacent: int = 2
    vote_clamp: tuple = (1.0, 20.0)            # bounds for scaled T_vote
    score_clamp: tuple = (0.2, 0.95)           # bounds for scaled T_score

    def __post_init__(self):
        if self.voxel_size <= 0:
            raise ConfigError("voxel_size must be > 0")
        if self.distance_normalizer <= 0:
            raise ConfigError("distance_normalizer must be > 0")
        if self.vote_threshold < 1:
            raise ConfigError("vote_threshold must be >= 1")
        if not (0.0 < self.score_threshold <= 1.0):
            raise ConfigError("score_threshold must be in (0, 1]")
        if self.vote_mode not in (MODE_SOFT, MODE_HARD):
            raise ConfigError(f"unknown vote mode {self.vote_mode!r}")
        if self.scaling not in (SCALE_ALGORITHM, SCALE_PROSE):
            raise ConfigError(f"unknown scaling direction {self.scaling!r}")
        if self.n_adjacent < 0:
            raise ConfigError("n_adjacent must be >= 0")


@dataclass
class VotingCell:
    index: tuple                    # (ix, iy, iz)
    count: int
    score_sum: np.ndarray           # (num,) running sum of score vectors
    argmax_counts: np.ndarray       # (num,) per-point argmax histogram
    resolved: int = -1


@dataclass
class VoxelVotingSpace:
    voxel_size: float
    cells: dict = field(default_factory=dict)  # (ix, iy, iz) -> VotingCell
    ego_voxel: tuple = (0, 0, 0)

    def lookup(self, voxel_index) -> int:
        cell = self.cells.get(tuple(voxel_index))
        return cell.resolved if cell is not None else -1


def _scale(base: float, dist: float, cfg: TsuConfig, clamp) -> float:
    if cfg.scaling == SCALE_ALGORITHM:
        scaled = (dist / cfg.distance_normalizer) * base
    else:
        scaled = (cfg.distance_normalizer / max(dist, 1e-9)) * base
    return float(min(max(scaled, clamp[0]), clamp[1]))


def dynamic_thresholds(voxel_index, ego_voxel, cfg: TsuConfig):
    """(T'_vote, T'_score) for one voxel.

    Distance is BEV only: voxel_size * hypot of the x and y index offsets to
    the ego voxel, z excluded. A disabled dynamic flag returns that base
    threshold verbatim, unclamped.
    """
    dist = cfg.voxel_size * float(
        np.hypot(voxel_index[0] - ego_voxel[0], voxel_index[1] - ego_voxel[1])
    )
    t_vote = (
        _scale(cfg.vote_threshold, dist, cfg, cfg.vote_clamp)
        if cfg.dynamic_count
        else cfg.vote_threshold
    )
    t_score = (
        _scale(cfg.score_threshold, dist, cfg, cfg.score_clamp)
        if cfg.dynamic_score
        else cfg.score_threshold
    )
    return t_vote, t_score


def resolve_cell(count, score_sum, argmax_counts, mode, t_vote, t_score) -> int:
    """Label for one voxel's accumulated statistics, or -1.

    The vote gate is count >= ceil(T'_vote) with a floor of one vote. The
    score gate is strict: the winning class's mean score must exceed
    T'_score. Soft mode ranks classes by mean score, hard mode by per-point
    argmax plurality; an exact tie at the top resolves to -1 in both modes,
    so the two agree whenever predictions are one-hot at full confidence.
    """
    if count < max(1, int(np.ceil(t_vote))):
        return -1
    mean = np.asarray(score_sum, dtype=np.float64) / count
    if mode == MODE_SOFT:
        ranking = mean
    else:
        ranking = np.asarray(argmax_counts, dtype=np.float64)
    top = int(np.argmax(ranking))
    if (ranking == ranking[top]).sum() > 1:
        return -1
    if not (mean[top] > t_score):
        return -1
    return top


def build_voting_space(adjacent, current_pose, cfg: TsuConfig) -> VoxelVotingSpace:
    """Accumulate adjacent-frame predictions into a resolved voting space.

    ``adjacent`` is a list of (frame, predictions, pose) triples, ordered by
    frame; every frame is transformed into the current frame before
    voxelization. Accumulation visits frames and points in index order, so
    the result is reproducible bit for bit.
    """
    space = VoxelVotingSpace(voxel_size=cfg.voxel_size)
    if not adjacent:
        return space

    num = adjacent[0][1].num_classes
    vox_blocks, score_blocks = [], []
    for frame, preds, pose in adjacent:
        scores = preds.scores
        if len(scores) != len(frame.points):
            raise InputError(
                f"prediction length {len(scores)} does not match frame "
                f"{frame.frame_id} point count {len(frame.points)}"
            )
        if preds.num_classes != num:
            raise InputError("adjacent frames disagree on class count")
        moved = transform_frame(frame.points, pose, current_pose)
        vox_blocks.append(voxel_indices(moved, cfg.voxel_size))
        score_blocks.append(scores.astype(np.float64))
    vox = np.vstack(vox_blocks)
    scores = np.vstack(score_blocks)
    if len(vox) == 0:
        return space

    unique, inverse = np.unique(vox, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    counts = np.bincount(inverse, minlength=len(unique))
    score_sums = np.zeros((len(unique), num), dtype=np.float64)
    np.add.at(score_sums, inverse, scores)
    argmax_hist = np.zeros((len(unique), num), dtype=np.int64)
    np.add.at(argmax_hist, (inverse, np.argmax(scores, axis=1)), 1)

    cells = {}
    for k in range(len(unique)):
        key = (int(unique[k, 0]), int(unique[k, 1]), int(unique[k, 2]))
        t_vote, t_score = dynamic_thresholds(key, space.ego_voxel, cfg)
        cells[key] = VotingCell(
            index=key,
            count=int(counts[k]),
            score_sum=score_sums[k],
            argmax_counts=argmax_hist[k],
            resolved=resolve_cell(
                counts[k], score_sums[k], argmax_hist[k], cfg.vote_mode, t_vote, t_score
            ),
        )
    space.cells = cells
    return space


def update_labels(frame, labels: PseudoLabelSet, space: VoxelVotingSpace, cfg: TsuConfig) -> PseudoLabelSet:
    """Overwrite point classes from resolved voxels; -1 voxels keep the input.

    Instance ids and confidences pass through untouched.
    """
    if len(labels.class_ids) != len(frame.points):
        raise InputError("label length does not match frame point count")
    out = labels.copy(stage=LabelStage.TSU)
    if not space.cells:
        return out
    vox = voxel_indices(frame.points, cfg.voxel_size)
    resolved = np.fromiter(
        (space.lookup((v[0], v[1], v[2])) for v in vox),
        dtype=np.int32,
        count=len(vox),
    )
    hit = resolved != -1
    out.class_ids[hit] = resolved[hit]
    return out
