"""clicklift: BEV click annotations lifted to per-point 3D instance labels.

The pipeline turns one click per object into dense pseudo labels by lifting
2D instance masks onto the point cloud, scrubbing the result with density
clustering and per-class geometric checks, refining labels across frames
with voxel voting, and swapping in high-IoU predicted instances. Evaluation,
synthetic data generation, a CLI, and an annotation HTTP service round out
the toolkit.
"""
from .clicksim import pick_click_point, simulate_click, simulate_frame_clicks
from .dataio import (
    ClickAnnotation,
    LabelStage,
    PointCloudFrame,
    PredictionSet,
    PseudoLabelSet,
    SequenceManifest,
)
from .errors import (
    ClickLiftError,
    ConfigError,
    FormatError,
    InputError,
    MaskContractError,
    SceneSpecError,
)
from .geometry import (
    Calibration,
    bev_centroid,
    make_pose,
    project_points,
    transform_frame,
    voxelize,
)
from .ile import IleConfig, PredictedInstance, ile_update, iou
from .maskprovider import (
    FileBackedProvider,
    Mask2D,
    MaskRequest,
    SyntheticOracleProvider,
)
from .metrics import EvalReport, evaluate, instance_ap, label_quality, semantic_miou
from .pipeline import PipelineConfig, run_pipeline
from .plg import (
    GeometricConstraints,
    PlgOutcome,
    cluster,
    color_lift,
    default_constraints,
    generate_pseudo_label,
    select_and_filter,
)
from .synthgen import SceneSpec, generate_sequence, random_scene_spec, write_sequence
from .tsu import TsuConfig, VoxelVotingSpace, build_voting_space, dynamic_thresholds, update_labels

__version__ = "0.1.0"
