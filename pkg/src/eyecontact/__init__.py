"""Pedestrian eye-contact detection from 2D pose keypoints.

The toolkit covers the full workflow: normalizing detected poses into a
scale-invariant feature frame, training and evaluating a residual
fully-connected classifier with hand-written gradients, measuring
per-keypoint saliency, and running a model-assisted annotation review
service.
"""

from .data import (
    AnnotatedInstance,
    Box,
    ConsensusResult,
    ImageRecord,
    SchemaError,
    Split,
    Vote,
    balanced_samples,
    consensus_label,
    read_jsonl,
    write_jsonl,
)
from .metrics import (
    EvalReport,
    ScoredInstance,
    average_precision,
    detection_recall,
    evaluate,
    quartile_breakdown,
)
from .matching import iou, match_instances
from .net import (
    NetworkArch,
    NetworkParams,
    backward,
    bce_loss,
    forward,
    init_network,
    load_checkpoint,
    param_count,
    save_checkpoint,
)
from .pose import (
    NormalizedPose,
    Pose,
    Subset,
    enclosing_box,
    hip_center,
    normalize_pose,
    select_subset,
)
from .synth import SynthConfig, synth_generate
from .training import (
    AdamState,
    SaliencyReport,
    TrainConfig,
    TrainSample,
    adam_step,
    saliency,
    train,
)

__version__ = "0.1.0"
