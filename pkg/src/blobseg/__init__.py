"""Blob-consensus face segmentation toolkit.

Dense prediction with structure: an occlusion-factorization pipeline builds
blob maps (background, face, occluding objects), and a two-term consensus
objective trains a small convolutional segmenter whose per-pixel predictions
are pulled toward each blob's mean prediction.
"""

from .components import blobs_from_labels, connected_components, synthesize_labels
from .config import ExperimentConfig, load_config, parse_config
from .errors import (
    BlobConsistencyError,
    BlobsegError,
    ConfigError,
    DegenerateInputError,
    DimensionError,
    DivergenceError,
    FormatError,
)
from .estimator import ConsensusSegmenter, OcclusionLabeler
from .geometry import Hull2D, Pose, convex_hull, full_face_mask, project_points, rasterize_hull
from .losses import (
    BlobStats,
    LossConfig,
    LossResult,
    blob_marginalized_ce,
    blob_mean_prob,
    consensus_loss,
    gradcheck,
    pixelwise_ce,
)
from .metrics import (
    confusion,
    count_components,
    f1,
    iou,
    mean_score,
    merge_two_class,
    pixel_accuracy,
    precision,
    recall,
    sparsity,
    superpixel_accuracy,
)
from .morphology import (
    StructuringElement,
    dilate,
    ellipse_element,
    erode,
    occlusion_residual,
    rect_element,
    refine_residual,
)
from .net import (
    LayerSpec,
    LayerStack,
    compact_architecture,
    param_count,
    parse_descriptor,
    receptive_field,
    reference_architecture,
    shape_check,
)
from .optim import Adam, PlateauScheduler
from .tensorops import hard_predict, softmax_channels
from .tensorio import read_pgm, read_tensor, write_pgm, write_tensor

__version__ = "0.1.0"
