"""Occlusion-aware sliding-window object detection.

Latent per-block visibility inferred exactly by graph cuts, max-margin
training with latent updates and hard-negative bootstrapping, and globally
optimal visibility-aware non-maximum suppression by branch-and-bound.
"""

from .blockgrid import (
    GrayImage,
    PyramidLevel,
    WindowFeatures,
    build_pyramid,
    enumerate_windows,
    hog_extract,
    pad_features,
)
from .detector import DetectConfig, Detection, detect, predict_box
from .evaluation import EvalReport, average_precision, mask_iou, match_detections
from .mixture import MixtureModel, ScoredWindow, load_model, mixture_score, save_model
from .nms import (
    CoverageMatrices,
    SceneGrid,
    SceneInterpretation,
    build_matrices,
    greedy_suppress,
    interpretation_energy,
    overlap,
    suppress,
)
from .scenegen import SynthScene, SynthSpec, generate, write_dataset
from .training import TrainConfig, TrainingExample, hinge, kmeans_init, minimize, train
from .visibility import (
    IsingConfig,
    MixtureComponent,
    ResponseResult,
    VisibilityMask,
    classification_score,
    filtered_response,
    ising_penalty,
    upper_bound,
    window_response,
)

__version__ = "0.1.0"
