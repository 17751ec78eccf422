"""Face alignment with learned per-pixel descriptors on a synthetic
morphable model: model synthesis, software rendering, surface segmentation,
descriptor learning, matching, cascaded-regression alignment, evaluation."""

from .align import (
    AlignConfig,
    DescentStage,
    LandmarkState,
    align,
    descent_step,
    fit_shape,
    initialize,
    stack_descriptors,
)
from .cascade import (
    RegressionConfig,
    TrainState,
    learn_cascade,
    learn_stage,
    ridge_solve,
    update_generic_shape,
)
from .container import read_container, read_provenance, write_container
from .dffnet import (
    FeatureMap,
    FeatureNet,
    LossLayerParams,
    NetConfig,
    OptimConfig,
    angular_softmax_loss,
    loss_and_gradients,
    sample_feature,
    train,
)
from .evaluation import EvalItem, EvalReport, evaluate, nme_bbox, nme_interpupil
from .facemodel import (
    AlbedoParams,
    CameraParams,
    FaceMesh,
    MorphableModel,
    ShapeParams,
    generate_synthetic_model,
    project_points,
    rotation_from_angles,
    synthesize_albedo,
    synthesize_shape,
)
from .matching import MatchSet, dense_match, sparse_match
from .render import (
    DepthBuffer,
    LabeledImage,
    RenderConfig,
    RenderedSample,
    generate_dataset,
    project_patch_labels,
    rasterize,
    render_image,
    vertex_visibility,
)
from .segmentation import Segmentation, cvt_segment, generate_segmentation_bank

__version__ = "0.1.0"
