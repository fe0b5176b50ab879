"""cl2s: multi-component single-image dehazing toolkit.

Six elementary-function dehazing heads (atmospheric scattering,
multiplicative, additive, exponential, logarithmic, sinusoidal) produce
candidate restorations that are fused per pixel by learned softmax
attention. Variants covering the whole ablation matrix, the training
recipe, PSNR/SSIM/CIEDE2000 metrics, and a synthetic-haze pipeline make
every behavior verifiable at desk scale.
"""

from .backbone import AggregatedFeatures, Backbone, BackboneConfig, FeaturePyramid
from .data import (
    HazeParams,
    PairedSample,
    exact_dehaze_oracle,
    load_dataset,
    make_synthetic_set,
    random_crop_pair,
    synthesize_haze,
    write_flat_pairs,
)
from .fusion import AttentionTrunk, fuse
from .heads import (
    AtmosphericEstimate,
    ComponentKind,
    ComponentOutput,
    KIND_ORDER,
    build_head,
)
from .images import (
    ValidationError,
    clamp_unit,
    load_image,
    quantize_unit,
    save_image,
    validate_image,
)
from .metrics import (
    MetricsReport,
    ciede2000,
    evaluate_pairs,
    lab_to_srgb,
    psnr,
    srgb_to_lab,
    ssim,
)
from .trainer import (
    CheckpointError,
    TrainConfig,
    TrainingDiverged,
    load_checkpoint,
    poly_lr,
    save_checkpoint,
    train,
    training_loss,
)
from .variants import (
    ABLATION_ORDER,
    DehazeModel,
    PRESETS,
    VariantSpec,
    build_variant,
    forward_image,
    init_parameters,
    resolve_spec,
)

__version__ = "0.1.0"
