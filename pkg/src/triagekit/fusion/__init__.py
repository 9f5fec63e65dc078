from .ablation import ALL_ROWS, FUSION_ROWS, MASK_ROWS, AblationRow, run_ablation, write_ablation_csv
from .complexity import ComplexityReport, complexity_report, count_parameters, linear_layer_parameters
from .estimator import (
    EvaluationResult,
    FusionActionClassifier,
    stratified_split,
    write_history_csv,
)
from .gradcam import gradcam_components, gradcam_heatmaps, overlay_heatmap
from .model import (
    FUSED_DIM,
    N_CLASSES,
    SENSOR_DIM,
    VIDEO_DIM,
    FusionHead,
    FusionModel,
    ModalityMask,
    Prediction,
    SensorEncoder,
    VideoEncoder,
    fuse,
    prediction_from_logits,
)

__all__ = [
    "ALL_ROWS", "FUSION_ROWS", "MASK_ROWS", "AblationRow", "run_ablation",
    "write_ablation_csv", "ComplexityReport", "complexity_report",
    "count_parameters", "linear_layer_parameters", "EvaluationResult",
    "FusionActionClassifier", "stratified_split", "write_history_csv",
    "gradcam_components", "gradcam_heatmaps", "overlay_heatmap",
    "FUSED_DIM", "N_CLASSES", "SENSOR_DIM", "VIDEO_DIM", "FusionHead",
    "FusionModel", "ModalityMask", "Prediction", "SensorEncoder",
    "VideoEncoder", "fuse", "prediction_from_logits",
]
