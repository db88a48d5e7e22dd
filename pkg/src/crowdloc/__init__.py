"""Crowd density maps: ground truth, losses, and unsupervised head localization."""
from .errors import (
    BoundsError,
    CrowdlocError,
    FormatError,
    InfeasibleKError,
    InvalidParameterError,
    ShapeError,
    ValidationError,
)
from .grid import (
    AnnotationSet,
    DensityMap,
    expand_values,
    integral_count,
    load_annotations,
    read_density_map,
    save_annotations,
    write_density_map,
)
from .groundtruth import (
    AttentionMap,
    SceneConfig,
    SigmaPolicy,
    adaptive_sigmas,
    generate_attention_threshold,
    generate_attention_window,
    generate_density_map,
    synth_scene,
)
from .localize import (
    DbscanParams,
    KMeansParams,
    LocalizationResult,
    SubregionPartition,
    WeightedPointSet,
    build_point_set,
    dbscan,
    global_cluster_count,
    isolated_kmeans,
    kmeans,
    localize_kmeans,
)
from .evaluate import EvalConfig, MatchReport, counting_metrics, match_and_ap, window_iou

__version__ = "0.1.0"
