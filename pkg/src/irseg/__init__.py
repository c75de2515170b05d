"""Unsupervised fire and smoke segmentation for infrared frame sequences.

Per-pixel features (intensity, optical-flow magnitude, divergence, and
optionally SIFT-flow magnitude) are fused and clustered without
supervision by K-means, a Gaussian mixture fit with EM, a Potts MRF
optimized by iterated conditional modes, or a Gaussian MRF solved by
Gauss-Seidel; results are scored against ground truth with confusion
matrices and accuracy. See the demos/ directory for narrative examples
and the ``irseg`` CLI for the end-to-end pipeline.
"""

from .errors import IrsegError
from .image import (
    BACKGROUND,
    CLASS_NAMES,
    FIRE,
    SMOKE,
    ClassSemantics,
    FeatureStack,
    FlowField,
    Frame,
    LabelMap,
    ScalarField,
)
from .io import load_frame, load_labelmap, load_sequence, save_frame_pgm, save_labelmap
from .optical_flow import Gradients, HsParams, compute_gradients, flow_magnitude, horn_schunck, hs_energy
from .features import ChannelStats, FeatureConfig, build_feature_stack, divergence, fit_channel_stats, normalize
from .clustering import (
    GmmModel,
    KMeansModel,
    Responsibilities,
    gmm_e_step,
    gmm_fit,
    gmm_log_likelihood,
    gmm_m_step,
    gmm_map_labels,
    kmeans_assign,
    kmeans_fit,
)
from .random_fields import (
    EnergyBreakdown,
    GmrfParams,
    MrfParams,
    gmrf_segment,
    icm_segment,
    likelihood_energy,
    posterior_energy,
    prior_energy,
)
from .evaluation import ConfusionMatrix, Metrics, assign_semantics, confusion, metrics, render_overlay
from .sift_flow import (
    DescriptorField,
    DisplacementField,
    SiftFlowParams,
    dense_sift,
    match_siftflow,
    siftflow_energy,
)
from .synthetic import BENCHMARK_SCENE_NAMES, BlobSpec, PlumeSpec, SceneSpec, analytic_flow, benchmark_scene, generate
from .pipeline import PipelineConfig, cmd_bench, cmd_eval, cmd_segment, cmd_synth, cmd_train

__version__ = "0.1.0"
