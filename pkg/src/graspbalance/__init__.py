"""Scale-balanced 6-DoF grasp detection, minus the networks.

The pieces that decide what a detector learns from and how it is judged:
candidate sampling (farthest-point, foreground, object-balanced),
multi-scale cylinder grouping with gated fusion, scale-frequency loss
weighting, noisy-clean scene mixing, synthetic scenes with analytic grasp
labels, and a grasp evaluation harness with collision and antipodal
force-closure checks.
"""

from . import fileio
from .core import (BACKGROUND, GraspPose, GripperModel, PointCloud,
                   RigidPose, angle_for_closing, frame_of_grasp, grasp_frame,
                   point3, transform_cloud)
from .evaluation import (EvalReport, ScaleClass, ScaleStats, ap_mu,
                         closure_cosine, collision_check, evaluate,
                         grasp_success, per_scale_stats, precision_at_k,
                         scale_class_of)
from .mscg import (CylinderSpec, EncoderParams, cylinder_query, encode_group,
                   fused_with_grad, gated_fusion, make_radii, mscg_features)
from .ncm import (InstanceAsset, SceneAssets, mix_scene,
                  synthesize_clean_scene, visibility_filter)
from .sampling import (SampleShortfallWarning, SeedFeatureSet,
                       foreground_sample, fps, interpolate_features,
                       object_balanced_sample)
from .scale_balance import (GraspLabelSet, ScaleHistogram,
                            best_scale_per_point, build_scale_histogram,
                            sample_weight, weighted_loss)
from .scenegen import (PrimitiveSpec, analytic_grasps, flatten_labels,
                       generate_scene, sample_primitive)

__version__ = "0.1.0"
