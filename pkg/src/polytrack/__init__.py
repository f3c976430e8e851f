"""Polygonal point set tracking with numpy.

A polygon of N ordered contour points is carried from frame to frame by a
global affine alignment followed by coarse-to-fine local refinement. The
package also holds the training losses, evaluation metrics, a small
local-alignment network with manual backpropagation, and a synthetic
sequence generator.
"""
from .errors import *  # noqa: F401,F403
from .geometry import (AffineTransform, CropWindow, PointSet, apply_affine,
                       bilinear_sample, crop_image, crop_window,
                       extract_contour, rasterize_mask, resample_uniform,
                       signed_area, warp_image)
from .losses import (LossValue, chamfer_loss, cycle_consistency_loss,
                     paired_l1_loss, pixel_matching_loss,
                     point_set_matching_loss, reg_first_derivative,
                     reg_second_derivative, smooth_l1)
from .metrics import (MetricReport, TrackAnnotation, average_accuracy,
                      boundary_accuracy, evaluate, region_similarity,
                      sequence_stats, spatial_accuracy, temporal_accuracy)
from .lam import (LamConfig, LamParams, LamState, cyclic_positional_encoding,
                  lam_backward, lam_forward, load_checkpoint, save_checkpoint)
from .synth import (SynthConfig, SyntheticSequence, generate_default_sequence,
                    generate_sequence, mls_affine_deform,
                    mls_affine_deform_points)
from .tracker import (TrackerConfig, build_pyramid, cycle_loss,
                      estimate_global_affine, local_refine, run_cycle,
                      track_sequence)
from .io import load_pnm, load_track, save_pnm, save_track

__version__ = "0.1.0"
