"""Estimate a surgically removed region by masking a preoperative volume
until it looks like the postoperative one.

The similarity is multi-scale SSIM with squared cross-correlation mixed into
the contrast term, plus a smoothness penalty on the mask. Everything runs on
seeded synthetic phantoms.
"""
from .volume import (CropRegion, DegenerateVolumeWarning, NonFiniteVolumeError, Volume3,
                     VolumeFormatError, VolumeSizeError, crop, downsample2, gaussian_filter,
                     normalize_intensity, read_volume, write_volume)
from .phantom import PhantomSpec, generate, generate_postop, generate_preop, generate_removal_mask
from .registration import RigidTransform, ncc, register_rigid, resample
from .similarity import (VARIANTS, LossReport, MaskField, MsssimParams, apply_mask,
                         loss_msssim_cscc, loss_smooth, msssim_loss, scc, ssim_components,
                         total_loss_and_gradient)
from .optimize import OptimConfig, OptimizationError, optimize_mask, threshold_mask
from .metrics import (asd, evaluate_case, hd95, overlap_counts, overlap_metrics, summarize,
                      surface_distances)
from .mesh import TriMesh, marching_cubes, write_obj, write_stl
from .pipeline import ConfigError, PipelineConfig, run_ablation, run_pipeline

__version__ = "0.1.0"
