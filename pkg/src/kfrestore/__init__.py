"""Keyframe-guided face restoration for compressed video streams."""
from .errors import *  # noqa: F401,F403
from .geometry import (DeformationField, align_face, landmark_distance, mls_build_field,
                       mls_deform_point, render_landmark_mask, warp_image)
from .keyframe_store import KeyframeStore, Policy
from .metrics import psnr, ssim

__version__ = "0.1.0"
