from .extractor import ConvExtractor, FeatureExtractor, FeaturePyramid, test_extractor
from .network import (asff_fuse, discriminator_scores, init_weights, multiscale_scores,
                      restore_forward, zero_residual)
from .ops import adain, conv2d, sft_modulate, spectral_normalize
from .weights import WeightStore

__all__ = [
    "ConvExtractor", "FeatureExtractor", "FeaturePyramid", "WeightStore", "adain", "asff_fuse",
    "conv2d", "discriminator_scores", "init_weights", "multiscale_scores", "restore_forward",
    "sft_modulate", "spectral_normalize", "test_extractor", "zero_residual",
]
