"""Neural 3D lookup tables for photorealistic video color grading.

Learn a stylized lattice from one content keyframe and one style image by
test-time optimization, then apply it to whole clips at table-lookup
speed. The lattice is a standard .cube-compatible 3D LUT, so results also
work in external grading tools.

Typical flow: ``pretrain`` a weight predictor once on an image corpus,
``finetune`` it briefly against a clip's keyframe and a style image (or
skip straight to the zero-shot prediction), then ``apply_image`` or
``stylize_video`` with the resulting :class:`Lut3D`.
"""

from .errors import (CheckpointError, CubeParseError, NlutError,
                     NumericError)
from .lut3d import (Image, Lut3D, Rgb, apply_color, apply_image,
                    make_identity, read_cube, read_cube_file, write_cube,
                    write_cube_file)
from .clut import (BasisBank, Clut, TransformMatrices, combine_basis,
                   init_bank, reconstruct, reconstruct_residual)
from .autodiff import Tensor, backward
from .features import (PROFILES, FeatureExtractor, FeaturePyramid,
                       build_extractor, extract)
from .network import (NlutModel, forward_stylize, init_model,
                      lut_from_weights, predict_weights)
from .losses import (LossLog, LossReport, LossWeights, content_loss,
                     mono_reg, monotonicity_penalty, smooth_reg, smoothness,
                     style_loss, total_loss)
from .trainer import (TrainConfig, finetune, load_checkpoint, pretrain,
                      save_checkpoint)
from .video import (BENCH_RESOLUTIONS, BenchReport, ConsistencyReport,
                    FrameSequence, bench, consistency_check, load_frames,
                    load_image, resize_bilinear, save_frames, save_image,
                    stylize_video)

__version__ = "0.1.0"

__all__ = [
    "NlutError", "CubeParseError", "CheckpointError", "NumericError",
    "Rgb", "Image", "Lut3D", "make_identity", "apply_color", "apply_image",
    "read_cube", "read_cube_file", "write_cube", "write_cube_file",
    "Clut", "TransformMatrices", "BasisBank", "combine_basis", "init_bank",
    "reconstruct", "reconstruct_residual",
    "Tensor", "backward",
    "PROFILES", "FeatureExtractor", "FeaturePyramid", "build_extractor",
    "extract",
    "NlutModel", "init_model", "predict_weights", "lut_from_weights",
    "forward_stylize",
    "LossWeights", "LossReport", "LossLog", "style_loss", "content_loss",
    "smooth_reg", "mono_reg", "smoothness", "monotonicity_penalty",
    "total_loss",
    "TrainConfig", "pretrain", "finetune", "save_checkpoint",
    "load_checkpoint",
    "FrameSequence", "load_frames", "save_frames", "load_image",
    "save_image", "resize_bilinear", "stylize_video", "consistency_check",
    "ConsistencyReport", "bench", "BenchReport", "BENCH_RESOLUTIONS",
    "__version__",
]
