from .niqe import NiqeModel, fit_aggd, fit_niqe_model, image_features, niqe, niqe_distance
from .quality import perceptual_index, psnr_y, ssim_y
from .report import QualityReport, QualityRow

__all__ = [
    "NiqeModel", "QualityReport", "QualityRow", "fit_aggd", "fit_niqe_model", "image_features",
    "niqe", "niqe_distance", "perceptual_index", "psnr_y", "ssim_y",
]
