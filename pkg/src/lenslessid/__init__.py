"""Desk-scale differentiable lensless imaging and encoded-domain face
verification: optics simulation, joint mask+network training, alignment,
privacy attacks, and verification protocols."""

from .align import AlignConfig, CenterEstimate, recenter_crop, train_center_detector
from .attack import (AdmmConfig, AttackReport, DecoderConfig, admm_deconvolve,
                     surrogate_psf_attack, train_decoder_attack)
from .autodiff import Tensor, grad_check
from .errors import LenslessIdError
from .losses import ArcFaceHead, RkdConfig, arcface_loss, combined_objective, mask_penalty, rkd_loss
from .metrics import psnr, ssim
from .networks import NetConfig, Network, embedding_net_config
from .optics import (MaskParams, NoiseConfig, PSF, Raster, add_noise, form_capture,
                     simulate_psf)
from .protocols import (EvalResult, PairProtocol, ablation_matrix, make_pair_protocol,
                        rgb_model_on_lensless, snr_sweep, verify_pairs)
from .scene import AugmentSpec, GeometryConfig, SceneSample, load_image_folder, make_toy_dataset, project
from .train import (Checkpoint, CurriculumState, StudentConfig, TrainConfig,
                    curriculum_value, load_checkpoint, save_checkpoint, train_student,
                    train_teacher)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
