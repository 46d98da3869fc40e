"""Semi-supervised crowd counting with masked-consistency mean-teacher training."""

from .augment import MaskSpec, apply_mask, color_jitter, mask_to_output_grid, sample_mask, weak_augment
from .config import TrainConfig, load_config, resolve_config
from .data import PointAnnotations, SceneRecord, SplitSpec, load_annotations, make_split, resize_to_limit
from .density import (
    ClassMap,
    DensityMap,
    Partition,
    adaptive_kernel_density,
    build_partition,
    class_to_count,
    density_to_class,
    downsample_density,
    fixed_kernel_density,
)
from .evaluate import blur_probe, evaluate_records, mae_mse, mask_probe, predict_count, report
from .losses import (
    LossParts,
    LossWeights,
    clamp_teacher,
    dense_region_mask,
    pyramid_ssim_loss,
    rampup_weight,
    ssim_index,
    supervised_cls_loss,
    supervised_reg_loss,
    total_loss,
    tv_loss,
    unsup_cls_loss,
    unsup_reg_loss,
)
from .model import CountingModel, ModelConfig, build_model, ema_update, init_teacher, predict
from .synth import SceneSpec, gen_dataset, gen_scene
from .trainer import TrainData, TrainState, load_checkpoint, make_batches, save_checkpoint, train

__version__ = "0.1.0"
