"""Swap-corrected logit distillation at desk scale."""

from .analysis import correlation_diff, gap_report, prediction_distribution, topk_accuracy
from .logit_ops import (
    ConditionalSwapRule,
    SchemeParams,
    SwapRule,
    conditional_swap,
    label_smoothing_target,
    multi_swap,
    scale_ground_truth,
    swap_rate,
    swap_to_target,
)
from .losses import (
    DistillConfig,
    LossBreakdown,
    TemperatureSet,
    kd_loss,
    prediction_augment,
    schedule_gate,
    sld_loss,
    student_swap_loss,
    teacher_swap_loss,
)
from .numeric import cross_entropy, kl_divergence, softmax_temp

__version__ = "0.1.0"
