"""
Step schedules for Record Weaver training
KL weight warm-up and cool-down, scheduled-sampling probability and the multiscale beta_max ramp
"""

from models.record_model import DecoderModes
from utils.config import TrainConfig


def _interpolate(start: float, end: float, step: int, first: int, last: int) -> float:
    fraction = (step - first) / (last - first)
    return start + (end - start) * fraction


def beta_schedule(cfg: TrainConfig, step: int) -> float:
    """
    Piecewise-linear KL weight

    beta_start -> beta_mid over [0, warmup_steps], then beta_mid -> beta_end
    over [warmup_steps, steps], and beta_end afterward.
    """
    if step < 0:
        raise ValueError(f"step must be non-negative, got {step}")
    if step >= cfg.steps:
        return cfg.beta_end
    if step >= cfg.warmup_steps:
        return _interpolate(cfg.beta_mid, cfg.beta_end, step, cfg.warmup_steps, cfg.steps)
    return _interpolate(cfg.beta_start, cfg.beta_mid, step, 0, cfg.warmup_steps)


def ss_schedule(cfg: TrainConfig, step: int, mode: str = "ss") -> float:
    """Ground-truth input probability: 1 for tf, 0 for as, 1 -> 0 over warm-up for ss"""
    if step < 0:
        raise ValueError(f"step must be non-negative, got {step}")
    if mode == "tf":
        return 1.0
    if mode == "as":
        return 0.0
    if mode != "ss":
        raise ValueError(f"unknown sampling mode: {mode}")
    if step >= cfg.warmup_steps:
        return 0.0
    return 1.0 - step / cfg.warmup_steps


def beta_max_schedule(cfg: TrainConfig, step: int) -> float:
    """beta_max_start -> beta_max_end over warm-up, for multiscale training"""
    if step >= cfg.warmup_steps:
        return cfg.beta_max_end
    return _interpolate(cfg.beta_max_start, cfg.beta_max_end, step, 0, cfg.warmup_steps)


def decoder_modes(cfg: TrainConfig, step: int) -> DecoderModes:
    return DecoderModes(
        tuple_p_gt=ss_schedule(cfg, step, cfg.tuple_sampling),
        string_p_gt=ss_schedule(cfg, step, cfg.string_sampling),
    )
