"""
Multiscale KL weights: one (beta_i, stddev network) pair per level
"""

import logging
from dataclasses import dataclass
from typing import List, Optional

import torch
from torch import nn

from models.stddev import StdDevNetwork
from training.objectives import DEFAULT_GAMMA, ObjectiveMode, ObjectiveWeights
from utils.config import TrainConfig
from utils.errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass
class Level:
    """
    One KL weight level

    beta is the level's weight at beta_max = 1; the effective weight is
    beta * beta_max(step).
    """

    index: int
    beta: float
    stddev: StdDevNetwork
    capacity: Optional[float] = None
    p_sampled: Optional[float] = None


class MultiscaleBank(nn.Module):
    """Levels in increasing beta order; batch t trains level t mod n"""

    def __init__(self, levels: List[Level], mode: ObjectiveMode = ObjectiveMode.STANDARD,
                 gamma: float = DEFAULT_GAMMA):
        super().__init__()
        if not levels:
            raise ConfigError("a multiscale bank needs at least one level")
        betas = [level.beta for level in levels]
        if any(later <= earlier for earlier, later in zip(betas, betas[1:])):
            raise ConfigError(f"level betas must be strictly increasing, got {betas}")
        self.levels = levels
        self.mode = mode
        self.gamma = gamma
        self.stddev_networks = nn.ModuleList(level.stddev for level in levels)

    def __len__(self) -> int:
        return len(self.levels)

    def level_for_step(self, step: int) -> Level:
        return self.levels[step % len(self.levels)]

    def weights(self, level: Level, beta_max: float) -> ObjectiveWeights:
        if beta_max <= 0:
            raise ValueError(f"beta_max must be positive, got {beta_max}")
        return ObjectiveWeights(
            beta=level.beta * beta_max,
            mode=self.mode,
            capacity=level.capacity or 0.0,
            gamma=self.gamma,
        )


def _linear_spacing(n: int) -> List[float]:
    return [(i + 1) / n for i in range(n)]


def _geometric_spacing(n: int, ratio: float) -> List[float]:
    if not 0 < ratio < 1:
        raise ConfigError(f"geometric ratio must lie in (0, 1), got {ratio}")
    return [ratio ** (n - 1 - i) for i in range(n)]


def p_sampled_levels(cfg: TrainConfig, n: int) -> List[float]:
    """Per-level p_sampled, larger for larger beta"""
    if cfg.p_sampled_spacing == "linear":
        return [cfg.p_min + (i + 1) * (cfg.p_max - cfg.p_min) / n for i in range(n)]
    if cfg.p_sampled_spacing == "geometric":
        return [cfg.p_max * (cfg.p_min / cfg.p_max) ** ((n - 1 - i) / n) for i in range(n)]
    return [cfg.p_sampled] * n


def multiscale_assign(cfg: TrainConfig, latent_dim: int,
                      generator: Optional[torch.Generator] = None) -> MultiscaleBank:
    """
    Build the level bank for a training config

    linear: beta_i = (i + 1) / n; geometric, inverted and capacity use
    beta_i = ratio ** (n - 1 - i); both relative to beta_max. Capacity levels
    carry C_i = capacity_min + i * capacity_increment. With multiscale off the
    bank holds a single level whose beta follows the ordinary schedule.
    """
    if cfg.multiscale == "off":
        level = Level(0, 1.0, StdDevNetwork(latent_dim, generator), p_sampled=cfg.p_sampled)
        return MultiscaleBank([level])
    if cfg.beta_max_start <= 0 or cfg.beta_max_end <= 0:
        raise ConfigError("beta_max must be positive")

    n = cfg.n_kl_weight
    spacing = _linear_spacing(n) if cfg.multiscale == "linear" else _geometric_spacing(n, cfg.ratio)
    mode = {
        "inverted": ObjectiveMode.INVERTED,
        "capacity": ObjectiveMode.CAPACITY,
    }.get(cfg.multiscale, ObjectiveMode.STANDARD)
    p_levels = p_sampled_levels(cfg, n)

    levels = []
    for i, beta in enumerate(spacing):
        capacity = cfg.capacity_min + i * cfg.capacity_increment if mode == ObjectiveMode.CAPACITY else None
        levels.append(Level(i, beta, StdDevNetwork(latent_dim, generator), capacity, p_levels[i]))
    logger.info("Multiscale bank: %d %s levels, beta_0=%.5g beta_%d=%.5g (x beta_max)",
                n, cfg.multiscale, spacing[0], n - 1, spacing[-1])
    return MultiscaleBank(levels, mode, cfg.gamma)
