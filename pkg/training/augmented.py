"""
Augmented-training latent pool
Latent vectors whose generated variants are mixed into later training batches
"""

import logging
from typing import Optional

import torch

from utils.errors import ConfigError, DataError, ShapeError

logger = logging.getLogger(__name__)


class AugmentedPool:
    """
    n_augmented latent vectors with their creation step

    After every augmented step each entry is reset with probability p_sampled
    to the sampled latent of a distinct example of the current batch, otherwise
    it moves on to the sampled latent of its own generated variant.
    """

    def __init__(self, size: int, p_sampled: float):
        if size <= 0:
            raise ConfigError(f"pool size must be positive, got {size}")
        if not 0 < p_sampled <= 1:
            raise ConfigError(f"p_sampled must lie in (0, 1], got {p_sampled}")
        self.size = size
        self.p_sampled = p_sampled
        self.latents: Optional[torch.Tensor] = None
        self.created = torch.zeros(size, dtype=torch.long)
        self.lifetime_sum = 0
        self.lifetime_count = 0

    @property
    def initialized(self) -> bool:
        return self.latents is not None

    @property
    def mean_lifetime(self) -> float:
        """Average steps between creation and reset over completed entries"""
        if not self.lifetime_count:
            return float("nan")
        return self.lifetime_sum / self.lifetime_count

    def _pick(self, batch_z: torch.Tensor, generator: Optional[torch.Generator]) -> torch.Tensor:
        if batch_z.shape[0] < self.size:
            raise DataError(f"pool of {self.size} needs at least as many batch examples, got {batch_z.shape[0]}")
        order = torch.randperm(batch_z.shape[0], generator=generator)[: self.size]
        return batch_z[order].detach().clone()

    def initialize(self, batch_z: torch.Tensor, step: int,
                   generator: Optional[torch.Generator] = None) -> None:
        """Fill the pool with sampled latents of distinct examples of the triggering batch"""
        self.latents = self._pick(batch_z, generator)
        self.created.fill_(step)
        logger.info("Augmented pool of %d latents initialized at step %d", self.size, step)

    def replace(self, batch_z: torch.Tensor, variant_z: torch.Tensor, step: int,
                generator: Optional[torch.Generator] = None,
                force_reset: Optional[torch.Tensor] = None) -> int:
        """
        Advance the pool after a training step

        Args:
            batch_z: Sampled latents of the real examples of the step
            variant_z: Sampled latents of the generated variants, one per entry
            force_reset: Entries that must be reset (e.g. their variant was unusable)

        Returns:
            int: Number of entries reset from the batch
        """
        if not self.initialized:
            raise DataError("pool is not initialized")
        if variant_z.shape != self.latents.shape:
            raise ShapeError(f"expected variant latents {tuple(self.latents.shape)}, got {tuple(variant_z.shape)}")
        reset = torch.rand(self.size, generator=generator) < self.p_sampled
        if force_reset is not None:
            reset |= force_reset
        fresh = self._pick(batch_z, generator)
        self.latents = torch.where(reset.unsqueeze(1), fresh, variant_z.detach())

        n_reset = int(reset.sum())
        if n_reset:
            self.lifetime_sum += int((step - self.created[reset]).sum())
            self.lifetime_count += n_reset
            self.created[reset] = step
        return n_reset


def simulate_pool_lifetimes(p_sampled: float, steps: int, size: int = 64,
                            generator: Optional[torch.Generator] = None) -> float:
    """
    Run the replacement process with one-dimensional dummy latents

    Returns:
        float: Empirical mean lifetime of pool entries
    """
    pool = AugmentedPool(size, p_sampled)
    dummy = torch.zeros(size, 1)
    pool.initialize(dummy, 0, generator)
    for step in range(1, steps + 1):
        pool.replace(dummy, dummy, step, generator)
    return pool.mean_lifetime
