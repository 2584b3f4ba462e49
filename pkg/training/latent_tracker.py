"""
Moving moments of the sampled latent vectors, used to draw latents for generation
"""

import logging
from typing import Dict, Optional

import torch

from core.diff import ensure_finite
from utils.errors import DataError, ShapeError

logger = logging.getLogger(__name__)

LATENT_DECAY = 0.999
JITTER_SCALE = 1e-6
JITTER_GROWTH = 10.0
JITTER_ESCALATIONS = 3


class LatentMomentTracker:
    """
    Exponential moving mean and covariance of z

    The first update adopts the batch moments; later ones blend them in with
    weight 1 - decay. Generation samples N(mean, cov) through a Cholesky factor.
    """

    def __init__(self, dim: int, decay: float = LATENT_DECAY):
        if not 0 < decay < 1:
            raise ValueError(f"decay must lie in (0, 1), got {decay}")
        self.dim = dim
        self.decay = decay
        self.mean = torch.zeros(dim)
        self.cov = torch.eye(dim)
        self.updates = 0
        self.samples_seen = 0

    @classmethod
    def standard_normal(cls, dim: int) -> "LatentMomentTracker":
        """Tracker fixed at the prior N(0, I)"""
        tracker = cls(dim)
        tracker.set_moments(torch.zeros(dim), torch.eye(dim))
        return tracker

    def update(self, z: torch.Tensor) -> None:
        if z.dim() != 2 or z.shape[1] != self.dim:
            raise ShapeError(f"expected latents (B, {self.dim}), got {tuple(z.shape)}")
        if z.shape[0] < 2:
            raise DataError("latent moments need a batch of at least 2 rows")
        z = z.detach()
        batch_mean = z.mean(dim=0)
        batch_cov = torch.cov(z.T).reshape(self.dim, self.dim)
        ensure_finite(batch_cov, "latent batch covariance")
        if self.updates == 0:
            self.mean = batch_mean.clone()
            self.cov = batch_cov.clone()
        else:
            a = self.decay
            self.mean = a * self.mean.to(z.dtype) + (1 - a) * batch_mean
            self.cov = a * self.cov.to(z.dtype) + (1 - a) * batch_cov
        self.cov = (self.cov + self.cov.T) / 2
        self.updates += 1
        self.samples_seen += z.shape[0]

    def set_moments(self, mean: torch.Tensor, cov: torch.Tensor) -> None:
        """Force the moments, e.g. mean 0 and identity for prior sampling"""
        cov = torch.as_tensor(cov)
        if cov.shape != (self.dim, self.dim):
            raise ShapeError(f"expected a ({self.dim}, {self.dim}) covariance, got {tuple(cov.shape)}")
        self.mean = torch.as_tensor(mean).clone()
        self.cov = (cov + cov.T) / 2
        self.updates = max(self.updates, 1)
        self.samples_seen = max(self.samples_seen, self.dim)

    def cholesky(self) -> torch.Tensor:
        """Lower Cholesky factor of cov + jitter I, escalating the jitter on failure"""
        if self.updates == 0:
            raise DataError("latent tracker has no updates; train before generating")
        if self.samples_seen < self.dim:
            logger.warning("Latent covariance estimated from %d samples for %d dimensions",
                           self.samples_seen, self.dim)
        trace = float(torch.diagonal(self.cov).sum())
        jitter = JITTER_SCALE * (trace / self.dim if trace > 0 else 1.0)
        eye = torch.eye(self.dim, dtype=self.cov.dtype)
        for attempt in range(JITTER_ESCALATIONS + 1):
            factor, info = torch.linalg.cholesky_ex(self.cov + jitter * eye)
            if int(info) == 0:
                if attempt:
                    logger.warning("Latent covariance needed jitter %.3g", jitter)
                return factor
            logger.debug("Cholesky failed with jitter %.3g", jitter)
            jitter *= JITTER_GROWTH
        raise DataError("latent covariance is not positive definite even with jitter")

    def sample(self, n: int, generator: Optional[torch.Generator] = None) -> torch.Tensor:
        """n latent vectors from N(mean, cov)"""
        factor = self.cholesky()
        eps = torch.randn((n, self.dim), generator=generator, dtype=factor.dtype)
        return self.mean.to(factor.dtype) + eps @ factor.T

    def state_dict(self) -> Dict[str, torch.Tensor]:
        return {
            "mean": self.mean,
            "cov": self.cov,
            "decay": torch.tensor(self.decay),
            "updates": torch.tensor(self.updates),
            "samples_seen": torch.tensor(self.samples_seen),
        }

    def load_state_dict(self, state: Dict[str, torch.Tensor]) -> None:
        mean = state["mean"]
        if mean.shape != (self.dim,):
            raise ShapeError(f"tracker state has dimension {mean.shape[0]}, expected {self.dim}")
        self.mean = mean.clone()
        self.cov = state["cov"].clone()
        self.decay = float(state["decay"])
        self.updates = int(state["updates"])
        self.samples_seen = int(state["samples_seen"])
