"""
ScalarTuple module: jointly models the float fields with on-the-fly PCA whitening
"""

import logging
from typing import Optional, Tuple

import torch
from torch import nn

from core.diff import ensure_finite
from models.layers import Dense
from utils.errors import DataError, NonFiniteError, ShapeError

logger = logging.getLogger(__name__)

MOVING_AVERAGE_DECAY = 0.999
WHITENING_EPSILON = 1e-5


class ScalarTupleModule(nn.Module):
    """
    Keeps a moving mean and covariance of the scalar fields and whitens them with
    x_w = (x - mu) U D^(-1/2), where U D V^T = Sigma + eps I.

    The encoder is a sigmoid layer on the whitened values, the decoder a linear
    layer predicting them back.
    """

    def __init__(self, n_scalars: int, latent_dim: int, decay: float = MOVING_AVERAGE_DECAY,
                 epsilon: float = WHITENING_EPSILON, generator: Optional[torch.Generator] = None):
        super().__init__()
        self.n_scalars = n_scalars
        self.latent_dim = latent_dim
        self.decay = decay
        self.epsilon = epsilon
        self.register_buffer("mean", torch.zeros(n_scalars))
        self.register_buffer("cov", torch.eye(n_scalars))
        self.register_buffer("updates", torch.zeros((), dtype=torch.long))
        self.encoder = Dense(n_scalars, latent_dim, torch.sigmoid, generator)
        self.decoder = Dense(latent_dim, n_scalars, None, generator)
        self._factors: Optional[Tuple[torch.Tensor, torch.Tensor]] = None
        self.register_load_state_dict_post_hook(lambda module, _keys: module._invalidate())

    def _invalidate(self) -> None:
        self._factors = None

    @property
    def initialized(self) -> bool:
        return int(self.updates) > 0

    def factors(self) -> Tuple[torch.Tensor, torch.Tensor]:
        """Cached (U, D) of Sigma + eps I, recomputed after every stats change"""
        if self._factors is None:
            if not self.initialized:
                raise DataError("scalar statistics are not initialized; seed or update them first")
            if not (torch.isfinite(self.mean).all() and torch.isfinite(self.cov).all()):
                raise NonFiniteError("non-finite scalar moving statistics")
            regularized = self.cov + self.epsilon * torch.eye(self.n_scalars, dtype=self.cov.dtype)
            u, d, _ = torch.linalg.svd(regularized)
            self._factors = (u, d)
        return self._factors

    def seed_stats(self, mean: torch.Tensor, cov: torch.Tensor) -> None:
        """Set explicit starting statistics (counts as one update)"""
        with torch.no_grad():
            self.mean.copy_(torch.as_tensor(mean, dtype=self.mean.dtype))
            cov = torch.as_tensor(cov, dtype=self.cov.dtype)
            self.cov.copy_((cov + cov.T) / 2)
            self.updates.fill_(max(int(self.updates), 1))
        self._invalidate()

    def update_stats(self, batch: torch.Tensor) -> None:
        """
        mu <- a mu + (1 - a) mu_B and Sigma <- a Sigma + (1 - a) cov(B)

        The first update without a seed adopts the batch statistics directly.
        """
        if batch.dim() != 2 or batch.shape[1] != self.n_scalars:
            raise ShapeError(f"expected (B, {self.n_scalars}) scalars, got {tuple(batch.shape)}")
        if batch.shape[0] < 2:
            raise DataError("scalar statistics need a batch of at least 2 rows")
        with torch.no_grad():
            batch = batch.to(self.mean.dtype)
            batch_mean = batch.mean(dim=0)
            batch_cov = torch.cov(batch.T).reshape(self.n_scalars, self.n_scalars)
            ensure_finite(batch_cov, "scalar batch covariance")
            if not self.initialized:
                self.mean.copy_(batch_mean)
                self.cov.copy_(batch_cov)
            else:
                a = self.decay
                self.mean.mul_(a).add_((1 - a) * batch_mean)
                self.cov.mul_(a).add_((1 - a) * batch_cov)
            self.cov.copy_((self.cov + self.cov.T) / 2)
            self.updates.add_(1)
        self._invalidate()

    def whiten(self, x: torch.Tensor) -> torch.Tensor:
        u, d = self.factors()
        return ((x - self.mean) @ u) * d.rsqrt()

    def unwhiten(self, x_whitened: torch.Tensor) -> torch.Tensor:
        u, d = self.factors()
        return (x_whitened * d.sqrt()) @ u.T + self.mean

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        return self.encoder(self.whiten(x))

    def decode(self, embeddings: torch.Tensor) -> torch.Tensor:
        """Whitened prediction"""
        return self.decoder(embeddings)

    def decode_loss(self, embeddings: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        """Sum of squared errors over the whitened components, per row"""
        target = self.whiten(x)
        return ((self.decode(embeddings) - target) ** 2).sum(dim=-1)

    def generate(self, embeddings: torch.Tensor) -> torch.Tensor:
        return self.unwhiten(self.decode(embeddings))


def scalar_whiten(module: ScalarTupleModule, x: torch.Tensor) -> torch.Tensor:
    return module.whiten(x)


def scalar_decode_loss(module: ScalarTupleModule, embedding: torch.Tensor,
                       target: torch.Tensor) -> torch.Tensor:
    return module.decode_loss(embedding.unsqueeze(0), target.unsqueeze(0))[0]
