"""
SimpleTuple module for the pass-through model
The encoder concatenates child embeddings; the decoder hands its input to every child unchanged
"""

from typing import Optional

import torch
from torch import nn

from core.diff import celu
from models.layers import Dense
from utils.errors import ShapeError


class SimpleTupleModule(nn.Module):

    def __init__(self, arity: int, latent_dim: int, generator: Optional[torch.Generator] = None):
        super().__init__()
        self.arity = arity
        self.latent_dim = latent_dim
        self.merge = Dense(arity * latent_dim, latent_dim, celu, generator)

    def encode(self, children: torch.Tensor) -> torch.Tensor:
        if children.dim() != 3 or children.shape[1:] != (self.arity, self.latent_dim):
            raise ShapeError(f"expected child embeddings (B, {self.arity}, {self.latent_dim}), "
                             f"got {tuple(children.shape)}")
        return self.merge(children.reshape(children.shape[0], -1))

    def decode(self, embeddings: torch.Tensor) -> torch.Tensor:
        return embeddings.unsqueeze(1).expand(-1, self.arity, -1)
