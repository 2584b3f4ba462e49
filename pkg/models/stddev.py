"""
Standard-deviation network: maps the mean latent vector to the posterior's diagonal sigma
"""

from typing import Optional

import torch
from torch import nn

from core.diff import ZEROS, InitSpec, celu_capped
from models.layers import Dense

HIDDEN_LAYERS = 3
INITIAL_BIAS = -5.0


class StdDevNetwork(nn.Module):
    """Three capped-CELU layers topped by a sigmoid layer starting at sigmoid(-5)"""

    def __init__(self, latent_dim: int, generator: Optional[torch.Generator] = None):
        super().__init__()
        self.latent_dim = latent_dim
        self.hidden = nn.Sequential(
            *(Dense(latent_dim, latent_dim, celu_capped, generator) for _ in range(HIDDEN_LAYERS))
        )
        self.output = Dense(latent_dim, latent_dim, torch.sigmoid, generator,
                            weight_init=ZEROS, bias_init=InitSpec.constant(INITIAL_BIAS))

    def forward(self, mu: torch.Tensor) -> torch.Tensor:
        return self.output(self.hidden(mu))
