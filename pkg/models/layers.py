"""
Fully-connected layer used throughout the Record Weaver modules
"""

from typing import Callable, Optional

import torch
from torch import nn

from core.diff import VARIANCE_SCALED, ZEROS, InitSpec, init

Activation = Optional[Callable[[torch.Tensor], torch.Tensor]]


class Dense(nn.Module):
    """y = activation(x W + b) with W stored as (in, out)"""

    def __init__(self, in_dim: int, out_dim: int, activation: Activation = None,
                 generator: Optional[torch.Generator] = None,
                 weight_init: InitSpec = VARIANCE_SCALED, bias_init: InitSpec = ZEROS):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        self.weight = nn.Parameter(init(weight_init, (in_dim, out_dim), generator))
        self.bias = nn.Parameter(init(bias_init, (out_dim,), generator))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = x @ self.weight + self.bias
        return self.activation(y) if self.activation is not None else y
