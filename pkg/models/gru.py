"""
GRU cell with a capped-CELU candidate activation
"""

from typing import Optional

import torch
from torch import nn

from core.diff import ONES, VARIANCE_SCALED, ZEROS, celu_capped, init
from utils.errors import ShapeError


class GruCell(nn.Module):
    """
    h_t = z * h_{t-1} + (1 - z) * c with
    z = sigmoid(x W_z + h U_z + b_z), r = sigmoid(x W_r + h U_r + b_r),
    c = celu_capped(x W_h + (r * h) U_h + b_h)

    The update gate starts with zero weights and unit bias; the reset and
    candidate weights are variance-scaled with zero bias.
    """

    def __init__(self, input_dim: int, state_dim: int, generator: Optional[torch.Generator] = None):
        super().__init__()
        self.input_dim = input_dim
        self.state_dim = state_dim
        self.W_z = nn.Parameter(init(ZEROS, (input_dim, state_dim)))
        self.U_z = nn.Parameter(init(ZEROS, (state_dim, state_dim)))
        self.b_z = nn.Parameter(init(ONES, (state_dim,)))
        self.W_r = nn.Parameter(init(VARIANCE_SCALED, (input_dim, state_dim), generator))
        self.U_r = nn.Parameter(init(VARIANCE_SCALED, (state_dim, state_dim), generator))
        self.b_r = nn.Parameter(init(ZEROS, (state_dim,)))
        self.W_h = nn.Parameter(init(VARIANCE_SCALED, (input_dim, state_dim), generator))
        self.U_h = nn.Parameter(init(VARIANCE_SCALED, (state_dim, state_dim), generator))
        self.b_h = nn.Parameter(init(ZEROS, (state_dim,)))

    def gates(self, x: torch.Tensor, h_prev: torch.Tensor):
        z = torch.sigmoid(x @ self.W_z + h_prev @ self.U_z + self.b_z)
        r = torch.sigmoid(x @ self.W_r + h_prev @ self.U_r + self.b_r)
        return z, r

    def forward(self, x: torch.Tensor, h_prev: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.input_dim or h_prev.shape[-1] != self.state_dim:
            raise ShapeError(
                f"GRU cell expects input {self.input_dim} / state {self.state_dim}, "
                f"got {x.shape[-1]} / {h_prev.shape[-1]}"
            )
        z, r = self.gates(x, h_prev)
        c = celu_capped(x @ self.W_h + (r * h_prev) @ self.U_h + self.b_h)
        return z * h_prev + (1 - z) * c


def gru_step(cell: GruCell, x_t: torch.Tensor, h_prev: torch.Tensor) -> torch.Tensor:
    return cell(x_t, h_prev)
