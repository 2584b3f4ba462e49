"""
Tuple module: bidirectional GRU encoder and autoregressive GRU decoder over child embeddings
"""

from dataclasses import dataclass
from typing import Optional

import torch
from torch import nn

from core.diff import celu, init, ZEROS
from models.gru import GruCell
from models.layers import Dense
from models.string_literal import choose_inputs
from utils.errors import ShapeError


@dataclass
class TupleDecodeResult:
    """Generated child embeddings (B, K, d) and per-child skew loss (B, K)"""

    children: torch.Tensor
    skew: Optional[torch.Tensor]


class TupleModule(nn.Module):
    """
    Every tuple element owns its own GRU cells: one per encoder direction and
    one in the decoder, which also carries a head emitting that child's embedding.
    """

    def __init__(self, arity: int, latent_dim: int, state_dim: Optional[int] = None,
                 generator: Optional[torch.Generator] = None):
        super().__init__()
        state_dim = state_dim or latent_dim
        self.arity = arity
        self.latent_dim = latent_dim
        self.state_dim = state_dim
        self.initial_state = nn.Parameter(init(ZEROS, (state_dim,)))
        self.forward_cells = nn.ModuleList(GruCell(latent_dim, state_dim, generator) for _ in range(arity))
        self.backward_cells = nn.ModuleList(GruCell(latent_dim, state_dim, generator) for _ in range(arity))
        self.merge = Dense(2 * state_dim, latent_dim, celu, generator)
        self.decoder_init = Dense(latent_dim, state_dim, celu, generator)
        self.decoder_cells = nn.ModuleList(GruCell(latent_dim, state_dim, generator) for _ in range(arity))
        self.heads = nn.ModuleList(Dense(state_dim, latent_dim, celu, generator) for _ in range(arity))

    def _check(self, children: torch.Tensor) -> None:
        if children.dim() != 3 or children.shape[1] != self.arity or children.shape[2] != self.latent_dim:
            raise ShapeError(f"expected child embeddings (B, {self.arity}, {self.latent_dim}), "
                             f"got {tuple(children.shape)}")

    def encode(self, children: torch.Tensor) -> torch.Tensor:
        """Concatenate the final forward and backward states and merge them to one embedding"""
        self._check(children)
        batch = children.shape[0]
        h_fw = self.initial_state.expand(batch, -1)
        for k in range(self.arity):
            h_fw = self.forward_cells[k](children[:, k], h_fw)
        h_bw = self.initial_state.expand(batch, -1)
        for k in reversed(range(self.arity)):
            h_bw = self.backward_cells[k](children[:, k], h_bw)
        return self.merge(torch.cat([h_fw, h_bw], dim=-1))

    def decode(self, embeddings: torch.Tensor, ground_truth: Optional[torch.Tensor] = None,
               p_gt: float = 1.0, generator: Optional[torch.Generator] = None) -> TupleDecodeResult:
        """
        Emit one child embedding per element

        Element k's head reads the state before step k; the cell then advances on
        either the ground-truth child embedding (probability p_gt) or its own output.
        Without ground truth (generation) the decoder always feeds back its output.
        """
        if ground_truth is not None:
            self._check(ground_truth)
        h = self.decoder_init(embeddings)
        emitted = []
        for k in range(self.arity):
            out = self.heads[k](h)
            emitted.append(out)
            if ground_truth is None:
                step_input = out
            else:
                step_input = choose_inputs(ground_truth[:, k], lambda: out, p_gt, generator)
            h = self.decoder_cells[k](step_input, h)
        children = torch.stack(emitted, dim=1)
        skew = None
        if ground_truth is not None:
            skew = ((children - ground_truth) ** 2).mean(dim=-1)
        return TupleDecodeResult(children=children, skew=skew)


def tuple_encode(module: TupleModule, child_embeddings) -> torch.Tensor:
    """Single-record form taking a list of child embeddings in plan order"""
    if len(child_embeddings) != module.arity:
        raise ShapeError(f"expected {module.arity} child embeddings, got {len(child_embeddings)}")
    return module.encode(torch.stack(list(child_embeddings)).unsqueeze(0))[0]


def tuple_decode_loss(module: TupleModule, embedding: torch.Tensor, child_embeddings,
                      p_gt: float = 1.0, generator: Optional[torch.Generator] = None):
    """Single-record form: (generated child embeddings (K, d), skew loss per child (K,))"""
    truth = torch.stack(list(child_embeddings)).unsqueeze(0)
    result = module.decode(embedding.unsqueeze(0), truth, p_gt, generator)
    return result.children[0], result.skew[0]
