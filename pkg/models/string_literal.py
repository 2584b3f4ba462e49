"""
StringLiteral module: character-RNN encoder/decoder for string fields
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from core.diff import UNIFORM01, celu, init
from models.gru import GruCell
from models.layers import Dense
from models.vocabulary import EOS_INDEX, Vocabulary
from utils.errors import ShapeError

CHAR_EMBED_DIM = 16
DEFAULT_MAX_LEN = 64


@dataclass
class StringDecodeResult:
    """Per-string decoder losses; nats are zero past each string's EOS"""

    loss: torch.Tensor
    token_nats: torch.Tensor
    mask: torch.Tensor

    @property
    def token_counts(self) -> torch.Tensor:
        return self.mask.sum(dim=1)


def choose_inputs(ground_truth: torch.Tensor, sampled_fn, p_gt: float,
                  generator: Optional[torch.Generator]) -> torch.Tensor:
    """
    Scheduled-sampling input selection, one Bernoulli draw per row and timestep

    p_gt = 1 is teacher forcing, p_gt = 0 is always sampling.
    """
    if p_gt >= 1.0:
        return ground_truth
    sampled = sampled_fn()
    if p_gt <= 0.0:
        return sampled
    keep = torch.rand(ground_truth.shape[0], generator=generator) < p_gt
    if ground_truth.dim() > 1:
        keep = keep.unsqueeze(-1)
    return torch.where(keep, ground_truth, sampled)


class StringLiteralModule(nn.Module):
    """Character embedding shared by a GRU encoder and a GRU decoder"""

    def __init__(self, vocab: Vocabulary, latent_dim: int, state_dim: Optional[int] = None,
                 embed_dim: int = CHAR_EMBED_DIM, generator: Optional[torch.Generator] = None):
        super().__init__()
        state_dim = state_dim or latent_dim
        self.vocab = vocab
        self.latent_dim = latent_dim
        self.state_dim = state_dim
        self.embedding = nn.Parameter(init(UNIFORM01, (vocab.size, embed_dim), generator))
        self.encoder_cell = GruCell(embed_dim, state_dim, generator)
        self.encoder_out = Dense(state_dim, latent_dim, celu, generator)
        self.decoder_init = Dense(latent_dim, state_dim, celu, generator)
        self.decoder_cell = GruCell(embed_dim, state_dim, generator)
        self.projection = Dense(state_dim, vocab.size, None, generator)

    def encode(self, strings: Sequence[str]) -> torch.Tensor:
        """
        Embed a batch of strings

        Each string is consumed character by character and then the EOS token,
        starting from a zero state.

        Returns:
            torch.Tensor: (B, latent_dim) embeddings
        """
        tokens, mask = self.vocab.batch(strings)
        h = self.embedding.new_zeros(len(strings), self.state_dim)
        for t in range(tokens.shape[1]):
            h_next = self.encoder_cell(self.embedding[tokens[:, t]], h)
            h = torch.where(mask[:, t : t + 1], h_next, h)
        return self.encoder_out(h)

    def decode_loss(self, embeddings: torch.Tensor, targets: Sequence[str], p_gt: float = 1.0,
                    generator: Optional[torch.Generator] = None) -> StringDecodeResult:
        """
        Cross-entropy of each target string given its embedding

        The t-th character is predicted from the state after t inputs. The next
        input is the ground-truth character with probability p_gt, else a sample
        from the decoder's own softmax. Each string's loss is its mean nats over
        len + 1 tokens, so every string field weighs 1.0 regardless of length.
        """
        if embeddings.shape != (len(targets), self.latent_dim):
            raise ShapeError(f"expected embeddings ({len(targets)}, {self.latent_dim}), "
                             f"got {tuple(embeddings.shape)}")
        tokens, mask = self.vocab.batch(targets)
        h = self.decoder_init(embeddings)
        nats: List[torch.Tensor] = []
        steps = tokens.shape[1]
        for t in range(steps):
            log_probs = F.log_softmax(self.projection(h), dim=-1)
            nats.append(-log_probs.gather(1, tokens[:, t : t + 1]).squeeze(1))
            if t == steps - 1:
                break
            inputs = choose_inputs(
                tokens[:, t],
                lambda: torch.multinomial(log_probs.detach().exp(), 1, generator=generator).squeeze(1),
                p_gt,
                generator,
            )
            h_next = self.decoder_cell(self.embedding[inputs], h)
            h = torch.where(mask[:, t + 1 : t + 2], h_next, h)
        token_nats = torch.stack(nats, dim=1) * mask
        loss = token_nats.sum(dim=1) / mask.sum(dim=1)
        return StringDecodeResult(loss=loss, token_nats=token_nats, mask=mask)

    def generate(self, embeddings: torch.Tensor, generator: Optional[torch.Generator] = None,
                 max_len: int = DEFAULT_MAX_LEN, argmax: bool = False) -> List[str]:
        """Sample strings until EOS or max_len characters"""
        if max_len <= 0:
            raise ValueError(f"max_len must be positive, got {max_len}")
        batch = embeddings.shape[0]
        out = torch.full((batch, max_len), EOS_INDEX, dtype=torch.long)
        done = torch.zeros(batch, dtype=torch.bool)
        h = self.decoder_init(embeddings)
        for t in range(max_len):
            logits = self.projection(h)
            if argmax:
                token = logits.argmax(dim=-1)
            else:
                token = torch.multinomial(F.softmax(logits, dim=-1), 1, generator=generator).squeeze(1)
            token = torch.where(done, torch.full_like(token, EOS_INDEX), token)
            out[:, t] = token
            done |= token == EOS_INDEX
            if bool(done.all()):
                break
            h = self.decoder_cell(self.embedding[token], h)
        return [self.vocab.decode(row.tolist()) for row in out]


def string_encode(module: StringLiteralModule, s: str) -> torch.Tensor:
    return module.encode([s])[0]


def string_decode_loss(module: StringLiteralModule, embedding: torch.Tensor, target: str,
                       p_gt: float = 1.0, generator: Optional[torch.Generator] = None):
    """Single-string form: (loss in nats, per-token nats)"""
    result = module.decode_loss(embedding.unsqueeze(0), [target], p_gt, generator)
    count = int(result.token_counts[0])
    return result.loss[0], result.token_nats[0, :count]
