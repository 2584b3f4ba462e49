"""
Record generation for Record Weaver
Sampling from the latent moments, repeated encode/decode and latent interpolation
"""

import logging
from dataclasses import dataclass
from typing import List, Mapping, Optional, Sequence, Union

import torch

from metrics.text_metrics import MalformedRecord
from models.record_model import Record, RecordModel
from training.latent_tracker import LatentMomentTracker

logger = logging.getLogger(__name__)

GeneratedRecord = Union[Record, MalformedRecord]
DECODE_BATCH = 500


def _decode_in_chunks(model: RecordModel, latents: torch.Tensor, generator: Optional[torch.Generator],
                      argmax: bool, batch_size: int) -> List[GeneratedRecord]:
    out: List[GeneratedRecord] = []
    for start in range(0, latents.shape[0], batch_size):
        out.extend(model.decode(latents[start : start + batch_size], generator, argmax))
    return out


@torch.no_grad()
def generate(model: RecordModel, tracker: LatentMomentTracker, generator: Optional[torch.Generator],
             n: int, argmax: bool = False, batch_size: int = DECODE_BATCH) -> List[GeneratedRecord]:
    """Decode n latents drawn from N(mean, cov) of the tracker"""
    if n <= 0:
        return []
    latents = tracker.sample(n, generator)
    return _decode_in_chunks(model, latents, generator, argmax, batch_size)


@torch.no_grad()
def encode_mean(model: RecordModel, records: Sequence[Mapping], batch_size: int = DECODE_BATCH) -> torch.Tensor:
    chunks = [model.encode(records[start : start + batch_size])
              for start in range(0, len(records), batch_size)]
    return torch.cat(chunks, dim=0)


def repeated_encode_decode(model: RecordModel, records: Sequence[GeneratedRecord], n_rounds: int,
                           generator: Optional[torch.Generator] = None, argmax: bool = False,
                           batch_size: int = DECODE_BATCH) -> List[List[GeneratedRecord]]:
    """
    Rounds of x <- decode(mean(encode(x)))

    Round 0 is the input itself; n_rounds counts it. Malformed entries stay
    malformed in every later round.
    """
    if n_rounds < 1:
        raise ValueError(f"n_rounds must be at least 1, got {n_rounds}")
    rounds: List[List[GeneratedRecord]] = [list(records)]
    for round_index in range(1, n_rounds):
        previous = rounds[-1]
        valid = [i for i, r in enumerate(previous) if not isinstance(r, MalformedRecord)]
        current: List[GeneratedRecord] = list(previous)
        if valid:
            latents = encode_mean(model, [previous[i] for i in valid], batch_size)
            decoded = _decode_in_chunks(model, latents, generator, argmax, batch_size)
            for i, record in zip(valid, decoded):
                current[i] = record
        malformed = len(current) - sum(not isinstance(r, MalformedRecord) for r in current)
        logger.debug("Round %d: %d records, %d malformed", round_index, len(current), malformed)
        rounds.append(current)
    return rounds


@dataclass(frozen=True)
class InterpolationPoint:
    weight: float
    record: GeneratedRecord


@torch.no_grad()
def interpolate(model: RecordModel, record_a: Mapping, record_b: Mapping, k: int,
                generator: Optional[torch.Generator] = None, argmax: bool = False) -> List[InterpolationPoint]:
    """
    Decode weight * mu(a) + (1 - weight) * mu(b) for k weights from 1 down to 0
    """
    if k < 2:
        raise ValueError(f"interpolation needs k >= 2, got {k}")
    mu = model.encode([record_a, record_b])
    weights = torch.linspace(1.0, 0.0, k, dtype=mu.dtype)
    latents = weights[:, None] * mu[0] + (1 - weights[:, None]) * mu[1]
    decoded = model.decode(latents, generator, argmax)
    return [InterpolationPoint(float(w), r) for w, r in zip(weights.tolist(), decoded)]
