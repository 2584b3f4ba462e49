"""
VAE objective for Record Weaver
KL divergence, reparameterization and the standard / inverted / capacity loss combinations
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Mapping, Optional, Sequence

import torch

from core.diff import ensure_finite
from models.record_model import DecoderModes, RecordModel
from models.stddev import StdDevNetwork
from utils.errors import DataError

DEFAULT_GAMMA = 128.0


class ObjectiveMode(str, Enum):
    STANDARD = "standard"
    INVERTED = "inverted"
    CAPACITY = "capacity"


@dataclass(frozen=True)
class ObjectiveWeights:
    """
    How reconstruction and KL combine

    standard: recon + beta * KL/d
    inverted: recon / beta + KL/d
    capacity: recon + gamma * max(KL/d - capacity/d, 0), capacity in nats
    """

    beta: float
    mode: ObjectiveMode = ObjectiveMode.STANDARD
    capacity: float = 0.0
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError(f"beta must be non-negative, got {self.beta}")
        if self.mode == ObjectiveMode.INVERTED and self.beta <= 0:
            raise ValueError("inverted objective needs a positive beta")


def combine(recon_avg, kl_per_dim, weights: ObjectiveWeights, latent_dim: int):
    """Works on tensors and on plain floats"""
    if weights.mode == ObjectiveMode.INVERTED:
        return recon_avg / weights.beta + kl_per_dim
    if weights.mode == ObjectiveMode.CAPACITY:
        excess = kl_per_dim - weights.capacity / latent_dim
        if isinstance(excess, torch.Tensor):
            excess = torch.clamp(excess, min=0.0)
        else:
            excess = max(excess, 0.0)
        return recon_avg + weights.gamma * excess
    return recon_avg + weights.beta * kl_per_dim


def kl_diag_gaussian(mu: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, diag sigma^2) || N(0, I)) in nats, summed over the last dimension"""
    if bool((sigma <= 0).any()):
        raise ValueError("sigma must be strictly positive")
    var = sigma ** 2
    return 0.5 * (mu ** 2 + var - 1.0 - torch.log(var)).sum(dim=-1)


def reparameterize(mu: torch.Tensor, sigma: torch.Tensor, generator: Optional[torch.Generator] = None,
                   eps: Optional[torch.Tensor] = None) -> torch.Tensor:
    """z = mu + sigma * eps with eps ~ N(0, I) unless given"""
    if bool((sigma <= 0).any()):
        raise ValueError("sigma must be strictly positive")
    if eps is None:
        eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
    return mu + sigma * eps


@dataclass
class LossReport:
    """Scalar summaries of one batch plus the graph-carrying total"""

    total: torch.Tensor
    recon: Dict[str, float]
    skew: Dict[str, float]
    recon_avg: float
    kl: float
    kl_per_dim: float
    bpc: float
    weights: ObjectiveWeights
    latent_dim: int
    latents: Optional[torch.Tensor] = field(default=None, repr=False)
    mu: Optional[torch.Tensor] = field(default=None, repr=False)

    @property
    def loss(self) -> float:
        return float(self.total)

    @property
    def beta(self) -> float:
        return self.weights.beta

    def recombine(self) -> float:
        """Total recomputed from the reported components"""
        return float(combine(self.recon_avg, self.kl_per_dim, self.weights, self.latent_dim))

    def to_row(self) -> Dict[str, float]:
        return {"loss": self.loss, "bpc": self.bpc, "kl": self.kl, "beta": self.beta}


def reconstruction_average(recon: Mapping[str, torch.Tensor], skew: Mapping[str, torch.Tensor],
                           field_weights: Optional[Mapping[str, float]] = None,
                           skew_in_average: bool = True) -> torch.Tensor:
    """Weighted mean over children of (recon + skew), each already averaged over the batch"""
    field_weights = field_weights or {}
    total, weight_sum = 0.0, 0.0
    for name, value in recon.items():
        w = float(field_weights.get(name, 1.0))
        term = value
        if skew_in_average and name in skew:
            term = term + skew[name]
        total = total + w * term
        weight_sum += w
    if weight_sum <= 0:
        raise ValueError("field weights must sum to a positive value")
    return total / weight_sum


def vae_loss(model: RecordModel, records: Sequence[Mapping], weights: ObjectiveWeights,
             stddev_net: StdDevNetwork, modes: DecoderModes = DecoderModes(),
             generator: Optional[torch.Generator] = None, eps: Optional[torch.Tensor] = None,
             field_weights: Optional[Mapping[str, float]] = None, skew_in_average: bool = True,
             train: bool = True) -> LossReport:
    """
    Negative ELBO of a batch with the KL term measured per latent dimension

    In evaluation mode the decoders are teacher-forced and no graph is kept.

    Args:
        model: Encoder/decoder tree
        records: Non-empty batch
        weights: beta and objective mode
        stddev_net: Maps the mean latent vector to sigma
        modes: Scheduled-sampling probabilities (training only)
        generator: Stream for latent noise and scheduled sampling
        eps: Fixed latent noise, mainly for gradient checks

    Returns:
        LossReport: total carries the graph when train is True
    """
    if not records:
        raise DataError("cannot compute the loss of an empty batch")
    if not train:
        with torch.no_grad():
            return vae_loss(model, records, weights, stddev_net, DecoderModes.teacher_forcing(),
                            generator, eps, field_weights, skew_in_average, train=True)

    children = None if model.is_text else model.encode_children(records)
    mu = model.encode(records, children)
    sigma = stddev_net(mu)
    z = reparameterize(mu, sigma, generator, eps)
    reconstruction = model.reconstruct(z, records, modes, generator, children)

    recon = {name: value.mean() for name, value in reconstruction.recon.items()}
    skew = {name: value.mean() for name, value in reconstruction.skew.items()}
    recon_avg = reconstruction_average(recon, skew, field_weights, skew_in_average)
    kl = kl_diag_gaussian(mu, sigma).mean()
    kl_per_dim = kl / model.latent_dim
    total = combine(recon_avg, kl_per_dim, weights, model.latent_dim)
    ensure_finite(total, "vae_loss")

    tokens = float(reconstruction.string_tokens.sum()) if reconstruction.string_tokens is not None else 0.0
    bpc = float(reconstruction.string_nats.sum()) / tokens / math.log(2) if tokens > 0 else math.nan

    return LossReport(
        total=total,
        recon={k: float(v) for k, v in recon.items()},
        skew={k: float(v) for k, v in skew.items()},
        recon_avg=float(recon_avg),
        kl=float(kl),
        kl_per_dim=float(kl_per_dim),
        bpc=bpc,
        weights=weights,
        latent_dim=model.latent_dim,
        latents=z.detach(),
        mu=mu.detach(),
    )


def generated_loss_eval(model: RecordModel, records: Sequence, weights: ObjectiveWeights,
                        stddev_net: StdDevNetwork, generator: Optional[torch.Generator] = None,
                        field_weights: Optional[Mapping[str, float]] = None,
                        skew_in_average: bool = True) -> Optional[LossReport]:
    """
    The evaluation-mode VAE loss of generated records, as if they were data

    Malformed text records are left out; None when nothing usable remains.
    """
    usable = [r for r in records if isinstance(r, Mapping)]
    if not usable:
        return None
    return vae_loss(model, usable, weights, stddev_net, generator=generator, field_weights=field_weights,
                    skew_in_average=skew_in_average, train=False)
