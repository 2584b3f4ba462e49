"""
Differentiable building blocks for Record Weaver
Activation, initializers, reverse-mode gradients and global-norm clipping on top of torch
"""

import math
from dataclasses import dataclass
from typing import Callable, Dict, Literal, Mapping, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F

from utils.errors import NonFiniteError, ShapeError

Gradients = Dict[str, torch.Tensor]

CELU_ALPHA = 3.0
CELU_CAP = 6.0
TRUNCATION_STDS = 2.0


def celu_capped(x: torch.Tensor) -> torch.Tensor:
    """
    min(CELU(x, 3), 6), the GRU candidate and hidden-layer nonlinearity

    The gradient at and beyond the cap is zero.
    """
    y = F.celu(x, alpha=CELU_ALPHA)
    return torch.where(y < CELU_CAP, y, torch.full_like(y, CELU_CAP))


@dataclass(frozen=True)
class InitSpec:
    """How a parameter tensor is initialized"""

    kind: Literal["variance_scaled", "zeros", "ones", "uniform01", "constant"]
    value: float = 0.0

    @classmethod
    def constant(cls, value: float) -> "InitSpec":
        return cls("constant", float(value))


VARIANCE_SCALED = InitSpec("variance_scaled")
ZEROS = InitSpec("zeros")
ONES = InitSpec("ones")
UNIFORM01 = InitSpec("uniform01")


def _truncated_normal(shape: Tuple[int, ...], std: float,
                      generator: Optional[torch.Generator], dtype: torch.dtype) -> torch.Tensor:
    """N(0, std) with every sample beyond 2 std redrawn"""
    out = torch.randn(shape, generator=generator, dtype=dtype) * std
    bound = TRUNCATION_STDS * std
    outside = out.abs() > bound
    while bool(outside.any()):
        redraw = torch.randn(int(outside.sum()), generator=generator, dtype=dtype) * std
        out[outside] = redraw
        outside = out.abs() > bound
    return out


def init(spec: InitSpec, shape: Sequence[int], generator: Optional[torch.Generator] = None,
         dtype: Optional[torch.dtype] = None) -> torch.Tensor:
    """
    Create an initialized tensor

    Args:
        spec: Initializer kind
        shape: Tensor shape; the first dimension is the fan-in for weights
        generator: Seeded generator, required for reproducible random kinds
        dtype: Defaults to torch's default dtype

    Returns:
        torch.Tensor: New tensor (not a Parameter)
    """
    shape = tuple(int(s) for s in shape)
    dtype = dtype or torch.get_default_dtype()
    if spec.kind == "variance_scaled":
        if not shape or shape[0] <= 0:
            raise ShapeError(f"variance_scaled init needs a fan-in dimension, got shape {shape}")
        return _truncated_normal(shape, 1.0 / math.sqrt(shape[0]), generator, dtype)
    if spec.kind == "zeros":
        return torch.zeros(shape, dtype=dtype)
    if spec.kind == "ones":
        return torch.ones(shape, dtype=dtype)
    if spec.kind == "uniform01":
        return torch.rand(shape, generator=generator, dtype=dtype)
    if spec.kind == "constant":
        return torch.full(shape, spec.value, dtype=dtype)
    raise ValueError(f"Unknown init kind: {spec.kind}")


def ensure_finite(tensor: torch.Tensor, op: str) -> torch.Tensor:
    """Raise NonFiniteError naming `op` if the tensor holds NaN or Inf"""
    if not bool(torch.isfinite(tensor).all()):
        raise NonFiniteError(f"non-finite value produced by {op}")
    return tensor


def backward(loss: torch.Tensor, parameters: Mapping[str, torch.Tensor]) -> Gradients:
    """
    Reverse-mode gradients of a scalar loss

    Args:
        loss: Scalar tensor produced by recorded torch ops
        parameters: Name -> parameter mapping

    Returns:
        Gradients: One tensor per parameter; unreached parameters get zeros
    """
    if loss.dim() != 0:
        raise ShapeError(f"loss must be a scalar, got shape {tuple(loss.shape)}")
    op = loss.grad_fn.name() if loss.grad_fn is not None else "leaf"
    ensure_finite(loss, f"loss ({op})")
    names = list(parameters)
    tensors = [parameters[name] for name in names]
    raw = torch.autograd.grad(loss, tensors, allow_unused=True)
    grads: Gradients = {}
    for name, param, grad in zip(names, tensors, raw):
        if grad is None:
            grad = torch.zeros_like(param)
        if not bool(torch.isfinite(grad).all()):
            raise NonFiniteError(f"non-finite gradient for {name} flowing from {op}")
        grads[name] = grad
    return grads


def global_norm(grads: Mapping[str, torch.Tensor]) -> float:
    if not grads:
        return 0.0
    norms = torch.stack([torch.linalg.vector_norm(g.detach()) for g in grads.values()])
    return float(torch.linalg.vector_norm(norms))


def clip_global_norm(grads: Mapping[str, torch.Tensor], max_norm: float) -> Gradients:
    """
    Scale all gradients by max_norm / g when their global L2 norm g exceeds max_norm

    Args:
        grads: Name -> gradient mapping
        max_norm: Positive clipping threshold

    Returns:
        Gradients: Clipped copy (unchanged tensors when g <= max_norm)
    """
    if max_norm <= 0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    norm = global_norm(grads)
    if norm <= max_norm:
        return dict(grads)
    scale = max_norm / norm
    return {name: g * scale for name, g in grads.items()}


def gradient_check(fn: Callable[..., torch.Tensor], inputs: Sequence[torch.Tensor],
                   eps: float = 1e-5, rtol: float = 1e-4, atol: float = 1e-8) -> bool:
    """
    Compare autograd against central finite differences

    Inputs must be float64 tensors with requires_grad set.
    """
    return torch.autograd.gradcheck(fn, tuple(inputs), eps=eps, atol=atol, rtol=rtol,
                                    raise_exception=True)


def celu(x: torch.Tensor) -> torch.Tensor:
    """CELU with alpha = 3, the default activation of fully-connected layers"""
    return F.celu(x, alpha=CELU_ALPHA)
