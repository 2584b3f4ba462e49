"""
Parameter store for Record Weaver
Named trainable tensors, Adam state, the learning-rate schedule and checkpoint files
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Tuple

import torch
from torch import nn

from core.diff import Gradients
from utils.errors import CheckpointError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerSettings:
    """Adam constants plus the continuous learning-rate decay"""

    learning_rate: float = 2.5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    decay_rate: float = 0.99
    decay_steps: int = 1000


def scheduled_learning_rate(settings: OptimizerSettings, step: int) -> float:
    """lr(t) = lr0 * decay_rate ** (t / decay_steps), evaluated every step"""
    return settings.learning_rate * settings.decay_rate ** (step / settings.decay_steps)


class ParameterStore:
    """All trainable tensors of a run, addressed by unique names, with their Adam state"""

    def __init__(self, named_parameters: Iterable[Tuple[str, nn.Parameter]],
                 settings: OptimizerSettings = OptimizerSettings()):
        self.settings = settings
        self.parameters: Dict[str, nn.Parameter] = {}
        for name, param in named_parameters:
            if name in self.parameters:
                raise ValueError(f"Duplicate parameter name: {name}")
            self.parameters[name] = param
        self.optimizer = torch.optim.Adam(
            list(self.parameters.values()),
            lr=settings.learning_rate,
            betas=(settings.beta1, settings.beta2),
            eps=settings.epsilon,
        )

    @classmethod
    def from_modules(cls, modules: Mapping[str, nn.Module],
                     settings: OptimizerSettings = OptimizerSettings()) -> "ParameterStore":
        """Collect parameters of several modules under "<prefix>.<name>" keys"""
        named = []
        for prefix, module in modules.items():
            named.extend((f"{prefix}.{name}", p) for name, p in module.named_parameters())
        return cls(named, settings)

    def __len__(self) -> int:
        return len(self.parameters)

    def learning_rate(self, step: int) -> float:
        return scheduled_learning_rate(self.settings, step)

    def adam_step(self, grads: Gradients, step: int) -> float:
        """
        Apply one bias-corrected Adam update at the scheduled learning rate

        Args:
            grads: Gradients keyed exactly like the store
            step: Global training step (drives the learning-rate decay)

        Returns:
            float: Learning rate used for this update
        """
        if grads.keys() != self.parameters.keys():
            missing = sorted(self.parameters.keys() - grads.keys())
            extra = sorted(grads.keys() - self.parameters.keys())
            raise ValueError(f"Gradients misaligned with store (missing={missing}, extra={extra})")
        lr = self.learning_rate(step)
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        for name, param in self.parameters.items():
            param.grad = grads[name].detach()
        self.optimizer.step()
        self.optimizer.zero_grad(set_to_none=True)
        return lr

    def moments(self, name: str) -> Tuple[torch.Tensor, torch.Tensor]:
        """First and second Adam moments of a parameter (zeros before the first step)"""
        param = self.parameters[name]
        state = self.optimizer.state.get(param, {})
        if not state:
            return torch.zeros_like(param), torch.zeros_like(param)
        return state["exp_avg"], state["exp_avg_sq"]

    def state_dict(self) -> Dict[str, Any]:
        return self.optimizer.state_dict()

    def load_state_dict(self, state: Dict[str, Any]) -> None:
        self.optimizer.load_state_dict(state)


def save_checkpoint(path: Path, payload: Dict[str, Any]) -> Path:
    """Write a checkpoint container (tensors, lists, strings and numbers only)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)
    logger.info("Checkpoint written to %s", path)
    return path


def load_checkpoint(path: Path) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"missing checkpoint: {path}")
    try:
        return torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"unreadable checkpoint {path}: {e}") from e
