"""
Seeded random streams for Record Weaver
One run seed fans out into independent, named torch generators
"""

import hashlib

import numpy as np
import torch


def derive_seed(seed: int, stream: str) -> int:
    """Stable 63-bit seed for a named stream, identical across platforms"""
    digest = hashlib.sha256(f"{seed}:{stream}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def make_generator(seed: int, stream: str) -> torch.Generator:
    """
    Create a CPU torch generator for one component

    Args:
        seed: Run seed
        stream: Component name, e.g. "init", "train", "eval"

    Returns:
        torch.Generator: Generator seeded from (seed, stream)
    """
    generator = torch.Generator()
    generator.manual_seed(derive_seed(seed, stream))
    return generator


def make_numpy_rng(seed: int, stream: str) -> np.random.Generator:
    """numpy counterpart of make_generator for host-side sampling"""
    return np.random.default_rng(derive_seed(seed, stream))
