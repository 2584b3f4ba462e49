"""
Character vocabulary for StringLiteral modules
Index 0 is the end-of-string token; the rest are the observed characters in sorted order
"""

from typing import Iterable, List, Sequence, Tuple

import torch

from utils.errors import VocabularyError

EOS_MARKER = "<EOS>"
EOS_INDEX = 0


class Vocabulary:
    """Observed characters plus end-of-string"""

    def __init__(self, symbols: Sequence[str]):
        if len(set(symbols)) != len(symbols):
            raise VocabularyError("vocabulary symbols must be unique")
        if any(len(s) != 1 for s in symbols):
            raise VocabularyError("vocabulary symbols must be single characters")
        self.symbols: Tuple[str, ...] = tuple(symbols)
        self._index = {s: i + 1 for i, s in enumerate(self.symbols)}

    @classmethod
    def build(cls, strings: Iterable[str]) -> "Vocabulary":
        seen = set()
        for s in strings:
            seen.update(s)
        return cls(sorted(seen))

    @property
    def size(self) -> int:
        return len(self.symbols) + 1

    def __len__(self) -> int:
        return self.size

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.symbols == other.symbols

    def encode(self, s: str) -> List[int]:
        """Symbol indices of s followed by EOS"""
        try:
            return [self._index[ch] for ch in s] + [EOS_INDEX]
        except KeyError as e:
            raise VocabularyError(f"character {e.args[0]!r} in {s!r} is not in the vocabulary") from None

    def decode(self, indices: Iterable[int]) -> str:
        chars = []
        for i in indices:
            if i == EOS_INDEX:
                break
            chars.append(self.symbols[i - 1])
        return "".join(chars)

    def batch(self, strings: Sequence[str]) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Pad a batch of strings into token and mask tensors

        Returns:
            (tokens, mask): (B, T) long tokens padded with EOS and a (B, T) bool mask,
            with T = longest length + 1 so every row ends in EOS
        """
        encoded = [self.encode(s) for s in strings]
        width = max((len(e) for e in encoded), default=1)
        tokens = torch.full((len(encoded), width), EOS_INDEX, dtype=torch.long)
        mask = torch.zeros((len(encoded), width), dtype=torch.bool)
        for row, ids in enumerate(encoded):
            tokens[row, : len(ids)] = torch.tensor(ids, dtype=torch.long)
            mask[row, : len(ids)] = True
        return tokens, mask

    def to_list(self) -> List[str]:
        return [EOS_MARKER, *self.symbols]

    @classmethod
    def from_list(cls, items: Sequence[str]) -> "Vocabulary":
        if not items or items[0] != EOS_MARKER:
            raise VocabularyError("serialized vocabulary must start with the EOS marker")
        return cls(list(items[1:]))
