"""
Record model for Record Weaver
Instantiates a compiled ModelPlan into one trainable module tree and runs it on batches of records
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Union

import torch
from torch import nn

from connectors.text_codec import serialize_text
from core.random import make_generator
from generators.schema_compiler import ModelPlan, ScalarTupleSpec, StringLiteralSpec, Variant
from metrics.text_metrics import MalformedRecord, malformed_check
from models.scalar_tuple import ScalarTupleModule
from models.simple_tuple import SimpleTupleModule
from models.string_literal import DEFAULT_MAX_LEN, StringLiteralModule
from models.tuple_module import TupleModule
from models.vocabulary import Vocabulary
from utils.errors import DataError

logger = logging.getLogger(__name__)

Record = Dict[str, Union[str, float]]


@dataclass(frozen=True)
class DecoderModes:
    """Ground-truth input probabilities for the tuple and string decoders"""

    tuple_p_gt: float = 1.0
    string_p_gt: float = 1.0

    @classmethod
    def teacher_forcing(cls) -> "DecoderModes":
        return cls(1.0, 1.0)

    @classmethod
    def uniform(cls, p_gt: float) -> "DecoderModes":
        return cls(p_gt, p_gt)


@dataclass
class Reconstruction:
    """Per-element reconstruction losses of a batch, each shaped (B,)"""

    recon: Dict[str, torch.Tensor]
    skew: Dict[str, torch.Tensor] = field(default_factory=dict)
    string_nats: Optional[torch.Tensor] = None
    string_tokens: Optional[torch.Tensor] = None


def vocabulary_corpus(plan: ModelPlan, records: Iterable[Mapping]) -> Iterable[str]:
    """Every string a plan's character modules will see for these records"""
    if plan.variant == Variant.TEXT_CONCAT:
        for record in records:
            yield serialize_text(record, plan.text_columns, plan.scalar_fields)
        return
    names = [e.name for e in plan.string_elements]
    for record in records:
        for name in names:
            yield _string_value(record, name)


def _string_value(record: Mapping, name: str) -> str:
    value = record.get(name)
    return "" if value is None else str(value)


class RecordModel(nn.Module):
    """
    The encoder and decoder of one schema

    tuple: a Tuple module over per-field StringLiteral children sharing one
    character model, plus a ScalarTuple child for the coordinates.
    pass_through: a SimpleTuple over per-field StringLiteral modules.
    text_concat: a single StringLiteral over the comma-joined record.
    """

    def __init__(self, plan: ModelPlan, vocab: Vocabulary, field_names: Optional[Sequence[str]] = None,
                 generator: Optional[torch.Generator] = None, max_len: int = DEFAULT_MAX_LEN):
        super().__init__()
        self.plan = plan
        self.vocab = vocab
        self.max_len = max_len
        self.field_names = tuple(field_names) if field_names is not None else self._default_field_names()

        d, s = plan.latent_dim, plan.state_dim
        self.strings = nn.ModuleDict(
            {key: StringLiteralModule(vocab, d, s, generator=generator) for key in plan.string_keys}
        )
        self.scalars: Optional[ScalarTupleModule] = None
        self.tuple: Optional[nn.Module] = None
        if plan.variant != Variant.TEXT_CONCAT:
            if plan.scalar_fields:
                self.scalars = ScalarTupleModule(len(plan.scalar_fields), d, generator=generator)
            if plan.variant == Variant.TUPLE:
                self.tuple = TupleModule(plan.arity, d, s, generator)
            else:
                self.tuple = SimpleTupleModule(plan.arity, d, generator)
        logger.debug("Built %s model with %d parameters", plan.variant.value,
                     sum(p.numel() for p in self.parameters()))

    def _default_field_names(self) -> tuple:
        strings = [e.name for e in self.plan.string_elements]
        if self.plan.variant == Variant.TEXT_CONCAT:
            strings = [c for c in self.plan.text_columns if c not in self.plan.scalar_fields]
        return tuple(self.plan.scalar_fields) + tuple(strings) + tuple(self.plan.omit_fields)

    @property
    def latent_dim(self) -> int:
        return self.plan.latent_dim

    @property
    def is_text(self) -> bool:
        return self.plan.variant == Variant.TEXT_CONCAT

    def _element_indices(self, key: str) -> List[int]:
        return [k for k, e in enumerate(self.plan.elements)
                if isinstance(e.module, StringLiteralSpec) and e.module.key == key]

    def _scalar_index(self) -> Optional[int]:
        for k, e in enumerate(self.plan.elements):
            if isinstance(e.module, ScalarTupleSpec):
                return k
        return None

    def scalar_tensor(self, records: Sequence[Mapping]) -> torch.Tensor:
        try:
            rows = [[float(r[name]) for name in self.plan.scalar_fields] for r in records]
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"record is missing a numeric scalar field: {e}") from e
        return torch.tensor(rows, dtype=torch.get_default_dtype()).reshape(len(records), len(self.plan.scalar_fields))

    def text_lines(self, records: Sequence[Mapping]) -> List[str]:
        return [serialize_text(r, self.plan.text_columns, self.plan.scalar_fields) for r in records]

    def update_stats(self, records: Sequence[Mapping]) -> None:
        """Fold a batch into the ScalarTuple moving statistics"""
        if self.scalars is not None:
            self.scalars.update_stats(self.scalar_tensor(records))

    def seed_stats(self, records: Sequence[Mapping]) -> None:
        """Start the ScalarTuple statistics from a whole split"""
        if self.scalars is None:
            return
        x = self.scalar_tensor(records)
        if x.shape[0] < 2:
            raise DataError("need at least 2 records to seed scalar statistics")
        cov = torch.cov(x.T).reshape(x.shape[1], x.shape[1])
        self.scalars.seed_stats(x.mean(dim=0), cov)

    def encode_children(self, records: Sequence[Mapping]) -> torch.Tensor:
        """Child embeddings (B, K, d) in plan order"""
        batch = len(records)
        elements = self.plan.elements
        slots: List[Optional[torch.Tensor]] = [None] * len(elements)
        for key in self.plan.string_keys:
            indices = self._element_indices(key)
            values = [_string_value(r, elements[k].name) for k in indices for r in records]
            embedded = self.strings[key].encode(values).view(len(indices), batch, -1)
            for j, k in enumerate(indices):
                slots[k] = embedded[j]
        scalar_index = self._scalar_index()
        if scalar_index is not None:
            slots[scalar_index] = self.scalars.encode(self.scalar_tensor(records))
        return torch.stack(slots, dim=1)

    def encode(self, records: Sequence[Mapping], children: Optional[torch.Tensor] = None) -> torch.Tensor:
        """Mean latent vectors mu (B, d)"""
        if not records:
            raise DataError("cannot encode an empty batch")
        if self.is_text:
            return self.strings[self.plan.root.key].encode(self.text_lines(records))
        if children is None:
            children = self.encode_children(records)
        return self.tuple.encode(children)

    def reconstruct(self, latents: torch.Tensor, records: Sequence[Mapping],
                    modes: DecoderModes = DecoderModes(), generator: Optional[torch.Generator] = None,
                    children: Optional[torch.Tensor] = None) -> Reconstruction:
        """
        Decoder losses of the records given their latent vectors

        Args:
            latents: (B, d) latent vectors, sampled or mean
            records: Ground truth for the batch
            modes: Scheduled-sampling probabilities
            children: Ground-truth child embeddings from encode_children, recomputed if absent

        Returns:
            Reconstruction: recon per element (nats for strings, squared error for scalars)
        """
        if self.is_text:
            result = self.strings[self.plan.root.key].decode_loss(
                latents, self.text_lines(records), modes.string_p_gt, generator)
            return Reconstruction(
                recon={self.plan.root.key: result.loss},
                string_nats=result.token_nats.sum(dim=1),
                string_tokens=result.token_counts.to(latents.dtype),
            )

        skew: Dict[str, torch.Tensor] = {}
        if self.plan.variant == Variant.TUPLE:
            if children is None:
                children = self.encode_children(records)
            decoded = self.tuple.decode(latents, children, modes.tuple_p_gt, generator)
            generated = decoded.children
            skew = {e.name: decoded.skew[:, k] for k, e in enumerate(self.plan.elements)}
        else:
            generated = self.tuple.decode(latents)

        batch = len(records)
        elements = self.plan.elements
        recon: Dict[str, torch.Tensor] = {}
        nats = latents.new_zeros(batch)
        tokens = latents.new_zeros(batch)
        for key in self.plan.string_keys:
            indices = self._element_indices(key)
            embeddings = generated[:, indices].transpose(0, 1).reshape(len(indices) * batch, -1)
            targets = [_string_value(r, elements[k].name) for k in indices for r in records]
            result = self.strings[key].decode_loss(embeddings, targets, modes.string_p_gt, generator)
            losses = result.loss.view(len(indices), batch)
            for j, k in enumerate(indices):
                recon[elements[k].name] = losses[j]
            nats = nats + result.token_nats.sum(dim=1).view(len(indices), batch).sum(dim=0)
            tokens = tokens + result.token_counts.to(latents.dtype).view(len(indices), batch).sum(dim=0)
        scalar_index = self._scalar_index()
        if scalar_index is not None:
            recon[elements[scalar_index].name] = self.scalars.decode_loss(
                generated[:, scalar_index], self.scalar_tensor(records))
        # reorder to plan order
        recon = {e.name: recon[e.name] for e in elements}
        return Reconstruction(recon=recon, skew=skew, string_nats=nats, string_tokens=tokens)

    @torch.no_grad()
    def decode(self, latents: torch.Tensor, generator: Optional[torch.Generator] = None,
               argmax: bool = False, max_len: Optional[int] = None) -> List[Union[Record, MalformedRecord]]:
        """
        Generate one record per latent vector

        Strings are sampled from the decoder softmax (or argmax), scalars are the
        un-whitened decoder output. The text variant may yield MalformedRecord entries.
        """
        max_len = max_len or self.max_len
        batch = latents.shape[0]
        if self.is_text:
            width = max_len * max(1, len(self.plan.text_columns))
            lines = self.strings[self.plan.root.key].generate(latents, generator, width, argmax)
            out: List[Union[Record, MalformedRecord]] = []
            for line in lines:
                parsed = malformed_check(line, self.plan.text_columns, self.plan.scalar_fields)
                if isinstance(parsed, dict):
                    parsed = self._complete(parsed)
                out.append(parsed)
            return out

        if self.plan.variant == Variant.TUPLE:
            generated = self.tuple.decode(latents).children
        else:
            generated = self.tuple.decode(latents)

        elements = self.plan.elements
        records: List[Record] = [{} for _ in range(batch)]
        for key in self.plan.string_keys:
            indices = self._element_indices(key)
            embeddings = generated[:, indices].transpose(0, 1).reshape(len(indices) * batch, -1)
            strings = self.strings[key].generate(embeddings, generator, max_len, argmax)
            for j, k in enumerate(indices):
                for b in range(batch):
                    records[b][elements[k].name] = strings[j * batch + b]
        scalar_index = self._scalar_index()
        if scalar_index is not None:
            values = self.scalars.generate(generated[:, scalar_index])
            for b in range(batch):
                for name, value in zip(self.plan.scalar_fields, values[b].tolist()):
                    records[b][name] = value
        return [self._complete(r) for r in records]

    def _complete(self, record: Record) -> Record:
        """Order fields like the schema and fill omitted strings with empty values"""
        return {name: record.get(name, "") for name in self.field_names}


def build_record_model(plan: ModelPlan, vocab: Vocabulary, seed: int,
                       field_names: Optional[Sequence[str]] = None,
                       max_len: int = DEFAULT_MAX_LEN) -> RecordModel:
    """RecordModel with parameters drawn from the run's "init" stream"""
    return RecordModel(plan, vocab, field_names, make_generator(seed, "init"), max_len)
