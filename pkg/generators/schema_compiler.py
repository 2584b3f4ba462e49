"""
Schema Compiler for Record Weaver
Parses message-style record schemas and compiles them into model plans
"""

import hashlib
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, List, Optional, Tuple, Union

from utils.errors import SchemaError

logger = logging.getLogger(__name__)

BUNDLED_SCHEMA_DIR = Path(__file__).parent / "schemas"
DEFAULT_LATENT_DIM = 128
# not a valid identifier, so it never collides with a field name
SCALARS_ELEMENT = "<scalars>"
SHARED_STRING_KEY = "string"
TEXT_STRING_KEY = "text"

_TOKEN = re.compile(r"[A-Za-z_][A-Za-z0-9_]*|-?\d+|[{}=;]|\S")
_IDENTIFIER = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_TYPE_KEYWORDS = {"float": "scalar", "string": "string"}


class FieldKind(str, Enum):
    STRING = "string"
    SCALAR = "scalar"


class Variant(str, Enum):
    TUPLE = "tuple"
    PASS_THROUGH = "pass_through"
    TEXT_CONCAT = "text_concat"


@dataclass(frozen=True)
class FieldSpec:
    name: str
    kind: FieldKind
    tag: int


@dataclass(frozen=True)
class Schema:
    """A message definition: ordered fields with unique names and tags"""

    name: str
    fields: Tuple[FieldSpec, ...] = ()

    def __post_init__(self):
        names = [f.name for f in self.fields]
        tags = [f.tag for f in self.fields]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate field name in message {self.name}")
        if len(set(tags)) != len(tags):
            raise SchemaError(f"duplicate tag in message {self.name}")
        if any(t <= 0 for t in tags):
            raise SchemaError(f"field tags must be positive in message {self.name}")

    @property
    def string_fields(self) -> Tuple[str, ...]:
        return tuple(f.name for f in self.fields if f.kind == FieldKind.STRING)

    @property
    def scalar_fields(self) -> Tuple[str, ...]:
        return tuple(f.name for f in self.fields if f.kind == FieldKind.SCALAR)

    @property
    def field_names(self) -> Tuple[str, ...]:
        return tuple(f.name for f in self.fields)


# Module specifications making up a plan tree

@dataclass(frozen=True)
class StringLiteralSpec:
    key: str


@dataclass(frozen=True)
class ScalarTupleSpec:
    fields: Tuple[str, ...]


@dataclass(frozen=True)
class TupleElement:
    name: str
    fields: Tuple[str, ...]
    module: Union[StringLiteralSpec, ScalarTupleSpec]


@dataclass(frozen=True)
class TupleSpec:
    elements: Tuple[TupleElement, ...]


@dataclass(frozen=True)
class SimpleTupleSpec:
    elements: Tuple[TupleElement, ...]


ModuleSpec = Union[TupleSpec, SimpleTupleSpec, StringLiteralSpec, ScalarTupleSpec]


@dataclass(frozen=True)
class ModelPlan:
    """Compiled tree of module specifications for one schema"""

    root: ModuleSpec
    latent_dim: int
    variant: Variant
    state_dim: int
    schema_name: str
    omit_fields: Tuple[str, ...] = ()
    text_columns: Tuple[str, ...] = ()
    scalar_fields: Tuple[str, ...] = field(default=())

    @property
    def elements(self) -> Tuple[TupleElement, ...]:
        if isinstance(self.root, (TupleSpec, SimpleTupleSpec)):
            return self.root.elements
        return ()

    @property
    def arity(self) -> int:
        """Number of loss-bearing children averaged by the reconstruction loss"""
        return len(self.elements) if self.elements else 1

    @property
    def string_keys(self) -> Tuple[str, ...]:
        """Distinct StringLiteral modules, in first-use order"""
        if isinstance(self.root, StringLiteralSpec):
            return (self.root.key,)
        keys: List[str] = []
        for element in self.elements:
            if isinstance(element.module, StringLiteralSpec) and element.module.key not in keys:
                keys.append(element.module.key)
        return tuple(keys)

    @property
    def string_elements(self) -> Tuple[TupleElement, ...]:
        return tuple(e for e in self.elements if isinstance(e.module, StringLiteralSpec))


class _Tokens:
    """Token stream with line numbers for error reporting"""

    def __init__(self, text: str):
        self.items: List[Tuple[str, int]] = []
        for number, line in enumerate(text.splitlines(), start=1):
            code = line.split("//", 1)[0]
            self.items.extend((tok, number) for tok in _TOKEN.findall(code))
        self.pos = 0

    @property
    def line(self) -> int:
        if self.pos < len(self.items):
            return self.items[self.pos][1]
        return self.items[-1][1] if self.items else 1

    def peek(self) -> Optional[str]:
        return self.items[self.pos][0] if self.pos < len(self.items) else None

    def next(self, what: str) -> str:
        if self.pos >= len(self.items):
            raise SchemaError(f"unexpected end of schema, expected {what}", self.line)
        token = self.items[self.pos][0]
        self.pos += 1
        return token

    def expect(self, literal: str) -> None:
        line = self.line
        token = self.next(repr(literal))
        if token != literal:
            raise SchemaError(f"expected {literal!r}, found {token!r}", line)

    def identifier(self, what: str) -> str:
        line = self.line
        token = self.next(what)
        if not _IDENTIFIER.match(token):
            raise SchemaError(f"expected {what}, found {token!r}", line)
        return token


def parse_schema(text: str) -> Schema:
    """
    Parse a schema of the form
    `message <Name> { (optional (float|string) <name> = <int>;)* }`

    Args:
        text: Schema source; `//` starts a line comment

    Returns:
        Schema: Fields in declaration order
    """
    tokens = _Tokens(text)
    tokens.expect("message")
    name = tokens.identifier("message name")
    tokens.expect("{")
    fields: List[FieldSpec] = []
    seen_tags = set()
    seen_names = set()
    while tokens.peek() != "}":
        line = tokens.line
        label = tokens.next("'optional' or '}'")
        if label != "optional":
            raise SchemaError(f"unsupported field label {label!r}, only 'optional' is allowed", line)
        line = tokens.line
        type_name = tokens.identifier("field type")
        if type_name not in _TYPE_KEYWORDS:
            raise SchemaError(f"unsupported type {type_name!r}, expected float or string", line)
        field_name = tokens.identifier("field name")
        tokens.expect("=")
        line = tokens.line
        raw_tag = tokens.next("field tag")
        if not re.fullmatch(r"-?\d+", raw_tag):
            raise SchemaError(f"field tag must be an integer, found {raw_tag!r}", line)
        tag = int(raw_tag)
        if tag <= 0:
            raise SchemaError(f"field tag must be positive, found {tag}", line)
        if tag in seen_tags:
            raise SchemaError(f"duplicate tag {tag}", line)
        if field_name in seen_names:
            raise SchemaError(f"duplicate field name {field_name!r}", line)
        tokens.expect(";")
        seen_tags.add(tag)
        seen_names.add(field_name)
        fields.append(FieldSpec(field_name, FieldKind(_TYPE_KEYWORDS[type_name]), tag))
    tokens.expect("}")
    if tokens.peek() is not None:
        raise SchemaError(f"unexpected {tokens.peek()!r} after message body", tokens.line)
    return Schema(name=name, fields=tuple(fields))


def print_schema(schema: Schema) -> str:
    """Canonical schema text (comments are not preserved)"""
    lines = [f"message {schema.name} {{"]
    for f in schema.fields:
        type_name = "float" if f.kind == FieldKind.SCALAR else "string"
        lines.append(f"  optional {type_name} {f.name} = {f.tag};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def schema_hash(schema: Schema) -> str:
    return hashlib.sha256(print_schema(schema).encode("utf-8")).hexdigest()[:16]


def load_schema(path: Union[str, Path]) -> Schema:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise SchemaError(f"cannot read schema file {path}: {e}") from e
    return parse_schema(text)


def load_bundled_schema(name: str = "address") -> Schema:
    """Schema shipped with the package, e.g. the address message"""
    return load_schema(BUNDLED_SCHEMA_DIR / f"{name}.schema")


def compile_schema(schema: Schema, latent_dim: int = DEFAULT_LATENT_DIM,
                   variant: Union[Variant, str] = Variant.TUPLE,
                   omit_fields: Iterable[str] = (),
                   state_dim: Optional[int] = None) -> ModelPlan:
    """
    Compile a schema into a ModelPlan

    Args:
        schema: Parsed schema with at least one field
        latent_dim: Embedding size shared by all modules
        variant: tuple, pass_through or text_concat
        omit_fields: String fields left out of pass_through / text_concat models
        state_dim: RNN state size, defaults to latent_dim

    Returns:
        ModelPlan: Deterministic plan; scalars are grouped as the last tuple element
    """
    variant = Variant(variant)
    if not schema.fields:
        raise SchemaError(f"message {schema.name} has no fields to model")
    if latent_dim <= 0:
        raise SchemaError(f"latent_dim must be positive, got {latent_dim}")
    state_dim = latent_dim if state_dim is None else state_dim
    if state_dim <= 0:
        raise SchemaError(f"state_dim must be positive, got {state_dim}")

    omit = tuple(omit_fields)
    unknown = [name for name in omit if name not in schema.string_fields]
    if unknown:
        raise SchemaError(f"omit_fields must name string fields, got {unknown}")
    if omit and variant == Variant.TUPLE:
        logger.warning("omit_fields %s ignored by the tuple variant", list(omit))
        omit = ()

    strings = [name for name in schema.string_fields if name not in omit]
    scalars = schema.scalar_fields

    if variant == Variant.TEXT_CONCAT:
        return ModelPlan(
            root=StringLiteralSpec(TEXT_STRING_KEY),
            latent_dim=2 * latent_dim,
            variant=variant,
            state_dim=2 * state_dim,
            schema_name=schema.name,
            omit_fields=omit,
            text_columns=tuple(strings) + scalars,
            scalar_fields=scalars,
        )

    elements: List[TupleElement] = []
    for name in strings:
        key = SHARED_STRING_KEY if variant == Variant.TUPLE else f"{SHARED_STRING_KEY}:{name}"
        elements.append(TupleElement(name, (name,), StringLiteralSpec(key)))
    if scalars:
        elements.append(TupleElement(SCALARS_ELEMENT, scalars, ScalarTupleSpec(scalars)))
    if not elements:
        raise SchemaError(f"message {schema.name} has no fields left after omission")

    root: ModuleSpec = TupleSpec(tuple(elements)) if variant == Variant.TUPLE \
        else SimpleTupleSpec(tuple(elements))
    return ModelPlan(
        root=root,
        latent_dim=latent_dim,
        variant=variant,
        state_dim=state_dim,
        schema_name=schema.name,
        omit_fields=omit,
        scalar_fields=scalars,
    )
