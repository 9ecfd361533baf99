"""Canonical JSON wire format and content-derived identifiers.

The canonical form is the single source of truth for every identifier in
the store: object keys sorted by their UTF-8 byte sequence, no
whitespace, literal UTF-8 output with only the JSON-mandatory escapes,
and fractional numbers carried as decimal strings so binary floats never
touch the hashed bytes.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from decimal import Decimal
from typing import Any, Mapping, Union

from .errors import CanonicalizationError, IdentifierFormatError

# Schema version stamped into every content-addressed payload this
# package builds. Bump only with a migration story.
SCHEMA_VERSION = "1"

# Registered identifier prefixes, one per addressable entity kind.
PREFIXES = ("snap", "repr", "run", "dec", "pol", "plan")

DIGEST_LENGTH = 16

_IDENTIFIER_RE = re.compile(r"^(%s)_([0-9a-f]{16})$" % "|".join(PREFIXES))
_PAYLOAD_HASH_RE = re.compile(r"^[0-9a-f]{16}$")

CanonicalValue = Union[None, bool, int, str, list, tuple, Mapping[str, Any]]


@dataclass(frozen=True)
class Identifier:
    """Typed content-derived key, rendered as ``<prefix>_<16 hex chars>``."""

    prefix: str
    digest16: str

    def __post_init__(self):
        if self.prefix not in PREFIXES:
            raise IdentifierFormatError(f"unregistered identifier prefix: {self.prefix!r}")
        if not _PAYLOAD_HASH_RE.match(self.digest16):
            raise IdentifierFormatError(
                f"identifier digest must be {DIGEST_LENGTH} lowercase hex chars, got {self.digest16!r}"
            )

    def __str__(self) -> str:
        return f"{self.prefix}_{self.digest16}"

    @classmethod
    def parse(cls, text: str) -> "Identifier":
        m = _IDENTIFIER_RE.match(text)
        if m is None:
            raise IdentifierFormatError(f"malformed identifier: {text!r}")
        return cls(m.group(1), m.group(2))


def parse_identifier(text: str) -> Identifier:
    """Parse and validate an identifier string."""
    return Identifier.parse(text)


def is_payload_hash(text: str) -> bool:
    """True if text is a bare 16-hex-char content hash."""
    return isinstance(text, str) and _PAYLOAD_HASH_RE.match(text) is not None


def _validate(value: Any, path: str) -> None:
    if value is None or isinstance(value, bool):
        return
    if isinstance(value, float):
        raise CanonicalizationError(
            f"binary float at {path}; fractional numbers must be decimal strings"
        )
    if isinstance(value, int):
        return
    if isinstance(value, str):
        return
    if isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            _validate(item, f"{path}[{i}]")
        return
    if isinstance(value, Mapping):
        for key in value:
            if not isinstance(key, str):
                raise CanonicalizationError(
                    f"non-string mapping key {key!r} at {path}"
                )
            _validate(value[key], f"{path}.{key}")
        return
    raise CanonicalizationError(
        f"type {type(value).__name__} at {path} has no canonical form"
    )


def canonical_encode(value: CanonicalValue) -> bytes:
    """Encode a canonical value tree to its unique UTF-8 byte sequence.

    Mapping key insertion order never affects the output; keys are sorted
    by code point, which is identical to byte-wise UTF-8 order.
    """
    _validate(value, "$")
    if isinstance(value, tuple):
        value = list(value)
    text = json.dumps(
        value,
        ensure_ascii=False,
        sort_keys=True,
        separators=(",", ":"),
        allow_nan=False,
    )
    try:
        return text.encode("utf-8")
    except UnicodeEncodeError as exc:
        raise CanonicalizationError(f"text is not encodable as UTF-8: {exc}") from exc


def _reject_float(text: str):
    raise CanonicalizationError(
        f"fractional number literal {text!r} in canonical input; decimals must be strings"
    )


def _reject_constant(text: str):
    raise CanonicalizationError(f"non-finite number literal {text!r} in canonical input")


def _object_pairs(pairs):
    obj = {}
    for key, val in pairs:
        if key in obj:
            raise CanonicalizationError(f"duplicate mapping key {key!r}")
        obj[key] = val
    return obj


def canonical_decode(data: bytes) -> CanonicalValue:
    """Decode canonical bytes back into a value tree.

    Rejects duplicate keys and any number with a fractional or non-finite
    literal, since those have no canonical representation.
    """
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CanonicalizationError(f"input is not valid UTF-8: {exc}") from exc
    try:
        return json.loads(
            text,
            object_pairs_hook=_object_pairs,
            parse_float=_reject_float,
            parse_constant=_reject_constant,
        )
    except CanonicalizationError:
        raise
    except ValueError as exc:
        raise CanonicalizationError(f"input is not valid JSON: {exc}") from exc


def payload_hash(data: bytes) -> str:
    """First 16 hex chars of the SHA-256 digest of raw bytes."""
    return hashlib.sha256(data).hexdigest()[:DIGEST_LENGTH]


def content_id(prefix: str, payload: Mapping[str, Any]) -> Identifier:
    """Derive the identifier for a payload: hash its canonical encoding.

    Every content-addressed payload must carry an explicit ``version``
    field; a missing one is an error rather than an implicit default.
    """
    if prefix not in PREFIXES:
        raise IdentifierFormatError(f"unregistered identifier prefix: {prefix!r}")
    if not isinstance(payload, Mapping):
        raise CanonicalizationError(
            f"content-addressed payload must be a mapping, got {type(payload).__name__}"
        )
    if "version" not in payload:
        raise CanonicalizationError("content-addressed payload is missing a version field")
    return Identifier(prefix, payload_hash(canonical_encode(payload)))


def decimal_string(value: Decimal) -> str:
    """Render a Decimal in plain positional notation (never scientific)."""
    return format(value, "f")
