import json
import random
from decimal import Decimal
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decisiondb import canon
from decisiondb.errors import CanonicalizationError, IdentifierFormatError

import payload_gen

FIXTURES = Path(__file__).parent / "fixtures"

with open(FIXTURES / "canon_vectors.json", encoding="utf-8") as fh:
    VECTORS = json.load(fh)


# Independent reference encoder: builds the canonical bytes by hand,
# sorting keys by their UTF-8 byte sequence, without touching json.dumps.
def _ref_string(s: str) -> bytes:
    out = ['"']
    for ch in s:
        if ch == '"':
            out.append('\\"')
        elif ch == "\\":
            out.append("\\\\")
        elif ch == "\b":
            out.append("\\b")
        elif ch == "\f":
            out.append("\\f")
        elif ch == "\n":
            out.append("\\n")
        elif ch == "\r":
            out.append("\\r")
        elif ch == "\t":
            out.append("\\t")
        elif ord(ch) < 0x20:
            out.append("\\u%04x" % ord(ch))
        else:
            out.append(ch)
    out.append('"')
    return "".join(out).encode("utf-8")


def _ref_encode(value) -> bytes:
    if value is None:
        return b"null"
    if value is True:
        return b"true"
    if value is False:
        return b"false"
    if isinstance(value, int):
        return str(value).encode("ascii")
    if isinstance(value, str):
        return _ref_string(value)
    if isinstance(value, (list, tuple)):
        return b"[" + b",".join(_ref_encode(v) for v in value) + b"]"
    if isinstance(value, dict):
        items = sorted(value.items(), key=lambda kv: kv[0].encode("utf-8"))
        return (
            b"{"
            + b",".join(_ref_string(k) + b":" + _ref_encode(v) for k, v in items)
            + b"}"
        )
    raise AssertionError(f"unexpected type {type(value)}")


@pytest.mark.parametrize("vector", VECTORS, ids=[v["name"] for v in VECTORS])
def test_frozen_vector_bytes(vector):
    assert canon.canonical_encode(vector["payload"]) == vector["expected_text"].encode("utf-8")


@pytest.mark.parametrize("vector", VECTORS, ids=[v["name"] for v in VECTORS])
def test_frozen_vector_identifier(vector):
    got = canon.content_id(vector["prefix"], vector["payload"])
    assert str(got) == vector["expected_identifier"]


@pytest.mark.parametrize("vector", VECTORS, ids=[v["name"] for v in VECTORS])
def test_frozen_vector_decode_round_trip(vector):
    data = vector["expected_text"].encode("utf-8")
    assert canon.canonical_decode(data) == vector["payload"]
    assert canon.canonical_encode(canon.canonical_decode(data)) == data


def test_empty_input_hash_prefix():
    # First 16 hex chars of sha256 of zero bytes, a fixed point of the scheme.
    assert canon.payload_hash(b"") == "e3b0c44298fc1c14"


def test_reference_encoder_agreement_on_random_payloads():
    rng = random.Random(20260822)
    for _ in range(300):
        payload = payload_gen.random_payload(rng)
        assert canon.canonical_encode(payload) == _ref_encode(payload)


def test_key_insertion_order_never_changes_identifier():
    rng_a = random.Random(991)
    rng_b = random.Random(991)
    for _ in range(200):
        pa = payload_gen.random_payload(rng_a, key_order="sorted")
        pb = payload_gen.random_payload(rng_b, key_order="reversed")
        assert list(pa) != list(pb) or len(pa) == 1
        assert canon.content_id("snap", pa) == canon.content_id("snap", pb)


def test_single_field_mutation_changes_identifier():
    rng = random.Random(4242)
    seen = set()
    for _ in range(1000):
        payload = payload_gen.random_payload(rng)
        base = canon.content_id("dec", payload)
        mutated = dict(payload)
        mutated["version"] = "1-mutated"
        assert canon.content_id("dec", mutated) != base
        seen.add(str(base))
    # Random payloads should essentially never collide at 64 bits.
    assert len(seen) > 990


_text = st.text(
    alphabet=st.characters(blacklist_categories=("Cs",)), max_size=20
)
_scalars = st.none() | st.booleans() | st.integers() | _text
_values = st.recursive(
    _scalars,
    lambda children: st.lists(children, max_size=4)
    | st.dictionaries(_text, children, max_size=4),
    max_leaves=10,
)
_payloads = st.dictionaries(_text, _values, max_size=5).map(
    lambda d: {**d, "version": "1"}
)


@settings(max_examples=200)
@given(_payloads)
def test_encode_decode_round_trip(payload):
    data = canon.canonical_encode(payload)
    assert canon.canonical_decode(data) == payload
    assert canon.canonical_encode(canon.canonical_decode(data)) == data


@settings(max_examples=200)
@given(_payloads)
def test_encode_matches_reference(payload):
    assert canon.canonical_encode(payload) == _ref_encode(payload)


@given(st.integers(), st.integers())
def test_distinct_ints_distinct_ids(a, b):
    ia = canon.content_id("run", {"n": a, "version": "1"})
    ib = canon.content_id("run", {"n": b, "version": "1"})
    assert (ia == ib) == (a == b)


def test_same_payload_different_prefix_differs():
    payload = {"version": "1", "x": 3}
    a = canon.content_id("snap", payload)
    b = canon.content_id("repr", payload)
    assert a.digest16 == b.digest16
    assert str(a) != str(b)


def test_missing_version_rejected():
    with pytest.raises(CanonicalizationError):
        canon.content_id("snap", {"x": 1})


def test_non_mapping_payload_rejected():
    with pytest.raises(CanonicalizationError):
        canon.content_id("snap", ["version", "1"])


def test_float_rejected():
    with pytest.raises(CanonicalizationError):
        canon.canonical_encode({"w": 0.25, "version": "1"})
    with pytest.raises(CanonicalizationError):
        canon.canonical_encode({"w": float("nan"), "version": "1"})


def test_non_string_key_rejected():
    with pytest.raises(CanonicalizationError):
        canon.canonical_encode({1: "x", "version": "1"})


def test_unencodable_object_rejected():
    with pytest.raises(CanonicalizationError):
        canon.canonical_encode({"v": object(), "version": "1"})


def test_surrogate_text_rejected():
    with pytest.raises(CanonicalizationError):
        canon.canonical_encode({"s": "\ud800", "version": "1"})


def test_decode_duplicate_key_rejected():
    with pytest.raises(CanonicalizationError):
        canon.canonical_decode(b'{"a":1,"a":2}')


def test_decode_float_literal_rejected():
    with pytest.raises(CanonicalizationError):
        canon.canonical_decode(b'{"v":1.5}')


def test_decode_invalid_json_rejected():
    with pytest.raises(CanonicalizationError):
        canon.canonical_decode(b'{"v":')
    with pytest.raises(CanonicalizationError):
        canon.canonical_decode(b"\xff\xfe")


def test_tuple_encodes_as_sequence():
    assert canon.canonical_encode((1, 2)) == b"[1,2]"


def test_identifier_parse_and_render():
    ident = canon.parse_identifier("snap_aa5bc61f44d5f633")
    assert ident.prefix == "snap"
    assert ident.digest16 == "aa5bc61f44d5f633"
    assert str(ident) == "snap_aa5bc61f44d5f633"


@pytest.mark.parametrize(
    "bad",
    [
        "zzz_aa5bc61f44d5f633",
        "snap-aa5bc61f44d5f633",
        "snap_AA5BC61F44D5F633",
        "snap_aa5bc61f44d5f63",
        "snap_aa5bc61f44d5f6333",
        "snap_",
        "",
    ],
)
def test_identifier_malformed_rejected(bad):
    with pytest.raises(IdentifierFormatError):
        canon.parse_identifier(bad)


def test_unregistered_prefix_rejected():
    with pytest.raises(IdentifierFormatError):
        canon.content_id("blob", {"version": "1"})
    with pytest.raises(IdentifierFormatError):
        canon.Identifier("blob", "aa5bc61f44d5f633")


def test_decimal_string_never_scientific():
    assert canon.decimal_string(Decimal("0.0000001")) == "0.0000001"
    assert canon.decimal_string(Decimal("1E+3")) == "1000"
    assert canon.decimal_string(Decimal("12.500000000000")) == "12.500000000000"
