"""JSON wire format for alists.

Keys matching the reserved short symbols map to those attributes, keys
prefixed with ``?`` or ``$`` map to variable keys, everything else is a
custom (meta) attribute. String values with a variable sigil parse as
variables, objects as nested alists, arrays as flat value lists. Bindings
travel under the reserved top-level key ``__bindings__``.

``emit_json`` is byte-deterministic: fixed key order h, v, s, p, o, t, l,
then meta attributes alphabetically, then variable keys alphabetically,
with ``__bindings__`` last.
"""

from __future__ import annotations

import json
from typing import Union

from .core import (
    Alist,
    AlistKey,
    AlistValue,
    Attr,
    AttrClass,
    InvariantError,
    VariableRef,
    canonicalize,
    classify_attribute,
    is_variable_string,
    parse_variable,
)

BINDINGS_KEY = "__bindings__"

_CORE_ORDER = {name: i for i, name in enumerate("hvspotl")}


class AlistSyntaxError(Exception):
    """Input text is not syntactically valid JSON."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


def parse_json(text: Union[str, bytes]) -> Alist:
    """Parse one alist from its JSON wire form.

    Raises :class:`AlistSyntaxError` on malformed JSON (with byte offset)
    and :class:`~alistlib.core.InvariantError` (with the JSON path) when the
    document cannot form a valid alist.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise AlistSyntaxError(f"malformed JSON: {exc.msg} at offset {exc.pos}", exc.pos) from exc
    if not isinstance(doc, dict):
        raise InvariantError("top-level JSON value must be an object")
    alist = _alist_from_obj(doc, "$")
    canonicalize(alist)  # validate invariants; the parsed shape is returned as-is
    return alist


def _alist_from_obj(obj: dict, path: str) -> Alist:
    entries: dict[AlistKey, AlistValue] = {}
    bindings: dict[VariableRef, AlistValue] = {}
    for raw_key, raw_value in obj.items():
        key_path = f"{path}.{raw_key}"
        if raw_key == BINDINGS_KEY:
            if not isinstance(raw_value, dict):
                raise InvariantError("bindings must be an object", key_path)
            for var_text, bound in raw_value.items():
                if not is_variable_string(var_text):
                    raise InvariantError(f"binding key {var_text!r} is not a variable", key_path)
                bindings[parse_variable(var_text)] = _value_from_json(bound, f"{key_path}.{var_text}")
            continue
        key: AlistKey
        if is_variable_string(raw_key):
            key = parse_variable(raw_key)
        elif isinstance(raw_key, str) and raw_key and not raw_key.startswith(("?", "$")):
            key = Attr(raw_key)
        else:
            raise InvariantError(f"bad key {raw_key!r}", key_path)
        entries[key] = _value_from_json(raw_value, key_path)
    try:
        return Alist(entries, bindings)
    except InvariantError as exc:
        raise InvariantError(str(exc), path) from exc


def _value_from_json(value, path: str):
    if isinstance(value, str):
        return parse_variable(value) if is_variable_string(value) else value
    if isinstance(value, bool) or isinstance(value, (int, float)):
        return value
    if isinstance(value, dict):
        return _alist_from_obj(value, path)
    if isinstance(value, list):
        return tuple(_value_from_json(v, f"{path}[{i}]") for i, v in enumerate(value))
    if value is None:
        raise InvariantError("null is not an alist value", path)
    raise InvariantError(f"unsupported JSON value {value!r}", path)


def wire_key_order(key: AlistKey):
    """Sort key for the deterministic wire order: core attributes in fixed
    h,v,s,p,o,t,l order, then meta attributes alphabetically, then variable
    keys alphabetically by rendered form."""
    if isinstance(key, Attr):
        if key.name in _CORE_ORDER:
            return (0, _CORE_ORDER[key.name], "")
        return (1, 0, key.name)
    return (2, 0, str(key))


def _value_to_json(value):
    if isinstance(value, VariableRef):
        return str(value)
    if isinstance(value, Alist):
        return to_jsonable(value)
    if isinstance(value, tuple):
        return [_value_to_json(v) for v in value]
    return value


def to_jsonable(alist: Alist) -> dict:
    """The alist as a plain dict in deterministic wire order."""
    obj = {
        str(key): _value_to_json(alist.entries[key])
        for key in sorted(alist.entries, key=wire_key_order)
    }
    if alist.bindings:
        obj[BINDINGS_KEY] = {
            str(var): _value_to_json(alist.bindings[var])
            for var in sorted(alist.bindings, key=str)
        }
    return obj


def emit_json(alist: Alist) -> str:
    """Serialize an alist to its deterministic JSON wire form."""
    return json.dumps(to_jsonable(alist), separators=(",", ":"), ensure_ascii=False)
