"""Core alist data model.

An alist is a set of attribute-value pairs representing a fact or a query.
Attributes fall into three classes: functional (the operation ``h`` and its
operation variable ``v``), object-level (``s``, ``p``, ``o``, ``t``, ``l``)
and meta-level (``x``, ``c``, ``u``, ``d`` plus arbitrary custom names).
Values are constants, variables, nested alists, or flat lists of values.

Alists are immutable after construction; every operation returns a new
alist, so values can be shared freely across threads.
"""

from __future__ import annotations

import datetime
import itertools
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator, Mapping, Union


class AlistError(Exception):
    """Base class for all alist errors."""


class InvariantError(AlistError):
    """A structural invariant of the alist model is violated."""

    def __init__(self, message: str, path: str = "$"):
        super().__init__(f"{path}: {message}")
        self.path = path


class MultipleProjectionError(InvariantError):
    """More than one projection variable in a single local scope."""


class NoVariableError(InvariantError):
    """An alist with a non-identity operation has no variable to operate on."""


class UnknownVariableError(AlistError):
    """Substitution target is not in the alist's local scope."""


# ---------------------------------------------------------------------------
# Attributes
# ---------------------------------------------------------------------------

OPERATION = "h"
OPERATION_VAR = "v"
SUBJECT = "s"
PROPERTY = "p"
OBJECT = "o"
TIME = "t"
LOCATION = "l"
EXPLANATION = "x"
CONTEXT = "c"
UNCERTAINTY = "u"
DATA_SOURCE = "d"

FUNCTIONAL_ATTRS = frozenset({OPERATION, OPERATION_VAR})
OBJECT_ATTRS = frozenset({SUBJECT, PROPERTY, OBJECT, TIME, LOCATION})
META_ATTRS = frozenset({EXPLANATION, CONTEXT, UNCERTAINTY, DATA_SOURCE})
RESERVED_ATTRS = FUNCTIONAL_ATTRS | OBJECT_ATTRS | META_ATTRS


class AttrClass(Enum):
    FUNCTIONAL = "functional"
    OBJECT_LEVEL = "object-level"
    META_LEVEL = "meta-level"


@dataclass(frozen=True)
class Attr:
    """An attribute name: one of the reserved short symbols or a custom name.

    Custom names are meta-level by definition and must not collide with the
    reserved symbols.
    """

    name: str

    def __post_init__(self):
        if not self.name:
            raise InvariantError("attribute name must be non-empty")
        if self.name.startswith(("?", "$")):
            raise InvariantError(f"attribute name {self.name!r} carries a variable sigil")

    @property
    def is_custom(self) -> bool:
        return self.name not in RESERVED_ATTRS

    def __str__(self) -> str:
        return self.name


# Reserved attribute singletons, for convenient construction.
H = Attr(OPERATION)
V = Attr(OPERATION_VAR)
S = Attr(SUBJECT)
P = Attr(PROPERTY)
O = Attr(OBJECT)
T = Attr(TIME)
L = Attr(LOCATION)
X = Attr(EXPLANATION)
C = Attr(CONTEXT)
U = Attr(UNCERTAINTY)
D = Attr(DATA_SOURCE)


def classify_attribute(attr: Attr) -> AttrClass:
    """Classify an attribute as functional, object-level or meta-level.

    Total: every attribute belongs to exactly one class; custom names are
    always meta-level.
    """
    if attr.name in FUNCTIONAL_ATTRS:
        return AttrClass.FUNCTIONAL
    if attr.name in OBJECT_ATTRS:
        return AttrClass.OBJECT_LEVEL
    return AttrClass.META_LEVEL


# ---------------------------------------------------------------------------
# Variables
# ---------------------------------------------------------------------------


class VarKind(Enum):
    PROJECTION = "?"
    AUXILIARY = "$"


@dataclass(frozen=True)
class VariableRef:
    """A variable: ``?name`` projects its bound value out of the alist,
    ``$name`` is auxiliary (internal only)."""

    kind: VarKind
    name: str

    def __post_init__(self):
        if not self.name or any(ch.isspace() for ch in self.name):
            raise InvariantError(f"bad variable name {self.name!r}")

    @property
    def is_projection(self) -> bool:
        return self.kind is VarKind.PROJECTION

    def __str__(self) -> str:
        return self.kind.value + self.name


def projection(name: str) -> VariableRef:
    return VariableRef(VarKind.PROJECTION, name)


def auxiliary(name: str) -> VariableRef:
    return VariableRef(VarKind.AUXILIARY, name)


def parse_variable(text: str) -> VariableRef:
    """Parse a sigil-prefixed variable rendering like ``?x`` or ``$y``."""
    if text.startswith("?"):
        return projection(text[1:])
    if text.startswith("$"):
        return auxiliary(text[1:])
    raise InvariantError(f"{text!r} is not a variable rendering")


def is_variable_string(text) -> bool:
    return isinstance(text, str) and len(text) > 1 and text[0] in "?$"


class FreshNames:
    """Monotone fresh-variable-name generator, avoiding a set of used names."""

    def __init__(self, prefix: str = "v", used: Iterable[str] = ()):
        self._prefix = prefix
        self._used = set(used)
        self._counter = itertools.count(1)

    def next(self) -> str:
        for n in self._counter:
            name = f"{self._prefix}{n}"
            if name not in self._used:
                self._used.add(name)
                return name
        raise AssertionError("unreachable")

    def auxiliary(self) -> VariableRef:
        return auxiliary(self.next())


# ---------------------------------------------------------------------------
# Values and the alist itself
# ---------------------------------------------------------------------------

Constant = Union[str, int, float, bool]
#: An alist value: a constant, a variable, a nested alist, or a flat tuple.
AlistValue = Union[Constant, VariableRef, "Alist", tuple]

AlistKey = Union[Attr, VariableRef]


def _freeze_value(value, path: str, depth_in_list: int = 0):
    """Normalize a value into its immutable internal form."""
    if isinstance(value, (VariableRef, Alist)):
        if depth_in_list and isinstance(value, tuple):
            raise InvariantError("value lists must be flat", path)
        return value
    if isinstance(value, bool) or isinstance(value, (int, float, str)):
        return value
    if isinstance(value, (list, tuple)):
        if depth_in_list:
            raise InvariantError("value lists must be flat", path)
        return tuple(
            _freeze_value(v, f"{path}[{i}]", depth_in_list + 1) for i, v in enumerate(value)
        )
    raise InvariantError(f"unsupported value of type {type(value).__name__}", path)


def _check_time_value(alist: "Alist") -> None:
    value = alist.entries.get(T)
    if value is None or isinstance(value, (VariableRef, Alist, bool)):
        return
    if isinstance(value, int):
        return  # bare year
    if isinstance(value, float):
        raise InvariantError("time must be an integer year or ISO-8601 date string", "$.t")
    if isinstance(value, tuple):
        return  # list of time points, validated element-wise by sequence users
    # A string time is either an ISO-8601 date or the name of an attached
    # range child (a Skolem constant keyed elsewhere in the same alist).
    if any(isinstance(k, Attr) and k.name == value for k in alist.entries):
        return
    try:
        datetime.date.fromisoformat(value)
    except ValueError:
        raise InvariantError(
            f"time value {value!r} is neither an ISO-8601 date nor a range key", "$.t"
        ) from None


class Alist:
    """An immutable set of attribute-value pairs plus variable bindings.

    ``entries`` hold the question shape; ``bindings`` hold instantiations
    produced by resolution, so a resolved alist retains its query structure.
    Keys are attributes or variables (a variable key attaches a nested alist
    or records an instantiation). Structural equality ignores entry order.
    """

    __slots__ = ("_entries", "_bindings")

    def __init__(
        self,
        entries: Mapping[AlistKey, AlistValue] | None = None,
        bindings: Mapping[VariableRef, AlistValue] | None = None,
    ):
        frozen: dict[AlistKey, AlistValue] = {}
        for key, value in (entries or {}).items():
            if not isinstance(key, (Attr, VariableRef)):
                raise InvariantError(f"bad entry key {key!r}")
            path = f"$.{key}"
            value = _freeze_value(value, path)
            if isinstance(key, VariableRef) and isinstance(value, VariableRef):
                raise InvariantError(
                    "a variable key must map to a nested alist or an instantiation", path
                )
            frozen[key] = value
        object.__setattr__(self, "_entries", frozen)
        object.__setattr__(
            self,
            "_bindings",
            {k: _freeze_value(v, f"$[{k}]") for k, v in (bindings or {}).items()},
        )

    # -- basic protocol ----------------------------------------------------

    @property
    def entries(self) -> dict[AlistKey, AlistValue]:
        return self._entries

    @property
    def bindings(self) -> dict[VariableRef, AlistValue]:
        return self._bindings

    def __eq__(self, other) -> bool:
        if not isinstance(other, Alist):
            return NotImplemented
        return self._entries == other._entries and self._bindings == other._bindings

    def __hash__(self) -> int:
        return hash(
            (frozenset(self._entries.items()), frozenset(self._bindings.items()))
        )

    def __repr__(self) -> str:
        pairs = ", ".join(f"{k}:{_show(v)}" for k, v in self._entries.items())
        if self._bindings:
            bound = ", ".join(f"{k}={_show(v)}" for k, v in self._bindings.items())
            return f"Alist({{{pairs}}} | {bound})"
        return f"Alist({{{pairs}}})"

    def __contains__(self, key: AlistKey) -> bool:
        return key in self._entries

    def get(self, key: AlistKey, default=None):
        return self._entries.get(key, default)

    # -- derived construction ----------------------------------------------

    def with_entries(self, updates: Mapping[AlistKey, AlistValue]) -> "Alist":
        merged = dict(self._entries)
        merged.update(updates)
        return Alist(merged, self._bindings)

    def without(self, *keys: AlistKey) -> "Alist":
        return Alist(
            {k: v for k, v in self._entries.items() if k not in keys}, self._bindings
        )

    def with_bindings(self, updates: Mapping[VariableRef, AlistValue]) -> "Alist":
        merged = dict(self._bindings)
        merged.update(updates)
        return Alist(self._entries, merged)

    # -- inspection ----------------------------------------------------------

    @property
    def operation(self) -> str | None:
        op = self._entries.get(H)
        return op if isinstance(op, str) else None

    def operation_variables(self) -> tuple[VariableRef, ...]:
        """The variables listed under ``v`` (constants in a ``v`` list are kept out)."""
        value = self._entries.get(V)
        if isinstance(value, VariableRef):
            return (value,)
        if isinstance(value, tuple):
            return tuple(v for v in value if isinstance(v, VariableRef))
        return ()

    def nested_children(self) -> Iterator[tuple[AlistKey, "Alist"]]:
        for key, value in self._entries.items():
            if isinstance(value, Alist):
                yield key, value

    def value_of(self, var: VariableRef, default=None):
        return self._bindings.get(var, default)


def _show(value) -> str:
    if isinstance(value, tuple):
        return "[" + ",".join(_show(v) for v in value) + "]"
    return str(value)


# ---------------------------------------------------------------------------
# Scope and state
# ---------------------------------------------------------------------------


def local_scope(alist: Alist) -> set[VariableRef]:
    """Variables occurring as entry values or entry keys of this alist,
    excluding any that appear only inside nested child alists."""
    scope: set[VariableRef] = set()
    for key, value in alist.entries.items():
        if isinstance(key, VariableRef):
            scope.add(key)
        if isinstance(value, VariableRef):
            scope.add(value)
        elif isinstance(value, tuple):
            scope.update(v for v in value if isinstance(v, VariableRef))
    return scope


def global_scope(alist: Alist) -> set[VariableRef]:
    """Union of local scopes over the alist and all transitively nested alists."""
    scope = local_scope(alist)
    for _, child in alist.nested_children():
        scope |= global_scope(child)
    return scope


def projection_variables(alist: Alist) -> set[VariableRef]:
    return {v for v in local_scope(alist) if v.is_projection}


def is_simple(alist: Alist) -> bool:
    """True iff no entry value (under any key) is a nested alist."""
    return not any(isinstance(v, Alist) for v in alist.entries.values())


def all_bindings(alist: Alist) -> dict[VariableRef, AlistValue]:
    """Bindings collected over the alist and all nested children."""
    collected = dict(alist.bindings)
    for _, child in alist.nested_children():
        collected.update(all_bindings(child))
    return collected


class ResolutionState(Enum):
    GROUND = "ground"
    FULLY_RESOLVED = "fully-resolved"
    PARTIALLY_RESOLVED = "partially-resolved"


def resolution_state(alist: Alist) -> ResolutionState:
    """Ground alists have no variables at all; fully resolved ones have every
    variable instantiated; anything else is partially resolved."""
    scope = global_scope(alist)
    if not scope:
        return ResolutionState.GROUND
    bound = all_bindings(alist)
    if all(var in bound for var in scope):
        return ResolutionState.FULLY_RESOLVED
    return ResolutionState.PARTIALLY_RESOLVED


# ---------------------------------------------------------------------------
# Canonicalization and substitution
# ---------------------------------------------------------------------------

IDENTITY_OPERATION = "value"

# Assertion-style operations may be fully ground (they check rather than
# produce a value), so they are exempt from the no-variable check.
_ASSERTION_OPERATIONS = frozenset({"not", "and", "or", "equal"})


def canonicalize(alist: Alist) -> Alist:
    """Fill in the defaultable functional attributes.

    A missing operation defaults to the identity operation. A missing
    operation variable defaults to the projection variable when one exists,
    or to the sole auxiliary variable otherwise. A singleton list under ``v``
    collapses to the bare variable. Idempotent.
    """
    scope = local_scope(alist)
    projections = {v for v in scope if v.is_projection}
    if len(projections) > 1:
        names = ", ".join(sorted(str(v) for v in projections))
        raise MultipleProjectionError(f"multiple projection variables: {names}")
    _check_time_value(alist)

    updates: dict[AlistKey, AlistValue] = {}
    operation = alist.entries.get(H, IDENTITY_OPERATION)
    if H not in alist.entries:
        updates[H] = operation

    v_value = alist.entries.get(V)
    if isinstance(v_value, tuple) and len(v_value) == 1:
        v_value = v_value[0]
        updates[V] = v_value
    if v_value is None:
        if projections:
            updates[V] = next(iter(projections))
        else:
            auxiliaries = {v for v in scope if not v.is_projection}
            if len(auxiliaries) == 1:
                updates[V] = next(iter(auxiliaries))
            elif operation != IDENTITY_OPERATION:
                raise NoVariableError(
                    f"operation {operation!r} has no operation or projection variable"
                )
            # otherwise: ground fact (or variable-free identity), no v needed

    return alist.with_entries(updates) if updates else alist


def substitute(alist: Alist, var: VariableRef, value: AlistValue) -> Alist:
    """Record ``var -> value`` in the bindings. Local scope only: nested
    alists are untouched and callers recurse explicitly."""
    if isinstance(value, VariableRef) and value == var:
        raise InvariantError(f"cannot bind {var} to itself")
    if var not in local_scope(alist):
        raise UnknownVariableError(f"{var} is not in the local scope")
    return alist.with_bindings({var: value})
