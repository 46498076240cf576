"""Decomposition/aggregation inference over alists.

The loop: normalize a nested query into simple alists, retrieve leaves from
the knowledge sources, and when retrieval fails decompose further (partition
an object-level attribute via partOf, or split the time attribute into an
ordered sequence). Child results are reduced back into the parent with the
parent's operation, building an inference graph that records provenance,
confidence and an explanation for every step.

Confidence semantics: the ``u`` meta attribute stores confidence in [0,1].
Leaves take their source's confidence; an aggregated node multiplies its
children's confidences (so a parent is never more confident than its least
confident child); regression multiplies in 1/(1+RMSE).
"""

from __future__ import annotations

import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Mapping, NamedTuple, Sequence

from .core import (
    Alist,
    AlistError,
    AlistKey,
    AlistValue,
    Attr,
    AttrClass,
    D,
    FreshNames,
    H,
    L,
    O,
    P,
    S,
    T,
    U,
    V,
    VariableRef,
    auxiliary,
    canonicalize,
    classify_attribute,
    global_scope,
    is_simple,
    local_scope,
    projection_variables,
)
from .fol import RANGE_PROPERTY
from .kb import KbSet, RetrievalResult
from .serialization import to_jsonable

EQUAL_TOLERANCE = 1e-9

#: Reserved variable that carries a reduced value with no natural slot.
AGG_VAR = auxiliary("agg")


class UnknownOperationError(AlistError):
    """The operation is not in the registry."""


class ArityError(AlistError):
    """The operation received the wrong number or kind of operands."""


class EmptyAggregationError(AlistError):
    """min/max/avg over zero values."""


class DegenerateDataError(AlistError):
    """Regression needs at least two distinct time points."""


class OpenWorldError(AlistError):
    """A closed-world negation strategy was invoked on an open source."""


class NotFunctionalError(AlistError):
    """Functional-difference negation needs a unique-valued property."""


class DepthExceededError(AlistError):
    """Decomposition recursion hit the depth limit."""


class NoAnswerError(AlistError):
    """Every strategy was exhausted; carries the partial inference graph."""

    def __init__(self, message: str, graph: "InferenceGraph | None" = None):
        super().__init__(message)
        self.graph = graph


# ---------------------------------------------------------------------------
# Environment and rules
# ---------------------------------------------------------------------------


class NotStrategy(Enum):
    CLOSED_WORLD = "closed_world"
    FAILURE = "failure"
    FUNCTIONAL_DIFFERENCE = "functional_difference"


@dataclass
class Environment:
    """Inference-time context: limits, negation strategy, per-source
    confidence overrides, and time ranges for sequence decomposition."""

    max_depth: int = 3
    not_strategy: NotStrategy = NotStrategy.FAILURE
    functional_properties: frozenset[str] = frozenset()
    time_ranges: Mapping[str, Sequence] = field(default_factory=dict)
    source_confidence: Mapping[str, float] = field(default_factory=dict)
    parallel: bool = True

    def __post_init__(self):
        if self.max_depth < 1:
            raise DepthExceededError("max_depth must be at least 1")


class RuleKind(Enum):
    NORMALIZATION = "normalization"
    PARTITION = "partition"
    SEQUENCE = "sequence"


@dataclass(frozen=True)
class DecompositionRule:
    kind: RuleKind
    attr: Attr | None = None
    relation: str | None = None
    values: tuple = ()

    def __post_init__(self):
        if self.kind is not RuleKind.NORMALIZATION:
            if self.attr is None or classify_attribute(self.attr) is not AttrClass.OBJECT_LEVEL:
                raise AlistError(f"{self.kind.value} needs an object-level attribute")
        if self.kind is RuleKind.SEQUENCE and not self.values:
            raise AlistError("sequence needs a non-empty ordered value list")

    def label(self) -> str:
        if self.kind is RuleKind.PARTITION:
            return f"partition({self.attr},{self.relation})"
        if self.kind is RuleKind.SEQUENCE:
            return f"sequence({self.attr},{len(self.values)})"
        return "normalization"


NORMALIZATION = DecompositionRule(RuleKind.NORMALIZATION)


# ---------------------------------------------------------------------------
# Inference graph
# ---------------------------------------------------------------------------


class NodeState(Enum):
    UNEXPLORED = "unexplored"
    RETRIEVED = "retrieved"
    REDUCED = "reduced"
    FAILED = "failed"


@dataclass
class InferenceNode:
    id: int
    alist: Alist
    rule_applied: DecompositionRule | None = None
    children: list[int] = field(default_factory=list)
    state: NodeState = NodeState.UNEXPLORED
    uncertainty: float = 1.0
    sources: set[str] = field(default_factory=set)
    explanation: str = ""
    value: AlistValue | None = None


class InferenceGraph:
    """Tree of inference steps; acyclic by construction (children are
    created strictly after their parent, each with exactly one parent)."""

    def __init__(self):
        self.nodes: dict[int, InferenceNode] = {}
        self.root: int = 0

    def add(self, alist: Alist, parent: int | None = None) -> InferenceNode:
        node = InferenceNode(id=len(self.nodes), alist=alist)
        self.nodes[node.id] = node
        if parent is not None:
            self.nodes[parent].children.append(node.id)
        return node

    def __len__(self) -> int:
        return len(self.nodes)

    def to_json(self) -> dict:
        return {
            "root": self.root,
            "nodes": [
                {
                    "id": node.id,
                    "alist": to_jsonable(node.alist),
                    "rule": node.rule_applied.label() if node.rule_applied else None,
                    "state": node.state.value,
                    "confidence": node.uncertainty,
                    "sources": sorted(node.sources),
                    "value": _jsonable_value(node.value),
                    "explanation": node.explanation,
                    "children": list(node.children),
                }
                for _, node in sorted(self.nodes.items())
            ],
        }


def _jsonable_value(value):
    if isinstance(value, tuple):
        return [_jsonable_value(v) for v in value]
    if isinstance(value, VariableRef):
        return str(value)
    if isinstance(value, Alist):
        return to_jsonable(value)
    return value


def explain(graph: InferenceGraph) -> str:
    """Deterministic indented rendering: one line per node with the rule,
    operation, bound value, sources and confidence."""
    if not graph.nodes:
        raise AlistError("cannot explain an empty graph")
    lines: list[str] = []

    def walk(node_id: int, depth: int) -> None:
        node = graph.nodes[node_id]
        op = node.alist.operation or "value"
        rule = node.rule_applied.label() if node.rule_applied else "retrieval"
        sources = ",".join(sorted(node.sources)) or "-"
        value = _render_value(node.value)
        line = (
            f"{'  ' * depth}{op} [{rule}] value={value} "
            f"sources={sources} confidence={node.uncertainty:.3f}"
        )
        if node.state is NodeState.FAILED:
            line += " FAILED"
        if node.explanation:
            line += f" ({node.explanation})"
        lines.append(line)
        for child_id in node.children:
            walk(child_id, depth + 1)

    walk(graph.root, 0)
    return "\n".join(lines)


def _render_value(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, tuple):
        return "[" + ",".join(_render_value(v) for v in value) + "]"
    return str(value)


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------


class ChildLink(NamedTuple):
    key: AlistKey
    alist: Alist
    is_range: bool


class NormalizeResult(NamedTuple):
    root: Alist
    children: list[ChildLink]


def _is_range_child(key: AlistKey, child: Alist) -> bool:
    if not isinstance(key, Attr) or not key.is_custom:
        return False
    if child.entries.get(P) != RANGE_PROPERTY or child.entries.get(S) != key.name:
        return False
    return isinstance(child.entries.get(O), tuple)


def normalize(alist: Alist) -> NormalizeResult:
    """Split a nested alist into a simple root plus its extracted children.

    A child keyed by a variable is a subquery whose projection instantiates
    that variable in the root; a range child (``{sk: {s:sk, p:range,
    o:[...]}}``) keeps its values for sequence decomposition; any other
    nested value is replaced by a fresh auxiliary variable linked to the
    extracted child. Variable keys holding constants become bindings.
    A simple alist comes back unchanged with no children.
    """
    entries: dict[AlistKey, AlistValue] = {}
    bindings = dict(alist.bindings)
    links: list[ChildLink] = []
    fresh = FreshNames(used={v.name for v in global_scope(alist)})
    for key, value in alist.entries.items():
        if isinstance(value, Alist):
            if _is_range_child(key, value):
                links.append(ChildLink(key, value, True))
                continue
            child = canonicalize(value)
            if isinstance(key, VariableRef):
                links.append(ChildLink(key, child, False))
                continue
            var = fresh.auxiliary()
            entries[key] = var
            links.append(ChildLink(var, child, False))
            continue
        if isinstance(key, VariableRef) and not isinstance(value, (Alist, VariableRef)):
            bindings[key] = value
            continue
        entries[key] = value
    return NormalizeResult(Alist(entries, bindings), links)


# ---------------------------------------------------------------------------
# Partition and sequence decomposition
# ---------------------------------------------------------------------------

_PARTITIONABLE = (S, O, L)


def partition(alist: Alist, attr: Attr, kb: KbSet) -> list[Alist]:
    """One child per entity recorded (via partOf) as a part of the
    attribute's value; children are disjoint by construction and come back
    sorted by entity name. Empty when no parts are known."""
    if attr not in _PARTITIONABLE:
        raise AlistError(f"cannot partition on {attr}; use one of s, o, l")
    whole = alist.entries.get(attr)
    if whole is None or isinstance(whole, (VariableRef, Alist, tuple)):
        raise AlistError(f"partition needs a constant value under {attr}")
    return [alist.with_entries({attr: part}) for part in kb.part_of_children(whole)]


def sequence(alist: Alist, attr: Attr, values: Sequence) -> list[Alist]:
    """One child per value, in the given order."""
    if not values:
        raise AlistError("sequence needs a non-empty ordered value list")
    return [alist.with_entries({attr: value}) for value in values]


# ---------------------------------------------------------------------------
# Regression
# ---------------------------------------------------------------------------


def linear_fit(points: Sequence[tuple[float, float]]) -> tuple[float, float, float]:
    """Ordinary least squares over (t, y) pairs: (slope, intercept, rmse)."""
    if len(points) < 2:
        raise DegenerateDataError("need at least two points")
    ts = [float(t) for t, _ in points]
    ys = [float(y) for _, y in points]
    if len(set(ts)) < 2:
        raise DegenerateDataError("all time points are equal")
    slope, intercept = statistics.linear_regression(ts, ys)
    residuals = [y - (intercept + slope * t) for t, y in zip(ts, ys)]
    rmse = (sum(r * r for r in residuals) / len(residuals)) ** 0.5
    return slope, intercept, rmse


def regress_predict(points: Sequence[tuple[float, float]], t_query: float) -> float:
    """Least-squares linear prediction of y at ``t_query``."""
    slope, intercept, _ = linear_fit(points)
    return intercept + slope * float(t_query)


# ---------------------------------------------------------------------------
# Answers and operands
# ---------------------------------------------------------------------------


def answer_value(alist: Alist) -> AlistValue | None:
    """The value an alist answers with: the projection variable's binding,
    then the single operation variable's binding, then the reserved
    aggregate slot, then the tuple of a v-list's bindings."""
    projections = sorted((v for v in alist.bindings if v.is_projection), key=str)
    if projections:
        return alist.bindings[projections[0]]
    op_vars = alist.operation_variables()
    if len(op_vars) == 1 and op_vars[0] in alist.bindings:
        return alist.bindings[op_vars[0]]
    if AGG_VAR in alist.bindings:
        return alist.bindings[AGG_VAR]
    if op_vars and all(v in alist.bindings for v in op_vars):
        return tuple(alist.bindings[v] for v in op_vars)
    return None


def operand_value(alist: Alist) -> AlistValue | None:
    """The value an alist contributes to its parent's aggregation: the
    operation variable's binding takes precedence over the projection."""
    op_vars = alist.operation_variables()
    if len(op_vars) == 1 and op_vars[0] in alist.bindings:
        return alist.bindings[op_vars[0]]
    if AGG_VAR in alist.bindings:
        return alist.bindings[AGG_VAR]
    projections = sorted((v for v in alist.bindings if v.is_projection), key=str)
    if projections:
        return alist.bindings[projections[0]]
    if op_vars and all(v in alist.bindings for v in op_vars):
        return tuple(alist.bindings[v] for v in op_vars)
    return None


def _confidence_of(alist: Alist) -> float:
    value = alist.entries.get(U)
    return value if isinstance(value, (int, float)) and not isinstance(value, bool) else 1.0


def _sources_of(alist: Alist) -> set[str]:
    value = alist.entries.get(D)
    if isinstance(value, str):
        return {value}
    if isinstance(value, tuple):
        return {v for v in value if isinstance(v, str)}
    return set()


def _flatten(values: Iterable) -> list:
    out = []
    for value in values:
        if isinstance(value, tuple):
            out.extend(value)
        elif value is not None:
            out.append(value)
    return out


# ---------------------------------------------------------------------------
# Operation registry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AggregateResult:
    value: AlistValue
    confidence_factor: float = 1.0
    winners: tuple[int, ...] | None = None  # operand indices, for argmax-style ops


Reducer = Callable[[list, list[Alist], Alist], AggregateResult]


class OperationRegistry:
    """Named reduce operations; lookup is case-insensitive, so AND/OR/NOT
    and arithmetic names coexist."""

    def __init__(self):
        self._ops: dict[str, Reducer] = {}

    def register(self, name: str, reducer: Reducer) -> None:
        self._ops[name.lower()] = reducer

    def get(self, name: str) -> Reducer:
        try:
            return self._ops[name.lower()]
        except KeyError:
            raise UnknownOperationError(f"unknown operation {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name.lower() in self._ops


def _require_numbers(values: Iterable, op: str) -> list[float]:
    out = []
    for value in values:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ArityError(f"{op} needs numeric operands, got {value!r}")
        out.append(value)
    return out


def _non_empty(values: list, op: str) -> list:
    if not values:
        raise EmptyAggregationError(f"{op} over zero values")
    return values


def _op_value(values, children, parent):
    if len(values) == 1:
        return AggregateResult(values[0])
    return AggregateResult(tuple(values))


def _op_min(values, children, parent):
    values = _non_empty(values, "min")
    best = min(range(len(values)), key=lambda i: values[i])
    return AggregateResult(values[best], winners=(best,))


def _op_max(values, children, parent):
    values = _non_empty(values, "max")
    best = max(range(len(values)), key=lambda i: values[i])
    return AggregateResult(values[best], winners=(best,))


def _op_sum(values, children, parent):
    return AggregateResult(sum(_require_numbers(values, "sum")))


def _op_avg(values, children, parent):
    values = _require_numbers(_non_empty(values, "avg"), "avg")
    return AggregateResult(sum(values) / len(values))


def _op_count(values, children, parent):
    return AggregateResult(len(values))


def values_equal(a, b) -> bool:
    """Numbers within 1e-9, strings exactly."""
    a_num = isinstance(a, (int, float)) and not isinstance(a, bool)
    b_num = isinstance(b, (int, float)) and not isinstance(b, bool)
    if a_num and b_num:
        return abs(a - b) <= EQUAL_TOLERANCE
    return a == b


def _op_equal(values, children, parent):
    if len(values) != 2:
        raise ArityError(f"equal needs exactly two operands, got {len(values)}")
    return AggregateResult(values_equal(values[0], values[1]))


def _op_and(values, children, parent):
    return AggregateResult(tuple(values))


def _op_or(values, children, parent):
    present = [v for v in values if v is not None]
    return AggregateResult(present[0] if present else None)


def _op_not(values, children, parent):
    # Negation as failure over already-retrieved values; the strategy-aware
    # treatment lives in evaluate_not.
    return AggregateResult(len(values) == 0)


def _rank_k(parent: Alist) -> int:
    v_entry = parent.entries.get(V)
    if isinstance(v_entry, tuple):
        for item in v_entry:
            if isinstance(item, int) and not isinstance(item, bool):
                return item
    return 1


def _op_rank(values, children, parent):
    values = _non_empty(values, "rank")
    k = _rank_k(parent)
    ranked = sorted(range(len(values)), key=lambda i: values[i], reverse=True)
    winners = tuple(ranked[:k])
    picked = [values[i] for i in winners]
    return AggregateResult(picked[0] if k == 1 else tuple(picked), winners=winners)


def _op_regress(values, children, parent):
    points = []
    for child in children:
        t_value = child.entries.get(T)
        y_value = operand_value(child)
        if isinstance(y_value, tuple):
            y_value = y_value[0] if y_value else None
        if t_value is None or y_value is None:
            continue
        points.append((t_value, y_value))
    t_query = parent.entries.get(T)
    if t_query is None or isinstance(t_query, (VariableRef, Alist, str)):
        raise ArityError("regress needs a concrete numeric time on the parent alist")
    slope, intercept, rmse = linear_fit(points)
    prediction = intercept + slope * float(t_query)
    return AggregateResult(prediction, confidence_factor=1.0 / (1.0 + rmse))


def default_registry() -> OperationRegistry:
    registry = OperationRegistry()
    for name, fn in [
        ("value", _op_value), ("min", _op_min), ("max", _op_max), ("sum", _op_sum),
        ("avg", _op_avg), ("count", _op_count), ("equal", _op_equal), ("and", _op_and),
        ("or", _op_or), ("not", _op_not), ("rank", _op_rank), ("regress", _op_regress),
    ]:
        registry.register(name, fn)
    return registry


DEFAULT_REGISTRY = default_registry()

_OPERAND_OPS = {"and", "or", "equal"}


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


def aggregate(
    op_name: str,
    parent: Alist,
    children: Sequence[Alist],
    registry: OperationRegistry = DEFAULT_REGISTRY,
) -> Alist:
    """Reduce resolved child alists into the parent.

    Operand values come from the operation-variable list for the logical
    and comparison operations (AND/OR/equal) and from the children's
    operation-variable values otherwise. The reduced value is bound to the
    parent's operation variable and the reserved aggregate slot; for
    argmax-style operations the winning child also instantiates the
    parent's projection variable (its bound candidate, or its subject).
    Confidence is the product of child confidences times the operation's
    own factor.
    """
    reducer = registry.get(op_name)
    parent = canonicalize(parent)
    op = op_name.lower()

    if op in _OPERAND_OPS:
        v_entry = parent.entries.get(V)
        v_items = v_entry if isinstance(v_entry, tuple) else (v_entry,) if v_entry else ()
        values = [
            parent.bindings.get(item) if isinstance(item, VariableRef) else item
            for item in v_items
        ]
        if op == "equal" and len(values) != 2:
            raise ArityError(f"equal needs exactly two operands, got {len(values)}")
        if op == "and" and any(v is None for v in values):
            raise EmptyAggregationError("AND with an unresolved operand")
    elif op == "rank":
        values = [operand_value(child) for child in children]
    else:
        values = _flatten(operand_value(child) for child in children)

    result = reducer(values, list(children), parent)

    confidence = result.confidence_factor
    sources: set[str] = set()
    for child in children:
        confidence *= _confidence_of(child)
        sources |= _sources_of(child)

    bindings: dict[VariableRef, AlistValue] = {AGG_VAR: result.value}
    op_vars = parent.operation_variables()
    if len(op_vars) == 1:
        bindings[op_vars[0]] = result.value
    if result.winners:
        winner = children[result.winners[0]]
        for proj in projection_variables(parent):
            if proj in op_vars:
                continue
            value = winner.bindings.get(proj, winner.entries.get(S))
            if isinstance(value, VariableRef):
                value = winner.bindings.get(value)
            if value is not None:
                bindings[proj] = value

    resolved = parent.with_bindings(bindings)
    meta: dict[AlistKey, AlistValue] = {U: confidence}
    if sources:
        meta[D] = tuple(sorted(sources))
    return resolved.with_entries(meta)


# ---------------------------------------------------------------------------
# Negation strategies
# ---------------------------------------------------------------------------


def _positive_query(alist: Alist) -> Alist:
    entries = {k: v for k, v in alist.entries.items() if k not in (H, V)}
    return Alist(entries, alist.bindings)


def _negation_variable(alist: Alist) -> tuple[Attr, VariableRef] | None:
    for attr in (O, S, L, T):
        value = alist.entries.get(attr)
        if isinstance(value, VariableRef):
            return attr, value
    return None


def evaluate_not(
    alist: Alist,
    strategy: NotStrategy,
    kb: KbSet,
    functional_properties: Iterable[str] = (),
) -> Alist:
    """Resolve a negated alist under one of the three strategies.

    Closed-world enumerates the complement of the satisfying values among
    the stored values of the same property; negation-as-failure holds iff
    exhaustive retrieval finds nothing; functional difference resolves the
    positive query for a unique-valued property and holds iff every stored
    value differs from the asserted one. The boolean (or complement set)
    lands in the reserved aggregate slot, and on the negated variable for
    the complement case.
    """
    alist = canonicalize(alist)
    positive = _positive_query(alist)

    if strategy in (NotStrategy.CLOSED_WORLD, NotStrategy.FAILURE):
        if not kb.closed_world:
            raise OpenWorldError(f"{strategy.value} requires closed-world sources")

    if strategy is NotStrategy.FAILURE:
        rows = kb.retrieve(positive)
        return alist.with_bindings({AGG_VAR: len(rows) == 0})

    if strategy is NotStrategy.CLOSED_WORLD:
        found = _negation_variable(alist)
        if found is None:
            rows = kb.retrieve(positive)
            return alist.with_bindings({AGG_VAR: len(rows) == 0})
        position, var = found
        prop = alist.entries.get(P)
        candidates = kb.stored_values_at(position, prop if isinstance(prop, str) else None)
        satisfying = {
            row.bindings[var] for row in kb.retrieve(positive) if var in row.bindings
        }
        complement = tuple(c for c in candidates if c not in satisfying)
        return alist.with_bindings({var: complement, AGG_VAR: complement})

    # Functional difference
    prop = alist.entries.get(P)
    if not isinstance(prop, str) or prop not in set(functional_properties):
        raise NotFunctionalError(f"property {prop!r} is not declared unique-valued")
    asserted = None
    asserted_attr = None
    for attr in (O, L, T):
        value = alist.entries.get(attr)
        if value is not None and not isinstance(value, (VariableRef, Alist)):
            asserted = value
            asserted_attr = attr
            break
    if asserted is None:
        raise NotFunctionalError("functional difference needs an asserted constant value")
    probe_var = auxiliary("actual")
    probe = positive.with_entries({asserted_attr: probe_var})
    rows = kb.retrieve(probe)
    actuals = {row.bindings[probe_var] for row in rows if probe_var in row.bindings}
    verdict = bool(actuals) and all(not values_equal(actual, asserted) for actual in actuals)
    return alist.with_bindings({AGG_VAR: verdict})


# ---------------------------------------------------------------------------
# The inference loop
# ---------------------------------------------------------------------------

_LEAF_REDUCIBLE = {"count", "max", "min", "avg", "sum"}
_PREFETCHABLE_OPS = {"value"} | _LEAF_REDUCIBLE


def _is_pure_functional(alist: Alist) -> bool:
    """No object-level content: only h/v, meta attributes and variable keys."""
    return not any(
        isinstance(key, Attr) and classify_attribute(key) is AttrClass.OBJECT_LEVEL
        for key in alist.entries
    )


def _prefetchable(alist: Alist) -> bool:
    if not is_simple(alist):
        return False
    return (alist.operation or "value").lower() in _PREFETCHABLE_OPS


def _ground_variant(
    root: Alist,
    target: VariableRef | None,
    candidate: AlistValue,
    remainder: Mapping[VariableRef, Alist],
) -> Alist:
    """One per-candidate copy of the root: the target variable's occurrences
    become the candidate constant and the operation resets to retrieval,
    keeping whatever operation variables are still open."""
    entries: dict[AlistKey, AlistValue] = {}
    for key, value in root.entries.items():
        if key in (H, V, U, D):
            continue
        if target is not None and value == target:
            entries[key] = candidate
        elif isinstance(value, tuple):
            entries[key] = tuple(candidate if v == target else v for v in value)
        else:
            entries[key] = value
    for var, child in remainder.items():
        entries[var] = child
    variant = Alist(entries, {target: candidate} if target is not None else {})
    remaining = [v for v in root.operation_variables() if v in local_scope(variant)]
    if remaining:
        variant = variant.with_entries(
            {V: remaining[0] if len(remaining) == 1 else tuple(remaining)}
        )
    return variant


class _Engine:
    def __init__(self, kbs: KbSet, env: Environment, registry: OperationRegistry):
        self.kbs = kbs
        self.env = env
        self.registry = registry
        self.graph = InferenceGraph()

    # -- leaves ---------------------------------------------------------------

    def _leaf_confidence(self, rows: list[RetrievalResult]) -> float:
        confidences = [
            self.env.source_confidence.get(row.source, row.confidence) for row in rows
        ]
        return min(confidences) if confidences else 1.0

    def _bind_rows(self, alist: Alist, rows: list[RetrievalResult]) -> Alist:
        merged: dict[VariableRef, list] = {}
        for row in rows:
            for var, value in row.bindings.items():
                merged.setdefault(var, []).append(value)
        bindings = {
            var: values[0] if len(values) == 1 else tuple(values)
            for var, values in merged.items()
        }
        confidence = self._leaf_confidence(rows)
        sources = tuple(sorted({row.source for row in rows}))
        return alist.with_bindings(bindings).with_entries({U: confidence, D: sources})

    def _apply_leaf_operation(self, alist: Alist) -> Alist:
        """Reduce a leaf's own aggregate (count/max/...) over the values its
        retrieval bound to the operation variable."""
        op = (alist.operation or "value").lower()
        if op not in _LEAF_REDUCIBLE:
            return alist
        op_vars = alist.operation_variables()
        if len(op_vars) != 1 or op_vars[0] not in alist.bindings:
            return alist
        var = op_vars[0]
        raw = alist.bindings[var]
        values = list(raw) if isinstance(raw, tuple) else [raw]
        result = self.registry.get(op)(values, [], alist)
        bindings: dict[VariableRef, AlistValue] = {var: result.value, AGG_VAR: result.value}
        if result.winners:
            winner = result.winners[0]
            for proj in projection_variables(alist):
                if proj == var:
                    continue
                bound = alist.bindings.get(proj)
                if isinstance(bound, tuple) and winner < len(bound):
                    bindings[proj] = bound[winner]
        return alist.with_bindings(bindings)

    def _retrieve_node(self, node: InferenceNode, rows: list[RetrievalResult]) -> bool:
        if not rows:
            return False
        resolved = self._apply_leaf_operation(self._bind_rows(canonicalize(node.alist), rows))
        node.alist = resolved
        node.state = NodeState.RETRIEVED
        node.uncertainty = _confidence_of(resolved)
        node.sources = _sources_of(resolved)
        value = answer_value(resolved)
        node.value = True if value is None else value  # ground match = existence
        node.explanation = "retrieved"
        return True

    # -- sibling batches --------------------------------------------------------

    def _solve_children(
        self, parent: InferenceNode, alists: Sequence[Alist], depth: int,
    ) -> list[InferenceNode]:
        """Solve sibling queries. Leaf retrievals run concurrently, but nodes
        are created and finalized in child order, so the graph and answer
        are independent of retrieval completion order."""
        nodes = [self.graph.add(alist, parent.id) for alist in alists]
        fetched: dict[int, list[RetrievalResult]] = {}
        fetchable = [i for i, node in enumerate(nodes) if _prefetchable(node.alist)]
        if self.env.parallel and len(fetchable) > 1:
            queries = [nodes[i].alist for i in fetchable]
            with ThreadPoolExecutor(max_workers=min(8, len(queries))) as pool:
                for i, rows in zip(fetchable, pool.map(self.kbs.retrieve, queries)):
                    fetched[i] = rows
        else:
            for i in fetchable:
                fetched[i] = self.kbs.retrieve(nodes[i].alist)
        for i, node in enumerate(nodes):
            if i in fetched and self._retrieve_node(node, fetched[i]):
                continue
            self._solve(node, depth, already_searched=i in fetched)
        return nodes

    # -- main recursion -----------------------------------------------------------

    def _solve(self, node: InferenceNode, depth: int, already_searched: bool = False) -> bool:
        try:
            alist = canonicalize(node.alist)
        except AlistError as exc:
            node.state = NodeState.FAILED
            node.explanation = f"invalid alist: {exc}"
            return False
        node.alist = alist

        if (alist.operation or "").lower() == "not":
            return self._solve_not(node)

        root, links = normalize(alist)
        subqueries = [link for link in links if not link.is_range]
        ranges = [link for link in links if link.is_range]

        if subqueries:
            node.rule_applied = NORMALIZATION
            if _is_pure_functional(root):
                return self._solve_compound(node, root, subqueries, depth)
            return self._solve_generators(node, root, subqueries, depth)

        node.alist = root  # bindings inherited from variable-keyed constants
        if not already_searched:
            if self._retrieve_node(node, self.kbs.retrieve(root)):
                return True

        return self._decompose(node, root, ranges, depth)

    # -- negation ----------------------------------------------------------------

    def _solve_not(self, node: InferenceNode) -> bool:
        try:
            resolved = evaluate_not(
                node.alist, self.env.not_strategy, self.kbs, self.env.functional_properties
            )
        except AlistError as exc:
            node.state = NodeState.FAILED
            node.explanation = str(exc)
            return False
        node.alist = resolved
        node.state = NodeState.REDUCED
        node.value = answer_value(resolved)
        node.explanation = f"negation via {self.env.not_strategy.value}"
        return True

    # -- compound (purely functional) nodes ----------------------------------------

    def _solve_compound(
        self, node: InferenceNode, root: Alist, links: Sequence[ChildLink], depth: int,
    ) -> bool:
        operation = (root.operation or "value").lower()
        child_nodes = self._solve_children(node, [link.alist for link in links], depth + 1)

        resolved = root
        succeeded = []
        for link, child in zip(links, child_nodes):
            if child.state is NodeState.FAILED:
                continue
            if isinstance(link.key, VariableRef):
                resolved = resolved.with_bindings({link.key: child.value})
            succeeded.append(child)

        if operation == "and" and len(succeeded) < len(links):
            node.alist = resolved
            node.state = NodeState.FAILED
            node.explanation = "a conjunct failed"
            return False
        if not succeeded:
            node.alist = resolved
            node.state = NodeState.FAILED
            node.explanation = "every operand failed"
            return False

        return self._reduce(node, resolved, [child.alist for child in succeeded], operation)

    # -- generator children (object-level root) -------------------------------------

    def _solve_generators(
        self, node: InferenceNode, root: Alist, links: Sequence[ChildLink], depth: int,
    ) -> bool:
        link = links[0]  # one candidate generator per nesting level in practice
        remainder = {
            l.key: l.alist for l in links[1:] if isinstance(l.key, VariableRef)
        }
        generator = self._solve_children(node, [link.alist], depth + 1)[0]
        if generator.state is NodeState.FAILED or generator.value in (None, ()):
            node.state = NodeState.FAILED
            node.explanation = "candidate subquery failed"
            return False
        value = generator.value
        candidates = list(value) if isinstance(value, tuple) else [value]

        key_var = link.key if isinstance(link.key, VariableRef) else None
        target = key_var
        op_vars = root.operation_variables()
        projections = sorted(projection_variables(root), key=str)
        if key_var is not None and key_var in op_vars and projections:
            # The child enumerates the aggregation domain: candidates ground
            # the projection while the operation variable stays retrievable.
            target = projections[0]

        variants = [_ground_variant(root, target, c, remainder) for c in candidates]
        variant_nodes = self._solve_children(node, variants, depth + 1)
        resolved = [n.alist for n in variant_nodes if n.state is not NodeState.FAILED]
        if not resolved:
            node.state = NodeState.FAILED
            node.explanation = "no candidate satisfied the query"
            return False
        return self._reduce(node, root, resolved, (root.operation or "value").lower())

    # -- decomposition fallbacks ------------------------------------------------------

    def _decompose(
        self, node: InferenceNode, root: Alist, ranges: Sequence[ChildLink], depth: int,
    ) -> bool:
        if depth + 1 > self.env.max_depth:
            node.state = NodeState.FAILED
            node.explanation = f"depth limit {self.env.max_depth} reached"
            return False

        # Sequence over a range attached to the time attribute.
        t_value = root.entries.get(T)
        for link in ranges:
            if isinstance(link.key, Attr) and t_value == link.key.name:
                values = tuple(link.alist.entries[O])
                rule = DecompositionRule(RuleKind.SEQUENCE, T, values=values)
                return self._solve_sequence(node, root, values, rule, depth)

        # Partition on subject, then object.
        for attr in (S, O):
            value = root.entries.get(attr)
            if value is None or isinstance(value, (VariableRef, Alist, tuple)):
                continue
            children = partition(root, attr, self.kbs)
            if children:
                node.rule_applied = DecompositionRule(
                    RuleKind.PARTITION, attr, relation="partOf"
                )
                child_nodes = self._solve_children(node, children, depth + 1)
                resolved = [n.alist for n in child_nodes if n.state is not NodeState.FAILED]
                if resolved:
                    return self._reduce(
                        node, root, resolved, (root.operation or "value").lower()
                    )

        # Sequence over an environment-supplied time range (prediction).
        prop = root.entries.get(P)
        env_range = self.env.time_ranges.get(prop) if isinstance(prop, str) else None
        if env_range and t_value is not None and not isinstance(t_value, (VariableRef, Alist)):
            values = tuple(env_range)
            rule = DecompositionRule(RuleKind.SEQUENCE, T, values=values)
            return self._solve_sequence(node, root, values, rule, depth)

        node.state = NodeState.FAILED
        node.explanation = "no data and no applicable decomposition"
        return False

    def _solve_sequence(
        self,
        node: InferenceNode,
        root: Alist,
        values: tuple,
        rule: DecompositionRule,
        depth: int,
    ) -> bool:
        node.rule_applied = rule
        children = sequence(root, T, values)
        child_nodes = self._solve_children(node, children, depth + 1)
        resolved = [n.alist for n in child_nodes if n.state is not NodeState.FAILED]
        if not resolved:
            node.state = NodeState.FAILED
            node.explanation = "no time point could be resolved"
            return False
        t_value = root.entries.get(T)
        predicting = (
            isinstance(t_value, (int, float))
            and not isinstance(t_value, bool)
            and t_value not in values
        )
        if predicting:
            return self._reduce(node, root, resolved, "regress")
        # A Skolem range key has served its purpose; drop it before reducing.
        parent = root.without(T) if isinstance(t_value, str) else root
        return self._reduce(node, parent, resolved, (root.operation or "value").lower())

    # -- reduction ----------------------------------------------------------------------

    def _reduce(
        self, node: InferenceNode, root: Alist, children: Sequence[Alist], operation: str,
    ) -> bool:
        try:
            resolved = aggregate(operation, root, children, self.registry)
        except AlistError as exc:
            node.state = NodeState.FAILED
            node.explanation = f"{operation}: {exc}"
            return False
        node.alist = resolved
        node.state = NodeState.REDUCED
        node.uncertainty = _confidence_of(resolved)
        node.sources = _sources_of(resolved)
        node.value = answer_value(resolved)
        node.explanation = f"aggregated with {operation}"
        return True


def infer(
    query: Alist,
    kbs: KbSet,
    env: Environment | None = None,
    registry: OperationRegistry = DEFAULT_REGISTRY,
) -> tuple[AlistValue, InferenceGraph]:
    """Resolve a query alist against the knowledge sources.

    Returns the answer (the root's projection binding, or the reduced
    value) together with the full inference graph. Raises
    :class:`NoAnswerError` carrying the partial graph when every strategy
    is exhausted.
    """
    env = env or Environment()
    engine = _Engine(kbs, env, registry)
    root_node = engine.graph.add(canonicalize(query))
    if not engine._solve(root_node, depth=0):
        raise NoAnswerError("query could not be resolved", engine.graph)
    return root_node.value, engine.graph
