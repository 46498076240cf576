"""First-order logic: AST, text parser, prenex normal form, dual
Skolemisation, and case-based translation of formulae into alists.

Queries are not negated before Skolemisation, so the usual roles flip:
universal variables become Skolem terms (they must stay uninstantiated or
we would answer only a special case) while existential variables become
free variables, ready to receive the values that answer the query.

Input grammar for :func:`parse_fol` (plumbing, not part of the formalism):
predicates and functions are ``name(arg, ...)``; lowercase identifiers are
variables; capitalized identifiers, quoted strings and numbers are
constants; connectives ``~`` ``&`` ``|`` (in precedence order) with
parentheses; quantifiers ``forall x.`` and ``exists x.`` scope as far
right as possible.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from .core import (
    Alist,
    AlistKey,
    AlistValue,
    Attr,
    AlistError,
    FreshNames,
    H,
    O,
    P,
    S,
    T,
    V,
    VariableRef,
    auxiliary,
    projection,
)

MAX_RANGE_EXPANSION = 1000
UNEXPANDED_RANGE_ATTR = Attr("unexpanded_range")
RANGE_PROPERTY = "range"

# Comparison/arithmetic predicates keep the generic argN scheme; relational
# predicate names read as subject/object pairs.
_NON_RELATIONAL = frozenset(
    {"gt", "lt", "ge", "le", "geq", "leq", "eq", "neq", "ne",
     "add", "sub", "mul", "div", "plus", "minus", "times"}
)


class UnsupportedFormulaError(AlistError):
    """The formula contains a construct outside the supported fragment."""


class FolParseError(AlistError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


class FolTerm:
    pass


@dataclass(frozen=True)
class Const(FolTerm):
    value: str | int | float | bool

    def __str__(self) -> str:
        return str(self.value)


@dataclass(frozen=True)
class Var(FolTerm):
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Func(FolTerm):
    name: str
    args: tuple[FolTerm, ...]

    def __post_init__(self):
        if not self.args:
            raise UnsupportedFormulaError("nullary functions are constants")

    def __str__(self) -> str:
        return f"{self.name}({', '.join(map(str, self.args))})"


@dataclass(frozen=True)
class SkolemTerm(FolTerm):
    """A Skolem function applied to the free (existential) variables in
    scope at its introduction; nullary Skolem terms are constants."""

    name: str
    free_args: tuple[str, ...] = ()

    def __str__(self) -> str:
        if self.free_args:
            return f"{self.name}({', '.join(self.free_args)})"
        return self.name


class FolFormula:
    pass


@dataclass(frozen=True)
class Pred(FolFormula):
    name: str
    args: tuple[FolTerm, ...] = ()

    def __str__(self) -> str:
        if not self.args:
            return f"{self.name}()"
        return f"{self.name}({', '.join(map(str, self.args))})"


@dataclass(frozen=True)
class And(FolFormula):
    left: FolFormula
    right: FolFormula

    def __str__(self) -> str:
        return f"({self.left} & {self.right})"


@dataclass(frozen=True)
class Or(FolFormula):
    left: FolFormula
    right: FolFormula

    def __str__(self) -> str:
        return f"({self.left} | {self.right})"


@dataclass(frozen=True)
class Not(FolFormula):
    sub: FolFormula

    def __str__(self) -> str:
        return f"~{self.sub}"


@dataclass(frozen=True)
class Forall(FolFormula):
    var: str
    body: FolFormula

    def __str__(self) -> str:
        return f"forall {self.var}. {self.body}"


@dataclass(frozen=True)
class Exists(FolFormula):
    var: str
    body: FolFormula

    def __str__(self) -> str:
        return f"exists {self.var}. {self.body}"


def _term_vars(term: FolTerm, acc: list[str]) -> None:
    if isinstance(term, Var):
        if term.name not in acc:
            acc.append(term.name)
    elif isinstance(term, Func):
        for arg in term.args:
            _term_vars(arg, acc)


def free_variables(f: FolFormula, bound: frozenset[str] = frozenset()) -> list[str]:
    """Free variable names in order of first appearance."""
    out: list[str] = []

    def walk(g: FolFormula, bound_here: frozenset[str]) -> None:
        if isinstance(g, Pred):
            names: list[str] = []
            for arg in g.args:
                _term_vars(arg, names)
            for name in names:
                if name not in bound_here and name not in out:
                    out.append(name)
        elif isinstance(g, (And, Or)):
            walk(g.left, bound_here)
            walk(g.right, bound_here)
        elif isinstance(g, Not):
            walk(g.sub, bound_here)
        elif isinstance(g, (Forall, Exists)):
            walk(g.body, bound_here | {g.var})
        else:
            raise UnsupportedFormulaError(f"unsupported node {type(g).__name__}")

    walk(f, bound)
    return out


def all_variable_names(f: FolFormula) -> set[str]:
    names: set[str] = set()

    def walk(g: FolFormula) -> None:
        if isinstance(g, Pred):
            acc: list[str] = []
            for arg in g.args:
                _term_vars(arg, acc)
            names.update(acc)
        elif isinstance(g, (And, Or)):
            walk(g.left)
            walk(g.right)
        elif isinstance(g, Not):
            walk(g.sub)
        elif isinstance(g, (Forall, Exists)):
            names.add(g.var)
            walk(g.body)

    walk(f)
    return names


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""\s*(?:
        (?P<string>"(?:[^"\\]|\\.)*")
      | (?P<number>-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)
      | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
      | (?P<punct>[()~&|,.])
    )""",
    re.VERBOSE,
)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            match = _TOKEN_RE.match(text, pos)
            if not match or match.end() == pos:
                if text[pos:].strip():
                    raise FolParseError(f"unexpected character {text[pos]!r}", pos)
                break
            kind = match.lastgroup or "punct"
            self.tokens.append((kind, match.group(match.lastgroup), match.start(match.lastgroup)))
            pos = match.end()
        self.index = 0

    def peek(self) -> tuple[str, str, int] | None:
        return self.tokens[self.index] if self.index < len(self.tokens) else None

    def next(self) -> tuple[str, str, int]:
        token = self.peek()
        if token is None:
            raise FolParseError("unexpected end of input", len(self.text))
        self.index += 1
        return token

    def expect(self, value: str) -> None:
        token = self.next()
        if token[1] != value:
            raise FolParseError(f"expected {value!r}, found {token[1]!r}", token[2])

    # formula := conjunct ('|' conjunct)*
    def formula(self) -> FolFormula:
        left = self.conjunct()
        while (tok := self.peek()) and tok[1] == "|":
            self.next()
            left = Or(left, self.conjunct())
        return left

    def conjunct(self) -> FolFormula:
        left = self.unary()
        while (tok := self.peek()) and tok[1] == "&":
            self.next()
            left = And(left, self.unary())
        return left

    def unary(self) -> FolFormula:
        token = self.peek()
        if token is None:
            raise FolParseError("unexpected end of input", len(self.text))
        kind, value, pos = token
        if value == "~":
            self.next()
            return Not(self.unary())
        if value == "(":
            self.next()
            inner = self.formula()
            self.expect(")")
            return inner
        if value in ("forall", "exists"):
            self.next()
            var_tok = self.next()
            if var_tok[0] != "ident" or not var_tok[1][0].islower():
                raise FolParseError("expected a lowercase variable after quantifier", var_tok[2])
            self.expect(".")
            body = self.formula()
            return Forall(var_tok[1], body) if value == "forall" else Exists(var_tok[1], body)
        if kind == "ident":
            return self.atom()
        raise FolParseError(f"unexpected token {value!r}", pos)

    def atom(self) -> Pred:
        name_tok = self.next()
        self.expect("(")
        args: list[FolTerm] = []
        if (tok := self.peek()) and tok[1] != ")":
            args.append(self.term())
            while (tok := self.peek()) and tok[1] == ",":
                self.next()
                args.append(self.term())
        self.expect(")")
        return Pred(name_tok[1], tuple(args))

    def term(self) -> FolTerm:
        kind, value, pos = self.next()
        if kind == "string":
            return Const(_unquote(value))
        if kind == "number":
            return Const(float(value) if ("." in value or "e" in value or "E" in value) else int(value))
        if kind == "ident":
            if (tok := self.peek()) and tok[1] == "(":
                self.next()
                args = [self.term()]
                while (tok := self.peek()) and tok[1] == ",":
                    self.next()
                    args.append(self.term())
                self.expect(")")
                return Func(value, tuple(args))
            return Var(value) if value[0].islower() else Const(value)
        raise FolParseError(f"expected a term, found {value!r}", pos)


def _unquote(text: str) -> str:
    body = text[1:-1]
    return body.replace('\\"', '"').replace("\\\\", "\\")


def parse_fol(text: str) -> FolFormula:
    parser = _Parser(text)
    formula = parser.formula()
    if parser.peek() is not None:
        token = parser.peek()
        raise FolParseError(f"trailing input {token[1]!r}", token[2])
    return formula


# ---------------------------------------------------------------------------
# Prenex normal form
# ---------------------------------------------------------------------------


def _substitute_term(term: FolTerm, mapping: dict[str, FolTerm]) -> FolTerm:
    if isinstance(term, Var):
        return mapping.get(term.name, term)
    if isinstance(term, Func):
        return Func(term.name, tuple(_substitute_term(a, mapping) for a in term.args))
    return term


def substitute_vars(f: FolFormula, mapping: dict[str, FolTerm]) -> FolFormula:
    if isinstance(f, Pred):
        return Pred(f.name, tuple(_substitute_term(a, mapping) for a in f.args))
    if isinstance(f, And):
        return And(substitute_vars(f.left, mapping), substitute_vars(f.right, mapping))
    if isinstance(f, Or):
        return Or(substitute_vars(f.left, mapping), substitute_vars(f.right, mapping))
    if isinstance(f, Not):
        return Not(substitute_vars(f.sub, mapping))
    if isinstance(f, (Forall, Exists)):
        inner = {k: v for k, v in mapping.items() if k != f.var}
        body = substitute_vars(f.body, inner)
        return Forall(f.var, body) if isinstance(f, Forall) else Exists(f.var, body)
    raise UnsupportedFormulaError(f"unsupported node {type(f).__name__}")


def _to_nnf(f: FolFormula) -> FolFormula:
    if isinstance(f, Pred):
        return f
    if isinstance(f, And):
        return And(_to_nnf(f.left), _to_nnf(f.right))
    if isinstance(f, Or):
        return Or(_to_nnf(f.left), _to_nnf(f.right))
    if isinstance(f, Forall):
        return Forall(f.var, _to_nnf(f.body))
    if isinstance(f, Exists):
        return Exists(f.var, _to_nnf(f.body))
    if isinstance(f, Not):
        g = f.sub
        if isinstance(g, Pred):
            return f
        if isinstance(g, Not):
            return _to_nnf(g.sub)
        if isinstance(g, And):
            return Or(_to_nnf(Not(g.left)), _to_nnf(Not(g.right)))
        if isinstance(g, Or):
            return And(_to_nnf(Not(g.left)), _to_nnf(Not(g.right)))
        if isinstance(g, Forall):
            return Exists(g.var, _to_nnf(Not(g.body)))
        if isinstance(g, Exists):
            return Forall(g.var, _to_nnf(Not(g.body)))
    raise UnsupportedFormulaError(f"unsupported node {type(f).__name__}")


def _rename_apart(f: FolFormula, used: set[str]) -> FolFormula:
    """Make bound variable names pairwise distinct and distinct from free ones."""

    def fresh(base: str) -> str:
        if base not in used:
            used.add(base)
            return base
        for n in range(1, 10_000):
            candidate = f"{base}_{n}"
            if candidate not in used:
                used.add(candidate)
                return candidate
        raise AssertionError("unreachable")

    def walk(g: FolFormula, env: dict[str, FolTerm]) -> FolFormula:
        if isinstance(g, Pred):
            return substitute_vars(g, env)
        if isinstance(g, And):
            return And(walk(g.left, env), walk(g.right, env))
        if isinstance(g, Or):
            return Or(walk(g.left, env), walk(g.right, env))
        if isinstance(g, Not):
            return Not(walk(g.sub, env))
        if isinstance(g, (Forall, Exists)):
            new_name = fresh(g.var)
            inner = dict(env)
            inner[g.var] = Var(new_name)
            body = walk(g.body, inner)
            return Forall(new_name, body) if isinstance(g, Forall) else Exists(new_name, body)
        raise UnsupportedFormulaError(f"unsupported node {type(g).__name__}")

    return walk(f, {})


def _pull_quantifiers(f: FolFormula) -> tuple[list[tuple[type, str]], FolFormula]:
    if isinstance(f, (Forall, Exists)):
        prefix, matrix = _pull_quantifiers(f.body)
        return [(type(f), f.var)] + prefix, matrix
    if isinstance(f, (And, Or)):
        left_prefix, left = _pull_quantifiers(f.left)
        right_prefix, right = _pull_quantifiers(f.right)
        combined = type(f)(left, right)
        return left_prefix + right_prefix, combined
    # After NNF, negations wrap atoms only.
    return [], f


def to_prenex(f: FolFormula) -> FolFormula:
    """Equivalent formula with all quantifiers outermost.

    Negations are pushed to the literals first; bound variables are renamed
    apart; quantifiers are collected left to right, which preserves the
    relative order of like quantifiers and never moves a universal
    quantifier outside an existential one it was inside of.
    """
    nnf = _rename_apart(_to_nnf(f), set(free_variables(f)))
    prefix, matrix = _pull_quantifiers(nnf)
    for kind, var in reversed(prefix):
        matrix = kind(var, matrix)
    return matrix


def is_prenex(f: FolFormula) -> bool:
    while isinstance(f, (Forall, Exists)):
        f = f.body
    return not _has_quantifier(f)


def _has_quantifier(f: FolFormula) -> bool:
    if isinstance(f, (Forall, Exists)):
        return True
    if isinstance(f, (And, Or)):
        return _has_quantifier(f.left) or _has_quantifier(f.right)
    if isinstance(f, Not):
        return _has_quantifier(f.sub)
    return False


# ---------------------------------------------------------------------------
# Dual Skolemisation
# ---------------------------------------------------------------------------


def dual_skolemise(f: FolFormula) -> FolFormula:
    """Strip a prenex quantifier prefix, replacing each universal variable
    with a Skolem term over the existential variables accumulated so far
    and leaving each existential variable free."""
    matrix, _ = _dual_skolemise_mapped(f)
    return matrix


def _dual_skolemise_mapped(f: FolFormula) -> tuple[FolFormula, dict[str, str]]:
    """dual_skolemise plus the Skolem-name -> replaced-variable mapping."""
    if not is_prenex(f):
        raise UnsupportedFormulaError("dual skolemisation needs a prenex formula")
    counter = 0
    existentials: list[str] = []  # most recent first
    replaced: dict[str, str] = {}
    matrix = f
    while isinstance(matrix, (Forall, Exists)):
        if isinstance(matrix, Forall):
            counter += 1
            sk = SkolemTerm(f"sk{counter}", tuple(reversed(existentials)))
            replaced[sk.name] = matrix.var
            matrix = substitute_vars(matrix.body, {matrix.var: sk})
        else:
            existentials.insert(0, matrix.var)
            matrix = matrix.body
    return matrix, replaced


def skolem_terms(f: FolFormula) -> list[SkolemTerm]:
    """All distinct Skolem terms in order of first appearance."""
    seen: list[SkolemTerm] = []

    def walk_term(term: FolTerm) -> None:
        if isinstance(term, SkolemTerm) and term not in seen:
            seen.append(term)
        elif isinstance(term, Func):
            for arg in term.args:
                walk_term(arg)

    def walk(g: FolFormula) -> None:
        if isinstance(g, Pred):
            for arg in g.args:
                walk_term(arg)
        elif isinstance(g, (And, Or)):
            walk(g.left)
            walk(g.right)
        elif isinstance(g, Not):
            walk(g.sub)

    walk(f)
    return seen


# ---------------------------------------------------------------------------
# Translation to alists
# ---------------------------------------------------------------------------


def _argument_keys(name: str, arity: int) -> list[Attr]:
    """Attribute keys for a predicate's arguments.

    Binary relational predicates read as subject/object; a ternary relation
    adds the time attribute; comparisons and wider predicates fall back to
    the generic argN scheme.
    """
    if name in _NON_RELATIONAL or arity == 1 or arity > 3:
        return [Attr(f"arg{i}") for i in range(1, arity + 1)]
    if arity == 2:
        return [S, O]
    return [S, O, T]


class _Translator:
    def __init__(self, var_kinds: dict[str, VariableRef], ranges: dict[str, Sequence]):
        self.var_kinds = var_kinds
        self.ranges = ranges
        self.fresh = FreshNames(prefix="g", used=set(var_kinds))

    def term_value(self, term: FolTerm, extra: dict[AlistKey, AlistValue]) -> AlistValue:
        if isinstance(term, Const):
            return term.value
        if isinstance(term, Var):
            if term.name not in self.var_kinds:
                self.var_kinds[term.name] = auxiliary(term.name)
            return self.var_kinds[term.name]
        if isinstance(term, SkolemTerm):
            if term.name in self.ranges:
                extra[Attr(str(term))] = Alist(
                    {S: str(term), P: RANGE_PROPERTY, O: tuple(self.ranges[term.name])}
                )
            return str(term)
        if isinstance(term, Func):
            result_var, child = self.function_alist(term)
            extra[result_var] = child
            return result_var
        raise UnsupportedFormulaError(f"unsupported term {term!r}")

    def function_alist(self, func: Func) -> tuple[VariableRef, Alist]:
        result_var = self.fresh.auxiliary()
        entries: dict[AlistKey, AlistValue] = {P: func.name}
        extra: dict[AlistKey, AlistValue] = {}
        for i, arg in enumerate(func.args, start=1):
            entries[Attr(f"arg{i}")] = self.term_value(arg, extra)
        entries[O] = result_var
        entries.update(extra)
        return result_var, Alist(entries)

    def proposition_alist(self, pred: Pred) -> Alist:
        entries: dict[AlistKey, AlistValue] = {P: pred.name}
        extra: dict[AlistKey, AlistValue] = {}
        for key, arg in zip(_argument_keys(pred.name, len(pred.args)), pred.args):
            entries[key] = self.term_value(arg, extra)
        entries.update(extra)
        return Alist(entries)

    def formula_alist(self, f: FolFormula) -> Alist:
        if isinstance(f, Pred):
            return self.proposition_alist(f)
        if isinstance(f, (And, Or)):
            operands: list[VariableRef] = []
            entries: dict[AlistKey, AlistValue] = {}
            for side in (f.left, f.right):
                child = self.formula_alist(side)
                key = self._answer_variable(side, child)
                if key in entries:
                    key = self.fresh.auxiliary()
                operands.append(key)
                entries[key] = child
            head: dict[AlistKey, AlistValue] = {
                H: "AND" if isinstance(f, And) else "OR",
                V: tuple(operands),
            }
            head.update(entries)
            return Alist(head)
        if isinstance(f, Not):
            inner = self.formula_alist(f.sub)
            if isinstance(f.sub, Pred):
                head = {H: "NOT"}
                variables = [v for v in inner.entries.values() if isinstance(v, VariableRef)]
                if variables:
                    head[V] = variables[0]
                head.update(inner.entries)
                return Alist(head)
            key = self._answer_variable(f.sub, inner)
            return Alist({H: "NOT", V: key, key: inner})
        raise UnsupportedFormulaError(f"unsupported node {type(f).__name__}")

    def _answer_variable(self, f: FolFormula, translated: Alist) -> VariableRef:
        for name in free_variables(f):
            if name in self.var_kinds:
                return self.var_kinds[name]
        return self.fresh.auxiliary()


def translate_proposition(pred: Pred, query_var: str | None = None) -> Alist:
    """Translate one proposition: {p: name, <role-keyed args>}.

    The designated query variable (default: the first free variable)
    becomes the projection variable; all others are auxiliary.
    """
    return translate_formula(pred, query_var=query_var)


def translate_function(func: Func) -> tuple[VariableRef, Alist]:
    """Translate a non-nullary function into an alist whose projection
    instantiates the returned fresh auxiliary variable in its host."""
    kinds = {name: auxiliary(name) for name in _function_vars(func)}
    return _Translator(kinds, {}).function_alist(func)


def _function_vars(func: Func) -> list[str]:
    acc: list[str] = []
    for arg in func.args:
        _term_vars(arg, acc)
    return acc


def translate_formula(
    f: FolFormula,
    query_var: str | None = None,
    ranges: dict[str, Sequence] | None = None,
) -> Alist:
    """Translate a FOL formula into an alist.

    The formula is first brought to prenex form and dual-skolemised.
    Conjunction and disjunction nest their operands under the AND/OR
    operations; atoms translate per the proposition/function schemes.
    ``ranges`` maps universally quantified variable names to their finite
    value ranges, attached as range children of the Skolem constants.
    """
    matrix, replaced = _dual_skolemise_mapped(to_prenex(f))
    free = free_variables(matrix)

    designated: str | None = query_var
    atomic = isinstance(matrix, Pred) or (isinstance(matrix, Not) and isinstance(matrix.sub, Pred))
    if designated is None and atomic and free:
        designated = free[0]
    if designated is not None and designated not in free:
        raise UnsupportedFormulaError(f"query variable {designated!r} is not free in the formula")

    var_kinds = {
        name: projection(name) if name == designated else auxiliary(name) for name in free
    }
    sk_ranges = {
        sk_name: (ranges or {}).get(var_name)
        for sk_name, var_name in replaced.items()
        if (ranges or {}).get(var_name) is not None
    }
    return _Translator(var_kinds, sk_ranges).formula_alist(matrix)


# ---------------------------------------------------------------------------
# Bounded-range expansion
# ---------------------------------------------------------------------------


def _range_children(alist: Alist) -> dict[Attr, tuple]:
    """Custom-keyed children of the form {s:<key>, p:range, o:[...]} whose
    key names a constant used elsewhere in the alist."""
    found: dict[Attr, tuple] = {}
    for key, child in alist.nested_children():
        if not isinstance(key, Attr) or not key.is_custom:
            continue
        if child.entries.get(P) != RANGE_PROPERTY or child.entries.get(S) != key.name:
            continue
        values = child.entries.get(O)
        if isinstance(values, tuple) and any(
            value == key.name for k, value in alist.entries.items() if k != key
        ):
            found[key] = values
    return found


def expand_skolem_ranges(alist: Alist, limit: int = MAX_RANGE_EXPANSION) -> list[Alist]:
    """Expand bounded Skolem constants into one query per range value.

    Each attached range child {sk: {s:sk, p:range, o:[v1..vn]}} is removed
    and the constant sk replaced by each value in turn. Ranges longer than
    ``limit`` are left unexpanded, marked with the ``unexpanded_range``
    meta attribute.
    """
    pending = [alist]
    for key, values in _range_children(alist).items():
        if len(values) > limit:
            return [a.with_entries({UNEXPANDED_RANGE_ATTR: key.name}) for a in pending]
        expanded: list[Alist] = []
        for a in pending:
            base = a.without(key)
            for value in values:
                replaced = {
                    k: (value if v == key.name else v) for k, v in base.entries.items()
                }
                expanded.append(Alist(replaced, base.bindings))
        pending = expanded
    return pending
