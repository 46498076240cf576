"""Reified RDF exchange for simple ground alists, serialized as N-Triples.

An alist {s, p, o, P1:a1, ..., Pn:an} becomes 4 + n triples about a
statement node q: the rdf:Statement typing, rdf:subject/predicate/object,
then one triple per remaining attribute. Attribute IRIs are minted under
the fixed ``alist:`` namespace prefix (e.g. ``<alist:t>``); constants
render as plain literals with numbers in canonical decimal form.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Union

from .core import (
    Alist,
    AlistKey,
    Attr,
    AlistError,
    O,
    P,
    ResolutionState,
    S,
    is_simple,
    resolution_state,
)
from .serialization import wire_key_order

RDF_NS = "http://www.w3.org/1999/02/22-rdf-syntax-ns#"
RDF_TYPE = RDF_NS + "type"
RDF_STATEMENT = RDF_NS + "Statement"
RDF_SUBJECT = RDF_NS + "subject"
RDF_PREDICATE = RDF_NS + "predicate"
RDF_OBJECT = RDF_NS + "object"
ATTR_NS = "alist:"


class NotGroundError(AlistError):
    """Reification requires a fully ground alist."""


class MissingCoreAttributeError(AlistError):
    """Reification requires subject, property and object."""


class MalformedReificationError(AlistError):
    """The triples do not form a well-shaped reified statement."""


@dataclass(frozen=True)
class Iri:
    """An IRI or blank-node label used as a triple term."""

    value: str

    def __str__(self) -> str:
        return self.value


Term = Union[Iri, str, int, float, bool]


@dataclass(frozen=True)
class Triple:
    """One RDF triple. Subjects and predicates are IRIs (or blank-node
    labels); objects may also be literal constants."""

    subject: Iri
    predicate: Iri
    object: Term

    def to_ntriples(self) -> str:
        return f"{_render(self.subject)} {_render(self.predicate)} {_render(self.object)} ."


def _render(term: Term) -> str:
    if isinstance(term, Iri):
        if term.value.startswith("_:"):
            return term.value
        return f"<{term.value}>"
    if isinstance(term, bool):
        return '"true"' if term else '"false"'
    if isinstance(term, (int, float)):
        return f'"{_canonical_number(term)}"'
    return '"' + _escape_literal(term) + '"'


def _canonical_number(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def _escape_literal(text: str) -> str:
    return (
        text.replace("\\", "\\\\")
        .replace('"', '\\"')
        .replace("\n", "\\n")
        .replace("\r", "\\r")
        .replace("\t", "\\t")
    )


def _unescape_literal(text: str) -> str:
    out = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            nxt = text[i + 1]
            out.append({"\\": "\\", '"': '"', "n": "\n", "r": "\r", "t": "\t"}.get(nxt, nxt))
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


_INT_RE = re.compile(r"-?(0|[1-9][0-9]*)\Z")
_FLOAT_RE = re.compile(r"-?[0-9]+\.[0-9]+(e[+-]?[0-9]+)?\Z|-?[0-9]+e[+-]?[0-9]+\Z")


def _literal_to_constant(lexical: str):
    """Invert the plain-literal rendering: canonical numbers and booleans
    come back typed, everything else stays a string."""
    if lexical == "true":
        return True
    if lexical == "false":
        return False
    if _INT_RE.match(lexical):
        return int(lexical)
    if _FLOAT_RE.match(lexical):
        return float(lexical)
    return lexical


# ---------------------------------------------------------------------------
# N-Triples text
# ---------------------------------------------------------------------------

_TERM_RE = re.compile(r'<([^>]*)>|(_:[A-Za-z0-9]+)|"((?:[^"\\]|\\.)*)"')


def emit_ntriples(triples: Iterable[Triple]) -> str:
    """One triple per line, space-separated terms, " ." terminator."""
    return "".join(t.to_ntriples() + "\n" for t in triples)


def parse_ntriples(text: str) -> list[Triple]:
    triples = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if not line.endswith("."):
            raise MalformedReificationError(f"line {line_no}: missing ' .' terminator")
        body = line[:-1].rstrip()
        terms = []
        pos = 0
        while pos < len(body):
            match = _TERM_RE.match(body, pos)
            if not match:
                raise MalformedReificationError(f"line {line_no}: bad term at column {pos + 1}")
            if match.group(1) is not None:
                terms.append(Iri(match.group(1)))
            elif match.group(2) is not None:
                terms.append(Iri(match.group(2)))
            else:
                terms.append(_literal_to_constant(_unescape_literal(match.group(3))))
            pos = match.end()
            while pos < len(body) and body[pos] in " \t":
                pos += 1
        if len(terms) != 3:
            raise MalformedReificationError(f"line {line_no}: expected 3 terms, got {len(terms)}")
        subject, predicate, obj = terms
        if not isinstance(subject, Iri) or not isinstance(predicate, Iri):
            raise MalformedReificationError(f"line {line_no}: subject/predicate must be IRIs")
        triples.append(Triple(subject, predicate, obj))
    return triples


# ---------------------------------------------------------------------------
# Reification
# ---------------------------------------------------------------------------


def _constant_to_term(value) -> Term:
    return value  # constants pass through; rendering handles typing


def to_rdf_reified(alist: Alist, statement_iri: str) -> list[Triple]:
    """Reify a simple, ground alist with s/p/o into 4 + n triples."""
    if not is_simple(alist):
        raise NotGroundError("only simple alists reify to RDF")
    if resolution_state(alist) is not ResolutionState.GROUND:
        raise NotGroundError("only ground alists reify to RDF")
    for core in (S, P, O):
        if core not in alist.entries:
            raise MissingCoreAttributeError(f"missing core attribute {core}")
    q = Iri(statement_iri)
    triples = [
        Triple(q, Iri(RDF_TYPE), Iri(RDF_STATEMENT)),
        Triple(q, Iri(RDF_SUBJECT), _constant_to_term(alist.entries[S])),
        Triple(q, Iri(RDF_PREDICATE), _constant_to_term(alist.entries[P])),
        Triple(q, Iri(RDF_OBJECT), _constant_to_term(alist.entries[O])),
    ]
    for key in sorted(alist.entries, key=wire_key_order):
        if key in (S, P, O):
            continue
        triples.append(Triple(q, Iri(ATTR_NS + str(key)), _constant_to_term(alist.entries[key])))
    return triples


def _term_to_constant(term: Term):
    return term.value if isinstance(term, Iri) else term


def from_rdf_reified_many(triples: Iterable[Triple]) -> list[Alist]:
    """Recover every reified statement, ordered by statement IRI."""
    by_subject: dict[Iri, list[Triple]] = {}
    statements: list[Iri] = []
    for triple in triples:
        by_subject.setdefault(triple.subject, []).append(triple)
        if str(triple.predicate) == RDF_TYPE and isinstance(triple.object, Iri):
            if str(triple.object) != RDF_STATEMENT:
                raise MalformedReificationError(f"unexpected typing for {triple.subject}")
            statements.append(triple.subject)

    if not statements:
        raise MalformedReificationError("no rdf:Statement typing found")
    if len(set(statements)) != len(statements):
        raise MalformedReificationError("duplicate rdf:Statement typing")

    alists = []
    for q in sorted(set(statements), key=str):
        core: dict[str, Term] = {}
        extras: dict[AlistKey, Term] = {}
        for triple in by_subject[q]:
            pred = str(triple.predicate)
            if pred == RDF_TYPE:
                continue
            if pred in (RDF_SUBJECT, RDF_PREDICATE, RDF_OBJECT):
                if pred in core:
                    raise MalformedReificationError(f"duplicate {pred} for {q}")
                core[pred] = triple.object
            elif pred.startswith(ATTR_NS):
                extras[Attr(pred[len(ATTR_NS):])] = triple.object
            else:
                raise MalformedReificationError(f"unrecognized predicate {pred} for {q}")
        missing = {RDF_SUBJECT, RDF_PREDICATE, RDF_OBJECT} - core.keys()
        if missing:
            raise MalformedReificationError(f"{q} is missing {sorted(missing)}")
        entries: dict[AlistKey, object] = {
            S: _term_to_constant(core[RDF_SUBJECT]),
            P: _term_to_constant(core[RDF_PREDICATE]),
            O: _term_to_constant(core[RDF_OBJECT]),
        }
        for key, term in extras.items():
            entries[key] = _term_to_constant(term)
        alists.append(Alist(entries))
    return alists


def from_rdf_reified(triples: Iterable[Triple]) -> Alist:
    """Inverse of :func:`to_rdf_reified` for a single statement."""
    alists = from_rdf_reified_many(triples)
    if len(alists) != 1:
        raise MalformedReificationError(f"expected one statement, found {len(alists)}")
    return alists[0]
