"""Adapters over heterogeneous knowledge sources.

A simple alist compiles to the native query of each source kind: a SPARQL
SELECT for triple-store endpoints, a templated REST request for JSON APIs,
or a pattern match against the in-memory local store. Results come back
uniformly as variable bindings tagged with the source name and confidence.

Entity and property labels are matched as plain strings; aligning them with
real vocabulary identifiers is a retrieval task outside this library.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
import time
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from . import rdf
from .core import (
    Alist,
    AlistError,
    AlistValue,
    Attr,
    L,
    O,
    P,
    S,
    T,
    VariableRef,
    auxiliary,
    canonicalize,
    is_simple,
    local_scope,
    projection_variables,
)
from .serialization import parse_json

RDFS_LABEL = "http://www.w3.org/2000/01/rdf-schema#label"
TIME_PROPERTY_IRI = "alist:t"
LOCATION_PROPERTY_IRI = "alist:l"
PART_OF = "partOf"

SPARQL_AGGREGATES = {"count": "COUNT", "max": "MAX", "min": "MIN", "avg": "AVG", "sum": "SUM"}


class NotSimpleError(AlistError):
    """Only simple alists compile to native queries."""


class UnsupportedOperationError(AlistError):
    """The alist's operation has no native-query counterpart."""


class UnmappedPropertyError(AlistError):
    """No REST template is configured for the alist's property."""


class MissingSlotError(AlistError):
    """A template slot cannot be filled from the alist's constants."""


class TransportError(AlistError):
    """Connection failure, timeout, or missing recorded fixture."""


class ResponseParseError(AlistError):
    """The source returned a response we cannot interpret."""


# ---------------------------------------------------------------------------
# Sources
# ---------------------------------------------------------------------------


class SourceKind(Enum):
    LOCAL = "local"
    SPARQL = "sparql"
    JSON_API = "json_api"


@dataclass(frozen=True)
class PropertyTemplate:
    """REST mapping for one property: a URL path/query template with
    {s}/{o}/{t}/{l} slots and the path to the value in the JSON reply."""

    template: str
    value_path: str
    scale: float | None = None


PropertyMap = Mapping[str, PropertyTemplate]


@dataclass(frozen=True)
class NativeQuery:
    url: str
    method: str = "GET"
    value_path: str = ""
    scale: float | None = None


@dataclass(frozen=True)
class RetrievalResult:
    """One result row: variable instantiations plus provenance."""

    bindings: Mapping[VariableRef, AlistValue]
    source: str
    confidence: float = 1.0


@dataclass
class KbSource:
    name: str
    kind: SourceKind
    endpoint: str | None = None
    mapping: dict[str, PropertyTemplate] = field(default_factory=dict)
    closed_world: bool = False
    confidence: float = 1.0
    store: "LocalStore | None" = None

    def __post_init__(self):
        if self.kind is SourceKind.JSON_API and not self.mapping:
            raise AlistError(f"source {self.name!r}: a JSON API needs a property mapping")
        if self.kind is not SourceKind.LOCAL and self.endpoint is None:
            raise AlistError(f"source {self.name!r}: remote sources need an endpoint")
        if not 0.0 <= self.confidence <= 1.0:
            raise AlistError(f"source {self.name!r}: confidence must be within [0,1]")


# ---------------------------------------------------------------------------
# Local store
# ---------------------------------------------------------------------------

_MATCH_ATTRS = (S, P, O, T, L)


class LocalStore:
    """In-memory store of ground simple alists, matched by pattern.

    Read-only during inference; ingestion happens up front from N-Triples
    files or line-oriented alist-JSON files.
    """

    def __init__(self, facts: Iterable[Alist] = ()):
        self._facts: list[Alist] = []
        for fact in facts:
            self.add(fact)

    def add(self, fact: Alist) -> None:
        if not is_simple(fact):
            raise AlistError("local stores hold simple alists only")
        self._facts.append(fact)

    def __len__(self) -> int:
        return len(self._facts)

    @property
    def facts(self) -> list[Alist]:
        return list(self._facts)

    def load_alist_lines(self, path: str | Path) -> int:
        """Ingest a line-oriented alist-JSON file (one alist per line)."""
        count = 0
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            self.add(parse_json(line))
            count += 1
        return count

    def load_ntriples(self, path: str | Path) -> int:
        """Ingest an N-Triples file. Reified statements are recovered whole;
        remaining plain triples become s/p/o alists."""
        triples = rdf.parse_ntriples(Path(path).read_text(encoding="utf-8"))
        reified_subjects = {
            t.subject
            for t in triples
            if str(t.predicate) == rdf.RDF_TYPE
            and isinstance(t.object, rdf.Iri)
            and str(t.object) == rdf.RDF_STATEMENT
        }
        count = 0
        if reified_subjects:
            grouped = [t for t in triples if t.subject in reified_subjects]
            for alist in rdf.from_rdf_reified_many(grouped):
                self.add(alist)
                count += 1
        for triple in triples:
            if triple.subject in reified_subjects:
                continue
            self.add(
                Alist(
                    {
                        S: _term_value(triple.subject),
                        P: _term_value(triple.predicate),
                        O: _term_value(triple.object),
                    }
                )
            )
            count += 1
        return count

    def values_at(self, attr: Attr, property_name: str | None = None) -> list:
        """Distinct stored values at a position, optionally restricted to
        facts with a given property; sorted for determinism."""
        values = {
            fact.entries[attr]
            for fact in self._facts
            if attr in fact.entries
            and (property_name is None or fact.entries.get(P) == property_name)
        }
        return sorted(values, key=lambda v: (str(type(v).__name__), str(v)))


def _term_value(term):
    return term.value if isinstance(term, rdf.Iri) else term


def query_local(query: Alist, store: LocalStore) -> list[RetrievalResult]:
    """Unify the query's s/p/o (and t/l where the stored fact carries them)
    against the store. Constants must match exactly; variables bind."""
    if not is_simple(query):
        raise NotSimpleError("local matching needs a simple alist")
    results = []
    for fact in store.facts:
        bindings = _unify(query, fact)
        if bindings is not None:
            results.append(RetrievalResult(bindings=bindings, source="local", confidence=1.0))
    return results


def _unify(query: Alist, fact: Alist) -> dict[VariableRef, AlistValue] | None:
    env: dict[VariableRef, AlistValue] = {}
    for attr in _MATCH_ATTRS:
        if attr not in query.entries:
            continue
        wanted = query.entries[attr]
        if attr not in fact.entries:
            if attr in (T, L):
                continue  # facts without time/location hold timelessly/everywhere
            return None
        actual = fact.entries[attr]
        if isinstance(wanted, VariableRef):
            if wanted in env and env[wanted] != actual:
                return None
            env[wanted] = actual
        elif wanted != actual:
            return None
    return env


# ---------------------------------------------------------------------------
# SPARQL compilation
# ---------------------------------------------------------------------------


def _sparql_literal(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value) if isinstance(value, float) else str(value)
    escaped = value.replace("\\", "\\\\").replace('"', '\\"')
    return f'"{escaped}"'


def _sparql_var(var: VariableRef) -> str:
    return str(var)  # both ? and $ are legal SPARQL variable sigils


def to_sparql(alist: Alist) -> str:
    """Compile a simple alist to a SPARQL SELECT.

    Constants in subject position are matched through their rdfs:label (a
    literal cannot be a subject); property constants likewise; object
    constants appear directly as literals. Time and location constants
    approximate qualifiers via generic properties plus FILTERs. Aggregate
    operations compile to the corresponding SPARQL aggregate.
    """
    if not is_simple(alist):
        raise NotSimpleError("only simple alists compile to SPARQL")
    alist = canonicalize(alist)
    subject = alist.entries.get(S)
    objekt = alist.entries.get(O)
    if not isinstance(subject, VariableRef) and not isinstance(objekt, VariableRef):
        raise UnsupportedOperationError("need a variable in subject or object position")

    operation = alist.operation or "value"
    if operation not in SPARQL_AGGREGATES and operation != "value":
        raise UnsupportedOperationError(f"operation {operation!r} has no SPARQL counterpart")

    patterns: list[str] = []
    if isinstance(subject, VariableRef):
        s_term = _sparql_var(subject)
    else:
        s_term = "?s0"
        patterns.append(f'?s0 <{RDFS_LABEL}> {_sparql_literal(subject)} .')

    prop = alist.entries.get(P)
    if isinstance(prop, VariableRef):
        p_term = _sparql_var(prop)
        label_pattern = None
    else:
        p_term = "?p0"
        label_pattern = f'?p0 <{RDFS_LABEL}> {_sparql_literal(prop)} .'

    o_term = _sparql_var(objekt) if isinstance(objekt, VariableRef) else _sparql_literal(objekt)

    lines = [f"{s_term} {p_term} {o_term} ."] + patterns
    if label_pattern:
        lines.append(label_pattern)

    t_value = alist.entries.get(T)
    if t_value is not None and not isinstance(t_value, (VariableRef, Alist)):
        lines.append("# time qualifier approximated over a generic time property")
        lines.append(f"{s_term} <{TIME_PROPERTY_IRI}> ?t0 .")
        lines.append(f"FILTER(?t0 = {_sparql_literal(t_value)})")
    l_value = alist.entries.get(L)
    if l_value is not None and not isinstance(l_value, (VariableRef, Alist)):
        lines.append("# location qualifier approximated over a generic location property")
        lines.append(f"{s_term} <{LOCATION_PROPERTY_IRI}> ?l0 .")
        lines.append(f"FILTER(?l0 = {_sparql_literal(l_value)})")

    answer_vars = sorted(projection_variables(alist), key=str) or list(
        alist.operation_variables()
    )
    if not answer_vars:
        raise UnsupportedOperationError("no variable to select")
    answer = _sparql_var(answer_vars[0])
    if operation in SPARQL_AGGREGATES:
        select = f"({SPARQL_AGGREGATES[operation]}({answer}) AS ?agg)"
    else:
        select = answer

    body = "\n".join(f"  {line}" for line in lines)
    return f"SELECT {select} WHERE {{\n{body}\n}}\n"


# ---------------------------------------------------------------------------
# REST compilation
# ---------------------------------------------------------------------------

_SLOT_RE = re.compile(r"\{([sotl])\}")


def to_rest_request(alist: Alist, mapping: PropertyMap) -> NativeQuery:
    """Fill a property's URL template from the alist's constants."""
    if not is_simple(alist):
        raise NotSimpleError("only simple alists compile to REST requests")
    prop = alist.entries.get(P)
    if not isinstance(prop, str) or prop not in mapping:
        raise UnmappedPropertyError(f"no template for property {prop!r}")
    entry = mapping[prop]

    def fill(match: re.Match) -> str:
        attr = Attr(match.group(1))
        value = alist.entries.get(attr)
        if value is None or isinstance(value, (VariableRef, Alist, tuple)):
            raise MissingSlotError(f"slot {{{attr}}} needs a constant in the alist")
        return urllib.parse.quote(str(value), safe="")

    url = _SLOT_RE.sub(fill, entry.template)
    return NativeQuery(url=url, method="GET", value_path=entry.value_path, scale=entry.scale)


def _walk_path(document, path: str):
    """Navigate dot/bracket paths like ``1[0].value`` into parsed JSON."""
    tokens = re.findall(r"\[(\d+)\]|\.?([A-Za-z_][A-Za-z0-9_]*)|(?<![\[\w])(\d+)", path)
    node = document
    for bracket, name, bare in tokens:
        index = bracket or bare
        try:
            node = node[int(index)] if index else node[name]
        except (KeyError, IndexError, TypeError) as exc:
            raise ResponseParseError(f"value path {path!r} does not fit the response") from exc
    return node


# ---------------------------------------------------------------------------
# Transports
# ---------------------------------------------------------------------------


class Transport:
    """Fetches a URL on behalf of a source and returns the parsed JSON body."""

    def get(self, source_name: str, url: str):
        raise NotImplementedError


class LiveTransport(Transport):
    def __init__(self, timeout: float = 10.0, retries: int = 1):
        self.timeout = timeout
        self.retries = retries

    def get(self, source_name: str, url: str):
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                with urllib.request.urlopen(url, timeout=self.timeout) as response:
                    payload = response.read()
                break
            except (urllib.error.URLError, OSError) as exc:
                last_error = exc
                if attempt < self.retries:
                    time.sleep(0.2)
        else:
            raise TransportError(f"{source_name}: {last_error}")
        try:
            return json.loads(payload.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ResponseParseError(f"{source_name}: malformed response: {exc}") from exc


def request_fingerprint(url: str, method: str = "GET") -> str:
    return hashlib.sha256(f"{method} {url}".encode("utf-8")).hexdigest()


class FixtureTransport(Transport):
    """Replays recorded responses from <root>/<source>/<sha256-of-request>.json."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def path_for(self, source_name: str, url: str, method: str = "GET") -> Path:
        return self.root / source_name / f"{request_fingerprint(url, method)}.json"

    def record(self, source_name: str, url: str, payload, method: str = "GET") -> Path:
        path = self.path_for(source_name, url, method)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
        return path

    def get(self, source_name: str, url: str):
        path = self.path_for(source_name, url)
        if not path.exists():
            raise TransportError(f"{source_name}: no recorded response for {url}")
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ResponseParseError(f"{source_name}: malformed fixture {path.name}: {exc}") from exc


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------


def _answer_variable(alist: Alist) -> VariableRef | None:
    projections = sorted(projection_variables(alist), key=str)
    if projections:
        return projections[0]
    op_vars = alist.operation_variables()
    if op_vars:
        return op_vars[0]
    scope = sorted(local_scope(alist), key=str)
    return scope[0] if scope else None


def _typed_sparql_value(cell: dict):
    value = cell.get("value")
    datatype = cell.get("datatype", "")
    if datatype.endswith(("integer", "long", "int")):
        return int(value)
    if datatype.endswith(("decimal", "double", "float")):
        return float(value)
    return value


def execute(alist: Alist, source: KbSource, transport: Transport) -> list[RetrievalResult]:
    """Run a simple alist against one source and convert the results."""
    if source.kind is SourceKind.LOCAL:
        if source.store is None:
            raise AlistError(f"source {source.name!r} has no store attached")
        return [
            RetrievalResult(r.bindings, source.name, source.confidence)
            for r in query_local(alist, source.store)
        ]

    if source.kind is SourceKind.SPARQL:
        query = to_sparql(alist)
        url = f"{source.endpoint}?query={urllib.parse.quote(query, safe='')}&format=json"
        document = transport.get(source.name, url)
        try:
            rows = document["results"]["bindings"]
        except (KeyError, TypeError) as exc:
            raise ResponseParseError(f"{source.name}: not a SPARQL results document") from exc
        by_name = {var.name: var for var in local_scope(alist)}
        results = []
        for row in rows:
            bindings = {}
            for name, cell in row.items():
                var = by_name.get(name)
                if var is not None:
                    bindings[var] = _typed_sparql_value(cell)
            results.append(RetrievalResult(bindings, source.name, source.confidence))
        return results

    # JSON API
    native = to_rest_request(alist, source.mapping)
    url = (source.endpoint or "") + native.url
    document = transport.get(source.name, url)
    value = _walk_path(document, native.value_path)
    if value is None:
        return []
    if native.scale is not None and isinstance(value, (int, float)):
        value = value * native.scale
    var = _answer_variable(alist)
    if var is None:
        return [RetrievalResult({}, source.name, source.confidence)]
    return [RetrievalResult({var: value}, source.name, source.confidence)]


class KbSet:
    """An ordered collection of knowledge sources sharing one transport."""

    def __init__(self, sources: Sequence[KbSource], transport: Transport | None = None):
        self.sources = list(sources)
        self.transport = transport or LiveTransport()
        self._lock = threading.Lock()
        self._transport_failures = 0

    @property
    def closed_world(self) -> bool:
        return bool(self.sources) and all(s.closed_world for s in self.sources)

    @property
    def transport_failures(self) -> int:
        return self._transport_failures

    def retrieve(self, alist: Alist) -> list[RetrievalResult]:
        """Query every source in order. A failing source only loses its own
        contribution: the leaf fails when nobody answers, never the query."""
        results: list[RetrievalResult] = []
        for source in self.sources:
            try:
                results.extend(execute(alist, source, self.transport))
            except TransportError:
                with self._lock:
                    self._transport_failures += 1
                continue
            except (NotSimpleError, UnmappedPropertyError, MissingSlotError,
                    UnsupportedOperationError, ResponseParseError):
                continue
        return results

    def part_of_children(self, whole: AlistValue) -> list:
        """Entities recorded as parts of ``whole``, sorted by name."""
        var = auxiliary("part")
        rows = self.retrieve(Alist({S: var, P: PART_OF, O: whole}))
        return sorted({row.bindings[var] for row in rows if var in row.bindings}, key=str)

    def stored_values_at(self, attr: Attr, property_name: str | None = None) -> list:
        values: set = set()
        for source in self.sources:
            if source.store is not None:
                values.update(source.store.values_at(attr, property_name))
        return sorted(values, key=lambda v: (str(type(v).__name__), str(v)))


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


def load_sources(path: str | Path) -> list[KbSource]:
    """Load KbSource records (PropertyMap entries inline) from a JSON file.

    Local-source fact files are resolved relative to the config file and
    ingested immediately.
    """
    path = Path(path)
    document = json.loads(path.read_text(encoding="utf-8"))
    records = document["sources"] if isinstance(document, dict) else document
    sources = []
    for record in records:
        kind = SourceKind(record["kind"])
        mapping = {
            prop: PropertyTemplate(
                template=spec["template"],
                value_path=spec["value_path"],
                scale=spec.get("scale"),
            )
            for prop, spec in record.get("mapping", {}).items()
        }
        store = None
        if kind is SourceKind.LOCAL:
            store = LocalStore()
            for key, loader in (("facts_jsonl", store.load_alist_lines),
                                ("facts_ntriples", store.load_ntriples)):
                for fact_path in _as_list(record.get(key)):
                    loader(path.parent / fact_path)
        sources.append(
            KbSource(
                name=record["name"],
                kind=kind,
                endpoint=record.get("endpoint"),
                mapping=mapping,
                closed_world=record.get("closed_world", False),
                confidence=record.get("confidence", 1.0),
                store=store,
            )
        )
    return sources


def _as_list(value) -> list:
    if value is None:
        return []
    return value if isinstance(value, list) else [value]
