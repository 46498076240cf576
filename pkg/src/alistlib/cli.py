"""Command-line surface: validation, normalization, FOL translation, native
query compilation, RDF exchange, and query answering.

stdout carries only the result document; diagnostics go to stderr. Exit
codes: 0 success, 1 invalid input, 2 no answer, 3 transport failure in
live mode.

Configuration comes from a JSON file (``--config`` or the ALIST_CONFIG
environment variable) holding the source list plus inference settings.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from . import fol, inference, kb, rdf
from .core import Alist, AlistError, canonicalize
from .serialization import AlistSyntaxError, emit_json, parse_json, to_jsonable

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NO_ANSWER = 2
EXIT_TRANSPORT = 3


@dataclass
class CliConfig:
    sources: list[kb.KbSource]
    offline: bool = False
    max_depth: int = 3
    not_strategy: inference.NotStrategy = inference.NotStrategy.FAILURE
    output: str = "json"
    functional_properties: frozenset[str] = frozenset()
    time_ranges: dict = None
    source_confidence: dict = None
    fixture_dir: Path | None = None
    timeout: float = 10.0

    def environment(self) -> inference.Environment:
        return inference.Environment(
            max_depth=self.max_depth,
            not_strategy=self.not_strategy,
            functional_properties=self.functional_properties,
            time_ranges=self.time_ranges or {},
            source_confidence=self.source_confidence or {},
        )

    def transport(self) -> kb.Transport:
        if self.offline:
            # Offline forbids live transports; unrecorded requests fail.
            return kb.FixtureTransport(self.fixture_dir or Path("."))
        if self.fixture_dir is not None:
            return kb.FixtureTransport(self.fixture_dir)
        return kb.LiveTransport(timeout=self.timeout)

    def kbset(self) -> kb.KbSet:
        return kb.KbSet(self.sources, self.transport())


def load_config(path: str | Path | None, offline: bool = False) -> CliConfig:
    if path is None:
        return CliConfig(sources=[], offline=offline)
    path = Path(path)
    document = json.loads(path.read_text(encoding="utf-8"))
    fixture_dir = document.get("fixture_dir")
    return CliConfig(
        sources=kb.load_sources(path),
        offline=offline or document.get("offline", False),
        max_depth=document.get("max_depth", 3),
        not_strategy=inference.NotStrategy(document.get("not_strategy", "failure")),
        output=document.get("output", "json"),
        functional_properties=frozenset(document.get("functional_properties", [])),
        time_ranges=document.get("time_ranges", {}),
        source_confidence=document.get("source_confidence", {}),
        fixture_dir=(path.parent / fixture_dir) if fixture_dir else None,
        timeout=document.get("timeout", 10.0),
    )


def _read_alist(source: str | None) -> Alist:
    if source is None or source == "-":
        return parse_json(sys.stdin.read())
    return parse_json(Path(source).read_text(encoding="utf-8"))


def _fail(message: str, code: int = EXIT_INVALID) -> int:
    print(message, file=sys.stderr)
    return code


def _dump(document) -> None:
    print(json.dumps(document, separators=(",", ":"), ensure_ascii=False))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_validate(args) -> int:
    try:
        alist = _read_alist(args.input)
        canonical = canonicalize(alist)
    except (AlistSyntaxError, AlistError) as exc:
        return _fail(f"{type(exc).__name__}: {exc}")
    print(emit_json(canonical))
    return EXIT_OK


def cmd_normalize(args) -> int:
    try:
        alist = canonicalize(_read_alist(args.input))
        root, links = inference.normalize(alist)
    except (AlistSyntaxError, AlistError) as exc:
        return _fail(f"{type(exc).__name__}: {exc}")
    _dump(
        {
            "root": to_jsonable(root),
            "children": [
                {"key": str(link.key), "range": link.is_range, "alist": to_jsonable(link.alist)}
                for link in links
            ],
        }
    )
    return EXIT_OK


def _parse_range(text: str) -> tuple[str, list[int]]:
    name, _, span = text.partition("=")
    if ".." in span:
        first, _, last = span.partition("..")
        return name, list(range(int(first), int(last) + 1))
    return name, [int(v) for v in span.split(",") if v]


def cmd_translate_fol(args) -> int:
    ranges = {}
    for spec in args.range or []:
        try:
            name, values = _parse_range(spec)
        except ValueError:
            return _fail(f"bad --range {spec!r}; use var=first..last or var=v1,v2,...")
        ranges[name] = values
    try:
        formula = fol.parse_fol(args.formula)
        alist = fol.translate_formula(formula, query_var=args.query_var, ranges=ranges)
    except AlistError as exc:
        return _fail(f"{type(exc).__name__}: {exc}")
    print(emit_json(alist))
    return EXIT_OK


def cmd_to_sparql(args) -> int:
    try:
        alist = _read_alist(args.input)
        query = kb.to_sparql(alist)
    except (AlistSyntaxError, AlistError) as exc:
        return _fail(f"{type(exc).__name__}: {exc}")
    sys.stdout.write(query)
    return EXIT_OK


def cmd_to_rdf(args) -> int:
    try:
        alist = _read_alist(args.input)
        triples = rdf.to_rdf_reified(alist, args.statement_iri)
    except (AlistSyntaxError, AlistError) as exc:
        return _fail(f"{type(exc).__name__}: {exc}")
    sys.stdout.write(rdf.emit_ntriples(triples))
    return EXIT_OK


def cmd_from_rdf(args) -> int:
    try:
        if args.input is None or args.input == "-":
            text = sys.stdin.read()
        else:
            text = Path(args.input).read_text(encoding="utf-8")
        alists = rdf.from_rdf_reified_many(rdf.parse_ntriples(text))
    except AlistError as exc:
        return _fail(f"{type(exc).__name__}: {exc}")
    for alist in alists:
        print(emit_json(alist))
    return EXIT_OK


def cmd_query(args) -> int:
    try:
        config = load_config(args.sources or os.environ.get("ALIST_CONFIG"), args.offline)
        if args.max_depth is not None:
            config.max_depth = args.max_depth
        if args.not_strategy is not None:
            config.not_strategy = inference.NotStrategy(args.not_strategy)
        query = _read_alist(args.input)
        kbs = config.kbset()
        env = config.environment()
    except (AlistSyntaxError, AlistError, OSError, ValueError, json.JSONDecodeError) as exc:
        return _fail(f"{type(exc).__name__}: {exc}")

    try:
        answer, graph = inference.infer(query, kbs, env)
    except inference.NoAnswerError as exc:
        document = {"error": "no answer"}
        if exc.graph is not None:
            document["graph"] = exc.graph.to_json()
        print(json.dumps(document, separators=(",", ":")), file=sys.stderr)
        if not config.offline and kbs.transport_failures:
            return EXIT_TRANSPORT
        return EXIT_NO_ANSWER
    except AlistError as exc:
        return _fail(f"{type(exc).__name__}: {exc}")

    root = graph.nodes[graph.root]
    document = {
        "answer": inference._jsonable_value(answer),
        "uncertainty": root.uncertainty,
        "sources": sorted(root.sources),
    }
    if args.explain:
        document["explanation"] = inference.explain(graph)
        document["graph"] = graph.to_json()
    _dump(document)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="alist",
        description="Work with alists: validate, normalize, translate, and query.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_validate = sub.add_parser("validate", help="check an alist-JSON document and print its canonical form")
    p_validate.add_argument("input", nargs="?", help="path to the document, or - for stdin")
    p_validate.set_defaults(func=cmd_validate)

    p_normalize = sub.add_parser("normalize", help="split a nested alist into a simple root plus children")
    p_normalize.add_argument("input", nargs="?")
    p_normalize.set_defaults(func=cmd_normalize)

    p_fol = sub.add_parser(
        "translate-fol",
        help="translate a first-order formula into an alist",
        description=(
            "Grammar: predicates/functions as name(args); variables are lowercase "
            "identifiers; constants are quoted strings, capitalized identifiers or "
            "numbers; connectives ~ & | with parentheses; quantifiers 'forall x.' "
            "and 'exists x.'."
        ),
    )
    p_fol.add_argument("formula")
    p_fol.add_argument("--query-var", help="the variable whose value answers the query")
    p_fol.add_argument(
        "--range",
        action="append",
        help="finite range for a universal variable: var=first..last or var=v1,v2,...",
    )
    p_fol.set_defaults(func=cmd_translate_fol)

    p_sparql = sub.add_parser("to-sparql", help="compile a simple alist to a SPARQL SELECT")
    p_sparql.add_argument("input", nargs="?")
    p_sparql.set_defaults(func=cmd_to_sparql)

    p_tordf = sub.add_parser("to-rdf", help="reify a simple ground alist as N-Triples")
    p_tordf.add_argument("input", nargs="?")
    p_tordf.add_argument("--statement-iri", default="urn:stmt:1")
    p_tordf.set_defaults(func=cmd_to_rdf)

    p_fromrdf = sub.add_parser("from-rdf", help="recover alists from reified N-Triples")
    p_fromrdf.add_argument("input", nargs="?")
    p_fromrdf.set_defaults(func=cmd_from_rdf)

    p_query = sub.add_parser("query", help="answer an alist query over the configured sources")
    p_query.add_argument("input", nargs="?")
    p_query.add_argument("--sources", help="sources config (default: ALIST_CONFIG)")
    p_query.add_argument("--offline", action="store_true", help="forbid live transports")
    p_query.add_argument("--explain", action="store_true", help="include the inference graph")
    p_query.add_argument("--max-depth", type=int, default=None)
    p_query.add_argument(
        "--not-strategy", choices=[s.value for s in inference.NotStrategy], default=None
    )
    p_query.set_defaults(func=cmd_query)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
