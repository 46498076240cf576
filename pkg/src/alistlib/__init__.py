"""Association lists with logic semantics: a common representation for
queries and facts across heterogeneous knowledge sources, with first-order
logic translation, decomposition/aggregation inference, and lossless
exchange via JSON and reified RDF."""

from .core import (
    C,
    D,
    H,
    L,
    O,
    P,
    S,
    T,
    U,
    V,
    X,
    Alist,
    AlistError,
    Attr,
    AttrClass,
    FreshNames,
    InvariantError,
    MultipleProjectionError,
    NoVariableError,
    ResolutionState,
    UnknownVariableError,
    VariableRef,
    VarKind,
    auxiliary,
    canonicalize,
    classify_attribute,
    global_scope,
    is_simple,
    local_scope,
    parse_variable,
    projection,
    resolution_state,
    substitute,
)
from .serialization import AlistSyntaxError, emit_json, parse_json, to_jsonable
from .rdf import (
    Triple,
    emit_ntriples,
    from_rdf_reified,
    from_rdf_reified_many,
    parse_ntriples,
    to_rdf_reified,
)
from .fol import (
    And,
    Const,
    Exists,
    FolParseError,
    Forall,
    Func,
    Not,
    Or,
    Pred,
    SkolemTerm,
    UnsupportedFormulaError,
    Var,
    dual_skolemise,
    expand_skolem_ranges,
    parse_fol,
    to_prenex,
    translate_formula,
    translate_function,
    translate_proposition,
)
from .kb import (
    FixtureTransport,
    KbSet,
    KbSource,
    LiveTransport,
    LocalStore,
    NativeQuery,
    PropertyTemplate,
    RetrievalResult,
    SourceKind,
    execute,
    load_sources,
    query_local,
    to_rest_request,
    to_sparql,
)
from .inference import (
    DecompositionRule,
    Environment,
    InferenceGraph,
    InferenceNode,
    NoAnswerError,
    NotStrategy,
    aggregate,
    answer_value,
    evaluate_not,
    explain,
    infer,
    normalize,
    partition,
    regress_predict,
    sequence,
)

__version__ = "0.1.0"
