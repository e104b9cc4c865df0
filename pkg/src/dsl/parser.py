"""
Recursive-descent parser for .netdsl network definitions.

    network Alex {
      input 3x32x32;
      classes 100;
      c1: conv(in=3, out=64, k=3, s=1, p=1);
      r1: relu(c1);
      ...
      out: linear(in=1024, out=100, from=d2);
    }

The full grammar lives in docs/netdsl_grammar.md.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

from src.dsl.lexer import Token, tokenize
from src.errors import NetSyntaxError, SemanticError
from src.ir.arch_ir import (
    INPUT_ID,
    Edge,
    LayerKind,
    LayerSpec,
    NetworkDef,
    Span,
    _topological_order,
    validate_ir,
)


@dataclass(frozen=True)
class KindSyntax:
    keyword: str
    kind: LayerKind
    # DSL key -> IR attribute, in canonical print order
    attrs: Tuple[Tuple[str, str], ...] = ()
    required: Tuple[str, ...] = ()
    defaults: Tuple[Tuple[str, object], ...] = ()
    min_inputs: int = 1
    max_inputs: Optional[int] = 1


KIND_SYNTAX = (
    KindSyntax("conv", LayerKind.CONV2D,
               (("in", "in_channels"), ("out", "out_channels"), ("k", "kernel"),
                ("s", "stride"), ("p", "padding"), ("g", "groups")),
               ("in", "out", "k"), (("stride", 1), ("padding", 0), ("groups", 1))),
    KindSyntax("linear", LayerKind.LINEAR, (("in", "in_features"), ("out", "out_features")), ("in", "out")),
    KindSyntax("bn", LayerKind.BATCHNORM2D, (("c", "num_features"),), ("c",)),
    KindSyntax("relu", LayerKind.RELU),
    KindSyntax("maxpool", LayerKind.MAXPOOL2D, (("k", "kernel"), ("s", "stride"), ("p", "padding")),
               ("k",), (("padding", 0),)),
    KindSyntax("avgpool", LayerKind.ADAPTIVEAVGPOOL2D, (("size", "target_size"),), ("size",)),
    KindSyntax("flatten", LayerKind.FLATTEN),
    KindSyntax("add", LayerKind.ADD, min_inputs=2, max_inputs=None),
    KindSyntax("concat", LayerKind.CONCAT, (("axis", "axis"),), (), (("axis", 1),), 2, None),
    KindSyntax("dropout", LayerKind.DROPOUT, (("p", "p"),), (), (("p", 0.5),)),
)

SYNTAX_BY_KEYWORD = {s.keyword: s for s in KIND_SYNTAX}
SYNTAX_BY_KIND = {s.kind: s for s in KIND_SYNTAX}


@dataclass(frozen=True)
class LiteralRef:
    """Location of one integer literal and the IR attribute it encodes"""
    span: Span
    layer_id: str
    attr: str


@dataclass(frozen=True)
class SourceText:
    text: str
    offsets: Tuple[LiteralRef, ...] = field(default=(), compare=False)

    @classmethod
    def traced(cls, text: str) -> "SourceText":
        """Parse `text` and attach its literal offset table"""
        return cls(text, literal_table(parse(text)))

    @property
    def data(self) -> bytes:
        return self.text.encode("utf-8")

    def literal_at(self, layer_id: str, attr: str) -> Optional[LiteralRef]:
        for ref in self.offsets:
            if ref.layer_id == layer_id and ref.attr == attr:
                return ref
        return None


def literal_table(net: NetworkDef) -> Tuple[LiteralRef, ...]:
    refs = [LiteralRef(span, layer.id, attr)
            for layer in net.layers for attr, span in layer.source_spans.items()]
    return tuple(sorted(refs, key=lambda r: r.span.start))


@dataclass
class _RawLayer:
    id: str
    id_token: Token
    syntax: KindSyntax
    params: Dict[str, object]
    spans: Dict[str, Span]
    refs: List[Token]


class _Parser:

    def __init__(self, data: bytes):
        self.tokens = tokenize(data)
        self.pos = 0

    @property
    def current(self) -> Token:
        return self.tokens[self.pos]

    def peek(self, ahead: int = 1) -> Token:
        return self.tokens[min(self.pos + ahead, len(self.tokens) - 1)]

    def advance(self) -> Token:
        token = self.current
        if token.kind != "eof":
            self.pos += 1
        return token

    def fail(self, expected: Sequence[str]) -> NetSyntaxError:
        token = self.current
        return NetSyntaxError(token.start, expected, token.describe())

    def expect(self, kind: str, value: Optional[str] = None) -> Token:
        token = self.current
        if token.kind != kind or (value is not None and token.value != value):
            raise self.fail([repr(value) if value else kind])
        return self.advance()

    # ---- grammar ----------------------------------------------------------

    def parse_network(self):
        self.expect("ident", "network")
        name = self.expect("ident").value
        self.expect("{")
        input_shape, classes = None, None
        layers: List[_RawLayer] = []
        while self.current.kind != "}":
            token = self.current
            if token.kind == "ident" and token.value == "input" and self.peek().kind == "int":
                if input_shape is not None:
                    raise SemanticError(token.start, "duplicate", "input declared twice")
                self.advance()
                dims = [int(self.expect("int").value)]
                for _ in range(2):
                    self.expect("x")
                    dims.append(int(self.expect("int").value))
                self.expect(";")
                input_shape = tuple(dims)
            elif token.kind == "ident" and token.value == "classes" and self.peek().kind == "int":
                if classes is not None:
                    raise SemanticError(token.start, "duplicate", "classes declared twice")
                self.advance()
                classes = int(self.expect("int").value)
                self.expect(";")
            elif token.kind == "ident":
                layers.append(self.parse_layer())
            else:
                raise self.fail(["layer definition", "'}'"])
        closing = self.expect("}")
        self.expect("eof")
        if input_shape is None:
            raise SemanticError(closing.start, "missing-header", "network declares no input shape")
        if classes is None:
            raise SemanticError(closing.start, "missing-header", "network declares no class count")
        return name, input_shape, classes, layers

    def parse_layer(self) -> _RawLayer:
        id_token = self.expect("ident")
        self.expect(":")
        kind_token = self.expect("ident")
        syntax = SYNTAX_BY_KEYWORD.get(kind_token.value)
        if syntax is None:
            raise SemanticError(kind_token.start, "unknown-kind", f"unknown layer kind {kind_token.value!r}")
        self.expect("(")
        params: Dict[str, object] = {}
        spans: Dict[str, Span] = {}
        positional: List[Token] = []
        explicit: Optional[List[Token]] = None
        keys = dict(syntax.attrs)
        seen = set()
        while self.current.kind != ")":
            if self.current.kind == "ident" and self.peek().kind == "=":
                key_token = self.advance()
                self.advance()
                key = key_token.value
                if key in seen:
                    raise SemanticError(key_token.start, "duplicate", f"attribute {key!r} given twice")
                seen.add(key)
                if key == "from":
                    explicit = self.parse_refs()
                elif key in keys:
                    value_token = self.current
                    if syntax.kind == LayerKind.DROPOUT and value_token.kind in ("int", "float"):
                        self.advance()
                        params[keys[key]] = float(value_token.value)
                    elif value_token.kind == "int":
                        self.advance()
                        params[keys[key]] = int(value_token.value)
                        spans[keys[key]] = Span(value_token.start, value_token.end)
                    else:
                        raise self.fail(["integer"])
                else:
                    raise SemanticError(key_token.start, "unknown-attribute",
                                        f"{syntax.keyword} has no attribute {key!r}")
            elif self.current.kind == "ident":
                positional.append(self.advance())
            else:
                raise self.fail(["attribute", "layer reference", "')'"])
            if self.current.kind == ",":
                self.advance()
            elif self.current.kind != ")":
                raise self.fail(["','", "')'"])
        self.expect(")")
        self.expect(";")

        if positional and explicit is not None:
            raise SemanticError(positional[0].start, "slot-conflict",
                                f"{id_token.value} mixes positional inputs with from=")
        for key in syntax.required:
            if keys[key] not in params:
                raise SemanticError(id_token.start, "missing-attribute",
                                    f"{syntax.keyword} {id_token.value} needs {key}=")
        for attr, default in syntax.defaults:
            params.setdefault(attr, default)
        if syntax.kind == LayerKind.MAXPOOL2D:
            params.setdefault("stride", params["kernel"])
        return _RawLayer(id_token.value, id_token, syntax, params, spans,
                         explicit if explicit is not None else positional)

    def parse_refs(self) -> List[Token]:
        if self.current.kind == "[":
            self.advance()
            refs = [self.expect("ident")]
            while self.current.kind == ",":
                self.advance()
                refs.append(self.expect("ident"))
            self.expect("]")
            return refs
        return [self.expect("ident")]


def _source_data(src: Union[str, bytes, SourceText]) -> bytes:
    if isinstance(src, SourceText):
        return src.data
    if isinstance(src, str):
        return src.encode("utf-8")
    return bytes(src)


def parse(src: Union[str, bytes, SourceText], validate: bool = True) -> NetworkDef:
    """
    Parse DSL text into a NetworkDef whose layers carry literal spans.

    With validate=False only structural semantics (references, arity, cycles)
    are enforced; IR invariants are left for validate_ir so callers such as the
    verifier can report them as data.
    """
    name, input_shape, classes, raw_layers = _Parser(_source_data(src)).parse_network()

    ids = {}
    for raw in raw_layers:
        if raw.id == INPUT_ID:
            raise SemanticError(raw.id_token.start, "reserved", f"{INPUT_ID!r} is a reserved layer id")
        if raw.id in ids:
            raise SemanticError(raw.id_token.start, "duplicate", f"layer {raw.id!r} defined twice")
        ids[raw.id] = raw

    layers, edges = [], []
    previous = INPUT_ID
    for raw in raw_layers:
        if raw.refs:
            producers = []
            for ref in raw.refs:
                if ref.value != INPUT_ID and ref.value not in ids:
                    raise SemanticError(ref.start, "undefined-reference",
                                        f"undefined layer reference {ref.value!r} in {raw.id}")
                producers.append(ref.value)
        else:
            producers = [previous]
        syntax = raw.syntax
        if len(producers) < syntax.min_inputs or (syntax.max_inputs is not None and len(producers) > syntax.max_inputs):
            arity = str(syntax.min_inputs) if syntax.max_inputs == syntax.min_inputs else f"at least {syntax.min_inputs}"
            raise SemanticError(raw.id_token.start, "slot-conflict",
                                f"{syntax.keyword} {raw.id} takes {arity} input(s), got {len(producers)}")
        layers.append(LayerSpec(raw.id, syntax.kind, dict(raw.params), dict(raw.spans)))
        edges.extend(Edge(producer, raw.id, slot) for slot, producer in enumerate(producers))
        previous = raw.id

    net = NetworkDef(name, input_shape, classes, tuple(layers), tuple(edges))

    if _topological_order(net) is None:
        ordered = set()
        changed = True
        while changed:
            changed = False
            for raw in raw_layers:
                if raw.id not in ordered and all(p == INPUT_ID or p in ordered for p in net.producers(raw.id)):
                    ordered.add(raw.id)
                    changed = True
        # first layer that cannot be ordered
        stuck = next(raw for raw in raw_layers if raw.id not in ordered)
        raise SemanticError(stuck.id_token.start, "cycle", f"layer graph has a cycle through {stuck.id}")

    if validate:
        result = validate_ir(net)
        if not result.ok:
            violation = result.violations[0]
            code = "sink-class-count" if violation.startswith("sink class count") else "invalid-network"
            offset = 0
            for raw in raw_layers:
                if f" {raw.id}." in f" {violation}" or f" {raw.id} " in f" {violation} ":
                    offset = raw.id_token.start
                    break
            raise SemanticError(offset, code, violation)
    return net
