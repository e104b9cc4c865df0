"""
Canonical printer: one layer per line, every attribute explicit, inputs as from=.
The returned SourceText carries the byte offsets of every integer literal it wrote.
"""

from typing import List

import numpy as np

from src.dsl.parser import SYNTAX_BY_KIND, LiteralRef, SourceText
from src.errors import InvalidIRError
from src.ir.arch_ir import LayerKind, NetworkDef, Span, validate_ir

INDENT = "  "


class _Writer:

    def __init__(self):
        self.parts: List[str] = []
        self.size = 0
        self.refs: List[LiteralRef] = []

    def write(self, text: str) -> None:
        self.parts.append(text)
        self.size += len(text.encode("utf-8"))

    def literal(self, value: int, layer_id: str, attr: str) -> None:
        text = str(int(value))
        start = self.size
        self.write(text)
        self.refs.append(LiteralRef(Span(start, self.size), layer_id, attr))


def print_net(net: NetworkDef) -> SourceText:
    result = validate_ir(net)
    if not result.ok:
        raise InvalidIRError(result.violations)

    out = _Writer()
    c, h, w = net.input_shape
    out.write(f"network {net.name} {{\n")
    out.write(f"{INDENT}input {c}x{h}x{w};\n")
    out.write(f"{INDENT}classes {net.num_classes};\n")
    for layer in net.layers:
        syntax = SYNTAX_BY_KIND[layer.kind]
        out.write(f"{INDENT}{layer.id}: {syntax.keyword}(")
        first = True
        for key, attr in syntax.attrs:
            if not first:
                out.write(", ")
            first = False
            out.write(f"{key}=")
            if layer.kind == LayerKind.DROPOUT:
                out.write(np.format_float_positional(float(layer.params[attr]), trim="-"))
            else:
                out.literal(layer.params[attr], layer.id, attr)
        producers = net.producers(layer.id)
        if not first:
            out.write(", ")
        if len(producers) == 1:
            out.write(f"from={producers[0]}")
        else:
            out.write("from=[" + ", ".join(producers) + "]")
        out.write(");\n")
    out.write("}\n")
    return SourceText("".join(out.parts), tuple(out.refs))
