"""
Literal substitution on DSL source text.
Edits only ever replace integer literals, so offsets of untouched literals
shift by the cumulative length delta of the edits before them.
"""

import re
from dataclasses import dataclass
from typing import Iterable, List

from src.dsl.parser import LiteralRef, SourceText
from src.errors import EditError, OverlapError, SpanOutOfRange
from src.ir.arch_ir import Span

POSITIVE_INT = re.compile(r"[1-9][0-9]*")


@dataclass(frozen=True)
class Edit:
    span: Span
    replacement: str

    def __post_init__(self):
        if not POSITIVE_INT.fullmatch(self.replacement):
            raise EditError(f"replacement {self.replacement!r} is not a positive integer literal")


def apply_edits(src: SourceText, edits: Iterable[Edit]) -> SourceText:
    data = src.data
    batch: List[Edit] = sorted(edits, key=lambda e: (e.span.start, e.span.end))

    for edit in batch:
        if not 0 <= edit.span.start < edit.span.end <= len(data):
            raise SpanOutOfRange(f"span [{edit.span.start}, {edit.span.end}) outside text of {len(data)} bytes")
    for before, after in zip(batch, batch[1:]):
        if after.span.start < before.span.end:
            raise OverlapError(f"edits overlap at bytes {after.span.start}..{before.span.end}")

    out = bytearray(data)
    for edit in reversed(batch):
        out[edit.span.start:edit.span.end] = edit.replacement.encode("ascii")

    # remap the offset table
    remapped = []
    for ref in src.offsets:
        shift = 0
        new_span = None
        for edit in batch:
            delta = len(edit.replacement) - len(edit.span)
            if edit.span == ref.span:
                start = ref.span.start + shift
                new_span = Span(start, start + len(edit.replacement))
                break
            if edit.span.end <= ref.span.start:
                shift += delta
        if new_span is None:
            new_span = Span(ref.span.start + shift, ref.span.end + shift)
        remapped.append(LiteralRef(new_span, ref.layer_id, ref.attr))

    return SourceText(out.decode("utf-8"), tuple(remapped))
