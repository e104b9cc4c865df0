"""
Tokenizer for .netdsl text.
Works over the UTF-8 bytes so every token carries byte offsets.
"""

from dataclasses import dataclass
from typing import List

from src.errors import NetSyntaxError

PUNCTUATION = b"{}()[];:,="
# longer digit runs are rejected before int() sees them
MAX_DIGITS = 18


@dataclass(frozen=True)
class Token:
    kind: str      # ident | int | float | x | eof | one punctuation character
    value: str
    start: int
    end: int

    def describe(self) -> str:
        if self.kind == "eof":
            return "end of input"
        return repr(self.value)


def _is_digit(b: int) -> bool:
    return 48 <= b <= 57


def _is_ident_start(b: int) -> bool:
    return b == 95 or 65 <= b <= 90 or 97 <= b <= 122


def _is_ident_part(b: int) -> bool:
    return _is_ident_start(b) or _is_digit(b)


def tokenize(data: bytes) -> List[Token]:
    tokens: List[Token] = []
    i, n = 0, len(data)
    while i < n:
        ch = data[i]
        if ch in b" \t\r\n":
            i += 1
        elif ch == ord("#"):
            while i < n and data[i] != ord("\n"):
                i += 1
        elif _is_digit(ch):
            start = i
            while i < n and _is_digit(data[i]):
                i += 1
            if i - start > MAX_DIGITS:
                raise NetSyntaxError(start, [f"number of at most {MAX_DIGITS} digits"], f"{i - start} digits")
            if i + 1 < n and data[i] == ord(".") and _is_digit(data[i + 1]):
                i += 1
                while i < n and _is_digit(data[i]):
                    i += 1
                tokens.append(Token("float", data[start:i].decode("ascii"), start, i))
                continue
            tokens.append(Token("int", data[start:i].decode("ascii"), start, i))
            # dimension separator in 3x32x32
            if i + 1 < n and data[i] == ord("x") and _is_digit(data[i + 1]):
                tokens.append(Token("x", "x", i, i + 1))
                i += 1
        elif _is_ident_start(ch):
            start = i
            while i < n and _is_ident_part(data[i]):
                i += 1
            tokens.append(Token("ident", data[start:i].decode("ascii"), start, i))
        elif ch in PUNCTUATION:
            tokens.append(Token(chr(ch), chr(ch), i, i + 1))
            i += 1
        else:
            end = i + 1
            while end < n and (data[end] & 0xC0) == 0x80:
                end += 1
            got = data[i:end].decode("utf-8", errors="replace")
            raise NetSyntaxError(i, ["token"], repr(got))
    tokens.append(Token("eof", "", n, n))
    return tokens
