"""Help text for configuration fields, read from the source of their dataclasses.

A field is documented by, in order of preference: a string literal on the line after
it, a comment at the end of its line, or a block of comment lines directly above it.
A comment block above a group of fields documents each of them.
"""

import dataclasses
import functools
import inspect
import io
import tokenize
from typing import Dict, List, Optional, Type

from . import _strings


@dataclasses.dataclass(frozen=True)
class _SourceLine:
    """Tokens of one physical source line, with the index of its logical line."""

    logical: int
    tokens: List[tokenize.TokenInfo]


def _is_comment_only(line: _SourceLine) -> bool:
    return len(line.tokens) == 1 and line.tokens[0].type == tokenize.COMMENT


@functools.lru_cache(maxsize=32)
def _field_docs(cls: Type) -> Dict[str, str]:
    """Help text of every documented field defined directly in `cls`."""
    try:
        source = inspect.getsource(cls)
    except (OSError, TypeError):
        # Dynamically created classes have no source.
        return {}

    lines: Dict[int, _SourceLine] = {}
    logical = 0
    readline = io.BytesIO(source.encode("utf-8")).readline
    skipped = (tokenize.INDENT, tokenize.DEDENT, tokenize.NL, tokenize.NEWLINE, tokenize.ENCODING)
    for token in tokenize.tokenize(readline):
        if token.type == tokenize.NEWLINE:
            logical += 1
        if token.type in skipped or token.type == tokenize.ENDMARKER:
            continue
        row = token.start[0]
        if row not in lines:
            lines[row] = _SourceLine(logical=logical, tokens=[])
        lines[row].tokens.append(token)

    rows = sorted(lines)
    docs: Dict[str, str] = {}
    for position, row in enumerate(rows):
        tokens = lines[row].tokens
        if (
            len(tokens) < 2
            or tokens[0].type != tokenize.NAME
            or tokens[1].string != ":"
            or tokens[0].start[1] == 0
            or tokens[0].string in docs
        ):
            continue
        name = tokens[0].string

        # Docstring on the following logical line.
        following = [r for r in rows[position + 1 :] if lines[r].logical > lines[row].logical]
        if following:
            first = lines[following[0]].tokens[0]
            if first.type == tokenize.STRING and first.string.startswith('"""'):
                docs[name] = _strings.dedent(first.string[3:-3]).strip()
                continue

        # Trailing comment on the field's own logical line.
        same_logical = [r for r in rows if lines[r].logical == lines[row].logical]
        last = lines[same_logical[-1]].tokens[-1]
        if last.type == tokenize.COMMENT:
            docs[name] = last.string[1:].strip()
            continue

        # Contiguous comment lines directly above. Blank lines end the block; other
        # fields in between are allowed, so a heading comment covers a group.
        comments: List[str] = []
        above = row - 1
        while above in lines:
            if _is_comment_only(lines[above]):
                comments.append(lines[above].tokens[0].string[1:].strip())
            elif comments:
                break
            above -= 1
        if comments:
            docs[name] = "\n".join(reversed(comments))
    return docs


def get_field_docstring(cls: Type, field_name: str) -> Optional[str]:
    """Help text for a field, searching `cls` and then its dataclass parents."""
    for search_cls in cls.mro():
        if not dataclasses.is_dataclass(search_cls):
            continue
        docs = _field_docs(search_cls)
        if field_name in docs:
            return docs[field_name]
    return None


def get_dataclass_docstring(cls: Type) -> str:
    """The class docstring, but only if it was written by hand. `dataclasses` fills
    `__doc__` with the signature otherwise; that is ignored."""
    doc = cls.__doc__
    if doc is None:
        return ""
    default_doc = cls.__name__ + str(inspect.signature(cls)).replace(" -> None", "")
    if doc == default_doc:
        return ""
    return _strings.dedent(doc)
