"""String helpers for the command-line layer."""

import functools
import pathlib
import re
import textwrap
from typing import Any, Type

NESTED_DATACLASS_DELIMETER: str = "."
SUBCOMMAND_DEST: str = "subcommand"


def dedent(text: str) -> str:
    """Same as textwrap.dedent, but ignores the first line."""
    first_line, line_break, rest = text.partition("\n")
    if line_break == "":
        return textwrap.dedent(text)
    return f"{first_line.strip()}\n{textwrap.dedent(rest)}"


_camel_separator_pattern = functools.lru_cache(maxsize=1)(
    lambda: re.compile("((?<=[a-z0-9])[A-Z]|(?!^)[A-Z](?=[a-z]))")
)


def hyphen_separated_from_camel_case(name: str) -> str:
    return _camel_separator_pattern().sub(r"-\1", name).lower()


def flag_from_dest(dest: str) -> str:
    """`solver.fix_shared` => `--solver.fix-shared`."""
    return "--" + dest.replace("_", "-")


def dest_from_key(key: str) -> str:
    """Config-file key (a flag name without dashes) => argparse dest."""
    key = key.strip()
    if key.startswith("--"):
        key = key[2:]
    return key.replace("-", "_")


_TRUE_STRINGS = ("true", "yes", "on", "1")
_FALSE_STRINGS = ("false", "no", "off", "0")


def bool_from_string(arg: str) -> bool:
    lowered = arg.strip().lower()
    if lowered in _TRUE_STRINGS:
        return True
    if lowered in _FALSE_STRINGS:
        return False
    raise ValueError(f"expected a boolean, got {arg!r}")


def instance_from_string(typ: Type, arg: str) -> Any:
    """Given a type and a string from the command line or a config file, reconstruct
    an object. Not intended to deal with containers.

    Replaces calls to `typ(string)`, which misbehave for booleans: `bool("False")` is
    `True`."""
    if typ is bool:
        return bool_from_string(arg)
    elif typ is pathlib.Path:
        return pathlib.Path(arg)
    elif typ in (int, float, str):
        return typ(arg)
    raise ValueError(f"can't build a {typ} from a string")
