"""argparse parsers generated from (nested) configuration dataclasses."""

import argparse
import dataclasses
import sys
import warnings
from typing import Any, Dict, List, Mapping, Optional, Set, Tuple, Type

import termcolor
from typing_extensions import get_type_hints

from . import _arguments, _docstrings, _strings
from ._errors import CostcoError, UnsupportedTypeAnnotationError, UsageError


class ArgumentParser(argparse.ArgumentParser):
    """Raises `UsageError` instead of exiting on bad input."""

    def error(self, message: str) -> None:  # type: ignore
        raise UsageError(f"{message}\n{self.format_usage().rstrip()}")


def _ensure_dataclass_default_is_frozen(field: dataclasses.Field, default: Any) -> None:
    cls = type(default)
    if not cls.__dataclass_params__.frozen:
        warnings.warn(
            f"Mutable type {cls} is used as a default value for `{field.name}`. Consider"
            f" using `dataclasses.field(default_factory=...)` or marking {cls} as frozen."
        )


def _get_field_default(field: dataclasses.Field, parent_default: Any) -> Optional[Any]:
    if parent_default is not None:
        return getattr(parent_default, field.name)
    if field.default is not dataclasses.MISSING:
        if dataclasses.is_dataclass(field.default):
            _ensure_dataclass_default_is_frozen(field, field.default)
        return field.default
    if field.default_factory is not dataclasses.MISSING:  # type: ignore
        return field.default_factory()  # type: ignore
    return None


@dataclasses.dataclass(frozen=True)
class ParserSpecification:
    """Flags of a dataclass, with nested dataclasses flattened under dotted
    prefixes."""

    cls: Type
    args: List[_arguments.ArgumentDefinition]
    helptext_from_nested_field_name: Dict[str, Optional[str]]

    @staticmethod
    def from_dataclass(
        cls: Type,
        default_instance: Optional[Any] = None,
        parent_dataclasses: Optional[Set[Type]] = None,
    ) -> "ParserSpecification":
        assert dataclasses.is_dataclass(cls)
        parent_dataclasses = set() if parent_dataclasses is None else parent_dataclasses
        if cls in parent_dataclasses:
            raise UnsupportedTypeAnnotationError(
                f"Found a cyclic dataclass dependency with type {cls}."
            )
        parent_dataclasses = parent_dataclasses | {cls}

        hints = get_type_hints(cls)
        args: List[_arguments.ArgumentDefinition] = []
        nested_help: Dict[str, Optional[str]] = {}
        for field in dataclasses.fields(cls):
            if not field.init:
                continue
            field_type = hints[field.name]
            default = _get_field_default(field, default_instance)

            if dataclasses.is_dataclass(field_type):
                child = ParserSpecification.from_dataclass(
                    field_type, default, parent_dataclasses
                )
                prefix = field.name + _strings.NESTED_DATACLASS_DELIMETER
                args.extend(
                    dataclasses.replace(arg, prefix=prefix + arg.prefix) for arg in child.args
                )
                nested_help.update(
                    {prefix + k: v for k, v in child.helptext_from_nested_field_name.items()}
                )
                nested_help[field.name] = _docstrings.get_field_docstring(cls, field.name)
                continue

            try:
                args.append(
                    _arguments.ArgumentDefinition.make_from_field(
                        cls, field, field_type, default
                    )
                )
            except UnsupportedTypeAnnotationError as e:
                raise UnsupportedTypeAnnotationError(
                    f"Error when parsing {cls.__name__}.{field.name} of type"
                    f" {field_type}: {e.args[0]}"
                )
        return ParserSpecification(
            cls=cls, args=args, helptext_from_nested_field_name=nested_help
        )

    @property
    def dests(self) -> Set[str]:
        return {arg.dest for arg in self.args}

    def apply(
        self,
        parser: argparse.ArgumentParser,
        overrides: Optional[Mapping[str, str]] = None,
    ) -> None:
        """Add every flag to `parser`, grouped by nesting prefix and by whether it's
        required. `overrides` maps dests to config-file strings."""
        if overrides is None:
            overrides = {}

        def format_group_name(nested_field_name: str, required: bool) -> str:
            if required:
                prefix = termcolor.colored("required", attrs=["bold"])
            else:
                prefix = termcolor.colored("optional", attrs=["bold", "dark"])
            suffix = " arguments"
            if nested_field_name == "":
                suffix = suffix[1:]
            return prefix + " " + nested_field_name.replace("_", " ").replace(".", " • ") + suffix

        optional_groups: Dict[str, argparse._ArgumentGroup] = {"": parser._action_groups[1]}
        required_groups: Dict[str, argparse._ArgumentGroup] = {
            "": parser.add_argument_group(format_group_name("", required=True)),
        }
        parser._action_groups[1].title = format_group_name("", required=False)
        parser._action_groups = parser._action_groups[::-1]

        for arg in self.args:
            override = overrides.get(arg.dest)
            required = arg.required and override is None
            target, other = (
                (required_groups, optional_groups)
                if required
                else (optional_groups, required_groups)
            )
            if arg.prefix not in target:
                nested_field_name = arg.prefix[:-1]
                target[arg.prefix] = parser.add_argument_group(
                    format_group_name(nested_field_name, required=required),
                    # Only the first group for a field gets the description.
                    description=self.helptext_from_nested_field_name.get(nested_field_name)
                    if arg.prefix not in other
                    else None,
                )
            arg.add_argument(target[arg.prefix], override)

    def construct(self, value_from_dest: Mapping[str, Any]) -> Any:
        """Instantiate `self.cls` from parsed values."""
        instance, consumed = self._construct(self.cls, "", value_from_dest)
        assert consumed == self.dests
        return instance

    def _construct(
        self, cls: Type, prefix: str, value_from_dest: Mapping[str, Any]
    ) -> Tuple[Any, Set[str]]:
        arg_from_dest = {arg.dest: arg for arg in self.args}
        hints = get_type_hints(cls)
        kwargs: Dict[str, Any] = {}
        consumed: Set[str] = set()
        for field in dataclasses.fields(cls):
            if not field.init:
                continue
            dest = prefix + field.name
            if dest in arg_from_dest:
                arg = arg_from_dest[dest]
                try:
                    kwargs[field.name] = arg.instantiate(value_from_dest[dest])
                except (ValueError, TypeError) as e:
                    raise UsageError(f"Parsing error for {arg.get_flag()}: {e}")
                consumed.add(dest)
            else:
                assert dest in self.helptext_from_nested_field_name
                kwargs[field.name], child_consumed = self._construct(
                    hints[field.name],
                    dest + _strings.NESTED_DATACLASS_DELIMETER,
                    value_from_dest,
                )
                consumed |= child_consumed
        try:
            return cls(**kwargs), consumed
        except CostcoError as e:
            # Field validation in __post_init__.
            raise UsageError(f"Invalid {prefix[:-1] or cls.__name__} settings: {e}")


def read_config_file(path: str) -> Dict[str, Tuple[str, int]]:
    """`key = value` lines => {dest: (value, line number)}. `#` starts a comment."""
    out: Dict[str, Tuple[str, int]] = {}
    try:
        with open(path, "r") as f:
            lines = f.readlines()
    except OSError as e:
        raise UsageError(f"Can't read config file {path}: {e.strerror}")
    for number, line in enumerate(lines, start=1):
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        key, equals, value = content.partition("=")
        if equals == "" or key.strip() == "":
            raise UsageError(f"{path}:{number}: expected `key = value`, got {content!r}")
        out[_strings.dest_from_key(key)] = (value.strip(), number)
    return out


@dataclasses.dataclass(frozen=True)
class CommandTable:
    """Subcommand name => configuration dataclass."""

    commands: Dict[str, Type]
    description: str = ""

    def build(
        self, overrides: Optional[Mapping[str, Tuple[str, int]]] = None
    ) -> Tuple[ArgumentParser, Dict[str, ParserSpecification]]:
        if overrides is None:
            overrides = {}
        parser = ArgumentParser(
            prog="costco",
            allow_abbrev=False,
            description=self.description,
            formatter_class=argparse.RawTextHelpFormatter,
        )
        add_global_arguments(parser)
        subparsers = parser.add_subparsers(
            dest=_strings.SUBCOMMAND_DEST,
            title="subcommands",
            metavar="{" + ",".join(self.commands) + "}",
            required=True,
        )
        specs: Dict[str, ParserSpecification] = {}
        for name, cls in self.commands.items():
            spec = ParserSpecification.from_dataclass(cls)
            description = _docstrings.get_dataclass_docstring(cls)
            subparser = subparsers.add_parser(
                name,
                description=description,
                help=description.partition("\n")[0],
                allow_abbrev=False,
                formatter_class=argparse.RawTextHelpFormatter,
            )
            spec.apply(
                subparser,  # type: ignore
                {dest: value for dest, (value, _) in overrides.items() if dest in spec.dests},
            )
            specs[name] = spec
        return parser, specs

    def parse(self, args: Optional[List[str]] = None) -> Tuple[str, Any, argparse.Namespace]:
        """(subcommand name, its dataclass instance, global options)."""
        if args is None:
            args = sys.argv[1:]
        pre_parser = ArgumentParser(add_help=False, allow_abbrev=False)
        add_global_arguments(pre_parser)
        global_options, _ = pre_parser.parse_known_args(args)

        overrides: Dict[str, Tuple[str, int]] = {}
        if global_options.config is not None:
            overrides = read_config_file(global_options.config)

        parser, specs = self.build(overrides)
        namespace = parser.parse_args(args)
        name = getattr(namespace, _strings.SUBCOMMAND_DEST)
        spec = specs[name]
        for dest, (_, number) in overrides.items():
            if dest not in spec.dests:
                raise UsageError(
                    f"{global_options.config}:{number}: unknown key"
                    f" {dest.replace('_', '-')!r} for `{name}`"
                )
        values = {dest: getattr(namespace, dest) for dest in spec.dests}
        return name, spec.construct(values), namespace


def add_global_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--config",
        default=None,
        metavar="FILE",
        help="File of `key = value` lines; keys are flag names without dashes.",
    )
    parser.add_argument(
        "--log-level",
        default="WARNING",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging verbosity. (default: WARNING)",
    )
