"""Argument definitions: one argparse flag per configuration field, plus the function
that turns the flag's string(s) back into the field's type."""

import argparse
import dataclasses
import pathlib
import shlex
from typing import Any, Callable, List, Optional, Tuple, Type, Union

from typing_extensions import Literal, get_args, get_origin

from . import _docstrings, _strings
from ._errors import UnsupportedTypeAnnotationError, UsageError

# Maps a string (or, when `nargs` is set, a list of strings) to the field's type.
Instantiator = Callable[[Any], Any]

_SCALAR_TYPES = (int, float, str, pathlib.Path)


@dataclasses.dataclass(frozen=True)
class TypeInfo:
    """How argparse should collect a type, and how to rebuild it afterwards."""

    instantiator: Instantiator
    nargs: Optional[Union[int, str]] = None
    metavar: Optional[Union[str, Tuple[str, ...]]] = None
    choices: Optional[Tuple[str, ...]] = None
    is_optional: bool = False


def _scalar_info(typ: Type) -> TypeInfo:
    if typ is bool:
        return TypeInfo(
            instantiator=_strings.bool_from_string, metavar="{True,False}"
        )
    if typ in _SCALAR_TYPES:
        return TypeInfo(
            instantiator=lambda arg: _strings.instance_from_string(typ, arg),
            metavar=typ.__name__.upper(),
        )
    raise UnsupportedTypeAnnotationError(f"Unsupported type {typ}.")


def type_info(typ: Type) -> TypeInfo:
    """Recursively analyze a field annotation. Supports scalars, `Literal[...]`,
    `Optional[...]`, and homogeneous or fixed-length tuples of scalars."""
    origin = get_origin(typ)
    if origin is None:
        return _scalar_info(typ)

    if origin is Literal:
        choices = get_args(typ)
        contained_type = type(choices[0])
        if not all(type(c) is contained_type for c in choices):
            raise UnsupportedTypeAnnotationError(
                f"All choices in {typ} must have the same type."
            )
        inner = _scalar_info(contained_type)
        return dataclasses.replace(
            inner, choices=tuple(str(c) for c in choices), metavar=None
        )

    if origin is Union:
        options = [o for o in get_args(typ) if o is not type(None)]  # noqa
        if len(options) != 1 or len(get_args(typ)) != 2:
            raise UnsupportedTypeAnnotationError(f"Only Optional[...] unions are supported, got {typ}.")
        inner = type_info(options[0])
        if inner.is_optional:
            raise UnsupportedTypeAnnotationError("Nested optional types are not supported.")
        return dataclasses.replace(inner, is_optional=True)

    if origin is tuple:
        args = get_args(typ)
        if len(args) == 2 and args[1] is Ellipsis:
            inner = type_info(args[0])
            _check_flat(inner, typ)
            make = inner.instantiator
            return TypeInfo(
                instantiator=lambda strings: tuple(make(x) for x in strings),
                nargs="*",
                metavar=inner.metavar,
                choices=inner.choices,
            )
        infos = [type_info(a) for a in args]
        for inner in infos:
            _check_flat(inner, typ)
        if len(set(i.choices for i in infos)) > 1:
            raise UnsupportedTypeAnnotationError(
                "All choices in fixed-length tuples must match."
            )
        makers = [i.instantiator for i in infos]
        return TypeInfo(
            instantiator=lambda strings: tuple(m(x) for m, x in zip(makers, strings)),
            nargs=len(args),
            metavar=tuple(str(i.metavar) for i in infos),
            choices=infos[0].choices,
        )

    raise UnsupportedTypeAnnotationError(f"Unsupported type {typ} with origin {origin}.")


def _check_flat(inner: TypeInfo, typ: Type) -> None:
    if inner.nargs is not None or inner.is_optional:
        raise UnsupportedTypeAnnotationError(f"Nested containers aren't supported: {typ}.")


@dataclasses.dataclass(frozen=True)
class ArgumentDefinition:
    """Everything needed for argparse's add_argument(), plus how to rebuild the
    field's value from what argparse returns."""

    prefix: str  # Prefix for nested dataclasses, e.g. `solver.`.
    field: dataclasses.Field
    parent_class: Type
    field_type: Type  # Resolved annotation.
    instantiator: Instantiator

    # From here on, fields correspond to add_argument() keywords.
    name: str
    default: Optional[Any]
    required: bool = False
    action: Optional[str] = None
    nargs: Optional[Union[int, str]] = None
    choices: Optional[Tuple[str, ...]] = None
    metavar: Optional[Union[str, Tuple[str, ...]]] = None
    help: Optional[str] = None

    @property
    def dest(self) -> str:
        return self.prefix + self.field.name

    def get_flag(self) -> str:
        """--flag representation, with the nesting prefix applied."""
        return _strings.flag_from_dest(self.prefix + self.name)

    def add_argument(
        self,
        parser: Union[argparse.ArgumentParser, argparse._ArgumentGroup],
        override: Optional[str] = None,
    ) -> None:
        """Add the flag to a parser. `override` is a config-file string replacing the
        default; it also makes a required flag optional."""
        kwargs = {
            "dest": self.dest,
            "required": self.required,
            "action": self.action,
            "nargs": self.nargs,
            "choices": self.choices,
            "metavar": self.metavar,
            "help": self.help,
            "default": self.default,
        }
        if override is not None:
            kwargs["required"] = False
            if self.action is not None:
                try:
                    kwargs["default"] = _strings.bool_from_string(override)
                except ValueError as e:
                    raise UsageError(f"Bad config value for {self.get_flag()}: {e}")
            elif self.nargs is not None:
                kwargs["default"] = shlex.split(override)
            else:
                kwargs["default"] = override
        if self.action is None:
            # argparse only ever hands us strings; the instantiator does the rest.
            kwargs["type"] = str
        parser.add_argument(
            self.get_flag(), **{k: v for k, v in kwargs.items() if v is not None}
        )

    def instantiate(self, value: Any) -> Any:
        if value is None:
            return None
        if self.action is not None:
            return value
        return self.instantiator(value)

    @staticmethod
    def make_from_field(
        parent_class: Type,
        field: dataclasses.Field,
        field_type: Type,
        default: Optional[Any],
    ) -> "ArgumentDefinition":
        assert field.init, "Field must be in class constructor"
        info = type_info(field_type)
        arg = ArgumentDefinition(
            prefix="",
            field=field,
            parent_class=parent_class,
            field_type=field_type,
            instantiator=info.instantiator,
            name=field.name,
            default=default,
            required=default is None and not info.is_optional,
            nargs=info.nargs,
            choices=info.choices,
            metavar=info.metavar if info.choices is None else None,
        )
        arg = _transform_boolean_flags(arg)
        arg = _transform_generate_helptext(arg)
        arg = _transform_convert_defaults_to_strings(arg)
        return arg


def _transform_boolean_flags(arg: ArgumentDefinition) -> ArgumentDefinition:
    """`False` defaults become `--flag`, `True` defaults `--no-flag`."""
    if arg.field_type is not bool or arg.default is None:
        return arg
    if arg.default is False:
        return dataclasses.replace(arg, action="store_true", metavar=None)
    return dataclasses.replace(
        arg, name="no_" + arg.name, action="store_false", metavar=None
    )


def _format_default(arg: ArgumentDefinition) -> str:
    if arg.nargs is not None and isinstance(arg.default, (tuple, list)):
        return " ".join(shlex.quote(str(x)) for x in arg.default) or "()"
    return shlex.quote(str(arg.default))


def _transform_generate_helptext(arg: ArgumentDefinition) -> ArgumentDefinition:
    help_parts: List[str] = []
    docstring_help = _docstrings.get_field_docstring(arg.parent_class, arg.field.name)
    if docstring_help is not None:
        # argparse treats % as a format character.
        help_parts.append(docstring_help.replace("%", "%%"))
    if arg.action is None and not arg.required:
        help_parts.append(f"(default: {_format_default(arg)})")
    return dataclasses.replace(arg, help=" ".join(help_parts))


def _transform_convert_defaults_to_strings(arg: ArgumentDefinition) -> ArgumentDefinition:
    """Defaults go through the same instantiator as command-line strings."""
    if arg.default is None or arg.action is not None:
        return arg
    if arg.nargs is not None:
        return dataclasses.replace(arg, default=[str(x) for x in arg.default])
    return dataclasses.replace(arg, default=str(arg.default))
