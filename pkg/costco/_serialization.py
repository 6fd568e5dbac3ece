"""Human-readable model files: tagged YAML for dataclasses and numpy arrays."""

import dataclasses
import datetime
import pathlib
from typing import IO, Any, Dict, Optional, Set, Type, TypeVar, Union

import numpy as np
import yaml
from typing_extensions import get_args, get_origin, get_type_hints

from ._errors import DataFormatError
from ._model import CoupledModel
from ._solver import FitResult

DATACLASS_YAML_TAG_PREFIX = "!dataclass:"
NDARRAY_YAML_TAG = "!ndarray"

DataclassType = TypeVar("DataclassType")


def _get_contained_dataclasses_from_instance(instance: Any) -> Set[Type]:
    """Recursively collects the dataclass types reachable from an instance."""
    if isinstance(instance, (tuple, list)):
        out: Set[Type] = set()
        for v in instance:
            out |= _get_contained_dataclasses_from_instance(v)
        return out
    elif isinstance(instance, dict):
        out = set()
        for v in instance.values():
            out |= _get_contained_dataclasses_from_instance(v)
        return out
    elif not dataclasses.is_dataclass(instance) or isinstance(instance, type):
        return set()

    out = {type(instance)}
    for field in dataclasses.fields(instance):
        out |= _get_contained_dataclasses_from_instance(getattr(instance, field.name))
    return out


def _get_contained_dataclasses_from_type(
    cls: Type, _parent_contained_dataclasses: Optional[Set[Type]] = None
) -> Set[Type]:
    """Recursively collects the dataclass types named by a dataclass's field
    annotations, including inside `Tuple[...]`, `Optional[...]` and similar."""
    assert dataclasses.is_dataclass(cls)
    parent_contained_dataclasses = (
        set() if _parent_contained_dataclasses is None else _parent_contained_dataclasses
    )
    contained_dataclasses = {cls}
    if cls in parent_contained_dataclasses:
        return contained_dataclasses

    def handle_type(typ: Any) -> Set[Type]:
        if get_origin(typ) is not None:
            out: Set[Type] = set()
            for arg in get_args(typ):
                out |= handle_type(arg)
            return out
        if dataclasses.is_dataclass(typ) and typ not in parent_contained_dataclasses:
            return _get_contained_dataclasses_from_type(
                typ,
                _parent_contained_dataclasses=contained_dataclasses
                | parent_contained_dataclasses,
            )
        return set()

    for typ in get_type_hints(cls).values():
        contained_dataclasses |= handle_type(typ)
    return contained_dataclasses


def _check_unique_names(types: Set[Type]) -> Dict[str, Type]:
    names = {typ.__name__: typ for typ in types}
    assert len(names) == len(types), (
        f"Contained dataclass names must all be unique, but got {sorted(names)}"
    )
    return names


def _make_loader(cls: Type) -> Type[yaml.Loader]:
    class DataclassLoader(yaml.Loader):
        pass

    def make_dataclass_constructor(typ: Type):
        return lambda loader, node: typ(**loader.construct_mapping(node, deep=True))

    def construct_ndarray(loader: yaml.Loader, node: yaml.Node) -> np.ndarray:
        mapping = loader.construct_mapping(node, deep=True)
        return np.asarray(mapping["data"], dtype=np.float64).reshape(mapping["shape"])

    for name, typ in _check_unique_names(_get_contained_dataclasses_from_type(cls)).items():
        DataclassLoader.add_constructor(
            tag=DATACLASS_YAML_TAG_PREFIX + name,
            constructor=make_dataclass_constructor(typ),
        )
    DataclassLoader.add_constructor(tag=NDARRAY_YAML_TAG, constructor=construct_ndarray)
    return DataclassLoader


def _make_dumper(instance: Any) -> Type[yaml.Dumper]:
    class DataclassDumper(yaml.Dumper):
        pass

    def make_representer(name: str):
        def representer(dumper: yaml.Dumper, data: Any) -> yaml.Node:
            return dumper.represent_mapping(
                tag=DATACLASS_YAML_TAG_PREFIX + name,
                mapping={
                    field.name: getattr(data, field.name)
                    for field in dataclasses.fields(data)
                    if field.init
                },
            )

        return representer

    def represent_ndarray(dumper: yaml.Dumper, data: np.ndarray) -> yaml.Node:
        # `tolist()` yields Python floats, whose repr round-trips exactly.
        return dumper.represent_mapping(
            tag=NDARRAY_YAML_TAG,
            mapping={"shape": list(data.shape), "data": data.astype(np.float64).ravel().tolist()},
        )

    names = _check_unique_names(_get_contained_dataclasses_from_instance(instance))
    for name, typ in names.items():
        DataclassDumper.add_representer(typ, make_representer(name))
    DataclassDumper.add_representer(np.ndarray, represent_ndarray)
    return DataclassDumper


def from_yaml(
    cls: Type[DataclassType],
    stream: Union[str, IO[str], bytes, IO[bytes]],
) -> DataclassType:
    """Re-construct a dataclass instance from a string generated by `to_yaml()`."""
    out = yaml.load(stream, Loader=_make_loader(cls))
    if not isinstance(out, cls):
        raise DataFormatError(f"Expected a {cls.__name__} document, got {type(out).__name__}.")
    return out


def _timestamp() -> str:
    """Current timestamp. Example format: `2021-11-05-15:46:32`."""
    return datetime.datetime.now().strftime("%Y-%m-%d-%H:%M:%S")


def to_yaml(instance: Any) -> str:
    """Serialize a dataclass (numpy arrays included); `from_yaml()` reads it back."""
    return f"# YAML generated via costco, at {_timestamp()}.\n" + yaml.dump(
        instance, Dumper=_make_dumper(instance), sort_keys=False
    )


@dataclasses.dataclass(frozen=True, eq=False)
class ModelFile:
    """A fitted (or true) model plus its provenance."""

    model: CoupledModel
    seed: int = 0
    restart_index: int = 0
    objective: Optional[float] = None
    iterations: int = 0
    converged: bool = False
    metadata: Dict[str, float] = dataclasses.field(default_factory=dict)

    @staticmethod
    def from_fit(result: FitResult, metadata: Optional[Dict[str, float]] = None) -> "ModelFile":
        return ModelFile(
            model=result.model,
            seed=result.seed,
            restart_index=result.restart_index,
            objective=result.objective,
            iterations=result.iterations,
            converged=result.converged,
            metadata={} if metadata is None else dict(metadata),
        )


def save_model(path: Union[str, pathlib.Path], contents: Union[ModelFile, CoupledModel]) -> None:
    if isinstance(contents, CoupledModel):
        contents = ModelFile(model=contents)
    pathlib.Path(path).write_text(to_yaml(contents))


def load_model(path: Union[str, pathlib.Path]) -> ModelFile:
    try:
        return from_yaml(ModelFile, pathlib.Path(path).read_text())
    except yaml.YAMLError as e:
        raise DataFormatError(f"Malformed model file: {e}", path)
