"""Plain-text tensor, matrix and coordinate files.

Tensor files start with a `tensor <K> <n_1> … <n_K> base=<0|1>` header followed by one
`i_1 … i_K value` line per observed entry. Matrix files are either dense
(`matrix <rows> <cols>`, then one row of values per line) or coordinate lists
(`matrix-coo <rows> <cols> base=<0|1>`, then `i j value` lines) for partially observed
covariates. Coordinate files hold `i_1 … i_K` lines under an optional
`coords <K> base=<0|1>` header. Everywhere, `#` starts a comment and blank lines are
skipped. Values are written with 17 significant digits.
"""

import pathlib
from typing import Dict, Iterator, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
import pandas as pd

from ._errors import DataFormatError, DimensionError
from ._tensors import ObservedTensor

PathLike = Union[str, pathlib.Path]


def format_value(x: float) -> str:
    return f"{float(x):.17g}"


def _lines(path: PathLike) -> Iterator[Tuple[int, List[str]]]:
    """(1-based line number, whitespace-split tokens) of every non-comment line."""
    with open(path, "r") as f:
        for number, line in enumerate(f, start=1):
            content = line.split("#", 1)[0].strip()
            if content:
                yield number, content.split()


def _parse_base(token: str, path: PathLike, line: int) -> int:
    if not token.startswith("base=") or token[5:] not in ("0", "1"):
        raise DataFormatError(f"Expected base=0 or base=1, got {token!r}.", path, line)
    return int(token[5:])


def _parse_ints(tokens: Sequence[str], path: PathLike, line: int) -> List[int]:
    try:
        return [int(t) for t in tokens]
    except ValueError:
        raise DataFormatError(f"Expected integers, got {' '.join(tokens)!r}.", path, line)


def _parse_float(token: str, path: PathLike, line: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise DataFormatError(f"Expected a number, got {token!r}.", path, line)


def _check_coordinate(
    coord: Sequence[int], dims: Sequence[int], path: PathLike, line: int
) -> None:
    for mode, (i, n) in enumerate(zip(coord, dims)):
        if not 0 <= i < n:
            raise DataFormatError(
                f"Coordinate {i} on mode {mode} is out of range for size {n}.", path, line
            )


def read_tensor(path: PathLike) -> ObservedTensor:
    lines = _lines(path)
    header = next(lines, None)
    if header is None:
        raise DataFormatError("Empty tensor file.", path)
    number, tokens = header
    if tokens[0] != "tensor" or len(tokens) < 3:
        raise DataFormatError("Expected a `tensor <K> <n_1> … base=<0|1>` header.", path, number)
    order = _parse_ints(tokens[1:2], path, number)[0]
    if len(tokens) != order + 3:
        raise DataFormatError(f"Header should list {order} mode sizes and a base.", path, number)
    dims = _parse_ints(tokens[2 : 2 + order], path, number)
    if order < 2 or any(n < 1 for n in dims):
        raise DataFormatError(f"Invalid tensor dims {dims}.", path, number)
    base = _parse_base(tokens[-1], path, number)

    coords: List[List[int]] = []
    values: List[float] = []
    seen: Dict[Tuple[int, ...], int] = {}
    for number, tokens in lines:
        if len(tokens) != order + 1:
            raise DataFormatError(
                f"Expected {order} coordinates and a value, got {len(tokens)} fields.",
                path,
                number,
            )
        coord = [i - base for i in _parse_ints(tokens[:order], path, number)]
        _check_coordinate(coord, dims, path, number)
        key = tuple(coord)
        if key in seen:
            raise DataFormatError(
                f"Duplicate coordinate {key}, first given on line {seen[key]}.", path, number
            )
        seen[key] = number
        coords.append(coord)
        values.append(_parse_float(tokens[order], path, number))

    return ObservedTensor(
        dims=tuple(dims),
        coords=np.asarray(coords, dtype=np.int64).reshape(-1, order),
        values=np.asarray(values, dtype=np.float64),
    )


def _write_header(f: TextIO, header: str) -> None:
    f.write(header + "\n")


def write_tensor(path: PathLike, tensor: ObservedTensor, base: int = 0) -> None:
    if base not in (0, 1):
        raise DimensionError(f"Coordinate base must be 0 or 1, got {base}.")
    with open(path, "w") as f:
        _write_header(
            f, f"tensor {tensor.order} {' '.join(map(str, tensor.dims))} base={base}"
        )
        for coord, value in zip(tensor.coords.tolist(), tensor.values.tolist()):
            f.write(" ".join(str(i + base) for i in coord) + " " + format_value(value) + "\n")


def read_matrix(path: PathLike) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """(values, mask). The mask is `None` for dense files; coordinate files leave
    unlisted entries unobserved."""
    lines = _lines(path)
    header = next(lines, None)
    if header is None:
        raise DataFormatError("Empty matrix file.", path)
    number, tokens = header
    kind = tokens[0]
    if kind == "matrix" and len(tokens) == 3:
        rows, cols = _parse_ints(tokens[1:3], path, number)
        base = 0
    elif kind == "matrix-coo" and len(tokens) in (3, 4):
        rows, cols = _parse_ints(tokens[1:3], path, number)
        base = _parse_base(tokens[3], path, number) if len(tokens) == 4 else 0
    else:
        raise DataFormatError(
            "Expected a `matrix <rows> <cols>` or `matrix-coo <rows> <cols> base=<0|1>`"
            " header.",
            path,
            number,
        )
    if rows < 1 or cols < 1:
        raise DataFormatError(f"Invalid matrix shape ({rows}, {cols}).", path, number)

    values = np.zeros((rows, cols))
    if kind == "matrix":
        row = 0
        for number, tokens in lines:
            if row >= rows:
                raise DataFormatError(f"More than {rows} rows.", path, number)
            if len(tokens) != cols:
                raise DataFormatError(
                    f"Expected {cols} values, got {len(tokens)}.", path, number
                )
            values[row] = [_parse_float(t, path, number) for t in tokens]
            row += 1
        if row != rows:
            raise DataFormatError(f"Expected {rows} rows, got {row}.", path)
        return values, None

    mask = np.zeros((rows, cols), dtype=bool)
    for number, tokens in lines:
        if len(tokens) != 3:
            raise DataFormatError(f"Expected `i j value`, got {len(tokens)} fields.", path, number)
        i, j = (k - base for k in _parse_ints(tokens[:2], path, number))
        _check_coordinate((i, j), (rows, cols), path, number)
        if mask[i, j]:
            raise DataFormatError(f"Duplicate entry ({i}, {j}).", path, number)
        mask[i, j] = True
        values[i, j] = _parse_float(tokens[2], path, number)
    return values, mask


def write_matrix(
    path: PathLike, values: np.ndarray, mask: Optional[np.ndarray] = None, base: int = 0
) -> None:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise DimensionError(f"Expected a matrix, got shape {values.shape}.")
    rows, cols = values.shape
    with open(path, "w") as f:
        if mask is None:
            _write_header(f, f"matrix {rows} {cols}")
            for row in values.tolist():
                f.write(" ".join(format_value(x) for x in row) + "\n")
            return
        _write_header(f, f"matrix-coo {rows} {cols} base={base}")
        for i, j in np.argwhere(mask).tolist():
            f.write(f"{i + base} {j + base} {format_value(values[i, j])}\n")


def read_coords(path: PathLike, dims: Sequence[int]) -> np.ndarray:
    """(n, K) 0-based coordinates, checked against `dims`."""
    return read_coords_with_base(path, dims)[0]


def read_coords_with_base(
    path: PathLike, dims: Sequence[int]
) -> Tuple[np.ndarray, int]:
    """Like `read_coords`, also returning the base the file declared (0 without a
    header)."""
    order = len(dims)
    base = 0
    coords: List[List[int]] = []
    for number, tokens in _lines(path):
        if tokens[0] == "coords":
            if coords or len(tokens) != 3:
                raise DataFormatError("Misplaced or malformed `coords` header.", path, number)
            if _parse_ints(tokens[1:2], path, number)[0] != order:
                raise DataFormatError(
                    f"Header declares order {tokens[1]}, the model has order {order}.",
                    path,
                    number,
                )
            base = _parse_base(tokens[2], path, number)
            continue
        if len(tokens) != order:
            raise DataFormatError(
                f"Expected {order} coordinates, got {len(tokens)}.", path, number
            )
        coord = [i - base for i in _parse_ints(tokens, path, number)]
        _check_coordinate(coord, dims, path, number)
        coords.append(coord)
    return np.asarray(coords, dtype=np.int64).reshape(-1, order), base


def write_values(
    f: TextIO, coords: np.ndarray, values: np.ndarray, base: int = 0
) -> None:
    """`i_1 … i_K value` lines, as printed by `complete`, with coordinates shifted to
    `base`."""
    for coord, value in zip(coords.tolist(), values.tolist()):
        f.write(" ".join(str(i + base) for i in coord) + " " + format_value(value) + "\n")


def write_trace(path: PathLike, trace: Sequence[float]) -> None:
    with open(path, "w") as f:
        for value in trace:
            f.write(format_value(value) + "\n")


def write_gnuplot(path: PathLike, frame: pd.DataFrame) -> None:
    """Whitespace-separated table with a `#` header line, for gnuplot's `using`."""
    with open(path, "w") as f:
        f.write("# " + " ".join(frame.columns) + "\n")
        frame.to_csv(f, sep=" ", header=False, index=False, float_format="%.17g", na_rep="nan")
