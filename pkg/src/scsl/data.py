"""Data containers, CSV ingestion and the seedable randomness contract.

Binary matrices are stored on the {0, 1} scale.  The {-1, +1} coding used
for model inputs is produced on demand by :func:`recode_binary`, so a zero
in a model input always means "masked out" and never a legitimate value.
"""

from __future__ import annotations

import csv
import enum
import os
import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import (
    DomainViolation,
    DuplicateColumn,
    MismatchedRows,
    ParseError,
    ShapeMismatch,
)

__all__ = [
    "Domain",
    "DataMatrix",
    "GroundTruthGraph",
    "RngHandle",
    "as_rng",
    "load_csv",
    "read_matrix_csv",
    "write_csv",
    "write_matrix_csv",
    "recode_binary",
    "decode_binary",
    "atomic_write_text",
    "derive_seed",
]

_LABEL_RE = re.compile(r"^[A-Za-z0-9_]+$")


class Domain(str, enum.Enum):
    BINARY = "binary"
    CONTINUOUS = "continuous"

    @classmethod
    def parse(cls, value) -> "Domain":
        if isinstance(value, Domain):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise DomainViolation(f"unknown domain {value!r}; expected 'binary' or 'continuous'")


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def _default_names(prefix: str, count: int) -> tuple[str, ...]:
    return tuple(f"{prefix}{i + 1}" for i in range(count))


def _check_names(names: Sequence[str], width: int, what: str) -> tuple[str, ...]:
    names = tuple(str(s) for s in names)
    if len(names) != width:
        raise ShapeMismatch(f"{what}: {len(names)} labels for {width} columns")
    seen = set()
    for name in names:
        if name in seen:
            raise DuplicateColumn(f"{what}: duplicate column label {name!r}")
        seen.add(name)
    return names


@dataclass(frozen=True)
class DataMatrix:
    """Paired observations of the source set X (n x p) and target set Y (n x m).

    Arrays are copied on construction and made read-only, so instances are
    safe to share between workers.
    """

    x_data: np.ndarray
    y_data: np.ndarray
    domain: Domain = Domain.BINARY
    x_names: tuple[str, ...] = ()
    y_names: tuple[str, ...] = ()
    recoded: bool = False

    def __post_init__(self):
        x = np.asarray(self.x_data, dtype=float)
        y = np.asarray(self.y_data, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if y.ndim == 1:
            y = y[:, None]
        if x.ndim != 2 or y.ndim != 2:
            raise ShapeMismatch("x_data and y_data must be 2-D")
        if x.shape[0] != y.shape[0]:
            raise MismatchedRows(f"X has {x.shape[0]} rows but Y has {y.shape[0]}")
        if x.shape[0] < 1:
            raise MismatchedRows("at least one row is required")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ParseError("data contains non-finite values")
        domain = Domain.parse(self.domain)
        if domain is Domain.BINARY:
            allowed = (-1.0, 1.0) if self.recoded else (0.0, 1.0)
            for name, arr in (("X", x), ("Y", y)):
                if not np.all(np.isin(arr, allowed)):
                    raise DomainViolation(f"{name} has entries outside {{{allowed[0]:g}, {allowed[1]:g}}}")
        elif self.recoded:
            raise DomainViolation("only binary data can be recoded")
        x_names = self.x_names or _default_names("X", x.shape[1])
        y_names = self.y_names or _default_names("Y", y.shape[1])
        object.__setattr__(self, "x_data", _frozen(x))
        object.__setattr__(self, "y_data", _frozen(y))
        object.__setattr__(self, "domain", domain)
        object.__setattr__(self, "x_names", _check_names(x_names, x.shape[1], "X"))
        object.__setattr__(self, "y_names", _check_names(y_names, y.shape[1], "Y"))

    @property
    def n(self) -> int:
        return self.x_data.shape[0]

    @property
    def p(self) -> int:
        return self.x_data.shape[1]

    @property
    def m(self) -> int:
        return self.y_data.shape[1]

    def model_inputs(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (x, y) on the scale the amortized models consume."""
        if self.domain is Domain.BINARY and not self.recoded:
            rec = recode_binary(self)
            return rec.x_data, rec.y_data
        return self.x_data, self.y_data

    def response_scale(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (x, y) on the scale residuals are computed on ({0,1} for binary)."""
        if self.recoded:
            dec = decode_binary(self)
            return dec.x_data, dec.y_data
        return self.x_data, self.y_data


@dataclass(frozen=True)
class GroundTruthGraph:
    """Boolean p x m adjacency; entry (j, k) is True iff X_j -> Y_k."""

    adjacency: np.ndarray

    def __post_init__(self):
        adj = np.asarray(self.adjacency)
        if adj.ndim != 2:
            raise ShapeMismatch("adjacency must be 2-D")
        object.__setattr__(self, "adjacency", _frozen(adj, dtype=bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.adjacency.shape

    def check_matches(self, data: DataMatrix) -> None:
        if self.shape != (data.p, data.m):
            raise ShapeMismatch(f"truth is {self.shape} but data is {(data.p, data.m)}")


def recode_binary(matrix: DataMatrix) -> DataMatrix:
    """Map binary entries 0 -> -1 and 1 -> +1."""
    if matrix.domain is not Domain.BINARY:
        raise DomainViolation("recode_binary requires binary data")
    if matrix.recoded:
        return matrix
    return DataMatrix(
        2.0 * matrix.x_data - 1.0,
        2.0 * matrix.y_data - 1.0,
        matrix.domain,
        matrix.x_names,
        matrix.y_names,
        recoded=True,
    )


def decode_binary(matrix: DataMatrix) -> DataMatrix:
    """Inverse of :func:`recode_binary`."""
    if matrix.domain is not Domain.BINARY:
        raise DomainViolation("decode_binary requires binary data")
    if not matrix.recoded:
        return matrix
    return DataMatrix(
        (matrix.x_data + 1.0) / 2.0,
        (matrix.y_data + 1.0) / 2.0,
        matrix.domain,
        matrix.x_names,
        matrix.y_names,
        recoded=False,
    )


# --------------------------------------------------------------------------
# CSV


def read_matrix_csv(path, domain=Domain.BINARY) -> tuple[tuple[str, ...], np.ndarray]:
    """Read one header-plus-rows CSV file into (labels, values)."""
    domain = Domain.parse(domain)
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    for label in header:
        if not _LABEL_RE.match(label):
            raise ParseError(f"{path}:1: invalid column label {label!r}")
    seen = set()
    for label in header:
        if label in seen:
            raise DuplicateColumn(f"{path}:1: duplicate column label {label!r}")
        seen.add(label)
    values = np.empty((len(rows) - 1, len(header)))
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(f"{path}:{lineno}: expected {len(header)} cells, found {len(row)}")
        for col, cell in enumerate(row):
            cell = cell.strip()
            if not cell:
                raise ParseError(f"{path}:{lineno}: empty cell in column {header[col]!r}")
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric cell {cell!r}") from None
            if not np.isfinite(v):
                raise ParseError(f"{path}:{lineno}: non-finite cell {cell!r}")
            if domain is Domain.BINARY and v not in (0.0, 1.0):
                raise DomainViolation(f"{path}:{lineno}: binary cell {cell!r} is not 0 or 1")
            values[lineno - 2, col] = v
    return tuple(header), values


def load_csv(x_path, y_path, domain=Domain.BINARY) -> DataMatrix:
    """Load and validate an X/Y file pair.

    Raises
    ------
    MismatchedRows, DomainViolation, ParseError, DuplicateColumn
    """
    domain = Domain.parse(domain)
    x_names, x = read_matrix_csv(x_path, domain)
    y_names, y = read_matrix_csv(y_path, domain)
    if x.shape[0] != y.shape[0]:
        raise MismatchedRows(f"{x_path} has {x.shape[0]} rows but {y_path} has {y.shape[0]}")
    return DataMatrix(x, y, domain, x_names, y_names)


def _format_matrix(names, values, domain: Domain, row_labels=None) -> str:
    lines = [",".join(([""] if row_labels is not None else []) + list(names))]
    for i, row in enumerate(values):
        if domain is Domain.BINARY:
            cells = [str(int(v)) for v in row]
        else:
            cells = ["NA" if np.isnan(v) else format(float(v), ".17g") for v in row]
        if row_labels is not None:
            cells = [row_labels[i]] + cells
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_matrix_csv(path, names, values, domain=Domain.CONTINUOUS, row_labels=None) -> None:
    atomic_write_text(path, _format_matrix(names, np.asarray(values, float), Domain.parse(domain), row_labels))


def write_csv(matrix: DataMatrix, x_path, y_path) -> None:
    """Write a DataMatrix as two CSV files that :func:`load_csv` reads back exactly."""
    matrix = decode_binary(matrix) if matrix.recoded else matrix
    write_matrix_csv(x_path, matrix.x_names, matrix.x_data, matrix.domain)
    write_matrix_csv(y_path, matrix.y_names, matrix.y_data, matrix.domain)


# --------------------------------------------------------------------------
# Randomness


@dataclass
class RngHandle:
    """A seeded PCG64 stream.

    Child streams are derived by key (``SeedSequence`` spawn keys), never by
    draw order, so ``handle.child(j, k)`` is the same stream no matter which
    worker asks for it or when.
    """

    ALGORITHM = "numpy.PCG64 via SeedSequence(seed, spawn_key)"

    seed: int
    key: tuple[int, ...] = ()
    generator: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        seed = int(self.seed)
        if not 0 <= seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        self.seed = seed
        self.key = tuple(int(k) for k in self.key)
        ss = np.random.SeedSequence(seed, spawn_key=self.key)
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def child(self, *key: int) -> "RngHandle":
        return RngHandle(self.seed, self.key + tuple(key))

    def __getattr__(self, name):
        # delegate draws (random, normal, integers, ...) to the generator
        if name == "generator":
            raise AttributeError(name)
        return getattr(self.generator, name)


def as_rng(rng) -> RngHandle:
    """Coerce an int seed or an RngHandle to an RngHandle."""
    if isinstance(rng, RngHandle):
        return rng
    if rng is None:
        raise ValueError("a seed is required; scsl has no implicit global RNG")
    if isinstance(rng, (int, np.integer)):
        return RngHandle(int(rng))
    raise TypeError(f"expected an int seed or RngHandle, got {type(rng).__name__}")


def derive_seed(seed: int, *key: int) -> int:
    """A 63-bit integer seed derived from ``seed`` and ``key``, for APIs that take plain ints."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
