"""Pfaffian systems: file format, integrability checks and moment coefficient rows.

A Pfaffian system describes a vector ``Q = [F, d^{m_1} F, ..., d^{m_{q-1}} F]``
of a function and some of its derivatives through ``dQ/dv = A_v Q`` for every
variable ``v``.  The variables are ordered with the ``nxi`` transform variables
first, followed by the parameters ``z``.
"""

from __future__ import annotations

import csv
import io
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DenominatorBelowThreshold,
    DimensionMismatch,
    DuplicateEntry,
    FormatError,
    MissingTransformVariable,
    UnknownVariable,
)
from .ratfun import (
    DEFAULT_EPS_DEN,
    Polynomial,
    RationalFunction,
    RatMatrix,
    batch_evaluate,
    parse_expression,
)

DEFAULT_BOX = (-2.0, 2.0)
BOX_MIN_DENOMINATOR = 1e-6

MultiIndex = tuple[int, ...]


@dataclass(frozen=True)
class PfaffianSystem:
    variables: tuple[str, ...]
    nxi: int
    dim: int
    monomials: tuple[MultiIndex, ...]
    matrices: Mapping[str, RatMatrix]
    boxes: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        if not 0 <= self.nxi <= len(self.variables):
            raise DimensionMismatch(f"nxi = {self.nxi} exceeds variable count")
        if len(self.monomials) != self.dim:
            raise DimensionMismatch(
                f"{len(self.monomials)} monomials declared for dim {self.dim}"
            )
        if any(len(m) != len(self.variables) for m in self.monomials):
            raise DimensionMismatch("monomial multi-index length differs from variable count")
        if any(self.monomials[0]):
            raise DimensionMismatch("first monomial must be 1 (the function itself)")
        if set(self.matrices) != set(self.variables):
            raise DimensionMismatch("exactly one matrix per variable is required")
        for v, a in self.matrices.items():
            if a.shape != (self.dim, self.dim) or a.variables != self.variables:
                raise DimensionMismatch(f"matrix for {v} has wrong shape or variables")

    @property
    def xi_variables(self) -> tuple[str, ...]:
        return self.variables[: self.nxi]

    @property
    def z_variables(self) -> tuple[str, ...]:
        return self.variables[self.nxi :]

    def matrix(self, var: str) -> RatMatrix:
        try:
            return self.matrices[var]
        except KeyError:
            raise UnknownVariable(var) from None

    def box(self, var: str) -> tuple[float, float]:
        return self.boxes.get(var, DEFAULT_BOX)

    def denominators(self) -> list[tuple[Polynomial, str, tuple[int, int]]]:
        """Distinct non-constant denominators with the first entry that carries each."""
        seen: dict[Polynomial, tuple[str, tuple[int, int]]] = {}
        for v in self.variables:
            a = self.matrices[v]
            for r in range(self.dim):
                for c in range(self.dim):
                    d = a[r, c].den
                    if not d.is_constant() and d not in seen:
                        seen[d] = (v, (r, c))
        return [(d, v, e) for d, (v, e) in seen.items()]

    def derivative_matrix(self, var_of_matrix: str, wrt: str) -> RatMatrix:
        cache = self.__dict__.setdefault("_dcache", {})
        key = (var_of_matrix, wrt)
        if key not in cache:
            cache[key] = self.matrix(var_of_matrix).differentiate(wrt)
        return cache[key]

    def with_entry(self, var: str, entry: tuple[int, int], value: RationalFunction) -> "PfaffianSystem":
        """Copy with one matrix entry replaced."""
        r, c = entry
        grid = [list(row) for row in self.matrix(var).entries]
        grid[r][c] = value
        mats = dict(self.matrices)
        mats[var] = RatMatrix(grid, self.variables)
        return PfaffianSystem(self.variables, self.nxi, self.dim, self.monomials, mats, dict(self.boxes), self.name)


# monomial notation


def format_monomial(m: MultiIndex, variables: Sequence[str]) -> str:
    parts = []
    for v, e in zip(variables, m):
        if e == 1:
            parts.append(f"d{v}")
        elif e > 1:
            parts.append(f"d{v}^{e}")
    return "*".join(parts) if parts else "1"


def parse_monomial(text: str, variables: Sequence[str]) -> MultiIndex:
    text = text.strip()
    idx = [0] * len(variables)
    if text == "1":
        return tuple(idx)
    for piece in text.split("*"):
        m = re.fullmatch(r"\s*d([A-Za-z][A-Za-z0-9_]*)\s*(?:\^\s*(\d+))?\s*", piece)
        if not m:
            raise ValueError(f"bad monomial factor {piece!r}")
        name = m.group(1)
        if name not in variables:
            raise UnknownVariable(name)
        idx[variables.index(name)] += int(m.group(2) or 1)
    return tuple(idx)


# file format

_ENTRY = re.compile(r"\(\s*(\d+)\s*,\s*(\d+)\s*\)\s*=\s*(.+)")
_BOX = re.compile(r"([A-Za-z][A-Za-z0-9_]*)\s+in\s+\[\s*([^,\]]+)\s*,\s*([^\]]+)\s*\]")


def _strip(line: str) -> str:
    return line.split("#", 1)[0].strip()


def loads_pfaffian(text: str, name: str = "") -> PfaffianSystem:
    """Parse a Pfaffian system from its textual form."""
    lines = text.splitlines()
    header = None
    variables: tuple[str, ...] | None = None
    nxi = dim = None
    monomial_text: str | None = None
    boxes: dict[str, tuple[float, float]] = {}
    blocks: dict[str, dict[tuple[int, int], tuple[str, int]]] = {}
    current: str | None = None
    current_line = 0

    for lineno, raw in enumerate(lines, start=1):
        line = _strip(raw)
        if not line:
            continue
        if header is None:
            if line != "pfaffian v1":
                raise FormatError(lineno, "expected header 'pfaffian v1'")
            header = lineno
            continue
        if current is not None:
            if line == "end":
                current = None
                continue
            m = _ENTRY.fullmatch(line)
            if not m:
                raise FormatError(lineno, "expected '(r,c) = expression' or 'end'")
            r, c = int(m.group(1)), int(m.group(2))
            if dim is None:
                raise FormatError(lineno, "matrix entries before 'dim'")
            if not (1 <= r <= dim and 1 <= c <= dim):
                raise FormatError(lineno, f"entry ({r},{c}) outside {dim}x{dim} matrix")
            if (r, c) in blocks[current]:
                raise DuplicateEntry(lineno, f"entry ({r},{c}) of matrix {current} given twice")
            blocks[current][(r, c)] = (m.group(3).strip(), lineno)
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise FormatError(lineno, f"unrecognised line {line!r}")
        key = key.strip()
        value = value.strip()
        if key == "vars":
            variables = tuple(v.strip() for v in value.split(","))
            if any(not re.fullmatch(r"[A-Za-z][A-Za-z0-9_]*", v) for v in variables):
                raise FormatError(lineno, "invalid variable name")
            if len(set(variables)) != len(variables):
                raise DuplicateEntry(lineno, "variable declared twice")
        elif key == "nxi":
            nxi = _int_field(value, lineno)
        elif key == "dim":
            dim = _int_field(value, lineno)
            if dim < 1:
                raise FormatError(lineno, "dim must be positive")
        elif key == "monomials":
            monomial_text = value
            monomial_line = lineno
        elif key == "box":
            m = _BOX.fullmatch(value)
            if not m:
                raise FormatError(lineno, "expected 'box: <var> in [<lo>, <hi>]'")
            try:
                lo, hi = float(m.group(2)), float(m.group(3))
            except ValueError:
                raise FormatError(lineno, "box bounds must be real numbers") from None
            if not lo < hi:
                raise FormatError(lineno, "empty box")
            boxes[m.group(1)] = (lo, hi)
        elif key.startswith("matrix ") and value == "":
            var = key[len("matrix ") :].strip()
            if variables is None:
                raise FormatError(lineno, "matrix block before 'vars'")
            if var not in variables:
                raise FormatError(lineno, f"matrix for undeclared variable {var!r}")
            if var in blocks:
                raise DuplicateEntry(lineno, f"matrix {var} given twice")
            blocks[var] = {}
            current = var
            current_line = lineno
        else:
            raise FormatError(lineno, f"unknown key {key!r}")

    if header is None:
        raise FormatError(1, "missing header 'pfaffian v1'")
    if current is not None:
        raise FormatError(current_line, f"matrix {current} not terminated by 'end'")
    for what, val in (("vars", variables), ("nxi", nxi), ("dim", dim), ("monomials", monomial_text)):
        if val is None:
            raise FormatError(len(lines), f"missing '{what}:' line")
    if nxi > len(variables):
        raise FormatError(len(lines), "nxi exceeds the number of variables")
    for v in boxes:
        if v not in variables:
            raise FormatError(len(lines), f"box for undeclared variable {v!r}")
    try:
        monomials = tuple(parse_monomial(t, variables) for t in monomial_text.split(";"))
    except (ValueError, UnknownVariable) as exc:
        raise FormatError(monomial_line, str(exc)) from None
    if len(monomials) != dim:
        raise DimensionMismatch(f"{len(monomials)} monomials declared for dim {dim}")
    if any(monomials[0]):
        raise FormatError(monomial_line, "first monomial must be 1")

    zero = RationalFunction.constant(0, variables)
    matrices = {}
    for v in variables:
        grid = [[zero] * dim for _ in range(dim)]
        for (r, c), (expr, lineno) in blocks.get(v, {}).items():
            try:
                grid[r - 1][c - 1] = parse_expression(expr, variables)
            except (SyntaxError, UnknownVariable) as exc:
                raise FormatError(lineno, str(exc)) from None
        matrices[v] = RatMatrix(grid, variables)
    return PfaffianSystem(variables, nxi, dim, monomials, matrices, boxes, name)


def _int_field(value: str, lineno: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise FormatError(lineno, f"expected an integer, got {value!r}") from None


def load_pfaffian(source: IO[bytes] | IO[str] | str | os.PathLike) -> PfaffianSystem:
    """Load from a path or an open (binary or text) stream."""
    if isinstance(source, (str, os.PathLike)):
        path = Path(source)
        return loads_pfaffian(path.read_text(encoding="utf-8"), name=path.stem)
    data = source.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return loads_pfaffian(data, name=getattr(source, "name", "") and Path(source.name).stem)


def dumps_pfaffian(sys: PfaffianSystem) -> str:
    out = [
        "pfaffian v1",
        f"vars: {', '.join(sys.variables)}",
        f"nxi: {sys.nxi}",
        f"dim: {sys.dim}",
        "monomials: " + "; ".join(format_monomial(m, sys.variables) for m in sys.monomials),
    ]
    for v, (lo, hi) in sys.boxes.items():
        out.append(f"box: {v} in [{lo!r}, {hi!r}]")
    for v in sys.variables:
        a = sys.matrices[v]
        out.append(f"matrix {v}:")
        for r in range(sys.dim):
            for c in range(sys.dim):
                if not a[r, c].is_zero():
                    out.append(f"({r + 1},{c + 1}) = {a[r, c]}")
        out.append("end")
    return "\n".join(out) + "\n"


def fixture_path(name: str) -> Path:
    """Path of a Pfaffian file shipped with the package."""
    return Path(__file__).parent / "data" / name


def load_fixture(name: str) -> PfaffianSystem:
    return load_pfaffian(fixture_path(name))


# integrability


def integrability_residual(
    sys: PfaffianSystem,
    var_i: str,
    var_j: str,
    point: Sequence[float],
    eps_den: float = DEFAULT_EPS_DEN,
) -> float:
    """Max-norm of ``d_j A_i + A_i A_j - d_i A_j - A_j A_i`` at ``point``."""
    ai = sys.matrix(var_i).evaluate(point, eps_den)
    aj = sys.matrix(var_j).evaluate(point, eps_den)
    dj_ai = sys.derivative_matrix(var_i, var_j).evaluate(point, eps_den)
    di_aj = sys.derivative_matrix(var_j, var_i).evaluate(point, eps_den)
    res = dj_ai + ai @ aj - di_aj - aj @ ai
    return float(np.max(np.abs(res)))


def sample_box_points(
    sys: PfaffianSystem,
    count: int,
    rng: np.random.Generator,
    min_denominator: float = BOX_MIN_DENOMINATOR,
) -> np.ndarray:
    """Uniform points in the declared validity box, rejecting near-pole points."""
    lo = np.array([sys.box(v)[0] for v in sys.variables])
    hi = np.array([sys.box(v)[1] for v in sys.variables])
    dens = [d for d, _, _ in sys.denominators()]
    accepted: list[np.ndarray] = []
    attempts = 0
    while len(accepted) < count:
        attempts += 1
        if attempts > 1000 * count:
            raise RuntimeError("validity box is dominated by poles")
        p = lo + (hi - lo) * rng.random(len(lo))
        if dens:
            vals = batch_evaluate(dens, p[None, :])[0]
            if np.any(np.abs(vals) < min_denominator):
                continue
        accepted.append(p)
    return np.array(accepted)


def max_integrability_residual(sys: PfaffianSystem, points: Iterable[Sequence[float]]) -> float:
    worst = 0.0
    names = sys.variables
    for p in points:
        for a in range(len(names)):
            for b in range(a + 1, len(names)):
                worst = max(worst, integrability_residual(sys, names[a], names[b], p))
    return worst


# coefficient rows


@dataclass(frozen=True)
class CoefficientRows:
    """Rows extracting the transform and its first two xi-derivatives from Q."""

    c0: tuple[RationalFunction, ...]
    c1: tuple[tuple[RationalFunction, ...], ...]
    c2: tuple[tuple[tuple[RationalFunction, ...], ...], ...]

    @property
    def n(self) -> int:
        return len(self.c1)

    @property
    def q(self) -> int:
        return len(self.c0)

    def evaluate(self, point: Sequence[float]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Numeric rows at ``point``: shapes (q,), (n, q), (n, n, q)."""
        flat = list(self.c0)
        for row in self.c1:
            flat.extend(row)
        for grid in self.c2:
            for row in grid:
                flat.extend(row)
        nums = batch_evaluate([f.num for f in flat], np.asarray(point, dtype=float)[None, :])[0]
        dens = batch_evaluate([f.den for f in flat], np.asarray(point, dtype=float)[None, :])[0]
        small = np.abs(dens) < DEFAULT_EPS_DEN
        if np.any(small):
            k = int(np.argmax(small))
            raise DenominatorBelowThreshold(float(dens[k]), DEFAULT_EPS_DEN)
        vals = nums / dens
        q, n = self.q, self.n
        c0 = vals[:q]
        c1 = vals[q : q + n * q].reshape(n, q)
        c2 = vals[q + n * q :].reshape(n, n, q)
        return c0, c1, c2


def derive_coefficient_rows(sys: PfaffianSystem, n: int | None = None) -> CoefficientRows:
    """c0 = e_1, c1_i = row 1 of A_xi_i, c2_ij = row 1 of (d_xi_j A_xi_i + A_xi_i A_xi_j)."""
    if n is None:
        n = sys.nxi
    if n < 1 or n > sys.nxi:
        raise MissingTransformVariable(
            f"system declares {sys.nxi} transform variables, {n} requested"
        )
    vars_ = sys.variables
    zero = RationalFunction.constant(0, vars_)
    one = RationalFunction.constant(1, vars_)
    xi = vars_[:n]
    c0 = tuple([one] + [zero] * (sys.dim - 1))
    c1 = tuple(sys.matrix(v).row(0) for v in xi)
    c2 = []
    for i, vi in enumerate(xi):
        a_i = sys.matrix(vi)
        grid = []
        for vj in xi:
            a_j = sys.matrix(vj)
            d_row = sys.derivative_matrix(vi, vj).row(0)
            row = []
            for col in range(sys.dim):
                acc = d_row[col]
                for k in range(sys.dim):
                    x, y = a_i[0, k], a_j[k, col]
                    if not (x.is_zero() or y.is_zero()):
                        acc = acc + x * y
                row.append(acc)
            grid.append(tuple(row))
        c2.append(tuple(grid))
    return CoefficientRows(c0, c1, tuple(c2))


# initial-point table


@dataclass(frozen=True)
class InitialPointTable:
    """Known vectors Q(0, z_init) at a set of starting points."""

    points: np.ndarray
    vectors: np.ndarray
    z_names: tuple[str, ...] = ()

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        vecs = np.atleast_2d(np.asarray(self.vectors, dtype=float))
        if pts.shape[0] != vecs.shape[0] or pts.shape[0] == 0:
            raise DimensionMismatch("table needs one vector per point and at least one point")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "vectors", vecs)
        if not self.z_names:
            object.__setattr__(self, "z_names", tuple(f"z{i + 1}" for i in range(pts.shape[1])))

    def __len__(self) -> int:
        return self.points.shape[0]

    def nearest(self, z: Sequence[float]) -> int:
        """Index of the closest point; ties go to the lowest index."""
        d = np.sum((self.points - np.asarray(z, dtype=float)) ** 2, axis=1)
        return int(np.argmin(d))

    def to_csv(self, stream: IO[str]) -> None:
        q = self.vectors.shape[1]
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(list(self.z_names) + [f"Q{i + 1}" for i in range(q)])
        for p, v in zip(self.points, self.vectors):
            w.writerow([repr(float(x)) for x in p] + [repr(float(x)) for x in v])

    def dumps(self) -> str:
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, stream: IO[str]) -> "InitialPointTable":
        rows = list(csv.reader(stream))
        if not rows:
            raise FormatError(1, "empty initial-vector table")
        header = [h.strip() for h in rows[0]]
        qcols = [i for i, h in enumerate(header) if re.fullmatch(r"Q\d+", h)]
        zcols = [i for i in range(len(header)) if i not in qcols]
        if not qcols or not zcols:
            raise FormatError(1, "header must list z columns followed by Q columns")
        data = []
        for lineno, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(lineno, "wrong number of fields")
            try:
                data.append([float(x) for x in row])
            except ValueError:
                raise FormatError(lineno, "non-numeric field") from None
        arr = np.array(data)
        return cls(arr[:, zcols], arr[:, qcols], tuple(header[i] for i in zcols))

    @classmethod
    def load(cls, path: str | os.PathLike) -> "InitialPointTable":
        with open(path, newline="", encoding="utf-8") as fh:
            return cls.from_csv(fh)

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            self.to_csv(fh)

