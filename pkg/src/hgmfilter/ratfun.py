"""Exact multivariate rational functions over named variables.

Coefficients are :class:`fractions.Fraction`; floats only appear when a
function is evaluated.  Numerator and denominator are never cancelled against
each other (no multivariate gcd), but the denominator is normalised to a
primitive integer polynomial with positive leading coefficient, which keeps
printing reproducible.

Expression grammar accepted by :func:`parse_expression`::

    expr   := term { ("+"|"-") term }
    term   := factor { ("*"|"/") factor }
    factor := base [ "^" uint ]
    base   := uint | ident | "(" expr ")" | "-" factor

Unary minus binds looser than ``^`` so ``-x^2`` is ``-(x^2)``.
"""

from __future__ import annotations

import math
import re
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DenominatorBelowThreshold,
    DimensionMismatch,
    ExpressionSyntaxError,
    UnknownVariable,
)

DEFAULT_EPS_DEN = 1e-12

Exponent = tuple[int, ...]


def _grlex_key(exp: Exponent):
    return (sum(exp), exp)


class Polynomial:
    """Sparse polynomial with exact rational coefficients."""

    __slots__ = ("variables", "_terms", "_compiled")

    def __init__(self, variables: Sequence[str], terms: Mapping[Exponent, Fraction] | None = None):
        self.variables = tuple(variables)
        nv = len(self.variables)
        clean: dict[Exponent, Fraction] = {}
        for exp, c in (terms or {}).items():
            exp = tuple(int(e) for e in exp)
            if len(exp) != nv or any(e < 0 for e in exp):
                raise DimensionMismatch(f"exponent {exp} does not fit variables {self.variables}")
            c = Fraction(c)
            if c:
                clean[exp] = clean.get(exp, Fraction(0)) + c
                if not clean[exp]:
                    del clean[exp]
        self._terms = clean
        self._compiled = None

    # construction helpers

    @classmethod
    def constant(cls, value, variables: Sequence[str]) -> "Polynomial":
        return cls(variables, {(0,) * len(variables): Fraction(value)})

    @classmethod
    def variable(cls, name: str, variables: Sequence[str]) -> "Polynomial":
        variables = tuple(variables)
        if name not in variables:
            raise UnknownVariable(name)
        exp = tuple(1 if v == name else 0 for v in variables)
        return cls(variables, {exp: Fraction(1)})

    @property
    def terms(self) -> dict[Exponent, Fraction]:
        return dict(self._terms)

    def sorted_terms(self) -> list[tuple[Exponent, Fraction]]:
        """Terms in descending graded-lexicographic order."""
        return sorted(self._terms.items(), key=lambda t: _grlex_key(t[0]), reverse=True)

    def is_zero(self) -> bool:
        return not self._terms

    def is_constant(self) -> bool:
        zero = (0,) * len(self.variables)
        return all(exp == zero for exp in self._terms)

    def constant_value(self) -> Fraction:
        return self._terms.get((0,) * len(self.variables), Fraction(0))

    def leading_coefficient(self) -> Fraction:
        if not self._terms:
            return Fraction(0)
        return self.sorted_terms()[0][1]

    def degree(self) -> int:
        return max((sum(e) for e in self._terms), default=0)

    # arithmetic

    def _check(self, other: "Polynomial") -> None:
        if other.variables != self.variables:
            raise DimensionMismatch(
                f"variable lists differ: {self.variables} vs {other.variables}"
            )

    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            self._check(other)
            return other
        if isinstance(other, (int, Fraction)):
            return Polynomial.constant(other, self.variables)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self._terms)
        for exp, c in other._terms.items():
            out[exp] = out.get(exp, Fraction(0)) + c
        return Polynomial(self.variables, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.variables, {e: -c for e, c in self._terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return other - self

    def __mul__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out: dict[Exponent, Fraction] = {}
        for e1, c1 in self._terms.items():
            for e2, c2 in other._terms.items():
                exp = tuple(a + b for a, b in zip(e1, e2))
                out[exp] = out.get(exp, Fraction(0)) + c1 * c2
        return Polynomial(self.variables, out)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        if not isinstance(k, int) or k < 0:
            raise ValueError("polynomial powers must be nonnegative integers")
        result = Polynomial.constant(1, self.variables)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def scale(self, c) -> "Polynomial":
        c = Fraction(c)
        return Polynomial(self.variables, {e: v * c for e, v in self._terms.items()})

    def differentiate(self, var: str) -> "Polynomial":
        if var not in self.variables:
            raise UnknownVariable(var)
        i = self.variables.index(var)
        out = {}
        for exp, c in self._terms.items():
            if exp[i]:
                new = list(exp)
                new[i] -= 1
                out[tuple(new)] = c * exp[i]
        return Polynomial(self.variables, out)

    def __eq__(self, other):
        if isinstance(other, (int, Fraction)):
            other = Polynomial.constant(other, self.variables)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.variables == other.variables and self._terms == other._terms

    def __hash__(self):
        return hash((self.variables, frozenset(self._terms.items())))

    # evaluation

    def compiled(self) -> tuple[np.ndarray, np.ndarray]:
        """Float coefficients and exponent matrix in canonical term order."""
        if self._compiled is None:
            terms = self.sorted_terms()
            coeffs = np.array([float(c) for _, c in terms], dtype=float)
            exps = np.array([e for e, _ in terms], dtype=np.int64).reshape(
                len(terms), len(self.variables)
            )
            self._compiled = (coeffs, exps)
        return self._compiled

    def evaluate(self, point: Sequence[float]) -> float:
        if len(point) != len(self.variables):
            raise DimensionMismatch(
                f"point has {len(point)} coordinates, expected {len(self.variables)}"
            )
        total = 0.0
        for exp, c in self.sorted_terms():
            term = float(c)
            for x, e in zip(point, exp):
                if e:
                    term *= float(x) ** e
            total += term
        return total

    # printing

    def __str__(self) -> str:
        if not self._terms:
            return "0"
        pieces = []
        for k, (exp, c) in enumerate(self.sorted_terms()):
            sign = "-" if c < 0 else "+"
            mag = abs(c)
            factors = []
            for name, e in zip(self.variables, exp):
                if e == 1:
                    factors.append(name)
                elif e > 1:
                    factors.append(f"{name}^{e}")
            if not factors:
                body = str(mag)
            elif mag == 1:
                body = "*".join(factors)
            else:
                body = f"{mag}*" + "*".join(factors)
            if k == 0:
                pieces.append(("-" if sign == "-" else "") + body)
            else:
                pieces.append(f" {sign} {body}")
        return "".join(pieces)

    def __repr__(self) -> str:
        return f"Polynomial({str(self)!r}, variables={self.variables})"


def _primitive_scale(p: Polynomial) -> Fraction:
    """Factor turning ``p`` into a primitive integer polynomial with positive leading term."""
    coeffs = [c for _, c in p.sorted_terms()]
    den_lcm = 1
    num_gcd = 0
    for c in coeffs:
        den_lcm = den_lcm * c.denominator // math.gcd(den_lcm, c.denominator)
    for c in coeffs:
        num_gcd = math.gcd(num_gcd, abs(c.numerator) * (den_lcm // c.denominator))
    scale = Fraction(den_lcm, num_gcd)
    return -scale if coeffs[0] < 0 else scale


class RationalFunction:
    """Quotient of two polynomials over the same variable list."""

    __slots__ = ("num", "den")

    def __init__(self, num: Polynomial, den: Polynomial | None = None):
        if den is None:
            den = Polynomial.constant(1, num.variables)
        if num.variables != den.variables:
            raise DimensionMismatch("numerator and denominator variable lists differ")
        if den.is_zero():
            raise ZeroDivisionError("rational function with zero denominator")
        if num.is_zero():
            den = Polynomial.constant(1, num.variables)
        elif den.is_constant():
            num = num.scale(1 / den.constant_value())
            den = Polynomial.constant(1, num.variables)
        else:
            scale = _primitive_scale(den)
            if scale != 1:
                num = num.scale(scale)
                den = den.scale(scale)
        self.num = num
        self.den = den

    @classmethod
    def constant(cls, value, variables: Sequence[str]) -> "RationalFunction":
        return cls(Polynomial.constant(value, variables))

    @classmethod
    def variable(cls, name: str, variables: Sequence[str]) -> "RationalFunction":
        return cls(Polynomial.variable(name, variables))

    @property
    def variables(self) -> tuple[str, ...]:
        return self.num.variables

    def is_zero(self) -> bool:
        return self.num.is_zero()

    def is_polynomial(self) -> bool:
        return self.den.is_constant()

    def _coerce(self, other) -> "RationalFunction":
        if isinstance(other, RationalFunction):
            if other.variables != self.variables:
                raise DimensionMismatch(
                    f"variable lists differ: {self.variables} vs {other.variables}"
                )
            return other
        if isinstance(other, Polynomial):
            return RationalFunction(other)
        if isinstance(other, (int, Fraction)):
            return RationalFunction.constant(other, self.variables)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        if self.den == other.den:
            return RationalFunction(self.num + other.num, self.den)
        return RationalFunction(
            self.num * other.den + other.num * self.den, self.den * other.den
        )

    __radd__ = __add__

    def __neg__(self):
        return RationalFunction(-self.num, self.den)

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return other - self

    def __mul__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        if self.is_zero() or other.is_zero():
            return RationalFunction.constant(0, self.variables)
        return RationalFunction(self.num * other.num, self.den * other.den)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        if other.is_zero():
            raise ZeroDivisionError("division by the zero rational function")
        return RationalFunction(self.num * other.den, self.den * other.num)

    def __rtruediv__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return other / self

    def __pow__(self, k: int):
        return RationalFunction(self.num**k, self.den**k)

    def differentiate(self, var: str) -> "RationalFunction":
        """Quotient rule, no cancellation."""
        dn = self.num.differentiate(var)
        dd = self.den.differentiate(var)
        if dd.is_zero():
            return RationalFunction(dn, self.den)
        return RationalFunction(dn * self.den - self.num * dd, self.den * self.den)

    def evaluate(self, point: Sequence[float], eps_den: float = DEFAULT_EPS_DEN) -> float:
        d = self.den.evaluate(point)
        if not abs(d) >= eps_den:
            raise DenominatorBelowThreshold(d, eps_den)
        return self.num.evaluate(point) / d

    def __eq__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self.num * other.den == other.num * self.den

    __hash__ = None

    def identical(self, other: "RationalFunction") -> bool:
        """Structural equality of the stored numerator/denominator pair."""
        return self.num == other.num and self.den == other.den

    def __str__(self) -> str:
        if self.den == 1:
            return str(self.num)
        return f"({self.num})/({self.den})"

    def __repr__(self) -> str:
        return f"RationalFunction({str(self)!r})"


def evaluate(f: RationalFunction, point: Sequence[float], eps_den: float = DEFAULT_EPS_DEN) -> float:
    return f.evaluate(point, eps_den)


def differentiate(f: RationalFunction, var: str) -> RationalFunction:
    return f.differentiate(var)


# parsing

_TOKEN = re.compile(r"\s*(?:(\d+)|([A-Za-z][A-Za-z0-9_]*)|(\S))")


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            break
        start = m.start(m.lastindex) if m.lastindex else m.end()
        if m.group(1) is not None:
            tokens.append(("uint", m.group(1), start))
        elif m.group(2) is not None:
            tokens.append(("ident", m.group(2), start))
        elif m.group(3) is not None:
            ch = m.group(3)
            if ch not in "+-*/^()":
                raise ExpressionSyntaxError(text, start, ["operator", "operand"])
            tokens.append((ch, ch, start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, variables: tuple[str, ...]):
        self.text = text
        self.variables = variables
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, expected):
        raise ExpressionSyntaxError(self.text, self.peek()[2], expected)

    def parse(self) -> RationalFunction:
        value = self.expr()
        if self.peek()[0] != "end":
            self.fail(["'+'", "'-'", "'*'", "'/'", "'^'", "end of input"])
        return value

    def expr(self):
        value = self.term()
        while self.peek()[0] in ("+", "-"):
            op = self.take()[0]
            rhs = self.term()
            value = value + rhs if op == "+" else value - rhs
        return value

    def term(self):
        value = self.factor()
        while self.peek()[0] in ("*", "/"):
            op = self.take()[0]
            rhs = self.factor()
            if op == "*":
                value = value * rhs
            else:
                if rhs.is_zero():
                    raise ExpressionSyntaxError(self.text, self.tokens[self.i - 1][2], ["nonzero divisor"])
                value = value / rhs
        return value

    def factor(self):
        value = self.base()
        if self.peek()[0] == "^":
            self.take()
            kind, tok, _ = self.peek()
            if kind != "uint":
                self.fail(["unsigned integer exponent"])
            self.take()
            value = value ** int(tok)
        return value

    def base(self):
        kind, tok, _ = self.peek()
        if kind == "uint":
            self.take()
            return RationalFunction.constant(int(tok), self.variables)
        if kind == "ident":
            self.take()
            if tok not in self.variables:
                raise UnknownVariable(tok)
            return RationalFunction.variable(tok, self.variables)
        if kind == "(":
            self.take()
            value = self.expr()
            if self.peek()[0] != ")":
                self.fail(["')'"])
            self.take()
            return value
        if kind == "-":
            self.take()
            return -self.factor()
        self.fail(["number", "identifier", "'('", "'-'"])


def parse_expression(text: str, variables: Sequence[str]) -> RationalFunction:
    """Parse ``text`` into an exact rational function over ``variables``."""
    return _Parser(text, tuple(variables)).parse()


# matrices


class RatMatrix:
    """Dense matrix of rational functions sharing one variable list."""

    __slots__ = ("variables", "rows", "cols", "entries")

    def __init__(self, entries: Sequence[Sequence[RationalFunction]], variables: Sequence[str] | None = None):
        grid = tuple(tuple(row) for row in entries)
        if not grid or not grid[0]:
            raise DimensionMismatch("matrix must have at least one row and column")
        cols = len(grid[0])
        if any(len(row) != cols for row in grid):
            raise DimensionMismatch("ragged matrix rows")
        variables = tuple(variables) if variables is not None else grid[0][0].variables
        for row in grid:
            for e in row:
                if e.variables != variables:
                    raise DimensionMismatch("matrix entries over different variables")
        self.variables = variables
        self.rows = len(grid)
        self.cols = cols
        self.entries = grid

    @classmethod
    def zeros(cls, rows: int, cols: int, variables: Sequence[str]) -> "RatMatrix":
        zero = RationalFunction.constant(0, variables)
        return cls([[zero] * cols for _ in range(rows)], variables)

    @classmethod
    def identity(cls, n: int, variables: Sequence[str]) -> "RatMatrix":
        one = RationalFunction.constant(1, variables)
        zero = RationalFunction.constant(0, variables)
        return cls([[one if i == j else zero for j in range(n)] for i in range(n)], variables)

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    def __getitem__(self, idx: tuple[int, int]) -> RationalFunction:
        r, c = idx
        return self.entries[r][c]

    def row(self, r: int) -> tuple[RationalFunction, ...]:
        return self.entries[r]

    def __add__(self, other: "RatMatrix") -> "RatMatrix":
        return mat_add(self, other)

    def __sub__(self, other: "RatMatrix") -> "RatMatrix":
        if self.shape != other.shape:
            raise DimensionMismatch(f"cannot subtract {other.shape} from {self.shape}")
        return RatMatrix(
            [[a - b for a, b in zip(ra, rb)] for ra, rb in zip(self.entries, other.entries)],
            self.variables,
        )

    def __matmul__(self, other: "RatMatrix") -> "RatMatrix":
        return mat_mul(self, other)

    def __eq__(self, other):
        if not isinstance(other, RatMatrix):
            return NotImplemented
        return self.shape == other.shape and all(
            a == b for ra, rb in zip(self.entries, other.entries) for a, b in zip(ra, rb)
        )

    __hash__ = None

    def differentiate(self, var: str) -> "RatMatrix":
        return mat_differentiate(self, var)

    def evaluate(self, point: Sequence[float], eps_den: float = DEFAULT_EPS_DEN) -> np.ndarray:
        return np.array([[e.evaluate(point, eps_den) for e in row] for row in self.entries])

    def __repr__(self) -> str:
        body = "; ".join(", ".join(str(e) for e in row) for row in self.entries)
        return f"RatMatrix([{body}])"


def mat_add(a: RatMatrix, b: RatMatrix) -> RatMatrix:
    if a.shape != b.shape:
        raise DimensionMismatch(f"cannot add {a.shape} and {b.shape}")
    if a.variables != b.variables:
        raise DimensionMismatch("matrices over different variables")
    return RatMatrix([[x + y for x, y in zip(ra, rb)] for ra, rb in zip(a.entries, b.entries)], a.variables)


def mat_mul(a: RatMatrix, b: RatMatrix) -> RatMatrix:
    if a.cols != b.rows:
        raise DimensionMismatch(f"cannot multiply {a.shape} by {b.shape}")
    if a.variables != b.variables:
        raise DimensionMismatch("matrices over different variables")
    zero = RationalFunction.constant(0, a.variables)
    out = []
    for i in range(a.rows):
        row = []
        for j in range(b.cols):
            acc = zero
            for k in range(a.cols):
                x, y = a.entries[i][k], b.entries[k][j]
                if x.is_zero() or y.is_zero():
                    continue
                acc = acc + x * y
            row.append(acc)
        out.append(row)
    return RatMatrix(out, a.variables)


def mat_differentiate(a: RatMatrix, var: str) -> RatMatrix:
    return RatMatrix([[e.differentiate(var) for e in row] for row in a.entries], a.variables)


def parse_matrix(rows: Iterable[Iterable[str]], variables: Sequence[str]) -> RatMatrix:
    """Build a matrix from a grid of expression strings."""
    return RatMatrix([[parse_expression(t, variables) for t in row] for row in rows], variables)


def batch_evaluate(polys: Sequence[Polynomial], points: np.ndarray) -> np.ndarray:
    """Evaluate many polynomials at many points.

    ``points`` has shape (S, nvars); the result has shape (S, len(polys)).
    Monomials shared between polynomials are computed once.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if not polys:
        return np.zeros((points.shape[0], 0))
    index: dict[Exponent, int] = {}
    rows, cols, vals = [], [], []
    for p_idx, p in enumerate(polys):
        for exp, c in p.sorted_terms():
            m = index.setdefault(exp, len(index))
            rows.append(m)
            cols.append(p_idx)
            vals.append(float(c))
    exps = np.array(list(index), dtype=np.int64).reshape(len(index), points.shape[1])
    coeff = np.zeros((len(index), len(polys)))
    np.add.at(coeff, (np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64)), vals)
    # (S, M) monomial values
    mono = np.ones((points.shape[0], len(index)))
    for v in range(points.shape[1]):
        e = exps[:, v]
        if e.any():
            mono *= points[:, v : v + 1] ** e[None, :]
    return mono @ coeff
