"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class HGMError(Exception):
    """Base class for all errors raised by hgmfilter."""

    @property
    def kind(self) -> str:
        return type(self).__name__


class ExpressionSyntaxError(HGMError, SyntaxError):
    def __init__(self, text: str, position: int, expected: list[str]):
        self.text = text
        self.position = position
        self.expected = list(expected)
        got = text[position] if position < len(text) else "end of input"
        super().__init__(
            f"at position {position}: expected {' or '.join(self.expected)}, got {got!r}"
        )


class UnknownVariable(HGMError, KeyError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(name)

    def __str__(self) -> str:
        return f"unknown variable {self.name!r}"


class DenominatorBelowThreshold(HGMError, ArithmeticError):
    def __init__(self, value: float, threshold: float):
        self.value = value
        self.threshold = threshold
        super().__init__(f"|denominator| = {abs(value):.3e} below threshold {threshold:.1e}")


class DimensionMismatch(HGMError, ValueError):
    pass


class FormatError(HGMError, ValueError):
    def __init__(self, line: int, reason: str):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class DuplicateEntry(FormatError):
    pass


class MissingTransformVariable(HGMError, ValueError):
    pass


class PoleOnPath(HGMError, ArithmeticError):
    def __init__(self, s: float, variable: str, entry: tuple[int, int]):
        self.s = s
        self.variable = variable
        self.entry = entry
        super().__init__(
            f"denominator of A_{variable}({entry[0] + 1},{entry[1] + 1}) vanishes near s = {s:.6g}"
        )


class NonfiniteState(HGMError, ArithmeticError):
    def __init__(self, s: float):
        self.s = s
        super().__init__(f"non-finite state encountered at s = {s:.6g}")


class RefinementFailure(HGMError, ArithmeticError):
    def __init__(self, coarse, fine, what: str = "quadrature"):
        self.coarse = coarse
        self.fine = fine
        super().__init__(f"{what} refinement disagrees: {coarse!r} vs {fine!r}")


class UnsupportedMonomial(HGMError, ValueError):
    pass


class NonPositiveDefinite(HGMError, ValueError):
    pass


class SingularCovariance(HGMError, ArithmeticError):
    pass


class NonPositiveVariance(HGMError, ValueError):
    pass


class NonPositiveEvidence(HGMError, ArithmeticError):
    pass


class CovarianceRepairExceeded(HGMError, ArithmeticError):
    pass


class DegenerateWeights(HGMError, ArithmeticError):
    pass


class EmptyReport(HGMError, ValueError):
    pass


class ConfigError(HGMError, ValueError):
    pass
