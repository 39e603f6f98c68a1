from __future__ import annotations

from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from hetmix.specfun import SeriesResult


class HetmixError(Exception):
    pass


class DomainError(HetmixError, ValueError):
    """Аргумент вне математической области; сообщение называет нарушенное ограничение."""


class RangeError(HetmixError, ArithmeticError):
    """Результат не представим в float (переполнение/исчезновение порядка, превышение кэша)."""


class SeriesError(HetmixError):
    def __init__(self, message: str, result: SeriesResult | None = None) -> None:
        super().__init__(message)
        self.result = result


class PoleError(SeriesError):
    pass


class DivergenceError(SeriesError):
    pass


class CancellationError(HetmixError):
    def __init__(self, message: str, value: float, bound: float) -> None:
        super().__init__(message)
        self.value = value
        self.bound = bound


class QuadratureError(HetmixError):
    def __init__(self, message: str, value: float = float("nan"), bound: float = float("inf")) -> None:
        super().__init__(message)
        self.value = value
        self.bound = bound


class NegativeProbabilityError(HetmixError):
    pass


class ConsistencyError(HetmixError):
    pass


class DataError(HetmixError):
    pass
