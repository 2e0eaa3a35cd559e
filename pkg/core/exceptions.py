from django.core.exceptions import ValidationError


class HeisenbergError(ValidationError):
    """Базовая ошибка библиотеки."""


class PreconditionError(HeisenbergError):
    """Входные данные не удовлетворяют предусловию операции (отказ, код 2)."""


class NumericalError(HeisenbergError):
    """Численный дефект, обнаруженный во время расчёта (код 3)."""
