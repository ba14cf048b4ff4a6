#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Иерархия исключений AnyTSR.
Каждый класс несет код завершения CLI и короткий тег вида ошибки.
"""


class AnyTSRError(Exception):
    """Базовая ошибка AnyTSR"""

    exit_code = 1
    kind = "internal"


class ConfigError(AnyTSRError, ValueError):
    """Неверная конфигурация: неизвестный ключ, плохое значение, нарушенный инвариант"""

    exit_code = 2
    kind = "config"


class DataError(AnyTSRError, ValueError):
    """Ошибка данных: нет каталога, нечитаемое или многоканальное изображение"""

    exit_code = 3
    kind = "data"


class DivergenceError(AnyTSRError, ArithmeticError):
    """Численная расходимость: нечисловые значения в loss или промежуточных тензорах"""

    exit_code = 4
    kind = "divergence"


class CheckpointError(AnyTSRError, IOError):
    """Поврежденный чекпоинт или несовпадение версии формата"""

    exit_code = 5
    kind = "checkpoint"


class GradcheckError(AnyTSRError):
    """Проверка градиентов не пройдена"""

    exit_code = 6
    kind = "gradcheck"

    def __init__(self, failed_blocks):
        self.failed_blocks = list(failed_blocks)
        super().__init__(
            "проверка градиентов не пройдена для блоков: " + ", ".join(self.failed_blocks)
        )
