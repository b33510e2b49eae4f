"""
Exception hierarchy, mapped to process exit codes by the command line.
"""


class QuintetError(Exception):
    exit_code = 1


class DataError(QuintetError):
    """Input files that cannot be parsed or violate record constraints"""
    exit_code = 1


class CalibrationError(QuintetError):
    exit_code = 2


class ConfigError(QuintetError):
    exit_code = 3


class ForecastError(QuintetError):
    """A component failed while assembling a forecast; the message names the component"""
    exit_code = 1

    def __init__(self, module: str, message: str):
        super().__init__(f'{module}: {message}')
        self.module = module
