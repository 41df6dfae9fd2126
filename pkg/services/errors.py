"""
Jerarquia de errores del denoiser.

Cada clase lleva el código de salida que usa la CLI (ver app.py):
1 = error de uso/configuración, 2 = error de datos, 3 = aborto numérico.
"""


class DenoiserError(Exception):
    """Error base del proyecto"""

    exit_code = 2


class UsageError(DenoiserError):
    exit_code = 1


class ConfigError(DenoiserError):
    """Configuración inválida; el mensaje nombra el campo culpable"""

    exit_code = 1

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class DimensionError(DenoiserError):
    pass


class ParameterError(DenoiserError):
    pass


class InputError(DenoiserError):
    pass


class NumericalError(DenoiserError):
    exit_code = 3


class CheckpointError(DenoiserError):
    pass


class MagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass
