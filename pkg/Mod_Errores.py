"""
EXCEPCIONES DEL SISTEMA ELLIMPC
===============================

Jerarquia de errores del dominio. El codigo de libreria lanza estas
excepciones y main.py las traduce al contrato de codigos de salida.

Autor: Sistema ElliMPC
Fecha: 2026-10-19
"""


class ErrorMPC(Exception):
    """Error base del sistema."""


class NotPositiveDefinite(ErrorMPC):
    """Pivote o autovalor por debajo del piso configurado."""


class NotStable(ErrorMPC):
    """Matriz de lazo cerrado con radio espectral >= 1."""


class NoConvergence(ErrorMPC):
    """Iteracion de punto fijo (Riccati, Lyapunov) sin converger."""


class DegenerateConstraint(ErrorMPC):
    """Restriccion con cota desplazada no positiva o conjunto sin cotas finitas."""


class NoInvariantSet(ErrorMPC):
    """Ningun lambda de la rejilla certifica la invariancia."""


class EmptyLog(ErrorMPC):
    """Registro de lazo cerrado sin pasos."""


class InvalidProblem(ErrorMPC):
    """Datos del problema con dimensiones o formato incorrectos."""


class OfflineCacheError(ErrorMPC):
    """Cache binaria con cabecera, version o tamano invalidos."""


class ValidationFailed(ErrorMPC):
    """Problema legible que incumple alguno de sus invariantes estaticos."""
