"""
MODELO DE DATOS DEL PROBLEMA MPC
================================

Define los ingredientes de la formulacion MPC lineal con restriccion
terminal elipsoidal:

    min  sum_i ||x_i - x_r||_Q^2 + ||u_i - u_r||_R^2 + ||x_N - x_r||_T^2
    s.a. x_{i+1} = A x_i + B u_i,  x_0 = x(t)
         x_lo_i <= x_i <= x_hi_i   (i = 1..N-1)
         u_lo_i <= u_i <= u_hi_i   (i = 0..N-1)
         x_N en E(P, c, r)

Incluye la validacion de los datos estaticos y la lectura/escritura del
fichero JSON de problema que consume la linea de comandos.

Autor: Sistema ElliMPC
Fecha: 2026-10-19
Version: 1.0
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np

from config import config, validar_archivo_problema
from Mod_Errores import InvalidProblem

logger = logging.getLogger(__name__)


def _solo_lectura(X) -> np.ndarray:
    X = np.array(X, dtype=float)
    X.setflags(write=False)
    return X


# ============================================================================
# TIPOS DEL DOMINIO
# ============================================================================

@dataclass(frozen=True, eq=False)
class Ellipsoid:
    """Elipsoide E(P, c, r) = {x : (x - c)^T P (x - c) <= r^2}."""
    P: np.ndarray
    c: np.ndarray
    r: float

    def __post_init__(self):
        object.__setattr__(self, 'P', _solo_lectura(np.atleast_2d(self.P)))
        object.__setattr__(self, 'c', _solo_lectura(np.atleast_1d(self.c)))
        object.__setattr__(self, 'r', float(self.r))

    @property
    def n(self) -> int:
        return self.c.shape[0]

    def valor(self, x) -> float:
        """Forma cuadratica (x - c)^T P (x - c)."""
        d = np.asarray(x, dtype=float) - self.c
        return float(d @ self.P @ d)

    def contiene(self, x, tol: float = 0.0) -> bool:
        return self.valor(x) <= self.r ** 2 * (1.0 + tol)


@dataclass(frozen=True, eq=False)
class StageBounds:
    """
    Cotas por paso de prediccion.

    x_lo / x_hi: (N-1, n), pasos 1..N-1
    u_lo / u_hi: (N, m), pasos 0..N-1
    """
    x_lo: np.ndarray
    x_hi: np.ndarray
    u_lo: np.ndarray
    u_hi: np.ndarray

    def __post_init__(self):
        for nombre in ('x_lo', 'x_hi', 'u_lo', 'u_hi'):
            object.__setattr__(self, nombre, _solo_lectura(np.atleast_2d(getattr(self, nombre))))

    @classmethod
    def uniforme(cls, x_lo, x_hi, u_lo, u_hi, N: int) -> 'StageBounds':
        """Repite las mismas cotas en todos los pasos."""
        return cls(
            x_lo=np.tile(np.atleast_1d(np.asarray(x_lo, dtype=float)), (N - 1, 1)),
            x_hi=np.tile(np.atleast_1d(np.asarray(x_hi, dtype=float)), (N - 1, 1)),
            u_lo=np.tile(np.atleast_1d(np.asarray(u_lo, dtype=float)), (N, 1)),
            u_hi=np.tile(np.atleast_1d(np.asarray(u_hi, dtype=float)), (N, 1)),
        )

    def _intercalar(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        # Orden de v_o: (u_0, x_1, u_1, ..., x_{N-1}, u_{N-1})
        n = X.shape[1]
        X_pad = np.vstack([np.zeros((1, n)), X])
        return np.hstack([X_pad, U]).reshape(-1)[n:]

    @property
    def v_lo(self) -> np.ndarray:
        return self._intercalar(self.x_lo, self.u_lo)

    @property
    def v_hi(self) -> np.ndarray:
        return self._intercalar(self.x_hi, self.u_hi)


@dataclass(frozen=True, eq=False)
class Reference:
    """Referencia (x_r, u_r); debe ser un estado estacionario del modelo."""
    x_r: np.ndarray
    u_r: np.ndarray

    def error_estacionario(self, A, B) -> float:
        return float(np.max(np.abs(A @ self.x_r + B @ self.u_r - self.x_r), initial=0.0))

    def es_estacionaria(self, A, B, tol: Optional[float] = None) -> bool:
        tol = config.tolerancia_estacionario if tol is None else tol
        return self.error_estacionario(A, B) <= tol


@dataclass(frozen=True, eq=False)
class MPCProblem:
    """Todos los ingredientes de la formulacion MPC con horizonte N."""
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    T: np.ndarray
    N: int
    bounds: StageBounds
    terminal: Ellipsoid
    x_ref: np.ndarray
    u_ref: np.ndarray

    def __post_init__(self):
        for nombre in ('A', 'B', 'Q', 'R', 'T'):
            object.__setattr__(self, nombre, _solo_lectura(np.atleast_2d(getattr(self, nombre))))
        for nombre in ('x_ref', 'u_ref'):
            object.__setattr__(self, nombre, _solo_lectura(np.atleast_1d(getattr(self, nombre))))
        object.__setattr__(self, 'N', int(self.N))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def n_o(self) -> int:
        """Longitud de z_o = (u_0, x_1, ..., x_{N-1}, u_{N-1})."""
        return self.N * (self.n + self.m) - self.n

    @property
    def n_z(self) -> int:
        return self.N * (self.n + self.m)

    @property
    def reference(self) -> Reference:
        return Reference(self.x_ref, self.u_ref)

    @property
    def costes_diagonales(self) -> bool:
        """Q y R diagonales: habilita el camino rapido de productos componente a componente."""
        return bool(np.count_nonzero(self.Q - np.diag(np.diag(self.Q))) == 0
                    and np.count_nonzero(self.R - np.diag(np.diag(self.R))) == 0)

    def con_horizonte(self, N: int) -> 'MPCProblem':
        """Mismo problema con otro horizonte; cotas uniformes tomadas del primer paso."""
        b = self.bounds
        bounds = StageBounds.uniforme(b.x_lo[0], b.x_hi[0], b.u_lo[0], b.u_hi[0], N)
        return MPCProblem(A=self.A, B=self.B, Q=self.Q, R=self.R, T=self.T, N=N, bounds=bounds,
                          terminal=self.terminal, x_ref=self.x_ref, u_ref=self.u_ref)


@dataclass(frozen=True, eq=False)
class ProblemSkeleton:
    """Problema sin ingredientes terminales (T y elipsoide)."""
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    N: int
    bounds: StageBounds
    x_ref: np.ndarray
    u_ref: np.ndarray

    def con_terminal(self, T, terminal: Ellipsoid) -> MPCProblem:
        return MPCProblem(A=self.A, B=self.B, Q=self.Q, R=self.R, T=T, N=self.N, bounds=self.bounds,
                          terminal=terminal, x_ref=self.x_ref, u_ref=self.u_ref)


@dataclass
class Violacion:
    """Invariante incumplido detectado por validate."""
    campo: str
    mensaje: str
    indice: Optional[int] = None

    def a_dict(self) -> Dict:
        return {'campo': self.campo, 'indice': self.indice, 'mensaje': self.mensaje}


# ============================================================================
# VALIDACION
# ============================================================================

def _es_psd(M: np.ndarray) -> bool:
    if np.max(np.abs(M - M.T), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(M), initial=0.0)):
        return False
    return float(np.min(np.linalg.eigvalsh(0.5 * (M + M.T)))) >= -1e-10 * max(1.0, float(np.max(np.abs(M))))


def validate(problem: MPCProblem) -> List[Violacion]:
    """
    Comprueba los invariantes estaticos del problema.

    No lanza excepciones: devuelve la lista de violaciones (vacia si el
    problema es valido). La factibilidad estricta de un x(t) concreto no se
    comprueba aqui.
    """
    violaciones: List[Violacion] = []
    p = problem

    # 1. Dimensiones
    if p.N < 2:
        violaciones.append(Violacion('N', f"El horizonte debe ser >= 2, recibido {p.N}"))
    n = p.A.shape[0]
    m = p.B.shape[1] if p.B.ndim == 2 else 0
    esperadas = {
        'A': (p.A.shape, (n, n)),
        'B': (p.B.shape, (n, m)),
        'Q': (p.Q.shape, (n, n)),
        'R': (p.R.shape, (m, m)),
        'T': (p.T.shape, (n, n)),
        'P': (p.terminal.P.shape, (n, n)),
        'c': (p.terminal.c.shape, (n,)),
        'x_ref': (p.x_ref.shape, (n,)),
        'u_ref': (p.u_ref.shape, (m,)),
        'x_lo': (p.bounds.x_lo.shape, (p.N - 1, n)),
        'x_hi': (p.bounds.x_hi.shape, (p.N - 1, n)),
        'u_lo': (p.bounds.u_lo.shape, (p.N, m)),
        'u_hi': (p.bounds.u_hi.shape, (p.N, m)),
    }
    for campo, (forma, forma_esperada) in esperadas.items():
        if forma != forma_esperada:
            violaciones.append(Violacion(campo, f"Forma {forma}, se esperaba {forma_esperada}"))
    if violaciones:
        return violaciones

    # 2. Valores finitos
    arrays = {'A': p.A, 'B': p.B, 'Q': p.Q, 'R': p.R, 'T': p.T, 'P': p.terminal.P, 'c': p.terminal.c,
              'x_ref': p.x_ref, 'u_ref': p.u_ref}
    for campo, X in arrays.items():
        if not np.all(np.isfinite(X)):
            violaciones.append(Violacion(campo, "Contiene valores no finitos"))
    if violaciones:
        return violaciones

    # 3. Costes semidefinidos y elipsoide definido positivo
    for campo in ('Q', 'R', 'T'):
        if not _es_psd(getattr(p, campo)):
            violaciones.append(Violacion(campo, "Debe ser simetrica semidefinida positiva"))

    P = p.terminal.P
    if np.max(np.abs(P - P.T), initial=0.0) > 1e-12 * max(1.0, float(np.max(np.abs(P)))) \
            or float(np.min(np.linalg.eigvalsh(0.5 * (P + P.T)))) <= config.piso_autovalor:
        violaciones.append(Violacion('P', "Debe ser simetrica definida positiva"))

    if not (np.isfinite(p.terminal.r) and p.terminal.r > 0):
        violaciones.append(Violacion('r', f"El radio debe ser positivo, recibido {p.terminal.r}"))

    # 4. Cotas por paso (x: pasos 1..N-1, u: pasos 0..N-1)
    for i in range(p.N - 1):
        if not np.all(p.bounds.x_lo[i] < p.bounds.x_hi[i]):
            violaciones.append(Violacion('x_bounds', f"x_lo >= x_hi en el paso {i + 1}", indice=i + 1))
    for i in range(p.N):
        if not np.all(p.bounds.u_lo[i] < p.bounds.u_hi[i]):
            violaciones.append(Violacion('u_bounds', f"u_lo >= u_hi en el paso {i}", indice=i))

    # 5. Referencia estacionaria
    if not p.reference.es_estacionaria(p.A, p.B):
        error = p.reference.error_estacionario(p.A, p.B)
        violaciones.append(Violacion(
            'referencia', f"(x_ref, u_ref) no es estacionario: ||A x_r + B u_r - x_r|| = {error:.3e}"))

    return violaciones


# ============================================================================
# FICHERO JSON DE PROBLEMA
# ============================================================================

def _cotas_por_paso(valor, pasos: int, nombre: str) -> np.ndarray:
    """Un vector aplicado a todos los pasos o una lista con un vector por paso."""
    X = np.asarray(valor, dtype=float)
    if X.ndim <= 1:
        return np.tile(np.atleast_1d(X), (pasos, 1))
    if X.ndim == 2 and X.shape[0] == pasos:
        return X
    raise InvalidProblem(f"'{nombre}' debe ser un vector o {pasos} vectores (uno por paso), forma {X.shape}")


def problema_desde_dict(datos: Dict, requiere_terminal: bool = True) -> Union[MPCProblem, ProblemSkeleton]:
    """
    Construye el problema a partir del documento JSON ya leido.

    Raises:
        InvalidProblem: si algun valor no tiene formato numerico valido
    """
    try:
        N = int(datos['N'])
        if N != datos['N'] or N < 2:
            raise InvalidProblem(f"N debe ser un entero >= 2, recibido {datos['N']}")
        bounds = StageBounds(
            x_lo=_cotas_por_paso(datos['x_lo'], N - 1, 'x_lo'),
            x_hi=_cotas_por_paso(datos['x_hi'], N - 1, 'x_hi'),
            u_lo=_cotas_por_paso(datos['u_lo'], N, 'u_lo'),
            u_hi=_cotas_por_paso(datos['u_hi'], N, 'u_hi'),
        )
        comunes = dict(A=datos['A'], B=datos['B'], Q=datos['Q'], R=datos['R'], N=N, bounds=bounds,
                       x_ref=datos['x_ref'], u_ref=datos['u_ref'])
        if not requiere_terminal:
            return ProblemSkeleton(**comunes)
        terminal = Ellipsoid(P=datos['P'], c=datos['c'], r=float(datos['r']))
        return MPCProblem(T=datos['T'], terminal=terminal, **comunes)
    except KeyError as e:
        raise InvalidProblem(f"Falta la clave {e}") from e
    except (TypeError, ValueError) as e:
        raise InvalidProblem(f"Valor no numerico o con forma irregular: {e}") from e


def _cotas_a_lista(X: np.ndarray):
    return X[0].tolist() if np.all(X == X[0]) else X.tolist()


def problema_a_dict(problem: Union[MPCProblem, ProblemSkeleton]) -> Dict:
    """Documento JSON equivalente (cotas uniformes como un unico vector)."""
    datos = {
        'A': problem.A.tolist(), 'B': problem.B.tolist(),
        'Q': problem.Q.tolist(), 'R': problem.R.tolist(),
        'N': problem.N,
        'x_lo': _cotas_a_lista(problem.bounds.x_lo), 'x_hi': _cotas_a_lista(problem.bounds.x_hi),
        'u_lo': _cotas_a_lista(problem.bounds.u_lo), 'u_hi': _cotas_a_lista(problem.bounds.u_hi),
        'x_ref': problem.x_ref.tolist(), 'u_ref': problem.u_ref.tolist(),
    }
    if isinstance(problem, MPCProblem):
        datos.update({
            'T': problem.T.tolist(),
            'P': problem.terminal.P.tolist(),
            'c': problem.terminal.c.tolist(),
            'r': problem.terminal.r,
        })
    return datos


def cargar_problema(filepath: Path, requiere_terminal: bool = True) -> Union[MPCProblem, ProblemSkeleton]:
    """Lee y construye el problema; InvalidProblem si el fichero no es valido."""
    es_valido, mensaje, datos = validar_archivo_problema(Path(filepath), requiere_terminal)
    if not es_valido:
        raise InvalidProblem(mensaje)
    logger.info(mensaje)
    return problema_desde_dict(datos, requiere_terminal)


def guardar_problema(problem: Union[MPCProblem, ProblemSkeleton, Dict], filepath: Path) -> Path:
    datos = problem if isinstance(problem, dict) else problema_a_dict(problem)
    filepath = Path(filepath)
    filepath.parent.mkdir(parents=True, exist_ok=True)
    with open(filepath, 'w', encoding='utf-8') as f:
        json.dump(datos, f, indent=2)
    logger.info(f"Problema guardado en: {filepath}")
    return filepath
