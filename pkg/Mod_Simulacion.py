"""
SIMULACION EN LAZO CERRADO Y CASO DE ESTUDIO DE TRES MASAS
==========================================================

Contiene:
    - PlantModel: modelo discreto x(t+1) = A x(t) + B u(t) con etiquetas
    - build_three_mass_model: cadena de tres masas unidas por muelles (y a
      las paredes en los extremos), posiciones en decimetros
    - closed_loop_simulate: bucle MPC + planta nominal con registro por paso
    - summarize_stats: media, mediana, maximo y minimo de iteraciones y tiempos

Autor: Sistema ElliMPC
Fecha: 2026-10-19
Version: 1.0
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from Mod_Algebra_Lineal import zoh_discretize
from Mod_Conjunto_Terminal import PolytopeConstraints, TerminalIngredients, build_terminal_set
from Mod_Datos_Offline import OfflineData
from Mod_Errores import EmptyLog
from Mod_Problema_MPC import MPCProblem, ProblemSkeleton, StageBounds
from Mod_Solver_ADMM import SolverADMM, SolverSettings

logger = logging.getLogger(__name__)

# Parametros fisicos del caso de estudio
MASAS_KG = (1.0, 0.5, 1.0)
CONSTANTE_MUELLE = 2.0  # N/m
PERIODO_MUESTREO = 0.2  # s
HORIZONTE_CASO = 10
POS_MIN_DM, POS_MAX_DM = -10.0, 3.0
FUERZA_MAX_N = 0.8
X_REF_CASO = (2.5, 2.5, 2.5, 0.0, 0.0, 0.0)
U_REF_CASO = (0.5, 0.5)


@dataclass(frozen=True, eq=False)
class PlantModel:
    A: np.ndarray
    B: np.ndarray
    etiquetas_estado: Tuple[str, ...] = ()
    etiquetas_entrada: Tuple[str, ...] = ()

    def propagar(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.A @ x + self.B @ u


def build_three_mass_model(Ts: float = PERIODO_MUESTREO, N: int = HORIZONTE_CASO) -> Tuple[PlantModel, ProblemSkeleton]:
    """
    Cadena de tres masas con muelles a las paredes y entre masas.

    Estado (p1, p2, p3 [dm], v1, v2, v3 [m/s]); entradas (F_f sobre la
    primera masa, F_l sobre la ultima) [N]. La deformacion de cada muelle se
    pasa a metros (p / 10) y dp/dt = 10 v.
    """
    k = CONSTANTE_MUELLE
    laplaciano = np.array([[-2.0, 1.0, 0.0],
                           [1.0, -2.0, 1.0],
                           [0.0, 1.0, -2.0]])
    inv_masas = np.diag(1.0 / np.array(MASAS_KG))

    A_c = np.zeros((6, 6))
    A_c[:3, 3:] = 10.0 * np.eye(3)
    A_c[3:, :3] = inv_masas @ (k / 10.0 * laplaciano)
    B_c = np.zeros((6, 2))
    B_c[3, 0] = 1.0 / MASAS_KG[0]
    B_c[5, 1] = 1.0 / MASAS_KG[2]

    A, B = zoh_discretize(A_c, B_c, Ts)
    planta = PlantModel(
        A=A, B=B,
        etiquetas_estado=('p1 [dm]', 'p2 [dm]', 'p3 [dm]', 'v1 [m/s]', 'v2 [m/s]', 'v3 [m/s]'),
        etiquetas_entrada=('F_f [N]', 'F_l [N]'),
    )

    x_lo = np.array([POS_MIN_DM] * 3 + [-np.inf] * 3)
    x_hi = np.array([POS_MAX_DM] * 3 + [np.inf] * 3)
    u_max = np.full(2, FUERZA_MAX_N)
    esqueleto = ProblemSkeleton(
        A=A, B=B,
        Q=np.diag([15.0, 15.0, 15.0, 1.0, 1.0, 1.0]),
        R=0.1 * np.eye(2),
        N=N,
        bounds=StageBounds.uniforme(x_lo, x_hi, -u_max, u_max, N),
        x_ref=np.array(X_REF_CASO),
        u_ref=np.array(U_REF_CASO),
    )
    return planta, esqueleto


def restricciones_mas_estrictas(esqueleto) -> PolytopeConstraints:
    """Poliedro de caja con las cotas mas estrictas de todos los pasos."""
    b = esqueleto.bounds
    return PolytopeConstraints.from_box(b.x_lo.max(axis=0), b.x_hi.min(axis=0),
                                        b.u_lo.max(axis=0), b.u_hi.min(axis=0))


def completar_con_terminal(esqueleto: ProblemSkeleton) -> Tuple[MPCProblem, TerminalIngredients]:
    ingredientes = build_terminal_set(esqueleto.A, esqueleto.B, esqueleto.Q, esqueleto.R,
                                      restricciones_mas_estrictas(esqueleto), esqueleto.x_ref, esqueleto.u_ref)
    return esqueleto.con_terminal(ingredientes.T, ingredientes.ell), ingredientes


def construir_caso_estudio(N: int = HORIZONTE_CASO) -> Tuple[PlantModel, MPCProblem, TerminalIngredients]:
    """Planta de tres masas y problema MPC completo con su conjunto terminal."""
    planta, esqueleto = build_three_mass_model(N=N)
    problema, ingredientes = completar_con_terminal(esqueleto)
    return planta, problema, ingredientes


# ============================================================================
# REGISTRO DE LAZO CERRADO
# ============================================================================

@dataclass
class RegistroPaso:
    t: int
    x: np.ndarray
    u: np.ndarray
    iterations: int
    r_p: float
    r_d: float
    solve_ms: float
    terminal_active: bool
    status: str


@dataclass
class ClosedLoopLog:
    registros: List[RegistroPaso] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.registros)

    def agregar(self, registro: RegistroPaso):
        self.registros.append(registro)

    @property
    def estados(self) -> np.ndarray:
        return np.array([r.x for r in self.registros])

    @property
    def entradas(self) -> np.ndarray:
        return np.array([r.u for r in self.registros])

    @property
    def iteraciones(self) -> np.ndarray:
        return np.array([r.iterations for r in self.registros], dtype=int)

    def to_dataframe(self) -> pd.DataFrame:
        if not self.registros:
            return pd.DataFrame()
        n, m = self.registros[0].x.shape[0], self.registros[0].u.shape[0]
        filas = []
        for r in self.registros:
            fila = {'t': r.t}
            fila.update({f'x{i + 1}': float(v) for i, v in enumerate(r.x)})
            fila.update({f'u{j + 1}': float(v) for j, v in enumerate(r.u)})
            fila.update({'iters': r.iterations, 'rp': r.r_p, 'rd': r.r_d,
                         'solve_ms': r.solve_ms, 'terminal_active': int(r.terminal_active)})
            filas.append(fila)
        columnas = ['t'] + [f'x{i + 1}' for i in range(n)] + [f'u{j + 1}' for j in range(m)] \
            + ['iters', 'rp', 'rd', 'solve_ms', 'terminal_active']
        return pd.DataFrame(filas, columns=columnas)

    def exportar_csv(self, filepath: Path) -> Path:
        filepath = Path(filepath)
        filepath.parent.mkdir(parents=True, exist_ok=True)
        self.to_dataframe().to_csv(filepath, index=False, float_format='%.17g')
        logger.info(f"Registro de lazo cerrado exportado: {filepath}")
        return filepath

    def violaciones_restricciones(self, problem: MPCProblem) -> Dict[str, float]:
        """Maxima violacion de las cotas de estado (paso 1) e entrada (paso 0) a lo largo del registro."""
        if not self.registros:
            return {'estado': 0.0, 'entrada': 0.0}
        X, U = self.estados, self.entradas
        b = problem.bounds
        viol_x = max(0.0, float(np.max(b.x_lo[0] - X)), float(np.max(X - b.x_hi[0])))
        viol_u = max(0.0, float(np.max(b.u_lo[0] - U)), float(np.max(U - b.u_hi[0])))
        return {'estado': viol_x, 'entrada': viol_u}


def closed_loop_simulate(problem: MPCProblem, offline: OfflineData, plant: PlantModel, x0, steps: int,
                         settings: Optional[SolverSettings] = None, progreso: bool = False) -> ClosedLoopLog:
    """
    Simula `steps` instantes: resuelve el MPC, aplica u_apply y propaga la planta.

    La simulacion continua aunque un instante termine en max-iterations.
    """
    settings = settings or SolverSettings.desde_config()
    solver = SolverADMM(problem, offline, settings)
    ell = problem.terminal
    r2 = ell.r ** 2
    x = np.asarray(x0, dtype=float).copy()
    log = ClosedLoopLog()
    sin_converger = 0

    for t in tqdm(range(steps), desc="Lazo cerrado", disable=not progreso):
        resultado = solver.resolver(x)
        v_f = resultado.estado.v_f
        activo = abs(ell.valor(v_f) - r2) <= 1e-6 * max(1.0, r2)
        log.agregar(RegistroPaso(
            t=t, x=x.copy(), u=resultado.u_apply.copy(), iterations=resultado.iterations,
            r_p=resultado.residuals.r_p, r_d=resultado.residuals.r_d, solve_ms=resultado.solve_ms,
            terminal_active=bool(activo), status=resultado.status,
        ))
        if not resultado.convergido:
            sin_converger += 1
        x = plant.propagar(x, resultado.u_apply)

    if sin_converger:
        logger.warning(f"{sin_converger} de {steps} instantes terminaron sin converger")
    logger.info(f"Lazo cerrado: {steps} pasos, iteraciones medias "
                f"{np.mean(log.iteraciones) if steps else 0:.1f}")
    return log


def _estadisticos(valores) -> Dict[str, float]:
    ordenados = np.sort(np.asarray(valores, dtype=float))
    return {
        'average': float(np.mean(ordenados)),
        'median': float(ordenados[(len(ordenados) - 1) // 2]),
        'max': float(ordenados[-1]),
        'min': float(ordenados[0]),
    }


def summarize_stats(log: ClosedLoopLog) -> Dict[str, Dict[str, float]]:
    """Estadisticos de iteraciones y tiempos; la mediana de un numero par es la inferior."""
    if len(log) == 0:
        raise EmptyLog("El registro de lazo cerrado esta vacio")
    return {
        'iterations': _estadisticos([r.iterations for r in log.registros]),
        'solve_ms': _estadisticos([r.solve_ms for r in log.registros]),
    }
