"""
CONJUNTO TERMINAL ELIPSOIDAL (VARIANTE DE FORMA FIJA)
=====================================================

Construye los ingredientes terminales sin resolver LMIs:

    1. K = ganancia LQR (u = u_r + K (x - x_r), A + B K Schur estable)
    2. T = solucion de (A+BK)^T T (A+BK) - T = -(Q + K^T R K)
    3. P = T, c = x_r y r = mayor radio admisible frente a C x <= c, D u <= d
    4. invariancia: lambda P - A_K^T P A_K >= 0 para el menor lambda de la rejilla

Autor: Sistema ElliMPC
Fecha: 2026-10-19
Version: 1.0
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from config import config
from Mod_Algebra_Lineal import norma_inf, riccati_lqr, solve_discrete_lyapunov
from Mod_Errores import DegenerateConstraint, InvalidProblem, NoInvariantSet
from Mod_Problema_MPC import Ellipsoid

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PolytopeConstraints:
    """Region admisible C x <= c_vec, D u <= d_vec."""
    C: np.ndarray
    c_vec: np.ndarray
    D: np.ndarray
    d_vec: np.ndarray

    def __post_init__(self):
        C, D = np.atleast_2d(np.asarray(self.C, dtype=float)), np.atleast_2d(np.asarray(self.D, dtype=float))
        c_vec, d_vec = np.atleast_1d(np.asarray(self.c_vec, dtype=float)), np.atleast_1d(np.asarray(self.d_vec, dtype=float))
        if C.shape[0] != c_vec.shape[0] or D.shape[0] != d_vec.shape[0]:
            raise InvalidProblem(f"Dimensiones incoherentes: C {C.shape}, c {c_vec.shape}, D {D.shape}, d {d_vec.shape}")
        object.__setattr__(self, 'C', C)
        object.__setattr__(self, 'c_vec', c_vec)
        object.__setattr__(self, 'D', D)
        object.__setattr__(self, 'd_vec', d_vec)

    @classmethod
    def from_box(cls, x_lo, x_hi, u_lo, u_hi) -> 'PolytopeConstraints':
        """Cotas de caja como filas +-e_j; las cotas infinitas no generan fila."""
        def filas(lo, hi):
            lo, hi = np.atleast_1d(np.asarray(lo, dtype=float)), np.atleast_1d(np.asarray(hi, dtype=float))
            I = np.eye(lo.shape[0])
            M = np.vstack([I[np.isfinite(hi)], -I[np.isfinite(lo)]])
            v = np.concatenate([hi[np.isfinite(hi)], -lo[np.isfinite(lo)]])
            return M.reshape(-1, lo.shape[0]), v

        C, c_vec = filas(x_lo, x_hi)
        D, d_vec = filas(u_lo, u_hi)
        return cls(C=C, c_vec=c_vec, D=D, d_vec=d_vec)

    def admisible(self, x, u, tol: float = 0.0) -> bool:
        return bool(np.all(self.C @ x <= self.c_vec + tol) and np.all(self.D @ u <= self.d_vec + tol))


@dataclass(frozen=True, eq=False)
class TerminalIngredients:
    K: np.ndarray
    T: np.ndarray
    ell: Ellipsoid
    lam: float
    margen: float = 0.0

    def a_fragmento(self) -> Dict:
        """Fragmento JSON que se fusiona con el fichero de problema."""
        return {
            'T': self.T.tolist(),
            'P': self.ell.P.tolist(),
            'c': self.ell.c.tolist(),
            'r': self.ell.r,
            'K': self.K.tolist(),
            'lambda': self.lam,
            'margen': self.margen,
        }


def terminal_cost(A, B, K, Q, R) -> np.ndarray:
    """T de la ecuacion de Lyapunov del lazo cerrado; NotStable si A + BK no es estable."""
    A_K = np.asarray(A) + np.asarray(B) @ np.asarray(K)
    return solve_discrete_lyapunov(A_K, np.asarray(Q) + np.asarray(K).T @ np.asarray(R) @ np.asarray(K))


def _cotas_desplazadas(constraints: PolytopeConstraints, x_r, u_r) -> Tuple[np.ndarray, np.ndarray]:
    c_hat = constraints.c_vec - constraints.C @ np.asarray(x_r, dtype=float)
    d_hat = constraints.d_vec - constraints.D @ np.asarray(u_r, dtype=float)
    if np.any(c_hat <= 0) or np.any(d_hat <= 0):
        raise DegenerateConstraint(
            f"La referencia no es estrictamente admisible: min c_hat={np.min(c_hat, initial=np.inf):.3e}, "
            f"min d_hat={np.min(d_hat, initial=np.inf):.3e}")
    return c_hat, d_hat


def max_admissible_radius(P, K, constraints: PolytopeConstraints, x_r, u_r) -> float:
    """
    Mayor r tal que E(P, x_r, r) cumple las restricciones bajo u = u_r + K (x - x_r).

    Usa max_{x en E(P,0,r)} a^T x = r sqrt(a^T P^-1 a) fila a fila. Las filas
    nulas (C_j = 0 o D_j K = 0) se omiten con un aviso.

    Raises:
        DegenerateConstraint: cota desplazada <= 0 o ninguna fila util
    """
    c_hat, d_hat = _cotas_desplazadas(constraints, x_r, u_r)
    P_inv = np.linalg.inv(np.asarray(P, dtype=float))
    filas = np.vstack([constraints.C, constraints.D @ np.asarray(K, dtype=float)])
    cotas = np.concatenate([c_hat, d_hat])

    soporte = np.einsum('ij,jk,ik->i', filas, P_inv, filas)
    nulas = soporte <= 1e-14 * max(1.0, norma_inf(P_inv))
    if np.any(nulas):
        logger.warning(f"{int(np.sum(nulas))} fila(s) de restriccion nulas omitidas")
    if np.all(nulas):
        raise DegenerateConstraint("Ninguna restriccion acota el elipsoide")

    return float(np.min(cotas[~nulas] / np.sqrt(soporte[~nulas])))


def check_invariance(P, A, B, K, lam: float, r: float) -> Tuple[bool, float]:
    """
    Invariancia por lambda P - A_K^T P A_K >= 0 con 0 < lambda <= 1.

    El radio no interviene: la condicion es homogenea en el nivel del conjunto.

    Returns:
        tuple: (es_invariante, margen = autovalor minimo)
    """
    P = np.asarray(P, dtype=float)
    A_K = np.asarray(A) + np.asarray(B) @ np.asarray(K)
    M = lam * P - A_K.T @ P @ A_K
    margen = float(np.min(np.linalg.eigvalsh(0.5 * (M + M.T))))
    es_invariante = 0.0 < lam <= 1.0 and r > 0 and margen >= -1e-10 * norma_inf(P)
    return bool(es_invariante), margen


def build_terminal_set(A, B, Q, R, constraints: PolytopeConstraints, x_r, u_r,
                       lambda_grid: Optional[Sequence[float]] = None) -> TerminalIngredients:
    """
    Ingredientes terminales de forma fija (P = T, c = x_r, r maximo).

    Raises:
        DegenerateConstraint: referencia en la frontera o sin filas utiles
        NoInvariantSet: ningun lambda de la rejilla certifica la invariancia
    """
    lambda_grid = config.rejilla_lambda if lambda_grid is None else lambda_grid
    if any(not (0.0 < l <= 1.0) for l in lambda_grid):
        raise InvalidProblem(f"La rejilla de lambda debe estar en (0, 1]: {list(lambda_grid)}")
    _cotas_desplazadas(constraints, x_r, u_r)

    K = riccati_lqr(A, B, Q, R)
    T = terminal_cost(A, B, K, Q, R)
    P = T
    r = max_admissible_radius(P, K, constraints, x_r, u_r)

    for lam in sorted(lambda_grid):
        es_invariante, margen = check_invariance(P, A, B, K, lam, r)
        if es_invariante:
            logger.info(f"Conjunto terminal: r={r:.6g}, lambda={lam}, margen={margen:.3e}")
            return TerminalIngredients(K=K, T=T, ell=Ellipsoid(P=P, c=x_r, r=r), lam=float(lam), margen=margen)
        logger.debug(f"lambda={lam}: margen {margen:.3e} insuficiente")

    raise NoInvariantSet(f"Ningun lambda de {list(lambda_grid)} certifica la invariancia")


def muestrear_frontera(ell: Ellipsoid, num: int, rng: np.random.Generator) -> np.ndarray:
    """num puntos de la frontera (x - c)^T P (x - c) = r^2."""
    direcciones = rng.standard_normal((num, ell.n))
    escala = np.sqrt(np.einsum('ij,jk,ik->i', direcciones, ell.P, direcciones))
    return ell.c + ell.r * direcciones / escala[:, None]


def verificar_por_muestreo(ing: TerminalIngredients, A, B, constraints: PolytopeConstraints, u_r,
                           num: int = 10000, rng: Optional[np.random.Generator] = None) -> Tuple[float, float]:
    """
    Simula un paso desde puntos de la frontera bajo la ley terminal.

    Returns:
        tuple: (maxima violacion de admisibilidad, maxima violacion de invariancia relativa a r^2)
    """
    rng = rng or np.random.default_rng(0)
    X = muestrear_frontera(ing.ell, num, rng)
    dX = X - ing.ell.c
    U = np.asarray(u_r, dtype=float) + dX @ ing.K.T
    viol_x = np.max(X @ constraints.C.T - constraints.c_vec, initial=-np.inf)
    viol_u = np.max(U @ constraints.D.T - constraints.d_vec, initial=-np.inf)
    admisibilidad = max(0.0, float(viol_x), float(viol_u))

    siguiente = dX @ (np.asarray(A) + np.asarray(B) @ ing.K).T
    valores = np.einsum('ij,jk,ik->i', siguiente, ing.ell.P, siguiente)
    invariancia = max(0.0, float(np.max(valores) - ing.ell.r ** 2) / ing.ell.r ** 2)
    return admisibilidad, invariancia
