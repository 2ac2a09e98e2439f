"""
MODULO DE ALGEBRA LINEAL DEL SISTEMA ELLIMPC
============================================

Nucleos matriciales densos de tamano pequeno y las factorizaciones
estructuradas de las que depende el solver:

    - cholesky: factor triangular superior U con U^T U = S (piso de pivote)
    - symmetric_sqrt: P^{1/2} y P^{-1/2} simetricas via descomposicion espectral
    - zoh_discretize: retencion de orden cero (expm de la matriz aumentada)
    - solve_discrete_lyapunov: ecuacion de Lyapunov discreta por duplicacion
    - riccati_lqr: ganancia LQR de horizonte infinito por punto fijo de Riccati
    - block_tridiag_cholesky / banded_solve: factor bandado W_c de W y sustitucion
      hacia delante y hacia atras bloque a bloque

Todas las funciones son puras (sin estado compartido).

Autor: Sistema ElliMPC
Fecha: 2026-10-19
Version: 1.0
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import expm, solve_triangular

from config import config
from Mod_Errores import InvalidProblem, NoConvergence, NotPositiveDefinite, NotStable

logger = logging.getLogger(__name__)


# ============================================================================
# UTILIDADES
# ============================================================================

def _como_matriz(X, nombre: str = "matriz") -> np.ndarray:
    """Convierte a ndarray float64 2D y comprueba que todos los valores sean finitos."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.ndim != 2:
        raise InvalidProblem(f"{nombre} debe ser bidimensional, recibido ndim={X.ndim}")
    if not np.all(np.isfinite(X)):
        raise InvalidProblem(f"{nombre} contiene valores no finitos")
    return X


def norma_inf(X) -> float:
    """Norma infinito (maxima suma absoluta por filas; maximo absoluto para vectores)."""
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        return 0.0
    if X.ndim == 1:
        return float(np.max(np.abs(X)))
    return float(np.linalg.norm(X, np.inf))


def es_simetrica(S: np.ndarray, tol: float = 1e-12) -> bool:
    return bool(np.max(np.abs(S - S.T), initial=0.0) <= tol * max(1.0, norma_inf(S)))


def spectral_radius(M) -> float:
    """Radio espectral (modulo maximo de los autovalores)."""
    M = _como_matriz(M, "M")
    return float(np.max(np.abs(np.linalg.eigvals(M)), initial=0.0))


# ============================================================================
# FACTORIZACIONES DENSAS
# ============================================================================

def cholesky(S, piso: Optional[float] = None) -> np.ndarray:
    """
    Factorizacion de Cholesky S = U^T U con U triangular superior.

    Args:
        S: Matriz simetrica definida positiva
        piso: Valor minimo admitido para cada pivote (por defecto config.piso_pivote)

    Returns:
        U triangular superior con diagonal estrictamente positiva

    Raises:
        NotPositiveDefinite: si S no es simetrica o algun pivote <= piso
    """
    piso = config.piso_pivote if piso is None else piso
    S = _como_matriz(S, "S")
    n = S.shape[0]
    if S.shape != (n, n):
        raise InvalidProblem(f"S debe ser cuadrada, recibido {S.shape}")
    if not es_simetrica(S):
        raise NotPositiveDefinite("La matriz no es simetrica")

    U = np.zeros_like(S)
    for j in range(n):
        pivote = S[j, j] - U[:j, j] @ U[:j, j]
        if pivote <= piso:
            raise NotPositiveDefinite(f"Pivote {pivote:.3e} <= {piso:.1e} en la columna {j}")
        U[j, j] = np.sqrt(pivote)
        if j + 1 < n:
            U[j, j + 1:] = (S[j, j + 1:] - U[:j, j] @ U[:j, j + 1:]) / U[j, j]
    return U


def symmetric_sqrt(P, piso: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Raiz cuadrada simetrica P^{1/2} y su inversa P^{-1/2} = P^{-1} P^{1/2}.

    Se usa la descomposicion espectral P = V diag(w) V^T, de modo que ambas
    matrices comparten autovectores con P y conmutan con ella.
    """
    piso = config.piso_autovalor if piso is None else piso
    P = _como_matriz(P, "P")
    if not es_simetrica(P):
        raise NotPositiveDefinite("P no es simetrica")

    w, V = np.linalg.eigh(0.5 * (P + P.T))
    if np.min(w) <= piso:
        raise NotPositiveDefinite(f"Autovalor minimo {np.min(w):.3e} <= {piso:.1e}")

    raiz = np.sqrt(w)
    P_half = (V * raiz) @ V.T
    P_invhalf = (V / raiz) @ V.T
    return 0.5 * (P_half + P_half.T), 0.5 * (P_invhalf + P_invhalf.T)


# ============================================================================
# DISCRETIZACION Y ECUACIONES DE CONTROL
# ============================================================================

def zoh_discretize(A_c, B_c, Ts: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Discretizacion por retencion de orden cero.

    exp([[A_c, B_c], [0, 0]] * Ts): el bloque superior izquierdo es A y el
    superior derecho es B.

    Args:
        A_c: Matriz de estado continua (n x n)
        B_c: Matriz de entrada continua (n x m)
        Ts: Periodo de muestreo en segundos

    Returns:
        tuple: (A, B) del modelo discreto
    """
    if not (np.isfinite(Ts) and Ts > 0):
        raise InvalidProblem(f"Ts debe ser positivo y finito, recibido {Ts}")
    A_c = _como_matriz(A_c, "A_c")
    B_c = _como_matriz(B_c, "B_c")
    n, m = A_c.shape[0], B_c.shape[1]
    if A_c.shape != (n, n) or B_c.shape[0] != n:
        raise InvalidProblem(f"Dimensiones incompatibles: A_c {A_c.shape}, B_c {B_c.shape}")

    M = np.zeros((n + m, n + m))
    M[:n, :n] = A_c * Ts
    M[:n, n:] = B_c * Ts

    E = expm(M)
    return E[:n, :n].copy(), E[:n, n:].copy()


def solve_discrete_lyapunov(A_K, M, max_duplicaciones: int = 128) -> np.ndarray:
    """
    Resuelve A_K^T T A_K - T + M = 0 por duplicacion.

    T acumula la serie sum_i (A_K^T)^i M A_K^i: en cada paso
    T <- T + (A_K^{2^j})^T T A_K^{2^j} y A_K <- A_K^2.

    Raises:
        NotStable: si el radio espectral de A_K no es < 1 - 1e-6
    """
    A_K = _como_matriz(A_K, "A_K")
    M = _como_matriz(M, "M")
    radio = spectral_radius(A_K)
    if radio >= 1.0 - 1e-6:
        raise NotStable(f"Radio espectral {radio:.6f} >= 1")

    T = 0.5 * (M + M.T)
    Ak = A_K.copy()
    for _ in range(max_duplicaciones):
        incremento = Ak.T @ T @ Ak
        T = T + incremento
        Ak = Ak @ Ak
        if norma_inf(incremento) < 1e-14 * max(1.0, norma_inf(T)):
            break
    else:
        raise NoConvergence("Lyapunov: la duplicacion no alcanzo la tolerancia")

    return 0.5 * (T + T.T)


def riccati_lqr(A, B, Q, R, max_iter: Optional[int] = None, tol: float = 1e-12) -> np.ndarray:
    """
    Ganancia LQR de horizonte infinito con la convencion u = K x.

    Itera la ecuacion de Riccati discreta desde P_0 = Q hasta que
    ||P_{k+1} - P_k||_inf < tol * max(1, ||P_{k+1}||_inf) y devuelve
    K = -(R + B^T P B)^{-1} B^T P A, de modo que A + B K es Schur estable.

    Raises:
        NoConvergence: si se agotan las iteraciones o P deja de ser finita
        NotStable: si A + B K no resulta Schur estable
    """
    max_iter = config.max_iter_riccati if max_iter is None else max_iter
    A = _como_matriz(A, "A")
    B = _como_matriz(B, "B")
    Q = _como_matriz(Q, "Q")
    R = _como_matriz(R, "R")

    P = 0.5 * (Q + Q.T)
    with np.errstate(over='ignore', invalid='ignore'):
        for iteracion in range(max_iter):
            BtP = B.T @ P
            BtPA = BtP @ A
            try:
                ganancia = np.linalg.solve(R + BtP @ B, BtPA)
            except np.linalg.LinAlgError as e:
                raise NoConvergence(f"Riccati: sistema singular en la iteracion {iteracion}: {e}")
            P_nueva = Q + A.T @ P @ A - BtPA.T @ ganancia
            P_nueva = 0.5 * (P_nueva + P_nueva.T)

            if not np.all(np.isfinite(P_nueva)):
                raise NoConvergence(f"Riccati: la iteracion diverge (iteracion {iteracion})")

            cambio = norma_inf(P_nueva - P)
            P = P_nueva
            if cambio < tol * max(1.0, norma_inf(P)):
                break
        else:
            raise NoConvergence(f"Riccati: sin convergencia en {max_iter} iteraciones")

    K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    radio = spectral_radius(A + B @ K)
    if radio >= 1.0:
        raise NotStable(f"A + BK con radio espectral {radio:.6f}")

    logger.debug(f"Riccati convergida en {iteracion + 1} iteraciones, radio espectral {radio:.4f}")
    return K


# ============================================================================
# FACTORIZACION BANDADA POR BLOQUES
# ============================================================================

@dataclass(frozen=True)
class BlockTridiagCholesky:
    """
    Factor W_c triangular superior bidiagonal por bloques con W = W_c^T W_c.

    beta: N bloques diagonales triangulares superiores (N, n, n)
    alpha: N-1 bloques superdiagonales densos (N-1, n, n)
    """
    beta: np.ndarray
    alpha: np.ndarray

    @property
    def N(self) -> int:
        return self.beta.shape[0]

    @property
    def n(self) -> int:
        return self.beta.shape[1]

    def contar_floats(self) -> int:
        return int(self.beta.size + self.alpha.size)

    def a_densa(self) -> np.ndarray:
        """Ensambla W_c como matriz densa (solo para comprobaciones)."""
        N, n = self.N, self.n
        Wc = np.zeros((N * n, N * n))
        for i in range(N):
            Wc[i * n:(i + 1) * n, i * n:(i + 1) * n] = self.beta[i]
            if i < N - 1:
                Wc[i * n:(i + 1) * n, (i + 1) * n:(i + 2) * n] = self.alpha[i]
        return Wc


@dataclass
class ContadorBloques:
    """Cuenta los pasos por fila de bloque de banded_solve."""
    pasos: int = 0


def ensamblar_tridiagonal(diag: Sequence[np.ndarray], offdiag: Sequence[np.ndarray]) -> np.ndarray:
    """Matriz densa simetrica a partir de sus bloques diagonales y superdiagonales."""
    diag = np.asarray(diag, dtype=float)
    offdiag = np.asarray(offdiag, dtype=float)
    N, n = diag.shape[0], diag.shape[1]
    W = np.zeros((N * n, N * n))
    for i in range(N):
        W[i * n:(i + 1) * n, i * n:(i + 1) * n] = diag[i]
        if i < N - 1:
            W[i * n:(i + 1) * n, (i + 1) * n:(i + 2) * n] = offdiag[i]
            W[(i + 1) * n:(i + 2) * n, i * n:(i + 1) * n] = offdiag[i].T
    return W


def block_tridiag_cholesky(diag: Sequence[np.ndarray], offdiag: Sequence[np.ndarray],
                           piso: Optional[float] = None) -> BlockTridiagCholesky:
    """
    Cholesky de una matriz simetrica tridiagonal por bloques.

    Args:
        diag: N bloques diagonales W_{i,i} (n x n)
        offdiag: N-1 bloques superdiagonales W_{i,i+1} (n x n)

    Returns:
        BlockTridiagCholesky con beta_i^T beta_i = W_{i,i} - alpha_{i-1}^T alpha_{i-1}
        y alpha_i = beta_i^{-T} W_{i,i+1}
    """
    diag = np.asarray(diag, dtype=float)
    offdiag = np.asarray(offdiag, dtype=float)
    if diag.ndim != 3 or diag.shape[1] != diag.shape[2]:
        raise InvalidProblem(f"diag debe tener forma (N, n, n), recibido {diag.shape}")
    N, n = diag.shape[0], diag.shape[1]
    if N > 1 and offdiag.shape != (N - 1, n, n):
        raise InvalidProblem(f"offdiag debe tener forma ({N - 1}, {n}, {n}), recibido {offdiag.shape}")

    beta = np.zeros((N, n, n))
    alpha = np.zeros((max(N - 1, 0), n, n))
    for i in range(N):
        bloque = diag[i] if i == 0 else diag[i] - alpha[i - 1].T @ alpha[i - 1]
        try:
            beta[i] = cholesky(0.5 * (bloque + bloque.T), piso)
        except NotPositiveDefinite as e:
            raise NotPositiveDefinite(f"Bloque {i}: {e}") from e
        if i < N - 1:
            alpha[i] = solve_triangular(beta[i], offdiag[i], trans='T', lower=False)

    return BlockTridiagCholesky(beta=beta, alpha=alpha)


def banded_solve(factor: BlockTridiagCholesky, rhs, contador: Optional[ContadorBloques] = None) -> np.ndarray:
    """
    Resuelve W mu = rhs con W = W_c^T W_c.

    Hacia delante: beta_i^T y_i = rhs_i - alpha_{i-1}^T y_{i-1}.
    Hacia atras:   beta_i mu_i = y_i - alpha_i mu_{i+1}.
    """
    N, n = factor.N, factor.n
    r = np.asarray(rhs, dtype=float).reshape(N, n)
    beta, alpha = factor.beta, factor.alpha

    y = np.empty((N, n))
    for i in range(N):
        b = r[i] if i == 0 else r[i] - alpha[i - 1].T @ y[i - 1]
        y[i] = solve_triangular(beta[i], b, trans='T', lower=False, check_finite=False)

    mu = np.empty((N, n))
    for i in range(N - 1, -1, -1):
        b = y[i] if i == N - 1 else y[i] - alpha[i] @ mu[i + 1]
        mu[i] = solve_triangular(beta[i], b, lower=False, check_finite=False)

    if contador is not None:
        contador.pasos += 2 * N
    return mu.reshape(N * n)
