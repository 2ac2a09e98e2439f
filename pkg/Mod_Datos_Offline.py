"""
DATOS OFFLINE DEPENDIENTES DE RHO
=================================

Precalculo que consume el bucle ADMM en linea. Se construye una sola vez
por valor de rho y crece de forma lineal con el horizonte N:

    - inversas de los bloques diagonales de H_hat = H + rho diag(I_m, I_n, ..., I_m, P):
      (R + rho I)^-1, (Q + rho I)^-1 (un unico bloque compartido) y (T + rho P)^-1
    - factor bandado W_c de W = G H_hat^-1 G^T
    - P^{1/2}, P^{-1/2} y rho P
    - copias de A y B para los productos dispersos con G

G nunca se almacena: G z y G^T mu se calculan por filas de bloque a partir
de A y B. Tampoco se forma nunca una matriz densa de tamano (N n) x (N n).

La cache binaria opcional usa la cabecera

    b'ELMP' | version u32 | n u32 | m u32 | N u32 | flags u32

seguida de los bloques en float64 little-endian en el orden de los campos.

Autor: Sistema ElliMPC
Fecha: 2026-10-19
Version: 1.0
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from Mod_Algebra_Lineal import BlockTridiagCholesky, block_tridiag_cholesky, symmetric_sqrt
from Mod_Errores import InvalidProblem, OfflineCacheError
from Mod_Problema_MPC import MPCProblem

logger = logging.getLogger(__name__)

MAGIC_CACHE = b'ELMP'
VERSION_CACHE = 1
FLAG_DIAGONAL = 1


@dataclass(frozen=True, eq=False)
class OfflineData:
    """Precalculo inmutable; puede compartirse entre varias instancias del solver."""
    rho: float
    R_inv: np.ndarray
    Q_inv: np.ndarray
    T_inv: np.ndarray
    Wc: BlockTridiagCholesky
    P_half: np.ndarray
    P_invhalf: np.ndarray
    A: np.ndarray
    B: np.ndarray
    rhoP: np.ndarray
    # Hueco reservado para rho por bloque (todas las entradas iguales a rho)
    rho_bloques: np.ndarray
    # Diagonales de R_inv y Q_inv cuando Q y R son diagonales
    R_inv_diag: Optional[np.ndarray] = None
    Q_inv_diag: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def N(self) -> int:
        return self.Wc.N

    @property
    def diagonal(self) -> bool:
        return self.R_inv_diag is not None

    @property
    def n_o(self) -> int:
        return self.N * (self.n + self.m) - self.n

    def contar_floats(self) -> int:
        """Numero exacto de floats almacenados."""
        total = 1 + self.R_inv.size + self.Q_inv.size + self.T_inv.size + self.Wc.contar_floats()
        total += self.P_half.size + self.P_invhalf.size + self.A.size + self.B.size + self.rhoP.size
        total += self.rho_bloques.size
        if self.diagonal:
            total += self.R_inv_diag.size + self.Q_inv_diag.size
        return int(total)

    # ------------------------------------------------------------------
    # Productos dispersos
    # ------------------------------------------------------------------

    def dividir_z(self, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Separa z = (u_0, x_1, u_1, ..., x_{N-1}, u_{N-1}, x_N) en bloques.

        Returns:
            tuple: (X (N, n) con X[0] = 0 en lugar de x_0, U (N, m), x_N)
        """
        n, m, N = self.n, self.m, self.N
        filas = np.concatenate([np.zeros(n), z[:self.n_o]]).reshape(N, n + m)
        return filas[:, :n], filas[:, n:], z[self.n_o:]

    def unir_z(self, X: np.ndarray, U: np.ndarray, x_N: np.ndarray) -> np.ndarray:
        """Inversa de dividir_z (X[0] se descarta)."""
        return np.concatenate([np.hstack([X, U]).reshape(-1)[self.n:], x_N])

    def producto_G(self, z: np.ndarray) -> np.ndarray:
        """G z: fila 0 = B u_0 - x_1; fila i = A x_i + B u_i - x_{i+1}."""
        X, U, x_N = self.dividir_z(z)
        X_sig = np.vstack([X[1:], x_N])
        return (X @ self.A.T + U @ self.B.T - X_sig).reshape(-1)

    def producto_Gt(self, mu: np.ndarray) -> np.ndarray:
        """G^T mu: u_i <- B^T mu_i; x_i <- A^T mu_i - mu_{i-1}; x_N <- -mu_{N-1}."""
        M = mu.reshape(self.N, self.n)
        X = M @ self.A
        X[1:] -= M[:-1]
        return self.unir_z(X, M @ self.B, -M[-1])

    def producto_Hhat_inv(self, w: np.ndarray) -> np.ndarray:
        """H_hat^-1 w bloque a bloque (componente a componente si Q y R son diagonales)."""
        X, U, x_N = self.dividir_z(w)
        if self.diagonal:
            X_out, U_out = X * self.Q_inv_diag, U * self.R_inv_diag
        else:
            X_out, U_out = X @ self.Q_inv, U @ self.R_inv
        return self.unir_z(X_out, U_out, self.T_inv @ x_N)

    # ------------------------------------------------------------------
    # Cache binaria
    # ------------------------------------------------------------------

    def a_bytes(self) -> bytes:
        flags = FLAG_DIAGONAL if self.diagonal else 0
        cabecera = MAGIC_CACHE + np.array([VERSION_CACHE, self.n, self.m, self.N, flags], dtype='<u4').tobytes()
        bloques = [np.array([self.rho]), self.R_inv, self.Q_inv, self.T_inv, self.Wc.beta, self.Wc.alpha,
                   self.P_half, self.P_invhalf, self.A, self.B, self.rhoP, self.rho_bloques]
        if self.diagonal:
            bloques += [self.R_inv_diag, self.Q_inv_diag]
        payload = np.concatenate([np.asarray(b, dtype=float).reshape(-1) for b in bloques])
        return cabecera + payload.astype('<f8').tobytes()

    @classmethod
    def desde_bytes(cls, datos: bytes) -> 'OfflineData':
        if len(datos) < 24 or datos[:4] != MAGIC_CACHE:
            raise OfflineCacheError("Cabecera de cache invalida")
        version, n, m, N, flags = (int(v) for v in np.frombuffer(datos[4:24], dtype='<u4'))
        if version != VERSION_CACHE:
            raise OfflineCacheError(f"Version de cache {version} no soportada (se esperaba {VERSION_CACHE})")
        diagonal = bool(flags & FLAG_DIAGONAL)
        if n < 1 or m < 1 or N < 2:
            raise OfflineCacheError(f"Dimensiones invalidas en la cache: n={n}, m={m}, N={N}")
        esperados = formula_floats(n, m, N, diagonal)
        if len(datos) - 24 != 8 * esperados:
            raise OfflineCacheError(f"Tamano de cache {len(datos) - 24} bytes, se esperaban {8 * esperados}")

        payload = np.frombuffer(datos[24:], dtype='<f8').astype(float)
        formas = [(1,), (m, m), (n, n), (n, n), (N, n, n), (N - 1, n, n),
                  (n, n), (n, n), (n, n), (n, m), (n, n), (2 * N,)]
        if diagonal:
            formas += [(m,), (n,)]
        bloques, inicio = [], 0
        for forma in formas:
            tam = int(np.prod(forma))
            bloques.append(payload[inicio:inicio + tam].reshape(forma))
            inicio += tam

        return cls(
            rho=float(bloques[0][0]), R_inv=bloques[1], Q_inv=bloques[2], T_inv=bloques[3],
            Wc=BlockTridiagCholesky(beta=bloques[4], alpha=bloques[5]),
            P_half=bloques[6], P_invhalf=bloques[7], A=bloques[8], B=bloques[9], rhoP=bloques[10],
            rho_bloques=bloques[11],
            R_inv_diag=bloques[12] if diagonal else None,
            Q_inv_diag=bloques[13] if diagonal else None,
        )


def formula_floats(n: int, m: int, N: int, diagonal: bool = False) -> int:
    """Forma cerrada (afin en N) del numero de floats de OfflineData."""
    por_paso = 2 * n * n + 2                      # beta_i, alpha_i y dos entradas de rho_bloques
    fijo = 1 + m * m + 6 * n * n + n * m - n * n  # rho, inversas, P^{1/2}, P^{-1/2}, rhoP, A, B, menos un alpha
    if diagonal:
        fijo += n + m
    return por_paso * N + fijo


def bloques_W(A: np.ndarray, B: np.ndarray, R_inv: np.ndarray, Q_inv: np.ndarray, T_inv: np.ndarray,
              N: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Bloques no nulos de W = G H_hat^-1 G^T.

    diag_0 = B R^ B^T + Q^;  diag_i = A Q^ A^T + B R^ B^T + Q^;  en el ultimo
    bloque T^ sustituye al Q^ sumado. offdiag_i = -Q^ A^T.
    """
    n = A.shape[0]
    BRB = B @ R_inv @ B.T
    AQA = A @ Q_inv @ A.T
    diag = np.empty((N, n, n))
    for i in range(N):
        bloque = BRB + (Q_inv if i < N - 1 else T_inv)
        if i > 0:
            bloque = bloque + AQA
        diag[i] = 0.5 * (bloque + bloque.T)
    offdiag = np.repeat((-Q_inv @ A.T)[None, :, :], N - 1, axis=0)
    return diag, offdiag


def _es_diagonal(M: np.ndarray) -> bool:
    return bool(np.count_nonzero(M - np.diag(np.diag(M))) == 0)


def build_offline(problem: MPCProblem, rho: float, diagonal: Optional[bool] = None) -> OfflineData:
    """
    Precalculo dependiente de rho.

    Args:
        problem: Problema ya validado
        rho: Penalizacion ADMM (> 0)
        diagonal: None detecta Q, R diagonales; False desactiva el camino
            rapido; True lo exige (InvalidProblem si Q o R no son diagonales)

    Raises:
        NotPositiveDefinite: combinacion de costes y rho no valida (propagada)
    """
    if not (np.isfinite(rho) and rho > 0):
        raise InvalidProblem(f"rho debe ser positivo y finito, recibido {rho}")
    rho = float(rho)
    n, m, N = problem.n, problem.m, problem.N
    P = problem.terminal.P

    if diagonal is None:
        diagonal = problem.costes_diagonales
    elif diagonal and not problem.costes_diagonales:
        raise InvalidProblem("Se exigio el camino diagonal pero Q o R no son diagonales")

    if diagonal:
        R_inv_diag = 1.0 / (np.diag(problem.R) + rho)
        Q_inv_diag = 1.0 / (np.diag(problem.Q) + rho)
        R_inv, Q_inv = np.diag(R_inv_diag), np.diag(Q_inv_diag)
    else:
        R_inv_diag = Q_inv_diag = None
        R_inv = np.linalg.inv(problem.R + rho * np.eye(m))
        Q_inv = np.linalg.inv(problem.Q + rho * np.eye(n))
        R_inv, Q_inv = 0.5 * (R_inv + R_inv.T), 0.5 * (Q_inv + Q_inv.T)
    T_inv = np.linalg.inv(problem.T + rho * P)
    T_inv = 0.5 * (T_inv + T_inv.T)

    P_half, P_invhalf = symmetric_sqrt(P)
    diag, offdiag = bloques_W(problem.A, problem.B, R_inv, Q_inv, T_inv, N)
    Wc = block_tridiag_cholesky(diag, offdiag)

    offline = OfflineData(
        rho=rho, R_inv=R_inv, Q_inv=Q_inv, T_inv=T_inv, Wc=Wc,
        P_half=P_half, P_invhalf=P_invhalf,
        A=np.array(problem.A), B=np.array(problem.B), rhoP=rho * np.array(P),
        rho_bloques=np.full(2 * N, rho),
        R_inv_diag=R_inv_diag, Q_inv_diag=Q_inv_diag,
    )
    logger.info(f"Datos offline: N={N}, rho={rho:g}, diagonal={diagonal}, floats={offline.contar_floats()}")
    return offline


def guardar_cache(offline: OfflineData, filepath: Path) -> Path:
    filepath = Path(filepath)
    filepath.parent.mkdir(parents=True, exist_ok=True)
    filepath.write_bytes(offline.a_bytes())
    logger.info(f"Cache offline guardada en: {filepath}")
    return filepath


def cargar_cache(filepath: Path) -> OfflineData:
    try:
        datos = Path(filepath).read_bytes()
    except OSError as e:
        raise OfflineCacheError(f"No se pudo leer la cache: {e}") from e
    return OfflineData.desde_bytes(datos)
