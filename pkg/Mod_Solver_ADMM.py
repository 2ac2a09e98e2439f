"""
SOLVER ADMM DISPERSO PARA MPC CON RESTRICCION TERMINAL ELIPSOIDAL
=================================================================

Iteracion en linea del ADMM disperso:

    1. q_hat = q + (lam_o - rho v_o, P^{1/2} lam_f - rho P v_f)
    2. z     = argmin del QP con igualdades G z = b (paso z, factor bandado)
    3. v_o   = proyeccion en la caja de z_o + lam_o / rho
       v_f   = proyeccion P-ponderada en E(P, c, r) de z_f + rho^-1 P^{-1/2} lam_f
    4. lam_o += rho (z_o - v_o);  lam_f += rho P^{1/2} (z_f - v_f)
    5. salida si r_p <= eps_p y r_d <= eps_d (comprobado tras el paso dual)

Incluye ademas la version densa de la misma iteracion (oraculo de pruebas),
el informe KKT del QCQP y la clase SolverADMM para lazo cerrado con
arranque en caliente.

Autor: Sistema ElliMPC
Fecha: 2026-10-19
Version: 1.0
"""

import logging
import time
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.optimize import bisect

from config import config
from Mod_Algebra_Lineal import banded_solve, symmetric_sqrt
from Mod_Datos_Offline import OfflineData
from Mod_Errores import InvalidProblem
from Mod_Problema_MPC import Ellipsoid, MPCProblem

logger = logging.getLogger(__name__)

ESTADO_CONVERGIDO = 'converged'
ESTADO_MAX_ITER = 'max-iterations'
MODOS_WARMSTART = ('cold', 'keep', 'shift')


# ============================================================================
# TIPOS
# ============================================================================

@dataclass(frozen=True)
class SolverSettings:
    eps_p: float = 1e-3
    eps_d: float = 1e-3
    max_iter: int = 4000
    warmstart: str = 'cold'

    def __post_init__(self):
        if not (self.eps_p > 0 and self.eps_d > 0):
            raise InvalidProblem(f"Tolerancias deben ser > 0: eps_p={self.eps_p}, eps_d={self.eps_d}")
        if int(self.max_iter) < 1:
            raise InvalidProblem(f"max_iter debe ser >= 1, recibido {self.max_iter}")
        if self.warmstart not in MODOS_WARMSTART:
            raise InvalidProblem(f"Modo de arranque '{self.warmstart}' no valido: {MODOS_WARMSTART}")

    @classmethod
    def desde_config(cls, **cambios) -> 'SolverSettings':
        base = dict(eps_p=config.eps_p, eps_d=config.eps_d, max_iter=config.max_iter)
        base.update({k: v for k, v in cambios.items() if v is not None})
        return cls(**base)


@dataclass
class SolverState:
    """Iterados (z, v, lam) partidos en la parte de caja (_o) y la terminal (_f)."""
    z_o: np.ndarray
    z_f: np.ndarray
    v_o: np.ndarray
    v_f: np.ndarray
    lam_o: np.ndarray
    lam_f: np.ndarray
    k: int = 0

    @classmethod
    def cero(cls, n_o: int, n: int) -> 'SolverState':
        return cls(np.zeros(n_o), np.zeros(n), np.zeros(n_o), np.zeros(n), np.zeros(n_o), np.zeros(n))

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.z_o, self.z_f])

    @property
    def v(self) -> np.ndarray:
        return np.concatenate([self.v_o, self.v_f])

    @property
    def lam(self) -> np.ndarray:
        return np.concatenate([self.lam_o, self.lam_f])

    def copia(self) -> 'SolverState':
        return SolverState(self.z_o.copy(), self.z_f.copy(), self.v_o.copy(), self.v_f.copy(),
                           self.lam_o.copy(), self.lam_f.copy(), self.k)


@dataclass(frozen=True)
class Residuals:
    r_p: float
    r_d: float


@dataclass
class IteradoADMM:
    z: np.ndarray
    v: np.ndarray
    lam: np.ndarray


@dataclass
class SolverResult:
    z_tilde: np.ndarray
    v_tilde: np.ndarray
    lam_tilde: np.ndarray
    iterations: int
    residuals: Residuals
    status: str
    u_apply: np.ndarray
    estado: SolverState
    solve_ms: float = 0.0
    traza: Optional[List[IteradoADMM]] = None

    @property
    def convergido(self) -> bool:
        return self.status == ESTADO_CONVERGIDO

    def a_dict(self) -> Dict:
        return {
            'status': self.status,
            'iterations': self.iterations,
            'residuals': {'r_p': self.residuals.r_p, 'r_d': self.residuals.r_d},
            'u_apply': self.u_apply.tolist(),
            'solve_ms': self.solve_ms,
        }


# ============================================================================
# VECTORES DEL PROBLEMA
# ============================================================================

def vector_q(problem: MPCProblem, x_ref=None, u_ref=None) -> np.ndarray:
    """q = -(R u_r, Q x_r, R u_r, ..., Q x_r, R u_r, T x_r)."""
    x_r = problem.x_ref if x_ref is None else np.asarray(x_ref, dtype=float)
    u_r = problem.u_ref if u_ref is None else np.asarray(u_ref, dtype=float)
    fila = np.concatenate([problem.Q @ x_r, problem.R @ u_r])
    q_o = np.tile(fila, problem.N)[problem.n:]
    return -np.concatenate([q_o, problem.T @ x_r])


def vector_b(A: np.ndarray, x_t, N: int) -> np.ndarray:
    """b = (-A x(t), 0, ..., 0)."""
    b = np.zeros(N * A.shape[0])
    b[:A.shape[0]] = -A @ np.asarray(x_t, dtype=float)
    return b


# ============================================================================
# PASOS DEL ALGORITMO
# ============================================================================

def compute_qhat(state: SolverState, offline: OfflineData, q: np.ndarray) -> np.ndarray:
    n_o = offline.n_o
    q_hat = q.copy()
    q_hat[:n_o] += state.lam_o - offline.rho * state.v_o
    q_hat[n_o:] += offline.P_half @ state.lam_f - offline.rhoP @ state.v_f
    return q_hat


def z_update(q_hat: np.ndarray, offline: OfflineData, b: np.ndarray,
             devolver_mu: bool = False):
    """
    Paso z: QP con igualdades resuelto por el complemento de Schur.

    mu = W^-1 (-(G H_hat^-1 q_hat + b)) con el factor bandado y
    z = -H_hat^-1 (G^T mu + q_hat).
    """
    Hq = offline.producto_Hhat_inv(q_hat)
    mu = banded_solve(offline.Wc, -(offline.producto_G(Hq) + b))
    z = -offline.producto_Hhat_inv(offline.producto_Gt(mu) + q_hat)
    if devolver_mu:
        return z, mu
    return z


def project_box(w, lo, hi) -> np.ndarray:
    return np.maximum(np.minimum(w, hi), lo)


def project_ellipsoid_weighted(a, ell: Ellipsoid) -> np.ndarray:
    """Proyeccion en E(P, c, r) con la norma ||.||_P (forma cerrada por escalado radial)."""
    a = np.asarray(a, dtype=float)
    d = a - ell.c
    s = float(d @ ell.P @ d)
    if s <= ell.r ** 2:
        return a
    return ell.r * d / np.sqrt(s) + ell.c


def valor_dual_elipsoide(y: float, a, ell: Ellipsoid) -> float:
    """Funcion dual concava Psi(y) = y s / (1 + 2y) - r^2 y con s = (a-c)^T P (a-c)."""
    d = np.asarray(a, dtype=float) - ell.c
    s = float(d @ ell.P @ d)
    return y * s / (1.0 + 2.0 * y) - ell.r ** 2 * y


def project_ellipsoid_dual(a, ell: Ellipsoid) -> np.ndarray:
    """
    Misma proyeccion obtenida maximizando la dual escalar.

    Se localiza por biseccion el cero de Psi'(y) = s / (1 + 2y)^2 - r^2 y se
    recupera v = (a - c) / (1 + 2y*) + c.
    """
    a = np.asarray(a, dtype=float)
    d = a - ell.c
    s = float(d @ ell.P @ d)
    r2 = ell.r ** 2
    if s <= r2:
        return a

    def derivada(y):
        return s / (1.0 + 2.0 * y) ** 2 - r2

    # derivada(0) > 0 y derivada(sqrt(s)/r) < 0
    y_opt = bisect(derivada, 0.0, np.sqrt(s) / ell.r, xtol=1e-30, rtol=4 * np.finfo(float).eps, maxiter=500)
    return d / (1.0 + 2.0 * y_opt) + ell.c


def v_update(z_o: np.ndarray, z_f: np.ndarray, lam_o: np.ndarray, lam_f: np.ndarray, offline: OfflineData,
             v_lo: np.ndarray, v_hi: np.ndarray, ell: Ellipsoid) -> Tuple[np.ndarray, np.ndarray]:
    v_o = project_box(z_o + lam_o / offline.rho, v_lo, v_hi)
    v_f = project_ellipsoid_weighted(z_f + offline.P_invhalf @ lam_f / offline.rho, ell)
    return v_o, v_f


def dual_update(state: SolverState, z_o, z_f, v_o, v_f, offline: OfflineData) -> Tuple[np.ndarray, np.ndarray]:
    lam_o = state.lam_o + offline.rho * (z_o - v_o)
    lam_f = state.lam_f + offline.rho * (offline.P_half @ (z_f - v_f))
    return lam_o, lam_f


def compute_residuals(state: SolverState, z_anterior: np.ndarray, offline: OfflineData) -> Residuals:
    """r_p = ||C z + D v||_inf por bloques; r_d = ||z^k - z^{k-1}||_inf."""
    r_p = max(np.max(np.abs(state.z_o - state.v_o), initial=0.0),
              np.max(np.abs(offline.P_half @ (state.z_f - state.v_f)), initial=0.0))
    r_d = np.max(np.abs(state.z - z_anterior), initial=0.0)
    return Residuals(float(r_p), float(r_d))


# ============================================================================
# BUCLE PRINCIPAL
# ============================================================================

def _traza_habilitada() -> bool:
    return logger.isEnabledFor(logging.DEBUG)


def _resultado(state: SolverState, residuos: Residuals, estado: str, m: int, inicio: float,
               traza: Optional[List[IteradoADMM]]) -> SolverResult:
    return SolverResult(
        z_tilde=state.z, v_tilde=state.v, lam_tilde=state.lam,
        iterations=state.k, residuals=residuos, status=estado,
        u_apply=state.v_o[:m].copy(), estado=state,
        solve_ms=(time.perf_counter() - inicio) * 1000.0, traza=traza,
    )


def admm_solve(problem: MPCProblem, offline: OfflineData, x_t, settings: Optional[SolverSettings] = None,
               warmstart: Optional[SolverState] = None, x_ref=None, u_ref=None, c=None, r: Optional[float] = None,
               registrar_traza: bool = False) -> SolverResult:
    """
    Resuelve el problema MPC para el estado actual x_t.

    Args:
        problem: Problema validado (misma estructura que la usada en build_offline)
        offline: Datos offline para el rho elegido
        x_t: Estado actual
        settings: Tolerancias y limite de iteraciones
        warmstart: Estado inicial (v, lam y z previo); None equivale a arranque en frio
        x_ref, u_ref, c, r: Cambios en linea de referencia y elipsoide (sin reconstruir offline)
        registrar_traza: Guarda la secuencia completa de iterados en result.traza

    Returns:
        SolverResult; si se agota max_iter el estado es 'max-iterations' (no se lanza excepcion)
    """
    settings = settings or SolverSettings.desde_config()
    inicio = time.perf_counter()
    x_t = np.asarray(x_t, dtype=float)
    if x_t.shape != (problem.n,) or not np.all(np.isfinite(x_t)):
        raise InvalidProblem(f"x_t debe ser un vector finito de longitud {problem.n}")

    q = vector_q(problem, x_ref, u_ref)
    b = vector_b(offline.A, x_t, offline.N)
    ell = Ellipsoid(
        P=problem.terminal.P,
        c=problem.terminal.c if c is None else c,
        r=problem.terminal.r if r is None else r,
    )
    v_lo, v_hi = problem.bounds.v_lo, problem.bounds.v_hi

    state = warmstart.copia() if warmstart is not None else SolverState.cero(offline.n_o, offline.n)
    state.k = 0
    traza = [] if registrar_traza else None
    trazar = _traza_habilitada()
    z_anterior = state.z
    residuos = Residuals(np.inf, np.inf)

    for k in range(1, settings.max_iter + 1):
        z = z_update(compute_qhat(state, offline, q), offline, b)
        z_o, z_f = z[:offline.n_o], z[offline.n_o:]
        v_o, v_f = v_update(z_o, z_f, state.lam_o, state.lam_f, offline, v_lo, v_hi, ell)
        lam_o, lam_f = dual_update(state, z_o, z_f, v_o, v_f, offline)
        state = SolverState(z_o, z_f, v_o, v_f, lam_o, lam_f, k)

        residuos = compute_residuals(state, z_anterior, offline)
        z_anterior = z
        if traza is not None:
            traza.append(IteradoADMM(state.z, state.v, state.lam))
        if trazar:
            logger.debug(f"k={k:5d}  r_p={residuos.r_p:.3e}  r_d={residuos.r_d:.3e}")

        if residuos.r_p <= settings.eps_p and residuos.r_d <= settings.eps_d:
            return _resultado(state, residuos, ESTADO_CONVERGIDO, problem.m, inicio, traza)

    logger.warning(f"ADMM sin converger en {settings.max_iter} iteraciones "
                   f"(r_p={residuos.r_p:.3e}, r_d={residuos.r_d:.3e})")
    return _resultado(state, residuos, ESTADO_MAX_ITER, problem.m, inicio, traza)


# ============================================================================
# VERSION DENSA (ORACULO)
# ============================================================================

@dataclass
class MatricesDensas:
    """G, H, H_hat, C, D densas para instancias pequenas."""
    G: np.ndarray
    H: np.ndarray
    Hhat: np.ndarray
    C: np.ndarray
    D: np.ndarray
    P_half: np.ndarray


def ensamblar_densas(problem: MPCProblem, rho: float) -> MatricesDensas:
    n, m, N = problem.n, problem.m, problem.N
    n_o, n_z = problem.n_o, problem.n_z

    def pos_u(i):
        return i * (n + m)

    def pos_x(i):
        return i * (n + m) - n

    G = np.zeros((N * n, n_z))
    H = np.zeros((n_z, n_z))
    for i in range(N):
        filas = slice(i * n, (i + 1) * n)
        G[filas, pos_u(i):pos_u(i) + m] = problem.B
        if i > 0:
            G[filas, pos_x(i):pos_x(i) + n] = problem.A
        G[filas, pos_x(i + 1):pos_x(i + 1) + n] = -np.eye(n)
        H[pos_u(i):pos_u(i) + m, pos_u(i):pos_u(i) + m] = problem.R
        if i > 0:
            H[pos_x(i):pos_x(i) + n, pos_x(i):pos_x(i) + n] = problem.Q
    H[n_o:, n_o:] = problem.T

    P_half, _ = symmetric_sqrt(problem.terminal.P)
    C = np.zeros((n_z, n_z))
    C[:n_o, :n_o] = np.eye(n_o)
    C[n_o:, n_o:] = P_half
    Hhat = H + rho * C.T @ C
    return MatricesDensas(G=G, H=H, Hhat=Hhat, C=C, D=-C, P_half=P_half)


def dense_reference_solve(problem: MPCProblem, x_t, settings: Optional[SolverSettings] = None,
                          rho: Optional[float] = None, warmstart: Optional[SolverState] = None,
                          registrar_traza: bool = False) -> SolverResult:
    """
    La misma iteracion ADMM con C, D, H_hat y W densas, sin explotar estructura.

    Solo para instancias pequenas; sirve de oraculo para admm_solve.
    """
    settings = settings or SolverSettings.desde_config()
    rho = config.rho if rho is None else float(rho)
    inicio = time.perf_counter()
    n, m, N, n_o = problem.n, problem.m, problem.N, problem.n_o
    d = ensamblar_densas(problem, rho)
    Hhat_inv = np.linalg.inv(d.Hhat)
    W = d.G @ Hhat_inv @ d.G.T

    q = vector_q(problem)
    b = vector_b(problem.A, x_t, N)
    ell = problem.terminal
    v_lo, v_hi = problem.bounds.v_lo, problem.bounds.v_hi

    state = warmstart.copia() if warmstart is not None else SolverState.cero(n_o, n)
    z_prev, v, lam = state.z, state.v, state.lam
    traza = [] if registrar_traza else None
    residuos = Residuals(np.inf, np.inf)
    estado = ESTADO_MAX_ITER

    for k in range(1, settings.max_iter + 1):
        q_hat = q + rho * d.C.T @ d.D @ v + d.C.T @ lam
        mu = np.linalg.solve(W, -(d.G @ Hhat_inv @ q_hat + b))
        z = -Hhat_inv @ (q_hat + d.G.T @ mu)

        w = z + np.linalg.solve(d.C, lam) / rho
        v = np.concatenate([project_box(w[:n_o], v_lo, v_hi), project_ellipsoid_weighted(w[n_o:], ell)])
        lam = lam + rho * (d.C @ z + d.D @ v)

        residuos = Residuals(float(np.max(np.abs(d.C @ z + d.D @ v))), float(np.max(np.abs(z - z_prev))))
        z_prev = z
        if traza is not None:
            traza.append(IteradoADMM(z.copy(), v.copy(), lam.copy()))
        state = SolverState(z[:n_o], z[n_o:], v[:n_o], v[n_o:], lam[:n_o], lam[n_o:], k)
        if residuos.r_p <= settings.eps_p and residuos.r_d <= settings.eps_d:
            estado = ESTADO_CONVERGIDO
            break

    return _resultado(state, residuos, estado, m, inicio, traza)


# ============================================================================
# CERTIFICADO KKT
# ============================================================================

@dataclass
class InformeKKT:
    eq_residual: float
    box_violation: float
    ellipsoid_violation: float
    coupling_gap: float
    stationarity_z: float
    stationarity_v: float
    complementarity: float

    def maximo(self) -> float:
        """Mayor medida; NaN si alguna medida es NaN."""
        valores = np.array(list(self.a_dict().values()))
        if np.isnan(valores).any():
            return float('nan')
        return float(np.max(valores))

    def cumple(self, umbral: float) -> bool:
        # NaN <= umbral es False
        return bool(self.maximo() <= umbral)

    def a_dict(self) -> Dict[str, float]:
        return {k: float(v) for k, v in self.__dict__.items()}


def kkt_residuals(problem: MPCProblem, result: SolverResult, x_t, rho: Optional[float] = None) -> InformeKKT:
    """
    Medidas de optimalidad del QCQP en (z, v, lam).

    La estacionariedad en z se expresa relativa a max(1, ||Hz||, ||q||, ||C^T lam||)
    con mu obtenido por minimos cuadrados. La estacionariedad en v comprueba que
    C^T lam pertenezca al cono normal del conjunto: signo de lam_o en las cotas
    activas, lam_o = 0 en el interior y P^{1/2} lam_f alineado con P (v_f - c).
    """
    rho = config.rho if rho is None else rho
    n_o = problem.n_o
    d = ensamblar_densas(problem, rho)
    z, v, lam = result.z_tilde, result.v_tilde, result.lam_tilde
    q = vector_q(problem)
    b = vector_b(problem.A, x_t, problem.N)
    v_lo, v_hi = problem.bounds.v_lo, problem.bounds.v_hi
    ell = problem.terminal

    eq_residual = float(np.max(np.abs(d.G @ z - b)))
    v_o, v_f = v[:n_o], v[n_o:]
    box_violation = float(max(np.max(v_lo - v_o, initial=0.0), np.max(v_o - v_hi, initial=0.0), 0.0))
    valor = ell.valor(v_f)
    ellipsoid_violation = max(0.0, float(np.sqrt(valor) - ell.r))
    coupling_gap = float(np.max(np.abs(d.C @ z + d.D @ v)))

    Hz, Ctl = d.H @ z, d.C.T @ lam
    resto = Hz + q + Ctl
    mu = np.linalg.lstsq(d.G.T, -resto, rcond=None)[0]
    escala = max(1.0, np.max(np.abs(Hz)), np.max(np.abs(q)), np.max(np.abs(Ctl)))
    stationarity_z = float(np.max(np.abs(resto + d.G.T @ mu)) / escala)

    lam_o, g = lam[:n_o], d.P_half @ lam[n_o:]
    en_hi, en_lo = v_o >= v_hi, v_o <= v_lo
    interior = ~(en_hi | en_lo)
    error_caja = np.concatenate([np.abs(lam_o[interior]), np.maximum(0.0, -lam_o[en_hi]),
                                 np.maximum(0.0, lam_o[en_lo])])
    normal = ell.P @ (v_f - ell.c)
    en_frontera = valor >= ell.r ** 2 * (1.0 - 1e-9)
    if en_frontera and np.any(normal):
        y = max(0.0, float(g @ normal) / float(normal @ normal))
        error_elipsoide = np.max(np.abs(g - y * normal)) / max(1.0, np.max(np.abs(g)))
    else:
        y = 0.0
        error_elipsoide = np.max(np.abs(g), initial=0.0)
    stationarity_v = float(max(np.max(error_caja, initial=0.0), error_elipsoide))

    # las cotas infinitas no aportan (0 * inf)
    holgura = np.minimum(v_o - v_lo, v_hi - v_o)
    finita = np.isfinite(holgura)
    producto = np.abs(lam_o[finita]) * np.maximum(holgura[finita], 0.0)
    complementarity = float(max(np.max(producto, initial=0.0),
                                y * abs(valor - ell.r ** 2) / max(1.0, ell.r ** 2)))

    return InformeKKT(eq_residual, box_violation, ellipsoid_violation, coupling_gap,
                      stationarity_z, stationarity_v, complementarity)


# ============================================================================
# ARRANQUE EN CALIENTE Y SOLVER CON ESTADO
# ============================================================================

def _desplazar(offline: OfflineData, w: np.ndarray) -> np.ndarray:
    """Desplaza un vector (u_0, x_1, ..., x_N) una etapa y repite la ultima."""
    X, U, x_N = offline.dividir_z(w)
    X_n, U_n = X.copy(), U.copy()
    X_n[1:-1] = X[2:]
    X_n[-1] = x_N
    U_n[:-1] = U[1:]
    return offline.unir_z(X_n, U_n, x_N.copy())


def preparar_warmstart(anterior: Optional[SolverState], modo: str, offline: OfflineData) -> Optional[SolverState]:
    """
    Estado inicial del siguiente instante.

    cold: None (v = 0, lam = 0); keep: mismo estado; shift: desplazado una etapa.
    En shift el multiplicador de x_{N-1} pasa a ser P^{1/2} lam_f (sin escalar).
    """
    if modo == 'cold' or anterior is None:
        return None
    if modo == 'keep':
        return replace(anterior.copia(), k=0)

    n_o = offline.n_o
    z = _desplazar(offline, anterior.z)
    v = _desplazar(offline, anterior.v)
    lam = _desplazar(offline, np.concatenate([anterior.lam_o, offline.P_half @ anterior.lam_f]))
    return SolverState(z[:n_o], z[n_o:], v[:n_o], v[n_o:], lam[:n_o], anterior.lam_f.copy(), 0)


class SolverADMM:
    """
    Solver con estado para lazo cerrado.

    Varias instancias pueden compartir el mismo OfflineData; cada instancia
    guarda su ultimo resultado y lo usa como arranque del siguiente instante.
    """

    def __init__(self, problem: MPCProblem, offline: OfflineData, settings: Optional[SolverSettings] = None):
        if offline.N != problem.N or offline.n != problem.n or offline.m != problem.m:
            raise InvalidProblem("OfflineData no corresponde a las dimensiones del problema")
        self.problem = problem
        self.offline = offline
        self.settings = settings or SolverSettings.desde_config()
        self.ultimo: Optional[SolverResult] = None

    def reiniciar(self):
        self.ultimo = None

    def resolver(self, x_t, **cambios) -> SolverResult:
        anterior = self.ultimo.estado if self.ultimo is not None else None
        inicial = preparar_warmstart(anterior, self.settings.warmstart, self.offline)
        self.ultimo = admm_solve(self.problem, self.offline, x_t, self.settings, warmstart=inicial, **cambios)
        return self.ultimo
