"""Fixtures compartidas: generador de problemas aleatorios y caso de estudio."""

import numpy as np
import pytest

from Mod_Datos_Offline import build_offline
from Mod_Problema_MPC import Ellipsoid, MPCProblem, StageBounds
from Mod_Simulacion import closed_loop_simulate, construir_caso_estudio
from Mod_Solver_ADMM import SolverSettings

RHO_CASO = 15.0
PASOS_CASO = 50


def matriz_spd(rng, n, desplazamiento=1.0, escala=0.5):
    S = rng.standard_normal((n, n))
    return escala * S @ S.T / n + desplazamiento * np.eye(n)


def generar_problema(rng, n, m, N, diagonal=False, r=3.0, holgura_x=5.0, holgura_u=1.0):
    """
    Problema aleatorio estrictamente factible desde x_ref +- 0.3.

    A = 0.9 * ortogonal (no expansiva), referencia estacionaria con u_r
    aleatorio y elipsoide centrado en x_ref.
    """
    Q_orto, _ = np.linalg.qr(rng.standard_normal((n, n)))
    A = 0.9 * Q_orto
    B = rng.standard_normal((n, m))
    if diagonal:
        Q = np.diag(rng.uniform(0.5, 2.0, n))
        R = np.diag(rng.uniform(0.1, 1.0, m))
    else:
        Q = matriz_spd(rng, n)
        R = matriz_spd(rng, m, desplazamiento=0.2, escala=0.2)
    T = matriz_spd(rng, n)
    P = matriz_spd(rng, n)
    u_r = rng.uniform(-0.2, 0.2, m)
    x_r = np.linalg.solve(np.eye(n) - A, B @ u_r)
    bounds = StageBounds.uniforme(x_r - holgura_x, x_r + holgura_x, u_r - holgura_u, u_r + holgura_u, N)
    return MPCProblem(A=A, B=B, Q=Q, R=R, T=T, N=N, bounds=bounds,
                      terminal=Ellipsoid(P=P, c=x_r, r=r), x_ref=x_r, u_ref=u_r)


def estado_inicial(rng, problema, amplitud=0.3):
    return problema.x_ref + rng.uniform(-amplitud, amplitud, problema.n)


def problema_escalar(N=2):
    """n = m = 1, A = B = Q = R = T = P = 1."""
    bounds = StageBounds.uniforme([-10.0], [10.0], [-10.0], [10.0], N)
    return MPCProblem(A=[[1.0]], B=[[1.0]], Q=[[1.0]], R=[[1.0]], T=[[1.0]], N=N, bounds=bounds,
                      terminal=Ellipsoid(P=[[1.0]], c=[0.0], r=1.0), x_ref=[0.0], u_ref=[0.0])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def caso_estudio():
    """(planta, problema, ingredientes) del sistema de tres masas."""
    return construir_caso_estudio()


@pytest.fixture(scope="session")
def offline_caso(caso_estudio):
    _, problema, _ = caso_estudio
    return build_offline(problema, RHO_CASO)


@pytest.fixture(scope="session")
def log_caso(caso_estudio, offline_caso):
    """50 instantes de lazo cerrado desde el origen, arranque en frio."""
    planta, problema, _ = caso_estudio
    return closed_loop_simulate(problema, offline_caso, planta, np.zeros(6), PASOS_CASO,
                                SolverSettings(eps_p=1e-3, eps_d=1e-3, max_iter=4000))
