import numpy as np
import pandas as pd
import pytest
import scipy.linalg
from numpy.testing import assert_allclose, assert_array_equal

from Mod_Datos_Offline import build_offline
from Mod_Errores import EmptyLog
from Mod_Problema_MPC import validate
from Mod_Simulacion import (
    ClosedLoopLog,
    PlantModel,
    RegistroPaso,
    build_three_mass_model,
    closed_loop_simulate,
    summarize_stats,
)
from Mod_Solver_ADMM import SolverSettings, admm_solve, kkt_residuals
from conftest import RHO_CASO, generar_problema


def _registro(t, iters, ms=1.0):
    return RegistroPaso(t=t, x=np.zeros(2), u=np.zeros(1), iterations=iters, r_p=0.0, r_d=0.0,
                        solve_ms=ms, terminal_active=False, status='converged')


# ----------------------------------------------------------------------------
# Modelo de tres masas
# ----------------------------------------------------------------------------

def test_tres_masas_dimensiones():
    planta, esqueleto = build_three_mass_model()
    assert planta.A.shape == (6, 6) and planta.B.shape == (6, 2)
    assert esqueleto.N == 10
    assert len(planta.etiquetas_estado) == 6
    assert_allclose(np.diag(esqueleto.Q), [15, 15, 15, 1, 1, 1])
    assert_allclose(esqueleto.bounds.u_hi[0], [0.8, 0.8])
    assert np.all(np.isinf(esqueleto.bounds.x_hi[:, 3:]))


def test_tres_masas_referencia_estacionaria():
    _, esqueleto = build_three_mass_model()
    x_r, u_r = esqueleto.x_ref, esqueleto.u_ref
    assert np.max(np.abs(esqueleto.A @ x_r + esqueleto.B @ u_r - x_r)) <= 1e-9


def test_tres_masas_discretizacion():
    planta, _ = build_three_mass_model(Ts=0.2)
    L = np.array([[-2.0, 1.0, 0.0], [1.0, -2.0, 1.0], [0.0, 1.0, -2.0]])
    A_c = np.zeros((6, 6))
    A_c[:3, 3:] = 10.0 * np.eye(3)
    A_c[3:, :3] = np.diag([1.0, 2.0, 1.0]) @ (0.2 * L)
    assert_allclose(planta.A, scipy.linalg.expm(0.2 * A_c), rtol=1e-10, atol=1e-12)

    # B_d = sum_k A_c^k Ts^(k+1) / (k+1)! B_c
    B_c = np.zeros((6, 2))
    B_c[3, 0] = B_c[5, 1] = 1.0
    B_d, termino = np.zeros((6, 2)), 0.2 * B_c
    for k in range(1, 40):
        B_d += termino
        termino = A_c @ termino * 0.2 / (k + 1)
    assert_allclose(planta.B, B_d, rtol=1e-10, atol=1e-12)


def test_caso_estudio_valido(caso_estudio):
    _, problema, ingredientes = caso_estudio
    assert validate(problema) == []
    assert_allclose(problema.T, ingredientes.T)


def test_propagacion_exacta(caso_estudio):
    planta, _, _ = caso_estudio
    x, u = np.arange(6.0), np.array([0.3, -0.1])
    assert_array_equal(planta.propagar(x, u), planta.A @ x + planta.B @ u)


# ----------------------------------------------------------------------------
# Lazo cerrado
# ----------------------------------------------------------------------------

def test_lazo_cerrado_en_equilibrio(rng):
    problema = generar_problema(rng, 2, 1, 4)
    planta = PlantModel(A=problema.A, B=problema.B)
    log = closed_loop_simulate(problema, build_offline(problema, 1.0), planta, problema.x_ref, 5,
                               SolverSettings(eps_p=1e-6, eps_d=1e-6))
    assert len(log) == 5
    assert np.max(np.abs(log.estados - problema.x_ref)) <= 1e-4
    assert np.max(np.abs(log.entradas - problema.u_ref)) <= 1e-4


def test_lazo_cerrado_determinista(caso_estudio, offline_caso):
    planta, problema, _ = caso_estudio
    a = closed_loop_simulate(problema, offline_caso, planta, np.zeros(6), 5)
    b = closed_loop_simulate(problema, offline_caso, planta, np.zeros(6), 5)
    assert_array_equal(a.estados, b.estados)
    assert_array_equal(a.iteraciones, b.iteraciones)


def test_lazo_cerrado_sin_pasos(caso_estudio, offline_caso):
    planta, problema, _ = caso_estudio
    log = closed_loop_simulate(problema, offline_caso, planta, np.zeros(6), 0)
    assert len(log) == 0
    assert log.to_dataframe().empty


@pytest.mark.lento
def test_caso_estudio_alcanza_la_referencia(caso_estudio, offline_caso, log_caso):
    planta, problema, _ = caso_estudio
    ultimo = log_caso.registros[-1]
    x_final = planta.propagar(ultimo.x, ultimo.u)
    assert np.max(np.abs(x_final - problema.x_ref)) <= 0.05


@pytest.mark.lento
def test_caso_estudio_respeta_restricciones(caso_estudio, log_caso):
    _, problema, _ = caso_estudio
    X, U = log_caso.estados, log_caso.entradas
    assert np.max(X[:, :3]) <= 3.0 + 1e-3
    assert np.max(np.abs(U)) <= 0.8 + 1e-3
    # la masa central se acerca a la pared
    assert np.max(X[:, 1]) >= 2.9
    violaciones = log_caso.violaciones_restricciones(problema)
    assert violaciones['estado'] <= 1e-3 and violaciones['entrada'] <= 1e-3


@pytest.mark.lento
def test_caso_estudio_iteraciones(log_caso):
    stats = summarize_stats(log_caso)
    assert 25 <= stats['iterations']['average'] <= 500
    assert stats['iterations']['max'] <= 1500
    assert all(r.status == 'converged' for r in log_caso.registros)


@pytest.mark.lento
def test_caso_estudio_restriccion_terminal_activa(log_caso):
    assert sum(r.terminal_active for r in log_caso.registros) >= 1


@pytest.mark.lento
def test_caso_estudio_certificado_kkt(caso_estudio, offline_caso, log_caso):
    _, problema, _ = caso_estudio
    settings = SolverSettings(eps_p=1e-3, eps_d=1e-3)
    for registro in log_caso.registros[::10]:
        resultado = admm_solve(problema, offline_caso, registro.x, settings)
        assert resultado.convergido
        informe = kkt_residuals(problema, resultado, registro.x, rho=RHO_CASO)
        assert informe.cumple(10 * 1e-3), informe.a_dict()
        assert informe.eq_residual <= 1e-8
        assert informe.box_violation <= 1e-9
        assert informe.ellipsoid_violation <= 1e-9


@pytest.mark.lento
def test_caso_estudio_tiempo_por_muestra(log_caso):
    # mediana de los tiempos por muestra
    assert summarize_stats(log_caso)['solve_ms']['median'] < 50.0


@pytest.mark.lento
def test_caso_estudio_keep_no_peor_que_cold(caso_estudio, offline_caso, log_caso):
    planta, problema, _ = caso_estudio
    caliente = closed_loop_simulate(problema, offline_caso, planta, np.zeros(6), len(log_caso),
                                    SolverSettings(warmstart='keep'))
    assert np.mean(caliente.iteraciones) <= np.mean(log_caso.iteraciones)


# ----------------------------------------------------------------------------
# Registro y estadisticos
# ----------------------------------------------------------------------------

def test_estadisticos_ejemplo():
    log = ClosedLoopLog([_registro(t, it) for t, it in enumerate([10, 40, 20, 30])])
    stats = summarize_stats(log)
    assert stats['iterations'] == {'average': 25.0, 'median': 20.0, 'max': 40.0, 'min': 10.0}


def test_estadisticos_impar():
    log = ClosedLoopLog([_registro(t, it, ms) for t, (it, ms) in enumerate([(5, 2.0), (1, 1.0), (3, 4.0)])])
    stats = summarize_stats(log)
    assert stats['iterations']['median'] == 3.0
    assert stats['solve_ms']['median'] == 2.0


def test_estadisticos_registro_vacio():
    with pytest.raises(EmptyLog):
        summarize_stats(ClosedLoopLog())


def test_csv_cabecera_y_precision(tmp_path):
    log = ClosedLoopLog([_registro(0, 3, ms=0.1), _registro(1, 4)])
    log.registros[0].x[:] = [1.0 / 3.0, -2.0]
    ruta = log.exportar_csv(tmp_path / "out" / "closed_loop.csv")
    df = pd.read_csv(ruta, float_precision='round_trip')
    assert list(df.columns) == ['t', 'x1', 'x2', 'u1', 'iters', 'rp', 'rd', 'solve_ms', 'terminal_active']
    assert df.loc[0, 'x1'] == 1.0 / 3.0
    assert df['iters'].tolist() == [3, 4]


def test_violaciones_sin_registros(caso_estudio):
    _, problema, _ = caso_estudio
    assert ClosedLoopLog().violaciones_restricciones(problema) == {'estado': 0.0, 'entrada': 0.0}
