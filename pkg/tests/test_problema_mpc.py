import json

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from Mod_Datos_Offline import build_offline
from Mod_Errores import InvalidProblem
from Mod_Problema_MPC import (
    Ellipsoid,
    MPCProblem,
    ProblemSkeleton,
    StageBounds,
    cargar_problema,
    guardar_problema,
    problema_a_dict,
    problema_desde_dict,
    validate,
)
from Mod_Solver_ADMM import SolverSettings, admm_solve
from conftest import estado_inicial, generar_problema, problema_escalar


def _con_cotas(problema, **cambios):
    b = problema.bounds
    datos = dict(x_lo=b.x_lo, x_hi=b.x_hi, u_lo=b.u_lo, u_hi=b.u_hi)
    datos.update(cambios)
    return MPCProblem(A=problema.A, B=problema.B, Q=problema.Q, R=problema.R, T=problema.T, N=problema.N,
                      bounds=StageBounds(**datos), terminal=problema.terminal,
                      x_ref=problema.x_ref, u_ref=problema.u_ref)


def test_orden_de_v_o():
    bounds = StageBounds(x_lo=[[10.0], [20.0]], x_hi=[[11.0], [21.0]],
                         u_lo=[[0.0], [1.0], [2.0]], u_hi=[[0.5], [1.5], [2.5]])
    assert_array_equal(bounds.v_lo, [0.0, 10.0, 1.0, 20.0, 2.0])
    assert_array_equal(bounds.v_hi, [0.5, 11.0, 1.5, 21.0, 2.5])


def test_dimensiones_derivadas(rng):
    p = generar_problema(rng, 4, 2, 5)
    assert (p.n, p.m, p.N) == (4, 2, 5)
    assert p.n_o == 5 * 6 - 4
    assert p.n_z == 30


def test_problema_valido_sin_violaciones(rng):
    assert validate(generar_problema(rng, 3, 2, 4)) == []


def test_cotas_iguales_indican_el_paso(rng):
    p = generar_problema(rng, 2, 1, 5)
    x_lo = p.bounds.x_lo.copy()
    x_lo[2] = p.bounds.x_hi[2]
    violaciones = validate(_con_cotas(p, x_lo=x_lo))
    assert len(violaciones) == 1
    assert violaciones[0].campo == 'x_bounds'
    assert violaciones[0].indice == 3


def test_cotas_de_entrada_invertidas(rng):
    p = generar_problema(rng, 2, 1, 3)
    u_lo = p.bounds.u_lo.copy()
    u_lo[0] = p.bounds.u_hi[0] + 1.0
    violaciones = validate(_con_cotas(p, u_lo=u_lo))
    assert [(v.campo, v.indice) for v in violaciones] == [('u_bounds', 0)]


def test_referencia_no_estacionaria(rng):
    p = generar_problema(rng, 3, 1, 3)
    mal = MPCProblem(A=p.A, B=p.B, Q=p.Q, R=p.R, T=p.T, N=p.N, bounds=p.bounds, terminal=p.terminal,
                     x_ref=p.x_ref + 0.1, u_ref=p.u_ref)
    assert any(v.campo == 'referencia' for v in validate(mal))


def test_P_no_definida_y_radio_no_positivo():
    p = problema_escalar()
    mal = MPCProblem(A=p.A, B=p.B, Q=p.Q, R=p.R, T=p.T, N=p.N, bounds=p.bounds,
                     terminal=Ellipsoid(P=[[0.0]], c=[0.0], r=0.0), x_ref=p.x_ref, u_ref=p.u_ref)
    campos = {v.campo for v in validate(mal)}
    assert {'P', 'r'} <= campos


def test_Q_no_semidefinida():
    p = problema_escalar()
    mal = MPCProblem(A=p.A, B=p.B, Q=[[-1.0]], R=p.R, T=p.T, N=p.N, bounds=p.bounds, terminal=p.terminal,
                     x_ref=p.x_ref, u_ref=p.u_ref)
    assert [v.campo for v in validate(mal)] == ['Q']


def test_dimensiones_incorrectas():
    p = problema_escalar()
    mal = MPCProblem(A=p.A, B=[[1.0, 0.0]], Q=p.Q, R=p.R, T=p.T, N=p.N, bounds=p.bounds, terminal=p.terminal,
                     x_ref=p.x_ref, u_ref=p.u_ref)
    campos = {v.campo for v in validate(mal)}
    assert 'R' in campos and 'u_ref' in campos


def test_horizonte_minimo():
    p = problema_escalar()
    assert any(v.campo == 'N' for v in validate(p.con_horizonte(1)))


def test_datos_inmutables(rng):
    p = generar_problema(rng, 2, 1, 3)
    with pytest.raises(ValueError):
        p.A[0, 0] = 5.0
    with pytest.raises(ValueError):
        p.bounds.x_lo[0, 0] = 5.0


def test_costes_diagonales(rng):
    assert generar_problema(rng, 3, 2, 3, diagonal=True).costes_diagonales
    assert not generar_problema(rng, 3, 2, 3, diagonal=False).costes_diagonales


def test_con_horizonte(rng):
    p = generar_problema(rng, 2, 1, 4)
    q = p.con_horizonte(8)
    assert q.N == 8 and q.bounds.x_lo.shape == (7, 2) and q.bounds.u_lo.shape == (8, 1)
    assert validate(q) == []


def test_esqueleto_con_terminal(rng):
    p = generar_problema(rng, 2, 1, 3)
    esqueleto = ProblemSkeleton(A=p.A, B=p.B, Q=p.Q, R=p.R, N=p.N, bounds=p.bounds, x_ref=p.x_ref, u_ref=p.u_ref)
    completo = esqueleto.con_terminal(p.T, p.terminal)
    assert validate(completo) == []


def test_ellipsoid():
    ell = Ellipsoid(P=np.diag([4.0, 1.0]), c=[0.0, 0.0], r=2.0)
    assert ell.valor([1.0, 0.0]) == pytest.approx(4.0)
    assert ell.contiene([1.0, 0.0])
    assert not ell.contiene([1.1, 0.0])


def test_dict_ida_y_vuelta(rng):
    p = generar_problema(rng, 3, 2, 4)
    x_hi = p.bounds.x_hi.copy()
    x_hi[1] += 1.0
    p = _con_cotas(p, x_hi=x_hi)
    q = problema_desde_dict(json.loads(json.dumps(problema_a_dict(p))))
    for nombre in ('A', 'B', 'Q', 'R', 'T', 'x_ref', 'u_ref'):
        assert_array_equal(getattr(q, nombre), getattr(p, nombre))
    assert_array_equal(q.bounds.x_hi, p.bounds.x_hi)
    assert_array_equal(q.terminal.P, p.terminal.P)
    assert q.terminal.r == p.terminal.r


def test_cotas_un_vector_o_una_por_paso():
    datos = problema_a_dict(problema_escalar(N=3))
    datos['u_lo'] = [[-1.0], [-2.0], [-3.0]]
    p = problema_desde_dict(datos)
    assert_allclose(p.bounds.u_lo[:, 0], [-1.0, -2.0, -3.0])
    assert_allclose(p.bounds.x_lo[:, 0], [-10.0, -10.0])

    datos['u_lo'] = [[-1.0], [-2.0]]
    with pytest.raises(InvalidProblem):
        problema_desde_dict(datos)


def test_N_no_entero():
    datos = problema_a_dict(problema_escalar())
    datos['N'] = 2.5
    with pytest.raises(InvalidProblem):
        problema_desde_dict(datos)


def test_esqueleto_desde_dict():
    datos = problema_a_dict(problema_escalar())
    for clave in ('T', 'P', 'c', 'r'):
        datos.pop(clave)
    assert isinstance(problema_desde_dict(datos, requiere_terminal=False), ProblemSkeleton)


def test_guardar_y_cargar(tmp_path, rng):
    p = generar_problema(rng, 2, 1, 3)
    ruta = guardar_problema(p, tmp_path / "sub" / "problema.json")
    q = cargar_problema(ruta)
    assert_array_equal(q.A, p.A)
    assert validate(q) == []


def test_cargar_json_malformado(tmp_path):
    ruta = tmp_path / "roto.json"
    ruta.write_text("{ no es json", encoding="utf-8")
    with pytest.raises(InvalidProblem):
        cargar_problema(ruta)


def test_cargar_faltan_claves(tmp_path):
    ruta = tmp_path / "incompleto.json"
    ruta.write_text(json.dumps({'A': [[1.0]]}), encoding="utf-8")
    with pytest.raises(InvalidProblem, match="Claves faltantes"):
        cargar_problema(ruta)


def test_cargar_extension_no_soportada(tmp_path):
    ruta = tmp_path / "problema.txt"
    ruta.write_text("{}", encoding="utf-8")
    with pytest.raises(InvalidProblem):
        cargar_problema(ruta)


def test_validate_sin_efectos_y_repetible(rng):
    p = generar_problema(rng, 3, 2, 4)
    x_lo = p.bounds.x_lo.copy()
    x_lo[1] = p.bounds.x_hi[1]
    mal = MPCProblem(A=p.A, B=p.B, Q=p.Q, R=p.R, T=p.T, N=p.N, bounds=StageBounds(
        x_lo=x_lo, x_hi=p.bounds.x_hi, u_lo=p.bounds.u_lo, u_hi=p.bounds.u_hi),
        terminal=p.terminal, x_ref=p.x_ref + 0.1, u_ref=p.u_ref)
    for problema in (p, mal):
        antes = problema_a_dict(problema)
        primera = validate(problema)
        assert validate(problema) == primera
        assert problema_a_dict(problema) == antes
    assert validate(p) == []
    assert {v.campo for v in validate(mal)} == {'x_bounds', 'referencia'}


def test_problemas_validos_se_resuelven_sin_errores_de_forma():
    rng = np.random.default_rng(200)
    ajustes = SolverSettings(max_iter=30)
    for _ in range(200):
        n, m, N = int(rng.integers(1, 6)), int(rng.integers(1, 4)), int(rng.integers(2, 9))
        base = generar_problema(rng, n, m, N, diagonal=bool(rng.integers(2)))
        x_hi = base.x_ref + rng.uniform(0.5, 5.0, (N - 1, n))
        x_lo = base.x_ref - rng.uniform(0.5, 5.0, (N - 1, n))
        if rng.integers(2):
            x_hi[:, 0], x_lo[:, 0] = np.inf, -np.inf
        bounds = StageBounds(x_lo=x_lo, x_hi=x_hi,
                             u_lo=base.u_ref - rng.uniform(0.1, 2.0, (N, m)),
                             u_hi=base.u_ref + rng.uniform(0.1, 2.0, (N, m)))
        Q = np.zeros((n, n)) if rng.integers(4) == 0 else base.Q
        p = MPCProblem(A=base.A, B=base.B, Q=Q, R=base.R, T=base.T, N=N, bounds=bounds,
                       terminal=Ellipsoid(P=base.terminal.P, c=base.x_ref, r=float(rng.uniform(0.1, 3.0))),
                       x_ref=base.x_ref, u_ref=base.u_ref)
        assert validate(p) == []

        offline = build_offline(p, float(rng.uniform(0.1, 20.0)))
        resultado = admm_solve(p, offline, estado_inicial(rng, p), ajustes)
        assert resultado.z_tilde.shape == (p.n_z,)
        assert resultado.v_tilde.shape == (p.n_z,)
        assert resultado.u_apply.shape == (m,)
        assert np.all(np.isfinite(resultado.z_tilde))
