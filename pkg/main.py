"""
SCRIPT PRINCIPAL - SISTEMA ELLIMPC
==================================

Linea de comandos del solver ADMM disperso para MPC con restriccion
terminal elipsoidal.

Uso:
    python main.py validate problema.json
    python main.py terminal esqueleto.json [--merge] [--out fichero.json]
    python main.py solve problema.json [--x0 0,0,0,0,0,0]
    python main.py simulate problema.json --steps 50 --out resultados/
    python main.py bench problema.json --horizontes 10,20,40
    python main.py caso-estudio --out caso_tres_masas.json

Codigos de salida: 0 exito, 1 fallo del dominio, 2 error de lectura o
formato, 3 el solver no convergio.

Autor: Sistema ElliMPC
Fecha: 2026-10-19
"""

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

# Importar configuracion ANTES que los otros modulos
from config import config, configurar_logging, validar_archivo_problema

from Mod_Conjunto_Terminal import build_terminal_set
from Mod_Datos_Offline import build_offline, formula_floats
from Mod_Errores import ErrorMPC, InvalidProblem, OfflineCacheError, ValidationFailed
from Mod_Problema_MPC import cargar_problema, guardar_problema, problema_a_dict, validate
from Mod_Simulacion import (
    build_three_mass_model,
    closed_loop_simulate,
    completar_con_terminal,
    restricciones_mas_estrictas,
    summarize_stats,
    PlantModel,
)
from Mod_Solver_ADMM import ESTADO_CONVERGIDO, SolverSettings, admm_solve, kkt_residuals

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_DOMINIO = 1
EXIT_LECTURA = 2
EXIT_SIN_CONVERGER = 3

ITERACIONES_BENCH = 200


@dataclass
class RunConfig:
    """Parametros de una ejecucion de la linea de comandos."""
    subcomando: str
    problema: Optional[Path] = None
    salida: Optional[Path] = None
    rho: float = 15.0
    eps_p: float = 1e-3
    eps_d: float = 1e-3
    max_iter: int = 4000
    steps: int = 50
    warmstart: str = 'cold'
    seed: int = 0
    x0: Optional[List[float]] = None
    diagonal: Optional[bool] = None
    horizontes: List[int] = field(default_factory=lambda: [10, 20, 40])
    repeticiones: int = 5
    merge: bool = False
    progreso: bool = False

    @classmethod
    def desde_args(cls, args: argparse.Namespace) -> 'RunConfig':
        diagonal = {'auto': None, 'on': True, 'off': False}[args.diagonal_costs]
        rc = cls(
            subcomando=args.subcomando,
            problema=Path(args.problema) if getattr(args, 'problema', None) else None,
            salida=Path(args.out) if args.out else None,
            rho=config.rho if args.rho is None else args.rho,
            eps_p=config.eps_p if args.eps_p is None else args.eps_p,
            eps_d=config.eps_d if args.eps_d is None else args.eps_d,
            max_iter=config.max_iter if args.max_iter is None else args.max_iter,
            steps=args.steps,
            warmstart=args.warmstart,
            seed=args.seed,
            x0=_parsear_lista(args.x0, float) if args.x0 else None,
            diagonal=diagonal,
            horizontes=_parsear_lista(args.horizontes, int),
            repeticiones=args.repeticiones,
            merge=getattr(args, 'merge', False),
            progreso=args.progress,
        )
        if not rc.rho > 0:
            raise InvalidProblem(f"--rho debe ser positivo, recibido {rc.rho}")
        if rc.steps < 0:
            raise InvalidProblem(f"--steps debe ser >= 0, recibido {rc.steps}")
        if rc.subcomando in ('validate', 'terminal', 'solve', 'simulate', 'bench') and rc.problema is None:
            raise InvalidProblem("Falta la ruta del fichero de problema")
        return rc

    def settings(self) -> SolverSettings:
        return SolverSettings(eps_p=self.eps_p, eps_d=self.eps_d, max_iter=self.max_iter, warmstart=self.warmstart)


def _parsear_lista(texto: str, tipo):
    try:
        return [tipo(v) for v in texto.split(',') if v.strip()]
    except ValueError as e:
        raise InvalidProblem(f"Lista no valida '{texto}': {e}") from e


def _x0(rc: RunConfig, n: int) -> np.ndarray:
    if rc.x0 is None:
        return np.zeros(n)
    if len(rc.x0) != n:
        raise InvalidProblem(f"--x0 debe tener {n} componentes, recibidas {len(rc.x0)}")
    return np.array(rc.x0)


def _emitir(datos: dict, salida: Optional[Path] = None):
    """JSON por stdout y, si se indica, tambien a fichero."""
    texto = json.dumps(datos, indent=2)
    print(texto)
    if salida is not None:
        salida.parent.mkdir(parents=True, exist_ok=True)
        salida.write_text(texto + "\n", encoding='utf-8')


def mostrar_bienvenida(subcomando: str):
    """Cabecera por stderr (stdout queda para los artefactos JSON)."""
    lineas = [
        "=" * 80,
        "ELLIMPC - ADMM DISPERSO PARA MPC CON RESTRICCION TERMINAL ELIPSOIDAL",
        "=" * 80,
        f"Subcomando: {subcomando}",
        f"Fecha ejecucion: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}",
        "=" * 80,
    ]
    print("\n".join(lineas), file=sys.stderr)


# ============================================================================
# SUBCOMANDOS
# ============================================================================

def cmd_validate(rc: RunConfig) -> int:
    problema = cargar_problema(rc.problema)
    violaciones = validate(problema)
    _emitir({'valido': not violaciones, 'violaciones': [v.a_dict() for v in violaciones]}, rc.salida)
    return EXIT_OK if not violaciones else EXIT_DOMINIO


def cmd_terminal(rc: RunConfig) -> int:
    esqueleto = cargar_problema(rc.problema, requiere_terminal=False)
    ingredientes = build_terminal_set(esqueleto.A, esqueleto.B, esqueleto.Q, esqueleto.R,
                                      restricciones_mas_estrictas(esqueleto), esqueleto.x_ref, esqueleto.u_ref)
    fragmento = ingredientes.a_fragmento()
    if rc.merge:
        _, _, datos = validar_archivo_problema(rc.problema, requiere_terminal=False)
        datos.update(fragmento)
        if rc.salida is not None:
            guardar_problema(datos, rc.salida)
        print(json.dumps(datos, indent=2))
    else:
        _emitir(fragmento, rc.salida)
    return EXIT_OK


def _cargar_validado(rc: RunConfig):
    problema = cargar_problema(rc.problema)
    violaciones = validate(problema)
    if violaciones:
        for v in violaciones:
            logger.error(f"{v.campo}: {v.mensaje}")
        raise ValidationFailed(f"El problema tiene {len(violaciones)} violacion(es)")
    return problema


def cmd_solve(rc: RunConfig) -> int:
    problema = _cargar_validado(rc)
    offline = build_offline(problema, rc.rho, rc.diagonal)
    x_t = _x0(rc, problema.n)
    resultado = admm_solve(problema, offline, x_t, rc.settings())
    salida = resultado.a_dict()
    salida['kkt'] = kkt_residuals(problema, resultado, x_t, rc.rho).a_dict()
    _emitir(salida, rc.salida)
    if not resultado.convergido:
        logger.error(f"Sin convergencia tras {resultado.iterations} iteraciones")
        return EXIT_SIN_CONVERGER
    return EXIT_OK


def cmd_simulate(rc: RunConfig) -> int:
    problema = _cargar_validado(rc)
    offline = build_offline(problema, rc.rho, rc.diagonal)
    planta = PlantModel(A=problema.A, B=problema.B)
    log = closed_loop_simulate(problema, offline, planta, _x0(rc, problema.n), rc.steps,
                               rc.settings(), progreso=rc.progreso)
    estadisticos = summarize_stats(log)
    estadisticos['violaciones'] = log.violaciones_restricciones(problema)
    estadisticos['sin_converger'] = int(sum(r.status != ESTADO_CONVERGIDO for r in log.registros))

    if rc.salida is not None:
        log.exportar_csv(rc.salida / 'closed_loop.csv')
        _emitir(estadisticos, rc.salida / 'stats.json')
    else:
        _emitir(estadisticos)
    return EXIT_OK


def cmd_bench(rc: RunConfig) -> int:
    """Tabla de escalado: floats almacenados y tiempo medio por iteracion para cada N."""
    base = _cargar_validado(rc)
    rng = np.random.default_rng(rc.seed)
    if rc.x0 is not None:
        x_t = _x0(rc, base.n)
    else:
        x_t = base.x_ref + 0.1 * rng.standard_normal(base.n)
    # Tolerancias inalcanzables: se ejecutan exactamente ITERACIONES_BENCH iteraciones
    tiny = np.finfo(float).tiny
    settings = SolverSettings(eps_p=tiny, eps_d=tiny, max_iter=ITERACIONES_BENCH)

    filas = []
    for N in tqdm(rc.horizontes, desc="Bench", disable=not rc.progreso):
        problema = base.con_horizonte(N)
        offline = build_offline(problema, rc.rho, rc.diagonal)
        tiempos = []
        for _ in range(rc.repeticiones):
            resultado = admm_solve(problema, offline, x_t, settings)
            tiempos.append(resultado.solve_ms / resultado.iterations)
        filas.append({
            'N': N,
            'offline_floats': offline.contar_floats(),
            'formula_floats': formula_floats(problema.n, problema.m, N, offline.diagonal),
            'iter_ms': float(np.median(tiempos)),
        })
        logger.info(f"N={N}: {filas[-1]['offline_floats']} floats, {filas[-1]['iter_ms']:.4f} ms/iter")

    tabla = pd.DataFrame(filas)
    if rc.salida is not None:
        rc.salida.mkdir(parents=True, exist_ok=True)
        tabla.to_csv(rc.salida / 'bench.csv', index=False, float_format='%.17g')
    _emitir({'filas': filas})
    return EXIT_OK


def cmd_caso_estudio(rc: RunConfig) -> int:
    """Escribe el problema de tres masas con su conjunto terminal."""
    _, esqueleto = build_three_mass_model()
    problema, ingredientes = completar_con_terminal(esqueleto)
    datos = problema_a_dict(problema)
    datos.update({'K': ingredientes.K.tolist(), 'lambda': ingredientes.lam})
    if rc.salida is not None:
        guardar_problema(datos, rc.salida)
    print(json.dumps(datos, indent=2))
    return EXIT_OK


SUBCOMANDOS = {
    'validate': cmd_validate,
    'terminal': cmd_terminal,
    'solve': cmd_solve,
    'simulate': cmd_simulate,
    'bench': cmd_bench,
    'caso-estudio': cmd_caso_estudio,
}


def crear_parser() -> argparse.ArgumentParser:
    comunes = argparse.ArgumentParser(add_help=False)
    comunes.add_argument('--rho', type=float, default=None, help="Penalizacion ADMM (por defecto 15)")
    comunes.add_argument('--eps-p', type=float, default=None, help="Tolerancia primal")
    comunes.add_argument('--eps-d', type=float, default=None, help="Tolerancia dual")
    comunes.add_argument('--max-iter', type=int, default=None, help="Limite de iteraciones")
    comunes.add_argument('--steps', type=int, default=50, help="Instantes de lazo cerrado")
    comunes.add_argument('--warmstart', choices=['cold', 'keep', 'shift'], default='cold')
    comunes.add_argument('--seed', type=int, default=0, help="Semilla (solo bench)")
    comunes.add_argument('--out', default=None, help="Fichero o directorio de salida")
    comunes.add_argument('--x0', default=None, help="Estado inicial separado por comas")
    comunes.add_argument('--diagonal-costs', choices=['auto', 'on', 'off'], default='auto',
                         help="Camino rapido para Q y R diagonales")
    comunes.add_argument('--horizontes', default='10,20,40', help="Lista de N para bench")
    comunes.add_argument('--repeticiones', type=int, default=5, help="Repeticiones por N en bench")
    comunes.add_argument('--progress', action='store_true', help="Barra de progreso en simulate y bench")

    parser = argparse.ArgumentParser(prog='ellimpc', description="ADMM disperso para MPC con terminal elipsoidal")
    sub = parser.add_subparsers(dest='subcomando', required=True)
    for nombre in ('validate', 'solve', 'simulate', 'bench'):
        p = sub.add_parser(nombre, parents=[comunes])
        p.add_argument('problema')
    p = sub.add_parser('terminal', parents=[comunes])
    p.add_argument('problema')
    p.add_argument('--merge', action='store_true', help="Emite el problema completo en lugar del fragmento")
    sub.add_parser('caso-estudio', parents=[comunes])
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Punto de entrada; devuelve el codigo de salida."""
    args = crear_parser().parse_args(argv)
    configurar_logging()
    mostrar_bienvenida(args.subcomando)
    if config.nivel_traza == 'trace':
        config.mostrar_configuracion()

    try:
        rc = RunConfig.desde_args(args)
        return SUBCOMANDOS[rc.subcomando](rc)
    except (InvalidProblem, OfflineCacheError, OSError) as e:
        logger.error(f"Error de lectura o formato: {e}")
        return EXIT_LECTURA
    except ErrorMPC as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_DOMINIO


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\n\n  Proceso interrumpido por el usuario.", file=sys.stderr)
        sys.exit(0)
