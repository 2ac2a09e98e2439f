"""
CONFIGURACION GLOBAL DEL SISTEMA ELLIMPC
=========================================

Este modulo maneja la configuracion de rutas, niveles de traza y parametros
numericos por defecto, permitiendo que el codigo sea portable y que cada
valor pueda sobrescribirse via variables de entorno o desde la linea de
comandos.

Autor: Sistema ElliMPC
Fecha: 2026-10-19
"""

import json
import logging
import os
import sys
from datetime import datetime
from pathlib import Path
from typing import Optional, Tuple

logger = logging.getLogger(__name__)

NIVELES_TRAZA = {
    'off': None,
    'info': logging.INFO,
    'trace': logging.DEBUG,
}


class ConfiguracionMPC:
    """
    Clase singleton para manejar la configuracion global del sistema.
    Agrupa rutas de salida, nivel de traza y los valores numericos por
    defecto que usan los modulos de calculo.
    """

    _instance = None
    _initialized = False

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __init__(self):
        if not ConfiguracionMPC._initialized:
            self._base_dir = Path.cwd()
            self._nivel_traza = None
            self._guardar_logs = None

            # Pisos numericos (float de 64 bits)
            self.piso_pivote = 1e-14
            self.piso_autovalor = 1e-12
            self.tolerancia_estacionario = 1e-8

            # Solver ADMM
            self.rho = 15.0
            self.eps_p = 1e-3
            self.eps_d = 1e-3
            self.max_iter = 4000

            # Ingredientes terminales
            self.max_iter_riccati = 10000
            self.rejilla_lambda = (0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99, 1.0)

            ConfiguracionMPC._initialized = True

    @property
    def output_dir(self) -> Path:
        return self._base_dir / "output"

    @property
    def logs_dir(self) -> Path:
        return self.output_dir / "logs"

    @property
    def nivel_traza(self) -> str:
        # Intentar obtener de variable de entorno si no esta configurado
        nivel = self._nivel_traza or os.environ.get('ELLIMPC_LOG', 'info')
        nivel = nivel.strip().lower()
        if nivel not in NIVELES_TRAZA:
            logger.warning(f"ELLIMPC_LOG='{nivel}' no valido, se usa 'info'")
            return 'info'
        return nivel

    @nivel_traza.setter
    def nivel_traza(self, nivel: str):
        self._nivel_traza = nivel

    @property
    def guardar_logs(self) -> bool:
        if self._guardar_logs is None:
            return os.environ.get('ELLIMPC_LOG_FILE', '').strip().lower() in ['1', 'true', 'si', 'yes']
        return self._guardar_logs

    @guardar_logs.setter
    def guardar_logs(self, valor: bool):
        self._guardar_logs = bool(valor)

    def inicializar_directorios(self):
        """Crea los directorios necesarios si no existen."""
        for directory in [self.output_dir, self.logs_dir]:
            directory.mkdir(parents=True, exist_ok=True)

    def mostrar_configuracion(self):
        """Muestra la configuracion actual (por stderr, stdout queda para JSON)."""
        lineas = [
            "=" * 60,
            "CONFIGURACION ACTUAL",
            "=" * 60,
            f"  Output Dir:      {self.output_dir}",
            f"  Logs Dir:        {self.logs_dir}",
            f"  Nivel traza:     {self.nivel_traza}",
            f"  rho:             {self.rho}",
            f"  eps_p / eps_d:   {self.eps_p} / {self.eps_d}",
            f"  max_iter:        {self.max_iter}",
            f"  Rejilla lambda:  {self.rejilla_lambda}",
            "=" * 60,
        ]
        print("\n".join(lineas), file=sys.stderr)


def configurar_logging(nivel: Optional[str] = None):
    """
    Configura el logging segun el nivel de traza (off / info / trace).

    La salida va por stderr; si `guardar_logs` esta activo se agrega un
    fichero con marca temporal en `logs_dir`.
    """
    nivel = nivel or config.nivel_traza
    nivel_logging = NIVELES_TRAZA.get(nivel, logging.INFO)

    if nivel_logging is None:
        logging.disable(logging.CRITICAL)
        return
    logging.disable(logging.NOTSET)

    handlers = [logging.StreamHandler(sys.stderr)]
    if config.guardar_logs:
        config.inicializar_directorios()
        handlers.append(
            logging.FileHandler(config.logs_dir / f'ellimpc_{datetime.now().strftime("%Y%m%d_%H%M%S")}.log')
        )

    logging.basicConfig(
        level=nivel_logging,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True
    )


# Claves requeridas en el fichero JSON de problema
CLAVES_REQUERIDAS_PROBLEMA = [
    'A', 'B', 'Q', 'R', 'N',
    'x_lo', 'x_hi', 'u_lo', 'u_hi',
    'x_ref', 'u_ref',
]

# Ingredientes terminales (los emite el subcomando `terminal`)
CLAVES_TERMINALES = ['T', 'P', 'c', 'r']


def validar_archivo_problema(filepath: Path, requiere_terminal: bool = True) -> Tuple[bool, str, Optional[dict]]:
    """
    Valida que el fichero de problema se pueda leer y tenga las claves esperadas.

    Args:
        filepath: Ruta al fichero JSON del problema
        requiere_terminal: Si se exigen tambien T, P, c y r

    Returns:
        tuple: (es_valido: bool, mensaje: str, datos: dict o None)
    """
    filepath = Path(filepath)
    try:
        if filepath.suffix.lower() != '.json':
            return False, f"Formato de archivo no soportado: {filepath.suffix}. Use .json", None

        with open(filepath, 'r', encoding='utf-8') as f:
            datos = json.load(f)

        if not isinstance(datos, dict):
            return False, "El documento JSON debe ser un objeto", None

        requeridas = CLAVES_REQUERIDAS_PROBLEMA + (CLAVES_TERMINALES if requiere_terminal else [])
        claves_faltantes = [clave for clave in requeridas if clave not in datos]

        if claves_faltantes:
            msg = f"Claves faltantes en el archivo: {', '.join(claves_faltantes)}\n"
            msg += f"Claves encontradas: {', '.join(datos.keys())}"
            return False, msg, None

        return True, f"Archivo valido: {filepath.name}", datos

    except (OSError, json.JSONDecodeError) as e:
        return False, f"Error al leer el archivo: {str(e)}", None


# Instancia global de configuracion
config = ConfiguracionMPC()
