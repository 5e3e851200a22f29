"""
Configurações centralizadas - Simulador de trocas cinéticas (kinex)
"""
import os
from dotenv import load_dotenv
from typing import Dict, Any

# Carrega variáveis de ambiente
load_dotenv()


def _env_float(name: str, default: str) -> float:
    return float(os.getenv(name, default))


def _env_flag(name: str, default: str) -> bool:
    return os.getenv(name, default).lower() == 'true'


class Config:
    """Configurações centralizadas do sistema"""

    CODE_VERSION = "1.0.0"
    DEBUG = _env_flag('KINEX_DEBUG', 'false')

    # Grade de riqueza (x_max = fator * w)
    GRID_N = int(os.getenv('KINEX_GRID_N', '4096'))
    GRID_XMAX_FACTOR = _env_float('KINEX_GRID_XMAX_FACTOR', '20')
    MIN_GRID_N = 16

    # Operadores
    CONVOLUTION_MODE = os.getenv('KINEX_CONVOLUTION_MODE', 'linear')  # linear | nearest
    FAST_CONVOLUTION = _env_flag('KINEX_FAST_CONVOLUTION', 'false')
    RESTORE_MEAN = _env_flag('KINEX_RESTORE_MEAN', 'true')
    BRUTE_FORCE_MAX_N = 1024
    LEAK_LOG_THRESHOLD = 1e-12

    # Iteração
    MAX_STEPS = int(os.getenv('KINEX_MAX_STEPS', '200'))
    STOP_TOL = _env_float('KINEX_STOP_TOL', '1e-4')
    LEAK_GUARD = _env_float('KINEX_LEAK_GUARD', '0.01')
    ALPHA = _env_float('KINEX_ALPHA', '1.5')

    # Transformada de Laplace (s em unidades de 1/w)
    SGRID_MIN_FACTOR = _env_float('KINEX_SGRID_MIN_FACTOR', '1e-3')
    SGRID_MAX_FACTOR = _env_float('KINEX_SGRID_MAX_FACTOR', '1e3')
    SGRID_M = int(os.getenv('KINEX_SGRID_M', '256'))
    SGRID_RESOLUTION = _env_float('KINEX_SGRID_RESOLUTION', '0.25')  # s_max * dx
    SIMPSON_REFINE = 8
    MEAN_MATCH_TOL = 1e-3

    # Modelo misto
    H_XTOL = 1e-16
    H_RTOL = 1e-15
    RICHARDSON_S0 = 0.05  # passo inicial em unidades de 1/w
    RICHARDSON_LEVELS = 7
    RICHARDSON_RTOL = 1e-4

    # Simulação de agentes
    DEFAULT_SEED = int(os.getenv('KINEX_SEED', '7'))
    DEFAULT_AGENTS = int(os.getenv('KINEX_AGENTS', '100000'))
    DEFAULT_DAYS = int(os.getenv('KINEX_DAYS', '500'))
    PAIRING_PROTOCOL = "uniform perfect matching (shuffle + adjacent pairs)"

    # Saídas
    CSV_FLOAT_FORMAT = "%.17g"
    DEFAULT_OUTPUT_DIR = os.getenv('KINEX_OUT', 'runs')

    @classmethod
    def validate(cls) -> Dict[str, Any]:
        """Valida configurações essenciais"""

        validation = {
            "valid": True,
            "errors": [],
            "warnings": []
        }

        if cls.GRID_N < cls.MIN_GRID_N:
            validation["valid"] = False
            validation["errors"].append(f"KINEX_GRID_N deve ser >= {cls.MIN_GRID_N}")

        if cls.GRID_XMAX_FACTOR <= 0:
            validation["valid"] = False
            validation["errors"].append("KINEX_GRID_XMAX_FACTOR deve ser positivo")

        if cls.CONVOLUTION_MODE not in ("linear", "nearest"):
            validation["valid"] = False
            validation["errors"].append("KINEX_CONVOLUTION_MODE deve ser 'linear' ou 'nearest'")

        if cls.STOP_TOL <= 0 or cls.LEAK_GUARD <= 0:
            validation["valid"] = False
            validation["errors"].append("Tolerâncias devem ser positivas")

        if not 1.0 < cls.ALPHA < 2.0:
            validation["valid"] = False
            validation["errors"].append("KINEX_ALPHA deve estar em (1, 2)")

        # Validações opcionais
        if cls.CONVOLUTION_MODE == "nearest":
            validation["warnings"].append("Convolução por arredondamento - viés O(dx) no ponto fixo")

        if cls.GRID_XMAX_FACTOR < 15:
            validation["warnings"].append("x_max < 15w - vazamento de massa pode ser relevante")

        if not cls.RESTORE_MEAN:
            validation["warnings"].append("Restauração da média desligada - deriva O(dx^2) por passo")

        return validation

    @classmethod
    def get_summary(cls) -> Dict[str, Any]:
        """Retorna resumo das configurações"""

        return {
            "code_version": cls.CODE_VERSION,
            "debug_mode": cls.DEBUG,
            "grid": {
                "n": cls.GRID_N,
                "xmax_factor": cls.GRID_XMAX_FACTOR
            },
            "operators": {
                "convolution_mode": cls.CONVOLUTION_MODE,
                "fast_convolution": cls.FAST_CONVOLUTION,
                "restore_mean": cls.RESTORE_MEAN
            },
            "iteration": {
                "max_steps": cls.MAX_STEPS,
                "stop_tol": cls.STOP_TOL,
                "leak_guard": cls.LEAK_GUARD,
                "alpha": cls.ALPHA
            },
            "sgrid": {
                "min_factor": cls.SGRID_MIN_FACTOR,
                "max_factor": cls.SGRID_MAX_FACTOR,
                "m": cls.SGRID_M,
                "resolution": cls.SGRID_RESOLUTION
            },
            "pairing": cls.PAIRING_PROTOCOL
        }
