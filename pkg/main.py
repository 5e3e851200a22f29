"""
kinex - Linha de comando
Simulação de agentes e evolução de densidades para modelos cinéticos de troca de riqueza
"""
import argparse
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional

from dotenv import dotenv_values

from config import Config
from kinex.experiments import COMMANDS, EXIT_BAD_PARAMS, ExperimentRecipe
from utils.helpers import log, parse_float_list


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="Arquivo key=value (UTF-8); flags da linha de comando têm prioridade")
    parser.add_argument("--w", type=float, default=1.0, help="Riqueza média")
    parser.add_argument("--seed", type=int, default=Config.DEFAULT_SEED, help="Semente de 64 bits")
    parser.add_argument("--out", default=Config.DEFAULT_OUTPUT_DIR, help="Diretório de saída")
    parser.add_argument("--grid-n", type=int, default=None, help=f"Células da grade (padrão {Config.GRID_N})")
    parser.add_argument("--grid-xmax", type=float, default=None,
                        help=f"Truncamento da grade (padrão {Config.GRID_XMAX_FACTOR:g}*w)")
    parser.add_argument("--jobs", type=int, default=1, help="Paralelismo máximo em varreduras")


def _add_model(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--model", choices=["ie", "drm", "mixed"], default="ie", help="Regra de troca")
    parser.add_argument("--mu", type=float, default=None, help="Probabilidade da regra direcionada (modelo misto)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kinex",
        description="Modelos cinéticos de troca de riqueza: troca imediata, mercado direcionado e mistura"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", help="Simulação de agentes (Monte Carlo)")
    _add_common(simulate)
    _add_model(simulate)
    simulate.add_argument("--n", type=int, default=Config.DEFAULT_AGENTS, help="Número de agentes (par)")
    simulate.add_argument("--days", type=int, default=Config.DEFAULT_DAYS, help="Dias simulados")
    simulate.add_argument("--record-every", type=int, default=None, help="Intervalo entre instantâneos")
    simulate.add_argument("--init", default=None, help="equal:w | uniform:a:b | exp:m | gamma2:w | gammahalf:w")
    simulate.add_argument("--histogram", type=int, default=0, help="Grava histograma com BINS classes")

    evolve = sub.add_parser("evolve", help="Iteração do operador de densidade")
    _add_common(evolve)
    _add_model(evolve)
    evolve.add_argument("--init", default=None, help="uniform:a:b | exp:m | gamma2:w | gammahalf:w | spike:x")
    evolve.add_argument("--tol", type=float, default=Config.STOP_TOL, help="Tolerância KS entre iterados")
    evolve.add_argument("--max-steps", type=int, default=Config.MAX_STEPS)
    evolve.add_argument("--alpha", type=float, default=Config.ALPHA, help="Ordem do momento M_alpha no traço")
    evolve.add_argument("--d-alpha", action="store_true", help="Registra d_alpha até o equilíbrio")

    moments = sub.add_parser("moments", help="Tabela de momentos do modelo misto")
    _add_common(moments)
    moments.add_argument("--mu-list", default="0:1:0.1", help="Lista '0,0.5,1' ou faixa 'inicio:fim:passo'")

    contraction = sub.add_parser("contraction", help="Estudo de contração em d_alpha")
    _add_common(contraction)
    contraction.add_argument("--alpha", type=float, default=Config.ALPHA)
    contraction.add_argument("--steps", type=int, default=10)
    contraction.add_argument("--pairs", type=int, default=5)

    verify = sub.add_parser("verify", help="Bateria de aceitação (relatório JSON)")
    _add_common(verify)
    verify.add_argument("--tol", type=float, default=1.0, help="Escala das tolerâncias (0 força falhas)")
    verify.add_argument("--only", default=None, help="Critérios separados por vírgula (nome ou número)")
    verify.set_defaults(out=None)

    parser.subcommands = sub.choices
    return parser


def load_config_file(path: str) -> Dict[str, str]:
    """key=value via python-dotenv; chaves normalizadas para o nome do destino argparse"""
    values = dotenv_values(path, encoding="utf-8")
    return {key.strip().lower().lstrip("-").replace("-", "_"): value
            for key, value in values.items() if value is not None}


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)

    if not args.config:
        return args

    file_values = load_config_file(args.config)
    known = vars(args)
    unknown = [key for key in file_values if key not in known]
    if unknown:
        log("CLI", f"Chaves ignoradas em {args.config}: {', '.join(unknown)}")

    # Segunda passada: valores do arquivo viram padrões, flags explícitas prevalecem
    subparser = parser.subcommands[args.command]
    subparser.set_defaults(**{k: v for k, v in file_values.items() if k in known})
    args = parser.parse_args(argv)
    if isinstance(getattr(args, "d_alpha", False), str):
        args.d_alpha = args.d_alpha.strip().lower() in ("1", "true", "yes", "sim")
    return args


def recipe_from_args(args: argparse.Namespace) -> ExperimentRecipe:
    params = {key: value for key, value in vars(args).items()
              if key not in ("command", "config", "out", "jobs")}

    if args.command == "moments":
        params["mus"] = parse_float_list(str(params.pop("mu_list")))
    if args.command == "verify":
        only = params.pop("only")
        params["only"] = [item for item in str(only).split(",")] if only else None

    tol_scale = float(params["tol"]) if args.command == "verify" else 1.0
    return ExperimentRecipe(args.command, params, Path(args.out) if args.out else None, tol_scale, max(1, args.jobs))


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = parse_args(argv)
        recipe = recipe_from_args(args)
    except (ValueError, OSError) as e:
        log("CLI", f"Argumentos inválidos: {e}")
        return EXIT_BAD_PARAMS

    validation = Config.validate()
    for warning in validation["warnings"]:
        log("CONFIG", f"Aviso: {warning}")
    if not validation["valid"]:
        for error in validation["errors"]:
            log("CONFIG", f"Erro: {error}")
        return EXIT_BAD_PARAMS

    result = COMMANDS[recipe.name](recipe)

    if recipe.name == "verify" and "report" in result:
        print(json.dumps(result["report"], indent=2, default=str))
    else:
        log("CLI", result["message"])
        for path in result.get("files", []):
            log("CLI", f"  -> {path}")

    return result["exit_code"]


if __name__ == "__main__":
    sys.exit(main())
