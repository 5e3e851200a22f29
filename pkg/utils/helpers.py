"""
Utilitários auxiliares - kinex
"""
import io
import json
import os
import sys
import tempfile
from pathlib import Path
from typing import Dict, List, Any, Optional, Union

import pandas as pd

from config import Config

PathLike = Union[str, Path]


def log(tag: str, message: str) -> None:
    """Mensagem com tag no stderr (stdout fica livre para saídas de máquina)"""
    print(f"[{tag}] {message}", file=sys.stderr)


def log_debug(tag: str, message: str) -> None:
    """Mensagem detalhada, só com KINEX_DEBUG=true"""
    if Config.DEBUG:
        log(tag, message)


def format_number(num: float, digits: int = 6) -> str:
    """Formata números para relatórios (inteiros com separador, reais com precisão fixa)"""
    if isinstance(num, int):
        return f"{num:,}".replace(',', '.')
    if num != num:
        return "nan"
    return f"{num:.{digits}g}"


def atomic_write_text(path: PathLike, text: str) -> Path:
    """Escreve arquivo de forma atômica (arquivo temporário + rename)"""

    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)

    fd, tmp_name = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp_name, target)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise

    return target


def write_csv(frame: pd.DataFrame, path: PathLike) -> Path:
    """CSV com cabeçalho, separador '.', LF e 17 dígitos significativos"""
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, float_format=Config.CSV_FLOAT_FORMAT, lineterminator="\n")
    return atomic_write_text(path, buffer.getvalue())


def write_json(data: Dict[str, Any], path: PathLike) -> Path:
    """JSON indentado, escrita atômica"""
    return atomic_write_text(path, json.dumps(data, indent=2, sort_keys=False, default=_json_default) + "\n")


def _json_default(value: Any) -> Any:
    # tipos numpy não são serializáveis diretamente
    if hasattr(value, "item"):
        return value.item()
    if hasattr(value, "tolist"):
        return value.tolist()
    return str(value)


def parse_init_spec(spec: str) -> Dict[str, Any]:
    """
    Interpreta a condição inicial da linha de comando.

    Formatos aceitos:
        uniform:a:b   exp:mean   gamma2:w   gammahalf:w   spike:x   equal:w
    """

    if not isinstance(spec, str) or not spec.strip():
        raise ValueError("Condição inicial vazia")

    parts = [p.strip() for p in spec.strip().lower().split(":")]
    kind, raw_args = parts[0], parts[1:]

    arity = {
        "uniform": 2,
        "exp": 1,
        "gamma2": 1,
        "gammahalf": 1,
        "spike": 1,
        "equal": 1
    }

    if kind not in arity:
        raise ValueError(f"Condição inicial desconhecida: '{kind}' (use {', '.join(arity)})")

    if len(raw_args) != arity[kind]:
        raise ValueError(f"'{kind}' espera {arity[kind]} parâmetro(s), recebeu {len(raw_args)}")

    try:
        args = [float(a) for a in raw_args]
    except ValueError:
        raise ValueError(f"Parâmetros numéricos inválidos em '{spec}'")

    return {"kind": kind, "args": args, "text": spec}


def parse_float_list(text: str) -> List[float]:
    """Lista separada por vírgulas, ou faixa 'inicio:fim:passo'"""

    if not text or not text.strip():
        raise ValueError("Lista vazia")

    text = text.strip()
    if ":" in text:
        pieces = text.split(":")
        if len(pieces) != 3:
            raise ValueError(f"Faixa inválida '{text}' (use inicio:fim:passo)")
        start, stop, step = (float(p) for p in pieces)
        if step <= 0:
            raise ValueError("Passo da faixa deve ser positivo")
        count = int(round((stop - start) / step)) + 1
        return [round(start + i * step, 12) for i in range(max(count, 0))]

    return [float(p) for p in text.split(",") if p.strip()]


def elapsed_label(seconds: Optional[float]) -> str:
    """Tempo decorrido legível"""
    if seconds is None:
        return "N/A"
    if seconds < 1:
        return f"{seconds * 1000:.0f}ms"
    if seconds < 120:
        return f"{seconds:.1f}s"
    return f"{seconds / 60:.1f}min"
