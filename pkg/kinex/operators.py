"""
Operadores de troca - S, T = S[p]*S[p], T_D, T_M e o laço de iteração

Todos os operadores são funções puras Density -> Density. Depois de cada
aplicação a densidade é renormalizada (massa perdida vai para mass_leak) e,
com KINEX_RESTORE_MEAN=true, a média de entrada é restaurada exatamente.
"""
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import signal

from config import Config
from utils.helpers import log, log_debug

from .distributions import (Density, Grid, ecdf, gamma2_equilibrium, gamma_half_equilibrium,
                            ks_distance, moment, restore_mean)
from .errors import NumericalError, ParameterError, TruncationError

MODEL_NAMES = ("ie", "drm", "mixed")


def check_mu(mu) -> float:
    """Valida a probabilidade da regra direcionada"""
    try:
        value = float(mu)
    except (TypeError, ValueError):
        raise ParameterError(f"mu deve ser numérico (recebido {mu!r})")
    if not 0.0 <= value <= 1.0:
        raise ParameterError(f"mu deve estar em [0, 1] (recebido {mu})")
    return value


@dataclass(frozen=True)
class ModelKind:
    """ImmediateExchange | DirectedRandomMarket | Mixed(mu)"""

    name: str
    mu: float = 0.0

    def __post_init__(self):
        if self.name not in MODEL_NAMES:
            raise ParameterError(f"Modelo desconhecido '{self.name}' (use {', '.join(MODEL_NAMES)})")
        mu = check_mu(self.mu)
        if self.name == "ie" and mu != 0.0:
            raise ParameterError("Troca imediata não aceita mu")
        if self.name == "drm":
            mu = 1.0
        object.__setattr__(self, "mu", mu)

    @classmethod
    def immediate_exchange(cls) -> "ModelKind":
        return cls("ie", 0.0)

    @classmethod
    def directed_random_market(cls) -> "ModelKind":
        return cls("drm", 1.0)

    @classmethod
    def mixed(cls, mu: float) -> "ModelKind":
        return cls("mixed", mu)

    @classmethod
    def parse(cls, name: str, mu: Optional[float] = None) -> "ModelKind":
        """Constrói o modelo a partir dos argumentos de linha de comando"""
        name = (name or "").strip().lower()
        if name == "mixed":
            if mu is None:
                raise ParameterError("Modelo misto exige --mu")
            return cls.mixed(mu)
        if name == "ie":
            return cls.immediate_exchange()
        if name == "drm":
            return cls.directed_random_market()
        raise ParameterError(f"Modelo desconhecido '{name}'")

    @property
    def drm_probability(self) -> float:
        """Probabilidade de uma interação seguir a regra direcionada"""
        return self.mu

    @property
    def label(self) -> str:
        return f"mixed({self.mu:g})" if self.name == "mixed" else self.name


IMMEDIATE_EXCHANGE = ModelKind.immediate_exchange()
DIRECTED_RANDOM_MARKET = ModelKind.directed_random_market()


# ---------------------------------------------------------------------------
# Blocos discretos
# ---------------------------------------------------------------------------

def _s_values(p: Density) -> np.ndarray:
    # A célula do próprio nó contribui com metade (só [x_k, e_{k+1}] fica acima de x_k)
    f = p.values / p.nodes
    tail = np.cumsum(f[::-1])[::-1]
    return p.grid.dx * (tail - 0.5 * f)


def _convolve(a: np.ndarray, b: np.ndarray, grid: Grid) -> np.ndarray:
    """(a*b)(x_k) para densidades constantes por célula, truncada em x_max"""

    n = grid.n
    if Config.FAST_CONVOLUTION:
        full = np.clip(signal.fftconvolve(a, b)[:n], 0.0, None)
    else:
        full = np.convolve(a, b)[:n]

    if Config.CONVOLUTION_MODE == "nearest":
        return grid.dx * full

    # x_k - x_j cai na borda entre duas células: metade de cada
    shifted = np.concatenate(([0.0], full[:-1]))
    return 0.5 * grid.dx * (full + shifted)


def _finalize(values: np.ndarray, source: Density, label: str,
              base_leak: Optional[float] = None, keep_mean: bool = True) -> Density:
    """Renormaliza, registra o vazamento e restaura a média da entrada"""

    grid = source.grid
    raw = float(np.sum(values) * grid.dx)
    if not np.isfinite(raw) or raw <= 0:
        raise NumericalError(f"{label}: massa não positiva após o operador ({raw})")

    leak = max(0.0, 1.0 - raw)
    normalized = np.clip(values, 0.0, None) / raw

    if keep_mean and Config.RESTORE_MEAN:
        normalized = restore_mean(normalized, grid, moment(source, 1))

    if leak > Config.LEAK_LOG_THRESHOLD:
        log_debug("ENGINE", f"{label}: vazamento {leak:.3e}")

    previous = source.mass_leak if base_leak is None else base_leak
    return Density(grid, normalized, previous + leak, raw, label)


# ---------------------------------------------------------------------------
# Operadores públicos
# ---------------------------------------------------------------------------

def apply_S(p: Density) -> Density:
    """Densidade de eps*W com eps ~ U[0,1] e W ~ p; não crescente em x"""
    return _finalize(_s_values(p), p, f"S[{p.label}]", keep_mean=False)


def _t_from_s(p: Density, s: Density, keep_mean: bool = True) -> Density:
    return _finalize(_convolve(s.values, s.values, p.grid), p, f"T[{p.label}]", s.mass_leak, keep_mean)


def _td_from_s(p: Density, s: Density, keep_mean: bool = True) -> Density:
    values = 0.5 * _convolve(p.values, s.values, p.grid) + 0.5 * s.values
    return _finalize(values, p, f"T_D[{p.label}]", s.mass_leak, keep_mean)


def apply_T(p: Density, keep_mean: bool = True) -> Density:
    """
    Um dia de troca imediata: T[p] = S[p] * S[p].
    keep_mean=False devolve o operador discreto sem a inclinação que restaura a média.
    """
    return _t_from_s(p, apply_S(p), keep_mean)


def apply_TD(p: Density, keep_mean: bool = True) -> Density:
    """Um dia de mercado direcionado: 1/2 (p * S[p]) + 1/2 S[p]"""
    return _td_from_s(p, apply_S(p), keep_mean)


def apply_TM(p: Density, mu: float, keep_mean: bool = True) -> Density:
    """mu T_D[p] + (1 - mu) T[p]; mu=0 e mu=1 coincidem bit a bit com T e T_D"""

    mu = check_mu(mu)

    if mu == 0.0:
        return apply_T(p, keep_mean)
    if mu == 1.0:
        return apply_TD(p, keep_mean)

    s = apply_S(p)
    directed = _td_from_s(p, s, keep_mean)
    exchange = _t_from_s(p, s, keep_mean)

    return Density(
        p.grid,
        mu * directed.values + (1.0 - mu) * exchange.values,
        mu * directed.mass_leak + (1.0 - mu) * exchange.mass_leak,
        mu * directed.raw_mass + (1.0 - mu) * exchange.raw_mass,
        f"T_M({mu:g})[{p.label}]"
    )


def apply_model(p: Density, model: ModelKind) -> Density:
    if model.name == "ie":
        return apply_T(p)
    if model.name == "drm":
        return apply_TD(p)
    return apply_TM(p, model.mu)


def brute_force_T(p: Density) -> Density:
    """
    T[p] pela integral tripla explícita, sem a fatoração em convolução:
    cada nó de saída recalcula as integrais internas de S por soma direta.
    Custo O(n^3); recusa n > 1024.
    """

    grid = p.grid
    n = grid.n
    if n > Config.BRUTE_FORCE_MAX_N:
        raise ParameterError(f"brute_force_T recusa n={n} (> {Config.BRUTE_FORCE_MAX_N})")

    dx = grid.dx
    f = p.values / p.nodes
    index = np.arange(n)
    weights = (index[None, :] > index[:, None]) + 0.5 * (index[None, :] == index[:, None])
    nearest = Config.CONVOLUTION_MODE == "nearest"

    out = np.zeros(n)
    for k in range(n):
        j = np.arange(k + 1)
        s_y = dx * (weights[j] @ f)
        s_rest = dx * (weights[k - j] @ f)
        if nearest:
            out[k] = dx * np.sum(s_y * s_rest)
            continue
        s_prev = np.zeros(k + 1)
        if k > 0:
            s_prev[:k] = dx * (weights[k - 1 - j[:k]] @ f)
        out[k] = 0.5 * dx * np.sum(s_y * (s_rest + s_prev))

    return _finalize(out, p, f"T_bf[{p.label}]")


def relaxation_rate(model: ModelKind) -> float:
    """
    Fator por passo do desvio do segundo momento: M2' - M2* = r (M2 - M2*).
    Troca imediata 2/3, mercado direcionado 5/6, mistura linear em mu.
    """
    return model.mu * 5.0 / 6.0 + (1.0 - model.mu) * 2.0 / 3.0


def target_density(model: ModelKind, w: float, grid: Grid) -> Optional[Density]:
    """Equilíbrio em forma fechada, quando existe (mu = 0 ou mu = 1)"""
    if model.mu == 0.0:
        return gamma2_equilibrium(w, grid)
    if model.mu == 1.0:
        return gamma_half_equilibrium(w, grid)
    return None


# ---------------------------------------------------------------------------
# Iteração
# ---------------------------------------------------------------------------

TRACE_COLUMNS = ["t", "m1", "m_alpha", "ks_consecutive", "ks_to_target", "mass_leak"]


@dataclass
class IterationTrace:
    """Registros por passo da iteração p_{t+1} = O[p_t]"""

    model: ModelKind
    alpha: float
    records: List[Dict[str, float]] = field(default_factory=list)
    converged: bool = False
    stop_reason: str = ""

    @property
    def steps(self) -> int:
        return self.records[-1]["t"] if self.records else 0

    def append(self, record: Dict[str, float]) -> None:
        if self.records and record["t"] <= self.records[-1]["t"]:
            raise ValueError("Índices de passo devem ser estritamente crescentes")
        self.records.append(record)

    def last(self) -> Dict[str, float]:
        return self.records[-1]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.records)
        columns = list(TRACE_COLUMNS)
        if "d_alpha" in frame.columns and frame["d_alpha"].notna().any():
            columns.append("d_alpha")
        return frame.reindex(columns=columns)

    def get_summary(self) -> Dict[str, Any]:
        last = self.last() if self.records else {}
        return {
            "model": self.model.label,
            "steps": self.steps,
            "converged": self.converged,
            "stop_reason": self.stop_reason,
            "final_m1": last.get("m1"),
            "final_ks_consecutive": last.get("ks_consecutive"),
            "final_ks_to_target": last.get("ks_to_target"),
            "mass_leak": last.get("mass_leak")
        }


def iterate(p0: Density, model: ModelKind, max_steps: Optional[int] = None,
            stop_tol: Optional[float] = None, alpha: Optional[float] = None,
            with_d_alpha: bool = False, sgrid=None) -> Tuple[Density, IterationTrace]:
    """
    Aplica o operador do modelo até KS(p_t, p_{t-1}) < stop_tol ou max_steps.

    O critério de parada compara formas normalizadas; a distância ao
    equilíbrio fechado (quando existe) é só diagnóstico.
    """

    max_steps = Config.MAX_STEPS if max_steps is None else int(max_steps)
    stop_tol = Config.STOP_TOL if stop_tol is None else float(stop_tol)
    alpha = Config.ALPHA if alpha is None else float(alpha)

    if max_steps < 0:
        raise ParameterError("max_steps deve ser >= 0")
    if not stop_tol > 0:
        raise ParameterError(f"stop_tol deve ser positivo (recebido {stop_tol})")
    if abs(p0.mass() - 1.0) > 1e-9:
        raise ParameterError(f"Densidade inicial não normalizada (massa {p0.mass():.12f})")

    w = moment(p0, 1)
    try:
        target = target_density(model, w, p0.grid)
    except TruncationError as e:
        log("ENGINE", f"Sem equilíbrio de referência nesta grade: {e}")
        target = None

    target_cdf = ecdf(target, account_leak=False) if target is not None else None
    d_alpha_fn = None
    if with_d_alpha and target is not None:
        from .laplace import SGrid, d_alpha
        sgrid = sgrid or SGrid.default(w, p0.grid)
        d_alpha_fn = lambda p: d_alpha(p, target, alpha, sgrid)

    trace = IterationTrace(model, alpha)

    def record(t: int, p: Density, ks_consecutive: float) -> None:
        entry = {
            "t": t,
            "m1": moment(p, 1),
            "m_alpha": moment(p, alpha),
            "ks_consecutive": ks_consecutive,
            "ks_to_target": (ks_distance(ecdf(p, account_leak=False), target_cdf)
                             if target_cdf is not None else math.nan),
            "mass_leak": p.mass_leak
        }
        if d_alpha_fn is not None:
            entry["d_alpha"] = d_alpha_fn(p)
        trace.append(entry)

    log("ENGINE", f"Iterando {model.label} a partir de '{p0.label}' (tol={stop_tol:g}, max={max_steps})")

    current = p0
    record(0, current, math.nan)
    trace.stop_reason = "max_steps"

    for t in range(1, max_steps + 1):
        following = apply_model(current, model)

        if following.mass_leak > Config.LEAK_GUARD:
            raise TruncationError(
                f"Vazamento acumulado {following.mass_leak:.3e} > {Config.LEAK_GUARD:g} no passo {t} "
                f"- aumente x_max (atual {p0.grid.x_max:g})"
            )

        ks = ks_distance(ecdf(following, account_leak=False), ecdf(current, account_leak=False))
        record(t, following, ks)
        current = following

        log_debug("ENGINE", f"t={t} ks={ks:.3e} m1={trace.last()['m1']:.12g}")

        if ks < stop_tol:
            trace.converged = True
            trace.stop_reason = "converged"
            break

    summary = trace.get_summary()
    log("ENGINE", f"{model.label}: {summary['stop_reason']} em {summary['steps']} passos")

    return current, trace
