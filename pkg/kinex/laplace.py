"""
Métricas de Laplace - transformadas de densidades da grade, métrica d_alpha,
estudo de contração e resíduos de ponto fixo no espaço de transformadas
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import integrate

from config import Config
from utils.helpers import log

from .distributions import Density, GammaParams, Grid, moment
from .errors import ParameterError, PreconditionError
from .operators import ModelKind, apply_T

CHUNK = 64


@dataclass(frozen=True)
class SGrid:
    """Taxas s espaçadas logaritmicamente em [s_min, s_max]"""

    s_min: float
    s_max: float
    m: int

    def __post_init__(self):
        if not (np.isfinite(self.s_min) and np.isfinite(self.s_max)) or not 0 < self.s_min < self.s_max:
            raise ParameterError(f"SGrid exige 0 < s_min < s_max (recebido {self.s_min}, {self.s_max})")
        if int(self.m) != self.m or self.m < 32:
            raise ParameterError(f"SGrid exige m >= 32 (recebido {self.m})")
        object.__setattr__(self, "m", int(self.m))

    @classmethod
    def default(cls, w: float = 1.0, grid: Optional[Grid] = None, m: Optional[int] = None) -> "SGrid":
        """
        [1e-3/w, 1e3/w] com m=256; com uma grade, s_max fica limitado a
        KINEX_SGRID_RESOLUTION/dx (taxas que a grade não resolve)
        """
        s_min = Config.SGRID_MIN_FACTOR / w
        s_max = Config.SGRID_MAX_FACTOR / w
        if grid is not None:
            s_max = min(s_max, Config.SGRID_RESOLUTION / grid.dx)
        return cls(s_min, s_max, m or Config.SGRID_M)

    def refined(self, m: int) -> "SGrid":
        return SGrid(self.s_min, self.s_max, m)

    @cached_property
    def values(self) -> np.ndarray:
        values = np.geomspace(self.s_min, self.s_max, self.m)
        values.setflags(write=False)
        return values


@dataclass(frozen=True, eq=False)
class LaplaceEval:
    s_values: np.ndarray
    phat_values: np.ndarray
    source: str = ""

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"s": self.s_values, "phat": self.phat_values})


# ---------------------------------------------------------------------------
# Transformadas
# ---------------------------------------------------------------------------

def laplace_many(p: Density, s: Sequence[float]) -> np.ndarray:
    """
    Transformada exata da densidade constante por célula:
    sum_k p_k e^(-s e_k) (1 - e^(-s dx)) / s, com valor dx em s = 0
    """

    s = np.atleast_1d(np.asarray(s, dtype=float))
    if np.any(s < 0) or not np.all(np.isfinite(s)):
        raise ParameterError("Transformada de Laplace exige s >= 0 finito")

    left_edges = p.grid.edges[:-1]
    dx = p.grid.dx
    out = np.empty(s.size)

    for start in range(0, s.size, CHUNK):
        block = s[start:start + CHUNK]
        safe = np.where(block > 0, block, 1.0)
        cell_factor = np.where(block > 0, -np.expm1(-safe * dx) / safe, dx)
        out[start:start + CHUNK] = cell_factor * (np.exp(-np.outer(block, left_edges)) @ p.values)

    return out


def laplace(p: Density, s: float) -> float:
    """p^(s) = integral de e^(-sx) p(x); 1 em s = 0"""
    return float(laplace_many(p, [s])[0])


def laplace_eval(p: Density, sgrid: SGrid) -> LaplaceEval:
    return LaplaceEval(sgrid.values, laplace_many(p, sgrid.values), p.label)


def gamma_transform(params: GammaParams, s):
    """(1 + beta s)^(-alpha)"""
    return (1.0 + params.beta * np.asarray(s, dtype=float)) ** (-params.alpha)


def laplace_of_S(p: Density, s: float) -> float:
    """L[S[p]](s) = (1/s) integral_0^s p^ por quadratura adaptativa"""

    if not s > 0:
        raise ParameterError(f"laplace_of_S exige s > 0 (recebido {s})")

    value, _ = integrate.quad(lambda t: laplace(p, t), 0.0, s, limit=200, epsabs=1e-13, epsrel=1e-11)
    return value / s


def running_average(p: Density, sgrid: SGrid, refine: Optional[int] = None) -> np.ndarray:
    """
    h(s_i) = (1/s_i) integral_0^{s_i} p^ em toda a grade de s.
    Simpson composto: cada intervalo (incluindo [0, s_min]) subdividido em
    `refine` partes, depois soma acumulada.
    """

    refine = refine or Config.SIMPSON_REFINE
    if refine % 2:
        refine += 1

    s = sgrid.values
    lower = np.concatenate(([0.0], s[:-1]))
    fractions = np.linspace(0.0, 1.0, refine + 1)
    points = lower[:, None] + (s - lower)[:, None] * fractions[None, :]

    phat = laplace_many(p, points.ravel()).reshape(points.shape)
    pieces = integrate.simpson(phat, x=points, axis=1)

    return np.cumsum(pieces) / s


# ---------------------------------------------------------------------------
# Métrica d_alpha e contração
# ---------------------------------------------------------------------------

def _check_alpha(alpha: float) -> float:
    if not 1.0 < alpha < 2.0:
        raise ParameterError(f"alpha deve estar em (1, 2) (recebido {alpha})")
    return float(alpha)


def d_alpha(p: Density, q: Density, alpha: float, sgrid: Optional[SGrid] = None) -> float:
    """max_s |p^(s) - q^(s)| / s^alpha na grade de s (cota inferior do sup)"""

    alpha = _check_alpha(alpha)
    m_p, m_q = moment(p, 1), moment(q, 1)
    scale = max(m_p, m_q)
    if abs(m_p - m_q) > Config.MEAN_MATCH_TOL * scale:
        raise PreconditionError(
            f"d_alpha exige médias iguais: M1(p)={m_p:.9g}, M1(q)={m_q:.9g} (use adjust_mean)"
        )

    sgrid = sgrid or SGrid.default(scale, p.grid)
    s = sgrid.values
    diff = np.abs(laplace_many(p, s) - laplace_many(q, s))
    return float(np.max(diff / s ** alpha))


def contraction_bound(alpha: float) -> float:
    return 2.0 / (_check_alpha(alpha) + 1.0)


def _pair_rows(pair_id: int, p: Density, q: Density, alpha: float, steps: int,
               sgrid: Optional[SGrid], slack: float) -> List[dict]:
    bound = contraction_bound(alpha)
    rows = []
    previous = None

    for t in range(steps + 1):
        if t > 0:
            p, q = apply_T(p), apply_T(q)
        distance = d_alpha(p, q, alpha, sgrid)
        ratio = distance / previous if previous else math.nan
        rows.append({
            "pair_id": pair_id,
            "t": t,
            "d_alpha_t": distance,
            "ratio": ratio,
            "bound": bound,
            "within_bound": bool(math.isnan(ratio) or ratio <= bound + slack)
        })
        previous = distance

    return rows


def contraction_study(pairs: Sequence[Tuple[Density, Density]], alpha: float, steps: int,
                      sgrid: Optional[SGrid] = None, slack: float = 1e-2, jobs: int = 1) -> pd.DataFrame:
    """
    Razões d_alpha(T^{t}p, T^{t}q) / d_alpha(T^{t-1}p, T^{t-1}q) por par e passo.
    Razão indefinida (NaN) no passo 0 e quando a distância anterior é zero.
    """

    _check_alpha(alpha)
    if steps < 1:
        raise ParameterError("steps deve ser >= 1")

    log("LAPLACE", f"Estudo de contração: {len(pairs)} pares, {steps} passos, alpha={alpha:g}")

    def run(item):
        pair_id, (p, q) = item
        return _pair_rows(pair_id, p, q, alpha, steps, sgrid, slack)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        chunks = list(pool.map(run, enumerate(pairs)))

    frame = pd.DataFrame([row for chunk in chunks for row in chunk])
    violations = int((~frame["within_bound"]).sum())
    if violations:
        log("LAPLACE", f"{violations} razão(ões) acima de 2/(alpha+1) + {slack:g}")

    return frame


# ---------------------------------------------------------------------------
# Resíduos de ponto fixo
# ---------------------------------------------------------------------------

def transform_rhs(phat: np.ndarray, h: np.ndarray, model: ModelKind) -> np.ndarray:
    """
    Lado direito da equação de ponto fixo transformada:
    troca imediata h^2, mercado direcionado (p^ + 1) h / 2, mistura convexa em mu
    """
    mu = model.mu
    return mu * 0.5 * (phat + 1.0) * h + (1.0 - mu) * h ** 2


def fixed_point_residual(p: Density, model: ModelKind, sgrid: Optional[SGrid] = None) -> float:
    """sup_s |p^(s) - RHS(s)| na grade de s"""

    sgrid = sgrid or SGrid.default(moment(p, 1), p.grid)
    phat = laplace_many(p, sgrid.values)
    h = running_average(p, sgrid)

    return float(np.max(np.abs(phat - transform_rhs(phat, h, model))))
