"""
Análise do modelo misto - solução implícita para h(s), transformada de
equilíbrio, momentos fechados e comparação com ajustes Gamma
"""
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import optimize, special

from config import Config
from utils.helpers import log

from .distributions import GammaParams
from .errors import NumericalError, ParameterError
from .operators import check_mu

BRACKET_TOP = 1.0 - 1e-15


@dataclass(frozen=True)
class MixedEquilibriumSpec:
    """
    Equilíbrio do modelo misto: (1 - h)^(2-mu) = C s^(2-mu) h^2.
    A média fixa a constante: C = (w/2)^(2-mu).
    """

    mu: float
    w: float
    C: Optional[float] = None

    def __post_init__(self):
        mu = check_mu(self.mu)
        if not np.isfinite(self.w) or self.w <= 0:
            raise ParameterError(f"w deve ser positivo (recebido {self.w})")

        expected = (self.w / 2.0) ** (2.0 - mu)
        if self.C is not None and not np.isclose(self.C, expected, rtol=1e-12, atol=0.0):
            raise ParameterError(f"C inconsistente com a média: esperado (w/2)^(2-mu) = {expected:.15g}")

        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "w", float(self.w))
        object.__setattr__(self, "C", expected if self.C is None else float(self.C))

    @property
    def exponent(self) -> float:
        return 2.0 / (2.0 - self.mu)


def _deficit(spec: MixedEquilibriumSpec, s: float) -> float:
    """
    u = 1 - h resolvido por bisseção em u = a (1 - u)^q, com
    a = C^(1/(2-mu)) s = w s / 2 e q = 2/(2-mu); precisão relativa plena perto de s = 0
    """

    a = spec.C ** (1.0 / (2.0 - spec.mu)) * s
    q = spec.exponent

    def objective(u):
        return u - a * (1.0 - u) ** q

    low, high = objective(0.0), objective(BRACKET_TOP)
    if not (low < 0.0 < high):
        raise NumericalError(f"Bisseção sem troca de sinal para s={s:g} (f(0)={low:.3g}, f(1)={high:.3g})")

    return optimize.bisect(objective, 0.0, BRACKET_TOP,
                           xtol=Config.H_XTOL * min(1.0, a), rtol=Config.H_RTOL, maxiter=200)


def _check_rate(s: float) -> float:
    if not np.isfinite(s) or s < 0:
        raise ParameterError(f"s deve ser >= 0 (recebido {s})")
    return float(s)


def solve_h(spec: MixedEquilibriumSpec, s: float) -> float:
    """Raiz h em (0, 1] da equação implícita; h(0) = 1"""
    s = _check_rate(s)
    if s == 0.0:
        return 1.0
    return 1.0 - _deficit(spec, s)


def phat_mixed(spec: MixedEquilibriumSpec, s: float) -> float:
    """
    p^(s) = s h'(s) + h(s), com h' tirado da EDO
    h' = ((2 - mu)/s) (h - 1) h / (2 - mu h); sem diferenciação numérica
    """
    s = _check_rate(s)
    if s == 0.0:
        return 1.0

    u = _deficit(spec, s)
    h = 1.0 - u
    return h - (2.0 - spec.mu) * u * h / (2.0 - spec.mu * h)


def phat_mixed_many(spec: MixedEquilibriumSpec, s: Iterable[float]) -> np.ndarray:
    return np.array([phat_mixed(spec, value) for value in s])


def mixed_moment(mu: float, w: float, k: int) -> float:
    """M_1..M_4 fechados do equilíbrio misto"""

    mu = check_mu(mu)
    if k not in (1, 2, 3, 4):
        raise ParameterError(f"Momentos fechados só para k = 1..4 (recebido {k})")

    factor = {
        1: 1.0,
        2: 3.0 / (2.0 - mu),
        3: 3.0 * (4.0 + mu) / (2.0 - mu) ** 2,
        4: 5.0 * (mu ** 2 + 8.0 * mu + 12.0) / (2.0 - mu) ** 3
    }[k]
    return factor * w ** k


def gamma_moment(params: GammaParams, k: int) -> float:
    """M_k = beta^k alpha (alpha + 1) ... (alpha + k - 1)"""
    if int(k) != k or k < 1:
        raise ParameterError(f"k deve ser inteiro >= 1 (recebido {k})")
    return float(params.beta ** k * special.poch(params.alpha, k))


def gamma_fit_two_moments(mu: float, w: float) -> GammaParams:
    """Gamma com os mesmos M_1 e M_2 do equilíbrio misto"""
    mu = check_mu(mu)
    return GammaParams((2.0 - mu) / (1.0 + mu), (1.0 + mu) / (2.0 - mu) * w)


def heinsalu_shape(mu: float) -> float:
    """Forma empírica 2^(1 - 2 mu)"""
    return 2.0 ** (1.0 - 2.0 * check_mu(mu))


def fourth_moment_gap(mu: float, w: float) -> float:
    """M_4(ajuste Gamma) - M_4(equilíbrio) = mu (mu - 1) / (2 - mu)^3 w^4"""
    mu = check_mu(mu)
    return mu * (mu - 1.0) / (2.0 - mu) ** 3 * w ** 4


def moment_from_transform(spec: MixedEquilibriumSpec, k: int,
                          s0: Optional[float] = None, levels: Optional[int] = None) -> float:
    """
    M_k = (-1)^k (k+1) h^(k)(0), estimado numericamente.

    Com v(s) = u(s)/s (u = 1 - h): h^(k)(0) = -k v^(k-1)(0). A derivada de v
    vem de diferenças progressivas em delta, 2 delta, ... (nunca em s = 0),
    com delta_j = s0 / 2^j e extrapolação de Richardson.
    """

    if k not in (1, 2, 3, 4):
        raise ParameterError(f"k deve estar em 1..4 (recebido {k})")

    s0 = (Config.RICHARDSON_S0 / spec.w) if s0 is None else s0
    levels = levels or Config.RICHARDSON_LEVELS
    order = k - 1

    def v(s):
        return _deficit(spec, s) / s

    def forward_difference(delta):
        samples = np.array([v((i + 1) * delta) for i in range(order + 1)])
        return np.diff(samples, n=order)[0] / delta ** order if order else samples[0]

    table: List[List[float]] = []
    for j in range(levels):
        row = [forward_difference(s0 / 2 ** j)]
        for m in range(1, j + 1):
            row.append((2 ** m * row[m - 1] - table[j - 1][m - 1]) / (2 ** m - 1))
        table.append(row)

    diagonal = [table[j][j] for j in range(levels)]
    gaps = [abs(diagonal[j] - diagonal[j - 1]) for j in range(1, levels)]
    best = int(np.argmin(gaps)) + 1
    estimate = diagonal[best]

    if gaps[best - 1] > Config.RICHARDSON_RTOL * max(1.0, abs(estimate)):
        raise NumericalError(f"Extrapolação de Richardson não convergiu (k={k}, diferença {gaps[best - 1]:.3g})")

    return (-1.0) ** (k + 1) * (k + 1) * k * estimate


def shape_comparison(mus: Sequence[float]) -> pd.DataFrame:
    """Formas do ajuste de dois momentos e da forma empírica, com a diferença"""
    rows = []
    for mu in mus:
        alpha_fit = gamma_fit_two_moments(mu, 1.0).alpha
        alpha_h = heinsalu_shape(mu)
        rows.append({"mu": float(mu), "alpha_fit": alpha_fit, "alpha_heinsalu": alpha_h,
                     "difference": alpha_fit - alpha_h})
    return pd.DataFrame(rows)


MOMENT_COLUMNS = ["mu", "k", "M_mixed", "M_gamma_fit", "gap", "alpha_fit", "alpha_heinsalu"]


def moment_rows(mu: float, w: float = 1.0, ks: Sequence[int] = (1, 2, 3, 4)) -> List[dict]:
    fit = gamma_fit_two_moments(mu, w)
    alpha_h = heinsalu_shape(mu)
    rows = []
    for k in ks:
        m_mixed = mixed_moment(mu, w, k)
        m_fit = gamma_moment(fit, k)
        rows.append({
            "mu": float(mu),
            "k": int(k),
            "M_mixed": m_mixed,
            "M_gamma_fit": m_fit,
            "gap": m_fit - m_mixed,
            "alpha_fit": fit.alpha,
            "alpha_heinsalu": alpha_h
        })
    return rows


def moment_table(mus: Sequence[float], w: float = 1.0, ks: Sequence[int] = (1, 2, 3, 4)) -> pd.DataFrame:
    """Tabela mu,k,M_mixed,M_gamma_fit,gap,alpha_fit,alpha_heinsalu"""
    rows = [row for mu in mus for row in moment_rows(mu, w, ks)]
    log("MIXED", f"Tabela de momentos: {len(mus)} valores de mu, k={list(ks)}")
    return pd.DataFrame(rows, columns=MOMENT_COLUMNS)
