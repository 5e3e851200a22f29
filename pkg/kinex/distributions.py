"""
Núcleo de distribuições - grades, densidades discretas, momentos e CDFs empíricas

Densidades vivem numa grade uniforme de pontos médios x_k = (k + 1/2)dx.
Os valores de cada célula são médias exatas (diferenças da CDF), de modo que
a massa de cada célula é exata e a CDF de uma densidade é exata nas bordas.
"""
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Union

import numpy as np
import pandas as pd
from scipy import stats

from config import Config
from utils.helpers import log, log_debug

from .errors import InputError, ParameterError, SupportError, TruncationError

MIN_CELL_MASS = 0.999


def _readonly(values: np.ndarray) -> np.ndarray:
    values.setflags(write=False)
    return values


@dataclass(frozen=True)
class Grid:
    """Discretização uniforme de [0, x_max] com n células"""

    x_max: float
    n: int

    def __post_init__(self):
        if not np.isfinite(self.x_max) or self.x_max <= 0:
            raise ParameterError(f"x_max deve ser positivo e finito (recebido {self.x_max})")
        if int(self.n) != self.n or self.n < Config.MIN_GRID_N:
            raise ParameterError(f"n deve ser inteiro >= {Config.MIN_GRID_N} (recebido {self.n})")
        object.__setattr__(self, "x_max", float(self.x_max))
        object.__setattr__(self, "n", int(self.n))

    @classmethod
    def default(cls, w: float = 1.0, n: Optional[int] = None, x_max: Optional[float] = None) -> "Grid":
        """Grade padrão: x_max = KINEX_GRID_XMAX_FACTOR * w, n = KINEX_GRID_N"""
        if not np.isfinite(w) or w <= 0:
            raise ParameterError(f"w deve ser positivo (recebido {w})")
        return cls(x_max if x_max is not None else Config.GRID_XMAX_FACTOR * w,
                   n if n is not None else Config.GRID_N)

    @property
    def dx(self) -> float:
        return self.x_max / self.n

    @cached_property
    def nodes(self) -> np.ndarray:
        return _readonly((np.arange(self.n) + 0.5) * self.dx)

    @cached_property
    def edges(self) -> np.ndarray:
        return _readonly(np.arange(self.n + 1) * self.dx)

    def nearest_index(self, x: float) -> int:
        """Índice da célula que contém x"""
        return int(min(max(np.floor(x / self.dx), 0), self.n - 1))

    def scaled(self, factor: float) -> "Grid":
        return Grid(self.x_max * factor, self.n)


@dataclass(frozen=True)
class GammaParams:
    """Parâmetros (forma alpha, escala beta) de uma Gamma"""

    alpha: float
    beta: float

    def __post_init__(self):
        for name, value in (("alpha", self.alpha), ("beta", self.beta)):
            if not np.isfinite(value) or value <= 0:
                raise ParameterError(f"{name} deve ser positivo e finito (recebido {value})")
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", float(self.beta))

    @property
    def mean(self) -> float:
        return self.alpha * self.beta

    def cdf(self, x):
        return stats.gamma.cdf(x, a=self.alpha, scale=self.beta)


@dataclass(frozen=True, eq=False)
class Density:
    """
    Densidade discreta normalizada numa grade.

    mass_leak acumula a probabilidade removida por truncamento desde a
    construção; raw_mass guarda a massa antes da última renormalização.
    """

    grid: Grid
    values: np.ndarray
    mass_leak: float = 0.0
    raw_mass: float = 1.0
    label: str = ""

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.n,):
            raise InputError(f"Esperados {self.grid.n} valores, recebidos {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InputError("Densidade com valores não finitos")
        if np.any(values < 0):
            raise InputError(f"Densidade com valores negativos (mínimo {values.min():.3g})")
        if self.mass_leak < 0:
            raise InputError("mass_leak não pode ser negativo")
        object.__setattr__(self, "values", _readonly(values))

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def cell_masses(self) -> np.ndarray:
        return self.values * self.grid.dx

    def mass(self) -> float:
        return float(np.sum(self.values) * self.grid.dx)

    def mean(self) -> float:
        return moment(self, 1)

    def with_values(self, values: np.ndarray, label: Optional[str] = None, **changes) -> "Density":
        return Density(self.grid, values,
                       changes.get("mass_leak", self.mass_leak),
                       changes.get("raw_mass", self.raw_mass),
                       self.label if label is None else label)


@dataclass(frozen=True, eq=False)
class EmpiricalSample:
    """Multiconjunto de riquezas (saída de Monte Carlo)"""

    wealths: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        wealths = np.array(self.wealths, dtype=float).ravel()
        if not np.all(np.isfinite(wealths)):
            raise InputError("Amostra com valores não finitos")
        if np.any(wealths < 0):
            raise InputError("Amostra com riquezas negativas")
        object.__setattr__(self, "wealths", _readonly(wealths))

    def __len__(self) -> int:
        return self.wealths.size


@dataclass(frozen=True)
class MomentReport:
    """Momentos M_k por ordem, com o método usado"""

    orders: tuple
    values: tuple
    method: str = "quadrature"  # quadrature | monte-carlo | closed-form

    def value(self, k: float) -> float:
        for order, value in zip(self.orders, self.values):
            if order == k:
                return value
        raise KeyError(k)

    def as_dict(self) -> Dict[float, float]:
        return dict(zip(self.orders, self.values))


# ---------------------------------------------------------------------------
# Forma fechada da família Gamma
# ---------------------------------------------------------------------------

def gamma_pdf(params: GammaParams, x):
    """q(x) = x^(a-1) e^(-x/b) / (b^a Gamma(a)); +inf em x = 0 quando alpha < 1"""

    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr < 0) or not np.all(np.isfinite(x_arr)):
        raise ParameterError("gamma_pdf exige x >= 0 finito")

    values = stats.gamma.pdf(x_arr, a=params.alpha, scale=params.beta)
    if params.alpha < 1:
        values = np.where(x_arr == 0, np.inf, values)

    return float(values) if np.ndim(values) == 0 else values


def gamma2_cdf(x, w: float = 1.0):
    """CDF fechada da Gamma(2, w/2): 1 - (1 + 2x/w) e^(-2x/w)"""
    z = 2.0 * np.asarray(x, dtype=float) / w
    return 1.0 - (1.0 + z) * np.exp(-z)


# ---------------------------------------------------------------------------
# Construtores de densidade (massas exatas por célula)
# ---------------------------------------------------------------------------

def density_from_cdf(cdf: Callable[[np.ndarray], np.ndarray], grid: Grid, label: str = "") -> Density:
    """Constrói a densidade pelas diferenças da CDF nas bordas das células"""

    edge_cdf = np.asarray(cdf(grid.edges), dtype=float)
    masses = np.clip(np.diff(edge_cdf), 0.0, None)
    raw = float(masses.sum())

    if raw < MIN_CELL_MASS:
        raise TruncationError(
            f"Grade retém apenas {raw:.6f} da massa de '{label or 'densidade'}' "
            f"(x_max={grid.x_max:g}) - aumente x_max"
        )

    leak = max(0.0, 1.0 - raw)
    if leak > Config.LEAK_LOG_THRESHOLD:
        log_debug("DIST", f"{label}: massa truncada {leak:.3e}")

    return Density(grid, masses / (raw * grid.dx), mass_leak=leak, raw_mass=raw, label=label)


def gamma_density(params: GammaParams, grid: Grid, label: Optional[str] = None) -> Density:
    return density_from_cdf(params.cdf, grid, label or f"gamma({params.alpha:g},{params.beta:g})")


def _check_mean(w: float) -> float:
    if not np.isfinite(w) or w <= 0:
        raise ParameterError(f"Riqueza média w deve ser positiva (recebido {w})")
    return float(w)


def gamma2_equilibrium(w: float, grid: Optional[Grid] = None) -> Density:
    """
    Equilíbrio da troca imediata: p_w(x) = (4/w^2) x e^(-2x/w).
    Os valores são médias por célula (massa da célula / dx), não amostras p_w(x_k);
    as duas coisas diferem onde a densidade é curva, sobretudo perto de zero.
    """
    w = _check_mean(w)
    return gamma_density(GammaParams(2.0, w / 2.0), grid or Grid.default(w), f"gamma2(w={w:g})")


def gamma_half_equilibrium(w: float, grid: Optional[Grid] = None) -> Density:
    """
    Equilíbrio do mercado direcionado: Gamma(1/2, 2w), em médias por célula.
    A singularidade integrável em zero fica toda na primeira célula, que por isso
    fica acima de p(x_0).
    """
    w = _check_mean(w)
    return gamma_density(GammaParams(0.5, 2.0 * w), grid or Grid.default(w), f"gammahalf(w={w:g})")


def exponential_density(mean: float, grid: Optional[Grid] = None) -> Density:
    mean = _check_mean(mean)
    return gamma_density(GammaParams(1.0, mean), grid or Grid.default(mean), f"exp({mean:g})")


def uniform_density(a: float, b: float, grid: Optional[Grid] = None) -> Density:
    """Uniforme em [a, b], 0 <= a < b"""

    if not (np.isfinite(a) and np.isfinite(b)) or a < 0 or b <= a:
        raise ParameterError(f"Uniforme exige 0 <= a < b (recebido a={a}, b={b})")

    grid = grid or Grid.default((a + b) / 2.0)

    def cdf(x):
        return np.clip((x - a) / (b - a), 0.0, 1.0)

    return density_from_cdf(cdf, grid, f"uniform({a:g},{b:g})")


def spike_density(x_star: float, grid: Grid) -> Density:
    """Toda a massa na célula que contém x_star"""

    if not np.isfinite(x_star) or x_star < 0 or x_star >= grid.x_max:
        raise ParameterError(f"Pico deve estar em [0, x_max) (recebido {x_star})")

    values = np.zeros(grid.n)
    values[grid.nearest_index(x_star)] = 1.0 / grid.dx
    return Density(grid, values, label=f"spike({x_star:g})")


def random_test_density(seed: int, grid: Grid, w: float = 1.0) -> Density:
    """Mistura aleatória (semente fixa) de 1 a 3 Gammas com média exatamente w"""

    rng = np.random.default_rng(seed)
    n_components = int(rng.integers(1, 4))
    shapes = rng.uniform(1.0, 4.0, n_components)
    means = rng.uniform(0.4, 1.8, n_components)
    weights = rng.dirichlet(np.ones(n_components))

    scale_fix = w / float(np.dot(weights, means))
    components = [GammaParams(a, m * scale_fix / a) for a, m in zip(shapes, means)]

    def cdf(x):
        return sum(wt * c.cdf(x) for wt, c in zip(weights, components))

    density = density_from_cdf(cdf, grid, f"random(seed={seed})")
    return adjust_mean(density, w)


# ---------------------------------------------------------------------------
# Momentos e correção de média
# ---------------------------------------------------------------------------

def moment(p: Density, k: float) -> float:
    """M_k = sum x_k^k p_k dx (regra do ponto médio)"""
    if not np.isfinite(k) or k < 0:
        raise ParameterError(f"Ordem do momento deve ser >= 0 (recebido {k})")
    return float(np.sum(p.nodes ** k * p.values) * p.grid.dx)


def moment_report(p: Density, orders: Iterable[float]) -> MomentReport:
    orders = tuple(orders)
    return MomentReport(orders, tuple(moment(p, k) for k in orders), "quadrature")


def restore_mean(values: np.ndarray, grid: Grid, target: float, max_tilt: float = 0.5) -> np.ndarray:
    """
    Inclinação de primeira ordem v(x)(1 + c(x - m)) que leva a média a target
    sem alterar a massa. Valores devem estar normalizados.
    Se a correção exigir |c(x - m)| > max_tilt, devolve os valores intactos.
    """

    x = grid.nodes
    dx = grid.dx
    m = float(np.sum(x * values) * dx)
    centered = x - m
    var = float(np.sum(centered ** 2 * values) * dx)

    if var <= 0 or m == target:
        return values

    c = (target - m) / var
    tilt = np.abs(c) * np.max(np.abs(centered[values > 0]))
    if tilt > max_tilt:
        log("DIST", f"Correção de média ignorada (inclinação {tilt:.3g} > {max_tilt})")
        return values

    return values * (1.0 + c * centered)


def adjust_mean(p: Density, w: float) -> Density:
    """Mesma forma, média exatamente w (para pares de mesma média em d_alpha)"""
    w = _check_mean(w)
    return p.with_values(restore_mean(p.values, p.grid, w))


# ---------------------------------------------------------------------------
# CDFs e distância KS
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CumulativeFunction:
    """
    Função cumulativa contínua à direita.

    kind="step": degraus nas observações ordenadas (amostra).
    kind="linear": linear por partes entre bordas de células (densidade).
    """

    kind: str
    xs: np.ndarray
    ys: Optional[np.ndarray] = None
    support: Optional[float] = None

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "step":
            return np.searchsorted(self.xs, x, side="right") / self.xs.size
        return np.interp(x, self.xs, self.ys, left=0.0, right=self.ys[-1])

    def left_limit(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "step":
            return np.searchsorted(self.xs, x, side="left") / self.xs.size
        return self(x)

    @property
    def breakpoints(self) -> np.ndarray:
        return self.xs


def ecdf(source: Union[EmpiricalSample, Density, np.ndarray, List[float]],
         account_leak: bool = True) -> CumulativeFunction:
    """
    CDF de uma amostra (degraus) ou de uma densidade (linear por partes).

    Para densidades, F(x_max) = 1 - mass_leak quando account_leak=True;
    com account_leak=False compara-se apenas a forma normalizada.
    """

    if isinstance(source, Density):
        grid = source.grid
        cumulative = np.concatenate(([0.0], np.cumsum(source.values) * grid.dx))
        cumulative /= cumulative[-1]
        if account_leak:
            cumulative *= (1.0 - source.mass_leak)
        return CumulativeFunction("linear", grid.edges, _readonly(cumulative), grid.x_max)

    wealths = source.wealths if isinstance(source, EmpiricalSample) else np.asarray(source, dtype=float)
    if wealths.size == 0:
        raise InputError("ECDF de amostra vazia")

    return CumulativeFunction("step", _readonly(np.sort(wealths)))


def ks_distance(a: CumulativeFunction, b: CumulativeFunction) -> float:
    """sup |a - b| avaliado nos pontos de quebra de ambas (valores e limites à esquerda)"""

    if a.support is not None and b.support is not None and not np.isclose(a.support, b.support, rtol=1e-12):
        raise SupportError(f"Suportes diferentes: [0, {a.support:g}] vs [0, {b.support:g}]")

    points = np.union1d(a.breakpoints, b.breakpoints)
    right = np.abs(a(points) - b(points))
    left = np.abs(a.left_limit(points) - b.left_limit(points))

    return float(min(1.0, max(right.max(initial=0.0), left.max(initial=0.0))))


# ---------------------------------------------------------------------------
# Serialização
# ---------------------------------------------------------------------------

def density_to_frame(p: Density) -> pd.DataFrame:
    return pd.DataFrame({"x": p.nodes, "p": p.values})


def density_from_csv(path: Union[str, Path], mass_tol: float = 1e-9) -> Density:
    """
    Lê CSV 'x,p' (um nó por linha) e reconstrói grade e densidade.
    O formato não guarda mass_leak nem label: o vazamento volta como 0
    (fica no manifest.json da execução) e o label vira o nome do arquivo.
    """

    frame = pd.read_csv(path, float_precision="round_trip")
    if list(frame.columns) != ["x", "p"]:
        raise InputError(f"Cabeçalho esperado 'x,p', encontrado {list(frame.columns)}")

    x = frame["x"].to_numpy(dtype=float)
    if x.size < Config.MIN_GRID_N:
        raise InputError(f"CSV com {x.size} nós (mínimo {Config.MIN_GRID_N})")

    dx = 2.0 * x[0]
    grid = Grid(dx * x.size, x.size)
    if not np.allclose(x, grid.nodes, rtol=1e-9, atol=1e-12 * grid.x_max):
        raise InputError("Nós do CSV não formam uma grade de pontos médios uniforme")

    density = Density(grid, frame["p"].to_numpy(dtype=float), label=Path(path).stem)
    if abs(density.mass() - 1.0) > mass_tol:
        raise InputError(f"Densidade não normalizada (massa {density.mass():.12f})")

    return density
