"""
Simulação de agentes - população finita trocando riqueza em pares diários

Cada dia todos os agentes são pareados (permutação uniforme + pares
adjacentes) e cada par aplica a regra do modelo. O gerador é Philox
(contador) chaveado por (semente, dia): o sorteio do par i depende só de
(semente, dia, i), independente da ordem de execução.
"""
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Union

import numpy as np
import pandas as pd

from config import Config
from utils.helpers import log, log_debug

from .distributions import Density, EmpiricalSample, MomentReport
from .errors import InputError, ParameterError
from .operators import ModelKind

INIT_STREAM = 0
DAY_STREAM = 1
RNG_DESCRIPTION = ("numpy Philox, SeedSequence([seed, stream, day]); um fluxo por dia, sem chave por par: "
                   "a linha i do bloco (pares, 4) pertence ao i-ésimo par da permutação do dia")


@dataclass(frozen=True, eq=False)
class Population:
    """Riquezas de N agentes (N par), total fixado na construção e dia t"""

    wealths: np.ndarray
    total: Optional[float] = None
    t: int = 0

    def __post_init__(self):
        wealths = np.array(self.wealths, dtype=float).ravel()
        n = wealths.size
        if n < 2 or n % 2:
            raise ParameterError(f"População exige N par >= 2 (recebido {n})")
        if not np.all(np.isfinite(wealths)) or np.any(wealths < 0):
            raise ParameterError("Riquezas devem ser finitas e >= 0")
        wealths.setflags(write=False)
        object.__setattr__(self, "wealths", wealths)
        if self.total is None:
            object.__setattr__(self, "total", float(np.sum(wealths)))

    @property
    def size(self) -> int:
        return self.wealths.size

    def conservation_error(self) -> float:
        return abs(float(np.sum(self.wealths)) - self.total)


class DayStream:
    """Sorteios de um dia: permutação e 4 uniformes por par"""

    def __init__(self, generator: np.random.Generator):
        self.generator = generator

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def pair_uniforms(self, n_pairs: int) -> np.ndarray:
        """Colunas: eps do agente de menor índice, eps do outro, ramo, perdedor"""
        return self.generator.random((n_pairs, 4))


class CounterStream:
    """Fluxos independentes por dia derivados de uma semente de 64 bits"""

    def __init__(self, seed: int):
        if int(seed) != seed or seed < 0 or seed >= 2 ** 64:
            raise ParameterError(f"Semente deve ser inteiro em [0, 2^64) (recebido {seed})")
        self.seed = int(seed)

    def _generator(self, *key: int) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(np.random.SeedSequence([self.seed, *key])))

    def for_day(self, day: int) -> DayStream:
        return DayStream(self._generator(DAY_STREAM, day))

    def for_initial(self) -> np.random.Generator:
        return self._generator(INIT_STREAM)


def step_day(pop: Population, model: ModelKind, stream) -> Population:
    """
    Um dia de trocas. Cada par é ordenado pelo menor índice de agente.
    Troca imediata: cada um envia eps_i x_i ao outro.
    Direcionada (prob. mu): o perdedor (menor índice se u < 1/2) envia eps x.
    """

    n = pop.size
    order = np.asarray(stream.permutation(n))
    first, second = order[0::2], order[1::2]
    low, high = np.minimum(first, second), np.maximum(first, second)

    draws = np.asarray(stream.pair_uniforms(n // 2), dtype=float)
    eps_low, eps_high, branch_u, loser_u = draws.T

    x_low = pop.wealths[low]
    x_high = pop.wealths[high]

    directed = branch_u < model.drm_probability
    low_loses = loser_u < 0.5

    # transferências: x' = x - t_próprio + t_outro (conservação e positividade)
    give_low = np.where(directed, np.where(low_loses, eps_low * x_low, 0.0), eps_low * x_low)
    give_high = np.where(directed, np.where(low_loses, 0.0, eps_low * x_high), eps_high * x_high)

    wealths = np.empty(n)
    wealths[low] = (x_low - give_low) + give_high
    wealths[high] = (x_high - give_high) + give_low

    return Population(wealths, pop.total, pop.t + 1)


# ---------------------------------------------------------------------------
# Configuração e execução
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Equal:
    w: float = 1.0

    def describe(self) -> str:
        return f"equal:{self.w:g}"


@dataclass(frozen=True, eq=False)
class FromDensity:
    density: Density

    def describe(self) -> str:
        return f"density:{self.density.label or 'custom'}"


@dataclass(frozen=True)
class SimConfig:
    model: ModelKind
    n_agents: int
    days: int
    seed: int = Config.DEFAULT_SEED
    initial: Union[Equal, FromDensity] = Equal(1.0)
    record_every: int = 1

    def __post_init__(self):
        if int(self.n_agents) != self.n_agents or self.n_agents < 2 or self.n_agents % 2:
            raise ParameterError(f"N deve ser par e >= 2 (recebido {self.n_agents})")
        if int(self.days) != self.days or self.days < 0:
            raise ParameterError(f"days deve ser >= 0 (recebido {self.days})")
        if int(self.record_every) != self.record_every or self.record_every < 1:
            raise ParameterError(f"record_every deve ser >= 1 (recebido {self.record_every})")
        if isinstance(self.initial, Equal) and not self.initial.w > 0:
            raise ParameterError(f"Riqueza inicial deve ser positiva (recebido {self.initial.w})")
        CounterStream(self.seed)


@dataclass
class RunManifest:
    """Registro completo para reproduzir uma execução bit a bit"""

    model: str
    mu: float
    n_agents: int
    days: int
    seed: int
    record_every: int
    initial: str
    code_version: str = Config.CODE_VERSION
    pairing_protocol: str = Config.PAIRING_PROTOCOL
    rng: str = RNG_DESCRIPTION
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class Snapshot:
    day: int
    wealths: np.ndarray


@dataclass
class SimulationResult:
    sample: EmpiricalSample
    snapshots: List[Snapshot]
    manifest: RunManifest
    elapsed_seconds: float = 0.0

    def snapshots_frame(self) -> pd.DataFrame:
        """Formato longo day,agent_id,wealth"""
        frames = [pd.DataFrame({"day": snap.day, "agent_id": np.arange(snap.wealths.size), "wealth": snap.wealths})
                  for snap in self.snapshots]
        return pd.concat(frames, ignore_index=True)

    def histogram_frame(self, bins: int = 100, x_max: Optional[float] = None) -> pd.DataFrame:
        """day,bin_left,bin_right,count com bordas comuns a todos os instantâneos"""
        upper = x_max or max(float(snap.wealths.max()) for snap in self.snapshots) or 1.0
        edges = np.linspace(0.0, upper, bins + 1)
        rows = []
        for snap in self.snapshots:
            counts, _ = np.histogram(np.clip(snap.wealths, 0.0, upper), bins=edges)
            rows.append(pd.DataFrame({"day": snap.day, "bin_left": edges[:-1],
                                      "bin_right": edges[1:], "count": counts}))
        return pd.concat(rows, ignore_index=True)

    def gini_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"day": [s.day for s in self.snapshots],
                             "gini": [gini(s.wealths) for s in self.snapshots]})


def initial_population(config: SimConfig, stream: CounterStream) -> Population:
    """Equal(w) ou amostragem por CDF inversa de uma densidade da grade"""

    n = config.n_agents
    if isinstance(config.initial, Equal):
        return Population(np.full(n, float(config.initial.w)))

    density = config.initial.density
    if abs(density.mass() - 1.0) > 1e-9:
        raise InputError(f"FromDensity exige densidade normalizada (massa {density.mass():.12f})")

    grid = density.grid
    cumulative = np.concatenate(([0.0], np.cumsum(density.cell_masses)))
    cumulative /= cumulative[-1]
    u = stream.for_initial().random(n)
    return Population(np.interp(u, cumulative, grid.edges))


def run(config: SimConfig) -> SimulationResult:
    """Executa `days` dias; instantâneos no dia 0, a cada record_every e no final"""

    started = time.time()
    stream = CounterStream(config.seed)
    pop = initial_population(config, stream)

    log("SIM", f"{config.model.label}: N={config.n_agents}, dias={config.days}, semente={config.seed}")

    snapshots = [Snapshot(0, pop.wealths)]
    for day in range(1, config.days + 1):
        pop = step_day(pop, config.model, stream.for_day(day))
        if day % config.record_every == 0 or day == config.days:
            snapshots.append(Snapshot(day, pop.wealths))
            log_debug("SIM", f"dia {day}: erro de conservação {pop.conservation_error():.3e}")

    manifest = RunManifest(
        model=config.model.name,
        mu=config.model.mu,
        n_agents=config.n_agents,
        days=config.days,
        seed=config.seed,
        record_every=config.record_every,
        initial=config.initial.describe(),
        extra={"final_gini": gini(pop.wealths), "conservation_error": pop.conservation_error()}
    )

    elapsed = time.time() - started
    log("SIM", f"Concluído em {elapsed:.1f}s (Gini final {manifest.extra['final_gini']:.4f})")

    return SimulationResult(EmpiricalSample(pop.wealths, config.seed), snapshots, manifest, elapsed)


# ---------------------------------------------------------------------------
# Estatísticas da amostra
# ---------------------------------------------------------------------------

def empirical_moments(sample: Union[EmpiricalSample, np.ndarray], orders: Iterable[float]) -> MomentReport:
    """Médias amostrais de x^k"""

    wealths = sample.wealths if isinstance(sample, EmpiricalSample) else np.asarray(sample, dtype=float)
    if wealths.size == 0:
        raise InputError("Momentos de amostra vazia")

    orders = tuple(orders)
    return MomentReport(orders, tuple(float(np.mean(wealths ** k)) for k in orders), "monte-carlo")


def gini(wealths: np.ndarray) -> float:
    """Coeficiente de Gini pela soma ordenada"""
    x = np.sort(np.asarray(wealths, dtype=float))
    n = x.size
    total = x.sum()
    if n == 0 or total == 0:
        return 0.0
    b = np.sum(x * (n - np.arange(n))) / (n * total)
    return float(1.0 + 1.0 / n - 2.0 * b)
