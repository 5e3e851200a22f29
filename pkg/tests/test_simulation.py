"""
Testes da simulação de agentes (regras de troca, reprodutibilidade e validação cruzada)
"""
import sys
import os
import math
sys.path.append(os.path.dirname(os.path.dirname(__file__)))

import numpy as np

from kinex.distributions import (Density, EmpiricalSample, Grid, ecdf, gamma2_equilibrium,
                                 gamma_half_equilibrium, ks_distance, uniform_density)
from kinex.errors import InputError, ParameterError
from kinex.operators import DIRECTED_RANDOM_MARKET, IMMEDIATE_EXCHANGE, ModelKind, apply_model
from kinex.simulation import (CounterStream, Equal, FromDensity, Population, SimConfig, empirical_moments,
                              gini, run, step_day)


def _raises(exc_type, fn, *args, **kwargs):
    try:
        fn(*args, **kwargs)
    except exc_type:
        return True
    return False


class FixedStream:
    """Fluxo com sorteios fixos: pareamento identidade e uniformes dados"""

    def __init__(self, draws):
        self.draws = np.atleast_2d(np.asarray(draws, dtype=float))

    def permutation(self, n):
        return np.arange(n)

    def pair_uniforms(self, n_pairs):
        return self.draws[:n_pairs]


def test_population():
    """N par >= 2, riquezas finitas e não negativas"""
    print("=== TESTE: Population ===")

    pop = Population([1.0, 2.0, 3.0, 4.0])
    assert pop.size == 4
    assert pop.total == 10.0
    assert pop.conservation_error() == 0.0

    assert _raises(ParameterError, Population, np.ones(3))
    assert _raises(ParameterError, Population, [1.0])
    assert _raises(ParameterError, Population, [1.0, -0.5])
    assert _raises(ParameterError, SimConfig, IMMEDIATE_EXCHANGE, 3, 10)
    assert _raises(ParameterError, SimConfig, IMMEDIATE_EXCHANGE, 4, -1)
    assert _raises(ParameterError, SimConfig, IMMEDIATE_EXCHANGE, 4, 1, initial=Equal(0.0))
    assert SimConfig(IMMEDIATE_EXCHANGE, 4, 1, initial=Equal(2.0)).initial.describe() == "equal:2"
    assert _raises(ParameterError, CounterStream, -1)
    assert _raises(ParameterError, CounterStream, 2 ** 64)
    print("Validação OK")


def test_step_rules():
    """Regras de um par com sorteios fixos"""
    print("\n=== TESTE: Regras de troca ===")

    # troca imediata: cada um envia eps_i x_i
    pop = Population([1.0, 1.0])
    out = step_day(pop, IMMEDIATE_EXCHANGE, FixedStream([0.5, 0.5, 0.9, 0.9]))
    assert np.allclose(out.wealths, [1.0, 1.0])
    out = step_day(pop, IMMEDIATE_EXCHANGE, FixedStream([0.3, 0.6, 0.9, 0.9]))
    assert np.allclose(out.wealths, [1.3, 0.7])
    assert out.t == 1

    # mercado direcionado: o perdedor envia eps x do próprio saldo
    pop = Population([1.0, 0.0])
    out = step_day(pop, DIRECTED_RANDOM_MARKET, FixedStream([0.3, 0.8, 0.1, 0.2]))
    assert np.allclose(out.wealths, [0.7, 0.3])
    out = step_day(pop, DIRECTED_RANDOM_MARKET, FixedStream([0.3, 0.8, 0.1, 0.7]))
    assert np.allclose(out.wealths, [1.0, 0.0])

    # mistura: o ramo decide a regra
    pop = Population([1.0, 1.0])
    mixed = ModelKind.mixed(0.5)
    assert np.allclose(step_day(pop, mixed, FixedStream([0.3, 0.6, 0.4, 0.2])).wealths, [0.7, 1.3])
    assert np.allclose(step_day(pop, mixed, FixedStream([0.3, 0.6, 0.6, 0.2])).wealths, [1.3, 0.7])


def test_conservation():
    """Total conservado e riquezas não negativas após muitos dias"""
    print("\n=== TESTE: Conservação ===")

    for model in (IMMEDIATE_EXCHANGE, DIRECTED_RANDOM_MARKET, ModelKind.mixed(0.3)):
        result = run(SimConfig(model, 1000, 50, seed=5, record_every=10))
        wealths = result.sample.wealths
        print(f"  {model.label}: erro {result.manifest.extra['conservation_error']:.2e}")
        assert abs(wealths.sum() - 1000.0) <= 1e-9 * 1000.0
        assert wealths.min() >= 0.0
        assert [s.day for s in result.snapshots] == [0, 10, 20, 30, 40, 50]


def test_determinism():
    """Mesma semente, mesmo resultado bit a bit; mixed(0) e mixed(1) iguais a ie e drm"""
    print("\n=== TESTE: Reprodutibilidade ===")

    def final(model, seed=42):
        return run(SimConfig(model, 200, 25, seed=seed)).sample.wealths

    assert np.array_equal(final(IMMEDIATE_EXCHANGE), final(IMMEDIATE_EXCHANGE))
    assert not np.array_equal(final(IMMEDIATE_EXCHANGE), final(IMMEDIATE_EXCHANGE, seed=43))
    assert np.array_equal(final(ModelKind.mixed(0.0)), final(IMMEDIATE_EXCHANGE))
    assert np.array_equal(final(ModelKind.mixed(1.0)), final(DIRECTED_RANDOM_MARKET))


def test_snapshots_and_frames():
    """Instantâneos, histograma e Gini"""
    print("\n=== TESTE: Saídas da simulação ===")

    result = run(SimConfig(IMMEDIATE_EXCHANGE, 100, 10, seed=1, record_every=4))
    assert [s.day for s in result.snapshots] == [0, 4, 8, 10]

    frame = result.snapshots_frame()
    assert list(frame.columns) == ["day", "agent_id", "wealth"]
    assert len(frame) == 4 * 100

    hist = result.histogram_frame(bins=20)
    assert (hist.groupby("day")["count"].sum() == 100).all()

    ginis = result.gini_frame()
    assert abs(ginis["gini"].iloc[0]) < 1e-12
    assert ginis["gini"].iloc[-1] > 0.2

    manifest = result.manifest.to_dict()
    assert manifest["seed"] == 1
    assert manifest["initial"] == "equal:1"


def test_initial_from_density():
    """Amostragem por CDF inversa de uma densidade da grade"""
    print("\n=== TESTE: População inicial por densidade ===")

    p = uniform_density(0.0, 2.0)
    result = run(SimConfig(IMMEDIATE_EXCHANGE, 20000, 0, seed=3, initial=FromDensity(p)))
    wealths = result.sample.wealths
    assert abs(wealths.mean() - 1.0) < 0.02
    assert wealths.max() <= 2.0 + p.grid.dx

    bad = Density(p.grid, 2.0 * p.values)
    assert _raises(InputError, run, SimConfig(IMMEDIATE_EXCHANGE, 10, 1, initial=FromDensity(bad)))


def test_empirical_moments_and_gini():
    """Momentos amostrais e Gini em casos pequenos"""
    print("\n=== TESTE: Momentos amostrais e Gini ===")

    report = empirical_moments(EmpiricalSample([1.0, 2.0, 3.0]), [1, 2])
    assert report.method == "monte-carlo"
    assert math.isclose(report.value(1), 2.0)
    assert math.isclose(report.value(2), 14.0 / 3.0)
    assert _raises(InputError, empirical_moments, np.array([]), [1])

    assert abs(gini(np.ones(10))) < 1e-12
    assert math.isclose(gini([0.0, 0.0, 0.0, 1.0]), 0.75)


def test_cross_validation():
    """Simulação e motor de densidades convergem para o mesmo equilíbrio"""
    print("\n=== TESTE: Validação cruzada ===")

    grid = Grid(20.0, 4096)
    cases = [
        (IMMEDIATE_EXCHANGE, 60, gamma2_equilibrium(1.0, grid), 0.02),
        (DIRECTED_RANDOM_MARKET, 150, gamma_half_equilibrium(1.0, grid), 0.03),
    ]
    for model, days, target, tol in cases:
        result = run(SimConfig(model, 20000, days, seed=2024))
        ks = ks_distance(ecdf(result.sample), ecdf(target))
        m2 = empirical_moments(result.sample, [2]).value(2)
        print(f"  {model.label}: KS = {ks:.4f}, M2 = {m2:.3f}")
        assert ks < tol

    result = run(SimConfig(ModelKind.mixed(0.5), 20000, 100, seed=11))
    m2 = empirical_moments(result.sample, [2]).value(2)
    assert abs(m2 - 2.0) < 0.15


def test_day_by_day_against_engine():
    """Distribuição empírica acompanha o motor de densidades dia a dia, para cada modelo"""
    print("\n=== TESTE: Simulação x motor, dia a dia ===")

    grid = Grid(20.0, 4096)
    p0 = uniform_density(0.0, 2.0, grid)
    days = 50
    for model in (IMMEDIATE_EXCHANGE, DIRECTED_RANDOM_MARKET, ModelKind.mixed(0.5)):
        result = run(SimConfig(model, 100_000, days, seed=2024, initial=FromDensity(p0), record_every=1))
        by_day = {snap.day: snap.wealths for snap in result.snapshots}

        worst, current = 0.0, p0
        for day in range(1, days + 1):
            current = apply_model(current, model)
            worst = max(worst, ks_distance(ecdf(by_day[day]), ecdf(current)))
        print(f"  {model.label}: pior KS em {days} dias = {worst:.4f}")
        assert worst < 0.02


TESTS = [
    ("Population", test_population),
    ("Regras de troca", test_step_rules),
    ("Conservação", test_conservation),
    ("Reprodutibilidade", test_determinism),
    ("Saídas", test_snapshots_and_frames),
    ("População inicial", test_initial_from_density),
    ("Momentos e Gini", test_empirical_moments_and_gini),
    ("Validação cruzada", test_cross_validation),
    ("Dia a dia x motor", test_day_by_day_against_engine),
]


def run_all_tests():
    """Executa todos os testes"""
    print("INICIANDO TESTES - SIMULAÇÃO DE AGENTES")
    print("=" * 50)

    results = []
    for name, test in TESTS:
        try:
            test()
            results.append((name, True))
        except Exception as e:
            print(f"Erro em {name}: {type(e).__name__}: {e}")
            results.append((name, False))

    print("\n" + "=" * 50)
    passed = sum(1 for _, ok in results if ok)
    for name, ok in results:
        print(f"{name}: {'PASSOU' if ok else 'FALHOU'}")
    print(f"\nResultado: {passed}/{len(results)} testes passaram")

    return passed == len(results)


if __name__ == "__main__":
    sys.exit(0 if run_all_tests() else 1)
