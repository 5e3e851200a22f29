"""
Testes dos operadores de troca (S, T, T_D, T_M) e do laço de iteração
"""
import sys
import os
import math
from contextlib import contextmanager
sys.path.append(os.path.dirname(os.path.dirname(__file__)))

import numpy as np

from config import Config
from kinex.distributions import (Density, Grid, ecdf, exponential_density, gamma2_equilibrium,
                                 gamma_half_equilibrium, ks_distance, moment, random_test_density,
                                 spike_density, uniform_density)
from kinex.errors import ParameterError, TruncationError
from kinex.operators import (DIRECTED_RANDOM_MARKET, IMMEDIATE_EXCHANGE, TRACE_COLUMNS, ModelKind, apply_S,
                             apply_T, apply_TD, apply_TM, brute_force_T, iterate, relaxation_rate)
from kinex.operators import _convolve


def _raises(exc_type, fn, *args, **kwargs):
    try:
        fn(*args, **kwargs)
    except exc_type:
        return True
    return False


@contextmanager
def _config_override(**values):
    """Altera atributos do Config só dentro do bloco"""
    previous = {name: getattr(Config, name) for name in values}
    for name, value in values.items():
        setattr(Config, name, value)
    try:
        yield
    finally:
        for name, value in previous.items():
            setattr(Config, name, value)


def test_model_kind():
    """Testa a validação dos modelos"""
    print("=== TESTE: ModelKind ===")

    assert ModelKind.parse("ie") == IMMEDIATE_EXCHANGE
    assert ModelKind.parse("drm").mu == 1.0
    assert ModelKind.parse("mixed", 0.25).label == "mixed(0.25)"
    assert ModelKind.mixed(0).drm_probability == 0.0

    assert _raises(ParameterError, ModelKind.mixed, 1.5)
    assert _raises(ParameterError, ModelKind.mixed, -0.1)
    assert _raises(ParameterError, ModelKind.parse, "mixed")
    assert _raises(ParameterError, ModelKind.parse, "boltzmann")
    assert _raises(ParameterError, ModelKind, "ie", 0.5)
    print("Modelos OK")


def test_apply_S():
    """S[Gamma(2, 1/2)] = 2 e^(-2x); saída não crescente e média pela metade"""
    print("\n=== TESTE: apply_S ===")

    p = gamma2_equilibrium(1.0)
    s = apply_S(p)
    x = p.nodes
    inner = x <= 10.0
    rel = np.abs(s.values[inner] / (2 * np.exp(-2 * x[inner])) - 1.0)
    print(f"Erro relativo máximo: {rel.max():.2e}")

    assert rel.max() < 1e-3
    assert np.all(np.diff(s.values) <= 1e-15 * s.values.max())
    assert abs(s.mass() - 1.0) < 1e-12
    assert abs(moment(s, 1) - moment(p, 1) / 2) < 1e-3

    u = uniform_density(0.0, 2.0)
    assert abs(moment(apply_S(u), 1) - moment(u, 1) / 2) < 1e-3
    assert np.all(np.diff(apply_S(u).values) <= 1e-15 * apply_S(u).values.max())


def test_apply_S_spike():
    """Pico em x* vira Uniforme(0, x*)"""
    print("\n=== TESTE: apply_S de um pico ===")

    grid = Grid(20.0, 4096)
    spike = spike_density(2.0, grid)
    k = grid.nearest_index(2.0)
    x_star = grid.nodes[k]

    s = apply_S(spike)
    assert np.allclose(s.values[:k], 1.0 / x_star, rtol=1e-12)
    assert math.isclose(s.values[k], 0.5 / x_star, rel_tol=1e-12)
    assert np.all(s.values[k + 1:] == 0.0)


def test_apply_T_fixed_point():
    """Gamma(2) é ponto fixo de T"""
    print("\n=== TESTE: Ponto fixo de T ===")

    p = gamma2_equilibrium(1.0, Grid(20.0, 4096))
    tp = apply_T(p)
    sup = float(np.max(np.abs(tp.values - p.values)))
    ks = ks_distance(ecdf(tp), ecdf(p))
    print(f"sup |T[p] - p| = {sup:.2e}, KS = {ks:.2e}")

    assert sup < 1e-3
    assert ks < 1e-4
    assert abs(moment(tp, 1) - moment(p, 1)) < 1e-3
    assert abs(tp.mass() - 1.0) < 1e-12
    assert tp.mass_leak >= p.mass_leak


def test_apply_T_uniform():
    """Um passo a partir de U(0, 2): média preservada e M2 entre M2(p) e 1.5"""
    print("\n=== TESTE: T[Uniforme(0,2)] ===")

    p = uniform_density(0.0, 2.0)
    tp = apply_T(p)
    m2_before, m2_after = moment(p, 2), moment(tp, 2)
    predicted = relaxation_rate(IMMEDIATE_EXCHANGE) * m2_before + 0.5
    print(f"M2: {m2_before:.6f} -> {m2_after:.6f} (previsto {predicted:.6f})")

    assert abs(moment(tp, 1) - 1.0) < 1e-3
    assert m2_before < m2_after < 1.5
    assert abs(m2_after - predicted) < 1e-3


def test_apply_TD():
    """Gamma(1/2) é ponto fixo de T_D; ramos do pico"""
    print("\n=== TESTE: apply_TD ===")

    p = gamma_half_equilibrium(1.0)
    td = apply_TD(p)
    ks = ks_distance(ecdf(td), ecdf(p))
    print(f"KS(T_D[p], p) = {ks:.2e}")
    assert ks < 5e-3
    assert abs(moment(td, 1) - moment(p, 1)) < 1e-3

    u = uniform_density(0.0, 2.0)
    predicted = relaxation_rate(DIRECTED_RANDOM_MARKET) * moment(u, 2) + 0.5
    assert abs(moment(apply_TD(u), 2) - predicted) < 1e-3

    # perdedor: U(0, x*); vencedor: x* + eps x*
    grid = Grid(20.0, 4096)
    spike = spike_density(2.0, grid)
    F = ecdf(apply_TD(spike))
    print(f"F(x*) = {float(F(2.0)):.4f}, F(2x*) = {float(F(4.0 + grid.dx)):.4f}")
    assert abs(float(F(2.0)) - 0.5) < 0.01
    assert float(F(4.0 + 2 * grid.dx)) > 0.99


def test_apply_TM():
    """mu = 0 e mu = 1 coincidem bit a bit com T e T_D"""
    print("\n=== TESTE: apply_TM ===")

    p = exponential_density(1.0)
    assert np.array_equal(apply_TM(p, 0.0).values, apply_T(p).values)
    assert np.array_equal(apply_TM(p, 1.0).values, apply_TD(p).values)

    tm = apply_TM(p, 0.3)
    combined = 0.3 * apply_TD(p).values + 0.7 * apply_T(p).values
    assert np.allclose(tm.values, combined, rtol=1e-12, atol=1e-15)
    assert abs(tm.mass() - 1.0) < 1e-12
    assert abs(moment(tm, 1) - 1.0) < 1e-3

    assert _raises(ParameterError, apply_TM, p, 1.5)
    assert _raises(ParameterError, apply_TM, p, -0.01)


def test_brute_force_oracle():
    """Integral tripla explícita contra a forma em convolução"""
    print("\n=== TESTE: brute_force_T ===")

    grid = Grid(20.0, 128)
    for p in (uniform_density(0.0, 2.0, grid), exponential_density(1.0, grid), random_test_density(7, grid)):
        diff = float(np.max(np.abs(brute_force_T(p).values - apply_T(p).values)))
        print(f"  {p.label}: sup diff = {diff:.2e}")
        assert diff < 1e-6

    fine = Grid(6.0, 256)
    p = gamma2_equilibrium(1.0, fine)
    assert float(np.max(np.abs(brute_force_T(p).values - p.values))) < 5e-3

    held = gamma2_equilibrium(1.0, Grid(20.0, 256))
    assert abs(brute_force_T(held).raw_mass - 1.0) < 1e-10

    assert _raises(ParameterError, brute_force_T, uniform_density(0.0, 2.0, Grid(20.0, 2048)))


def test_invariants_random_densities():
    """Média conservada e cota 2^a/(a+1) para M_a(T[p])"""
    print("\n=== TESTE: Invariantes em densidades aleatórias ===")

    grid = Grid(20.0, 2048)
    for seed in range(4):
        p = random_test_density(seed, grid)
        m1 = moment(p, 1)
        for operator in (apply_T, apply_TD, lambda q, keep_mean: apply_TM(q, 0.5, keep_mean)):
            assert abs(moment(operator(p, keep_mean=False), 1) - m1) <= 1e-3 * m1
        tp = apply_T(p, keep_mean=False)
        for alpha in (1.2, 1.5, 1.8):
            bound = 2 ** alpha / (alpha + 1) * moment(p, alpha) * (1 + 1e-2)
            assert moment(tp, alpha) <= bound
    print("Invariantes OK")


def test_mean_drift_without_tilt():
    """Deriva da média do operador discreto (sem inclinação) e média exata com inclinação"""
    print("\n=== TESTE: Deriva da média sem inclinação ===")

    grid = Grid(20.0, 2048)
    operators = (
        ("T", lambda q, keep: apply_T(q, keep_mean=keep)),
        ("T_D", lambda q, keep: apply_TD(q, keep_mean=keep)),
        ("T_M", lambda q, keep: apply_TM(q, 0.5, keep_mean=keep)),
    )
    worst = 0.0
    for p in (uniform_density(0.0, 2.0, grid), exponential_density(1.0, grid),
              random_test_density(0, grid), random_test_density(5, grid)):
        m1 = moment(p, 1)
        for name, operator in operators:
            drift = abs(moment(operator(p, False), 1) - m1) / m1
            print(f"  {name}[{p.label}]: deriva relativa {drift:.2e}")
            assert drift <= 1e-3
            worst = max(worst, drift)
            assert abs(moment(operator(p, True), 1) - m1) / m1 < 1e-10

    assert worst > 0.0

    p = random_test_density(2, grid)
    with _config_override(RESTORE_MEAN=False):
        untilted = apply_T(p)
    assert np.array_equal(untilted.values, apply_T(p, keep_mean=False).values)
    print("Deriva OK")


def test_fast_convolution():
    """Caminho FFT reproduz a convolução direta e não produz valores negativos"""
    print("\n=== TESTE: Convolução via FFT ===")

    grid = Grid(20.0, 2048)
    densities = (uniform_density(0.0, 2.0, grid), random_test_density(3, grid), spike_density(1.0, grid))
    for p in densities:
        direct = (apply_T(p), apply_TD(p), apply_TM(p, 0.3))
        with _config_override(FAST_CONVOLUTION=True):
            fast = (apply_T(p), apply_TD(p), apply_TM(p, 0.3))
            raw = _convolve(p.values, apply_S(p).values, grid)
        for a, b in zip(direct, fast):
            assert float(np.max(np.abs(a.values - b.values))) <= 1e-9
        assert float(raw.min()) >= 0.0

    small = Grid(20.0, 128)
    p = random_test_density(7, small)
    with _config_override(FAST_CONVOLUTION=True):
        assert float(np.max(np.abs(brute_force_T(p).values - apply_T(p).values))) < 1e-6
    print("FFT OK")


def test_nearest_mode():
    """Arredondamento ao nó: oráculo exato, mas Gamma(2) deixa de ser ponto fixo a 1e-3"""
    print("\n=== TESTE: Modo nearest ===")

    with _config_override(CONVOLUTION_MODE="nearest"):
        grid = Grid(20.0, 128)
        for p in (uniform_density(0.0, 2.0, grid), random_test_density(7, grid)):
            assert float(np.max(np.abs(brute_force_T(p).values - apply_T(p).values))) < 1e-12

        p = gamma2_equilibrium(1.0, Grid(20.0, 4096))
        nearest_sup = float(np.max(np.abs(apply_T(p).values - p.values)))

    linear_sup = float(np.max(np.abs(apply_T(p).values - p.values)))
    print(f"sup |T[p] - p|: nearest {nearest_sup:.2e}, linear {linear_sup:.2e}")

    assert 2e-3 < nearest_sup < 2e-2
    assert linear_sup < 1e-3


def test_scaling_commutation():
    """Mudar a unidade monetária comuta com os operadores"""
    print("\n=== TESTE: Comutação com escala ===")

    small, large = Grid(20.0, 2048), Grid(40.0, 2048)
    for operator in (apply_T, apply_TD):
        a = operator(uniform_density(0.0, 2.0, small))
        b = operator(uniform_density(0.0, 4.0, large))
        cdf_a = ecdf(a)(small.edges)
        cdf_b = ecdf(b)(large.edges)
        assert float(np.max(np.abs(cdf_a - cdf_b))) < 5e-3


def test_iterate_fixed_point():
    """A partir do equilíbrio, para no passo 1"""
    print("\n=== TESTE: iterate no ponto fixo ===")

    final, trace = iterate(gamma2_equilibrium(1.0), IMMEDIATE_EXCHANGE)
    assert trace.converged
    assert trace.steps == 1
    assert [r["t"] for r in trace.records] == [0, 1]
    assert math.isnan(trace.records[0]["ks_consecutive"])
    assert trace.last()["ks_consecutive"] < 1e-4


def test_iterate_convergence():
    """U(0, 2) converge para Gamma(2, 1/2) em até 60 passos"""
    print("\n=== TESTE: Convergência da troca imediata ===")

    final, trace = iterate(uniform_density(0.0, 2.0), IMMEDIATE_EXCHANGE, max_steps=60, stop_tol=1e-6)
    frame = trace.to_frame()
    print(f"Passos: {trace.steps}, KS final ao alvo: {trace.last()['ks_to_target']:.2e}")

    assert trace.converged
    assert trace.steps <= 60
    assert trace.last()["ks_to_target"] < 5e-3
    assert float((frame["m1"] - 1.0).abs().max()) < 1e-3
    assert list(frame.columns) == TRACE_COLUMNS
    assert frame["mass_leak"].is_monotonic_increasing


def test_iterate_mixed_moments():
    """Equilíbrio misto (mu = 1/2): M3 = 6 e M4 = 24.074"""
    print("\n=== TESTE: Momentos do equilíbrio misto ===")

    final, trace = iterate(exponential_density(1.0), ModelKind.mixed(0.5), max_steps=400, stop_tol=1e-7)
    m2, m3, m4 = (moment(final, k) for k in (2, 3, 4))
    print(f"Passos: {trace.steps}, M2={m2:.5f}, M3={m3:.5f}, M4={m4:.5f}")

    assert trace.converged
    assert abs(m2 / 2.0 - 1.0) < 0.01
    assert abs(m3 / 6.0 - 1.0) < 0.02
    assert abs(m4 / 24.0741 - 1.0) < 0.02
    assert math.isnan(trace.last()["ks_to_target"])


def test_iterate_errors():
    """Vazamento acima de 1% e parâmetros inválidos"""
    print("\n=== TESTE: Erros da iteração ===")

    tight = exponential_density(1.0, Grid(7.0, 512))
    assert _raises(TruncationError, iterate, tight, DIRECTED_RANDOM_MARKET, 200, 1e-14)

    p = gamma2_equilibrium(1.0)
    assert _raises(ParameterError, iterate, p, IMMEDIATE_EXCHANGE, 10, 0.0)
    assert _raises(ParameterError, iterate, Density(p.grid, 2 * p.values), IMMEDIATE_EXCHANGE)


def test_relaxation_rate():
    """Fatores 2/3, 5/6 e mistura linear"""
    print("\n=== TESTE: relaxation_rate ===")

    assert math.isclose(relaxation_rate(IMMEDIATE_EXCHANGE), 2 / 3)
    assert math.isclose(relaxation_rate(DIRECTED_RANDOM_MARKET), 5 / 6)
    assert math.isclose(relaxation_rate(ModelKind.mixed(0.5)), 0.75)


TESTS = [
    ("ModelKind", test_model_kind),
    ("apply_S", test_apply_S),
    ("apply_S pico", test_apply_S_spike),
    ("Ponto fixo de T", test_apply_T_fixed_point),
    ("T uniforme", test_apply_T_uniform),
    ("apply_TD", test_apply_TD),
    ("apply_TM", test_apply_TM),
    ("Oráculo", test_brute_force_oracle),
    ("Invariantes", test_invariants_random_densities),
    ("Deriva sem inclinação", test_mean_drift_without_tilt),
    ("Convolução FFT", test_fast_convolution),
    ("Modo nearest", test_nearest_mode),
    ("Escala", test_scaling_commutation),
    ("iterate ponto fixo", test_iterate_fixed_point),
    ("iterate convergência", test_iterate_convergence),
    ("iterate misto", test_iterate_mixed_moments),
    ("iterate erros", test_iterate_errors),
    ("relaxation_rate", test_relaxation_rate),
]


def run_all_tests():
    """Executa todos os testes"""
    print("INICIANDO TESTES - OPERADORES DE TROCA")
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
