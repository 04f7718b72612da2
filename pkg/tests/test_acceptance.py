"""Acceptance criteria, one test each, at the stated tolerances.

Each test prints a one-line verdict (visible with ``pytest -s``) and then
asserts.  Runtime limits are asserted alongside the numerical checks.
"""
import time
from fractions import Fraction
from itertools import product

import numpy as np
import pytest

from schwinger_ribbon.dynamics import (
    EvolutionSpec,
    QuenchScenario,
    dense_evolve,
    krylov_evolve,
    run_quench,
    truncation_convergence,
)
from schwinger_ribbon.fluctuations import (
    DiracParams,
    correlation_length,
    correlation_matrix,
    entanglement_spectrum,
    fcs_bruteforce,
    fcs_distribution,
    ground_bound,
    lambda_formula,
    psi_T,
    resource_estimate,
    sigma2_T,
)
from schwinger_ribbon.interface import verify_equivalence
from schwinger_ribbon.lattice import LatticeParams, build_hamiltonian, enumerate_basis, gap_scan
from schwinger_ribbon.rydberg import reference_constants, rydberg_scaling, virtual_denominators, RydbergParams


def verdict(n, checks, elapsed, limit):
    """Print one line per criterion; ``checks`` maps a label to ``(ok, detail)``."""
    checks = dict(checks)
    checks["runtime"] = (elapsed < limit, f"{elapsed:.1f}s < {limit}s")
    ok = all(c[0] for c in checks.values())
    failed = [f"{k} ({d})" for k, (c, d) in checks.items() if not c]
    print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'}" + (f"  failing: {'; '.join(failed)}" if failed else ""))
    return ok, failed


def test_criterion_1_constants():
    t0 = time.perf_counter()
    c = reference_constants()
    targets = [
        ("bulk", 0.5783, 5e-5), ("violation", 4.0734, 5e-4),
        ("respecting_a", 0.3456, 5e-5), ("respecting_a'", 0.3425, 5e-5),
        ("respecting_b", 0.3422, 5e-5), ("respecting_b'", 0.3422, 5e-5),
        ("violating", 2.2953, 5e-5), ("residual", 0.0016, 5e-5),
    ]
    checks = {k: (abs(c[k] - ref) <= tol, f"{c[k]:.7f} vs {ref}") for k, ref, tol in targets}
    checks["ratio"] = (c["cancellation_ratio"] == Fraction(125, 64), str(c["cancellation_ratio"]))
    ok, failed = verdict(1, checks, time.perf_counter() - t0, 1.0)
    assert ok, failed


def test_criterion_2_encoding():
    t0 = time.perf_counter()
    grid = list(product((0.1, 0.7, 2.0), (0.3, 1.3, 2.5), (0.0, 0.9, np.pi)))
    worst = 0.0
    n = 0
    for L, W in product((2, 3), (1, 2)):
        for am, aq, th in grid:
            worst = max(worst, verify_equivalence(LatticeParams.from_dimensionless(L, am, aq, th, W)).max_abs_deviation)
            n += 1
    ok, failed = verdict(2, {"deviation": (worst < 1e-12, f"{worst:.2e} over {n} points")},
                         time.perf_counter() - t0, 30.0)
    assert ok, failed


@pytest.mark.slow
def test_criterion_3_rydberg():
    t0 = time.perf_counter()
    lat = LatticeParams.from_dimensionless(2, 0.5, 0.5, 0.0, W=1)
    reps, expo = rydberg_scaling(lat, ratios=(0.02, 0.04))
    r = reps[0]
    spread = virtual_denominators(RydbergParams()).epsilon_spread
    checks = {
        "patch size": (r.n_free <= 20, f"{r.n_free} free atoms"),
        "per-level deviation": (r.deviation_dictionary <= r.deviation_bound,
                                f"{r.deviation_dictionary:.2e} <= {r.deviation_bound:.2e}"),
        "exponent": (abs(expo["dictionary"] - 3) <= 0.5, f"{expo['dictionary']:.3f}"),
        "epsilon spread": (spread <= 0.002, f"{spread:.5f}"),
    }
    ok, failed = verdict(3, checks, time.perf_counter() - t0, 600.0)
    assert ok, failed


def test_criterion_4_ground_bound():
    t0 = time.perf_counter()
    checks = {}
    for am in (0.5, 1.0, 2.0):
        es = entanglement_spectrum(correlation_matrix(DiracParams(200, 1.0, am)))
        bad = [W for W in range(0, 101) if (b := ground_bound(es, W))["empirical_tail"] > b["lambda_bound"]]
        checks[f"bound am={am}"] = (not bad, f"violated at W={bad}")
        xi = correlation_length(correlation_matrix(DiracParams(200, 1.0, am)))
        lam_f = lambda_formula(xi)
        rate_f = -np.log(lam_f) if np.isfinite(lam_f) and lam_f > 0 else np.nan
        rel = abs(es.rate / rate_f - 1) if np.isfinite(rate_f) else np.inf
        checks[f"rate am={am}"] = (rel <= 0.10, f"fit {es.rate:.3f} vs formula {rate_f:.3f} (xi/a={xi:.3f})")
    ok, failed = verdict(4, checks, time.perf_counter() - t0, 60.0)
    assert ok, failed


def test_criterion_5_thermal():
    t0 = time.perf_counter()
    m, a, T = 0.5, 1.0, 0.5
    h = 1e-3
    d2 = (psi_T(h, m, a, T) - 2 * psi_T(0.0, m, a, T) + psi_T(-h, m, a, T)) / h**2
    s2 = sigma2_T(m, a, T)
    aT = 1e-4
    cont = sigma2_T(0.0, 1.0, aT) / (aT / np.pi) - 1
    fcs = fcs_distribution(entanglement_spectrum(correlation_matrix(DiracParams(400, a, m, T))).p)
    var = fcs.variance / (400 * s2) - 1
    checks = {
        "psi(0)": (psi_T(0.0, m, a, T) == 0.0, f"{psi_T(0.0, m, a, T)}"),
        "psi'' vs sigma2": (abs(d2 / s2 - 1) <= 1e-6, f"{d2 / s2 - 1:.2e}"),
        "continuum": (abs(cont) <= 1e-6, f"{cont:.2e}"),
        "fcs variance": (abs(var) <= 0.10, f"{var:.4f}"),
    }
    ok, failed = verdict(5, checks, time.perf_counter() - t0, 60.0)
    assert ok, failed


def test_criterion_6_fcs_oracle():
    t0 = time.perf_counter()
    p = entanglement_spectrum(correlation_matrix(DiracParams(12, 1.0, 0.3, 0.4))).p
    dev = float(np.max(np.abs(fcs_distribution(p).prob - fcs_bruteforce(p))))
    ok, failed = verdict(6, {"max deviation": (dev <= 1e-12, f"{dev:.2e}")}, time.perf_counter() - t0, 10.0)
    assert ok, failed


def _slope(mode):
    eps = np.logspace(-4, -2, 21)
    N = [resource_estimate(e, mode).N for e in eps]
    return float(np.polyfit(np.log(1 / eps), np.log(N), 1)[0])


def test_criterion_7_scaling():
    t0 = time.perf_counter()
    s0, s1 = _slope("T0"), _slope("finiteT")
    checks = {
        "T0 slope": (abs(s0 - 2.0) <= 0.1, f"{s0:.4f}"),
        "finiteT slope": (abs(s1 - 2.5) <= 0.1, f"{s1:.4f}"),
    }
    ok, failed = verdict(7, checks, time.perf_counter() - t0, 60.0)
    assert ok, failed


def test_criterion_8_dynamics():
    t0 = time.perf_counter()
    p = LatticeParams.from_dimensionless(3, 0.4, 0.8, 0.5, W=2)
    basis = enumerate_basis(p)
    H = build_hamiltonian(p, basis)
    rng = np.random.default_rng(11)
    psi0 = rng.standard_normal(len(basis)) + 1j * rng.standard_normal(len(basis))
    psi0 /= np.linalg.norm(psi0)
    t = 10 / np.linalg.norm(H.toarray(), 2)
    traj = krylov_evolve(psi0, EvolutionSpec(t, t / 5, H), basis, keep_states=True)
    ref = dense_evolve(H, psi0, traj.times)
    dense_dev = max(np.linalg.norm(a - b) for a, b in zip(traj.states, ref))
    long = krylov_evolve(psi0, EvolutionSpec(20.0, 0.5, H), basis)
    unit = float(np.max(np.abs(long.norms - 1)))
    free = LatticeParams.from_dimensionless(4, 0.3, 0.0, 0.0, W=4)
    free_dev = run_quench(QuenchScenario("free_check", d=3), free, EvolutionSpec(5.0, 0.5)).free_deviation
    conv = truncation_convergence(LatticeParams.from_dimensionless(6, 0.1, 1.0, 0.0, W=1),
                                  Ws=(1, 2, 3, 4), d=5, t_final=5.0, dt=0.25)
    seq = [conv[(1, 2)], conv[(2, 3)], conv[(3, 4)]]
    checks = {
        "krylov vs dense": (H.dimension <= 256 and dense_dev <= 1e-8, f"{dense_dev:.2e} (dim {H.dimension})"),
        "unitarity": (unit <= 1e-10, f"{unit:.2e}"),
        "free fermions": (free_dev <= 1e-8, f"{free_dev:.2e}"),
        "W convergence": (all(b <= a for a, b in zip(seq, seq[1:])), ", ".join(f"{x:.2e}" for x in seq)),
    }
    ok, failed = verdict(8, checks, time.perf_counter() - t0, 120.0)
    assert ok, failed


@pytest.mark.slow
def test_criterion_9_criticality():
    t0 = time.perf_counter()
    checks = {}
    for L in (8, 10, 12):
        scan = gap_scan(L, W=3, aq=0.5, theta=np.pi)
        checks[f"L={L}"] = (0.20 <= scan.m_over_q <= 0.50, f"m/q={scan.m_over_q:.4f}, gap={scan.gap:.4f}")
    ok, failed = verdict(9, checks, time.perf_counter() - t0, 600.0)
    assert ok, failed
