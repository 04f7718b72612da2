from fractions import Fraction

import numpy as np
import pytest

from schwinger_ribbon.errors import ValidationError
from schwinger_ribbon.lattice import LatticeParams, enumerate_basis
from schwinger_ribbon.rydberg import (
    CANCELLATION_RATIO,
    RydbergParams,
    bulk_gaps,
    design_array,
    dictionary_solve,
    effective_kinetic,
    pattern_orientation,
    reference_constants,
    shell_table,
    tail_couplings,
    tail_splitting,
    verify_rydberg,
    virtual_denominators,
)

CANCEL = RydbergParams(V=1.0, Vprime=125 / 64, Delta=1.0)


class TestShells:
    def test_table(self):
        t = shell_table(13)
        assert t.rows() == [
            (1, 4, "odd", Fraction(1, 1)), (2, 4, "even", Fraction(1, 8)),
            (4, 4, "even", Fraction(1, 64)), (5, 8, "odd", Fraction(1, 125)),
            (8, 4, "even", Fraction(1, 512)), (9, 4, "odd", Fraction(1, 729)),
            (10, 8, "even", Fraction(1, 1000)), (13, 8, "odd", Fraction(1, 2197)),
        ]
        assert t.total_multiplicity == 44

    def test_small_cutoff(self):
        assert [s.r2 for s in shell_table(2).shells] == [1, 2]

    def test_unsupported_cutoff(self):
        with pytest.raises(ValidationError):
            shell_table(3)
        with pytest.raises(ValidationError):
            RydbergParams(shell_cutoff=18)

    def test_coupling_parity_and_range(self):
        p = RydbergParams(V=2.0, Vprime=3.0)
        assert p.coupling(1, 0) == 3.0
        assert p.coupling(1, 1) == 2.0 / 8
        assert p.coupling(2, 1) == 3.0 / 125
        assert p.coupling(3, 3) == 0.0
        assert p.coupling(0, 0) == 0.0


class TestBulkGaps:
    def test_unit_point(self):
        r = bulk_gaps(RydbergParams(V=1, Vprime=1, Delta=1))
        assert abs(r.DeltaBar - 0.4217) < 5e-5
        assert abs(r.DeltaBarPrime - 3.0734) < 5e-4

    def test_closed_forms(self):
        p = RydbergParams(V=1.3, Vprime=2.1, Delta=0.9)
        r = bulk_gaps(p)
        assert r.DeltaBar == pytest.approx(0.9 - 4 * 1.3 * (1 / 8 + 1 / 64 + 1 / 512 + 2 / 1000), abs=1e-14)
        assert r.DeltaBarPrime == pytest.approx(-0.9 + 4 * 2.1 * (1 + 2 / 125 + 1 / 729 + 2 / 2197), abs=1e-14)
        assert r.DeltaBarDoublePrime == pytest.approx(-0.9 + 2.1 + 2 * 1.3 / 8 + 1.3 / 64 + 2 * 2.1 / 125, abs=1e-14)

    def test_anchor(self):
        assert abs(bulk_gaps(RydbergParams(Delta=0.5783)).DeltaBar) < 5e-5

    def test_window(self):
        assert bulk_gaps(CANCEL).window_ok
        assert not bulk_gaps(replace_delta(0.5)).window_ok
        assert not bulk_gaps(replace_delta(2.4)).window_ok

    def test_linear_scaling(self):
        p = RydbergParams(V=1.1, Vprime=1.7, Delta=1.2)
        q = RydbergParams(V=2.2, Vprime=3.4, Delta=2.4)
        a, b = bulk_gaps(p), bulk_gaps(q)
        for k in ("DeltaBar", "DeltaBarPrime", "DeltaBarDoublePrime"):
            assert getattr(b, k) == pytest.approx(2 * getattr(a, k), abs=1e-13)


def replace_delta(D):
    return RydbergParams(V=1.0, Vprime=125 / 64, Delta=D)


class TestTails:
    def test_exact_cancellation(self):
        t = tail_couplings(Fraction(1), Fraction(125, 64))
        assert t.nn_coefficient == 0
        assert abs(float(t.residual_coefficient) - 0.0016) < 5e-5

    def test_no_cancellation(self):
        assert tail_couplings(Fraction(1), Fraction(1)).nn_coefficient == -(Fraction(1, 64) - Fraction(1, 125))

    def test_ratio(self):
        assert CANCELLATION_RATIO == Fraction(125, 64)
        assert reference_constants()["cancellation_ratio"] == Fraction(125, 64)

    def test_tail_fit_matches_formula(self):
        for ratio in (1.0, 125 / 64):
            fit = tail_splitting(ratio)
            t = tail_couplings(1.0, ratio)
            assert fit["fit_residual"] < 1e-12
            assert fit["nn_fit"] == pytest.approx(t.nn_coefficient, abs=1e-12)
            assert fit["residual_fit"] == pytest.approx(t.residual_coefficient, abs=1e-12)


class TestDenominators:
    def test_constants(self):
        d = virtual_denominators(CANCEL)
        assert abs(d.deltaE["a"] - (1 - 0.3456)) < 5e-5
        assert abs(d.deltaE["a'"] - (1 - 0.3425)) < 5e-5
        assert abs(d.DeltaTildePrime - (2.2953 - 1)) < 5e-4
        assert d.epsilon_spread <= 0.002

    def test_linear_scaling(self):
        a = virtual_denominators(RydbergParams(V=1.0, Vprime=125 / 64, Delta=1.1))
        b = virtual_denominators(RydbergParams(V=2.0, Vprime=250 / 64, Delta=2.2))
        for k in a.deltaE:
            assert b.deltaE[k] == pytest.approx(2 * a.deltaE[k], abs=1e-13)
        assert b.DeltaTilde == pytest.approx(2 * a.DeltaTilde, abs=1e-13)
        assert b.epsilon_spread == pytest.approx(a.epsilon_spread, abs=1e-13)

    def test_outside_window(self):
        with pytest.raises(ValidationError):
            virtual_denominators(replace_delta(0.2))

    def test_sixteen_environments(self):
        d = virtual_denominators(CANCEL)
        assert len(d.environments) == 16
        assert d.respecting_constants.shape == (16, 2)


class TestKinetic:
    def test_zero_drive(self):
        assert effective_kinetic(CANCEL) == 0.0

    def test_plug_in(self):
        p = RydbergParams(Omega=0.1)
        d = virtual_denominators(p)
        assert effective_kinetic(p) == pytest.approx(0.0025 * (1 / d.DeltaTilde + 1 / d.DeltaTildePrime), rel=1e-14)
        # the printed constants give the same value to the printed precision
        assert effective_kinetic(p) == pytest.approx(0.0025 * (1 / 0.6578 + 1 / 1.2953), rel=2e-4)


class TestDictionary:
    def test_orientation_affine(self):
        o = pattern_orientation()
        assert o["h"]["sum_l"] == pytest.approx(-1)
        assert o["hprime"]["sum_l2"] == pytest.approx(-1)
        assert o["mu"]["stag"] == pytest.approx(0.5)

    def test_theta_zero(self):
        r = dictionary_solve(LatticeParams.from_dimensionless(2, 0.4, 0.7, 0.0, 1))
        assert r.params.h == 0.0

    def test_mass_zero(self):
        r = dictionary_solve(LatticeParams.from_dimensionless(2, 0.0, 0.7, 1.0, 1))
        assert r.params.mu == 0.0

    def test_t_eff_matches_lattice_unit(self):
        lat = LatticeParams.from_dimensionless(2, 0.4, 0.7, 1.0, 1)
        r = dictionary_solve(lat, Omega_max=0.04)
        assert r.energy_scale == pytest.approx(2 * lat.a * r.t_eff)
        assert r.params.Omega == 0.04

    def test_ratios_reported(self):
        r = dictionary_solve(LatticeParams.from_dimensionless(2, 0.4, 0.7, 1.0, 1))
        assert set(r.ratios) == {"h_over_tail", "mu_over_h", "kinetic_over_mu", "V_over_kinetic"}
        assert r.feasible == all(v >= 5 for v in r.ratios.values())

    def test_drive_too_large(self):
        with pytest.raises(ValidationError):
            dictionary_solve(LatticeParams(2, W=1), Omega=0.2, Omega_max=0.05)

    def test_window_violation(self):
        with pytest.raises(ValidationError):
            dictionary_solve(LatticeParams(2, W=1), Delta=0.3)

    def test_design_array(self):
        lat = LatticeParams.from_dimensionless(2, 0.4, 0.7, 1.0, 1)
        d = design_array(lat)
        assert d["n_atoms"] == len(d["atoms"])
        for atom in d["atoms"]:
            assert atom["species"] == ("A" if (atom["x"] + atom["y"]) % 2 == 0 else "B")
            if atom["species"] == "B":
                assert atom["detuning"] == 1.0


class TestVerify:
    lat = LatticeParams.from_dimensionless(2, 0.4, 0.7, 1.0, 1)

    def test_classical_limit(self):
        r = verify_rydberg(self.lat, Omega_over_Delta=0.0)
        assert r.classical_deviation < 1e-10
        assert r.deviation_dictionary < 1e-10
        assert r.band_weight == 1.0

    def test_band_dimension(self):
        r = verify_rydberg(self.lat, Omega_over_Delta=0.02)
        assert r.band_dimension == len(enumerate_basis(LatticeParams(2, W=1)))
        assert r.band_weight > 0.99
        assert r.deviation_dictionary < 1e-3

    def test_cancellation_suppresses_nn_tail(self):
        plain = tail_splitting(1.0)
        tuned = tail_splitting(125 / 64)
        assert abs(tuned["nn_fit"]) < 1e-12 < abs(plain["nn_fit"])

    def test_large_drive_rejected(self):
        with pytest.raises(ValidationError):
            verify_rydberg(self.lat, Omega_over_Delta=0.1)
