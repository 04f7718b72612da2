import numpy as np
import pytest
import scipy.sparse as sp

from schwinger_ribbon.errors import EquivalenceError, ValidationError
from schwinger_ribbon.dynamics import (
    EvolutionSpec,
    QuenchScenario,
    dense_evolve,
    encoded_vs_direct,
    krylov_evolve,
    run_quench,
    string_state,
    truncation_convergence,
)
from schwinger_ribbon.lattice import LatticeParams, build_hamiltonian, enumerate_basis


def random_state(n, seed=0):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return v / np.linalg.norm(v)


class TestSpec:
    def test_invalid(self):
        with pytest.raises(ValidationError):
            EvolutionSpec(0.0, 0.1)
        with pytest.raises(ValidationError):
            EvolutionSpec(1.0, -0.1)
        with pytest.raises(ValidationError):
            EvolutionSpec(1.0, 0.1, tol=0)

    def test_times_include_final(self):
        np.testing.assert_allclose(EvolutionSpec(1.0, 0.3).times, [0, 0.3, 0.6, 0.9, 1.0])


class TestKrylov:
    p = LatticeParams.from_dimensionless(3, 0.4, 0.8, 0.5, W=2)

    def test_dense_oracle(self):
        basis = enumerate_basis(self.p)
        H = build_hamiltonian(self.p, basis)
        assert H.dimension <= 256
        t = 10 / np.linalg.norm(H.toarray(), 2)
        psi0 = random_state(H.dimension)
        traj = krylov_evolve(psi0, EvolutionSpec(t, t / 4, H), keep_states=True)
        ref = dense_evolve(H, psi0, traj.times)
        assert max(np.linalg.norm(a - b) for a, b in zip(traj.states, ref)) < 1e-8

    def test_time_reversal(self):
        H = build_hamiltonian(self.p, enumerate_basis(self.p))
        psi0 = random_state(H.dimension, 3)
        fwd = krylov_evolve(psi0, EvolutionSpec(2.0, 0.5, H), keep_states=True).final_state
        back = krylov_evolve(fwd / np.linalg.norm(fwd), EvolutionSpec(2.0, 0.5, sp.csr_matrix(-H.matrix)),
                             keep_states=True).final_state
        assert np.linalg.norm(back - psi0) < 1e-8

    def test_norm_and_energy(self):
        basis = enumerate_basis(self.p)
        H = build_hamiltonian(self.p, basis)
        traj = krylov_evolve(random_state(H.dimension, 5), EvolutionSpec(5.0, 0.25, H), basis)
        assert np.max(np.abs(traj.norms - 1)) < 1e-10
        assert np.max(np.abs(traj.energy - traj.energy[0])) < 1e-8 * H.norm_bound()
        assert np.max(np.abs(traj.observables["charge_density"].sum(axis=1))) < 1e-10

    def test_diagonal_hamiltonian(self):
        basis = enumerate_basis(self.p)
        H = sp.diags(build_hamiltonian(self.p, basis).diagonal())
        traj = krylov_evolve(random_state(len(basis), 7), EvolutionSpec(3.0, 0.5, H), basis,
                             observables=("occupation",))
        occ = traj.observables["occupation"]
        assert np.max(np.abs(occ - occ[0])) < 1e-12

    def test_unnormalized(self):
        H = build_hamiltonian(self.p, enumerate_basis(self.p))
        with pytest.raises(ValidationError):
            krylov_evolve(2 * random_state(H.dimension), EvolutionSpec(1.0, 0.5, H))

    def test_missing_hamiltonian(self):
        with pytest.raises(ValidationError):
            krylov_evolve(random_state(4), EvolutionSpec(1.0, 0.5))


class TestStrings:
    def test_string_state(self):
        cfg = string_state(4, 3)
        assert cfg.occupations == (1, 0, 0, 0, 1, 1, 1, 0)
        assert cfg.fields == (0, 0, -1, -1, -1, 0, 0)

    def test_even_separation_rejected(self):
        with pytest.raises(ValidationError):
            string_state(4, 6)

    def test_outside_sector(self):
        lat = LatticeParams.from_dimensionless(4, 0.1, 1.0, 0.0, W=1)
        with pytest.raises(ValidationError):
            run_quench(QuenchScenario("custom", occupations=(0, 0, 0, 1, 1, 1, 1, 0)), lat,
                       EvolutionSpec(1.0, 0.5))

    def test_custom_needs_occupations(self):
        with pytest.raises(ValidationError):
            QuenchScenario("custom")

    def test_heavy_mass_frozen(self):
        lat = LatticeParams.from_dimensionless(4, 100.0, 1.0, 0.0, W=2)
        rec = run_quench(QuenchScenario("string", d=3), lat, EvolutionSpec(1.0, 0.1))
        f = rec.mid_field
        assert np.max(np.abs(f - f[0])) < 0.01 * abs(f[0])

    def test_free_check(self):
        lat = LatticeParams.from_dimensionless(3, 0.3, 0.0, 0.0, W=3)
        rec = run_quench(QuenchScenario("free_check", d=3), lat, EvolutionSpec(4.0, 0.5))
        assert rec.free_deviation < 1e-8

    def test_free_check_requires_free(self):
        lat = LatticeParams.from_dimensionless(3, 0.3, 0.5, 0.0, W=3)
        with pytest.raises(ValidationError):
            run_quench(QuenchScenario("free_check", d=3), lat, EvolutionSpec(1.0, 0.5))

    def test_breaking_onset(self):
        lat = LatticeParams.from_dimensionless(8, 0.1, 1.0, 0.0, W=2)
        rec = run_quench(QuenchScenario("string", d=5), lat, EvolutionSpec(20.0, 0.5))
        assert abs(rec.mid_field[0] + 1) < 1e-12
        sb = rec.string_breaking()
        assert sb["broken"] and sb["t_break"] < 20.0
        assert np.max(np.abs(rec.charge_density.sum(axis=1))) < 1e-10
        bound = build_hamiltonian(lat, enumerate_basis(lat)).norm_bound()
        assert rec.metadata["max_energy_drift"] < 1e-8 * bound

    def test_truncation_convergence(self):
        lat = LatticeParams.from_dimensionless(6, 0.1, 1.0, 0.0, W=1)
        dev = truncation_convergence(lat, Ws=(1, 2, 3, 4), d=5, t_final=5.0, dt=0.25)
        vals = [dev[(1, 2)], dev[(2, 3)], dev[(3, 4)]]
        assert all(b <= a for a, b in zip(vals, vals[1:]))


class TestEncoded:
    def test_ising_exact(self):
        lat = LatticeParams.from_dimensionless(3, 0.5, 0.9, 1.1, W=2)
        r = encoded_vs_direct(lat, initial=string_state(3, 1, W=2))
        assert r.max_deviation < 1e-10
        assert r.deviation_series[0] < 1e-14

    def test_rydberg_reported(self):
        lat = LatticeParams.from_dimensionless(2, 0.4, 0.7, 1.0, W=1)
        r = encoded_vs_direct(lat, t_final=2.0, rydberg=True)
        assert r.rydberg["no_tail_vs_direct"] < 1e-10
        assert np.isfinite(r.rydberg["tail_vs_no_tail"])

    def test_structured_failure(self, monkeypatch):
        import schwinger_ribbon.dynamics as dyn

        real = dyn.assemble_ising_hamiltonian
        monkeypatch.setattr(dyn, "assemble_ising_hamiltonian",
                            lambda p, b: real(p, b) + 0.1 * sp.diags(np.arange(len(b), dtype=float)))
        lat = LatticeParams.from_dimensionless(2, 0.5, 0.9, 1.1, W=1)
        with pytest.raises(EquivalenceError) as exc:
            encoded_vs_direct(lat, raise_on_fail=True)
        assert "bond" in str(exc.value)
