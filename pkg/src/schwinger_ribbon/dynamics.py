"""Real-time evolution in the truncated sector and quench scenarios."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .errors import ConvergenceError, EquivalenceError, ValidationError
from .fluctuations import hopping_matrix
from .interface import assemble_ising_hamiltonian
from .krylov import lanczos_expm_step
from .lattice import (
    GaugeConfig,
    LatticeParams,
    SectorBasis,
    SparseHamiltonian,
    bare_vacuum,
    build_hamiltonian,
    enumerate_basis,
    measure,
    sector_size_unclipped,
)

logger = logging.getLogger(__name__)

__all__ = [
    "EvolutionSpec",
    "Trajectory",
    "krylov_evolve",
    "dense_evolve",
    "QuenchScenario",
    "QuenchRecord",
    "string_state",
    "run_quench",
    "free_fermion_densities",
    "EncodedComparison",
    "encoded_vs_direct",
    "truncation_convergence",
]


def _as_operator(H):
    if isinstance(H, SparseHamiltonian):
        return H.matrix
    if sp.issparse(H):
        return H.tocsr()
    return np.asarray(H)


@dataclass
class EvolutionSpec:
    """Time grid and Krylov settings.

    ``hamiltonian`` may be left ``None`` when the caller supplies it (e.g.
    :func:`run_quench` builds it from the lattice parameters).
    """

    t_final: float
    dt: float
    hamiltonian: object = None
    krylov_dim: int = 30
    tol: float = 1e-9
    max_halvings: int = 40

    def __post_init__(self):
        if not self.t_final > 0 or not self.dt > 0:
            raise ValidationError("t_final and dt must be positive")
        if not self.tol > 0:
            raise ValidationError("tolerance must be positive")
        if self.krylov_dim < 2:
            raise ValidationError("Krylov dimension must be at least 2")

    @property
    def times(self) -> np.ndarray:
        n = int(np.floor(self.t_final / self.dt + 1e-9))
        t = self.dt * np.arange(n + 1)
        if self.t_final - t[-1] > 1e-9 * self.dt:
            t = np.append(t, self.t_final)
        return t


@dataclass
class Trajectory:
    times: np.ndarray
    observables: dict
    energy: np.ndarray
    norms: np.ndarray
    n_steps: int
    max_step_error: float
    states: list = field(default=None, repr=False)

    @property
    def final_state(self):
        return self.states[-1] if self.states else None


def _observe(psi, basis, names):
    if basis is None:
        return {}
    psi_n = psi / np.linalg.norm(psi)
    return {name: measure(psi_n, basis, name) for name in names}


def krylov_evolve(state, spec: EvolutionSpec, basis: SectorBasis = None,
                  observables=("field_profile", "charge_density"), keep_states=False) -> Trajectory:
    """Propagate ``state`` under ``spec.hamiltonian`` and record observables per stride.

    Each stride ``dt`` is covered by Krylov steps; a step whose error estimate
    exceeds ``spec.tol`` is halved and retried, and after a success the step
    doubles again up to the stride.
    """
    if spec.hamiltonian is None:
        raise ValidationError("EvolutionSpec has no Hamiltonian")
    H = _as_operator(spec.hamiltonian)
    psi = np.asarray(state, dtype=complex).copy()
    if psi.shape != (H.shape[0],):
        raise ValidationError("state dimension does not match the Hamiltonian")
    nrm = np.linalg.norm(psi)
    if abs(nrm - 1) > 1e-10:
        raise ValidationError(f"state is not normalized (norm {nrm:.3e})")
    matvec = lambda v: H @ v
    m = min(spec.krylov_dim, H.shape[0])
    times = spec.times
    obs = {k: [] for k in observables} if basis is not None else {}
    energies, norms, states = [], [], []
    n_steps, worst = 0, 0.0
    tau = spec.dt

    def record(p):
        for k, v in _observe(p, basis, observables).items():
            obs[k].append(v)
        energies.append(float(np.real(np.vdot(p, matvec(p)))))
        norms.append(float(np.linalg.norm(p)))
        if keep_states:
            states.append(p.copy())

    record(psi)
    for t0, t1 in zip(times[:-1], times[1:]):
        t = t0
        while t1 - t > 1e-14 * max(1.0, t1):
            step = min(tau, t1 - t)
            for _ in range(spec.max_halvings):
                new, err, _ = lanczos_expm_step(matvec, psi, step, m=m, tol=spec.tol)
                if err <= spec.tol:
                    break
                step /= 2
            else:
                raise ConvergenceError(f"Krylov step did not reach tolerance {spec.tol:g} at t={t:.6g}")
            psi, t = new, t + step
            n_steps += 1
            worst = max(worst, err)
            tau = min(2 * step, spec.dt)
        record(psi)
    return Trajectory(times, {k: np.array(v) for k, v in obs.items()}, np.array(energies),
                      np.array(norms), n_steps, worst, states if keep_states else None)


def dense_evolve(H, state, times) -> np.ndarray:
    """Reference evolution by full diagonalization; rows are states at ``times``."""
    M = _as_operator(H)
    M = M.toarray() if sp.issparse(M) else M
    w, U = np.linalg.eigh(M)
    c = U.conj().T @ np.asarray(state, dtype=complex)
    return np.array([U @ (np.exp(-1j * w * t) * c) for t in times])


# quench scenarios --------------------------------------------------------------------

def string_state(L, d, W=None, start=None) -> GaugeConfig:
    """Bare vacuum with one fermion moved from an even site to the odd site ``d`` bonds away.

    The pair is centred on the chain unless ``start`` (an even site) is given.
    The bonds between the two charges carry field ``-1``.
    """
    if d < 1 or d % 2 == 0:
        raise ValidationError(f"separation d={d} must be odd to join an even site to an odd site")
    if start is None:
        start = L - (d + 1) // 2
        start -= start % 2
    if start % 2 or start < 0 or start + d > 2 * L - 1:
        raise ValidationError(f"string of length {d} from site {start} does not fit in {2 * L} sites")
    occ = list(bare_vacuum(L).occupations)
    occ[start], occ[start + d] = 0, 1
    return GaugeConfig.from_occupations(occ, W)


@dataclass(frozen=True)
class QuenchScenario:
    """``kind`` is ``string``, ``free_check`` or ``custom``.

    ``string`` uses :func:`string_state` with separation ``d``; ``free_check``
    starts from the same string state (or ``occupations``) and compares with
    the free-fermion oracle; ``custom`` starts from ``occupations``.
    ``threshold`` is the relative drop of the mid-string field used to flag
    string breaking (a convention, not a physical constant).
    """

    kind: str = "string"
    d: int = 5
    occupations: tuple = None
    threshold: float = 0.2

    def __post_init__(self):
        if self.kind not in ("string", "free_check", "custom"):
            raise ValidationError(f"unknown quench kind {self.kind!r}")
        if self.kind == "custom" and self.occupations is None:
            raise ValidationError("custom quench needs occupations")

    def initial_config(self, lattice: LatticeParams) -> GaugeConfig:
        if self.occupations is not None:
            cfg = GaugeConfig.from_occupations(self.occupations)
        else:
            cfg = string_state(lattice.L, self.d)
        if len(cfg.occupations) != lattice.n_sites:
            raise ValidationError("initial occupations do not match the lattice size")
        if not cfg.is_valid(lattice.W):
            raise ValidationError(f"initial state lies outside the truncated sector W={lattice.W}")
        return cfg

    def mid_bond(self, lattice: LatticeParams) -> int:
        if self.occupations is None:
            start = lattice.L - (self.d + 1) // 2
            start -= start % 2
            return start + self.d // 2
        return lattice.L - 1


@dataclass
class QuenchRecord:
    times: np.ndarray
    field_profile: np.ndarray
    charge_density: np.ndarray
    field_energy: np.ndarray
    energy: np.ndarray
    mid_bond: int
    metadata: dict
    free_deviation: float = None

    @property
    def mid_field(self) -> np.ndarray:
        return self.field_profile[:, self.mid_bond]

    def string_breaking(self, threshold=None):
        """First time ``|<l_mid>|`` falls below ``(1 - threshold)`` times its initial value."""
        threshold = self.metadata.get("threshold", 0.2) if threshold is None else threshold
        f0 = abs(self.mid_field[0])
        below = np.nonzero(np.abs(self.mid_field) <= (1 - threshold) * f0)[0]
        return {
            "threshold": threshold,
            "convention": "relative drop of the mid-string field (artifact convention)",
            "min_ratio": float(np.min(np.abs(self.mid_field)) / f0) if f0 else np.nan,
            "broken": bool(below.size),
            "t_break": float(self.times[below[0]]) if below.size else None,
        }


def free_fermion_densities(occupations, lattice: LatticeParams, times) -> np.ndarray:
    """Site occupations under the free (``q = 0``) Hamiltonian from a product state."""
    h = hopping_matrix(lattice.n_sites, lattice.a, lattice.m)
    w, U = np.linalg.eigh(h)
    C0 = np.diag(np.asarray(occupations, dtype=float))
    out = []
    for t in times:
        Ut = (U * np.exp(-1j * w * t)) @ U.conj().T
        C = Ut.conj() @ C0 @ Ut.T
        out.append(np.real(np.diag(C)))
    return np.array(out)


def run_quench(scenario: QuenchScenario, lattice: LatticeParams, spec: EvolutionSpec,
               basis: SectorBasis = None) -> QuenchRecord:
    """Evolve the scenario's initial state and record gauge-invariant observables."""
    basis = basis or enumerate_basis(lattice)
    cfg = scenario.initial_config(lattice)
    if spec.hamiltonian is None:
        spec = replace(spec, hamiltonian=build_hamiltonian(lattice, basis))
    psi0 = np.zeros(len(basis), dtype=complex)
    psi0[basis.index(cfg.code)] = 1.0
    traj = krylov_evolve(psi0, spec, basis, ("field_profile", "charge_density", "field_squared_total"))
    fields = traj.observables["field_profile"]
    charges = traj.observables["charge_density"]
    shift = lattice.theta / (2 * np.pi)
    fsq = traj.observables["field_squared_total"] - 2 * shift * fields.sum(axis=1) + fields.shape[1] * shift**2
    energy_E = 0.5 * lattice.a * lattice.q**2 * fsq
    meta = {
        "kind": scenario.kind, "d": scenario.d, "threshold": scenario.threshold,
        "lattice": lattice.as_dict(), "dimension": len(basis),
        "t_final": spec.t_final, "dt": spec.dt, "krylov_dim": spec.krylov_dim, "tol": spec.tol,
        "n_steps": traj.n_steps, "max_step_error": traj.max_step_error,
        "max_norm_drift": float(np.max(np.abs(traj.norms - 1))),
        "max_energy_drift": float(np.max(np.abs(traj.energy - traj.energy[0]))),
        "initial_occupations": list(cfg.occupations),
    }
    rec = QuenchRecord(traj.times, fields, charges, energy_E, traj.energy,
                       scenario.mid_bond(lattice), meta)
    if scenario.kind == "free_check":
        if lattice.q != 0:
            raise ValidationError("free_check requires q = 0")
        if len(basis) != sector_size_unclipped(lattice.L):
            raise ValidationError("free_check requires an untruncated sector (W >= L)")
        ref = free_fermion_densities(cfg.occupations, lattice, traj.times)
        occ = charges + (np.arange(lattice.n_sites) % 2 == 0)
        rec.free_deviation = float(np.max(np.abs(occ - ref)))
        meta["free_deviation"] = rec.free_deviation
    return rec


def truncation_convergence(lattice: LatticeParams, Ws=(1, 2, 3, 4), d=5, t_final=5.0, dt=0.25):
    """Max field-profile deviation between consecutive cutoffs for the string quench."""
    profiles = {}
    for W in Ws:
        lat = replace(lattice, W=W)
        rec = run_quench(QuenchScenario("string", d=d), lat, EvolutionSpec(t_final, dt))
        profiles[W] = rec.field_profile
    return {(w0, w1): float(np.max(np.abs(profiles[w0] - profiles[w1])))
            for w0, w1 in zip(Ws[:-1], Ws[1:])}


# encoded dynamics --------------------------------------------------------------------

@dataclass
class EncodedComparison:
    max_deviation: float
    deviation_series: np.ndarray
    times: np.ndarray
    first_failure: dict = None
    rydberg: dict = None

    def as_dict(self):
        return {"max_deviation": self.max_deviation, "times": self.times.tolist(),
                "deviation_series": self.deviation_series.tolist(),
                "first_failure": self.first_failure, "rydberg": self.rydberg}


def _profiles(H, psi0, times, basis):
    states = dense_evolve(H, psi0, times)
    return np.array([measure(s / np.linalg.norm(s), basis, "field_profile") for s in states])


def encoded_vs_direct(lattice: LatticeParams, t_final=5.0, dt=0.5, initial=None, rydberg=False,
                      tol=1e-10, raise_on_fail=False, max_dim=4096) -> EncodedComparison:
    """Evolve one state under the direct and the Ising-encoded Hamiltonians.

    ``initial`` is a :class:`GaugeConfig` (default: bare vacuum).  With
    ``rydberg=True`` the dictionary model of the Rydberg array is also
    evolved, in hardware time ``t / energy_scale``, with and without the
    residual tail term; those deviations are reported, not asserted.
    """
    basis = enumerate_basis(lattice)
    if len(basis) > max_dim:
        raise ValidationError(f"sector dimension {len(basis)} exceeds {max_dim}")
    cfg = initial or bare_vacuum(lattice.L)
    if not cfg.is_valid(lattice.W):
        raise ValidationError("initial state outside the truncated sector")
    psi0 = np.zeros(len(basis), dtype=complex)
    psi0[basis.index(cfg.code)] = 1.0
    times = EvolutionSpec(t_final, dt).times
    Hd = build_hamiltonian(lattice, basis).toarray()
    He = assemble_ising_hamiltonian(lattice, basis).toarray()
    fd = _profiles(Hd, psi0, times, basis)
    fe = _profiles(He, psi0, times, basis)
    series = np.max(np.abs(fd - fe), axis=1) if fd.shape[1] else np.zeros(len(times))
    failure = None
    bad = np.nonzero(series > tol)[0]
    if bad.size:
        k = int(bad[0])
        failure = {"observable": "field_profile", "bond": int(np.argmax(np.abs(fd[k] - fe[k]))),
                   "time": float(times[k]), "deviation": float(series[k])}
    result = EncodedComparison(float(series.max()), series, times, failure)
    if rydberg:
        result.rydberg = _rydberg_comparison(lattice, basis, psi0, times, fd)
    if raise_on_fail and failure:
        raise EquivalenceError(f"encoded dynamics deviates by {failure['deviation']:.3e} "
                               f"on bond {failure['bond']} at t={failure['time']:g}", failure)
    return result


def _rydberg_comparison(lattice, basis, psi0, times, fd):
    from .rydberg import dictionary_hamiltonian, dictionary_solve, tail_couplings

    sol = dictionary_solve(lattice)
    p, s = sol.params, sol.energy_scale
    H0 = dictionary_hamiltonian(basis, p, lattice, s, sol.t_eff, include_tail=False)
    H1 = dictionary_hamiltonian(basis, p, lattice, s, sol.t_eff, include_tail=True)
    thw = times / s
    f0 = _profiles(H0, psi0, thw, basis)
    f1 = _profiles(H1, psi0, thw, basis)
    res = float(tail_couplings(p).residual_coefficient)
    return {
        "energy_scale": s, "t_eff": sol.t_eff,
        "no_tail_vs_direct": float(np.max(np.abs(f0 - fd))) if fd.size else 0.0,
        "tail_vs_no_tail": float(np.max(np.abs(f1 - f0))) if fd.size else 0.0,
        "residual_coefficient": res,
        "residual_phase_scale": abs(res) * float(thw[-1]),
    }
