"""Lattice Schwinger model in the gauge-invariant, charge-neutral sector.

Sites ``j = 0 .. 2L-1`` carry staggered fermions, bonds ``b = 0 .. 2L-2`` carry
the dimensionless electric field ``l_{b+1/2}``.  A basis state is identified by
its occupation bit string packed into an integer with bit ``j`` = ``n_j``; the
field profile follows from Gauss law.

Fermionic sign convention: creation operators are ordered by ascending site
index.  A nearest-neighbour hop ``c^dag_{j-1} c_j`` then passes no occupied
site and carries no string sign, so matrix elements coincide with those of the
Jordan-Wigner spin chain on open boundaries.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np
import scipy.sparse as sp

from .errors import CapacityError, ValidationError
from .krylov import lanczos_lowest

__all__ = [
    "LatticeParams",
    "GaugeConfig",
    "SectorBasis",
    "SparseHamiltonian",
    "enumerate_basis",
    "gauss_fields",
    "build_hamiltonian",
    "ground_state",
    "measure",
    "bare_vacuum",
    "DEFAULT_MAX_STATES",
    "spectral_gap",
    "gap_scan",
    "GapScan",
]

DEFAULT_MAX_STATES = 2**26


@dataclass(frozen=True)
class LatticeParams:
    """Parameters of the truncated lattice model.

    ``L`` is half the number of sites, ``a`` the lattice spacing, ``m`` the
    fermion mass, ``q`` the charge, ``theta`` the topological angle and ``W``
    the electric-field cutoff.
    """

    L: int
    a: float = 1.0
    m: float = 0.0
    q: float = 0.0
    theta: float = 0.0
    W: int = 1

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 1:
            raise ValidationError(f"L must be a positive integer, got {self.L}")
        if not self.a > 0:
            raise ValidationError(f"a must be positive, got {self.a}")
        if int(self.W) != self.W or self.W < 0:
            raise ValidationError(f"W must be a non-negative integer, got {self.W}")
        if self.m < 0 or self.q < 0:
            raise ValidationError("m and q must be non-negative")

    @classmethod
    def from_dimensionless(cls, L, am, aq, theta=0.0, W=1):
        """Build params with ``a = 1`` from the dimensionless couplings ``am``, ``aq``."""
        return cls(L=L, a=1.0, m=float(am), q=float(aq), theta=float(theta), W=W)

    @property
    def n_sites(self) -> int:
        return 2 * self.L

    @property
    def n_bonds(self) -> int:
        return 2 * self.L - 1

    @property
    def am(self) -> float:
        return self.a * self.m

    @property
    def aq(self) -> float:
        return self.a * self.q

    @property
    def g(self) -> float:
        """Hopping amplitude ``1/(2a)``."""
        return 1.0 / (2.0 * self.a)

    def as_dict(self) -> dict:
        return {"L": self.L, "a": self.a, "m": self.m, "q": self.q,
                "theta": self.theta, "W": self.W}


def _background(n_sites):
    # (1 + (-1)^j)/2: 1 on even sites, 0 on odd sites
    return (np.arange(n_sites) % 2 == 0).astype(np.int64)


def gauss_fields(occupations, L):
    """Field profile ``l_{j+1/2} = sum_{i<=j} Q_i`` for ``j = 0 .. 2L-2``.

    Returns ``None`` when the string is not half filled (the closing field
    ``l_{2L-1/2}`` would be nonzero).
    """
    n = np.asarray(occupations, dtype=np.int64)
    if n.ndim != 1 or n.size != 2 * L:
        raise ValidationError(f"occupation string must have length {2 * L}, got {n.size}")
    if np.any((n != 0) & (n != 1)):
        raise ValidationError("occupations must be 0 or 1")
    partial = np.cumsum(n - _background(2 * L))
    if partial[-1] != 0:
        return None
    return partial[:-1].copy()


@dataclass(frozen=True)
class GaugeConfig:
    """One Gauss-law-consistent basis state (occupations plus derived fields)."""

    occupations: tuple
    fields: tuple

    @classmethod
    def from_occupations(cls, occupations, W=None):
        occ = tuple(int(x) for x in occupations)
        if len(occ) % 2:
            raise ValidationError("occupation string must have even length")
        L = len(occ) // 2
        f = gauss_fields(occ, L)
        if f is None:
            raise ValidationError(f"{''.join(map(str, occ))} is not half filled")
        if W is not None and f.size and np.max(np.abs(f)) > W:
            raise ValidationError(f"field exceeds cutoff W={W}")
        return cls(occ, tuple(int(x) for x in f))

    @property
    def L(self) -> int:
        return len(self.occupations) // 2

    @property
    def code(self) -> int:
        return sum(b << j for j, b in enumerate(self.occupations))

    @property
    def charges(self) -> tuple:
        bg = _background(len(self.occupations))
        return tuple(int(n - b) for n, b in zip(self.occupations, bg))

    def is_valid(self, W=None) -> bool:
        f = gauss_fields(self.occupations, self.L)
        if f is None or tuple(int(x) for x in f) != tuple(self.fields):
            return False
        return W is None or not f.size or int(np.max(np.abs(f))) <= W


def bare_vacuum(L) -> GaugeConfig:
    """Strong-coupling vacuum: even sites filled, all fields zero."""
    return GaugeConfig.from_occupations([1, 0] * L)


def codes_to_bits(codes, n_sites):
    codes = np.asarray(codes, dtype=np.int64)
    return ((codes[:, None] >> np.arange(n_sites)) & 1).astype(np.int8)


def fields_from_codes(codes, n_sites):
    bits = codes_to_bits(codes, n_sites).astype(np.int16)
    q = bits - _background(n_sites).astype(np.int16)
    return np.cumsum(q, axis=1)[:, :-1].astype(np.int16)


@dataclass(frozen=True, eq=False)
class SectorBasis:
    """Sorted occupation codes of the truncated neutral sector.

    Ordering is ascending in the integer code (bit ``j`` = site ``j``).
    """

    params: LatticeParams
    codes: np.ndarray
    fields: np.ndarray = field(repr=False)

    def __len__(self):
        return int(self.codes.size)

    @property
    def dimension(self) -> int:
        return len(self)

    @property
    def occupations(self) -> np.ndarray:
        return codes_to_bits(self.codes, self.params.n_sites)

    def index(self, code) -> int:
        """Ordinal of an occupation code; ``KeyError`` if absent."""
        i = int(np.searchsorted(self.codes, code))
        if i >= len(self) or self.codes[i] != code:
            raise KeyError(code)
        return i

    def index_of(self, occupations) -> int:
        return self.index(sum(int(b) << j for j, b in enumerate(occupations)))

    def config(self, i) -> GaugeConfig:
        occ = tuple(int(x) for x in self.occupations[i])
        return GaugeConfig(occ, tuple(int(x) for x in self.fields[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self.config(i)


def enumerate_basis(params: LatticeParams, max_states=DEFAULT_MAX_STATES) -> SectorBasis:
    """All half-filled strings whose Gauss-law fields satisfy ``|l| <= W``."""
    n_sites = params.n_sites
    W = params.W
    codes = np.zeros(1, dtype=np.int64)
    fld = np.zeros(1, dtype=np.int64)
    for j in range(n_sites):
        bg = 1 if j % 2 == 0 else 0
        # the remaining sites can move the field by at most one unit per pair
        remaining = n_sites - 1 - j
        reach = (remaining + 1) // 2
        new_codes, new_fields = [], []
        for n in (0, 1):
            f = fld + (n - bg)
            keep = np.abs(f) <= min(W, reach) if j < n_sites - 1 else f == 0
            new_codes.append(codes[keep] | (n << j))
            new_fields.append(f[keep])
        codes = np.concatenate(new_codes)
        fld = np.concatenate(new_fields)
        if codes.size > max_states:
            raise CapacityError(
                f"sector exceeds {max_states} states at site {j} (L={params.L}, W={W})")
    codes = np.sort(codes)
    return SectorBasis(params, codes, fields_from_codes(codes, n_sites))


@dataclass(frozen=True, eq=False)
class SparseHamiltonian:
    """Hermitian sparse Hamiltonian on a :class:`SectorBasis`.

    ``gauge`` is ``"complex"`` for the Kogut-Susskind form with ``-i/(2a)``
    hopping, or ``"real"`` after the diagonal phase gauge
    ``c_j -> exp(i (-1)^j pi/4) c_j``.
    """

    params: LatticeParams
    matrix: sp.csr_matrix
    gauge: str = "complex"

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal().real

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def matvec(self, v):
        return self.matrix @ v

    def norm_bound(self) -> float:
        """Cheap upper bound on the spectral norm (max absolute row sum)."""
        return float(np.max(np.asarray(abs(self.matrix).sum(axis=1)).ravel()))


def _gauge_phases(codes, n_sites):
    # U|n> = exp(i Phi(n))|n>, Phi = (pi/4) sum_j (-1)^j n_j
    bits = codes_to_bits(codes, n_sites).astype(np.float64)
    sign = np.where(np.arange(n_sites) % 2 == 0, 1.0, -1.0)
    return np.exp(1j * (np.pi / 4) * (bits @ sign))


def diagonal_energies(params: LatticeParams, basis: SectorBasis) -> np.ndarray:
    """Mass plus electrostatic energy of every basis state."""
    bits = basis.occupations.astype(np.float64)
    stag = np.where(np.arange(params.n_sites) % 2 == 0, 1.0, -1.0)
    mass = -params.m * (bits @ stag)
    shifted = basis.fields.astype(np.float64) - params.theta / (2 * np.pi)
    electric = 0.5 * params.a * params.q**2 * np.sum(shifted**2, axis=1)
    return mass + electric


def hopping_pairs(basis: SectorBasis):
    """Yield ``(j, src, dst)`` for every allowed hop ``c^dag_{j-1} U c_j``.

    ``src`` holds the fermion on ``j``; ``dst`` has it on ``j-1`` with the bond
    field ``l_{j-1/2}`` raised by one.  Hops leaving the ribbon are dropped.
    """
    codes = basis.codes
    W = basis.params.W
    for j in range(1, basis.params.n_sites):
        has_j = (codes >> j) & 1
        has_prev = (codes >> (j - 1)) & 1
        src = np.nonzero((has_j == 1) & (has_prev == 0))[0]
        if src.size == 0:
            continue
        src = src[basis.fields[src, j - 1] + 1 <= W]
        target_codes = codes[src] ^ ((1 << j) | (1 << (j - 1)))
        dst = np.searchsorted(codes, target_codes)
        yield j, src, dst


def build_hamiltonian(params: LatticeParams, basis: SectorBasis, gauge="complex") -> SparseHamiltonian:
    """Sparse Kogut-Susskind Hamiltonian projected on the truncated sector."""
    if basis.params.n_sites != params.n_sites or basis.params.W != params.W:
        raise ValidationError("basis was enumerated for different (L, W)")
    if gauge not in ("complex", "real"):
        raise ValidationError(f"unknown gauge {gauge!r}")
    dim = len(basis)
    rows, cols, vals = [np.arange(dim)], [np.arange(dim)], [diagonal_energies(params, basis).astype(complex)]
    amp = -1j / (2 * params.a)
    for _, src, dst in hopping_pairs(basis):
        rows += [dst, src]
        cols += [src, dst]
        vals += [np.full(src.size, amp), np.full(src.size, np.conj(amp))]
    H = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dim, dim))
    if gauge == "real":
        phase = _gauge_phases(basis.codes, params.n_sites)
        D = sp.diags(phase)
        H = (D.conj() @ H @ D).tocsr()
        H = sp.csr_matrix(H.real)
    H.sort_indices()
    return SparseHamiltonian(params, H, gauge)


def ground_state(H: SparseHamiltonian, tol=1e-10, k=1, max_iter=5000, dense_max=512):
    """Lowest ``k`` eigenpairs (energies ascending, vectors as columns).

    Dimensions up to ``dense_max`` use dense diagonalization; above that a
    restarted Lanczos with full reorthogonalization starts from the
    normalized all-ones vector.  With ``k = 1`` the return is ``(E0, psi0)``.
    """
    dim = H.dimension
    if dim <= dense_max:
        w, v = np.linalg.eigh(H.toarray())
        E, V = w[:k], v[:, :k]
    else:
        E, V = lanczos_lowest(H.matvec, dim, k=k, tol=tol, max_iter=max_iter,
                              dtype=H.matrix.dtype)
    if k == 1:
        return float(E[0]), V[:, 0]
    return E, V


_OBSERVABLES = ("field_profile", "charge_density", "field_squared_total", "occupation")


def measure(state, basis: SectorBasis, which="field_profile", norm_tol=1e-8):
    """Expectation values of diagonal observables in ``state``.

    ``which`` is one of ``field_profile`` (per bond), ``charge_density`` (per
    site), ``occupation`` (per site) or ``field_squared_total`` (scalar).
    """
    if which not in _OBSERVABLES:
        raise ValidationError(f"unknown observable {which!r}; choose from {_OBSERVABLES}")
    psi = np.asarray(state)
    if psi.shape[0] != len(basis):
        raise ValidationError("state dimension does not match the basis")
    prob = np.abs(psi) ** 2
    if psi.ndim == 1:
        if abs(prob.sum() - 1.0) > norm_tol:
            raise ValidationError(f"state is not normalized (norm^2 = {prob.sum():.3e})")
    else:
        if np.max(np.abs(prob.sum(axis=0) - 1.0)) > norm_tol:
            raise ValidationError("state columns are not normalized")
        prob = prob.T
    if which == "field_profile":
        return prob @ basis.fields.astype(np.float64)
    if which == "field_squared_total":
        return prob @ np.sum(basis.fields.astype(np.float64) ** 2, axis=1)
    occ = prob @ basis.occupations.astype(np.float64)
    if which == "occupation":
        return occ
    return occ - _background(basis.params.n_sites)


def sector_size_unclipped(L) -> int:
    return comb(2 * L, L)


@dataclass
class GapScan:
    """Location of the smallest ``E1 - E0`` over ``m/q`` at fixed ``L``."""

    L: int
    W: int
    aq: float
    theta: float
    m_over_q: float
    gap: float
    evaluations: list

    def as_dict(self) -> dict:
        return {"L": self.L, "W": self.W, "aq": self.aq, "theta": self.theta,
                "m_over_q": self.m_over_q, "gap": self.gap,
                "evaluations": [list(e) for e in self.evaluations]}


def spectral_gap(params: LatticeParams, tol=1e-7, basis=None, start="seeded", return_vectors=False):
    """``E1 - E0`` in the gauge sector, from the real-gauge Hamiltonian.

    ``start`` may be a vector from a nearby parameter point; with
    ``return_vectors`` the two lowest eigenvectors are returned as well.
    """
    basis = enumerate_basis(params) if basis is None else basis
    H = build_hamiltonian(params, basis, gauge="real")
    if H.dimension <= 2048:
        w, v = np.linalg.eigh(H.toarray())
        w, v = w[:2], v[:, :2]
    else:
        # seeded start so that both symmetry sectors are reached
        w, v = lanczos_lowest(H.matvec, H.dimension, k=2, tol=tol, dtype=H.matrix.dtype,
                              start=start)
    gap = float(w[1] - w[0])
    return (gap, v) if return_vectors else gap


def gap_scan(L, W=3, aq=0.5, theta=np.pi, bounds=(0.0, 1.0), xatol=1e-2, tol=1e-7) -> GapScan:
    """Minimize the gap over ``m/q`` with a bounded Brent search.

    The basis is shared by all evaluations and each Lanczos run starts
    from the two lowest states of the previous one.
    """
    from scipy.optimize import minimize_scalar

    basis = enumerate_basis(LatticeParams.from_dimensionless(L, 0.0, aq, theta, W))
    evals = []
    warm = {"start": "seeded"}

    def f(r):
        p = LatticeParams.from_dimensionless(L, r * aq, aq, theta, W)
        g, v = spectral_gap(p, tol=tol, basis=basis, start=warm["start"], return_vectors=True)
        # a mix of both states keeps each one in the next Krylov space
        warm["start"] = v[:, 0] + v[:, 1]
        evals.append((float(r), g))
        return g

    res = minimize_scalar(f, bounds=bounds, method="bounded", options={"xatol": xatol})
    return GapScan(L, W, aq, theta, float(res.x), float(res.fun), evals)
