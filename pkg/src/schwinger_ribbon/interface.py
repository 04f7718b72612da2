"""Minimal-length Ising interfaces on a ribbon and their Schwinger dictionary.

Height convention: a path has integer heights ``y_0 .. y_2L`` with ``y_0 = 0``
and ``y_{j+1} = y_j + 2 n_j - 1`` (a north-east step for an occupied site).
Gauss law then gives ``y_j = 2 l_{j-1/2} + (j mod 2)``, so a field value is
half the height with the sublattice offset removed.

Spins live on the 45 degree rotated square lattice: a cell is an integer pair
``(c, r)`` with ``c + r`` odd, column ``c`` running along the chain and ``r``
the height.  The path vertex in column ``c`` sits at ``(c, y_c)``; spins above
it are ``+1`` and below it ``-1``.  The L x L square with lattice indices
``1 <= r_x, r_y <= L`` maps to ``c = r_x - r_y + L`` and
``r = r_x + r_y - L - 1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import EquivalenceError, ValidationError
from .lattice import (
    GaugeConfig,
    LatticeParams,
    SectorBasis,
    build_hamiltonian,
    enumerate_basis,
)

__all__ = [
    "InterfacePath",
    "RibbonGeometry",
    "SpinConfig",
    "FieldPattern",
    "EquivalenceReport",
    "encode_path",
    "decode_path",
    "spin_configuration",
    "ising_energy",
    "pattern_energy",
    "projected_transverse",
    "ising_parameters",
    "ising_diagonal",
    "assemble_ising_hamiltonian",
    "verify_equivalence",
]

NE, SE = "NE", "SE"


@dataclass(frozen=True)
class InterfacePath:
    """Domain-wall path as a move sequence plus the integer height profile."""

    moves: tuple
    heights: tuple

    def __post_init__(self):
        if len(self.heights) != len(self.moves) + 1:
            raise ValidationError("heights must have one more entry than moves")
        if self.heights[0] != 0:
            raise ValidationError("path must start at height 0")
        for j, mv in enumerate(self.moves):
            step = 1 if mv == NE else -1 if mv == SE else None
            if step is None:
                raise ValidationError(f"unknown move {mv!r} at position {j}")
            if self.heights[j + 1] - self.heights[j] != step:
                raise ValidationError(f"height step inconsistent with move at position {j}")

    @classmethod
    def from_moves(cls, moves):
        moves = tuple(moves)
        y = [0]
        for mv in moves:
            y.append(y[-1] + (1 if mv == NE else -1))
        return cls(moves, tuple(y))

    @property
    def L(self) -> int:
        return len(self.moves) // 2

    @property
    def occupations(self) -> tuple:
        return tuple(1 if mv == NE else 0 for mv in self.moves)

    def fields(self) -> tuple:
        """Field values ``l_{j-1/2} = (y_j - (j mod 2)) / 2`` for ``j = 1 .. 2L-1``."""
        return tuple((self.heights[j] - (j % 2)) // 2 for j in range(1, len(self.moves)))


def encode_path(config: GaugeConfig) -> InterfacePath:
    """Map a basis state to its interface: occupied site -> north-east move."""
    path = InterfacePath.from_moves(NE if n else SE for n in config.occupations)
    for j, l in enumerate(config.fields, start=1):
        if path.heights[j] != 2 * l + (j % 2):
            raise ValidationError(f"config fields violate Gauss law at bond {j - 1}")
    return path


def decode_path(path: InterfacePath, W=None) -> GaugeConfig:
    """Inverse of :func:`encode_path`; rejects paths that leave the ribbon."""
    if len(path.moves) % 2 or path.heights[-1] != 0:
        raise ValidationError("path must have even length and end at height 0")
    f = path.fields()
    if W is not None:
        for b, l in enumerate(f):
            if abs(l) > W:
                raise ValidationError(f"path leaves the W={W} ribbon at bond {b} (field {l})")
    return GaugeConfig(path.occupations, tuple(int(x) for x in f))


def heights_from_fields(fields):
    """Vectorized ``y_j`` for ``j = 0 .. 2L`` from bond fields (rows = states)."""
    fields = np.atleast_2d(np.asarray(fields, dtype=np.int64))
    n = fields.shape[1] + 1
    parity = np.arange(1, n) % 2
    inner = 2 * fields + parity
    zero = np.zeros((fields.shape[0], 1), dtype=np.int64)
    return np.hstack([zero, inner, zero])


@dataclass(frozen=True, eq=False)
class RibbonGeometry:
    """Cells of the ribbon holding every path with ``|l| <= W``.

    Column ``c`` admits heights between ``ymin[c]`` and ``ymax[c]``.  Free
    cells lie strictly between those; one guard cell per side carries the
    fixed boundary spin (``+1`` on top, ``-1`` at the bottom).
    """

    L: int
    W: int
    ymin: np.ndarray = field(init=False, repr=False)
    ymax: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.L < 1 or self.W < 0:
            raise ValidationError("ribbon needs L >= 1 and W >= 0")
        c = np.arange(2 * self.L + 1)
        reach = np.minimum(c, 2 * self.L - c)
        par = c % 2
        top = np.minimum(reach, 2 * self.W + par)
        bot = np.maximum(-reach, -2 * self.W + par)
        object.__setattr__(self, "ymin", bot)
        object.__setattr__(self, "ymax", top)

    @cached_property
    def free_cells(self) -> np.ndarray:
        cells = [(c, r) for c in range(2 * self.L + 1)
                 for r in range(int(self.ymin[c]) + 1, int(self.ymax[c]), 2)]
        return np.array(cells, dtype=np.int64).reshape(-1, 2)

    @cached_property
    def boundary_cells(self) -> np.ndarray:
        """Guard cells as rows ``(c, r, spin)``."""
        rows = []
        for c in range(2 * self.L + 1):
            rows.append((c, int(self.ymax[c]) + 1, 1))
            rows.append((c, int(self.ymin[c]) - 1, -1))
        return np.array(rows, dtype=np.int64)

    @property
    def n_free(self) -> int:
        return len(self.free_cells)

    @property
    def n_cells(self) -> int:
        return self.n_free + len(self.boundary_cells)

    @property
    def n_formula(self) -> int:
        """Array-size bookkeeping ``2L (2W + 2)``."""
        return 2 * self.L * (2 * self.W + 2)

    def lattice_coords(self, cells=None) -> np.ndarray:
        """Square-lattice indices ``(r_x, r_y)`` of the given ``(c, r)`` cells."""
        cells = self.free_cells if cells is None else np.asarray(cells)[:, :2]
        c, r = cells[:, 0], cells[:, 1]
        return np.stack([(c + r + 1) // 2, (r - c + 2 * self.L + 1) // 2], axis=1)

    def contains(self, path: InterfacePath) -> bool:
        y = np.asarray(path.heights)
        return len(y) == 2 * self.L + 1 and bool(np.all((y >= self.ymin) & (y <= self.ymax)))

    def all_cells(self):
        """Free and guard cells with a lookup dictionary ``(c, r) -> index``."""
        cells = np.vstack([self.free_cells, self.boundary_cells[:, :2]])
        return cells, {(int(c), int(r)): i for i, (c, r) in enumerate(cells)}

    def bonds(self):
        """Nearest-neighbour pairs of the rotated lattice among all cells."""
        cells, idx = self.all_cells()
        pairs = []
        for i, (c, r) in enumerate(cells):
            for dc, dr in ((1, 1), (1, -1)):
                j = idx.get((int(c + dc), int(r + dr)))
                if j is not None:
                    pairs.append((i, j))
        return np.array(pairs, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class SpinConfig:
    """Spin values on the free cells of a ribbon (guard cells are implied)."""

    geometry: RibbonGeometry
    values: np.ndarray

    def full(self) -> np.ndarray:
        """Spins on free then guard cells, in the order of ``geometry.all_cells``."""
        return np.concatenate([self.values, self.geometry.boundary_cells[:, 2]])

    def heights(self) -> np.ndarray:
        """Read the domain wall column by column; raises if it is not a single wall."""
        g = self.geometry
        y = np.array(g.ymin, copy=True)
        cells = g.free_cells
        for c in range(2 * g.L + 1):
            sel = cells[:, 0] == c
            col = self.values[sel][np.argsort(cells[sel, 1])]
            down = int(np.sum(col == -1))
            if np.any(col[:down] != -1) or np.any(col[down:] != 1):
                raise ValidationError(f"column {c} is not a single domain wall")
            y[c] = g.ymin[c] + 2 * down
        if np.any(np.abs(np.diff(y)) != 1):
            raise ValidationError("domain wall is not a connected minimal path")
        return y


def _column_spins(geometry: RibbonGeometry, heights) -> np.ndarray:
    """Vectorized fill: ``values[k, i] = +1`` iff free cell ``i`` lies above path ``k``."""
    cells = geometry.free_cells
    h = np.atleast_2d(heights)[:, cells[:, 0]]
    return np.where(cells[None, :, 1] > h, 1, -1).astype(np.int8)


def spin_configuration(path: InterfacePath, geometry: RibbonGeometry) -> SpinConfig:
    """Spins ``+1`` above the path and ``-1`` below it."""
    if path.L != geometry.L:
        raise ValidationError("path and geometry have different L")
    if not geometry.contains(path):
        raise ValidationError("geometry too small for this path")
    return SpinConfig(geometry, _column_spins(geometry, np.asarray(path.heights))[0])


def ising_energy(spin: SpinConfig, J=1.0) -> float:
    """Nearest-neighbour Ising energy ``-J sum s_i s_j`` including guard cells."""
    s = spin.full().astype(np.float64)
    b = spin.geometry.bonds()
    return float(-J * np.sum(s[b[:, 0]] * s[b[:, 1]]))


@dataclass(frozen=True)
class FieldPattern:
    """Longitudinal field ``-amplitude * sum_r coeff(r) sigma^z_r`` on the ribbon.

    ``kind`` is ``uniform_h``, ``gradient_hprime`` or ``staggered_mu``.  With
    ``form="general"`` the gradient and staggered coefficients use the height
    ``r = r_x + r_y - L - 1`` and are exact for every ``L``; ``form="table"``
    uses the closed expressions in ``r_x + r_y`` that agree with the general
    ones only for even ``L``.
    """

    kind: str
    amplitude: float
    L: int
    form: str = "general"

    def __post_init__(self):
        if self.kind not in ("uniform_h", "gradient_hprime", "staggered_mu"):
            raise ValidationError(f"unknown pattern kind {self.kind!r}")
        if self.form not in ("general", "table"):
            raise ValidationError(f"unknown pattern form {self.form!r}")

    def coefficient(self, rx, ry):
        rx, ry = np.asarray(rx), np.asarray(ry)
        s = rx + ry
        if self.kind == "uniform_h":
            return np.ones_like(s, dtype=np.float64)
        if self.form == "table":
            if self.kind == "gradient_hprime":
                return (-self.L - 2 + s + (1 + (-1.0) ** s) / 2).astype(np.float64)
            return ((-1.0) ** s).astype(np.float64)
        r = s - self.L - 1
        if self.kind == "gradient_hprime":
            return (r - (1 + (-1.0) ** r) / 2).astype(np.float64)
        return ((-1.0) ** (r + 1)).astype(np.float64)


def _vacuum_heights(L):
    return np.array([j % 2 for j in range(2 * L + 1)], dtype=np.int64)


def pattern_energy(spin: SpinConfig, pattern: FieldPattern) -> float:
    """Pattern energy of ``spin`` minus that of the bare-vacuum interface."""
    g = spin.geometry
    if pattern.L != g.L:
        raise ValidationError("pattern and geometry have different L")
    rxy = g.lattice_coords()
    coeff = pattern.coefficient(rxy[:, 0], rxy[:, 1])
    vac = _column_spins(g, _vacuum_heights(g.L))[0]
    return float(-pattern.amplitude * np.dot(coeff, spin.values.astype(np.float64) - vac))


def _pattern_energies(geometry, heights, pattern):
    spins = _column_spins(geometry, heights).astype(np.float64)
    vac = _column_spins(geometry, _vacuum_heights(geometry.L))[0]
    rxy = geometry.lattice_coords()
    coeff = pattern.coefficient(rxy[:, 0], rxy[:, 1])
    return -pattern.amplitude * ((spins - vac) @ coeff)


def projected_transverse(basis: SectorBasis, g) -> sp.csr_matrix:
    """Transverse field ``-g sum_r sigma^y_r`` projected onto the interface states.

    Every free spin of every basis state is flipped; the flip is kept when the
    new spin configuration is again a single minimal interface inside the
    ribbon.  Matrix elements come straight from ``sigma^y`` with ``sigma^z = +1``
    as the first basis vector: ``<-|sigma^y|+> = i``.
    """
    L, W = basis.params.L, basis.params.W
    geom = RibbonGeometry(L, W)
    dim = len(basis)
    if g == 0 or dim == 1:
        return sp.csr_matrix((dim, dim), dtype=complex)
    heights = heights_from_fields(basis.fields)
    spins = _column_spins(geom, heights)
    cells = geom.free_cells
    lookup = {bytes(row): i for i, row in enumerate(spins)}
    rows, cols, vals = [], [], []
    for k in range(len(cells)):
        flipped = spins.copy()
        flipped[:, k] *= -1
        for i in range(dim):
            j = lookup.get(bytes(flipped[i]))
            if j is None:
                continue
            # sigma^y: <-|s^y|+> = +i, <+|s^y|-> = -i
            elem = 1j if spins[i, k] == 1 else -1j
            rows.append(j)
            cols.append(i)
            vals.append(-g * elem)
    return sp.csr_matrix((vals, (rows, cols)), shape=(dim, dim), dtype=complex)


def ising_parameters(params: LatticeParams) -> dict:
    """Ising couplings reproducing the lattice Hamiltonian: g, h, h', mu."""
    a, q = params.a, params.q
    return {
        "g": 1.0 / (2 * a),
        "h": -a * q**2 * params.theta / (4 * np.pi),
        "hprime": a * q**2 / 4,
        "mu": params.m,
    }


def ising_diagonal(params: LatticeParams, basis: SectorBasis, form="general") -> np.ndarray:
    """Summed pattern energies of every basis state by direct cell summation."""
    geom = RibbonGeometry(params.L, params.W)
    coup = ising_parameters(params)
    dim = len(basis)
    heights = heights_from_fields(basis.fields)
    total = np.zeros(dim)
    for kind, key in (("uniform_h", "h"), ("gradient_hprime", "hprime"), ("staggered_mu", "mu")):
        total += _pattern_energies(geom, heights, FieldPattern(kind, coup[key], params.L, form))
    return total


def assemble_ising_hamiltonian(params: LatticeParams, basis: SectorBasis = None, form="general"):
    """Projected Ising Hamiltonian on the interface sector (dense-ready sparse)."""
    basis = basis or enumerate_basis(params)
    coup = ising_parameters(params)
    T = projected_transverse(basis, coup["g"])
    return (T + sp.diags(ising_diagonal(params, basis, form).astype(complex))).tocsr()


@dataclass
class EquivalenceReport:
    max_abs_deviation: float
    constant_offset: float
    spectral_deviation: float
    dimension: int
    phase_gauge_applied: bool
    worst_element: tuple = ()
    worst_states: tuple = ()

    def as_dict(self) -> dict:
        return {
            "max_abs_deviation": self.max_abs_deviation,
            "constant_offset": self.constant_offset,
            "spectral_deviation": self.spectral_deviation,
            "dimension": self.dimension,
            "phase_gauge_applied": self.phase_gauge_applied,
            "worst_element": list(self.worst_element),
            "worst_states": list(self.worst_states),
        }


def verify_equivalence(params: LatticeParams, tol=1e-12, form="general", gauge=False,
                       raise_on_fail=False, max_dim=4096) -> EquivalenceReport:
    """Compare the projected Ising Hamiltonian with the lattice Hamiltonian.

    The constant offset is the mean diagonal difference.  With ``gauge=True``
    both sides are rotated by the phase gauge before comparison (a unitary
    similarity, so the deviation is unchanged up to rounding).
    """
    basis = enumerate_basis(params)
    if len(basis) > max_dim:
        raise ValidationError(f"sector dimension {len(basis)} exceeds {max_dim} for dense comparison")
    Hs = build_hamiltonian(params, basis).toarray()
    He = assemble_ising_hamiltonian(params, basis, form).toarray()
    if gauge:
        from .lattice import _gauge_phases
        ph = _gauge_phases(basis.codes, params.n_sites)
        Hs = ph.conj()[:, None] * Hs * ph[None, :]
        He = ph.conj()[:, None] * He * ph[None, :]
    diff = He - Hs
    offset = float(np.mean(np.real(np.diag(diff))))
    diff -= offset * np.eye(len(basis))
    i, j = np.unravel_index(np.argmax(np.abs(diff)), diff.shape)
    dev = float(np.abs(diff[i, j]))
    ws = np.linalg.eigvalsh(He) - offset
    wh = np.linalg.eigvalsh(Hs)
    report = EquivalenceReport(
        max_abs_deviation=dev,
        constant_offset=offset,
        spectral_deviation=float(np.max(np.abs(ws - wh))),
        dimension=len(basis),
        phase_gauge_applied=gauge,
        worst_element=(int(i), int(j)),
        worst_states=(basis.config(i).occupations, basis.config(j).occupations),
    )
    if raise_on_fail and dev > tol:
        raise EquivalenceError(
            f"Ising dictionary deviates by {dev:.3e} at element ({i}, {j})", report.as_dict())
    return report
