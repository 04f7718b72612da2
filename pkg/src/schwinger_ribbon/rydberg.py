"""Dual-species Rydberg array encoding of the interface dynamics.

Frame: atoms sit on the integer square lattice ``(x, y)``; the even sublattice
``x + y`` even hosts species A (intraspecies coupling ``V``), the odd one
species B.  Pairs with even ``dx + dy`` couple with ``V / r^6``, odd pairs
with ``V' / r^6``, for ``r^2 <= shell_cutoff``.

An interface with heights ``y_x`` (the path heights of the lattice model,
column ``x = 0 .. 2L``) is the occupation pattern

    n(x, y) = [x + y even]  if y < y_x   (checkerboard below)
            = [x + y odd]   if y >= y_x  (anti-checkerboard above)

so the two atoms at rows ``y_x - 1`` and ``y_x`` form the ground-state pair
of column ``x``.  Outside ``0 <= x <= 2L`` the interface continues as the
bare-vacuum zigzag ``y_x = x mod 2``.  A corner flip raising ``y_x`` by two
excites atom ``(x, y_x)`` and de-excites ``(x, y_x + 1)``; the two orders of
these single-atom flips are the virtual channels of the effective hopping.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import cached_property
from itertools import product

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CapacityError, ConvergenceError, ValidationError
from .lattice import (
    LatticeParams,
    diagonal_energies,
    enumerate_basis,
    hopping_pairs,
)

logger = logging.getLogger(__name__)

__all__ = [
    "ALLOWED_CUTOFFS",
    "CANCELLATION_RATIO",
    "RydbergParams",
    "Shell",
    "ShellTable",
    "StabilityReport",
    "TailCouplings",
    "DenominatorReport",
    "DictionaryResult",
    "RydbergPatch",
    "RydbergReport",
    "shell_table",
    "bulk_gaps",
    "tail_couplings",
    "virtual_denominators",
    "effective_kinetic",
    "dictionary_solve",
    "verify_rydberg",
    "rydberg_scaling",
    "tail_splitting",
    "pattern_orientation",
    "rabi_profile",
    "effective_1d",
    "dictionary_hamiltonian",
    "design_array",
    "reference_constants",
    "tail_counts",
    "interface_occupation",
]

ALLOWED_CUTOFFS = (1, 2, 4, 5, 8, 9, 10, 13)
CANCELLATION_RATIO = Fraction(125, 64)
MAX_FREE_ATOMS = 20


@dataclass(frozen=True)
class RydbergParams:
    """Hardware couplings of the dual-species array (one common energy unit)."""

    V: float = 1.0
    Vprime: float = 125 / 64
    Omega: float = 0.0
    Delta: float = 1.0
    h: float = 0.0
    hprime: float = 0.0
    mu: float = 0.0
    shell_cutoff: int = 13

    def __post_init__(self):
        if self.shell_cutoff not in ALLOWED_CUTOFFS:
            raise ValidationError(f"shell_cutoff must be one of {ALLOWED_CUTOFFS}")
        if not (self.V > 0 and self.Vprime > 0):
            raise ValidationError("V and Vprime must be positive")

    def coupling(self, dx, dy):
        """Pair coupling for displacement ``(dx, dy)`` (vectorized)."""
        dx, dy = np.asarray(dx), np.asarray(dy)
        r2 = dx * dx + dy * dy
        scale = np.where((dx + dy) % 2 == 0, float(self.V), float(self.Vprime))
        safe = np.where(r2 == 0, 1, r2)
        return np.where((r2 > 0) & (r2 <= self.shell_cutoff), scale / safe.astype(float) ** 3, 0.0)

    def pattern_energy(self, x, y):
        """Single-atom longitudinal energy of the even-sublattice patterns."""
        x, y = np.asarray(x), np.asarray(y)
        even = (x + y) % 2 == 0
        grad = y + (y % 2 == 0)
        val = -self.h - self.hprime * grad - self.mu * np.where(y % 2 == 0, 1.0, -1.0)
        return np.where(even, val, 0.0)


@dataclass(frozen=True)
class Shell:
    r2: int
    multiplicity: int
    parity: str
    weight: Fraction


@dataclass(frozen=True)
class ShellTable:
    shells: tuple
    cutoff: int

    @property
    def total_multiplicity(self) -> int:
        return sum(s.multiplicity for s in self.shells)

    def rows(self):
        return [(s.r2, s.multiplicity, s.parity, s.weight) for s in self.shells]


def shell_table(shell_cutoff=13) -> ShellTable:
    """Coordination shells with ``0 < r^2 <= shell_cutoff`` by direct enumeration."""
    if shell_cutoff not in ALLOWED_CUTOFFS:
        raise ValidationError(f"unsupported shell cutoff {shell_cutoff}; choose from {ALLOWED_CUTOFFS}")
    counts, parity = {}, {}
    span = int(np.ceil(np.sqrt(shell_cutoff)))
    for dx in range(-span, span + 1):
        for dy in range(-span, span + 1):
            r2 = dx * dx + dy * dy
            if 0 < r2 <= shell_cutoff:
                counts[r2] = counts.get(r2, 0) + 1
                p = "even" if (dx + dy) % 2 == 0 else "odd"
                if parity.setdefault(r2, p) != p:
                    raise AssertionError("mixed parity shell")
    shells = tuple(Shell(r2, counts[r2], parity[r2], Fraction(1, r2**3)) for r2 in sorted(counts))
    return ShellTable(shells, shell_cutoff)


def _shell_sum(V, Vp, terms):
    """Sum ``mult * coupling / r^6`` over ``(r2, mult)`` with the parity of each shell."""
    par = {s.r2: s.parity for s in shell_table(13).shells}
    total = 0
    for r2, mult in terms:
        scale = V if par[r2] == "even" else Vp
        total = total + mult * scale * Fraction(1, r2**3)
    return total


@dataclass
class StabilityReport:
    DeltaBar: float
    DeltaBarPrime: float
    DeltaBarDoublePrime: float
    window_ok: bool
    margins: dict
    bulk_constant: float
    violation_constant: float

    def as_dict(self):
        return dict(self.__dict__)


def bulk_gaps(params: RydbergParams, window=None) -> StabilityReport:
    """Single-atom gaps of the checkerboard bulk and of interface pair atoms.

    ``window`` is ``(lower, upper)`` in units of ``V`` for the detuning; it
    defaults to the bulk constant and the blockade-violating denominator
    constant computed by :func:`virtual_denominators`.
    """
    V, Vp, D = params.V, params.Vprime, params.Delta
    # same-sublattice neighbours of a Rydberg atom in the bulk
    bulk = float(_shell_sum(1, 1, [(2, 4), (4, 4), (8, 4), (10, 8)]))
    # opposite-sublattice neighbours seen by a ground atom
    viol = float(_shell_sum(1, 1, [(1, 4), (5, 8), (9, 4), (13, 8)]))
    dbar = D - V * bulk
    dbarp = -D + Vp * viol
    dbarpp = -D + Vp + 2 * V / 8 + V / 64 + 2 * Vp / 125
    if window is None:
        den = virtual_denominators(replace(params, Delta=0.5 * (bulk * V + Vp)), check=False)
        window = (bulk, den.violating_reference / V)
    lo, hi = window
    margins = {"lower": D - lo * V, "upper": hi * V - D}
    return StabilityReport(dbar, dbarp, dbarpp, bool(lo * V < D < hi * V), margins, bulk, viol)


@dataclass
class TailCouplings:
    nn_coefficient: object
    residual_coefficient: object
    cancellation_ratio: Fraction = CANCELLATION_RATIO

    def as_dict(self):
        return {"nn_coefficient": float(self.nn_coefficient),
                "residual_coefficient": float(self.residual_coefficient),
                "cancellation_ratio": str(self.cancellation_ratio)}


def tail_couplings(params_or_V, Vprime=None) -> TailCouplings:
    """Coefficients of the interface tail energy.

    ``E = const + nn * sum_j P_same(j, j+1) + residual * sum_j P_same(j-1, j, j+1)``
    where ``P_same`` projects on equal consecutive occupations.  Pass
    :class:`fractions.Fraction` inputs for exact arithmetic.
    """
    if isinstance(params_or_V, RydbergParams):
        V, Vp = params_or_V.V, params_or_V.Vprime
    else:
        V, Vp = params_or_V, Vprime
    nn = -(V * Fraction(1, 64) - Vp * Fraction(1, 125)) if _exact(V, Vp) else -(V / 64 - Vp / 125)
    if _exact(V, Vp):
        res = Vp * (Fraction(1, 729) + Fraction(1, 2197)) - 2 * V * Fraction(1, 1000)
    else:
        res = Vp * (1 / 729 + 1 / 2197) - 2 * V / 1000
    return TailCouplings(nn, res)


def _exact(*vals):
    return all(isinstance(v, (int, Fraction)) for v in vals)


# interface occupation patterns ------------------------------------------------

def extended_height(heights, x):
    """Path height at column ``x``, continued as the vacuum zigzag outside."""
    heights = np.asarray(heights)
    x = np.asarray(x)
    inside = (x >= 0) & (x < len(heights))
    return np.where(inside, heights[np.clip(x, 0, len(heights) - 1)], x % 2)


def interface_occupation(heights, x, y):
    """Rydberg occupation of atom ``(x, y)`` for the interface ``heights``."""
    x, y = np.asarray(x), np.asarray(y)
    below = y < extended_height(heights, x)
    return np.where(below, (x + y) % 2 == 0, (x + y) % 2 == 1).astype(np.int8)


def _window(cx, cy, reach=6):
    xs, ys = np.meshgrid(np.arange(cx - reach, cx + reach + 1), np.arange(cy - reach, cy + reach + 1), indexing="ij")
    return xs.ravel(), ys.ravel()


def _atom_field(params, heights, atom, extra=()):
    """Interaction energy of ``atom`` with all Rydberg atoms of the pattern."""
    ax, ay = atom
    xs, ys = _window(ax, ay)
    occ = interface_occupation(heights, xs, ys).astype(float)
    for (ex, ey, val) in extra:
        occ[(xs == ex) & (ys == ey)] = val
    occ[(xs == ax) & (ys == ay)] = 0.0
    return float(np.sum(params.coupling(xs - ax, ys - ay) * occ))


@dataclass
class DenominatorReport:
    deltaE: dict
    deltaE_A: float
    deltaE_B: float
    DeltaTilde: float
    DeltaTildePrime: float
    epsilon_spread: float
    epsilon_spread_prime: float
    spread_vs_reference: float
    respecting_constants: np.ndarray = field(repr=False)
    violating_constants: np.ndarray = field(repr=False)
    respecting_reference: float = 0.0
    violating_reference: float = 0.0
    environments: list = field(default_factory=list, repr=False)

    def as_dict(self):
        return {
            "deltaE": self.deltaE,
            "deltaE_A": self.deltaE_A,
            "deltaE_B": self.deltaE_B,
            "DeltaTilde": self.DeltaTilde,
            "DeltaTildePrime": self.DeltaTildePrime,
            "epsilon_spread": self.epsilon_spread,
            "epsilon_spread_prime": self.epsilon_spread_prime,
            "spread_vs_reference": self.spread_vs_reference,
        }


def _flip_environments():
    """All interface environments of a corner flip at column 3.

    Moves 1 and 2 precede the corner, moves 5 and 6 follow it; the corner is
    ``NE, SE`` (peak) in the upper state and ``SE, NE`` (valley) in the lower.
    """
    out = []
    for env in product((0, 1), repeat=4):
        pair = []
        for core in ((1, 0), (0, 1)):
            moves = [env[0], env[1], *core, env[2], env[3]]
            y = np.concatenate([[0], np.cumsum(np.where(np.array(moves) == 1, 1, -1))])
            pair.append(y)
        out.append((env, pair[0], pair[1]))
    return out


def virtual_denominators(params: RydbergParams, check=True) -> DenominatorReport:
    """Intermediate-state energies of the two second-order flip channels.

    For every environment of a turning point the energies are assembled by
    explicit lattice sums over the pattern.  ``deltaE`` entries are energy
    increases ``E_virtual - E_start`` of the blockade-respecting channel in
    the form ``Delta - c V``; the stored constants are the ``c``.
    Configuration labels: ``a`` is the start state with the largest constant,
    ``a'`` the other end of the same flip; ``b`` the smallest, ``b'`` its
    partner.
    """
    V, Vp, D = params.V, params.Vprime, params.Delta
    if check and abs(Vp / V - 125 / 64) > 1e-12:
        logger.warning("virtual_denominators evaluated away from V'/V = 125/64")
    c = 3
    resp, viol, envs = [], [], []
    for env, yP, yV in _flip_environments():
        top = int(yP[c])
        low_atom, up_atom = (c, top - 2), (c, top - 1)
        # peak: low_atom Rydberg, up_atom ground; valley: reversed
        assert interface_occupation(yP, c, top - 2) == 1 and interface_occupation(yV, c, top - 1) == 1
        rP = _atom_field(params, yP, low_atom)
        rV = _atom_field(params, yV, up_atom)
        vP = _atom_field(params, yP, up_atom)
        vV = _atom_field(params, yV, low_atom)
        resp.append((rP / V, rV / V))
        viol.append((vP / V, vV / V))
        envs.append(env)
    resp = np.array(resp)
    viol = np.array(viol)
    flat = resp.ravel()
    ia = int(np.argmax(flat))
    ib = int(np.argmin(flat))
    a_env, a_side = divmod(ia, 2)
    b_env, b_side = divmod(ib, 2)
    deltaE = {
        "a": D - resp[a_env, a_side] * V,
        "a'": D - resp[a_env, 1 - a_side] * V,
        "b": D - resp[b_env, b_side] * V,
        "b'": D - resp[b_env, 1 - b_side] * V,
    }
    x_ref = float(resp[b_env, b_side])
    xv_ref = float(np.min(viol))
    DeltaTilde = D - x_ref * V
    DeltaTildePrime = xv_ref * V - D
    if check and (DeltaTilde <= 0 or DeltaTildePrime <= 0):
        raise ValidationError(
            f"non-positive virtual gap (DeltaTilde={DeltaTilde:.4g}, DeltaTildePrime={DeltaTildePrime:.4g})")
    # per-flip matrix-element weights, symmetrized over the two ends
    m_resp = 0.5 * (1 / (D - resp[:, 0] * V) + 1 / (D - resp[:, 1] * V))
    m_viol = 0.5 * (1 / (viol[:, 0] * V - D) + 1 / (viol[:, 1] * V - D))
    spread = float(np.max(np.abs(m_resp / m_resp.mean() - 1)))
    spread_p = float(np.max(np.abs(m_viol / m_viol.mean() - 1)))
    spread_ref = float(np.max(np.abs(m_resp * DeltaTilde - 1)))
    # causally disconnected sums, same for every environment
    dEA = -float(_shell_sum(V, Vp, [(2, 2), (4, 1), (8, 2), (10, 2)]))
    dEB = -float(_shell_sum(V, Vp, [(5, 2), (9, 1), (13, 1)]))
    return DenominatorReport(
        deltaE=deltaE, deltaE_A=dEA, deltaE_B=dEB,
        DeltaTilde=DeltaTilde, DeltaTildePrime=DeltaTildePrime,
        epsilon_spread=spread, epsilon_spread_prime=spread_p, spread_vs_reference=spread_ref,
        respecting_constants=resp, violating_constants=viol,
        respecting_reference=x_ref * V, violating_reference=xv_ref * V,
        environments=envs,
    )


def effective_kinetic(params: RydbergParams, denominators: DenominatorReport = None) -> float:
    """Magnitude ``(Omega/2)^2 (1/DeltaTilde + 1/DeltaTildePrime)`` of the induced hopping.

    The induced matrix element between the two corner states is ``-t_eff``
    (both virtual channels lie above the band).
    """
    den = denominators or virtual_denominators(params, check=False)
    if den.DeltaTilde <= 0 or den.DeltaTildePrime <= 0:
        raise ValidationError("detuning outside the perturbative window")
    return (params.Omega / 2) ** 2 * (1 / den.DeltaTilde + 1 / den.DeltaTildePrime)


# dictionary -------------------------------------------------------------------

@dataclass
class DictionaryResult:
    params: RydbergParams
    t_eff: float
    energy_scale: float
    ratios: dict
    feasible: bool
    stability: StabilityReport
    rabi_profile: object = None

    def as_dict(self):
        p = self.params
        return {
            "V": p.V, "Vprime": p.Vprime, "Omega": p.Omega, "Delta": p.Delta,
            "h": p.h, "hprime": p.hprime, "mu": p.mu,
            "t_eff": self.t_eff, "energy_scale": self.energy_scale,
            "ratios": self.ratios, "feasible": self.feasible,
            "window_ok": self.stability.window_ok,
        }


def pattern_orientation(L=2, W=1):
    """Unit-amplitude pattern energies regressed on lattice-model diagonal terms.

    Returns ``{kind: {"sum_l": c1, "sum_l2": c2, "stag": c3}}`` such that the
    pattern energy of every interface equals
    ``c1 sum l + c2 sum l^2 + c3 sum (-1)^j n_j + const`` exactly.
    """
    basis = enumerate_basis(LatticeParams(L, W=W))
    heights = _basis_heights(basis)
    xs, ys = np.meshgrid(np.arange(-1, 2 * L + 2), np.arange(-2 * W - 3, 2 * W + 5), indexing="ij")
    xs, ys = xs.ravel(), ys.ravel()
    occ = np.array([interface_occupation(h, xs, ys) for h in heights], dtype=float)
    f = basis.fields.astype(float)
    stag = basis.occupations.astype(float) @ np.where(np.arange(2 * L) % 2 == 0, 1.0, -1.0)
    A = np.column_stack([np.ones(len(basis)), f.sum(1), (f**2).sum(1), stag])
    out = {}
    for kind, kw in (("h", {"h": 1.0}), ("hprime", {"hprime": 1.0}), ("mu", {"mu": 1.0})):
        e = occ @ RydbergParams(**kw).pattern_energy(xs, ys)
        coef, *_ = np.linalg.lstsq(A, e, rcond=None)
        if np.max(np.abs(A @ coef - e)) > 1e-9:
            raise AssertionError(f"pattern {kind} is not affine in the lattice-model terms")
        out[kind] = {"sum_l": coef[1], "sum_l2": coef[2], "stag": coef[3]}
    return out


def dictionary_solve(lattice: LatticeParams, V=1.0, Delta=1.0, Omega=None, Omega_max=0.05,
                     Vprime=None, factor=5.0, rabi_compensation=False) -> DictionaryResult:
    """Hardware parameters reproducing ``lattice`` up to an overall energy scale.

    ``Omega`` (default ``Omega_max``) fixes ``t_eff``; the lattice-model
    energy unit then corresponds to ``energy_scale = 2 a t_eff`` in hardware
    units, and the even-sublattice pattern amplitudes follow from
    :func:`pattern_orientation`.
    """
    Vprime = float(CANCELLATION_RATIO) * V if Vprime is None else Vprime
    Omega = Omega_max if Omega is None else Omega
    if Omega > Omega_max:
        raise ValidationError(f"Omega={Omega} exceeds Omega_max={Omega_max}")
    base = RydbergParams(V=V, Vprime=Vprime, Omega=Omega, Delta=Delta)
    den = virtual_denominators(base, check=False)
    stab = bulk_gaps(base)
    if not stab.window_ok or den.DeltaTilde <= 0 or den.DeltaTildePrime <= 0:
        raise ValidationError(f"Delta={Delta} outside the stability window {stab.margins}")
    t_eff = effective_kinetic(base, den)
    if t_eff <= 0:
        raise ValidationError("t_eff unreachable: Omega must be positive")
    s = 2 * lattice.a * t_eff
    o = _orientation()
    a, q, m, th = lattice.a, lattice.q, lattice.m, lattice.theta
    # target s * [-(a q^2 th / 2pi) sum l + (a q^2 / 2) sum l^2 - m sum (-1)^j n_j]
    h = s * (-a * q**2 * th / (2 * np.pi)) / o["h"]["sum_l"]
    hprime = s * (a * q**2 / 2) / o["hprime"]["sum_l2"]
    mu = s * (-m) / o["mu"]["stag"]
    params = replace(base, h=float(h), hprime=float(hprime), mu=float(mu))
    tail = abs(float(tail_couplings(params).residual_coefficient))
    kin = Omega**2 / den.DeltaTilde + Omega**2 / den.DeltaTildePrime
    hmax = max(abs(h), abs(hprime))
    ratios = {
        "h_over_tail": hmax / tail if tail else np.inf,
        "mu_over_h": abs(mu) / hmax if hmax else np.inf,
        "kinetic_over_mu": kin / abs(mu) if mu else np.inf,
        "V_over_kinetic": V / kin,
    }
    feasible = all(r >= factor for r in ratios.values())
    profile = rabi_profile(params, den) if rabi_compensation else None
    return DictionaryResult(params, t_eff, s, ratios, feasible, stab, profile)


def reference_constants(params: RydbergParams = None) -> dict:
    """Shell-sum constants in units of ``V`` (with ``Delta = V``).

    ``respecting_*`` are the blockade-respecting intermediate constants of
    the four flip environments, ``violating`` the blockade-violating one,
    ``bulk`` and ``violation`` the stability-window constants, ``residual``
    the leftover three-site tail coefficient and ``cancellation_ratio`` the
    value of ``V'/V`` removing the nearest-neighbour tail.
    """
    params = params or RydbergParams()
    den = virtual_denominators(params, check=False)
    stab = bulk_gaps(params)
    V = params.V
    out = {f"respecting_{k}": float((params.Delta - v) / V) for k, v in den.deltaE.items()}
    out.update({
        "violating": float(den.violating_reference / V),
        "bulk": float(stab.bulk_constant),
        "violation": float(stab.violation_constant),
        "residual": float(tail_couplings(params).residual_coefficient / V),
        "cancellation_ratio": _cancellation_root(),
    })
    return out


def _cancellation_root() -> Fraction:
    # the nearest-neighbour tail is affine in V'/V; solve for its zero exactly
    n0 = tail_couplings(Fraction(1), Fraction(0)).nn_coefficient
    n1 = tail_couplings(Fraction(1), Fraction(1)).nn_coefficient
    return -n0 / (n1 - n0)


def design_array(lattice: LatticeParams, V=1.0, Delta=1.0, Omega_max=0.05, Vprime=None,
                 rabi_compensation=False, pad=2) -> dict:
    """Atom list of the array encoding ``lattice`` with per-atom drive settings.

    Atoms cover columns ``0 .. 2L`` and every row the interface can reach plus
    ``pad`` rows of fixed checkerboard.  Species ``A`` sits on ``x + y``
    even.  ``detuning`` is the local detuning ``Delta - pattern_energy`` and
    ``rabi`` the local Rabi frequency; ``vacuum`` is the occupation encoding
    the bare vacuum.
    """
    sol = dictionary_solve(lattice, V=V, Delta=Delta, Omega_max=Omega_max, Vprime=Vprime,
                           rabi_compensation=rabi_compensation)
    p = sol.params
    W, n = lattice.W, lattice.n_sites
    xs, ys = np.meshgrid(np.arange(n + 1), np.arange(-2 * W - pad, 2 * W + 2 + pad), indexing="ij")
    xs, ys = xs.ravel(), ys.ravel()
    vac = np.array([0] + [j % 2 for j in range(1, n)] + [0])
    occ = interface_occupation(vac, xs, ys)
    det = p.Delta - p.pattern_energy(xs, ys)
    rabi = p.Omega * (sol.rabi_profile(xs, ys) if sol.rabi_profile else np.ones(xs.size))
    atoms = [{"x": int(x), "y": int(y), "species": "A" if (x + y) % 2 == 0 else "B",
              "detuning": float(d), "rabi": float(r), "vacuum": int(o)}
             for x, y, d, r, o in zip(xs, ys, det, rabi, occ)]
    return {"atoms": atoms, "dictionary": sol.as_dict(),
            "stability": sol.stability.as_dict(), "n_atoms": len(atoms)}


_ORIENTATION = None


def _orientation():
    global _ORIENTATION
    if _ORIENTATION is None:
        _ORIENTATION = pattern_orientation()
    return _ORIENTATION


def rabi_profile(params: RydbergParams, den: DenominatorReport = None):
    """Row-dependent Rabi factor on even-sublattice atoms.

    The patterns shift the virtual energies of even-sublattice atoms; scaling
    their Rabi frequency by ``t_ref / t_local(row)`` restores a row-independent
    hopping to first order in the pattern amplitudes.  Returns a callable
    ``factor(x, y)``.
    """
    den = den or virtual_denominators(params, check=False)
    D = params.Delta
    xr, xv = den.respecting_reference, den.violating_reference

    def t_local(e):
        # removing (adding) an even atom with pattern energy e shifts the
        # respecting (violating) intermediate energy by -e (+e) on one side
        r = 0.5 * (1 / (D - xr - e) + 1 / (D - xr))
        v = 0.5 * (1 / (xv - D + e) + 1 / (xv - D))
        return r + v

    ref = t_local(0.0)

    def factor(x, y):
        e = params.pattern_energy(x, y)
        even = (np.asarray(x) + np.asarray(y)) % 2 == 0
        return np.where(even, ref / t_local(e), 1.0)

    return factor


# patch exact diagonalization --------------------------------------------------

def _basis_heights(basis):
    f = basis.fields.astype(np.int64)
    n = f.shape[1] + 1
    inner = 2 * f + (np.arange(1, n) % 2)
    z = np.zeros((len(basis), 1), dtype=np.int64)
    return np.hstack([z, inner, z])


def extended_moves(occupations, pad=4):
    """Occupations padded with ``pad`` vacuum sites on each side."""
    occ = np.atleast_2d(occupations)
    left = np.array([(x % 2 == 0) for x in range(-pad, 0)], dtype=occ.dtype)
    right = np.array([(x % 2 == 0) for x in range(occ.shape[1], occ.shape[1] + pad)], dtype=occ.dtype)
    return np.hstack([np.tile(left, (len(occ), 1)), occ, np.tile(right, (len(occ), 1))])


def tail_counts(occupations):
    """``(sum P_same2, sum P_same3)`` on the vacuum-padded chain for each state."""
    m = extended_moves(occupations)
    p2 = np.sum(m[:, 1:] == m[:, :-1], axis=1)
    p3 = np.sum((m[:, 2:] == m[:, 1:-1]) & (m[:, 1:-1] == m[:, :-2]), axis=1)
    return p2, p3


@dataclass(frozen=True, eq=False)
class RydbergPatch:
    """Free atoms around the interface region plus a clamped frame.

    Free atoms are those that differ between interface states of the
    ``(L, W)`` sector plus their nearest-neighbour ring.  Every atom within
    the interaction range of a free atom that is not itself free is clamped
    to its (state-independent) pattern value.
    """

    L: int
    W: int
    margin: int = 1
    frame: int = 3

    @cached_property
    def basis(self):
        return enumerate_basis(LatticeParams(self.L, W=self.W))

    @cached_property
    def heights(self):
        return _basis_heights(self.basis)

    @cached_property
    def layout(self):
        H = self.heights
        x0, x1 = -self.frame - self.margin - 1, 2 * self.L + self.frame + self.margin + 1
        y0, y1 = int(H.min()) - self.frame - self.margin - 3, int(H.max()) + self.frame + self.margin + 3
        xs, ys = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1), indexing="ij")
        xs, ys = xs.ravel(), ys.ravel()
        occ = np.array([interface_occupation(h, xs, ys) for h in H])
        varying = np.any(occ != occ[0], axis=0)
        vx, vy = xs[varying], ys[varying]
        near = np.zeros_like(varying)
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)) if self.margin else ():
            key = set(zip(vx + dx, vy + dy))
            near |= np.array([(a, b) in key for a, b in zip(xs, ys)])
        free = varying | near
        fx, fy = xs[free], ys[free]
        cheb = np.max(np.abs(np.stack([xs[:, None] - fx[None], ys[:, None] - fy[None]])), axis=0).min(axis=1)
        clamped = (~free) & (cheb <= self.frame)
        return {
            "free": np.stack([fx, fy], 1),
            "clamped": np.stack([xs[clamped], ys[clamped]], 1),
            "clamped_occ": occ[0][clamped],
            "band": occ[:, free],
            "n_varying": int(varying.sum()),
        }

    @property
    def free_atoms(self):
        return self.layout["free"]

    @property
    def n_free(self) -> int:
        return len(self.free_atoms)

    @property
    def band_codes(self) -> np.ndarray:
        band = self.layout["band"].astype(np.int64)
        return band @ (1 << np.arange(self.n_free, dtype=np.int64))

    def couplings(self, params: RydbergParams):
        """Pair matrix among free atoms and the static field from the frame."""
        f = self.free_atoms
        J = params.coupling(f[:, None, 0] - f[None, :, 0], f[:, None, 1] - f[None, :, 1])
        c = self.layout["clamped"]
        co = self.layout["clamped_occ"].astype(float)
        ext = params.coupling(f[:, None, 0] - c[None, :, 0], f[:, None, 1] - c[None, :, 1]) @ co
        return J, ext

    def single_atom_energy(self, params: RydbergParams):
        J, ext = self.couplings(params)
        return -params.Delta + ext + params.pattern_energy(self.free_atoms[:, 0], self.free_atoms[:, 1]), J

    def classical_energies(self, params: RydbergParams, codes) -> np.ndarray:
        lin, J = self.single_atom_energy(params)
        bits = ((np.asarray(codes, dtype=np.int64)[:, None] >> np.arange(self.n_free)) & 1).astype(float)
        return bits @ lin + 0.5 * np.einsum("ki,ij,kj->k", bits, J, bits)

    def hamiltonian(self, params: RydbergParams, rabi=None) -> sp.csr_matrix:
        """Full ``2^N`` Hamiltonian of the free atoms (clamped frame as fields)."""
        N = self.n_free
        if N > MAX_FREE_ATOMS:
            raise CapacityError(f"patch has {N} free atoms (max {MAX_FREE_ATOMS})")
        dim = 1 << N
        lin, J = self.single_atom_energy(params)
        codes = np.arange(dim, dtype=np.int64)
        diag = np.zeros(dim)
        bits = np.empty(dim, dtype=np.float64)
        for i in range(N):
            bits[:] = (codes >> i) & 1
            diag += lin[i] * bits
            for j in range(i + 1, N):
                if J[i, j]:
                    diag += J[i, j] * bits * ((codes >> j) & 1)
        amp = np.full(N, -params.Omega / 2)
        if rabi is not None:
            amp = amp * rabi(self.free_atoms[:, 0], self.free_atoms[:, 1])
        rows = [codes]
        cols = [codes]
        vals = [diag]
        for i in range(N):
            if amp[i] == 0:
                continue
            rows.append(codes)
            cols.append(codes ^ (1 << i))
            vals.append(np.full(dim, amp[i]))
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(dim, dim))

    def sw2_hamiltonian(self, params: RydbergParams, rabi=None) -> np.ndarray:
        """Second-order Schrieffer-Wolff effective Hamiltonian on the band."""
        N = self.n_free
        P = self.band_codes
        EP = self.classical_energies(params, P)
        amp = np.full(N, -params.Omega / 2)
        if rabi is not None:
            amp = amp * rabi(self.free_atoms[:, 0], self.free_atoms[:, 1])
        inter = {}
        for a, code in enumerate(P):
            ks = code ^ (1 << np.arange(N, dtype=np.int64))
            Ek = self.classical_energies(params, ks)
            for i in range(N):
                inter.setdefault(int(ks[i]), []).append((a, amp[i], Ek[i]))
        Heff = np.diag(EP).astype(float)
        pset = set(int(c) for c in P)
        for k, links in inter.items():
            if k in pset:
                raise AssertionError("band states connected by a single flip")
            for a, va, Ek in links:
                for b, vb, _ in links:
                    Heff[a, b] += 0.5 * va * vb * (1 / (EP[a] - Ek) + 1 / (EP[b] - Ek))
        return Heff


def dictionary_hamiltonian(basis, params: RydbergParams, lattice: LatticeParams,
                           energy_scale: float, t_eff: float, include_tail=True) -> np.ndarray:
    """Dictionary model on ``basis``: scaled lattice Hamiltonian (real hopping) plus tails."""
    lat = replace(lattice, L=basis.params.L, W=basis.params.W)
    diag = energy_scale * diagonal_energies(lat, basis)
    if include_tail:
        tc = tail_couplings(params)
        p2, p3 = tail_counts(basis.occupations)
        diag = diag + float(tc.nn_coefficient) * p2 + float(tc.residual_coefficient) * p3
    H = np.diag(diag)
    for _, src, dst in hopping_pairs(basis):
        H[dst, src] = H[src, dst] = -t_eff
    return H


def effective_1d(patch: RydbergPatch, params: RydbergParams, lattice: LatticeParams,
                 energy_scale: float, t_eff: float, include_tail=True) -> np.ndarray:
    """Dictionary model on the band of ``patch``."""
    return dictionary_hamiltonian(patch.basis, params, lattice, energy_scale, t_eff, include_tail)


@dataclass
class RydbergReport:
    Omega: float
    Delta: float
    band_dimension: int
    band_weight: float
    band_gap: float
    deviation_dictionary: float
    deviation_sw2: float
    deviation_bound: float
    classical_deviation: float
    t_eff: float
    energies_full: np.ndarray = field(repr=False)
    energies_dictionary: np.ndarray = field(repr=False)
    energies_sw2: np.ndarray = field(repr=False)
    n_free: int = 0

    def as_dict(self):
        return {
            "Omega": self.Omega, "Delta": self.Delta, "n_free": self.n_free,
            "band_dimension": self.band_dimension, "band_weight": self.band_weight,
            "band_gap": self.band_gap, "t_eff": self.t_eff,
            "deviation_dictionary": self.deviation_dictionary,
            "deviation_sw2": self.deviation_sw2,
            "deviation_bound": self.deviation_bound,
            "classical_deviation": self.classical_deviation,
            "energies_full": self.energies_full.tolist(),
            "energies_dictionary": self.energies_dictionary.tolist(),
            "energies_sw2": self.energies_sw2.tolist(),
        }


def _offset_deviation(a, b):
    """Max per-level deviation after removing the mean offset."""
    d = np.sort(a) - np.sort(b)
    return float(np.max(np.abs(d - d.mean())))


def classical_band_check(patch: RydbergPatch, params: RydbergParams, lattice: LatticeParams,
                         energy_scale: float) -> float:
    """Omega = 0: band energies versus scaled diagonal dictionary plus tails."""
    E = patch.classical_energies(params, patch.band_codes)
    model = np.diag(effective_1d(patch, params, lattice, energy_scale, 0.0))
    d = E - model
    return float(np.max(np.abs(d - d.mean())))


def verify_rydberg(lattice: LatticeParams, L=2, W=1, Omega_over_Delta=0.02, V=1.0, Delta=1.0,
                   Vprime=None, rabi_compensation=False, tol=1e-12) -> RydbergReport:
    """Full exact diagonalization of a clamped patch against effective models.

    The patch encodes an ``(L, W)`` sector.  Hardware parameters come from
    :func:`dictionary_solve` at ``Omega = Omega_over_Delta * Delta``; for
    ``Omega = 0`` the patterns use the scale of ``Omega/Delta = 0.02`` and
    the band is the set of lowest classical energies.
    """
    if Omega_over_Delta > 0.05:
        raise ValidationError("Omega/Delta must not exceed 0.05")
    Omega = Omega_over_Delta * Delta
    patch = RydbergPatch(L, W)
    if patch.n_free > MAX_FREE_ATOMS:
        raise CapacityError(f"patch has {patch.n_free} free atoms (max {MAX_FREE_ATOMS})")
    lat = replace(lattice, L=L, W=W)
    # at Omega = 0 the patterns keep the scale of the default drive
    drive = Omega if Omega > 0 else 0.02 * Delta
    sol = dictionary_solve(lat, V=V, Delta=Delta, Omega=drive, Omega_max=drive,
                           Vprime=Vprime, rabi_compensation=rabi_compensation)
    params = replace(sol.params, Omega=Omega)
    nb = len(patch.basis)
    classical = classical_band_check(patch, params, lat, sol.energy_scale)
    den = virtual_denominators(params, check=False)
    t_eff = effective_kinetic(params, den)
    H1 = effective_1d(patch, params, lat, sol.energy_scale, t_eff)
    e_dict = np.linalg.eigvalsh(H1)
    e_sw2 = np.linalg.eigvalsh(patch.sw2_hamiltonian(params, sol.rabi_profile))
    # full spectrum of the lowest band
    if Omega == 0:
        E = patch.classical_energies(params, np.arange(1 << patch.n_free))
        order = np.argsort(E)
        e_full = np.sort(E[order[:nb]])
        weight = float(np.isin(order[:nb], patch.band_codes).mean())
        gap = float(E[order[nb]] - E[order[nb - 1]])
    else:
        H = patch.hamiltonian(params, sol.rabi_profile)
        v0 = np.full(H.shape[0], 1e-3)
        v0[patch.band_codes] = 1.0
        v0 /= np.linalg.norm(v0)
        k = nb + 2
        try:
            w, vec = spla.eigsh(H, k=k, which="SA", v0=v0, tol=tol, ncv=max(4 * k, 40), maxiter=20000)
        except spla.ArpackNoConvergence as exc:
            raise ConvergenceError("patch diagonalization did not converge") from exc
        order = np.argsort(w)
        w, vec = w[order], vec[:, order]
        e_full = w[:nb]
        weight = float(np.mean(np.sum(np.abs(vec[patch.band_codes, :nb]) ** 2, axis=0)))
        gap = float(w[nb] - w[nb - 1])
    width = float(e_full[-1] - e_full[0])
    if gap < width or weight < 0.5:
        logger.warning("band crossing: gap %.3g, band width %.3g, band weight %.3f", gap, width, weight)
    bound = 50 * Omega**3 / den.DeltaTilde**2
    return RydbergReport(
        Omega=Omega, Delta=Delta, band_dimension=nb, band_weight=weight, band_gap=gap,
        deviation_dictionary=_offset_deviation(e_full, e_dict),
        deviation_sw2=_offset_deviation(e_full, e_sw2),
        deviation_bound=bound, classical_deviation=classical, t_eff=t_eff,
        energies_full=e_full, energies_dictionary=e_dict, energies_sw2=e_sw2,
        n_free=patch.n_free,
    )


def rydberg_scaling(lattice: LatticeParams, ratios=(0.02, 0.04), **kw):
    """Deviations at two drive strengths and the fitted power-law exponents."""
    reps = [verify_rydberg(lattice, Omega_over_Delta=r, **kw) for r in ratios]
    lr = np.log(ratios[1] / ratios[0])
    expo = {
        "dictionary": float(np.log(reps[1].deviation_dictionary / reps[0].deviation_dictionary) / lr),
        "sw2": float(np.log(reps[1].deviation_sw2 / reps[0].deviation_sw2) / lr),
    }
    return reps, expo


def tail_splitting(Vprime_over_V, L=2, W=1, V=1.0, Delta=1.0):
    """Classical band splitting from the tails alone and its regression.

    Returns ``{"spread", "nn_fit", "residual_fit"}``; the fit is
    ``E = c0 + nn * P2 + residual * P3`` over the interface states.
    """
    patch = RydbergPatch(L, W)
    params = RydbergParams(V=V, Vprime=Vprime_over_V * V, Delta=Delta)
    E = patch.classical_energies(params, patch.band_codes)
    p2, p3 = tail_counts(patch.basis.occupations)
    A = np.column_stack([np.ones_like(E), p2, p3])
    coef, *_ = np.linalg.lstsq(A, E, rcond=None)
    return {"spread": float(E.max() - E.min()), "nn_fit": float(coef[1]), "residual_fit": float(coef[2]),
            "fit_residual": float(np.max(np.abs(A @ coef - E)))}
