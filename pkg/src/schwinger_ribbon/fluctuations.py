"""Electric-field fluctuation bounds from the free staggered Dirac chain.

The mid-chain field of the neutral sector equals ``N_left - L/2`` where
``N_left`` counts fermions on the left ``L`` sites.  For a Gaussian state its
distribution is that of independent Bernoulli variables with the eigenvalues
of the restricted correlation matrix as success probabilities.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, special

from .errors import ConvergenceError, ValidationError

logger = logging.getLogger(__name__)

__all__ = [
    "DiracParams",
    "CorrelationMatrix",
    "EntanglementSpectrum",
    "FcsResult",
    "CgfResult",
    "ResourceEstimate",
    "dirac_single_particle",
    "hopping_matrix",
    "correlation_matrix",
    "entanglement_spectrum",
    "exact_es_rate",
    "correlation_length",
    "lambda_formula",
    "fcs_distribution",
    "fcs_bruteforce",
    "ground_bound",
    "chernoff_tail",
    "scaled_cgf",
    "psi_T",
    "sigma2_T",
    "finite_T_cutoff",
    "legendre_tail",
    "resource_estimate",
]

P_CLIP = 1e-300


@dataclass(frozen=True)
class DiracParams:
    """Free chain of ``2L`` sites; ``L`` must be even."""

    L: int
    a: float = 1.0
    m: float = 0.0
    T: float = 0.0

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 2 or self.L % 2:
            raise ValidationError(f"L must be a positive even integer, got {self.L}")
        if not self.a > 0:
            raise ValidationError("a must be positive")
        if self.m < 0 or self.T < 0:
            raise ValidationError("m and T must be non-negative")

    @property
    def am(self):
        return self.a * self.m


def hopping_matrix(n_sites, a=1.0, m=0.0) -> np.ndarray:
    """Single-particle matrix: ``-i/(2a)`` hopping (open chain), diagonal ``-m (-1)^j``."""
    h = np.zeros((n_sites, n_sites), dtype=complex)
    idx = np.arange(1, n_sites)
    h[idx - 1, idx] = -1j / (2 * a)
    h[idx, idx - 1] = 1j / (2 * a)
    h[np.arange(n_sites), np.arange(n_sites)] = -m * np.where(np.arange(n_sites) % 2 == 0, 1.0, -1.0)
    return h


def dirac_single_particle(params: DiracParams):
    """Single-particle Hamiltonian ``h`` with its eigenvalues and eigenvectors."""
    h = hopping_matrix(2 * params.L, params.a, params.m)
    E, U = np.linalg.eigh(h)
    return h, E, U


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    """``C[i, j] = <c_i^dag c_j>`` of the ground or thermal state."""

    params: DiracParams
    matrix: np.ndarray = field(repr=False)
    energies: np.ndarray = field(repr=False)

    @property
    def trace(self) -> float:
        return float(np.real(np.trace(self.matrix)))


def _occupation(E, T, zero_tol=1e-12):
    if T == 0:
        f = (E < 0).astype(float)
        # exact zero modes: half filled, symmetric under particle-hole
        f[np.abs(E) <= zero_tol] = 0.5
        return f
    return special.expit(-E / T)


def correlation_matrix(params: DiracParams) -> CorrelationMatrix:
    """Ground-state projector (``T = 0``) or Fermi-Dirac correlations."""
    _, E, U = dirac_single_particle(params)
    f = _occupation(E, params.T)
    G = (U * f) @ U.conj().T  # <c_j^dag c_i> arrangement
    return CorrelationMatrix(params, G.T.copy(), E)


def exact_es_rate(am: float) -> float:
    """Level spacing of the half-chain spectrum, ``pi K(k') / K(k)``.

    ``k = exp(-2 arcsinh(am))`` is the elliptic modulus of the massive chain.
    """
    if am <= 0:
        return 0.0
    k = np.exp(-2 * np.arcsinh(am))
    return float(np.pi * special.ellipk(1 - k**2) / special.ellipk(k**2))


@dataclass
class EntanglementSpectrum:
    """Left-block occupation spectrum and its decay diagnostics.

    ``q`` holds ``min(p, 1 - p)`` for every level, sorted descending, i.e. the
    probability that level ``k`` deviates from its likely occupation.
    ``rate`` is the slope of ``-log q`` against the index; ``envelope`` is
    ``max_k q_k^(1/k)``, the smallest ``lam`` with ``q_k <= lam^k`` for all
    ``k``.  ``baseline`` is ``(#{p > 1/2} - #{p < 1/2}) / 2``, the value of
    ``N - L/2`` when every level takes its likely occupation.
    """

    p: np.ndarray
    beta: np.ndarray
    q: np.ndarray
    rate: float
    envelope: float
    pairing_error: float
    degenerate: bool
    n_fit: int
    baseline: float = 0.0

    @property
    def lam(self) -> float:
        return float(np.exp(-self.rate))


def entanglement_spectrum(C, cut=None, fit_floor=1e-12) -> EntanglementSpectrum:
    """Spectrum of the upper-left ``cut x cut`` block of ``C``."""
    M = C.matrix if isinstance(C, CorrelationMatrix) else np.asarray(C)
    cut = cut or M.shape[0] // 2
    p = np.clip(np.sort(np.linalg.eigvalsh(M[:cut, :cut])), P_CLIP, 1 - 1e-16)
    beta = np.log((1 - p) / p)
    pairing = float(np.max(np.abs(p + p[::-1] - 1)))
    q = np.sort(np.minimum(p, 1 - p))[::-1]
    k = np.arange(1, len(q) + 1)
    good = q > fit_floor
    degenerate = int(good.sum()) < 2
    if degenerate:
        rate = np.inf
    else:
        rate = -float(np.polyfit(k[good], np.log(q[good]), 1)[0])
    envelope = float(np.max(q[good] ** (1.0 / k[good]))) if good.any() else 0.0
    baseline = 0.5 * (int(np.sum(p > 0.5)) - int(np.sum(p < 0.5)))
    return EntanglementSpectrum(p, beta, q, rate, envelope, pairing, degenerate, int(good.sum()), baseline)


def correlation_length(C, d_range=(5, 25), floor=1e-13):
    """Fitted decay length of ``|C[c, c+d]|`` at the chain centre (lattice units)."""
    M = C.matrix if isinstance(C, CorrelationMatrix) else np.asarray(C)
    c = M.shape[0] // 2
    d = np.arange(d_range[0], d_range[1] + 1)
    d = d[c + d < M.shape[0]]
    vals = np.abs(M[c, c + d])
    ok = vals > floor
    if ok.sum() < 2:
        return np.nan
    slope = np.polyfit(d[ok], np.log(vals[ok]), 1)[0]
    return float(-1.0 / slope)


def lambda_formula(xi_over_a: float) -> float:
    """``exp(-pi^2 / (2 log(xi/a)))``; meaningful only for ``xi/a > 1``."""
    if not xi_over_a > 1:
        return np.nan
    return float(np.exp(-np.pi**2 / (2 * np.log(xi_over_a))))


@dataclass
class FcsResult:
    """Distribution of ``N_left`` and the two-sided tail ``P(|N - L/2| > W)``."""

    prob: np.ndarray
    tail: np.ndarray = field(repr=False)
    log_prob: np.ndarray = field(repr=False)

    @property
    def L(self) -> int:
        return len(self.prob) - 1

    @property
    def mean(self) -> float:
        return float(np.dot(np.arange(len(self.prob)), self.prob))

    @property
    def variance(self) -> float:
        n = np.arange(len(self.prob))
        return float(np.dot(n**2, self.prob) - self.mean**2)

    def tail_at(self, W) -> float:
        W = int(W)
        return float(self.tail[W]) if W < len(self.tail) else 0.0


def fcs_distribution(p) -> FcsResult:
    """Exact law of a sum of independent Bernoulli(p_k), convolved in log space."""
    p = np.clip(np.asarray(p.p if isinstance(p, EntanglementSpectrum) else p, dtype=float), 0.0, 1.0)
    n = len(p)
    logP = np.full(n + 1, -np.inf)
    logP[0] = 0.0
    with np.errstate(divide="ignore"):
        lp, lq = np.log(p), np.log1p(-p)
    for k in range(n):
        stay = logP[: k + 2] + lq[k]
        move = np.concatenate([[-np.inf], logP[: k + 1] + lp[k]])
        logP[: k + 2] = np.logaddexp(stay, move)
    prob = np.exp(logP)
    center = n / 2
    dev = np.abs(np.arange(n + 1) - center)
    Wmax = int(np.ceil(center)) + 1
    # accumulate from the far tails inward
    tail = np.array([np.sum(np.sort(prob[dev > W])) for W in range(Wmax)])
    return FcsResult(prob, tail, logP)


def fcs_bruteforce(p) -> np.ndarray:
    """Reference distribution by enumerating all ``2^n`` outcomes."""
    p = np.asarray(p, dtype=float)
    n = len(p)
    if n > 22:
        raise ValidationError("brute force limited to 22 variables")
    codes = np.arange(1 << n)
    bits = (codes[:, None] >> np.arange(n)) & 1
    w = np.prod(np.where(bits == 1, p, 1 - p), axis=1)
    return np.bincount(bits.sum(1), weights=w, minlength=n + 1)


def chernoff_tail(p, W) -> float:
    """Rigorous two-sided Chernoff bound on ``P(|N - L/2| > W)`` from the exact CGF."""
    p = np.clip(np.asarray(p, dtype=float), 0, 1)
    n = len(p)
    thresh = n / 2 + W + 1

    def upper(sign):
        pp = p if sign > 0 else 1 - p

        def f(alpha):
            return -alpha * thresh + np.sum(np.log1p(pp * np.expm1(alpha)))

        res = optimize.minimize_scalar(f, bounds=(0.0, 60.0), method="bounded", options={"xatol": 1e-10})
        return float(np.exp(min(res.fun, 0.0)))

    if thresh > n:
        return 0.0
    return min(1.0, upper(+1) + upper(-1))


def ground_bound(spectrum: EntanglementSpectrum, W, lam=None):
    """Empirical tail at cutoff ``W`` against the analytic bounds.

    ``lambda_bound`` is ``lam^(W+1)/(1-lam)`` with ``lam = exp(-rate)`` unless
    given.  ``envelope_bound`` is ``lam_e^(n)/(1-lam_e)`` with the envelope
    ``lam_e`` and ``n = W + 1 - |baseline|``: a deviation beyond ``W`` needs
    ``n`` levels off their likely occupation, so some such level has index
    ``>= n``, and a union bound over those levels gives the estimate
    rigorously.  ``mls_bound`` is ``(1 - lam^(W+1))^(1/(1-lam))``.
    """
    lam = spectrum.lam if lam is None else lam
    if not 0 <= lam < 1:
        raise ValidationError(f"decay ratio lam={lam} must lie in [0, 1)")
    fcs = fcs_distribution(spectrum.p)
    tail = fcs.tail_at(W)
    le = spectrum.envelope
    L = len(spectrum.p)
    return {
        "W": int(W),
        "empirical_tail": tail,
        "lambda": lam,
        "lambda_bound": lam ** (W + 1) / (1 - lam),
        "envelope_lambda": le,
        "envelope_bound": _envelope_bound(le, W + 1 - abs(spectrum.baseline)),
        "mls_bound": (1 - lam ** (W + 1)) ** (1 / (1 - lam)),
        "union_system": min(1.0, (2 * L - 1) * tail),
    }


def _envelope_bound(lam, n):
    if lam >= 1:
        return np.inf
    if n <= 0:
        return 1.0
    return min(1.0, lam**n / (1 - lam))


# finite temperature ---------------------------------------------------------------

def _Ek(k, m, a):
    return np.sqrt(m**2 + np.sin(k) ** 2 / a**2)


def _quad(f, tol=1e-9, width=None):
    """Integral of an even integrand over ``|k| <= pi/2``.

    The half range is split into panels growing geometrically from the
    thermal window ``width`` so narrow low-temperature peaks at ``k = 0`` are
    resolved.
    """
    edges = [0.0]
    if width is not None and width < 0.1:
        x = width
        while x < np.pi / 2:
            edges.append(x)
            x *= 4
    edges.append(np.pi / 2)
    total, err = 0.0, 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        v, e = integrate.quad(f, lo, hi, epsabs=tol * 1e-4, epsrel=tol, limit=200)
        total += v
        err += e
    if not np.isfinite(total) or err > max(tol * abs(total), tol * 1e-3) * 10:
        raise ConvergenceError(f"quadrature error estimate {err:.2e} above tolerance")
    return 2 * total


def _width(m, a, T):
    # width in k of the region where E_k / T is of order one
    return a * T


def sigma2_T(m, a, T, tol=1e-9) -> float:
    """``int dk/2pi  1 / (1 + cosh(E_k/T))`` over ``|k| <= pi/2``."""
    if T <= 0:
        return 0.0

    def f(k):
        x = _Ek(k, m, a) / T
        return 0.0 if x > 700 else 1.0 / (1.0 + np.cosh(x))

    return _quad(f, tol, _width(m, a, T)) / (2 * np.pi)


def psi_T(alpha, m, a, T, tol=1e-9) -> float:
    """Scaled cumulant generating function of ``N_left / L``."""
    if alpha == 0:
        return 0.0
    ch = np.cosh(alpha)

    def f(k):
        x = _Ek(k, m, a) / T
        if x > 700:
            return 0.0
        c = np.cosh(x)
        # log((cosh a + c)/(1 + c)) written to avoid cancellation at small alpha
        return np.log1p((ch - 1) / (1 + c))

    return alpha / 2 + _quad(f, tol, _width(m, a, T)) / (2 * np.pi)


def _psi_prime(alpha, m, a, T, tol=1e-9):
    sh, ch = np.sinh(alpha), np.cosh(alpha)

    def f(k):
        x = _Ek(k, m, a) / T
        return 0.0 if x > 700 else sh / (ch + np.cosh(x))

    return 0.5 + _quad(f, tol, _width(m, a, T)) / (2 * np.pi)


@dataclass
class CgfResult:
    alpha: np.ndarray
    psi: np.ndarray
    sigma2: float
    density: np.ndarray
    phi: np.ndarray
    lam: float = np.nan
    xi_over_a: float = np.nan


def scaled_cgf(params: DiracParams, alpha_grid=None, density_grid=None, tol=1e-9) -> CgfResult:
    """``Psi_T`` on ``alpha_grid``, ``sigma_T^2`` and the Legendre transform ``Phi_T``."""
    if params.T <= 0:
        raise ValidationError("scaled_cgf requires T > 0")
    m, a, T = params.m, params.a, params.T
    alpha = np.linspace(-4, 4, 81) if alpha_grid is None else np.asarray(alpha_grid, dtype=float)
    psi = np.array([psi_T(x, m, a, T, tol) for x in alpha])
    s2 = sigma2_T(m, a, T, tol)
    if density_grid is None:
        density_grid = 0.5 + np.linspace(-0.9, 0.9, 37) * s2 * 3
    dens = np.asarray(density_grid, dtype=float)
    phi = np.array([_legendre(nu, m, a, T, tol) for nu in dens])
    return CgfResult(alpha, psi, s2, dens, phi)


def _legendre(nu, m, a, T, tol):
    """``Phi(nu) = sup_alpha [alpha nu - Psi(alpha)]`` via the stationarity condition."""
    if nu == 0.5:
        return 0.0
    g = lambda x: _psi_prime(x, m, a, T, tol) - nu
    lo, hi = (0.0, 1.0) if nu > 0.5 else (-1.0, 0.0)
    for _ in range(60):
        if np.sign(g(lo)) != np.sign(g(hi)):
            break
        lo, hi = (lo, 2 * hi) if nu > 0.5 else (2 * lo, hi)
    else:
        raise ValidationError(f"density {nu} outside the range of Psi'")
    x = optimize.brentq(g, lo, hi, xtol=1e-13)
    return x * nu - psi_T(x, m, a, T, tol)


def legendre_tail(params: DiracParams, W, L=None) -> float:
    """Thermodynamic large-deviation estimate ``2 exp(-L Phi(1/2 + (W+1)/L))``."""
    L = params.L if L is None else L
    nu = 0.5 + (W + 1) / L
    if nu >= 1:
        return 0.0
    try:
        return min(1.0, 2 * np.exp(-L * _legendre(nu, params.m, params.a, params.T, 1e-9)))
    except ValidationError:
        return 0.0


def finite_T_cutoff(params: DiracParams, L=None, epsilon=1e-3) -> int:
    """``W = ceil(sqrt(sigma_T^2 L log(L/epsilon)))``; ``L`` defaults to ``params.L``."""
    if not 0 < epsilon < 1:
        raise ValidationError("epsilon must lie in (0, 1)")
    L = params.L if L is None else int(L)
    if params.T <= 0:
        warnings.warn("T = 0: use the ground-state bound instead of the thermal cutoff", stacklevel=2)
        return 0
    s2 = sigma2_T(params.m, params.a, params.T)
    return int(np.ceil(np.sqrt(s2 * L * np.log(L / epsilon))))


# resource scaling -----------------------------------------------------------------

@dataclass
class ResourceEstimate:
    epsilon: float
    mode: str
    ell_over_xi: float
    a_over_xi: float
    L: int
    W: int
    N: int
    constants: dict
    polylog: float = 1.0

    def as_dict(self):
        return dict(self.__dict__)


def resource_estimate(epsilon, mode="T0", constants=None, T_xi=1.0) -> ResourceEstimate:
    """Array size for target accuracy ``epsilon``.

    Lengths are in units of the correlation length ``xi = 1/m``.  ``T0``:
    ``ell/xi = c1/eps``, ``a/xi = c2 eps``, ``W = c3 log^2(1/eps)``.
    ``finiteT``: ``W = c4 sqrt(sigma_T^2 L log(1/eps))`` with ``sigma_T^2``
    evaluated at the lattice spacing ``a`` and temperature ``T_xi / xi``.
    Always ``N = 2L (2W + 2)``.  ``epsilon >= 1`` returns the minimal
    configuration ``L = 2, W = 0``.
    """
    c = {"c1": 1.0, "c2": 1.0, "c3": 1.0, "c4": 1.0}
    if constants:
        unknown = set(constants) - set(c)
        if unknown:
            raise ValidationError(f"unknown constants {sorted(unknown)}")
        c.update(constants)
    if mode not in ("T0", "finiteT"):
        raise ValidationError(f"unknown mode {mode!r}")
    if epsilon <= 0:
        raise ValidationError("epsilon must be positive")
    if epsilon >= 1:
        return ResourceEstimate(float(epsilon), mode, 1.0, 1.0, 2, 0, 2 * 2 * 2, c)
    ell = c["c1"] / epsilon
    a = c["c2"] * epsilon
    L = max(2, int(2 * np.ceil(ell / (2 * a) / 2)))
    logi = np.log(1 / epsilon)
    if mode == "T0":
        Wf = c["c3"] * logi**2
        poly = logi**2
    else:
        s2 = sigma2_T(1.0, a, T_xi)
        Wf = c["c4"] * np.sqrt(s2 * L * logi)
        poly = np.sqrt(logi)
    W = int(np.ceil(Wf))
    N = 2 * L * (2 * W + 2)
    return ResourceEstimate(float(epsilon), mode, ell, a, L, W, N, c, float(poly))
