"""Krylov-subspace kernels: extremal eigenpairs and short-time propagation."""
from __future__ import annotations

import logging

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .errors import ConvergenceError

logger = logging.getLogger(__name__)

__all__ = ["lanczos_lowest", "lanczos_expm_step", "start_vector"]


def start_vector(dim, kind="ones", seed=0, dtype=float):
    """Deterministic normalized start vector.

    ``"ones"`` is the flat vector; ``"seeded"`` adds a fixed pseudo-random
    component so that states orthogonal to the flat vector by symmetry are
    still reached.  An array is used as given (warm start).
    """
    if isinstance(kind, np.ndarray):
        v = np.asarray(kind, dtype=dtype).copy()
        if v.shape != (dim,) or not np.linalg.norm(v) > 0:
            raise ValueError("start vector has the wrong shape or is zero")
        return v / np.linalg.norm(v)
    v = np.ones(dim, dtype=dtype)
    if kind == "seeded":
        rng = np.random.default_rng(seed)
        v = v + 0.5 * rng.standard_normal(dim)
    elif kind != "ones":
        raise ValueError(f"unknown start vector kind {kind!r}")
    return v / np.linalg.norm(v)


def lanczos_lowest(matvec, dim, k=1, tol=1e-10, max_iter=5000, dtype=float, start="ones", ncv=None):
    """Lowest ``k`` eigenpairs of a Hermitian operator given by ``matvec``.

    Uses implicitly restarted Lanczos (ARPACK) with the start vector from
    :func:`start_vector`.  After convergence every residual
    ``||H v - E v||`` is checked against ``tol``; a miss raises
    :class:`ConvergenceError`.
    """
    op = spla.LinearOperator((dim, dim), matvec=matvec, dtype=dtype)
    v0 = start_vector(dim, start, dtype=dtype)
    # ARPACK tests ||r|| <= tol_rel * |E|; probe the scale first so the
    # absolute target is met.
    scale = abs(float(np.real(np.vdot(v0, matvec(v0)))))
    scale = max(scale, 1.0)
    ncv = ncv or min(dim - 1, max(2 * k + 1, 40))
    try:
        w, v = spla.eigsh(op, k=k, which="SA", v0=v0, tol=0.1 * tol / scale,
                          maxiter=max_iter, ncv=ncv)
    except spla.ArpackNoConvergence as exc:
        raise ConvergenceError(f"Lanczos did not converge in {max_iter} restarts") from exc
    order = np.argsort(w)
    w, v = w[order], v[:, order]
    for i in range(k):
        r = np.linalg.norm(matvec(v[:, i]) - w[i] * v[:, i])
        if r > tol * max(1.0, abs(w[i])):
            raise ConvergenceError(f"residual {r:.2e} above tolerance {tol:.1e} for eigenpair {i}")
        # fix the global phase deterministically
        j = int(np.argmax(np.abs(v[:, i]) > 1e-8 * np.max(np.abs(v[:, i]))))
        v[:, i] *= np.conj(v[j, i]) / abs(v[j, i])
    return w, v


def lanczos_expm_step(matvec, psi, tau, m=30, tol=1e-9):
    """Propagate ``psi`` by ``exp(-i H tau)`` using an ``m``-dimensional Krylov space.

    Returns ``(psi_new, err, m_used)``.  ``err`` is the standard a-posteriori
    estimate ``beta_m |[exp(-i T tau)]_{m,0}|``; happy breakdown gives an
    exact step with ``err = 0``.
    """
    norm0 = np.linalg.norm(psi)
    V = np.zeros((m + 1, psi.size), dtype=complex)
    alpha = np.zeros(m)
    beta = np.zeros(m)
    V[0] = psi / norm0
    n = m
    for j in range(m):
        w = matvec(V[j])
        alpha[j] = np.real(np.vdot(V[j], w))
        w = w - alpha[j] * V[j]
        if j > 0:
            w = w - beta[j - 1] * V[j - 1]
        # full reorthogonalization keeps the small space numerically orthonormal
        w = w - V[: j + 1].T @ (V[: j + 1].conj() @ w)
        beta[j] = np.linalg.norm(w)
        if beta[j] < 1e-13 * max(1.0, abs(alpha[j])):
            n = j + 1
            break
        V[j + 1] = w / beta[j]
    T = np.diag(alpha[:n]) + np.diag(beta[: n - 1], 1) + np.diag(beta[: n - 1], -1)
    E = sla.expm(-1j * tau * T)
    coeff = E[:, 0]
    if n < m:
        err = 0.0
    else:
        err = float(beta[n - 1] * abs(coeff[n - 1]))
    return norm0 * (V[:n].T @ coeff), err, n
