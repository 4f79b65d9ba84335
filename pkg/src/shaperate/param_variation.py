"""Sensitivity formulas for parametrized smooth minimization problems.

A family J(u, mu) with user-supplied derivatives is minimized in u for a
fixed parameter vector mu.  At the minimizer, the derivative of the optimal
value with respect to mu reduces to the explicit parameter derivative of J
(the envelope identity), the minimizer itself moves according to a linear
solve against the u-Hessian, and the optimal-value Hessian picks up a
Schur-complement correction.  These formulas serve as the exact oracle
layer for the mesh-level shape derivatives in :mod:`shaperate.shape`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import CoercivityError, PreconditionError, SolverError

FD_STEP_FIRST = 1e-5
FD_STEP_SECOND = 1e-4


@dataclass
class EnergyFamily:
    """Smooth energy J(u, mu) on R^dim_u x R^dim_mu with exact derivatives.

    All callbacks take (u, mu) as 1-D numpy arrays.  ``coercivity_floor``
    declares a positive lower bound for the smallest eigenvalue of the
    u-Hessian at minimizers; it is enforced after every solve.
    """

    dim_u: int
    dim_mu: int
    value: Callable[[np.ndarray, np.ndarray], float]
    grad_u: Callable[[np.ndarray, np.ndarray], np.ndarray]
    hess_u: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad_mu: Callable[[np.ndarray, np.ndarray], np.ndarray]
    mixed: Callable[[np.ndarray, np.ndarray], np.ndarray]
    hess_mu: Callable[[np.ndarray, np.ndarray], np.ndarray]
    coercivity_floor: float = 1e-12
    verify: bool = False
    verify_seed: int = 0

    def __post_init__(self):
        if self.dim_u < 1 or self.dim_mu < 1:
            raise ValueError("dim_u and dim_mu must be positive")
        if self.coercivity_floor <= 0:
            raise ValueError("coercivity_floor must be positive")
        if self.verify:
            self.spot_check_derivatives(np.random.default_rng(self.verify_seed))

    def spot_check_derivatives(self, rng, points: int = 5, rtol: float = 1e-6):
        """Compare the supplied gradients against central differences.

        Probes ``points`` random (u, mu) pairs; raises ``ValueError`` on the
        first inconsistency so a bad family cannot poison downstream oracles.
        """
        for _ in range(points):
            u = rng.standard_normal(self.dim_u)
            mu = rng.standard_normal(self.dim_mu)
            h = self.hess_u(u, mu)
            if np.max(np.abs(h - h.T)) > 1e-12:
                raise ValueError("hess_u is not symmetric")
            gu = np.asarray(self.grad_u(u, mu), dtype=float)
            gm = np.asarray(self.grad_mu(u, mu), dtype=float)
            fd_u = _central_grad(lambda w: self.value(w, mu), u)
            fd_m = _central_grad(lambda m: self.value(u, m), mu)
            scale = 1.0 + max(np.max(np.abs(fd_u)), np.max(np.abs(fd_m)))
            if np.max(np.abs(gu - fd_u)) > rtol * scale:
                raise ValueError("grad_u disagrees with finite differences")
            if np.max(np.abs(gm - fd_m)) > rtol * scale:
                raise ValueError("grad_mu disagrees with finite differences")


@dataclass
class MinimizerRecord:
    """Solved stationary point of J(., mu) with its solve diagnostics."""

    mu: np.ndarray
    u_star: np.ndarray
    residual_norm: float
    newton_iters: int
    tol: float = 1e-10


def _central_grad(f, x, h=FD_STEP_FIRST):
    g = np.empty(len(x))
    for i in range(len(x)):
        e = np.zeros(len(x))
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def _chol_floor(family, u, mu):
    """Cholesky factor of the u-Hessian; rejects indefinite or sub-floor ones."""
    h = np.asarray(family.hess_u(u, mu), dtype=float)
    try:
        c = scipy.linalg.cho_factor(h, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise CoercivityError(f"u-Hessian not positive definite: {exc}") from exc
    return h, c


def find_minimizer(family: EnergyFamily, mu, init, tol: float = 1e-10,
                   max_iters: int = 50) -> MinimizerRecord:
    """Newton minimization of J(., mu) with backtracking line search.

    Quadratic families converge in a single step.  An indefinite Hessian
    anywhere on the path is a hard error: every downstream formula assumes
    a coercive family.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    mu = np.asarray(mu, dtype=float)
    u = np.asarray(init, dtype=float).copy()
    res = float(np.linalg.norm(family.grad_u(u, mu)))
    iters = 0
    while res > tol:
        if iters >= max_iters:
            raise SolverError(
                f"Newton did not converge in {max_iters} iterations "
                f"(last residual {res:.3e})", residuals=[res])
        g = np.asarray(family.grad_u(u, mu), dtype=float)
        _, c = _chol_floor(family, u, mu)
        step = scipy.linalg.cho_solve(c, g)
        # Armijo backtracking on the energy value.
        f0 = family.value(u, mu)
        slope = -float(g @ step)
        alpha = 1.0
        while alpha > 1e-12:
            trial = u - alpha * step
            if family.value(trial, mu) <= f0 + 1e-4 * alpha * slope:
                break
            alpha *= 0.5
        else:
            raise SolverError("line search stalled", residuals=[res])
        u = u - alpha * step
        res = float(np.linalg.norm(family.grad_u(u, mu)))
        iters += 1

    h = np.asarray(family.hess_u(u, mu), dtype=float)
    lam_min = float(scipy.linalg.eigvalsh(h)[0])
    if lam_min < family.coercivity_floor:
        raise CoercivityError(
            f"smallest Hessian eigenvalue {lam_min:.3e} below declared "
            f"floor {family.coercivity_floor:.3e} at the minimizer")
    return MinimizerRecord(mu=mu, u_star=u, residual_norm=res,
                           newton_iters=iters, tol=tol)


def _require_fresh(family, mu, record):
    mu = np.asarray(mu, dtype=float)
    if record.mu.shape != mu.shape or not np.array_equal(record.mu, mu):
        raise PreconditionError("record was solved at a different parameter")
    res = float(np.linalg.norm(family.grad_u(record.u_star, mu)))
    if res > record.tol:
        raise PreconditionError(
            f"stale minimizer record: residual {res:.3e} above tolerance "
            f"{record.tol:.3e}")
    return mu


def envelope_derivative(family: EnergyFamily, mu, record: MinimizerRecord) -> np.ndarray:
    """d/dmu of the minimized value, without solving for du/dmu.

    At a stationary point the u-gradient vanishes, so the chain-rule term
    through the minimizer drops and only the explicit mu-derivative remains.
    """
    mu = _require_fresh(family, mu, record)
    return np.asarray(family.grad_mu(record.u_star, mu), dtype=float)


def minimizer_sensitivity(family: EnergyFamily, mu, record: MinimizerRecord) -> np.ndarray:
    """du/dmu at the minimizer: minus the Hessian-inverse applied to the mixed block."""
    mu = _require_fresh(family, mu, record)
    h0 = np.asarray(family.mixed(record.u_star, mu), dtype=float).reshape(
        family.dim_u, family.dim_mu)
    _, c = _chol_floor(family, record.u_star, mu)
    return -scipy.linalg.cho_solve(c, h0)


def envelope_second_derivative(family: EnergyFamily, mu,
                               record: MinimizerRecord) -> np.ndarray:
    """Hessian of the minimized value: explicit block minus the Schur correction."""
    mu = _require_fresh(family, mu, record)
    h0 = np.asarray(family.mixed(record.u_star, mu), dtype=float).reshape(
        family.dim_u, family.dim_mu)
    hmm = np.asarray(family.hess_mu(record.u_star, mu), dtype=float)
    _, c = _chol_floor(family, record.u_star, mu)
    m = hmm - h0.T @ scipy.linalg.cho_solve(c, h0)
    return 0.5 * (m + m.T)


def minimizer_continuity_probe(family: EnergyFamily, mu0, direction,
                               steps: Sequence[float], tol: float = 1e-10,
                               init: Optional[np.ndarray] = None):
    """Track how far the minimizer moves for shrinking parameter shifts.

    Returns rows ``(t, |u(mu0 + t*dir) - u(mu0)|, ratio to sqrt(t))``.  For
    smooth coercive families the shift is first order in t, so the ratio
    decays like sqrt(t).
    """
    steps = list(steps)
    if any(s <= 0 for s in steps):
        raise ValueError("steps must be positive")
    if sorted(steps, reverse=True) != steps:
        raise ValueError("steps must be decreasing")
    mu0 = np.asarray(mu0, dtype=float)
    direction = np.asarray(direction, dtype=float)
    if init is None:
        init = np.zeros(family.dim_u)
    base = find_minimizer(family, mu0, init, tol=tol)
    rows = []
    for t in steps:
        rec = find_minimizer(family, mu0 + t * direction, base.u_star, tol=tol)
        dist = float(np.linalg.norm(rec.u_star - base.u_star))
        rows.append((t, dist, dist / np.sqrt(t)))
    return rows


def fd_optimal_value_gradient(family: EnergyFamily, mu, h: float = FD_STEP_FIRST,
                              tol: float = 1e-11, init=None) -> np.ndarray:
    """Central difference of the minimized value; re-minimizes at every probe.

    This is the independent oracle for :func:`envelope_derivative`: it never
    evaluates ``grad_mu`` and goes through the full solve at each shifted
    parameter.
    """
    mu = np.asarray(mu, dtype=float)
    if init is None:
        init = np.zeros(family.dim_u)

    def optimal(m):
        rec = find_minimizer(family, m, init, tol=tol)
        return family.value(rec.u_star, m)

    g = np.empty(family.dim_mu)
    for i in range(family.dim_mu):
        e = np.zeros(family.dim_mu)
        e[i] = h
        g[i] = (optimal(mu + e) - optimal(mu - e)) / (2 * h)
    return g


def fd_minimizer_jacobian(family: EnergyFamily, mu, h: float = FD_STEP_FIRST,
                          tol: float = 1e-11, init=None) -> np.ndarray:
    """Central difference of the minimizer map, column per parameter."""
    mu = np.asarray(mu, dtype=float)
    if init is None:
        init = np.zeros(family.dim_u)
    out = np.empty((family.dim_u, family.dim_mu))
    for i in range(family.dim_mu):
        e = np.zeros(family.dim_mu)
        e[i] = h
        up = find_minimizer(family, mu + e, init, tol=tol).u_star
        dn = find_minimizer(family, mu - e, init, tol=tol).u_star
        out[:, i] = (up - dn) / (2 * h)
    return out


def fd_optimal_value_hessian(family: EnergyFamily, mu, h: float = FD_STEP_SECOND,
                             tol: float = 1e-11, init=None) -> np.ndarray:
    """Central difference of the first-derivative formula at re-solved points."""
    mu = np.asarray(mu, dtype=float)
    if init is None:
        init = np.zeros(family.dim_u)
    out = np.empty((family.dim_mu, family.dim_mu))
    for j in range(family.dim_mu):
        e = np.zeros(family.dim_mu)
        e[j] = h
        up_rec = find_minimizer(family, mu + e, init, tol=tol)
        dn_rec = find_minimizer(family, mu - e, init, tol=tol)
        up = envelope_derivative(family, mu + e, up_rec)
        dn = envelope_derivative(family, mu - e, dn_rec)
        out[:, j] = (up - dn) / (2 * h)
    return 0.5 * (out + out.T)


@dataclass
class QuadraticFamily:
    """Closed-form quadratic family used by tests and the CLI check suite.

    J(u, mu) = 0.5 u'Ku + u'(C mu - c) + 0.5 mu'Q mu + q'mu with K symmetric
    positive definite, so the minimizer, optimal value and its derivatives
    all have independent dense closed forms.
    """

    K: np.ndarray
    C: np.ndarray
    c: np.ndarray
    Q: np.ndarray
    q: np.ndarray

    def family(self, coercivity_floor=None) -> EnergyFamily:
        K, C, c, Q, q = self.K, self.C, self.c, self.Q, self.q
        floor = coercivity_floor
        if floor is None:
            floor = 0.9 * float(scipy.linalg.eigvalsh(K)[0])
        return EnergyFamily(
            dim_u=K.shape[0], dim_mu=Q.shape[0],
            value=lambda u, m: float(0.5 * u @ K @ u + u @ (C @ m - c)
                                     + 0.5 * m @ Q @ m + q @ m),
            grad_u=lambda u, m: K @ u + C @ m - c,
            hess_u=lambda u, m: K,
            grad_mu=lambda u, m: C.T @ u + Q @ m + q,
            mixed=lambda u, m: C,
            hess_mu=lambda u, m: Q,
            coercivity_floor=floor,
        )

    def minimizer(self, mu) -> np.ndarray:
        return np.linalg.solve(self.K, self.c - self.C @ np.asarray(mu, float))

    def optimal_value(self, mu) -> float:
        mu = np.asarray(mu, dtype=float)
        u = self.minimizer(mu)
        return float(0.5 * u @ self.K @ u + u @ (self.C @ mu - self.c)
                     + 0.5 * mu @ self.Q @ mu + self.q @ mu)


def random_quadratic_family(dim_u: int, dim_mu: int, rng) -> QuadraticFamily:
    """Random SPD quadratic family with O(1) spectra."""
    a = rng.standard_normal((dim_u, dim_u))
    K = a @ a.T + dim_u * np.eye(dim_u)
    K /= np.linalg.norm(K, 2) / 2.0
    b = rng.standard_normal((dim_mu, dim_mu))
    Q = 0.5 * (b + b.T)
    return QuadraticFamily(
        K=K,
        C=rng.standard_normal((dim_u, dim_mu)),
        c=rng.standard_normal(dim_u),
        Q=Q,
        q=rng.standard_normal(dim_mu),
    )
