"""
Least-squares machinery: closed-form line and parabola fits plus a damped
(Levenberg-Marquardt) nonlinear fitter with a finite-difference Jacobian.

All fits are unweighted.  Covariances are scaled by the residual variance
``SSR / (n - p)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFitError

logger = logging.getLogger(__name__)


@dataclass
class FitResult:
    parameters: np.ndarray
    covariance: np.ndarray
    residual_rms: float
    n_points: int
    converged: bool = True
    iterations: int = 0

    @property
    def errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def __iter__(self):
        return iter(self.parameters)


def _n_distinct(x) -> int:
    return np.unique(np.asarray(x, dtype=float)).size


def fit_line(x, y) -> FitResult:
    """Ordinary least-squares line. ``parameters`` are ``(slope, intercept)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    if n < 2 or _n_distinct(x) < 2:
        raise DegenerateFitError("line fit needs at least two distinct abscissae")
    xm = x.mean()
    ym = y.mean()
    dx = x - xm
    sxx = np.dot(dx, dx)
    slope = np.dot(dx, y - ym) / sxx
    intercept = ym - slope * xm
    resid = y - (slope * x + intercept)
    ssr = float(np.dot(resid, resid))
    s2 = ssr / (n - 2) if n > 2 else 0.0
    cov = s2 * np.array([[1.0 / sxx, -xm / sxx], [-xm / sxx, 1.0 / n + xm * xm / sxx]])
    return FitResult(np.array([slope, intercept]), cov, np.sqrt(ssr / n), n)


def fit_parabolas(V, S):
    """Fit ``S = beta (V - V0)^2 + S0`` to every row of ``S`` at once.

    Parameters
    ----------
    V : (n,) array
        Abscissae shared by all rows (plate voltages).
    S : (m, n) array
        One row per independent data set.

    Returns
    -------
    params : (m, 3) array of ``(V0, beta, S0)``
    cov : (m, 3, 3) array of parameter covariances
    rms : (m,) array of residual rms
    """
    V = np.asarray(V, dtype=float)
    S = np.atleast_2d(np.asarray(S, dtype=float))
    n = V.size
    if _n_distinct(V) < 3:
        raise DegenerateFitError("parabola fit needs at least three distinct abscissae")
    vm = V.mean()
    vs = np.ptp(V) / 2.0
    u = (V - vm) / vs
    D = np.column_stack([u * u, u, np.ones(n)])
    G = np.linalg.inv(D.T @ D)
    coef = S @ (D @ G)  # rows are (a', b', c') in the scaled variable
    resid = S - coef @ D.T
    ssr = np.einsum("ij,ij->i", resid, resid)
    a, b, c = coef.T
    if np.any(a == 0.0):
        raise DegenerateFitError("parabola has zero curvature")
    u0 = -b / (2.0 * a)
    V0 = vm + vs * u0
    beta = a / vs ** 2
    S0 = c - b * b / (4.0 * a)
    params = np.column_stack([V0, beta, S0])

    # Jacobian of (V0, beta, S0) with respect to (a', b', c')
    m = S.shape[0]
    J = np.zeros((m, 3, 3))
    J[:, 0, 0] = vs * b / (2.0 * a * a)
    J[:, 0, 1] = -vs / (2.0 * a)
    J[:, 1, 0] = 1.0 / vs ** 2
    J[:, 2, 0] = b * b / (4.0 * a * a)
    J[:, 2, 1] = -b / (2.0 * a)
    J[:, 2, 2] = 1.0
    s2 = ssr / (n - 3) if n > 3 else np.zeros(m)
    cov = np.einsum("kij,jl,kml->kim", J, G, J) * s2[:, None, None]
    return params, cov, np.sqrt(ssr / n)


def fit_parabola(V, S) -> FitResult:
    """Parabola through (V, S); ``parameters`` are ``(V0, beta, S0)``.

    Solved through the equivalent quadratic ``a V^2 + b V + c`` so no
    iteration is needed.  The apex is where the curvature term vanishes.
    """
    params, cov, rms = fit_parabolas(V, np.asarray(S, dtype=float)[None, :])
    return FitResult(params[0], cov[0], float(rms[0]), int(np.size(V)))


def numerical_jacobian(model, x, p, x_scale, rel_step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of ``model(x, p)`` with respect to ``p``."""
    p = np.asarray(p, dtype=float)
    h = rel_step * np.maximum(np.abs(p), x_scale)
    cols = []
    for i in range(p.size):
        dp = np.zeros_like(p)
        dp[i] = h[i]
        cols.append((model(x, p + dp) - model(x, p - dp)) / (2.0 * h[i]))
    return np.column_stack(cols)


def fit_nonlinear(model, p0, x, y, bounds=None, x_scale=None, max_iter: int = 500,
                  xtol: float = 1e-10, ftol: float = 1e-12) -> FitResult:
    """Damped least squares for ``y ~ model(x, p)``.

    ``x_scale`` sets the typical magnitude of each parameter; it enters the
    finite-difference step (``1e-6 * max(|p|, x_scale)``) and the relative
    step convergence test.  ``bounds`` is a ``(lower, upper)`` pair of arrays;
    iterates are clipped into the box.

    A run that exhausts ``max_iter`` (or meets a non-finite model value) is
    returned with ``converged=False`` rather than raising.
    """
    p = np.array(p0, dtype=float)
    x_arr = x
    y = np.asarray(y, dtype=float)
    n, k = y.size, p.size
    if n < k:
        raise DegenerateFitError(f"{n} points cannot determine {k} parameters")
    scale = np.where(np.abs(p) > 0, np.abs(p), 1.0) if x_scale is None else np.broadcast_to(
        np.asarray(x_scale, dtype=float), p.shape).copy()
    lo, hi = (None, None) if bounds is None else (np.asarray(bounds[0], float), np.asarray(bounds[1], float))

    def clip(q):
        return q if lo is None else np.clip(q, lo, hi)

    p = clip(p)
    r = y - model(x_arr, p)
    cost = float(r @ r)
    lam = 1e-3
    converged = False
    it = 0
    J = None
    if not np.isfinite(cost):
        return FitResult(p, np.full((k, k), np.nan), np.nan, n, False, 0)

    for it in range(1, max_iter + 1):
        J = numerical_jacobian(model, x_arr, p, scale)
        if not np.all(np.isfinite(J)):
            break
        A = J.T @ J
        g = J.T @ r
        diag = np.diag(A).copy()
        if np.any(diag == 0.0):
            raise DegenerateFitError("normal matrix is singular (a parameter has no effect)")
        accepted = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), g)
            except np.linalg.LinAlgError as exc:
                raise DegenerateFitError("normal matrix is singular") from exc
            p_new = clip(p + step)
            r_new = y - model(x_arr, p_new)
            cost_new = float(r_new @ r_new)
            rel_step = np.max(np.abs(p_new - p) / np.maximum(np.abs(p), scale))
            if np.isfinite(cost_new) and cost_new <= cost:
                dcost = cost - cost_new
                p, r = p_new, r_new
                lam = max(lam / 10.0, 1e-12)
                accepted = True
                if rel_step < xtol or dcost <= ftol * cost or cost_new == 0.0:
                    converged = True
                cost = cost_new
                break
            if rel_step < xtol:
                converged = True
                break
            lam *= 10.0
        if converged or not accepted:
            break

    if J is None or not converged:
        J = numerical_jacobian(model, x_arr, p, scale)
    dof = n - k
    s2 = cost / dof if dof > 0 else 0.0
    try:
        cov = s2 * np.linalg.inv(J.T @ J)
    except np.linalg.LinAlgError:
        cov = np.full((k, k), np.nan)
    if not converged:
        logger.debug("fit_nonlinear stopped after %d iterations without converging", it)
    return FitResult(p, cov, float(np.sqrt(cost / n)), n, converged, it)
