"""Interval-censored normal regression and truncated-normal sampling.

The regression models an outcome whose rows are either observed exactly
(lower == upper) or known only to lie in [lower, upper].  Point rows enter
the likelihood through the normal density, interval rows through the normal
probability of their interval.  The model is maximised over (beta, log
sigma) with an analytic gradient and Hessian; the parameter covariance is
the inverse negative Hessian at the optimum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_ndtr, ndtr, ndtri
from sklearn.base import BaseEstimator, RegressorMixin

from .errors import NonConvergence
from .validation import as_rng, check_design_matrix, check_interval_bounds

_LOG_2PI = float(np.log(2.0 * np.pi))
_Z_CLIP = 40.0          # |z| beyond this carries no double-precision information
_LOGP_FLOOR = -700.0    # keep impossible rows finite for the optimizer


def _split_rows(lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Boolean mask of point rows (exactly observed)."""
    return (lower == upper) & np.isfinite(lower)


def _log_interval_prob(zl: np.ndarray, zu: np.ndarray) -> np.ndarray:
    """log(Phi(zu) - Phi(zl)), stable in either tail."""
    zl = np.clip(zl, -_Z_CLIP, _Z_CLIP)
    zu = np.clip(zu, -_Z_CLIP, _Z_CLIP)
    flip = (zl + zu) > 0
    a = np.where(flip, -zu, zl)
    b = np.where(flip, -zl, zu)
    la = log_ndtr(a)
    lb = log_ndtr(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        diff = np.where(la < lb, -np.expm1(la - lb), 0.0)
        logp = lb + np.log(diff)
    return np.maximum(logp, _LOGP_FLOOR)


def _interval_terms(zl, zu, logp):
    """phi(z)/P ratios and their z-weighted versions for grad/Hessian."""
    zl = np.clip(zl, -_Z_CLIP, _Z_CLIP)
    zu = np.clip(zu, -_Z_CLIP, _Z_CLIP)
    r_l = np.exp(-0.5 * zl * zl - 0.5 * _LOG_2PI - logp)
    r_u = np.exp(-0.5 * zu * zu - 0.5 * _LOG_2PI - logp)
    a = r_l - r_u
    b = zl * r_l - zu * r_u
    c = zl * zl * r_l - zu * zu * r_u
    e = zl ** 3 * r_l - zu ** 3 * r_u
    return a, b, c, e


def interval_loglik(
    x: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    beta: np.ndarray,
    sigma: float,
) -> float:
    """Total log-likelihood at the given parameters."""
    xb = x @ beta
    point = _split_rows(lower, upper)
    ll = 0.0
    if point.any():
        z = (lower[point] - xb[point]) / sigma
        ll += float(np.sum(-0.5 * z * z - np.log(sigma) - 0.5 * _LOG_2PI))
    itv = ~point
    if itv.any():
        zl = (lower[itv] - xb[itv]) / sigma
        zu = (upper[itv] - xb[itv]) / sigma
        ll += float(np.sum(_log_interval_prob(zl, zu)))
    return ll


def _nll_and_grad(theta, x, lower, upper, point):
    """Mean negative log-likelihood and its gradient over (beta, log sigma).

    Line-search probes at extreme log sigma underflow sigma to zero; the
    resulting non-finite objective makes the optimizer backtrack, so the
    divide warnings are suppressed rather than special-cased.
    """
    n, p = x.shape
    beta = theta[:p]
    s = theta[p]
    sigma = np.exp(s)
    xb = x @ beta
    ll = 0.0
    grad_beta = np.zeros(p)
    grad_s = 0.0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if point.any():
            xp = x[point]
            z = (lower[point] - xb[point]) / sigma
            ll += np.sum(-0.5 * z * z) - point.sum() * (s + 0.5 * _LOG_2PI)
            grad_beta += xp.T @ z / sigma
            grad_s += np.sum(z * z - 1.0)
        itv = ~point
        if itv.any():
            xi = x[itv]
            zl = (lower[itv] - xb[itv]) / sigma
            zu = (upper[itv] - xb[itv]) / sigma
            logp = _log_interval_prob(zl, zu)
            a, b, _, _ = _interval_terms(zl, zu, logp)
            ll += np.sum(logp)
            grad_beta += xi.T @ a / sigma
            grad_s += np.sum(b)
    grad = np.concatenate([grad_beta, [grad_s]])
    return -ll / n, -grad / n


def loglik_hessian(theta, x, lower, upper, point=None) -> np.ndarray:
    """Analytic Hessian of the total log-likelihood at theta."""
    n, p = x.shape
    if point is None:
        point = _split_rows(lower, upper)
    beta = theta[:p]
    sigma = np.exp(theta[p])
    xb = x @ beta
    w = np.zeros(n)       # weights for the beta-beta block
    v = np.zeros(n)       # weights for the beta-s block
    h_ss = 0.0
    if point.any():
        z = (lower[point] - xb[point]) / sigma
        w[point] = -1.0
        v[point] = -2.0 * z
        h_ss += np.sum(-2.0 * z * z)
    itv = ~point
    if itv.any():
        zl = (lower[itv] - xb[itv]) / sigma
        zu = (upper[itv] - xb[itv]) / sigma
        logp = _log_interval_prob(zl, zu)
        a, b, c, e = _interval_terms(zl, zu, logp)
        w[itv] = b - a * a
        v[itv] = c - a * b - a
        h_ss += np.sum(e - b - b * b)
    hess = np.empty((p + 1, p + 1))
    hess[:p, :p] = (x * w[:, None]).T @ x / (sigma * sigma)
    hbs = x.T @ v / sigma
    hess[:p, p] = hbs
    hess[p, :p] = hbs
    hess[p, p] = h_ss
    return hess


@dataclass(frozen=True)
class IntervalRegressionFit:
    """Result of an interval-censored regression fit."""

    beta: np.ndarray
    sigma: float
    log_sigma: float
    vcov: np.ndarray          # covariance of (beta, log sigma)
    loglik: float
    n_point: int
    n_interval: int
    n_iter: int
    grad_max: float           # max-norm of the mean log-likelihood gradient
    converged: bool

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.vcov))


def _start_values(x, lower, upper, point):
    """Least squares on interval midpoints, infinite bounds pulled in by 1."""
    lo = np.where(np.isfinite(lower), lower, np.where(np.isfinite(upper), upper - 1.0, 0.0))
    hi = np.where(np.isfinite(upper), upper, np.where(np.isfinite(lower), lower + 1.0, 0.0))
    mid = np.where(point, lower, 0.5 * (lo + hi))
    beta0, *_ = np.linalg.lstsq(x, mid, rcond=None)
    resid = mid - x @ beta0
    s0 = float(np.log(max(np.std(resid), 1e-3)))
    return np.concatenate([beta0, [s0]])


def _newton_polish(theta, x, lower, upper, point, grad_tol, max_steps=20):
    """Damped Newton steps on the mean NLL; returns (theta, grad_max, steps)."""
    n = x.shape[0]
    _, grad = _nll_and_grad(theta, x, lower, upper, point)
    grad_max = float(np.max(np.abs(grad)))
    steps = 0
    for _ in range(max_steps):
        if grad_max <= grad_tol:
            break
        hess = loglik_hessian(theta, x, lower, upper, point) / n
        try:
            step = np.linalg.solve(hess, grad)   # grad is of mean NLL: -g/n
        except np.linalg.LinAlgError:
            break
        f_cur, _ = _nll_and_grad(theta, x, lower, upper, point)
        scale = 1.0
        improved = False
        for _ in range(30):
            cand = theta + scale * step
            f_new, g_new = _nll_and_grad(cand, x, lower, upper, point)
            if np.isfinite(f_new) and f_new <= f_cur + 1e-12:
                theta = cand
                grad = g_new
                grad_max = float(np.max(np.abs(g_new)))
                improved = True
                break
            scale *= 0.5
        steps += 1
        if not improved:
            break
    return theta, grad_max, steps


def fit_interval_regression(
    x: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    start: np.ndarray | None = None,
    max_iter: int = 500,
    grad_tol: float = 1e-8,
) -> IntervalRegressionFit:
    """Maximum likelihood for the interval-censored normal regression.

    ``grad_tol`` applies to the max-norm of the gradient of the mean
    log-likelihood (the total divided by the row count), which keeps the
    criterion comparable across sample sizes.  Raises
    :class:`NonConvergence` when the criterion cannot be met or the
    information matrix cannot be inverted.
    """
    x = check_design_matrix(x)
    lower, upper = check_interval_bounds(lower, upper)
    n, p = x.shape
    if lower.size != n:
        raise ValueError("bounds must have one entry per design row")
    point = _split_rows(lower, upper)
    theta0 = np.asarray(start, dtype=float) if start is not None \
        else _start_values(x, lower, upper, point)
    if theta0.size != p + 1:
        raise ValueError(f"start must have length {p + 1}")
    theta, grad_max, n_iter = theta0, np.inf, 0
    if start is not None:
        # a warm start is usually a step away from the optimum; pure Newton
        # from there avoids the L-BFGS pass entirely
        theta, grad_max, n_iter = _newton_polish(
            theta0, x, lower, upper, point, grad_tol)
    if grad_max > grad_tol:
        res = minimize(
            _nll_and_grad,
            theta0,
            args=(x, lower, upper, point),
            method="L-BFGS-B",
            jac=True,
            options={"maxiter": max_iter, "maxfun": 5 * max_iter,
                     "ftol": 1e-14, "gtol": grad_tol},
        )
        # Newton polish: L-BFGS often stops on ftol slightly above the
        # gradient criterion; a few damped Newton steps close the gap.
        theta, grad_max, polish = _newton_polish(
            res.x, x, lower, upper, point, grad_tol)
        n_iter += int(res.nit) + polish
    converged = grad_max <= grad_tol
    if not converged:
        raise NonConvergence(
            f"interval regression did not converge after {n_iter} iterations "
            f"(gradient max-norm {grad_max:.3e} > {grad_tol:.1e})")
    beta = theta[:p]
    log_sigma = float(theta[p])
    hess = loglik_hessian(theta, x, lower, upper, point)
    try:
        vcov = np.linalg.inv(-hess)
    except np.linalg.LinAlgError as err:
        raise NonConvergence(f"information matrix is singular: {err}") from err
    if not np.all(np.isfinite(vcov)):
        raise NonConvergence("information matrix inverse is not finite")
    return IntervalRegressionFit(
        beta=beta,
        sigma=float(np.exp(log_sigma)),
        log_sigma=log_sigma,
        vcov=vcov,
        loglik=interval_loglik(x, lower, upper, beta, float(np.exp(log_sigma))),
        n_point=int(point.sum()),
        n_interval=int(n - point.sum()),
        n_iter=n_iter,
        grad_max=grad_max,
        converged=converged,
    )


def draw_parameters(
    fit: IntervalRegressionFit, rng
) -> tuple[np.ndarray, float]:
    """One multivariate-normal draw of (beta, sigma) around the fit.

    The draw is centred at (beta, log sigma) with the fit covariance; sigma
    is exponentiated after drawing.  A zero covariance returns the centre
    exactly.
    """
    rng = as_rng(rng)
    center = np.concatenate([fit.beta, [fit.log_sigma]])
    cov = np.asarray(fit.vcov, dtype=float)
    sym = 0.5 * (cov + cov.T)
    eigval, eigvec = np.linalg.eigh(sym)
    tol = 1e-8 * max(1.0, float(np.max(np.abs(eigval))))
    if np.min(eigval) < -tol:
        raise NonConvergence(
            f"parameter covariance is not positive semidefinite "
            f"(min eigenvalue {np.min(eigval):.3e})")
    root = eigvec * np.sqrt(np.clip(eigval, 0.0, None))
    theta = center + root @ rng.standard_normal(center.size)
    return theta[:-1], float(np.exp(theta[-1]))


def sample_truncated_normal(mu, sigma, lower, upper, rng, size=None):
    """Draws from a normal(mu, sigma) restricted to [lower, upper].

    Stable far into either tail: the inverse-CDF transform is applied on
    whichever side of the distribution retains floating-point resolution,
    so bounds like [mu + 8 sigma, mu + 9 sigma] yield finite in-range
    draws.  All inputs broadcast; ``size`` forces the output shape.
    """
    rng = as_rng(rng)
    mu, sigma, lower, upper = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (mu, sigma, lower, upper)))
    if size is not None:
        mu, sigma, lower, upper = (np.broadcast_to(v, size) for v in (mu, sigma, lower, upper))
    scalar = mu.ndim == 0
    mu = np.atleast_1d(mu)
    sigma = np.atleast_1d(sigma)
    lower = np.atleast_1d(lower)
    upper = np.atleast_1d(upper)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    if np.any(lower > upper):
        raise ValueError("every lower bound must be <= its upper bound")
    a = (lower - mu) / sigma
    b = (upper - mu) / sigma
    z = np.empty(mu.shape, dtype=float)

    free = np.isneginf(a) & np.isposinf(b)
    if free.any():
        z[free] = rng.standard_normal(int(free.sum()))

    def left_tail(hi_z, lo_z):
        """Sample z in [lo_z, hi_z] with hi_z <= 0 via the lower cdf."""
        lo_u = ndtr(lo_z)
        hi_u = ndtr(hi_z)
        u = rng.uniform(np.maximum(lo_u, 1e-320), hi_u)
        return np.clip(ndtri(u), lo_z, hi_z)

    both_left = ~free & (b <= 0)
    if both_left.any():
        z[both_left] = left_tail(b[both_left], a[both_left])
    both_right = ~free & (a >= 0)
    if both_right.any():
        # mirror: sample [-b, -a] in the left tail and negate
        z[both_right] = -left_tail(-a[both_right], -b[both_right])
    straddle = ~free & (a < 0) & (b > 0)
    if straddle.any():
        a_s, b_s = a[straddle], b[straddle]
        cdf_a = ndtr(a_s)
        sf_b = ndtr(-b_s)
        mass = 1.0 - cdf_a - sf_b
        p_left = (0.5 - cdf_a) / mass
        go_left = rng.uniform(size=a_s.shape) < p_left
        out = np.empty(a_s.shape)
        if go_left.any():
            u = rng.uniform(np.maximum(cdf_a[go_left], 1e-320), 0.5)
            out[go_left] = np.clip(ndtri(u), a_s[go_left], 0.0)
        if (~go_left).any():
            u = rng.uniform(np.maximum(sf_b[~go_left], 1e-320), 0.5)
            out[~go_left] = np.clip(-ndtri(u), 0.0, b_s[~go_left])
        z[straddle] = out
    result = np.clip(mu + sigma * z, lower, upper)
    return float(result[0]) if scalar else result


class IntervalCensoredRegression(BaseEstimator, RegressorMixin):
    """Estimator wrapper around :func:`fit_interval_regression`.

    ``y`` is an (n, 2) array of [lower, upper] bounds; rows observed
    exactly carry equal bounds.  After fitting, ``coef_``/``intercept_``
    hold the mean model and ``sigma_`` the residual scale.
    """

    def __init__(self, fit_intercept: bool = True, max_iter: int = 500,
                 grad_tol: float = 1e-8):
        self.fit_intercept = fit_intercept
        self.max_iter = max_iter
        self.grad_tol = grad_tol

    def _design(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if self.fit_intercept:
            x = np.column_stack([np.ones(len(x)), x])
        return x

    def fit(self, x, y):
        y = np.asarray(y, dtype=float)
        if y.ndim != 2 or y.shape[1] != 2:
            raise ValueError("y must be an (n, 2) array of [lower, upper] bounds")
        design = self._design(x)
        fit = fit_interval_regression(
            design, y[:, 0], y[:, 1],
            max_iter=self.max_iter, grad_tol=self.grad_tol)
        if self.fit_intercept:
            self.intercept_ = float(fit.beta[0])
            self.coef_ = fit.beta[1:].copy()
        else:
            self.intercept_ = 0.0
            self.coef_ = fit.beta.copy()
        self.sigma_ = fit.sigma
        self.result_ = fit
        return self

    def predict(self, x):
        if not hasattr(self, "result_"):
            raise RuntimeError("estimator must be fitted before predict")
        if self.fit_intercept:
            coeffs = np.concatenate([[self.intercept_], self.coef_])
        else:
            coeffs = self.coef_
        return self._design(x) @ coeffs
