"""Analytic and ODE oracle for Brownian motion with drift.

For X(t) = mu t + sigma B(t) the alpha-scale function is

    W(x) = (exp(theta_p x) - exp(-theta_m x)) / Delta,
    Delta = sqrt(mu^2 + 2 alpha sigma^2),
    theta_p = (Delta - mu) / sigma^2,  theta_m = (Delta + mu) / sigma^2,

and Z(x) = 1 + alpha * int_0^x W.  The exit quantities of the process
reflected at an upper barrier are evaluated in a rearranged form that never
forms exp(theta_p b) explicitly, so large barriers do not overflow.

The HJB boundary-value solver is independent of the scale functions: it
integrates the ODE numerically and imposes the boundary slopes by linear
shooting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from .errors import NoRoot, QuadratureFailure, SingularBVP
from .levy_model import PayoffSpec

__all__ = [
    "DiffusionSpec",
    "HJBSolution",
    "scale_functions",
    "exit_laplace",
    "resolvent_kernel",
    "oracle_g",
    "solve_hjb_ode",
    "oracle_bstar",
    "smooth_fit_bstar",
]


@dataclass(frozen=True)
class DiffusionSpec:
    mu: float
    sigma: float
    alpha: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")

    @property
    def delta(self):
        return math.sqrt(self.mu**2 + 2 * self.alpha * self.sigma**2)

    @property
    def roots(self):
        """(theta_p, theta_m): the positive root and the magnitude of the negative root."""
        d, s2 = self.delta, self.sigma**2
        return (d - self.mu) / s2, (d + self.mu) / s2

    @classmethod
    def from_problem(cls, spec):
        m = spec.model
        if m.jumps:
            raise ValueError("diffusion oracle needs a model without jumps")
        return cls(m.drift, m.sigma, spec.alpha)


def scale_functions(spec: DiffusionSpec, x):
    """(W, W', Z) at x >= 0."""
    x = np.asarray(x, dtype=float)
    tp, tm = spec.roots
    d = spec.delta
    ep, em = np.exp(tp * x), np.exp(-tm * x)
    w = (ep - em) / d
    wp = (tp * ep + tm * em) / d
    z = 1.0 + spec.alpha / d * (np.expm1(tp * x) / tp + np.expm1(-tm * x) / tm)
    return w, wp, z


def _w_second(spec, x):
    tp, tm = spec.roots
    return (tp**2 * np.exp(tp * x) - tm**2 * np.exp(-tm * x)) / spec.delta


def exit_laplace(spec: DiffusionSpec, b):
    """E_b[exp(-alpha kappa)] = Z(b) - alpha W(b)^2 / W'(b) for the process reflected at b."""
    tp, tm = spec.roots
    e = math.exp(-(tp + tm) * b)
    return spec.alpha / spec.delta * math.exp(-tm * b) * (
        1.0 / tm + (tm + 2 * tp - tp * e) / (tp * (tp + tm * e))
    )


def resolvent_kernel(spec: DiffusionSpec, b, y):
    """W(b) W'(b-y) / W'(b) - W(b-y): occupation density at y of the process
    reflected at b, started at b and killed below 0."""
    y = np.asarray(y, dtype=float)
    tp, tm = spec.roots
    e = math.exp(-(tp + tm) * b)
    rho = (1.0 - e) / (tp + tm * e)
    first = -(tp + tm) * np.exp(-tp * y - tm * b) / (tp + tm * e)
    second = (rho * tm + 1.0) * np.exp(-tm * (b - y))
    return (first + second) / spec.delta


def _payoff_parts(payoff):
    if isinstance(payoff, PayoffSpec):
        return payoff.w, payoff.w_prime_plus, list(payoff.table.knots[1:])
    if payoff is None:
        return (lambda x: np.zeros_like(np.asarray(x, float))), (lambda x: np.zeros_like(np.asarray(x, float))), []
    raise TypeError("payoff must be a PayoffSpec or None")


def oracle_g(spec: DiffusionSpec, b, beta, r, payoff=None, tol=1e-8):
    """Barrier-selection function by closed form plus adaptive quadrature."""
    if b < 0:
        raise ValueError("b must be non-negative")
    value = beta * exit_laplace(spec, b)
    _, wprime, kinks = _payoff_parts(payoff)
    if b == 0 or r == 0:
        return value
    points = [p for p in kinks if 0 < p < b]

    def integrand(y):
        return float(np.asarray(wprime(np.array([y])))[0]) * float(resolvent_kernel(spec, b, y))

    if not np.any(np.asarray(wprime(np.linspace(0, b, 257)))):
        return value
    res, err = integrate.quad(integrand, 0.0, b, points=points or None, epsabs=tol, epsrel=tol, limit=500)
    if not (err <= tol * max(1.0, abs(res))):
        raise QuadratureFailure(f"quadrature error {err:.2e} exceeds {tol:.0e} at b={b}", b=b)
    return value + r * res


@dataclass(frozen=True)
class HJBSolution:
    x: np.ndarray
    v: np.ndarray
    dv: np.ndarray
    d2v: np.ndarray
    residual: float  # max |(L - alpha) v + r w| on the interior, by a 5-point stencil
    condition: float

    def __call__(self, x):
        return np.interp(x, self.x, self.v)


def solve_hjb_ode(spec: DiffusionSpec, beta, r, payoff, b, right_bc="neumann", grid_step=None, rtol=1e-12):
    """Solve (sigma^2/2) v'' + mu v' - alpha v + r w = 0 on (0, b), v'(0) = beta.

    ``right_bc`` is ``"neumann"`` for v'(b) = 1 or ``"smooth"`` for v''(b) = 0.
    The solution is v = v_p + c1 v_1 + c2 v_2 with v_1, v_2 the numerically
    integrated homogeneous solutions (unit initial value / unit initial slope)
    and v_p the particular solution with zero initial data.
    """
    if not b > 0:
        raise ValueError("b must be positive")
    w, _, kinks = _payoff_parts(payoff)
    s2 = spec.sigma**2
    mu, alpha = spec.mu, spec.alpha

    def rhs(x, y):
        # y = [v1, v1', v2, v2', vp, vp']
        wx = float(np.asarray(w(np.array([x])))[0])
        return [
            y[1], 2 / s2 * (alpha * y[0] - mu * y[1]),
            y[3], 2 / s2 * (alpha * y[2] - mu * y[3]),
            y[5], 2 / s2 * (alpha * y[4] - mu * y[5] - r * wx),
        ]

    step = grid_step if grid_step is not None else 1e-3 * b
    n = max(int(math.ceil(b / step)), 8) + 1
    xs = np.linspace(0.0, b, n)
    breaks = [0.0] + sorted(p for p in kinks if 0 < p < b) + [b]
    y0 = np.array([1.0, 0.0, 0.0, 1.0, 0.0, 0.0])
    pieces = []
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        sol = integrate.solve_ivp(rhs, (lo, hi), y0, method="DOP853", rtol=rtol, atol=rtol, dense_output=True)
        if not sol.success:
            raise SingularBVP(f"ODE integration failed: {sol.message}")
        pieces.append((lo, hi, sol.sol))
        y0 = sol.y[:, -1]
    Y = np.empty((6, n))
    for lo, hi, f in pieces:
        mask = (xs >= lo) & (xs <= hi)
        Y[:, mask] = f(xs[mask])
    yb = y0
    wb = float(np.asarray(w(np.array([b])))[0])
    if right_bc == "neumann":
        row = [yb[1], yb[3]]
        rhs_b = 1.0 - yb[5]
    elif right_bc == "smooth":
        d2 = lambda v, dv: 2 / s2 * (alpha * v - mu * dv)  # noqa: E731
        row = [d2(yb[0], yb[1]), d2(yb[2], yb[3])]
        rhs_b = -(2 / s2 * (alpha * yb[4] - mu * yb[5] - r * wb))
    else:
        raise ValueError("right_bc must be 'neumann' or 'smooth'")
    # v'(0) = c2 (v1'(0) = 0, v2'(0) = 1, vp'(0) = 0)
    A = np.array([[0.0, 1.0], row])
    rhs_vec = np.array([beta, rhs_b])
    cond = float(np.linalg.cond(A))
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularBVP(f"boundary system is singular (condition {cond:.3e})", condition=cond)
    c1, c2 = np.linalg.solve(A, rhs_vec)
    v = Y[4] + c1 * Y[0] + c2 * Y[2]
    dv = Y[5] + c1 * Y[1] + c2 * Y[3]
    wx = np.asarray(w(xs), dtype=float)
    d2v = 2 / s2 * (alpha * v - mu * dv - r * wx)
    residual = _stencil_residual(xs, v, wx, spec, r)
    return HJBSolution(xs, v, dv, d2v, residual, cond)


def _stencil_residual(xs, v, wx, spec, r):
    h = xs[1] - xs[0]
    if xs.size < 5:
        return float("nan")
    d1 = (-v[4:] + 8 * v[3:-1] - 8 * v[1:-3] + v[:-4]) / (12 * h)
    d2 = (-v[4:] + 16 * v[3:-1] - 30 * v[2:-2] + 16 * v[1:-3] - v[:-4]) / (12 * h * h)
    res = spec.sigma**2 / 2 * d2 + spec.mu * d1 - spec.alpha * v[2:-2] + r * wx[2:-2]
    return float(np.max(np.abs(res)))


def oracle_bstar(spec: DiffusionSpec, beta, r, payoff=None, b_max=1e3, tol=1e-8):
    """Root of oracle_g(b) = 1 by bisection."""
    g = lambda b: oracle_g(spec, b, beta, r, payoff) - 1.0  # noqa: E731
    if g(0.0) < 0:
        return 0.0
    hi = 1.0
    while g(hi) >= 0:
        hi *= 2.0
        if hi > b_max:
            raise NoRoot(f"oracle g stays >= 1 up to b_max={b_max}")
    lo = 0.0 if hi == 1.0 else hi / 2.0
    return optimize.bisect(g, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=500)


def smooth_fit_bstar(spec: DiffusionSpec, beta, r, payoff=None, b_lo=1e-3, b_max=50.0, tol=1e-10):
    """Barrier at which the Neumann BVP solution has v''(b) = 0.

    An independent route to the optimal barrier: only the ODE solver is used.
    """

    def curvature(b):
        return solve_hjb_ode(spec, beta, r, payoff, b).d2v[-1]

    lo, hi = b_lo, b_lo
    f_lo = curvature(lo)
    while True:
        hi = min(2 * hi, b_max)
        f_hi = curvature(hi)
        if np.sign(f_hi) != np.sign(f_lo):
            break
        if hi >= b_max:
            raise NoRoot("v''(b) does not change sign")
        lo, f_lo = hi, f_hi
    return optimize.brentq(curvature, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps)
