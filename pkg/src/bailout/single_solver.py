"""Single-regime bail-out problem with an exponential horizon.

All estimators read one :class:`~bailout.path_engine.PathBatch`; re-using the
same batch for every barrier (common random numbers) makes ``b -> ĝ(b)``
exactly non-increasing in-sample, which is what the bisection relies on.

Discounting convention: a dividend or injection made during step k is booked
at the right end t_{k+1} with weight exp(-alpha t_{k+1}); running integrals
use the left-point integrand times the exact weight
int_{t_k}^{t_{k+1}} exp(-alpha t) dt.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import HorizonTooShortWarning, NoUpperBracket, ZeroBarrierUnboundedVariation
from .levy_model import ProblemSpec
from .path_engine import PathBatch

__all__ = [
    "Z95",
    "GEstimate",
    "BarrierSolution",
    "ValueEstimate",
    "ScanResult",
    "estimate_g",
    "g_curve",
    "solve_bstar",
    "zero_barrier_criterion",
    "estimate_value",
    "discounted_noise",
    "estimate_value_derivative",
    "optimality_scan",
    "truncation_bound",
    "value_samples",
]

Z95 = 1.959963984540054
CENSOR_FRACTION = 0.01
CENSOR_WEIGHT_TOL = 1e-3


@dataclass(frozen=True)
class GEstimate:
    b: float
    value: float
    half_width: float
    n_paths: int
    censored_fraction: float = 0.0

    @property
    def se(self):
        return self.half_width / Z95


@dataclass
class BarrierSolution:
    b_star: float
    g_at_bstar: GEstimate
    bracket: tuple
    zero_barrier_reason: str | None = None
    n_evaluations: int = 0
    history: list = field(default_factory=list)


@dataclass(frozen=True)
class ValueEstimate:
    """Path averages; ``dividends - beta * injections + r * running`` is the value."""

    x: np.ndarray
    b: float
    value: np.ndarray
    half_width: np.ndarray
    dividends: np.ndarray
    injections: np.ndarray
    running: np.ndarray
    n_paths: int

    @property
    def se(self):
        return self.half_width / Z95


@dataclass(frozen=True)
class ScanResult:
    b_grid: np.ndarray
    x_grid: np.ndarray
    values: np.ndarray  # (n_b, n_x)
    half_width: np.ndarray
    argmax_b: np.ndarray  # per x
    b_star: float | None
    max_violation: float | None


def _mean_hw(samples, axis=-1):
    n = samples.shape[axis]
    mean = samples.mean(axis=axis)
    sd = samples.std(axis=axis, ddof=1) if n > 1 else np.zeros_like(mean)
    return mean, Z95 * sd / math.sqrt(n)


def _check_censoring(spec, batch, censored, what):
    frac = float(np.mean(censored))
    weight = math.exp(-spec.alpha * batch.horizon)
    if frac > CENSOR_FRACTION and spec.beta * weight > CENSOR_WEIGHT_TOL:
        warnings.warn(
            f"{what}: {frac:.1%} of paths censored at T={batch.horizon} with residual weight "
            f"{spec.beta * weight:.2e}",
            HorizonTooShortWarning,
            stacklevel=3,
        )
    return frac


def g_curve(spec: ProblemSpec, barriers, batch: PathBatch):
    """ĝ at several barriers from a single pass over the batch."""
    barriers = np.atleast_1d(np.asarray(barriers, dtype=float))
    if np.any(barriers < 0):
        raise ValueError("barriers must be non-negative")
    knots, _, slopes = spec.payoff.table.kernel_args()
    contrib, kidx = _kernels.g_sums(
        batch.increments, batch.dt, barriers, spec.alpha, spec.beta, spec.r, knots, slopes, *batch.bridge_args()
    )
    out = []
    for j, b in enumerate(barriers):
        mean, hw = _mean_hw(contrib[j])
        frac = _check_censoring(spec, batch, kidx[j] > batch.n_steps, f"estimate_g(b={b:g})")
        out.append(GEstimate(float(b), float(mean), float(hw), batch.n_paths, frac))
    return out


def estimate_g(spec: ProblemSpec, b, batch: PathBatch) -> GEstimate:
    """Monte-Carlo estimate of the barrier-selection function at ``b`` (paths start at b)."""
    return g_curve(spec, [b], batch)[0]


def zero_barrier_criterion(spec: ProblemSpec):
    """``nu(-inf,0)(beta-1) - alpha + r w'_+(0)``, or ``None`` if not applicable.

    Applicable to bounded-variation models with non-negative drift; a strictly
    negative value means g(0) < 1 and hence a zero barrier.
    """
    m = spec.model
    if not m.bounded_variation or m.drift < 0:
        return None
    wp0 = float(np.asarray(spec.payoff.w_prime_plus(np.array([0.0])))[0])
    return m.down_jump_rate * (spec.beta - 1.0) - spec.alpha + spec.r * wp0


def solve_bstar(
    spec: ProblemSpec,
    batch: PathBatch,
    tol_b=1e-3,
    b_max=1e3,
    b_init=1.0,
    bracket_hint=None,
) -> BarrierSolution:
    """Candidate barrier inf{b >= 0 : ĝ(b) < 1} by bracketing and bisection.

    The returned bracket ``(lo, hi)`` satisfies ĝ(lo) >= 1 > ĝ(hi) on ``batch``
    and ``hi - lo <= tol_b``; ``b_star`` is ``lo`` (``hi`` when ``lo == 0`` for
    an unbounded-variation model, where a zero barrier is not admissible).
    """
    cache = {}
    history = []

    def g(b):
        b = float(b)
        if b not in cache:
            cache[b] = estimate_g(spec, b, batch)
            history.append((b, cache[b].value))
        return cache[b]

    crit = zero_barrier_criterion(spec)
    g0 = g(0.0)
    if crit is not None and crit < 0:
        if g0.value <= 1.0 + g0.half_width:
            return BarrierSolution(
                0.0, g0, (0.0, 0.0), f"zero-barrier criterion {crit:.6g} < 0 and ĝ(0)={g0.value:.6g}",
                len(cache), history,
            )
    if g0.value < 1.0 and spec.model.bounded_variation:
        return BarrierSolution(0.0, g0, (0.0, 0.0), f"ĝ(0)={g0.value:.6g} < 1", len(cache), history)

    lo, hi = _bracket(g, b_init, b_max, bracket_hint)
    while hi - lo > tol_b:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if g(mid).value < 1.0:
            hi = mid
        else:
            lo = mid
    b_star = lo
    if lo == 0.0 and not spec.model.bounded_variation:
        b_star = hi
    return BarrierSolution(b_star, g(b_star), (lo, hi), None, len(cache), history)


def _bracket(g, b_init, b_max, hint):
    if hint is not None:
        lo, hi = (float(v) for v in hint)
        width = max(hi - lo, 1e-6)
        lo = max(lo, 0.0)
        for _ in range(60):
            if lo == 0.0 or g(lo).value >= 1.0:
                break
            hi, lo = lo, max(lo - width, 0.0)
            width *= 2
        for _ in range(60):
            if g(hi).value < 1.0:
                return lo, hi
            lo, hi = hi, hi + width
            width *= 2
            if hi > b_max:
                break
        # fall through to a cold start
    b = float(b_init)
    if g(b).value < 1.0:
        return 0.0, b
    while b <= b_max:
        lo, b = b, 2.0 * b
        if g(b).value < 1.0:
            return lo, b
    raise NoUpperBracket(f"ĝ(b) >= 1 up to b_max={b_max}", b_max=b_max)


def _check_admissible(spec, b):
    if b < 0:
        raise ValueError("barrier must be non-negative")
    if b == 0 and not spec.model.bounded_variation:
        raise ZeroBarrierUnboundedVariation("b = 0 is not admissible when sigma > 0")


def discounted_noise(spec: ProblemSpec, batch: PathBatch):
    """Per-path sum of exp(-alpha t_{k+1}) (dX_k - E dX_k); zero mean by construction."""
    disc = np.exp(-spec.alpha * batch.dt * np.arange(1, batch.n_steps + 1))
    return (batch.increments - spec.model.mean() * batch.dt) @ disc


def _value_parts(spec, b, xs, batch):
    _check_admissible(spec, b)
    knots, values, slopes = spec.payoff.table.kernel_args()
    return _kernels.double_reflect_sums(
        batch.increments, batch.dt, xs, float(b), spec.alpha, knots, values, slopes, *batch.bridge_args()
    )


def value_samples(spec: ProblemSpec, b, x, batch: PathBatch):
    """Per-path discounted totals, shape (len(x), n_paths); CRN across x."""
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    div, inj, run = _value_parts(spec, b, xs, batch)
    return div - spec.beta * inj + spec.r * run


def estimate_value(spec: ProblemSpec, b, x, batch: PathBatch, control_variate=True) -> ValueEstimate:
    """NPV of the double-barrier strategy (0, b) started at ``x`` (scalar or array).

    With ``control_variate`` the path totals are regressed on the discounted
    centred increments, whose mean is known to be zero; this typically shrinks
    the confidence interval several-fold.  The component averages
    (dividends, injections, running) are always the raw ones.
    """
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    div, inj, run = _value_parts(spec, b, xs, batch)
    total = div - spec.beta * inj + spec.r * run
    if control_variate and batch.n_paths > 2:
        cv = discounted_noise(spec, batch)
        cvc = cv - cv.mean()
        denom = float(cvc @ cvc)
        if denom > 0:
            coef = (total - total.mean(axis=1, keepdims=True)) @ cvc / denom
            total = total - coef[:, None] * cv[None, :]
    mean, hw = _mean_hw(total)
    return ValueEstimate(
        xs, float(b), mean, hw, div.mean(axis=1), inj.mean(axis=1), run.mean(axis=1), batch.n_paths
    )


def estimate_value_derivative(spec: ProblemSpec, b, x, batch: PathBatch):
    """Exit-time estimate of v_b'(x) for 0 < x < b; returns (value, half_width) arrays."""
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(xs <= 0) or np.any(xs >= b):
        raise ValueError("derivative estimator needs 0 < x < b")
    knots, _, slopes = spec.payoff.table.kernel_args()
    samples = _kernels.exit_derivative_sums(
        batch.increments, batch.dt, xs, float(b), spec.alpha, spec.beta, spec.r, knots, slopes, *batch.bridge_args()
    )
    return _mean_hw(samples)


def optimality_scan(spec: ProblemSpec, batch: PathBatch, b_grid, x_grid, b_star=None) -> ScanResult:
    """CRN value surface v̂_b(x) over a barrier grid.

    ``max_violation`` is max over the grid of v̂_b(x) - half_width - v̂_{b*}(x);
    a non-positive value means no grid barrier beats ``b_star`` beyond noise.
    """
    b_grid = np.asarray(b_grid, dtype=float)
    x_grid = np.asarray(x_grid, dtype=float)
    if b_grid.size == 0 or x_grid.size == 0:
        raise ValueError("empty grid")
    vals = np.empty((b_grid.size, x_grid.size))
    hws = np.empty_like(vals)
    for k, b in enumerate(b_grid):
        est = estimate_value(spec, b, x_grid, batch)
        vals[k], hws[k] = est.value, est.half_width
    argmax_b = b_grid[np.argmax(vals, axis=0)]
    violation = None
    if b_star is not None:
        ref = estimate_value(spec, b_star, x_grid, batch).value
        violation = float(np.max(vals - hws - ref[None, :]))
    return ScanResult(b_grid, x_grid, vals, hws, argmax_b, b_star, violation)


def truncation_bound(spec: ProblemSpec, horizon, b=None, kind="value"):
    """Bound on the NPV lost by stopping the simulation at ``horizon``.

    For ĝ it is beta * exp(-alpha T).  For values it is exp(-alpha T) times the
    growth constant (1+beta)(b + (E|X(1)| + sigma^2/b)/alpha) + r max_{[0,b]}|w|/alpha,
    a crude but explicit bound on the discounted activity after restart at T.
    """
    weight = math.exp(-spec.alpha * horizon)
    if kind == "g":
        return spec.beta * weight
    m = spec.model
    b = 1.0 if b is None else max(float(b), 1e-12)
    wmax = float(np.max(np.abs(spec.payoff.w(np.linspace(0.0, b, 64)))))
    growth = (1 + spec.beta) * (b + (m.abs_mean_bound() + m.sigma**2 / b) / spec.alpha)
    growth += spec.r * wmax / spec.alpha
    return weight * growth
