"""Lévy surplus models, terminal payoffs and single-regime problem specs.

Models are finite-activity: a drift, an independent Brownian part and a
finite list of compound-Poisson jump components.  Since there is no
small-jump compensator the ``drift`` field is the bounded-variation drift
whenever ``sigma == 0``.

Validation never raises; it returns a list of :class:`Violation` records so
callers can decide what to do with them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special, stats

__all__ = [
    "SizeDistribution",
    "JumpComponent",
    "LevyModel",
    "PiecewiseLinear",
    "PayoffSpec",
    "ProblemSpec",
    "Violation",
    "validate_model",
    "validate_problem",
]

FAMILIES = ("exponential", "weibull", "half_normal", "fixed")


@dataclass(frozen=True)
class Violation:
    code: str
    message: str


@dataclass(frozen=True)
class SizeDistribution:
    """Law of a strictly positive jump size.

    ``params`` by family: exponential ``(mean,)``, weibull ``(shape, scale)``,
    half_normal ``(scale,)``, fixed ``(value,)``.
    """

    family: str
    params: tuple

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown jump-size family {self.family!r}")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))

    @classmethod
    def exponential(cls, mean=1.0):
        return cls("exponential", (mean,))

    @classmethod
    def weibull(cls, shape, scale=1.0):
        return cls("weibull", (shape, scale))

    @classmethod
    def half_normal(cls, scale=1.0):
        return cls("half_normal", (scale,))

    @classmethod
    def fixed(cls, value):
        return cls("fixed", (value,))

    def param_problems(self):
        expected = {"exponential": 1, "weibull": 2, "half_normal": 1, "fixed": 1}[self.family]
        if len(self.params) != expected:
            return [f"{self.family} takes {expected} parameter(s), got {len(self.params)}"]
        bad = [p for p in self.params if not (math.isfinite(p) and p > 0)]
        if self.family == "fixed":
            bad = [p for p in self.params if not (math.isfinite(p) and p >= 0)]
        return [f"{self.family} parameters must be positive and finite, got {self.params}"] if bad else []

    def mean(self):
        p = self.params
        if self.family == "exponential":
            return p[0]
        if self.family == "weibull":
            return p[1] * special.gamma(1.0 + 1.0 / p[0])
        if self.family == "half_normal":
            return p[0] * math.sqrt(2.0 / math.pi)
        return p[0]

    def variance(self):
        p = self.params
        if self.family == "exponential":
            return p[0] ** 2
        if self.family == "weibull":
            k, lam = p
            return lam**2 * (special.gamma(1 + 2 / k) - special.gamma(1 + 1 / k) ** 2)
        if self.family == "half_normal":
            return p[0] ** 2 * (1.0 - 2.0 / math.pi)
        return 0.0

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        p = self.params
        if self.family == "exponential":
            return rng.exponential(p[0], n)
        if self.family == "weibull":
            return p[1] * rng.weibull(p[0], n)
        if self.family == "half_normal":
            return p[0] * np.abs(rng.standard_normal(n))
        return np.full(n, p[0])

    def ppf(self, u):
        p = self.params
        if self.family == "exponential":
            return stats.expon.ppf(u, scale=p[0])
        if self.family == "weibull":
            return stats.weibull_min.ppf(u, p[0], scale=p[1])
        if self.family == "half_normal":
            return stats.halfnorm.ppf(u, scale=p[0])
        return np.full_like(np.asarray(u, dtype=float), p[0])

    def to_dict(self):
        names = {
            "exponential": ("mean",),
            "weibull": ("shape", "scale"),
            "half_normal": ("scale",),
            "fixed": ("value",),
        }[self.family]
        return {"family": self.family, **dict(zip(names, self.params))}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        family = d.pop("family")
        if family == "exponential":
            out = cls.exponential(d.pop("mean", 1.0))
        elif family == "weibull":
            out = cls.weibull(d.pop("shape"), d.pop("scale", 1.0))
        elif family == "half_normal":
            out = cls.half_normal(d.pop("scale", 1.0))
        elif family == "fixed":
            out = cls.fixed(d.pop("value"))
        else:
            raise ValueError(f"unknown jump-size family {family!r}")
        if d:
            raise ValueError(f"unexpected keys for {family}: {sorted(d)}")
        return out


@dataclass(frozen=True)
class JumpComponent:
    rate: float
    direction: str  # "up" or "down"
    size: SizeDistribution

    @property
    def sign(self):
        return 1.0 if self.direction == "up" else -1.0

    def signed_mean(self):
        return self.sign * self.rate * self.size.mean()


@dataclass(frozen=True)
class LevyModel:
    drift: float
    sigma: float = 0.0
    jumps: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "jumps", tuple(self.jumps))

    @classmethod
    def brownian(cls, mu=0.0, sigma=1.0):
        return cls(drift=mu, sigma=sigma)

    @property
    def bounded_variation(self):
        return self.sigma == 0

    @property
    def down_jump_rate(self):
        return sum(j.rate for j in self.jumps if j.direction == "down")

    @property
    def up_jump_rate(self):
        return sum(j.rate for j in self.jumps if j.direction == "up")

    def mean(self):
        """E[X(1)]."""
        return self.drift + sum(j.signed_mean() for j in self.jumps)

    def variance(self):
        """Var[X(1)]: sigma^2 plus sum of rate * E[size^2]."""
        v = self.sigma**2
        for j in self.jumps:
            m = j.size.mean()
            v += j.rate * (j.size.variance() + m * m)
        return v

    def abs_mean_bound(self):
        """Upper bound on E|X(1)| used in truncation-error estimates."""
        return abs(self.drift) + self.sigma * math.sqrt(2 / math.pi) + sum(
            j.rate * j.size.mean() for j in self.jumps
        )

    def to_dict(self):
        return {
            "drift": self.drift,
            "sigma": self.sigma,
            "jumps": [
                {"rate": j.rate, "direction": j.direction, "size": j.size.to_dict()} for j in self.jumps
            ],
        }

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {"drift", "sigma", "jumps"}
        if unknown:
            raise ValueError(f"unknown model keys: {sorted(unknown)}")
        jumps = []
        for jd in d.get("jumps", []):
            extra = set(jd) - {"rate", "direction", "size"}
            if extra:
                raise ValueError(f"unknown jump keys: {sorted(extra)}")
            jumps.append(
                JumpComponent(float(jd["rate"]), jd["direction"], SizeDistribution.from_dict(jd["size"]))
            )
        return cls(float(d.get("drift", 0.0)), float(d.get("sigma", 0.0)), tuple(jumps))


@dataclass(frozen=True, eq=False)
class PiecewiseLinear:
    """Continuous piecewise-linear function on [0, inf) with a linear tail.

    ``knots[0]`` must be 0.  Beyond the last knot the function continues with
    slope ``tail_slope``.  This is the representation the numerical kernels
    consume for payoffs and value-function slices.
    """

    knots: np.ndarray
    values: np.ndarray
    tail_slope: float = 0.0

    def __post_init__(self):
        k = np.ascontiguousarray(self.knots, dtype=float)
        v = np.ascontiguousarray(self.values, dtype=float)
        if k.ndim != 1 or k.shape != v.shape or k.size == 0:
            raise ValueError("knots and values must be equal-length 1-d arrays")
        if k[0] != 0.0 or np.any(np.diff(k) <= 0):
            raise ValueError("knots must start at 0 and increase strictly")
        object.__setattr__(self, "knots", k)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "tail_slope", float(self.tail_slope))

    @property
    def slopes(self):
        """Right-derivative on each knot interval; the tail slope appended last."""
        return np.append(np.diff(self.values) / np.diff(self.knots), self.tail_slope)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.interp(x, self.knots, self.values)
        beyond = x > self.knots[-1]
        return np.where(beyond, self.values[-1] + self.tail_slope * (x - self.knots[-1]), out)

    def right_derivative(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.knots, x, side="right") - 1
        return self.slopes[np.clip(idx, 0, self.knots.size - 1)]

    def kernel_args(self):
        """(knots, values, slopes) as contiguous float arrays."""
        return self.knots, self.values, np.ascontiguousarray(self.slopes)


@dataclass(frozen=True, eq=False)
class PayoffSpec:
    """Terminal payoff ``w`` with its right derivative.

    ``table`` is the piecewise-linear representation used by the simulation
    kernels.  For payoffs built from arbitrary callables it is a tabulation
    on a fine grid; for piecewise-linear payoffs it is exact.
    """

    w: Callable
    w_prime_plus: Callable
    w_prime_inf: float
    table: PiecewiseLinear
    description: str = ""

    @classmethod
    def piecewise_linear(cls, knots, values, tail_slope=0.0, description=""):
        pl = PiecewiseLinear(np.asarray(knots, float), np.asarray(values, float), tail_slope)
        return cls(pl, pl.right_derivative, float(tail_slope), pl, description or "piecewise-linear")

    @classmethod
    def zero(cls):
        return cls.piecewise_linear([0.0], [0.0], 0.0, "zero")

    @classmethod
    def linear(cls, slope, intercept=0.0):
        return cls.piecewise_linear([0.0], [intercept], slope, f"{intercept} + {slope} x")

    @classmethod
    def capped(cls, cap, slope=1.0):
        """w(x) = slope * min(x, cap)."""
        return cls.piecewise_linear([0.0, cap], [0.0, slope * cap], 0.0, f"{slope} min(x, {cap})")

    @classmethod
    def from_callables(cls, w, w_prime_plus, w_prime_inf, upper=50.0, n=4001, description=""):
        grid = np.linspace(0.0, upper, n)
        table = PiecewiseLinear(grid, np.asarray(w(grid), float), w_prime_inf)
        return cls(w, w_prime_plus, float(w_prime_inf), table, description or "tabulated")

    def to_dict(self):
        return {
            "knots": self.table.knots.tolist(),
            "values": self.table.values.tolist(),
            "tail_slope": self.table.tail_slope,
        }


@dataclass(frozen=True)
class ProblemSpec:
    model: LevyModel
    beta: float
    q: float
    r: float
    payoff: PayoffSpec = field(default_factory=PayoffSpec.zero)

    @property
    def alpha(self):
        return self.q + self.r


def validate_model(model: LevyModel) -> list:
    out = []
    if not (math.isfinite(model.drift)):
        out.append(Violation("NONFINITE_DRIFT", f"drift={model.drift}"))
    if not (model.sigma >= 0 and math.isfinite(model.sigma)):
        out.append(Violation("NEGATIVE_SIGMA", f"sigma={model.sigma} must be >= 0"))
    for k, j in enumerate(model.jumps):
        if not (j.rate > 0 and math.isfinite(j.rate)):
            out.append(Violation("NONPOSITIVE_JUMP_RATE", f"jump {k}: rate={j.rate}"))
        if j.direction not in ("up", "down"):
            out.append(Violation("BAD_JUMP_DIRECTION", f"jump {k}: direction={j.direction!r}"))
        problems = j.size.param_problems()
        for p in problems:
            out.append(Violation("BAD_JUMP_PARAMETER", f"jump {k}: {p}"))
        if not problems and not math.isfinite(j.size.mean()):
            out.append(Violation("INFINITE_JUMP_MEAN", f"jump {k}: mean jump size is not finite"))
    if model.sigma == 0 and model.drift == 0:
        out.append(
            Violation("DRIFTLESS_COMPOUND_POISSON", "sigma == 0 and drift == 0: driftless compound Poisson")
        )
    return out


def validate_problem(spec: ProblemSpec, grid_upper=50.0, n_grid=1000, tol=1e-9) -> list:
    out = []
    if not spec.beta > 1:
        out.append(Violation("BETA_NOT_ABOVE_ONE", f"beta={spec.beta} must exceed 1"))
    if not spec.q > 0:
        out.append(Violation("NONPOSITIVE_Q", f"q={spec.q} must be positive"))
    if not spec.r > 0:
        out.append(Violation("NONPOSITIVE_R", f"r={spec.r} must be positive"))
    if out:
        return out
    out.extend(_payoff_violations(spec.payoff, grid_upper, n_grid, tol))
    alpha = spec.alpha
    wp0 = float(np.asarray(spec.payoff.w_prime_plus(np.array([0.0])))[0])
    if wp0 > spec.beta * alpha / spec.r + tol:
        out.append(
            Violation("PAYOFF_SLOPE_AT_ZERO", f"w'_+(0)={wp0} exceeds beta*alpha/r={spec.beta * alpha / spec.r}")
        )
    wpi = spec.payoff.w_prime_inf
    if not (0 <= wpi < alpha / spec.r):
        out.append(
            Violation("PAYOFF_SLOPE_AT_INFINITY", f"w'_+(inf)={wpi} not in [0, alpha/r={alpha / spec.r})")
        )
    return out


def _payoff_violations(payoff: PayoffSpec, upper, n, tol):
    x = np.linspace(0.0, upper, n)
    w = np.asarray(payoff.w(x), dtype=float)
    wp = np.asarray(payoff.w_prime_plus(x), dtype=float)
    out = []
    if np.any(wp < -tol):
        out.append(Violation("PAYOFF_DECREASING", f"w'_+ takes negative value {wp.min()}"))
    if np.any(np.diff(wp) > tol):
        k = int(np.argmax(np.diff(wp)))
        out.append(Violation("PAYOFF_NOT_CONCAVE", f"w'_+ increases near x={x[k]}"))
    # left Riemann sum of a non-increasing derivative overshoots by at most
    # (w'(0) - w'(end)) * dx
    dx = x[1] - x[0]
    recon = w[0] + np.concatenate([[0.0], np.cumsum(wp[:-1] * dx)])
    allow = abs(wp[0] - wp[-1]) * dx + tol * (1.0 + np.abs(w))
    if np.any(np.abs(recon - w) > allow + 1e-9):
        out.append(Violation("PAYOFF_DERIVATIVE_MISMATCH", "integrating w'_+ does not recover w"))
    tail = float(wp[-1])
    if abs(tail - payoff.w_prime_inf) > 1e-6 and tail < payoff.w_prime_inf - tol:
        out.append(Violation("PAYOFF_NOT_CONCAVE", "w'_+ falls below its stated limit at infinity"))
    return out
