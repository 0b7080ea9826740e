"""Regime-switching (Markov additive) layer.

A :class:`MapModel` couples per-state Lévy models through a finite Markov
chain with generator ``Q``, state-dependent discount rates and optional
jumps at regime switches.  Value functions live on a shared knot grid as
piecewise-linear concave slices with a linear tail (:class:`ValueGrid`).

Between switches the problem in state i is a single-regime problem with
discount q_disc(i), killing rate q_i = -Q[i, i] and terminal payoff
ĥf(., i), the expected continuation value after the switch.  So T_b and
Gamma reduce to ``single_solver`` calls on one path batch per state, reused
across all iterations.

Because T_b is affine in f and the transform ĥ is linear, the value V_b of a
fixed barrier vector (the fixed point of T_b) is obtained in-sample by one
linear solve over discounted occupation weights; this is the
policy-evaluation step of the default iteration scheme.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import isotonic_regression

from . import _kernels
from .errors import ClassDViolation, MaxIterExceeded, ValidationError
from .levy_model import (
    LevyModel,
    PayoffSpec,
    PiecewiseLinear,
    ProblemSpec,
    SizeDistribution,
    Violation,
    validate_model,
)
from .path_engine import DEFAULT_MAX_BYTES, PathBatch, _n_steps, _one_path, path_generator, simulate_batch
from .single_solver import Z95, estimate_value, solve_bstar

__all__ = [
    "SwitchJump",
    "MapModel",
    "ValueGrid",
    "IterationRow",
    "IterationTrace",
    "MapPaths",
    "make_knots",
    "validate_map",
    "contraction_constant",
    "concave_projection",
    "hat_transform",
    "hat_grid",
    "state_problem",
    "simulate_state_batches",
    "apply_T",
    "apply_Gamma",
    "policy_evaluate",
    "fixed_point_iterate",
    "bounds_init",
    "simulate_map",
    "map_barrier_value",
    "barrier_sweep",
    "write_csv",
    "trace_rows",
    "value_grid_rows",
]

QUAD_NODES = 256


@dataclass(frozen=True)
class SwitchJump:
    """Law F_ij of the jump at a switch: ``none`` (point mass at 0), ``up`` or ``down``."""

    direction: str = "none"
    size: SizeDistribution | None = None

    def __post_init__(self):
        if self.direction not in ("none", "up", "down"):
            raise ValueError(f"bad switch-jump direction {self.direction!r}")
        if self.direction != "none" and self.size is None:
            raise ValueError("a directed switch jump needs a size distribution")

    @property
    def sign(self):
        return {"none": 0.0, "up": 1.0, "down": -1.0}[self.direction]

    def mean_abs(self):
        return 0.0 if self.direction == "none" else self.size.mean()

    def nodes(self, n=QUAD_NODES):
        """Quadrature (points, weights) for integrals against F_ij.

        Discrete laws are exact.  Continuous laws use Gauss-Legendre in the
        probability variable u, y = F^{-1}(u), so the weights sum to one.
        """
        if self.direction == "none":
            return np.zeros(1), np.ones(1)
        if self.size.family == "fixed":
            return np.array([self.sign * self.size.params[0]]), np.ones(1)
        t, w = np.polynomial.legendre.leggauss(n)
        u = 0.5 * (t + 1.0)
        return self.sign * self.size.ppf(u), 0.5 * w

    def sample(self, rng, n=1):
        if self.direction == "none":
            return np.zeros(n)
        return self.sign * self.size.sample(rng, n)

    def to_dict(self):
        if self.direction == "none":
            return {"direction": "none"}
        return {"direction": self.direction, **self.size.to_dict()}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        direction = d.pop("direction", "none")
        if direction == "none":
            if d:
                raise ValueError(f"unexpected switch-jump keys {sorted(d)}")
            return cls()
        return cls(direction, SizeDistribution.from_dict(d))


@dataclass(frozen=True, eq=False)
class MapModel:
    models: tuple
    generator: np.ndarray
    q_disc: np.ndarray
    beta: float
    switch_jumps: tuple = ()  # S x S nested tuples of SwitchJump; empty means no jumps

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "generator", np.array(self.generator, dtype=float))
        object.__setattr__(self, "q_disc", np.array(self.q_disc, dtype=float).ravel())
        object.__setattr__(self, "beta", float(self.beta))
        s = len(self.models)
        if self.switch_jumps:
            jumps = tuple(tuple(row) for row in self.switch_jumps)
        else:
            jumps = tuple(tuple(SwitchJump() for _ in range(s)) for _ in range(s))
        object.__setattr__(self, "switch_jumps", jumps)

    @property
    def n_states(self):
        return len(self.models)

    @property
    def switch_rates(self):
        """q_i = sum of off-diagonal rates of row i."""
        off = self.generator - np.diag(np.diag(self.generator))
        return off.sum(axis=1)

    @property
    def alpha(self):
        return self.q_disc + self.switch_rates

    def transition_probs(self):
        off = self.generator - np.diag(np.diag(self.generator))
        q = off.sum(axis=1, keepdims=True)
        return np.divide(off, q, out=np.zeros_like(off), where=q > 0)

    def to_dict(self):
        return {
            "models": [m.to_dict() for m in self.models],
            "generator": self.generator.tolist(),
            "q_disc": self.q_disc.tolist(),
            "beta": self.beta,
            "switch_jumps": [[j.to_dict() for j in row] for row in self.switch_jumps],
        }


def validate_map(m: MapModel) -> list:
    out = []
    s = m.n_states
    if s < 1:
        return [Violation("EMPTY_STATE_SPACE", "at least one state is required")]
    for i, model in enumerate(m.models):
        for v in validate_model(model):
            out.append(Violation(v.code, f"state {i}: {v.message}"))
    Q = m.generator
    if Q.shape != (s, s):
        return out + [Violation("BAD_GENERATOR", f"generator shape {Q.shape} != ({s}, {s})")]
    if not np.all(np.isfinite(Q)):
        out.append(Violation("BAD_GENERATOR", "generator has non-finite entries"))
    off = Q - np.diag(np.diag(Q))
    if np.any(off < 0):
        out.append(Violation("BAD_GENERATOR", "off-diagonal rates must be non-negative"))
    if np.any(np.abs(Q.sum(axis=1)) > 1e-9 * (1 + np.abs(Q).max())):
        out.append(Violation("BAD_GENERATOR", "generator rows must sum to zero"))
    if np.any(m.switch_rates <= 0):
        bad = np.flatnonzero(m.switch_rates <= 0).tolist()
        out.append(Violation("ABSORBING_STATE", f"states {bad} have no outgoing rate"))
    if m.q_disc.shape != (s,) or np.any(~(m.q_disc > 0)):
        out.append(Violation("NONPOSITIVE_Q", "q_disc must be positive in every state"))
    if not m.beta > 1:
        out.append(Violation("BETA_NOT_ABOVE_ONE", f"beta={m.beta} must exceed 1"))
    if len(m.switch_jumps) != s or any(len(row) != s for row in m.switch_jumps):
        out.append(Violation("BAD_SWITCH_JUMPS", "switch jumps must form an S x S table"))
    else:
        for i in range(s):
            for j in range(s):
                jump = m.switch_jumps[i][j]
                if jump.direction == "none":
                    continue
                for p in jump.size.param_problems():
                    out.append(Violation("BAD_JUMP_PARAMETER", f"switch jump {i}->{j}: {p}"))
                if not math.isfinite(jump.size.mean()):
                    out.append(Violation("INFINITE_JUMP_MEAN", f"switch jump {i}->{j} has infinite mean"))
    return out


def _require_valid(m):
    problems = validate_map(m)
    if problems:
        raise ValidationError(problems)


def contraction_constant(m: MapModel):
    """K = max_i q_i / (q_i + q_disc(i)), the discount expected up to the first switch."""
    q = m.switch_rates
    return float(np.max(q / (q + m.q_disc)))


def make_knots(upper, n=101, power=1.5):
    """Shared grid on [0, upper], denser near 0 (x_k = upper * (k/n)^power)."""
    if not upper > 0 or n < 2:
        raise ValueError("need upper > 0 and at least two knots")
    return upper * (np.arange(n) / (n - 1)) ** power


@dataclass(frozen=True, eq=False)
class ValueGrid:
    knots: np.ndarray
    values: np.ndarray  # (n_states, n_knots)
    tail_slope: np.ndarray  # (n_states,)

    def __post_init__(self):
        k = np.ascontiguousarray(self.knots, dtype=float)
        v = np.array(self.values, dtype=float, ndmin=2)
        t = np.array(self.tail_slope, dtype=float).ravel()
        if k[0] != 0.0 or np.any(np.diff(k) <= 0):
            raise ValueError("knots must start at 0 and increase strictly")
        if v.shape[1] != k.size or t.size != v.shape[0]:
            raise ValueError("values must be (n_states, n_knots) and tail_slope (n_states,)")
        object.__setattr__(self, "knots", k)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "tail_slope", t)

    @classmethod
    def affine(cls, knots, intercepts, slope=1.0):
        """f(x, i) = intercepts[i] + slope * x."""
        knots = np.asarray(knots, float)
        c = np.asarray(intercepts, float).ravel()
        return cls(knots, c[:, None] + slope * knots[None, :], np.full(c.size, float(slope)))

    @property
    def n_states(self):
        return self.values.shape[0]

    def table(self, i) -> PiecewiseLinear:
        return PiecewiseLinear(self.knots, self.values[i], self.tail_slope[i])

    def __call__(self, x, i):
        return self.table(i)(x)

    def slopes(self):
        """(n_states, n_knots): interval slopes with the tail slope appended."""
        d = np.diff(self.values, axis=1) / np.diff(self.knots)[None, :]
        return np.concatenate([d, self.tail_slope[:, None]], axis=1)

    def sup_norm(self):
        return float(np.max(np.abs(self.values)))

    def b_norm(self):
        """max_i sup_x |f(x,i)| / (1 + x); the linear tail keeps it finite."""
        on_grid = np.max(np.abs(self.values) / (1.0 + self.knots[None, :]))
        return float(max(on_grid, np.max(np.abs(self.tail_slope))))

    def is_concave(self, tol=1e-12):
        return bool(np.all(np.diff(self.slopes(), axis=1) <= tol))

    def project(self, beta):
        vals = np.empty_like(self.values)
        tails = np.empty_like(self.tail_slope)
        for i in range(self.n_states):
            vals[i], tails[i] = concave_projection(self.knots, self.values[i], self.tail_slope[i], beta)
        return ValueGrid(self.knots, vals, tails)

    def distance(self, other):
        return float(np.max(np.abs(self.values - other.values)))


def concave_projection(knots, values, tail_slope, beta):
    """Closest concave piecewise-linear slice with slopes in [0, beta].

    Knot slopes are fitted by a non-increasing isotonic regression weighted
    by interval length; the tail slope takes part with a dominant weight so
    it is essentially kept.  f(0) is preserved.
    """
    dx = np.diff(knots)
    slopes = np.append(np.diff(values) / dx, tail_slope)
    weights = np.append(dx, 1e6 * max(knots[-1], 1.0))
    fitted = isotonic_regression(slopes, weights=weights, increasing=False).x
    fitted = np.clip(fitted, 0.0, beta)
    out = values[0] + np.concatenate([[0.0], np.cumsum(fitted[:-1] * dx)])
    return out, float(fitted[-1])


def _hat_linear(m: MapModel, knots, tail_slopes, n_nodes=QUAD_NODES):
    """ĥ as an affine map on the stacked knot values: ĥf = H f + h0 (unprojected).

    Also returns the tail slope of ĥf per state.
    """
    s, n = m.n_states, knots.size
    H = np.zeros((s * n, s * n))
    h0 = np.zeros(s * n)
    P = m.transition_probs()
    top = knots[-1]
    hat_tail = np.zeros(s)
    for i in range(s):
        for j in range(s):
            if i == j or P[i, j] == 0:
                continue
            y, w = m.switch_jumps[i][j].nodes(n_nodes)
            w = P[i, j] * w
            hat_tail[i] += P[i, j] * tail_slopes[j]
            z = knots[:, None] + y[None, :]  # (n, nodes)
            rows = i * n + np.arange(n)
            col0 = j * n
            below = z <= 0
            inside = (z > 0) & (z <= top)
            above = z > top
            # below 0: beta * z + f(0, j)
            h0[rows] += (w[None, :] * np.where(below, m.beta * z, 0.0)).sum(axis=1)
            H[rows, col0] += (w[None, :] * below).sum(axis=1)
            # above the grid: f(top, j) + tail_j * (z - top)
            h0[rows] += (w[None, :] * np.where(above, tail_slopes[j] * (z - top), 0.0)).sum(axis=1)
            H[rows, col0 + n - 1] += (w[None, :] * above).sum(axis=1)
            # inside: linear interpolation
            idx = np.clip(np.searchsorted(knots, z, side="right") - 1, 0, n - 2)
            frac = (z - knots[idx]) / (knots[idx + 1] - knots[idx])
            wl = np.where(inside, w[None, :] * (1.0 - frac), 0.0)
            wr = np.where(inside, w[None, :] * frac, 0.0)
            for r in range(n):
                np.add.at(H[rows[r]], col0 + idx[r], wl[r])
                np.add.at(H[rows[r]], col0 + idx[r] + 1, wr[r])
    return H, h0, np.clip(hat_tail, 0.0, m.beta)


def hat_grid(f: ValueGrid, m: MapModel, project=True):
    """ĥf for every state as a :class:`ValueGrid` on f's knots.

    Returns ``(grid, displacement)`` where ``displacement`` is the largest
    change made by the concavity projection.
    """
    H, h0, tail = _hat_linear(m, f.knots, f.tail_slope)
    raw = ValueGrid(f.knots, (H @ f.values.ravel() + h0).reshape(f.values.shape), tail)
    if not project:
        return raw, 0.0
    proj = raw.project(m.beta)
    return proj, proj.distance(raw)


def hat_transform(f: ValueGrid, m: MapModel, i) -> PiecewiseLinear:
    """ĥf(., i) as a projected concave piecewise-linear slice."""
    return hat_grid(f, m)[0].table(i)


def state_problem(m: MapModel, i, payoff: PayoffSpec) -> ProblemSpec:
    """Single-regime problem solved in state i between switches."""
    return ProblemSpec(m.models[i], m.beta, float(m.q_disc[i]), float(m.switch_rates[i]), payoff)


def simulate_state_batches(m: MapModel, dt, horizon, n_paths, master_seed, threads=1, bridge=False,
                           max_bytes=DEFAULT_MAX_BYTES):
    """One path batch per state (stream = state index), generated once and reused."""
    return [
        simulate_batch(model, dt, horizon, n_paths, master_seed, stream=i, threads=threads,
                       bridge=bridge, max_bytes=max_bytes)
        for i, model in enumerate(m.models)
    ]


def _payoff(table: PiecewiseLinear):
    return PayoffSpec.piecewise_linear(table.knots, table.values, table.tail_slope, "continuation value")


def _class_d_check(hat: ValueGrid, displacement, m, f, projection_tol):
    slopes = hat.slopes()
    scale = projection_tol * (1.0 + f.sup_norm())
    problems = []
    if displacement > scale:
        problems.append(f"concavity projection moved ĥf by {displacement:.3g} > {scale:.3g}")
    if np.any(slopes[:, 0] > m.beta + 1e-12):
        problems.append("ĥf'(0+) exceeds beta")
    if np.any((hat.tail_slope < 0) | (hat.tail_slope > 1 + 1e-12)):
        problems.append(f"ĥf tail slope {hat.tail_slope.tolist()} outside [0, 1]")
    if problems:
        raise ClassDViolation("; ".join(problems))


@dataclass(frozen=True, eq=False)
class TResult:
    grid: ValueGrid
    half_width: np.ndarray  # (n_states, n_knots)


def apply_T(b_vec, f: ValueGrid, m: MapModel, batches, project=True, hat=None) -> TResult:
    """T_b f on f's knots: state-wise NPV with payoff ĥf(., i), killing rate q_i.

    Above the barrier the output is exactly (x - b_i) + (T_b f)(b_i, i), so
    the tail slope is one.
    """
    b_vec = np.asarray(b_vec, dtype=float)
    if hat is None:
        hat, _ = hat_grid(f, m)
    knots = f.knots
    vals = np.empty_like(f.values)
    hws = np.empty_like(f.values)
    for i in range(m.n_states):
        b = float(b_vec[i])
        spec = state_problem(m, i, _payoff(hat.table(i)))
        inside = knots[knots < b]
        est = estimate_value(spec, b, np.append(inside, b), batches[i], control_variate=False)
        k = inside.size
        vals[i, :k], hws[i, :k] = est.value[:k], est.half_width[:k]
        vals[i, k:] = est.value[k] + (knots[k:] - b)
        hws[i, k:] = est.half_width[k]
    out = ValueGrid(knots, vals, np.ones(m.n_states))
    return TResult(out.project(m.beta) if project else out, hws)


def policy_evaluate(b_vec, m: MapModel, batches, knots, with_ci=False):
    """In-sample value V_b of the barrier vector b: the fixed point of T_b.

    Solves V = a + A V, where a holds the dividend/injection averages and A
    the occupation weights composed with ĥ.  With ``with_ci`` the returned
    half widths are those of T_b V_b on the batch.
    """
    b_vec = np.asarray(b_vec, dtype=float)
    knots = np.asarray(knots, dtype=float)
    s, n = m.n_states, knots.size
    if np.any(b_vec > knots[-1]):
        raise ValueError("barriers must lie inside the knot grid")
    H, h0, _ = _hat_linear(m, knots, np.ones(s))
    A = np.zeros((s * n, s * n))
    a = np.zeros(s * n)
    alpha = m.alpha
    rates = m.switch_rates
    for i in range(s):
        b = float(b_vec[i])
        inside = knots[knots < b]
        starts = np.append(inside, b)
        batch = batches[i]
        div, inj, occ = _kernels.occupation_sums(
            batch.increments, batch.dt, starts, b, float(alpha[i]), knots, *batch.bridge_args()
        )
        k = inside.size
        base = div - m.beta * inj
        rows_hat = H[i * n:(i + 1) * n]  # ĥ rows of state i
        coef = rates[i] * occ @ rows_hat  # (n_starts, s*n)
        const = base + rates[i] * occ @ h0[i * n:(i + 1) * n]
        for r in range(n):
            src = r if r < k else k
            A[i * n + r] = coef[src]
            a[i * n + r] = const[src] + (knots[r] - b if r >= k else 0.0)
    values = np.linalg.solve(np.eye(s * n) - A, a).reshape(s, n)
    grid = ValueGrid(knots, values, np.ones(s))
    if not with_ci:
        return grid, None
    hw = apply_T(b_vec, grid, m, batches, project=False, hat=hat_grid(grid, m, project=False)[0]).half_width
    return grid, hw


def _solve_barriers(hat, m, batches, bisect_tol, b_max, hints):
    b_new, brackets = [], []
    for i in range(m.n_states):
        spec = state_problem(m, i, _payoff(hat.table(i)))
        sol = solve_bstar(spec, batches[i], tol_b=bisect_tol, b_max=b_max,
                          bracket_hint=None if hints is None else hints[i])
        b_new.append(sol.b_star)
        brackets.append(sol.bracket if sol.bracket[1] > sol.bracket[0] else None)
    return np.array(b_new), brackets


def apply_Gamma(f: ValueGrid, m: MapModel, batches, bisect_tol=1e-10, b_max=None, hints=None,
                projection_tol=0.05):
    """Gamma f = T_{b(f)} f with b(f)(i) the candidate barrier for payoff ĥf(., i).

    Returns (T result, barrier vector, brackets).
    """
    hat, disp = hat_grid(f, m)
    _class_d_check(hat, disp, m, f, projection_tol)
    b_max = f.knots[-1] if b_max is None else b_max
    b_vec, brackets = _solve_barriers(hat, m, batches, bisect_tol, b_max, hints)
    return apply_T(b_vec, f, m, batches, hat=hat), b_vec, brackets


@dataclass(frozen=True)
class IterationRow:
    n: int
    b: tuple
    sup_step: float
    barrier_step: float


@dataclass
class IterationTrace:
    K: float
    scheme: str
    rows: list = field(default_factory=list)

    @property
    def barriers(self):
        return np.array([r.b for r in self.rows])

    def barrier_steps(self):
        return np.array([r.barrier_step for r in self.rows if math.isfinite(r.barrier_step)])

    def step_ratios(self):
        """Ratios of successive barrier steps (zero steps end the sequence)."""
        steps = self.barrier_steps()
        out = []
        for a, b in zip(steps[:-1], steps[1:]):
            if a == 0:
                break
            out.append(b / a)
        return np.array(out)


def fixed_point_iterate(m: MapModel, f0: ValueGrid, batches, tol=1e-3, max_iter=20, scheme="policy",
                        b0=None, bisect_tol=1e-10, b_max=None, projection_tol=0.05):
    """Iterate barriers and values until both settle.

    ``scheme="value"`` is plain value iteration f_{n+1} = Gamma f_n.
    ``scheme="policy"`` replaces T_{b_{n+1}} f_n by the in-sample fixed point
    V_{b_{n+1}} (then projected to the concave cone), so each step evaluates
    the current barriers exactly.  Stops when the barrier movement is at
    most ``tol`` and the sup-norm step is at most ``tol * (1 + |f|)``.
    """
    if scheme not in ("policy", "value"):
        raise ValueError("scheme must be 'policy' or 'value'")
    _require_valid(m)
    K = contraction_constant(m)
    trace = IterationTrace(K, scheme)
    b_prev = None if b0 is None else np.asarray(b0, dtype=float)
    if b_prev is not None:
        trace.rows.append(IterationRow(0, tuple(b_prev.tolist()), math.nan, math.nan))
    f = f0
    hints = None
    for n in range(1, max_iter + 1):
        hat, disp = hat_grid(f, m)
        _class_d_check(hat, disp, m, f, projection_tol)
        b_new, brackets = _solve_barriers(hat, m, batches, bisect_tol,
                                          f.knots[-1] if b_max is None else b_max, hints)
        hints = brackets
        if scheme == "policy":
            f_new = policy_evaluate(b_new, m, batches, f.knots)[0].project(m.beta)
        else:
            f_new = apply_T(b_new, f, m, batches, hat=hat).grid
        step = f_new.distance(f)
        b_step = math.inf if b_prev is None else float(np.max(np.abs(b_new - b_prev)))
        trace.rows.append(IterationRow(n, tuple(b_new.tolist()), step, b_step))
        f, b_prev = f_new, b_new
        if b_step <= tol and step <= tol * (1.0 + f.sup_norm()):
            return f, b_new, trace
    raise MaxIterExceeded(f"no convergence within {max_iter} iterations", trace=trace)


def initial_guess(m: MapModel, batches, knots=None, bisect_tol=1e-6):
    """Per-state barriers for the identity continuation f(x, i) = x."""
    probe = np.linspace(0.0, 50.0, 3) if knots is None else knots
    f = ValueGrid.affine(probe, np.zeros(m.n_states))
    hat, _ = hat_grid(f, m)
    b, _ = _solve_barriers(hat, m, batches, bisect_tol, 1e3, None)
    return b


@dataclass(frozen=True, eq=False)
class MapPaths:
    """Markov-modulated skeletons started in ``initial_state``.

    ``states[p, k]`` is the regime at t_k, ``lam[p, k]`` the accumulated
    discount sum of q_disc(H) dt up to t_k, ``increments[p, k]`` the
    increment over step k of the regime active at t_k plus switch jumps.
    """

    master_seed: int
    dt: float
    horizon: float
    initial_state: int
    increments: np.ndarray
    states: np.ndarray
    lam: np.ndarray
    n_switches: np.ndarray

    @property
    def n_paths(self):
        return self.increments.shape[0]


def simulate_map(m: MapModel, dt, horizon, n_paths, master_seed, initial_state=0,
                 max_bytes=DEFAULT_MAX_BYTES) -> MapPaths:
    """Embedded-chain simulation on the time grid.

    Per-state noise for path p comes from the same Philox streams as
    :func:`simulate_state_batches`, so with a single state the increments
    coincide with ``simulate_batch(model, ..., stream=0)``.  Holding times
    and switch jumps use a separate stream per initial state.
    """
    _require_valid_or_single(m)
    n_steps = _n_steps(dt, horizon)
    s = m.n_states
    need = 8 * n_paths * n_steps * 2 + 8 * n_paths * (n_steps + 1) * 2
    if need > max_bytes:
        from .errors import BatchTooLarge

        raise BatchTooLarge(f"map paths need {need} bytes, budget is {max_bytes}")
    incr = np.empty((n_paths, n_steps))
    states = np.empty((n_paths, n_steps + 1), dtype=np.int64)
    lam = np.empty((n_paths, n_steps + 1))
    n_sw = np.zeros(n_paths, dtype=np.int64)
    rates = m.switch_rates
    P = m.transition_probs()
    for p in range(n_paths):
        per_state = np.stack([
            _one_path(model, dt, n_steps, path_generator(master_seed, i, p))[0]
            for i, model in enumerate(m.models)
        ])
        rng = path_generator(master_seed, s + int(initial_state), p)
        st = np.empty(n_steps + 1, dtype=np.int64)
        jump = np.zeros(n_steps)
        cur, t = int(initial_state), 0.0
        k0 = 0
        while True:
            if rates[cur] <= 0:
                st[k0:] = cur
                break
            t += rng.exponential(1.0 / rates[cur])
            # switch in step k: t_k < t <= t_{k+1}
            k = int(math.ceil(t / dt)) - 1
            if k >= n_steps:
                st[k0:] = cur
                break
            nxt = int(rng.choice(s, p=P[cur]))
            st[k0:k + 1] = cur
            jump[k] += m.switch_jumps[cur][nxt].sample(rng, 1)[0]
            n_sw[p] += 1
            cur, k0 = nxt, k + 1
        states[p] = st
        incr[p] = per_state[st[:-1], np.arange(n_steps)] + jump
        lam[p, 0] = 0.0
        lam[p, 1:] = np.cumsum(m.q_disc[st[:-1]] * dt)
    return MapPaths(int(master_seed), float(dt), float(horizon), int(initial_state), incr, states, lam, n_sw)


def _require_valid_or_single(m):
    problems = [v for v in validate_map(m) if not (m.n_states == 1 and v.code == "ABSORBING_STATE")]
    if problems:
        raise ValidationError(problems)


def map_barrier_value(paths: MapPaths, m: MapModel, b_vec, x0=0.0):
    """Direct MC value of a Markov-modulated barrier strategy: (mean, half_width)."""
    b_vec = np.ascontiguousarray(b_vec, dtype=float)
    div, inj = _kernels.map_controlled_sums(paths.increments, paths.states, paths.lam, b_vec, float(x0))
    total = div - m.beta * inj
    return float(total.mean()), float(Z95 * total.std(ddof=1) / math.sqrt(total.size))


def bounds_init(m: MapModel, batches, knots, map_paths, b_feasible=None):
    """(V_minus, V_plus) with V_minus = x + c_i and V_plus = x + E[int e^{-Lambda} d running max].

    c_i is the in-sample value at 0 of a feasible barrier vector (the
    state-wise barriers for the identity continuation unless given);
    ``map_paths`` holds one :class:`MapPaths` per initial state.
    """
    if b_feasible is None:
        b_feasible = initial_guess(m, batches, knots)
    v_b, _ = policy_evaluate(b_feasible, m, batches, knots)
    lower = ValueGrid.affine(knots, v_b.values[:, 0])
    upper_c = np.array([
        float(np.mean(_kernels.running_max_sums(p.increments, p.lam))) for p in map_paths
    ])
    return lower, ValueGrid.affine(knots, upper_c)


def barrier_sweep(m: MapModel, batches, knots, b_star, state, b_grid, x=0.0, method="policy", map_paths=None):
    """V_b(x, state) with b(state) swept over ``b_grid`` and the others fixed at ``b_star``.

    ``method="policy"`` evaluates each barrier vector on the per-state
    batches (the estimator the iteration uses); ``method="direct"``
    simulates the controlled regime-switching surplus on ``map_paths``
    started in ``state``, which is truncated at the simulation horizon.
    Both reuse the same paths for every barrier.  Returns rows
    (swept, fixed..., value, ci_half).
    """
    b_star = np.asarray(b_star, dtype=float)
    if method not in ("policy", "direct"):
        raise ValueError("method must be 'policy' or 'direct'")
    if method == "direct" and (map_paths is None or map_paths.initial_state != state):
        raise ValueError("direct sweep needs map paths started in the swept state")
    rows = []
    for bv in np.asarray(b_grid, dtype=float):
        b = b_star.copy()
        b[state] = bv
        if method == "policy":
            grid, hw = policy_evaluate(b, m, batches, knots, with_ci=True)
            val = float(grid(x, state))
            ci = float(np.interp(x, knots, hw[state]))
        else:
            val, ci = map_barrier_value(map_paths, m, b, x)
        rows.append((bv, *np.delete(b, state).tolist(), val, ci))
    return np.array(rows)


def _fmt(v):
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return "%.17g" % float(v)


def write_csv(path, header, rows):
    """RFC-4180 CSV with 17 significant digits for floats."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if not isinstance(v, str) else v for v in row])


def trace_rows(trace: IterationTrace, n_states):
    header = ["n"] + [f"b_{i}" for i in range(n_states)] + ["sup_step", "barrier_step", "K"]
    rows = [[r.n, *r.b, r.sup_step, r.barrier_step, trace.K] for r in trace.rows]
    return header, rows


def value_grid_rows(grid: ValueGrid, half_width=None):
    header = ["state", "x", "value"] + (["ci_half"] if half_width is not None else [])
    rows = []
    for i in range(grid.n_states):
        for k, x in enumerate(grid.knots):
            row = [i, x, grid.values[i, k]]
            if half_width is not None:
                row.append(half_width[i, k])
            rows.append(row)
    return header, rows
