"""Seeded Lévy path batches, Skorokhod reflection and first passage.

A :class:`PathBatch` stores per-step increments of the uncontrolled process
on a uniform grid.  Path ``i`` is generated from its own Philox stream keyed
on ``(master_seed, stream, i)``, so a batch is reproducible bit for bit no
matter how many threads build it or in which order.

The reflection helpers work on a single skeleton (1-d increment array) and
are meant for inspection and tests; the estimators in ``single_solver`` use
compiled loops that implement the same recursions over whole batches.
"""

from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import BatchTooLarge, ZeroBarrierUnboundedVariation
from .levy_model import LevyModel

__all__ = [
    "PathBatch",
    "ReflectedPath",
    "ControlledPath",
    "simulate_batch",
    "path_generator",
    "reflect_upper",
    "reflect_double",
    "first_passage",
    "save_batch",
    "load_batch",
    "DEFAULT_MAX_BYTES",
]

DEFAULT_MAX_BYTES = 2 * 1024**3
_MAGIC = b"BOPB0001"
_HEADER = struct.Struct("<8sQQQQdd")


@dataclass(frozen=True, eq=False)
class PathBatch:
    master_seed: int
    n_paths: int
    dt: float
    horizon: float
    increments: np.ndarray  # (n_paths, n_steps), C-contiguous
    stream: int = 0
    # optional within-step extremes of the diffusive part, relative to the step start
    bridge_max: np.ndarray | None = None
    bridge_min: np.ndarray | None = None

    @property
    def bridged(self):
        return self.bridge_max is not None

    def bridge_args(self):
        """(bmax, bmin) for the compiled loops; empty arrays mean grid monitoring."""
        if self.bridge_max is None:
            empty = np.empty((0, 0))
            return empty, empty
        return self.bridge_max, self.bridge_min

    @property
    def n_steps(self):
        return self.increments.shape[1]

    @property
    def times(self):
        return self.dt * np.arange(self.n_steps + 1)

    def path(self, i):
        """Partial sums X(t_k) - X(0) of path ``i`` (length n_steps + 1)."""
        return np.concatenate([[0.0], np.cumsum(self.increments[i])])


@dataclass(frozen=True, eq=False)
class ReflectedPath:
    y: np.ndarray
    b: float


@dataclass(frozen=True, eq=False)
class ControlledPath:
    u: np.ndarray
    l_cum: np.ndarray
    r_cum: np.ndarray
    b: float


def _n_steps(dt, horizon):
    if not (dt > 0 and horizon > 0):
        raise ValueError("dt and horizon must be positive")
    n = int(round(horizon / dt))
    if n < 1 or abs(n * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError(f"horizon {horizon} is not a multiple of dt {dt}")
    return n


def path_generator(master_seed, stream, index):
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(stream), int(index)))
    return np.random.Generator(np.random.Philox(ss))


def _one_path(model: LevyModel, dt, n_steps, rng, bridge=False):
    gauss = np.full(n_steps, model.drift * dt)
    if model.sigma > 0:
        gauss += model.sigma * math.sqrt(dt) * rng.standard_normal(n_steps)
    inc = gauss.copy()
    for jump in model.jumps:
        counts = rng.poisson(jump.rate * dt, n_steps)
        total = int(counts.sum())
        if total:
            sizes = jump.size.sample(rng, total)
            inc += jump.sign * np.bincount(np.repeat(np.arange(n_steps), counts), sizes, n_steps)
    if not bridge:
        return inc, None, None
    # extremes of a Brownian bridge from 0 to gauss over one step; the uniforms
    # are drawn last so the increments match an unbridged batch with the same seed
    spread = 2.0 * model.sigma**2 * dt
    lu = np.log1p(-rng.random(n_steps))
    lv = np.log1p(-rng.random(n_steps))
    hi = 0.5 * (gauss + np.sqrt(gauss**2 - spread * lu))
    lo = 0.5 * (gauss - np.sqrt(gauss**2 - spread * lv))
    return inc, hi, lo


def simulate_batch(
    model: LevyModel,
    dt,
    horizon,
    n_paths,
    master_seed,
    stream=0,
    threads=1,
    max_bytes=DEFAULT_MAX_BYTES,
    bridge=False,
) -> PathBatch:
    """Euler skeletons: drift*dt + sigma*sqrt(dt)*Z + signed Poisson jump sums per step.

    With ``bridge=True`` the batch also carries the maximum and minimum of the
    Brownian part within each step, sampled from the bridge law given its
    endpoint.  Estimators then reflect and detect passages inside steps too,
    which removes the O(sqrt(dt)) bias of grid-only monitoring.  Jumps are
    placed at the end of their step.
    """
    n_steps = _n_steps(dt, horizon)
    n_paths = int(n_paths)
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    need = 8 * n_paths * n_steps * (3 if bridge else 1)
    if need > max_bytes:
        raise BatchTooLarge(
            f"batch needs {need} bytes, budget is {max_bytes}", n_paths=n_paths, n_steps=n_steps
        )
    out = np.empty((n_paths, n_steps))
    bmax = np.empty((n_paths, n_steps)) if bridge else None
    bmin = np.empty((n_paths, n_steps)) if bridge else None

    def fill(lo, hi):
        for i in range(lo, hi):
            inc, top, bot = _one_path(model, dt, n_steps, path_generator(master_seed, stream, i), bridge)
            out[i] = inc
            if bridge:
                bmax[i], bmin[i] = top, bot

    threads = max(1, int(threads or 1))
    if threads == 1:
        fill(0, n_paths)
    else:
        edges = np.linspace(0, n_paths, threads + 1).astype(int)
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(fill, edges[:-1], edges[1:]))
    return PathBatch(int(master_seed), n_paths, float(dt), float(horizon), out, int(stream), bmax, bmin)


def reflect_upper(increments, x0, b) -> ReflectedPath:
    """y_k = x_k - max(0, max_{j<=k}(x_j - b)), x_k = x0 + partial sums."""
    x = x0 + np.concatenate([[0.0], np.cumsum(increments)])
    if math.isinf(b):
        return ReflectedPath(x, b)
    push = np.maximum.accumulate(np.maximum(x - b, 0.0))
    return ReflectedPath(x - push, b)


def reflect_double(increments, x0, b, model: LevyModel | None = None) -> ControlledPath:
    """Discrete Skorokhod recursion on [0, b].

    Starts at U(0-) = x0 with a lump dividend (x0 > b) or injection (x0 < 0),
    then u <- u + dX followed by a push down to b or up to 0.  ``b`` may be
    ``inf`` for reflection at 0 only.
    """
    if b < 0:
        raise ValueError("barrier must be non-negative")
    if b == 0 and model is not None and not model.bounded_variation:
        raise ZeroBarrierUnboundedVariation("b = 0 is not admissible when sigma > 0")
    n = len(increments)
    u = np.empty(n + 1)
    l_cum = np.empty(n + 1)
    r_cum = np.empty(n + 1)
    L = max(x0 - b, 0.0)
    R = max(-x0, 0.0)
    cur = min(max(x0, 0.0), b)
    u[0], l_cum[0], r_cum[0] = cur, L, R
    for k in range(n):
        cur = cur + increments[k]
        if cur > b:
            L += cur - b
            cur = b
        elif cur < 0.0:
            R -= cur
            cur = 0.0
        u[k + 1], l_cum[k + 1], r_cum[k + 1] = cur, L, R
    return ControlledPath(u, l_cum, r_cum, b)


def first_passage(reflected, a, strict=True):
    """First grid index with y < a (y <= a if not strict); ``None`` means never."""
    y = reflected.y if isinstance(reflected, ReflectedPath) else np.asarray(reflected)
    hit = (y < a) if strict else (y <= a)
    idx = int(np.argmax(hit))
    return idx if hit[idx] else None


def save_batch(batch: PathBatch, path):
    header = _HEADER.pack(
        _MAGIC, batch.master_seed & (2**64 - 1), batch.n_paths, batch.n_steps, batch.stream, batch.dt, batch.horizon
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(batch.increments, dtype="<f8").tobytes())


def load_batch(path) -> PathBatch:
    with open(path, "rb") as fh:
        magic, seed, m, n, stream, dt, horizon = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a path-batch dump")
        body = np.frombuffer(fh.read(), dtype="<f8")
    if body.size != m * n:
        raise ValueError(f"{path}: expected {m * n} values, found {body.size}")
    return PathBatch(int(seed), int(m), dt, horizon, body.reshape(m, n).astype(float), int(stream))
