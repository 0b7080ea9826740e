"""Compiled per-path loops.

All kernels take a C-contiguous ``(n_paths, n_steps)`` increment matrix and
write one result per path (or per start/path pair), so any reduction is left
to the caller and is independent of the number of worker threads.

Piecewise-linear functions enter as ``(knots, values, slopes)`` where
``slopes[-1]`` is the tail slope beyond the last knot.
"""

import math

import numpy as np
from numba import njit, prange


@njit(cache=True)
def _locate(x, knots):
    # largest i with knots[i] <= x, clipped to [0, n-1]
    lo = 0
    hi = knots.shape[0] - 1
    if x >= knots[hi]:
        return hi
    if x < knots[0]:
        return 0
    while hi - lo > 1:
        mid = (lo + hi) >> 1
        if knots[mid] <= x:
            lo = mid
        else:
            hi = mid
    return lo


@njit(cache=True)
def pl_eval(x, knots, values, slopes):
    i = _locate(x, knots)
    return values[i] + slopes[i] * (x - knots[i])


@njit(cache=True)
def pl_rderiv(x, knots, slopes):
    return slopes[_locate(x, knots)]


@njit(cache=True)
def step_weight(alpha, dt):
    """Integral of exp(-alpha t) over one step of length dt."""
    if alpha == 0.0:
        return dt
    return -math.expm1(-alpha * dt) / alpha


@njit(cache=True)
def _bridge_push(u, b, hi, lo):
    # within-step pushes from the diffusive extremes (hi >= 0 >= lo, relative
    # to the step start); returns new u, dividend, injection
    d = 0.0
    j = 0.0
    if u + hi > b:
        d = u + hi - b
        u -= d
    if u + lo < 0.0:
        j = -(u + lo)
        u += j
    return u, d, j


N_CHUNKS = 64


@njit(cache=True)
def _init_state(x, b):
    # lump at t=0: returns (u, dividend, injection)
    if x > b:
        return b, x - b, 0.0
    if x < 0.0:
        return 0.0, 0.0, -x
    return x, 0.0, 0.0


@njit(cache=True)
def _step(u, b, inc, hi, lo, bridge):
    # one step of the discrete Skorokhod map; returns u, mid-step and end-of-step pushes
    dm = 0.0
    jm = 0.0
    if bridge:
        u, dm, jm = _bridge_push(u, b, hi, lo)
    u += inc
    de = 0.0
    je = 0.0
    if u > b:
        de = u - b
        u = b
    elif u < 0.0:
        je = -u
        u = 0.0
    return u, dm, jm, de, je


@njit(cache=True)
def _occ_add(occ, row, u, grid, w):
    n_grid = grid.shape[0]
    i = _locate(u, grid)
    if i >= n_grid - 1:
        occ[row, n_grid - 1] += w
    else:
        h = (u - grid[i]) / (grid[i + 1] - grid[i])
        occ[row, i] += w * (1.0 - h)
        occ[row, i + 1] += w * h


@njit(parallel=True, cache=True)
def double_reflect_sums(incr, dt, starts, b, alpha, knots, values, slopes, bmax, bmin):
    """Discounted dividend, injection and running-payoff sums per (start, path).

    Dividends/injections at step k+1 are discounted by exp(-alpha t_{k+1});
    the lump at t=0 has weight one.  The running payoff integral uses the
    left-point value on each step with the exact discount weight.

    When ``bmax``/``bmin`` are non-empty they hold the extremes of the
    diffusive part within each step; pushes they trigger are booked at the
    step midpoint before the end-of-step increment is applied.

    Paths from different starts share increments and stay ordered, so once
    the lowest and highest coincide all of them do; the common remainder is
    then computed once and added to every start.
    """
    n_paths, n_steps = incr.shape
    n_starts = starts.shape[0]
    bridge = bmax.shape[0] > 0
    div = np.zeros((n_starts, n_paths))
    inj = np.zeros((n_starts, n_paths))
    run = np.zeros((n_starts, n_paths))
    c = step_weight(alpha, dt)
    decay = math.exp(-alpha * dt)
    half = math.exp(-0.5 * alpha * dt)
    for p in prange(n_paths):
        u = np.empty(n_starts)
        for s in range(n_starts):
            u[s], div[s, p], inj[s, p] = _init_state(starts[s], b)
        disc = 1.0
        k = 0
        merged = n_starts <= 1
        while k < n_steps and not merged:
            hi = bmax[p, k] if bridge else 0.0
            lo = bmin[p, k] if bridge else 0.0
            umin = np.inf
            umax = -np.inf
            for s in range(n_starts):
                run[s, p] += disc * c * pl_eval(u[s], knots, values, slopes)
                u[s], dm, jm, de, je = _step(u[s], b, incr[p, k], hi, lo, bridge)
                div[s, p] += disc * (half * dm + decay * de)
                inj[s, p] += disc * (half * jm + decay * je)
                umin = min(umin, u[s])
                umax = max(umax, u[s])
            disc *= decay
            k += 1
            merged = umin == umax
        if k < n_steps:
            v = u[0]
            ta = 0.0
            tr = 0.0
            tacc = 0.0
            while k < n_steps:
                hi = bmax[p, k] if bridge else 0.0
                lo = bmin[p, k] if bridge else 0.0
                tacc += disc * c * pl_eval(v, knots, values, slopes)
                v, dm, jm, de, je = _step(v, b, incr[p, k], hi, lo, bridge)
                ta += disc * (half * dm + decay * de)
                tr += disc * (half * jm + decay * je)
                disc *= decay
                k += 1
            for s in range(n_starts):
                div[s, p] += ta
                inj[s, p] += tr
                run[s, p] += tacc
    return div, inj, run


@njit(parallel=True, cache=True)
def occupation_sums(incr, dt, starts, b, alpha, grid, bmax, bmin):
    """Mean discounted dividends, injections and hat-basis occupation.

    ``occ[s, n]`` is the path average of sum_k disc_k * c * phi_n(U_k) where
    phi_n is the piecewise-linear hat function on ``grid``.  Paths are split
    into a fixed number of chunks reduced in order, so the result does not
    depend on the thread count.
    """
    n_paths, n_steps = incr.shape
    n_starts = starts.shape[0]
    n_grid = grid.shape[0]
    bridge = bmax.shape[0] > 0
    c = step_weight(alpha, dt)
    decay = math.exp(-alpha * dt)
    half = math.exp(-0.5 * alpha * dt)
    n_chunks = min(N_CHUNKS, n_paths)
    cdiv = np.zeros((n_chunks, n_starts))
    cinj = np.zeros((n_chunks, n_starts))
    cocc = np.zeros((n_chunks, n_starts, n_grid))
    for ch in prange(n_chunks):
        p0 = ch * n_paths // n_chunks
        p1 = (ch + 1) * n_paths // n_chunks
        occ = cocc[ch]
        u = np.empty(n_starts)
        tail = np.zeros((1, n_grid))
        for p in range(p0, p1):
            for s in range(n_starts):
                u[s], d0, j0 = _init_state(starts[s], b)
                cdiv[ch, s] += d0
                cinj[ch, s] += j0
            disc = 1.0
            k = 0
            merged = n_starts <= 1
            while k < n_steps and not merged:
                hi = bmax[p, k] if bridge else 0.0
                lo = bmin[p, k] if bridge else 0.0
                umin = np.inf
                umax = -np.inf
                for s in range(n_starts):
                    _occ_add(occ, s, u[s], grid, disc * c)
                    u[s], dm, jm, de, je = _step(u[s], b, incr[p, k], hi, lo, bridge)
                    cdiv[ch, s] += disc * (half * dm + decay * de)
                    cinj[ch, s] += disc * (half * jm + decay * je)
                    umin = min(umin, u[s])
                    umax = max(umax, u[s])
                disc *= decay
                k += 1
                merged = umin == umax
            if k < n_steps:
                v = u[0]
                ta = 0.0
                tr = 0.0
                tail[0, :] = 0.0
                while k < n_steps:
                    hi = bmax[p, k] if bridge else 0.0
                    lo = bmin[p, k] if bridge else 0.0
                    _occ_add(tail, 0, v, grid, disc * c)
                    v, dm, jm, de, je = _step(v, b, incr[p, k], hi, lo, bridge)
                    ta += disc * (half * dm + decay * de)
                    tr += disc * (half * jm + decay * je)
                    disc *= decay
                    k += 1
                for s in range(n_starts):
                    cdiv[ch, s] += ta
                    cinj[ch, s] += tr
                    for n in range(n_grid):
                        occ[s, n] += tail[0, n]
    div = np.zeros(n_starts)
    inj = np.zeros(n_starts)
    occ_out = np.zeros((n_starts, n_grid))
    for ch in range(n_chunks):
        div += cdiv[ch]
        inj += cinj[ch]
        occ_out += cocc[ch]
    return div / n_paths, inj / n_paths, occ_out / n_paths


@njit(parallel=True, cache=True)
def g_sums(incr, dt, barriers, alpha, beta, r, knots, slopes, bmax, bmin):
    """Per (barrier, path) contribution to the barrier-selection function.

    Uses the shifted form: the process reflected at b from b equals b plus the
    process reflected at 0 from 0, so each path is computed once and every
    barrier reads the same reflected skeleton.  Contribution is
    beta - sum_{t_k < kappa} disc_k * c * (beta*alpha - r * w'_+(b + y_k)).

    ``kappa_idx`` is the first grid index with b + y_k < 0, or n_steps + 1
    when the path survives the whole horizon.  With bridge extremes the
    running maximum includes the within-step maximum, and a within-step dip
    below -b ends the path at the end of that step.
    """
    n_paths, n_steps = incr.shape
    n_b = barriers.shape[0]
    bridge = bmax.shape[0] > 0
    contrib = np.empty((n_b, n_paths))
    kappa_idx = np.empty((n_b, n_paths), dtype=np.int64)
    c = step_weight(alpha, dt)
    decay = math.exp(-alpha * dt)
    for p in prange(n_paths):
        y = np.empty(n_steps + 1)
        dip = np.empty(n_steps)
        s = 0.0
        m = 0.0
        y[0] = 0.0
        for k in range(n_steps):
            if bridge:
                dip[k] = s - m + bmin[p, k]
                if s + bmax[p, k] > m:
                    m = s + bmax[p, k]
            s += incr[p, k]
            if s > m:
                m = s
            y[k + 1] = s - m
        for j in range(n_b):
            b = barriers[j]
            acc = 0.0
            disc = 1.0
            hit = n_steps + 1
            for k in range(n_steps + 1):
                z = b + y[k]
                if z < 0.0:
                    hit = k
                    break
                if k == n_steps:
                    break
                acc += disc * c * (beta * alpha - r * pl_rderiv(z, knots, slopes))
                disc *= decay
                if bridge and b + dip[k] < 0.0:
                    hit = k + 1
                    break
            contrib[j, p] = beta - acc
            kappa_idx[j, p] = hit
    return contrib, kappa_idx


@njit(parallel=True, cache=True)
def exit_derivative_sums(incr, dt, starts, b, alpha, beta, r, knots, slopes, bmax, bmin):
    """Per (start, path) sample of the exit-time representation of v_b'(x).

    The unreflected skeleton runs from x until the first grid time outside
    [0, b]; exits above pay exp(-alpha t), exits below pay beta*exp(-alpha t),
    and the running term integrates r * w'_+(X) with the exact step weight.
    """
    n_paths, n_steps = incr.shape
    n_starts = starts.shape[0]
    bridge = bmax.shape[0] > 0
    out = np.empty((n_starts, n_paths))
    c = step_weight(alpha, dt)
    decay = math.exp(-alpha * dt)
    half = math.exp(-0.5 * alpha * dt)
    for p in prange(n_paths):
        for s in range(n_starts):
            x = starts[s]
            acc = 0.0
            disc = 1.0
            for k in range(n_steps + 1):
                if x > b:
                    acc += disc
                    break
                if x < 0.0:
                    acc += beta * disc
                    break
                if k == n_steps:
                    break
                acc += disc * c * r * pl_rderiv(x, knots, slopes)
                if bridge:
                    up = x + bmax[p, k] > b
                    down = x + bmin[p, k] < 0.0
                    if up and down:
                        # both extremes crossed within one step: take the nearer barrier
                        up = b - x < x
                        down = not up
                    if up:
                        acc += disc * half
                        break
                    if down:
                        acc += beta * disc * half
                        break
                x += incr[p, k]
                disc *= decay
            out[s, p] = acc
    return out


@njit(parallel=True, cache=True)
def map_controlled_sums(incr, states, lam, barriers, x0):
    """Discounted dividends and injections of a regime-modulated barrier strategy.

    ``incr[p, k]`` already holds the increment of the active regime plus any
    switch jump in step k; ``states[p, k]`` is the regime at t_k and
    ``lam[p, k]`` the cumulative discount at t_k.  The barrier in force after
    step k is the one of ``states[p, k+1]``.
    """
    n_paths, n_steps = incr.shape
    div = np.empty(n_paths)
    inj = np.empty(n_paths)
    for p in prange(n_paths):
        b = barriers[states[p, 0]]
        a = 0.0
        r = 0.0
        if x0 > b:
            a = x0 - b
            u = b
        elif x0 < 0.0:
            r = -x0
            u = 0.0
        else:
            u = x0
        for k in range(n_steps):
            u += incr[p, k]
            b = barriers[states[p, k + 1]]
            disc = math.exp(-lam[p, k + 1])
            if u > b:
                a += disc * (u - b)
                u = b
            elif u < 0.0:
                r -= disc * u
                u = 0.0
        div[p] = a
        inj[p] = r
    return div, inj


@njit(parallel=True, cache=True)
def running_max_sums(incr, lam):
    """Per-path sum of exp(-Lambda) times increments of the running maximum."""
    n_paths, n_steps = incr.shape
    out = np.empty(n_paths)
    for p in prange(n_paths):
        s = 0.0
        m = 0.0
        acc = 0.0
        for k in range(n_steps):
            s += incr[p, k]
            if s > m:
                acc += math.exp(-lam[p, k + 1]) * (s - m)
                m = s
        out[p] = acc
    return out
