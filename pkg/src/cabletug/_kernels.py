"""Compiled inner loops for training: fuzzy-fleet episodes and Q-table runs.

These kernels exist purely for speed on the training hot paths; they mirror
the reference implementations (sim_core.run_episode / step, fuzzy.infer,
qlearn's update and exploration rules) operation for operation so both paths
produce the same numbers.  tests/test_kernels.py holds the equivalence suite;
any semantic change here must change the reference too, and vice versa.
"""

from __future__ import annotations

import numpy as np
from numba import njit

U64 = np.uint64
_SM_INC = U64(0x9E3779B97F4A7C15)
_SM_M1 = U64(0xBF58476D1CE4E5B9)
_SM_M2 = U64(0x94D049BB133111EB)
PI = np.pi


@njit(cache=True)
def _next_double(state):
    # splitmix64; twin of qlearn.SplitMix64
    state = state + _SM_INC
    z = state
    z = (z ^ (z >> U64(30))) * _SM_M1
    z = (z ^ (z >> U64(27))) * _SM_M2
    z = z ^ (z >> U64(31))
    return state, (z >> U64(11)) * (2.0 ** -53)


@njit(cache=True)
def _mf_eval(left, peak, right, x):
    if x < left or x > right:
        return 0.0
    if x == peak:
        return 1.0
    if x < peak:
        return (x - left) / (peak - left)
    return (right - x) / (right - peak)


@njit(cache=True)
def _fis_voltage(in_tri, rule_cent, f0, f1, f2, f3, feat_lo, feat_hi, v_limit):
    """Mirror of fuzzy.infer on one robot's flattened FIS; nan on zero coverage."""
    degs = np.empty((4, 3))
    feats = (f0, f1, f2, f3)
    for f in range(4):
        x = feats[f]
        if x < feat_lo[f]:
            x = feat_lo[f]
        elif x > feat_hi[f]:
            x = feat_hi[f]
        for m in range(3):
            degs[f, m] = _mf_eval(in_tri[f, m, 0], in_tri[f, m, 1], in_tri[f, m, 2], x)
    num = 0.0
    den = 0.0
    for i0 in range(3):
        d0 = degs[0, i0]
        if d0 == 0.0:
            continue
        for i1 in range(3):
            d1 = degs[1, i1]
            w1 = d1 if d1 < d0 else d0
            if w1 == 0.0:
                continue
            for i2 in range(3):
                d2 = degs[2, i2]
                w2 = d2 if d2 < w1 else w1
                if w2 == 0.0:
                    continue
                base = 27 * i0 + 9 * i1 + 3 * i2
                for i3 in range(3):
                    d3 = degs[3, i3]
                    w = d3 if d3 < w2 else w2
                    if w > 0.0:
                        den += w
                        num += w * rule_cent[base + i3]
    if den == 0.0:
        return np.nan
    v = num / den
    if v < -v_limit:
        v = -v_limit
    elif v > v_limit:
        v = v_limit
    return v


@njit(cache=True)
def fis_episode_cost(anchors, in_tri, rule_cent, feat_lo, feat_hi, v_limit,
                     tx, ty, stiffness_k, l0, mass, damping_c, reel_gain,
                     v_max, ell_min, ell_max, break_len, dt, n_steps, horizon_t):
    """One fuzzy-fleet episode; returns (cost, t_end, broke, fault)."""
    n = anchors.shape[0]
    px = 0.0
    py = 0.0
    vx = 0.0
    vy = 0.0
    ell = np.full(n, l0)
    volts = np.empty(n)
    d_cur = np.empty(n)
    rtx = np.empty(n)
    rty = np.empty(n)
    nt = np.empty(n)
    for i in range(n):
        rtx[i] = tx - anchors[i, 0]
        rty[i] = ty - anchors[i, 1]
        nt[i] = np.sqrt(rtx[i] * rtx[i] + rty[i] * rty[i])
        if nt[i] < 1e-9:
            return 0.0, 0.0, False, True

    integral = 0.0
    dist_prev = np.sqrt(tx * tx + ty * ty)
    k = 0
    broke = False
    while True:
        for i in range(n):
            bx = px - anchors[i, 0]
            by = py - anchors[i, 1]
            nb = np.sqrt(bx * bx + by * by)
            if nb < 1e-9:
                return 0.0, k * dt, False, True
            d_cur[i] = nb
            rho = nb - nt[i]
            phi = np.arctan2(rtx[i] * by - rty[i] * bx, rtx[i] * bx + rty[i] * by)
            if phi <= -PI:
                phi = PI
            volts[i] = _fis_voltage(in_tri[i], rule_cent[i], rho, phi, vx, vy,
                                    feat_lo, feat_hi, v_limit)
            if np.isnan(volts[i]):
                return 0.0, k * dt, False, True

        over = False
        for i in range(n):
            if d_cur[i] > break_len:
                over = True
        if over:
            broke = True
            break
        if k >= n_steps:
            break

        for i in range(n):
            v = volts[i]
            if v < -v_max:
                v = -v_max
            elif v > v_max:
                v = v_max
            e = ell[i] - reel_gain * v * dt
            if e < ell_min:
                e = ell_min
            elif e > ell_max:
                e = ell_max
            ell[i] = e
        fx = 0.0
        fy = 0.0
        for i in range(n):
            dx = anchors[i, 0] - px
            dy = anchors[i, 1] - py
            d = np.sqrt(dx * dx + dy * dy)
            if d < 1e-9:
                return 0.0, k * dt, False, True
            stretch = d - ell[i]
            if stretch > 0.0:
                t = stiffness_k * stretch
                fx += t * dx / d
                fy += t * dy / d
        vx += (fx - damping_c * vx) / mass * dt
        vy += (fy - damping_c * vy) / mass * dt
        px += vx * dt
        py += vy * dt

        ddx = tx - px
        ddy = ty - py
        dist_new = np.sqrt(ddx * ddx + ddy * ddy)
        integral += 0.5 * (dist_prev + dist_new) * dt
        dist_prev = dist_new
        k += 1

    t_end = k * dt
    return integral + 50.0 * (horizon_t - t_end), t_end, broke, False


@njit(cache=True)
def fis_scenario_costs(anchors, in_tri, rule_cent, feat_lo, feat_hi, v_limit,
                       targets, stiffness_k, l0, mass, damping_c, reel_gain,
                       v_max, ell_min, ell_max, break_len, dt, n_steps, horizon_t):
    """Per-scenario episode costs of one fleet; simulator faults read +inf."""
    n_scen = targets.shape[0]
    costs = np.empty(n_scen)
    for s in range(n_scen):
        cost, _, _, fault = fis_episode_cost(
            anchors, in_tri, rule_cent, feat_lo, feat_hi, v_limit,
            targets[s, 0], targets[s, 1], stiffness_k, l0, mass, damping_c,
            reel_gain, v_max, ell_min, ell_max, break_len, dt, n_steps, horizon_t)
        costs[s] = np.inf if fault else cost
    return costs


@njit(cache=True)
def fis_population_costs(anchors, in_tri_pop, rule_cent_pop, feat_lo, feat_hi,
                         v_limit, targets, stiffness_k, l0, mass, damping_c,
                         reel_gain, v_max, ell_min, ell_max, break_len, dt,
                         n_steps, horizon_t):
    """Mean episode cost of every genome in a population batch."""
    pop = in_tri_pop.shape[0]
    out = np.empty(pop)
    for p in range(pop):
        costs = fis_scenario_costs(
            anchors, in_tri_pop[p], rule_cent_pop[p], feat_lo, feat_hi, v_limit,
            targets, stiffness_k, l0, mass, damping_c, reel_gain, v_max,
            ell_min, ell_max, break_len, dt, n_steps, horizon_t)
        out[p] = np.mean(costs)
    return out


@njit(cache=True)
def _bin_index(x, lo, hi, nbins):
    if x < lo:
        x = lo
    elif x > hi:
        x = hi
    b = int((x - lo) / (hi - lo) * nbins)
    if b >= nbins:
        b = nbins - 1
    return b


@njit(cache=True)
def _state_id(rho, phi, vx, vy, feat_lo, feat_hi, bins):
    b0 = _bin_index(rho, feat_lo[0], feat_hi[0], bins[0])
    b1 = _bin_index(phi, feat_lo[1], feat_hi[1], bins[1])
    b2 = _bin_index(vx, feat_lo[2], feat_hi[2], bins[2])
    b3 = _bin_index(vy, feat_lo[3], feat_hi[3], bins[3])
    return ((b0 * bins[1] + b1) * bins[2] + b2) * bins[3] + b3


@njit(cache=True)
def q_train_dense(anchors, feat_lo, feat_hi, bins, action_levels, targets,
                  episodes, alpha, gamma, eps_start, eps_end, seed,
                  stiffness_k, l0, mass, damping_c, reel_gain, v_max,
                  ell_min, ell_max, break_len, dt, n_steps):
    """Shared-reward simultaneous Q-learning for the whole fleet.

    Scenarios cycle round-robin over episodes; exploration decays linearly.
    Returns dense per-robot tables, an update mask marking stored entries,
    and the count of episodes aborted by degenerate geometry.
    """
    n = anchors.shape[0]
    n_actions = action_levels.shape[0]
    n_states = 1
    for f in range(4):
        n_states *= bins[f]
    q = np.zeros((n, n_states, n_actions))
    visited = np.zeros((n, n_states, n_actions), dtype=np.bool_)

    ell = np.empty(n)
    rtx = np.empty(n)
    rty = np.empty(n)
    nt = np.empty(n)
    d_cur = np.empty(n)
    state_ids = np.empty(n, dtype=np.int64)
    next_ids = np.empty(n, dtype=np.int64)
    acts = np.empty(n, dtype=np.int64)
    rng = U64(seed)
    faults = 0
    n_scen = targets.shape[0]

    for ep in range(episodes):
        if episodes > 1:
            eps = eps_start + (eps_end - eps_start) * (ep / (episodes - 1))
        else:
            eps = eps_start
        tx = targets[ep % n_scen, 0]
        ty = targets[ep % n_scen, 1]
        px = 0.0
        py = 0.0
        vx = 0.0
        vy = 0.0
        fault = False
        for i in range(n):
            ell[i] = l0
            rtx[i] = tx - anchors[i, 0]
            rty[i] = ty - anchors[i, 1]
            nt[i] = np.sqrt(rtx[i] * rtx[i] + rty[i] * rty[i])
            if nt[i] < 1e-9:
                fault = True
        if fault:
            faults += 1
            continue

        for i in range(n):
            bx = px - anchors[i, 0]
            by = py - anchors[i, 1]
            nb = np.sqrt(bx * bx + by * by)
            rho = nb - nt[i]
            phi = np.arctan2(rtx[i] * by - rty[i] * bx, rtx[i] * bx + rty[i] * by)
            if phi <= -PI:
                phi = PI
            state_ids[i] = _state_id(rho, phi, vx, vy, feat_lo, feat_hi, bins)
        dist_prev = np.sqrt(tx * tx + ty * ty)

        for k in range(n_steps):
            for i in range(n):
                rng, u = _next_double(rng)
                if u < eps:
                    rng, u2 = _next_double(rng)
                    acts[i] = np.int64(u2 * n_actions)
                else:
                    best = 0
                    for a in range(1, n_actions):
                        if q[i, state_ids[i], a] > q[i, state_ids[i], best]:
                            best = a
                    acts[i] = best

            for i in range(n):
                v = action_levels[acts[i]]
                if v < -v_max:
                    v = -v_max
                elif v > v_max:
                    v = v_max
                e = ell[i] - reel_gain * v * dt
                if e < ell_min:
                    e = ell_min
                elif e > ell_max:
                    e = ell_max
                ell[i] = e
            fx = 0.0
            fy = 0.0
            for i in range(n):
                dx = anchors[i, 0] - px
                dy = anchors[i, 1] - py
                d = np.sqrt(dx * dx + dy * dy)
                if d < 1e-9:
                    fault = True
                    break
                stretch = d - ell[i]
                if stretch > 0.0:
                    t = stiffness_k * stretch
                    fx += t * dx / d
                    fy += t * dy / d
            if fault:
                faults += 1
                break
            vx += (fx - damping_c * vx) / mass * dt
            vy += (fy - damping_c * vy) / mass * dt
            px += vx * dt
            py += vy * dt

            broke = False
            for i in range(n):
                bx = px - anchors[i, 0]
                by = py - anchors[i, 1]
                nb = np.sqrt(bx * bx + by * by)
                if nb < 1e-9:
                    fault = True
                d_cur[i] = nb
                rho = nb - nt[i]
                phi = np.arctan2(rtx[i] * by - rty[i] * bx, rtx[i] * bx + rty[i] * by)
                if phi <= -PI:
                    phi = PI
                next_ids[i] = _state_id(rho, phi, vx, vy, feat_lo, feat_hi, bins)
                if nb > break_len:
                    broke = True
            if fault:
                faults += 1
                break

            ddx = tx - px
            ddy = ty - py
            dist_new = np.sqrt(ddx * ddx + ddy * ddy)
            r = dist_prev - dist_new
            dist_prev = dist_new

            for i in range(n):
                s = state_ids[i]
                a = acts[i]
                best_next = q[i, next_ids[i], 0]
                for b in range(1, n_actions):
                    if q[i, next_ids[i], b] > best_next:
                        best_next = q[i, next_ids[i], b]
                q[i, s, a] = (1.0 - alpha) * q[i, s, a] + alpha * (r + gamma * best_next)
                visited[i, s, a] = True
                state_ids[i] = next_ids[i]

            if broke:
                break

    return q, visited, faults
