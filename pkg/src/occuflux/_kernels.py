"""Compiled event loop for the branching system.

Time is cut into steps given by ``bounds``.  Inside a step every particle
either moves straight to the step end or, if its exponential clock rings
first, moves to the ring time, dies or splits there, and its offspring are
pushed on a stack and processed the same way.  Immigrants enter the stack
at uniform times inside the step.  Positions are always sampled from the
exact transition law; the occupation integral of each test bump is
accumulated segment by segment with the trapezoid rule.
"""
import math

import numpy as np
from numba import njit

# indices into the stats vector returned by simulate()
ST_INITIAL, ST_IMMIGRANTS, ST_BRANCH, ST_DEATH, ST_EXTINCT, ST_MAXLIVE, ST_STATUS, ST_FINAL = range(8)
STATUS_OK, STATUS_EXPLODED = 0, 1


@njit(cache=True)
def _stable_draw(alpha, rng):
    u = (rng.random() - 0.5) * math.pi
    if alpha == 1.0:
        return math.tan(u)
    w = rng.exponential(1.0)
    return (math.sin(alpha * u) / math.cos(u) ** (1.0 / alpha)
            * (math.cos((1.0 - alpha) * u) / w) ** ((1.0 - alpha) / alpha))


@njit(cache=True, inline="always")
def _coefs(kind, p1, p2, h):
    """x_new = a * x + b * draw for a step of length h."""
    if kind == 0:
        return 1.0, p1 * math.sqrt(h)
    if kind == 1:
        return 1.0, (p2 * h) ** (1.0 / p1)
    return math.exp(-p1 * h), p2 * math.sqrt(-math.expm1(-2.0 * p1 * h) / (2.0 * p1))


@njit(cache=True, inline="always")
def _draw(kind, alpha, rng):
    if kind == 1:
        return _stable_draw(alpha, rng)
    return rng.standard_normal()


@njit(cache=True, inline="always")
def _move(kind, p1, a, b, src, i, dst, m, rng):
    for c in range(src.shape[1]):
        dst[m, c] = a * src[i, c] + b * _draw(kind, p1, rng)


@njit(cache=True, inline="always")
def _phis(pos, i, amps, centers, inv2w2, out, m):
    for j in range(amps.shape[0]):
        r2 = 0.0
        for c in range(pos.shape[1]):
            dx = pos[i, c] - centers[j, c]
            r2 += dx * dx
        out[m, j] = amps[j] * math.exp(-r2 * inv2w2[j])


@njit(cache=True)
def _grow(pos, clk, phv, need):
    cap = max(2 * pos.shape[0], need)
    n = pos.shape[0]
    p = np.empty((cap, pos.shape[1]))
    c = np.empty(cap)
    f = np.empty((cap, phv.shape[1]))
    p[:n] = pos
    c[:n] = clk
    f[:n] = phv
    return p, c, f


@njit(cache=True)
def _grow_stack(spos, stime, sclk, sphv, need):
    spos2, sclk2, sphv2 = _grow(spos, sclk, sphv, need)
    stime2 = np.empty(spos2.shape[0])
    stime2[:stime.shape[0]] = stime
    return spos2, stime2, sclk2, sphv2


@njit(cache=True, nogil=True)
def simulate(rng, kind, p1, p2, V, q, H, L, R, init_pos, bounds,
             amps, centers, inv2w2, max_particles):
    """Run one realisation; see module docstring.

    Returns (increments[step, bump], live_count[step], stats).
    """
    d = centers.shape[1]
    k = amps.shape[0]
    nsteps = bounds.shape[0] - 1
    vol = (2.0 * R) ** d
    mean_life = 1.0 / V

    inc = np.zeros((nsteps, k))
    counts = np.zeros(nsteps, dtype=np.int64)
    stats = np.zeros(8)

    n_extra = rng.poisson(L * vol) if L > 0.0 else 0
    n = init_pos.shape[0] + n_extra
    cap = max(64, 2 * n)
    pos = np.empty((cap, d))
    clk = np.empty(cap)
    phv = np.empty((cap, k))
    for i in range(init_pos.shape[0]):
        for c in range(d):
            pos[i, c] = init_pos[i, c]
    for i in range(init_pos.shape[0], n):
        for c in range(d):
            pos[i, c] = -R + 2.0 * R * rng.random()
    for i in range(n):
        clk[i] = rng.exponential(mean_life)
        _phis(pos, i, amps, centers, inv2w2, phv, i)
    npos = np.empty((cap, d))
    nclk = np.empty(cap)
    nphv = np.empty((cap, k))

    spos = np.empty((64, d))
    stime = np.empty(64)
    sclk = np.empty(64)
    sphv = np.empty((64, k))

    # one-row scratch buffers for the particle being processed
    cur = np.empty((1, d))
    curf = np.empty((1, k))
    new = np.empty((1, d))
    newf = np.empty((1, k))

    n_imm = 0
    n_branch = 0
    n_death = 0
    ext_time = -1.0
    last_death = 0.0
    max_n = n
    stats[ST_INITIAL] = n

    for s in range(nsteps):
        t0 = bounds[s]
        t1 = bounds[s + 1]
        h = t1 - t0
        a_h, b_h = _coefs(kind, p1, p2, h)
        m = 0
        top = 0

        if n + 1 > npos.shape[0]:
            npos, nclk, nphv = _grow(npos, nclk, nphv, n + 1)
        for i in range(n):
            if clk[i] > t1:
                # hot path, written out: helper calls that take the generator cost ~50 ns each
                if kind == 1:
                    for c in range(d):
                        npos[m, c] = pos[i, c] + b_h * _stable_draw(p1, rng)
                else:
                    for c in range(d):
                        npos[m, c] = a_h * pos[i, c] + b_h * rng.standard_normal()
                _phis(npos, m, amps, centers, inv2w2, nphv, m)
                for j in range(k):
                    inc[s, j] += 0.5 * h * (phv[i, j] + nphv[m, j])
                nclk[m] = clk[i]
                m += 1
            else:
                if top >= spos.shape[0]:
                    spos, stime, sclk, sphv = _grow_stack(spos, stime, sclk, sphv, top + 1)
                for c in range(d):
                    spos[top, c] = pos[i, c]
                for j in range(k):
                    sphv[top, j] = phv[i, j]
                stime[top] = t0
                sclk[top] = clk[i]
                top += 1

        if H > 0.0:
            n_new = rng.poisson(H * vol * h)
            n_imm += n_new
            for _ in range(n_new):
                if top >= spos.shape[0]:
                    spos, stime, sclk, sphv = _grow_stack(spos, stime, sclk, sphv, top + 1)
                tau = t0 + h * rng.random()
                for c in range(d):
                    spos[top, c] = -R + 2.0 * R * rng.random()
                stime[top] = tau
                sclk[top] = tau + rng.exponential(mean_life)
                _phis(spos, top, amps, centers, inv2w2, sphv, top)
                top += 1

        while top > 0:
            top -= 1
            for c in range(d):
                cur[0, c] = spos[top, c]
            for j in range(k):
                curf[0, j] = sphv[top, j]
            tau = stime[top]
            ring = sclk[top]
            if ring > t1:
                if m + 1 > npos.shape[0]:
                    npos, nclk, nphv = _grow(npos, nclk, nphv, m + 1)
                hh = t1 - tau
                if hh > 0.0:
                    a2, b2 = _coefs(kind, p1, p2, hh)
                    _move(kind, p1, a2, b2, cur, 0, npos, m, rng)
                    _phis(npos, m, amps, centers, inv2w2, nphv, m)
                else:
                    for c in range(d):
                        npos[m, c] = cur[0, c]
                    for j in range(k):
                        nphv[m, j] = curf[0, j]
                for j in range(k):
                    inc[s, j] += 0.5 * hh * (curf[0, j] + nphv[m, j])
                nclk[m] = ring
                m += 1
                continue
            hh = ring - tau
            if hh > 0.0:
                a2, b2 = _coefs(kind, p1, p2, hh)
                _move(kind, p1, a2, b2, cur, 0, new, 0, rng)
                _phis(new, 0, amps, centers, inv2w2, newf, 0)
                for j in range(k):
                    inc[s, j] += 0.5 * hh * (curf[0, j] + newf[0, j])
            else:
                for c in range(d):
                    new[0, c] = cur[0, c]
                for j in range(k):
                    newf[0, j] = curf[0, j]
            if rng.random() < q:
                n_branch += 1
                if top + 2 > spos.shape[0]:
                    spos, stime, sclk, sphv = _grow_stack(spos, stime, sclk, sphv, top + 2)
                for _ in range(2):
                    for c in range(d):
                        spos[top, c] = new[0, c]
                    for j in range(k):
                        sphv[top, j] = newf[0, j]
                    stime[top] = ring
                    sclk[top] = ring + rng.exponential(mean_life)
                    top += 1
            else:
                n_death += 1
                last_death = ring

        pos, npos = npos, pos
        clk, nclk = nclk, clk
        phv, nphv = nphv, phv
        had = n
        n = m
        counts[s] = n
        if n > max_n:
            max_n = n
        if n > max_particles:
            stats[ST_STATUS] = STATUS_EXPLODED
            break
        if n == 0 and had > 0 and ext_time < 0.0:
            ext_time = last_death
        if n == 0 and H == 0.0:
            # nothing can re-enter: remaining steps stay zero
            if ext_time < 0.0:
                ext_time = last_death
            break

    stats[ST_IMMIGRANTS] = n_imm
    stats[ST_BRANCH] = n_branch
    stats[ST_DEATH] = n_death
    stats[ST_EXTINCT] = ext_time
    stats[ST_MAXLIVE] = max_n
    stats[ST_FINAL] = n
    return inc, counts, stats
