"""Hot loops of the Monte Carlo: a numba path and a vectorised numpy path.

Both consume the same per-trajectory splitmix64 streams in the same order,
so they produce the same records (up to last-ulp differences in ``log``).

Segment tables (one row per pulse segment):
    dur, rate_flip[2], rate_click[2], reset_target, reset_fid
Spin is 0 for up and 1 for down; ``rate_flip[s]`` leaves state s.
``reset_target`` >= 0 re-prepares the spin at the segment end.
"""

from __future__ import annotations

import numpy as np

from ._accel import njit, numba_enabled

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
S30 = np.uint64(30)
S27 = np.uint64(27)
S31 = np.uint64(31)
S11 = np.uint64(11)
ONE = np.uint64(1)
INV53 = 1.0 / 9007199254740992.0

AFTERPULSE_SALT = np.uint64(0xA5A5F00DCAFE1234)


# --- splitmix64 -------------------------------------------------------------------


@njit
def _mix(z):
    z = (z ^ (z >> S30)) * MIX1
    z = (z ^ (z >> S27)) * MIX2
    return z ^ (z >> S31)


@njit
def _next(state):
    state = state + GOLDEN
    z = _mix(state)
    return state, (float(z >> S11) + 1.0) * INV53


def stream_seeds(seed: int, indices) -> np.ndarray:
    """Initial state of the substream for each trajectory.

    The seed is hashed before the index is mixed in, so nearby seeds do not
    share streams at shifted indices."""
    idx = np.asarray(indices, dtype=np.uint64)
    with np.errstate(over="ignore"):
        h = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + GOLDEN
        h = (h ^ (h >> S30)) * MIX1
        h = (h ^ (h >> S27)) * MIX2
        h = h ^ (h >> S31)
        z = h ^ idx
        z = (z ^ (z >> S30)) * MIX1
        z = (z ^ (z >> S27)) * MIX2
        return z ^ (z >> S31)


def uniforms(states: np.ndarray):
    """Vectorised step of many streams: returns (new_states, u in (0, 1])."""
    with np.errstate(over="ignore"):
        states = states + GOLDEN
        z = (states ^ (states >> S30)) * MIX1
        z = (z ^ (z >> S27)) * MIX2
        z = z ^ (z >> S31)
    return states, ((z >> S11).astype(np.float64) + 1.0) * INV53


# --- numba path --------------------------------------------------------------------


@njit
def _grow(a, n):
    b = np.empty(max(2 * a.shape[0], n + 1), dtype=a.dtype)
    b[: a.shape[0]] = a
    return b


@njit
def _simulate_numba(states, spin0, dur, rflip, rclick, reset_target, reset_fid):
    n = states.shape[0]
    nseg = dur.shape[0]
    click_t = np.empty(1024)
    flip_t = np.empty(256)
    click_ptr = np.zeros(n + 1, dtype=np.int64)
    flip_ptr = np.zeros(n + 1, dtype=np.int64)
    final = np.empty(n, dtype=np.int64)
    nc = 0
    nf = 0
    for j in range(n):
        state = states[j]
        spin = spin0[j]
        t0 = 0.0
        for k in range(nseg):
            end = t0 + dur[k]
            t = t0
            while True:
                rf = rflip[k, spin]
                rc = rclick[k, spin]
                tot = rf + rc
                if tot <= 0.0:
                    break
                state, u = _next(state)
                t = t - np.log(u) / tot
                if t >= end:
                    break
                state, u = _next(state)
                if u * tot <= rf:
                    spin = 1 - spin
                    if nf >= flip_t.shape[0]:
                        flip_t = _grow(flip_t, nf)
                    flip_t[nf] = t
                    nf += 1
                else:
                    if nc >= click_t.shape[0]:
                        click_t = _grow(click_t, nc)
                    click_t[nc] = t
                    nc += 1
            if reset_target[k] >= 0:
                state, u = _next(state)
                new = reset_target[k] if u <= reset_fid[k] else 1 - reset_target[k]
                if new != spin:
                    spin = new
                    if nf >= flip_t.shape[0]:
                        flip_t = _grow(flip_t, nf)
                    flip_t[nf] = end
                    nf += 1
            t0 = end
        click_ptr[j + 1] = nc
        flip_ptr[j + 1] = nf
        final[j] = spin
    return click_ptr, click_t[:nc].copy(), flip_ptr, flip_t[:nf].copy(), final


# --- numpy path --------------------------------------------------------------------


def _simulate_numpy(states, spin0, dur, rflip, rclick, reset_target, reset_fid):
    n = states.shape[0]
    nseg = dur.shape[0]
    states = states.copy()
    spin = spin0.astype(np.int64).copy()
    seg = np.zeros(n, dtype=np.int64)
    starts = np.concatenate([[0.0], np.cumsum(dur)])
    t = np.zeros(n)
    active = np.arange(n)
    c_idx, c_t, f_idx, f_t = [], [], [], []
    while active.size:
        k = seg[active]
        s = spin[active]
        rf = rflip[k, s]
        rc = rclick[k, s]
        tot = rf + rc
        end = starts[k + 1]
        done = tot <= 0.0
        live = active[~done]
        if live.size:
            st, u = uniforms(states[live])
            states[live] = st
            tl = t[live] - np.log(u) / tot[~done]
            over = tl >= end[~done]
            ev = live[~over]
            t[ev] = tl[~over]
            if ev.size:
                st, u2 = uniforms(states[ev])
                states[ev] = st
                is_flip = u2 * tot[~done][~over] <= rf[~done][~over]
                fl = ev[is_flip]
                cl = ev[~is_flip]
                spin[fl] = 1 - spin[fl]
                f_idx.append(fl)
                f_t.append(t[fl])
                c_idx.append(cl)
                c_t.append(t[cl])
            finished = np.concatenate([active[done], live[over]])
        else:
            finished = active[done]
        if finished.size:
            finished.sort()
            kf = seg[finished]
            t[finished] = starts[kf + 1]
            has_reset = reset_target[kf] >= 0
            rs = finished[has_reset]
            if rs.size:
                st, u = uniforms(states[rs])
                states[rs] = st
                tgt = reset_target[kf[has_reset]]
                new = np.where(u <= reset_fid[kf[has_reset]], tgt, 1 - tgt)
                changed = new != spin[rs]
                spin[rs] = new
                f_idx.append(rs[changed])
                f_t.append(t[rs[changed]])
            seg[finished] += 1
        active = active[seg[active] < nseg]
    click_ptr, click_t = _to_csr(n, c_idx, c_t)
    flip_ptr, flip_t = _to_csr(n, f_idx, f_t)
    return click_ptr, click_t, flip_ptr, flip_t, spin


def _to_csr(n, idx_chunks, t_chunks):
    if idx_chunks:
        idx = np.concatenate(idx_chunks)
        tt = np.concatenate(t_chunks)
    else:
        idx = np.zeros(0, dtype=np.int64)
        tt = np.zeros(0)
    # events of one trajectory are produced in time order; a stable sort by
    # trajectory keeps that order
    order = np.argsort(idx, kind="stable")
    counts = np.bincount(idx, minlength=n)
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    return ptr, tt[order]


def simulate(states, spin0, dur, rflip, rclick, reset_target, reset_fid, backend: str | None = None):
    """Dispatch to the numba or numpy kernel (``backend`` overrides the env flag)."""
    args = (
        np.ascontiguousarray(states, dtype=np.uint64),
        np.ascontiguousarray(spin0, dtype=np.int64),
        np.ascontiguousarray(dur, dtype=np.float64),
        np.ascontiguousarray(rflip, dtype=np.float64),
        np.ascontiguousarray(rclick, dtype=np.float64),
        np.ascontiguousarray(reset_target, dtype=np.int64),
        np.ascontiguousarray(reset_fid, dtype=np.float64),
    )
    if backend is None:
        backend = "numba" if numba_enabled() else "numpy"
    if backend == "numba":
        return _simulate_numba(*args)
    if backend == "numpy":
        return _simulate_numpy(*args)
    raise ValueError(f"unknown backend {backend!r}")


# --- detector post-processing ---------------------------------------------------------


@njit
def _detector_numba(ptr, times, states, dead, p_after, delay, t_end):
    n = ptr.shape[0] - 1
    out = np.empty(times.shape[0] * 2 + 1)
    out_ptr = np.zeros(n + 1, dtype=np.int64)
    pend = np.empty(times.shape[0] + 1)
    m = 0
    for j in range(n):
        state = states[j]
        last = -np.inf
        npend = 0
        head = 0
        i = ptr[j]
        stop = ptr[j + 1]
        while i < stop or head < npend:
            # merge real clicks with pending after-pulses in time order
            if head < npend and (i >= stop or pend[head] < times[i]):
                tc = pend[head]
                head += 1
                real = False
            else:
                tc = times[i]
                i += 1
                real = True
            if tc - last < dead:
                continue
            out[m] = tc
            m += 1
            last = tc
            if real and p_after > 0.0:
                state, u = _next(state)
                if u <= p_after and tc + delay < t_end:
                    pend[npend] = tc + delay
                    npend += 1
        out_ptr[j + 1] = m
    return out_ptr, out[:m].copy()


def _detector_python(ptr, times, states, dead, p_after, delay, t_end):
    n = ptr.shape[0] - 1
    out = []
    out_ptr = np.zeros(n + 1, dtype=np.int64)
    for j in range(n):
        state = np.array([states[j]], dtype=np.uint64)
        last = -np.inf
        pend = []
        head = 0
        row = times[ptr[j]: ptr[j + 1]]
        i = 0
        while i < row.size or head < len(pend):
            if head < len(pend) and (i >= row.size or pend[head] < row[i]):
                tc, real = pend[head], False
                head += 1
            else:
                tc, real = float(row[i]), True
                i += 1
            if tc - last < dead:
                continue
            out.append(tc)
            last = tc
            if real and p_after > 0.0:
                state, u = uniforms(state)
                if u[0] <= p_after and tc + delay < t_end:
                    pend.append(tc + delay)
        out_ptr[j + 1] = len(out)
    return out_ptr, np.array(out, dtype=np.float64)


def detector(ptr, times, states, dead, p_after, delay, t_end, backend: str | None = None):
    args = (
        np.ascontiguousarray(ptr, dtype=np.int64),
        np.ascontiguousarray(times, dtype=np.float64),
        np.ascontiguousarray(states, dtype=np.uint64),
        float(dead),
        float(p_after),
        float(delay),
        float(t_end),
    )
    if backend is None:
        backend = "numba" if numba_enabled() else "numpy"
    if backend == "numba":
        return _detector_numba(*args)
    if backend == "numpy":
        return _detector_python(*args)
    raise ValueError(f"unknown backend {backend!r}")
