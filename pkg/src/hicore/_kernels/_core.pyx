# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernel backend; mirrors _pycore.py function for function.

The cdef core works on raw pointers (grids are row-major int8, weights
row-major float64) so the per-step loops compile to plain C; the module-level
wrappers accept the same numpy arrays as the pure-Python backend.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, tanh
from libc.stdint cimport int8_t, int64_t, uint8_t, uint64_t

BACKEND = "compiled"

DEF EMPTY = 0
DEF WALL = 1
DEF DOOR = 2
DEF KEY = 3
DEF GOAL = 4
DEF D_OPEN = 0
DEF D_CLOSED = 1
DEF D_LOCKED = 2
DEF AX = 0
DEF AY = 1
DEF AHEAD = 2
DEF ACK = 3
DEF ACC = 4
DEF ASTEP = 5
DEF ADONE = 6

cdef int[4] HDX = [0, 1, 0, -1]
cdef int[4] HDY = [-1, 0, 1, 0]


cdef inline uint64_t _rng_next(uint64_t* s) nogil:
    cdef uint64_t z
    s[0] = s[0] + (<uint64_t>0x9E3779B97F4A7C15UL)
    z = s[0]
    z = (z ^ (z >> 30)) * (<uint64_t>0xBF58476D1CE4E5B9UL)
    z = (z ^ (z >> 27)) * (<uint64_t>0x94D049BB133111EBUL)
    return z ^ (z >> 31)


cdef inline double _rng_uniform(uint64_t* s) nogil:
    return <double>(_rng_next(s) >> 11) * (1.0 / 9007199254740992.0)


cdef double _c_env_step(int8_t* kind, int8_t* color, int8_t* door,
                        int64_t* astate, int w, int h,
                        int64_t max_steps, int64_t goal_x, int64_t goal_y,
                        int action, bint* done_out) nogil:
    cdef int hd = <int>astate[AHEAD]
    cdef int fx, fy, idx
    cdef int8_t k, ds
    cdef double reward = 0.0
    cdef bint done = 0
    astate[ASTEP] += 1
    if action == 0:
        astate[AHEAD] = (hd + 3) % 4
    elif action == 1:
        astate[AHEAD] = (hd + 1) % 4
    else:
        fx = <int>astate[AX] + HDX[hd]
        fy = <int>astate[AY] + HDY[hd]
        if 0 <= fx < w and 0 <= fy < h:
            idx = fy * w + fx
            if action == 2:
                k = kind[idx]
                if k == EMPTY or k == GOAL or (k == DOOR and door[idx] == D_OPEN):
                    astate[AX] = fx
                    astate[AY] = fy
                    if k == GOAL:
                        reward = 1.0 - 0.9 * (<double>astate[ASTEP] / <double>max_steps)
                        done = 1
            elif action == 3:
                if kind[idx] == KEY and astate[ACK] < 0:
                    astate[ACK] = KEY
                    astate[ACC] = color[idx]
                    kind[idx] = EMPTY
                    color[idx] = 0
            elif action == 4:
                if kind[idx] == EMPTY and astate[ACK] >= 0:
                    kind[idx] = <int8_t>astate[ACK]
                    color[idx] = <int8_t>astate[ACC]
                    astate[ACK] = -1
                    astate[ACC] = 0
            elif action == 5:
                if kind[idx] == DOOR:
                    ds = door[idx]
                    if ds == D_LOCKED:
                        if astate[ACK] == KEY and astate[ACC] == color[idx]:
                            door[idx] = D_OPEN
                    elif ds == D_CLOSED:
                        door[idx] = D_OPEN
                    else:
                        door[idx] = D_CLOSED
    if not done and astate[ASTEP] >= max_steps:
        done = 1
    astate[ADONE] = 1 if done else 0
    done_out[0] = done
    return reward


cdef void _c_encode(int8_t* kind, int8_t* color, int8_t* door,
                    int64_t* astate, int w, int h,
                    int obs_w, int obs_h, double* out) nogil:
    cdef int x, y, base, idx
    cdef int n = obs_w * obs_h * 3 + 6
    cdef int i
    for i in range(n):
        out[i] = 0.0
    for y in range(h):
        base = y * obs_w * 3
        for x in range(w):
            idx = y * w + x
            out[base + 3 * x] = <double>kind[idx] / 5.0
            out[base + 3 * x + 1] = <double>color[idx] / 5.0
            out[base + 3 * x + 2] = <double>door[idx] / 2.0
    out[(<int>astate[AY] * obs_w + <int>astate[AX]) * 3] = 1.0
    base = obs_w * obs_h * 3
    out[base + <int>astate[AHEAD]] = 1.0
    if astate[ACK] >= 0:
        out[base + 4] = <double>astate[ACK] / 5.0
        out[base + 5] = <double>astate[ACC] / 5.0


cdef double _c_forward(const double* obs, int d,
                       const double* w1, const double* b1, int n1,
                       const double* w2, const double* b2, int n2,
                       const double* wa, const double* ba, int na,
                       const double* wv, const double* bv,
                       double* h1, double* h2, double* probs,
                       double* lse_out) nogil:
    cdef int i, j
    cdef double xi, acc, m, s, value
    cdef const double* row
    for j in range(n1):
        h1[j] = b1[j]
    # Observations are mostly zeros (padding, empty cells); skip those columns.
    for i in range(d):
        xi = obs[i]
        if xi != 0.0:
            row = w1 + i * n1
            for j in range(n1):
                h1[j] += xi * row[j]
    for j in range(n1):
        h1[j] = tanh(h1[j])
    for j in range(n2):
        acc = b2[j]
        for i in range(n1):
            acc += h1[i] * w2[i * n2 + j]
        h2[j] = tanh(acc)
    m = -1e300
    for j in range(na):
        acc = ba[j]
        for i in range(n2):
            acc += h2[i] * wa[i * na + j]
        probs[j] = acc
        if acc > m:
            m = acc
    s = 0.0
    for j in range(na):
        probs[j] = exp(probs[j] - m)
        s += probs[j]
    for j in range(na):
        probs[j] /= s
    lse_out[0] = m + log(s)
    value = bv[0]
    for i in range(n2):
        value += h2[i] * wv[i]
    return value


cdef inline int _c_sample(const double* probs, int na, double u) nogil:
    cdef int a
    cdef double acc = 0.0
    for a in range(na):
        acc += probs[a]
        if u < acc:
            return a
    return na - 1


cdef double _c_goal_rewards(int8_t* kind, int8_t* door, int64_t* astate,
                            int w, int64_t goal_x, int64_t goal_y,
                            const int64_t* door_xy,
                            const int8_t* gfn, const int8_t* gcolor,
                            const double* grew, uint8_t* gachv, int m,
                            double* rintg_row) nogil:
    cdef int l, fn, idx
    cdef int64_t dx, dy
    cdef bint ok
    cdef double r, total = 0.0
    for l in range(m):
        r = 0.0
        if gachv[l] == 0:
            fn = gfn[l]
            if fn == 0:
                ok = astate[ACK] == KEY and astate[ACC] == gcolor[l]
            elif fn == 1:
                dx = door_xy[2 * gcolor[l]]
                dy = door_xy[2 * gcolor[l] + 1]
                idx = <int>(dy * w + dx)
                ok = dx >= 0 and door[idx] == D_OPEN and kind[idx] == DOOR
            else:
                ok = astate[AX] == goal_x and astate[AY] == goal_y
            if ok:
                gachv[l] = 1
                r = grew[l]
        rintg_row[l] = r
        total += r
    return total


# -- module-level wrappers (same signatures as _pycore) -------------------------

def env_step(cnp.int8_t[:, ::1] kind, cnp.int8_t[:, ::1] color,
             cnp.int8_t[:, ::1] door, int64_t[::1] astate,
             max_steps, goal_x, goal_y, action):
    cdef bint done = 0
    cdef int h = kind.shape[0], w = kind.shape[1]
    cdef double reward = _c_env_step(&kind[0, 0], &color[0, 0], &door[0, 0],
                                     &astate[0], w, h, max_steps,
                                     goal_x, goal_y, action, &done)
    return reward, bool(done)


def encode_obs(cnp.int8_t[:, ::1] kind, cnp.int8_t[:, ::1] color,
               cnp.int8_t[:, ::1] door, int64_t[::1] astate,
               obs_w, obs_h, double[::1] out):
    cdef int h = kind.shape[0], w = kind.shape[1]
    _c_encode(&kind[0, 0], &color[0, 0], &door[0, 0], &astate[0],
              w, h, obs_w, obs_h, &out[0])


def policy_forward(double[::1] obs,
                   double[:, ::1] w1, double[::1] b1,
                   double[:, ::1] w2, double[::1] b2,
                   double[:, ::1] wa, double[::1] ba,
                   double[:, ::1] wv, double[::1] bv,
                   double[::1] probs_out):
    cdef double lse = 0.0
    cdef int d = w1.shape[0], n1 = w1.shape[1]
    cdef int n2 = w2.shape[1], na = wa.shape[1]
    h1_arr = np.empty(n1, dtype=np.float64)
    h2_arr = np.empty(n2, dtype=np.float64)
    cdef double[::1] h1 = h1_arr
    cdef double[::1] h2 = h2_arr
    cdef double value = _c_forward(&obs[0], d, &w1[0, 0], &b1[0], n1,
                                   &w2[0, 0], &b2[0], n2,
                                   &wa[0, 0], &ba[0], na,
                                   &wv[0, 0], &bv[0],
                                   &h1[0], &h2[0], &probs_out[0], &lse)
    return value, lse


def run_segment(cnp.int8_t[:, ::1] kind, cnp.int8_t[:, ::1] color,
                cnp.int8_t[:, ::1] door, int64_t[::1] astate,
                uint64_t[::1] act_rng, max_steps, goal_x, goal_y,
                obs_w, obs_h,
                double[:, ::1] w1, double[::1] b1,
                double[:, ::1] w2, double[::1] b2,
                double[:, ::1] wa, double[::1] ba,
                double[:, ::1] wv, double[::1] bv,
                cnp.int8_t[::1] gfn, cnp.int8_t[::1] gcolor,
                double[::1] grew, uint8_t[::1] gachv,
                int64_t[:, ::1] door_xy,
                double[:, ::1] obs_out, int64_t[::1] act_out,
                double[::1] logp_out, double[::1] val_out,
                double[::1] rext_out, double[::1] rint_out,
                double[:, ::1] rintg_out, uint8_t[::1] done_out,
                t0):
    cdef Py_ssize_t T = act_out.shape[0]
    cdef Py_ssize_t t = t0
    cdef int a
    cdef int h = kind.shape[0], w = kind.shape[1]
    cdef int c_obs_w = obs_w, c_obs_h = obs_h
    cdef int d = w1.shape[0], n1 = w1.shape[1]
    cdef int n2 = w2.shape[1], na = wa.shape[1]
    cdef int m = gfn.shape[0]
    cdef int64_t c_max = max_steps, c_gx = goal_x, c_gy = goal_y
    cdef double value, lse, reward
    cdef bint done = 0
    cdef int8_t* kp = &kind[0, 0]
    cdef int8_t* cp = &color[0, 0]
    cdef int8_t* dp = &door[0, 0]
    cdef int64_t* ap = &astate[0]
    cdef uint64_t* rngp = &act_rng[0]
    cdef const double* w1p = &w1[0, 0]
    cdef const double* w2p = &w2[0, 0]
    cdef const double* wap = &wa[0, 0]
    cdef const double* wvp = &wv[0, 0]
    cdef const double* b1p = &b1[0]
    cdef const double* b2p = &b2[0]
    cdef const double* bap = &ba[0]
    cdef const double* bvp = &bv[0]
    cdef const int8_t* gfnp = NULL
    cdef const int8_t* gcolp = NULL
    cdef const double* grewp = NULL
    cdef uint8_t* gachp = NULL
    cdef double* rintg_base = NULL
    cdef Py_ssize_t rintg_stride = 0
    if m > 0:
        gfnp = &gfn[0]
        gcolp = &gcolor[0]
        grewp = &grew[0]
        gachp = &gachv[0]
        rintg_base = &rintg_out[0, 0]
        rintg_stride = rintg_out.shape[1]
    cdef const int64_t* dxyp = &door_xy[0, 0]
    cdef double* obs_base = &obs_out[0, 0]
    cdef Py_ssize_t obs_stride = obs_out.shape[1]
    cdef double* obs_row
    cdef double dummy_rintg = 0.0

    h1_arr = np.empty(n1, dtype=np.float64)
    h2_arr = np.empty(n2, dtype=np.float64)
    probs_arr = np.empty(na, dtype=np.float64)
    cdef double* h1 = <double*>cnp.PyArray_DATA(h1_arr)
    cdef double* h2 = <double*>cnp.PyArray_DATA(h2_arr)
    cdef double* probs = <double*>cnp.PyArray_DATA(probs_arr)

    with nogil:
        while t < T:
            obs_row = obs_base + t * obs_stride
            _c_encode(kp, cp, dp, ap, w, h, c_obs_w, c_obs_h, obs_row)
            value = _c_forward(obs_row, d, w1p, b1p, n1, w2p, b2p, n2,
                               wap, bap, na, wvp, bvp, h1, h2, probs, &lse)
            a = _c_sample(probs, na, _rng_uniform(rngp))
            reward = _c_env_step(kp, cp, dp, ap, w, h, c_max, c_gx, c_gy,
                                 a, &done)
            act_out[t] = a
            logp_out[t] = log(probs[a])
            val_out[t] = value
            rext_out[t] = reward
            if m > 0:
                rint_out[t] = _c_goal_rewards(
                    kp, dp, ap, w, c_gx, c_gy, dxyp, gfnp, gcolp, grewp,
                    gachp, m, rintg_base + t * rintg_stride)
            else:
                rint_out[t] = 0.0
            done_out[t] = 1 if done else 0
            t += 1
            if done:
                break
    return int(t)


def run_episode(cnp.int8_t[:, ::1] kind, cnp.int8_t[:, ::1] color,
                cnp.int8_t[:, ::1] door, int64_t[::1] astate,
                uint64_t[::1] act_rng, max_steps, goal_x, goal_y,
                obs_w, obs_h,
                double[:, ::1] w1, double[::1] b1,
                double[:, ::1] w2, double[::1] b2,
                double[:, ::1] wa, double[::1] ba,
                double[:, ::1] wv, double[::1] bv):
    cdef int h = kind.shape[0], w = kind.shape[1]
    cdef int c_obs_w = obs_w, c_obs_h = obs_h
    cdef int d = w1.shape[0], n1 = w1.shape[1]
    cdef int n2 = w2.shape[1], na = wa.shape[1]
    cdef int64_t c_max = max_steps, c_gx = goal_x, c_gy = goal_y
    cdef double total = 0.0, lse
    cdef int64_t steps = 0
    cdef int a
    cdef bint done = 0
    cdef int8_t* kp = &kind[0, 0]
    cdef int8_t* cp = &color[0, 0]
    cdef int8_t* dp = &door[0, 0]
    cdef int64_t* ap = &astate[0]
    cdef uint64_t* rngp = &act_rng[0]
    cdef const double* w1p = &w1[0, 0]
    cdef const double* w2p = &w2[0, 0]
    cdef const double* wap = &wa[0, 0]
    cdef const double* wvp = &wv[0, 0]
    cdef const double* b1p = &b1[0]
    cdef const double* b2p = &b2[0]
    cdef const double* bap = &ba[0]
    cdef const double* bvp = &bv[0]

    obs_arr = np.zeros(c_obs_w * c_obs_h * 3 + 6, dtype=np.float64)
    h1_arr = np.empty(n1, dtype=np.float64)
    h2_arr = np.empty(n2, dtype=np.float64)
    probs_arr = np.empty(na, dtype=np.float64)
    cdef double* obs = <double*>cnp.PyArray_DATA(obs_arr)
    cdef double* h1 = <double*>cnp.PyArray_DATA(h1_arr)
    cdef double* h2 = <double*>cnp.PyArray_DATA(h2_arr)
    cdef double* probs = <double*>cnp.PyArray_DATA(probs_arr)

    with nogil:
        while not done:
            _c_encode(kp, cp, dp, ap, w, h, c_obs_w, c_obs_h, obs)
            _c_forward(obs, d, w1p, b1p, n1, w2p, b2p, n2,
                       wap, bap, na, wvp, bvp, h1, h2, probs, &lse)
            a = _c_sample(probs, na, _rng_uniform(rngp))
            total += _c_env_step(kp, cp, dp, ap, w, h, c_max, c_gx, c_gy,
                                 a, &done)
            steps += 1
    return total, int(steps)
