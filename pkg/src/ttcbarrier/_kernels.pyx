# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the hot numeric kernels.

Same API and same floating-point expressions as ``ttcbarrier._kernels_py``;
the two backends must stay bit-identical. See the fallback module for the
documented semantics.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

CLASS_SAFE = 0
CLASS_CONFLICT = 1
CLASS_COLLISION = 2

B_DEFINED = 0
B_STRUCTURALLY_SAFE = 1
B_VIOLATED = 2

cdef int _C_SAFE = 0
cdef int _C_CONFLICT = 1
cdef int _C_COLLISION = 2

cdef int _B_DEFINED = 0
cdef int _B_STRUCT = 1
cdef int _B_VIOLATED = 2


def classify_pairs(gap, dv, double t_safe):
    """Safety class codes for arrays of (gap, closing speed) samples."""
    cdef double[::1] g = np.ascontiguousarray(gap, dtype=np.float64)
    cdef double[::1] d = np.ascontiguousarray(dv, dtype=np.float64)
    out_arr = np.zeros(g.shape[0], dtype=np.int8)
    cdef signed char[::1] out = out_arr
    cdef Py_ssize_t i
    cdef double gi, di
    for i in range(g.shape[0]):
        gi = g[i]
        di = d[i]
        if gi <= 0.0:
            out[i] = _C_COLLISION
        elif di > 0.0 and gi / di < t_safe:
            out[i] = _C_CONFLICT
        else:
            out[i] = _C_SAFE
    return out_arr


def ttc_pairs(gap, dv):
    """TTC in seconds; NaN where the pair is not closing or overlaps."""
    cdef double[::1] g = np.ascontiguousarray(gap, dtype=np.float64)
    cdef double[::1] d = np.ascontiguousarray(dv, dtype=np.float64)
    out_arr = np.full(g.shape[0], np.nan)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i
    for i in range(g.shape[0]):
        if g[i] > 0.0 and d[i] > 0.0:
            out[i] = g[i] / d[i]
    return out_arr


def grid_search(g_axis, d_axis, af_axis, al_axis, double t_safe, bint closed,
                double eps):
    """First grid point with B >= 0 and dB/dt < 0 (plus the filter constraint
    in closed mode); see the fallback module for the scan order contract."""
    cdef double[::1] gs = np.ascontiguousarray(g_axis, dtype=np.float64)
    cdef double[::1] ds = np.ascontiguousarray(d_axis, dtype=np.float64)
    cdef double[::1] afs = np.ascontiguousarray(af_axis, dtype=np.float64)
    cdef double[::1] als = np.ascontiguousarray(al_axis, dtype=np.float64)
    cdef Py_ssize_t ig, id_, ia, ij
    cdef double g, d, b, af, al, bdot
    for ig in range(gs.shape[0]):
        g = gs[ig]
        if g <= 0.0:
            continue
        for id_ in range(ds.shape[0]):
            d = ds[id_]
            if d <= eps:
                continue
            b = g / d - t_safe
            if b < 0.0:
                continue
            for ia in range(afs.shape[0]):
                af = afs[ia]
                for ij in range(als.shape[0]):
                    al = als[ij]
                    bdot = -1.0 - g * (af - al) / (d * d)
                    if bdot >= 0.0:
                        continue
                    if closed and af > al - d * d / g:
                        continue
                    return (g, d, af, al, b, bdot)
    return None


def rollout_steps(double x_f0, double v_f0, double x_l0, double v_l0,
                  double leader_length, command, lead, double t_safe,
                  double engage_margin, double a_min, double a_max,
                  double eps, double dt, bint filter_enabled):
    """Euler rollout of a follower-leader pair with the acceleration filter."""
    cdef double[::1] cmd = np.ascontiguousarray(command, dtype=np.float64)
    cdef double[::1] acc_l = np.ascontiguousarray(lead, dtype=np.float64)
    cdef Py_ssize_t n = acc_l.shape[0]

    t_arr = np.zeros(n + 1)
    x_f_arr = np.zeros(n + 1)
    v_f_arr = np.zeros(n + 1)
    x_l_arr = np.zeros(n + 1)
    v_l_arr = np.zeros(n + 1)
    a_f_arr = np.full(n + 1, np.nan)
    a_l_arr = np.full(n + 1, np.nan)
    b_kind_arr = np.zeros(n + 1, dtype=np.int8)
    b_arr = np.full(n + 1, np.nan)
    bdot_arr = np.full(n + 1, np.nan)
    engaged_arr = np.zeros(n + 1, dtype=np.uint8)
    infeasible_arr = np.zeros(n + 1, dtype=np.uint8)

    cdef double[::1] t = t_arr
    cdef double[::1] x_f = x_f_arr
    cdef double[::1] v_f = v_f_arr
    cdef double[::1] x_l = x_l_arr
    cdef double[::1] v_l = v_l_arr
    cdef double[::1] a_f = a_f_arr
    cdef double[::1] a_l = a_l_arr
    cdef signed char[::1] b_kind = b_kind_arr
    cdef double[::1] b = b_arr
    cdef double[::1] bdot = bdot_arr
    cdef unsigned char[::1] engaged = engaged_arr
    cdef unsigned char[::1] infeasible = infeasible_arr

    x_f[0] = x_f0
    v_f[0] = v_f0
    x_l[0] = x_l0
    v_l[0] = v_l0

    cdef Py_ssize_t k
    cdef int kind
    cdef bint engage
    cdef double gap, dv, al_k, applied, bound, nv, nl
    cdef double nx_f, nv_f, nx_l, nv_l, ngap, ndv
    for k in range(n + 1):
        gap = x_l[k] - x_f[k] - leader_length
        dv = v_f[k] - v_l[k]
        if gap <= 0.0:
            kind = _B_VIOLATED
        elif dv <= 0.0:
            kind = _B_STRUCT
        else:
            kind = _B_DEFINED
            b[k] = gap / dv - t_safe
        b_kind[k] = kind
        if k == n:
            break

        al_k = acc_l[k]
        applied = cmd[k]
        if applied < a_min:
            applied = a_min
        elif applied > a_max:
            applied = a_max
        if kind == _B_VIOLATED:
            applied = a_min
        elif filter_enabled and kind == _B_DEFINED:
            # engage at the margin, or when the state simulated one step
            # ahead under the raw command would reach it (see fallback)
            engage = b[k] <= engage_margin
            if not engage:
                nx_f = x_f[k] + v_f[k] * dt
                nv = v_f[k] + applied * dt
                nv_f = nv if nv > 0.0 else 0.0
                nx_l = x_l[k] + v_l[k] * dt
                nl = v_l[k] + al_k * dt
                nv_l = nl if nl > 0.0 else 0.0
                ngap = nx_l - nx_f - leader_length
                ndv = nv_f - nv_l
                if ngap <= 0.0:
                    engage = True
                elif ndv > 0.0 and ngap / ndv - t_safe <= engage_margin:
                    engage = True
            if engage:
                bound = al_k - dv * dv / gap
                if bound < a_min:
                    infeasible[k] = 1
                if applied > bound:
                    engaged[k] = 1
                    applied = bound if bound > a_min else a_min
        if kind == _B_DEFINED and dv > eps:
            bdot[k] = -1.0 - gap * (applied - al_k) / (dv * dv)
        a_f[k] = applied
        a_l[k] = al_k

        x_f[k + 1] = x_f[k] + v_f[k] * dt
        nv = v_f[k] + applied * dt
        v_f[k + 1] = nv if nv > 0.0 else 0.0
        x_l[k + 1] = x_l[k] + v_l[k] * dt
        nl = v_l[k] + al_k * dt
        v_l[k + 1] = nl if nl > 0.0 else 0.0
        t[k + 1] = t[k] + dt

    return {
        "t": t_arr,
        "x_follower": x_f_arr,
        "v_follower": v_f_arr,
        "x_leader": x_l_arr,
        "v_leader": v_l_arr,
        "a_follower": a_f_arr,
        "a_leader": a_l_arr,
        "b_kind": b_kind_arr,
        "b": b_arr,
        "b_dot": bdot_arr,
        "engaged": engaged_arr.astype(bool),
        "infeasible": infeasible_arr.astype(bool),
    }
