"""Numpy implementations of the hot numeric kernels.

Mirrors the API of the compiled extension ``ttcbarrier._kernels`` and is
selected by ``ttcbarrier._backend`` when the extension is unavailable or
disabled. Arithmetic expressions are kept identical to the compiled loops
so both backends produce bit-identical results.
"""
from __future__ import annotations

import numpy as np

CLASS_SAFE = 0
CLASS_CONFLICT = 1
CLASS_COLLISION = 2

B_DEFINED = 0
B_STRUCTURALLY_SAFE = 1
B_VIOLATED = 2


def classify_pairs(gap, dv, t_safe):
    """Safety class codes for arrays of (gap, closing speed) samples."""
    gap = np.asarray(gap, dtype=np.float64)
    dv = np.asarray(dv, dtype=np.float64)
    out = np.zeros(gap.shape, dtype=np.int8)
    collision = gap <= 0.0
    closing = ~collision & (dv > 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        conflict = closing & (gap / dv < t_safe)
    out[collision] = CLASS_COLLISION
    out[conflict] = CLASS_CONFLICT
    return out


def ttc_pairs(gap, dv):
    """TTC in seconds; NaN where the pair is not closing or overlaps."""
    gap = np.asarray(gap, dtype=np.float64)
    dv = np.asarray(dv, dtype=np.float64)
    out = np.full(gap.shape, np.nan)
    finite = (gap > 0.0) & (dv > 0.0)
    out[finite] = gap[finite] / dv[finite]
    return out


def grid_search(g_axis, d_axis, af_axis, al_axis, t_safe, closed, eps):
    """First grid point with B >= 0 and dB/dt < 0, scanning gap-major then
    closing speed, follower acceleration, leader acceleration.

    In closed mode the point must additionally satisfy the safety-filter
    constraint a_f <= a_l - d^2/g. Points with g <= 0 or d <= eps are
    outside the barrier's domain and are skipped. Returns
    (g, d, a_f, a_l, b, bdot) or None.
    """
    g_axis = np.asarray(g_axis, dtype=np.float64)
    d_axis = np.asarray(d_axis, dtype=np.float64)
    af = np.asarray(af_axis, dtype=np.float64)[:, None]
    al = np.asarray(al_axis, dtype=np.float64)[None, :]
    n_al = al.shape[1]
    for g in g_axis:
        if g <= 0.0:
            continue
        for d in d_axis:
            if d <= eps:
                continue
            b = g / d - t_safe
            if b < 0.0:
                continue
            viol = (-1.0 - g * (af - al) / (d * d)) < 0.0
            if closed:
                viol &= af <= al - d * d / g
            if viol.any():
                flat = int(np.argmax(viol))
                i, j = divmod(flat, n_al)
                af_v = float(af[i, 0])
                al_v = float(al[0, j])
                bdot = -1.0 - g * (af_v - al_v) / (d * d)
                return (float(g), float(d), af_v, al_v, float(b), bdot)
    return None


def rollout_steps(
    x_f0,
    v_f0,
    x_l0,
    v_l0,
    leader_length,
    command,
    lead,
    t_safe,
    engage_margin,
    a_min,
    a_max,
    eps,
    dt,
    filter_enabled,
):
    """Euler rollout of a follower-leader pair with the acceleration filter.

    ``command`` and ``lead`` are per-step accelerations of equal length n.
    Returns a dict of arrays of length n+1; the final row carries state and
    barrier values only (its acceleration entries are NaN).
    """
    command = np.asarray(command, dtype=np.float64)
    lead = np.asarray(lead, dtype=np.float64)
    n = lead.shape[0]
    t = np.zeros(n + 1)
    x_f = np.zeros(n + 1)
    v_f = np.zeros(n + 1)
    x_l = np.zeros(n + 1)
    v_l = np.zeros(n + 1)
    a_f = np.full(n + 1, np.nan)
    a_l = np.full(n + 1, np.nan)
    b_kind = np.zeros(n + 1, dtype=np.int8)
    b = np.full(n + 1, np.nan)
    bdot = np.full(n + 1, np.nan)
    engaged = np.zeros(n + 1, dtype=np.uint8)
    infeasible = np.zeros(n + 1, dtype=np.uint8)

    x_f[0] = x_f0
    v_f[0] = v_f0
    x_l[0] = x_l0
    v_l[0] = v_l0

    for k in range(n + 1):
        gap = x_l[k] - x_f[k] - leader_length
        dv = v_f[k] - v_l[k]
        if gap <= 0.0:
            kind = B_VIOLATED
        elif dv <= 0.0:
            kind = B_STRUCTURALLY_SAFE
        else:
            kind = B_DEFINED
            b[k] = gap / dv - t_safe
        b_kind[k] = kind
        if k == n:
            break

        al_k = lead[k]
        applied = command[k]
        if applied < a_min:
            applied = a_min
        elif applied > a_max:
            applied = a_max
        if kind == B_VIOLATED:
            # post-contact: brake fully so the trace stays total
            applied = a_min
        elif filter_enabled and kind == B_DEFINED:
            # engage at the margin, or when the state simulated one step
            # ahead under the raw command would reach it: threshold-only
            # engagement can be jumped over in one step when the barrier
            # falls fast (small closing speed, strong relative acceleration)
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
        if kind == B_DEFINED and dv > eps:
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
        "t": t,
        "x_follower": x_f,
        "v_follower": v_f,
        "x_leader": x_l,
        "v_leader": v_l,
        "a_follower": a_f,
        "a_leader": a_l,
        "b_kind": b_kind,
        "b": b,
        "b_dot": bdot,
        "engaged": engaged.astype(bool),
        "infeasible": infeasible.astype(bool),
    }
