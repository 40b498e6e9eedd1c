"""Compiled inner loop of the stochastic descent-ascent solver.

The solver flattens its objective and constraint into plain arrays so the
whole iteration runs inside one jitted function.  Leaf constraints are either
empirical (rows of a shared sample matrix, identified by [lo, hi) ranges) or
affine in the full iterate; a multi-leaf constraint is a pointwise max whose
active leaf is re-identified every step by exact evaluation.

The iterate ``w`` holds the feature coefficients in its first ``d_ball``
entries; joint problems append one extra coordinate (a free level) at index
``alpha_dim`` that is box-clamped instead of ball-projected.
"""

from __future__ import annotations

import numpy as np
from numba import njit

OBJ_EMPIRICAL = 0
OBJ_AFFINE = 1

LEAF_EMPIRICAL = 0
LEAF_EMPIRICAL_ALPHA = 1
LEAF_AFFINE = 2

LOSS_HINGE = 0
LOSS_LOGISTIC = 1

STATUS_OK = 0
STATUS_BALL_VIOLATION = 1
STATUS_NEGATIVE_DUAL = 2
STATUS_NONFINITE = 3

_INV_LN2 = 1.4426950408889634


@njit(cache=True, inline="always")
def _loss_value(kind, c, z):
    if kind == LOSS_HINGE:
        v = 1.0 + z
        if v < 0.0:
            return 0.0
        if v > c:
            return c
        return v
    if z > 35.0:
        return z * _INV_LN2
    return np.log1p(np.exp(z)) * _INV_LN2


@njit(cache=True, inline="always")
def _loss_slope(kind, c, z):
    if kind == LOSS_HINGE:
        if z < -1.0 or z >= c - 1.0:
            return 0.0
        return 1.0
    if z >= 0.0:
        return _INV_LN2 / (1.0 + np.exp(-z))
    ez = np.exp(z)
    return _INV_LN2 * ez / (1.0 + ez)


@njit(cache=True, inline="always")
def _loss_value_slope(kind, c, z):
    """Fused value and slope sharing one exponential."""
    if kind == LOSS_HINGE:
        v = 1.0 + z
        if v < 0.0:
            return 0.0, 0.0
        if v >= c:
            return c, 0.0
        return v, 1.0
    if z > 35.0:
        return z * _INV_LN2, _INV_LN2
    if z >= 0.0:
        emz = np.exp(-z)
        return (z + np.log1p(emz)) * _INV_LN2, _INV_LN2 / (1.0 + emz)
    ez = np.exp(z)
    return np.log1p(ez) * _INV_LN2, _INV_LN2 * ez / (1.0 + ez)


@njit(cache=True)
def run_chunk(
    w,
    lam,
    lam_max,
    wsum,
    t_start,
    n_steps,
    eta,
    gamma,
    ball_b,
    d_ball,
    alpha_dim,
    alpha_lo,
    alpha_hi,
    obj_kind,
    obj_sign,
    obj_x,
    obj_coef,
    obj_shift,
    loss_kind,
    loss_c,
    leaf_kind,
    leaf_sign,
    leaf_offset,
    leaf_lo,
    leaf_hi,
    x_rows,
    leaf_coef,
    u_f,
    u_g,
    trace_every,
    tr_iter,
    tr_f,
    tr_g,
    tr_lam,
    debug,
):
    p = w.shape[0]
    m = leaf_kind.shape[0]
    n_f = obj_x.shape[0]
    fgrad = np.zeros(p)
    ggrad = np.zeros(p)
    n_traced = 0
    bb2 = ball_b * ball_b

    for s in range(n_steps):
        t = t_start + s
        tracing = trace_every > 0 and (t % trace_every) == 0

        # stochastic objective gradient at the current iterate
        fval = 0.0
        if obj_kind == OBJ_EMPIRICAL:
            i = int(u_f[s] * n_f)
            if i >= n_f:
                i = n_f - 1
            z = 0.0
            for j in range(d_ball):
                z += w[j] * obj_x[i, j]
            z *= obj_sign
            sl = _loss_slope(loss_kind, loss_c, z) * obj_sign
            for j in range(d_ball):
                fgrad[j] = sl * obj_x[i, j]
            for j in range(d_ball, p):
                fgrad[j] = 0.0
            if tracing:
                fval = _loss_value(loss_kind, loss_c, z)
        else:
            fval = obj_shift
            for j in range(p):
                fgrad[j] = obj_coef[j]
                fval += obj_coef[j] * w[j]

        # active leaf of the max composition (exact evaluation, lowest index wins ties)
        k = 0
        if m > 1:
            best = -1.0e300
            for kk in range(m):
                if leaf_kind[kk] == LEAF_AFFINE:
                    v = -leaf_offset[kk]
                    for j in range(p):
                        v += leaf_coef[kk, j] * w[j]
                else:
                    acc = 0.0
                    sg = leaf_sign[kk]
                    for rr in range(leaf_lo[kk], leaf_hi[kk]):
                        z = 0.0
                        for j in range(d_ball):
                            z += w[j] * x_rows[rr, j]
                        acc += _loss_value(loss_kind, loss_c, sg * z)
                    v = acc / (leaf_hi[kk] - leaf_lo[kk]) - leaf_offset[kk]
                    if leaf_kind[kk] == LEAF_EMPIRICAL_ALPHA:
                        v -= w[alpha_dim]
                if v > best:
                    best = v
                    k = kk

        # one-datum constraint value and subgradient at the current iterate
        if leaf_kind[k] == LEAF_AFFINE:
            gval = -leaf_offset[k]
            for j in range(p):
                ggrad[j] = leaf_coef[k, j]
                gval += leaf_coef[k, j] * w[j]
        else:
            n_k = leaf_hi[k] - leaf_lo[k]
            i = int(u_g[s] * n_k)
            if i >= n_k:
                i = n_k - 1
            i += leaf_lo[k]
            z = 0.0
            for j in range(d_ball):
                z += w[j] * x_rows[i, j]
            z *= leaf_sign[k]
            gval, sl = _loss_value_slope(loss_kind, loss_c, z)
            gval -= leaf_offset[k]
            sl *= leaf_sign[k]
            for j in range(d_ball):
                ggrad[j] = sl * x_rows[i, j]
            for j in range(d_ball, p):
                ggrad[j] = 0.0
            if leaf_kind[k] == LEAF_EMPIRICAL_ALPHA:
                gval -= w[alpha_dim]
                ggrad[alpha_dim] = -1.0

        # primal step, ball projection on the feature block, box clamp on the level
        for j in range(p):
            w[j] -= eta * (fgrad[j] + lam * ggrad[j])
        nrm2 = 0.0
        for j in range(d_ball):
            nrm2 += w[j] * w[j]
        if nrm2 > bb2:
            sc = ball_b / np.sqrt(nrm2)
            for j in range(d_ball):
                w[j] *= sc
        if alpha_dim >= 0:
            if w[alpha_dim] < alpha_lo:
                w[alpha_dim] = alpha_lo
            elif w[alpha_dim] > alpha_hi:
                w[alpha_dim] = alpha_hi

        # dual step uses the constraint sample taken at the pre-update iterate
        lam = (1.0 - gamma * eta) * lam + eta * gval
        if lam < 0.0:
            lam = 0.0
        if lam > lam_max:
            lam_max = lam

        for j in range(p):
            wsum[j] += w[j]

        ok = np.isfinite(lam)
        for j in range(p):
            if not np.isfinite(w[j]):
                ok = False
        if not ok:
            return STATUS_NONFINITE, t, lam, lam_max, n_traced

        if debug == 1:
            nrm2 = 0.0
            for j in range(d_ball):
                nrm2 += w[j] * w[j]
            if nrm2 > bb2 * (1.0 + 1e-9) + 1e-12:
                return STATUS_BALL_VIOLATION, t, lam, lam_max, n_traced
            if lam < 0.0:
                return STATUS_NEGATIVE_DUAL, t, lam, lam_max, n_traced

        if tracing:
            tr_iter[n_traced] = t
            tr_f[n_traced] = fval
            tr_g[n_traced] = gval
            tr_lam[n_traced] = lam
            n_traced += 1

    return STATUS_OK, t_start + n_steps - 1, lam, lam_max, n_traced
