# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled stage-solve core.

Runs the full DS-GDA loop in C for the linear quadratic stage family
(terminal or two-hidden-layer fitted next values) and sweeps collocation
points in parallel with OpenMP.  The update rule, stopping test, ascent
refinement and candidate selection mirror the python solver line for
line; gradients match the analytic ones the stage builders attach.  All
randomness lives outside: starts arrive pre-drawn, so a batch is
deterministic and independent of thread scheduling.
"""

from cython.parallel cimport prange
from libc.stdlib cimport free, malloc
from libc.math cimport INFINITY, NAN, isfinite, sqrt, tanh

import numpy as np

# weight-zero atom threshold; keep in sync with simplex.LAMBDA_MIN
cdef double _LAM_MIN = 1e-6
LAMBDA_MIN = 1e-6


cdef struct Ctx:
    int kind  # 0 primal, 1 dual
    int nt, dx, du, dv, na, dmin, dmax
    double tau, weight
    # spec arrays (row-major, borrowed)
    double* A
    double* tBu
    double* tBv
    double* R1
    double* R2
    double* R1s
    double* R2s
    double* G
    double* gb
    double* gc
    double* db_lo
    double* db_hi
    # feasible-set tables: rows of (kind, start, len); lo/hi over coordinates
    int nblk_min
    int* blk_min
    double* lo_min
    double* hi_min
    int nblk_max
    int* blk_max
    double* lo_max
    double* hi_max
    # next-value slice
    int vkind  # 0 terminal, 1 mlp
    int din, h1, h2
    double* W1
    double* b1
    double* W2
    double* b2
    double* W3
    double* b3
    double* in_shift
    double* in_scale
    double out_shift, out_scale
    # per-point data
    double* x0
    double* p
    double* base  # x0 + tau * A x0, filled once per point


# ---------------------------------------------------------------------------
# small dense helpers
# ---------------------------------------------------------------------------


cdef inline double _quad(double* R, double* u, int d) noexcept nogil:
    cdef int i, j
    cdef double acc, s = 0.0
    for i in range(d):
        acc = 0.0
        for j in range(d):
            acc += R[i * d + j] * u[j]
        s += u[i] * acc
    return s


cdef inline int _all_finite(double* g, int n) noexcept nogil:
    cdef int i
    for i in range(n):
        if not isfinite(g[i]):
            return 0
    return 1


cdef void _proj_simplex(double* z, int n, double* work) noexcept nogil:
    # sort-based Euclidean projection, same arithmetic as the python one
    cdef int i, j, rho = 1
    cdef double key, css = 0.0, theta = 0.0
    for i in range(n):
        work[i] = z[i]
    for i in range(1, n):
        key = work[i]
        j = i - 1
        while j >= 0 and work[j] < key:
            work[j + 1] = work[j]
            j -= 1
        work[j + 1] = key
    for i in range(n):
        css += work[i]
        if work[i] - (css - 1.0) / (i + 1.0) > 0.0:
            rho = i + 1
            theta = (css - 1.0) / rho
    for i in range(n):
        z[i] -= theta
        if z[i] < 0.0:
            z[i] = 0.0


cdef void _project(double* z, int nblk, int* blk, double* lo, double* hi,
                   double* work) noexcept nogil:
    cdef int b, st, ln, i
    for b in range(nblk):
        st = blk[3 * b + 1]
        ln = blk[3 * b + 2]
        if blk[3 * b] == 0:
            for i in range(st, st + ln):
                if z[i] < lo[i]:
                    z[i] = lo[i]
                elif z[i] > hi[i]:
                    z[i] = hi[i]
        else:
            _proj_simplex(z + st, ln, work)


# ---------------------------------------------------------------------------
# next-value slice: value and input gradient
# ---------------------------------------------------------------------------


cdef inline double _term_g(Ctx* c, double* x, int i) noexcept nogil:
    cdef double acc, s = 0.0
    cdef int d, e
    cdef double* Gi = c.G + i * c.dx * c.dx
    for d in range(c.dx):
        acc = 0.0
        for e in range(c.dx):
            acc += Gi[d * c.dx + e] * x[e]
        s += x[d] * acc + c.gb[i * c.dx + d] * x[d]
    return s + c.gc[i]


cdef inline void _term_grad(Ctx* c, double* x, int i, double* out) noexcept nogil:
    # (G_i + G_i^T) x + b_i
    cdef double acc
    cdef int d, e
    cdef double* Gi = c.G + i * c.dx * c.dx
    for d in range(c.dx):
        acc = 0.0
        for e in range(c.dx):
            acc += (Gi[d * c.dx + e] + Gi[e * c.dx + d]) * x[e]
        out[d] = acc + c.gb[i * c.dx + d]


cdef double _mlp_forward(Ctx* c, double* x, double* q, double* wk, int want_grad,
                         double* gx, double* gq) noexcept nogil:
    # wk: zn[din] h1v[h1] h2v[h2] g2[h2] g1[h1]
    cdef double* zn = wk
    cdef double* h1v = zn + c.din
    cdef double* h2v = h1v + c.h1
    cdef double* g2 = h2v + c.h2
    cdef double* g1 = g2 + c.h2
    cdef int i, j
    cdef double acc, out
    for i in range(c.dx):
        zn[i] = (x[i] - c.in_shift[i]) / c.in_scale[i]
    for i in range(c.nt):
        zn[c.dx + i] = (q[i] - c.in_shift[c.dx + i]) / c.in_scale[c.dx + i]
    for j in range(c.h1):
        acc = c.b1[j]
        for i in range(c.din):
            acc += zn[i] * c.W1[i * c.h1 + j]
        h1v[j] = tanh(acc)
    for j in range(c.h2):
        acc = c.b2[j]
        for i in range(c.h1):
            acc += h1v[i] * c.W2[i * c.h2 + j]
        h2v[j] = tanh(acc)
    out = c.b3[0]
    for j in range(c.h2):
        out += h2v[j] * c.W3[j]
    if want_grad:
        for j in range(c.h2):
            g2[j] = c.W3[j] * (1.0 - h2v[j] * h2v[j])
        for i in range(c.h1):
            acc = 0.0
            for j in range(c.h2):
                acc += c.W2[i * c.h2 + j] * g2[j]
            g1[i] = acc * (1.0 - h1v[i] * h1v[i])
        for i in range(c.dx):
            acc = 0.0
            for j in range(c.h1):
                acc += c.W1[i * c.h1 + j] * g1[j]
            gx[i] = acc * c.out_scale / c.in_scale[i]
        for i in range(c.nt):
            acc = 0.0
            for j in range(c.h1):
                acc += c.W1[(c.dx + i) * c.h1 + j] * g1[j]
            gq[i] = acc * c.out_scale / c.in_scale[c.dx + i]
    return out * c.out_scale + c.out_shift


cdef double _slice_value(Ctx* c, double* x, double* q, double* wk) noexcept nogil:
    cdef int i
    cdef double best, v, s
    if c.vkind == 1:
        return _mlp_forward(c, x, q, wk, 0, NULL, NULL)
    if c.kind == 0:
        s = 0.0
        for i in range(c.nt):
            s += q[i] * _term_g(c, x, i)
        return s
    best = -INFINITY
    for i in range(c.nt):
        v = q[i] - _term_g(c, x, i)
        if v > best:
            best = v
    return best


cdef double _slice_val_grad(Ctx* c, double* x, double* q, double* gx, double* gq,
                            double* wk) noexcept nogil:
    # wk needs din + 2*h1 + 2*h2 (mlp) or dx (terminal scratch)
    cdef int i, d, ib
    cdef double best, v, s, gi
    if c.vkind == 1:
        return _mlp_forward(c, x, q, wk, 1, gx, gq)
    if c.kind == 0:
        s = 0.0
        for d in range(c.dx):
            gx[d] = 0.0
        for i in range(c.nt):
            gi = _term_g(c, x, i)
            gq[i] = gi
            s += q[i] * gi
            _term_grad(c, x, i, wk)
            for d in range(c.dx):
                gx[d] += q[i] * wk[d]
        return s
    best = -INFINITY
    ib = 0
    for i in range(c.nt):
        v = q[i] - _term_g(c, x, i)
        gq[i] = 0.0
        if v > best:
            best = v
            ib = i
    gq[ib] = 1.0
    _term_grad(c, x, ib, gx)
    for d in range(c.dx):
        gx[d] = -gx[d]
    return best


# ---------------------------------------------------------------------------
# stage objectives and analytic gradients
# ---------------------------------------------------------------------------
#
# Flat packing matches the python builders:
#   primal min z = [u^1..u^I | alpha[:,0]..alpha[:,I-1]]   (columns!)
#   primal max y = [v^1..v^I]
#   dual   min z = [v^1..v^{I+1} | lambda | p_hat^1..p_hat^I]  (rows)
#   dual   max y = [u^1..u^{I+1}]


cdef inline void _advance(Ctx* c, double* u, double* v, double* xk) noexcept nogil:
    # xk = base + tau Bu u + tau Bv v  (base already holds x + tau A x)
    cdef int d, j
    cdef double acc
    for d in range(c.dx):
        acc = c.base[d]
        for j in range(c.du):
            acc += c.tBu[d * c.du + j] * u[j]
        for j in range(c.dv):
            acc += c.tBv[d * c.dv + j] * v[j]
        xk[d] = acc


cdef double _primal_obj(Ctx* c, double* z, double* y, double* wk) noexcept nogil:
    # wk: xk[dx] post[nt] | slice work
    cdef double* xk = wk
    cdef double* post = xk + c.dx
    cdef double* swk = post + c.nt
    cdef int k, i
    cdef double lam_k, lr, total = 0.0
    for k in range(c.nt):
        lam_k = 0.0
        for i in range(c.nt):
            lam_k += z[c.nt * c.du + i * c.nt + k] * c.p[i]
        if lam_k >= _LAM_MIN:
            for i in range(c.nt):
                post[i] = z[c.nt * c.du + i * c.nt + k] * c.p[i] / lam_k
        else:
            for i in range(c.nt):
                post[i] = c.p[i]
        _advance(c, z + k * c.du, y + k * c.dv, xk)
        lr = _quad(c.R1, z + k * c.du, c.du) - _quad(c.R2, y + k * c.dv, c.dv)
        total += lam_k * _slice_value(c, xk, post, swk) + c.tau * lam_k * lr
    return total


cdef void _primal_grad(Ctx* c, double* z, double* y, int side, double* out,
                       double* wk) noexcept nogil:
    # side 0: d/d z (fills dmin); side 1: d/d y (fills dmax)
    cdef double* xk = wk
    cdef double* post = xk + c.dx
    cdef double* gx = post + c.nt
    cdef double* gq = gx + c.dx
    cdef double* swk = gq + c.nt
    cdef int k, i, j, d, live
    cdef double lam_k, lr, val, acc, acc2, dot
    for k in range(c.nt):
        lam_k = 0.0
        for i in range(c.nt):
            lam_k += z[c.nt * c.du + i * c.nt + k] * c.p[i]
        live = lam_k >= _LAM_MIN
        if live:
            for i in range(c.nt):
                post[i] = z[c.nt * c.du + i * c.nt + k] * c.p[i] / lam_k
        else:
            for i in range(c.nt):
                post[i] = c.p[i]
        _advance(c, z + k * c.du, y + k * c.dv, xk)
        val = _slice_val_grad(c, xk, post, gx, gq, swk)
        if side == 0:
            for j in range(c.du):
                acc = 0.0
                for d in range(c.dx):
                    acc += gx[d] * c.tBu[d * c.du + j]
                acc2 = 0.0
                for i in range(c.du):
                    acc2 += z[k * c.du + i] * c.R1s[i * c.du + j]
                out[k * c.du + j] = lam_k * (acc + c.tau * acc2)
            lr = c.tau * (_quad(c.R1, z + k * c.du, c.du)
                          - _quad(c.R2, y + k * c.dv, c.dv))
            dot = 0.0
            if live:
                for i in range(c.nt):
                    dot += gq[i] * post[i]
            for i in range(c.nt):
                # dead atoms keep posterior p, so the chain term drops out
                acc = (gq[i] - dot) if live else 0.0
                out[c.nt * c.du + i * c.nt + k] = c.p[i] * (val + acc + lr)
        else:
            for j in range(c.dv):
                acc = 0.0
                for d in range(c.dx):
                    acc += gx[d] * c.tBv[d * c.dv + j]
                acc2 = 0.0
                for i in range(c.dv):
                    acc2 += y[k * c.dv + i] * c.R2s[i * c.dv + j]
                out[k * c.dv + j] = lam_k * (acc - c.tau * acc2)


cdef double _dual_obj(Ctx* c, double* z, double* y, double* wk) noexcept nogil:
    # wk: xk[dx] q[nt] last[nt] | slice work
    cdef double* xk = wk
    cdef double* q = xk + c.dx
    cdef double* last = q + c.nt
    cdef double* swk = last + c.nt
    cdef double* lam = z + c.na * c.dv
    cdef double* fr = lam + c.na
    cdef int k, i
    cdef double lam_t, lr, acc, total = 0.0, viol = 0.0, b
    lam_t = lam[c.na - 1] if lam[c.na - 1] > _LAM_MIN else _LAM_MIN
    for i in range(c.nt):
        acc = c.p[i]
        for k in range(c.nt):
            acc -= lam[k] * fr[k * c.nt + i]
        last[i] = acc / lam_t
    for k in range(c.na):
        _advance(c, y + k * c.du, z + k * c.dv, xk)
        lr = _quad(c.R1, y + k * c.du, c.du) - _quad(c.R2, z + k * c.dv, c.dv)
        for i in range(c.nt):
            q[i] = (fr[k * c.nt + i] if k < c.nt else last[i]) - c.tau * lr
        total += lam[k] * _slice_value(c, xk, q, swk)
    for i in range(c.nt):
        b = c.db_lo[i] - last[i]
        if b > 0.0:
            viol += b * b
        b = last[i] - c.db_hi[i]
        if b > 0.0:
            viol += b * b
    return total + c.weight * viol


cdef void _dual_grad(Ctx* c, double* z, double* y, int side, double* out,
                     double* wk) noexcept nogil:
    # side 0: d/d z; side 1: d/d y
    cdef double* xk = wk
    cdef double* q = xk + c.dx
    cdef double* last = q + c.nt
    cdef double* t_last = last + c.nt
    cdef double* vals = t_last + c.nt
    cdef double* gxv = vals + c.na          # (na, dx)
    cdef double* gqv = gxv + c.na * c.dx    # (na, nt)
    cdef double* swk = gqv + c.na * c.nt
    cdef double* lam = z + c.na * c.dv
    cdef double* fr = lam + c.na
    cdef int k, i, j, d
    cdef double lam_t, lr, acc, acc2, srow, b
    lam_t = lam[c.na - 1] if lam[c.na - 1] > _LAM_MIN else _LAM_MIN
    for i in range(c.nt):
        acc = c.p[i]
        for k in range(c.nt):
            acc -= lam[k] * fr[k * c.nt + i]
        last[i] = acc / lam_t
    for k in range(c.na):
        _advance(c, y + k * c.du, z + k * c.dv, xk)
        lr = _quad(c.R1, y + k * c.du, c.du) - _quad(c.R2, z + k * c.dv, c.dv)
        for i in range(c.nt):
            q[i] = (fr[k * c.nt + i] if k < c.nt else last[i]) - c.tau * lr
        vals[k] = _slice_val_grad(c, xk, q, gxv + k * c.dx, gqv + k * c.nt, swk)
    for i in range(c.nt):
        # value term of the eliminated atom plus the box penalty
        acc = lam[c.na - 1] * gqv[(c.na - 1) * c.nt + i]
        b = last[i] - c.db_hi[i]
        if b > 0.0:
            acc += c.weight * 2.0 * b
        b = c.db_lo[i] - last[i]
        if b > 0.0:
            acc -= c.weight * 2.0 * b
        t_last[i] = acc
    if side == 0:
        for k in range(c.na):
            srow = 0.0
            for i in range(c.nt):
                srow += gqv[k * c.nt + i]
            for j in range(c.dv):
                acc = 0.0
                for d in range(c.dx):
                    acc += gxv[k * c.dx + d] * c.tBv[d * c.dv + j]
                acc2 = 0.0
                for i in range(c.dv):
                    acc2 += z[k * c.dv + i] * c.R2s[i * c.dv + j]
                out[k * c.dv + j] = lam[k] * (acc + c.tau * srow * acc2)
        for k in range(c.nt):
            acc = 0.0
            for i in range(c.nt):
                acc += fr[k * c.nt + i] * t_last[i]
            out[c.na * c.dv + k] = vals[k] - acc / lam_t
        acc = 0.0
        if lam[c.na - 1] > _LAM_MIN:
            for i in range(c.nt):
                acc += last[i] * t_last[i]
            acc /= lam_t
        out[c.na * c.dv + c.na - 1] = vals[c.na - 1] - acc
        for k in range(c.nt):
            for i in range(c.nt):
                out[c.na * c.dv + c.na + k * c.nt + i] = (
                    lam[k] * gqv[k * c.nt + i] - (lam[k] / lam_t) * t_last[i]
                )
    else:
        for k in range(c.na):
            srow = 0.0
            for i in range(c.nt):
                srow += gqv[k * c.nt + i]
            for j in range(c.du):
                acc = 0.0
                for d in range(c.dx):
                    acc += gxv[k * c.dx + d] * c.tBu[d * c.du + j]
                acc2 = 0.0
                for i in range(c.du):
                    acc2 += y[k * c.du + i] * c.R1s[i * c.du + j]
                out[k * c.du + j] = lam[k] * (acc - c.tau * srow * acc2)


cdef inline double _obj(Ctx* c, double* z, double* y, double* wk) noexcept nogil:
    if c.kind == 0:
        return _primal_obj(c, z, y, wk)
    return _dual_obj(c, z, y, wk)


cdef inline void _gmin(Ctx* c, double* z, double* y, double* out, double* wk) noexcept nogil:
    if c.kind == 0:
        _primal_grad(c, z, y, 0, out, wk)
    else:
        _dual_grad(c, z, y, 0, out, wk)


cdef inline void _gmax(Ctx* c, double* z, double* y, double* out, double* wk) noexcept nogil:
    if c.kind == 0:
        _primal_grad(c, z, y, 1, out, wk)
    else:
        _dual_grad(c, z, y, 1, out, wk)


# ---------------------------------------------------------------------------
# DS-GDA loop, refinement, per-point driver
# ---------------------------------------------------------------------------


cdef int _run_restart(Ctx* c, double cs, double a, double r1, double r2,
                      double beta, double mu, int max_iters, double eps,
                      double* x, double* y, double* buf, double* wk,
                      long* iters_out) noexcept nogil:
    # buf: z[dmin] w[dmax] xn[dmin] yn[dmax] gx[dmin] gy[dmax]
    # returns 0 ok, 1 aborted
    cdef double* z = buf
    cdef double* w = z + c.dmin
    cdef double* xn = w + c.dmax
    cdef double* yn = xn + c.dmin
    cdef double* gx = yn + c.dmax
    cdef double* gy = gx + c.dmin
    cdef int i, it = 0
    cdef double sx, sy, resid, val
    for i in range(c.dmin):
        z[i] = x[i]
    for i in range(c.dmax):
        w[i] = y[i]
    for it in range(1, max_iters + 1):
        _gmin(c, x, y, gx, wk)
        if not _all_finite(gx, c.dmin):
            iters_out[0] = it
            return 1
        for i in range(c.dmin):
            xn[i] = x[i] - cs * (gx[i] + r1 * (x[i] - z[i]))
        _project(xn, c.nblk_min, c.blk_min, c.lo_min, c.hi_min, wk)
        _gmax(c, xn, y, gy, wk)
        if not _all_finite(gy, c.dmax):
            iters_out[0] = it
            return 1
        for i in range(c.dmax):
            yn[i] = y[i] + a * (gy[i] - r2 * (y[i] - w[i]))
        _project(yn, c.nblk_max, c.blk_max, c.lo_max, c.hi_max, wk)
        sx = 0.0
        for i in range(c.dmin):
            z[i] += beta * (xn[i] - z[i])
            sx += (xn[i] - x[i]) * (xn[i] - x[i])
            x[i] = xn[i]
        sy = 0.0
        for i in range(c.dmax):
            w[i] += mu * (yn[i] - w[i])
            sy += (yn[i] - y[i]) * (yn[i] - y[i])
            y[i] = yn[i]
        resid = sqrt(sx) / cs + sqrt(sy) / a
        if resid <= eps:
            break
    iters_out[0] = it
    val = _obj(c, x, y, wk)
    if not isfinite(val):
        return 1
    return 0


cdef double _refine_max(Ctx* c, double a, double eps, int refine_iters,
                        double* x, double* ystarts, int nstarts,
                        double* ybest, double* buf, double* wk) noexcept nogil:
    # buf: ycur[dmax] ynew[dmax] gy[dmax]
    cdef double* ycur = buf
    cdef double* ynew = ycur + c.dmax
    cdef double* gy = ynew + c.dmax
    cdef double best_v = -INFINITY
    cdef int have = 0, s, i, it
    cdef double v, moved
    for s in range(nstarts):
        for i in range(c.dmax):
            ycur[i] = ystarts[s * c.dmax + i]
        _project(ycur, c.nblk_max, c.blk_max, c.lo_max, c.hi_max, wk)
        v = _obj(c, x, ycur, wk)
        if isfinite(v) and v > best_v:
            best_v = v
            have = 1
            for i in range(c.dmax):
                ybest[i] = ycur[i]
        for it in range(refine_iters):
            _gmax(c, x, ycur, gy, wk)
            if not _all_finite(gy, c.dmax):
                break
            moved = 0.0
            for i in range(c.dmax):
                ynew[i] = ycur[i] + a * gy[i]
            _project(ynew, c.nblk_max, c.blk_max, c.lo_max, c.hi_max, wk)
            for i in range(c.dmax):
                moved += (ynew[i] - ycur[i]) * (ynew[i] - ycur[i])
                ycur[i] = ynew[i]
            moved = sqrt(moved)
            v = _obj(c, x, ycur, wk)
            if isfinite(v) and v > best_v:
                best_v = v
                have = 1
                for i in range(c.dmax):
                    ybest[i] = ycur[i]
            if moved / a <= eps:
                break
    if not have:
        for i in range(c.dmax):
            ybest[i] = ystarts[i]
        _project(ybest, c.nblk_max, c.blk_max, c.lo_max, c.hi_max, wk)
        best_v = _obj(c, x, ybest, wk)
    return best_v


cdef void _solve_point_entry(Ctx tpl, double* x0, double* p,
                             double* sm, double* sx_, int n_starts,
                             double* ry_base, int n_ref, Py_ssize_t n,
                             double cs, double a, double r1, double r2,
                             double beta, double mu, int max_iters, double eps,
                             int refine_iters,
                             double* x_out, double* y_out, double* val_out,
                             long* iters_out, long* aborted_out,
                             unsigned char* failed_out, long* chosen_out) noexcept nogil:
    # by-value Ctx copy keeps the per-point pointers thread-private
    cdef Ctx cc = tpl
    cdef double* ry_row = NULL
    cc.x0 = x0
    cc.p = p
    if n_ref > 0:
        ry_row = ry_base + n * n_ref * cc.dmax
    _solve_point(&cc, sm, sx_, n_starts, ry_row, n_ref,
                 cs, a, r1, r2, beta, mu, max_iters, eps, refine_iters,
                 x_out, y_out, val_out, iters_out, aborted_out,
                 failed_out, chosen_out)


cdef void _solve_point(Ctx* c, double* sm, double* sx_, int n_starts,
                       double* ry, int n_ref,
                       double cs, double a, double r1, double r2,
                       double beta, double mu, int max_iters, double eps,
                       int refine_iters,
                       double* x_out, double* y_out, double* val_out,
                       long* iters_out, long* aborted_out,
                       unsigned char* failed_out, long* chosen_out) noexcept nogil:
    cdef int wk_size = (2 * c.dx + 4 * c.nt
                        + c.din + 2 * c.h1 + 2 * c.h2
                        + c.na * (c.dx + c.nt) + 2 * c.na
                        + 2 * (c.dmin + c.dmax) + 16)
    cdef int buf_size = 3 * (c.dmin + c.dmax)
    cdef int cand_size = n_starts * (c.dmin + c.dmax)
    cdef int ystarts_size = (n_ref + 1) * c.dmax
    cdef int total = (c.dx + c.dmin + c.dmax + wk_size + buf_size
                      + cand_size + ystarts_size + 2 * c.dmax)
    cdef double* mem = <double*> malloc(total * sizeof(double))
    if mem == NULL:
        failed_out[0] = 1
        val_out[0] = NAN
        chosen_out[0] = -1
        return
    cdef double* base = mem
    cdef double* xbuf = base + c.dx
    cdef double* ybuf = xbuf + c.dmin
    cdef double* wk = ybuf + c.dmax
    cdef double* buf = wk + wk_size
    cdef double* cand = buf + buf_size  # x rows then y rows, per candidate
    cdef double* ystarts = cand + cand_size
    cdef double* yref = ystarts + ystarts_size
    cdef int i, d, s, ok, ncand = 0, best_i = -1
    cdef long it
    cdef long titers = 0, naborted = 0
    cdef double acc, v, best_v = INFINITY

    for d in range(c.dx):
        acc = 0.0
        for i in range(c.dx):
            acc += c.A[d * c.dx + i] * c.x0[i]
        base[d] = c.x0[d] + c.tau * acc
    c.base = base

    for s in range(n_starts):
        for i in range(c.dmin):
            xbuf[i] = sm[s * c.dmin + i]
        for i in range(c.dmax):
            ybuf[i] = sx_[s * c.dmax + i]
        it = 0
        ok = _run_restart(c, cs, a, r1, r2, beta, mu, max_iters, eps,
                          xbuf, ybuf, buf, wk, &it)
        titers += it
        if ok == 0:
            for i in range(c.dmin):
                cand[ncand * (c.dmin + c.dmax) + i] = xbuf[i]
            for i in range(c.dmax):
                cand[ncand * (c.dmin + c.dmax) + c.dmin + i] = ybuf[i]
            ncand += 1
        else:
            naborted += 1
    iters_out[0] = titers
    aborted_out[0] = naborted
    if ncand == 0:
        failed_out[0] = 1
        val_out[0] = NAN
        for i in range(c.dmin):
            x_out[i] = NAN
        for i in range(c.dmax):
            y_out[i] = NAN
        chosen_out[0] = -1
        free(mem)
        return
    for s in range(ncand):
        for i in range(c.dmax):
            ystarts[i] = cand[s * (c.dmin + c.dmax) + c.dmin + i]
        for d in range(n_ref):
            for i in range(c.dmax):
                ystarts[(d + 1) * c.dmax + i] = ry[d * c.dmax + i]
        v = _refine_max(c, a, eps, refine_iters,
                        cand + s * (c.dmin + c.dmax), ystarts, n_ref + 1,
                        yref, buf, wk)
        if v < best_v or best_i < 0:
            best_v = v
            best_i = s
            for i in range(c.dmin):
                x_out[i] = cand[s * (c.dmin + c.dmax) + i]
            for i in range(c.dmax):
                y_out[i] = yref[i]
    val_out[0] = best_v
    chosen_out[0] = best_i
    failed_out[0] = 0
    free(mem)


# ---------------------------------------------------------------------------
# python-visible batch entry
# ---------------------------------------------------------------------------


def solve_batch(dict pack, double[:, ::1] X, double[:, ::1] P,
                double[:, :, ::1] sm, double[:, :, ::1] sx,
                double[:, :, ::1] ry,
                double c, double a, double r1, double r2,
                double beta, double mu, int max_iters, double eps_stat,
                int refine_iters, int jobs):
    """Solve one stage problem per row of X/P; see kernels.solve_stage_batch."""
    cdef Py_ssize_t n_pts = X.shape[0]
    cdef int n_starts = <int> sm.shape[1]
    cdef int n_ref = <int> ry.shape[1]

    # keep references alive for the duration of the call
    cdef double[::1] A = pack["A"]
    cdef double[::1] tBu = pack["tBu"]
    cdef double[::1] tBv = pack["tBv"]
    cdef double[::1] R1 = pack["R1"]
    cdef double[::1] R2 = pack["R2"]
    cdef double[::1] R1s = pack["R1s"]
    cdef double[::1] R2s = pack["R2s"]
    cdef double[::1] G = pack["G"]
    cdef double[::1] gb = pack["gb"]
    cdef double[::1] gc = pack["gc"]
    cdef double[::1] db_lo = pack["db_lo"]
    cdef double[::1] db_hi = pack["db_hi"]
    cdef int[::1] blk_min = pack["blk_min"]
    cdef double[::1] lo_min = pack["lo_min"]
    cdef double[::1] hi_min = pack["hi_min"]
    cdef int[::1] blk_max = pack["blk_max"]
    cdef double[::1] lo_max = pack["lo_max"]
    cdef double[::1] hi_max = pack["hi_max"]
    cdef double[::1] W1 = pack["W1"]
    cdef double[::1] b1 = pack["b1"]
    cdef double[::1] W2 = pack["W2"]
    cdef double[::1] b2 = pack["b2"]
    cdef double[::1] W3 = pack["W3"]
    cdef double[::1] b3 = pack["b3"]
    cdef double[::1] in_shift = pack["in_shift"]
    cdef double[::1] in_scale = pack["in_scale"]

    cdef Ctx tpl
    tpl.kind = pack["kind"]
    tpl.nt = pack["nt"]
    tpl.dx = pack["dx"]
    tpl.du = pack["du"]
    tpl.dv = pack["dv"]
    tpl.na = pack["na"]
    tpl.dmin = pack["dmin"]
    tpl.dmax = pack["dmax"]
    tpl.tau = pack["tau"]
    tpl.weight = pack["weight"]
    tpl.A = &A[0]
    tpl.tBu = &tBu[0]
    tpl.tBv = &tBv[0]
    tpl.R1 = &R1[0]
    tpl.R2 = &R2[0]
    tpl.R1s = &R1s[0]
    tpl.R2s = &R2s[0]
    tpl.G = &G[0]
    tpl.gb = &gb[0]
    tpl.gc = &gc[0]
    tpl.db_lo = &db_lo[0]
    tpl.db_hi = &db_hi[0]
    tpl.nblk_min = <int> (blk_min.shape[0] // 3)
    tpl.blk_min = &blk_min[0]
    tpl.lo_min = &lo_min[0]
    tpl.hi_min = &hi_min[0]
    tpl.nblk_max = <int> (blk_max.shape[0] // 3)
    tpl.blk_max = &blk_max[0]
    tpl.lo_max = &lo_max[0]
    tpl.hi_max = &hi_max[0]
    tpl.vkind = pack["vkind"]
    tpl.din = pack["din"]
    tpl.h1 = pack["h1"]
    tpl.h2 = pack["h2"]
    tpl.W1 = &W1[0]
    tpl.b1 = &b1[0]
    tpl.W2 = &W2[0]
    tpl.b2 = &b2[0]
    tpl.W3 = &W3[0]
    tpl.b3 = &b3[0]
    tpl.in_shift = &in_shift[0]
    tpl.in_scale = &in_scale[0]
    tpl.out_shift = pack["out_shift"]
    tpl.out_scale = pack["out_scale"]
    tpl.x0 = NULL
    tpl.p = NULL
    tpl.base = NULL

    if sm.shape[2] != tpl.dmin or sx.shape[2] != tpl.dmax or ry.shape[2] != tpl.dmax:
        raise ValueError("start arrays disagree with the stage dimensions")

    xs = np.full((n_pts, tpl.dmin), np.nan)
    ys = np.full((n_pts, tpl.dmax), np.nan)
    vals = np.full(n_pts, np.nan)
    iters = np.zeros(n_pts, dtype=np.int64)
    aborted = np.zeros(n_pts, dtype=np.int64)
    failed = np.zeros(n_pts, dtype=np.uint8)
    chosen = np.full(n_pts, -1, dtype=np.int64)
    cdef double[:, ::1] xs_v = xs
    cdef double[:, ::1] ys_v = ys
    cdef double[::1] vals_v = vals
    cdef long[::1] iters_v = iters
    cdef long[::1] aborted_v = aborted
    cdef unsigned char[::1] failed_v = failed
    cdef long[::1] chosen_v = chosen

    cdef Py_ssize_t n
    cdef double* ry_base = NULL
    if n_ref > 0:
        ry_base = &ry[0, 0, 0]
    for n in prange(n_pts, nogil=True, schedule="dynamic", num_threads=jobs):
        _solve_point_entry(tpl, &X[n, 0], &P[n, 0],
                           &sm[n, 0, 0], &sx[n, 0, 0], n_starts,
                           ry_base, n_ref, n,
                           c, a, r1, r2, beta, mu, max_iters, eps_stat,
                           refine_iters,
                           &xs_v[n, 0], &ys_v[n, 0], &vals_v[n],
                           &iters_v[n], &aborted_v[n], &failed_v[n],
                           &chosen_v[n])

    return {
        "x": xs, "y": ys, "value": vals, "iters": iters,
        "aborted": aborted, "failed": failed, "chosen": chosen,
    }
