# Compiled twin of fine_np.py; same contracts, plain C loops.
import numpy as np

cimport numpy as cnp


def fine_forward(double[:, :, ::1] vu, int[::1] nv,
                 double[:, :, ::1] tu, int[::1] nt):
    cdef Py_ssize_t b = vu.shape[0]
    cdef Py_ssize_t max_v = vu.shape[1]
    cdef Py_ssize_t max_t = tu.shape[1]
    cdef Py_ssize_t d = vu.shape[2]

    scores_arr = np.zeros((b, b), dtype=np.float64)
    av_arr = np.zeros((b, b, max_v), dtype=np.int32)
    at_arr = np.zeros((b, b, max_t), dtype=np.int32)
    sim_arr = np.empty((max_v, max_t), dtype=np.float64)

    cdef double[:, ::1] scores = scores_arr
    cdef int[:, :, ::1] av = av_arr
    cdef int[:, :, ::1] at = at_arr
    cdef double[:, ::1] sim = sim_arr

    cdef Py_ssize_t i, j, p, q, k, ni, nj
    cdef double acc, best, s1, s2
    cdef int bi

    for i in range(b):
        ni = nv[i]
        for j in range(b):
            nj = nt[j]
            for p in range(ni):
                for q in range(nj):
                    acc = 0.0
                    for k in range(d):
                        acc += vu[i, p, k] * tu[j, q, k]
                    sim[p, q] = acc
            s1 = 0.0
            for p in range(ni):
                best = sim[p, 0]
                bi = 0
                for q in range(1, nj):
                    if sim[p, q] > best:
                        best = sim[p, q]
                        bi = <int> q
                av[i, j, p] = bi
                s1 += best
            s2 = 0.0
            for q in range(nj):
                best = sim[0, q]
                bi = 0
                for p in range(1, ni):
                    if sim[p, q] > best:
                        best = sim[p, q]
                        bi = <int> p
                at[i, j, q] = bi
                s2 += best
            scores[i, j] = s1 / ni + s2 / nj
    return scores_arr, av_arr, at_arr


def fine_backward(double[:, :, ::1] vu, double[:, ::1] vg,
                  unsigned char[:, ::1] vsmall, int[::1] nv,
                  double[:, :, ::1] tu, double[:, ::1] tg,
                  unsigned char[:, ::1] tsmall, int[::1] nt,
                  int[:, :, ::1] av, int[:, :, ::1] at,
                  double[:, ::1] dscores):
    cdef Py_ssize_t b = vu.shape[0]
    cdef Py_ssize_t d = vu.shape[2]

    dv_arr = np.zeros((b, vu.shape[1], d), dtype=np.float64)
    dt_arr = np.zeros((b, tu.shape[1], d), dtype=np.float64)
    cdef double[:, :, ::1] dv = dv_arr
    cdef double[:, :, ::1] dt = dt_arr

    cdef Py_ssize_t i, j, p, q, k, ni, nj
    cdef double w, c, cv, ct, coef
    for i in range(b):
        ni = nv[i]
        for j in range(b):
            w = dscores[i, j]
            if w == 0.0:
                continue
            nj = nt[j]

            coef = w / ni
            for p in range(ni):
                q = av[i, j, p]
                c = 0.0
                for k in range(d):
                    c += vu[i, p, k] * tu[j, q, k]
                cv = 0.0 if vsmall[i, p] else c
                ct = 0.0 if tsmall[j, q] else c
                for k in range(d):
                    dv[i, p, k] += coef * (tu[j, q, k] - cv * vu[i, p, k]) / vg[i, p]
                    dt[j, q, k] += coef * (vu[i, p, k] - ct * tu[j, q, k]) / tg[j, q]

            coef = w / nj
            for q in range(nj):
                p = at[i, j, q]
                c = 0.0
                for k in range(d):
                    c += vu[i, p, k] * tu[j, q, k]
                cv = 0.0 if vsmall[i, p] else c
                ct = 0.0 if tsmall[j, q] else c
                for k in range(d):
                    dt[j, q, k] += coef * (vu[i, p, k] - ct * tu[j, q, k]) / tg[j, q]
                    dv[i, p, k] += coef * (tu[j, q, k] - cv * vu[i, p, k]) / vg[i, p]
    return dv_arr, dt_arr
