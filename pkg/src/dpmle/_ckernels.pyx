# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled HMM recursions.

All routines work on per-step *scaled* quantities: ``P[t, j]`` is the
emission density at time ``t`` divided by a per-row constant, ``G[t]`` is the
transition matrix applied between ``t`` and ``t + 1`` and may be a
broadcast (stride-0) view for homogeneous chains.  ``_pykernels`` mirrors
every function here and is the reference implementation.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, INFINITY

cnp.import_array()


def forward(const double[:, ::1] P, const double[:, :, :] G, const double[::1] delta):
    cdef Py_ssize_t T = P.shape[0], N = P.shape[1]
    cdef Py_ssize_t t, i, j
    cdef double s, c, acc
    alpha_arr = np.zeros((T, N))
    logc_arr = np.full(T, -np.inf)
    cdef double[:, ::1] alpha = alpha_arr
    cdef double[::1] logc = logc_arr

    c = 0.0
    for j in range(N):
        alpha[0, j] = delta[j] * P[0, j]
        c += alpha[0, j]
    if c <= 0.0:
        return alpha_arr, logc_arr
    logc[0] = log(c)
    for j in range(N):
        alpha[0, j] /= c

    for t in range(1, T):
        c = 0.0
        for j in range(N):
            acc = 0.0
            for i in range(N):
                acc += alpha[t - 1, i] * G[t - 1, i, j]
            acc *= P[t, j]
            alpha[t, j] = acc
            c += acc
        if c <= 0.0:
            return alpha_arr, logc_arr
        logc[t] = log(c)
        s = 1.0 / c
        for j in range(N):
            alpha[t, j] *= s
    return alpha_arr, logc_arr


def backward(const double[:, ::1] P, const double[:, :, :] G, const double[::1] logc):
    cdef Py_ssize_t T = P.shape[0], N = P.shape[1]
    cdef Py_ssize_t t, i, k
    cdef double acc, inv
    beta_arr = np.ones((T, N))
    cdef double[:, ::1] beta = beta_arr
    cdef double[::1] tmp = np.empty(N)
    for t in range(T - 2, -1, -1):
        inv = exp(-logc[t + 1])
        for k in range(N):
            tmp[k] = P[t + 1, k] * beta[t + 1, k]
        for i in range(N):
            acc = 0.0
            for k in range(N):
                acc += G[t, i, k] * tmp[k]
            beta[t, i] = acc * inv
    return beta_arr


def xi_sum(const double[:, ::1] alpha, const double[:, ::1] beta,
           const double[:, ::1] P, const double[:, :, :] G, const double[::1] logc):
    cdef Py_ssize_t T = P.shape[0], N = P.shape[1]
    cdef Py_ssize_t t, i, k
    cdef double inv, a
    out_arr = np.zeros((N, N))
    cdef double[:, ::1] out = out_arr
    cdef double[::1] tmp = np.empty(N)
    for t in range(T - 1):
        inv = exp(-logc[t + 1])
        for k in range(N):
            tmp[k] = P[t + 1, k] * beta[t + 1, k] * inv
        for i in range(N):
            a = alpha[t, i]
            for k in range(N):
                out[i, k] += a * G[t, i, k] * tmp[k]
    return out_arr


def xi_all(const double[:, ::1] alpha, const double[:, ::1] beta,
           const double[:, ::1] P, const double[:, :, :] G, const double[::1] logc):
    cdef Py_ssize_t T = P.shape[0], N = P.shape[1]
    cdef Py_ssize_t t, i, k
    cdef double inv, a
    out_arr = np.zeros((max(T - 1, 0), N, N))
    cdef double[:, :, ::1] out = out_arr
    cdef double[::1] tmp = np.empty(N)
    for t in range(T - 1):
        inv = exp(-logc[t + 1])
        for k in range(N):
            tmp[k] = P[t + 1, k] * beta[t + 1, k] * inv
        for i in range(N):
            a = alpha[t, i]
            for k in range(N):
                out[t, i, k] = a * G[t, i, k] * tmp[k]
    return out_arr


def reward_pairs(const double[:, ::1] alpha, const double[:, ::1] beta,
                 const double[:, ::1] P, const double[:, :, :] G,
                 const double[::1] logc, const double[::1] w):
    """E[H 1{S_t=i, S_t+1=k} | y] with H = sum_t w[S_t]; also returns E[H]."""
    cdef Py_ssize_t T = P.shape[0], N = P.shape[1]
    cdef Py_ssize_t t, i, j, k
    cdef double acc, inv
    ra_arr = np.zeros((T, N))
    rb_arr = np.zeros((T, N))
    out_arr = np.zeros((max(T - 1, 0), N, N))
    cdef double[:, ::1] ra = ra_arr
    cdef double[:, ::1] rb = rb_arr
    cdef double[:, :, ::1] out = out_arr
    cdef double[::1] invc = np.exp(-np.asarray(logc))
    cdef double total = 0.0

    for j in range(N):
        ra[0, j] = w[j] * alpha[0, j]
    for t in range(1, T):
        for j in range(N):
            acc = 0.0
            for i in range(N):
                acc += ra[t - 1, i] * G[t - 1, i, j]
            ra[t, j] = acc * P[t, j] * invc[t] + w[j] * alpha[t, j]
    for j in range(N):
        rb[T - 1, j] = w[j]
        total += ra[T - 1, j]
    for t in range(T - 2, -1, -1):
        for k in range(N):
            acc = 0.0
            for j in range(N):
                acc += G[t, k, j] * P[t + 1, j] * rb[t + 1, j]
            rb[t, k] = w[k] * beta[t, k] + acc * invc[t + 1]
    for t in range(T - 1):
        inv = invc[t + 1]
        for i in range(N):
            for k in range(N):
                out[t, i, k] = (G[t, i, k] * P[t + 1, k] * inv
                                * (ra[t, i] * beta[t + 1, k] + alpha[t, i] * rb[t + 1, k]))
    return out_arr, total


def viterbi(const double[:, ::1] logP, const double[:, :, :] logG, const double[::1] logdelta):
    cdef Py_ssize_t T = logP.shape[0], N = logP.shape[1]
    cdef Py_ssize_t t, i, j, best_i
    cdef double best, v
    score_arr = np.empty((T, N))
    back_arr = np.zeros((T, N), dtype=np.intp)
    path_arr = np.zeros(T, dtype=np.intp)
    cdef double[:, ::1] score = score_arr
    cdef Py_ssize_t[:, ::1] back = back_arr
    cdef Py_ssize_t[::1] path = path_arr

    for j in range(N):
        score[0, j] = logdelta[j] + logP[0, j]
    for t in range(1, T):
        for j in range(N):
            best = -INFINITY
            best_i = 0
            for i in range(N):
                v = score[t - 1, i] + logG[t - 1, i, j]
                if v > best:
                    best = v
                    best_i = i
            score[t, j] = best + logP[t, j]
            back[t, j] = best_i
    best = -INFINITY
    best_i = 0
    for j in range(N):
        if score[T - 1, j] > best:
            best = score[T - 1, j]
            best_i = j
    path[T - 1] = best_i
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path_arr, best
