"""Pure numpy versions of the compiled recursions in ``_ckernels``.

Semantics, argument order and return values match the Cython module
exactly; see there for the scaling conventions.
"""
import numpy as np


def forward(P, G, delta):
    T, N = P.shape
    alpha = np.zeros((T, N))
    logc = np.full(T, -np.inf)
    a = delta * P[0]
    c = a.sum()
    if c <= 0.0:
        return alpha, logc
    alpha[0] = a / c
    logc[0] = np.log(c)
    for t in range(1, T):
        a = (alpha[t - 1] @ G[t - 1]) * P[t]
        c = a.sum()
        if c <= 0.0:
            return alpha, logc
        alpha[t] = a / c
        logc[t] = np.log(c)
    return alpha, logc


def backward(P, G, logc):
    T, N = P.shape
    beta = np.ones((T, N))
    invc = np.exp(-np.asarray(logc))
    for t in range(T - 2, -1, -1):
        beta[t] = (G[t] @ (P[t + 1] * beta[t + 1])) * invc[t + 1]
    return beta


def xi_all(alpha, beta, P, G, logc):
    T, N = P.shape
    if T < 2:
        return np.zeros((0, N, N))
    tail = P[1:] * beta[1:] * np.exp(-np.asarray(logc[1:]))[:, None]
    return alpha[:-1, :, None] * G[: T - 1] * tail[:, None, :]


def xi_sum(alpha, beta, P, G, logc):
    return xi_all(alpha, beta, P, G, logc).sum(axis=0)


def reward_pairs(alpha, beta, P, G, logc, w):
    T, N = P.shape
    invc = np.exp(-np.asarray(logc))
    ra = np.zeros((T, N))
    rb = np.zeros((T, N))
    ra[0] = w * alpha[0]
    for t in range(1, T):
        ra[t] = (ra[t - 1] @ G[t - 1]) * P[t] * invc[t] + w * alpha[t]
    rb[T - 1] = w
    for t in range(T - 2, -1, -1):
        rb[t] = w * beta[t] + (G[t] @ (P[t + 1] * rb[t + 1])) * invc[t + 1]
    if T < 2:
        return np.zeros((0, N, N)), float(ra[T - 1].sum())
    lead = P[1:] * invc[1:, None]
    out = G[: T - 1] * lead[:, None, :] * (
        ra[:-1, :, None] * beta[1:, None, :] + alpha[:-1, :, None] * rb[1:, None, :]
    )
    return out, float(ra[T - 1].sum())


def viterbi(logP, logG, logdelta):
    T, N = logP.shape
    score = np.empty((T, N))
    back = np.zeros((T, N), dtype=np.intp)
    score[0] = logdelta + logP[0]
    for t in range(1, T):
        cand = score[t - 1][:, None] + logG[t - 1]
        # argmax returns the first maximiser, i.e. the lower state index on ties
        back[t] = np.argmax(cand, axis=0)
        score[t] = cand[back[t], np.arange(N)] + logP[t]
    path = np.zeros(T, dtype=np.intp)
    path[T - 1] = int(np.argmax(score[T - 1]))
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path, float(score[T - 1, path[T - 1]])
