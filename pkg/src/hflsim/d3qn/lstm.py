"""Batched LSTM layer with manual backpropagation through time.

Gate layout in the fused weight matrix: input, forget, output, candidate.
Weights act on ``[x_t, h_{t-1}]``.  Internally arrays are time-major so
every per-step slice is contiguous; the input projection for all steps and
the weight gradients are single large matrix products.
"""

from __future__ import annotations

import numpy as np


def sigmoid(x, out=None):
    # tanh form: overflow-free for any x
    out = np.multiply(x, 0.5, out=out)
    np.tanh(out, out=out)
    out += 1.0
    out *= 0.5
    return out


def init_lstm(rng: np.random.Generator, n_in: int, hidden: int) -> dict[str, np.ndarray]:
    scale = 1.0 / np.sqrt(n_in + hidden)
    W = rng.uniform(-scale, scale, size=(n_in + hidden, 4 * hidden))
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0  # forget-gate bias
    return {"W": W, "b": b}


def lstm_forward(W: np.ndarray, b: np.ndarray, X: np.ndarray):
    """Run over ``X`` of shape (batch, steps, n_in) from zero state.

    Returns hidden states (batch, steps, hidden) and a cache for backward.
    """
    B, T, n_in = X.shape
    d = W.shape[1] // 4
    Xt = np.ascontiguousarray(np.transpose(X, (1, 0, 2)))
    Wx, Wh = W[:n_in], np.ascontiguousarray(W[n_in:])
    pre = (Xt.reshape(T * B, n_in) @ Wx + b).reshape(T, B, 4 * d)
    Hs = np.zeros((T + 1, B, d))
    C = np.zeros((T + 1, B, d))
    TC = np.empty((T, B, d))  # tanh(c_t)
    for t in range(T):
        a = pre[t]
        if t:
            a += Hs[t] @ Wh
        sigmoid(a[:, :3 * d], out=a[:, :3 * d])
        np.tanh(a[:, 3 * d:], out=a[:, 3 * d:])
        c = C[t + 1]
        np.multiply(a[:, d:2 * d], C[t], out=c)
        c += a[:, :d] * a[:, 3 * d:]
        np.tanh(c, out=TC[t])
        np.multiply(a[:, 2 * d:3 * d], TC[t], out=Hs[t + 1])
    # pre now holds the activated gates
    return np.transpose(Hs[1:], (1, 0, 2)), (Xt, Hs, C, TC, pre)


def lstm_backward(W: np.ndarray, cache, dH: np.ndarray, t_max: int | None = None):
    """Gradients given dLoss/dh_t for every step (zeros where unused).

    ``t_max`` skips the all-zero tail: steps at or beyond it carry no
    gradient.  Returns (dW, db, dX) with dX batch-major.
    """
    Xt, Hs, C, TC, G = cache
    T, B, n_in = Xt.shape
    d = W.shape[1] // 4
    Wh_T = np.ascontiguousarray(W[n_in:].T)
    dHt = np.transpose(dH, (1, 0, 2))
    T_run = T if t_max is None else t_max
    dA = np.zeros((T, B, 4 * d))
    dh = np.zeros((B, d))
    dc = np.zeros((B, d))
    for t in range(T_run - 1, -1, -1):
        g = G[t]
        i, f, o, cand = g[:, :d], g[:, d:2 * d], g[:, 2 * d:3 * d], g[:, 3 * d:]
        tc = TC[t]
        dh += dHt[t]
        dc += dh * o * (1.0 - tc * tc)
        da = dA[t]
        da[:, :d] = dc * cand * i * (1.0 - i)
        da[:, d:2 * d] = dc * C[t] * f * (1.0 - f)
        da[:, 2 * d:3 * d] = dh * tc * o * (1.0 - o)
        da[:, 3 * d:] = dc * i * (1.0 - cand * cand)
        dh = da @ Wh_T
        dc *= f
    flat = dA.reshape(T * B, 4 * d)
    dW = np.empty_like(W)
    dW[:n_in] = Xt.reshape(T * B, n_in).T @ flat
    dW[n_in:] = Hs[:T].reshape(T * B, d).T @ flat
    db = flat.sum(axis=0)
    dX = (flat @ W[:n_in].T).reshape(T, B, n_in)
    return dW, db, np.transpose(dX, (1, 0, 2))
