"""Dueling Q-network over a bidirectional LSTM encoder.

A state is an episode feature matrix ``X`` (H devices by F features) plus a
position ``t``.  The forward LSTM reads rows ``0..t`` and the backward LSTM
reads rows ``H-1..t``; their final hidden states are concatenated and fed
to a value head and an advantage head:

    Q(s, a) = V(s) + A(s, a) - mean_a' A(s, a')
"""

from __future__ import annotations

import numpy as np

from .lstm import init_lstm, lstm_backward, lstm_forward

Params = dict[str, np.ndarray]


def init_params(rng: np.random.Generator, n_features: int, n_actions: int, hidden: int, head_hidden: int = 0) -> Params:
    p: Params = {}
    fw = init_lstm(rng, n_features, hidden)
    bw = init_lstm(rng, n_features, hidden)
    p["fW"], p["fb"] = fw["W"], fw["b"]
    p["bW"], p["bb"] = bw["W"], bw["b"]
    width = 2 * hidden
    if head_hidden:
        p["hW"] = rng.normal(0.0, np.sqrt(2.0 / width), size=(width, head_hidden))
        p["hb"] = np.zeros(head_hidden)
        width = head_hidden
    p["vW"] = rng.normal(0.0, np.sqrt(1.0 / width), size=(width, 1))
    p["vb"] = np.zeros(1)
    p["aW"] = rng.normal(0.0, np.sqrt(1.0 / width), size=(width, n_actions))
    p["ab"] = np.zeros(n_actions)
    return p


def _heads(p: Params, z):
    if "hW" in p:
        pre = z @ p["hW"] + p["hb"]
        y = np.maximum(pre, 0.0)
    else:
        pre, y = None, z
    V = y @ p["vW"] + p["vb"]
    A = y @ p["aW"] + p["ab"]
    Q = V + A - A.mean(axis=1, keepdims=True)
    return Q, V[:, 0], A, (z, pre, y)


def forward(p: Params, X: np.ndarray, t: np.ndarray):
    """Q-values for states ``(X[k], t[k])``; X has shape (B, H, F)."""
    B, H, _ = X.shape
    t = np.asarray(t, dtype=int)
    rows = np.arange(B)
    t_hi = int(t.max()) + 1
    # forward half only needs rows 0..max(t), backward half rows H-1..min(t)
    Hf, cf = lstm_forward(p["fW"], p["fb"], X[:, :t_hi])
    n_back = H - int(t.min())
    Hb, cb = lstm_forward(p["bW"], p["bb"], X[:, ::-1][:, :n_back])
    hf = Hf[rows, t]
    hb = Hb[rows, H - 1 - t]
    z = np.concatenate([hf, hb], axis=1)
    Q, V, A, hc = _heads(p, z)
    cache = (X.shape, t, cf, cb, Hf.shape, Hb.shape, hc)
    return Q, V, A, cache


def forward_all(p: Params, X: np.ndarray):
    """Q-values for every position of one episode ``X`` (H, F): shape (H, M)."""
    H = X.shape[0]
    Hf, _ = lstm_forward(p["fW"], p["fb"], X[None])
    Hb, _ = lstm_forward(p["bW"], p["bb"], X[None, ::-1])
    z = np.concatenate([Hf[0], Hb[0, ::-1]], axis=1)
    Q, _, _, _ = _heads(p, z)
    assert Q.shape[0] == H
    return Q


def backward(p: Params, cache, dQ: np.ndarray) -> Params:
    (B, H, _), t, cf, cb, shf, shb, (z, pre, y) = cache
    rows = np.arange(B)
    g: Params = {}
    dV = dQ.sum(axis=1, keepdims=True)
    dA = dQ - dV / dQ.shape[1]
    g["vW"] = y.T @ dV
    g["vb"] = dV.sum(axis=0)
    g["aW"] = y.T @ dA
    g["ab"] = dA.sum(axis=0)
    dy = dV @ p["vW"].T + dA @ p["aW"].T
    if pre is not None:
        dpre = dy * (pre > 0)
        g["hW"] = z.T @ dpre
        g["hb"] = dpre.sum(axis=0)
        dz = dpre @ p["hW"].T
    else:
        dz = dy
    d = p["fW"].shape[1] // 4
    dHf = np.zeros(shf)
    dHf[rows, t] = dz[:, :d]
    dHb = np.zeros(shb)
    dHb[rows, H - 1 - t] = dz[:, d:]
    g["fW"], g["fb"], _ = lstm_backward(p["fW"], cf, dHf)
    g["bW"], g["bb"], _ = lstm_backward(p["bW"], cb, dHb)
    return g


def global_norm(grads: Params) -> float:
    return float(np.sqrt(sum(float((v * v).sum()) for v in grads.values())))


def clip_grads(grads: Params, max_norm: float) -> float:
    norm = global_norm(grads)
    if max_norm and norm > max_norm:
        s = max_norm / norm
        for v in grads.values():
            v *= s
    return norm


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: Params, grads: Params) -> None:
        for k, g in grads.items():
            params[k] -= self.lr * g

    def state(self) -> dict:
        return {}

    def load(self, state: dict) -> None:
        pass


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: Params = {}
        self.v: Params = {}
        self.t = 0

    def step(self, params: Params, grads: Params) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        out = {"t": np.array(self.t)}
        for k in self.m:
            out[f"m.{k}"] = self.m[k]
            out[f"v.{k}"] = self.v[k]
        return out

    def load(self, state: dict) -> None:
        self.t = int(state.get("t", 0))
        self.m = {k[2:]: np.array(v) for k, v in state.items() if k.startswith("m.")}
        self.v = {k[2:]: np.array(v) for k, v in state.items() if k.startswith("v.")}


def make_optimizer(name: str, lr: float):
    if name == "sgd":
        return SGD(lr)
    if name == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer {name!r}")
