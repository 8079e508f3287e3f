"""Small numpy network with hand-written gradients.

Architecture: the previous action is looked up in a 3-row embedding table
and concatenated with the account scalars and price features of each day.
A forward GRU (left to right) and a backward GRU (right to left) run over
the observation window only, so the encoding at the decision day never sees
later prices. Dot-product attention of the final state over the earlier
window states yields a context vector; ``[h_t, c_t]`` feeds a two-layer
ReLU head with one output per action (short, clear, long).

The ``feedforward`` encoder replaces all of the recurrent part with a single
tanh layer applied to the decision day's observation.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import EmptyWindow, NoRecordedForward, ShapeMismatch

BIGRU = "bigru_attention"
FEEDFORWARD = "feedforward"
N_ACTIONS = 3
CHECKPOINT_FORMAT = "credit-pairs/qparams"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetSpec:
    encoder: str = BIGRU
    d_a: int = 4
    d_h: int = 32
    hidden: int = 64
    n_account: int = 3
    n_price: int = 6

    def __post_init__(self):
        if self.encoder not in (BIGRU, FEEDFORWARD):
            raise ValueError(f"unknown encoder {self.encoder!r}")
        if self.d_h % 2:
            raise ValueError("d_h must be even (split across two directions)")

    @property
    def n_input(self) -> int:
        return self.d_a + self.n_account + self.n_price

    def shapes(self) -> dict[str, tuple[int, ...]]:
        f, h, d = self.n_input, self.d_h // 2, self.d_h
        out = {"embed": (N_ACTIONS, self.d_a)}
        if self.encoder == BIGRU:
            for side in ("fwd", "bwd"):
                out[f"{side}_W"] = (f, 3 * h)
                out[f"{side}_U"] = (h, 3 * h)
                out[f"{side}_b"] = (3 * h,)
        else:
            out["ff_W"] = (f, 2 * d)
            out["ff_b"] = (2 * d,)
        out["q_W1"] = (2 * d, self.hidden)
        out["q_b1"] = (self.hidden,)
        out["q_W2"] = (self.hidden, N_ACTIONS)
        out["q_b2"] = (N_ACTIONS,)
        return out


class QParams:
    """Named parameter arrays plus the :class:`NetSpec` they belong to."""

    def __init__(self, spec: NetSpec, arrays: dict[str, np.ndarray]):
        shapes = spec.shapes()
        if set(arrays) != set(shapes):
            raise ShapeMismatch(f"parameter names {sorted(arrays)} != {sorted(shapes)}")
        for name, shape in shapes.items():
            if np.shape(arrays[name]) != shape:
                raise ShapeMismatch(f"{name}: shape {np.shape(arrays[name])} != {shape}")
        self.spec = spec
        self.arrays = {k: np.asarray(arrays[k], dtype=float) for k in shapes}

    def __getitem__(self, name):
        return self.arrays[name]

    def copy(self) -> "QParams":
        return QParams(self.spec, {k: v.copy() for k, v in self.arrays.items()})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.arrays.items()}

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.arrays.values())

    def equals(self, other: "QParams") -> bool:
        return self.spec == other.spec and all(
            np.array_equal(v, other.arrays[k]) for k, v in self.arrays.items())

    @property
    def size(self) -> int:
        return sum(v.size for v in self.arrays.values())


def init_params(spec: NetSpec, rng: np.random.Generator) -> QParams:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases."""
    arrays = {}
    for name, shape in spec.shapes().items():
        if name.endswith(("_b", "_b1", "_b2")):
            arrays[name] = np.zeros(shape)
        else:
            bound = 1.0 / math.sqrt(shape[0])
            arrays[name] = rng.uniform(-bound, bound, size=shape)
    return QParams(spec, arrays)


class Windows(NamedTuple):
    """A batch of observation windows, oldest day first.

    act_idx: (B, T) previous-action indices in {0, 1, 2}
    account: (B, T, n_account)
    prices:  (B, T, n_price)
    """

    act_idx: np.ndarray
    account: np.ndarray
    prices: np.ndarray

    @classmethod
    def single(cls, act_idx, account, prices) -> "Windows":
        return cls(np.asarray(act_idx)[None], np.asarray(account, float)[None],
                   np.asarray(prices, float)[None])

    def __len__(self):
        return self.act_idx.shape[0]


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# ---------------------------------------------------------------------------
# GRU
# ---------------------------------------------------------------------------

def gru_cell_forward(x, h_prev, W, U, b):
    """One GRU step; works on a single vector or a batch of rows.

    Gate blocks in ``W``/``U``/``b`` are ordered (update z, reset r,
    candidate n) and ``h = (1 - z) * n + z * h_prev`` with
    ``n = tanh(x W_n + (r * h_prev) U_n + b_n)``.
    """
    x = np.asarray(x, dtype=float)
    h_prev = np.asarray(h_prev, dtype=float)
    H = U.shape[0]
    if (W.shape != (x.shape[-1], 3 * H) or U.shape != (H, 3 * H)
            or b.shape != (3 * H,) or h_prev.shape[-1] != H):
        raise ShapeMismatch(
            f"x{x.shape} h{h_prev.shape} W{W.shape} U{U.shape} b{b.shape}")
    a = x @ W + b
    hu = h_prev @ U[:, :2 * H]
    z = _sigmoid(a[..., :H] + hu[..., :H])
    r = _sigmoid(a[..., H:2 * H] + hu[..., H:])
    n = np.tanh(a[..., 2 * H:] + (r * h_prev) @ U[:, 2 * H:])
    return (1.0 - z) * n + z * h_prev


def _gru_scan(X, W, U, b):
    """Run stacked GRUs over time.

    X: (D, B, T, F) with one leading slot per direction (already time-ordered
    for that direction); W: (D, F, 3H); U: (D, H, 3H); b: (D, 3H).
    Returns states (D, B, T, H) and a cache for the backward pass.
    """
    D, B, T, F = X.shape
    H = U.shape[1]
    # time-major so every step reads and writes contiguous blocks
    Xt = np.ascontiguousarray(np.moveaxis(X, 2, 1)).reshape(D, T * B, F)
    XW = (Xt @ W + b[:, None]).reshape(D, T, B, 3 * H).transpose(1, 0, 2, 3).copy()
    U_zr, U_n = U[:, :, :2 * H], U[:, :, 2 * H:]
    hs = np.empty((T + 1, D, B, H))
    hs[0] = 0.0
    Z = np.empty((T, D, B, H))
    R = np.empty_like(Z)
    N = np.empty_like(Z)
    for t in range(T):
        h = hs[t]
        a = XW[t]
        zr = _sigmoid(a[..., :2 * H] + h @ U_zr)
        z, r = zr[..., :H], zr[..., H:]
        n = np.tanh(a[..., 2 * H:] + (r * h) @ U_n)
        hs[t + 1] = n + z * (h - n)
        Z[t], R[t], N[t] = z, r, n
    return np.moveaxis(hs[1:], 0, 2), (Xt, Z, R, N, hs)


def _gru_scan_backward(dhs, cache, W, U):
    Xt, Z, R, N, HS = cache
    D, B, T, H = dhs.shape
    dhs = np.moveaxis(dhs, 2, 0)
    U_zr, U_n = U[:, :, :2 * H], U[:, :, 2 * H:]
    U_zr_T = np.swapaxes(U_zr, 1, 2)
    U_n_T = np.swapaxes(U_n, 1, 2)
    dA = np.empty((T, D, B, 3 * H))
    dh = np.zeros((D, B, H))
    for t in range(T - 1, -1, -1):
        dh = dh + dhs[t]
        z, r, n, hp = Z[t], R[t], N[t], HS[t]
        dan = dh * (1.0 - z) * (1.0 - n * n)
        drh = dan @ U_n_T
        dzr = dA[t, :, :, :2 * H]
        np.multiply(dh * (hp - n), z * (1.0 - z), out=dzr[..., :H])
        np.multiply(drh * hp, r * (1.0 - r), out=dzr[..., H:])
        dA[t, :, :, 2 * H:] = dan
        dh = dh * z + drh * r + dzr @ U_zr_T
    # parameter gradients in one contraction over (time, batch)
    dAf = dA.transpose(1, 0, 2, 3).reshape(D, T * B, 3 * H)
    hp = HS[:T].transpose(1, 0, 2, 3).reshape(D, T * B, H)
    rhp = (R * HS[:T]).transpose(1, 0, 2, 3).reshape(D, T * B, H)
    dU = np.concatenate([np.swapaxes(hp, 1, 2) @ dAf[..., :2 * H],
                         np.swapaxes(rhp, 1, 2) @ dAf[..., 2 * H:]], axis=-1)
    dW = np.swapaxes(Xt, 1, 2) @ dAf
    db = dAf.sum(axis=1)
    dX = (dAf @ np.swapaxes(W, 1, 2)).reshape(D, T, B, -1).transpose(0, 2, 1, 3)
    return dX, dW, dU, db


# ---------------------------------------------------------------------------
# Attention and encoding
# ---------------------------------------------------------------------------

def attention_weights(h_t, history):
    """Softmax of ``h_t . h_i / sqrt(d_h)`` over the rows of ``history``."""
    history = np.asarray(history, dtype=float)
    if len(history) == 0:
        return np.zeros(0)
    s = history @ np.asarray(h_t, dtype=float) / math.sqrt(len(h_t))
    e = np.exp(s - s.max())
    return e / e.sum()


class EncodedState(NamedTuple):
    h: np.ndarray
    c: np.ndarray
    h_hat: np.ndarray
    attention: np.ndarray


def _inputs(params: QParams, w: Windows) -> np.ndarray:
    emb = params["embed"][w.act_idx]
    return np.concatenate([emb, w.account, w.prices], axis=-1)


def _check_windows(params: QParams, w: Windows):
    spec = params.spec
    if w.act_idx.ndim != 2 or w.act_idx.shape[1] == 0:
        raise EmptyWindow("windows must be (batch, length>=1)")
    B, T = w.act_idx.shape
    if w.account.shape != (B, T, spec.n_account) or w.prices.shape != (B, T, spec.n_price):
        raise ShapeMismatch(
            f"account{w.account.shape} prices{w.prices.shape} for batch ({B}, {T})")


def _stacked(params: QParams):
    return (np.stack([params["fwd_W"], params["bwd_W"]]),
            np.stack([params["fwd_U"], params["bwd_U"]]),
            np.stack([params["fwd_b"], params["bwd_b"]]))


def _bigru_states(params: QParams, X):
    """(B, T, d_h) states: forward half left-to-right, backward half
    right-to-left, both restricted to the window."""
    Xs = np.stack([X, X[:, ::-1]])
    hs, cache = _gru_scan(Xs, *_stacked(params))
    return np.concatenate([hs[0], hs[1][:, ::-1]], axis=-1), cache


def encode_window(window, params: QParams) -> list[EncodedState]:
    """Encode one window and return the state at every position.

    ``window`` is a :class:`Windows` with batch size 1 or a tuple
    ``(act_idx, account, prices)`` for a single window. Position ``p``
    attends over positions ``0..p-1``; the first position has a zero
    context.
    """
    w = window if isinstance(window, Windows) else Windows.single(*window)
    if w.act_idx.ndim != 2 or w.act_idx.shape[1] == 0:
        raise EmptyWindow("window must contain at least one observation")
    if len(w) != 1:
        raise ShapeMismatch("encode_window takes a single window")
    _check_windows(params, w)
    if params.spec.encoder != BIGRU:
        raise ValueError("encode_window applies to the recurrent encoder")
    H, _ = _bigru_states(params, _inputs(params, w))
    H = H[0]
    out = []
    for p in range(H.shape[0]):
        a = attention_weights(H[p], H[:p])
        c = a @ H[:p] if p else np.zeros_like(H[p])
        out.append(EncodedState(H[p], c, np.concatenate([H[p], c]), a))
    return out


# ---------------------------------------------------------------------------
# Full forward / backward
# ---------------------------------------------------------------------------

def q_head(h_hat, params: QParams):
    """Two affine layers with a ReLU in between; returns 3 Q-values."""
    h_hat = np.asarray(h_hat, dtype=float)
    if h_hat.shape[-1] != params["q_W1"].shape[0]:
        raise ShapeMismatch(f"h_hat has {h_hat.shape[-1]} values, expected "
                            f"{params['q_W1'].shape[0]}")
    a1 = np.maximum(h_hat @ params["q_W1"] + params["q_b1"], 0.0)
    return a1 @ params["q_W2"] + params["q_b2"]


q_forward = q_head


class Tape(NamedTuple):
    windows: Windows
    X: np.ndarray
    enc: tuple
    h_hat: np.ndarray
    z1: np.ndarray
    a1: np.ndarray


def forward(params: QParams, windows: Windows) -> tuple[np.ndarray, Tape]:
    """Q-values (B, 3) at the last day of every window, plus the tape
    needed by :func:`backward`."""
    _check_windows(params, windows)
    X = _inputs(params, windows)
    if params.spec.encoder == BIGRU:
        H, cache = _bigru_states(params, X)
        d = H.shape[-1]
        h_t = H[:, -1]
        hist = H[:, :-1]
        if hist.shape[1]:
            s = np.einsum("bd,btd->bt", h_t, hist) / math.sqrt(d)
            e = np.exp(s - s.max(axis=1, keepdims=True))
            att = e / e.sum(axis=1, keepdims=True)
            c = np.einsum("bt,btd->bd", att, hist)
        else:
            att = np.zeros((len(h_t), 0))
            c = np.zeros_like(h_t)
        h_hat = np.concatenate([h_t, c], axis=1)
        enc = (H, cache, att)
    else:
        e = np.tanh(X[:, -1] @ params["ff_W"] + params["ff_b"])
        h_hat = e
        enc = (e,)
    z1 = h_hat @ params["q_W1"] + params["q_b1"]
    a1 = np.maximum(z1, 0.0)
    q = a1 @ params["q_W2"] + params["q_b2"]
    return q, Tape(windows, X, enc, h_hat, z1, a1)


def backward(params: QParams, tape: Tape | None, dq) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss with respect to every parameter, given
    ``dq = dloss/dQ`` of shape (B, 3) for the recorded forward pass."""
    if tape is None:
        raise NoRecordedForward("backward() called before forward()")
    dq = np.asarray(dq, dtype=float)
    if dq.shape != tape.a1.shape[:1] + (N_ACTIONS,):
        raise ShapeMismatch(f"dq shape {dq.shape}")
    g = params.zeros_like()
    g["q_W2"] = tape.a1.T @ dq
    g["q_b2"] = dq.sum(axis=0)
    dz1 = (dq @ params["q_W2"].T) * (tape.z1 > 0)
    g["q_W1"] = tape.h_hat.T @ dz1
    g["q_b1"] = dz1.sum(axis=0)
    dh_hat = dz1 @ params["q_W1"].T
    X = tape.X
    dX = np.zeros_like(X)
    if params.spec.encoder == BIGRU:
        H, cache, att = tape.enc
        B, T, d = H.shape
        dH = np.zeros_like(H)
        dh_t = dh_hat[:, :d].copy()
        dc = dh_hat[:, d:]
        if T > 1:
            hist = H[:, :-1]
            h_t = H[:, -1]
            dH[:, :-1] += att[:, :, None] * dc[:, None, :]
            da = np.einsum("btd,bd->bt", hist, dc)
            ds = att * (da - (att * da).sum(axis=1, keepdims=True)) / math.sqrt(d)
            dh_t += np.einsum("bt,btd->bd", ds, hist)
            dH[:, :-1] += ds[:, :, None] * h_t[:, None, :]
        dH[:, -1] += dh_t
        hh = d // 2
        dhs = np.stack([dH[:, :, :hh], dH[:, ::-1, hh:]])
        Ws, Us, _ = _stacked(params)
        dXs, dW, dU, db = _gru_scan_backward(dhs, cache, Ws, Us)
        dX += dXs[0] + dXs[1][:, ::-1]
        for k, side in enumerate(("fwd", "bwd")):
            g[f"{side}_W"], g[f"{side}_U"], g[f"{side}_b"] = dW[k], dU[k], db[k]
    else:
        (e,) = tape.enc
        dpre = dh_hat * (1.0 - e * e)
        g["ff_W"] = X[:, -1].T @ dpre
        g["ff_b"] = dpre.sum(axis=0)
        dX[:, -1] = dpre @ params["ff_W"].T
    d_a = params.spec.d_a
    onehot = np.eye(N_ACTIONS)[tape.windows.act_idx.reshape(-1)]
    g["embed"] = onehot.T @ dX[..., :d_a].reshape(-1, d_a)
    return g


def q_values(params: QParams, windows: Windows) -> np.ndarray:
    return forward(params, windows)[0]


class QNetwork:
    """Stateful convenience wrapper: remembers the last forward pass."""

    def __init__(self, params: QParams):
        self.params = params
        self._tape = None

    def forward(self, windows: Windows) -> np.ndarray:
        q, self._tape = forward(self.params, windows)
        return q

    def backward(self, dq) -> dict[str, np.ndarray]:
        return backward(self.params, self._tape, dq)


# ---------------------------------------------------------------------------
# Optimiser
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = None


class Adam:
    """Adam with bias correction; optional global-norm gradient clipping."""

    def __init__(self, cfg: AdamConfig | None = None):
        self.cfg = cfg or AdamConfig()
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: QParams, grads: dict[str, np.ndarray]) -> QParams:
        cfg = self.cfg
        for k, v in params.arrays.items():
            if k not in grads or np.shape(grads[k]) != v.shape:
                raise ShapeMismatch(f"gradient for {k} missing or misshaped")
        if cfg.clip_norm is not None:
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            scale = min(1.0, cfg.clip_norm / norm) if norm > 0 else 1.0
        else:
            scale = 1.0
        self.t += 1
        bc1 = 1.0 - cfg.beta1 ** self.t
        bc2 = 1.0 - cfg.beta2 ** self.t
        new = {}
        for k, p in params.arrays.items():
            g = grads[k] * scale
            m = self.m.get(k, np.zeros_like(p))
            v = self.v.get(k, np.zeros_like(p))
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
            self.m[k], self.v[k] = m, v
            new[k] = p - cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        return QParams(params.spec, new)


def optimizer_step(params: QParams, grads, optimizer: Adam) -> QParams:
    return optimizer.step(params, grads)


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------

def finite_difference_check(params: QParams, windows: Windows, loss_fn,
                            eps: float = 1e-5, grads=None) -> float:
    """Largest relative error between analytic and central-difference
    gradients, taken per parameter array as ``|g - g_fd| / max(|g|, |g_fd|)``.

    ``loss_fn(q) -> (loss, dloss/dq)``. ``grads`` overrides the analytic
    gradients (to test the checker itself).
    """
    if grads is None:
        q, tape = forward(params, windows)
        _, dq = loss_fn(q)
        grads = backward(params, tape, dq)
    worst = 0.0
    for name, p in params.arrays.items():
        fd = np.zeros_like(p)
        flat = p.reshape(-1)
        out = fd.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            lp = loss_fn(forward(params, windows)[0])[0]
            flat[i] = old - eps
            lm = loss_fn(forward(params, windows)[0])[0]
            flat[i] = old
            out[i] = (lp - lm) / (2 * eps)
        a = np.linalg.norm(grads[name])
        n = np.linalg.norm(fd)
        if max(a, n) < 1e-12:
            continue
        worst = max(worst, float(np.linalg.norm(grads[name] - fd) / max(a, n)))
    return worst


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_params(params: QParams, path) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": asdict(params.spec),
        "arrays": {k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()}
                   for k, v in params.arrays.items()},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_params(path, spec: NetSpec | None = None) -> QParams:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} parameter file")
    stored = NetSpec(**doc["spec"])
    if spec is not None and spec != stored:
        raise ShapeMismatch(f"{path}: stored spec {stored} != expected {spec}")
    arrays = {}
    for k, entry in doc["arrays"].items():
        shape = tuple(entry["shape"])
        data = np.asarray(entry["data"], dtype=float)
        if data.size != math.prod(shape):
            raise ShapeMismatch(f"{path}: {k} has {data.size} values for shape {shape}")
        arrays[k] = data.reshape(shape)
    return QParams(stored, arrays)
