"""Two-layer LSTM encoder-decoder with exact BPTT gradients and Adam.

All parameters live in one flat float64 vector; the named arrays in
``Seq2SeqModel.params`` are views into it. The canonical order is

    enc_W (4H, 1), enc_U (4H, H), enc_b (4H,),
    dec_W (4H, H), dec_U (4H, H), dec_b (4H,),
    head_w (H,), head_b (1,)

with gate blocks ordered [input, forget, candidate, output]. The encoder reads
the h-step history; its last hidden state (after dropout) is repeated p times
as the decoder's input sequence, the decoder starts from a zero state, and a
shared linear head maps each decoder output to one forecast value.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

WEIGHTS_FORMAT = "fedlink-weights v1"


class DivergenceError(FloatingPointError):
    """Non-finite activations or loss during training."""


def _layout(hidden: int, input_size: int = 1) -> list[tuple[str, tuple[int, ...]]]:
    H = hidden
    return [
        ("enc_W", (4 * H, input_size)),
        ("enc_U", (4 * H, H)),
        ("enc_b", (4 * H,)),
        ("dec_W", (4 * H, H)),
        ("dec_U", (4 * H, H)),
        ("dec_b", (4 * H,)),
        ("head_w", (H,)),
        ("head_b", (1,)),
    ]


def parameter_count(hidden: int, input_size: int = 1) -> int:
    return sum(math.prod(shape) for _, shape in _layout(hidden, input_size))


class Seq2SeqModel:
    def __init__(self, h: int, p: int, hidden_size: int = 64, dropout_rate: float = 0.2):
        if min(h, p, hidden_size) < 1:
            raise ValueError("h, p and hidden_size must be positive")
        if not 0.0 <= dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        self.h = h
        self.p = p
        self.hidden_size = hidden_size
        self.dropout_rate = dropout_rate
        self.layout = _layout(hidden_size)
        self.theta = np.zeros(parameter_count(hidden_size))
        self.params: dict[str, np.ndarray] = {}
        offset = 0
        for name, shape in self.layout:
            size = math.prod(shape)
            self.params[name] = self.theta[offset : offset + size].reshape(shape)
            offset += size

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def clone(self) -> "Seq2SeqModel":
        other = Seq2SeqModel(self.h, self.p, self.hidden_size, self.dropout_rate)
        other.theta[:] = self.theta
        return other


def init_model(h: int, p: int, hidden_size: int = 64, seed: int = 0, dropout_rate: float = 0.2) -> Seq2SeqModel:
    """Glorot-uniform matrices, zero biases except forget gates at 1."""
    model = Seq2SeqModel(h, p, hidden_size, dropout_rate)
    rng = np.random.default_rng(seed)
    H = hidden_size
    for name, shape in model.layout:
        arr = model.params[name]
        if name.endswith("_b"):
            arr[:] = 0.0
            if name in ("enc_b", "dec_b"):
                arr[H : 2 * H] = 1.0
            continue
        fan_out, fan_in = (shape[0], shape[1]) if len(shape) == 2 else (1, shape[0])
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        arr[...] = rng.uniform(-limit, limit, size=shape)
    return model


def get_weights(model: Seq2SeqModel) -> np.ndarray:
    return model.theta.copy()


def set_weights(model: Seq2SeqModel, weights) -> None:
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != model.theta.shape:
        raise ValueError(f"weight vector has length {weights.size}, model expects {model.theta.size}")
    model.theta[:] = weights


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _lstm_forward(W, U, b, xs, check=True):
    """Run one LSTM layer over xs (T, B, I) from a zero state."""
    T, B, _ = xs.shape
    H = U.shape[1]
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    steps = []
    hs = np.empty((T, B, H))
    for t in range(T):
        z = xs[t] @ W.T + h @ U.T + b
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H : 2 * H])
        g = np.tanh(z[:, 2 * H : 3 * H])
        o = _sigmoid(z[:, 3 * H :])
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        steps.append((h_prev, c_prev, i, f, g, o, tc))
        hs[t] = h
    if check and not np.isfinite(hs).all():
        raise DivergenceError("non-finite LSTM activations")
    return hs, steps


def _lstm_backward(W, U, xs, steps, dhs):
    T = len(steps)
    H = U.shape[1]
    dW = np.zeros_like(W)
    dU = np.zeros_like(U)
    db = np.zeros(4 * H)
    dxs = np.empty_like(xs)
    dh_next = np.zeros_like(dhs[0])
    dc_next = np.zeros_like(dhs[0])
    dz = np.empty((dhs.shape[1], 4 * H))
    for t in reversed(range(T)):
        h_prev, c_prev, i, f, g, o, tc = steps[t]
        dh = dhs[t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H : 2 * H] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * H : 3 * H] = dc * i * (1.0 - g * g)
        dz[:, 3 * H :] = dh * tc * o * (1.0 - o)
        dW += dz.T @ xs[t]
        dU += dz.T @ h_prev
        db += dz.sum(axis=0)
        dxs[t] = dz @ W
        dh_next = dz @ U
        dc_next = dc * f
    return dW, dU, db, dxs


@dataclass
class ForwardCache:
    inputs: np.ndarray
    enc_xs: np.ndarray
    enc_steps: list
    enc_mask: np.ndarray | None
    dec_xs: np.ndarray
    dec_steps: list
    dec_hs: np.ndarray
    dec_masks: np.ndarray | None
    predictions: np.ndarray
    theta_id: int = field(default=0)


def forward(model: Seq2SeqModel, inputs, training: bool = False, rng: np.random.Generator | None = None):
    """Return (predictions (B, p), cache).

    Inverted dropout on both layers' outputs is applied only when ``training``
    and needs ``rng``; the encoder mask is drawn before the decoder masks.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.h or x.shape[0] == 0:
        raise ValueError(f"expected a non-empty batch of {model.h}-vectors, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError("non-finite model input")
    P = model.params
    B = x.shape[0]
    H = model.hidden_size
    rate = model.dropout_rate
    use_dropout = training and rate > 0.0
    if use_dropout and rng is None:
        raise ValueError("training with dropout needs an rng")

    enc_xs = x.T[:, :, None]
    enc_hs, enc_steps = _lstm_forward(P["enc_W"], P["enc_U"], P["enc_b"], enc_xs)
    summary = enc_hs[-1]
    enc_mask = None
    if use_dropout:
        enc_mask = (rng.random((B, H)) >= rate) / (1.0 - rate)
        summary = summary * enc_mask
    dec_xs = np.broadcast_to(summary, (model.p, B, H))
    dec_hs, dec_steps = _lstm_forward(P["dec_W"], P["dec_U"], P["dec_b"], dec_xs)
    dec_masks = None
    out = dec_hs
    if use_dropout:
        dec_masks = (rng.random((model.p, B, H)) >= rate) / (1.0 - rate)
        out = dec_hs * dec_masks
    preds = (out @ P["head_w"]).T + P["head_b"][0]
    if not np.isfinite(preds).all():
        raise DivergenceError("non-finite predictions")
    cache = ForwardCache(x, enc_xs, enc_steps, enc_mask, dec_xs, dec_steps, dec_hs, dec_masks, preds, id(model.theta))
    return preds, cache


def predict(model: Seq2SeqModel, inputs, batch_size: int = 4096) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    chunks = [forward(model, x[i : i + batch_size])[0] for i in range(0, x.shape[0], batch_size)]
    return np.concatenate(chunks, axis=0)


def mse_loss(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    return float(np.mean((pred - target) ** 2))


def backward(model: Seq2SeqModel, cache: ForwardCache, target) -> np.ndarray:
    """Gradient of mse_loss(predictions, target) w.r.t. the flat parameter vector."""
    target = np.asarray(target, dtype=np.float64)
    if target.ndim == 1:
        target = target[None, :]
    if cache.theta_id != id(model.theta) or target.shape != cache.predictions.shape:
        raise ValueError("cache does not belong to this model/target batch")
    P = model.params
    B, p = target.shape
    grads = {name: None for name, _ in model.layout}

    dy = 2.0 * (cache.predictions - target) / (B * p)  # (B, p)
    out = cache.dec_hs if cache.dec_masks is None else cache.dec_hs * cache.dec_masks
    grads["head_w"] = np.einsum("tbh,bt->h", out, dy)
    grads["head_b"] = np.array([dy.sum()])
    d_dec_hs = dy.T[:, :, None] * P["head_w"][None, None, :]
    if cache.dec_masks is not None:
        d_dec_hs = d_dec_hs * cache.dec_masks
    grads["dec_W"], grads["dec_U"], grads["dec_b"], d_dec_xs = _lstm_backward(
        P["dec_W"], P["dec_U"], cache.dec_xs, cache.dec_steps, d_dec_hs
    )
    d_summary = d_dec_xs.sum(axis=0)
    if cache.enc_mask is not None:
        d_summary = d_summary * cache.enc_mask
    d_enc_hs = np.zeros((cache.enc_xs.shape[0],) + d_summary.shape)
    d_enc_hs[-1] = d_summary
    grads["enc_W"], grads["enc_U"], grads["enc_b"], _ = _lstm_backward(
        P["enc_W"], P["enc_U"], cache.enc_xs, cache.enc_steps, d_enc_hs
    )
    return np.concatenate([grads[name].ravel() for name, _ in model.layout])


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n))


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float = 0.001):
    """In-place bias-corrected Adam update; returns (params, state)."""
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ValueError("parameter, gradient and moment shapes differ")
    state.t += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grads
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    params -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


def clip_by_global_norm(grads: np.ndarray, max_norm: float | None) -> np.ndarray:
    if max_norm is None:
        return grads
    norm = float(np.sqrt(np.dot(grads, grads)))
    if norm > max_norm:
        return grads * (max_norm / norm)
    return grads


def train_epoch(
    model: Seq2SeqModel,
    inputs,
    targets,
    state: AdamState,
    rng: np.random.Generator,
    batch_size: int = 256,
    lr: float = 0.001,
    clip_norm: float | None = 5.0,
) -> float:
    """One shuffled pass; returns the mean of the per-batch (pre-update) losses."""
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    n = inputs.shape[0]
    if n == 0:
        raise ValueError("empty training set")
    order = rng.permutation(n)
    losses = []
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        preds, cache = forward(model, inputs[idx], training=True, rng=rng)
        loss = mse_loss(preds, targets[idx])
        if not math.isfinite(loss):
            raise DivergenceError(f"non-finite training loss at batch starting {start}")
        grads = clip_by_global_norm(backward(model, cache, targets[idx]), clip_norm)
        adam_step(model.theta, grads, state, lr)
        losses.append(loss)
    return float(np.mean(losses))


def evaluate_loss(model: Seq2SeqModel, inputs, targets) -> float:
    return mse_loss(predict(model, inputs), targets)


def save_weights(model: Seq2SeqModel, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    shapes = ";".join(f"{name}:{'x'.join(map(str, shape))}" for name, shape in model.layout)
    with path.open("w") as fh:
        fh.write(f"# {WEIGHTS_FORMAT}\n")
        fh.write(f"# h={model.h} p={model.p} hidden={model.hidden_size} dropout={model.dropout_rate!r}\n")
        fh.write(f"# layout {shapes}\n")
        for value in model.theta:
            fh.write(f"{float(value)!r}\n")


def load_weights(path) -> Seq2SeqModel:
    path = Path(path)
    lines = path.read_text().splitlines()
    if len(lines) < 3 or lines[0] != f"# {WEIGHTS_FORMAT}":
        raise ValueError(f"{path}: not a {WEIGHTS_FORMAT} file")
    meta = dict(item.split("=") for item in lines[1][2:].split())
    model = Seq2SeqModel(int(meta["h"]), int(meta["p"]), int(meta["hidden"]), float(meta["dropout"]))
    expected = ";".join(f"{name}:{'x'.join(map(str, shape))}" for name, shape in model.layout)
    if lines[2] != f"# layout {expected}":
        raise ValueError(f"{path}: parameter layout does not match this build")
    values = np.array([float(v) for v in lines[3:] if v.strip()])
    set_weights(model, values)
    return model
