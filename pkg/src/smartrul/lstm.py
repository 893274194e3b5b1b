"""Stacked LSTM regressor in numpy: forward pass, BPTT and gradient checking.

Gate blocks are stored side by side in one matrix per layer, in the order
input, forget, output, candidate::

    z = x @ W + h_prev @ U + b          # (batch, 4 * hidden)
    i, f, o = sigmoid(z[:, :3h])         # split in thirds
    g = tanh(z[:, 3h:])
    c = f * c_prev + i * g
    h = o * tanh(c)

Inverted dropout is applied to the first layer's output sequence and to the
last layer's final state before the linear head.
"""

from __future__ import annotations

import copy
import enum
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence, TextIO

import numpy as np

from . import MAX_RUL, SMART_IDS, TIME_STEPS

MODEL_MAGIC = "smartrul-lstm"
MODEL_FORMAT = 1
GATES = ("input", "forget", "output", "candidate")


class Mode(enum.Enum):
    TRAIN = "train"
    INFER = "infer"


class NumericError(FloatingPointError):
    pass


def sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form avoids overflow warnings for large |z|
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


@dataclass
class LstmLayerParams:
    W: np.ndarray  # (in, 4h)
    U: np.ndarray  # (h, 4h)
    b: np.ndarray  # (4h,)

    @property
    def hidden_size(self) -> int:
        return self.U.shape[0]

    @property
    def input_size(self) -> int:
        return self.W.shape[0]

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(W_g, U_g, b_g) for one gate, with W_g shaped (hidden, in)."""
        h = self.hidden_size
        k = GATES.index(name)
        sl = slice(k * h, (k + 1) * h)
        return self.W[:, sl].T, self.U[:, sl].T, self.b[sl]


@dataclass
class LstmModel:
    layers: list[LstmLayerParams]
    head_w: np.ndarray  # (h,)
    head_b: np.ndarray  # (1,)
    dropout: float = 0.2
    ts: int = TIME_STEPS
    feature_order: tuple[int, ...] = SMART_IDS
    norm_strategy: str = "train-minmax"
    version: int = 1
    seed: int = 0
    max_rul: float = MAX_RUL

    def __post_init__(self):
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def input_size(self) -> int:
        return self.layers[0].input_size

    @property
    def hidden_sizes(self) -> list[int]:
        return [layer.hidden_size for layer in self.layers]

    def named_parameters(self) -> Iterator[tuple[str, np.ndarray]]:
        for i, layer in enumerate(self.layers):
            yield f"layer{i}.W", layer.W
            yield f"layer{i}.U", layer.U
            yield f"layer{i}.b", layer.b
        yield "head.w", self.head_w
        yield "head.b", self.head_b

    def parameter(self, name: str) -> np.ndarray:
        return dict(self.named_parameters())[name]

    def copy(self) -> "LstmModel":
        return copy.deepcopy(self)

    def n_parameters(self) -> int:
        return sum(p.size for _, p in self.named_parameters())


def init_model(
    input_size: int = len(SMART_IDS),
    hidden_sizes: Sequence[int] = (100, 100),
    dropout: float = 0.2,
    ts: int = TIME_STEPS,
    seed: int = 0,
    **meta,
) -> LstmModel:
    """Uniform(-1/sqrt(h), 1/sqrt(h)) weights, zero biases except forget gate = 1."""
    rng = np.random.default_rng(seed)
    layers = []
    n_in = input_size
    for h in hidden_sizes:
        bound = 1.0 / np.sqrt(h)
        b = np.zeros(4 * h)
        b[h : 2 * h] = 1.0
        layers.append(
            LstmLayerParams(
                W=rng.uniform(-bound, bound, (n_in, 4 * h)),
                U=rng.uniform(-bound, bound, (h, 4 * h)),
                b=b,
            )
        )
        n_in = h
    bound = 1.0 / np.sqrt(n_in)
    return LstmModel(
        layers=layers,
        head_w=rng.uniform(-bound, bound, n_in),
        head_b=np.zeros(1),
        dropout=dropout,
        ts=ts,
        seed=seed,
        **meta,
    )


@dataclass
class _LayerCache:
    # time-major arrays
    x: np.ndarray  # (T, B, in)
    gates: np.ndarray  # (T, B, 4h) activated
    c: np.ndarray  # (T + 1, B, h)
    tanh_c: np.ndarray  # (T, B, h)
    h: np.ndarray  # (T + 1, B, h)


@dataclass
class ForwardCache:
    layers: list[_LayerCache]
    masks: list[np.ndarray]
    head_in: np.ndarray  # (B, h)
    output: np.ndarray = field(repr=False)


class Gradients(dict):
    """Parameter name -> gradient array, same shapes as the model's."""


def _layer_forward(p: LstmLayerParams, x: np.ndarray) -> _LayerCache:
    T, B, _ = x.shape
    h = p.hidden_size
    h3 = 3 * h
    gates = x @ p.W
    gates += p.b
    c = np.zeros((T + 1, B, h))
    hs = np.zeros((T + 1, B, h))
    tanh_c = np.empty((T, B, h))
    ig = np.empty((B, h))
    for t in range(T):
        a = gates[t]
        if t:
            a += hs[t] @ p.U
        sg = a[:, :h3]
        sg *= 0.5
        np.tanh(sg, out=sg)
        sg *= 0.5
        sg += 0.5
        np.tanh(a[:, h3:], out=a[:, h3:])
        np.multiply(a[:, h : 2 * h], c[t], out=c[t + 1])
        np.multiply(a[:, :h], a[:, h3:], out=ig)
        c[t + 1] += ig
        np.tanh(c[t + 1], out=tanh_c[t])
        np.multiply(a[:, 2 * h : h3], tanh_c[t], out=hs[t + 1])
    if not np.isfinite(hs).all():
        bad = int(np.nonzero(~np.isfinite(hs).all(axis=(1, 2)))[0][0]) - 1
        raise NumericError(f"non-finite activation at timestep {bad}")
    return _LayerCache(x, gates, c, tanh_c, hs)


def _layer_backward(p: LstmLayerParams, cache: _LayerCache, dH: np.ndarray,
                    need_dx: bool = True) -> tuple[np.ndarray, ...]:
    """Gradients (dW, dU, db, dx) given dLoss/d(output sequence), all time-major."""
    T, B, h = dH.shape
    dZ = np.empty((T, B, 4 * h))
    dh = np.zeros((B, h))
    dc = np.zeros((B, h))
    tmp = np.empty((B, h))
    UT = np.ascontiguousarray(p.U.T)
    for t in range(T - 1, -1, -1):
        a = cache.gates[t]
        i, f, o, g = a[:, :h], a[:, h : 2 * h], a[:, 2 * h : 3 * h], a[:, 3 * h :]
        tc = cache.tanh_c[t]
        dz = dZ[t]
        dh += dH[t]
        # output gate: dh * tanh(c) * o * (1 - o)
        np.multiply(dh, tc, out=dz[:, 2 * h : 3 * h])
        np.subtract(1.0, o, out=tmp)
        tmp *= o
        dz[:, 2 * h : 3 * h] *= tmp
        # cell: dc += dh * o * (1 - tanh(c)^2)
        np.multiply(tc, tc, out=tmp)
        np.subtract(1.0, tmp, out=tmp)
        tmp *= o
        tmp *= dh
        dc += tmp
        # input gate: dc * g * i * (1 - i)
        np.subtract(1.0, i, out=tmp)
        tmp *= i
        tmp *= g
        np.multiply(dc, tmp, out=dz[:, :h])
        # forget gate: dc * c_prev * f * (1 - f)
        np.subtract(1.0, f, out=tmp)
        tmp *= f
        tmp *= cache.c[t]
        np.multiply(dc, tmp, out=dz[:, h : 2 * h])
        # candidate: dc * i * (1 - g^2)
        np.multiply(g, g, out=tmp)
        np.subtract(1.0, tmp, out=tmp)
        tmp *= i
        np.multiply(dc, tmp, out=dz[:, 3 * h :])
        dc *= f
        if t:
            np.dot(dz, UT, out=dh)
    flat = dZ.reshape(T * B, 4 * h)
    dW = cache.x.reshape(T * B, -1).T @ flat
    dU = cache.h[1:T].reshape((T - 1) * B, h).T @ flat[B:]
    db = flat.sum(axis=0)
    dx = dZ @ p.W.T if need_dx else None
    return dW, dU, db, dx


def dropout_masks(model: LstmModel, batch: int, steps: int, rng: np.random.Generator) -> list[np.ndarray]:
    """One inverted-dropout mask per layer: full (steps, batch, h) sequences
    between layers, the (batch, h) final state at the head."""
    keep = 1.0 - model.dropout
    masks = []
    for k, h in enumerate(model.hidden_sizes):
        shape = (batch, h) if k == len(model.layers) - 1 else (steps, batch, h)
        if model.dropout == 0:
            masks.append(np.ones(shape))
        else:
            masks.append((rng.random(shape) < keep) / keep)
    return masks


def forward(
    model: LstmModel,
    window: np.ndarray,
    mode: Mode = Mode.INFER,
    rng: np.random.Generator | None = None,
    masks: list[np.ndarray] | None = None,
    clamp: bool = True,
) -> tuple[np.ndarray | float, ForwardCache | None]:
    """RUL estimate for one (ts, f) window or a (batch, ts, f) stack.

    In ``INFER`` mode dropout is the identity and the output is clamped to
    ``[0, max_rul]`` (pass ``clamp=False`` to get the raw head value). In
    ``TRAIN`` mode the output is never clamped and a cache for
    :func:`backward` is returned; masks are drawn from ``rng`` unless given.
    """
    x = np.asarray(window, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[2] != model.input_size:
        raise ValueError(f"window shape {np.shape(window)} does not match {model.input_size} features")
    if x.shape[1] != model.ts:
        raise ValueError(f"window has {x.shape[1]} steps, model expects {model.ts}")
    B, T, _ = x.shape

    train = mode is Mode.TRAIN
    if train and masks is None:
        if rng is None:
            raise ValueError("train mode needs an rng or explicit masks")
        masks = dropout_masks(model, B, T, rng)

    caches = []
    inp = np.ascontiguousarray(x.transpose(1, 0, 2))
    for k, layer in enumerate(model.layers):
        lc = _layer_forward(layer, inp)
        caches.append(lc)
        out = lc.h[1:]
        if k < len(model.layers) - 1:
            inp = out * masks[k] if train else out
    last = caches[-1].h[-1]
    head_in = last * masks[-1] if train else last
    y = head_in @ model.head_w + model.head_b[0]

    if not train:
        if clamp:
            y = np.clip(y, 0.0, model.max_rul)
        return (float(y[0]) if single else y), None
    cache = ForwardCache(caches, masks, head_in, y)
    return (float(y[0]) if single else y), cache


def loss_mse(rul_hat, label):
    """Half squared error; arrays are averaged over the batch."""
    d = np.asarray(rul_hat, dtype=np.float64) - np.asarray(label, dtype=np.float64)
    return float(np.mean(d * d) / 2.0)


def loss_grad(rul_hat, label) -> np.ndarray:
    """d(loss_mse)/d(rul_hat) for each batch element."""
    d = np.atleast_1d(np.asarray(rul_hat, dtype=np.float64) - np.asarray(label, dtype=np.float64))
    return d / d.size


def backward(model: LstmModel, cache: ForwardCache | None, d_loss) -> Gradients:
    """Exact gradients of the loss w.r.t. every parameter via BPTT.

    ``d_loss`` is dLoss/d(output), a scalar for a single window or a
    (batch,) array.
    """
    if cache is None:
        raise RuntimeError("backward needs the cache from a train-mode forward pass")
    dy = np.atleast_1d(np.asarray(d_loss, dtype=np.float64))
    grads = Gradients()
    n = len(model.layers)
    d_last = dy[:, None] * model.head_w[None, :] * cache.masks[-1]
    dH = np.zeros_like(cache.layers[-1].h[1:])
    dH[-1] = d_last
    per_layer = [None] * n
    for k in range(n - 1, -1, -1):
        dW, dU, db, dx = _layer_backward(model.layers[k], cache.layers[k], dH, need_dx=k > 0)
        per_layer[k] = (dW, dU, db)
        if k > 0:
            dH = dx * cache.masks[k - 1]
    for k, (dW, dU, db) in enumerate(per_layer):
        grads[f"layer{k}.W"] = dW
        grads[f"layer{k}.U"] = dU
        grads[f"layer{k}.b"] = db
    grads["head.w"] = cache.head_in.T @ dy
    grads["head.b"] = np.array([dy.sum()])
    return grads


class GradCheckReport(NamedTuple):
    max_rel_error: float
    parameter: str
    index: tuple[int, ...]
    passed: bool
    n_checked: int


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero gradients from dominating."""
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def grad_check(
    model: LstmModel,
    window: np.ndarray,
    label: float,
    epsilon: float = 1e-5,
    tolerance: float = 1e-4,
    seed: int = 0,
) -> GradCheckReport:
    """Compare BPTT gradients with central finite differences on every parameter.

    Dropout masks are drawn once from ``seed`` and held fixed. Passes when
    the largest relative error is strictly below ``tolerance``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    x = np.asarray(window, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    masks = dropout_masks(model, x.shape[0], x.shape[1], np.random.default_rng(seed))

    def loss_at() -> float:
        y, _ = forward(model, x, Mode.TRAIN, masks=masks)
        return loss_mse(y, label)

    y, cache = forward(model, x, Mode.TRAIN, masks=masks)
    grads = backward(model, cache, loss_grad(y, label))

    worst = (-1.0, "", ())
    n = 0
    for name, p in model.named_parameters():
        numeric = np.empty_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + epsilon
            up = loss_at()
            p[idx] = old - epsilon
            down = loss_at()
            p[idx] = old
            numeric[idx] = (up - down) / (2 * epsilon)
        err = relative_error(grads[name], numeric)
        n += p.size
        j = np.unravel_index(int(np.argmax(err)), p.shape)
        if err[j] > worst[0]:
            worst = (float(err[j]), name, tuple(int(v) for v in j))
    return GradCheckReport(worst[0], worst[1], worst[2], worst[0] < tolerance, n)


# -- model file ---------------------------------------------------------------

def _write_array(out: TextIO, name: str, a: np.ndarray) -> None:
    a2 = a.reshape(1, -1) if a.ndim == 1 else a
    out.write(f"array {name} {a2.shape[0]} {a2.shape[1]}\n")
    for row in a2:
        out.write(" ".join(repr(float(v)) for v in row) + "\n")


def dumps_model(model: LstmModel) -> str:
    out = io.StringIO()
    out.write(f"{MODEL_MAGIC} {MODEL_FORMAT}\n")
    out.write(f"version {model.version}\n")
    out.write(f"seed {model.seed}\n")
    out.write(f"ts {model.ts}\n")
    out.write(f"dropout {model.dropout!r}\n")
    out.write(f"max_rul {float(model.max_rul)!r}\n")
    out.write("feature_order " + " ".join(str(i) for i in model.feature_order) + "\n")
    out.write(f"norm_strategy {model.norm_strategy}\n")
    out.write(f"input_size {model.input_size}\n")
    out.write("hidden_sizes " + " ".join(str(h) for h in model.hidden_sizes) + "\n")
    for name, p in model.named_parameters():
        _write_array(out, name, p)
    out.write("end\n")
    return out.getvalue()


def loads_model(text: str) -> LstmModel:
    lines = iter(text.splitlines())
    magic = next(lines).split()
    if magic[0] != MODEL_MAGIC or int(magic[1]) != MODEL_FORMAT:
        raise ValueError("not a smartrul LSTM model file")
    meta: dict[str, list[str]] = {}
    arrays: dict[str, np.ndarray] = {}
    for line in lines:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "end":
            break
        if parts[0] == "array":
            name, r, c = parts[1], int(parts[2]), int(parts[3])
            rows = [[float(v) for v in next(lines).split()] for _ in range(r)]
            a = np.array(rows, dtype=np.float64).reshape(r, c)
            arrays[name] = a
        else:
            meta[parts[0]] = parts[1:]
    hidden = [int(h) for h in meta["hidden_sizes"]]
    layers = [
        LstmLayerParams(
            W=arrays[f"layer{k}.W"],
            U=arrays[f"layer{k}.U"],
            b=arrays[f"layer{k}.b"].reshape(-1),
        )
        for k in range(len(hidden))
    ]
    return LstmModel(
        layers=layers,
        head_w=arrays["head.w"].reshape(-1),
        head_b=arrays["head.b"].reshape(-1),
        dropout=float(meta["dropout"][0]),
        ts=int(meta["ts"][0]),
        feature_order=tuple(int(v) for v in meta["feature_order"]),
        norm_strategy=meta["norm_strategy"][0],
        version=int(meta["version"][0]),
        seed=int(meta["seed"][0]),
        max_rul=float(meta["max_rul"][0]),
    )


def save_model(model: LstmModel, path: str | Path) -> None:
    Path(path).write_text(dumps_model(model))


def load_model(path: str | Path) -> LstmModel:
    return loads_model(Path(path).read_text())
