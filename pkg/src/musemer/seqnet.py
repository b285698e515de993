"""Single-layer LSTM with a sigmoid or linear one-neuron head, trained by
backpropagation through time with Adam. The final-time-step hidden state is
the clip embedding (second-last layer activation), so the head choice never
affects embeddings.

All arithmetic is 64-bit so finite-difference gradient checks at 1e-4
relative tolerance are meaningful.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np


SIGMOID = "sigmoid"
LINEAR = "linear"

PARAM_NAMES = ("Wx", "Wh", "b", "v", "c")


class SeqNetError(Exception):
    """Invalid model, data, or configuration."""


class DivergenceError(SeqNetError):
    """Training produced non-finite loss or parameters."""


@dataclass(slots=True)
class LstmModel:
    input_dim: int
    hidden_dim: int
    head: str
    params: dict  # Wx (4H, D), Wh (4H, H), b (4H,), v (H,), c ()

    def __post_init__(self):
        if self.head not in (SIGMOID, LINEAR):
            raise SeqNetError(f"unknown head: {self.head}")
        h, d = self.hidden_dim, self.input_dim
        shapes = {"Wx": (4 * h, d), "Wh": (4 * h, h), "b": (4 * h,),
                  "v": (h,), "c": ()}
        for name, shape in shapes.items():
            arr = np.asarray(self.params[name], dtype=np.float64)
            if arr.shape != shape:
                raise SeqNetError(f"parameter {name} has shape {arr.shape}, "
                                  f"expected {shape}")
            if not np.isfinite(arr).all():
                raise SeqNetError(f"non-finite values in parameter {name}")
            self.params[name] = arr


@dataclass(frozen=True, slots=True)
class TrainConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 100
    val_fraction: float = 0.1
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise SeqNetError("val_fraction must be in (0, 1)")
        if self.epochs < 1:
            raise SeqNetError("epochs must be >= 1")


def init_model(input_dim: int, hidden_dim: int = 128, head: str = SIGMOID,
               seed: int = 0) -> LstmModel:
    rng = np.random.default_rng(seed)
    limit = 1.0 / np.sqrt(hidden_dim)
    params = {
        "Wx": rng.uniform(-limit, limit, (4 * hidden_dim, input_dim)),
        "Wh": rng.uniform(-limit, limit, (4 * hidden_dim, hidden_dim)),
        "b": np.zeros(4 * hidden_dim),
        "v": rng.uniform(-limit, limit, hidden_dim),
        "c": np.float64(0.0),
    }
    return LstmModel(input_dim, hidden_dim, head, params)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500, 500)))


def _forward_cache(model: LstmModel, seq: np.ndarray) -> dict:
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[1] != model.input_dim:
        raise SeqNetError(
            f"sequence shape {seq.shape} incompatible with input_dim "
            f"{model.input_dim}"
        )
    if seq.shape[0] < 1:
        raise SeqNetError("sequence must have at least one time step")
    if not np.isfinite(seq).all():
        raise SeqNetError("non-finite sequence input")
    h_dim = model.hidden_dim
    p = model.params
    T = seq.shape[0]
    h = np.zeros(h_dim)
    c = np.zeros(h_dim)
    cache = {"x": seq, "h": np.zeros((T, h_dim)), "c": np.zeros((T, h_dim)),
             "gates": np.zeros((T, 4, h_dim)), "c_prev": np.zeros((T, h_dim))}
    for t in range(T):
        z = p["Wx"] @ seq[t] + p["Wh"] @ h + p["b"]
        i = _sigmoid(z[:h_dim])
        f = _sigmoid(z[h_dim:2 * h_dim])
        g = np.tanh(z[2 * h_dim:3 * h_dim])
        o = _sigmoid(z[3 * h_dim:])
        cache["c_prev"][t] = c
        c = f * c + i * g
        h = o * np.tanh(c)
        cache["gates"][t] = [i, f, g, o]
        cache["h"][t] = h
        cache["c"][t] = c
    s = float(p["v"] @ h + p["c"])
    cache["s"] = s
    cache["output"] = _sigmoid(s) if model.head == SIGMOID else s
    return cache


def forward(model: LstmModel, seq: np.ndarray) -> tuple[float, np.ndarray]:
    """Run the recurrence from zero state; returns (head output, hidden states)."""
    cache = _forward_cache(model, seq)
    return float(cache["output"]), cache["h"]


def embed(model: LstmModel, seq: np.ndarray) -> np.ndarray:
    """Final-time-step hidden state; independent of the head."""
    return _forward_cache(model, seq)["h"][-1].copy()


def sample_loss(model: LstmModel, seq: np.ndarray, label: float) -> float:
    out = _forward_cache(model, seq)["output"]
    if model.head == SIGMOID:
        out = min(max(out, 1e-12), 1.0 - 1e-12)
        return float(-(label * np.log(out) + (1.0 - label) * np.log(1.0 - out)))
    return float((out - label) ** 2)


def batch_loss(model: LstmModel, batch: Sequence[tuple[np.ndarray, float]]) -> float:
    return float(np.mean([sample_loss(model, seq, lab) for seq, lab in batch]))


def _loss_for_head(head: str) -> str:
    return "bce" if head == SIGMOID else "mse"


def gradients(
    model: LstmModel,
    batch: Sequence[tuple[np.ndarray, float]],
    loss_kind: str | None = None,
) -> dict:
    """Analytic gradients of the mean batch loss for every parameter."""
    if not batch:
        raise SeqNetError("empty batch")
    expected = _loss_for_head(model.head)
    if loss_kind is not None and loss_kind != expected:
        raise SeqNetError(f"loss {loss_kind!r} does not match head {model.head!r}")

    h_dim = model.hidden_dim
    p = model.params
    grads = {name: np.zeros_like(np.asarray(p[name], dtype=np.float64))
             for name in PARAM_NAMES}
    for seq, label in batch:
        cache = _forward_cache(model, seq)
        T = cache["x"].shape[0]
        if model.head == SIGMOID:
            ds = cache["output"] - label  # d(BCE)/ds for sigmoid output
        else:
            ds = 2.0 * (cache["output"] - label)
        grads["v"] += ds * cache["h"][-1]
        grads["c"] += ds
        dh = ds * p["v"]
        dc = np.zeros(h_dim)
        for t in range(T - 1, -1, -1):
            i, f, g, o = cache["gates"][t]
            c_t = cache["c"][t]
            tanh_c = np.tanh(c_t)
            do = dh * tanh_c
            dc = dc + dh * o * (1.0 - tanh_c**2)
            di = dc * g
            dg = dc * i
            df = dc * cache["c_prev"][t]
            dz = np.concatenate([
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g**2),
                do * o * (1.0 - o),
            ])
            h_prev = cache["h"][t - 1] if t > 0 else np.zeros(h_dim)
            grads["Wx"] += np.outer(dz, cache["x"][t])
            grads["Wh"] += np.outer(dz, h_prev)
            grads["b"] += dz
            dh = p["Wh"].T @ dz
            dc = dc * f
    scale = 1.0 / len(batch)
    return {name: g * scale for name, g in grads.items()}


@dataclass(slots=True)
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls(
            m={k: np.zeros_like(np.asarray(val, dtype=np.float64))
               for k, val in params.items()},
            v={k: np.zeros_like(np.asarray(val, dtype=np.float64))
               for k, val in params.items()},
        )


def adam_step(params: dict, grads: dict, state: AdamState,
              config: TrainConfig) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update; returns new params and state."""
    if set(params) != set(grads):
        raise SeqNetError("parameter/gradient name mismatch")
    t = state.step + 1
    new_params, new_m, new_v = {}, {}, {}
    for name in params:
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != np.asarray(params[name]).shape:
            raise SeqNetError(f"gradient shape mismatch for {name}")
        m = config.beta1 * state.m[name] + (1.0 - config.beta1) * g
        v = config.beta2 * state.v[name] + (1.0 - config.beta2) * g**2
        m_hat = m / (1.0 - config.beta1**t)
        v_hat = v / (1.0 - config.beta2**t)
        new_params[name] = params[name] - config.learning_rate * m_hat / (
            np.sqrt(v_hat) + config.adam_eps
        )
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(m=new_m, v=new_v, step=t)


@dataclass(slots=True)
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)

    @property
    def best_epoch(self) -> int:
        return int(np.argmin(self.val_loss))


def _split_validation(dataset, config, rng):
    n = len(dataset)
    n_val = max(1, int(round(config.val_fraction * n)))
    if n_val >= n:
        raise SeqNetError("dataset too small for the validation split")
    for attempt in range(20):
        order = rng.permutation(n)
        val_idx = order[:n_val]
        train_idx = order[n_val:]
        labels = {dataset[i][1] for i in val_idx}
        if len(labels) > 1 or len({lab for _, lab in dataset}) == 1:
            return [dataset[i] for i in train_idx], [dataset[i] for i in val_idx]
        if attempt == 0:
            warnings.warn("single-class validation split; re-splitting")
    return [dataset[i] for i in train_idx], [dataset[i] for i in val_idx]


def train(
    dataset: Sequence[tuple[np.ndarray, float]],
    input_dim: int,
    hidden_dim: int = 128,
    head: str = SIGMOID,
    config: TrainConfig = TrainConfig(),
) -> tuple[LstmModel, TrainHistory]:
    """Mini-batch Adam training; returns the min-validation-loss snapshot."""
    if not dataset:
        raise SeqNetError("empty dataset")
    if head == SIGMOID and any(lab not in (0.0, 1.0) for _, lab in dataset):
        raise SeqNetError("sigmoid head needs binary 0/1 labels")
    rng = np.random.default_rng(config.seed)
    train_set, val_set = _split_validation(list(dataset), config, rng)

    model = init_model(input_dim, hidden_dim, head, seed=config.seed)
    state = AdamState.zeros_like(model.params)
    history = TrainHistory()
    best_params = {k: np.copy(v) for k, v in model.params.items()}
    best_val = np.inf

    for _ in range(config.epochs):
        order = rng.permutation(len(train_set))
        for start in range(0, len(order), config.batch_size):
            batch = [train_set[i] for i in order[start:start + config.batch_size]]
            grads = gradients(model, batch)
            new_params, state = adam_step(model.params, grads, state, config)
            model = LstmModel(input_dim, hidden_dim, head, new_params)
        tl = batch_loss(model, train_set)
        vl = batch_loss(model, val_set)
        if not (np.isfinite(tl) and np.isfinite(vl)):
            raise DivergenceError("training loss diverged to non-finite values")
        history.train_loss.append(tl)
        history.val_loss.append(vl)
        if vl < best_val:
            best_val = vl
            best_params = {k: np.copy(v) for k, v in model.params.items()}

    return LstmModel(input_dim, hidden_dim, head, best_params), history


LSTM_MAGIC = b"LSTM"
_HEAD_CODES = {SIGMOID: 0, LINEAR: 1}


def save_model(model: LstmModel, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(LSTM_MAGIC)
        fh.write(struct.pack("<IIB", model.input_dim, model.hidden_dim,
                             _HEAD_CODES[model.head]))
        for name in PARAM_NAMES:
            fh.write(np.asarray(model.params[name], dtype="<f8").tobytes())


def load_model(path: str | Path) -> LstmModel:
    raw = Path(path).read_bytes()
    if raw[:4] != LSTM_MAGIC:
        raise SeqNetError(f"bad model magic in {path}")
    d_in, h, head_code = struct.unpack_from("<IIB", raw, 4)
    head = {v: k for k, v in _HEAD_CODES.items()}[head_code]
    off = 13
    params = {}
    for name, shape in (("Wx", (4 * h, d_in)), ("Wh", (4 * h, h)),
                        ("b", (4 * h,)), ("v", (h,)), ("c", ())):
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off)
        off += 8 * count
        params[name] = arr.reshape(shape).copy() if shape else np.float64(arr[0])
    return LstmModel(d_in, h, head, params)
