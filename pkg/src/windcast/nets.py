"""LSTM forecasters written directly in numpy.

Two topologies share one implementation:

* ``Standard``: stacked LSTM over the past window, where each step sees the
  current-day value and the value at the same hour of the previous day
  (two input channels), followed by a linear head.
* ``BiFeature``: the same forward stack plus a second, parallel stack that
  reads the previous day's values *after* the forecast hour in reverse time
  order. The two final hidden states are concatenated before the head.

Training is mini-batch BPTT with Adam on the mean squared error.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, MissingBackwardFeatures, NonFiniteLoss, SeriesTooShort, ShapeMismatch

DAY_STRIDE = 24
FORWARD_CHANNELS = 2  # current day, previous day


class NetKind(str, Enum):
    STANDARD = "Standard"
    BIFEATURE = "BiFeature"


@dataclass(frozen=True)
class NetworkSpec:
    kind: NetKind = NetKind.STANDARD
    layers: tuple[int, ...] = (75, 65)
    dropout: float = 0.2
    learning_rate: float = 1e-4
    batch_size: int = 100
    epochs: int = 50
    activation: str = "tanh"
    stateful: bool = True
    input_len: int = 4
    output_len: int = 1
    seed: int = 0
    clip_norm: float = 5.0
    warmup: int = 8  # earlier batch-stride windows replayed before stateful inference
    residual: bool = False  # predict increments over the last current-day input

    def __post_init__(self):
        object.__setattr__(self, "kind", NetKind(self.kind))
        object.__setattr__(self, "layers", tuple(int(h) for h in self.layers))
        if not self.layers or min(self.layers) < 1:
            raise ConfigError("layers must be a non-empty list of positive sizes")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.activation != "tanh":
            raise ConfigError("only the tanh activation is supported")
        if self.input_len < 1 or self.output_len < 1:
            raise ConfigError("input_len and output_len must be >= 1")
        if self.warmup < 0:
            raise ConfigError("warmup must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        d["layers"] = list(self.layers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown network keys: {sorted(unknown)}")
        return cls(**d)


# Hyper-parameters of the two networks as tuned for the original study, plus residual heads.
STANDARD_DEFAULTS = NetworkSpec(NetKind.STANDARD, (75, 65), 0.2, 1e-4, 100, 50, "tanh", True, residual=True)
BIFEATURE_DEFAULTS = NetworkSpec(NetKind.BIFEATURE, (25, 25), 0.02, 1e-3, 100, 25, "tanh", True, residual=True)


# ---------------------------------------------------------------------------
# single cell

@dataclass(frozen=True)
class LstmParams:
    """Weights over the concatenation ``[h_{t-1}, x_t]``.

    ``w`` has shape ``(hidden + input, 4 * hidden)`` with gate blocks ordered
    forget, input, cell, output; ``b`` has shape ``(4 * hidden,)``.
    """

    w: np.ndarray
    b: np.ndarray

    @property
    def hidden_size(self) -> int:
        return self.b.shape[0] // 4

    @property
    def input_size(self) -> int:
        return self.w.shape[0] - self.hidden_size

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        k = "fico".index(name[0])
        hs = self.hidden_size
        return self.w[:, k * hs:(k + 1) * hs], self.b[k * hs:(k + 1) * hs]


@dataclass(frozen=True)
class LstmState:
    h: np.ndarray
    c: np.ndarray


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def lstm_cell(params: LstmParams, state: LstmState, x_t) -> LstmState:
    """One LSTM step; works on a single vector or a batch of rows."""
    x_t = np.asarray(x_t, dtype=float)
    hs = params.hidden_size
    if x_t.shape[-1] != params.input_size or state.h.shape[-1] != hs or state.c.shape[-1] != hs:
        raise ShapeMismatch(
            f"cell expects input {params.input_size}, hidden {hs}; got x {x_t.shape}, h {state.h.shape}")
    z = np.concatenate([state.h, x_t], axis=-1) @ params.w + params.b
    f = sigmoid(z[..., :hs])
    i = sigmoid(z[..., hs:2 * hs])
    g = np.tanh(z[..., 2 * hs:3 * hs])
    o = sigmoid(z[..., 3 * hs:])
    c = state.c * f + g * i
    return LstmState(o * np.tanh(c), c)


# ---------------------------------------------------------------------------
# sequence layer with BPTT

def _layer_forward(w, b, x, h0, c0):
    """Run one layer over ``x`` of shape (B, T, F); returns outputs and a cache."""
    bsz, steps, _ = x.shape
    hs = b.shape[0] // 4
    w_h, w_x = w[:hs], w[hs:]
    zx = x @ w_x + b
    hseq = np.empty((bsz, steps, hs))
    cseq = np.empty((bsz, steps, hs))
    gates = np.empty((bsz, steps, 4 * hs))
    h, c = h0, c0
    for t in range(steps):
        z = zx[:, t] + h @ w_h
        a = np.empty_like(z)
        a[:, :2 * hs] = sigmoid(z[:, :2 * hs])
        a[:, 2 * hs:3 * hs] = np.tanh(z[:, 2 * hs:3 * hs])
        a[:, 3 * hs:] = sigmoid(z[:, 3 * hs:])
        c = c * a[:, :hs] + a[:, 2 * hs:3 * hs] * a[:, hs:2 * hs]
        h = a[:, 3 * hs:] * np.tanh(c)
        gates[:, t] = a
        cseq[:, t] = c
        hseq[:, t] = h
    return hseq, (x, h0, c0, hseq, cseq, gates)


def _layer_backward(w, dh_seq, cache):
    """Gradients for one layer given dLoss/dh at every step."""
    x, h0, c0, hseq, cseq, gates = cache
    bsz, steps, _ = x.shape
    hs = hseq.shape[2]
    w_h, w_x = w[:hs], w[hs:]
    dz = np.empty((bsz, steps, 4 * hs))
    dh_next = np.zeros((bsz, hs))
    dc_next = np.zeros((bsz, hs))
    for t in range(steps - 1, -1, -1):
        a = gates[:, t]
        f, i, g, o = a[:, :hs], a[:, hs:2 * hs], a[:, 2 * hs:3 * hs], a[:, 3 * hs:]
        c = cseq[:, t]
        c_prev = cseq[:, t - 1] if t > 0 else c0
        tc = np.tanh(c)
        dh = dh_seq[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        d = dz[:, t]
        d[:, :hs] = dc * c_prev * f * (1.0 - f)
        d[:, hs:2 * hs] = dc * g * i * (1.0 - i)
        d[:, 2 * hs:3 * hs] = dc * i * (1.0 - g * g)
        d[:, 3 * hs:] = dh * tc * o * (1.0 - o)
        dh_next = d @ w_h.T
        dc_next = dc * f
    h_prev = np.concatenate([h0[:, None, :], hseq[:, :-1]], axis=1)
    dw = np.empty_like(w)
    flat_dz = dz.reshape(-1, 4 * hs)
    dw[:hs] = h_prev.reshape(-1, hs).T @ flat_dz
    dw[hs:] = x.reshape(-1, x.shape[2]).T @ flat_dz
    db = flat_dz.sum(axis=0)
    dx = dz @ w_x.T
    return dw, db, dx


# ---------------------------------------------------------------------------
# features

@dataclass(frozen=True)
class FeatureTensor:
    """Inputs and target for one forecast origin.

    ``forward_in`` is ``[x_{t-m} .. x_{t-1}] ++ [x_{t-d-m} .. x_{t-d-1}]``
    (``d`` = day stride); ``backward_in`` is ``[x_{t-d+n} .. x_{t-d+1}]``
    (previous-day values after the forecast hour, reversed) or ``None``.
    """

    forward_in: np.ndarray
    backward_in: np.ndarray | None
    target: np.ndarray
    index: int


@dataclass(frozen=True)
class FeatureBatch:
    forward_in: np.ndarray          # (S, 2m)
    backward_in: np.ndarray | None  # (S, n) already reversed, or None
    target: np.ndarray              # (S, n); NaN where unknown
    index: np.ndarray               # (S,) index t of the first target

    def __len__(self) -> int:
        return self.forward_in.shape[0]

    @classmethod
    def concat(cls, parts: Sequence["FeatureBatch"]) -> "FeatureBatch":
        bw = None if parts[0].backward_in is None else np.concatenate([p.backward_in for p in parts])
        return cls(np.concatenate([p.forward_in for p in parts]), bw,
                   np.concatenate([p.target for p in parts]), np.concatenate([p.index for p in parts]))

    def take(self, sel) -> "FeatureBatch":
        return FeatureBatch(self.forward_in[sel],
                            None if self.backward_in is None else self.backward_in[sel],
                            self.target[sel], self.index[sel])

    def tensors(self) -> list[FeatureTensor]:
        return [FeatureTensor(self.forward_in[j],
                              None if self.backward_in is None else self.backward_in[j],
                              self.target[j], int(self.index[j])) for j in range(len(self))]


def min_history(m: int, day_stride: int = DAY_STRIDE) -> int:
    """Samples needed before the first target index."""
    return day_stride + m


def feature_arrays(values, kind: NetKind, m: int, n: int, day_stride: int = DAY_STRIDE,
                   targets: Iterable[int] | None = None) -> FeatureBatch:
    """Vectorised feature construction for target indices ``t``.

    By default every ``t`` with a full previous day behind it and ``n`` known
    future values is used. Explicit ``targets`` may point past the end of the
    data (the target row is then NaN-filled), which is how live forecasts are
    built.
    """
    x = np.asarray(values, dtype=float)
    kind = NetKind(kind)
    first = min_history(m, day_stride)
    if n > day_stride - 1:
        raise ConfigError("output_len must be smaller than the day stride")
    if targets is None:
        if x.size < first + n:
            raise SeriesTooShort(f"need at least {first + n} samples for m={m}, n={n}")
        t = np.arange(first, x.size - n + 1)
    else:
        t = np.asarray(list(targets), dtype=int)
        if t.size and (t.min() < first or t.max() > x.size):
            raise SeriesTooShort(f"targets need indices in [{first}, {x.size}]")
    past = t[:, None] + np.arange(-m, 0)[None, :]
    forward = np.concatenate([x[past], x[past - day_stride]], axis=1)
    backward = None
    if kind is NetKind.BIFEATURE:
        ahead = t[:, None] - day_stride + np.arange(n, 0, -1)[None, :]
        backward = x[ahead]
    fut = t[:, None] + np.arange(n)[None, :]
    target = np.full(fut.shape, np.nan)
    ok = fut < x.size
    target[ok] = x[fut[ok]]
    return FeatureBatch(forward, backward, target, t)


def build_features(imf, timestamps=None, kind: NetKind = NetKind.STANDARD, m: int = 4, n: int = 1,
                   day_stride: int = DAY_STRIDE) -> list[FeatureTensor]:
    """Per-origin feature tensors for every target with a full previous day.

    ``timestamps`` is accepted for interface symmetry; indices are positional
    and the series is assumed uniformly sampled at ``day_stride`` per day.
    """
    values = np.asarray(imf, dtype=float)
    if timestamps is not None and len(timestamps) != values.size:
        raise ShapeMismatch("timestamps and values differ in length")
    return feature_arrays(values, kind, m, n, day_stride).tensors()


# ---------------------------------------------------------------------------
# network

def _init_layer(rng, n_in: int, hs: int):
    bound = 1.0 / math.sqrt(n_in + hs)
    w = rng.uniform(-bound, bound, size=(hs + n_in, 4 * hs))
    b = rng.uniform(-bound, bound, size=4 * hs)
    return w, b


class LstmNetwork:
    """Parameters and topology of one forecaster.

    ``params`` maps names (``fwd.<layer>.w``, ``bwd.<layer>.b``, ``head.w``,
    ...) to float64 arrays.
    """

    def __init__(self, spec: NetworkSpec, params: dict[str, np.ndarray] | None = None):
        self.spec = spec
        self.params = self._initial_params() if params is None else {
            k: np.asarray(v, dtype=float) for k, v in params.items()}
        self._check_shapes()

    @property
    def branches(self) -> tuple[str, ...]:
        return ("fwd", "bwd") if self.spec.kind is NetKind.BIFEATURE else ("fwd",)

    def _branch_inputs(self, branch: str) -> int:
        return FORWARD_CHANNELS if branch == "fwd" else 1

    def _initial_params(self) -> dict[str, np.ndarray]:
        rng = np.random.default_rng(self.spec.seed)
        params = {}
        for br in self.branches:
            n_in = self._branch_inputs(br)
            for li, hs in enumerate(self.spec.layers):
                params[f"{br}.{li}.w"], params[f"{br}.{li}.b"] = _init_layer(rng, n_in, hs)
                n_in = hs
        head_in = self.spec.layers[-1] * len(self.branches)
        bound = 1.0 / math.sqrt(head_in)
        params["head.w"] = rng.uniform(-bound, bound, size=(head_in, self.spec.output_len))
        params["head.b"] = rng.uniform(-bound, bound, size=self.spec.output_len)
        return params

    def _check_shapes(self):
        expect = {}
        for br in self.branches:
            n_in = self._branch_inputs(br)
            for li, hs in enumerate(self.spec.layers):
                expect[f"{br}.{li}.w"] = (hs + n_in, 4 * hs)
                expect[f"{br}.{li}.b"] = (4 * hs,)
                n_in = hs
        head_in = self.spec.layers[-1] * len(self.branches)
        expect["head.w"] = (head_in, self.spec.output_len)
        expect["head.b"] = (self.spec.output_len,)
        if set(expect) != set(self.params):
            raise ShapeMismatch(f"parameter names {sorted(self.params)} do not match the spec")
        for k, shape in expect.items():
            if self.params[k].shape != shape:
                raise ShapeMismatch(f"{k}: expected {shape}, got {self.params[k].shape}")
            if not np.all(np.isfinite(self.params[k])):
                raise ShapeMismatch(f"{k} holds non-finite values")

    def layer(self, branch: str, index: int) -> LstmParams:
        return LstmParams(self.params[f"{branch}.{index}.w"], self.params[f"{branch}.{index}.b"])

    def copy(self) -> "LstmNetwork":
        return LstmNetwork(self.spec, {k: v.copy() for k, v in self.params.items()})

    def zero_state(self, batch: int) -> dict[str, list[tuple[np.ndarray, np.ndarray]]]:
        return {br: [(np.zeros((batch, hs)), np.zeros((batch, hs))) for hs in self.spec.layers]
                for br in self.branches}

    # -- shaping ---------------------------------------------------------

    def _sequences(self, forward_in, backward_in):
        fw = np.asarray(forward_in, dtype=float)
        if fw.ndim == 1:
            fw = fw[None, :]
        m = self.spec.input_len
        if fw.shape[1] != FORWARD_CHANNELS * m:
            raise ShapeMismatch(f"forward input must have {FORWARD_CHANNELS * m} values, got {fw.shape[1]}")
        seqs = {"fwd": fw.reshape(fw.shape[0], FORWARD_CHANNELS, m).transpose(0, 2, 1)}
        if self.spec.kind is NetKind.BIFEATURE:
            if backward_in is None:
                raise MissingBackwardFeatures("BiFeature network needs backward features")
            bw = np.asarray(backward_in, dtype=float)
            if bw.ndim == 1:
                bw = bw[None, :]
            if bw.shape != (fw.shape[0], self.spec.output_len):
                raise ShapeMismatch(
                    f"backward input must be (batch, {self.spec.output_len}), got {bw.shape}")
            seqs["bwd"] = bw[:, :, None]
        return seqs

    # -- passes ----------------------------------------------------------

    def _forward(self, seqs, state=None, masks=None):
        bsz = seqs["fwd"].shape[0]
        state = self.zero_state(bsz) if state is None else state
        caches, finals, new_state = {}, [], {}
        for br in self.branches:
            inp = seqs[br]
            caches[br] = []
            new_state[br] = []
            for li in range(len(self.spec.layers)):
                h0, c0 = state[br][li]
                hseq, cache = _layer_forward(self.params[f"{br}.{li}.w"], self.params[f"{br}.{li}.b"],
                                             inp, h0, c0)
                new_state[br].append((hseq[:, -1].copy(), cache[4][:, -1].copy()))
                mask = None if masks is None else masks[br][li]
                out = hseq if mask is None else hseq * mask
                caches[br].append((cache, mask))
                inp = out
            finals.append(inp[:, -1])
        hcat = np.concatenate(finals, axis=1)
        y = hcat @ self.params["head.w"] + self.params["head.b"]
        if self.spec.residual:
            y = y + seqs["fwd"][:, -1, :1]
        return y, (caches, hcat), new_state

    def _backward(self, dy, fcache):
        caches, hcat = fcache
        grads = {"head.w": hcat.T @ dy, "head.b": dy.sum(axis=0)}
        dh_cat = dy @ self.params["head.w"].T
        hs_last = self.spec.layers[-1]
        for bi, br in enumerate(self.branches):
            cache0 = caches[br][-1][0]
            bsz, steps = cache0[0].shape[:2]
            dout = np.zeros((bsz, steps, hs_last))
            dout[:, -1] = dh_cat[:, bi * hs_last:(bi + 1) * hs_last]
            for li in range(len(self.spec.layers) - 1, -1, -1):
                cache, mask = caches[br][li]
                dh_seq = dout if mask is None else dout * mask
                dw, db, dx = _layer_backward(self.params[f"{br}.{li}.w"], dh_seq, cache)
                grads[f"{br}.{li}.w"] = dw
                grads[f"{br}.{li}.b"] = db
                dout = dx
        return grads

    def predict(self, forward_in, backward_in=None, state=None) -> np.ndarray:
        """Deterministic inference (zero initial state by default); shape (batch, n)."""
        y, _, _ = self._forward(self._sequences(forward_in, backward_in), state)
        return y

    def run(self, forward_in, backward_in=None, state=None):
        """Inference that also returns the final per-layer states."""
        y, _, new_state = self._forward(self._sequences(forward_in, backward_in), state)
        return y, new_state

    def loss_and_grads(self, forward_in, backward_in, target, state=None, masks=None):
        seqs = self._sequences(forward_in, backward_in)
        y, fcache, new_state = self._forward(seqs, state, masks)
        target = np.asarray(target, dtype=float).reshape(y.shape)
        err = y - target
        loss = float(np.mean(err * err))
        if not math.isfinite(loss):
            return loss, {}, new_state
        grads = self._backward(2.0 * err / err.size, fcache)
        return loss, grads, new_state

    def dropout_masks(self, rng, batch: int, steps: dict[str, int]):
        p = self.spec.dropout
        if p == 0:
            return None
        keep = 1.0 - p
        return {br: [(rng.random((batch, steps[br], hs)) < keep) / keep for hs in self.spec.layers]
                for br in self.branches}


def forward(net: LstmNetwork, inputs) -> np.ndarray:
    """Standard-network prediction for ``inputs`` (one or more forward rows)."""
    if net.spec.kind is not NetKind.STANDARD:
        raise ShapeMismatch("forward() serves Standard networks; use forward_bifeature()")
    return net.predict(inputs)


def forward_bifeature(net: LstmNetwork, forward_in, backward_in) -> np.ndarray:
    if net.spec.kind is not NetKind.BIFEATURE:
        raise ShapeMismatch("forward_bifeature() needs a BiFeature network")
    if backward_in is None:
        raise MissingBackwardFeatures("backward features are required")
    return net.predict(forward_in, backward_in)


# ---------------------------------------------------------------------------
# training

@dataclass
class LossHistory:
    train: list[float] = field(default_factory=list)
    val: list[float] = field(default_factory=list)


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            params[k] -= self.lr * (self.m[k] / corr1) / (np.sqrt(self.v[k] / corr2) + self.eps)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm > 0:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def warm_predict(net: LstmNetwork, context: FeatureBatch, query: FeatureBatch | None = None) -> np.ndarray:
    """Inference that reproduces the state carry seen in stateful training.

    During training row ``t`` starts from the final state of row
    ``t - batch_size``. Here every queried row is preceded by the rows
    ``warmup * batch_size, ..., batch_size`` positions earlier that exist in
    ``context`` (oldest first), so the last step starts from a comparable
    state. Stateless networks use a zero state.
    """
    query = context if query is None else query
    spec = net.spec
    if not spec.stateful or spec.warmup == 0:
        return net.predict(query.forward_in, query.backward_in)
    idx = context.index
    if np.any(np.diff(idx) <= 0):
        raise ValueError("context rows must be in strictly increasing index order")
    state = None
    for j in range(spec.warmup, 0, -1):
        prev = query.index - j * spec.batch_size
        k = np.minimum(np.searchsorted(idx, prev), idx.size - 1)
        avail = idx[k] == prev
        if not avail.any():
            continue
        rows = context.take(k)
        _, new_state = net.run(rows.forward_in, rows.backward_in, state)
        if state is None:
            state = net.zero_state(len(query))
        keep = avail[:, None]
        state = {br: [(np.where(keep, nh, h), np.where(keep, nc, c))
                      for (nh, nc), (h, c) in zip(new_state[br], state[br])]
                 for br in state}
    return net.predict(query.forward_in, query.backward_in, state)


def evaluate_loss(net: LstmNetwork, data: FeatureBatch, context: FeatureBatch | None = None) -> float:
    """Mean squared error on ``data``; ``context`` supplies earlier rows for state warm-up."""
    ctx = data if context is None else context
    y = warm_predict(net, ctx, data)
    return float(np.mean((y - data.target) ** 2))


def train(net: LstmNetwork, train_data: FeatureBatch, val_data: FeatureBatch | None = None,
          spec: NetworkSpec | None = None) -> tuple[LstmNetwork, LossHistory]:
    """Fit ``net`` in place and return it with its per-epoch losses.

    Batches are taken in chronological order. With ``stateful`` the final
    state of each batch seeds the next one (row by row) and is reset at every
    epoch; gradients do not flow across batch boundaries.
    """
    spec = net.spec if spec is None else spec
    if len(train_data) == 0:
        raise SeriesTooShort("training set is empty")
    if val_data is not None and len(val_data) == 0:
        raise SeriesTooShort("validation set is empty")
    rng = np.random.default_rng([spec.seed, 1])
    opt = Adam(net.params, spec.learning_rate)
    history = LossHistory()
    steps = {"fwd": spec.input_len, "bwd": spec.output_len}
    n = len(train_data)
    context = None if val_data is None else FeatureBatch.concat([train_data, val_data])
    for epoch in range(spec.epochs):
        state = None
        total = 0.0
        for start in range(0, n, spec.batch_size):
            batch = train_data.take(slice(start, start + spec.batch_size))
            bsz = len(batch)
            if state is not None:
                state = {br: [(h[:bsz], c[:bsz]) for h, c in layers] for br, layers in state.items()}
            masks = net.dropout_masks(rng, bsz, steps)
            loss, grads, new_state = net.loss_and_grads(
                batch.forward_in, batch.backward_in, batch.target, state, masks)
            if not math.isfinite(loss):
                raise NonFiniteLoss(epoch, loss)
            clip_global_norm(grads, spec.clip_norm)
            if spec.learning_rate > 0:
                opt.step(net.params, grads)
            total += loss * bsz
            if spec.stateful:
                state = new_state
                if bsz < spec.batch_size:
                    state = None
        history.train.append(total / n)
        if val_data is not None:
            vl = evaluate_loss(net, val_data, context)
            if not math.isfinite(vl):
                raise NonFiniteLoss(epoch, vl)
            history.val.append(vl)
    return net, history


@dataclass(frozen=True)
class JointSpec:
    """Fine-tuning of several group networks on the error of their summed output."""

    epochs: int = 10
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("joint epochs must be >= 0")
        if self.learning_rate < 0:
            raise ConfigError("joint learning_rate must be >= 0")


def _summed(ys, scales, offsets):
    return sum(y * s + o for y, s, o in zip(ys, scales, offsets))


def joint_predict(nets: Sequence[LstmNetwork], contexts: Sequence[FeatureBatch], queries: Sequence[FeatureBatch],
                  scales, offsets) -> np.ndarray:
    """Sum of de-normalised group predictions, each with its own state warm-up."""
    return _summed([warm_predict(net, c, q) for net, c, q in zip(nets, contexts, queries)], scales, offsets)


def train_joint(nets: Sequence[LstmNetwork], train_parts: Sequence[FeatureBatch], target: np.ndarray,
                scales, offsets, spec: JointSpec = JointSpec(), val_parts: Sequence[FeatureBatch] | None = None,
                val_target: np.ndarray | None = None) -> LossHistory:
    """Fine-tune ``nets`` in place so that their de-normalised sum tracks ``target``.

    ``train_parts[g]`` holds group ``g``'s feature rows; all parts share one
    row order (same forecast origins). Group ``g``'s output maps back to the
    target unit as ``y * scales[g] + offsets[g]``. Each network keeps its own
    stateful carry, dropout and clipping; the loss is the mean squared error
    of the sum, scaled by the target range.
    """
    if not nets or len(nets) != len(train_parts):
        raise ShapeMismatch("one feature batch per network is required")
    n = len(train_parts[0])
    if any(len(p) != n or not np.array_equal(p.index, train_parts[0].index) for p in train_parts):
        raise ShapeMismatch("group feature batches must share their forecast origins")
    target = np.asarray(target, dtype=float)
    scales = [float(v) for v in scales]
    offsets = [float(v) for v in offsets]
    span = max(float(np.ptp(target)), 1e-12)
    rng = np.random.default_rng([spec.seed, 2])
    opts = [Adam(net.params, spec.learning_rate) for net in nets]
    history = LossHistory()
    contexts = None
    if val_parts is not None:
        contexts = [FeatureBatch.concat([tr, va]) for tr, va in zip(train_parts, val_parts)]
    bsz_all = {net.spec.batch_size for net in nets}
    if len(bsz_all) != 1:
        raise ConfigError("joint training needs one batch size across the group networks")
    batch_size = bsz_all.pop()
    for epoch in range(spec.epochs):
        states = [None] * len(nets)
        total = 0.0
        for start in range(0, n, batch_size):
            sl = slice(start, start + batch_size)
            ys, caches, new_states = [], [], []
            for g, (net, part) in enumerate(zip(nets, train_parts)):
                batch = part.take(sl)
                bsz = len(batch)
                st = states[g]
                if st is not None:
                    st = {br: [(h[:bsz], c[:bsz]) for h, c in layers] for br, layers in st.items()}
                masks = net.dropout_masks(rng, bsz, {"fwd": net.spec.input_len, "bwd": net.spec.output_len})
                y, cache, ns = net._forward(net._sequences(batch.forward_in, batch.backward_in), st, masks)
                ys.append(y)
                caches.append(cache)
                new_states.append(ns)
            err = (_summed(ys, scales, offsets) - target[sl]) / span
            loss = float(np.mean(err * err))
            if not math.isfinite(loss):
                raise NonFiniteLoss(epoch, loss)
            base = 2.0 * err / err.size
            for g, net in enumerate(nets):
                grads = net._backward(base * (scales[g] / span), caches[g])
                clip_global_norm(grads, net.spec.clip_norm)
                if spec.learning_rate > 0:
                    opts[g].step(net.params, grads)
                states[g] = new_states[g] if net.spec.stateful and len(ys[g]) == batch_size else None
            total += loss * len(err)
        history.train.append(total / n)
        if val_parts is not None:
            pred = joint_predict(nets, contexts, val_parts, scales, offsets)
            vl = float(np.mean(((pred - val_target) / span) ** 2))
            if not math.isfinite(vl):
                raise NonFiniteLoss(epoch, vl)
            history.val.append(vl)
    return history


def persistence(series, n: int) -> np.ndarray:
    """Repeat the last observed value ``n`` times."""
    values = np.asarray(getattr(series, "values", series), dtype=float)
    if values.size == 0:
        raise SeriesTooShort("persistence needs at least one observation")
    return np.full(int(n), values[-1])
