"""Deep angular model: a peephole LSTM over view-description sequences,
trained with per-cell softmax MSE via backpropagation through time.

One parameter set is shared across all time steps; gates follow the
standard peephole form where input and forget gates read the previous
cell state and the output gate reads the updated one."""

import struct
from dataclasses import dataclass, field

import numpy as np

from .classify import SoftmaxHead
from .numerics import (
    BatchNormState,
    batchnorm_backward,
    batchnorm_forward,
    sigmoid,
)

MODEL_MAGIC = b"LFLM"
MODEL_VERSION = 1

# Serialization and optimizer traversal order for LstmParams blocks.
PARAM_FIELDS = (
    "W_i", "W_f", "W_o", "W_c",
    "U_i", "U_f", "U_o", "U_c",
    "p_i", "p_f", "p_o",
    "b_i", "b_f", "b_o", "b_c",
)


class TrainError(Exception):
    pass


class DivergenceError(TrainError):
    def __init__(self, epoch):
        super().__init__(f"training diverged (non-finite loss) at epoch {epoch}")
        self.epoch = epoch


@dataclass
class LstmParams:
    input_dim: int
    hidden_dim: int
    W_i: np.ndarray
    W_f: np.ndarray
    W_o: np.ndarray
    W_c: np.ndarray
    U_i: np.ndarray
    U_f: np.ndarray
    U_o: np.ndarray
    U_c: np.ndarray
    p_i: np.ndarray
    p_f: np.ndarray
    p_o: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_o: np.ndarray
    b_c: np.ndarray

    @classmethod
    def init(cls, input_dim, hidden_dim, rng):
        def w(rows, cols):
            bound = 1.0 / np.sqrt(cols)
            return rng.uniform(-bound, bound, size=(rows, cols))

        p = cls(
            input_dim=input_dim,
            hidden_dim=hidden_dim,
            W_i=w(hidden_dim, input_dim),
            W_f=w(hidden_dim, input_dim),
            W_o=w(hidden_dim, input_dim),
            W_c=w(hidden_dim, input_dim),
            U_i=w(hidden_dim, hidden_dim),
            U_f=w(hidden_dim, hidden_dim),
            U_o=w(hidden_dim, hidden_dim),
            U_c=w(hidden_dim, hidden_dim),
            p_i=np.zeros(hidden_dim),
            p_f=np.zeros(hidden_dim),
            p_o=np.zeros(hidden_dim),
            b_i=np.zeros(hidden_dim),
            b_f=np.ones(hidden_dim),  # open forget gate at init
            b_o=np.zeros(hidden_dim),
            b_c=np.zeros(hidden_dim),
        )
        return p

    def copy(self):
        return LstmParams(
            self.input_dim, self.hidden_dim,
            **{name: getattr(self, name).copy() for name in PARAM_FIELDS},
        )


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray


@dataclass
class TrainConfig:
    hidden_dim: int = 256
    num_batches: int = 3
    epochs: int = 130
    learning_rate: float = 1e-3
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 5.0

    def validate(self, n_samples):
        if self.epochs < 1:
            raise TrainError("epochs must be >= 1")
        if not (1 <= self.num_batches <= n_samples):
            raise TrainError(
                f"num_batches must be in [1, {n_samples}], got {self.num_batches}"
            )
        if self.learning_rate <= 0:
            raise TrainError("learning_rate must be positive")


def cell_forward(x, prev, params):
    """One peephole LSTM step for a single input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.input_dim,):
        raise ValueError(f"input shape {x.shape} != ({params.input_dim},)")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input to LSTM cell")
    i = sigmoid(params.W_i @ x + params.U_i @ prev.h + params.p_i * prev.c + params.b_i)
    f = sigmoid(params.W_f @ x + params.U_f @ prev.h + params.p_f * prev.c + params.b_f)
    g = np.tanh(params.W_c @ x + params.U_c @ prev.h + params.b_c)
    c = f * prev.c + i * g
    o = sigmoid(params.W_o @ x + params.U_o @ prev.h + params.p_o * c + params.b_o)
    h = o * np.tanh(c)
    return LstmState(h=h, c=c)


def sequence_forward(descriptions, params, bn, mode="infer"):
    """Run the cell chain over one description sequence from the zero state.

    Batch normalization is applied to the descriptions first (train mode
    uses the sequence rows as the batch; infer mode uses running stats).
    Returns (states, new_bn_state)."""
    X = _stack(descriptions)
    if X.shape[0] == 0:
        raise ValueError("empty description sequence")
    normed, _, new_bn = batchnorm_forward(X, bn, mode)
    state = LstmState(h=np.zeros(params.hidden_dim), c=np.zeros(params.hidden_dim))
    states = []
    for t in range(normed.shape[0]):
        try:
            state = cell_forward(normed[t], state, params)
        except ValueError as exc:
            raise ValueError(f"at sequence index {t}: {exc}") from exc
        states.append(state)
    return states, new_bn


def _stack(descriptions):
    rows = []
    for d in descriptions:
        rows.append(np.asarray(getattr(d, "values", d), dtype=np.float64))
    return np.stack(rows)


def _softmax_rows(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def loss(hidden_states, head, one_hot_label):
    """Mean over cells of the per-class MSE between each cell's softmax
    output and the one-hot label."""
    H = np.asarray(hidden_states, dtype=np.float64)
    y = np.asarray(one_hot_label, dtype=np.float64)
    if y.shape[0] != head.class_count:
        raise ValueError(
            f"label dim {y.shape[0]} != class count {head.class_count}"
        )
    probs = _softmax_rows(H @ head.W_s.T + head.b_s)
    return float(((probs - y) ** 2).mean())


def _batch_forward(X, params, bn, mode):
    """Vectorized forward over a (N, T, D) batch; caches feed _batch_backward."""
    n, t_len, d = X.shape
    normed_flat, bn_cache, new_bn = batchnorm_forward(
        X.reshape(n * t_len, d), bn, mode
    )
    Xn = normed_flat.reshape(n, t_len, d)
    hid = params.hidden_dim
    H = np.zeros((n, hid))
    C = np.zeros((n, hid))
    Hs = np.empty((n, t_len, hid))
    steps = []
    for t in range(t_len):
        xt = Xn[:, t]
        i = sigmoid(xt @ params.W_i.T + H @ params.U_i.T + C * params.p_i + params.b_i)
        f = sigmoid(xt @ params.W_f.T + H @ params.U_f.T + C * params.p_f + params.b_f)
        g = np.tanh(xt @ params.W_c.T + H @ params.U_c.T + params.b_c)
        c_new = f * C + i * g
        o = sigmoid(xt @ params.W_o.T + H @ params.U_o.T + c_new * params.p_o + params.b_o)
        tanh_c = np.tanh(c_new)
        h_new = o * tanh_c
        steps.append((xt, H, C, i, f, g, o, c_new, tanh_c))
        H, C = h_new, c_new
        Hs[:, t] = h_new
    return Hs, Xn, steps, bn_cache, new_bn


def batch_loss(X, Y, params, head, bn, mode="train"):
    """Scalar mean batch loss; the target function for gradient checking."""
    Hs, _, _, _, _ = _batch_forward(X, params, bn, mode)
    probs = _softmax_rows(Hs @ head.W_s.T + head.b_s)
    return float(((probs - Y[:, None, :]) ** 2).mean())


def bptt(X, Y, params, head, bn):
    """Analytic gradients of the mean batch loss for every parameter block.

    X: (N, T, D) description batch, Y: (N, C) one-hot labels.
    Returns (grads, loss_value, new_bn_state); grads keys are the
    LstmParams fields plus W_s, b_s, gamma, beta.
    """
    if X.ndim != 3 or X.shape[0] < 1:
        raise ValueError(f"batch must be (N, T, D) with N >= 1, got {X.shape}")
    n, t_len, d = X.shape
    Hs, Xn, steps, bn_cache, new_bn = _batch_forward(X, params, bn, "train")
    logits = Hs @ head.W_s.T + head.b_s
    probs = _softmax_rows(logits)
    err = probs - Y[:, None, :]
    loss_value = float((err ** 2).mean())

    # Softmax + MSE head backward, all cells at once.
    d_probs = 2.0 * err / err.size
    d_logits = probs * (d_probs - (d_probs * probs).sum(axis=-1, keepdims=True))
    g_Ws = np.einsum("ntc,nth->ch", d_logits, Hs)
    g_bs = d_logits.sum(axis=(0, 1))
    dH_from_head = d_logits @ head.W_s

    hid = params.hidden_dim
    grads = {name: np.zeros_like(getattr(params, name)) for name in PARAM_FIELDS}
    dXn = np.zeros_like(Xn)
    dh_next = np.zeros((n, hid))
    dc_next = np.zeros((n, hid))
    for t in range(t_len - 1, -1, -1):
        xt, h_prev, c_prev, i, f, g, o, c_new, tanh_c = steps[t]
        dh = dH_from_head[:, t] + dh_next
        do = dh * tanh_c
        dz_o = do * o * (1.0 - o)
        dc = dc_next + dh * o * (1.0 - tanh_c ** 2) + dz_o * params.p_o
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dz_i = di * i * (1.0 - i)
        dz_f = df * f * (1.0 - f)
        dz_g = dg * (1.0 - g ** 2)
        grads["W_i"] += dz_i.T @ xt
        grads["W_f"] += dz_f.T @ xt
        grads["W_o"] += dz_o.T @ xt
        grads["W_c"] += dz_g.T @ xt
        grads["U_i"] += dz_i.T @ h_prev
        grads["U_f"] += dz_f.T @ h_prev
        grads["U_o"] += dz_o.T @ h_prev
        grads["U_c"] += dz_g.T @ h_prev
        grads["p_i"] += (dz_i * c_prev).sum(axis=0)
        grads["p_f"] += (dz_f * c_prev).sum(axis=0)
        grads["p_o"] += (dz_o * c_new).sum(axis=0)
        grads["b_i"] += dz_i.sum(axis=0)
        grads["b_f"] += dz_f.sum(axis=0)
        grads["b_o"] += dz_o.sum(axis=0)
        grads["b_c"] += dz_g.sum(axis=0)
        dXn[:, t] = dz_i @ params.W_i + dz_f @ params.W_f + dz_o @ params.W_o + dz_g @ params.W_c
        dh_next = dz_i @ params.U_i + dz_f @ params.U_f + dz_o @ params.U_o + dz_g @ params.U_c
        dc_next = dc * f + dz_i * params.p_i + dz_f * params.p_f

    _, g_gamma, g_beta = batchnorm_backward(dXn.reshape(n * t_len, d), bn_cache)
    grads["W_s"] = g_Ws
    grads["b_s"] = g_bs
    grads["gamma"] = g_gamma
    grads["beta"] = g_beta
    for name, g_arr in grads.items():
        if not np.all(np.isfinite(g_arr)):
            raise TrainError(f"non-finite gradient in block {name}")
    return grads, loss_value, new_bn


@dataclass
class LstmModel:
    """Trained peephole LSTM with its shared softmax head and frozen
    batch-norm running statistics."""

    params: LstmParams
    head: SoftmaxHead
    bn: BatchNormState

    @property
    def input_dim(self):
        return self.params.input_dim

    @property
    def hidden_dim(self):
        return self.params.hidden_dim

    @property
    def class_count(self):
        return self.head.class_count

    def hidden_states(self, descriptions, branch=0):
        states, _ = sequence_forward(descriptions, self.params, self.bn, "infer")
        return np.stack([s.h for s in states])

    def head_for(self, branch=0):
        return self.head


@dataclass
class MultiBranchModel:
    """Independent per-branch models whose scores are sum-fused downstream."""

    branches: list

    @property
    def class_count(self):
        return self.branches[0].class_count

    def hidden_states(self, descriptions, branch):
        return self.branches[branch].hidden_states(descriptions)

    def head_for(self, branch):
        return self.branches[branch].head


def _grad_order(params_grads):
    return list(PARAM_FIELDS) + ["W_s", "b_s", "gamma", "beta"]


def _clip_gradients(grads, clip_norm):
    total = 0.0
    for g_arr in grads.values():
        total += float((g_arr ** 2).sum())
    norm = np.sqrt(total)
    if clip_norm > 0 and norm > clip_norm:
        scale = clip_norm / norm
        for g_arr in grads.values():
            g_arr *= scale
    return norm


def train(sequences, labels, class_count, config, input_dim=None):
    """Train on (sequence, label) pairs; deterministic given config.seed.

    ``sequences`` is a list of (T, D) arrays (or SpatialDescription lists)
    with uniform T and D; ``labels`` are class indices in [0, class_count).
    Returns (model, per_epoch_losses)."""
    X = np.stack([_stack(s) for s in sequences])
    y = np.asarray(labels, dtype=np.int64)
    n, t_len, d = X.shape
    if input_dim is not None and input_dim != d:
        raise TrainError(f"input dim {d} != expected {input_dim}")
    present = np.unique(y)
    missing = sorted(set(range(class_count)) - set(present.tolist()))
    if missing:
        raise TrainError(f"classes absent from training data: {missing}")
    config.validate(n)

    rng = np.random.default_rng(config.seed)
    params = LstmParams.init(d, config.hidden_dim, rng)
    bound = 1.0 / np.sqrt(config.hidden_dim)
    head = SoftmaxHead(
        W_s=rng.uniform(-bound, bound, size=(class_count, config.hidden_dim)),
        b_s=np.zeros(class_count),
    )
    bn = BatchNormState.initial(d)
    Y = np.zeros((n, class_count))
    Y[np.arange(n), y] = 1.0

    trainable = {name: getattr(params, name) for name in PARAM_FIELDS}
    trainable["W_s"] = head.W_s
    trainable["b_s"] = head.b_s
    trainable["gamma"] = bn.gamma
    trainable["beta"] = bn.beta
    adam_m = {k: np.zeros_like(v) for k, v in trainable.items()}
    adam_v = {k: np.zeros_like(v) for k, v in trainable.items()}
    step = 0

    batch_size = -(-n // config.num_batches)  # ceil
    epoch_losses = []
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            grads, loss_value, bn = bptt(X[idx], Y[idx], params, head, bn)
            if not np.isfinite(loss_value):
                raise DivergenceError(epoch)
            batch_losses.append(loss_value)
            _clip_gradients(grads, config.clip_norm)
            step += 1
            lr_t = config.learning_rate * (
                np.sqrt(1.0 - config.beta2 ** step) / (1.0 - config.beta1 ** step)
            )
            for name in _grad_order(grads):
                g_arr = grads[name]
                adam_m[name] = config.beta1 * adam_m[name] + (1 - config.beta1) * g_arr
                adam_v[name] = config.beta2 * adam_v[name] + (1 - config.beta2) * g_arr ** 2
                trainable[name] -= lr_t * adam_m[name] / (
                    np.sqrt(adam_v[name]) + config.adam_eps
                )
            # gamma/beta live inside bn copies made by bptt; re-point
            bn.gamma = trainable["gamma"]
            bn.beta = trainable["beta"]
        epoch_losses.append(float(np.mean(batch_losses)))
    model = LstmModel(params=params, head=head, bn=bn)
    return model, epoch_losses


def save_model(path, model):
    """Binary little-endian model file, exact float64 round trip."""
    p = model.params
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack(
            "<IIII", MODEL_VERSION, p.input_dim, p.hidden_dim, model.class_count
        ))
        for name in PARAM_FIELDS:
            fh.write(np.ascontiguousarray(getattr(p, name), dtype="<f8").tobytes())
        bn = model.bn
        for arr in (bn.gamma, bn.beta, bn.running_mean, bn.running_var):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        fh.write(struct.pack("<dd", bn.epsilon, bn.momentum))
        fh.write(np.ascontiguousarray(model.head.W_s, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.head.b_s, dtype="<f8").tobytes())


def load_model(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MODEL_MAGIC:
        raise ValueError(f"{path}: bad magic {data[:4]!r}")
    version, input_dim, hidden_dim, class_count = struct.unpack_from("<IIII", data, 4)
    if version != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    off = 20

    def take(shape):
        nonlocal off
        count = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off)
        off += 8 * count
        return arr.reshape(shape).astype(np.float64)

    blocks = {}
    for name in PARAM_FIELDS:
        if name.startswith("W"):
            blocks[name] = take((hidden_dim, input_dim))
        elif name.startswith("U"):
            blocks[name] = take((hidden_dim, hidden_dim))
        else:
            blocks[name] = take((hidden_dim,))
    params = LstmParams(input_dim=input_dim, hidden_dim=hidden_dim, **blocks)
    gamma = take((input_dim,))
    beta = take((input_dim,))
    running_mean = take((input_dim,))
    running_var = take((input_dim,))
    epsilon, momentum = struct.unpack_from("<dd", data, off)
    off += 16
    bn = BatchNormState(gamma, beta, running_mean, running_var, epsilon, momentum)
    W_s = take((class_count, hidden_dim))
    b_s = take((class_count,))
    if off != len(data):
        raise ValueError(f"{path}: {len(data) - off} trailing bytes")
    return LstmModel(params=params, head=SoftmaxHead(W_s, b_s), bn=bn)
