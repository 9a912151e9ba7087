"""Knowledge-integrated autoencoder: network, joint loss, training and inference.

Encoder: BiLSTM over each window -> FC(2h->a) -> FC(a->b) -> FC(b->b) -> representation FC(b->r).
Decoder: FC(r->b) -> FC(b->a) -> FC(a->r) conditioning, repeated as the input of a
unidirectional LSTM with zero initial state, then a linear per-step projection h->step_dim.
Every FC layer is ReLU-activated; the representation layer can switch to identity.
Gradients are derived by hand and checked against central differences in the tests.
"""

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from services.dataset import CATEGORICAL, Dataset, WindowPlan, plan_windows
from services.knowledge import KnowledgeMatrix, subset
from services.numerics import RngState, spawn_rngs, uniform
from utils.errors import DivergenceError, DomainError, InternalError, ShapeError
from utils.validators import require_count, require_positive, require_weights

CHECKPOINT_FORMAT = 1
SEQUENCE_MODES = ("single_step", "per_feature")
REPR_ACTIVATIONS = ("relu", "identity")

PARAM_ORDER = (
    "enc_fwd", "enc_bwd",
    "fc1_W", "fc1_b", "fc2_W", "fc2_b", "fc3_W", "fc3_b",
    "repr_W", "repr_b",
    "dec1_W", "dec1_b", "dec2_W", "dec2_b", "dec3_W", "dec3_b",
    "dec_lstm", "out_W", "out_b",
)

# (weight, bias) pairs, input side first
ENCODER_FC = (("fc1_W", "fc1_b"), ("fc2_W", "fc2_b"), ("fc3_W", "fc3_b"), ("repr_W", "repr_b"))
DECODER_FC = (("dec1_W", "dec1_b"), ("dec2_W", "dec2_b"), ("dec3_W", "dec3_b"))


@dataclass(frozen=True)
class KiaeConfig:
    input_dim: int
    lstm_hidden: int = 32
    fc_dims: Tuple[int, int] = (64, 32)
    repr_dim: int = 4
    omega1: float = 0.5
    omega2: float = 0.5
    batch_size: int = 16
    epochs: int = 10
    learning_rate: float = 1e-3
    sequence_mode: str = "single_step"
    window: Optional[int] = None
    jump: Optional[int] = None
    seed: int = 0
    repr_activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "fc_dims", tuple(int(v) for v in self.fc_dims))
        require_count("input_dim", self.input_dim)
        require_count("lstm_hidden", self.lstm_hidden)
        require_count("repr_dim", self.repr_dim)
        if len(self.fc_dims) != 2:
            raise DomainError(f"fc_dims must hold two sizes (a, b), got {self.fc_dims}")
        for size in self.fc_dims:
            require_count("fc size", size)
        require_weights(self.omega1, self.omega2)
        require_count("batch_size", self.batch_size, minimum=2)
        require_count("epochs", self.epochs, minimum=0)
        require_positive("learning_rate", self.learning_rate)
        if self.sequence_mode not in SEQUENCE_MODES:
            raise DomainError(f"sequence_mode must be one of {SEQUENCE_MODES}, got {self.sequence_mode!r}")
        if self.repr_activation not in REPR_ACTIVATIONS:
            raise DomainError(f"repr_activation must be one of {REPR_ACTIVATIONS}, got {self.repr_activation!r}")
        if self.window is not None:
            require_count("window", self.window)
        if self.jump is not None:
            require_count("jump", self.jump)

    @property
    def plan(self) -> WindowPlan:
        return plan_windows(self.input_dim, self.window or self.input_dim, self.jump or 1)

    @property
    def window_length(self) -> int:
        return self.window or self.input_dim

    @property
    def steps(self) -> int:
        return 1 if self.sequence_mode == "single_step" else self.window_length

    @property
    def step_dim(self) -> int:
        return self.window_length if self.sequence_mode == "single_step" else 1

    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        h, (a, b), r, s = self.lstm_hidden, self.fc_dims, self.repr_dim, self.step_dim
        return {
            "enc_fwd": (1 + s + h, 4 * h),
            "enc_bwd": (1 + s + h, 4 * h),
            "fc1_W": (2 * h, a), "fc1_b": (a,),
            "fc2_W": (a, b), "fc2_b": (b,),
            "fc3_W": (b, b), "fc3_b": (b,),
            "repr_W": (b, r), "repr_b": (r,),
            "dec1_W": (r, b), "dec1_b": (b,),
            "dec2_W": (b, a), "dec2_b": (a,),
            "dec3_W": (a, r), "dec3_b": (r,),
            "dec_lstm": (1 + r + h, 4 * h),
            "out_W": (h, s), "out_b": (s,),
        }

    def fan_in(self, name: str) -> int:
        shapes = self.param_shapes()
        if name in ("enc_fwd", "enc_bwd", "dec_lstm"):
            return shapes[name][0] - 1
        weight = name[:-2] + "_W" if name.endswith("_b") else name
        return shapes[weight][0]


@dataclass
class KiaeModel:
    config: KiaeConfig
    params: Dict[str, np.ndarray]

    def __post_init__(self):
        shapes = self.config.param_shapes()
        if set(self.params) != set(shapes):
            raise ShapeError(f"parameter names {sorted(self.params)} do not match {sorted(shapes)}")
        for name, shape in shapes.items():
            value = np.asarray(self.params[name], dtype=np.float64)
            if value.shape != shape:
                raise ShapeError(f"parameter {name} has shape {value.shape}, expected {shape}")
            self.params[name] = value

    @classmethod
    def zeros(cls, config: KiaeConfig) -> "KiaeModel":
        return cls(config, {name: np.zeros(shape) for name, shape in config.param_shapes().items()})

    @classmethod
    def initialize(cls, config: KiaeConfig, rng: RngState) -> "KiaeModel":
        """Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], drawn in PARAM_ORDER."""
        shapes = config.param_shapes()
        params = {}
        for name in PARAM_ORDER:
            bound = 1.0 / np.sqrt(config.fan_in(name))
            size = int(np.prod(shapes[name]))
            params[name] = uniform(rng, -bound, bound, size).reshape(shapes[name])
        return cls(config, params)

    def copy(self) -> "KiaeModel":
        return KiaeModel(self.config, {k: v.copy() for k, v in self.params.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[name].ravel() for name in PARAM_ORDER])

    def with_flat(self, vector: np.ndarray) -> "KiaeModel":
        shapes = self.config.param_shapes()
        params, offset = {}, 0
        for name in PARAM_ORDER:
            size = int(np.prod(shapes[name]))
            params[name] = np.array(vector[offset:offset + size], dtype=np.float64).reshape(shapes[name])
            offset += size
        if offset != len(vector):
            raise ShapeError(f"flat vector has {len(vector)} values, model needs {offset}")
        return KiaeModel(self.config, params)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.params.values())


@dataclass(frozen=True)
class LatentEmbedding:
    sample_ids: Tuple[str, ...]
    vectors: np.ndarray

    def __post_init__(self):
        vectors = np.array(self.vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(self.sample_ids):
            raise ShapeError(f"{len(self.sample_ids)} ids for vectors of shape {vectors.shape}")
        if not np.all(np.isfinite(vectors)):
            raise DomainError("latent vectors must be finite")
        vectors.setflags(write=False)
        object.__setattr__(self, "sample_ids", tuple(self.sample_ids))
        object.__setattr__(self, "vectors", vectors)


# ---------------------------------------------------------------------------
# LSTM cell (gate layout: candidate, input, forget, output; bias in row 0)
# ---------------------------------------------------------------------------
def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _relu_grad(pre: np.ndarray, grad: np.ndarray) -> np.ndarray:
    return grad * (pre > 0)


def _lstm_forward(X: np.ndarray, W: np.ndarray):
    """X has shape (steps, batch, input). Zero initial hidden and cell state."""
    T, B, s = X.shape
    h = W.shape[1] // 4
    Hin = np.zeros((T, B, 1 + s + h))
    IFOGf = np.zeros((T, B, 4 * h))
    C = np.zeros((T, B, h))
    Ct = np.zeros((T, B, h))
    Hout = np.zeros((T, B, h))
    for t in range(T):
        Hin[t, :, 0] = 1.0
        Hin[t, :, 1:s + 1] = X[t]
        if t > 0:
            Hin[t, :, s + 1:] = Hout[t - 1]
        IFOG = Hin[t] @ W
        IFOGf[t, :, :h] = np.tanh(IFOG[:, :h])
        IFOGf[t, :, h:] = _sigmoid(IFOG[:, h:])
        C[t] = IFOGf[t, :, :h] * IFOGf[t, :, h:2 * h]
        if t > 0:
            C[t] += IFOGf[t, :, 2 * h:3 * h] * C[t - 1]
        Ct[t] = np.tanh(C[t])
        Hout[t] = Ct[t] * IFOGf[t, :, 3 * h:]
    return Hout, {"Hin": Hin, "IFOGf": IFOGf, "C": C, "Ct": Ct, "W": W, "s": s}


def _lstm_backward(dHout_in: np.ndarray, cache) -> Tuple[np.ndarray, np.ndarray]:
    Hin, IFOGf, C, Ct, W, s = (cache[k] for k in ("Hin", "IFOGf", "C", "Ct", "W", "s"))
    T, B, _ = Hin.shape
    h = W.shape[1] // 4
    dHout = dHout_in.copy()
    dC = np.zeros_like(C)
    dW = np.zeros_like(W)
    dX = np.zeros((T, B, s))
    for t in reversed(range(T)):
        cand, gate_i = IFOGf[t, :, :h], IFOGf[t, :, h:2 * h]
        gate_f, gate_o = IFOGf[t, :, 2 * h:3 * h], IFOGf[t, :, 3 * h:]
        dIFOGf = np.zeros((B, 4 * h))
        dIFOGf[:, 3 * h:] = Ct[t] * dHout[t]
        dC[t] += (1.0 - Ct[t] ** 2) * (gate_o * dHout[t])
        if t > 0:
            dIFOGf[:, 2 * h:3 * h] = dC[t] * C[t - 1]
            dC[t - 1] += dC[t] * gate_f
        dIFOGf[:, :h] = dC[t] * gate_i
        dIFOGf[:, h:2 * h] = dC[t] * cand
        dIFOG = np.empty_like(dIFOGf)
        dIFOG[:, :h] = (1.0 - cand ** 2) * dIFOGf[:, :h]
        y = IFOGf[t, :, h:]
        dIFOG[:, h:] = y * (1.0 - y) * dIFOGf[:, h:]
        dW += Hin[t].T @ dIFOG
        dHin = dIFOG @ W.T
        dX[t] = dHin[:, 1:s + 1]
        if t > 0:
            dHout[t - 1] += dHin[:, s + 1:]
    return dX, dW


# ---------------------------------------------------------------------------
# Forward / backward over windows
# ---------------------------------------------------------------------------
def _window_inputs(X: np.ndarray, plan: WindowPlan) -> np.ndarray:
    """(n, d) samples -> (n * windows, L) window rows in sample-major order."""
    n = X.shape[0]
    if plan.padding:
        return np.concatenate([np.zeros((n, plan.padding)), X], axis=1)
    stacked = np.stack([X[:, start:end] for start, end in plan.windows], axis=1)
    return stacked.reshape(n * plan.count, plan.window_length)


def _to_sequence(windows: np.ndarray, config: KiaeConfig) -> np.ndarray:
    if config.sequence_mode == "single_step":
        return windows[None, :, :]
    return windows.T[:, :, None]


def _from_sequence(Y: np.ndarray, config: KiaeConfig) -> np.ndarray:
    if config.sequence_mode == "single_step":
        return Y[0]
    return Y[:, :, 0].T


def _to_sequence_grad(dY_windows: np.ndarray, config: KiaeConfig) -> np.ndarray:
    if config.sequence_mode == "single_step":
        return dY_windows[None, :, :]
    return dY_windows.T[:, :, None]


def _encode_windows(model: KiaeModel, windows: np.ndarray):
    p, config = model.params, model.config
    seq = _to_sequence(windows, config)
    Hf, fwd_cache = _lstm_forward(seq, p["enc_fwd"])
    Hb, bwd_cache = _lstm_forward(seq[::-1], p["enc_bwd"])
    act = np.concatenate([Hf[-1], Hb[-1]], axis=1)
    pre_acts = []
    for k, (w, b) in enumerate(ENCODER_FC):
        pre = act @ p[w] + p[b]
        pre_acts.append((act, pre))
        last = k == len(ENCODER_FC) - 1
        act = pre if (last and config.repr_activation == "identity") else np.maximum(pre, 0.0)
    cache = {"fwd": fwd_cache, "bwd": bwd_cache, "fc": pre_acts, "T": seq.shape[0]}
    return act, cache


def _decode_windows(model: KiaeModel, z: np.ndarray, steps: int):
    p = model.params
    act = z
    pre_acts = []
    for w, b in DECODER_FC:
        pre = act @ p[w] + p[b]
        pre_acts.append((act, pre))
        act = np.maximum(pre, 0.0)
    Xd = np.repeat(act[None, :, :], steps, axis=0)
    Hd, lstm_cache = _lstm_forward(Xd, p["dec_lstm"])
    Y = Hd @ p["out_W"] + p["out_b"]
    return Y, {"fc": pre_acts, "lstm": lstm_cache, "Hd": Hd}


def _forward(model: KiaeModel, X: np.ndarray):
    config = model.config
    plan = config.plan
    n = X.shape[0]
    windows = _window_inputs(X, plan)
    zwin, enc_cache = _encode_windows(model, windows)
    R = zwin.reshape(n, plan.count, config.repr_dim).mean(axis=1)
    Y, dec_cache = _decode_windows(model, zwin, config.steps)
    out = _from_sequence(Y, config).reshape(n, plan.count * plan.window_length)
    assembly = plan.assembly_matrix()
    recon = out @ assembly
    cache = {"enc": enc_cache, "dec": dec_cache, "assembly": assembly, "n": n, "plan": plan}
    return R, recon, cache


def _backward(model: KiaeModel, cache, d_repr: np.ndarray, d_recon: np.ndarray) -> Dict[str, np.ndarray]:
    p, config = model.params, model.config
    plan, n = cache["plan"], cache["n"]
    grads = {name: np.zeros_like(value) for name, value in p.items()}

    # decoder
    d_out = (d_recon @ cache["assembly"].T).reshape(n * plan.count, plan.window_length)
    dY = _to_sequence_grad(d_out, config)
    dec = cache["dec"]
    Hd = dec["Hd"]
    grads["out_W"] = np.einsum("tbh,tbs->hs", Hd, dY)
    grads["out_b"] = dY.sum(axis=(0, 1))
    dHd = dY @ p["out_W"].T
    dXd, grads["dec_lstm"] = _lstm_backward(dHd, dec["lstm"])
    d_act = dXd.sum(axis=0)
    for (w, b), (inp, pre) in zip(reversed(DECODER_FC), reversed(dec["fc"])):
        d_pre = _relu_grad(pre, d_act)
        grads[w] = inp.T @ d_pre
        grads[b] = d_pre.sum(axis=0)
        d_act = d_pre @ p[w].T
    d_zwin = d_act

    # representation: R is the mean of window representations
    d_zwin = d_zwin + np.repeat(d_repr, plan.count, axis=0) / plan.count

    # encoder
    enc = cache["enc"]
    d_act = d_zwin
    for k in reversed(range(len(ENCODER_FC))):
        w, b = ENCODER_FC[k]
        inp, pre = enc["fc"][k]
        last = k == len(ENCODER_FC) - 1
        d_pre = d_act if (last and config.repr_activation == "identity") else _relu_grad(pre, d_act)
        grads[w] = inp.T @ d_pre
        grads[b] = d_pre.sum(axis=0)
        d_act = d_pre @ p[w].T
    h = config.lstm_hidden
    T = enc["T"]
    dHf = np.zeros((T, d_act.shape[0], h))
    dHb = np.zeros_like(dHf)
    dHf[-1] = d_act[:, :h]
    dHb[-1] = d_act[:, h:]
    _, grads["enc_fwd"] = _lstm_backward(dHf, enc["fwd"])
    _, grads["enc_bwd"] = _lstm_backward(dHb, enc["bwd"])
    return grads


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------
def _check_batch(model: KiaeModel, batch) -> np.ndarray:
    X = np.asarray(batch.samples if isinstance(batch, Dataset) else batch, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.config.input_dim:
        raise ShapeError(f"batch of shape {X.shape} does not match input_dim={model.config.input_dim}")
    if X.shape[0] < 2:
        raise DomainError(f"the joint loss needs a batch of at least 2 samples, got {X.shape[0]}")
    return X


def _reconstruction_term(X: np.ndarray, recon: np.ndarray, omega1: float):
    """omega1 * (n-1) * sum_i ||m_i - recon_i|| / (n^2 - n) and its gradient."""
    n = X.shape[0]
    scale = omega1 * (n - 1) / (n * n - n)
    err = X - recon
    norms = np.linalg.norm(err, axis=1)
    value = scale * norms.sum()
    safe = np.where(norms > 0, norms, 1.0)
    d_recon = np.where(norms[:, None] > 0, -scale * err / safe[:, None], 0.0)
    return float(value), d_recon


def _distance_term(R: np.ndarray, mt_batch: KnowledgeMatrix, omega2: float):
    n = R.shape[0]
    pairs = mt_batch.known_mask & ~np.eye(n, dtype=bool)
    included = int(pairs.sum())
    if included == 0:
        logging.warning("All knowledge pairs in the batch are missing; distance term is 0")
        return 0.0, np.zeros_like(R)
    diff = R[:, None, :] - R[None, :, :]
    D = np.linalg.norm(diff, axis=2)
    resid = D - mt_batch.entries
    value = omega2 * np.abs(resid[pairs]).sum() / included
    # subgradient 0 at |.| kinks and at coincident representations
    G = np.where(pairs & (D > 0), np.sign(resid) / np.where(D > 0, D, 1.0), 0.0) * (omega2 / included)
    S = G + G.T
    d_repr = S.sum(axis=1)[:, None] * R - S @ R
    return float(value), d_repr


def loss(model: KiaeModel, batch, mt_batch: KnowledgeMatrix, omega1: float, omega2: float):
    """Joint reconstruction + knowledge-distance loss and exact gradients.

    Masked pairs are skipped; the distance term is normalised by the number of
    ordered pairs it includes.
    """
    X = _check_batch(model, batch)
    if mt_batch.n != X.shape[0]:
        raise ShapeError(f"knowledge matrix is {mt_batch.n}x{mt_batch.n} for a batch of {X.shape[0]}")
    require_weights(omega1, omega2)
    R, recon, cache = _forward(model, X)
    value, d_recon = _reconstruction_term(X, recon, omega1)
    d_repr = np.zeros_like(R)
    if omega2 > 0:
        distance, d_repr = _distance_term(R, mt_batch, omega2)
        value += distance
    return value, _backward(model, cache, d_repr, d_recon)


def reconstruction_loss(model: KiaeModel, batch, omega1: float = 1.0):
    """Plain autoencoder objective (the knowledge-free baseline)."""
    X = _check_batch(model, batch)
    R, recon, cache = _forward(model, X)
    value, d_recon = _reconstruction_term(X, recon, omega1)
    return value, _backward(model, cache, np.zeros_like(R), d_recon)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------
class AdamOptimizer:
    def __init__(self, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        self.t += 1
        for name in PARAM_ORDER:
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1 ** self.t)
            v_hat = v / (1.0 - self.beta2 ** self.t)
            params[name] -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


def _batches(order: np.ndarray, batch_size: int) -> List[np.ndarray]:
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2] = np.concatenate([batches[-2], batches.pop()])
    return batches


def train(config: KiaeConfig, ds: Dataset, mt: KnowledgeMatrix) -> Tuple[KiaeModel, List[float]]:
    """Adam over seeded shuffled minibatches; returns the model and per-epoch mean loss."""
    if ds.d != config.input_dim:
        raise ShapeError(f"dataset has {ds.d} features, config expects {config.input_dim}")
    if mt.n != ds.n:
        raise ShapeError(f"knowledge matrix is {mt.n}x{mt.n} for {ds.n} samples")
    if ds.n < 2:
        raise DomainError(f"training needs at least 2 samples, got {ds.n}")

    init_rng, shuffle_rng = spawn_rngs(config.seed, 2)
    model = KiaeModel.initialize(config, init_rng)
    history: List[float] = []
    if config.epochs == 0:
        return model, history

    optimizer = AdamOptimizer(config.learning_rate)
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(ds.n)
        values = []
        for number, idx in enumerate(_batches(order, config.batch_size), start=1):
            value, grads = loss(model, ds.samples[idx], subset(mt, idx), config.omega1, config.omega2)
            if not np.isfinite(value):
                raise DivergenceError(f"loss diverged at epoch {epoch}, batch {number}", epoch, number)
            optimizer.step(model.params, grads)
            if not model.is_finite():
                raise DivergenceError(f"parameters diverged at epoch {epoch}, batch {number}", epoch, number)
            logging.debug(f"epoch {epoch} batch {number} loss {value:.6f}")
            values.append(value)
        mean = float(np.mean(values))
        history.append(mean)
        logging.info(f"epoch {epoch}/{config.epochs} mean loss {mean:.6f}")
    return model, history


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------
def encode(model: KiaeModel, batch, sample_ids: Optional[Sequence[str]] = None, chunk: int = 512) -> LatentEmbedding:
    """Representation vectors; multi-window samples take the mean window representation."""
    if isinstance(batch, Dataset):
        X, ids = batch.samples, batch.sample_ids
    else:
        X = np.asarray(batch, dtype=np.float64)
        ids = tuple(sample_ids) if sample_ids is not None else tuple(str(i) for i in range(len(X)))
    config = model.config
    if X.ndim != 2 or X.shape[1] != config.input_dim:
        raise ShapeError(f"samples of shape {X.shape} do not match input_dim={config.input_dim}")
    plan = config.plan
    parts = [np.zeros((0, config.repr_dim))]
    for start in range(0, X.shape[0], chunk):
        part = X[start:start + chunk]
        zwin, _ = _encode_windows(model, _window_inputs(part, plan))
        parts.append(zwin.reshape(part.shape[0], plan.count, config.repr_dim).mean(axis=1))
    return LatentEmbedding(ids, np.concatenate(parts, axis=0))


def decode(model: KiaeModel, z: Union[LatentEmbedding, np.ndarray], steps: Optional[int] = None) -> np.ndarray:
    """Decode latent vectors; returns (n, steps * step_dim) values per vector."""
    vectors = z.vectors if isinstance(z, LatentEmbedding) else np.asarray(z, dtype=np.float64)
    config = model.config
    if vectors.ndim != 2 or vectors.shape[1] != config.repr_dim:
        raise ShapeError(f"latent vectors of shape {vectors.shape} do not match repr_dim={config.repr_dim}")
    steps = config.steps if steps is None else steps
    require_count("steps", steps)
    Y, _ = _decode_windows(model, vectors, steps)
    return np.transpose(Y, (1, 0, 2)).reshape(vectors.shape[0], steps * config.step_dim)


def aggregate_windows(outputs: np.ndarray, plan: WindowPlan, feature_kind: Sequence[str] = ()) -> np.ndarray:
    """Recombine per-window reconstructions into one sample.

    Continuous positions take the mean of covering windows; categorical-coded
    positions take a majority vote over rounded values, ties going to the
    earliest-starting window.
    """
    outputs = np.asarray(outputs, dtype=np.float64)
    if outputs.shape != (plan.count, plan.window_length):
        raise ShapeError(f"window outputs of shape {outputs.shape}, plan expects {(plan.count, plan.window_length)}")
    kinds = tuple(feature_kind) or ("continuous",) * plan.sample_length
    order = sorted(range(plan.count), key=lambda k: plan.windows[k][0])
    result = np.empty(plan.sample_length)
    for pos in range(plan.sample_length):
        values = [
            outputs[k, plan.padding + pos - plan.windows[k][0]]
            for k in order
            if plan.windows[k][0] <= pos < plan.windows[k][1]
        ]
        if not values:
            raise InternalError(f"position {pos} is not covered by any window")
        if kinds[pos] == CATEGORICAL:
            votes: Dict[float, int] = {}
            for value in np.rint(values):
                votes[float(value)] = votes.get(float(value), 0) + 1
            result[pos] = max(votes.items(), key=lambda item: item[1])[0]
        else:
            result[pos] = float(np.mean(values))
    return result


def reconstruct_full(model: KiaeModel, sample, plan: Optional[WindowPlan] = None, feature_kind: Sequence[str] = ()) -> np.ndarray:
    config = model.config
    plan = plan or config.plan
    x = np.asarray(sample, dtype=np.float64).reshape(1, -1)
    if x.shape[1] != plan.sample_length or plan.window_length != config.window_length:
        raise ShapeError(f"sample of length {x.shape[1]} / window {plan.window_length} do not match the model")
    zwin, _ = _encode_windows(model, _window_inputs(x, plan))
    outputs = decode(model, zwin)
    return aggregate_windows(outputs, plan, feature_kind)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------
def save_model(model: KiaeModel, path) -> Path:
    path = Path(path)
    with open(path, "wb") as f:
        np.savez(
            f,
            __format__=np.array(CHECKPOINT_FORMAT),
            __config__=np.array(json.dumps(asdict(model.config), sort_keys=True)),
            **model.params,
        )
    return path


def load_model(path) -> KiaeModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as archive:
        version = int(archive["__format__"])
        if version != CHECKPOINT_FORMAT:
            raise DomainError(f"unsupported checkpoint format {version}")
        config = KiaeConfig(**json.loads(str(archive["__config__"])))
        params = {name: archive[name].copy() for name in PARAM_ORDER}
    return KiaeModel(config, params)
