"""LSTM encoder-decoder in numpy with a bivariate Gaussian output head.

The decoder is trained with teacher forcing and rolled out at inference by
feeding back its own mean. Gradients are computed analytically by
backpropagation through time.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
CHECKPOINT_VERSION = 1
PARAM_NAMES = ("enc_W", "enc_b", "dec_W", "dec_b", "out_W", "out_b")


class NumericalError(RuntimeError):
    pass


class TrainingDiverged(NumericalError):
    def __init__(self, epoch: int, batch: int, loss: float):
        self.epoch, self.batch = epoch, batch
        super().__init__(f"loss became {loss} at epoch {epoch}, batch {batch}")


@dataclass(frozen=True)
class GaussianParams2D:
    mu: np.ndarray
    sigma: np.ndarray
    rho: float

    def __post_init__(self):
        if np.any(np.asarray(self.sigma) <= 0):
            raise ValueError("sigma must be strictly positive")
        if not abs(self.rho) < 1:
            raise ValueError("|rho| must be < 1")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    learning_rate: float = 0.001
    decay: float = 0.9
    epsilon: float = 1e-8
    epochs_stream1: int = 20
    epochs_joint: int = 5
    b1: float = 0.5
    b2: float = 0.5
    hidden_size: int = 64
    clip_norm: float | None = 5.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.hidden_size < 1:
            raise ValueError("batch_size and hidden_size must be >= 1")
        if self.learning_rate < 0 or self.epochs_stream1 < 0 or self.epochs_joint < 0:
            raise ValueError("learning rate and epoch counts must be non-negative")
        if self.b1 < 0 or self.b2 < 0:
            raise ValueError("b1 and b2 must be >= 0")


@dataclass(frozen=True)
class LossSpec:
    """``kind`` is "nll" (Gaussian head) or "mse" (linear head)."""

    kind: str = "nll"
    b1: float = 0.0
    b2: float = 0.0

    @property
    def regularized(self) -> bool:
        return self.kind == "nll" and (self.b1 != 0 or self.b2 != 0)


@dataclass
class ModelWeights:
    input_size: int
    hidden_size: int
    output_size: int
    head: str  # "gaussian" or "linear"
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "ModelWeights":
        return ModelWeights(
            self.input_size, self.hidden_size, self.output_size, self.head,
            {k: v.copy() for k, v in self.params.items()},
        )

    def to_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "input_size": self.input_size,
            "hidden_size": self.hidden_size,
            "output_size": self.output_size,
            "head": self.head,
            "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in self.params.items()},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelWeights":
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')}")
        params = {
            k: np.asarray(v["data"], dtype=float).reshape(v["shape"]) for k, v in d["params"].items()
        }
        w = cls(int(d["input_size"]), int(d["hidden_size"]), int(d["output_size"]), d["head"], params)
        w.validate()
        return w

    def validate(self):
        d, h, o = self.input_size, self.hidden_size, self.output_size
        expected = {
            "enc_W": (4 * h, d + h), "enc_b": (4 * h,),
            "dec_W": (4 * h, d + h), "dec_b": (4 * h,),
            "out_W": (o, h), "out_b": (o,),
        }
        for k, shape in expected.items():
            if k not in self.params or self.params[k].shape != shape:
                raise ValueError(f"parameter {k} missing or not shaped {shape}")
            if not np.all(np.isfinite(self.params[k])):
                raise ValueError(f"parameter {k} has non-finite entries")


def init_weights(
    input_size: int, hidden_size: int, head: str = "gaussian",
    rng: np.random.Generator | int | None = 0,
) -> ModelWeights:
    if head not in ("gaussian", "linear"):
        raise ValueError(f"unknown head {head!r}")
    rng = np.random.default_rng(rng)
    output_size = 5 if head == "gaussian" else input_size
    h = hidden_size
    scale = 1.0 / math.sqrt(h)

    def u(*shape):
        return rng.uniform(-scale, scale, size=shape)

    params = {
        "enc_W": u(4 * h, input_size + h),
        "enc_b": np.zeros(4 * h),
        "dec_W": u(4 * h, input_size + h),
        "dec_b": np.zeros(4 * h),
        "out_W": u(output_size, h),
        "out_b": np.zeros(output_size),
    }
    # forget-gate bias
    params["enc_b"][h : 2 * h] = 1.0
    params["dec_b"][h : 2 * h] = 1.0
    return ModelWeights(input_size, hidden_size, output_size, head, params)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm_step(W: np.ndarray, b: np.ndarray, x: np.ndarray, h: np.ndarray, c: np.ndarray, cache: list | None = None):
    """One LSTM step with gate order (input, forget, candidate, output).

    Works on single vectors or on batches (leading batch axis).
    """
    hs = h.shape[-1]
    if W.shape != (4 * hs, x.shape[-1] + hs):
        raise ValueError(f"weight shape {W.shape} does not fit input {x.shape[-1]} / hidden {hs}")
    if c.shape != h.shape:
        raise ValueError("hidden and cell state shapes differ")
    xh = np.concatenate([x, h], axis=-1)
    z = xh @ W.T + b
    i = _sigmoid(z[..., :hs])
    f = _sigmoid(z[..., hs : 2 * hs])
    g = np.tanh(z[..., 2 * hs : 3 * hs])
    o = _sigmoid(z[..., 3 * hs :])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    if cache is not None:
        cache.append((xh, i, f, g, o, c, tc))
    return h_new, c_new


def _lstm_backward(W, caches, dh_steps, dh_next, dc_next, dW, db):
    """Reverse pass over one unrolled LSTM. ``dh_steps[t]`` is the external
    gradient into h_t (may be None). Returns gradients into the initial state."""
    hs = dh_next.shape[-1]
    for t in range(len(caches) - 1, -1, -1):
        xh, i, f, g, o, c_prev, tc = caches[t]
        dh = dh_next if dh_steps is None or dh_steps[t] is None else dh_next + dh_steps[t]
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dz = np.concatenate(
            [di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)], axis=-1
        )
        dW += dz.T @ xh
        db += dz.sum(axis=0)
        dxh = dz @ W
        dh_next = dxh[:, -hs:]
        dc_next = dc * f
    return dh_next, dc_next


def squash_head(raw: np.ndarray):
    """Split raw Gaussian head output into (mu, log_sigma, rho_raw, rho)."""
    return raw[..., 0:2], raw[..., 2:4], raw[..., 4], np.tanh(raw[..., 4])


def _one_minus_rho2(rho_raw):
    return 1.0 / np.cosh(np.clip(rho_raw, -350.0, 350.0)) ** 2


def gaussian_nll(mu, sigma, rho, target):
    """Bivariate normal negative log density; broadcasts over leading axes."""
    mu, sigma, target = (np.asarray(a, dtype=float) for a in (mu, sigma, target))
    rho = np.asarray(rho, dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be strictly positive")
    if np.any(np.abs(rho) >= 1):
        raise ValueError("|rho| must be < 1")
    dx = (target[..., 0] - mu[..., 0]) / sigma[..., 0]
    dy = (target[..., 1] - mu[..., 1]) / sigma[..., 1]
    q = 1.0 - rho * rho
    z = dx * dx + dy * dy - 2.0 * rho * dx * dy
    return LOG_2PI + np.log(sigma[..., 0] * sigma[..., 1]) + 0.5 * np.log(q) + z / (2.0 * q)


def nll_loss(params: GaussianParams2D, target) -> float:
    return float(gaussian_nll(params.mu, params.sigma, params.rho, target))


def regularized_loss(
    params: Sequence[GaussianParams2D],
    targets: Sequence,
    cluster_mu: Sequence,
    cluster_sigma: Sequence,
    b1: float = 0.5,
    b2: float = 0.5,
) -> float:
    """Sum over steps of NLL plus ``b1 |mu - mu_c| + b2 |sigma - sigma_c|``."""
    n = len(params)
    if not (len(targets) == len(cluster_mu) == len(cluster_sigma) == n):
        raise ValueError("params, targets and cluster statistics differ in length")
    total = 0.0
    for p, t, mc, sc in zip(params, targets, cluster_mu, cluster_sigma):
        total += nll_loss(p, t)
        total += b1 * float(np.linalg.norm(np.asarray(p.mu) - np.asarray(mc)))
        total += b2 * float(np.linalg.norm(np.asarray(p.sigma) - np.asarray(sc)))
    return total


@dataclass
class SequenceBatch:
    """Arrays for one batch of encoder/decoder sequences.

    enc_inputs (B, Te, D), dec_inputs (B, Td, D), targets (B, Td, 2 or D);
    cluster_mu / cluster_sigma (B, Td, 2) when the loss is regularized.
    """

    enc_inputs: np.ndarray
    dec_inputs: np.ndarray
    targets: np.ndarray
    cluster_mu: np.ndarray | None = None
    cluster_sigma: np.ndarray | None = None

    def __len__(self) -> int:
        return self.dec_inputs.shape[0]

    def take(self, idx) -> "SequenceBatch":
        return SequenceBatch(
            self.enc_inputs[idx], self.dec_inputs[idx], self.targets[idx],
            None if self.cluster_mu is None else self.cluster_mu[idx],
            None if self.cluster_sigma is None else self.cluster_sigma[idx],
        )


def _forward(weights: ModelWeights, enc_inputs, dec_inputs, keep_cache=True):
    p = weights.params
    B = dec_inputs.shape[0]
    H = weights.hidden_size
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    enc_cache: list | None = [] if keep_cache else None
    for t in range(enc_inputs.shape[1]):
        h, c = lstm_step(p["enc_W"], p["enc_b"], enc_inputs[:, t], h, c, enc_cache)
    dec_cache: list | None = [] if keep_cache else None
    hs = []
    for t in range(dec_inputs.shape[1]):
        h, c = lstm_step(p["dec_W"], p["dec_b"], dec_inputs[:, t], h, c, dec_cache)
        hs.append(h)
    hstack = np.stack(hs, axis=1) if hs else np.zeros((B, 0, H))
    raw = hstack @ p["out_W"].T + p["out_b"]
    return raw, hstack, enc_cache, dec_cache


def _check_finite(raw: np.ndarray):
    bad = ~np.all(np.isfinite(raw), axis=(0, 2))
    if np.any(bad):
        raise NumericalError(f"non-finite forward output at decoder step {int(np.argmax(bad))}")


def loss_and_output_grad(raw: np.ndarray, batch: SequenceBatch, spec: LossSpec):
    """Mean per-sequence loss and its gradient w.r.t. the raw head output."""
    B = raw.shape[0]
    if spec.kind == "mse":
        diff = raw - batch.targets
        return float(np.sum(diff * diff) / B), 2.0 * diff / B
    if spec.kind != "nll":
        raise ValueError(f"unknown loss kind {spec.kind!r}")
    mu, s, r, rho = squash_head(raw)
    sigma = np.exp(s)
    q = _one_minus_rho2(r)
    tgt = batch.targets
    dx = (tgt[..., 0] - mu[..., 0]) / sigma[..., 0]
    dy = (tgt[..., 1] - mu[..., 1]) / sigma[..., 1]
    z = dx * dx + dy * dy - 2.0 * rho * dx * dy
    nll = LOG_2PI + s[..., 0] + s[..., 1] + 0.5 * np.log(q) + z / (2.0 * q)
    g = np.empty_like(raw)
    ax = (dx - rho * dy) / q
    ay = (dy - rho * dx) / q
    g[..., 0] = -ax / sigma[..., 0]
    g[..., 1] = -ay / sigma[..., 1]
    g[..., 2] = 1.0 - dx * ax
    g[..., 3] = 1.0 - dy * ay
    g[..., 4] = -rho - dx * dy + z * rho / q
    loss = nll.sum()
    if spec.b1 or spec.b2 or batch.cluster_mu is not None:
        if batch.cluster_mu is None or batch.cluster_sigma is None:
            if spec.regularized:
                raise ValueError("regularized loss needs cluster statistics")
        else:
            # steps without cluster statistics (NaN rows) carry no penalty
            valid = (np.all(np.isfinite(batch.cluster_mu), axis=-1)
                     & np.all(np.isfinite(batch.cluster_sigma), axis=-1))[..., None]
            dm = np.where(valid, mu - np.nan_to_num(batch.cluster_mu), 0.0)
            nm = np.sqrt(np.sum(dm * dm, axis=-1))
            dsig = np.where(valid, sigma - np.nan_to_num(batch.cluster_sigma), 0.0)
            ns = np.sqrt(np.sum(dsig * dsig, axis=-1))
            loss = loss + spec.b1 * nm.sum() + spec.b2 * ns.sum()
            safe_m = np.where(nm > 0, nm, 1.0)[..., None]
            safe_s = np.where(ns > 0, ns, 1.0)[..., None]
            g[..., 0:2] += spec.b1 * np.where(nm[..., None] > 0, dm / safe_m, 0.0)
            g[..., 2:4] += spec.b2 * np.where(ns[..., None] > 0, dsig / safe_s, 0.0) * sigma
    return float(loss / B), g / B


def backprop(weights: ModelWeights, batch: SequenceBatch, loss_spec: LossSpec = LossSpec()):
    """Loss (mean over the batch of per-sequence sums) and exact gradients."""
    raw, hstack, enc_cache, dec_cache = _forward(weights, batch.enc_inputs, batch.dec_inputs)
    _check_finite(raw)
    loss, draw = loss_and_output_grad(raw, batch, loss_spec)
    p = weights.params
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    grads["out_W"] = np.einsum("bto,bth->oh", draw, hstack)
    grads["out_b"] = draw.sum(axis=(0, 1))
    dh_steps = list(np.moveaxis(draw @ p["out_W"], 1, 0))
    B, H = raw.shape[0], weights.hidden_size
    dh, dc = _lstm_backward(
        p["dec_W"], dec_cache, dh_steps, np.zeros((B, H)), np.zeros((B, H)), grads["dec_W"], grads["dec_b"]
    )
    _lstm_backward(p["enc_W"], enc_cache, None, dh, dc, grads["enc_W"], grads["enc_b"])
    return loss, grads


def batch_loss(weights: ModelWeights, batch: SequenceBatch, loss_spec: LossSpec = LossSpec()) -> float:
    raw, _, _, _ = _forward(weights, batch.enc_inputs, batch.dec_inputs, keep_cache=False)
    _check_finite(raw)
    return loss_and_output_grad(raw, batch, loss_spec)[0]


class RMSprop:
    def __init__(self, learning_rate=0.001, decay=0.9, epsilon=1e-8):
        self.lr, self.decay, self.eps = learning_rate, decay, epsilon
        self.cache: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        for k in PARAM_NAMES:
            g = grads[k]
            ms = self.cache.get(k)
            if ms is None:
                ms = np.zeros_like(g)
            ms = self.decay * ms + (1.0 - self.decay) * g * g
            self.cache[k] = ms
            params[k] -= self.lr * g / (np.sqrt(ms) + self.eps)


@dataclass
class TrainResult:
    weights: ModelWeights
    losses: list[float]
    optimizer: RMSprop | None = None


def _clip(grads: dict[str, np.ndarray], max_norm: float | None):
    if max_norm is None:
        return
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale


def train(
    weights: ModelWeights,
    data: SequenceBatch,
    config: TrainConfig,
    loss_spec: LossSpec = LossSpec(),
    epochs: int | None = None,
    rng: np.random.Generator | None = None,
    optimizer: RMSprop | None = None,
) -> TrainResult:
    """RMSprop over shuffled mini-batches; returns per-epoch mean loss.

    ``weights`` is not modified. Pass ``optimizer`` to continue a previous
    run with its accumulated second-moment estimates.
    """
    n = len(data)
    if n == 0:
        raise ValueError("no training sequences")
    epochs = config.epochs_stream1 if epochs is None else epochs
    rng = np.random.default_rng(config.rng_seed) if rng is None else rng
    w = weights.copy()
    opt = optimizer or RMSprop(config.learning_rate, config.decay, config.epsilon)
    losses = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for bi, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            try:
                loss, grads = backprop(w, data.take(idx), loss_spec)
            except NumericalError:
                raise TrainingDiverged(epoch, bi, float("nan")) from None
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch, bi, loss)
            _clip(grads, config.clip_norm)
            opt.step(w.params, grads)
            total += loss * len(idx)
        losses.append(total / n)
        log.debug("epoch %d loss %.6f", epoch, losses[-1])
    return TrainResult(w, losses, opt)


def predict_sequence(
    weights: ModelWeights, observed: np.ndarray, pred_len: int, first_input: np.ndarray | None = None
):
    """Roll the decoder out ``pred_len`` steps after encoding ``observed``.

    ``observed`` is (Te, D) or batched (B, Te, D). The first decoder input is
    ``first_input`` (default: the last observed vector, or zeros). Gaussian
    heads feed back their mean; linear heads feed back the output rescaled
    to unit norm, which is also what they return.

    Single sequences return a list of :class:`GaussianParams2D` (Gaussian
    head) or a (pred_len, D) array (linear head). Batched inputs return raw
    arrays: (B, pred_len, 5) or (B, pred_len, D).
    """
    if pred_len < 1:
        raise ValueError("pred_len must be >= 1")
    obs = np.asarray(observed, dtype=float)
    single = obs.ndim == 2
    if single:
        obs = obs[None]
    B, D = obs.shape[0], weights.input_size
    if obs.shape[2] != D:
        raise ValueError(f"input size {obs.shape[2]} != model input size {D}")
    p = weights.params
    h = np.zeros((B, weights.hidden_size))
    c = np.zeros_like(h)
    for t in range(obs.shape[1]):
        h, c = lstm_step(p["enc_W"], p["enc_b"], obs[:, t], h, c)
    if first_input is None:
        x = obs[:, -1] if obs.shape[1] else np.zeros((B, D))
    else:
        x = np.broadcast_to(np.asarray(first_input, dtype=float), (B, D))
    outs = []
    for step in range(pred_len):
        h, c = lstm_step(p["dec_W"], p["dec_b"], x, h, c)
        raw = h @ p["out_W"].T + p["out_b"]
        if not np.all(np.isfinite(raw)):
            raise NumericalError(f"non-finite prediction at decoder step {step}")
        if weights.head == "gaussian":
            x = raw[:, 0:2]
        else:
            norms = np.linalg.norm(raw, axis=1, keepdims=True)
            raw = raw / np.where(norms > 0, norms, 1.0)
            x = raw
        outs.append(raw)
    out = np.stack(outs, axis=1)
    if not single:
        return out
    if weights.head == "linear":
        return out[0]
    mu, s, _, rho = squash_head(out[0])
    return [GaussianParams2D(mu[t].copy(), np.exp(s[t]), float(rho[t])) for t in range(pred_len)]


def save_checkpoint(path, models: Mapping[str, ModelWeights], config: Mapping | None = None):
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": config or {},
        "models": {k: m.to_dict() for k, m in models.items()},
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_checkpoint(path) -> tuple[dict[str, ModelWeights], dict]:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    return {k: ModelWeights.from_dict(v) for k, v in payload["models"].items()}, payload.get("config", {})


def train_config_dict(config: TrainConfig) -> dict:
    return asdict(config)
