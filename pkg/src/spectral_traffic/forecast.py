"""Two-stream forecasting pipeline.

Stream 1 predicts an agent's future displacements from its own past.
Stream 2 predicts future eigenvectors of the accumulated traffic
Laplacian; its Fiedler vectors are clustered to regularize stream 1 and the
reconstructed Laplacian diagonals drive behavior labels.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import behavior as bh
from .dgg import (
    DEFAULT_CAPACITY,
    EdgeWeightParams,
    LaplacianState,
    Spectrum,
    align_signs,
    build_adjacency,
    eigendecompose,
    laplacian_from_adjacency,
    update_laplacian,
)
from .seq_model import (
    LossSpec,
    ModelWeights,
    RMSprop,
    SequenceBatch,
    TrainConfig,
    init_weights,
    predict_sequence,
    train,
)
from .spectral import (
    BoundReport,
    cluster_statistics,
    fiedler_vector,
    kmeans_1d,
    perturbation_bound,
    phi_estimate,
)
from .traffic_data import Scene, TrainingWindow, WindowSpec, extract_windows, frame_speeds

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


@dataclass(frozen=True)
class ForecastConfig:
    window: WindowSpec = WindowSpec(30, 50)
    edge_params: EdgeWeightParams = EdgeWeightParams()
    k_eigenvectors: int = 2
    n_clusters: int = 2
    thresholds: bh.BehaviorThresholds | None = None
    train: TrainConfig = TrainConfig()
    regularized: bool = True
    capacity: int | None = None
    zero_init_diagonal: bool = True
    cluster_source: str = "accumulated"  # or "instantaneous"
    stride: int | None = None
    stream2_stride: int = 1
    test_fraction: float = 0.25
    jobs: int = 1

    def __post_init__(self):
        if self.k_eigenvectors < 1:
            raise ValueError("k_eigenvectors must be >= 1")
        if self.regularized and self.k_eigenvectors < 2:
            raise ValueError("clustering needs k_eigenvectors >= 2")
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be >= 1")
        if self.cluster_source not in ("accumulated", "instantaneous"):
            raise ValueError(f"unknown cluster_source {self.cluster_source!r}")
        if not 0 <= self.test_fraction < 1:
            raise ValueError("test_fraction must be in [0, 1)")

    def to_dict(self) -> dict:
        # jobs only changes scheduling, never results, so it stays out of reports
        d = asdict(self)
        d.pop("jobs")
        return d


# -- metrics -----------------------------------------------------------------

def _pair(pred, truth):
    p = np.asarray(pred, dtype=float)
    t = np.asarray(truth, dtype=float)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {t.shape}")
    if p.size == 0 or p.shape[-2] == 0:
        raise ValueError("empty trajectory")
    return p, t


def ade(pred, truth) -> float:
    """RMSE of position error over every predicted step (and agent, if batched)."""
    p, t = _pair(pred, truth)
    return float(np.sqrt(np.mean(np.sum((p - t) ** 2, axis=-1))))


def fde(pred, truth) -> float:
    """Final-position error; RMSE over agents for batched (B, T, 2) input."""
    p, t = _pair(pred, truth)
    return float(np.sqrt(np.mean(np.sum((p[..., -1, :] - t[..., -1, :]) ** 2, axis=-1))))


def rmse_curve(pred, truth) -> np.ndarray:
    """Per-step RMSE over agents for (B, T, 2) arrays."""
    p, t = _pair(pred, truth)
    return np.sqrt(np.mean(np.sum((p - t) ** 2, axis=-1), axis=0))


# -- stream 2 inputs ----------------------------------------------------------

@dataclass
class SpectrumSequences:
    """Aligned spectra of the accumulated Laplacian, one per scene frame."""

    frame_ids: list[int]
    spectra: list[Spectrum]
    index_maps: list[dict[int, int]]
    theta: np.ndarray  # (T, capacity) ground-truth diagonal
    neighbor_counts: list[dict[int, int]]
    bounds: list[BoundReport] = field(default_factory=list)

    @property
    def capacity(self) -> int:
        return self.theta.shape[1]

    @property
    def sequences(self) -> np.ndarray:
        """(k, T, N): S_j is ``sequences[j]``."""
        return np.stack([s.eigenvectors for s in self.spectra], axis=0).transpose(2, 0, 1)

    def position(self, frame_id: int) -> int:
        return self._pos[frame_id]

    def __post_init__(self):
        self._pos = {f: i for i, f in enumerate(self.frame_ids)}


def resolve_capacity(scene: Scene, config: ForecastConfig) -> int:
    cap = config.capacity or min(DEFAULT_CAPACITY, max(1, len(scene.agent_ids)))
    return max(cap, config.k_eigenvectors)


def _map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def build_spectrum_sequences(
    scene: Scene, config: ForecastConfig, with_bounds: bool = False, chunk: int = 64
) -> SpectrumSequences:
    """Accumulate the Laplacian frame by frame, decompose, and sign-align."""
    if len(scene) == 0:
        raise PipelineError("graphs", "scene has no frames")
    cap = resolve_capacity(scene, config)
    k = config.k_eigenvectors
    speeds = frame_speeds(scene)
    state = LaplacianState(capacity=cap, zero_init_diagonal=config.zero_init_diagonal)
    frame_ids = scene.frame_ids
    spectra: list[Spectrum] = []
    index_maps, thetas, counts, bounds = [], [], [], []
    prev_matrix = None
    pending: list[np.ndarray] = []

    def flush():
        decomposed = _map(lambda m: eigendecompose(m, k), pending, config.jobs)
        for spec in decomposed:
            spectra.append(align_signs(spectra[-1], spec) if spectra else spec)
        pending.clear()

    for f in frame_ids:
        state = update_laplacian(state, f, scene.frame(f), speeds[f], config.edge_params)
        m = state.matrix.copy()
        pending.append(m)
        index_maps.append(dict(state.index_map))
        thetas.append(np.diag(m).copy())
        counts.append({a: len(h) for a, h in state.neighbor_history.items()})
        if with_bounds and prev_matrix is not None:
            bounds.append(perturbation_bound(prev_matrix, m, j=min(1, cap - 1)))
        prev_matrix = m if with_bounds else None
        if len(pending) >= chunk:
            flush()
    flush()
    return SpectrumSequences(frame_ids, spectra, index_maps, np.array(thetas), counts, bounds)


def stream2_batch(seqs: SpectrumSequences, spec: WindowSpec, positions: Sequence[int]) -> SequenceBatch:
    """Teacher-forced sequences for every S_j and every window start position."""
    s = seqs.sequences
    enc, dec, tgt = [], [], []
    for j in range(s.shape[0]):
        for p in positions:
            obs = s[j, p : p + spec.obs_len]
            fut = s[j, p + spec.obs_len : p + spec.total]
            enc.append(obs)
            dec.append(np.concatenate([obs[-1:], fut[:-1]], axis=0))
            tgt.append(fut)
    n = seqs.capacity
    if not enc:
        empty = np.zeros((0, spec.obs_len, n))
        return SequenceBatch(empty, np.zeros((0, spec.pred_len, n)), np.zeros((0, spec.pred_len, n)))
    return SequenceBatch(np.array(enc), np.array(dec), np.array(tgt))


def predict_spectra(
    weights: ModelWeights, seqs: SpectrumSequences, spec: WindowSpec, start: int
) -> list[Spectrum]:
    """Predicted spectra for the ``pred_len`` frames after the observation
    window starting at position ``start``. Eigenvalues are frozen at the last
    observed frame's values."""
    s = seqs.sequences
    obs = s[:, start : start + spec.obs_len]  # (k, obs, N)
    out = predict_sequence(weights, obs, spec.pred_len)  # (k, pred, N)
    last = seqs.spectra[start + spec.obs_len - 1]
    result = []
    prev = last
    for t in range(spec.pred_len):
        u = out[:, t, :].T
        cur = align_signs(prev, Spectrum(last.eigenvalues.copy(), u))
        result.append(cur)
        prev = cur
    return result


def run_stream2(
    seqs: SpectrumSequences,
    config: ForecastConfig,
    weights: ModelWeights | None = None,
    train_positions: Sequence[int] | None = None,
    epochs: int | None = None,
) -> tuple[ModelWeights, list[float]]:
    """Train stream 2 on sliding windows of the spectrum sequences."""
    spec = config.window
    T = len(seqs.frame_ids)
    if train_positions is None:
        train_positions = range(0, T - spec.total + 1, config.stream2_stride)
    data = stream2_batch(seqs, spec, list(train_positions))
    tc = config.train
    seed = np.random.SeedSequence([tc.rng_seed, 2])
    init_rng, shuffle_rng = (np.random.default_rng(s) for s in seed.spawn(2))
    if weights is None:
        weights = init_weights(seqs.capacity, tc.hidden_size, "linear", init_rng)
    if len(data) == 0:
        raise PipelineError("stream2", "scene too short for a single stream-2 window")
    n_epochs = tc.epochs_stream1 + tc.epochs_joint if epochs is None else epochs
    res = train(weights, data, tc, LossSpec("mse"), epochs=n_epochs, rng=shuffle_rng)
    return res.weights, res.losses


# -- stream 1 -----------------------------------------------------------------

def stream1_arrays(windows: Sequence[TrainingWindow]):
    """Displacement encoding: (enc, dec, targets, last observed positions)."""
    obs = np.array([w.observed for w in windows])
    fut = np.array([w.future for w in windows])
    enc = np.diff(obs, axis=1)
    last = obs[:, -1]
    tgt = np.diff(np.concatenate([last[:, None], fut], axis=1), axis=1)
    first = enc[:, -1:] if enc.shape[1] else np.zeros((len(windows), 1, 2))
    dec = np.concatenate([first, tgt[:, :-1]], axis=1)
    return enc, dec, tgt, last


def predict_trajectories(weights: ModelWeights, windows: Sequence[TrainingWindow], pred_len: int) -> np.ndarray:
    """Mean-decoded absolute positions (B, pred_len, 2)."""
    if not windows:
        return np.zeros((0, pred_len, 2))
    enc, _, _, last = stream1_arrays(windows)
    raw = predict_sequence(weights, enc, pred_len)
    return last[:, None, :] + np.cumsum(raw[..., 0:2], axis=1)


@dataclass
class Stream1Result:
    predictions: np.ndarray  # (B, pred_len, 2)
    weights: ModelWeights
    losses: list[float] = field(default_factory=list)


def run_stream1(
    windows: Sequence[TrainingWindow],
    config: ForecastConfig,
    weights: ModelWeights | None = None,
    train_enabled: bool = True,
) -> Stream1Result:
    """Mean-decoded trajectories for ``windows``; trains first when no
    weights are given (unregularized objective, all epochs)."""
    pred_len = config.window.pred_len
    if weights is None:
        if not train_enabled:
            raise PipelineError("stream1", "no weights given and training disabled")
        tc = config.train
        weights = init_weights(2, tc.hidden_size, "gaussian", _stream1_rngs(tc)[0])
        if not windows:
            return Stream1Result(np.zeros((0, pred_len, 2)), weights)
        enc, dec, tgt, _ = stream1_arrays(windows)
        res = train(
            weights, SequenceBatch(enc, dec, tgt), tc, LossSpec("nll"),
            epochs=tc.epochs_stream1 + tc.epochs_joint, rng=_stream1_rngs(tc)[1],
        )
        weights, losses = res.weights, res.losses
    else:
        losses = []
    return Stream1Result(predict_trajectories(weights, windows, pred_len), weights, losses)


def _stream1_rngs(tc: TrainConfig):
    seed = np.random.SeedSequence([tc.rng_seed, 1])
    return tuple(np.random.default_rng(s) for s in seed.spawn(2))


# -- clustering for the regularizer -------------------------------------------

def _frame_positions(scene: Scene, frame_id: int) -> dict[int, tuple[float, float]]:
    return {a: (x, y) for a, x, y in scene.frame(frame_id)}


def _cluster_labels_from_vector(vec: np.ndarray, n_clusters: int) -> np.ndarray:
    n = min(n_clusters, len(vec))
    labels, _ = kmeans_1d(vec, n)
    return labels


def displacement_stats(
    labels: np.ndarray, agents: Sequence[int], prev: Mapping, cur: Mapping, n_clusters: int
) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Per-agent (mean, std) of its cluster's one-frame displacements."""
    disp = np.array([np.subtract(cur[a], prev[a]) for a in agents]).reshape(-1, 2)
    centers, devs = cluster_statistics(labels, disp, n_clusters)
    return {a: (centers[labels[i]], devs[labels[i]]) for i, a in enumerate(agents)}


def cluster_targets(
    scene: Scene,
    seqs: SpectrumSequences,
    windows: Sequence[TrainingWindow],
    config: ForecastConfig,
    stream2: ModelWeights | None,
) -> tuple[np.ndarray, np.ndarray]:
    """Cluster mean/deviation of one-step displacements for each window step.

    Clusters come from the Fiedler vector of stream 2's predicted spectrum
    at that step (or of the instantaneous proximity graph when
    ``cluster_source == "instantaneous"``). Steps where the agent cannot be
    placed in a cluster are NaN.
    """
    spec = config.window
    B = len(windows)
    mu = np.full((B, spec.pred_len, 2), np.nan)
    sd = np.full((B, spec.pred_len, 2), np.nan)
    cache: dict[tuple, dict] = {}

    def stats_for(origin: int, t: int) -> dict:
        key = (origin, t) if config.cluster_source == "accumulated" else (None, origin + spec.obs_len + t)
        if key in cache:
            return cache[key]
        f = origin + spec.obs_len + t
        cur, prev = _frame_positions(scene, f), _frame_positions(scene, f - 1)
        out: dict = {}
        if config.cluster_source == "accumulated":
            start = seqs.position(origin)
            if start not in predicted:
                predicted[start] = predict_spectra(stream2, seqs, spec, start)
            spectrum = predicted[start][t]
            imap = seqs.index_maps[start + spec.obs_len - 1]
            agents = [a for a in sorted(cur) if a in prev and a in imap]
            if agents:
                vec = fiedler_vector(spectrum)[[imap[a] for a in agents]]
                labels = _cluster_labels_from_vector(vec, config.n_clusters)
                out = displacement_stats(labels, agents, prev, cur, config.n_clusters)
        else:
            agents = [a for a in sorted(cur) if a in prev]
            if agents:
                adj = build_adjacency([(a, *cur[a]) for a in agents], config.edge_params)
                lap = laplacian_from_adjacency(adj)
                if len(agents) >= 2:
                    vec = fiedler_vector(eigendecompose(lap, 2))
                else:
                    vec = np.zeros(1)
                labels = _cluster_labels_from_vector(vec, config.n_clusters)
                out = displacement_stats(labels, agents, prev, cur, config.n_clusters)
        cache[key] = out
        return out

    predicted: dict[int, list[Spectrum]] = {}
    for b, w in enumerate(windows):
        for t in range(spec.pred_len):
            st = stats_for(w.frame_origin, t).get(w.agent_id)
            if st is not None:
                mu[b, t], sd[b, t] = st
    return mu, sd


# -- full pipeline ------------------------------------------------------------

@dataclass
class TrainedStreams:
    stream1: ModelWeights
    stream2: ModelWeights | None
    losses1: list[float]
    losses2: list[float]


def split_windows(
    scene: Scene, windows: Sequence[TrainingWindow], config: ForecastConfig
) -> tuple[list[TrainingWindow], list[TrainingWindow], int]:
    """Temporal split: training windows end before the split frame, test
    windows predict only frames at or after it."""
    frames = scene.frame_ids
    if config.test_fraction == 0:
        return list(windows), list(windows), frames[-1] + 1
    split = frames[min(len(frames) - 1, int(round((1 - config.test_fraction) * len(frames))))]
    spec = config.window
    train_w = [w for w in windows if w.frame_origin + spec.total <= split]
    test_w = [w for w in windows if w.frame_origin + spec.obs_len >= split]
    return train_w, test_w, split


def fit_streams(
    scene: Scene,
    seqs: SpectrumSequences,
    train_windows: Sequence[TrainingWindow],
    config: ForecastConfig,
    split_frame: int,
) -> TrainedStreams:
    """Stream 1 alone for ``epochs_stream1``; then ``epochs_joint`` epochs in
    which each stream-1 epoch sees cluster statistics from the current
    stream 2. Stream 2 trains for the full epoch budget on frames before
    ``split_frame``."""
    tc = config.train
    spec = config.window
    if not train_windows:
        raise PipelineError("train", "no training windows")
    enc, dec, tgt, _ = stream1_arrays(train_windows)
    data1 = SequenceBatch(enc, dec, tgt)
    init1, shuffle1 = _stream1_rngs(tc)
    w1 = init_weights(2, tc.hidden_size, "gaussian", init1)
    opt1 = RMSprop(tc.learning_rate, tc.decay, tc.epsilon)
    res = train(w1, data1, tc, LossSpec("nll"), epochs=tc.epochs_stream1, rng=shuffle1, optimizer=opt1)
    w1, losses1 = res.weights, list(res.losses)

    positions = [
        p for p in range(0, len(seqs.frame_ids) - spec.total + 1, config.stream2_stride)
        if seqs.frame_ids[p + spec.total - 1] < split_frame
    ]
    need_stream2 = config.regularized and config.cluster_source == "accumulated"
    w2, losses2 = None, []
    if positions:
        seed = np.random.SeedSequence([tc.rng_seed, 2])
        init2, shuffle2 = (np.random.default_rng(s) for s in seed.spawn(2))
        data2 = stream2_batch(seqs, spec, positions)
        w2 = init_weights(seqs.capacity, tc.hidden_size, "linear", init2)
        opt2 = RMSprop(tc.learning_rate, tc.decay, tc.epsilon)
        r2 = train(w2, data2, tc, LossSpec("mse"), epochs=tc.epochs_stream1, rng=shuffle2, optimizer=opt2)
        w2, losses2 = r2.weights, list(r2.losses)
    elif need_stream2:
        raise PipelineError("stream2", "no stream-2 training window before the split frame")

    for _ in range(tc.epochs_joint):
        if w2 is not None:
            r2 = train(w2, data2, tc, LossSpec("mse"), epochs=1, rng=shuffle2, optimizer=opt2)
            w2 = r2.weights
            losses2 += r2.losses
        if config.regularized:
            cmu, csd = cluster_targets(scene, seqs, train_windows, config, w2)
            batch = SequenceBatch(enc, dec, tgt, cmu, csd)
            loss_spec = LossSpec("nll", tc.b1, tc.b2)
        else:
            batch, loss_spec = data1, LossSpec("nll")
        r1 = train(w1, batch, tc, loss_spec, epochs=1, rng=shuffle1, optimizer=opt1)
        w1 = r1.weights
        losses1 += r1.losses
    return TrainedStreams(w1, w2, losses1, losses2)


@dataclass
class ForecastResult:
    predictions: list[np.ndarray]
    rows: list[dict]
    metrics: dict
    rmse_curve: list[float]
    bound: dict
    losses: dict
    config: dict

    def report(self) -> dict:
        return {
            "config": self.config,
            "metrics": self.metrics,
            "bound": self.bound,
            "losses": self.losses,
            "rmse_curve": self.rmse_curve,
            "rows": self.rows,
        }


def _bound_summary(seqs: SpectrumSequences) -> dict:
    finite = [b for b in seqs.bounds if not b.degenerate]
    delta = max((b.delta_max for b in seqs.bounds), default=0.0)
    n = seqs.capacity
    return {
        "n_agents": n,
        "delta_max": delta,
        "phi_estimate": phi_estimate(n, delta),
        "transitions": len(seqs.bounds),
        "degenerate_transitions": len(seqs.bounds) - len(finite),
        "max_phi": max((b.phi for b in finite), default=0.0),
        "mean_phi": float(np.mean([b.phi for b in finite])) if finite else 0.0,
    }


def behavior_rates(
    seqs: SpectrumSequences,
    windows: Sequence[TrainingWindow],
    config: ForecastConfig,
    stream2: ModelWeights | None,
) -> tuple[list[float | None], list[float | None]]:
    """(predicted, ground-truth) theta' for each window over its prediction frames."""
    spec = config.window
    cache: dict[int, list[Spectrum]] = {}
    pred_rates, true_rates = [], []
    for w in windows:
        start = seqs.position(w.frame_origin)
        last = start + spec.obs_len - 1
        imap = seqs.index_maps[last]
        fut = slice(last + 1, last + 1 + spec.pred_len)
        row = imap.get(w.agent_id)
        # a capacity reset inside the prediction window breaks the theta series
        if row is None or any(seqs.index_maps[i].get(w.agent_id) != row for i in range(fut.start, fut.stop)):
            pred_rates.append(None)
            true_rates.append(None)
            continue
        true_rates.append(bh.theta_rate(seqs.theta[fut, row]))
        if stream2 is None:
            pred_rates.append(None)
            continue
        if start not in cache:
            cache[start] = predict_spectra(stream2, seqs, spec, start)
        series = bh.theta_series(cache[start], row, w.agent_id)
        pred_rates.append(bh.theta_rate(series) if spec.pred_len >= 2 else 0.0)
    return pred_rates, true_rates


def evaluate(
    scene: Scene,
    config: ForecastConfig,
    labels: Mapping[int, bh.Behavior] | None = None,
) -> ForecastResult:
    """Windows, spectra, both streams, optional regularization, metrics."""
    spec = config.window
    try:
        windows = extract_windows(scene, spec, config.stride)
    except ValueError as exc:
        raise PipelineError("windows", str(exc)) from exc
    if not windows:
        raise PipelineError("windows", f"no agent is present for {spec.total} consecutive frames")
    train_w, test_w, split = split_windows(scene, windows, config)
    if not test_w:
        raise PipelineError("windows", "no test windows after the split frame")
    try:
        seqs = build_spectrum_sequences(scene, config, with_bounds=True)
    except ValueError as exc:
        raise PipelineError("graphs", str(exc)) from exc
    streams = fit_streams(scene, seqs, train_w, config, split)

    pred = predict_trajectories(streams.stream1, test_w, spec.pred_len)
    truth = np.array([w.future for w in test_w])

    pred_rates, true_rates = behavior_rates(seqs, test_w, config, streams.stream2)
    thresholds = config.thresholds
    if thresholds is None:
        tr_pred, tr_true = behavior_rates(seqs, train_w, config, streams.stream2)
        pairs = [
            (p, labels[w.agent_id] if labels else None, t)
            for w, p, t in zip(train_w, tr_pred, tr_true)
            if p is not None
        ]
        if labels and pairs:
            thresholds = bh.calibrate_thresholds([p for p, _, _ in pairs], [l for _, l, _ in pairs])
        else:
            thresholds = bh.BehaviorThresholds()

    rows = []
    pred_labels, true_labels = [], []
    for i, w in enumerate(test_w):
        row = {
            "agent_id": w.agent_id,
            "frame_origin": w.frame_origin,
            "ade": ade(pred[i], truth[i]),
            "fde": fde(pred[i], truth[i]),
            "theta_rate": pred_rates[i],
            "prediction": pred[i].tolist(),
            "label_pred": None,
            "label_true": None,
        }
        if pred_rates[i] is not None:
            row["label_pred"] = bh.classify(pred_rates[i], thresholds).label.value
            if labels is not None and w.agent_id in labels:
                row["label_true"] = bh.Behavior(labels[w.agent_id]).value
            elif true_rates[i] is not None:
                row["label_true"] = bh.classify(true_rates[i], thresholds).label.value
            if row["label_true"] is not None:
                pred_labels.append(row["label_pred"])
                true_labels.append(row["label_true"])
        rows.append(row)

    metrics = {
        "ade": ade(pred, truth),
        "fde": fde(pred, truth),
        "weighted_accuracy": bh.weighted_accuracy(pred_labels, true_labels) if true_labels else None,
        "n_train_windows": len(train_w),
        "n_test_windows": len(test_w),
        "split_frame": split,
        "thresholds": asdict(thresholds),
    }
    return ForecastResult(
        predictions=list(pred),
        rows=rows,
        metrics=metrics,
        rmse_curve=rmse_curve(pred, truth).tolist(),
        bound=_bound_summary(seqs),
        losses={"stream1": streams.losses1, "stream2": streams.losses2},
        config=config.to_dict(),
    )


def agent_theta_rates(seqs: SpectrumSequences) -> dict[int, float]:
    """theta' per agent over its last uninterrupted stay in the accumulated graph.

    A capacity reset moves agents to new rows, so only the final run of
    frames with an unchanged row is used. Agents seen in fewer than two
    frames of that run are omitted.
    """
    runs: dict[int, tuple[int, list[int]]] = {}
    for p, imap in enumerate(seqs.index_maps):
        for a, row in imap.items():
            cur = runs.get(a)
            if cur is None or cur[0] != row or cur[1][-1] != p - 1:
                runs[a] = (row, [p])
            else:
                cur[1].append(p)
    frames = np.asarray(seqs.frame_ids, dtype=float)
    out = {}
    for a in sorted(runs):
        row, pos = runs[a]
        if len(pos) >= 2:
            out[a] = bh.theta_rate(seqs.theta[pos, row], frames[pos])
    return out
