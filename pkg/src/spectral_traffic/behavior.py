"""Rule-based behavior labels from the growth rate of Laplacian degrees."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dgg import Spectrum, reconstruct_laplacian


class Behavior(str, enum.Enum):
    OVERSPEEDING = "overspeeding"
    NEUTRAL = "neutral"
    UNDERSPEEDING = "underspeeding"

    @classmethod
    def parse(cls, text: str) -> "Behavior":
        t = text.strip().lower()
        for b in cls:
            if t in (b.value, b.value[0], b.name.lower()):
                return b
        raise ValueError(f"unknown behavior label {text!r}")


@dataclass(frozen=True)
class BehaviorThresholds:
    lambda1: float = 0.00015
    lambda2: float = -0.00015

    def __post_init__(self):
        if self.lambda2 > self.lambda1:
            raise ValueError("lambda2 must be <= lambda1")

    @classmethod
    def symmetric(cls, lam: float) -> "BehaviorThresholds":
        return cls(abs(lam), -abs(lam))


@dataclass(frozen=True)
class BehaviorLabel:
    label: Behavior
    theta_rate: float


@dataclass(frozen=True)
class ThetaSeries:
    agent_id: int | None
    frames: np.ndarray
    values: np.ndarray
    neighbor_counts: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.values)


def theta_series(
    laplacians: Sequence[np.ndarray] | Sequence[Spectrum],
    agent_index: int,
    agent_id: int | None = None,
    frames: Sequence[int] | None = None,
    neighbor_counts: Sequence[int] | None = None,
) -> ThetaSeries:
    """Diagonal readback of ``agent_index`` across a sequence of Laplacians.

    Spectra are accepted in place of matrices and are expanded to
    ``U diag(lambda) U^T`` first; only the needed diagonal entry is formed.
    """
    values = []
    for item in laplacians:
        if isinstance(item, Spectrum):
            n = item.n
            if not 0 <= agent_index < n:
                raise IndexError(f"agent_index {agent_index} out of range for size {n}")
            row = item.eigenvectors[agent_index]
            values.append(float(np.dot(row * item.eigenvalues, row)))
        else:
            m = np.asarray(item)
            if not 0 <= agent_index < m.shape[0]:
                raise IndexError(f"agent_index {agent_index} out of range for size {m.shape[0]}")
            values.append(float(m[agent_index, agent_index]))
    frames_arr = np.arange(len(values)) if frames is None else np.asarray(frames)
    if len(frames_arr) != len(values):
        raise ValueError("frames and laplacians differ in length")
    counts = None if neighbor_counts is None else np.asarray(neighbor_counts)
    return ThetaSeries(agent_id, frames_arr, np.asarray(values), counts)


def theta_rate(series: ThetaSeries | Sequence[float], frames: Sequence[float] | None = None) -> float:
    """Least-squares slope of theta against frame index, per frame."""
    if isinstance(series, ThetaSeries):
        y = series.values
        t = series.frames if frames is None else frames
    else:
        y = np.asarray(series, dtype=float)
        t = np.arange(len(y)) if frames is None else frames
    y = np.asarray(y, dtype=float)
    t = np.asarray(t, dtype=float)
    if len(y) < 2:
        raise ValueError("need at least two samples for a rate")
    tc = t - t.mean()
    denom = float(np.dot(tc, tc))
    if denom == 0:
        raise ValueError("frames must not all coincide")
    return float(np.dot(tc, y - y.mean()) / denom)


def classify(rate: float, thresholds: BehaviorThresholds = BehaviorThresholds()) -> BehaviorLabel:
    if rate > thresholds.lambda1:
        label = Behavior.OVERSPEEDING
    elif rate < thresholds.lambda2:
        label = Behavior.UNDERSPEEDING
    else:
        label = Behavior.NEUTRAL
    return BehaviorLabel(label, float(rate))


def _as_behavior(x) -> Behavior:
    if isinstance(x, BehaviorLabel):
        return x.label
    if isinstance(x, Behavior):
        return x
    return Behavior.parse(str(x))


def class_recalls(predicted: Sequence, truth: Sequence) -> dict[Behavior, float]:
    """Recall per class present in ``truth``."""
    pred = [_as_behavior(p) for p in predicted]
    true = [_as_behavior(t) for t in truth]
    if len(pred) != len(true):
        raise ValueError(f"length mismatch: {len(pred)} predicted vs {len(true)} true")
    out = {}
    for c in Behavior:
        idx = [i for i, t in enumerate(true) if t is c]
        if idx:
            out[c] = sum(pred[i] is c for i in idx) / len(idx)
    return out


def weighted_accuracy(predicted: Sequence, truth: Sequence) -> float:
    """Support-weighted mean of per-class recall.

    With support weights n_c / n this collapses to plain accuracy, which is
    what gets computed (exactly, as correct / n).
    """
    if len(predicted) != len(truth):
        raise ValueError(f"length mismatch: {len(predicted)} predicted vs {len(truth)} true")
    if len(truth) == 0:
        raise ValueError("empty label lists")
    pred = [_as_behavior(p) for p in predicted]
    true = [_as_behavior(t) for t in truth]
    return sum(p is t for p, t in zip(pred, true)) / len(true)


def calibrate_thresholds(
    rates: Sequence[float], truth: Sequence, symmetric: bool = False
) -> BehaviorThresholds:
    """Grid-search thresholds that maximise weighted accuracy on labeled rates.

    Candidates are midpoints between consecutive distinct rates (plus points
    just outside the range). Ties prefer the widest neutral band.
    """
    r = np.asarray(rates, dtype=float)
    true = [_as_behavior(t) for t in truth]
    if len(r) != len(true) or len(r) == 0:
        raise ValueError("rates and truth must be non-empty and equal length")
    if symmetric:
        base = np.unique(np.abs(r))
    else:
        base = np.unique(r)
    pad = max(1e-12, 1e-6 * float(np.max(np.abs(base))) if base.size else 1e-12)
    cands = np.concatenate([[base[0] - pad], (base[:-1] + base[1:]) / 2, [base[-1] + pad]])
    is_o = np.array([t is Behavior.OVERSPEEDING for t in true])
    is_u = np.array([t is Behavior.UNDERSPEEDING for t in true])
    is_n = ~(is_o | is_u)
    best, best_key = None, None
    if symmetric:
        cands = cands[cands >= 0]
    for l1 in cands:
        l2s = np.array([-l1]) if symmetric else cands[cands <= l1]
        over = r > l1
        under = r[None, :] < l2s[:, None]
        neutral = ~over[None, :] & ~under
        # weighted accuracy with support weights is plain accuracy
        correct = (over & is_o).sum() + (under & is_u).sum(axis=1) + (neutral & is_n).sum(axis=1)
        width = l1 - l2s
        order = np.lexsort((width, correct))
        i = order[-1]
        key = (int(correct[i]), float(width[i]))
        if best_key is None or key > best_key:
            best, best_key = BehaviorThresholds(float(l1), float(l2s[i])), key
    return best


def theta_rates_from_spectra(spectra: Sequence[Spectrum], frames: Sequence[int] | None = None) -> np.ndarray:
    """theta' for every row of a spectrum sequence at once."""
    diag = np.array([np.diag(reconstruct_laplacian(s)) for s in spectra])
    t = np.arange(len(spectra)) if frames is None else np.asarray(frames, dtype=float)
    if len(diag) < 2:
        raise ValueError("need at least two spectra")
    tc = t - t.mean()
    return (tc @ (diag - diag.mean(axis=0))) / float(tc @ tc)
