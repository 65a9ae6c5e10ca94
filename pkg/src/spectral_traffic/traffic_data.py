"""Trajectory log ingestion and windowing.

The unified CSV layout is ``frame_id, agent_id, x, y[, dataset_id]`` with
coordinates in meters in the world frame.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_DATASET = "default"


class DataError(ValueError):
    """Malformed or inconsistent trajectory data."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class TrajectoryPoint:
    frame_id: int
    agent_id: int
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise DataError(f"non-finite position for agent {self.agent_id} at frame {self.frame_id}")


@dataclass(frozen=True)
class Trajectory:
    agent_id: int
    points: tuple[TrajectoryPoint, ...]
    sample_rate_hz: float = 10.0

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        frames = [p.frame_id for p in self.points]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise DataError(f"agent {self.agent_id}: frames must be strictly increasing")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def frames(self) -> np.ndarray:
        return np.array([p.frame_id for p in self.points], dtype=np.int64)

    @property
    def positions(self) -> np.ndarray:
        return np.array([(p.x, p.y) for p in self.points], dtype=float).reshape(-1, 2)

    def index_of(self, frame_id: int) -> int:
        frames = self.frames
        i = int(np.searchsorted(frames, frame_id))
        if i >= len(frames) or frames[i] != frame_id:
            raise KeyError(f"agent {self.agent_id} has no sample at frame {frame_id}")
        return i


@dataclass(frozen=True)
class Scene:
    """Per-frame view of a trajectory log.

    ``frames`` maps frame_id to a tuple of ``(agent_id, x, y)`` sorted by
    agent_id; frame keys are kept in ascending order.
    """

    dataset_id: str = DEFAULT_DATASET
    frames: Mapping[int, tuple[tuple[int, float, float], ...]] = field(default_factory=dict)
    sample_rate_hz: float = 10.0

    @classmethod
    def from_rows(
        cls,
        rows: Iterable[tuple[int, int, float, float]],
        dataset_id: str = DEFAULT_DATASET,
        sample_rate_hz: float = 10.0,
    ) -> "Scene":
        grouped: dict[int, dict[int, tuple[float, float]]] = {}
        for frame_id, agent_id, x, y in rows:
            slot = grouped.setdefault(int(frame_id), {})
            if int(agent_id) in slot:
                raise DataError(f"duplicate (frame {frame_id}, agent {agent_id})")
            if not (math.isfinite(x) and math.isfinite(y)):
                raise DataError(f"non-finite position for agent {agent_id} at frame {frame_id}")
            slot[int(agent_id)] = (float(x), float(y))
        frames = {
            f: tuple((a, xy[0], xy[1]) for a, xy in sorted(grouped[f].items()))
            for f in sorted(grouped)
        }
        return cls(dataset_id=dataset_id, frames=frames, sample_rate_hz=sample_rate_hz)

    @property
    def frame_ids(self) -> list[int]:
        return list(self.frames)

    @property
    def agent_ids(self) -> list[int]:
        return sorted({a for rows in self.frames.values() for a, _, _ in rows})

    def __len__(self) -> int:
        return len(self.frames)

    def frame(self, frame_id: int) -> tuple[tuple[int, float, float], ...]:
        return self.frames.get(frame_id, ())

    def rows(self) -> Iterable[tuple[int, int, float, float]]:
        for f, agents in self.frames.items():
            for a, x, y in agents:
                yield f, a, x, y

    def trajectories(self) -> dict[int, Trajectory]:
        points: dict[int, list[TrajectoryPoint]] = {}
        for f, a, x, y in self.rows():
            points.setdefault(a, []).append(TrajectoryPoint(f, a, x, y))
        return {
            a: Trajectory(a, tuple(pts), self.sample_rate_hz)
            for a, pts in sorted(points.items())
        }

    def trajectory(self, agent_id: int) -> Trajectory:
        pts = [TrajectoryPoint(f, a, x, y) for f, a, x, y in self.rows() if a == agent_id]
        if not pts:
            raise KeyError(f"agent {agent_id} not in scene")
        return Trajectory(agent_id, tuple(pts), self.sample_rate_hz)


@dataclass(frozen=True)
class WindowSpec:
    obs_len: int
    pred_len: int

    def __post_init__(self):
        if self.obs_len < 1 or self.pred_len < 1:
            raise ValueError("obs_len and pred_len must be >= 1")

    @property
    def total(self) -> int:
        return self.obs_len + self.pred_len

    @classmethod
    def from_seconds(cls, obs_s: float, pred_s: float, sample_rate_hz: float) -> "WindowSpec":
        return cls(int(round(obs_s * sample_rate_hz)), int(round(pred_s * sample_rate_hz)))


@dataclass(frozen=True)
class TrainingWindow:
    agent_id: int
    observed: np.ndarray  # (obs_len, 2)
    future: np.ndarray  # (pred_len, 2)
    frame_origin: int

    def __eq__(self, other):
        if not isinstance(other, TrainingWindow):
            return NotImplemented
        return (
            self.agent_id == other.agent_id
            and self.frame_origin == other.frame_origin
            and np.array_equal(self.observed, other.observed)
            and np.array_equal(self.future, other.future)
        )

    __hash__ = None

    @property
    def frames(self) -> range:
        return range(self.frame_origin, self.frame_origin + len(self.observed) + len(self.future))

    def to_dict(self) -> dict:
        return {
            "agent_id": self.agent_id,
            "frame_origin": self.frame_origin,
            "observed": self.observed.tolist(),
            "future": self.future.tolist(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainingWindow":
        return cls(
            agent_id=int(d["agent_id"]),
            observed=np.asarray(d["observed"], dtype=float).reshape(-1, 2),
            future=np.asarray(d["future"], dtype=float).reshape(-1, 2),
            frame_origin=int(d["frame_origin"]),
        )


def _is_int(text: str) -> bool:
    try:
        int(text)
    except ValueError:
        return False
    return True


def parse_csv(
    source: bytes | str | IO,
    sample_rate_hz: float = 10.0,
    dataset_id: str | None = None,
) -> Scene:
    """Parse a unified-format CSV into a Scene.

    A header row is detected when the first non-empty row does not start
    with two integers. Lines starting with '#' are comments. All rows must
    share one dataset_id.
    """
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        raw = source.read()
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw

    rows: list[tuple[int, int, float, float]] = []
    seen: dict[tuple[int, int], int] = {}
    found_dataset: str | None = None
    first = True
    reader = csv.reader(io.StringIO(text.replace("\r\n", "\n")))
    for line_no, rec in enumerate(reader, start=1):
        rec = [c.strip() for c in rec]
        if not rec or all(c == "" for c in rec) or rec[0].startswith("#"):
            continue
        if first:
            first = False
            if len(rec) >= 2 and not (_is_int(rec[0]) and _is_int(rec[1])):
                continue
        if len(rec) not in (4, 5):
            raise DataError(f"expected 4 or 5 columns, got {len(rec)}", line_no)
        try:
            frame_id, agent_id = int(rec[0]), int(rec[1])
        except ValueError:
            raise DataError(f"non-integer frame/agent id {rec[0]!r},{rec[1]!r}", line_no) from None
        if frame_id < 0 or agent_id < 0:
            raise DataError("frame_id and agent_id must be non-negative", line_no)
        try:
            x, y = float(rec[2]), float(rec[3])
        except ValueError:
            raise DataError(f"non-numeric coordinate {rec[2]!r},{rec[3]!r}", line_no) from None
        if not (math.isfinite(x) and math.isfinite(y)):
            raise DataError("non-finite coordinate", line_no)
        ds = rec[4] if len(rec) == 5 and rec[4] else DEFAULT_DATASET
        if found_dataset is None:
            found_dataset = ds
        elif ds != found_dataset:
            raise DataError(f"mixed dataset_id {found_dataset!r} and {ds!r}", line_no)
        key = (frame_id, agent_id)
        if key in seen:
            raise DataError(
                f"duplicate (frame {frame_id}, agent {agent_id}), first seen on line {seen[key]}",
                line_no,
            )
        seen[key] = line_no
        rows.append((frame_id, agent_id, x, y))

    ds_final = dataset_id or found_dataset or DEFAULT_DATASET
    return Scene.from_rows(rows, dataset_id=ds_final, sample_rate_hz=sample_rate_hz)


def scene_to_csv(scene: Scene, header: bool = True) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    if header:
        w.writerow(["frame_id", "agent_id", "x", "y", "dataset_id"])
    for f, a, x, y in scene.rows():
        w.writerow([f, a, repr(x), repr(y), scene.dataset_id])
    return out.getvalue()


def _runs(frames: Sequence[int]) -> list[tuple[int, int]]:
    """Split sorted frame ids into (start_index, stop_index) runs of consecutive ids."""
    runs = []
    start = 0
    for i in range(1, len(frames) + 1):
        if i == len(frames) or frames[i] != frames[i - 1] + 1:
            runs.append((start, i))
            start = i
    return runs


def extract_windows(
    scene: Scene, spec: WindowSpec, stride: int | None = None
) -> list[TrainingWindow]:
    """Cut every agent's trajectory into contiguous observation/prediction windows.

    Windows start at ``run_start + m * stride`` inside each maximal run of
    consecutive frames; ``stride`` defaults to the window length. Output is
    sorted by (agent_id, frame_origin).
    """
    stride = spec.total if stride is None else stride
    if stride < 1:
        raise ValueError("stride must be >= 1")
    windows: list[TrainingWindow] = []
    skipped = 0
    for agent_id, traj in scene.trajectories().items():
        frames = traj.frames.tolist()
        pos = traj.positions
        n_before = len(windows)
        for lo, hi in _runs(frames):
            for s in range(lo, hi - spec.total + 1, stride):
                windows.append(
                    TrainingWindow(
                        agent_id=agent_id,
                        observed=pos[s : s + spec.obs_len].copy(),
                        future=pos[s + spec.obs_len : s + spec.total].copy(),
                        frame_origin=frames[s],
                    )
                )
        if len(windows) == n_before:
            skipped += 1
    if skipped:
        log.info("extract_windows: %d agent(s) had no full %d-frame window", skipped, spec.total)
    return windows


def agent_speed(traj: Trajectory, frame_id: int) -> float:
    """Backward-difference speed in m/s at ``frame_id``.

    If the predecessor sample is more than one frame earlier the
    displacement is divided by the frame gap.
    """
    i = traj.index_of(frame_id)
    if i == 0:
        raise DataError(f"agent {traj.agent_id}: frame {frame_id} has no predecessor")
    a, b = traj.points[i - 1], traj.points[i]
    dist = math.hypot(b.x - a.x, b.y - a.y)
    return dist * traj.sample_rate_hz / (b.frame_id - a.frame_id)


def frame_speeds(scene: Scene, trajectories: Mapping[int, Trajectory] | None = None) -> dict[int, dict[int, float]]:
    """Speed of every agent at every frame it appears in.

    The first sample of a trajectory borrows the forward difference of its
    second sample; single-sample agents get speed 0.
    """
    trajectories = scene.trajectories() if trajectories is None else trajectories
    out: dict[int, dict[int, float]] = {f: {} for f in scene.frames}
    for a, traj in trajectories.items():
        frames = traj.frames
        if len(frames) == 1:
            out[int(frames[0])][a] = 0.0
            continue
        pos = traj.positions
        step = np.linalg.norm(np.diff(pos, axis=0), axis=1) * traj.sample_rate_hz / np.diff(frames)
        speeds = np.concatenate([[step[0]], step])
        for f, s in zip(frames.tolist(), speeds.tolist()):
            out[f][a] = s
    return out


def write_windows_jsonl(windows: Iterable[TrainingWindow], fh: IO[str]) -> int:
    n = 0
    for w in windows:
        fh.write(json.dumps(w.to_dict()) + "\n")
        n += 1
    return n


def read_windows_jsonl(fh: IO[str]) -> list[TrainingWindow]:
    out = []
    for line_no, line in enumerate(fh, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
            if isinstance(rec, dict) and "config" in rec and "observed" not in rec:
                continue  # metadata header
            out.append(TrainingWindow.from_dict(rec))
        except (KeyError, ValueError, TypeError) as exc:
            raise DataError(f"bad window record: {exc}", line_no) from None
    return out
