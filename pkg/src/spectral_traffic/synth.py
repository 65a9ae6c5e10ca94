"""Seeded straight-lane traffic scenes with planted behaviors.

Two stock layouts are provided: :func:`behavior_scenario` (one mixed-speed
pack where faster agents start behind slower ones) and
:func:`clustered_scenario` (two platoons on lane groups far enough apart
to be disconnected at the default 10 m radius).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .behavior import Behavior
from .traffic_data import DataError, Scene

OVERSPEED_RATIO = 1.5
UNDERSPEED_RATIO = 0.5


@dataclass(frozen=True)
class AgentProfile:
    base_speed: float  # m/s along +x
    behavior: Behavior = Behavior.NEUTRAL
    lane: int = 0
    x0: float = 0.0
    cluster: int = 0


@dataclass(frozen=True)
class ScenarioSpec:
    agents: tuple[AgentProfile, ...]
    n_lanes: int = 3
    lane_width: float = 3.0
    duration: int = 200  # frames
    sample_rate_hz: float = 10.0
    noise_std: float = 0.0
    rng_seed: int = 0
    lane_y0: tuple[float, ...] | None = None  # explicit lateral position per lane
    dataset_id: str = "synthetic"

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    def validate(self):
        if not self.agents:
            raise ValueError("scenario has zero agents")
        if self.lane_width <= 0 or self.noise_std < 0 or self.duration < 1 or self.sample_rate_hz <= 0:
            raise ValueError("invalid lane_width, noise_std, duration or sample_rate_hz")
        if any(a.base_speed < 0 for a in self.agents):
            raise ValueError("speeds must be >= 0")
        if any(not 0 <= a.lane < self.n_lanes for a in self.agents):
            raise ValueError("agent lane outside [0, n_lanes)")
        if self.lane_y0 is not None and len(self.lane_y0) != self.n_lanes:
            raise ValueError("lane_y0 must list one offset per lane")
        median = float(np.median([a.base_speed for a in self.agents]))
        for i, a in enumerate(self.agents):
            if a.behavior is Behavior.OVERSPEEDING and a.base_speed < OVERSPEED_RATIO * median:
                raise ValueError(f"agent {i}: overspeeding plant below {OVERSPEED_RATIO}x median speed")
            if a.behavior is Behavior.UNDERSPEEDING and a.base_speed > UNDERSPEED_RATIO * median:
                raise ValueError(f"agent {i}: underspeeding plant above {UNDERSPEED_RATIO}x median speed")


@dataclass(frozen=True)
class SynthResult:
    scene: Scene
    labels: dict[int, Behavior]
    clusters: dict[int, int]

    def labels_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["agent_id", "behavior", "cluster"])
        for a in sorted(self.labels):
            w.writerow([a, self.labels[a].value, self.clusters[a]])
        return out.getvalue()


def generate(spec: ScenarioSpec) -> SynthResult:
    spec.validate()
    rng = np.random.default_rng(spec.rng_seed)
    lane_y = (
        np.asarray(spec.lane_y0, dtype=float)
        if spec.lane_y0 is not None
        else np.arange(spec.n_lanes) * spec.lane_width
    )
    t = np.arange(spec.duration) / spec.sample_rate_hz
    n = spec.n_agents
    x = np.array([a.x0 for a in spec.agents])[:, None] + np.array([a.base_speed for a in spec.agents])[:, None] * t
    y = np.broadcast_to(lane_y[[a.lane for a in spec.agents]][:, None], x.shape).copy()
    if spec.noise_std > 0:
        x = x + rng.normal(0.0, spec.noise_std, size=x.shape)
        y = y + rng.normal(0.0, spec.noise_std, size=y.shape)
    rows = [
        (f, i, float(x[i, f]), float(y[i, f]))
        for f in range(spec.duration)
        for i in range(n)
    ]
    scene = Scene.from_rows(rows, dataset_id=spec.dataset_id, sample_rate_hz=spec.sample_rate_hz)
    labels = {i: a.behavior for i, a in enumerate(spec.agents)}
    clusters = {i: a.cluster for i, a in enumerate(spec.agents)}
    return SynthResult(scene, labels, clusters)


def behavior_scenario(
    n_agents: int = 12,
    n_lanes: int = 3,
    duration: int = 200,
    n_over: int = 2,
    n_under: int = 2,
    base_speed: float = 10.0,
    spacing: float = 10.5,
    noise_std: float = 0.0,
    rng_seed: int = 0,
) -> ScenarioSpec:
    """Single pack laid out back to front as: underspeeders, overspeeders,
    then neutrals from fastest to slowest.

    Underspeeders fall behind and never meet anyone; overspeeders sweep
    through the neutrals, which in turn creep up on the one ahead. Starting
    gaps exceed 10 m so no edge exists at frame 0.
    """
    n_neutral = n_agents - n_over - n_under
    if n_neutral < 1:
        raise ValueError("need at least one neutral agent")
    speeds: list[tuple[float, Behavior]] = []
    speeds += [(0.4 * base_speed, Behavior.UNDERSPEEDING)] * n_under
    speeds += [(1.7 * base_speed, Behavior.OVERSPEEDING)] * n_over
    speeds += [
        (s, Behavior.NEUTRAL)
        for s in np.linspace(1.1 * base_speed, 0.9 * base_speed, n_neutral)
    ]
    agents = tuple(
        AgentProfile(float(s), b, lane=i % n_lanes, x0=i * spacing)
        for i, (s, b) in enumerate(speeds)
    )
    return ScenarioSpec(agents, n_lanes=n_lanes, duration=duration, noise_std=noise_std, rng_seed=rng_seed)


def clustered_scenario(
    per_group: int = 8,
    duration: int = 120,
    speeds: Sequence[float] = (10.0, 6.0),
    group_gap: float = 12.0,
    spacing: float = 2.0,
    noise_std: float = 0.05,
    rng_seed: int = 0,
) -> ScenarioSpec:
    """Two platoons, each zig-zagging across a pair of adjacent lanes.

    Neighbouring platoon members are ``hypot(lane_width, spacing)`` apart
    (3.6 m by default); the platoons' inner lanes are ``group_gap`` apart.
    """
    lane_y0 = (0.0, 3.0, 3.0 + group_gap, 6.0 + group_gap)
    agents = []
    for g, v in enumerate(speeds[:2]):
        for k in range(per_group):
            agents.append(
                AgentProfile(float(v), Behavior.NEUTRAL, lane=2 * g + (k % 2), x0=k * spacing, cluster=g)
            )
    return ScenarioSpec(
        tuple(agents), n_lanes=4, duration=duration, noise_std=noise_std,
        rng_seed=rng_seed, lane_y0=lane_y0,
    )


def read_labels_csv(source) -> tuple[dict[int, Behavior], dict[int, int]]:
    """Parse a labels sidecar (agent_id, behavior[, cluster]); '#' lines are comments."""
    text = source.read() if hasattr(source, "read") else source
    labels, clusters = {}, {}
    rows = csv.reader(io.StringIO(text))
    for line_no, rec in enumerate(rows, start=1):
        rec = [c.strip() for c in rec]
        if not rec or not rec[0] or rec[0].startswith("#") or rec[0] == "agent_id":
            continue
        try:
            a = int(rec[0])
            labels[a] = Behavior.parse(rec[1])
            clusters[a] = int(rec[2]) if len(rec) > 2 and rec[2] else 0
        except (ValueError, IndexError) as exc:
            raise DataError(f"bad label row: {exc}", line_no) from None
    return labels, clusters
