"""Weighted dynamic geometric graphs over road agents.

Per-frame proximity graphs use the kernel ``exp(-d)`` for pairs closer than
``mu_radius``. :class:`LaplacianState` accumulates those graphs over time:
an ego agent admits a neighbour the first time a slower agent comes within
range, and the edge weight is frozen at that moment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.linalg

DEFAULT_CAPACITY = 270


class EigenError(RuntimeError):
    pass


@dataclass(frozen=True)
class EdgeWeightParams:
    mu_radius: float = 10.0

    def __post_init__(self):
        if not self.mu_radius > 0:
            raise ValueError("mu_radius must be > 0")


def edge_weight(distance: float, params: EdgeWeightParams = EdgeWeightParams()) -> float:
    if distance < 0:
        raise ValueError(f"negative distance {distance}")
    return math.exp(-distance) if distance < params.mu_radius else 0.0


def _pairwise_distances(xy: np.ndarray) -> np.ndarray:
    diff = xy[:, None, :] - xy[None, :, :]
    return np.sqrt((diff**2).sum(-1))


def _kernel(dist: np.ndarray, mu: float) -> np.ndarray:
    w = np.where(dist < mu, np.exp(-dist), 0.0)
    np.fill_diagonal(w, 0.0)
    return w


@dataclass(frozen=True)
class AdjacencyMatrix:
    weights: np.ndarray
    agent_ids: tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.agent_ids)

    @property
    def index_map(self) -> dict[int, int]:
        return {a: i for i, a in enumerate(self.agent_ids)}


def build_adjacency(
    frame: Iterable[tuple[int, float, float]],
    params: EdgeWeightParams = EdgeWeightParams(),
) -> AdjacencyMatrix:
    rows = sorted(frame, key=lambda r: r[0])
    ids = tuple(int(r[0]) for r in rows)
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate agent_id in frame")
    xy = np.array([(r[1], r[2]) for r in rows], dtype=float).reshape(-1, 2)
    if not np.all(np.isfinite(xy)):
        raise ValueError("non-finite agent position")
    return AdjacencyMatrix(_kernel(_pairwise_distances(xy), params.mu_radius), ids)


def laplacian_from_adjacency(adj: AdjacencyMatrix | np.ndarray) -> np.ndarray:
    a = adj.weights if isinstance(adj, AdjacencyMatrix) else np.asarray(adj, dtype=float)
    lap = -a.copy()
    np.fill_diagonal(lap, 0.0)
    lap[np.diag_indices_from(lap)] = a.sum(axis=1) - np.diag(a)
    return lap


@dataclass
class LaplacianState:
    """Accumulated Laplacian of all edges admitted so far.

    ``matrix`` is allocated at full ``capacity``; agents occupy rows in order
    of first appearance. With ``zero_init_diagonal=False`` each newly
    appended agent receives the unit diagonal entry of the block update
    ``[[L, 0], [0, 1]]``; the default keeps exact zero row sums.
    """

    capacity: int = DEFAULT_CAPACITY
    zero_init_diagonal: bool = True
    matrix: np.ndarray = None
    index_map: dict[int, int] = field(default_factory=dict)
    neighbor_history: dict[int, frozenset] = field(default_factory=dict)
    admissions: dict[tuple[int, int], float] = field(default_factory=dict)
    frame_cursor: int | None = None
    resets: int = 0

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        if self.matrix is None:
            self.matrix = np.zeros((self.capacity, self.capacity))

    @property
    def n_active(self) -> int:
        return len(self.index_map)

    @property
    def active(self) -> np.ndarray:
        n = self.n_active
        return self.matrix[:n, :n]

    def theta(self, agent_id: int) -> float:
        i = self.index_map[agent_id]
        return float(self.matrix[i, i])

    def neighbor_count(self, agent_id: int) -> int:
        return len(self.neighbor_history.get(agent_id, ()))

    def copy(self) -> "LaplacianState":
        return replace(
            self,
            matrix=self.matrix.copy(),
            index_map=dict(self.index_map),
            neighbor_history=dict(self.neighbor_history),
            admissions=dict(self.admissions),
        )

    def batch_matrix(self) -> np.ndarray:
        """Rebuild ``matrix`` from the admission log in one pass."""
        n = self.capacity
        adj = np.zeros((n, n))
        for (ego, other), w in self.admissions.items():
            i, j = self.index_map[ego], self.index_map[other]
            adj[i, j] += w
            adj[j, i] += w
        lap = laplacian_from_adjacency(adj)
        if not self.zero_init_diagonal:
            for i in self.index_map.values():
                lap[i, i] += 1.0
        return lap


def _fresh(state: LaplacianState) -> LaplacianState:
    return LaplacianState(
        capacity=state.capacity,
        zero_init_diagonal=state.zero_init_diagonal,
        frame_cursor=state.frame_cursor,
        resets=state.resets + 1,
    )


def update_laplacian(
    state: LaplacianState,
    frame_id: int,
    frame: Sequence[tuple[int, float, float]],
    speeds: Mapping[int, float],
    params: EdgeWeightParams = EdgeWeightParams(),
) -> LaplacianState:
    """Fold one frame into the accumulated Laplacian and return the new state.

    For every ordered pair (ego, other) within ``mu_radius`` where the other
    agent is strictly slower and not yet in the ego's history, the rank-1
    term ``w (e_ego - e_other)(e_ego - e_other)^T`` is added. If a new agent
    does not fit in ``capacity`` the state is reset and rebuilt from this
    frame.
    """
    if state.frame_cursor is not None and frame_id <= state.frame_cursor:
        raise ValueError(f"out-of-order frame {frame_id} (cursor at {state.frame_cursor})")
    ids = [int(r[0]) for r in frame]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate agent_id in frame {frame_id}")
    missing = [a for a in ids if a not in speeds]
    if missing:
        raise ValueError(f"no speed for agents {missing} at frame {frame_id}")
    if len(ids) > state.capacity:
        raise ValueError(f"frame {frame_id} has {len(ids)} agents, capacity is {state.capacity}")

    new_agents = [a for a in ids if a not in state.index_map]
    if state.n_active + len(new_agents) > state.capacity:
        new = _fresh(state)
        new_agents = ids
    else:
        new = state.copy()

    for a in new_agents:
        i = len(new.index_map)
        new.index_map[a] = i
        new.neighbor_history[a] = frozenset()
        if not new.zero_init_diagonal:
            new.matrix[i, i] += 1.0

    if len(ids) > 1:
        xy = np.array([(r[1], r[2]) for r in frame], dtype=float)
        dist = _pairwise_distances(xy)
        spd = [speeds[a] for a in ids]
        m = new.matrix
        for p, ego in enumerate(ids):
            hist = new.neighbor_history[ego]
            added = []
            for q, other in enumerate(ids):
                if q == p or dist[p, q] >= params.mu_radius:
                    continue
                if spd[q] < spd[p] and other not in hist:
                    w = math.exp(-dist[p, q])
                    i, j = new.index_map[ego], new.index_map[other]
                    m[i, i] += w
                    m[j, j] += w
                    m[i, j] -= w
                    m[j, i] -= w
                    new.admissions[(ego, other)] = w
                    added.append(other)
            if added:
                new.neighbor_history[ego] = hist | frozenset(added)
    new.frame_cursor = frame_id
    return new


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray  # (k,), ascending
    eigenvectors: np.ndarray  # (n, k), orthonormal columns

    @property
    def k(self) -> int:
        return len(self.eigenvalues)

    @property
    def n(self) -> int:
        return self.eigenvectors.shape[0]

    def to_dict(self) -> dict:
        return {"eigenvalues": self.eigenvalues.tolist(), "eigenvectors": self.eigenvectors.tolist()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Spectrum":
        vals = np.asarray(d["eigenvalues"], dtype=float)
        vecs = np.asarray(d["eigenvectors"], dtype=float).reshape(-1, len(vals))
        return cls(vals, vecs)


def check_symmetric(matrix: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if m.size and np.max(np.abs(m - m.T)) > tol * max(1.0, np.max(np.abs(m))):
        raise ValueError("matrix is not symmetric")
    return m


def _off_norm(a: np.ndarray) -> float:
    # summed directly: ||A||^2 - ||diag||^2 cancels down to ~sqrt(eps) * ||A||
    return float(np.sqrt(2.0 * np.sum(np.triu(a, 1) ** 2)))


def jacobi_eigh(
    matrix: np.ndarray, tol: float = 1e-14, max_sweeps: int = 60
) -> tuple[np.ndarray, np.ndarray, int]:
    """Cyclic Jacobi eigensolver for a dense symmetric matrix.

    Returns ascending eigenvalues, the matching eigenvector columns, and the
    number of sweeps used. Raises :class:`EigenError` if the off-diagonal
    mass does not fall below ``tol * ||A||_F`` within ``max_sweeps``.
    """
    a = np.array(matrix, dtype=float)
    n = a.shape[0]
    v = np.eye(n)
    scale = max(np.linalg.norm(a), np.finfo(float).tiny)
    for sweep in range(1, max_sweeps + 1):
        off = _off_norm(a)
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:  # theta**2 would overflow
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                rp, rq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        off = _off_norm(a)
        if off > tol * scale:
            raise EigenError(f"Jacobi did not converge after {max_sweeps} sweeps (off-norm {off:.3e})")
        sweep = max_sweeps
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order], sweep


def eigendecompose(matrix: np.ndarray, k: int | None = None, method: str = "lapack") -> Spectrum:
    """The ``k`` algebraically smallest eigenpairs of a symmetric matrix.

    ``method="lapack"`` uses LAPACK's symmetric driver; ``method="jacobi"``
    uses :func:`jacobi_eigh`.
    """
    m = check_symmetric(matrix)
    n = m.shape[0]
    k = n if k is None else k
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    m = 0.5 * (m + m.T)
    if method == "lapack":
        try:
            w, v = scipy.linalg.eigh(m, subset_by_index=(0, k - 1), driver="evr")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
            raise EigenError(f"LAPACK eigensolver failed: {exc}") from exc
    elif method == "jacobi":
        w, v, _ = jacobi_eigh(m)
        w, v = w[:k], v[:, :k]
    else:
        raise ValueError(f"unknown method {method!r}")
    return Spectrum(np.asarray(w, dtype=float), np.ascontiguousarray(v, dtype=float))


def align_signs(prev: Spectrum, next: Spectrum) -> Spectrum:
    if prev.eigenvectors.shape != next.eigenvectors.shape:
        raise ValueError(
            f"spectrum shape mismatch {prev.eigenvectors.shape} vs {next.eigenvectors.shape}"
        )
    dots = np.einsum("ij,ij->j", prev.eigenvectors, next.eigenvectors)
    flip = np.where(dots < 0, -1.0, 1.0)
    return Spectrum(next.eigenvalues.copy(), next.eigenvectors * flip)


def reconstruct_laplacian(spectrum: Spectrum) -> np.ndarray:
    u = spectrum.eigenvectors
    return (u * spectrum.eigenvalues) @ u.T


def state_record(state: LaplacianState, dataset_id: str, frame_id: int, spectrum: Spectrum | None = None) -> dict:
    """JSON-ready record of one frame's accumulated graph."""
    rec = {
        "dataset_id": dataset_id,
        "frame_id": int(frame_id),
        "frame_cursor": state.frame_cursor,
        "index_map": {str(a): i for a, i in state.index_map.items()},
        "matrix": state.matrix.tolist(),
    }
    if spectrum is not None:
        rec.update(spectrum.to_dict())
    return rec
