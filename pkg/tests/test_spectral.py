import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import mp_eigh
from spectral_traffic.dgg import build_adjacency, eigendecompose, laplacian_from_adjacency
from spectral_traffic.spectral import (
    UPPER_BOUND_TABLE,
    BoundReport,
    cluster_statistics,
    eigenvector_angle,
    fiedler_vector,
    kmeans_1d,
    perturbation_bound,
    phi_estimate,
    principal_angle,
    spectral_cluster,
    suggest_n_clusters,
    t_fde,
    t_fde_table,
)


def path_laplacian(n, w=1.0):
    adj = np.zeros((n, n))
    for i in range(n - 1):
        adj[i, i + 1] = adj[i + 1, i] = w
    return laplacian_from_adjacency(adj)


def test_fiedler_two_agents():
    f = fiedler_vector(eigendecompose(path_laplacian(2), 2))
    assert abs(f @ np.array([1, -1]) / math.sqrt(2)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        fiedler_vector(eigendecompose(path_laplacian(2), 1))


def test_fiedler_disconnected_components():
    lap = laplacian_from_adjacency(build_adjacency([(0, 0, 0), (1, 1, 0), (2, 50, 0), (3, 51, 0)]))
    f = fiedler_vector(eigendecompose(lap, 2))
    assert f[0] == pytest.approx(f[1], abs=1e-10)
    assert f[2] == pytest.approx(f[3], abs=1e-10)
    assert abs(f[0] - f[2]) > 0.1


def test_fiedler_path_sign_pattern():
    # reference: extended-precision decomposition of the 4-node path
    _, ref_v = mp_eigh(path_laplacian(4))
    ref = np.sign(ref_v[:, 1])
    assert list(ref * ref[0]) == [1, 1, -1, -1]
    f = fiedler_vector(eigendecompose(path_laplacian(4), 2))
    assert list(np.sign(f) * np.sign(f[0])) == [1, 1, -1, -1]


def test_kmeans_deterministic_and_ties():
    labels, centers = kmeans_1d([0.0, 0.1, 5.0, 5.2], 2)
    assert list(labels) == [0, 0, 1, 1]
    np.testing.assert_allclose(centers, [0.05, 5.1])
    labels, centers = kmeans_1d([1.0, 1.0, 1.0], 2)
    assert list(labels) == [0, 0, 0]  # equal distance goes to the lower index
    with pytest.raises(ValueError):
        kmeans_1d([], 1)
    with pytest.raises(ValueError):
        kmeans_1d([1.0], 2)


def test_cluster_two_far_groups():
    pos = np.array([[0, 0], [1, 1], [2, 0], [50, 50], [51, 50], [50, 52]], dtype=float)
    lap = laplacian_from_adjacency(build_adjacency([(i, *p) for i, p in enumerate(pos)]))
    assign = spectral_cluster(fiedler_vector(eigendecompose(lap, 2)), 2, pos)
    groups = {tuple(np.flatnonzero(assign.labels == c)) for c in range(2)}
    assert groups == {(0, 1, 2), (3, 4, 5)}
    # hand means: (1, 1/3) and (151/3, 152/3)
    got = {tuple(assign.centers[assign.labels[i]]) for i in (0, 3)}
    expected = [(1.0, 1 / 3), (151 / 3, 152 / 3)]
    for e in expected:
        assert any(np.allclose(g, e, atol=1e-9) for g in got)


def test_cluster_single():
    pos = np.array([[0.0, 2.0], [4.0, 6.0]])
    assign = spectral_cluster(np.array([0.3, 0.3]), 1, pos)
    np.testing.assert_allclose(assign.centers[0], [2.0, 4.0])
    np.testing.assert_allclose(assign.deviations[0], [2.0, 2.0])
    with pytest.raises(ValueError):
        spectral_cluster(np.array([]), 1, np.zeros((0, 2)))


def test_cluster_singleton_deviation_zero_and_empty_nan():
    centers, devs = cluster_statistics(np.array([0, 0, 2]), np.array([[0, 0], [2, 2], [5, 5]]), 3)
    np.testing.assert_array_equal(devs[2], [0, 0])
    assert np.isnan(centers[1]).all()


@given(st.lists(st.floats(-1, 1), min_size=2, max_size=12), st.integers(1, 3), st.randoms())
def test_cluster_negation_and_reordering(values, k, rnd):
    f = np.array(values)
    k = min(k, len(f))
    pos = np.column_stack([np.arange(len(f)), np.arange(len(f)) ** 2]).astype(float)
    a = spectral_cluster(f, k, pos)
    b = spectral_cluster(-f, k, pos)
    part = lambda lab: {frozenset(np.flatnonzero(lab == c)) for c in set(lab.tolist())}
    # negation mirrors the quantile initialisation; ties may resolve differently
    if len(set(values)) == len(values):
        assert part(a.labels) == part(b.labels)
    perm = list(range(len(f)))
    rnd.shuffle(perm)
    c = spectral_cluster(f[perm], k, pos[perm])
    stats = lambda s, labels: sorted(
        (tuple(np.round(s.centers[l], 9)), tuple(np.round(s.deviations[l], 9))) for l in set(labels.tolist())
    )
    assert stats(a, a.labels) == stats(c, c.labels)


def test_suggest_n_clusters():
    assert suggest_n_clusters([0, 0, 1.0, 2.0]) == 2
    assert suggest_n_clusters([0, 0.01, 1.0, 1.1]) == 2


def test_bound_no_perturbation():
    lap = path_laplacian(4)
    r = perturbation_bound(lap, lap.copy(), 1)
    assert r.numerator == 0.0 and r.phi == 0.0


def test_bound_repeated_eigenvalue_is_degenerate():
    r = perturbation_bound(np.eye(3), np.eye(3), 1)
    assert r.degenerate and math.isinf(r.phi)
    assert r.to_dict()["phi"] == "inf"


def test_bound_pads_smaller_matrix():
    lap = path_laplacian(2, 0.5)
    big = np.zeros((3, 3))
    big[:2, :2] = lap
    r = perturbation_bound(lap, big, 1)
    assert r.numerator == 0.0
    with pytest.raises(ValueError):
        perturbation_bound(big, lap, 1)
    with pytest.raises(ValueError, match="symmetric"):
        perturbation_bound(np.array([[0.0, 1.0], [0.0, 0.0]]), np.eye(2), 0)


def test_bound_random_6x6_laplacian_pair():
    rng = np.random.default_rng(0)
    adj = np.triu(rng.uniform(0, 1, (6, 6)) * (rng.uniform(size=(6, 6)) < 0.6), 1)
    a = laplacian_from_adjacency(adj + adj.T)
    d = np.zeros(6)
    d[0], d[3] = 1.0, -1.0
    b = a + 0.05 * np.outer(d, d)
    r = perturbation_bound(a, b, 1)
    assert r.phi < math.pi / 2
    # reference angle from extended-precision decompositions
    _, va = mp_eigh(a)
    _, vb = mp_eigh(b)
    angle = principal_angle(va[:, 1], vb[:, 1])
    assert angle == pytest.approx(eigenvector_angle(a, b, 1), abs=1e-9)
    assert angle <= r.phi


def test_literal_angle_bound_has_counterexamples():
    """The angle itself can exceed ||E|| / gap when the gap is read off the
    unperturbed spectrum; only the sin(2 theta) form is guaranteed."""
    a = np.array([[0.405418, 0.886738, 0.432897], [0.886738, -0.505017, -0.218507], [0.432897, -0.218507, 1.287437]])
    b = np.array([[0.492041, 1.125957, 0.232787], [1.125957, -0.543202, -0.42352], [0.232787, -0.42352, 0.989518]])
    r = perturbation_bound(a, b, 1)
    angle = eigenvector_angle(a, b, 1)
    assert r.phi == pytest.approx(0.6496192641938386, rel=1e-9)
    assert angle == pytest.approx(1.3662399668801073, rel=1e-9)
    assert angle > r.phi
    assert 0.5 * math.sin(2 * angle) <= r.phi


@given(st.integers(0, 2**32 - 1), st.integers(2, 10), st.integers(1, 3))
def test_sin2theta_bound_on_laplacian_updates(seed, n, n_new):
    rng = np.random.default_rng(seed)
    adj = np.triu(rng.uniform(0, 1, (n, n)) * (rng.uniform(size=(n, n)) < 0.5), 1)
    a = laplacian_from_adjacency(adj + adj.T)
    b = a.copy()
    for _ in range(n_new):
        i, k = rng.choice(n, 2, replace=False)
        d = np.zeros(n)
        d[i], d[k] = 1.0, -1.0
        b += math.exp(-rng.uniform(0, 10)) * np.outer(d, d)
    j = int(rng.integers(0, n))
    r = perturbation_bound(a, b, j)
    if r.degenerate:
        return
    angle = eigenvector_angle(a, b, j)
    assert 0.5 * math.sin(2 * angle) <= r.phi + 1e-9


def test_phi_estimate_examples():
    assert phi_estimate(270, 0.049) == pytest.approx(0.805, abs=0.01)
    assert phi_estimate(1, 0.3) == 0.3
    assert phi_estimate(100, 0.13) == pytest.approx(1.30)
    with pytest.raises(ValueError):
        phi_estimate(0, 0.1)


@given(st.integers(1, 500), st.integers(1, 500), st.floats(0, 1), st.floats(0, 1))
def test_phi_estimate_monotone(n1, n2, d1, d2):
    lo_n, hi_n = sorted((n1, n2))
    lo_d, hi_d = sorted((d1, d2))
    assert phi_estimate(lo_n, lo_d) <= phi_estimate(hi_n, lo_d) <= phi_estimate(hi_n, hi_d)


def test_t_fde_examples():
    assert t_fde(1.50, 10, 10) == pytest.approx(1.50, abs=1e-12)
    assert t_fde(0.80, 10, 30) == pytest.approx(2.40)
    assert t_fde(0.0, 10, 30) == 0.0
    with pytest.raises(ValueError):
        t_fde(1.0, 0, 10)


def test_t_fde_table_deviations():
    rows = {r["dataset"]: r for r in t_fde_table()}
    assert len(rows) == len(UPPER_BOUND_TABLE)
    assert rows["Apolloscape"]["t_fde"] == 1.5
    assert rows["Lyft Level 5"]["t_fde"] == pytest.approx(2.40)
    assert rows["Argoverse"]["t_fde"] == pytest.approx(1.92)
    assert all(r["relative_deviation"] <= 0.03 for r in rows.values())


def test_bound_report_dict():
    r = BoundReport(0.5, 0.1, 0.2, 4, 0.05)
    assert r.to_dict()["phi"] == 0.5
