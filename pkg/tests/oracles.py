"""Independent reference implementations used only by the tests.

Each oracle takes a different route from the package code: mpmath for
eigenproblems, scipy.stats for the bivariate density, explicit loops for the
LSTM recurrence and the accumulated graph.
"""

import math

import mpmath
import numpy as np
from scipy import stats


def mp_eigh(matrix, dps=40):
    """Full symmetric eigendecomposition in extended precision."""
    mpmath.mp.dps = dps
    a = mpmath.matrix(np.asarray(matrix, dtype=float).tolist())
    w, v = mpmath.eigsy(a)
    order = sorted(range(len(w)), key=lambda i: w[i])
    vals = np.array([float(w[i]) for i in order])
    vecs = np.array([[float(v[r, i]) for i in order] for r in range(v.rows)])
    return vals, vecs


def bivariate_nll(mu, sigma, rho, target):
    cov = [
        [sigma[0] ** 2, rho * sigma[0] * sigma[1]],
        [rho * sigma[0] * sigma[1], sigma[1] ** 2],
    ]
    return -float(stats.multivariate_normal(mean=mu, cov=cov).logpdf(target))


def lstm_step_loops(W, b, x, h, c):
    """Gate order (input, forget, candidate, output) over the stacked [x, h] input."""
    H = len(h)
    z = list(x) + list(h)
    pre = [b[r] + sum(W[r][k] * z[k] for k in range(len(z))) for r in range(4 * H)]
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    h_new, c_new = [], []
    for u in range(H):
        i = sig(pre[u])
        f = sig(pre[H + u])
        g = math.tanh(pre[2 * H + u])
        o = sig(pre[3 * H + u])
        cu = f * c[u] + i * g
        c_new.append(cu)
        h_new.append(o * math.tanh(cu))
    return np.array(h_new), np.array(c_new)


def accumulate_edges(frames, speeds, mu):
    """Replay the admission rule with plain dicts.

    frames: list of {agent: (x, y)}; speeds: list of {agent: speed}.
    Returns (agents in arrival order, {frozenset pair: weight}).
    """
    order, history, weights = [], {}, {}
    for pos, spd in zip(frames, speeds):
        for a in sorted(pos):
            if a not in history:
                history[a] = set()
                order.append(a)
        for ego in sorted(pos):
            for other in sorted(pos):
                if ego == other:
                    continue
                d = math.dist(pos[ego], pos[other])
                if d < mu and spd[other] < spd[ego] and other not in history[ego]:
                    history[ego].add(other)
                    key = frozenset((ego, other))
                    weights[key] = weights.get(key, 0.0) + math.exp(-d)
    return order, weights


def laplacian_from_edges(order, weights, size, unit_diagonal=False):
    idx = {a: i for i, a in enumerate(order)}
    L = np.zeros((size, size))
    for pair, w in weights.items():
        i, j = (idx[a] for a in pair)
        L[i, i] += w
        L[j, j] += w
        L[i, j] -= w
        L[j, i] -= w
    if unit_diagonal:
        for i in range(len(order)):
            L[i, i] += 1.0
    return L


def random_scene_frames(rng, n_agents=None, n_frames=None, extent=25.0):
    """Random agents doing noisy straight runs; returns (frames, speeds) as
    lists of dicts keyed by agent plus the same data as scene rows."""
    n = int(rng.integers(1, 10)) if n_agents is None else n_agents
    t = int(rng.integers(2, 12)) if n_frames is None else n_frames
    start = rng.uniform(0, extent, size=(n, 2))
    vel = rng.uniform(-2.0, 2.0, size=(n, 2))
    enter = rng.integers(0, t, size=n)
    frames, speeds, rows = [], [], []
    for f in range(t):
        pos = {}
        for a in range(n):
            if f >= enter[a]:
                pos[a] = tuple(start[a] + vel[a] * f + rng.normal(0, 0.3, 2))
        frames.append(pos)
        speeds.append({a: float(rng.uniform(0, 15)) for a in pos})
        rows.extend((f, a, float(x), float(y)) for a, (x, y) in pos.items())
    return frames, speeds, rows


def random_gradient_instance(rng, regularized, steps=4, hidden=3, batch=2):
    """Small random model and batch for finite-difference checks."""
    from spectral_traffic.seq_model import LossSpec, SequenceBatch, init_weights

    w = init_weights(2, hidden, "gaussian", rng)
    for v in w.params.values():
        v += rng.normal(0, 0.3, v.shape)
    enc = rng.normal(size=(batch, 3, 2))
    dec = rng.normal(size=(batch, steps, 2))
    tgt = rng.normal(size=(batch, steps, 2))
    if regularized:
        data = SequenceBatch(enc, dec, tgt, rng.normal(size=(batch, steps, 2)), rng.uniform(0.2, 2, (batch, steps, 2)))
        spec = LossSpec("nll", float(rng.uniform(0.1, 1)), float(rng.uniform(0.1, 1)))
    else:
        data = SequenceBatch(enc, dec, tgt)
        spec = LossSpec("nll")
    return w, data, spec


def gradient_relative_errors(weights, batch, spec, step=1e-5):
    """Per-tensor ||analytic - central FD|| / max(||analytic||, ||FD||)."""
    from spectral_traffic.seq_model import backprop, batch_loss

    _, grads = backprop(weights, batch, spec)
    errors = {}
    for name, param in weights.params.items():
        num = np.zeros_like(param)
        for idx in np.ndindex(param.shape):
            old = param[idx]
            param[idx] = old + step
            up = batch_loss(weights, batch, spec)
            param[idx] = old - step
            down = batch_loss(weights, batch, spec)
            param[idx] = old
            num[idx] = (up - down) / (2 * step)
        scale = max(np.linalg.norm(grads[name]), np.linalg.norm(num), 1e-12)
        errors[name] = float(np.linalg.norm(grads[name] - num) / scale)
    return errors
