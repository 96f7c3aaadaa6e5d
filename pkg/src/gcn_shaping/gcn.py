"""Two-layer graph convolutional network written against numpy.

    Y = softmax(T ReLU(T X W0) W1)

Column 1 of ``Y`` is the "optimal" class; its probability is the potential.
Training minimises

    L = mean_b BCE(p_b, Y[b, 1]) + eta * c * sum_{v,w} A_vw ||Y_w - Y_v||^2

where ``b`` runs over base-case nodes with soft labels ``p_b = sigmoid(r_b)``.
With ``prop_norm="edges"`` (default) ``c = 1 / sum(A)``, which keeps eta on the
same scale as the graph grows; ``prop_norm="sum"`` uses ``c = 1``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np
from scipy.special import expit, log_softmax

from ._validation import check_finite
from .graph import SpectralOps, TrajectoryGraph, build_spectral

OPTIMAL = 1


@dataclass
class GcnModel:
    input_dim: int
    hidden: int = 64
    eta: float = 10.0
    lr: float = 1e-2
    n_iter: int = 200
    seed: Optional[int] = 0
    optimizer: str = "adam"
    prop_norm: str = "edges"
    W0: np.ndarray = field(default=None, repr=False)
    W1: np.ndarray = field(default=None, repr=False)
    _adam: dict = field(default_factory=dict, repr=False)
    last_loss: Optional[float] = field(default=None, repr=False)

    def __post_init__(self):
        if self.optimizer not in ("adam", "gd"):
            raise ValueError(f"optimizer must be 'adam' or 'gd', got {self.optimizer!r}")
        if self.prop_norm not in ("edges", "sum"):
            raise ValueError(f"prop_norm must be 'edges' or 'sum', got {self.prop_norm!r}")
        if self.W0 is None or self.W1 is None:
            self.reset_weights()

    def reset_weights(self, rng=None):
        rng = np.random.default_rng(self.seed) if rng is None else rng
        self.W0 = glorot_uniform(rng, self.input_dim, self.hidden)
        self.W1 = glorot_uniform(rng, self.hidden, 2)
        self._adam = {}

    @property
    def weights(self):
        return self.W0, self.W1


def glorot_uniform(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class BaseCaseSet(NamedTuple):
    nodes: np.ndarray   # node indices into the SpectralOps ordering
    labels: np.ndarray  # p(O=1|s) in [0, 1]


class Cache(NamedTuple):
    TX: np.ndarray
    Z0: np.ndarray
    H: np.ndarray
    TH: np.ndarray
    Z1: np.ndarray
    Y: np.ndarray


def one_hot_features(ops: SpectralOps, input_dim: int) -> np.ndarray:
    """Identity features: node ``i`` gets the indicator of its state id."""
    X = np.zeros((ops.num_nodes, input_dim))
    X[np.arange(ops.num_nodes), ops.states] = 1.0
    return X


def _softmax2(Z1):
    # two-class softmax: p_1 = sigmoid(z_1 - z_0)
    d = Z1[:, 1] - Z1[:, 0]
    return np.column_stack((expit(-d), expit(d)))


def _forward_tx(W0, W1, T, TX) -> Cache:
    Z0 = TX @ W0
    H = np.maximum(Z0, 0.0)
    TH = T @ H
    Z1 = TH @ W1
    return Cache(TX, Z0, H, TH, Z1, _softmax2(Z1))


def _forward(W0, W1, T, X) -> Cache:
    return _forward_tx(W0, W1, T, T @ X)


def forward(model: GcnModel, ops: SpectralOps, x: np.ndarray) -> np.ndarray:
    """Per-node class distribution, shape (nodes, 2)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (ops.num_nodes, model.W0.shape[0]):
        raise ValueError(f"features must have shape {(ops.num_nodes, model.W0.shape[0])}, got {x.shape}")
    return _forward(model.W0, model.W1, ops.t_hat, x).Y


def select_base_cases(g: TrajectoryGraph, ops: Optional[SpectralOps] = None) -> BaseCaseSet:
    """Episode starts, episode ends and rewarding states, labelled sigmoid(r)."""
    if len(g) == 0:
        raise ValueError("graph has no nodes")
    node_of = g.index if ops is None else ops.node_of()
    states = sorted(g.first | g.last | set(g.rewards))
    nodes = np.array([node_of[s] for s in states], dtype=int)
    labels = expit(np.array([g.rewards.get(s, 0.0) for s in states], dtype=float))
    return BaseCaseSet(nodes, labels)


def _prop_scale(model: GcnModel, A: np.ndarray) -> float:
    if model.prop_norm == "sum":
        return 1.0
    total = A.sum()
    return 1.0 / total if total > 0 else 1.0


def _loss_terms(cache: Cache, A: np.ndarray, bases: BaseCaseSet, scale: float = 1.0):
    logp = log_softmax(cache.Z1[bases.nodes], axis=1)
    p = bases.labels
    sup = -np.mean(p * logp[:, OPTIMAL] + (1.0 - p) * logp[:, 1 - OPTIMAL])
    Y = cache.Y
    sq = np.sum(Y * Y, axis=1)
    deg = A.sum(axis=1)
    prop = 2.0 * (deg @ sq) - 2.0 * np.sum(A * (Y @ Y.T))
    return sup, max(prop, 0.0) * scale


def loss(model: GcnModel, ops: SpectralOps, x, bases: BaseCaseSet, eta: Optional[float] = None):
    """Return ``(total, supervised, propagation)``."""
    if len(bases.nodes) == 0:
        raise ValueError("empty base-case set")
    eta = model.eta if eta is None else eta
    cache = _forward(model.W0, model.W1, ops.t_hat, np.asarray(x, dtype=float))
    sup, prop = _loss_terms(cache, ops.adjacency, bases, _prop_scale(model, ops.adjacency))
    return sup + eta * prop, sup, prop


def _laplacian(A):
    return np.diag(A.sum(axis=1)) - A


def _backward(W1, T, A, cache: Cache, bases: BaseCaseSet, eta: float, lap=None):
    Y = cache.Y
    n_base = len(bases.nodes)
    target = np.zeros((n_base, 2))
    target[:, OPTIMAL] = bases.labels
    target[:, 1 - OPTIMAL] = 1.0 - bases.labels
    dZ1 = np.zeros_like(Y)
    np.add.at(dZ1, bases.nodes, (Y[bases.nodes] - target) / n_base)
    if eta:
        lap = _laplacian(A) if lap is None else lap
        dY = 4.0 * eta * (lap @ Y)
        dZ1 += Y * (dY - np.sum(dY * Y, axis=1, keepdims=True))
    dW1 = cache.TH.T @ dZ1
    dH = T.T @ (dZ1 @ W1.T)
    dZ0 = dH * (cache.Z0 > 0)
    dW0 = cache.TX.T @ dZ0
    return dW0, dW1


def grad(model: GcnModel, ops: SpectralOps, x, bases: BaseCaseSet, eta: Optional[float] = None):
    """Analytic ``(dL/dW0, dL/dW1)``."""
    if len(bases.nodes) == 0:
        raise ValueError("empty base-case set")
    eta = model.eta if eta is None else eta
    cache = _forward(model.W0, model.W1, ops.t_hat, np.asarray(x, dtype=float))
    scale = _prop_scale(model, ops.adjacency)
    dW0, dW1 = _backward(model.W1, ops.t_hat, ops.adjacency, cache, bases, eta * scale)
    check_finite(dW0, "dL/dW0")
    check_finite(dW1, "dL/dW1")
    return dW0, dW1


def fit_weights(model: GcnModel, ops: SpectralOps, x, bases: BaseCaseSet, n_iter: Optional[int] = None,
                record: bool = False):
    """Run ``n_iter`` optimisation steps from the current weights.

    Plain gradient descent halves the step whenever the loss would increase, so
    the recorded loss sequence never goes up.  Adam keeps its moment estimates
    on the model, so repeated calls continue the same optimisation.  A
    non-finite loss restores the weights held on entry and raises.
    """
    n_iter = model.n_iter if n_iter is None else n_iter
    T, A = ops.t_hat, ops.adjacency
    eta = model.eta * _prop_scale(model, A)
    lap = _laplacian(A)
    TX = T @ np.asarray(x, dtype=float)
    W0, W1 = model.W0.copy(), model.W1.copy()
    saved = (model.W0, model.W1, dict(model._adam))
    history = []

    def total(c):
        s, p = _loss_terms(c, A, bases)
        return s + eta * p

    def fail(msg):
        model.W0, model.W1, model._adam = saved
        raise FloatingPointError(msg)

    cache = _forward_tx(W0, W1, T, TX)
    lr = model.lr
    if model.optimizer == "gd":
        cur = total(cache)
        for _ in range(n_iter):
            if not np.isfinite(cur):
                fail("GCN loss diverged; weights restored")
            if record:
                history.append(cur)
            g0, g1 = _backward(W1, T, A, cache, bases, eta, lap)
            while True:
                n0, n1 = W0 - lr * g0, W1 - lr * g1
                new_cache = _forward_tx(n0, n1, T, TX)
                new = total(new_cache)
                if new <= cur or lr < 1e-12:
                    break
                lr *= 0.5
            if new > cur:
                break
            W0, W1, cache, cur = n0, n1, new_cache, new
    else:
        st = model._adam
        if st.get("shape") != (W0.shape, W1.shape):
            st.clear()
            st.update(shape=(W0.shape, W1.shape), t=0, m0=np.zeros_like(W0), v0=np.zeros_like(W0),
                      m1=np.zeros_like(W1), v1=np.zeros_like(W1))
        b1, b2, eps = 0.9, 0.999, 1e-8
        for _ in range(n_iter):
            if record:
                history.append(total(cache))
            g0, g1 = _backward(W1, T, A, cache, bases, eta, lap)
            st["t"] += 1
            step = lr / (1 - b1 ** st["t"])
            root_c2 = np.sqrt(1 - b2 ** st["t"])
            for W, g, m, v in ((W0, g0, st["m0"], st["v0"]), (W1, g1, st["m1"], st["v1"])):
                m *= b1
                m += (1 - b1) * g
                v *= b2
                g *= g
                g *= 1 - b2
                v += g
                np.sqrt(v, out=g)
                g /= root_c2
                g += eps
                np.divide(m, g, out=g)
                g *= step
                W -= g
            cache = _forward_tx(W0, W1, T, TX)
            if not np.all(np.isfinite(cache.Z1)):
                fail("GCN loss diverged; weights restored")
        cur = total(cache)
    if not (np.all(np.isfinite(W0)) and np.all(np.isfinite(W1)) and np.isfinite(cur)):
        fail("GCN weights became non-finite; weights restored")
    model.W0, model.W1 = W0, W1
    if record:
        history.append(cur)
    return history if record else cur


def train(model: GcnModel, g: TrajectoryGraph, ops: Optional[SpectralOps] = None):
    """Fit on the graph's base cases and return the potential table."""
    from .shaping import GCN_DEFAULT_PHI, PotentialTable

    ops = build_spectral(g) if ops is None else ops
    bases = select_base_cases(g, ops)
    if len(bases.nodes) == 0:
        raise ValueError("graph has no base cases")
    x = one_hot_features(ops, model.input_dim)
    model.last_loss = float(fit_weights(model, ops, x, bases))
    phi_nodes = forward(model, ops, x)[:, OPTIMAL]
    phi = np.full(model.input_dim, GCN_DEFAULT_PHI)
    phi[ops.states] = phi_nodes
    return PotentialTable(phi, default_phi=GCN_DEFAULT_PHI, provenance="gcn",
                          seen=np.isin(np.arange(model.input_dim), ops.states))


# -- checkpoint: int64 header (input_dim, hidden, out) then W0, W1 as float64 row-major
_HEADER = struct.Struct("<qqq")


def save_checkpoint(model: GcnModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(model.W0.shape[0], model.W0.shape[1], model.W1.shape[1]))
        fh.write(np.ascontiguousarray(model.W0, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.W1, dtype="<f8").tobytes())


def load_checkpoint(path, **kw) -> GcnModel:
    raw = Path(path).read_bytes()
    d_in, hidden, out = _HEADER.unpack_from(raw)
    if out != 2:
        raise ValueError(f"checkpoint output width must be 2, got {out}")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if body.size != d_in * hidden + hidden * out:
        raise ValueError("checkpoint size does not match its header")
    W0 = body[: d_in * hidden].reshape(d_in, hidden).copy()
    W1 = body[d_in * hidden:].reshape(hidden, out).copy()
    return GcnModel(input_dim=d_in, hidden=hidden, W0=W0, W1=W1, **kw)
