"""Dual-branch graph network scoring every edge of a background grid.

Node branch: MLP encoder -> two graph convolutions -> global mean pool ->
context MLP.  Edge branch: MLP encoder.  The context vector is appended to
every edge embedding and a scorer MLP with a sigmoid head yields one score
in (0, 1) per edge.  Forward and backward passes are written out by hand
in numpy (float64).
"""

from __future__ import annotations

import json
import threading
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .features import FeatureStats, GraphFeatures

FORMAT_VERSION = 1
LN_EPS = 1e-5


class ModelFormatError(ValueError):
    """A model file is unreadable, truncated, or inconsistent."""


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 128
    scorer: tuple[int, ...] = (512, 256, 128)
    node_in: int = 2
    edge_in: int = 8
    dropout: float = 0.1
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ("relu", "sigmoid"):
            raise ValueError(f"activation must be 'relu' or 'sigmoid', got {self.activation!r}")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    h = cfg.hidden
    shapes = {
        "node_enc.w1": (cfg.node_in, h), "node_enc.b1": (h,),
        "node_enc.w2": (h, h), "node_enc.b2": (h,),
        "node_enc.ln_g": (h,), "node_enc.ln_b": (h,),
        "conv1.w": (h, h), "conv1.b": (h,),
        "conv2.w": (h, h), "conv2.b": (h,),
        "context.w": (h, h), "context.b": (h,),
        "edge_enc.w1": (cfg.edge_in, h), "edge_enc.b1": (h,),
        "edge_enc.w2": (h, h), "edge_enc.b2": (h,),
        "edge_enc.ln_g": (h,), "edge_enc.ln_b": (h,),
    }
    dims = (2 * h, *cfg.scorer, 1)
    for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:]), 1):
        shapes[f"scorer.w{i}"] = (d_in, d_out)
        shapes[f"scorer.b{i}"] = (d_out,)
    return shapes


@dataclass
class GcnModel:
    config: ModelConfig
    params: dict[str, np.ndarray]
    stats: FeatureStats | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def trained(self) -> bool:
        return self.stats is not None

    def n_scorer_layers(self) -> int:
        return len(self.config.scorer) + 1

    def check_shapes(self) -> None:
        want = parameter_shapes(self.config)
        if set(want) != set(self.params):
            raise ModelFormatError(f"parameter names differ: {sorted(set(want) ^ set(self.params))}")
        for k, s in want.items():
            if self.params[k].shape != s:
                raise ModelFormatError(f"{k}: expected shape {s}, got {self.params[k].shape}")


def init_model(config: ModelConfig | None = None, seed: int = 0, zero_output: bool = False) -> GcnModel:
    """Uniform ``+-1/sqrt(fan_in)`` initialization; LayerNorm gains start at one."""
    cfg = config or ModelConfig()
    rng = np.random.default_rng(seed)
    shapes = parameter_shapes(cfg)
    params = {}
    for name, shape in shapes.items():
        if name.endswith("ln_g"):
            params[name] = np.ones(shape)
        elif name.endswith("ln_b"):
            params[name] = np.zeros(shape)
        else:
            fan_in = shapes[name.replace(".b", ".w")][0]
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
    if zero_output:
        last = len(cfg.scorer) + 1
        params[f"scorer.w{last}"][:] = 0.0
        params[f"scorer.b{last}"][:] = 0.0
    return GcnModel(cfg, params)


# -- graph operator --------------------------------------------------------
def normalized_adjacency(edge_index: np.ndarray, n_nodes: int) -> sparse.csr_matrix:
    """``D^-1/2 (A + I) D^-1/2`` for the undirected graph ``edge_index``."""
    e = np.asarray(edge_index, dtype=np.int64).reshape(-1, 2)
    rows = np.concatenate([e[:, 0], e[:, 1], np.arange(n_nodes)])
    cols = np.concatenate([e[:, 1], e[:, 0], np.arange(n_nodes)])
    a = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_nodes, n_nodes)).tocsr()
    a.data[:] = 1.0  # collapse duplicate edges
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv = 1.0 / np.sqrt(deg)
    return (sparse.diags(inv) @ a @ sparse.diags(inv)).tocsr()


# -- primitives --------------------------------------------------------------
def _act(x, kind):
    if kind == "relu":
        return np.maximum(x, 0.0)
    return 1.0 / (1.0 + np.exp(-x))


def _act_back(dy, pre, out, kind):
    if kind == "relu":
        return dy * (pre > 0)
    return dy * out * (1.0 - out)


def _layer_norm(x, g, b):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def _layer_norm_back(dy, g, cache):
    xhat, inv = cache
    dg = (dy * xhat).sum(axis=0)
    db = dy.sum(axis=0)
    dxhat = dy * g
    n = xhat.shape[1]
    dx = inv / n * (n * dxhat - dxhat.sum(axis=1, keepdims=True) - xhat * (dxhat * xhat).sum(axis=1, keepdims=True))
    return dx, dg, db


def _dropout_mask(shape, rate, rng):
    if rng is None or rate == 0:
        return None
    return (rng.random(shape) >= rate) / (1.0 - rate)


def _encoder(x, P, prefix, kind, rate, rng):
    h1 = x @ P[prefix + ".w1"]
    h1 += P[prefix + ".b1"]
    a1 = _act(h1, kind)
    mask = _dropout_mask(a1.shape, rate, rng)
    d1 = a1 if mask is None else a1 * mask
    h2 = d1 @ P[prefix + ".w2"]
    h2 += P[prefix + ".b2"]
    out, ln = _layer_norm(h2, P[prefix + ".ln_g"], P[prefix + ".ln_b"])
    return out, (x, h1, a1, mask, d1, ln)


def _encoder_back(dout, P, prefix, kind, cache, grads):
    x, h1, a1, mask, d1, ln = cache
    dh2, grads[prefix + ".ln_g"], grads[prefix + ".ln_b"] = _layer_norm_back(dout, P[prefix + ".ln_g"], ln)
    grads[prefix + ".w2"] = d1.T @ dh2
    grads[prefix + ".b2"] = dh2.sum(axis=0)
    dd1 = dh2 @ P[prefix + ".w2"].T
    da1 = dd1 if mask is None else dd1 * mask
    dh1 = _act_back(da1, h1, a1, kind)
    grads[prefix + ".w1"] = x.T @ dh1
    grads[prefix + ".b1"] = dh1.sum(axis=0)


# -- network -------------------------------------------------------------------
def forward(model: GcnModel, features: GraphFeatures, adjacency=None, training: bool = False, rng=None):
    """Edge scores in (0, 1) and the activation cache for :func:`backward`.

    ``features`` must already be normalized.  Dropout is applied only when
    ``training`` is true and an ``rng`` is supplied.
    """
    P, cfg = model.params, model.config
    if features.node.shape[1] != cfg.node_in or features.edge.shape[1] != cfg.edge_in:
        raise ValueError(f"feature widths {features.node.shape[1]}/{features.edge.shape[1]} "
                         f"do not match model {cfg.node_in}/{cfg.edge_in}")
    if len(features.edge) != len(features.edge_index):
        raise ValueError("edge feature rows and edge_index disagree")
    kind = cfg.activation
    rate = cfg.dropout if training else 0.0
    rng = rng if training else None
    A = adjacency if adjacency is not None else normalized_adjacency(features.edge_index, features.n_nodes)

    n0, node_cache = _encoder(features.node, P, "node_enc", kind, rate, rng)
    ax1 = A @ n0
    q1 = ax1 @ P["conv1.w"] + P["conv1.b"]
    x1 = _act(q1, kind)
    ax2 = A @ x1
    q2 = ax2 @ P["conv2.w"] + P["conv2.b"]
    x2 = _act(q2, kind)
    pooled = x2.mean(axis=0, keepdims=True)
    qc = pooled @ P["context.w"] + P["context.b"]
    ctx = _act(qc, kind)

    e0, edge_cache = _encoder(features.edge, P, "edge_enc", kind, rate, rng)
    # the first scorer layer sees [e0, ctx]; ctx is shared by every edge, so
    # its half of the product is one row broadcast over the edges
    hid = e0.shape[1]
    layers = []
    h = e0
    n_layers = model.n_scorer_layers()
    for i in range(1, n_layers + 1):
        w, b = P[f"scorer.w{i}"], P[f"scorer.b{i}"]
        if i == 1:
            pre = h @ w[:hid]
            pre += ctx @ w[hid:] + b
        else:
            pre = h @ w
            pre += b
        out = _act(pre, kind) if i < n_layers else 1.0 / (1.0 + np.exp(-pre))
        layers.append((h, pre, out))
        h = out
    scores = h[:, 0]
    cache = dict(A=A, node=node_cache, n0=n0, ax1=ax1, q1=q1, x1=x1, ax2=ax2, q2=q2, x2=x2,
                 pooled=pooled, qc=qc, ctx=ctx, edge=edge_cache, layers=layers, kind=kind)
    return scores, cache


def backward(model: GcnModel, cache, dscores) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. all parameters, given ``dloss/dscores``."""
    P = model.params
    kind = cache["kind"]
    grads: dict[str, np.ndarray] = {}
    layers = cache["layers"]
    n_layers = len(layers)

    dh = dscores[:, None]
    for i in range(n_layers, 0, -1):
        h, pre, out = layers[i - 1]
        if i == n_layers:
            dpre = dh * out * (1.0 - out)  # sigmoid head
        else:
            dpre = _act_back(dh, pre, out, kind)
        grads[f"scorer.b{i}"] = dpre.sum(axis=0)
        if i > 1:
            grads[f"scorer.w{i}"] = h.T @ dpre
            dh = dpre @ P[f"scorer.w{i}"].T

    # first scorer layer: input is the edge embedding h plus the broadcast context
    w1 = P["scorer.w1"]
    hid = h.shape[1]
    dsum = grads["scorer.b1"][None, :]
    grads["scorer.w1"] = np.concatenate([h.T @ dpre, cache["ctx"].T @ dsum], axis=0)
    de0 = dpre @ w1[:hid].T
    dctx = dsum @ w1[hid:].T
    _encoder_back(de0, P, "edge_enc", kind, cache["edge"], grads)

    dqc = _act_back(dctx, cache["qc"], cache["ctx"], kind)
    grads["context.w"] = cache["pooled"].T @ dqc
    grads["context.b"] = dqc.sum(axis=0)
    dpooled = dqc @ P["context.w"].T
    n_nodes = cache["x2"].shape[0]
    dx2 = np.broadcast_to(dpooled / n_nodes, cache["x2"].shape)

    A = cache["A"]
    dq2 = _act_back(dx2, cache["q2"], cache["x2"], kind)
    grads["conv2.w"] = cache["ax2"].T @ dq2
    grads["conv2.b"] = dq2.sum(axis=0)
    dx1 = A.T @ (dq2 @ P["conv2.w"].T)
    dq1 = _act_back(dx1, cache["q1"], cache["x1"], kind)
    grads["conv1.w"] = cache["ax1"].T @ dq1
    grads["conv1.b"] = dq1.sum(axis=0)
    dn0 = A.T @ (dq1 @ P["conv1.w"].T)
    _encoder_back(dn0, P, "node_enc", kind, cache["node"], grads)
    return grads


def mse_loss(scores, labels) -> tuple[float, np.ndarray]:
    diff = scores - labels
    return float(np.mean(diff * diff)), 2.0 * diff / len(diff)


# -- inference ---------------------------------------------------------------------
_scratch = threading.local()


def _buffer(key, rows, cols) -> np.ndarray:
    """Grow-only per-thread scratch array viewed as ``(rows, cols)``.

    Reusing the same pages across calls avoids faulting in fresh memory for
    every multi-megabyte activation, which otherwise costs about as much as
    the matrix products on grids of a few thousand edges.
    """
    store = getattr(_scratch, "store", None)
    if store is None:
        store = _scratch.store = {}
    buf = store.get(key)
    if buf is None or buf.size < rows * cols:
        buf = store[key] = np.empty(max(rows * cols, 1))
    return buf[: rows * cols].reshape(rows, cols)


def _act_(x, kind):
    """In-place version of :func:`_act`."""
    if kind == "relu":
        np.maximum(x, 0.0, out=x)
    else:
        np.negative(x, out=x)
        np.exp(x, out=x)
        x += 1.0
        np.reciprocal(x, out=x)
    return x


def _dense(x, w, b, key, kind=None):
    out = np.matmul(x, w, out=_buffer(key, x.shape[0], w.shape[1]))
    out += b
    return out if kind is None else _act_(out, kind)


def _encode(x, P, prefix, kind):
    h1 = _dense(x, P[prefix + ".w1"], P[prefix + ".b1"], prefix + "1", kind)
    h2 = _dense(h1, P[prefix + ".w2"], P[prefix + ".b2"], prefix + "2")
    # layer norm, same operation order as _layer_norm
    h2 -= h2.mean(axis=1, keepdims=True)
    sq = np.square(h2, out=h1)
    inv = 1.0 / np.sqrt(sq.mean(axis=1, keepdims=True) + LN_EPS)
    h2 *= inv
    h2 *= P[prefix + ".ln_g"]
    h2 += P[prefix + ".ln_b"]
    return h2


def infer(model: GcnModel, features: GraphFeatures, adjacency=None) -> np.ndarray:
    """Inference-only pass over normalized features; equals ``forward(...)[0]``.

    Keeps no activation cache and works in reusable scratch buffers.
    """
    P, cfg = model.params, model.config
    if features.node.shape[1] != cfg.node_in or features.edge.shape[1] != cfg.edge_in:
        raise ValueError(f"feature widths {features.node.shape[1]}/{features.edge.shape[1]} "
                         f"do not match model {cfg.node_in}/{cfg.edge_in}")
    if len(features.edge) != len(features.edge_index):
        raise ValueError("edge feature rows and edge_index disagree")
    kind = cfg.activation
    A = adjacency if adjacency is not None else normalized_adjacency(features.edge_index, features.n_nodes)

    x = _encode(features.node, P, "node_enc", kind)
    x = _dense(A @ x, P["conv1.w"], P["conv1.b"], "conv1", kind)
    x = _dense(A @ x, P["conv2.w"], P["conv2.b"], "conv2", kind)
    ctx = _act(x.mean(axis=0, keepdims=True) @ P["context.w"] + P["context.b"], kind)

    h = _encode(features.edge, P, "edge_enc", kind)
    hid = h.shape[1]
    n_layers = model.n_scorer_layers()
    for i in range(1, n_layers + 1):
        w, b = P[f"scorer.w{i}"], P[f"scorer.b{i}"]
        if i == 1:
            out = _dense(h, w[:hid], ctx @ w[hid:] + b, "scorer1")
        else:
            out = _dense(h, w, b, f"scorer{i}")
        h = _act_(out, kind) if i < n_layers else _act_(out, "sigmoid")
    return h[:, 0].copy()


def predict(model: GcnModel, features: GraphFeatures) -> np.ndarray:
    """Deterministic inference on raw (unnormalized) features."""
    if not model.trained:
        raise ValueError("model has no feature statistics; train it first")
    return infer(model, features.normalized(model.stats))


# -- persistence ---------------------------------------------------------------
def save_model(model: GcnModel, path) -> None:
    """Write a versioned ``.npz`` container (named tensors + JSON header)."""
    model.check_shapes()
    header = {
        "format_version": FORMAT_VERSION,
        "config": {**asdict(model.config), "scorer": list(model.config.scorer)},
        "shapes": {k: list(v.shape) for k, v in model.params.items()},
        "metadata": model.metadata,
        "has_stats": model.stats is not None,
    }
    arrays = {f"param/{k}": v for k, v in model.params.items()}
    if model.stats is not None:
        for k, v in asdict(model.stats).items():
            arrays[f"stats/{k}"] = v
    arrays["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    with open(Path(path), "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path) -> GcnModel:
    try:
        with np.load(Path(path), allow_pickle=False) as data:
            header = json.loads(bytes(data["header"]).decode())
            if header.get("format_version") != FORMAT_VERSION:
                raise ModelFormatError(f"unsupported model format version {header.get('format_version')}")
            cfg = header["config"]
            config = ModelConfig(**{**cfg, "scorer": tuple(cfg["scorer"])})
            params = {k[len("param/"):]: data[k].copy() for k in data.files if k.startswith("param/")}
            stats = None
            if header["has_stats"]:
                stats = FeatureStats(**{f: data[f"stats/{f}"].copy() for f in
                                        ("node_mean", "node_std", "edge_mean", "edge_std")})
    except (zipfile.BadZipFile, EOFError, KeyError, OSError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"{path}: unreadable model file ({exc})") from None
    for k, s in header["shapes"].items():
        if k not in params or list(params[k].shape) != s:
            raise ModelFormatError(f"{path}: tensor {k} does not match its declared shape {s}")
    model = GcnModel(config, params, stats, header.get("metadata", {}))
    model.check_shapes()
    return model
