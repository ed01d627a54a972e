"""Learned coarse registration.

Per-point graph features (edge convolutions over a k-NN graph) are
cross-encoded with attention conditioned on the opposite cloud, turned
into a row-stochastic soft correspondence, and aligned with the
closed-form weighted fit. The efficient attention variant runs in time
linear in the number of points and never materializes an n-by-n matrix.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor, backward
from .errors import DegenerateConfiguration, EmptyDataset, TooFewPoints
from .geometry import KdTree, PointCloud, RigidTransform, kabsch
from .synth import transform_from_normalized

ATTENTION_VARIANTS = ("dot_product", "efficient")


@dataclass(frozen=True)
class EdcpConfig:
    k_neighbors: int = 16
    edge_widths: tuple[int, ...] = (32, 64, 128)
    embed_dim: int = 128
    attention: str = "efficient"
    serial_blocks: int = 2
    heads: int = 2
    leaky_slope: float = 0.01

    def __post_init__(self):
        if self.k_neighbors < 2:
            raise ValueError("k_neighbors must be >= 2")
        if any(w <= 0 for w in self.edge_widths) or not self.edge_widths:
            raise ValueError("edge widths must be positive")
        if self.embed_dim % self.heads != 0:
            raise ValueError("embed_dim must be divisible by heads")
        if self.attention not in ATTENTION_VARIANTS:
            raise ValueError(f"attention must be one of {ATTENTION_VARIANTS}")
        if self.serial_blocks < 1 or self.heads < 1:
            raise ValueError("serial_blocks and heads must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    epochs: int = 30
    batch_size: int = 32
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("invalid training configuration")


@dataclass
class EdcpModel:
    config: EdcpConfig
    store: ParamStore

    def save(self, path):
        cfg = self.config
        meta = ParamStore()
        meta.add(
            "_config",
            np.array(
                [
                    cfg.k_neighbors,
                    len(cfg.edge_widths),
                    *cfg.edge_widths,
                    cfg.embed_dim,
                    ATTENTION_VARIANTS.index(cfg.attention),
                    cfg.serial_blocks,
                    cfg.heads,
                    cfg.leaky_slope,
                ],
                dtype=np.float64,
            ),
        )
        for name in self.store.names():
            meta.add(name, self.store[name].data)
        meta.save(path)

    @classmethod
    def load(cls, path) -> "EdcpModel":
        loaded = ParamStore.load(path)
        raw = loaded["_config"].data
        n_widths = int(raw[1])
        widths = tuple(int(w) for w in raw[2 : 2 + n_widths])
        cfg = EdcpConfig(
            k_neighbors=int(raw[0]),
            edge_widths=widths,
            embed_dim=int(raw[2 + n_widths]),
            attention=ATTENTION_VARIANTS[int(raw[3 + n_widths])],
            serial_blocks=int(raw[4 + n_widths]),
            heads=int(raw[5 + n_widths]),
            leaky_slope=float(raw[6 + n_widths]),
        )
        store = ParamStore()
        for name in loaded.names():
            if name != "_config":
                store.add(name, loaded[name].data)
        return cls(cfg, store)


def init_edcp_model(config: EdcpConfig = EdcpConfig(), seed: int = 0) -> EdcpModel:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xEDC9]))
    store = ParamStore()
    c_prev = 3
    for i, w in enumerate(config.edge_widths):
        store.glorot(f"edge{i}.W", (2 * c_prev, w), rng)
        store.zeros(f"edge{i}.b", (w,))
        c_prev = w
    store.glorot("proj.W", (sum(config.edge_widths), config.embed_dim), rng)
    store.zeros("proj.b", (config.embed_dim,))
    d = config.embed_dim
    for s in range(config.serial_blocks):
        for nm in ("q", "k", "v", "o"):
            store.glorot(f"blk{s}.W{nm}", (d, d), rng)
            store.zeros(f"blk{s}.b{nm}", (d,))
        store.ones(f"blk{s}.ln1.g", (d,))
        store.zeros(f"blk{s}.ln1.b", (d,))
        store.ones(f"blk{s}.ln2.g", (d,))
        store.zeros(f"blk{s}.ln2.b", (d,))
        store.glorot(f"blk{s}.ff.W1", (d, 2 * d), rng)
        store.zeros(f"blk{s}.ff.b1", (2 * d,))
        store.glorot(f"blk{s}.ff.W2", (2 * d, d), rng)
        store.zeros(f"blk{s}.ff.b2", (d,))
    return EdcpModel(config, store)


# ---------------------------------------------------------------------------
# Graph features
# ---------------------------------------------------------------------------

def knn_graph(cloud: PointCloud | np.ndarray, k: int) -> np.ndarray:
    """Row i lists the k nearest neighbors of point i (self excluded),
    sorted by distance then index."""
    from .geometry import k_nearest

    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    n = pts.shape[0]
    if k >= n:
        raise TooFewPoints(f"k={k} needs more than k points, got {n}")
    tree = KdTree(pts)
    probe = min(n, k + 2)
    d, i = tree._tree.query(pts, k=probe)
    out = np.empty((n, k), dtype=np.int64)
    for row in range(n):
        di, ii = d[row], i[row]
        if probe < n and di[-1] == di[-2]:
            # Tie straddles the candidate set; re-query with exact tie repair.
            ii, di = k_nearest(tree, pts[row], min(n, k + 1))
        order = np.lexsort((ii, di))
        cand = ii[order]
        cand = cand[cand != row][:k]
        if len(cand) < k:  # self swamped by duplicate points; keep first k
            cand = ii[order][:k]
        out[row] = cand
    return out


def edge_features(x: Tensor, neighbors: np.ndarray) -> Tensor:
    """DGCNN edge tensor: entry (i, j) is concat(x_i, x_j - x_i), shape (N, k, 2c)."""
    n, c = x.shape
    nbr = np.asarray(neighbors, dtype=np.int64)
    if nbr.ndim != 2 or nbr.shape[0] != n:
        raise ValueError(f"neighbor table {nbr.shape} does not match {n} points")
    if np.any(nbr < 0) or np.any(nbr >= n):
        raise IndexError("neighbor index out of range")
    k = nbr.shape[1]
    idx_i = np.repeat(np.arange(n), k)
    xi = ad.gather_rows(x, idx_i)
    xj = ad.gather_rows(x, nbr.reshape(-1))
    e = ad.concat([xi, ad.sub(xj, xi)], axis=1)
    return ad.reshape(e, (n, k, 2 * c))


def dgcnn_embed(model: EdcpModel, cloud: PointCloud | np.ndarray) -> Tensor:
    """Per-point embedding: edge conv + max aggregation per layer, layer
    outputs concatenated and projected to the embedding width.

    Permutation-equivariant: permuting the input points permutes the
    output rows identically.
    """
    cfg = model.config
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    nbr = knn_graph(pts, cfg.k_neighbors)
    store = model.store
    x = Tensor(pts)
    n, k = nbr.shape
    layer_outputs = []
    for i, w in enumerate(cfg.edge_widths):
        e = edge_features(x, nbr)
        flat = ad.reshape(e, (n * k, e.shape[2]))
        h = ad.leaky_relu(ad.add_bias(ad.matmul(flat, store[f"edge{i}.W"]), store[f"edge{i}.b"]), cfg.leaky_slope)
        x = ad.reduce_max(ad.reshape(h, (n, k, w)), axis=1)
        layer_outputs.append(x)
    stacked = ad.concat(layer_outputs, axis=1)
    return ad.add_bias(ad.matmul(stacked, store["proj.W"]), store["proj.b"])


# ---------------------------------------------------------------------------
# Attention
# ---------------------------------------------------------------------------

def dot_product_attention(Q: Tensor, K: Tensor, V: Tensor) -> Tensor:
    """softmax(Q K^T / sqrt(d_k)) V; quadratic in sequence length."""
    d_k = Q.shape[1]
    scores = ad.scale(ad.matmul(Q, ad.transpose(K)), 1.0 / np.sqrt(d_k))
    return ad.matmul(ad.softmax(scores, axis=1), V)


def efficient_attention(Q: Tensor, K: Tensor, V: Tensor) -> Tensor:
    """Linear-complexity attention through a global context matrix.

    Queries are softmaxed along the feature axis, keys along the position
    axis; the d_k x d_v product of softmaxed keys with values is a global
    context the queries then mix. No n x n matrix is ever formed.
    """
    rho_q = ad.softmax(Q, axis=1)
    rho_k = ad.softmax(K, axis=0)
    context = ad.matmul(ad.transpose(rho_k), V)
    return ad.matmul(rho_q, context)


def _attention_fn(variant: str):
    return efficient_attention if variant == "efficient" else dot_product_attention


def _encoder_block(model: EdcpModel, s: int, F: Tensor, C: Tensor) -> Tensor:
    """Pre-norm residual block: multi-head cross attention then feed-forward.

    Queries come from F, keys/values from the context C; the embedding is
    split into head slices that attend in parallel.
    """
    cfg = model.config
    st = model.store
    attn = _attention_fn(cfg.attention)
    ln_f = ad.layer_norm(F, st[f"blk{s}.ln1.g"], st[f"blk{s}.ln1.b"])
    ln_c = ad.layer_norm(C, st[f"blk{s}.ln1.g"], st[f"blk{s}.ln1.b"])
    Q = ad.add_bias(ad.matmul(ln_f, st[f"blk{s}.Wq"]), st[f"blk{s}.bq"])
    K = ad.add_bias(ad.matmul(ln_c, st[f"blk{s}.Wk"]), st[f"blk{s}.bk"])
    V = ad.add_bias(ad.matmul(ln_c, st[f"blk{s}.Wv"]), st[f"blk{s}.bv"])
    dh = cfg.embed_dim // cfg.heads
    heads = [
        attn(
            ad.slice_cols(Q, h * dh, (h + 1) * dh),
            ad.slice_cols(K, h * dh, (h + 1) * dh),
            ad.slice_cols(V, h * dh, (h + 1) * dh),
        )
        for h in range(cfg.heads)
    ]
    A = ad.add_bias(ad.matmul(ad.concat(heads, axis=1), st[f"blk{s}.Wo"]), st[f"blk{s}.bo"])
    F1 = ad.add(F, A)
    ln2 = ad.layer_norm(F1, st[f"blk{s}.ln2.g"], st[f"blk{s}.ln2.b"])
    hidden = ad.leaky_relu(ad.add_bias(ad.matmul(ln2, st[f"blk{s}.ff.W1"]), st[f"blk{s}.ff.b1"]), cfg.leaky_slope)
    FF = ad.add_bias(ad.matmul(hidden, st[f"blk{s}.ff.W2"]), st[f"blk{s}.ff.b2"])
    return ad.add(F1, FF)


def cross_encode(model: EdcpModel, F_x: Tensor, F_y: Tensor) -> tuple[Tensor, Tensor]:
    """Serial stack of parallel-head blocks; each cloud conditions on the other."""
    for s in range(model.config.serial_blocks):
        nx = _encoder_block(model, s, F_x, F_y)
        ny = _encoder_block(model, s, F_y, F_x)
        F_x, F_y = nx, ny
    return F_x, F_y


# ---------------------------------------------------------------------------
# Matching and registration
# ---------------------------------------------------------------------------

def match_logits(phi_x: Tensor, phi_y: Tensor) -> Tensor:
    d = phi_x.shape[1]
    return ad.scale(ad.matmul(phi_x, ad.transpose(phi_y)), 1.0 / np.sqrt(d))


def soft_match(phi_x: Tensor, phi_y: Tensor, Y: PointCloud | np.ndarray) -> tuple[Tensor, Tensor]:
    """Row-stochastic match matrix and soft correspondences m @ Y."""
    pts = Y.points if isinstance(Y, PointCloud) else np.asarray(Y, dtype=np.float64)
    m = ad.softmax(match_logits(phi_x, phi_y), axis=1)
    y_hat = ad.matmul(m, Tensor(pts))
    return m, y_hat


def _normalized_pair(X: PointCloud, Y: PointCloud):
    cx = X.points.mean(axis=0)
    cy = Y.points.mean(axis=0)
    s = max(
        float(np.max(np.linalg.norm(X.points - cx, axis=1))),
        float(np.max(np.linalg.norm(Y.points - cy, axis=1))),
    )
    if s == 0.0:
        s = 1.0
    return (X.points - cx) / s, (Y.points - cy) / s, cx, cy, s


def edcp_register(model: EdcpModel, X: PointCloud, Y: PointCloud) -> tuple[RigidTransform, float]:
    """Coarse alignment: embed, cross-encode, soft-match, closed-form fit.

    Clouds are centered per side and scaled by a shared factor before the
    network; the returned transform lives in the input frame. The second
    value is a confidence (mean max row weight of the match matrix).
    """
    if len(X) < 3 or len(Y) < 3:
        raise DegenerateConfiguration("need at least 3 points per cloud")
    xn, yn, cx, cy, s = _normalized_pair(X, Y)
    F_x = dgcnn_embed(model, xn)
    F_y = dgcnn_embed(model, yn)
    phi_x, phi_y = cross_encode(model, F_x, F_y)
    m, y_hat = soft_match(phi_x, phi_y, yn)
    T_n = kabsch(xn, y_hat.data)
    confidence = float(np.mean(m.data.max(axis=1)))
    return transform_from_normalized(T_n, cx, cy, s), confidence


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EdcpPair:
    """One supervised pair with ground-truth correspondence indices."""

    X: PointCloud
    Y: PointCloud
    x_indices: np.ndarray
    y_indices: np.ndarray


def correspondences_from_transform(
    X: PointCloud, Y: PointCloud, T_gt: RigidTransform, tol: float = 1e-6
) -> tuple[np.ndarray, np.ndarray]:
    """Recover index pairs by moving X with the ground truth and matching
    exact (sub-tolerance) nearest neighbors in Y."""
    from .geometry import apply_to_points

    tree = KdTree(Y)
    idx, dist = tree.query_points(apply_to_points(T_gt, X.points))
    keep = dist <= tol
    return np.flatnonzero(keep), idx[keep]


def _pair_loss(model: EdcpModel, pair: EdcpPair) -> Tensor:
    xn, yn, _, _, _ = _normalized_pair(pair.X, pair.Y)
    F_x = dgcnn_embed(model, xn)
    F_y = dgcnn_embed(model, yn)
    phi_x, phi_y = cross_encode(model, F_x, F_y)
    logits = match_logits(phi_x, phi_y)
    rows = ad.gather_rows(logits, pair.x_indices)
    return ad.softmax_cross_entropy(rows, pair.y_indices)


def train_edcp(
    pairs,
    config: EdcpConfig = EdcpConfig(),
    train: TrainConfig = TrainConfig(),
) -> tuple[EdcpModel, list[float]]:
    """Minimize match-matrix cross-entropy against known correspondences.

    Returns the trained model and the per-epoch mean loss history;
    deterministic in the training seed.
    """
    pairs = list(pairs)
    if not pairs:
        raise EmptyDataset("no training pairs")
    model = init_edcp_model(config, seed=train.seed)
    rng = np.random.default_rng(np.random.SeedSequence([train.seed, 0x7EA1]))
    history: list[float] = []
    for _ in range(train.epochs):
        order = rng.permutation(len(pairs))
        epoch_losses = []
        for start in range(0, len(order), train.batch_size):
            batch = order[start : start + train.batch_size]
            model.store.zero_grad()
            for j in batch:
                loss = _pair_loss(model, pairs[j])
                backward(ad.scale(loss, 1.0 / len(batch)))
                epoch_losses.append(loss.item())
            model.store.sgd_step(train.lr, train.momentum)
        history.append(float(np.mean(epoch_losses)))
    return model, history


# ---------------------------------------------------------------------------
# Complexity probe
# ---------------------------------------------------------------------------

def complexity_probe(
    sizes,
    d: int = 64,
    variant: str = "efficient",
    repeats: int = 7,
    seed: int = 0,
) -> list[tuple[int, float]]:
    """Median wall-clock seconds of one attention call per input length.

    Sizes must be ascending. Small sizes are timed over an inner loop so
    each sample is long enough for the clock to resolve, and BLAS runs on
    one thread during the measurement: thread-pool synchronization costs
    are flat in n and would mask the algorithmic scaling.
    """
    from threadpoolctl import threadpool_limits

    sizes = list(sizes)
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("sizes must be ascending")
    attn = _attention_fn(variant)
    rng = np.random.default_rng(seed)
    rows = []
    inner = None
    with threadpool_limits(limits=1):
        for n in sizes:
            Q = Tensor(rng.normal(size=(n, d)))
            K = Tensor(rng.normal(size=(n, d)))
            V = Tensor(rng.normal(size=(n, d)))
            attn(Q, K, V)  # warm-up
            if inner is None:
                t0 = time.perf_counter()
                attn(Q, K, V)
                est = time.perf_counter() - t0
                inner = max(1, int(np.ceil(0.02 / max(est, 1e-9))))
            samples = []
            for _ in range(max(5, repeats)):
                t0 = time.perf_counter()
                for _ in range(inner):
                    attn(Q, K, V)
                samples.append((time.perf_counter() - t0) / inner)
            rows.append((n, float(np.median(samples))))
    return rows
