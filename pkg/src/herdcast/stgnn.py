"""Spatio-temporal graph model for county score forecasting.

Per year: graph convolutions over the county adjacency produce spatial
embeddings; per county: scaled dot-product attention over the embedding
history compresses the recent years; a small regression head maps the
attended embedding to a scalar score.  Training differentiates the whole
composition in reverse mode and optimizes with Adam under L2 weight decay.

Also hosts the two tabular baselines (feed-forward net, Gaussian kernel
regression) used for comparison runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    Adam,
    Dense,
    Tensor,
    dense_init,
    dense_stack,
    dropout_mask,
    finite_difference_check,
    l2_penalty,
    mlp_forward,
    softmax_rows,
)
from .geo import SpatialGraph, normalize_adjacency


class StgnnError(ValueError):
    pass


class StgnnTrainingError(RuntimeError):
    pass


# -- feature assembly ----------------------------------------------------------


@dataclass
class NodeFeatureTensor:
    values: np.ndarray            # (T, N_c, F) with the lag as the last column
    years: list[int]
    feature_names: list[str]
    lag_mean: float
    lag_std: float
    lag_bootstrap_years: list[int] = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return self.values.shape[2]


def build_lag_feature(scores: np.ndarray, train_year_count: int | None = None
                      ) -> tuple[np.ndarray, float, float]:
    """Standardized one-year lag of the score, (y_{t-1} - mean)/std.

    The first year has no predecessor; it reuses its own score (self-lag)
    so every year stays trainable.  The mean/std pool is restricted to the
    first ``train_year_count`` years when given, avoiding leakage from
    validation/test years.
    """
    scores = np.asarray(scores, dtype=float)
    lagged = np.vstack([scores[:1], scores[:-1]])
    pool = lagged[:train_year_count] if train_year_count else lagged
    mean = float(pool.mean())
    std = float(pool.std(ddof=1))
    if std <= 0:
        raise StgnnError("lag scores have zero variance")
    return (lagged - mean) / std, mean, std


def assemble_features(base: np.ndarray, scores: np.ndarray, years: list[int],
                      feature_names: list[str],
                      train_year_count: int | None = None) -> NodeFeatureTensor:
    """Stack operational features (T, N_c, F0) with the standardized lag."""
    lag, mean, std = build_lag_feature(scores, train_year_count)
    values = np.concatenate([base, lag[:, :, None]], axis=2)
    return NodeFeatureTensor(
        values=values,
        years=list(years),
        feature_names=list(feature_names) + ["score_lag"],
        lag_mean=mean,
        lag_std=std,
        lag_bootstrap_years=[years[0]],
    )


# -- model ---------------------------------------------------------------------


@dataclass
class StgnnConfig:
    n_features: int
    gcn_widths: tuple[int, ...] = (32, 32)
    attn_dim: int = 16
    attn_value_dim: int = 16
    head_widths: tuple[int, ...] = (16, 8)
    dropout: float = 0.1
    weight_decay: float = 1e-4
    learning_rate: float = 1e-3
    epochs: int = 800
    seed: int = 0
    window: int | None = None     # attention span in years; None = full history
    train_years: int = 3
    val_years: int = 1


@dataclass
class StgnnParams:
    gcn: list[Tensor]             # per-layer weight matrices, no bias (H' = act(A H W))
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    head: list[Dense]
    config: StgnnConfig
    y_mean: float = 0.0
    y_std: float = 1.0

    def all_tensors(self) -> list[Tensor]:
        out = list(self.gcn) + [self.w_q, self.w_k, self.w_v]
        for layer in self.head:
            out.extend(layer.tensors)
        return out

    def snapshot(self) -> list[np.ndarray]:
        return [t.data.copy() for t in self.all_tensors()]

    def restore(self, snapshot: list[np.ndarray]) -> None:
        for t, data in zip(self.all_tensors(), snapshot):
            t.data = data.copy()

    def norm_squared(self) -> float:
        return float(sum((t.data ** 2).sum() for t in self.all_tensors()))


def init_stgnn(config: StgnnConfig, rng: np.random.Generator | None = None) -> StgnnParams:
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    widths = [config.n_features, *config.gcn_widths]
    gcn = [Tensor(rng.normal(0.0, np.sqrt(2.0 / a), size=(a, b)))
           for a, b in zip(widths[:-1], widths[1:])]
    f_sp = widths[-1]
    w_q = Tensor(rng.normal(0.0, np.sqrt(1.0 / f_sp), size=(f_sp, config.attn_dim)))
    w_k = Tensor(rng.normal(0.0, np.sqrt(1.0 / f_sp), size=(f_sp, config.attn_dim)))
    w_v = Tensor(rng.normal(0.0, np.sqrt(1.0 / f_sp), size=(f_sp, config.attn_value_dim)))
    head = dense_stack([config.attn_value_dim, *config.head_widths, 1], rng)
    return StgnnParams(gcn, w_q, w_k, w_v, head, config)


def gcn_forward(h: np.ndarray, a_norm: np.ndarray, weight: np.ndarray,
                activation: str = "relu") -> np.ndarray:
    """Single graph-convolution step act(A_norm @ H @ W)."""
    out = a_norm @ h @ weight
    if activation == "relu":
        return np.maximum(out, 0.0)
    if activation == "identity":
        return out
    raise StgnnError(f"unknown activation {activation!r}")


def _spatial_t(x_t: Tensor, a_norm: Tensor, params: StgnnParams,
               masks: list[np.ndarray] | None) -> Tensor:
    h = x_t
    last = len(params.gcn) - 1
    for i, w in enumerate(params.gcn):
        h = a_norm @ h @ w
        if i < last:
            h = h.relu()
            if masks is not None:
                h = h * masks[i]
    return h


def temporal_attention(history: np.ndarray, query_index: int,
                       w_q: np.ndarray, w_k: np.ndarray, w_v: np.ndarray,
                       window: int) -> tuple[np.ndarray, np.ndarray]:
    """Attention over one county's embedding history (T, F_sp).

    Softmax over scaled dot products q.k/sqrt(d) restricted to the trailing
    ``window`` years ending at ``query_index``; returns the attended value
    vector and the weights.
    """
    t = query_index
    if not (1 <= window <= history.shape[0]):
        raise StgnnError("window must be in [1, history length]")
    lo = max(0, t - window + 1)
    q = history[t] @ w_q
    keys = history[lo:t + 1] @ w_k
    values = history[lo:t + 1] @ w_v
    scores = keys @ q / np.sqrt(w_q.shape[1])
    scores = scores - scores.max()
    weights = np.exp(scores)
    weights /= weights.sum()
    return weights @ values, weights


def _attention_t(history: list[Tensor], t: int, params: StgnnParams) -> Tensor:
    window = params.config.window or len(history)
    lo = max(0, t - window + 1)
    q = history[t] @ params.w_q
    inv_sqrt_d = 1.0 / np.sqrt(params.config.attn_dim)
    scores = [(q * (history[tau] @ params.w_k)).sum(axis=1, keepdims=True) * inv_sqrt_d
              for tau in range(lo, t + 1)]
    alphas = softmax_rows(scores)
    attended = None
    for alpha, tau in zip(alphas, range(lo, t + 1)):
        term = alpha * (history[tau] @ params.w_v)
        attended = term if attended is None else attended + term
    return attended


def _forward_t(values: np.ndarray, a_norm: np.ndarray, params: StgnnParams,
               mode: str, dropout_rng: np.random.Generator | None) -> list[Tensor]:
    """Predictions per year as (N_c, 1) tensors in model (standardized) units."""
    if mode not in ("train", "eval"):
        raise StgnnError(f"mode must be 'train' or 'eval', got {mode!r}")
    rate = params.config.dropout if mode == "train" else 0.0
    a_t = Tensor(a_norm)
    n_counties = values.shape[1]
    n_hidden_gcn = max(len(params.gcn) - 1, 0)

    history: list[Tensor] = []
    for t in range(values.shape[0]):
        masks = None
        if rate > 0.0 and dropout_rng is not None:
            masks = [dropout_mask((n_counties, w.shape[1]), rate, dropout_rng)
                     for w in params.gcn[:n_hidden_gcn]]
        history.append(_spatial_t(Tensor(values[t]), a_t, params, masks))

    preds: list[Tensor] = []
    for t in range(values.shape[0]):
        attended = _attention_t(history, t, params)
        head_masks = None
        if rate > 0.0 and dropout_rng is not None:
            head_masks = [dropout_mask((n_counties, layer.w.shape[1]), rate, dropout_rng)
                          for layer in params.head[:-1]]
        preds.append(mlp_forward(params.head, attended, final_linear=True,
                                 dropout_masks=head_masks))
    return preds


def stgnn_forward(features: NodeFeatureTensor, graph: SpatialGraph, params: StgnnParams,
                  mode: str = "eval",
                  dropout_rng: np.random.Generator | None = None) -> np.ndarray:
    """Raw network output per (year, county); training-target units."""
    preds = _forward_t(features.values, graph.normalized, params, mode, dropout_rng)
    return np.stack([p.data.ravel() for p in preds])


def predict_scores(features: NodeFeatureTensor, graph: SpatialGraph,
                   params: StgnnParams) -> np.ndarray:
    """Eval-mode predictions mapped back to score units."""
    return stgnn_forward(features, graph, params) * params.y_std + params.y_mean


def stgnn_loss(y_pred: np.ndarray, y_true: np.ndarray, params: StgnnParams,
               weight_decay: float) -> float:
    """Mean squared error over all given pairs plus weight_decay * ||theta||^2."""
    err = np.asarray(y_pred, dtype=float) - np.asarray(y_true, dtype=float)
    return float((err ** 2).mean() + weight_decay * params.norm_squared())


@dataclass
class MetricsReport:
    r2: float
    mae: float
    mse: float

    @property
    def rmse(self) -> float:
        return float(np.sqrt(self.mse))

    def to_dict(self) -> dict:
        return {"r2": self.r2, "mae": self.mae, "mse": self.mse, "rmse": self.rmse}


def metrics(y_true: np.ndarray, y_pred: np.ndarray) -> MetricsReport:
    y_true = np.asarray(y_true, dtype=float).ravel()
    y_pred = np.asarray(y_pred, dtype=float).ravel()
    err = y_true - y_pred
    mse = float((err ** 2).mean())
    ss_tot = float(((y_true - y_true.mean()) ** 2).sum())
    r2 = 1.0 - float((err ** 2).sum()) / ss_tot if ss_tot > 0 else (1.0 if mse == 0 else -np.inf)
    return MetricsReport(r2=r2, mae=float(np.abs(err).mean()), mse=mse)


def _year_splits(n_years: int, config: StgnnConfig) -> dict[str, list[int]]:
    train = list(range(min(config.train_years, n_years)))
    val = list(range(len(train), min(len(train) + config.val_years, n_years)))
    test = list(range(len(train) + len(val), n_years))
    return {"train": train, "val": val, "test": test}


def train_stgnn(features: NodeFeatureTensor, graph: SpatialGraph, targets: np.ndarray,
                config: StgnnConfig) -> tuple[StgnnParams, list[dict], dict[str, MetricsReport]]:
    """Full-batch Adam training over the training years.

    Targets are standardized internally (mean/std over the training years,
    stored on the returned params) so the optimizer sees unit-scale errors;
    logged R2 values are computed on the original score scale.  The best
    validation checkpoint is returned; with no validation years, the final
    parameters are.
    """
    targets = np.asarray(targets, dtype=float)
    if targets.shape != features.values.shape[:2]:
        raise StgnnError("targets must be (n_years, n_counties)")
    splits = _year_splits(targets.shape[0], config)
    train_years = splits["train"]
    if not train_years:
        raise StgnnError("no training years")

    y_train = targets[train_years]
    y_mean = float(y_train.mean())
    y_std = float(y_train.std(ddof=1)) if y_train.size > 1 else 1.0
    if y_std <= 0:
        y_std = 1.0

    master = np.random.default_rng(config.seed)
    init_rng = np.random.default_rng(master.integers(2 ** 63))
    params = init_stgnn(config, init_rng)
    params.y_mean, params.y_std = y_mean, y_std
    tensors = params.all_tensors()
    optimizer = Adam(tensors, lr=config.learning_rate)

    z_targets = (targets - y_mean) / y_std
    n_train_pairs = len(train_years) * targets.shape[1]
    log: list[dict] = []
    best: tuple[float, list[np.ndarray]] = (np.inf, params.snapshot())

    for epoch in range(config.epochs):
        dropout_rng = np.random.default_rng((config.seed, epoch))
        optimizer.zero_grad()
        preds = _forward_t(features.values, graph.normalized, params, "train", dropout_rng)
        loss = None
        for t in train_years:
            diff = preds[t] - z_targets[t].reshape(-1, 1)
            term = (diff * diff).sum()
            loss = term if loss is None else loss + term
        loss = loss * (1.0 / n_train_pairs) + config.weight_decay * l2_penalty(tensors)
        if not np.isfinite(loss.data):
            raise StgnnTrainingError(f"non-finite loss at epoch {epoch}")
        loss.backward()
        optimizer.step()

        scores = predict_scores(features, graph, params)
        entry = {"epoch": epoch, "train_loss": float(loss.data),
                 "train_r2": metrics(targets[train_years], scores[train_years]).r2}
        if splits["val"]:
            val_m = metrics(targets[splits["val"]], scores[splits["val"]])
            entry["val_r2"] = val_m.r2
            if val_m.mse < best[0]:
                best = (val_m.mse, params.snapshot())
        log.append(entry)

    if config.epochs > 0 and splits["val"]:
        params.restore(best[1])

    scores = predict_scores(features, graph, params)
    report = {name: metrics(targets[idx], scores[idx])
              for name, idx in splits.items() if idx}
    return params, log, report


def gradient_check(tolerance: float = 1e-4, seed: int = 11) -> dict:
    """Finite-difference audit of the full training loss (MSE + weight decay)
    on a 4-county, 3-year, 5-feature instance with dropout disabled."""
    rng = np.random.default_rng(seed)
    n_counties, n_years, n_features = 4, 3, 5
    config = StgnnConfig(
        n_features=n_features, gcn_widths=(6, 4), attn_dim=3, attn_value_dim=3,
        head_widths=(4,), dropout=0.0, weight_decay=1e-3, window=None,
        train_years=n_years, val_years=0, seed=seed,
    )
    params = init_stgnn(config, rng)
    for t in params.all_tensors():
        t.data = rng.normal(0.0, 0.5, size=t.data.shape)
    values = rng.uniform(0.0, 1.0, size=(n_years, n_counties, n_features))
    targets = rng.normal(size=(n_years, n_counties))
    adjacency = np.zeros((n_counties, n_counties))
    for i in range(n_counties):
        adjacency[i, (i + 1) % n_counties] = adjacency[(i + 1) % n_counties, i] = 1.0
    a_norm = normalize_adjacency(adjacency)
    tensors = params.all_tensors()

    def loss_fn() -> Tensor:
        preds = _forward_t(values, a_norm, params, "eval", None)
        total = None
        for t in range(n_years):
            diff = preds[t] - targets[t].reshape(-1, 1)
            term = (diff * diff).sum()
            total = term if total is None else total + term
        return total * (1.0 / (n_years * n_counties)) + config.weight_decay * l2_penalty(tensors)

    err = finite_difference_check(loss_fn, tensors)
    return {"max_relative_error": err, "tolerance": tolerance, "passed": err < tolerance}


# -- baselines -------------------------------------------------------------------


@dataclass
class FfnnConfig:
    n_features: int
    hidden: tuple[int, ...] = (32, 16)
    learning_rate: float = 1e-3
    epochs: int = 500
    weight_decay: float = 0.0
    seed: int = 0


@dataclass
class FfnnParams:
    layers: list[Dense]
    y_mean: float = 0.0
    y_std: float = 1.0

    def all_tensors(self) -> list[Tensor]:
        out: list[Tensor] = []
        for layer in self.layers:
            out.extend(layer.tensors)
        return out

    def predict(self, x: np.ndarray) -> np.ndarray:
        out = mlp_forward(self.layers, Tensor(np.atleast_2d(x)), final_linear=True)
        return out.data.ravel() * self.y_std + self.y_mean


def ffnn_baseline(x: np.ndarray, y: np.ndarray, config: FfnnConfig,
                  splits: dict[str, np.ndarray] | None = None
                  ) -> tuple[FfnnParams, dict[str, MetricsReport]]:
    """Plain MLP on per-(county, year) feature vectors: no graph, no history."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if splits is None:
        splits = {"train": np.arange(len(y))}
    train_idx = splits["train"]

    rng = np.random.default_rng(config.seed)
    params = FfnnParams(dense_stack([config.n_features, *config.hidden, 1], rng))
    params.y_mean = float(y[train_idx].mean())
    params.y_std = float(y[train_idx].std(ddof=1)) if len(train_idx) > 1 else 1.0
    if params.y_std <= 0:
        params.y_std = 1.0
    z = (y - params.y_mean) / params.y_std

    tensors = params.all_tensors()
    optimizer = Adam(tensors, lr=config.learning_rate)
    x_train = Tensor(x[train_idx])
    target = z[train_idx].reshape(-1, 1)
    for epoch in range(config.epochs):
        optimizer.zero_grad()
        pred = mlp_forward(params.layers, x_train, final_linear=True)
        diff = pred - target
        loss = (diff * diff).mean()
        if config.weight_decay > 0:
            loss = loss + config.weight_decay * l2_penalty(tensors)
        if not np.isfinite(loss.data):
            raise StgnnTrainingError(f"ffnn: non-finite loss at epoch {epoch}")
        loss.backward()
        optimizer.step()

    report = {name: metrics(y[idx], params.predict(x[idx]))
              for name, idx in splits.items() if len(idx)}
    return params, report


def gkr_baseline(train_x: np.ndarray, train_y: np.ndarray,
                 bandwidth: float | str = "median",
                 query_x: np.ndarray | None = None) -> np.ndarray:
    """Nadaraya-Watson estimator with a Gaussian kernel.

    Weights are normalized in a max-shifted exponent domain, so a vanishing
    bandwidth degrades gracefully to nearest-neighbour prediction instead of
    0/0.
    """
    train_x = np.atleast_2d(np.asarray(train_x, dtype=float))
    train_y = np.asarray(train_y, dtype=float).ravel()
    query_x = train_x if query_x is None else np.atleast_2d(np.asarray(query_x, dtype=float))
    if bandwidth == "median":
        from .vae import median_heuristic_bandwidth

        h = median_heuristic_bandwidth(train_x)
    else:
        h = float(bandwidth)
        if h <= 0:
            raise StgnnError("bandwidth must be positive")

    sq = ((query_x[:, None, :] - train_x[None, :, :]) ** 2).sum(axis=2)
    exponents = -sq / (2.0 * h * h)
    exponents -= exponents.max(axis=1, keepdims=True)
    weights = np.exp(exponents)
    return weights @ train_y / weights.sum(axis=1)


# -- serialization -----------------------------------------------------------------


def params_to_json_dict(params: StgnnParams) -> dict:
    cfg = params.config
    return {
        "schema_version": 1,
        "config": {
            "n_features": cfg.n_features,
            "gcn_widths": list(cfg.gcn_widths),
            "attn_dim": cfg.attn_dim,
            "attn_value_dim": cfg.attn_value_dim,
            "head_widths": list(cfg.head_widths),
            "dropout": cfg.dropout,
            "weight_decay": cfg.weight_decay,
            "learning_rate": cfg.learning_rate,
            "epochs": cfg.epochs,
            "seed": cfg.seed,
            "window": cfg.window,
            "train_years": cfg.train_years,
            "val_years": cfg.val_years,
        },
        "gcn": [w.data.tolist() for w in params.gcn],
        "w_q": params.w_q.data.tolist(),
        "w_k": params.w_k.data.tolist(),
        "w_v": params.w_v.data.tolist(),
        "head": [{"w": l.w.data.tolist(), "b": l.b.data.tolist()} for l in params.head],
        "y_mean": params.y_mean,
        "y_std": params.y_std,
    }


def params_from_json_dict(doc: dict) -> StgnnParams:
    cfg = doc["config"]
    config = StgnnConfig(
        n_features=cfg["n_features"], gcn_widths=tuple(cfg["gcn_widths"]),
        attn_dim=cfg["attn_dim"], attn_value_dim=cfg["attn_value_dim"],
        head_widths=tuple(cfg["head_widths"]), dropout=cfg["dropout"],
        weight_decay=cfg["weight_decay"], learning_rate=cfg["learning_rate"],
        epochs=cfg["epochs"], seed=cfg["seed"], window=cfg["window"],
        train_years=cfg["train_years"], val_years=cfg["val_years"],
    )
    return StgnnParams(
        gcn=[Tensor(np.asarray(w)) for w in doc["gcn"]],
        w_q=Tensor(np.asarray(doc["w_q"])),
        w_k=Tensor(np.asarray(doc["w_k"])),
        w_v=Tensor(np.asarray(doc["w_v"])),
        head=[Dense(Tensor(np.asarray(l["w"])), Tensor(np.asarray(l["b"]))) for l in doc["head"]],
        config=config,
        y_mean=doc["y_mean"],
        y_std=doc["y_std"],
    )


def save_epoch_log_csv(log: list[dict], path) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "train_r2", "val_r2"])
        for entry in log:
            writer.writerow([entry["epoch"], repr(float(entry["train_loss"])),
                             repr(float(entry["train_r2"])),
                             repr(float(entry["val_r2"])) if "val_r2" in entry else ""])
