"""Toy CTR network: bottom MLP over dense features, pooled categorical
embeddings, dot-product feature interaction, top MLP, BCE loss, SGD.

All math is float64 numpy with manual backprop. The embedding side is
delegated to an EmbeddingScheme, so the same trainer drives the compressed
scheme and every baseline.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .checkpoint import load_blobs, save_blobs
from .data import Dataset, Record
from .errors import ConfigError, DataError, DivergenceError
from .metrics import roc_auc
from .schemes import EmbeddingScheme, scheme_from_state

logger = logging.getLogger(__name__)

PROB_CLAMP = 1e-7
_MLP_STREAM = 0x4D4C50  # distinct init stream for MLP weights


@dataclass(frozen=True)
class MLPSpec:
    """Layer sizes of a dense ReLU chain; consecutive sizes give weight shapes."""

    layer_sizes: tuple[int, ...]

    def __post_init__(self):
        if len(self.layer_sizes) < 2:
            raise ConfigError("an MLP needs at least two layer sizes")
        if any(int(s) < 1 for s in self.layer_sizes):
            raise ConfigError("layer sizes must be positive")
        object.__setattr__(
            self, "layer_sizes", tuple(int(s) for s in self.layer_sizes)
        )


@dataclass
class MLP:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def init(cls, spec: MLPSpec, rng: np.random.Generator) -> "MLP":
        weights, biases = [], []
        sizes = spec.layer_sizes
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out, dtype=np.float64))
        return cls(weights, biases)

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(
            w.shape[1] for w in self.weights
        )

    def param_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


def _mlp_forward(mlp: MLP, x: np.ndarray, relu_last: bool):
    cache = []
    out = x
    last = len(mlp.weights) - 1
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        pre = out @ w + b
        cache.append((out, pre))
        out = np.maximum(pre, 0.0) if (i < last or relu_last) else pre
    return out, cache


def _mlp_backward(mlp: MLP, cache, dout: np.ndarray, relu_last: bool):
    """Returns (dx, [(dW, db) per layer])."""
    grads = [None] * len(mlp.weights)
    last = len(mlp.weights) - 1
    for i in range(last, -1, -1):
        x_in, pre = cache[i]
        if i < last or relu_last:
            dout = dout * (pre > 0.0)
        grads[i] = (x_in.T @ dout, dout.sum(axis=0))
        dout = dout @ mlp.weights[i].T
    return dout, grads


@dataclass
class ModelParams:
    """Everything the net owns. The embedding provider exposes cfg and the
    token/weight tables when it is the compressed scheme."""

    bottom: MLP
    top: MLP
    embedding: EmbeddingScheme
    num_sparse_fields: int
    num_dense: int

    def __post_init__(self):
        l = self.embedding.embed_dim
        if self.bottom.sizes[-1] != l:
            raise ConfigError(
                f"bottom MLP output {self.bottom.sizes[-1]} must equal "
                f"embedding dim {l}"
            )
        if self.bottom.sizes[0] != self.num_dense:
            raise ConfigError(
                f"bottom MLP input {self.bottom.sizes[0]} must equal "
                f"dense feature count {self.num_dense}"
            )
        expected = interaction_size(l, self.num_sparse_fields)
        if self.top.sizes[0] != expected:
            raise ConfigError(
                f"top MLP input {self.top.sizes[0]} must equal interaction "
                f"size {expected}"
            )
        if self.top.sizes[-1] != 1:
            raise ConfigError("top MLP must end in a single output")

    @property
    def cfg(self):
        return getattr(self.embedding, "cfg", None)

    @property
    def token_table(self):
        return getattr(self.embedding, "token_table", None)

    @property
    def weight_table(self):
        return getattr(self.embedding, "weight_table", None)

    def live_arrays(self) -> dict[str, np.ndarray]:
        """All trainable arrays by name (views, not copies)."""
        out = {}
        for i, (w, b) in enumerate(zip(self.bottom.weights, self.bottom.biases)):
            out[f"bot_w{i}"] = w
            out[f"bot_b{i}"] = b
        for i, (w, b) in enumerate(zip(self.top.weights, self.top.biases)):
            out[f"top_w{i}"] = w
            out[f"top_b{i}"] = b
        for name, arr in self.embedding.arrays().items():
            out[f"emb_{name}"] = arr
        return out

    def param_count(self) -> int:
        return (
            self.bottom.param_count()
            + self.top.param_count()
            + self.embedding.param_count()
        )


def interaction_size(l: int, num_fields: int) -> int:
    """Dense copy plus all pairwise dots among dense output and embeddings."""
    n = num_fields + 1
    return l + n * (n - 1) // 2


def build_model(
    scheme: EmbeddingScheme,
    num_dense: int,
    num_sparse_fields: int,
    bot_sizes,
    top_sizes,
    init_seed: int,
) -> ModelParams:
    """Assemble a model around an already-built embedding scheme.

    bot_sizes is the full bottom chain (num_dense ... l); top_sizes is the
    chain after the interaction layer (its input size is derived).
    """
    bot = MLPSpec(tuple(bot_sizes))
    top_chain = (interaction_size(scheme.embed_dim, num_sparse_fields),) + tuple(
        int(s) for s in top_sizes
    )
    top = MLPSpec(top_chain)
    rng = np.random.default_rng([int(init_seed), _MLP_STREAM])
    bottom = MLP.init(bot, rng)
    top_mlp = MLP.init(top, rng)
    return ModelParams(bottom, top_mlp, scheme, num_sparse_fields, num_dense)


def bce_loss(p, y):
    """Binary cross-entropy with the probability clamped to
    [1e-7, 1 - 1e-7]; elementwise over arrays, scalar for scalars."""
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(y, dtype=np.float64)
    out = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    return float(out) if out.ndim == 0 else out


def _triu_pairs(num_items: int):
    return np.triu_indices(num_items, k=1)


def _forward_core(params: ModelParams, dense_b: np.ndarray, Z: np.ndarray):
    y_dense, bot_cache = _mlp_forward(params.bottom, dense_b, relu_last=True)
    V = np.concatenate([y_dense[:, None, :], Z], axis=1)
    iu, ju = _triu_pairs(V.shape[1])
    pairs = np.einsum("bil,bjl->bij", V, V)[:, iu, ju]
    inter = np.concatenate([y_dense, pairs], axis=1)
    logits, top_cache = _mlp_forward(params.top, inter, relu_last=False)
    p = expit(logits[:, 0])
    return p, (bot_cache, top_cache, V, iu, ju)


def _backward_core(params: ModelParams, core_cache, dlogit: np.ndarray):
    """dlogit is dLoss/dlogit, shape (B,). Returns (bot_grads, top_grads, dZ)."""
    bot_cache, top_cache, V, iu, ju = core_cache
    l = params.embedding.embed_dim
    dinter, top_grads = _mlp_backward(
        params.top, top_cache, dlogit[:, None], relu_last=False
    )
    dy_direct = dinter[:, :l]
    dpairs = dinter[:, l:]
    B, n = V.shape[0], V.shape[1]
    S = np.zeros((B, n, n), dtype=np.float64)
    S[:, iu, ju] = dpairs
    S = S + S.transpose(0, 2, 1)
    dV = np.einsum("bij,bjl->bil", S, V)
    dy_dense = dV[:, 0, :] + dy_direct
    _, bot_grads = _mlp_backward(params.bottom, bot_cache, dy_dense, relu_last=True)
    return bot_grads, top_grads, dV[:, 1:, :]


def forward_batch(params: ModelParams, dense_b, encoded, rows):
    Z, emb_cache = params.embedding.forward_batch(encoded, rows)
    p, core_cache = _forward_core(params, dense_b, Z)
    return p, (core_cache, emb_cache)


def batch_gradients(params: ModelParams, dense_b, encoded, rows, labels):
    """Analytic mean-BCE gradients of one batch, without applying them.

    Returns (loss, mlp_grads dict name->array, emb_grads sparse dict).
    """
    y = np.asarray(labels, dtype=np.float64)
    p, (core_cache, emb_cache) = forward_batch(params, dense_b, encoded, rows)
    loss = float(np.mean(bce_loss(p, y)))
    dlogit = (p - y) / y.shape[0]
    bot_grads, top_grads, dZ = _backward_core(params, core_cache, dlogit)
    mlp_grads = {}
    for i, (dw, db) in enumerate(bot_grads):
        mlp_grads[f"bot_w{i}"] = dw
        mlp_grads[f"bot_b{i}"] = db
    for i, (dw, db) in enumerate(top_grads):
        mlp_grads[f"top_w{i}"] = dw
        mlp_grads[f"top_b{i}"] = db
    emb_grads = params.embedding.backward_batch(emb_cache, dZ)
    return loss, mlp_grads, emb_grads


def batch_loss(params: ModelParams, dense_b, encoded, rows, labels) -> float:
    p, _ = forward_batch(params, dense_b, encoded, rows)
    return float(np.mean(bce_loss(p, np.asarray(labels, dtype=np.float64))))


def forward(params: ModelParams, record: Record) -> float:
    """Probability for one record (reference single-example path)."""
    dense = np.asarray(record.dense, dtype=np.float64)
    if dense.shape != (params.num_dense,):
        raise ConfigError(
            f"record has {dense.shape[0]} dense features, model expects "
            f"{params.num_dense}"
        )
    if len(record.sparse) != params.num_sparse_fields:
        raise ConfigError(
            f"record has {len(record.sparse)} sparse fields, model expects "
            f"{params.num_sparse_fields}"
        )
    Z = np.stack(
        [
            params.embedding.embed_feature(f, toks)
            for f, toks in enumerate(record.sparse)
        ]
    )
    p, _ = _forward_core(params, dense[None, :], Z[None, :, :])
    return float(p[0])


def predict_scores(
    params: ModelParams,
    dataset: Dataset,
    encoded=None,
    batch_size: int = 4096,
) -> np.ndarray:
    if encoded is None:
        encoded = params.embedding.encode_dataset(dataset.sparse)
    n = dataset.num_rows
    out = np.empty(n, dtype=np.float64)
    for start in range(0, n, batch_size):
        rows = np.arange(start, min(start + batch_size, n), dtype=np.int64)
        p, _ = forward_batch(params, dataset.dense[rows], encoded, rows)
        out[rows] = p
    return out


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_auc: float  # nan when no validation set was given

    def log_line(self) -> str:
        return f"{self.epoch},{self.train_loss:.6f},{self.val_auc:.6f}"


def train(
    params: ModelParams,
    train_dataset: Dataset,
    *,
    epochs: int,
    batch_size: int,
    lr: float,
    shuffle_seed: int,
    val_dataset: Dataset | None = None,
) -> list[EpochStats]:
    """Minibatch SGD; deterministic given seeds. Mutates params in place."""
    if train_dataset.num_rows == 0:
        raise DataError("training dataset is empty")
    if train_dataset.num_fields != params.num_sparse_fields:
        raise ConfigError(
            f"dataset has {train_dataset.num_fields} sparse fields, model "
            f"expects {params.num_sparse_fields}"
        )
    if epochs < 1 or batch_size < 1:
        raise ConfigError("epochs and batch_size must be >= 1")
    scheme = params.embedding
    encoded = scheme.encode_dataset(train_dataset.sparse)
    val_encoded = (
        scheme.encode_dataset(val_dataset.sparse) if val_dataset is not None else None
    )
    labels = train_dataset.labels.astype(np.float64)
    n = train_dataset.num_rows
    rng = np.random.default_rng(shuffle_seed)
    history: list[EpochStats] = []
    for epoch in range(1, epochs + 1):
        perm = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, batch_size):
            rows = perm[start : start + batch_size]
            y = labels[rows]
            p, (core_cache, emb_cache) = forward_batch(
                params, train_dataset.dense[rows], encoded, rows
            )
            losses = bce_loss(p, y)
            batch_mean = float(np.mean(losses))
            if not np.isfinite(batch_mean):
                raise DivergenceError(
                    f"non-finite training loss at epoch {epoch}, "
                    f"batch starting at {start}"
                )
            loss_sum += float(np.sum(losses))
            dlogit = (p - y) / y.shape[0]
            bot_grads, top_grads, dZ = _backward_core(params, core_cache, dlogit)
            for (w, b), (dw, db) in zip(
                zip(params.bottom.weights, params.bottom.biases), bot_grads
            ):
                w -= lr * dw
                b -= lr * db
            for (w, b), (dw, db) in zip(
                zip(params.top.weights, params.top.biases), top_grads
            ):
                w -= lr * dw
                b -= lr * db
            scheme.apply_sparse(scheme.backward_batch(emb_cache, dZ), lr)
        train_loss = loss_sum / n
        if val_dataset is not None:
            val_auc = roc_auc(
                predict_scores(params, val_dataset, val_encoded),
                val_dataset.labels,
            )
        else:
            val_auc = float("nan")
        stats = EpochStats(epoch, train_loss, val_auc)
        history.append(stats)
        logger.info("epoch %d train_loss %.6f val_auc %.6f",
                    epoch, train_loss, val_auc)
    return history


def save_model(params: ModelParams, path, dtype: str = "float32") -> None:
    """Persist the whole model; float32 payload by default."""
    scheme = params.embedding
    arrays: dict[str, np.ndarray] = {}
    for i, (w, b) in enumerate(zip(params.bottom.weights, params.bottom.biases)):
        arrays[f"bot_w{i}"] = w.astype(dtype)
        arrays[f"bot_b{i}"] = b.astype(dtype)
    for i, (w, b) in enumerate(zip(params.top.weights, params.top.biases)):
        arrays[f"top_w{i}"] = w.astype(dtype)
        arrays[f"top_b{i}"] = b.astype(dtype)
    for name, arr in scheme.arrays().items():
        arrays[f"emb_{name}"] = arr.astype(dtype)
    meta = {
        "scheme_meta": scheme.meta(),
        "num_dense": params.num_dense,
        "num_sparse_fields": params.num_sparse_fields,
        "bot_layers": len(params.bottom.weights),
        "top_layers": len(params.top.weights),
    }
    token_lists = {
        f"emb_{name}": toks for name, toks in scheme.token_lists().items()
    }
    save_blobs(path, kind="model", meta=meta, arrays=arrays,
               token_lists=token_lists)


def load_model(path) -> ModelParams:
    kind, meta, arrays, token_lists = load_blobs(path)
    if kind != "model":
        raise DataError(f"{path}: expected a model checkpoint, got {kind!r}")
    emb_arrays = {
        name[len("emb_"):]: arr
        for name, arr in arrays.items()
        if name.startswith("emb_")
    }
    emb_tokens = {
        name[len("emb_"):]: toks for name, toks in token_lists.items()
    }
    scheme = scheme_from_state(meta["scheme_meta"], emb_arrays, emb_tokens)
    bottom = MLP(
        [np.asarray(arrays[f"bot_w{i}"], dtype=np.float64)
         for i in range(meta["bot_layers"])],
        [np.asarray(arrays[f"bot_b{i}"], dtype=np.float64)
         for i in range(meta["bot_layers"])],
    )
    top = MLP(
        [np.asarray(arrays[f"top_w{i}"], dtype=np.float64)
         for i in range(meta["top_layers"])],
        [np.asarray(arrays[f"top_b{i}"], dtype=np.float64)
         for i in range(meta["top_layers"])],
    )
    return ModelParams(
        bottom, top, scheme, meta["num_sparse_fields"], meta["num_dense"]
    )
