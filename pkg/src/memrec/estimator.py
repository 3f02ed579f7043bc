"""Scikit-learn style estimator facade over the trainer.

CTRClassifier accepts a Dataset (or an iterable of Records) and exposes the
usual fit / predict_proba / predict / get_params surface, so the pipeline
composes with sklearn tooling (clone, grid search, calibration).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .data import Dataset
from .encoder import DEFAULT_HASH_SEED, EncoderConfig
from .model import (
    ModelParams,
    build_model,
    load_model,
    predict_scores,
    save_model,
    train,
)
from .schemes import make_scheme

DEFAULT_BOT_HIDDEN = (64, 32)
DEFAULT_TOP = (128, 64, 1)


def as_dataset(X, y=None) -> Dataset:
    """Coerce estimator input to a Dataset; y overrides labels if given."""
    if isinstance(X, Dataset):
        ds = X
    else:
        ds = Dataset.from_records(X)
    if y is not None:
        y = np.asarray(y, dtype=np.int8)
        if y.shape != (ds.num_rows,):
            raise ValueError(
                f"y has shape {y.shape}, expected ({ds.num_rows},)"
            )
        ds = Dataset(y, ds.dense, ds.sparse)
    return ds


class CTRClassifier(BaseEstimator, ClassifierMixin):
    """CTR network with a pluggable categorical embedding scheme.

    Parameters mirror the training config keys. mlp_bot, when None, defaults
    to (num_dense, 64, 32, l) derived at fit time; mlp_top lists the layers
    after the interaction (its input size is derived).
    """

    def __init__(
        self,
        embedding_scheme: str = "memrec",
        k: int = 2,
        k_prime: int = 2,
        d: int = 4096,
        d_prime: int = 4096,
        l: int = 16,
        hash_seed: int = DEFAULT_HASH_SEED,
        hashtrick_rows: int = 65536,
        qr_buckets: int = 64,
        freeze_alpha: bool = False,
        mlp_bot=None,
        mlp_top=DEFAULT_TOP,
        lr: float = 0.25,
        batch_size: int = 32,
        epochs: int = 3,
        init_seed: int = 0,
        shuffle_seed: int = 0,
    ):
        self.embedding_scheme = embedding_scheme
        self.k = k
        self.k_prime = k_prime
        self.d = d
        self.d_prime = d_prime
        self.l = l
        self.hash_seed = hash_seed
        self.hashtrick_rows = hashtrick_rows
        self.qr_buckets = qr_buckets
        self.freeze_alpha = freeze_alpha
        self.mlp_bot = mlp_bot
        self.mlp_top = mlp_top
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.init_seed = init_seed
        self.shuffle_seed = shuffle_seed

    def fit(self, X, y=None, validation=None):
        ds = as_dataset(X, y)
        cfg = EncoderConfig(
            k=self.k,
            k_prime=self.k_prime,
            d=self.d,
            d_prime=self.d_prime,
            l=self.l,
            hash_seed=self.hash_seed,
        )
        scheme = make_scheme(
            self.embedding_scheme,
            l=self.l,
            cfg=cfg,
            init_seed=self.init_seed,
            hashtrick_rows=self.hashtrick_rows,
            qr_buckets=self.qr_buckets,
            freeze_alpha=self.freeze_alpha,
        )
        scheme.build(ds.sparse)
        bot = (
            tuple(self.mlp_bot)
            if self.mlp_bot is not None
            else (ds.num_dense,) + DEFAULT_BOT_HIDDEN + (self.l,)
        )
        params = build_model(
            scheme, ds.num_dense, ds.num_fields, bot, tuple(self.mlp_top),
            self.init_seed,
        )
        val_ds = as_dataset(validation) if validation is not None else None
        self.history_ = train(
            params,
            ds,
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            shuffle_seed=self.shuffle_seed,
            val_dataset=val_ds,
        )
        self.params_ = params
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = ds.num_dense
        return self

    def _check_fitted(self) -> ModelParams:
        if not hasattr(self, "params_"):
            raise NotFittedError(
                "This CTRClassifier instance is not fitted yet; call fit first."
            )
        return self.params_

    def predict_proba(self, X) -> np.ndarray:
        params = self._check_fitted()
        ds = as_dataset(X)
        p = predict_scores(params, ds)
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)

    def save_checkpoint(self, path, dtype: str = "float32") -> None:
        save_model(self._check_fitted(), path, dtype=dtype)

    @classmethod
    def from_checkpoint(cls, path) -> "CTRClassifier":
        """Rebuild a fitted estimator from a checkpoint; hyperparameters
        that only influence training are left at their defaults."""
        params = load_model(path)
        est = cls(embedding_scheme=params.embedding.name, l=params.embedding.embed_dim)
        est.params_ = params
        est.classes_ = np.array([0, 1])
        est.n_features_in_ = params.num_dense
        return est
