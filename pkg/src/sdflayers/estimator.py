"""scikit-learn style wrappers around the network and the field transforms."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from sdflayers.boundary import ExtractionConfig, extract, pixelwise_extract
from sdflayers.nn.network import FIELD_HEADS, HEADS, PROBABILISTIC_HEADS, TinyUNet, TinyUNetConfig
from sdflayers.nn.train import TrainConfig, TrainResult, load_checkpoint, predict_batches, save_checkpoint, train
from sdflayers.prob import DEFAULT_DELTA, ProbabilisticSDF, propagate_uncertainty
from sdflayers.sdf import CONSTRUCTIONS, signed_distance


def check_scans(X):
    """Validate a scan stack and return it as float64 ``(N, Y, X)``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or 0 in X.shape:
        raise ValueError(f"expected scans shaped (N, Y, X), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("scans contain NaN or inf")
    return X


def check_curves(y, X=None):
    """Validate curves ``(N, K, X)``, optionally against a scan stack."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 2:
        y = y[None]
    if y.ndim != 3 or 0 in y.shape:
        raise ValueError(f"expected curves shaped (N, K, X), got {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ValueError("curves contain NaN or inf")
    if X is not None:
        if y.shape[0] != X.shape[0]:
            raise ValueError(f"{X.shape[0]} scans but {y.shape[0]} curve sets")
        if y.shape[2] != X.shape[2]:
            raise ValueError(f"curve length {y.shape[2]} != scan width {X.shape[2]}")
    return y


class LayerSegmenter(BaseEstimator):
    """Multi-layer boundary segmentation with one of five output heads.

    ``fit(X, y)`` takes scans ``(N, Y, X)`` and boundary curves ``(N, K, X)``;
    ``predict`` returns curves of the same layout. Probabilistic heads also
    offer ``predict_distribution`` (mean, sd and missing-crossing flags).
    """

    def __init__(self, head="p_sdf", levels=3, base_channels=8, epochs=20, batch_size=8,
                 learning_rate=1e-3, delta=DEFAULT_DELTA, noise_sd=0.0, flip=False, sigma_warmup=0,
                 lr_schedule="constant", construction="vertical", extraction="soft", s_const=2.0,
                 level=0.0, seed=0):
        self.head = head
        self.levels = levels
        self.base_channels = base_channels
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.delta = delta
        self.noise_sd = noise_sd
        self.flip = flip
        self.sigma_warmup = sigma_warmup
        self.lr_schedule = lr_schedule
        self.construction = construction
        self.extraction = extraction
        self.s_const = s_const
        self.level = level
        self.seed = seed

    def _net_config(self, shape, n_layers):
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        return TinyUNetConfig(height=shape[0], width=shape[1], levels=self.levels,
                              base_channels=self.base_channels, n_layers=n_layers, head=self.head,
                              seed=self.seed)

    def train_config(self):
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, learning_rate=self.learning_rate,
                           delta=self.delta, noise_sd=self.noise_sd, flip=self.flip,
                           construction=self.construction, sigma_warmup=self.sigma_warmup,
                           lr_schedule=self.lr_schedule, seed=self.seed)

    def extraction_config(self):
        return ExtractionConfig(level=self.level, s_const=self.s_const, mode=self.extraction)

    def fit(self, X, y, callback=None):
        X = check_scans(X)
        y = check_curves(y, X)
        model = TinyUNet(self._net_config(X.shape[1:], y.shape[1]))
        result = train(model, X, y, self.train_config(), callback=callback)
        self._set_model(model, result.loss_trace)
        return self

    def _set_model(self, model, trace):
        self.model_ = model
        self.loss_trace_ = list(trace)
        self.n_layers_ = model.config.n_layers
        self.input_shape_ = (model.config.height, model.config.width)

    def _check_input(self, X):
        check_is_fitted(self, "model_")
        X = check_scans(X)
        if X.shape[1:] != self.input_shape_:
            raise ValueError(f"scans are {X.shape[1:]}, model expects {self.input_shape_}")
        return X

    def predict_fields(self, X, batch_size=16):
        """Raw network outputs as numpy arrays (``mu`` and, if present, ``sigma``)."""
        X = self._check_input(X)
        out = predict_batches(self.model_, X, batch_size)
        out.pop("logits", None)
        return out

    def predict_with_flags(self, X):
        """Curves ``(N, K, X)`` and missing-crossing flags of the same shape."""
        out = self.predict_fields(X)
        mu = out["mu"]
        n, k = mu.shape[:2]
        if self.head not in FIELD_HEADS:
            return mu.copy(), np.zeros(mu.shape, dtype=bool)
        if self.head == "pixelwise":
            curves = pixelwise_extract(mu.reshape(n * k, *mu.shape[2:])).reshape(n, k, -1)
            return curves, np.zeros(curves.shape, dtype=bool)
        cfg = self.extraction_config()
        curves = np.empty((n, k, mu.shape[-1]))
        flags = np.empty(curves.shape, dtype=bool)
        for i in range(n):
            for j in range(k):
                curves[i, j], flags[i, j] = extract(mu[i, j], cfg)
        return curves, flags

    def predict(self, X):
        return self.predict_with_flags(X)[0]

    def predict_distribution(self, X):
        """``(mu, sigma, flags)`` curve stacks; probabilistic heads only."""
        if self.head not in PROBABILISTIC_HEADS:
            raise ValueError(f"head {self.head!r} does not predict a variance")
        out = self.predict_fields(X)
        mu, sigma = out["mu"], out["sigma"]
        if self.head == "p_regr":
            return mu.copy(), sigma.copy(), np.zeros(mu.shape, dtype=bool)
        cfg = self.extraction_config()
        n, k, _, w = mu.shape
        cm, cs = np.empty((n, k, w)), np.empty((n, k, w))
        flags = np.empty((n, k, w), dtype=bool)
        for i in range(n):
            for j in range(k):
                pc = propagate_uncertainty(ProbabilisticSDF(mu[i, j], sigma[i, j]), cfg)
                cm[i, j], cs[i, j], flags[i, j] = pc.mu, pc.sigma, pc.flags
        return cm, cs, flags

    def score(self, X, y):
        """Negative mean absolute error over unflagged columns."""
        pred, flags = self.predict_with_flags(X)
        y = check_curves(y)
        ok = ~flags & np.isfinite(pred)
        return -float(np.mean(np.abs(pred[ok] - y[ok])))

    def save(self, directory):
        check_is_fitted(self, "model_")
        result = TrainResult(list(self.loss_trace_), [], len(self.loss_trace_))
        save_checkpoint(directory, self.model_, result, self.train_config())

    @classmethod
    def load(cls, directory, **params):
        model, tc, trace = load_checkpoint(directory)
        nc = model.config
        kw = dict(head=nc.head, levels=nc.levels, base_channels=nc.base_channels, seed=nc.seed)
        if tc is not None:
            kw.update(epochs=tc.epochs, batch_size=tc.batch_size, learning_rate=tc.learning_rate,
                      delta=tc.delta, noise_sd=tc.noise_sd, flip=tc.flip,
                      construction=tc.construction, sigma_warmup=tc.sigma_warmup, lr_schedule=tc.lr_schedule)
        kw.update(params)
        est = cls(**kw)
        est._set_model(model, trace)
        return est


class SDFTransformer(TransformerMixin, BaseEstimator):
    """Curves ``(N, K, X)`` to signed distance fields ``(N, K, Y, X)``."""

    def __init__(self, height=64, construction="vertical", method="danielsson"):
        self.height = height
        self.construction = construction
        self.method = method

    def fit(self, X, y=None):
        X = check_curves(X)
        if self.construction not in CONSTRUCTIONS:
            raise ValueError(f"unknown construction {self.construction!r}")
        self.n_features_in_ = X.shape[2]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = check_curves(X)
        if X.shape[2] != self.n_features_in_:
            raise ValueError(f"curves have {X.shape[2]} columns, fitted on {self.n_features_in_}")
        shape = (self.height, X.shape[2])
        out = np.empty(X.shape[:2] + shape)
        for i in range(X.shape[0]):
            for k in range(X.shape[1]):
                out[i, k] = signed_distance(X[i, k], shape, self.construction, self.method).values
        return out


class BoundaryExtractor(TransformerMixin, BaseEstimator):
    """Fields ``(N, K, Y, X)`` back to curves ``(N, K, X)``."""

    def __init__(self, mode="soft", s_const=2.0, level=0.0):
        self.mode = mode
        self.s_const = s_const
        self.level = level

    def fit(self, X, y=None):
        self.config_ = ExtractionConfig(self.level, self.s_const, self.mode)
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        F = np.asarray(X, dtype=np.float64)
        if F.ndim != 4:
            raise ValueError(f"expected fields shaped (N, K, Y, X), got {F.shape}")
        out = np.empty(F.shape[:2] + F.shape[3:])
        for i in range(F.shape[0]):
            for k in range(F.shape[1]):
                out[i, k] = extract(F[i, k], self.config_)[0]
        return out
