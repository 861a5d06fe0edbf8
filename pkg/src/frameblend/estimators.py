"""Scikit-learn style estimators wrapping the window classifiers.

The estimators hold hyperparameters in ``__init__`` (so ``get_params`` /
``set_params`` / ``clone`` work), train in ``fit`` on a
:class:`~frameblend.corpus.Corpus`, and predict on plain window arrays,
so fitted models compose with scikit-learn metrics and model selection.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .models import (BLSTMModel, CNNModel, deep_cnn_config, predict_posteriors,
                     wide_cnn_config)
from .trainer import TrainConfig, train_model
from .validation import check_mixture_weights, check_windows


class _WindowClassifierMixin:
    """Prediction surface shared by the fitted window classifiers."""

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError(f"{type(self).__name__} is not fitted")

    def predict_proba(self, X):
        """Posterior matrix (n_windows, n_classes) for stacked windows."""
        self._check_fitted()
        cfg = self.model_.config
        X = check_windows(X, cfg.input_height if hasattr(cfg, "input_height") else cfg.input_dim,
                          cfg.input_width if hasattr(cfg, "input_width") else cfg.window_width)
        return predict_posteriors(self.model_, X)

    def predict(self, X):
        """Argmax class per window; ties resolve to the lowest class id."""
        return self.predict_proba(X).argmax(axis=1)

    def _finish_fit(self, model, state):
        self.model_ = model
        self.history_ = state.history
        self.best_epoch_ = state.best_epoch
        self.classes_ = np.arange(model.config.n_classes)
        return self


class DeepCnnClassifier(_WindowClassifierMixin, BaseEstimator, ClassifierMixin):
    """Deep stack of 3x3 convolutions with 2x2 pooling after each block.

    Trains with Nesterov-momentum SGD under a plateau schedule that
    monitors validation loss. A positive ``blend_weight`` mixes a soft
    cross-entropy term against a teacher's truncated posteriors (passed
    to ``fit`` as ``soft_labels``) with the hard-label term.

    Parameters
    ----------
    filters : tuple of int
        Convolution filters per block.
    convs_per_block : tuple of int
        Convolutions per block; the first two overall are unpadded.
    fc_widths : tuple of int
        Fully connected layer widths before the logits head.
    blend_weight : float in [0, 1]
        Weight of the soft-label term; 0 trains on hard labels only.
    top_classes : int
        Re-truncate the supplied store to this cap (0 keeps it as is).
    coverage_threshold : float
        Re-truncation mass threshold (0 keeps the store's own).
    """

    def __init__(self, filters=(8, 16, 32), convs_per_block=(2, 2, 2),
                 fc_widths=(128, 128), learning_rate=0.02, momentum=0.9,
                 lr_decay=0.7, patience=5, min_learning_rate=5e-5, max_epochs=200,
                 batch_size=64, batches_per_epoch=50, blend_weight=0.0,
                 top_classes=0, coverage_threshold=0.0, random_state=0):
        self.filters = filters
        self.convs_per_block = convs_per_block
        self.fc_widths = fc_widths
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.lr_decay = lr_decay
        self.patience = patience
        self.min_learning_rate = min_learning_rate
        self.max_epochs = max_epochs
        self.batch_size = batch_size
        self.batches_per_epoch = batches_per_epoch
        self.blend_weight = blend_weight
        self.top_classes = top_classes
        self.coverage_threshold = coverage_threshold
        self.random_state = random_state

    def _config(self, n_classes):
        return deep_cnn_config(n_classes=n_classes, filters=tuple(self.filters),
                               convs_per_block=tuple(self.convs_per_block),
                               fc_widths=tuple(self.fc_widths))

    def fit(self, corpus, y=None, soft_labels=None):
        rng = np.random.default_rng(self.random_state)
        model = CNNModel.initialize(self._config(corpus.n_classes), rng)
        config = TrainConfig(batch_size=self.batch_size,
                             batches_per_epoch=self.batches_per_epoch,
                             learning_rate=self.learning_rate, momentum=self.momentum,
                             lr_decay=self.lr_decay, patience=self.patience,
                             min_learning_rate=self.min_learning_rate,
                             max_epochs=self.max_epochs, seed=self.random_state,
                             lam=self.blend_weight, c_max=self.top_classes,
                             tau=self.coverage_threshold)
        model, state = train_model(model, corpus, config, store=soft_labels)
        return self._finish_fit(model, state)


class WideCnnClassifier(_WindowClassifierMixin, BaseEstimator, ClassifierMixin):
    """Two 7x7 convolutions with a 3x1 pool, then four fully connected
    layers; same training schedule as :class:`DeepCnnClassifier`."""

    def __init__(self, filters=16, fc_widths=(64, 64, 64, 64), learning_rate=0.02,
                 momentum=0.9, lr_decay=0.7, patience=5, min_learning_rate=5e-5,
                 max_epochs=200, batch_size=64, batches_per_epoch=50, random_state=0):
        self.filters = filters
        self.fc_widths = fc_widths
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.lr_decay = lr_decay
        self.patience = patience
        self.min_learning_rate = min_learning_rate
        self.max_epochs = max_epochs
        self.batch_size = batch_size
        self.batches_per_epoch = batches_per_epoch
        self.random_state = random_state

    def fit(self, corpus, y=None):
        rng = np.random.default_rng(self.random_state)
        cfg = wide_cnn_config(n_classes=corpus.n_classes, filters=self.filters,
                              fc_widths=tuple(self.fc_widths))
        model = CNNModel.initialize(cfg, rng)
        config = TrainConfig(batch_size=self.batch_size,
                             batches_per_epoch=self.batches_per_epoch,
                             learning_rate=self.learning_rate, momentum=self.momentum,
                             lr_decay=self.lr_decay, patience=self.patience,
                             min_learning_rate=self.min_learning_rate,
                             max_epochs=self.max_epochs, seed=self.random_state)
        model, state = train_model(model, corpus, config)
        return self._finish_fit(model, state)


class BlstmClassifier(_WindowClassifierMixin, BaseEstimator, ClassifierMixin):
    """Deep bidirectional peephole-LSTM over the window, predicting the
    middle frame. Trains under the rollback schedule that monitors
    validation frame error and returns to the best epoch on decay."""

    def __init__(self, hidden_size=32, n_layers=2, learning_rate=0.05, momentum=0.9,
                 lr_decay=2.0 / 3.0, patience=3, min_learning_rate=1e-5,
                 max_epochs=200, batch_size=64, batches_per_epoch=50, random_state=0):
        self.hidden_size = hidden_size
        self.n_layers = n_layers
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.lr_decay = lr_decay
        self.patience = patience
        self.min_learning_rate = min_learning_rate
        self.max_epochs = max_epochs
        self.batch_size = batch_size
        self.batches_per_epoch = batches_per_epoch
        self.random_state = random_state

    def fit(self, corpus, y=None):
        from .models import blstm_config

        rng = np.random.default_rng(self.random_state)
        cfg = blstm_config(n_classes=corpus.n_classes, hidden_size=self.hidden_size,
                           n_layers=self.n_layers, input_dim=corpus.n_channels)
        model = BLSTMModel.initialize(cfg, rng)
        config = TrainConfig(batch_size=self.batch_size,
                             batches_per_epoch=self.batches_per_epoch,
                             learning_rate=self.learning_rate, momentum=self.momentum,
                             lr_decay=self.lr_decay, patience=self.patience,
                             min_learning_rate=self.min_learning_rate,
                             max_epochs=self.max_epochs, seed=self.random_state,
                             monitor="fer", rollback=True)
        model, state = train_model(model, corpus, config)
        return self._finish_fit(model, state)


class EnsembleClassifier(BaseEstimator, ClassifierMixin):
    """Convex posterior mixture of already-fitted window classifiers.

    ``members`` are fitted estimators (anything with ``predict_proba``)
    or raw models; ``weights`` default to uniform. ``fit`` only
    validates, mirroring prefit voting ensembles.
    """

    def __init__(self, members=(), weights=None):
        self.members = members
        self.weights = weights

    def fit(self, X=None, y=None):
        if not self.members:
            raise ValueError("ensemble needs at least one member")
        n = len(self.members)
        self.weights_ = check_mixture_weights(
            np.full(n, 1.0 / n) if self.weights is None else self.weights, n=n)
        self.classes_ = np.arange(self._member_classes(self.members[0]))
        for m in self.members[1:]:
            if self._member_classes(m) != self.classes_.shape[0]:
                raise ValueError("ensemble members disagree on the class count")
        return self

    @staticmethod
    def _member_classes(member):
        if hasattr(member, "classes_"):
            return int(member.classes_.shape[0])
        return int(member.config.n_classes)

    def _member_proba(self, member, X):
        if hasattr(member, "predict_proba"):
            return member.predict_proba(X)
        return predict_posteriors(member, np.asarray(X))

    def predict_proba(self, X):
        if not hasattr(self, "weights_"):
            self.fit()
        out = None
        for w, member in zip(self.weights_, self.members):
            p = w * self._member_proba(member, X)
            out = p if out is None else out + p
        return out

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)
