"""scikit-learn front end for the embedding network."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import metrics, model
from .daal import DaalConfig, TotalLossWeights


class DAALEmbedder(TransformerMixin, ClassifierMixin, BaseEstimator):
    """Learn a low-dimensional embedding with a softmax head plus an optional
    metric-learning term (adaptive line segments by default).

    ``transform`` returns embeddings, ``predict`` the argmax of the classifier
    head.  Labels may be arbitrary hashables; they are encoded internally.

    Parameters
    ----------
    loss : str, default="softmax+daal"
        One of :data:`daalml.model.LOSS_NAMES`.
    hidden_dims : tuple of int, default=(64, 32)
    embedding_dim : int, default=8
    dropout : float, default=0.2
        Dropout rate applied after every hidden layer.
    lr, momentum, batch_size, epochs :
        SGD settings.
    delta, tau, eta, lambda_inter, init_length, intra_mode :
        Adaptive-line settings, see :class:`daalml.daal.DaalConfig`.
    lambda_s, lambda_daal : float
        Weights of the head loss and the metric-learning term.
    random_state : int, default=0
    """

    def __init__(self, loss="softmax+daal", hidden_dims=(64, 32), embedding_dim=8, dropout=0.2,
                 lr=0.01, momentum=0.9, batch_size=64, epochs=30,
                 delta=1.5, tau=0.001, eta=5.0, lambda_inter=1.0, init_length=1.0,
                 intra_mode="segment", lambda_s=1.0, lambda_daal=0.01, random_state=0):
        self.loss = loss
        self.hidden_dims = hidden_dims
        self.embedding_dim = embedding_dim
        self.dropout = dropout
        self.lr = lr
        self.momentum = momentum
        self.batch_size = batch_size
        self.epochs = epochs
        self.delta = delta
        self.tau = tau
        self.eta = eta
        self.lambda_inter = lambda_inter
        self.init_length = init_length
        self.intra_mode = intra_mode
        self.lambda_s = lambda_s
        self.lambda_daal = lambda_daal
        self.random_state = random_state

    def _train_config(self) -> model.TrainConfig:
        return model.TrainConfig(
            lr=self.lr, momentum=self.momentum, batch_size=self.batch_size, epochs=self.epochs,
            seed=int(self.random_state), loss=self.loss,
            weights=TotalLossWeights(self.lambda_s, self.lambda_daal),
            daal=DaalConfig(self.delta, self.tau, self.eta, self.lambda_inter,
                            self.init_length, self.intra_mode),
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.label_encoder_ = LabelEncoder().fit(y)
        self.classes_ = self.label_encoder_.classes_
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        codes = self.label_encoder_.transform(y)
        hidden = list(self.hidden_dims)
        spec = model.NetworkSpec(X.shape[1], hidden, self.embedding_dim, len(self.classes_),
                                 [self.dropout] * len(hidden))
        self.network_, self.segments_, self.history_ = model.train(spec, X, codes, self._train_config())
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        return model.embed(self.network_, X)

    def decision_function(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        return model.forward(self.network_, X, "eval")[1]

    def predict_proba(self, X):
        z = self.decision_function(X)
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def evaluate(self, X, y, Ks=metrics.DEFAULT_KS) -> metrics.EvalReport:
        """NMI and Recall@K of the embeddings of ``X`` against ``y``."""
        return metrics.evaluate(self.transform(X), np.asarray(y), Ks, seed=int(self.random_state))
