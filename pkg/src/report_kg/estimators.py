"""Scikit-learn style estimators wrapping the training pipelines.

``GraphReportClassifier`` is the text-side multi-label classifier: fit on a
list of reports (or ``(language, text)`` pairs) with a 14-column binary label
matrix, then ``predict_proba`` on new reports.  ``VkdImageClassifier`` is the
image-side branch: fit on image feature matrices, optionally distilling from
paired reports, then predict from image features alone.

Both inherit ``get_params``/``set_params`` from ``sklearn.base.BaseEstimator``
so they compose with model selection utilities.  Resources (ontology,
embedding table) are constructor parameters and may be file paths or loaded
objects; by default the bundled samples are used.
"""

import numpy as np
from sklearn.base import BaseEstimator

from .corpus import Corpus, split_corpus
from .embeddings import EmbeddingTable, load_bundled_embeddings
from .errors import DataError
from .extract import N_LABELS, Report
from .metrics import macro_auc
from .ontology import Ontology, load_bundled_ontology, load_ontology
from .train import TrainConfig, build_graphs, predict_proba, train
from .vkd import VkdTrainConfig, predict_image_proba, train_vkd


def _as_reports(X) -> list:
    """Accept Report objects or (language, text) pairs."""
    reports = []
    for i, item in enumerate(X):
        if isinstance(item, Report):
            reports.append(item)
        elif isinstance(item, (tuple, list)) and len(item) == 2:
            reports.append(Report(id=f"x{i:06d}", language=item[0], text=item[1]))
        else:
            raise DataError(f"item {i}: expected a Report or a "
                            f"(language, text) pair, got {type(item).__name__}")
    return reports


def _check_label_matrix(y, n_rows: int) -> np.ndarray:
    arr = np.asarray(y)
    if arr.shape != (n_rows, N_LABELS):
        raise DataError(f"labels must have shape ({n_rows}, {N_LABELS}), "
                        f"got {arr.shape}")
    if not np.isin(arr, (0, 1)).all():
        raise DataError("labels must be 0/1")
    return arr.astype(int)


def _with_labels(reports, y) -> list:
    if y is None:
        missing = [r.id for r in reports if r.labels is None]
        if missing:
            raise DataError(f"no labels given and reports {missing[:3]} carry none")
        return reports
    arr = _check_label_matrix(y, len(reports))
    return [Report(id=r.id, language=r.language, text=r.text,
                   labels=tuple(int(v) for v in row))
            for r, row in zip(reports, arr)]


def _resolve_ontology(value) -> Ontology:
    if value is None:
        return load_bundled_ontology()
    if isinstance(value, Ontology):
        return value
    return load_ontology(value)


def _resolve_embeddings(value) -> EmbeddingTable:
    if value is None:
        return load_bundled_embeddings()
    if isinstance(value, EmbeddingTable):
        return value
    return EmbeddingTable.load(value)


class GraphReportClassifier(BaseEstimator):
    """Multi-label report classifier over ontology-grounded graphs."""

    def __init__(self, ontology=None, embeddings=None, n_layers=1, hidden=512,
                 lr=1e-4, batch_size=16, max_epochs=100,
                 early_stop_tolerance=0.01, patience=5, dropout=0.5,
                 validation_fraction=0.1, threshold=0.5, seed=0,
                 use_global=True, use_sentence=True, use_concept_edges=True,
                 workers=1):
        self.ontology = ontology
        self.embeddings = embeddings
        self.n_layers = n_layers
        self.hidden = hidden
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.early_stop_tolerance = early_stop_tolerance
        self.patience = patience
        self.dropout = dropout
        self.validation_fraction = validation_fraction
        self.threshold = threshold
        self.seed = seed
        self.use_global = use_global
        self.use_sentence = use_sentence
        self.use_concept_edges = use_concept_edges
        self.workers = workers

    def _config(self) -> TrainConfig:
        return TrainConfig(
            n_layers=self.n_layers, hidden=self.hidden, lr=self.lr,
            batch_size=self.batch_size, max_epochs=self.max_epochs,
            early_stop_tolerance=self.early_stop_tolerance,
            patience=self.patience, dropout=self.dropout, seed=self.seed,
            use_global=self.use_global, use_sentence=self.use_sentence,
            use_concept_edges=self.use_concept_edges, workers=self.workers)

    def fit(self, X, y=None):
        reports = _with_labels(_as_reports(X), y)
        ontology = _resolve_ontology(self.ontology)
        embeddings = _resolve_embeddings(self.embeddings)
        corpus = Corpus(tuple(reports))
        frac = self.validation_fraction
        if frac > 0:
            train_part, val_part, _ = split_corpus(
                corpus, (1.0 - frac, frac, 0.0), seed=self.seed)
        else:
            train_part, val_part = corpus, Corpus(())
        result = train(self._config(), ontology, embeddings, train_part,
                       val_part)
        self.ontology_ = ontology
        self.embeddings_ = embeddings
        self.model_ = result.model
        self.records_ = result.records
        self.best_val_auc_ = result.best_val_auc
        self.n_parameters_ = result.param_count
        return self

    def _graphs(self, X):
        if not hasattr(self, "model_"):
            raise DataError("estimator is not fitted; call fit first")
        corpus = Corpus(tuple(_as_reports(X)))
        return build_graphs(self.ontology_, self.embeddings_, corpus,
                            self.model_.ablation, self.workers)

    def predict_proba(self, X) -> np.ndarray:
        graphs = self._graphs(X)
        return predict_proba(self.model_, graphs)

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) >= self.threshold).astype(int)

    def score(self, X, y=None) -> float:
        """Macro ROC-AUC over the 14 labels."""
        reports = _with_labels(_as_reports(X), y)
        labels = np.array([r.labels for r in reports])
        return macro_auc(self.predict_proba(reports), labels)


class VkdImageClassifier(BaseEstimator):
    """Image-branch classifier, optionally distilled from paired reports."""

    def __init__(self, ontology=None, embeddings=None, mode="vkd", n_layers=1,
                 hidden=128, latent_dim=32, image_hidden=128,
                 decoder_hidden=64, beta=1.0, beta_warmup=0.1, lr=1e-3,
                 batch_size=16, max_epochs=30, early_stop_tolerance=0.01,
                 patience=5, dropout=0.5, validation_fraction=0.1,
                 threshold=0.5, seed=0):
        self.ontology = ontology
        self.embeddings = embeddings
        self.mode = mode
        self.n_layers = n_layers
        self.hidden = hidden
        self.latent_dim = latent_dim
        self.image_hidden = image_hidden
        self.decoder_hidden = decoder_hidden
        self.beta = beta
        self.beta_warmup = beta_warmup
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.early_stop_tolerance = early_stop_tolerance
        self.patience = patience
        self.dropout = dropout
        self.validation_fraction = validation_fraction
        self.threshold = threshold
        self.seed = seed

    def fit(self, X, y, reports=None):
        """Fit on image features X (n, image_dim) and labels y (n, 14).

        ``reports`` supplies the paired report per row; required when
        ``mode='vkd'``, ignored for the image-only baseline."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise DataError(f"image features must be 2-D, got shape {X.shape}")
        y = _check_label_matrix(y, X.shape[0])
        if self.mode == "vkd":
            if reports is None:
                raise DataError("mode='vkd' needs paired reports")
            reports = _as_reports(reports)
            if len(reports) != X.shape[0]:
                raise DataError("reports must align with image feature rows")
        else:
            reports = [Report(id=f"x{i:06d}", language="en", text="")
                       for i in range(X.shape[0])]
        reports = _with_labels(reports, y)

        ontology = _resolve_ontology(self.ontology)
        embeddings = _resolve_embeddings(self.embeddings)
        cfg = VkdTrainConfig(
            n_layers=self.n_layers, hidden=self.hidden,
            latent_dim=self.latent_dim, image_dim=X.shape[1],
            image_hidden=self.image_hidden, decoder_hidden=self.decoder_hidden,
            beta=self.beta, beta_warmup=self.beta_warmup, lr=self.lr,
            batch_size=self.batch_size, max_epochs=self.max_epochs,
            early_stop_tolerance=self.early_stop_tolerance,
            patience=self.patience, dropout=self.dropout, seed=self.seed)

        order = np.arange(len(reports))
        n_val = int(len(reports) * self.validation_fraction)
        rng_order = sorted(order, key=lambda i: reports[i].id)
        val_idx = set(rng_order[-n_val:]) if n_val else set()
        tr_idx = [i for i in order if i not in val_idx]
        va_idx = [i for i in order if i in val_idx]
        tr = Corpus(tuple(reports[i] for i in tr_idx))
        va = Corpus(tuple(reports[i] for i in va_idx))
        result = train_vkd(cfg, self.mode, ontology, embeddings, tr, va,
                           X[tr_idx], X[va_idx])
        self.model_ = result.model
        self.records_ = result.records
        self.best_val_auc_ = result.best_val_auc
        return self

    def predict_proba(self, X) -> np.ndarray:
        if not hasattr(self, "model_"):
            raise DataError("estimator is not fitted; call fit first")
        return predict_image_proba(self.model_, np.asarray(X, dtype=np.float64))

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) >= self.threshold).astype(int)

    def score(self, X, y) -> float:
        y = _check_label_matrix(y, np.asarray(X).shape[0])
        return macro_auc(self.predict_proba(X), y)
