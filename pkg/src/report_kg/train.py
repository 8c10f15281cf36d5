"""Training loop for the report classifier.

Reports are processed one graph at a time in report-id order, gradients
accumulate over each batch, and Adam applies the batch-mean update.  After
every epoch the validation macro-AUC drives early stopping: training stops
once `patience` consecutive epochs fail to beat the last significant best by
the relative tolerance.  The returned model carries the parameters from the
epoch with the highest raw validation AUC.

Everything is derived from the run seed; two runs with the same seed, config
and data produce identical epoch records and identical checkpoints.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .classifier import (MlpParams, DenseLayer, bce_loss, classify_report,
                         count_parameters, forward_logits, init_mlp)
from .corpus import Corpus
from .embeddings import EmbeddingTable
from .errors import ConfigError, CorpusError, DataError, NumericError
from .extract import extract_concepts, split_sentences
from .gat import GatLayerParams, GatStack, init_gat_stack
from .graph import AblationConfig, build_graph
from .metrics import macro_auc
from .ontology import Ontology
from .rng import derive_rng


@dataclass(frozen=True)
class TrainConfig:
    n_layers: int = 1
    hidden: int = 512
    lr: float = 1e-4
    batch_size: int = 16
    max_epochs: int = 100
    early_stop_tolerance: float = 0.01  # relative improvement that counts
    patience: int = 5
    dropout: float = 0.5
    leaky_slope: float = 0.2
    seed: int = 0
    use_global: bool = True
    use_sentence: bool = True
    use_concept_edges: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.early_stop_tolerance <= 0:
            raise ConfigError("early_stop_tolerance must be positive")
        if self.patience < 1:
            raise ConfigError("patience must be at least 1")

    def ablation(self) -> AblationConfig:
        return AblationConfig(use_global=self.use_global,
                              use_sentence=self.use_sentence,
                              use_concept_edges=self.use_concept_edges)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_macro_auc: float
    wall_time: float


class EarlyStopper:
    """Stops after `patience` epochs without a >= tolerance relative gain."""

    def __init__(self, tolerance: float, patience: int):
        self.tolerance = tolerance
        self.patience = patience
        self.base = None
        self.stale = 0

    def update(self, value: float) -> bool:
        """Record an epoch value; True when training should stop."""
        if self.base is None or value >= self.base * (1.0 + self.tolerance):
            self.base = value
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.patience


@dataclass
class ClassifierModel:
    stack: GatStack
    mlp: MlpParams
    ablation: AblationConfig
    feature_dim: int

    def parameters(self) -> list:
        return self.stack.parameters() + self.mlp.parameters()

    def save(self, path, extra_meta: dict | None = None):
        meta = {
            "kind": "classifier",
            "n_layers": self.stack.n_layers,
            "hidden": self.stack.hidden,
            "feature_dim": self.feature_dim,
            "dropout": self.stack.dropout,
            "leaky_slope": self.stack.layers[0].leaky_slope,
            "mlp_dims": [layer.W.shape[0] for layer in self.mlp.layers],
            "ablation": asdict(self.ablation),
        }
        meta.update(extra_meta or {})
        save_checkpoint(path, {name: t.data for name, t in self.parameters()},
                        meta)

    @classmethod
    def load(cls, path) -> tuple:
        tensors, meta = load_checkpoint(path)
        if meta.get("kind") != "classifier":
            raise DataError(f"{path}: not a classifier checkpoint")
        layers = [GatLayerParams(W=T.Tensor(tensors[f"gat.{i}.W"], requires_grad=True),
                                 W_att=T.Tensor(tensors[f"gat.{i}.W_att"], requires_grad=True),
                                 leaky_slope=meta["leaky_slope"])
                  for i in range(meta["n_layers"])]
        stack = GatStack(layers=layers, dropout=meta["dropout"])
        mlp = MlpParams([DenseLayer(W=T.Tensor(tensors[f"mlp.{i}.W"], requires_grad=True),
                                    b=T.Tensor(tensors[f"mlp.{i}.b"], requires_grad=True))
                         for i in range(len(meta["mlp_dims"]))])
        model = cls(stack=stack, mlp=mlp,
                    ablation=AblationConfig(**meta["ablation"]),
                    feature_dim=meta["feature_dim"])
        return model, meta


@dataclass
class TrainResult:
    model: ClassifierModel
    records: list
    best_epoch: int
    best_val_auc: float
    param_count: int
    stopped_early: bool


def build_graphs(ontology: Ontology, emb: EmbeddingTable, corpus: Corpus,
                 ablation: AblationConfig = AblationConfig(),
                 workers: int = 1) -> list:
    """One report graph per corpus report, in corpus order."""

    def one(report):
        mentions = extract_concepts(ontology, report)
        n_sentences = len(split_sentences(report.text))
        return build_graph(ontology, mentions, n_sentences, emb, ablation)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, corpus.reports))
    return [one(r) for r in corpus.reports]


def predict_proba(model: ClassifierModel, graphs: list) -> np.ndarray:
    rows = [classify_report(model.stack, model.mlp, g).probabilities
            for g in graphs]
    return np.stack(rows) if rows else np.zeros((0, 14))


def _snapshot(model: ClassifierModel) -> dict:
    return {name: t.data.copy() for name, t in model.parameters()}


def _restore(model: ClassifierModel, snapshot: dict):
    for name, t in model.parameters():
        t.data = snapshot[name].copy()


def train(cfg: TrainConfig, ontology: Ontology, emb: EmbeddingTable,
          train_corpus: Corpus, val_corpus: Corpus,
          log=None) -> TrainResult:
    if len(train_corpus) == 0:
        raise CorpusError("training split is empty")
    overlap = set(train_corpus.ids()) & set(val_corpus.ids())
    if overlap:
        raise CorpusError(f"train/val splits overlap: {sorted(overlap)[:3]}")

    order = sorted(train_corpus.reports, key=lambda r: r.id)
    train_graphs = {r.id: g for r, g in zip(
        train_corpus.reports,
        build_graphs(ontology, emb, train_corpus, cfg.ablation(), cfg.workers))}
    val_graphs = build_graphs(ontology, emb, val_corpus, cfg.ablation(),
                              cfg.workers)
    val_labels = val_corpus.label_matrix() if len(val_corpus) else None

    model = ClassifierModel(
        stack=init_gat_stack(cfg.n_layers, emb.dim, cfg.hidden, cfg.seed,
                             dropout=cfg.dropout, leaky_slope=cfg.leaky_slope),
        mlp=init_mlp(cfg.hidden, cfg.seed),
        ablation=cfg.ablation(), feature_dim=emb.dim)
    params = [t for _, t in model.parameters()]
    opt = T.Adam(params, lr=cfg.lr)
    stopper = EarlyStopper(cfg.early_stop_tolerance, cfg.patience)

    records = []
    best_auc, best_epoch, best_params = -1.0, 0, _snapshot(model)
    stopped_early = False
    for epoch in range(1, cfg.max_epochs + 1):
        started = time.perf_counter()
        losses = []
        for i in range(0, len(order), cfg.batch_size):
            batch = order[i:i + cfg.batch_size]
            opt.zero_grad()
            for report in batch:
                rng = derive_rng(cfg.seed, "dropout", epoch, report.id)
                logits = forward_logits(model.stack, model.mlp,
                                        train_graphs[report.id],
                                        train=True, rng=rng)
                loss = bce_loss(logits, report.labels)
                value = float(loss.data)
                if not np.isfinite(value):
                    raise NumericError(f"non-finite loss at epoch {epoch}, "
                                       f"report {report.id}")
                losses.append(value)
                loss.backward()
            opt.step(grad_scale=1.0 / len(batch))

        if val_labels is not None and len(val_labels):
            val_auc = macro_auc(predict_proba(model, val_graphs), val_labels)
            val_auc = 0.0 if val_auc is None else val_auc
        else:
            val_auc = 0.0
        record = EpochRecord(epoch=epoch, train_loss=float(np.mean(losses)),
                             val_macro_auc=val_auc,
                             wall_time=time.perf_counter() - started)
        records.append(record)
        if log is not None:
            log(f"epoch {epoch}: loss {record.train_loss:.4f} "
                f"val_auc {val_auc:.4f} ({record.wall_time:.1f}s)")
        if val_auc > best_auc:
            best_auc, best_epoch, best_params = val_auc, epoch, _snapshot(model)
        if stopper.update(val_auc):
            stopped_early = True
            break

    _restore(model, best_params)
    return TrainResult(model=model, records=records, best_epoch=best_epoch,
                       best_val_auc=best_auc,
                       param_count=count_parameters(model.stack, model.mlp),
                       stopped_early=stopped_early)


def predict_report(model: ClassifierModel, ontology: Ontology,
                   emb: EmbeddingTable, report):
    mentions = extract_concepts(ontology, report)
    n_sentences = len(split_sentences(report.text))
    g = build_graph(ontology, mentions, n_sentences, emb, model.ablation)
    return classify_report(model.stack, model.mlp, g)


def benchmark_inference(model: ClassifierModel, ontology: Ontology,
                        emb: EmbeddingTable, corpus: Corpus,
                        repetitions: int = 3) -> float:
    """Median samples-per-second over the full text-to-prediction pipeline."""
    if len(corpus) < 10:
        raise CorpusError("benchmark needs at least 10 reports")
    rates = []
    for _ in range(repetitions):
        started = time.perf_counter()
        for report in corpus:
            predict_report(model, ontology, emb, report)
        rates.append(len(corpus) / (time.perf_counter() - started))
    return float(np.median(rates))
