"""Cross-modal distillation from report graphs into an image-feature branch.

Training couples two Gaussian heads over a shared latent space: a posterior
conditioned on the encoded report graph and a prior conditioned on image
features.  The decoder classifies from image features concatenated with a
latent sample drawn (reparameterised) from the posterior, while a KL term
pulls the image-side prior toward the report-side posterior.  At inference
time only the image branch runs: the latent comes from the prior, so no
report, ontology or graph code is touched.

The image branch here consumes plain feature vectors.  A synthetic generator
maps label vectors through a fixed random linear map plus Gaussian noise,
standing in for a real image encoder at desk scale.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .classifier import DenseLayer, Prediction, init_dense
from .corpus import Corpus
from .errors import ConfigError, CorpusError, DataError, NumericError
from .gat import GatStack, encode, init_gat_stack
from .metrics import macro_auc
from .rng import derive_rng
from .train import EarlyStopper, EpochRecord, build_graphs

LOGVAR_RANGE = 10.0  # log-variances clamp to [-10, 10] before use


@dataclass(frozen=True)
class GaussianParams:
    mu: np.ndarray
    log_var: np.ndarray

    def __post_init__(self):
        if self.mu.shape != self.log_var.shape:
            raise DataError(f"mu {self.mu.shape} and log_var "
                            f"{self.log_var.shape} differ in shape")

    def clamped_log_var(self) -> np.ndarray:
        return np.clip(self.log_var, -LOGVAR_RANGE, LOGVAR_RANGE)


def kl_gaussians(q: GaussianParams, p: GaussianParams) -> float:
    """KL[q || p] between diagonal Gaussians, summed over dimensions."""
    if q.mu.shape != p.mu.shape:
        raise DataError(f"latent dims differ: {q.mu.shape} vs {p.mu.shape}")
    lq, lp = q.clamped_log_var(), p.clamped_log_var()
    vq, vp = np.exp(lq), np.exp(lp)
    per_dim = 0.5 * (lp - lq + (vq + (q.mu - p.mu) ** 2) / vp - 1.0)
    return float(np.sum(per_dim))


def _kl_tensors(mu_q: T.Tensor, lv_q: T.Tensor, mu_p: T.Tensor,
                lv_p: T.Tensor) -> T.Tensor:
    d = mu_q.size
    diff = mu_q - mu_p
    ratio = (lv_q.exp() + diff * diff) * lv_p.scale(-1.0).exp()
    return (lv_p - lv_q + ratio).sum().shift(-float(d)).scale(0.5)


@dataclass
class VkdModel:
    stack: GatStack  # report-graph encoder feeding the posterior
    post_mu: DenseLayer
    post_logvar: DenseLayer
    img_hidden: DenseLayer
    prior_mu: DenseLayer
    prior_logvar: DenseLayer
    dec_hidden: DenseLayer
    dec_out: DenseLayer
    latent_dim: int
    image_dim: int
    feature_dim: int

    def report_parameters(self) -> list:
        return self.stack.parameters() + [
            ("post_mu.W", self.post_mu.W), ("post_mu.b", self.post_mu.b),
            ("post_logvar.W", self.post_logvar.W),
            ("post_logvar.b", self.post_logvar.b)]

    def image_parameters(self) -> list:
        return [("img_hidden.W", self.img_hidden.W),
                ("img_hidden.b", self.img_hidden.b),
                ("prior_mu.W", self.prior_mu.W),
                ("prior_mu.b", self.prior_mu.b),
                ("prior_logvar.W", self.prior_logvar.W),
                ("prior_logvar.b", self.prior_logvar.b),
                ("dec_hidden.W", self.dec_hidden.W),
                ("dec_hidden.b", self.dec_hidden.b),
                ("dec_out.W", self.dec_out.W),
                ("dec_out.b", self.dec_out.b)]

    def parameters(self) -> list:
        return self.report_parameters() + self.image_parameters()

    def save(self, path, extra_meta: dict | None = None):
        meta = {
            "kind": "vkd",
            "n_layers": self.stack.n_layers,
            "hidden": self.stack.hidden,
            "feature_dim": self.feature_dim,
            "dropout": self.stack.dropout,
            "leaky_slope": self.stack.layers[0].leaky_slope,
            "latent_dim": self.latent_dim,
            "image_dim": self.image_dim,
            "image_hidden": self.img_hidden.W.shape[0],
            "decoder_hidden": self.dec_hidden.W.shape[0],
        }
        meta.update(extra_meta or {})
        save_checkpoint(path, {name: t.data for name, t in self.parameters()},
                        meta)

    @classmethod
    def load(cls, path) -> tuple:
        tensors, meta = load_checkpoint(path)
        if meta.get("kind") != "vkd":
            raise DataError(f"{path}: not a distillation checkpoint")
        model = init_vkd_model(
            n_layers=meta["n_layers"], hidden=meta["hidden"],
            feature_dim=meta["feature_dim"], latent_dim=meta["latent_dim"],
            image_dim=meta["image_dim"], image_hidden=meta["image_hidden"],
            decoder_hidden=meta["decoder_hidden"], seed=0,
            dropout=meta["dropout"], leaky_slope=meta["leaky_slope"])
        for name, t in model.parameters():
            t.data = tensors[name].copy()
        return model, meta


def init_vkd_model(n_layers: int, hidden: int, feature_dim: int,
                   latent_dim: int, image_dim: int, image_hidden: int,
                   decoder_hidden: int, seed: int, dropout: float = 0.5,
                   leaky_slope: float = 0.2) -> VkdModel:
    stack = init_gat_stack(n_layers, feature_dim, hidden, seed,
                           dropout=dropout, leaky_slope=leaky_slope)
    mk = lambda tag, i, o: init_dense(derive_rng(seed, "vkd-init", tag), i, o)
    return VkdModel(
        stack=stack,
        post_mu=mk("post_mu", hidden, latent_dim),
        post_logvar=mk("post_logvar", hidden, latent_dim),
        img_hidden=mk("img_hidden", image_dim, image_hidden),
        prior_mu=mk("prior_mu", image_hidden, latent_dim),
        prior_logvar=mk("prior_logvar", image_hidden, latent_dim),
        dec_hidden=mk("dec_hidden", image_dim + latent_dim, decoder_hidden),
        dec_out=mk("dec_out", decoder_hidden, 14),
        latent_dim=latent_dim, image_dim=image_dim, feature_dim=feature_dim)


def _posterior(model: VkdModel, graph, train: bool, rng) -> tuple:
    encoded = encode(model.stack, graph.features, graph.adjacency(),
                     train=train, rng=rng)
    pooled = encoded.max_pool(axis=0, keepdims=True)
    mu = model.post_mu(pooled)
    lv = model.post_logvar(pooled).clip(-LOGVAR_RANGE, LOGVAR_RANGE)
    return mu, lv


def _prior(model: VkdModel, image: T.Tensor) -> tuple:
    h = model.img_hidden(image).elu()
    mu = model.prior_mu(h)
    lv = model.prior_logvar(h).clip(-LOGVAR_RANGE, LOGVAR_RANGE)
    return mu, lv


def _decode(model: VkdModel, image: T.Tensor, z: T.Tensor) -> T.Tensor:
    h = model.dec_hidden(T.concat([image, z], axis=1)).elu()
    return model.dec_out(h)


def _sample(mu: T.Tensor, lv: T.Tensor, eps: np.ndarray) -> T.Tensor:
    return mu + lv.scale(0.5).exp() * T.Tensor(eps)


def elbo_loss(model: VkdModel, graph, image_features, labels, rng,
              train: bool = True, beta: float = 1.0) -> tuple:
    """Distillation loss: reconstruction BCE + beta * KL(posterior || prior).

    Returns (loss tensor, parts dict with float recon/kl)."""
    image = T.Tensor(np.asarray(image_features, dtype=np.float64).reshape(1, -1))
    y = np.asarray(labels, dtype=np.float64).reshape(1, -1)
    mu_q, lv_q = _posterior(model, graph, train, rng)
    mu_p, lv_p = _prior(model, image)
    eps = rng.standard_normal((1, model.latent_dim)) if rng is not None \
        else np.zeros((1, model.latent_dim))
    z = _sample(mu_q, lv_q, eps)
    recon = T.bce_with_logits(_decode(model, image, z), y)
    kl = _kl_tensors(mu_q, lv_q, mu_p, lv_p)
    loss = recon + kl.scale(beta)
    if not np.isfinite(float(loss.data)):
        raise NumericError("non-finite distillation loss")
    return loss, {"recon": float(recon.data), "kl": float(kl.data)}


def image_only_loss(model: VkdModel, image_features, labels, rng) -> T.Tensor:
    """Baseline without report or KL: decode from a prior latent sample."""
    image = T.Tensor(np.asarray(image_features, dtype=np.float64).reshape(1, -1))
    y = np.asarray(labels, dtype=np.float64).reshape(1, -1)
    mu_p, lv_p = _prior(model, image)
    eps = rng.standard_normal((1, model.latent_dim))
    z = _sample(mu_p, lv_p, eps)
    loss = T.bce_with_logits(_decode(model, image, z), y)
    if not np.isfinite(float(loss.data)):
        raise NumericError("non-finite image-branch loss")
    return loss


def posterior_params(model: VkdModel, graph) -> GaussianParams:
    mu, lv = _posterior(model, graph, train=False, rng=None)
    return GaussianParams(mu=mu.data[0].copy(), log_var=lv.data[0].copy())


def prior_params(model: VkdModel, image_features) -> GaussianParams:
    image = T.Tensor(np.asarray(image_features, dtype=np.float64).reshape(1, -1))
    mu, lv = _prior(model, image)
    return GaussianParams(mu=mu.data[0].copy(), log_var=lv.data[0].copy())


def infer_image_only(model: VkdModel, image_features, seed: int = 0,
                     n_samples: int = 1) -> Prediction:
    """Image-branch prediction; the latent comes from the image-side prior.

    With ``n_samples=1`` the prior mean is used directly, so the prediction is
    deterministic.  More samples average decoder probabilities."""
    image = T.Tensor(np.asarray(image_features, dtype=np.float64).reshape(1, -1))
    mu_p, lv_p = _prior(model, image)
    if n_samples <= 1:
        logits = _decode(model, image, mu_p).data[0].copy()
        return Prediction(logits=logits,
                          probabilities=T._stable_sigmoid(logits))
    rng = derive_rng(seed, "image-inference")
    probs = np.zeros(14)
    for _ in range(n_samples):
        z = _sample(mu_p, lv_p, rng.standard_normal((1, model.latent_dim)))
        probs += T._stable_sigmoid(_decode(model, image, z).data[0])
    probs /= n_samples
    clipped = np.clip(probs, 1e-12, 1.0 - 1e-12)
    return Prediction(logits=np.log(clipped / (1.0 - clipped)),
                      probabilities=probs)


# -- synthetic image features ------------------------------------------------


def make_image_features(label_matrix, report_ids, seed: int,
                        dim: int = 256, noise: float = 1.0) -> np.ndarray:
    """Label vectors through a fixed seeded linear map plus Gaussian noise."""
    labels = np.asarray(label_matrix, dtype=np.float64)
    mapping = derive_rng(seed, "image-map", dim).standard_normal((dim, labels.shape[1]))
    rows = []
    for rid, y in zip(report_ids, labels):
        eps = derive_rng(seed, "image-noise", rid).standard_normal(dim)
        rows.append(mapping @ y + noise * eps)
    return np.stack(rows) if rows else np.zeros((0, dim))


# -- training -----------------------------------------------------------------

MODES = ("image_only", "vkd")


@dataclass(frozen=True)
class VkdTrainConfig:
    n_layers: int = 1
    hidden: int = 128
    latent_dim: int = 32
    image_dim: int = 256
    image_hidden: int = 128
    decoder_hidden: int = 64
    beta: float = 1.0
    beta_warmup: float = 0.1  # fraction of total steps to ramp beta linearly
    lr: float = 1e-3
    batch_size: int = 16
    max_epochs: int = 30
    early_stop_tolerance: float = 0.01
    patience: int = 5
    dropout: float = 0.5
    leaky_slope: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.early_stop_tolerance <= 0:
            raise ConfigError("early_stop_tolerance must be positive")
        if self.patience < 1:
            raise ConfigError("patience must be at least 1")
        if not 0.0 <= self.beta_warmup <= 1.0:
            raise ConfigError("beta_warmup must be a fraction in [0, 1]")


@dataclass
class VkdTrainResult:
    model: VkdModel
    mode: str
    records: list
    best_epoch: int
    best_val_auc: float
    stopped_early: bool


def predict_image_proba(model: VkdModel, image_matrix) -> np.ndarray:
    rows = [infer_image_only(model, row).probabilities
            for row in np.asarray(image_matrix, dtype=np.float64)]
    return np.stack(rows) if rows else np.zeros((0, 14))


def train_vkd(cfg: VkdTrainConfig, mode: str, ontology, emb,
              train_corpus: Corpus, val_corpus: Corpus,
              train_images, val_images, log=None) -> VkdTrainResult:
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    if len(train_corpus) == 0:
        raise CorpusError("training split is empty")
    if len(train_images) != len(train_corpus) or len(val_images) != len(val_corpus):
        raise CorpusError("image feature rows must align with corpus reports")

    order = sorted(range(len(train_corpus)),
                   key=lambda i: train_corpus.reports[i].id)
    graphs = None
    if mode == "vkd":
        graphs = build_graphs(ontology, emb, train_corpus)
    labels = train_corpus.label_matrix()
    val_labels = val_corpus.label_matrix() if len(val_corpus) else None
    images = np.asarray(train_images, dtype=np.float64)

    model = init_vkd_model(cfg.n_layers, cfg.hidden, emb.dim, cfg.latent_dim,
                           cfg.image_dim, cfg.image_hidden, cfg.decoder_hidden,
                           cfg.seed, dropout=cfg.dropout,
                           leaky_slope=cfg.leaky_slope)
    params = [t for _, t in (model.parameters() if mode == "vkd"
                             else model.image_parameters())]
    opt = T.Adam(params, lr=cfg.lr)
    stopper = EarlyStopper(cfg.early_stop_tolerance, cfg.patience)

    n_batches = (len(order) + cfg.batch_size - 1) // cfg.batch_size
    total_steps = cfg.max_epochs * n_batches
    warmup_steps = max(1, int(cfg.beta_warmup * total_steps))

    records = []
    best_auc, best_epoch = -1.0, 0
    best_params = {name: t.data.copy() for name, t in model.parameters()}
    stopped_early = False
    step = 0
    for epoch in range(1, cfg.max_epochs + 1):
        started = time.perf_counter()
        losses = []
        for b in range(0, len(order), cfg.batch_size):
            batch = order[b:b + cfg.batch_size]
            step += 1
            beta_t = cfg.beta * min(1.0, step / warmup_steps)
            opt.zero_grad()
            for i in batch:
                rid = train_corpus.reports[i].id
                rng = derive_rng(cfg.seed, "vkd-sample", epoch, rid)
                if mode == "vkd":
                    loss, _ = elbo_loss(model, graphs[i], images[i], labels[i],
                                        rng, train=True, beta=beta_t)
                else:
                    loss = image_only_loss(model, images[i], labels[i], rng)
                losses.append(float(loss.data))
                loss.backward()
            opt.step(grad_scale=1.0 / len(batch))

        if val_labels is not None and len(val_labels):
            val_auc = macro_auc(predict_image_proba(model, val_images), val_labels)
            val_auc = 0.0 if val_auc is None else val_auc
        else:
            val_auc = 0.0
        record = EpochRecord(epoch=epoch, train_loss=float(np.mean(losses)),
                             val_macro_auc=val_auc,
                             wall_time=time.perf_counter() - started)
        records.append(record)
        if log is not None:
            log(f"[{mode}] epoch {epoch}: loss {record.train_loss:.4f} "
                f"val_auc {val_auc:.4f} ({record.wall_time:.1f}s)")
        if val_auc > best_auc:
            best_auc, best_epoch = val_auc, epoch
            best_params = {name: t.data.copy() for name, t in model.parameters()}
        if stopper.update(val_auc):
            stopped_early = True
            break

    for name, t in model.parameters():
        t.data = best_params[name].copy()
    return VkdTrainResult(model=model, mode=mode, records=records,
                          best_epoch=best_epoch, best_val_auc=best_auc,
                          stopped_early=stopped_early)
