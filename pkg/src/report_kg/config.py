"""Flat key=value run configuration.

A config file holds one ``key = value`` pair per line (``#`` comments
allowed).  Command-line ``--set key=value`` overrides are applied on top.
Unknown keys are rejected; every default below is documented by existing.
The effective configuration is echoed into each run's output directory.
"""

from .errors import ConfigError
from .train import TrainConfig
from .vkd import VkdTrainConfig

DEFAULTS = {
    # graph encoder
    "n_layers": 1,
    "hidden": 512,
    "dropout": 0.5,
    "leaky_slope": 0.2,
    "attn_dropout": False,  # reserved: attention-coefficient dropout
    # optimisation
    "lr": 1e-4,
    "batch_size": 16,
    "max_epochs": 100,
    "early_stop_tolerance": 0.01,
    "patience": 5,
    "seed": 0,
    "workers": 1,
    # corpus splitting
    "train_ratio": 0.7,
    "val_ratio": 0.1,
    "test_ratio": 0.2,
    # graph ablations
    "use_global": True,
    "use_sentence": True,
    "use_concept_edges": True,
    "hop_limit": 1,  # reserved: only direct ontology relations make edges
    # distillation branch
    "latent_dim": 32,
    "beta": 1.0,
    "beta_warmup": 0.1,
    "image_dim": 256,
    "image_noise": 1.0,
    "image_hidden": 128,
    "decoder_hidden": 64,
}


def _coerce(key: str, raw: str):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        lowered = raw.strip().lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise ConfigError(f"config key {key}: expected true/false, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"config key {key}: bad value {raw!r}") from None
    return raw


def parse_config_file(path) -> dict:
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in DEFAULTS:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _coerce(key, raw)
    return values


def build_config(path=None, overrides=()) -> dict:
    cfg = dict(DEFAULTS)
    if path is not None:
        cfg.update(parse_config_file(path))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected key=value")
        key, raw = (part.strip() for part in item.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        cfg[key] = _coerce(key, raw)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict):
    if cfg["attn_dropout"]:
        raise ConfigError("attn_dropout=true is reserved and not supported; "
                          "dropout applies to layer outputs only")
    if cfg["hop_limit"] != 1:
        raise ConfigError("hop_limit other than 1 is reserved; only direct "
                          "ontology relations create concept edges")
    total = cfg["train_ratio"] + cfg["val_ratio"] + cfg["test_ratio"]
    if abs(total - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {total}")


def format_config(cfg: dict) -> str:
    lines = [f"{key}={cfg[key]}" for key in sorted(cfg)]
    return "\n".join(lines) + "\n"


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        n_layers=cfg["n_layers"], hidden=cfg["hidden"], lr=cfg["lr"],
        batch_size=cfg["batch_size"], max_epochs=cfg["max_epochs"],
        early_stop_tolerance=cfg["early_stop_tolerance"],
        patience=cfg["patience"], dropout=cfg["dropout"],
        leaky_slope=cfg["leaky_slope"], seed=cfg["seed"],
        use_global=cfg["use_global"], use_sentence=cfg["use_sentence"],
        use_concept_edges=cfg["use_concept_edges"], workers=cfg["workers"])


def vkd_config(cfg: dict) -> VkdTrainConfig:
    return VkdTrainConfig(
        n_layers=cfg["n_layers"], hidden=cfg["hidden"],
        latent_dim=cfg["latent_dim"], image_dim=cfg["image_dim"],
        image_hidden=cfg["image_hidden"], decoder_hidden=cfg["decoder_hidden"],
        beta=cfg["beta"], beta_warmup=cfg["beta_warmup"], lr=cfg["lr"],
        batch_size=cfg["batch_size"], max_epochs=cfg["max_epochs"],
        early_stop_tolerance=cfg["early_stop_tolerance"],
        patience=cfg["patience"], dropout=cfg["dropout"],
        leaky_slope=cfg["leaky_slope"], seed=cfg["seed"])
