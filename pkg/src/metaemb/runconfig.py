"""Flat key=value run configuration and reproducibility manifests.

Config files hold one ``key = value`` per line ('#' comments allowed);
dotted prefixes group related keys (source.*, dataset.*, train.*).
The run manifest echoes the resolved configuration together with
content digests of every input file, which is enough to reproduce a
run bit-exactly.
"""

import hashlib
import json
from dataclasses import dataclass, field

from .errors import ConfigError
from .losses import RECON_KINDS
from .mtl import DISTANCE_KINDS, SIM_KINDS
from .net import TrainConfig
from .store import VOCAB_POLICIES

METHODS = ("conc", "avg", "svd", "1ton", "caeme", "daeme", "tae", "mte", "mtl")
TRAINED_METHODS = ("1ton", "caeme", "daeme", "tae", "mte", "mtl")


def parse_config_text(text, origin="<config>"):
    """Parse flat 'key = value' lines into an ordered dict of strings."""
    out = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{origin}:{line_no}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"{origin}:{line_no}: empty key")
        if key in out:
            raise ConfigError(f"{origin}:{line_no}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config_file(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), origin=str(path))


def sha256_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _to_int(mapping, key, default=None):
    if key not in mapping:
        return default
    try:
        return int(mapping[key])
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {mapping[key]!r}") from None


def _to_float(mapping, key, default=None):
    if key not in mapping:
        return default
    try:
        return float(mapping[key])
    except ValueError:
        raise ConfigError(f"{key} must be a number, got {mapping[key]!r}") from None


def _grouped(mapping, prefix):
    """Collect 'prefix.<name>.<field>' keys into {name: {field: value}}."""
    groups = {}
    for key, value in mapping.items():
        if not key.startswith(prefix + "."):
            continue
        rest = key[len(prefix) + 1:]
        name, _, fld = rest.partition(".")
        if not name or not fld:
            raise ConfigError(f"malformed key {key!r}; expected {prefix}.<name>.<field>")
        groups.setdefault(name, {})[fld] = value
    return groups


@dataclass
class RunConfig:
    """Everything one training run needs, validated before any work."""

    method: str
    sources: list = field(default_factory=list)     # (name, path, format)
    ensemble_path: str = None
    vocab_policy: str = "intersection"
    recon_loss: str = "mse"
    sim_loss: str = "brier"
    distance: str = "cosine"
    k_out: int = None
    pair_weight: float = 1.0
    target: str = None                              # source name or index
    datasets: list = field(default_factory=list)    # (name, path, lo, hi)
    held_out: str = None
    out_dir: str = "runs/out"
    seed: int = 13
    train: TrainConfig = None
    echo: dict = field(default_factory=dict)

    @classmethod
    def from_mapping(cls, mapping):
        mapping = dict(mapping)
        method = mapping.get("method")
        if method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {method!r}")

        policy = mapping.get("vocab_policy", "intersection")
        if policy not in VOCAB_POLICIES:
            raise ConfigError(f"vocab_policy must be one of {VOCAB_POLICIES}")
        recon = mapping.get("recon_loss", "mse")
        if recon not in RECON_KINDS:
            raise ConfigError(f"recon_loss must be one of {RECON_KINDS}")
        sim = mapping.get("sim_loss", "brier")
        if sim not in SIM_KINDS:
            raise ConfigError(f"sim_loss must be one of {SIM_KINDS}")
        distance = mapping.get("distance", "cosine")
        if distance not in DISTANCE_KINDS:
            raise ConfigError(f"distance must be one of {DISTANCE_KINDS}")

        sources = []
        for name, fields in sorted(_grouped(mapping, "source").items()):
            if "path" not in fields:
                raise ConfigError(f"source.{name}.path is required")
            sources.append((name, fields["path"], fields.get("format", "word2vec")))

        datasets = []
        for name, fields in sorted(_grouped(mapping, "dataset").items()):
            if "path" not in fields:
                raise ConfigError(f"dataset.{name}.path is required")
            lo = fields.get("min")
            hi = fields.get("max")
            if (lo is None) != (hi is None):
                raise ConfigError(f"dataset.{name}: give both min and max or neither")
            rng = (float(lo), float(hi)) if lo is not None else None
            datasets.append((name, fields["path"], rng))

        seed = _to_int(mapping, "seed", 13)
        hidden = _to_int(mapping, "train.hidden", 200)
        train = TrainConfig(
            hidden_dims=(hidden,),
            batch_size=_to_int(mapping, "train.batch_size", 32),
            epochs=_to_int(mapping, "train.epochs", 50),
            learning_rate=_to_float(mapping, "train.learning_rate", 0.01),
            dropout_p=_to_float(mapping, "train.dropout", 0.2),
            init_mean=_to_float(mapping, "train.init_mean", 0.0),
            init_std=_to_float(mapping, "train.init_std", 1.0),
            seed=seed,
            early_stop_patience=_to_int(mapping, "train.patience", 5),
            val_fraction=_to_float(mapping, "train.val_fraction", 0.1),
            lambda_=_to_float(mapping, "train.lambda", 1.0),
        )

        cfg = cls(
            method=method,
            sources=sources,
            ensemble_path=mapping.get("ensemble"),
            vocab_policy=policy,
            recon_loss=recon,
            sim_loss=sim,
            distance=distance,
            k_out=_to_int(mapping, "k_out"),
            pair_weight=_to_float(mapping, "pair_weight", 1.0),
            target=mapping.get("target"),
            datasets=datasets,
            held_out=mapping.get("held_out"),
            out_dir=mapping.get("output.dir", "runs/out"),
            seed=seed,
            train=train,
            echo=dict(sorted(mapping.items())),
        )
        cfg.validate()
        return cfg

    def validate(self):
        if not self.sources and not self.ensemble_path:
            raise ConfigError("a run needs source.* entries or an ensemble path")
        if self.method in ("svd", "1ton") and self.k_out is not None and self.k_out < 1:
            raise ConfigError("k_out must be positive")
        if self.method == "mtl":
            if not self.datasets:
                raise ConfigError("mtl needs dataset.* entries")
            if not self.held_out:
                raise ConfigError("mtl needs held_out = <dataset name>")
            names = [name for name, _, _ in self.datasets]
            if self.held_out not in names:
                raise ConfigError(
                    f"held_out {self.held_out!r} is not among datasets {names}")
            if len(names) < 2:
                raise ConfigError("mtl needs at least one training dataset "
                                  "besides the held-out one")
        if self.pair_weight < 0:
            raise ConfigError("pair_weight must be >= 0")


MANIFEST_VERSION = 1


def write_manifest(path, config_echo, input_digests, history, outputs,
                   method_tag, seed):
    payload = {
        "version": MANIFEST_VERSION,
        "seed": seed,
        "method_tag": method_tag,
        "config": config_echo,
        "inputs": input_digests,
        "outputs": outputs,
        "history": history,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
