"""Experiment configuration: a flat YAML mapping of scalar/list fields.

See ``schema/config_schema.md`` for every key. Unknown keys are rejected so
typos surface as errors instead of silently running defaults.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields

import yaml

from .errors import ConfigError
from .schedules import LambdaSchedule, LrSchedule, default_decay_epochs
from .synthdata import DatasetSpec, ViewConfig

LOSS_KINDS = ("infonce", "simcon", "mv_simcon")


@dataclass(frozen=True)
class ExperimentConfig:
    loss_kind: str
    # mv_simcon ablation switches; ignored for the single-view losses
    use_multiple_views: bool | None = None
    use_ncs: bool = True
    use_joint_positives: bool = True
    # keep the constant j = i intra-modal term of the SimCon loss
    include_self: bool = True
    # data
    num_classes: int = 10
    n_train: int = 2000
    n_eval: int = 1000
    image_dim: int = 64
    text_dim: int = 48
    within_class_sigma: float = 0.1
    swap_prob: float = 0.0
    text_instance_corr: float = 1.0
    view_noise_sigma: float = 0.1
    view_drop_prob: float = 0.1
    # model
    embed_dim: int = 32
    image_hidden: tuple[int, ...] = ()
    text_hidden: tuple[int, ...] = ()
    head_hidden: int | None = None
    # optimization
    batch_size: int = 128
    epochs: int = 30
    seeds: tuple[int, ...] = (0,)
    lambda_initial: float = 0.95
    lambda_decrement: float = 0.05
    lambda_decay_epochs: tuple[int, ...] | None = None
    lambda_floor: float = -1.0
    lr_init: float = 4e-6
    lr_max: float = 1.6e-3
    lr_min: float = 0.0
    warmup_epochs: int = 2
    weight_decay: float = 0.05
    tau_init: float = 0.07
    learn_tau: bool = True
    recall_threshold: float = 0.5
    out_dir: str = "runs/latest"

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"must be one of {', '.join(LOSS_KINDS)}", field="loss_kind")
        multi = self.loss_kind == "mv_simcon"
        if self.use_multiple_views is None:
            object.__setattr__(self, "use_multiple_views", multi)
        elif self.use_multiple_views != multi:
            raise ConfigError(
                "multiple views are used exactly when loss_kind is mv_simcon",
                field="use_multiple_views",
            )
        for name in ("image_hidden", "text_hidden", "seeds"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.lambda_decay_epochs is not None:
            object.__setattr__(self, "lambda_decay_epochs", tuple(self.lambda_decay_epochs))
        if not self.seeds:
            raise ConfigError("seed list must be non-empty", field="seeds")
        if self.batch_size < 1 or self.batch_size > self.n_train:
            raise ConfigError("must lie in [1, n_train]", field="batch_size")
        if self.epochs < 1:
            raise ConfigError("must be >= 1", field="epochs")
        if not self.warmup_epochs < self.epochs:
            raise ConfigError("must be smaller than epochs", field="warmup_epochs")
        if not self.tau_init > 0:
            raise ConfigError("must be positive", field="tau_init")
        try:
            self.dataset_spec(self.seeds[0]).validate()
            self.view_config()
            self.lambda_schedule()
            self.lr_schedule()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def uses_masks(self) -> bool:
        return self.loss_kind != "infonce"

    @property
    def uses_ncs(self) -> bool:
        return self.loss_kind == "mv_simcon" and self.use_ncs

    def dataset_spec(self, seed: int, split: str = "train") -> DatasetSpec:
        return DatasetSpec(
            K=self.num_classes,
            n=self.n_train if split == "train" else self.n_eval,
            image_dim=self.image_dim,
            text_dim=self.text_dim,
            within_class_sigma=self.within_class_sigma,
            swap_prob=self.swap_prob if split == "train" else 0.0,
            seed=seed,
            text_instance_corr=self.text_instance_corr,
        )

    def view_config(self) -> ViewConfig:
        return ViewConfig(self.view_noise_sigma, self.view_drop_prob)

    def lambda_schedule(self) -> LambdaSchedule:
        boundaries = self.lambda_decay_epochs
        if boundaries is None:
            boundaries = default_decay_epochs(self.epochs)
        return LambdaSchedule(self.lambda_initial, self.lambda_decrement, boundaries, self.lambda_floor)

    def lr_schedule(self) -> LrSchedule:
        return LrSchedule(self.lr_init, self.lr_max, self.warmup_epochs, self.epochs, self.lr_min)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    def hash(self) -> str:
        """Stable digest of everything that affects results (seeds and the
        output location excluded)."""
        d = self.to_dict()
        d.pop("seeds")
        d.pop("out_dir")
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _coerce(name: str, value, line: int | None):
    kind = _FIELDS[name].type
    try:
        if "tuple" in str(kind):
            if value is None:
                return None
            if isinstance(value, (int, float)):
                value = [value]
            if isinstance(value, str):
                value = [v for v in value.replace(",", " ").split()]
            return tuple(int(v) for v in value)
        if value is None:
            return None
        if kind.startswith("bool"):
            if isinstance(value, str):
                low = value.strip().lower()
                if low in ("true", "yes", "1", "on"):
                    return True
                if low in ("false", "no", "0", "off"):
                    return False
                raise ValueError(value)
            return bool(value)
        if kind.startswith("int"):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if kind.startswith("float"):
            return float(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"cannot interpret {value!r}", field=name, line=line) from exc


def config_from_mapping(data: dict, lines: dict | None = None) -> ExperimentConfig:
    lines = lines or {}
    kwargs = {}
    for key, value in data.items():
        if key not in _FIELDS:
            raise ConfigError("unknown key", field=key, line=lines.get(key))
        kwargs[key] = _coerce(key, value, lines.get(key))
    if "loss_kind" not in kwargs:
        raise ConfigError("required field is missing", field="loss_kind")
    return ExperimentConfig(**kwargs)


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"parse error: {exc}", line=mark.line + 1 if mark else None) from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a flat mapping of key: value")
    lines = {}
    if node is not None:
        for key_node, _ in node.value:
            lines[key_node.value] = key_node.start_mark.line + 1
    for key, value in data.items():
        if isinstance(value, dict):
            raise ConfigError("nested mappings are not allowed", field=key, line=lines.get(key))
    data.update(overrides or {})
    return config_from_mapping(data, lines)
