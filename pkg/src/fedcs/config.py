"""Experiment configuration: JSON loading, validation, CLI overrides, presets.

A config file is a single JSON object with flat sections (hyper, sensing,
model, data, partition, plus top-level switches).  Ready-made preset files
ship inside the package; ``resolve_config_path`` accepts either a real path
or a bare preset name.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

from .bpdn import SolverOptions
from .errors import FormatError
from .ml.models import ModelSpec
from .protocols import SCHEMES, HyperParams, cohort_size

FORMATS = ("csv", "jsonl")
PARTITION_MODES = ("iid", "label-skew")
WEIGHTINGS = ("uniform", "data_size")
EARLY_STOP_METRICS = ("accuracy", "balanced_accuracy", "auroc")


@dataclass(frozen=True)
class DataSpec:
    """Where records come from: IDX file pairs or a synthetic generator."""

    source: str
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    n_train: int | None = None
    n_test: int | None = None
    features: int | None = None
    classes: int | None = None
    active_dims: int = 40
    amplitude: float = 1.0
    noise_std: float = 0.3
    class_weights: tuple | None = None

    def __post_init__(self):
        if self.source == "idx":
            missing = [
                name
                for name in ("train_images", "train_labels", "test_images", "test_labels")
                if getattr(self, name) is None
            ]
            if missing:
                raise ValueError(f"idx data source needs {', '.join(missing)}")
        elif self.source == "synthetic":
            for name in ("n_train", "n_test", "features", "classes"):
                v = getattr(self, name)
                if v is None or v < 1:
                    raise ValueError(f"synthetic data source needs positive {name}")
        else:
            raise ValueError(f"unknown data source {self.source!r}")
        if self.class_weights is not None:
            object.__setattr__(self, "class_weights", tuple(self.class_weights))


@dataclass(frozen=True)
class PartitionSpec:
    n_clients: int
    mode: str = "iid"
    classes_per_client: int = 2
    ensure_minority: bool = False
    downsample: bool = False

    def __post_init__(self):
        if self.n_clients < 1:
            raise ValueError("n_clients must be positive")
        if self.mode not in PARTITION_MODES:
            raise ValueError(f"unknown partition mode {self.mode!r}")


@dataclass(frozen=True)
class EarlyStopSpec:
    patience: int
    metric: str = "accuracy"

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be positive")
        if self.metric not in EARLY_STOP_METRICS:
            raise ValueError(f"unknown early-stop metric {self.metric!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    scheme: str
    hyper: HyperParams
    model: ModelSpec
    data: DataSpec
    partition: PartitionSpec
    master_seed: int = 0
    ratio: float | None = None
    m: int | None = None
    chunks: int = 1
    shuffle_seed: int = 0
    eval_every: int = 1
    weighting: str | None = None
    secure_aggregation: bool = True
    frac_bits: int = 20
    record_timing: bool = False
    delta: float = 1e-5
    out: str | None = None
    fmt: str = "csv"
    early_stop: EarlyStopSpec | None = None
    solver: SolverOptions = field(default_factory=SolverOptions)
    note: str | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; pick one of {SCHEMES}")
        if self.is_private:
            if self.hyper.sigma is None:
                raise ValueError(f"{self.scheme} requires a noise multiplier sigma")
        elif self.hyper.sigma is not None:
            raise ValueError(f"{self.scheme} does not accept sigma")
        if self.is_compressed:
            if self.ratio is None and self.m is None:
                raise ValueError(f"{self.scheme} needs a compression ratio r or m")
            if self.ratio is not None and not 0.0 < self.ratio <= 1.0:
                raise ValueError("compression ratio must lie in (0, 1]")
        if self.eval_every < 1:
            raise ValueError("eval_every must be positive")
        if self.fmt not in FORMATS:
            raise ValueError(f"unknown output format {self.fmt!r}")
        if self.weighting is not None and self.weighting not in WEIGHTINGS:
            raise ValueError(f"unknown weighting {self.weighting!r}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if cohort_size(self.partition.n_clients, self.hyper.c) < 1:
            raise ValueError("round(c * n_clients) must be at least 1")
        if self.data.source == "idx":
            for name in ("train_images", "train_labels", "test_images", "test_labels"):
                path = getattr(self.data, name)
                if not os.path.exists(path):
                    raise ValueError(f"{name} file not found: {path}")

    @property
    def is_private(self) -> bool:
        return self.scheme.endswith("-dp")

    @property
    def is_compressed(self) -> bool:
        return not self.scheme.startswith("fl-std")

    @property
    def effective_ratio(self) -> float:
        """The r used for bandwidth accounting (1.0 for fl-std)."""
        if not self.is_compressed:
            return 1.0
        if self.ratio is not None:
            return self.ratio
        return self.m / self.model.n_params


def _section(raw: dict, key: str) -> dict:
    value = raw.get(key)
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise FormatError(f"config section {key!r} must be an object")
    return dict(value)


def build_config(raw: dict, **overrides) -> ExperimentConfig:
    """Construct a validated ExperimentConfig from parsed JSON.

    ``overrides`` take precedence over the file: scheme, ratio, sigma,
    rounds, seed, out, fmt (the CLI's knobs), each ignored when None.
    """
    raw = dict(raw)
    hyper_kw = _section(raw, "hyper")
    sensing = _section(raw, "sensing")
    model_kw = _section(raw, "model")
    data_kw = _section(raw, "data")
    part_kw = _section(raw, "partition")
    solver_kw = _section(raw, "solver")
    early_kw = raw.get("early_stop")

    scheme = overrides.get("scheme") or raw.get("scheme")
    if scheme is None:
        raise ValueError("config must name a scheme")
    if overrides.get("sigma") is not None:
        hyper_kw["sigma"] = overrides["sigma"]
    if overrides.get("rounds") is not None:
        hyper_kw["t_cl"] = overrides["rounds"]
    if not scheme.endswith("-dp"):
        hyper_kw.pop("sigma", None)

    ratio = sensing.get("r")
    if overrides.get("ratio") is not None:
        ratio = overrides["ratio"]

    try:
        hyper = HyperParams(**hyper_kw)
        model = ModelSpec(
            layers=tuple(model_kw.get("layers", ())),
            hidden_activation=model_kw.get("hidden_activation", "relu"),
            loss=model_kw.get("loss", "cce"),
        )
        data = DataSpec(**data_kw)
        partition = PartitionSpec(**part_kw)
        solver = SolverOptions(**solver_kw)
        early = EarlyStopSpec(**early_kw) if early_kw else None
    except TypeError as exc:
        raise FormatError(f"bad config field: {exc}") from exc

    return ExperimentConfig(
        scheme=scheme,
        hyper=hyper,
        model=model,
        data=data,
        partition=partition,
        master_seed=overrides.get("seed", raw.get("master_seed", 0)),
        ratio=ratio,
        m=sensing.get("m"),
        chunks=sensing.get("p", 1),
        shuffle_seed=sensing.get("shuffle_seed", 0),
        eval_every=raw.get("eval_every", 1),
        weighting=raw.get("weighting"),
        secure_aggregation=raw.get("secure_aggregation", True),
        frac_bits=raw.get("frac_bits", 20),
        record_timing=raw.get("record_timing", False),
        delta=raw.get("delta", 1e-5),
        out=overrides.get("out", raw.get("out")),
        fmt=overrides.get("fmt") or raw.get("format", "csv"),
        early_stop=early,
        solver=solver,
        note=raw.get("note"),
    )


def resolve_config_path(name: str) -> str:
    """A real file path, or a packaged preset name like 'desk_synthetic'."""
    if os.path.exists(name):
        return name
    base = name if name.endswith(".json") else name + ".json"
    preset = resources.files("fedcs").joinpath("presets", base)
    if preset.is_file():
        return str(preset)
    raise ValueError(f"config not found: {name}")


def load_config(path: str, **overrides) -> ExperimentConfig:
    path = resolve_config_path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON in {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise FormatError(f"config root must be a JSON object: {path}")
    return build_config(raw, **overrides)


def list_presets():
    root = resources.files("fedcs").joinpath("presets")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))
