"""Experiment configuration files (TOML) with strict key checking."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .data import Dataset, chronological_split, normalize_features, sine_trend_series, train_test_split, two_moons
from .data import CsvSchema, load_csv
from .invnorm import NormalInit, UniformInit
from .model import Model, build_mlp
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    kind: str = "two_moons"  # two_moons | sine_trend | csv
    n: int = 1000
    noise_std: float = 0.15
    test_fraction: float = 0.3
    seed: int | None = None  # defaults to the experiment seed
    period: float = 25.0
    trend_slope: float = 0.002
    window: int = 8
    path: str = ""
    features: list[str] = field(default_factory=list)
    targets: list[str] = field(default_factory=list)
    task: str = "classification"


@dataclass
class ModelSection:
    hidden: list[int] = field(default_factory=lambda: [16, 16])
    norm: str = "inverted"  # inverted | conventional | none
    p: float = 0.3
    init: str = "normal"  # normal | uniform
    sigma_gamma: float = 0.3
    sigma_beta: float = 0.3
    k_gamma: float = 1.0
    k_beta: float = 0.0
    groups: int = 1  # 1 = normalize the whole instance
    mask_mode: str = "vector"
    eps: float = 1e-5
    binary: bool = False
    sign_activations: bool = False
    bits: int = 0  # 0 = full precision


@dataclass
class TrainSection:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 0.05
    weight_decay: float = 1e-4
    momentum: float = 0.9
    decay_affine: bool = False


@dataclass
class SweepSection:
    kinds: list[str] = field(default_factory=lambda: ["bitflip"])
    site: str = "weights"
    levels: list[float] = field(default_factory=lambda: [0.0, 0.05, 0.1, 0.2, 0.3])
    runs: int = 100
    passes: int = 20


@dataclass
class OodSection:
    rotation_stages: int = 12
    noise_levels: int = 8
    a_base: float = 0.25  # in units of the training feature std
    passes: int = 20


@dataclass
class ExperimentConfig:
    seed: int = 0
    out: str = "out"
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    ood: OodSection = field(default_factory=OodSection)

    @property
    def task(self) -> str:
        if self.data.kind == "two_moons":
            return "classification"
        if self.data.kind == "sine_trend":
            return "regression"
        return self.data.task

    def train_config(self) -> TrainConfig:
        t = self.train
        try:
            return TrainConfig(t.epochs, t.batch_size, t.learning_rate, t.weight_decay, t.momentum,
                               self.seed, t.decay_affine)
        except ValueError as exc:
            raise ConfigError(f"[train] {exc}") from None

    def build_model(self) -> Model:
        m = self.model
        init = NormalInit(m.sigma_gamma, m.sigma_beta) if m.init == "normal" else UniformInit(m.k_gamma, m.k_beta)
        train_ds, _ = self.load_data()
        sizes = [train_ds.inputs.shape[1], *m.hidden, int(train_ds.targets.max()) + 1 if self.task == "classification"
                 else train_ds.targets.shape[1]]
        try:
            return build_mlp(sizes, seed=self.seed, task=self.task, norm=m.norm, binary=m.binary,
                             bits=m.bits or None, p=m.p, init=init, groups=m.groups, mask_mode=m.mask_mode,
                             eps=m.eps, sign_inputs=m.sign_activations)
        except ValueError as exc:
            raise ConfigError(f"[model] {exc}") from None

    def load_data(self) -> tuple[Dataset, Dataset]:
        """Regenerate the (standardized) train and test splits."""
        d = self.data
        seed = self.seed if d.seed is None else d.seed
        try:
            if d.kind == "two_moons":
                ds = two_moons(d.n, d.noise_std, seed)
                train, test = train_test_split(ds, d.test_fraction, seed)
            elif d.kind == "sine_trend":
                ds = sine_trend_series(d.n, d.period, d.trend_slope, d.noise_std, seed, d.window)
                train, test = chronological_split(ds, d.test_fraction)
            elif d.kind == "csv":
                ds = load_csv(d.path, CsvSchema(tuple(d.features), tuple(d.targets), d.task))
                train, test = train_test_split(ds, d.test_fraction, seed)
            else:
                raise ValueError(f"unknown data kind {d.kind!r}")
        except (ValueError, OSError) as exc:
            raise ConfigError(f"[data] {exc}") from None
        train = normalize_features(train)
        return train, normalize_features(test, train.feature_stats)


def _build(cls, values: dict, where: str):
    if not isinstance(values, dict):
        raise ConfigError(f"{where}: expected a table")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in values.items():
        sub = _SECTIONS.get(name) if cls is ExperimentConfig else None
        if sub:
            kwargs[name] = _build(sub, value, f"[{name}]")
        else:
            kwargs[name] = _check_type(value, known[name].type, f"{where} {name}")
    return cls(**kwargs)


_SCALARS = {"int": int, "float": float, "str": str, "bool": bool}


def _check_type(value, annotation: str, where: str):
    options = [a.strip() for a in annotation.split("|")]
    if "None" in options and value is None:
        return value
    for opt in options:
        if opt.startswith("list["):
            inner = _SCALARS[opt[5:-1]]
            if isinstance(value, list) and all(_is(v, inner) for v in value):
                return [inner(v) for v in value]
        elif opt in _SCALARS and _is(value, _SCALARS[opt]):
            return _SCALARS[opt](value)
    raise ConfigError(f"{where}: expected {annotation}, got {value!r}")


def _is(value, typ) -> bool:
    if typ is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if typ is int:
        return isinstance(value, int) and not isinstance(value, bool)
    return isinstance(value, typ)


_SECTIONS = {"data": DataSection, "model": ModelSection, "train": TrainSection,
             "sweep": SweepSection, "ood": OodSection}


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid config syntax: {exc}") from None
    return _build(ExperimentConfig, raw, "config")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"))
