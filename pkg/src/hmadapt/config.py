"""Experiment configuration: one JSON document with every hyperparameter.

Grammar: a JSON object whose top-level keys are the sections below.  Every
section and every field is optional; missing values take the defaults shown
by ``hmadapt init --preset paper``.  Unknown keys are rejected.  Relative
paths are resolved against the directory holding the config file.

    data      source_manifest, target_manifest, output_dir
    patch     crop_size, out_size, threshold
    augment   flip_prob, noise_sigma, translate_sigma, rotate_range_deg, order, noise_scale
    net       input_size, in_channels, stem_channels, stem_stride, stage_channels,
              blocks_per_stage, classes, bn_momentum, bn_eps
    train     epochs, epoch_size, batch_size, lr, weight_decay, beta1, beta2, eps
    finetune  same fields as train, plus mode
    spottune  temperature, policy_channels
    hm        enabled, levels, source_quotas, target_quotas
    seeds     init, train, hm, finetune, policy, synth, eval (list)
    synth     fields of SyntheticDomainSpec
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .adapt import FinetuneMode
from .augment import AugmentConfig
from .errors import ConfigError
from .nn.model import NetConfig
from .nn.train import TrainConfig
from .patches import CLASSES, DEFAULT_THRESHOLD, PatchSpec
from .synth import SyntheticDomainSpec, Warp

OUTPUT_ROOT_ENV = "HMADAPT_OUTPUT_ROOT"


@dataclass(frozen=True)
class DataPaths:
    source_manifest: str = "data/source/manifest.jsonl"
    target_manifest: str = "data/target/manifest.jsonl"
    output_dir: str = "runs/default"


@dataclass(frozen=True)
class PatchSection:
    crop_size: int = 1024
    out_size: int = 512
    threshold: float = DEFAULT_THRESHOLD

    def spec(self) -> PatchSpec:
        return PatchSpec(self.crop_size, self.out_size)


@dataclass(frozen=True)
class FinetuneSection:
    mode: str = FinetuneMode.SPOTTUNE.value
    epochs: int = 100
    epoch_size: int = 40000
    batch_size: int = 32
    lr: float = 5e-5
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def train_config(self) -> TrainConfig:
        d = dataclasses.asdict(self)
        d.pop("mode")
        return TrainConfig(**d)


@dataclass(frozen=True)
class SpotTuneSection:
    temperature: float = 0.1
    policy_channels: tuple = (4, 8)


def _balanced(n):
    return {"normal": n, "benign": n, "malignant": n}


@dataclass(frozen=True)
class HmSection:
    enabled: bool = True
    levels: int = 4096
    # reference (source) and target corpus draws for the average CDFs
    source_quotas: dict = field(default_factory=lambda: _balanced(400))
    target_quotas: dict = field(default_factory=lambda: _balanced(200))


@dataclass(frozen=True)
class Seeds:
    init: int = 1
    train: int = 2
    hm: int = 0
    finetune: int = 3
    policy: int = 4
    synth: int = 0
    eval: tuple = (0, 1, 2)


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataPaths = field(default_factory=DataPaths)
    patch: PatchSection = field(default_factory=PatchSection)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    net: NetConfig = field(default_factory=NetConfig.production_shape)
    train: TrainConfig = field(default_factory=TrainConfig)
    finetune: FinetuneSection = field(default_factory=FinetuneSection)
    spottune: SpotTuneSection = field(default_factory=SpotTuneSection)
    hm: HmSection = field(default_factory=HmSection)
    seeds: Seeds = field(default_factory=Seeds)
    synth: SyntheticDomainSpec = field(default_factory=SyntheticDomainSpec)
    base_dir: str = field(default=".", compare=False)

    # -- presets -----------------------------------------------------------

    @classmethod
    def paper(cls) -> "ExperimentConfig":
        return cls()

    @classmethod
    def desk(cls) -> "ExperimentConfig":
        """Laptop-scale run of the synthetic two-domain experiment."""
        return cls(
            patch=PatchSection(crop_size=128, out_size=64),
            augment=AugmentConfig(translate_sigma=2.5),
            net=NetConfig(),
            train=TrainConfig(epochs=6, epoch_size=2000, batch_size=32, lr=1e-3, weight_decay=5e-4),
            finetune=FinetuneSection(epochs=3, epoch_size=2000, batch_size=32, lr=5e-4,
                                     weight_decay=1e-4),
            hm=HmSection(source_quotas=_balanced(60), target_quotas=_balanced(30)),
        )

    # -- paths --------------------------------------------------------------

    def resolve(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else Path(self.base_dir) / path

    @property
    def output_dir(self) -> Path:
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root:
            return Path(root) / Path(self.data.output_dir).name
        return self.resolve(self.data.output_dir)

    @property
    def source_manifest(self) -> Path:
        return self.resolve(self.data.source_manifest)

    @property
    def target_manifest(self) -> Path:
        return self.resolve(self.data.target_manifest)

    def check_paths(self, *names: str) -> None:
        problems = [(f"data.{n}", f"file not found: {getattr(self, n)}")
                    for n in names if not getattr(self, n).is_file()]
        if problems:
            raise ConfigError(problems)

    # -- serialisation --------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "data": dataclasses.asdict(self.data),
            "patch": dataclasses.asdict(self.patch),
            "augment": self.augment.to_dict(),
            "net": self.net.to_dict(),
            "train": self.train.to_dict(),
            "finetune": dataclasses.asdict(self.finetune),
            "spottune": {"temperature": self.spottune.temperature,
                         "policy_channels": list(self.spottune.policy_channels)},
            "hm": dataclasses.asdict(self.hm),
            "seeds": {**dataclasses.asdict(self.seeds), "eval": list(self.seeds.eval)},
            "synth": self.synth.to_dict(),
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_dict(cls, d: dict, base_dir: str = ".") -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError([("", "config must be a JSON object")])
        problems: list[tuple[str, str]] = []
        defaults = cls()
        sections = {}
        builders = {
            "data": DataPaths, "patch": PatchSection, "augment": AugmentConfig, "net": NetConfig,
            "train": TrainConfig, "finetune": FinetuneSection, "spottune": SpotTuneSection,
            "hm": HmSection, "seeds": Seeds, "synth": SyntheticDomainSpec,
        }
        for key in d:
            if key not in builders:
                problems.append((key, "unknown section"))
        for name, builder in builders.items():
            raw = d.get(name, {})
            if not isinstance(raw, dict):
                problems.append((name, "must be an object"))
                continue
            sections[name] = _build(name, builder, getattr(defaults, name), raw, problems)
        if not problems:
            problems.extend(_cross_check(sections))
        if problems:
            raise ConfigError(problems)
        return cls(**sections, base_dir=str(base_dir))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError([("", f"{path}: {exc.strerror or exc}")]) from exc
        except json.JSONDecodeError as exc:
            raise ConfigError([("", f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})")]) from exc
        return cls.from_dict(d, base_dir=str(path.parent))


_TUPLE_FIELDS = {"order", "stage_channels", "blocks_per_stage", "policy_channels", "eval",
                 "tissue_level", "texture_sigma", "blob_sigma", "benign_contrast",
                 "positive_contrast"}


def _check_type(path: str, value, default, problems) -> bool:
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, (tuple, list)):
        ok = isinstance(value, list)
    elif isinstance(default, dict):
        ok = isinstance(value, dict)
    else:
        ok = True
    if not ok:
        problems.append((path, f"expected {type(default).__name__}, got {type(value).__name__}"))
    return ok


def _build(section: str, builder, default, raw: dict, problems: list):
    known = {f.name: getattr(default, f.name) for f in fields(builder)}
    values = {}
    before = len(problems)
    for key, value in raw.items():
        path = f"{section}.{key}"
        if key not in known:
            problems.append((path, "unknown field"))
            continue
        if key == "warp":
            if not isinstance(value, dict) or set(value) - {"gamma", "bias"}:
                problems.append((path, "expected an object with gamma and bias"))
                continue
            try:
                values[key] = Warp(**value)
            except (TypeError, ValueError) as exc:
                problems.append((path, str(exc)))
            continue
        if not _check_type(path, value, known[key], problems):
            continue
        values[key] = tuple(value) if key in _TUPLE_FIELDS else value
    if len(problems) > before:
        return default
    try:
        return replace(default, **values)
    except (TypeError, ValueError) as exc:
        problems.append((section, str(exc)))
        return default


def _cross_check(s: dict) -> list:
    problems = []
    patch, net = s["patch"], s["net"]
    if net.input_size != patch.out_size:
        problems.append(("net.input_size", f"must equal patch.out_size ({patch.out_size})"))
    if not 0 < patch.threshold < 1:
        problems.append(("patch.threshold", "must be in (0, 1)"))
    if s["finetune"].mode not in {m.value for m in FinetuneMode}:
        problems.append(("finetune.mode", f"must be one of {[m.value for m in FinetuneMode]}"))
    if not s["seeds"].eval:
        problems.append(("seeds.eval", "need at least one evaluation seed"))
    if s["spottune"].temperature <= 0:
        problems.append(("spottune.temperature", "must be positive"))
    if len(s["spottune"].policy_channels) != 2:
        problems.append(("spottune.policy_channels", "need exactly two stage widths"))
    for name in ("source_quotas", "target_quotas"):
        quotas = getattr(s["hm"], name)
        for cls, q in quotas.items():
            if cls not in CLASSES:
                problems.append((f"hm.{name}.{cls}", "unknown class"))
            elif not isinstance(q, int) or q < 1:
                problems.append((f"hm.{name}.{cls}", "quota must be a positive integer"))
    if s["hm"].levels < 2:
        problems.append(("hm.levels", "need at least 2 levels"))
    return problems
