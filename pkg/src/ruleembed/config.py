"""Run configuration: INI-style ``key = value`` files with sections.

Keys may be written inside a section (``[walk]`` then ``alpha = 0.2``) or as
dotted keys before the first section (``walk.alpha = 0.2``). Unknown keys are
rejected.
"""
from __future__ import annotations

import configparser
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .evaluation import VARIANTS, ExperimentConfig
from .factorize import FactorizeConfig
from .recommender import FusionConfig, TrainConfig
from .rules import MiningConfig
from .walks import WalkConfig

_ROOT = "__root__"
STAGES = ("mine", "sample", "factorize", "train", "evaluate")
_MODULES = {
    "mining": MiningConfig,
    "walk": WalkConfig,
    "factorize": FactorizeConfig,
    "fusion": FusionConfig,
    "training": TrainConfig,
}


@dataclass
class DataPaths:
    associations: str | None = None
    interactions: str | None = None
    edges: str | None = None
    labels: str | None = None
    directed: bool = False
    name: str = "dataset"

    def validate(self):
        for key in ("associations", "interactions"):
            if not getattr(self, key):
                raise ConfigError(f"data.{key} is required")
        for key in ("associations", "interactions", "edges", "labels"):
            p = getattr(self, key)
            if p and not Path(p).is_file():
                raise ConfigError(f"data.{key}: file not found: {p}")
        return self


@dataclass
class EvalSettings:
    split_ratio: float = 0.8
    k: int = 20
    drop_ratio: float = 0.0
    thresholds: tuple = (10, 20, 30)
    interaction_edges: bool = True
    drop_ratios: tuple = (0.0, 0.2, 0.4, 0.8)


@dataclass
class RunConfig:
    data: DataPaths = field(default_factory=DataPaths)
    mining: MiningConfig = field(default_factory=MiningConfig)
    walk: WalkConfig = field(default_factory=WalkConfig)
    factorize: FactorizeConfig = field(default_factory=FactorizeConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSettings = field(default_factory=EvalSettings)
    stages: dict = field(default_factory=lambda: {s: True for s in STAGES})
    variant: str = "RAE"
    seeds: tuple = (0,)
    output_dir: str = "runs"

    def experiment(self) -> ExperimentConfig:
        return ExperimentConfig(
            mining=self.mining, walk=self.walk, factorize=self.factorize, fusion=self.fusion,
            training=self.training, split_ratio=self.eval.split_ratio, k_eval=self.eval.k,
            drop_ratio=self.eval.drop_ratio, interaction_edges=self.eval.interaction_edges,
        )

    def validate(self, check_paths: bool = True):
        if check_paths:
            self.data.validate()
        self.experiment().validate()
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {', '.join(VARIANTS)}, got {self.variant!r}")
        t = self.eval.thresholds
        if len(t) != 3 or not (t[0] < t[1] < t[2]):
            raise ConfigError("eval.thresholds must be three strictly increasing integers")
        if not self.seeds:
            raise ConfigError("seeds must list at least one seed")
        for r in self.eval.drop_ratios:
            if not (0 <= r < 1):
                raise ConfigError("eval.drop_ratios entries must lie in [0, 1)")
        return self

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))


def _parse_value(raw: str, default, annotation: str, key: str):
    raw = raw.strip()
    try:
        if "None" in annotation and raw.lower() in ("", "none", "null"):
            return None
        if isinstance(default, bool) or annotation.startswith("bool"):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if annotation.startswith("int") or isinstance(default, int):
            return int(raw)
        if annotation.startswith("float") or isinstance(default, float):
            return float(raw)
        if annotation.startswith("tuple") or isinstance(default, tuple):
            items = [x.strip() for x in raw.replace(";", ",").split(",") if x.strip()]
            out = []
            for x in items:
                try:
                    out.append(int(x))
                except ValueError:
                    try:
                        out.append(float(x))
                    except ValueError:
                        out.append(x)
            return tuple(out)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {annotation}") from None
    return raw


def _set_field(obj, name: str, raw: str, key: str):
    fields = {f.name: f for f in dataclasses.fields(obj)}
    if name not in fields:
        raise ConfigError(f"unknown configuration key {key!r}")
    f = fields[name]
    default = getattr(obj, name)
    setattr(obj, name, _parse_value(raw, default, str(f.type), key))


def _flatten(text: str) -> list[tuple[str, str]]:
    cp = configparser.ConfigParser(interpolation=None, strict=True, delimiters=("=",))
    cp.optionxform = str
    try:
        cp.read_string(f"[{_ROOT}]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"unparseable configuration: {exc}") from None
    out = []
    for sec in cp.sections():
        for k, v in cp.items(sec):
            out.append((k if sec == _ROOT else f"{sec}.{k}", v))
    return out


def parse_config(text: str, base_dir: str | Path = ".", check_paths: bool = True) -> RunConfig:
    cfg = RunConfig()
    base = Path(base_dir)
    for key, raw in _flatten(text):
        head, _, rest = key.partition(".")
        if not rest:
            if head == "seeds":
                vals = _parse_value(raw, (), "tuple", key)
                if not all(isinstance(v, int) for v in vals):
                    raise ConfigError("seeds must be integers")
                cfg.seeds = vals
            elif head in ("variant", "output_dir"):
                _set_field(cfg, head, raw, key)
            else:
                raise ConfigError(f"unknown configuration key {key!r}")
        elif head == "stages":
            if rest not in STAGES:
                raise ConfigError(f"unknown configuration key {key!r}")
            cfg.stages[rest] = _parse_value(raw, True, "bool", key)
        elif head in _MODULES or head in ("data", "eval"):
            if "." in rest:
                raise ConfigError(f"unknown configuration key {key!r}")
            _set_field(getattr(cfg, head), rest, raw, key)
        else:
            raise ConfigError(f"unknown configuration key {key!r}")
    for key in ("associations", "interactions", "edges", "labels"):
        p = getattr(cfg.data, key)
        if p and not Path(p).is_absolute():
            setattr(cfg.data, key, str((base / p).resolve()))
    if cfg.output_dir and not Path(cfg.output_dir).is_absolute():
        cfg.output_dir = str((base / cfg.output_dir).resolve())
    return cfg.validate(check_paths)


def load_config(path, check_paths: bool = True) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc.strerror}") from None
    return parse_config(text, path.parent, check_paths)
