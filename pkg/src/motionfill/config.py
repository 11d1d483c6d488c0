"""YAML application config: one file describing a whole experiment.

Sections (all optional, defaults apply):
    skeleton:   shipped skeleton name or a .skel.json path
    generation: GenSpec fields plus `count`, the corpus size
    model:      ModelConfig fields (num_joints follows the skeleton)
    corruption: CorruptionSpec fields
    train:      TrainConfig fields (corruption comes from its own section)
"""

from dataclasses import dataclass

import yaml

from .corruption import CorruptionSpec
from .model import ModelConfig
from .skeleton import SkeletonDef, load_skeleton
from .synthgen import GenSpec
from .train import TrainConfig

_SECTIONS = ("skeleton", "generation", "model", "corruption", "train")
_GEN_TUPLES = ("duration_range", "keyframe_interval_range", "depth_range")
NUM_SEQUENCES_DEFAULT = 2000


@dataclass
class AppConfig:
    skeleton: SkeletonDef = None
    generation: GenSpec = None
    model: ModelConfig = None
    train: TrainConfig = None
    num_sequences: int = NUM_SEQUENCES_DEFAULT

    def __post_init__(self):
        if self.skeleton is None:
            self.skeleton = load_skeleton("body23")
        if self.generation is None:
            self.generation = GenSpec(skeleton=self.skeleton)
        if self.model is None:
            self.model = ModelConfig(num_joints=self.skeleton.num_rotations)
        if self.train is None:
            self.train = TrainConfig()
        if self.num_sequences < 1:
            raise ValueError("count must be positive")


def _section(doc: dict, name: str) -> dict:
    part = doc.get(name, {})
    if part is None:
        part = {}
    if not isinstance(part, dict):
        raise ValueError(f"config section {name!r} must be a mapping")
    return dict(part)


def config_from_dict(doc: dict) -> AppConfig:
    if not isinstance(doc, dict):
        raise ValueError("config root must be a mapping")
    unknown = set(doc) - set(_SECTIONS)
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")

    skeleton = load_skeleton(doc.get("skeleton", "body23"))

    gen = _section(doc, "generation")
    count = gen.pop("count", NUM_SEQUENCES_DEFAULT)
    for key in _GEN_TUPLES:
        if key in gen and isinstance(gen[key], list):
            gen[key] = tuple(gen[key])
    gen.pop("skeleton", None)

    model = _section(doc, "model")
    model.setdefault("num_joints", skeleton.num_rotations)

    train = _section(doc, "train")
    train.pop("corruption", None)
    train["corruption"] = _section(doc, "corruption")

    try:
        return AppConfig(
            skeleton=skeleton,
            generation=GenSpec(skeleton=skeleton, **gen),
            model=ModelConfig.from_dict(model),
            train=TrainConfig.from_dict(train),
            num_sequences=int(count),
        )
    except TypeError as exc:
        raise ValueError(f"bad config field: {exc}") from exc


def load_config(path) -> AppConfig:
    """Parse a YAML config file; missing sections fall back to defaults."""
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if doc is None:
        doc = {}
    return config_from_dict(doc)
