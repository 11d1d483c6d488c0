"""Pose-sequence files and corpus directories.

A .pseq file is a single JSON document ("pseq.v1") carrying the frame rate,
an inline skeleton, per-frame rotations as axis-angle coordinates, root
translations in meters, and visibility flags. A corpus directory holds one
.pseq file per sequence plus a manifest.json ("corpus.v1") naming the
train/val/test split members.
"""

import json
import os

import torch

from . import so3
from .errors import CorruptFile, VersionMismatch
from .skeleton import PoseSequence, SkeletonDef
from .synthgen import Corpus

SEQUENCE_FORMAT = "pseq.v1"
MANIFEST_FORMAT = "corpus.v1"
MANIFEST_NAME = "manifest.json"
SPLITS = ("train", "val", "test")


def _check_format(doc, family: str, version: str, path):
    if not isinstance(doc, dict) or "format" not in doc:
        raise CorruptFile(f"{path}: missing format marker")
    fmt = str(doc["format"])
    if not fmt.startswith(family + "."):
        raise CorruptFile(f"{path}: not a {family} document (format {fmt!r})")
    if fmt != version:
        raise VersionMismatch(f"{path}: unsupported {family} version {fmt!r}")


def sequence_to_doc(seq: PoseSequence) -> dict:
    aa = so3.matrix_to_axis_angle(seq.rots.to(torch.float64))
    return {
        "format": SEQUENCE_FORMAT,
        "fps": float(seq.fps),
        "skeleton": seq.skeleton.to_dict(),
        "frame_count": len(seq),
        "rotations": aa.flatten(-2).tolist(),
        "translations": seq.trans.to(torch.float64).tolist(),
        "visible": [bool(v) for v in seq.visible],
    }


def sequence_from_doc(doc, path="<doc>") -> PoseSequence:
    _check_format(doc, "pseq", SEQUENCE_FORMAT, path)
    try:
        skeleton = SkeletonDef.from_dict(doc["skeleton"])
        fps = float(doc["fps"])
        count = int(doc["frame_count"])
        rotations = doc["rotations"]
        translations = doc["translations"]
        visible = doc["visible"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptFile(f"{path}: {exc}") from exc
    if not (len(rotations) == len(translations) == len(visible) == count):
        raise CorruptFile(f"{path}: frame_count {count} does not match the frame arrays")
    width = 3 * skeleton.num_rotations
    if any(len(row) != width for row in rotations):
        raise CorruptFile(f"{path}: rotation rows must have {width} values")
    aa = torch.tensor(rotations, dtype=torch.float64).reshape(count, skeleton.num_rotations, 3)
    return PoseSequence(
        skeleton=skeleton,
        fps=fps,
        rots=so3.axis_angle_to_matrix(aa),
        trans=torch.tensor(translations, dtype=torch.float64),
        visible=torch.tensor(visible, dtype=torch.bool),
    )


def save_sequence(path, seq: PoseSequence):
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(sequence_to_doc(seq), fh, separators=(",", ":"))
    os.replace(tmp, path)


def load_sequence(path) -> PoseSequence:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CorruptFile(f"{path}: not valid JSON ({exc})") from exc
    return sequence_from_doc(doc, path)


def save_corpus(dir_path, corpus: Corpus):
    """Write one .pseq per sequence plus a manifest; returns the manifest path."""
    os.makedirs(dir_path, exist_ok=True)
    splits = {}
    for split in SPLITS:
        names = []
        for i, seq in enumerate(getattr(corpus, split)):
            name = f"{split}_{i:04d}.pseq"
            save_sequence(os.path.join(dir_path, name), seq)
            names.append(name)
        splits[split] = names
    manifest = {"format": MANIFEST_FORMAT, "splits": splits}
    tmp = os.path.join(dir_path, MANIFEST_NAME + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=2)
    path = os.path.join(dir_path, MANIFEST_NAME)
    os.replace(tmp, path)
    return path


def load_corpus(dir_path) -> Corpus:
    path = os.path.join(dir_path, MANIFEST_NAME)
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CorruptFile(f"{path}: not valid JSON ({exc})") from exc
    _check_format(doc, "corpus", MANIFEST_FORMAT, path)
    splits = doc.get("splits")
    if not isinstance(splits, dict) or set(splits) != set(SPLITS):
        raise CorruptFile(f"{path}: manifest must list train/val/test splits")
    loaded = {
        split: [load_sequence(os.path.join(dir_path, name)) for name in splits[split]]
        for split in SPLITS
    }
    return Corpus(**loaded)
