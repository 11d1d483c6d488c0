"""Training loop and checkpointing.

The loss follows the masked-modelling recipe: squared Frobenius distance
between predicted and target stacked rotation matrices plus squared
translation error, applied to every timestep of the final estimate (no
visibility weighting), averaged over batch and time.

Checkpoints are a single binary file: magic "PBCK", a u32 format version,
a length-prefixed JSON config document, a length-prefixed JSON tensor
manifest, then raw little-endian tensor payloads. Round trips are bit exact
and carry enough optimizer/RNG state to resume a run step for step.
"""

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np
import torch

from .corruption import CorruptionSpec, corrupt_batch
from .errors import CorruptFile, NonFiniteLoss, SequenceTooShort, VersionMismatch
from .inputs import build_inputs_from_tensors
from .model import ModelConfig, MotionTransformer
from .skeleton import CameraIntrinsics, SkeletonDef

CHECKPOINT_MAGIC = b"PBCK"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    learning_rate: float = 3e-4
    batch_size: int = 8
    max_steps: int = 20000
    eval_every: int = 500
    seed: int = 0
    w_pose: float = 1.0
    w_trans: float = 1.0
    corruption: CorruptionSpec = field(default_factory=CorruptionSpec)

    def __post_init__(self):
        if self.batch_size < 1 or self.max_steps < 0 or self.eval_every < 1:
            raise ValueError("batch_size/eval_every must be >= 1 and max_steps >= 0")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")

    def to_dict(self) -> dict:
        doc = {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "max_steps": self.max_steps,
            "eval_every": self.eval_every,
            "seed": self.seed,
            "w_pose": self.w_pose,
            "w_trans": self.w_trans,
            "corruption": self.corruption.to_dict(),
        }
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        doc["corruption"] = CorruptionSpec.from_dict(doc.get("corruption", {}))
        return cls(**doc)


def sequence_loss(output, target_rots, target_trans, w_pose: float = 1.0, w_trans: float = 1.0):
    """Loss over a batch of windows.

    Args:
        output: ModelOutput from the forward pass.
        target_rots: (B, T, K+1, 3, 3) clean rotations.
        target_trans: (B, T, 3) clean translations.

    Returns:
        (scalar loss, dict of detached float components).
    """
    diff = output.rotations - target_rots
    pose = diff.pow(2).sum(dim=(-3, -2, -1)).mean()
    trans = (output.trans - target_trans).pow(2).sum(dim=-1).mean()
    total = w_pose * pose + w_trans * trans
    parts = {"pose": float(pose.detach()), "trans": float(trans.detach()), "total": float(total.detach())}
    return total, parts


@dataclass
class TrainBatch:
    inputs: torch.Tensor  # (B, T, D)
    visible: torch.Tensor  # (B, T) bool
    target_rots: torch.Tensor  # (B, T, K+1, 3, 3)
    target_trans: torch.Tensor  # (B, T, 3)


def prepare_batch(
    skel: SkeletonDef,
    rots: torch.Tensor,
    trans: torch.Tensor,
    spec: CorruptionSpec,
    generator: torch.Generator,
    layout: str = "param6d",
    with_2d: bool = False,
    cam: CameraIntrinsics = CameraIntrinsics(),
) -> TrainBatch:
    """Corrupt clean windows and build the model inputs; targets stay clean."""
    corrupted = corrupt_batch(rots, trans, spec, generator)
    inputs = build_inputs_from_tensors(skel, corrupted.rots, corrupted.trans, layout, with_2d, cam)
    return TrainBatch(
        inputs=inputs.to(rots.dtype),
        visible=corrupted.visible,
        target_rots=rots,
        target_trans=trans,
    )


def train_step(model: MotionTransformer, optimizer, batch: TrainBatch, w_pose=1.0, w_trans=1.0) -> dict:
    """One optimization step on an already-corrupted batch.

    Raises:
        NonFiniteLoss: the forward produced NaN or Inf (no step is taken).
    """
    model.train()
    output = model(batch.inputs, batch.visible)
    loss, parts = sequence_loss(output, batch.target_rots, batch.target_trans, w_pose, w_trans)
    if not torch.isfinite(loss):
        raise NonFiniteLoss(f"loss is {float(loss.detach())!r}")
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()
    return parts


class Trainer:
    """Samples corrupted windows from a corpus and fits the model.

    All randomness flows through two generators (window sampling/corruption,
    and the model's dropout generator), both captured in checkpoints, so a
    restored run reproduces the original step for step.
    """

    def __init__(self, model: MotionTransformer, sequences, config: TrainConfig, log_path: str = None):
        if not sequences:
            raise ValueError("no training sequences")
        t = model.config.seq_len
        usable = [s for s in sequences if len(s) >= t]
        if not usable:
            raise SequenceTooShort(f"no sequence is at least {t} frames long")
        self.model = model
        self.config = config
        self.skeleton = usable[0].skeleton
        self.log_path = log_path
        self._rots = [s.rots.to(torch.float32) for s in usable]
        self._trans = [s.trans.to(torch.float32) for s in usable]
        self.generator = torch.Generator()
        self.generator.manual_seed(config.seed)
        self.model.rng.manual_seed(config.seed + 0x5EED)
        self.optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate, foreach=True)
        self.step_count = 0
        self.history = []
        self._since_log = []

    def sample_windows(self):
        """Draw (B, T, ...) clean windows uniformly over sequences and starts."""
        b, t = self.config.batch_size, self.model.config.seq_len
        rots, trans = [], []
        n = len(self._rots)
        seq_idx = torch.randint(n, (b,), generator=self.generator)
        for i in seq_idx.tolist():
            start = int(torch.randint(len(self._rots[i]) - t + 1, (), generator=self.generator))
            rots.append(self._rots[i][start : start + t])
            trans.append(self._trans[i][start : start + t])
        return torch.stack(rots), torch.stack(trans)

    def sample_batch(self) -> TrainBatch:
        rots, trans = self.sample_windows()
        cfg = self.model.config
        return prepare_batch(
            self.skeleton,
            rots,
            trans,
            self.config.corruption,
            self.generator,
            layout=cfg.input_layout,
            with_2d=cfg.with_2d_input,
            cam=self.model.cam,
        )

    def train_step(self) -> dict:
        batch = self.sample_batch()
        parts = train_step(self.model, self.optimizer, batch, self.config.w_pose, self.config.w_trans)
        self.step_count += 1
        self._since_log.append(parts)
        if self.step_count % self.config.eval_every == 0:
            self._flush_log()
        return parts

    def _flush_log(self):
        if not self._since_log:
            return
        record = {
            "step": self.step_count,
            "loss": float(np.mean([p["total"] for p in self._since_log])),
            "pose": float(np.mean([p["pose"] for p in self._since_log])),
            "trans": float(np.mean([p["trans"] for p in self._since_log])),
        }
        self._since_log = []
        self.history.append(record)
        if self.log_path:
            with open(self.log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record) + "\n")

    def run(self, steps: int = None, progress=None) -> list:
        """Train until max_steps (or for the given number of extra steps)."""
        target = self.config.max_steps if steps is None else self.step_count + steps
        while self.step_count < target:
            parts = self.train_step()
            if progress is not None:
                progress(self.step_count, parts)
        self._flush_log()
        return self.history

    def save(self, path: str) -> None:
        save_checkpoint(
            path,
            self.model,
            optimizer=self.optimizer,
            step=self.step_count,
            train_config=self.config,
            skeleton=self.skeleton,
            trainer_rng=self.generator,
        )

    @classmethod
    def restore(cls, path: str, sequences, log_path: str = None) -> "Trainer":
        """Rebuild a trainer mid-run from a checkpoint and the same corpus."""
        ckpt = load_checkpoint(path)
        if ckpt.train_config is None:
            raise CorruptFile("checkpoint carries no training state to resume from")
        model = build_model(ckpt)
        trainer = cls(model, sequences, ckpt.train_config, log_path=log_path)
        trainer.optimizer.load_state_dict(ckpt.optimizer_state)
        trainer.step_count = ckpt.step
        trainer.generator.set_state(ckpt.rng_states["trainer"])
        model.rng.set_state(ckpt.rng_states["model"])
        return trainer


_DTYPES = {
    torch.float32: "float32",
    torch.float64: "float64",
    torch.int64: "int64",
    torch.int32: "int32",
    torch.uint8: "uint8",
    torch.bool: "bool",
}
_NP_DTYPES = {
    "float32": np.float32,
    "float64": np.float64,
    "int64": np.int64,
    "int32": np.int32,
    "uint8": np.uint8,
    "bool": np.bool_,
}


@dataclass
class Checkpoint:
    """Decoded checkpoint contents."""

    model_config: ModelConfig
    skeleton: SkeletonDef
    train_config: TrainConfig
    step: int
    camera: CameraIntrinsics
    model_state: dict
    optimizer_state: dict
    rng_states: dict


def _flatten_tensors(model, optimizer, trainer_rng):
    tensors = {}
    for name, value in model.state_dict().items():
        tensors[f"model/{name}"] = value
    opt_groups = None
    if optimizer is not None:
        state = optimizer.state_dict()
        opt_groups = state["param_groups"]
        for pid, entry in state["state"].items():
            for key, value in entry.items():
                if torch.is_tensor(value):
                    tensors[f"optimizer/{pid}/{key}"] = value
    tensors["rng/model"] = model.rng.get_state()
    if trainer_rng is not None:
        tensors["rng/trainer"] = trainer_rng.get_state()
    return tensors, opt_groups


def save_checkpoint(
    path: str,
    model: MotionTransformer,
    optimizer=None,
    step: int = 0,
    train_config: TrainConfig = None,
    skeleton: SkeletonDef = None,
    trainer_rng: torch.Generator = None,
) -> None:
    """Write the binary checkpoint; the file appears atomically."""
    tensors, opt_groups = _flatten_tensors(model, optimizer, trainer_rng)
    config_doc = {
        "model_config": model.config.to_dict(),
        "train_config": train_config.to_dict() if train_config else None,
        "skeleton": skeleton.to_dict() if skeleton else None,
        "step": int(step),
        "optimizer_param_groups": opt_groups,
        "camera": {
            "focal": model.cam.focal,
            "image_width": model.cam.image_width,
            "image_height": model.cam.image_height,
        },
    }
    manifest = []
    offset = 0
    blobs = []
    for name in sorted(tensors):
        value = tensors[name].detach().cpu().contiguous()
        raw = value.numpy().tobytes()
        manifest.append(
            {
                "name": name,
                "dtype": _DTYPES[value.dtype],
                "shape": list(value.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)

    config_bytes = json.dumps(config_doc).encode("utf-8")
    manifest_bytes = json.dumps(manifest).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(config_bytes)))
        fh.write(config_bytes)
        fh.write(struct.pack("<Q", len(manifest_bytes)))
        fh.write(manifest_bytes)
        for raw in blobs:
            fh.write(raw)
    os.replace(tmp, path)


def _read_exact(fh, n, what):
    raw = fh.read(n)
    if len(raw) != n:
        raise CorruptFile(f"checkpoint truncated while reading {what}")
    return raw


def load_checkpoint(path: str) -> Checkpoint:
    """Decode a checkpoint file.

    Raises:
        CorruptFile: bad magic, truncation, or malformed sections.
        VersionMismatch: written by a different format version.
    """
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise CorruptFile("not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise VersionMismatch(f"checkpoint format v{version}, expected v{CHECKPOINT_VERSION}")
        (clen,) = struct.unpack("<Q", _read_exact(fh, 8, "config length"))
        try:
            config_doc = json.loads(_read_exact(fh, clen, "config"))
        except json.JSONDecodeError as exc:
            raise CorruptFile(f"bad config document: {exc}") from exc
        (mlen,) = struct.unpack("<Q", _read_exact(fh, 8, "manifest length"))
        try:
            manifest = json.loads(_read_exact(fh, mlen, "manifest"))
        except json.JSONDecodeError as exc:
            raise CorruptFile(f"bad manifest: {exc}") from exc
        payload = fh.read()

    tensors = {}
    for entry in manifest:
        lo, hi = entry["offset"], entry["offset"] + entry["nbytes"]
        if hi > len(payload):
            raise CorruptFile(f"tensor {entry['name']!r} extends past end of file")
        arr = np.frombuffer(payload[lo:hi], dtype=_NP_DTYPES[entry["dtype"]]).reshape(entry["shape"])
        tensors[entry["name"]] = torch.from_numpy(arr.copy())

    model_state = {k[len("model/") :]: v for k, v in tensors.items() if k.startswith("model/")}
    opt_state = None
    if config_doc.get("optimizer_param_groups") is not None:
        state = {}
        for key, value in tensors.items():
            if not key.startswith("optimizer/"):
                continue
            _, pid, field_name = key.split("/", 2)
            state.setdefault(int(pid), {})[field_name] = value
        opt_state = {"state": state, "param_groups": config_doc["optimizer_param_groups"]}
    rng_states = {k.split("/", 1)[1]: v for k, v in tensors.items() if k.startswith("rng/")}

    cam_doc = config_doc.get("camera") or {}
    train_doc = config_doc.get("train_config")
    skel_doc = config_doc.get("skeleton")
    return Checkpoint(
        model_config=ModelConfig.from_dict(config_doc["model_config"]),
        skeleton=SkeletonDef.from_dict(skel_doc) if skel_doc else None,
        train_config=TrainConfig.from_dict(train_doc) if train_doc else None,
        step=int(config_doc.get("step", 0)),
        camera=CameraIntrinsics(
            focal=cam_doc.get("focal", 1500.0),
            image_width=cam_doc.get("image_width", 1000),
            image_height=cam_doc.get("image_height", 1000),
        ),
        model_state=model_state,
        optimizer_state=opt_state,
        rng_states=rng_states,
    )


def build_model(ckpt: Checkpoint) -> MotionTransformer:
    """Instantiate the model a checkpoint describes and load its weights."""
    model = MotionTransformer(ckpt.model_config, cam=ckpt.camera)
    model.load_state_dict(ckpt.model_state)
    if "model" in ckpt.rng_states:
        model.rng.set_state(ckpt.rng_states["model"])
    return model
