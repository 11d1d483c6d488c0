"""The masked sequence model.

A bidirectional pre-layernorm transformer encodes a window of per-frame pose
vectors; frames flagged invisible are replaced by a learned mask token before
a learned positional encoding is added. After every block, a weight-shared
error-feedback regressor refines a running parameter estimate
theta <- theta + MLP([features, theta]), starting from the mean pose. The
final estimate is split into per-joint 6D rotations (orthonormalized) and a
camera-space root translation recovered from predicted image position and
log inverse depth.
"""

import math
from dataclasses import asdict, dataclass

import torch
from torch import nn

from . import so3
from .errors import LengthMismatch, ShapeMismatch
from .inputs import KP3D, LAYOUTS, PARAM6D
from .skeleton import CameraIntrinsics, nearness_from_depth, project_to_2d, unproject_root


@dataclass
class ModelConfig:
    seq_len: int = 16
    d_model: int = 512
    num_blocks: int = 4
    num_heads: int = 8
    ffn_dim: int = None  # defaults to d_model
    regressor_hidden: int = 1024
    regressor_iterations: int = 1
    dropout: float = 0.1
    input_layout: str = PARAM6D
    with_2d_input: bool = False
    num_joints: int = 24  # K+1 rotations, one per joint including the root
    translation_head: bool = True
    shared_regressor: bool = True
    positional_encoding: bool = True

    def __post_init__(self):
        if self.input_layout not in LAYOUTS:
            raise ValueError(f"unknown input layout {self.input_layout!r}")
        if self.d_model % self.num_heads != 0:
            raise ValueError("d_model must be divisible by num_heads")
        if self.seq_len < 2:
            raise ValueError("seq_len must be at least 2")
        if self.num_joints < 2:
            raise ValueError("num_joints must be at least 2")

    @property
    def resolved_ffn_dim(self) -> int:
        return self.d_model if self.ffn_dim is None else self.ffn_dim

    @property
    def input_dim(self) -> int:
        if self.input_layout == PARAM6D:
            dim = 6 * self.num_joints
        else:
            dim = 3 * self.num_joints + 6
        if self.with_2d_input:
            dim += 2 * self.num_joints
        return dim

    @property
    def output_dim(self) -> int:
        return 6 * self.num_joints + (3 if self.translation_head else 0)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        return cls(**doc)


@dataclass
class ModelOutput:
    """Forward results; rotations are orthonormalized, trans in camera space."""

    pose6d: torch.Tensor  # (B, T, 6*(K+1))
    rotations: torch.Tensor  # (B, T, K+1, 3, 3)
    trans_params: torch.Tensor  # (B, T, 3): x2d, y2d, nearness
    trans: torch.Tensor  # (B, T, 3)


class _SeededDropout(nn.Module):
    """Dropout driven by an explicit generator so training runs are replayable."""

    def __init__(self, p: float, generator: torch.Generator):
        super().__init__()
        self.p = p
        self.generator = generator

    def forward(self, x):
        if not self.training or self.p <= 0:
            return x
        keep = torch.rand(x.shape, generator=self.generator, device=x.device) >= self.p
        return x * keep.to(x.dtype) / (1.0 - self.p)


class _Block(nn.Module):
    """Pre-layernorm transformer block with full bidirectional attention."""

    def __init__(self, d_model, num_heads, ffn_dim):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.attn = nn.MultiheadAttention(d_model, num_heads, dropout=0.0, batch_first=True)
        self.norm2 = nn.LayerNorm(d_model)
        self.fc1 = nn.Linear(d_model, ffn_dim)
        self.fc2 = nn.Linear(ffn_dim, d_model)

    def forward(self, x):
        h = self.norm1(x)
        x = x + self.attn(h, h, h, need_weights=False)[0]
        x = x + self.fc2(torch.relu(self.fc1(self.norm2(x))))
        return x


class _Regressor(nn.Module):
    """Error-feedback parameter head: predicts a delta from [features, theta]."""

    def __init__(self, feat_dim, out_dim, hidden, dropout, generator):
        super().__init__()
        self.fc1 = nn.Linear(feat_dim + out_dim, hidden)
        self.drop1 = _SeededDropout(dropout, generator)
        self.fc2 = nn.Linear(hidden, hidden)
        self.drop2 = _SeededDropout(dropout, generator)
        self.dec = nn.Linear(hidden, out_dim)
        nn.init.xavier_uniform_(self.dec.weight, gain=0.01)
        nn.init.zeros_(self.dec.bias)

    def forward(self, feats, theta):
        h = torch.cat([feats, theta], dim=-1)
        h = self.drop1(torch.relu(self.fc1(h)))
        h = self.drop2(torch.relu(self.fc2(h)))
        return self.dec(h)


def default_initial_state(num_joints: int, translation_head: bool = True) -> torch.Tensor:
    """Mean-pose starting estimate: identity 6D per joint, depth 3 m."""
    pose = torch.tensor([1.0, 0, 0, 0, 1, 0]).repeat(num_joints)
    if not translation_head:
        return pose
    trans = torch.tensor([0.0, 0.0, math.log(1.0 / 3.0)])
    return torch.cat([pose, trans])


class MotionTransformer(nn.Module):
    """Masked pose-sequence model; see the module docstring.

    Args:
        config: architecture hyperparameters.
        cam: intrinsics used to lift predicted image position and nearness
            to a camera-space translation.
        rng_seed: seed for the module-local generator driving dropout.
    """

    def __init__(self, config: ModelConfig, cam: CameraIntrinsics = CameraIntrinsics(), rng_seed: int = 0):
        super().__init__()
        self.config = config
        self.cam = cam
        self.rng = torch.Generator()
        self.rng.manual_seed(rng_seed)

        d = config.d_model
        self.embed = nn.Linear(config.input_dim, d)
        self.mask_token = nn.Parameter(torch.empty(d).normal_(0.0, 0.02, generator=self.rng))
        if config.positional_encoding:
            self.pos_enc = nn.Parameter(
                torch.empty(config.seq_len, d).normal_(0.0, 0.02, generator=self.rng)
            )
        else:
            self.pos_enc = None
        self.blocks = nn.ModuleList(
            [_Block(d, config.num_heads, config.resolved_ffn_dim) for _ in range(config.num_blocks)]
        )
        self.feat_norm = nn.LayerNorm(d)
        n_regressors = 1 if config.shared_regressor else config.num_blocks
        self.regressors = nn.ModuleList(
            [
                _Regressor(d, config.output_dim, config.regressor_hidden, config.dropout, self.rng)
                for _ in range(n_regressors)
            ]
        )
        self.register_buffer(
            "initial_state", default_initial_state(config.num_joints, config.translation_head)
        )

    def set_initial_state(self, pose) -> None:
        """Refresh the starting estimate from a Pose (e.g. a corpus mean)."""
        parts = [so3.matrix_to_rot6d(pose.rots).flatten()]
        if self.config.translation_head:
            xy = project_to_2d(pose.trans, self.cam)
            n = nearness_from_depth(pose.trans[2])
            parts.append(torch.cat([xy, n.reshape(1)]))
        state = torch.cat(parts).to(self.initial_state.dtype)
        with torch.no_grad():
            self.initial_state.copy_(state)

    def forward(self, x: torch.Tensor, visible: torch.Tensor = None) -> ModelOutput:
        """Run one window.

        Args:
            x: (B, T, input_dim) per-frame vectors; content at invisible
                frames is ignored (any values, including NaN, are safe).
            visible: (B, T) bool, default all True.

        Returns:
            ModelOutput with per-frame rotations and translation.
        """
        if x.dim() != 3:
            raise ShapeMismatch(f"expected (B, T, D) input, got {tuple(x.shape)}")
        b, t, d_in = x.shape
        cfg = self.config
        if t != cfg.seq_len:
            raise LengthMismatch(f"model window is {cfg.seq_len} frames, got {t}")
        if d_in != cfg.input_dim:
            raise ShapeMismatch(f"expected input width {cfg.input_dim}, got {d_in}")
        if visible is None:
            visible = torch.ones(b, t, dtype=torch.bool, device=x.device)
        if visible.shape != (b, t):
            raise LengthMismatch(f"visible must be ({b}, {t}), got {tuple(visible.shape)}")
        visible = visible.bool()

        vis = visible.unsqueeze(-1)
        x = torch.where(vis, x, torch.zeros((), dtype=x.dtype, device=x.device))
        h = torch.where(vis, self.embed(x), self.mask_token.to(x.dtype))
        if self.pos_enc is not None:
            h = h + self.pos_enc.to(x.dtype)

        theta = self.initial_state.to(x.dtype).expand(b, t, -1)
        for i, block in enumerate(self.blocks):
            h = block(h)
            feats = self.feat_norm(h)
            regressor = self.regressors[0] if cfg.shared_regressor else self.regressors[i]
            for _ in range(cfg.regressor_iterations):
                theta = theta + regressor(feats, theta)

        pose6d = theta[..., : 6 * cfg.num_joints]
        rotations = so3.rot6d_to_matrix(pose6d.reshape(b, t, cfg.num_joints, 6))
        if cfg.translation_head:
            trans_params = theta[..., 6 * cfg.num_joints :]
        else:
            trans_params = torch.tensor(
                [0.0, 0.0, math.log(1.0 / 3.0)], dtype=x.dtype, device=x.device
            ).expand(b, t, 3)
        trans = unproject_root(trans_params[..., :2], trans_params[..., 2], self.cam)
        return ModelOutput(pose6d=pose6d, rotations=rotations, trans_params=trans_params, trans=trans)


def count_parameters(module: nn.Module) -> int:
    """Number of trainable parameters."""
    return sum(p.numel() for p in module.parameters() if p.requires_grad)
