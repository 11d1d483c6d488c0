"""Training-time corruption: masking, parameter noise, pose and joint swaps.

Applied in a fixed order by corrupt_batch: sample the frame mask, add
Gaussian noise to axis-angle coordinates, replace some frames with poses
stolen from other batch items, then replace some individual joints with
uniform random rotations. Targets are always the uncorrupted originals.
"""

from dataclasses import dataclass

import torch

from . import so3
from .errors import BatchTooSmall, ShapeMismatch

MASK_RATIO_DEFAULT = (0.05, 0.5)


@dataclass
class CorruptionSpec:
    """Knobs for the corruption pipeline.

    mask_ratio may be a single ratio or a (low, high) range sampled per
    window. max_block_len of None means a quarter of the window.
    """

    mask_ratio: object = MASK_RATIO_DEFAULT
    block_mask_prob: float = 0.5
    max_block_len: int = None
    gauss_sigma: float = 0.05
    random_pose_frac: float = 0.0
    random_joint_frac: float = 0.0

    def __post_init__(self):
        lo, hi = self.mask_ratio_range()
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError(f"mask_ratio must lie in [0, 1], got {self.mask_ratio!r}")
        if not 0.0 <= self.block_mask_prob <= 1.0:
            raise ValueError("block_mask_prob must lie in [0, 1]")
        if self.gauss_sigma < 0:
            raise ValueError("gauss_sigma must be non-negative")
        for name in ("random_pose_frac", "random_joint_frac"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    def mask_ratio_range(self):
        if isinstance(self.mask_ratio, (tuple, list)):
            lo, hi = self.mask_ratio
            return float(lo), float(hi)
        return float(self.mask_ratio), float(self.mask_ratio)

    def to_dict(self) -> dict:
        doc = {
            "mask_ratio": list(self.mask_ratio) if isinstance(self.mask_ratio, (tuple, list)) else self.mask_ratio,
            "block_mask_prob": self.block_mask_prob,
            "max_block_len": self.max_block_len,
            "gauss_sigma": self.gauss_sigma,
            "random_pose_frac": self.random_pose_frac,
            "random_joint_frac": self.random_joint_frac,
        }
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "CorruptionSpec":
        doc = dict(doc)
        ratio = doc.get("mask_ratio", MASK_RATIO_DEFAULT)
        if isinstance(ratio, list):
            doc["mask_ratio"] = tuple(ratio)
        return cls(**doc)


@dataclass
class CorruptedBatch:
    """corrupt_batch result; rots/trans are the corrupted inputs."""

    rots: torch.Tensor  # (B, T, K+1, 3, 3)
    trans: torch.Tensor  # (B, T, 3)
    visible: torch.Tensor  # (B, T) bool, False where masked
    masked: torch.Tensor  # (B, T) bool


def sample_mask(t: int, spec: CorruptionSpec, generator: torch.Generator) -> torch.Tensor:
    """Draw a per-frame mask (True = hidden) for a window of t frames.

    Exactly round(ratio * t) frames are masked, capped at t - 1 so one frame
    always stays visible. With probability block_mask_prob the masked set
    starts as one contiguous run of length min(count, max_block_len), the
    remainder drawn uniformly; otherwise all masked frames are uniform.
    """
    lo, hi = spec.mask_ratio_range()
    if hi > lo:
        ratio = lo + (hi - lo) * torch.rand((), generator=generator).item()
    else:
        ratio = lo
    n_mask = min(int(round(ratio * t)), t - 1)
    masked = torch.zeros(t, dtype=torch.bool)
    if n_mask == 0:
        return masked
    use_block = torch.rand((), generator=generator).item() < spec.block_mask_prob
    if use_block:
        cap = spec.max_block_len if spec.max_block_len is not None else max(1, t // 4)
        run = min(n_mask, cap)
        start = int(torch.randint(0, t - run + 1, (), generator=generator))
        masked[start : start + run] = True
        remaining = n_mask - run
        if remaining > 0:
            free = torch.nonzero(~masked).flatten()
            pick = torch.randperm(len(free), generator=generator)[:remaining]
            masked[free[pick]] = True
    else:
        pick = torch.randperm(t, generator=generator)[:n_mask]
        masked[pick] = True
    return masked


def noisy_rotations(rots: torch.Tensor, sigma: float, generator: torch.Generator) -> torch.Tensor:
    """Add zero-mean Gaussian noise to axis-angle coordinates of rotations."""
    if sigma == 0:
        return rots.clone()
    aa = so3.matrix_to_axis_angle(rots)
    aa = aa + sigma * torch.randn(aa.shape, generator=generator, dtype=aa.dtype)
    return so3.axis_angle_to_matrix(aa)


def swap_random_poses(rots: torch.Tensor, frac: float, generator: torch.Generator) -> torch.Tensor:
    """Replace a fraction of frames with whole poses from other batch items.

    Args:
        rots: (B, T, K+1, 3, 3).

    Raises:
        BatchTooSmall: frac > 0 with fewer than two batch items.
    """
    if rots.dim() != 5:
        raise ShapeMismatch("swap_random_poses expects (B, T, K+1, 3, 3)")
    out = rots.clone()
    if frac == 0:
        return out
    b, t = rots.shape[:2]
    if b < 2:
        raise BatchTooSmall("pose swapping needs at least two sequences in the batch")
    sel = torch.rand(b, t, generator=generator) < frac
    if not bool(sel.any()):
        return out
    src_b = (
        torch.arange(b).unsqueeze(1).expand(b, t) + torch.randint(1, b, (b, t), generator=generator)
    ) % b
    src_t = torch.randint(0, t, (b, t), generator=generator)
    out[sel] = rots[src_b[sel], src_t[sel]]
    return out


def randomize_joints(rots: torch.Tensor, frac: float, generator: torch.Generator) -> torch.Tensor:
    """Replace a fraction of individual joint rotations with uniform rotations."""
    out = rots.clone()
    if frac == 0:
        return out
    sel = torch.rand(rots.shape[:-2], generator=generator) < frac
    n = int(sel.sum())
    if n:
        out[sel] = so3.random_rotations(n, generator=generator, dtype=rots.dtype)
    return out


def corrupt_batch(
    rots: torch.Tensor,
    trans: torch.Tensor,
    spec: CorruptionSpec,
    generator: torch.Generator,
) -> CorruptedBatch:
    """Run the full pipeline over a batch of windows.

    Inputs are not mutated; translation passes through unchanged.
    """
    if rots.dim() != 5:
        raise ShapeMismatch("corrupt_batch expects rots of shape (B, T, K+1, 3, 3)")
    b, t = rots.shape[:2]
    if trans.shape != (b, t, 3):
        raise ShapeMismatch(f"trans must be ({b}, {t}, 3), got {tuple(trans.shape)}")
    masked = torch.stack([sample_mask(t, spec, generator) for _ in range(b)])
    out = noisy_rotations(rots, spec.gauss_sigma, generator)
    if spec.random_pose_frac > 0:
        out = swap_random_poses(out, spec.random_pose_frac, generator)
    if spec.random_joint_frac > 0:
        out = randomize_joints(out, spec.random_joint_frac, generator)
    return CorruptedBatch(rots=out, trans=trans.clone(), visible=~masked, masked=masked)


def corrupt_sequence(seq, spec: CorruptionSpec, generator: torch.Generator):
    """Corrupt one PoseSequence; returns (sequence with updated flags, mask).

    Pose swapping needs a batch, so random_pose_frac must be zero here.
    """
    from .skeleton import PoseSequence

    if spec.random_pose_frac > 0:
        raise BatchTooSmall("random_pose_frac needs a batch; use corrupt_batch")
    batch = corrupt_batch(seq.rots.unsqueeze(0), seq.trans.unsqueeze(0), spec, generator)
    out = PoseSequence(
        skeleton=seq.skeleton,
        fps=seq.fps,
        rots=batch.rots[0],
        trans=batch.trans[0],
        visible=seq.visible & batch.visible[0],
    )
    return out, batch.masked[0]
