"""Skeleton definitions, poses, forward kinematics and the camera model.

A skeleton is a rooted tree of J joints; joint 0 is the root. A pose stores
one rotation per joint: index 0 is the global (root) orientation, index j>0
the local rotation of joint j relative to its parent. Bone offsets are
expressed in the parent frame, in meters, with the rest direction +Y up.
"""

import json
import os
from dataclasses import dataclass, field

import torch

from .errors import (
    BehindCamera,
    CorruptFile,
    EmptySequence,
    LengthMismatch,
    ShapeMismatch,
    VersionMismatch,
)

SKELETON_FORMAT = "skel.v1"
_DATA_DIR = os.path.join(os.path.dirname(__file__), "data")


@dataclass(frozen=True, eq=False)
class SkeletonDef:
    """Immutable skeleton: names, tree structure, rest offsets, alignment refs.

    y_axis / x_axis name (from, to) joint pairs whose rest-pose directions
    define the canonical body frame used to orient keypoint inputs.
    """

    name: str
    joint_names: tuple
    parents: tuple
    offsets: torch.Tensor  # (J, 3) float64
    y_axis: tuple
    x_axis: tuple
    traversal: tuple = field(init=False, repr=False)

    def __post_init__(self):
        names = tuple(self.joint_names)
        parents = tuple(int(p) for p in self.parents)
        offsets = torch.as_tensor(self.offsets, dtype=torch.float64)
        object.__setattr__(self, "joint_names", names)
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "offsets", offsets)
        j = len(names)
        if len(set(names)) != j:
            raise CorruptFile("duplicate joint names")
        if len(parents) != j or offsets.shape != (j, 3):
            raise CorruptFile("joint_names, parents and offsets disagree on joint count")
        roots = [i for i, p in enumerate(parents) if p == -1]
        if roots != [0]:
            raise CorruptFile("exactly one root required, at index 0")
        if offsets[0].abs().max() > 0:
            raise CorruptFile("root offset must be zero")
        for i, p in enumerate(parents[1:], start=1):
            if not 0 <= p < j or p == i:
                raise CorruptFile(f"joint {i} has invalid parent {p}")
        # BFS order guarantees parents precede children and detects cycles
        children = {i: [] for i in range(j)}
        for i, p in enumerate(parents[1:], start=1):
            children[p].append(i)
        order, queue = [], [0]
        while queue:
            i = queue.pop(0)
            order.append(i)
            queue.extend(children[i])
        if len(order) != j:
            raise CorruptFile("skeleton graph is not a connected tree")
        object.__setattr__(self, "traversal", tuple(order))
        for pair in (self.y_axis, self.x_axis):
            if len(pair) != 2 or any(n not in names for n in pair):
                raise CorruptFile(f"alignment reference {pair!r} names unknown joints")

    @property
    def num_joints(self):
        return len(self.joint_names)

    @property
    def num_rotations(self):
        """K + 1: global orientation plus one local rotation per non-root joint."""
        return len(self.joint_names)

    def joint_index(self, name: str) -> int:
        return self.joint_names.index(name)

    def bone_lengths(self):
        """Rest lengths (J,), zero for the root."""
        return self.offsets.norm(dim=-1)

    def mean_bone_length(self) -> float:
        return self.bone_lengths()[1:].mean().item()

    def to_dict(self) -> dict:
        return {
            "format": SKELETON_FORMAT,
            "name": self.name,
            "joint_names": list(self.joint_names),
            "parents": list(self.parents),
            "offsets": [[float(v) for v in row] for row in self.offsets],
            "y_axis": list(self.y_axis),
            "x_axis": list(self.x_axis),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SkeletonDef":
        fmt = doc.get("format")
        if not isinstance(fmt, str) or not fmt.startswith("skel."):
            raise CorruptFile("not a skeleton document")
        if fmt != SKELETON_FORMAT:
            raise VersionMismatch(f"unsupported skeleton format {fmt!r}")
        try:
            return cls(
                name=doc["name"],
                joint_names=tuple(doc["joint_names"]),
                parents=tuple(doc["parents"]),
                offsets=torch.tensor(doc["offsets"], dtype=torch.float64),
                y_axis=tuple(doc["y_axis"]),
                x_axis=tuple(doc["x_axis"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptFile(f"malformed skeleton document: {exc}") from exc


def load_skeleton(name_or_path: str) -> SkeletonDef:
    """Load a skeleton by shipped name ("body23", "hand21") or file path."""
    path = name_or_path
    if not os.path.exists(path):
        candidate = os.path.join(_DATA_DIR, f"{name_or_path}.skel.json")
        if os.path.exists(candidate):
            path = candidate
        else:
            raise FileNotFoundError(f"no skeleton named or at {name_or_path!r}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CorruptFile(f"skeleton file is not valid JSON: {exc}") from exc
    return SkeletonDef.from_dict(doc)


def save_skeleton(path: str, skel: SkeletonDef) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(skel.to_dict(), fh, indent=1)
    os.replace(tmp, path)


@dataclass
class Pose:
    """One frame: rotations (K+1, 3, 3) with [0] global, translation (3,)."""

    rots: torch.Tensor
    trans: torch.Tensor


@dataclass
class PoseSequence:
    """A pose track at fixed frame rate with per-frame visibility flags."""

    skeleton: SkeletonDef
    fps: float
    rots: torch.Tensor  # (T, K+1, 3, 3)
    trans: torch.Tensor  # (T, 3)
    visible: torch.Tensor = None  # (T,) bool

    def __post_init__(self):
        if self.rots.dim() != 4 or self.rots.shape[-2:] != (3, 3):
            raise ShapeMismatch(f"rots must be (T, K+1, 3, 3), got {tuple(self.rots.shape)}")
        t = self.rots.shape[0]
        if t < 1:
            raise EmptySequence("a pose sequence needs at least one frame")
        if self.rots.shape[1] != self.skeleton.num_rotations:
            raise ShapeMismatch(
                f"expected {self.skeleton.num_rotations} rotations per frame, got {self.rots.shape[1]}"
            )
        if self.trans.shape != (t, 3):
            raise LengthMismatch(f"trans must be ({t}, 3), got {tuple(self.trans.shape)}")
        if self.visible is None:
            self.visible = torch.ones(t, dtype=torch.bool)
        elif self.visible.shape != (t,):
            raise LengthMismatch(f"visible must be ({t},), got {tuple(self.visible.shape)}")
        if self.fps <= 0:
            raise ValueError("fps must be positive")

    def __len__(self):
        return self.rots.shape[0]

    def frame(self, t: int) -> Pose:
        return Pose(rots=self.rots[t], trans=self.trans[t])

    def slice(self, start: int, stop: int) -> "PoseSequence":
        return PoseSequence(
            skeleton=self.skeleton,
            fps=self.fps,
            rots=self.rots[start:stop].clone(),
            trans=self.trans[start:stop].clone(),
            visible=self.visible[start:stop].clone(),
        )

    def clone(self) -> "PoseSequence":
        return self.slice(0, len(self))

    def joints(self) -> torch.Tensor:
        """World joint positions (T, J, 3) via forward kinematics."""
        return forward_kinematics(self.skeleton, self.rots, self.trans)

    @classmethod
    def from_poses(cls, skeleton, fps, poses, visible=None):
        if not poses:
            raise EmptySequence("no poses given")
        rots = torch.stack([p.rots for p in poses])
        trans = torch.stack([p.trans for p in poses])
        return cls(skeleton=skeleton, fps=fps, rots=rots, trans=trans, visible=visible)


def forward_kinematics(skel: SkeletonDef, rots: torch.Tensor, trans: torch.Tensor) -> torch.Tensor:
    """World joint positions from local rotations.

    Args:
        rots: (..., K+1, 3, 3), index 0 the global orientation.
        trans: (..., 3) root position in camera coordinates.

    Returns:
        (..., J, 3) positions; joint 0 coincides with trans.
    """
    j = skel.num_joints
    if rots.shape[-3:] != (j, 3, 3):
        raise ShapeMismatch(f"rots must end in ({j}, 3, 3), got {tuple(rots.shape)}")
    if trans.shape[-1] != 3 or trans.shape[:-1] != rots.shape[:-3]:
        raise ShapeMismatch("trans batch shape must match rots")
    offsets = skel.offsets.to(dtype=rots.dtype, device=rots.device)
    world_rot = [None] * j
    pos = [None] * j
    world_rot[0] = rots[..., 0, :, :]
    pos[0] = trans
    for i in skel.traversal[1:]:
        p = skel.parents[i]
        pos[i] = pos[p] + (world_rot[p] @ offsets[i].unsqueeze(-1)).squeeze(-1)
        world_rot[i] = world_rot[p] @ rots[..., i, :, :]
    return torch.stack(pos, dim=-2)


def mean_rotation(rots: torch.Tensor) -> torch.Tensor:
    """Chordal mean of rotations (N, 3, 3): SVD projection of the average."""
    m = rots.mean(dim=0)
    u, _, vt = torch.linalg.svd(m)
    d = torch.linalg.det(u @ vt)
    fix = torch.diag(torch.tensor([1.0, 1.0, float(d.sign())], dtype=rots.dtype))
    return u @ fix @ vt


def mean_pose(skel: SkeletonDef, sequences=None) -> Pose:
    """Mean pose of a corpus, or the rest pose at depth 3 m if none is given."""
    k1 = skel.num_rotations
    if not sequences:
        return Pose(
            rots=torch.eye(3, dtype=torch.float64).expand(k1, 3, 3).clone(),
            trans=torch.tensor([0.0, 0.0, 3.0], dtype=torch.float64),
        )
    rots = torch.cat([s.rots.to(torch.float64) for s in sequences])
    trans = torch.cat([s.trans.to(torch.float64) for s in sequences])
    mean_rots = torch.stack([mean_rotation(rots[:, i]) for i in range(k1)])
    return Pose(rots=mean_rots, trans=trans.mean(dim=0))


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera, principal point at the image center."""

    focal: float = 1500.0
    image_width: int = 1000
    image_height: int = 1000


def project_to_2d(points: torch.Tensor, cam: CameraIntrinsics = CameraIntrinsics()) -> torch.Tensor:
    """Project points (..., 3) to normalized image coordinates (..., 2).

    Normalized coordinates are pixel offsets from the principal point divided
    by half the image size, so the image spans [-1, 1] on both axes.

    Raises:
        BehindCamera: any point has depth <= 0.
    """
    z = points[..., 2]
    if bool((z <= 1e-9).any()):
        raise BehindCamera("cannot project points at non-positive depth")
    x = points[..., 0] * cam.focal / (z * (cam.image_width / 2.0))
    y = points[..., 1] * cam.focal / (z * (cam.image_height / 2.0))
    return torch.stack([x, y], dim=-1)


def nearness_from_depth(z):
    """log(1/z); large when close, slowly varying when far."""
    z = torch.as_tensor(z)
    if bool((z <= 0).any()):
        raise BehindCamera("depth must be positive")
    return -torch.log(z)


def depth_from_nearness(n):
    return torch.exp(-torch.as_tensor(n))


def unproject_root(xy: torch.Tensor, nearness: torch.Tensor, cam: CameraIntrinsics = CameraIntrinsics()) -> torch.Tensor:
    """Invert project_to_2d for the root point given its predicted nearness.

    Args:
        xy: (..., 2) normalized image coordinates.
        nearness: (...,) log inverse depth.

    Returns:
        (..., 3) camera-space position.
    """
    z = torch.exp(-nearness)
    x = xy[..., 0] * (cam.image_width / 2.0) * z / cam.focal
    y = xy[..., 1] * (cam.image_height / 2.0) * z / cam.focal
    return torch.stack([x, y, z], dim=-1)
