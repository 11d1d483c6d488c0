"""Builders for the per-frame vectors fed to the sequence model.

Two layouts:
  * PARAM6D: the 6D representation of every rotation, 6*(K+1) values.
  * KP3D: root-centered, bone-length-normalized, alignment-rotated keypoints
    (3*J values) plus the 6D of the alignment rotation.
An optional block of 2J normalized 2D keypoints can be appended to either.
"""

import torch

from . import so3
from .errors import DegenerateFrame, ShapeMismatch, ZeroLengthBone
from .skeleton import CameraIntrinsics, forward_kinematics, project_to_2d

PARAM6D = "param6d"
KP3D = "kp3d"
LAYOUTS = (PARAM6D, KP3D)

_EPS = 1e-8


def input_dim(layout: str, skel, with_2d: bool = False) -> int:
    """Width of one frame's input vector for the given configuration."""
    if layout == PARAM6D:
        dim = 6 * skel.num_rotations
    elif layout == KP3D:
        dim = 3 * skel.num_joints + 6
    else:
        raise ValueError(f"unknown input layout {layout!r}")
    if with_2d:
        dim += 2 * skel.num_joints
    return dim


def build_param_input(rots: torch.Tensor) -> torch.Tensor:
    """Flatten rotations (..., K+1, 3, 3) to (..., 6*(K+1))."""
    return so3.matrix_to_rot6d(rots).flatten(-2)


def param_input_to_rotations(x: torch.Tensor, num_rotations: int) -> torch.Tensor:
    """Inverse of build_param_input, Gram-Schmidt included."""
    if x.shape[-1] != 6 * num_rotations:
        raise ShapeMismatch(f"expected width {6 * num_rotations}, got {x.shape[-1]}")
    return so3.rot6d_to_matrix(x.reshape(*x.shape[:-1], num_rotations, 6))


def normalize_bone_lengths(joints: torch.Tensor, skel) -> torch.Tensor:
    """Rescale every bone to its rest length, keeping directions and the root.

    Args:
        joints: (..., J, 3) world or root-centered positions.

    Raises:
        ZeroLengthBone: an observed bone is too short to define a direction.
    """
    if joints.shape[-2] != skel.num_joints:
        raise ShapeMismatch("joint count does not match skeleton")
    rest = skel.bone_lengths().to(joints.dtype)
    out = [None] * skel.num_joints
    out[0] = joints[..., 0, :]
    for i in skel.traversal[1:]:
        p = skel.parents[i]
        seg = joints[..., i, :] - joints[..., p, :]
        length = seg.norm(dim=-1, keepdim=True)
        if bool((length < _EPS).any()):
            raise ZeroLengthBone(f"bone into joint {skel.joint_names[i]!r} has near-zero length")
        out[i] = out[p] + seg / length * rest[i]
    return torch.stack(out, dim=-2)


def alignment_rotation(joints: torch.Tensor, skel) -> torch.Tensor:
    """Rotation mapping the body into its canonical frame.

    The skeleton's y_axis joint pair defines up, the x_axis pair defines
    lateral; rows of the returned matrix are the orthonormalized body axes,
    so p_canonical = R @ p_world. Identity for the rest pose.

    Args:
        joints: (..., J, 3).

    Raises:
        DegenerateFrame: reference directions are near zero or collinear.
    """
    yi = [skel.joint_index(n) for n in skel.y_axis]
    xi = [skel.joint_index(n) for n in skel.x_axis]
    y = joints[..., yi[1], :] - joints[..., yi[0], :]
    ny = y.norm(dim=-1, keepdim=True)
    if bool((ny < _EPS).any()):
        raise DegenerateFrame("up-axis reference joints coincide")
    y = y / ny
    x = joints[..., xi[1], :] - joints[..., xi[0], :]
    x = x - (x * y).sum(dim=-1, keepdim=True) * y
    nx = x.norm(dim=-1, keepdim=True)
    if bool((nx < _EPS).any()):
        raise DegenerateFrame("lateral reference is collinear with the up axis")
    x = x / nx
    z = torch.cross(x, y, dim=-1)
    return torch.stack([x, y, z], dim=-2)


def build_keypoint_input(joints: torch.Tensor, skel) -> torch.Tensor:
    """KP3D layout from world joints (..., J, 3) to (..., 3*J + 6)."""
    centered = joints - joints[..., 0:1, :]
    normalized = normalize_bone_lengths(centered, skel)
    r = alignment_rotation(normalized, skel)
    aligned = normalized @ r.transpose(-1, -2)
    return torch.cat([aligned.flatten(-2), so3.matrix_to_rot6d(r)], dim=-1)


def build_2d_input(joints: torch.Tensor, cam: CameraIntrinsics = CameraIntrinsics()) -> torch.Tensor:
    """Projected keypoints (..., J, 3) to (..., 2*J) normalized coordinates."""
    return project_to_2d(joints, cam).flatten(-2)


def build_inputs_from_tensors(
    skel,
    rots: torch.Tensor,
    trans: torch.Tensor,
    layout: str = PARAM6D,
    with_2d: bool = False,
    cam: CameraIntrinsics = CameraIntrinsics(),
) -> torch.Tensor:
    """Assemble model inputs from raw pose tensors.

    Args:
        rots: (..., T, K+1, 3, 3).
        trans: (..., T, 3); used only when joints are needed (KP3D or 2D).

    Returns:
        (..., T, input_dim(layout, skel, with_2d)).
    """
    if layout not in LAYOUTS:
        raise ValueError(f"unknown input layout {layout!r}")
    joints = None
    if layout == KP3D or with_2d:
        joints = forward_kinematics(skel, rots, trans)
    if layout == PARAM6D:
        blocks = [build_param_input(rots)]
    else:
        blocks = [build_keypoint_input(joints, skel)]
    if with_2d:
        blocks.append(build_2d_input(joints, cam))
    return torch.cat(blocks, dim=-1)


def build_inputs(seq, layout: str = PARAM6D, with_2d: bool = False, cam: CameraIntrinsics = CameraIntrinsics()) -> torch.Tensor:
    """Per-frame input vectors (T, D) for a PoseSequence."""
    return build_inputs_from_tensors(seq.skeleton, seq.rots, seq.trans, layout, with_2d, cam)
