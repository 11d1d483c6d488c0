"""Synthetic pose-sequence corpus generator.

Each sequence is built from shared keyframe times: every joint gets a random
bounded deviation from the rest pose at each keyframe and moves between them
by spherical interpolation, while the root translation follows a natural
cubic spline through random waypoints inside the camera frustum. The result
is smooth, bone-length-consistent motion that stays in view.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch
from scipy.interpolate import CubicSpline

from . import so3
from .skeleton import CameraIntrinsics, PoseSequence, SkeletonDef, load_skeleton


@dataclass
class GenSpec:
    """Generator settings; see generate_sequence for semantics."""

    skeleton: SkeletonDef = None
    fps: float = 30.0
    duration_range: tuple = (48, 96)
    keyframe_interval_range: tuple = (4, 12)
    max_joint_deviation: float = 0.8  # radians, must stay below pi/2
    translation_amplitude: float = 0.3  # max waypoint step, meters
    depth_range: tuple = (4.0, 6.0)
    lateral_bound: float = 0.10  # waypoint bound in normalized image coords
    seed: int = 0

    def __post_init__(self):
        if self.skeleton is None:
            self.skeleton = load_skeleton("body23")
        lo, hi = self.duration_range
        if lo < 2 or hi < lo:
            raise ValueError("duration_range must satisfy 2 <= lo <= hi")
        klo, khi = self.keyframe_interval_range
        if klo < 1 or khi < klo:
            raise ValueError("keyframe_interval_range must satisfy 1 <= lo <= hi")
        if lo <= klo:
            raise ValueError("shortest duration must exceed the keyframe interval")
        if not 0 <= self.max_joint_deviation < math.pi / 2:
            raise ValueError("max_joint_deviation must lie in [0, pi/2) so interpolation stays unambiguous")
        zlo, zhi = self.depth_range
        if zlo <= 0 or zhi < zlo:
            raise ValueError("depth_range must be positive and ordered")
        if self.fps <= 0:
            raise ValueError("fps must be positive")


@dataclass
class Corpus:
    """Deterministic 80/10/10 split of generated sequences."""

    train: list
    val: list
    test: list

    def __len__(self):
        return len(self.train) + len(self.val) + len(self.test)


def _keyframe_times(duration: int, lo: int, hi: int, generator: torch.Generator):
    """Strictly increasing times from 0 to duration-1 with gaps in [lo, hi].

    For awkward (lo, hi) combinations the final gap may be shorter than lo;
    it never exceeds hi.
    """
    times = [0]
    remaining = duration - 1
    while remaining > hi:
        upper = max(lo, min(hi, remaining - lo))
        gap = int(torch.randint(lo, upper + 1, (), generator=generator))
        times.append(times[-1] + gap)
        remaining -= gap
    times.append(times[-1] + remaining)
    return times


def _keyframe_rotations(n_keys: int, k1: int, max_dev: float, generator: torch.Generator):
    axes = torch.randn(n_keys, k1, 3, generator=generator, dtype=torch.float64)
    axes = axes / axes.norm(dim=-1, keepdim=True).clamp_min(1e-12)
    angles = max_dev * torch.rand(n_keys, k1, 1, generator=generator, dtype=torch.float64)
    return so3.axis_angle_to_matrix(axes * angles)


def _waypoints(n_keys: int, spec: GenSpec, cam: CameraIntrinsics, generator: torch.Generator):
    zlo, zhi = spec.depth_range
    # lateral box sized at the nearest depth, so every waypoint projects
    # within lateral_bound at any allowed depth
    xy_extent = spec.lateral_bound * (cam.image_width / 2.0) * zlo / cam.focal
    lo = torch.tensor([-xy_extent, -xy_extent, zlo], dtype=torch.float64)
    hi = torch.tensor([xy_extent, xy_extent, zhi], dtype=torch.float64)
    pts = torch.empty(n_keys, 3, dtype=torch.float64)
    pts[0] = lo + (hi - lo) * torch.rand(3, generator=generator, dtype=torch.float64)
    for i in range(1, n_keys):
        step = spec.translation_amplitude * (2.0 * torch.rand(3, generator=generator, dtype=torch.float64) - 1.0)
        pts[i] = torch.clamp(pts[i - 1] + step, lo, hi)
    return pts


def generate_sequence(spec: GenSpec, generator: torch.Generator, cam: CameraIntrinsics = CameraIntrinsics()) -> PoseSequence:
    """Draw one synthetic sequence.

    Keyframes share times across joints; joint rotations deviate from the
    rest pose by at most max_joint_deviation radians and slerp between
    keyframes, so per-frame angular velocity is bounded by
    2 * max_joint_deviation / min_gap. All frames are visible.
    """
    dlo, dhi = spec.duration_range
    duration = int(torch.randint(dlo, dhi + 1, (), generator=generator))
    klo, khi = spec.keyframe_interval_range
    times = _keyframe_times(duration, klo, khi, generator)
    n_keys = len(times)
    k1 = spec.skeleton.num_rotations

    keys = _keyframe_rotations(n_keys, k1, spec.max_joint_deviation, generator)
    rots = torch.empty(duration, k1, 3, 3, dtype=torch.float64)
    for s in range(n_keys - 1):
        t0, t1 = times[s], times[s + 1]
        u = torch.arange(t0, t1, dtype=torch.float64).sub_(t0).div_(t1 - t0)
        rots[t0:t1] = so3.slerp(keys[s], keys[s + 1], u[:, None])
    rots[-1] = keys[-1]

    pts = _waypoints(n_keys, spec, cam, generator)
    spline = CubicSpline(np.asarray(times, dtype=np.float64), pts.numpy(), axis=0, bc_type="natural")
    trans = torch.from_numpy(spline(np.arange(duration, dtype=np.float64)))

    return PoseSequence(skeleton=spec.skeleton, fps=spec.fps, rots=rots, trans=trans)


def _child_seed(seed: int, index: int) -> int:
    return (seed * 1000003 + index * 2654435761 + 12345) % (2**63 - 1)


def generate_corpus(spec: GenSpec, n: int, cam: CameraIntrinsics = CameraIntrinsics()) -> Corpus:
    """Generate n sequences and split them 80/10/10 in generation order.

    Each sequence gets its own generator derived from (spec.seed, index), so
    corpora are reproducible and individual sequences can be regenerated.
    """
    if n < 1:
        raise ValueError("need at least one sequence")
    seqs = []
    for i in range(n):
        g = torch.Generator()
        g.manual_seed(_child_seed(spec.seed, i))
        seqs.append(generate_sequence(spec, g, cam))
    n_train = int(n * 0.8)
    n_val = int(n * 0.1)
    return Corpus(train=seqs[:n_train], val=seqs[n_train : n_train + n_val], test=seqs[n_train + n_val :])
