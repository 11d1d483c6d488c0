"""Rotation utilities on SO(3).

All functions are torch-based, accept arbitrary leading batch dimensions and
preserve the input dtype. Rotation matrices act on column vectors. The 6D
representation of a rotation matrix is its first two columns, flattened
column-major: x = [R[:, 0], R[:, 1]].
"""

import torch

from .errors import AmbiguousAntipodal, DegenerateInput

_EPS = 1e-8


def identity_rotations(*shape, dtype=torch.float64):
    """Return identity matrices of shape (*shape, 3, 3)."""
    eye = torch.eye(3, dtype=dtype)
    return eye.expand(*shape, 3, 3).clone()


def skew(v):
    """Map vectors (..., 3) to skew-symmetric matrices (..., 3, 3)."""
    zero = torch.zeros_like(v[..., 0])
    row0 = torch.stack([zero, -v[..., 2], v[..., 1]], dim=-1)
    row1 = torch.stack([v[..., 2], zero, -v[..., 0]], dim=-1)
    row2 = torch.stack([-v[..., 1], v[..., 0], zero], dim=-1)
    return torch.stack([row0, row1, row2], dim=-2)


def axis_angle_to_matrix(v):
    """Rodrigues formula mapping axis-angle vectors (..., 3) to matrices.

    Uses series expansions of sin(t)/t and (1-cos t)/t^2 near zero, so the
    map is well defined (and returns identity) for the zero vector.
    """
    theta2 = (v * v).sum(dim=-1, keepdim=True).unsqueeze(-1)  # (..., 1, 1)
    theta = torch.sqrt(theta2.clamp_min(_EPS * _EPS))
    small = theta2 < 1e-8
    sinc = torch.where(small, 1.0 - theta2 / 6.0, torch.sin(theta) / theta)
    coscr = torch.where(small, 0.5 - theta2 / 24.0, (1.0 - torch.cos(theta)) / theta2.clamp_min(_EPS * _EPS))
    k = skew(v)
    eye = torch.eye(3, dtype=v.dtype, device=v.device).expand_as(k)
    return eye + sinc * k + coscr * (k @ k)


def _sqrt_positive(x):
    out = torch.zeros_like(x)
    mask = x > 0
    out[mask] = torch.sqrt(x[mask])
    return out


def _matrix_to_quaternion(m):
    """Convert matrices (..., 3, 3) to unit quaternions (..., 4), w first, w >= 0."""
    m00, m01, m02 = m[..., 0, 0], m[..., 0, 1], m[..., 0, 2]
    m10, m11, m12 = m[..., 1, 0], m[..., 1, 1], m[..., 1, 2]
    m20, m21, m22 = m[..., 2, 0], m[..., 2, 1], m[..., 2, 2]

    # 2*|w|, 2*|x|, 2*|y|, 2*|z|
    q_abs = _sqrt_positive(
        torch.stack(
            [
                1.0 + m00 + m11 + m22,
                1.0 + m00 - m11 - m22,
                1.0 - m00 + m11 - m22,
                1.0 - m00 - m11 + m22,
            ],
            dim=-1,
        )
    )

    # Four candidate quaternions, each exact when its pivot is the largest.
    quat_by_w = torch.stack([q_abs[..., 0] ** 2, m21 - m12, m02 - m20, m10 - m01], dim=-1)
    quat_by_x = torch.stack([m21 - m12, q_abs[..., 1] ** 2, m01 + m10, m02 + m20], dim=-1)
    quat_by_y = torch.stack([m02 - m20, m01 + m10, q_abs[..., 2] ** 2, m12 + m21], dim=-1)
    quat_by_z = torch.stack([m10 - m01, m02 + m20, m12 + m21, q_abs[..., 3] ** 2], dim=-1)
    candidates = torch.stack([quat_by_w, quat_by_x, quat_by_y, quat_by_z], dim=-2)
    candidates = candidates / (2.0 * q_abs[..., None].clamp_min(0.1))

    best = q_abs.argmax(dim=-1)
    pick = torch.nn.functional.one_hot(best, num_classes=4).to(m.dtype)
    q = (candidates * pick[..., None]).sum(dim=-2)
    q = q / q.norm(dim=-1, keepdim=True).clamp_min(_EPS)

    # canonical sign: non-negative scalar part
    sign = torch.where(q[..., :1] < 0, -torch.ones_like(q[..., :1]), torch.ones_like(q[..., :1]))
    return q * sign


def _quaternion_to_matrix(q):
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    two = 2.0
    row0 = torch.stack([1 - two * (y * y + z * z), two * (x * y - w * z), two * (x * z + w * y)], dim=-1)
    row1 = torch.stack([two * (x * y + w * z), 1 - two * (x * x + z * z), two * (y * z - w * x)], dim=-1)
    row2 = torch.stack([two * (x * z - w * y), two * (y * z + w * x), 1 - two * (x * x + y * y)], dim=-1)
    return torch.stack([row0, row1, row2], dim=-2)


def matrix_to_axis_angle(m):
    """Log map: matrices (..., 3, 3) to axis-angle vectors (..., 3).

    Output angle is canonical, i.e. norm(result) <= pi.
    """
    q = _matrix_to_quaternion(m)
    w = q[..., 0]
    vec = q[..., 1:]
    s = vec.norm(dim=-1)
    angle = 2.0 * torch.atan2(s, w)
    # angle/s -> 2/w as s -> 0
    factor = torch.where(s > 1e-9, angle / s.clamp_min(1e-30), 2.0 / w.clamp_min(_EPS))
    return vec * factor[..., None]


def rot6d_to_matrix(x):
    """Gram-Schmidt a 6D representation (..., 6) into matrices (..., 3, 3).

    The two 3-vectors are read as approximate first and second columns; the
    first is normalised, the second orthogonalised against it, the third is
    their cross product. Differentiable.

    Raises:
        DegenerateInput: a column is near zero or the two are near collinear.
    """
    a1 = x[..., 0:3]
    a2 = x[..., 3:6]
    n1 = a1.norm(dim=-1, keepdim=True)
    if bool((n1.detach() < _EPS).any()):
        raise DegenerateInput("first 6D column has near-zero norm")
    b1 = a1 / n1
    r = a2 - (b1 * a2).sum(dim=-1, keepdim=True) * b1
    n2 = r.norm(dim=-1, keepdim=True)
    if bool((n2.detach() < _EPS).any()):
        raise DegenerateInput("6D columns are near collinear")
    b2 = r / n2
    b3 = torch.cross(b1, b2, dim=-1)
    return torch.stack([b1, b2, b3], dim=-1)


def matrix_to_rot6d(m):
    """Inverse of rot6d_to_matrix on actual rotations: first two columns."""
    return torch.cat([m[..., :, 0], m[..., :, 1]], dim=-1)


def geodesic_distance(a, b):
    """Geodesic angle (radians) between rotation matrices, elementwise."""
    prod = a.transpose(-1, -2) @ b
    tr = prod[..., 0, 0] + prod[..., 1, 1] + prod[..., 2, 2]
    cos = ((tr - 1.0) / 2.0).clamp(-1.0, 1.0)
    return torch.acos(cos)


def slerp(a, b, t):
    """Spherical interpolation from a to b, both (..., 3, 3).

    t may be a float or a tensor broadcastable against the batch shape;
    t=0 returns a, t=1 returns b, intermediate t follows the geodesic at
    constant speed.

    Raises:
        AmbiguousAntipodal: endpoints are within 1e-6 of 180 degrees apart.
    """
    rel = matrix_to_axis_angle(a.transpose(-1, -2) @ b)
    angle = rel.norm(dim=-1)
    if bool((angle > torch.pi - 1e-6).any()):
        raise AmbiguousAntipodal("endpoints are antipodal; interpolation path undefined")
    if not torch.is_tensor(t):
        t = torch.as_tensor(t, dtype=a.dtype, device=a.device)
    step = t[..., None] * rel if t.dim() > 0 else t * rel
    return a @ axis_angle_to_matrix(step)


def random_rotations(*shape, generator=None, dtype=torch.float64):
    """Draw rotations (*shape, 3, 3) uniformly (Haar measure) on SO(3)."""
    q = torch.randn(*shape, 4, generator=generator, dtype=dtype)
    q = q / q.norm(dim=-1, keepdim=True).clamp_min(_EPS)
    return _quaternion_to_matrix(q)


def is_rotation(m, atol=1e-6):
    """Boolean tensor: orthonormal with determinant +1 within atol."""
    eye = torch.eye(3, dtype=m.dtype, device=m.device)
    ortho = (m.transpose(-1, -2) @ m - eye).abs().flatten(-2).max(dim=-1).values < atol
    det = (torch.linalg.det(m) - 1.0).abs() < atol
    return ortho & det
