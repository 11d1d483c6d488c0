"""Task drivers built on a trained model, plus classical baselines.

Long sequences are processed with overlapping windows (stride = half the
model window); every output frame is taken from the window whose center is
nearest, ties resolved toward the earlier window. Model outputs are
re-orthonormalized in float64.
"""

import numpy as np
import torch

from . import so3
from .errors import (
    AllMasked,
    EmptySequence,
    SequenceTooShort,
    TooFewObserved,
    WindowOverflow,
    WindowTooLarge,
)
from .inputs import build_inputs_from_tensors
from .metrics import mpjpe
from .skeleton import Pose, PoseSequence


def window_starts(n: int, t: int, stride: int):
    """Start offsets covering n frames with windows of t, last one end-aligned."""
    if n <= t:
        return [0]
    starts = list(range(0, n - t + 1, stride))
    if starts[-1] != n - t:
        starts.append(n - t)
    return starts


def assign_windows(n: int, starts, t: int):
    """Per-frame source window: nearest center, ties to the earlier window."""
    centers = np.asarray(starts, dtype=np.float64) + (t - 1) / 2.0
    frames = np.arange(n, dtype=np.float64)
    dist = np.abs(frames[:, None] - centers[None, :])
    return dist.argmin(axis=1)


def _model_windows(model, seq: PoseSequence, visible: torch.Tensor):
    """Run the model over all windows; returns (rots (n,K+1,3,3) f64, trans (n,3) f64)."""
    t = model.config.seq_len
    n = len(seq)
    skel = seq.skeleton
    rots = seq.rots.to(torch.float32)
    trans = seq.trans.to(torch.float32)

    if n < t:
        pad = t - n
        rots = torch.cat([rots, so3.identity_rotations(pad, skel.num_rotations, dtype=torch.float32)])
        trans = torch.cat([trans, torch.tensor([0.0, 0.0, 3.0]).expand(pad, 3)])
        visible = torch.cat([visible, torch.zeros(pad, dtype=torch.bool)])
        starts = [0]
        pick = np.zeros(n, dtype=np.int64)
    else:
        starts = window_starts(n, t, max(1, t // 2))
        pick = assign_windows(n, starts, t)

    win_rots = torch.stack([rots[s : s + t] for s in starts])
    win_trans = torch.stack([trans[s : s + t] for s in starts])
    win_vis = torch.stack([visible[s : s + t] for s in starts])
    for w, s in enumerate(starts):
        if not bool(win_vis[w].any()):
            raise AllMasked(f"window starting at frame {s} has no visible frame")

    cfg = model.config
    inputs = build_inputs_from_tensors(skel, win_rots, win_trans, cfg.input_layout, cfg.with_2d_input, model.cam)
    model.eval()
    with torch.no_grad():
        out = model(inputs.to(torch.float32), win_vis)

    pose6d = out.pose6d.to(torch.float64)
    out_rots = so3.rot6d_to_matrix(pose6d.reshape(len(starts), t, cfg.num_joints, 6))
    out_trans = out.trans.to(torch.float64)

    rows = torch.as_tensor(pick)
    cols = torch.as_tensor([f - starts[w] for f, w in enumerate(pick)])
    return out_rots[rows, cols], out_trans[rows, cols]


def refine(seq: PoseSequence, model) -> PoseSequence:
    """Denoise a sequence, conditioning on every frame."""
    if len(seq) < 1:
        raise EmptySequence("nothing to refine")
    visible = torch.ones(len(seq), dtype=torch.bool)
    rots, trans = _model_windows(model, seq, visible)
    return PoseSequence(skeleton=seq.skeleton, fps=seq.fps, rots=rots, trans=trans)


def complete(seq: PoseSequence, model) -> PoseSequence:
    """Fill invisible frames (and re-estimate visible ones).

    The input's visibility flags say which frames are missing; the returned
    sequence is fully visible. The input is not modified.

    Raises:
        AllMasked: some window contains no visible frame at all.
    """
    if len(seq) < 1:
        raise EmptySequence("nothing to complete")
    rots, trans = _model_windows(model, seq, seq.visible.clone())
    return PoseSequence(skeleton=seq.skeleton, fps=seq.fps, rots=rots, trans=trans)


def predict_future(seq: PoseSequence, horizon: int, model, observed: int = None):
    """Extrapolate beyond the end of a sequence.

    The last `observed` frames (default: as many as fit) are placed at the
    start of one model window, the following `horizon` slots are masked, and
    the model's estimates for those slots are returned as a list of Poses.

    Raises:
        WindowOverflow: observed + horizon exceeds the model window.
        TooFewObserved: no visible frame to condition on.
    """
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    if horizon == 0:
        return []
    t = model.config.seq_len
    if observed is None:
        observed = min(len(seq), t - horizon)
    if observed < 1:
        raise TooFewObserved("need at least one observed frame")
    if observed > len(seq):
        raise ValueError(f"observed={observed} exceeds sequence length {len(seq)}")
    if observed + horizon > t:
        raise WindowOverflow(
            f"observed ({observed}) + horizon ({horizon}) exceeds the {t}-frame window"
        )
    tail = seq.slice(len(seq) - observed, len(seq))
    if not bool(tail.visible.any()):
        raise TooFewObserved("all observed frames are flagged invisible")

    skel = seq.skeleton
    pad = t - observed
    rots = torch.cat([tail.rots.to(torch.float32), so3.identity_rotations(pad, skel.num_rotations, dtype=torch.float32)])
    trans = torch.cat([tail.trans.to(torch.float32), torch.tensor([0.0, 0.0, 3.0]).expand(pad, 3)])
    visible = torch.cat([tail.visible, torch.zeros(pad, dtype=torch.bool)])

    cfg = model.config
    inputs = build_inputs_from_tensors(
        skel, rots.unsqueeze(0), trans.unsqueeze(0), cfg.input_layout, cfg.with_2d_input, model.cam
    )
    model.eval()
    with torch.no_grad():
        out = model(inputs.to(torch.float32), visible.unsqueeze(0))
    pose6d = out.pose6d[0].to(torch.float64)
    out_rots = so3.rot6d_to_matrix(pose6d.reshape(t, cfg.num_joints, 6))
    out_trans = out.trans[0].to(torch.float64)
    return [
        Pose(rots=out_rots[observed + k].clone(), trans=out_trans[observed + k].clone())
        for k in range(horizon)
    ]


def poses_to_sequence(poses, skeleton, fps: float) -> PoseSequence:
    """Wrap a non-empty list of Poses as a fully visible sequence."""
    return PoseSequence.from_poses(skeleton, fps, poses)


def nearest_fill(seq: PoseSequence) -> PoseSequence:
    """Copy each invisible frame from the nearest visible one (ties: earlier).

    Raises:
        AllMasked: the sequence has no visible frame.
    """
    vis_idx = torch.nonzero(seq.visible).flatten()
    if len(vis_idx) == 0:
        raise AllMasked("no visible frame to copy from")
    frames = torch.arange(len(seq))
    dist = (frames[:, None] - vis_idx[None, :]).abs()
    src = vis_idx[dist.argmin(dim=1)]  # argmin takes the first (earlier) minimum
    return PoseSequence(
        skeleton=seq.skeleton,
        fps=seq.fps,
        rots=seq.rots[src].clone(),
        trans=seq.trans[src].clone(),
    )


def _channels(seq: PoseSequence):
    """Stack per-frame 6D blocks and translation as (T, 6*(K+1)+3) float64."""
    six = so3.matrix_to_rot6d(seq.rots.to(torch.float64)).flatten(-2)
    return torch.cat([six, seq.trans.to(torch.float64)], dim=-1).numpy()


def _channels_to_sequence(seq: PoseSequence, values: np.ndarray) -> PoseSequence:
    k1 = seq.skeleton.num_rotations
    values = torch.from_numpy(values)
    rots = so3.rot6d_to_matrix(values[:, : 6 * k1].reshape(-1, k1, 6))
    return PoseSequence(skeleton=seq.skeleton, fps=seq.fps, rots=rots, trans=values[:, 6 * k1 :].clone())


def _check_filter_window(n: int, window: int, polyorder: int = None):
    if window < 3 or window % 2 == 0:
        raise ValueError("filter window must be odd and at least 3")
    if polyorder is not None and polyorder >= window:
        raise ValueError("polyorder must be smaller than the window")
    if window > 2 * n - 1:
        raise WindowTooLarge(f"window {window} cannot fit a {n}-frame sequence")


def savgol_smooth(seq: PoseSequence, window: int = 11, polyorder: int = 3) -> PoseSequence:
    """Savitzky-Golay smoothing on 6D rotation channels and translation.

    Near the edges the window shrinks symmetrically (and the fit order drops
    to match), so no padding is invented. Rotations are re-orthonormalized
    afterwards. Visibility flags are ignored; fill gaps first (nearest_fill).
    """
    n = len(seq)
    _check_filter_window(n, window, polyorder)
    y = _channels(seq)
    half = (window - 1) // 2
    out = np.empty_like(y)
    for t in range(n):
        h = min(half, t, n - 1 - t)
        if h == 0:
            out[t] = y[t]
            continue
        deg = min(polyorder, 2 * h)
        xs = np.arange(-h, h + 1, dtype=np.float64)
        coeffs = np.polynomial.polynomial.polyfit(xs, y[t - h : t + h + 1], deg)
        out[t] = coeffs[0]  # fitted value at the window center
    return _channels_to_sequence(seq, out)


def median_smooth(seq: PoseSequence, window: int = 9) -> PoseSequence:
    """Per-channel median filter with shrinking symmetric edge windows."""
    n = len(seq)
    _check_filter_window(n, window)
    y = _channels(seq)
    half = (window - 1) // 2
    out = np.empty_like(y)
    for t in range(n):
        h = min(half, t, n - 1 - t)
        out[t] = np.median(y[t - h : t + h + 1], axis=0)
    return _channels_to_sequence(seq, out)


def predict_no_velocity(seq: PoseSequence, horizon: int):
    """Constant-pose baseline: repeat the final frame."""
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    last = seq.frame(len(seq) - 1)
    return [Pose(rots=last.rots.clone(), trans=last.trans.clone()) for _ in range(horizon)]


def predict_velocity_propagation(seq: PoseSequence, horizon: int):
    """Constant-velocity baseline.

    Rotations advance by the last frame-to-frame delta applied on the left
    (delta = R_T R_{T-1}^t), translation linearly; exact for constant
    angular velocity about a fixed axis.

    Raises:
        SequenceTooShort: fewer than two frames.
    """
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    if len(seq) < 2:
        raise SequenceTooShort("velocity needs at least two frames")
    r_last = seq.rots[-1].to(torch.float64)
    delta = r_last @ seq.rots[-2].to(torch.float64).transpose(-1, -2)
    t_last = seq.trans[-1].to(torch.float64)
    step = t_last - seq.trans[-2].to(torch.float64)
    poses = []
    current = r_last
    for k in range(1, horizon + 1):
        current = delta @ current
        poses.append(Pose(rots=current.clone(), trans=t_last + k * step))
    return poses


def _drop_mask(n: int, count: int, window: int, generator: torch.Generator) -> torch.Tensor:
    """Visibility mask with `count` dropped frames, keeping every window viable.

    Rejection-samples so each sliding window keeps at least one visible
    frame; if that keeps failing (extreme drop rates) single frames are
    force-restored, so the realized drop count may fall slightly short.
    """
    stride = max(1, window // 2)
    starts = window_starts(n, window, stride)
    for _ in range(200):
        visible = torch.ones(n, dtype=torch.bool)
        drop = torch.randperm(n, generator=generator)[:count]
        visible[drop] = False
        if all(bool(visible[s : s + window].any()) for s in starts):
            return visible
    for s in starts:
        if not bool(visible[s : s + window].any()):
            keep = s + int(torch.randint(window, (), generator=generator))
            visible[keep] = True
    return visible


def frame_drop_study(sequences, model, drop_fracs, generator: torch.Generator):
    """Completion quality as frames are dropped, versus classical baselines.

    For each drop fraction, random frames are hidden, the model and the
    nearest-fill and Savitzky-Golay baselines reconstruct them, and the
    root-centered MPJPE over the dropped frames only is averaged over
    sequences. Gains are relative reductions versus nearest-fill.

    Returns:
        list of dict rows, one per drop fraction.
    """
    rows = []
    t = model.config.seq_len
    for frac in drop_fracs:
        if not 0.0 <= frac < 1.0:
            raise ValueError(f"drop fraction {frac} outside [0, 1)")
        scores = {"model": [], "nearest": [], "savgol": []}
        for seq in sequences:
            n = len(seq)
            count = int(round(frac * n))
            if count == 0:
                for key in scores:
                    scores[key].append(0.0)
                continue
            visible = _drop_mask(n, count, min(t, n), generator)
            dropped = PoseSequence(
                skeleton=seq.skeleton, fps=seq.fps, rots=seq.rots.clone(), trans=seq.trans.clone(), visible=visible
            )
            gt = seq.joints()[~visible]
            filled = nearest_fill(dropped)
            window = min(11, 2 * n - 1)  # both odd
            smoothed = savgol_smooth(filled, window=window) if window >= 3 else filled
            scores["model"].append(mpjpe(complete(dropped, model).joints()[~visible], gt))
            scores["nearest"].append(mpjpe(filled.joints()[~visible], gt))
            scores["savgol"].append(mpjpe(smoothed.joints()[~visible], gt))
        nearest = float(np.mean(scores["nearest"]))
        row = {
            "drop_frac": float(frac),
            "mpjpe_model": float(np.mean(scores["model"])),
            "mpjpe_nearest": nearest,
            "mpjpe_savgol": float(np.mean(scores["savgol"])),
        }
        for key in ("model", "savgol"):
            row[f"gain_{key}"] = (nearest - row[f"mpjpe_{key}"]) / nearest if nearest > 0 else 0.0
        rows.append(row)
    return rows
