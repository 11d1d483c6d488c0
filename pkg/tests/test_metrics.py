import numpy as np
import pytest
import torch

from motionfill import metrics
from motionfill.errors import DegenerateCloud, SequenceTooShort, ShapeMismatch


def _cloud(rng, t=1, j=24):
    return rng.normal(size=(t, j, 3))


class TestMpjpe:
    def test_zero_for_identical(self):
        rng = np.random.default_rng(0)
        x = _cloud(rng, t=4)
        assert metrics.mpjpe(x, x) == 0.0

    def test_root_centering_removes_global_offset(self):
        rng = np.random.default_rng(1)
        gt = _cloud(rng, t=3)
        pred = gt + np.array([0.5, -0.2, 1.0])
        assert metrics.mpjpe(pred, gt) < 1e-9

    def test_single_joint_displacement(self):
        gt = np.zeros((1, 24, 3))
        gt[:, :, 0] = np.arange(24)[None, :]  # spread so the cloud is not degenerate
        pred = gt.copy()
        pred[0, 5, 1] += 0.12
        # one joint off by 120 mm out of 24
        assert metrics.mpjpe(pred, gt) == pytest.approx(120.0 / 24.0, rel=1e-12)

    def test_accepts_torch_and_single_frame(self):
        rng = np.random.default_rng(2)
        gt = _cloud(rng)[0]
        pred = gt + 0.001
        out = metrics.mpjpe(torch.tensor(pred), torch.tensor(gt))
        assert out < 1e-9  # constant offset, removed by root centering

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            metrics.mpjpe(np.zeros((2, 24, 3)), np.zeros((2, 23, 3)))
        with pytest.raises(ShapeMismatch):
            metrics.mpjpe(np.zeros((2, 24, 2)), np.zeros((2, 24, 2)))


class TestProcrustes:
    def test_exact_similarity_recovered(self):
        rng = np.random.default_rng(3)
        gt = _cloud(rng, t=5)
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        w, x, y, z = q
        rot = np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )
        pred = 0.4 * gt @ rot.T + np.array([1.0, 2.0, -3.0])
        assert metrics.pa_mpjpe(pred, gt) < 1e-9

    def test_leq_mpjpe_on_random_pairs(self):
        rng = np.random.default_rng(4)
        for _ in range(1000):
            a, b = _cloud(rng), _cloud(rng)
            assert metrics.pa_mpjpe(a, b) <= metrics.mpjpe(a, b) + 1e-9

    def test_reflection_not_allowed(self):
        rng = np.random.default_rng(5)
        gt = _cloud(rng)
        pred = gt.copy()
        pred[..., 0] *= -1.0  # mirror image
        assert metrics.pa_mpjpe(pred, gt) > 50.0

    def test_degenerate_cloud(self):
        flat = np.zeros((24, 3))
        with pytest.raises(DegenerateCloud):
            metrics.procrustes_align(flat, np.random.default_rng(6).normal(size=(24, 3)))


class TestAccel:
    def test_zero_for_identical(self):
        rng = np.random.default_rng(7)
        x = _cloud(rng, t=6)
        assert metrics.accel_error(x, x, fps=30.0) == 0.0

    def test_alternating_jitter_closed_form(self):
        # pred = gt + (-1)^t * d on every joint: second difference is
        # -4d(-1)^t, so the error is 4 * d * fps^2 * 1000 mm/s^2
        rng = np.random.default_rng(8)
        gt = np.repeat(_cloud(rng), 10, axis=0)
        d, fps = 0.003, 30.0
        signs = (-1.0) ** np.arange(10)
        pred = gt.copy()
        pred[:, :, 1] += d * signs[:, None]
        expected = 4.0 * d * fps**2 * 1000.0
        assert metrics.accel_error(pred, gt, fps) == pytest.approx(expected, rel=1e-6)

    def test_smooth_error_has_zero_accel(self):
        rng = np.random.default_rng(9)
        gt = np.repeat(_cloud(rng), 8, axis=0)
        drift = np.linspace(0, 0.5, 8)[:, None, None] * np.array([1.0, 0, 0])
        pred = gt + drift  # linear drift: large MPJPE, zero acceleration
        assert metrics.mpjpe(pred, gt) > 0
        assert metrics.accel_error(pred, gt, fps=30.0) < 1e-6

    def test_too_short(self):
        x = np.zeros((2, 4, 3))
        with pytest.raises(SequenceTooShort):
            metrics.accel_error(x, x, fps=30.0)


class TestPck:
    def test_threshold_edges(self):
        gt = np.zeros((1, 4, 3))
        gt[0, :, 0] = [0.0, 1.0, 2.0, 3.0]
        inside = gt.copy()
        inside[0, 1:, 1] += 0.149
        outside = gt.copy()
        outside[0, 1:, 1] += 0.151
        assert metrics.pck3d(inside, gt) == 100.0
        assert metrics.pck3d(outside, gt) == pytest.approx(25.0)  # only the root survives

    def test_mixed(self):
        gt = np.zeros((1, 4, 3))
        gt[0, :, 0] = [0.0, 1.0, 2.0, 3.0]
        pred = gt.copy()
        pred[0, 2, 1] += 0.3
        pred[0, 3, 1] += 0.4
        assert metrics.pck3d(pred, gt) == pytest.approx(50.0)

    def test_procrustes_variant(self):
        rng = np.random.default_rng(10)
        gt = _cloud(rng)
        pred = 2.0 * gt  # scale error: PA fixes it, plain PCK suffers
        assert metrics.pck3d(pred, gt, procrustes=True) == 100.0


class TestReports:
    def test_rows_and_csv_round_trip(self, tmp_path):
        rng = np.random.default_rng(11)
        gt = _cloud(rng, t=5)
        pred = gt + 0.01 * rng.normal(size=gt.shape)
        row = metrics.evaluate_sequence("seq0", "model", pred, gt, fps=30.0)
        assert row.mpjpe_mm > 0 and row.pck3d_pct == 100.0
        agg = metrics.mean_row([row, row])
        assert agg.mpjpe_mm == pytest.approx(row.mpjpe_mm)
        path = str(tmp_path / "report.csv")
        metrics.write_report_csv(path, [row, agg])
        back = metrics.read_report_csv(path)
        assert len(back) == 2
        assert back[0].sequence == "seq0"
        assert back[0].mpjpe_mm == pytest.approx(row.mpjpe_mm)
        assert back[1].sequence == "mean"
