"""End-to-end acceptance suite: one test per shipped claim.

Each test prints the measured numbers, so `pytest -v` gives one line per
claim plus the detail on failure. The two trained models these tests need
are cached under tests/_cache keyed by their full recipe; delete that
directory to retrain from scratch (the completion model takes ~40 minutes
on one CPU core, the forecasting model ~15).
"""

import hashlib
import json
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np
import pytest
import torch

from motionfill import so3, tasks
from motionfill.corruption import CorruptionSpec, corrupt_sequence
from motionfill.inputs import build_inputs_from_tensors
from motionfill.metrics import accel_error, mpjpe, pa_mpjpe, pck3d
from motionfill.model import ModelConfig, MotionTransformer, count_parameters
from motionfill.pseq import load_sequence, save_sequence
from motionfill.skeleton import CameraIntrinsics, load_skeleton
from motionfill.synthgen import GenSpec, generate_corpus
from motionfill.train import (
    TrainConfig,
    Trainer,
    build_model,
    load_checkpoint,
    prepare_batch,
    sequence_loss,
    train_step,
)

CACHE_DIR = Path(__file__).parent / "_cache"

MAIN_N = 2000
MAIN_GEN = GenSpec(seed=0)
MAIN_MODEL = ModelConfig()
MAIN_TRAIN = TrainConfig()

FUTURE_MODEL = ModelConfig(seq_len=48, d_model=256, num_heads=8, regressor_hidden=512)
FUTURE_TRAIN = TrainConfig(
    max_steps=6000,
    corruption=CorruptionSpec(mask_ratio=(0.3, 0.7), block_mask_prob=0.9, max_block_len=36),
)


def _gen_doc(spec: GenSpec) -> dict:
    doc = asdict(spec)
    doc["skeleton"] = spec.skeleton.name
    return doc


def _cache_paths(tag: str, model_cfg, train_cfg, n: int):
    recipe = json.dumps([model_cfg.to_dict(), train_cfg.to_dict(), _gen_doc(MAIN_GEN), n], sort_keys=True)
    key = hashlib.sha1(recipe.encode()).hexdigest()[:10]
    return CACHE_DIR / f"{tag}-{key}.ckpt", CACHE_DIR / f"{tag}-{key}.meta.json"


def _trained_model(tag: str, model_cfg, train_cfg, corpus):
    ckpt_path, meta_path = _cache_paths(tag, model_cfg, train_cfg, MAIN_N)
    if not ckpt_path.exists():
        CACHE_DIR.mkdir(exist_ok=True)
        model = MotionTransformer(model_cfg, rng_seed=train_cfg.seed)
        trainer = Trainer(model, corpus.train, train_cfg)
        start = time.perf_counter()
        trainer.run()
        seconds = time.perf_counter() - start
        trainer.save(ckpt_path)
        meta = {"train_seconds": seconds, "steps": trainer.step_count, "final_loss": trainer.history[-1]["loss"]}
        meta_path.write_text(json.dumps(meta))
    model = build_model(load_checkpoint(ckpt_path))
    model.eval()
    return model, json.loads(meta_path.read_text())


@pytest.fixture(scope="session")
def corpus():
    return generate_corpus(MAIN_GEN, MAIN_N)


@pytest.fixture(scope="session")
def main_model(corpus):
    return _trained_model("main", MAIN_MODEL, MAIN_TRAIN, corpus)


@pytest.fixture(scope="session")
def future_model(corpus):
    return _trained_model("future", FUTURE_MODEL, FUTURE_TRAIN, corpus)


def test_criterion_01_rotation_suite():
    start = time.perf_counter()
    gen = torch.Generator().manual_seed(101)
    rots = so3.random_rotations(10_000, generator=gen)
    back = so3.rot6d_to_matrix(so3.matrix_to_rot6d(rots))
    round_trip = (back - rots).abs().max()
    assert round_trip < 1e-6

    vecs = torch.randn(10_000, 6, generator=gen, dtype=torch.float64)
    assert so3.is_rotation(so3.rot6d_to_matrix(vecs), atol=1e-6).all()

    worst = 0.0
    for _ in range(3):
        v = torch.randn(6, generator=gen, dtype=torch.float64)
        auto = torch.autograd.functional.jacobian(lambda x: so3.rot6d_to_matrix(x).flatten(), v)
        fd = torch.empty_like(auto)
        h = 1e-6
        for i in range(6):
            step = torch.zeros(6, dtype=torch.float64)
            step[i] = h
            fd[:, i] = (so3.rot6d_to_matrix(v + step) - so3.rot6d_to_matrix(v - step)).flatten() / (2 * h)
        rel = (auto - fd).norm() / (auto.norm() + fd.norm())
        worst = max(worst, float(rel))
    assert worst < 1e-4

    elapsed = time.perf_counter() - start
    assert elapsed < 10
    print(f"\n[rotation suite] round-trip {float(round_trip):.2e}, jacobian rel {worst:.2e}, {elapsed:.1f}s")


def test_criterion_02_metrics_suite():
    start = time.perf_counter()
    rng = np.random.default_rng(202)

    gt = rng.normal(size=(50, 24, 3))
    quats = rng.normal(size=4)
    quats /= np.linalg.norm(quats)
    w, x, y, z = quats
    rmat = np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )
    pred = 1.7 * gt @ rmat.T + np.array([0.3, -1.2, 4.0])
    assert pa_mpjpe(pred, gt) < 1e-9

    violations = 0
    for _ in range(1000):
        a = rng.normal(size=(1, 24, 3))
        b = rng.normal(size=(1, 24, 3))
        if pa_mpjpe(a, b) > mpjpe(a, b) + 1e-9:
            violations += 1
    assert violations == 0

    fps, d, frames = 30.0, 0.007, 60
    base = rng.normal(size=(frames, 24, 3))
    jitter = base.copy()
    jitter[:, :, 1] += d * (-1.0) ** np.arange(frames)[:, None]
    expected = 4 * d * fps**2 * 1000
    measured = accel_error(jitter, base, fps)
    assert abs(measured - expected) / expected < 1e-6

    near = base.copy()
    near[:, 5, 0] += 0.149
    far = base.copy()
    far[:, 5, 0] += 0.151
    assert pck3d(near, base) == 100.0
    assert pck3d(far, base) == pytest.approx(100 * 23 / 24)
    flat = np.zeros((10, 24, 3))
    boundary = flat.copy()
    boundary[:, 5, 0] = 0.15  # exactly at the threshold: strictly-within excludes it
    assert pck3d(boundary, flat) == pytest.approx(100 * 23 / 24)

    elapsed = time.perf_counter() - start
    assert elapsed < 10
    print(f"\n[metrics suite] similarity {pa_mpjpe(pred, gt):.1e}mm, accel {measured:.1f} vs {expected:.1f}, {elapsed:.1f}s")


def test_criterion_03_gradient_check():
    start = time.perf_counter()
    cfg = ModelConfig(seq_len=4, d_model=16, num_blocks=2, num_heads=2, num_joints=3, regressor_hidden=16, dropout=0.0)
    model = MotionTransformer(cfg, rng_seed=303).double().eval()

    gen = torch.Generator().manual_seed(303)
    rots = so3.random_rotations(2, 4, 3, generator=gen)
    trans = torch.tensor([0.0, 0.0, 4.0], dtype=torch.float64).expand(2, 4, 3).clone()
    trans += 0.1 * torch.randn(2, 4, 3, generator=gen, dtype=torch.float64)
    visible = torch.tensor([[True, False, True, True], [True, True, False, True]])
    inputs = so3.matrix_to_rot6d(rots).flatten(-2)

    def loss_value():
        out = model(inputs, visible)
        return sequence_loss(out, rots, trans)[0]

    loss = loss_value()
    loss.backward()

    h = 1e-5
    worst = 0.0
    worst_name = ""
    with torch.no_grad():
        for name, param in model.named_parameters():
            flat = param.data.view(-1)
            n = flat.numel()
            idxs = sorted({0, n // 2, n - 1})
            auto = param.grad.view(-1)[idxs].clone()
            fd = torch.empty(len(idxs), dtype=torch.float64)
            for j, idx in enumerate(idxs):
                orig = float(flat[idx])
                flat[idx] = orig + h
                hi = float(loss_value())
                flat[idx] = orig - h
                lo = float(loss_value())
                flat[idx] = orig
                fd[j] = (hi - lo) / (2 * h)
            rel = float((auto - fd).norm() / (auto.norm() + fd.norm() + 1e-12))
            if rel > worst:
                worst, worst_name = rel, name
    elapsed = time.perf_counter() - start
    assert worst < 1e-3, f"worst rel {worst:.2e} at {worst_name}"
    assert elapsed < 120
    print(f"\n[gradient check] worst rel {worst:.2e} ({worst_name}), {elapsed:.1f}s")


def test_criterion_04_parameter_budget():
    count = count_parameters(MotionTransformer(ModelConfig()))
    target = 7.3e6
    ratio = count / target
    assert 0.85 <= ratio <= 1.15
    print(f"\n[parameter budget] {count:,} params = {ratio:.3f} x 7.3M")


def test_criterion_05_overfit_single_batch(corpus):
    start = time.perf_counter()
    model = MotionTransformer(ModelConfig(), rng_seed=505)
    config = TrainConfig(seed=505)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    gen = torch.Generator().manual_seed(505)

    seq = corpus.train[0]
    t = model.config.seq_len
    starts = torch.linspace(0, len(seq) - t, 8).long()
    rots = torch.stack([seq.rots[s : s + t] for s in starts]).to(torch.float32)
    trans = torch.stack([seq.trans[s : s + t] for s in starts]).to(torch.float32)
    batch = prepare_batch(seq.skeleton, rots, trans, config.corruption, gen)

    first = None
    for _ in range(500):
        parts = train_step(model, optimizer, batch)
        if first is None:
            first = parts["total"]
    final = parts["total"]
    assert final < 0.01 * first, f"loss {final:.4f} vs initial {first:.4f}"

    model.eval()
    with torch.no_grad():
        out = model(batch.inputs, batch.visible)
    masked = ~batch.visible
    geo = so3.geodesic_distance(out.rotations.to(torch.float64)[masked], batch.target_rots.to(torch.float64)[masked])
    elapsed = time.perf_counter() - start
    assert float(geo.mean()) < 0.05
    assert elapsed < 300
    print(f"\n[overfit] loss {first:.3f} -> {final:.5f} ({final/first:.2%}), masked geo {float(geo.mean()):.4f} rad, {elapsed:.0f}s")


def _block_mask_eval(model, sequences, seed):
    spec = CorruptionSpec(mask_ratio=0.125, block_mask_prob=1.0, gauss_sigma=0.0)
    gen = torch.Generator().manual_seed(seed)
    model_errs, nearest_errs = [], []
    for seq in sequences:
        corrupted, masked = corrupt_sequence(seq, spec, gen)
        gt = seq.joints()
        model_errs.append(mpjpe(tasks.complete(corrupted, model).joints()[masked], gt[masked]))
        nearest_errs.append(mpjpe(tasks.nearest_fill(corrupted).joints()[masked], gt[masked]))
    return float(np.mean(model_errs)), float(np.mean(nearest_errs))


def test_criterion_06_completion_beats_nearest_fill(main_model, corpus):
    model, meta = main_model
    assert meta["train_seconds"] < 3600, f"training took {meta['train_seconds']:.0f}s"
    model_err, nearest_err = _block_mask_eval(model, corpus.test, seed=606)
    ratio = model_err / nearest_err
    assert ratio <= 0.8, f"model {model_err:.2f}mm vs nearest-fill {nearest_err:.2f}mm"
    print(
        f"\n[completion] masked MPJPE {model_err:.2f}mm vs nearest-fill {nearest_err:.2f}mm "
        f"(ratio {ratio:.3f}), trained in {meta['train_seconds']/60:.1f} min"
    )


def test_criterion_07_denoising(main_model, corpus):
    model, _ = main_model
    spec = CorruptionSpec(mask_ratio=0.0, gauss_sigma=0.05)
    gen = torch.Generator().manual_seed(707)
    geo_in, geo_out, acc_in, acc_out = [], [], [], []
    for seq in corpus.test:
        noisy, _ = corrupt_sequence(seq, spec, gen)
        refined = tasks.refine(noisy, model)
        geo_in.append(float(so3.geodesic_distance(noisy.rots, seq.rots).mean()))
        geo_out.append(float(so3.geodesic_distance(refined.rots.to(seq.rots.dtype), seq.rots).mean()))
        gt = seq.joints()
        acc_in.append(accel_error(noisy.joints(), gt, seq.fps))
        acc_out.append(accel_error(refined.joints(), gt, seq.fps))
    geo_ratio = np.mean(geo_out) / np.mean(geo_in)
    acc_ratio = np.mean(acc_out) / np.mean(acc_in)
    assert geo_ratio <= 0.7, f"geodesic {np.mean(geo_out):.4f} vs input {np.mean(geo_in):.4f}"
    assert acc_ratio <= 0.5, f"accel {np.mean(acc_out):.1f} vs input {np.mean(acc_in):.1f}"
    print(f"\n[denoising] geodesic ratio {geo_ratio:.3f} (<=0.7), accel ratio {acc_ratio:.3f} (<=0.5)")


def test_criterion_08_future_prediction(future_model, corpus):
    model, _ = future_model
    errs = {}
    for seq in corpus.test:
        observed = seq.slice(0, 15)
        gt = seq.joints()
        preds = {
            "model": tasks.predict_future(observed, 30, model, observed=15),
            "velocity": tasks.predict_velocity_propagation(observed, 30),
            "no_velocity": tasks.predict_no_velocity(observed, 30),
        }
        for name, poses in preds.items():
            for h in (5, 30):
                joints = tasks.poses_to_sequence([poses[h - 1]], seq.skeleton, seq.fps).joints()
                errs.setdefault((name, h), []).append(mpjpe(joints, gt[14 + h : 15 + h]))
    mean = {k: float(np.mean(v)) for k, v in errs.items()}
    assert mean[("model", 30)] < mean[("velocity", 30)], f"model {mean[('model', 30)]:.1f} vs velocity {mean[('velocity', 30)]:.1f}"
    assert mean[("velocity", 5)] < mean[("no_velocity", 5)]
    assert mean[("velocity", 30)] > mean[("no_velocity", 30)]
    print(
        f"\n[future] h=5: model {mean[('model', 5)]:.1f} vel {mean[('velocity', 5)]:.1f} novel {mean[('no_velocity', 5)]:.1f}mm; "
        f"h=30: model {mean[('model', 30)]:.1f} vel {mean[('velocity', 30)]:.1f} novel {mean[('no_velocity', 30)]:.1f}mm"
    )


def test_criterion_09_frame_drop_robustness(main_model, corpus):
    model, _ = main_model
    rows = tasks.frame_drop_study(corpus.test[:40], model, [0.5], torch.Generator().manual_seed(909))
    row = rows[0]
    assert row["gain_model"] > row["gain_savgol"], (
        f"model gain {row['gain_model']:.3f} vs savgol gain {row['gain_savgol']:.3f}"
    )
    print(
        f"\n[frame drops] 50%: model {row['mpjpe_model']:.1f}mm nearest {row['mpjpe_nearest']:.1f}mm "
        f"savgol {row['mpjpe_savgol']:.1f}mm; gains {row['gain_model']:.3f} vs {row['gain_savgol']:.3f}"
    )


def test_criterion_10_forward_latency():
    torch.set_num_threads(1)
    model = MotionTransformer(ModelConfig(), rng_seed=1010).eval()
    skel = load_skeleton("body23")
    gen = torch.Generator().manual_seed(1010)
    rots = so3.random_rotations(1, 16, skel.num_rotations, generator=gen).to(torch.float32)
    trans = torch.tensor([0.0, 0.0, 4.0]).expand(1, 16, 3).clone()
    inputs = build_inputs_from_tensors(skel, rots, trans, "param6d", False, CameraIntrinsics()).to(torch.float32)
    visible = torch.ones(1, 16, dtype=torch.bool)

    with torch.no_grad():
        for _ in range(10):
            model(inputs, visible)
        times = []
        for _ in range(100):
            t0 = time.perf_counter()
            model(inputs, visible)
            times.append(time.perf_counter() - t0)
    median_ms = float(np.median(times) * 1000)
    assert median_ms < 50, f"median forward {median_ms:.1f}ms"
    print(f"\n[latency] median forward {median_ms:.1f}ms over 100 runs (1 thread)")


def test_criterion_11_persistence(corpus, tmp_path):
    config = ModelConfig(seq_len=8, d_model=32, num_blocks=1, num_heads=2, regressor_hidden=32)
    train_config = TrainConfig(batch_size=2, max_steps=6, eval_every=3, seed=11)
    sequences = corpus.train[:4]

    model = MotionTransformer(config, rng_seed=train_config.seed)
    trainer = Trainer(model, sequences, train_config)
    trainer.run(steps=3)
    mid = tmp_path / "mid.ckpt"
    trainer.save(mid)

    loaded = load_checkpoint(mid)
    rebuilt = build_model(loaded)
    for name, tensor in model.state_dict().items():
        assert torch.equal(tensor, rebuilt.state_dict()[name]), name

    trainer.run(steps=3)
    resumed = Trainer.restore(mid, sequences)
    resumed.run(steps=3)
    assert resumed.step_count == trainer.step_count
    for name, tensor in trainer.model.state_dict().items():
        assert torch.equal(tensor, resumed.model.state_dict()[name]), name

    seq = corpus.test[0]
    path = tmp_path / "seq.pseq"
    save_sequence(path, seq)
    back = load_sequence(path)
    rot_err = float((back.rots - seq.rots).abs().max())
    assert rot_err < 1e-9
    assert torch.equal(back.trans, seq.trans)
    print(f"\n[persistence] checkpoint bit-exact, resume step-exact, pseq round-trip {rot_err:.1e}")
