"""Scikit-learn style facade over the transformer pipeline.

MotionDenoiser hides the config dataclasses behind flat constructor
parameters so it composes with sklearn tooling (get_params/set_params,
clone, fit_transform). X is a PoseSequence or an iterable of them; there is
no y. fit() trains on clean sequences with on-the-fly corruption,
transform() denoises/completes, predict_future() extrapolates.
"""

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .corruption import CorruptionSpec
from .model import ModelConfig, MotionTransformer
from .skeleton import PoseSequence
from .tasks import complete, predict_future
from .train import TrainConfig, Trainer, build_model, load_checkpoint, save_checkpoint

FIT_STEPS_DEFAULT = 2000  # deliberately lighter than the CLI default


def _as_sequence_list(X):
    if isinstance(X, PoseSequence):
        return [X]
    try:
        sequences = list(X)
    except TypeError:
        raise ValueError(f"X must be a PoseSequence or an iterable of them, got {type(X).__name__}")
    if not sequences:
        raise ValueError("X is empty")
    for item in sequences:
        if not isinstance(item, PoseSequence):
            raise ValueError(f"X contains a {type(item).__name__}; expected PoseSequence items")
    names = {s.skeleton.joint_names for s in sequences}
    if len(names) > 1:
        raise ValueError("all sequences must share one skeleton")
    return sequences


class MotionDenoiser(BaseEstimator, TransformerMixin):
    """Masked-modeling denoiser/completer for articulated pose sequences.

    Parameters mirror ModelConfig, CorruptionSpec and TrainConfig; see those
    for semantics. Fitted attributes: model_, skeleton_, train_config_,
    history_, n_steps_.
    """

    def __init__(
        self,
        seq_len=16,
        d_model=512,
        num_blocks=4,
        num_heads=8,
        ffn_dim=None,
        regressor_hidden=1024,
        regressor_iterations=1,
        dropout=0.1,
        input_layout="param6d",
        mask_ratio=(0.05, 0.5),
        block_mask_prob=0.5,
        gauss_sigma=0.05,
        learning_rate=3e-4,
        batch_size=8,
        max_steps=FIT_STEPS_DEFAULT,
        w_pose=1.0,
        w_trans=1.0,
        seed=0,
        verbose=False,
    ):
        self.seq_len = seq_len
        self.d_model = d_model
        self.num_blocks = num_blocks
        self.num_heads = num_heads
        self.ffn_dim = ffn_dim
        self.regressor_hidden = regressor_hidden
        self.regressor_iterations = regressor_iterations
        self.dropout = dropout
        self.input_layout = input_layout
        self.mask_ratio = mask_ratio
        self.block_mask_prob = block_mask_prob
        self.gauss_sigma = gauss_sigma
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.w_pose = w_pose
        self.w_trans = w_trans
        self.seed = seed
        self.verbose = verbose

    def _configs(self, skeleton):
        model = ModelConfig(
            seq_len=self.seq_len,
            d_model=self.d_model,
            num_blocks=self.num_blocks,
            num_heads=self.num_heads,
            ffn_dim=self.ffn_dim,
            regressor_hidden=self.regressor_hidden,
            regressor_iterations=self.regressor_iterations,
            dropout=self.dropout,
            input_layout=self.input_layout,
            num_joints=skeleton.num_rotations,
        )
        ratio = tuple(self.mask_ratio) if isinstance(self.mask_ratio, (tuple, list)) else self.mask_ratio
        train = TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_steps=self.max_steps,
            seed=self.seed,
            w_pose=self.w_pose,
            w_trans=self.w_trans,
            corruption=CorruptionSpec(
                mask_ratio=ratio,
                block_mask_prob=self.block_mask_prob,
                gauss_sigma=self.gauss_sigma,
            ),
        )
        return model, train

    def fit(self, X, y=None):
        """Train on clean sequences; corruption happens inside the loop."""
        sequences = _as_sequence_list(X)
        skeleton = sequences[0].skeleton
        model_config, train_config = self._configs(skeleton)
        model = MotionTransformer(model_config, rng_seed=self.seed)
        trainer = Trainer(model, sequences, train_config)

        progress = None
        if self.verbose:
            every = train_config.eval_every

            def progress(step, parts):
                if step % every == 0:
                    print(f"step {step} loss {parts['total']:.5f}", flush=True)

        trainer.run(progress=progress)
        self.model_ = model
        self.skeleton_ = skeleton
        self.train_config_ = train_config
        self.history_ = trainer.history
        self.n_steps_ = trainer.step_count
        self._trainer = trainer
        return self

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("this MotionDenoiser is not fitted yet; call fit first")

    def transform(self, X):
        """Denoise and fill each sequence, honoring its visibility flags."""
        self._require_fitted()
        return [complete(seq, self.model_) for seq in _as_sequence_list(X)]

    def predict(self, X):
        """Alias for transform."""
        return self.transform(X)

    def predict_future(self, X, horizon: int, observed: int = None):
        """Extrapolate each sequence; returns a list of Pose lists."""
        self._require_fitted()
        return [predict_future(seq, horizon, self.model_, observed=observed) for seq in _as_sequence_list(X)]

    def score(self, X, y=None) -> float:
        """Negative mean masked-completion MPJPE (mm) under the fitted corruption."""
        import torch

        from .corruption import corrupt_sequence
        from .metrics import mpjpe

        self._require_fitted()
        generator = torch.Generator().manual_seed(self.seed)
        errors = []
        for seq in _as_sequence_list(X):
            corrupted, masked = corrupt_sequence(seq, self.train_config_.corruption, generator)
            restored = complete(corrupted, self.model_)
            frames = masked if bool(masked.any()) else slice(None)
            errors.append(mpjpe(restored.joints()[frames], seq.joints()[frames]))
        return -float(sum(errors) / len(errors))

    def save(self, path):
        """Write the fitted model as a standard checkpoint file."""
        self._require_fitted()
        save_checkpoint(
            path,
            self.model_,
            step=self.n_steps_,
            train_config=self.train_config_,
            skeleton=self.skeleton_,
        )

    @classmethod
    def load(cls, path) -> "MotionDenoiser":
        """Rebuild a fitted estimator from a checkpoint (history is not kept)."""
        ckpt = load_checkpoint(path)
        mc = ckpt.model_config
        tc = ckpt.train_config or TrainConfig()
        est = cls(
            seq_len=mc.seq_len,
            d_model=mc.d_model,
            num_blocks=mc.num_blocks,
            num_heads=mc.num_heads,
            ffn_dim=mc.ffn_dim,
            regressor_hidden=mc.regressor_hidden,
            regressor_iterations=mc.regressor_iterations,
            dropout=mc.dropout,
            input_layout=mc.input_layout,
            mask_ratio=tc.corruption.mask_ratio,
            block_mask_prob=tc.corruption.block_mask_prob,
            gauss_sigma=tc.corruption.gauss_sigma,
            learning_rate=tc.learning_rate,
            batch_size=tc.batch_size,
            max_steps=tc.max_steps,
            w_pose=tc.w_pose,
            w_trans=tc.w_trans,
            seed=tc.seed,
        )
        est.model_ = build_model(ckpt)
        est.skeleton_ = ckpt.skeleton
        est.train_config_ = tc
        est.history_ = []
        est.n_steps_ = ckpt.step
        return est
