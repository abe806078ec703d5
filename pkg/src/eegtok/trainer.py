"""Tokenizer training: sampling, preprocessing, AdamW under a warmup+cosine schedule,
EMA codebook maintenance, checkpointing and reconstruction evaluation."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import preprocess, spectral
from .codebook import ema_update, perplexity
from .errors import FormatError, NumericalError
from .nn.model import Batch, EncoderConfig, TokenizerModel, _parse_value, save_model
from .phase_loss import LossReport
from .recording import CorpusIndex, PatchSample, draw_sample

log = logging.getLogger(__name__)


class TrainingDiverged(NumericalError):
    def __init__(self, message, last_checkpoint=None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "circular"
    batch_size: int = 1024
    base_lr: float = 5e-5
    min_lr: float = 1e-5
    epochs: int = 100
    warmup_epochs: int = 10
    steps_per_epoch: int = 100
    weight_decay: float = 1e-4
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    gradient_clip: float = 3.0
    car: bool = False
    zscore: bool = False
    right_align: bool = False
    codebook_size: int = 8192
    codebook_dim: int = 64
    codebook_decay: float = 0.99
    commitment_beta: float = 0.25
    sample_stride: int = 1
    seed: int = 0
    encoder: EncoderConfig = field(default_factory=EncoderConfig.paper)

    def __post_init__(self):
        if self.mode not in ("baseline", "circular"):
            raise ValueError(f"mode must be baseline or circular, got {self.mode!r}")
        if self.min_lr > self.base_lr:
            raise ValueError("min_lr must not exceed base_lr")
        if not self.warmup_epochs < self.epochs:
            raise ValueError("warmup_epochs must be smaller than epochs")
        if not self.gradient_clip > 0:
            raise ValueError("gradient_clip must be positive")

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch

    @property
    def warmup_steps(self) -> int:
        return self.warmup_epochs * self.steps_per_epoch

    def replace(self, **changes) -> "TrainConfig":
        enc = {k: changes.pop(k) for k in list(changes) if k in _ENCODER_FIELDS}
        if enc:
            changes["encoder"] = dataclasses.replace(changes.get("encoder", self.encoder), **enc)
        return dataclasses.replace(self, **changes)

    @classmethod
    def paper(cls) -> "TrainConfig":
        return cls()

    @classmethod
    def toy(cls, **changes) -> "TrainConfig":
        """Desk-scale profile: 500 steps of batch 16, K=256, encoder depth 2 / decoder depth 1."""
        base = cls(batch_size=16, base_lr=1e-3, min_lr=1e-4, epochs=10, warmup_epochs=1,
                   steps_per_epoch=50, codebook_size=256, sample_stride=200,
                   encoder=EncoderConfig(encoder_depth=2, decoder_depth=1, n_patches=8))
        return base.replace(**changes)


_ENCODER_FIELDS = {f.name for f in dataclasses.fields(EncoderConfig)}


def config_to_text(config: TrainConfig) -> str:
    lines = []
    for f in dataclasses.fields(config):
        v = getattr(config, f.name)
        if f.name == "encoder":
            lines += [f"{k}={vv}" for k, vv in dataclasses.asdict(v).items()]
        elif f.name == "adam_betas":
            lines.append(f"adam_betas={v[0]!r},{v[1]!r}")
        else:
            lines.append(f"{f.name}={v!r}" if isinstance(v, float) else f"{f.name}={v}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parse flat ``key=value`` lines over ``base`` (default: the toy profile).

    Blank lines and ``#`` comments are ignored; unknown keys are an error.
    """
    base = base or TrainConfig.toy()
    known = {f.name for f in dataclasses.fields(TrainConfig)} | _ENCODER_FIELDS
    changes = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or key not in known:
            raise FormatError(f"config line {n}: unknown or malformed entry {raw!r}")
        if key == "adam_betas":
            b1, b2 = value.split(",")
            changes[key] = (float(b1), float(b2))
        elif key in ("base_lr", "min_lr", "weight_decay", "adam_eps", "gradient_clip",
                     "codebook_decay", "commitment_beta", "layer_scale_init"):
            changes[key] = float(value)
        elif value.lower() in ("true", "false"):
            changes[key] = value.lower() == "true"
        else:
            changes[key] = _parse_value(value)
    try:
        return base.replace(**changes)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"invalid config: {exc}") from None


def load_config(path: str | os.PathLike, base: TrainConfig | None = None) -> TrainConfig:
    return config_from_text(Path(path).read_text(encoding="utf-8"), base)


# schedule and optimizer ---------------------------------------------------

def cosine_lr(step: int, config: TrainConfig) -> float:
    """Linear warmup to ``base_lr`` (reached at the last warmup step), then cosine
    decay reaching ``min_lr`` at the final step ``total_steps - 1``."""
    W, T = config.warmup_steps, config.total_steps
    if step < W:
        return config.base_lr * (step + 1) / W
    progress = min(1.0, (step - W) / max(1, T - 1 - W))
    return config.min_lr + 0.5 * (config.base_lr - config.min_lr) * (1 + math.cos(math.pi * progress))


@dataclass
class TrainState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    history: list = field(default_factory=list)
    perplexity_history: list = field(default_factory=list)
    lr_history: list = field(default_factory=list)
    rng_state: dict | None = None


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale ``grads`` in place to global norm ``max_norm``; returns the pre-clip norm."""
    norm = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
    if not math.isfinite(norm):
        raise NumericalError("non-finite gradient norm")
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def adamw_step(params: dict, grads: dict, state: TrainState, lr: float, config: TrainConfig) -> float:
    """Clip, then one decoupled-weight-decay Adam update in place. Returns the pre-clip norm."""
    if not lr > 0:
        raise ValueError("learning rate must be positive")
    norm = clip_gradients(grads, config.gradient_clip)
    b1, b2 = config.adam_betas
    t = state.step + 1
    c1, c2 = 1 - b1**t, 1 - b2**t
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        if config.weight_decay:
            p *= 1 - lr * config.weight_decay
        p -= (lr / c1) * m / (np.sqrt(v / c2) + config.adam_eps)
    state.step = t
    return norm


# data ---------------------------------------------------------------------

def prepare_batch(samples: list[PatchSample], car: bool = False, zscore: bool = False) -> Batch:
    """Stack samples, applying per-sample CAR then per-patch z-scoring when enabled."""
    batch = Batch.from_samples(samples)
    x = batch.patches.astype(np.float64)
    if car:
        x = np.stack([preprocess.car_sample(xi, s.n_channels) for xi, s in zip(x, samples)])
    if zscore:
        x = preprocess.zscore_patch(x)
    batch.patches = x
    return batch


def build_model(config: TrainConfig, n_electrodes: int, seed: int | None = None) -> TokenizerModel:
    return TokenizerModel(config.encoder, n_electrodes, config.codebook_size, config.codebook_dim,
                          "vector" if config.mode == "circular" else "angle", config.right_align,
                          seed=config.seed if seed is None else seed)


LOG_COLUMNS = {
    "circular": ["step", "lr", "L_A", "L_sin", "L_cos", "L_phi_diag", "L_Q", "total", "perplexity"],
    "baseline": ["step", "lr", "L_A", "L_sin_diag", "L_cos_diag", "L_phi", "L_Q", "total", "perplexity"],
}


def _log_row(step, lr, r: LossReport, ppl):
    return [step, repr(lr), repr(r.amplitude_loss), repr(r.sin_loss), repr(r.cos_loss),
            repr(r.direct_phase_loss), repr(r.quantization_loss), repr(r.total), repr(ppl)]


def train(config: TrainConfig, corpus: CorpusIndex, out_dir: str | os.PathLike | None = None,
          steps: int | None = None):
    """Train a tokenizer on ``corpus``; returns ``(model, state)``.

    With ``out_dir`` a per-step ``train_log.csv``, a per-epoch ``epochs.csv``
    and ``checkpoints/epoch_NNN`` directories are written. ``steps``
    truncates the run without changing the schedule.
    """
    ss = np.random.SeedSequence(config.seed)
    init_ss, data_ss, cb_ss = ss.spawn(3)
    model = build_model(config, corpus.n_electrodes, seed=int(init_ss.generate_state(1)[0]))
    model.electrodes = corpus.global_electrodes
    model.car, model.zscore = config.car, config.zscore
    data_rng = np.random.default_rng(data_ss)
    cb_rng = np.random.default_rng(cb_ss)
    state = TrainState()
    P, w = config.encoder.n_patches, config.encoder.patch_len
    total = config.total_steps if steps is None else min(steps, config.total_steps)

    out = Path(out_dir) if out_dir is not None else None
    log_fh = epoch_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(config_to_text(config), encoding="utf-8")
        log_fh = open(out / "train_log.csv", "w", newline="")
        log_csv = csv.writer(log_fh)
        log_csv.writerow(LOG_COLUMNS[config.mode])
        epoch_fh = open(out / "epochs.csv", "w", newline="")
        epoch_csv = csv.writer(epoch_fh)
        epoch_csv.writerow(["epoch"] + LOG_COLUMNS[config.mode][2:])
    last_ckpt = None
    epoch_rows = []
    try:
        for step in range(total):
            lr = cosine_lr(step, config)
            samples = [draw_sample(corpus, data_rng, P, w, config.sample_stride)
                       for _ in range(config.batch_size)]
            batch = prepare_batch(samples, config.car, config.zscore)
            target = spectral.dft_features(batch.patches)
            report, grads, fwd = model.loss_and_grads(batch, target, config.mode, config.commitment_beta)
            if not math.isfinite(report.total):
                raise TrainingDiverged(f"non-finite loss at step {step}", last_ckpt)
            idx = fwd["indices"].ravel()
            ema_update(model.codebook, idx, fwd["p"].reshape(len(idx), -1),
                       config.codebook_decay, rng=cb_rng)
            try:
                adamw_step(model.params, grads, state, lr, config)
            except NumericalError as exc:
                raise TrainingDiverged(f"step {step}: {exc}", last_ckpt) from None
            ppl = perplexity(np.bincount(idx, minlength=model.codebook_size))
            state.history.append(report)
            state.perplexity_history.append(ppl)
            state.lr_history.append(lr)
            epoch_rows.append((report, ppl))
            if log_fh:
                log_csv.writerow(_log_row(step, lr, report, ppl))
            if (step + 1) % config.steps_per_epoch == 0 or step + 1 == total:
                epoch = (step + 1 + config.steps_per_epoch - 1) // config.steps_per_epoch
                means = np.mean([[r.amplitude_loss, r.sin_loss, r.cos_loss, r.direct_phase_loss,
                                  r.quantization_loss, r.total, p] for r, p in epoch_rows], axis=0)
                log.info("epoch %d: total %.4f perplexity %.1f", epoch, means[5], means[6])
                epoch_rows = []
                if out is not None:
                    epoch_csv.writerow([epoch] + [repr(float(m)) for m in means])
                    last_ckpt = save_model(model, out / "checkpoints" / f"epoch_{epoch:03d}")
    finally:
        if log_fh:
            log_fh.close()
            epoch_fh.close()
    state.rng_state = data_rng.bit_generator.state
    return model, state


# evaluation ---------------------------------------------------------------

@dataclass
class ReconstructionReport:
    amplitude_mae_per_bin: np.ndarray
    amplitude_mae: float
    mean_target_amplitude: float
    phase_error: float  # amplitude-weighted mean wrapped error, radians
    time_rmse: float
    perplexity: float
    n_patches: int

    def __eq__(self, other):
        if not isinstance(other, ReconstructionReport):
            return NotImplemented
        return (np.array_equal(self.amplitude_mae_per_bin, other.amplitude_mae_per_bin)
                and all(getattr(self, f) == getattr(other, f) for f in
                        ("amplitude_mae", "mean_target_amplitude", "phase_error", "time_rmse",
                         "perplexity", "n_patches")))

    def to_text(self) -> str:
        return (f"amplitude_mae={self.amplitude_mae!r}\nmean_target_amplitude={self.mean_target_amplitude!r}\n"
                f"phase_error={self.phase_error!r}\ntime_rmse={self.time_rmse!r}\n"
                f"perplexity={self.perplexity!r}\nn_patches={self.n_patches}\n")


def reconstruct(model: TokenizerModel, samples: list[PatchSample], car=False, zscore=False,
                batch_size: int = 16):
    """Run samples through the tokenizer; returns per-patch arrays over ``(n, P, ...)``."""
    keys = ("patches", "amplitude", "phase", "target_amplitude", "target_phase", "indices")
    acc = {k: [] for k in keys}
    for i in range(0, len(samples), batch_size):
        batch = prepare_batch(samples[i:i + batch_size], car, zscore)
        target = spectral.dft_features(batch.patches)
        out = model.forward(batch)
        ang, _, _ = model.predicted_phase(out["phase_out"])
        acc["patches"].append(batch.patches)
        acc["amplitude"].append(np.asarray(out["amplitude"], dtype=np.float64))
        acc["phase"].append(ang)
        acc["target_amplitude"].append(target.amplitude)
        acc["target_phase"].append(target.phase)
        acc["indices"].append(out["indices"])
    return {k: np.concatenate(v) for k, v in acc.items()}


def evaluate_reconstruction(model: TokenizerModel, samples: list[PatchSample], car=False,
                            zscore=False, batch_size: int = 16) -> ReconstructionReport:
    r = reconstruct(model, samples, car, zscore, batch_size)
    F = r["amplitude"].shape[-1]
    amp_err = np.abs(r["amplitude"] - r["target_amplitude"]).reshape(-1, F)
    weights = r["target_amplitude"]
    perr = spectral.wrapped_angle_error(r["phase"], r["target_phase"])
    phase_error = float(np.sum(weights * perr) / np.sum(weights))
    w = r["patches"].shape[-1]
    rec_pred = spectral.inverse_features(r["amplitude"], r["phase"], w)
    rec_true = spectral.inverse_features(r["target_amplitude"], r["target_phase"], w)
    return ReconstructionReport(
        amplitude_mae_per_bin=amp_err.mean(axis=0),
        amplitude_mae=float(amp_err.mean()),
        mean_target_amplitude=float(weights.mean()),
        phase_error=phase_error,
        time_rmse=float(np.sqrt(np.mean((rec_pred - rec_true) ** 2))),
        perplexity=perplexity(np.bincount(r["indices"].ravel(), minlength=model.codebook_size)),
        n_patches=int(np.prod(r["indices"].shape)),
    )


def write_trace_csv(path, model: TokenizerModel, samples, car=False, zscore=False) -> None:
    """Time-domain trace per patch (input, retained-bin target, reconstruction) for plotting."""
    r = reconstruct(model, samples, car, zscore)
    w = r["patches"].shape[-1]
    pred = spectral.inverse_features(r["amplitude"], r["phase"], w).reshape(-1, w)
    true = spectral.inverse_features(r["target_amplitude"], r["target_phase"], w).reshape(-1, w)
    x = r["patches"].reshape(-1, w)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["patch", "t", "input", "target", "reconstruction"])
        for i in range(x.shape[0]):
            for t in range(w):
                out.writerow([i, t, repr(float(x[i, t])), repr(float(true[i, t])), repr(float(pred[i, t]))])
